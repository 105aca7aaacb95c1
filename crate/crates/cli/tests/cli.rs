use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn amodal(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amodal"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<f64>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn lift_of_linear_field_has_q_equal_to_minus_t() {
    let dir = TempDir::new().unwrap();
    let o = amodal(
        &[
            "lift",
            "--field",
            "linear",
            "--center",
            "0,0",
            "--samples",
            "256",
        ],
        dir.path(),
    );
    assert!(o.status.success());
    let rows = csv_rows(&dir.path().join("q.csv"));
    assert_eq!(rows.len(), 256);
    for row in rows {
        assert!((row[2] + row[0]).abs() < 1e-9, "{row:?}");
    }
    assert_eq!(csv_rows(&dir.path().join("boundary.csv")).len(), 256);
}

#[test]
fn lift_of_cross_winds_once_backwards() {
    let dir = TempDir::new().unwrap();
    assert!(amodal(&["lift"], dir.path()).status.success());
    let rows = csv_rows(&dir.path().join("q.csv"));
    let (first, last) = (&rows[0], rows.last().unwrap());
    let h = rows[1][0] - rows[0][0];
    let end = last[2] + (last[2] - rows[rows.len() - 2][2]);
    assert!(((end - first[2]) / std::f64::consts::TAU + 1.0).abs() < 1e-3);
    assert!(h > 0.0);
}

#[test]
fn missing_input_is_a_degeneracy() {
    let dir = TempDir::new().unwrap();
    let o = amodal(&["lift", "--input", "/nonexistent/image.png"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_arguments_are_rejected() {
    let dir = TempDir::new().unwrap();
    assert_eq!(
        amodal(&["lift", "--radius", "-1"], dir.path())
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        amodal(&["lift", "--samples", "300"], dir.path())
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        amodal(&["lift", "--field", "nope"], dir.path())
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn classify_reports_the_worked_cases() {
    let cases: [(&str, &str, i64, &str); 4] = [
        ("cross", "2.4,2.6", -1, "Case1"),
        ("cross", "1.2,1.4", -1, "Case2"),
        ("ellipse-bump", "0.1,-0.3", 0, "Case3"),
        ("cross", "0.1,-0.3", -2, "Case4"),
    ];
    for (field, center, degree, label) in cases {
        let dir = TempDir::new().unwrap();
        let o = amodal(
            &["classify", "--field", field, "--center", center],
            dir.path(),
        );
        assert!(o.status.success(), "{field} {center}");
        let r = json(&dir.path().join("report.json"));
        assert_eq!(r["degree"], degree);
        assert_eq!(r["case"], label);
        let leg = r["legendrian_count"].as_i64().unwrap();
        assert!(leg >= 2 * degree.abs());
        match label {
            "Case1" => assert_eq!(leg, 2),
            "Case3" => assert_eq!(r["gap_count"], 2),
            "Case4" => assert_eq!(r["direct_branch_count"], 2),
            _ => assert!(r["qprime_zero_count"].as_i64().unwrap() > 0),
        }
        assert_eq!(r["gradient_winding"], degree + 1);
    }
}

#[test]
fn complete_linear_reconstructs_the_field() {
    let dir = TempDir::new().unwrap();
    let o = amodal(
        &["complete", "--field", "linear", "--center", "0,0"],
        dir.path(),
    );
    assert!(o.status.success());
    let r = json(&dir.path().join("report.json"));
    assert_eq!(r["status"], "ok");
    assert!(r["max_reconstruction_error"].as_f64().unwrap() <= 1e-3);
    for f in [
        "completed.png",
        "original.png",
        "mask.png",
        "pairs.csv",
        "rules.json",
        "surface.obj",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    for row in csv_rows(&dir.path().join("pairs.csv")) {
        let d = (row[1] - (std::f64::consts::PI - row[0])).rem_euclid(std::f64::consts::TAU);
        assert!(d.min(std::f64::consts::TAU - d) <= 1e-8);
    }
}

#[test]
fn complete_cross_case_one_covers_the_disk() {
    let dir = TempDir::new().unwrap();
    assert!(amodal(&["complete"], dir.path()).status.success());
    let r = json(&dir.path().join("report.json"));
    assert!(r["coverage"].as_f64().unwrap() >= 0.99);
    assert_eq!(r["is_graph"], true);
    assert_eq!(r["exterior_rules"], 0);
    let obj = fs::read_to_string(dir.path().join("surface.obj")).unwrap();
    assert!(obj.lines().any(|l| l.starts_with("f ")));
}

#[test]
fn conjugate_completion_exports_full_rules() {
    let dir = TempDir::new().unwrap();
    let o = amodal(&["complete", "--conjugate"], dir.path());
    assert!(o.status.success());
    assert!(dir.path().join("surface_full.obj").exists());
    assert_eq!(
        json(&dir.path().join("report.json"))["job"]["conjugate"],
        true
    );
}

#[test]
fn rotation_has_no_solution() {
    let dir = TempDir::new().unwrap();
    let o = amodal(&["complete", "--field", "rotation"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    let r = json(&dir.path().join("report.json"));
    assert_eq!(r["status"], "no_solution");
    assert_eq!(r["pair_count"], 0);
}

#[test]
fn verify_passes_on_case_one_and_writes_checks() {
    let dir = TempDir::new().unwrap();
    let o = amodal(&["verify"], dir.path());
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stdout)
    );
    let r = json(&dir.path().join("verify.json"));
    assert_eq!(r["passed"], true);
    let checks = r["checks"].as_array().unwrap();
    let twist = checks
        .iter()
        .find(|c| c["name"] == "twist_commutation")
        .unwrap();
    assert!(twist["value"].as_f64().unwrap() < 1e-12);
    let witness = checks
        .iter()
        .find(|c| c["name"] == "pde_residual_witness")
        .unwrap();
    assert_eq!(witness["status"], "expected_fail");
}

#[test]
fn sequential_reruns_are_byte_identical() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let args = [
        "complete",
        "--sequential",
        "--samples",
        "512",
        "--grid",
        "128",
    ];
    assert!(amodal(&args, a.path()).status.success());
    assert!(amodal(&args, b.path()).status.success());
    for f in [
        "report.json",
        "pairs.csv",
        "rules.json",
        "surface.obj",
        "completed.png",
    ] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

fn write_ramp(path: &Path) {
    let img = image::GrayImage::from_fn(96, 96, |_, row| image::Luma([(row * 2) as u8]));
    img.save(path).unwrap();
}

#[test]
fn raster_ramp_round_trips_through_png_and_pgm() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("ramp.png");
    write_ramp(&input);
    for fmt in ["png", "pgm"] {
        let out = dir.path().join(fmt);
        let o = amodal(
            &[
                "complete",
                "--input",
                input.to_str().unwrap(),
                "--center",
                "48,48",
                "--radius",
                "20",
                "--image-format",
                fmt,
            ],
            &out,
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let r = json(&out.join("report.json"));
        assert_eq!(r["case"], "Case1");
        assert!(r["coverage"].as_f64().unwrap() >= 0.99);
        let completed = image::open(out.join(format!("completed.{fmt}"))).unwrap();
        assert_eq!((completed.width(), completed.height()), (96, 96));
        // the ramp continues through the disk
        let g = completed.to_luma16();
        let (above, center, below) = (g[(48, 40)][0], g[(48, 48)][0], g[(48, 56)][0]);
        assert!(above < center && center < below);
    }
}

#[test]
fn demo_runs_every_worked_example() {
    let dir = TempDir::new().unwrap();
    let o = amodal(&["demo", "--samples", "512", "--grid", "128"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let d = json(&dir.path().join("demo.json"));
    assert_eq!(d.as_array().unwrap().len(), 6);
}
