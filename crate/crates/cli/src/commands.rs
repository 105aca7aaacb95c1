use std::f64::consts::TAU;
use std::fmt;
use std::fs;
use std::path::Path;

use amodal_core::lift::{
    check_nondegenerate, find_special_points, gradient_winding, NondegeneracyReport,
};
use amodal_core::solver::{
    anchor_k, classify, pair_plot, solve_pairing_with, trace_all_branches, trace_component,
    CaseLabel, CaseReport, ConnectionBranch, QPrimeSign, SolitaryInterval,
};
use amodal_core::surface::{
    build_surface, endpoint_mismatches, export_mesh, fill_on_grid, graph_check_raster,
    limiting_rules, LimitingRule, SurfaceOptions, SurfaceRule, GRAPH_TOL,
};
use amodal_core::{Error, GridSpec, IntensityField, LiftedBoundary, SpanningSurface};
use serde::Serialize;

use crate::checks::{self, Check, Status};
use crate::job::{FieldSource, JobSpec};
use crate::output::{write_csv, write_gray16, write_json, write_mask, write_text, ImageFormat};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DEGENERACY: i32 = 2;
pub const EXIT_NO_SOLUTION: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

/// Samples per rule in exported meshes.
const MESH_SAMPLES: usize = 16;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn new(code: i32, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = if e.is_degeneracy() {
            EXIT_DEGENERACY
        } else {
            EXIT_NO_SOLUTION
        };
        Self::new(code, e)
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        Self::new(EXIT_DEGENERACY, e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn prepare(spec: &JobSpec) -> CliResult<()> {
    spec.validate()?;
    fs::create_dir_all(&spec.out_dir).map_err(|e| {
        CliError::new(
            EXIT_DEGENERACY,
            anyhow::Error::new(e).context(format!("creating {}", spec.out_dir.display())),
        )
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LiftSummary {
    pub samples: usize,
    pub degree: i64,
    pub q_range: (f64, f64),
}

pub fn cmd_lift(spec: &JobSpec) -> CliResult<LiftSummary> {
    prepare(spec)?;
    let field = spec.load_field()?;
    let b = spec.lift(field.as_ref())?;
    write_lift_files(&spec.out_dir, &b)?;
    Ok(LiftSummary {
        samples: b.n,
        degree: b.degree(),
        q_range: b.q_range(),
    })
}

fn write_lift_files(dir: &Path, b: &LiftedBoundary) -> anyhow::Result<()> {
    let q_rows: Vec<[f64; 4]> = (0..b.n)
        .map(|i| [b.t[i], b.theta[i], b.q[i], b.qprime[i]])
        .collect();
    write_csv(&dir.join("q.csv"), ["t", "theta", "Q", "Qprime"], &q_rows)?;
    let p_rows: Vec<[f64; 3]> = (0..b.n)
        .map(|i| [b.t[i], b.beta[i][0], b.beta[i][1]])
        .collect();
    write_csv(&dir.join("boundary.csv"), ["t", "x", "y"], &p_rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassifyReport {
    pub job: JobSpec,
    pub samples: usize,
    pub degree: i64,
    pub case: &'static str,
    pub legendrian_count: usize,
    pub legendrian: Vec<f64>,
    pub orthogonal_count: usize,
    pub orthogonal: Vec<f64>,
    pub constant_q: Option<f64>,
    pub qprime_sign: QPrimeSign,
    pub qprime_zero_count: usize,
    pub qprime_range: (f64, f64),
    pub q_range: (f64, f64),
    pub solitary_gaps: Vec<SolitaryInterval>,
    pub gap_count: usize,
    pub non_legendrian_solitary: bool,
    pub direct_branch_count: usize,
    pub conjugate_branch_count: usize,
    pub gradient_winding: Option<i64>,
    pub nondegeneracy: Option<NondegeneracyReport>,
}

fn classify_report(
    spec: &JobSpec,
    field: Option<&IntensityField>,
    b: &LiftedBoundary,
    c: &CaseReport,
) -> ClassifyReport {
    ClassifyReport {
        job: spec.clone(),
        samples: b.n,
        degree: c.degree,
        case: c.case_label.as_str(),
        legendrian_count: c.special.legendrian.len(),
        legendrian: c.special.legendrian_params(),
        orthogonal_count: c.special.orthogonal.len(),
        orthogonal: c.special.orthogonal_params(),
        constant_q: c.special.constant_q,
        qprime_sign: c.qprime_sign,
        qprime_zero_count: c.qprime_zero_count,
        qprime_range: c.qprime_range,
        q_range: c.q_range,
        solitary_gaps: c.solitary_gaps.clone(),
        gap_count: c.gap_count,
        non_legendrian_solitary: c.non_legendrian_solitary,
        direct_branch_count: c.direct_branch_count,
        conjugate_branch_count: c.conjugate_branch_count,
        gradient_winding: field.and_then(|f| gradient_winding(f, &b.disk, b.n).ok()),
        nondegeneracy: field.map(|f| check_nondegenerate(f, &b.disk)),
    }
}

pub fn cmd_classify(spec: &JobSpec) -> CliResult<ClassifyReport> {
    prepare(spec)?;
    let field = spec.load_field()?;
    let b = spec.lift(field.as_ref())?;
    let c = classify(&b)?;
    let report = classify_report(spec, field.as_ref(), &b, &c);
    write_json(&spec.out_dir.join("report.json"), &report)?;
    Ok(report)
}

/// How the pairs behind a completion were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMethod {
    /// Global monotone pairing of a Case 1 occlusion.
    Monotone,
    /// One monotone branch between two anchor points.
    Branch,
    /// A component of the pair plot followed through folds.
    Component,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompleteReport {
    pub job: JobSpec,
    pub status: &'static str,
    pub message: Option<String>,
    pub case: &'static str,
    pub degree: i64,
    pub method: Option<PairingMethod>,
    pub branch_index: Option<usize>,
    pub branch_count: usize,
    pub pair_count: usize,
    pub rule_count: usize,
    pub exterior_rules: usize,
    pub min_abs_radius: Option<f64>,
    pub grid: Option<GridSpec>,
    pub coverage: Option<f64>,
    pub max_conflict: Option<u16>,
    pub conflict_pixels: Option<usize>,
    pub skipped_strips: Option<usize>,
    pub is_graph: Option<bool>,
    pub max_theta_range: Option<f64>,
    pub endpoint_mismatches: Option<usize>,
    pub max_reconstruction_error: Option<f64>,
    pub intensity_scale: Option<(f64, f64)>,
    pub limiting_rules: Vec<LimitingRule>,
}

impl CompleteReport {
    fn empty(spec: &JobSpec, b: &LiftedBoundary, c: &CaseReport) -> Self {
        Self {
            job: spec.clone(),
            status: "ok",
            message: None,
            case: c.case_label.as_str(),
            degree: b.degree(),
            method: None,
            branch_index: None,
            branch_count: 0,
            pair_count: 0,
            rule_count: 0,
            exterior_rules: 0,
            min_abs_radius: None,
            grid: None,
            coverage: None,
            max_conflict: None,
            conflict_pixels: None,
            skipped_strips: None,
            is_graph: None,
            max_theta_range: None,
            endpoint_mismatches: None,
            max_reconstruction_error: None,
            intensity_scale: None,
            limiting_rules: Vec::new(),
        }
    }
}

struct ChosenPairs {
    pairs: Vec<(f64, f64)>,
    method: PairingMethod,
    index: Option<usize>,
    count: usize,
    /// Monotone branch usable for limiting-rule diagnostics.
    branch: Option<ConnectionBranch>,
}

enum Selection {
    Found(ChosenPairs),
    None(String),
}

fn select_pairs(spec: &JobSpec, b: &LiftedBoundary, c: &CaseReport) -> CliResult<Selection> {
    let conj = spec.conjugate;
    let every_pair = if conj {
        c.special.all_orthogonal()
    } else {
        c.special.all_legendrian()
    };
    if every_pair {
        return Ok(Selection::None(
            "every pair solves the pairing equation: the boundary lift is itself a rule".into(),
        ));
    }
    if c.case_label == CaseLabel::Case1 {
        if let Ok(p) = solve_pairing_with(b, conj) {
            // the mirror half repeats the same rules
            let branch = p.branches[0].clone();
            return Ok(Selection::Found(ChosenPairs {
                pairs: branch.samples.clone(),
                method: PairingMethod::Monotone,
                index: Some(0),
                count: p.branches.len(),
                branch: Some(branch),
            }));
        }
    }
    let plot = pair_plot(b, conj, b.n.clamp(128, 512))?;
    if plot.is_empty() {
        return Ok(Selection::None(
            "the pair plot is empty: no boundary point is accessible from another".into(),
        ));
    }
    let traced = trace_all_branches(b, conj, &plot);
    // one branch per pair-plot component; the other anchor traces its mirror
    let mut seen = Vec::new();
    let mut ok: Vec<ConnectionBranch> = Vec::new();
    for (_, comp, r) in &traced {
        if let Ok(br) = r {
            if comp.is_some() && seen.contains(comp) {
                continue;
            }
            seen.push(*comp);
            ok.push(br.clone());
        }
    }
    if !ok.is_empty() {
        let idx = spec.branch.unwrap_or(0);
        let branch = ok.get(idx).cloned().ok_or_else(|| {
            Error::InvalidArgument(format!(
                "branch {idx} requested but only {} traced",
                ok.len()
            ))
        })?;
        return Ok(Selection::Found(ChosenPairs {
            pairs: branch.samples.clone(),
            method: PairingMethod::Branch,
            index: Some(idx),
            count: ok.len(),
            branch: Some(branch),
        }));
    }
    let sp = find_special_points(b);
    let anchors = if conj {
        sp.orthogonal_params()
    } else {
        sp.legendrian_params()
    };
    let comps: Vec<Vec<(f64, f64)>> = anchors
        .iter()
        .filter_map(|&a| trace_component(b, a, a, anchor_k(b, a, conj), conj).ok())
        .filter(|c| c.reached_anchor)
        .map(|c| c.samples)
        .collect();
    if comps.is_empty() {
        return Ok(Selection::None(
            "no branch of the pair plot reaches an anchor point".into(),
        ));
    }
    let idx = spec.branch.unwrap_or(0);
    let pairs = comps.get(idx).cloned().ok_or_else(|| {
        Error::InvalidArgument(format!(
            "branch {idx} requested but only {} traced",
            comps.len()
        ))
    })?;
    Ok(Selection::Found(ChosenPairs {
        pairs,
        method: PairingMethod::Component,
        index: Some(idx),
        count: comps.len(),
        branch: None,
    }))
}

/// Sample grid of the output image: the raster's pixels, or a square over
/// the disk for analytic fields.
fn output_grid(spec: &JobSpec, field: &IntensityField, b: &LiftedBoundary) -> GridSpec {
    match field {
        IntensityField::Raster(r) => GridSpec {
            x0: 0.0,
            y0: 0.0,
            spacing: r.spacing(),
            nx: r.width(),
            ny: r.height(),
        },
        IntensityField::Analytic(_) => GridSpec::disk_box(&b.disk, spec.grid),
    }
}

pub fn cmd_complete(spec: &JobSpec, format: ImageFormat) -> CliResult<CompleteReport> {
    prepare(spec)?;
    let field = spec.load_field()?;
    let b = spec.lift(field.as_ref())?;
    let c = classify(&b)?;
    let mut report = CompleteReport::empty(spec, &b, &c);
    let report_path = spec.out_dir.join("report.json");

    let chosen = match select_pairs(spec, &b, &c)? {
        Selection::Found(ch) => ch,
        Selection::None(msg) => {
            report.status = "no_solution";
            report.message = Some(msg.clone());
            write_json(&report_path, &report)?;
            return Err(CliError::new(EXIT_NO_SOLUTION, anyhow::anyhow!(msg)));
        }
    };
    let field = field.ok_or_else(|| {
        CliError::new(
            EXIT_NO_SOLUTION,
            anyhow::anyhow!("no intensity field to fill"),
        )
    })?;
    report.method = Some(chosen.method);
    report.branch_index = chosen.index;
    report.branch_count = chosen.count;
    report.pair_count = chosen.pairs.len();

    let opts = SurfaceOptions {
        tol_access: spec.access_tol(),
        ..SurfaceOptions::default()
    };
    let surface = match build_surface(&b, &chosen.pairs, spec.conjugate, &opts) {
        Ok(mut s) => {
            s.case_label = Some(c.case_label);
            s
        }
        Err(e) => {
            report.status = "no_solution";
            report.message = Some(format!("{e:#}"));
            write_json(&report_path, &report)?;
            return Err(e.into());
        }
    };
    report.rule_count = surface.rules.len();
    report.exterior_rules = surface.exterior_count();
    report.min_abs_radius = surface.min_abs_radius();
    if let Some(br) = &chosen.branch {
        report.limiting_rules = limiting_rules(&b, br);
    }

    let grid = output_grid(spec, &field, &b);
    let fill = fill_on_grid(&field, &surface, &grid);
    let graph = graph_check_raster(&fill, GRAPH_TOL);
    report.grid = Some(grid);
    report.coverage = Some(fill.coverage_fraction());
    report.max_conflict = Some(fill.max_conflict());
    report.conflict_pixels = Some(fill.conflict_count.iter().filter(|&&n| n > 1).count());
    report.skipped_strips = Some(fill.skipped_strips);
    report.is_graph = Some(graph.is_graph);
    report.max_theta_range = Some(graph.max_theta_range);
    report.endpoint_mismatches = Some(endpoint_mismatches(&field, &surface, 1e-3));

    // original samples on the output grid
    let original: Vec<f64> = match &field {
        IntensityField::Raster(r) => r.pixels().to_vec(),
        IntensityField::Analytic(_) => (0..grid.len())
            .map(|i| {
                let [x, y] = grid.point(i % grid.nx, i / grid.nx);
                field.value(x, y)
            })
            .collect(),
    };
    let filled: Vec<bool> = (0..grid.len())
        .map(|i| fill.inside[i] && fill.coverage_mask[i] && fill.intensity[i].is_finite())
        .collect();
    report.max_reconstruction_error = Some(
        (0..grid.len())
            .filter(|&i| filled[i])
            .map(|i| (fill.intensity[i] - original[i]).abs())
            .fold(0.0, f64::max),
    );
    let completed: Vec<f64> = (0..grid.len())
        .map(|i| {
            if filled[i] {
                fill.intensity[i]
            } else {
                original[i]
            }
        })
        .collect();
    let (lo, hi) = match &field {
        IntensityField::Raster(_) => (0.0, 1.0),
        IntensityField::Analytic(_) => original
            .iter()
            .chain(completed.iter())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
                (l.min(v), h.max(v))
            }),
    };
    let span = if hi > lo { hi - lo } else { 1.0 };
    report.intensity_scale = Some((lo, hi));
    let norm = |v: &[f64]| v.iter().map(|x| (x - lo) / span).collect::<Vec<_>>();
    let dir = &spec.out_dir;
    let ext = format.extension();
    write_gray16(
        &dir.join(format!("completed.{ext}")),
        grid.nx,
        grid.ny,
        &norm(&completed),
        format,
    )?;
    write_gray16(
        &dir.join(format!("original.{ext}")),
        grid.nx,
        grid.ny,
        &norm(&original),
        format,
    )?;
    write_mask(
        &dir.join(format!("mask.{ext}")),
        grid.nx,
        grid.ny,
        &filled,
        format,
    )?;

    write_pairs(&dir.join("pairs.csv"), &chosen.pairs)?;
    write_json(&dir.join("rules.json"), &RulesFile::new(&surface))?;
    write_text(
        &dir.join("surface.obj"),
        &export_mesh(&surface, MESH_SAMPLES)?.to_obj(),
    )?;
    if spec.conjugate {
        let full = surface.full_rules();
        write_text(
            &dir.join("surface_full.obj"),
            &export_mesh(&full, 4 * MESH_SAMPLES)?.to_obj(),
        )?;
    }
    write_json(&report_path, &report)?;
    Ok(report)
}

fn write_pairs(path: &Path, pairs: &[(f64, f64)]) -> anyhow::Result<()> {
    let rows: Vec<[f64; 2]> = pairs
        .iter()
        .map(|&(t, u)| [t.rem_euclid(TAU), u.rem_euclid(TAU)])
        .collect();
    write_csv(path, ["t", "u"], &rows)
}

#[derive(Serialize)]
struct RulesFile<'a> {
    conjugate: bool,
    disk: &'a amodal_core::OcclusionDisk,
    rules: &'a [SurfaceRule],
}

impl<'a> RulesFile<'a> {
    fn new(s: &'a SpanningSurface) -> Self {
        Self {
            conjugate: s.conjugate_flag,
            disk: &s.disk,
            rules: &s.rules,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub job: JobSpec,
    pub passed: bool,
    pub checks: Vec<Check>,
}

pub fn cmd_verify(spec: &JobSpec) -> CliResult<VerifyReport> {
    prepare(spec)?;
    let field = spec.load_field()?;
    let b = spec.lift(field.as_ref())?;
    let conj = spec.conjugate;
    let small = match field.as_ref() {
        Some(f) => amodal_core::lift::lift_boundary(f, &b.disk, 256)?,
        None => LiftedBoundary::rotation(256)?,
    };

    let direct_branch = if !conj && b.degree() == -1 {
        solve_pairing_with(&b, false)
            .ok()
            .map(|p| p.branches[0].clone())
    } else {
        None
    };
    let surface = match select_pairs(spec, &b, &classify(&b)?)? {
        Selection::Found(ch) => {
            let opts = SurfaceOptions {
                tol_access: spec.access_tol(),
                ..SurfaceOptions::default()
            };
            build_surface(&b, &ch.pairs, conj, &opts).ok()
        }
        Selection::None(_) => None,
    };

    let checks = vec![
        checks::twist_commutation(),
        checks::exp_accessibility(),
        checks::connecting_roundtrip(),
        checks::oracle_equivalence(&small, conj, spec.pair_tol()),
        checks::rule_horizontality(surface.as_ref()),
        checks::degree_identity(field.as_ref(), &b),
        checks::legendrian_bound(&b),
        checks::legendrian_closure(&b, conj),
        checks::no_gaps(&b, direct_branch.as_ref()),
        checks::pde_flat(),
        checks::pde_witness(),
        checks::pde_convergence(&b, direct_branch.as_ref()),
    ];
    let passed = checks.iter().all(Check::passed);
    let report = VerifyReport {
        job: spec.clone(),
        passed,
        checks,
    };
    write_json(&spec.out_dir.join("verify.json"), &report)?;
    if !passed {
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| c.status == Status::Fail)
            .map(|c| c.name.as_str())
            .collect();
        return Err(CliError::new(
            EXIT_VERIFY,
            anyhow::anyhow!("failed checks: {}", failed.join(", ")),
        ));
    }
    Ok(report)
}

/// The occlusions of the worked examples plus the closed-form linear case.
pub const DEMO_JOBS: &[(&str, &str, [f64; 2])] = &[
    ("case1", "cross", [2.4, 2.6]),
    ("case2", "cross", [1.2, 1.4]),
    ("case3", "ellipse-bump", [0.1, -0.3]),
    ("case4", "cross", [0.1, -0.3]),
    ("linear", "linear", [0.0, 0.0]),
    ("rotation", "rotation", [0.0, 0.0]),
];

#[derive(Debug, Clone, Serialize)]
pub struct DemoEntry {
    pub name: String,
    pub case: String,
    pub degree: i64,
    pub legendrian_count: usize,
    pub exit_code: i32,
    pub coverage: Option<f64>,
    pub is_graph: Option<bool>,
    pub message: Option<String>,
}

pub fn cmd_demo(base: &JobSpec, format: ImageFormat) -> CliResult<Vec<DemoEntry>> {
    fs::create_dir_all(&base.out_dir).map_err(|e| CliError::new(EXIT_DEGENERACY, e))?;
    let mut out = Vec::new();
    for &(name, field, center) in DEMO_JOBS {
        let spec = JobSpec {
            field: FieldSource::Builtin(field.into()),
            center,
            radius: 1.0,
            out_dir: base.out_dir.join(name),
            ..base.clone()
        };
        let cls = cmd_classify(&spec)?;
        let (code, comp, msg) = match cmd_complete(&spec, format) {
            Ok(r) => (EXIT_OK, Some(r), None),
            Err(e) => (e.code, None, Some(e.to_string())),
        };
        out.push(DemoEntry {
            name: name.into(),
            case: cls.case.into(),
            degree: cls.degree,
            legendrian_count: cls.legendrian_count,
            exit_code: code,
            coverage: comp.as_ref().and_then(|r| r.coverage),
            is_graph: comp.as_ref().and_then(|r| r.is_graph),
            message: msg,
        });
    }
    write_json(&base.out_dir.join("demo.json"), &out)?;
    Ok(out)
}
