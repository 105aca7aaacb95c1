use std::path::PathBuf;
use std::process::ExitCode;

use amodal_cli::commands::CliResult;
use amodal_cli::{
    cmd_classify, cmd_complete, cmd_demo, cmd_lift, cmd_verify, FieldSource, ImageFormat, JobSpec,
    EXIT_DEGENERACY,
};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "amodal",
    version,
    about = "Amodal completion of circular occlusions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lift the occlusion boundary; writes q.csv and boundary.csv.
    Lift(JobArgs),
    /// Degree, special points and case label; writes report.json.
    Classify(JobArgs),
    /// Pair, build the spanning surface and fill the disk.
    Complete(JobArgs),
    /// Run the numeric checks; writes verify.json.
    Verify(JobArgs),
    /// Run the worked examples into subdirectories of --out-dir.
    Demo(JobArgs),
}

fn parse_center(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected X,Y, got {s:?}"));
    }
    let x = parts[0].trim().parse::<f64>().map_err(|e| e.to_string())?;
    let y = parts[1].trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok([x, y])
}

#[derive(Args, Clone)]
struct JobArgs {
    /// Builtin field: cross, cross-bounded, ellipse-bump, linear, radial, rotation.
    #[arg(long, conflicts_with = "input", default_value = "cross")]
    field: String,
    /// Grayscale PNG or PGM image; pixel (col, row) sits at (col, row).
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_parser = parse_center, default_value = "2.4,2.6", allow_hyphen_values = true)]
    center: [f64; 2],
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    /// Boundary samples, a power of two >= 128.
    #[arg(long, default_value_t = 1024)]
    samples: usize,
    /// Image grid for analytic fields.
    #[arg(long, default_value_t = 256)]
    grid: usize,
    /// Pair through conjugate points.
    #[arg(long)]
    conjugate: bool,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
    /// Single-threaded, for bit-exact reruns.
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    tol_access: Option<f64>,
    #[arg(long)]
    tol_pair: Option<f64>,
    /// Branch to complete when several are traced.
    #[arg(long)]
    branch: Option<usize>,
    #[arg(long, value_enum, default_value_t = ImageFormat::Png)]
    image_format: ImageFormat,
}

impl JobArgs {
    fn spec(&self) -> JobSpec {
        JobSpec {
            field: match &self.input {
                Some(p) => FieldSource::Raster(p.clone()),
                None => FieldSource::Builtin(self.field.clone()),
            },
            center: self.center,
            radius: self.radius,
            samples: self.samples,
            conjugate: self.conjugate,
            grid: self.grid,
            out_dir: self.out_dir.clone(),
            tol_access: self.tol_access,
            tol_pair: self.tol_pair,
            branch: self.branch,
        }
    }

    fn threads(&self) -> Option<usize> {
        if self.sequential {
            Some(1)
        } else {
            self.threads
        }
    }
}

fn run(cmd: &Command) -> CliResult<()> {
    let args = match cmd {
        Command::Lift(a)
        | Command::Classify(a)
        | Command::Complete(a)
        | Command::Verify(a)
        | Command::Demo(a) => a,
    };
    if let Some(n) = args.threads() {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| amodal_cli::CliError::new(EXIT_DEGENERACY, e))?;
    }
    let spec = args.spec();
    match cmd {
        Command::Lift(_) => {
            let s = cmd_lift(&spec)?;
            println!(
                "lifted {} samples: deg Q = {}, Q in [{:.6}, {:.6}]",
                s.samples, s.degree, s.q_range.0, s.q_range.1
            );
        }
        Command::Classify(_) => {
            let r = cmd_classify(&spec)?;
            println!(
                "{}: deg Q = {}, {} Legendrian, {} orthogonal, gap count {}",
                r.case, r.degree, r.legendrian_count, r.orthogonal_count, r.gap_count
            );
        }
        Command::Complete(_) => {
            let r = cmd_complete(&spec, args.image_format)?;
            println!(
                "{}: {} rules, coverage {:.4}, max conflict {}, graph {}",
                r.case,
                r.rule_count,
                r.coverage.unwrap_or(0.0),
                r.max_conflict.unwrap_or(0),
                r.is_graph.unwrap_or(false)
            );
        }
        Command::Verify(_) => {
            let r = cmd_verify(&spec)?;
            for c in &r.checks {
                println!("{:<28} {:?}", c.name, c.status);
            }
        }
        Command::Demo(_) => {
            for e in cmd_demo(&spec, args.image_format)? {
                println!(
                    "{:<9} {:<13} deg {:>2}  legendrian {:>2}  exit {}  coverage {}",
                    e.name,
                    e.case,
                    e.degree,
                    e.legendrian_count,
                    e.exit_code,
                    e.coverage.map_or("-".into(), |c| format!("{c:.4}"))
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
