use clap::{Parser, Subcommand};
use nckit::report::{report_schema, run_suite, Suite, SuiteConfig};
use std::process::ExitCode;

/// Verification suites for free noncommutative function theory at desk scale.
///
/// `NCKIT_THREADS` caps the worker threads.
#[derive(Debug, Parser)]
#[command(name = "nckit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a suite: ncpoly, ncdiff, ncrkhs, cdclass, solver, gleason or all.
    Verify {
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overrides every residual tolerance.
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        d: Option<usize>,
        /// Fock truncation degree.
        #[arg(long = "N")]
        n_max: Option<usize>,
        /// Comma-separated matrix levels.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<usize>>,
        /// Jet order.
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        deg: Option<usize>,
        /// Random instances per check (sample points per level for cdclass).
        #[arg(long)]
        trials: Option<usize>,
        /// Also write the report to this file.
        #[arg(long)]
        json: Option<std::path::PathBuf>,
    },
    /// Print the report JSON schema.
    Schema,
}

fn init_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("NCKIT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.parse().map_err(|_| format!("NCKIT_THREADS = `{raw}` is not a thread count"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match cli.command {
        Command::Schema => {
            println!("{}", serde_json::to_string_pretty(&report_schema()).expect("schema serializes"));
            ExitCode::SUCCESS
        }
        Command::Verify {
            suite,
            seed,
            tol,
            d,
            n_max,
            levels,
            order,
            deg,
            trials,
            json,
        } => {
            let suite: Suite = match suite.parse() {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let cfg = SuiteConfig {
                suite,
                seed,
                tol,
                d,
                n_max,
                levels,
                order,
                deg,
                trials,
            };
            if let Err(e) = cfg.validate() {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
            let report = match run_suite(&cfg) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::FAILURE;
                }
            };
            for c in &report.checks {
                let status = if c.pass { "PASS" } else { "FAIL" };
                eprintln!("{status} {:<36} residual {:.3e} dims {:?}", c.name, c.residual, c.dims);
            }
            let text = report.to_json().expect("report serializes");
            if let Some(path) = json {
                if let Err(e) = std::fs::write(&path, &text) {
                    eprintln!("error: writing {}: {e}", path.display());
                    return ExitCode::FAILURE;
                }
            }
            println!("{text}");
            if report.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
