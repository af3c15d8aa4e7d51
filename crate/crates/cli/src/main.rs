use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use speccascade::analytic::{self, EwifReport};
use speccascade::config::RunConfig;
use speccascade::run::{self, render_compare, render_summary};
use speccascade::{output_dir, CliError};
use speccascade_core::ewif::{BorderlineConfig, CascadeMode, HcModels, VcModels};

#[derive(Parser)]
#[command(name = "speccascade", version, about = "Speculative-decoding cascades: closed forms and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate or optimize a closed-form walltime improvement factor.
    Ewif {
        #[command(subcommand)]
        formula: Formula,
    },
    /// Critical first-drafter cost curve against plain speculative decoding.
    Bound(BoundArgs),
    /// Run every scheduler of a config under every seed.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Paired speedups relative to one scheduler of a config.
    Compare {
        config: PathBuf,
        #[arg(long)]
        baseline: String,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Optimize {
    /// Search the schedule instead of evaluating a given one.
    #[arg(long)]
    optimize: bool,
    #[arg(long, default_value_t = 10)]
    k_max: u32,
    /// Write the result as CSV too.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Formula {
    Sd {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        c: f64,
        #[arg(long)]
        k: Option<u32>,
        #[command(flatten)]
        opt: Optimize,
    },
    Vc {
        /// Acceptance of the first drafter against the target.
        #[arg(long)]
        a1: f64,
        /// Acceptance of the second drafter against the first.
        #[arg(long)]
        a2: f64,
        #[arg(long)]
        c1: f64,
        #[arg(long)]
        c2: f64,
        #[arg(long)]
        n: Option<u32>,
        #[arg(long)]
        k: Option<u32>,
        #[arg(long, default_value_t = 10)]
        n_max: u32,
        #[command(flatten)]
        opt: Optimize,
    },
    Hc {
        #[arg(long)]
        a1: f64,
        #[arg(long)]
        a2: f64,
        #[arg(long)]
        c1: f64,
        #[arg(long)]
        c2: f64,
        #[arg(long)]
        k1: Option<u32>,
        #[arg(long)]
        k2: Option<u32>,
        #[command(flatten)]
        opt: Optimize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Vc,
    Hc,
}

#[derive(Args)]
struct BoundArgs {
    mode: Mode,
    #[arg(long, default_value_t = 0.1)]
    alpha_min: f64,
    #[arg(long, default_value_t = 0.9)]
    alpha_max: f64,
    #[arg(long, default_value_t = 17)]
    points: usize,
    /// Cost of the bottom drafter.
    #[arg(long, default_value_t = 0.01)]
    c2: f64,
    /// Acceptance of the bottom drafter.
    #[arg(long, default_value_t = 0.3)]
    alpha_d2: f64,
    #[arg(long, default_value_t = 10)]
    k_max: u32,
    #[arg(long, default_value_t = 10)]
    n_max: u32,
    /// Output file; defaults to `bound_<mode>.csv` in the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn emit(report: EwifReport, csv_path: Option<PathBuf>) -> Result<(), CliError> {
    println!("{}", report.line());
    if let Some(p) = csv_path {
        report.write_csv(std::fs::File::create(&p)?)?;
    }
    Ok(())
}

fn ewif(formula: Formula) -> Result<(), CliError> {
    match formula {
        Formula::Sd { alpha, c, k, opt } => {
            emit(analytic::sd(alpha, c, k, opt.optimize.then_some(opt.k_max))?, opt.csv)
        }
        Formula::Vc { a1, a2, c1, c2, n, k, n_max, opt } => {
            let models = VcModels { alpha_t_d1: a1, alpha_d1_d2: a2, c_d1: c1, c_d2: c2 };
            let schedule = n.zip(k);
            emit(analytic::vc(models, schedule, opt.optimize.then_some((n_max, opt.k_max)))?, opt.csv)
        }
        Formula::Hc { a1, a2, c1, c2, k1, k2, opt } => {
            let models = HcModels { alpha_d1: a1, alpha_d2: a2, c_d1: c1, c_d2: c2 };
            emit(analytic::hc(models, k1.zip(k2), opt.optimize.then_some(opt.k_max))?, opt.csv)
        }
    }
}

fn bound(a: BoundArgs) -> Result<(), CliError> {
    let mode = match a.mode {
        Mode::Vc => CascadeMode::Vc,
        Mode::Hc => CascadeMode::Hc,
    };
    let grid = analytic::alpha_grid(a.alpha_min, a.alpha_max, a.points)?;
    let cfg = BorderlineConfig { c_d2: a.c2, alpha_d2: a.alpha_d2, k_max: a.k_max, n_max: a.n_max, ..BorderlineConfig::new(mode) };
    let points = analytic::bound(mode, &grid, cfg)?;
    let path = a.out.unwrap_or_else(|| {
        let name = match mode {
            CascadeMode::Vc => "bound_vc.csv",
            CascadeMode::Hc => "bound_hc.csv",
        };
        output_dir(None, None).join(name)
    });
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    analytic::write_bound_csv(&points, std::fs::File::create(&path)?)?;
    println!("wrote {} ({} points)", path.display(), points.len());
    Ok(())
}

fn simulate(config: PathBuf, out_dir: Option<PathBuf>) -> Result<(), CliError> {
    let run = RunConfig::load(&config)?.resolve()?;
    let dir = output_dir(out_dir, run.output.dir.clone());
    let ens = run::run_sessions(&run)?;
    let paths = run::write_simulation(&ens, &dir)?;
    print!("{}", render_summary(&ens.table().rows));
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn compare(config: PathBuf, baseline: String, out_dir: Option<PathBuf>) -> Result<(), CliError> {
    let run = RunConfig::load(&config)?.resolve()?;
    if !run.schedulers.iter().any(|s| s.name == baseline) {
        return Err(CliError::usage(format!("baseline `{baseline}` is not in the scheduler list")));
    }
    let dir = output_dir(out_dir, run.output.dir.clone());
    let ens = run::run_sessions(&run)?;
    let rows = run::compare(&ens, &baseline)?;
    print!("{}", render_compare(&rows));
    println!("wrote {}", run::write_compare_file(&rows, &dir)?.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Ewif { formula } => ewif(formula),
        Command::Bound(a) => bound(a),
        Command::Simulate { config, out_dir } => simulate(config, out_dir),
        Command::Compare { config, baseline, out_dir } => compare(config, baseline, out_dir),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
