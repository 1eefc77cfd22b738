use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use precond_sgd::experiment::{self, DatasetSpec, PlotConfig, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "psgd", version, about = "Preconditioned SGD / L-SVRG experiments on logistic regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the configured optimizer, writing trace_<run_id>.csv and summary.json.
    Run(CommonArgs),
    /// Grid search over (eta, beta), writing grid_summary.csv and beta_profile.csv.
    Grid(CommonArgs),
    /// Grid search for each feature-scaling amplitude, writing sweep_a.csv.
    #[command(name = "sweep-a")]
    SweepA(CommonArgs),
    /// Eigenvalue dumps of the Hessian and scaled Hessian per preconditioner kind.
    Spectrum(CommonArgs),
    /// Melt trace CSVs into long format plus a per-(t, metric) aggregate.
    Plotdata(PlotArgs),
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, env = "PSGD_OUT_DIR")]
    out: PathBuf,
    /// Overrides optimizer.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for grid cells and repeats.
    #[arg(long, env = "PSGD_THREADS")]
    threads: Option<usize>,
    /// Replace the configured dataset by a synthetic one with this many rows.
    #[arg(long, requires = "synthetic_n")]
    synthetic_m: Option<usize>,
    /// Feature count of the synthetic replacement dataset.
    #[arg(long, requires = "synthetic_m")]
    synthetic_n: Option<usize>,
    /// Seed of the synthetic replacement dataset.
    #[arg(long, default_value_t = 0)]
    synthetic_seed: u64,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// JSON file with "traces" (paths) and optional "metrics" filter.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, env = "PSGD_OUT_DIR")]
    out: PathBuf,
}

impl CommonArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::from_json_file(&self.config)
            .with_context(|| format!("loading config {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            cfg.optimizer.seed = seed;
        }
        if let (Some(m), Some(n)) = (self.synthetic_m, self.synthetic_n) {
            cfg.dataset = DatasetSpec::Synthetic { m, n, seed: self.synthetic_seed };
        }
        if cfg.amplitude == 0.0 || cfg.amplitudes.contains(&0.0) {
            log::warn!("A = 0 makes the objective constant");
        }
        Ok(cfg)
    }
}

enum Outcome {
    Done,
    Diverged,
}

fn dispatch(command: Command) -> Result<Outcome> {
    match command {
        Command::Run(a) => {
            let report = experiment::cmd_run(&a.load()?, &a.out, a.threads)?;
            for o in &report.outputs {
                log::info!("{}: final f = {:.6e}, |grad|^2 = {:.3e}", o.summary.run_id, o.summary.final_f, o.summary.final_grad_norm2);
            }
            Ok(if report.diverged { Outcome::Diverged } else { Outcome::Done })
        }
        Command::Grid(a) => {
            let report = experiment::cmd_grid(&a.load()?, &a.out, a.threads)?;
            match experiment::best_cell(&report.cells) {
                Some(c) => log::info!("best cell: eta = {}, beta = {:?}, f = {:.6e}", c.eta, c.beta, c.final_f_mean),
                None => log::warn!("every grid cell diverged"),
            }
            Ok(Outcome::Done)
        }
        Command::SweepA(a) => {
            let rows = experiment::cmd_sweep_a(&a.load()?, &a.out, a.threads)?;
            log::info!("{} amplitudes swept", rows.len());
            Ok(Outcome::Done)
        }
        Command::Spectrum(a) => {
            let outs = experiment::cmd_spectrum(&a.load()?, &a.out, a.threads)?;
            let diverged = outs.iter().any(|(_, o)| o.summary.diverged);
            Ok(if diverged { Outcome::Diverged } else { Outcome::Done })
        }
        Command::Plotdata(a) => {
            let cfg = plot_config(&a.config)?;
            let (long, agg) = experiment::cmd_plotdata(&cfg, &a.out)?;
            log::info!("{} long rows, {} aggregate rows", long.len(), agg.len());
            Ok(Outcome::Done)
        }
    }
}

// Relative trace paths are resolved against the config file's directory.
fn plot_config(path: &Path) -> Result<PlotConfig> {
    let mut cfg = PlotConfig::from_json_file(path).with_context(|| format!("loading config {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    for t in &mut cfg.traces {
        if t.is_relative() && !t.exists() {
            *t = base.join(&*t);
        }
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // Usage errors exit 1; code 2 is reserved for divergence.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Diverged) => {
            eprintln!("psgd: run diverged");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("psgd: {e:#}");
            ExitCode::from(1)
        }
    }
}
