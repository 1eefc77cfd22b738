//! Experiment configuration and drivers: single runs, `(η, β)` grids,
//! amplitude sweeps, spectrum dumps and plot-ready exports.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{self, apply_feature_scaling, generate_synthetic, Dataset, ParseError};
use crate::diagnostics::{TraceRecord, TRACE_COLUMNS};
use crate::objective::LogisticProblem;
use crate::optim::{self, AlgoConfig, BetaSchedule, DiagnosticsLevel, EtaSchedule, OptimError, RunOutput, RunSummary};
use crate::precond::PrecondKind;
use crate::rng::{derive_seed, SeededRng};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("dataset {path}: {source}")]
    Parse { path: PathBuf, source: ParseError },
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: unexpected trace header {found:?}")]
    Schema { path: PathBuf, found: Vec<String> },
    #[error("thread pool: {0}")]
    Pool(String),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_path_buf(), source }
}

fn default_synthetic_m() -> usize {
    5000
}

fn default_synthetic_n() -> usize {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    Libsvm {
        path: PathBuf,
        #[serde(default)]
        n: Option<usize>,
    },
    Synthetic {
        m: usize,
        n: usize,
        #[serde(default)]
        seed: u64,
    },
    /// The a9a file when one can be found, otherwise a synthetic stand-in.
    A9aOrSynthetic {
        #[serde(default)]
        path: Option<PathBuf>,
        #[serde(default = "default_synthetic_m")]
        m: usize,
        #[serde(default = "default_synthetic_n")]
        n: usize,
        #[serde(default)]
        seed: u64,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::A9aOrSynthetic { path: None, m: default_synthetic_m(), n: default_synthetic_n(), seed: 0 }
    }
}

/// Candidate locations for a9a: `$A9A_PATH`, the given path, then `data/a9a`
/// under the working directory and the workspace root.
pub fn locate_a9a(path: Option<&Path>) -> Option<PathBuf> {
    let mut candidates: Vec<PathBuf> = Vec::new();
    if let Ok(p) = std::env::var("A9A_PATH") {
        candidates.push(PathBuf::from(p));
    }
    if let Some(p) = path {
        candidates.push(p.to_path_buf());
    }
    candidates.push(PathBuf::from("data/a9a"));
    candidates.push(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/a9a"));
    candidates.into_iter().find(|p| p.is_file())
}

pub fn read_libsvm_file(path: &Path, n: Option<usize>) -> Result<Dataset> {
    let file = File::open(path).map_err(io_err(path))?;
    data::parse_libsvm(BufReader::new(file), n).map_err(|source| ExperimentError::Parse { path: path.to_path_buf(), source })
}

impl DatasetSpec {
    /// Unscaled dataset and a label describing where it came from.
    pub fn load(&self) -> Result<(Dataset, String)> {
        match self {
            DatasetSpec::Libsvm { path, n } => Ok((read_libsvm_file(path, *n)?, path.display().to_string())),
            DatasetSpec::Synthetic { m, n, seed } => {
                if *m == 0 || *n == 0 {
                    return Err(ExperimentError::Config("synthetic dataset needs m, n >= 1".into()));
                }
                Ok((generate_synthetic(*m, *n, &mut SeededRng::new(*seed)), format!("synthetic(m={m}, n={n})")))
            }
            DatasetSpec::A9aOrSynthetic { path, m, n, seed } => match locate_a9a(path.as_deref()) {
                Some(p) => Ok((read_libsvm_file(&p, Some(123))?, p.display().to_string())),
                None => {
                    log::info!("a9a not found; using synthetic m={m}, n={n}");
                    DatasetSpec::Synthetic { m: *m, n: *n, seed: *seed }.load()
                }
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub eta: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSpec {
    pub every: usize,
    pub kinds: Vec<PrecondKind>,
}

impl Default for SpectrumSpec {
    fn default() -> Self {
        SpectrumSpec { every: 10, kinds: vec![PrecondKind::DiagonalHutchinson, PrecondKind::DenseAbsolute] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub dataset: DatasetSpec,
    /// Feature-scaling amplitude `A`.
    pub amplitude: f64,
    /// Seed of the scaling vector, shared by every run on the dataset.
    pub scale_seed: u64,
    pub optimizer: AlgoConfig,
    pub repeats: usize,
    pub grid: Option<GridSpec>,
    pub amplitudes: Vec<f64>,
    pub spectrum: Option<SpectrumSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: "run".into(),
            dataset: DatasetSpec::default(),
            amplitude: 1.0,
            scale_seed: 0,
            optimizer: AlgoConfig::default(),
            repeats: 1,
            grid: None,
            amplitudes: Vec::new(),
            spectrum: None,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(ExperimentError::Config(m.to_string()));
        if self.repeats == 0 {
            return fail("repeats must be at least 1");
        }
        if !(self.amplitude >= 0.0) || self.amplitudes.iter().any(|a| !(*a >= 0.0)) {
            return fail("amplitudes must be nonnegative");
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return fail("name must be a nonempty file-name component");
        }
        if let Some(g) = &self.grid {
            if g.eta.iter().chain(&g.beta).any(|v| !v.is_finite()) {
                return fail("grid values must be finite");
            }
        }
        Ok(())
    }
}

/// Scaled problem for amplitude `A`.
pub fn build_problem(raw: &Dataset, amplitude: f64, scale_seed: u64) -> LogisticProblem {
    LogisticProblem::new(apply_feature_scaling(raw, amplitude, &mut SeededRng::new(scale_seed)))
}

/// Seed of repeat `r` in grid cell `(i, j)`.
pub fn cell_seed(base: u64, eta_idx: usize, beta_idx: usize, repeat: usize) -> u64 {
    derive_seed(base, &[eta_idx as u64, beta_idx as u64, repeat as u64])
}

fn run_id(name: &str, repeats: usize, r: usize) -> String {
    if repeats == 1 {
        name.to_string()
    } else {
        format!("{name}-r{r}")
    }
}

fn with_pool<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(job()),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k.max(1))
                .build()
                .map_err(|e| ExperimentError::Pool(e.to_string()))?;
            Ok(pool.install(job))
        }
    }
}

pub fn write_trace_csv(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    if trace.is_empty() {
        w.write_record(TRACE_COLUMNS)?;
    }
    for rec in trace {
        w.serialize(rec)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRecord>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = csv::Reader::from_reader(BufReader::new(file));
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != TRACE_COLUMNS {
        return Err(ExperimentError::Schema { path: path.to_path_buf(), found: header });
    }
    Ok(r.deserialize().collect::<std::result::Result<Vec<TraceRecord>, _>>()?)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(io_err(path))?;
    Ok(())
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRecord {
    pub run_id: String,
    pub final_f: f64,
    pub final_grad_norm2: f64,
    pub diverged: bool,
    pub wall_ms: Option<f64>,
    pub iterations: usize,
    pub rate: Option<crate::diagnostics::RateSummary>,
    pub dataset: String,
    pub config_echo: RunConfig,
}

/// `repeats` independent runs of the configured optimizer.
pub fn run_repeats(prob: &LogisticProblem, cfg: &RunConfig, threads: Option<usize>) -> Result<Vec<RunOutput>> {
    let jobs: Vec<(String, AlgoConfig)> = (0..cfg.repeats)
        .map(|r| {
            let algo = AlgoConfig { seed: cell_seed(cfg.optimizer.seed, 0, 0, r), ..cfg.optimizer.clone() };
            (run_id(&cfg.name, cfg.repeats, r), algo)
        })
        .collect();
    let outs = with_pool(threads, || {
        jobs.par_iter().map(|(id, algo)| optim::run(prob, algo, id)).collect::<std::result::Result<Vec<_>, _>>()
    })??;
    Ok(outs)
}

pub struct RunReport {
    pub outputs: Vec<RunOutput>,
    pub diverged: bool,
}

/// Writes `trace_<run_id>.csv` per repeat and `summary.json`.
pub fn cmd_run(cfg: &RunConfig, out: &Path, threads: Option<usize>) -> Result<RunReport> {
    cfg.validate()?;
    ensure_dir(out)?;
    let (raw, label) = cfg.dataset.load()?;
    let prob = build_problem(&raw, cfg.amplitude, cfg.scale_seed);
    let outputs = run_repeats(&prob, cfg, threads)?;
    let mut summaries = Vec::new();
    for o in &outputs {
        write_trace_csv(&out.join(format!("trace_{}.csv", o.summary.run_id)), &o.trace)?;
        summaries.push(summary_record(&o.summary, &label, cfg));
    }
    if summaries.len() == 1 {
        write_json(&out.join("summary.json"), &summaries[0])?;
    } else {
        write_json(&out.join("summary.json"), &summaries)?;
    }
    let diverged = outputs.iter().any(|o| o.summary.diverged);
    Ok(RunReport { outputs, diverged })
}

fn summary_record(s: &RunSummary, dataset: &str, cfg: &RunConfig) -> SummaryRecord {
    SummaryRecord {
        run_id: s.run_id.clone(),
        final_f: s.final_f,
        final_grad_norm2: s.final_grad_norm2,
        diverged: s.diverged,
        wall_ms: s.wall_ms,
        iterations: s.iterations,
        rate: s.rate,
        dataset: dataset.to_string(),
        config_echo: cfg.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub eta_idx: usize,
    pub beta_idx: usize,
    pub eta: f64,
    pub beta: Option<f64>,
    pub runs: usize,
    pub diverged: usize,
    pub final_f_mean: f64,
    pub final_f_std: f64,
    pub final_grad_norm2_mean: f64,
    pub final_grad_norm2_std: f64,
    pub best: bool,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn grid_axes(base: &AlgoConfig, grid: &GridSpec) -> Result<(Vec<f64>, Vec<Option<f64>>)> {
    let etas = if grid.eta.is_empty() {
        match base.eta {
            EtaSchedule::Constant { value } => vec![value],
            _ => return Err(ExperimentError::Config("grid without eta values needs a constant eta".into())),
        }
    } else {
        grid.eta.clone()
    };
    let betas = if grid.beta.is_empty() || !base.algo.is_scaled() {
        vec![None]
    } else {
        grid.beta.iter().map(|&b| Some(b)).collect()
    };
    Ok((etas, betas))
}

/// Every `(η, β)` cell over `repeats` seeds; runs in parallel, merged by cell index.
pub fn grid_search(
    prob: &LogisticProblem,
    base: &AlgoConfig,
    grid: &GridSpec,
    repeats: usize,
    threads: Option<usize>,
) -> Result<Vec<GridCell>> {
    let (etas, betas) = grid_axes(base, grid)?;
    let mut jobs = Vec::new();
    for (i, &eta) in etas.iter().enumerate() {
        for (j, &beta) in betas.iter().enumerate() {
            for r in 0..repeats {
                let mut cfg = AlgoConfig { eta: EtaSchedule::Constant { value: eta }, seed: cell_seed(base.seed, i, j, r), ..base.clone() };
                if let Some(b) = beta {
                    cfg.beta = BetaSchedule::Constant { value: b };
                }
                jobs.push((i, j, cfg));
            }
        }
    }
    let summaries = with_pool(threads, || {
        jobs.par_iter()
            .map(|(i, j, cfg)| {
                // Trace rows are not kept, so skip per-step diagnostics.
                let cfg = AlgoConfig { diagnostics: DiagnosticsLevel::Off, spectrum_every: None, ..cfg.clone() };
                optim::run(prob, &cfg, &format!("cell-{i}-{j}")).map(|o| o.summary)
            })
            .collect::<std::result::Result<Vec<_>, _>>()
    })??;
    let mut cells = Vec::new();
    for (i, &eta) in etas.iter().enumerate() {
        for (j, &beta) in betas.iter().enumerate() {
            let start = (i * betas.len() + j) * repeats;
            let runs = &summaries[start..start + repeats];
            let fs: Vec<f64> = runs.iter().map(|s| s.final_f).collect();
            let gs: Vec<f64> = runs.iter().map(|s| s.final_grad_norm2).collect();
            let diverged = runs.iter().filter(|s| s.diverged).count();
            let (fm, fsd) = mean_std(&fs);
            let (gm, gsd) = mean_std(&gs);
            cells.push(GridCell {
                eta_idx: i,
                beta_idx: j,
                eta,
                beta,
                runs: repeats,
                diverged,
                final_f_mean: if diverged > 0 { f64::INFINITY } else { fm },
                final_f_std: fsd,
                final_grad_norm2_mean: gm,
                final_grad_norm2_std: gsd,
                best: false,
            });
        }
    }
    let best = cells
        .iter()
        .enumerate()
        .filter(|(_, c)| c.diverged == 0 && c.final_f_mean.is_finite())
        .min_by(|a, b| a.1.final_f_mean.total_cmp(&b.1.final_f_mean))
        .map(|(k, _)| k);
    if let Some(k) = best {
        cells[k].best = true;
    }
    Ok(cells)
}

pub fn best_cell(cells: &[GridCell]) -> Option<&GridCell> {
    cells.iter().find(|c| c.best)
}

/// Best `η` for each `β` of a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaProfileRow {
    pub beta: Option<f64>,
    pub best_eta: f64,
    pub final_f_mean: f64,
    pub final_f_std: f64,
}

pub fn beta_profile(cells: &[GridCell]) -> Vec<BetaProfileRow> {
    let n_beta = cells.iter().map(|c| c.beta_idx + 1).max().unwrap_or(0);
    (0..n_beta)
        .filter_map(|j| {
            cells
                .iter()
                .filter(|c| c.beta_idx == j)
                .min_by(|a, b| a.final_f_mean.total_cmp(&b.final_f_mean))
                .map(|c| BetaProfileRow { beta: c.beta, best_eta: c.eta, final_f_mean: c.final_f_mean, final_f_std: c.final_f_std })
        })
        .collect()
}

const GRID_HEADER: [&str; 11] = [
    "eta_idx",
    "beta_idx",
    "eta",
    "beta",
    "runs",
    "diverged",
    "final_f_mean",
    "final_f_std",
    "final_grad_norm2_mean",
    "final_grad_norm2_std",
    "best",
];

pub struct GridReport {
    pub cells: Vec<GridCell>,
    pub profile: Vec<BetaProfileRow>,
}

/// Writes `grid_summary.csv` and `beta_profile.csv`.
pub fn cmd_grid(cfg: &RunConfig, out: &Path, threads: Option<usize>) -> Result<GridReport> {
    cfg.validate()?;
    let grid = cfg.grid.clone().ok_or_else(|| ExperimentError::Config("grid command needs a \"grid\" section".into()))?;
    ensure_dir(out)?;
    let (raw, _) = cfg.dataset.load()?;
    let prob = build_problem(&raw, cfg.amplitude, cfg.scale_seed);
    let cells = grid_search(&prob, &cfg.optimizer, &grid, cfg.repeats, threads)?;
    let profile = beta_profile(&cells);
    write_rows(&out.join("grid_summary.csv"), &cells, &GRID_HEADER)?;
    write_rows(&out.join("beta_profile.csv"), &profile, &["beta", "best_eta", "final_f_mean", "final_f_std"])?;
    Ok(GridReport { cells, profile })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    #[serde(rename = "A")]
    pub amplitude: f64,
    pub beta_star: Option<f64>,
    pub eta_star: f64,
    pub final_f_mean: f64,
    pub final_f_std: f64,
}

/// Grid search per amplitude; writes `sweep_a.csv`.
pub fn cmd_sweep_a(cfg: &RunConfig, out: &Path, threads: Option<usize>) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let grid = cfg.grid.clone().ok_or_else(|| ExperimentError::Config("sweep-a needs a \"grid\" section".into()))?;
    if cfg.amplitudes.is_empty() {
        return Err(ExperimentError::Config("sweep-a needs a nonempty \"amplitudes\" list".into()));
    }
    ensure_dir(out)?;
    let (raw, _) = cfg.dataset.load()?;
    let mut rows = Vec::new();
    for &a in &cfg.amplitudes {
        let prob = build_problem(&raw, a, cfg.scale_seed);
        let cells = grid_search(&prob, &cfg.optimizer, &grid, cfg.repeats, threads)?;
        match best_cell(&cells) {
            Some(c) => rows.push(SweepRow {
                amplitude: a,
                beta_star: c.beta,
                eta_star: c.eta,
                final_f_mean: c.final_f_mean,
                final_f_std: c.final_f_std,
            }),
            None => log::warn!("every cell diverged at A = {a}"),
        }
    }
    let betas: Vec<f64> = rows.iter().filter_map(|r| r.beta_star).collect();
    if betas.windows(2).any(|w| w[1] < w[0]) {
        log::warn!("optimal momentum is not nondecreasing in A: {betas:?}");
    }
    write_rows(&out.join("sweep_a.csv"), &rows, &["A", "beta_star", "eta_star", "final_f_mean", "final_f_std"])?;
    Ok(rows)
}

/// One spectrum-dumping run per preconditioner kind; writes
/// `spectrum_<kind>.csv` and `trace_<kind>.csv`.
pub fn cmd_spectrum(cfg: &RunConfig, out: &Path, threads: Option<usize>) -> Result<Vec<(PrecondKind, RunOutput)>> {
    cfg.validate()?;
    let spec = cfg.spectrum.clone().unwrap_or_default();
    if spec.every == 0 || spec.kinds.is_empty() {
        return Err(ExperimentError::Config("spectrum needs every >= 1 and at least one kind".into()));
    }
    ensure_dir(out)?;
    let (raw, _) = cfg.dataset.load()?;
    let prob = build_problem(&raw, cfg.amplitude, cfg.scale_seed);
    let jobs: Vec<(PrecondKind, AlgoConfig)> = spec
        .kinds
        .iter()
        .map(|&kind| {
            let algo = AlgoConfig {
                precond: kind,
                diagnostics: DiagnosticsLevel::Full,
                cadence: spec.every,
                spectrum_every: Some(spec.every),
                ..cfg.optimizer.clone()
            };
            (kind, algo)
        })
        .collect();
    let outs = with_pool(threads, || {
        jobs.par_iter()
            .map(|(kind, algo)| optim::run(&prob, algo, kind.name()).map(|o| (*kind, o)))
            .collect::<std::result::Result<Vec<_>, _>>()
    })??;
    for (kind, o) in &outs {
        let rows: Vec<_> = o.spectra.iter().flat_map(|s| s.rows()).collect();
        write_rows(&out.join(format!("spectrum_{}.csv", kind.name())), &rows, &["t", "eigenvalue_index", "value", "which"])?;
        write_trace_csv(&out.join(format!("trace_{}.csv", kind.name())), &o.trace)?;
    }
    Ok(outs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PlotConfig {
    pub traces: Vec<PathBuf>,
    /// Metric names to keep; empty keeps all.
    pub metrics: Vec<String>,
}

impl PlotConfig {
    pub fn from_json_file(path: &Path) -> Result<PlotConfig> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub run_id: String,
    pub t: usize,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub t: usize,
    pub metric: String,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

/// Melts traces into `(run_id, t, metric, value)` rows, skipping empty cells.
pub fn melt(traces: &[Vec<TraceRecord>], metrics: &[String]) -> Vec<LongRow> {
    let keep = |name: &str| metrics.is_empty() || metrics.iter().any(|m| m == name);
    let mut rows = Vec::new();
    for trace in traces {
        for rec in trace {
            for (name, value) in rec.metrics() {
                if let (true, Some(value)) = (keep(name), value) {
                    rows.push(LongRow { run_id: rec.run_id.clone(), t: rec.t, metric: name.to_string(), value });
                }
            }
        }
    }
    rows
}

/// Mean and sample std across runs for each `(t, metric)`, ordered by `t` then metric.
pub fn aggregate(rows: &[LongRow]) -> Vec<AggregateRow> {
    let mut groups: std::collections::BTreeMap<(usize, String), Vec<f64>> = Default::default();
    for r in rows {
        groups.entry((r.t, r.metric.clone())).or_default().push(r.value);
    }
    groups
        .into_iter()
        .map(|((t, metric), v)| {
            let (mean, std) = mean_std(&v);
            AggregateRow { t, metric, count: v.len(), mean, std }
        })
        .collect()
}

/// Writes `plot_long.csv` and `plot_agg.csv`.
pub fn cmd_plotdata(cfg: &PlotConfig, out: &Path) -> Result<(Vec<LongRow>, Vec<AggregateRow>)> {
    if cfg.traces.is_empty() {
        return Err(ExperimentError::Config("plotdata needs at least one trace".into()));
    }
    ensure_dir(out)?;
    let traces = cfg.traces.iter().map(|p| read_trace_csv(p)).collect::<Result<Vec<_>>>()?;
    let long = melt(&traces, &cfg.metrics);
    let agg = aggregate(&long);
    write_rows(&out.join("plot_long.csv"), &long, &["run_id", "t", "metric", "value"])?;
    write_rows(&out.join("plot_agg.csv"), &agg, &["t", "metric", "count", "mean", "std"])?;
    Ok((long, agg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> RunConfig {
        RunConfig {
            dataset: DatasetSpec::Synthetic { m: 300, n: 8, seed: 1 },
            amplitude: 3.0,
            optimizer: AlgoConfig { batch_size: 20, iterations: 15, ..AlgoConfig::default() },
            ..RunConfig::default()
        }
    }

    #[test]
    fn mean_std_cases() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 6.0]);
        assert!((m - 3.0).abs() < 1e-15 && (s - 7f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn one_cell_grid_equals_single_run() {
        let cfg = small_config();
        let (raw, _) = cfg.dataset.load().unwrap();
        let prob = build_problem(&raw, cfg.amplitude, cfg.scale_seed);
        let single = &run_repeats(&prob, &cfg, None).unwrap()[0].summary;
        let grid = GridSpec { eta: vec![0.125], beta: vec![0.99] };
        let cells = grid_search(&prob, &cfg.optimizer, &grid, 1, None).unwrap();
        assert_eq!(cells.len(), 1);
        assert!(cells[0].best);
        assert_eq!(cells[0].final_f_mean, single.final_f);
        assert_eq!(cells[0].final_grad_norm2_mean, single.final_grad_norm2);
    }

    #[test]
    fn grid_marks_divergent_cells_and_continues() {
        let cfg = small_config();
        let (raw, _) = cfg.dataset.load().unwrap();
        let prob = build_problem(&raw, 10.0, 0);
        let base = AlgoConfig { algo: optim::Algo::Lsvrg, ..cfg.optimizer.clone() };
        let grid = GridSpec { eta: vec![0.5, 1e17], beta: vec![] };
        let cells = grid_search(&prob, &base, &grid, 2, Some(1)).unwrap();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[1].diverged, 2);
        assert!(cells[0].best && !cells[1].best);
    }

    #[test]
    fn aggregation_matches_manual_computation() {
        let mk = |run: &str, f: f64| {
            let mut r = TraceRecord::initial(run, f, 1.0, 1.0);
            r.t = 3;
            vec![r]
        };
        let traces = vec![mk("a", 1.0), mk("b", 2.0), mk("c", 4.0)];
        let long = melt(&traces, &["f".to_string()]);
        assert_eq!(long.len(), 3);
        let agg = aggregate(&long);
        assert_eq!(agg.len(), 1);
        assert_eq!(agg[0].count, 3);
        assert!((agg[0].mean - 7.0 / 3.0).abs() < 1e-15);
        let var = ((1.0 - 7.0 / 3.0f64).powi(2) + (2.0 - 7.0 / 3.0f64).powi(2) + (4.0 - 7.0 / 3.0f64).powi(2)) / 2.0;
        assert!((agg[0].std - var.sqrt()).abs() < 1e-15);
        assert_eq!(melt(&traces, &[]).len(), 3 * 3);
    }

    #[test]
    fn trace_csv_round_trip_and_schema_check() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        let report = cmd_run(&cfg, dir.path(), None).unwrap();
        let path = dir.path().join("trace_run.csv");
        let back = read_trace_csv(&path).unwrap();
        assert_eq!(back, report.outputs[0].trace);
        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "t,f\n0,1\n").unwrap();
        assert!(matches!(read_trace_csv(&bad), Err(ExperimentError::Schema { .. })));
    }

    #[test]
    fn config_json_defaults_and_rejections() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"dataset":{"source":"synthetic","m":10,"n":3},"optimizer":{"algo":"lsvrg","batch_size":5}}"#,
        )
        .unwrap();
        assert_eq!(cfg.repeats, 1);
        assert_eq!(cfg.optimizer.theory.p, 0.9);
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus":1}"#).is_err());
        let bad = RunConfig { repeats: 0, ..RunConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn cell_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for i in 0..9 {
            for j in 0..6 {
                for r in 0..3 {
                    assert!(seen.insert(cell_seed(7, i, j, r)));
                }
            }
        }
    }
}
