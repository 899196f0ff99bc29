use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use parsirank::analysis::{bias_report, rank_compare, write_bias_report, write_deviation_ranking, write_rank_compare};
use parsirank::cv::{mismatch_ratio, run_cv, uniform_grid, CvConfig, Predictor, SplitMode, DEFAULT_GRID_POINTS};
use parsirank::io::{self, FeatureSource, FileKind};
use parsirank::parallel::bench;
use parsirank::simulation::{generate, SimConfig};
use parsirank::{
    fit_path, fit_path_parallel, resolve_step, ComparisonDataset, LossFamily, ModelState, PenaltyMode,
    RegularizationPath, Scores, SolverConfig,
};

#[derive(Parser)]
#[command(name = "parsirank", version, about = "Mixed-effects preference paths from pairwise comparisons")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic crowdsourced dataset with known ground truth.
    Simulate(SimulateArgs),
    /// Fit a regularization path and write it as a path file.
    Fit(FitArgs),
    /// Cross-validate the stopping time and write the selected state.
    Cv(CvArgs),
    /// Mismatch ratio of a fitted state on held-out comparisons.
    Evaluate(EvaluateArgs),
    /// Export support events, rankings and bias reports from a path file.
    ExportPath(ExportArgs),
    /// Time the parallel solver over several thread counts.
    Bench(BenchArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Comparisons CSV (`user,left,right,y[,weight]`).
    #[arg(long)]
    comparisons: PathBuf,
    /// Features CSV (`item,f0,...`) or `identity`.
    #[arg(long, default_value = "identity")]
    features: String,
}

impl DataArgs {
    fn load(&self) -> Result<ComparisonDataset> {
        let ds = io::load_dataset(&self.comparisons, FeatureSource::parse(&self.features))?;
        let parts = ds.item_components();
        if parts > 1 {
            eprintln!("warning: comparison graph has {parts} connected components; common scores are only comparable within a component");
        }
        Ok(ds)
    }
}

/// Solver flags. Unset flags fall back to the config file, then to the
/// library defaults.
#[derive(Args, Default)]
struct SolverArgs {
    /// TOML file with any of the keys below (`loss`, `penalty`, `kappa`, ...).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = ["linear", "bt", "tm"])]
    loss: Option<String>,
    #[arg(long, value_parser = ["group", "entrywise"])]
    penalty: Option<String>,
    #[arg(long)]
    kappa: Option<f64>,
    /// `auto` or a positive step size.
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    record_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tol_spectral: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    loss: Option<String>,
    penalty: Option<String>,
    kappa: Option<f64>,
    alpha: Option<toml::Value>,
    iters: Option<usize>,
    threads: Option<usize>,
    record_every: Option<usize>,
    seed: Option<u64>,
    tol_spectral: Option<f64>,
}

fn parse_alpha(s: &str) -> Result<Option<f64>> {
    if s == "auto" {
        return Ok(None);
    }
    let a: f64 = s.parse().with_context(|| format!("--alpha expects `auto` or a number, got {s:?}"))?;
    Ok(Some(a))
}

impl SolverArgs {
    fn resolve(&self) -> Result<SolverConfig> {
        let file: ConfigFile = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => ConfigFile::default(),
        };
        let mut cfg = SolverConfig::default();
        if let Some(l) = self.loss.as_ref().or(file.loss.as_ref()) {
            cfg.family = l.parse::<LossFamily>()?;
        }
        if let Some(p) = self.penalty.as_ref().or(file.penalty.as_ref()) {
            cfg.mode = Some(p.parse::<PenaltyMode>()?);
        }
        cfg.kappa = self.kappa.or(file.kappa).unwrap_or(cfg.kappa);
        cfg.alpha = match (&self.alpha, &file.alpha) {
            (Some(s), _) => parse_alpha(s)?,
            (None, Some(toml::Value::String(s))) => parse_alpha(s)?,
            (None, Some(toml::Value::Float(a))) => Some(*a),
            (None, Some(toml::Value::Integer(a))) => Some(*a as f64),
            (None, Some(v)) => bail!("config key `alpha` must be \"auto\" or a number, got {v}"),
            (None, None) => None,
        };
        cfg.max_iters = self.iters.or(file.iters).unwrap_or(cfg.max_iters);
        cfg.threads = self.threads.or(file.threads).unwrap_or(cfg.threads);
        cfg.record_every = self.record_every.or(file.record_every).unwrap_or(cfg.record_every);
        cfg.seed = self.seed.or(file.seed).unwrap_or(cfg.seed);
        cfg.tol_spectral = self.tol_spectral.or(file.tol_spectral).unwrap_or(cfg.tol_spectral);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Print the resolved configuration, step size and spectral norm.
fn announce(ds: &ComparisonDataset, cfg: &SolverConfig) -> Result<f64> {
    let step = resolve_step(ds, cfg)?;
    let mode = cfg.resolved_mode(ds)?;
    eprintln!("config: {}", serde_json::to_string(cfg)?);
    eprintln!(
        "data: m={} users={} items={} dim={}; penalty={mode}",
        ds.n_records(),
        ds.n_users(),
        ds.n_items(),
        ds.dim()
    );
    eprintln!(
        "alpha={} spectral_norm={} stability_ratio={}",
        step.alpha, step.spectral_norm, step.stability_ratio
    );
    Ok(step.alpha)
}

fn run_fit(ds: &ComparisonDataset, cfg: &SolverConfig) -> Result<RegularizationPath> {
    Ok(if cfg.threads > 1 {
        fit_path_parallel(ds, cfg)?
    } else {
        fit_path(ds, cfg)?
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn sidecar(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".index.csv");
    PathBuf::from(s)
}

fn write_sidecar(ds: &ComparisonDataset, out: &Path) -> Result<()> {
    let mut w = create(&sidecar(out))?;
    io::write_index_map(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

#[derive(Args)]
struct SimulateArgs {
    /// Output directory for comparisons.csv, features.csv and truth.json.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    users: usize,
    #[arg(long, default_value_t = 20)]
    items: usize,
    #[arg(long, default_value_t = 10)]
    dim: usize,
    #[arg(long, default_value_t = 50)]
    min_samples: usize,
    #[arg(long, default_value_t = 200)]
    max_samples: usize,
    /// Response model used to draw outcomes.
    #[arg(long, default_value = "bt", value_parser = ["linear", "bt", "tm"])]
    loss: String,
    /// Use identity features instead of Gaussian ones.
    #[arg(long)]
    identity: bool,
    /// Also write train.csv/test.csv, holding out `1 - fraction` of the items.
    #[arg(long)]
    train_fraction: Option<f64>,
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let cfg = SimConfig {
        n_items: a.items,
        dim: a.dim,
        n_users: a.users,
        n_range: (a.min_samples, a.max_samples),
        family: a.loss.parse()?,
        identity_features: a.identity,
        seed: a.seed,
        ..SimConfig::default()
    };
    let (ds, truth) = generate(&cfg)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let comparisons = a.out_dir.join("comparisons.csv");
    let features = (!a.identity).then(|| a.out_dir.join("features.csv"));
    io::save_dataset(&ds, &comparisons, features.as_deref())?;
    let mut w = create(&a.out_dir.join("truth.json"))?;
    serde_json::to_writer(&mut w, &truth)?;
    writeln!(w)?;
    w.flush()?;
    if let Some(frac) = a.train_fraction {
        let (train, test) = parsirank::cv::split_by_item(&ds, frac, a.seed)?;
        let mut w = create(&a.out_dir.join("train.csv"))?;
        io::write_comparisons(&train, &mut w)?;
        w.flush()?;
        let mut w = create(&a.out_dir.join("test.csv"))?;
        io::write_comparisons(&test, &mut w)?;
        w.flush()?;
        println!("train: {} records, test: {} records", train.n_records(), test.n_records());
    }
    println!(
        "wrote {} records from {} users on {} items to {}",
        ds.n_records(),
        ds.n_users(),
        ds.n_items(),
        a.out_dir.display()
    );
    Ok(())
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Path file to write (JSON lines).
    #[arg(long)]
    out: PathBuf,
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let ds = a.data.load()?;
    let cfg = a.solver.resolve()?;
    announce(&ds, &cfg)?;
    let path = run_fit(&ds, &cfg)?;
    io::save_path(&path, &ds, &a.out)?;
    write_sidecar(&ds, &a.out)?;
    println!(
        "{} snapshots, {} support events, t_max={}",
        path.points.len(),
        path.events.len(),
        path.t_max()
    );
    Ok(())
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// `auto`, a comma-separated list of times, or a file with one time per line.
    #[arg(long, default_value = "auto")]
    t_grid: String,
    /// Number of points of the automatic grid.
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
    grid_points: usize,
    #[arg(long, default_value = "by_record", value_parser = ["by_record", "by_item"])]
    split_mode: String,
    /// CV report CSV.
    #[arg(long)]
    out: PathBuf,
    /// State file of the model refit on all data at the selected time.
    #[arg(long)]
    state_out: Option<PathBuf>,
}

fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parse_list = |s: &str| -> Option<Vec<f64>> {
        s.split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>().ok())
            .collect()
    };
    if let Some(list) = parse_list(spec) {
        return Ok(list);
    }
    let text = fs::read_to_string(spec).with_context(|| format!("reading t grid file {spec}"))?;
    parse_list(&text).with_context(|| format!("{spec}: expected one number per line"))
}

fn cmd_cv(a: &CvArgs) -> Result<()> {
    let ds = a.data.load()?;
    let cfg = a.solver.resolve()?;
    let alpha = announce(&ds, &cfg)?;
    let t_grid = if a.t_grid == "auto" {
        uniform_grid(alpha * cfg.max_iters as f64, a.grid_points)
    } else {
        parse_grid(&a.t_grid)?
    };
    let split_mode = match a.split_mode.as_str() {
        "by_item" => SplitMode::ByItem,
        _ => SplitMode::ByRecord,
    };
    let cv = CvConfig {
        folds: a.folds,
        t_grid,
        split_mode,
        seed: cfg.seed,
    };
    let report = run_cv(&ds, &cfg, &cv)?;
    let mut w = create(&a.out)?;
    io::write_cv_report(&report, &mut w)?;
    w.flush()?;
    println!(
        "t_cv={} mean_error={}{}",
        report.t_cv,
        report.mean_errors[report.t_cv_index],
        if report.tie_policy_applied { " (tie: smallest t)" } else { "" }
    );
    if let Some(out) = &a.state_out {
        let (path, state) = parsirank::cv::fit_through(&ds, &cfg, report.t_cv)?;
        io::save_state(&path, &state, &ds, out)?;
        write_sidecar(&ds, out)?;
    }
    Ok(())
}

#[derive(Args)]
struct EvaluateArgs {
    /// Training data the model was fitted on (id maps and provenance check).
    #[command(flatten)]
    data: DataArgs,
    /// Path or state file.
    #[arg(long)]
    model: PathBuf,
    /// Path time to evaluate a path file at (default: its last snapshot).
    #[arg(long)]
    t: Option<f64>,
    /// Held-out comparisons CSV, using the training data's user and item ids.
    #[arg(long)]
    test: PathBuf,
}

fn model_state(pf: &io::PathFile, t: Option<f64>) -> Result<ModelState> {
    Ok(match (pf.header.kind.clone(), t) {
        (FileKind::State, _) | (FileKind::Path, None) => pf.path.last().clone(),
        (FileKind::Path, Some(t)) => pf.path.state_at(t)?,
    })
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let ds = a.data.load()?;
    let pf = io::load_path(&a.model, &ds)?;
    let state = model_state(&pf, a.t)?;
    let test = io::load_records_for(&a.test, &ds)?;
    let p = Predictor::state(&state, ds.features());
    let common = mismatch_ratio(p, &test, false)?;
    let personalized = mismatch_ratio(p, &test, true)?;
    println!("predictor,mismatch");
    println!("common,{common}");
    println!("personalized,{personalized}");
    Ok(())
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Path file produced by `fit`.
    #[arg(long)]
    path: PathBuf,
    /// Directory for the exported CSV files.
    #[arg(long)]
    out_dir: PathBuf,
    /// Path time for the bias report and rank comparison (default: last snapshot).
    #[arg(long)]
    t: Option<f64>,
    /// Users (ids) to include in ranks.csv; default: the first `--top` to deviate.
    #[arg(long, value_delimiter = ',')]
    users: Vec<String>,
    /// Length of the printed top lists.
    #[arg(long, default_value_t = 10)]
    top: usize,
}

fn cmd_export(a: &ExportArgs) -> Result<()> {
    let ds = a.data.load()?;
    let pf = io::load_path(&a.path, &ds)?;
    if pf.header.kind != FileKind::Path {
        bail!("{} is a state file; export-path needs a path file", a.path.display());
    }
    let path = &pf.path;
    let state = model_state(&pf, a.t)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;

    let mut w = create(&a.out_dir.join("snapshots.csv"))?;
    writeln!(w, "k,t,deviations,biases")?;
    for p in &path.points {
        let dev = (0..p.state.n_users())
            .filter(|&u| p.state.xi_of(u).iter().any(|x| *x != 0.0))
            .count();
        let bias = p.state.gamma.iter().filter(|g| **g != 0.0).count();
        writeln!(w, "{},{},{dev},{bias}", p.k, p.state.t)?;
    }
    w.flush()?;

    let mut w = create(&a.out_dir.join("events.csv"))?;
    writeln!(w, "k,t,block,user,direction")?;
    for e in &path.events {
        let (kind, u) = match e.block {
            parsirank::Block::Deviation(u) => ("deviation", u),
            parsirank::Block::Bias(u) => ("bias", u),
        };
        let dir = match e.direction {
            parsirank::Direction::Entered => "entered",
            parsirank::Direction::Left => "left",
        };
        writeln!(w, "{},{},{kind},{},{dir}", e.k, e.t, ds.user_ids()[u])?;
    }
    w.flush()?;

    let mut w = create(&a.out_dir.join("deviation_ranking.csv"))?;
    write_deviation_ranking(path, &ds, &mut w)?;
    w.flush()?;

    let biases = bias_report(&state, &ds, Some(path));
    let mut w = create(&a.out_dir.join("bias_report.csv"))?;
    write_bias_report(&biases, &ds, &mut w)?;
    w.flush()?;

    let ranking = parsirank::analysis::deviation_ranking(path);
    let ids = |us: &mut dyn Iterator<Item = usize>| us.map(|u| ds.user_ids()[u].as_str()).collect::<Vec<_>>().join(",");
    println!("top deviating users: {}", ids(&mut ranking.iter().copied().take(a.top)));
    println!("top position biases: {}", ids(&mut biases.iter().map(|r| r.user).take(a.top)));

    let users: Vec<usize> = if a.users.is_empty() {
        ranking.into_iter().take(a.top).collect()
    } else {
        a.users
            .iter()
            .map(|id| {
                ds.user_ids()
                    .iter()
                    .position(|u| u == id)
                    .with_context(|| format!("unknown user {id:?}"))
            })
            .collect::<Result<_>>()?
    };
    let scores = Scores::from_state(&state, ds.features());
    let mut w = create(&a.out_dir.join("ranks.csv"))?;
    write_rank_compare(&rank_compare(&scores, &users)?, &users, &ds, &mut w)?;
    w.flush()?;
    println!("exported {} snapshots and {} events to {}", path.points.len(), path.events.len(), a.out_dir.display());
    Ok(())
}

#[derive(Args)]
struct BenchArgs {
    /// Comparisons CSV; when absent a simulated dataset is used.
    #[arg(long)]
    comparisons: Option<PathBuf>,
    #[arg(long, default_value = "identity")]
    features: String,
    /// Users in the simulated dataset.
    #[arg(long, default_value_t = 100)]
    sim_users: usize,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    threads_list: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// CSV output (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let ds = match &a.comparisons {
        Some(c) => DataArgs {
            comparisons: c.clone(),
            features: a.features.clone(),
        }
        .load()?,
        None => {
            let seed = a.solver.seed.unwrap_or(0);
            generate(&SimConfig {
                n_users: a.sim_users,
                ..SimConfig::with_seed(seed)
            })?
            .0
        }
    };
    let cfg = a.solver.resolve()?;
    announce(&ds, &cfg)?;
    let rows = bench(&ds, &cfg, &a.threads_list, a.repeats)?;
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    writeln!(out, "threads,mean_secs,speedup")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.threads, r.mean_secs, r.speedup)?;
    }
    out.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Cv(a) => cmd_cv(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::ExportPath(a) => cmd_export(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            if let Some(e) = err.downcast_ref::<parsirank::Error>() {
                eprintln!("error: {}: {err:#}", e.name());
                ExitCode::from(e.exit_code() as u8)
            } else {
                eprintln!("error: {err:#}");
                ExitCode::from(1)
            }
        }
    }
}
