//! `rnnrep` command-line front end.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 training divergence,
//! 4 verification failure, 5 integration divergence.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::datasets::{blob_centers, gen_blobs, gen_two_class, load_csv, load_idx, save_csv, Dataset, TwoClassKind};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::{ActivationKind, RnnOdeSpec};
use crate::odeflow::{fmt_f64, hidden_flow, output_trace, IntegratorKind, TimeGrid, Trajectory};
use crate::plot::write_ternary_svg;
use crate::replicator::{integrate_constant_game, SimplexPoint};
use crate::training::{evaluate, train_with_progress, write_history_csv, Optimizer};
use crate::verify::verify_theorem;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_TRAIN_DIVERGED: i32 = 3;
pub const EXIT_VERIFY_FAILED: i32 = 4;
pub const EXIT_INTEGRATION_DIVERGED: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "rnnrep", version, about = "RNN-ODE classifiers and their replicator dynamics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset CSV
    Gen(GenArgs),
    /// Train a model on a dataset
    Train(TrainArgs),
    /// Classify a dataset with a trained model
    Evaluate(EvaluateArgs),
    /// Check the replicator cascade against the readout of the hidden flow
    Verify(VerifyArgs),
    /// Export hidden and output trajectories for one input
    Trace(TraceArgs),
    /// Replicator dynamics of a built-in 3-strategy game
    DemoGame(GameArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GenKind {
    Blobs,
    Rings,
    Arcs,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    pub kind: GenKind,
    /// Points per class (blobs)
    #[arg(long, default_value_t = 1000)]
    pub per_class: usize,
    /// Number of classes (blobs)
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Distance of blob centers from the origin
    #[arg(long, default_value_t = 2.0)]
    pub radius: f64,
    /// Blob standard deviation
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    /// Total points (rings, arcs)
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Gaussian noise (rings default 0.2, arcs 0.1)
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset CSV
    #[arg(long, conflicts_with = "idx_images")]
    pub data: Option<PathBuf>,
    /// IDX image file (needs --idx-labels)
    #[arg(long, requires = "idx_labels")]
    pub idx_images: Option<PathBuf>,
    /// IDX label file (needs --idx-images)
    #[arg(long, requires = "idx_images")]
    pub idx_labels: Option<PathBuf>,
    /// Keep only the first n data
    #[arg(long)]
    pub limit: Option<usize>,
}

impl DataArgs {
    fn given(&self) -> bool {
        self.data.is_some() || self.idx_images.is_some()
    }

    fn load(&self, fallback: Option<&Path>) -> Result<Dataset> {
        let d = match (&self.data, &self.idx_images, &self.idx_labels) {
            (Some(p), _, _) => load_csv(p)?,
            (None, Some(i), Some(l)) => load_idx(i, l)?,
            _ => match fallback {
                Some(p) => load_csv(p)?,
                None => return Err(Error::Config("no dataset given (use --data or --idx-images/--idx-labels)".into())),
            },
        };
        Ok(match self.limit {
            Some(n) => d.take(n),
            None => d,
        })
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// JSON run configuration; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Momentum β; 0 selects plain SGD
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub init_scale: Option<f64>,
    /// Gradient norm clip
    #[arg(long, conflicts_with = "no_clip")]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub no_clip: bool,
    /// Hidden state width d_0
    #[arg(long)]
    pub state_dim: Option<usize>,
    /// Intermediate widths of the hidden map, comma separated (empty for a single layer)
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub activation: Option<String>,
    /// Horizon T
    #[arg(short = 'T', long)]
    pub horizon: Option<f64>,
    /// Number of recurrent steps N_T
    #[arg(long)]
    pub n_steps: Option<usize>,
    /// Model JSON output
    #[arg(short = 'o', long)]
    pub model: Option<PathBuf>,
    /// History CSV output
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Suppress per-epoch progress on stderr
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Integrator step h
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long, value_parser = parse_method)]
    pub method: Option<IntegratorKind>,
    /// Horizon (defaults to the model's T)
    #[arg(short = 'T', long)]
    pub horizon: Option<f64>,
    /// JSON run configuration (grid section); flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl GridArgs {
    fn resolve(&self, spec: &RnnOdeSpec) -> Result<(TimeGrid, IntegratorKind)> {
        let mut g = match &self.config {
            Some(p) => RunConfig::load(p)?.grid,
            None => Default::default(),
        };
        if let Some(s) = self.step {
            g.step = s;
        }
        if let Some(m) = self.method {
            g.method = m;
        }
        if self.horizon.is_some() {
            g.horizon = self.horizon;
        }
        Ok((g.grid_for(spec)?, g.method))
    }
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Input vector, comma separated
    #[arg(long, allow_hyphen_values = true)]
    pub input: Option<CommaVector>,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub source: InputArgs,
    /// Number of dataset inputs to check (from the start)
    #[arg(long, default_value_t = 1)]
    pub samples: usize,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value = "verify_report.json")]
    pub report: PathBuf,
    #[arg(long, default_value = "verify_deviation.csv")]
    pub deviation_csv: PathBuf,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub source: InputArgs,
    /// 0-based dataset index of the input
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value = "trace_hidden.csv")]
    pub hidden_csv: PathBuf,
    #[arg(long, default_value = "trace_output.csv")]
    pub output_csv: PathBuf,
    /// Ternary plot of y(t); needs 3 labels
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Game {
    /// Strategy 1 strictly dominates
    Dominant,
    /// Rock-paper-scissors
    Rps,
}

impl Game {
    pub fn payoff(self) -> Matrix {
        let rows: [[f64; 3]; 3] = match self {
            Game::Dominant => [[1.0, 3.0, 4.0], [0.0, 2.0, 3.0], [-1.0, 1.0, 2.0]],
            Game::Rps => [[0.0, -1.0, 1.0], [1.0, 0.0, -1.0], [-1.0, 1.0, 0.0]],
        };
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).expect("3x3 payoff")
    }

    pub fn default_p0(self) -> Vec<f64> {
        match self {
            Game::Dominant => vec![0.1, 0.3, 0.6],
            Game::Rps => vec![0.5, 0.25, 0.25],
        }
    }
}

#[derive(Debug, Args)]
pub struct GameArgs {
    pub game: Game,
    /// Initial population state, comma separated
    #[arg(long)]
    pub p0: Option<CommaVector>,
    #[arg(short = 'T', long, default_value_t = 50.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub step: f64,
    #[arg(long, value_parser = parse_method, default_value = "rk4")]
    pub method: IntegratorKind,
    #[arg(short, long, default_value = "game.csv")]
    pub output: PathBuf,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

fn parse_method(s: &str) -> std::result::Result<IntegratorKind, String> {
    IntegratorKind::parse(s).ok_or_else(|| format!("unknown method {s:?} (euler, rk4)"))
}

/// A real vector written as `x1,x2,…`.
#[derive(Debug, Clone, PartialEq)]
pub struct CommaVector(pub Vec<f64>);

impl std::str::FromStr for CommaVector {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(|c| {
                c.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| format!("bad number {c:?}"))
            })
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(CommaVector)
    }
}

fn parse_widths(s: &str) -> Result<Vec<usize>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|c| c.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad width {c:?}"))))
        .collect()
}

/// Maps a library error to the documented exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::TrainingDiverged { .. } => EXIT_TRAIN_DIVERGED,
        Error::Divergence { .. } => EXIT_INTEGRATION_DIVERGED,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Trace(a) => cmd_trace(&a),
        Command::DemoGame(a) => cmd_demo_game(&a),
    }
}

pub fn cmd_gen(a: &GenArgs) -> Result<i32> {
    let d = match a.kind {
        GenKind::Blobs => gen_blobs(a.per_class, &blob_centers(a.classes, a.radius), a.sigma, a.seed)?,
        GenKind::Rings => gen_two_class(TwoClassKind::ConcentricRings, a.n, a.noise.unwrap_or(0.2), a.seed)?,
        GenKind::Arcs => gen_two_class(TwoClassKind::InterleavedArcs, a.n, a.noise.unwrap_or(0.1), a.seed)?,
    };
    save_csv(&d, &a.output)?;
    println!("D={} M={} N={} -> {}", d.len(), d.input_dim(), d.classes(), a.output.display());
    Ok(EXIT_OK)
}

pub fn cmd_train(a: &TrainArgs) -> Result<i32> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let t = &mut cfg.train;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.lr {
        t.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if let Some(beta) = a.momentum {
        t.optimizer = if beta == 0.0 { Optimizer::Sgd } else { Optimizer::SgdMomentum { beta } };
    }
    if let Some(v) = a.init_scale {
        t.init_scale = v;
    }
    if a.no_clip {
        t.clip_norm = None;
    } else if a.clip_norm.is_some() {
        t.clip_norm = a.clip_norm;
    }
    let arch = &mut cfg.arch;
    if let Some(v) = a.state_dim {
        arch.state_dim = v;
    }
    if let Some(h) = &a.hidden {
        arch.hidden_widths = parse_widths(h)?;
    }
    if let Some(name) = &a.activation {
        let act = ActivationKind::parse(name)
            .filter(|k| *k != ActivationKind::Softmax)
            .ok_or_else(|| Error::Config(format!("unknown activation {name:?}")))?;
        arch.input_activation = act;
        arch.hidden_activation = act;
    }
    if let Some(v) = a.horizon {
        arch.horizon = v;
    }
    if let Some(v) = a.n_steps {
        arch.n_steps = v;
    }
    cfg.validate()?;

    let data = a.data.load(if a.data.given() { None } else { cfg.io.data.as_deref() })?;
    let architecture = cfg.arch.resolve(&data)?;
    let model_path = a.model.clone().or(cfg.io.model.clone()).unwrap_or_else(|| "model.json".into());
    let history_path = a.history.clone().or(cfg.io.history.clone()).unwrap_or_else(|| "history.csv".into());

    let quiet = a.quiet;
    let result = train_with_progress(&cfg.train, &data, &architecture, |r| {
        if !quiet {
            eprintln!("epoch {} loss {} train_error {}", r.epoch, fmt_f64(r.loss), fmt_f64(r.train_error));
        }
    });
    let out = match result {
        Ok(o) => o,
        Err(Error::TrainingDiverged { epoch, last_good }) => {
            let path = model_path.with_extension("last_good.json");
            last_good.save(&path)?;
            eprintln!("training diverged in epoch {epoch}; last good model written to {}", path.display());
            return Ok(EXIT_TRAIN_DIVERGED);
        }
        Err(e) => return Err(e),
    };
    out.spec.save(&model_path)?;
    write_history_csv(&out.history, &history_path)?;
    let last = out.final_record();
    let misclassified = (last.train_error * data.len() as f64).round() as usize;
    println!(
        "epochs={} loss={} train_error={} misclassified={}/{} model={} history={}",
        last.epoch,
        fmt_f64(last.loss),
        fmt_f64(last.train_error),
        misclassified,
        data.len(),
        model_path.display(),
        history_path.display()
    );
    Ok(EXIT_OK)
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<i32> {
    let spec = RnnOdeSpec::load(&a.model)?;
    let data = a.data.load(None)?;
    let e = evaluate(&spec, &data, spec.n_steps())?;
    println!(
        "D={} misclassified={} accuracy={}",
        data.len(),
        e.misclassified,
        fmt_f64(e.accuracy)
    );
    println!("confusion (rows: true label, columns: predicted)");
    for row in &e.confusion {
        let cells: Vec<String> = row.iter().map(usize::to_string).collect();
        println!("{}", cells.join(","));
    }
    Ok(EXIT_OK)
}

fn resolve_inputs(src: &InputArgs, spec: &RnnOdeSpec, take: std::ops::Range<usize>) -> Result<Vec<Vec<f64>>> {
    let inputs = match &src.input {
        Some(x) => vec![x.0.clone()],
        None => {
            let data = src.data.load(None)?;
            if take.end > data.len() {
                return Err(Error::Config(format!(
                    "dataset has {} entries, need index {}",
                    data.len(),
                    take.end - 1
                )));
            }
            take.map(|j| data.input(j).to_vec()).collect()
        }
    };
    for x in &inputs {
        crate::error::check_dim("input vector (M)", spec.input_dim(), x.len())?;
    }
    Ok(inputs)
}

pub fn cmd_verify(a: &VerifyArgs) -> Result<i32> {
    let spec = RnnOdeSpec::load(&a.model)?;
    let (grid, method) = a.grid.resolve(&spec)?;
    let inputs = resolve_inputs(&a.source, &spec, 0..a.samples.max(1))?;
    let mut report = verify_theorem(&spec, &inputs, &grid, method, a.tol)?;
    report.write(&a.report, &a.deviation_csv)?;
    let mut line = format!(
        "sup_deviation={} mean_deviation={} simplex_drift_max={} tol={}",
        fmt_f64(report.sup_deviation),
        fmt_f64(report.mean_deviation),
        fmt_f64(report.simplex_drift_max),
        fmt_f64(report.tolerance)
    );
    if let Some(aug) = &report.augmented {
        match aug.sup_deviation {
            Some(d) => {
                let _ = write!(line, " augmented_sup_deviation={}", fmt_f64(d));
            }
            None => line.push_str(" augmented=skipped"),
        }
    }
    println!("{line}");
    if report.pass {
        println!("PASS");
        Ok(EXIT_OK)
    } else {
        println!("FAIL");
        Ok(EXIT_VERIFY_FAILED)
    }
}

pub fn cmd_trace(a: &TraceArgs) -> Result<i32> {
    let spec = RnnOdeSpec::load(&a.model)?;
    if a.svg.is_some() && spec.classes() != 3 {
        return Err(Error::Config(format!(
            "--svg draws a ternary simplex and needs N = 3 labels; this model has N = {}",
            spec.classes()
        )));
    }
    let (grid, method) = a.grid.resolve(&spec)?;
    let x = resolve_inputs(&a.source, &spec, a.index..a.index + 1)?.remove(0);
    let hidden = hidden_flow(&spec, &x, &grid, method)?;
    let output = output_trace(&spec, &hidden)?;
    hidden.write_csv(&a.hidden_csv)?;
    output.write_csv(&a.output_csv)?;
    if let Some(svg) = &a.svg {
        write_ternary_svg(&[&output], svg)?;
    }
    let y_end: Vec<String> = output.last().iter().map(|v| fmt_f64(*v)).collect();
    println!(
        "rows={} y(T)={} hidden={} output={}",
        grid.len(),
        y_end.join(","),
        a.hidden_csv.display(),
        a.output_csv.display()
    );
    Ok(EXIT_OK)
}

pub fn cmd_demo_game(a: &GameArgs) -> Result<i32> {
    let p0 = SimplexPoint::new(a.p0.clone().map(|v| v.0).unwrap_or_else(|| a.game.default_p0()))?;
    if p0.len() != 3 {
        return Err(Error::Config(format!("--p0 needs 3 components, got {}", p0.len())));
    }
    let grid = TimeGrid::new(a.horizon, a.step)?;
    let run = integrate_constant_game(&a.game.payoff(), &p0, &grid, a.method)?;
    run.trajectory.write_csv(&a.output)?;
    if let Some(svg) = &a.svg {
        write_ternary_svg(&[&run.trajectory], svg)?;
    }
    let end: Vec<String> = run.trajectory.last().iter().map(|v| fmt_f64(*v)).collect();
    let mut line = format!("p(T)={} simplex_drift_max={}", end.join(","), fmt_f64(run.drift.sum_max));
    match a.game {
        Game::Rps => {
            let _ = write!(line, " product_drift_max={}", fmt_f64(product_drift(&run.trajectory)));
        }
        Game::Dominant => {
            let p = run.trajectory.last();
            let dist = p.iter().skip(1).fold(1.0 - p[0], |m, v| m.max(*v));
            let _ = write!(line, " distance_to_vertex_1={}", fmt_f64(dist));
        }
    }
    println!("{line}");
    Ok(EXIT_OK)
}

/// `max_t |Π pᵢ(t) − Π pᵢ(0)|`.
pub fn product_drift(traj: &Trajectory) -> f64 {
    let prod = |p: &[f64]| p.iter().product::<f64>();
    let start = prod(traj.initial());
    traj.states()
        .iter()
        .map(|p| (prod(p) - start).abs())
        .fold(0.0, f64::max)
}
