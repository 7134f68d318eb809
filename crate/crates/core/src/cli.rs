//! Command-line front end. Exit codes: 0 success, 1 invalid input,
//! 2 numerical failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::{spectrum_sweep, write_sweep_csv, NetSource, SweepConfig};
use crate::cells::{param_count, CellKind};
use crate::data::{load_datasets, parse_dataset_args, DatasetKind};
use crate::error::{Error, Result};
use crate::linalg::{fmt_f64, Matrix, SeededRng};
use crate::network::{finite_diff_check, ClassifierNet};
use crate::ode::{phase_portrait, Grid, InputMode, NamedSystem};
use crate::optim::{init_params, train, InitSpec, OptimizerKind, RunConfig};
use crate::spectral::eigenvalues;

#[derive(Parser, Debug)]
#[command(name = "antisym-rnn", version, about = "Antisymmetric RNN experiments")]
pub struct Cli {
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Eigenvalues of a square CSV matrix, written as `re,im,modulus`.
    Eig {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Phase portrait of a two-dimensional system, written as `traj_id,t,h0,h1`.
    Simulate(SimulateArgs),
    /// Trainable parameter count of a classifier.
    Params {
        #[arg(long)]
        cell: CellKind,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        classes: usize,
    },
    /// Backpropagation against central differences on a random net.
    Gradcheck {
        #[arg(long)]
        cell: CellKind,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        t: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        delta: f64,
    },
    /// Train a classifier from a key=value config file.
    Train(TrainArgs),
    /// Eigenvalue statistics of end-to-end Jacobians.
    Spectrum(SpectrumArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// vanilla | positive | negative | imaginary | imaginary_diffusion
    #[arg(long)]
    pub system: String,
    #[arg(long)]
    pub epsilon: f64,
    /// Diffusion; used by imaginary_diffusion only.
    #[arg(long, default_value_t = 0.0)]
    pub gamma: f64,
    #[arg(long)]
    pub steps: usize,
    /// MIN:MAX:K
    #[arg(long, allow_hyphen_values = true)]
    pub grid: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `gaussian` feeds i.i.d. standard normal inputs.
    #[arg(long)]
    pub input: Option<String>,
    /// Magnitude of the structured entries.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub cell: Option<String>,
    #[arg(long)]
    pub n: Option<String>,
    #[arg(long)]
    pub m: Option<String>,
    #[arg(long)]
    pub classes: Option<String>,
    #[arg(long)]
    pub epsilon: Option<String>,
    #[arg(long)]
    pub gamma: Option<String>,
    #[arg(long)]
    pub sigma_w: Option<String>,
    /// adagrad | sgd_momentum
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub momentum: Option<String>,
    #[arg(long)]
    pub delta0: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub iterations: Option<String>,
    #[arg(long)]
    pub eval_every: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// mnist | pmnist | cifar_pixel | cifar_noise | planted
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub dataset_args: Option<String>,
    #[arg(long)]
    pub history_out: Option<String>,
    /// Also write the trained net here.
    #[arg(long)]
    pub checkpoint_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SpectrumArgs {
    /// Comma-separated cell kinds.
    #[arg(long)]
    pub cell_list: String,
    /// Comma-separated diffusion values.
    #[arg(long)]
    pub gamma_list: String,
    /// Comma-separated sequence lengths.
    #[arg(long)]
    pub t_list: String,
    #[arg(long)]
    pub n: usize,
    /// Input width of the random nets.
    #[arg(long, default_value_t = 96)]
    pub m: usize,
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long)]
    pub sigma_w: f64,
    #[arg(long)]
    pub samples: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Use this trained net instead of random ones.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let mut buf = Vec::new();
    let result = execute(cli, &mut buf);
    let _ = std::io::stdout().write_all(&buf);
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

/// Runs a parsed command, writing console output to `out`.
pub fn execute<W: Write + Send>(cli: Cli, out: &mut W) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(Error::invalid("--threads must be at least 1"));
        }
        pool = pool.num_threads(k);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli.command, out))
}

fn dispatch<W: Write + Send>(cmd: Command, out: &mut W) -> Result<()> {
    match cmd {
        Command::Eig { matrix, out: path } => {
            let m = Matrix::read_csv(std::io::BufReader::new(fs::File::open(&matrix)?))?;
            let spectrum = eigenvalues(&m)?;
            let mut s = String::from("re,im,modulus\n");
            for z in spectrum.values() {
                s.push_str(&format!("{},{},{}\n", fmt_f64(z.re), fmt_f64(z.im), fmt_f64(z.norm())));
            }
            emit(&s, path.as_deref(), out)
        }
        Command::Simulate(a) => simulate(a),
        Command::Params { cell, n, m, classes } => {
            writeln!(out, "{}", param_count(cell, n, m, classes))?;
            Ok(())
        }
        Command::Gradcheck {
            cell,
            n,
            m,
            t,
            seed,
            delta,
        } => {
            let err = gradcheck(cell, n, m, t, seed, delta)?;
            writeln!(out, "{}", fmt_f64(err))?;
            if err > GRADCHECK_LIMIT {
                return Err(Error::GradientMismatch {
                    error: err,
                    limit: GRADCHECK_LIMIT,
                });
            }
            Ok(())
        }
        Command::Train(a) => train_command(a, out),
        Command::Spectrum(a) => spectrum(a),
    }
}

fn emit<W: Write>(text: &str, path: Option<&Path>, out: &mut W) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn parse_system(s: &str) -> Result<NamedSystem> {
    Ok(match s {
        "vanilla" => NamedSystem::Vanilla,
        "positive" => NamedSystem::Positive,
        "negative" => NamedSystem::Negative,
        "imaginary" => NamedSystem::Imaginary,
        "imaginary_diffusion" => NamedSystem::ImaginaryDiffusion,
        other => return Err(Error::invalid(format!("unknown system {other:?}"))),
    })
}

fn parse_grid(s: &str) -> Result<Grid> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Error::invalid(format!("--grid expects MIN:MAX:K, got {s:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let grid = Grid {
        min: parts[0].parse().map_err(|_| bad())?,
        max: parts[1].parse().map_err(|_| bad())?,
        points_per_axis: parts[2].parse().map_err(|_| bad())?,
    };
    if !(grid.min.is_finite() && grid.max.is_finite()) || grid.points_per_axis == 0 {
        return Err(bad());
    }
    Ok(grid)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let input = match a.input.as_deref() {
        None => InputMode::None,
        Some("gaussian") => InputMode::Gaussian(a.seed),
        Some(other) => return Err(Error::invalid(format!("unknown input mode {other:?}"))),
    };
    let spec = parse_system(&a.system)?.build(a.scale, a.gamma, a.seed, input)?;
    let trajectories = phase_portrait(&spec, &parse_grid(&a.grid)?, a.epsilon, a.steps)?;
    let mut s = String::from("traj_id,t,h0,h1\n");
    for (id, tr) in trajectories.iter().enumerate() {
        for (t, p) in tr.points.iter().enumerate() {
            s.push_str(&format!("{id},{t},{},{}\n", fmt_f64(p[0]), fmt_f64(p[1])));
        }
    }
    fs::write(&a.out, s)?;
    Ok(())
}

pub const GRADCHECK_LIMIT: f64 = 1e-5;

/// Random 3-class net (`σ_w = 1`, `ε = 0.1`, `γ = 0.1` where allowed),
/// random biases, a standard normal input sequence, label `seed mod 3`.
pub fn gradcheck(kind: CellKind, n: usize, m: usize, t: usize, seed: u64, delta: f64) -> Result<f64> {
    let gamma = if kind.uses_diffusion() { 0.1 } else { 0.0 };
    let mut net = init_params(kind, n, m, 3, 0.1, gamma, &InitSpec { sigma_w: 1.0, seed })?;
    let mut rng = SeededRng::substream(seed, 0);
    for buf in net.buffers_mut() {
        for v in buf.iter_mut() {
            if *v == 0.0 {
                *v = 0.1 * rng.standard_normal();
            }
        }
    }
    let data = (0..t * m).map(|_| rng.standard_normal()).collect();
    let seq = Matrix::from_vec(t, m, data)?;
    finite_diff_check(&net, &seq, (seed % 3) as usize, delta)
}

pub const TRAIN_KEYS: [&str; 18] = [
    "cell",
    "n",
    "m",
    "classes",
    "epsilon",
    "gamma",
    "sigma_w",
    "optimizer",
    "lr",
    "momentum",
    "delta0",
    "batch_size",
    "iterations",
    "eval_every",
    "seed",
    "dataset",
    "dataset_args",
    "history_out",
];

/// Reads `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("config line {}: expected key=value", i + 1)))?;
        let k = k.trim();
        if !TRAIN_KEYS.contains(&k) {
            return Err(Error::invalid(format!("config line {}: unknown key {k:?}", i + 1)));
        }
        map.insert(k.to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn get<T: std::str::FromStr>(cfg: &BTreeMap<String, String>, key: &str, default: Option<T>) -> Result<T> {
    match cfg.get(key) {
        Some(v) => v
            .parse()
            .map_err(|_| Error::invalid(format!("config {key}={v:?} is malformed"))),
        None => default.ok_or_else(|| Error::invalid(format!("config key {key} is required"))),
    }
}

/// Builds the run configuration; unset keys take the documented defaults.
pub fn run_config(cfg: &BTreeMap<String, String>) -> Result<RunConfig> {
    let optimizer = match get(cfg, "optimizer", Some("adagrad".to_string()))?.as_str() {
        "adagrad" => OptimizerKind::Adagrad {
            delta0: get(cfg, "delta0", Some(1e-10))?,
        },
        "sgd_momentum" | "sgd" => OptimizerKind::SgdMomentum {
            mu: get(cfg, "momentum", Some(0.9))?,
        },
        other => return Err(Error::invalid(format!("unknown optimizer {other:?}"))),
    };
    let rc = RunConfig {
        kind: get(cfg, "cell", None)?,
        n: get(cfg, "n", None)?,
        m: get(cfg, "m", None)?,
        classes: get(cfg, "classes", None)?,
        epsilon: get(cfg, "epsilon", Some(0.1))?,
        gamma: get(cfg, "gamma", Some(0.0))?,
        sigma_w: get(cfg, "sigma_w", Some(1.0))?,
        optimizer,
        learning_rate: get(cfg, "lr", Some(0.1))?,
        batch_size: get(cfg, "batch_size", Some(128))?,
        iterations: get(cfg, "iterations", Some(1000))?,
        eval_every: get(cfg, "eval_every", Some(100))?,
        seed: get(cfg, "seed", Some(0))?,
    };
    rc.validate()?;
    Ok(rc)
}

fn train_command<W: Write>(a: TrainArgs, out: &mut W) -> Result<()> {
    let mut cfg = parse_config(&fs::read_to_string(&a.config)?)?;
    let overrides = [
        ("cell", &a.cell),
        ("n", &a.n),
        ("m", &a.m),
        ("classes", &a.classes),
        ("epsilon", &a.epsilon),
        ("gamma", &a.gamma),
        ("sigma_w", &a.sigma_w),
        ("optimizer", &a.optimizer),
        ("lr", &a.lr),
        ("momentum", &a.momentum),
        ("delta0", &a.delta0),
        ("batch_size", &a.batch_size),
        ("iterations", &a.iterations),
        ("eval_every", &a.eval_every),
        ("seed", &a.seed),
        ("dataset", &a.dataset),
        ("dataset_args", &a.dataset_args),
        ("history_out", &a.history_out),
    ];
    for (k, v) in overrides {
        if let Some(v) = v {
            cfg.insert(k.to_string(), v.clone());
        }
    }
    let rc = run_config(&cfg)?;
    let kind: DatasetKind = get(&cfg, "dataset", None)?;
    let dargs = parse_dataset_args(cfg.get("dataset_args").map(String::as_str).unwrap_or(""))?;
    let (train_set, test_set) = load_datasets(kind, &dargs)?;
    let (net, history) = train(&rc, &train_set, &test_set)?;
    let csv = history.to_csv_string();
    match cfg.get("history_out") {
        Some(p) => {
            fs::write(p, csv)?;
            writeln!(out, "final_test_accuracy={}", fmt_f64(history.final_accuracy))?;
        }
        None => out.write_all(csv.as_bytes())?,
    }
    if let Some(p) = a.checkpoint_out {
        fs::write(p, net.to_checkpoint_string())?;
    }
    Ok(())
}

fn parse_list<T: std::str::FromStr>(s: &str, flag: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse()
                .map_err(|_| Error::invalid(format!("{flag}: cannot parse {p:?}")))
        })
        .collect()
}

fn spectrum(a: SpectrumArgs) -> Result<()> {
    let source = match &a.checkpoint {
        Some(p) => NetSource::Checkpoint(Box::new(ClassifierNet::from_checkpoint_str(&fs::read_to_string(p)?)?)),
        None => NetSource::Init {
            kinds: parse_list(&a.cell_list, "--cell-list")?,
            sigma_w: a.sigma_w,
        },
    };
    let (n, m, epsilon) = match &source {
        NetSource::Checkpoint(net) => (net.cell.n, net.cell.m, net.cell.epsilon),
        NetSource::Init { .. } => (a.n, a.m, a.epsilon),
    };
    let cfg = SweepConfig {
        source,
        n,
        m,
        epsilon,
        gamma_list: parse_list(&a.gamma_list, "--gamma-list")?,
        t_list: parse_list(&a.t_list, "--t-list")?,
        samples: a.samples,
        seed: a.seed,
    };
    let rows = spectrum_sweep(&cfg)?;
    let mut buf = Vec::new();
    write_sweep_csv(&rows, &mut buf)?;
    fs::write(&a.out, buf)?;
    Ok(())
}
