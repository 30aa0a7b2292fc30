use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use noiseprop::data::make_teacher_task;
use noiseprop::noise::NoiseSpec;
use noiseprop_harness::characterize::{
    characterize, simulate, write_characterization, DEFAULT_BINS, DEFAULT_MAX_LAG,
};
use noiseprop_harness::metrics::emit_metrics;
use noiseprop_harness::runner::{load_data, train};
use noiseprop_harness::sweep::{point_path, run_sweep, set_field, SweepGrid};
use noiseprop_harness::{ExperimentConfig, HarnessError, Result};
use toml::Value;

#[derive(Parser)]
#[command(name = "noiseprop", version, about = "Noise-driven local learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one network and write its metrics.
    Train(Box<TrainArgs>),
    /// Run every point of a grid file.
    Sweep(SweepArgs),
    /// Histogram, autocorrelation, dwell times and HMM fit of a noise trace.
    Characterize(CharacterizeArgs),
    /// Write the teacher regression task and the teacher weights.
    TeacherGen(TeacherArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// TOML config; flags below override its fields.
    #[arg(long, env = "NOISEPROP_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, env = "NOISEPROP_NAME")]
    name: Option<String>,
    /// mnist, cifar10, cifar100 or teacher.
    #[arg(long, env = "NOISEPROP_DATASET")]
    dataset: Option<String>,
    #[arg(long, env = "NOISEPROP_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Comma-separated hidden widths.
    #[arg(long, env = "NOISEPROP_HIDDEN", value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// bp, np, anp or danp.
    #[arg(long, env = "NOISEPROP_RULE")]
    rule: Option<String>,
    /// squared_error or cross_entropy.
    #[arg(long, env = "NOISEPROP_LOSS")]
    loss: Option<String>,
    /// adam or plain.
    #[arg(long, env = "NOISEPROP_OPTIMIZER")]
    optimizer: Option<String>,
    #[arg(long, env = "NOISEPROP_ETA")]
    eta: Option<f64>,
    #[arg(long, env = "NOISEPROP_DECORRELATION_EPS")]
    decorrelation_eps: Option<f64>,
    #[arg(long, env = "NOISEPROP_EPOCHS")]
    epochs: Option<usize>,
    #[arg(long, env = "NOISEPROP_BATCH_SIZE")]
    batch_size: Option<usize>,
    #[arg(long, env = "NOISEPROP_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "NOISEPROP_TRAIN_CAP")]
    train_cap: Option<usize>,
    #[arg(long, env = "NOISEPROP_TEST_CAP")]
    test_cap: Option<usize>,
    /// Gaussian noise with this standard deviation.
    #[arg(long, env = "NOISEPROP_SIGMA")]
    sigma: Option<f64>,
    #[arg(long, env = "NOISEPROP_NOISE_GAIN")]
    noise_gain: Option<f64>,
    /// Serial device for live noise.
    #[arg(long, env = "NOISEPROP_DEVICE")]
    device: Option<PathBuf>,
    #[arg(long, env = "NOISEPROP_BAUD")]
    baud: Option<u32>,
    /// lines or adc_counts.
    #[arg(long, env = "NOISEPROP_FRAME")]
    frame: Option<String>,
    #[arg(long, env = "NOISEPROP_BUFFER_SIZE")]
    buffer_size: Option<usize>,
    /// Seconds between live buffer refreshes.
    #[arg(long, env = "NOISEPROP_MIN_WAIT")]
    min_wait: Option<f64>,
    /// Any other field as `dotted.key=value` (value parsed as TOML, else a string).
    #[arg(long = "set", value_name = "KEY=VALUE", env = "NOISEPROP_SET", value_delimiter = ';')]
    set: Vec<String>,
    /// Metrics CSV; the JSON sidecar goes next to it.
    #[arg(long, env = "NOISEPROP_OUT", default_value = "metrics.csv")]
    out: PathBuf,
    /// Save the trained weights here.
    #[arg(long, env = "NOISEPROP_CHECKPOINT")]
    checkpoint: Option<PathBuf>,
    /// Print the resolved config and exit.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(env = "NOISEPROP_GRID")]
    grid: PathBuf,
    #[arg(long, env = "NOISEPROP_THREADS")]
    threads: Option<usize>,
    #[arg(long, env = "NOISEPROP_OUT", default_value = "sweep")]
    out: PathBuf,
}

#[derive(Args)]
struct CharacterizeArgs {
    /// Recorded trace (text or raw binary with a `.hdr` sidecar).
    #[arg(long, env = "NOISEPROP_TRACE", conflicts_with = "spec")]
    trace: Option<PathBuf>,
    /// Sampling rate of the trace in Hz, overriding its header.
    #[arg(long, env = "NOISEPROP_RATE")]
    rate: Option<f64>,
    /// TOML file holding one noise spec table to simulate.
    #[arg(long, env = "NOISEPROP_SPEC", required_unless_present = "trace")]
    spec: Option<PathBuf>,
    #[arg(long, env = "NOISEPROP_STEPS", default_value_t = 1_000_000)]
    steps: usize,
    #[arg(long, env = "NOISEPROP_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "NOISEPROP_MAX_LAG", default_value_t = DEFAULT_MAX_LAG)]
    max_lag: usize,
    #[arg(long, env = "NOISEPROP_BINS", default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long, env = "NOISEPROP_OUT", default_value = "characterize")]
    out: PathBuf,
}

#[derive(Args)]
struct TeacherArgs {
    #[arg(long, env = "NOISEPROP_SEED", default_value_t = 0)]
    seed: u64,
    /// CSV of inputs and targets; weights go to the same stem with `.npck`.
    #[arg(long, env = "NOISEPROP_OUT", default_value = "teacher.csv")]
    out: PathBuf,
}

fn parse_value(raw: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn resolve_config(a: &TrainArgs) -> Result<ExperimentConfig> {
    let mut v = match &a.config {
        Some(p) => toml::from_str::<Value>(&std::fs::read_to_string(p)?)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?,
        None => Value::Table(Default::default()),
    };
    let mut set = |k: &str, val: Value| set_field(&mut v, k, val).map_err(HarnessError::Config);
    let s = |x: &String| Value::String(x.clone());
    let p = |x: &PathBuf| Value::String(x.display().to_string());
    let i = |x: usize| Value::Integer(x as i64);
    if let Some(x) = &a.name {
        set("name", s(x))?;
    }
    if let Some(x) = &a.dataset {
        set("dataset", s(x))?;
    }
    if let Some(x) = &a.data_dir {
        set("data_dir", p(x))?;
    }
    if let Some(x) = &a.hidden {
        set("hidden", Value::Array(x.iter().map(|&w| i(w)).collect()))?;
    }
    if let Some(x) = &a.rule {
        set("rule", s(x))?;
    }
    if let Some(x) = &a.loss {
        set("loss", s(x))?;
    }
    if let Some(x) = &a.optimizer {
        set("optimizer", s(x))?;
    }
    if let Some(x) = a.eta {
        set("eta", Value::Float(x))?;
    }
    if let Some(x) = a.decorrelation_eps {
        set("decorrelation_eps", Value::Float(x))?;
    }
    if let Some(x) = a.epochs {
        set("epochs", i(x))?;
    }
    if let Some(x) = a.batch_size {
        set("batch_size", i(x))?;
    }
    if let Some(x) = a.seed {
        set("seed", Value::Integer(x as i64))?;
    }
    if let Some(x) = a.train_cap {
        set("train_cap", i(x))?;
    }
    if let Some(x) = a.test_cap {
        set("test_cap", i(x))?;
    }
    if let Some(x) = a.sigma {
        set("noise", Value::Table(Default::default()))?;
        set("noise.kind", Value::String("gaussian".into()))?;
        set("noise.sigma", Value::Float(x))?;
    }
    if let Some(x) = a.noise_gain {
        set("noise_gain", Value::Float(x))?;
    }
    let live_flags = a.buffer_size.is_some() || a.min_wait.is_some() || a.device.is_some();
    let already_live = v.get("noise").and_then(|n| n.get("kind")).and_then(Value::as_str) == Some("live");
    let mut set = |k: &str, val: Value| set_field(&mut v, k, val).map_err(HarnessError::Config);
    if live_flags && !already_live {
        set("noise", Value::Table(Default::default()))?;
        set("noise.kind", Value::String("live".into()))?;
    }
    if let Some(x) = a.buffer_size {
        set("noise.buffer_size", i(x))?;
    }
    if let Some(x) = a.min_wait {
        set("noise.min_wait", Value::Float(x))?;
    }
    if let Some(x) = &a.device {
        set("live", Value::Table(Default::default()))?;
        set("live.transport", Value::String("device".into()))?;
        set("live.path", p(x))?;
    }
    if let Some(x) = a.baud {
        set("live.baud", Value::Integer(i64::from(x)))?;
    }
    if let Some(x) = &a.frame {
        set("live.frame", s(x))?;
    }
    for kv in &a.set {
        let (k, raw) = kv
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        set(k.trim(), parse_value(raw.trim()))?;
    }
    let cfg: ExperimentConfig = v.try_into().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = resolve_config(a)?;
    if a.dry_run {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let data = load_data(&cfg)?;
    eprintln!(
        "{}: {} train / {} test samples, rule {:?}",
        cfg.name,
        data.train.len(),
        data.test.len(),
        cfg.rule
    );
    let (metrics, net) = train(&cfg, &data, None, &mut |r| {
        let acc = r.test_acc.map(|a| format!(" test_acc {a:.4}")).unwrap_or_default();
        eprintln!("epoch {:>4}  test_loss {:.6}{acc}", r.epoch, r.test_loss);
    })?;
    emit_metrics(&metrics, &a.out)?;
    if let Some(p) = &a.checkpoint {
        noiseprop::checkpoint::save(&net, p)?;
    }
    eprintln!("wrote {} ({:.1} s)", a.out.display(), metrics.wall_time_s);
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let grid = SweepGrid::load(&a.grid)?;
    let threads = a
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    eprintln!("{} points on {threads} threads", grid.len());
    let s = run_sweep(&grid, threads, Some(&a.out))?;
    for p in &s.points {
        if let Err(e) = &p.result {
            eprintln!("point {}: {e}", p.index);
        }
    }
    let failed = s.points.iter().filter(|p| p.result.is_err()).count();
    match s.best {
        Some(b) => println!(
            "best point {b} ({}) of {}, {failed} failed",
            point_path(&a.out, b).display(),
            s.points.len()
        ),
        None => println!("no point finished; {failed} failed"),
    }
    Ok(())
}

fn cmd_characterize(a: &CharacterizeArgs) -> Result<()> {
    let trace = match (&a.trace, &a.spec) {
        (Some(t), _) => noiseprop::trace_io::read_trace(t, a.rate)?,
        (None, Some(s)) => {
            let spec: NoiseSpec = toml::from_str(&std::fs::read_to_string(s)?)
                .map_err(|e| HarnessError::Config(format!("{}: {e}", s.display())))?;
            simulate(&spec, a.steps, a.seed, a.rate.unwrap_or(1.0))?
        }
        (None, None) => return Err(HarnessError::Config("give --trace or --spec".into())),
    };
    let c = characterize(&trace, a.max_lag, a.bins)?;
    write_characterization(&c, &a.out)?;
    for n in &c.notes {
        eprintln!("note: {n}");
    }
    println!("{}", serde_json::to_string_pretty(&c)?);
    Ok(())
}

fn cmd_teacher(a: &TeacherArgs) -> Result<()> {
    let task = make_teacher_task(a.seed)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(&a.out)?;
    let n_in = task.inputs.cols();
    let mut header: Vec<String> = (0..n_in).map(|j| format!("x{j}")).collect();
    header.extend((0..task.targets.cols()).map(|j| format!("y{j}")));
    w.write_record(&header)?;
    for r in 0..task.inputs.rows() {
        let row: Vec<String> = task
            .inputs
            .row(r)
            .iter()
            .chain(task.targets.row(r))
            .map(f64::to_string)
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    let weights = weights_path(&a.out);
    noiseprop::checkpoint::save(&task.teacher, &weights)?;
    eprintln!("wrote {} and {}", a.out.display(), weights.display());
    Ok(())
}

fn weights_path(csv: &Path) -> PathBuf {
    csv.with_extension("npck")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Characterize(a) => cmd_characterize(a),
        Command::TeacherGen(a) => cmd_teacher(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
