//! Training loop for every rule.

use std::path::Path;
use std::time::Instant;

use noiseprop::data::{
    augment_rows, channel_stats, load_cifar, load_idx, make_teacher_task, Dataset, Split,
};
use noiseprop::learning::{
    anp_update_batch, batch_losses, bp_update_batch, correct_count, np_update_batch, LossKind, Optimizer,
};
use noiseprop::live::{AdcModel, LiveNoise, MockTransport, SerialTransport, StreamTransport};
use noiseprop::network::{
    decorrelation_update_batch, first_layer_input, forward_batch, forward_batch_from, init_weights,
    off_diagonal_covariance, Activation, NetworkState,
};
use noiseprop::noise::{NoiseSource, NoiseSpec};
use noiseprop::rng::{named_rng, stream_rng, streams};
use noiseprop::smtj::TelegraphTrace;
use noiseprop::Matrix;
use rand::seq::SliceRandom;

use crate::config::{degenerate_for_anp, DatasetKind, ExperimentConfig, LiveSource, ReplaySource, Rule};
use crate::error::{HarnessError, Result};
use crate::metrics::{EpochRecord, RunMetrics};

/// Rows per forward pass during evaluation.
const EVAL_CHUNK: usize = 1000;
/// Rows used for the decorrelation statistic.
const DECORRELATION_PROBE: usize = 1000;
/// Idle polls tolerated while filling the live buffer.
const LIVE_WARMUP_POLLS: usize = 10_000;

#[derive(Debug, Clone)]
pub struct RunData {
    pub train: Dataset,
    pub test: Dataset,
}

fn cifar_files(dir: &Path, names: &[&str]) -> Vec<std::path::PathBuf> {
    names.iter().map(|n| dir.join(n)).collect()
}

/// Loads the train and test splits named by the config, applying caps,
/// standardization and label shuffling.
pub fn load_data(cfg: &ExperimentConfig) -> Result<RunData> {
    let dir = cfg.data_dir();
    let (mut train, mut test) = match cfg.dataset {
        DatasetKind::Mnist => (
            load_idx(
                &dir.join("train-images-idx3-ubyte"),
                &dir.join("train-labels-idx1-ubyte"),
                Split::Train,
                cfg.train_cap,
            )?,
            load_idx(
                &dir.join("t10k-images-idx3-ubyte"),
                &dir.join("t10k-labels-idx1-ubyte"),
                Split::Test,
                cfg.test_cap,
            )?,
        ),
        DatasetKind::Cifar10 => (
            load_cifar(
                &cifar_files(
                    &dir,
                    &["data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"],
                ),
                10,
                Split::Train,
                cfg.train_cap,
            )?,
            load_cifar(&cifar_files(&dir, &["test_batch.bin"]), 10, Split::Test, cfg.test_cap)?,
        ),
        DatasetKind::Cifar100 => (
            load_cifar(&cifar_files(&dir, &["train.bin"]), 100, Split::Train, cfg.train_cap)?,
            load_cifar(&cifar_files(&dir, &["test.bin"]), 100, Split::Test, cfg.test_cap)?,
        ),
        DatasetKind::Teacher => {
            let task = make_teacher_task(cfg.teacher_seed.unwrap_or(cfg.seed))?;
            let train = task.dataset()?;
            let mut test = train.clone();
            test.split = Split::Test;
            (train, test)
        }
    };
    if cfg.standardize {
        let stats = channel_stats(&train, 3)?;
        train.standardize_channels(&stats)?;
        test.standardize_channels(&stats)?;
    }
    if cfg.shuffle_labels {
        train.shuffle_labels(&mut stream_rng(cfg.seed, streams::LABELS));
    }
    if train.is_empty() || test.is_empty() {
        return Err(HarnessError::Config("dataset split is empty".into()));
    }
    Ok(RunData { train, test })
}

pub fn build_network(cfg: &ExperimentConfig, data: &RunData) -> Result<NetworkState> {
    let mut widths = vec![data.train.meta.input_dim];
    widths.extend(&cfg.hidden);
    widths.push(data.train.target_dim());
    let mut net = init_weights(
        &widths,
        cfg.activation,
        Activation::Linear,
        &mut stream_rng(cfg.seed, streams::INIT),
    )?;
    if cfg.rule == Rule::Danp {
        net.enable_decorrelation(cfg.decorrelate_input);
    }
    Ok(net)
}

fn set_baud(path: &Path, baud: u32) -> Result<()> {
    let status = std::process::Command::new("stty")
        .arg("-F")
        .arg(path)
        .arg(baud.to_string())
        .arg("raw")
        .status()?;
    if status.success() {
        Ok(())
    } else {
        Err(HarnessError::Config(format!("stty failed to set {baud} baud on {}", path.display())))
    }
}

/// The noise source a config asks for, or `None` for BP.
pub fn build_noise(cfg: &ExperimentConfig) -> Result<Option<NoiseSource>> {
    let spec = match (&cfg.noise, &cfg.replay) {
        (_, Some(replay)) => replay_spec(cfg, replay)?,
        (Some(spec), None) => spec.clone(),
        (None, None) => return Ok(None),
    };
    let source = match &spec {
        NoiseSpec::Live { buffer_size, min_wait } => {
            let transport: Box<dyn SerialTransport> = match &cfg.live {
                Some(LiveSource::Mock { spec, rate_hz, quantize }) => {
                    let mock = MockTransport::new(spec, named_rng(cfg.seed, "mock-device"), *rate_hz)?;
                    Box::new(if *quantize { mock.with_adc(AdcModel::default()) } else { mock })
                }
                Some(LiveSource::Device { path, frame, baud }) => {
                    if let Some(b) = baud {
                        set_baud(path, *b)?;
                    }
                    Box::new(StreamTransport::open(path, (*frame).into(), AdcModel::default())?)
                }
                None => return Err(HarnessError::Config("live noise needs a [live] section".into())),
            };
            let mut live = LiveNoise::new(transport, *buffer_size, *min_wait, stream_rng(cfg.seed, streams::LIVE));
            live.warm_up(LIVE_WARMUP_POLLS)?;
            NoiseSource::live(live)
        }
        _ => NoiseSource::new(&spec, stream_rng(cfg.seed, streams::NOISE))?,
    };
    Ok(Some(source.with_gain(cfg.noise_gain)))
}

fn replay_spec(cfg: &ExperimentConfig, replay: &ReplaySource) -> Result<NoiseSpec> {
    let (trace, start) = match replay {
        ReplaySource::File {
            path,
            sampling_rate_hz,
            start,
        } => (noiseprop::trace_io::read_trace(path, *sampling_rate_hz)?, *start),
        ReplaySource::Simulated { spec, steps, start } => {
            let mut src = NoiseSource::new(spec, named_rng(cfg.seed, "replay-trace"))?;
            (TelegraphTrace::new(src.sample(*steps)?, 1.0)?, *start)
        }
    };
    let spec = NoiseSpec::Replay { trace, start };
    if matches!(cfg.rule, Rule::Anp | Rule::Danp) {
        if let Some(why) = degenerate_for_anp(&spec) {
            return Err(HarnessError::Config(format!("noise cannot drive ANP: {why}")));
        }
    }
    Ok(spec)
}

/// Draws per-layer `rows × width` noise matrices for `passes` passes,
/// sample by sample and, within a sample, pass by pass.
fn draw_noise(src: &mut NoiseSource, sizes: &[usize], rows: usize, passes: usize) -> Result<Vec<Vec<Matrix>>> {
    let total: usize = sizes.iter().sum();
    let mut out: Vec<Vec<Matrix>> = (0..passes)
        .map(|_| sizes.iter().map(|&n| Matrix::zeros(rows, n)).collect())
        .collect();
    let mut flat = vec![0.0; total];
    for s in 0..rows {
        for pass in out.iter_mut() {
            src.fill_layer_noise(&mut flat)?;
            let mut at = 0;
            for (m, &n) in pass.iter_mut().zip(sizes) {
                m.row_mut(s).copy_from_slice(&flat[at..at + n]);
                at += n;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub sample_losses: Vec<f64>,
}

/// Clean-pass loss and accuracy over a whole dataset.
pub fn evaluate(net: &NetworkState, ds: &Dataset, kind: LossKind) -> Result<Evaluation> {
    let n = ds.len();
    let mut losses = Vec::with_capacity(n);
    let mut correct = 0;
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let x = ds.inputs().select_rows(chunk);
        let t = ds.target_rows(chunk);
        let trace = forward_batch(net, &x, None)?;
        losses.extend(batch_losses(kind, &t, trace.output())?);
        correct += correct_count(&t, trace.output());
    }
    Ok(Evaluation {
        loss: losses.iter().sum::<f64>() / n as f64,
        accuracy: ds.labels().map(|_| correct as f64 / n as f64),
        sample_losses: losses,
    })
}

/// Mean over decorrelated layers of the off-diagonal covariance norm of the
/// decorrelated inputs, measured on the first training rows.
pub fn decorrelation_statistic(net: &NetworkState, ds: &Dataset) -> Result<Option<f64>> {
    if !net.has_decorrelation() {
        return Ok(None);
    }
    let idx: Vec<usize> = (0..ds.len().min(DECORRELATION_PROBE)).collect();
    let trace = forward_batch(net, &ds.inputs().select_rows(&idx), None)?;
    let mut total = 0.0;
    let mut count = 0;
    for (l, lt) in trace.layers.iter().enumerate() {
        if net.decorrelator(l).is_some() {
            total += off_diagonal_covariance(&lt.input_used)?;
            count += 1;
        }
    }
    Ok(Some(total / count as f64))
}

struct EpochStats {
    skips: u64,
}

fn train_epoch(
    cfg: &ExperimentConfig,
    net: &mut NetworkState,
    opt: &mut Optimizer,
    noise: &mut Option<NoiseSource>,
    train: &Dataset,
    shuffle_rng: &mut noiseprop::rng::SimRng,
    augment_rng: &mut noiseprop::rng::SimRng,
) -> Result<EpochStats> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(shuffle_rng);
    let sizes = net.layer_sizes();
    let mut skips = 0u64;
    for chunk in order.chunks(cfg.batch_size) {
        let mut x = train.inputs().select_rows(chunk);
        if cfg.augment {
            augment_rows(&mut x, augment_rng)?;
        }
        let t = train.target_rows(chunk);
        match cfg.rule {
            Rule::Bp => {
                let trace = forward_batch(net, &x, None)?;
                let upd = bp_update_batch(net, &trace, &t, cfg.loss)?;
                opt.step(&upd, cfg.eta, net)?;
            }
            Rule::Np => {
                let src = noise.as_mut().expect("validated: np has noise");
                let sigma = cfg.effective_sigma().expect("validated: np has gaussian noise");
                let mut eps = draw_noise(src, &sizes, chunk.len(), 1)?;
                let eps = eps.pop().expect("one pass");
                let first = first_layer_input(net, &x)?;
                let clean = forward_batch_from(net, first.clone(), None)?;
                let noisy = forward_batch_from(net, first, Some(&eps))?;
                let upd = np_update_batch(&clean, &noisy, &eps, sigma, cfg.loss, &t)?;
                opt.step(&upd, cfg.eta, net)?;
            }
            Rule::Anp | Rule::Danp => {
                let src = noise.as_mut().expect("validated: anp has noise");
                let mut eps = draw_noise(src, &sizes, chunk.len(), 2)?;
                let e2 = eps.pop().expect("two passes");
                let e1 = eps.pop().expect("two passes");
                let first = first_layer_input(net, &x)?;
                let p1 = forward_batch_from(net, first.clone(), Some(&e1))?;
                let p2 = forward_batch_from(net, first, Some(&e2))?;
                let (upd, skipped) = anp_update_batch(&p1, &p2, cfg.loss, &t, cfg.anp_input)?;
                skips += skipped as u64;
                if let Some(upd) = upd {
                    opt.step(&upd, cfg.eta, net)?;
                }
                if cfg.rule == Rule::Danp {
                    for (l, lt) in p1.layers.iter().enumerate() {
                        if let Some(r) = net.decorrelator_mut(l) {
                            decorrelation_update_batch(r, &lt.input_used, cfg.decorrelation_eps)?;
                        }
                    }
                }
            }
        }
    }
    Ok(EpochStats { skips })
}

fn record(
    cfg: &ExperimentConfig,
    net: &NetworkState,
    data: &RunData,
    epoch: usize,
    skips: u64,
    wraps: u64,
    sample_losses: &mut Vec<Vec<f64>>,
) -> Result<EpochRecord> {
    let train_eval = if cfg.eval_train || cfg.record_sample_losses {
        Some(evaluate(net, &data.train, cfg.loss)?)
    } else {
        None
    };
    let test_eval = evaluate(net, &data.test, cfg.loss)?;
    let rec = EpochRecord {
        epoch,
        train_loss: train_eval.as_ref().filter(|_| cfg.eval_train).map(|e| e.loss),
        train_acc: train_eval.as_ref().filter(|_| cfg.eval_train).and_then(|e| e.accuracy),
        test_loss: test_eval.loss,
        test_acc: test_eval.accuracy,
        skips,
        wraps,
        decorrelation: decorrelation_statistic(net, &data.train)?,
    };
    if cfg.record_sample_losses {
        sample_losses.push(train_eval.map(|e| e.sample_losses).unwrap_or_default());
    }
    Ok(rec)
}

/// Trains per `cfg` on already loaded data. `noise` overrides the source
/// built from the config (used to inject custom transports). `on_epoch`
/// sees every record as soon as it is computed.
pub fn train(
    cfg: &ExperimentConfig,
    data: &RunData,
    noise: Option<NoiseSource>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(RunMetrics, NetworkState)> {
    cfg.validate()?;
    let started = Instant::now();
    let mut net = build_network(cfg, data)?;
    let mut noise = match noise {
        Some(n) => Some(n),
        None if cfg.rule == Rule::Bp => None,
        None => build_noise(cfg)?,
    };
    let mut opt = Optimizer::new(cfg.optimizer, &net);
    let mut shuffle_rng = stream_rng(cfg.seed, streams::SHUFFLE);
    let mut augment_rng = stream_rng(cfg.seed, streams::AUGMENT);
    let mut records = Vec::with_capacity(cfg.epochs + 1);
    let mut sample_losses = Vec::new();

    let first = record(cfg, &net, data, 0, 0, 0, &mut sample_losses)?;
    on_epoch(&first);
    records.push(first);
    for epoch in 1..=cfg.epochs {
        let wraps_before = noise.as_ref().map_or(0, NoiseSource::wraps);
        let stats = train_epoch(cfg, &mut net, &mut opt, &mut noise, &data.train, &mut shuffle_rng, &mut augment_rng)?;
        if !net.is_finite() {
            return Err(HarnessError::Diverged { epoch });
        }
        let wraps = noise.as_ref().map_or(0, NoiseSource::wraps) - wraps_before;
        let rec = record(cfg, &net, data, epoch, stats.skips, wraps, &mut sample_losses)?;
        on_epoch(&rec);
        records.push(rec);
    }
    let metrics = RunMetrics {
        seed: cfg.seed,
        config: cfg.clone(),
        train_size: data.train.len(),
        test_size: data.test.len(),
        wall_time_s: started.elapsed().as_secs_f64(),
        records,
        sample_losses,
    };
    Ok((metrics, net))
}

pub fn run_with_data(cfg: &ExperimentConfig, data: &RunData) -> Result<RunMetrics> {
    Ok(train(cfg, data, None, &mut |_| {})?.0)
}

/// Validates, loads data and trains.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunMetrics> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    run_with_data(cfg, &data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn teacher_cfg(rule: &str, extra: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(&format!(
            "dataset = \"teacher\"\nrule = \"{rule}\"\nloss = \"squared_error\"\noptimizer = \"adam\"\neta = 1e-2\nepochs = 3\nseed = 3\nhidden = [2, 2]\nbatch_size = 10\n{extra}\n[noise]\nkind = \"gaussian\"\nsigma = 0.01\n"
        ))
        .unwrap()
    }

    #[test]
    fn zero_epochs_records_baseline_only() {
        let mut cfg = teacher_cfg("bp", "");
        cfg.epochs = 0;
        let m = run_experiment(&cfg).unwrap();
        assert_eq!(m.records.len(), 1);
        assert_eq!(m.records[0].epoch, 0);
    }

    #[test]
    fn every_rule_runs_and_is_deterministic() {
        for (rule, extra) in [("bp", ""), ("np", ""), ("anp", ""), ("danp", "decorrelation_eps = 1e-3")] {
            let cfg = teacher_cfg(rule, extra);
            let a = run_experiment(&cfg).unwrap();
            let b = run_experiment(&cfg).unwrap();
            assert!(a.same_results(&b), "{rule}");
            assert_eq!(a.records.len(), 4);
            assert_eq!(a.records[0].decorrelation.is_some(), rule == "danp");
        }
    }

    #[test]
    fn bp_reduces_teacher_loss() {
        let mut cfg = teacher_cfg("bp", "");
        cfg.epochs = 50;
        let m = run_experiment(&cfg).unwrap();
        let l: Vec<f64> = m.records.iter().map(|r| r.test_loss).collect();
        assert!(m.records[50].test_loss < 0.5 * m.records[0].test_loss, "{l:?}");
    }

    #[test]
    fn replay_noise_counts_wraps() {
        let mut cfg = teacher_cfg("anp", "");
        cfg.noise = None;
        cfg.replay = Some(ReplaySource::Simulated {
            spec: NoiseSpec::Hmm(noiseprop::noise::HmmParams::MEASURED),
            steps: 500,
            start: 0,
        });
        let m = run_experiment(&cfg).unwrap();
        // 100 samples × 2 passes × 5 units per epoch = 1000 values = 2 wraps.
        assert!(m.records[1..].iter().all(|r| r.wraps == 2));
    }

    #[test]
    fn constant_replay_is_rejected() {
        let mut cfg = teacher_cfg("anp", "");
        cfg.noise = None;
        cfg.replay = Some(ReplaySource::Simulated {
            spec: NoiseSpec::Bernoulli { p: 1.0, alpha: 0.1, h: 1 },
            steps: 10,
            start: 0,
        });
        assert!(matches!(run_experiment(&cfg), Err(HarnessError::Config(_))));
    }

    #[test]
    fn sample_losses_recorded_per_epoch() {
        let mut cfg = teacher_cfg("anp", "record_sample_losses = true");
        cfg.epochs = 2;
        let m = run_experiment(&cfg).unwrap();
        assert_eq!(m.sample_losses.len(), 3);
        assert!(m.sample_losses.iter().all(|v| v.len() == 100));
    }
}
