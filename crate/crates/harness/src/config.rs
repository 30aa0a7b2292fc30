//! Experiment configuration.

use std::path::{Path, PathBuf};

use noiseprop::learning::{AnpInput, LossKind, OptimizerKind};
use noiseprop::live::FrameMode;
use noiseprop::network::Activation;
use noiseprop::noise::NoiseSpec;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    Cifar100,
    Teacher,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Bp,
    Np,
    Anp,
    Danp,
}

/// Where live noise comes from when the noise spec is `live`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "transport", rename_all = "snake_case", deny_unknown_fields)]
pub enum LiveSource {
    /// Deterministic simulated device emitting `spec` at `rate_hz`.
    Mock {
        spec: NoiseSpec,
        #[serde(default = "default_device_rate")]
        rate_hz: f64,
        /// Quantize readings to the 14-bit ADC grid.
        #[serde(default)]
        quantize: bool,
    },
    /// Serial device or FIFO delivering framed readings.
    Device {
        path: PathBuf,
        #[serde(default = "default_frame")]
        frame: FrameModeConfig,
        /// Line speed applied with `stty` before opening; left alone if unset.
        #[serde(default)]
        baud: Option<u32>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameModeConfig {
    Lines,
    AdcCounts,
}

impl From<FrameModeConfig> for FrameMode {
    fn from(f: FrameModeConfig) -> Self {
        match f {
            FrameModeConfig::Lines => FrameMode::Lines,
            FrameModeConfig::AdcCounts => FrameMode::AdcCounts,
        }
    }
}

/// Serial replay trace, loaded from disk or simulated before training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReplaySource {
    /// A recorded trace with a `.hdr` sidecar (see `noiseprop::trace_io`).
    File {
        path: PathBuf,
        #[serde(default)]
        sampling_rate_hz: Option<f64>,
        #[serde(default)]
        start: usize,
    },
    /// `steps` consecutive samples of `spec` (HMM: one chain).
    Simulated {
        spec: NoiseSpec,
        steps: usize,
        #[serde(default)]
        start: usize,
    },
}

fn default_device_rate() -> f64 {
    noiseprop::live::DEVICE_RATE_HZ
}

fn default_frame() -> FrameModeConfig {
    FrameModeConfig::Lines
}

fn default_name() -> String {
    "run".into()
}

fn default_hidden_activation() -> Activation {
    Activation::LeakyRelu { slope: 0.01 }
}

fn default_one() -> f64 {
    1.0
}

fn default_batch() -> usize {
    64
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub dataset: DatasetKind,
    /// Dataset directory; defaults to `data/<dataset>` under the working
    /// directory.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    /// Hidden layer widths; input and output widths follow from the dataset.
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default = "default_hidden_activation")]
    pub activation: Activation,
    pub rule: Rule,
    /// Perturbation source; unused by BP.
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    /// Serial replay noise; replaces `noise`.
    #[serde(default)]
    pub replay: Option<ReplaySource>,
    /// Multiplies every noise value before injection.
    #[serde(default = "default_one")]
    pub noise_gain: f64,
    #[serde(default)]
    pub live: Option<LiveSource>,
    pub loss: LossKind,
    pub optimizer: OptimizerKind,
    pub eta: f64,
    #[serde(default)]
    pub decorrelation_eps: f64,
    /// Also decorrelate the network input, not just hidden-layer inputs.
    #[serde(default = "default_true")]
    pub decorrelate_input: bool,
    #[serde(default)]
    pub anp_input: AnpInput,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub train_cap: Option<usize>,
    #[serde(default)]
    pub test_cap: Option<usize>,
    /// Random crop and flip of training images (CIFAR only).
    #[serde(default)]
    pub augment: bool,
    /// Standardize CIFAR channels with training-set statistics.
    #[serde(default)]
    pub standardize: bool,
    /// Permute training labels (control runs).
    #[serde(default)]
    pub shuffle_labels: bool,
    /// Evaluate the full training set with clean passes after every epoch.
    #[serde(default = "default_true")]
    pub eval_train: bool,
    /// Keep per-sample clean training losses for every epoch.
    #[serde(default)]
    pub record_sample_losses: bool,
    /// Seed of the teacher network; defaults to `seed`.
    #[serde(default)]
    pub teacher_seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| {
            PathBuf::from("data").join(match self.dataset {
                DatasetKind::Mnist => "mnist",
                DatasetKind::Cifar10 => "cifar-10-batches-bin",
                DatasetKind::Cifar100 => "cifar-100-binary",
                DatasetKind::Teacher => "",
            })
        })
    }

    /// Gaussian sigma seen by the network, gain included.
    pub fn effective_sigma(&self) -> Option<f64> {
        match self.noise {
            Some(NoiseSpec::Gaussian { sigma }) => Some(sigma * self.noise_gain.abs()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be > 0, got {}", self.eta));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        self.activation.validate()?;
        if !(self.decorrelation_eps >= 0.0 && self.decorrelation_eps.is_finite()) {
            return bad(format!("decorrelation_eps must be >= 0, got {}", self.decorrelation_eps));
        }
        match self.rule {
            Rule::Danp if self.decorrelation_eps == 0.0 => {
                return bad("rule danp requires decorrelation_eps > 0".into())
            }
            Rule::Bp | Rule::Np | Rule::Anp if self.decorrelation_eps != 0.0 => {
                return bad(format!(
                    "decorrelation_eps is only used by rule danp; set it to 0 for {:?}",
                    self.rule
                ))
            }
            _ => {}
        }
        if self.rule == Rule::Np && self.effective_sigma().is_none() {
            return bad("rule np needs gaussian noise (its update divides by sigma^2)".into());
        }
        if !(self.noise_gain.is_finite() && self.noise_gain != 0.0) && self.rule != Rule::Bp {
            return bad("noise_gain must be finite and nonzero".into());
        }
        match (&self.noise, &self.replay) {
            (Some(_), Some(_)) => return bad("set either noise or replay, not both".into()),
            (None, None) if self.rule != Rule::Bp => {
                return bad(format!("rule {:?} needs a noise or replay section", self.rule))
            }
            _ => {}
        }
        match &self.replay {
            Some(ReplaySource::Simulated { spec, steps, .. }) => {
                spec.validate()?;
                if matches!(spec, NoiseSpec::Live { .. } | NoiseSpec::Replay { .. }) {
                    return bad("replay can only be simulated from a generative spec".into());
                }
                if *steps < 2 {
                    return bad("a simulated replay trace needs at least 2 steps".into());
                }
            }
            Some(ReplaySource::File { sampling_rate_hz: Some(r), .. }) if r.is_nan() || *r <= 0.0 => {
                return bad("replay sampling_rate_hz must be > 0".into())
            }
            _ => {}
        }
        let is_live = matches!(self.noise, Some(NoiseSpec::Live { .. }));
        match &self.live {
            None if is_live => return bad("live noise needs a [live] transport section".into()),
            Some(_) if !is_live => return bad("[live] is only valid with live noise".into()),
            Some(LiveSource::Mock { spec, rate_hz, .. }) => {
                spec.validate()?;
                if matches!(spec, NoiseSpec::Live { .. }) {
                    return bad("a mock transport cannot itself emit live noise".into());
                }
                if rate_hz.is_nan() || *rate_hz <= 0.0 {
                    return bad("mock rate_hz must be > 0".into());
                }
            }
            _ => {}
        }
        if let Some(noise) = &self.noise {
            noise.validate()?;
            if matches!(self.rule, Rule::Anp | Rule::Danp) {
                if let Some(why) = degenerate_for_anp(noise) {
                    return bad(format!("noise cannot drive ANP: {why}; both passes would be identical"));
                }
            }
        }
        if self.dataset == DatasetKind::Teacher && self.loss == LossKind::CrossEntropy {
            return bad("the teacher task is a regression; use squared_error".into());
        }
        if self.augment && !matches!(self.dataset, DatasetKind::Cifar10 | DatasetKind::Cifar100) {
            return bad("augment applies to CIFAR images only".into());
        }
        if self.standardize && !matches!(self.dataset, DatasetKind::Cifar10 | DatasetKind::Cifar100) {
            return bad("standardize applies to CIFAR images only".into());
        }
        if self.shuffle_labels && self.dataset == DatasetKind::Teacher {
            return bad("shuffle_labels needs a classification dataset".into());
        }
        Ok(())
    }
}

/// Reason a noise spec yields the same value in every pass, if it does.
pub fn degenerate_for_anp(spec: &NoiseSpec) -> Option<&'static str> {
    match spec {
        NoiseSpec::Bernoulli { p, alpha, .. } if *alpha == 0.0 || *p == 0.0 || *p == 1.0 => {
            Some("the Bernoulli source is constant")
        }
        NoiseSpec::Hmm(h) if h.sigma_obs == 0.0 && (h.p_flip == 0.0 || h.mu1 == h.mu2) => {
            Some("the HMM source is constant")
        }
        NoiseSpec::Replay { trace, .. } if trace.samples().iter().all(|&v| v == trace.samples()[0]) => {
            Some("the replay trace is constant")
        }
        _ => None,
    }
}
