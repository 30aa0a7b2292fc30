//! Perturbation sources behind one sampling interface.
//!
//! [`NoiseSpec`] is the declarative description, [`NoiseSource`] the seeded
//! stateful sampler. All sources are bitwise reproducible for a given seed,
//! spec and call sequence.
//!
//! Layer assignment differs by source. Gaussian and Bernoulli draws are
//! i.i.d. per node. The HMM source keeps one independent two-state chain per
//! node, mirroring one simulated junction per unit. Telegraph, replay and
//! live sources are serial: consecutive nodes, from the input layer to the
//! output layer, receive consecutive samples of a single time series.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::live::LiveNoise;
use crate::rng::SimRng;
use crate::smtj::{TelegraphParams, TelegraphProcess, TelegraphTrace};

/// Two-state hidden Markov model with Gaussian emissions. State 1 emits
/// around `mu1`, state 2 around `mu2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmmParams {
    pub p_flip: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub sigma_obs: f64,
}

impl HmmParams {
    /// Two-state model estimated from the measured single-junction trace.
    pub const MEASURED: HmmParams = HmmParams {
        p_flip: 0.0809,
        mu1: 0.0480,
        mu2: 0.0362,
        sigma_obs: 0.001,
    };

    pub fn validate(&self) -> Result<()> {
        check_probability("p_flip", self.p_flip)?;
        if !(self.sigma_obs >= 0.0 && self.sigma_obs.is_finite()) {
            return Err(Error::InvalidParameter("sigma_obs must be >= 0".into()));
        }
        if !self.mu1.is_finite() || !self.mu2.is_finite() {
            return Err(Error::NonFinite("HMM level".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    Gaussian {
        sigma: f64,
    },
    /// Sum of `h` draws from `{−α, +α}`, `+α` with probability `p`.
    Bernoulli {
        p: f64,
        alpha: f64,
        h: u32,
    },
    Hmm(HmmParams),
    /// Series stack of junctions sampled every `dt` seconds, centered on the
    /// stack's stationary mean.
    Telegraph {
        junctions: Vec<TelegraphParams>,
        dt: f64,
    },
    /// Serial replay of a recorded trace, centered on its whole-trace mean.
    Replay {
        trace: TelegraphTrace,
        #[serde(default)]
        start: usize,
    },
    Live {
        buffer_size: usize,
        min_wait: f64,
    },
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must lie in [0, 1], got {p}")))
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseSpec::Gaussian { sigma } => {
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::InvalidParameter(format!("sigma must be > 0, got {sigma}")));
                }
            }
            NoiseSpec::Bernoulli { p, alpha, h } => {
                check_probability("p", *p)?;
                if !(*alpha > 0.0 && alpha.is_finite()) {
                    return Err(Error::InvalidParameter(format!("alpha must be > 0, got {alpha}")));
                }
                if *h == 0 {
                    return Err(Error::InvalidParameter("h must be >= 1".into()));
                }
            }
            NoiseSpec::Hmm(p) => p.validate()?,
            NoiseSpec::Telegraph { junctions, dt } => {
                if junctions.is_empty() {
                    return Err(Error::InvalidParameter("telegraph noise needs a junction".into()));
                }
                if !(*dt > 0.0) {
                    return Err(Error::InvalidParameter("dt must be > 0".into()));
                }
                for j in junctions {
                    j.validate()?;
                }
            }
            NoiseSpec::Replay { trace, .. } => {
                if trace.is_empty() {
                    return Err(Error::InvalidParameter("replay trace is empty".into()));
                }
            }
            NoiseSpec::Live { buffer_size, min_wait } => {
                if *buffer_size == 0 {
                    return Err(Error::InvalidParameter("buffer_size must be >= 1".into()));
                }
                if !(*min_wait >= 0.0) {
                    return Err(Error::InvalidParameter("min_wait must be >= 0".into()));
                }
            }
        }
        Ok(())
    }
}

/// `n` i.i.d. draws from `N(0, σ²)`.
pub fn sample_gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        })
        .collect()
}

/// `n` outputs, each the sum of `h` draws of `+α` (probability `p`) or `−α`.
pub fn sample_bernoulli<R: Rng + ?Sized>(rng: &mut R, p: f64, alpha: f64, h: u32, n: usize) -> Vec<f64> {
    (0..n).map(|_| bernoulli_sum(rng, p, alpha, h)).collect()
}

#[inline]
fn bernoulli_sum<R: Rng + ?Sized>(rng: &mut R, p: f64, alpha: f64, h: u32) -> f64 {
    let ups = (0..h).filter(|_| rng.random::<f64>() < p).count() as f64;
    alpha * (2.0 * ups - f64::from(h))
}

/// One two-state chain. `high == true` is state 1.
#[derive(Debug, Clone, Copy)]
struct HmmChain {
    in_state1: bool,
}

impl HmmChain {
    #[inline]
    fn step<R: Rng + ?Sized>(&mut self, rng: &mut R, p: &HmmParams) -> f64 {
        if rng.random::<f64>() < p.p_flip {
            self.in_state1 = !self.in_state1;
        }
        let mu = if self.in_state1 { p.mu1 } else { p.mu2 };
        if p.sigma_obs > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            mu + p.sigma_obs * z
        } else {
            mu
        }
    }
}

enum SourceKind {
    Gaussian(Normal<f64>),
    Bernoulli {
        p: f64,
        alpha: f64,
        h: u32,
    },
    Hmm {
        params: HmmParams,
        chain: HmmChain,
        nodes: Vec<HmmChain>,
    },
    Telegraph {
        junctions: Vec<TelegraphProcess>,
        dt: f64,
        offset: f64,
    },
    Replay {
        centered: Vec<f64>,
        cursor: usize,
    },
    Live(Box<LiveNoise>),
}

/// Seeded, stateful noise generator.
pub struct NoiseSource {
    rng: SimRng,
    kind: SourceKind,
    gain: f64,
    wraps: u64,
}

impl std::fmt::Debug for NoiseSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match &self.kind {
            SourceKind::Gaussian(_) => "gaussian",
            SourceKind::Bernoulli { .. } => "bernoulli",
            SourceKind::Hmm { .. } => "hmm",
            SourceKind::Telegraph { .. } => "telegraph",
            SourceKind::Replay { .. } => "replay",
            SourceKind::Live(_) => "live",
        };
        f.debug_struct("NoiseSource")
            .field("kind", &kind)
            .field("gain", &self.gain)
            .field("wraps", &self.wraps)
            .finish()
    }
}

impl NoiseSource {
    /// Builds a source for every variant except `Live`, which needs a
    /// transport (see [`NoiseSource::live`]).
    pub fn new(spec: &NoiseSpec, mut rng: SimRng) -> Result<Self> {
        spec.validate()?;
        let kind = match spec {
            NoiseSpec::Gaussian { sigma } => SourceKind::Gaussian(
                Normal::new(0.0, *sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?,
            ),
            NoiseSpec::Bernoulli { p, alpha, h } => SourceKind::Bernoulli {
                p: *p,
                alpha: *alpha,
                h: *h,
            },
            NoiseSpec::Hmm(params) => SourceKind::Hmm {
                params: *params,
                chain: HmmChain { in_state1: true },
                nodes: Vec::new(),
            },
            NoiseSpec::Telegraph { junctions, dt } => {
                let mut procs = Vec::with_capacity(junctions.len());
                let mut offset = 0.0;
                for j in junctions {
                    offset += j.stationary_mean()?;
                    procs.push(TelegraphProcess::new(j.clone(), None, &mut rng)?);
                }
                SourceKind::Telegraph {
                    junctions: procs,
                    dt: *dt,
                    offset,
                }
            }
            NoiseSpec::Replay { trace, start } => {
                let m = crate::numerics::mean(trace.samples());
                SourceKind::Replay {
                    centered: trace.samples().iter().map(|v| v - m).collect(),
                    cursor: start % trace.len(),
                }
            }
            NoiseSpec::Live { .. } => {
                return Err(Error::InvalidParameter(
                    "live noise needs a transport; build it with NoiseSource::live".into(),
                ))
            }
        };
        Ok(Self {
            rng,
            kind,
            gain: 1.0,
            wraps: 0,
        })
    }

    pub fn live(live: LiveNoise) -> Self {
        Self {
            rng: crate::rng::stream_rng(0, 0),
            kind: SourceKind::Live(Box::new(live)),
            gain: 1.0,
            wraps: 0,
        }
    }

    /// Multiplies every emitted value by `gain`.
    pub fn with_gain(mut self, gain: f64) -> Self {
        self.gain = gain;
        self
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    /// Number of times a replay source ran off the end of its trace.
    pub fn wraps(&self) -> u64 {
        self.wraps
    }

    /// Whether consecutive nodes receive consecutive samples of one series.
    pub fn is_serial(&self) -> bool {
        matches!(
            self.kind,
            SourceKind::Telegraph { .. } | SourceKind::Replay { .. } | SourceKind::Live(_)
        )
    }

    /// Next `n` values of the source. For the HMM this is `n` steps of a
    /// single chain; for serial sources it is the next `n` samples.
    pub fn sample(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; n];
        self.fill_serial(&mut out)?;
        Ok(out)
    }

    fn fill_serial(&mut self, out: &mut [f64]) -> Result<()> {
        let rng = &mut self.rng;
        match &mut self.kind {
            SourceKind::Gaussian(d) => out.iter_mut().for_each(|v| *v = d.sample(rng)),
            SourceKind::Bernoulli { p, alpha, h } => out
                .iter_mut()
                .for_each(|v| *v = bernoulli_sum(rng, *p, *alpha, *h)),
            SourceKind::Hmm { params, chain, .. } => {
                out.iter_mut().for_each(|v| *v = chain.step(rng, params))
            }
            SourceKind::Telegraph {
                junctions,
                dt,
                offset,
            } => {
                for v in out.iter_mut() {
                    let mut s = 0.0;
                    for j in junctions.iter_mut() {
                        j.advance(*dt, rng);
                        s += j.value();
                    }
                    *v = s - *offset;
                }
            }
            SourceKind::Replay { centered, cursor } => {
                for v in out.iter_mut() {
                    *v = centered[*cursor];
                    *cursor += 1;
                    if *cursor == centered.len() {
                        *cursor = 0;
                        self.wraps += 1;
                    }
                }
            }
            SourceKind::Live(live) => {
                let mut filled = 0;
                while filled < out.len() {
                    let list = live.request()?;
                    let take = (out.len() - filled).min(list.len());
                    out[filled..filled + take].copy_from_slice(&list[..take]);
                    filled += take;
                }
            }
        }
        if self.gain != 1.0 {
            out.iter_mut().for_each(|v| *v *= self.gain);
        }
        Ok(())
    }

    /// One noise vector per layer, sized by `layer_sizes`.
    pub fn layer_noise(&mut self, layer_sizes: &[usize]) -> Result<Vec<Vec<f64>>> {
        let total: usize = layer_sizes.iter().sum();
        let mut flat = vec![0.0; total];
        self.fill_layer_noise(&mut flat)?;
        let mut out = Vec::with_capacity(layer_sizes.len());
        let mut at = 0;
        for &n in layer_sizes {
            out.push(flat[at..at + n].to_vec());
            at += n;
        }
        Ok(out)
    }

    /// Fills the concatenated per-node noise for one forward pass, nodes
    /// ordered from the input side to the output side.
    pub fn fill_layer_noise(&mut self, out: &mut [f64]) -> Result<()> {
        match &mut self.kind {
            SourceKind::Hmm { params, nodes, .. } => {
                let rng = &mut self.rng;
                if nodes.len() != out.len() {
                    // Fresh per-node chains start from the stationary distribution.
                    *nodes = (0..out.len())
                        .map(|_| HmmChain {
                            in_state1: rng.random::<bool>(),
                        })
                        .collect();
                }
                for (v, c) in out.iter_mut().zip(nodes.iter_mut()) {
                    *v = c.step(rng, params) * self.gain;
                }
                Ok(())
            }
            SourceKind::Live(live) => {
                // One request per pass; layers are sliced serially from the
                // shuffled buffer snapshot.
                let mut filled = 0;
                while filled < out.len() {
                    let list = live.request()?;
                    let take = (out.len() - filled).min(list.len());
                    out[filled..filled + take].copy_from_slice(&list[..take]);
                    filled += take;
                }
                if self.gain != 1.0 {
                    out.iter_mut().for_each(|v| *v *= self.gain);
                }
                Ok(())
            }
            _ => self.fill_serial(out),
        }
    }

    pub fn live_mut(&mut self) -> Option<&mut LiveNoise> {
        match &mut self.kind {
            SourceKind::Live(l) => Some(l),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{mean, variance};
    use crate::rng::stream_rng;

    fn source(spec: NoiseSpec, seed: u64) -> NoiseSource {
        NoiseSource::new(&spec, stream_rng(seed, 2)).unwrap()
    }

    #[test]
    fn gaussian_moments() {
        let mut s = source(NoiseSpec::Gaussian { sigma: 1.0 }, 1);
        let x = s.sample(1_000_000).unwrap();
        assert!(mean(&x).abs() < 0.01);
        assert!((variance(&x) - 1.0).abs() < 0.01);
    }

    #[test]
    fn gaussian_small_sigma_tail() {
        let mut s = source(NoiseSpec::Gaussian { sigma: 0.001 }, 2);
        assert!(s.sample(100_000).unwrap().iter().all(|v| v.abs() < 0.01));
    }

    #[test]
    fn same_seed_same_output() {
        for spec in [
            NoiseSpec::Gaussian { sigma: 0.3 },
            NoiseSpec::Bernoulli { p: 0.3, alpha: 0.5, h: 3 },
            NoiseSpec::Hmm(HmmParams::MEASURED),
        ] {
            let a = source(spec.clone(), 9).layer_noise(&[4, 7]).unwrap();
            let b = source(spec, 9).layer_noise(&[4, 7]).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn bernoulli_symmetric_support_and_mean() {
        let mut rng = stream_rng(3, 0);
        let x = sample_bernoulli(&mut rng, 0.5, 1.0, 1, 1_000_000);
        assert!(x.iter().all(|&v| v == 1.0 || v == -1.0));
        assert!(mean(&x).abs() < 0.01);
    }

    #[test]
    fn bernoulli_degenerate() {
        let mut rng = stream_rng(4, 0);
        assert!(sample_bernoulli(&mut rng, 1.0, 2.0, 3, 1000).iter().all(|&v| v == 6.0));
    }

    #[test]
    fn bernoulli_two_draws_binomial_frequencies() {
        let mut rng = stream_rng(5, 0);
        let x = sample_bernoulli(&mut rng, 0.5, 1.0, 2, 1_000_000);
        let n = x.len() as f64;
        let f = |t: f64| x.iter().filter(|&&v| v == t).count() as f64 / n;
        assert!((f(-2.0) - 0.25).abs() < 0.01);
        assert!((f(0.0) - 0.5).abs() < 0.01);
        assert!((f(2.0) - 0.25).abs() < 0.01);
        assert!((f(-2.0) + f(0.0) + f(2.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hmm_absorbing_and_noiseless() {
        let p = HmmParams {
            p_flip: 0.0,
            mu1: 0.048,
            mu2: 0.0362,
            sigma_obs: 0.001,
        };
        let x = source(NoiseSpec::Hmm(p), 1).sample(10_000).unwrap();
        assert!(x.iter().all(|v| (v - 0.048).abs() < 0.005));

        let p = HmmParams {
            sigma_obs: 0.0,
            ..HmmParams::MEASURED
        };
        let mut s = source(NoiseSpec::Hmm(p), 1);
        assert!(s.sample(10_000).unwrap().iter().all(|&v| v == 0.048 || v == 0.0362));
        for layer in s.layer_noise(&[3, 5]).unwrap() {
            assert!(layer.iter().all(|&v| v == 0.048 || v == 0.0362));
        }
    }

    #[test]
    fn hmm_stationary_occupancy_and_flip_rate() {
        let n = 1_000_000;
        let x = source(NoiseSpec::Hmm(HmmParams::MEASURED), 6).sample(n).unwrap();
        let mid = 0.5 * (0.048 + 0.0362);
        let occ = x.iter().filter(|&&v| v > mid).count() as f64 / n as f64;
        let tol = 3.0 / (2.0 * (n as f64 * 0.0809).sqrt());
        assert!((occ - 0.5).abs() < tol.max(0.01), "occupancy {occ}");
        let flips = x.windows(2).filter(|w| (w[0] > mid) != (w[1] > mid)).count() as f64;
        let rate = flips / (n - 1) as f64;
        assert!((rate - 0.0809).abs() / 0.0809 < 0.05, "flip rate {rate}");
    }

    fn replay(samples: Vec<f64>, start: usize) -> NoiseSource {
        source(
            NoiseSpec::Replay {
                trace: TelegraphTrace::new(samples, 1.0).unwrap(),
                start,
            },
            0,
        )
    }

    #[test]
    fn replay_cursor_arithmetic_and_wraps() {
        let mut s = replay(vec![1.0, 2.0, 3.0], 0);
        assert_eq!(s.sample(2).unwrap(), vec![-1.0, 0.0]);
        assert_eq!(s.wraps(), 0);
        assert_eq!(s.sample(2).unwrap(), vec![1.0, -1.0]);
        assert_eq!(s.wraps(), 1);
    }

    #[test]
    fn replay_full_cycle_is_centered_trace() {
        let raw = vec![0.5, 1.5, 4.0, 2.0];
        let mut s = replay(raw.clone(), 0);
        let m = mean(&raw);
        let centered: Vec<f64> = raw.iter().map(|v| v - m).collect();
        assert_eq!(s.sample(4).unwrap(), centered);
        let mut a = replay(raw.clone(), 2);
        let mut b = replay(raw, 2);
        assert_eq!(a.sample(7).unwrap(), b.sample(7).unwrap());
    }

    #[test]
    fn replay_serial_layer_assignment() {
        // (a..e) = (1..5), mean 3
        let mut s = replay(vec![1.0, 2.0, 3.0, 4.0, 5.0], 0);
        let layers = s.layer_noise(&[2, 3]).unwrap();
        assert_eq!(layers, vec![vec![-2.0, -1.0], vec![0.0, 1.0, 2.0]]);
    }

    #[test]
    fn layer_noise_shapes() {
        let mut s = source(NoiseSpec::Gaussian { sigma: 1.0 }, 0);
        let l = s.layer_noise(&[2, 3]).unwrap();
        assert_eq!(l.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 3]);
    }

    #[test]
    fn gain_scales_output() {
        let a = source(NoiseSpec::Gaussian { sigma: 1.0 }, 3).sample(5).unwrap();
        let b = source(NoiseSpec::Gaussian { sigma: 1.0 }, 3).with_gain(2.0).sample(5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(2.0 * x, *y);
        }
    }

    #[test]
    fn telegraph_source_is_centered() {
        let j = TelegraphParams::symmetric(1e-9, 1e-3, 0.0, 1.0);
        let mut s = source(
            NoiseSpec::Telegraph {
                junctions: vec![j.clone(), j],
                dt: 1e-3,
            },
            4,
        );
        let x = s.sample(200_000).unwrap();
        assert!(mean(&x).abs() < 0.02);
        let mut vals = x.clone();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        assert_eq!(vals, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(NoiseSpec::Gaussian { sigma: 0.0 }.validate().is_err());
        assert!(NoiseSpec::Bernoulli { p: 1.5, alpha: 1.0, h: 1 }.validate().is_err());
        assert!(NoiseSpec::Bernoulli { p: 0.5, alpha: 1.0, h: 0 }.validate().is_err());
        assert!(NoiseSpec::Hmm(HmmParams { p_flip: -0.1, ..HmmParams::MEASURED }).validate().is_err());
        assert!(NoiseSource::new(&NoiseSpec::Live { buffer_size: 200, min_wait: 1e-3 }, stream_rng(0, 0)).is_err());
    }
}
