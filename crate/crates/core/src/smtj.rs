//! Superparamagnetic tunnel junction physics and trace analysis.
//!
//! A junction is a two-level telegraph process whose mean residence time in
//! each state follows the Néel–Arrhenius law `τ = τ₀·exp(E_b / k_B T)`. Field
//! bias is encoded by giving the two states different barrier heights.
//!
//! The analysis half of the module works on sampled traces: histogram,
//! biased autocorrelation, dwell-time estimation with a hysteresis crossing
//! detector, and a two-state HMM fit.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::noise::HmmParams;
use crate::numerics::{mean, variance};

/// Telegraph level of a single junction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Low,
    High,
}

impl Level {
    fn index(self) -> usize {
        match self {
            Level::Low => 0,
            Level::High => 1,
        }
    }

    fn flipped(self) -> Level {
        match self {
            Level::Low => Level::High,
            Level::High => Level::Low,
        }
    }
}

/// Physical parameters of one junction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelegraphParams {
    /// Attempt time in seconds.
    pub tau0: f64,
    /// Barrier height over thermal energy, `[low, high]`.
    pub eb_over_kt: [f64; 2],
    pub level_low: f64,
    pub level_high: f64,
}

impl TelegraphParams {
    /// Symmetric junction whose mean dwell time is `tau` in both states.
    pub fn symmetric(tau0: f64, tau: f64, level_low: f64, level_high: f64) -> Self {
        let eb = (tau / tau0).ln();
        Self {
            tau0,
            eb_over_kt: [eb, eb],
            level_low,
            level_high,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau0 > 0.0 && self.tau0.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau0 must be > 0, got {}", self.tau0)));
        }
        if self.eb_over_kt.iter().any(|e| !(*e >= 0.0)) {
            return Err(Error::InvalidParameter("eb_over_kt must be >= 0".into()));
        }
        if !(self.level_low < self.level_high) {
            return Err(Error::InvalidParameter(
                "level_low must be below level_high".into(),
            ));
        }
        Ok(())
    }

    pub fn level_value(&self, level: Level) -> f64 {
        match level {
            Level::Low => self.level_low,
            Level::High => self.level_high,
        }
    }

    /// Stationary mean output level.
    pub fn stationary_mean(&self) -> Result<f64> {
        let tl = dwell_time(self, Level::Low)?;
        let th = dwell_time(self, Level::High)?;
        let p_high = th / (tl + th);
        Ok(self.level_low * (1.0 - p_high) + self.level_high * p_high)
    }
}

/// Mean residence time in `level`.
pub fn dwell_time(params: &TelegraphParams, level: Level) -> Result<f64> {
    let tau = params.tau0 * params.eb_over_kt[level.index()].exp();
    if tau.is_finite() && tau > 0.0 {
        Ok(tau)
    } else {
        Err(Error::NonFinite(format!(
            "dwell time overflows for eb_over_kt = {}",
            params.eb_over_kt[level.index()]
        )))
    }
}

/// Aggregate fluctuation rate `Σ 1/τᵢ` of an ensemble of junctions.
pub fn ensemble_rate(taus: &[f64]) -> Result<f64> {
    let mut rate = 0.0;
    for &t in taus {
        if !(t > 0.0) {
            return Err(Error::InvalidParameter(format!("dwell time must be > 0, got {t}")));
        }
        rate += 1.0 / t;
    }
    Ok(rate)
}

/// A uniformly sampled single-channel trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelegraphTrace {
    samples: Vec<f64>,
    sampling_rate: f64,
}

impl TelegraphTrace {
    pub fn new(samples: Vec<f64>, sampling_rate: f64) -> Result<Self> {
        if !(sampling_rate > 0.0 && sampling_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sampling rate must be > 0, got {sampling_rate}"
            )));
        }
        if samples.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "a trace needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("trace sample".into()));
        }
        Ok(Self {
            samples,
            sampling_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sampling_rate(&self) -> f64 {
        self.sampling_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sampling_rate
    }
}

/// Continuous-time telegraph process with exact exponential residence times.
#[derive(Debug, Clone)]
pub struct TelegraphProcess {
    params: TelegraphParams,
    taus: [f64; 2],
    level: Level,
    remaining: f64,
}

impl TelegraphProcess {
    pub fn new<R: Rng + ?Sized>(params: TelegraphParams, start: Option<Level>, rng: &mut R) -> Result<Self> {
        params.validate()?;
        let taus = [
            dwell_time(&params, Level::Low)?,
            dwell_time(&params, Level::High)?,
        ];
        let level = start.unwrap_or_else(|| {
            let p_high = taus[1] / (taus[0] + taus[1]);
            if rng.random::<f64>() < p_high {
                Level::High
            } else {
                Level::Low
            }
        });
        let mut p = Self {
            params,
            taus,
            level,
            remaining: 0.0,
        };
        // Residence times are memoryless, so a fresh draw is exact at t = 0.
        p.remaining = p.draw_residence(rng);
        Ok(p)
    }

    fn draw_residence<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let tau = self.taus[self.level.index()];
        Exp::new(1.0 / tau).map_or(f64::INFINITY, |d| d.sample(rng))
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn value(&self) -> f64 {
        self.params.level_value(self.level)
    }

    pub fn params(&self) -> &TelegraphParams {
        &self.params
    }

    /// Advances the clock by `dt` seconds and returns the new level. Every
    /// switch inside the interval is resolved, however short its dwell.
    pub fn advance<R: Rng + ?Sized>(&mut self, dt: f64, rng: &mut R) -> Level {
        let mut left = dt;
        while self.remaining <= left {
            left -= self.remaining;
            self.level = self.level.flipped();
            self.remaining = self.draw_residence(rng);
        }
        self.remaining -= left;
        self.level
    }

    /// Like [`advance`](Self::advance) but also reports how many switches
    /// occurred and the residence lengths of the completed dwells.
    pub fn advance_recording<R: Rng + ?Sized>(
        &mut self,
        dt: f64,
        rng: &mut R,
        completed: &mut Vec<(Level, f64)>,
        elapsed_in_state: &mut f64,
    ) -> Level {
        let mut left = dt;
        while self.remaining <= left {
            left -= self.remaining;
            completed.push((self.level, *elapsed_in_state + self.remaining));
            *elapsed_in_state = 0.0;
            self.level = self.level.flipped();
            self.remaining = self.draw_residence(rng);
        }
        self.remaining -= left;
        *elapsed_in_state += left;
        self.level
    }
}

/// Simulates one junction for `duration` seconds and samples it at
/// `sampling_rate`. `start = None` draws the initial level from the
/// stationary distribution.
pub fn simulate_telegraph<R: Rng + ?Sized>(
    params: &TelegraphParams,
    duration: f64,
    sampling_rate: f64,
    start: Option<Level>,
    rng: &mut R,
) -> Result<TelegraphTrace> {
    if !(duration > 0.0) || !(sampling_rate > 0.0) {
        return Err(Error::InvalidParameter(
            "duration and sampling rate must be > 0".into(),
        ));
    }
    let n = (duration * sampling_rate).floor() as usize;
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "duration {duration} s is shorter than two sample periods at {sampling_rate} Hz"
        )));
    }
    let dt = 1.0 / sampling_rate;
    let mut proc = TelegraphProcess::new(params.clone(), start, rng)?;
    let mut samples = Vec::with_capacity(n);
    samples.push(proc.value());
    for _ in 1..n {
        proc.advance(dt, rng);
        samples.push(proc.value());
    }
    TelegraphTrace::new(samples, sampling_rate)
}

/// Series connection of junctions: resistances, and so voltages across the
/// stack, add pointwise.
pub fn compose_series(traces: &[TelegraphTrace]) -> Result<TelegraphTrace> {
    let first = traces
        .first()
        .ok_or_else(|| Error::InvalidParameter("compose_series needs at least one trace".into()))?;
    let mut sum = vec![0.0; first.len()];
    for t in traces {
        check_len("compose_series length", first.len(), t.len())?;
        if t.sampling_rate != first.sampling_rate {
            return Err(Error::InvalidParameter(format!(
                "sampling rates differ: {} vs {}",
                first.sampling_rate, t.sampling_rate
            )));
        }
        for (s, v) in sum.iter_mut().zip(&t.samples) {
            *s += v;
        }
    }
    TelegraphTrace::new(sum, first.sampling_rate)
}

/// Normalized autocorrelation `C(0..=max_lag)` of the mean-centered trace,
/// using the biased estimator (every lag divided by the full length).
pub fn autocorrelation(trace: &TelegraphTrace, max_lag: usize) -> Result<Vec<f64>> {
    autocorrelation_of(trace.samples(), max_lag)
}

pub fn autocorrelation_of(x: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = x.len();
    if max_lag >= n {
        return Err(Error::InvalidParameter(format!(
            "max_lag {max_lag} must be below the sample count {n}"
        )));
    }
    let m = mean(x);
    let centered: Vec<f64> = x.iter().map(|v| v - m).collect();
    let c0: f64 = centered.iter().map(|v| v * v).sum();
    if !(c0 > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let mut acf = Vec::with_capacity(max_lag + 1);
    for k in 0..=max_lag {
        let ck: f64 = centered[..n - k]
            .iter()
            .zip(&centered[k..])
            .map(|(a, b)| a * b)
            .sum();
        acf.push(ck / c0);
    }
    Ok(acf)
}

/// Fixed-width histogram over `[min, max]`; returns `(bin_center, count)`.
pub fn histogram(x: &[f64], bins: usize) -> Vec<(f64, usize)> {
    let bins = bins.max(1);
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if x.is_empty() {
        return Vec::new();
    }
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &v in x {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + (i as f64 + 0.5) * width, c))
        .collect()
}

const MODE_BINS: usize = 64;
const MIN_SECOND_MODE: f64 = 0.02;
const HYSTERESIS_FRACTION: f64 = 0.10;

/// Two-level classification of a trace.
#[derive(Debug, Clone)]
pub struct LevelSplit {
    pub low_mode: f64,
    pub high_mode: f64,
    pub threshold: f64,
    /// `true` where the sample is assigned to the high level.
    pub high: Vec<bool>,
}

/// Finds the two histogram modes and classifies each sample with a
/// hysteresis band of 10% of the mode gap around the midpoint.
pub fn split_levels(x: &[f64]) -> Result<LevelSplit> {
    let hist = histogram(x, MODE_BINS);
    if hist.len() < 2 || variance(x) <= 0.0 {
        return Err(Error::Unimodal);
    }
    let counts: Vec<usize> = hist.iter().map(|h| h.1).collect();
    let a = crate::numerics::argmax(&counts.iter().map(|&c| c as f64).collect::<Vec<_>>());
    let floor = ((counts[a] as f64) * MIN_SECOND_MODE).max(1.0);
    let mut best: Option<usize> = None;
    for j in 0..counts.len() {
        if j == a || (counts[j] as f64) < floor {
            continue;
        }
        let (lo, hi) = if j < a { (j, a) } else { (a, j) };
        if hi - lo < 2 {
            continue;
        }
        let valley = counts[lo + 1..hi].iter().copied().min().unwrap_or(0);
        if (valley as f64) < 0.5 * counts[j] as f64
            && best.is_none_or(|b| counts[j] > counts[b])
        {
            best = Some(j);
        }
    }
    let b = best.ok_or(Error::Unimodal)?;
    let (low_mode, high_mode) = if hist[a].0 < hist[b].0 {
        (hist[a].0, hist[b].0)
    } else {
        (hist[b].0, hist[a].0)
    };
    let threshold = 0.5 * (low_mode + high_mode);
    let half_band = 0.5 * HYSTERESIS_FRACTION * (high_mode - low_mode);
    let mut state = x[0] > threshold;
    let high = x
        .iter()
        .map(|&v| {
            if state && v < threshold - half_band {
                state = false;
            } else if !state && v > threshold + half_band {
                state = true;
            }
            state
        })
        .collect();
    Ok(LevelSplit {
        low_mode,
        high_mode,
        threshold,
        high,
    })
}

/// Mean residence time in each level, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DwellEstimate {
    pub tau_low: f64,
    pub tau_high: f64,
    pub threshold: f64,
}

pub fn estimate_dwell_times(trace: &TelegraphTrace) -> Result<DwellEstimate> {
    let split = split_levels(trace.samples())?;
    let (mut sum, mut count) = ([0usize; 2], [0usize; 2]);
    let mut run = 1usize;
    for i in 1..=split.high.len() {
        if i < split.high.len() && split.high[i] == split.high[i - 1] {
            run += 1;
            continue;
        }
        let s = usize::from(split.high[i - 1]);
        sum[s] += run;
        count[s] += 1;
        run = 1;
    }
    if count[0] == 0 || count[1] == 0 {
        return Err(Error::Unimodal);
    }
    let dt = 1.0 / trace.sampling_rate();
    Ok(DwellEstimate {
        tau_low: sum[0] as f64 / count[0] as f64 * dt,
        tau_high: sum[1] as f64 / count[1] as f64 * dt,
        threshold: split.threshold,
    })
}

/// Two-state HMM parameters recovered from a trace. `mu1` is the upper level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmmFit {
    pub p_flip: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub sigma_obs: f64,
}

impl HmmFit {
    pub fn to_params(self) -> HmmParams {
        HmmParams {
            p_flip: self.p_flip,
            mu1: self.mu1,
            mu2: self.mu2,
            sigma_obs: self.sigma_obs,
        }
    }
}

/// Flip probability is the number of level crossings per sample; level means
/// and pooled within-level standard deviation come from the classification.
pub fn fit_hmm(trace: &TelegraphTrace) -> Result<HmmFit> {
    let x = trace.samples();
    let split = split_levels(x)?;
    let crossings = split.high.windows(2).filter(|w| w[0] != w[1]).count();
    let (mut sum, mut n) = ([0.0f64; 2], [0usize; 2]);
    for (&v, &h) in x.iter().zip(&split.high) {
        sum[usize::from(h)] += v;
        n[usize::from(h)] += 1;
    }
    if n[0] == 0 || n[1] == 0 || crossings == 0 {
        return Err(Error::Unimodal);
    }
    let mu = [sum[0] / n[0] as f64, sum[1] / n[1] as f64];
    let ss: f64 = x
        .iter()
        .zip(&split.high)
        .map(|(&v, &h)| (v - mu[usize::from(h)]).powi(2))
        .sum();
    Ok(HmmFit {
        p_flip: crossings as f64 / x.len() as f64,
        mu1: mu[1],
        mu2: mu[0],
        sigma_obs: (ss / x.len() as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn params(tau0: f64, eb: f64) -> TelegraphParams {
        TelegraphParams {
            tau0,
            eb_over_kt: [eb, eb],
            level_low: 0.0,
            level_high: 1.0,
        }
    }

    #[test]
    fn dwell_time_closed_forms() {
        assert_eq!(dwell_time(&params(1e-9, 0.0), Level::Low).unwrap(), 1e-9);
        let t = dwell_time(&params(1e-9, (1e6f64).ln()), Level::High).unwrap();
        assert!((t - 1e-3).abs() / 1e-3 < 1e-12);
        // doubling the barrier squares τ/τ₀
        let t3 = dwell_time(&params(1e-9, (1e3f64).ln()), Level::Low).unwrap() / 1e-9;
        let t6 = dwell_time(&params(1e-9, 2.0 * (1e3f64).ln()), Level::Low).unwrap() / 1e-9;
        assert!((t6 - t3 * t3).abs() / t6 < 1e-9);
    }

    #[test]
    fn dwell_time_overflow_is_an_error() {
        assert!(matches!(
            dwell_time(&params(1.0, 1e4), Level::Low),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn ensemble_rate_examples() {
        assert_eq!(ensemble_rate(&[1.0]).unwrap(), 1.0);
        assert_eq!(ensemble_rate(&[1.0, 1.0]).unwrap(), 2.0);
        assert_eq!(ensemble_rate(&[0.5, 0.25]).unwrap(), 6.0);
        assert!(ensemble_rate(&[1.0, 0.0]).is_err());
        assert!(ensemble_rate(&[-1.0]).is_err());
    }

    #[test]
    fn ensemble_rate_of_identical_junctions_scales_exactly() {
        for n in 1..20 {
            let taus = vec![0.125; n];
            assert_eq!(ensemble_rate(&taus).unwrap(), n as f64 * 8.0);
        }
    }

    #[test]
    fn frozen_junction_gives_constant_trace() {
        let mut rng = stream_rng(1, 0);
        let p = TelegraphParams {
            tau0: 1e-9,
            eb_over_kt: [1.0, 200.0],
            level_low: 0.0,
            level_high: 1.0,
        };
        let tr = simulate_telegraph(&p, 1.0, 1e4, Some(Level::High), &mut rng).unwrap();
        assert!(tr.samples().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn simulation_rejects_too_short_duration() {
        let mut rng = stream_rng(1, 0);
        let p = params(1e-3, 1.0);
        assert!(simulate_telegraph(&p, 1e-4, 1e4, None, &mut rng).is_err());
    }

    #[test]
    fn symmetric_occupancy_is_half() {
        let mut rng = stream_rng(2, 0);
        // τ = 1 ms, sampled at 10 kHz for 200 s ⇒ ~10⁵ dwells per level
        let p = TelegraphParams::symmetric(1e-9, 1e-3, 0.0, 1.0);
        let tr = simulate_telegraph(&p, 200.0, 1e4, None, &mut rng).unwrap();
        let occ = mean(tr.samples());
        assert!((occ - 0.5).abs() < 0.01, "occupancy {occ}");
    }

    #[test]
    fn mean_low_residence_matches_tau() {
        let mut rng = stream_rng(3, 0);
        let p = TelegraphParams {
            tau0: 1e-9,
            eb_over_kt: [(2e-3f64 / 1e-9).ln(), (1e-3f64 / 1e-9).ln()],
            level_low: 0.0,
            level_high: 1.0,
        };
        let mut proc = TelegraphProcess::new(p, Some(Level::Low), &mut rng).unwrap();
        let mut done = Vec::new();
        let mut elapsed = 0.0;
        while done.iter().filter(|(l, _)| *l == Level::Low).count() < 100_000 {
            proc.advance_recording(1e-2, &mut rng, &mut done, &mut elapsed);
        }
        let lows: Vec<f64> = done.iter().filter(|(l, _)| *l == Level::Low).map(|d| d.1).collect();
        let m = mean(&lows[1..]);
        assert!((m - 2e-3).abs() / 2e-3 < 0.03, "mean low residence {m}");
    }

    #[test]
    fn compose_series_level_counts() {
        let a = TelegraphTrace::new(vec![0.0, 1.0, 0.0, 1.0], 1.0).unwrap();
        let b = TelegraphTrace::new(vec![0.0, 0.0, 1.0, 1.0], 1.0).unwrap();
        let s = compose_series(&[a.clone(), b]).unwrap();
        let mut vals: Vec<f64> = s.samples().to_vec();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        assert_eq!(vals, vec![0.0, 1.0, 2.0]);

        assert_eq!(compose_series(std::slice::from_ref(&a)).unwrap(), a);

        let c = TelegraphTrace::new(vec![0.0, 0.0, 0.3, 0.3], 1.0).unwrap();
        let s = compose_series(&[a, c]).unwrap();
        let mut vals: Vec<f64> = s.samples().to_vec();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        assert_eq!(vals, vec![0.0, 0.3, 1.0, 1.3]);
    }

    #[test]
    fn compose_series_rejects_mismatch() {
        let a = TelegraphTrace::new(vec![0.0, 1.0, 0.0], 1.0).unwrap();
        let b = TelegraphTrace::new(vec![0.0, 1.0], 1.0).unwrap();
        let c = TelegraphTrace::new(vec![0.0, 1.0, 1.0], 2.0).unwrap();
        assert!(compose_series(&[a.clone(), b]).is_err());
        assert!(compose_series(&[a, c]).is_err());
        assert!(compose_series(&[]).is_err());
    }

    #[test]
    fn acf_normalization_and_errors() {
        let tr = TelegraphTrace::new(vec![1.0, 3.0, 2.0, 5.0, 4.0], 1.0).unwrap();
        let acf = autocorrelation(&tr, 3).unwrap();
        assert!((acf[0] - 1.0).abs() < 1e-15);
        assert_eq!(acf.len(), 4);
        assert!(autocorrelation(&tr, 5).is_err());
        let flat = TelegraphTrace::new(vec![2.0; 10], 1.0).unwrap();
        assert!(matches!(autocorrelation(&flat, 2), Err(Error::ZeroVariance)));
    }

    #[test]
    fn acf_biased_estimator_hand_value() {
        // centered (-1, 1, -1, 1): C(1) = (-1 -1 -1)/4 = -0.75
        let acf = autocorrelation_of(&[0.0, 2.0, 0.0, 2.0], 1).unwrap();
        assert!((acf[1] + 0.75).abs() < 1e-15);
    }

    #[test]
    fn dwell_times_of_single_switch_trace() {
        let tr = TelegraphTrace::new(vec![0.0, 0.0, 0.0, 1.0, 1.0], 10.0).unwrap();
        let d = estimate_dwell_times(&tr).unwrap();
        assert!((d.tau_low - 0.3).abs() < 1e-12);
        assert!((d.tau_high - 0.2).abs() < 1e-12);
        assert!((d.threshold - 0.5).abs() < 0.02);
    }

    #[test]
    fn unimodal_trace_is_rejected() {
        let mut rng = stream_rng(4, 0);
        let g: Vec<f64> = (0..20_000)
            .map(|_| rand_distr::StandardNormal.sample(&mut rng))
            .collect();
        let tr = TelegraphTrace::new(g, 1.0).unwrap();
        assert!(matches!(estimate_dwell_times(&tr), Err(Error::Unimodal)));
        assert!(matches!(fit_hmm(&tr), Err(Error::Unimodal)));
        let flat = TelegraphTrace::new(vec![0.5; 100], 1.0).unwrap();
        assert!(matches!(fit_hmm(&flat), Err(Error::Unimodal)));
    }

    #[test]
    fn alternating_trace_fits_full_flip_rate() {
        let x: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 0.0 } else { 1.0 }).collect();
        let fit = fit_hmm(&TelegraphTrace::new(x, 1.0).unwrap()).unwrap();
        assert!((fit.p_flip - 999.0 / 1000.0).abs() < 1e-12);
        assert_eq!(fit.sigma_obs, 0.0);
        assert_eq!(fit.mu1, 1.0);
        assert_eq!(fit.mu2, 0.0);
    }

    #[test]
    fn hysteresis_suppresses_chatter_at_threshold() {
        // 0.52 sits inside the ±5% band around 0.5 and must not flip the state
        let x = vec![0.0, 0.0, 0.52, 0.0, 1.0, 1.0, 0.48, 1.0, 0.0, 1.0];
        let split = split_levels(&x).unwrap();
        let flips = split.high.windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(flips, 3);
    }
}
