//! Statistics of a noise trace: histogram, autocorrelation, dwell times and
//! a two-state HMM fit.

use std::path::Path;

use noiseprop::noise::{NoiseSource, NoiseSpec};
use noiseprop::rng::named_rng;
use noiseprop::smtj::{
    autocorrelation, estimate_dwell_times, fit_hmm, histogram, DwellEstimate, HmmFit, TelegraphTrace,
};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const DEFAULT_MAX_LAG: usize = 200;
pub const DEFAULT_BINS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Characterization {
    pub samples: usize,
    pub sampling_rate_hz: f64,
    pub mean: f64,
    pub std: f64,
    pub dwell: Option<DwellEstimate>,
    pub hmm: Option<HmmFit>,
    /// Why `dwell` or `hmm` is missing.
    pub notes: Vec<String>,
    #[serde(skip)]
    pub histogram: Vec<(f64, usize)>,
    #[serde(skip)]
    pub acf: Vec<f64>,
}

/// Generates `steps` samples from a spec. Telegraph stacks are sampled at
/// `1/dt`; every other source uses `rate_hz`.
pub fn simulate(spec: &NoiseSpec, steps: usize, seed: u64, rate_hz: f64) -> Result<TelegraphTrace> {
    let rate = match spec {
        NoiseSpec::Telegraph { dt, .. } => 1.0 / dt,
        NoiseSpec::Live { .. } => {
            return Err(HarnessError::Config("live noise cannot be simulated; record a trace".into()))
        }
        _ => rate_hz,
    };
    let mut src = NoiseSource::new(spec, named_rng(seed, "characterize"))?;
    Ok(TelegraphTrace::new(src.sample(steps)?, rate)?)
}

fn two_level<T>(r: noiseprop::Result<T>, what: &str, notes: &mut Vec<String>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(noiseprop::Error::Unimodal) => {
            notes.push(format!("{what}: trace is not two-level"));
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

/// Two-level statistics that do not apply (a single-level trace) are
/// reported as notes; a constant trace is an error.
pub fn characterize(trace: &TelegraphTrace, max_lag: usize, bins: usize) -> Result<Characterization> {
    let x = trace.samples();
    let max_lag = max_lag.min(x.len().saturating_sub(1));
    let acf = autocorrelation(trace, max_lag)?;
    let mean = noiseprop::numerics::mean(x);
    let std = noiseprop::numerics::variance(x).sqrt();
    let mut notes = Vec::new();
    let dwell = two_level(estimate_dwell_times(trace), "dwell times", &mut notes)?;
    let hmm = two_level(fit_hmm(trace), "hmm fit", &mut notes)?;
    Ok(Characterization {
        samples: x.len(),
        sampling_rate_hz: trace.sampling_rate(),
        mean,
        std,
        dwell,
        hmm,
        notes,
        histogram: histogram(x, bins),
        acf,
    })
}

/// Writes `histogram.csv`, `acf.csv` and `summary.json` into `dir`.
pub fn write_characterization(c: &Characterization, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("histogram.csv"))?;
    w.write_record(["bin_center", "count"])?;
    for (center, count) in &c.histogram {
        w.serialize((center, count))?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("acf.csv"))?;
    w.write_record(["lag", "lag_seconds", "correlation"])?;
    for (k, a) in c.acf.iter().enumerate() {
        w.serialize((k, k as f64 / c.sampling_rate_hz, a))?;
    }
    w.flush()?;
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(c)?)?;
    Ok(())
}
