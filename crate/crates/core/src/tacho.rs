//! Tacho-oscillographic estimation from cuff-pressure oscillations.
//!
//! The cuff record is band-passed to 0.5-2 Hz, split into beats at upward
//! zero crossings, and each beat's peak-to-peak amplitude is paired with the
//! cuff pressure it occurred at. Systolic and diastolic pressure are where
//! the amplitude envelope crosses fixed fractions of its maximum on either
//! side of the peak.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dsp::{design_bandpass, BandpassSpec};
use crate::error::{Error, Result};
use crate::oscillometric::{BpResult, Method, Quality};
use crate::signal::{CuffTrace, SampledSignal};

pub const MIN_BEATS: usize = 5;
/// A maximum plateau wider than this leaves the peak pressure undefined.
pub const MAX_PLATEAU_MMHG: f64 = 10.0;
const MIN_RATE_HZ: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TachoConfig {
    pub ratio_sys: f64,
    pub ratio_dias: f64,
    #[serde(rename = "min_envelope_mmHg")]
    pub min_envelope_mmhg: f64,
}

impl Default for TachoConfig {
    fn default() -> Self {
        Self {
            ratio_sys: 0.14,
            ratio_dias: 0.85,
            min_envelope_mmhg: 0.05,
        }
    }
}

impl TachoConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64| v > 0.0 && v < 1.0;
        if !(frac(self.ratio_sys) && frac(self.ratio_dias) && self.min_envelope_mmhg >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "ratios {} / {} must lie in (0, 1), gate {} must be non-negative",
                self.ratio_sys, self.ratio_dias, self.min_envelope_mmhg
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OscEnvelope {
    pub times_s: Vec<f64>,
    pub amplitude_mmhg: Vec<f64>,
    pub cuff_pressure_mmhg: Vec<f64>,
}

impl OscEnvelope {
    pub fn len(&self) -> usize {
        self.times_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times_s.is_empty()
    }

    /// Table with header `time_s,cuff_mmHg,amp_mmHg`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_s,cuff_mmHg,amp_mmHg\n");
        for i in 0..self.len() {
            let _ = writeln!(
                out,
                "{},{},{}",
                self.times_s[i], self.cuff_pressure_mmhg[i], self.amplitude_mmhg[i]
            );
        }
        out
    }
}

/// Band-passes the whole cuff record, starting from the steady state of its
/// first sample, and returns the deflation interval of the result. The
/// output metadata carries the filter's group-delay curve.
pub fn extract_oscillations(cuff: &CuffTrace) -> Result<SampledSignal> {
    let p = cuff.pressure();
    if p.sample_rate_hz() < MIN_RATE_HZ {
        return Err(Error::InsufficientData(format!(
            "cuff sampled at {} Hz, need {MIN_RATE_HZ} Hz",
            p.sample_rate_hz()
        )));
    }
    let filter = design_bandpass(&BandpassSpec::oscillation(), p.sample_rate_hz())?;
    filter.apply_steady(p)?.slice(&cuff.deflation_window())
}

/// Per-beat peak-to-peak amplitudes of `osc`, each placed at the time of the
/// beat maximum and paired with the cuff pressure at that time less the
/// filter delay. Sub-threshold beats at either end are dropped.
pub fn build_envelope(osc: &SampledSignal, cuff: &CuffTrace, cfg: &TachoConfig) -> Result<OscEnvelope> {
    cfg.validate()?;
    let y = osc.samples();
    let ups: Vec<usize> = (1..y.len()).filter(|&i| y[i - 1] < 0.0 && y[i] >= 0.0).collect();
    let beats = ups.len().saturating_sub(1);
    if beats < MIN_BEATS {
        return Err(Error::TooFewBeats {
            found: beats,
            needed: MIN_BEATS,
        });
    }
    let mut times = Vec::with_capacity(beats);
    let mut amps = Vec::with_capacity(beats);
    for w in ups.windows(2) {
        let seg = &y[w[0]..w[1]];
        let (mut i_max, mut hi, mut lo) = (0, f64::NEG_INFINITY, f64::INFINITY);
        for (i, &v) in seg.iter().enumerate() {
            if v > hi {
                hi = v;
                i_max = i;
            }
            lo = lo.min(v);
        }
        times.push(osc.time_at(w[0] + i_max));
        amps.push(hi - lo);
    }

    let delay = match &osc.meta().group_delay {
        Some(curve) => {
            let mut periods: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
            curve.at(1.0 / median(&mut periods))
        }
        None => 0.0,
    };
    let p = cuff.pressure();
    let (t_lo, t_hi) = (p.start_time_s(), p.last_time_s());

    let first = amps.iter().position(|&a| a >= cfg.min_envelope_mmhg);
    let last = amps.iter().rposition(|&a| a >= cfg.min_envelope_mmhg);
    let (first, last) = match (first, last) {
        (Some(f), Some(l)) if l + 1 - f >= MIN_BEATS => (f, l),
        (Some(f), Some(l)) => {
            return Err(Error::TooFewBeats {
                found: l + 1 - f,
                needed: MIN_BEATS,
            })
        }
        _ => {
            return Err(Error::TooFewBeats {
                found: 0,
                needed: MIN_BEATS,
            })
        }
    };
    let mut env = OscEnvelope::default();
    for i in first..=last {
        let at = (times[i] - delay).clamp(t_lo, t_hi);
        env.times_s.push(times[i]);
        env.amplitude_mmhg.push(amps[i]);
        env.cuff_pressure_mmhg.push(p.interpolate_at(at)?);
    }
    Ok(env)
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Three-point running median; the end points are kept as they are.
fn median3(xs: &[f64]) -> Vec<f64> {
    let mut out = xs.to_vec();
    for i in 1..xs.len().saturating_sub(1) {
        let mut w = [xs[i - 1], xs[i], xs[i + 1]];
        out[i] = median(&mut w);
    }
    out
}

pub fn detect_bp_tacho(env: &OscEnvelope, cfg: &TachoConfig) -> Result<BpResult> {
    cfg.validate()?;
    if env.len() < 3 {
        return Err(Error::TooFewBeats {
            found: env.len(),
            needed: MIN_BEATS,
        });
    }
    let am = median3(&env.amplitude_mmhg);
    let p = &env.cuff_pressure_mmhg;
    let t = &env.times_s;
    let a_max = am.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = am.iter().position(|&a| a == a_max).expect("maximum is attained");
    let mut hi = lo;
    while hi + 1 < am.len() && am[hi + 1] == a_max {
        hi += 1;
    }
    let width = (p[lo] - p[hi]).abs();
    if width > MAX_PLATEAU_MMHG {
        return Err(Error::NoUniquePeak { width_mmhg: width });
    }
    let peak = (lo + hi) / 2;

    // walk outward from the peak to the first beat under the ratio line
    let walk = |step: isize, ratio: f64| -> Option<(f64, f64)> {
        let level = ratio * a_max;
        let mut j = peak as isize;
        while (0..am.len() as isize).contains(&(j + step)) {
            j += step;
            let (k, j) = ((j - step) as usize, j as usize);
            if am[j] < level {
                let fr = (am[k] - level) / (am[k] - am[j]);
                return Some((p[k] + fr * (p[j] - p[k]), t[k] + fr * (t[j] - t[k])));
            }
        }
        None
    };
    // pressure falls with time, so the high-pressure side is earlier
    let (sbp, t_sys) = walk(-1, cfg.ratio_sys).ok_or(Error::MissingCrossing("systolic"))?;
    let (dbp, t_dias) = walk(1, cfg.ratio_dias).ok_or(Error::MissingCrossing("diastolic"))?;
    BpResult {
        sbp_mmhg: sbp,
        dbp_mmhg: dbp,
        t_sys_s: t_sys,
        t_dias_s: t_dias,
        method: Method::Tacho,
        quality: Quality::default(),
    }
    .checked()
}

/// Oscillation extraction, envelope and detection in one call.
pub fn estimate(cuff: &CuffTrace, cfg: &TachoConfig) -> Result<BpResult> {
    let osc = extract_oscillations(cuff)?;
    let env = build_envelope(&osc, cuff, cfg)?;
    detect_bp_tacho(&env, cfg)
}
