//! Oscillometric estimation with a reference PPG channel.
//!
//! Under a supra-systolic cuff the main channel carries no pulse and its
//! correlation with the free reference channel is near zero. As the cuff
//! deflates through systolic pressure the pulse returns, delayed and
//! distorted, and the correlation climbs; below diastolic the two channels
//! are alike up to gain. Systolic and diastolic pressure are read where the
//! lag-maximized correlation crosses 10% and 90%.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{center_in_place, CuffTrace, SampledSignal, Window};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CcfConfig {
    pub window_t_s: f64,
    pub max_lag_s: f64,
    pub hop_s: f64,
    pub thresh_sys: f64,
    pub thresh_dias: f64,
    /// A diastolic crossing only counts if the track then stays at or above
    /// the threshold this long.
    pub sustain_dias_s: f64,
    /// Span of the running median applied to the track before the threshold
    /// search. Excursions shorter than half the span are removed.
    pub median_span_s: f64,
    /// Main-channel windows whose RMS is below this fraction of the
    /// reference RMS are treated as pulseless.
    pub min_relative_rms: f64,
}

impl Default for CcfConfig {
    fn default() -> Self {
        Self {
            window_t_s: 2.0,
            max_lag_s: 0.5,
            hop_s: 0.25,
            thresh_sys: 0.10,
            thresh_dias: 0.90,
            sustain_dias_s: 0.0,
            median_span_s: 2.0,
            min_relative_rms: 1e-3,
        }
    }
}

impl CcfConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.window_t_s > 0.0 && self.hop_s > 0.0 && self.max_lag_s > 0.0) {
            return bad(format!(
                "window {} s, hop {} s, max lag {} s must be positive",
                self.window_t_s, self.hop_s, self.max_lag_s
            ));
        }
        if self.max_lag_s >= self.window_t_s / 2.0 {
            return bad(format!("max lag {} s not below half the window", self.max_lag_s));
        }
        let frac = |v: f64| v > 0.0 && v < 1.0;
        if !(frac(self.thresh_sys) && frac(self.thresh_dias) && self.thresh_sys < self.thresh_dias) {
            return bad(format!("thresholds {} / {}", self.thresh_sys, self.thresh_dias));
        }
        if !(self.sustain_dias_s >= 0.0 && self.median_span_s >= 0.0 && self.min_relative_rms >= 0.0) {
            return bad("sustain times and min_relative_rms must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcfCurve {
    pub lags_s: Vec<f64>,
    pub values: Vec<f64>,
}

impl CcfCurve {
    /// Largest value and its lag; the earliest lag wins ties.
    pub fn peak(&self) -> (f64, f64) {
        let mut best = (f64::NEG_INFINITY, 0.0);
        for (&v, &l) in self.values.iter().zip(&self.lags_s) {
            if v > best.0 {
                best = (v, l);
            }
        }
        best
    }

    pub fn at_zero_lag(&self) -> f64 {
        self.values[self.values.len() / 2]
    }
}

/// Normalized cross-correlation `b(tau)` of `s1(t)` against `s2(t - tau)`
/// over `window`, for every whole-sample lag within `max_lag_s`. At each
/// lag both overlapping stretches are mean-removed before the product sum.
pub fn normalized_ccf(s1: &SampledSignal, s2: &SampledSignal, window: &Window, max_lag_s: f64) -> Result<CcfCurve> {
    check_pair(s1, s2)?;
    let a = s1.slice(window)?;
    let b = s2.slice(window)?;
    let n = a.len().min(b.len());
    let max_lag = (max_lag_s * s1.sample_rate_hz() + 1e-9).floor() as usize;
    if n < 2 || max_lag + 2 > n {
        return Err(Error::InvalidWindow(format!(
            "{n} samples cannot support lags up to {max_lag}"
        )));
    }
    let (a, b) = (&a.samples()[..n], &b.samples()[..n]);
    if is_degenerate(a) || is_degenerate(b) {
        return Err(Error::DegenerateSegment);
    }
    Ok(ccf_samples(a, b, max_lag, s1.sample_rate_hz()))
}

fn check_pair(s1: &SampledSignal, s2: &SampledSignal) -> Result<()> {
    if s1.sample_rate_hz() != s2.sample_rate_hz() {
        return Err(Error::Alignment(format!(
            "sample rates differ: {} vs {} Hz",
            s1.sample_rate_hz(),
            s2.sample_rate_hz()
        )));
    }
    Ok(())
}

/// Variance below 1e-12 of the squared peak amplitude.
fn is_degenerate(x: &[f64]) -> bool {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut c = x.to_vec();
    center_in_place(&mut c);
    let var = c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64;
    peak == 0.0 || var < 1e-12 * peak * peak
}

fn ccf_samples(a: &[f64], b: &[f64], max_lag: usize, fs: f64) -> CcfCurve {
    let n = a.len();
    let m = max_lag as isize;
    let mut lags_s = Vec::with_capacity(2 * max_lag + 1);
    let mut values = Vec::with_capacity(2 * max_lag + 1);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for k in -m..=m {
        let (xs, ys) = if k >= 0 {
            (&a[k as usize..], &b[..n - k as usize])
        } else {
            (&a[..n - (-k) as usize], &b[(-k) as usize..])
        };
        x.clear();
        x.extend_from_slice(xs);
        y.clear();
        y.extend_from_slice(ys);
        center_in_place(&mut x);
        center_in_place(&mut y);
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (p, q) in x.iter().zip(&y) {
            sxy += p * q;
            sxx += p * p;
            syy += q * q;
        }
        let den = (sxx * syy).sqrt();
        lags_s.push(k as f64 / fs);
        values.push(if den > 0.0 { sxy / den } else { 0.0 });
    }
    CcfCurve { lags_s, values }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CcfTrack {
    pub times_s: Vec<f64>,
    pub peak_corr: Vec<f64>,
    pub peak_lag_s: Vec<f64>,
    /// Windows where the main channel carried no usable pulse.
    pub low_signal: Vec<bool>,
}

impl CcfTrack {
    pub fn len(&self) -> usize {
        self.times_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times_s.is_empty()
    }

    /// Table with header `time_s,peak_corr,peak_lag_s`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_s,peak_corr,peak_lag_s\n");
        for i in 0..self.len() {
            let _ = writeln!(out, "{},{},{}", self.times_s[i], self.peak_corr[i], self.peak_lag_s[i]);
        }
        out
    }
}

/// Slides a window of `cfg.window_t_s` over the deflation interval and
/// records the correlation peak of each window, time-stamped at its center.
pub fn correlation_track(
    main: &SampledSignal,
    reference: &SampledSignal,
    cuff: &CuffTrace,
    cfg: &CcfConfig,
) -> Result<CcfTrack> {
    cfg.validate()?;
    check_pair(main, reference)?;
    let t_start = cuff.deflation_start_s();
    let t_end = cuff.deflation_end_s();
    if t_end - t_start < 2.0 * cfg.window_t_s {
        return Err(Error::InsufficientData(format!(
            "deflation lasts {:.2} s, need two {} s windows",
            t_end - t_start,
            cfg.window_t_s
        )));
    }
    let fs = main.sample_rate_hz();
    let max_lag = (cfg.max_lag_s * fs + 1e-9).floor() as usize;
    let mut track = CcfTrack::default();
    for k in 0.. {
        let t0 = t_start + k as f64 * cfg.hop_s;
        if t0 + cfg.window_t_s > t_end + 1e-9 {
            break;
        }
        let w = Window::new(t0, cfg.window_t_s)?;
        let m = main.slice(&w)?;
        let r = reference.slice(&w)?;
        let n = m.len().min(r.len());
        let (ms, rs) = (&m.samples()[..n], &r.samples()[..n]);
        if is_degenerate(rs) {
            return Err(Error::DegenerateSegment);
        }
        let (corr, lag, low) = if is_degenerate(ms) || rms(ms) < cfg.min_relative_rms * rms(rs) {
            (0.0, 0.0, true)
        } else {
            let (c, l) = ccf_samples(ms, rs, max_lag, fs).peak();
            (c, l, false)
        };
        track.times_s.push(w.center_s());
        track.peak_corr.push(corr);
        track.peak_lag_s.push(lag);
        track.low_signal.push(low);
    }
    Ok(track)
}

fn rms(x: &[f64]) -> f64 {
    let mut c = x.to_vec();
    center_in_place(&mut c);
    (c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Oscillometric,
    Tacho,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quality {
    pub transient_excluded: bool,
    pub extrapolated: bool,
    pub low_signal: bool,
    /// Threshold crossings skipped because they did not hold.
    pub rejected_crossings: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BpResult {
    #[serde(rename = "sbp_mmHg")]
    pub sbp_mmhg: f64,
    #[serde(rename = "dbp_mmHg")]
    pub dbp_mmhg: f64,
    pub t_sys_s: f64,
    pub t_dias_s: f64,
    pub method: Method,
    pub quality: Quality,
}

impl BpResult {
    pub(crate) fn checked(self) -> Result<Self> {
        if !(self.sbp_mmhg > self.dbp_mmhg && self.dbp_mmhg > 0.0) {
            return Err(Error::InconsistentEstimate(format!(
                "sbp {:.2} / dbp {:.2} mmHg",
                self.sbp_mmhg, self.dbp_mmhg
            )));
        }
        if !(self.t_sys_s < self.t_dias_s) {
            return Err(Error::InconsistentEstimate(format!(
                "t_sys {:.3} s not before t_dias {:.3} s",
                self.t_sys_s, self.t_dias_s
            )));
        }
        Ok(self)
    }
}

/// First upward crossing of `th` at an index accepted by `after`, refined by linear
/// interpolation. The crossing must hold for `sustain_s` of track time,
/// which must be available; crossings that fall back are counted in
/// `rejected`.
fn sustained_crossing(
    times: &[f64],
    vals: &[f64],
    th: f64,
    sustain_s: f64,
    after: impl Fn(usize) -> bool,
    rejected: &mut u32,
) -> Option<f64> {
    let n = vals.len();
    for i in 1..n {
        if !after(i) || !(vals[i - 1] < th && th <= vals[i]) {
            continue;
        }
        let mut j = i;
        let mut held = true;
        while j < n && times[j] - times[i] < sustain_s {
            if vals[j] < th {
                held = false;
                break;
            }
            j += 1;
        }
        if !held || (j == n && times[n - 1] - times[i] < sustain_s) {
            *rejected += 1;
            continue;
        }
        let frac = (th - vals[i - 1]) / (vals[i] - vals[i - 1]);
        return Some(times[i - 1] + frac * (times[i] - times[i - 1]));
    }
    None
}

pub fn detect_bp_oscillometric(track: &CcfTrack, cuff: &CuffTrace, cfg: &CcfConfig) -> Result<BpResult> {
    cfg.validate()?;
    let t = &track.times_s;
    let half = (cfg.median_span_s / (2.0 * cfg.hop_s)).round() as usize;
    let smoothed = running_median(&track.peak_corr, half);
    let v = &smoothed;
    let first_low = v
        .iter()
        .position(|&c| c < cfg.thresh_sys)
        .ok_or(Error::NoOcclusionObserved)?;
    let mut rejected = 0;
    let t_dias = sustained_crossing(t, v, cfg.thresh_dias, cfg.sustain_dias_s, |i| i > first_low, &mut rejected)
        .ok_or(Error::NoRecoveryObserved)?;
    // Systolic onset: start of the unbroken run above thresh_sys that carries
    // the track into the diastolic crossing. Earlier excursions (motion
    // artifacts while the artery is still closed) do not count.
    let mut j = t.partition_point(|&x| x < t_dias).min(v.len() - 1);
    while j > first_low && v[j - 1] >= cfg.thresh_sys {
        j -= 1;
    }
    if j <= first_low {
        return Err(Error::NoRecoveryObserved);
    }
    rejected += (first_low + 1..j)
        .filter(|&i| v[i - 1] < cfg.thresh_sys && cfg.thresh_sys <= v[i])
        .count() as u32;
    let frac = (cfg.thresh_sys - v[j - 1]) / (v[j] - v[j - 1]);
    let t_sys = t[j - 1] + frac * (t[j] - t[j - 1]);
    BpResult {
        sbp_mmhg: cuff.pressure_at(t_sys)?,
        dbp_mmhg: cuff.pressure_at(t_dias)?,
        t_sys_s: t_sys,
        t_dias_s: t_dias,
        method: Method::Oscillometric,
        quality: Quality {
            transient_excluded: false,
            extrapolated: false,
            low_signal: track.low_signal.iter().any(|&l| l),
            rejected_crossings: rejected,
        },
    }
    .checked()
}

/// Centered running median over `2 * half + 1` points, shrinking
/// symmetrically at the ends.
fn running_median(xs: &[f64], half: usize) -> Vec<f64> {
    let n = xs.len();
    let mut buf = Vec::with_capacity(2 * half + 1);
    (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            buf.clear();
            buf.extend_from_slice(&xs[i - h..=i + h]);
            buf.sort_by(f64::total_cmp);
            buf[h]
        })
        .collect()
}

/// Track plus detection in one call.
pub fn estimate(main: &SampledSignal, reference: &SampledSignal, cuff: &CuffTrace, cfg: &CcfConfig) -> Result<BpResult> {
    let track = correlation_track(main, reference, cuff, cfg)?;
    detect_bp_oscillometric(&track, cuff, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Unit;
    use std::f64::consts::PI;

    fn sig(f: impl Fn(f64) -> f64, n: usize) -> SampledSignal {
        SampledSignal::from_fn(n, 100.0, 0.0, Unit::Millivolt, f).unwrap()
    }

    #[test]
    fn self_correlation_is_one() {
        let s = sig(|t| (2.0 * PI * 1.3 * t).sin() + 0.3 * (2.0 * PI * 3.1 * t).cos(), 400);
        let w = Window::new(0.5, 2.0).unwrap();
        let c = normalized_ccf(&s, &s, &w, 0.5).unwrap();
        assert!((c.at_zero_lag() - 1.0).abs() < 1e-12);
        assert_eq!(c.lags_s.len(), 101);
        assert!((c.lags_s[0] + c.lags_s[100]).abs() < 1e-12);
        assert!(c.values.iter().all(|v| v.abs() <= 1.0 + 1e-9));
    }

    #[test]
    fn sine_versus_cosine() {
        let s1 = sig(|t| (2.0 * PI * t).sin(), 600);
        let s2 = sig(|t| (2.0 * PI * t).cos(), 600);
        let w = Window::new(1.0, 4.0).unwrap();
        let c = normalized_ccf(&s1, &s2, &w, 0.4).unwrap();
        assert!(c.at_zero_lag().abs() < 0.02);
        // sin(t) = cos(t - quarter period): s1 lags s2 by 0.25 s
        let (peak, lag) = c.peak();
        assert!(peak > 0.99);
        assert!((lag - 0.25).abs() < 1e-9);
    }

    #[test]
    fn constant_channel_is_degenerate() {
        let s1 = sig(|t| t.sin(), 300);
        let s2 = sig(|_| 4.0, 300);
        let w = Window::new(0.0, 2.0).unwrap();
        assert!(matches!(normalized_ccf(&s1, &s2, &w, 0.5), Err(Error::DegenerateSegment)));
    }

    fn ramp_cuff() -> CuffTrace {
        let p = SampledSignal::from_fn(6001, 100.0, 0.0, Unit::MmHg, |t| 150.0 - 2.0 * t).unwrap();
        CuffTrace::new(p, 0.0, 50.0).unwrap()
    }

    #[test]
    fn linear_track_ramp_oracle() {
        let cuff = ramp_cuff();
        let times: Vec<f64> = (0..=200).map(|i| i as f64 * 0.25).collect();
        let track = CcfTrack {
            peak_corr: times.iter().map(|t| t / 50.0).collect(),
            peak_lag_s: vec![0.0; times.len()],
            low_signal: vec![false; times.len()],
            times_s: times,
        };
        let r = detect_bp_oscillometric(&track, &cuff, &CcfConfig::default()).unwrap();
        assert!((r.t_sys_s - 5.0).abs() < 1e-9);
        assert!((r.t_dias_s - 45.0).abs() < 1e-9);
        assert!((r.sbp_mmhg - 140.0).abs() < 1e-9);
        assert!((r.dbp_mmhg - 60.0).abs() < 1e-9);
    }

    #[test]
    fn flat_high_track_means_no_occlusion() {
        let cuff = ramp_cuff();
        let track = CcfTrack {
            times_s: (0..100).map(|i| i as f64 * 0.25).collect(),
            peak_corr: vec![1.0; 100],
            peak_lag_s: vec![0.0; 100],
            low_signal: vec![false; 100],
        };
        assert!(matches!(
            detect_bp_oscillometric(&track, &cuff, &CcfConfig::default()),
            Err(Error::NoOcclusionObserved)
        ));
    }

    #[test]
    fn early_excursions_are_skipped() {
        let cuff = ramp_cuff();
        let times: Vec<f64> = (0..=200).map(|i| i as f64 * 0.25).collect();
        let track_with = |lo: f64, hi: f64| {
            let corr = times
                .iter()
                .map(|&t| if (lo..hi).contains(&t) { 0.5 } else if t < 10.0 { 0.0 } else { 1.0 })
                .collect();
            CcfTrack {
                peak_corr: corr,
                peak_lag_s: vec![0.0; times.len()],
                low_signal: vec![false; times.len()],
                times_s: times.clone(),
            }
        };
        // a 1 s excursion is removed by the median
        let r = detect_bp_oscillometric(&track_with(2.0, 3.0), &cuff, &CcfConfig::default()).unwrap();
        assert!(r.t_sys_s > 9.7 && r.t_sys_s <= 10.0, "{}", r.t_sys_s);
        assert_eq!(r.quality.rejected_crossings, 0);
        // without the median, or when it is too long for it, it is skipped
        let raw = CcfConfig {
            median_span_s: 0.0,
            ..Default::default()
        };
        for (track, cfg) in [(track_with(2.0, 3.0), raw), (track_with(2.0, 6.0), CcfConfig::default())] {
            let r = detect_bp_oscillometric(&track, &cuff, &cfg).unwrap();
            assert!(r.t_sys_s > 9.7 && r.t_sys_s <= 10.0, "{}", r.t_sys_s);
            assert_eq!(r.quality.rejected_crossings, 1);
        }
    }

    #[test]
    fn median_keeps_monotone_edges() {
        let xs: Vec<f64> = (0..40).map(|i| (i as f64 / 4.0).min(5.0)).collect();
        assert_eq!(running_median(&xs, 4), xs);
        let mut spiky = xs.clone();
        spiky[30] = 100.0;
        spiky[25] = -3.0;
        assert_eq!(running_median(&spiky, 4), xs);
    }

    #[test]
    fn config_validation() {
        let bad_lag = CcfConfig {
            max_lag_s: 1.5,
            ..Default::default()
        };
        assert!(matches!(bad_lag.validate(), Err(Error::InvalidConfig(_))));
        let swapped = CcfConfig {
            thresh_sys: 0.9,
            thresh_dias: 0.1,
            ..Default::default()
        };
        assert!(swapped.validate().is_err());
    }
}
