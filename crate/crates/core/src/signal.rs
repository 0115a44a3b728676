//! Uniformly sampled signals, analysis windows and the cuff-pressure trace.
//!
//! [`SampledSignal`] carries every channel in the toolkit: PPG in millivolts,
//! cuff pressure in mmHg, correlation values as dimensionless numbers. All
//! operations return new values; nothing is mutated in place.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack, in sample periods, allowed when mapping times onto sample indices.
const INDEX_EPS: f64 = 1e-6;

/// Tolerance for time comparisons against a signal's span, in seconds.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "millivolt")]
    Millivolt,
    #[serde(rename = "mmHg")]
    MmHg,
    #[serde(rename = "dimensionless")]
    Dimensionless,
}

impl Unit {
    pub fn as_str(&self) -> &'static str {
        match self {
            Unit::Millivolt => "millivolt",
            Unit::MmHg => "mmHg",
            Unit::Dimensionless => "dimensionless",
        }
    }
}

impl std::fmt::Display for Unit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Frequency-dependent group delay of the filter a signal went through,
/// tabulated on an ascending frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayCurve {
    freqs_hz: Vec<f64>,
    delays_s: Vec<f64>,
}

impl DelayCurve {
    pub fn new(freqs_hz: Vec<f64>, delays_s: Vec<f64>) -> Self {
        assert_eq!(freqs_hz.len(), delays_s.len());
        assert!(!freqs_hz.is_empty());
        Self { freqs_hz, delays_s }
    }

    /// Delay at `freq_hz`, linearly interpolated and clamped at the grid ends.
    pub fn at(&self, freq_hz: f64) -> f64 {
        let f = &self.freqs_hz;
        if freq_hz <= f[0] {
            return self.delays_s[0];
        }
        let last = f.len() - 1;
        if freq_hz >= f[last] {
            return self.delays_s[last];
        }
        let i = f.partition_point(|&x| x <= freq_hz) - 1;
        let frac = (freq_hz - f[i]) / (f[i + 1] - f[i]);
        self.delays_s[i] + frac * (self.delays_s[i + 1] - self.delays_s[i])
    }
}

/// Processing history attached to a signal.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignalMeta {
    /// Samples before this time are inside a filter's startup transient.
    pub transient_end_s: Option<f64>,
    /// Group delay of the last filter applied.
    pub group_delay: Option<DelayCurve>,
    /// DC bias added before carrier modulation (removed again on demodulation).
    pub carrier_dc: Option<f64>,
    /// Set once a channel has been through the modulate/demodulate chain.
    pub frontend_pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    samples: Vec<f64>,
    sample_rate_hz: f64,
    start_time_s: f64,
    unit: Unit,
    meta: SignalMeta,
}

impl SampledSignal {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64, start_time_s: f64, unit: Unit) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::InvalidRate(sample_rate_hz));
        }
        if !start_time_s.is_finite() {
            return Err(Error::InvalidParams(format!("start time {start_time_s}")));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample(i));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            start_time_s,
            unit,
            meta: SignalMeta::default(),
        })
    }

    /// Builds a signal by evaluating `f` at each sample instant.
    pub fn from_fn(
        n: usize,
        sample_rate_hz: f64,
        start_time_s: f64,
        unit: Unit,
        f: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let samples = (0..n)
            .map(|i| f(start_time_s + i as f64 / sample_rate_hz))
            .collect();
        Self::new(samples, sample_rate_hz, start_time_s, unit)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn start_time_s(&self) -> f64 {
        self.start_time_s
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn meta(&self) -> &SignalMeta {
        &self.meta
    }

    pub fn with_meta(mut self, meta: SignalMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }

    pub fn time_at(&self, index: usize) -> f64 {
        self.start_time_s + index as f64 / self.sample_rate_hz
    }

    /// Time of the last sample.
    pub fn last_time_s(&self) -> f64 {
        self.time_at(self.len().saturating_sub(1))
    }

    /// Exclusive end of the span covered by the samples: `start + n / rate`.
    pub fn span_end_s(&self) -> f64 {
        self.time_at(self.len())
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate_hz
    }

    /// Replaces the samples, keeping rate, start, unit and metadata.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        let meta = self.meta.clone();
        Ok(Self::new(samples, self.sample_rate_hz, self.start_time_s, self.unit)?.with_meta(meta))
    }

    /// Index range `[i0, i1)` of the samples covered by `window`.
    pub fn window_indices(&self, window: &Window) -> Result<(usize, usize)> {
        let t1 = window.end_s();
        let span_end = self.span_end_s();
        if window.t0_s < self.start_time_s - TIME_EPS || t1 > span_end + TIME_EPS {
            return Err(Error::WindowOutOfRange {
                t0_s: window.t0_s,
                t1_s: t1,
                span_start_s: self.start_time_s,
                span_end_s: span_end,
            });
        }
        let x0 = (window.t0_s - self.start_time_s) * self.sample_rate_hz;
        let x1 = (t1 - self.start_time_s) * self.sample_rate_hz;
        let i0 = ((x0 - INDEX_EPS).ceil().max(0.0)) as usize;
        let i1 = ((x1 - INDEX_EPS).ceil().max(0.0) as usize).min(self.len());
        if i1 <= i0 {
            return Err(Error::InvalidWindow(format!(
                "window [{}, {}) s contains no samples",
                window.t0_s, t1
            )));
        }
        Ok((i0, i1))
    }

    /// Contiguous sub-signal covering `window`.
    pub fn slice(&self, window: &Window) -> Result<Self> {
        let (i0, i1) = self.window_indices(window)?;
        Ok(Self {
            samples: self.samples[i0..i1].to_vec(),
            sample_rate_hz: self.sample_rate_hz,
            start_time_s: self.time_at(i0),
            unit: self.unit,
            meta: self.meta.clone(),
        })
    }

    pub fn mean(&self) -> Result<f64> {
        mean(&self.samples).ok_or(Error::EmptySignal)
    }

    pub fn remove_mean(&self) -> Result<Self> {
        if self.is_empty() {
            return Err(Error::EmptySignal);
        }
        let mut out = self.clone();
        center_in_place(&mut out.samples);
        Ok(out)
    }

    /// Linear-interpolation resampling onto a grid at `new_rate_hz` starting
    /// at the same instant. Decimation assumes the caller already removed
    /// content above the new Nyquist frequency.
    pub fn resample(&self, new_rate_hz: f64) -> Result<Self> {
        if !(new_rate_hz.is_finite() && new_rate_hz > 0.0) {
            return Err(Error::InvalidRate(new_rate_hz));
        }
        if self.is_empty() {
            return Err(Error::EmptySignal);
        }
        if new_rate_hz == self.sample_rate_hz {
            return Ok(self.clone());
        }
        let last_offset = (self.len() - 1) as f64 / self.sample_rate_hz;
        let n_out = (last_offset * new_rate_hz + INDEX_EPS).floor() as usize + 1;
        let ratio = self.sample_rate_hz / new_rate_hz;
        let samples = (0..n_out).map(|k| lerp_index(&self.samples, k as f64 * ratio)).collect();
        Ok(Self {
            samples,
            sample_rate_hz: new_rate_hz,
            start_time_s: self.start_time_s,
            unit: self.unit,
            meta: self.meta.clone(),
        })
    }

    /// Linearly interpolated value at `t_s`; exact at sample instants.
    pub fn interpolate_at(&self, t_s: f64) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::EmptySignal);
        }
        let end = self.last_time_s();
        if !(t_s >= self.start_time_s - TIME_EPS && t_s <= end + TIME_EPS) {
            return Err(Error::TimeOutOfRange {
                t_s,
                start_s: self.start_time_s,
                end_s: end,
            });
        }
        let x = ((t_s - self.start_time_s) * self.sample_rate_hz).clamp(0.0, (self.len() - 1) as f64);
        Ok(lerp_index(&self.samples, x))
    }
}

/// Value at fractional index `x` (clamped to the last sample).
fn lerp_index(samples: &[f64], x: f64) -> f64 {
    let last = samples.len() - 1;
    let i = x.floor() as usize;
    if i >= last {
        return samples[last];
    }
    let frac = x - i as f64;
    if frac == 0.0 {
        return samples[i];
    }
    samples[i] + frac * (samples[i + 1] - samples[i])
}

pub(crate) fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    // second pass absorbs the rounding of the first
    let corr = xs.iter().map(|x| x - m).sum::<f64>() / n;
    Some(m + corr)
}

pub(crate) fn center_in_place(xs: &mut [f64]) {
    if let Some(m) = mean(xs) {
        xs.iter_mut().for_each(|x| *x -= m);
    }
}

/// Centered moving average over `span` samples; the window shrinks
/// symmetrically at the edges so linear trends pass through unchanged.
pub fn moving_average(xs: &[f64], span: usize) -> Vec<f64> {
    let n = xs.len();
    let half = span / 2;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for x in xs {
        prefix.push(prefix.last().unwrap() + x);
    }
    (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            (prefix[i + h + 1] - prefix[i - h]) / (2 * h + 1) as f64
        })
        .collect()
}

/// Analysis interval `[t0_s, t0_s + duration_s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub t0_s: f64,
    pub duration_s: f64,
}

impl Window {
    pub fn new(t0_s: f64, duration_s: f64) -> Result<Self> {
        if !(t0_s.is_finite() && duration_s.is_finite() && duration_s > 0.0) {
            return Err(Error::InvalidWindow(format!("t0 {t0_s} s, duration {duration_s} s")));
        }
        Ok(Self { t0_s, duration_s })
    }

    pub fn between(t0_s: f64, t1_s: f64) -> Result<Self> {
        Self::new(t0_s, t1_s - t0_s)
    }

    pub fn end_s(&self) -> f64 {
        self.t0_s + self.duration_s
    }

    pub fn center_s(&self) -> f64 {
        self.t0_s + 0.5 * self.duration_s
    }
}

/// Smoother span used by the deflation monotonicity check.
pub const DEFLATION_SMOOTHING_S: f64 = 1.0;
/// Allowed rise of the smoothed pressure during deflation.
pub const DEFLATION_TOLERANCE_MMHG: f64 = 0.5;

/// Cuff pressure over a measurement, with the monotone deflation segment
/// marked as the measurement window.
#[derive(Debug, Clone, PartialEq)]
pub struct CuffTrace {
    pressure: SampledSignal,
    deflation_start_s: f64,
    deflation_end_s: f64,
}

impl CuffTrace {
    pub fn new(pressure: SampledSignal, deflation_start_s: f64, deflation_end_s: f64) -> Result<Self> {
        if pressure.unit() != Unit::MmHg {
            return Err(Error::UnitMismatch {
                expected: Unit::MmHg.to_string(),
                found: pressure.unit().to_string(),
            });
        }
        if pressure.len() < 2 {
            return Err(Error::InsufficientData("cuff trace needs at least two samples".into()));
        }
        if !(deflation_start_s < deflation_end_s) {
            return Err(Error::InvalidDeflation(format!(
                "start {deflation_start_s} s is not before end {deflation_end_s} s"
            )));
        }
        if deflation_start_s < pressure.start_time_s() - TIME_EPS
            || deflation_end_s > pressure.last_time_s() + TIME_EPS
        {
            return Err(Error::InvalidDeflation(format!(
                "[{deflation_start_s}, {deflation_end_s}] s outside record [{}, {}] s",
                pressure.start_time_s(),
                pressure.last_time_s()
            )));
        }
        let trace = Self {
            pressure,
            deflation_start_s,
            deflation_end_s,
        };
        trace.check_monotone()?;
        Ok(trace)
    }

    /// Locates the deflation segment automatically: from the maximum of the
    /// smoothed pressure to the first point where it drops faster than
    /// `release_rate_mmhg_s` (valve release) or the end of the record.
    pub fn detect(pressure: SampledSignal, release_rate_mmhg_s: f64) -> Result<Self> {
        if pressure.len() < 2 {
            return Err(Error::InsufficientData("cuff trace needs at least two samples".into()));
        }
        let span = smoothing_span(pressure.sample_rate_hz());
        let smooth = moving_average(pressure.samples(), span);
        let (i_max, _) = smooth
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        // the maximum of a held plateau: take its last sample
        let mut i_start = i_max;
        while i_start + 1 < smooth.len() && smooth[i_start + 1] >= smooth[i_max] - 0.05 {
            i_start += 1;
        }
        let fs = pressure.sample_rate_hz();
        let mut i_end = smooth.len() - 1;
        for i in i_start + 1..smooth.len() {
            if (smooth[i - 1] - smooth[i]) * fs > release_rate_mmhg_s {
                i_end = i - 1;
                break;
            }
        }
        let (t0, t1) = (pressure.time_at(i_start), pressure.time_at(i_end));
        Self::new(pressure, t0, t1)
    }

    fn check_monotone(&self) -> Result<()> {
        let p = &self.pressure;
        let span = smoothing_span(p.sample_rate_hz());
        let smooth = moving_average(p.samples(), span);
        let (i0, i1) = p.window_indices(&Window::between(self.deflation_start_s, self.deflation_end_s)?)?;
        let mut running_min = f64::INFINITY;
        for (i, &v) in smooth.iter().enumerate().take(i1).skip(i0) {
            if v > running_min + DEFLATION_TOLERANCE_MMHG {
                return Err(Error::NonMonotoneDeflation {
                    t_s: p.time_at(i),
                    excess_mmhg: v - running_min,
                });
            }
            running_min = running_min.min(v);
        }
        Ok(())
    }

    pub fn pressure(&self) -> &SampledSignal {
        &self.pressure
    }

    pub fn deflation_start_s(&self) -> f64 {
        self.deflation_start_s
    }

    pub fn deflation_end_s(&self) -> f64 {
        self.deflation_end_s
    }

    pub fn deflation_window(&self) -> Window {
        Window {
            t0_s: self.deflation_start_s,
            duration_s: self.deflation_end_s - self.deflation_start_s,
        }
    }

    pub fn pressure_at(&self, t_s: f64) -> Result<f64> {
        self.pressure.interpolate_at(t_s)
    }

    /// Mean deflation rate in mmHg/s (positive while pressure falls), from a
    /// least-squares line through the deflation segment.
    pub fn deflation_rate(&self) -> Result<f64> {
        let (i0, i1) = self.pressure.window_indices(&self.deflation_window())?;
        let ts: Vec<f64> = (i0..i1).map(|i| self.pressure.time_at(i)).collect();
        let ps = &self.pressure.samples()[i0..i1];
        let tm = mean(&ts).ok_or(Error::EmptySignal)?;
        let pm = mean(ps).ok_or(Error::EmptySignal)?;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (t, p) in ts.iter().zip(ps) {
            sxy += (t - tm) * (p - pm);
            sxx += (t - tm) * (t - tm);
        }
        Ok(-sxy / sxx)
    }
}

fn smoothing_span(sample_rate_hz: f64) -> usize {
    ((DEFLATION_SMOOTHING_S * sample_rate_hz).round() as usize).max(1)
}
