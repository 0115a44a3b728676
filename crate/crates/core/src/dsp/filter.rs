//! IIR filter design as cascaded second-order sections.
//!
//! Band-pass filters are Chebyshev type II: flat passband, equiripple
//! stopband. The analog prototype is built from its poles and zeros, mapped
//! low-pass to band-pass, then to the z-plane with a prewarped bilinear
//! transform. Every design is checked against its spec by a frequency sweep
//! before it is returned.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{DelayCurve, SampledSignal, SignalMeta};

/// Default cap on the total filter order (twice the prototype order for a
/// band-pass), i.e. eight biquads.
pub const DEFAULT_MAX_ORDER: usize = 16;

/// Extra stopband attenuation designed in so the verified response clears
/// the spec rather than touching it.
const ATTEN_MARGIN_DB: f64 = 3.0;

/// Impulse-response level, relative to its peak, that defines settling.
const SETTLE_LEVEL: f64 = 1e-6;

const DELAY_GRID_POINTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandpassSpec {
    pub pass_lo_hz: f64,
    pub pass_hi_hz: f64,
    pub stop_lo_hz: f64,
    pub stop_hi_hz: f64,
    pub passband_ripple_db: f64,
    pub stopband_atten_db: f64,
}

impl BandpassSpec {
    /// The cuff-oscillation filter: 0.5-2 Hz passband, 80 dB outside 0.1 / 5 Hz.
    pub fn oscillation() -> Self {
        Self {
            pass_lo_hz: 0.5,
            pass_hi_hz: 2.0,
            stop_lo_hz: 0.1,
            stop_hi_hz: 5.0,
            passband_ripple_db: 1.0,
            stopband_atten_db: 80.0,
        }
    }

    fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        let s = self;
        let ordered = 0.0 < s.stop_lo_hz
            && s.stop_lo_hz < s.pass_lo_hz
            && s.pass_lo_hz < s.pass_hi_hz
            && s.pass_hi_hz < s.stop_hi_hz;
        if !ordered {
            return Err(Error::UnrealizableSpec(format!(
                "edges must satisfy 0 < stop_lo < pass_lo < pass_hi < stop_hi, got {} / {} / {} / {} Hz",
                s.stop_lo_hz, s.pass_lo_hz, s.pass_hi_hz, s.stop_hi_hz
            )));
        }
        if s.stop_hi_hz >= sample_rate_hz / 2.0 {
            return Err(Error::UnrealizableSpec(format!(
                "stop_hi {} Hz at or above Nyquist {} Hz",
                s.stop_hi_hz,
                sample_rate_hz / 2.0
            )));
        }
        if !(s.passband_ripple_db > 0.0 && s.stopband_atten_db >= 0.0) {
            return Err(Error::UnrealizableSpec(format!(
                "ripple {} dB / attenuation {} dB",
                s.passband_ripple_db, s.stopband_atten_db
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterKind {
    Bandpass(BandpassSpec),
    Lowpass2 { cutoff_hz: f64 },
}

/// One second-order section, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, zinv: Complex64) -> Complex64 {
        let z2 = zinv * zinv;
        (self.b[0] + zinv * self.b[1] + z2 * self.b[2]) / (self.a[0] + zinv * self.a[1] + z2 * self.a[2])
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (self.a[0] + self.a[1] + self.a[2])
    }
}

/// An immutable filter design. Applying it never mutates the design; each
/// call runs on fresh state, so one realization can serve many threads.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterRealization {
    sections: Vec<Biquad>,
    sample_rate_hz: f64,
    kind: FilterKind,
    settling_time_s: f64,
    group_delay_s: f64,
    delay_curve: DelayCurve,
}

impl FilterRealization {
    fn new(sections: Vec<Biquad>, sample_rate_hz: f64, kind: FilterKind) -> Result<Self> {
        let mut f = Self {
            sections,
            sample_rate_hz,
            kind,
            settling_time_s: 0.0,
            group_delay_s: 0.0,
            delay_curve: DelayCurve::new(vec![0.0], vec![0.0]),
        };
        f.settling_time_s = f.measure_settling()?;
        let (lo, hi, nominal) = match kind {
            FilterKind::Bandpass(s) => (s.pass_lo_hz, s.pass_hi_hz, (s.pass_lo_hz * s.pass_hi_hz).sqrt()),
            FilterKind::Lowpass2 { cutoff_hz } => (0.0, cutoff_hz, 0.0),
        };
        let freqs: Vec<f64> = (0..DELAY_GRID_POINTS)
            .map(|i| lo + (hi - lo) * i as f64 / (DELAY_GRID_POINTS - 1) as f64)
            .collect();
        let delays = freqs.iter().map(|&fr| f.group_delay_at(fr)).collect();
        f.delay_curve = DelayCurve::new(freqs, delays);
        f.group_delay_s = f.group_delay_at(nominal);
        Ok(f)
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    pub fn order(&self) -> usize {
        self.sections
            .iter()
            .map(|s| if s.a[2] != 0.0 { 2 } else { 1 })
            .sum()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn kind(&self) -> FilterKind {
        self.kind
    }

    /// Time for the impulse response to fall below 1e-6 of its peak for good.
    pub fn settling_time_s(&self) -> f64 {
        self.settling_time_s
    }

    /// Group delay at the passband geometric center (band-pass) or at DC
    /// (low-pass). The delay is not constant; see [`Self::group_delay_at`].
    pub fn group_delay_s(&self) -> f64 {
        self.group_delay_s
    }

    pub fn delay_curve(&self) -> &DelayCurve {
        &self.delay_curve
    }

    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / self.sample_rate_hz;
        let zinv = Complex64::from_polar(1.0, -w);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(zinv))
    }

    pub fn gain_db(&self, freq_hz: f64) -> f64 {
        20.0 * self.response(freq_hz).norm().log10()
    }

    pub fn phase_deg(&self, freq_hz: f64) -> f64 {
        self.response(freq_hz).arg().to_degrees()
    }

    /// Group delay from a central difference of the phase.
    pub fn group_delay_at(&self, freq_hz: f64) -> f64 {
        let df = 1e-6 * self.sample_rate_hz;
        let ratio = self.response(freq_hz + df) / self.response(freq_hz - df);
        -ratio.arg() / (2.0 * PI * 2.0 * df)
    }

    pub fn dc_gain(&self) -> f64 {
        self.sections.iter().map(Biquad::dc_gain).product()
    }

    /// Frequency response table with header `freq_hz,gain_db,phase_deg`.
    pub fn response_csv(&self, freqs_hz: &[f64]) -> String {
        let mut out = String::from("freq_hz,gain_db,phase_deg\n");
        for &f in freqs_hz {
            let _ = writeln!(out, "{},{},{}", f, self.gain_db(f), self.phase_deg(f));
        }
        out
    }

    /// Filters from rest (zero initial state).
    pub fn apply(&self, signal: &SampledSignal) -> Result<SampledSignal> {
        self.run(signal, FilterState::new(self))
    }

    /// Filters as if the first sample had been held forever, which removes
    /// the step transient a signal with a large offset would otherwise cause.
    pub fn apply_steady(&self, signal: &SampledSignal) -> Result<SampledSignal> {
        let first = signal.samples().first().copied().unwrap_or(0.0);
        self.run(signal, FilterState::steady(self, first))
    }

    fn run(&self, signal: &SampledSignal, mut state: FilterState) -> Result<SampledSignal> {
        self.check_rate(signal)?;
        let out = signal.samples().iter().map(|&x| state.process(x)).collect();
        let meta = SignalMeta {
            transient_end_s: Some(signal.start_time_s() + self.settling_time_s),
            group_delay: Some(self.delay_curve.clone()),
            ..signal.meta().clone()
        };
        Ok(signal.with_samples(out)?.with_meta(meta))
    }

    fn check_rate(&self, signal: &SampledSignal) -> Result<()> {
        let rel = (signal.sample_rate_hz() - self.sample_rate_hz).abs() / self.sample_rate_hz;
        if rel > 1e-9 {
            return Err(Error::RateMismatch {
                signal_hz: signal.sample_rate_hz(),
                filter_hz: self.sample_rate_hz,
            });
        }
        Ok(())
    }

    /// True when the response meets the band-pass spec on a dense grid.
    pub fn meets_spec(&self, spec: &BandpassSpec) -> bool {
        let nyq = self.sample_rate_hz / 2.0;
        let pass = (0..=200).map(|i| spec.pass_lo_hz + (spec.pass_hi_hz - spec.pass_lo_hz) * i as f64 / 200.0);
        let pass_ok = pass.into_iter().all(|f| {
            let g = self.gain_db(f);
            g >= -spec.passband_ripple_db && g <= 1e-6
        });
        let lower = log_grid(spec.stop_lo_hz * 1e-3, spec.stop_lo_hz, 200);
        let upper = log_grid(spec.stop_hi_hz, nyq * 0.9999, 400);
        let stop_ok = lower
            .iter()
            .chain(upper.iter())
            .all(|&f| self.gain_db(f) <= -spec.stopband_atten_db);
        pass_ok && stop_ok
    }

    fn measure_settling(&self) -> Result<f64> {
        let r_max = self
            .sections
            .iter()
            .map(|s| pole_radius(s.a[1], s.a[2]))
            .fold(0.0, f64::max);
        if r_max >= 1.0 {
            return Err(Error::UnrealizableSpec(format!("unstable design, pole radius {r_max}")));
        }
        // long enough for a double pole at r_max to decay far below 1e-9
        let horizon = ((3.0 * (1e-12f64).ln() / r_max.max(1e-3).ln()).ceil() as usize).clamp(64, 1 << 22);
        let mut state = FilterState::new(self);
        let h: Vec<f64> = (0..horizon)
            .map(|i| state.process(if i == 0 { 1.0 } else { 0.0 }).abs())
            .collect();
        let peak = h.iter().cloned().fold(0.0, f64::max);
        let last_above = h.iter().rposition(|&v| v >= SETTLE_LEVEL * peak).unwrap_or(0);
        let tail = h.iter().rposition(|&v| v >= 1e-9 * peak).unwrap_or(0);
        if tail + 1 >= horizon {
            return Err(Error::UnrealizableSpec("impulse response does not decay".into()));
        }
        Ok((last_above + 1) as f64 / self.sample_rate_hz)
    }
}

fn pole_radius(a1: f64, a2: f64) -> f64 {
    let disc = a1 * a1 - 4.0 * a2;
    if disc < 0.0 {
        a2.sqrt()
    } else {
        let r = disc.sqrt();
        ((-a1 + r) / 2.0).abs().max(((-a1 - r) / 2.0).abs())
    }
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (l0, l1) = (lo.ln(), hi.ln());
    (0..n).map(|i| (l0 + (l1 - l0) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Streaming state for a realization (direct form II transposed).
#[derive(Debug, Clone)]
pub struct FilterState {
    sections: Vec<Biquad>,
    z: Vec<[f64; 2]>,
}

impl FilterState {
    pub fn new(filter: &FilterRealization) -> Self {
        Self {
            sections: filter.sections.clone(),
            z: vec![[0.0; 2]; filter.sections.len()],
        }
    }

    /// State reached after an infinitely long constant input `x0`.
    pub fn steady(filter: &FilterRealization, x0: f64) -> Self {
        let mut st = Self::new(filter);
        let mut x = x0;
        for (s, z) in st.sections.iter().zip(st.z.iter_mut()) {
            let y = s.dc_gain() * x;
            z[1] = s.b[2] * x - s.a[2] * y;
            z[0] = s.b[1] * x - s.a[1] * y + z[1];
            x = y;
        }
        st
    }

    pub fn process(&mut self, x: f64) -> f64 {
        let mut v = x;
        for (s, z) in self.sections.iter().zip(self.z.iter_mut()) {
            let y = s.b[0] * v + z[0];
            z[0] = s.b[1] * v - s.a[1] * y + z[1];
            z[1] = s.b[2] * v - s.a[2] * y;
            v = y;
        }
        v
    }
}

pub fn apply_filter(filter: &FilterRealization, signal: &SampledSignal) -> Result<SampledSignal> {
    filter.apply(signal)
}

/// Second-order Butterworth low-pass, bilinear with the cutoff prewarped so
/// the digital response is exactly -3 dB there.
pub fn design_lowpass2(cutoff_hz: f64, sample_rate_hz: f64) -> Result<FilterRealization> {
    if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
        return Err(Error::InvalidRate(sample_rate_hz));
    }
    if !(cutoff_hz > 0.0 && cutoff_hz < sample_rate_hz / 2.0) {
        return Err(Error::InvalidCutoff {
            cutoff_hz,
            sample_rate_hz,
        });
    }
    let k = (PI * cutoff_hz / sample_rate_hz).tan();
    let q = std::f64::consts::SQRT_2;
    let norm = 1.0 / (1.0 + q * k + k * k);
    let b0 = k * k * norm;
    let section = Biquad {
        b: [b0, 2.0 * b0, b0],
        a: [1.0, 2.0 * (k * k - 1.0) * norm, (1.0 - q * k + k * k) * norm],
    };
    FilterRealization::new(vec![section], sample_rate_hz, FilterKind::Lowpass2 { cutoff_hz })
}

pub fn design_bandpass(spec: &BandpassSpec, sample_rate_hz: f64) -> Result<FilterRealization> {
    design_bandpass_capped(spec, sample_rate_hz, DEFAULT_MAX_ORDER)
}

/// Chebyshev-II band-pass of the lowest order that passes the spec sweep.
pub fn design_bandpass_capped(spec: &BandpassSpec, sample_rate_hz: f64, max_order: usize) -> Result<FilterRealization> {
    if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
        return Err(Error::InvalidRate(sample_rate_hz));
    }
    spec.validate(sample_rate_hz)?;
    let warp = |f: f64| 2.0 * sample_rate_hz * (PI * f / sample_rate_hz).tan();
    let (wp1, wp2) = (warp(spec.pass_lo_hz), warp(spec.pass_hi_hz));
    let (ws1, ws2) = (warp(spec.stop_lo_hz), warp(spec.stop_hi_hz));
    let w0sq = wp1 * wp2;
    let bw = wp2 - wp1;
    let edge = |ws: f64| (ws * ws - w0sq).abs() / (bw * ws);
    let wsn = edge(ws1).min(edge(ws2));

    let atten = spec.stopband_atten_db + ATTEN_MARGIN_DB;
    let d = ((10f64.powf(atten / 10.0) - 1.0) / (10f64.powf(spec.passband_ripple_db / 10.0) - 1.0)).sqrt();
    let n_min = ((d.acosh() / wsn.acosh()).ceil() as usize).max(1);

    // odd prototype orders put an exact transmission zero at DC, so a large
    // pressure baseline cannot leak through at the stopband level
    let mut n = n_min | 1;
    while 2 * n <= max_order {
        let sections = cheby2_sections(n, atten, wsn, w0sq, bw, sample_rate_hz)?;
        let f = FilterRealization::new(sections, sample_rate_hz, FilterKind::Bandpass(*spec))?;
        if f.meets_spec(spec) {
            return Ok(f);
        }
        n += 2;
    }
    Err(Error::UnrealizableSpec(format!(
        "needs order {} or more, cap is {max_order}",
        2 * (n_min | 1)
    )))
}

fn cheby2_sections(n: usize, atten_db: f64, wsn: f64, w0sq: f64, bw: f64, fs: f64) -> Result<Vec<Biquad>> {
    // analog low-pass prototype, stopband edge at wsn
    let eps = 1.0 / (10f64.powf(atten_db / 10.0) - 1.0).sqrt();
    let mu = (1.0 / eps).asinh() / n as f64;
    let mut lp_poles = Vec::with_capacity(n);
    let mut lp_zeros = Vec::with_capacity(n);
    for k in 0..n {
        let theta = PI * (2 * k + 1) as f64 / (2 * n) as f64;
        let p1 = Complex64::new(-mu.sinh() * theta.sin(), mu.cosh() * theta.cos());
        lp_poles.push(wsn / p1);
        if theta.cos().abs() > 1e-12 {
            lp_zeros.push(Complex64::new(0.0, wsn / theta.cos()));
        }
    }
    let n_inf = n - lp_zeros.len();

    let to_bp = |r: Complex64| {
        let rb = r * bw;
        let disc = (rb * rb - 4.0 * w0sq).sqrt();
        [(rb + disc) / 2.0, (rb - disc) / 2.0]
    };
    let bilinear = |s: Complex64| (2.0 * fs + s) / (2.0 * fs - s);

    let digital = |roots: Vec<Complex64>| -> Vec<Complex64> { roots.into_iter().flat_map(to_bp).map(bilinear).collect() };
    let mut zeros = digital(lp_zeros);
    // zeros at infinity land on s = 0 and s = infinity, i.e. z = 1 and z = -1
    for _ in 0..n_inf {
        zeros.push(Complex64::new(1.0, 0.0));
        zeros.push(Complex64::new(-1.0, 0.0));
    }
    let mut poles = quadratics(digital(lp_poles))?;
    let mut nums = quadratics(zeros)?;
    if poles.len() != n || nums.len() != n {
        return Err(Error::UnrealizableSpec("unpaired roots in band-pass transform".into()));
    }

    poles.sort_by(|a, b| b.radius().total_cmp(&a.radius()));
    let wc = 2.0 * (w0sq.sqrt() / (2.0 * fs)).atan();
    let zc = Complex64::from_polar(1.0, -wc);
    let mut sections = Vec::with_capacity(n);
    for p in poles {
        let target = p.roots[0];
        let (idx, _) = nums
            .iter()
            .enumerate()
            .map(|(i, q)| (i, q.distance(target)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("one numerator per pole pair");
        let mut s = Biquad {
            b: nums.remove(idx).coeffs,
            a: p.coeffs,
        };
        let g = s.response(zc).norm();
        s.b.iter_mut().for_each(|v| *v /= g);
        sections.push(s);
    }
    // least resonant first
    sections.reverse();
    Ok(sections)
}

/// A real quadratic `1 + c1 z^-1 + c2 z^-2` and its two roots, the first
/// being the one of larger magnitude.
struct Quad {
    coeffs: [f64; 3],
    roots: [Complex64; 2],
}

impl Quad {
    fn radius(&self) -> f64 {
        self.roots[0].norm()
    }

    fn distance(&self, z: Complex64) -> f64 {
        (self.roots[0] - z).norm().min((self.roots[1] - z).norm())
    }
}

/// Groups roots into real quadratics: conjugate pairs, then the real roots
/// two at a time in sorted order.
fn quadratics(roots: Vec<Complex64>) -> Result<Vec<Quad>> {
    let is_real = |z: &Complex64| z.im.abs() <= 1e-9 * z.norm().max(1.0);
    let mut reals: Vec<f64> = roots.iter().filter(|z| is_real(z)).map(|z| z.re).collect();
    let upper: Vec<Complex64> = roots.iter().filter(|z| !is_real(z) && z.im > 0.0).copied().collect();
    if !reals.len().is_multiple_of(2) || 2 * upper.len() + reals.len() != roots.len() {
        return Err(Error::UnrealizableSpec("roots do not form conjugate pairs".into()));
    }
    reals.sort_by(f64::total_cmp);
    let mut out: Vec<Quad> = upper
        .into_iter()
        .map(|z| Quad {
            coeffs: [1.0, -2.0 * z.re, z.norm_sqr()],
            roots: [z, z.conj()],
        })
        .collect();
    for pair in reals.chunks(2) {
        let (r1, r2) = if pair[0].abs() >= pair[1].abs() {
            (pair[0], pair[1])
        } else {
            (pair[1], pair[0])
        };
        out.push(Quad {
            coeffs: [1.0, -(r1 + r2), r1 * r2],
            roots: [Complex64::new(r1, 0.0), Complex64::new(r2, 0.0)],
        });
    }
    Ok(out)
}
