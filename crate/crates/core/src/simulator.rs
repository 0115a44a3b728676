//! Synthetic three-channel measurements with known blood pressure.
//!
//! A record holds a reference PPG from a free limb, a main PPG distal to the
//! cuff and the cuff pressure itself, sampled at 100 Hz. The cuff is held
//! above systolic pressure, deflated linearly and released. The main channel
//! follows the occlusion model: no pulse above SBP, a weak, delayed and
//! reshaped pulse between SBP and DBP, and a scaled copy of the reference
//! below DBP. The cuff carries pulse-synchronous oscillations whose
//! amplitude is a bell over cuff pressure peaking at MAP, with a small tail
//! above SBP. Korotkoff markers are the times the cuff passes SBP and DBP.

use std::f64::consts::PI;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsp::{modulate_carrier, synchronous_demodulate, CARRIER_HZ, CARRIER_RATE_HZ};
use crate::error::{Error, Result};
use crate::signal::{CuffTrace, SampledSignal, Unit};

pub const SAMPLE_RATE_HZ: f64 = 100.0;

/// Pulse harmonics are kept up to this frequency.
const PULSE_BAND_HZ: f64 = 5.0;
/// Upper edge of the distortion component's band.
const DISTORTION_BAND_HZ: f64 = 14.0;
const TEMPLATE_POINTS: usize = 1024;
const SHAPE_GRID: usize = 2048;
const NORM_TABLE: usize = 65;

/// Correlation left between the distorted and clean pulse just below SBP.
const RHO_MIN: f64 = 0.25;
const RHO_EXPONENT: f64 = 0.35;

const SPIKE_S: f64 = 0.3;
const WANDER_HZ: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectParams {
    #[serde(rename = "sbp_mmHg")]
    pub sbp_mmhg: f64,
    #[serde(rename = "dbp_mmHg")]
    pub dbp_mmhg: f64,
    pub heart_rate_bpm: f64,
    #[serde(default = "default_ppg_amp")]
    pub ppg_amp: f64,
    #[serde(default = "default_transit_delay")]
    pub transit_delay_max_s: f64,
}

fn default_ppg_amp() -> f64 {
    1.0
}

fn default_transit_delay() -> f64 {
    0.1
}

impl SubjectParams {
    pub fn new(sbp_mmhg: f64, dbp_mmhg: f64, heart_rate_bpm: f64) -> Self {
        Self {
            sbp_mmhg,
            dbp_mmhg,
            heart_rate_bpm,
            ppg_amp: default_ppg_amp(),
            transit_delay_max_s: default_transit_delay(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (s, d) = (self.sbp_mmhg, self.dbp_mmhg);
        if !(40.0 <= d && d < s && s <= 250.0) {
            return Err(Error::InvalidPressurePair { sbp: s, dbp: d });
        }
        if !(30.0..=200.0).contains(&self.heart_rate_bpm) {
            return Err(Error::InvalidParams(format!("heart rate {} bpm", self.heart_rate_bpm)));
        }
        if !(self.ppg_amp > 0.0 && self.ppg_amp.is_finite()) {
            return Err(Error::InvalidParams(format!("ppg_amp {}", self.ppg_amp)));
        }
        if !(0.0..0.5).contains(&self.transit_delay_max_s) {
            return Err(Error::InvalidParams(format!(
                "transit delay {} s",
                self.transit_delay_max_s
            )));
        }
        Ok(())
    }

    pub fn map_mmhg(&self) -> f64 {
        self.dbp_mmhg + (self.sbp_mmhg - self.dbp_mmhg) / 3.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolParams {
    #[serde(rename = "inflate_to_mmHg")]
    pub inflate_to_mmhg: f64,
    #[serde(rename = "deflation_rate_mmHg_per_s")]
    pub deflation_rate_mmhg_per_s: f64,
    pub pre_deflation_hold_s: f64,
    pub post_deflation_s: f64,
    /// Pressure at which the slow deflation ends and the valve opens.
    #[serde(rename = "deflate_to_mmHg")]
    pub deflate_to_mmhg: f64,
    #[serde(rename = "release_rate_mmHg_per_s")]
    pub release_rate_mmhg_per_s: f64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            inflate_to_mmhg: 160.0,
            deflation_rate_mmhg_per_s: 2.0,
            pre_deflation_hold_s: 3.0,
            post_deflation_s: 5.0,
            deflate_to_mmhg: 30.0,
            release_rate_mmhg_per_s: 50.0,
        }
    }
}

/// How far above the subject's SBP an automatic inflation goes.
pub const SUPRA_SYSTOLIC_MARGIN_MMHG: f64 = 30.0;

impl ProtocolParams {
    /// The same protocol with the inflation target raised, if needed, to
    /// SBP + 30 mmHg, as an automatic device would inflate.
    pub fn fitted_to(&self, subject: &SubjectParams) -> Self {
        Self {
            inflate_to_mmhg: self
                .inflate_to_mmhg
                .max(subject.sbp_mmhg + SUPRA_SYSTOLIC_MARGIN_MMHG),
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.inflate_to_mmhg,
            self.deflation_rate_mmhg_per_s,
            self.release_rate_mmhg_per_s,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidParams("protocol pressures and rates must be positive".into()));
        }
        if !(self.pre_deflation_hold_s >= 0.0 && self.post_deflation_s >= 0.0 && self.deflate_to_mmhg >= 0.0) {
            return Err(Error::InvalidParams("protocol durations must be non-negative".into()));
        }
        Ok(())
    }

    fn check_subject(&self, subject: &SubjectParams) -> Result<()> {
        if self.inflate_to_mmhg <= subject.sbp_mmhg + 10.0 {
            return Err(Error::ProtocolViolation(format!(
                "inflation to {} mmHg does not exceed SBP {} + 10 mmHg",
                self.inflate_to_mmhg, subject.sbp_mmhg
            )));
        }
        if self.deflate_to_mmhg > subject.dbp_mmhg - 10.0 {
            return Err(Error::ProtocolViolation(format!(
                "deflation stops at {} mmHg, not 10 mmHg below DBP {}",
                self.deflate_to_mmhg, subject.dbp_mmhg
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    #[default]
    None,
    MotionSpike,
    BaselineWander,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Affects {
    #[default]
    MainOnly,
    BothInPhase,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ArtifactSpec {
    pub kind: ArtifactKind,
    pub rate_per_min: f64,
    /// Relative to `ppg_amp` on the PPG channels and to the oscillation peak
    /// on the cuff.
    pub magnitude: f64,
    pub affects: Affects,
}

impl ArtifactSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn motion_spikes(rate_per_min: f64, magnitude: f64, affects: Affects) -> Self {
        Self {
            kind: ArtifactKind::MotionSpike,
            rate_per_min,
            magnitude,
            affects,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate_per_min >= 0.0 && self.magnitude >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "artifact rate {} / magnitude {}",
                self.rate_per_min, self.magnitude
            )));
        }
        Ok(())
    }
}

/// `none`, or `kind:affects:rate_per_min:magnitude`, e.g.
/// `motion_spike:main_only:6:1.0`.
impl FromStr for ArtifactSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "none" {
            return Ok(Self::none());
        }
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::InvalidConfig(format!("artifact spec `{s}`, expected kind:affects:rate:magnitude"));
        if parts.len() != 4 {
            return Err(bad());
        }
        let kind = match parts[0] {
            "none" => ArtifactKind::None,
            "motion_spike" => ArtifactKind::MotionSpike,
            "baseline_wander" => ArtifactKind::BaselineWander,
            _ => return Err(bad()),
        };
        let affects = match parts[1] {
            "main_only" => Affects::MainOnly,
            "both_in_phase" => Affects::BothInPhase,
            _ => return Err(bad()),
        };
        let spec = Self {
            kind,
            affects,
            rate_per_min: parts[2].parse().map_err(|_| bad())?,
            magnitude: parts[3].parse().map_err(|_| bad())?,
        };
        spec.validate().map_err(|_| bad())?;
        Ok(spec)
    }
}

/// Shape of the cuff oscillation bell over cuff pressure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OscillationParams {
    /// Peak-to-peak oscillation at MAP.
    #[serde(rename = "peak_mmHg")]
    pub peak_mmhg: f64,
    /// Fraction of the peak left at SBP.
    pub at_sbp: f64,
    /// Fraction of the peak left at DBP.
    pub at_dbp: f64,
    /// e-folding pressure of the tail above SBP.
    #[serde(rename = "tail_decay_mmHg")]
    pub tail_decay_mmhg: f64,
}

impl Default for OscillationParams {
    fn default() -> Self {
        Self {
            peak_mmhg: 2.0,
            at_sbp: 0.15,
            at_dbp: 0.85,
            tail_decay_mmhg: 8.0,
        }
    }
}

fn vm(phase: f64, center: f64, kappa: f64) -> f64 {
    (kappa * ((2.0 * PI * (phase - center)).cos() - 1.0)).exp()
}

fn pulse_template(phase: f64) -> f64 {
    vm(phase, 0.20, 4.0) + 0.45 * vm(phase, 0.47, 3.0)
}

/// Narrow spike used as the source of the distortion component.
fn distortion_template(phase: f64) -> f64 {
    vm(phase, 0.17, 60.0)
}

/// Fourier coefficients of `template` for the harmonics `k` with
/// `lo < k f0 <= hi`.
fn harmonics(template: fn(f64) -> f64, f0: f64, lo: f64, hi: f64) -> Vec<(u32, Complex64)> {
    let samples: Vec<f64> = (0..TEMPLATE_POINTS)
        .map(|j| template(j as f64 / TEMPLATE_POINTS as f64))
        .collect();
    let mut out = Vec::new();
    let mut k = 1u32;
    while k as f64 * f0 <= hi + 1e-9 {
        if k as f64 * f0 > lo + 1e-9 {
            let c: Complex64 = samples
                .iter()
                .enumerate()
                .map(|(j, &v)| v * Complex64::from_polar(1.0, -2.0 * PI * (k as f64) * j as f64 / TEMPLATE_POINTS as f64))
                .sum();
            out.push((k, c / TEMPLATE_POINTS as f64));
        }
        k += 1;
    }
    out
}

fn eval_series(coeffs: &[(u32, Complex64)], phase: f64) -> f64 {
    let step = Complex64::from_polar(1.0, 2.0 * PI * phase);
    let mut rot = Complex64::new(1.0, 0.0);
    let mut k_now = 0;
    let mut acc = 0.0;
    for &(k, c) in coeffs {
        while k_now < k {
            rot *= step;
            k_now += 1;
        }
        acc += 2.0 * (c * rot).re;
    }
    acc
}

fn series_rms(coeffs: &[(u32, Complex64)]) -> f64 {
    (2.0 * coeffs.iter().map(|(_, c)| c.norm_sqr()).sum::<f64>()).sqrt()
}

/// Pulse waveform and distortion component for one heart rate.
///
/// The pulse is a fast systolic wave plus a slower, smaller diastolic wave,
/// truncated to harmonics at or below 5 Hz, zero-mean, with unit
/// peak-to-peak. The distortion component is a sharp spike restricted to
/// harmonics in (5, 14] Hz with the pulse's RMS; the two share no
/// harmonics, so they are uncorrelated at every lag.
#[derive(Debug, Clone)]
pub struct PulseShape {
    f0_hz: f64,
    pulse: Vec<(u32, Complex64)>,
    distortion: Vec<(u32, Complex64)>,
    /// Peak-to-peak normalization of the blended waveform on a rho grid.
    blend_norm: Vec<f64>,
}

impl PulseShape {
    pub fn new(heart_rate_bpm: f64) -> Self {
        let f0 = heart_rate_bpm / 60.0;
        let mut pulse = harmonics(pulse_template, f0, 0.0, PULSE_BAND_HZ);
        let grid: Vec<f64> = (0..SHAPE_GRID)
            .map(|j| eval_series(&pulse, j as f64 / SHAPE_GRID as f64))
            .collect();
        let pp = peak_to_peak(&grid);
        pulse.iter_mut().for_each(|(_, c)| *c /= pp);

        let mut distortion = harmonics(distortion_template, f0, PULSE_BAND_HZ, DISTORTION_BAND_HZ);
        let scale = series_rms(&pulse) / series_rms(&distortion);
        distortion.iter_mut().for_each(|(_, c)| *c *= scale);

        let mut shape = Self {
            f0_hz: f0,
            pulse,
            distortion,
            blend_norm: Vec::new(),
        };
        shape.blend_norm = (0..NORM_TABLE)
            .map(|i| {
                let rho = RHO_MIN + (1.0 - RHO_MIN) * i as f64 / (NORM_TABLE - 1) as f64;
                let grid: Vec<f64> = (0..SHAPE_GRID)
                    .map(|j| shape.blend_raw(j as f64 / (SHAPE_GRID as f64 * f0), rho))
                    .collect();
                1.0 / peak_to_peak(&grid)
            })
            .collect();
        shape
    }

    pub fn period_s(&self) -> f64 {
        1.0 / self.f0_hz
    }

    pub fn pulse(&self, t_s: f64) -> f64 {
        eval_series(&self.pulse, t_s * self.f0_hz)
    }

    pub fn distortion(&self, t_s: f64) -> f64 {
        eval_series(&self.distortion, t_s * self.f0_hz)
    }

    /// Largest harmonic frequency in the pulse.
    pub fn pulse_bandwidth_hz(&self) -> f64 {
        self.pulse.last().map_or(0.0, |(k, _)| *k as f64 * self.f0_hz)
    }

    fn blend_raw(&self, t_s: f64, rho: f64) -> f64 {
        rho * self.pulse(t_s) + (1.0 - rho * rho).max(0.0).sqrt() * self.distortion(t_s)
    }

    /// Pulse blended with the distortion component so the result correlates
    /// with the clean pulse by `rho`, rescaled to unit peak-to-peak.
    pub fn blended(&self, t_s: f64, rho: f64) -> f64 {
        let x = ((rho - RHO_MIN) / (1.0 - RHO_MIN)).clamp(0.0, 1.0) * (NORM_TABLE - 1) as f64;
        let i = (x.floor() as usize).min(NORM_TABLE - 2);
        let fr = x - i as f64;
        let norm = self.blend_norm[i] + fr * (self.blend_norm[i + 1] - self.blend_norm[i]);
        norm * self.blend_raw(t_s, rho)
    }
}

fn peak_to_peak(xs: &[f64]) -> f64 {
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    hi - lo
}

/// Normalized pulse waveform at `t_s`. Builds the harmonic table on every
/// call; use [`PulseShape`] for bulk evaluation.
pub fn pulse_waveform(t_s: f64, heart_rate_bpm: f64) -> f64 {
    PulseShape::new(heart_rate_bpm).pulse(t_s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occlusion {
    pub gain: f64,
    pub delay_s: f64,
    pub distortion: f64,
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Effect of cuff pressure on the pulse reaching the main sensor.
pub fn occlusion_transfer(cuff_p: f64, sbp: f64, dbp: f64, transit_delay_max_s: f64) -> Result<Occlusion> {
    if !(sbp > dbp) {
        return Err(Error::InvalidPressurePair { sbp, dbp });
    }
    let x = ((sbp - cuff_p) / (sbp - dbp)).clamp(0.0, 1.0);
    Ok(Occlusion {
        gain: smoothstep(x),
        delay_s: transit_delay_max_s * (1.0 - x),
        distortion: 1.0 - x,
    })
}

/// Correlation between the distorted and the clean pulse.
pub fn distortion_correlation(distortion: f64) -> f64 {
    1.0 - (1.0 - RHO_MIN) * distortion.clamp(0.0, 1.0).powf(RHO_EXPONENT)
}

/// Peak-to-peak cuff oscillation at cuff pressure `cuff_p`: Gaussian flanks
/// meeting at MAP, an exponential tail above SBP.
pub fn cuff_oscillation_amplitude(cuff_p: f64, sbp: f64, dbp: f64, osc: &OscillationParams) -> Result<f64> {
    if !(sbp > dbp) {
        return Err(Error::InvalidPressurePair { sbp, dbp });
    }
    let map = dbp + (sbp - dbp) / 3.0;
    let rel = if cuff_p >= sbp {
        osc.at_sbp * (-(cuff_p - sbp) / osc.tail_decay_mmhg).exp()
    } else {
        let (edge, level) = if cuff_p >= map { (sbp, osc.at_sbp) } else { (dbp, osc.at_dbp) };
        let sigma = (edge - map).abs() / (2.0 * (1.0 / level).ln()).sqrt();
        (-(cuff_p - map).powi(2) / (2.0 * sigma * sigma)).exp()
    };
    Ok(osc.peak_mmhg * rel)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KorotkoffMarkers {
    pub t_first_tone_s: f64,
    pub t_last_tone_s: f64,
}

#[derive(Debug, Clone)]
pub struct MeasurementRecord {
    pub main_ppg: SampledSignal,
    pub ref_ppg: SampledSignal,
    pub cuff: CuffTrace,
    pub truth: SubjectParams,
    pub korotkoff_markers: KorotkoffMarkers,
    pub seed: u64,
    pub settings: SimulationSettings,
}

impl MeasurementRecord {
    /// Recorded cuff pressure at the first and last Korotkoff tone: the
    /// reference values estimates are compared against.
    pub fn reference_bp(&self) -> Result<(f64, f64)> {
        Ok((
            self.cuff.pressure_at(self.korotkoff_markers.t_first_tone_s)?,
            self.cuff.pressure_at(self.korotkoff_markers.t_last_tone_s)?,
        ))
    }
}

/// Full simulation settings apart from the subject and seed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationSettings {
    pub protocol: ProtocolParams,
    pub artifacts: ArtifactSpec,
    pub noise_rms: f64,
    pub oscillation: OscillationParams,
}

pub fn simulate_measurement(
    subject: &SubjectParams,
    protocol: &ProtocolParams,
    artifacts: &ArtifactSpec,
    noise_rms: f64,
    seed: u64,
) -> Result<MeasurementRecord> {
    let settings = SimulationSettings {
        protocol: *protocol,
        artifacts: *artifacts,
        noise_rms,
        oscillation: OscillationParams::default(),
    };
    simulate_with(subject, &settings, seed)
}

pub fn simulate_with(subject: &SubjectParams, settings: &SimulationSettings, seed: u64) -> Result<MeasurementRecord> {
    let SimulationSettings {
        protocol,
        artifacts,
        noise_rms,
        oscillation,
    } = settings;
    subject.validate()?;
    protocol.validate()?;
    protocol.check_subject(subject)?;
    artifacts.validate()?;
    if !(noise_rms.is_finite() && *noise_rms >= 0.0) {
        return Err(Error::InvalidParams(format!("noise_rms {noise_rms}")));
    }

    let fs = SAMPLE_RATE_HZ;
    let hold = protocol.pre_deflation_hold_s;
    let top = protocol.inflate_to_mmhg;
    let bottom = protocol.deflate_to_mmhg;
    let t_deflate = (top - bottom) / protocol.deflation_rate_mmhg_per_s;
    let t_release = bottom / protocol.release_rate_mmhg_per_s;
    let duration = hold + t_deflate + t_release + protocol.post_deflation_s;
    let n = (duration * fs).round() as usize + 1;
    let time = |i: usize| i as f64 / fs;
    let ramp = |t: f64| {
        if t < hold {
            top
        } else if t < hold + t_deflate {
            top - protocol.deflation_rate_mmhg_per_s * (t - hold)
        } else {
            (bottom - protocol.release_rate_mmhg_per_s * (t - hold - t_deflate)).max(0.0)
        }
    };

    let shape = PulseShape::new(subject.heart_rate_bpm);
    let (sbp, dbp, amp) = (subject.sbp_mmhg, subject.dbp_mmhg, subject.ppg_amp);
    let mut reference = Vec::with_capacity(n);
    let mut main = Vec::with_capacity(n);
    let mut gains = Vec::with_capacity(n);
    let mut cuff_clean = Vec::with_capacity(n);
    for i in 0..n {
        let t = time(i);
        let p = ramp(t);
        let w = shape.pulse(t);
        reference.push(amp * w);
        let occ = occlusion_transfer(p, sbp, dbp, subject.transit_delay_max_s)?;
        let m = if occ.gain > 0.0 {
            let rho = distortion_correlation(occ.distortion);
            amp * occ.gain * shape.blended(t - occ.delay_s, rho)
        } else {
            0.0
        };
        main.push(m);
        gains.push(occ.gain);
        let osc = if p > 0.0 {
            cuff_oscillation_amplitude(p, sbp, dbp, oscillation)? * w
        } else {
            0.0
        };
        cuff_clean.push(p + osc);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let mut ref_noisy: Vec<f64> = reference.iter().map(|v| v + noise_rms * amp * normal()).collect();
    // sensor noise on the main channel scales with the pulse that reaches it
    let mut main_noisy: Vec<f64> = main
        .iter()
        .zip(&gains)
        .map(|(v, g)| v + noise_rms * amp * g * normal())
        .collect();
    let mut cuff: Vec<f64> = cuff_clean
        .iter()
        .map(|v| v + noise_rms * oscillation.peak_mmhg * normal())
        .collect();

    add_artifacts(
        artifacts,
        &mut rng,
        duration,
        amp,
        oscillation.peak_mmhg,
        &mut main_noisy,
        &mut ref_noisy,
        &mut cuff,
    );

    let marker = |level: f64| -> Result<f64> {
        let i0 = (hold * fs).ceil() as usize;
        let i = (i0.max(1)..n)
            .find(|&i| cuff_clean[i] <= level)
            .ok_or_else(|| Error::ProtocolViolation(format!("cuff never fell to {level} mmHg")))?;
        let (a, b) = (cuff_clean[i - 1], cuff_clean[i]);
        Ok(time(i - 1) + (a - level) / (a - b) / fs)
    };
    let markers = KorotkoffMarkers {
        t_first_tone_s: marker(sbp)?,
        t_last_tone_s: marker(dbp)?,
    };

    let pressure = SampledSignal::new(cuff, fs, 0.0, Unit::MmHg)?;
    let cuff = CuffTrace::new(pressure, hold, hold + t_deflate)?;
    Ok(MeasurementRecord {
        main_ppg: SampledSignal::new(main_noisy, fs, 0.0, Unit::Millivolt)?,
        ref_ppg: SampledSignal::new(ref_noisy, fs, 0.0, Unit::Millivolt)?,
        cuff,
        truth: *subject,
        korotkoff_markers: markers,
        seed,
        settings: *settings,
    })
}

#[allow(clippy::too_many_arguments)]
fn add_artifacts(
    spec: &ArtifactSpec,
    rng: &mut ChaCha8Rng,
    duration_s: f64,
    ppg_amp: f64,
    cuff_scale: f64,
    main: &mut [f64],
    reference: &mut [f64],
    cuff: &mut [f64],
) {
    let both = spec.affects == Affects::BothInPhase;
    let fs = SAMPLE_RATE_HZ;
    match spec.kind {
        ArtifactKind::None => {}
        ArtifactKind::MotionSpike => {
            if spec.rate_per_min <= 0.0 || spec.magnitude == 0.0 {
                return;
            }
            let gaps = Exp::new(spec.rate_per_min / 60.0).expect("positive rate");
            let len = (SPIKE_S * fs).round() as usize;
            let mut t = 0.0;
            loop {
                t += rng.sample(gaps);
                if t > duration_s {
                    break;
                }
                let i0 = (t * fs) as usize;
                for k in 0..len {
                    let i = i0 + k;
                    if i >= main.len() {
                        break;
                    }
                    let bump = 0.5 * (1.0 - (2.0 * PI * k as f64 / len as f64).cos());
                    main[i] += spec.magnitude * ppg_amp * bump;
                    if both {
                        reference[i] += spec.magnitude * ppg_amp * bump;
                    }
                    // the sensor moves with the cuffed limb
                    cuff[i] += spec.magnitude * cuff_scale * bump;
                }
            }
        }
        ArtifactKind::BaselineWander => {
            let phase = rng.random_range(0.0..2.0 * PI);
            for (i, m) in main.iter_mut().enumerate() {
                let v = spec.magnitude * ppg_amp * (2.0 * PI * WANDER_HZ * i as f64 / fs + phase).sin();
                *m += v;
                if both {
                    reference[i] += v;
                }
            }
        }
    }
}

/// Default modulation bias for the optional acquisition pass, in PPG units.
pub const FRONTEND_BIAS: f64 = 0.5;

/// Routes both PPG channels through carrier modulation at 1.5 kHz and
/// synchronous detection back to the working rate.
pub fn optional_frontend_pass(record: &MeasurementRecord) -> Result<MeasurementRecord> {
    let pass = |s: &SampledSignal| -> Result<SampledSignal> {
        let raw = modulate_carrier(s, CARRIER_HZ, CARRIER_RATE_HZ, FRONTEND_BIAS * record.truth.ppg_amp)?;
        synchronous_demodulate(&raw, CARRIER_HZ)
    };
    let main = pass(&record.main_ppg)?;
    let reference = pass(&record.ref_ppg)?;
    Ok(MeasurementRecord {
        main_ppg: main,
        ref_ppg: reference,
        ..record.clone()
    })
}

/// Relative RMS difference between two channels over their common span,
/// skipping the first `skip_s` seconds.
pub fn relative_rms_difference(a: &SampledSignal, b: &SampledSignal, skip_s: f64) -> f64 {
    let n = a.len().min(b.len());
    let i0 = ((skip_s - a.start_time_s()) * a.sample_rate_hz()).ceil().max(0.0) as usize;
    let (mut num, mut den) = (0.0, 0.0);
    for i in i0.min(n)..n {
        num += (a.samples()[i] - b.samples()[i]).powi(2);
        den += b.samples()[i].powi(2);
    }
    if den == 0.0 {
        return if num == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (num / den).sqrt()
}
