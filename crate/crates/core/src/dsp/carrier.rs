//! Carrier modulation and synchronous (lock-in) detection of PPG channels.
//!
//! The light source is modeled as a sine carrier whose amplitude follows the
//! tissue absorption envelope. Detection multiplies by a phase-aligned copy
//! of the carrier and low-passes the product, which moves everything not
//! locked to the carrier (mains hum, ambient light) out of the signal band.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::signal::{SampledSignal, SignalMeta};

use super::filter::design_lowpass2;

pub const CARRIER_HZ: f64 = 1500.0;
pub const CARRIER_RATE_HZ: f64 = 12_000.0;
pub const WORKING_RATE_HZ: f64 = 100.0;
/// Bandwidth of the PPG channel after detection.
pub const DEMOD_CUTOFF_HZ: f64 = 30.0;

const MIN_RATE_FACTOR: f64 = 8.0;

fn check_rate(rate_hz: f64, carrier_hz: f64) -> Result<()> {
    if !(carrier_hz > 0.0) || rate_hz < MIN_RATE_FACTOR * carrier_hz {
        return Err(Error::RateTooLow {
            rate_hz,
            carrier_hz,
            min_hz: MIN_RATE_FACTOR * carrier_hz,
        });
    }
    Ok(())
}

/// Amplitude-modulates `envelope` onto a sine carrier sampled at
/// `carrier_rate_hz`. The envelope is lifted so the light intensity never
/// goes negative: offset = max(0, -min(envelope)) + `bias`. The offset is
/// stored in the metadata for the demodulator to remove.
pub fn modulate_carrier(
    envelope: &SampledSignal,
    carrier_hz: f64,
    carrier_rate_hz: f64,
    bias: f64,
) -> Result<SampledSignal> {
    check_rate(carrier_rate_hz, carrier_hz)?;
    if !(bias.is_finite() && bias >= 0.0) {
        return Err(Error::InvalidParams(format!("carrier bias {bias}")));
    }
    let lo = envelope.samples().iter().cloned().fold(f64::INFINITY, f64::min);
    if !lo.is_finite() {
        return Err(Error::EmptySignal);
    }
    let offset = (-lo).max(0.0) + bias;
    let up = envelope.resample(carrier_rate_hz)?;
    let w = 2.0 * PI * carrier_hz;
    let out: Vec<f64> = up
        .samples()
        .iter()
        .enumerate()
        .map(|(i, &e)| (offset + e) * (w * up.time_at(i)).sin())
        .collect();
    let meta = SignalMeta {
        carrier_dc: Some(offset),
        ..envelope.meta().clone()
    };
    Ok(up.with_samples(out)?.with_meta(meta))
}

/// Recovers the envelope from a carrier-domain signal: mix with
/// `2 sin(2 pi fc t)`, low-pass at 30 Hz (two cascaded second-order
/// sections), read the result at the working rate with the low-pass delay
/// compensated, and subtract the modulation offset.
pub fn synchronous_demodulate(raw: &SampledSignal, carrier_hz: f64) -> Result<SampledSignal> {
    check_rate(raw.sample_rate_hz(), carrier_hz)?;
    if raw.is_empty() {
        return Err(Error::EmptySignal);
    }
    let w = 2.0 * PI * carrier_hz;
    let mixed: Vec<f64> = raw
        .samples()
        .iter()
        .enumerate()
        .map(|(i, &x)| 2.0 * x * (w * raw.time_at(i)).sin())
        .collect();
    let lp = design_lowpass2(DEMOD_CUTOFF_HZ, raw.sample_rate_hz())?;
    let mixed = raw.with_samples(mixed)?;
    let base = lp.apply(&lp.apply(&mixed)?)?;
    let delay = 2.0 * lp.group_delay_s();
    let offset = raw.meta().carrier_dc.unwrap_or(0.0);

    let last = base.last_time_s();
    let mut out = Vec::new();
    loop {
        let t = raw.start_time_s() + out.len() as f64 / WORKING_RATE_HZ;
        if t + delay > last {
            break;
        }
        out.push(base.interpolate_at(t + delay)? - offset);
    }
    let meta = SignalMeta {
        transient_end_s: Some(raw.start_time_s() + 2.0 * lp.settling_time_s()),
        group_delay: None,
        carrier_dc: None,
        frontend_pass: true,
    };
    Ok(SampledSignal::new(out, WORKING_RATE_HZ, raw.start_time_s(), raw.unit())?.with_meta(meta))
}
