//! Cuff blood-pressure estimation from a three-channel recording: main and
//! reference photoplethysmograms plus cuff pressure.
//!
//! Two estimators share one record. [`oscillometric`] tracks the windowed
//! normalized cross-correlation between the occluded (main) and free
//! (reference) PPG channels as the cuff deflates and reads systolic and
//! diastolic pressure where the correlation crosses 10% and 90%.
//! [`tacho`] band-passes the cuff pressure, builds the beat-amplitude
//! envelope and applies amplitude-ratio criteria. [`simulator`] produces
//! records with known ground truth and [`experiment`] runs the comparison.

pub mod dsp;
pub mod error;
pub mod experiment;
pub mod io;
pub mod oscillometric;
pub mod report;
pub mod signal;
pub mod simulator;
pub mod svg;
pub mod tacho;

pub use error::{Error, Result};
pub use signal::{CuffTrace, DelayCurve, SampledSignal, SignalMeta, Unit, Window};
