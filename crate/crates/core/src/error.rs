use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the toolkit can report.
///
/// Estimator failures (`NoOcclusionObserved`, `MissingCrossing`, ...) are
/// ordinary outcomes during batch experiments and are recorded per trial by
/// their [`Error::code`] rather than aborting a run.
#[derive(Debug, Error)]
pub enum Error {
    #[error("window [{t0_s}, {t1_s}) s lies outside signal span [{span_start_s}, {span_end_s}) s")]
    WindowOutOfRange {
        t0_s: f64,
        t1_s: f64,
        span_start_s: f64,
        span_end_s: f64,
    },
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("signal is empty")]
    EmptySignal,
    #[error("invalid sample rate {0} Hz")]
    InvalidRate(f64),
    #[error("time {t_s} s outside signal span [{start_s}, {end_s}] s")]
    TimeOutOfRange { t_s: f64, start_s: f64, end_s: f64 },
    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),
    #[error("invalid deflation interval: {0}")]
    InvalidDeflation(String),
    #[error("cuff pressure rises by {excess_mmhg:.3} mmHg at t = {t_s:.3} s during deflation")]
    NonMonotoneDeflation { t_s: f64, excess_mmhg: f64 },
    #[error("unit mismatch: expected {expected}, found {found}")]
    UnitMismatch { expected: String, found: String },

    #[error("filter spec cannot be realized: {0}")]
    UnrealizableSpec(String),
    #[error("invalid cutoff {cutoff_hz} Hz at sample rate {sample_rate_hz} Hz")]
    InvalidCutoff { cutoff_hz: f64, sample_rate_hz: f64 },
    #[error("signal rate {signal_hz} Hz does not match filter rate {filter_hz} Hz")]
    RateMismatch { signal_hz: f64, filter_hz: f64 },
    #[error("sample rate {rate_hz} Hz too low for carrier {carrier_hz} Hz (need >= {min_hz} Hz)")]
    RateTooLow {
        rate_hz: f64,
        carrier_hz: f64,
        min_hz: f64,
    },

    #[error("segment has (near) zero variance")]
    DegenerateSegment,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("correlation never fell below the systolic threshold; no occlusion observed")]
    NoOcclusionObserved,
    #[error("correlation never reached the diastolic threshold; no recovery observed")]
    NoRecoveryObserved,
    #[error("too few oscillation beats: found {found}, need {needed}")]
    TooFewBeats { found: usize, needed: usize },
    #[error("envelope maximum is a plateau {width_mmhg:.1} mmHg wide")]
    NoUniquePeak { width_mmhg: f64 },
    #[error("{0} ratio line never crossed")]
    MissingCrossing(&'static str),
    #[error("estimate violates SBP > DBP > 0 / t_sys < t_dias: {0}")]
    InconsistentEstimate(String),

    #[error("invalid sbp/dbp pair {sbp} / {dbp} mmHg")]
    InvalidPressurePair { sbp: f64, dbp: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("{path}: line {line}: {message}")]
    Format {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("channel alignment: {0}")]
    Alignment(String),
    #[error("report inconsistent: {0}")]
    ReportMismatch(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Stable short identifier used in report rows.
    pub fn code(&self) -> &'static str {
        match self {
            Error::WindowOutOfRange { .. } => "window_out_of_range",
            Error::InvalidWindow(_) => "invalid_window",
            Error::EmptySignal => "empty_signal",
            Error::InvalidRate(_) => "invalid_rate",
            Error::TimeOutOfRange { .. } => "time_out_of_range",
            Error::NonFiniteSample(_) => "non_finite_sample",
            Error::InvalidDeflation(_) => "invalid_deflation",
            Error::NonMonotoneDeflation { .. } => "non_monotone_deflation",
            Error::UnitMismatch { .. } => "unit_mismatch",
            Error::UnrealizableSpec(_) => "unrealizable_spec",
            Error::InvalidCutoff { .. } => "invalid_cutoff",
            Error::RateMismatch { .. } => "rate_mismatch",
            Error::RateTooLow { .. } => "rate_too_low",
            Error::DegenerateSegment => "degenerate_segment",
            Error::InvalidConfig(_) => "config_invalid",
            Error::InsufficientData(_) => "insufficient_data",
            Error::NoOcclusionObserved => "no_occlusion_observed",
            Error::NoRecoveryObserved => "no_recovery_observed",
            Error::TooFewBeats { .. } => "too_few_beats",
            Error::NoUniquePeak { .. } => "no_unique_peak",
            Error::MissingCrossing(_) => "missing_crossing",
            Error::InconsistentEstimate(_) => "inconsistent_estimate",
            Error::InvalidPressurePair { .. } => "invalid_pressure_pair",
            Error::InvalidParams(_) => "invalid_params",
            Error::ProtocolViolation(_) => "protocol_violation",
            Error::Format { .. } => "format_error",
            Error::Alignment(_) => "alignment_error",
            Error::ReportMismatch(_) => "report_mismatch",
            Error::Io { .. } => "io_error",
            Error::Json { .. } => "json_error",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
