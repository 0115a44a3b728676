//! Reading and writing signals and simulated records.
//!
//! A signal is a two-column CSV (`time_s,value`) with an optional JSON
//! sidecar next to it (`main.csv` -> `main.json`) carrying the sample rate,
//! start time, unit and processing metadata. Without a sidecar the rate and
//! start time are taken from the time column, which must then be uniform.
//! A record directory holds `main.csv`, `ref.csv`, `cuff.csv`, their sidecars
//! and `manifest.json` with the ground truth.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{CuffTrace, SampledSignal, SignalMeta, Unit};
use crate::simulator::{KorotkoffMarkers, MeasurementRecord, SimulationSettings, SubjectParams};

pub const MAIN_FILE: &str = "main.csv";
pub const REF_FILE: &str = "ref.csv";
pub const CUFF_FILE: &str = "cuff.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Largest start-time difference tolerated between channels of one record.
pub const ALIGN_TOLERANCE_S: f64 = 0.010;
/// Valve release rate used to find the deflation segment when no manifest
/// is given.
pub const DETECT_RELEASE_RATE_MMHG_S: f64 = 10.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    sample_rate_hz: f64,
    start_time_s: f64,
    unit: Unit,
    #[serde(default)]
    meta: SignalMeta,
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::Format {
            path: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

/// Writes `signal` as CSV plus sidecar.
pub fn write_signal(path: &Path, signal: &SampledSignal) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["time_s", "value"]).map_err(|e| csv_error(path, e))?;
    for (i, v) in signal.samples().iter().enumerate() {
        w.write_record([format!("{}", signal.time_at(i)), format!("{v}")])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let side = Sidecar {
        sample_rate_hz: signal.sample_rate_hz(),
        start_time_s: signal.start_time_s(),
        unit: signal.unit(),
        meta: signal.meta().clone(),
    };
    write_json(&sidecar_path(path), &side)
}

/// Reads a signal CSV. `default_unit` applies when there is no sidecar.
pub fn read_signal(path: &Path, default_unit: Unit) -> Result<SampledSignal> {
    let format = |line: u64, message: String| Error::Format {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.len() != 2 || &headers[0] != "time_s" {
        return Err(format(1, format!("expected header `time_s,value`, found `{}`", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != 2 {
            return Err(format(line, format!("expected 2 fields, found {}", row.len())));
        }
        let parse = |s: &str| -> Result<f64> {
            let v: f64 = s.parse().map_err(|_| format(line, format!("`{s}` is not a number")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format(line, format!("non-finite value `{s}`")))
            }
        };
        times.push((parse(&row[0])?, line));
        values.push(parse(&row[1])?);
    }
    if values.is_empty() {
        return Err(format(1, "no samples".into()));
    }

    let side_path = sidecar_path(path);
    let (rate, start, unit, meta) = if side_path.exists() {
        let s: Sidecar = read_json(&side_path)?;
        (s.sample_rate_hz, s.start_time_s, s.unit, s.meta)
    } else {
        if times.len() < 2 {
            return Err(format(times[0].1, "cannot infer a sample rate from one sample without a sidecar".into()));
        }
        let span = times[times.len() - 1].0 - times[0].0;
        if !(span > 0.0) {
            return Err(format(times[1].1, "time column is not increasing".into()));
        }
        ((times.len() - 1) as f64 / span, times[0].0, default_unit, SignalMeta::default())
    };
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::InvalidRate(rate));
    }
    // the time column must agree with the rate to within a small fraction of a sample
    let tol = 1e-3 / rate;
    for (i, &(t, line)) in times.iter().enumerate() {
        let want = start + i as f64 / rate;
        if (t - want).abs() > tol {
            return Err(format(line, format!("time {t} s off the uniform grid (expected {want} s)")));
        }
    }
    Ok(SampledSignal::new(values, rate, start, unit)?.with_meta(meta))
}

/// Ground truth and settings stored next to a simulated record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub truth: SubjectParams,
    pub korotkoff_markers: KorotkoffMarkers,
    /// Recorded cuff pressure at the Korotkoff markers.
    #[serde(rename = "reference_sbp_mmHg")]
    pub reference_sbp_mmhg: f64,
    #[serde(rename = "reference_dbp_mmHg")]
    pub reference_dbp_mmhg: f64,
    pub seed: u64,
    pub settings: SimulationSettings,
    pub deflation_start_s: f64,
    pub deflation_end_s: f64,
    pub frontend_pass: bool,
}

impl Manifest {
    pub fn for_record(record: &MeasurementRecord) -> Result<Self> {
        let (sbp, dbp) = record.reference_bp()?;
        Ok(Self {
            truth: record.truth,
            korotkoff_markers: record.korotkoff_markers,
            reference_sbp_mmhg: sbp,
            reference_dbp_mmhg: dbp,
            seed: record.seed,
            settings: record.settings,
            deflation_start_s: record.cuff.deflation_start_s(),
            deflation_end_s: record.cuff.deflation_end_s(),
            frontend_pass: record.main_ppg.meta().frontend_pass,
        })
    }
}

pub fn write_record(dir: &Path, record: &MeasurementRecord) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_signal(&dir.join(MAIN_FILE), &record.main_ppg)?;
    write_signal(&dir.join(REF_FILE), &record.ref_ppg)?;
    write_signal(&dir.join(CUFF_FILE), record.cuff.pressure())?;
    write_json(&dir.join(MANIFEST_FILE), &Manifest::for_record(record)?)
}

pub fn read_record(dir: &Path) -> Result<MeasurementRecord> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
    let (main, reference, cuff) = load_channels(
        &dir.join(MAIN_FILE),
        &dir.join(REF_FILE),
        &dir.join(CUFF_FILE),
        Some(&manifest),
    )?;
    Ok(MeasurementRecord {
        main_ppg: main,
        ref_ppg: reference,
        cuff,
        truth: manifest.truth,
        korotkoff_markers: manifest.korotkoff_markers,
        seed: manifest.seed,
        settings: manifest.settings,
    })
}

/// Checks that channels share a sample rate and start within 10 ms of each
/// other.
pub fn check_alignment(channels: &[&SampledSignal]) -> Result<()> {
    let Some(first) = channels.first() else {
        return Ok(());
    };
    for ch in &channels[1..] {
        if (ch.sample_rate_hz() - first.sample_rate_hz()).abs() > 1e-9 * first.sample_rate_hz() {
            return Err(Error::Alignment(format!(
                "sample rates {} Hz and {} Hz differ",
                first.sample_rate_hz(),
                ch.sample_rate_hz()
            )));
        }
        let dt = (ch.start_time_s() - first.start_time_s()).abs();
        if dt > ALIGN_TOLERANCE_S {
            return Err(Error::Alignment(format!("start times differ by {dt} s")));
        }
    }
    Ok(())
}

/// Loads the three channels of a recording. The deflation segment comes
/// from the manifest when there is one and is detected from the cuff
/// pressure otherwise.
pub fn load_channels(
    main: &Path,
    reference: &Path,
    cuff: &Path,
    manifest: Option<&Manifest>,
) -> Result<(SampledSignal, SampledSignal, CuffTrace)> {
    let main = read_signal(main, Unit::Millivolt)?;
    let reference = read_signal(reference, Unit::Millivolt)?;
    let pressure = read_signal(cuff, Unit::MmHg)?;
    check_alignment(&[&main, &reference, &pressure])?;
    let cuff = match manifest {
        Some(m) => CuffTrace::new(pressure, m.deflation_start_s, m.deflation_end_s)?,
        None => CuffTrace::detect(pressure, DETECT_RELEASE_RATE_MMHG_S)?,
    };
    Ok((main, reference, cuff))
}
