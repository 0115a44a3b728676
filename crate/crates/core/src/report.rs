//! Writing and reloading comparison reports.
//!
//! `emit_report` writes:
//! - `trials.csv`: one row per trial.
//! - `table1.csv`: P1–P4 per subject.
//! - `fig3_scatter.csv` and `fig3_scatter.svg`: SBP against DBP for the
//!   auscultatory reference and both methods.
//! - `fig4_deviation.csv` and `fig4_deviation.svg`: absolute deviation from
//!   the reference per measurement.
//! - `summary.json`: the config and aggregates.
//!
//! Nothing time-dependent is written, so a report always produces the same
//! bytes. `load_report` reads `trials.csv` and `summary.json` back and
//! rejects the pair if the stored errors or aggregates do not match the rows.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{ComparisonReport, ExperimentConfig, GlobalSummary, Outcome, SubjectSummary, TrialRow};
use crate::io::{read_json, write_json};
use crate::svg::{Marker, Plot, Series};

pub const TRIALS_FILE: &str = "trials.csv";
pub const TABLE1_FILE: &str = "table1.csv";
pub const FIG3_FILE: &str = "fig3_scatter.csv";
pub const FIG4_FILE: &str = "fig4_deviation.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const FIG3_SVG: &str = "fig3_scatter.svg";
pub const FIG4_SVG: &str = "fig4_deviation.svg";

const TRIALS_HEADER: [&str; 15] = [
    "subject",
    "trial",
    "seed",
    "true_sbp_mmHg",
    "true_dbp_mmHg",
    "osc_sbp_mmHg",
    "osc_dbp_mmHg",
    "osc_sbp_abs_err",
    "osc_dbp_abs_err",
    "osc_error",
    "tacho_sbp_mmHg",
    "tacho_dbp_mmHg",
    "tacho_sbp_abs_err",
    "tacho_dbp_abs_err",
    "tacho_error",
];

/// Largest discrepancy tolerated between stored and recomputed numbers.
const CHECK_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SummaryFile {
    config: ExperimentConfig,
    subjects: Vec<SubjectSummary>,
    global: GlobalSummary,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let to_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::Format {
            path: path.to_path_buf(),
            line: 0,
            message: format!("{kind:?}"),
        },
    };
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    w.write_record(header).map_err(to_err)?;
    for r in rows {
        w.write_record(&r).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn outcome_fields(outcome: &Outcome, errors: Option<(f64, f64)>) -> [String; 5] {
    let est = outcome.estimate();
    [
        opt(est.map(|e| e.0)),
        opt(est.map(|e| e.1)),
        opt(errors.map(|e| e.0)),
        opt(errors.map(|e| e.1)),
        outcome.error_code().unwrap_or("").to_string(),
    ]
}

fn trial_record(row: &TrialRow) -> Vec<String> {
    let mut out = vec![
        row.subject.to_string(),
        row.trial.to_string(),
        row.seed.to_string(),
        opt(row.truth.map(|t| t.0)),
        opt(row.truth.map(|t| t.1)),
    ];
    out.extend(outcome_fields(&row.oscillometric, row.oscillometric_errors()));
    out.extend(outcome_fields(&row.tacho, row.tacho_errors()));
    out
}

const METHODS: [(&str, Marker, &str); 3] = [
    ("auscultatory", Marker::Circle, "black"),
    ("oscillometric", Marker::Square, "#1f77b4"),
    ("tacho", Marker::Triangle, "#d62728"),
];

/// (method index, (sbp, dbp)) points of the Fig. 3 scatter for one row.
fn scatter_points(row: &TrialRow) -> Vec<(usize, (f64, f64))> {
    [row.truth, row.oscillometric.estimate(), row.tacho.estimate()]
        .into_iter()
        .enumerate()
        .filter_map(|(m, p)| p.map(|p| (m, p)))
        .collect()
}

pub fn emit_report(report: &ComparisonReport, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    write_csv(&out_dir.join(TRIALS_FILE), &TRIALS_HEADER, report.rows.iter().map(trial_record))?;

    write_csv(
        &out_dir.join(TABLE1_FILE),
        &["subject", "sbp_mmHg", "dbp_mmHg", "heart_rate_bpm", "n_oscillometric", "n_tacho", "P1", "P2", "P3", "P4"],
        report.subjects.iter().map(|s| {
            let d = &s.deviations;
            vec![
                s.subject.to_string(),
                format!("{}", s.params.sbp_mmhg),
                format!("{}", s.params.dbp_mmhg),
                format!("{}", s.params.heart_rate_bpm),
                d.n_oscillometric.to_string(),
                d.n_tacho.to_string(),
                opt(d.p1),
                opt(d.p2),
                opt(d.p3),
                opt(d.p4),
            ]
        }),
    )?;

    write_csv(
        &out_dir.join(FIG3_FILE),
        &["subject", "trial", "method", "marker", "sbp_mmHg", "dbp_mmHg"],
        report.rows.iter().flat_map(|r| {
            scatter_points(r).into_iter().map(move |(m, (s, d))| {
                vec![
                    r.subject.to_string(),
                    r.trial.to_string(),
                    METHODS[m].0.to_string(),
                    METHODS[m].1.name().to_string(),
                    format!("{s}"),
                    format!("{d}"),
                ]
            })
        }),
    )?;

    write_csv(
        &out_dir.join(FIG4_FILE),
        &["measurement", "subject", "trial", "method", "sbp_abs_dev_mmHg", "dbp_abs_dev_mmHg"],
        report.rows.iter().enumerate().flat_map(|(i, r)| {
            [("oscillometric", r.oscillometric_errors()), ("tacho", r.tacho_errors())]
                .into_iter()
                .filter_map(move |(m, e)| {
                    let (s, d) = e?;
                    Some(vec![
                        (i + 1).to_string(),
                        r.subject.to_string(),
                        r.trial.to_string(),
                        m.to_string(),
                        format!("{s}"),
                        format!("{d}"),
                    ])
                })
        }),
    )?;

    let summary = SummaryFile {
        config: report.config.clone(),
        subjects: report.subjects.clone(),
        global: report.global,
    };
    write_json(&out_dir.join(SUMMARY_FILE), &summary)?;

    let fig3 = Plot {
        title: "Blood pressure by method".into(),
        x_label: "DBP, mmHg".into(),
        y_label: "SBP, mmHg".into(),
        series: METHODS
            .iter()
            .enumerate()
            .map(|(m, &(label, marker, color))| Series {
                label: label.into(),
                marker,
                color,
                points: report
                    .rows
                    .iter()
                    .flat_map(scatter_points)
                    .filter(|(k, _)| *k == m)
                    .map(|(_, (s, d))| (d, s))
                    .collect(),
            })
            .collect(),
    };
    let path = out_dir.join(FIG3_SVG);
    fs::write(&path, fig3.render()).map_err(|e| Error::io(&path, e))?;

    let deviation_series = |label: &str, marker, color, pick: fn(&TrialRow) -> Option<f64>| Series {
        label: label.into(),
        marker,
        color,
        points: report
            .rows
            .iter()
            .enumerate()
            .filter_map(|(i, r)| pick(r).map(|v| ((i + 1) as f64, v)))
            .collect(),
    };
    let fig4 = Plot {
        title: "Absolute deviation from auscultatory".into(),
        x_label: "measurement".into(),
        y_label: "|deviation|, mmHg".into(),
        series: vec![
            deviation_series("osc SBP", Marker::Square, "#1f77b4", |r| r.oscillometric_errors().map(|e| e.0)),
            deviation_series("osc DBP", Marker::Diamond, "#1f77b4", |r| r.oscillometric_errors().map(|e| e.1)),
            deviation_series("tacho SBP", Marker::Triangle, "#d62728", |r| r.tacho_errors().map(|e| e.0)),
            deviation_series("tacho DBP", Marker::Circle, "#d62728", |r| r.tacho_errors().map(|e| e.1)),
        ],
    };
    let path = out_dir.join(FIG4_SVG);
    fs::write(&path, fig4.render()).map_err(|e| Error::io(&path, e))
}

struct Fields<'a> {
    path: &'a Path,
    line: u64,
    record: csv::StringRecord,
}

impl Fields<'_> {
    fn err(&self, message: String) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            line: self.line,
            message,
        }
    }

    fn parse<T: std::str::FromStr>(&self, i: usize) -> Result<T> {
        self.record[i]
            .parse()
            .map_err(|_| self.err(format!("column {} `{}` is not a number", TRIALS_HEADER[i], &self.record[i])))
    }

    fn opt(&self, i: usize) -> Result<Option<f64>> {
        if self.record[i].is_empty() {
            Ok(None)
        } else {
            self.parse(i).map(Some)
        }
    }

    fn pair(&self, i: usize) -> Result<Option<(f64, f64)>> {
        match (self.opt(i)?, self.opt(i + 1)?) {
            (Some(a), Some(b)) => Ok(Some((a, b))),
            (None, None) => Ok(None),
            _ => Err(self.err(format!("columns {} and {} must both be set or both empty", TRIALS_HEADER[i], TRIALS_HEADER[i + 1]))),
        }
    }

    /// Estimate, stored errors and error code starting at column `i`.
    fn outcome(&self, i: usize) -> Result<(Outcome, Option<(f64, f64)>)> {
        let est = self.pair(i)?;
        let errors = self.pair(i + 2)?;
        let code = &self.record[i + 4];
        let outcome = match (est, code.is_empty()) {
            (Some((s, d)), true) => Outcome::Estimate { sbp_mmhg: s, dbp_mmhg: d },
            (None, false) => Outcome::Failed(code.to_string()),
            _ => return Err(self.err("exactly one of estimate and error code must be set".into())),
        };
        Ok((outcome, errors))
    }
}

fn close(a: Option<(f64, f64)>, b: Option<(f64, f64)>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => (a.0 - b.0).abs() <= CHECK_TOLERANCE && (a.1 - b.1).abs() <= CHECK_TOLERANCE,
        (None, None) => true,
        _ => false,
    }
}

/// Parses `trials.csv`, checking each row's stored absolute errors against
/// the estimates and truth in the same row.
pub fn read_trials(path: &Path) -> Result<Vec<TrialRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::Format {
            path: path.to_path_buf(),
            line: 1,
            message: format!("{kind:?}"),
        },
    })?;
    let header = rdr.headers().map_err(|e| Error::Format {
        path: path.to_path_buf(),
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().ne(TRIALS_HEADER.iter().copied()) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            line: 1,
            message: "unexpected header".into(),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let record = rec.map_err(|e| Error::Format {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let f = Fields {
            path,
            line: record.position().map_or(0, |p| p.line()),
            record,
        };
        let (oscillometric, osc_err) = f.outcome(5)?;
        let (tacho, tac_err) = f.outcome(10)?;
        let row = TrialRow {
            subject: f.parse(0)?,
            trial: f.parse(1)?,
            seed: f.parse(2)?,
            truth: f.pair(3)?,
            oscillometric,
            tacho,
        };
        if !close(osc_err, row.oscillometric_errors()) || !close(tac_err, row.tacho_errors()) {
            return Err(Error::ReportMismatch(format!(
                "line {}: stored errors differ from |estimate - truth|",
                f.line
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Reloads an emitted report and verifies that its aggregates follow from
/// its rows.
pub fn load_report(dir: &Path) -> Result<ComparisonReport> {
    let rows = read_trials(&dir.join(TRIALS_FILE))?;
    let summary: SummaryFile = read_json(&dir.join(SUMMARY_FILE))?;
    let report = ComparisonReport::from_rows(summary.config, rows);

    if report.subjects.len() != summary.subjects.len() {
        return Err(Error::ReportMismatch(format!(
            "{} subjects in summary, {} in config",
            summary.subjects.len(),
            report.subjects.len()
        )));
    }
    for (got, want) in report.subjects.iter().zip(&summary.subjects) {
        if got.params != want.params || got.deviations.distance(&want.deviations) > CHECK_TOLERANCE {
            return Err(Error::ReportMismatch(format!("subject {} aggregates", want.subject)));
        }
    }
    let (g, w) = (&report.global, &summary.global);
    let bias_ok = match (g.tacho_sbp_bias_mmhg, w.tacho_sbp_bias_mmhg) {
        (Some(a), Some(b)) => (a - b).abs() <= CHECK_TOLERANCE,
        (None, None) => true,
        _ => false,
    };
    if g.trials != w.trials
        || g.oscillometric_failures != w.oscillometric_failures
        || g.tacho_failures != w.tacho_failures
        || g.deviations.distance(&w.deviations) > CHECK_TOLERANCE
        || !bias_ok
    {
        return Err(Error::ReportMismatch("global aggregates".into()));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::SubjectParams;

    fn sample_report() -> ComparisonReport {
        let cfg = ExperimentConfig {
            subjects: vec![SubjectParams::new(120.0, 80.0, 60.0), SubjectParams::new(140.0, 90.0, 70.0)],
            repeats_per_subject: 1,
            ..ExperimentConfig::default()
        };
        let rows = vec![
            TrialRow {
                subject: 0,
                trial: 0,
                seed: 11,
                truth: Some((120.1, 79.9)),
                oscillometric: Outcome::Estimate {
                    sbp_mmhg: 121.3,
                    dbp_mmhg: 79.0,
                },
                tacho: Outcome::Failed("missing_crossing".into()),
            },
            TrialRow {
                subject: 1,
                trial: 0,
                seed: 12,
                truth: None,
                oscillometric: Outcome::Failed("protocol_violation".into()),
                tacho: Outcome::Failed("protocol_violation".into()),
            },
        ];
        ComparisonReport::from_rows(cfg, rows)
    }

    #[test]
    fn round_trip() {
        let rep = sample_report();
        let dir = tempfile::tempdir().unwrap();
        emit_report(&rep, dir.path()).unwrap();
        assert_eq!(load_report(dir.path()).unwrap(), rep);
    }

    #[test]
    fn tampered_errors_detected() {
        let dir = tempfile::tempdir().unwrap();
        emit_report(&sample_report(), dir.path()).unwrap();
        let path = dir.path().join(TRIALS_FILE);
        let text = fs::read_to_string(&path).unwrap().replace("121.3", "122.3");
        fs::write(&path, text).unwrap();
        assert!(matches!(load_report(dir.path()), Err(Error::ReportMismatch(_))));
    }

    #[test]
    fn tampered_summary_detected() {
        let dir = tempfile::tempdir().unwrap();
        let mut rep = sample_report();
        rep.subjects[0].deviations.p1 = Some(0.5);
        emit_report(&rep, dir.path()).unwrap();
        assert!(matches!(load_report(dir.path()), Err(Error::ReportMismatch(_))));
    }

    #[test]
    fn empty_report_writes_headers() {
        let rep = ComparisonReport::from_rows(
            ExperimentConfig {
                subjects: vec![],
                ..ExperimentConfig::default()
            },
            vec![],
        );
        let dir = tempfile::tempdir().unwrap();
        emit_report(&rep, dir.path()).unwrap();
        let trials = fs::read_to_string(dir.path().join(TRIALS_FILE)).unwrap();
        assert_eq!(trials.lines().count(), 1);
        let fig3 = fs::read_to_string(dir.path().join(FIG3_FILE)).unwrap();
        assert_eq!(fig3, "subject,trial,method,marker,sbp_mmHg,dbp_mmHg\n");
        let svg = fs::read_to_string(dir.path().join(FIG3_SVG)).unwrap();
        assert!(svg.contains("<rect x=") && svg.contains("SBP, mmHg"));
    }
}
