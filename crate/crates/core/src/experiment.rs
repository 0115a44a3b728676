//! Comparison experiment: simulate a grid of subjects, run both estimators
//! on every record and compare them with the Korotkoff-marker pressures.
//!
//! Trials run in parallel. Rows are assembled in (subject, repeat) order, so
//! the report does not depend on scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oscillometric::{self, BpResult, CcfConfig};
use crate::simulator::{
    optional_frontend_pass, simulate_with, ArtifactSpec, OscillationParams, ProtocolParams, SimulationSettings,
    SubjectParams,
};
use crate::tacho::{self, TachoConfig};

pub const DEFAULT_SEED: u64 = 20_240_601;

/// Evenly spaced subjects: SBP, DBP and heart rate rise together from the
/// first to the last subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubjectGrid {
    #[serde(rename = "sbp_range_mmHg")]
    pub sbp_range_mmhg: [f64; 2],
    #[serde(rename = "dbp_range_mmHg")]
    pub dbp_range_mmhg: [f64; 2],
    pub hr_range_bpm: [f64; 2],
    pub count: usize,
}

impl Default for SubjectGrid {
    fn default() -> Self {
        Self {
            sbp_range_mmhg: [100.0, 160.0],
            dbp_range_mmhg: [60.0, 100.0],
            hr_range_bpm: [50.0, 90.0],
            count: 6,
        }
    }
}

impl SubjectGrid {
    pub fn subjects(&self) -> Vec<SubjectParams> {
        let lerp = |r: [f64; 2], f: f64| r[0] + (r[1] - r[0]) * f;
        (0..self.count)
            .map(|i| {
                let f = if self.count > 1 { i as f64 / (self.count - 1) as f64 } else { 0.0 };
                SubjectParams::new(
                    lerp(self.sbp_range_mmhg, f),
                    lerp(self.dbp_range_mmhg, f),
                    lerp(self.hr_range_bpm, f),
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Explicit subjects. When empty, `grid` is used.
    pub subjects: Vec<SubjectParams>,
    pub grid: SubjectGrid,
    pub repeats_per_subject: usize,
    pub noise_rms: f64,
    pub artifacts: ArtifactSpec,
    pub seed: u64,
    pub ccf: CcfConfig,
    pub tacho: TachoConfig,
    pub protocol: ProtocolParams,
    pub oscillation: OscillationParams,
    /// Raise the inflation target per subject to SBP + 30 mmHg when the
    /// protocol's target is lower.
    pub fit_inflation: bool,
    pub frontend_pass: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            subjects: Vec::new(),
            grid: SubjectGrid::default(),
            repeats_per_subject: 10,
            noise_rms: 0.05,
            artifacts: ArtifactSpec::none(),
            seed: DEFAULT_SEED,
            ccf: CcfConfig::default(),
            tacho: TachoConfig::default(),
            protocol: ProtocolParams::default(),
            oscillation: OscillationParams::default(),
            fit_inflation: true,
            frontend_pass: false,
        }
    }
}

impl ExperimentConfig {
    /// Two repeats per subject instead of ten.
    pub fn quick() -> Self {
        Self {
            repeats_per_subject: 2,
            ..Self::default()
        }
    }

    pub fn subject_list(&self) -> Vec<SubjectParams> {
        if self.subjects.is_empty() {
            self.grid.subjects()
        } else {
            self.subjects.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.repeats_per_subject == 0 {
            return bad("repeats_per_subject must be at least 1".into());
        }
        if self.subjects.is_empty() && self.grid.count == 0 {
            return bad("no subjects: give `subjects` or a grid with count >= 1".into());
        }
        if !(self.noise_rms.is_finite() && self.noise_rms >= 0.0) {
            return bad(format!("noise_rms {}", self.noise_rms));
        }
        for s in self.subject_list() {
            s.validate().map_err(|e| Error::InvalidConfig(e.to_string()))?;
        }
        self.artifacts.validate().map_err(|e| Error::InvalidConfig(e.to_string()))?;
        self.protocol.validate().map_err(|e| Error::InvalidConfig(e.to_string()))?;
        self.ccf.validate()?;
        self.tacho.validate()?;
        Ok(())
    }

    fn settings_for(&self, subject: &SubjectParams) -> SimulationSettings {
        let protocol = if self.fit_inflation {
            self.protocol.fitted_to(subject)
        } else {
            self.protocol
        };
        SimulationSettings {
            protocol,
            artifacts: self.artifacts,
            noise_rms: self.noise_rms,
            oscillation: self.oscillation,
        }
    }
}

/// Seed of one trial, derived from the experiment seed and the trial's
/// position (splitmix64 finalizer).
pub fn trial_seed(seed: u64, subject: usize, repeat: usize) -> u64 {
    let mut z = seed ^ ((subject as u64) << 32 | repeat as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Outcome of one estimator on one trial.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Estimate { sbp_mmhg: f64, dbp_mmhg: f64 },
    Failed(String),
}

impl Outcome {
    fn from_result(r: Result<BpResult>) -> Self {
        match r {
            Ok(bp) => Outcome::Estimate {
                sbp_mmhg: bp.sbp_mmhg,
                dbp_mmhg: bp.dbp_mmhg,
            },
            Err(e) => Outcome::Failed(e.code().to_string()),
        }
    }

    pub fn estimate(&self) -> Option<(f64, f64)> {
        match self {
            Outcome::Estimate { sbp_mmhg, dbp_mmhg } => Some((*sbp_mmhg, *dbp_mmhg)),
            Outcome::Failed(_) => None,
        }
    }

    pub fn error_code(&self) -> Option<&str> {
        match self {
            Outcome::Failed(code) => Some(code),
            Outcome::Estimate { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub subject: usize,
    pub trial: usize,
    pub seed: u64,
    /// Cuff pressure at the Korotkoff markers; `None` when simulation failed.
    pub truth: Option<(f64, f64)>,
    pub oscillometric: Outcome,
    pub tacho: Outcome,
}

impl TrialRow {
    fn abs_errors(&self, outcome: &Outcome) -> Option<(f64, f64)> {
        let (ts, td) = self.truth?;
        let (s, d) = outcome.estimate()?;
        Some(((s - ts).abs(), (d - td).abs()))
    }

    pub fn oscillometric_errors(&self) -> Option<(f64, f64)> {
        self.abs_errors(&self.oscillometric)
    }

    pub fn tacho_errors(&self) -> Option<(f64, f64)> {
        self.abs_errors(&self.tacho)
    }

    /// Signed tacho systolic error.
    pub fn tacho_sbp_bias(&self) -> Option<f64> {
        Some(self.tacho.estimate()?.0 - self.truth?.0)
    }
}

/// Mean absolute deviations in the four Table I parameters: P1/P2 systolic
/// and diastolic for the oscillometric method, P3/P4 for tacho.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Deviations {
    pub n_oscillometric: usize,
    pub n_tacho: usize,
    pub p1: Option<f64>,
    pub p2: Option<f64>,
    pub p3: Option<f64>,
    pub p4: Option<f64>,
}

impl Deviations {
    pub fn over<'a>(rows: impl Iterator<Item = &'a TrialRow> + Clone) -> Self {
        let osc: Vec<(f64, f64)> = rows.clone().filter_map(TrialRow::oscillometric_errors).collect();
        let tac: Vec<(f64, f64)> = rows.filter_map(TrialRow::tacho_errors).collect();
        let mean = |xs: &[(f64, f64)], f: fn(&(f64, f64)) -> f64| {
            (!xs.is_empty()).then(|| xs.iter().map(f).sum::<f64>() / xs.len() as f64)
        };
        Self {
            n_oscillometric: osc.len(),
            n_tacho: tac.len(),
            p1: mean(&osc, |e| e.0),
            p2: mean(&osc, |e| e.1),
            p3: mean(&tac, |e| e.0),
            p4: mean(&tac, |e| e.1),
        }
    }

    /// The largest difference to `other` across all fields; infinite when
    /// counts or presence differ.
    pub(crate) fn distance(&self, other: &Self) -> f64 {
        if self.n_oscillometric != other.n_oscillometric || self.n_tacho != other.n_tacho {
            return f64::INFINITY;
        }
        [(self.p1, other.p1), (self.p2, other.p2), (self.p3, other.p3), (self.p4, other.p4)]
            .iter()
            .map(|pair| match pair {
                (Some(a), Some(b)) => (a - b).abs(),
                (None, None) => 0.0,
                _ => f64::INFINITY,
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSummary {
    pub subject: usize,
    pub params: SubjectParams,
    pub deviations: Deviations,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GlobalSummary {
    pub trials: usize,
    pub deviations: Deviations,
    /// Mean signed tacho systolic error.
    #[serde(rename = "tacho_sbp_bias_mmHg")]
    pub tacho_sbp_bias_mmhg: Option<f64>,
    pub oscillometric_failures: usize,
    pub tacho_failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub config: ExperimentConfig,
    pub rows: Vec<TrialRow>,
    pub subjects: Vec<SubjectSummary>,
    pub global: GlobalSummary,
}

impl ComparisonReport {
    /// Builds the aggregates from `rows`.
    pub fn from_rows(config: ExperimentConfig, rows: Vec<TrialRow>) -> Self {
        let subjects = config
            .subject_list()
            .into_iter()
            .enumerate()
            .map(|(i, params)| SubjectSummary {
                subject: i,
                params,
                deviations: Deviations::over(rows.iter().filter(|r| r.subject == i)),
            })
            .collect();
        let biases: Vec<f64> = rows.iter().filter_map(TrialRow::tacho_sbp_bias).collect();
        let global = GlobalSummary {
            trials: rows.len(),
            deviations: Deviations::over(rows.iter()),
            tacho_sbp_bias_mmhg: (!biases.is_empty()).then(|| biases.iter().sum::<f64>() / biases.len() as f64),
            oscillometric_failures: rows.iter().filter(|r| r.oscillometric.error_code().is_some()).count(),
            tacho_failures: rows.iter().filter(|r| r.tacho.error_code().is_some()).count(),
        };
        Self {
            config,
            rows,
            subjects,
            global,
        }
    }

    /// True when neither estimator produced a single estimate.
    pub fn all_failed(&self) -> bool {
        self.global.deviations.n_oscillometric == 0 && self.global.deviations.n_tacho == 0
    }
}

fn run_trial(config: &ExperimentConfig, subject_idx: usize, subject: &SubjectParams, repeat: usize) -> TrialRow {
    let seed = trial_seed(config.seed, subject_idx, repeat);
    let failed = |e: Error| TrialRow {
        subject: subject_idx,
        trial: repeat,
        seed,
        truth: None,
        oscillometric: Outcome::Failed(e.code().to_string()),
        tacho: Outcome::Failed(e.code().to_string()),
    };
    let record = match simulate_with(subject, &config.settings_for(subject), seed) {
        Ok(r) => r,
        Err(e) => return failed(e),
    };
    let truth = match record.reference_bp() {
        Ok(t) => t,
        Err(e) => return failed(e),
    };
    let ppg = if config.frontend_pass {
        match optional_frontend_pass(&record) {
            Ok(r) => r,
            Err(e) => return failed(e),
        }
    } else {
        record
    };
    let osc = oscillometric::estimate(&ppg.main_ppg, &ppg.ref_ppg, &ppg.cuff, &config.ccf);
    let tac = tacho::estimate(&ppg.cuff, &config.tacho);
    TrialRow {
        subject: subject_idx,
        trial: repeat,
        seed,
        truth: Some(truth),
        oscillometric: Outcome::from_result(osc),
        tacho: Outcome::from_result(tac),
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ComparisonReport> {
    config.validate()?;
    let subjects = config.subject_list();
    let jobs: Vec<(usize, usize)> = (0..subjects.len())
        .flat_map(|s| (0..config.repeats_per_subject).map(move |r| (s, r)))
        .collect();
    let rows: Vec<TrialRow> = jobs
        .par_iter()
        .map(|&(s, r)| run_trial(config, s, &subjects[s], r))
        .collect();
    Ok(ComparisonReport::from_rows(config.clone(), rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(subject: usize, trial: usize, truth: (f64, f64), osc: (f64, f64), tac: Outcome) -> TrialRow {
        TrialRow {
            subject,
            trial,
            seed: 0,
            truth: Some(truth),
            oscillometric: Outcome::Estimate {
                sbp_mmhg: osc.0,
                dbp_mmhg: osc.1,
            },
            tacho: tac,
        }
    }

    #[test]
    fn aggregates_by_hand() {
        let cfg = ExperimentConfig {
            subjects: vec![SubjectParams::new(120.0, 80.0, 60.0)],
            ..ExperimentConfig::default()
        };
        let rows = vec![
            row(0, 0, (120.0, 80.0), (121.0, 78.0), Outcome::Estimate { sbp_mmhg: 124.0, dbp_mmhg: 80.5 }),
            row(0, 1, (118.0, 79.0), (117.0, 80.0), Outcome::Failed("missing_crossing".into())),
        ];
        let rep = ComparisonReport::from_rows(cfg, rows);
        let d = rep.subjects[0].deviations;
        assert_eq!(d.p1, Some(1.0));
        assert_eq!(d.p2, Some(1.5));
        assert_eq!(d.p3, Some(4.0));
        assert_eq!(d.p4, Some(0.5));
        assert_eq!((d.n_oscillometric, d.n_tacho), (2, 1));
        assert_eq!(rep.global.tacho_sbp_bias_mmhg, Some(4.0));
        assert_eq!(rep.global.tacho_failures, 1);
        assert!(!rep.all_failed());
    }

    #[test]
    fn grid_spacing() {
        let s = SubjectGrid::default().subjects();
        assert_eq!(s.len(), 6);
        assert_eq!((s[0].sbp_mmhg, s[5].sbp_mmhg), (100.0, 160.0));
        assert!((s[1].dbp_mmhg - 68.0).abs() < 1e-12);
        assert!((s[5].heart_rate_bpm - 90.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.repeats_per_subject = 0;
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        let cfg = ExperimentConfig {
            grid: SubjectGrid {
                count: 0,
                ..SubjectGrid::default()
            },
            ..ExperimentConfig::default()
        };
        assert!(matches!(run_experiment(&cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn seeds_differ_per_trial() {
        let mut seen = std::collections::HashSet::new();
        for s in 0..6 {
            for r in 0..10 {
                assert!(seen.insert(trial_seed(DEFAULT_SEED, s, r)));
            }
        }
    }

    #[test]
    fn failed_simulation_becomes_a_row() {
        let cfg = ExperimentConfig {
            subjects: vec![SubjectParams::new(200.0, 100.0, 60.0)],
            repeats_per_subject: 1,
            fit_inflation: false,
            ..ExperimentConfig::default()
        };
        let rep = run_experiment(&cfg).unwrap();
        assert_eq!(rep.rows[0].oscillometric.error_code(), Some("protocol_violation"));
        assert!(rep.all_failed());
    }
}
