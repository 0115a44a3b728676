//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Run with `cargo test --test acceptance`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cuffcorr::dsp::{design_bandpass, modulate_carrier, synchronous_demodulate, BandpassSpec, CARRIER_HZ, CARRIER_RATE_HZ};
use cuffcorr::experiment::{run_experiment, ComparisonReport, ExperimentConfig};
use cuffcorr::oscillometric::{correlation_track, normalized_ccf, CcfConfig};
use cuffcorr::report::emit_report;
use cuffcorr::simulator::{simulate_measurement, ArtifactSpec, ProtocolParams, PulseShape, SubjectParams};
use cuffcorr::{SampledSignal, Unit, Window};

const OSC_MAX_MMHG: f64 = 2.0;
const TACHO_MAX_MMHG: f64 = 3.0;
const GRID_BUDGET: Duration = Duration::from_secs(60);
const CCF_TOL: f64 = 1e-9;
const CCF_PAIRS: usize = 200;
const CCF_MAX_LEN: usize = 512;
const CCF_BUDGET: Duration = Duration::from_secs(10);
const PASS_TOL_DB: f64 = 1.0;
const STOP_MIN_DB: f64 = 80.0;
const SWEEP_TONES: usize = 40;
const ROUND_TRIP_MAX: f64 = 0.02;
const OPEN_MIN_CORR: f64 = 0.98;
const CLOSED_MAX_CORR: f64 = 0.02;
const FS: f64 = 100.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(n: usize, name: &str, o: &Outcome) {
    println!(
        "{} criterion {n} ({name}): {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.3}"))
}

fn grid_accuracy(clean: &ComparisonReport, elapsed: Duration) -> Outcome {
    let mut pass = elapsed <= GRID_BUDGET;
    let mut worst = [0.0f64; 4];
    for s in &clean.subjects {
        let d = s.deviations;
        for (k, (v, lim)) in [(d.p1, OSC_MAX_MMHG), (d.p2, OSC_MAX_MMHG), (d.p3, TACHO_MAX_MMHG), (d.p4, TACHO_MAX_MMHG)]
            .into_iter()
            .enumerate()
        {
            match v {
                Some(x) => {
                    worst[k] = worst[k].max(x);
                    pass &= x <= lim;
                }
                None => pass = false,
            }
        }
    }
    let g = clean.global.deviations;
    Outcome {
        pass,
        detail: format!(
            "worst per-subject P1 {:.3} P2 {:.3} (<= {OSC_MAX_MMHG}), P3 {:.3} P4 {:.3} (<= {TACHO_MAX_MMHG}); \
             grid P1 {} P2 {} P3 {} P4 {}; failures osc {} tacho {}; {:.1} s (<= {} s)",
            worst[0],
            worst[1],
            worst[2],
            worst[3],
            fmt(g.p1),
            fmt(g.p2),
            fmt(g.p3),
            fmt(g.p4),
            clean.global.oscillometric_failures,
            clean.global.tacho_failures,
            elapsed.as_secs_f64(),
            GRID_BUDGET.as_secs()
        ),
    }
}

fn systolic_bias(clean: &ComparisonReport) -> Outcome {
    let bias = clean.global.tacho_sbp_bias_mmhg;
    Outcome {
        pass: bias.is_some_and(|b| b > 0.0),
        detail: format!("mean(tacho SBP - reference SBP) = {} mmHg (> 0)", fmt(bias)),
    }
}

/// Direct evaluation of the normalized cross-correlation at whole-sample
/// lag `k`: pairs (a[i], b[i - k]), each side centered on its own mean over
/// the overlap.
fn brute_ccf(a: &[f64], b: &[f64], k: isize) -> f64 {
    let n = a.len() as isize;
    let pairs: Vec<(f64, f64)> = (0..n)
        .filter(|&i| i - k >= 0 && i - k < n)
        .map(|i| (a[i as usize], b[(i - k) as usize]))
        .collect();
    let m = pairs.len() as f64;
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / m;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pairs.iter().map(|p| (p.0 - ma) * (p.1 - mb)).sum();
    let sxx: f64 = pairs.iter().map(|p| (p.0 - ma).powi(2)).sum();
    let syy: f64 = pairs.iter().map(|p| (p.1 - mb).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

fn ccf_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for _ in 0..CCF_PAIRS {
        let n = rng.random_range(8..=CCF_MAX_LEN);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        // partly dependent signals so correlations span the whole range
        let mix: f64 = rng.random_range(0.0..1.0);
        let b: Vec<f64> = a
            .iter()
            .map(|x| mix * x + (1.0 - mix) * rng.random_range(-1.0..1.0) + 3.0)
            .collect();
        let max_lag = rng.random_range(0..=n - 2);
        let sa = SampledSignal::new(a.clone(), FS, 0.0, Unit::Millivolt).unwrap();
        let sb = SampledSignal::new(b.clone(), FS, 0.0, Unit::Millivolt).unwrap();
        let w = Window::new(0.0, n as f64 / FS).unwrap();
        let curve = match normalized_ccf(&sa, &sb, &w, max_lag as f64 / FS) {
            Ok(c) => c,
            Err(e) => {
                return Outcome {
                    pass: false,
                    detail: format!("n {n}, max lag {max_lag}: {e}"),
                }
            }
        };
        if curve.values.len() != 2 * max_lag + 1 {
            return Outcome {
                pass: false,
                detail: format!("n {n}: {} lags, expected {}", curve.values.len(), 2 * max_lag + 1),
            };
        }
        for (idx, (&lag_s, &v)) in curve.lags_s.iter().zip(&curve.values).enumerate() {
            let k = idx as isize - max_lag as isize;
            assert!((lag_s - k as f64 / FS).abs() < 1e-12);
            worst = worst.max((v - brute_ccf(&a, &b, k)).abs());
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    Outcome {
        pass: worst <= CCF_TOL && elapsed <= CCF_BUDGET,
        detail: format!(
            "{CCF_PAIRS} pairs, {checked} lags, max |diff| {worst:.2e} (<= {CCF_TOL:e}); {:.2} s",
            elapsed.as_secs_f64()
        ),
    }
}

/// Steady-state gain of `tone_hz` through the filter, measured in the time
/// domain by projecting the settled output on sine and cosine over whole
/// periods.
fn measured_gain_db(filter: &cuffcorr::dsp::FilterRealization, tone_hz: f64) -> f64 {
    let period = 1.0 / tone_hz;
    let periods = (20.0 * tone_hz).ceil().max(4.0);
    let settle = filter.settling_time_s() + 2.0 * period;
    let n = ((settle + periods * period) * FS).ceil() as usize;
    let x = SampledSignal::from_fn(n, FS, 0.0, Unit::Dimensionless, |t| (2.0 * PI * tone_hz * t).sin()).unwrap();
    let y = filter.apply(&x).unwrap();
    let i0 = n - (periods * period * FS).round() as usize;
    let (mut s, mut c) = (0.0, 0.0);
    for i in i0..n {
        let t = i as f64 / FS;
        s += y.samples()[i] * (2.0 * PI * tone_hz * t).sin();
        c += y.samples()[i] * (2.0 * PI * tone_hz * t).cos();
    }
    let m = (n - i0) as f64;
    let amp = 2.0 * (s * s + c * c).sqrt() / m;
    20.0 * amp.log10()
}

fn filter_sweep() -> Outcome {
    let spec = BandpassSpec::oscillation();
    let filter = match design_bandpass(&spec, FS) {
        Ok(f) => f,
        Err(e) => {
            return Outcome {
                pass: false,
                detail: e.to_string(),
            }
        }
    };
    let lo = spec.stop_lo_hz / 4.0;
    let hi = (4.0 * spec.stop_hi_hz).min(0.95 * FS / 2.0);
    let mut tones: Vec<f64> = (0..SWEEP_TONES)
        .map(|i| lo * (hi / lo).powf(i as f64 / (SWEEP_TONES - 1) as f64))
        .collect();
    tones.extend([spec.stop_lo_hz, spec.pass_lo_hz, spec.pass_hi_hz, spec.stop_hi_hz]);
    let (mut pass_dev, mut stop_worst) = (0.0f64, f64::NEG_INFINITY);
    let (mut n_pass, mut n_stop) = (0, 0);
    for &f in &tones {
        let g = measured_gain_db(&filter, f);
        if f >= spec.pass_lo_hz - 1e-12 && f <= spec.pass_hi_hz + 1e-12 {
            pass_dev = pass_dev.max(g.abs());
            n_pass += 1;
        } else if f <= spec.stop_lo_hz + 1e-12 || f >= spec.stop_hi_hz - 1e-12 {
            stop_worst = stop_worst.max(g);
            n_stop += 1;
        }
    }
    Outcome {
        pass: pass_dev <= PASS_TOL_DB && stop_worst <= -STOP_MIN_DB && n_pass > 0 && n_stop > 0,
        detail: format!(
            "order {}; {n_pass} passband tones within {pass_dev:.3} dB (<= {PASS_TOL_DB}); \
             {n_stop} stopband tones at most {stop_worst:.1} dB (<= -{STOP_MIN_DB})",
            filter.order()
        ),
    }
}

fn front_end_round_trip() -> Outcome {
    let shape = PulseShape::new(72.0);
    let env = SampledSignal::from_fn(1200, FS, 0.0, Unit::Millivolt, |t| 0.3 + shape.pulse(t)).unwrap();
    let out = modulate_carrier(&env, CARRIER_HZ, CARRIER_RATE_HZ, 0.5)
        .and_then(|raw| synchronous_demodulate(&raw, CARRIER_HZ));
    let out = match out {
        Ok(o) => o,
        Err(e) => {
            return Outcome {
                pass: false,
                detail: e.to_string(),
            }
        }
    };
    let skip = out.meta().transient_end_s.unwrap_or(0.0);
    let i0 = (skip * FS).ceil() as usize;
    let n = out.len().min(env.len());
    let (mut num, mut den) = (0.0, 0.0);
    for i in i0..n {
        num += (out.samples()[i] - env.samples()[i]).powi(2);
        den += env.samples()[i].powi(2);
    }
    let err = (num / den).sqrt();
    Outcome {
        pass: err <= ROUND_TRIP_MAX && n > i0 + 100,
        detail: format!(
            "relative RMS error {:.3}% (<= {}%) over {} samples after {skip:.2} s transient",
            100.0 * err,
            100.0 * ROUND_TRIP_MAX,
            n - i0
        ),
    }
}

fn occlusion_semantics() -> Outcome {
    let subject = SubjectParams::new(120.0, 80.0, 60.0);
    let rec = simulate_measurement(&subject, &ProtocolParams::default(), &ArtifactSpec::none(), 0.0, 1).unwrap();
    let cfg = CcfConfig::default();
    let track = correlation_track(&rec.main_ppg, &rec.ref_ppg, &rec.cuff, &cfg).unwrap();
    let pressure = rec.cuff.pressure();
    let (mut open_min, mut closed_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut n_open, mut n_closed) = (0, 0);
    let mut partial_lags = Vec::new();
    for i in 0..track.len() {
        let w = Window::new(track.times_s[i] - cfg.window_t_s / 2.0, cfg.window_t_s).unwrap();
        let seg = pressure.slice(&w).unwrap();
        let hi = seg.samples().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = seg.samples().iter().cloned().fold(f64::INFINITY, f64::min);
        let c = track.peak_corr[i];
        if hi < subject.dbp_mmhg {
            open_min = open_min.min(c);
            n_open += 1;
        } else if lo > subject.sbp_mmhg {
            closed_max = closed_max.max(c);
            n_closed += 1;
        } else if lo > subject.dbp_mmhg && hi < subject.sbp_mmhg {
            partial_lags.push(track.peak_lag_s[i]);
        }
    }
    let rise = partial_lags
        .windows(2)
        .map(|p| p[1] - p[0])
        .fold(f64::NEG_INFINITY, f64::max);
    // tolerance of one hop for any upward step; the band as a whole must
    // still go from the full transit delay down to zero
    let tol = cfg.hop_s;
    let quarter = (partial_lags.len() / 4).max(1);
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len().max(1) as f64;
    let first = mean(&partial_lags[..quarter.min(partial_lags.len())]);
    let last = mean(&partial_lags[partial_lags.len().saturating_sub(quarter)..]);
    Outcome {
        pass: n_open > 0 && n_closed > 0 && partial_lags.len() > 1 && open_min >= OPEN_MIN_CORR && closed_max <= CLOSED_MAX_CORR && rise <= tol + 1e-12 && first > last + 2.0 / FS,
        detail: format!(
            "below DBP min corr {open_min:.4} over {n_open} windows (>= {OPEN_MIN_CORR}); above SBP max corr {closed_max:.4} \
             over {n_closed} windows (<= {CLOSED_MAX_CORR}); partial band lag {first:.3} -> {last:.3} s (first/last quarter means) \
             over {} windows, largest step up {rise:.3} s (<= one hop, {tol} s)",
            partial_lags.len()
        ),
    }
}

fn artifact_ordering(clean: &ComparisonReport, spiky: &ComparisonReport) -> Outcome {
    let (c, s) = (clean.global.deviations, spiky.global.deviations);
    match (c.p1, s.p1, c.p3, s.p3) {
        (Some(c1), Some(s1), Some(c3), Some(s3)) => {
            let (d_osc, d_tacho) = (s1 - c1, s3 - c3);
            Outcome {
                pass: d_osc < d_tacho,
                detail: format!(
                    "SBP error increase with motion spikes: oscillometric {c1:.3} -> {s1:.3} (+{d_osc:.3}), \
                     tacho {c3:.3} -> {s3:.3} (+{d_tacho:.3})"
                ),
            }
        }
        _ => Outcome {
            pass: false,
            detail: "an estimator produced no estimates".into(),
        },
    }
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism(first: &ComparisonReport, config: &ExperimentConfig) -> Outcome {
    let second = run_experiment(config).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    emit_report(first, a.path()).unwrap();
    emit_report(&second, b.path()).unwrap();
    let (fa, fb) = (dir_bytes(a.path()), dir_bytes(b.path()));
    let differing: Vec<&str> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    Outcome {
        pass: fa.len() == fb.len() && differing.is_empty() && !fa.is_empty(),
        detail: format!(
            "{} files, {} bytes; differing: {}",
            fa.len(),
            fa.iter().map(|f| f.1.len()).sum::<usize>(),
            if differing.is_empty() { "none".to_string() } else { differing.join(", ") }
        ),
    }
}

fn main() -> ExitCode {
    let clean_cfg = ExperimentConfig::default();
    let start = Instant::now();
    let clean = run_experiment(&clean_cfg).expect("default grid runs");
    let grid_time = start.elapsed();
    let spiky_cfg = ExperimentConfig {
        artifacts: "motion_spike:main_only:6:1.0".parse().unwrap(),
        ..ExperimentConfig::default()
    };
    let spiky = run_experiment(&spiky_cfg).expect("artifact grid runs");

    let results = [
        ("grid accuracy", grid_accuracy(&clean, grid_time)),
        ("tacho systolic bias", systolic_bias(&clean)),
        ("ccf oracle", ccf_oracle()),
        ("filter spec", filter_sweep()),
        ("front-end round trip", front_end_round_trip()),
        ("occlusion semantics", occlusion_semantics()),
        ("artifact ordering", artifact_ordering(&clean, &spiky)),
        ("determinism", determinism(&clean, &clean_cfg)),
    ];
    for (i, (name, o)) in results.iter().enumerate() {
        report(i + 1, name, o);
    }
    if results.iter().all(|(_, o)| o.pass) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
