use cuffcorr::dsp::{design_bandpass, BandpassSpec, FilterRealization};
use cuffcorr::oscillometric::{detect_bp_oscillometric, normalized_ccf, CcfConfig, CcfTrack};
use cuffcorr::tacho::{detect_bp_tacho, OscEnvelope, TachoConfig};
use cuffcorr::{CuffTrace, SampledSignal, Unit, Window};
use proptest::prelude::*;
use std::sync::OnceLock;

const FS: f64 = 100.0;

fn bandpass() -> &'static FilterRealization {
    static F: OnceLock<FilterRealization> = OnceLock::new();
    F.get_or_init(|| design_bandpass(&BandpassSpec::oscillation(), FS).unwrap())
}

fn signal(xs: Vec<f64>) -> SampledSignal {
    SampledSignal::new(xs, FS, 0.0, Unit::MmHg).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn filter_is_linear(
        x in prop::collection::vec(-10.0..10.0f64, 200..400),
        seed in any::<u64>(),
        a in -3.0..3.0f64,
        b in -3.0..3.0f64,
    ) {
        let n = x.len();
        let y: Vec<f64> = (0..n).map(|i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f64 / 100.0 - 5.0).collect();
        let f = bandpass();
        let fx = f.apply(&signal(x.clone())).unwrap();
        let fy = f.apply(&signal(y.clone())).unwrap();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let fm = f.apply(&signal(mix)).unwrap();
        let expect: Vec<f64> = fx.samples().iter().zip(fy.samples()).map(|(u, v)| a * u + b * v).collect();
        prop_assert!(close(fm.samples(), &expect, 1e-9));
    }

    #[test]
    fn filter_is_causal(
        x in prop::collection::vec(-10.0..10.0f64, 100..300),
        cut_frac in 0.1..0.9f64,
        tail in -50.0..50.0f64,
    ) {
        let k = (x.len() as f64 * cut_frac) as usize;
        let mut changed = x.clone();
        for v in &mut changed[k..] {
            *v += tail;
        }
        let f = bandpass();
        let a = f.apply(&signal(x)).unwrap();
        let b = f.apply(&signal(changed)).unwrap();
        prop_assert_eq!(&a.samples()[..k], &b.samples()[..k]);
    }

    #[test]
    fn ccf_ignores_gain_and_offset(
        f1 in 0.6..3.0f64,
        phase in 0.0..6.0f64,
        gain in 0.01..100.0f64,
        offset in -50.0..50.0f64,
    ) {
        let s1 = SampledSignal::from_fn(600, FS, 0.0, Unit::Millivolt, |t| (f1 * t).sin() + 0.4 * (2.7 * f1 * t + phase).cos()).unwrap();
        let s2 = SampledSignal::from_fn(600, FS, 0.0, Unit::Millivolt, |t| (f1 * t + phase).sin() + 0.2 * (5.3 * t).sin()).unwrap();
        let scaled = s1.with_samples(s1.samples().iter().map(|v| gain * v + offset).collect()).unwrap();
        let w = Window::new(1.0, 3.0).unwrap();
        let a = normalized_ccf(&s1, &s2, &w, 0.5).unwrap();
        let b = normalized_ccf(&scaled, &s2, &w, 0.5).unwrap();
        prop_assert_eq!(&a.lags_s, &b.lags_s);
        prop_assert!(a.values.iter().zip(&b.values).all(|(x, y)| (x - y).abs() < 1e-9));
    }

    #[test]
    fn nested_slices_compose(
        start in -5.0..5.0f64,
        a0 in 0usize..200,
        a_len in 200usize..600,
        b0_frac in 0.0..0.5f64,
        b_len_frac in 0.1..0.5f64,
    ) {
        // window starts on the sample grid; the outer slice begins at its first sample
        let s = SampledSignal::from_fn(1000, FS, start, Unit::Millivolt, |t| t * t).unwrap();
        let outer = Window::new(s.time_at(a0), a_len as f64 / FS).unwrap();
        let b0 = a0 + (b0_frac * a_len as f64) as usize;
        let inner = Window::new(s.time_at(b0), b_len_frac * a_len as f64 / FS).unwrap();
        let twice = s.slice(&outer).unwrap().slice(&inner).unwrap();
        let once = s.slice(&inner).unwrap();
        prop_assert_eq!(twice.samples(), once.samples());
        prop_assert!((twice.start_time_s() - once.start_time_s()).abs() < 1e-9);
    }

    #[test]
    fn tacho_ignores_envelope_scale(
        peak_at in 80.0..120.0f64,
        width in 10.0..30.0f64,
        scale in 0.5..50.0f64,
    ) {
        let mut env = OscEnvelope::default();
        for i in 0..60 {
            let p = 160.0 - 2.0 * i as f64;
            env.times_s.push(i as f64);
            env.cuff_pressure_mmhg.push(p);
            env.amplitude_mmhg.push(2.0 * (-((p - peak_at) / width).powi(2)).exp());
        }
        let cfg = TachoConfig { min_envelope_mmhg: 0.0, ..TachoConfig::default() };
        let a = detect_bp_tacho(&env, &cfg);
        env.amplitude_mmhg.iter_mut().for_each(|v| *v *= scale);
        let b = detect_bp_tacho(&env, &cfg);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                prop_assert!((a.sbp_mmhg - b.sbp_mmhg).abs() < 1e-9);
                prop_assert!((a.dbp_mmhg - b.dbp_mmhg).abs() < 1e-9);
            }
            (Err(a), Err(b)) => prop_assert_eq!(a.to_string(), b.to_string()),
            (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
        }
    }

    #[test]
    fn higher_systolic_threshold_reads_lower(
        steps in prop::collection::vec(0.0..0.05f64, 80..120),
        th_a in 0.05..0.5f64,
        th_b in 0.05..0.5f64,
    ) {
        // non-decreasing correlation track starting from zero, over a linear deflation
        let mut c = 0.0;
        let mut track = CcfTrack::default();
        for (i, s) in steps.iter().enumerate() {
            track.times_s.push(5.0 + 0.25 * i as f64);
            track.peak_corr.push(c);
            track.peak_lag_s.push(0.0);
            track.low_signal.push(false);
            c = (c + s).min(1.0);
        }
        let end = *track.times_s.last().unwrap() + 5.0;
        let pressure = SampledSignal::from_fn((end * FS) as usize + 1, FS, 0.0, Unit::MmHg, |t| 180.0 - 2.0 * t).unwrap();
        let cuff = CuffTrace::new(pressure, 0.0, end).unwrap();
        let (lo, hi) = if th_a <= th_b { (th_a, th_b) } else { (th_b, th_a) };
        let run = |th: f64| {
            let cfg = CcfConfig { thresh_sys: th, thresh_dias: 0.9, ..CcfConfig::default() };
            detect_bp_oscillometric(&track, &cuff, &cfg)
        };
        if let (Ok(a), Ok(b)) = (run(lo), run(hi)) {
            prop_assert!(a.t_sys_s <= b.t_sys_s + 1e-9);
            prop_assert!(a.sbp_mmhg >= b.sbp_mmhg - 1e-9);
            prop_assert!(a.sbp_mmhg > a.dbp_mmhg);
        }
    }
}
