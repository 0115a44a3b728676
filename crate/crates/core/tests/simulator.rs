use cuffcorr::simulator::{
    optional_frontend_pass, relative_rms_difference, simulate_measurement, Affects, ArtifactSpec, ProtocolParams,
    SubjectParams,
};
use cuffcorr::Error;

fn subject() -> SubjectParams {
    SubjectParams::new(125.0, 82.0, 66.0)
}

#[test]
fn markers_sit_on_truth() {
    for seed in 0..5 {
        let rec = simulate_measurement(&subject(), &ProtocolParams::default(), &ArtifactSpec::none(), 0.05, seed).unwrap();
        let (sbp, dbp) = rec.reference_bp().unwrap();
        assert!((sbp - 125.0).abs() <= 0.5, "sbp {sbp}");
        assert!((dbp - 82.0).abs() <= 0.5, "dbp {dbp}");
        assert!(rec.korotkoff_markers.t_first_tone_s < rec.korotkoff_markers.t_last_tone_s);
    }
}

#[test]
fn same_seed_same_record() {
    let art = ArtifactSpec::motion_spikes(6.0, 1.0, Affects::BothInPhase);
    let a = simulate_measurement(&subject(), &ProtocolParams::default(), &art, 0.05, 9).unwrap();
    let b = simulate_measurement(&subject(), &ProtocolParams::default(), &art, 0.05, 9).unwrap();
    let c = simulate_measurement(&subject(), &ProtocolParams::default(), &art, 0.05, 10).unwrap();
    assert_eq!(a.main_ppg, b.main_ppg);
    assert_eq!(a.ref_ppg, b.ref_ppg);
    assert_eq!(a.cuff, b.cuff);
    assert_ne!(a.main_ppg, c.main_ppg);
}

#[test]
fn deflation_rate_matches_protocol() {
    for rate in [1.5, 2.0, 3.0] {
        let protocol = ProtocolParams {
            deflation_rate_mmhg_per_s: rate,
            ..ProtocolParams::default()
        };
        let rec = simulate_measurement(&subject(), &protocol, &ArtifactSpec::none(), 0.05, 1).unwrap();
        let fitted = rec.cuff.deflation_rate().unwrap();
        assert!((fitted - rate).abs() <= 0.01 * rate, "rate {rate}: fitted {fitted}");
    }
}

/// Peak-to-peak of the main channel over consecutive beats.
fn beat_amplitudes(rec: &cuffcorr::simulator::MeasurementRecord, t0: f64, t1: f64) -> Vec<f64> {
    let period = 60.0 / rec.truth.heart_rate_bpm;
    let main = &rec.main_ppg;
    let mut out = Vec::new();
    let mut t = t0;
    while t + period <= t1 {
        let i0 = (t * main.sample_rate_hz()).ceil() as usize;
        let i1 = ((t + period) * main.sample_rate_hz()).floor() as usize;
        let seg = &main.samples()[i0..i1];
        let hi = seg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = seg.iter().cloned().fold(f64::INFINITY, f64::min);
        out.push(hi - lo);
        t += period;
    }
    out
}

#[test]
fn pulse_returns_as_cuff_deflates() {
    let rec = simulate_measurement(&subject(), &ProtocolParams::default(), &ArtifactSpec::none(), 0.0, 1).unwrap();
    let m = rec.korotkoff_markers;
    let amps = beat_amplitudes(&rec, rec.cuff.deflation_start_s(), rec.cuff.deflation_end_s());
    // nothing above SBP, full-size pulses below DBP, growth in between
    let period = 60.0 / rec.truth.heart_rate_bpm;
    let beat_of = |t: f64| ((t - rec.cuff.deflation_start_s()) / period) as usize;
    assert!(amps[..beat_of(m.t_first_tone_s)].iter().all(|&a| a == 0.0));
    for w in amps[beat_of(m.t_first_tone_s)..beat_of(m.t_last_tone_s)].windows(2) {
        assert!(w[1] >= w[0] - 1e-9, "{w:?}");
    }
    for &a in &amps[beat_of(m.t_last_tone_s) + 1..] {
        assert!((a - rec.truth.ppg_amp).abs() < 0.01, "{a}");
    }
}

#[test]
fn invalid_subjects_rejected() {
    let p = ProtocolParams::default();
    let none = ArtifactSpec::none();
    assert!(matches!(
        simulate_measurement(&SubjectParams::new(80.0, 90.0, 60.0), &p, &none, 0.0, 0),
        Err(Error::InvalidPressurePair { .. })
    ));
    assert!(matches!(
        simulate_measurement(&SubjectParams::new(120.0, 80.0, 10.0), &p, &none, 0.0, 0),
        Err(Error::InvalidParams(_))
    ));
    assert!(matches!(
        simulate_measurement(&subject(), &p, &none, -1.0, 0),
        Err(Error::InvalidParams(_))
    ));
}

#[test]
fn spikes_on_main_only_leave_reference_alone() {
    let p = ProtocolParams::default();
    let clean = simulate_measurement(&subject(), &p, &ArtifactSpec::none(), 0.05, 4).unwrap();
    let spiky = simulate_measurement(&subject(), &p, &ArtifactSpec::motion_spikes(12.0, 1.0, Affects::MainOnly), 0.05, 4).unwrap();
    assert_eq!(clean.ref_ppg, spiky.ref_ppg);
    assert_ne!(clean.main_ppg, spiky.main_ppg);
    let both = simulate_measurement(&subject(), &p, &ArtifactSpec::motion_spikes(12.0, 1.0, Affects::BothInPhase), 0.05, 4).unwrap();
    assert_ne!(clean.ref_ppg, both.ref_ppg);
}

#[test]
fn frontend_pass_is_transparent() {
    // noise-free: white noise above the demodulation low-pass would be removed and count as error
    let rec = simulate_measurement(&subject(), &ProtocolParams::default(), &ArtifactSpec::none(), 0.0, 2).unwrap();
    let passed = optional_frontend_pass(&rec).unwrap();
    assert!(passed.main_ppg.meta().frontend_pass);
    assert_eq!(passed.main_ppg.sample_rate_hz(), rec.main_ppg.sample_rate_hz());
    let err = relative_rms_difference(&passed.ref_ppg, &rec.ref_ppg, 1.0);
    assert!(err <= 0.02, "{err}");
}
