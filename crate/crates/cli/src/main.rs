//! Command-line harness: simulate records, analyze traces, run the
//! method-comparison experiment and inspect the oscillation filter.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use cuffcorr::dsp::{design_bandpass, BandpassSpec, WORKING_RATE_HZ};
use cuffcorr::experiment::{run_experiment, ExperimentConfig, Outcome};
use cuffcorr::io::{self, load_channels, Manifest};
use cuffcorr::oscillometric;
use cuffcorr::report::emit_report;
use cuffcorr::simulator::{optional_frontend_pass, simulate_with, ArtifactSpec, SimulationSettings, SubjectParams};
use cuffcorr::tacho;
use cuffcorr::Error;
use serde::de::DeserializeOwned;
use serde_json::json;

const EXIT_CONFIG: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_ALL_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "cuffcorr", version, about = "Cuff blood-pressure estimation from PPG correlation and cuff oscillations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one measurement and write its channels and manifest.
    Simulate(SimulateArgs),
    /// Run both estimators on recorded or exported traces.
    Analyze(AnalyzeArgs),
    /// Run the subject grid and emit tables, plots and a summary.
    Experiment(ExperimentArgs),
    /// Design the cuff-oscillation band-pass and write its response.
    FilterReport(FilterArgs),
}

#[derive(Args)]
struct Common {
    /// JSON configuration; every field is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Run PPG channels through the carrier modulate/demodulate chain.
    #[arg(long)]
    frontend_pass: bool,
    /// Artifact spec, `none` or `kind:affects:rate_per_min:magnitude`
    /// (e.g. `motion_spike:main_only:6:1.0`).
    #[arg(long)]
    artifacts: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "record")]
    out: PathBuf,
    /// Index into the configured subject list.
    #[arg(long, default_value_t = 0)]
    subject: usize,
    #[arg(long, requires_all = ["dbp", "hr"])]
    sbp: Option<f64>,
    #[arg(long, requires_all = ["sbp", "hr"])]
    dbp: Option<f64>,
    #[arg(long, requires_all = ["sbp", "dbp"])]
    hr: Option<f64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Record directory holding main.csv, ref.csv, cuff.csv and optionally
    /// manifest.json.
    dir: Option<PathBuf>,
    #[arg(long, conflicts_with = "dir", requires_all = ["reference", "cuff"])]
    main: Option<PathBuf>,
    #[arg(long = "ref", conflicts_with = "dir", requires_all = ["main", "cuff"])]
    reference: Option<PathBuf>,
    #[arg(long, conflicts_with = "dir", requires_all = ["main", "reference"])]
    cuff: Option<PathBuf>,
    #[arg(long, conflicts_with = "dir")]
    manifest: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write the result to <out>/analysis.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "report")]
    out: PathBuf,
    /// Two repeats per subject instead of ten.
    #[arg(long)]
    quick: bool,
}

#[derive(Args)]
struct FilterArgs {
    /// Band-pass spec as JSON; defaults to the 0.5-2 Hz oscillation filter.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = WORKING_RATE_HZ)]
    rate: f64,
    #[arg(long, default_value = "filter")]
    out: PathBuf,
}

enum Failure {
    Config(String),
    Io(String),
    AllFailed(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Io(_) => EXIT_IO,
            Failure::AllFailed(_) => EXIT_ALL_FAILED,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Io(m) | Failure::AllFailed(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { .. } | Error::Format { .. } | Error::Alignment(_) | Error::ReportMismatch(_) => {
                Failure::Io(e.to_string())
            }
            Error::Json { .. } => Failure::Io(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Reads a JSON config. A missing file is an I/O failure, a malformed one a
/// config failure.
fn read_json_file<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    path.map_or_else(|| Ok(T::default()), read_json_file)
}

fn experiment_config(common: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg: ExperimentConfig = read_config(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(spec) = &common.artifacts {
        cfg.artifacts = spec.parse::<ArtifactSpec>().map_err(|e| Failure::Config(e.to_string()))?;
    }
    cfg.frontend_pass |= common.frontend_pass;
    Ok(cfg)
}

fn simulate(args: SimulateArgs) -> CliResult<()> {
    let cfg = experiment_config(&args.common)?;
    cfg.validate()?;
    let subject = match (args.sbp, args.dbp, args.hr) {
        (Some(s), Some(d), Some(h)) => SubjectParams::new(s, d, h),
        _ => {
            let list = cfg.subject_list();
            *list.get(args.subject).ok_or_else(|| {
                Failure::Config(format!("subject {} out of range ({} configured)", args.subject, list.len()))
            })?
        }
    };
    let protocol = if cfg.fit_inflation {
        cfg.protocol.fitted_to(&subject)
    } else {
        cfg.protocol
    };
    let settings = SimulationSettings {
        protocol,
        artifacts: cfg.artifacts,
        noise_rms: cfg.noise_rms,
        oscillation: cfg.oscillation,
    };
    let mut record = simulate_with(&subject, &settings, cfg.seed)?;
    if cfg.frontend_pass {
        record = optional_frontend_pass(&record)?;
    }
    io::write_record(&args.out, &record)?;
    let (sbp, dbp) = record.reference_bp()?;
    println!(
        "wrote {}: {:.1} s at {} Hz, reference {:.1}/{:.1} mmHg",
        args.out.display(),
        record.main_ppg.duration_s(),
        record.main_ppg.sample_rate_hz(),
        sbp,
        dbp
    );
    Ok(())
}

fn outcome_json(r: &cuffcorr::Result<oscillometric::BpResult>, truth: Option<(f64, f64)>) -> serde_json::Value {
    match r {
        Ok(bp) => {
            let mut v = serde_json::to_value(bp).expect("result serializes");
            if let Some((sbp, dbp)) = truth {
                v["sbp_abs_err"] = json!((bp.sbp_mmhg - sbp).abs());
                v["dbp_abs_err"] = json!((bp.dbp_mmhg - dbp).abs());
            }
            v
        }
        Err(e) => json!({ "error": e.code(), "message": e.to_string() }),
    }
}

fn analyze(args: AnalyzeArgs) -> CliResult<()> {
    let cfg: ExperimentConfig = read_config(args.config.as_deref())?;
    cfg.ccf.validate()?;
    cfg.tacho.validate()?;
    let (main, reference, cuff, manifest_path) = match (&args.dir, &args.main, &args.reference, &args.cuff) {
        (Some(dir), ..) => {
            let m = dir.join(io::MANIFEST_FILE);
            (
                dir.join(io::MAIN_FILE),
                dir.join(io::REF_FILE),
                dir.join(io::CUFF_FILE),
                m.exists().then_some(m),
            )
        }
        (None, Some(m), Some(r), Some(c)) => (m.clone(), r.clone(), c.clone(), args.manifest.clone()),
        _ => return Err(Failure::Config("give a record directory or --main, --ref and --cuff".into())),
    };
    let manifest: Option<Manifest> = manifest_path.as_deref().map(io::read_json).transpose()?;
    let (main, reference, cuff) = load_channels(&main, &reference, &cuff, manifest.as_ref())?;

    let osc = oscillometric::estimate(&main, &reference, &cuff, &cfg.ccf);
    let tac = tacho::estimate(&cuff, &cfg.tacho);
    let truth = manifest.as_ref().map(|m| (m.reference_sbp_mmhg, m.reference_dbp_mmhg));
    let mut out = json!({
        "oscillometric": outcome_json(&osc, truth),
        "tacho": outcome_json(&tac, truth),
    });
    if let Some((sbp, dbp)) = truth {
        out["reference"] = json!({ "sbp_mmHg": sbp, "dbp_mmHg": dbp });
    }
    let text = serde_json::to_string_pretty(&out).expect("json value serializes");
    println!("{text}");
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
        let path = dir.join("analysis.json");
        fs::write(&path, format!("{text}\n")).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    }
    if osc.is_err() && tac.is_err() {
        return Err(Failure::AllFailed("both estimators failed".into()));
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.2}"))
}

fn experiment(args: ExperimentArgs) -> CliResult<()> {
    let mut cfg = experiment_config(&args.common)?;
    if args.quick {
        cfg.repeats_per_subject = ExperimentConfig::quick().repeats_per_subject;
    }
    let started = Instant::now();
    let report = run_experiment(&cfg)?;
    emit_report(&report, &args.out)?;

    let g = &report.global;
    eprintln!(
        "{} trials in {:.1} s, written to {}",
        g.trials,
        started.elapsed().as_secs_f64(),
        args.out.display()
    );
    println!("subject  sbp    dbp    hr     P1     P2     P3     P4");
    for s in &report.subjects {
        let d = s.deviations;
        println!(
            "{:<8} {:<6.1} {:<6.1} {:<6.1} {:<6} {:<6} {:<6} {}",
            s.subject,
            s.params.sbp_mmhg,
            s.params.dbp_mmhg,
            s.params.heart_rate_bpm,
            fmt_opt(d.p1),
            fmt_opt(d.p2),
            fmt_opt(d.p3),
            fmt_opt(d.p4)
        );
    }
    println!(
        "all      P1 {}  P2 {}  P3 {}  P4 {}  tacho SBP bias {}  failures osc {} tacho {}",
        fmt_opt(g.deviations.p1),
        fmt_opt(g.deviations.p2),
        fmt_opt(g.deviations.p3),
        fmt_opt(g.deviations.p4),
        fmt_opt(g.tacho_sbp_bias_mmhg),
        g.oscillometric_failures,
        g.tacho_failures
    );
    if report.all_failed() {
        let first = report
            .rows
            .iter()
            .find_map(|r| match &r.oscillometric {
                Outcome::Failed(code) => Some(code.clone()),
                _ => None,
            })
            .unwrap_or_default();
        return Err(Failure::AllFailed(format!("every trial failed (first error: {first})")));
    }
    Ok(())
}

fn filter_report(args: FilterArgs) -> CliResult<()> {
    let spec: BandpassSpec = match &args.config {
        Some(p) => read_json_file(p)?,
        None => BandpassSpec::oscillation(),
    };
    let f = design_bandpass(&spec, args.rate)?;
    let nyq = args.rate / 2.0;
    let n = 400;
    let (l0, l1) = ((spec.stop_lo_hz / 10.0).ln(), (nyq * 0.999).ln());
    let freqs: Vec<f64> = (0..n).map(|i| (l0 + (l1 - l0) * i as f64 / (n - 1) as f64).exp()).collect();

    let worst_stop = freqs
        .iter()
        .filter(|&&fr| fr <= spec.stop_lo_hz || fr >= spec.stop_hi_hz)
        .map(|&fr| f.gain_db(fr))
        .fold(f64::NEG_INFINITY, f64::max);
    let pass_ripple = (0..=100)
        .map(|i| -f.gain_db(spec.pass_lo_hz + (spec.pass_hi_hz - spec.pass_lo_hz) * i as f64 / 100.0))
        .fold(0.0, f64::max);
    let sections: Vec<_> = f.sections().iter().map(|s| json!({ "b": s.b, "a": s.a })).collect();
    let design = json!({
        "spec": spec,
        "sample_rate_hz": args.rate,
        "order": f.order(),
        "meets_spec": f.meets_spec(&spec),
        "passband_ripple_db": pass_ripple,
        "worst_stopband_gain_db": worst_stop,
        "group_delay_s": f.group_delay_s(),
        "settling_time_s": f.settling_time_s(),
        "sections": sections,
    });

    let out = &args.out;
    fs::create_dir_all(out).map_err(|e| Failure::Io(format!("{}: {e}", out.display())))?;
    let write = |name: &str, text: String| {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| Failure::Io(format!("{}: {e}", p.display())))
    };
    write("filter_response.csv", f.response_csv(&freqs))?;
    write(
        "filter_design.json",
        format!("{}\n", serde_json::to_string_pretty(&design).expect("json value serializes")),
    )?;
    println!(
        "order {}, passband ripple {:.3} dB, worst stopband {:.1} dB, group delay {:.3} s, settling {:.2} s",
        f.order(),
        pass_ripple,
        worst_stop,
        f.group_delay_s(),
        f.settling_time_s()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // usage mistakes count as configuration errors
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Analyze(a) => analyze(a),
        Command::Experiment(a) => experiment(a),
        Command::FilterReport(a) => filter_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
