//! Driver for the `vqi` command: simulate coincidence runs, fit visibility
//! traces, and turn a verified day of violations into speed bounds.
//!
//! Every command is a pure function of its config bytes, input file bytes
//! and seed. Outputs are written atomically.

pub mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use vqi_core::fringe::{
    coverage_report, fit_full_span, net_visibility, sliding_scan, CoverageReport, SinusoidFit,
};
use vqi_core::kinematics::{BaselineGeometry, RotationClock};
use vqi_core::photon_sim::{compose_day, CoincidenceSeries, DayCoverage};
use vqi_core::scan::{
    run_beta_scan, run_chi_scan, worst_case_report, BoundCurve, CurvePoint, ScanRequest, Sweep,
    ViolationEvidence, WorstCaseReport,
};
use vqi_core::sidereal::EPOCH_ISO8601;

pub use config::{LoadedConfig, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config not found: {}", .0.display())]
    ConfigNotFound(PathBuf),

    #[error("invalid config {}: {reason}", path.display())]
    Config { path: PathBuf, reason: String },

    #[error("{}: {source}", path.display())]
    Input {
        path: PathBuf,
        source: vqi_core::Error,
    },

    #[error("{0}")]
    Usage(String),

    #[error("Bell-violation prerequisite not met: {0}")]
    Prerequisite(String),

    #[error(transparent)]
    Core(vqi_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Prerequisite(_) | CliError::Core(vqi_core::Error::Prerequisite(_)) => 3,
            _ => 2,
        }
    }
}

impl From<vqi_core::Error> for CliError {
    fn from(e: vqi_core::Error) -> Self {
        match e {
            vqi_core::Error::Prerequisite(msg) => CliError::Prerequisite(msg),
            other => CliError::Core(other),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "vqi", version, about = "Speed bounds from a day-long two-photon Bell test")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the configured run schedule
    Simulate(Common),
    /// Fit visibility traces to coincidence CSVs and check day coverage
    Fit {
        #[command(flatten)]
        common: Common,
        /// Coincidence CSVs written by `simulate` or an instrument
        inputs: Vec<PathBuf>,
    },
    /// Report the least favourable frame at the configured speed
    Bound {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        evidence: EvidenceArgs,
    },
    /// Sweep the zenith angle and the speed of the frame
    Scan {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        evidence: EvidenceArgs,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the config
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvidenceArgs {
    /// coverage.json written by `fit`
    #[arg(long, conflicts_with = "assume_violation")]
    pub coverage: Option<PathBuf>,
    /// Skip the violation check for pure-math sweeps
    #[arg(long)]
    pub assume_violation: bool,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(common) => simulate(&common),
        Command::Fit { common, inputs } => fit(&common, &inputs),
        Command::Bound { common, evidence } => bound(&common, &evidence),
        Command::Scan { common, evidence } => scan(&common, &evidence),
    }
}

fn prepare(common: &Common) -> Result<LoadedConfig> {
    let mut loaded = LoadedConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        loaded.config.seed = seed;
    }
    fs::create_dir_all(&common.out).map_err(|e| CliError::Io {
        path: common.out.clone(),
        source: e,
    })?;
    Ok(loaded)
}

/// Write `dir/name` via a temporary file in the same directory.
fn write_atomic(dir: &Path, name: &str, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let path = dir.join(name);
    let io = |e: std::io::Error| CliError::Io {
        path: path.clone(),
        source: e,
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut buf)?;
        buf.flush().map_err(io)?;
    }
    tmp.persist(&path).map_err(|e| io(e.error))?;
    Ok(())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    write_atomic(dir, name, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(|e| CliError::Io {
            path: dir.join(name),
            source: e.into(),
        })?;
        w.write_all(b"\n").map_err(|e| CliError::Io {
            path: dir.join(name),
            source: e,
        })
    })
}

#[derive(Debug, Serialize)]
struct RunRecord {
    file: String,
    start: String,
    duration_s: f64,
    bins: usize,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    seed: u64,
    config_sha256: &'a str,
    sidereal_epoch: &'static str,
    bin_width_s: f64,
    runs: Vec<RunRecord>,
    schedule_coverage: ScheduleSummary,
}

#[derive(Debug, Serialize)]
struct ScheduleSummary {
    complete: bool,
    min_multiplicity: u32,
    uncovered_cells: Vec<usize>,
}

impl From<&DayCoverage> for ScheduleSummary {
    fn from(c: &DayCoverage) -> Self {
        Self {
            complete: c.complete,
            min_multiplicity: c.min_multiplicity(),
            uncovered_cells: c.uncovered_cells.clone(),
        }
    }
}

pub fn simulate(common: &Common) -> Result<()> {
    let loaded = prepare(common)?;
    let cfg = &loaded.config;
    let invalid = |reason: String| CliError::Config {
        path: common.config.clone(),
        reason,
    };
    let model = cfg.source.model().map_err(invalid)?;
    let runs = cfg.scan.run_specs().map_err(invalid)?;
    let day = compose_day(
        &runs,
        &model,
        cfg.scan.bin_width_s,
        cfg.seed,
        cfg.analysis.coverage_resolution_s,
    )?;
    let mut records = Vec::with_capacity(runs.len());
    for (i, (run, series)) in runs.iter().zip(&day.series).enumerate() {
        let file = format!("run_{i:03}.csv");
        write_atomic(&common.out, &file, |w| Ok(series.write_csv(w)?))?;
        records.push(RunRecord {
            file,
            start: run.start.to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            duration_s: run.duration,
            bins: series.len(),
        });
    }
    let manifest = Manifest {
        seed: cfg.seed,
        config_sha256: &loaded.sha256,
        sidereal_epoch: EPOCH_ISO8601,
        bin_width_s: cfg.scan.bin_width_s,
        runs: records,
        schedule_coverage: (&day.coverage).into(),
    };
    write_json(&common.out, "manifest.json", &manifest)
}

#[derive(Debug, Serialize)]
struct FitRecord {
    input: String,
    trace_file: String,
    full_span: SinusoidFit,
    net_visibility: Option<f64>,
    windows_fitted: usize,
    windows_dropped: usize,
    min_window_visibility: Option<f64>,
}

#[derive(Debug, Serialize)]
struct FitSummary<'a> {
    config_sha256: &'a str,
    accidentals_per_bin: f64,
    series: Vec<FitRecord>,
}

pub fn fit(common: &Common, inputs: &[PathBuf]) -> Result<()> {
    if inputs.is_empty() {
        return Err(CliError::Usage("fit needs at least one series CSV".into()));
    }
    let loaded = prepare(common)?;
    let cfg = &loaded.config;
    let mut stems = std::collections::BTreeSet::new();
    let mut traces = Vec::with_capacity(inputs.len());
    let mut records = Vec::with_capacity(inputs.len());
    for path in inputs {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let stem = path
            .file_stem()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        if !stems.insert(stem.clone()) {
            return Err(CliError::Usage(format!("two inputs share the name {stem:?}")));
        }
        let file = fs::File::open(path).map_err(|e| CliError::Io {
            path: path.clone(),
            source: e,
        })?;
        let series = CoincidenceSeries::read_csv(std::io::BufReader::new(file), Some(cfg.scan.bin_width_s))
            .map_err(|e| CliError::Input {
                path: path.clone(),
                source: e,
            })?;
        let period = cfg.scan.fringe_period_s;
        let trace = sliding_scan(&series, &cfg.analysis.sliding(period))?;
        let full = fit_full_span(&series, cfg.analysis.full_span_period(period));
        let accidentals = cfg.source.accidental_rate * series.bin_width / 60.0;
        let trace_file = format!("{stem}.trace.csv");
        write_atomic(&common.out, &trace_file, |w| Ok(trace.write_csv(w)?))?;
        records.push(FitRecord {
            input: name,
            trace_file,
            net_visibility: net_visibility(&full, accidentals).ok(),
            full_span: full,
            windows_fitted: trace.entries.len(),
            windows_dropped: trace.dropped.len(),
            min_window_visibility: trace.min_visibility(),
        });
        traces.push(trace);
    }
    let report = coverage_report(
        &traces,
        cfg.analysis.coverage_resolution_s,
        cfg.analysis.required_multiplicity,
    )?;
    write_json(
        &common.out,
        "fits.json",
        &FitSummary {
            config_sha256: &loaded.sha256,
            accidentals_per_bin: cfg.source.accidental_rate * cfg.scan.bin_width_s / 60.0,
            series: records,
        },
    )?;
    write_json(&common.out, "coverage.json", &report)
}

/// What the bound commands rely on, echoed into their output.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum EvidenceRecord {
    Waived,
    Coverage { sha256: String, verdict: bool },
}

fn load_evidence(common: &Common, args: &EvidenceArgs) -> Result<(Option<CoverageReport>, EvidenceRecord)> {
    if args.assume_violation {
        return Ok((None, EvidenceRecord::Waived));
    }
    let Some(path) = &args.coverage else {
        return Err(CliError::Prerequisite(
            "no coverage report given; pass --coverage <coverage.json> or --assume-violation".into(),
        ));
    };
    use sha2::{Digest, Sha256};
    let bytes = fs::read(path).map_err(|e| CliError::Io {
        path: path.clone(),
        source: e,
    })?;
    let report: CoverageReport = serde_json::from_slice(&bytes).map_err(|e| CliError::Config {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    let record = EvidenceRecord::Coverage {
        sha256: hex::encode(Sha256::digest(&bytes)),
        verdict: report.verdict,
    };
    if !report.verdict {
        #[derive(Serialize)]
        struct Rejection<'a> {
            reason: &'a str,
            coverage: &'a CoverageReport,
        }
        write_json(
            &common.out,
            "rejection.json",
            &Rejection {
                reason: "coverage verdict is false",
                coverage: &report,
            },
        )?;
    }
    Ok((Some(report), record))
}

fn evidence_of(report: &Option<CoverageReport>) -> ViolationEvidence<'_> {
    match report {
        Some(r) => ViolationEvidence::Coverage(r),
        None => ViolationEvidence::Waived,
    }
}

struct BoundInputs {
    loaded: LoadedConfig,
    geometry: BaselineGeometry,
    clock: RotationClock,
}

fn bound_inputs(common: &Common) -> Result<BoundInputs> {
    let loaded = prepare(common)?;
    let cfg = &loaded.config;
    let invalid = |reason: String| CliError::Config {
        path: common.config.clone(),
        reason,
    };
    let geometry = cfg.metrology.resolve().map_err(invalid)?.geometry;
    let clock = cfg.sweep.clock(cfg.scan.fringe_period_s).map_err(invalid)?;
    Ok(BoundInputs {
        loaded,
        geometry,
        clock,
    })
}

#[derive(Debug, Serialize)]
struct BoundOutput<'a> {
    config_sha256: &'a str,
    evidence: EvidenceRecord,
    report: WorstCaseReport,
}

pub fn bound(common: &Common, args: &EvidenceArgs) -> Result<()> {
    let inputs = bound_inputs(common)?;
    let (report, record) = load_evidence(common, args)?;
    let cfg = &inputs.loaded.config;
    let worst = worst_case_report(
        &inputs.geometry,
        &inputs.clock,
        cfg.sweep.worst_case_beta,
        cfg.sweep.chi.points,
        evidence_of(&report),
    )?;
    write_json(
        &common.out,
        "bound.json",
        &BoundOutput {
            config_sha256: &inputs.loaded.sha256,
            evidence: record,
            report: worst,
        },
    )
}

#[derive(Debug, Serialize)]
struct CurveSummary {
    sweep: Sweep,
    file: &'static str,
    points: usize,
    minimum: CurvePoint,
    first: CurvePoint,
    last: CurvePoint,
}

impl CurveSummary {
    fn of(curve: &BoundCurve, file: &'static str) -> Self {
        Self {
            sweep: curve.sweep,
            file,
            points: curve.points.len(),
            minimum: curve.minimum,
            first: curve.points[0],
            last: curve.points[curve.points.len() - 1],
        }
    }
}

#[derive(Debug, Serialize)]
struct ScanOutput<'a> {
    config_sha256: &'a str,
    evidence: EvidenceRecord,
    geometry: BaselineGeometry,
    clock: RotationClock,
    exact_rho: Option<f64>,
    chi_scan: CurveSummary,
    beta_scan: CurveSummary,
}

pub fn scan(common: &Common, args: &EvidenceArgs) -> Result<()> {
    let inputs = bound_inputs(common)?;
    let (report, record) = load_evidence(common, args)?;
    let cfg = &inputs.loaded.config;
    let request = |sweep| ScanRequest {
        geometry: inputs.geometry,
        clock: inputs.clock,
        sweep,
        exact_rho: cfg.sweep.exact_rho,
    };
    let chi = run_chi_scan(&request(cfg.sweep.chi_sweep()), evidence_of(&report))?;
    let beta = run_beta_scan(&request(cfg.sweep.beta_sweep()), evidence_of(&report))?;
    write_atomic(&common.out, "chi_scan.csv", |w| Ok(chi.write_csv(w)?))?;
    write_atomic(&common.out, "beta_scan.csv", |w| Ok(beta.write_csv(w)?))?;
    write_json(
        &common.out,
        "scan_summary.json",
        &ScanOutput {
            config_sha256: &inputs.loaded.sha256,
            evidence: record,
            geometry: inputs.geometry,
            clock: inputs.clock,
            exact_rho: cfg.sweep.exact_rho,
            chi_scan: CurveSummary::of(&chi, "chi_scan.csv"),
            beta_scan: CurveSummary::of(&beta, "beta_scan.csv"),
        },
    )
}
