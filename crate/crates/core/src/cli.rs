//! Command-line front end.
//!
//! Exit codes: 0 success, 1 infeasible operating point, 2 invalid
//! configuration or usage, 3 I/O or other runtime failure. Failures are
//! reported on stderr as a single JSON object.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::array_channel::{dft_codebook, Target};
use crate::beamforming::beam_gain_pattern;
use crate::error::{Error, Result};
use crate::link_budget::{range_table, required_gain, sensing_range, BudgetParams, BudgetRow, ShadowMode};
use crate::optimizer::{ConstraintReport, OptimizedConfig, TraceEntry};
use crate::radar::{SweepPeak, TargetEstimate};
use crate::scenario::Scenario;
use crate::simulator::{
    parse_grid, run_experiment, run_monte_carlo, Accuracy, ExperimentOptions, ExperimentResult, FrameMetrics,
    McPoint, SweepField, SweepSpec,
};

pub const OUT_DIR_ENV: &str = "FDISAC_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "fdisac", version, about = "Full-duplex MIMO ISAC link-level simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize and simulate one scenario realization.
    Simulate(SimulateArgs),
    /// Monte-Carlo sweep over one scenario field, or a link-budget gain sweep.
    Sweep(SweepArgs),
    /// Sensing range versus beamforming gain from the radar equation.
    LinkBudget(LinkBudgetArgs),
    /// Gain patterns of the DFT codebook beams.
    Codebook(CodebookArgs),
    /// Print the default scenario as TOML.
    Defaults,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Scenario file (TOML); omitted fields keep their defaults.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short, env = OUT_DIR_ENV, default_value = "fdisac-out")]
    pub out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use the true target directions instead of a codebook sweep.
    #[arg(long)]
    pub genie_doa: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// power, k, lambda_s, lambda_sic, taps or gain.
    #[arg(long)]
    pub field: String,
    /// `start:step:stop` or a comma-separated list.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: String,
    /// Monte-Carlo runs per grid point (seeds seed, seed+1, ...).
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    /// Skip the CPI radar processing.
    #[arg(long)]
    pub rate_only: bool,
    /// SINR targets (dB) for the gain sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 5.0, 10.0, 15.0], allow_hyphen_values = true)]
    pub sinr: Vec<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ShadowArg {
    #[value(name = "one_way")]
    OneWay,
    #[value(name = "round_trip")]
    RoundTrip,
}

impl From<ShadowArg> for ShadowMode {
    fn from(s: ShadowArg) -> Self {
        match s {
            ShadowArg::OneWay => ShadowMode::OneWay,
            ShadowArg::RoundTrip => ShadowMode::RoundTrip,
        }
    }
}

#[derive(Debug, Args)]
pub struct LinkBudgetArgs {
    /// Combined TX+RX gain (dB): report the reachable range.
    #[arg(long, conflicts_with = "range", allow_hyphen_values = true)]
    pub gain: Option<f64>,
    /// Target range (m): report the required combined gain.
    #[arg(long)]
    pub range: Option<f64>,
    /// Required SINR (dB); several values give several rows.
    #[arg(long, value_delimiter = ',', default_values_t = [10.0], allow_hyphen_values = true)]
    pub sinr: Vec<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub tx_power_dbm: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub noise_floor_dbm: Option<f64>,
    #[arg(long)]
    pub nf_db: Option<f64>,
    #[arg(long)]
    pub rcs_m2: Option<f64>,
    #[arg(long)]
    pub ploss_exp: Option<f64>,
    #[arg(long)]
    pub shadow_db: Option<f64>,
    #[arg(long, value_enum)]
    pub shadow: Option<ShadowArg>,
    /// Also write the rows as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CodebookArgs {
    #[arg(long, default_value_t = 5)]
    pub bits: u32,
    #[arg(long, default_value_t = 16)]
    pub elements: usize,
    /// Element spacing in wavelengths.
    #[arg(long, default_value_t = 0.5)]
    pub spacing: f64,
    /// Angular step of the pattern (degrees).
    #[arg(long, default_value_t = 0.25)]
    pub step_deg: f64,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn is_broken_pipe(e: &Error) -> bool {
    match e {
        Error::Io(io) => io.kind() == std::io::ErrorKind::BrokenPipe,
        Error::Csv(c) => matches!(c.kind(), csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::BrokenPipe),
        _ => false,
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "{}", error_json(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::LinkBudget(a) => cmd_link_budget(&a, &mut std::io::stdout().lock()),
        Command::Codebook(a) => cmd_codebook(&a),
        Command::Defaults => {
            print!("{}", Scenario::default().to_toml_string()?);
            Ok(())
        }
    }
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Infeasible(_) => 1,
        Error::Config { .. } | Error::Domain(_) | Error::UnsupportedQamOrder(_) | Error::DimensionMismatch(_) => 2,
        Error::Io(_) | Error::Json(_) | Error::Csv(_) => 3,
    }
}

/// Machine-readable error object.
pub fn error_json(e: &Error) -> String {
    let value = match e {
        Error::Infeasible(why) => serde_json::json!({ "error": "infeasible", "detail": why, "message": e.to_string() }),
        Error::Config { path, message } => serde_json::json!({ "error": "config", "path": path, "message": message }),
        Error::Domain(_) | Error::UnsupportedQamOrder(_) | Error::DimensionMismatch(_) => {
            serde_json::json!({ "error": "invalid_input", "message": e.to_string() })
        }
        _ => serde_json::json!({ "error": "runtime", "message": e.to_string() }),
    };
    value.to_string()
}

fn load_scenario(args: &ScenarioArgs) -> Result<Scenario> {
    let mut s = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
            Scenario::from_toml_str(&text)?
        }
        None => Scenario::default(),
    };
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    if args.genie_doa {
        s.radar.genie_doa = true;
    }
    s.validate()?;
    Ok(s)
}

#[derive(Debug, Serialize)]
pub struct ManifestFile {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Inventory of one command's outputs; written after every other file.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub scenario_path: Option<String>,
    pub out_dir: String,
    pub seed: u64,
    pub seed_override: Option<u64>,
    pub files: Vec<ManifestFile>,
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        fs::write(self.path(name), bytes)?;
        Ok(())
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.path(name))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    fn finish(self, command: &str, args: &ScenarioArgs, seed: u64) -> Result<()> {
        let mut files = Vec::with_capacity(self.files.len());
        for name in &self.files {
            let bytes = fs::read(self.dir.join(name))?;
            files.push(ManifestFile {
                path: name.clone(),
                bytes: bytes.len() as u64,
                sha256: hex(&Sha256::digest(&bytes)),
            });
        }
        let manifest = RunManifest {
            command: command.to_string(),
            scenario_path: args.config.as_ref().map(|p| p.display().to_string()),
            out_dir: self.dir.display().to_string(),
            seed,
            seed_override: args.seed,
            files,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        fs::write(self.dir.join("manifest.json"), bytes)?;
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
struct EstimateReport<'a> {
    seed: u64,
    targets: &'a [Target],
    estimates: &'a [TargetEstimate],
    per_target: Vec<PerTarget>,
    accuracy: Option<&'a Accuracy>,
}

#[derive(Debug, Serialize)]
struct PerTarget {
    target: usize,
    estimate: Option<usize>,
    range_error_m: Option<f64>,
    velocity_error_mps: Option<f64>,
    angle_error_deg: Option<f64>,
    relative_range_error: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ComparisonRow {
    target: Option<usize>,
    true_angle_deg: Option<f64>,
    true_range_m: Option<f64>,
    true_velocity_mps: Option<f64>,
    estimate: Option<usize>,
    est_angle_deg: Option<f64>,
    est_range_m: Option<f64>,
    est_velocity_mps: Option<f64>,
    range_error_m: Option<f64>,
    velocity_error_mps: Option<f64>,
    angle_error_deg: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Metrics<'a> {
    seed: u64,
    achieved_rate_bps_hz: f64,
    waterfilling_rate_bps_hz: f64,
    rho: f64,
    transmit_power_dbm: f64,
    target_sinr_db: &'a [f64],
    min_target_sinr_db: Option<f64>,
    constraints: &'a ConstraintReport,
    frame: &'a FrameMetrics,
    sweep_peaks: &'a [SweepPeak],
    priors: &'a [Target],
    tx_beam_angles_deg: &'a [f64],
    rx_beam_angles_deg: &'a [f64],
    accuracy: Option<&'a Accuracy>,
}

fn per_target(res: &ExperimentResult) -> Vec<PerTarget> {
    res.world
        .targets
        .iter()
        .enumerate()
        .map(|(t, truth)| {
            let m = res.matches.iter().find(|m| m.truth == t);
            PerTarget {
                target: t,
                estimate: m.map(|m| m.estimate),
                range_error_m: m.map(|m| m.range_error_m),
                velocity_error_mps: m.map(|m| m.velocity_error_mps),
                angle_error_deg: m.map(|m| m.angle_error_deg),
                relative_range_error: m.map(|m| m.range_error_m / truth.range_m),
            }
        })
        .collect()
}

fn comparison_rows(res: &ExperimentResult) -> Vec<ComparisonRow> {
    let mut rows: Vec<ComparisonRow> = res
        .world
        .targets
        .iter()
        .enumerate()
        .map(|(t, truth)| {
            let m = res.matches.iter().find(|m| m.truth == t);
            let e = m.map(|m| &res.estimates[m.estimate]);
            ComparisonRow {
                target: Some(t),
                true_angle_deg: Some(truth.angle_deg),
                true_range_m: Some(truth.range_m),
                true_velocity_mps: Some(truth.velocity_mps),
                estimate: m.map(|m| m.estimate),
                est_angle_deg: e.map(|e| e.angle_deg),
                est_range_m: e.map(|e| e.range_m),
                est_velocity_mps: e.map(|e| e.velocity_mps),
                range_error_m: m.map(|m| m.range_error_m),
                velocity_error_mps: m.map(|m| m.velocity_error_mps),
                angle_error_deg: m.map(|m| m.angle_error_deg),
            }
        })
        .collect();
    for (i, e) in res.estimates.iter().enumerate() {
        if res.matches.iter().all(|m| m.estimate != i) {
            rows.push(ComparisonRow {
                target: None,
                true_angle_deg: None,
                true_range_m: None,
                true_velocity_mps: None,
                estimate: Some(i),
                est_angle_deg: Some(e.angle_deg),
                est_range_m: Some(e.range_m),
                est_velocity_mps: Some(e.velocity_mps),
                range_error_m: None,
                velocity_error_mps: None,
                angle_error_deg: None,
            });
        }
    }
    rows
}

fn pattern_angles(step_deg: f64) -> Result<Vec<f64>> {
    if !(step_deg > 0.0) || step_deg > 180.0 {
        return Err(Error::config("step_deg", "must be in (0, 180]"));
    }
    let n = (180.0 / step_deg + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| -90.0 + k as f64 * step_deg).collect())
}

/// One column per RF chain (its subarray beam over the full array).
fn write_chain_patterns(path: &Path, rf: &crate::linalg::CMatrix, spacing: f64, angles: &[f64]) -> Result<()> {
    let columns: Vec<Vec<f64>> = (0..rf.ncols())
        .map(|c| beam_gain_pattern(&rf.columns(c, 1).into_owned(), spacing, angles))
        .collect::<Result<_>>()?;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["angle_deg".to_string()];
    header.extend((0..rf.ncols()).map(|c| format!("chain_{c}_gain_db")));
    w.write_record(&header)?;
    for (k, a) in angles.iter().enumerate() {
        let mut rec = vec![a.to_string()];
        rec.extend(columns.iter().map(|col| col[k].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_config_outputs(out: &mut Outputs, s: &Scenario, config: &OptimizedConfig) -> Result<()> {
    let angles = pattern_angles(0.25)?;
    let spacing = s.array.element_spacing;
    let p = out.path("beam_tx.csv");
    write_chain_patterns(&p, &config.beamformer.v_rf, spacing, &angles)?;
    let p = out.path("beam_rx.csv");
    write_chain_patterns(&p, &config.beamformer.w_rf, spacing, &angles)?;
    out.json::<[TraceEntry]>("trace.json", &config.trace)?;
    out.json(
        "canceller.json",
        &serde_json::json!({ "analog": &config.analog, "digital": &config.digital }),
    )?;
    Ok(())
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let s = load_scenario(&args.scenario)?;
    let mut out = Outputs::create(&args.scenario.out)?;
    let res = match run_experiment(&s, ExperimentOptions::default()) {
        Ok(r) => r,
        Err(e @ Error::Infeasible(_)) => {
            let path = out.path("error.json");
            fs::write(path, format!("{}\n", error_json(&e)))?;
            out.finish("simulate", &args.scenario, s.seed)?;
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    let c = &res.config;

    out.json(
        "estimates.json",
        &EstimateReport {
            seed: s.seed,
            targets: &res.world.targets,
            estimates: &res.estimates,
            per_target: per_target(&res),
            accuracy: res.accuracy.as_ref(),
        },
    )?;
    out.csv("comparison.csv", &comparison_rows(&res))?;
    write_config_outputs(&mut out, &s, c)?;
    let f = &c.beamformer.v_rf * &c.beamformer.v_bb;
    out.json(
        "metrics.json",
        &Metrics {
            seed: s.seed,
            achieved_rate_bps_hz: c.achieved_rate,
            waterfilling_rate_bps_hz: c.waterfilling_rate,
            rho: c.rho,
            transmit_power_dbm: crate::units::watts_to_dbm(crate::linalg::frobenius_sq(&f)),
            target_sinr_db: &c.target_sinr_db,
            min_target_sinr_db: c.min_target_sinr_db,
            constraints: &c.constraint_report,
            frame: &res.frame,
            sweep_peaks: &res.sweep_peaks,
            priors: &res.priors,
            tx_beam_angles_deg: &c.beams.tx_angles_deg,
            rx_beam_angles_deg: &c.beams.rx_angles_deg,
            accuracy: res.accuracy.as_ref(),
        },
    )?;
    out.finish("simulate", &args.scenario, s.seed)?;

    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "rate {:.4} bps/Hz (waterfilling {:.4})", c.achieved_rate, c.waterfilling_rate)?;
    if let Some(a) = &res.accuracy {
        writeln!(
            stdout,
            "targets {} detected {} false alarms {}",
            a.n_targets, a.detected, a.false_alarms
        )?;
    }
    writeln!(stdout, "outputs in {}", args.scenario.out.display())?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepSummary<'a> {
    field: &'a str,
    values: &'a [f64],
    runs: usize,
    points: &'a [McPoint],
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let s = load_scenario(&args.scenario)?;
    if args.runs == 0 {
        return Err(Error::config("sweep.runs", "must be >= 1"));
    }
    let mut out = Outputs::create(&args.scenario.out)?;
    if args.field == "gain" {
        let gains = parse_grid(&args.grid)?;
        let params = budget_from_scenario(&s);
        let rows = range_table(&params, &gains, &args.sinr)?;
        out.csv("range_curve.csv", &rows)?;
        out.finish("sweep gain", &args.scenario, s.seed)?;
        println!("{} rows in {}", rows.len(), args.scenario.out.display());
        return Ok(());
    }
    let spec = SweepSpec::parse(&args.field, &args.grid)?;
    let opts = ExperimentOptions {
        sense: !args.rate_only,
        keep_maps: false,
    };
    let mc = run_monte_carlo(&s, &spec, args.runs, opts)?;
    out.csv("sweep_rows.csv", &mc.rows)?;
    out.json(
        "sweep_summary.json",
        &SweepSummary {
            field: SweepField::name(spec.field),
            values: &spec.values,
            runs: args.runs,
            points: &mc.points,
        },
    )?;
    out.finish(&format!("sweep {}", spec.field.name()), &args.scenario, s.seed)?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{:>12} {:>8} {:>12}", spec.field.name(), "feasible", "rate_mean")?;
    for p in &mc.points {
        let rate = p.rate_mean.map_or("-".to_string(), |r| format!("{r:.4}"));
        writeln!(stdout, "{:>12} {:>4}/{:<3} {:>12}", p.value, p.n_feasible, p.n_runs, rate)?;
    }
    Ok(())
}

fn budget_from_scenario(s: &Scenario) -> BudgetParams {
    BudgetParams {
        tx_power_dbm: s.constraints.tx_power_dbm,
        noise_floor_dbm: s.noise.noise_floor_dbm,
        nf_db: s.noise.nf_node_db,
        rcs_m2: s.targets.rcs_m2,
        ploss_exp: s.targets.ploss_exp,
        shadow_db: s.targets.shadow_db,
        wavelength_m: s.ofdm.wavelength_m(),
        max_range_m: s.ofdm.unambiguous_range_m(),
        ..BudgetParams::default()
    }
}

/// Ranges tabulated when neither `--gain` nor `--range` is given.
pub const DEFAULT_RANGES_M: [f64; 8] = [25.0, 50.0, 75.0, 100.0, 150.0, 200.0, 300.0, 500.0];

pub fn cmd_link_budget(args: &LinkBudgetArgs, stdout: &mut impl Write) -> Result<()> {
    let d = BudgetParams::default();
    let params = BudgetParams {
        tx_power_dbm: args.tx_power_dbm.unwrap_or(d.tx_power_dbm),
        noise_floor_dbm: args.noise_floor_dbm.unwrap_or(d.noise_floor_dbm),
        nf_db: args.nf_db.unwrap_or(d.nf_db),
        rcs_m2: args.rcs_m2.unwrap_or(d.rcs_m2),
        ploss_exp: args.ploss_exp.unwrap_or(d.ploss_exp),
        shadow_db: args.shadow_db.unwrap_or(d.shadow_db),
        shadow_mode: args.shadow.map_or(d.shadow_mode, ShadowMode::from),
        ..d
    };
    params.validate()?;
    let mut rows = Vec::new();
    for &sinr_db in &args.sinr {
        if let Some(gain_db) = args.gain {
            let p = BudgetParams {
                combined_gain_db: gain_db,
                sinr_target_db: sinr_db,
                ..params.clone()
            };
            let range_m = match sensing_range(&p) {
                Ok(r) => Some(r),
                Err(Error::Domain(_)) => None,
                Err(e) => return Err(e),
            };
            rows.push(BudgetRow {
                gain_db,
                sinr_db,
                range_m,
                capped: range_m.is_some_and(|r| r >= params.max_range_m),
            });
        } else {
            let ranges: Vec<f64> = args.range.map_or(DEFAULT_RANGES_M.to_vec(), |r| vec![r]);
            for range_m in ranges {
                rows.push(BudgetRow {
                    gain_db: required_gain(range_m, sinr_db, &params)?,
                    sinr_db,
                    range_m: Some(range_m),
                    capped: false,
                });
            }
        }
    }
    writeln!(stdout, "{:>10} {:>12} {:>9}", "gain_db", "range_m", "sinr_db")?;
    for r in &rows {
        let range = match r.range_m {
            Some(v) if r.capped => format!("{v:.2}*"),
            Some(v) => format!("{v:.2}"),
            None => "-".to_string(),
        };
        writeln!(stdout, "{:>10.2} {:>12} {:>9.2}", r.gain_db, range, r.sinr_db)?;
    }
    if rows.iter().any(|r| r.capped) {
        writeln!(stdout, "* capped at the unambiguous range")?;
    }
    if let Some(path) = &args.csv {
        crate::link_budget::write_table_csv(path, &rows)?;
    }
    Ok(())
}

pub fn cmd_codebook(args: &CodebookArgs) -> Result<()> {
    let cb = dft_codebook(args.elements, args.bits, args.spacing)?;
    let angles = pattern_angles(args.step_deg)?;
    let patterns: Vec<Vec<f64>> = cb
        .beams
        .iter()
        .map(|b| {
            let m = crate::linalg::CMatrix::from_column_slice(b.len(), 1, b.as_slice()).unscale(b.norm());
            beam_gain_pattern(&m, args.spacing, &angles)
        })
        .collect::<Result<_>>()?;
    let sink: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(fs::File::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["angle_deg".to_string()];
    header.extend((0..cb.len()).map(|k| format!("beam_{k}_{:.2}deg", cb.angle_deg(k))));
    w.write_record(&header)?;
    for (i, a) in angles.iter().enumerate() {
        let mut rec = vec![a.to_string()];
        rec.extend(patterns.iter().map(|p| p[i].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
