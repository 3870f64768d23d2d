//! Command-line front end: `hflm fit|simulate|eval --config <path>`.
//!
//! Configuration is a plain `key=value` file ('#' starts a comment).
//! Unknown keys are rejected so typos fail fast, and every input path is
//! checked before any computation starts. Machine-readable output goes to
//! files (or stdout for `eval`); progress and errors go to stderr.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 numerical failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::core::{FitConfig, PanelSpec};
use crate::ingest::{self, CsvSchema, IngestError};
use crate::io::{self, IoError};
use crate::metrics::{self, MetricReport, MetricsError};
use crate::pipeline::{self, PipelineError, PipelineOutput, SplitMode};
use crate::simulate::{
    self, RainfallParams, Scenario, SimulateError, SmoothBumpRecipe, StudyOutput, TruthRecipe,
};

#[derive(Parser)]
#[command(name = "hflm", version, about = "Dynamically sparse historical functional linear models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model to paired daily driver/response CSV data.
    Fit(CommonArgs),
    /// Run a replicated ground-truth recovery study.
    Simulate(CommonArgs),
    /// Score an estimated surface and lag function against ground truth.
    Eval(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the key=value configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Explicit sparsity threshold, overriding knee-onset selection.
    #[arg(long)]
    q: Option<f64>,
    /// Worker threads for data-parallel stages (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
}

/// Errors carrying their process exit code.
#[derive(Debug)]
pub enum CommandError {
    Config(String),
    Data(String),
    Numerical(String),
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Config(_) => 2,
            CommandError::Data(_) => 3,
            CommandError::Numerical(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CommandError::Config(m) | CommandError::Data(m) | CommandError::Numerical(m) => m,
        }
    }
}

impl From<IngestError> for CommandError {
    fn from(e: IngestError) -> Self {
        CommandError::Data(e.to_string())
    }
}

impl From<IoError> for CommandError {
    fn from(e: IoError) -> Self {
        CommandError::Data(e.to_string())
    }
}

impl From<PipelineError> for CommandError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Solver(_) | PipelineError::Sparsity(_) | PipelineError::Hyperopt(_) => {
                CommandError::Numerical(e.to_string())
            }
            PipelineError::Core(_) => CommandError::Config(e.to_string()),
            _ => CommandError::Data(e.to_string()),
        }
    }
}

impl From<SimulateError> for CommandError {
    fn from(e: SimulateError) -> Self {
        match e {
            SimulateError::BadTargetR2(_) | SimulateError::BadRecipe(_) | SimulateError::Core(_) => {
                CommandError::Config(e.to_string())
            }
            SimulateError::DegenerateSignal => CommandError::Numerical(e.to_string()),
            _ => CommandError::Data(e.to_string()),
        }
    }
}

/// Parses arguments, runs the command, and returns the exit code.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::Fit(a) => ("fit", a),
        Command::Simulate(a) => ("simulate", a),
        Command::Eval(a) => ("eval", a),
    };
    configure_threads(args.threads);
    let started = Instant::now();
    let result = match name {
        "fit" => cmd_fit(args),
        "simulate" => cmd_simulate(args),
        _ => cmd_eval(args),
    };
    match result {
        Ok(()) => {
            eprintln!("[hflm] {name} finished in {:.2}s", started.elapsed().as_secs_f64());
            0
        }
        Err(e) => {
            eprintln!("[hflm] {name} failed: {}", e.message());
            e.exit_code()
        }
    }
}

fn configure_threads(threads: Option<usize>) {
    let Some(n) = threads else { return };
    #[cfg(feature = "parallel")]
    {
        // may already be initialized (e.g. in tests); that is fine
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    {
        eprintln!("[hflm] built without the parallel feature; --threads {n} ignored");
    }
}

// -- configuration file ---------------------------------------------------

struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    fn load(path: &Path, allowed: &[&str]) -> Result<Self, CommandError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CommandError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CommandError::Config(format!(
                    "{}:{}: expected key=value, got \"{raw}\"",
                    path.display(),
                    i + 1
                )));
            };
            let key = key.trim().to_string();
            if !allowed.contains(&key.as_str()) {
                return Err(CommandError::Config(format!(
                    "{}:{}: unknown key \"{key}\"",
                    path.display(),
                    i + 1
                )));
            }
            if values.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(CommandError::Config(format!(
                    "{}:{}: duplicate key \"{key}\"",
                    path.display(),
                    i + 1
                )));
            }
        }
        Ok(ConfigFile { values })
    }

    fn echo(&self) -> BTreeMap<String, String> {
        self.values.clone()
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    fn require(&self, key: &str) -> Result<&str, CommandError> {
        self.get(key)
            .ok_or_else(|| CommandError::Config(format!("missing required key \"{key}\"")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, CommandError> {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw.parse().map_err(|_| {
                CommandError::Config(format!("key \"{key}\": cannot parse \"{raw}\""))
            }),
        }
    }

    fn parse_opt<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CommandError> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| {
                CommandError::Config(format!("key \"{key}\": cannot parse \"{raw}\""))
            }),
        }
    }

    fn parse_bool(&self, key: &str, default: bool) -> Result<bool, CommandError> {
        match self.get(key) {
            None => Ok(default),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some("false") | Some("0") | Some("no") => Ok(false),
            Some(raw) => Err(CommandError::Config(format!(
                "key \"{key}\": expected true/false, got \"{raw}\""
            ))),
        }
    }
}

fn fit_config_from(
    cfg: &ConfigFile,
    args: &CommonArgs,
) -> Result<FitConfig, CommandError> {
    let mut fc = FitConfig {
        w_h: cfg.parse("w_h", 1.0)?,
        w_v: cfg.parse("w_v", 1.0)?,
        q: cfg.parse_opt("q")?,
        optimize_weights: cfg.parse_bool("optimize_weights", true)?,
        solver_rel_tol: cfg.parse("solver_rel_tol", 1e-10)?,
        hyperopt_init_count: cfg.parse("hyperopt_init", 30)?,
        hyperopt_iter_count: cfg.parse("hyperopt_iters", 35)?,
        log_wh_bounds: (cfg.parse("log_wh_min", 10.0)?, cfg.parse("log_wh_max", 20.0)?),
        log_wv_bounds: (cfg.parse("log_wv_min", -5.0)?, cfg.parse("log_wv_max", 15.0)?),
        threshold_grid_size: cfg.parse("threshold_grid", 50)?,
        seed: cfg.parse("seed", 0)?,
    };
    if let Some(q) = args.q {
        fc.q = Some(q);
    }
    if let Some(seed) = args.seed {
        fc.seed = seed;
    }
    fc.validate()
        .map_err(|e| CommandError::Config(e.to_string()))?;
    Ok(fc)
}

fn ensure_out_dir(cfg: &ConfigFile) -> Result<PathBuf, CommandError> {
    let out_dir = PathBuf::from(cfg.require("out_dir")?);
    std::fs::create_dir_all(&out_dir).map_err(|e| {
        CommandError::Config(format!("cannot create out_dir {}: {e}", out_dir.display()))
    })?;
    Ok(out_dir)
}

fn ensure_file_exists(path: &Path) -> Result<(), CommandError> {
    if !path.is_file() {
        return Err(CommandError::Data(format!("file not found: {}", path.display())));
    }
    Ok(())
}

// -- fit -------------------------------------------------------------------

#[derive(Serialize)]
struct Manifest {
    command: String,
    config: BTreeMap<String, String>,
    seed: u64,
    split: String,
    w_h_smooth: f64,
    w_v_smooth: f64,
    w_h_final: f64,
    w_v_final: f64,
    q: f64,
    support_size: usize,
    r2_whole: f64,
    r2_validation: f64,
    test_r2: Option<f64>,
    diagnostics: BTreeMap<String, f64>,
    timings_seconds: BTreeMap<String, f64>,
}

fn cmd_fit(args: &CommonArgs) -> Result<(), CommandError> {
    const KEYS: &[&str] = &[
        "data_csv",
        "out_dir",
        "max_lag",
        "col_date",
        "col_precip",
        "col_temp",
        "col_flow",
        "split",
        "rain_snow_threshold_c",
        "seed",
        "w_h",
        "w_v",
        "optimize_weights",
        "q",
        "solver_rel_tol",
        "hyperopt_init",
        "hyperopt_iters",
        "log_wh_min",
        "log_wh_max",
        "log_wv_min",
        "log_wv_max",
        "threshold_grid",
    ];
    let cfg = ConfigFile::load(&args.config, KEYS)?;
    let data_csv = PathBuf::from(cfg.require("data_csv")?);
    ensure_file_exists(&data_csv)?;
    let out_dir = ensure_out_dir(&cfg)?;
    let max_lag: usize = cfg.parse("max_lag", 150)?;
    let split = match cfg.get("split").unwrap_or("train80_val20") {
        "train80_val20" => SplitMode::Train80Val20,
        "train60_val20_test20" => SplitMode::Train60Val20Test20,
        other => {
            return Err(CommandError::Config(format!(
                "key \"split\": expected train80_val20 or train60_val20_test20, got \"{other}\""
            )))
        }
    };
    let threshold_c: f64 = cfg.parse("rain_snow_threshold_c", 0.0)?;
    let fit_config = fit_config_from(&cfg, args)?;
    let schema = CsvSchema {
        date: cfg.get("col_date").unwrap_or("date").to_string(),
        precipitation: cfg.get("col_precip").unwrap_or("precip_mm").to_string(),
        temperature: cfg.get("col_temp").unwrap_or("temp_c").to_string(),
        flow: Some(cfg.get("col_flow").unwrap_or("flow_mm").to_string()),
    };

    let mut timings = BTreeMap::new();
    let t0 = Instant::now();
    eprintln!("[hflm] loading {}", data_csv.display());
    let records = ingest::load_csv(&data_csv, &schema)?;
    let records = ingest::remove_leap_days(&records)?;
    let rain = ingest::split_rain_snow(&records, threshold_c);
    let flows: Vec<f64> = records
        .iter()
        .map(|r| r.flow.ok_or(IngestError::FlowRequired))
        .collect::<Result<_, _>>()?;
    let log_flow = ingest::log_transform_flow(&flows)?;
    let rain_panel = ingest::panel_from_series(rain, max_lag, ingest::DAYS_PER_YEAR)?;
    let flow_panel = ingest::panel_from_series(log_flow, max_lag, ingest::DAYS_PER_YEAR)?;
    let (x, mean_x) = ingest::seasonal_demean(&rain_panel);
    let (y, mean_y) = ingest::seasonal_demean(&flow_panel);
    io::write_means_csv(&out_dir.join("means.csv"), &mean_x, &mean_y)?;
    timings.insert("ingest".into(), t0.elapsed().as_secs_f64());

    eprintln!(
        "[hflm] fitting: {} years, {} lags, {} coefficients",
        x.spec.replicate_count,
        max_lag,
        x.spec.coefficient_count()
    );
    let t1 = Instant::now();
    let out = pipeline::run_pipeline(&x, &y, &fit_config, split)?;
    timings.insert("pipeline".into(), t1.elapsed().as_secs_f64());

    write_fit_outputs(&out_dir, &out)?;
    let manifest = build_manifest("fit", &cfg, &fit_config, split, &out, timings);
    io::write_json(&out_dir.join("manifest.json"), &manifest)?;
    eprintln!(
        "[hflm] whole-data R^2 {:.4}, q {:.4e}, support {}",
        out.fit.r2_whole,
        out.fit.threshold,
        out.fit.support.iter().filter(|&&s| s).count()
    );
    Ok(())
}

fn write_fit_outputs(out_dir: &Path, out: &PipelineOutput) -> Result<(), CommandError> {
    io::write_surface_csv(&out_dir.join("surface.csv"), &out.fit.surface)?;
    io::write_delta_csv(&out_dir.join("delta.csv"), &out.fit.delta)?;
    if let Some(curve) = &out.curve {
        io::write_curve_csv(&out_dir.join("curve.csv"), curve)?;
    }
    if !out.trace_smooth.is_empty() {
        io::write_trace_csv(&out_dir.join("trace_smooth.csv"), &out.trace_smooth)?;
    }
    if !out.trace_sparse.is_empty() {
        io::write_trace_csv(&out_dir.join("trace_sparse.csv"), &out.trace_sparse)?;
    }
    Ok(())
}

fn build_manifest(
    command: &str,
    cfg: &ConfigFile,
    fit_config: &FitConfig,
    split: SplitMode,
    out: &PipelineOutput,
    timings: BTreeMap<String, f64>,
) -> Manifest {
    let d = &out.fit.diagnostics;
    Manifest {
        command: command.to_string(),
        config: cfg.echo(),
        seed: fit_config.seed,
        split: match split {
            SplitMode::Train80Val20 => "train80_val20".into(),
            SplitMode::Train60Val20Test20 => "train60_val20_test20".into(),
        },
        w_h_smooth: d.get("w_h_smooth").copied().unwrap_or(f64::NAN),
        w_v_smooth: d.get("w_v_smooth").copied().unwrap_or(f64::NAN),
        w_h_final: out.fit.weights.0,
        w_v_final: out.fit.weights.1,
        q: out.fit.threshold,
        support_size: out.fit.support.iter().filter(|&&s| s).count(),
        r2_whole: out.fit.r2_whole,
        r2_validation: out.fit.r2_validation,
        test_r2: out.test_r2,
        diagnostics: d.clone(),
        timings_seconds: timings,
    }
}

// -- simulate ----------------------------------------------------------------

fn cmd_simulate(args: &CommonArgs) -> Result<(), CommandError> {
    const KEYS: &[&str] = &[
        "out_dir",
        "target_r2",
        "scenario",
        "period",
        "max_lag",
        "panel_replicates",
        "runs",
        "truth_file",
        "bump_delta_min",
        "bump_delta_max",
        "bump_amplitude",
        "bump_peak_day",
        "x_csv",
        "col_date",
        "col_precip",
        "col_temp",
        "rain_snow_threshold_c",
        "seed",
        "w_h",
        "w_v",
        "optimize_weights",
        "q",
        "solver_rel_tol",
        "hyperopt_init",
        "hyperopt_iters",
        "log_wh_min",
        "log_wh_max",
        "log_wv_min",
        "log_wv_max",
        "threshold_grid",
    ];
    let cfg = ConfigFile::load(&args.config, KEYS)?;
    let out_dir = ensure_out_dir(&cfg)?;
    let target_r2: f64 = cfg
        .parse_opt("target_r2")?
        .ok_or_else(|| CommandError::Config("missing required key \"target_r2\"".into()))?;
    if !(target_r2 > 0.0 && target_r2 < 1.0) {
        return Err(CommandError::Config(format!(
            "target_r2 must lie strictly between 0 and 1, got {target_r2}"
        )));
    }
    let mut fit = fit_config_from(&cfg, args)?;
    // desk-scale studies default to the reduced optimizer budget
    if cfg.get("hyperopt_init").is_none() {
        fit.hyperopt_init_count = 10;
    }
    if cfg.get("hyperopt_iters").is_none() {
        fit.hyperopt_iter_count = 10;
    }
    let runs: usize = cfg.parse("runs", 100)?;
    let seed = fit.seed;

    // the driver panel
    let max_lag: usize = cfg.parse("max_lag", 20)?;
    let (x_panel, spec) = match cfg.get("x_csv") {
        Some(path) => {
            let path = PathBuf::from(path);
            ensure_file_exists(&path)?;
            let schema = CsvSchema {
                date: cfg.get("col_date").unwrap_or("date").to_string(),
                precipitation: cfg.get("col_precip").unwrap_or("precip_mm").to_string(),
                temperature: cfg.get("col_temp").unwrap_or("temp_c").to_string(),
                flow: None,
            };
            let records = ingest::load_csv(&path, &schema)?;
            let records = ingest::remove_leap_days(&records)?;
            let rain =
                ingest::split_rain_snow(&records, cfg.parse("rain_snow_threshold_c", 0.0)?);
            let panel = ingest::panel_from_series(rain, max_lag, ingest::DAYS_PER_YEAR)?;
            let (x, _) = ingest::seasonal_demean(&panel);
            let spec = x.spec;
            (x, spec)
        }
        None => {
            let period: usize = cfg.parse("period", 73)?;
            let n: usize = cfg.parse("panel_replicates", 10)?;
            let spec = PanelSpec::new(period, max_lag, n)
                .map_err(|e| CommandError::Config(e.to_string()))?;
            let raw = simulate::synth_rainfall(
                &spec,
                &RainfallParams::default(),
                crate::core::mix_seed(seed, 0xa11),
            );
            let (x, _) = ingest::seasonal_demean(&raw);
            (x, spec)
        }
    };

    // the ground truth
    let recipe = match cfg.get("scenario").unwrap_or("smooth_bump") {
        "smooth_bump" => TruthRecipe::SmoothBump(SmoothBumpRecipe {
            delta_min: cfg.parse("bump_delta_min", 3)?,
            delta_max: cfg.parse("bump_delta_max", 18.min(max_lag - 1))?,
            amplitude: cfg.parse("bump_amplitude", 0.05)?,
            peak_day: cfg.parse("bump_peak_day", spec.period_length / 5)?,
        }),
        "from_file" => {
            let path = PathBuf::from(cfg.require("truth_file")?);
            ensure_file_exists(&path)?;
            TruthRecipe::FromFile(path)
        }
        other => {
            return Err(CommandError::Config(format!(
                "key \"scenario\": expected smooth_bump or from_file, got \"{other}\""
            )))
        }
    };
    let truth = simulate::synth_truth(&spec, &recipe)?;

    let scenario = Scenario {
        name: cfg.get("scenario").unwrap_or("smooth_bump").to_string(),
        x_panel,
        truth,
        target_r2,
        replicate_runs: runs,
        seed,
        fit,
    };
    eprintln!(
        "[hflm] study: {} replicates at target R^2 {target_r2} on a {}x{} grid",
        runs, spec.max_lag_count, spec.period_length
    );
    let study = simulate::run_study(&scenario)?;

    write_study_csv(&out_dir.join("study.csv"), &study)?;
    io::write_json(&out_dir.join("summary.json"), &study.summary)?;
    io::write_surface_csv(&out_dir.join("truth_surface.csv"), &study.truth)?;
    io::write_delta_csv(&out_dir.join("truth_delta.csv"), &study.truth_delta)?;
    eprintln!(
        "[hflm] {} / {} replicates succeeded; mean beta-R^2 {:?}",
        study.summary.replicates_succeeded, runs, study.summary.beta_r2_mean
    );
    Ok(())
}

fn write_study_csv(path: &Path, study: &StudyOutput) -> Result<(), CommandError> {
    use std::io::Write;
    let file = std::fs::File::create(path)
        .map_err(|e| CommandError::Data(format!("cannot write {}: {e}", path.display())))?;
    let mut w = std::io::BufWriter::new(file);
    let werr = |e: std::io::Error| CommandError::Data(format!("write {}: {e}", path.display()));
    writeln!(w, "replicate,beta_r2,delta_bias,delta_corr,r2_signal_check").map_err(werr)?;
    let mut by_replicate: BTreeMap<usize, &simulate::ReplicateRow> = BTreeMap::new();
    for row in &study.rows {
        by_replicate.insert(row.replicate, row);
    }
    for r in 0..study.summary.replicates_requested {
        match by_replicate.get(&r) {
            Some(row) => {
                let corr = row
                    .delta_corr
                    .map(|c| c.to_string())
                    .unwrap_or_default();
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    row.replicate, row.beta_r2, row.delta_bias, corr, row.r2_signal_check
                )
                .map_err(werr)?;
            }
            None => writeln!(w, "{r},,,,").map_err(werr)?,
        }
    }
    w.flush().map_err(werr)
}

// -- eval ---------------------------------------------------------------------

fn cmd_eval(args: &CommonArgs) -> Result<(), CommandError> {
    const KEYS: &[&str] = &["truth_surface", "est_surface", "truth_delta", "est_delta"];
    let cfg = ConfigFile::load(&args.config, KEYS)?;
    let paths: Vec<PathBuf> = ["truth_surface", "est_surface", "truth_delta", "est_delta"]
        .iter()
        .map(|k| cfg.require(k).map(PathBuf::from))
        .collect::<Result<_, _>>()?;
    for p in &paths {
        ensure_file_exists(p)?;
    }
    let truth_surface = io::read_surface_csv(&paths[0])?;
    let est_surface = io::read_surface_csv(&paths[1])?;
    let truth_delta = io::read_delta_csv(&paths[2])?;
    let est_delta = io::read_delta_csv(&paths[3])?;

    let mut report = MetricReport::default();
    match metrics::beta_r2(&truth_surface, &est_surface) {
        Ok(v) => report.beta_r2 = Some(v),
        Err(MetricsError::SpecMismatch) => {
            return Err(CommandError::Data("surface grids differ in shape".into()))
        }
        Err(e) => report.notes.push(format!("beta_r2: {e}")),
    }
    match metrics::delta_bias(&truth_delta, &est_delta) {
        Ok(v) => report.delta_bias = Some(v),
        Err(MetricsError::LengthMismatch(a, b)) => {
            return Err(CommandError::Data(format!(
                "lag functions differ in length: {a} vs {b}"
            )))
        }
        Err(e) => report.notes.push(format!("delta_bias: {e}")),
    }
    match metrics::delta_corr(&truth_delta, &est_delta) {
        Ok(v) => report.delta_corr = Some(v),
        Err(MetricsError::ConstantSequence) => {
            report.notes.push("delta_corr: constant sequence".into())
        }
        Err(e) => report.notes.push(format!("delta_corr: {e}")),
    }
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CommandError::Data(format!("serialize report: {e}")))?;
    println!("{json}");
    Ok(())
}
