//! Experiment orchestration: configuration, single runs, sweeps, similarity
//! exports and aggregation of finished runs.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::dataio::{load_csv, make_splits, synth_problem, ColumnRef, CsvOptions, DataError, Dataset, SplitPlan};
use crate::engine::{run_fixed, run_ims, EngineError, EngineOptions, ImsEvent, RunOutcome, TracePoint};
use crate::evaluator::{EvaluationBudget, FitnessContext};
use crate::linkage::{BinningMode, BinningRule, LinkageError, MeasureKind, SimilarityMatrix};
use crate::seed::rng_from;
use crate::stats;
use crate::template::{OperatorSet, Protection, Representation, Template, TemplateError};

pub const DEFAULT_BUDGET: u64 = 100_000;
pub const DEFAULT_GENERATIONS: usize = 20;
/// Environment variable bounding the number of concurrent sweep runs.
pub const THREADS_ENV: &str = "GOMEA_SR_THREADS";
/// Generations whose across-run mean matrix is exported.
pub const MEAN_EXPORT_GENERATIONS: [usize; 4] = [0, 5, 10, 20];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("invalid value '{value}' for '{key}': {reason}")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("line {line}: expected key=value, got '{text}'")]
    Syntax { line: usize, text: String },
    #[error("{0}")]
    Conflict(String),
    #[error("missing setting: {0}")]
    Missing(&'static str),
    #[error(transparent)]
    Linkage(#[from] LinkageError),
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("run index {run} out of range (the split plan has {available} runs)")]
    RunOutOfRange { run: usize, available: usize },
    #[error("run produced no evaluated solution")]
    NoSolution,
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Stats(#[from] stats::StatsError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv {
        path: PathBuf,
        target: ColumnRef,
        bike_sharing: bool,
    },
    Synthetic {
        name: String,
        rows: usize,
        noise: f64,
    },
}

impl DataSource {
    /// Short name used in file names and reports.
    pub fn label(&self) -> String {
        match self {
            DataSource::Csv { path, .. } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "data".into()),
            DataSource::Synthetic { name, .. } => name.clone(),
        }
    }

    pub fn load(&self, seed: u64) -> Result<Dataset, DataError> {
        match self {
            DataSource::Csv {
                path,
                target,
                bike_sharing,
            } => {
                let mut opts = if *bike_sharing {
                    CsvOptions::bike_sharing()
                } else {
                    CsvOptions::target(target.clone())
                };
                opts.target = target.clone();
                load_csv(path, &opts)
            }
            DataSource::Synthetic { name, rows, noise } => synth_problem(name, *rows, *noise, seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    /// Interleaved multistart until the evaluation budget is spent.
    Budget(u64),
    /// One population of fixed size for a number of generations.
    Fixed { population: usize, generations: usize },
}

/// Everything that determines one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub measure: MeasureKind,
    pub height: usize,
    pub linear_scaling: bool,
    pub extended_ops: bool,
    pub protection: Protection,
    pub mode: RunMode,
    pub data: DataSource,
    pub seed: u64,
    /// Index into the cross-validation split plan.
    pub run: usize,
    pub binning: BinningRule,
    pub p_op: f64,
    pub parallel: bool,
    pub wall_clock: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            measure: MeasureKind::Node,
            height: 4,
            linear_scaling: false,
            extended_ops: false,
            protection: Protection::Conventional,
            mode: RunMode::Budget(DEFAULT_BUDGET),
            data: DataSource::Synthetic {
                name: "sin_plus_sqrt".into(),
                rows: 500,
                noise: 0.0,
            },
            seed: 1,
            run: 0,
            binning: BinningRule::default(),
            p_op: crate::engine::DEFAULT_P_OP,
            parallel: false,
            wall_clock: false,
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(invalid(key, v, "expected a boolean")),
    }
}

fn invalid(key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.into(),
        value: value.into(),
        reason: reason.into(),
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.trim().parse().map_err(|e: T::Err| invalid(key, v, e.to_string()))
}

/// Raw key=value settings before they are turned into a config. Later
/// settings override earlier ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

pub const CONFIG_KEYS: &[&str] = &[
    "measure",
    "adjusted",
    "height",
    "ls",
    "operators",
    "protection",
    "budget",
    "population",
    "generations",
    "dataset",
    "target",
    "bike_sharing",
    "synthetic",
    "rows",
    "noise",
    "seed",
    "run",
    "binning",
    "bins",
    "p_op",
    "parallel",
    "wall_clock",
];

impl Settings {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut s = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: n + 1,
                text: raw.to_string(),
            })?;
            s.set(k.trim(), v.trim())?;
        }
        Ok(s)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), ConfigError> {
        let key = key.trim().replace('-', "_");
        let key = match key.as_str() {
            "linear_scaling" => "ls".to_string(),
            "ops" | "operator_set" => "operators".to_string(),
            _ => key,
        };
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey(key));
        }
        self.values.insert(key, value.into());
        Ok(())
    }

    pub fn merge(&mut self, other: &Settings) {
        self.values.extend(other.values.iter().map(|(k, v)| (k.clone(), v.clone())));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn to_config(&self) -> Result<ExperimentConfig, ConfigError> {
        ExperimentConfig::from_settings(self)
    }
}

impl ExperimentConfig {
    pub fn from_settings(s: &Settings) -> Result<Self, ConfigError> {
        let mut c = ExperimentConfig::default();
        if let Some(v) = s.get("measure") {
            c.measure = v.parse()?;
        }
        if let Some(v) = s.get("adjusted") {
            c.measure = c.measure.with_adjustment(parse_bool("adjusted", v)?)?;
        }
        if let Some(v) = s.get("height") {
            c.height = parse_num("height", v)?;
        }
        if let Some(v) = s.get("ls") {
            c.linear_scaling = parse_bool("ls", v)?;
        }
        if let Some(v) = s.get("operators") {
            c.extended_ops = match v.trim() {
                "base" => false,
                "extended" => true,
                _ => return Err(invalid("operators", v, "expected 'base' or 'extended'")),
            };
        }
        if let Some(v) = s.get("protection") {
            c.protection = match v.trim() {
                "conventional" | "protected" => Protection::Conventional,
                "aq" | "analytic_quotient" => Protection::AnalyticQuotient,
                _ => return Err(invalid("protection", v, "expected 'conventional' or 'aq'")),
            };
        }

        let budget = s.get("budget").map(|v| parse_num::<u64>("budget", v)).transpose()?;
        let population = s.get("population").map(|v| parse_num::<usize>("population", v)).transpose()?;
        let generations = s.get("generations").map(|v| parse_num::<usize>("generations", v)).transpose()?;
        c.mode = match (budget, population, generations) {
            (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
                return Err(ConfigError::Conflict(
                    "'budget' cannot be combined with 'population'/'generations'".into(),
                ))
            }
            (Some(b), None, None) => RunMode::Budget(b),
            (None, Some(p), g) => RunMode::Fixed {
                population: p,
                generations: g.unwrap_or(DEFAULT_GENERATIONS),
            },
            (None, None, Some(_)) => return Err(ConfigError::Missing("population (fixed-generation mode)")),
            (None, None, None) => RunMode::Budget(DEFAULT_BUDGET),
        };

        let target = s.get("target").map(|v| v.parse::<ColumnRef>().expect("infallible"));
        let bike = s.get("bike_sharing").map(|v| parse_bool("bike_sharing", v)).transpose()?;
        c.data = match (s.get("dataset"), s.get("synthetic")) {
            (Some(_), Some(_)) => return Err(ConfigError::Conflict("set either 'dataset' or 'synthetic', not both".into())),
            (Some(path), None) => DataSource::Csv {
                path: PathBuf::from(path),
                target: target.ok_or(ConfigError::Missing("target column for a CSV dataset"))?,
                bike_sharing: bike.unwrap_or(false),
            },
            (None, synth) => {
                let DataSource::Synthetic { name, rows, noise } = c.data.clone() else {
                    unreachable!("default data source is synthetic")
                };
                let name = synth.map(str::to_string).unwrap_or(name);
                if !crate::dataio::SYNTHETIC_PROBLEMS.contains(&name.as_str()) {
                    return Err(invalid("synthetic", &name, format!("known problems: {}", crate::dataio::SYNTHETIC_PROBLEMS.join(", "))));
                }
                DataSource::Synthetic {
                    name,
                    rows: s.get("rows").map(|v| parse_num("rows", v)).transpose()?.unwrap_or(rows),
                    noise: s.get("noise").map(|v| parse_num("noise", v)).transpose()?.unwrap_or(noise),
                }
            }
        };
        if let Some(v) = s.get("seed") {
            c.seed = parse_num("seed", v)?;
        }
        if let Some(v) = s.get("run") {
            c.run = parse_num("run", v)?;
        }
        if let Some(v) = s.get("binning") {
            c.binning.mode = match v.trim() {
                "equal_width" | "width" => BinningMode::EqualWidth,
                "equal_frequency" | "frequency" => BinningMode::EqualFrequency,
                _ => return Err(invalid("binning", v, "expected 'equal_width' or 'equal_frequency'")),
            };
        }
        if let Some(v) = s.get("bins") {
            c.binning.bins = parse_num("bins", v)?;
        }
        if let Some(v) = s.get("p_op") {
            c.p_op = parse_num("p_op", v)?;
        }
        if let Some(v) = s.get("parallel") {
            c.parallel = parse_bool("parallel", v)?;
        }
        if let Some(v) = s.get("wall_clock") {
            c.wall_clock = parse_bool("wall_clock", v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.height < 1 {
            return Err(invalid("height", &self.height.to_string(), "must be at least 1"));
        }
        if self.binning.bins < 1 {
            return Err(invalid("bins", &self.binning.bins.to_string(), "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.p_op) {
            return Err(invalid("p_op", &self.p_op.to_string(), "must lie in [0, 1]"));
        }
        match self.mode {
            RunMode::Budget(b) if b < crate::engine::IMS_BASE_SIZE as u64 => Err(invalid(
                "budget",
                &b.to_string(),
                format!("must cover the first population ({} evaluations)", crate::engine::IMS_BASE_SIZE),
            )),
            RunMode::Fixed { population, .. } if population < 2 => {
                Err(invalid("population", &population.to_string(), "must be at least 2"))
            }
            _ => Ok(()),
        }
    }

    /// Settings that reproduce this config.
    pub fn to_settings(&self) -> Settings {
        let mut s = Settings::default();
        let mut put = |k: &str, v: String| {
            s.values.insert(k.to_string(), v);
        };
        put("measure", self.measure.to_string());
        put("height", self.height.to_string());
        put("ls", self.linear_scaling.to_string());
        put("operators", if self.extended_ops { "extended" } else { "base" }.into());
        put(
            "protection",
            match self.protection {
                Protection::Conventional => "conventional",
                Protection::AnalyticQuotient => "aq",
            }
            .into(),
        );
        match self.mode {
            RunMode::Budget(b) => put("budget", b.to_string()),
            RunMode::Fixed { population, generations } => {
                put("population", population.to_string());
                put("generations", generations.to_string());
            }
        }
        match &self.data {
            DataSource::Csv {
                path,
                target,
                bike_sharing,
            } => {
                put("dataset", path.display().to_string());
                put("target", target.to_string());
                put("bike_sharing", bike_sharing.to_string());
            }
            DataSource::Synthetic { name, rows, noise } => {
                put("synthetic", name.clone());
                put("rows", rows.to_string());
                put("noise", noise.to_string());
            }
        }
        put("seed", self.seed.to_string());
        put("run", self.run.to_string());
        put(
            "binning",
            match self.binning.mode {
                BinningMode::EqualWidth => "equal_width",
                BinningMode::EqualFrequency => "equal_frequency",
            }
            .into(),
        );
        put("bins", self.binning.bins.to_string());
        put("p_op", self.p_op.to_string());
        put("parallel", self.parallel.to_string());
        put("wall_clock", self.wall_clock.to_string());
        s
    }

    pub fn operator_set(&self) -> OperatorSet {
        if self.extended_ops {
            OperatorSet::extended()
        } else {
            OperatorSet::base()
        }
    }

    pub fn engine_options(&self) -> EngineOptions {
        EngineOptions {
            measure: self.measure,
            binning: self.binning,
            p_op: self.p_op,
            parallel: self.parallel,
            wall_clock: self.wall_clock,
        }
    }

    /// File stem encoding dataset, measure, height, scaling, seed and run.
    pub fn file_stem(&self) -> String {
        format!(
            "{}__{}__h{}__ls{}__s{}__r{:02}",
            self.data.label(),
            self.measure,
            self.height,
            u8::from(self.linear_scaling),
            self.seed,
            self.run
        )
    }
}

/// Final scores of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub dataset: String,
    pub measure: String,
    pub height: usize,
    pub ls: bool,
    pub seed: u64,
    pub run: usize,
    pub run_seed: u64,
    pub train_r2: f64,
    pub validation_r2: f64,
    pub test_r2: f64,
    pub intercept: f64,
    pub slope: f64,
    pub expression: String,
    pub evaluations: u64,
    pub generations: usize,
    pub init_hash: String,
}

/// Everything recorded about one run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub trace: Vec<TracePoint>,
    pub events: Vec<ImsEvent>,
    pub summary: Summary,
    pub snapshots: Vec<(usize, Arc<SimilarityMatrix>)>,
}

impl RunRecord {
    /// One JSON object per line: the config, every improvement, every
    /// scheduler event, then the summary.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<(), ExperimentError> {
        let mut line = |v: Value| -> Result<(), ExperimentError> {
            serde_json::to_writer(&mut w, &v)?;
            w.write_all(b"\n").map_err(|source| ExperimentError::Io {
                path: PathBuf::from("<record>"),
                source,
            })
        };
        line(json!({"event": "config", "config": self.config.to_settings().values}))?;
        for p in &self.trace {
            let mut v = serde_json::to_value(p)?;
            v["event"] = json!("improvement");
            line(v)?;
        }
        for e in &self.events {
            let mut v = serde_json::to_value(e)?;
            let kind = v["kind"].clone();
            v.as_object_mut().expect("events are objects").remove("kind");
            v["event"] = kind;
            line(v)?;
        }
        let mut v = serde_json::to_value(&self.summary)?;
        v["event"] = json!("summary");
        line(v)
    }

    pub fn to_jsonl(&self) -> Result<String, ExperimentError> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        Ok(String::from_utf8(buf).expect("JSON is UTF-8"))
    }
}

/// Executes one configured run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunRecord, ExperimentError> {
    cfg.validate()?;
    let data = cfg.data.load(cfg.seed)?;
    run_on_dataset(cfg, &data)
}

/// Executes one configured run on already loaded data.
pub fn run_on_dataset(cfg: &ExperimentConfig, data: &Dataset) -> Result<RunRecord, ExperimentError> {
    cfg.validate()?;
    let splits = make_splits(data.rows(), &SplitPlan::new(cfg.seed));
    let split = splits.get(cfg.run).ok_or(ExperimentError::RunOutOfRange {
        run: cfg.run,
        available: splits.len(),
    })?;
    let repr = Representation::new(Template::new(cfg.height, 2)?, cfg.operator_set())?.with_protection(cfg.protection);
    let ctx = FitnessContext::new(repr, data.select(&split.train), cfg.linear_scaling);
    let opts = cfg.engine_options();
    let outcome: RunOutcome = match cfg.mode {
        RunMode::Budget(b) => run_ims(&ctx, &opts, &EvaluationBudget::new(b), split.seed, None)?,
        RunMode::Fixed { population, generations } => run_fixed(
            &ctx,
            &opts,
            &EvaluationBudget::unlimited(),
            split.seed,
            population,
            generations,
        )?,
    };
    let (best, fit) = outcome.best.clone().ok_or(ExperimentError::NoSolution)?;
    let score = |idx: &[usize]| -> Result<f64, ExperimentError> {
        if idx.is_empty() {
            return Ok(f64::NAN);
        }
        Ok(ctx
            .r2_on(&best, &fit, &data.select(idx))
            .map_err(EngineError::from)?)
    };
    let summary = Summary {
        dataset: cfg.data.label(),
        measure: cfg.measure.to_string(),
        height: cfg.height,
        ls: cfg.linear_scaling,
        seed: cfg.seed,
        run: cfg.run,
        run_seed: split.seed,
        train_r2: fit.r2,
        validation_r2: score(&split.validation)?,
        test_r2: score(&split.test)?,
        intercept: fit.intercept,
        slope: fit.slope,
        expression: ctx.repr.to_infix(&best),
        evaluations: outcome.evaluations,
        generations: outcome.generations,
        init_hash: outcome.init_hash.clone(),
    };
    Ok(RunRecord {
        config: cfg.clone(),
        trace: outcome.trace,
        events: outcome.events,
        summary,
        snapshots: outcome.snapshots,
    })
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Number of sweep workers: `GOMEA_SR_THREADS` if set and positive, else
/// the available parallelism.
pub fn worker_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Cartesian product of settings run over the split plan.
#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub base: ExperimentConfig,
    pub measures: Vec<MeasureKind>,
    pub heights: Vec<usize>,
    pub linear_scaling: Vec<bool>,
    pub runs: Vec<usize>,
}

impl SweepPlan {
    pub fn configs(&self) -> Vec<ExperimentConfig> {
        let mut out = Vec::new();
        for &measure in &self.measures {
            for &height in &self.heights {
                for &linear_scaling in &self.linear_scaling {
                    for &run in &self.runs {
                        out.push(ExperimentConfig {
                            measure,
                            height,
                            linear_scaling,
                            run,
                            ..self.base.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SweepReport {
    pub completed: Vec<PathBuf>,
    pub skipped: Vec<PathBuf>,
    pub failed: Vec<PathBuf>,
}

/// Runs every config of `plan` into `out_dir`, skipping configs whose
/// record already exists. Failures are written as `.err` files.
pub fn sweep(plan: &SweepPlan, out_dir: &Path, threads: usize) -> Result<SweepReport, ExperimentError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    for cfg in plan.configs() {
        cfg.validate()?;
    }
    let data = plan.base.data.load(plan.base.seed)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .expect("thread pool");
    let configs = plan.configs();
    let results: Vec<(PathBuf, Option<bool>)> = pool.install(|| {
        configs
            .par_iter()
            .map(|cfg| {
                let path = out_dir.join(format!("{}.jsonl", cfg.file_stem()));
                if path.exists() {
                    return (path, None);
                }
                let err_path = path.with_extension("err");
                let outcome = run_on_dataset(cfg, &data).and_then(|r| r.to_jsonl());
                match outcome {
                    Ok(text) => match write_atomic(&path, text.as_bytes()) {
                        Ok(()) => {
                            let _ = fs::remove_file(&err_path);
                            (path, Some(true))
                        }
                        Err(e) => {
                            let _ = write_atomic(&err_path, e.to_string().as_bytes());
                            (err_path, Some(false))
                        }
                    },
                    Err(e) => {
                        let _ = write_atomic(&err_path, format!("{e}\n").as_bytes());
                        (err_path, Some(false))
                    }
                }
            })
            .collect()
    });
    let mut report = SweepReport::default();
    for (path, status) in results {
        match status {
            None => report.skipped.push(path),
            Some(true) => report.completed.push(path),
            Some(false) => report.failed.push(path),
        }
    }
    Ok(report)
}

/// Files written by [`export_similarity`].
#[derive(Debug, Clone, Default)]
pub struct ExportReport {
    pub per_run: Vec<PathBuf>,
    pub means: Vec<PathBuf>,
}

/// Runs `runs` fixed-size runs and writes every recorded similarity matrix,
/// plus the element-wise mean over the runs that reached generations
/// 0, 5, 10 and 20.
pub fn export_similarity(
    cfg: &ExperimentConfig,
    runs: &[usize],
    out_dir: &Path,
    threads: usize,
) -> Result<ExportReport, ExperimentError> {
    if !matches!(cfg.mode, RunMode::Fixed { .. }) {
        return Err(ConfigError::Missing("population (similarity export needs fixed-generation mode)").into());
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let data = cfg.data.load(cfg.seed)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .expect("thread pool");
    let records: Vec<RunRecord> = pool.install(|| {
        runs.par_iter()
            .map(|&run| run_on_dataset(&ExperimentConfig { run, ..cfg.clone() }, &data))
            .collect::<Result<_, _>>()
    })?;
    let stem = ExperimentConfig { run: 0, ..cfg.clone() }.file_stem();
    let stem = stem.trim_end_matches("__r00");
    let mut report = ExportReport::default();
    for r in &records {
        for (g, m) in &r.snapshots {
            let path = out_dir.join(format!("{stem}__r{:02}__g{:02}.csv", r.config.run, g));
            write_atomic(&path, m.to_csv().as_bytes())?;
            report.per_run.push(path);
        }
    }
    for g in MEAN_EXPORT_GENERATIONS {
        let at_g: Vec<&SimilarityMatrix> = records
            .iter()
            .filter_map(|r| r.snapshots.iter().find(|(sg, _)| *sg == g).map(|(_, m)| m.as_ref()))
            .collect();
        if let Some(mean) = SimilarityMatrix::mean(at_g) {
            let path = out_dir.join(format!("{stem}__mean__g{g:02}.csv"));
            write_atomic(&path, mean.to_csv().as_bytes())?;
            report.means.push(path);
        }
    }
    Ok(report)
}

/// Aggregate of the summaries sharing one grouping key.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupStats {
    pub dataset: String,
    pub measure: String,
    pub height: usize,
    pub ls: bool,
    pub runs: usize,
    pub train_median: f64,
    pub train_iqm: f64,
    pub test_median: f64,
    pub test_iqm: f64,
    pub test_iqm_ci: (f64, f64),
}

/// Reads the summary line of every `.jsonl` record in `dir`.
pub fn read_summaries(dir: &Path) -> Result<Vec<Value>, ExperimentError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let text = fs::read_to_string(&p).map_err(io_err(&p))?;
        for line in text.lines().rev() {
            let v: Value = serde_json::from_str(line)?;
            if v["event"] == "summary" {
                out.push(v);
                break;
            }
        }
    }
    Ok(out)
}

fn finite(values: impl Iterator<Item = f64>) -> Vec<f64> {
    values.filter(|v| v.is_finite()).collect()
}

/// Groups summaries by dataset, measure, height and scaling. Groups with
/// fewer than four finite scores get NaN for the IQM columns.
pub fn aggregate(summaries: &[Value], resamples: usize, seed: u64) -> Vec<GroupStats> {
    let mut groups: BTreeMap<(String, String, u64, bool), Vec<&Value>> = BTreeMap::new();
    for s in summaries {
        let key = (
            s["dataset"].as_str().unwrap_or("").to_string(),
            s["measure"].as_str().unwrap_or("").to_string(),
            s["height"].as_u64().unwrap_or(0),
            s["ls"].as_bool().unwrap_or(false),
        );
        groups.entry(key).or_default().push(s);
    }
    let mut rng = rng_from(seed);
    groups
        .into_iter()
        .map(|((dataset, measure, height, ls), rows)| {
            let train = finite(rows.iter().map(|r| r["train_r2"].as_f64().unwrap_or(f64::NAN)));
            let test = finite(rows.iter().map(|r| r["test_r2"].as_f64().unwrap_or(f64::NAN)));
            let nan = f64::NAN;
            GroupStats {
                dataset,
                measure,
                height: height as usize,
                ls,
                runs: rows.len(),
                train_median: stats::median(&train).unwrap_or(nan),
                train_iqm: stats::iqm(&train).unwrap_or(nan),
                test_median: stats::median(&test).unwrap_or(nan),
                test_iqm: stats::iqm(&test).unwrap_or(nan),
                test_iqm_ci: stats::bootstrap_ci(&test, stats::iqm, 0.95, resamples, &mut rng).unwrap_or((nan, nan)),
            }
        })
        .collect()
}

/// Stratified (per-dataset) bootstrap interval of the test IQM of each
/// measure over all datasets.
pub fn measure_intervals(
    summaries: &[Value],
    resamples: usize,
    seed: u64,
) -> BTreeMap<String, Result<(f64, f64), stats::StatsError>> {
    let mut by_measure: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for s in summaries {
        if let Some(v) = s["test_r2"].as_f64().filter(|v| v.is_finite()) {
            by_measure
                .entry(s["measure"].as_str().unwrap_or("").to_string())
                .or_default()
                .entry(s["dataset"].as_str().unwrap_or("").to_string())
                .or_default()
                .push(v);
        }
    }
    let mut rng = rng_from(seed);
    by_measure
        .into_iter()
        .map(|(m, groups)| {
            let groups: Vec<Vec<f64>> = groups.into_values().collect();
            (m, stats::stratified_bootstrap_ci(&groups, stats::iqm, 0.95, resamples, &mut rng))
        })
        .collect()
}

/// Writes grouped statistics as CSV.
pub fn write_stats_csv(rows: &[GroupStats], mut w: impl Write) -> io::Result<()> {
    writeln!(
        w,
        "dataset,measure,height,ls,runs,train_median,train_iqm,test_median,test_iqm,test_iqm_lo,test_iqm_hi"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.dataset,
            r.measure,
            r.height,
            r.ls,
            r.runs,
            r.train_median,
            r.train_iqm,
            r.test_median,
            r.test_iqm,
            r.test_iqm_ci.0,
            r.test_iqm_ci.1
        )?;
    }
    Ok(())
}

/// Default number of bootstrap resamples.
pub const BOOTSTRAP_RESAMPLES: usize = 2000;
