//! Run specifications, persisted artifacts and the `search`, `compare` and
//! `inspect` verbs.
//!
//! A replicate run writes four files into `<output_dir>/seed-<seed>/`:
//! `evaluations.csv` (append-only log closed by a checksum line),
//! `front.csv`, `metrics.csv` and `report.toml`. Every one of them has a
//! loader here.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::arr::RecommendStats;
use crate::baselines::{evolve, random_search_scheduled, EvoConfig, RandomConfig};
use crate::error::{Error, Result};
use crate::fes::extract_attributes;
use crate::mlp::TrainConfig;
use crate::oracle::{CostConstants, CostModel, LandscapeSpec, QuickMetrics, SyntheticEvaluator, SyntheticSpec};
use crate::pareto::{export_front, pareto_boundary, parse_front, Archive, EvaluatedRecord, FrontRow, PerformancePair};
use crate::search::{bootstrap, final_report, iterate, AccuracySource, FinalReport, MetricsEntry, OptimizerConfig};
use crate::space::{ArchitectureCode, CellCatalog};

pub const LOG_FILE: &str = "evaluations.csv";
pub const FRONT_FILE: &str = "front.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const REPORT_FILE: &str = "report.toml";

const LOG_COLUMNS: &str = "iteration,acc,par,quick_top1,quick_top5,quick_loss,code";
const METRICS_COLUMNS: &str =
    "iteration,evaluations,hypervolume,boundary_size,best_acc_under_p_max,decoded,mutated,random,fe_holdout_rmse";

/// Process exit status for a failed command: 2 for unusable input, 1 for a
/// failure while running.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidField { .. } | Error::Catalog(_) | Error::Parse { .. } | Error::Config(_) => 2,
        _ => 1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Moarr,
    Random,
    Evolutionary,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Moarr => "moarr",
            Algorithm::Random => "random",
            Algorithm::Evolutionary => "evolutionary",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
enum AccuracyName {
    Fes,
    Direct,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainBlock {
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    max_epochs: Option<usize>,
    l2_penalty: Option<f64>,
    early_stop_patience: Option<usize>,
}

impl TrainBlock {
    fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.max_epochs {
            cfg.max_epochs = v;
        }
        if let Some(v) = self.l2_penalty {
            cfg.l2_penalty = v;
        }
        if let Some(v) = self.early_stop_patience {
            cfg.early_stop_patience = v;
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerBlock {
    p_max: Option<f64>,
    batch_per_iteration: Option<usize>,
    max_iterations: Option<usize>,
    bootstrap_count: Option<usize>,
    fes_refresh: Option<bool>,
    accuracy_source: Option<AccuracyName>,
    band_split: Option<f64>,
    band_picks: Option<usize>,
    target_count: Option<usize>,
    mutant_pool: Option<usize>,
    holdout_fraction: Option<f64>,
    fe_hidden: Option<Vec<usize>>,
    rr_hidden: Option<Vec<usize>>,
    fes_hidden: Option<usize>,
    #[serde(default)]
    fe_train: TrainBlock,
    #[serde(default)]
    rr_train: TrainBlock,
    #[serde(default)]
    fes_train: TrainBlock,
}

impl OptimizerBlock {
    fn build(&self) -> OptimizerConfig {
        let mut c = OptimizerConfig::default();
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { $target = v; })*
            };
        }
        set! {
            p_max => c.p_max,
            batch_per_iteration => c.batch_per_iteration,
            max_iterations => c.max_iterations,
            bootstrap_count => c.bootstrap_count,
            fes_refresh => c.fes_refresh,
            band_split => c.band_split,
            band_picks => c.band_picks,
            target_count => c.surrogate.target_count,
            mutant_pool => c.surrogate.mutant_pool,
            fe_hidden => c.surrogate.fe_hidden,
            rr_hidden => c.surrogate.rr_hidden,
            fes_hidden => c.fes.hidden,
        }
        if let Some(f) = self.holdout_fraction {
            c.surrogate.holdout_fraction = f;
            c.fes.holdout_fraction = f;
        }
        if let Some(a) = self.accuracy_source {
            c.accuracy_source = match a {
                AccuracyName::Fes => AccuracySource::Fes,
                AccuracyName::Direct => AccuracySource::Direct,
            };
        }
        self.fe_train.apply(&mut c.surrogate.fe_train);
        self.rr_train.apply(&mut c.surrogate.rr_train);
        self.fes_train.apply(&mut c.fes.train);
        c
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvolutionBlock {
    population_size: Option<usize>,
    generations: Option<usize>,
    crossover_rate: Option<f64>,
    mutation_rate: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluatorBlock {
    landscape_seed: Option<u64>,
    landscape: Option<PathBuf>,
    cost_model: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRunSpec {
    algorithm: Algorithm,
    catalog: Option<PathBuf>,
    output_dir: PathBuf,
    replicates: Option<usize>,
    seeds: Option<Vec<u64>>,
    #[serde(default)]
    evaluator: EvaluatorBlock,
    #[serde(default)]
    optimizer: OptimizerBlock,
    #[serde(default)]
    evolution: EvolutionBlock,
}

/// A validated experiment description with every referenced file loaded.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub algorithm: Algorithm,
    pub catalog: Arc<CellCatalog>,
    pub output_dir: PathBuf,
    /// One replicate per seed.
    pub seeds: Vec<u64>,
    /// Fixed landscape seed; `None` uses each replicate's seed.
    pub landscape_seed: Option<u64>,
    pub landscape: LandscapeSpec,
    pub cost: CostConstants,
    /// `seed` is replaced per replicate.
    pub optimizer: OptimizerConfig,
    /// `seed` is replaced per replicate.
    pub evolution: EvoConfig,
}

/// 1-based line of the first `key = ...` assignment in `text`.
fn line_of_key(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        l.trim_start()
            .strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

/// 1-based line of the `[name]` table header in `text`.
fn line_of_table(text: &str, name: &str) -> Option<usize> {
    let header = format!("[{name}]");
    text.lines().position(|l| l.trim() == header).map(|i| i + 1)
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn toml_error(text: &str, err: toml::de::Error) -> Error {
    let line = err.span().map(|s| line_of_offset(text, s.start));
    Error::parse(line, err.message().trim().to_string())
}

fn read_referenced(base: &Path, rel: &Path, what: &str, line: Option<usize>) -> Result<(PathBuf, String)> {
    let path = base.join(rel);
    match fs::read_to_string(&path) {
        Ok(text) => Ok((path, text)),
        Err(e) => Err(Error::parse(line, format!("cannot read {what} `{}`: {e}", path.display()))),
    }
}

impl RunSpec {
    /// Parses a spec; relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let raw: RawRunSpec = toml::from_str(text).map_err(|e| toml_error(text, e))?;
        let at = |key: &str| line_of_key(text, key);

        let catalog = match &raw.catalog {
            None => CellCatalog::standard(),
            Some(rel) => {
                let (path, body) = read_referenced(base_dir, rel, "catalog", at("catalog"))?;
                CellCatalog::parse(&body)
                    .map_err(|e| Error::parse(at("catalog"), format!("catalog `{}`: {e}", path.display())))?
            }
        };
        let landscape = match &raw.evaluator.landscape {
            None => LandscapeSpec::default(),
            Some(rel) => {
                let (path, body) = read_referenced(base_dir, rel, "landscape", at("landscape"))?;
                toml::from_str(&body).map_err(|e| {
                    Error::parse(at("landscape"), format!("landscape `{}`: {}", path.display(), e.message().trim()))
                })?
            }
        };
        let cost = match &raw.evaluator.cost_model {
            None => CostConstants::default(),
            Some(rel) => {
                let (path, body) = read_referenced(base_dir, rel, "cost model", at("cost_model"))?;
                toml::from_str(&body).map_err(|e| {
                    Error::parse(at("cost_model"), format!("cost model `{}`: {}", path.display(), e.message().trim()))
                })?
            }
        };

        let seeds = match (raw.replicates, raw.seeds) {
            (Some(n), Some(seeds)) if seeds.len() != n => {
                return Err(Error::parse(
                    at("seeds"),
                    format!("seed list has {} entries but replicates = {n}", seeds.len()),
                ))
            }
            (_, Some(seeds)) => seeds,
            (Some(n), None) => (0..n as u64).collect(),
            (None, None) => vec![0],
        };
        if seeds.is_empty() {
            return Err(Error::parse(at("seeds").or(at("replicates")), "at least one replicate is required"));
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::parse(at("seeds"), "seeds must be distinct"));
        }

        let optimizer = raw.optimizer.build();
        optimizer
            .validate()
            .map_err(|e| Error::parse(line_of_table(text, "optimizer").or(at("p_max")), e.to_string()))?;

        let defaults = EvoConfig::default();
        let population_size = raw.evolution.population_size.unwrap_or(defaults.population_size);
        // Without an explicit generation count the baseline gets the same
        // number of evaluations as the main optimizer (rounded up).
        let generations = raw.evolution.generations.unwrap_or_else(|| {
            optimizer
                .total_evaluations()
                .saturating_sub(population_size)
                .div_ceil(population_size.max(1))
        });
        let evolution = EvoConfig {
            population_size,
            generations,
            crossover_rate: raw.evolution.crossover_rate.unwrap_or(defaults.crossover_rate),
            mutation_rate: raw.evolution.mutation_rate.unwrap_or(defaults.mutation_rate),
            seed: 0,
        };
        evolution.validate().map_err(|e| Error::parse(line_of_table(text, "evolution"), e.to_string()))?;

        Ok(RunSpec {
            algorithm: raw.algorithm,
            catalog: Arc::new(catalog),
            output_dir: base_dir.join(raw.output_dir),
            seeds,
            landscape_seed: raw.evaluator.landscape_seed,
            landscape,
            cost,
            optimizer,
            evolution,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read spec `{}`: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn replicate_dir(&self, seed: u64) -> PathBuf {
        self.output_dir.join(format!("seed-{seed}"))
    }

    pub fn evaluator(&self, seed: u64) -> SyntheticEvaluator {
        let spec = SyntheticSpec {
            landscape: LandscapeSpec {
                seed: self.landscape_seed.unwrap_or(seed),
                ..self.landscape
            },
            cost: self.cost,
        };
        SyntheticEvaluator::new(spec, self.catalog.clone())
    }

    fn log_header(&self, seed: u64) -> LogHeader {
        let accuracy = match (self.algorithm, self.optimizer.accuracy_source) {
            (Algorithm::Moarr, AccuracySource::Fes) => "fes",
            _ => "direct",
        };
        LogHeader {
            algorithm: self.algorithm.name().to_string(),
            seed,
            p_max: self.optimizer.p_max,
            landscape_seed: self.landscape_seed.unwrap_or(seed),
            accuracy: accuracy.to_string(),
        }
    }
}

/// 64-bit FNV-1a.
fn fnv1a(hash: u64, bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(hash, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

#[derive(Debug, Clone, PartialEq)]
pub struct LogHeader {
    pub algorithm: String,
    pub seed: u64,
    pub p_max: f64,
    pub landscape_seed: u64,
    /// `fes` when stored accuracies are regressor predictions.
    pub accuracy: String,
}

fn format_record(r: &EvaluatedRecord) -> String {
    let (t1, t5, loss) = match r.quick {
        Some(q) => (q.top1.to_string(), q.top5.to_string(), q.loss.to_string()),
        None => Default::default(),
    };
    format!("{},{},{},{t1},{t5},{loss},{}", r.iteration, r.perf.acc, r.perf.par, r.code)
}

/// Append-only evaluation log. Each line is flushed as written; `finish`
/// appends the checksum line that marks the log complete.
pub struct LogWriter<W: std::io::Write> {
    out: W,
    hash: u64,
    records: usize,
}

impl<W: std::io::Write> LogWriter<W> {
    pub fn new(out: W, header: &LogHeader) -> Result<Self> {
        let mut w = LogWriter {
            out,
            hash: FNV_OFFSET,
            records: 0,
        };
        w.line("# evaluation log")?;
        w.line(&format!("# algorithm={}", header.algorithm))?;
        w.line(&format!("# seed={}", header.seed))?;
        w.line(&format!("# p_max={}", header.p_max))?;
        w.line(&format!("# landscape_seed={}", header.landscape_seed))?;
        w.line(&format!("# accuracy={}", header.accuracy))?;
        w.line(LOG_COLUMNS)?;
        w.out.flush()?;
        Ok(w)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        self.hash = fnv1a(fnv1a(self.hash, s.as_bytes()), b"\n");
        writeln!(self.out, "{s}")?;
        Ok(())
    }

    pub fn append(&mut self, records: &[EvaluatedRecord]) -> Result<()> {
        for r in records {
            self.line(&format_record(r))?;
            self.records += 1;
        }
        self.out.flush()?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        writeln!(self.out, "# checksum={:016x} records={}", self.hash, self.records)?;
        self.out.flush()?;
        Ok(self.out)
    }
}

#[derive(Debug, Clone)]
pub struct EvaluationLog {
    pub header: LogHeader,
    pub records: Vec<EvaluatedRecord>,
}

impl EvaluationLog {
    pub fn archive(&self) -> Result<Archive> {
        let mut a = Archive::new();
        a.extend(self.records.iter().cloned())?;
        Ok(a)
    }

    pub fn last_iteration(&self) -> usize {
        self.records.iter().map(|r| r.iteration).max().unwrap_or(0)
    }
}

fn parse_opt_f64(s: &str, what: &str, line: usize) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::parse(Some(line), format!("bad {what} `{s}`")))
}

fn parse_f64(s: &str, what: &str, line: usize) -> Result<f64> {
    parse_opt_f64(s, what, line)?.ok_or_else(|| Error::parse(Some(line), format!("missing {what}")))
}

fn parse_usize(s: &str, what: &str, line: usize) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::parse(Some(line), format!("bad {what} `{s}`")))
}

/// Parses a complete log; a missing or mismatching checksum line means the
/// log was truncated or edited.
pub fn parse_log(text: &str, catalog: &CellCatalog) -> Result<EvaluationLog> {
    let body_end = text.trim_end_matches('\n').rfind('\n').map_or(0, |i| i + 1);
    let last = text[body_end..].trim_end_matches('\n');
    let last_line = text[..body_end].matches('\n').count() + 1;
    let checksum = last
        .strip_prefix("# checksum=")
        .ok_or_else(|| Error::parse(Some(last_line), "log has no checksum line; the run did not finish or the file is truncated"))?;
    let (hex, count) = checksum
        .split_once(" records=")
        .ok_or_else(|| Error::parse(Some(last_line), "malformed checksum line"))?;
    let expected = u64::from_str_radix(hex, 16).map_err(|_| Error::parse(Some(last_line), "malformed checksum"))?;
    let body = &text[..body_end];
    if fnv1a(FNV_OFFSET, body.as_bytes()) != expected {
        return Err(Error::parse(Some(last_line), "checksum mismatch; the log was modified or truncated"));
    }

    let mut meta = BTreeMap::new();
    let mut records = Vec::new();
    let mut seen_columns = false;
    for (i, line) in body.lines().enumerate() {
        let n = i + 1;
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.trim().split_once('=') {
                meta.insert(k.to_string(), v.to_string());
            }
            continue;
        }
        if !seen_columns {
            if line != LOG_COLUMNS {
                return Err(Error::parse(Some(n), format!("expected header `{LOG_COLUMNS}`")));
            }
            seen_columns = true;
            continue;
        }
        let cols: Vec<&str> = line.splitn(7, ',').collect();
        if cols.len() != 7 {
            return Err(Error::parse(Some(n), "expected 7 columns"));
        }
        let quick = match (
            parse_opt_f64(cols[3], "quick_top1", n)?,
            parse_opt_f64(cols[4], "quick_top5", n)?,
            parse_opt_f64(cols[5], "quick_loss", n)?,
        ) {
            (Some(top1), Some(top5), Some(loss)) => Some(QuickMetrics { top1, top5, loss }),
            (None, None, None) => None,
            _ => return Err(Error::parse(Some(n), "quick metrics must be all present or all empty")),
        };
        let perf = PerformancePair::new(parse_f64(cols[1], "acc", n)?, parse_f64(cols[2], "par", n)?)
            .map_err(|e| Error::parse(Some(n), e.to_string()))?;
        records.push(EvaluatedRecord {
            iteration: parse_usize(cols[0], "iteration", n)?,
            perf,
            quick,
            code: ArchitectureCode::parse(cols[6], catalog).map_err(|e| Error::parse(Some(n), e.to_string()))?,
        });
    }
    let expected_count = parse_usize(count, "record count", last_line)?;
    if expected_count != records.len() {
        return Err(Error::parse(
            Some(last_line),
            format!("checksum line announces {expected_count} records, found {}", records.len()),
        ));
    }

    let get = |key: &str| {
        meta.get(key)
            .cloned()
            .ok_or_else(|| Error::parse(None, format!("log header lacks `{key}`")))
    };
    let header = LogHeader {
        algorithm: get("algorithm")?,
        seed: get("seed")?
            .parse()
            .map_err(|_| Error::parse(None, "bad seed in log header"))?,
        p_max: get("p_max")?
            .parse()
            .map_err(|_| Error::parse(None, "bad p_max in log header"))?,
        landscape_seed: get("landscape_seed")?
            .parse()
            .map_err(|_| Error::parse(None, "bad landscape_seed in log header"))?,
        accuracy: get("accuracy")?,
    };
    Ok(EvaluationLog { header, records })
}

pub fn load_log(path: &Path, catalog: &CellCatalog) -> Result<EvaluationLog> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read log `{}`: {e}", path.display())))?;
    parse_log(&text, catalog).map_err(|e| match e {
        Error::Parse { line, message } => Error::parse(line, format!("{}: {message}", path.display())),
        other => other,
    })
}

/// One metrics-trace row; the recommendation columns are empty for
/// algorithms without a recommendation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub iteration: usize,
    pub evaluations: usize,
    pub hypervolume: f64,
    pub boundary_size: usize,
    pub best_acc_under_p_max: Option<f64>,
    pub recommend: Option<RecommendStats>,
    pub fe_holdout_rmse: Option<f64>,
}

impl From<&MetricsEntry> for MetricsRow {
    fn from(m: &MetricsEntry) -> Self {
        MetricsRow {
            iteration: m.iteration,
            evaluations: m.evaluations,
            hypervolume: m.hypervolume,
            boundary_size: m.boundary_size,
            best_acc_under_p_max: m.best_acc_under_p_max,
            recommend: (m.iteration > 0).then_some(m.recommend),
            fe_holdout_rmse: m.fe_holdout_rmse,
        }
    }
}

/// Cumulative progress after each iteration label in `records`.
pub fn metrics_from_records(records: &[EvaluatedRecord], p_max: f64) -> Vec<MetricsRow> {
    let last = records.iter().map(|r| r.iteration).max();
    let Some(last) = last else { return Vec::new() };
    (0..=last)
        .map(|t| {
            let upto: Vec<PerformancePair> = records.iter().filter(|r| r.iteration <= t).map(|r| r.perf).collect();
            let boundary: Vec<PerformancePair> = pareto_boundary(&upto).into_iter().map(|i| upto[i]).collect();
            MetricsRow {
                iteration: t,
                evaluations: upto.len(),
                hypervolume: crate::pareto::hypervolume_2d(&boundary, p_max),
                boundary_size: boundary.len(),
                best_acc_under_p_max: upto.iter().filter(|p| p.par <= p_max).map(|p| p.acc).max_by(f64::total_cmp),
                recommend: None,
                fe_holdout_rmse: None,
            }
        })
        .collect()
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn format_metrics(rows: &[MetricsRow]) -> String {
    let mut out = format!("{METRICS_COLUMNS}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.iteration,
            r.evaluations,
            r.hypervolume,
            r.boundary_size,
            opt(r.best_acc_under_p_max),
            opt(r.recommend.map(|s| s.decoded)),
            opt(r.recommend.map(|s| s.mutated)),
            opt(r.recommend.map(|s| s.random)),
            opt(r.fe_holdout_rmse),
        );
    }
    out
}

pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, l)| l) != Some(METRICS_COLUMNS) {
        return Err(Error::parse(Some(1), format!("expected header `{METRICS_COLUMNS}`")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let n = i + 1;
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 9 {
            return Err(Error::parse(Some(n), "expected 9 columns"));
        }
        let counts: Vec<Option<usize>> = c[5..8]
            .iter()
            .map(|s| if s.is_empty() { Ok(None) } else { parse_usize(s, "count", n).map(Some) })
            .collect::<Result<_>>()?;
        let recommend = match counts[..] {
            [Some(decoded), Some(mutated), Some(random)] => Some(RecommendStats { decoded, mutated, random }),
            [None, None, None] => None,
            _ => return Err(Error::parse(Some(n), "recommendation counts must be all present or all empty")),
        };
        rows.push(MetricsRow {
            iteration: parse_usize(c[0], "iteration", n)?,
            evaluations: parse_usize(c[1], "evaluations", n)?,
            hypervolume: parse_f64(c[2], "hypervolume", n)?,
            boundary_size: parse_usize(c[3], "boundary_size", n)?,
            best_acc_under_p_max: parse_opt_f64(c[4], "best_acc_under_p_max", n)?,
            recommend,
            fe_holdout_rmse: parse_opt_f64(c[8], "fe_holdout_rmse", n)?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub acc: f64,
    pub par: f64,
    pub code: String,
}

/// Summary of one replicate, stored as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub algorithm: String,
    pub seed: u64,
    pub p_max: f64,
    pub band_split: f64,
    pub evaluations: usize,
    pub hypervolume: f64,
    /// Non-dominated codes within the budget.
    pub front: Vec<ReportEntry>,
    /// Best codes with `band_split <= par <= p_max`.
    pub small_band: Vec<ReportEntry>,
    /// Best codes with `par < band_split`.
    pub tiny_band: Vec<ReportEntry>,
}

impl RunReport {
    fn new(algorithm: Algorithm, seed: u64, archive: &Archive, report: &FinalReport) -> Self {
        let entries = |v: &[EvaluatedRecord]| {
            v.iter()
                .map(|r| ReportEntry {
                    acc: r.perf.acc,
                    par: r.perf.par,
                    code: r.code.to_code_string(),
                })
                .collect()
        };
        RunReport {
            algorithm: algorithm.name().to_string(),
            seed,
            p_max: report.p_max,
            band_split: report.band_split,
            evaluations: archive.len(),
            hypervolume: archive.hypervolume(report.p_max),
            front: entries(&report.front),
            small_band: entries(&report.small),
            tiny_band: entries(&report.tiny),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    /// Parses a report and checks every code against `catalog`.
    pub fn parse(text: &str, catalog: &CellCatalog) -> Result<Self> {
        let report: RunReport = toml::from_str(text).map_err(|e| toml_error(text, e))?;
        for e in report.front.iter().chain(&report.small_band).chain(&report.tiny_band) {
            ArchitectureCode::parse(&e.code, catalog)?;
        }
        Ok(report)
    }
}

pub fn load_front(path: &Path, catalog: &CellCatalog) -> Result<Vec<FrontRow>> {
    parse_front(&fs::read_to_string(path)?, catalog)
}

/// Paths written for one replicate.
#[derive(Debug, Clone)]
pub struct ReplicateOutput {
    pub seed: u64,
    pub dir: PathBuf,
    pub hypervolume: f64,
    pub evaluations: usize,
}

fn run_replicate(spec: &RunSpec, seed: u64, dir: &Path) -> Result<ReplicateOutput> {
    fs::create_dir_all(dir)?;
    let evaluator = spec.evaluator(seed);
    let log_file = BufWriter::new(File::create(dir.join(LOG_FILE))?);
    let mut log = LogWriter::new(log_file, &spec.log_header(seed))?;
    let p_max = spec.optimizer.p_max;

    let (archive, metrics) = match spec.algorithm {
        Algorithm::Moarr => {
            let config = OptimizerConfig {
                seed,
                ..spec.optimizer.clone()
            };
            let mut state = bootstrap(&config, &evaluator)?;
            log.append(state.archive.records())?;
            for _ in 0..config.max_iterations {
                let done = state.archive.len();
                state = iterate(&state, &config, &evaluator)?;
                log.append(&state.archive.records()[done..])?;
            }
            let rows = std::iter::once(&state.bootstrap_metrics)
                .chain(&state.metrics)
                .map(MetricsRow::from)
                .collect();
            (state.archive, rows)
        }
        Algorithm::Random => {
            let config = RandomConfig {
                budget: spec.optimizer.total_evaluations(),
                initial: spec.optimizer.bootstrap_count,
                batch: spec.optimizer.batch_per_iteration,
                seed,
            };
            let archive = random_search_scheduled(&config, &evaluator)?;
            log.append(archive.records())?;
            let rows = metrics_from_records(archive.records(), p_max);
            (archive, rows)
        }
        Algorithm::Evolutionary => {
            let config = EvoConfig { seed, ..spec.evolution };
            let archive = evolve(&config, &evaluator)?;
            log.append(archive.records())?;
            let rows = metrics_from_records(archive.records(), p_max);
            (archive, rows)
        }
    };
    log.finish()?;

    let report = final_report(&archive, p_max, spec.optimizer.band_split, spec.optimizer.band_picks);
    let front_refs: Vec<&EvaluatedRecord> = report.front.iter().collect();
    fs::write(dir.join(FRONT_FILE), export_front(&front_refs))?;
    fs::write(dir.join(METRICS_FILE), format_metrics(&metrics))?;
    fs::write(
        dir.join(REPORT_FILE),
        RunReport::new(spec.algorithm, seed, &archive, &report).to_toml(),
    )?;
    Ok(ReplicateOutput {
        seed,
        dir: dir.to_path_buf(),
        hypervolume: archive.hypervolume(p_max),
        evaluations: archive.len(),
    })
}

/// Runs every replicate of `spec`. Existing replicate directories are
/// refused unless `overwrite` is set, and the check happens before any run
/// starts.
pub fn cmd_search(spec: &RunSpec, overwrite: bool) -> Result<Vec<ReplicateOutput>> {
    let dirs: Vec<PathBuf> = spec.seeds.iter().map(|&s| spec.replicate_dir(s)).collect();
    if !overwrite {
        if let Some(d) = dirs.iter().find(|d| d.exists()) {
            return Err(Error::Config(format!(
                "output directory `{}` already exists; pass --overwrite to replace it",
                d.display()
            )));
        }
    }
    let mut outputs = Vec::with_capacity(dirs.len());
    for (&seed, dir) in spec.seeds.iter().zip(&dirs) {
        if dir.exists() {
            fs::remove_dir_all(dir)?;
        }
        outputs.push(run_replicate(spec, seed, dir)?);
    }
    Ok(outputs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogSummary {
    pub label: String,
    pub algorithm: String,
    pub seed: u64,
    pub evaluations: usize,
    /// Hypervolume after each iteration, carried forward past the log's end.
    pub hypervolume: Vec<f64>,
    pub front_size: usize,
    pub best_acc_under_p_max: Option<f64>,
}

impl LogSummary {
    pub fn final_hypervolume(&self) -> f64 {
        self.hypervolume.last().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairTally {
    pub first: String,
    pub second: String,
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub p_max: f64,
    pub logs: Vec<LogSummary>,
    /// Final-hypervolume results between algorithms over shared seeds.
    pub tallies: Vec<PairTally>,
}

impl Comparison {
    /// `iteration,<label>...` with one hypervolume column per log.
    pub fn table_csv(&self) -> String {
        let mut out = String::from("iteration");
        for l in &self.logs {
            let _ = write!(out, ",{}", l.label);
        }
        out.push('\n');
        let rows = self.logs.iter().map(|l| l.hypervolume.len()).max().unwrap_or(0);
        for t in 0..rows {
            let _ = write!(out, "{t}");
            for l in &self.logs {
                let _ = write!(out, ",{}", l.hypervolume[t]);
            }
            out.push('\n');
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = format!("p_max = {}\n", self.p_max);
        for l in &self.logs {
            let _ = writeln!(
                out,
                "{}: {} evaluations, final hypervolume {:.6}, front size {}, best acc within budget {}",
                l.label,
                l.evaluations,
                l.final_hypervolume(),
                l.front_size,
                l.best_acc_under_p_max.map_or("none".to_string(), |a| format!("{a:.4}")),
            );
        }
        for t in &self.tallies {
            let _ = writeln!(
                out,
                "{} vs {}: {} wins, {} ties, {} losses over {} shared seeds",
                t.first,
                t.second,
                t.wins,
                t.ties,
                t.losses,
                t.wins + t.ties + t.losses
            );
        }
        out
    }
}

/// Final hypervolumes closer than this count as a tie.
const TIE_TOLERANCE: f64 = 1e-12;

/// Compares logs evaluated under a shared `p_max`. When `p_max` is given it
/// must agree with the logs.
pub fn compare_logs(logs: &[EvaluationLog], p_max: Option<f64>) -> Result<Comparison> {
    if logs.len() < 2 {
        return Err(Error::Config(format!("compare needs at least two logs, got {}", logs.len())));
    }
    let shared = logs[0].header.p_max;
    if let Some(l) = logs.iter().find(|l| l.header.p_max != shared) {
        return Err(Error::Config(format!(
            "logs disagree on p_max: {} vs {}",
            shared, l.header.p_max
        )));
    }
    if let Some(p) = p_max {
        if p != shared {
            return Err(Error::Config(format!("--p-max {p} does not match the logs' p_max {shared}")));
        }
    }
    let rows = logs.iter().map(EvaluationLog::last_iteration).max().unwrap_or(0) + 1;
    let mut used: BTreeMap<String, usize> = BTreeMap::new();
    let summaries: Vec<LogSummary> = logs
        .iter()
        .map(|log| {
            let base = format!("{}-{}", log.header.algorithm, log.header.seed);
            let k = used.entry(base.clone()).or_insert(0);
            *k += 1;
            let label = if *k == 1 { base } else { format!("{base}#{k}") };
            let metrics = metrics_from_records(&log.records, shared);
            let mut hv: Vec<f64> = metrics.iter().map(|m| m.hypervolume).collect();
            let last = hv.last().copied().unwrap_or(0.0);
            hv.resize(rows, last);
            let feasible: Vec<PerformancePair> =
                log.records.iter().map(|r| r.perf).filter(|p| p.par <= shared).collect();
            LogSummary {
                label,
                algorithm: log.header.algorithm.clone(),
                seed: log.header.seed,
                evaluations: log.records.len(),
                hypervolume: hv,
                front_size: pareto_boundary(&feasible).len(),
                best_acc_under_p_max: feasible.iter().map(|p| p.acc).max_by(f64::total_cmp),
            }
        })
        .collect();

    let mut algorithms: Vec<&str> = Vec::new();
    for s in &summaries {
        if !algorithms.contains(&s.algorithm.as_str()) {
            algorithms.push(&s.algorithm);
        }
    }
    let mut tallies = Vec::new();
    for (i, a) in algorithms.iter().enumerate() {
        for b in &algorithms[i + 1..] {
            let mut t = PairTally {
                first: a.to_string(),
                second: b.to_string(),
                wins: 0,
                ties: 0,
                losses: 0,
            };
            for x in summaries.iter().filter(|s| s.algorithm == *a) {
                // first log per seed on each side
                let Some(y) = summaries.iter().find(|s| s.algorithm == *b && s.seed == x.seed) else {
                    continue;
                };
                if summaries.iter().find(|s| s.algorithm == *a && s.seed == x.seed) != Some(x) {
                    continue;
                }
                let d = x.final_hypervolume() - y.final_hypervolume();
                if d.abs() <= TIE_TOLERANCE {
                    t.ties += 1;
                } else if d > 0.0 {
                    t.wins += 1;
                } else {
                    t.losses += 1;
                }
            }
            if t.wins + t.ties + t.losses > 0 {
                tallies.push(t);
            }
        }
    }
    Ok(Comparison {
        p_max: shared,
        logs: summaries,
        tallies,
    })
}

pub fn cmd_compare(paths: &[PathBuf], p_max: Option<f64>, catalog: &CellCatalog) -> Result<Comparison> {
    if paths.len() < 2 {
        return Err(Error::Config(format!("compare needs at least two logs, got {}", paths.len())));
    }
    let logs = paths
        .iter()
        .map(|p| load_log(p, catalog))
        .collect::<Result<Vec<_>>>()?;
    compare_logs(&logs, p_max)
}

/// Code-level description printed by `inspect`.
#[derive(Debug, Clone, PartialEq)]
pub struct Inspection {
    pub code: ArchitectureCode,
    pub stage_widths: [u32; 4],
    pub density: f64,
    pub layer_count: u32,
    pub reduction_count: u32,
    pub params: f64,
    pub flops: f64,
}

impl Inspection {
    pub fn render(&self) -> String {
        let w = self.stage_widths;
        let active = if self.code.rc4_active { 4 } else { 3 };
        format!(
            "code: {}\nstage_widths: {}\nlayer_count: {}\nreduction_count: {}\ndensity: {}\nparams: {}\nflops: {}\n",
            self.code,
            w[..active].iter().map(u32::to_string).collect::<Vec<_>>().join(","),
            self.layer_count,
            self.reduction_count,
            self.density,
            self.params,
            self.flops,
        )
    }
}

pub fn cmd_inspect(code: &str, catalog: Arc<CellCatalog>, cost: CostConstants) -> Result<Inspection> {
    let code = ArchitectureCode::parse(code, &catalog)?;
    let model = CostModel::new(catalog.clone(), cost);
    // Quick metrics do not affect the structural attributes reported here.
    let placeholder = QuickMetrics {
        top1: 0.0,
        top5: 0.0,
        loss: 0.0,
    };
    let a = extract_attributes(&code, &catalog, &placeholder, &model)?;
    Ok(Inspection {
        stage_widths: code.stage_widths(),
        density: a.density,
        layer_count: a.layer_count,
        reduction_count: a.reduction_count,
        params: a.params,
        flops: a.flops,
        code,
    })
}

/// Loads an optional cost-constant file for `inspect`.
pub fn load_cost_constants(path: Option<&Path>) -> Result<CostConstants> {
    match path {
        None => Ok(CostConstants::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read `{}`: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| toml_error(&text, e))
        }
    }
}

/// Loads a catalog file, or the bundled catalog when `path` is `None`.
pub fn load_catalog(path: Option<&Path>) -> Result<CellCatalog> {
    match path {
        None => Ok(CellCatalog::standard()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read catalog `{}`: {e}", p.display())))?;
            CellCatalog::parse(&text)
        }
    }
}
