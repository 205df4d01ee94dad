//! The outer search loop: bootstrap, then repeated surrogate fitting,
//! reverse recommendation and batch evaluation.

use rayon::prelude::*;

use crate::arr::{self, PerfNormalizer, RecommendContext, RecommendStats, SurrogateConfig};
use crate::error::{Error, Result};
use crate::fes::{self, FesConfig, FesModel, FesSample};
use crate::mlp::MlpModel;
use crate::oracle::{Evaluation, Evaluator};
use crate::pareto::{pareto_boundary, Archive, EvaluatedRecord, PerformancePair};
use crate::rng::{derive, seeded};
use crate::space::ArchitectureCode;

/// Where the accuracy stored for recommended codes comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AccuracySource {
    /// Predicted from quick metrics by the fast-evaluation regressor.
    #[default]
    Fes,
    /// The evaluator's fully-trained accuracy.
    Direct,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub p_max: f64,
    pub batch_per_iteration: usize,
    pub max_iterations: usize,
    pub bootstrap_count: usize,
    pub seed: u64,
    pub surrogate: SurrogateConfig,
    pub fes: FesConfig,
    /// Refit the fast-evaluation regressor after every iteration.
    pub fes_refresh: bool,
    pub accuracy_source: AccuracySource,
    /// Boundary between the two reported parameter bands.
    pub band_split: f64,
    /// Selections reported per band.
    pub band_picks: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            p_max: 2.5e6,
            batch_per_iteration: 50,
            max_iterations: 5,
            bootstrap_count: 200,
            seed: 0,
            surrogate: SurrogateConfig::default(),
            fes: FesConfig::default(),
            fes_refresh: false,
            accuracy_source: AccuracySource::Fes,
            band_split: 2e6,
            band_picks: 2,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        PerfNormalizer::new(self.p_max)?;
        if self.batch_per_iteration == 0 {
            return Err(Error::Config("batch_per_iteration must be at least 1".into()));
        }
        if self.bootstrap_count < 10 {
            return Err(Error::Config("bootstrap_count must be at least 10".into()));
        }
        if self.accuracy_source == AccuracySource::Fes && self.bootstrap_count < fes::MIN_FES_SAMPLES {
            return Err(Error::Config(format!(
                "fast evaluation needs bootstrap_count >= {}, got {}",
                fes::MIN_FES_SAMPLES,
                self.bootstrap_count
            )));
        }
        if !(self.band_split > 0.0 && self.band_split <= self.p_max) {
            return Err(Error::Config("band_split must lie in (0, p_max]".into()));
        }
        self.surrogate.fe_train.validate()?;
        self.surrogate.rr_train.validate()?;
        self.fes.train.validate()
    }

    /// Evaluations performed by [`run`].
    pub fn total_evaluations(&self) -> usize {
        self.bootstrap_count + self.max_iterations * self.batch_per_iteration
    }
}

/// Search-progress summary after bootstrap or an iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsEntry {
    pub iteration: usize,
    pub evaluations: usize,
    pub hypervolume: f64,
    pub boundary_size: usize,
    /// Highest accuracy among codes within the budget.
    pub best_acc_under_p_max: Option<f64>,
    /// How the batch was filled; zero for bootstrap.
    pub recommend: RecommendStats,
    pub fe_holdout_rmse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunState {
    pub archive: Archive,
    pub iteration: usize,
    pub fe_model: Option<MlpModel>,
    pub rr_model: Option<MlpModel>,
    pub fes_model: Option<FesModel>,
    /// Fully-trained accuracies observed so far, for refreshing the regressor.
    pub fes_samples: Vec<FesSample>,
    pub bootstrap_metrics: MetricsEntry,
    /// One entry per completed iteration.
    pub metrics: Vec<MetricsEntry>,
}

pub(crate) fn metrics_for(
    archive: &Archive,
    iteration: usize,
    p_max: f64,
    recommend: RecommendStats,
    fe_holdout_rmse: Option<f64>,
) -> MetricsEntry {
    MetricsEntry {
        iteration,
        evaluations: archive.len(),
        hypervolume: archive.hypervolume(p_max),
        boundary_size: archive.boundary_indices().len(),
        best_acc_under_p_max: archive
            .records()
            .iter()
            .filter(|r| r.perf.par <= p_max)
            .map(|r| r.perf.acc)
            .max_by(f64::total_cmp),
        recommend,
        fe_holdout_rmse,
    }
}

/// Evaluates `codes` concurrently; results keep the input order.
pub fn evaluate_batch(evaluator: &dyn Evaluator, codes: &[ArchitectureCode]) -> Result<Vec<Evaluation>> {
    codes
        .par_iter()
        .map(|c| {
            evaluator.evaluate(c).map_err(|e| match e {
                Error::Evaluation { .. } => e,
                other => Error::Evaluation {
                    code: c.to_code_string(),
                    message: other.to_string(),
                },
            })
        })
        .collect()
}

fn final_accuracy(code: &ArchitectureCode, e: &Evaluation) -> Result<f64> {
    e.final_acc.ok_or_else(|| Error::Evaluation {
        code: code.to_code_string(),
        message: "evaluator did not report a final accuracy".into(),
    })
}

fn fes_samples_for(
    evaluator: &dyn Evaluator,
    codes: &[ArchitectureCode],
    evals: &[Evaluation],
) -> Result<Vec<FesSample>> {
    let cost = evaluator
        .cost_model()
        .ok_or_else(|| Error::Config("fast evaluation needs an evaluator with a cost model".into()))?;
    codes
        .iter()
        .zip(evals)
        .filter_map(|(c, e)| e.final_acc.map(|acc| (c, e, acc)))
        .map(|(c, e, acc)| Ok((fes::extract_attributes(c, evaluator.catalog(), &e.quick, cost)?, acc)))
        .collect()
}

/// Evaluates `bootstrap_count` distinct uniform codes and fits the initial
/// fast-evaluation regressor.
pub fn bootstrap(config: &OptimizerConfig, evaluator: &dyn Evaluator) -> Result<RunState> {
    config.validate()?;
    let catalog = evaluator.catalog();
    let mut rng = seeded(derive(config.seed, 1));
    let mut codes = Vec::with_capacity(config.bootstrap_count);
    let mut seen = std::collections::HashSet::new();
    let mut attempts = 0usize;
    while codes.len() < config.bootstrap_count {
        attempts += 1;
        if attempts > 1000 * config.bootstrap_count {
            return Err(Error::Exhausted("could not draw enough distinct codes".into()));
        }
        let code = ArchitectureCode::random(&mut rng, catalog);
        if seen.insert(code.clone()) {
            codes.push(code);
        }
    }
    let evals = evaluate_batch(evaluator, &codes)?;
    let mut archive = Archive::new();
    for (code, e) in codes.iter().zip(&evals) {
        let acc = final_accuracy(code, e)?;
        archive.push(EvaluatedRecord {
            code: code.clone(),
            perf: PerformancePair { acc, par: e.par },
            quick: Some(e.quick),
            iteration: 0,
        })?;
    }
    let (fes_model, fes_samples) = match config.accuracy_source {
        AccuracySource::Direct => (None, Vec::new()),
        AccuracySource::Fes => {
            let samples = fes_samples_for(evaluator, &codes, &evals)?;
            let fit = fes::train_fes(&samples, &fes_config(config, 0))?;
            (Some(fit.model), samples)
        }
    };
    let bootstrap_metrics = metrics_for(&archive, 0, config.p_max, RecommendStats::default(), None);
    Ok(RunState {
        archive,
        iteration: 0,
        fe_model: None,
        rr_model: None,
        fes_model,
        fes_samples,
        bootstrap_metrics,
        metrics: Vec::new(),
    })
}

fn fes_config(config: &OptimizerConfig, round: usize) -> FesConfig {
    let mut c = config.fes.clone();
    c.train.seed = derive(config.seed ^ c.train.seed, 0xF000 + round as u64);
    c
}

/// Runs one iteration and returns the new state; `state` is never modified,
/// so a failure leaves the caller's state exactly as it was.
pub fn iterate(state: &RunState, config: &OptimizerConfig, evaluator: &dyn Evaluator) -> Result<RunState> {
    config.validate()?;
    let catalog = evaluator.catalog();
    let normalizer = PerfNormalizer::new(config.p_max)?;
    let round = state.iteration + 1;
    let stream = |k: u64| derive(config.seed, 1000 * round as u64 + k);

    let mut surrogate = config.surrogate.clone();
    surrogate.fe_train.seed = stream(1) ^ config.surrogate.fe_train.seed;
    surrogate.rr_train.seed = stream(2) ^ config.surrogate.rr_train.seed;

    let dataset = arr::build_fe_dataset(&state.archive, &normalizer, catalog)?;
    let fe = arr::train_fe_model(&dataset, &surrogate)?;
    let targets = arr::rr_training_targets(
        &state.archive,
        &normalizer,
        surrogate.target_count,
        &mut seeded(stream(3)),
    )?;
    let rr_init = arr::init_rr_model(catalog, &surrogate.rr_hidden, stream(4))?;
    let (rr, _) = arr::train_rr_model(&fe.model, &rr_init, &targets, &surrogate.rr_train)?;

    let ctx = RecommendContext {
        catalog,
        cost_model: evaluator.cost_model(),
        normalizer,
        forward_model: Some(&fe.model),
        mutant_pool: surrogate.mutant_pool,
    };
    let (codes, stats) = arr::recommend(
        &rr,
        &state.archive,
        &ctx,
        config.batch_per_iteration,
        &mut seeded(stream(5)),
    )?;
    if codes.len() < config.batch_per_iteration {
        return Err(Error::Exhausted(format!(
            "only {} unevaluated codes could be found",
            codes.len()
        )));
    }
    let evals = evaluate_batch(evaluator, &codes)?;

    let mut next = state.clone();
    let accs: Vec<f64> = match config.accuracy_source {
        AccuracySource::Direct => codes
            .iter()
            .zip(&evals)
            .map(|(c, e)| final_accuracy(c, e))
            .collect::<Result<_>>()?,
        AccuracySource::Fes => {
            let model = state
                .fes_model
                .as_ref()
                .ok_or_else(|| Error::Config("fast-evaluation model missing".into()))?;
            let cost = evaluator
                .cost_model()
                .ok_or_else(|| Error::Config("fast evaluation needs a cost model".into()))?;
            codes
                .iter()
                .zip(&evals)
                .map(|(c, e)| fes::predict_final_acc(model, &fes::extract_attributes(c, catalog, &e.quick, cost)?))
                .collect::<Result<_>>()?
        }
    };
    for ((code, e), acc) in codes.iter().zip(&evals).zip(accs) {
        next.archive.push(EvaluatedRecord {
            code: code.clone(),
            perf: PerformancePair { acc, par: e.par },
            quick: Some(e.quick),
            iteration: round,
        })?;
    }
    if config.accuracy_source == AccuracySource::Fes && config.fes_refresh {
        next.fes_samples.extend(fes_samples_for(evaluator, &codes, &evals)?);
        next.fes_model = Some(fes::train_fes(&next.fes_samples, &fes_config(config, round))?.model);
    }
    next.iteration = round;
    next.fe_model = Some(fe.model);
    next.rr_model = Some(rr);
    next.metrics.push(metrics_for(
        &next.archive,
        round,
        config.p_max,
        stats,
        Some(fe.holdout_rmse),
    ));
    Ok(next)
}

/// Constrained front and band selections of a finished search.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalReport {
    pub p_max: f64,
    pub band_split: f64,
    /// Non-dominated records among those within the budget, by parameter count.
    pub front: Vec<EvaluatedRecord>,
    /// Highest-accuracy records with `band_split <= par <= p_max`.
    pub small: Vec<EvaluatedRecord>,
    /// Highest-accuracy records with `par < band_split`.
    pub tiny: Vec<EvaluatedRecord>,
}

pub fn final_report(archive: &Archive, p_max: f64, band_split: f64, picks: usize) -> FinalReport {
    let feasible: Vec<&EvaluatedRecord> = archive.records().iter().filter(|r| r.perf.par <= p_max).collect();
    let perfs: Vec<PerformancePair> = feasible.iter().map(|r| r.perf).collect();
    let mut front: Vec<EvaluatedRecord> = pareto_boundary(&perfs).into_iter().map(|i| feasible[i].clone()).collect();
    front.sort_by(|a, b| a.perf.par.total_cmp(&b.perf.par).then(a.code.cmp(&b.code)));
    let band = |keep: &dyn Fn(f64) -> bool| {
        let mut v: Vec<EvaluatedRecord> = feasible.iter().filter(|r| keep(r.perf.par)).map(|r| (*r).clone()).collect();
        v.sort_by(|a, b| {
            b.perf
                .acc
                .total_cmp(&a.perf.acc)
                .then(a.perf.par.total_cmp(&b.perf.par))
                .then(a.code.cmp(&b.code))
        });
        v.truncate(picks);
        v
    };
    FinalReport {
        p_max,
        band_split,
        small: band(&|p| p >= band_split),
        tiny: band(&|p| p < band_split),
        front,
    }
}

pub fn run(config: &OptimizerConfig, evaluator: &dyn Evaluator) -> Result<(RunState, FinalReport)> {
    let mut state = bootstrap(config, evaluator)?;
    for _ in 0..config.max_iterations {
        state = iterate(&state, config, evaluator)?;
    }
    let report = final_report(&state.archive, config.p_max, config.band_split, config.band_picks);
    Ok((state, report))
}
