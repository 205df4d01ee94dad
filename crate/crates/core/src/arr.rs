//! Adaptive reverse recommendation.
//!
//! A forward surrogate (code vector to normalized `(acc, par)`) is fit on the
//! evaluation history. A reverse network (performance target to relaxed code
//! vector) is then trained without code labels: its output is pushed through
//! the frozen forward surrogate and the squared distance to the requested
//! target is minimized,
//!
//! ```text
//! loss = (1/n) Σ ||x_i − forward(reverse(x_i))||²
//! ```
//!
//! Recommendations query the reverse network with targets drawn from the
//! region the current front does not cover and decode the outputs by argmax.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::mlp::{self, Activation, Gradients, Loss, MlpModel, Sample, TrainConfig, TrainReport};
use crate::oracle::CostModel;
use crate::pareto::{hypervolume_2d, sample_inputs_ideal, Archive, PerformancePair};
use crate::rng::{seeded, Rng};
use crate::space::{self, block_layout, vector_len, ArchitectureCode, CellCatalog};

/// Minimum history size for fitting the forward surrogate.
pub const MIN_FE_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerfNormalizer {
    p_max: f64,
}

impl PerfNormalizer {
    pub fn new(p_max: f64) -> Result<Self> {
        if !(p_max > 0.0 && p_max.is_finite()) {
            return Err(Error::Config(format!("p_max must be positive, got {p_max}")));
        }
        Ok(PerfNormalizer { p_max })
    }

    pub fn p_max(&self) -> f64 {
        self.p_max
    }

    /// `(acc, par / p_max)`.
    pub fn normalize(&self, p: &PerformancePair) -> [f64; 2] {
        p.normalized(self.p_max)
    }

    /// Forward-surrogate target: the normalized pair with par capped at the
    /// budget, where its sigmoid output saturates.
    pub fn fe_target(&self, p: &PerformancePair) -> [f64; 2] {
        let [acc, par] = self.normalize(p);
        [acc, par.min(1.0)]
    }
}

/// Code-to-performance training pairs built from the history.
#[derive(Debug, Clone, PartialEq)]
pub struct FeDataset {
    pub samples: Vec<Sample>,
}

impl FeDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

pub fn build_fe_dataset(archive: &Archive, normalizer: &PerfNormalizer, catalog: &CellCatalog) -> Result<FeDataset> {
    if archive.is_empty() {
        return Err(Error::InsufficientData { needed: 1, found: 0 });
    }
    let samples = archive
        .records()
        .iter()
        .map(|r| Ok((space::encode(&r.code, catalog)?.0, normalizer.fe_target(&r.perf).to_vec())))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeDataset { samples })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateConfig {
    pub fe_hidden: Vec<usize>,
    pub rr_hidden: Vec<usize>,
    pub fe_train: TrainConfig,
    pub rr_train: TrainConfig,
    /// Reverse-network training targets per round.
    pub target_count: usize,
    pub holdout_fraction: f64,
    /// Mutation candidates drawn per open recommendation slot; the forward
    /// model keeps the best-scoring ones.
    pub mutant_pool: usize,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            fe_hidden: vec![64, 32],
            rr_hidden: vec![64],
            // Plain SGD at the generic defaults underfits both networks on a
            // few hundred records; these settings converge within budget.
            fe_train: TrainConfig {
                learning_rate: 0.2,
                batch_size: 8,
                max_epochs: 500,
                ..TrainConfig::default()
            },
            rr_train: TrainConfig {
                learning_rate: 2.0,
                max_epochs: 400,
                ..TrainConfig::default()
            },
            target_count: 256,
            holdout_fraction: 0.2,
            mutant_pool: 16,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FeFit {
    pub model: MlpModel,
    /// RMSE over both normalized outputs of the held-out split.
    pub holdout_rmse: f64,
    /// All training targets were identical.
    pub zero_variance: bool,
    pub report: TrainReport,
}

/// Splits indices into (train, holdout) with a seeded shuffle.
pub(crate) fn holdout_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded(seed));
    let hold = ((n as f64 * fraction).round() as usize).clamp(usize::from(n > 1), n.saturating_sub(1));
    let holdout = idx.split_off(n - hold);
    (idx, holdout)
}

pub fn forward_model_widths(input: usize, hidden: &[usize]) -> Vec<usize> {
    let mut w = vec![input];
    w.extend_from_slice(hidden);
    w.push(2);
    w
}

/// Fits the forward surrogate on the training split and reports holdout error.
pub fn train_fe_model(dataset: &FeDataset, config: &SurrogateConfig) -> Result<FeFit> {
    if dataset.len() < MIN_FE_SAMPLES {
        return Err(Error::InsufficientData {
            needed: MIN_FE_SAMPLES,
            found: dataset.len(),
        });
    }
    let input = dataset.samples[0].0.len();
    let seed = config.fe_train.seed;
    let (train_idx, hold_idx) = holdout_split(dataset.len(), config.holdout_fraction, seed ^ 0x5EED);
    let pick = |idx: &[usize]| idx.iter().map(|&i| dataset.samples[i].clone()).collect::<Vec<_>>();
    let (train_set, hold_set) = (pick(&train_idx), pick(&hold_idx));

    let first = &dataset.samples[0].1;
    let zero_variance = dataset.samples.iter().all(|(_, t)| t == first);

    let init = MlpModel::new(
        &forward_model_widths(input, &config.fe_hidden),
        Activation::Rectifier,
        Activation::Sigmoid,
        None,
        seed,
    )?;
    let (model, report) = mlp::train(&init, &train_set, &Loss::SquaredError, &config.fe_train)?;
    let holdout_rmse = if hold_set.is_empty() {
        0.0
    } else {
        (mlp::mean_squared_error(&model, &hold_set)? / 2.0).sqrt()
    };
    Ok(FeFit {
        model,
        holdout_rmse,
        zero_variance,
        report,
    })
}

/// Normalized performance targets for reverse-network training.
#[derive(Debug, Clone, PartialEq)]
pub struct RrTargetBatch(pub Vec<[f64; 2]>);

/// Half of the targets come from the uncovered region beyond the front, half
/// from an even grid spanning the observed (normalized) performance range.
pub fn rr_training_targets(
    archive: &Archive,
    normalizer: &PerfNormalizer,
    count: usize,
    rng: &mut Rng,
) -> Result<RrTargetBatch> {
    if count == 0 {
        return Err(Error::InvalidInput("target count must be at least 1".into()));
    }
    let ideal_n = count.div_ceil(2);
    let grid_n = count - ideal_n;
    let mut targets: Vec<[f64; 2]> = sample_inputs_ideal(&archive.boundary_perf(), normalizer.p_max(), ideal_n, rng)?
        .iter()
        .map(|p| normalizer.normalize(p))
        .collect();
    if grid_n > 0 {
        let observed: Vec<[f64; 2]> = archive.records().iter().map(|r| normalizer.fe_target(&r.perf)).collect();
        let lo_hi = |k: usize| {
            let lo = observed.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
            let hi = observed.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
            if lo.is_finite() {
                (lo, hi)
            } else {
                (0.0, 1.0)
            }
        };
        let ((a0, a1), (p0, p1)) = (lo_hi(0), lo_hi(1));
        let side = (grid_n as f64).sqrt().ceil() as usize;
        let at = |lo: f64, hi: f64, i: usize| {
            if side == 1 {
                (lo + hi) / 2.0
            } else {
                lo + (hi - lo) * i as f64 / (side - 1) as f64
            }
        };
        'grid: for i in 0..side {
            for j in 0..side {
                if targets.len() == count {
                    break 'grid;
                }
                let acc = at(a0, a1, i).clamp(1e-6, 1.0 - 1e-6);
                let par = at(p0, p1, j).clamp(1e-6, 1.0);
                targets.push([acc, par]);
            }
        }
    }
    Ok(RrTargetBatch(targets))
}

pub fn reverse_model_widths(output: usize, hidden: &[usize]) -> Vec<usize> {
    let mut w = vec![2];
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

/// A freshly initialized reverse network emitting relaxed code vectors.
pub fn init_rr_model(catalog: &CellCatalog, hidden: &[usize], seed: u64) -> Result<MlpModel> {
    MlpModel::new(
        &reverse_model_widths(vector_len(catalog), hidden),
        Activation::Rectifier,
        Activation::BlockSoftmax,
        Some(block_layout(catalog)),
        seed,
    )
}

/// Per-target loss and the gradient with respect to the reverse output.
fn composed_loss(fe: &MlpModel, target: &[f64], relaxed_code: &[f64]) -> Result<(f64, Vec<f64>)> {
    let trace = fe.forward_trace(relaxed_code)?;
    let out = trace.output();
    let mut loss = 0.0;
    let upstream: Vec<f64> = out
        .iter()
        .zip(target)
        .map(|(o, t)| {
            loss += (o - t) * (o - t);
            2.0 * (o - t)
        })
        .collect();
    let mut g = Gradients::zeros_like(fe);
    fe.accumulate_gradients(&trace, &upstream, &mut g)?;
    Ok((loss, g.input))
}

/// Mean composed loss of `rr` over `targets`.
pub fn eq2_loss(fe: &MlpModel, rr: &MlpModel, targets: &RrTargetBatch) -> Result<f64> {
    let mut total = 0.0;
    for t in &targets.0 {
        let code = rr.forward(t)?;
        total += composed_loss(fe, t, &code)?.0;
    }
    Ok(total / targets.0.len().max(1) as f64)
}

/// Gradient of [`eq2_loss`] with respect to the reverse network's parameters,
/// flattened as in [`MlpModel::flat_parameters`].
pub fn eq2_gradient(fe: &MlpModel, rr: &MlpModel, targets: &RrTargetBatch) -> Result<Vec<f64>> {
    let mut grads = Gradients::zeros_like(rr);
    for t in &targets.0 {
        let trace = rr.forward_trace(t)?;
        let (_, upstream) = composed_loss(fe, t, trace.output())?;
        rr.accumulate_gradients(&trace, &upstream, &mut grads)?;
    }
    let n = targets.0.len().max(1) as f64;
    Ok(grads.flat_parameters().into_iter().map(|g| g / n).collect())
}

/// Trains `rr` through the frozen `fe`. Only the reverse network changes.
pub fn train_rr_model(
    fe: &MlpModel,
    rr: &MlpModel,
    targets: &RrTargetBatch,
    config: &TrainConfig,
) -> Result<(MlpModel, TrainReport)> {
    if fe.output_width() != 2 {
        return Err(Error::ShapeMismatch {
            expected: 2,
            found: fe.output_width(),
        });
    }
    if rr.output_width() != fe.input_width() || rr.input_width() != 2 {
        return Err(Error::ShapeMismatch {
            expected: fe.input_width(),
            found: rr.output_width(),
        });
    }
    if targets.0.is_empty() {
        return Err(Error::InsufficientData { needed: 1, found: 0 });
    }
    if config.max_epochs == 0 {
        return Ok((rr.clone(), TrainReport { loss_trace: Vec::new() }));
    }
    let data: Vec<Sample> = targets.0.iter().map(|t| (t.to_vec(), Vec::new())).collect();
    let loss = |x: &[f64], _: &[f64], out: &[f64]| {
        composed_loss(fe, x, out).unwrap_or_else(|_| (f64::NAN, vec![0.0; out.len()]))
    };
    mlp::train(rr, &data, &Loss::External(&loss), config)
}

/// Remaining search context for recommendation.
#[derive(Debug, Clone, Copy)]
pub struct RecommendContext<'a> {
    pub catalog: &'a CellCatalog,
    /// Candidates the cost model prices above the budget are replaced.
    pub cost_model: Option<&'a CostModel>,
    pub normalizer: PerfNormalizer,
    /// Used to rank mutation top-up candidates; `None` takes them in draw order.
    pub forward_model: Option<&'a MlpModel>,
    /// Candidates drawn per open slot when ranking.
    pub mutant_pool: usize,
}

impl RecommendContext<'_> {
    fn feasible(&self, code: &ArchitectureCode) -> bool {
        self.cost_model
            .is_none_or(|c| c.param_count(code) <= self.normalizer.p_max())
    }
}

/// Picks `take` of `candidates` one at a time, each maximizing the
/// hypervolume gained over `front` plus the picks so far. Once no candidate
/// adds volume, the rest are ordered by how close they come to the front.
/// Returned indices are ascending.
fn greedy_by_hypervolume(
    front: &[PerformancePair],
    candidates: &[PerformancePair],
    take: usize,
    normalizer: &PerfNormalizer,
) -> Vec<usize> {
    let p_max = normalizer.p_max();
    let mut current: Vec<PerformancePair> = front.to_vec();
    let mut base = hypervolume_2d(&current, p_max);
    let mut left: Vec<usize> = (0..candidates.len()).collect();
    let mut picked = Vec::with_capacity(take);
    while picked.len() < take && !left.is_empty() {
        let mut best: Option<(f64, usize)> = None;
        for (slot, &i) in left.iter().enumerate() {
            current.push(candidates[i]);
            let gain = hypervolume_2d(&current, p_max) - base;
            current.pop();
            if gain > 0.0 && best.is_none_or(|(g, _)| gain > g) {
                best = Some((gain, slot));
            }
        }
        let Some((gain, slot)) = best else { break };
        let i = left.remove(slot);
        current.push(candidates[i]);
        base += gain;
        picked.push(i);
    }
    if picked.len() < take {
        let staircase: Vec<[f64; 2]> = {
            let mut s: Vec<[f64; 2]> = current.iter().map(|p| normalizer.normalize(p)).collect();
            s.sort_by(|a, b| a[1].total_cmp(&b[1]));
            s
        };
        let margin = |p: &PerformancePair| {
            let [acc, par] = normalizer.normalize(p);
            acc - staircase.iter().take_while(|s| s[1] <= par).map(|s| s[0]).fold(0.0, f64::max)
        };
        left.sort_by(|&a, &b| margin(&candidates[b]).total_cmp(&margin(&candidates[a])).then(a.cmp(&b)));
        picked.extend(left.into_iter().take(take - picked.len()));
    }
    picked.sort_unstable();
    picked
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RecommendStats {
    /// Distinct, unevaluated, in-budget codes decoded from the reverse network.
    pub decoded: usize,
    pub mutated: usize,
    pub random: usize,
}

/// Up to `k` distinct codes absent from `archive`.
pub fn recommend(
    rr: &MlpModel,
    archive: &Archive,
    ctx: &RecommendContext<'_>,
    k: usize,
    rng: &mut Rng,
) -> Result<(Vec<ArchitectureCode>, RecommendStats)> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let targets = sample_inputs_ideal(&archive.boundary_perf(), ctx.normalizer.p_max(), k, rng)?;
    let mut decoded = Vec::with_capacity(k);
    for t in &targets {
        let v = rr.forward(&ctx.normalizer.normalize(t))?;
        decoded.push(space::decode(&v, ctx.catalog)?);
    }
    let mut stats = RecommendStats::default();
    let mut chosen: Vec<ArchitectureCode> = Vec::with_capacity(k);
    let mut seen: HashSet<ArchitectureCode> = HashSet::new();
    let mut accept = |code: ArchitectureCode, chosen: &mut Vec<ArchitectureCode>| -> bool {
        if chosen.len() < k && !archive.contains(&code) && ctx.feasible(&code) && seen.insert(code.clone()) {
            chosen.push(code);
            true
        } else {
            false
        }
    };
    for code in &decoded {
        if accept(code.clone(), &mut chosen) {
            stats.decoded += 1;
        }
    }

    // Top-up 1: single-field neighbours of what the network asked for. With a
    // forward model, a larger pool is drawn and the most promising are kept.
    let mut parents: Vec<ArchitectureCode> = Vec::new();
    for c in chosen.iter().chain(&decoded) {
        if !parents.contains(c) {
            parents.push(c.clone());
        }
    }
    let open = k - chosen.len();
    let pool_size = match ctx.forward_model {
        Some(_) => open * ctx.mutant_pool.max(1),
        None => open,
    };
    let mut pool: Vec<ArchitectureCode> = Vec::new();
    let mut in_pool: HashSet<ArchitectureCode> = HashSet::new();
    let mut attempts = 0;
    while pool.len() < pool_size && !parents.is_empty() && attempts < 50 * pool_size {
        attempts += 1;
        let parent = &parents[rng.random_range(0..parents.len())];
        let child = space::mutate_one(parent, rng, ctx.catalog);
        if !archive.contains(&child) && !chosen.contains(&child) && ctx.feasible(&child) && in_pool.insert(child.clone())
        {
            pool.push(child);
        }
    }
    if let (Some(fe), true) = (ctx.forward_model, pool.len() > open) {
        let predicted = pool
            .iter()
            .map(|c| {
                let out = fe.forward(&space::encode(c, ctx.catalog)?.0)?;
                // parameter counts need no training, so use them exactly when known
                let par = match ctx.cost_model {
                    Some(cost) => cost.param_count(c),
                    None => out[1] * ctx.normalizer.p_max(),
                };
                Ok(PerformancePair { acc: out[0], par })
            })
            .collect::<Result<Vec<_>>>()?;
        let keep = greedy_by_hypervolume(&archive.boundary_perf(), &predicted, open, &ctx.normalizer);
        pool = keep.into_iter().map(|i| pool[i].clone()).collect();
    }
    for child in pool {
        if accept(child, &mut chosen) {
            stats.mutated += 1;
        }
    }

    // Top-up 2: uniform codes.
    let mut attempts = 0;
    while chosen.len() < k && attempts < 10_000 * k {
        attempts += 1;
        if accept(ArchitectureCode::random(rng, ctx.catalog), &mut chosen) {
            stats.random += 1;
        }
    }
    Ok((chosen, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pareto::EvaluatedRecord;
    use crate::rng::seeded;

    fn archive_with(n: usize, seed: u64) -> (Archive, CellCatalog) {
        let cat = CellCatalog::standard();
        let mut rng = seeded(seed);
        let mut archive = Archive::new();
        while archive.len() < n {
            let code = ArchitectureCode::random(&mut rng, &cat);
            if archive.contains(&code) {
                continue;
            }
            let perf = PerformancePair {
                acc: rng.random_range(0.5..0.95),
                par: rng.random_range(2e5..5e6),
            };
            archive
                .push(EvaluatedRecord {
                    code,
                    perf,
                    quick: None,
                    iteration: 0,
                })
                .unwrap();
        }
        (archive, cat)
    }

    #[test]
    fn dataset_has_one_sample_per_record() {
        let (archive, cat) = archive_with(25, 1);
        let norm = PerfNormalizer::new(2.5e6).unwrap();
        let ds = build_fe_dataset(&archive, &norm, &cat).unwrap();
        assert_eq!(ds.len(), 25);
        assert!(ds.samples.iter().all(|(x, t)| x.len() == 89 && t.len() == 2));
        assert_eq!(norm.fe_target(&PerformancePair { acc: 0.9, par: 2.5e6 })[1], 1.0);
        assert!(build_fe_dataset(&Archive::new(), &norm, &cat).is_err());
    }

    #[test]
    fn forward_surrogate_needs_ten_samples() {
        let (archive, cat) = archive_with(10, 2);
        let norm = PerfNormalizer::new(2.5e6).unwrap();
        let ds = build_fe_dataset(&archive, &norm, &cat).unwrap();
        let cfg = SurrogateConfig {
            fe_train: TrainConfig {
                max_epochs: 5,
                ..TrainConfig::default()
            },
            ..SurrogateConfig::default()
        };
        let fit = train_fe_model(&ds, &cfg).unwrap();
        assert!(fit.holdout_rmse.is_finite());
        assert!(!fit.zero_variance);
        let small = FeDataset {
            samples: ds.samples[..9].to_vec(),
        };
        assert!(matches!(train_fe_model(&small, &cfg), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn zero_variance_is_flagged() {
        let (archive, cat) = archive_with(12, 3);
        let norm = PerfNormalizer::new(2.5e6).unwrap();
        let mut ds = build_fe_dataset(&archive, &norm, &cat).unwrap();
        for s in &mut ds.samples {
            s.1 = vec![0.5, 0.5];
        }
        let cfg = SurrogateConfig {
            fe_train: TrainConfig {
                max_epochs: 2,
                ..TrainConfig::default()
            },
            ..SurrogateConfig::default()
        };
        assert!(train_fe_model(&ds, &cfg).unwrap().zero_variance);
    }

    #[test]
    fn holdout_split_is_twenty_percent() {
        let (train, hold) = holdout_split(500, 0.2, 7);
        assert_eq!(hold.len(), 100);
        assert_eq!(train.len(), 400);
        let mut all: Vec<usize> = train.iter().chain(&hold).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..500).collect::<Vec<_>>());
        assert_eq!(holdout_split(10, 0.2, 7).1.len(), 2);
    }

    #[test]
    fn training_targets_mix_region_and_grid() {
        let (archive, _) = archive_with(40, 4);
        let norm = PerfNormalizer::new(2.5e6).unwrap();
        let batch = rr_training_targets(&archive, &norm, 256, &mut seeded(1)).unwrap();
        assert_eq!(batch.0.len(), 256);
        assert!(batch.0.iter().all(|t| t[0] > 0.0 && t[0] < 1.0 && t[1] > 0.0 && t[1] <= 1.0));
        let boundary = archive.boundary_perf();
        for t in &batch.0[..128] {
            let p = PerformancePair {
                acc: t[0],
                par: t[1] * 2.5e6,
            };
            assert!(crate::pareto::inputs_ideal_contains(&p, &boundary, 2.5e6));
        }
    }

    #[test]
    fn zero_epochs_leave_reverse_model_unchanged() {
        let cat = CellCatalog::standard();
        let fe = MlpModel::new(&[89, 8, 2], Activation::Rectifier, Activation::Sigmoid, None, 1).unwrap();
        let rr = init_rr_model(&cat, &[8], 2).unwrap();
        let targets = RrTargetBatch(vec![[0.9, 0.5], [0.8, 0.2]]);
        let cfg = TrainConfig {
            max_epochs: 0,
            ..TrainConfig::default()
        };
        let (out, report) = train_rr_model(&fe, &rr, &targets, &cfg).unwrap();
        assert_eq!(out, rr);
        assert!(report.loss_trace.is_empty());
    }

    #[test]
    fn fe_model_is_not_modified() {
        let cat = CellCatalog::standard();
        let fe = MlpModel::new(&[89, 8, 2], Activation::Rectifier, Activation::Sigmoid, None, 1).unwrap();
        let before = fe.save();
        let rr = init_rr_model(&cat, &[8], 2).unwrap();
        let targets = RrTargetBatch(vec![[0.9, 0.5], [0.8, 0.2], [0.7, 0.1]]);
        let cfg = TrainConfig {
            max_epochs: 5,
            ..TrainConfig::default()
        };
        let (trained, _) = train_rr_model(&fe, &rr, &targets, &cfg).unwrap();
        assert_ne!(trained, rr);
        assert_eq!(fe.save(), before);
    }

    #[test]
    fn recommendations_are_new_and_distinct() {
        let (archive, cat) = archive_with(60, 5);
        let norm = PerfNormalizer::new(2.5e6).unwrap();
        let rr = init_rr_model(&cat, &[16], 3).unwrap();
        let ctx = RecommendContext {
            catalog: &cat,
            cost_model: None,
            forward_model: None,
            mutant_pool: 1,
            normalizer: norm,
        };
        let (codes, stats) = recommend(&rr, &archive, &ctx, 50, &mut seeded(9)).unwrap();
        assert_eq!(codes.len(), 50);
        assert_eq!(stats.decoded + stats.mutated + stats.random, 50);
        let unique: HashSet<_> = codes.iter().collect();
        assert_eq!(unique.len(), 50);
        assert!(codes.iter().all(|c| !archive.contains(c) && c.validate(&cat)));
    }

    #[test]
    fn already_evaluated_decodes_fall_back() {
        // a reverse model with constant output always decodes the same code
        let cat = CellCatalog::standard();
        let mut rr = init_rr_model(&cat, &[4], 3).unwrap();
        let zeros = vec![0.0; rr.parameter_count()];
        rr.set_flat_parameters(&zeros).unwrap();
        let fixed = space::decode(&rr.forward(&[0.5, 0.5]).unwrap(), &cat).unwrap();
        let mut archive = Archive::new();
        archive
            .push(EvaluatedRecord {
                code: fixed.clone(),
                perf: PerformancePair { acc: 0.9, par: 1e6 },
                quick: None,
                iteration: 0,
            })
            .unwrap();
        let ctx = RecommendContext {
            catalog: &cat,
            cost_model: None,
            forward_model: None,
            mutant_pool: 1,
            normalizer: PerfNormalizer::new(2.5e6).unwrap(),
        };
        let (codes, stats) = recommend(&rr, &archive, &ctx, 10, &mut seeded(1)).unwrap();
        assert_eq!(codes.len(), 10);
        assert_eq!(stats.decoded, 0);
        assert_eq!(stats.mutated + stats.random, 10);
        assert!(!codes.contains(&fixed));
    }

    #[test]
    fn intra_batch_duplicates_collapse() {
        let cat = CellCatalog::standard();
        let mut rr = init_rr_model(&cat, &[4], 3).unwrap();
        let zeros = vec![0.0; rr.parameter_count()];
        rr.set_flat_parameters(&zeros).unwrap();
        let ctx = RecommendContext {
            catalog: &cat,
            cost_model: None,
            forward_model: None,
            mutant_pool: 1,
            normalizer: PerfNormalizer::new(2.5e6).unwrap(),
        };
        let (codes, stats) = recommend(&rr, &Archive::new(), &ctx, 8, &mut seeded(2)).unwrap();
        assert_eq!(stats.decoded, 1);
        assert_eq!(codes.len(), 8);
    }
}
