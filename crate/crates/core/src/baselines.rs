//! Comparison optimizers: uniform random search and a non-dominated-sorting
//! evolutionary algorithm with crowding distance.

use std::cmp::Ordering;
use std::collections::HashSet;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::oracle::{Evaluation, Evaluator};
use crate::pareto::{is_dominated, Archive, EvaluatedRecord, PerformancePair};
use crate::rng::{derive, seeded, Rng};
use crate::search::evaluate_batch;
use crate::space::{mutate_per_field, uniform_crossover, ArchitectureCode, CellCatalog, FIELD_COUNT};

/// Random search with iteration labels matching a bootstrap-then-batches
/// schedule, so per-iteration traces line up with the main optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomConfig {
    pub budget: usize,
    /// Records labelled iteration 0.
    pub initial: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for RandomConfig {
    fn default() -> Self {
        RandomConfig {
            budget: 450,
            initial: 200,
            batch: 50,
            seed: 0,
        }
    }
}

impl RandomConfig {
    fn label(&self, index: usize) -> usize {
        if index < self.initial {
            0
        } else {
            (index - self.initial) / self.batch.max(1) + 1
        }
    }
}

fn record(code: ArchitectureCode, e: Evaluation, iteration: usize) -> Result<EvaluatedRecord> {
    let acc = e.final_acc.ok_or_else(|| Error::Evaluation {
        code: code.to_code_string(),
        message: "evaluator did not report a final accuracy".into(),
    })?;
    Ok(EvaluatedRecord {
        code,
        perf: PerformancePair { acc, par: e.par },
        quick: Some(e.quick),
        iteration,
    })
}

fn fresh_random(
    rng: &mut Rng,
    catalog: &CellCatalog,
    archive: &Archive,
    taken: &HashSet<ArchitectureCode>,
) -> Result<ArchitectureCode> {
    for _ in 0..1_000_000 {
        let code = ArchitectureCode::random(rng, catalog);
        if !archive.contains(&code) && !taken.contains(&code) {
            return Ok(code);
        }
    }
    Err(Error::Exhausted("no unevaluated code found".into()))
}

/// Evaluates `budget` distinct uniform codes.
pub fn random_search(budget: usize, evaluator: &dyn Evaluator, seed: u64) -> Result<Archive> {
    random_search_scheduled(
        &RandomConfig {
            budget,
            seed,
            ..RandomConfig::default()
        },
        evaluator,
    )
}

pub fn random_search_scheduled(config: &RandomConfig, evaluator: &dyn Evaluator) -> Result<Archive> {
    if config.budget == 0 {
        return Err(Error::Config("budget must be at least 1".into()));
    }
    let catalog = evaluator.catalog();
    let mut rng = seeded(derive(config.seed, 0xA11));
    let mut archive = Archive::new();
    let mut taken = HashSet::new();
    let mut codes = Vec::with_capacity(config.budget);
    while codes.len() < config.budget {
        let code = fresh_random(&mut rng, catalog, &archive, &taken)?;
        taken.insert(code.clone());
        codes.push(code);
    }
    let evals = evaluate_batch(evaluator, &codes)?;
    for (i, (code, e)) in codes.into_iter().zip(evals).enumerate() {
        archive.push(record(code, e, config.label(i))?)?;
    }
    Ok(archive)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvoConfig {
    pub population_size: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    /// Per-field probability of switching to another option.
    pub mutation_rate: f64,
    pub seed: u64,
}

impl Default for EvoConfig {
    fn default() -> Self {
        EvoConfig {
            population_size: 50,
            generations: 5,
            crossover_rate: 0.9,
            mutation_rate: 1.0 / FIELD_COUNT as f64,
            seed: 0,
        }
    }
}

impl EvoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::Config("population_size must be at least 2".into()));
        }
        for (name, r) in [("crossover_rate", self.crossover_rate), ("mutation_rate", self.mutation_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {r}")));
            }
        }
        Ok(())
    }

    pub fn total_evaluations(&self) -> usize {
        self.population_size * (self.generations + 1)
    }
}

/// Rank of every point: 0 for the non-dominated set, 1 for the set that is
/// non-dominated once rank 0 is removed, and so on.
pub fn nondominated_ranks(points: &[PerformancePair]) -> Vec<usize> {
    let n = points.len();
    let mut dominated_by = vec![0usize; n];
    let mut dominates: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i != j && is_dominated(&points[j], &points[i]) {
                dominates[i].push(j);
                dominated_by[j] += 1;
            }
        }
    }
    let mut rank = vec![usize::MAX; n];
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by[i] == 0).collect();
    let mut r = 0;
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            rank[i] = r;
            for &j in &dominates[i] {
                dominated_by[j] -= 1;
                if dominated_by[j] == 0 {
                    next.push(j);
                }
            }
        }
        current = next;
        r += 1;
    }
    rank
}

/// Crowding distance of each point in `front` (indices into `points`).
/// The extremes of either objective get `f64::INFINITY`.
pub fn crowding_distance(points: &[PerformancePair], front: &[usize]) -> Vec<f64> {
    let mut dist = vec![0.0; front.len()];
    if front.len() <= 2 {
        return vec![f64::INFINITY; front.len()];
    }
    let objectives: [fn(&PerformancePair) -> f64; 2] = [|p| p.acc, |p| p.par];
    for obj in objectives {
        let mut order: Vec<usize> = (0..front.len()).collect();
        order.sort_by(|&a, &b| obj(&points[front[a]]).total_cmp(&obj(&points[front[b]])).then(a.cmp(&b)));
        let lo = obj(&points[front[order[0]]]);
        let hi = obj(&points[front[*order.last().unwrap()]]);
        dist[order[0]] = f64::INFINITY;
        dist[*order.last().unwrap()] = f64::INFINITY;
        if hi > lo {
            for w in 1..order.len() - 1 {
                let gap = obj(&points[front[order[w + 1]]]) - obj(&points[front[order[w - 1]]]);
                dist[order[w]] += gap / (hi - lo);
            }
        }
    }
    dist
}

/// Rank and crowding distance per point.
fn rank_and_crowding(points: &[PerformancePair]) -> (Vec<usize>, Vec<f64>) {
    let rank = nondominated_ranks(points);
    let mut crowd = vec![0.0; points.len()];
    let max_rank = rank.iter().copied().max().unwrap_or(0);
    for r in 0..=max_rank {
        let front: Vec<usize> = (0..points.len()).filter(|&i| rank[i] == r).collect();
        for (k, d) in front.iter().zip(crowding_distance(points, &front)) {
            crowd[*k] = d;
        }
    }
    (rank, crowd)
}

fn better(i: usize, j: usize, rank: &[usize], crowd: &[f64]) -> Ordering {
    rank[i]
        .cmp(&rank[j])
        .then(crowd[j].total_cmp(&crowd[i]))
        .then(i.cmp(&j))
}

/// Picks `size` survivors by rank, then crowding distance within the last front.
pub fn environmental_selection(points: &[PerformancePair], size: usize) -> Vec<usize> {
    let (rank, crowd) = rank_and_crowding(points);
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| better(a, b, &rank, &crowd));
    order.truncate(size);
    order.sort_unstable();
    order
}

fn tournament(rng: &mut Rng, rank: &[usize], crowd: &[f64]) -> usize {
    let a = rng.random_range(0..rank.len());
    let b = rng.random_range(0..rank.len());
    if better(a, b, rank, crowd) == Ordering::Greater {
        b
    } else {
        a
    }
}

/// Runs the evolutionary baseline; the archive holds every evaluation.
pub fn evolve(config: &EvoConfig, evaluator: &dyn Evaluator) -> Result<Archive> {
    config.validate()?;
    let catalog = evaluator.catalog();
    let mut rng = seeded(derive(config.seed, 0xE70));
    let mut archive = Archive::new();

    let mut taken = HashSet::new();
    let mut initial = Vec::with_capacity(config.population_size);
    while initial.len() < config.population_size {
        let code = fresh_random(&mut rng, catalog, &archive, &taken)?;
        taken.insert(code.clone());
        initial.push(code);
    }
    let evals = evaluate_batch(evaluator, &initial)?;
    let mut population = Vec::with_capacity(config.population_size);
    for (code, e) in initial.into_iter().zip(evals) {
        let r = record(code, e, 0)?;
        population.push(r.clone());
        archive.push(r)?;
    }

    for generation in 1..=config.generations {
        let perfs: Vec<PerformancePair> = population.iter().map(|r| r.perf).collect();
        let (rank, crowd) = rank_and_crowding(&perfs);
        let mut taken = HashSet::new();
        let mut children = Vec::with_capacity(config.population_size);
        while children.len() < config.population_size {
            let a = &population[tournament(&mut rng, &rank, &crowd)].code;
            let b = &population[tournament(&mut rng, &rank, &crowd)].code;
            let crossed = if rng.random::<f64>() < config.crossover_rate {
                uniform_crossover(a, b, &mut rng, catalog)
            } else {
                a.clone()
            };
            let mut child = mutate_per_field(&crossed, config.mutation_rate, &mut rng, catalog);
            if archive.contains(&child) || taken.contains(&child) {
                child = fresh_random(&mut rng, catalog, &archive, &taken)?;
            }
            taken.insert(child.clone());
            children.push(child);
        }
        let evals = evaluate_batch(evaluator, &children)?;
        let mut union = population;
        for (code, e) in children.into_iter().zip(evals) {
            let r = record(code, e, generation)?;
            archive.push(r.clone())?;
            union.push(r);
        }
        let perfs: Vec<PerformancePair> = union.iter().map(|r| r.perf).collect();
        let keep = environmental_selection(&perfs, config.population_size);
        population = keep.into_iter().map(|i| union[i].clone()).collect();
    }
    Ok(archive)
}

/// Population the evolutionary baseline ends with, recomputed from its
/// archive. Used for checks against the Pareto boundary.
pub fn final_population(archive: &Archive, config: &EvoConfig) -> Vec<usize> {
    let records = archive.records();
    let mut population: Vec<usize> = (0..config.population_size.min(records.len())).collect();
    for generation in 1..=config.generations {
        let mut union = population.clone();
        union.extend((0..records.len()).filter(|&i| records[i].iteration == generation));
        let perfs: Vec<PerformancePair> = union.iter().map(|&i| records[i].perf).collect();
        population = environmental_selection(&perfs, config.population_size)
            .into_iter()
            .map(|k| union[k])
            .collect();
    }
    population
}
