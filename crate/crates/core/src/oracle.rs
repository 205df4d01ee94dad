//! Evaluators standing in for real network training.
//!
//! [`SyntheticEvaluator`] scores codes on a seeded additive landscape: every
//! (cell, stage) choice carries an affinity, depth has an optimum, accuracy
//! grows with the log of the parameter count, and a per-code hash adds fixed
//! noise. Parameter counts and FLOPs come from [`CostModel`], a documented
//! surrogate driven by the catalog's cost coefficients. Nothing here is
//! calibrated against real CIFAR training.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive, hash_bytes, seeded, unit_symmetric};
use crate::space::{ArchitectureCode, CellCatalog};

const ACC_FLOOR: f64 = 0.01;
const ACC_CEIL: f64 = 0.99;
const TOP5_OFFSET: f64 = 0.25;

/// Scores from a short, cheap training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuickMetrics {
    pub top1: f64,
    pub top5: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// Fully-trained accuracy, when the evaluator can supply it.
    pub final_acc: Option<f64>,
    pub par: f64,
    pub quick: QuickMetrics,
}

/// A deterministic black-box objective: the same code always yields the same
/// evaluation for a given instance.
pub trait Evaluator: Sync {
    fn evaluate(&self, code: &ArchitectureCode) -> Result<Evaluation>;

    fn catalog(&self) -> &CellCatalog;

    /// The cost model behind `par`, when known ahead of evaluation.
    fn cost_model(&self) -> Option<&CostModel> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConstants {
    /// Weight of the 3x3 RGB stem convolution (`27 * c_init` weights).
    pub stem_coefficient: f64,
    /// Weight of the final dense layer (`(c_last + 1) * classes`).
    pub classifier_coefficient: f64,
    pub input_size: u32,
    pub class_count: u32,
}

impl Default for CostConstants {
    fn default() -> Self {
        CostConstants {
            stem_coefficient: 1.0,
            classifier_coefficient: 1.0,
            input_size: 32,
            class_count: 10,
        }
    }
}

/// Surrogate parameter and FLOP counts.
#[derive(Debug, Clone)]
pub struct CostModel {
    catalog: Arc<CellCatalog>,
    pub constants: CostConstants,
}

impl CostModel {
    pub fn new(catalog: Arc<CellCatalog>, constants: CostConstants) -> Self {
        CostModel { catalog, constants }
    }

    pub fn catalog(&self) -> &CellCatalog {
        &self.catalog
    }

    /// Spatial area seen by stage `stage` (1-based); each of stages 2-4
    /// halves the resolution.
    fn stage_area(&self, stage: usize) -> f64 {
        let side = f64::from(self.constants.input_size) / f64::from(1u32 << (stage - 1));
        side * side
    }

    fn final_stage(code: &ArchitectureCode) -> usize {
        if code.rc4_active {
            4
        } else {
            3
        }
    }

    fn pooling_entry(&self, code: &ArchitectureCode) -> &crate::space::CellEntry {
        self.catalog
            .pooling(&code.pooling)
            .unwrap_or_else(|| panic!("unknown pooling `{}`", code.pooling))
    }

    fn stem_params(&self, code: &ArchitectureCode) -> f64 {
        self.constants.stem_coefficient * 27.0 * f64::from(code.c_init)
    }

    fn classifier_params(&self, code: &ArchitectureCode) -> f64 {
        let last = f64::from(code.stage_widths()[3]);
        self.constants.classifier_coefficient * (last + 1.0) * f64::from(self.constants.class_count)
    }

    pub fn param_count(&self, code: &ArchitectureCode) -> f64 {
        let cells: f64 = code
            .placed_cells(&self.catalog)
            .iter()
            .map(|c| c.entry.param_coefficient * f64::from(c.c_in) * f64::from(c.c_out))
            .sum();
        let last = f64::from(code.stage_widths()[3]);
        let pooling = self.pooling_entry(code).param_coefficient * last;
        cells + pooling + self.stem_params(code) + self.classifier_params(code)
    }

    pub fn flops_estimate(&self, code: &ArchitectureCode) -> f64 {
        let cells: f64 = code
            .placed_cells(&self.catalog)
            .iter()
            .map(|c| {
                c.entry.flop_coefficient
                    * f64::from(c.c_in)
                    * f64::from(c.c_out)
                    * self.stage_area(c.stage)
            })
            .sum();
        let last = f64::from(code.stage_widths()[3]);
        let pooling = self.pooling_entry(code).flop_coefficient
            * last
            * self.stage_area(Self::final_stage(code));
        cells + pooling + self.stem_params(code) * self.stage_area(1) + self.classifier_params(code)
    }
}

/// Shape parameters of a synthetic landscape; the affinity table itself is
/// generated from `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandscapeSpec {
    pub seed: u64,
    /// Logit offset shared by all codes.
    pub base_logit: f64,
    /// Standard deviation of each (cell, stage) affinity.
    pub affinity_scale: f64,
    pub depth_optimum: f64,
    pub depth_curvature: f64,
    /// Logit gain per unit of `ln(par / width_reference)`.
    pub width_gain: f64,
    pub width_reference: f64,
    /// Amplitude of the per-code logit noise.
    pub noise_amplitude: f64,
    /// Amplitude of the per-code quick top-1 noise.
    pub quick_noise: f64,
}

impl Default for LandscapeSpec {
    fn default() -> Self {
        LandscapeSpec {
            seed: 0,
            base_logit: 1.6,
            affinity_scale: 0.25,
            depth_optimum: 17.0,
            depth_curvature: 0.01,
            width_gain: 0.45,
            width_reference: 1.0e6,
            noise_amplitude: 0.05,
            quick_noise: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLandscape {
    pub spec: LandscapeSpec,
    /// Affinity per (cell kind, cell name, stage).
    affinity: BTreeMap<(CellKindKey, String, usize), f64>,
    /// Offset between final and quick top-1 accuracy, in [0.1, 0.3].
    pub quick_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum CellKindKey {
    Normal,
    Reduction,
}

impl SyntheticLandscape {
    pub fn generate(spec: LandscapeSpec, catalog: &CellCatalog) -> Self {
        let mut rng = seeded(derive(spec.seed, 0xAFF1));
        let mut affinity = BTreeMap::new();
        for stage in 1..=3 {
            for e in &catalog.normal_cells {
                let z: f64 = StandardNormal.sample(&mut rng);
                affinity.insert((CellKindKey::Normal, e.name.clone(), stage), z * spec.affinity_scale);
            }
        }
        for stage in 2..=4 {
            for e in &catalog.reduction_cells {
                let z: f64 = StandardNormal.sample(&mut rng);
                affinity.insert(
                    (CellKindKey::Reduction, e.name.clone(), stage),
                    z * spec.affinity_scale,
                );
            }
        }
        let quick_gap = rng.random_range(0.1..=0.3);
        SyntheticLandscape {
            spec,
            affinity,
            quick_gap,
        }
    }

    pub fn normal_affinity(&self, name: &str, stage: usize) -> Option<f64> {
        self.affinity
            .get(&(CellKindKey::Normal, name.to_string(), stage))
            .copied()
    }

    pub fn reduction_affinity(&self, name: &str, stage: usize) -> Option<f64> {
        self.affinity
            .get(&(CellKindKey::Reduction, name.to_string(), stage))
            .copied()
    }

    /// Zeroes the affinity table, leaving only depth/width structure.
    pub fn without_affinities(mut self) -> Self {
        for v in self.affinity.values_mut() {
            *v = 0.0;
        }
        self
    }

    fn code_noise(&self, code: &ArchitectureCode, salt: u64) -> f64 {
        let bytes = code.to_code_string();
        unit_symmetric(hash_bytes(derive(self.spec.seed, salt), bytes.as_bytes()))
    }

    pub fn final_logit(&self, code: &ArchitectureCode, par: f64) -> f64 {
        let s = &self.spec;
        let mut logit = s.base_logit;
        for (i, name) in code.normal_cells.iter().enumerate() {
            logit += self.normal_affinity(name, i + 1).unwrap_or(0.0);
        }
        let active = if code.rc4_active { 3 } else { 2 };
        for (i, name) in code.reduction_cells.iter().take(active).enumerate() {
            logit += self.reduction_affinity(name, i + 2).unwrap_or(0.0);
        }
        let depth: f64 = code.depths.iter().map(|&d| f64::from(d)).sum();
        logit -= s.depth_curvature * (depth - s.depth_optimum).powi(2);
        logit += s.width_gain * (par / s.width_reference).ln();
        logit + s.noise_amplitude * self.code_noise(code, 0x0015E)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Serializable evaluator description.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub landscape: LandscapeSpec,
    pub cost: CostConstants,
}

impl SyntheticSpec {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticEvaluator {
    pub landscape: SyntheticLandscape,
    pub cost: CostModel,
}

impl SyntheticEvaluator {
    pub fn new(spec: SyntheticSpec, catalog: Arc<CellCatalog>) -> Self {
        let landscape = SyntheticLandscape::generate(spec.landscape, &catalog);
        SyntheticEvaluator {
            landscape,
            cost: CostModel::new(catalog, spec.cost),
        }
    }

    /// Default landscape with the given seed over the bundled catalog.
    pub fn standard(seed: u64) -> Self {
        let spec = SyntheticSpec {
            landscape: LandscapeSpec {
                seed,
                ..LandscapeSpec::default()
            },
            cost: CostConstants::default(),
        };
        Self::new(spec, Arc::new(CellCatalog::standard()))
    }

    pub fn catalog_arc(&self) -> Arc<CellCatalog> {
        self.cost.catalog.clone()
    }
}

impl Evaluator for SyntheticEvaluator {
    fn evaluate(&self, code: &ArchitectureCode) -> Result<Evaluation> {
        if !code.validate(self.catalog()) {
            return Err(Error::Evaluation {
                code: code.to_code_string(),
                message: "code is not a canonical member of the search space".into(),
            });
        }
        let par = self.cost.param_count(code);
        let logit = self.landscape.final_logit(code, par);
        let final_acc = sigmoid(logit).clamp(ACC_FLOOR, ACC_CEIL);
        let jitter = self.landscape.spec.quick_noise * self.landscape.code_noise(code, 0x0_0C1C);
        let top1 = (final_acc - self.landscape.quick_gap + jitter).clamp(ACC_FLOOR, ACC_CEIL);
        let top5 = (top1 + TOP5_OFFSET).clamp(ACC_FLOOR, ACC_CEIL);
        Ok(Evaluation {
            final_acc: Some(final_acc),
            par,
            quick: QuickMetrics {
                top1,
                top5,
                loss: -top1.ln(),
            },
        })
    }

    fn catalog(&self) -> &CellCatalog {
        &self.cost.catalog
    }

    fn cost_model(&self) -> Option<&CostModel> {
        Some(&self.cost)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::space::Multiplier;

    fn median_code(cat: &CellCatalog) -> ArchitectureCode {
        ArchitectureCode {
            depths: [5, 5, 5],
            rc4_active: true,
            c_init: 128,
            width_multipliers: [Multiplier::X2; 3],
            normal_cells: std::array::from_fn(|i| cat.normal_cells[i].name.clone()),
            reduction_cells: std::array::from_fn(|i| cat.reduction_cells[i].name.clone()),
            pooling: cat.pooling_ops[0].name.clone(),
        }
    }

    #[test]
    fn classifier_only_cost_model() {
        let mut cat = CellCatalog::standard();
        for e in cat
            .normal_cells
            .iter_mut()
            .chain(cat.reduction_cells.iter_mut())
            .chain(cat.pooling_ops.iter_mut())
        {
            e.param_coefficient = 0.0;
        }
        let constants = CostConstants {
            stem_coefficient: 0.0,
            ..CostConstants::default()
        };
        let cost = CostModel::new(Arc::new(cat.clone()), constants);
        let code = median_code(&cat);
        assert_eq!(cost.param_count(&code), (1024.0 + 1.0) * 10.0);
    }

    #[test]
    fn params_increase_with_widths() {
        let cat = Arc::new(CellCatalog::standard());
        let cost = CostModel::new(cat.clone(), CostConstants::default());
        let mut rng = seeded(4);
        for _ in 0..200 {
            let code = ArchitectureCode::random(&mut rng, &cat);
            let base_p = cost.param_count(&code);
            let base_f = cost.flops_estimate(&code);
            let slots = if code.rc4_active { 3 } else { 2 };
            for s in 0..slots {
                if code.width_multipliers[s] != Multiplier::X2_5 {
                    let mut wider = code.clone();
                    wider.width_multipliers[s] = Multiplier::ALL[code.width_multipliers[s].index() + 1];
                    assert!(cost.param_count(&wider) > base_p);
                    assert!(cost.flops_estimate(&wider) > base_f);
                }
            }
            if code.c_init != 144 {
                let mut wider = code.clone();
                wider.c_init += 16;
                assert!(cost.param_count(&wider) > base_p);
                assert!(cost.flops_estimate(&wider) > base_f);
            }
        }
    }

    #[test]
    fn cm2_increase_raises_params() {
        let cat = Arc::new(CellCatalog::standard());
        let cost = CostModel::new(cat.clone(), CostConstants::default());
        let mut code = median_code(&cat);
        code.width_multipliers[0] = Multiplier::X1_5;
        let low = cost.param_count(&code);
        code.width_multipliers[0] = Multiplier::X2_5;
        assert!(cost.param_count(&code) > low);
    }

    #[test]
    fn default_costs_keep_budget_active() {
        let cat = Arc::new(CellCatalog::standard());
        let cost = CostModel::new(cat.clone(), CostConstants::default());
        let mut rng = seeded(2024);
        let under = (0..10_000)
            .filter(|_| cost.param_count(&ArchitectureCode::random(&mut rng, &cat)) < 2.5e6)
            .count();
        let share = under as f64 / 10_000.0;
        assert!(share >= 0.25, "only {share} of random codes fit the budget");
        assert!(share <= 0.75, "{share} of random codes fit; budget barely binds");
    }

    #[test]
    fn flops_scale_with_input_area() {
        let cat = Arc::new(CellCatalog::standard());
        let small = CostModel::new(cat.clone(), CostConstants::default());
        let big = CostModel::new(
            cat.clone(),
            CostConstants {
                input_size: 64,
                ..CostConstants::default()
            },
        );
        let mut rng = seeded(6);
        for _ in 0..50 {
            let code = ArchitectureCode::random(&mut rng, &cat);
            assert_eq!(small.param_count(&code), big.param_count(&code));
            // classifier term carries no area factor
            let classifier = small.classifier_params(&code);
            let ratio = (big.flops_estimate(&code) - classifier) / (small.flops_estimate(&code) - classifier);
            assert!((ratio - 4.0).abs() < 1e-9, "{ratio}");
        }
    }

    #[test]
    fn inactive_rc4_pools_at_stage3_area() {
        let cat = Arc::new(CellCatalog::standard());
        let cost = CostModel::new(cat.clone(), CostConstants::default());
        let mut code = median_code(&cat);
        code.rc4_active = false;
        code.canonicalize(&cat);
        assert_eq!(CostModel::final_stage(&code), 3);
        assert_eq!(cost.stage_area(3), 64.0);
    }

    #[test]
    fn flops_exceed_params() {
        let cat = Arc::new(CellCatalog::standard());
        let cost = CostModel::new(cat.clone(), CostConstants::default());
        let mut rng = seeded(8);
        for _ in 0..1000 {
            let code = ArchitectureCode::random(&mut rng, &cat);
            assert!(cost.flops_estimate(&code) >= cost.param_count(&code));
        }
    }

    #[test]
    fn evaluation_is_deterministic() {
        let eval = SyntheticEvaluator::standard(1);
        let code = ArchitectureCode::random(&mut seeded(3), eval.catalog());
        let first = eval.evaluate(&code).unwrap();
        for _ in 0..100 {
            assert_eq!(eval.evaluate(&code).unwrap(), first);
        }
        let again = SyntheticEvaluator::standard(1);
        assert_eq!(again.evaluate(&code).unwrap(), first);
        assert_eq!(again.landscape, eval.landscape);
    }

    #[test]
    fn quick_metrics_are_ordered() {
        let eval = SyntheticEvaluator::standard(2);
        let mut rng = seeded(5);
        for _ in 0..2000 {
            let code = ArchitectureCode::random(&mut rng, eval.catalog());
            let e = eval.evaluate(&code).unwrap();
            assert!(e.quick.top1 <= e.quick.top5);
            assert!(e.quick.top1 > 0.0 && e.quick.top5 < 1.0);
            assert!((e.quick.loss + e.quick.top1.ln()).abs() < 1e-15);
            let acc = e.final_acc.unwrap();
            assert!((0.01..=0.99).contains(&acc));
        }
        assert!((0.1..=0.3).contains(&eval.landscape.quick_gap));
    }

    #[test]
    fn noiseless_flat_landscape_ties_on_depth_and_par() {
        let mut cat = CellCatalog::standard();
        // two normal cells with identical cost metadata
        let (p, f) = (cat.normal_cells[0].param_coefficient, cat.normal_cells[0].flop_coefficient);
        cat.normal_cells[1].param_coefficient = p;
        cat.normal_cells[1].flop_coefficient = f;
        let cat = Arc::new(cat);
        let spec = SyntheticSpec {
            landscape: LandscapeSpec {
                noise_amplitude: 0.0,
                ..LandscapeSpec::default()
            },
            ..SyntheticSpec::default()
        };
        let mut eval = SyntheticEvaluator::new(spec, cat.clone());
        eval.landscape = eval.landscape.clone().without_affinities();
        let mut a = median_code(&cat);
        a.normal_cells[0] = cat.normal_cells[0].name.clone();
        let mut b = a.clone();
        b.normal_cells[0] = cat.normal_cells[1].name.clone();
        b.pooling = cat.pooling_ops[1].name.clone();
        let (ea, eb) = (eval.evaluate(&a).unwrap(), eval.evaluate(&b).unwrap());
        assert_eq!(ea.par, eb.par);
        assert_eq!(ea.final_acc, eb.final_acc);

        // with affinities back the cell choice matters
        let eval = SyntheticEvaluator::new(spec, cat.clone());
        assert_ne!(eval.evaluate(&a).unwrap().final_acc, eval.evaluate(&b).unwrap().final_acc);
    }

    #[test]
    fn final_and_quick_accuracy_correlate() {
        let eval = SyntheticEvaluator::standard(3);
        let mut rng = seeded(17);
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for _ in 0..1000 {
            let code = ArchitectureCode::random(&mut rng, eval.catalog());
            let e = eval.evaluate(&code).unwrap();
            xs.push(e.final_acc.unwrap());
            ys.push(e.quick.top1);
        }
        let r = pearson(&xs, &ys);
        assert!(r >= 0.8, "correlation {r}");
    }

    fn pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        cov / (vx * vy).sqrt()
    }

    #[test]
    fn spec_round_trips_through_text() {
        let spec = SyntheticSpec::default();
        assert_eq!(SyntheticSpec::parse(&spec.to_toml()).unwrap(), spec);
        let partial = SyntheticSpec::parse("[landscape]\nseed = 9\n").unwrap();
        assert_eq!(partial.landscape.seed, 9);
        assert_eq!(partial.cost, CostConstants::default());
    }

    #[test]
    fn invalid_code_fails_evaluation() {
        let eval = SyntheticEvaluator::standard(1);
        let mut code = median_code(eval.catalog());
        code.depths[1] = 9;
        assert!(matches!(eval.evaluate(&code), Err(Error::Evaluation { .. })));
    }
}
