//! Fast evaluation: predicts fully-trained accuracy from cheap signals.
//!
//! Eight attributes per architecture: estimated FLOPs and parameters, cell
//! graph density, layer and reduction counts, and the quick-run top-1, top-5
//! and loss. A small regressor (`8 → 32 → 1`, sigmoid output) maps
//! standardized attributes to final accuracy.

use std::fmt::Write as _;
use std::path::Path;

use crate::arr::holdout_split;
use crate::error::{Error, Result};
use crate::mlp::{self, Activation, Loss, MlpModel, Sample, TrainConfig, TrainReport};
use crate::oracle::{CostModel, QuickMetrics};
use crate::space::{ArchitectureCode, CellCatalog};

pub const ATTRIBUTE_COUNT: usize = 8;
pub const MIN_FES_SAMPLES: usize = 50;
pub const ATTRIBUTE_NAMES: [&str; ATTRIBUTE_COUNT] = [
    "flops",
    "params",
    "density",
    "layer_count",
    "reduction_count",
    "quick_top1",
    "quick_top5",
    "quick_loss",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttributeVector {
    pub flops: f64,
    pub params: f64,
    pub density: f64,
    pub layer_count: u32,
    pub reduction_count: u32,
    pub quick_top1: f64,
    pub quick_top5: f64,
    pub quick_loss: f64,
}

impl AttributeVector {
    pub fn to_array(&self) -> [f64; ATTRIBUTE_COUNT] {
        [
            self.flops,
            self.params,
            self.density,
            f64::from(self.layer_count),
            f64::from(self.reduction_count),
            self.quick_top1,
            self.quick_top5,
            self.quick_loss,
        ]
    }

    pub fn from_array(a: [f64; ATTRIBUTE_COUNT]) -> Result<Self> {
        let count = |v: f64, name: &str| {
            if v >= 0.0 && v.fract() == 0.0 && v <= f64::from(u32::MAX) {
                Ok(v as u32)
            } else {
                Err(Error::InvalidInput(format!("{name} must be a non-negative integer, got {v}")))
            }
        };
        let attrs = AttributeVector {
            flops: a[0],
            params: a[1],
            density: a[2],
            layer_count: count(a[3], "layer_count")?,
            reduction_count: count(a[4], "reduction_count")?,
            quick_top1: a[5],
            quick_top5: a[6],
            quick_loss: a[7],
        };
        attrs.check()?;
        Ok(attrs)
    }

    fn check(&self) -> Result<()> {
        if let Some(i) = self.to_array().iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("attribute {} is not finite", ATTRIBUTE_NAMES[i])));
        }
        if self.quick_top1 > self.quick_top5 {
            return Err(Error::InvalidInput(format!(
                "quick top-1 {} exceeds top-5 {}",
                self.quick_top1, self.quick_top5
            )));
        }
        Ok(())
    }
}

pub fn extract_attributes(
    code: &ArchitectureCode,
    catalog: &CellCatalog,
    quick: &QuickMetrics,
    cost: &CostModel,
) -> Result<AttributeVector> {
    if !code.validate(catalog) {
        return Err(Error::InvalidInput(format!("not a canonical code: {code}")));
    }
    let s = code.structural_attributes(catalog);
    let attrs = AttributeVector {
        flops: cost.flops_estimate(code),
        params: cost.param_count(code),
        density: s.density,
        layer_count: s.layer_count,
        reduction_count: s.reduction_count,
        quick_top1: quick.top1,
        quick_top5: quick.top5,
        quick_loss: quick.loss,
    };
    attrs.check()?;
    Ok(attrs)
}

/// Per-attribute affine standardization, frozen at training time.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: [f64; ATTRIBUTE_COUNT],
    pub scale: [f64; ATTRIBUTE_COUNT],
}

impl Standardizer {
    /// Zero-variance columns get unit scale.
    pub fn fit(rows: &[[f64; ATTRIBUTE_COUNT]]) -> Self {
        let n = rows.len().max(1) as f64;
        let mut mean = [0.0; ATTRIBUTE_COUNT];
        let mut scale = [0.0; ATTRIBUTE_COUNT];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        for r in rows {
            for ((s, m), v) in scale.iter_mut().zip(&mean).zip(r) {
                *s += (v - m) * (v - m) / n;
            }
        }
        for s in &mut scale {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        Standardizer { mean, scale }
    }

    pub fn apply(&self, x: &[f64; ATTRIBUTE_COUNT]) -> [f64; ATTRIBUTE_COUNT] {
        std::array::from_fn(|i| (x[i] - self.mean[i]) / self.scale[i])
    }

    pub fn invert(&self, z: &[f64; ATTRIBUTE_COUNT]) -> [f64; ATTRIBUTE_COUNT] {
        std::array::from_fn(|i| z[i] * self.scale[i] + self.mean[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FesModel {
    pub mlp: MlpModel,
    pub standardizer: Standardizer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FesConfig {
    pub hidden: usize,
    pub train: TrainConfig,
    pub holdout_fraction: f64,
}

impl Default for FesConfig {
    fn default() -> Self {
        FesConfig {
            hidden: 32,
            train: TrainConfig {
                learning_rate: 0.2,
                ..TrainConfig::default()
            },
            holdout_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FesFit {
    pub model: FesModel,
    /// `None` when the holdout targets have no variance.
    pub holdout_r2: Option<f64>,
    pub holdout_mae: f64,
    /// Every training target is identical.
    pub degenerate: bool,
    pub report: TrainReport,
}

pub type FesSample = (AttributeVector, f64);

fn sort_key(a: &FesSample, b: &FesSample) -> std::cmp::Ordering {
    let (x, y) = (a.0.to_array(), b.0.to_array());
    x.iter()
        .zip(&y)
        .map(|(p, q)| p.total_cmp(q))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.1.total_cmp(&b.1))
}

/// Fits the regressor. Samples are put in a canonical order first, so the
/// result does not depend on the order they were supplied in.
pub fn train_fes(samples: &[FesSample], config: &FesConfig) -> Result<FesFit> {
    if samples.len() < MIN_FES_SAMPLES {
        return Err(Error::InsufficientData {
            needed: MIN_FES_SAMPLES,
            found: samples.len(),
        });
    }
    for (a, y) in samples {
        a.check()?;
        if !y.is_finite() {
            return Err(Error::InvalidInput(format!("final accuracy {y} is not finite")));
        }
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(sort_key);

    let seed = config.train.seed;
    let (train_idx, hold_idx) = holdout_split(sorted.len(), config.holdout_fraction, seed ^ 0xFE5);
    let rows: Vec<[f64; ATTRIBUTE_COUNT]> = train_idx.iter().map(|&i| sorted[i].0.to_array()).collect();
    let standardizer = Standardizer::fit(&rows);
    let to_sample = |i: usize| -> Sample {
        (
            standardizer.apply(&sorted[i].0.to_array()).to_vec(),
            vec![sorted[i].1],
        )
    };
    let train_set: Vec<Sample> = train_idx.iter().map(|&i| to_sample(i)).collect();
    let degenerate = sorted.iter().all(|s| s.1 == sorted[0].1);

    let init = MlpModel::new(
        &[ATTRIBUTE_COUNT, config.hidden, 1],
        Activation::Rectifier,
        Activation::Sigmoid,
        None,
        seed,
    )?;
    let (mlp, report) = mlp::train(&init, &train_set, &Loss::SquaredError, &config.train)?;
    let model = FesModel { mlp, standardizer };

    let mut preds = Vec::with_capacity(hold_idx.len());
    for &i in &hold_idx {
        preds.push((predict_final_acc(&model, &sorted[i].0)?, sorted[i].1));
    }
    let (holdout_r2, holdout_mae) = r2_and_mae(&preds);
    Ok(FesFit {
        model,
        holdout_r2,
        holdout_mae,
        degenerate,
        report,
    })
}

/// Coefficient of determination and mean absolute error of `(prediction, truth)` pairs.
pub fn r2_and_mae(pairs: &[(f64, f64)]) -> (Option<f64>, f64) {
    if pairs.is_empty() {
        return (None, 0.0);
    }
    let n = pairs.len() as f64;
    let mean = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let ss_tot: f64 = pairs.iter().map(|p| (p.1 - mean).powi(2)).sum();
    let ss_res: f64 = pairs.iter().map(|p| (p.1 - p.0).powi(2)).sum();
    let mae = pairs.iter().map(|p| (p.1 - p.0).abs()).sum::<f64>() / n;
    let constant = pairs.iter().all(|p| p.1 == pairs[0].1);
    let r2 = (!constant && ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot);
    (r2, mae)
}

pub fn predict_final_acc(model: &FesModel, attrs: &AttributeVector) -> Result<f64> {
    attrs.check()?;
    let z = model.standardizer.apply(&attrs.to_array());
    Ok(model.mlp.forward(&z)?[0])
}

/// Comma-separated dump: a header of the eight attribute names plus `final_acc`.
pub fn dump_samples(samples: &[FesSample]) -> String {
    let mut out = ATTRIBUTE_NAMES.join(",");
    out.push_str(",final_acc\n");
    for (a, y) in samples {
        for v in a.to_array() {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{y}");
    }
    out
}

pub fn parse_samples(text: &str) -> Result<Vec<FesSample>> {
    let mut lines = text.lines().enumerate();
    let expected = format!("{},final_acc", ATTRIBUTE_NAMES.join(","));
    match lines.next() {
        Some((_, h)) if h.trim() == expected => {}
        _ => return Err(Error::parse(Some(1), "missing attribute header")),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let values = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(Some(i + 1), e.to_string()))?;
        if values.len() != ATTRIBUTE_COUNT + 1 {
            return Err(Error::parse(
                Some(i + 1),
                format!("expected {} fields, found {}", ATTRIBUTE_COUNT + 1, values.len()),
            ));
        }
        let attrs = AttributeVector::from_array(std::array::from_fn(|k| values[k]))
            .map_err(|e| Error::parse(Some(i + 1), e.to_string()))?;
        out.push((attrs, values[ATTRIBUTE_COUNT]));
    }
    Ok(out)
}

pub fn load_samples(path: impl AsRef<Path>) -> Result<Vec<FesSample>> {
    parse_samples(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{Evaluator, SyntheticEvaluator};
    use crate::rng::seeded;
    use crate::space::Multiplier;
    use rand::Rng as _;

    fn oracle_samples(n: usize, seed: u64) -> Vec<FesSample> {
        let ev = SyntheticEvaluator::standard(seed);
        let cat = ev.catalog_arc();
        let mut rng = seeded(seed + 100);
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        while out.len() < n {
            let code = ArchitectureCode::random(&mut rng, &cat);
            if !seen.insert(code.clone()) {
                continue;
            }
            let e = ev.evaluate(&code).unwrap();
            let a = extract_attributes(&code, &cat, &e.quick, &ev.cost).unwrap();
            out.push((a, e.final_acc.unwrap()));
        }
        out
    }

    #[test]
    fn inactive_stage4_has_two_reductions() {
        let ev = SyntheticEvaluator::standard(1);
        let cat = ev.catalog_arc();
        let mut rng = seeded(3);
        let mut code = ArchitectureCode::random(&mut rng, &cat);
        code.rc4_active = false;
        code.canonicalize(&cat);
        let q = QuickMetrics {
            top1: 0.4,
            top5: 0.8,
            loss: 1.2,
        };
        let a = extract_attributes(&code, &cat, &q, &ev.cost).unwrap();
        assert_eq!(a.reduction_count, 2);
        assert_eq!((a.quick_top1, a.quick_top5, a.quick_loss), (0.4, 0.8, 1.2));
    }

    #[test]
    fn pooling_only_changes_its_own_cost_terms() {
        let ev = SyntheticEvaluator::standard(1);
        let cat = ev.catalog_arc();
        let q = QuickMetrics {
            top1: 0.5,
            top5: 0.75,
            loss: 0.7,
        };
        let mut rng = seeded(5);
        for _ in 0..50 {
            let a = ArchitectureCode::random(&mut rng, &cat);
            let mut b = a.clone();
            b.pooling = cat.pooling_ops[(cat.pooling_index(&a.pooling).unwrap() + 1) % 3].name.clone();
            let (xa, xb) = (
                extract_attributes(&a, &cat, &q, &ev.cost).unwrap(),
                extract_attributes(&b, &cat, &q, &ev.cost).unwrap(),
            );
            assert_eq!(xa.density, xb.density);
            let last = f64::from(*a.stage_widths().last().unwrap());
            let area = {
                let reductions = if a.rc4_active { 3 } else { 2 };
                (32.0 / f64::from(1u32 << reductions)).powi(2)
            };
            let pa = cat.pooling(&a.pooling).unwrap();
            let pb = cat.pooling(&b.pooling).unwrap();
            let expected = (pb.flop_coefficient - pa.flop_coefficient) * last * area;
            assert!(((xb.flops - xa.flops) - expected).abs() < 1e-6 * xa.flops);
        }
    }

    #[test]
    fn top1_above_top5_is_rejected() {
        let ev = SyntheticEvaluator::standard(1);
        let cat = ev.catalog_arc();
        let code = ArchitectureCode::random(&mut seeded(1), &cat);
        let q = QuickMetrics {
            top1: 0.9,
            top5: 0.8,
            loss: 0.1,
        };
        assert!(matches!(
            extract_attributes(&code, &cat, &q, &ev.cost),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn extraction_is_pure() {
        let ev = SyntheticEvaluator::standard(2);
        let cat = ev.catalog_arc();
        let code = ArchitectureCode::random(&mut seeded(2), &cat);
        let e = ev.evaluate(&code).unwrap();
        let a = extract_attributes(&code, &cat, &e.quick, &ev.cost).unwrap();
        for _ in 0..10 {
            assert_eq!(extract_attributes(&code, &cat, &e.quick, &ev.cost).unwrap(), a);
        }
    }

    #[test]
    fn standardizer_round_trips() {
        let mut rng = seeded(6);
        let rows: Vec<[f64; 8]> = (0..100)
            .map(|_| std::array::from_fn(|i| rng.random_range(-1e3..1e3) * (i + 1) as f64))
            .collect();
        let s = Standardizer::fit(&rows);
        for r in &rows {
            let back = s.invert(&s.apply(r));
            for (a, b) in back.iter().zip(r) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        let constant = Standardizer::fit(&[[2.0; 8], [2.0; 8]]);
        assert_eq!(constant.scale, [1.0; 8]);
    }

    #[test]
    fn fewer_than_fifty_samples_refused() {
        let s = oracle_samples(49, 1);
        assert!(matches!(
            train_fes(&s, &FesConfig::default()),
            Err(Error::InsufficientData { needed: 50, found: 49 })
        ));
    }

    #[test]
    fn constant_targets_are_degenerate() {
        let mut s = oracle_samples(60, 2);
        for x in &mut s {
            x.1 = 0.7;
        }
        let cfg = FesConfig {
            train: TrainConfig {
                max_epochs: 3,
                ..TrainConfig::default()
            },
            ..FesConfig::default()
        };
        let fit = train_fes(&s, &cfg).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.holdout_r2, None);
    }

    #[test]
    fn sample_order_does_not_matter() {
        let s = oracle_samples(80, 3);
        let mut rev = s.clone();
        rev.reverse();
        let cfg = FesConfig {
            train: TrainConfig {
                max_epochs: 10,
                ..TrainConfig::default()
            },
            ..FesConfig::default()
        };
        let a = train_fes(&s, &cfg).unwrap();
        let b = train_fes(&rev, &cfg).unwrap();
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn predictions_are_bounded_and_reject_nan() {
        let s = oracle_samples(60, 4);
        let cfg = FesConfig {
            train: TrainConfig {
                max_epochs: 5,
                ..TrainConfig::default()
            },
            ..FesConfig::default()
        };
        let fit = train_fes(&s, &cfg).unwrap();
        for (a, _) in &s {
            let p = predict_final_acc(&fit.model, a).unwrap();
            assert!(p > 0.0 && p < 1.0);
        }
        let mut bad = s[0].0;
        bad.density = f64::NAN;
        assert!(predict_final_acc(&fit.model, &bad).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let s = oracle_samples(20, 5);
        let text = dump_samples(&s);
        assert_eq!(parse_samples(&text).unwrap(), s);
        let broken = text.replacen("\n", "\nx,", 2);
        assert!(matches!(parse_samples(&broken), Err(Error::Parse { .. })));
    }

    #[test]
    fn median_code_attributes() {
        let ev = SyntheticEvaluator::standard(0);
        let cat = ev.catalog_arc();
        let code = ArchitectureCode {
            depths: [5, 5, 5],
            rc4_active: true,
            c_init: 128,
            width_multipliers: [Multiplier::X2; 3],
            normal_cells: std::array::from_fn(|i| cat.normal_cells[i].name.clone()),
            reduction_cells: std::array::from_fn(|i| cat.reduction_cells[i].name.clone()),
            pooling: cat.pooling_ops[0].name.clone(),
        };
        let q = QuickMetrics {
            top1: 0.5,
            top5: 0.75,
            loss: 0.69,
        };
        let a = extract_attributes(&code, &cat, &q, &ev.cost).unwrap();
        assert_eq!(a.layer_count, 18);
        assert_eq!(a.reduction_count, 3);
        assert!(a.flops > a.params);
    }
}
