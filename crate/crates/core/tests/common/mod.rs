//! Experiments shared by the component tests and the acceptance suite. Each
//! returns the measured quantity so callers choose how to judge it.
#![allow(dead_code)]

use std::collections::HashSet;

use moarr_core::arr::{
    build_fe_dataset, eq2_gradient, eq2_loss, init_rr_model, rr_training_targets, train_fe_model, train_rr_model,
    PerfNormalizer, RrTargetBatch, SurrogateConfig,
};
use moarr_core::fes::{extract_attributes, predict_final_acc, train_fes, AttributeVector, FesConfig, FesSample};
use moarr_core::mlp::{Activation, MlpModel};
use moarr_core::oracle::{Evaluator, SyntheticEvaluator};
use moarr_core::pareto::{is_dominated, pareto_boundary, Archive, EvaluatedRecord, PerformancePair};
use moarr_core::rng::seeded;
use moarr_core::space::{vector_len, ArchitectureCode};
use rand::Rng;

pub const P_MAX: f64 = 2.5e6;
const STEP: f64 = 1e-5;

/// `‖a - n‖ / (‖a‖ + ‖n‖)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn central_difference(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + STEP;
            let up = f(&probe);
            probe[i] = x[i] - STEP;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

fn randomize(model: &mut MlpModel, rng: &mut impl Rng) {
    let params: Vec<f64> = (0..model.parameter_count()).map(|_| rng.random_range(-0.8..0.8)).collect();
    model.set_flat_parameters(&params).unwrap();
}

/// Model `i` of the sweep; the cycle covers every hidden and output activation.
pub fn small_model(i: u64) -> MlpModel {
    let mut rng = seeded(1000 + i);
    let hidden = [Activation::Rectifier, Activation::Sigmoid, Activation::Identity][i as usize % 3];
    let output = [Activation::Identity, Activation::Sigmoid, Activation::BlockSoftmax][(i as usize / 3) % 3];
    let mut widths = vec![rng.random_range(2..6)];
    for _ in 0..rng.random_range(1..3) {
        widths.push(rng.random_range(3..8));
    }
    let (out, layout) = if output == Activation::BlockSoftmax {
        (5, Some(vec![2, 3]))
    } else {
        (rng.random_range(1..4), None)
    };
    widths.push(out);
    let mut m = MlpModel::new(&widths, hidden, output, layout, i).unwrap();
    randomize(&mut m, &mut rng);
    m
}

/// (parameter error, input error) of model `i` against finite differences
/// of `sum_k c_k * out_k`.
pub fn single_model_errors(i: u64) -> (f64, f64) {
    let model = small_model(i);
    let mut rng = seeded(i);
    let x: Vec<f64> = (0..model.input_width()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let c: Vec<f64> = (0..model.output_width()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let objective = |m: &MlpModel, input: &[f64]| -> f64 {
        m.forward(input).unwrap().iter().zip(&c).map(|(o, w)| o * w).sum()
    };
    let grads = model.backward(&x, &c).unwrap();
    let numeric = central_difference(&model.flat_parameters(), |p| {
        let mut probe = model.clone();
        probe.set_flat_parameters(p).unwrap();
        objective(&probe, &x)
    });
    let numeric_input = central_difference(&x, |xi| objective(&model, xi));
    (
        relative_error(&grads.flat_parameters(), &numeric),
        relative_error(&grads.input, &numeric_input),
    )
}

/// Error of the composed reverse-training gradient for random pair `i`.
pub fn composed_error(i: u64) -> f64 {
    let mut rng = seeded(500 + i);
    let layout = vec![2, 3, rng.random_range(2..5)];
    let code_len: usize = layout.iter().sum();
    let hidden = [Activation::Rectifier, Activation::Sigmoid, Activation::Identity][i as usize % 3];
    let fe_hidden = [Activation::Sigmoid, Activation::Rectifier, Activation::Identity][i as usize % 3];
    let fe_out = if i.is_multiple_of(2) { Activation::Sigmoid } else { Activation::Identity };

    let mut fe = MlpModel::new(&[code_len, rng.random_range(3..7), 2], fe_hidden, fe_out, None, i).unwrap();
    randomize(&mut fe, &mut rng);
    let mut rr = MlpModel::new(
        &[2, rng.random_range(3..7), code_len],
        hidden,
        Activation::BlockSoftmax,
        Some(layout),
        i + 77,
    )
    .unwrap();
    randomize(&mut rr, &mut rng);
    let targets = RrTargetBatch((0..6).map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect());

    let analytic = eq2_gradient(&fe, &rr, &targets).unwrap();
    let numeric = central_difference(&rr.flat_parameters(), |p| {
        let mut probe = rr.clone();
        probe.set_flat_parameters(p).unwrap();
        eq2_loss(&fe, &probe, &targets).unwrap()
    });
    relative_error(&analytic, &numeric)
}

/// `n` distinct uniform codes with their evaluations.
pub fn random_evaluations(ev: &SyntheticEvaluator, n: usize, seed: u64) -> Vec<(ArchitectureCode, moarr_core::oracle::Evaluation)> {
    let mut rng = seeded(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let code = ArchitectureCode::random(&mut rng, ev.catalog());
        if seen.insert(code.clone()) {
            let e = ev.evaluate(&code).unwrap();
            out.push((code, e));
        }
    }
    out
}

pub fn random_archive(ev: &SyntheticEvaluator, n: usize, seed: u64) -> Archive {
    let mut a = Archive::new();
    for (code, e) in random_evaluations(ev, n, seed) {
        a.push(EvaluatedRecord {
            code,
            perf: PerformancePair::new(e.final_acc.unwrap(), e.par).unwrap(),
            quick: Some(e.quick),
            iteration: 0,
        })
        .unwrap();
    }
    a
}

/// Holdout RMSE of the forward surrogate fitted on `n` random records.
pub fn fe_holdout_rmse(seed: u64, n: usize) -> f64 {
    let ev = SyntheticEvaluator::standard(seed);
    let archive = random_archive(&ev, n, seed + 1);
    let normalizer = PerfNormalizer::new(P_MAX).unwrap();
    let dataset = build_fe_dataset(&archive, &normalizer, ev.catalog()).unwrap();
    train_fe_model(&dataset, &SurrogateConfig::default()).unwrap().holdout_rmse
}

/// Final reverse-training loss against a forward stub that reads out the
/// first two code slots. Targets lie where those slots can match them.
pub fn eq2_stub_final_loss() -> f64 {
    let ev = SyntheticEvaluator::standard(0);
    let len = vector_len(ev.catalog());
    let mut fe = MlpModel::new(&[len, 2], Activation::Identity, Activation::Identity, None, 0).unwrap();
    let mut w = vec![0.0; fe.parameter_count()];
    w[0] = 1.0;
    w[len + 1] = 1.0;
    fe.set_flat_parameters(&w).unwrap();

    let mut rng = seeded(11);
    let mut targets = Vec::new();
    while targets.len() < 256 {
        let t = [rng.random_range(0.05..0.9), rng.random_range(0.05..0.9)];
        if t[0] + t[1] <= 0.95 {
            targets.push(t);
        }
    }
    let targets = RrTargetBatch(targets);
    let config = SurrogateConfig::default();
    let rr = init_rr_model(ev.catalog(), &config.rr_hidden, 3).unwrap();
    let (trained, _) = train_rr_model(&fe, &rr, &targets, &config.rr_train).unwrap();
    eq2_loss(&fe, &trained, &targets).unwrap()
}

/// (initial, trained) mean reverse-training loss against a forward
/// surrogate fitted on 200 random records.
pub fn eq2_fitted_losses(seed: u64) -> (f64, f64) {
    let ev = SyntheticEvaluator::standard(seed);
    let archive = random_archive(&ev, 200, seed + 7);
    let normalizer = PerfNormalizer::new(P_MAX).unwrap();
    let config = SurrogateConfig::default();
    let dataset = build_fe_dataset(&archive, &normalizer, ev.catalog()).unwrap();
    let fe = train_fe_model(&dataset, &config).unwrap().model;
    let targets = rr_training_targets(&archive, &normalizer, config.target_count, &mut seeded(seed)).unwrap();
    let rr = init_rr_model(ev.catalog(), &config.rr_hidden, seed).unwrap();
    let before = eq2_loss(&fe, &rr, &targets).unwrap();
    let (trained, _) = train_rr_model(&fe, &rr, &targets, &config.rr_train).unwrap();
    (before, eq2_loss(&fe, &trained, &targets).unwrap())
}

pub fn fes_samples(ev: &SyntheticEvaluator, n: usize, seed: u64) -> Vec<FesSample> {
    random_evaluations(ev, n, seed)
        .into_iter()
        .map(|(code, e)| {
            let attrs = extract_attributes(&code, ev.catalog(), &e.quick, &ev.cost).unwrap();
            (attrs, e.final_acc.unwrap())
        })
        .collect()
}

/// (holdout R², holdout MAE) of the fast-evaluation regressor on `n`
/// samples from the default landscape.
pub fn fes_holdout(seed: u64, n: usize) -> (f64, f64) {
    let ev = SyntheticEvaluator::standard(seed);
    let fit = train_fes(&fes_samples(&ev, n, seed + 3), &FesConfig::default()).unwrap();
    (fit.holdout_r2.expect("targets vary"), fit.holdout_mae)
}

/// Fraction of probe lines along which predictions never decrease as
/// quick top-1 rises, for a regressor trained on targets that increase with
/// quick top-1.
pub fn fes_monotone_fraction(seed: u64) -> f64 {
    let ev = SyntheticEvaluator::standard(seed);
    let base = fes_samples(&ev, 500, seed + 5);
    let top1: Vec<f64> = base.iter().map(|(a, _)| a.quick_top1).collect();
    let mean = top1.iter().sum::<f64>() / top1.len() as f64;
    let sd = (top1.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / top1.len() as f64).sqrt();
    let smooth = |a: &AttributeVector| {
        let z = 1.5 * (a.quick_top1 - mean) / sd + 0.3 * (a.params / 1e6).ln() - 0.1 * f64::from(a.reduction_count);
        0.1 + 0.8 / (1.0 + (-z).exp())
    };
    let samples: Vec<FesSample> = base.iter().map(|(a, _)| (*a, smooth(a))).collect();
    let model = train_fes(&samples, &FesConfig::default()).unwrap().model;

    let lo = top1.iter().copied().fold(f64::INFINITY, f64::min);
    let lines = 100;
    let mut monotone = 0;
    for (a, _) in samples.iter().take(lines) {
        let mut last = f64::NEG_INFINITY;
        let mut ok = true;
        for k in 0..=20 {
            let mut probe = *a;
            // top-1 may not exceed the fixed top-5
            probe.quick_top1 = (lo + (a.quick_top5 - lo) * f64::from(k) / 20.0).min(a.quick_top5);
            let p = predict_final_acc(&model, &probe).unwrap();
            if p < last - 1e-12 {
                ok = false;
            }
            last = p;
        }
        monotone += usize::from(ok);
    }
    monotone as f64 / lines as f64
}

/// (not dominated, total) over records labelled `first..=last`, each judged
/// against the boundary of everything labelled earlier.
pub fn nondominated_counts(records: &[EvaluatedRecord], first: usize, last: usize) -> (usize, usize) {
    let (mut hits, mut total) = (0, 0);
    for t in first..=last {
        let before: Vec<PerformancePair> = records.iter().filter(|r| r.iteration < t).map(|r| r.perf).collect();
        let boundary: Vec<PerformancePair> = pareto_boundary(&before).into_iter().map(|i| before[i]).collect();
        for r in records.iter().filter(|r| r.iteration == t) {
            total += 1;
            hits += usize::from(!boundary.iter().any(|b| is_dominated(&r.perf, b)));
        }
    }
    (hits, total)
}
