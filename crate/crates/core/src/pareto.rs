//! Dominance, Pareto boundaries, the ideal-target region and hypervolume.
//!
//! Accuracy is maximized and parameter count minimized. Dominance is strict in
//! both objectives, so performance ties never remove each other from a front.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::oracle::QuickMetrics;
use crate::rng::Rng;
use crate::space::{ArchitectureCode, CellCatalog};

/// Consecutive rejections before the sampler falls back to the staircase.
pub const REJECTION_LIMIT: usize = 1_000;
/// Displacement off the staircase, in normalized units.
pub const STAIRCASE_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerformancePair {
    pub acc: f64,
    pub par: f64,
}

impl PerformancePair {
    pub fn new(acc: f64, par: f64) -> Result<Self> {
        let p = PerformancePair { acc, par };
        if p.is_valid() {
            Ok(p)
        } else {
            Err(Error::InvalidInput(format!(
                "performance pair needs 0 < acc < 1 and par > 0, got ({acc}, {par})"
            )))
        }
    }

    pub fn is_valid(&self) -> bool {
        self.acc > 0.0 && self.acc < 1.0 && self.par > 0.0 && self.par.is_finite()
    }

    /// `(acc, par / p_max)`.
    pub fn normalized(&self, p_max: f64) -> [f64; 2] {
        [self.acc, self.par / p_max]
    }
}

/// True iff `y` strictly improves on `x` in both objectives (`x ≺ y`).
pub fn is_dominated(x: &PerformancePair, y: &PerformancePair) -> bool {
    y.acc > x.acc && y.par < x.par
}

/// `a` is at least as good as `b` in both objectives. Used only for
/// reporting duplicates, never for boundary membership.
pub fn weakly_dominates(a: &PerformancePair, b: &PerformancePair) -> bool {
    a.acc >= b.acc && a.par <= b.par
}

/// Indices (ascending) of the points not strictly dominated by any other.
pub fn pareto_boundary(points: &[PerformancePair]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[b].acc.total_cmp(&points[a].acc));
    let mut keep = Vec::new();
    // minimum par among points with strictly higher accuracy than the group
    let mut best_par_above = f64::INFINITY;
    let mut start = 0;
    while start < order.len() {
        let acc = points[order[start]].acc;
        let mut end = start;
        while end < order.len() && points[order[end]].acc == acc {
            end += 1;
        }
        let group = &order[start..end];
        keep.extend(group.iter().copied().filter(|&i| !(best_par_above < points[i].par)));
        for &i in group {
            best_par_above = best_par_above.min(points[i].par);
        }
        start = end;
    }
    keep.sort_unstable();
    keep
}

/// Membership in the region of targets not beaten by any boundary point,
/// with the non-strict comparisons of the region's definition.
pub fn inputs_ideal_contains(p: &PerformancePair, boundary: &[PerformancePair], p_max: f64) -> bool {
    p.acc > 0.0
        && p.acc < 1.0
        && p.par > 0.0
        && p.par < p_max
        && boundary.iter().all(|b| b.acc <= p.acc || b.par >= p.par)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SamplingStats {
    pub accepted: usize,
    pub attempts: usize,
    pub fallbacks: usize,
}

/// Draws `n` targets from the ideal region: uniform rejection sampling over
/// the open box `(0,1) x (0,p_max)`, falling back to points just beyond the
/// boundary staircase after [`REJECTION_LIMIT`] consecutive rejections.
pub fn sample_inputs_ideal(
    boundary: &[PerformancePair],
    p_max: f64,
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<PerformancePair>> {
    sample_inputs_ideal_with_stats(boundary, p_max, n, rng).map(|(s, _)| s)
}

pub fn sample_inputs_ideal_with_stats(
    boundary: &[PerformancePair],
    p_max: f64,
    n: usize,
    rng: &mut Rng,
) -> Result<(Vec<PerformancePair>, SamplingStats)> {
    if n == 0 {
        return Err(Error::InvalidInput("sample count must be at least 1".into()));
    }
    if !(p_max > 0.0) {
        return Err(Error::InvalidInput(format!("p_max must be positive, got {p_max}")));
    }
    if boundary.iter().any(|b| b.acc >= 1.0 && b.par <= 0.0) {
        return Err(Error::Exhausted("ideal region is empty".into()));
    }
    let mut stats = SamplingStats::default();
    let mut out = Vec::with_capacity(n);
    let mut streak = 0;
    while out.len() < n {
        let candidate = if streak < REJECTION_LIMIT {
            stats.attempts += 1;
            PerformancePair {
                acc: open_unit(rng),
                par: open_unit(rng) * p_max,
            }
        } else {
            stats.fallbacks += 1;
            staircase_point(boundary, p_max, rng)
        };
        if inputs_ideal_contains(&candidate, boundary, p_max) {
            out.push(candidate);
            stats.accepted += 1;
            streak = 0;
        } else {
            streak += 1;
            // the fallback only fails when `boundary` is not a true front
            if streak > 2 * REJECTION_LIMIT {
                return Err(Error::Exhausted(
                    "no ideal target found; is the boundary non-dominated?".into(),
                ));
            }
        }
    }
    Ok((out, stats))
}

fn open_unit(rng: &mut Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// A point displaced from a random staircase corner into the ideal region.
///
/// Every boundary point is itself in the region, and moving it to higher
/// accuracy or lower parameter count keeps it there.
fn staircase_point(boundary: &[PerformancePair], p_max: f64, rng: &mut Rng) -> PerformancePair {
    if boundary.is_empty() {
        return PerformancePair {
            acc: 0.5,
            par: 0.5 * p_max,
        };
    }
    let b = boundary[rng.random_range(0..boundary.len())];
    let acc_step = STAIRCASE_EPSILON * rng.random::<f64>();
    let par_step = STAIRCASE_EPSILON * rng.random::<f64>();
    let mut acc = b.acc + acc_step;
    if acc >= 1.0 {
        acc = b.acc.max(0.0) + (1.0 - b.acc.max(0.0)) / 2.0;
    }
    let ceiling = p_max * (1.0 - STAIRCASE_EPSILON);
    let mut par = (b.par / p_max - par_step).min(ceiling / p_max) * p_max;
    if par <= 0.0 {
        par = b.par.min(ceiling) / 2.0;
    }
    PerformancePair { acc, par }
}

/// Area dominated by `points` in the normalized box `acc x par/p_max`,
/// relative to the reference point `(0, p_max)`. Points at or beyond the
/// budget contribute nothing.
pub fn hypervolume_2d(points: &[PerformancePair], p_max: f64) -> f64 {
    let mut pts: Vec<[f64; 2]> = points
        .iter()
        .map(|p| [p.acc.clamp(0.0, 1.0), p.par / p_max])
        .filter(|q| q[1] < 1.0 && q[0] > 0.0)
        .collect();
    pts.sort_by(|a, b| a[1].total_cmp(&b[1]));
    let mut area = 0.0;
    let mut best_acc: f64 = 0.0;
    for (i, q) in pts.iter().enumerate() {
        best_acc = best_acc.max(q[0]);
        let next = pts.get(i + 1).map_or(1.0, |n| n[1]);
        area += (next - q[1].max(0.0)).max(0.0) * best_acc;
    }
    area
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatedRecord {
    pub code: ArchitectureCode,
    pub perf: PerformancePair,
    pub quick: Option<QuickMetrics>,
    pub iteration: usize,
}

/// Append-only evaluation history with a cached Pareto boundary.
#[derive(Debug, Clone, Default)]
pub struct Archive {
    records: Vec<EvaluatedRecord>,
    boundary: Vec<usize>,
    codes: HashSet<ArchitectureCode>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EvaluatedRecord] {
        &self.records
    }

    pub fn contains(&self, code: &ArchitectureCode) -> bool {
        self.codes.contains(code)
    }

    /// Indices of the boundary records, ascending.
    pub fn boundary_indices(&self) -> &[usize] {
        &self.boundary
    }

    pub fn boundary(&self) -> Vec<&EvaluatedRecord> {
        self.boundary.iter().map(|&i| &self.records[i]).collect()
    }

    pub fn boundary_perf(&self) -> Vec<PerformancePair> {
        self.boundary.iter().map(|&i| self.records[i].perf).collect()
    }

    pub fn performances(&self) -> Vec<PerformancePair> {
        self.records.iter().map(|r| r.perf).collect()
    }

    pub fn push(&mut self, record: EvaluatedRecord) -> Result<()> {
        if !record.perf.is_valid() {
            return Err(Error::InvalidInput(format!(
                "record for `{}` has invalid performance ({}, {})",
                record.code, record.perf.acc, record.perf.par
            )));
        }
        if self.codes.contains(&record.code) {
            return Err(Error::InvalidInput(format!(
                "code `{}` already evaluated",
                record.code
            )));
        }
        let p = record.perf;
        let index = self.records.len();
        self.codes.insert(record.code.clone());
        self.records.push(record);

        // Dominance is transitive, so checking the cached boundary suffices.
        let dominated = self
            .boundary
            .iter()
            .any(|&i| is_dominated(&p, &self.records[i].perf));
        if !dominated {
            let records = &self.records;
            self.boundary.retain(|&i| !is_dominated(&records[i].perf, &p));
            self.boundary.push(index);
        }
        Ok(())
    }

    pub fn extend(&mut self, records: impl IntoIterator<Item = EvaluatedRecord>) -> Result<()> {
        for r in records {
            self.push(r)?;
        }
        Ok(())
    }

    pub fn hypervolume(&self, p_max: f64) -> f64 {
        hypervolume_2d(&self.boundary_perf(), p_max)
    }

    /// Pairs of records whose performance weakly dominates each other both
    /// ways (identical pairs).
    pub fn performance_duplicates(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.records.len() {
            for j in i + 1..self.records.len() {
                let (a, b) = (&self.records[i].perf, &self.records[j].perf);
                if weakly_dominates(a, b) && weakly_dominates(b, a) {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Front table with header `acc,par,code`, one row per boundary record,
/// sorted by parameter count.
pub fn export_front(records: &[&EvaluatedRecord]) -> String {
    let mut rows: Vec<&&EvaluatedRecord> = records.iter().collect();
    rows.sort_by(|a, b| {
        a.perf
            .par
            .total_cmp(&b.perf.par)
            .then(b.perf.acc.total_cmp(&a.perf.acc))
            .then_with(|| a.code.cmp(&b.code))
    });
    let mut out = String::from("acc,par,code\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.perf.acc, r.perf.par, r.code);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontRow {
    pub perf: PerformancePair,
    pub code: ArchitectureCode,
}

pub fn parse_front(text: &str, catalog: &CellCatalog) -> Result<Vec<FrontRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "acc,par,code")) => {}
        _ => return Err(Error::parse(Some(1), "expected header `acc,par,code`")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = Some(i + 1);
        let mut parts = line.splitn(3, ',');
        let (Some(a), Some(p), Some(c)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::parse(line_no, "expected three columns"));
        };
        let acc: f64 = a.parse().map_err(|_| Error::parse(line_no, format!("bad acc `{a}`")))?;
        let par: f64 = p.parse().map_err(|_| Error::parse(line_no, format!("bad par `{p}`")))?;
        let code = ArchitectureCode::parse(c, catalog).map_err(|e| Error::parse(line_no, e.to_string()))?;
        rows.push(FrontRow {
            perf: PerformancePair::new(acc, par).map_err(|e| Error::parse(line_no, e.to_string()))?,
            code,
        });
    }
    Ok(rows)
}
