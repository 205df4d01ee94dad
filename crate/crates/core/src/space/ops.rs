//! Field-level variation operators shared by the recommender top-up and the
//! evolutionary baseline.

use rand::Rng as _;

use super::catalog::CellCatalog;
use super::code::ArchitectureCode;
use super::vector::{block_layout, from_option_indices, option_indices};
use crate::rng::Rng;

/// Number of code fields (one per encoding block).
pub const FIELD_COUNT: usize = 15;
const CM4_FIELD: usize = 7;
const RC4_FIELD: usize = 13;

fn indices(code: &ArchitectureCode, catalog: &CellCatalog) -> [usize; FIELD_COUNT] {
    option_indices(code, catalog).expect("code drawn from this catalog")
}

/// Fields that change the network: inactive stage-4 fields are excluded.
pub fn active_fields(code: &ArchitectureCode) -> Vec<usize> {
    (0..FIELD_COUNT)
        .filter(|&f| code.rc4_active || (f != CM4_FIELD && f != RC4_FIELD))
        .collect()
}

/// Sets one field to a uniformly chosen different option.
pub fn mutate_field(code: &ArchitectureCode, field: usize, rng: &mut Rng, catalog: &CellCatalog) -> ArchitectureCode {
    let width = block_layout(catalog)[field];
    let mut picks = indices(code, catalog);
    if width > 1 {
        let shift = rng.random_range(1..width);
        picks[field] = (picks[field] + shift) % width;
    }
    from_option_indices(&picks, catalog)
}

/// Changes exactly one active field with more than one option.
pub fn mutate_one(code: &ArchitectureCode, rng: &mut Rng, catalog: &CellCatalog) -> ArchitectureCode {
    let layout = block_layout(catalog);
    let fields: Vec<usize> = active_fields(code).into_iter().filter(|&f| layout[f] > 1).collect();
    if fields.is_empty() {
        return code.clone();
    }
    let field = fields[rng.random_range(0..fields.len())];
    mutate_field(code, field, rng, catalog)
}

/// Independently re-draws each field with probability `rate`.
pub fn mutate_per_field(code: &ArchitectureCode, rate: f64, rng: &mut Rng, catalog: &CellCatalog) -> ArchitectureCode {
    let layout = block_layout(catalog);
    let mut picks = indices(code, catalog);
    for (field, &width) in layout.iter().enumerate() {
        if width > 1 && rng.random::<f64>() < rate {
            picks[field] = (picks[field] + rng.random_range(1..width)) % width;
        }
    }
    from_option_indices(&picks, catalog)
}

/// Field-wise uniform crossover.
pub fn uniform_crossover(
    a: &ArchitectureCode,
    b: &ArchitectureCode,
    rng: &mut Rng,
    catalog: &CellCatalog,
) -> ArchitectureCode {
    let (pa, pb) = (indices(a, catalog), indices(b, catalog));
    let mut child = pa;
    for f in 0..FIELD_COUNT {
        if rng.random::<bool>() {
            child[f] = pb[f];
        }
    }
    from_option_indices(&child, catalog)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn differing_fields(a: &ArchitectureCode, b: &ArchitectureCode, cat: &CellCatalog) -> usize {
        let (x, y) = (indices(a, cat), indices(b, cat));
        x.iter().zip(&y).filter(|(p, q)| p != q).count()
    }

    #[test]
    fn single_mutation_changes_one_field() {
        let cat = CellCatalog::standard();
        let mut rng = seeded(1);
        for _ in 0..500 {
            let code = ArchitectureCode::random(&mut rng, &cat);
            let child = mutate_one(&code, &mut rng, &cat);
            assert!(child.validate(&cat));
            assert_ne!(child, code);
            // toggling the stage-4 reduction also re-pins its fields
            let d = differing_fields(&code, &child, &cat);
            assert!(d == 1 || (d <= 3 && code.rc4_active != child.rc4_active), "{d}");
        }
    }

    #[test]
    fn zero_rate_mutation_is_identity() {
        let cat = CellCatalog::standard();
        let mut rng = seeded(2);
        let code = ArchitectureCode::random(&mut rng, &cat);
        assert_eq!(mutate_per_field(&code, 0.0, &mut rng, &cat), code);
    }

    #[test]
    fn crossover_takes_fields_from_parents() {
        let cat = CellCatalog::standard();
        let mut rng = seeded(3);
        for _ in 0..200 {
            let a = ArchitectureCode::random(&mut rng, &cat);
            let b = ArchitectureCode::random(&mut rng, &cat);
            let c = uniform_crossover(&a, &b, &mut rng, &cat);
            assert!(c.validate(&cat));
            assert_eq!(uniform_crossover(&a, &a, &mut rng, &cat), a);
            let (pa, pb, pc) = (indices(&a, &cat), indices(&b, &cat), indices(&c, &cat));
            for f in active_fields(&c) {
                assert!(pc[f] == pa[f] || pc[f] == pb[f]);
            }
        }
    }
}
