//! One-hot encoding of architecture codes.
//!
//! Field order and block widths: L, M, N (4 each), validity (2), c_init (3),
//! cm2..cm4 (3 each), nc1..nc3 and rc2..rc4 (one slot per catalog entry),
//! gp (one slot per pooling op). With the standard catalog that is 89 slots.

use super::catalog::CellCatalog;
use super::code::{ArchitectureCode, Multiplier, C_INIT_OPTIONS, DEPTH_OPTIONS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CodeVector(pub Vec<f64>);

impl CodeVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Block widths in field order for `catalog`.
pub fn block_layout(catalog: &CellCatalog) -> Vec<usize> {
    let nc = catalog.normal_cells.len();
    let rc = catalog.reduction_cells.len();
    let cm = Multiplier::ALL.len();
    vec![
        DEPTH_OPTIONS.len(),
        DEPTH_OPTIONS.len(),
        DEPTH_OPTIONS.len(),
        2,
        C_INIT_OPTIONS.len(),
        cm,
        cm,
        cm,
        nc,
        nc,
        nc,
        rc,
        rc,
        rc,
        catalog.pooling_ops.len(),
    ]
}

pub fn vector_len(catalog: &CellCatalog) -> usize {
    block_layout(catalog).iter().sum()
}

/// Option index chosen in each block, in field order.
pub(crate) fn option_indices(code: &ArchitectureCode, catalog: &CellCatalog) -> Result<[usize; 15]> {
    let depth = |d: u8, field: &str| {
        DEPTH_OPTIONS
            .iter()
            .position(|&o| o == d)
            .ok_or_else(|| Error::field(field, d))
    };
    let normal = |i: usize, field: &str| {
        catalog
            .normal_index(&code.normal_cells[i])
            .ok_or_else(|| Error::field(field, &code.normal_cells[i]))
    };
    let reduction = |i: usize, field: &str| {
        catalog
            .reduction_index(&code.reduction_cells[i])
            .ok_or_else(|| Error::field(field, &code.reduction_cells[i]))
    };
    Ok([
        depth(code.depths[0], "L")?,
        depth(code.depths[1], "M")?,
        depth(code.depths[2], "N")?,
        // slot 0 = active, slot 1 = inactive
        usize::from(!code.rc4_active),
        C_INIT_OPTIONS
            .iter()
            .position(|&c| c == code.c_init)
            .ok_or_else(|| Error::field("c_init", code.c_init))?,
        code.width_multipliers[0].index(),
        code.width_multipliers[1].index(),
        code.width_multipliers[2].index(),
        normal(0, "nc1")?,
        normal(1, "nc2")?,
        normal(2, "nc3")?,
        reduction(0, "rc2")?,
        reduction(1, "rc3")?,
        reduction(2, "rc4")?,
        catalog
            .pooling_index(&code.pooling)
            .ok_or_else(|| Error::field("gp", &code.pooling))?,
    ])
}

pub fn encode(code: &ArchitectureCode, catalog: &CellCatalog) -> Result<CodeVector> {
    let layout = block_layout(catalog);
    let indices = option_indices(code, catalog)?;
    let mut out = vec![0.0; layout.iter().sum()];
    let mut offset = 0;
    for (width, idx) in layout.iter().zip(indices) {
        out[offset + idx] = 1.0;
        offset += width;
    }
    Ok(CodeVector(out))
}

/// First index of the maximum; NaN entries never win.
fn argmax(block: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in block.iter().enumerate() {
        if v > block[best] || block[best].is_nan() && !v.is_nan() {
            best = i;
        }
    }
    best
}

/// Decodes a hard or relaxed vector by per-block argmax (ties to the lowest
/// option index), then canonicalizes.
pub fn decode(vector: &[f64], catalog: &CellCatalog) -> Result<ArchitectureCode> {
    let layout = block_layout(catalog);
    let expected: usize = layout.iter().sum();
    if vector.len() != expected {
        return Err(Error::ShapeMismatch {
            expected,
            found: vector.len(),
        });
    }
    if layout.contains(&0) {
        return Err(Error::Catalog("cannot decode against an empty option list".into()));
    }
    let mut picks = [0usize; 15];
    let mut offset = 0;
    for (slot, width) in layout.iter().enumerate() {
        picks[slot] = argmax(&vector[offset..offset + width]);
        offset += width;
    }
    Ok(from_option_indices(&picks, catalog))
}

/// Builds the canonical code with the given option index per field.
pub(crate) fn from_option_indices(picks: &[usize; 15], catalog: &CellCatalog) -> ArchitectureCode {
    ArchitectureCode {
        depths: [
            DEPTH_OPTIONS[picks[0]],
            DEPTH_OPTIONS[picks[1]],
            DEPTH_OPTIONS[picks[2]],
        ],
        rc4_active: picks[3] == 0,
        c_init: C_INIT_OPTIONS[picks[4]],
        width_multipliers: [
            Multiplier::ALL[picks[5]],
            Multiplier::ALL[picks[6]],
            Multiplier::ALL[picks[7]],
        ],
        normal_cells: [
            catalog.normal_cells[picks[8]].name.clone(),
            catalog.normal_cells[picks[9]].name.clone(),
            catalog.normal_cells[picks[10]].name.clone(),
        ],
        reduction_cells: [
            catalog.reduction_cells[picks[11]].name.clone(),
            catalog.reduction_cells[picks[12]].name.clone(),
            catalog.reduction_cells[picks[13]].name.clone(),
        ],
        pooling: catalog.pooling_ops[picks[14]].name.clone(),
    }
    .canonical(catalog)
}
