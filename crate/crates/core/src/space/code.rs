use std::fmt;

use rand::Rng as _;

use super::catalog::{CellCatalog, CellEntry};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const DEPTH_OPTIONS: [u8; 4] = [4, 5, 6, 7];
pub const C_INIT_OPTIONS: [u32; 3] = [112, 128, 144];

/// Width growth ratio between consecutive stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Multiplier {
    X1_5,
    X2,
    X2_5,
}

impl Multiplier {
    pub const ALL: [Multiplier; 3] = [Multiplier::X1_5, Multiplier::X2, Multiplier::X2_5];

    /// The ratio in units of one half, so products stay in integer arithmetic.
    pub fn halves(self) -> u32 {
        match self {
            Multiplier::X1_5 => 3,
            Multiplier::X2 => 4,
            Multiplier::X2_5 => 5,
        }
    }

    pub fn value(self) -> f64 {
        f64::from(self.halves()) / 2.0
    }

    pub fn index(self) -> usize {
        self.halves() as usize - 3
    }

    pub fn from_value(v: f64) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.value() == v)
    }
}

impl fmt::Display for Multiplier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Multiplier::X1_5 => f.write_str("1.5"),
            Multiplier::X2 => f.write_str("2"),
            Multiplier::X2_5 => f.write_str("2.5"),
        }
    }
}

/// One point of the cell-stacking search space.
///
/// `depths` holds the normal-cell counts of stages 1-3, `width_multipliers`
/// the growth ratios of stages 2-4, `normal_cells` the cell name used by
/// stages 1-3 and `reduction_cells` the reduction cell opening stages 2-4.
/// The stage-4 reduction cell (and its multiplier) only exist when
/// `rc4_active` is set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ArchitectureCode {
    pub depths: [u8; 3],
    pub rc4_active: bool,
    pub c_init: u32,
    pub width_multipliers: [Multiplier; 3],
    pub normal_cells: [String; 3],
    pub reduction_cells: [String; 3],
    pub pooling: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Normal,
    Reduction,
}

/// A cell instance in the stacked network, with its channel widths.
#[derive(Debug, Clone, Copy)]
pub struct PlacedCell<'a> {
    pub kind: CellKind,
    pub entry: &'a CellEntry,
    /// 1-based stage index.
    pub stage: usize,
    pub c_in: u32,
    pub c_out: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuralAttributes {
    pub density: f64,
    pub layer_count: u32,
    pub reduction_count: u32,
}

impl ArchitectureCode {
    pub fn validate(&self, catalog: &CellCatalog) -> bool {
        let members = self.depths.iter().all(|d| DEPTH_OPTIONS.contains(d))
            && C_INIT_OPTIONS.contains(&self.c_init)
            && self.normal_cells.iter().all(|n| catalog.normal(n).is_some())
            && self.reduction_cells.iter().all(|n| catalog.reduction(n).is_some())
            && catalog.pooling(&self.pooling).is_some();
        members && self.is_canonical(catalog)
    }

    fn is_canonical(&self, catalog: &CellCatalog) -> bool {
        if self.rc4_active {
            return true;
        }
        self.width_multipliers[2] == Multiplier::X1_5
            && catalog
                .reduction_cells
                .first()
                .is_some_and(|e| e.name == self.reduction_cells[2])
    }

    /// Pins the inactive stage-4 fields so that equal networks compare equal.
    pub fn canonicalize(&mut self, catalog: &CellCatalog) {
        if !self.rc4_active {
            self.width_multipliers[2] = Multiplier::X1_5;
            if let Some(first) = catalog.reduction_cells.first() {
                self.reduction_cells[2] = first.name.clone();
            }
        }
    }

    pub fn canonical(mut self, catalog: &CellCatalog) -> Self {
        self.canonicalize(catalog);
        self
    }

    /// Output channels of stages 1-4. Without the stage-4 reduction the last
    /// stage keeps the stage-3 width.
    pub fn stage_widths(&self) -> [u32; 4] {
        let mut widths = [self.c_init; 4];
        // numerator / 2^k, kept exact in integers
        let mut numerator = u64::from(self.c_init);
        let mut denominator = 1u64;
        for s in 0..3 {
            if s == 2 && !self.rc4_active {
                widths[3] = widths[2];
                break;
            }
            numerator *= u64::from(self.width_multipliers[s].halves());
            denominator *= 2;
            assert!(
                numerator % denominator == 0,
                "non-integral width {numerator}/{denominator}"
            );
            widths[s + 1] = u32::try_from(numerator / denominator).expect("width fits in u32");
        }
        widths
    }

    /// Every cell of the network in forward order. Stage 1 holds L normal
    /// cells; stages 2 and 3 open with their reduction cell followed by M / N
    /// normal cells; stage 4 holds only its reduction cell when active.
    ///
    /// Panics if a cell name is missing from `catalog`.
    pub fn placed_cells<'a>(&self, catalog: &'a CellCatalog) -> Vec<PlacedCell<'a>> {
        let widths = self.stage_widths();
        let normal = |i: usize| {
            catalog
                .normal(&self.normal_cells[i])
                .unwrap_or_else(|| panic!("unknown normal cell `{}`", self.normal_cells[i]))
        };
        let reduction = |i: usize| {
            catalog
                .reduction(&self.reduction_cells[i])
                .unwrap_or_else(|| panic!("unknown reduction cell `{}`", self.reduction_cells[i]))
        };
        let mut cells = Vec::with_capacity(self.layer_count() as usize);
        for stage in 1..=4usize {
            if stage >= 2 {
                if stage == 4 && !self.rc4_active {
                    break;
                }
                cells.push(PlacedCell {
                    kind: CellKind::Reduction,
                    entry: reduction(stage - 2),
                    stage,
                    c_in: widths[stage - 2],
                    c_out: widths[stage - 1],
                });
            }
            if stage <= 3 {
                let entry = normal(stage - 1);
                let width = widths[stage - 1];
                for _ in 0..self.depths[stage - 1] {
                    cells.push(PlacedCell {
                        kind: CellKind::Normal,
                        entry,
                        stage,
                        c_in: width,
                        c_out: width,
                    });
                }
            }
        }
        cells
    }

    pub fn reduction_count(&self) -> u32 {
        2 + u32::from(self.rc4_active)
    }

    pub fn layer_count(&self) -> u32 {
        self.depths.iter().map(|&d| u32::from(d)).sum::<u32>() + self.reduction_count()
    }

    pub fn structural_attributes(&self, catalog: &CellCatalog) -> StructuralAttributes {
        let (edges, nodes) = self
            .placed_cells(catalog)
            .iter()
            .fold((0u64, 0u64), |(e, n), c| {
                (e + u64::from(c.entry.edge_count), n + u64::from(c.entry.node_count))
            });
        StructuralAttributes {
            density: edges as f64 / nodes as f64,
            layer_count: self.layer_count(),
            reduction_count: self.reduction_count(),
        }
    }

    /// Draws uniformly over canonical codes.
    ///
    /// Panics if any catalog list is empty.
    pub fn random(rng: &mut Rng, catalog: &CellCatalog) -> Self {
        assert!(
            !catalog.normal_cells.is_empty()
                && !catalog.reduction_cells.is_empty()
                && !catalog.pooling_ops.is_empty(),
            "cannot sample from an empty catalog"
        );
        // One inactive configuration per (cm4, rc4) active pair.
        let active_weight = (Multiplier::ALL.len() * catalog.reduction_cells.len()) as u64;
        let rc4_active = rng.random_range(0..active_weight + 1) < active_weight;
        let pick_depth = |rng: &mut Rng| DEPTH_OPTIONS[rng.random_range(0..DEPTH_OPTIONS.len())];
        let pick_cm = |rng: &mut Rng| Multiplier::ALL[rng.random_range(0..Multiplier::ALL.len())];
        let pick = |rng: &mut Rng, list: &[CellEntry]| list[rng.random_range(0..list.len())].name.clone();

        let depths = [pick_depth(rng), pick_depth(rng), pick_depth(rng)];
        let c_init = C_INIT_OPTIONS[rng.random_range(0..C_INIT_OPTIONS.len())];
        let width_multipliers = [pick_cm(rng), pick_cm(rng), pick_cm(rng)];
        let normal_cells = [
            pick(rng, &catalog.normal_cells),
            pick(rng, &catalog.normal_cells),
            pick(rng, &catalog.normal_cells),
        ];
        let reduction_cells = [
            pick(rng, &catalog.reduction_cells),
            pick(rng, &catalog.reduction_cells),
            pick(rng, &catalog.reduction_cells),
        ];
        let pooling = pick(rng, &catalog.pooling_ops);
        ArchitectureCode {
            depths,
            rc4_active,
            c_init,
            width_multipliers,
            normal_cells,
            reduction_cells,
            pooling,
        }
        .canonical(catalog)
    }

    /// Compact `field=value;...` form; canonical codes serialize uniquely.
    pub fn to_code_string(&self) -> String {
        self.to_string()
    }

    /// Parses the compact form. Inactive stage-4 fields may be omitted; the
    /// result is canonicalized.
    pub fn parse(text: &str, catalog: &CellCatalog) -> Result<Self> {
        let mut fields: Vec<(&str, &str)> = Vec::new();
        for part in text.trim().split(';').filter(|p| !p.trim().is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::parse(None, format!("expected `field=value`, got `{part}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if fields.iter().any(|(seen, _)| *seen == k) {
                return Err(Error::parse(None, format!("field `{k}` given twice")));
            }
            fields.push((k, v));
        }
        let get = |key: &str| -> Result<&str> {
            fields
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::parse(None, format!("missing field `{key}`")))
        };
        for (k, _) in &fields {
            if !FIELD_NAMES.contains(k) {
                return Err(Error::parse(None, format!("unknown field `{k}`")));
            }
        }

        let depth = |key: &str| -> Result<u8> {
            let v = get(key)?;
            v.parse::<u8>()
                .ok()
                .filter(|d| DEPTH_OPTIONS.contains(d))
                .ok_or_else(|| Error::field(key, v))
        };
        let rc4_raw = get("validity_rc4")?;
        let rc4_active = match rc4_raw {
            "true" | "1" => true,
            "false" | "0" => false,
            other => return Err(Error::field("validity_rc4", other)),
        };
        let c_init_raw = get("c_init")?;
        let c_init = c_init_raw
            .parse::<u32>()
            .ok()
            .filter(|c| C_INIT_OPTIONS.contains(c))
            .ok_or_else(|| Error::field("c_init", c_init_raw))?;
        let multiplier = |key: &str, optional: bool| -> Result<Multiplier> {
            match get(key) {
                Ok(v) => v
                    .parse::<f64>()
                    .ok()
                    .and_then(Multiplier::from_value)
                    .ok_or_else(|| Error::field(key, v)),
                Err(_) if optional => Ok(Multiplier::X1_5),
                Err(e) => Err(e),
            }
        };
        let cell = |key: &str, list: &[CellEntry], optional: bool| -> Result<String> {
            match get(key) {
                Ok(v) => list
                    .iter()
                    .find(|e| e.name == v)
                    .map(|e| e.name.clone())
                    .ok_or_else(|| Error::field(key, v)),
                Err(_) if optional && !list.is_empty() => Ok(list[0].name.clone()),
                Err(e) => Err(e),
            }
        };
        let code = ArchitectureCode {
            depths: [depth("L")?, depth("M")?, depth("N")?],
            rc4_active,
            c_init,
            width_multipliers: [
                multiplier("cm2", false)?,
                multiplier("cm3", false)?,
                multiplier("cm4", !rc4_active)?,
            ],
            normal_cells: [
                cell("nc1", &catalog.normal_cells, false)?,
                cell("nc2", &catalog.normal_cells, false)?,
                cell("nc3", &catalog.normal_cells, false)?,
            ],
            reduction_cells: [
                cell("rc2", &catalog.reduction_cells, false)?,
                cell("rc3", &catalog.reduction_cells, false)?,
                cell("rc4", &catalog.reduction_cells, !rc4_active)?,
            ],
            pooling: cell("gp", &catalog.pooling_ops, false)?,
        };
        Ok(code.canonical(catalog))
    }
}

const FIELD_NAMES: [&str; 15] = [
    "L", "M", "N", "validity_rc4", "c_init", "cm2", "cm3", "cm4", "nc1", "nc2", "nc3", "rc2", "rc3",
    "rc4", "gp",
];

impl fmt::Display for ArchitectureCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [l, m, n] = self.depths;
        let [cm2, cm3, cm4] = self.width_multipliers;
        let [nc1, nc2, nc3] = &self.normal_cells;
        let [rc2, rc3, rc4] = &self.reduction_cells;
        write!(
            f,
            "L={l};M={m};N={n};validity_rc4={};c_init={};cm2={cm2};cm3={cm3};cm4={cm4};\
             nc1={nc1};nc2={nc2};nc3={nc3};rc2={rc2};rc3={rc3};rc4={rc4};gp={}",
            self.rc4_active, self.c_init, self.pooling
        )
    }
}

/// Number of canonical codes over `catalog`.
pub fn space_cardinality(catalog: &CellCatalog) -> u128 {
    let d = DEPTH_OPTIONS.len() as u128;
    let c = C_INIT_OPTIONS.len() as u128;
    let cm = Multiplier::ALL.len() as u128;
    let nc = catalog.normal_cells.len() as u128;
    let rc = catalog.reduction_cells.len() as u128;
    let gp = catalog.pooling_ops.len() as u128;
    let shared = d.pow(3) * c * nc.pow(3) * gp;
    shared * cm.pow(3) * rc.pow(3) + shared * cm.pow(2) * rc.pow(2)
}
