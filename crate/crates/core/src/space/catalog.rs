use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of entries per list in the standard catalog.
pub const STANDARD_NORMAL_COUNT: usize = 10;
pub const STANDARD_REDUCTION_COUNT: usize = 10;
pub const STANDARD_POOLING_COUNT: usize = 3;

const DEFAULT_CATALOG: &str = include_str!("../../data/catalog.toml");

/// One opaque building block: a normal cell, a reduction cell, or a global
/// pooling operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub name: String,
    pub node_count: u32,
    pub edge_count: u32,
    pub param_coefficient: f64,
    pub flop_coefficient: f64,
}

impl CellEntry {
    pub fn new(name: &str, node_count: u32, edge_count: u32, param: f64, flop: f64) -> Self {
        CellEntry {
            name: name.to_string(),
            node_count,
            edge_count,
            param_coefficient: param,
            flop_coefficient: flop,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCatalog {
    pub normal_cells: Vec<CellEntry>,
    pub reduction_cells: Vec<CellEntry>,
    pub pooling_ops: Vec<CellEntry>,
}

impl CellCatalog {
    /// Builds a catalog of arbitrary size. Entry-level invariants are checked,
    /// list lengths are not; use [`CellCatalog::parse`] for the standard 10/10/3
    /// layout.
    pub fn new(
        normal_cells: Vec<CellEntry>,
        reduction_cells: Vec<CellEntry>,
        pooling_ops: Vec<CellEntry>,
    ) -> Result<Self> {
        let catalog = CellCatalog {
            normal_cells,
            reduction_cells,
            pooling_ops,
        };
        catalog.check_entries()?;
        Ok(catalog)
    }

    /// The catalog shipped with the crate.
    pub fn standard() -> Self {
        Self::parse(DEFAULT_CATALOG).expect("bundled catalog is well formed")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let catalog: CellCatalog = toml::from_str(text)?;
        catalog.check_entries()?;
        catalog.check_standard_counts()?;
        Ok(catalog)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("catalog serializes")
    }

    fn check_standard_counts(&self) -> Result<()> {
        let counts = [
            ("normal_cells", self.normal_cells.len(), STANDARD_NORMAL_COUNT),
            ("reduction_cells", self.reduction_cells.len(), STANDARD_REDUCTION_COUNT),
            ("pooling_ops", self.pooling_ops.len(), STANDARD_POOLING_COUNT),
        ];
        for (list, found, expected) in counts {
            if found != expected {
                return Err(Error::Catalog(format!(
                    "`{list}` must have exactly {expected} entries, found {found}"
                )));
            }
        }
        Ok(())
    }

    fn check_entries(&self) -> Result<()> {
        for (list, entries) in self.lists() {
            let mut seen = HashSet::new();
            for e in entries {
                if !seen.insert(e.name.as_str()) {
                    return Err(Error::Catalog(format!("duplicate name `{}` in `{list}`", e.name)));
                }
                if e.node_count < 2 || e.edge_count < 1 {
                    return Err(Error::Catalog(format!(
                        "`{}` in `{list}` needs node_count >= 2 and edge_count >= 1",
                        e.name
                    )));
                }
                let coefficients_ok = e.param_coefficient.is_finite()
                    && e.param_coefficient > 0.0
                    && e.flop_coefficient.is_finite()
                    && e.flop_coefficient > 0.0;
                if !coefficients_ok {
                    return Err(Error::Catalog(format!(
                        "`{}` in `{list}` has a non-positive cost coefficient",
                        e.name
                    )));
                }
            }
        }
        Ok(())
    }

    fn lists(&self) -> [(&'static str, &[CellEntry]); 3] {
        [
            ("normal_cells", &self.normal_cells),
            ("reduction_cells", &self.reduction_cells),
            ("pooling_ops", &self.pooling_ops),
        ]
    }

    pub fn normal_index(&self, name: &str) -> Option<usize> {
        self.normal_cells.iter().position(|e| e.name == name)
    }

    pub fn reduction_index(&self, name: &str) -> Option<usize> {
        self.reduction_cells.iter().position(|e| e.name == name)
    }

    pub fn pooling_index(&self, name: &str) -> Option<usize> {
        self.pooling_ops.iter().position(|e| e.name == name)
    }

    pub fn normal(&self, name: &str) -> Option<&CellEntry> {
        self.normal_cells.iter().find(|e| e.name == name)
    }

    pub fn reduction(&self, name: &str) -> Option<&CellEntry> {
        self.reduction_cells.iter().find(|e| e.name == name)
    }

    pub fn pooling(&self, name: &str) -> Option<&CellEntry> {
        self.pooling_ops.iter().find(|e| e.name == name)
    }
}
