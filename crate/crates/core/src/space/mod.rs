//! The cell-stacking search space: catalog, codes and their vector form.

mod catalog;
mod code;
mod ops;
mod vector;

pub use catalog::{CellCatalog, CellEntry};
pub use code::{
    space_cardinality, ArchitectureCode, CellKind, Multiplier, PlacedCell, StructuralAttributes,
    C_INIT_OPTIONS, DEPTH_OPTIONS,
};
pub use ops::{active_fields, mutate_field, mutate_one, mutate_per_field, uniform_crossover, FIELD_COUNT};
pub use vector::{block_layout, decode, encode, vector_len, CodeVector};
