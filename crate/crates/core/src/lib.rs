//! Model reduction with parametrized locally invariant manifolds.
//!
//! A fine autonomous ODE is reduced to a few coarse variables. Over each block of
//! coarse space a family of sheets (finite-element lift maps) is precomputed; the
//! coarse system then evolves on the sheet nearest the current fine state and
//! switches sheets at block and prune boundaries.

pub mod analysis;
pub mod anneal;
pub mod atlas;
pub mod dynamics;
pub mod elastowave;
pub mod error;
pub mod grid;
pub mod gsolve;
pub mod integrate;
pub mod io;
pub mod system;
pub mod systems;

pub use atlas::{Anchor, Atlas, Block, BlockId, Sheet, SheetId};
pub use dynamics::{CoarseConfig, CoarseRun, EvolutionState, RunStatus};
pub use error::{PlimError, Result};
pub use grid::Grid;
pub use integrate::{fine_integrate, Trajectory};
pub use system::{ConservedQuantity, ExpectedRate, FineSystem, ProjectionMap};
