//! Fixtures shared by the kernel benchmarks.

use plim_core::gsolve::{LsfemProblem, SolveMode};
use plim_core::systems::{bundle, SystemBundle};
use plim_core::{Anchor, Atlas, BlockId, Grid, Sheet};

/// The Lorenz block `[6, 10] × [22, 26]` anchored at `(8, 24)` with `y = 8`.
pub fn lorenz_block_problem() -> LsfemProblem {
    let b = bundle("lorenz").expect("lorenz is bundled");
    let grid = Grid::new(vec![6.0, 22.0], vec![10.0, 26.0], vec![6, 6]).expect("valid grid");
    let anchor = Anchor {
        coarse: vec![8.0, 24.0],
        data: vec![8.0],
    };
    LsfemProblem::new(grid, b.geq, anchor, SolveMode::Real).expect("valid problem")
}

/// A Lorenz atlas with `per_block` tilted sheets in each of the 144 default blocks.
pub fn lorenz_atlas(per_block: usize) -> (SystemBundle, Atlas) {
    let b = bundle("lorenz").expect("lorenz is bundled");
    let mut atlas = Atlas::new(
        "lorenz",
        b.projection.describe(),
        vec![-24.0, 0.0],
        vec![24.0, 48.0],
        vec![4.0, 4.0],
        vec![6, 6],
    )
    .expect("valid layout");
    for id in atlas.block_ids() {
        let grid = atlas.block(&id).expect("block exists").grid;
        for k in 0..per_block {
            let y0 = -24.0 + 48.0 * k as f64 / per_block.max(1) as f64;
            let anchor = Anchor {
                coarse: grid.lower.clone(),
                data: vec![y0],
            };
            let sheet = Sheet::from_fn(grid.clone(), 1, anchor, |c| vec![y0 + 0.1 * c[0]]);
            atlas.insert(&id, sheet).expect("sheet fits block");
        }
    }
    (b, atlas)
}

pub fn block_at(atlas: &Atlas, c: &[f64]) -> BlockId {
    atlas.block_of(c).expect("point inside the atlas")
}
