//! The three ODE test systems, named initial conditions and atlas generation.

mod hamiltonian;
mod lorenz;
mod oscillator;

use rayon::prelude::*;

pub use hamiltonian::{
    hamiltonian4, hamiltonian_energy, hamiltonian_energy_value, hamiltonian_geq, hamiltonian_partial_energy,
    hamiltonian_projection, HamiltonianResidual,
};
pub use lorenz::{lorenz, lorenz_geq, LorenzResidual, LorenzSpec};
pub use oscillator::{
    exact_oscillator_sheet, oscillator, oscillator_energy, oscillator_geq, oscillator_projection, OscillatorResidual,
};

use crate::anneal::StepScale;
use crate::atlas::{Anchor, Atlas, BlockId, Sheet};
use crate::error::{PlimError, Result};
use crate::gsolve::{solve_sheet, GEquation, GsolveConfig, LsfemProblem, SolveMode};
use crate::system::{ConservedQuantity, FineSystem, ProjectionMap};

/// Everything needed to reduce one named system.
#[derive(Debug, Clone)]
pub struct SystemBundle {
    pub system: FineSystem,
    pub projection: ProjectionMap,
    pub geq: GEquation,
    pub mode: SolveMode,
    pub energy: Option<ConservedQuantity>,
}

pub fn bundle(name: &str) -> Result<SystemBundle> {
    match name {
        "lorenz" => {
            let spec = LorenzSpec::default();
            Ok(SystemBundle {
                system: spec.system(),
                projection: spec.projection(),
                geq: spec.geq(),
                mode: SolveMode::Real,
                energy: None,
            })
        }
        "hamiltonian4" => Ok(SystemBundle {
            system: hamiltonian4(),
            projection: hamiltonian_projection(),
            geq: hamiltonian_geq(),
            mode: SolveMode::Real,
            energy: Some(hamiltonian_energy()),
        }),
        "oscillator" => Ok(SystemBundle {
            system: oscillator(),
            projection: oscillator_projection(),
            geq: oscillator_geq(),
            mode: SolveMode::Complex,
            energy: Some(oscillator_energy()),
        }),
        other => Err(PlimError::config(format!("unknown system '{other}'"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub system: &'static str,
    pub state: &'static [f64],
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "L1",
        system: "lorenz",
        state: &[0.0, 2.0, 8.0],
    },
    Preset {
        name: "L2",
        system: "lorenz",
        state: &[-10.0, 5.0, 23.0],
    },
    Preset {
        name: "L3",
        system: "lorenz",
        state: &[1.0, -5.0, 12.0],
    },
    Preset {
        name: "L4",
        system: "lorenz",
        state: &[10.0, 5.0, 13.0],
    },
    Preset {
        name: "H1",
        system: "hamiltonian4",
        state: &[-0.875, -0.875, 0.5, 0.5],
    },
    Preset {
        name: "H2",
        system: "hamiltonian4",
        state: &[1.125, 1.125, 0.5, 0.5],
    },
    Preset {
        name: "C-Ex1",
        system: "oscillator",
        state: &[-0.3, -1.8],
    },
    Preset {
        name: "C-Ex2",
        system: "oscillator",
        state: &[0.2, 1.0],
    },
];

pub fn preset(name: &str) -> Result<&'static Preset> {
    PRESETS
        .iter()
        .find(|p| p.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| PlimError::config(format!("unknown preset '{name}'")))
}

/// How anchors are placed in each block.
#[derive(Debug, Clone, PartialEq)]
pub enum AnchorPlan {
    /// Every block corner carries every listed eliminated-coordinate vector.
    Corners(Vec<Vec<f64>>),
    /// Explicit fine states; each lands in the block containing its projection.
    States(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtlasSpec {
    pub system: String,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub block_size: Vec<f64>,
    pub mesh: Vec<usize>,
    pub anchors: AnchorPlan,
    pub mode: SolveMode,
}

impl AtlasSpec {
    pub fn empty_atlas(&self, projection: &ProjectionMap) -> Result<Atlas> {
        Atlas::new(
            self.system.clone(),
            projection.describe(),
            self.lower.clone(),
            self.upper.clone(),
            self.block_size.clone(),
            self.mesh.clone(),
        )
    }

    pub fn sheets_per_block(&self) -> Option<usize> {
        match &self.anchors {
            AnchorPlan::Corners(v) => Some(v.len() << self.lower.len()),
            AnchorPlan::States(_) => None,
        }
    }
}

/// Data values `y0 + kΔy` for `k = 0..=n`.
pub fn lorenz_anchor_values(y0: f64, dy: f64, n: usize) -> Vec<Vec<f64>> {
    (0..=n).map(|k| vec![y0 + k as f64 * dy]).collect()
}

/// Sweeps each eliminated pair component over `values` while holding the other at `hold`.
pub fn axis_sweep_pairs(values: &[f64], hold: f64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for &v in values {
        for pair in [vec![v, hold], vec![hold, v]] {
            if !out.contains(&pair) {
                out.push(pair);
            }
        }
    }
    out
}

pub fn default_atlas_spec(system: &str) -> Result<AtlasSpec> {
    match system {
        "lorenz" => Ok(AtlasSpec {
            system: system.into(),
            lower: vec![-24.0, 0.0],
            upper: vec![24.0, 48.0],
            block_size: vec![4.0, 4.0],
            mesh: vec![6, 6],
            anchors: AnchorPlan::Corners(lorenz_anchor_values(-24.0, 1.0, 48)),
            mode: SolveMode::Real,
        }),
        "hamiltonian4" => {
            let values: Vec<f64> = (0..=8).map(|k| -1.0 + 0.25 * k as f64).collect();
            Ok(AtlasSpec {
                system: system.into(),
                lower: vec![-2.0, -2.0],
                upper: vec![2.0, 2.0],
                block_size: vec![1.0, 1.0],
                mesh: vec![6, 6],
                anchors: AnchorPlan::Corners(axis_sweep_pairs(&values, 0.0)),
                mode: SolveMode::Real,
            })
        }
        "oscillator" => Ok(AtlasSpec {
            system: system.into(),
            lower: vec![-3.0],
            upper: vec![3.0],
            block_size: vec![6.0],
            mesh: vec![25],
            anchors: AnchorPlan::States(vec![vec![0.0, 1.0], vec![0.0, -1.0], vec![0.0, 2.0]]),
            mode: SolveMode::Complex,
        }),
        "elastowave" => Err(PlimError::config(
            "elastowave stores are built by the elastowave module",
        )),
        other => Err(PlimError::config(format!("unknown system '{other}'"))),
    }
}

/// Annealing settings used for production atlases.
///
/// Lorenz sheets span tens of units across a block, so the simplex starts wide.
pub fn production_gsolve_config(system: &str) -> GsolveConfig {
    let mut cfg = GsolveConfig::default();
    if system == "lorenz" {
        cfg.anneal.iters_per_temp = 200;
        cfg.anneal.cooling = 0.8;
        cfg.anneal.step = StepScale::Uniform(10.0);
    }
    cfg
}

/// Blocks whose interior holds the projection of at least one state, in sorted order.
pub fn visited_blocks(atlas: &Atlas, projection: &ProjectionMap, states: &[Vec<f64>]) -> Result<Vec<BlockId>> {
    let mut ids = std::collections::BTreeSet::new();
    for f in states {
        ids.insert(atlas.block_of(&projection.apply(f))?);
    }
    Ok(ids.into_iter().collect())
}

/// `blocks` together with every block within `radius` steps of one of them (Chebyshev distance).
pub fn block_neighborhood(atlas: &Atlas, blocks: &[BlockId], radius: i64) -> Vec<BlockId> {
    let counts = atlas.block_counts();
    let mut ids = std::collections::BTreeSet::new();
    for b in blocks {
        let mut offset = vec![-radius; counts.len()];
        loop {
            let idx: Vec<i64> = b.0.iter().zip(&offset).map(|(i, o)| i + o).collect();
            if idx.iter().zip(counts).all(|(i, n)| (0..*n).contains(i)) {
                ids.insert(BlockId(idx));
            }
            let Some(k) = offset.iter().position(|o| *o < radius) else {
                break;
            };
            offset[k] += 1;
            offset[..k].iter_mut().for_each(|o| *o = -radius);
        }
    }
    ids.into_iter().collect()
}

/// One pending block solve.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorTask {
    pub block: BlockId,
    pub anchor: Anchor,
}

pub fn anchor_tasks(
    spec: &AtlasSpec,
    atlas: &Atlas,
    projection: &ProjectionMap,
    blocks: Option<&[BlockId]>,
) -> Result<Vec<AnchorTask>> {
    let ids: Vec<BlockId> = match blocks {
        Some(b) => b.to_vec(),
        None => atlas.block_ids(),
    };
    let mut tasks = Vec::new();
    match &spec.anchors {
        AnchorPlan::Corners(values) => {
            for id in &ids {
                let g = atlas.block(id)?.grid;
                let d = g.dim();
                for corner in 0..(1usize << d) {
                    let coarse: Vec<f64> = (0..d)
                        .map(|k| if (corner >> k) & 1 == 1 { g.upper[k] } else { g.lower[k] })
                        .collect();
                    for data in values {
                        tasks.push(AnchorTask {
                            block: id.clone(),
                            anchor: Anchor {
                                coarse: coarse.clone(),
                                data: data.clone(),
                            },
                        });
                    }
                }
            }
        }
        AnchorPlan::States(states) => {
            for f in states {
                if f.len() != projection.dim_fine {
                    return Err(PlimError::config("anchor state has wrong dimension"));
                }
                let coarse = projection.apply(f);
                let block = atlas.block_of(&coarse)?;
                if ids.contains(&block) {
                    tasks.push(AnchorTask {
                        block,
                        anchor: Anchor {
                            coarse,
                            data: projection.eliminated_of(f),
                        },
                    });
                }
            }
        }
    }
    Ok(tasks)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenerationReport {
    pub solved: usize,
    pub failed: usize,
    pub kept_failed: usize,
    pub objectives: Vec<f64>,
}

/// Solves all tasks (in parallel) and inserts the sheets.
///
/// Task `i` anneals with seed `base_seed + i`. Sheets above the acceptance
/// threshold are inserted only when `keep_failed` is set.
pub fn generate_atlas(
    atlas: &mut Atlas,
    geq: &GEquation,
    mode: SolveMode,
    tasks: &[AnchorTask],
    cfg: &GsolveConfig,
    keep_failed: bool,
) -> Result<GenerationReport> {
    let results: Vec<Result<(Sheet, bool)>> = tasks
        .par_iter()
        .enumerate()
        .map(|(i, task)| {
            let grid = atlas.block(&task.block)?.grid;
            let problem = LsfemProblem::new(grid, geq.clone(), task.anchor.clone(), mode)?;
            let mut c = cfg.clone();
            c.anneal.seed = cfg.anneal.seed.wrapping_add(i as u64);
            match solve_sheet(&problem, &c) {
                Ok(s) => Ok((s, true)),
                Err(PlimError::SolverFailed { best, .. }) => Ok((*best, false)),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut report = GenerationReport::default();
    for (task, r) in tasks.iter().zip(results) {
        let (sheet, ok) = r?;
        report.objectives.push(sheet.objective_value);
        if ok {
            report.solved += 1;
        } else {
            report.failed += 1;
            if !keep_failed {
                continue;
            }
            report.kept_failed += 1;
        }
        atlas.insert(&task.block, sheet)?;
    }
    Ok(report)
}
