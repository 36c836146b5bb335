//! Sheet switching at block and prune boundaries.

use serde::{Deserialize, Serialize};

use super::{Atlas, BlockId, Selection, Sheet, SheetSolver};
use crate::dynamics::{coarse_rhs, detect_singularity, escape_singularity, EvolutionState, SingularityConfig};
use crate::error::{PlimError, Result};
use crate::integrate::Rk4Workspace;
use crate::system::{FineSystem, ProjectionMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransferReason {
    BlockEdge,
    PruneEdge,
    Singularity,
}

impl TransferReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            TransferReason::BlockEdge => "block-edge",
            TransferReason::PruneEdge => "prune-edge",
            TransferReason::Singularity => "singularity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "block-edge" => Some(TransferReason::BlockEdge),
            "prune-edge" => Some(TransferReason::PruneEdge),
            "singularity" => Some(TransferReason::Singularity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferConfig {
    /// Fine micro-step length.
    pub dt_micro: f64,
    /// Micro-steps allowed while no sheet is defined at the nudged state.
    pub max_micro_steps: usize,
    /// Micro-stepping never passes this time; the last step is shortened to land on it.
    pub deadline: f64,
    /// Candidates must stay defined for this long at their own coarse rate (or leave their block).
    pub lookahead: f64,
    pub tie_tol: f64,
    pub singularity: SingularityConfig,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            dt_micro: 1e-3,
            max_micro_steps: 10_000,
            deadline: f64::INFINITY,
            lookahead: 1e-3,
            tie_tol: 1e-9,
            singularity: SingularityConfig::default(),
        }
    }
}

/// Where sheets come from during an evolution.
pub trait SheetSource {
    fn atlas(&self) -> &Atlas;
    fn can_supplement(&self) -> bool;
    fn pick(
        &mut self,
        block: &BlockId,
        proj: &ProjectionMap,
        f: &[f64],
        hint: Option<(&FineSystem, &[f64])>,
        tie_tol: f64,
        filter: &dyn Fn(&Sheet, &[f64]) -> bool,
    ) -> Result<Selection>;
}

impl SheetSource for &Atlas {
    fn atlas(&self) -> &Atlas {
        self
    }

    fn can_supplement(&self) -> bool {
        false
    }

    fn pick(
        &mut self,
        block: &BlockId,
        proj: &ProjectionMap,
        f: &[f64],
        hint: Option<(&FineSystem, &[f64])>,
        tie_tol: f64,
        filter: &dyn Fn(&Sheet, &[f64]) -> bool,
    ) -> Result<Selection> {
        self.select_sheet(block, proj, f, hint, tie_tol, filter)
    }
}

/// An atlas that solves a new sheet whenever the nearest one is too far away.
pub struct Supplemented<'a> {
    pub atlas: &'a mut Atlas,
    pub solver: &'a dyn SheetSolver,
    pub threshold: f64,
    pub created: usize,
}

impl SheetSource for Supplemented<'_> {
    fn atlas(&self) -> &Atlas {
        self.atlas
    }

    fn can_supplement(&self) -> bool {
        true
    }

    fn pick(
        &mut self,
        block: &BlockId,
        proj: &ProjectionMap,
        f: &[f64],
        hint: Option<(&FineSystem, &[f64])>,
        tie_tol: f64,
        filter: &dyn Fn(&Sheet, &[f64]) -> bool,
    ) -> Result<Selection> {
        match self.atlas.select_sheet(block, proj, f, hint, tie_tol, filter) {
            Ok(sel) if sel.distance <= self.threshold => return Ok(sel),
            Ok(_) | Err(PlimError::NoCandidate { .. }) => {}
            Err(e) => return Err(e),
        }
        let b = self.atlas.block(block)?;
        let anchor = super::Anchor {
            coarse: proj.apply(f),
            data: proj.eliminated_of(f),
        };
        let sheet = match self.solver.solve(&b.grid, &anchor) {
            Ok(s) => s,
            Err(PlimError::SolverFailed { best, .. }) => *best,
            Err(e) => return Err(e),
        };
        // A sheet that cannot carry the state onward is not stored; the caller keeps stepping.
        if !filter(&sheet, &anchor.coarse) {
            return Err(PlimError::NoCandidate { block: block.0.clone() });
        }
        let distance = sheet
            .eval(&anchor.coarse)
            .map(|g| dist(&g, &anchor.data))
            .unwrap_or(f64::INFINITY);
        let id = self.atlas.insert(block, sheet)?;
        self.created += 1;
        Ok(Selection { id, distance })
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// A transfer performed during a coarse run.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferEvent {
    pub t: f64,
    pub t_resume: f64,
    pub from_sheet: u64,
    pub to_sheet: u64,
    pub reason: TransferReason,
    pub distance: f64,
    pub micro_steps: usize,
}

fn viable(sys: &FineSystem, proj: &ProjectionMap, s: &Sheet, c: &[f64], lookahead: f64) -> bool {
    if lookahead <= 0.0 {
        return true;
    }
    let Ok(rate) = coarse_rhs(sys, proj, s, c) else {
        return false;
    };
    let ahead: Vec<f64> = c.iter().zip(&rate).map(|(x, r)| x + lookahead * r).collect();
    !s.grid.contains(&ahead) || s.is_defined_at(&ahead)
}

/// Moves the lifted state off a boundary with fine micro-steps and reselects a sheet.
pub fn interblock_transfer(
    source: &mut dyn SheetSource,
    sys: &FineSystem,
    proj: &ProjectionMap,
    state: &EvolutionState,
    reason: TransferReason,
    cfg: &TransferConfig,
) -> Result<(EvolutionState, TransferEvent)> {
    let mut f = state.lift.clone();
    if detect_singularity(sys, proj, &f, cfg.singularity.tol) {
        f = escape_singularity(sys, proj, &f, &cfg.singularity)?;
    }
    let mut ws = Rk4Workspace::new(sys.dim);
    let mut t = state.t;
    for k in 1..=cfg.max_micro_steps {
        let h = cfg.dt_micro.min(cfg.deadline - t);
        if !(h > 0.0) {
            break;
        }
        ws.step(&mut f, h, |s, out| sys.rhs_into(s, out));
        t = if h < cfg.dt_micro { cfg.deadline } else { t + h };
        if f.iter().any(|v| !v.is_finite()) {
            return Err(PlimError::IntegrationDiverged {
                t,
                last_state: state.lift.clone(),
            });
        }
        let c = proj.apply(&f);
        let block = source.atlas().block_of(&c)?;
        if !source.can_supplement() && source.atlas().block_len(&block) == 0 {
            return Err(PlimError::NoCandidate { block: block.0 });
        }
        let hint = sys.rhs(&f);
        let lookahead = cfg.lookahead;
        let filter = |s: &Sheet, c: &[f64]| viable(sys, proj, s, c, lookahead);
        match source.pick(&block, proj, &f, Some((sys, &hint)), cfg.tie_tol, &filter) {
            Ok(sel) => {
                let sheet = source.atlas().sheet(sel.id)?;
                let lift = proj.assemble(&c, &sheet.eval(&c)?);
                let event = TransferEvent {
                    t: state.t,
                    t_resume: t,
                    from_sheet: state.sheet_id,
                    to_sheet: sel.id,
                    reason,
                    distance: sel.distance,
                    micro_steps: k,
                };
                let next = EvolutionState {
                    coarse: c,
                    sheet_id: sel.id,
                    t,
                    lift,
                };
                return Ok((next, event));
            }
            Err(PlimError::NoCandidate { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    let c = proj.apply(&f);
    Err(PlimError::NoCandidate {
        block: source.atlas().block_of(&c).map(|b| b.0).unwrap_or_default(),
    })
}
