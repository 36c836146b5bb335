//! Closed coarse evolution on an atlas, lifting, and singular states.

use serde::{Deserialize, Serialize};

use crate::atlas::{
    interblock_transfer, Atlas, SheetId, SheetSolver, SheetSource, Supplemented, TransferConfig, TransferEvent,
    TransferReason,
};
use crate::error::{PlimError, Result};
use crate::integrate::Trajectory;
use crate::system::{ConservedQuantity, FineSystem, ProjectionMap};

/// Coarse state together with its active sheet and cached lift.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionState {
    pub coarse: Vec<f64>,
    pub sheet_id: SheetId,
    pub t: f64,
    pub lift: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularityConfig {
    pub tol: f64,
    pub eps: f64,
    pub max_retries: usize,
}

impl Default for SingularityConfig {
    fn default() -> Self {
        SingularityConfig {
            tol: 1e-8,
            eps: 1e-4,
            max_retries: 5,
        }
    }
}

/// `DΠ[H(G(c))]` on the given sheet.
pub fn coarse_rhs(sys: &FineSystem, proj: &ProjectionMap, sheet: &crate::atlas::Sheet, c: &[f64]) -> Result<Vec<f64>> {
    let g = sheet.eval(c)?;
    let f = proj.assemble(c, &g);
    Ok(proj.apply(&sys.rhs(&f)))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// True when the projected rate vanishes while the fine rate does not.
pub fn detect_singularity(sys: &FineSystem, proj: &ProjectionMap, f: &[f64], tol: f64) -> bool {
    let h = sys.rhs(f);
    let nh = norm(&h);
    nh > tol && norm(&proj.apply(&h)) <= tol * nh
}

/// `f + eps·H(f)`; `f` must not be a fixed point.
pub fn perturb_singular(sys: &FineSystem, f: &[f64], eps: f64) -> Result<Vec<f64>> {
    let h = sys.rhs(f);
    if norm(&h) == 0.0 {
        return Err(PlimError::precondition("cannot perturb a fixed point along H"));
    }
    Ok(f.iter().zip(&h).map(|(x, v)| x + eps * v).collect())
}

/// Repeats `perturb_singular` until the state is regular.
pub fn escape_singularity(
    sys: &FineSystem,
    proj: &ProjectionMap,
    f: &[f64],
    cfg: &SingularityConfig,
) -> Result<Vec<f64>> {
    let mut g = f.to_vec();
    for _ in 0..cfg.max_retries {
        g = perturb_singular(sys, &g, cfg.eps)?;
        if !detect_singularity(sys, proj, &g, cfg.tol) {
            return Ok(g);
        }
    }
    Err(PlimError::UnresolvableSingularity {
        retries: cfg.max_retries,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Boundary crossings are refined to this fraction of a step.
    pub bisection_tol: f64,
    pub transfer: TransferConfig,
    pub max_transfers: usize,
    /// Reject the initial selection beyond this distance (read-only atlases only).
    pub max_selection_distance: Option<f64>,
    /// Distance above which supplemented runs solve a new sheet.
    pub supplement_threshold: f64,
}

impl Default for CoarseConfig {
    fn default() -> Self {
        CoarseConfig {
            dt: 1e-3,
            t_end: 1.0,
            bisection_tol: 1e-8,
            transfer: TransferConfig::default(),
            max_transfers: 1_000_000,
            max_selection_distance: None,
            supplement_threshold: 0.5,
        }
    }
}

impl CoarseConfig {
    pub fn new(dt: f64, t_end: f64) -> Self {
        let mut c = CoarseConfig {
            dt,
            t_end,
            ..Default::default()
        };
        c.transfer.dt_micro = dt;
        c.transfer.lookahead = dt;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    OutOfDomain,
    NoCandidate,
    UnresolvableSingularity,
    SolverFailed,
    Diverged,
    TransferLimit,
}

/// Coarse trajectory with the active sheet per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseRun {
    pub times: Vec<f64>,
    pub coarse: Vec<Vec<f64>>,
    pub sheet_ids: Vec<SheetId>,
    pub transfers: Vec<TransferEvent>,
    pub status: RunStatus,
    pub message: Option<String>,
    pub initial_distance: f64,
    pub supplemented: usize,
}

impl CoarseRun {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn component(&self, k: usize) -> Vec<f64> {
        self.coarse.iter().map(|c| c[k]).collect()
    }

    pub fn final_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }
}

/// Evolves on a fixed atlas.
pub fn coarse_integrate(
    sys: &FineSystem,
    proj: &ProjectionMap,
    atlas: &Atlas,
    f0: &[f64],
    cfg: &CoarseConfig,
) -> Result<CoarseRun> {
    let mut src = atlas;
    run(sys, proj, &mut src, f0, cfg)
}

/// Evolves while adding a solved sheet whenever no stored sheet is close enough.
pub fn coarse_integrate_supplemented(
    sys: &FineSystem,
    proj: &ProjectionMap,
    atlas: &mut Atlas,
    solver: &dyn SheetSolver,
    f0: &[f64],
    cfg: &CoarseConfig,
) -> Result<CoarseRun> {
    let mut src = Supplemented {
        atlas,
        solver,
        threshold: cfg.supplement_threshold,
        created: 0,
    };
    let mut r = run(sys, proj, &mut src, f0, cfg)?;
    r.supplemented = src.created;
    Ok(r)
}

fn rk4_coarse(
    sys: &FineSystem,
    proj: &ProjectionMap,
    sheet: &crate::atlas::Sheet,
    c: &[f64],
    h: f64,
) -> Option<Vec<f64>> {
    let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + s * y).collect() };
    let k1 = coarse_rhs(sys, proj, sheet, c).ok()?;
    let k2 = coarse_rhs(sys, proj, sheet, &axpy(c, 0.5 * h, &k1)).ok()?;
    let k3 = coarse_rhs(sys, proj, sheet, &axpy(c, 0.5 * h, &k2)).ok()?;
    let k4 = coarse_rhs(sys, proj, sheet, &axpy(c, h, &k3)).ok()?;
    let next: Vec<f64> = (0..c.len())
        .map(|i| c[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    (next.iter().all(|v| v.is_finite()) && sheet.is_defined_at(&next)).then_some(next)
}

fn status_of(e: &PlimError) -> RunStatus {
    match e {
        PlimError::OutOfDomain { .. } => RunStatus::OutOfDomain,
        PlimError::NoCandidate { .. } | PlimError::NoSheet { .. } => RunStatus::NoCandidate,
        PlimError::UnresolvableSingularity { .. } => RunStatus::UnresolvableSingularity,
        PlimError::SolverFailed { .. } => RunStatus::SolverFailed,
        PlimError::IntegrationDiverged { .. } => RunStatus::Diverged,
        _ => RunStatus::NoCandidate,
    }
}

fn run(
    sys: &FineSystem,
    proj: &ProjectionMap,
    src: &mut dyn SheetSource,
    f0: &[f64],
    cfg: &CoarseConfig,
) -> Result<CoarseRun> {
    if !(cfg.dt > 0.0) || !(cfg.t_end >= 0.0) {
        return Err(PlimError::precondition("dt must be > 0 and T >= 0"));
    }
    if f0.len() != sys.dim || proj.dim_fine != sys.dim {
        return Err(PlimError::precondition(
            "initial state or projection has wrong dimension",
        ));
    }
    let c0 = proj.apply(f0);
    let block = src.atlas().block_of(&c0)?;
    let hint = sys.rhs(f0);
    let lookahead = cfg.transfer.lookahead;
    let filter = |s: &crate::atlas::Sheet, c: &[f64]| {
        let Ok(rate) = coarse_rhs(sys, proj, s, c) else {
            return false;
        };
        let ahead: Vec<f64> = c.iter().zip(&rate).map(|(x, r)| x + lookahead * r).collect();
        !s.grid.contains(&ahead) || s.is_defined_at(&ahead)
    };
    let sel = src.pick(&block, proj, f0, Some((sys, &hint)), cfg.transfer.tie_tol, &filter)?;
    if !src.can_supplement() {
        if let Some(th) = cfg.max_selection_distance {
            if sel.distance > th {
                return Err(PlimError::NoSheet {
                    distance: sel.distance,
                    threshold: th,
                });
            }
        }
    }
    let sheet = src.atlas().sheet(sel.id)?;
    let mut state = EvolutionState {
        lift: proj.assemble(&c0, &sheet.eval(&c0)?),
        coarse: c0,
        sheet_id: sel.id,
        t: 0.0,
    };
    let mut out = CoarseRun {
        times: vec![0.0],
        coarse: vec![state.coarse.clone()],
        sheet_ids: vec![state.sheet_id],
        transfers: Vec::new(),
        status: RunStatus::Completed,
        message: None,
        initial_distance: sel.distance,
        supplemented: 0,
    };
    let t_eps = 1e-12 * cfg.dt.max(cfg.t_end);
    while state.t < cfg.t_end - t_eps {
        let h = cfg.dt.min(cfg.t_end - state.t);
        let sheet = src.atlas().sheet(state.sheet_id)?;
        let mut reason = None;
        if let Some(next) = rk4_coarse(sys, proj, sheet, &state.coarse, h) {
            state.t += h;
            state.coarse = next;
        } else {
            let (mut lo, mut hi) = (0.0, 1.0);
            let mut best = None;
            while hi - lo > cfg.bisection_tol {
                let mid = 0.5 * (lo + hi);
                match rk4_coarse(sys, proj, sheet, &state.coarse, mid * h) {
                    Some(c) => {
                        lo = mid;
                        best = Some(c);
                    }
                    None => hi = mid,
                }
            }
            if let Some(c) = best {
                state.t += lo * h;
                state.coarse = c;
            }
            let edge = match coarse_rhs(sys, proj, sheet, &state.coarse) {
                Ok(rate) => {
                    let probe: Vec<f64> = state.coarse.iter().zip(&rate).map(|(x, r)| x + hi * h * r).collect();
                    if sheet.grid.contains(&probe) {
                        TransferReason::PruneEdge
                    } else {
                        TransferReason::BlockEdge
                    }
                }
                Err(_) => TransferReason::PruneEdge,
            };
            reason = Some(edge);
        }
        let sheet = src.atlas().sheet(state.sheet_id)?;
        match sheet.eval(&state.coarse) {
            Ok(g) => state.lift = proj.assemble(&state.coarse, &g),
            Err(e) => {
                out.status = status_of(&e);
                out.message = Some(e.to_string());
                return Ok(out);
            }
        }
        if out.times.last() != Some(&state.t) {
            out.times.push(state.t);
            out.coarse.push(state.coarse.clone());
            out.sheet_ids.push(state.sheet_id);
        }
        if reason.is_none() && detect_singularity(sys, proj, &state.lift, cfg.transfer.singularity.tol) {
            reason = Some(TransferReason::Singularity);
        }
        let Some(reason) = reason else { continue };
        if state.t >= cfg.t_end - t_eps {
            break;
        }
        if out.transfers.len() >= cfg.max_transfers {
            out.status = RunStatus::TransferLimit;
            return Ok(out);
        }
        let transfer = TransferConfig {
            deadline: cfg.t_end,
            ..cfg.transfer.clone()
        };
        match interblock_transfer(src, sys, proj, &state, reason, &transfer) {
            Ok((next, event)) => {
                state = next;
                out.transfers.push(event);
                out.times.push(state.t);
                out.coarse.push(state.coarse.clone());
                out.sheet_ids.push(state.sheet_id);
            }
            Err(e) => {
                out.status = status_of(&e);
                out.message = Some(e.to_string());
                return Ok(out);
            }
        }
    }
    Ok(out)
}

/// Lifts every sample through its sheet.
pub fn lift_trajectory(run: &CoarseRun, atlas: &Atlas, proj: &ProjectionMap) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(run.len());
    for (c, &id) in run.coarse.iter().zip(&run.sheet_ids) {
        let s = atlas.sheet(id)?;
        states.push(proj.assemble(c, &s.eval(c)?));
    }
    Ok(Trajectory {
        times: run.times.clone(),
        states,
    })
}

/// Values and finite-difference rates of a quantity along a coarse run.
#[derive(Debug, Clone, PartialEq)]
pub struct RateCheck {
    pub times: Vec<f64>,
    pub lifted_value: Vec<f64>,
    pub naive_value: Vec<f64>,
    pub lifted_rate: Vec<f64>,
    pub naive_rate: Vec<f64>,
}

/// Compares `S∘Γ` with `S` evaluated on retained coordinates and zero-filled eliminated ones.
pub fn conserved_rate_check(
    q: &ConservedQuantity,
    run: &CoarseRun,
    atlas: &Atlas,
    proj: &ProjectionMap,
) -> Result<RateCheck> {
    let lifted = lift_trajectory(run, atlas, proj)?;
    let zeros = vec![0.0; proj.n_eliminated()];
    let lifted_value: Vec<f64> = lifted.states.iter().map(|f| q.value(f)).collect();
    let naive_value: Vec<f64> = run.coarse.iter().map(|c| q.value(&proj.assemble(c, &zeros))).collect();
    let lifted_rate = segment_fd(&run.times, &lifted_value, &run.sheet_ids);
    let naive_rate = segment_fd(&run.times, &naive_value, &run.sheet_ids);
    Ok(RateCheck {
        times: run.times.clone(),
        lifted_value,
        naive_value,
        lifted_rate,
        naive_rate,
    })
}

/// Central differences within runs of equal sheet id, one-sided at segment ends.
fn segment_fd(t: &[f64], v: &[f64], ids: &[SheetId]) -> Vec<f64> {
    let n = t.len();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let prev = (i > 0 && ids[i - 1] == ids[i] && t[i] > t[i - 1]).then(|| i - 1);
        let next = (i + 1 < n && ids[i + 1] == ids[i] && t[i + 1] > t[i]).then(|| i + 1);
        out[i] = match (prev, next) {
            (Some(a), Some(b)) => (v[b] - v[a]) / (t[b] - t[a]),
            (Some(a), None) => (v[i] - v[a]) / (t[i] - t[a]),
            (None, Some(b)) => (v[b] - v[i]) / (t[b] - t[i]),
            (None, None) => 0.0,
        };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atlas::{Anchor, BlockId, Sheet};
    use crate::grid::Grid;

    fn osc() -> (FineSystem, ProjectionMap) {
        (
            FineSystem::new("osc", 2, |f, out| {
                out[0] = -f[1];
                out[1] = f[0];
            }),
            ProjectionMap::selection(2, &[0]).unwrap(),
        )
    }

    fn const_atlas(k: f64, lower: f64, upper: f64) -> Atlas {
        let mut a = Atlas::new(
            "osc",
            "select:2:0",
            vec![lower],
            vec![upper],
            vec![upper - lower],
            vec![5],
        )
        .unwrap();
        let b = BlockId(vec![0]);
        let g = a.block(&b).unwrap().grid;
        let anchor = Anchor {
            coarse: vec![lower],
            data: vec![k],
        };
        a.insert(&b, Sheet::from_fn(g, 1, anchor, |_| vec![k])).unwrap();
        a
    }

    #[test]
    fn coarse_rate_on_constant_sheet() {
        let (sys, p) = osc();
        let a = const_atlas(1.0, -1.0, 1.0);
        let r = coarse_rhs(&sys, &p, &a.sheets()[0], &[0.0]).unwrap();
        assert_eq!(r, vec![-1.0]);
    }

    #[test]
    fn runs_to_block_edge_then_stops_out_of_domain() {
        let (sys, p) = osc();
        let a = const_atlas(1.0, -1.0, 1.0);
        let run = coarse_integrate(&sys, &p, &a, &[0.5, 1.0], &CoarseConfig::new(0.01, 5.0)).unwrap();
        assert_eq!(run.status, RunStatus::OutOfDomain);
        let last = run.coarse.last().unwrap()[0];
        assert!((last + 1.0).abs() < 1e-6, "stopped at {last}");
        assert!((run.final_time() - 1.5).abs() < 1e-6);
    }

    #[test]
    fn lift_of_constant_sheet_is_constant() {
        let (sys, p) = osc();
        let a = const_atlas(0.0, -1.0, 1.0);
        let run = coarse_integrate(&sys, &p, &a, &[0.0, 0.0], &CoarseConfig::new(0.01, 1.0)).unwrap();
        let lifted = lift_trajectory(&run, &a, &p).unwrap();
        assert!(lifted.states.iter().all(|s| s == &vec![0.0, 0.0]));
        assert_eq!(run.status, RunStatus::Completed);
        assert_eq!(run.len(), 101);
    }

    #[test]
    fn missing_sheet_is_reported() {
        let (sys, p) = osc();
        let a = const_atlas(0.0, -1.0, 1.0);
        let mut run = coarse_integrate(&sys, &p, &a, &[0.3, 0.0], &CoarseConfig::new(0.1, 0.2)).unwrap();
        run.sheet_ids[1] = 99;
        assert!(matches!(
            lift_trajectory(&run, &a, &p),
            Err(PlimError::MissingSheet(99))
        ));
    }

    #[test]
    fn singularity_detection_and_escape() {
        let (sys, p) = osc();
        assert!(detect_singularity(&sys, &p, &[1.0, 0.0], 1e-8));
        assert!(!detect_singularity(&sys, &p, &[0.0, 0.0], 1e-8));
        assert!(!detect_singularity(&sys, &p, &[0.0, 1.0], 1e-8));
        let g = escape_singularity(&sys, &p, &[1.0, 0.0], &SingularityConfig::default()).unwrap();
        assert!(!detect_singularity(&sys, &p, &g, 1e-8));
        assert_eq!(perturb_singular(&sys, &[1.0, 0.0], 0.0).unwrap(), vec![1.0, 0.0]);
        assert!(perturb_singular(&sys, &[0.0, 0.0], 1e-4).is_err());
    }

    #[test]
    fn unresolvable_when_perturbation_stays_singular() {
        // H tangent to the singular set: x' = 0, y' = 1, coarse x.
        let sys = FineSystem::new("shear", 2, |_, out| {
            out[0] = 0.0;
            out[1] = 1.0;
        });
        let p = ProjectionMap::selection(2, &[0]).unwrap();
        let r = escape_singularity(&sys, &p, &[0.0, 0.0], &SingularityConfig::default());
        assert!(matches!(r, Err(PlimError::UnresolvableSingularity { retries: 5 })));
    }

    #[test]
    fn empty_neighbor_block_has_no_candidate() {
        let (sys, p) = osc();
        let mut a = Atlas::new("osc", "select:2:0", vec![-2.0], vec![2.0], vec![2.0], vec![3]).unwrap();
        let b = BlockId(vec![1]);
        let g: Grid = a.block(&b).unwrap().grid;
        let anchor = Anchor {
            coarse: vec![0.0],
            data: vec![1.0],
        };
        a.insert(&b, Sheet::from_fn(g, 1, anchor, |_| vec![1.0])).unwrap();
        let run = coarse_integrate(&sys, &p, &a, &[0.5, 1.0], &CoarseConfig::new(0.01, 2.0)).unwrap();
        assert_eq!(run.status, RunStatus::NoCandidate);
    }

    #[test]
    fn selection_threshold_rejects_far_start() {
        let (sys, p) = osc();
        let a = const_atlas(0.0, -1.0, 1.0);
        let mut cfg = CoarseConfig::new(0.01, 1.0);
        cfg.max_selection_distance = Some(0.1);
        let r = coarse_integrate(&sys, &p, &a, &[0.0, 1.0], &cfg);
        assert!(matches!(r, Err(PlimError::NoSheet { .. })));
    }

    #[test]
    fn segment_differences_do_not_cross_transfers() {
        let t = [0.0, 1.0, 2.0, 3.0];
        let v = [0.0, 1.0, 10.0, 11.0];
        let ids = [1, 1, 2, 2];
        assert_eq!(segment_fd(&t, &v, &ids), vec![1.0, 1.0, 1.0, 1.0]);
    }
}
