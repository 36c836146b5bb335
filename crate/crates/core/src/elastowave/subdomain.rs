use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::galerkin::{assemble_galerkin, BoundaryCondition, GalerkinOps};
use super::medium::Medium1D;
use crate::atlas::{Anchor, Sheet, SheetSolver};
use crate::error::{PlimError, Result};
use crate::grid::Grid;
use crate::gsolve::{field_objective, GEquation, Residual, Scalar};
use crate::integrate::Rk4Workspace;
use crate::system::{FineSystem, ProjectionMap};

/// A window `[x0, x0 + 2ε]` of the bar with its own Galerkin reduction.
#[derive(Debug, Clone)]
pub struct SubDomain {
    pub x0: f64,
    pub eps: f64,
    pub ops: GalerkinOps,
    pub psi: Vec<f64>,
    /// `σ̄ = stress · u` over the whole window.
    pub stress: Vec<f64>,
    pub omega_max: f64,
}

impl SubDomain {
    pub fn new(
        medium: &Medium1D,
        x0: f64,
        length: f64,
        nodes_per_wavelength: usize,
        bc: BoundaryCondition,
    ) -> Result<Self> {
        let ops = assemble_galerkin(medium, x0, x0 + length, nodes_per_wavelength, bc)?;
        Ok(Self::from_ops(ops))
    }

    pub fn from_ops(ops: GalerkinOps) -> Self {
        let psi = averaging_weights(&ops);
        let stress = ops
            .stress_weights(ops.a, ops.b)
            .expect("the full window is inside the mesh");
        let omega_max = ops.omega_max();
        SubDomain {
            x0: ops.a,
            eps: 0.5 * (ops.b - ops.a),
            ops,
            psi,
            stress,
            omega_max,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.ops.n_nodes()
    }

    pub fn fine_dim(&self) -> usize {
        2 * self.n_nodes()
    }

    pub fn fine_system(&self) -> FineSystem {
        self.ops.fine_system()
    }

    /// `Π(u, v) = (ψ·u, ψ·v)`.
    pub fn projection(&self) -> ProjectionMap {
        let n = self.n_nodes();
        let mut ru = vec![0.0; 2 * n];
        let mut rv = vec![0.0; 2 * n];
        ru[..n].copy_from_slice(&self.psi);
        rv[n..].copy_from_slice(&self.psi);
        ProjectionMap::weighted(2 * n, vec![ru, rv]).expect("two rows of the fine dimension")
    }

    pub fn coarse_of(&self, f: &[f64]) -> [f64; 2] {
        let n = self.n_nodes();
        [dot(&self.psi, &f[..n]), dot(&self.psi, &f[n..])]
    }

    /// `(ψ·v, ψ·(βu + d))` at a fine state.
    pub fn coarse_rate(&self, f: &[f64]) -> [f64; 2] {
        let n = self.n_nodes();
        let mut acc = vec![0.0; n];
        self.ops.acceleration(&f[..n], &mut acc);
        [dot(&self.psi, &f[n..]), dot(&self.psi, &acc)]
    }

    pub fn averaged_stress(&self, u: &[f64]) -> f64 {
        dot(&self.stress, u)
    }

    /// Unit-average rigid direction, restricted to the free nodes.
    fn rigid_direction(&self) -> Vec<f64> {
        let n = self.n_nodes();
        let fixed = matches!(self.ops.bc, BoundaryCondition::Dirichlet);
        let mut e: Vec<f64> = (0..n)
            .map(|i| if fixed && (i == 0 || i == n - 1) { 0.0 } else { 1.0 })
            .collect();
        let s = dot(&self.psi, &e);
        e.iter_mut().for_each(|x| *x /= s);
        e
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ψ_i = (1/2ε)∫φ_i` over the whole mesh.
pub fn averaging_weights(ops: &GalerkinOps) -> Vec<f64> {
    ops.window_weights(ops.a, ops.b)
        .expect("the full window is inside the mesh")
}

struct ElastoResidual {
    n: usize,
    psi: Vec<f64>,
    beta: Vec<f64>,
    offset: Vec<f64>,
}

impl Residual for ElastoResidual {
    fn coarse_dim(&self) -> usize {
        2
    }

    fn n_components(&self) -> usize {
        2 * self.n
    }

    fn eval<S: Scalar>(&self, _c: &[f64], g: &[S], grad: &[S], out: &mut [S]) {
        let n = self.n;
        let mut ru = S::zero();
        let mut rv = S::zero();
        for k in 0..n {
            let mut acc = S::real(self.offset[k]);
            let row = &self.beta[k * n..(k + 1) * n];
            for (m, b) in row.iter().enumerate() {
                if *b != 0.0 {
                    acc += g[m].scale(*b);
                }
            }
            // Stash the acceleration in the second half until the rates are known.
            out[n + k] = acc;
            ru += g[n + k].scale(self.psi[k]);
            rv += acc.scale(self.psi[k]);
        }
        for k in 0..n {
            out[k] = grad[2 * k] * ru + grad[2 * k + 1] * rv - g[n + k];
            let j = n + k;
            out[j] = grad[2 * j] * ru + grad[2 * j + 1] * rv - out[j];
        }
    }
}

/// Lift-map equation of a sub-domain, `2η` components over `(ū, v̄)`.
pub fn elastowave_geq(sd: &SubDomain) -> GEquation {
    let n = sd.n_nodes();
    GEquation::new(
        "elastowave",
        ElastoResidual {
            n,
            psi: sd.psi.clone(),
            beta: (0..n * n).map(|i| sd.ops.beta[(i / n, i % n)]).collect(),
            offset: sd.ops.offset.iter().copied().collect(),
        },
    )
}

/// `(ū̇, v̄̇)` through a sheet.
pub fn coarse_subdomain_rhs(sd: &SubDomain, sheet: &Sheet, ubar: f64, vbar: f64) -> Result<[f64; 2]> {
    let f = sheet.eval(&[ubar, vbar])?;
    Ok(sd.coarse_rate(&f))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarchConfig {
    /// Fraction of the RK4 stability limit `2.8/ω_max` used as the fine step.
    pub safety: f64,
    /// Characteristics per transverse mesh interval.
    pub refinement: usize,
    /// Transverse seed line extends this many block widths past each side.
    pub overhang: f64,
    /// Fine steps per characteristic and direction.
    pub max_steps: usize,
    /// Forces the time-like axis (0 = ū, 1 = v̄).
    pub time_like: Option<usize>,
    pub objective_gauss: usize,
}

impl Default for MarchConfig {
    fn default() -> Self {
        MarchConfig {
            safety: 0.5,
            refinement: 4,
            overhang: 0.5,
            max_steps: 200_000,
            time_like: None,
            objective_gauss: 2,
        }
    }
}

/// Sheet through a fine anchor state, built by explicit integration along the time-like
/// coarse axis.
///
/// The time-like axis `τ` is the one with the larger anchor rate relative to the block size.
/// The transverse line through the anchor is seeded with the rigid family (shift for `ū`,
/// uniform velocity for `v̄`); every seed is integrated with the fine generator and its
/// crossings of the `τ` node levels are interpolated onto the transverse nodes. A seed stops
/// at its first turning point in `τ`, so each sheet is single-valued; nodes no seed reaches
/// are masked.
pub fn solve_subdomain_manifold(sd: &SubDomain, anchor_state: &[f64], grid: &Grid, cfg: &MarchConfig) -> Result<Sheet> {
    let n = sd.n_nodes();
    let dim = 2 * n;
    if anchor_state.len() != dim || grid.dim() != 2 {
        return Err(PlimError::precondition(
            "anchor state or block does not match the sub-domain",
        ));
    }
    let cstar = sd.coarse_of(anchor_state);
    if !grid.contains(&cstar) {
        return Err(PlimError::precondition(format!(
            "anchor coarse point {cstar:?} lies outside the block"
        )));
    }
    let anchor = Anchor {
        coarse: cstar.to_vec(),
        data: anchor_state.to_vec(),
    };
    let rate = sd.coarse_rate(anchor_state);
    let extent = [grid.upper[0] - grid.lower[0], grid.upper[1] - grid.lower[1]];
    let speed = [rate[0].abs() / extent[0], rate[1].abs() / extent[1]];
    let sys = sd.fine_system();
    if speed[0] == 0.0 && speed[1] == 0.0 {
        if sys.rhs(anchor_state).iter().any(|x| *x != 0.0) {
            return Err(PlimError::precondition(
                "singular anchor: zero coarse rate with nonzero fine rate",
            ));
        }
        let mut sheet = Sheet::from_fn(grid.clone(), dim, anchor, |_| anchor_state.to_vec());
        sheet.objective_value = 0.0;
        return Ok(sheet);
    }
    let tau = cfg.time_like.unwrap_or(if speed[1] >= speed[0] { 1 } else { 0 });
    let s_ax = 1 - tau;
    let rigid = sd.rigid_direction();
    let mut e = vec![0.0; dim];
    if s_ax == 0 {
        e[..n].copy_from_slice(&rigid);
    } else {
        e[n..].copy_from_slice(&rigid);
    }

    let ns = grid.nodes[s_ax];
    let nt = grid.nodes[tau];
    let ds = grid.spacing(s_ax);
    let dtau = grid.spacing(tau);
    let levels: Vec<f64> = (0..nt).map(|j| grid.lower[tau] + j as f64 * dtau).collect();
    let s_nodes: Vec<f64> = (0..ns).map(|i| grid.lower[s_ax] + i as f64 * ds).collect();
    let over = cfg.overhang * extent[s_ax];
    let span = extent[s_ax] + 2.0 * over;
    let n_seeds = (span / ds * cfg.refinement.max(1) as f64).ceil() as usize + 1;
    let seed_step = span / (n_seeds - 1) as f64;
    let dt = cfg.safety * 2.8 / sd.omega_max.max(1e-300);

    // Crossings of every level, as (s, seed, state).
    let mut by_level: Vec<Vec<(f64, usize, Vec<f64>)>> = vec![Vec::new(); nt];
    for k in 0..n_seeds {
        let s0 = grid.lower[s_ax] - over + k as f64 * seed_step;
        let f0: Vec<f64> = (0..dim).map(|m| anchor_state[m] + (s0 - cstar[s_ax]) * e[m]).collect();
        for (j, s, f) in trace_levels(sd, &sys, &f0, tau, &levels, dt, cfg.max_steps) {
            by_level[j].push((s, k, f));
        }
    }

    let mut values = vec![0.0; grid.n_nodes() * dim];
    let mut mask = vec![true; grid.n_nodes()];
    // Only neighbouring seeds bracket a node; anything else is a fold or a hole.
    let max_gap = 2.0 * ds;
    for (j, mut hits) in by_level.into_iter().enumerate() {
        hits.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (i, &s) in s_nodes.iter().enumerate() {
            let node = if tau == 1 {
                grid.node_index(&[i, j])
            } else {
                grid.node_index(&[j, i])
            };
            let k = hits.partition_point(|h| h.0 < s);
            let (a, b) = if k < hits.len() && hits[k].0 == s {
                (k, k)
            } else if k > 0 && k < hits.len() {
                (k - 1, k)
            } else {
                continue;
            };
            let (sa, ka, fa) = (hits[a].0, hits[a].1, &hits[a].2);
            let (sb, kb, fb) = (hits[b].0, hits[b].1, &hits[b].2);
            if sb - sa > max_gap || ka.abs_diff(kb) > 1 {
                continue;
            }
            let w = if sb > sa { (s - sa) / (sb - sa) } else { 0.0 };
            let out = &mut values[node * dim..(node + 1) * dim];
            for m in 0..dim {
                out[m] = (1.0 - w) * fa[m] + w * fb[m];
            }
            mask[node] = false;
        }
    }

    let mut sheet = Sheet::new(grid.clone(), dim, values, anchor);
    sheet.prune_mask = mask;
    sheet.enforce_anchor();
    sheet.objective_value = field_objective(
        grid,
        &elastowave_geq(sd),
        &sheet.values,
        &sheet.prune_mask,
        cfg.objective_gauss,
    );
    Ok(sheet)
}

/// Follows one seed forward and backward in time up to its first turning point in the
/// coarse coordinate `tau`, returning `(level, s, state)` at each level crossing.
fn trace_levels(
    sd: &SubDomain,
    sys: &FineSystem,
    f0: &[f64],
    tau: usize,
    levels: &[f64],
    dt: f64,
    max_steps: usize,
) -> Vec<(usize, f64, Vec<f64>)> {
    let dim = f0.len();
    let s_ax = 1 - tau;
    let lo = levels[0];
    let hi = levels[levels.len() - 1];
    let spacing = if levels.len() > 1 { levels[1] - levels[0] } else { 1.0 };
    let mut hits = Vec::new();
    let c0 = sd.coarse_of(f0);
    if let Some(j) = levels.iter().position(|l| (l - c0[tau]).abs() <= 1e-12 * spacing) {
        hits.push((j, c0[s_ax], f0.to_vec()));
    }
    let mut ws = Rk4Workspace::new(dim);
    for dir in [1.0, -1.0] {
        let h = dir * dt;
        // Direction of travel in τ.
        let sign = (sd.coarse_rate(f0)[tau] * dir).signum();
        if sign == 0.0 {
            continue;
        }
        let mut f = f0.to_vec();
        let mut hf = sys.rhs(&f);
        let mut c = c0;
        for _ in 0..max_steps {
            let mut g = f.clone();
            ws.step(&mut g, h, |x, out| sys.rhs_into(x, out));
            if !g.iter().all(|x| x.is_finite()) {
                break;
            }
            let hg = sys.rhs(&g);
            let cg = sd.coarse_of(&g);
            let rg = sd.coarse_rate(&g)[tau] * dir;
            let (a, b) = (c[tau], cg[tau]);
            for (j, &l) in levels.iter().enumerate() {
                let inside = if sign > 0.0 { l > a && l <= b } else { l < a && l >= b };
                if inside && (l - c0[tau]).abs() > 1e-12 * spacing {
                    let state = hermite_crossing(sd, &f, &hf, &g, &hg, h, tau, l);
                    hits.push((j, sd.coarse_of(&state)[s_ax], state));
                }
            }
            if rg * sign <= 0.0 || (sign > 0.0 && cg[tau] > hi) || (sign < 0.0 && cg[tau] < lo) {
                break;
            }
            f = g;
            hf = hg;
            c = cg;
        }
    }
    hits
}

/// State where the cubic Hermite interpolant of one step crosses `tau == level`.
#[allow(clippy::too_many_arguments)]
fn hermite_crossing(
    sd: &SubDomain,
    f0: &[f64],
    h0: &[f64],
    f1: &[f64],
    h1: &[f64],
    h: f64,
    tau: usize,
    level: f64,
) -> Vec<f64> {
    let n = sd.n_nodes();
    let part = |x: &[f64]| {
        if tau == 0 {
            dot(&sd.psi, &x[..n])
        } else {
            dot(&sd.psi, &x[n..])
        }
    };
    let hermite = |t: f64, a: f64, b: f64, ma: f64, mb: f64| {
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * a + (t3 - 2.0 * t2 + t) * ma + (-2.0 * t3 + 3.0 * t2) * b + (t3 - t2) * mb
    };
    let (p0, p1, m0, m1) = (part(f0), part(f1), part(h0) * h, part(h1) * h);
    let up = p1 > p0;
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if (hermite(mid, p0, p1, m0, m1) < level) == up {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    (0..f0.len())
        .map(|k| hermite(t, f0[k], f1[k], h0[k] * h, h1[k] * h))
        .collect()
}

/// Sheet solver for atlas supplementation.
#[derive(Clone)]
pub struct SubdomainSolver {
    pub subdomain: Arc<SubDomain>,
    pub config: MarchConfig,
}

impl SheetSolver for SubdomainSolver {
    fn solve(&self, grid: &Grid, anchor: &Anchor) -> Result<Sheet> {
        solve_subdomain_manifold(&self.subdomain, &anchor.data, grid, &self.config)
    }
}
