//! Least-squares finite-element solves of the lift-map equation on a block.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::sync::Arc;

use num_complex::Complex64;

use crate::anneal::{minimize, AnnealConfig, AnnealResult};
use crate::atlas::{Anchor, Sheet, SheetSolver};
use crate::error::{PlimError, Result};
use crate::grid::{gauss_unit, Grid};

/// Real or complex field values.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + Send
    + Sync
    + 'static
{
    fn from_parts(re: f64, im: f64) -> Self;
    fn real(x: f64) -> Self {
        Self::from_parts(x, 0.0)
    }
    fn zero() -> Self {
        Self::from_parts(0.0, 0.0)
    }
    fn norm_sqr(self) -> f64;
    fn scale(self, s: f64) -> Self {
        self * Self::real(s)
    }
}

impl Scalar for f64 {
    fn from_parts(re: f64, _im: f64) -> Self {
        re
    }
    fn norm_sqr(self) -> f64 {
        self * self
    }
}

impl Scalar for Complex64 {
    fn from_parts(re: f64, im: f64) -> Self {
        Complex64::new(re, im)
    }
    fn norm_sqr(self) -> f64 {
        Complex64::norm_sqr(&self)
    }
}

/// Pointwise residual of a lift-map equation.
///
/// `grad[comp * d + k]` is the derivative of component `comp` along coarse axis `k`.
pub trait Residual: Send + Sync {
    fn coarse_dim(&self) -> usize;
    fn n_components(&self) -> usize;
    fn eval<S: Scalar>(&self, c: &[f64], g: &[S], grad: &[S], out: &mut [S]);
}

trait ErasedResidual: Send + Sync {
    fn dims(&self) -> (usize, usize);
    fn real(&self, c: &[f64], g: &[f64], grad: &[f64], out: &mut [f64]);
    fn complex(&self, c: &[f64], g: &[Complex64], grad: &[Complex64], out: &mut [Complex64]);
}

impl<R: Residual> ErasedResidual for R {
    fn dims(&self) -> (usize, usize) {
        (self.coarse_dim(), self.n_components())
    }
    fn real(&self, c: &[f64], g: &[f64], grad: &[f64], out: &mut [f64]) {
        self.eval(c, g, grad, out)
    }
    fn complex(&self, c: &[f64], g: &[Complex64], grad: &[Complex64], out: &mut [Complex64]) {
        self.eval(c, g, grad, out)
    }
}

#[derive(Clone)]
pub struct GEquation {
    pub name: String,
    inner: Arc<dyn ErasedResidual>,
}

impl std::fmt::Debug for GEquation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (d, m) = self.inner.dims();
        write!(f, "GEquation({}, d={d}, n={m})", self.name)
    }
}

impl GEquation {
    pub fn new<R: Residual + 'static>(name: impl Into<String>, residual: R) -> Self {
        GEquation {
            name: name.into(),
            inner: Arc::new(residual),
        }
    }

    pub fn coarse_dim(&self) -> usize {
        self.inner.dims().0
    }

    pub fn n_components(&self) -> usize {
        self.inner.dims().1
    }

    pub fn eval_real(&self, c: &[f64], g: &[f64], grad: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_components()];
        self.inner.real(c, g, grad, &mut out);
        out
    }

    pub fn eval_complex(&self, c: &[f64], g: &[Complex64], grad: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.n_components()];
        self.inner.complex(c, g, grad, &mut out);
        out
    }
}

pub fn eval_residual(geq: &GEquation, c: &[f64], g: &[f64], grad: &[f64]) -> Vec<f64> {
    geq.eval_real(c, g, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMode {
    Real,
    Complex,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Dof {
    Free(usize),
    Fixed(f64),
}

struct QuadPoint {
    c: Vec<f64>,
    weight: f64,
    corners: Vec<usize>,
    n: Vec<f64>,
    dn: Vec<f64>,
}

/// One block's discrete least-squares problem.
pub struct LsfemProblem {
    pub grid: Grid,
    pub geq: GEquation,
    pub anchor: Anchor,
    pub mode: SolveMode,
    pub gauss_points: usize,
    /// Penalty weight when the anchor is off the mesh nodes.
    pub anchor_weight: Option<f64>,
    anchor_node: Option<usize>,
    /// Layout `[node][comp][re, im]`.
    layout: Vec<Dof>,
    n_free: usize,
    quad: Vec<QuadPoint>,
    anchor_corners: Vec<usize>,
    anchor_shape: Vec<f64>,
}

impl LsfemProblem {
    pub fn new(grid: Grid, geq: GEquation, anchor: Anchor, mode: SolveMode) -> Result<Self> {
        Self::with_quadrature(grid, geq, anchor, mode, 2)
    }

    pub fn with_quadrature(
        grid: Grid,
        geq: GEquation,
        anchor: Anchor,
        mode: SolveMode,
        gauss_points: usize,
    ) -> Result<Self> {
        let d = grid.dim();
        let m = geq.n_components();
        if geq.coarse_dim() != d {
            return Err(PlimError::precondition("equation and grid dimensions differ"));
        }
        if anchor.coarse.len() != d || anchor.data.len() != m {
            return Err(PlimError::precondition("anchor dimensions do not match the problem"));
        }
        let cell = grid
            .locate(&anchor.coarse)
            .ok_or_else(|| PlimError::precondition("anchor lies outside the block"))?;
        let anchor_node = grid.node_at(&anchor.coarse);
        let parts = if mode == SolveMode::Complex { 2 } else { 1 };
        let mut layout = Vec::with_capacity(grid.n_nodes() * m * 2);
        let mut n_free = 0;
        for node in 0..grid.n_nodes() {
            for comp in 0..m {
                for part in 0..2 {
                    let dof = if Some(node) == anchor_node {
                        Dof::Fixed(if part == 0 { anchor.data[comp] } else { 0.0 })
                    } else if part < parts {
                        n_free += 1;
                        Dof::Free(n_free - 1)
                    } else {
                        Dof::Fixed(0.0)
                    };
                    layout.push(dof);
                }
            }
        }
        let (gp, gw) = gauss_unit(gauss_points);
        let nq = gp.len().pow(d as u32);
        let mut quad = Vec::with_capacity(grid.n_elements() * nq);
        let vol = grid.element_volume();
        for e in 0..grid.n_elements() {
            let em = grid.element_multi(e);
            let lo = grid.element_lower(&em);
            let corners = grid.corner_nodes(&em);
            for q in 0..nq {
                let mut local = Vec::with_capacity(d);
                let mut w = vol;
                let mut r = q;
                for _ in 0..d {
                    let i = r % gp.len();
                    r /= gp.len();
                    local.push(gp[i]);
                    w *= gw[i];
                }
                let c: Vec<f64> = (0..d).map(|k| lo[k] + local[k] * grid.spacing(k)).collect();
                let mut n = vec![0.0; corners.len()];
                let mut dn = vec![0.0; corners.len() * d];
                grid.shape(&local, &mut n);
                grid.shape_grad(&local, &mut dn);
                quad.push(QuadPoint {
                    c,
                    weight: w,
                    corners: corners.clone(),
                    n,
                    dn,
                });
            }
        }
        let anchor_corners = grid.corner_nodes(&cell.element);
        let mut anchor_shape = vec![0.0; anchor_corners.len()];
        grid.shape(&cell.local, &mut anchor_shape);
        let anchor_weight = anchor_node.is_none().then(|| 1e4 * grid.volume());
        Ok(LsfemProblem {
            grid,
            geq,
            anchor,
            mode,
            gauss_points,
            anchor_weight,
            anchor_node,
            layout,
            n_free,
            quad,
            anchor_corners,
            anchor_shape,
        })
    }

    pub fn n_dofs(&self) -> usize {
        self.n_free
    }

    pub fn anchor_on_node(&self) -> bool {
        self.anchor_node.is_some()
    }

    pub fn n_components(&self) -> usize {
        self.geq.n_components()
    }

    /// Free dofs from nodal real and imaginary parts.
    pub fn dofs_from_nodal(&self, re: &[f64], im: Option<&[f64]>) -> Vec<f64> {
        let mut x = vec![0.0; self.n_free];
        for (slot, dof) in self.layout.iter().enumerate() {
            if let Dof::Free(i) = dof {
                let nodal = slot / 2;
                x[*i] = if slot % 2 == 0 {
                    re[nodal]
                } else {
                    im.map_or(0.0, |v| v[nodal])
                };
            }
        }
        x
    }

    /// Nodal real and imaginary parts from free dofs.
    pub fn nodal_from_dofs(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.layout.len() / 2;
        let mut re = vec![0.0; n];
        let mut im = vec![0.0; n];
        for (slot, dof) in self.layout.iter().enumerate() {
            let v = match dof {
                Dof::Free(i) => x[*i],
                Dof::Fixed(v) => *v,
            };
            if slot % 2 == 0 {
                re[slot / 2] = v;
            } else {
                im[slot / 2] = v;
            }
        }
        (re, im)
    }

    /// Reusable objective evaluator with its own scratch space.
    pub fn evaluator(&self) -> Evaluator<'_> {
        let m = self.n_components();
        let d = self.grid.dim();
        Evaluator {
            p: self,
            nodal: vec![Complex64::new(0.0, 0.0); self.layout.len() / 2],
            nodal_re: vec![0.0; self.layout.len() / 2],
            g: vec![Complex64::new(0.0, 0.0); m],
            grad: vec![Complex64::new(0.0, 0.0); m * d],
            out: vec![Complex64::new(0.0, 0.0); m],
            g_re: vec![0.0; m],
            grad_re: vec![0.0; m * d],
            out_re: vec![0.0; m],
        }
    }
}

pub struct Evaluator<'a> {
    p: &'a LsfemProblem,
    nodal: Vec<Complex64>,
    nodal_re: Vec<f64>,
    g: Vec<Complex64>,
    grad: Vec<Complex64>,
    out: Vec<Complex64>,
    g_re: Vec<f64>,
    grad_re: Vec<f64>,
    out_re: Vec<f64>,
}

impl Evaluator<'_> {
    pub fn objective(&mut self, x: &[f64]) -> f64 {
        let p = self.p;
        match p.mode {
            SolveMode::Real => {
                for (slot, dof) in p.layout.iter().enumerate().step_by(2) {
                    self.nodal_re[slot / 2] = match dof {
                        Dof::Free(i) => x[*i],
                        Dof::Fixed(v) => *v,
                    };
                }
                let nodal = std::mem::take(&mut self.nodal_re);
                let mut g = std::mem::take(&mut self.g_re);
                let mut grad = std::mem::take(&mut self.grad_re);
                let mut out = std::mem::take(&mut self.out_re);
                let v = accumulate(p, &nodal, &mut g, &mut grad, &mut out, |c, g, gr, o| {
                    p.geq.inner.real(c, g, gr, o)
                });
                self.nodal_re = nodal;
                self.g_re = g;
                self.grad_re = grad;
                self.out_re = out;
                v
            }
            SolveMode::Complex => {
                for (k, pair) in p.layout.chunks(2).enumerate() {
                    let get = |d: &Dof| match d {
                        Dof::Free(i) => x[*i],
                        Dof::Fixed(v) => *v,
                    };
                    self.nodal[k] = Complex64::new(get(&pair[0]), get(&pair[1]));
                }
                let nodal = std::mem::take(&mut self.nodal);
                let mut g = std::mem::take(&mut self.g);
                let mut grad = std::mem::take(&mut self.grad);
                let mut out = std::mem::take(&mut self.out);
                let v = accumulate(p, &nodal, &mut g, &mut grad, &mut out, |c, g, gr, o| {
                    p.geq.inner.complex(c, g, gr, o)
                });
                self.nodal = nodal;
                self.g = g;
                self.grad = grad;
                self.out = out;
                v
            }
        }
    }
}

fn accumulate<S: Scalar>(
    p: &LsfemProblem,
    nodal: &[S],
    g: &mut [S],
    grad: &mut [S],
    out: &mut [S],
    residual: impl Fn(&[f64], &[S], &[S], &mut [S]),
) -> f64 {
    let m = g.len();
    let d = p.grid.dim();
    let mut total = 0.0;
    for q in &p.quad {
        g.iter_mut().for_each(|v| *v = S::zero());
        grad.iter_mut().for_each(|v| *v = S::zero());
        for (ci, &node) in q.corners.iter().enumerate() {
            let base = node * m;
            for comp in 0..m {
                let v = nodal[base + comp];
                g[comp] += v.scale(q.n[ci]);
                for k in 0..d {
                    grad[comp * d + k] += v.scale(q.dn[ci * d + k]);
                }
            }
        }
        residual(&q.c, g, grad, out);
        total += q.weight * out.iter().map(|r| r.norm_sqr()).sum::<f64>();
    }
    if let Some(w) = p.anchor_weight {
        for comp in 0..m {
            let mut v = S::zero();
            for (ci, &node) in p.anchor_corners.iter().enumerate() {
                v += nodal[node * m + comp].scale(p.anchor_shape[ci]);
            }
            total += w * (v - S::real(p.anchor.data[comp])).norm_sqr();
        }
    }
    total
}

/// Least-squares residual of a real nodal field, skipping elements that touch a masked node.
pub fn field_objective(grid: &Grid, geq: &GEquation, values: &[f64], mask: &[bool], gauss_points: usize) -> f64 {
    let d = grid.dim();
    let m = geq.n_components();
    let (gp, gw) = gauss_unit(gauss_points);
    let nc = grid.n_corners();
    let mut n = vec![0.0; nc];
    let mut dn = vec![0.0; nc * d];
    let mut g = vec![0.0; m];
    let mut grad = vec![0.0; m * d];
    let mut total = 0.0;
    let n_q = gp.len().pow(d as u32);
    for e in 0..grid.n_elements() {
        let em = grid.element_multi(e);
        let corners = grid.corner_nodes(&em);
        if corners.iter().any(|&c| mask[c]) {
            continue;
        }
        let lower = grid.element_lower(&em);
        for q in 0..n_q {
            let mut local = vec![0.0; d];
            let mut w = grid.element_volume();
            let mut rest = q;
            for k in 0..d {
                let i = rest % gp.len();
                rest /= gp.len();
                local[k] = gp[i];
                w *= gw[i];
            }
            grid.shape(&local, &mut n);
            grid.shape_grad(&local, &mut dn);
            g.iter_mut().for_each(|v| *v = 0.0);
            grad.iter_mut().for_each(|v| *v = 0.0);
            for (ci, &node) in corners.iter().enumerate() {
                for comp in 0..m {
                    let v = values[node * m + comp];
                    g[comp] += v * n[ci];
                    for k in 0..d {
                        grad[comp * d + k] += v * dn[ci * d + k];
                    }
                }
            }
            let c: Vec<f64> = (0..d).map(|k| lower[k] + local[k] * grid.spacing(k)).collect();
            let r = geq.eval_real(&c, &g, &grad);
            total += w * r.iter().map(|x| x * x).sum::<f64>();
        }
    }
    total
}

/// Objective at the given free dofs.
pub fn assemble_objective(problem: &LsfemProblem, dofs: &[f64]) -> f64 {
    problem.evaluator().objective(dofs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GsolveConfig {
    pub anneal: AnnealConfig,
    /// Defaults to `1e-4 × block volume`.
    pub accept_threshold: Option<f64>,
    pub prune_tol: f64,
}

impl Default for GsolveConfig {
    fn default() -> Self {
        GsolveConfig {
            anneal: AnnealConfig::default(),
            accept_threshold: None,
            prune_tol: 0.1,
        }
    }
}

/// Solution of one block problem, with the annealing record.
pub struct SolveReport {
    pub sheet: Sheet,
    pub anneal: AnnealResult,
}

/// Minimizes the objective and returns the resulting sheet.
pub fn solve_sheet(problem: &LsfemProblem, cfg: &GsolveConfig) -> Result<Sheet> {
    solve_sheet_report(problem, cfg).map(|r| r.sheet)
}

pub fn solve_sheet_report(problem: &LsfemProblem, cfg: &GsolveConfig) -> Result<SolveReport> {
    let m = problem.n_components();
    let n_nodes = problem.grid.n_nodes();
    let re0: Vec<f64> = (0..n_nodes * m).map(|i| problem.anchor.data[i % m]).collect();
    let x0 = problem.dofs_from_nodal(&re0, None);
    let mut ev = problem.evaluator();
    let result = minimize(|x| ev.objective(x), &x0, &cfg.anneal)?;
    let (re, im) = problem.nodal_from_dofs(&result.x);
    let mut objective = result.f;
    let mut sheet = Sheet::new(problem.grid.clone(), m, re, problem.anchor.clone());
    if problem.anchor_weight.is_some() {
        sheet.enforce_anchor();
        let x = problem.dofs_from_nodal(&sheet.values, Some(&im));
        objective = problem.evaluator().objective(&x);
    }
    sheet.objective_value = objective;
    if problem.mode == SolveMode::Complex {
        sheet.imag = Some(im);
        prune_complex(&mut sheet, cfg.prune_tol);
    }
    let threshold = cfg.accept_threshold.unwrap_or(1e-4 * problem.grid.volume());
    if !(objective <= threshold) {
        return Err(PlimError::SolverFailed {
            objective,
            threshold,
            best: Box::new(sheet),
        });
    }
    Ok(SolveReport { sheet, anneal: result })
}

/// Masks nodes whose imaginary part exceeds `tol·max(1, |re|)` in any component.
pub fn prune_complex(sheet: &mut Sheet, tol: f64) {
    let m = sheet.n_components;
    let Some(im) = &sheet.imag else {
        sheet.prune_mask.iter_mut().for_each(|b| *b = false);
        sheet.degenerate = false;
        return;
    };
    for node in 0..sheet.grid.n_nodes() {
        sheet.prune_mask[node] = (0..m).any(|comp| {
            let k = node * m + comp;
            im[k].abs() > tol * sheet.values[k].abs().max(1.0)
        });
    }
    let g = &sheet.grid;
    sheet.degenerate =
        (0..g.n_elements()).all(|e| g.corner_nodes(&g.element_multi(e)).iter().any(|&n| sheet.prune_mask[n]));
}

/// Solves sheets on demand with a fixed equation and configuration.
pub struct LsfemSolver {
    pub geq: GEquation,
    pub mode: SolveMode,
    pub config: GsolveConfig,
}

impl SheetSolver for LsfemSolver {
    fn solve(&self, grid: &Grid, anchor: &Anchor) -> Result<Sheet> {
        let problem = LsfemProblem::new(grid.clone(), self.geq.clone(), anchor.clone(), self.mode)?;
        solve_sheet(&problem, &self.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `G' = ρ` style residual returning `dG/dx - slope`.
    struct Slope(f64);

    impl Residual for Slope {
        fn coarse_dim(&self) -> usize {
            1
        }
        fn n_components(&self) -> usize {
            1
        }
        fn eval<S: Scalar>(&self, _c: &[f64], _g: &[S], grad: &[S], out: &mut [S]) {
            out[0] = grad[0] - S::real(self.0);
        }
    }

    struct ConstantResidual(f64);

    impl Residual for ConstantResidual {
        fn coarse_dim(&self) -> usize {
            2
        }
        fn n_components(&self) -> usize {
            1
        }
        fn eval<S: Scalar>(&self, _c: &[f64], _g: &[S], _grad: &[S], out: &mut [S]) {
            out[0] = S::real(self.0);
        }
    }

    fn line(n: usize) -> Grid {
        Grid::new(vec![0.0], vec![1.0], vec![n]).unwrap()
    }

    #[test]
    fn constant_residual_integrates_to_area() {
        let g = Grid::new(vec![0.0, 0.0], vec![2.0, 3.0], vec![4, 5]).unwrap();
        let p = LsfemProblem::new(
            g,
            GEquation::new("const", ConstantResidual(0.7)),
            Anchor {
                coarse: vec![0.0, 0.0],
                data: vec![0.0],
            },
            SolveMode::Real,
        )
        .unwrap();
        let x = vec![0.0; p.n_dofs()];
        assert!((assemble_objective(&p, &x) - 0.49 * 6.0).abs() < 1e-12);
    }

    #[test]
    fn node_anchor_is_eliminated() {
        let p = LsfemProblem::new(
            line(5),
            GEquation::new("slope", Slope(1.0)),
            Anchor {
                coarse: vec![0.5],
                data: vec![2.0],
            },
            SolveMode::Real,
        )
        .unwrap();
        assert!(p.anchor_on_node());
        assert_eq!(p.n_dofs(), 4);
        let (re, _) = p.nodal_from_dofs(&[0.0; 4]);
        assert_eq!(re[2], 2.0);
    }

    #[test]
    fn exact_linear_solution_has_zero_objective() {
        let p = LsfemProblem::new(
            line(5),
            GEquation::new("slope", Slope(2.0)),
            Anchor {
                coarse: vec![0.3],
                data: vec![1.0],
            },
            SolveMode::Real,
        )
        .unwrap();
        assert!(!p.anchor_on_node());
        let re: Vec<f64> = (0..5).map(|i| 1.0 + 2.0 * (i as f64 * 0.25 - 0.3)).collect();
        let x = p.dofs_from_nodal(&re, None);
        assert!(assemble_objective(&p, &x) < 1e-24);
    }

    #[test]
    fn solve_recovers_manufactured_line_and_anchor() {
        let p = LsfemProblem::new(
            line(5),
            GEquation::new("slope", Slope(2.0)),
            Anchor {
                coarse: vec![0.3],
                data: vec![1.0],
            },
            SolveMode::Real,
        )
        .unwrap();
        let s = solve_sheet(&p, &GsolveConfig::default()).unwrap();
        assert!(s.objective_value <= 1e-10, "{}", s.objective_value);
        assert!(s.anchor_error() <= 1e-8);
        let v = s.eval(&[1.0]).unwrap()[0];
        assert!((v - 2.4).abs() < 1e-4);
    }

    #[test]
    fn prune_tolerance_semantics() {
        let g = line(3);
        let mut s = Sheet::new(
            g,
            1,
            vec![0.0, 0.0, 0.0],
            Anchor {
                coarse: vec![0.0],
                data: vec![0.0],
            },
        );
        s.imag = Some(vec![0.0, 0.5, 1e-4]);
        prune_complex(&mut s, 1e-2);
        assert_eq!(s.prune_mask, vec![false, true, false]);
        assert!(s.degenerate);
        prune_complex(&mut s, f64::INFINITY);
        assert_eq!(s.prune_mask, vec![false; 3]);
        assert!(!s.degenerate);
        s.imag = None;
        prune_complex(&mut s, 0.0);
        assert_eq!(s.prune_mask, vec![false; 3]);
    }

    #[test]
    fn complex_mode_doubles_dofs() {
        let p = LsfemProblem::new(
            line(4),
            GEquation::new("slope", Slope(1.0)),
            Anchor {
                coarse: vec![0.0],
                data: vec![0.0],
            },
            SolveMode::Complex,
        )
        .unwrap();
        assert_eq!(p.n_dofs(), 6);
    }

    #[test]
    fn rejects_anchor_outside_block() {
        let r = LsfemProblem::new(
            line(4),
            GEquation::new("slope", Slope(1.0)),
            Anchor {
                coarse: vec![2.0],
                data: vec![0.0],
            },
            SolveMode::Real,
        );
        assert!(r.is_err());
    }
}
