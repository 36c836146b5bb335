use crate::atlas::{Anchor, Sheet};
use crate::error::{PlimError, Result};
use crate::grid::Grid;
use crate::gsolve::{GEquation, Residual, Scalar};
use crate::system::{ConservedQuantity, ExpectedRate, FineSystem, ProjectionMap};

/// `x' = −y, y' = x`.
pub fn oscillator() -> FineSystem {
    FineSystem::new("oscillator", 2, |f, out| {
        out[0] = -f[1];
        out[1] = f[0];
    })
}

/// Retains `x`.
pub fn oscillator_projection() -> ProjectionMap {
    ProjectionMap::selection(2, &[0]).expect("valid selection")
}

pub fn oscillator_energy() -> ConservedQuantity {
    ConservedQuantity::new("energy", ExpectedRate::Zero, |f: &[f64]| {
        0.5 * (f[0] * f[0] + f[1] * f[1])
    })
}

/// `G G' + x`.
#[derive(Debug, Clone, Copy)]
pub struct OscillatorResidual;

impl Residual for OscillatorResidual {
    fn coarse_dim(&self) -> usize {
        1
    }
    fn n_components(&self) -> usize {
        1
    }
    fn eval<S: Scalar>(&self, c: &[f64], g: &[S], grad: &[S], out: &mut [S]) {
        out[0] = g[0] * grad[0] + S::real(c[0]);
    }
}

pub fn oscillator_geq() -> GEquation {
    GEquation::new("oscillator", OscillatorResidual)
}

/// Branch `±√(r₀² − x²)` through `(x0, y0)`, masked where `x² > r₀²`.
///
/// For `y0 = 0` the branch is the one the flow enters: lower for `x0 > 0`, upper for `x0 < 0`.
pub fn exact_oscillator_sheet(x0: f64, y0: f64, grid: &Grid) -> Result<Sheet> {
    if x0 == 0.0 && y0 == 0.0 {
        return Err(PlimError::precondition("the origin lies on no circle"));
    }
    if grid.dim() != 1 || !grid.contains(&[x0]) {
        return Err(PlimError::precondition("anchor must lie in the one-dimensional block"));
    }
    let r2 = x0 * x0 + y0 * y0;
    let sign = if y0 > 0.0 || (y0 == 0.0 && x0 < 0.0) { 1.0 } else { -1.0 };
    let anchor = Anchor {
        coarse: vec![x0],
        data: vec![y0],
    };
    let mut mask = Vec::with_capacity(grid.n_nodes());
    let mut s = Sheet::from_fn(grid.clone(), 1, anchor, |c| {
        let d = r2 - c[0] * c[0];
        let tol = 1e-12 * r2;
        mask.push(d < -tol);
        vec![sign * d.max(0.0).sqrt()]
    });
    s.prune_mask = mask;
    s.enforce_anchor();
    Ok(s)
}
