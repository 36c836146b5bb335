use crate::gsolve::{GEquation, Residual, Scalar};
use crate::system::{ConservedQuantity, ExpectedRate, FineSystem, ProjectionMap};

/// Two nonlinearly coupled unit oscillators.
pub fn hamiltonian4() -> FineSystem {
    FineSystem::new("hamiltonian4", 4, |f, out| {
        let (x1, x2, x3, x4) = (f[0], f[1], f[2], f[3]);
        out[0] = x2;
        out[1] = -x1 * (1.0 + x3 * x3);
        out[2] = x4;
        out[3] = -x3 * (1.0 + x1 * x1);
    })
}

/// Retains `(x1, x2)`.
pub fn hamiltonian_projection() -> ProjectionMap {
    ProjectionMap::selection(4, &[0, 1]).expect("valid selection")
}

pub fn hamiltonian_energy_value(f: &[f64]) -> f64 {
    let (x1, x2, x3, x4) = (f[0], f[1], f[2], f[3]);
    0.5 * (x2 * x2 + x4 * x4) + 0.5 * (x1 * x1 + x3 * x3) + 0.5 * x1 * x1 * x3 * x3
}

pub fn hamiltonian_energy() -> ConservedQuantity {
    ConservedQuantity::new("energy", ExpectedRate::Zero, hamiltonian_energy_value)
}

/// Energy of the retained pair alone.
pub fn hamiltonian_partial_energy() -> ConservedQuantity {
    ConservedQuantity::new("partial-energy", ExpectedRate::Free, |f: &[f64]| {
        0.5 * f[1] * f[1] + 0.5 * f[0] * f[0]
    })
}

/// Residual pair for `(G1, G2) = (x3, x4)` over `(x1, x2)`.
#[derive(Debug, Clone, Copy)]
pub struct HamiltonianResidual;

impl Residual for HamiltonianResidual {
    fn coarse_dim(&self) -> usize {
        2
    }
    fn n_components(&self) -> usize {
        2
    }
    fn eval<S: Scalar>(&self, c: &[f64], g: &[S], grad: &[S], out: &mut [S]) {
        let (x1, x2) = (c[0], c[1]);
        let drift = (S::real(1.0) + g[0] * g[0]).scale(x1);
        out[0] = grad[0].scale(x2) - drift * grad[1] - g[1];
        out[1] = grad[2].scale(x2) - drift * grad[3] + g[0].scale(1.0 + x1 * x1);
    }
}

pub fn hamiltonian_geq() -> GEquation {
    GEquation::new("hamiltonian4", HamiltonianResidual)
}
