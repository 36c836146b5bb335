use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::medium::Medium1D;
use crate::error::{PlimError, Result};
use crate::grid::gauss_unit;
use crate::system::FineSystem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BoundaryCondition {
    /// Zero traction at both ends.
    Free,
    /// End displacements held at their initial values.
    Dirichlet,
    Periodic,
    /// Prescribed constant end accelerations.
    ConstantAcceleration {
        a_o: f64,
        a_l: f64,
    },
}

/// Linear-element Galerkin reduction `u' = v, v' = βu + d` of the wave equation on `[a, b]`.
#[derive(Debug, Clone)]
pub struct GalerkinOps {
    pub a: f64,
    pub b: f64,
    pub h: f64,
    pub coords: Vec<f64>,
    pub mass: DMatrix<f64>,
    /// `K_ij = −∫E φ_i' φ_j'`.
    pub stiffness: DMatrix<f64>,
    pub beta: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub bc: BoundaryCondition,
    pub medium: Medium1D,
    n_elements: usize,
}

impl GalerkinOps {
    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn n_elements(&self) -> usize {
        self.n_elements
    }

    /// Node pair of element `e`.
    pub fn element_nodes(&self, e: usize) -> (usize, usize) {
        let n = self.n_nodes();
        (e, (e + 1) % n)
    }

    /// `βu + d`.
    pub fn acceleration(&self, u: &[f64], out: &mut [f64]) {
        let n = self.n_nodes();
        for i in 0..n {
            let mut s = self.offset[i];
            for j in 0..n {
                s += self.beta[(i, j)] * u[j];
            }
            out[i] = s;
        }
    }

    /// Fine system on the state `(u, v)`.
    pub fn fine_system(&self) -> FineSystem {
        let ops = self.clone();
        let n = self.n_nodes();
        FineSystem::new("elastowave", 2 * n, move |f, out| {
            out[..n].copy_from_slice(&f[n..]);
            ops.acceleration(&f[..n], &mut out[n..]);
        })
        .with_param("rho", self.medium.rho)
        .with_param("e0", self.medium.e0)
        .with_param("lambda_e", self.medium.lambda_e)
    }

    /// Floating-point operations of one fine rhs evaluation (dense `βu + d`).
    pub fn rhs_flops(&self) -> u64 {
        let n = self.n_nodes() as u64;
        2 * n * n + n
    }

    /// Largest natural frequency `√max|eig(β)|`, by power iteration.
    pub fn omega_max(&self) -> f64 {
        let n = self.n_nodes();
        let mut x = DVector::from_fn(n, |i, _| 1.0 + ((i * 7919) % 13) as f64 / 13.0);
        let mut lambda = 0.0;
        for _ in 0..500 {
            let y = &self.beta * &x;
            let norm = y.norm();
            if norm == 0.0 {
                return 0.0;
            }
            let next = norm / x.norm();
            x = y / norm;
            if (next - lambda).abs() <= 1e-10 * next {
                lambda = next;
                break;
            }
            lambda = next;
        }
        lambda.sqrt()
    }

    /// Largest stable RK4 step `2.8/ω_max` scaled by `safety`.
    pub fn stable_dt(&self, safety: f64) -> f64 {
        safety * 2.8 / self.omega_max()
    }

    /// `(1/(x1−x0))∫ φ_i` over `[x0, x1]`.
    pub fn window_weights(&self, x0: f64, x1: f64) -> Result<Vec<f64>> {
        self.check_window(x0, x1)?;
        let mut w = vec![0.0; self.n_nodes()];
        for e in 0..self.n_elements {
            let (i, j) = self.element_nodes(e);
            let xl = self.a + e as f64 * self.h;
            let (lo, hi) = (x0.max(xl), x1.min(xl + self.h));
            if hi <= lo {
                continue;
            }
            // ∫ of the two hats over [lo, hi].
            let s0 = (lo - xl) / self.h;
            let s1 = (hi - xl) / self.h;
            let int_right = 0.5 * (s1 * s1 - s0 * s0) * self.h;
            let int_left = (hi - lo) - int_right;
            w[i] += int_left;
            w[j] += int_right;
        }
        let len = x1 - x0;
        w.iter_mut().for_each(|v| *v /= len);
        Ok(w)
    }

    /// Coefficients `s_i` with `σ̄ = s·u` over `[x0, x1]`: `s_i = (1/(x1−x0))∫E φ_i'`.
    pub fn stress_weights(&self, x0: f64, x1: f64) -> Result<Vec<f64>> {
        self.check_window(x0, x1)?;
        let (gp, gw) = gauss_unit(8);
        let mut w = vec![0.0; self.n_nodes()];
        for e in 0..self.n_elements {
            let (i, j) = self.element_nodes(e);
            let xl = self.a + e as f64 * self.h;
            let (lo, hi) = (x0.max(xl), x1.min(xl + self.h));
            if hi <= lo {
                continue;
            }
            let ie: f64 = gp
                .iter()
                .zip(&gw)
                .map(|(p, q)| q * (hi - lo) * self.medium.modulus(lo + p * (hi - lo)))
                .sum();
            w[i] -= ie / self.h;
            w[j] += ie / self.h;
        }
        let len = x1 - x0;
        w.iter_mut().for_each(|v| *v /= len);
        Ok(w)
    }

    fn check_window(&self, x0: f64, x1: f64) -> Result<()> {
        let tol = 1e-12 * (self.b - self.a);
        if !(x1 > x0) || x0 < self.a - tol || x1 > self.b + tol {
            return Err(PlimError::precondition(format!(
                "window [{x0}, {x1}] is not inside [{}, {}]",
                self.a, self.b
            )));
        }
        Ok(())
    }
}

/// Assembles mass and stiffness with an 8-point Gauss rule per element.
pub fn assemble_galerkin(
    medium: &Medium1D,
    a: f64,
    b: f64,
    nodes_per_wavelength: usize,
    bc: BoundaryCondition,
) -> Result<GalerkinOps> {
    if nodes_per_wavelength < 4 {
        return Err(PlimError::config("at least 4 nodes per wavelength are required"));
    }
    if !(b > a) {
        return Err(PlimError::config("empty interval"));
    }
    let n_el = ((b - a) / medium.lambda_e * nodes_per_wavelength as f64)
        .round()
        .max(1.0) as usize;
    assemble_elements(medium, a, b, n_el, bc)
}

/// As `assemble_galerkin` with an explicit element count.
pub fn assemble_elements(medium: &Medium1D, a: f64, b: f64, n_el: usize, bc: BoundaryCondition) -> Result<GalerkinOps> {
    let periodic = matches!(bc, BoundaryCondition::Periodic);
    let n = if periodic { n_el } else { n_el + 1 };
    if n < 2 || (periodic && n < 3) {
        return Err(PlimError::config("too few elements"));
    }
    let h = (b - a) / n_el as f64;
    let coords: Vec<f64> = (0..n).map(|i| a + i as f64 * h).collect();
    let mut mass = DMatrix::<f64>::zeros(n, n);
    let mut stiff = DMatrix::<f64>::zeros(n, n);
    let (gp, gw) = gauss_unit(8);
    for e in 0..n_el {
        let (i, j) = (e, (e + 1) % n);
        let xl = a + e as f64 * h;
        let ie: f64 = gp
            .iter()
            .zip(&gw)
            .map(|(p, w)| w * h * medium.modulus(xl + p * h))
            .sum();
        let k = ie / (h * h);
        stiff[(i, i)] -= k;
        stiff[(j, j)] -= k;
        stiff[(i, j)] += k;
        stiff[(j, i)] += k;
        let m = medium.rho * h / 6.0;
        mass[(i, i)] += 2.0 * m;
        mass[(j, j)] += 2.0 * m;
        mass[(i, j)] += m;
        mass[(j, i)] += m;
    }
    let mut beta = DMatrix::zeros(n, n);
    let mut offset = DVector::zeros(n);
    match bc {
        BoundaryCondition::Free | BoundaryCondition::Periodic => {
            let lu = mass.clone().lu();
            beta = lu
                .solve(&stiff)
                .ok_or_else(|| PlimError::precondition("singular mass matrix"))?;
        }
        BoundaryCondition::Dirichlet | BoundaryCondition::ConstantAcceleration { .. } => {
            let interior: Vec<usize> = (1..n - 1).collect();
            if !interior.is_empty() {
                let m_ii = mass.select_rows(&interior).select_columns(&interior);
                let lu = m_ii.lu();
                let k_i = stiff.select_rows(&interior);
                let b_i = lu
                    .solve(&k_i)
                    .ok_or_else(|| PlimError::precondition("singular mass matrix"))?;
                for (r, &i) in interior.iter().enumerate() {
                    beta.set_row(i, &b_i.row(r));
                }
                if let BoundaryCondition::ConstantAcceleration { a_o, a_l } = bc {
                    let mut rhs = DVector::<f64>::zeros(interior.len());
                    for (r, &i) in interior.iter().enumerate() {
                        rhs[r] = -(mass[(i, 0)] * a_o + mass[(i, n - 1)] * a_l);
                    }
                    let d_i = lu
                        .solve(&rhs)
                        .ok_or_else(|| PlimError::precondition("singular mass matrix"))?;
                    for (r, &i) in interior.iter().enumerate() {
                        offset[i] = d_i[r];
                    }
                    offset[0] = a_o;
                    offset[n - 1] = a_l;
                }
            } else if let BoundaryCondition::ConstantAcceleration { a_o, a_l } = bc {
                offset[0] = a_o;
                offset[n - 1] = a_l;
            }
        }
    }
    Ok(GalerkinOps {
        a,
        b,
        h,
        coords,
        mass,
        stiffness: stiff,
        beta,
        offset,
        bc,
        medium: *medium,
        n_elements: n_el,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elastowave::medium::ModulusLaw;

    fn constant(len: f64) -> Medium1D {
        Medium1D::new(len, 1.0, 2.0, 1.0, ModulusLaw::Constant)
    }

    #[test]
    fn hand_assembled_two_elements() {
        let ops = assemble_elements(&constant(1.0), 0.0, 1.0, 2, BoundaryCondition::Free).unwrap();
        let h = 0.5;
        assert!((ops.stiffness[(1, 1)] + 2.0 * 2.0 / h).abs() < 1e-12);
        assert!((ops.stiffness[(0, 1)] - 2.0 / h).abs() < 1e-12);
        assert!((ops.mass.sum() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rigid_mode_is_stiffness_free() {
        let m = Medium1D::new(1.0, 1.0, 1.0, 0.25, ModulusLaw::Cos);
        let ops = assemble_galerkin(&m, 0.0, 1.0, 20, BoundaryCondition::Free).unwrap();
        let ones = DVector::from_element(ops.n_nodes(), 1.0);
        assert!((&ops.stiffness * &ones).amax() < 1e-10);
        assert!((&ops.beta * &ones).amax() < 1e-8);
    }

    #[test]
    fn mass_is_positive_definite_and_stiffness_negative() {
        let m = Medium1D::new(1.0, 1.0, 1.0, 0.25, ModulusLaw::Sin);
        let ops = assemble_galerkin(&m, 0.0, 0.5, 8, BoundaryCondition::Free).unwrap();
        assert!(ops.mass.clone().cholesky().is_some());
        let e = ops.stiffness.clone().symmetric_eigen();
        assert!(e.eigenvalues.max() < 1e-10);
    }

    #[test]
    fn window_weights_sum_to_one() {
        let m = Medium1D::new(1.0, 1.0, 1.0, 0.25, ModulusLaw::Cos);
        let ops = assemble_galerkin(&m, 0.0, 1.0, 20, BoundaryCondition::Free).unwrap();
        let w = ops.window_weights(0.0, 1.0).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let h = ops.h;
        assert!((w[0] - h / 2.0).abs() < 1e-14 && (w[5] - h).abs() < 1e-14);
        let w = ops.window_weights(0.13, 0.61).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-13);
        let mean: f64 = w.iter().zip(&ops.coords).map(|(a, x)| a * x).sum();
        assert!((mean - 0.37).abs() < 1e-13);
    }

    #[test]
    fn stress_of_linear_field() {
        let m = Medium1D::new(1.0, 1.0, 1.0, 0.25, ModulusLaw::Cos);
        let ops = assemble_galerkin(&m, 0.0, 1.0, 20, BoundaryCondition::Free).unwrap();
        let s = ops.stress_weights(0.25, 0.5).unwrap();
        let u: Vec<f64> = ops.coords.iter().map(|x| 0.7 * x).collect();
        let sig: f64 = s.iter().zip(&u).map(|(a, b)| a * b).sum();
        assert!((sig - 2.0 * 0.7).abs() < 1e-12);
        let shifted: Vec<f64> = u.iter().map(|x| x + 3.0).collect();
        let sig2: f64 = s.iter().zip(&shifted).map(|(a, b)| a * b).sum();
        assert!((sig - sig2).abs() < 1e-12);
        assert!(ops.stress_weights(-0.1, 0.2).is_err());
    }

    #[test]
    fn constant_acceleration_rows() {
        let m = Medium1D::new(1.0, 1.0, 1.0, 0.25, ModulusLaw::Cos);
        let bc = BoundaryCondition::ConstantAcceleration { a_o: 2.0, a_l: -1.0 };
        let ops = assemble_galerkin(&m, 0.0, 1.0, 12, bc).unwrap();
        let n = ops.n_nodes();
        let mut acc = vec![0.0; n];
        ops.acceleration(&vec![0.3; n], &mut acc);
        assert_eq!((acc[0], acc[n - 1]), (2.0, -1.0));
        // Interior rows of M v' = K u hold with u strain-free.
        let accv = DVector::from_vec(acc);
        let lhs = &ops.mass * &accv;
        for i in 1..n - 1 {
            assert!(lhs[i].abs() < 1e-12);
        }
    }

    #[test]
    fn dirichlet_rows_vanish() {
        let m = Medium1D::new(1.0, 1.0, 1.0, 0.25, ModulusLaw::Cos);
        let ops = assemble_galerkin(&m, 0.0, 1.0, 12, BoundaryCondition::Dirichlet).unwrap();
        let n = ops.n_nodes();
        assert!(ops.beta.row(0).amax() == 0.0 && ops.beta.row(n - 1).amax() == 0.0);
    }

    #[test]
    fn periodic_has_wrapped_nodes() {
        let m = Medium1D::new(1.0, 1.0, 1.0, 0.25, ModulusLaw::Cos);
        let ops = assemble_galerkin(&m, 0.0, 1.0, 8, BoundaryCondition::Periodic).unwrap();
        assert_eq!(ops.n_nodes(), 32);
        let ones = DVector::from_element(32, 1.0);
        assert!((&ops.beta * &ones).amax() < 1e-8);
    }
}
