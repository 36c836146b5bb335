use nalgebra::{DMatrix, DVector};

use crate::error::{PlimError, Result};

/// A 2-point Gauss point of the quadratic coarse mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussPoint {
    pub x: f64,
    pub element: usize,
    pub weight: f64,
    /// Values and x-derivatives of the element's three shape functions.
    pub shape: [f64; 3],
    pub dshape: [f64; 3],
}

/// Quadratic Lagrange elements on `[0, L]` with both ends held fixed.
#[derive(Debug, Clone)]
pub struct CoarseMesh {
    pub length: f64,
    pub n_elements: usize,
    pub nodes: Vec<f64>,
    pub mass: DMatrix<f64>,
    pub gauss: Vec<GaussPoint>,
    /// Inverse of the interior block of the mass matrix.
    minv: DMatrix<f64>,
}

fn shape(xi: f64) -> [f64; 3] {
    [
        2.0 * (xi - 0.5) * (xi - 1.0),
        -4.0 * xi * (xi - 1.0),
        2.0 * xi * (xi - 0.5),
    ]
}

fn dshape(xi: f64) -> [f64; 3] {
    [4.0 * xi - 3.0, -8.0 * xi + 4.0, 4.0 * xi - 1.0]
}

impl CoarseMesh {
    pub fn new(length: f64, n_elements: usize, rho: f64) -> Result<Self> {
        if n_elements == 0 || !(length > 0.0) {
            return Err(PlimError::config("coarse mesh needs a positive length and elements"));
        }
        let n = 2 * n_elements + 1;
        let h = length / n_elements as f64;
        let nodes: Vec<f64> = (0..n).map(|i| i as f64 * h / 2.0).collect();
        let mut mass = DMatrix::<f64>::zeros(n, n);
        let (g3, w3) = crate::grid::gauss_unit(3);
        for e in 0..n_elements {
            for (xi, w) in g3.iter().zip(&w3) {
                let s = shape(*xi);
                for a in 0..3 {
                    for b in 0..3 {
                        mass[(2 * e + a, 2 * e + b)] += rho * w * h * s[a] * s[b];
                    }
                }
            }
        }
        let (g2, w2) = crate::grid::gauss_unit(2);
        let mut gauss = Vec::with_capacity(2 * n_elements);
        for e in 0..n_elements {
            for (xi, w) in g2.iter().zip(&w2) {
                let d = dshape(*xi);
                gauss.push(GaussPoint {
                    x: (e as f64 + xi) * h,
                    element: e,
                    weight: w * h,
                    shape: shape(*xi),
                    dshape: [d[0] / h, d[1] / h, d[2] / h],
                });
            }
        }
        let interior: Vec<usize> = (1..n - 1).collect();
        let minv = mass
            .select_rows(&interior)
            .select_columns(&interior)
            .try_inverse()
            .ok_or_else(|| PlimError::precondition("singular coarse mass matrix"))?;
        Ok(CoarseMesh {
            length,
            n_elements,
            nodes,
            mass,
            gauss,
            minv,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Value and slope of a nodal field at a Gauss point.
    pub fn interpolate(&self, g: &GaussPoint, field: &[f64]) -> (f64, f64) {
        let base = 2 * g.element;
        let mut v = 0.0;
        let mut dv = 0.0;
        for a in 0..3 {
            v += g.shape[a] * field[base + a];
            dv += g.dshape[a] * field[base + a];
        }
        (v, dv)
    }

    /// `α = M⁻¹F` with `F_k = −∫σ̄ φ_k'`, zero at the fixed ends.
    pub fn accelerations(&self, stress: &[f64], out: &mut [f64]) {
        let n = self.n_nodes();
        let mut f = DVector::<f64>::zeros(n - 2);
        for (g, s) in self.gauss.iter().zip(stress) {
            for a in 0..3 {
                let k = 2 * g.element + a;
                if k > 0 && k < n - 1 {
                    f[k - 1] -= g.weight * s * g.dshape[a];
                }
            }
        }
        let alpha = &self.minv * f;
        out[0] = 0.0;
        out[n - 1] = 0.0;
        out[1..n - 1].copy_from_slice(alpha.as_slice());
    }

    /// Floating-point operations of one `accelerations` call.
    pub fn acceleration_flops(&self) -> u64 {
        let m = (self.n_nodes() - 2) as u64;
        2 * m * m + 3 * 3 * self.gauss.len() as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mass_totals_and_gauss_layout() {
        let m = CoarseMesh::new(1.0, 8, 2.0).unwrap();
        assert_eq!(m.n_nodes(), 17);
        assert_eq!(m.gauss.len(), 16);
        assert!((m.mass.sum() - 2.0).abs() < 1e-13);
        let h = 0.125;
        assert!((m.gauss[0].x - h * (0.5 - 0.5 / 3f64.sqrt())).abs() < 1e-14);
        assert!((m.gauss.iter().map(|g| g.weight).sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn quadratics_are_interpolated_exactly() {
        let m = CoarseMesh::new(1.0, 4, 1.0).unwrap();
        let field: Vec<f64> = m.nodes.iter().map(|x| 3.0 * x * x - x + 0.5).collect();
        for g in &m.gauss {
            let (v, dv) = m.interpolate(g, &field);
            assert!((v - (3.0 * g.x * g.x - g.x + 0.5)).abs() < 1e-13);
            assert!((dv - (6.0 * g.x - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_stress_exerts_no_force() {
        let m = CoarseMesh::new(1.0, 8, 1.0).unwrap();
        let mut out = vec![1.0; 17];
        m.accelerations(&vec![2.5; 16], &mut out);
        assert!(out.iter().all(|a| a.abs() < 1e-10));
    }
}
