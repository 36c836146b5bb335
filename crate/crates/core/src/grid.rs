//! Tensor-product grids of multilinear elements.

use serde::{Deserialize, Serialize};

use crate::error::{PlimError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Nodes per side, per dimension.
    pub nodes: Vec<usize>,
}

/// Location of a point inside one element.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub element: Vec<usize>,
    /// Local coordinates in [0, 1] per dimension.
    pub local: Vec<f64>,
}

impl Grid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, nodes: Vec<usize>) -> Result<Self> {
        if lower.len() != upper.len() || lower.len() != nodes.len() || lower.is_empty() {
            return Err(PlimError::config("grid bounds and mesh must share a dimension"));
        }
        for k in 0..lower.len() {
            if !(upper[k] > lower[k]) || !lower[k].is_finite() || !upper[k].is_finite() {
                return Err(PlimError::config("grid bounds must be finite and non-degenerate"));
            }
            if nodes[k] < 2 {
                return Err(PlimError::config("mesh needs at least 2 nodes per side"));
            }
        }
        Ok(Grid { lower, upper, nodes })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.iter().product()
    }

    pub fn n_elements(&self) -> usize {
        self.nodes.iter().map(|n| n - 1).product()
    }

    pub fn n_corners(&self) -> usize {
        1 << self.dim()
    }

    pub fn spacing(&self, k: usize) -> f64 {
        (self.upper[k] - self.lower[k]) / (self.nodes[k] - 1) as f64
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.upper[k] - self.lower[k]).product()
    }

    pub fn element_volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.spacing(k)).product()
    }

    /// Node index; dimension 0 varies fastest.
    pub fn node_index(&self, multi: &[usize]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for k in 0..self.dim() {
            idx += multi[k] * stride;
            stride *= self.nodes[k];
        }
        idx
    }

    pub fn node_multi(&self, mut idx: usize) -> Vec<usize> {
        let mut m = Vec::with_capacity(self.dim());
        for k in 0..self.dim() {
            m.push(idx % self.nodes[k]);
            idx /= self.nodes[k];
        }
        m
    }

    pub fn node_coords(&self, idx: usize) -> Vec<f64> {
        self.node_multi(idx)
            .iter()
            .enumerate()
            .map(|(k, &i)| self.coord(k, i))
            .collect()
    }

    fn coord(&self, k: usize, i: usize) -> f64 {
        if i + 1 == self.nodes[k] {
            self.upper[k]
        } else {
            self.lower[k] + i as f64 * self.spacing(k)
        }
    }

    pub fn element_multi(&self, mut idx: usize) -> Vec<usize> {
        let mut m = Vec::with_capacity(self.dim());
        for k in 0..self.dim() {
            let n = self.nodes[k] - 1;
            m.push(idx % n);
            idx /= n;
        }
        m
    }

    pub fn element_lower(&self, element: &[usize]) -> Vec<f64> {
        element.iter().enumerate().map(|(k, &i)| self.coord(k, i)).collect()
    }

    /// Node indices of an element's corners; bit k of the corner index selects the upper side in dimension k.
    pub fn corner_nodes(&self, element: &[usize]) -> Vec<usize> {
        let d = self.dim();
        let mut out = Vec::with_capacity(1 << d);
        let mut multi = vec![0; d];
        for corner in 0..(1usize << d) {
            for k in 0..d {
                multi[k] = element[k] + ((corner >> k) & 1);
            }
            out.push(self.node_index(&multi));
        }
        out
    }

    pub fn contains(&self, c: &[f64]) -> bool {
        c.len() == self.dim()
            && (0..self.dim()).all(|k| {
                let tol = 1e-12 * (self.upper[k] - self.lower[k]);
                c[k] >= self.lower[k] - tol && c[k] <= self.upper[k] + tol
            })
    }

    pub fn locate(&self, c: &[f64]) -> Option<Cell> {
        if !self.contains(c) {
            return None;
        }
        let d = self.dim();
        let mut element = Vec::with_capacity(d);
        let mut local = Vec::with_capacity(d);
        for k in 0..d {
            let h = self.spacing(k);
            let n_el = self.nodes[k] - 1;
            let q = (c[k] - self.lower[k]) / h;
            let i = (q.floor().max(0.0) as usize).min(n_el - 1);
            let s = (q - i as f64).clamp(0.0, 1.0);
            element.push(i);
            local.push(s);
        }
        Some(Cell { element, local })
    }

    /// Shape function values at local coordinates, ordered as `corner_nodes`.
    pub fn shape(&self, local: &[f64], out: &mut [f64]) {
        for (corner, o) in out.iter_mut().enumerate() {
            let mut w = 1.0;
            for (k, &s) in local.iter().enumerate() {
                w *= if (corner >> k) & 1 == 1 { s } else { 1.0 - s };
            }
            *o = w;
        }
    }

    /// Physical-coordinate shape gradients; `out[corner * d + k]`.
    pub fn shape_grad(&self, local: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for corner in 0..(1usize << d) {
            for k in 0..d {
                let mut w = 1.0;
                for (j, &s) in local.iter().enumerate() {
                    let upper = (corner >> j) & 1 == 1;
                    w *= if j == k {
                        if upper {
                            1.0
                        } else {
                            -1.0
                        }
                    } else if upper {
                        s
                    } else {
                        1.0 - s
                    };
                }
                out[corner * d + k] = w / self.spacing(k);
            }
        }
    }

    /// Index of the mesh node at `c`, if `c` coincides with one.
    pub fn node_at(&self, c: &[f64]) -> Option<usize> {
        if !self.contains(c) {
            return None;
        }
        let mut multi = Vec::with_capacity(self.dim());
        for k in 0..self.dim() {
            let q = (c[k] - self.lower[k]) / self.spacing(k);
            let r = q.round();
            if (q - r).abs() > 1e-9 {
                return None;
            }
            multi.push((r.max(0.0) as usize).min(self.nodes[k] - 1));
        }
        Some(self.node_index(&multi))
    }
}

/// Gauss-Legendre points and weights on [0, 1].
pub fn gauss_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (p, w): (Vec<f64>, Vec<f64>) = match n {
        1 => (vec![0.0], vec![2.0]),
        2 => {
            let a = 1.0 / 3f64.sqrt();
            (vec![-a, a], vec![1.0, 1.0])
        }
        3 => {
            let a = (0.6f64).sqrt();
            (vec![-a, 0.0, a], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
        }
        4 => {
            let a = (3.0 / 7.0 - 2.0 / 7.0 * (6.0f64 / 5.0).sqrt()).sqrt();
            let b = (3.0 / 7.0 + 2.0 / 7.0 * (6.0f64 / 5.0).sqrt()).sqrt();
            let wa = (18.0 + 30f64.sqrt()) / 36.0;
            let wb = (18.0 - 30f64.sqrt()) / 36.0;
            (vec![-b, -a, a, b], vec![wb, wa, wa, wb])
        }
        _ => gauss_legendre_newton(n),
    };
    (
        p.iter().map(|x| 0.5 * (x + 1.0)).collect(),
        w.iter().map(|x| 0.5 * x).collect(),
    )
}

fn gauss_legendre_newton(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut pts = vec![0.0; n];
    let mut wts = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        pts[n - 1 - i] = x;
        wts[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (pts, wts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid2() -> Grid {
        Grid::new(vec![0.0, 8.0], vec![4.0, 12.0], vec![6, 6]).unwrap()
    }

    #[test]
    fn node_indexing_round_trips() {
        let g = grid2();
        for i in 0..g.n_nodes() {
            assert_eq!(g.node_index(&g.node_multi(i)), i);
        }
        assert_eq!(g.node_coords(35), vec![4.0, 12.0]);
        assert_eq!(g.n_elements(), 25);
    }

    #[test]
    fn shape_functions_partition_unity() {
        let g = grid2();
        let mut n = vec![0.0; 4];
        g.shape(&[0.3, 0.8], &mut n);
        assert!((n.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let mut dn = vec![0.0; 8];
        g.shape_grad(&[0.3, 0.8], &mut dn);
        let sx: f64 = (0..4).map(|c| dn[c * 2]).sum();
        assert!(sx.abs() < 1e-14);
    }

    #[test]
    fn locate_upper_face_uses_last_element() {
        let g = grid2();
        let cell = g.locate(&[4.0, 12.0]).unwrap();
        assert_eq!(cell.element, vec![4, 4]);
        assert_eq!(cell.local, vec![1.0, 1.0]);
        assert!(g.locate(&[4.1, 9.0]).is_none());
    }

    #[test]
    fn node_at_detects_nodes() {
        let g = grid2();
        assert_eq!(g.node_at(&[0.0, 8.0]), Some(0));
        assert_eq!(g.node_at(&[0.8, 8.0]), Some(1));
        assert_eq!(g.node_at(&[0.5, 8.0]), None);
    }

    #[test]
    fn gauss_rules_integrate_polynomials() {
        for n in 1..=8 {
            let (p, w) = gauss_unit(n);
            for deg in 0..(2 * n) {
                let q: f64 = p.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                assert!((q - 1.0 / (deg as f64 + 1.0)).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }
}
