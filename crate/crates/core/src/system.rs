//! Fine systems, projections and conserved quantities.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{PlimError, Result};

pub type RhsFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// An autonomous ODE `f' = H(f)`.
#[derive(Clone)]
pub struct FineSystem {
    pub name: String,
    pub dim: usize,
    pub params: BTreeMap<String, f64>,
    rhs: Arc<RhsFn>,
    evaluations: Arc<AtomicU64>,
}

impl std::fmt::Debug for FineSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FineSystem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("params", &self.params)
            .finish()
    }
}

impl FineSystem {
    pub fn new<F>(name: impl Into<String>, dim: usize, rhs: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        assert!(dim > 0, "fine dimension must be positive");
        FineSystem {
            name: name.into(),
            dim,
            params: BTreeMap::new(),
            rhs: Arc::new(rhs),
            evaluations: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn param(&self, key: &str) -> Option<f64> {
        self.params.get(key).copied()
    }

    pub fn rhs_into(&self, f: &[f64], out: &mut [f64]) {
        debug_assert_eq!(f.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        (self.rhs)(f, out);
    }

    pub fn rhs(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.rhs_into(f, &mut out);
        out
    }

    /// Number of rhs evaluations made through this system (shared by clones).
    pub fn evaluation_count(&self) -> u64 {
        self.evaluations.load(Ordering::Relaxed)
    }

    pub fn reset_evaluation_count(&self) {
        self.evaluations.store(0, Ordering::Relaxed);
    }
}

/// Linear fine-to-coarse map.
#[derive(Debug, Clone, PartialEq)]
pub enum ProjectionKind {
    Selection {
        retained: Vec<usize>,
    },
    /// Rows of weights, one row per coarse variable.
    WeightedAverage {
        weights: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMap {
    pub dim_fine: usize,
    pub kind: ProjectionKind,
    eliminated: Vec<usize>,
}

impl ProjectionMap {
    /// Coordinate selection. Indices are zero based.
    pub fn selection(dim_fine: usize, retained: &[usize]) -> Result<Self> {
        if retained.is_empty() || retained.len() >= dim_fine {
            return Err(PlimError::config("coarse dimension must be in 1..dim_fine"));
        }
        let mut seen = vec![false; dim_fine];
        for &i in retained {
            if i >= dim_fine || seen[i] {
                return Err(PlimError::config(format!(
                    "retained index {i} out of range or repeated"
                )));
            }
            seen[i] = true;
        }
        let eliminated = (0..dim_fine).filter(|&i| !seen[i]).collect();
        Ok(ProjectionMap {
            dim_fine,
            kind: ProjectionKind::Selection {
                retained: retained.to_vec(),
            },
            eliminated,
        })
    }

    /// Weighted averages; every fine coordinate counts as eliminated.
    pub fn weighted(dim_fine: usize, weights: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() >= dim_fine {
            return Err(PlimError::config("coarse dimension must be in 1..dim_fine"));
        }
        if weights.iter().any(|row| row.len() != dim_fine) {
            return Err(PlimError::config("weight rows must have dim_fine entries"));
        }
        Ok(ProjectionMap {
            dim_fine,
            kind: ProjectionKind::WeightedAverage { weights },
            eliminated: (0..dim_fine).collect(),
        })
    }

    pub fn dim_coarse(&self) -> usize {
        match &self.kind {
            ProjectionKind::Selection { retained } => retained.len(),
            ProjectionKind::WeightedAverage { weights } => weights.len(),
        }
    }

    pub fn eliminated(&self) -> &[usize] {
        &self.eliminated
    }

    pub fn n_eliminated(&self) -> usize {
        self.eliminated.len()
    }

    /// Applies Π (and, being linear, DΠ).
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        match &self.kind {
            ProjectionKind::Selection { retained } => retained.iter().map(|&i| f[i]).collect(),
            ProjectionKind::WeightedAverage { weights } => weights
                .iter()
                .map(|row| row.iter().zip(f).map(|(w, x)| w * x).sum())
                .collect(),
        }
    }

    pub fn eliminated_of(&self, f: &[f64]) -> Vec<f64> {
        self.eliminated.iter().map(|&i| f[i]).collect()
    }

    /// Builds a fine state from coarse values and eliminated values.
    ///
    /// For weighted averages the eliminated values are the whole fine state.
    pub fn assemble(&self, c: &[f64], g: &[f64]) -> Vec<f64> {
        match &self.kind {
            ProjectionKind::Selection { retained } => {
                let mut f = vec![0.0; self.dim_fine];
                for (k, &i) in retained.iter().enumerate() {
                    f[i] = c[k];
                }
                for (k, &i) in self.eliminated.iter().enumerate() {
                    f[i] = g[k];
                }
                f
            }
            ProjectionKind::WeightedAverage { .. } => g.to_vec(),
        }
    }

    pub fn describe(&self) -> String {
        match &self.kind {
            ProjectionKind::Selection { retained } => {
                let idx: Vec<String> = retained.iter().map(|i| i.to_string()).collect();
                format!("select:{}:{}", self.dim_fine, idx.join(","))
            }
            ProjectionKind::WeightedAverage { weights } => {
                format!("average:{}:{}", self.dim_fine, weights.len())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectedRate {
    Zero,
    Increasing,
    Decreasing,
    Free,
}

#[derive(Clone)]
pub struct ConservedQuantity {
    pub name: String,
    pub value_fn: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub expected_rate: ExpectedRate,
}

impl std::fmt::Debug for ConservedQuantity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConservedQuantity")
            .field("name", &self.name)
            .field("expected_rate", &self.expected_rate)
            .finish()
    }
}

impl ConservedQuantity {
    pub fn new<F>(name: impl Into<String>, expected_rate: ExpectedRate, value_fn: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        ConservedQuantity {
            name: name.into(),
            value_fn: Arc::new(value_fn),
            expected_rate,
        }
    }

    pub fn value(&self, f: &[f64]) -> f64 {
        (self.value_fn)(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_complement() {
        let p = ProjectionMap::selection(3, &[0, 2]).unwrap();
        assert_eq!(p.eliminated(), &[1]);
        assert_eq!(p.apply(&[1.0, 2.0, 3.0]), vec![1.0, 3.0]);
        assert_eq!(p.assemble(&[1.0, 3.0], &[2.0]), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn selection_rejects_bad_indices() {
        assert!(ProjectionMap::selection(3, &[0, 0]).is_err());
        assert!(ProjectionMap::selection(3, &[5]).is_err());
        assert!(ProjectionMap::selection(2, &[0, 1]).is_err());
    }

    #[test]
    fn weighted_average_applies_rows() {
        let p = ProjectionMap::weighted(3, vec![vec![0.25, 0.5, 0.25]]).unwrap();
        assert_eq!(p.apply(&[4.0, 4.0, 4.0]), vec![4.0]);
        assert_eq!(p.n_eliminated(), 3);
    }

    #[test]
    fn evaluation_counter_is_shared() {
        let s = FineSystem::new("id", 1, |f, out| out[0] = f[0]);
        let t = s.clone();
        s.rhs(&[1.0]);
        t.rhs(&[1.0]);
        assert_eq!(s.evaluation_count(), 2);
    }
}
