//! Reference experiments: a single accelerated sub-domain and the coupled bar.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::coupled::{
    coupled_errors, fine_reference, run_coupled, CoupledConfig, CoupledRun, FineReference, HomogeneousClosure,
};
use super::galerkin::BoundaryCondition;
use super::medium::{Medium1D, ModulusLaw};
use super::store::{build_store, ManifoldStore, PlimClosure, StoreConfig};
use super::subdomain::{MarchConfig, SubDomain, SubdomainSolver};
use crate::analysis::{relative_l2, resample};
use crate::atlas::Atlas;
use crate::dynamics::{coarse_integrate_supplemented, CoarseConfig, CoarseRun, RunStatus};
use crate::error::{PlimError, Result};
use crate::integrate::fine_integrate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubdomainExperiment {
    pub medium: Medium1D,
    pub nodes_per_wavelength: usize,
    pub a_o: f64,
    pub a_l: f64,
    /// Initial velocity wavelength over the modulus wavelength.
    pub wavelength_ratio: f64,
    pub periods: f64,
    pub coarse_steps_per_period: usize,
    /// Atlas box in `(ū, v̄)`.
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub blocks: [usize; 2],
    pub mesh: [usize; 2],
    pub supplement_threshold: f64,
    pub march: MarchConfig,
}

impl Default for SubdomainExperiment {
    fn default() -> Self {
        SubdomainExperiment {
            medium: Medium1D::new(2.0, 1.0, 1.0, 1.0, ModulusLaw::Cos),
            nodes_per_wavelength: 20,
            a_o: 0.5,
            a_l: -0.25,
            wavelength_ratio: 4.0 / 3.0,
            periods: 3.0,
            coarse_steps_per_period: 200,
            lower: [-0.2, -0.6],
            upper: [0.8, 0.9],
            blocks: [16, 16],
            mesh: [6, 6],
            supplement_threshold: 0.5,
            march: MarchConfig::default(),
        }
    }
}

impl SubdomainExperiment {
    /// Period of the initial mode in the long-wave effective medium.
    pub fn period(&self) -> f64 {
        let lambda = self.wavelength_ratio * self.medium.lambda_e;
        lambda / (self.medium.harmonic_modulus() / self.medium.rho).sqrt()
    }

    pub fn subdomain(&self, medium: &Medium1D) -> Result<SubDomain> {
        let bc = BoundaryCondition::ConstantAcceleration {
            a_o: self.a_o,
            a_l: self.a_l,
        };
        SubDomain::new(medium, 0.0, self.medium.length, self.nodes_per_wavelength, bc)
    }

    /// `u = 0`, `v = sin(2πy/λ)`.
    pub fn initial_state(&self, sd: &SubDomain) -> Vec<f64> {
        let n = sd.n_nodes();
        let k = 2.0 * PI / (self.wavelength_ratio * self.medium.lambda_e);
        let mut f = vec![0.0; 2 * n];
        for (i, x) in sd.ops.coords.iter().enumerate() {
            f[n + i] = (k * x).sin();
        }
        f
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubdomainComparison {
    pub times: Vec<f64>,
    /// Fine `(ū, v̄)` at `times`.
    pub fine: Vec<[f64; 2]>,
    /// Coarse run resampled to `times` (up to the run's end).
    pub coarse: Vec<[f64; 2]>,
    /// Fine run in the homogenized medium.
    pub homogeneous: Vec<[f64; 2]>,
    pub error: [f64; 2],
    pub homogeneous_error: [f64; 2],
    pub run: CoarseRun,
    pub atlas: Atlas,
}

fn split(c: &[[f64; 2]]) -> (Vec<f64>, Vec<f64>) {
    (c.iter().map(|p| p[0]).collect(), c.iter().map(|p| p[1]).collect())
}

/// Fine run, homogenized fine run, and the coarse run on a supplemented atlas.
pub fn run_subdomain_experiment(exp: &SubdomainExperiment) -> Result<SubdomainComparison> {
    let sd = exp.subdomain(&exp.medium)?;
    let hom = exp.subdomain(&exp.medium.homogenized(exp.medium.mean_modulus()))?;
    let f0 = exp.initial_state(&sd);
    let t_end = exp.periods * exp.period();
    let dt = sd.ops.stable_dt(exp.march.safety);
    let sys = sd.fine_system();
    let fine = fine_integrate(&sys, &f0, dt, t_end)?;
    let homog = fine_integrate(&hom.fine_system(), &f0, dt, t_end)?;
    let fine_c: Vec<[f64; 2]> = fine.states.iter().map(|s| sd.coarse_of(s)).collect();
    let hom_c: Vec<[f64; 2]> = homog.states.iter().map(|s| sd.coarse_of(s)).collect();

    let proj = sd.projection();
    let size: Vec<f64> = (0..2)
        .map(|k| (exp.upper[k] - exp.lower[k]) / exp.blocks[k] as f64)
        .collect();
    let mut atlas = Atlas::new(
        "elastowave",
        proj.describe(),
        exp.lower.to_vec(),
        exp.upper.to_vec(),
        size,
        exp.mesh.to_vec(),
    )?;
    let solver = SubdomainSolver {
        subdomain: Arc::new(sd.clone()),
        config: exp.march,
    };
    let mut cfg = CoarseConfig::new(exp.period() / exp.coarse_steps_per_period as f64, t_end);
    cfg.supplement_threshold = exp.supplement_threshold;
    let run = coarse_integrate_supplemented(&sys, &proj, &mut atlas, &solver, &f0, &cfg)?;

    let k = fine.times.iter().filter(|t| **t <= run.final_time() + 1e-12).count();
    let times = fine.times[..k].to_vec();
    let cu = resample(&run.times, &run.component(0), &times)?;
    let cv = resample(&run.times, &run.component(1), &times)?;
    let coarse: Vec<[f64; 2]> = cu.iter().zip(&cv).map(|(a, b)| [*a, *b]).collect();
    let (fu, fv) = split(&fine_c[..k]);
    let (hu, hv) = split(&hom_c[..k]);
    // A run that stopped early is charged for the missing part. The last fine step may
    // overshoot the horizon by less than `dt`, which a completed run does not reach.
    let error = if run.status == RunStatus::Completed {
        [relative_l2(&cu, &fu), relative_l2(&cv, &fv)]
    } else {
        [f64::INFINITY; 2]
    };
    Ok(SubdomainComparison {
        times,
        fine: fine_c[..k].to_vec(),
        coarse,
        homogeneous: hom_c[..k].to_vec(),
        error,
        homogeneous_error: [relative_l2(&hu, &fu), relative_l2(&hv, &fv)],
        run,
        atlas,
    })
}

/// Outcome of the coupled-bar comparison.
#[derive(Debug, Clone)]
pub struct CoupledComparison {
    pub reference: FineReference,
    /// `None` when the coarse run diverged.
    pub run: Option<CoupledRun>,
    pub failure: Option<String>,
    pub error: [f64; 2],
    pub fine_steps: usize,
    pub coarse_steps: usize,
    pub flop_ratio: f64,
    pub store_sheets: usize,
    pub store_failed: usize,
    pub fallbacks: usize,
}

/// Sub-domain medium shared by every Gauss point: one modulus period starting at phase zero.
pub fn local_medium(cfg: &CoupledConfig) -> Medium1D {
    let m = &cfg.medium;
    Medium1D::new(cfg.subdomain_length(), m.rho, m.e0, m.lambda_e, m.law)
}

pub fn build_coupled_store(cfg: &CoupledConfig, store: &StoreConfig) -> Result<ManifoldStore> {
    let n_el = ((cfg.subdomain_length() / cfg.medium.lambda_e) * cfg.nodes_per_wavelength as f64).round() as usize;
    build_store(&local_medium(cfg), cfg.subdomain_length(), n_el, store)
}

fn compare(
    reference: FineReference,
    result: Result<CoupledRun>,
    store: Option<&ManifoldStore>,
    fallbacks: usize,
) -> Result<CoupledComparison> {
    let (run, failure) = match result {
        Ok(r) => (Some(r), None),
        Err(e @ PlimError::IntegrationDiverged { .. }) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    let error = match &run {
        Some(r) => {
            let (a, b) = coupled_errors(r, &reference)?;
            [a, b]
        }
        None => [f64::INFINITY; 2],
    };
    let coarse_steps = run.as_ref().map_or(0, |r| r.steps);
    let flop_ratio = run
        .as_ref()
        .map_or(f64::NAN, |r| r.flops as f64 / reference.flops as f64);
    Ok(CoupledComparison {
        fine_steps: reference.steps,
        coarse_steps,
        flop_ratio,
        store_sheets: store.map_or(0, |s| s.len()),
        store_failed: store.map_or(0, |s| s.failed),
        fallbacks,
        reference,
        run,
        failure,
        error,
    })
}

/// Coupled run closed by stored sub-domain manifolds.
pub fn run_coupled_plim(cfg: &CoupledConfig, store: &ManifoldStore) -> Result<CoupledComparison> {
    let reference = fine_reference(cfg, cfg.step_ratio)?;
    let mesh = cfg.coarse_mesh()?;
    let gauss_x: Vec<f64> = mesh.gauss.iter().map(|g| g.x).collect();
    let mut closure = PlimClosure::new(store, cfg, &gauss_x);
    let result = run_coupled(cfg, &mut closure);
    let fallbacks = closure.fallbacks;
    compare(reference, result, Some(store), fallbacks)
}

/// Coupled run closed by a constant modulus.
pub fn run_coupled_homogeneous(cfg: &CoupledConfig, modulus: f64) -> Result<CoupledComparison> {
    let reference = fine_reference(cfg, cfg.step_ratio)?;
    let mut closure = HomogeneousClosure::new(modulus);
    let result = run_coupled(cfg, &mut closure);
    compare(reference, result, None, 0)
}
