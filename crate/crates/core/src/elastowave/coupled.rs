use serde::{Deserialize, Serialize};

use super::coarse_mesh::CoarseMesh;
use super::galerkin::{assemble_galerkin, BoundaryCondition, GalerkinOps};
use super::medium::{Medium1D, ModulusLaw};
use crate::error::{PlimError, Result};
use crate::integrate::Rk4Workspace;

/// Boundary values of a sub-domain from the coarse field at its center.
pub fn subdomain_boundary_estimate(ubar: f64, vbar: f64, ubar_x: f64, vbar_x: f64, eps: f64) -> (f64, f64, f64, f64) {
    (
        ubar - ubar_x * eps,
        vbar - vbar_x * eps,
        ubar + ubar_x * eps,
        vbar + vbar_x * eps,
    )
}

/// End accelerations by backward difference; zero without a cached previous step.
pub fn end_accelerations(v_o: f64, v_l: f64, previous: Option<(f64, f64)>, dt: f64) -> (f64, f64) {
    match previous {
        Some((po, pl)) if dt > 0.0 => ((v_o - po) / dt, (v_l - pl) / dt),
        _ => (0.0, 0.0),
    }
}

/// Coarse fields at one Gauss point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussFields {
    pub ubar: f64,
    pub vbar: f64,
    pub ubar_x: f64,
    pub vbar_x: f64,
}

/// Supplies averaged stresses at the Gauss points of the coarse mesh.
pub trait StressClosure {
    /// Called once at the start of every coarse step.
    fn begin_step(&mut self, fields: &[GaussFields], dt: f64) -> Result<()>;
    /// Stress at every Gauss point for a stage state of the current step.
    fn stresses(&mut self, fields: &[GaussFields], out: &mut [f64]) -> Result<()>;
    /// Floating-point operations spent so far.
    fn flops(&self) -> u64;
}

/// `σ̄ = E ū_x` with a constant modulus.
#[derive(Debug, Clone)]
pub struct HomogeneousClosure {
    pub modulus: f64,
    flops: u64,
}

impl HomogeneousClosure {
    pub fn new(modulus: f64) -> Self {
        HomogeneousClosure { modulus, flops: 0 }
    }
}

impl StressClosure for HomogeneousClosure {
    fn begin_step(&mut self, _fields: &[GaussFields], _dt: f64) -> Result<()> {
        Ok(())
    }

    fn stresses(&mut self, fields: &[GaussFields], out: &mut [f64]) -> Result<()> {
        for (o, f) in out.iter_mut().zip(fields) {
            *o = self.modulus * f.ubar_x;
        }
        self.flops += fields.len() as u64;
        Ok(())
    }

    fn flops(&self) -> u64 {
        self.flops
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoupledConfig {
    pub medium: Medium1D,
    pub coarse_elements: usize,
    pub nodes_per_wavelength: usize,
    /// Fraction of the fine RK4 stability limit.
    pub fine_safety: f64,
    /// Coarse step over fine step.
    pub step_ratio: usize,
    /// Cycles of the initial velocity `sin(2π k x / L)` over the bar.
    pub ic_cycles: f64,
    pub periods: f64,
}

impl Default for CoupledConfig {
    fn default() -> Self {
        CoupledConfig {
            medium: Medium1D::new(1.0, 1.0, 1.0, 1.0 / 16.0, ModulusLaw::Cos),
            coarse_elements: 8,
            nodes_per_wavelength: 20,
            fine_safety: 0.5,
            step_ratio: 20,
            ic_cycles: 4.0,
            periods: 6.0,
        }
    }
}

impl CoupledConfig {
    /// Sub-domain length, one modulus wavelength.
    pub fn subdomain_length(&self) -> f64 {
        self.medium.lambda_e
    }

    /// Period of the initial mode in the long-wave effective medium.
    pub fn period(&self) -> f64 {
        let k = 2.0 * std::f64::consts::PI * self.ic_cycles / self.medium.length;
        let c = (self.medium.harmonic_modulus() / self.medium.rho).sqrt();
        2.0 * std::f64::consts::PI / (k * c)
    }

    pub fn horizon(&self) -> f64 {
        self.periods * self.period()
    }

    pub fn initial_velocity(&self, x: f64) -> f64 {
        (2.0 * std::f64::consts::PI * self.ic_cycles * x / self.medium.length).sin()
    }

    pub fn fine_ops(&self) -> Result<GalerkinOps> {
        assemble_galerkin(
            &self.medium,
            0.0,
            self.medium.length,
            self.nodes_per_wavelength,
            BoundaryCondition::Dirichlet,
        )
    }

    pub fn coarse_mesh(&self) -> Result<CoarseMesh> {
        CoarseMesh::new(self.medium.length, self.coarse_elements, self.medium.rho)
    }
}

/// Nodal histories of the coarse fields.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledRun {
    pub times: Vec<f64>,
    pub nodes: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub steps: usize,
    pub dt: f64,
    pub flops: u64,
}

impl CoupledRun {
    pub fn node_history(&self, node: usize) -> (Vec<f64>, Vec<f64>) {
        (
            self.u.iter().map(|s| s[node]).collect(),
            self.v.iter().map(|s| s[node]).collect(),
        )
    }
}

/// Window averages of the fine initial condition at the coarse nodes (ends fixed at zero).
pub fn coarse_initial_state(
    cfg: &CoupledConfig,
    fine: &GalerkinOps,
    mesh: &CoarseMesh,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = mesh.n_nodes();
    let eps = 0.5 * cfg.subdomain_length();
    let v_fine: Vec<f64> = fine.coords.iter().map(|x| cfg.initial_velocity(*x)).collect();
    let mut v = vec![0.0; n];
    for i in 1..n - 1 {
        let w = fine.window_weights(mesh.nodes[i] - eps, mesh.nodes[i] + eps)?;
        v[i] = w.iter().zip(&v_fine).map(|(a, b)| a * b).sum();
    }
    Ok((vec![0.0; n], v))
}

/// Fine step of the reference solution.
pub fn fine_step(cfg: &CoupledConfig, fine: &GalerkinOps) -> f64 {
    fine.stable_dt(cfg.fine_safety)
}

/// Advances the coarse Galerkin system with RK4, stresses from `closure`.
pub fn run_coupled(cfg: &CoupledConfig, closure: &mut dyn StressClosure) -> Result<CoupledRun> {
    let fine = cfg.fine_ops()?;
    let mesh = cfg.coarse_mesh()?;
    let dt = fine_step(cfg, &fine) * cfg.step_ratio as f64;
    let (u0, v0) = coarse_initial_state(cfg, &fine, &mesh)?;
    run_coupled_from(cfg, &mesh, closure, u0, v0, dt, cfg.horizon())
}

pub fn run_coupled_from(
    _cfg: &CoupledConfig,
    mesh: &CoarseMesh,
    closure: &mut dyn StressClosure,
    u0: Vec<f64>,
    v0: Vec<f64>,
    dt: f64,
    horizon: f64,
) -> Result<CoupledRun> {
    let n = mesh.n_nodes();
    let steps = (horizon / dt - 1e-9).ceil().max(0.0) as usize;
    let ng = mesh.gauss.len();
    let mut y = [u0, v0].concat();
    let mut out = CoupledRun {
        times: vec![0.0],
        nodes: mesh.nodes.clone(),
        u: vec![y[..n].to_vec()],
        v: vec![y[n..].to_vec()],
        steps,
        dt,
        flops: 0,
    };
    let fields_of = |y: &[f64], fields: &mut Vec<GaussFields>| {
        fields.clear();
        for g in &mesh.gauss {
            let (ub, ux) = mesh.interpolate(g, &y[..n]);
            let (vb, vx) = mesh.interpolate(g, &y[n..]);
            fields.push(GaussFields {
                ubar: ub,
                vbar: vb,
                ubar_x: ux,
                vbar_x: vx,
            });
        }
    };
    let mut fields = Vec::with_capacity(ng);
    let mut stress = vec![0.0; ng];
    let mut flops: u64 = 0;
    let interp_flops = (ng * 2 * 12) as u64;
    let mut ws = Rk4Workspace::new(2 * n);
    let mut err = None;
    for step in 0..steps {
        fields_of(&y, &mut fields);
        closure.begin_step(&fields, dt)?;
        ws.step(&mut y, dt, |s, o| {
            if err.is_some() {
                o.iter_mut().for_each(|x| *x = 0.0);
                return;
            }
            fields_of(s, &mut fields);
            if let Err(e) = closure.stresses(&fields, &mut stress) {
                err = Some(e);
            }
            o[..n].copy_from_slice(&s[n..]);
            mesh.accelerations(&stress, &mut o[n..]);
        });
        flops += 4 * (interp_flops + mesh.acceleration_flops()) + 10 * 2 * n as u64;
        if let Some(e) = err.take() {
            return Err(PlimError::Located {
                context: format!("coarse step {step}"),
                source: Box::new(e),
            });
        }
        if y.iter().any(|x| !x.is_finite()) {
            return Err(PlimError::IntegrationDiverged {
                t: (step + 1) as f64 * dt,
                last_state: y,
            });
        }
        out.times.push((step + 1) as f64 * dt);
        out.u.push(y[..n].to_vec());
        out.v.push(y[n..].to_vec());
    }
    out.flops = flops + closure.flops();
    Ok(out)
}

/// Fine solution sampled as window averages at the coarse nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct FineReference {
    pub times: Vec<f64>,
    pub nodes: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub steps: usize,
    pub dt: f64,
    pub flops: u64,
}

/// Integrates the full Galerkin system, sampling every `sample_every` steps.
pub fn fine_reference(cfg: &CoupledConfig, sample_every: usize) -> Result<FineReference> {
    let fine = cfg.fine_ops()?;
    let mesh = cfg.coarse_mesh()?;
    let dt = fine_step(cfg, &fine);
    let steps = (cfg.horizon() / (dt * cfg.step_ratio as f64) - 1e-9).ceil() as usize * cfg.step_ratio;
    let eta = fine.n_nodes();
    let eps = 0.5 * cfg.subdomain_length();
    let n = mesh.n_nodes();
    let weights: Vec<Option<Vec<f64>>> = (0..n)
        .map(|i| {
            if i == 0 || i == n - 1 {
                None
            } else {
                fine.window_weights(mesh.nodes[i] - eps, mesh.nodes[i] + eps).ok()
            }
        })
        .collect();
    let sample = |y: &[f64]| {
        let avg = |part: &[f64]| -> Vec<f64> {
            weights
                .iter()
                .map(|w| w.as_ref().map_or(0.0, |w| w.iter().zip(part).map(|(a, b)| a * b).sum()))
                .collect()
        };
        (avg(&y[..eta]), avg(&y[eta..]))
    };
    let mut y = vec![0.0; 2 * eta];
    for (i, x) in fine.coords.iter().enumerate() {
        if i > 0 && i < eta - 1 {
            y[eta + i] = cfg.initial_velocity(*x);
        }
    }
    let sys = fine.fine_system();
    let mut ws = Rk4Workspace::new(2 * eta);
    let (u, v) = sample(&y);
    let mut out = FineReference {
        times: vec![0.0],
        nodes: mesh.nodes.clone(),
        u: vec![u],
        v: vec![v],
        steps,
        dt,
        flops: 0,
    };
    let every = sample_every.max(1);
    for step in 1..=steps {
        ws.step(&mut y, dt, |s, o| sys.rhs_into(s, o));
        if step % every == 0 || step == steps {
            let (u, v) = sample(&y);
            out.times.push(step as f64 * dt);
            out.u.push(u);
            out.v.push(v);
        }
    }
    out.flops = steps as u64 * (4 * fine.rhs_flops() + 10 * 2 * eta as u64);
    Ok(out)
}

/// Relative L2 error of the coarse histories at the interior nodes, `(ū, v̄)`.
pub fn coupled_errors(run: &CoupledRun, reference: &FineReference) -> Result<(f64, f64)> {
    let n = run.nodes.len();
    let mut num = [0.0; 2];
    let mut den = [0.0; 2];
    for (k, t) in reference.times.iter().enumerate() {
        if *t > run.times.last().copied().unwrap_or(0.0) + 1e-12 {
            break;
        }
        for i in 1..n - 1 {
            let (cu, cv) = sample_run(run, i, *t)?;
            num[0] += (cu - reference.u[k][i]).powi(2);
            num[1] += (cv - reference.v[k][i]).powi(2);
            den[0] += reference.u[k][i].powi(2);
            den[1] += reference.v[k][i].powi(2);
        }
    }
    if den[0] == 0.0 || den[1] == 0.0 {
        return Err(PlimError::EmptySeries);
    }
    Ok(((num[0] / den[0]).sqrt(), (num[1] / den[1]).sqrt()))
}

fn sample_run(run: &CoupledRun, node: usize, t: f64) -> Result<(f64, f64)> {
    let (u, v) = run.node_history(node);
    let a = crate::analysis::resample(&run.times, &u, &[t])?;
    let b = crate::analysis::resample(&run.times, &v, &[t])?;
    Ok((a[0], b[0]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_estimates() {
        let (uo, _, ul, _) = subdomain_boundary_estimate(1.0, 0.0, 0.5, 0.0, 0.1);
        assert!((uo - 0.95).abs() < 1e-15 && (ul - 1.05).abs() < 1e-15);
        let (_, vo, _, vl) = subdomain_boundary_estimate(0.0, 2.0, 0.0, -1.0, 0.5);
        assert_eq!((vo, vl), (2.5, 1.5));
        let (a, b, c, d) = subdomain_boundary_estimate(0.3, -0.2, 0.0, 0.0, 0.7);
        assert_eq!((a, b, c, d), (0.3, -0.2, 0.3, -0.2));
    }

    #[test]
    fn end_acceleration_rules() {
        let (ao, _) = end_accelerations(1.2, 0.0, Some((1.0, 0.0)), 0.1);
        assert!((ao - 2.0).abs() < 1e-12);
        assert_eq!(end_accelerations(0.4, 0.7, Some((0.4, 0.7)), 0.3), (0.0, 0.0));
        assert_eq!(end_accelerations(5.0, 6.0, None, 0.1), (0.0, 0.0));
    }

    #[test]
    fn zero_state_stays_zero() {
        let cfg = CoupledConfig::default();
        let mesh = cfg.coarse_mesh().unwrap();
        let n = mesh.n_nodes();
        let mut closure = HomogeneousClosure::new(2.0);
        let run = run_coupled_from(&cfg, &mesh, &mut closure, vec![0.0; n], vec![0.0; n], 0.01, 0.1).unwrap();
        assert!(run.u.iter().chain(&run.v).all(|s| s.iter().all(|x| *x == 0.0)));
    }
}
