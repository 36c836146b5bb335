//! Fixed-step classical Runge-Kutta integration.

use crate::error::{PlimError, Result};
use crate::system::FineSystem;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn component(&self, k: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[k]).collect()
    }

    pub fn last(&self) -> Option<&[f64]> {
        self.states.last().map(|s| s.as_slice())
    }
}

/// Scratch buffers for repeated RK4 steps of a fixed dimension.
#[derive(Debug, Clone)]
pub struct Rk4Workspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Workspace {
    pub fn new(dim: usize) -> Self {
        Rk4Workspace {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    /// Advances `y` in place by one step of `rhs`.
    pub fn step<F>(&mut self, y: &mut [f64], dt: f64, mut rhs: F)
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        let n = y.len();
        rhs(y, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * dt * self.k1[i];
        }
        rhs(&self.tmp, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * dt * self.k2[i];
        }
        rhs(&self.tmp, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = y[i] + dt * self.k3[i];
        }
        rhs(&self.tmp, &mut self.k4);
        for i in 0..n {
            y[i] += dt / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

pub fn rk4_step(sys: &FineSystem, f: &[f64], dt: f64) -> Vec<f64> {
    let mut y = f.to_vec();
    Rk4Workspace::new(f.len()).step(&mut y, dt, |s, out| sys.rhs_into(s, out));
    y
}

/// Integrates for `ceil(T/dt)` steps; the last step is not shortened.
pub fn fine_integrate(sys: &FineSystem, f0: &[f64], dt: f64, horizon: f64) -> Result<Trajectory> {
    if !(dt > 0.0) || !(horizon >= 0.0) {
        return Err(PlimError::precondition("dt must be > 0 and T >= 0"));
    }
    if f0.len() != sys.dim {
        return Err(PlimError::precondition("initial state has wrong dimension"));
    }
    let steps = step_count(horizon, dt);
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut ws = Rk4Workspace::new(sys.dim);
    let mut y = f0.to_vec();
    times.push(0.0);
    states.push(y.clone());
    for n in 1..=steps {
        ws.step(&mut y, dt, |s, out| sys.rhs_into(s, out));
        let t = n as f64 * dt;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(PlimError::IntegrationDiverged {
                t,
                last_state: states.last().cloned().unwrap_or_default(),
            });
        }
        times.push(t);
        states.push(y.clone());
    }
    Ok(Trajectory { times, states })
}

pub(crate) fn step_count(horizon: f64, dt: f64) -> usize {
    let q = horizon / dt;
    let r = q.round();
    if (q - r).abs() < 1e-9 * q.max(1.0) {
        r as usize
    } else {
        q.ceil() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oscillator() -> FineSystem {
        FineSystem::new("osc", 2, |f, out| {
            out[0] = -f[1];
            out[1] = f[0];
        })
    }

    #[test]
    fn trajectory_length_and_start() {
        let tr = fine_integrate(&oscillator(), &[1.0, 0.0], 0.1, 1.05).unwrap();
        assert_eq!(tr.len(), 12);
        assert_eq!(tr.states[0], vec![1.0, 0.0]);
        let tr = fine_integrate(&oscillator(), &[1.0, 0.0], 0.1, 1.0).unwrap();
        assert_eq!(tr.len(), 11);
    }

    #[test]
    fn zero_horizon_is_single_sample() {
        let tr = fine_integrate(&oscillator(), &[1.0, 0.0], 0.1, 0.0).unwrap();
        assert_eq!(tr.len(), 1);
    }

    #[test]
    fn divergence_reports_last_finite_state() {
        let sys = FineSystem::new("blowup", 1, |f, out| out[0] = f[0] * f[0]);
        match fine_integrate(&sys, &[1.0], 0.5, 100.0) {
            Err(PlimError::IntegrationDiverged { last_state, .. }) => {
                assert!(last_state[0].is_finite())
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_step() {
        assert!(fine_integrate(&oscillator(), &[1.0, 0.0], 0.0, 1.0).is_err());
        assert!(fine_integrate(&oscillator(), &[1.0, 0.0], 0.1, -1.0).is_err());
    }
}
