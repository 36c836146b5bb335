//! Continuous simulated annealing: a downhill simplex whose vertex values carry
//! logarithmically distributed thermal fluctuations.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{PlimError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum StepScale {
    Uniform(f64),
    PerDof(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnealConfig {
    /// Initial temperature; `None` uses `|f(x0)|`.
    pub t0: Option<f64>,
    pub cooling: f64,
    pub iters_per_temp: usize,
    /// Final temperature relative to the initial one.
    pub t_min_ratio: f64,
    /// Extra annealing passes started from the best point found so far.
    pub restarts: usize,
    pub step: StepScale,
    pub seed: u64,
    /// Fractional spread of simplex values at which a temperature stage ends early.
    pub ftol: f64,
    /// Hard cap on objective evaluations.
    pub max_evaluations: Option<usize>,
    /// Multiplier applied to the simplex size at each restart.
    pub restart_step_factor: f64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        AnnealConfig {
            t0: None,
            cooling: 0.9,
            iters_per_temp: 200,
            t_min_ratio: 1e-8,
            restarts: 3,
            step: StepScale::Uniform(1.0),
            seed: 0,
            ftol: 1e-14,
            max_evaluations: None,
            restart_step_factor: 0.5,
        }
    }
}

impl AnnealConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.cooling > 0.0 && self.cooling < 1.0) {
            return Err(PlimError::config("cooling ratio must lie in (0, 1)"));
        }
        if !(self.t_min_ratio > 0.0 && self.t_min_ratio < 1.0) {
            return Err(PlimError::config("T_min must be positive and below T0"));
        }
        if let Some(t0) = self.t0 {
            if !(t0 > 0.0) {
                return Err(PlimError::config("T0 must be positive"));
            }
        }
        if let StepScale::PerDof(v) = &self.step {
            if v.len() != dim {
                return Err(PlimError::config("per-dof step scale has wrong length"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub restart: usize,
    pub temperature: f64,
    pub best: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnealResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
    pub trace: Vec<TracePoint>,
    /// Set when the search stopped on a non-finite objective value.
    pub aborted: bool,
}

pub fn write_trace_csv(trace: &[TracePoint], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "restart,temperature,best,evaluations")?;
    for p in trace {
        writeln!(w, "{},{:e},{:e},{}", p.restart, p.temperature, p.best, p.evaluations)?;
    }
    Ok(())
}

struct Search<'a, F> {
    f: F,
    rng: ChaCha8Rng,
    best_x: Vec<f64>,
    best_f: f64,
    evals: usize,
    cap: usize,
    aborted: bool,
    _p: std::marker::PhantomData<&'a ()>,
}

impl<F: FnMut(&[f64]) -> f64> Search<'_, F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if !v.is_finite() {
            self.aborted = true;
            return f64::INFINITY;
        }
        if v <= self.best_f {
            self.best_f = v;
            self.best_x.copy_from_slice(x);
        }
        v
    }

    fn exhausted(&self) -> bool {
        self.aborted || self.evals >= self.cap
    }

    /// Positive thermal fluctuation `-T ln u`.
    fn fluct(&mut self, temp: f64) -> f64 {
        if temp <= 0.0 {
            return 0.0;
        }
        let u: f64 = self.rng.random::<f64>();
        -temp * (1.0 - u).ln()
    }

    #[allow(clippy::too_many_arguments)]
    fn try_point(
        &mut self,
        p: &mut [Vec<f64>],
        y: &mut [f64],
        psum: &mut [f64],
        ihi: usize,
        yhi: &mut f64,
        fac: f64,
        temp: f64,
    ) -> f64 {
        let n = psum.len();
        let fac1 = (1.0 - fac) / n as f64;
        let fac2 = fac1 - fac;
        let trial: Vec<f64> = (0..n).map(|j| psum[j] * fac1 - p[ihi][j] * fac2).collect();
        let ytry = self.eval(&trial);
        let yflu = ytry - self.fluct(temp);
        if yflu < *yhi {
            y[ihi] = ytry;
            *yhi = yflu;
            for j in 0..n {
                psum[j] += trial[j] - p[ihi][j];
                p[ihi][j] = trial[j];
            }
        }
        yflu
    }

    /// One temperature stage of at most `iters` simplex moves.
    fn stage(&mut self, p: &mut [Vec<f64>], y: &mut [f64], iters: usize, temp: f64, ftol: f64) {
        let mpts = p.len();
        let n = mpts - 1;
        let mut psum = column_sums(p);
        let mut iter = iters as i64;
        loop {
            let mut ilo = 0;
            let mut ihi = 1;
            let mut ylo = y[0] + self.fluct(temp);
            let mut ynhi = ylo;
            let mut yhi = y[1] + self.fluct(temp);
            if ylo > yhi {
                ihi = 0;
                ilo = 1;
                ynhi = yhi;
                yhi = ylo;
                ylo = ynhi;
            }
            for i in 2..mpts {
                let yt = y[i] + self.fluct(temp);
                if yt <= ylo {
                    ilo = i;
                    ylo = yt;
                }
                if yt > yhi {
                    ynhi = yhi;
                    ihi = i;
                    yhi = yt;
                } else if yt > ynhi {
                    ynhi = yt;
                }
            }
            let denom = yhi.abs() + ylo.abs();
            let rtol = if denom > 0.0 {
                2.0 * (yhi - ylo).abs() / denom
            } else {
                0.0
            };
            if rtol < ftol || iter < 0 || self.exhausted() {
                p.swap(0, ilo);
                y.swap(0, ilo);
                return;
            }
            iter -= 2;
            let ytry = self.try_point(p, y, &mut psum, ihi, &mut yhi, -1.0, temp);
            if ytry <= ylo {
                self.try_point(p, y, &mut psum, ihi, &mut yhi, 2.0, temp);
            } else if ytry >= ynhi {
                let ysave = yhi;
                let ytry = self.try_point(p, y, &mut psum, ihi, &mut yhi, 0.5, temp);
                if ytry >= ysave {
                    for i in 0..mpts {
                        if i != ilo {
                            let mid: Vec<f64> = (0..n).map(|j| 0.5 * (p[i][j] + p[ilo][j])).collect();
                            y[i] = self.eval(&mid);
                            p[i] = mid;
                        }
                    }
                    iter -= n as i64;
                    psum = column_sums(p);
                }
            } else {
                iter += 1;
            }
        }
    }
}

fn column_sums(p: &[Vec<f64>]) -> Vec<f64> {
    let n = p[0].len();
    (0..n).map(|j| p.iter().map(|v| v[j]).sum()).collect()
}

/// Minimizes `objective` starting from `x0`. Deterministic for a given seed.
pub fn minimize<F>(mut objective: F, x0: &[f64], cfg: &AnnealConfig) -> Result<AnnealResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    cfg.validate(n)?;
    let f0 = objective(x0);
    if !f0.is_finite() {
        return Err(PlimError::NonFiniteObjective);
    }
    if n == 0 {
        return Ok(AnnealResult {
            x: Vec::new(),
            f: f0,
            evaluations: 1,
            trace: Vec::new(),
            aborted: false,
        });
    }
    let steps: Vec<f64> = match &cfg.step {
        StepScale::Uniform(s) => vec![*s; n],
        StepScale::PerDof(v) => v.clone(),
    };
    let mut s = Search {
        f: &mut objective,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        best_x: x0.to_vec(),
        best_f: f0,
        evals: 1,
        cap: cfg.max_evaluations.unwrap_or(usize::MAX),
        aborted: false,
        _p: std::marker::PhantomData,
    };
    let mut trace = Vec::new();
    let mut scale = 1.0;
    for restart in 0..=cfg.restarts {
        let start = s.best_x.clone();
        let t_start = match cfg.t0 {
            Some(t) if restart == 0 => t,
            _ => s.best_f.abs(),
        };
        if t_start <= 0.0 {
            break;
        }
        let t_min = cfg.t_min_ratio * t_start;
        let mut p = vec![start.clone(); n + 1];
        let mut y = vec![0.0; n + 1];
        y[0] = s.best_f;
        for i in 0..n {
            p[i + 1][i] += scale * steps[i];
            y[i + 1] = s.eval(&p[i + 1]);
        }
        let mut temp = t_start;
        while temp >= t_min && !s.exhausted() {
            s.stage(&mut p, &mut y, cfg.iters_per_temp, temp, cfg.ftol);
            trace.push(TracePoint {
                restart,
                temperature: temp,
                best: s.best_f,
                evaluations: s.evals,
            });
            temp *= cfg.cooling;
        }
        if !s.exhausted() {
            s.stage(&mut p, &mut y, cfg.iters_per_temp, 0.0, cfg.ftol);
            trace.push(TracePoint {
                restart,
                temperature: 0.0,
                best: s.best_f,
                evaluations: s.evals,
            });
        }
        if s.exhausted() {
            break;
        }
        scale *= cfg.restart_step_factor;
    }
    Ok(AnnealResult {
        x: s.best_x,
        f: s.best_f,
        evaluations: s.evals,
        trace,
        aborted: s.aborted,
    })
}
