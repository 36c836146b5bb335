use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::coupled::{end_accelerations, subdomain_boundary_estimate, CoupledConfig, GaussFields, StressClosure};
use super::galerkin::{assemble_elements, BoundaryCondition, GalerkinOps};
use super::medium::Medium1D;
use super::subdomain::{dot, solve_subdomain_manifold, MarchConfig, SubDomain};
use crate::atlas::Sheet;
use crate::error::{PlimError, Result};
use crate::grid::Grid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StoreConfig {
    /// End accelerations are keyed on the lattice `{−max, −max + step, …, max}²`.
    pub accel_max: f64,
    pub accel_step: f64,
    /// Initial mean strains of the stored family.
    pub strains: Vec<f64>,
    /// Initial velocity gradients of the stored family.
    pub velocity_gradients: Vec<f64>,
    /// Initial mean velocities of the stored family.
    pub velocities: Vec<f64>,
    /// Block half-widths around each anchor in `(ū, v̄)`.
    pub half_width: [f64; 2],
    pub mesh: [usize; 2],
    /// Longest fine time a seed is followed.
    pub max_time: f64,
    pub march: MarchConfig,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            accel_max: 40.0,
            accel_step: 20.0,
            strains: vec![-0.8, -0.4, 0.0, 0.4, 0.8],
            velocity_gradients: vec![-24.0, -12.0, 0.0, 12.0, 24.0],
            velocities: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            half_width: [0.06, 1.2],
            mesh: [6, 6],
            max_time: 0.2,
            march: MarchConfig::default(),
        }
    }
}

/// One stored sheet and its comparison signature.
#[derive(Debug, Clone)]
pub struct StoredSheet {
    pub sheet: Sheet,
    /// Anchor state with its mean displacement removed.
    pub signature: Vec<f64>,
}

/// Precomputed sub-domain manifolds keyed by end accelerations.
#[derive(Debug, Clone)]
pub struct ManifoldStore {
    pub keys: Vec<(f64, f64)>,
    pub subdomains: Vec<SubDomain>,
    pub sheets: Vec<Vec<StoredSheet>>,
    pub failed: usize,
    /// Unit mean-strain profile with zero average.
    pub strain_profile: Vec<f64>,
}

/// Displacement mode of unit mean strain in static equilibrium, with zero average.
pub fn strain_profile(ops: &GalerkinOps, psi: &[f64]) -> Result<Vec<f64>> {
    let n = ops.n_nodes();
    let len = ops.b - ops.a;
    let interior: Vec<usize> = (1..n - 1).collect();
    let mut xi = vec![0.0; n];
    xi[n - 1] = len;
    if !interior.is_empty() {
        let k_ii = ops.stiffness.select_rows(&interior).select_columns(&interior);
        let rhs = nalgebra::DVector::from_iterator(
            interior.len(),
            interior.iter().map(|&i| -ops.stiffness[(i, n - 1)] * len),
        );
        let sol = k_ii
            .lu()
            .solve(&rhs)
            .ok_or_else(|| PlimError::precondition("singular interior stiffness"))?;
        for (r, &i) in interior.iter().enumerate() {
            xi[i] = sol[r];
        }
    }
    let mean = dot(psi, &xi);
    xi.iter_mut().for_each(|x| *x -= mean);
    Ok(xi)
}

fn signature(state: &[f64], psi: &[f64]) -> Vec<f64> {
    let n = psi.len();
    let ubar = dot(psi, &state[..n]);
    let mut s = state.to_vec();
    s[..n].iter_mut().for_each(|u| *u -= ubar);
    s
}

fn lattice(max: f64, step: f64) -> Vec<f64> {
    if !(step > 0.0) || max < 0.0 {
        return vec![0.0];
    }
    let k = (max / step + 1e-9).floor() as i64;
    (-k..=k).map(|i| i as f64 * step).collect()
}

/// Builds the store for the sub-domain `[0, length]` of `medium`.
pub fn build_store(medium: &Medium1D, length: f64, n_elements: usize, cfg: &StoreConfig) -> Result<ManifoldStore> {
    let axis = lattice(cfg.accel_max, cfg.accel_step);
    let keys: Vec<(f64, f64)> = axis.iter().flat_map(|&a| axis.iter().map(move |&b| (a, b))).collect();
    let subdomains: Vec<SubDomain> = keys
        .iter()
        .map(|&(a_o, a_l)| {
            let bc = BoundaryCondition::ConstantAcceleration { a_o, a_l };
            assemble_elements(medium, 0.0, length, n_elements, bc).map(SubDomain::from_ops)
        })
        .collect::<Result<_>>()?;
    let profile = strain_profile(&subdomains[0].ops, &subdomains[0].psi)?;
    let n = profile.len();
    let mut family = Vec::new();
    for &g in &cfg.strains {
        for &k in &cfg.velocity_gradients {
            for &v in &cfg.velocities {
                let mut f = vec![0.0; 2 * n];
                for i in 0..n {
                    f[i] = g * profile[i];
                    f[n + i] = v + k * profile[i];
                }
                family.push(f);
            }
        }
    }
    let results: Vec<(Vec<StoredSheet>, usize)> = subdomains
        .par_iter()
        .map(|sd| {
            let mut march = cfg.march;
            march.max_steps = (cfg.max_time / (march.safety * 2.8 / sd.omega_max)).ceil() as usize;
            let mut kept = Vec::new();
            let mut failed = 0;
            for f in &family {
                let c = sd.coarse_of(f);
                let grid = Grid::new(
                    vec![c[0] - cfg.half_width[0], c[1] - cfg.half_width[1]],
                    vec![c[0] + cfg.half_width[0], c[1] + cfg.half_width[1]],
                    cfg.mesh.to_vec(),
                );
                match grid.and_then(|g| solve_subdomain_manifold(sd, f, &g, &march)) {
                    Ok(sheet) => kept.push(StoredSheet {
                        signature: signature(f, &sd.psi),
                        sheet,
                    }),
                    Err(_) => failed += 1,
                }
            }
            (kept, failed)
        })
        .collect();
    let failed = results.iter().map(|r| r.1).sum();
    let sheets = results.into_iter().map(|r| r.0).collect();
    Ok(ManifoldStore {
        keys,
        subdomains,
        sheets,
        failed,
        strain_profile: profile,
    })
}

impl ManifoldStore {
    pub fn len(&self) -> usize {
        self.sheets.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_nodes(&self) -> usize {
        self.strain_profile.len()
    }
}

/// Chosen manifold at one Gauss point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussSelection {
    pub key: usize,
    pub sheet: usize,
    pub accelerations: (f64, f64),
    pub key_distance: f64,
    pub anchor_distance: f64,
}

/// Per-Gauss-point memory of the previous step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussCache {
    pub fine: Option<Vec<f64>>,
    pub end_velocities: Option<(f64, f64)>,
    pub coarse: Option<[f64; 2]>,
}

/// Nearest key to the estimated end accelerations, then the stored anchor nearest the cached fine state.
pub fn select_manifold_at_gauss(
    store: &ManifoldStore,
    eps: f64,
    fields: &GaussFields,
    cache: &GaussCache,
    dt: f64,
) -> Result<GaussSelection> {
    let (_, v_o, _, v_l) = subdomain_boundary_estimate(fields.ubar, fields.vbar, fields.ubar_x, fields.vbar_x, eps);
    let (a_o, a_l) = end_accelerations(v_o, v_l, cache.end_velocities, dt);
    let mut order: Vec<(f64, usize)> = store
        .keys
        .iter()
        .enumerate()
        .map(|(i, k)| (((k.0 - a_o).powi(2) + (k.1 - a_l).powi(2)).sqrt(), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let (key_distance, key) = order
        .iter()
        .copied()
        .find(|(_, i)| !store.sheets[*i].is_empty())
        .ok_or_else(|| PlimError::precondition("empty manifold store"))?;
    let psi = &store.subdomains[key].psi;
    let target = cache.fine.as_ref().map(|f| signature(f, psi));
    // Sheets undefined where the placed lift lands are passed over when any other is viable.
    let c_now = [fields.ubar, fields.vbar];
    let c_prev = cache.coarse.unwrap_or(c_now);
    let mut best = (f64::INFINITY, 0, false);
    for (j, s) in store.sheets[key].iter().enumerate() {
        let d = match &target {
            Some(t) => t
                .iter()
                .zip(&s.signature)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt(),
            None => 0.0,
        };
        let a = &s.sheet.anchor.coarse;
        let viable = s
            .sheet
            .is_defined_at(&[a[0] + c_now[0] - c_prev[0], a[1] + c_now[1] - c_prev[1]]);
        if (viable && !best.2) || (viable == best.2 && d < best.0) {
            best = (d, j, viable);
        }
    }
    Ok(GaussSelection {
        key,
        sheet: best.1,
        accelerations: (a_o, a_l),
        key_distance,
        anchor_distance: best.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Placement {
    key: usize,
    sheet: usize,
    /// Sheet coordinate minus Gauss-point coordinate.
    offset: [f64; 2],
}

/// Averaged stresses from stored sub-domain manifolds.
pub struct PlimClosure<'a> {
    pub store: &'a ManifoldStore,
    pub eps: f64,
    caches: Vec<GaussCache>,
    placements: Vec<Option<Placement>>,
    flops: u64,
    /// Lifts that fell outside the defined part of their sheet.
    pub fallbacks: usize,
    pub selections: Vec<Vec<GaussSelection>>,
}

impl<'a> PlimClosure<'a> {
    /// Caches the fine initial condition of every sub-domain.
    pub fn new(store: &'a ManifoldStore, cfg: &CoupledConfig, gauss_x: &[f64]) -> Self {
        let n = store.n_nodes();
        let eps = 0.5 * cfg.subdomain_length();
        let h = 2.0 * eps / (n - 1) as f64;
        let caches = gauss_x
            .iter()
            .map(|&x| {
                let mut f = vec![0.0; 2 * n];
                for i in 0..n {
                    f[n + i] = cfg.initial_velocity(x - eps + i as f64 * h);
                }
                GaussCache {
                    fine: Some(f),
                    end_velocities: None,
                    coarse: None,
                }
            })
            .collect();
        PlimClosure {
            store,
            eps,
            caches,
            placements: vec![None; gauss_x.len()],
            flops: 0,
            fallbacks: 0,
            selections: Vec::new(),
        }
    }

    fn lift(&mut self, g: usize, c: [f64; 2]) -> Result<Vec<f64>> {
        let p = self.placements[g].ok_or_else(|| PlimError::precondition("no manifold placed"))?;
        let sheet = &self.store.sheets[p.key][p.sheet].sheet;
        let at = [c[0] + p.offset[0], c[1] + p.offset[1]];
        self.flops += 4 * 2 * sheet.n_components as u64;
        if let Ok(f) = sheet.eval(&at) {
            return Ok(f);
        }
        self.fallbacks += 1;
        let clamped = [
            at[0].clamp(sheet.grid.lower[0], sheet.grid.upper[0]),
            at[1].clamp(sheet.grid.lower[1], sheet.grid.upper[1]),
        ];
        match sheet.eval(&clamped) {
            Ok(f) => Ok(f),
            Err(_) => Ok(sheet.anchor.data.clone()),
        }
    }
}

impl StressClosure for PlimClosure<'_> {
    fn begin_step(&mut self, fields: &[GaussFields], dt: f64) -> Result<()> {
        let mut chosen = Vec::with_capacity(fields.len());
        for (g, f) in fields.iter().enumerate() {
            let c = [f.ubar, f.vbar];
            let sel = select_manifold_at_gauss(self.store, self.eps, f, &self.caches[g], dt).map_err(|e| {
                PlimError::Located {
                    context: format!("Gauss point {g}"),
                    source: Box::new(e),
                }
            })?;
            let n_sheets = self.store.sheets[sel.key].len() as u64;
            let dim = 2 * self.store.n_nodes() as u64;
            self.flops += self.store.keys.len() as u64 * 5 + n_sheets * 3 * dim + 2 * dim + 12;
            let anchor = &self.store.sheets[sel.key][sel.sheet].sheet.anchor.coarse;
            // The chosen sheet is placed so its anchor sits at the previous coarse point.
            let from = self.caches[g].coarse.unwrap_or(c);
            self.placements[g] = Some(Placement {
                key: sel.key,
                sheet: sel.sheet,
                offset: [anchor[0] - from[0], anchor[1] - from[1]],
            });
            let fine = self.lift(g, c)?;
            let (_, v_o, _, v_l) = subdomain_boundary_estimate(f.ubar, f.vbar, f.ubar_x, f.vbar_x, self.eps);
            self.caches[g] = GaussCache {
                fine: Some(fine),
                end_velocities: Some((v_o, v_l)),
                coarse: Some(c),
            };
            chosen.push(sel);
        }
        self.selections.push(chosen);
        Ok(())
    }

    fn stresses(&mut self, fields: &[GaussFields], out: &mut [f64]) -> Result<()> {
        let n = self.store.n_nodes();
        for (g, f) in fields.iter().enumerate() {
            let fine = self.lift(g, [f.ubar, f.vbar])?;
            let p = self.placements[g].expect("placed in begin_step");
            out[g] = self.store.subdomains[p.key].averaged_stress(&fine[..n]);
            self.flops += 2 * n as u64;
        }
        Ok(())
    }

    fn flops(&self) -> u64 {
        self.flops
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elastowave::medium::ModulusLaw;

    fn tiny_store() -> ManifoldStore {
        let m = Medium1D::new(1.0, 1.0, 1.0, 1.0 / 16.0, ModulusLaw::Cos);
        let cfg = StoreConfig {
            accel_max: 2.0,
            accel_step: 2.0,
            strains: vec![0.0, 0.5],
            velocity_gradients: vec![0.0],
            velocities: vec![0.5],
            ..Default::default()
        };
        build_store(&m, 1.0 / 16.0, 8, &cfg).unwrap()
    }

    #[test]
    fn strain_profile_carries_uniform_stress() {
        let m = Medium1D::new(1.0, 1.0, 1.0, 1.0 / 16.0, ModulusLaw::Cos);
        let sd = SubDomain::from_ops(assemble_elements(&m, 0.0, 1.0 / 16.0, 20, BoundaryCondition::Free).unwrap());
        let xi = strain_profile(&sd.ops, &sd.psi).unwrap();
        assert!(dot(&sd.psi, &xi).abs() < 1e-15);
        // Element stresses E·ξ' agree everywhere.
        let h = sd.ops.h;
        let s0 = (xi[1] - xi[0]) / h;
        assert!(s0 > 0.0);
        let stress = sd.averaged_stress(&xi);
        // Unit mean strain in a cosine medium over one period carries the harmonic mean.
        assert!((stress - 3f64.sqrt()).abs() < 5e-3, "{stress}");
    }

    #[test]
    fn nearest_key_is_selected() {
        let store = tiny_store();
        assert_eq!(store.keys.len(), 9);
        let fields = GaussFields {
            ubar: 0.0,
            vbar: 0.0,
            ubar_x: 0.0,
            vbar_x: 0.0,
        };
        let cache = GaussCache {
            fine: None,
            end_velocities: Some((-0.19, -0.21)),
            coarse: None,
        };
        let sel = select_manifold_at_gauss(&store, 1.0 / 32.0, &fields, &cache, 0.1).unwrap();
        assert_eq!(store.keys[sel.key], (2.0, 2.0));
        let exact = GaussCache {
            fine: None,
            end_velocities: Some((0.0, 0.0)),
            coarse: None,
        };
        let sel = select_manifold_at_gauss(&store, 1.0 / 32.0, &fields, &exact, 0.1).unwrap();
        assert_eq!(store.keys[sel.key], (0.0, 0.0));
        assert_eq!(sel.key_distance, 0.0);
    }

    #[test]
    fn stored_anchor_is_found_exactly() {
        let store = tiny_store();
        let key = store.keys.iter().position(|k| *k == (0.0, 0.0)).unwrap();
        let target = store.sheets[key][1].sheet.anchor.data.clone();
        let fields = GaussFields {
            ubar: 0.0,
            vbar: 0.5,
            ubar_x: 0.0,
            vbar_x: 0.0,
        };
        let cache = GaussCache {
            fine: Some(target),
            end_velocities: Some((0.5, 0.5)),
            coarse: Some([0.0, 0.5]),
        };
        let sel = select_manifold_at_gauss(&store, 1.0 / 32.0, &fields, &cache, 0.1).unwrap();
        assert_eq!((sel.key, sel.sheet), (key, 1));
        assert!(sel.anchor_distance < 1e-12);
    }

    #[test]
    fn empty_store_is_an_error() {
        let mut store = tiny_store();
        store.sheets.iter_mut().for_each(Vec::clear);
        let fields = GaussFields {
            ubar: 0.0,
            vbar: 0.0,
            ubar_x: 0.0,
            vbar_x: 0.0,
        };
        assert!(select_manifold_at_gauss(&store, 0.1, &fields, &GaussCache::default(), 0.1).is_err());
    }
}
