use std::path::{Path, PathBuf};

use plim_core::anneal::StepScale;
use plim_core::elastowave::{CoupledConfig, StoreConfig, SubdomainExperiment};
use plim_core::gsolve::GsolveConfig;
use plim_core::systems::{default_atlas_spec, preset, production_gsolve_config, AnchorPlan, AtlasSpec};
use serde::{Deserialize, Serialize};

use crate::fail::{config_error, Failure};

/// Everything one command needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: String,
    pub preset: Option<String>,
    pub initial: Option<Vec<f64>>,
    pub dt: f64,
    pub fine_dt: Option<f64>,
    pub horizon: f64,
    pub atlas: Option<PathBuf>,
    pub supplement: bool,
    pub supplement_threshold: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub generation: Generation,
    pub elastowave: Elastowave,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            system: "lorenz".into(),
            preset: None,
            initial: None,
            dt: 1e-3,
            fine_dt: None,
            horizon: 2.0,
            atlas: None,
            supplement: true,
            supplement_threshold: 0.5,
            seed: 0,
            out: PathBuf::from("plim-out"),
            generation: Generation::default(),
            elastowave: Elastowave::default(),
        }
    }
}

/// Overrides of the system's default atlas layout and solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Generation {
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub block_size: Option<Vec<f64>>,
    pub mesh: Option<Vec<usize>>,
    /// Eliminated-coordinate values placed at every block corner.
    pub corner_values: Option<Vec<Vec<f64>>>,
    /// Full fine states used as anchors in their own blocks.
    pub anchor_states: Option<Vec<Vec<f64>>>,
    /// Restrict generation to blocks the fine run visits up to `horizon`.
    pub visited_only: bool,
    pub keep_failed: bool,
    pub max_failures: Option<usize>,
    pub iters_per_temp: Option<usize>,
    pub cooling: Option<f64>,
    pub initial_step: Option<f64>,
    pub restarts: Option<usize>,
    pub accept_threshold: Option<f64>,
}

impl Default for Generation {
    fn default() -> Self {
        Generation {
            lower: None,
            upper: None,
            block_size: None,
            mesh: None,
            corner_values: None,
            anchor_states: None,
            visited_only: false,
            keep_failed: true,
            max_failures: None,
            iters_per_temp: None,
            cooling: None,
            initial_step: None,
            restarts: None,
            accept_threshold: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ElastowaveMode {
    #[default]
    Subdomain,
    Coupled,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Elastowave {
    pub mode: ElastowaveMode,
    pub subdomain: SubdomainExperiment,
    pub coupled: CoupledConfig,
    pub store: StoreConfig,
}

pub const SYSTEMS: &[&str] = &["lorenz", "hamiltonian4", "oscillator", "elastowave"];

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, Failure> {
        let text =
            std::fs::read_to_string(path).map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
    }

    /// Defaults for the system a preset belongs to.
    pub fn for_preset(name: &str) -> Result<RunConfig, Failure> {
        let p = preset(name).map_err(Failure::from)?;
        let mut cfg = RunConfig::for_system(p.system)?;
        cfg.preset = Some(p.name.into());
        Ok(cfg)
    }

    pub fn for_system(system: &str) -> Result<RunConfig, Failure> {
        let base = RunConfig::default();
        let cfg = match system {
            "lorenz" => RunConfig {
                preset: Some("L1".into()),
                ..base
            },
            "hamiltonian4" => RunConfig {
                system: system.into(),
                preset: Some("H2".into()),
                horizon: 20.0,
                ..base
            },
            "oscillator" => RunConfig {
                system: system.into(),
                preset: Some("C-Ex2".into()),
                horizon: 10.0 * std::f64::consts::PI,
                supplement: false,
                ..base
            },
            "elastowave" => RunConfig {
                system: system.into(),
                preset: None,
                supplement: false,
                ..base
            },
            other => return Err(config_error(format!("unknown system '{other}'"))),
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        if !SYSTEMS.contains(&self.system.as_str()) {
            return Err(config_error(format!("unknown system '{}'", self.system)));
        }
        if !(self.dt > 0.0 && self.horizon > 0.0) || self.fine_dt.is_some_and(|d| !(d > 0.0)) {
            return Err(config_error("dt and horizon must be positive"));
        }
        if self.system == "elastowave" {
            return Ok(());
        }
        if let Some(name) = &self.preset {
            let p = preset(name).map_err(Failure::from)?;
            if p.system != self.system {
                return Err(config_error(format!(
                    "preset {} belongs to {}, not {}",
                    p.name, p.system, self.system
                )));
            }
        }
        self.initial_state().map(|_| ())
    }

    /// The explicit initial condition wins over the preset.
    pub fn initial_state(&self) -> Result<Vec<f64>, Failure> {
        let dim = match self.system.as_str() {
            "lorenz" => 3,
            "hamiltonian4" => 4,
            _ => 2,
        };
        let f0 = match (&self.initial, &self.preset) {
            (Some(v), _) => v.clone(),
            (None, Some(name)) => preset(name).map_err(Failure::from)?.state.to_vec(),
            (None, None) => return Err(config_error("either preset or initial is required")),
        };
        if f0.len() != dim {
            return Err(config_error(format!(
                "{} needs a {dim}-component initial state",
                self.system
            )));
        }
        Ok(f0)
    }

    pub fn fine_step(&self) -> f64 {
        self.fine_dt.unwrap_or(self.dt)
    }

    pub fn atlas_spec(&self) -> Result<AtlasSpec, Failure> {
        let g = &self.generation;
        let mut spec = default_atlas_spec(&self.system).map_err(Failure::from)?;
        if let Some(v) = &g.lower {
            spec.lower = v.clone();
        }
        if let Some(v) = &g.upper {
            spec.upper = v.clone();
        }
        if let Some(v) = &g.block_size {
            spec.block_size = v.clone();
        }
        if let Some(v) = &g.mesh {
            spec.mesh = v.clone();
        }
        match (&g.corner_values, &g.anchor_states) {
            (Some(_), Some(_)) => return Err(config_error("give corner_values or anchor_states, not both")),
            (Some(v), None) => spec.anchors = AnchorPlan::Corners(v.clone()),
            (None, Some(v)) => spec.anchors = AnchorPlan::States(v.clone()),
            (None, None) => {}
        }
        Ok(spec)
    }

    pub fn gsolve_config(&self) -> GsolveConfig {
        let g = &self.generation;
        let mut cfg = production_gsolve_config(&self.system);
        cfg.anneal.seed = self.seed;
        if let Some(v) = g.iters_per_temp {
            cfg.anneal.iters_per_temp = v;
        }
        if let Some(v) = g.cooling {
            cfg.anneal.cooling = v;
        }
        if let Some(v) = g.initial_step {
            cfg.anneal.step = StepScale::Uniform(v);
        }
        if let Some(v) = g.restarts {
            cfg.anneal.restarts = v;
        }
        if g.accept_threshold.is_some() {
            cfg.accept_threshold = g.accept_threshold;
        }
        cfg
    }
}

/// Commented template with every default spelled out.
pub fn template(system: &str) -> Result<String, Failure> {
    let c = RunConfig::for_system(system)?;
    let opt = |s: &Option<String>| {
        s.as_ref()
            .map_or("# preset = \"L1\"".to_string(), |p| format!("preset = \"{p}\""))
    };
    let mut t = format!(
        r#"# plim run configuration.

# lorenz | hamiltonian4 | oscillator | elastowave
system = "{system}"

# Named initial condition: L1..L4 (lorenz), H1, H2 (hamiltonian4), C-Ex1, C-Ex2 (oscillator).
{preset}
# Explicit initial fine state; overrides the preset.
# initial = [0.0, 2.0, 8.0]

# Coarse step and horizon.
dt = {dt:e}
horizon = {horizon}
# Fine step for reference runs; defaults to dt.
# fine_dt = 1e-4

# Atlas file. Loaded when it exists, otherwise generated and written here.
# atlas = "lorenz.atlas"

# Solve and store a new sheet when no stored sheet lies within the threshold.
supplement = {supplement}
supplement_threshold = {thr}

# Base seed for annealing; sheet i uses seed + i.
seed = {seed}

out = "{out}"

[generation]
# Omitted keys fall back to the system's default atlas layout.
# lower = [-24.0, 0.0]
# upper = [24.0, 48.0]
# block_size = [4.0, 4.0]
# mesh = [6, 6]
# corner_values = [[-24.0], [-20.0]]
# anchor_states = [[8.0, 8.0, 24.0]]
visited_only = false
# Store best-effort sheets whose objective misses the acceptance threshold.
keep_failed = {keep}
# max_failures = 0
# iters_per_temp = 200
# cooling = 0.8
# initial_step = 10.0
# restarts = 3
# accept_threshold = 1e-3
"#,
        preset = opt(&c.preset),
        dt = c.dt,
        horizon = c.horizon,
        supplement = c.supplement,
        thr = c.supplement_threshold,
        seed = c.seed,
        out = c.out.display(),
        keep = c.generation.keep_failed,
    );
    if system == "elastowave" {
        let ew = toml::to_string(&Elastowave::default()).map_err(|e| config_error(e.to_string()))?;
        t.push_str("\n# mode = \"subdomain\" runs one accelerated sub-domain; \"coupled\" runs the bar.\n");
        t.push_str(
            &ew.replace("[subdomain", "[elastowave.subdomain")
                .replace("[coupled", "[elastowave.coupled")
                .replace("[store", "[elastowave.store")
                .replacen("mode =", "[elastowave]\nmode =", 1),
        );
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_parse_to_their_defaults() {
        for s in SYSTEMS {
            let text = template(s).unwrap();
            let parsed: RunConfig = toml::from_str(&text).unwrap();
            assert_eq!(parsed, RunConfig::for_system(s).unwrap(), "{s}");
            parsed.validate().unwrap();
        }
    }

    #[test]
    fn mismatched_preset_is_rejected() {
        let mut c = RunConfig::for_system("oscillator").unwrap();
        c.preset = Some("L1".into());
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sytem = \"lorenz\"").is_err());
    }

    #[test]
    fn generation_overrides_apply() {
        let mut c = RunConfig::for_system("lorenz").unwrap();
        c.generation.lower = Some(vec![6.0, 22.0]);
        c.generation.anchor_states = Some(vec![vec![8.0, 8.0, 24.0]]);
        let spec = c.atlas_spec().unwrap();
        assert_eq!(spec.lower, vec![6.0, 22.0]);
        assert_eq!(spec.anchors, AnchorPlan::States(vec![vec![8.0, 8.0, 24.0]]));
        c.generation.corner_values = Some(vec![vec![1.0]]);
        assert!(c.atlas_spec().is_err());
    }
}
