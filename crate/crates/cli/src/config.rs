//! Experiment configuration file.
//!
//! A single TOML file with up to four sections. Each subcommand checks that the
//! sections it needs are present:
//!
//! | Section | Used by |
//! |---------|---------|
//! | `[network]` | simulate, sweep --simulate, measure-het |
//! | `[objective]` | simulate, sweep --simulate, measure-het |
//! | `[run]` | simulate, sweep --simulate |
//! | `[bounds]` | bounds, sweep |

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use semidec_core::bounds::BoundInputs;
use semidec_core::engine::SimConfig;
use semidec_core::objectives::{HeterogeneityConfig, InterSplit, IntraSplit, ObjectiveKind, DEFAULT_PROBES};
use semidec_core::topology::TopologyKind;
use semidec_core::Primitive;

pub const SEED_ENV: &str = "SEMIDEC_SEED";

/// Invalid or unreadable configuration; maps to exit status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<Network>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<Objective>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<Run>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundInputs>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyName {
    Ring,
    Grid,
    Complete,
    Regular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Network {
    pub component_sizes: Vec<usize>,
    pub topology: TopologyName,
    /// Only for `regular`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<usize>,
    /// Redraw random-regular graphs every round.
    #[serde(default)]
    pub time_varying: bool,
}

impl Network {
    pub fn n(&self) -> usize {
        self.component_sizes.iter().sum()
    }

    pub fn kind(&self) -> Result<TopologyKind, ConfigError> {
        match (self.topology, self.degree) {
            (TopologyName::Ring, _) => Ok(TopologyKind::Ring),
            (TopologyName::Grid, _) => Ok(TopologyKind::Grid2D),
            (TopologyName::Complete, _) => Ok(TopologyKind::Complete),
            (TopologyName::Regular, Some(degree)) => Ok(TopologyKind::RandomRegular { degree }),
            (TopologyName::Regular, None) => Err(invalid("network.degree is required for topology = \"regular\"")),
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.component_sizes.is_empty() || self.component_sizes.contains(&0) {
            return Err(invalid(
                "network.component_sizes must be a non-empty list of positive sizes",
            ));
        }
        self.kind().map(|_| ())
    }
}

fn default_curvature() -> f64 {
    1.0
}

fn default_classes() -> usize {
    4
}

fn default_samples() -> usize {
    20
}

fn default_probes() -> usize {
    DEFAULT_PROBES
}

fn iid_intra() -> IntraSplit {
    IntraSplit::Iid
}

fn iid_inter() -> InterSplit {
    InterSplit::Iid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Objective {
    pub kind: ObjectiveKind,
    /// Parameter dimension (quadratic) or feature dimension (logistic).
    pub dim: usize,
    /// Quadratic curvature `L`.
    #[serde(default = "default_curvature")]
    pub curvature: f64,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_samples")]
    pub samples_per_device: usize,
    #[serde(default)]
    pub sigma_bar: f64,
    /// Seed of the problem instance, shared by all run seeds.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "iid_intra")]
    pub intra: IntraSplit,
    #[serde(default = "iid_inter")]
    pub inter: InterSplit,
    /// Probe points for heterogeneity estimation.
    #[serde(default = "default_probes")]
    pub probes: usize,
}

impl Objective {
    pub fn heterogeneity(&self) -> HeterogeneityConfig {
        HeterogeneityConfig {
            intra: self.intra,
            inter: self.inter,
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.dim == 0 {
            return Err(invalid("objective.dim must be at least 1"));
        }
        if !(self.sigma_bar >= 0.0 && self.sigma_bar.is_finite()) {
            return Err(invalid(format!(
                "objective.sigma_bar = {} must be finite and ≥ 0",
                self.sigma_bar
            )));
        }
        if !(self.curvature > 0.0 && self.curvature.is_finite()) {
            return Err(invalid(format!("objective.curvature = {} must be > 0", self.curvature)));
        }
        if self.probes == 0 {
            return Err(invalid("objective.probes must be at least 1"));
        }
        Ok(())
    }
}

fn default_primitives() -> Vec<Primitive> {
    Primitive::BOTH.to_vec()
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Run {
    #[serde(default = "default_primitives")]
    pub primitives: Vec<Primitive>,
    pub k: usize,
    pub h: usize,
    pub rounds: usize,
    pub eta: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "one")]
    pub trace_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| invalid(format!("{}: {}", path.display(), e.0)))
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        if let Some(net) = &cfg.network {
            net.validate()?;
        }
        if let Some(obj) = &cfg.objective {
            obj.validate()?;
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    pub fn network(&self) -> Result<&Network, ConfigError> {
        self.network
            .as_ref()
            .ok_or_else(|| invalid("missing [network] section"))
    }

    pub fn objective(&self) -> Result<&Objective, ConfigError> {
        self.objective
            .as_ref()
            .ok_or_else(|| invalid("missing [objective] section"))
    }

    pub fn run(&self) -> Result<&Run, ConfigError> {
        self.run.as_ref().ok_or_else(|| invalid("missing [run] section"))
    }

    pub fn bounds(&self) -> Result<&BoundInputs, ConfigError> {
        self.bounds.as_ref().ok_or_else(|| invalid("missing [bounds] section"))
    }

    /// Checks `[run]` against `[network]` and `[objective]`, naming the
    /// offending field.
    pub fn check_run(&self) -> Result<(), ConfigError> {
        let net = self.network()?;
        let obj = self.objective()?;
        let run = self.run()?;
        let n = net.n();
        if run.k == 0 || run.k > n {
            return Err(invalid(format!(
                "run.k = {} must lie in 1..={n} (n = sum of network.component_sizes)",
                run.k
            )));
        }
        if run.h == 0 {
            return Err(invalid("run.h must be at least 1"));
        }
        if run.rounds == 0 {
            return Err(invalid("run.rounds must be at least 1"));
        }
        if !(run.eta >= 0.0 && run.eta.is_finite()) {
            return Err(invalid(format!("run.eta = {} must be finite and ≥ 0", run.eta)));
        }
        if run.trace_every == 0 {
            return Err(invalid("run.trace_every must be at least 1"));
        }
        if run.primitives.is_empty() {
            return Err(invalid("run.primitives must name at least one of s2s, s2a"));
        }
        if run.seeds.is_empty() {
            return Err(invalid("run.seeds must contain at least one seed"));
        }
        if let Some(x0) = &run.x0 {
            let dim = match obj.kind {
                ObjectiveKind::Quadratic => obj.dim,
                ObjectiveKind::Logistic => obj.dim * obj.classes,
            };
            if x0.len() != dim {
                return Err(invalid(format!("run.x0 has {} entries, the model has {dim}", x0.len())));
            }
        }
        Ok(())
    }

    /// One engine configuration per (primitive, seed), primitive-major.
    pub fn sim_configs(&self, seeds: &[u64]) -> Result<Vec<SimConfig>, ConfigError> {
        self.check_run()?;
        let net = self.network()?;
        let run = self.run()?;
        let topology = net.kind()?;
        Ok(run
            .primitives
            .iter()
            .flat_map(|&primitive| {
                seeds.iter().map(move |&seed| SimConfig {
                    component_sizes: net.component_sizes.clone(),
                    topology,
                    primitive,
                    k: run.k,
                    h: run.h,
                    rounds: run.rounds,
                    eta: run.eta,
                    seed,
                    time_varying: net.time_varying,
                    trace_every: run.trace_every,
                    x0: run.x0.clone(),
                })
            })
            .collect())
    }
}

/// `SEMIDEC_SEED` as a comma-separated seed list, if set.
pub fn seed_override(value: Option<&str>) -> Result<Option<Vec<u64>>, ConfigError> {
    let Some(v) = value else { return Ok(None) };
    let seeds = v
        .split(',')
        .map(|s| s.trim().parse::<u64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| invalid(format!("{SEED_ENV}={v:?} is not a comma-separated list of seeds: {e}")))?;
    if seeds.is_empty() {
        return Err(invalid(format!("{SEED_ENV} is empty")));
    }
    Ok(Some(seeds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use semidec_core::bounds::Regime;

    const FULL: &str = r#"
[network]
component_sizes = [10, 10]
topology = "ring"

[objective]
kind = "quadratic"
dim = 4
sigma_bar = 1.0
intra = { split = "offset_scale", scale = 0.0 }
inter = { split = "offset_scale", scale = 5.0 }

[run]
primitives = ["s2s", "s2a"]
k = 4
h = 5
rounds = 20
eta = 0.05
seeds = [0, 1, 2]

[bounds]
n = 100
k = 20
h = 5
p = 1.0
L = 1.0
sigma_bar = 0.0
zeta_intra = 1.0
zeta_inter = 1.0
epsilon = 1e-5
f0 = 1.0
regime = "non_convex"
"#;

    #[test]
    fn full_config_parses() {
        let cfg = Config::parse(FULL).unwrap();
        let obj = cfg.objective().unwrap();
        assert_eq!(obj.inter, InterSplit::OffsetScale { scale: 5.0 });
        assert_eq!(obj.probes, DEFAULT_PROBES);
        assert_eq!(cfg.bounds().unwrap().regime, Regime::NonConvex);
        assert_eq!(cfg.sim_configs(&[0, 1, 2]).unwrap().len(), 6);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = Config::parse(FULL).unwrap();
        assert_eq!(Config::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = Config::parse("[run]\nk = 1\nh = 1\nrounds = 1\neta = 0.1\nspeed = 3\n").unwrap_err();
        assert!(err.0.contains("speed"), "{err}");
    }

    #[test]
    fn k_above_n_names_the_field() {
        let text = FULL.replace("k = 4", "k = 21");
        let err = Config::parse(&text).unwrap().check_run().unwrap_err();
        assert!(err.0.contains("run.k"), "{err}");
    }

    #[test]
    fn regular_needs_a_degree() {
        let text = FULL.replace("topology = \"ring\"", "topology = \"regular\"");
        assert!(Config::parse(&text).is_err());
        let text = FULL.replace("topology = \"ring\"", "topology = \"regular\"\ndegree = 3");
        let cfg = Config::parse(&text).unwrap();
        assert_eq!(
            cfg.network().unwrap().kind().unwrap(),
            TopologyKind::RandomRegular { degree: 3 }
        );
    }

    #[test]
    fn seed_override_parses_lists() {
        assert_eq!(seed_override(None).unwrap(), None);
        assert_eq!(seed_override(Some("7")).unwrap(), Some(vec![7]));
        assert_eq!(seed_override(Some("1, 2,3")).unwrap(), Some(vec![1, 2, 3]));
        assert!(seed_override(Some("one")).is_err());
    }
}
