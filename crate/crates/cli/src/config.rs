//! Scenario files: a run configuration, the model, and the pipeline to run
//! on it. Presets are built here too; see [`preset`].

use serde::{Deserialize, Serialize};
use serde_json::Value;

use qmeter::mcwf::RunConfig;

/// Version stamped into every output header. Bump on any schema change of
/// the config or the data files.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Jump,
    Filtering,
}

impl Model {
    pub fn name(&self) -> &'static str {
        match self {
            Model::Jump => "jump",
            Model::Filtering => "filtering",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub preset: Option<String>,
    pub model: Model,
    pub run: RunConfig,
    pub n_traj: u64,
    #[serde(default = "default_bin_width")]
    pub bin_width: f64,
    pub pipeline: Pipeline,
}

fn default_bin_width() -> f64 {
    qmeter::stats::DEFAULT_BIN_WIDTH
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Pipeline {
    /// Trajectories plus optional analyses of the ensemble.
    Ensemble {
        #[serde(default)]
        stats: Option<StatsSpec>,
        /// Intensities and renewal report for the initial detector.
        #[serde(default)]
        renewal: bool,
        /// Keep only records whose first click lies in this polar sector
        /// (radians, 2D).
        #[serde(default)]
        sector: Option<[f64; 2]>,
    },
    /// No-click density snapshots of the initial state.
    Snapshots { times: Vec<f64> },
    /// First-click histogram against the renewal density.
    FirstClick { hist_t_max: f64 },
    /// Renewal mean-position curves and retardation fits for several rates.
    Retardation {
        gammas: Vec<f64>,
        intensity_t_max: f64,
        t_end: f64,
        fit_window: [f64; 2],
        cut_tol: f64,
        m_range: [i32; 2],
        #[serde(default)]
        momentum_check: Option<MomentumCheck>,
    },
    /// Dispersion scaling of both models over several lattice spacings.
    Scaling {
        spacings: Vec<f64>,
        models: Vec<Model>,
        fit_window: [f64; 2],
        filtering_dt_cap: f64,
        filtering_grid_points: usize,
    },
    /// Escape time against the rate at fixed velocity and against the
    /// velocity at fixed rate.
    EscapeSweep {
        gammas: Vec<f64>,
        velocity: f64,
        velocities: Vec<f64>,
        gamma: f64,
        intensity_t_max: f64,
    },
    /// Two meters under a frozen Hamiltonian against the closed form.
    TwoDetector { periods: f64, dt: f64 },
    /// Dense master equation against MCWF ensemble averages.
    LindbladCheck { ensembles: Vec<u64>, dt: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsSpec {
    /// Power-law fit window for the dispersions.
    #[serde(default)]
    pub fit_window: Option<[f64; 2]>,
    /// Also write the click-time histogram split by detector.
    #[serde(default)]
    pub click_histogram: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentumCheck {
    pub gamma: f64,
    pub n_traj: u64,
    pub t_max: f64,
    pub n_range: [i32; 2],
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown preset `{0}` (known: {known})", known = crate::presets::NAMES.join(", "))]
    UnknownPreset(String),
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("override `{0}` is not of the form KEY=VALUE")]
    OverrideSyntax(String),
    #[error("override key `{0}` does not exist in the configuration")]
    OverrideKey(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    pub fn from_value(value: Value) -> Result<Self, ConfigError> {
        serde_path_to_error::deserialize(value).map_err(|e| ConfigError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("scenario config serialises")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Invalid(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.n_traj == 0 {
            return Err(ConfigError::Invalid("n_traj must be at least 1".into()));
        }
        if !(self.bin_width > 0.0) {
            return Err(ConfigError::Invalid("bin_width must be positive".into()));
        }
        self.run
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("run: {e}")))
    }
}

/// One `KEY=VALUE` override. The key is a dotted path into the JSON form of
/// the config (`run.lattice.gamma0`, `run.lattice.extents.0.m`); the value
/// is parsed as JSON and taken as a bare string if that fails.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Override {
    pub key: String,
    pub value: Value,
}

impl std::str::FromStr for Override {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        let (key, raw) = s
            .split_once('=')
            .ok_or_else(|| ConfigError::OverrideSyntax(s.into()))?;
        if key.is_empty() {
            return Err(ConfigError::OverrideSyntax(s.into()));
        }
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
        Ok(Self {
            key: key.into(),
            value,
        })
    }
}

/// Apply overrides in order. Every key must already exist; fields left out
/// of a config file have to be written explicitly before they can be
/// overridden.
pub fn apply_overrides(
    config: &ScenarioConfig,
    overrides: &[Override],
) -> Result<ScenarioConfig, ConfigError> {
    let mut value = config.to_value();
    for o in overrides {
        let slot = o
            .key
            .split('.')
            .try_fold(&mut value, |v, seg| match v {
                Value::Object(map) => map.get_mut(seg),
                Value::Array(items) => seg
                    .parse::<usize>()
                    .ok()
                    .and_then(move |i| items.get_mut(i)),
                _ => None,
            })
            .ok_or_else(|| ConfigError::OverrideKey(o.key.clone()))?;
        *slot = o.value.clone();
    }
    ScenarioConfig::from_value(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_follow_dotted_paths() {
        let cfg = crate::presets::preset("fig4").unwrap();
        let o: Vec<Override> = [
            "run.lattice.gamma0=2.5",
            "n_traj=7",
            "run.lattice.extents.0.m=[0,3]",
        ]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
        let out = apply_overrides(&cfg, &o).unwrap();
        assert_eq!(out.run.lattice.gamma0, 2.5);
        assert_eq!(out.n_traj, 7);
        assert_eq!(out.run.lattice.extents[0].m, [0, 3]);
        assert_eq!(out.model, cfg.model);
    }

    #[test]
    fn bad_overrides_name_the_key() {
        let cfg = crate::presets::preset("fig4").unwrap();
        let err = apply_overrides(&cfg, &["run.nope=1".parse().unwrap()]).unwrap_err();
        assert!(matches!(err, ConfigError::OverrideKey(k) if k == "run.nope"));
        let err = apply_overrides(&cfg, &["run.t_max=\"soon\"".parse().unwrap()]).unwrap_err();
        assert!(err.to_string().starts_with("run.t_max"), "{err}");
        assert!("novalue".parse::<Override>().is_err());
    }

    #[test]
    fn schema_errors_carry_paths() {
        let mut v = crate::presets::preset("fig2-free").unwrap().to_value();
        v["run"]["lattice"]["gamma0"] = Value::String("fast".into());
        let err = ScenarioConfig::from_value(v).unwrap_err();
        assert!(err.to_string().starts_with("run.lattice.gamma0"), "{err}");
        let mut v = crate::presets::preset("fig2-free").unwrap().to_value();
        v["surplus"] = Value::Bool(true);
        assert!(ScenarioConfig::from_value(v).is_err());
    }

    #[test]
    fn configs_round_trip_through_json() {
        for name in crate::presets::NAMES {
            let cfg = crate::presets::preset(name).unwrap();
            let text = serde_json::to_string_pretty(&cfg).unwrap();
            assert_eq!(ScenarioConfig::from_json(&text).unwrap(), cfg, "{name}");
            cfg.validate().unwrap();
        }
    }
}
