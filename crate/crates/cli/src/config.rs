//! Config loading: TOML files with sections `plant`, `gains`, `learner`,
//! `sim`, `grid`, a built-in scenario selector, and dotted-path `--set`
//! overrides. Every scenario constant has a key.

use nalgebra::{DMatrix, DVector};
use ofrl::plant::{scenario_by_name, Scenario};
use ofrl::sim::SimConfig;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error("unknown scenario `{0}` (expected two_state or manipulator)")]
    UnknownScenario(String),
    #[error("invalid --set override `{0}` (expected key.path=value)")]
    BadOverride(String),
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    scenario: Option<String>,
    #[serde(default)]
    plant: PlantSection,
    #[serde(default)]
    gains: GainsSection,
    #[serde(default)]
    learner: LearnerSection,
    #[serde(default)]
    sim: SimSection,
    #[serde(default)]
    grid: GridSection,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct PlantSection {
    x0: Option<Vec<f64>>,
    xhat0: Option<Vec<f64>>,
    lower: Option<Vec<f64>>,
    upper: Option<Vec<f64>>,
    q_diag: Option<Vec<f64>>,
    r_diag: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct GainsSection {
    k: Option<f64>,
    alpha: Option<f64>,
    beta1: Option<f64>,
    kc: Option<f64>,
    ka1: Option<f64>,
    ka2: Option<f64>,
    beta: Option<f64>,
    gamma: Option<f64>,
    /// legacy name for the normalization gain; alias of `gamma`
    v: Option<f64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct LearnerSection {
    wc0: Option<Vec<f64>>,
    wa0: Option<Vec<f64>>,
    gamma0_scale: Option<f64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct SimSection {
    dt: Option<f64>,
    t_final: Option<f64>,
    log_decimation: Option<usize>,
    weight_cap: Option<f64>,
    barrier_margin: Option<f64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct GridSection {
    half_width: Option<f64>,
    points_per_axis: Option<usize>,
}

/// A fully resolved run setup.
pub struct RunSetup {
    pub scenario: Scenario,
    pub sim: SimConfig,
}

impl std::fmt::Debug for RunSetup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunSetup")
            .field("scenario", &self.scenario.name)
            .field("sim", &self.sim)
            .finish()
    }
}

/// Loads a config file, applies `--set key.path=value` overrides, and
/// resolves it against the named built-in scenario.
pub fn load_config(path: &str, sets: &[String]) -> Result<RunSetup, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_string(),
        source,
    })?;
    resolve_config(&text, sets)
}

/// Same as [`load_config`] but from an in-memory TOML string.
pub fn resolve_config(text: &str, sets: &[String]) -> Result<RunSetup, ConfigError> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    for set in sets {
        apply_override(&mut table, set)?;
    }
    let file: ConfigFile = table
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    build_setup(file)
}

fn apply_override(table: &mut toml::Table, set: &str) -> Result<(), ConfigError> {
    let (key, value) = set
        .split_once('=')
        .ok_or_else(|| ConfigError::BadOverride(set.to_string()))?;
    let parsed: toml::Table = format!("x = {value}")
        .parse()
        .or_else(|_| format!("x = \"{value}\"").parse())
        .map_err(|_| ConfigError::BadOverride(set.to_string()))?;
    let value = parsed["x"].clone();
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.is_empty() || parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::BadOverride(set.to_string()));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        cur = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| ConfigError::BadOverride(set.to_string()))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn check_positive(v: f64, key: &str) -> Result<(), ConfigError> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(ConfigError::Invalid {
            key: key.to_string(),
            reason: format!("must be positive and finite, got {v}"),
        });
    }
    Ok(())
}

fn check_dim(len: usize, expected: usize, key: &str) -> Result<(), ConfigError> {
    if len != expected {
        return Err(ConfigError::Invalid {
            key: key.to_string(),
            reason: format!("expected {expected} entries, got {len}"),
        });
    }
    Ok(())
}

fn build_setup(file: ConfigFile) -> Result<RunSetup, ConfigError> {
    let name = file.scenario.as_deref().unwrap_or("two_state");
    let mut sc =
        scenario_by_name(name).ok_or_else(|| ConfigError::UnknownScenario(name.to_string()))?;
    let dim = 2 * sc.plant.n;
    let l = sc.basis.len();

    if let (Some(lower), Some(upper)) = (&file.plant.lower, &file.plant.upper) {
        check_dim(lower.len(), dim, "plant.lower")?;
        check_dim(upper.len(), dim, "plant.upper")?;
        for i in 0..dim {
            if !(lower[i] < 0.0 && 0.0 < upper[i]) {
                return Err(ConfigError::Invalid {
                    key: "plant.lower/plant.upper".to_string(),
                    reason: format!("interval {i} must strictly contain 0"),
                });
            }
        }
        sc.plant.limits = ofrl::BarrierLimits::from_bounds(lower, upper);
    } else if file.plant.lower.is_some() || file.plant.upper.is_some() {
        return Err(ConfigError::Invalid {
            key: "plant.lower/plant.upper".to_string(),
            reason: "must be overridden together".to_string(),
        });
    }

    if let Some(x0) = &file.plant.x0 {
        check_dim(x0.len(), dim, "plant.x0")?;
        sc.x0 = DVector::from_vec(x0.clone());
    }
    if let Some(xhat0) = &file.plant.xhat0 {
        check_dim(xhat0.len(), dim, "plant.xhat0")?;
        sc.xhat0 = DVector::from_vec(xhat0.clone());
    }
    for (v, key) in [(&sc.x0, "plant.x0"), (&sc.xhat0, "plant.xhat0")] {
        for i in 0..dim {
            let p = sc.plant.limits.pair(i);
            if !(v[i] > p.lower && v[i] < p.upper) {
                return Err(ConfigError::Invalid {
                    key: key.to_string(),
                    reason: format!(
                        "component {i} = {} outside the open interval ({}, {})",
                        v[i], p.lower, p.upper
                    ),
                });
            }
        }
    }

    if let Some(qd) = &file.plant.q_diag {
        check_dim(qd.len(), dim, "plant.q_diag")?;
        for (i, v) in qd.iter().enumerate() {
            check_positive(*v, &format!("plant.q_diag[{i}]"))?;
        }
        sc.q = DMatrix::from_diagonal(&DVector::from_vec(qd.clone()));
    }
    if let Some(rd) = &file.plant.r_diag {
        check_dim(rd.len(), sc.plant.m, "plant.r_diag")?;
        for (i, v) in rd.iter().enumerate() {
            check_positive(*v, &format!("plant.r_diag[{i}]"))?;
        }
        sc.r = DMatrix::from_diagonal(&DVector::from_vec(rd.clone()));
    }

    let g = &file.gains;
    if g.gamma.is_some() && g.v.is_some() {
        return Err(ConfigError::Invalid {
            key: "gains.v".to_string(),
            reason: "set either gains.gamma or its alias gains.v, not both".to_string(),
        });
    }
    let gamma_src = g.gamma.or(g.v);
    let pairs: [(&Option<f64>, &str, &mut f64); 8] = [
        (&g.k, "gains.k", &mut sc.gains.k),
        (&g.alpha, "gains.alpha", &mut sc.gains.alpha),
        (&g.beta1, "gains.beta1", &mut sc.gains.beta1),
        (&g.kc, "gains.kc", &mut sc.gains.kc),
        (&g.ka1, "gains.ka1", &mut sc.gains.ka1),
        (&g.ka2, "gains.ka2", &mut sc.gains.ka2),
        (&g.beta, "gains.beta", &mut sc.gains.beta),
        (&gamma_src, "gains.gamma", &mut sc.gains.gamma),
    ];
    for (src, key, dst) in pairs {
        if let Some(v) = src {
            check_positive(*v, key)?;
            *dst = *v;
        }
    }
    if sc.gains.beta1 <= sc.gains.alpha {
        eprintln!(
            "warning: gains.beta1 = {} <= gains.alpha = {}; the estimator stability \
             condition beta1 > alpha does not hold",
            sc.gains.beta1, sc.gains.alpha
        );
    }

    if let Some(wc0) = &file.learner.wc0 {
        check_dim(wc0.len(), l, "learner.wc0")?;
        sc.wc0 = DVector::from_vec(wc0.clone());
    }
    if let Some(wa0) = &file.learner.wa0 {
        check_dim(wa0.len(), l, "learner.wa0")?;
        sc.wa0 = DVector::from_vec(wa0.clone());
    }
    if let Some(scale) = file.learner.gamma0_scale {
        check_positive(scale, "learner.gamma0_scale")?;
        sc.gamma0 = DMatrix::identity(l, l) * scale;
    }

    if let Some(hw) = file.grid.half_width {
        check_positive(hw, "grid.half_width")?;
        sc.grid.half_width = hw;
    }
    if let Some(p) = file.grid.points_per_axis {
        if p < 2 {
            return Err(ConfigError::Invalid {
                key: "grid.points_per_axis".to_string(),
                reason: format!("must be at least 2, got {p}"),
            });
        }
        sc.grid.points_per_axis = p;
    }

    let mut sim = default_sim(&sc.name);
    let s = &file.sim;
    if let Some(dt) = s.dt {
        check_positive(dt, "sim.dt")?;
        sim.dt = dt;
    }
    if let Some(t) = s.t_final {
        check_positive(t, "sim.t_final")?;
        sim.t_final = t;
    }
    if let Some(d) = s.log_decimation {
        if d == 0 {
            return Err(ConfigError::Invalid {
                key: "sim.log_decimation".to_string(),
                reason: "must be at least 1".to_string(),
            });
        }
        sim.log_decimation = d;
    }
    if let Some(cap) = s.weight_cap {
        check_positive(cap, "sim.weight_cap")?;
        sim.weight_cap = cap;
    }
    if let Some(m) = s.barrier_margin {
        check_positive(m, "sim.barrier_margin")?;
        sim.barrier_margin = m;
    }

    Ok(RunSetup { scenario: sc, sim })
}

/// Scenario-dependent integration defaults: the manipulator's initial
/// transient has a thin boundary layer that dt = 10⁻³ steps across, so it
/// defaults to dt = 10⁻⁴.
pub fn default_sim(scenario: &str) -> SimConfig {
    let mut sim = SimConfig::default();
    if scenario == "manipulator" {
        sim.dt = 1e-4;
    }
    sim
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_two_state() {
        let setup = resolve_config("", &[]).unwrap();
        assert_eq!(setup.scenario.name, "two_state");
        assert_eq!(setup.sim.dt, 1e-3);
        assert_eq!(setup.scenario.gains.kc, 5.0);
    }

    #[test]
    fn manipulator_gets_finer_default_dt() {
        let setup = resolve_config("scenario = \"manipulator\"", &[]).unwrap();
        assert_eq!(setup.sim.dt, 1e-4);
    }

    #[test]
    fn sections_override_scenario_constants() {
        let text = r#"
scenario = "two_state"
[gains]
kc = 60.0
[sim]
dt = 0.0005
[plant]
x0 = [-1.0, 1.0]
"#;
        let setup = resolve_config(text, &[]).unwrap();
        assert_eq!(setup.scenario.gains.kc, 60.0);
        assert_eq!(setup.sim.dt, 5e-4);
        assert_eq!(setup.scenario.x0[0], -1.0);
    }

    #[test]
    fn set_overrides_apply_after_file() {
        let setup = resolve_config(
            "[gains]\nkc = 60.0",
            &["gains.kc=5.5".into(), "sim.t_final=2.0".into()],
        )
        .unwrap();
        assert_eq!(setup.scenario.gains.kc, 5.5);
        assert_eq!(setup.sim.t_final, 2.0);
    }

    #[test]
    fn v_is_an_alias_for_gamma() {
        let setup = resolve_config("[gains]\nv = 3.0", &[]).unwrap();
        assert_eq!(setup.scenario.gains.gamma, 3.0);
        let err = resolve_config("[gains]\nv = 3.0\ngamma = 2.0", &[]).unwrap_err();
        assert!(err.to_string().contains("gains.v"));
    }

    #[test]
    fn negative_dt_rejected_naming_key() {
        let err = resolve_config("[sim]\ndt = -0.001", &[]).unwrap_err();
        assert!(err.to_string().contains("sim.dt"), "got: {err}");
    }

    #[test]
    fn unknown_scenario_rejected() {
        let err = resolve_config("scenario = \"pendulum\"", &[]).unwrap_err();
        assert!(err.to_string().contains("pendulum"));
    }

    #[test]
    fn initial_condition_outside_limits_rejected() {
        let err = resolve_config("[plant]\nx0 = [8.0, 0.0]", &[]).unwrap_err();
        assert!(err.to_string().contains("plant.x0"), "got: {err}");
    }

    #[test]
    fn weight_dimension_mismatch_rejected() {
        let err = resolve_config("[learner]\nwc0 = [1.0, 2.0]", &[]).unwrap_err();
        assert!(err.to_string().contains("learner.wc0"), "got: {err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(resolve_config("[sim]\ndtt = 0.1", &[]).is_err());
    }

    #[test]
    fn bad_override_rejected() {
        assert!(resolve_config("", &["gains.kc".into()]).is_err());
    }
}
