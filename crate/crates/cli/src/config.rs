//! Scenario files: JSON with scalar-or-array market parameters.

use std::fmt;
use std::path::{Path, PathBuf};

use mfg_consume_core::montecarlo::StrategyBounds;
use mfg_consume_core::{AgentType, Bounds, Error as CoreError, GridCurve, Population, TimeGrid};
use serde::Deserialize;
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {message} (key `{key}`, line {line}, column {column})", .path.display())]
    Parse {
        path: PathBuf,
        key: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{}: {source}", .path.display())]
    Structural {
        path: PathBuf,
        #[source]
        source: Structural,
    },
    #[error("{}: population violates its standing assumptions: {}", .path.display(), list(.violations))]
    Invalid {
        path: PathBuf,
        violations: Vec<ViolationEntry>,
    },
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Structural(pub String);

/// One assumption failure, with the offending type's label.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ViolationEntry {
    pub type_index: usize,
    pub type_name: String,
    pub rule: &'static str,
    pub value: f64,
}

impl fmt::Display for ViolationEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "type {} ({}) breaks {} with value {}",
            self.type_index, self.type_name, self.rule, self.value
        )
    }
}

fn list(v: &[ViolationEntry]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Param {
    Scalar(f64),
    Curve(Vec<f64>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawType {
    name: Option<String>,
    weight: Option<f64>,
    #[serde(default = "one")]
    x0: f64,
    gamma: f64,
    #[serde(default)]
    theta: f64,
    #[serde(default = "one")]
    alpha: f64,
    h: Param,
    sigma: Param,
    #[serde(default = "zero_param")]
    sigma0: Param,
}

fn one() -> f64 {
    1.0
}

fn zero_param() -> Param {
    Param::Scalar(0.0)
}

#[derive(Debug, Clone, Copy, Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsConfig {
    pub gamma_lb: f64,
    pub sigma_lb: f64,
    pub c_min: f64,
    pub c_max: f64,
    pub pi_cap: f64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        let b = Bounds::default();
        let s = StrategyBounds::default();
        Self {
            gamma_lb: b.gamma_lb,
            sigma_lb: b.sigma_lb,
            c_min: s.c_min,
            c_max: s.c_max,
            pi_cap: s.pi_cap,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub n_samples: usize,
    pub n_agents: usize,
    pub n_w0_paths: usize,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_samples: 100_000,
            n_agents: 100_000,
            n_w0_paths: 3,
            seed: 0,
            stratified: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub riccati_tol: f64,
    pub residual_tol: f64,
    pub drift_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            riccati_tol: 1e-6,
            residual_tol: 1e-4,
            drift_tol: 1e-10,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    horizon: f64,
    #[serde(default = "default_steps")]
    n_steps: usize,
    population: Vec<RawType>,
    #[serde(default)]
    bounds: BoundsConfig,
    #[serde(default)]
    mc: McConfig,
    #[serde(default)]
    tolerances: Tolerances,
    output: Option<PathBuf>,
}

fn default_steps() -> usize {
    500
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub samples: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub source: PathBuf,
    pub sha256: String,
    pub population: Population,
    pub type_names: Vec<String>,
    pub strategy_bounds: StrategyBounds,
    pub mc: McConfig,
    pub tolerances: Tolerances,
    pub output: PathBuf,
}

impl ScenarioConfig {
    pub fn grid(&self) -> TimeGrid {
        self.population.grid()
    }
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ScenarioConfig, ConfigError> {
    let bytes = std::fs::read(path).map_err(|source| ConfigError::Io {
        path: path.into(),
        source,
    })?;
    let text = String::from_utf8_lossy(&bytes);
    let mut de = serde_json::Deserializer::from_str(&text);
    let raw: RawConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let key = e.path().to_string();
        let inner = e.into_inner();
        ConfigError::Parse {
            path: path.into(),
            key,
            line: inner.line(),
            column: inner.column(),
            message: inner.to_string(),
        }
    })?;
    let structural = |msg: String| ConfigError::Structural {
        path: path.into(),
        source: Structural(msg),
    };
    let sha256 = Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    build(raw, overrides, path, sha256)
        .map_err(structural)?
        .validated(path)
}

fn positive(name: &str, v: f64) -> Result<(), String> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(format!("{name} must be positive and finite, got {v}"))
    }
}

fn build(
    raw: RawConfig,
    ov: &Overrides,
    path: &Path,
    sha256: String,
) -> Result<ScenarioConfig, String> {
    positive("horizon", raw.horizon)?;
    if raw.n_steps == 0 {
        return Err("n_steps must be at least 1".into());
    }
    let t = raw.tolerances;
    positive("tolerances.riccati_tol", t.riccati_tol)?;
    positive("tolerances.residual_tol", t.residual_tol)?;
    positive("tolerances.drift_tol", t.drift_tol)?;
    let b = raw.bounds;
    positive("bounds.gamma_lb", b.gamma_lb)?;
    positive("bounds.sigma_lb", b.sigma_lb)?;
    positive("bounds.c_min", b.c_min)?;
    positive("bounds.pi_cap", b.pi_cap)?;
    if !(b.c_max > b.c_min) {
        return Err(format!(
            "bounds.c_max ({}) must exceed bounds.c_min ({})",
            b.c_max, b.c_min
        ));
    }
    if raw.population.is_empty() {
        return Err("population is empty".into());
    }

    let file_grid = TimeGrid::new(raw.horizon, raw.n_steps).map_err(|e| e.to_string())?;
    let grid = match ov.steps {
        Some(n) => TimeGrid::new(raw.horizon, n).map_err(|e| e.to_string())?,
        None => file_grid,
    };
    let n_types = raw.population.len();
    let specified: Vec<Option<f64>> = raw.population.iter().map(|t| t.weight).collect();
    if specified.iter().any(Option::is_some) && specified.iter().any(Option::is_none) {
        return Err("give a weight for every type or for none".into());
    }

    let mut types = Vec::with_capacity(n_types);
    let mut names = Vec::with_capacity(n_types);
    for (k, ty) in raw.population.into_iter().enumerate() {
        let name = ty.name.clone().unwrap_or_else(|| format!("type{k}"));
        let curve = |key: &str, p: &Param| -> Result<GridCurve, String> {
            match p {
                Param::Scalar(v) => Ok(GridCurve::constant(grid, *v)),
                Param::Curve(values) => {
                    if values.len() != file_grid.len() {
                        return Err(format!(
                            "population[{k}].{key} has {} entries, expected n_steps + 1 = {}",
                            values.len(),
                            file_grid.len()
                        ));
                    }
                    let c = GridCurve::new(file_grid, values.clone())
                        .map_err(|e| format!("population[{k}].{key}: {e}"))?;
                    if grid == file_grid {
                        Ok(c)
                    } else {
                        Ok(GridCurve::from_fn(grid, |t| c.eval(t).unwrap_or(f64::NAN)))
                    }
                }
            }
        };
        types.push(AgentType {
            weight: ty.weight.unwrap_or(1.0 / n_types as f64),
            x0: ty.x0,
            gamma: ty.gamma,
            theta: ty.theta,
            alpha: ty.alpha,
            h: curve("h", &ty.h)?,
            sigma: curve("sigma", &ty.sigma)?,
            sigma0: curve("sigma0", &ty.sigma0)?,
        });
        names.push(name);
    }

    let population = Population::new(
        types,
        grid,
        Bounds {
            gamma_lb: b.gamma_lb,
            sigma_lb: b.sigma_lb,
        },
    )
    .map_err(|e| e.to_string())?;
    let mut mc = raw.mc;
    if let Some(s) = ov.seed {
        mc.seed = s;
    }
    if let Some(n) = ov.samples {
        mc.n_samples = n;
    }
    let output = ov.out.clone().or(raw.output).unwrap_or_else(|| {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".into());
        PathBuf::from("out").join(stem)
    });
    Ok(ScenarioConfig {
        source: path.into(),
        sha256,
        population,
        type_names: names,
        strategy_bounds: StrategyBounds {
            c_min: b.c_min,
            c_max: b.c_max,
            pi_cap: b.pi_cap,
        },
        mc,
        tolerances: t,
        output,
    })
}

impl ScenarioConfig {
    fn validated(self, path: &Path) -> Result<Self, ConfigError> {
        let report = self.population.validate();
        if report.ok() {
            return Ok(self);
        }
        let violations = report
            .violations
            .iter()
            .map(|v| ViolationEntry {
                type_index: v.type_index,
                type_name: self.type_names[v.type_index].clone(),
                rule: v.rule.as_str(),
                value: v.value,
            })
            .collect();
        Err(ConfigError::Invalid {
            path: path.into(),
            violations,
        })
    }
}

/// Turns a core validation failure into the same entries a config error uses.
pub fn violations_of(err: &CoreError, names: &[String]) -> Option<Vec<ViolationEntry>> {
    match err {
        CoreError::Invalid(r) => Some(
            r.violations
                .iter()
                .map(|v| ViolationEntry {
                    type_index: v.type_index,
                    type_name: names.get(v.type_index).cloned().unwrap_or_default(),
                    rule: v.rule.as_str(),
                    value: v.value,
                })
                .collect(),
        ),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn load(text: &str) -> Result<ScenarioConfig, ConfigError> {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        load_config(f.path(), &Overrides::default())
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg =
            load(r#"{"horizon": 1, "population": [{"gamma": 0.5, "h": 0.05, "sigma": 0.2}]}"#)
                .unwrap();
        assert_eq!(cfg.grid().n_steps(), 500);
        let ty = cfg.population.agent(0);
        assert_eq!((ty.weight, ty.x0, ty.theta, ty.alpha), (1.0, 1.0, 0.0, 1.0));
        assert!(ty.sigma0.values().iter().all(|&v| v == 0.0));
        assert_eq!(ty.h.values().len(), 501);
        assert_eq!(cfg.mc.n_samples, 100_000);
        assert_eq!(cfg.tolerances.residual_tol, 1e-4);
        assert_eq!(cfg.type_names, ["type0"]);
    }

    #[test]
    fn gamma_zero_names_type_and_rule() {
        let err = load(r#"{"horizon": 1, "population": [{"name": "a", "gamma": 0.5, "weight": 0.5, "h": 0.05, "sigma": 0.2},
            {"name": "b", "gamma": 0.0, "weight": 0.5, "h": 0.05, "sigma": 0.2}]}"#)
        .unwrap_err();
        let ConfigError::Invalid { violations, .. } = &err else {
            panic!("{err}")
        };
        assert!(violations
            .iter()
            .any(|v| v.type_index == 1 && v.type_name == "b" && v.rule == "gamma_nonzero"));
        assert!(err.to_string().contains("gamma_nonzero"));
    }

    #[test]
    fn wrong_curve_length_is_structural() {
        let err = load(r#"{"horizon": 1, "n_steps": 4, "population": [{"gamma": 0.5, "h": [0.1, 0.1, 0.1], "sigma": 0.2}]}"#)
            .unwrap_err();
        assert!(matches!(err, ConfigError::Structural { .. }), "{err}");
        assert!(err.to_string().contains("population[0].h"));
    }

    #[test]
    fn parse_error_reports_key_and_line() {
        let err = load(
            "{\"horizon\": 1,\n \"population\": [{\"gamma\": \"x\", \"h\": 0.1, \"sigma\": 0.2}]}",
        )
        .unwrap_err();
        let ConfigError::Parse { key, line, .. } = &err else {
            panic!("{err}")
        };
        assert_eq!(key, "population[0].gamma");
        assert_eq!(*line, 2);
    }

    #[test]
    fn nonpositive_tolerance_rejected() {
        let err = load(r#"{"horizon": 1, "tolerances": {"drift_tol": 0}, "population": [{"gamma": 0.5, "h": 0.05, "sigma": 0.2}]}"#)
            .unwrap_err();
        assert!(err.to_string().contains("drift_tol"));
    }

    #[test]
    fn curves_resample_on_step_override() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(br#"{"horizon": 1, "n_steps": 2, "population": [{"gamma": 0.5, "h": [0.0, 0.1, 0.4], "sigma": 0.2}]}"#)
            .unwrap();
        let cfg = load_config(
            f.path(),
            &Overrides {
                steps: Some(4),
                ..Default::default()
            },
        )
        .unwrap();
        let h = cfg.population.agent(0).h.values().to_vec();
        let want = [0.0, 0.05, 0.1, 0.25, 0.4];
        assert!(
            h.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-15),
            "{h:?}"
        );
    }
}
