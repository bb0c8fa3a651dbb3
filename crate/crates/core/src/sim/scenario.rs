//! Scenario files and dotted-path overrides.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::constraints::{BarrierGains, GraspMargins, WorkspaceBox};
use crate::dynamics::ModelFile;
use crate::error::{Error, Result};
use crate::geometry::BoxFace;
use crate::qp::InfeasiblePolicy;

pub const SCHEMA_VERSION: u32 = 1;

/// Where the hand-object model comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSource {
    /// Built-in preset name.
    Preset(String),
    /// Model file path, relative paths resolved against the scenario file.
    Path(PathBuf),
}

/// Gain matrix given as a scalar multiple of identity, a diagonal, or a
/// full 6x6 matrix (rows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GainSpec {
    Scalar(f64),
    Diagonal([f64; 6]),
    Full([[f64; 6]; 6]),
}

impl GainSpec {
    pub fn matrix(&self) -> Matrix6<f64> {
        match self {
            GainSpec::Scalar(k) => Matrix6::identity() * *k,
            GainSpec::Diagonal(d) => Matrix6::from_diagonal(&Vector6::from_column_slice(d)),
            GainSpec::Full(r) => Matrix6::from_fn(|i, j| r[i][j]),
        }
    }
}

/// Nominal manipulation controller settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub kp: GainSpec,
    pub ki: GainSpec,
    pub kd: GainSpec,
    pub kf: f64,
    /// Componentwise bound on the integral accumulator.
    #[serde(default = "default_integral_limit")]
    pub integral_limit: f64,
    /// Projection `P`; identity when absent.
    #[serde(default)]
    pub projection: Option<[[f64; 6]; 6]>,
}

fn default_integral_limit() -> f64 {
    3.0
}

/// Initial grasp: object pose plus the object face and fingertip contact
/// coordinates of every finger; joint angles are solved for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialGrasp {
    pub object_position: [f64; 3],
    /// Roll, pitch, yaw (rad).
    pub object_euler: [f64; 3],
    pub faces: Vec<BoxFace>,
    pub fingertip_coords: Vec<[f64; 2]>,
    /// Starting joint angles for the solver, finger after finger.
    pub seed_q: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMode {
    /// Virtual-frame object estimate, offset object inertia, flat object
    /// surface.
    Blind,
    /// Controller uses the true model and state.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSpec {
    pub mode: EstimateMode,
    /// Added to the true object mass (kg).
    pub mass_error: f64,
    /// Added to the diagonal of the true object inertia (kg m^2).
    pub inertia_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrictionSpec {
    /// True friction coefficient, used for slip monitoring.
    pub mu: f64,
    /// Conservative coefficient of the controller's pyramid.
    pub mu_hat: f64,
    pub faces: usize,
}

/// `amplitude * sin(2 pi frequency t + phase)` per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSpec {
    #[serde(default)]
    pub joint_amplitude: Vec<f64>,
    #[serde(default)]
    pub object_amplitude: [f64; 6],
    #[serde(default)]
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

impl DisturbanceSpec {
    pub fn joint(&self, t: f64, dof: usize) -> nalgebra::DVector<f64> {
        let s = self.wave(t);
        nalgebra::DVector::from_fn(dof, |j, _| self.joint_amplitude.get(j).copied().unwrap_or(0.0) * s)
    }

    pub fn object(&self, t: f64) -> Vector6<f64> {
        Vector6::from_column_slice(&self.object_amplitude) * self.wave(t)
    }

    fn wave(&self, t: f64) -> f64 {
        if self.frequency == 0.0 {
            self.phase.sin()
        } else {
            (2.0 * std::f64::consts::PI * self.frequency * t + self.phase).sin()
        }
    }
}

/// Gaussian noise on the sensed joint positions and velocities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SensorNoise {
    pub q_std: f64,
    pub qd_std: f64,
}

/// Closed-loop grasp scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    pub name: String,
    pub model: ModelSource,
    pub initial: InitialGrasp,
    /// Added to the initial task state to form the set-point.
    pub reference_offset: [f64; 6],
    pub reference_tolerance: f64,
    pub controller: ControllerSpec,
    pub margins: GraspMargins,
    pub barrier: BarrierGains,
    pub friction: FrictionSpec,
    pub workspace: WorkspaceBox,
    pub estimate: EstimateSpec,
    /// Sampling period (s).
    pub period: f64,
    pub duration: f64,
    pub substeps: usize,
    pub gravity: [f64; 3],
    #[serde(default)]
    pub disturbance: DisturbanceSpec,
    #[serde(default)]
    pub sensor_noise: SensorNoise,
    pub filter_enabled: bool,
    #[serde(default)]
    pub infeasible_policy: InfeasiblePolicy,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub notes: Vec<String>,
    /// Directory relative model paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Scenario {
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::json(origin, e))?;
        Self::from_value(value, origin)
    }

    fn from_value(value: Value, origin: &str) -> Result<Self> {
        let schema = value.get("schema").and_then(Value::as_u64);
        if schema != Some(u64::from(SCHEMA_VERSION)) {
            return Err(Error::InvalidScenario(format!(
                "{origin}: expected \"schema\": {SCHEMA_VERSION}, found {schema:?}"
            )));
        }
        let scenario: Scenario = serde_json::from_value(value).map_err(|e| Error::json(origin, e))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut s = Self::from_json(&text, &path.display().to_string())?;
        s.base_dir = path.parent().map(Path::to_path_buf);
        Ok(s)
    }

    /// Built-in scenarios: `cube_twist_filter_on`, `cube_twist_filter_off`.
    pub fn builtin(name: &str) -> Result<Self> {
        let text = match name {
            "cube_twist_filter_on" => include_str!("../../scenarios/cube_twist_filter_on.json"),
            "cube_twist_filter_off" => include_str!("../../scenarios/cube_twist_filter_off.json"),
            other => return Err(Error::InvalidArgument(format!("unknown built-in scenario `{other}`"))),
        };
        Self::from_json(text, name)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScenario(format!("{}: {msg}", self.name)));
        if self.schema != SCHEMA_VERSION {
            return bad(format!("unsupported schema {}", self.schema));
        }
        if !(self.period.is_finite() && self.period > 0.0) {
            return bad(format!("sampling period must be positive, got {}", self.period));
        }
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return bad(format!("duration must be nonnegative, got {}", self.duration));
        }
        if self.duration > 0.0 && self.duration < self.period {
            return bad("duration shorter than one sampling period".into());
        }
        if self.substeps == 0 {
            return bad("substeps must be at least 1".into());
        }
        if self.initial.faces.len() != self.initial.fingertip_coords.len() {
            return bad("one fingertip coordinate pair per contact face is required".into());
        }
        if !(self.friction.mu_hat > 0.0 && self.friction.mu_hat <= self.friction.mu) {
            return bad("friction coefficients must satisfy 0 < mu_hat <= mu".into());
        }
        if self.controller.integral_limit < 0.0 {
            return bad("integral limit must be nonnegative".into());
        }
        if self.estimate.mass_error.is_nan() || self.estimate.inertia_error.is_nan() {
            return bad("model errors must be numbers".into());
        }
        self.margins.validate()?;
        self.workspace.validate()?;
        self.barrier.alpha1.validate()?;
        self.barrier.alpha2.validate()
    }

    pub fn load_model(&self) -> Result<ModelFile> {
        match &self.model {
            ModelSource::Preset(name) => ModelFile::preset(name),
            ModelSource::Path(p) => {
                let path = match (&self.base_dir, p.is_relative()) {
                    (Some(dir), true) => dir.join(p),
                    _ => p.clone(),
                };
                ModelFile::load(&path)
            }
        }
    }

    pub fn gravity_vector(&self) -> Vector3<f64> {
        Vector3::from_column_slice(&self.gravity)
    }

    /// Number of control samples in the run.
    pub fn sample_count(&self) -> usize {
        // Guard against 5.0 / 0.003 landing just below an integer.
        ((self.duration / self.period) * (1.0 + 1e-12)).floor() as usize
    }

    /// Applies `key=value` overrides. Keys are dotted paths into the
    /// scenario; unknown keys and ill-typed values are rejected. Values are
    /// parsed as JSON, falling back to a plain string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut value = serde_json::to_value(self).map_err(|e| Error::json(&self.name, e))?;
        for raw in overrides {
            let raw = raw.as_ref();
            let (key, text) = raw.split_once('=').ok_or_else(|| Error::Override {
                key: raw.to_string(),
                reason: "expected KEY=VALUE".into(),
            })?;
            let key = key.trim();
            let parsed = serde_json::from_str::<Value>(text.trim()).unwrap_or_else(|_| Value::String(text.trim().to_string()));
            set_path(&mut value, key, parsed)?;
        }
        let mut out = Self::from_value(value, &self.name).map_err(|e| match e {
            Error::Json { source, .. } => Error::Override {
                key: overrides.iter().map(|o| o.as_ref().to_string()).collect::<Vec<_>>().join(", "),
                reason: source.to_string(),
            },
            other => other,
        })?;
        out.base_dir = self.base_dir.clone();
        Ok(out)
    }
}

fn set_path(root: &mut Value, key: &str, new: Value) -> Result<()> {
    let err = |reason: &str| Error::Override {
        key: key.to_string(),
        reason: reason.to_string(),
    };
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (depth, part) in parts.iter().enumerate() {
        let last = depth + 1 == parts.len();
        node = match node {
            Value::Object(map) => map.get_mut(*part).ok_or_else(|| err("unknown key"))?,
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| err("expected an array index"))?;
                items.get_mut(idx).ok_or_else(|| err("index out of range"))?
            }
            _ => return Err(err("path descends into a scalar")),
        };
        if last {
            *node = new;
            return Ok(());
        }
    }
    Err(err("empty key"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse() {
        let on = Scenario::builtin("cube_twist_filter_on").unwrap();
        let off = Scenario::builtin("cube_twist_filter_off").unwrap();
        assert!(on.filter_enabled && !off.filter_enabled);
        assert_eq!(on.sample_count(), 1666);
        assert!(on.load_model().is_ok());
    }

    #[test]
    fn overrides_are_type_checked() {
        let s = Scenario::builtin("cube_twist_filter_on").unwrap();
        let t = s.with_overrides(&["filter_enabled=false", "margins.epsilon=0.05", "duration=0"]).unwrap();
        assert!(!t.filter_enabled);
        assert_eq!(t.margins.epsilon, 0.05);
        assert_eq!(t.sample_count(), 0);
        let t = s.with_overrides(&["initial.seed_q.0=0.5"]).unwrap();
        assert_eq!(t.initial.seed_q[0], 0.5);
        assert!(matches!(s.with_overrides(&["margins.epsilom=1"]), Err(Error::Override { .. })));
        assert!(s.with_overrides(&["duration=\"long\""]).is_err());
        assert!(s.with_overrides(&["substeps=0"]).is_err());
        assert!(s.with_overrides(&["period"]).is_err());
    }

    #[test]
    fn schema_and_unknown_fields_rejected() {
        let s = Scenario::builtin("cube_twist_filter_on").unwrap();
        let mut v = serde_json::to_value(&s).unwrap();
        v["schema"] = Value::from(2);
        assert!(Scenario::from_json(&v.to_string(), "t").is_err());
        let mut v = serde_json::to_value(&s).unwrap();
        v["surprise"] = Value::from(1);
        assert!(Scenario::from_json(&v.to_string(), "t").is_err());
    }

    #[test]
    fn gain_forms() {
        assert_eq!(GainSpec::Scalar(0.26).matrix(), Matrix6::identity() * 0.26);
        let g: GainSpec = serde_json::from_str("[1,2,3,4,5,6]").unwrap();
        assert_eq!(g.matrix()[(5, 5)], 6.0);
    }
}
