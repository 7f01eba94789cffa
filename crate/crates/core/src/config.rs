//! Run configuration: one TOML file describing a complete, reproducible run.
//!
//! Every field has a default, unknown keys are rejected, and schema errors
//! name the offending field. Scenario geometry starts from a named preset;
//! any preset field can be overridden individually. Gains left unset fall
//! back to [`ControlGains::default_for`] on the configured model.
//!
//! ```toml
//! dt = 0.001
//! seed = 7
//!
//! [scenario]
//! preset = "two_am_grasp"
//! grasp_depth = 0.03
//!
//! [gains]
//! k_y = [200.0, 200.0, 2.0]
//! compensate_forces = false
//! ```

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::control::ControlGains;
use crate::error::{Error, Result};
use crate::model::{MultibodyModel, PlanarArmParams};
use crate::sim::{MonitorToggles, ObjectSpec, Scenario, ScenarioSpec, SimSettings, DEFAULT_SUBSTEPS};
use crate::world::ContactParams;

/// Optional gain overrides. Gain matrices other than `Λ_wb,d` are given by their diagonals.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GainsConfig {
    /// CoM stiffness, N/m.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_t: Option<[f64; 3]>,
    /// CoM damping, N·s/m.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_t: Option<[f64; 3]>,
    /// Attitude stiffness, N·m.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_r: Option<f64>,
    /// Angular-velocity damping, N·m·s.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_w: Option<f64>,
    /// Desired attitude inertia, kg·m², row-major 3×3.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_wb_d: Option<[[f64; 3]; 3]>,
    /// Task stiffness on (x, z, pitch).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_y: Option<[f64; 3]>,
    /// Task damping on (x, z, pitch).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_y: Option<[f64; 3]>,
    /// Attitude reference filter bandwidth, rad/s.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attitude_filter: Option<f64>,
    /// Defaults to on, except for presets whose name ends in `_nocomp`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compensate_forces: Option<bool>,
}

/// Preset name plus optional overrides of individual scenario fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub preset: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_ams: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ring_radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub object: Option<ObjectSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub standoff: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grasp_depth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lift_height: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub approach_end: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub touch_end: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grasp_motion_end: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grasp_end: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lift_end: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_jitter: Option<f64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            preset: "two_am_grasp".into(),
            n_ams: None,
            ring_radius: None,
            object: None,
            standoff: None,
            grasp_depth: None,
            lift_height: None,
            approach_end: None,
            touch_end: None,
            grasp_motion_end: None,
            grasp_end: None,
            lift_end: None,
            initial_jitter: None,
        }
    }
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Control, monitoring and logging period, s.
    pub dt: f64,
    /// Simulated time, s. Defaults to the preset's duration.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    pub seed: u64,
    /// Telemetry keeps every `log_every`-th tick.
    pub log_every: usize,
    /// Plant RK4 substeps per control period.
    pub substeps: usize,
    /// Output directory for `run`. Falls back to the environment, then `out`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub scenario: ScenarioConfig,
    pub model: PlanarArmParams,
    pub gains: GainsConfig,
    /// End-effector to object contact.
    pub contact: ContactParams,
    /// Object to table contact.
    pub table: ContactParams,
    pub monitors: MonitorToggles,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sim = SimSettings::default();
        Self {
            dt: sim.dt,
            duration: None,
            seed: sim.seed,
            log_every: sim.log_every,
            substeps: DEFAULT_SUBSTEPS,
            out_dir: None,
            scenario: ScenarioConfig::default(),
            model: PlanarArmParams::default(),
            gains: GainsConfig::default(),
            contact: ContactParams::default(),
            table: ContactParams::default(),
            monitors: MonitorToggles::default(),
        }
    }
}

fn config_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config { field: field.into(), message: message.into() }
}

fn diag(v: [f64; 3]) -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::from(v))
}

impl RunConfig {
    /// Parses TOML text. Unknown keys and type mismatches are reported with
    /// the dotted path of the offending field.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| config_err("<document>", e.message()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." || path.is_empty() { "<document>".to_string() } else { path };
            config_err(&field, e.into_inner().message())
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err("<document>", e.to_string()))
    }

    /// Preset plus overrides, validated.
    pub fn scenario_spec(&self) -> Result<ScenarioSpec> {
        let c = &self.scenario;
        let mut s = ScenarioSpec::preset(&c.preset)?;
        macro_rules! over {
            ($($f:ident),*) => { $( if let Some(v) = c.$f { s.$f = v; } )* };
        }
        over!(n_ams, ring_radius, standoff, grasp_depth, lift_height, approach_end, touch_end, grasp_motion_end, grasp_end, lift_end, initial_jitter);
        if let Some(o) = c.object {
            if s.object.is_none() {
                return Err(config_err("scenario.object", format!("preset `{}` has no object", c.preset)));
            }
            s.object = Some(o);
        }
        if let Some(d) = self.duration {
            s.duration = d;
        }
        s.validate()?;
        Ok(s)
    }

    pub fn build_model(&self) -> Result<MultibodyModel> {
        MultibodyModel::planar_arm(&self.model).map_err(|e| match e {
            Error::Config { .. } => e,
            other => config_err("model", other.to_string()),
        })
    }

    /// Default gains for the model with the configured overrides applied.
    pub fn build_gains(&self, model: &MultibodyModel, spec: &ScenarioSpec) -> Result<ControlGains> {
        let g = &self.gains;
        let diagonals = [("k_t", g.k_t), ("d_t", g.d_t), ("k_y", g.k_y), ("d_y", g.d_y)];
        for (name, v) in diagonals {
            if let Some(v) = v {
                if v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                    return Err(config_err(&format!("gains.{name}"), format!("diagonal entries must be finite and positive, got {v:?}")));
                }
            }
        }
        for (name, v) in [("k_r", g.k_r), ("k_w", g.k_w), ("attitude_filter", g.attitude_filter)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(config_err(&format!("gains.{name}"), format!("must be finite and positive, got {v}")));
                }
            }
        }
        let base = ControlGains::default_for(model, Vector3::x()).map_err(|e| config_err("gains", e.to_string()))?;
        let k_y = g.k_y.map(|v| DMatrix::from_diagonal(&DVector::from_row_slice(&v))).unwrap_or_else(|| base.k_y.clone());
        let d_y = g.d_y.map(|v| DMatrix::from_diagonal(&DVector::from_row_slice(&v))).unwrap_or_else(|| base.d_y.clone());
        let gains = ControlGains::new(
            g.k_t.map(diag).unwrap_or(base.k_t),
            g.d_t.map(diag).unwrap_or(base.d_t),
            g.k_r.unwrap_or(base.k_r),
            g.k_w.unwrap_or(base.k_w),
            g.lambda_wb_d.map(|r| Matrix3::from_fn(|i, j| r[i][j])).unwrap_or(base.lambda_wb_d),
            k_y,
            d_y,
            base.b1d,
            g.compensate_forces.unwrap_or_else(|| spec.compensation()),
        )
        .map_err(|e| config_err("gains", e.to_string()))?;
        gains.with_attitude_filter(g.attitude_filter.unwrap_or(base.attitude_filter)).map_err(|e| config_err("gains.attitude_filter", e.to_string()))
    }

    pub fn settings(&self) -> Result<SimSettings> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(config_err("dt", format!("must be positive and finite, got {}", self.dt)));
        }
        if self.log_every == 0 {
            return Err(config_err("log_every", "must be at least 1"));
        }
        if self.substeps == 0 {
            return Err(config_err("substeps", "must be at least 1"));
        }
        Ok(SimSettings { dt: self.dt, log_every: self.log_every, seed: self.seed, substeps: self.substeps, monitors: self.monitors })
    }

    /// Validates everything and assembles the scenario.
    pub fn build_scenario(&self) -> Result<Scenario> {
        let settings = self.settings()?;
        let spec = self.scenario_spec()?;
        let model = self.build_model()?;
        let gains = self.build_gains(&model, &spec)?;
        Scenario::build(spec, model, gains, self.contact, table_params(&self.table)?, settings)
    }

    /// The same configuration with every defaulted value written out, as
    /// the run will actually use it.
    pub fn resolved(&self) -> Result<Self> {
        let spec = self.scenario_spec()?;
        let model = self.build_model()?;
        let gains = self.build_gains(&model, &spec)?;
        let d3 = |m: &Matrix3<f64>| [m[(0, 0)], m[(1, 1)], m[(2, 2)]];
        let dy = |m: &DMatrix<f64>| [m[(0, 0)], m[(1, 1)], m[(2, 2)]];
        let mut out = self.clone();
        out.duration = Some(spec.duration);
        out.scenario = ScenarioConfig {
            preset: spec.name.clone(),
            n_ams: Some(spec.n_ams),
            ring_radius: Some(spec.ring_radius),
            object: spec.object,
            standoff: Some(spec.standoff),
            grasp_depth: Some(spec.grasp_depth),
            lift_height: Some(spec.lift_height),
            approach_end: Some(spec.approach_end),
            touch_end: Some(spec.touch_end),
            grasp_motion_end: Some(spec.grasp_motion_end),
            grasp_end: Some(spec.grasp_end),
            lift_end: Some(spec.lift_end),
            initial_jitter: Some(spec.initial_jitter),
        };
        out.gains = GainsConfig {
            k_t: Some(d3(&gains.k_t)),
            d_t: Some(d3(&gains.d_t)),
            k_r: Some(gains.k_r),
            k_w: Some(gains.k_w),
            lambda_wb_d: Some(std::array::from_fn(|i| std::array::from_fn(|j| gains.lambda_wb_d[(i, j)]))),
            k_y: Some(dy(&gains.k_y)),
            d_y: Some(dy(&gains.d_y)),
            attitude_filter: Some(gains.attitude_filter),
            compensate_forces: Some(gains.compensate_forces),
        };
        Ok(out)
    }
}

/// Validates the table parameters, pointing errors at the `table` section.
fn table_params(p: &ContactParams) -> Result<ContactParams> {
    p.validate().map(|_| *p).map_err(|e| match e {
        Error::Config { field, message } => Error::Config { field: field.replacen("contact.", "table.", 1), message },
        other => other,
    })
}
