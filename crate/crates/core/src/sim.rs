//! Fixed-step simulation of several AMs and one object, with scripted
//! phases and runtime storage/passivity monitors.
//!
//! Each tick of length `dt`:
//! 1. contacts are evaluated on the current snapshot, which is what every
//!    AM measures;
//! 2. every controller runs on its own state and its own measured wrench;
//! 3. monitors close the previous step and telemetry is logged;
//! 4. AMs and the object advance `substeps` coupled RK4 steps with the
//!    actuator commands held. Contact forces are re-evaluated at every RK4
//!    stage, with friction anchors frozen at their tick-start values;
//! 5. rotations are re-projected onto SO(3).

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{ControlGains, ControlOutput, Controller, Setpoint};
use crate::decoupling::PlanarTask;
use crate::dynamics::{self, Kinematics};
use crate::error::{Error, Result};
use crate::model::{AmState, MultibodyModel, Wrench, WrenchFrame};
use crate::spatial::{dexp_inv_right, exp_so3, log_so3, project_to_so3, rot_z};
use crate::telemetry::{AmRow, ContactRow, Telemetry, WorldRow};
use crate::trajectory::Waypoints;
use crate::world::{self, ContactParams, EeSnapshot, ObjectShape, ObjectState};

/// Object description for a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub shape: ObjectShape,
    pub mass: f64,
}

/// Geometry and timing of a grasping scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub n_ams: usize,
    /// Initial horizontal distance of each base from the object centre, m.
    pub ring_radius: f64,
    pub object: Option<ObjectSpec>,
    /// Gap between end-effector and object face at the end of the approach, m.
    pub standoff: f64,
    /// How far inside the object face the grasp setpoint is placed, m.
    pub grasp_depth: f64,
    /// Commanded rise of the end-effector setpoints during the lift, m.
    pub lift_height: f64,
    pub approach_end: f64,
    /// Time at which the end-effector setpoint reaches the object face, at rest.
    pub touch_end: f64,
    /// End of the squeezing motion; the setpoint then holds until `grasp_end`.
    pub grasp_motion_end: f64,
    pub grasp_end: f64,
    pub lift_end: f64,
    pub duration: f64,
    /// Uniform random offset (m) of the initial base positions, drawn from the seed.
    pub initial_jitter: f64,
}

pub const PRESETS: [&str; 4] = ["free_flight", "two_am_grasp", "two_am_grasp_nocomp", "ten_am_grasp"];

impl ScenarioSpec {
    /// Shipped scenarios. The `_nocomp` preset only differs in the controller
    /// flag, which lives with the gains (see [`ScenarioSpec::compensation`]).
    pub fn preset(name: &str) -> Result<Self> {
        let cube = ObjectSpec { shape: ObjectShape::Box { half_extents: [0.1, 0.1, 0.1] }, mass: 1.0 };
        let base = Self {
            name: name.to_string(),
            n_ams: 2,
            ring_radius: 1.0,
            object: Some(cube),
            standoff: 0.02,
            grasp_depth: 0.04,
            lift_height: 0.1,
            approach_end: 5.0,
            touch_end: 6.5,
            grasp_motion_end: 8.0,
            grasp_end: 10.0,
            lift_end: 13.0,
            duration: 20.0,
            initial_jitter: 0.0,
        };
        match name {
            "two_am_grasp" | "two_am_grasp_nocomp" => Ok(base),
            "free_flight" => Ok(Self { object: None, duration: 8.0, ..base }),
            "ten_am_grasp" => Ok(Self {
                n_ams: 10,
                object: Some(ObjectSpec { shape: ObjectShape::Cylinder { radius: 0.2, half_height: 0.1 }, mass: 5.0 }),
                ..base
            }),
            other => Err(Error::Config {
                field: "scenario.preset".into(),
                message: format!("unknown scenario `{other}` (expected one of {})", PRESETS.join(", ")),
            }),
        }
    }

    /// Force-compensation setting implied by the preset name.
    pub fn compensation(&self) -> bool {
        !self.name.ends_with("_nocomp")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| Err(Error::Config { field: format!("scenario.{field}"), message: message.into() });
        if self.n_ams == 0 {
            return bad("n_ams", "need at least one AM");
        }
        if !(self.ring_radius > 0.0) {
            return bad("ring_radius", "must be positive");
        }
        let mut times = vec![("approach_end", self.approach_end)];
        if self.object.is_some() {
            times.extend([("touch_end", self.touch_end), ("grasp_motion_end", self.grasp_motion_end), ("grasp_end", self.grasp_end), ("lift_end", self.lift_end)]);
        }
        let mut prev = ("start", 0.0);
        for (name, t) in times {
            if !(t > prev.1) || !t.is_finite() {
                return bad(name, &format!("phase times must be strictly increasing: {name} = {t} is not after {} = {}", prev.0, prev.1));
            }
            prev = (name, t);
        }
        // A run may stop before the last phase; its monitors then report "phase not reached".
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration", "must be positive and finite");
        }
        for (name, v) in [("standoff", self.standoff), ("grasp_depth", self.grasp_depth), ("lift_height", self.lift_height), ("initial_jitter", self.initial_jitter)] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(name, "must be finite and non-negative");
            }
        }
        if let Some(o) = &self.object {
            ObjectState::new(o.shape, o.mass, Vector3::zeros()).map_err(|e| Error::Config { field: "scenario.object".into(), message: e.to_string() })?;
        }
        Ok(())
    }
}

/// A named, contiguous time interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Phase {
    pub name: &'static str,
    pub start: f64,
    pub end: f64,
}

/// Desired trajectories of one AM.
#[derive(Debug, Clone)]
pub struct AmPlan {
    pub yaw: f64,
    pub com: Waypoints,
    pub task: Waypoints,
}

impl AmPlan {
    pub fn setpoint(&self, t: f64) -> Setpoint {
        let c = self.com.sample(t);
        let y = self.task.sample(t);
        Setpoint {
            r_c: Vector3::new(c.pos[0], c.pos[1], c.pos[2]),
            r_c_dot: Vector3::new(c.vel[0], c.vel[1], c.vel[2]),
            r_c_ddot: Vector3::new(c.acc[0], c.acc[1], c.acc[2]),
            y: y.pos,
            y_dot: y.vel,
            y_ddot: y.acc,
        }
    }
}

/// Numerical settings shared by every scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSettings {
    /// Control and logging period.
    pub dt: f64,
    pub log_every: usize,
    pub seed: u64,
    /// RK4 substeps of the plant per control period, command held throughout.
    /// The end-effector contact is stiff against the light wrist; two substeps
    /// keep the plant's energy error well below the passivity tolerance.
    pub substeps: usize,
    pub monitors: MonitorToggles,
}

pub const DEFAULT_SUBSTEPS: usize = 2;

impl Default for SimSettings {
    fn default() -> Self {
        Self { dt: 1e-3, log_every: 10, seed: 0, substeps: DEFAULT_SUBSTEPS, monitors: MonitorToggles::default() }
    }
}

/// Which monitors count towards the pass/fail verdict of a run. Disabled
/// monitors are still computed and reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonitorToggles {
    pub free_flight_storage: bool,
    pub approach_convergence: bool,
    pub passivity: bool,
    pub hover_settling: bool,
    pub hover_energy_bound: bool,
    pub lift: bool,
}

impl Default for MonitorToggles {
    fn default() -> Self {
        Self { free_flight_storage: true, approach_convergence: true, passivity: true, hover_settling: true, hover_energy_bound: true, lift: true }
    }
}

impl MonitorToggles {
    pub fn enabled(&self, name: &str) -> bool {
        match name {
            "free_flight_storage" => self.free_flight_storage,
            "approach_convergence" => self.approach_convergence,
            "passivity" => self.passivity,
            "hover_settling" => self.hover_settling,
            "hover_energy_bound" => self.hover_energy_bound,
            "lift" => self.lift,
            _ => true,
        }
    }
}

/// A fully resolved scenario ready to simulate.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub model: MultibodyModel,
    /// Gains shared by all AMs; each AM gets its own heading.
    pub gains: ControlGains,
    pub contact: ContactParams,
    pub table: ContactParams,
    pub settings: SimSettings,
    pub phases: Vec<Phase>,
    pub plans: Vec<AmPlan>,
    pub initial_ams: Vec<AmState>,
    pub initial_object: Option<ObjectState>,
    /// Centroid height the object should reach after the lift.
    pub lift_target: Option<f64>,
}

fn dv(v: Vector3<f64>) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

impl Scenario {
    pub fn build(
        spec: ScenarioSpec,
        model: MultibodyModel,
        gains: ControlGains,
        contact: ContactParams,
        table: ContactParams,
        settings: SimSettings,
    ) -> Result<Self> {
        spec.validate()?;
        contact.validate()?;
        table.validate()?;
        if model.dof() != 3 {
            return Err(Error::Config { field: "model.links".into(), message: "the planar grasp task needs exactly 3 joints".into() });
        }
        if !(settings.dt > 0.0 && settings.dt.is_finite()) {
            return Err(Error::Config { field: "dt".into(), message: format!("must be positive and finite, got {}", settings.dt) });
        }
        if settings.log_every == 0 {
            return Err(Error::Config { field: "log_every".into(), message: "must be at least 1".into() });
        }
        if settings.substeps == 0 {
            return Err(Error::Config { field: "substeps".into(), message: "must be at least 1".into() });
        }

        let nominal = AmState::at_rest(&model, Vector3::zeros(), Matrix3::identity(), model.nominal_q.clone());
        let ee_off = dynamics::ee_pose(&model, &nominal).pos;
        let com_off = dynamics::com_quantities(&model, &nominal).r_bc;

        let (object, center, contact_z) = match &spec.object {
            Some(o) => {
                let z = world::resting_height(&o.shape, o.mass, model.gravity, &table);
                let obj = ObjectState::new(o.shape, o.mass, Vector3::new(0.0, 0.0, z))?;
                (Some(obj), Vector3::new(0.0, 0.0, z), z)
            }
            None => (None, Vector3::new(0.0, 0.0, 0.1), 0.1),
        };
        let base_z = contact_z - ee_off.z;

        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        let mut plans = Vec::with_capacity(spec.n_ams);
        let mut initial = Vec::with_capacity(spec.n_ams);
        for i in 0..spec.n_ams {
            let phi = 2.0 * std::f64::consts::PI * i as f64 / spec.n_ams as f64;
            let radial = Vector3::new(phi.cos(), phi.sin(), 0.0);
            let yaw = phi + std::f64::consts::PI;
            let heading = rot_z(yaw);
            let face = spec.object.map(|o| o.shape.side_distance(phi)).unwrap_or(0.1);
            let start = center + radial * spec.ring_radius + Vector3::new(0.0, 0.0, base_z - center.z);
            let end = center + radial * (face + spec.standoff + ee_off.x) + Vector3::new(0.0, 0.0, base_z - center.z);

            let c0 = start + heading * com_off;
            let c1 = end + heading * com_off;
            let y_of = |b: Vector3<f64>| {
                let e = heading.transpose() * (b + heading * ee_off);
                Vector3::new(e.x, e.z, 0.0)
            };
            let y0 = y_of(start);
            let y1 = y_of(end);
            let com = Waypoints::new(vec![(0.0, dv(c0)), (spec.approach_end, dv(c1))])?;
            let task = if spec.object.is_some() {
                // Touch the face at rest first, then squeeze, so the contact
                // force starts from zero with zero rate.
                let touch = y1 + Vector3::new(spec.standoff, 0.0, 0.0);
                let y2 = touch + Vector3::new(spec.grasp_depth, 0.0, 0.0);
                let y3 = y2 + Vector3::new(0.0, spec.lift_height, 0.0);
                Waypoints::new(vec![
                    (0.0, dv(y0)),
                    (spec.approach_end, dv(y1)),
                    (spec.touch_end, dv(touch)),
                    (spec.grasp_motion_end, dv(y2)),
                    (spec.grasp_end, dv(y2)),
                    (spec.lift_end, dv(y3)),
                ])?
            } else {
                Waypoints::new(vec![(0.0, dv(y0)), (spec.approach_end, dv(y1))])?
            };
            plans.push(AmPlan { yaw, com, task });

            let jitter = if spec.initial_jitter > 0.0 {
                Vector3::from_fn(|_, _| rng.gen_range(-spec.initial_jitter..=spec.initial_jitter))
            } else {
                Vector3::zeros()
            };
            initial.push(AmState::at_rest(&model, start + jitter, heading, model.nominal_q.clone()));
        }

        let mut phases = vec![Phase { name: "approach", start: 0.0, end: spec.approach_end }];
        let hover_start = if spec.object.is_some() {
            phases.push(Phase { name: "grasp", start: spec.approach_end, end: spec.grasp_end });
            phases.push(Phase { name: "lift", start: spec.grasp_end, end: spec.lift_end });
            spec.lift_end
        } else {
            spec.approach_end
        };
        phases.push(Phase { name: "hover", start: hover_start, end: spec.duration.max(hover_start) });
        let lift_target = object.as_ref().map(|o| o.pos.z + spec.lift_height);

        Ok(Self {
            spec,
            model,
            gains,
            contact,
            table,
            settings,
            phases,
            plans,
            initial_ams: initial,
            initial_object: object,
            lift_target,
        })
    }

    /// Default model, gains and contact parameters for a preset.
    pub fn preset(name: &str, settings: SimSettings) -> Result<Self> {
        let spec = ScenarioSpec::preset(name)?;
        let model = MultibodyModel::default_planar_arm();
        let gains = ControlGains::default_for(&model, Vector3::x())?.with_compensation(spec.compensation());
        Self::build(spec, model, gains, ContactParams::default(), ContactParams::default(), settings)
    }

    pub fn phase_at(&self, t: f64) -> &'static str {
        self.phases.iter().rev().find(|p| t >= p.start).map(|p| p.name).unwrap_or("approach")
    }

    pub fn hover_start(&self) -> f64 {
        self.phases.last().map(|p| p.start).unwrap_or(0.0)
    }
}

#[derive(Clone)]
struct AmRate {
    pdot: Vector3<f64>,
    thdot: Vector3<f64>,
    qdot: DVector<f64>,
    vdot: DVector<f64>,
}

fn am_rate(model: &MultibodyModel, s: &AmState, theta: &Vector3<f64>, tau: &DVector<f64>, f_e: &Wrench) -> Result<AmRate> {
    Ok(AmRate {
        pdot: s.r_b * s.v_b(),
        thdot: dexp_inv_right(theta, &s.w_b()),
        qdot: s.qdot(),
        vdot: dynamics::forward_dynamics(model, s, tau, f_e)?,
    })
}

/// One RK4 step of an AM under a held actuator vector and end-effector wrench.
///
/// The base rotation is advanced in exponential coordinates around the
/// step's initial orientation and re-projected onto SO(3) afterwards.
pub fn am_rk4_step(model: &MultibodyModel, s: &AmState, tau: &DVector<f64>, f_e: &Wrench, dt: f64) -> Result<AmState> {
    let at = |k: &AmRate, theta: &Vector3<f64>, h: f64| AmState {
        p_b: s.p_b + k.pdot * h,
        r_b: s.r_b * exp_so3(theta),
        q: &s.q + &k.qdot * h,
        v: &s.v + &k.vdot * h,
    };
    let zero = Vector3::zeros();
    let k1 = am_rate(model, s, &zero, tau, f_e)?;
    let th2 = k1.thdot * (0.5 * dt);
    let k2 = am_rate(model, &at(&k1, &th2, 0.5 * dt), &th2, tau, f_e)?;
    let th3 = k2.thdot * (0.5 * dt);
    let k3 = am_rate(model, &at(&k2, &th3, 0.5 * dt), &th3, tau, f_e)?;
    let th4 = k3.thdot * dt;
    let k4 = am_rate(model, &at(&k3, &th4, dt), &th4, tau, f_e)?;
    let w = dt / 6.0;
    let theta = (k1.thdot + 2.0 * k2.thdot + 2.0 * k3.thdot + k4.thdot) * w;
    Ok(AmState {
        p_b: s.p_b + (k1.pdot + 2.0 * k2.pdot + 2.0 * k3.pdot + k4.pdot) * w,
        r_b: project_to_so3(&(s.r_b * exp_so3(&theta))),
        q: &s.q + (&k1.qdot + 2.0 * &k2.qdot + 2.0 * &k3.qdot + &k4.qdot) * w,
        v: &s.v + (&k1.vdot + 2.0 * &k2.vdot + 2.0 * &k3.vdot + &k4.vdot) * w,
    })
}

/// Inputs to [`coupled_rk4_step`] that stay fixed over the step.
pub struct StepInputs<'a> {
    pub taus: &'a [DVector<f64>],
    /// Friction anchors, fixed over the step.
    pub anchors: &'a [Option<Vector3<f64>>],
    pub contact: &'a ContactParams,
    pub table: &'a ContactParams,
}

/// One RK4 step of all AMs and the object together.
///
/// Actuator inputs are held over the step. Contact and table forces are
/// re-evaluated at every stage, so the penalty springs are integrated to the
/// same order as the rigid bodies. Friction anchors stay at their
/// step-start values.
pub fn coupled_rk4_step(
    model: &MultibodyModel,
    ams: &[AmState],
    object: Option<&ObjectState>,
    inputs: &StepInputs,
    dt: f64,
) -> Result<(Vec<AmState>, Option<ObjectState>)> {
    type Rates = (Vec<AmRate>, Option<world::ObjectRate>);
    let n = ams.len();
    let stage_state = |k: Option<&Rates>, h: f64| -> (Vec<AmState>, Vec<Vector3<f64>>, Option<ObjectState>, Vector3<f64>) {
        let Some((ka, ko)) = k else {
            return (ams.to_vec(), vec![Vector3::zeros(); n], object.cloned(), Vector3::zeros());
        };
        let thetas: Vec<Vector3<f64>> = ka.iter().map(|r| r.thdot * h).collect();
        let a = ams
            .iter()
            .zip(ka)
            .zip(&thetas)
            .map(|((s, r), th)| AmState { p_b: s.p_b + r.pdot * h, r_b: s.r_b * exp_so3(th), q: &s.q + &r.qdot * h, v: &s.v + &r.vdot * h })
            .collect();
        let (o, th_o) = match (object, ko) {
            (Some(o), Some(r)) => {
                let th = r.theta * h;
                let mut next = o.clone();
                next.pos += r.vel * h;
                next.rot = exp_so3(&th) * o.rot;
                next.vel += r.acc * h;
                next.omega += r.alpha * h;
                (Some(next), th)
            }
            _ => (object.cloned(), Vector3::zeros()),
        };
        (a, thetas, o, th_o)
    };
    let rates = |(a, thetas, o, th_o): (Vec<AmState>, Vec<Vector3<f64>>, Option<ObjectState>, Vector3<f64>)| -> Result<Rates> {
        let (forces, obj_wrench) = match &o {
            Some(o) => {
                let ees: Vec<EeSnapshot> = a.iter().map(|s| ee_snapshot(model, s)).collect();
                let c = world::contact_forces(o, &ees, inputs.anchors, inputs.contact);
                (c.ee_forces, (c.object_force, c.object_moment))
            }
            None => (vec![Vector3::zeros(); n], (Vector3::zeros(), Vector3::zeros())),
        };
        let mut ka = Vec::with_capacity(n);
        for i in 0..n {
            let f_e = Wrench { force: forces[i], moment: Vector3::zeros(), frame: WrenchFrame::World };
            ka.push(am_rate(model, &a[i], &thetas[i], &inputs.taus[i], &f_e)?);
        }
        let ko = o.as_ref().map(|o| world::object_rate(o, &th_o, &obj_wrench.0, &obj_wrench.1, model.gravity, Some(inputs.table)));
        Ok((ka, ko))
    };

    let k1 = rates(stage_state(None, 0.0))?;
    let k2 = rates(stage_state(Some(&k1), 0.5 * dt))?;
    let k3 = rates(stage_state(Some(&k2), 0.5 * dt))?;
    let k4 = rates(stage_state(Some(&k3), dt))?;
    let w = dt / 6.0;
    let comb3 = |a: Vector3<f64>, b: Vector3<f64>, c: Vector3<f64>, d: Vector3<f64>| (a + 2.0 * b + 2.0 * c + d) * w;

    let mut next = Vec::with_capacity(n);
    for (i, s) in ams.iter().enumerate() {
        let (r1, r2, r3, r4) = (&k1.0[i], &k2.0[i], &k3.0[i], &k4.0[i]);
        let theta = comb3(r1.thdot, r2.thdot, r3.thdot, r4.thdot);
        next.push(AmState {
            p_b: s.p_b + comb3(r1.pdot, r2.pdot, r3.pdot, r4.pdot),
            r_b: project_to_so3(&(s.r_b * exp_so3(&theta))),
            q: &s.q + (&r1.qdot + 2.0 * &r2.qdot + 2.0 * &r3.qdot + &r4.qdot) * w,
            v: &s.v + (&r1.vdot + 2.0 * &r2.vdot + 2.0 * &r3.vdot + &r4.vdot) * w,
        });
    }
    let obj = match (object, k1.1, k2.1, k3.1, k4.1) {
        (Some(o), Some(r1), Some(r2), Some(r3), Some(r4)) => {
            let mut o2 = o.clone();
            o2.pos += comb3(r1.vel, r2.vel, r3.vel, r4.vel);
            o2.rot = project_to_so3(&(exp_so3(&comb3(r1.theta, r2.theta, r3.theta, r4.theta)) * o.rot));
            o2.vel += comb3(r1.acc, r2.acc, r3.acc, r4.acc);
            o2.omega += comb3(r1.alpha, r2.alpha, r3.alpha, r4.alpha);
            Some(o2)
        }
        _ => None,
    };
    Ok((next, obj))
}

/// End-effector placement and linear velocity in the world frame.
pub fn ee_snapshot(model: &MultibodyModel, s: &AmState) -> EeSnapshot {
    let kin = Kinematics::new(model, &s.q);
    let pose = dynamics::base_pose(s).compose(&kin.ee_in_base);
    let twist = dynamics::ee_jacobian(model, &s.q) * &s.v;
    let vel = pose.rot * Vector3::new(twist[0], twist[1], twist[2]);
    EeSnapshot { pose, vel }
}

/// Per-tick monitor values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorRecord {
    pub t: f64,
    pub s_am: Vec<f64>,
    pub s_obj: f64,
    pub s_tot: f64,
    /// Discrete `Ṡ_AM + λ_m(D_y)‖ẏ̃‖² − ẏ̃ᵀF_y` over the step starting at `t`.
    pub residual: Vec<f64>,
    /// `‖ẏ̄‖`, all AMs stacked.
    pub ydot_bar: f64,
    pub r_c_err: Vec<f64>,
    pub e_r: Vec<f64>,
    pub y_err: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Event {
    pub t: f64,
    pub am: usize,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct MonitorResult {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub limit: f64,
    pub detail: String,
    /// Whether the monitor counts towards the run verdict.
    pub enabled: bool,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct AmSummary {
    pub final_r_c_err: f64,
    pub final_e_r: f64,
    pub final_y_err: f64,
    /// `‖r̃_c‖`, `‖e_R‖`, `‖ỹ‖` at the end of the approach.
    pub approach_r_c_err: f64,
    pub approach_e_r: f64,
    pub approach_y_err: f64,
    /// Mean world-z contact force on the end-effector over the last 2 s.
    pub hover_f_e_z: f64,
    pub final_y_err_x: f64,
    /// `(K_y⁻¹F_y)_x` at the final logged tick.
    pub predicted_y_err_x: f64,
    pub max_free_flight_storage_increase: f64,
    /// `max residual / (1 + |ẏ̃ᵀF_y|)`.
    pub worst_passivity_ratio: f64,
    pub held_ticks: usize,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ConvergenceSummary {
    pub hover_start: f64,
    /// Time after which `‖ẏ̄‖` stays below the threshold.
    pub settle_time: Option<f64>,
    pub threshold: f64,
    pub final_ydot_bar: f64,
    /// `∫‖ẏ̄‖²dt` over the hover phase.
    pub integral: f64,
    /// `S_tot(hover start) / λ_m(D_y)`.
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ObjectSummary {
    pub final_height: f64,
    pub target_height: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Summary {
    pub format: &'static str,
    pub scenario: String,
    pub n_ams: usize,
    pub dt: f64,
    pub duration: f64,
    pub seed: u64,
    pub compensate_forces: bool,
    pub completed: bool,
    pub ams: Vec<AmSummary>,
    pub object: Option<ObjectSummary>,
    pub convergence: ConvergenceSummary,
    pub monitors: Vec<MonitorResult>,
    pub events: Vec<Event>,
    pub passed: bool,
}

/// Output of a finished run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub telemetry: Telemetry,
    pub summary: Summary,
}

/// Storage-increase limit per step in free flight, J.
pub const FREE_FLIGHT_STORAGE_TOL: f64 = 1e-6;
/// Relative passivity residual tolerance.
pub const PASSIVITY_TOL: f64 = 1e-3;
/// Task-speed threshold for hover convergence.
pub const SETTLE_THRESHOLD: f64 = 1e-3;
/// Error-norm threshold at the end of the approach.
pub const APPROACH_TOL: f64 = 1e-2;
/// Allowed object height error after the lift, m.
pub const LIFT_TOL: f64 = 0.05;

struct Tick {
    out: ControlOutput,
    held: bool,
    applied_force: Vector3<f64>,
}

/// Simulation state and monitor accumulators.
pub struct Simulation {
    pub scenario: Scenario,
    pub t: f64,
    pub tick: usize,
    pub ams: Vec<AmState>,
    pub object: Option<ObjectState>,
    controllers: Vec<Controller>,
    anchors: Vec<Option<Vector3<f64>>>,
    prev: Vec<Option<Tick>>,
    telemetry: Telemetry,
    events: Vec<Event>,
    held_ticks: Vec<usize>,
    free_increase: Vec<f64>,
    passivity_ratio: Vec<f64>,
    approach_errors: Vec<Option<(f64, f64, f64)>>,
    hover_s_tot: Option<f64>,
    hover_integral: f64,
    last_unsettled: Option<f64>,
    last_ydot_bar: f64,
    monitors: Vec<MonitorRecord>,
    keep_monitors: bool,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self> {
        let n = scenario.spec.n_ams;
        let mut controllers = Vec::with_capacity(n);
        for plan in &scenario.plans {
            let heading = rot_z(plan.yaw).column(0).into_owned();
            let gains = scenario.gains.clone().with_heading(heading)?;
            controllers.push(Controller::new(gains, PlanarTask::new(plan.yaw), scenario.settings.dt)?);
        }
        Ok(Self {
            t: 0.0,
            tick: 0,
            ams: scenario.initial_ams.clone(),
            object: scenario.initial_object.clone(),
            controllers,
            anchors: vec![None; n],
            prev: (0..n).map(|_| None).collect(),
            telemetry: Telemetry { n_joints: scenario.model.dof(), am: vec![Vec::new(); n], ..Default::default() },
            events: Vec::new(),
            held_ticks: vec![0; n],
            free_increase: vec![0.0; n],
            passivity_ratio: vec![f64::NEG_INFINITY; n],
            approach_errors: vec![None; n],
            hover_s_tot: None,
            hover_integral: 0.0,
            last_unsettled: None,
            last_ydot_bar: f64::NAN,
            monitors: Vec::new(),
            keep_monitors: false,
            scenario,
        })
    }

    /// Keep every per-tick [`MonitorRecord`] in memory (see [`Self::monitor_records`]).
    pub fn record_monitors(mut self, on: bool) -> Self {
        self.keep_monitors = on;
        self
    }

    /// Controller output of AM `i` on the last completed tick.
    pub fn last_control(&self, i: usize) -> Option<&ControlOutput> {
        self.prev.get(i)?.as_ref().map(|k| &k.out)
    }

    pub fn monitor_records(&self) -> &[MonitorRecord] {
        &self.monitors
    }

    fn diverged(&self, reason: String) -> Error {
        let dump: Vec<String> = self
            .ams
            .iter()
            .enumerate()
            .map(|(i, s)| format!("AM {i}: p_b = {:?}, q = {:?}", s.p_b.as_slice(), s.q.as_slice()))
            .collect();
        Error::Diverged { t: self.t, reason: format!("{reason}; last good state: {}", dump.join("; ")) }
    }

    /// Advance one tick.
    pub fn step(&mut self) -> Result<()> {
        let dt = self.scenario.settings.dt;
        let model = &self.scenario.model.clone();
        let n = self.ams.len();

        let ees: Vec<EeSnapshot> = self.ams.iter().map(|s| ee_snapshot(model, s)).collect();
        let contact = match &self.object {
            Some(o) => Some(world::contact_forces(o, &ees, &self.anchors, &self.scenario.contact)),
            None => None,
        };
        let forces: Vec<Vector3<f64>> = match &contact {
            Some(c) => c.ee_forces.clone(),
            None => vec![Vector3::zeros(); n],
        };

        let mut ticks = Vec::with_capacity(n);
        for i in 0..n {
            let sp = self.scenario.plans[i].setpoint(self.t);
            let f_e = Wrench { force: forces[i], moment: Vector3::zeros(), frame: WrenchFrame::World };
            match self.controllers[i].step(model, &self.ams[i], &sp, &f_e) {
                Ok(out) => ticks.push(Tick { out, held: false, applied_force: forces[i] }),
                Err(e) => {
                    let Some(prev) = self.prev[i].as_ref() else {
                        return Err(self.diverged(format!("AM {i} controller failed before its first command: {e}")));
                    };
                    self.events.push(Event { t: self.t, am: i, message: e.to_string() });
                    self.held_ticks[i] += 1;
                    let mut out = prev.out.clone();
                    if let Some(tau) = self.controllers[i].last_tau() {
                        out.tau = tau.clone();
                    }
                    ticks.push(Tick { out, held: true, applied_force: forces[i] });
                }
            }
        }

        self.update_monitors(&ticks, contact.as_ref().map(|c| c.records.as_slice()).unwrap_or(&[]));

        let taus: Vec<DVector<f64>> = ticks.iter().map(|k| k.out.tau.clone()).collect();
        let anchors = contact.as_ref().map(|c| c.anchors.clone()).unwrap_or_else(|| vec![None; n]);
        let inputs = StepInputs { taus: &taus, anchors: &anchors, contact: &self.scenario.contact, table: &self.scenario.table };
        let h = dt / self.scenario.settings.substeps as f64;
        let (mut next, mut object) = (self.ams.clone(), self.object.clone());
        for _ in 0..self.scenario.settings.substeps {
            (next, object) = coupled_rk4_step(model, &next, object.as_ref(), &inputs, h).map_err(|e| self.diverged(e.to_string()))?;
        }
        for (i, s) in next.iter().enumerate() {
            if !s.is_finite() || s.p_b.norm() > 1e3 || s.v.amax() > 1e3 {
                return Err(self.diverged(format!("AM {i} state left the finite region")));
            }
        }
        if let Some(o) = &object {
            if !o.is_finite() {
                return Err(self.diverged("object state left the finite region".into()));
            }
        }
        self.object = object;
        self.anchors = anchors;
        self.ams = next;
        self.prev = ticks.into_iter().map(Some).collect();
        self.tick += 1;
        self.t = self.tick as f64 * dt;
        Ok(())
    }

    fn update_monitors(&mut self, ticks: &[Tick], records: &[world::ContactRecord]) {
        let dt = self.scenario.settings.dt;
        let lambda = self.scenario.gains.lambda_min_dy();
        let n = ticks.len();
        let in_contact: Vec<bool> = (0..n).map(|i| records.iter().any(|r| r.am_id == i)).collect();
        let s_obj = self.object.as_ref().map(|o| o.kinetic_energy()).unwrap_or(0.0);
        let s_tot = ticks.iter().map(|k| k.out.storage.total()).sum::<f64>() + s_obj;
        let ydot_bar = ticks.iter().map(|k| k.out.y_dot.norm_squared()).sum::<f64>().sqrt();

        let t_prev = self.t - dt;
        let mut residuals = vec![f64::NAN; n];
        for i in 0..n {
            let Some(prev) = &self.prev[i] else { continue };
            let cur = &ticks[i];
            let ds = (cur.out.storage.total() - prev.out.storage.total()) / dt;
            // Trapezoid over the step; contact forces are continuous across it.
            let p0 = prev.out.y_dot_err.dot(&prev.out.f_y);
            let p1 = cur.out.y_dot_err.dot(&cur.out.f_y);
            let d0 = lambda * prev.out.y_dot_err.norm_squared();
            let d1 = lambda * cur.out.y_dot_err.norm_squared();
            let residual = ds + 0.5 * (d0 + d1) - 0.5 * (p0 + p1);
            residuals[i] = residual;
            if !(prev.held || cur.held) {
                let ratio = residual / (1.0 + 0.5 * (p0 + p1).abs());
                self.passivity_ratio[i] = self.passivity_ratio[i].max(ratio);
            }
            let free = self.scenario.spec.object.is_none() || t_prev < self.scenario.spec.approach_end;
            if free && prev.applied_force == Vector3::zeros() && !in_contact[i] {
                self.free_increase[i] = self.free_increase[i].max(ds * dt);
            }
            self.emit_row(i, t_prev, residual);
        }

        let approach_tick = (self.scenario.spec.approach_end / dt).round() as usize;
        if self.tick == approach_tick {
            for (i, k) in ticks.iter().enumerate() {
                self.approach_errors[i] = Some((k.out.r_c_err.norm(), k.out.e_r.norm(), k.out.y_err.norm()));
            }
        }

        let hover_start = self.scenario.hover_start();
        if self.t >= hover_start - 1e-9 {
            if self.hover_s_tot.is_none() {
                self.hover_s_tot = Some(s_tot);
            }
            self.hover_integral += ydot_bar * ydot_bar * dt;
            if ydot_bar >= SETTLE_THRESHOLD {
                self.last_unsettled = Some(self.t);
            }
        }
        self.last_ydot_bar = ydot_bar;

        if self.tick.is_multiple_of(self.scenario.settings.log_every) {
            let (obj_pos, obj_rotvec, obj_vel) = match &self.object {
                Some(o) => (o.pos.into(), log_so3(&o.rot).into(), o.vel.into()),
                None => ([0.0; 3], [0.0; 3], [0.0; 3]),
            };
            self.telemetry.world.push(WorldRow { t: self.t, obj_pos, obj_rotvec, obj_vel, s_obj, s_tot, ydot_bar, contacts: records.len() });
            for r in records {
                self.telemetry.contacts.push(ContactRow { t: self.t, record: *r });
            }
        }
        if self.keep_monitors {
            self.monitors.push(MonitorRecord {
                t: self.t,
                s_am: ticks.iter().map(|k| k.out.storage.total()).collect(),
                s_obj,
                s_tot,
                residual: residuals,
                ydot_bar,
                r_c_err: ticks.iter().map(|k| k.out.r_c_err.norm()).collect(),
                e_r: ticks.iter().map(|k| k.out.e_r.norm()).collect(),
                y_err: ticks.iter().map(|k| k.out.y_err.norm()).collect(),
            });
        }
    }

    /// Logs the previous tick of AM `i`, now that its residual is known.
    fn emit_row(&mut self, i: usize, t: f64, residual: f64) {
        let log_every = self.scenario.settings.log_every;
        if !(self.tick - 1).is_multiple_of(log_every) {
            return;
        }
        let Some(prev) = &self.prev[i] else { return };
        let o = &prev.out;
        let v3 = |v: &Vector3<f64>| [v.x, v.y, v.z];
        let row = AmRow {
            t,
            r_c: v3(&o.r_c),
            r_c_err: v3(&o.r_c_err),
            e_r: v3(&o.e_r),
            e_w: v3(&o.e_w),
            y: o.y.as_slice().to_vec(),
            y_err: o.y_err.as_slice().to_vec(),
            f_e: v3(&prev.applied_force),
            tau_e: [0.0; 3],
            u1: o.u1,
            u2: v3(&o.u2),
            u3: o.u3.as_slice().to_vec(),
            s_am: o.storage.total(),
            residual,
            y_dot: o.y_dot.as_slice().to_vec(),
            y_dot_err: o.y_dot_err.as_slice().to_vec(),
            f_y: o.f_y.as_slice().to_vec(),
            held: prev.held,
        };
        self.telemetry.am[i].push(row);
    }

    /// Run to the scenario's end and summarize.
    pub fn run(mut self) -> Result<RunOutput> {
        let total = (self.scenario.spec.duration / self.scenario.settings.dt).round() as usize;
        while self.tick < total {
            self.step()?;
        }
        // One more controller/monitor evaluation closes the last step.
        self.close()?;
        let summary = self.summarize();
        Ok(RunOutput { telemetry: self.telemetry, summary })
    }

    fn close(&mut self) -> Result<()> {
        let model = &self.scenario.model.clone();
        let ees: Vec<EeSnapshot> = self.ams.iter().map(|s| ee_snapshot(model, s)).collect();
        let contact = self.object.as_ref().map(|o| world::contact_forces(o, &ees, &self.anchors, &self.scenario.contact));
        let mut ticks = Vec::new();
        for i in 0..self.ams.len() {
            let force = contact.as_ref().map(|c| c.ee_forces[i]).unwrap_or_default();
            let sp = self.scenario.plans[i].setpoint(self.t);
            let f_e = Wrench { force, moment: Vector3::zeros(), frame: WrenchFrame::World };
            let out = match self.controllers[i].step(model, &self.ams[i], &sp, &f_e) {
                Ok(out) => out,
                Err(e) => {
                    self.events.push(Event { t: self.t, am: i, message: e.to_string() });
                    return Ok(());
                }
            };
            ticks.push(Tick { out, held: false, applied_force: force });
        }
        self.update_monitors(&ticks, contact.as_ref().map(|c| c.records.as_slice()).unwrap_or(&[]));
        Ok(())
    }

    fn summarize(&self) -> Summary {
        let sc = &self.scenario;
        let k_y = &sc.gains.k_y;
        let k_y_inv = k_y.clone().try_inverse().unwrap_or_else(|| DMatrix::zeros(k_y.nrows(), k_y.ncols()));
        let mut ams = Vec::new();
        for (i, rows) in self.telemetry.am.iter().enumerate() {
            let last = rows.last();
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let t_end = last.map(|r| r.t).unwrap_or(0.0);
            let tail: Vec<&AmRow> = rows.iter().filter(|r| r.t >= t_end - 2.0).collect();
            let hover_f_e_z = if tail.is_empty() { 0.0 } else { tail.iter().map(|r| r.f_e[2]).sum::<f64>() / tail.len() as f64 };
            let predicted = last.map(|r| (&k_y_inv * DVector::from_column_slice(&r.f_y))[0]).unwrap_or(0.0);
            let (ar, ae, ay) = self.approach_errors[i].unwrap_or((f64::NAN, f64::NAN, f64::NAN));
            ams.push(AmSummary {
                final_r_c_err: last.map(|r| norm(&r.r_c_err)).unwrap_or(f64::NAN),
                final_e_r: last.map(|r| norm(&r.e_r)).unwrap_or(f64::NAN),
                final_y_err: last.map(|r| norm(&r.y_err)).unwrap_or(f64::NAN),
                approach_r_c_err: ar,
                approach_e_r: ae,
                approach_y_err: ay,
                hover_f_e_z,
                final_y_err_x: last.map(|r| r.y_err[0]).unwrap_or(f64::NAN),
                predicted_y_err_x: predicted,
                max_free_flight_storage_increase: self.free_increase[i],
                worst_passivity_ratio: self.passivity_ratio[i],
                held_ticks: self.held_ticks[i],
            });
        }

        let hover_start = sc.hover_start();
        let bound = self.hover_s_tot.unwrap_or(f64::NAN) / sc.gains.lambda_min_dy();
        let settle_time = match self.last_unsettled {
            None => Some(hover_start),
            Some(t) if t + sc.settings.dt < sc.spec.duration - 1e-9 => Some(t + sc.settings.dt),
            _ => None,
        };
        let convergence = ConvergenceSummary {
            hover_start,
            settle_time,
            threshold: SETTLE_THRESHOLD,
            final_ydot_bar: self.last_ydot_bar,
            integral: self.hover_integral,
            bound,
        };
        let object = match (&self.object, sc.lift_target) {
            (Some(o), Some(target)) => Some(ObjectSummary { final_height: o.pos.z, target_height: target }),
            _ => None,
        };

        let mut monitors = Vec::new();
        // NaN marks a quantity that was never measured and must not be skipped by `max`.
        let worst = |f: &dyn Fn(&AmSummary) -> f64| ams.iter().map(f).fold(f64::NEG_INFINITY, |a, b| if a.is_nan() || b.is_nan() { f64::NAN } else { a.max(b) });
        let unreached = |detail: String, reached: bool| if reached { detail } else { format!("{detail} (phase not reached)") };
        let inc = worst(&|a| a.max_free_flight_storage_increase);
        monitors.push(MonitorResult {
            name: "free_flight_storage".into(),
            passed: inc <= FREE_FLIGHT_STORAGE_TOL,
            value: inc,
            limit: FREE_FLIGHT_STORAGE_TOL,
            detail: "largest per-step increase of S_AM before contact, J".into(),
            enabled: true,
        });
        let approach = worst(&|a| a.approach_r_c_err.max(a.approach_e_r).max(a.approach_y_err));
        monitors.push(MonitorResult {
            name: "approach_convergence".into(),
            passed: approach < APPROACH_TOL,
            value: approach,
            limit: APPROACH_TOL,
            detail: unreached("largest of ‖r̃_c‖, ‖e_R‖, ‖ỹ‖ at the end of the approach".into(), !approach.is_nan()),
            enabled: true,
        });
        if sc.gains.compensate_forces {
            let ratio = worst(&|a| a.worst_passivity_ratio);
            monitors.push(MonitorResult {
                name: "passivity".into(),
                passed: ratio <= PASSIVITY_TOL,
                value: ratio,
                limit: PASSIVITY_TOL,
                detail: "max of residual / (1 + |ẏ̃ᵀF_y|) over all steps and AMs".into(),
                enabled: true,
            });
        }
        if sc.spec.object.is_some() {
            let hovered = self.hover_s_tot.is_some();
            let settle = match settle_time {
                Some(t) if hovered => t - hover_start,
                Some(_) => f64::NAN,
                None => f64::INFINITY,
            };
            monitors.push(MonitorResult {
                name: "hover_settling".into(),
                passed: settle <= 5.0,
                value: settle,
                limit: 5.0,
                detail: unreached(format!("seconds after hover start until ‖ẏ̄‖ stays below {SETTLE_THRESHOLD}"), hovered),
                enabled: true,
            });
            let integral = if hovered { convergence.integral } else { f64::NAN };
            monitors.push(MonitorResult {
                name: "hover_energy_bound".into(),
                passed: integral <= 1.1 * bound,
                value: integral,
                limit: 1.1 * bound,
                detail: unreached("∫‖ẏ̄‖²dt over the hover against 1.1·S_tot(start)/λ_m(D_y)".into(), hovered),
                enabled: true,
            });
            if let Some(o) = &object {
                let err = if hovered { (o.final_height - o.target_height).abs() } else { f64::NAN };
                monitors.push(MonitorResult {
                    name: "lift".into(),
                    passed: err <= LIFT_TOL,
                    value: err,
                    limit: LIFT_TOL,
                    detail: unreached("object height error at the end, m".into(), hovered),
                    enabled: true,
                });
            }
        }
        for m in &mut monitors {
            m.enabled = sc.settings.monitors.enabled(&m.name);
        }
        let passed = monitors.iter().all(|m| m.passed || !m.enabled);
        Summary {
            format: crate::telemetry::FORMAT_VERSION,
            scenario: sc.spec.name.clone(),
            n_ams: sc.spec.n_ams,
            dt: sc.settings.dt,
            duration: sc.spec.duration,
            seed: sc.settings.seed,
            compensate_forces: sc.gains.compensate_forces,
            completed: true,
            ams,
            object,
            convergence,
            monitors,
            events: self.events.clone(),
            passed,
        }
    }
}

/// Build and run a scenario in one call.
pub fn run_scenario(scenario: Scenario) -> Result<RunOutput> {
    Simulation::new(scenario)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_build() {
        for p in PRESETS {
            let sc = Scenario::preset(p, SimSettings::default()).unwrap();
            assert_eq!(sc.plans.len(), sc.spec.n_ams);
            assert_eq!(sc.phases.first().unwrap().start, 0.0);
            for w in sc.phases.windows(2) {
                assert_eq!(w[0].end, w[1].start);
            }
        }
        assert!(ScenarioSpec::preset("nope").is_err());
    }

    #[test]
    fn initial_state_matches_setpoint() {
        let sc = Scenario::preset("two_am_grasp", SimSettings::default()).unwrap();
        for (plan, s) in sc.plans.iter().zip(&sc.initial_ams) {
            let sp = plan.setpoint(0.0);
            let c = dynamics::com_quantities(&sc.model, s).r_c;
            assert!((c - sp.r_c).norm() < 1e-12);
            let y = PlanarTask::new(plan.yaw).output(&dynamics::ee_pose(&sc.model, s));
            assert!((y - Vector3::new(sp.y[0], sp.y[1], sp.y[2])).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_everything_stays_put() {
        let model = MultibodyModel::default_planar_arm().with_gravity(0.0);
        let s = AmState::at_rest(&model, Vector3::new(0.1, 0.2, 0.3), rot_z(0.4), model.nominal_q.clone());
        let next = am_rk4_step(&model, &s, &DVector::zeros(9), &Wrench::zero(WrenchFrame::World), 1e-3).unwrap();
        assert_eq!(next.p_b, s.p_b);
        assert_eq!(next.q, s.q);
        assert!((next.r_b - s.r_b).norm() < 1e-15);
    }
}
