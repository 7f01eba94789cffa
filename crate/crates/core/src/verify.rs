//! Property suites behind `amgrasp check`.
//!
//! Each property is measured against an oracle that does not share code with
//! the quantity under test where that is practical: kinetic energy and the
//! mass matrix are rebuilt from per-body point velocities, `Ṁ` comes from
//! central differences, and closed-loop residuals are formed from states
//! advanced by the integrator rather than from the control law's own algebra.

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::control::{ControlGains, Controller, Setpoint};
use crate::decoupling::{self, PlanarTask};
use crate::dynamics;
use crate::error::{Error, Result};
use crate::model::{AmState, MultibodyModel, Wrench, WrenchFrame};
use crate::sim::{self, Scenario, SimSettings};
use crate::spatial::exp_so3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Dynamics,
    Decoupling,
    Energy,
    Control,
    Monitors,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Dynamics, Suite::Decoupling, Suite::Energy, Suite::Control, Suite::Monitors];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Dynamics => "dynamics",
            Suite::Decoupling => "decoupling",
            Suite::Energy => "energy",
            Suite::Control => "control",
            Suite::Monitors => "monitors",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| Error::Config {
            field: "suite".into(),
            message: format!("unknown suite `{s}` (expected one of {})", Self::ALL.map(|x| x.name()).join(", ")),
        })
    }
}

/// One measured property.
#[derive(Debug, Clone, Serialize)]
pub struct Property {
    pub suite: &'static str,
    pub name: String,
    pub passed: bool,
    /// Worst value observed.
    pub worst: f64,
    pub limit: f64,
    pub detail: String,
}

fn prop(suite: Suite, name: &str, worst: f64, limit: f64, detail: &str) -> Property {
    Property { suite: suite.name(), name: name.into(), passed: worst < limit, worst, limit, detail: detail.into() }
}

#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    /// Random states per sampled property.
    pub samples: usize,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self { samples: 100, seed: 0 }
    }
}

/// Uniformly scattered state: position in a 2 m cube, any attitude, joints
/// within ±2 rad, velocities of order one.
pub fn random_state(model: &MultibodyModel, rng: &mut impl Rng) -> AmState {
    let mut u = |a: f64| rng.gen_range(-a..a);
    AmState {
        p_b: Vector3::new(u(1.0), u(1.0), u(1.0)),
        r_b: exp_so3(&Vector3::new(u(3.0), u(3.0), u(3.0))),
        q: DVector::from_fn(model.dof(), |_, _| u(2.0)),
        v: DVector::from_fn(model.nv(), |_, _| u(1.0)),
    }
}

/// Point-velocity oracle built straight from the link parameters.
pub mod oracle {
    use super::*;

    /// World placement of every body and every joint frame.
    struct Chain {
        /// `(R, p)` of bodies `0..=n`.
        bodies: Vec<(Matrix3<f64>, Vector3<f64>)>,
        /// World axis and origin of joints `1..=n`.
        joints: Vec<(Vector3<f64>, Vector3<f64>)>,
    }

    fn chain(model: &MultibodyModel, s: &AmState) -> Chain {
        let mut bodies = vec![(s.r_b, s.p_b)];
        let mut joints = Vec::new();
        for (i, link) in model.links.iter().enumerate() {
            let (rp, pp) = bodies[i];
            let r_joint = rp * link.origin.rot;
            let p_joint = pp + rp * link.origin.pos;
            let axis = r_joint * link.axis;
            let rot = Rotation3::from_axis_angle(&Unit::new_normalize(link.axis), s.q[i]);
            joints.push((axis, p_joint));
            bodies.push((r_joint * rot.matrix(), p_joint));
        }
        Chain { bodies, joints }
    }

    /// World CoM velocity and angular velocity of every body for velocity `v`.
    fn velocities(model: &MultibodyModel, s: &AmState, c: &Chain, v: &DVector<f64>) -> Vec<(Vector3<f64>, Vector3<f64>)> {
        let v_b = s.r_b * Vector3::new(v[0], v[1], v[2]);
        let w_b = s.r_b * Vector3::new(v[3], v[4], v[5]);
        let mut out = vec![(v_b, w_b)];
        for k in 0..model.dof() {
            let (r, p) = c.bodies[k + 1];
            let com = p + r * model.links[k].com;
            let mut lin = v_b + w_b.cross(&(com - s.p_b));
            let mut ang = w_b;
            for j in 0..=k {
                let (a, o) = c.joints[j];
                lin += a.cross(&(com - o)) * v[6 + j];
                ang += a * v[6 + j];
            }
            out.push((lin, ang));
        }
        out
    }

    fn body_inertia(model: &MultibodyModel, c: &Chain, k: usize) -> (f64, Matrix3<f64>) {
        let r = c.bodies[k].0;
        if k == 0 {
            (model.base_mass, r * model.base_inertia * r.transpose())
        } else {
            let l = &model.links[k - 1];
            (l.mass, r * l.inertia * r.transpose())
        }
    }

    /// `Σ ½ m‖v_c‖² + ½ ωᵀIω` over all bodies.
    pub fn kinetic_energy(model: &MultibodyModel, s: &AmState) -> f64 {
        let c = chain(model, s);
        velocities(model, s, &c, &s.v)
            .iter()
            .enumerate()
            .map(|(k, (v, w))| {
                let (m, i) = body_inertia(model, &c, k);
                0.5 * m * v.norm_squared() + 0.5 * w.dot(&(i * w))
            })
            .sum()
    }

    /// Mass matrix assembled from the per-body velocity Jacobians.
    pub fn mass_matrix(model: &MultibodyModel, s: &AmState) -> DMatrix<f64> {
        let nv = model.nv();
        let c = chain(model, s);
        let cols: Vec<Vec<(Vector3<f64>, Vector3<f64>)>> = (0..nv)
            .map(|i| {
                let mut e = DVector::zeros(nv);
                e[i] = 1.0;
                velocities(model, s, &c, &e)
            })
            .collect();
        DMatrix::from_fn(nv, nv, |i, j| {
            (0..c.bodies.len())
                .map(|k| {
                    let (m, inertia) = body_inertia(model, &c, k);
                    let (vi, wi) = cols[i][k];
                    let (vj, wj) = cols[j][k];
                    m * vi.dot(&vj) + wi.dot(&(inertia * wj))
                })
                .sum()
        })
    }

    /// World rotation of the end-effector frame.
    pub fn ee_rotation(model: &MultibodyModel, s: &AmState) -> Matrix3<f64> {
        let c = chain(model, s);
        c.bodies[model.dof()].0 * model.ee_offset.rot
    }

    /// Total mass times gravity times CoM height.
    pub fn potential_energy(model: &MultibodyModel, s: &AmState) -> f64 {
        let c = chain(model, s);
        let mut mz = model.base_mass * s.p_b.z;
        for (k, l) in model.links.iter().enumerate() {
            let (r, p) = c.bodies[k + 1];
            mz += l.mass * (p + r * l.com).z;
        }
        mz * model.gravity
    }
}

/// Largest off-block-diagonal Frobenius mass of `Λ` for blocks `(3, 3, n)`.
fn off_block_norm(l: &DMatrix<f64>) -> f64 {
    let nv = l.nrows();
    let block = |i: usize| if i < 3 { 0 } else if i < 6 { 1 } else { 2 };
    let mut s = 0.0;
    for i in 0..nv {
        for j in 0..nv {
            if block(i) != block(j) {
                s += l[(i, j)] * l[(i, j)];
            }
        }
    }
    s.sqrt()
}

fn dynamics_suite(model: &MultibodyModel, opts: &CheckOptions) -> Result<Vec<Property>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (mut ke, mut mm, mut skew, mut grav) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..opts.samples {
        let s = random_state(model, &mut rng);
        let t = oracle::kinetic_energy(model, &s);
        ke = ke.max((dynamics::kinetic_energy(model, &s) - t).abs() / t.max(1e-12));
        let m = dynamics::mass_matrix(model, &s.q)?;
        let mo = oracle::mass_matrix(model, &s);
        mm = mm.max((&m - &mo).norm() / mo.norm());
        let h = 1e-6;
        let m_dot = (dynamics::mass_matrix(model, &s.flowed(h).q)? - dynamics::mass_matrix(model, &s.flowed(-h).q)?) / (2.0 * h);
        let c = dynamics::coriolis_matrix(model, &s.q, &s.v);
        let x = DVector::from_fn(model.nv(), |_, _| rng.gen_range(-1.0..1.0));
        skew = skew.max((x.transpose() * (m_dot - 2.0 * c) * &x)[0].abs());

        // g_i is the rate of potential energy along quasi-velocity direction i.
        let g = dynamics::gravity_vector(model, &s.q, &s.r_b);
        for i in 0..model.nv() {
            let mut dir = s.clone();
            dir.v = DVector::zeros(model.nv());
            dir.v[i] = 1.0;
            let fd = (oracle::potential_energy(model, &dir.flowed(1e-5)) - oracle::potential_energy(model, &dir.flowed(-1e-5))) / 2e-5;
            grav = grav.max((g[i] - fd).abs());
        }
    }
    let d = Suite::Dynamics;
    Ok(vec![
        prop(d, "kinetic_energy_identity", ke, 1e-10, "relative gap between ½VᵀMV and the per-body energy sum"),
        prop(d, "mass_matrix_oracle", mm, 1e-10, "relative Frobenius gap to the point-velocity mass matrix"),
        prop(d, "skew_symmetry", skew, 1e-5, "|xᵀ(Ṁ − 2C)x| with Ṁ by central differences"),
        prop(d, "gravity_is_potential_gradient", grav, 1e-6, "|g_i − dU/dt along quasi-velocity i|, central differences"),
    ])
}

fn decoupling_suite(model: &MultibodyModel, opts: &CheckOptions) -> Result<Vec<Property>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xdec0);
    let nv = model.nv();
    let m = model.total_mass();
    let (mut off, mut com, mut top, mut thrust, mut frc) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..opts.samples {
        let s = random_state(model, &mut rng);
        let terms = decoupling::decoupled_terms(model, &s)?;
        let t_inv = terms.t.clone().lu().try_inverse().ok_or_else(|| Error::Singular { what: "T", cond: f64::INFINITY, state: String::new() })?;
        let lam = t_inv.transpose() * oracle::mass_matrix(model, &s) * &t_inv;
        off = off.max(off_block_norm(&lam) / lam.norm());
        com = com.max((lam.view((0, 0), (3, 3)) - DMatrix::<f64>::identity(3, 3) * m).norm() / m);

        let mut expect = DMatrix::zeros(3, nv);
        expect.view_mut((0, 0), (3, 3)).copy_from(&s.r_b);
        top = top.max((t_inv.transpose().rows(0, 3) - expect).norm());

        let u1 = rng.gen_range(0.0..30.0);
        let mut u = DVector::from_fn(nv, |_, _| rng.gen_range(-1.0..1.0));
        u.fixed_rows_mut::<3>(0).copy_from(&(s.r_b.column(2) * u1));
        let tau = terms.t.transpose() * u;
        thrust = thrust.max((Vector3::new(tau[0], tau[1], tau[2]) - Vector3::new(0.0, 0.0, u1)).norm());

        let f = Vector3::from_fn(|_, _| rng.gen_range(-10.0..10.0));
        let mo = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let f_xi = decoupling::transform_wrench(&terms, &terms.j_e, &Wrench::body(f, mo));
        let r_e = oracle::ee_rotation(model, &s);
        frc = frc.max((f_xi.fixed_rows::<3>(0) - r_e * f).norm());
    }
    let d = Suite::Decoupling;
    Ok(vec![
        prop(d, "lambda_block_diagonal", off, 1e-8, "off-block Frobenius norm of T⁻ᵀMT⁻¹ over ‖Λ_ξ‖_F"),
        prop(d, "com_block_is_mass", com, 1e-9, "‖Λ_ξ[0..3,0..3] − mI‖ / m"),
        prop(d, "t_inv_t_top_rows", top, 1e-9, "‖T⁻ᵀ[0..3,:] − [R_b 0 0]‖"),
        prop(d, "thrust_is_u1", thrust, 1e-9, "‖τ[0..3] − (0, 0, u₁)‖ under τ = Tᵀu"),
        prop(d, "com_force_is_ee_force", frc, 1e-9, "‖F_rc − R_e f_e‖"),
    ])
}

/// Total energy from the oracle's kinetic and potential terms.
fn oracle_energy(model: &MultibodyModel, s: &AmState) -> f64 {
    oracle::kinetic_energy(model, s) + oracle::potential_energy(model, s)
}

fn tumbling_state(model: &MultibodyModel) -> AmState {
    let mut s = AmState::at_rest(model, Vector3::new(0.0, 0.0, 1.0), exp_so3(&Vector3::new(0.2, -0.1, 0.3)), model.nominal_q.clone());
    s.v = DVector::from_fn(model.nv(), |i, _| 0.5 * ((i as f64) * 1.3).sin());
    s
}

/// Unforced flight for `duration` at step `dt`.
pub fn coast(model: &MultibodyModel, s0: &AmState, dt: f64, duration: f64) -> Result<AmState> {
    let steps = (duration / dt).round() as usize;
    let tau = DVector::zeros(model.nv());
    let zero = Wrench::zero(WrenchFrame::World);
    let mut s = s0.clone();
    for _ in 0..steps {
        s = sim::am_rk4_step(model, &s, &tau, &zero, dt)?;
    }
    Ok(s)
}

fn state_distance(a: &AmState, b: &AmState) -> f64 {
    let rot = (a.r_b - b.r_b).norm();
    ((a.p_b - b.p_b).norm_squared() + rot * rot + (&a.q - &b.q).norm_squared() + (&a.v - &b.v).norm_squared()).sqrt()
}

/// Error ratio of the integrator on halving `dt`, against a `dt/16` reference.
pub fn order_ratio(model: &MultibodyModel, dt: f64, duration: f64) -> Result<f64> {
    let s0 = tumbling_state(model);
    let reference = coast(model, &s0, dt / 16.0, duration)?;
    let coarse = coast(model, &s0, dt, duration)?;
    let fine = coast(model, &s0, dt / 2.0, duration)?;
    Ok(state_distance(&coarse, &reference) / state_distance(&fine, &reference))
}

/// Largest relative energy drift over unforced, gravity-on flight.
pub fn energy_drift(model: &MultibodyModel, dt: f64, duration: f64) -> Result<f64> {
    let mut s = tumbling_state(model);
    let e0 = oracle_energy(model, &s);
    let scale = e0.abs().max(model.total_mass() * model.gravity * 1.0);
    let steps = (duration / dt).round() as usize;
    let tau = DVector::zeros(model.nv());
    let zero = Wrench::zero(WrenchFrame::World);
    let mut worst = 0.0f64;
    for _ in 0..steps {
        s = sim::am_rk4_step(model, &s, &tau, &zero, dt)?;
        worst = worst.max((oracle_energy(model, &s) - e0).abs() / scale);
    }
    Ok(worst)
}

fn energy_suite(model: &MultibodyModel) -> Result<Vec<Property>> {
    let drift = energy_drift(model, 1e-4, 5.0)?;
    let ratio = order_ratio(model, 0.02, 1.0)?;
    let e = Suite::Energy;
    let mut order = prop(e, "integrator_order", (ratio - 16.0).abs(), 4.0, "");
    order.detail = format!("error ratio {ratio:.3} on halving dt (accepted range 12 to 20)");
    Ok(vec![prop(e, "unforced_energy_drift", drift, 1e-4, "max |E(t) − E(0)| / max(E, m g · 1 m) over 5 s at dt = 1e-4"), order])
}

/// Residuals of the designed closed loops, with accelerations taken by
/// central differences over one integration step either side of `s`.
///
/// Returns `(attitude, task)` where the task residual is already divided by
/// its allowance `1e-2‖F_y‖ + 1e-3`.
pub fn closed_loop_residuals(model: &MultibodyModel, s: &AmState, f_e: &Wrench, yaw: f64, h: f64) -> Result<(f64, f64)> {
    let gains = ControlGains::default_for(model, Vector3::new(yaw.cos(), yaw.sin(), 0.0))?;
    let task = PlanarTask::new(yaw);
    let terms = decoupling::decoupled_terms(model, s)?;
    let out = decoupling::task_output(model, s, &task, &terms)?;
    // A setpoint offset from the current state so every error term is active.
    let sp = Setpoint::hold(terms.com.r_c + Vector3::new(0.03, -0.02, 0.01), &out.y + DVector::from_vec(vec![0.02, -0.01, 0.05]));
    let mut ctl = Controller::new(gains.clone(), task, h)?;
    let c0 = ctl.step(model, s, &sp, f_e)?;
    let fwd = sim::am_rk4_step(model, s, &c0.tau, f_e, h)?;
    let bwd = sim::am_rk4_step(model, s, &c0.tau, f_e, -h)?;

    // Attitude: same reference, errors re-evaluated on both neighbours.
    let e_w = |x: &AmState| crate::control::attitude_errors(&x.r_b, &x.w_b(), &c0.r_b_d, &Vector3::zeros()).1;
    let e_w_dot = (e_w(&fwd) - e_w(&bwd)) / (2.0 * h);
    let att = (gains.lambda_wb_d * e_w_dot + gains.k_w * c0.e_w + gains.k_r * c0.e_r).norm();

    // Task: ÿ from the task velocity on both neighbours.
    let y_dot = |x: &AmState| -> Result<DVector<f64>> {
        let t = decoupling::decoupled_terms(model, x)?;
        Ok(decoupling::task_output(model, x, &task, &t)?.j * &t.xi)
    };
    let y_ddot = (y_dot(&fwd)? - y_dot(&bwd)?) / (2.0 * h);
    let res = &c0.lambda_y * y_ddot + &gains.d_y * &c0.y_dot_err + &gains.k_y * &c0.y_err - &c0.f_y;
    Ok((att, res.norm() / (1e-2 * c0.f_y.norm() + 1e-3)))
}

fn control_suite(model: &MultibodyModel, opts: &CheckOptions) -> Result<Vec<Property>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xc0);
    let (mut att, mut task) = (0.0f64, 0.0f64);
    let samples = opts.samples.clamp(1, 50);
    let mut taken = 0;
    while taken < samples {
        // Near-hover states: the laws are only meant for thrust pointing up.
        let mut s = AmState::at_rest(
            model,
            Vector3::new(0.0, 0.0, 1.0),
            exp_so3(&Vector3::from_fn(|_, _| rng.gen_range(-0.3..0.3))),
            &model.nominal_q + DVector::from_fn(model.dof(), |_, _| rng.gen_range(-0.2..0.2)),
        );
        s.v = DVector::from_fn(model.nv(), |_, _| rng.gen_range(-0.3..0.3));
        let f = Wrench { force: Vector3::from_fn(|_, _| rng.gen_range(-5.0..5.0)), moment: Vector3::zeros(), frame: WrenchFrame::World };
        let yaw = rng.gen_range(-3.0..3.0);
        // Skip states near the pitch singularity, where the tool x-axis leaves the heading plane.
        let r = PlanarTask::new(yaw).heading().transpose() * dynamics::ee_pose(model, &s).rot;
        if r[(0, 0)].hypot(r[(2, 0)]) < 0.2 {
            continue;
        }
        taken += 1;
        let (a, t) = closed_loop_residuals(model, &s, &f, yaw, 1e-6)?;
        att = att.max(a);
        task = task.max(t);
    }
    let c = Suite::Control;
    Ok(vec![
        prop(c, "attitude_closed_loop", att, 1e-3, "‖Λ_wb,d ė_w + k_w e_w + k_R e_R‖ by central differences"),
        prop(c, "task_closed_loop", task, 1.0, "‖Λ_y ÿ̃ + D_y ẏ̃ + K_y ỹ − F_y‖ over (1e-2‖F_y‖ + 1e-3)"),
    ])
}

fn monitors_suite(opts: &CheckOptions) -> Result<Vec<Property>> {
    let mut out = Vec::new();
    for preset in ["free_flight", "two_am_grasp"] {
        let settings = SimSettings { seed: opts.seed, ..SimSettings::default() };
        let run = sim::run_scenario(Scenario::preset(preset, settings)?)?;
        for m in &run.summary.monitors {
            let mut p = Property {
                suite: Suite::Monitors.name(),
                name: format!("{preset}.{}", m.name),
                passed: m.passed,
                worst: m.value,
                limit: m.limit,
                detail: m.detail.clone(),
            };
            if !m.enabled {
                p.passed = true;
                p.detail.push_str(" (disabled)");
            }
            out.push(p);
        }
    }
    Ok(out)
}

/// Runs one suite on the shipped model.
pub fn run_suite(suite: Suite, opts: &CheckOptions) -> Result<Vec<Property>> {
    let model = MultibodyModel::default_planar_arm();
    match suite {
        Suite::Dynamics => dynamics_suite(&model, opts),
        Suite::Decoupling => decoupling_suite(&model, opts),
        Suite::Energy => energy_suite(&model),
        Suite::Control => control_suite(&model, opts),
        Suite::Monitors => monitors_suite(opts),
    }
}
