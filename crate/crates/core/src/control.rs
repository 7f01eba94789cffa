//! Decentralized controller for one AM.
//!
//! The three decoupled blocks of the dynamics get their own laws:
//!
//! * CoM: PD with acceleration feedforward and gravity/contact compensation,
//!   producing a desired force `f_d` whose projection on the body z-axis is
//!   the thrust `u₁`.
//! * Attitude: `f_d` fixes the desired base rotation; a geometric SO(3) law
//!   makes `Λ_wb,d ė_w + k_w e_w + k_R e_R = 0`.
//! * Arm: `u₃` shapes the end-effector task error into the impedance
//!   `Λ_y ÿ̃ + D_y ẏ̃ + K_y ỹ = F_y`.
//!
//! [`Controller::step`] only ever sees its own AM's state and its own
//! end-effector wrench.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::decoupling::{self, DecoupledTerms, PlanarTask, TaskOutput};
use crate::error::{Error, Result};
use crate::model::{AmState, MultibodyModel, Wrench, WrenchFrame};
use crate::spatial::{exp_so3, log_so3, project_to_so3, vee};

/// Condition number of `J̄₃` above which the impedance law refuses to act.
pub const ARM_COND_LIMIT: f64 = 1e8;

/// Gains and mode flags of one controller.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGains {
    pub k_t: Matrix3<f64>,
    pub d_t: Matrix3<f64>,
    pub k_r: f64,
    pub k_w: f64,
    pub lambda_wb_d: Matrix3<f64>,
    pub k_y: DMatrix<f64>,
    pub d_y: DMatrix<f64>,
    /// Desired heading of the base x-axis (unit, world frame).
    pub b1d: Vector3<f64>,
    /// Feed the measured contact wrench forward into the CoM and attitude laws.
    pub compensate_forces: bool,
    /// Natural frequency (rad/s) of the critically damped filter that turns
    /// the raw desired rotation into a smooth attitude reference.
    pub attitude_filter: f64,
    lambda_min_dy: f64,
}

/// Default bandwidth of the attitude reference filter, rad/s.
pub const DEFAULT_ATTITUDE_FILTER: f64 = 60.0;

fn min_eig_spd(m: &DMatrix<f64>, name: &str) -> Result<f64> {
    if (m - m.transpose()).norm() > 1e-12 * m.norm().max(1.0) {
        return Err(Error::InvalidInput(format!("{name} must be symmetric")));
    }
    let min = m.clone().symmetric_eigenvalues().min();
    if !(min > 0.0) {
        return Err(Error::InvalidInput(format!("{name} must be positive definite (min eigenvalue {min})")));
    }
    Ok(min)
}

impl ControlGains {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        k_t: Matrix3<f64>,
        d_t: Matrix3<f64>,
        k_r: f64,
        k_w: f64,
        lambda_wb_d: Matrix3<f64>,
        k_y: DMatrix<f64>,
        d_y: DMatrix<f64>,
        b1d: Vector3<f64>,
        compensate_forces: bool,
    ) -> Result<Self> {
        let dyn3 = |m: &Matrix3<f64>| DMatrix::from_column_slice(3, 3, m.as_slice());
        min_eig_spd(&dyn3(&k_t), "K_t")?;
        min_eig_spd(&dyn3(&d_t), "D_t")?;
        min_eig_spd(&dyn3(&lambda_wb_d), "Λ_wb,d")?;
        if !(k_r > 0.0 && k_w > 0.0) {
            return Err(Error::InvalidInput("k_R and k_w must be positive".into()));
        }
        if k_y.shape() != d_y.shape() || k_y.nrows() != k_y.ncols() {
            return Err(Error::InvalidInput("K_y and D_y must be square and the same size".into()));
        }
        min_eig_spd(&k_y, "K_y")?;
        let lambda_min_dy = min_eig_spd(&d_y, "D_y")?;
        if (b1d.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput("b1d must be a unit vector".into()));
        }
        Ok(Self { k_t, d_t, k_r, k_w, lambda_wb_d, k_y, d_y, b1d, compensate_forces, attitude_filter: DEFAULT_ATTITUDE_FILTER, lambda_min_dy })
    }

    /// Default gain set for a model with a 3-joint arm, heading along `b1d`.
    ///
    /// `Λ_wb,d` is the model's own attitude inertia at the nominal arm
    /// configuration, so the attitude loop does not reshape inertia.
    pub fn default_for(model: &MultibodyModel, b1d: Vector3<f64>) -> Result<Self> {
        let m = model.total_mass();
        let nominal = AmState::at_rest(model, Vector3::zeros(), Matrix3::identity(), model.nominal_q.clone());
        let lambda_wb = decoupling::decoupled_terms(model, &nominal)?.lambda_wb();
        let lambda_wb_d = 0.5 * (lambda_wb + lambda_wb.transpose());
        let (k_y, d_y) = default_task_gains(model.dof());
        Self::new(
            Matrix3::identity() * (64.0 * m),
            Matrix3::identity() * (16.0 * m),
            20.0,
            2.5,
            lambda_wb_d,
            k_y,
            d_y,
            b1d,
            true,
        )
    }

    pub fn lambda_min_dy(&self) -> f64 {
        self.lambda_min_dy
    }

    pub fn with_compensation(mut self, on: bool) -> Self {
        self.compensate_forces = on;
        self
    }

    pub fn with_attitude_filter(mut self, omega_n: f64) -> Result<Self> {
        if !(omega_n > 0.0 && omega_n.is_finite()) {
            return Err(Error::InvalidInput(format!("attitude filter bandwidth must be positive, got {omega_n}")));
        }
        self.attitude_filter = omega_n;
        Ok(self)
    }

    pub fn with_heading(mut self, b1d: Vector3<f64>) -> Result<Self> {
        if (b1d.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput("b1d must be a unit vector".into()));
        }
        self.b1d = b1d;
        Ok(self)
    }
}

/// Task stiffness and damping: translational axes stiff, pitch soft.
pub fn default_task_gains(n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut k = DVector::from_element(n, 200.0);
    let mut d = DVector::from_element(n, 40.0);
    if n == 3 {
        k[2] = 2.0;
        d[2] = 0.2;
    }
    (DMatrix::from_diagonal(&k), DMatrix::from_diagonal(&d))
}

/// Desired CoM and task trajectories at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Setpoint {
    pub r_c: Vector3<f64>,
    pub r_c_dot: Vector3<f64>,
    pub r_c_ddot: Vector3<f64>,
    pub y: DVector<f64>,
    pub y_dot: DVector<f64>,
    pub y_ddot: DVector<f64>,
}

impl Setpoint {
    pub fn hold(r_c: Vector3<f64>, y: DVector<f64>) -> Self {
        let n = y.len();
        Self {
            r_c,
            r_c_dot: Vector3::zeros(),
            r_c_ddot: Vector3::zeros(),
            y,
            y_dot: DVector::zeros(n),
            y_ddot: DVector::zeros(n),
        }
    }
}

/// Everything one control tick produces.
#[derive(Debug, Clone)]
pub struct ControlOutput {
    pub u1: f64,
    pub u2: Vector3<f64>,
    pub u3: DVector<f64>,
    /// Actuator vector `[0, 0, f, τ_b, τ_q]`.
    pub tau: DVector<f64>,
    pub f_d: Vector3<f64>,
    /// Attitude reference actually tracked (the filtered desired rotation).
    pub r_b_d: Matrix3<f64>,
    /// Raw desired rotation built from `f_d`.
    pub r_b_d_raw: Matrix3<f64>,
    pub e_r: Vector3<f64>,
    pub e_w: Vector3<f64>,
    pub r_c: Vector3<f64>,
    pub r_c_err: Vector3<f64>,
    pub r_c_dot_err: Vector3<f64>,
    pub y: DVector<f64>,
    pub y_err: DVector<f64>,
    pub y_dot: DVector<f64>,
    pub y_dot_err: DVector<f64>,
    /// `F_ξ` of the measured wrench.
    pub f_xi: DVector<f64>,
    /// `F_y = (J^{Λ+})ᵀ F_ξ`.
    pub f_y: DVector<f64>,
    pub lambda_y: DMatrix<f64>,
    /// Measured end-effector wrench in world axes.
    pub f_e_world: Wrench,
    pub storage: Storage,
}

/// Storage of one AM with the Lyapunov cross terms set to zero.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Storage {
    pub com: f64,
    pub attitude: f64,
    pub task: f64,
}

impl Storage {
    pub fn total(&self) -> f64 {
        self.com + self.attitude + self.task
    }
}

/// CoM law: returns `(f_d, u₁)`.
pub fn com_control(
    gains: &ControlGains,
    setpoint: &Setpoint,
    state: &AmState,
    terms: &DecoupledTerms,
    f_rc: &Vector3<f64>,
) -> Result<(Vector3<f64>, f64)> {
    let m = terms.total_mass;
    let r_err = terms.com.r_c - setpoint.r_c;
    let v_err = terms.xi.fixed_rows::<3>(0) - setpoint.r_c_dot;
    let comp = if gains.compensate_forces { *f_rc } else { Vector3::zeros() };
    let f_d = m * setpoint.r_c_ddot + Vector3::new(0.0, 0.0, m * terms.gravity_accel) - gains.k_t * r_err - gains.d_t * v_err - comp;
    let norm = f_d.norm();
    if !(norm >= 1e-6) {
        return Err(Error::DegenerateThrust { norm });
    }
    let u1 = f_d.dot(&state.r_b.column(2));
    Ok((f_d, u1))
}

/// Desired base rotation `[b₂ × b₃, b₂, b₃]` with `b₃ ∥ f_d`.
pub fn desired_attitude(f_d: &Vector3<f64>, b1d: &Vector3<f64>) -> Result<Matrix3<f64>> {
    let norm = f_d.norm();
    if !(norm > 1e-6) {
        return Err(Error::DegenerateThrust { norm });
    }
    let b3 = f_d / norm;
    let c = b3.cross(b1d);
    if !(c.norm() > 1e-6) {
        return Err(Error::DegenerateHeading);
    }
    let b2 = c / c.norm();
    Ok(Matrix3::from_columns(&[b2.cross(&b3), b2, b3]))
}

/// Rotation and angular velocity errors.
///
/// `omega_d` is the desired body angular velocity of the desired frame,
/// `(R_dᵀṘ_d)∨`.
pub fn attitude_errors(r_b: &Matrix3<f64>, w_b: &Vector3<f64>, r_d: &Matrix3<f64>, omega_d: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let e_r = 0.5 * vee(&(r_d.transpose() * r_b - r_b.transpose() * r_d));
    let e_w = w_b - r_b.transpose() * r_d * omega_d;
    (e_r, e_w)
}

/// Attitude law; returns `(u₂, e_R, e_w)`.
///
/// `omega_d_dot` is the derivative of `omega_d`; the derivative of the
/// transported `w_b,d = R_bᵀR_d Ω_d` is formed from it and the current `w_b`.
pub fn attitude_control(
    gains: &ControlGains,
    state: &AmState,
    terms: &DecoupledTerms,
    r_d: &Matrix3<f64>,
    omega_d: &Vector3<f64>,
    omega_d_dot: &Vector3<f64>,
    f_wb: &Vector3<f64>,
) -> Result<(Vector3<f64>, Vector3<f64>, Vector3<f64>)> {
    let w_b = state.w_b();
    let (e_r, e_w) = attitude_errors(&state.r_b, &w_b, r_d, omega_d);
    let rel = state.r_b.transpose() * r_d;
    let w_bd_dot = -w_b.cross(&(rel * omega_d)) + rel * omega_d_dot;
    let lambda_d_inv = gains
        .lambda_wb_d
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("Λ_wb,d is not invertible".into()))?;
    let coriolis = terms.gamma_xi_times_xi().fixed_rows::<3>(3).into_owned();
    let comp = if gains.compensate_forces { *f_wb } else { Vector3::zeros() };
    let u2 = terms.lambda_wb() * (w_bd_dot - lambda_d_inv * (gains.k_r * e_r + gains.k_w * e_w)) + coriolis - comp;
    Ok((u2, e_r, e_w))
}

/// Result of the impedance law together with the task-space quantities it used.
#[derive(Debug, Clone)]
pub struct Impedance {
    pub u3: DVector<f64>,
    pub y_err: DVector<f64>,
    pub y_dot: DVector<f64>,
    pub y_dot_err: DVector<f64>,
    pub lambda_y: DMatrix<f64>,
    /// `J^{Λ+}`.
    pub j_pinv: DMatrix<f64>,
}

/// Arm law solving `(J^{Λ+})ᵀ(u − Γ_ξξ − ζ_ξ) + Λ_y(J̇ξ − ÿ_d) = −(D_y ẏ̃ + K_y ỹ)` for `u₃`.
///
/// The full `Γ_ξ ξ` and `ζ_ξ` are used; with the decoupled block pattern
/// this is the same expression as writing out the `Γ_wb`, `Γ_wb,ρ`, `Γ_ρ`
/// blocks separately.
#[allow(clippy::too_many_arguments)]
pub fn impedance_control(
    gains: &ControlGains,
    setpoint: &Setpoint,
    state: &AmState,
    terms: &DecoupledTerms,
    task: &PlanarTask,
    out: &TaskOutput,
    u1: f64,
    u2: &Vector3<f64>,
) -> Result<Impedance> {
    let n = terms.dof();
    let (j_pinv, lambda_y) = decoupling::task_inverse(terms, &out.j)?;
    let jbar = j_pinv.transpose();
    let j3 = jbar.view((0, 6), (n, n)).into_owned();
    let cond = decoupling::condition_number(&j3);
    if !(cond < ARM_COND_LIMIT) {
        return Err(Error::ArmSingularity { q: state.q.as_slice().to_vec(), cond });
    }

    let y_err = task.error(&out.y, &setpoint.y);
    let y_dot = &out.j * &terms.xi;
    let y_dot_err = &y_dot - &setpoint.y_dot;
    let bias = terms.gamma_xi_times_xi() + &terms.zeta_xi;

    let mut u12 = DVector::zeros(6);
    u12.fixed_rows_mut::<3>(0).copy_from(&(u1 * state.r_b.column(2)));
    u12.fixed_rows_mut::<3>(3).copy_from(u2);
    let partial = jbar.columns(0, 6) * (u12 - bias.rows(0, 6));
    let rhs = partial + &lambda_y * (&out.j_dot * &terms.xi - &setpoint.y_ddot) + &gains.d_y * &y_dot_err + &gains.k_y * &y_err;
    let solved = j3
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::ArmSingularity { q: state.q.as_slice().to_vec(), cond })?;
    let u3 = bias.rows(6, n) - solved;
    Ok(Impedance { u3, y_err, y_dot, y_dot_err, lambda_y, j_pinv })
}

/// `τ = Tᵀ[u₁ R_b e₃; u₂; u₃]`.
pub fn to_actuator_space(terms: &DecoupledTerms, u1: f64, u2: &Vector3<f64>, u3: &DVector<f64>, r_b: &Matrix3<f64>) -> DVector<f64> {
    let n = u3.len();
    let mut u = DVector::zeros(n + 6);
    u.fixed_rows_mut::<3>(0).copy_from(&(u1 * r_b.column(2)));
    u.fixed_rows_mut::<3>(3).copy_from(u2);
    u.rows_mut(6, n).copy_from(u3);
    terms.t.transpose() * u
}

/// Storage `S_AM` with zero cross terms.
#[allow(clippy::too_many_arguments)]
pub fn storage(
    gains: &ControlGains,
    m: f64,
    r_c_err: &Vector3<f64>,
    r_c_dot_err: &Vector3<f64>,
    e_w: &Vector3<f64>,
    r_b: &Matrix3<f64>,
    r_d: &Matrix3<f64>,
    y_err: &DVector<f64>,
    y_dot_err: &DVector<f64>,
    lambda_y: &DMatrix<f64>,
) -> Storage {
    let com = 0.5 * m * r_c_dot_err.norm_squared() + 0.5 * r_c_err.dot(&(gains.k_t * r_c_err));
    let attitude = 0.5 * e_w.dot(&(gains.lambda_wb_d * e_w)) + 0.5 * gains.k_r * (3.0 - (r_d.transpose() * r_b).trace());
    let task = 0.5 * y_dot_err.dot(&(lambda_y * y_dot_err)) + 0.5 * y_err.dot(&(&gains.k_y * y_err));
    Storage { com, attitude, task }
}

/// Smooth attitude reference `(R_r, Ω_r, Ω̇_r)` chasing the raw desired rotation.
///
/// `Ω̇_r = ω_n² log(R_rᵀR_d)∨ − 2ω_n Ω_r`, advanced once per tick. The three
/// outputs are mutually consistent, so the attitude error dynamics hold
/// exactly with respect to `R_r`, while contact-force ripple in `f_d` is not
/// differentiated twice.
/// Attitude reference `(R_r, Ω_r, Ω̇_r)`.
pub type AttitudeReference = (Matrix3<f64>, Vector3<f64>, Vector3<f64>);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeFilter {
    pub rot: Matrix3<f64>,
    pub omega: Vector3<f64>,
}

impl AttitudeFilter {
    /// Reference for this tick and the filter state for the next one.
    pub fn advance(&self, r_d: &Matrix3<f64>, omega_n: f64, dt: f64) -> (AttitudeReference, AttitudeFilter) {
        let e = log_so3(&(self.rot.transpose() * r_d));
        let omega_dot = omega_n * omega_n * e - 2.0 * omega_n * self.omega;
        let omega = self.omega + omega_dot * dt;
        let rot = project_to_so3(&(self.rot * exp_so3(&(omega * dt))));
        ((self.rot, self.omega, omega_dot), AttitudeFilter { rot, omega })
    }
}

/// Per-AM controller with the small memory of the attitude reference filter.
#[derive(Debug, Clone)]
pub struct Controller {
    pub gains: ControlGains,
    pub task: PlanarTask,
    dt: f64,
    filter: Option<AttitudeFilter>,
    last_tau: Option<DVector<f64>>,
}

impl Controller {
    pub fn new(gains: ControlGains, task: PlanarTask, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidInput(format!("control period must be positive, got {dt}")));
        }
        Ok(Self { gains, task, dt, filter: None, last_tau: None })
    }

    /// Last successfully computed actuator vector.
    pub fn last_tau(&self) -> Option<&DVector<f64>> {
        self.last_tau.as_ref()
    }

    /// One control tick. `f_e` is this AM's own measured end-effector wrench.
    ///
    /// On error nothing in the controller memory changes, so the caller can
    /// keep applying [`Self::last_tau`].
    pub fn step(&mut self, model: &MultibodyModel, state: &AmState, setpoint: &Setpoint, f_e: &Wrench) -> Result<ControlOutput> {
        let terms = decoupling::decoupled_terms(model, state)?;
        let out = decoupling::task_output(model, state, &self.task, &terms)?;
        let f_body = f_e.in_frame(WrenchFrame::EndEffector, &terms.ee_pose.rot);
        let f_xi = decoupling::transform_wrench(&terms, &terms.j_e, &f_body);
        let f_rc = f_xi.fixed_rows::<3>(0).into_owned();
        let f_wb = f_xi.fixed_rows::<3>(3).into_owned();

        let (f_d, u1) = com_control(&self.gains, setpoint, state, &terms, &f_rc)?;
        let raw = desired_attitude(&f_d, &self.gains.b1d)?;
        let filter = self.filter.unwrap_or(AttitudeFilter { rot: raw, omega: Vector3::zeros() });
        let ((r_d, omega_d, omega_d_dot), next_filter) = filter.advance(&raw, self.gains.attitude_filter, self.dt);
        let (u2, e_r, e_w) = attitude_control(&self.gains, state, &terms, &r_d, &omega_d, &omega_d_dot, &f_wb)?;
        let imp = impedance_control(&self.gains, setpoint, state, &terms, &self.task, &out, u1, &u2)?;
        let tau = to_actuator_space(&terms, u1, &u2, &imp.u3, &state.r_b);
        let f_y = imp.j_pinv.transpose() * &f_xi;

        let r_c_err = terms.com.r_c - setpoint.r_c;
        let r_c_dot_err = terms.xi.fixed_rows::<3>(0) - setpoint.r_c_dot;
        let storage = storage(
            &self.gains,
            terms.total_mass,
            &r_c_err,
            &r_c_dot_err,
            &e_w,
            &state.r_b,
            &r_d,
            &imp.y_err,
            &imp.y_dot_err,
            &imp.lambda_y,
        );

        self.filter = Some(next_filter);
        self.last_tau = Some(tau.clone());
        Ok(ControlOutput {
            u1,
            u2,
            u3: imp.u3,
            tau,
            f_d,
            r_b_d: r_d,
            r_b_d_raw: raw,
            e_r,
            e_w,
            r_c: terms.com.r_c,
            r_c_err,
            r_c_dot_err,
            y: out.y,
            y_err: imp.y_err,
            y_dot: imp.y_dot,
            y_dot_err: imp.y_dot_err,
            f_xi,
            f_y,
            lambda_y: imp.lambda_y,
            f_e_world: f_body.in_frame(WrenchFrame::World, &terms.ee_pose.rot),
            storage,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::rot_x;

    #[test]
    fn hover_force_is_weight() {
        let model = MultibodyModel::default_planar_arm();
        let gains = ControlGains::default_for(&model, Vector3::x()).unwrap();
        let s = AmState::at_rest(&model, Vector3::new(0.0, 0.0, 1.0), Matrix3::identity(), model.nominal_q.clone());
        let terms = decoupling::decoupled_terms(&model, &s).unwrap();
        let sp = Setpoint::hold(terms.com.r_c, DVector::zeros(3));
        let (f_d, u1) = com_control(&gains, &sp, &s, &terms, &Vector3::zeros()).unwrap();
        let mg = model.total_mass() * model.gravity;
        assert!((f_d - Vector3::new(0.0, 0.0, mg)).norm() < 1e-12);
        assert!((u1 - mg).abs() < 1e-12);

        let mut tilted = s.clone();
        tilted.r_b = rot_x(30f64.to_radians());
        let terms = decoupling::decoupled_terms(&model, &tilted).unwrap();
        let sp = Setpoint::hold(terms.com.r_c, DVector::zeros(3));
        let (_, u1) = com_control(&gains, &sp, &tilted, &terms, &Vector3::zeros()).unwrap();
        assert!((u1 - mg * 30f64.to_radians().cos()).abs() < 1e-12);
    }

    #[test]
    fn desired_attitude_aligned() {
        let r = desired_attitude(&Vector3::new(0.0, 0.0, 17.0), &Vector3::x()).unwrap();
        assert!((r - Matrix3::identity()).norm() < 1e-15);
        assert!(matches!(desired_attitude(&Vector3::new(2.0, 0.0, 0.0), &Vector3::x()), Err(Error::DegenerateHeading)));
        assert!(matches!(desired_attitude(&Vector3::zeros(), &Vector3::x()), Err(Error::DegenerateThrust { .. })));
    }

    #[test]
    fn single_axis_attitude_error() {
        let theta: f64 = 0.2;
        let (e_r, e_w) = attitude_errors(&rot_x(theta), &Vector3::zeros(), &Matrix3::identity(), &Vector3::zeros());
        assert!((e_r - Vector3::new(theta.sin(), 0.0, 0.0)).norm() < 1e-15);
        assert_eq!(e_w, Vector3::zeros());
    }

    #[test]
    fn gains_reject_indefinite() {
        let model = MultibodyModel::default_planar_arm();
        let g = ControlGains::default_for(&model, Vector3::x()).unwrap();
        let bad = ControlGains::new(-g.k_t, g.d_t, g.k_r, g.k_w, g.lambda_wb_d, g.k_y.clone(), g.d_y.clone(), g.b1d, true);
        assert!(bad.is_err());
        assert!(g.clone().with_heading(Vector3::new(1.0, 1.0, 0.0)).is_err());
    }
}
