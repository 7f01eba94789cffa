//! Floating-base rigid multibody dynamics in body-frame quasi-velocities.
//!
//! Equations of motion for one aerial manipulator:
//!
//! ```text
//! M(q) V̇ + C(q, V) V + g(R_b, q) = τ + J_eᵀ F_e,      V = [v_b; w_b; q̇]
//! ```
//!
//! Bodies are indexed `0` (the base, frame at its CoM) through `n` (last link).
//! Spatial quantities are expressed in each body's own coordinates with the
//! linear-first layout of [`crate::spatial`].
//!
//! * `M` comes from the composite-rigid-body recursion.
//! * The velocity bias `C(q,V)V` and `g` come from a recursive Newton–Euler
//!   sweep with the base treated as a free 6-DOF joint.
//! * The Coriolis *matrix* is assembled body by body as
//!   `Σ J_kᵀ (I_k J̇_k + B_k(v_k)) J_k`, where `B_k` is the skew-symmetric
//!   rigid-body gyroscopic term written at the body CoM. This makes
//!   `Ṁ − 2C` skew-symmetric and reproduces the Newton–Euler bias exactly.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::model::{AmState, MultibodyModel, Wrench, WrenchFrame};
use crate::spatial::{crf, crm, hat, spatial_inertia, Pose};

/// Soft joint limit; exceeding it only produces a warning.
pub const SOFT_JOINT_LIMIT: f64 = 150.0 * std::f64::consts::PI / 180.0;

/// Arm forward kinematics at a joint configuration, relative to the base frame.
#[derive(Debug, Clone)]
pub struct Kinematics {
    /// Placement of body `k` in the base frame (`k = 0` is the identity).
    pub body_in_base: Vec<Pose>,
    /// Motion transform from the parent's coordinates into body `k`'s.
    pub x_parent: Vec<Matrix6<f64>>,
    /// Joint motion subspace of body `k` in its own coordinates (unused for `k = 0`).
    pub subspace: Vec<Vector6<f64>>,
    /// Spatial inertia of body `k` about its frame origin.
    pub inertia: Vec<Matrix6<f64>>,
    /// End-effector placement in the base frame.
    pub ee_in_base: Pose,
}

impl Kinematics {
    pub fn new(model: &MultibodyModel, q: &DVector<f64>) -> Self {
        let n = model.dof();
        let mut body_in_base = Vec::with_capacity(n + 1);
        let mut x_parent = Vec::with_capacity(n + 1);
        let mut subspace = Vec::with_capacity(n + 1);
        let mut inertia = Vec::with_capacity(n + 1);

        body_in_base.push(Pose::identity());
        x_parent.push(Matrix6::identity());
        subspace.push(Vector6::zeros());
        inertia.push(spatial_inertia(model.base_mass, &Vector3::zeros(), &model.base_inertia));

        for (i, link) in model.links.iter().enumerate() {
            let joint = Pose::new(crate::spatial::axis_angle(&link.axis, q[i]), Vector3::zeros());
            let local = link.origin.compose(&joint);
            body_in_base.push(body_in_base[i].compose(&local));
            x_parent.push(local.motion_to_child());
            subspace.push(Vector6::new(0.0, 0.0, 0.0, link.axis.x, link.axis.y, link.axis.z));
            inertia.push(spatial_inertia(link.mass, &link.com, &link.inertia));
        }
        let ee_in_base = body_in_base[n].compose(&model.ee_offset);
        Self { body_in_base, x_parent, subspace, inertia, ee_in_base }
    }

    pub fn bodies(&self) -> usize {
        self.body_in_base.len()
    }

    /// Motion transform from body `j`'s coordinates into body `k`'s.
    pub fn x_between(&self, k: usize, j: usize) -> Matrix6<f64> {
        self.body_in_base[j].inverse().compose(&self.body_in_base[k]).motion_to_child()
    }

    /// Body Jacobian of body `k`: `v_k = J_k V` in body-`k` coordinates.
    pub fn body_jacobian(&self, k: usize) -> DMatrix<f64> {
        let nv = self.bodies() + 5;
        let mut j = DMatrix::zeros(6, nv);
        let x_k0 = self.x_between(k, 0);
        j.view_mut((0, 0), (6, 6)).copy_from(&x_k0);
        for jj in 1..=k {
            let col = self.x_between(k, jj) * self.subspace[jj];
            j.column_mut(5 + jj).copy_from(&col);
        }
        j
    }

    /// Time derivative of [`Self::body_jacobian`] along the velocity `v`.
    fn body_jacobian_dot(&self, k: usize, jac: &DMatrix<f64>, twists: &[Vector6<f64>]) -> DMatrix<f64> {
        let nv = jac.ncols();
        let mut jd = DMatrix::zeros(6, nv);
        let v_k = twists[k];
        // A column fixed in frame j evolves as (X_kj v_j − v_k) ×ₘ column.
        let rel0 = crm(&(self.x_between(k, 0) * twists[0] - v_k));
        for c in 0..6 {
            let col: Vector6<f64> = jac.fixed_view::<6, 1>(0, c).into_owned();
            jd.column_mut(c).copy_from(&(rel0 * col));
        }
        for jj in 1..=k {
            let rel = crm(&(self.x_between(k, jj) * twists[jj] - v_k));
            let col: Vector6<f64> = jac.fixed_view::<6, 1>(0, 5 + jj).into_owned();
            jd.column_mut(5 + jj).copy_from(&(rel * col));
        }
        jd
    }
}

fn check_finite(what: &str, v: &DVector<f64>) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} contains non-finite entries")))
    }
}

/// Returns `true` (and logs a warning) if any joint is beyond the soft limit.
pub fn exceeds_soft_limits(q: &DVector<f64>) -> bool {
    let over = q.iter().any(|a| a.abs() > SOFT_JOINT_LIMIT);
    if over {
        log::warn!("joint configuration {:?} beyond ±150° soft limit", q.as_slice());
    }
    over
}

/// Joint-space inertia `M(q)` by composite rigid bodies.
pub fn mass_matrix(model: &MultibodyModel, q: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_finite("q", q)?;
    if q.len() != model.dof() {
        return Err(Error::InvalidInput(format!("q has length {}, expected {}", q.len(), model.dof())));
    }
    Ok(mass_matrix_from(&Kinematics::new(model, q)))
}

pub(crate) fn mass_matrix_from(kin: &Kinematics) -> DMatrix<f64> {
    let nb = kin.bodies();
    let nv = nb + 5;
    let mut composite = kin.inertia.clone();
    for k in (1..nb).rev() {
        let x = kin.x_parent[k];
        let add = x.transpose() * composite[k] * x;
        composite[k - 1] += add;
    }
    let mut m = DMatrix::zeros(nv, nv);
    m.view_mut((0, 0), (6, 6)).copy_from(&composite[0]);
    for i in 1..nb {
        let mut f = composite[i] * kin.subspace[i];
        let col = 5 + i;
        m[(col, col)] = kin.subspace[i].dot(&f);
        let mut j = i;
        while j > 0 {
            f = kin.x_parent[j].transpose() * f;
            j -= 1;
            if j > 0 {
                let v = kin.subspace[j].dot(&f);
                m[(5 + j, col)] = v;
                m[(col, 5 + j)] = v;
            }
        }
        for r in 0..6 {
            m[(r, col)] = f[r];
            m[(col, r)] = f[r];
        }
    }
    m
}

/// Recursive Newton–Euler inverse dynamics:
/// returns `M V̇ + C V + g` for the given base attitude, configuration,
/// velocity, acceleration and gravitational acceleration magnitude.
pub fn inverse_dynamics(
    model: &MultibodyModel,
    r_b: &Matrix3<f64>,
    q: &DVector<f64>,
    v: &DVector<f64>,
    vdot: &DVector<f64>,
    gravity: f64,
) -> DVector<f64> {
    let kin = Kinematics::new(model, q);
    rnea(&kin, r_b, v, vdot, gravity)
}

fn rnea(kin: &Kinematics, r_b: &Matrix3<f64>, v: &DVector<f64>, vdot: &DVector<f64>, gravity: f64) -> DVector<f64> {
    let nb = kin.bodies();
    let nv = nb + 5;
    let mut vel = Vec::with_capacity(nb);
    let mut acc = Vec::with_capacity(nb);
    let mut force = Vec::with_capacity(nb);

    let v0 = Vector6::from_iterator(v.iter().take(6).copied());
    // Gravity enters as a fictitious upward acceleration of the base.
    let up = r_b.transpose() * Vector3::new(0.0, 0.0, gravity);
    let a0 = Vector6::from_iterator(vdot.iter().take(6).copied()) + Vector6::new(up.x, up.y, up.z, 0.0, 0.0, 0.0);
    vel.push(v0);
    acc.push(a0);
    force.push(kin.inertia[0] * a0 + crf(&v0) * kin.inertia[0] * v0);

    for k in 1..nb {
        let s = kin.subspace[k];
        let qd = v[5 + k];
        let qdd = vdot[5 + k];
        let vk = kin.x_parent[k] * vel[k - 1] + s * qd;
        let ak = kin.x_parent[k] * acc[k - 1] + s * qdd + crm(&vk) * s * qd;
        force.push(kin.inertia[k] * ak + crf(&vk) * kin.inertia[k] * vk);
        vel.push(vk);
        acc.push(ak);
    }

    let mut tau = DVector::zeros(nv);
    for k in (1..nb).rev() {
        tau[5 + k] = kin.subspace[k].dot(&force[k]);
        let back = kin.x_parent[k].transpose() * force[k];
        force[k - 1] += back;
    }
    for r in 0..6 {
        tau[r] = force[0][r];
    }
    tau
}

/// Velocity-product bias `C(q,V)V` (zero gravity, zero acceleration).
pub fn velocity_bias(model: &MultibodyModel, q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let zero = DVector::zeros(v.len());
    inverse_dynamics(model, &Matrix3::identity(), q, v, &zero, 0.0)
}

/// Generalized gravity force `g(R_b, q)`.
pub fn gravity_vector(model: &MultibodyModel, q: &DVector<f64>, r_b: &Matrix3<f64>) -> DVector<f64> {
    let zero = DVector::zeros(model.nv());
    inverse_dynamics(model, r_b, q, &zero, &zero, model.gravity)
}

/// Skew-consistent gyroscopic term of one body at its frame origin.
fn body_gyroscopic(mass: f64, com: &Vector3<f64>, inertia_com: &Matrix3<f64>, twist: &Vector6<f64>) -> Matrix6<f64> {
    let mut to_com = Matrix6::identity();
    to_com.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-hat(com)));
    let w = Vector3::new(twist[3], twist[4], twist[5]);
    let mut b = Matrix6::zeros();
    b.fixed_view_mut::<3, 3>(0, 0).copy_from(&(mass * hat(&w)));
    b.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-hat(&(inertia_com * w))));
    to_com.transpose() * b * to_com
}

/// Coriolis/centrifugal matrix `C(q, V)` with `Ṁ − 2C` skew-symmetric.
pub fn coriolis_matrix(model: &MultibodyModel, q: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
    let kin = Kinematics::new(model, q);
    coriolis_matrix_from(model, &kin, v)
}

pub(crate) fn coriolis_matrix_from(model: &MultibodyModel, kin: &Kinematics, v: &DVector<f64>) -> DMatrix<f64> {
    let nb = kin.bodies();
    let nv = nb + 5;
    let jacs: Vec<DMatrix<f64>> = (0..nb).map(|k| kin.body_jacobian(k)).collect();
    let twists: Vec<Vector6<f64>> = jacs.iter().map(|j| Vector6::from_iterator((j * v).iter().copied())).collect();
    let mut c = DMatrix::zeros(nv, nv);
    for k in 0..nb {
        let (mass, com, inertia) = if k == 0 {
            (model.base_mass, Vector3::zeros(), model.base_inertia)
        } else {
            let l = &model.links[k - 1];
            (l.mass, l.com, l.inertia)
        };
        let jd = kin.body_jacobian_dot(k, &jacs[k], &twists);
        let ik = DMatrix::from_column_slice(6, 6, kin.inertia[k].as_slice());
        let bk = body_gyroscopic(mass, &com, &inertia, &twists[k]);
        let bk = DMatrix::from_column_slice(6, 6, bk.as_slice());
        let inner = &ik * jd + bk * &jacs[k];
        c += jacs[k].transpose() * inner;
    }
    c
}

/// `C(q, V) u`.
pub fn coriolis_product(model: &MultibodyModel, q: &DVector<f64>, v: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    check_finite("q", q)?;
    check_finite("V", v)?;
    check_finite("u", u)?;
    Ok(coriolis_matrix(model, q, v) * u)
}

/// End-effector body Jacobian `J_e` (6 × (n+6)): `V_e = J_e V`.
pub fn ee_jacobian(model: &MultibodyModel, q: &DVector<f64>) -> DMatrix<f64> {
    ee_jacobian_from(model, &Kinematics::new(model, q))
}

pub(crate) fn ee_jacobian_from(model: &MultibodyModel, kin: &Kinematics) -> DMatrix<f64> {
    let n = kin.bodies() - 1;
    let x_en = model.ee_offset.motion_to_child();
    let x = DMatrix::from_column_slice(6, 6, x_en.as_slice());
    x * kin.body_jacobian(n)
}

/// World placement of the base frame.
pub fn base_pose(state: &AmState) -> Pose {
    Pose::new(state.r_b, state.p_b)
}

/// World placement `(R_e, p_e)` of the end-effector frame.
pub fn ee_pose(model: &MultibodyModel, state: &AmState) -> Pose {
    base_pose(state).compose(&Kinematics::new(model, &state.q).ee_in_base)
}

/// Centre-of-mass quantities of one AM.
#[derive(Debug, Clone)]
pub struct ComQuantities {
    /// Whole-system CoM in the world frame.
    pub r_c: Vector3<f64>,
    /// Base origin to CoM, world coordinates.
    pub r_bc: Vector3<f64>,
    /// `∂r_bc/∂q`, world coordinates (3 × n).
    pub dr_bc_dq: DMatrix<f64>,
    /// CoM Jacobian `ṙ_c = J_c V` (3 × (n+6)).
    pub j_c: DMatrix<f64>,
}

pub fn com_quantities(model: &MultibodyModel, state: &AmState) -> ComQuantities {
    com_quantities_from(model, &Kinematics::new(model, &state.q), state)
}

pub(crate) fn com_quantities_from(model: &MultibodyModel, kin: &Kinematics, state: &AmState) -> ComQuantities {
    let n = model.dof();
    let m = model.total_mass();
    let mut local = Vector3::zeros();
    let mut com_b = Vec::with_capacity(n);
    for (k, link) in model.links.iter().enumerate() {
        let c = kin.body_in_base[k + 1].transform_point(&link.com);
        local += link.mass * c;
        com_b.push(c);
    }
    local /= m;

    let mut d_local = DMatrix::zeros(3, n);
    for j in 0..n {
        let pose = &kin.body_in_base[j + 1];
        let axis = pose.rot * model.links[j].axis;
        let mut col = Vector3::zeros();
        for k in j..n {
            col += model.links[k].mass * axis.cross(&(com_b[k] - pose.pos));
        }
        d_local.set_column(j, &(col / m));
    }

    let rb = state.r_b;
    let r_bc = rb * local;
    let rb_d = DMatrix::from_column_slice(3, 3, rb.as_slice());
    let dr_bc_dq = &rb_d * d_local;
    let mut j_c = DMatrix::zeros(3, n + 6);
    j_c.view_mut((0, 0), (3, 3)).copy_from(&rb);
    j_c.view_mut((0, 3), (3, 3)).copy_from(&(-hat(&r_bc) * rb));
    j_c.view_mut((0, 6), (3, n)).copy_from(&dr_bc_dq);
    ComQuantities { r_c: state.p_b + r_bc, r_bc, dr_bc_dq, j_c }
}

/// Forward dynamics: `V̇ = M⁻¹(τ + J_eᵀF_e − C V − g)`.
///
/// A world-frame `f_e` is re-expressed in `{e}` at the current configuration.
pub fn forward_dynamics(model: &MultibodyModel, state: &AmState, tau: &DVector<f64>, f_e: &Wrench) -> Result<DVector<f64>> {
    let kin = Kinematics::new(model, &state.q);
    let f_e = f_e.in_frame(WrenchFrame::EndEffector, &(state.r_b * kin.ee_in_base.rot));
    let m = mass_matrix_from(&kin);
    let zero = DVector::zeros(model.nv());
    let h = rnea(&kin, &state.r_b, &state.v, &zero, model.gravity);
    let je = ee_jacobian_from(model, &kin);
    let fe = DVector::from_column_slice(f_e.as_vector().as_slice());
    let rhs = tau + je.transpose() * fe - h;
    let chol = m.cholesky().ok_or_else(|| Error::Singular {
        what: "mass matrix",
        cond: f64::INFINITY,
        state: format!("q = {:?}", state.q.as_slice()),
    })?;
    Ok(chol.solve(&rhs))
}

pub fn kinetic_energy(model: &MultibodyModel, state: &AmState) -> f64 {
    let m = mass_matrix_from(&Kinematics::new(model, &state.q));
    0.5 * state.v.dot(&(m * &state.v))
}

/// Gravitational potential energy with zero at `z = 0`.
pub fn potential_energy(model: &MultibodyModel, state: &AmState) -> f64 {
    model.total_mass() * model.gravity * com_quantities(model, state).r_c.z
}

pub fn total_energy(model: &MultibodyModel, state: &AmState) -> f64 {
    kinetic_energy(model, state) + potential_energy(model, state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::{rot_x, rot_y, rot_z};

    fn sample_state(model: &MultibodyModel) -> AmState {
        AmState {
            p_b: Vector3::new(0.3, -0.2, 1.1),
            r_b: rot_z(0.4) * rot_y(-0.3) * rot_x(0.2),
            q: DVector::from_vec(vec![0.7, -1.1, 0.5]),
            v: DVector::from_vec(vec![0.2, -0.1, 0.3, 0.5, -0.4, 0.2, 0.8, -0.6, 1.1]),
        }
        .tap(model)
    }

    impl AmState {
        fn tap(self, model: &MultibodyModel) -> Self {
            assert_eq!(self.v.len(), model.nv());
            self
        }
    }

    #[test]
    fn bare_base_mass_matrix_is_block_diagonal() {
        let inertia = Matrix3::new(0.03, 0.001, 0.0, 0.001, 0.04, 0.0, 0.0, 0.0, 0.05);
        let model = MultibodyModel::bare_base(1.3, inertia, 9.81).unwrap();
        let m = mass_matrix(&model, &DVector::zeros(0)).unwrap();
        let mut expected = DMatrix::zeros(6, 6);
        expected.view_mut((0, 0), (3, 3)).fill_diagonal(1.3);
        expected.view_mut((3, 3), (3, 3)).copy_from(&inertia);
        assert!((m - expected).norm() < 1e-15);
    }

    #[test]
    fn rejects_non_finite_q() {
        let model = MultibodyModel::default_planar_arm();
        let q = DVector::from_vec(vec![0.0, f64::NAN, 0.0]);
        assert!(matches!(mass_matrix(&model, &q), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn coriolis_vanishes_at_rest() {
        let model = MultibodyModel::default_planar_arm();
        let s = sample_state(&model);
        let zero = DVector::zeros(model.nv());
        let u = DVector::from_element(model.nv(), 0.7);
        let cu = coriolis_product(&model, &s.q, &zero, &u).unwrap();
        assert!(cu.norm() < 1e-14);
    }

    #[test]
    fn coriolis_times_velocity_is_bias() {
        let model = MultibodyModel::default_planar_arm();
        let s = sample_state(&model);
        let cv = coriolis_product(&model, &s.q, &s.v, &s.v).unwrap();
        let b = velocity_bias(&model, &s.q, &s.v);
        let err = (cv - b).norm();
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn gravity_on_level_bare_base() {
        let model = MultibodyModel::bare_base(2.0, Matrix3::identity() * 0.1, 9.81).unwrap();
        let g = gravity_vector(&model, &DVector::zeros(0), &Matrix3::identity());
        assert!((g.rows(0, 3) - DVector::from_vec(vec![0.0, 0.0, 2.0 * 9.81])).norm() < 1e-14);
        assert!(g.rows(3, 3).norm() < 1e-14);
        let zero_g = MultibodyModel::default_planar_arm().with_gravity(0.0);
        let s = sample_state(&zero_g);
        assert!(gravity_vector(&zero_g, &s.q, &s.r_b).norm() == 0.0);
    }

    #[test]
    fn com_of_bare_base_is_base_position() {
        let model = MultibodyModel::bare_base(1.0, Matrix3::identity(), 9.81).unwrap();
        let s = AmState::at_rest(&model, Vector3::new(1.0, 2.0, 3.0), rot_x(0.3), DVector::zeros(0));
        let c = com_quantities(&model, &s);
        assert_eq!(c.r_bc, Vector3::zeros());
        assert_eq!(c.r_c, s.p_b);
    }

    #[test]
    fn frozen_state_has_zero_ee_twist() {
        let model = MultibodyModel::default_planar_arm();
        let mut s = sample_state(&model);
        s.v.fill(0.0);
        let je = ee_jacobian(&model, &s.q);
        assert!((je * &s.v).norm() == 0.0);
    }

    #[test]
    fn base_translation_moves_ee_rigidly() {
        let model = MultibodyModel::default_planar_arm();
        let mut s = sample_state(&model);
        s.v.fill(0.0);
        s.v[2] = 1.0;
        let ve = ee_jacobian(&model, &s.q) * &s.v;
        let r_e = ee_pose(&model, &s).rot;
        let expected = r_e.transpose() * s.r_b * Vector3::z();
        assert!((Vector3::new(ve[0], ve[1], ve[2]) - expected).norm() < 1e-14);
        assert!(ve.rows(3, 3).norm() < 1e-14);
    }
}
