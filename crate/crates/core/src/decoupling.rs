//! Inertially decoupling change of velocity coordinates.
//!
//! `ξ = T V = [ṙ_c; w_b; ρ]` with
//!
//! ```text
//!     ⎡ R_b   −r̂_bc R_b   ∂r_bc/∂q ⎤
//! T = ⎢ 0      I           0        ⎥
//!     ⎣ 0      N₁          I        ⎦
//! ```
//!
//! where the last block row is the dynamically consistent nullspace projector
//! `N = (Z M Zᵀ)⁻¹ Z M`, `Z = [−(∂r_bc/∂q)ᵀR_b  0  I]`. In these coordinates
//! the inertia `Λ_ξ = T⁻ᵀ M T⁻¹` is block-diagonal `(m I₃, Λ_wb, Λ_ρ)` and
//! gravity only acts on the CoM block. The structure is not imposed anywhere:
//! every block is computed from the full matrices and [`StructureReport`]
//! measures how far it is from the ideal pattern.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::dynamics::{self, ComQuantities, Kinematics};
use crate::error::{Error, Result};
use crate::model::{AmState, MultibodyModel, Wrench, WrenchFrame};
use crate::spatial::{hat, rot_z, Pose};

/// Condition number above which an inversion is logged.
pub const COND_WARN: f64 = 1e8;
/// Condition number above which an inversion is refused.
pub const COND_ERROR: f64 = 1e12;

pub(crate) fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Dense inverse behind a condition-number guard.
pub(crate) fn guarded_inverse(m: &DMatrix<f64>, what: &'static str, state: impl Fn() -> String) -> Result<DMatrix<f64>> {
    let cond = condition_number(m);
    if !(cond < COND_ERROR) {
        return Err(Error::Singular { what, cond, state: state() });
    }
    if cond > COND_WARN {
        log::warn!("{what} is ill-conditioned (cond = {cond:.3e})");
    }
    m.clone().lu().try_inverse().ok_or_else(|| Error::Singular { what, cond, state: state() })
}

fn dump(state: &AmState) -> String {
    format!(
        "p_b = {:?}, R_b = {:?}, q = {:?}, V = {:?}",
        state.p_b.as_slice(),
        state.r_b.as_slice(),
        state.q.as_slice(),
        state.v.as_slice()
    )
}

/// `T` and the nullspace projector `N` at one configuration.
#[derive(Debug, Clone)]
pub struct Transform {
    pub t: DMatrix<f64>,
    /// `N`, n × (n+6).
    pub n: DMatrix<f64>,
    /// Middle block of `N`, n × 3.
    pub n1: DMatrix<f64>,
    pub com: ComQuantities,
    pub mass: DMatrix<f64>,
}

pub fn build_transform(model: &MultibodyModel, state: &AmState) -> Result<Transform> {
    let kin = Kinematics::new(model, &state.q);
    build_transform_from(model, &kin, state)
}

fn build_transform_from(model: &MultibodyModel, kin: &Kinematics, state: &AmState) -> Result<Transform> {
    let n = model.dof();
    let nv = model.nv();
    let mass = dynamics::mass_matrix_from(kin);
    let com = dynamics::com_quantities_from(model, kin, state);

    let rb = DMatrix::from_column_slice(3, 3, state.r_b.as_slice());
    let mut z = DMatrix::zeros(n, nv);
    z.view_mut((0, 0), (n, 3)).copy_from(&(-(com.dr_bc_dq.transpose() * &rb)));
    z.view_mut((0, 6), (n, n)).fill_with_identity();

    let zm = &z * &mass;
    let zmz = &zm * z.transpose();
    let nproj = if n == 0 {
        DMatrix::zeros(0, nv)
    } else {
        let chol = zmz.clone().cholesky().ok_or_else(|| Error::Singular {
            what: "Z M Zᵀ",
            cond: condition_number(&zmz),
            state: dump(state),
        })?;
        chol.solve(&zm)
    };

    let mut t = DMatrix::zeros(nv, nv);
    t.view_mut((0, 0), (3, nv)).copy_from(&com.j_c);
    t.view_mut((3, 3), (3, 3)).fill_with_identity();
    t.view_mut((6, 0), (n, nv)).copy_from(&nproj);
    let n1 = nproj.view((0, 3), (n, 3)).into_owned();
    Ok(Transform { t, n: nproj, n1, com, mass })
}

/// Everything the controller needs from the decoupled dynamics at one state.
#[derive(Debug, Clone)]
pub struct DecoupledTerms {
    pub t: DMatrix<f64>,
    pub t_inv: DMatrix<f64>,
    pub t_inv_t: DMatrix<f64>,
    pub t_dot: DMatrix<f64>,
    pub xi: DVector<f64>,
    pub lambda_xi: DMatrix<f64>,
    pub gamma_xi: DMatrix<f64>,
    pub zeta_xi: DVector<f64>,
    pub n: DMatrix<f64>,
    pub n1: DMatrix<f64>,
    pub mass: DMatrix<f64>,
    pub coriolis: DMatrix<f64>,
    pub gravity: DVector<f64>,
    pub com: ComQuantities,
    pub j_e: DMatrix<f64>,
    pub ee_pose: Pose,
    pub total_mass: f64,
    /// Gravitational acceleration of the model, m/s².
    pub gravity_accel: f64,
}

impl DecoupledTerms {
    pub fn dof(&self) -> usize {
        self.xi.len() - 6
    }

    /// `Λ_wb`, the attitude block of `Λ_ξ`.
    pub fn lambda_wb(&self) -> Matrix3<f64> {
        self.lambda_xi.fixed_view::<3, 3>(3, 3).into_owned()
    }

    pub fn lambda_rho(&self) -> DMatrix<f64> {
        let n = self.dof();
        self.lambda_xi.view((6, 6), (n, n)).into_owned()
    }

    /// `Γ_ξ ξ`.
    pub fn gamma_xi_times_xi(&self) -> DVector<f64> {
        &self.gamma_xi * &self.xi
    }
}

/// Step for central differences along the state flow.
fn flow_step(state: &AmState) -> f64 {
    1e-6 / state.v.norm().max(1.0)
}

/// Central difference of a configuration-dependent matrix along the flow of `V`.
pub(crate) fn flow_derivative<F>(state: &AmState, f: F) -> Result<DMatrix<f64>>
where
    F: Fn(&AmState) -> Result<DMatrix<f64>>,
{
    let h = flow_step(state);
    let plus = f(&state.flowed(h))?;
    let minus = f(&state.flowed(-h))?;
    Ok((plus - minus) / (2.0 * h))
}

pub fn decoupled_terms(model: &MultibodyModel, state: &AmState) -> Result<DecoupledTerms> {
    state.check(model)?;
    let kin = Kinematics::new(model, &state.q);
    let tr = build_transform_from(model, &kin, state)?;
    let t_inv = guarded_inverse(&tr.t, "T", || dump(state))?;
    let t_inv_t = t_inv.transpose();
    let t_dot = if state.v.norm() == 0.0 {
        DMatrix::zeros(model.nv(), model.nv())
    } else {
        flow_derivative(state, |s| build_transform(model, s).map(|x| x.t))?
    };

    let coriolis = dynamics::coriolis_matrix_from(model, &kin, &state.v);
    let gravity = dynamics::gravity_vector(model, &state.q, &state.r_b);
    let xi = &tr.t * &state.v;
    let lambda_xi = &t_inv_t * &tr.mass * &t_inv;
    let gamma_xi = &t_inv_t * (&coriolis - &tr.mass * &t_inv * &t_dot) * &t_inv;
    let zeta_xi = &t_inv_t * &gravity;
    let j_e = dynamics::ee_jacobian_from(model, &kin);
    let ee_pose = Pose::new(state.r_b, state.p_b).compose(&kin.ee_in_base);

    Ok(DecoupledTerms {
        t: tr.t,
        t_inv,
        t_inv_t,
        t_dot,
        xi,
        lambda_xi,
        gamma_xi,
        zeta_xi,
        n: tr.n,
        n1: tr.n1,
        mass: tr.mass,
        coriolis,
        gravity,
        com: tr.com,
        j_e,
        ee_pose,
        total_mass: model.total_mass(),
        gravity_accel: model.gravity,
    })
}

/// `F_ξ = T⁻ᵀ J_eᵀ F_e` for an end-effector body wrench.
pub fn transform_wrench(terms: &DecoupledTerms, j_e: &DMatrix<f64>, f_e: &Wrench) -> DVector<f64> {
    let w = f_e.in_frame(WrenchFrame::EndEffector, &terms.ee_pose.rot);
    let fe = DVector::from_column_slice(w.as_vector().as_slice());
    &terms.t_inv_t * (j_e.transpose() * fe)
}

/// Distance of a set of decoupled terms from the ideal block pattern.
#[derive(Debug, Clone, Copy, Default)]
pub struct StructureReport {
    /// Off-block-diagonal Frobenius norm of `Λ_ξ` over `‖Λ_ξ‖_F`.
    pub lambda_off_block_rel: f64,
    /// `‖Λ_ξ[0..3,0..3] − m I‖ / m`.
    pub com_block_rel: f64,
    /// `‖ζ_ξ − [m g e₃; 0; 0]‖`.
    pub zeta_err: f64,
    /// `‖T⁻ᵀ[0..3, :] − [R_b 0 0]‖`.
    pub t_inv_t_top_err: f64,
    /// Largest entry of the first block row/column of `Γ_ξ`.
    pub gamma_com_coupling: f64,
    /// `‖Γ_(ρ,wb) + Γ_(wb,ρ)ᵀ‖`.
    pub gamma_skew_err: f64,
    /// `max(‖N[:, 0..3]‖, ‖N[:, 6..] − I‖)`.
    pub n_pattern_err: f64,
}

pub fn structure_report(terms: &DecoupledTerms, r_b: &Matrix3<f64>) -> StructureReport {
    let nv = terms.xi.len();
    let n = nv - 6;
    let m = terms.total_mass;
    let l = &terms.lambda_xi;
    let mut off = 0.0;
    let blocks = [(0usize, 3usize), (3, 3), (6, n)];
    for (bi, &(ri, rn)) in blocks.iter().enumerate() {
        for (bj, &(cj, cn)) in blocks.iter().enumerate() {
            if bi != bj {
                off += l.view((ri, cj), (rn, cn)).norm_squared();
            }
        }
    }
    let com_block_rel = (l.view((0, 0), (3, 3)) - DMatrix::<f64>::identity(3, 3) * m).norm() / m;
    let mut zeta = DVector::zeros(nv);
    zeta[2] = m * terms.gravity_accel;
    let mut top = DMatrix::zeros(3, nv);
    top.view_mut((0, 0), (3, 3)).copy_from(r_b);
    let g = &terms.gamma_xi;
    let coupling = g.view((0, 0), (3, nv)).amax().max(g.view((0, 0), (nv, 3)).amax());
    let skew = (g.view((6, 3), (n, 3)) + g.view((3, 6), (3, n)).transpose()).norm();
    let n_pattern = if n == 0 {
        0.0
    } else {
        terms.n.view((0, 0), (n, 3)).norm().max((terms.n.view((0, 6), (n, n)) - DMatrix::<f64>::identity(n, n)).norm())
    };
    StructureReport {
        lambda_off_block_rel: off.sqrt() / l.norm(),
        com_block_rel,
        zeta_err: (&terms.zeta_xi - zeta).norm(),
        t_inv_t_top_err: (terms.t_inv_t.view((0, 0), (3, nv)) - top).norm(),
        gamma_com_coupling: coupling,
        gamma_skew_err: skew,
        n_pattern_err: n_pattern,
    }
}

/// Task coordinates `y = [x, z, θ]` of the end-effector in a heading frame
/// `H = R_z(yaw)` fixed in the world: position along the heading, height,
/// and pitch of `{e}` about the heading frame's y-axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarTask {
    pub yaw: f64,
}

impl PlanarTask {
    pub fn new(yaw: f64) -> Self {
        Self { yaw }
    }

    pub fn heading(&self) -> Matrix3<f64> {
        rot_z(self.yaw)
    }

    /// `y` for an end-effector placement.
    pub fn output(&self, ee: &Pose) -> Vector3<f64> {
        let h = self.heading().transpose();
        let p = h * ee.pos;
        let r = h * ee.rot;
        Vector3::new(p.x, p.z, (-r[(2, 0)]).atan2(r[(0, 0)]))
    }

    /// Inverse of [`Self::output`] for an `{e}` frame with zero roll and yaw
    /// in the heading frame; `lateral` is the heading-frame y coordinate.
    pub fn placement(&self, y: &Vector3<f64>, lateral: f64) -> Pose {
        let h = self.heading();
        Pose::new(h * crate::spatial::rot_y(y.z), h * Vector3::new(y.x, lateral, y.y))
    }

    /// `ỹ = y − y_d` with the pitch difference wrapped to `(−π, π]`.
    pub fn error(&self, y: &DVector<f64>, y_d: &DVector<f64>) -> DVector<f64> {
        let mut e = y - y_d;
        e[2] = wrap_angle(e[2]);
        e
    }

    /// `J_task` with `ẏ = J_task V`, from the end-effector pose and body Jacobian.
    pub fn velocity_jacobian(&self, ee: &Pose, j_e: &DMatrix<f64>) -> DMatrix<f64> {
        let h = self.heading().transpose();
        let r = h * ee.rot;
        let lin = j_e.rows(0, 3);
        let ang = j_e.rows(3, 3);
        let rd = DMatrix::from_column_slice(3, 3, r.as_slice());
        let pdot = &rd * lin;
        let x = r.column(0);
        let dx_dw = -(r * hat(&Vector3::x()));
        let den = x.x * x.x + x.z * x.z;
        let row: Vector3<f64> = (x.z * dx_dw.row(0).transpose() - x.x * dx_dw.row(2).transpose()) / den;
        let theta = DMatrix::from_row_slice(1, 3, row.as_slice()) * ang;
        let mut j = DMatrix::zeros(3, j_e.ncols());
        j.row_mut(0).copy_from(&pdot.row(0));
        j.row_mut(1).copy_from(&pdot.row(2));
        j.row_mut(2).copy_from(&theta.row(0));
        j
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * std::f64::consts::PI);
    if w > std::f64::consts::PI {
        w - 2.0 * std::f64::consts::PI
    } else {
        w
    }
}

/// Task output and its Jacobians in `ξ` coordinates.
#[derive(Debug, Clone)]
pub struct TaskOutput {
    pub y: DVector<f64>,
    /// `ẏ = J ξ`.
    pub j: DMatrix<f64>,
    /// `J̇`, central differences along the flow.
    pub j_dot: DMatrix<f64>,
    /// `ẏ = J_task V`.
    pub j_task: DMatrix<f64>,
}

fn task_jacobian_xi(model: &MultibodyModel, task: &PlanarTask, state: &AmState) -> Result<DMatrix<f64>> {
    let kin = Kinematics::new(model, &state.q);
    let tr = build_transform_from(model, &kin, state)?;
    let t_inv = guarded_inverse(&tr.t, "T", || dump(state))?;
    let ee = Pose::new(state.r_b, state.p_b).compose(&kin.ee_in_base);
    let j_e = dynamics::ee_jacobian_from(model, &kin);
    Ok(task.velocity_jacobian(&ee, &j_e) * t_inv)
}

pub fn task_output(model: &MultibodyModel, state: &AmState, task: &PlanarTask, terms: &DecoupledTerms) -> Result<TaskOutput> {
    if model.dof() != 3 {
        return Err(Error::InvalidInput(format!(
            "the planar task needs exactly 3 arm joints (non-redundant), model has {}",
            model.dof()
        )));
    }
    let y = task.output(&terms.ee_pose);
    let j_task = task.velocity_jacobian(&terms.ee_pose, &terms.j_e);
    let j = &j_task * &terms.t_inv;
    let j_dot = if state.v.norm() == 0.0 {
        DMatrix::zeros(3, model.nv())
    } else {
        flow_derivative(state, |s| task_jacobian_xi(model, task, s))?
    };
    Ok(TaskOutput { y: DVector::from_column_slice(y.as_slice()), j, j_dot, j_task })
}

/// Dynamically consistent right inverse `J^{Λ+} = Λ_ξ⁻¹Jᵀ(JΛ_ξ⁻¹Jᵀ)⁻¹`
/// together with the task-space inertia `Λ_y`.
pub fn task_inverse(terms: &DecoupledTerms, j: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let lambda_inv = terms
        .lambda_xi
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular { what: "Λ_ξ", cond: f64::INFINITY, state: String::new() })?
        .inverse();
    let inner = j * &lambda_inv * j.transpose();
    let lambda_y = guarded_inverse(&inner, "J Λ_ξ⁻¹ Jᵀ", String::new)?;
    let j_pinv = &lambda_inv * j.transpose() * &lambda_y;
    Ok((j_pinv, lambda_y))
}

/// Euler-angle-free helper: the world-frame vector `R_b e₃`.
pub fn thrust_axis(r_b: &Matrix3<f64>) -> Vector3<f64> {
    r_b.column(2).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::{rot_x, rot_y};

    fn state(_model: &MultibodyModel) -> AmState {
        AmState {
            p_b: Vector3::new(0.1, 0.2, 0.9),
            r_b: rot_z(-0.5) * rot_x(0.25) * rot_y(0.1),
            q: DVector::from_vec(vec![0.9, -1.4, 0.3]),
            v: DVector::from_vec(vec![0.3, -0.2, 0.1, 0.4, 0.2, -0.3, 0.5, -0.7, 0.9]),
        }
    }

    #[test]
    fn z_annihilates_task_rows() {
        let model = MultibodyModel::default_planar_arm();
        let s = state(&model);
        let tr = build_transform(&model, &s).unwrap();
        let rb = DMatrix::from_column_slice(3, 3, s.r_b.as_slice());
        let mut z = DMatrix::zeros(3, 9);
        z.view_mut((0, 0), (3, 3)).copy_from(&(-(tr.com.dr_bc_dq.transpose() * rb)));
        z.view_mut((0, 6), (3, 3)).fill_with_identity();
        let mut rows = DMatrix::zeros(6, 9);
        rows.view_mut((0, 0), (3, 9)).copy_from(&tr.com.j_c);
        rows.view_mut((3, 3), (3, 3)).fill_with_identity();
        assert!((z * rows.transpose()).amax() < 1e-12);
    }

    #[test]
    fn zero_wrench_maps_to_zero() {
        let model = MultibodyModel::default_planar_arm();
        let s = state(&model);
        let terms = decoupled_terms(&model, &s).unwrap();
        let f = transform_wrench(&terms, &terms.j_e, &Wrench::zero(WrenchFrame::EndEffector));
        assert_eq!(f.norm(), 0.0);
    }

    #[test]
    fn frozen_state_has_zero_task_rate() {
        let model = MultibodyModel::default_planar_arm();
        let mut s = state(&model);
        s.v.fill(0.0);
        let terms = decoupled_terms(&model, &s).unwrap();
        let out = task_output(&model, &s, &PlanarTask::new(0.3), &terms).unwrap();
        assert_eq!((&out.j * &terms.xi).norm(), 0.0);
        assert_eq!(out.j_dot.norm(), 0.0);
    }

    #[test]
    fn planar_task_placement_inverts_output() {
        let task = PlanarTask::new(2.2);
        let y = Vector3::new(0.4, 0.12, -0.3);
        let pose = task.placement(&y, 0.05);
        assert!((task.output(&pose) - y).norm() < 1e-14);
    }

    #[test]
    fn task_rejects_wrong_dof() {
        let model = MultibodyModel::bare_base(1.0, Matrix3::identity() * 0.01, 9.81).unwrap();
        let s = AmState::at_rest(&model, Vector3::zeros(), Matrix3::identity(), DVector::zeros(0));
        let terms = decoupled_terms(&model, &s).unwrap();
        assert!(task_output(&model, &s, &PlanarTask::new(0.0), &terms).is_err());
    }
}
