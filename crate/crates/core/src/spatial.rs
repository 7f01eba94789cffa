//! Small SO(3) / spatial-vector toolkit.
//!
//! Spatial vectors are stored linear-first so they line up with the
//! generalized velocity `[v_b; w_b; q̇]` and with wrenches `[f; τ]`:
//! motion `m = [v; ω]`, force `f = [f; n]`, both taken at the frame origin.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

/// Skew-symmetric cross-product matrix, `hat(a) * b == a × b`.
pub fn hat(r: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -r.z, r.y, r.z, 0.0, -r.x, -r.y, r.x, 0.0)
}

/// Inverse of [`hat`]; reads the skew part of `m` (averaging both halves).
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Rotation exponential (Rodrigues).
pub fn exp_so3(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let k = hat(w);
    if theta < 1e-8 {
        return Matrix3::identity() + k + 0.5 * k * k;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Matrix3::identity() + a * k + b * k * k
}

/// Rotation logarithm, returned as a rotation vector.
pub fn log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let skew = vee(r);
    if theta < 1e-6 {
        return skew;
    }
    if std::f64::consts::PI - theta < 1e-6 {
        // Near π the skew part vanishes; recover the axis from the symmetric part.
        let b = (r + Matrix3::identity()) * 0.5;
        let mut axis = Vector3::new(b[(0, 0)].max(0.0).sqrt(), b[(1, 1)].max(0.0).sqrt(), b[(2, 2)].max(0.0).sqrt());
        if b[(0, 1)] < 0.0 {
            axis.y = -axis.y;
        }
        if b[(0, 2)] < 0.0 {
            axis.z = -axis.z;
        }
        return axis.normalize() * theta;
    }
    skew * (theta / theta.sin())
}

/// Nearest rotation matrix in the Frobenius sense (polar projection).
pub fn project_to_so3(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

/// Rotation about a unit axis.
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    exp_so3(&(axis * angle))
}

pub fn rot_x(a: f64) -> Matrix3<f64> {
    axis_angle(&Vector3::x(), a)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    axis_angle(&Vector3::y(), a)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    axis_angle(&Vector3::z(), a)
}

/// Orthonormality + handedness defect of a rotation candidate.
pub fn rotation_defect(r: &Matrix3<f64>) -> f64 {
    let ortho = (r.transpose() * r - Matrix3::identity()).norm();
    ortho.max((r.determinant() - 1.0).abs())
}

/// Rate of the exponential coordinates `θ` of `R = R₀ exp(θ)` for a body
/// angular velocity `ω` (inverse right Jacobian, truncated after the
/// quadratic term, which is exact enough for a 4th-order step).
pub fn dexp_inv_right(theta: &Vector3<f64>, w: &Vector3<f64>) -> Vector3<f64> {
    let tw = theta.cross(w);
    w + 0.5 * tw + theta.cross(&tw) / 12.0
}

/// Same for `R = exp(θ) R₀` and a world-frame angular velocity.
pub fn dexp_inv_left(theta: &Vector3<f64>, w: &Vector3<f64>) -> Vector3<f64> {
    let tw = theta.cross(w);
    w - 0.5 * tw + theta.cross(&tw) / 12.0
}

/// A rigid placement: rotation matrix plus translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rot: Matrix3<f64>,
    pub pos: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self { rot: Matrix3::identity(), pos: Vector3::zeros() }
    }

    pub fn new(rot: Matrix3<f64>, pos: Vector3<f64>) -> Self {
        Self { rot, pos }
    }

    pub fn from_translation(pos: Vector3<f64>) -> Self {
        Self { rot: Matrix3::identity(), pos }
    }

    /// `self ∘ other`: `other` is expressed in `self`'s frame.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose { rot: self.rot * other.rot, pos: self.pos + self.rot * other.pos }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rot.transpose();
        Pose { rot: rt, pos: -(rt * self.pos) }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot * p + self.pos
    }

    /// Plücker motion transform taking parent coordinates to the coordinates
    /// of the frame this pose places (child pose given in parent).
    pub fn motion_to_child(&self) -> Matrix6<f64> {
        let et = self.rot.transpose();
        let mut x = Matrix6::zeros();
        x.fixed_view_mut::<3, 3>(0, 0).copy_from(&et);
        x.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-et * hat(&self.pos)));
        x.fixed_view_mut::<3, 3>(3, 3).copy_from(&et);
        x
    }
}

/// Motion cross product matrix: `crm(a) * b == a ×ₘ b`.
pub fn crm(m: &Vector6<f64>) -> Matrix6<f64> {
    let v = Vector3::new(m[0], m[1], m[2]);
    let w = Vector3::new(m[3], m[4], m[5]);
    let mut x = Matrix6::zeros();
    let wh = hat(&w);
    x.fixed_view_mut::<3, 3>(0, 0).copy_from(&wh);
    x.fixed_view_mut::<3, 3>(0, 3).copy_from(&hat(&v));
    x.fixed_view_mut::<3, 3>(3, 3).copy_from(&wh);
    x
}

/// Force cross product matrix, `crf(a) = -crm(a)ᵀ`.
pub fn crf(m: &Vector6<f64>) -> Matrix6<f64> {
    -crm(m).transpose()
}

/// Spatial inertia about a frame origin for a body with mass `mass`, centre
/// of mass `com` and rotational inertia `inertia_com` about the CoM.
pub fn spatial_inertia(mass: f64, com: &Vector3<f64>, inertia_com: &Matrix3<f64>) -> Matrix6<f64> {
    let c = hat(com);
    let mut i = Matrix6::zeros();
    i.fixed_view_mut::<3, 3>(0, 0).copy_from(&(Matrix3::identity() * mass));
    i.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-mass * c));
    i.fixed_view_mut::<3, 3>(3, 0).copy_from(&(mass * c));
    i.fixed_view_mut::<3, 3>(3, 3).copy_from(&(inertia_com - mass * c * c));
    i
}

pub fn linear(m: &Vector6<f64>) -> Vector3<f64> {
    Vector3::new(m[0], m[1], m[2])
}

pub fn angular(m: &Vector6<f64>) -> Vector3<f64> {
    Vector3::new(m[3], m[4], m[5])
}

pub fn stack(lin: &Vector3<f64>, ang: &Vector3<f64>) -> Vector6<f64> {
    Vector6::new(lin.x, lin.y, lin.z, ang.x, ang.y, ang.z)
}
