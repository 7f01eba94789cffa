//! Grasped object, table, and penalty contact between end-effector tips and the object.
//!
//! Contacts are points (the end-effector origins) against the object's
//! surface. Normal forces are spring-dampers on the penetration depth.
//! Friction uses an anchor point fixed on the object: while the tangential
//! spring force stays inside the Coulomb cone the contact sticks; otherwise
//! the force is clipped to the cone and the anchor is dragged along.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Wrench, WrenchFrame};
use crate::spatial::{dexp_inv_left, exp_so3, project_to_so3, rotation_defect, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectShape {
    Box { half_extents: [f64; 3] },
    Cylinder { radius: f64, half_height: f64 },
}

impl ObjectShape {
    /// Rotational inertia about the centroid for a solid body of `mass`.
    pub fn inertia(&self, mass: f64) -> Matrix3<f64> {
        match *self {
            ObjectShape::Box { half_extents: [a, b, c] } => {
                let k = mass / 3.0;
                Matrix3::from_diagonal(&Vector3::new(k * (b * b + c * c), k * (a * a + c * c), k * (a * a + b * b)))
            }
            ObjectShape::Cylinder { radius: r, half_height: h } => {
                let side = mass * (3.0 * r * r + 4.0 * h * h) / 12.0;
                Matrix3::from_diagonal(&Vector3::new(side, side, 0.5 * mass * r * r))
            }
        }
    }

    pub fn half_height(&self) -> f64 {
        match *self {
            ObjectShape::Box { half_extents } => half_extents[2],
            ObjectShape::Cylinder { half_height, .. } => half_height,
        }
    }

    /// Distance from the centroid to the side surface along a horizontal
    /// body-frame direction `(cos φ, sin φ)`, for an axis-aligned approach.
    pub fn side_distance(&self, phi: f64) -> f64 {
        match *self {
            ObjectShape::Box { half_extents: [a, b, _] } => {
                let (c, s) = (phi.cos().abs(), phi.sin().abs());
                let tx = if c > 1e-12 { a / c } else { f64::INFINITY };
                let ty = if s > 1e-12 { b / s } else { f64::INFINITY };
                tx.min(ty)
            }
            ObjectShape::Cylinder { radius, .. } => radius,
        }
    }

    /// Penetration of a body-frame point: `(depth, outward normal)` when inside.
    pub fn penetration(&self, p: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        match *self {
            ObjectShape::Box { half_extents } => {
                let mut best: Option<(f64, Vector3<f64>)> = None;
                for i in 0..3 {
                    let d = half_extents[i] - p[i].abs();
                    if d <= 0.0 {
                        return None;
                    }
                    if best.is_none_or(|(bd, _)| d < bd) {
                        let mut n = Vector3::zeros();
                        n[i] = if p[i] >= 0.0 { 1.0 } else { -1.0 };
                        best = Some((d, n));
                    }
                }
                best
            }
            ObjectShape::Cylinder { radius, half_height } => {
                let rho = (p.x * p.x + p.y * p.y).sqrt();
                let radial = radius - rho;
                let cap = half_height - p.z.abs();
                if radial <= 0.0 || cap <= 0.0 {
                    return None;
                }
                if radial <= cap && rho > 1e-12 {
                    Some((radial, Vector3::new(p.x / rho, p.y / rho, 0.0)))
                } else {
                    Some((cap, Vector3::new(0.0, 0.0, p.z.signum())))
                }
            }
        }
    }

    /// Body-frame points tested against the table plane.
    pub fn support_points(&self) -> Vec<Vector3<f64>> {
        match *self {
            ObjectShape::Box { half_extents: [a, b, c] } => {
                let mut pts = Vec::with_capacity(8);
                for sx in [-1.0, 1.0] {
                    for sy in [-1.0, 1.0] {
                        for sz in [-1.0, 1.0] {
                            pts.push(Vector3::new(sx * a, sy * b, sz * c));
                        }
                    }
                }
                pts
            }
            ObjectShape::Cylinder { radius, half_height } => {
                let k = 16;
                let mut pts = Vec::with_capacity(2 * k);
                for sz in [-1.0, 1.0] {
                    for i in 0..k {
                        let a = 2.0 * std::f64::consts::PI * i as f64 / k as f64;
                        pts.push(Vector3::new(radius * a.cos(), radius * a.sin(), sz * half_height));
                    }
                }
                pts
            }
        }
    }
}

/// Rigid object: pose plus world-frame twist.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectState {
    pub pos: Vector3<f64>,
    pub rot: Matrix3<f64>,
    pub vel: Vector3<f64>,
    /// Angular velocity, world frame.
    pub omega: Vector3<f64>,
    pub mass: f64,
    /// Rotational inertia about the centroid, body axes.
    pub inertia: Matrix3<f64>,
    pub shape: ObjectShape,
}

impl ObjectState {
    /// Object of uniform density at rest.
    pub fn new(shape: ObjectShape, mass: f64, pos: Vector3<f64>) -> Result<Self> {
        let s = Self {
            pos,
            rot: Matrix3::identity(),
            vel: Vector3::zeros(),
            omega: Vector3::zeros(),
            mass,
            inertia: shape.inertia(mass),
            shape,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) {
            return Err(Error::InvalidInput("object mass must be positive".into()));
        }
        let ok = match self.shape {
            ObjectShape::Box { half_extents } => half_extents.iter().all(|&h| h > 0.0),
            ObjectShape::Cylinder { radius, half_height } => radius > 0.0 && half_height > 0.0,
        };
        if !ok {
            return Err(Error::InvalidInput("object dimensions must be positive".into()));
        }
        if !self.inertia.symmetric_eigenvalues().iter().all(|&e| e > 0.0) {
            return Err(Error::InvalidInput("object inertia must be positive definite".into()));
        }
        if rotation_defect(&self.rot) > 1e-9 {
            return Err(Error::InvalidInput("object rotation is not orthonormal".into()));
        }
        Ok(())
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.rot, self.pos)
    }

    pub fn inertia_world(&self) -> Matrix3<f64> {
        self.rot * self.inertia * self.rot.transpose()
    }

    pub fn point_velocity(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.vel + self.omega.cross(&(p - self.pos))
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.mass * self.vel.norm_squared() + 0.5 * self.omega.dot(&(self.inertia_world() * self.omega))
    }

    pub fn is_finite(&self) -> bool {
        self.pos.iter().chain(self.rot.iter()).chain(self.vel.iter()).chain(self.omega.iter()).all(|x| x.is_finite())
    }
}

/// Penalty contact parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContactParams {
    /// Normal stiffness, N/m.
    pub k_n: f64,
    /// Normal damping, N·s/m.
    pub d_n: f64,
    /// Coulomb friction coefficient.
    pub mu: f64,
    /// Tangential anchor stiffness, N/m.
    pub k_t: f64,
    /// Tangential anchor damping, N·s/m.
    pub d_t: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self { k_n: 5000.0, d_n: 50.0, mu: 0.8, k_t: 2000.0, d_t: 20.0 }
    }
}

impl ContactParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [("k_n", self.k_n), ("d_n", self.d_n), ("mu", self.mu), ("k_t", self.k_t), ("d_t", self.d_t)];
        for (name, v) in fields {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config { field: format!("contact.{name}"), message: format!("must be finite and non-negative, got {v}") });
            }
        }
        if self.k_n == 0.0 || self.k_t == 0.0 {
            return Err(Error::Config { field: "contact.k_n".into(), message: "contact stiffnesses must be positive".into() });
        }
        Ok(())
    }
}

/// Position and linear velocity of one end-effector tip, world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EeSnapshot {
    pub pose: Pose,
    pub vel: Vector3<f64>,
}

/// One active contact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContactRecord {
    pub am_id: usize,
    pub point: [f64; 3],
    pub depth: f64,
    pub normal: [f64; 3],
    pub normal_force: f64,
    pub tangential_force: [f64; 3],
    pub sticking: bool,
}

/// Result of one contact evaluation.
#[derive(Debug, Clone)]
pub struct ContactOutput {
    /// Force applied to each end-effector, world frame.
    pub ee_forces: Vec<Vector3<f64>>,
    /// Net force on the object, world frame.
    pub object_force: Vector3<f64>,
    /// Net moment on the object about its centroid, world frame.
    pub object_moment: Vector3<f64>,
    /// Friction anchors, object body frame.
    pub anchors: Vec<Option<Vector3<f64>>>,
    pub records: Vec<ContactRecord>,
}

impl ContactOutput {
    /// Wrench on end-effector `i` in its own `{e}` frame.
    pub fn ee_wrench(&self, i: usize, r_e: &Matrix3<f64>) -> Wrench {
        Wrench { force: self.ee_forces[i], moment: Vector3::zeros(), frame: WrenchFrame::World }.in_frame(WrenchFrame::EndEffector, r_e)
    }
}

/// Contact between every end-effector tip and the object.
///
/// `anchors[i]` is the friction anchor left by the previous evaluation.
pub fn contact_forces(object: &ObjectState, ees: &[EeSnapshot], anchors: &[Option<Vector3<f64>>], params: &ContactParams) -> ContactOutput {
    let mut out = ContactOutput {
        ee_forces: vec![Vector3::zeros(); ees.len()],
        object_force: Vector3::zeros(),
        object_moment: Vector3::zeros(),
        anchors: vec![None; ees.len()],
        records: Vec::new(),
    };
    let inv = object.pose().inverse();
    for (i, ee) in ees.iter().enumerate() {
        let p = ee.pose.pos;
        let Some((depth, n_body)) = object.shape.penetration(&inv.transform_point(&p)) else {
            continue;
        };
        let n = object.rot * n_body;
        let v_rel = ee.vel - object.point_velocity(&p);
        let vn = v_rel.dot(&n);
        let f_n = (params.k_n * depth - params.d_n * vn).max(0.0);

        let anchor_body = anchors.get(i).copied().flatten().unwrap_or_else(|| inv.transform_point(&p));
        let anchor = object.pose().transform_point(&anchor_body);
        let gap = p - anchor;
        let gap_t = gap - gap.dot(&n) * n;
        let v_t = v_rel - vn * n;
        let mut f_t = -params.k_t * gap_t - params.d_t * v_t;
        let limit = params.mu * f_n;
        let sticking = f_t.norm() <= limit;
        let new_anchor = if sticking {
            anchor_body
        } else {
            f_t *= if f_t.norm() > 0.0 { limit / f_t.norm() } else { 0.0 };
            // Move the anchor so the spring alone carries the sliding force.
            inv.transform_point(&(p + f_t / params.k_t))
        };

        let f = f_n * n + f_t;
        out.ee_forces[i] = f;
        out.object_force -= f;
        out.object_moment -= (p - object.pos).cross(&f);
        out.anchors[i] = Some(new_anchor);
        out.records.push(ContactRecord {
            am_id: i,
            point: p.into(),
            depth,
            normal: n.into(),
            normal_force: f_n,
            tangential_force: f_t.into(),
            sticking,
        });
    }
    out
}

/// Force and moment of the table plane `z = 0` on the object.
///
/// Friction is a Coulomb law smoothed below `1 mm/s` of sliding speed.
pub fn table_wrench(object: &ObjectState, params: &ContactParams) -> (Vector3<f64>, Vector3<f64>) {
    const SMOOTH: f64 = 1e-3;
    let mut force = Vector3::zeros();
    let mut moment = Vector3::zeros();
    for local in object.shape.support_points() {
        let r = object.rot * local;
        let p = object.pos + r;
        if p.z >= 0.0 {
            continue;
        }
        let v = object.point_velocity(&p);
        let f_n = (params.k_n * (-p.z) - params.d_n * v.z).max(0.0);
        let v_t = Vector3::new(v.x, v.y, 0.0);
        let f_t = -params.mu * f_n * v_t / (v_t.norm_squared() + SMOOTH * SMOOTH).sqrt();
        let f = Vector3::new(f_t.x, f_t.y, f_n);
        force += f;
        moment += r.cross(&f);
    }
    (force, moment)
}

/// Height of the centroid at which the object rests on the table in static balance.
pub fn resting_height(shape: &ObjectShape, mass: f64, gravity: f64, params: &ContactParams) -> f64 {
    let bottom = shape.support_points().iter().filter(|p| p.z < 0.0).count() as f64;
    shape.half_height() - mass * gravity / (params.k_n * bottom)
}

/// Time derivative of the object state, with the rotation in exponential
/// coordinates `θ` around the step's initial orientation.
#[derive(Clone, Copy)]
pub(crate) struct ObjectRate {
    pub vel: Vector3<f64>,
    pub theta: Vector3<f64>,
    pub acc: Vector3<f64>,
    pub alpha: Vector3<f64>,
}

pub(crate) fn object_rate(o: &ObjectState, theta: &Vector3<f64>, force: &Vector3<f64>, moment: &Vector3<f64>, gravity: f64, table: Option<&ContactParams>) -> ObjectRate {
    let (tf, tm) = table.map(|p| table_wrench(o, p)).unwrap_or_default();
    let f = force + tf + Vector3::new(0.0, 0.0, -o.mass * gravity);
    let tau = moment + tm;
    let iw = o.inertia_world();
    let alpha = iw.try_inverse().unwrap_or_else(Matrix3::zeros) * (tau - o.omega.cross(&(iw * o.omega)));
    ObjectRate { vel: o.vel, theta: dexp_inv_left(theta, &o.omega), acc: f / o.mass, alpha }
}

/// One RK4 step of the object under a held external wrench (world force,
/// moment about the centroid) plus gravity and, if given, the table.
pub fn object_step(
    object: &ObjectState,
    force: &Vector3<f64>,
    moment: &Vector3<f64>,
    gravity: f64,
    table: Option<&ContactParams>,
    dt: f64,
) -> Result<ObjectState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
    }
    let at = |theta: &Vector3<f64>, dp: Vector3<f64>, dv: Vector3<f64>, dw: Vector3<f64>| ObjectState {
        pos: object.pos + dp,
        rot: exp_so3(theta) * object.rot,
        vel: object.vel + dv,
        omega: object.omega + dw,
        ..object.clone()
    };
    let z = Vector3::zeros();
    let k1 = object_rate(object, &z, force, moment, gravity, table);
    let th2 = k1.theta * (0.5 * dt);
    let k2 = object_rate(&at(&th2, k1.vel * (0.5 * dt), k1.acc * (0.5 * dt), k1.alpha * (0.5 * dt)), &th2, force, moment, gravity, table);
    let th3 = k2.theta * (0.5 * dt);
    let k3 = object_rate(&at(&th3, k2.vel * (0.5 * dt), k2.acc * (0.5 * dt), k2.alpha * (0.5 * dt)), &th3, force, moment, gravity, table);
    let th4 = k3.theta * dt;
    let k4 = object_rate(&at(&th4, k3.vel * dt, k3.acc * dt, k3.alpha * dt), &th4, force, moment, gravity, table);
    let comb = |a: Vector3<f64>, b: Vector3<f64>, c: Vector3<f64>, d: Vector3<f64>| (a + 2.0 * b + 2.0 * c + d) * (dt / 6.0);
    let theta = comb(k1.theta, k2.theta, k3.theta, k4.theta);
    let mut next = at(
        &theta,
        comb(k1.vel, k2.vel, k3.vel, k4.vel),
        comb(k1.acc, k2.acc, k3.acc, k4.acc),
        comb(k1.alpha, k2.alpha, k3.alpha, k4.alpha),
    );
    next.rot = project_to_so3(&next.rot);
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube() -> ObjectState {
        ObjectState::new(ObjectShape::Box { half_extents: [0.1, 0.1, 0.1] }, 1.0, Vector3::new(0.0, 0.0, 0.5)).unwrap()
    }

    fn tip(p: Vector3<f64>) -> EeSnapshot {
        EeSnapshot { pose: Pose::from_translation(p), vel: Vector3::zeros() }
    }

    #[test]
    fn separated_tip_has_no_force() {
        let o = cube();
        let out = contact_forces(&o, &[tip(Vector3::new(0.2, 0.0, 0.5))], &[None], &ContactParams::default());
        assert_eq!(out.ee_forces[0], Vector3::zeros());
        assert_eq!(out.object_force, Vector3::zeros());
        assert!(out.records.is_empty());
    }

    #[test]
    fn static_spring_law() {
        let o = cube();
        let out = contact_forces(&o, &[tip(Vector3::new(0.099, 0.0, 0.5))], &[None], &ContactParams::default());
        assert!((out.ee_forces[0] - Vector3::new(5.0, 0.0, 0.0)).norm() < 1e-9);
        assert!(out.records[0].sticking);
    }

    #[test]
    fn zero_wrench_zero_gravity_keeps_pose() {
        let mut o = cube();
        o.omega = Vector3::zeros();
        let next = object_step(&o, &Vector3::zeros(), &Vector3::zeros(), 0.0, None, 1e-3).unwrap();
        assert_eq!(next.pos, o.pos);
        assert!((next.rot - o.rot).norm() < 1e-15);
    }

    #[test]
    fn cylinder_radial_normal() {
        let s = ObjectShape::Cylinder { radius: 0.2, half_height: 0.1 };
        let (d, n) = s.penetration(&Vector3::new(0.0, 0.19, 0.0)).unwrap();
        assert!((d - 0.01).abs() < 1e-12);
        assert!((n - Vector3::y()).norm() < 1e-12);
        assert!(s.penetration(&Vector3::new(0.0, 0.21, 0.0)).is_none());
    }
}
