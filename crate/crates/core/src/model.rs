//! Kinematic and inertial description of one aerial manipulator, its state,
//! and end-effector wrenches.

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{rotation_defect, Pose};

/// One revolute link of the serial arm.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub mass: f64,
    /// CoM in the link frame.
    pub com: Vector3<f64>,
    /// Rotational inertia about the CoM, link-frame axes.
    pub inertia: Matrix3<f64>,
    /// Joint axis, unit vector in the joint frame (the parent frame after `origin`).
    pub axis: Vector3<f64>,
    /// Placement of the joint frame in the parent frame at `q = 0`.
    pub origin: Pose,
}

/// Physical parameters of the shipped base-plus-planar-arm model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanarArmParams {
    /// kg
    pub base_mass: f64,
    /// Principal moments of the base about its CoM, kg·m².
    pub base_inertia: [f64; 3],
    /// m
    pub link_length: f64,
    /// kg
    pub link_mass: f64,
    /// Distance of the shoulder joint below the base CoM, m.
    pub shoulder_drop: f64,
    /// m/s²
    pub gravity: f64,
    /// Reference joint angles, rad.
    pub nominal_q: [f64; 3],
}

impl Default for PlanarArmParams {
    fn default() -> Self {
        Self {
            base_mass: 1.5,
            base_inertia: [0.03, 0.03, 0.05],
            link_length: 0.15,
            link_mass: 0.1,
            shoulder_drop: 0.05,
            gravity: 9.81,
            nominal_q: [1.56, -1.70, 0.14],
        }
    }
}

impl PlanarArmParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, v: f64| Err(Error::Config { field: format!("model.{field}"), message: format!("must be finite and positive, got {v}") });
        for (name, v) in [("base_mass", self.base_mass), ("link_length", self.link_length), ("link_mass", self.link_mass)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(name, v);
            }
        }
        if let Some(&v) = self.base_inertia.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return bad("base_inertia", v);
        }
        if !(self.shoulder_drop >= 0.0 && self.shoulder_drop.is_finite()) {
            return Err(Error::Config { field: "model.shoulder_drop".into(), message: format!("must be finite and non-negative, got {}", self.shoulder_drop) });
        }
        if !(self.gravity >= 0.0 && self.gravity.is_finite()) {
            return Err(Error::Config { field: "model.gravity".into(), message: format!("must be finite and non-negative, got {}", self.gravity) });
        }
        if self.nominal_q.iter().any(|q| !q.is_finite()) {
            return Err(Error::Config { field: "model.nominal_q".into(), message: "joint angles must be finite".into() });
        }
        Ok(())
    }
}

/// Floating base (at its own CoM) carrying an `n`-joint serial arm.
#[derive(Debug, Clone, PartialEq)]
pub struct MultibodyModel {
    pub base_mass: f64,
    pub base_inertia: Matrix3<f64>,
    pub links: Vec<Link>,
    /// End-effector frame `{e}` relative to the last link (or the base for `n = 0`).
    pub ee_offset: Pose,
    /// Gravitational acceleration magnitude, m/s².
    pub gravity: f64,
    /// Reference arm configuration used for default gains and setpoint offsets.
    pub nominal_q: DVector<f64>,
    total_mass: f64,
}

impl MultibodyModel {
    pub fn new(
        base_mass: f64,
        base_inertia: Matrix3<f64>,
        links: Vec<Link>,
        ee_offset: Pose,
        gravity: f64,
        nominal_q: DVector<f64>,
    ) -> Result<Self> {
        let total_mass = links.iter().fold(base_mass, |acc, l| acc + l.mass);
        let model = Self { base_mass, base_inertia, links, ee_offset, gravity, nominal_q, total_mass };
        model.validate()?;
        Ok(model)
    }

    /// Bare floating base without an arm.
    pub fn bare_base(base_mass: f64, base_inertia: Matrix3<f64>, gravity: f64) -> Result<Self> {
        Self::new(base_mass, base_inertia, Vec::new(), Pose::identity(), gravity, DVector::zeros(0))
    }

    /// Quadrotor of 1.5 kg with a 3-DOF planar arm (0.15 m, 0.1 kg links)
    /// moving in the base x–z plane and hanging 5 cm below the base. The
    /// nominal configuration holds the end-effector level, about 0.30 m ahead
    /// of and 0.18 m below the base origin, with reach to spare in every direction.
    pub fn default_planar_arm() -> Self {
        Self::planar_arm(&PlanarArmParams::default()).expect("default model is valid")
    }

    /// Base with a 3-joint planar arm of identical slender links, pitching
    /// about the base y-axis. The end-effector sits at the tip of the last link.
    pub fn planar_arm(p: &PlanarArmParams) -> Result<Self> {
        p.validate()?;
        let len = p.link_length;
        let rod = p.link_mass * len * len / 12.0;
        // Small axial inertia keeps the link inertia positive definite.
        let inertia = Matrix3::from_diagonal(&Vector3::new(1e-5, rod, rod));
        let mk = |origin: Vector3<f64>| Link {
            mass: p.link_mass,
            com: Vector3::new(0.5 * len, 0.0, 0.0),
            inertia,
            axis: Vector3::y(),
            origin: Pose::from_translation(origin),
        };
        let links = vec![
            mk(Vector3::new(0.0, 0.0, -p.shoulder_drop)),
            mk(Vector3::new(len, 0.0, 0.0)),
            mk(Vector3::new(len, 0.0, 0.0)),
        ];
        Self::new(
            p.base_mass,
            Matrix3::from_diagonal(&Vector3::from(p.base_inertia)),
            links,
            Pose::from_translation(Vector3::new(len, 0.0, 0.0)),
            p.gravity,
            DVector::from_row_slice(&p.nominal_q),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidModel(m));
        if !(self.base_mass > 0.0) {
            return bad(format!("base mass must be positive, got {}", self.base_mass));
        }
        if !is_spd(&self.base_inertia) {
            return bad("base inertia must be symmetric positive definite".into());
        }
        for (i, l) in self.links.iter().enumerate() {
            if !(l.mass > 0.0) {
                return bad(format!("link {i} mass must be positive"));
            }
            if !is_spd(&l.inertia) {
                return bad(format!("link {i} inertia must be symmetric positive definite"));
            }
            if (l.axis.norm() - 1.0).abs() > 1e-9 {
                return bad(format!("link {i} joint axis is not a unit vector"));
            }
            if rotation_defect(&l.origin.rot) > 1e-9 {
                return bad(format!("link {i} origin rotation is not orthonormal"));
            }
        }
        if self.nominal_q.len() != self.links.len() {
            return bad("nominal_q length must equal the number of joints".into());
        }
        if !(self.gravity >= 0.0) || !self.gravity.is_finite() {
            return bad("gravity must be a finite non-negative scalar".into());
        }
        Ok(())
    }

    /// Number of arm joints `n`.
    pub fn dof(&self) -> usize {
        self.links.len()
    }

    /// Generalized velocity dimension `n + 6`.
    pub fn nv(&self) -> usize {
        self.links.len() + 6
    }

    /// Total mass `m` (base plus links).
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn with_gravity(mut self, g: f64) -> Self {
        self.gravity = g;
        self
    }
}

fn is_spd(m: &Matrix3<f64>) -> bool {
    if (m - m.transpose()).norm() > 1e-12 * m.norm().max(1.0) {
        return false;
    }
    m.symmetric_eigenvalues().iter().all(|&e| e > 0.0)
}

/// Full state of one AM. `v = [v_b; w_b; q̇]` with base velocities in the body frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AmState {
    pub p_b: Vector3<f64>,
    pub r_b: Matrix3<f64>,
    pub q: DVector<f64>,
    pub v: DVector<f64>,
}

impl AmState {
    pub fn at_rest(model: &MultibodyModel, p_b: Vector3<f64>, r_b: Matrix3<f64>, q: DVector<f64>) -> Self {
        Self { p_b, r_b, q, v: DVector::zeros(model.nv()) }
    }

    pub fn v_b(&self) -> Vector3<f64> {
        Vector3::new(self.v[0], self.v[1], self.v[2])
    }

    pub fn w_b(&self) -> Vector3<f64> {
        Vector3::new(self.v[3], self.v[4], self.v[5])
    }

    pub fn qdot(&self) -> DVector<f64> {
        self.v.rows(6, self.v.len() - 6).into_owned()
    }

    pub fn is_finite(&self) -> bool {
        self.p_b.iter().chain(self.r_b.iter()).chain(self.q.iter()).chain(self.v.iter()).all(|x| x.is_finite())
    }

    pub fn check(&self, model: &MultibodyModel) -> Result<()> {
        if self.q.len() != model.dof() || self.v.len() != model.nv() {
            return Err(Error::InvalidInput(format!(
                "state dimensions (q: {}, v: {}) do not match model (n = {})",
                self.q.len(),
                self.v.len(),
                model.dof()
            )));
        }
        if !self.is_finite() {
            return Err(Error::InvalidInput("state contains non-finite entries".into()));
        }
        Ok(())
    }

    /// Configuration reached by following the velocity `v` for time `h`
    /// (base motion as a body-frame screw, joints linearly).
    pub fn flowed(&self, h: f64) -> AmState {
        let w = self.w_b() * h;
        AmState {
            p_b: self.p_b + self.r_b * (self.v_b() * h),
            r_b: self.r_b * crate::spatial::exp_so3(&w),
            q: &self.q + self.qdot() * h,
            v: self.v.clone(),
        }
    }
}

/// Frame a [`Wrench`] is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WrenchFrame {
    World,
    EndEffector,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub moment: Vector3<f64>,
    pub frame: WrenchFrame,
}

impl Wrench {
    pub fn zero(frame: WrenchFrame) -> Self {
        Self { force: Vector3::zeros(), moment: Vector3::zeros(), frame }
    }

    pub fn body(force: Vector3<f64>, moment: Vector3<f64>) -> Self {
        Self { force, moment, frame: WrenchFrame::EndEffector }
    }

    pub fn as_vector(&self) -> nalgebra::Vector6<f64> {
        crate::spatial::stack(&self.force, &self.moment)
    }

    /// Re-express between world and `{e}` axes given the end-effector
    /// orientation `r_e` (the reference point stays the end-effector origin).
    pub fn in_frame(&self, frame: WrenchFrame, r_e: &Matrix3<f64>) -> Wrench {
        match (self.frame, frame) {
            (a, b) if a == b => *self,
            (WrenchFrame::World, WrenchFrame::EndEffector) => Wrench {
                force: r_e.transpose() * self.force,
                moment: r_e.transpose() * self.moment,
                frame,
            },
            _ => Wrench { force: r_e * self.force, moment: r_e * self.moment, frame },
        }
    }
}
