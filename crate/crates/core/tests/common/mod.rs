//! Oracles and helpers shared by the integration tests.
//!
//! The kinematic oracle works with homogeneous transforms and a local
//! Rodrigues formula so it shares nothing with the library's spatial algebra.
#![allow(dead_code)]

use std::path::Path;
use std::time::{Duration, Instant};

use amgrasp::{AmState, MultibodyModel};
use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector3};
use rand::Rng;

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation by `angle` about unit `axis`.
pub fn rodrigues(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = skew(&axis.normalize());
    Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

fn homogeneous(r: &Matrix3<f64>, p: &Vector3<f64>) -> Matrix4<f64> {
    let mut h = Matrix4::identity();
    h.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    h.fixed_view_mut::<3, 1>(0, 3).copy_from(p);
    h
}

fn rot(h: &Matrix4<f64>) -> Matrix3<f64> {
    h.fixed_view::<3, 3>(0, 0).into_owned()
}

fn pos(h: &Matrix4<f64>) -> Vector3<f64> {
    h.fixed_view::<3, 1>(0, 3).into_owned()
}

/// World transforms of the base and every link, and the world joint axes
/// and origins.
pub struct Frames {
    pub bodies: Vec<Matrix4<f64>>,
    pub axes: Vec<(Vector3<f64>, Vector3<f64>)>,
    pub ee: Matrix4<f64>,
}

pub fn frames(model: &MultibodyModel, s: &AmState) -> Frames {
    let mut bodies = vec![homogeneous(&s.r_b, &s.p_b)];
    let mut axes = Vec::new();
    for (i, l) in model.links.iter().enumerate() {
        let joint = bodies[i] * homogeneous(&l.origin.rot, &l.origin.pos);
        axes.push((rot(&joint) * l.axis.normalize(), pos(&joint)));
        bodies.push(joint * homogeneous(&rodrigues(&l.axis, s.q[i]), &Vector3::zeros()));
    }
    let ee = bodies[model.dof()] * homogeneous(&model.ee_offset.rot, &model.ee_offset.pos);
    Frames { bodies, axes, ee }
}

fn mass_props(model: &MultibodyModel, k: usize) -> (f64, Vector3<f64>, Matrix3<f64>) {
    if k == 0 {
        (model.base_mass, Vector3::zeros(), model.base_inertia)
    } else {
        let l = &model.links[k - 1];
        (l.mass, l.com, l.inertia)
    }
}

/// `Σ ½m‖ṗ_c‖² + ½ωᵀI_wω` with velocities from the joint screw axes.
pub fn kinetic_energy(model: &MultibodyModel, s: &AmState) -> f64 {
    let f = frames(model, s);
    let v0 = s.r_b * Vector3::new(s.v[0], s.v[1], s.v[2]);
    let w0 = s.r_b * Vector3::new(s.v[3], s.v[4], s.v[5]);
    let mut ke = 0.0;
    for (k, h) in f.bodies.iter().enumerate() {
        let (m, c, i) = mass_props(model, k);
        let pc = h.transform_point(&c.into()).coords;
        let mut v = v0 + w0.cross(&(pc - s.p_b));
        let mut w = w0;
        for j in 0..k {
            let (a, o) = f.axes[j];
            v += a.cross(&(pc - o)) * s.v[6 + j];
            w += a * s.v[6 + j];
        }
        let iw = rot(h) * i * rot(h).transpose();
        ke += 0.5 * m * v.norm_squared() + 0.5 * w.dot(&(iw * w));
    }
    ke
}

/// Mass matrix by polarization of the kinetic energy.
pub fn mass_matrix(model: &MultibodyModel, s: &AmState) -> DMatrix<f64> {
    let nv = model.nv();
    let ke = |v: DVector<f64>| kinetic_energy(model, &AmState { v, ..s.clone() });
    let e = |i: usize| {
        let mut v = DVector::zeros(nv);
        v[i] = 1.0;
        v
    };
    let diag: Vec<f64> = (0..nv).map(|i| 2.0 * ke(e(i))).collect();
    DMatrix::from_fn(nv, nv, |i, j| if i == j { diag[i] } else { ke(e(i) + e(j)) - 0.5 * (diag[i] + diag[j]) })
}

pub fn potential_energy(model: &MultibodyModel, s: &AmState) -> f64 {
    let f = frames(model, s);
    f.bodies
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let (m, c, _) = mass_props(model, k);
            m * model.gravity * h.transform_point(&c.into()).z
        })
        .sum()
}

pub fn energy(model: &MultibodyModel, s: &AmState) -> f64 {
    kinetic_energy(model, s) + potential_energy(model, s)
}

pub fn ee_rotation(model: &MultibodyModel, s: &AmState) -> Matrix3<f64> {
    rot(&frames(model, s).ee)
}

pub fn ee_position(model: &MultibodyModel, s: &AmState) -> Vector3<f64> {
    pos(&frames(model, s).ee)
}

/// Random state with any attitude, joints within ±2 rad.
pub fn random_state(model: &MultibodyModel, rng: &mut impl Rng) -> AmState {
    let axis = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
    AmState {
        p_b: Vector3::from_fn(|_, _| rng.gen_range(-2.0..2.0)),
        r_b: rodrigues(&axis, rng.gen_range(-3.1..3.1)),
        q: DVector::from_fn(model.dof(), |_, _| rng.gen_range(-2.0..2.0)),
        v: DVector::from_fn(model.nv(), |_, _| rng.gen_range(-1.5..1.5)),
    }
}

/// A telemetry CSV addressed by column name.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn load(path: &Path) -> Table {
        let (header, rows) = amgrasp::telemetry::read_csv(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        Table { header, rows }
    }

    pub fn idx(&self, name: &str) -> usize {
        self.header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
    }

    pub fn col(&self, name: &str) -> Vec<f64> {
        let i = self.idx(name);
        self.rows.iter().map(|r| r[i]).collect()
    }

    /// Columns `prefix_0 .. prefix_{n-1}` of one row.
    pub fn vec(&self, row: usize, prefix: &str, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |i, _| self.rows[row][self.idx(&format!("{prefix}_{i}"))])
    }

    pub fn xyz(&self, row: usize, prefix: &str) -> Vector3<f64> {
        Vector3::from_fn(|i, _| self.rows[row][self.idx(&format!("{prefix}_{}", ["x", "y", "z"][i]))])
    }

    /// Index of the first row at or after `t`.
    pub fn row_at(&self, t: f64) -> usize {
        let c = self.idx("t");
        self.rows.iter().position(|r| r[c] >= t - 1e-9).unwrap_or_else(|| panic!("no row at t = {t}"))
    }
}

pub fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

/// Whole-system centre of mass.
pub fn com_position(model: &MultibodyModel, s: &AmState) -> Vector3<f64> {
    let f = frames(model, s);
    let mut total = 0.0;
    let mut acc = Vector3::zeros();
    for (k, h) in f.bodies.iter().enumerate() {
        let (m, c, _) = mass_props(model, k);
        acc += m * h.transform_point(&c.into()).coords;
        total += m;
    }
    acc / total
}

/// Heading-frame `(x, z, pitch)` of the end-effector.
pub fn planar_output(model: &MultibodyModel, s: &AmState, yaw: f64) -> Vector3<f64> {
    let h = rodrigues(&Vector3::z(), yaw).transpose();
    let f = frames(model, s);
    let p = h * pos(&f.ee);
    let r = h * rot(&f.ee);
    Vector3::new(p.x, p.z, (-r[(2, 0)]).atan2(r[(0, 0)]))
}
