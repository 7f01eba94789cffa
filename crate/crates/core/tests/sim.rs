mod common;

use amgrasp::sim::{self, Scenario, SimSettings, Simulation};
use amgrasp::spatial::exp_so3;
use amgrasp::{AmState, Error, MultibodyModel, Wrench, WrenchFrame};
use nalgebra::{DVector, Vector3};

fn model() -> MultibodyModel {
    MultibodyModel::default_planar_arm()
}

fn tumbling(m: &MultibodyModel) -> AmState {
    let mut s = AmState::at_rest(m, Vector3::new(0.0, 0.0, 1.0), exp_so3(&Vector3::new(-0.3, 0.2, 0.1)), m.nominal_q.clone());
    s.v = DVector::from_fn(m.nv(), |i, _| 0.6 * ((i as f64) * 0.7 + 0.4).cos());
    s
}

fn coast(m: &MultibodyModel, s: &AmState, dt: f64, duration: f64) -> AmState {
    let tau = DVector::zeros(m.nv());
    let zero = Wrench::zero(WrenchFrame::World);
    let mut s = s.clone();
    for _ in 0..(duration / dt).round() as usize {
        s = sim::am_rk4_step(m, &s, &tau, &zero, dt).unwrap();
    }
    s
}

fn distance(a: &AmState, b: &AmState) -> f64 {
    let r = (a.r_b - b.r_b).norm();
    ((a.p_b - b.p_b).norm_squared() + r * r + (&a.q - &b.q).norm_squared() + (&a.v - &b.v).norm_squared()).sqrt()
}

#[test]
fn unactuated_flight_conserves_energy() {
    let m = model();
    let s0 = tumbling(&m);
    let e0 = common::energy(&m, &s0);
    let (s, elapsed) = common::timed(|| coast(&m, &s0, 1e-4, 5.0));
    let drift = (common::energy(&m, &s) - e0).abs();
    let scale = e0.abs().max(m.total_mass() * m.gravity * 1.0);
    assert!(drift < 1e-4 * scale, "drift {drift} against {scale} in {elapsed:?}");
}

#[test]
fn integrator_is_fourth_order() {
    let m = model();
    let s0 = tumbling(&m);
    let (dt, duration) = (0.02, 1.0);
    let reference = coast(&m, &s0, dt / 16.0, duration);
    let coarse = distance(&coast(&m, &s0, dt, duration), &reference);
    let fine = distance(&coast(&m, &s0, dt / 2.0, duration), &reference);
    let ratio = coarse / fine;
    assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn rotation_stays_orthonormal() {
    let m = model();
    let s = coast(&m, &tumbling(&m), 1e-3, 2.0);
    assert!((s.r_b.transpose() * s.r_b - nalgebra::Matrix3::identity()).norm() < 1e-12);
    assert!((s.r_b.determinant() - 1.0).abs() < 1e-12);
}

fn short(preset: &str, duration: f64) -> Scenario {
    let mut sc = Scenario::preset(preset, SimSettings { log_every: 1, ..SimSettings::default() }).unwrap();
    sc.spec.duration = duration;
    sc
}

#[test]
fn runs_are_deterministic() {
    let a = sim::run_scenario(short("two_am_grasp", 1.0)).unwrap();
    let b = sim::run_scenario(short("two_am_grasp", 1.0)).unwrap();
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    a.telemetry.write_csv(dir_a.path()).unwrap();
    b.telemetry.write_csv(dir_b.path()).unwrap();
    for name in ["am_0.csv", "am_1.csv", "world.csv", "contacts.csv"] {
        let x = std::fs::read(dir_a.path().join(name)).unwrap();
        let y = std::fs::read(dir_b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
    let json = |o: &sim::RunOutput| serde_json::to_string(&o.summary).unwrap();
    assert_eq!(json(&a), json(&b));
}

#[test]
fn monitors_of_unreached_phases_fail() {
    let out = sim::run_scenario(short("two_am_grasp", 1.0)).unwrap();
    let find = |name: &str| out.summary.monitors.iter().find(|m| m.name == name).unwrap();
    for name in ["approach_convergence", "hover_settling", "hover_energy_bound", "lift"] {
        let m = find(name);
        assert!(!m.passed && m.detail.contains("not reached"), "{m:?}");
    }
    assert!(find("passivity").passed);
    assert!(!out.summary.passed);
}

#[test]
fn free_flight_storage_never_grows() {
    let mut sim = Simulation::new(short("free_flight", 2.0)).unwrap().record_monitors(true);
    for _ in 0..2000 {
        sim.step().unwrap();
    }
    let recs = sim.monitor_records();
    assert!(recs.len() > 1000);
    for w in recs.windows(2) {
        for (a, b) in w[0].s_am.iter().zip(&w[1].s_am) {
            assert!(b - a <= 1e-6, "storage rose by {} at t = {}", b - a, w[1].t);
        }
    }
}

#[test]
fn zero_substeps_are_rejected() {
    let err = Scenario::preset("free_flight", SimSettings { substeps: 0, ..SimSettings::default() }).unwrap_err();
    match err {
        Error::Config { field, .. } => assert_eq!(field, "substeps"),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn oversized_steps_diverge() {
    let err = sim::run_scenario(Scenario::preset("free_flight", SimSettings { dt: 0.2, ..SimSettings::default() }).unwrap()).unwrap_err();
    assert!(matches!(err, Error::Diverged { .. }), "{err}");
}

#[test]
fn unknown_presets_are_rejected() {
    assert!(Scenario::preset("three_am_grasp", SimSettings::default()).is_err());
}
