mod common;

use amgrasp::dynamics;
use amgrasp::{AmState, MultibodyModel, Wrench, WrenchFrame};
use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model() -> MultibodyModel {
    MultibodyModel::default_planar_arm()
}

#[test]
fn kinetic_energy_matches_per_body_sum() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..300 {
        let s = common::random_state(&m, &mut rng);
        let oracle = common::kinetic_energy(&m, &s);
        let ke = dynamics::kinetic_energy(&m, &s);
        assert!((ke - oracle).abs() <= 1e-10 * oracle, "{ke} vs {oracle}");
    }
}

#[test]
fn mass_matrix_matches_polarized_energy() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let s = common::random_state(&m, &mut rng);
        let mm = dynamics::mass_matrix(&m, &s.q).unwrap();
        let oracle = common::mass_matrix(&m, &s);
        assert!((&mm - &oracle).norm() < 1e-10 * oracle.norm());
        assert!((&mm - mm.transpose()).norm() < 1e-12 * mm.norm());
        assert!(common::min_eigenvalue(&mm) > 0.0);
    }
}

#[test]
fn mass_matrix_top_left_is_total_mass() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = common::random_state(&m, &mut rng);
    let mm = dynamics::mass_matrix(&m, &s.q).unwrap();
    for i in 0..3 {
        assert!((mm[(i, i)] - m.total_mass()).abs() < 1e-12);
    }
}

#[test]
fn m_dot_minus_two_c_is_skew() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-6;
    for _ in 0..200 {
        let s = common::random_state(&m, &mut rng);
        let m_dot = (dynamics::mass_matrix(&m, &s.flowed(h).q).unwrap() - dynamics::mass_matrix(&m, &s.flowed(-h).q).unwrap()) / (2.0 * h);
        let c = dynamics::coriolis_matrix(&m, &s.q, &s.v);
        let x = DVector::from_fn(m.nv(), |_, _| rng.gen_range(-1.0..1.0));
        let q = (x.transpose() * (m_dot - 2.0 * c) * &x)[0];
        assert!(q.abs() < 1e-5, "{q}");
    }
}

#[test]
fn coriolis_reproduces_velocity_bias() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let s = common::random_state(&m, &mut rng);
        let cv = dynamics::coriolis_matrix(&m, &s.q, &s.v) * &s.v;
        let bias = dynamics::velocity_bias(&m, &s.q, &s.v);
        assert!((&cv - &bias).norm() < 1e-10 * (1.0 + bias.norm()));
    }
}

#[test]
fn gravity_is_the_potential_gradient() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = 1e-5;
    for _ in 0..100 {
        let s = common::random_state(&m, &mut rng);
        let g = dynamics::gravity_vector(&m, &s.q, &s.r_b);
        for i in 0..m.nv() {
            let mut dir = AmState { v: DVector::zeros(m.nv()), ..s.clone() };
            dir.v[i] = 1.0;
            let fd = (common::potential_energy(&m, &dir.flowed(h)) - common::potential_energy(&m, &dir.flowed(-h))) / (2.0 * h);
            assert!((g[i] - fd).abs() < 1e-6, "direction {i}: {} vs {fd}", g[i]);
        }
    }
}

#[test]
fn forward_and_inverse_dynamics_agree() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let zero = Wrench::zero(WrenchFrame::World);
    for _ in 0..100 {
        let s = common::random_state(&m, &mut rng);
        let tau = DVector::from_fn(m.nv(), |_, _| rng.gen_range(-5.0..5.0));
        let acc = dynamics::forward_dynamics(&m, &s, &tau, &zero).unwrap();
        let back = dynamics::inverse_dynamics(&m, &s.r_b, &s.q, &s.v, &acc, m.gravity);
        assert!((&back - &tau).norm() < 1e-9 * (1.0 + tau.norm()));
    }
}

#[test]
fn external_force_does_power_at_the_end_effector() {
    // Vᵀ J_eᵀ F equals F · ṗ_e, with ṗ_e from differences of the oracle's
    // end-effector position.
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let tau = DVector::zeros(m.nv());
    let h = 1e-6;
    for _ in 0..100 {
        let s = common::random_state(&m, &mut rng);
        let f = Vector3::from_fn(|_, _| rng.gen_range(-10.0..10.0));
        let with = dynamics::forward_dynamics(&m, &s, &tau, &Wrench { force: f, moment: Vector3::zeros(), frame: WrenchFrame::World }).unwrap();
        let without = dynamics::forward_dynamics(&m, &s, &tau, &Wrench::zero(WrenchFrame::World)).unwrap();
        let power = s.v.dot(&(common::mass_matrix(&m, &s) * (with - without)));
        let v_ee = (common::ee_position(&m, &s.flowed(h)) - common::ee_position(&m, &s.flowed(-h))) / (2.0 * h);
        assert!((power - f.dot(&v_ee)).abs() < 1e-6 * (1.0 + power.abs()), "{power} vs {}", f.dot(&v_ee));
    }
}

#[test]
fn end_effector_pose_matches_oracle() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let s = common::random_state(&m, &mut rng);
        let pose = dynamics::ee_pose(&m, &s);
        assert!((pose.pos - common::ee_position(&m, &s)).norm() < 1e-12);
        assert!((pose.rot - common::ee_rotation(&m, &s)).norm() < 1e-12);
    }
}

#[test]
fn total_energy_adds_kinetic_and_potential() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let s = common::random_state(&m, &mut rng);
    assert!((dynamics::total_energy(&m, &s) - common::energy(&m, &s)).abs() < 1e-10 * (1.0 + common::energy(&m, &s).abs()));
}
