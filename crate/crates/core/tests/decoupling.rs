mod common;

use amgrasp::decoupling::{self, PlanarTask};
use amgrasp::{dynamics, AmState, MultibodyModel, Wrench, WrenchFrame};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model() -> MultibodyModel {
    MultibodyModel::default_planar_arm()
}

fn inv(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().try_inverse().expect("invertible")
}

#[test]
fn lambda_is_block_diagonal_with_mass_block() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = m.dof();
    for _ in 0..300 {
        let s = common::random_state(&m, &mut rng);
        let terms = decoupling::decoupled_terms(&m, &s).unwrap();
        // Rebuild Λ_ξ from the oracle mass matrix rather than trusting the library's.
        let t_inv = inv(&terms.t);
        let l = t_inv.transpose() * common::mass_matrix(&m, &s) * &t_inv;
        let mut off = 0.0;
        let blocks = [(0, 3), (3, 3), (6, n)];
        for (i, &(r, rn)) in blocks.iter().enumerate() {
            for (j, &(c, cn)) in blocks.iter().enumerate() {
                if i != j {
                    off += l.view((r, c), (rn, cn)).norm_squared();
                }
            }
        }
        assert!(off.sqrt() < 1e-8 * l.norm(), "off-block {}", off.sqrt() / l.norm());
        let mass = m.total_mass();
        let com = l.view((0, 0), (3, 3)) - DMatrix::<f64>::identity(3, 3) * mass;
        assert!(com.norm() < 1e-9 * mass);
    }
}

#[test]
fn xi_holds_com_velocity_and_base_rate() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let h = 1e-6;
    for _ in 0..100 {
        let s = common::random_state(&m, &mut rng);
        let terms = decoupling::decoupled_terms(&m, &s).unwrap();
        let rc_dot = (common::com_position(&m, &s.flowed(h)) - common::com_position(&m, &s.flowed(-h))) / (2.0 * h);
        assert!((terms.xi.fixed_rows::<3>(0) - rc_dot).norm() < 1e-7);
        assert!((terms.xi.fixed_rows::<3>(3) - s.v.fixed_rows::<3>(3)).norm() < 1e-12);
        assert!((terms.com.r_c - common::com_position(&m, &s)).norm() < 1e-12);
    }
}

#[test]
fn gravity_acts_on_the_com_coordinate_only() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..100 {
        let s = common::random_state(&m, &mut rng);
        let terms = decoupling::decoupled_terms(&m, &s).unwrap();
        let mut expected = DVector::zeros(m.nv());
        expected[2] = m.total_mass() * m.gravity;
        assert!((&terms.zeta_xi - expected).norm() < 1e-9 * m.total_mass() * m.gravity);
    }
}

#[test]
fn transformed_coriolis_keeps_skew_property() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let h = 1e-6;
    for _ in 0..100 {
        let s = common::random_state(&m, &mut rng);
        let terms = decoupling::decoupled_terms(&m, &s).unwrap();
        let plus = decoupling::decoupled_terms(&m, &s.flowed(h)).unwrap();
        let minus = decoupling::decoupled_terms(&m, &s.flowed(-h)).unwrap();
        let l_dot = (plus.lambda_xi - minus.lambda_xi) / (2.0 * h);
        let x = DVector::from_fn(m.nv(), |_, _| rng.gen_range(-1.0..1.0));
        let q = (x.transpose() * (l_dot - 2.0 * &terms.gamma_xi) * &x)[0];
        assert!(q.abs() < 1e-5, "{q}");
    }
}

#[test]
fn decoupled_equations_reproduce_forward_dynamics() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..100 {
        let s = common::random_state(&m, &mut rng);
        let tau = DVector::from_fn(m.nv(), |_, _| rng.gen_range(-5.0..5.0));
        let acc = dynamics::forward_dynamics(&m, &s, &tau, &Wrench::zero(WrenchFrame::World)).unwrap();
        let terms = decoupling::decoupled_terms(&m, &s).unwrap();
        let xi_dot = &terms.t_dot * &s.v + &terms.t * &acc;
        let lhs = &terms.lambda_xi * xi_dot + terms.gamma_xi_times_xi() + &terms.zeta_xi;
        let rhs = &terms.t_inv_t * &tau;
        assert!((&lhs - &rhs).norm() < 1e-6 * (1.0 + rhs.norm()), "{}", (&lhs - &rhs).norm());
    }
}

#[test]
fn inverse_transpose_top_rows_are_base_rotation() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..300 {
        let s = common::random_state(&m, &mut rng);
        let terms = decoupling::decoupled_terms(&m, &s).unwrap();
        let top = terms.t_inv_t.view((0, 0), (3, m.nv()));
        let mut expected = DMatrix::zeros(3, m.nv());
        expected.view_mut((0, 0), (3, 3)).copy_from(&s.r_b);
        assert!((top - expected).norm() < 1e-9);
    }
}

#[test]
fn first_control_input_is_the_thrust() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..300 {
        let s = common::random_state(&m, &mut rng);
        let terms = decoupling::decoupled_terms(&m, &s).unwrap();
        let u1 = rng.gen_range(0.0..40.0);
        let u2 = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let u3 = DVector::from_fn(m.dof(), |_, _| rng.gen_range(-1.0..1.0));
        let tau = amgrasp::control::to_actuator_space(&terms, u1, &u2, &u3, &s.r_b);
        // The base force is a pure body-z thrust.
        assert!((tau.fixed_rows::<3>(0) - Vector3::new(0.0, 0.0, u1)).norm() < 1e-9 * (1.0 + u1));
    }
}

#[test]
fn com_force_is_the_world_end_effector_force() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for _ in 0..300 {
        let s = common::random_state(&m, &mut rng);
        let terms = decoupling::decoupled_terms(&m, &s).unwrap();
        let f_e = Vector3::from_fn(|_, _| rng.gen_range(-10.0..10.0));
        let tau_e = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let f_xi = decoupling::transform_wrench(&terms, &terms.j_e, &Wrench::body(f_e, tau_e));
        let expected = common::ee_rotation(&m, &s) * f_e;
        assert!((f_xi.fixed_rows::<3>(0) - expected).norm() < 1e-9 * (1.0 + f_e.norm()));
    }
}

#[test]
fn task_jacobian_matches_output_differences() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let h = 1e-6;
    let mut checked = 0;
    while checked < 100 {
        let s = common::random_state(&m, &mut rng);
        let yaw = rng.gen_range(-3.0..3.0);
        let task = PlanarTask::new(yaw);
        let terms = decoupling::decoupled_terms(&m, &s).unwrap();
        let y0 = common::planar_output(&m, &s, yaw);
        // Pitch is undefined with the tool axis vertical in the heading plane.
        let r = common::ee_rotation(&m, &s);
        let hr = common::rodrigues(&Vector3::z(), yaw).transpose() * r;
        if hr[(0, 0)].hypot(hr[(2, 0)]) < 0.2 {
            continue;
        }
        let out = decoupling::task_output(&m, &s, &task, &terms).unwrap();
        assert!((out.y.fixed_rows::<3>(0) - y0).norm() < 1e-12);
        let plus = common::planar_output(&m, &s.flowed(h), yaw);
        let minus = common::planar_output(&m, &s.flowed(-h), yaw);
        let mut y_dot = (plus - minus) / (2.0 * h);
        y_dot.z = decoupling::wrap_angle(plus.z - minus.z) / (2.0 * h);
        let pred = &out.j * &terms.xi;
        assert!((pred.fixed_rows::<3>(0) - y_dot).norm() < 1e-6 * (1.0 + y_dot.norm()), "{pred} vs {y_dot}");
        checked += 1;
    }
}

#[test]
fn task_inertia_is_the_inverse_projection() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let s = common::random_state(&m, &mut rng);
    let terms = decoupling::decoupled_terms(&m, &s).unwrap();
    let out = decoupling::task_output(&m, &s, &PlanarTask::new(0.0), &terms).unwrap();
    let (j_pinv, lambda_y) = decoupling::task_inverse(&terms, &out.j).unwrap();
    assert!((&out.j * &j_pinv - DMatrix::<f64>::identity(3, 3)).norm() < 1e-9);
    let direct = inv(&(&out.j * inv(&terms.lambda_xi) * out.j.transpose()));
    assert!((&lambda_y - direct).norm() < 1e-8 * lambda_y.norm());
}

#[test]
fn mismatched_state_is_rejected() {
    let m = model();
    let s = AmState::at_rest(&m, Vector3::zeros(), nalgebra::Matrix3::identity(), DVector::zeros(m.dof() + 1));
    assert!(decoupling::decoupled_terms(&m, &s).is_err());
}
