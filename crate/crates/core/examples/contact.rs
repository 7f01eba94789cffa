//! Penalty contact with stick–slip friction between a tip and a box.
//!
//! `cargo run --release --example contact`

use amgrasp::spatial::Pose;
use amgrasp::world::{self, ContactParams, EeSnapshot, ObjectShape, ObjectState};
use nalgebra::Vector3;

fn main() -> amgrasp::Result<()> {
    let params = ContactParams::default();
    let object = ObjectState::new(ObjectShape::Box { half_extents: [0.1, 0.1, 0.1] }, 1.0, Vector3::new(0.0, 0.0, 1.0))?;
    let tip = |depth: f64, v: Vector3<f64>| EeSnapshot { pose: Pose::from_translation(Vector3::new(0.1 - depth, 0.0, 1.0)), vel: v };

    let out = world::contact_forces(&object, &[tip(1e-3, Vector3::zeros())], &[None], &params);
    println!("1 mm static penetration: force on the tip {:?} N", out.ee_forces[0].as_slice());

    // Dragging the tip along the face: the friction spring stretches until it hits μ f_n.
    let mut anchors = vec![None];
    for step in 0..6 {
        let slide = Vector3::new(0.0, 0.0, -0.002 * step as f64);
        let ee = EeSnapshot { pose: Pose::from_translation(Vector3::new(0.099, 0.0, 1.0) + slide), vel: Vector3::zeros() };
        let out = world::contact_forces(&object, &[ee], &anchors, &params);
        let r = out.records[0];
        println!(
            "slid {:.0} mm: f_n = {:.2} N, |f_t| = {:.2} N, {}",
            -slide.z * 1e3,
            r.normal_force,
            Vector3::from(r.tangential_force).norm(),
            if r.sticking { "sticking" } else { "sliding" }
        );
        anchors = out.anchors;
    }

    let rest = world::resting_height(&object.shape, object.mass, 9.81, &params);
    println!("resting centroid height on the table: {rest:.5} m");
    Ok(())
}
