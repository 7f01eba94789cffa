//! Decentralized passive impedance control for collaborative grasping with
//! under-actuated aerial manipulators (AMs), together with the floating-base
//! simulator used to exercise it.
//!
//! Each AM is a multirotor carrying an `n`-joint serial arm. Its dynamics are
//! rewritten in inertially decoupled coordinates `ξ = [ṙ_c; w_b; ρ]`
//! ([`decoupling`]), where three control laws act independently:
//! CoM tracking with thrust only along the body z-axis, geometric attitude
//! control on SO(3), and an end-effector impedance law ([`control`]).
//! Grasping emerges from each AM squeezing the object through its own
//! impedance; no AM ever sees another AM's state.
//!
//! Module map:
//!
//! * [`model`], [`dynamics`]: multibody description, `M`, `C`, `g`, Jacobians.
//! * [`decoupling`]: the transform `T`, projector `N`, and `Λ_ξ`, `Γ_ξ`, `ζ_ξ`.
//! * [`control`]: gains, setpoints, and the per-AM controller.
//! * [`world`]: object rigid body, table, penalty contact with stick–slip friction.
//! * [`sim`]: fixed-step integration, scenarios, and storage/passivity monitors.
//! * [`config`], [`telemetry`], [`verify`]: run configuration, output files,
//!   and the property suites behind `amgrasp check`.

// `!(x > 0.0)` is the house idiom for "not positive, or NaN".
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the per-body recursions they implement.
#![allow(clippy::needless_range_loop)]

pub mod config;
pub mod control;
pub mod decoupling;
pub mod dynamics;
pub mod error;
pub mod model;
pub mod sim;
pub mod spatial;
pub mod telemetry;
pub mod trajectory;
pub mod verify;
pub mod world;

pub use error::{Error, Result};
pub use model::{AmState, MultibodyModel, Wrench, WrenchFrame};
