//! Rest-to-rest polynomial interpolation between waypoints.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Position, velocity and acceleration at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub pos: DVector<f64>,
    pub vel: DVector<f64>,
    pub acc: DVector<f64>,
}

/// Septic blend `s(τ) = 35τ⁴ − 84τ⁵ + 70τ⁶ − 20τ⁷`: zero velocity,
/// acceleration and jerk at both ends.
///
/// Zero boundary jerk keeps the desired thrust direction's rate continuous,
/// so the attitude velocity error does not jump when a segment starts.
fn blend(tau: f64) -> (f64, f64, f64) {
    let t2 = tau * tau;
    let t3 = t2 * tau;
    let u = 1.0 - tau;
    let s = t2 * t2 * (35.0 - 84.0 * tau + 70.0 * t2 - 20.0 * t3);
    let ds = 140.0 * t3 * u * u * u;
    let dds = 420.0 * t2 * u * u * (1.0 - 2.0 * tau);
    (s, ds, dds)
}

/// Piecewise septic through `(t, point)` waypoints, holding the end values outside.
#[derive(Debug, Clone, PartialEq)]
pub struct Waypoints {
    knots: Vec<(f64, DVector<f64>)>,
}

impl Waypoints {
    pub fn new(knots: Vec<(f64, DVector<f64>)>) -> Result<Self> {
        let Some(first) = knots.first() else {
            return Err(Error::InvalidInput("trajectory needs at least one waypoint".into()));
        };
        let dim = first.1.len();
        for w in knots.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidInput("waypoint times must be strictly increasing".into()));
            }
        }
        if knots.iter().any(|(t, p)| p.len() != dim || !t.is_finite() || p.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidInput("waypoints must be finite and share one dimension".into()));
        }
        Ok(Self { knots })
    }

    pub fn constant(p: DVector<f64>) -> Self {
        Self { knots: vec![(0.0, p)] }
    }

    pub fn dim(&self) -> usize {
        self.knots[0].1.len()
    }

    pub fn sample(&self, t: f64) -> Sample {
        let n = self.dim();
        let zero = || DVector::zeros(n);
        let (t0, p0) = &self.knots[0];
        if t <= *t0 {
            return Sample { pos: p0.clone(), vel: zero(), acc: zero() };
        }
        for w in self.knots.windows(2) {
            let (ta, pa) = &w[0];
            let (tb, pb) = &w[1];
            if t < *tb {
                let dur = tb - ta;
                let (s, ds, dds) = blend((t - ta) / dur);
                let d = pb - pa;
                return Sample { pos: pa + &d * s, vel: &d * (ds / dur), acc: &d * (dds / (dur * dur)) };
            }
        }
        let last = &self.knots[self.knots.len() - 1].1;
        Sample { pos: last.clone(), vel: zero(), acc: zero() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_rest_to_rest() {
        let w = Waypoints::new(vec![(1.0, DVector::from_vec(vec![0.0, 1.0])), (3.0, DVector::from_vec(vec![2.0, -1.0]))]).unwrap();
        let a = w.sample(1.0);
        let b = w.sample(3.0);
        assert_eq!(a.pos, DVector::from_vec(vec![0.0, 1.0]));
        assert_eq!(b.pos, DVector::from_vec(vec![2.0, -1.0]));
        assert_eq!(b.vel.norm(), 0.0);
        let mid = w.sample(2.0);
        assert!((mid.pos[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn derivatives_match_differences() {
        let w = Waypoints::new(vec![(0.0, DVector::from_vec(vec![0.0])), (2.0, DVector::from_vec(vec![3.0]))]).unwrap();
        let h = 1e-5;
        for &t in &[0.3, 0.9, 1.7] {
            let fd_v = (w.sample(t + h).pos[0] - w.sample(t - h).pos[0]) / (2.0 * h);
            let fd_a = (w.sample(t + h).vel[0] - w.sample(t - h).vel[0]) / (2.0 * h);
            assert!((fd_v - w.sample(t).vel[0]).abs() < 1e-8);
            assert!((fd_a - w.sample(t).acc[0]).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_unordered_knots() {
        let p = DVector::zeros(1);
        assert!(Waypoints::new(vec![(1.0, p.clone()), (1.0, p)]).is_err());
    }
}
