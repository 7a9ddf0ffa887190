//! Point-mass impedance tracking used for arm end-effector motion.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    pub kp: f64,
    pub kv: f64,
}

impl Gains {
    /// Critically damped gains for a unit mass.
    pub fn critical(kp: f64) -> Self {
        Self {
            kp,
            kv: 2.0 * kp.sqrt(),
        }
    }
}

impl Default for Gains {
    fn default() -> Self {
        Self::critical(5.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpedanceState {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub gains: Gains,
}

impl ImpedanceState {
    pub fn at_rest(position: Vec<f64>, gains: Gains) -> Self {
        let velocity = vec![0.0; position.len()];
        Self {
            position,
            velocity,
            gains,
        }
    }

    pub fn error_norm(&self, target: &[f64]) -> f64 {
        self.position
            .iter()
            .zip(target)
            .map(|(p, t)| (t - p) * (t - p))
            .sum::<f64>()
            .sqrt()
    }

    /// ½v² + ½kp·e² summed over axes.
    pub fn energy(&self, target: &[f64]) -> f64 {
        self.position
            .iter()
            .zip(&self.velocity)
            .zip(target)
            .map(|((p, v), t)| 0.5 * v * v + 0.5 * self.gains.kp * (t - p) * (t - p))
            .sum()
    }
}

/// Integrate `a = kp (target - x) - kv v` per axis with classic RK4.
pub fn impedance_track(
    state: &ImpedanceState,
    target: &[f64],
    dt: f64,
    n_steps: usize,
) -> ImpedanceState {
    assert!(dt > 0.0, "dt must be positive");
    assert_eq!(state.position.len(), target.len());
    let Gains { kp, kv } = state.gains;
    let accel = |x: f64, v: f64, t: f64| kp * (t - x) - kv * v;
    let mut out = state.clone();
    for _ in 0..n_steps {
        for ((x, v), &t) in out.position.iter_mut().zip(out.velocity.iter_mut()).zip(target) {
            let (x0, v0) = (*x, *v);
            let k1x = v0;
            let k1v = accel(x0, v0, t);
            let k2x = v0 + 0.5 * dt * k1v;
            let k2v = accel(x0 + 0.5 * dt * k1x, k2x, t);
            let k3x = v0 + 0.5 * dt * k2v;
            let k3v = accel(x0 + 0.5 * dt * k2x, k3x, t);
            let k4x = v0 + dt * k3v;
            let k4v = accel(x0 + dt * k3x, k4x, t);
            *x = x0 + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
            *v = v0 + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        }
    }
    out
}

/// Step until the position error drops below `threshold`, in chunks of
/// `dt`. Returns the final state and the elapsed time, or `None` when the
/// time budget runs out first.
pub fn track_until(
    state: &ImpedanceState,
    target: &[f64],
    dt: f64,
    threshold: f64,
    budget: f64,
) -> Option<(ImpedanceState, f64)> {
    let mut s = state.clone();
    let mut t = 0.0;
    while s.error_norm(target) >= threshold {
        if t >= budget {
            return None;
        }
        s = impedance_track(&s, target, dt, 1);
        t += dt;
    }
    Some((s, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn closed_form(t: f64) -> f64 {
        let w = 5f64.sqrt();
        1.0 - (1.0 + w * t) * (-w * t).exp()
    }

    #[test]
    fn equilibrium_is_fixed() {
        let s = ImpedanceState::at_rest(vec![0.4, -0.2], Gains::default());
        let out = impedance_track(&s, &[0.4, -0.2], 0.01, 100);
        assert_eq!(out, s);
    }

    #[test]
    fn critical_damping_matches_closed_form() {
        let mut s = ImpedanceState::at_rest(vec![0.0], Gains::default());
        for i in 1..=3000 {
            s = impedance_track(&s, &[1.0], 0.001, 1);
            let t = i as f64 * 0.001;
            assert!((s.position[0] - closed_form(t)).abs() < 1e-6);
            assert!(s.position[0] <= 1.0);
        }
    }

    #[test]
    fn light_damping_overshoots() {
        let s = ImpedanceState::at_rest(
            vec![0.0],
            Gains {
                kp: 5.0,
                kv: 0.1,
            },
        );
        let mut peak: f64 = 0.0;
        let mut cur = s;
        for _ in 0..300 {
            cur = impedance_track(&cur, &[1.0], 0.01, 1);
            peak = peak.max(cur.position[0]);
        }
        assert!(peak > 1.5);
    }

    #[test]
    fn track_until_reaches_threshold() {
        let s = ImpedanceState::at_rest(vec![0.0, 0.0], Gains::default());
        let (end, t) = track_until(&s, &[0.5, 0.3], 0.05, 0.05, 10.0).unwrap();
        assert!(end.error_norm(&[0.5, 0.3]) < 0.05);
        assert!(t > 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn critical_damping_never_overshoots_and_dissipates(
                kp in prop::sample::select(vec![1.0, 5.0, 25.0]),
                start in -2.0..2.0f64,
                gap in 0.01..3.0f64,
                dt in 0.0005..0.01f64,
            ) {
                let target = [start + gap];
                let mut s = ImpedanceState::at_rest(vec![start], Gains::critical(kp));
                let mut energy = s.energy(&target);
                for _ in 0..2000 {
                    s = impedance_track(&s, &target, dt, 1);
                    prop_assert!(s.position[0] <= target[0], "overshoot to {}", s.position[0]);
                    let e = s.energy(&target);
                    prop_assert!(e <= energy * (1.0 + 1e-12) + 1e-300, "energy rose from {energy} to {e}");
                    energy = e;
                }
            }
        }
    }
}
