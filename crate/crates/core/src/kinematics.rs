//! Kinematic bicycle model of the ego vehicle and the translation between the
//! agent's action space and the model's control space.
//!
//! The agent commands the planar velocity of the vehicle baseline midpoint
//! plus a yaw rate; the model is driven by rear-axle forward speed and front
//! steering angle. State is carried at the rear axle `(x_r, y_r, yaw)` and
//! integrated with classic RK4 under piecewise-constant controls; midpoint and
//! front-axle poses are derived, so the rigid-body identities
//! `x_m = x_r + (l/2) cos(yaw)` and `x_f = x_r + l cos(yaw)` hold exactly.

use crate::world::normalize_angle;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KinematicsError {
    #[error("time step {0} outside (0, {MAX_DT}]")]
    BadTimeStep(f64),
    #[error("steering angle {delta} exceeds limit {delta_max}")]
    SteeringOutOfRange { delta: f64, delta_max: f64 },
}

/// Largest supported integration step, in seconds.
pub const MAX_DT: f64 = 0.1;

/// Physical and numerical constants of the ego vehicle.
#[derive(Debug, Clone, Copy)]
pub struct KinematicsConfig {
    /// Wheelbase, meters.
    pub wheelbase: f64,
    /// Steering angle limit, radians.
    pub delta_max: f64,
    /// Cap on commanded planar speed, m/s.
    pub v_cap: f64,
    /// Cap on commanded yaw rate, rad/s.
    pub yaw_rate_cap: f64,
    /// Below this rear-axle speed the steering translation is degenerate.
    pub v_eps: f64,
    /// Control period, seconds.
    pub dt: f64,
}

impl Default for KinematicsConfig {
    fn default() -> Self {
        KinematicsConfig {
            wheelbase: 2.5,
            delta_max: 0.6,
            v_cap: 15.0,
            yaw_rate_cap: 1.0,
            v_eps: 1e-3,
            dt: 0.1,
        }
    }
}

/// Rear-axle pose of the bicycle model. Yaw is kept in `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BicycleState {
    pub x_r: f64,
    pub y_r: f64,
    pub yaw: f64,
}

impl BicycleState {
    pub fn new(x_r: f64, y_r: f64, yaw: f64) -> Self {
        BicycleState { x_r, y_r, yaw: normalize_angle(yaw) }
    }

    /// Builds the state from a baseline-midpoint pose.
    pub fn from_midpoint(x_m: f64, y_m: f64, yaw: f64, wheelbase: f64) -> Self {
        let yaw = normalize_angle(yaw);
        BicycleState {
            x_r: x_m - 0.5 * wheelbase * yaw.cos(),
            y_r: y_m - 0.5 * wheelbase * yaw.sin(),
            yaw,
        }
    }

    /// Baseline midpoint, halfway between the axles.
    pub fn midpoint(&self, wheelbase: f64) -> [f64; 2] {
        [self.x_r + 0.5 * wheelbase * self.yaw.cos(), self.y_r + 0.5 * wheelbase * self.yaw.sin()]
    }

    /// Front-axle position.
    pub fn front_axle(&self, wheelbase: f64) -> [f64; 2] {
        [self.x_r + wheelbase * self.yaw.cos(), self.y_r + wheelbase * self.yaw.sin()]
    }
}

/// Model-space control: rear-axle forward speed and steering angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput {
    pub v_r: f64,
    pub delta: f64,
}

/// Agent-space action: planar velocity of the baseline midpoint in the sensor
/// frame plus yaw rate. The environment caps `hypot(vx, vy)` at `v_cap` and
/// `|yaw_rate|` at `yaw_rate_cap` before execution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionVector {
    pub vx: f64,
    pub vy: f64,
    pub yaw_rate: f64,
}

impl ActionVector {
    pub const DIM: usize = 3;

    pub fn as_array(&self) -> [f64; 3] {
        [self.vx, self.vy, self.yaw_rate]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        ActionVector { vx: a[0], vy: a[1], yaw_rate: a[2] }
    }
}

/// Result of translating an action into model controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlTranslation {
    pub control: ControlInput,
    /// True when the rear-axle speed was below `v_eps` with a nonzero yaw-rate
    /// demand: steering is undefined there and saturates at `delta_max`.
    pub degenerate: bool,
}

/// Projects an action onto model controls at the current yaw.
///
/// Rear-axle speed is the midpoint velocity projected on the heading; the
/// steering angle inverts the yaw-rate relation `yaw_rate = v_r tan(delta)/l`
/// and is clamped to `delta_max`.
pub fn action_to_control(a: &ActionVector, yaw: f64, cfg: &KinematicsConfig) -> ControlTranslation {
    let v_r = a.vx * yaw.cos() + a.vy * yaw.sin();
    if v_r.abs() < cfg.v_eps {
        if a.yaw_rate != 0.0 {
            return ControlTranslation {
                control: ControlInput { v_r, delta: cfg.delta_max.copysign(a.yaw_rate) },
                degenerate: true,
            };
        }
        return ControlTranslation { control: ControlInput { v_r, delta: 0.0 }, degenerate: false };
    }
    let delta = (cfg.wheelbase * a.yaw_rate / v_r).atan().clamp(-cfg.delta_max, cfg.delta_max);
    ControlTranslation { control: ControlInput { v_r, delta }, degenerate: false }
}

/// Exact inverse of the model: midpoint velocity and yaw rate produced by a
/// control at a given yaw.
pub fn control_to_action(u: &ControlInput, yaw: f64, wheelbase: f64) -> ActionVector {
    let yaw_rate = u.v_r * u.delta.tan() / wheelbase;
    let (s, c) = yaw.sin_cos();
    let half_l_rate = 0.5 * wheelbase * yaw_rate;
    ActionVector {
        vx: u.v_r * c - half_l_rate * s,
        vy: u.v_r * s + half_l_rate * c,
        yaw_rate,
    }
}

fn derivative(yaw: f64, u: &ControlInput, wheelbase: f64) -> [f64; 3] {
    [u.v_r * yaw.cos(), u.v_r * yaw.sin(), u.v_r * u.delta.tan() / wheelbase]
}

/// One RK4 step under a constant control. The rolling-without-slipping
/// constraint `xdot_r sin(yaw) - ydot_r cos(yaw) = 0` holds by construction.
pub fn integrate_step(
    s: &BicycleState,
    u: &ControlInput,
    dt: f64,
    cfg: &KinematicsConfig,
) -> Result<BicycleState, KinematicsError> {
    if !(dt > 0.0 && dt <= MAX_DT) {
        return Err(KinematicsError::BadTimeStep(dt));
    }
    if u.delta.abs() > cfg.delta_max {
        return Err(KinematicsError::SteeringOutOfRange { delta: u.delta, delta_max: cfg.delta_max });
    }
    let l = cfg.wheelbase;
    let k1 = derivative(s.yaw, u, l);
    let k2 = derivative(s.yaw + 0.5 * dt * k1[2], u, l);
    let k3 = derivative(s.yaw + 0.5 * dt * k2[2], u, l);
    let k4 = derivative(s.yaw + dt * k3[2], u, l);
    // Summing the stage weights before scaling keeps constant-derivative
    // segments (straight driving) exact.
    let comb = |i: usize| (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0;
    Ok(BicycleState {
        x_r: s.x_r + dt * comb(0),
        y_r: s.y_r + dt * comb(1),
        yaw: normalize_angle(s.yaw + dt * comb(2)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const CFG: KinematicsConfig = KinematicsConfig {
        wheelbase: 2.5,
        delta_max: 0.6,
        v_cap: 15.0,
        yaw_rate_cap: 1.0,
        v_eps: 1e-3,
        dt: 0.1,
    };

    /// Closed-form constant-control solution (circular arc or straight line).
    fn exact(s: &BicycleState, u: &ControlInput, t: f64, l: f64) -> BicycleState {
        let omega = u.v_r * u.delta.tan() / l;
        if omega.abs() < 1e-15 {
            return BicycleState {
                x_r: s.x_r + u.v_r * t * s.yaw.cos(),
                y_r: s.y_r + u.v_r * t * s.yaw.sin(),
                yaw: s.yaw,
            };
        }
        let yaw = s.yaw + omega * t;
        BicycleState {
            x_r: s.x_r + u.v_r / omega * (yaw.sin() - s.yaw.sin()),
            y_r: s.y_r - u.v_r / omega * (yaw.cos() - s.yaw.cos()),
            yaw: normalize_angle(yaw),
        }
    }

    fn run(s: &BicycleState, u: &ControlInput, dt: f64, steps: usize) -> BicycleState {
        let mut cur = *s;
        for _ in 0..steps {
            cur = integrate_step(&cur, u, dt, &CFG).unwrap();
        }
        cur
    }

    #[test]
    fn straight_segment_is_exact() {
        // 1 s at v_r = 5 with no steering advances exactly 5 m; the midpoint
        // moves identically.
        let s = BicycleState::new(0.0, 0.0, 0.0);
        let u = ControlInput { v_r: 5.0, delta: 0.0 };
        let end = run(&s, &u, 0.1, 10);
        assert_eq!(end.x_r, 5.0);
        assert_eq!(end.y_r, 0.0);
        assert_eq!(end.yaw, 0.0);
        assert_eq!(end.midpoint(CFG.wheelbase)[0], 5.0 + 1.25);
    }

    #[test]
    fn rigid_body_identities_hold_exactly() {
        let s = BicycleState::new(3.2, -1.7, 0.8);
        let l = CFG.wheelbase;
        let m = s.midpoint(l);
        let f = s.front_axle(l);
        assert_eq!(m[0], s.x_r + 0.5 * l * s.yaw.cos());
        assert_eq!(m[1], s.y_r + 0.5 * l * s.yaw.sin());
        assert_eq!(f[0], s.x_r + l * s.yaw.cos());
        assert_eq!(f[1], s.y_r + l * s.yaw.sin());
        // from_midpoint round-trips.
        let back = BicycleState::from_midpoint(m[0], m[1], s.yaw, l);
        assert_relative_eq!(back.x_r, s.x_r, epsilon = 1e-12);
        assert_relative_eq!(back.y_r, s.y_r, epsilon = 1e-12);
    }

    #[test]
    fn constant_steering_closes_a_circle() {
        // Pick the steering angle so one revolution is exactly 200 steps.
        let period = 20.0;
        let v = 5.0;
        let omega = std::f64::consts::TAU / period;
        let delta = (omega * CFG.wheelbase / v).atan();
        assert!(delta.abs() <= CFG.delta_max);
        let s = BicycleState::new(1.0, -2.0, 0.3);
        let end = run(&s, &ControlInput { v_r: v, delta }, 0.1, 200);
        assert!((end.x_r - s.x_r).abs() <= 1e-6, "x drift {}", end.x_r - s.x_r);
        assert!((end.y_r - s.y_r).abs() <= 1e-6, "y drift {}", end.y_r - s.y_r);
    }

    #[test]
    fn rk4_global_order_is_four() {
        let s = BicycleState::new(0.0, 0.0, 0.2);
        let u = ControlInput { v_r: 5.0, delta: 0.5 };
        let horizon = 1.0;
        let reference = exact(&s, &u, horizon, CFG.wheelbase);
        let hs = [0.1, 0.05, 0.025, 0.0125];
        let errs: Vec<f64> = hs
            .iter()
            .map(|&h| {
                let end = run(&s, &u, h, (horizon / h).round() as usize);
                (end.x_r - reference.x_r).hypot(end.y_r - reference.y_r)
            })
            .collect();
        // Least-squares slope of ln(err) against ln(h).
        let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
        let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let slope: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
        assert!((3.8..=4.2).contains(&slope), "slope {slope}, errs {errs:?}");
    }

    #[test]
    fn rk4_single_step_richardson_is_order_five() {
        let s = BicycleState::new(0.0, 0.0, -0.4);
        let u = ControlInput { v_r: 6.0, delta: 0.55 };
        let diff = |h: f64| {
            let one = integrate_step(&s, &u, h, &CFG).unwrap();
            let half = run(&s, &u, h / 2.0, 2);
            (one.x_r - half.x_r).hypot(one.y_r - half.y_r)
        };
        let e1 = diff(0.1);
        let e2 = diff(0.05);
        let slope = (e1 / e2).log2();
        assert!((4.7..=5.3).contains(&slope), "slope {slope}");
    }

    #[test]
    fn nonholonomic_residual_vanishes() {
        let mut s = BicycleState::new(2.0, 1.0, 1.1);
        let u = ControlInput { v_r: 7.0, delta: -0.3 };
        for _ in 0..50 {
            s = integrate_step(&s, &u, 0.1, &CFG).unwrap();
            let xdot = u.v_r * s.yaw.cos();
            let ydot = u.v_r * s.yaw.sin();
            let residual = xdot * s.yaw.sin() - ydot * s.yaw.cos();
            assert!(residual.abs() <= 1e-12, "residual {residual}");
        }
    }

    #[test]
    fn translation_example() {
        // v_r = 5, delta = atan(0.25), wheelbase 2.5, yaw 0:
        // yaw_rate = 0.5, midpoint velocity (5, 0.625).
        let u = ControlInput { v_r: 5.0, delta: 0.25f64.atan() };
        let a = control_to_action(&u, 0.0, CFG.wheelbase);
        assert_relative_eq!(a.yaw_rate, 0.5, epsilon = 1e-12);
        assert_relative_eq!(a.vx, 5.0, epsilon = 1e-12);
        assert_relative_eq!(a.vy, 0.625, epsilon = 1e-12);
        let back = action_to_control(&a, 0.0, &CFG);
        assert!(!back.degenerate);
        assert_relative_eq!(back.control.v_r, 5.0, epsilon = 1e-12);
        assert_relative_eq!(back.control.delta, 0.25f64.atan(), epsilon = 1e-12);
    }

    #[test]
    fn degenerate_translation_saturates_steering() {
        let a = ActionVector { vx: 0.0, vy: 0.0, yaw_rate: -0.4 };
        let t = action_to_control(&a, 0.3, &CFG);
        assert!(t.degenerate);
        assert_eq!(t.control.delta, -CFG.delta_max);
        // Zero yaw-rate demand at standstill is fine.
        let t = action_to_control(&ActionVector { vx: 0.0, vy: 0.0, yaw_rate: 0.0 }, 0.3, &CFG);
        assert!(!t.degenerate);
        assert_eq!(t.control.delta, 0.0);
    }

    #[test]
    fn integrate_rejects_bad_inputs() {
        let s = BicycleState::new(0.0, 0.0, 0.0);
        let u = ControlInput { v_r: 1.0, delta: 0.0 };
        assert!(matches!(integrate_step(&s, &u, 0.0, &CFG), Err(KinematicsError::BadTimeStep(_))));
        assert!(matches!(integrate_step(&s, &u, 0.11, &CFG), Err(KinematicsError::BadTimeStep(_))));
        let wild = ControlInput { v_r: 1.0, delta: 0.61 };
        assert!(matches!(
            integrate_step(&s, &wild, 0.1, &CFG),
            Err(KinematicsError::SteeringOutOfRange { .. })
        ));
    }

    proptest! {
        #[test]
        fn action_control_round_trip(
            v_r in 0.01..15.0f64,
            delta in -0.6..0.6f64,
            yaw in -3.1..3.1f64,
        ) {
            let u = ControlInput { v_r, delta };
            let a = control_to_action(&u, yaw, CFG.wheelbase);
            let t = action_to_control(&a, yaw, &CFG);
            prop_assert!(!t.degenerate);
            prop_assert!((t.control.v_r - v_r).abs() <= 1e-9 * v_r.max(1.0));
            prop_assert!((t.control.delta - delta).abs() <= 1e-9);
        }

        #[test]
        fn rk4_tracks_closed_form(
            yaw in -3.0..3.0f64,
            v_r in 0.1..12.0f64,
            delta in -0.55..0.55f64,
        ) {
            let s = BicycleState::new(0.0, 0.0, yaw);
            let u = ControlInput { v_r, delta };
            let end = run(&s, &u, 0.1, 30);
            let want = exact(&s, &u, 3.0, CFG.wheelbase);
            prop_assert!((end.x_r - want.x_r).abs() <= 1e-4);
            prop_assert!((end.y_r - want.y_r).abs() <= 1e-4);
        }
    }
}
