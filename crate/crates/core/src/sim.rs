//! Kinematic simulation of a two-wheeled robot in a walled square arena.
//!
//! The body is a disc driven by two wheels whose commands are ground
//! speeds. Poses advance by the exact constant-velocity arc, are projected
//! back inside the arena when they would cross a wall, and the ring of
//! distance sensors is evaluated by casting rays to the walls and passing
//! the hit distance through a piecewise-linear lookup table.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Turn rates below this are integrated as straight-line motion.
pub const STRAIGHT_LINE_EPS: f64 = 1e-9;

/// Slack allowed when a ray origin lies on a wall after rounding.
const BOUNDARY_SLACK: f64 = 1e-9;

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(angle: f64) -> f64 {
    let r = angle.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn origin() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }
}

/// Square arena of side `side` centred on the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arena {
    side: f64,
}

impl Default for Arena {
    fn default() -> Self {
        Self { side: 10.0 }
    }
}

impl Arena {
    pub fn new(side: f64) -> Result<Self> {
        if !(side.is_finite() && side > 0.0) {
            return Err(invalid(format!("arena side must be positive, got {side}")));
        }
        Ok(Self { side })
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn half(&self) -> f64 {
        self.side / 2.0
    }

    /// Wall segments in N, E, S, W order, each as (start, end).
    pub fn walls(&self) -> [([f64; 2], [f64; 2]); 4] {
        let h = self.half();
        [
            ([-h, h], [h, h]),
            ([h, h], [h, -h]),
            ([h, -h], [-h, -h]),
            ([-h, -h], [-h, h]),
        ]
    }

    /// Closed-square membership.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let h = self.half();
        x.abs() <= h && y.abs() <= h
    }

    /// Whether a body of radius `radius` centred at (x, y) keeps clear of
    /// every wall.
    pub fn is_legal(&self, x: f64, y: f64, radius: f64) -> bool {
        let lim = self.half() - radius;
        x.abs() <= lim && y.abs() <= lim
    }

    /// Project a body centre onto the nearest legal point.
    pub fn clamp_body(&self, x: f64, y: f64, radius: f64) -> (f64, f64) {
        let lim = self.half() - radius;
        (x.clamp(-lim, lim), y.clamp(-lim, lim))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotParams {
    pub body_radius: f64,
    pub wheel_separation: f64,
    pub max_speed: f64,
    pub dt: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        Self {
            body_radius: 0.25,
            wheel_separation: 0.4,
            max_speed: 2.0,
            dt: 0.05,
        }
    }
}

impl RobotParams {
    pub fn validate(&self, arena: &Arena) -> Result<()> {
        for (name, v) in [
            ("body_radius", self.body_radius),
            ("wheel_separation", self.wheel_separation),
            ("max_speed", self.max_speed),
            ("dt", self.dt),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if 2.0 * self.body_radius >= arena.side() {
            return Err(invalid("robot body does not fit inside the arena"));
        }
        Ok(())
    }
}

/// Ring of range sensors with a shared lookup-table response.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorModel {
    count: usize,
    mount_radius: f64,
    mount_angles: Vec<f64>,
    lookup_table: Vec<(f64, f64)>,
    tolerance: f64,
    max_value: f64,
}

impl SensorModel {
    pub const DEFAULT_COUNT: usize = 16;
    pub const DEFAULT_MAX_RANGE: f64 = 15.0;
    pub const DEFAULT_TOLERANCE: f64 = 0.1;

    /// `lookup_table` rows are (distance, value) with strictly increasing
    /// distances starting at zero; the last row defines the maximum range.
    pub fn new(
        count: usize,
        mount_radius: f64,
        lookup_table: Vec<(f64, f64)>,
        tolerance: f64,
    ) -> Result<Self> {
        if count == 0 {
            return Err(invalid("sensor count must be at least 1"));
        }
        if !(mount_radius.is_finite() && mount_radius >= 0.0) {
            return Err(invalid("mount radius must be non-negative"));
        }
        if !(tolerance.is_finite() && tolerance >= 0.0) {
            return Err(invalid(format!("tolerance must be >= 0, got {tolerance}")));
        }
        if lookup_table.len() < 2 {
            return Err(invalid("lookup table needs at least two rows"));
        }
        if lookup_table[0].0 != 0.0 {
            return Err(invalid("lookup table must start at distance 0"));
        }
        if lookup_table
            .iter()
            .any(|(d, v)| !d.is_finite() || !v.is_finite())
        {
            return Err(invalid("lookup table entries must be finite"));
        }
        if lookup_table.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(invalid(
                "lookup table distances must be strictly increasing",
            ));
        }
        let max_value = lookup_table
            .iter()
            .map(|r| r.1)
            .fold(f64::NEG_INFINITY, f64::max);
        let mount_angles = (0..count).map(|i| TAU * i as f64 / count as f64).collect();
        Ok(Self {
            count,
            mount_radius,
            mount_angles,
            lookup_table,
            tolerance,
            max_value,
        })
    }

    /// Eleven equispaced samples of 1000 * (1 - d / max_range)^2.
    pub fn quadratic_table(max_range: f64) -> Vec<(f64, f64)> {
        (0..=10)
            .map(|i| {
                let frac = i as f64 / 10.0;
                (max_range * frac, 1000.0 * (1.0 - frac) * (1.0 - frac))
            })
            .collect()
    }

    pub fn with_defaults(mount_radius: f64, tolerance: f64, max_range: f64) -> Result<Self> {
        if !(max_range.is_finite() && max_range > 0.0) {
            return Err(invalid(format!(
                "max_range must be positive, got {max_range}"
            )));
        }
        Self::new(
            Self::DEFAULT_COUNT,
            mount_radius,
            Self::quadratic_table(max_range),
            tolerance,
        )
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mount_radius(&self) -> f64 {
        self.mount_radius
    }

    pub fn mount_angles(&self) -> &[f64] {
        &self.mount_angles
    }

    pub fn lookup_table(&self) -> &[(f64, f64)] {
        &self.lookup_table
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn max_range(&self) -> f64 {
        self.lookup_table[self.lookup_table.len() - 1].0
    }

    pub fn max_value(&self) -> f64 {
        self.max_value
    }
}

impl Default for SensorModel {
    fn default() -> Self {
        Self::with_defaults(
            RobotParams::default().body_radius,
            Self::DEFAULT_TOLERANCE,
            Self::DEFAULT_MAX_RANGE,
        )
        .expect("default sensor model is valid")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorFrame {
    pub values: Vec<f64>,
    pub yaw: f64,
}

/// Everything that shapes a simulated trajectory apart from the
/// exploration policy.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct World {
    pub arena: Arena,
    pub robot: RobotParams,
    pub sensors: SensorModel,
}

impl World {
    pub fn validate(&self) -> Result<()> {
        self.robot.validate(&self.arena)
    }
}

/// Advance `pose` by `dt` seconds of constant wheel speeds.
pub fn integrate_pose(
    pose: Pose,
    v_left: f64,
    v_right: f64,
    dt: f64,
    params: &RobotParams,
    arena: &Arena,
) -> Result<Pose> {
    if !(pose.is_finite() && v_left.is_finite() && v_right.is_finite() && dt.is_finite()) {
        return Err(invalid("non-finite pose, wheel speed or time step"));
    }
    if dt <= 0.0 {
        return Err(invalid(format!("time step must be positive, got {dt}")));
    }
    if v_left.abs() > params.max_speed || v_right.abs() > params.max_speed {
        return Err(invalid(format!(
            "wheel speeds ({v_left}, {v_right}) exceed max speed {}",
            params.max_speed
        )));
    }

    let v = 0.5 * (v_left + v_right);
    let omega = (v_right - v_left) / params.wheel_separation;
    let theta0 = pose.theta;
    let (x, y, theta) = if omega.abs() < STRAIGHT_LINE_EPS {
        (
            pose.x + v * theta0.cos() * dt,
            pose.y + v * theta0.sin() * dt,
            theta0 + omega * dt,
        )
    } else {
        let theta1 = theta0 + omega * dt;
        let r = v / omega;
        (
            pose.x + r * (theta1.sin() - theta0.sin()),
            pose.y - r * (theta1.cos() - theta0.cos()),
            theta1,
        )
    };
    let (x, y) = arena.clamp_body(x, y, params.body_radius);
    Ok(Pose::new(x, y, theta))
}

/// Distance from `origin` to the first wall hit along `angle`.
pub fn cast_ray(origin: [f64; 2], angle: f64, arena: &Arena) -> Result<f64> {
    let [ox, oy] = origin;
    if !(ox.is_finite() && oy.is_finite() && angle.is_finite()) {
        return Err(invalid("non-finite ray"));
    }
    let h = arena.half();
    if ox.abs() > h + BOUNDARY_SLACK || oy.abs() > h + BOUNDARY_SLACK {
        return Err(invalid(format!(
            "ray origin ({ox}, {oy}) is outside the arena"
        )));
    }
    let (ox, oy) = (ox.clamp(-h, h), oy.clamp(-h, h));
    let (s, c) = angle.sin_cos();
    let tx = if c > 0.0 {
        (h - ox) / c
    } else if c < 0.0 {
        (-h - ox) / c
    } else {
        f64::INFINITY
    };
    let ty = if s > 0.0 {
        (h - oy) / s
    } else if s < 0.0 {
        (-h - oy) / s
    } else {
        f64::INFINITY
    };
    Ok(tx.min(ty).max(0.0))
}

/// Piecewise-linear lookup; distances past the last row clamp to its value.
pub fn response_curve(distance: f64, model: &SensorModel) -> Result<f64> {
    if distance.is_nan() || distance < 0.0 {
        return Err(invalid(format!("distance must be >= 0, got {distance}")));
    }
    let table = model.lookup_table();
    let last = table[table.len() - 1];
    if distance >= last.0 {
        return Ok(last.1);
    }
    // First row whose distance exceeds the query; always in 1..len.
    let hi = table.partition_point(|row| row.0 <= distance);
    let (d0, v0) = table[hi - 1];
    let (d1, v1) = table[hi];
    let t = (distance - d0) / (d1 - d0);
    Ok(v0 + t * (v1 - v0))
}

/// Evaluate every sensor at `pose`. Noise draws consume one uniform per
/// sensor from `rng`, in sensor order, and only when `noise_enabled`.
pub fn read_sensors<R: Rng + ?Sized>(
    pose: &Pose,
    arena: &Arena,
    model: &SensorModel,
    noise_enabled: bool,
    rng: &mut R,
) -> Result<SensorFrame> {
    let mut values = Vec::with_capacity(model.count());
    for &mount in model.mount_angles() {
        let dir = pose.theta + mount;
        let origin = [
            pose.x + model.mount_radius() * dir.cos(),
            pose.y + model.mount_radius() * dir.sin(),
        ];
        let d = cast_ray(origin, dir, arena)?;
        let mut value = response_curve(d, model)?;
        if noise_enabled {
            let u = model.tolerance() * (2.0 * rng.gen::<f64>() - 1.0);
            value *= 1.0 + u;
        }
        values.push(value);
    }
    Ok(SensorFrame {
        values,
        yaw: pose.theta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Explicit Euler with a tiny step, no collision handling.
    fn euler_oracle(pose: Pose, vl: f64, vr: f64, t: f64, sep: f64, h: f64) -> (f64, f64, f64) {
        let steps = (t / h).round() as usize;
        let v = 0.5 * (vl + vr);
        let w = (vr - vl) / sep;
        let (mut x, mut y, mut th) = (pose.x, pose.y, pose.theta);
        for _ in 0..steps {
            // midpoint heading keeps the oracle second order
            let mid = th + 0.5 * w * h;
            x += v * mid.cos() * h;
            y += v * mid.sin() * h;
            th += w * h;
        }
        (x, y, wrap_angle(th))
    }

    fn big_arena() -> Arena {
        Arena::new(100.0).unwrap()
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_abs_diff_eq!(wrap_angle(-PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_angle(5.0), 5.0 - TAU, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_angle(-7.0), -7.0 + TAU, epsilon = 1e-15);
        assert_eq!(wrap_angle(0.0), 0.0);
    }

    #[test]
    fn straight_line_limit() {
        let p = integrate_pose(
            Pose::origin(),
            1.0,
            1.0,
            1.0,
            &RobotParams::default(),
            &Arena::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(p.x, 1.0, epsilon = 1e-15);
        assert_eq!(p.y, 0.0);
        assert_eq!(p.theta, 0.0);
    }

    #[test]
    fn pure_rotation() {
        let p = integrate_pose(
            Pose::origin(),
            -1.0,
            1.0,
            1.0,
            &RobotParams::default(),
            &Arena::default(),
        )
        .unwrap();
        assert_eq!(p.x, 0.0);
        assert_eq!(p.y, 0.0);
        assert_abs_diff_eq!(p.theta, wrap_angle(5.0), epsilon = 1e-15);
    }

    #[test]
    fn arc_matches_fine_step_integration() {
        let params = RobotParams::default();
        let p = integrate_pose(Pose::origin(), 0.5, 1.0, 1.0, &params, &big_arena()).unwrap();
        let (x, y, th) = euler_oracle(Pose::origin(), 0.5, 1.0, 1.0, params.wheel_separation, 1e-5);
        assert!((p.x - x).abs() < 1e-6, "x {} vs {}", p.x, x);
        assert!((p.y - y).abs() < 1e-6, "y {} vs {}", p.y, y);
        assert!((p.theta - th).abs() < 1e-6);
    }

    #[test]
    fn non_finite_inputs_rejected() {
        let params = RobotParams::default();
        let arena = Arena::default();
        assert!(integrate_pose(Pose::origin(), f64::NAN, 0.0, 0.1, &params, &arena).is_err());
        assert!(integrate_pose(Pose::origin(), 0.0, 0.0, f64::INFINITY, &params, &arena).is_err());
        let bad = Pose {
            x: f64::NAN,
            y: 0.0,
            theta: 0.0,
        };
        assert!(integrate_pose(bad, 0.0, 0.0, 0.1, &params, &arena).is_err());
        assert!(integrate_pose(Pose::origin(), 0.0, 0.0, 0.0, &params, &arena).is_err());
        assert!(integrate_pose(Pose::origin(), 2.5, 0.0, 0.1, &params, &arena).is_err());
    }

    #[test]
    fn collision_projects_and_keeps_heading() {
        let params = RobotParams::default();
        let arena = Arena::default();
        let start = Pose::new(4.5, 0.0, 0.3);
        let p = integrate_pose(start, 2.0, 2.0, 1.0, &params, &arena).unwrap();
        assert_eq!(p.x, 4.75);
        assert_eq!(p.theta, 0.3);
        assert!(arena.is_legal(p.x, p.y, params.body_radius));
    }

    #[test]
    fn cast_ray_examples() {
        let arena = Arena::default();
        assert_abs_diff_eq!(cast_ray([0.0, 0.0], 0.0, &arena).unwrap(), 5.0);
        assert_abs_diff_eq!(
            cast_ray([0.0, 0.0], PI / 4.0, &arena).unwrap(),
            5.0 * 2f64.sqrt(),
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(cast_ray([2.5, 0.0], 0.0, &arena).unwrap(), 2.5);
        assert!(cast_ray([6.0, 0.0], 0.0, &arena).is_err());
    }

    #[test]
    fn cast_ray_matches_marching_oracle() {
        let arena = Arena::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let o = [rng.gen_range(-4.99..4.99), rng.gen_range(-4.99..4.99)];
            let a = rng.gen_range(-PI..PI);
            let exact = cast_ray(o, a, &arena).unwrap();
            // 1 mm march until the point leaves the square
            let mut t = 0.0;
            while arena.contains(o[0] + t * a.cos(), o[1] + t * a.sin()) {
                t += 1e-3;
            }
            assert!((exact - t).abs() <= 2e-3, "ray {o:?} {a}: {exact} vs {t}");
        }
    }

    #[test]
    fn response_curve_examples() {
        let m = SensorModel::default();
        assert_eq!(response_curve(0.0, &m).unwrap(), 1000.0);
        assert_eq!(response_curve(15.0, &m).unwrap(), 0.0);
        assert_eq!(response_curve(40.0, &m).unwrap(), 0.0);
        // 7.5 m is the sixth table row: 1000 * 0.5^2
        let mid = response_curve(7.5, &m).unwrap();
        assert!((mid - 250.0).abs() <= 2.5);
        assert!(response_curve(-0.1, &m).is_err());
    }

    #[test]
    fn center_sensor_zero_reads_table_at_4_75() {
        let world = World::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = read_sensors(
            &Pose::origin(),
            &world.arena,
            &world.sensors,
            false,
            &mut rng,
        )
        .unwrap();
        // rows (4.5, 490) and (6.0, 360): 490 - 130 * 0.25 / 1.5
        assert_abs_diff_eq!(f.values[0], 490.0 - 130.0 / 6.0, epsilon = 1e-9);
        assert_eq!(f.values.len(), 16);
        assert_eq!(f.yaw, 0.0);
        let again = read_sensors(
            &Pose::origin(),
            &world.arena,
            &world.sensors,
            false,
            &mut rng,
        )
        .unwrap();
        assert_eq!(f, again);
        for i in 1..16 {
            assert_abs_diff_eq!(f.values[i], f.values[16 - i], epsilon = 1e-9);
        }
    }

    #[test]
    fn noise_stays_within_tolerance() {
        let world = World::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pose = Pose::new(1.3, -2.2, 0.7);
        let clean = read_sensors(&pose, &world.arena, &world.sensors, false, &mut rng).unwrap();
        for _ in 0..200 {
            let noisy = read_sensors(&pose, &world.arena, &world.sensors, true, &mut rng).unwrap();
            for (n, c) in noisy.values.iter().zip(&clean.values) {
                assert!((n - c).abs() <= 0.1 * c.abs() + 1e-12);
                assert!(*n >= 0.0 && *n <= world.sensors.max_value() * 1.1);
            }
        }
    }

    #[test]
    fn sensor_at_wall_reads_max() {
        let world = World::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pose = Pose::new(4.75, 0.0, 0.0);
        let f = read_sensors(&pose, &world.arena, &world.sensors, false, &mut rng).unwrap();
        assert_eq!(f.values[0], 1000.0);
    }

    proptest! {
        #[test]
        fn substeps_agree_with_single_step(
            vl in -2.0f64..2.0, vr in -2.0f64..2.0, th in -3.1f64..3.1, n in 1usize..50
        ) {
            let params = RobotParams::default();
            let arena = big_arena();
            let start = Pose::new(0.0, 0.0, th);
            let one = integrate_pose(start, vl, vr, 1.0, &params, &arena).unwrap();
            let mut p = start;
            for _ in 0..n {
                p = integrate_pose(p, vl, vr, 1.0 / n as f64, &params, &arena).unwrap();
            }
            prop_assert!((p.x - one.x).abs() < 1e-9);
            prop_assert!((p.y - one.y).abs() < 1e-9);
            prop_assert!(wrap_angle(p.theta - one.theta).abs() < 1e-9);
        }

        #[test]
        fn integrated_pose_is_legal(
            x in -4.75f64..4.75, y in -4.75f64..4.75, th in -3.2f64..3.2,
            vl in -2.0f64..2.0, vr in -2.0f64..2.0, dt in 0.01f64..20.0
        ) {
            let params = RobotParams::default();
            let arena = Arena::default();
            let p = integrate_pose(Pose::new(x, y, th), vl, vr, dt, &params, &arena).unwrap();
            prop_assert!(arena.is_legal(p.x, p.y, params.body_radius));
            prop_assert!(p.theta > -PI && p.theta <= PI);
        }

        #[test]
        fn readings_non_increasing_in_distance(a in 0.0f64..20.0, b in 0.0f64..20.0) {
            let m = SensorModel::default();
            let (near, far) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(response_curve(near, &m).unwrap() >= response_curve(far, &m).unwrap());
        }
    }
}
