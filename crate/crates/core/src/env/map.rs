//! Intersection geometry: four orthogonal two-lane arms meeting at a central
//! conflict area, the twelve entry-arm x movement routes as sampled polylines,
//! crosswalks across each arm, and the monitored zone rectangle.
//!
//! Frame: sensor at the intersection center, x east, y north. Arms are indexed
//! 0..4 with outward unit vectors E, N, W, S. Traffic keeps right, so a lane
//! for travel direction `d` is centered half a lane width to the right of the
//! road axis.

use crate::world::normalize_angle;

/// Geometry parameters. `lane_width` and `speed_limit` are the standard
/// single-lane width and the 30 km/h intersection limit; the rest shape the
/// monitored area.
#[derive(Debug, Clone, Copy)]
pub struct MapParams {
    /// Width of one lane, meters.
    pub lane_width: f64,
    /// Arm length from the intersection center, meters.
    pub arm_length: f64,
    /// Half-extent of the monitored zone square, meters.
    pub zone_half: f64,
    /// Distance of crosswalk centerlines from the intersection center.
    pub crosswalk_offset: f64,
    /// How far crosswalks extend past the road edge on each side.
    pub crosswalk_overhang: f64,
    /// Speed limit inside the monitored area, m/s.
    pub speed_limit: f64,
}

impl Default for MapParams {
    fn default() -> Self {
        MapParams {
            lane_width: 3.5,
            arm_length: 40.0,
            zone_half: 6.0,
            crosswalk_offset: 4.7,
            crosswalk_overhang: 1.5,
            speed_limit: 8.33,
        }
    }
}

/// Movement through the intersection relative to the entry direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Movement {
    Through,
    Left,
    Right,
}

impl Movement {
    pub const ALL: [Movement; 3] = [Movement::Through, Movement::Left, Movement::Right];

    pub fn name(self) -> &'static str {
        match self {
            Movement::Through => "through",
            Movement::Left => "left",
            Movement::Right => "right",
        }
    }
}

/// One drivable route: a polyline with cumulative arc length, plus where it
/// crosses the monitored zone.
#[derive(Debug, Clone)]
pub struct Route {
    pub entry_arm: usize,
    pub movement: Movement,
    points: Vec<[f64; 2]>,
    cum: Vec<f64>,
    /// First and last arc length inside the monitored zone.
    pub s_zone_enter: f64,
    pub s_zone_exit: f64,
}

impl Route {
    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    /// Pose at arc length `s` (clamped to the route): position and heading.
    pub fn pose_at(&self, s: f64) -> ([f64; 2], f64) {
        let s = s.clamp(0.0, self.length());
        // Segment index by binary search over cumulative lengths.
        let i = match self.cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(self.points.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.points.len() - 2),
        };
        let a = self.points[i];
        let b = self.points[i + 1];
        let seg = self.cum[i + 1] - self.cum[i];
        let t = if seg > 0.0 { (s - self.cum[i]) / seg } else { 0.0 };
        let p = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
        (p, (b[1] - a[1]).atan2(b[0] - a[0]))
    }

    /// Closest point on the route: returns (arc length, unsigned distance).
    /// Ties go to the smaller arc length.
    pub fn project(&self, p: [f64; 2]) -> (f64, f64) {
        let mut best_s = 0.0;
        let mut best_d2 = f64::INFINITY;
        for i in 0..self.points.len() - 1 {
            let a = self.points[i];
            let b = self.points[i + 1];
            let abx = b[0] - a[0];
            let aby = b[1] - a[1];
            let len2 = abx * abx + aby * aby;
            let t = if len2 > 0.0 {
                (((p[0] - a[0]) * abx + (p[1] - a[1]) * aby) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let cx = a[0] + t * abx - p[0];
            let cy = a[1] + t * aby - p[1];
            let d2 = cx * cx + cy * cy;
            if d2 < best_d2 {
                best_d2 = d2;
                best_s = self.cum[i] + t * (self.cum[i + 1] - self.cum[i]);
            }
        }
        (best_s, best_d2.sqrt())
    }
}

/// A crosswalk across one arm: the segment pedestrians walk along.
#[derive(Debug, Clone, Copy)]
pub struct Crosswalk {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Crosswalk {
    pub fn length(&self) -> f64 {
        (self.b[0] - self.a[0]).hypot(self.b[1] - self.a[1])
    }

    /// Point at walked distance `d` from end `a`.
    pub fn at(&self, d: f64) -> [f64; 2] {
        let len = self.length();
        let t = (d / len).clamp(0.0, 1.0);
        [self.a[0] + t * (self.b[0] - self.a[0]), self.a[1] + t * (self.b[1] - self.a[1])]
    }

    /// Walking heading from end `a` toward end `b`.
    pub fn heading(&self) -> f64 {
        (self.b[1] - self.a[1]).atan2(self.b[0] - self.a[0])
    }
}

/// Built intersection: routes, crosswalks, and the monitored zone.
#[derive(Debug, Clone)]
pub struct IntersectionMap {
    pub params: MapParams,
    routes: Vec<Route>,
    pub crosswalks: [Crosswalk; 4],
}

/// Outward unit vectors of arms 0..4: E, N, W, S. Exact integer components so
/// rotated geometry stays exact.
const ARM_DIRS: [[f64; 2]; 4] = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];

impl IntersectionMap {
    pub fn build(params: MapParams) -> Self {
        let routes = (0..4)
            .flat_map(|arm| Movement::ALL.iter().map(move |m| build_route(&params, arm, *m)))
            .collect();
        let crosswalks = std::array::from_fn(|arm| {
            let u = ARM_DIRS[arm];
            let r = [u[1], -u[0]];
            let span = params.lane_width + params.crosswalk_overhang;
            let c = [u[0] * params.crosswalk_offset, u[1] * params.crosswalk_offset];
            Crosswalk {
                a: [c[0] - r[0] * span, c[1] - r[1] * span],
                b: [c[0] + r[0] * span, c[1] + r[1] * span],
            }
        });
        IntersectionMap { params, routes, crosswalks }
    }

    pub fn routes(&self) -> &[Route] {
        &self.routes
    }

    pub fn route(&self, id: usize) -> &Route {
        &self.routes[id]
    }

    pub fn route_count(&self) -> usize {
        self.routes.len()
    }

    /// Monitored-zone membership (closed rectangle).
    pub fn in_zone(&self, p: [f64; 2]) -> bool {
        p[0].abs() <= self.params.zone_half && p[1].abs() <= self.params.zone_half
    }
}

/// Builds one route in the canonical frame (entering from the west, traveling
/// +x) and rotates it onto the entry arm.
fn build_route(params: &MapParams, entry_arm: usize, movement: Movement) -> Route {
    let hl = 0.5 * params.lane_width;
    let len = params.arm_length;
    let mut pts: Vec<[f64; 2]> = Vec::new();

    let arc = |center: [f64; 2], radius: f64, from: f64, to: f64, pts: &mut Vec<[f64; 2]>| {
        let steps = 24;
        for k in 0..=steps {
            let th = from + (to - from) * k as f64 / steps as f64;
            pts.push([center[0] + radius * th.cos(), center[1] + radius * th.sin()]);
        }
    };

    // Turn radii sized for the bicycle limits: the tightest drivable arc is
    // wheelbase / tan(delta_max) ~ 3.65 m, and holding an arc of radius r at
    // speed v takes yaw rate v / r. At the coded turn speeds (half to 0.7 of
    // the limit) these radii keep the needed yaw rate near 0.7 rad/s, well
    // under the 1.0 rad/s cap, so a tracking controller retains correction
    // authority mid-turn instead of saturating.
    const RIGHT_TURN_RADIUS: f64 = 6.0;
    const LEFT_TURN_RADIUS: f64 = 9.0;

    match movement {
        Movement::Through => {
            pts.push([-len, -hl]);
            pts.push([len, -hl]);
        }
        Movement::Right => {
            let r = RIGHT_TURN_RADIUS;
            pts.push([-len, -hl]);
            arc([-(hl + r), -(hl + r)], r, std::f64::consts::FRAC_PI_2, 0.0, &mut pts);
            pts.push([-hl, -len]);
        }
        Movement::Left => {
            let r = LEFT_TURN_RADIUS;
            pts.push([-len, -hl]);
            arc([hl - r, r - hl], r, -std::f64::consts::FRAC_PI_2, 0.0, &mut pts);
            pts.push([hl, len]);
        }
    }

    // Rotate the canonical +x travel direction onto this arm's inbound
    // direction; the rotation components are exact (0 or +-1).
    let u = ARM_DIRS[entry_arm];
    let (c, s) = (-u[0], -u[1]);
    let points: Vec<[f64; 2]> =
        pts.iter().map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]]).collect();

    let mut cum = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    cum.push(0.0);
    for w in points.windows(2) {
        acc += (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        cum.push(acc);
    }

    let mut route = Route {
        entry_arm,
        movement,
        points,
        cum,
        s_zone_enter: 0.0,
        s_zone_exit: 0.0,
    };
    let (enter, exit) = zone_span(&route, params.zone_half);
    route.s_zone_enter = enter;
    route.s_zone_exit = exit;
    route
}

/// First and last arc length of a route inside the zone square, by a fine
/// march (the zone cuts each route in a single interval).
fn zone_span(route: &Route, zone_half: f64) -> (f64, f64) {
    let step = 0.05;
    let mut enter = None;
    let mut exit = 0.0;
    let mut s = 0.0;
    let len = route.length();
    while s <= len {
        let (p, _) = route.pose_at(s);
        if p[0].abs() <= zone_half && p[1].abs() <= zone_half {
            if enter.is_none() {
                enter = Some(s);
            }
            exit = s;
        }
        s += step;
    }
    (enter.expect("route crosses the zone"), exit)
}

/// Pure-pursuit steering toward a route, optionally tracking a laterally
/// shifted image of it. Operates on the rear axle.
pub fn pure_pursuit_steer(
    route: &Route,
    rear: [f64; 2],
    yaw: f64,
    speed: f64,
    lateral_bias: f64,
    wheelbase: f64,
    delta_max: f64,
) -> f64 {
    let (s_here, _) = route.project(rear);
    let lookahead = (1.5 + 0.6 * speed).clamp(2.0, 8.0);
    let (p, h) = route.pose_at(s_here + lookahead);
    // Shift the target left of the local route heading by the bias.
    let tgt = [p[0] - h.sin() * lateral_bias, p[1] + h.cos() * lateral_bias];
    let alpha = normalize_angle((tgt[1] - rear[1]).atan2(tgt[0] - rear[0]) - yaw);
    let ld = (tgt[0] - rear[0]).hypot(tgt[1] - rear[1]).max(1e-6);
    (2.0 * wheelbase * alpha.sin() / ld).atan().clamp(-delta_max, delta_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn map() -> IntersectionMap {
        IntersectionMap::build(MapParams::default())
    }

    #[test]
    fn twelve_routes_cross_the_zone() {
        let m = map();
        assert_eq!(m.route_count(), 12);
        for r in m.routes() {
            assert!(r.length() > 2.0 * (m.params.arm_length - m.params.zone_half));
            assert!(r.s_zone_enter < r.s_zone_exit);
            // Zone crossing points sit on the zone boundary.
            let (p_in, _) = r.pose_at(r.s_zone_enter);
            assert_relative_eq!(
                p_in[0].abs().max(p_in[1].abs()),
                m.params.zone_half,
                epsilon = 0.06
            );
            // Routes end on the arm circle.
            let (end, _) = r.pose_at(r.length());
            assert_relative_eq!(end[0].abs().max(end[1].abs()), m.params.arm_length, epsilon = 1e-9);
        }
    }

    #[test]
    fn through_route_is_straight_in_lane() {
        let m = map();
        // Entry arm 2 (west), through: y = -1.75 all along, heading 0.
        let r = &m.routes()[2 * 3];
        assert_eq!(r.movement, Movement::Through);
        for s in [0.0, 10.0, 40.0, 79.9] {
            let (p, h) = r.pose_at(s);
            assert_relative_eq!(p[1], -1.75, epsilon = 1e-12);
            assert_relative_eq!(h, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn turns_land_in_the_correct_exit_lane() {
        let m = map();
        // West entry, right turn: exits south arm, lane x = -1.75, heading -pi/2.
        let r = &m.routes()[2 * 3 + 2];
        let (p, h) = r.pose_at(r.length());
        assert_relative_eq!(p[0], -1.75, epsilon = 1e-9);
        assert_relative_eq!(p[1], -40.0, epsilon = 1e-9);
        assert_relative_eq!(h, -std::f64::consts::FRAC_PI_2, epsilon = 1e-6);
        // West entry, left turn: exits north arm, lane x = +1.75.
        let r = &m.routes()[2 * 3 + 1];
        let (p, h) = r.pose_at(r.length());
        assert_relative_eq!(p[0], 1.75, epsilon = 1e-9);
        assert_relative_eq!(p[1], 40.0, epsilon = 1e-9);
        assert_relative_eq!(h, std::f64::consts::FRAC_PI_2, epsilon = 1e-6);
    }

    #[test]
    fn projection_recovers_on_route_points() {
        let m = map();
        for r in m.routes() {
            for s in [0.5, 7.3, 20.0, 55.5] {
                let (p, _) = r.pose_at(s);
                let (s_back, d) = r.project(p);
                assert!(d <= 1e-9, "distance {d}");
                assert!((s_back - s).abs() <= 0.02, "s {s} back {s_back}");
            }
        }
    }

    #[test]
    fn projection_measures_lateral_offset() {
        let m = map();
        let r = &m.routes()[2 * 3]; // west through, y = -1.75
        let (_, d) = r.project([0.0, -1.75 + 0.8]);
        assert_relative_eq!(d, 0.8, epsilon = 1e-9);
    }

    #[test]
    fn crosswalks_span_their_arm_inside_the_zone() {
        let m = map();
        for (arm, cw) in m.crosswalks.iter().enumerate() {
            assert_relative_eq!(cw.length(), 2.0 * (3.5 + 1.5), epsilon = 1e-9);
            // Center of the crosswalk sits on the arm axis at the offset.
            let mid = cw.at(0.5 * cw.length());
            let u = ARM_DIRS[arm];
            assert_relative_eq!(mid[0], u[0] * 4.7, epsilon = 1e-9);
            assert_relative_eq!(mid[1], u[1] * 4.7, epsilon = 1e-9);
            assert!(m.in_zone(cw.a) && m.in_zone(cw.b));
        }
    }

    #[test]
    fn pure_pursuit_steers_toward_the_lane() {
        let m = map();
        let r = &m.routes()[2 * 3];
        // Ego left of the lane center must steer right (negative delta).
        let d = pure_pursuit_steer(r, [-20.0, -0.5], 0.0, 5.0, 0.0, 2.5, 0.6);
        assert!(d < 0.0);
        // On the centerline, straight.
        let d = pure_pursuit_steer(r, [-20.0, -1.75], 0.0, 5.0, 0.0, 2.5, 0.6);
        assert!(d.abs() < 1e-6);
    }
}
