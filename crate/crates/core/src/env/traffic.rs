//! Scripted background traffic. Vehicles and cyclists follow routes with a
//! simple gap rule (decelerate when something blocks the corridor ahead,
//! hard-stop when very close); pedestrians cross at crosswalks after a seeded
//! delay. Scripted agents always yield to the learning vehicle and to
//! pedestrians; between two crossing scripted drivers the one spawned earlier
//! proceeds. Everything advances with plain kinematics from a snapshot of the
//! scene, so the update is order-independent and deterministic.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::world::ParticipantState;
use crate::world::ParticipantKind;

use super::map::{IntersectionMap, Movement};

/// Corridor ahead within which a driver reacts to blockers, meters.
const GAP_DECEL: f64 = 8.0;
/// Gap below which a driver stops outright, meters.
const GAP_STOP: f64 = 3.0;
/// Half-width of the reaction corridor around the route, meters.
const CORRIDOR: f64 = 1.8;
/// Lateral distance under which a blocker counts as in-lane regardless of
/// priority (followers always yield to their leader).
const IN_LANE: f64 = 1.0;
/// Longitudinal acceleration and braking limits for scripted drivers, m/s^2.
const ACCEL: f64 = 2.0;
const BRAKE: f64 = 4.5;

#[derive(Debug, Clone)]
pub enum Behavior {
    /// Route follower (vehicle or cyclist): arc-length position and speeds.
    Cruise { route: usize, s: f64, speed: f64, desired: f64 },
    /// Crosswalk pedestrian: distance walked from the chosen end, sign picks
    /// the end, and a hold-still delay in steps before starting.
    Cross { walk: usize, from_a: bool, walked: f64, speed: f64, delay_steps: u32 },
}

#[derive(Debug, Clone)]
pub struct Scripted {
    pub id: u32,
    pub kind: ParticipantKind,
    pub behavior: Behavior,
}

impl Scripted {
    /// Current kinematic state. Scripted agents move along their path, so the
    /// lateral body velocity is zero by construction.
    pub fn state(&self, map: &IntersectionMap) -> ParticipantState {
        match &self.behavior {
            Behavior::Cruise { route, s, speed, .. } => {
                let (p, h) = map.route(*route).pose_at(*s);
                ParticipantState::from_body_velocity(self.kind, p[0], p[1], h, *speed, 0.0)
            }
            Behavior::Cross { walk, from_a, walked, speed, delay_steps } => {
                let cw = &map.crosswalks[*walk];
                let len = cw.length();
                let (p, h) = if *from_a {
                    (cw.at(*walked), cw.heading())
                } else {
                    (cw.at(len - *walked), crate::world::normalize_angle(cw.heading() + std::f64::consts::PI))
                };
                let v = if *delay_steps > 0 { 0.0 } else { *speed };
                ParticipantState::from_body_velocity(self.kind, p[0], p[1], h, v, 0.0)
            }
        }
    }

    /// True once the agent has finished its path and should be removed.
    pub fn finished(&self, map: &IntersectionMap) -> bool {
        match &self.behavior {
            Behavior::Cruise { route, s, .. } => *s >= map.route(*route).length() - 1e-9,
            Behavior::Cross { walk, walked, .. } => *walked >= map.crosswalks[*walk].length() - 1e-9,
        }
    }

    /// Advances one step of `dt` seconds against a snapshot of every other
    /// participant (the learning vehicle is `snapshot[0]`).
    pub fn advance(&mut self, map: &IntersectionMap, snapshot: &[(u32, ParticipantState)], dt: f64) {
        match &mut self.behavior {
            Behavior::Cross { walked, speed, delay_steps, .. } => {
                if *delay_steps > 0 {
                    *delay_steps -= 1;
                } else {
                    *walked += *speed * dt;
                }
            }
            Behavior::Cruise { route, s, speed, desired } => {
                let r = map.route(*route);
                let ramp = |gap: f64| {
                    (*desired * (gap - GAP_STOP) / (GAP_DECEL - GAP_STOP)).max(0.0)
                };
                let mut target = *desired;
                let mut hard_stop = false;
                for (oid, other) in snapshot {
                    if *oid == self.id {
                        continue;
                    }
                    // Current position: anything nearly touching forces an
                    // immediate stop; an in-corridor leader is followed when
                    // it has priority or sits squarely in this lane.
                    let (s_o, lat) = r.project([other.x, other.y]);
                    let gap = s_o - *s;
                    if lat <= CORRIDOR && gap > 0.3 && gap <= GAP_DECEL {
                        if gap < GAP_STOP {
                            hard_stop = true;
                        } else if *oid == 0
                            || other.kind == ParticipantKind::Pedestrian
                            || *oid < self.id
                            || lat <= IN_LANE
                        {
                            target = target.min(ramp(gap));
                        }
                    }
                    // Predicted position: yield before a priority holder on a
                    // crossing path reaches the corridor. Constant-velocity
                    // extrapolation is enough at intersection speeds.
                    let has_priority = *oid == 0
                        || other.kind == ParticipantKind::Pedestrian
                        || *oid < self.id;
                    if has_priority {
                        let v = other.world_velocity();
                        for k in 1..=4 {
                            let tau = 0.5 * k as f64;
                            let q = [other.x + v[0] * tau, other.y + v[1] * tau];
                            let (s_q, lat_q) = r.project(q);
                            let gap_q = s_q - *s;
                            if lat_q <= CORRIDOR && gap_q > 0.3 && gap_q <= GAP_DECEL {
                                target = target.min(ramp(gap_q));
                                break;
                            }
                        }
                    }
                }
                if hard_stop {
                    *speed = 0.0;
                } else if target < *speed {
                    *speed = (*speed - BRAKE * dt).max(target);
                } else {
                    *speed = (*speed + ACCEL * dt).min(target);
                }
                *s += *speed * dt;
            }
        }
    }
}

/// Spawn targets per traffic density class: number of objects initially
/// inside the monitored zone.
fn inside_target(rng: &mut ChaCha12Rng, density: super::DensitySpec) -> usize {
    match density {
        super::DensitySpec::Empty => 0,
        super::DensitySpec::Low => rng.random_range(0..=2),
        super::DensitySpec::Middle => rng.random_range(3..=6),
        super::DensitySpec::High => rng.random_range(7..=9),
    }
}

/// Spawns the initial scripted population for a scene. Objects are placed
/// inside the zone to hit the density target, plus a few approaching from the
/// arms; placements keep a minimum separation from each other and the ego.
pub fn spawn_scene(
    map: &IntersectionMap,
    rng: &mut ChaCha12Rng,
    density: super::DensitySpec,
    ego_pos: [f64; 2],
) -> Vec<Scripted> {
    let mut out: Vec<Scripted> = Vec::new();
    let mut placed: Vec<[f64; 2]> = vec![ego_pos];
    let mut next_id: u32 = 1;

    let n_inside = inside_target(rng, density);
    let n_outside = if matches!(density, super::DensitySpec::Empty) {
        0
    } else {
        rng.random_range(1..=3)
    };

    let place = |rng: &mut ChaCha12Rng,
                     out: &mut Vec<Scripted>,
                     placed: &mut Vec<[f64; 2]>,
                     next_id: &mut u32,
                     inside: bool| {
        for _ in 0..200 {
            let roll: f64 = rng.random();
            let candidate = if inside && roll < 0.4 {
                // Pedestrian mid-crossing.
                let walk = rng.random_range(0..4usize);
                let from_a = rng.random::<bool>();
                let len = map.crosswalks[walk].length();
                let walked = len * rng.random_range(0.15..0.85);
                let speed = rng.random_range(0.8..1.6);
                Scripted {
                    id: *next_id,
                    kind: ParticipantKind::Pedestrian,
                    behavior: Behavior::Cross { walk, from_a, walked, speed, delay_steps: 0 },
                }
            } else {
                let kind = if roll < 0.8 { ParticipantKind::Vehicle } else { ParticipantKind::Cyclist };
                let route = rng.random_range(0..map.route_count());
                let r = map.route(route);
                let desired = match kind {
                    ParticipantKind::Cyclist => rng.random_range(3.0..6.0),
                    _ => rng.random_range(4.0..1.2 * map.params.speed_limit),
                };
                let s = if inside {
                    rng.random_range(r.s_zone_enter..r.s_zone_exit)
                } else {
                    let hi = r.s_zone_enter - 8.0;
                    rng.random_range((hi - 17.0).max(0.0)..hi)
                };
                let speed = desired * rng.random_range(0.3..0.8);
                Scripted { id: *next_id, kind, behavior: Behavior::Cruise { route, s, speed, desired } }
            };
            let st = candidate.state(map);
            let min_sep = if candidate.kind == ParticipantKind::Pedestrian { 1.2 } else { 2.2 };
            let clear = placed
                .iter()
                .all(|p| (p[0] - st.x).hypot(p[1] - st.y) >= min_sep);
            if clear {
                placed.push([st.x, st.y]);
                out.push(candidate);
                *next_id += 1;
                return true;
            }
        }
        false
    };

    for _ in 0..n_inside {
        let ok = place(rng, &mut out, &mut placed, &mut next_id, true);
        debug_assert!(ok, "failed to place an in-zone participant");
    }
    for _ in 0..n_outside {
        place(rng, &mut out, &mut placed, &mut next_id, false);
    }

    // Waiting pedestrians at one or two crosswalk ends, outside density
    // counting until they step into the zone.
    if !matches!(density, super::DensitySpec::Empty) {
        let extra = rng.random_range(0..=2usize);
        for _ in 0..extra {
            let walk = rng.random_range(0..4usize);
            let from_a = rng.random::<bool>();
            let speed = rng.random_range(0.8..1.6);
            let delay_steps = rng.random_range(0..=30u32);
            out.push(Scripted {
                id: next_id,
                kind: ParticipantKind::Pedestrian,
                behavior: Behavior::Cross { walk, from_a, walked: 0.0, speed, delay_steps },
            });
            next_id += 1;
        }
    }

    out
}

/// Longitudinal gap from arc length `s` on `route` to the nearest blocker
/// ahead within the corridor, if any. Used by route-following policies.
pub fn corridor_gap(
    map: &IntersectionMap,
    route: usize,
    s: f64,
    others: &[ParticipantState],
) -> Option<f64> {
    let r = map.route(route);
    let mut best: Option<f64> = None;
    for o in others {
        let (s_o, lat) = r.project([o.x, o.y]);
        let gap = s_o - s;
        if lat <= CORRIDOR && gap > 0.3 && gap <= 2.0 * GAP_DECEL {
            best = Some(best.map_or(gap, |b: f64| b.min(gap)));
        }
    }
    best
}

/// A driver on a left or right turn briefly leaves its entry lane; exposed so
/// policies can slow down in turns. The turn factors keep the yaw rate needed
/// to hold each turn arc (coded speed over turn radius) near 0.7 rad/s, with
/// margin below the 1.0 rad/s action cap for corrections.
pub fn movement_speed_factor(m: Movement) -> f64 {
    match m {
        Movement::Through => 1.0,
        Movement::Left => 0.7,
        Movement::Right => 0.5,
    }
}
