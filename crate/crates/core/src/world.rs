//! Ground-truth world model as seen by the intersection's infrastructure
//! sensor: tracked participants, the ego-centric surround partition, relative
//! kinematics, time-to-collision, and the structured observation.
//!
//! Conventions: world frame is the sensor frame (origin at the intersection
//! center, x east, y north, angles CCW from +x in radians). Body frame of a
//! participant is x forward along its heading, y to its left. Headings are kept
//! in `(-pi, pi]`.

use thiserror::Error;

/// Fixed far range of the virtual stand-in object for an empty surround area.
pub const SENTINEL_RANGE: f64 = 100.0;

/// Receding-traffic time-to-collision constant, in seconds.
pub const RECEDING_TTC: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("participants overlap: relative distance is zero")]
    OverlappingObjects,
    #[error("the back area is tracked but never queried for nearest objects")]
    BackAreaQuery,
    #[error("speed {speed} inconsistent with body velocity ({v_lon}, {v_lat})")]
    InconsistentSpeed { speed: f64, v_lon: f64, v_lat: f64 },
    #[error("non-finite value in participant state")]
    NonFinite,
}

/// Normalizes an angle to `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = a % two_pi;
    if r <= -std::f64::consts::PI {
        r += two_pi;
    } else if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// Kind of tracked traffic participant. The one-hot index order is fixed by
/// the observation encoding and the log format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParticipantKind {
    Pedestrian,
    Vehicle,
    Cyclist,
}

impl ParticipantKind {
    pub const ALL: [ParticipantKind; 3] =
        [ParticipantKind::Pedestrian, ParticipantKind::Vehicle, ParticipantKind::Cyclist];

    pub fn one_hot_index(self) -> usize {
        match self {
            ParticipantKind::Pedestrian => 0,
            ParticipantKind::Vehicle => 1,
            ParticipantKind::Cyclist => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ParticipantKind::Pedestrian => "pedestrian",
            ParticipantKind::Vehicle => "vehicle",
            ParticipantKind::Cyclist => "cyclist",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "pedestrian" => Some(ParticipantKind::Pedestrian),
            "vehicle" => Some(ParticipantKind::Vehicle),
            "cyclist" => Some(ParticipantKind::Cyclist),
            _ => None,
        }
    }
}

/// Tracked state of one participant in the sensor frame.
///
/// `speed` is the planar speed; `v_lon`/`v_lat` are the body-frame velocity
/// components, so `speed^2 == v_lon^2 + v_lat^2` (enforced on construction to
/// 1e-9 relative).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticipantState {
    pub kind: ParticipantKind,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub v_lon: f64,
    pub v_lat: f64,
}

impl ParticipantState {
    /// Builds a state from body-frame velocity; `speed` is derived, so the
    /// consistency invariant holds by construction.
    pub fn from_body_velocity(
        kind: ParticipantKind,
        x: f64,
        y: f64,
        heading: f64,
        v_lon: f64,
        v_lat: f64,
    ) -> Self {
        ParticipantState {
            kind,
            x,
            y,
            heading: normalize_angle(heading),
            speed: v_lon.hypot(v_lat),
            v_lon,
            v_lat,
        }
    }

    /// Validating constructor for externally sourced states (log records).
    pub fn try_new(
        kind: ParticipantKind,
        x: f64,
        y: f64,
        heading: f64,
        speed: f64,
        v_lon: f64,
        v_lat: f64,
    ) -> Result<Self, WorldError> {
        for v in [x, y, heading, speed, v_lon, v_lat] {
            if !v.is_finite() {
                return Err(WorldError::NonFinite);
            }
        }
        let s2 = speed * speed;
        let b2 = v_lon * v_lon + v_lat * v_lat;
        if (s2 - b2).abs() > 1e-9 * s2.max(1.0) {
            return Err(WorldError::InconsistentSpeed { speed, v_lon, v_lat });
        }
        Ok(ParticipantState { kind, x, y, heading: normalize_angle(heading), speed, v_lon, v_lat })
    }

    /// Velocity in the sensor frame.
    pub fn world_velocity(&self) -> [f64; 2] {
        let c = self.heading.cos();
        let s = self.heading.sin();
        [self.v_lon * c - self.v_lat * s, self.v_lon * s + self.v_lat * c]
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Ego-centric surround partition. Everything behind the ego's front-bumper
/// line is `Back`; the front half-plane splits by lateral offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurroundArea {
    LeftFront,
    MiddleFront,
    RightFront,
    Back,
}

impl SurroundArea {
    /// The three queryable front areas, in observation slot order.
    pub const FRONT: [SurroundArea; 3] =
        [SurroundArea::LeftFront, SurroundArea::MiddleFront, SurroundArea::RightFront];
}

/// Ego footprint constants that define the surround partition.
#[derive(Debug, Clone, Copy)]
pub struct EgoFootprint {
    /// Lateral half-extent; objects within `|lat| <= half_width` ahead are MiddleFront.
    pub half_width: f64,
    /// Longitudinal offset of the front-bumper line from the position point.
    pub front_line: f64,
}

impl Default for EgoFootprint {
    fn default() -> Self {
        // Half vehicle width 0.9 m; front bumper at half the 2.5 m wheelbase.
        EgoFootprint { half_width: 0.9, front_line: 1.25 }
    }
}

/// Offset of `other` in `ego`'s body frame: (longitudinal, lateral).
pub fn body_offset(ego: &ParticipantState, other: &ParticipantState) -> (f64, f64) {
    let dx = other.x - ego.x;
    let dy = other.y - ego.y;
    let c = ego.heading.cos();
    let s = ego.heading.sin();
    (c * dx + s * dy, -s * dx + c * dy)
}

/// Assigns `other` to the ego's surround partition. Total: every pose maps to
/// exactly one area. Boundary ownership: the front-bumper line belongs to the
/// front areas (Back is strict `<`), the lateral extents belong to MiddleFront.
pub fn classify_area(ego: &ParticipantState, other: &ParticipantState, fp: &EgoFootprint) -> SurroundArea {
    let (lon, lat) = body_offset(ego, other);
    if lon < fp.front_line {
        SurroundArea::Back
    } else if lat > fp.half_width {
        SurroundArea::LeftFront
    } else if lat < -fp.half_width {
        SurroundArea::RightFront
    } else {
        SurroundArea::MiddleFront
    }
}

/// Virtual stand-in for an empty area: an object of the ego's own kind at
/// `SENTINEL_RANGE` straight ahead with zero relative velocity, so its
/// time-to-collision saturates downstream.
pub fn sentinel_for(ego: &ParticipantState) -> ParticipantState {
    ParticipantState {
        kind: ego.kind,
        x: ego.x + SENTINEL_RANGE * ego.heading.cos(),
        y: ego.y + SENTINEL_RANGE * ego.heading.sin(),
        heading: ego.heading,
        speed: ego.speed,
        v_lon: ego.v_lon,
        v_lat: ego.v_lat,
    }
}

/// Nearest participant (center-to-center) among `others` classified into
/// `area`. Returns `(state, present)`; an empty area yields the sentinel with
/// `present = false`. Ties go to the smaller index. The back area is tracked
/// for the partition but never queried.
pub fn nearest_in_area(
    ego: &ParticipantState,
    others: &[ParticipantState],
    area: SurroundArea,
    fp: &EgoFootprint,
) -> Result<(ParticipantState, bool), WorldError> {
    if area == SurroundArea::Back {
        return Err(WorldError::BackAreaQuery);
    }
    let mut best: Option<(f64, &ParticipantState)> = None;
    for o in others {
        if classify_area(ego, o, fp) != area {
            continue;
        }
        let d = (o.x - ego.x).hypot(o.y - ego.y);
        if best.map_or(true, |(bd, _)| d < bd) {
            best = Some((d, o));
        }
    }
    match best {
        Some((_, o)) => Ok((*o, true)),
        None => Ok((sentinel_for(ego), false)),
    }
}

/// Relative kinematics of an object pair.
///
/// `approach_angle` is the angle in `[0, pi]` between the displacement from
/// the other object toward the ego and their relative velocity: 0 means moving
/// straight at the ego, `pi` straight away. Zero relative speed carries
/// `approach_angle = 0` by convention so downstream treats it as non-closing
/// (infinite time-to-collision).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeKinematics {
    pub distance: f64,
    pub closing_speed: f64,
    pub approach_angle: f64,
}

/// Relative kinematics from raw positions and world-frame velocities.
pub fn relative_kinematics_parts(
    p_ego: [f64; 2],
    v_ego: [f64; 2],
    p_other: [f64; 2],
    v_other: [f64; 2],
) -> Result<RelativeKinematics, WorldError> {
    let dx = p_other[0] - p_ego[0];
    let dy = p_other[1] - p_ego[1];
    let distance = dx.hypot(dy);
    if distance == 0.0 {
        return Err(WorldError::OverlappingObjects);
    }
    let rvx = v_other[0] - v_ego[0];
    let rvy = v_other[1] - v_ego[1];
    let closing_speed = rvx.hypot(rvy);
    let approach_angle = if closing_speed == 0.0 {
        0.0
    } else {
        // cos(angle) between (p_ego - p_other) and v_rel.
        let c = (-dx * rvx - dy * rvy) / (distance * closing_speed);
        c.clamp(-1.0, 1.0).acos()
    };
    Ok(RelativeKinematics { distance, closing_speed, approach_angle })
}

pub fn relative_kinematics(
    ego: &ParticipantState,
    other: &ParticipantState,
) -> Result<RelativeKinematics, WorldError> {
    relative_kinematics_parts(ego.position(), ego.world_velocity(), other.position(), other.world_velocity())
}

/// Time-to-collision in seconds, with a configurable receding-traffic constant.
///
/// Approaching traffic (`approach_angle < pi/2`): distance over closing rate
/// `closing_speed * cos(approach_angle)`; an exactly zero closing rate yields
/// `+inf` (saturates at the threshold downstream). Receding or perpendicular
/// traffic (`approach_angle >= pi/2`): the fixed constant.
pub fn compute_ttc_with(rel: &RelativeKinematics, receding_ttc: f64) -> f64 {
    if rel.approach_angle < std::f64::consts::FRAC_PI_2 {
        let closing_rate = rel.closing_speed * rel.approach_angle.cos();
        if closing_rate <= 0.0 {
            f64::INFINITY
        } else {
            rel.distance / closing_rate
        }
    } else {
        receding_ttc
    }
}

/// Time-to-collision with the standard 1 s receding constant.
pub fn compute_ttc(rel: &RelativeKinematics) -> f64 {
    compute_ttc_with(rel, RECEDING_TTC)
}

/// One front-area slot of an observation: nearest object (or sentinel) in the
/// ego body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AreaSlot {
    /// Offset of the object in the ego body frame (forward, left).
    pub rel_pos: [f64; 2],
    /// Relative world velocity rotated into the ego body frame.
    pub rel_vel: [f64; 2],
    /// False when the slot holds the sentinel.
    pub present: bool,
}

/// Deterministic ego-centric observation: the ego state plus the nearest
/// object per front area in slot order LeftFront, MiddleFront, RightFront.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub ego: ParticipantState,
    pub areas: [AreaSlot; 3],
}

impl Observation {
    /// Reconstructs the relative kinematics of an area slot. Body-frame
    /// rotation preserves distances and angles, so this agrees with the
    /// world-frame computation used to fill the slot.
    pub fn area_relative_kinematics(&self, slot: usize) -> Result<RelativeKinematics, WorldError> {
        let a = &self.areas[slot];
        relative_kinematics_parts([0.0, 0.0], [0.0, 0.0], a.rel_pos, a.rel_vel)
    }

    /// World position and velocity of an area slot's object.
    pub fn decode_area(&self, slot: usize) -> ([f64; 2], [f64; 2]) {
        let a = &self.areas[slot];
        let c = self.ego.heading.cos();
        let s = self.ego.heading.sin();
        let ev = self.ego.world_velocity();
        (
            [
                self.ego.x + c * a.rel_pos[0] - s * a.rel_pos[1],
                self.ego.y + s * a.rel_pos[0] + c * a.rel_pos[1],
            ],
            [ev[0] + c * a.rel_vel[0] - s * a.rel_vel[1], ev[1] + s * a.rel_vel[0] + c * a.rel_vel[1]],
        )
    }
}

/// Builds the observation for `ego` against all other tracked participants.
pub fn build_observation(
    ego: &ParticipantState,
    others: &[ParticipantState],
    fp: &EgoFootprint,
) -> Observation {
    let c = ego.heading.cos();
    let s = ego.heading.sin();
    let ev = ego.world_velocity();
    let slot = |area| {
        let (o, present) = nearest_in_area(ego, others, area, fp).expect("front area");
        let dx = o.x - ego.x;
        let dy = o.y - ego.y;
        let ov = o.world_velocity();
        let rvx = ov[0] - ev[0];
        let rvy = ov[1] - ev[1];
        AreaSlot {
            rel_pos: [c * dx + s * dy, -s * dx + c * dy],
            rel_vel: [c * rvx + s * rvy, -s * rvx + c * rvy],
            present,
        }
    };
    Observation {
        ego: *ego,
        areas: [
            slot(SurroundArea::LeftFront),
            slot(SurroundArea::MiddleFront),
            slot(SurroundArea::RightFront),
        ],
    }
}
