//! Closed-loop intersection environment.
//!
//! One learning vehicle (track 0) drives a fixed route through a four-arm
//! intersection populated by scripted traffic. Actions are midpoint velocity
//! commands; the environment caps them, translates them to bicycle controls,
//! integrates one 0.1 s step, advances the scripted agents from a pre-step
//! snapshot, and scores the new state.
//!
//! The per-step reward combines three terms:
//! safety, sum over the three front areas of `min(ttc, thre) / thre`;
//! efficiency, `v / v_max` up to the limit and `-(v - v_max) / v_max` above;
//! deviation, `1 - 2 * offset / lane_width` from the route centerline. The
//! weighted total uses weights (1/3, 1, 1), so the maximum is 3 and the
//! normalized reward is `total / 3`.
//!
//! Episodes end on collision, on leaving the intersection area (a fixed
//! margin past the monitored zone along the route), or on timeout. `reset`
//! consumes all randomness; `step` is RNG-free, so trajectories are a pure
//! function of (seed, density, action sequence).

pub mod map;
pub mod traffic;

use thiserror::Error;

use crate::kinematics::{
    action_to_control, control_to_action, integrate_step, ActionVector, BicycleState,
    ControlInput, KinematicsConfig, KinematicsError,
};
use crate::seeding;
use crate::world::{
    build_observation, compute_ttc_with, EgoFootprint, Observation, ParticipantKind,
    ParticipantState, WorldError, RECEDING_TTC,
};
use map::{IntersectionMap, MapParams, Route};
use rand::Rng;
use traffic::Scripted;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("step called on a finished episode")]
    EpisodeOver,
    #[error("action contains a non-finite component")]
    NonFiniteAction,
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    World(#[from] WorldError),
}

/// Requested traffic density for a scene. `Empty` spawns nothing and exists
/// for calibration and tests; the three named classes target the standard
/// in-zone object-count buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DensitySpec {
    Empty,
    Low,
    Middle,
    High,
}

impl DensitySpec {
    pub const CLASSES: [DensitySpec; 3] = [DensitySpec::Low, DensitySpec::Middle, DensitySpec::High];

    /// Cycles Low, Middle, High by episode index; used for mixed-density runs.
    pub fn cycle(index: usize) -> Self {
        Self::CLASSES[index % 3]
    }

    pub fn name(self) -> &'static str {
        match self {
            DensitySpec::Empty => "empty",
            DensitySpec::Low => "low",
            DensitySpec::Middle => "middle",
            DensitySpec::High => "high",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "empty" => Some(DensitySpec::Empty),
            "low" => Some(DensitySpec::Low),
            "middle" => Some(DensitySpec::Middle),
            "high" => Some(DensitySpec::High),
            _ => None,
        }
    }
}

/// Instantaneous density class from the number of objects in the zone:
/// fewer than 3 is Low, 3 to 6 Middle, more than 6 High.
pub fn classify_density(objects_in_zone: usize) -> DensitySpec {
    match objects_in_zone {
        0..=2 => DensitySpec::Low,
        3..=6 => DensitySpec::Middle,
        _ => DensitySpec::High,
    }
}

/// Reward weighting and shaping parameters.
#[derive(Debug, Clone, Copy)]
pub struct RewardConfig {
    pub alpha_safety: f64,
    pub alpha_efficiency: f64,
    pub alpha_deviation: f64,
    /// Time-to-collision saturation threshold, seconds.
    pub ttc_threshold: f64,
    /// TTC assigned to receding objects.
    pub receding_ttc: f64,
    /// Discount factor carried with the reward definition.
    pub gamma: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            alpha_safety: 1.0 / 3.0,
            alpha_efficiency: 1.0,
            alpha_deviation: 1.0,
            ttc_threshold: 4.0,
            receding_ttc: RECEDING_TTC,
            gamma: 0.99,
        }
    }
}

impl RewardConfig {
    /// Maximum attainable weighted total; normalizing by it maps rewards into
    /// (-inf, 1].
    pub fn normalizer(&self) -> f64 {
        3.0 * self.alpha_safety + self.alpha_efficiency + self.alpha_deviation
    }
}

/// Safety term: each front area contributes its saturated TTC fraction, so an
/// empty scene scores 3.
pub fn reward_safety(ttc: [f64; 3], threshold: f64) -> f64 {
    ttc.iter().map(|t| t.min(threshold) / threshold).sum()
}

/// Efficiency term: linear in speed up to the limit, a negative overspeed
/// penalty above it.
pub fn reward_efficiency(speed: f64, v_max: f64) -> f64 {
    if speed <= v_max {
        speed / v_max
    } else {
        -(speed - v_max) / v_max
    }
}

/// Deviation term: 1 on the centerline, 0 at half a lane width, negative
/// beyond.
pub fn reward_deviation(offset: f64, lane_width: f64) -> f64 {
    1.0 - 2.0 * offset / lane_width
}

/// All reward terms for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardTerms {
    pub safety: f64,
    pub efficiency: f64,
    pub deviation: f64,
    /// Weighted sum.
    pub total: f64,
    /// Weighted sum divided by its maximum.
    pub normalized: f64,
}

/// Scores an observation plus the ego's centerline offset. This is the single
/// reward path: the environment, dataset generation, and any replay of logged
/// observations all call it with the same inputs.
pub fn reward_components(
    obs: &Observation,
    lateral_offset: f64,
    lane_width: f64,
    v_max: f64,
    cfg: &RewardConfig,
) -> Result<RewardTerms, WorldError> {
    let mut ttc = [0.0; 3];
    for (slot, t) in ttc.iter_mut().enumerate() {
        let rel = obs.area_relative_kinematics(slot)?;
        *t = compute_ttc_with(&rel, cfg.receding_ttc);
    }
    let safety = reward_safety(ttc, cfg.ttc_threshold);
    let efficiency = reward_efficiency(obs.ego.speed, v_max);
    let deviation = reward_deviation(lateral_offset, lane_width);
    let total = cfg.alpha_safety * safety
        + cfg.alpha_efficiency * efficiency
        + cfg.alpha_deviation * deviation;
    Ok(RewardTerms { safety, efficiency, deviation, total, normalized: total / cfg.normalizer() })
}

#[derive(Debug, Clone, Copy)]
pub struct EnvConfig {
    pub map: MapParams,
    pub kinematics: KinematicsConfig,
    pub footprint: EgoFootprint,
    pub reward: RewardConfig,
    /// Episode step limit (600 steps of 0.1 s is one minute).
    pub max_steps: u32,
    /// How far past the monitored zone the route must be followed before the
    /// episode counts as completed, meters.
    pub exit_margin: f64,
    /// Entry band around the conflict square where the crossing clock starts,
    /// meters. Waiting inside the band counts toward travel time.
    pub travel_margin: f64,
    /// Center-distance collision radii by participant kind, meters.
    pub collision_radius_vehicle: f64,
    pub collision_radius_pedestrian: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            map: MapParams::default(),
            kinematics: KinematicsConfig::default(),
            footprint: EgoFootprint::default(),
            reward: RewardConfig::default(),
            max_steps: 600,
            exit_margin: 10.0,
            travel_margin: 25.0,
            collision_radius_vehicle: 1.5,
            collision_radius_pedestrian: 1.0,
        }
    }
}

impl EnvConfig {
    pub fn collision_radius(&self, kind: ParticipantKind) -> f64 {
        match kind {
            ParticipantKind::Pedestrian => self.collision_radius_pedestrian,
            _ => self.collision_radius_vehicle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationReason {
    /// The ego followed its route a margin past the monitored zone.
    ExitedArea,
    Collision,
    Timeout,
}

impl TerminationReason {
    pub const ALL: [TerminationReason; 3] =
        [TerminationReason::ExitedArea, TerminationReason::Collision, TerminationReason::Timeout];

    pub fn name(self) -> &'static str {
        match self {
            TerminationReason::ExitedArea => "exited",
            TerminationReason::Collision => "collision",
            TerminationReason::Timeout => "timeout",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: Observation,
    pub rewards: RewardTerms,
    /// The action actually applied after capping and forward-only projection.
    pub executed_action: ActionVector,
    /// True when steering was undefined (near-zero rear-axle speed with a
    /// yaw-rate demand) and saturated.
    pub degenerate_steering: bool,
    pub termination: Option<TerminationReason>,
    pub objects_in_zone: usize,
}

/// Environment state. All randomness is consumed at `reset`; stepping is
/// deterministic.
#[derive(Debug, Clone)]
pub struct Env {
    cfg: EnvConfig,
    map: IntersectionMap,
    route: usize,
    ego: BicycleState,
    /// Ego body-frame velocity (longitudinal, lateral) after the last step.
    ego_vel: (f64, f64),
    scripted: Vec<Scripted>,
    t: u32,
    finished: Option<TerminationReason>,
    entered_zone: Option<u32>,
    entered_square: Option<u32>,
    exited_zone: Option<u32>,
    scene_hash: u64,
    density: DensitySpec,
}

impl Env {
    /// Builds a scene from (seed, density) and returns it with the initial
    /// observation. The ego spawns on a uniformly drawn route, partway down
    /// the entry arm, at a moderate initial speed.
    pub fn reset(cfg: EnvConfig, seed: u64, density: DensitySpec) -> (Env, Observation) {
        Self::reset_impl(cfg, seed, density, None)
    }

    /// Like [`Env::reset`] but pins the ego's route. The random draws are
    /// consumed exactly as in `reset`, so only the route differs.
    pub fn reset_on_route(
        cfg: EnvConfig,
        seed: u64,
        density: DensitySpec,
        route: usize,
    ) -> (Env, Observation) {
        Self::reset_impl(cfg, seed, density, Some(route))
    }

    fn reset_impl(
        cfg: EnvConfig,
        seed: u64,
        density: DensitySpec,
        pinned_route: Option<usize>,
    ) -> (Env, Observation) {
        let map = IntersectionMap::build(cfg.map);
        let mut rng = seeding::rng(seed, "scene", 0);
        let drawn = rng.random_range(0..map.route_count());
        let route = pinned_route.unwrap_or(drawn);
        assert!(route < map.route_count(), "route {route} out of range");
        let s0 = rng.random_range(0.25..25.0);
        let v0 = map.params.speed_limit * rng.random_range(0.3..0.9);
        let (pos, heading) = map.route(route).pose_at(s0);
        let ego = BicycleState::from_midpoint(pos[0], pos[1], heading, cfg.kinematics.wheelbase);
        let scripted = traffic::spawn_scene(&map, &mut rng, density, pos);

        let mut env = Env {
            cfg,
            map,
            route,
            ego,
            ego_vel: (v0, 0.0),
            scripted,
            t: 0,
            finished: None,
            entered_zone: None,
            entered_square: None,
            exited_zone: None,
            scene_hash: 0,
            density,
        };
        env.scene_hash = env.compute_scene_hash();
        let mid0 = env.ego.midpoint(cfg.kinematics.wheelbase);
        env.update_zone_tracking(mid0);
        let obs = env.observe();
        (env, obs)
    }

    /// The crossing clock starts on first entering the band around the
    /// conflict square and stops on leaving the square after traversing it.
    fn update_zone_tracking(&mut self, mid: [f64; 2]) {
        let band = self.map.params.zone_half + self.cfg.travel_margin;
        if self.entered_zone.is_none() && mid[0].abs() <= band && mid[1].abs() <= band {
            self.entered_zone = Some(self.t);
        }
        if self.map.in_zone(mid) {
            if self.entered_square.is_none() {
                self.entered_square = Some(self.t);
            }
        } else if self.entered_square.is_some() && self.exited_zone.is_none() {
            self.exited_zone = Some(self.t);
        }
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn map(&self) -> &IntersectionMap {
        &self.map
    }

    pub fn route_id(&self) -> usize {
        self.route
    }

    pub fn route(&self) -> &Route {
        self.map.route(self.route)
    }

    pub fn time_step(&self) -> u32 {
        self.t
    }

    pub fn finished(&self) -> Option<TerminationReason> {
        self.finished
    }

    pub fn requested_density(&self) -> DensitySpec {
        self.density
    }

    /// Content hash of the initial scene; identical (seed, density, config)
    /// resets produce identical hashes, which pairs evaluation episodes.
    pub fn scene_hash(&self) -> u64 {
        self.scene_hash
    }

    /// The ego as a tracked participant (kind Vehicle, midpoint position).
    pub fn ego_participant(&self) -> ParticipantState {
        let l = self.cfg.kinematics.wheelbase;
        let mid = self.ego.midpoint(l);
        ParticipantState::from_body_velocity(
            ParticipantKind::Vehicle,
            mid[0],
            mid[1],
            self.ego.yaw,
            self.ego_vel.0,
            self.ego_vel.1,
        )
    }

    pub fn ego_state(&self) -> BicycleState {
        self.ego
    }

    /// All tracked participants with their track ids; the ego is track 0.
    pub fn participants(&self) -> Vec<(u32, ParticipantState)> {
        let mut out = Vec::with_capacity(self.scripted.len() + 1);
        out.push((0, self.ego_participant()));
        out.extend(self.scripted.iter().map(|sc| (sc.id, sc.state(&self.map))));
        out
    }

    /// Scripted objects currently inside the monitored zone.
    pub fn objects_in_zone(&self) -> usize {
        self.scripted
            .iter()
            .filter(|sc| {
                let st = sc.state(&self.map);
                self.map.in_zone([st.x, st.y])
            })
            .count()
    }

    /// Unsigned distance from the ego midpoint to the route centerline.
    pub fn lateral_offset(&self) -> f64 {
        let mid = self.ego.midpoint(self.cfg.kinematics.wheelbase);
        self.route().project(mid).1
    }

    /// Ego arc-length progress along its route.
    pub fn progress(&self) -> f64 {
        let mid = self.ego.midpoint(self.cfg.kinematics.wheelbase);
        self.route().project(mid).0
    }

    /// Crossing duration in steps: from first entering the approach band
    /// around the conflict square to leaving the square after traversing it.
    /// `None` until the crossing is complete.
    pub fn in_zone_steps(&self) -> Option<u32> {
        match (self.entered_zone, self.exited_zone) {
            (Some(a), Some(b)) => Some(b - a),
            _ => None,
        }
    }

    pub fn observe(&self) -> Observation {
        let ego = self.ego_participant();
        let others: Vec<ParticipantState> =
            self.scripted.iter().map(|sc| sc.state(&self.map)).collect();
        build_observation(&ego, &others, &self.cfg.footprint)
    }

    /// Applies one action for `dt` seconds.
    pub fn step(&mut self, action: ActionVector) -> Result<StepOutcome, EnvError> {
        if self.finished.is_some() {
            return Err(EnvError::EpisodeOver);
        }
        let kin = self.cfg.kinematics;
        if !(action.vx.is_finite() && action.vy.is_finite() && action.yaw_rate.is_finite()) {
            return Err(EnvError::NonFiniteAction);
        }

        // Cap the command, translate to controls, and forbid reversing.
        let mut a = action;
        a.yaw_rate = a.yaw_rate.clamp(-kin.yaw_rate_cap, kin.yaw_rate_cap);
        let norm = a.vx.hypot(a.vy);
        if norm > kin.v_cap {
            let k = kin.v_cap / norm;
            a.vx *= k;
            a.vy *= k;
        }
        let tr = action_to_control(&a, self.ego.yaw, &kin);
        let u = ControlInput { v_r: tr.control.v_r.max(0.0), delta: tr.control.delta };
        let executed = control_to_action(&u, self.ego.yaw, kin.wheelbase);

        // Scripted agents react to the pre-step world; the ego integrates
        // from the same instant, so nobody sees a half-updated scene.
        let snapshot = self.participants();
        self.ego = integrate_step(&self.ego, &u, kin.dt, &kin)?;
        let yaw_rate = u.v_r * u.delta.tan() / kin.wheelbase;
        self.ego_vel = (u.v_r, 0.5 * kin.wheelbase * yaw_rate);
        for sc in &mut self.scripted {
            sc.advance(&self.map, &snapshot, kin.dt);
        }
        let map = &self.map;
        self.scripted.retain(|sc| !sc.finished(map));
        self.t += 1;

        let mid = self.ego.midpoint(kin.wheelbase);
        self.update_zone_tracking(mid);

        let observation = self.observe();
        let rewards = reward_components(
            &observation,
            self.lateral_offset(),
            self.cfg.map.lane_width,
            self.cfg.map.speed_limit,
            &self.cfg.reward,
        )?;
        self.finished = self.check_termination(mid);

        Ok(StepOutcome {
            observation,
            rewards,
            executed_action: executed,
            degenerate_steering: tr.degenerate,
            termination: self.finished,
            objects_in_zone: self.objects_in_zone(),
        })
    }

    fn check_termination(&self, mid: [f64; 2]) -> Option<TerminationReason> {
        for sc in &self.scripted {
            let st = sc.state(&self.map);
            let r = self.cfg.collision_radius(sc.kind);
            if (st.x - mid[0]).hypot(st.y - mid[1]) < r {
                return Some(TerminationReason::Collision);
            }
        }
        let (s, d) = self.route().project(mid);
        if self.exited_zone.is_some()
            && s >= self.route().s_zone_exit + self.cfg.exit_margin
            && d <= self.cfg.map.lane_width
        {
            return Some(TerminationReason::ExitedArea);
        }
        if self.t >= self.cfg.max_steps {
            return Some(TerminationReason::Timeout);
        }
        None
    }

    fn compute_scene_hash(&self) -> u64 {
        let mut bytes = Vec::with_capacity(64 + 40 * self.scripted.len());
        bytes.extend_from_slice(&(self.route as u64).to_le_bytes());
        bytes.extend_from_slice(&self.ego.x_r.to_bits().to_le_bytes());
        bytes.extend_from_slice(&self.ego.y_r.to_bits().to_le_bytes());
        bytes.extend_from_slice(&self.ego.yaw.to_bits().to_le_bytes());
        bytes.extend_from_slice(&self.ego_vel.0.to_bits().to_le_bytes());
        for sc in &self.scripted {
            let st = sc.state(&self.map);
            bytes.extend_from_slice(&sc.id.to_le_bytes());
            bytes.push(st.kind.one_hot_index() as u8);
            for v in [st.x, st.y, st.heading, st.v_lon] {
                bytes.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        seeding::hash_bytes(&bytes)
    }
}
