//! The navigation MDP: robot-centric observations, dynamic warning zones,
//! the multi-term reward, discrete actions and episode termination.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{angle_diff, Vec2};
use crate::orca::OrcaCrowd;
use crate::sim::{self, AgentBody, WorldState};

pub const ROBOT_OBS_DIM: usize = 5;
pub const HUMAN_OBS_DIM: usize = 7;

/// Below this speed a human's warning zone is a full disc.
pub const STATIONARY_SPEED: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotObservation {
    pub d_g: f64,
    pub v_r: Vec2,
    pub r_r: f64,
    pub v_max: f64,
}

impl RobotObservation {
    pub fn to_array(&self) -> [f64; ROBOT_OBS_DIM] {
        [self.d_g, self.v_r.x, self.v_r.y, self.r_r, self.v_max]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanObservation {
    pub p: Vec2,
    pub v: Vec2,
    pub r: f64,
    pub d_i: f64,
    pub r_sum: f64,
    /// Index of the human in the world; not part of the network input.
    pub index: usize,
}

impl HumanObservation {
    pub fn to_array(&self) -> [f64; HUMAN_OBS_DIM] {
        [
            self.p.x, self.p.y, self.v.x, self.v.y, self.r, self.d_i, self.r_sum,
        ]
    }

    /// Gap between the two bodies' surfaces.
    pub fn surface_distance(&self) -> f64 {
        self.d_i - self.r_sum
    }
}

/// World pose of the robot-centric frame: origin at the robot, +x toward
/// the goal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotFrame {
    pub origin: Vec2,
    pub angle: f64,
}

impl RobotFrame {
    pub fn point_to_local(&self, p: Vec2) -> Vec2 {
        (p - self.origin).rotate(-self.angle)
    }

    pub fn vector_to_local(&self, v: Vec2) -> Vec2 {
        v.rotate(-self.angle)
    }

    pub fn vector_to_world(&self, v: Vec2) -> Vec2 {
        v.rotate(self.angle)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub robot: RobotObservation,
    /// Sorted by ascending `d_i`, ties by world index.
    pub humans: Vec<HumanObservation>,
    pub frame: RobotFrame,
}

impl JointState {
    pub fn robot_features(&self) -> [f64; ROBOT_OBS_DIM] {
        self.robot.to_array()
    }

    pub fn human_features(&self) -> Vec<[f64; HUMAN_OBS_DIM]> {
        self.humans.iter().map(HumanObservation::to_array).collect()
    }
}

/// Robot-centric joint state with respect to `goal`. A robot sitting on its
/// goal keeps the world orientation.
pub fn joint_state_toward(world: &WorldState, goal: Vec2) -> JointState {
    let robot = &world.robot;
    let to_goal = goal - robot.position;
    let frame = RobotFrame {
        origin: robot.position,
        angle: to_goal.angle(),
    };
    let mut humans: Vec<HumanObservation> = world
        .humans
        .iter()
        .enumerate()
        .map(|(index, h)| HumanObservation {
            p: frame.point_to_local(h.position),
            v: frame.vector_to_local(h.velocity),
            r: h.radius,
            d_i: h.position.distance(robot.position),
            r_sum: h.radius + robot.radius,
            index,
        })
        .collect();
    humans.sort_by(|a, b| a.d_i.total_cmp(&b.d_i).then(a.index.cmp(&b.index)));
    JointState {
        robot: RobotObservation {
            d_g: to_goal.length(),
            v_r: frame.vector_to_local(robot.velocity),
            r_r: robot.radius,
            v_max: robot.v_pref,
        },
        humans,
        frame,
    }
}

/// Translates to the robot and rotates so +x points at the goal.
pub fn transform_to_robot_frame(world: &WorldState) -> Result<JointState> {
    if world.robot.distance_to_goal() < 1e-9 {
        return Err(Error::DegenerateGoal);
    }
    Ok(joint_state_toward(world, world.robot.goal))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub wz_scale: f64,
    pub wz_offset: f64,
    /// Replace `wz_offset` by 1 so the zone term is zero on the boundary
    /// and negative inside.
    pub wz_shifted: bool,
    pub route_scale: f64,
    pub disc_scale: f64,
    pub disc_margin: f64,
    pub goal_reward: f64,
    pub collision_reward: f64,
    pub timeout_reward: f64,
    pub k_s: f64,
    pub stationary_pad: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            wz_scale: 0.2,
            wz_offset: 0.3,
            wz_shifted: false,
            route_scale: 0.01,
            disc_scale: 0.25,
            disc_margin: 0.3,
            goal_reward: 10.0,
            collision_reward: -0.25,
            timeout_reward: -10.0,
            k_s: 1.0,
            stationary_pad: 0.2,
        }
    }
}

/// Circular sector around a human; a disc when `half_angle == pi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarningZone {
    pub center: Vec2,
    pub radius: f64,
    pub heading: f64,
    pub half_angle: f64,
}

impl WarningZone {
    /// Whether `point` (world frame) violates the zone of a human of radius
    /// `human_radius`: closer than `radius + human_radius` and inside the
    /// sector.
    pub fn is_violated_by(&self, point: Vec2, human_radius: f64) -> bool {
        let offset = point - self.center;
        if offset.length() >= self.radius + human_radius {
            return false;
        }
        self.half_angle >= PI || angle_diff(offset.angle(), self.heading).abs() <= self.half_angle
    }
}

/// Speed-dependent zone: a forward half-disc of radius `r + k_s |v|` for
/// moving humans, a disc of radius `r + stationary_pad` otherwise.
pub fn warning_zone(cfg: &RewardConfig, human: &AgentBody) -> WarningZone {
    let speed = human.velocity.length();
    if speed >= STATIONARY_SPEED {
        WarningZone {
            center: human.position,
            radius: human.radius + cfg.k_s * speed,
            heading: human.velocity.angle(),
            half_angle: PI / 2.0,
        }
    } else {
        WarningZone {
            center: human.position,
            radius: human.radius + cfg.stationary_pad,
            heading: 0.0,
            half_angle: PI,
        }
    }
}

pub fn warning_zones(cfg: &RewardConfig, world: &WorldState) -> Vec<WarningZone> {
    world.humans.iter().map(|h| warning_zone(cfg, h)).collect()
}

pub fn reward_route(cfg: &RewardConfig, d_g_now: f64, d_g_prev: f64) -> f64 {
    cfg.route_scale * (d_g_prev - d_g_now)
}

/// Exponential zone penalty for the deepest violation, else the route term.
/// `zones` is indexed by world human index.
pub fn reward_warning_zone(
    cfg: &RewardConfig,
    joint: &JointState,
    zones: &[WarningZone],
    d_g_prev: f64,
) -> f64 {
    let robot_pos = joint.frame.origin;
    let worst = joint
        .humans
        .iter()
        .filter(|h| zones[h.index].is_violated_by(robot_pos, h.r))
        .map(|h| h.d_i - zones[h.index].radius - h.r)
        .min_by(f64::total_cmp);
    match worst {
        Some(k) => {
            let offset = if cfg.wz_shifted { 1.0 } else { cfg.wz_offset };
            cfg.wz_scale * (k.exp() - offset)
        }
        None => reward_route(cfg, joint.robot.d_g, d_g_prev),
    }
}

/// Linear penalty when the nearest surface gap drops below `disc_margin`.
pub fn reward_discomfort(cfg: &RewardConfig, joint: &JointState) -> f64 {
    let d_s = joint
        .humans
        .iter()
        .map(HumanObservation::surface_distance)
        .min_by(f64::total_cmp);
    match d_s {
        Some(d) if d < cfg.disc_margin => cfg.disc_scale * (d - cfg.disc_margin),
        _ => 0.0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Event {
    None,
    Goal,
    Collision,
    Timeout,
}

impl Event {
    pub fn is_terminal(self) -> bool {
        self != Event::None
    }
}

/// Terminal status of an episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Collision,
    Timeout,
}

impl Outcome {
    pub fn from_event(event: Event) -> Option<Outcome> {
        match event {
            Event::Goal => Some(Outcome::Success),
            Event::Collision => Some(Outcome::Collision),
            Event::Timeout => Some(Outcome::Timeout),
            Event::None => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::Collision => "collision",
            Outcome::Timeout => "timeout",
        }
    }
}

/// `(nav, time)` terms.
pub fn reward_nav_time(cfg: &RewardConfig, event: Event) -> (f64, f64) {
    match event {
        Event::Goal => (cfg.goal_reward, 0.0),
        Event::Collision => (cfg.collision_reward, 0.0),
        Event::Timeout => (0.0, cfg.timeout_reward),
        Event::None => (0.0, 0.0),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub wz: f64,
    /// Reported for logging; only enters `total` through `wz`.
    pub route: f64,
    pub disc: f64,
    pub nav: f64,
    pub time: f64,
    pub total: f64,
}

pub fn reward_breakdown(
    cfg: &RewardConfig,
    joint: &JointState,
    zones: &[WarningZone],
    d_g_prev: f64,
    event: Event,
) -> RewardBreakdown {
    let wz = reward_warning_zone(cfg, joint, zones, d_g_prev);
    let route = reward_route(cfg, joint.robot.d_g, d_g_prev);
    let disc = reward_discomfort(cfg, joint);
    let (nav, time) = reward_nav_time(cfg, event);
    RewardBreakdown {
        wz,
        route,
        disc,
        nav,
        time,
        total: wz + nav + disc + time,
    }
}

/// Outcome of a step, with precedence collision > goal > timeout.
pub fn classify_event(prev: &WorldState, next: &WorldState) -> Event {
    if sim::detect_collision_swept(prev, next).is_some() {
        Event::Collision
    } else if sim::goal_reached(next) {
        Event::Goal
    } else if next.time >= next.episode_limit - 1e-9 {
        Event::Timeout
    } else {
        Event::None
    }
}

/// A discrete action: its index and the world-frame velocity executed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub index: usize,
    pub velocity: Vec2,
}

pub const N_SPEEDS: usize = 5;
pub const N_HEADINGS: usize = 16;
pub const N_ACTIONS: usize = 1 + N_SPEEDS * N_HEADINGS;

/// Stop action followed by five exponentially spaced speeds times sixteen
/// headings, expressed in the robot-centric frame (heading 0 = toward goal).
#[derive(Clone, Debug, PartialEq)]
pub struct ActionSpace {
    pub v_max: f64,
    velocities: Vec<Vec2>,
}

impl ActionSpace {
    pub fn new(v_max: f64) -> Self {
        assert!(v_max > 0.0, "v_max must be positive");
        let e = std::f64::consts::E;
        let mut velocities = Vec::with_capacity(N_ACTIONS);
        velocities.push(Vec2::ZERO);
        for i in 1..=N_SPEEDS {
            let speed = v_max * ((i as f64 / N_SPEEDS as f64).exp() - 1.0) / (e - 1.0);
            for k in 0..N_HEADINGS {
                velocities.push(Vec2::from_polar(speed, k as f64 * TAU / N_HEADINGS as f64));
            }
        }
        ActionSpace { v_max, velocities }
    }

    pub fn len(&self) -> usize {
        self.velocities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocities.is_empty()
    }

    pub fn local_velocity(&self, index: usize) -> Vec2 {
        self.velocities[index]
    }

    /// The action with its velocity de-rotated into the world frame.
    pub fn world_action(&self, index: usize, frame: &RobotFrame) -> Action {
        let mut velocity = frame.vector_to_world(self.velocities[index]);
        let speed = velocity.length();
        if speed > self.v_max {
            velocity = velocity * (self.v_max / speed);
        }
        Action { index, velocity }
    }

    /// Index of the action nearest to a world-frame velocity.
    pub fn nearest_index(&self, frame: &RobotFrame, world_velocity: Vec2) -> usize {
        let local = frame.vector_to_local(world_velocity);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, v) in self.velocities.iter().enumerate() {
            let d = (*v - local).length_squared();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }
}

/// The actions in the robot-centric frame.
pub fn action_space(v_max: f64) -> Vec<Action> {
    let space = ActionSpace::new(v_max);
    (0..space.len())
        .map(|index| Action {
            index,
            velocity: space.local_velocity(index),
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub world: WorldState,
    pub joint: JointState,
    pub reward: RewardBreakdown,
    pub event: Event,
}

/// The environment: reward constants plus the pedestrian motion model.
#[derive(Clone, Debug, Default)]
pub struct Environment {
    pub reward: RewardConfig,
    pub crowd: OrcaCrowd,
}

impl Environment {
    pub fn new(reward: RewardConfig, crowd: OrcaCrowd) -> Self {
        Environment { reward, crowd }
    }

    /// Reward, event and observation of the move `prev -> next`, evaluated
    /// on the post-step configuration.
    pub fn evaluate_transition(
        &self,
        prev: &WorldState,
        next: &WorldState,
    ) -> (JointState, RewardBreakdown, Event) {
        let event = classify_event(prev, next);
        let joint = joint_state_toward(next, next.robot.goal);
        let zones = warning_zones(&self.reward, next);
        let d_g_prev = prev.robot.position.distance(next.robot.goal);
        let reward = reward_breakdown(&self.reward, &joint, &zones, d_g_prev, event);
        (joint, reward, event)
    }

    pub fn step(&self, world: &WorldState, action: &Action) -> StepResult {
        let next = sim::step_world(world, action.velocity, &self.crowd);
        let (joint, reward, event) = self.evaluate_transition(world, &next);
        StepResult {
            world: next,
            joint,
            reward,
            event,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotRecord {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub gx: f64,
    pub gy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanRecord {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub r: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub wz: f64,
    pub route: f64,
    pub disc: f64,
    pub nav: f64,
    pub time: f64,
    pub total: f64,
}

impl From<RewardBreakdown> for RewardRecord {
    fn from(r: RewardBreakdown) -> Self {
        RewardRecord {
            wz: r.wz,
            route: r.route,
            disc: r.disc,
            nav: r.nav,
            time: r.time,
            total: r.total,
        }
    }
}

/// One line of a trajectory log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub robot: RobotRecord,
    pub humans: Vec<HumanRecord>,
    /// Discrete action executed to reach this state; `None` for the
    /// initial state and for continuous controllers.
    pub action_index: Option<usize>,
    pub reward: RewardRecord,
    pub event: Event,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episode: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
}

impl StepRecord {
    pub fn new(
        world: &WorldState,
        action_index: Option<usize>,
        reward: RewardBreakdown,
        event: Event,
    ) -> Self {
        let r = &world.robot;
        StepRecord {
            t: world.time,
            robot: RobotRecord {
                x: r.position.x,
                y: r.position.y,
                vx: r.velocity.x,
                vy: r.velocity.y,
                gx: r.goal.x,
                gy: r.goal.y,
            },
            humans: world
                .humans
                .iter()
                .map(|h| HumanRecord {
                    x: h.position.x,
                    y: h.position.y,
                    vx: h.velocity.x,
                    vy: h.velocity.y,
                    r: h.radius,
                })
                .collect(),
            action_index,
            reward: reward.into(),
            event,
            episode: None,
            config_digest: None,
        }
    }

    /// Record of an episode's initial state.
    pub fn initial(world: &WorldState) -> Self {
        StepRecord::new(world, None, RewardBreakdown::default(), Event::None)
    }
}
