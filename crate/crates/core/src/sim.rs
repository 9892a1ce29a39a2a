//! Ground-truth 2D world: agent kinematics, scenario generation and
//! collision / goal detection.

use std::f64::consts::TAU;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;

pub const ROBOT_RADIUS: f64 = 0.3;
pub const ROBOT_V_MAX: f64 = 1.0;
pub const DEFAULT_DT: f64 = 0.25;
pub const DEFAULT_EPISODE_LIMIT: f64 = 30.0;

/// Minimum surface gap between any two agents at spawn time.
pub const SPAWN_CLEARANCE: f64 = 0.1;
/// Group members start within this distance of their group anchor.
pub const GROUP_SPREAD: f64 = 1.5;
const MAX_PLACEMENT_SAMPLES: usize = 100_000;
/// Samples per grouped human before its group anchor is redrawn.
const MEMBER_TRIES: usize = 200;

/// A disc-shaped agent: the robot or a pedestrian.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentBody {
    pub position: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
    pub goal: Vec2,
    pub v_pref: f64,
}

impl AgentBody {
    pub fn distance_to_goal(&self) -> f64 {
        self.position.distance(self.goal)
    }

    /// Unit vector toward the goal scaled by `v_pref`, zero at the goal.
    pub fn preferred_velocity(&self) -> Vec2 {
        (self.goal - self.position).normalize_or_zero() * self.v_pref
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub robot: AgentBody,
    pub humans: Vec<AgentBody>,
    /// Group id of each human; group-mates share (and re-sample) one goal.
    pub groups: Vec<usize>,
    pub time: f64,
    pub dt: f64,
    pub episode_limit: f64,
    pub arena_radius: f64,
    goal_rng: ChaCha8Rng,
}

impl WorldState {
    /// A world with the given agents and a fixed goal re-sampling stream.
    pub fn new(robot: AgentBody, humans: Vec<AgentBody>, dt: f64, episode_limit: f64) -> Self {
        let groups = (0..humans.len()).collect();
        WorldState {
            robot,
            humans,
            groups,
            time: 0.0,
            dt,
            episode_limit,
            arena_radius: 4.0,
            goal_rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn with_groups(mut self, groups: Vec<usize>) -> Self {
        assert_eq!(groups.len(), self.humans.len());
        self.groups = groups;
        self
    }

    /// Moves the robot's goal; used by the planner to substitute sub-goals.
    pub fn with_robot_goal(&self, goal: Vec2) -> WorldState {
        let mut w = self.clone();
        w.robot.goal = goal;
        w
    }

    /// Hash over the exact bit patterns of every agent's kinematic state.
    pub fn digest(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.time.to_bits().hash(&mut h);
        for a in std::iter::once(&self.robot).chain(&self.humans) {
            for v in [
                a.position.x,
                a.position.y,
                a.velocity.x,
                a.velocity.y,
                a.goal.x,
                a.goal.y,
            ] {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Empty,
    CircleCrossing,
    Grouped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub n_humans: usize,
    pub n_groups: usize,
    pub radius_range: [f64; 2],
    pub speed_range: [f64; 2],
    pub arena_radius: f64,
    pub seed: u64,
    pub dt: f64,
    pub episode_limit: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            kind: ScenarioKind::Empty,
            n_humans: 0,
            n_groups: 0,
            radius_range: [0.2, 0.6],
            speed_range: [0.5, 1.8],
            arena_radius: 4.0,
            seed: 0,
            dt: DEFAULT_DT,
            episode_limit: DEFAULT_EPISODE_LIMIT,
        }
    }
}

impl ScenarioSpec {
    pub fn empty() -> Self {
        ScenarioSpec::default()
    }

    pub fn grouped(n_humans: usize, n_groups: usize) -> Self {
        ScenarioSpec {
            kind: ScenarioKind::Grouped,
            n_humans,
            n_groups,
            ..Default::default()
        }
    }

    pub fn circle_crossing(n_humans: usize) -> Self {
        ScenarioSpec {
            kind: ScenarioKind::CircleCrossing,
            n_humans,
            ..Default::default()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        ScenarioSpec {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        let [r_lo, r_hi] = self.radius_range;
        if !(0.2..=0.6).contains(&r_lo) || !(0.2..=0.6).contains(&r_hi) || r_lo > r_hi {
            return bad(format!(
                "radius_range {:?} must be an interval inside [0.2, 0.6]",
                self.radius_range
            ));
        }
        let [s_lo, s_hi] = self.speed_range;
        if !(s_lo > 0.0 && s_lo <= s_hi && s_hi.is_finite()) {
            return bad(format!(
                "speed_range {:?} must be a positive interval",
                self.speed_range
            ));
        }
        if self.n_groups > self.n_humans {
            return bad(format!(
                "n_groups {} exceeds n_humans {}",
                self.n_groups, self.n_humans
            ));
        }
        match self.kind {
            ScenarioKind::Empty if self.n_humans > 0 => {
                return bad("the empty scenario has no humans".into());
            }
            ScenarioKind::Grouped if self.n_humans > 0 && self.n_groups == 0 => {
                return bad("grouped scenario needs at least one group".into());
            }
            _ => {}
        }
        if !(self.arena_radius >= 4.0 && self.arena_radius.is_finite()) {
            return bad(format!(
                "arena_radius {} must be at least 4 m",
                self.arena_radius
            ));
        }
        if !(self.dt > 0.0 && self.episode_limit > 0.0) {
            return bad("dt and episode_limit must be positive".into());
        }
        Ok(())
    }
}

fn spaced(pos: Vec2, radius: f64, placed: &[AgentBody]) -> bool {
    placed
        .iter()
        .all(|o| pos.distance(o.position) > radius + o.radius + SPAWN_CLEARANCE)
}

/// Builds the initial world for `spec`. The robot starts at `(0, -R)` with
/// its goal at `(0, R)` on an arena of radius `R`.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<WorldState> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let arena = spec.arena_radius;
    let robot = AgentBody {
        position: Vec2::new(0.0, -arena),
        velocity: Vec2::ZERO,
        radius: ROBOT_RADIUS,
        goal: Vec2::new(0.0, arena),
        v_pref: ROBOT_V_MAX,
    };

    let mut samples = 0usize;
    let mut budget = |what: &str| -> Result<()> {
        samples += 1;
        if samples > MAX_PLACEMENT_SAMPLES {
            Err(Error::ScenarioGeneration(format!(
                "could not place {what} after {MAX_PLACEMENT_SAMPLES} samples"
            )))
        } else {
            Ok(())
        }
    };

    let [r_lo, r_hi] = spec.radius_range;
    let [s_lo, s_hi] = spec.speed_range;
    let mut placed: Vec<AgentBody> = vec![robot];
    let mut groups = Vec::with_capacity(spec.n_humans);

    match spec.kind {
        ScenarioKind::Empty => {}
        ScenarioKind::CircleCrossing => {
            for i in 0..spec.n_humans {
                let radius = rng.gen_range(r_lo..=r_hi);
                let v_pref = rng.gen_range(s_lo..=s_hi);
                loop {
                    budget("a crossing human")?;
                    let angle = rng.gen_range(0.0..TAU);
                    let jitter = Vec2::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
                    let position = Vec2::from_polar(arena, angle) + jitter;
                    if spaced(position, radius, &placed) {
                        placed.push(AgentBody {
                            position,
                            velocity: Vec2::ZERO,
                            radius,
                            goal: -position,
                            v_pref,
                        });
                        groups.push(i);
                        break;
                    }
                }
            }
        }
        ScenarioKind::Grouped => {
            let mut members = vec![0usize; spec.n_groups];
            for i in 0..spec.n_humans {
                members[i % spec.n_groups.max(1)] += 1;
            }
            let keep_out = GROUP_SPREAD + r_hi + ROBOT_RADIUS + SPAWN_CLEARANCE + 0.5;
            for (g, &count) in members.iter().enumerate() {
                // a crowded anchor is abandoned and redrawn together with its members
                'anchor: loop {
                    budget("a group anchor")?;
                    let anchor = Vec2::from_polar(arena, rng.gen_range(0.0..TAU));
                    if anchor.distance(robot.position) <= keep_out {
                        continue;
                    }
                    let goal = -anchor;
                    let mark = placed.len();
                    for _ in 0..count {
                        let radius = rng.gen_range(r_lo..=r_hi);
                        let v_pref = rng.gen_range(s_lo..=s_hi);
                        let mut tries = 0;
                        loop {
                            budget("a grouped human")?;
                            let rho = GROUP_SPREAD * rng.gen::<f64>().sqrt();
                            let position = anchor + Vec2::from_polar(rho, rng.gen_range(0.0..TAU));
                            if spaced(position, radius, &placed) {
                                placed.push(AgentBody {
                                    position,
                                    velocity: Vec2::ZERO,
                                    radius,
                                    goal,
                                    v_pref,
                                });
                                break;
                            }
                            tries += 1;
                            if tries == MEMBER_TRIES {
                                placed.truncate(mark);
                                continue 'anchor;
                            }
                        }
                    }
                    groups.extend(std::iter::repeat(g).take(count));
                    break;
                }
            }
        }
    }

    let humans = placed.split_off(1);
    Ok(WorldState {
        robot,
        humans,
        groups,
        time: 0.0,
        dt: spec.dt,
        episode_limit: spec.episode_limit,
        arena_radius: arena,
        goal_rng: ChaCha8Rng::seed_from_u64(rng.gen()),
    })
}

/// Supplies pedestrian velocities for one simulation step.
pub trait HumanPolicy {
    fn human_velocities(&self, world: &WorldState) -> Vec<Vec2>;
}

impl<F> HumanPolicy for F
where
    F: Fn(&WorldState) -> Vec<Vec2>,
{
    fn human_velocities(&self, world: &WorldState) -> Vec<Vec2> {
        self(world)
    }
}

/// Humans that stand still.
pub struct Stationary;

impl HumanPolicy for Stationary {
    fn human_velocities(&self, world: &WorldState) -> Vec<Vec2> {
        vec![Vec2::ZERO; world.humans.len()]
    }
}

/// Advances every agent by `velocity * dt`. Human velocities come from
/// `human_policy`; groups whose member arrived at the shared goal receive a
/// fresh goal on the arena boundary.
pub fn step_world(
    world: &WorldState,
    robot_velocity: Vec2,
    human_policy: &dyn HumanPolicy,
) -> WorldState {
    debug_assert!(robot_velocity.length() <= world.robot.v_pref + 1e-9);
    let velocities = human_policy.human_velocities(world);
    assert_eq!(
        velocities.len(),
        world.humans.len(),
        "one velocity per human"
    );

    let mut next = world.clone();
    let dt = world.dt;
    next.robot.velocity = robot_velocity;
    next.robot.position += robot_velocity * dt;
    for (h, v) in next.humans.iter_mut().zip(velocities) {
        h.velocity = v;
        h.position += v * dt;
    }
    next.time = world.time + dt;

    if !next.humans.is_empty() {
        let n_groups = next.groups.iter().copied().max().map_or(0, |g| g + 1);
        for g in 0..n_groups {
            let arrived = next
                .humans
                .iter()
                .zip(&next.groups)
                .any(|(h, &hg)| hg == g && h.distance_to_goal() < h.radius);
            if arrived {
                let goal = Vec2::from_polar(next.arena_radius, next.goal_rng.gen_range(0.0..TAU));
                for (h, &hg) in next.humans.iter_mut().zip(&next.groups) {
                    if hg == g {
                        h.goal = goal;
                    }
                }
            }
        }
    }
    next
}

/// First human overlapping the robot (strict inequality), if any.
pub fn detect_collision(world: &WorldState) -> Option<usize> {
    let r = &world.robot;
    world
        .humans
        .iter()
        .position(|h| r.position.distance(h.position) < r.radius + h.radius)
}

/// Collision test over a step: checks the post-step configuration and the
/// midpoint of every agent's straight-line motion.
pub fn detect_collision_swept(prev: &WorldState, next: &WorldState) -> Option<usize> {
    let r0 = prev.robot.position;
    let r1 = next.robot.position;
    let rm = r0.lerp(r1, 0.5);
    let reach = next.robot.radius;
    next.humans.iter().enumerate().position(|(i, h)| {
        let contact = reach + h.radius;
        if r1.distance(h.position) < contact {
            return true;
        }
        match prev.humans.get(i) {
            Some(h0) => rm.distance(h0.position.lerp(h.position, 0.5)) < contact,
            None => false,
        }
    })
}

/// True iff the robot centre is strictly within one robot radius of the goal.
pub fn goal_reached(world: &WorldState) -> bool {
    world.robot.distance_to_goal() < world.robot.radius
}

#[cfg(test)]
mod tests {
    use super::*;

    fn body(p: Vec2, r: f64) -> AgentBody {
        AgentBody {
            position: p,
            velocity: Vec2::ZERO,
            radius: r,
            goal: p,
            v_pref: 1.0,
        }
    }

    fn pair(human_x: f64) -> WorldState {
        let mut robot = body(Vec2::ZERO, 0.3);
        robot.goal = Vec2::new(5.0, 0.0);
        WorldState::new(robot, vec![body(Vec2::new(human_x, 0.0), 0.3)], 0.25, 30.0)
    }

    #[test]
    fn kinematic_update() {
        let mut w = pair(3.0);
        w.humans.clear();
        w.groups.clear();
        let next = step_world(&w, Vec2::new(1.0, 0.0), &Stationary);
        assert_eq!(next.robot.position, Vec2::new(0.25, 0.0));
        assert_eq!(next.time, 0.25);
    }

    #[test]
    fn zero_velocity_fixed_point() {
        let w = pair(3.0);
        let next = step_world(&w, Vec2::ZERO, &Stationary);
        assert_eq!(next.robot.position, w.robot.position);
        assert_eq!(next.humans[0].position, w.humans[0].position);
        assert_eq!(next.time, w.time + w.dt);
    }

    #[test]
    fn collision_boundary_is_strict() {
        assert_eq!(detect_collision(&pair(0.59)), Some(0));
        assert_eq!(detect_collision(&pair(0.61)), None);
        assert_eq!(detect_collision(&pair(0.6)), None);
    }

    #[test]
    fn midpoint_catches_tunnelling() {
        let mut prev = pair(0.0);
        prev.robot.position = Vec2::new(-0.5, 0.0);
        prev.humans[0].position = Vec2::new(0.5, 0.0);
        let mut next = prev.clone();
        next.robot.position = Vec2::new(0.5, 0.0);
        next.humans[0].position = Vec2::new(-0.5, 0.0);
        next.robot.position.y = 0.4;
        next.humans[0].position.y = -0.4;
        assert_eq!(detect_collision(&next), None);
        assert_eq!(detect_collision_swept(&prev, &next), Some(0));
    }

    #[test]
    fn goal_tolerance() {
        let mut w = pair(3.0);
        for (d, expect) in [(0.0, true), (0.29, true), (0.31, false)] {
            w.robot.position = Vec2::new(5.0 - d, 0.0);
            assert_eq!(goal_reached(&w), expect, "d_g = {d}");
        }
    }

    #[test]
    fn empty_scenario_has_long_goal() {
        let w = generate_scenario(&ScenarioSpec::empty()).unwrap();
        assert!(w.humans.is_empty());
        assert!(w.robot.distance_to_goal() >= 8.0);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = ScenarioSpec::grouped(10, 3).with_seed(7);
        assert_eq!(
            generate_scenario(&spec).unwrap(),
            generate_scenario(&spec).unwrap()
        );
    }

    #[test]
    fn grouped_mates_share_goals_and_spawn_apart() {
        for seed in 0..100 {
            let w = generate_scenario(&ScenarioSpec::grouped(10, 3).with_seed(seed)).unwrap();
            assert_eq!(w.humans.len(), 10);
            assert!(w.groups.iter().all(|&g| g < 3));
            for g in 0..3 {
                let mates: Vec<_> = w
                    .humans
                    .iter()
                    .zip(&w.groups)
                    .filter(|(_, &hg)| hg == g)
                    .collect();
                assert!(!mates.is_empty());
                let goal = mates[0].0.goal;
                for (h, _) in &mates {
                    assert_eq!(h.goal, goal);
                    // the anchor is the antipode of the group goal
                    assert!(h.position.distance(-goal) <= GROUP_SPREAD + 1e-12);
                }
            }
            let all: Vec<_> = std::iter::once(&w.robot).chain(&w.humans).collect();
            for i in 0..all.len() {
                for j in i + 1..all.len() {
                    let gap =
                        all[i].position.distance(all[j].position) - all[i].radius - all[j].radius;
                    assert!(
                        gap > SPAWN_CLEARANCE,
                        "seed {seed}: agents {i},{j} gap {gap}"
                    );
                }
            }
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = ScenarioSpec::grouped(2, 3);
        assert!(matches!(
            generate_scenario(&s),
            Err(Error::InvalidScenario(_))
        ));
        s = ScenarioSpec::circle_crossing(3);
        s.radius_range = [0.1, 0.5];
        assert!(generate_scenario(&s).is_err());
    }

    #[test]
    fn impossible_placement_errors() {
        let mut s = ScenarioSpec::grouped(40, 1);
        s.radius_range = [0.6, 0.6];
        assert!(matches!(
            generate_scenario(&s),
            Err(Error::ScenarioGeneration(_))
        ));
    }

    #[test]
    fn arriving_group_resamples_together() {
        let mut a = body(Vec2::new(0.0, 0.0), 0.3);
        a.goal = Vec2::new(0.1, 0.0);
        let mut b = body(Vec2::new(2.0, 0.0), 0.3);
        b.goal = a.goal;
        let robot = body(Vec2::new(0.0, -4.0), 0.3);
        let w = WorldState::new(robot, vec![a, b], 0.25, 30.0).with_groups(vec![0, 0]);
        let next = step_world(&w, Vec2::ZERO, &Stationary);
        assert_ne!(next.humans[0].goal, a.goal);
        assert_eq!(next.humans[0].goal, next.humans[1].goal);
        assert!((next.humans[0].goal.length() - 4.0).abs() < 1e-12);
    }
}
