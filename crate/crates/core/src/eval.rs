//! Evaluation harness: episode rollouts, the six aggregate metrics and path
//! deviation from the straight start-goal segment.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, Outcome, StepRecord};
use crate::error::{Error, Result};
use crate::geom::{point_segment_distance, Vec2};
use crate::net::{discount_factor, NetController, ValuePolicy};
use crate::orca::{orca_policy_with, AgentRef, OrcaParams};
use crate::sim::{generate_scenario, step_world, ScenarioSpec, WorldState};
use crate::train::parallel_map;

/// A robot controller evaluated episode by episode.
pub trait Controller {
    /// Called at the start of every episode.
    fn reset(&mut self);
    /// World-frame velocity to execute and the discrete action index, if any.
    fn act(&mut self, world: &WorldState) -> Result<(Vec2, Option<usize>)>;
}

impl Controller for NetController {
    fn reset(&mut self) {
        NetController::reset(self);
    }

    fn act(&mut self, world: &WorldState) -> Result<(Vec2, Option<usize>)> {
        // greedy selection never consumes randomness that affects the choice
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = NetController::act(self, world, 0.0, &mut rng)?;
        Ok((a.velocity, Some(a.index)))
    }
}

/// The robot runs ORCA against the humans.
#[derive(Clone, Debug, Default)]
pub struct OrcaController {
    pub params: OrcaParams,
}

impl Controller for OrcaController {
    fn reset(&mut self) {}

    fn act(&mut self, world: &WorldState) -> Result<(Vec2, Option<usize>)> {
        Ok((
            orca_policy_with(world, AgentRef::Robot, &self.params, true),
            None,
        ))
    }
}

/// Which controller to run.
#[derive(Clone, Debug)]
pub enum PolicySpec {
    Net(ValuePolicy),
    Orca(OrcaParams),
}

impl PolicySpec {
    pub fn controller(&self) -> Box<dyn Controller> {
        match self {
            PolicySpec::Net(p) => Box::new(NetController::new(p.clone())),
            PolicySpec::Orca(p) => Box::new(OrcaController { params: p.clone() }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub outcome: Outcome,
    pub nav_time: f64,
    pub path_length: f64,
    /// Discounted return.
    pub cumulative_reward: f64,
    pub start: Vec2,
    pub goal: Vec2,
    /// Robot positions including the start.
    pub trajectory: Vec<TrajectoryPoint>,
    /// Full per-step log, starting with the initial state.
    #[serde(skip)]
    pub steps: Vec<StepRecord>,
}

/// Runs one episode from `world` until a terminal event.
pub fn run_episode(
    controller: &mut dyn Controller,
    mut world: WorldState,
    env: &Environment,
    gamma: f64,
    seed: u64,
) -> Result<EpisodeRecord> {
    controller.reset();
    let discount = discount_factor(gamma, world.dt, world.robot.v_pref);
    let start = world.robot.position;
    let goal = world.robot.goal;
    let mut trajectory = vec![TrajectoryPoint {
        t: world.time,
        x: start.x,
        y: start.y,
    }];
    let mut steps = vec![StepRecord::initial(&world)];
    let mut path_length = 0.0;
    let mut ret = 0.0;
    let mut weight = 1.0;
    let outcome = loop {
        let (v, index) = controller.act(&world)?;
        let next = step_world(&world, v, &env.crowd);
        let (_, reward, event) = env.evaluate_transition(&world, &next);
        path_length += next.robot.position.distance(world.robot.position);
        ret += weight * reward.total;
        weight *= discount;
        trajectory.push(TrajectoryPoint {
            t: next.time,
            x: next.robot.position.x,
            y: next.robot.position.y,
        });
        steps.push(StepRecord::new(&next, index, reward, event));
        world = next;
        if let Some(o) = Outcome::from_event(event) {
            break o;
        }
    };
    Ok(EpisodeRecord {
        seed,
        outcome,
        nav_time: world.time,
        path_length,
        cumulative_reward: ret,
        start,
        goal,
        trajectory,
        steps,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub n_episodes: usize,
    #[serde(rename = "SR")]
    pub sr: f64,
    #[serde(rename = "CR")]
    pub cr: f64,
    #[serde(rename = "TO")]
    pub to: f64,
    /// Mean navigation time over successes; `None` without successes.
    #[serde(rename = "NT")]
    pub nt: Option<f64>,
    #[serde(rename = "PL")]
    pub pl: Option<f64>,
    #[serde(rename = "AR")]
    pub ar: f64,
}

impl EvalMetrics {
    pub fn from_records(records: &[EpisodeRecord]) -> Self {
        let n = records.len();
        let nf = n.max(1) as f64;
        let count = |o: Outcome| records.iter().filter(|r| r.outcome == o).count();
        let successes: Vec<&EpisodeRecord> = records
            .iter()
            .filter(|r| r.outcome == Outcome::Success)
            .collect();
        let mean = |f: fn(&EpisodeRecord) -> f64| {
            (!successes.is_empty())
                .then(|| successes.iter().map(|r| f(r)).sum::<f64>() / successes.len() as f64)
        };
        let n_success = successes.len();
        let n_collision = count(Outcome::Collision);
        EvalMetrics {
            n_episodes: n,
            sr: n_success as f64 / nf,
            cr: n_collision as f64 / nf,
            // the remainder, so the three rates sum to one exactly
            to: if n == 0 {
                0.0
            } else {
                (n - n_success - n_collision) as f64 / nf
            },
            nt: mean(|r| r.nav_time),
            pl: mean(|r| r.path_length),
            ar: records.iter().map(|r| r.cumulative_reward).sum::<f64>() / nf,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalResult {
    pub metrics: EvalMetrics,
    pub records: Vec<EpisodeRecord>,
}

/// Evaluates `policy` on `n_episodes` scenarios seeded `seed + i`.
pub fn evaluate_policy(
    policy: &PolicySpec,
    spec: &ScenarioSpec,
    env: &Environment,
    n_episodes: usize,
    seed: u64,
    gamma: f64,
    workers: usize,
) -> Result<EvalResult> {
    if n_episodes == 0 {
        return Err(Error::InvalidArgument(
            "evaluation needs at least one episode".into(),
        ));
    }
    let records = parallel_map(n_episodes, workers, |i| {
        let s = seed.wrapping_add(i as u64);
        let world = generate_scenario(&spec.with_seed(s))?;
        let mut c = policy.controller();
        run_episode(c.as_mut(), world, env, gamma, s)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(EvalResult {
        metrics: EvalMetrics::from_records(&records),
        records,
    })
}

/// Per-episode scalars stored in metrics reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub outcome: Outcome,
    pub nav_time: f64,
    pub path_length: f64,
    #[serde(rename = "return")]
    pub ret: f64,
}

impl From<&EpisodeRecord> for EpisodeSummary {
    fn from(r: &EpisodeRecord) -> Self {
        EpisodeSummary {
            seed: r.seed,
            outcome: r.outcome,
            nav_time: r.nav_time,
            path_length: r.path_length,
            ret: r.cumulative_reward,
        }
    }
}

/// The metrics report written by evaluation runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_digest: String,
    pub policy: String,
    #[serde(flatten)]
    pub metrics: EvalMetrics,
    pub per_episode: Vec<EpisodeSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationSummary {
    pub values: Vec<f64>,
    pub mean: f64,
    pub max: f64,
    /// Population standard deviation.
    pub spread: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Distance of every sample to the segment `start -> goal`.
pub fn path_deviation(trajectory: &[Vec2], start: Vec2, goal: Vec2) -> Result<DeviationSummary> {
    if trajectory.is_empty() {
        return Err(Error::InvalidArgument(
            "path deviation of an empty trajectory".into(),
        ));
    }
    let values: Vec<f64> = trajectory
        .iter()
        .map(|&p| point_segment_distance(p, start, goal))
        .collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let spread = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(DeviationSummary {
        mean,
        max: *sorted.last().unwrap(),
        spread,
        min: sorted[0],
        q1: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.5),
        q3: quantile(&sorted, 0.75),
        values,
    })
}
