//! Two-phase training: imitation of ORCA demonstrations with Monte-Carlo
//! value targets, then epsilon-greedy TD learning with experience replay.

use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{Reader, Writer};
use crate::env::{joint_state_toward, ActionSpace, Environment, JointState, Outcome};
use crate::error::{Error, Result};
use crate::net::{
    accumulate_gradients, discount_factor, encode_robot, forward, read_checkpoint, value_only,
    write_checkpoint, NetConfig, NetworkParameters, Sgd, ValuePolicy,
};
use crate::orca::{orca_policy_with, AgentRef, OrcaParams};
use crate::sim::{generate_scenario, step_world, ScenarioSpec, ROBOT_V_MAX};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub demo_episodes: usize,
    pub imitation_epochs: usize,
    pub imitation_lr: f64,
    pub rl_episodes: usize,
    pub rl_lr: f64,
    pub gamma: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay_episodes: usize,
    pub batch_size: usize,
    pub warmup_episodes: usize,
    pub buffer_capacity: usize,
    pub momentum: f64,
    /// Weight of the policy-head cross-entropy term.
    pub ce_weight: f64,
    pub checkpoint_every: usize,
    /// Abort when the running mean of |V| over recent minibatches exceeds this.
    pub divergence_threshold: f64,
    pub net: NetConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            demo_episodes: 3000,
            imitation_epochs: 400,
            imitation_lr: 0.01,
            rl_episodes: 10000,
            rl_lr: 0.001,
            gamma: 0.9,
            eps_start: 0.5,
            eps_end: 0.1,
            eps_decay_episodes: 4000,
            batch_size: 100,
            warmup_episodes: 1000,
            buffer_capacity: 100_000,
            momentum: 0.9,
            ce_weight: 0.1,
            checkpoint_every: 500,
            divergence_threshold: 1e3,
            net: NetConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("train: {m}")));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.eps_start)
            || !(0.0..=1.0).contains(&self.eps_end)
            || self.eps_start < self.eps_end
        {
            return bad("need 1 >= eps_start >= eps_end >= 0");
        }
        if !(self.imitation_lr > 0.0 && self.rl_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return bad("batch_size and buffer_capacity must be positive");
        }
        if !(self.ce_weight >= 0.0) || !(self.divergence_threshold > 0.0) {
            return bad("ce_weight must be >= 0 and divergence_threshold > 0");
        }
        Ok(())
    }

    /// Per-step discount `gamma^(dt * v_max)` for a robot of speed `ROBOT_V_MAX`.
    pub fn discount(&self, dt: f64) -> f64 {
        discount_factor(self.gamma, dt, ROBOT_V_MAX)
    }
}

/// Independent seed for item `index` of random stream `stream`.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ index.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    // splitmix64 finaliser
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub const STREAM_DEMO: u64 = 1;
pub const STREAM_IMITATION: u64 = 2;
pub const STREAM_RL_SCENARIO: u64 = 3;
pub const STREAM_RL: u64 = 4;
pub const STREAM_INIT: u64 = 5;

pub fn epsilon_schedule(episode: usize, cfg: &TrainConfig) -> f64 {
    let frac = if cfg.eps_decay_episodes == 0 {
        1.0
    } else {
        (episode as f64 / cfg.eps_decay_episodes as f64).min(1.0)
    };
    cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac
}

/// Discounted return-to-go of every step.
pub fn mc_targets(rewards: &[f64], discount: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + discount * acc;
        out[t] = acc;
    }
    out
}

/// One recorded demonstration step: the state before acting, the discrete
/// action nearest to the executed ORCA velocity, and the return-to-go.
#[derive(Clone, Debug, PartialEq)]
pub struct DemoStep {
    pub joint: JointState,
    pub action_index: usize,
    pub reward: f64,
    pub value_target: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoEpisode {
    pub seed: u64,
    pub outcome: Outcome,
    pub steps: Vec<DemoStep>,
}

impl DemoEpisode {
    pub fn discounted_return(&self) -> f64 {
        self.steps.first().map_or(0.0, |s| s.value_target)
    }
}

/// Demonstration episodes kept in order so robot memory can be re-derived
/// by unrolling the robot GRU along each episode.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DemoBuffer {
    pub config_digest: String,
    pub episodes: Vec<DemoEpisode>,
}

const DEMO_MAGIC: &[u8] = b"MESADEMO1";

impl DemoBuffer {
    pub fn n_transitions(&self) -> usize {
        self.episodes.iter().map(|e| e.steps.len()).sum()
    }

    pub fn mean_return(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes
            .iter()
            .map(DemoEpisode::discounted_return)
            .sum::<f64>()
            / self.episodes.len() as f64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.buf.extend_from_slice(DEMO_MAGIC);
        w.bytes(self.config_digest.as_bytes());
        w.u32(self.episodes.len() as u32);
        for e in &self.episodes {
            w.u64(e.seed);
            w.u8(outcome_code(e.outcome));
            w.u32(e.steps.len() as u32);
            for s in &e.steps {
                w.joint(&s.joint);
                w.u32(s.action_index as u32);
                w.f64(s.reward);
                w.f64(s.value_target);
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "demo buffer");
        r.expect(DEMO_MAGIC)?;
        let config_digest = r.string()?;
        let n = r.u32()? as usize;
        let mut episodes = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let seed = r.u64()?;
            let outcome = outcome_from_code(r.u8()?)?;
            let k = r.u32()? as usize;
            let mut steps = Vec::with_capacity(k.min(1 << 20));
            for _ in 0..k {
                steps.push(DemoStep {
                    joint: r.joint()?,
                    action_index: r.u32()? as usize,
                    reward: r.f64()?,
                    value_target: r.f64()?,
                });
            }
            episodes.push(DemoEpisode {
                seed,
                outcome,
                steps,
            });
        }
        r.finish()?;
        Ok(DemoBuffer {
            config_digest,
            episodes,
        })
    }

    /// SHA-256 of the serialized buffer, first 16 hex digits.
    pub fn digest(&self) -> String {
        hex16(&self.to_bytes())
    }
}

pub(crate) fn hex16(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn outcome_code(o: Outcome) -> u8 {
    match o {
        Outcome::Success => 0,
        Outcome::Collision => 1,
        Outcome::Timeout => 2,
    }
}

fn outcome_from_code(c: u8) -> Result<Outcome> {
    match c {
        0 => Ok(Outcome::Success),
        1 => Ok(Outcome::Collision),
        2 => Ok(Outcome::Timeout),
        _ => Err(Error::Parse(format!("unknown outcome code {c}"))),
    }
}

/// Runs `f(i)` for `i in 0..n` on `workers` threads; results in index order.
pub(crate) fn parallel_map<T: Send>(
    n: usize,
    workers: usize,
    f: impl Fn(usize) -> T + Sync + Send,
) -> Vec<T> {
    if workers <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
        Err(_) => (0..n).map(f).collect(),
    }
}

/// One ORCA-driven robot episode.
pub fn demonstration_episode(
    spec: &ScenarioSpec,
    env: &Environment,
    orca: &OrcaParams,
    discount: f64,
) -> Result<DemoEpisode> {
    let mut world = generate_scenario(spec)?;
    let actions = ActionSpace::new(world.robot.v_pref);
    let mut joints = Vec::new();
    let mut indices = Vec::new();
    let mut rewards = Vec::new();
    let outcome = loop {
        let joint = joint_state_toward(&world, world.robot.goal);
        let v = orca_policy_with(&world, AgentRef::Robot, orca, true);
        indices.push(actions.nearest_index(&joint.frame, v));
        joints.push(joint);
        let next = step_world(&world, v, &env.crowd);
        let (_, reward, event) = env.evaluate_transition(&world, &next);
        rewards.push(reward.total);
        world = next;
        if let Some(o) = Outcome::from_event(event) {
            break o;
        }
    };
    let targets = mc_targets(&rewards, discount);
    let steps = joints
        .into_iter()
        .zip(indices)
        .zip(rewards.iter().zip(targets))
        .map(
            |((joint, action_index), (&reward, value_target))| DemoStep {
                joint,
                action_index,
                reward,
                value_target,
            },
        )
        .collect();
    Ok(DemoEpisode {
        seed: spec.seed,
        outcome,
        steps,
    })
}

pub fn run_demonstrations(
    cfg: &TrainConfig,
    spec: &ScenarioSpec,
    env: &Environment,
    orca: &OrcaParams,
    workers: usize,
) -> Result<DemoBuffer> {
    let discount = cfg.discount(spec.dt);
    let episodes = parallel_map(cfg.demo_episodes, workers, |i| {
        let s = spec.with_seed(derive_seed(cfg.seed, STREAM_DEMO, i as u64));
        demonstration_episode(&s, env, orca, discount)
    });
    Ok(DemoBuffer {
        config_digest: String::new(),
        episodes: episodes.into_iter().collect::<Result<_>>()?,
    })
}

/// Fresh parameters for a training run.
pub fn initial_parameters(cfg: &TrainConfig) -> NetworkParameters {
    NetworkParameters::init(cfg.net.clone(), derive_seed(cfg.seed, STREAM_INIT, 0))
}

struct Sample<'a> {
    joint: &'a JointState,
    hidden: &'a [f64],
    target: f64,
    action: usize,
}

/// Loss of a minibatch: mean squared value error plus `ce_weight` times the
/// mean policy cross-entropy. Returns `(loss, mean |V|)` and applies one
/// optimizer step.
fn minibatch_step(
    params: &mut NetworkParameters,
    opt: &mut Sgd,
    batch: &[Sample],
    ce_weight: f64,
) -> Result<(f64, f64)> {
    let n = batch.len() as f64;
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    let mut abs_v = 0.0;
    for s in batch {
        let out = forward(params, s.joint, s.hidden)?;
        let err = out.value - s.target;
        loss += err * err / n;
        abs_v += out.value.abs() / n;
        let d_logits = (ce_weight > 0.0).then(|| {
            loss += -ce_weight * out.policy[s.action].max(1e-300).ln() / n;
            let mut d: Vec<f64> = out.policy.iter().map(|p| ce_weight * p / n).collect();
            d[s.action] -= ce_weight / n;
            d
        });
        accumulate_gradients(
            params,
            &out.trace,
            2.0 * err / n,
            d_logits.as_deref(),
            &mut grads,
        );
    }
    if !grads.is_finite() {
        return Err(Error::Numeric {
            location: "minibatch gradient".into(),
            snapshot: params.fingerprint(),
        });
    }
    opt.step(params, &grads);
    Ok((loss, abs_v))
}

/// Robot memory before each step, obtained by unrolling the robot GRU from
/// zero along the episode with the current parameters.
pub fn demo_hidden_states(params: &NetworkParameters, episode: &DemoEpisode) -> Vec<Vec<f64>> {
    let mut h = vec![0.0; params.config().hidden];
    episode
        .steps
        .iter()
        .map(|s| {
            let before = h.clone();
            h = encode_robot(params, &s.joint.robot_features(), &h).1;
            before
        })
        .collect()
}

/// Supervised fit to the demonstrations. Returns the mean loss per epoch.
pub fn imitation_fit(
    params: &mut NetworkParameters,
    demos: &DemoBuffer,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    let n = demos.n_transitions();
    if n == 0 {
        return Err(Error::InvalidArgument(
            "imitation needs a non-empty demonstration buffer".into(),
        ));
    }
    let flat: Vec<(usize, usize)> = demos
        .episodes
        .iter()
        .enumerate()
        .flat_map(|(e, ep)| (0..ep.steps.len()).map(move |t| (e, t)))
        .collect();
    let mut opt = Sgd::new(cfg.imitation_lr, cfg.momentum);
    let mut losses = Vec::with_capacity(cfg.imitation_epochs);
    for epoch in 0..cfg.imitation_epochs {
        let hidden: Vec<Vec<Vec<f64>>> = demos
            .episodes
            .iter()
            .map(|e| demo_hidden_states(params, e))
            .collect();
        let mut order = flat.clone();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_IMITATION, epoch as u64));
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample> = chunk
                .iter()
                .map(|&(e, t)| {
                    let s = &demos.episodes[e].steps[t];
                    Sample {
                        joint: &s.joint,
                        hidden: &hidden[e][t],
                        target: s.value_target,
                        action: s.action_index,
                    }
                })
                .collect();
            let (loss, _) = minibatch_step(params, &mut opt, &batch, cfg.ce_weight)?;
            total += loss * chunk.len() as f64;
        }
        let mean = total / n as f64;
        on_epoch(epoch, mean);
        losses.push(mean);
    }
    Ok(losses)
}

/// One experienced step. `robot_hidden` is the memory before observing
/// `joint`; `next_hidden` the memory after it, paired with `next_joint`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub joint: JointState,
    pub robot_hidden: Vec<f64>,
    pub action_index: usize,
    pub reward: f64,
    pub terminal: bool,
    pub next_joint: JointState,
    pub next_hidden: Vec<f64>,
    /// TD target at insertion time; recomputed whenever the transition is replayed.
    pub value_target: f64,
}

/// Bounded FIFO of transitions.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        ReplayBuffer {
            capacity,
            entries: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(t);
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.entries[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.entries.iter()
    }

    /// Distinct indices, or every index when fewer than `k` are stored.
    pub fn sample_indices<R: Rng>(&self, k: usize, rng: &mut R) -> Vec<usize> {
        sample(rng, self.len(), k.min(self.len())).into_vec()
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub epsilon: f64,
    #[serde(rename = "return")]
    pub ret: f64,
    pub outcome: Outcome,
    pub steps: usize,
    pub loss: Option<f64>,
}

const VALUE_WINDOW: usize = 10;

/// Everything the RL phase needs to continue exactly where it stopped.
#[derive(Clone, Debug)]
pub struct RlState {
    pub params: NetworkParameters,
    pub optimizer: Sgd,
    pub buffer: ReplayBuffer,
    pub next_episode: usize,
    recent_abs_values: VecDeque<f64>,
}

const STATE_MAGIC: &[u8] = b"MESARL1";

impl RlState {
    pub fn new(params: NetworkParameters, cfg: &TrainConfig) -> Self {
        RlState {
            params,
            optimizer: Sgd::new(cfg.rl_lr, cfg.momentum),
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            next_episode: 0,
            recent_abs_values: VecDeque::new(),
        }
    }

    pub fn running_mean_abs_value(&self) -> f64 {
        if self.recent_abs_values.is_empty() {
            0.0
        } else {
            self.recent_abs_values.iter().sum::<f64>() / self.recent_abs_values.len() as f64
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.buf.extend_from_slice(STATE_MAGIC);
        w.u64(self.next_episode as u64);
        w.bytes(&write_checkpoint(&self.params));
        match self.optimizer.velocity() {
            Some(v) => {
                w.u8(1);
                w.bytes(&write_checkpoint(v));
            }
            None => w.u8(0),
        }
        let recent: Vec<f64> = self.recent_abs_values.iter().copied().collect();
        w.f64s(&recent);
        w.u64(self.buffer.capacity as u64);
        w.u32(self.buffer.len() as u32);
        for t in self.buffer.iter() {
            w.joint(&t.joint);
            w.f64s(&t.robot_hidden);
            w.u32(t.action_index as u32);
            w.f64(t.reward);
            w.u8(t.terminal as u8);
            w.joint(&t.next_joint);
            w.f64s(&t.next_hidden);
            w.f64(t.value_target);
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8], cfg: &TrainConfig) -> Result<Self> {
        let mut r = Reader::new(bytes, "training state");
        r.expect(STATE_MAGIC)?;
        let next_episode = r.u64()? as usize;
        let params = read_checkpoint(r.bytes()?, &cfg.net)?;
        let mut optimizer = Sgd::new(cfg.rl_lr, cfg.momentum);
        if r.u8()? == 1 {
            let v = read_checkpoint(r.bytes()?, &cfg.net)?;
            optimizer.set_velocity(v);
        }
        let recent_abs_values = r.f64s()?.into();
        let capacity = r.u64()? as usize;
        let n = r.u32()? as usize;
        let mut buffer = ReplayBuffer::new(capacity.max(1));
        for _ in 0..n {
            buffer.push(Transition {
                joint: r.joint()?,
                robot_hidden: r.f64s()?,
                action_index: r.u32()? as usize,
                reward: r.f64()?,
                terminal: r.u8()? != 0,
                next_joint: r.joint()?,
                next_hidden: r.f64s()?,
                value_target: r.f64()?,
            });
        }
        r.finish()?;
        Ok(RlState {
            params,
            optimizer,
            buffer,
            next_episode,
            recent_abs_values,
        })
    }
}

/// TD target `r + discount * V(s')`, or `r` for terminal transitions.
pub fn td_target(params: &NetworkParameters, t: &Transition, discount: f64) -> Result<f64> {
    if t.terminal {
        Ok(t.reward)
    } else {
        Ok(t.reward + discount * value_only(params, &t.next_joint, &t.next_hidden)?)
    }
}

/// Runs RL episodes `state.next_episode..end_episode`. `observer` sees the
/// state and log line after every episode.
pub fn rl_train(
    state: &mut RlState,
    cfg: &TrainConfig,
    spec: &ScenarioSpec,
    env: &Environment,
    end_episode: usize,
    mut observer: impl FnMut(&RlState, &EpisodeLog) -> Result<()>,
) -> Result<()> {
    let discount = cfg.discount(spec.dt);
    while state.next_episode < end_episode {
        let episode = state.next_episode;
        let epsilon = epsilon_schedule(episode, cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_RL, episode as u64));
        let scenario = spec.with_seed(derive_seed(cfg.seed, STREAM_RL_SCENARIO, episode as u64));
        let mut world = generate_scenario(&scenario)?;
        let policy = ValuePolicy::new(
            state.params.clone(),
            env.reward.clone(),
            cfg.gamma,
            world.robot.v_pref,
        );

        let mut h_prev = vec![0.0; cfg.net.hidden];
        let mut ret = 0.0;
        let mut weight = 1.0;
        let mut steps = 0;
        let outcome = loop {
            let joint = joint_state_toward(&world, world.robot.goal);
            let (action, h) = policy.select_action(&world, &h_prev, epsilon, &mut rng)?;
            let next = step_world(&world, action.velocity, &env.crowd);
            let (next_joint, reward, event) = env.evaluate_transition(&world, &next);
            let terminal = event.is_terminal();
            let mut t = Transition {
                joint,
                robot_hidden: h_prev,
                action_index: action.index,
                reward: reward.total,
                terminal,
                next_joint,
                next_hidden: h.clone(),
                value_target: 0.0,
            };
            t.value_target = td_target(&state.params, &t, discount)?;
            state.buffer.push(t);
            ret += weight * reward.total;
            weight *= discount;
            steps += 1;
            h_prev = h;
            world = next;
            if let Some(o) = Outcome::from_event(event) {
                break o;
            }
        };

        let mut loss = None;
        if episode >= cfg.warmup_episodes && !state.buffer.is_empty() {
            let idx = state.buffer.sample_indices(cfg.batch_size, &mut rng);
            let targets: Vec<f64> = idx
                .iter()
                .map(|&i| td_target(&state.params, state.buffer.get(i), discount))
                .collect::<Result<_>>()?;
            let batch: Vec<Sample> = idx
                .iter()
                .zip(&targets)
                .map(|(&i, &target)| {
                    let t = state.buffer.get(i);
                    Sample {
                        joint: &t.joint,
                        hidden: &t.robot_hidden,
                        target,
                        action: t.action_index,
                    }
                })
                .collect();
            let (l, abs_v) = minibatch_step(
                &mut state.params,
                &mut state.optimizer,
                &batch,
                cfg.ce_weight,
            )
            .map_err(|e| match e {
                Error::Numeric { .. } => Error::Divergence {
                    episode,
                    mean_abs_value: f64::NAN,
                },
                other => other,
            })?;
            loss = Some(l);
            state.recent_abs_values.push_back(abs_v);
            if state.recent_abs_values.len() > VALUE_WINDOW {
                state.recent_abs_values.pop_front();
            }
            let mean = state.running_mean_abs_value();
            if !(mean <= cfg.divergence_threshold) || !state.params.is_finite() {
                return Err(Error::Divergence {
                    episode,
                    mean_abs_value: mean,
                });
            }
        }
        state.next_episode += 1;
        let log = EpisodeLog {
            episode,
            epsilon,
            ret,
            outcome,
            steps,
            loss,
        };
        observer(state, &log)?;
    }
    Ok(())
}
