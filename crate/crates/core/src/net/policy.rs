//! One-step lookahead action selection over the value head.

use rand::Rng;

use super::model::{encode_robot, value_only};
use super::params::NetworkParameters;
use crate::env::{
    classify_event, joint_state_toward, reward_breakdown, warning_zones, Action, ActionSpace,
    Event, RewardConfig,
};
use crate::error::Result;
use crate::sim::WorldState;

/// `gamma^(dt * v_max)`, the per-step discount.
pub fn discount_factor(gamma: f64, dt: f64, v_max: f64) -> f64 {
    gamma.powf(dt * v_max)
}

/// The world after the robot executes `velocity` for one step while every
/// human keeps its current velocity.
pub fn constant_velocity_lookahead(world: &WorldState, velocity: crate::Vec2) -> WorldState {
    let mut next = world.clone();
    next.robot.velocity = velocity;
    next.robot.position += velocity * world.dt;
    for h in &mut next.humans {
        h.position += h.velocity * world.dt;
    }
    next.time = world.time + world.dt;
    next
}

/// Lookahead value `R(s, a) + gamma^(dt v_max) V(s')` of every action.
/// Terminal lookahead states are not bootstrapped.
#[derive(Clone, Debug)]
pub struct ValuePolicy {
    pub params: NetworkParameters,
    pub reward: RewardConfig,
    pub gamma: f64,
    pub actions: ActionSpace,
}

impl ValuePolicy {
    pub fn new(params: NetworkParameters, reward: RewardConfig, gamma: f64, v_max: f64) -> Self {
        ValuePolicy {
            params,
            reward,
            gamma,
            actions: ActionSpace::new(v_max),
        }
    }

    /// Robot memory after observing `world`, starting from `h_prev`.
    pub fn observe(&self, world: &WorldState, h_prev: &[f64]) -> Vec<f64> {
        let joint = joint_state_toward(world, world.robot.goal);
        encode_robot(&self.params, &joint.robot_features(), h_prev).1
    }

    /// Q-values of all actions. `h` is the memory after observing `world`.
    pub fn q_values(&self, world: &WorldState, h: &[f64]) -> Result<Vec<f64>> {
        let frame = joint_state_toward(world, world.robot.goal).frame;
        let discount = discount_factor(self.gamma, world.dt, self.actions.v_max);
        (0..self.actions.len())
            .map(|i| {
                let action = self.actions.world_action(i, &frame);
                let next = constant_velocity_lookahead(world, action.velocity);
                let event = classify_event(world, &next);
                let joint = joint_state_toward(&next, next.robot.goal);
                let zones = warning_zones(&self.reward, &next);
                let d_g_prev = world.robot.position.distance(next.robot.goal);
                let r = reward_breakdown(&self.reward, &joint, &zones, d_g_prev, event).total;
                if event == Event::None {
                    Ok(r + discount * value_only(&self.params, &joint, h)?)
                } else {
                    Ok(r)
                }
            })
            .collect()
    }

    /// Epsilon-greedy choice. Returns the action and the memory after
    /// observing `world`, which becomes `h_prev` at the next step.
    pub fn select_action<R: Rng>(
        &self,
        world: &WorldState,
        h_prev: &[f64],
        epsilon: f64,
        rng: &mut R,
    ) -> Result<(Action, Vec<f64>)> {
        assert!(
            (0.0..=1.0).contains(&epsilon),
            "epsilon must be a probability"
        );
        let h = self.observe(world, h_prev);
        let frame = joint_state_toward(world, world.robot.goal).frame;
        // the exploration draw is taken unconditionally so rng streams do not depend on epsilon
        let explore = rng.gen::<f64>() < epsilon;
        let pick = rng.gen_range(0..self.actions.len());
        let index = if explore {
            pick
        } else {
            argmax(&self.q_values(world, &h)?)
        };
        Ok((self.actions.world_action(index, &frame), h))
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// A value policy together with the robot memory of the current episode.
#[derive(Clone, Debug)]
pub struct NetController {
    pub policy: ValuePolicy,
    pub hidden: Vec<f64>,
}

impl NetController {
    pub fn new(policy: ValuePolicy) -> Self {
        let hidden = vec![0.0; policy.params.config().hidden];
        NetController { policy, hidden }
    }

    /// Clears the memory; call at episode start.
    pub fn reset(&mut self) {
        self.hidden.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn act<R: Rng>(&mut self, world: &WorldState, epsilon: f64, rng: &mut R) -> Result<Action> {
        let (action, h) = self
            .policy
            .select_action(world, &self.hidden, epsilon, rng)?;
        self.hidden = h;
        Ok(action)
    }
}
