//! Optimal Reciprocal Collision Avoidance in the plane.
//!
//! Each neighbour induces a half-plane of permitted velocities; the new
//! velocity is the point of the intersection of those half-planes and the
//! speed disc closest to the preferred velocity. When the constraints are
//! infeasible the velocity minimising the largest violation is used instead.

use serde::{Deserialize, Serialize};

use crate::geom::Vec2;
use crate::sim::{AgentBody, HumanPolicy, WorldState};

const EPSILON: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrcaParams {
    pub time_horizon: f64,
    pub neighbor_dist: f64,
    pub max_neighbors: usize,
    /// Fraction of the required velocity change this agent takes on.
    pub reciprocity_share: f64,
}

impl Default for OrcaParams {
    fn default() -> Self {
        OrcaParams {
            time_horizon: 5.0,
            neighbor_dist: 10.0,
            max_neighbors: 10,
            reciprocity_share: 0.5,
        }
    }
}

/// `{ v : (v - point) · normal >= 0 }`
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfPlane {
    pub point: Vec2,
    pub normal: Vec2,
}

impl HalfPlane {
    /// Boundary direction with the permitted side on its left.
    fn direction(&self) -> Vec2 {
        Vec2::new(self.normal.y, -self.normal.x)
    }

    /// Positive when `v` lies outside the half-plane.
    pub fn violation(&self, v: Vec2) -> f64 {
        (self.point - v).dot(self.normal)
    }

    pub fn contains(&self, v: Vec2, tol: f64) -> bool {
        self.violation(v) <= tol
    }
}

/// Half-plane of velocities for `agent` that avoid `other` for
/// `params.time_horizon` seconds. Overlapping agents get a constraint that
/// separates them within one step of `dt`.
pub fn orca_halfplane(
    agent: &AgentBody,
    other: &AgentBody,
    params: &OrcaParams,
    dt: f64,
) -> HalfPlane {
    let rel_pos = other.position - agent.position;
    let rel_vel = agent.velocity - other.velocity;
    let dist_sq = rel_pos.length_squared();
    let combined = agent.radius + other.radius;
    let combined_sq = combined * combined;

    let (direction, u);
    if dist_sq > combined_sq {
        let inv_horizon = 1.0 / params.time_horizon;
        // from the centre of the truncation disc to the relative velocity
        let w = rel_vel - rel_pos * inv_horizon;
        let w_len_sq = w.length_squared();
        let dot1 = w.dot(rel_pos);
        if dot1 < 0.0 && dot1 * dot1 > combined_sq * w_len_sq {
            // closest boundary point lies on the truncation arc
            let w_len = w_len_sq.sqrt();
            let unit_w = w / w_len;
            direction = Vec2::new(unit_w.y, -unit_w.x);
            u = unit_w * (combined * inv_horizon - w_len);
        } else {
            // closest boundary point lies on a leg of the cone
            let leg = (dist_sq - combined_sq).sqrt();
            direction = if rel_pos.det(w) > 0.0 {
                Vec2::new(
                    rel_pos.x * leg - rel_pos.y * combined,
                    rel_pos.x * combined + rel_pos.y * leg,
                ) / dist_sq
            } else {
                -Vec2::new(
                    rel_pos.x * leg + rel_pos.y * combined,
                    -rel_pos.x * combined + rel_pos.y * leg,
                ) / dist_sq
            };
            u = direction * rel_vel.dot(direction) - rel_vel;
        }
    } else {
        let inv_dt = 1.0 / dt;
        let w = rel_vel - rel_pos * inv_dt;
        let w_len = w.length();
        let unit_w = if w_len > EPSILON {
            w / w_len
        } else if rel_pos != Vec2::ZERO {
            (-rel_pos).normalize_or_zero()
        } else {
            Vec2::new(1.0, 0.0)
        };
        direction = Vec2::new(unit_w.y, -unit_w.x);
        u = unit_w * (combined * inv_dt - w_len);
    }

    HalfPlane {
        point: agent.velocity + u * params.reciprocity_share,
        normal: Vec2::new(-direction.y, direction.x),
    }
}

/// Optimises along the boundary of half-plane `index` subject to the disc
/// and half-planes `0..index`. Returns false if that chord is empty.
fn lp_on_line(
    planes: &[HalfPlane],
    index: usize,
    radius: f64,
    opt: Vec2,
    direction_opt: bool,
    result: &mut Vec2,
) -> bool {
    let line = &planes[index];
    let dir = line.direction();
    let dot = line.point.dot(dir);
    let disc = dot * dot + radius * radius - line.point.length_squared();
    if disc < 0.0 {
        return false;
    }
    let sqrt_disc = disc.sqrt();
    let mut t_left = -dot - sqrt_disc;
    let mut t_right = -dot + sqrt_disc;

    for prev in &planes[..index] {
        let prev_dir = prev.direction();
        let denom = dir.det(prev_dir);
        let numer = prev_dir.det(line.point - prev.point);
        if denom.abs() <= EPSILON {
            // parallel lines
            if numer < 0.0 {
                return false;
            }
            continue;
        }
        let t = numer / denom;
        if denom >= 0.0 {
            t_right = t_right.min(t);
        } else {
            t_left = t_left.max(t);
        }
        if t_left > t_right {
            return false;
        }
    }

    *result = if direction_opt {
        if opt.dot(dir) > 0.0 {
            line.point + dir * t_right
        } else {
            line.point + dir * t_left
        }
    } else {
        let t = dir.dot(opt - line.point).clamp(t_left, t_right);
        line.point + dir * t
    };
    true
}

/// Incremental 2D program. Returns the number of half-planes processed
/// successfully; less than `planes.len()` means infeasible at that index.
fn lp_2d(
    planes: &[HalfPlane],
    radius: f64,
    opt: Vec2,
    direction_opt: bool,
    result: &mut Vec2,
) -> usize {
    *result = if direction_opt {
        opt * radius
    } else if opt.length_squared() > radius * radius {
        opt.normalize_or_zero() * radius
    } else {
        opt
    };
    for i in 0..planes.len() {
        if planes[i].violation(*result) > 0.0 {
            let saved = *result;
            if !lp_on_line(planes, i, radius, opt, direction_opt, result) {
                *result = saved;
                return i;
            }
        }
    }
    planes.len()
}

/// Fallback program: minimises the maximum violation among planes from
/// `begin` on, projecting the problem onto each violated boundary in turn.
fn lp_3d(planes: &[HalfPlane], begin: usize, radius: f64, result: &mut Vec2) {
    let mut distance = 0.0;
    for i in begin..planes.len() {
        if planes[i].violation(*result) <= distance {
            continue;
        }
        let dir_i = planes[i].direction();
        let mut projected = Vec::with_capacity(i);
        for plane_j in &planes[..i] {
            let dir_j = plane_j.direction();
            let det = dir_i.det(dir_j);
            let point = if det.abs() <= EPSILON {
                if dir_i.dot(dir_j) > 0.0 {
                    // same direction: never the binding pair
                    continue;
                }
                (planes[i].point + plane_j.point) * 0.5
            } else {
                planes[i].point + dir_i * (dir_j.det(planes[i].point - plane_j.point) / det)
            };
            let dir = (dir_j - dir_i).normalize_or_zero();
            projected.push(HalfPlane {
                point,
                normal: Vec2::new(-dir.y, dir.x),
            });
        }
        let saved = *result;
        let toward = Vec2::new(-dir_i.y, dir_i.x);
        if lp_2d(&projected, radius, toward, true, result) < projected.len() {
            // can only fail from floating point error; keep the previous answer
            *result = saved;
        }
        distance = planes[i].violation(*result);
    }
}

/// Velocity closest to `v_pref` inside every half-plane and the disc of
/// radius `v_max`; on infeasibility, the velocity with the smallest maximum
/// violation. Constraints are processed in index order.
pub fn solve_velocity_program(planes: &[HalfPlane], v_pref: Vec2, v_max: f64) -> Vec2 {
    assert!(v_max > 0.0, "v_max must be positive");
    let mut result = Vec2::ZERO;
    let failed = lp_2d(planes, v_max, v_pref, false, &mut result);
    if failed < planes.len() {
        lp_3d(planes, failed, v_max, &mut result);
    }
    // guard the speed cap against rounding in the projections
    let speed = result.length();
    if speed > v_max {
        result = result * (v_max / speed);
    }
    result
}

/// Addresses an agent in a [`WorldState`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AgentRef {
    Robot,
    Human(usize),
}

/// ORCA velocity for one agent of the world. Humans consider other humans
/// and, if `include_robot`, the robot; the robot considers every human.
pub fn orca_policy_with(
    world: &WorldState,
    agent: AgentRef,
    params: &OrcaParams,
    include_robot: bool,
) -> Vec2 {
    let me = match agent {
        AgentRef::Robot => &world.robot,
        AgentRef::Human(i) => &world.humans[i],
    };
    let range_sq = params.neighbor_dist * params.neighbor_dist;
    let others = world
        .humans
        .iter()
        .enumerate()
        .filter(|&(i, _)| agent != AgentRef::Human(i))
        .chain(
            (agent != AgentRef::Robot && include_robot)
                .then_some((world.humans.len(), &world.robot)),
        );
    let mut neighbours: Vec<(f64, usize, &AgentBody)> = others
        .map(|(i, other)| ((other.position - me.position).length_squared(), i, other))
        .filter(|&(d, _, _)| d < range_sq)
        .collect();
    neighbours.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    neighbours.truncate(params.max_neighbors);

    let planes: Vec<HalfPlane> = neighbours
        .iter()
        .map(|(_, _, other)| orca_halfplane(me, other, params, world.dt))
        .collect();
    solve_velocity_program(&planes, me.preferred_velocity(), me.v_pref)
}

/// ORCA velocity for `agent`, with humans blind to the robot.
pub fn orca_policy(world: &WorldState, agent: AgentRef, params: &OrcaParams) -> Vec2 {
    orca_policy_with(world, agent, params, false)
}

/// Pedestrian motion model: every human runs ORCA simultaneously.
#[derive(Clone, Debug, Default)]
pub struct OrcaCrowd {
    pub params: OrcaParams,
    /// Whether humans treat the robot as a (reciprocating) obstacle.
    pub see_robot: bool,
}

impl HumanPolicy for OrcaCrowd {
    fn human_velocities(&self, world: &WorldState) -> Vec<Vec2> {
        (0..world.humans.len())
            .map(|i| orca_policy_with(world, AgentRef::Human(i), &self.params, self.see_robot))
            .collect()
    }
}
