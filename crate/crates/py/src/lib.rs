//! Python bindings: a steppable simulator, the global planner, the
//! Mann-Whitney U test and config digests.

use std::collections::HashMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use mesa_core::config::RunConfig;
use mesa_core::env::{ActionSpace, Environment, Event, JointState};
use mesa_core::orca::OrcaCrowd;
use mesa_core::planner::{dijkstra_path, parse_map};
use mesa_core::sim::{generate_scenario, WorldState, ROBOT_V_MAX};
use mesa_core::{stats, Error, Vec2};

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Numeric { .. } | Error::Divergence { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn config(json: Option<&str>) -> PyResult<RunConfig> {
    match json {
        Some(text) => RunConfig::from_json(text).map_err(err),
        None => Ok(RunConfig::default()),
    }
}

type Observation = (Vec<f64>, Vec<Vec<f64>>);

fn observation(joint: &JointState) -> Observation {
    (
        joint.robot_features().to_vec(),
        joint.human_features().iter().map(|h| h.to_vec()).collect(),
    )
}

fn event_name(event: Event) -> &'static str {
    match event {
        Event::None => "none",
        Event::Goal => "goal",
        Event::Collision => "collision",
        Event::Timeout => "timeout",
    }
}

/// Crowd scenario driven one robot action at a time.
#[pyclass(module = "mesa")]
struct Simulator {
    cfg: RunConfig,
    env: Environment,
    actions: ActionSpace,
    world: Option<WorldState>,
    done: bool,
}

#[pymethods]
impl Simulator {
    #[new]
    #[pyo3(signature = (config_json=None))]
    fn new(config_json: Option<&str>) -> PyResult<Self> {
        let cfg = config(config_json)?;
        let env = Environment::new(
            cfg.reward.clone(),
            OrcaCrowd {
                params: cfg.orca.clone(),
                see_robot: cfg.humans_see_robot,
            },
        );
        Ok(Simulator {
            cfg,
            env,
            actions: ActionSpace::new(ROBOT_V_MAX),
            world: None,
            done: true,
        })
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.actions.len()
    }

    #[getter]
    fn done(&self) -> bool {
        self.done
    }

    /// Starts the episode for `seed`; returns `(robot_features, human_features)`.
    fn reset(&mut self, seed: u64) -> PyResult<Observation> {
        let world = generate_scenario(&self.cfg.scenario.with_seed(seed)).map_err(err)?;
        let joint = mesa_core::env::transform_to_robot_frame(&world).map_err(err)?;
        self.world = Some(world);
        self.done = false;
        Ok(observation(&joint))
    }

    /// Applies action `index`; returns `(observation, reward_terms, event)`.
    fn step(
        &mut self,
        index: usize,
    ) -> PyResult<(Observation, HashMap<&'static str, f64>, &'static str)> {
        if index >= self.actions.len() {
            return Err(PyValueError::new_err(format!(
                "action {index} out of range 0..{}",
                self.actions.len()
            )));
        }
        let world = match (&self.world, self.done) {
            (Some(w), false) => w,
            _ => return Err(PyRuntimeError::new_err("call reset() before step()")),
        };
        let frame = mesa_core::env::joint_state_toward(world, world.robot.goal).frame;
        let action = self.actions.world_action(index, &frame);
        let out = self.env.step(world, &action);
        let r = out.reward;
        let terms = HashMap::from([
            ("wz", r.wz),
            ("route", r.route),
            ("disc", r.disc),
            ("nav", r.nav),
            ("time", r.time),
            ("total", r.total),
        ]);
        self.done = out.event.is_terminal();
        let obs = observation(&out.joint);
        self.world = Some(out.world);
        Ok((obs, terms, event_name(out.event)))
    }

    /// World positions `(robot, humans)` of the current state.
    fn positions(&self) -> PyResult<((f64, f64), Vec<(f64, f64)>)> {
        let w = self
            .world
            .as_ref()
            .ok_or_else(|| PyRuntimeError::new_err("no episode in progress"))?;
        let xy = |p: Vec2| (p.x, p.y);
        Ok((
            xy(w.robot.position),
            w.humans.iter().map(|h| xy(h.position)).collect(),
        ))
    }
}

/// Shortest grid path on a MESAMAP text; returns `(waypoints, cost)`.
#[pyfunction]
#[pyo3(signature = (map_text, start, goal, strict_corners=false))]
fn plan(
    map_text: &str,
    start: (f64, f64),
    goal: (f64, f64),
    strict_corners: bool,
) -> PyResult<(Vec<(f64, f64)>, f64)> {
    let grid = parse_map(map_text).map_err(err)?;
    let path = dijkstra_path(
        &grid,
        Vec2::new(start.0, start.1),
        Vec2::new(goal.0, goal.1),
        strict_corners,
    )
    .map_err(err)?;
    Ok((
        path.waypoints.iter().map(|p| (p.x, p.y)).collect(),
        path.cost,
    ))
}

/// Two-sided Mann-Whitney U test with effect sizes.
#[pyfunction]
fn mann_whitney_u(a: Vec<f64>, b: Vec<f64>) -> PyResult<HashMap<&'static str, f64>> {
    let r = stats::mann_whitney_u(&a, &b).map_err(err)?;
    Ok(HashMap::from([
        ("U", r.u),
        ("u_a", r.u_a),
        ("u_b", r.u_b),
        ("p_value", r.p_value),
        ("RBC", r.rbc),
        ("CLES", r.cles),
    ]))
}

#[pyfunction]
fn config_digest(config_json: &str) -> PyResult<String> {
    Ok(config(Some(config_json))?.digest())
}

#[pymodule]
fn mesa(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Simulator>()?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    m.add_function(wrap_pyfunction!(mann_whitney_u, m)?)?;
    m.add_function(wrap_pyfunction!(config_digest, m)?)?;
    Ok(())
}
