//! Crowd navigation among ORCA-driven pedestrians with a memory-enabled,
//! attention-pooled value network.
//!
//! The crate is organised bottom-up:
//!
//! * [`geom`] – 2D vector arithmetic shared by everything else.
//! * [`sim`] – ground-truth world, scenario generation and kinematic stepping.
//! * [`orca`] – reciprocal collision avoidance for pedestrians and the
//!   demonstration robot.
//! * [`env`] – robot-centric observations, warning zones and the multi-term
//!   reward.
//! * [`net`] – the GRU + attention value/policy network with analytic
//!   gradients, checkpoints and one-step-lookahead action selection.
//! * [`train`] – imitation from ORCA demonstrations followed by ε-greedy TD
//!   learning with experience replay.
//! * [`planner`] – occupancy grids, Dijkstra and sub-goal navigation.
//! * [`eval`] and [`stats`] – evaluation metrics and the Mann-Whitney U test.

mod codec;
pub mod config;
pub mod env;
pub mod error;
pub mod eval;
pub mod geom;
pub mod net;
pub mod orca;
pub mod planner;
pub mod sim;
pub mod stats;
pub mod train;

pub use error::{Error, Result};
pub use geom::Vec2;
