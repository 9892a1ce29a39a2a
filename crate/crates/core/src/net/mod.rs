//! Memory-enabled value/policy network.
//!
//! A bi-directional GRU encodes the humans of one joint state (scanning
//! across the crowd), a second GRU carries the robot's own observations
//! across time steps, and attention pooling over pairwise robot–human
//! features produces a crowd feature. A shared MLP feeds a scalar value
//! head and a categorical policy head.
//!
//! Everything is plain `f64` arithmetic with hand-written reverse-mode
//! gradients; parameters live in one flat buffer with named views.

mod checkpoint;
mod linalg;
mod model;
mod optim;
mod params;
mod policy;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
};
pub use model::{
    accumulate_gradients, attention_pool, backward, encode_humans, encode_robot, forward, gru_cell,
    value_only, ForwardOutput, ForwardTrace, GruLayer,
};
pub use optim::Sgd;
pub use params::{
    GruSpec, LinearSpec, NetConfig, NetworkParameters, ParamEntry, ParamLayout, Tensor,
};
pub use policy::{
    argmax, constant_velocity_lookahead, discount_factor, NetController, ValuePolicy,
};
