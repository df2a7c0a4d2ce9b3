//! Moment-form GRU cell, output layer and encoder/decoder networks.

mod cell;
mod checkpoint;
mod config;
mod graph;
mod params;
mod reference;

pub use cell::{cell_step, decode, emit, encode, gate_product, targets, unroll, CellState, UnrollOutput};
pub use checkpoint::{config_hash, CheckpointFile, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use config::{CellVarianceRule, GateProductRule, LossKind, NetworkConfig, NetworkMode, StepRules};
pub use graph::{bind, loss_and_grad, record, record_bound, register, MomentVar, NetworkVars, Recorded};
pub use params::{
    init_network, init_params, CellParams, GateParams, NetworkParams, ResolvedCell, ResolvedGate,
    ResolvedHead, ResolvedNetwork, SpGruParams, Stochastic, DEFAULT_INIT_VARIANCE,
};
pub use reference::{Gru, GruGate};
