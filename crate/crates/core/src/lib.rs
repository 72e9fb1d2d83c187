//! Multimodal operator learning and symbolic equation recovery for ODE
//! systems: a transformer that reads a noisy trajectory prefix together
//! with a (possibly corrupted) symbolic guess of the governing equations,
//! and predicts both the future trajectory and the corrected equations.

pub mod dataset;
pub mod integrate;
pub mod model;
pub mod nn_core;
pub mod ode_dict;
pub mod symbolic;
pub mod train_eval;
