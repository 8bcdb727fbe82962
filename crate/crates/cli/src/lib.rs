//! Headless operation: corpus generation, map fitting, mesh export, the
//! HTTP service and the synthetic-user simulator.

pub mod commands;
pub mod simulate;
