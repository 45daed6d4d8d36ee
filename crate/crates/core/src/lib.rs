//! Ad-hoc teamwork in a deterministic multi-agent kitchen.
//!
//! Modules build bottom-up: [`env`] is the simulator, [`nn`] a small
//! reverse-mode autodiff used by every learned component, [`shaping`] the
//! influence and diversity rewards, [`trainer`] team-pool PPO, [`predictor`]
//! the partner-trajectory transformer, [`steering`] teacher training and
//! distillation, and [`eval`] scoring, baselines and tables.

pub mod env;
pub mod par;
pub mod nn;
pub mod shaping;
pub mod trainer;
pub mod predictor;
pub mod steering;
pub mod eval;
