//! Unsupervised discovery of resource-assignment skills for an edge network
//! domain, plus the tooling to inspect and compose the discovered skills.
//!
//! The numeric core ([`env`], [`nn`]) is generic over [`Scalar`]; the training
//! pipeline runs in `f64` and the aliases below name the concrete types it uses.

pub mod scalar;
pub mod env;
pub mod nn;
pub mod agent;
pub mod analysis;
pub mod controller;

pub use scalar::Scalar;

pub type ResourceVector = env::ResourceVector<f64>;
pub type EnvConfig = env::EnvConfig<f64>;
pub type DomainState = env::DomainState<f64>;
pub type Environment = env::Environment<f64>;
pub type ParameterSet = nn::ParameterSet<f64>;
pub type AdamState = nn::AdamState<f64>;

pub use env::TerminalKind;
pub use agent::{Checkpoint, SkillId, TrainConfig};
