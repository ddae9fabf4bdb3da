//! Electric ride-hailing fleet dispatch: the fleet MDP, an atomic-action
//! simulator, policy-gradient training on a reduced state, a fluid LP upper
//! bound, and reference baselines.

pub mod baselines;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod fluid;
pub mod lp;
pub mod model;
pub mod nn;
pub mod par;
pub mod ppo;
pub mod reduction;
pub mod sim;
pub mod stats;

pub use config::{ChargingCurve, NetworkConfig};
pub use error::{Error, Result};
pub use model::{AtomicAction, FleetAction, SystemState, TripStatus, VehicleStatus};
