//! Heartbeat-driven cognitive activity scheduling.
//!
//! The crate is organized around a logical tick loop ([`engine`]) that picks
//! among registered thinking activities with a learned policy
//! ([`policy`]), credits delayed feedback onto past decisions ([`reward`]),
//! and consolidates its own trajectories while dreaming. The offline side
//! generates synthetic daily-activity data ([`synthgen`]), trains a multi-day
//! attention forecaster on it ([`forecaster`]) and scores predictions
//! ([`eval`]). Everything numeric lives in [`numkit`].

pub mod cli;
pub mod domain;
pub mod engine;
pub mod error;
pub mod eval;
pub mod forecaster;
pub mod numkit;
pub mod par;
pub mod persist;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod synthgen;

pub use error::{Error, Result};
