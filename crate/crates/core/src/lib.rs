//! Simulation of thermal neoHebbian synapse arrays trained online with e-prop.

pub mod device;
pub mod eprop;
pub mod fdm;
pub mod error;
pub mod harness;
pub mod rng;
pub mod tasks;
pub mod thermal;
pub mod xbar;

pub use error::{Error, Result};
