//! Simulation and numerical certification of finite-time blow-up for the
//! radially symmetric chemotaxis system with indirect signal production.

pub mod config;
pub mod experiment;
pub mod grid;
pub mod mass;
pub mod model;
pub mod radial;
pub mod subsolution;
pub mod tridiag;
pub mod verifier;
