//! Software emulator of a mixed-signal neuromorphic core with an experiment
//! harness for disynaptic delay elements and spatiotemporal feature detection.

pub mod config;
pub mod delaylab;
pub mod dynamics;
pub mod exec;
pub mod experiments;
pub mod fabric;
pub mod run;
pub mod sim;
pub mod stats;
pub mod stimulus;
