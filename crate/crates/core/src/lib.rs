//! Transformation-ensemble defences for image classifiers and the attacks
//! used to evaluate them.

pub mod dataset;
pub mod layers;
pub mod network;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod transforms;
pub mod classifier;
pub mod persist;
pub mod attacks;
pub mod ensemble;
pub mod adaptive;
pub mod harness;
