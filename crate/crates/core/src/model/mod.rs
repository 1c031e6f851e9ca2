//! The multitask network: a shared convolutional trunk, a scene branch and a
//! frame-wise event branch, with optional gradient reversal.

pub mod config;
pub mod graph;

pub use config::{Architecture, GrlConfig, GrlPosition, NetworkConfig, Variant};
pub use graph::{build_network, LayerGraph, Manifest, NetworkOutput, Node, Predictions, StepLosses, Targets};
