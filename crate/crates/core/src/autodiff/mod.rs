//! Minimal reverse-mode automatic differentiation over dense matrices.

mod graph;
mod layers;
mod matrix;
mod optim;

pub use graph::{sigmoid, Graph, Var, BCE_EPS};
pub use layers::{Activation, BoundParams, DenseLayer, Mlp, LEAKY_SLOPE};
pub use matrix::Matrix;
pub use optim::{AdamConfig, AdamState};
