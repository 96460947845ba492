//! Reverse-mode automatic differentiation over `N x C x H x W` tensors.

pub mod checkpoint;
mod conv;
mod fgf;
pub mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, HasParams};
pub use graph::{BnMode, Gradients, Graph, NodeId, BN_EPS, BN_MOMENTUM};
pub use params::{AdamConfig, BatchNormStats, BnId, ParamId, ParamStore, Parameter};
pub use tensor::{Shape, Tensor};
