//! Pansharpening with a fast-guided-filter GAN.
//!
//! The crate covers the whole pipeline: image containers and resampling,
//! guided filtering, a small reverse-mode autodiff engine, the generator and
//! discriminator networks with their training loop, classical baselines and
//! the usual quality metrics.

pub mod autodiff;
pub mod baselines;
pub mod error;
pub mod gan;
pub mod guided;
pub mod image;
pub mod metrics;
pub mod real;

pub use error::{Error, Result};
pub use guided::{box_filter, fast_guided_filter, guided_filter, FilterParams};
pub use image::ImageTensor;
pub use metrics::{EvalReport, MetricsReport};
pub use real::Real;
