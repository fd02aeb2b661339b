//! Joint PET–MRI reconstruction with a score-based diffusion prior.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquisition;
pub mod baselines;
pub mod error;
pub mod eval;
pub mod grid;
pub mod io;
pub mod operators;
pub mod prior;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
pub use grid::{inner_product, ComplexGrid, ImagePair, InnerProduct, RealGrid, Shape};
pub use rng::{draw_gaussian, NormalSource, RandomStream, ZeroNoise};
