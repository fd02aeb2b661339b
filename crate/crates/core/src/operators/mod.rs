//! Measurement physics: the PET projector `A` and the MRI operator `F`.

pub mod fourier;
pub mod radon;

pub use fourier::{fourier_adjoint, fourier_forward, make_cartesian_mask, KSpaceData, SamplingMask};
pub use radon::{radon_adjoint, radon_forward, sensitivity, RadonGeometry, Sinogram};
