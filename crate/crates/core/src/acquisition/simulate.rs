//! Noisy measurement simulation: Poisson PET counts and Gaussian k-space.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ComplexGrid, RealGrid};
use crate::operators::{fourier_forward, radon_forward, KSpaceData, RadonGeometry, SamplingMask, Sinogram};
use crate::rng::RandomStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionConfig {
    /// Expected total sinogram counts.
    pub counts_target: f64,
    /// Per-component standard deviation of the k-space noise.
    pub mri_noise_std: f64,
    /// Cartesian acceleration factor R.
    pub accel: f64,
    pub center_fraction: f64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            counts_target: 1e5,
            mri_noise_std: 0.01,
            accel: 4.0,
            center_fraction: 0.08,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.counts_target > 0.0 && self.counts_target.is_finite()) {
            return Err(Error::param("counts_target must be positive"));
        }
        if !(self.mri_noise_std >= 0.0 && self.mri_noise_std.is_finite()) {
            return Err(Error::param("mri_noise_std must be nonnegative"));
        }
        if !(self.accel >= 1.0) {
            return Err(Error::param("accel must be >= 1"));
        }
        if !(self.center_fraction > 0.0 && self.center_fraction < 1.0) {
            return Err(Error::param("center_fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Simulates a PET acquisition of activity `u`.
///
/// The expected counts are `λ = c·A u` with `c` chosen so that `Σλ` equals
/// `counts_target`; `c` is stored as the sinogram's `count_scale`. With a
/// stream each bin is an independent Poisson draw, without one the expected
/// counts are returned.
pub fn simulate_pet(
    u: &RealGrid,
    geom: &RadonGeometry,
    cfg: &AcquisitionConfig,
    stream: Option<&mut RandomStream>,
) -> Result<Sinogram> {
    cfg.validate()?;
    if u.data().iter().any(|&x| x < 0.0) {
        return Err(Error::param("PET activity must be nonnegative"));
    }
    let projection = radon_forward(u, geom)?;
    let total = projection.data.sum();
    if total <= 0.0 {
        if u.data().iter().all(|&x| x == 0.0) && stream.is_none() {
            // Nothing to scale: the noiseless projection of zero is zero.
            return Ok(projection);
        }
        return Err(Error::Simulation(
            "forward projection is identically zero; cannot reach counts_target".into(),
        ));
    }
    let scale = cfg.counts_target / total;
    let expected = projection.data.scaled(scale);
    let mut data = expected;
    if let Some(s) = stream {
        for lam in data.data_mut() {
            *lam = s.poisson(*lam);
        }
    }
    Sinogram::new(geom.clone(), data, scale)
}

/// Simulates an MRI acquisition: `g = mask ∘ (F v + η)` with complex Gaussian
/// `η` of per-component standard deviation `mri_noise_std`.
pub fn simulate_mri(
    v: &ComplexGrid,
    mask: &SamplingMask,
    cfg: &AcquisitionConfig,
    stream: &mut RandomStream,
) -> Result<KSpaceData> {
    cfg.validate()?;
    let clean = fourier_forward(v, mask)?;
    if cfg.mri_noise_std == 0.0 {
        return Ok(clean);
    }
    let sd = cfg.mri_noise_std;
    let w = mask.shape().width;
    let mut data = clean.into_data();
    for (i, z) in data.data_mut().iter_mut().enumerate() {
        if mask.is_kept(i % w) {
            *z += Complex64::new(sd * stream.normal(), sd * stream.normal());
        }
    }
    KSpaceData::new(mask.clone(), data)
}
