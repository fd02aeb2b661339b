//! Data-consistency terms: Poisson log-likelihood for the sinogram and the
//! Gaussian least-squares term for k-space.

use crate::error::Result;
use crate::grid::{ComplexGrid, RealGrid};
use crate::operators::{fourier_adjoint, fourier_forward, radon_adjoint, radon_forward, KSpaceData, Sinogram};

/// Expected counts `max(c·A u, δ)` for the sinogram's count scale `c`.
fn expected_counts(u: &RealGrid, f: &Sinogram, floor: f64) -> Result<RealGrid> {
    let au = radon_forward(u, &f.geometry)?;
    Ok(au.data.map(|v| (f.count_scale * v).max(floor)))
}

/// `Σ_j (λ_j − f_j log λ_j)` with `λ = max(c·A u, δ)`.
pub fn poisson_objective(u: &RealGrid, f: &Sinogram, floor: f64) -> Result<f64> {
    let lambda = expected_counts(u, f, floor)?;
    Ok(lambda
        .data()
        .iter()
        .zip(f.data.data())
        .map(|(&l, &y)| l - if y > 0.0 { y * l.ln() } else { 0.0 })
        .sum())
}

/// Gradient of [`poisson_objective`] in `u`: `c·A*(1 − f ⊘ max(c·A u, δ))`.
/// With `c = 1` this is `A*(1 − f ⊘ max(A u, δ))`.
pub fn poisson_dc_gradient(u: &RealGrid, f: &Sinogram, floor: f64) -> Result<RealGrid> {
    let lambda = expected_counts(u, f, floor)?;
    let ratio = RealGrid::from_fn(lambda.shape(), |r, c| {
        f.count_scale * (1.0 - f.data.get(r, c) / lambda.get(r, c))
    });
    radon_adjoint(&f.with_data(ratio)?)
}

/// `½‖mask∘F v − g‖²`.
pub fn gaussian_objective(v: &ComplexGrid, g: &KSpaceData) -> Result<f64> {
    let fv = fourier_forward(v, g.mask())?;
    Ok(0.5 * fv.data().sub(g.data())?.norm_sqr())
}

/// `F*(mask∘F v − g)`.
pub fn gaussian_dc_gradient(v: &ComplexGrid, g: &KSpaceData) -> Result<ComplexGrid> {
    let fv = fourier_forward(v, g.mask())?;
    let residual = fv.data().sub(g.data())?;
    fourier_adjoint(&KSpaceData::new(g.mask().clone(), residual)?)
}

/// Largest eigenvalue of the Poisson Fisher information
/// `c² A* diag(1/max(f, 1)) A`, by power iteration. Sets how strongly the
/// sinogram constrains the image, in the same units as the MRI term's unit
/// curvature.
pub fn poisson_curvature(f: &Sinogram, iterations: usize) -> Result<f64> {
    let shape = f.geometry.image_shape();
    let weights = f.data.map(|y| f.count_scale * f.count_scale / y.max(1.0));
    let mut x = RealGrid::filled(shape, 1.0 / (shape.len() as f64).sqrt());
    let mut eig = 0.0;
    for _ in 0..iterations.max(1) {
        let ax = radon_forward(&x, &f.geometry)?;
        let wax = RealGrid::from_fn(ax.data.shape(), |r, c| weights.get(r, c) * ax.data.get(r, c));
        let y = radon_adjoint(&f.with_data(wax)?)?;
        let n = y.norm();
        if n == 0.0 {
            return Ok(0.0);
        }
        eig = n;
        x = y.scaled(1.0 / n);
    }
    Ok(eig)
}

/// `u` with negative entries set to zero.
pub fn positive_part(u: &RealGrid) -> RealGrid {
    u.map(|v| v.max(0.0))
}
