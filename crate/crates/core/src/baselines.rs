//! Classical single-modality reconstructions: MLEM for PET, zero-filled and
//! TV-regularized least squares for MRI.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ComplexGrid, RealGrid};
use crate::operators::{fourier_adjoint, radon_adjoint, radon_forward, sensitivity, KSpaceData, Sinogram};
use crate::sampler::{gaussian_dc_gradient, gaussian_objective, poisson_objective};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlemConfig {
    pub iterations: usize,
    pub floor: f64,
}

impl Default for MlemConfig {
    fn default() -> Self {
        Self {
            iterations: 20,
            floor: 1e-8,
        }
    }
}

impl MlemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::param("MLEM needs at least one iteration"));
        }
        if !(self.floor > 0.0) {
            return Err(Error::param("MLEM floor must be positive"));
        }
        Ok(())
    }
}

/// Result of an iterative baseline with its objective after each iteration;
/// entry 0 is the objective of the starting image.
#[derive(Clone, Debug, PartialEq)]
pub struct Iterates<T> {
    pub image: T,
    pub objective: Vec<f64>,
}

/// Backprojection of ones, checked to be positive on the inscribed circle.
fn checked_sensitivity(f: &Sinogram) -> Result<RealGrid> {
    let sens = sensitivity(&f.geometry)?;
    let m = f.geometry.image_size as f64;
    let c = (m - 1.0) / 2.0;
    for r in 0..sens.height() {
        for col in 0..sens.width() {
            let d = ((r as f64 - c).powi(2) + (col as f64 - c).powi(2)).sqrt();
            if d <= m / 2.0 && !(sens.get(r, col) > 0.0) {
                return Err(Error::Geometry(format!(
                    "pixel ({r}, {col}) inside the reconstruction circle is never seen by the scanner"
                )));
            }
        }
    }
    Ok(sens)
}

/// MLEM from the uniform image `u = 1`.
pub fn mlem(f: &Sinogram, cfg: &MlemConfig) -> Result<Iterates<RealGrid>> {
    mlem_from(f, cfg, RealGrid::filled(f.geometry.image_shape(), 1.0), |_, _| {})
}

/// MLEM `u ← (u ⊘ A*1) ∘ A*(f ⊘ max(c·A u, floor))` from `start`, calling
/// `observe(k, u_k)` after every iteration.
pub fn mlem_from(
    f: &Sinogram,
    cfg: &MlemConfig,
    start: RealGrid,
    mut observe: impl FnMut(usize, &RealGrid),
) -> Result<Iterates<RealGrid>> {
    cfg.validate()?;
    if f.data.data().iter().any(|&y| !(y >= 0.0)) {
        return Err(Error::param("MLEM needs nonnegative counts"));
    }
    if start.data().iter().any(|&v| v < 0.0) {
        return Err(Error::param("MLEM needs a nonnegative start"));
    }
    start.shape().ensure_eq(f.geometry.image_shape(), "MLEM start")?;
    let sens = checked_sensitivity(f)?;
    let c = f.count_scale;
    let mut u = start;
    let mut objective = vec![poisson_objective(&u, f, cfg.floor)?];
    for k in 1..=cfg.iterations {
        let au = radon_forward(&u, &f.geometry)?;
        let ratio = RealGrid::from_fn(au.data.shape(), |r, col| {
            f.data.get(r, col) / (c * au.data.get(r, col)).max(cfg.floor)
        });
        let back = radon_adjoint(&f.with_data(ratio)?)?;
        for ((x, &b), &s) in u.data_mut().iter_mut().zip(back.data()).zip(sens.data()) {
            *x = if s > 0.0 { *x * b / s } else { 0.0 };
        }
        observe(k, &u);
        objective.push(poisson_objective(&u, f, cfg.floor)?);
    }
    Ok(Iterates { image: u, objective })
}

/// `F* g`.
pub fn zero_filled(g: &KSpaceData) -> Result<ComplexGrid> {
    fourier_adjoint(g)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TvConfig {
    pub iterations: usize,
    pub step_size: f64,
    pub tv_weight: f64,
}

impl Default for TvConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            step_size: 1.0,
            tv_weight: 0.002,
        }
    }
}

impl TvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::param("TV needs at least one iteration"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::param("TV step size must be positive"));
        }
        if !(self.tv_weight >= 0.0) {
            return Err(Error::param("TV weight must be nonnegative"));
        }
        Ok(())
    }
}

pub const TV_EPSILON: f64 = 1e-6;

/// Forward differences with a zero difference past the last row/column.
fn differences(v: &ComplexGrid) -> (Vec<Complex64>, Vec<Complex64>) {
    let (h, w) = (v.height(), v.width());
    let mut dx = vec![Complex64::new(0.0, 0.0); h * w];
    let mut dy = dx.clone();
    for r in 0..h {
        for c in 0..w {
            let x = v.get(r, c);
            if c + 1 < w {
                dx[r * w + c] = v.get(r, c + 1) - x;
            }
            if r + 1 < h {
                dy[r * w + c] = v.get(r + 1, c) - x;
            }
        }
    }
    (dx, dy)
}

/// `Σ sqrt(|∂x v|² + |∂y v|² + ε)`.
pub fn tv_smooth(v: &ComplexGrid) -> f64 {
    let (dx, dy) = differences(v);
    dx.iter()
        .zip(&dy)
        .map(|(a, b)| (a.norm_sqr() + b.norm_sqr() + TV_EPSILON).sqrt())
        .sum()
}

/// Gradient of [`tv_smooth`] with respect to the real and imaginary parts,
/// packed as `re + i·im`.
pub fn tv_gradient(v: &ComplexGrid) -> ComplexGrid {
    let (h, w) = (v.height(), v.width());
    let (dx, dy) = differences(v);
    let px: Vec<Complex64> = dx
        .iter()
        .zip(&dy)
        .map(|(a, b)| a / (a.norm_sqr() + b.norm_sqr() + TV_EPSILON).sqrt())
        .collect();
    let py: Vec<Complex64> = dx
        .iter()
        .zip(&dy)
        .map(|(a, b)| b / (a.norm_sqr() + b.norm_sqr() + TV_EPSILON).sqrt())
        .collect();
    // Adjoint of the forward differences applied to (px, py).
    ComplexGrid::from_fn(v.shape(), |r, c| {
        let i = r * w + c;
        let mut g = Complex64::new(0.0, 0.0);
        if c + 1 < w {
            g -= px[i];
        }
        if c > 0 {
            g += px[i - 1];
        }
        if r + 1 < h {
            g -= py[i];
        }
        if r > 0 {
            g += py[i - w];
        }
        g
    })
}

fn tv_objective(v: &ComplexGrid, g: &KSpaceData, weight: f64) -> Result<f64> {
    let tv = if weight > 0.0 { weight * tv_smooth(v) } else { 0.0 };
    Ok(gaussian_objective(v, g)? + tv)
}

/// Gradient descent on `½‖mask∘F v − g‖² + λ_tv TV_ε(v)` from the
/// zero-filled image. A step that raises the objective is rejected and the
/// step size halved.
pub fn tv_cs(g: &KSpaceData, cfg: &TvConfig) -> Result<Iterates<ComplexGrid>> {
    cfg.validate()?;
    let mut v = zero_filled(g)?;
    let mut obj = tv_objective(&v, g, cfg.tv_weight)?;
    let mut objective = vec![obj];
    let mut step = cfg.step_size;
    for k in 1..=cfg.iterations {
        let mut grad = gaussian_dc_gradient(&v, g)?;
        if cfg.tv_weight > 0.0 {
            grad = grad.add_scaled(cfg.tv_weight, &tv_gradient(&v))?;
        }
        loop {
            let trial = v.add_scaled(-step, &grad)?;
            let trial_obj = tv_objective(&trial, g, cfg.tv_weight)?;
            if !trial_obj.is_finite() {
                return Err(Error::Divergence {
                    level: k,
                    reason: format!("TV objective became {trial_obj}"),
                });
            }
            if trial_obj <= obj {
                v = trial;
                obj = trial_obj;
                break;
            }
            step *= 0.5;
            if step < 1e-12 {
                break;
            }
        }
        objective.push(obj);
        if step < 1e-12 {
            break;
        }
    }
    Ok(Iterates { image: v, objective })
}
