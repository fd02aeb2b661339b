//! Pixel-driven parallel-beam Radon projector and its exact adjoint.
//!
//! Pixel `(r, c)` of an `m x m` image sits at `x = c - (m-1)/2`,
//! `y = (m-1)/2 - r`. At angle `θ` it lands on detector coordinate
//! `t = x cos θ + y sin θ` and its value is split between the two nearest
//! detector bins by linear interpolation. The detector spans the image
//! diagonal, so every pixel lands inside it. The backprojector gathers with
//! the very same weights, which makes the pair adjoint to rounding error.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{RealGrid, Shape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadonGeometry {
    pub image_size: usize,
    pub n_detectors: usize,
    /// Projection angles in radians, strictly increasing in `[0, π)`.
    pub angles: Vec<f64>,
}

impl RadonGeometry {
    pub fn new(image_size: usize, n_detectors: usize, angles: Vec<f64>) -> Result<Self> {
        let geom = Self {
            image_size,
            n_detectors,
            angles,
        };
        geom.validate()?;
        Ok(geom)
    }

    /// `n_angles` angles spaced uniformly over `[0, π)`.
    pub fn uniform(image_size: usize, n_detectors: usize, n_angles: usize) -> Result<Self> {
        let angles = (0..n_angles)
            .map(|k| std::f64::consts::PI * k as f64 / n_angles as f64)
            .collect();
        Self::new(image_size, n_detectors, angles)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 {
            return Err(Error::Geometry("image_size must be positive".into()));
        }
        if self.n_detectors == 0 {
            return Err(Error::Geometry("n_detectors must be at least 1".into()));
        }
        if self.angles.is_empty() {
            return Err(Error::Geometry("at least one angle is required".into()));
        }
        if self
            .angles
            .iter()
            .any(|&a| !(0.0..std::f64::consts::PI).contains(&a))
        {
            return Err(Error::Geometry("angles must lie in [0, pi)".into()));
        }
        if self.angles.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Geometry("angles must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn n_angles(&self) -> usize {
        self.angles.len()
    }

    pub fn image_shape(&self) -> Shape {
        Shape::square(self.image_size)
    }

    /// Sinogram raster: detectors down, angles across.
    pub fn sinogram_shape(&self) -> Shape {
        Shape::new(self.n_detectors, self.angles.len())
    }

    /// Number of bins `M` in the Poisson sum.
    pub fn n_bins(&self) -> usize {
        self.n_detectors * self.angles.len()
    }

    /// Width of one detector bin in pixel units.
    pub fn bin_width(&self) -> f64 {
        self.image_size as f64 * std::f64::consts::SQRT_2 / self.n_detectors as f64
    }

    /// Detector coordinate of the centre of bin `k`.
    pub fn bin_center(&self, k: usize) -> f64 {
        let span = self.image_size as f64 * std::f64::consts::SQRT_2;
        -0.5 * span + (k as f64 + 0.5) * self.bin_width()
    }

    /// Detector coordinate `t` of the centre of pixel `(r, c)` at angle index `a`.
    pub fn pixel_offset(&self, a: usize, r: usize, c: usize) -> f64 {
        let (s, co) = self.angles[a].sin_cos();
        let half = (self.image_size as f64 - 1.0) / 2.0;
        (c as f64 - half) * co + (half - r as f64) * s
    }

    fn trig(&self) -> Vec<(f64, f64)> {
        self.angles.iter().map(|a| a.sin_cos()).collect()
    }
}

/// Lower bin index and interpolation weight for a detector coordinate.
/// The lower bin gets `1 - w`, the upper bin `w`; bins outside `0..n` are
/// dropped.
#[inline]
fn split(t: f64, half_span: f64, inv_bin: f64) -> (isize, f64) {
    let p = (t + half_span) * inv_bin - 0.5;
    let k0 = p.floor();
    (k0 as isize, p - k0)
}

struct Stencil {
    trig: Vec<(f64, f64)>,
    half: f64,
    half_span: f64,
    inv_bin: f64,
    n_det: isize,
}

impl Stencil {
    fn new(geom: &RadonGeometry) -> Self {
        let span = geom.image_size as f64 * std::f64::consts::SQRT_2;
        Self {
            trig: geom.trig(),
            half: (geom.image_size as f64 - 1.0) / 2.0,
            half_span: 0.5 * span,
            inv_bin: geom.n_detectors as f64 / span,
            n_det: geom.n_detectors as isize,
        }
    }

    #[inline]
    fn at(&self, a: usize, r: usize, c: usize) -> (isize, f64) {
        let (s, co) = self.trig[a];
        let t = (c as f64 - self.half) * co + (self.half - r as f64) * s;
        split(t, self.half_span, self.inv_bin)
    }
}

/// PET measurement: counts (or expected counts) per detector bin and angle.
///
/// `count_scale` is the factor `c` relating image activity to expected counts,
/// `λ = c·A u`. It is 1 for plain projections.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    pub geometry: RadonGeometry,
    pub data: RealGrid,
    pub count_scale: f64,
}

impl Sinogram {
    pub fn new(geometry: RadonGeometry, data: RealGrid, count_scale: f64) -> Result<Self> {
        geometry.validate()?;
        data.shape()
            .ensure_eq(geometry.sinogram_shape(), "sinogram vs geometry")?;
        if !(count_scale > 0.0 && count_scale.is_finite()) {
            return Err(Error::param("count_scale must be positive and finite"));
        }
        Ok(Self {
            geometry,
            data,
            count_scale,
        })
    }

    pub fn zeros(geometry: &RadonGeometry) -> Self {
        Self {
            geometry: geometry.clone(),
            data: RealGrid::zeros(geometry.sinogram_shape()),
            count_scale: 1.0,
        }
    }

    pub fn with_data(&self, data: RealGrid) -> Result<Self> {
        Self::new(self.geometry.clone(), data, self.count_scale)
    }
}

/// Forward projection `A u`.
pub fn radon_forward(u: &RealGrid, geom: &RadonGeometry) -> Result<Sinogram> {
    u.shape()
        .ensure_eq(geom.image_shape(), "radon_forward image vs geometry")?;
    let stencil = Stencil::new(geom);
    let m = geom.image_size;
    let n_det = geom.n_detectors;
    let img = u.data();
    let columns: Vec<Vec<f64>> = (0..geom.n_angles())
        .into_par_iter()
        .map(|a| {
            let mut col = vec![0.0; n_det];
            for r in 0..m {
                for c in 0..m {
                    let val = img[r * m + c];
                    if val == 0.0 {
                        continue;
                    }
                    let (k0, w) = stencil.at(a, r, c);
                    if k0 >= 0 && k0 < stencil.n_det {
                        col[k0 as usize] += (1.0 - w) * val;
                    }
                    let k1 = k0 + 1;
                    if k1 >= 0 && k1 < stencil.n_det {
                        col[k1 as usize] += w * val;
                    }
                }
            }
            col
        })
        .collect();
    let n_ang = geom.n_angles();
    let mut data = vec![0.0; n_det * n_ang];
    for (a, col) in columns.iter().enumerate() {
        for (k, &v) in col.iter().enumerate() {
            data[k * n_ang + a] = v;
        }
    }
    Ok(Sinogram {
        geometry: geom.clone(),
        data: RealGrid::from_parts(geom.sinogram_shape(), data),
        count_scale: 1.0,
    })
}

/// Backprojection `A* s`, gathering with the forward interpolation weights.
pub fn radon_adjoint(s: &Sinogram) -> Result<RealGrid> {
    let geom = &s.geometry;
    geom.validate()?;
    s.data
        .shape()
        .ensure_eq(geom.sinogram_shape(), "radon_adjoint sinogram vs geometry")?;
    let stencil = Stencil::new(geom);
    let m = geom.image_size;
    let n_ang = geom.n_angles();
    let sino = s.data.data();
    let mut out = vec![0.0; m * m];
    out.par_chunks_mut(m).enumerate().for_each(|(r, row)| {
        for (c, px) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for a in 0..n_ang {
                let (k0, w) = stencil.at(a, r, c);
                if k0 >= 0 && k0 < stencil.n_det {
                    acc += (1.0 - w) * sino[k0 as usize * n_ang + a];
                }
                let k1 = k0 + 1;
                if k1 >= 0 && k1 < stencil.n_det {
                    acc += w * sino[k1 as usize * n_ang + a];
                }
            }
            *px = acc;
        }
    });
    Ok(RealGrid::from_parts(geom.image_shape(), out))
}

/// `A* 1`, the per-pixel sensitivity.
pub fn sensitivity(geom: &RadonGeometry) -> Result<RealGrid> {
    let ones = Sinogram {
        geometry: geom.clone(),
        data: RealGrid::filled(geom.sinogram_shape(), 1.0),
        count_scale: 1.0,
    };
    radon_adjoint(&ones)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::InnerProduct;
    use crate::rng::RandomStream;

    fn random_grid(shape: Shape, stream: &mut RandomStream) -> RealGrid {
        RealGrid::from_fn(shape, |_, _| stream.normal())
    }

    #[test]
    fn zero_image_projects_to_zero() {
        let geom = RadonGeometry::uniform(16, 24, 10).unwrap();
        let s = radon_forward(&RealGrid::zeros(geom.image_shape()), &geom).unwrap();
        assert!(s.data.data().iter().all(|&x| x == 0.0));
        let back = radon_adjoint(&Sinogram::zeros(&geom)).unwrap();
        assert!(back.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn impulse_projects_unit_mass_at_every_angle() {
        let geom = RadonGeometry::new(33, 47, vec![0.0, 0.4, 1.3, 2.9]).unwrap();
        let mut u = RealGrid::zeros(geom.image_shape());
        u.set(16, 16, 1.0);
        let s = radon_forward(&u, &geom).unwrap();
        for a in 0..geom.n_angles() {
            let total: f64 = (0..geom.n_detectors).map(|k| s.data.get(k, a)).sum();
            assert!((total - 1.0).abs() < 1e-6, "angle {a}: {total}");
        }
    }

    #[test]
    fn adjoint_identity_on_random_pairs() {
        let geom = RadonGeometry::uniform(20, 29, 13).unwrap();
        let mut stream = RandomStream::new(5, "radon-adjoint");
        for _ in 0..10 {
            let u = random_grid(geom.image_shape(), &mut stream);
            let y = Sinogram::new(geom.clone(), random_grid(geom.sinogram_shape(), &mut stream), 1.0).unwrap();
            let lhs = radon_forward(&u, &geom).unwrap().data.inner(&y.data).unwrap();
            let rhs = u.inner(&radon_adjoint(&y).unwrap()).unwrap();
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let geom = RadonGeometry::uniform(8, 8, 4).unwrap();
        assert!(radon_forward(&RealGrid::zeros(Shape::square(9)), &geom).is_err());
    }

    #[test]
    fn geometry_validation() {
        assert!(RadonGeometry::new(8, 0, vec![0.0]).is_err());
        assert!(RadonGeometry::new(8, 4, vec![0.5, 0.5]).is_err());
        assert!(RadonGeometry::new(8, 4, vec![3.2]).is_err());
        assert!(RadonGeometry::new(8, 4, vec![]).is_err());
    }

    #[test]
    fn every_pixel_is_seen_by_every_angle() {
        let geom = RadonGeometry::uniform(32, 64, 60).unwrap();
        let sens = sensitivity(&geom).unwrap();
        assert!(sens.min() > 0.0);
    }
}
