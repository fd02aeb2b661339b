//! Row-major 2-D grids of real and complex scalars.
//!
//! Grids are plain values: every operator in the crate takes them by
//! reference and returns new grids, so a grid can be shared freely between
//! threads once built.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Height and width of a grid, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub const fn square(n: usize) -> Self {
        Self::new(n, n)
    }

    pub const fn len(&self) -> usize {
        self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn ensure_eq(self, other: Shape, what: &str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::dim(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )))
        }
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

macro_rules! grid_common {
    ($name:ident, $scalar:ty) => {
        impl $name {
            /// Builds a grid from row-major data, rejecting wrong lengths and
            /// non-finite entries.
            pub fn new(height: usize, width: usize, data: Vec<$scalar>) -> Result<Self> {
                if data.len() != height * width {
                    return Err(Error::dim(format!(
                        "{} data has {} entries, expected {}x{}",
                        stringify!($name),
                        data.len(),
                        height,
                        width
                    )));
                }
                let grid = Self {
                    shape: Shape::new(height, width),
                    data,
                };
                if !grid.is_finite() {
                    return Err(Error::param(format!(
                        "{} contains non-finite entries",
                        stringify!($name)
                    )));
                }
                Ok(grid)
            }

            /// Unchecked constructor for operator outputs whose length is known.
            pub(crate) fn from_parts(shape: Shape, data: Vec<$scalar>) -> Self {
                debug_assert_eq!(shape.len(), data.len());
                Self { shape, data }
            }

            pub fn zeros(shape: Shape) -> Self {
                Self::from_parts(shape, vec![<$scalar>::default(); shape.len()])
            }

            pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize) -> $scalar) -> Self {
                let mut data = Vec::with_capacity(shape.len());
                for r in 0..shape.height {
                    for c in 0..shape.width {
                        data.push(f(r, c));
                    }
                }
                Self::from_parts(shape, data)
            }

            pub fn shape(&self) -> Shape {
                self.shape
            }

            pub fn height(&self) -> usize {
                self.shape.height
            }

            pub fn width(&self) -> usize {
                self.shape.width
            }

            pub fn len(&self) -> usize {
                self.data.len()
            }

            pub fn is_empty(&self) -> bool {
                self.data.is_empty()
            }

            pub fn data(&self) -> &[$scalar] {
                &self.data
            }

            pub fn data_mut(&mut self) -> &mut [$scalar] {
                &mut self.data
            }

            pub fn into_data(self) -> Vec<$scalar> {
                self.data
            }

            pub fn get(&self, row: usize, col: usize) -> $scalar {
                self.data[row * self.shape.width + col]
            }

            pub fn set(&mut self, row: usize, col: usize, value: $scalar) {
                self.data[row * self.shape.width + col] = value;
            }

            pub fn scaled(&self, factor: f64) -> Self {
                Self::from_parts(self.shape, self.data.iter().map(|&x| x * factor).collect())
            }

            /// `self + alpha * other`.
            pub fn add_scaled(&self, alpha: f64, other: &Self) -> Result<Self> {
                self.shape.ensure_eq(other.shape, "add_scaled")?;
                let data = self
                    .data
                    .iter()
                    .zip(&other.data)
                    .map(|(&a, &b)| a + b * alpha)
                    .collect();
                Ok(Self::from_parts(self.shape, data))
            }

            pub fn sub(&self, other: &Self) -> Result<Self> {
                self.add_scaled(-1.0, other)
            }

            pub fn norm(&self) -> f64 {
                self.norm_sqr().sqrt()
            }
        }
    };
}

/// Real-valued image or measurement grid (PET activity, sinogram counts).
#[derive(Clone, Debug, PartialEq)]
pub struct RealGrid {
    shape: Shape,
    data: Vec<f64>,
}

grid_common!(RealGrid, f64);

impl RealGrid {
    pub fn filled(shape: Shape, value: f64) -> Self {
        Self::from_parts(shape, vec![value; shape.len()])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(self.shape, self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn clamp_min(&mut self, floor: f64) {
        for x in &mut self.data {
            if *x < floor {
                *x = floor;
            }
        }
    }

    pub fn to_complex(&self) -> ComplexGrid {
        ComplexGrid::from_parts(
            self.shape,
            self.data.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
        )
    }
}

/// Complex-valued grid (MRI image, k-space).
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGrid {
    shape: Shape,
    data: Vec<Complex64>,
}

grid_common!(ComplexGrid, Complex64);

impl ComplexGrid {
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn magnitude(&self) -> RealGrid {
        RealGrid::from_parts(self.shape, self.data.iter().map(|z| z.norm()).collect())
    }

    pub fn real_part(&self) -> RealGrid {
        RealGrid::from_parts(self.shape, self.data.iter().map(|z| z.re).collect())
    }

    pub fn imag_part(&self) -> RealGrid {
        RealGrid::from_parts(self.shape, self.data.iter().map(|z| z.im).collect())
    }

    /// Assembles a complex grid from separate real and imaginary planes.
    pub fn from_re_im(re: &RealGrid, im: &RealGrid) -> Result<Self> {
        re.shape.ensure_eq(im.shape, "from_re_im")?;
        Ok(Self::from_parts(
            re.shape,
            re.data
                .iter()
                .zip(&im.data)
                .map(|(&a, &b)| Complex64::new(a, b))
                .collect(),
        ))
    }
}

/// Inner products over same-shape grids, conjugate-linear in the first
/// argument for complex grids.
pub trait InnerProduct {
    type Output;
    fn inner(&self, other: &Self) -> Result<Self::Output>;
}

impl InnerProduct for RealGrid {
    type Output = f64;

    fn inner(&self, other: &Self) -> Result<f64> {
        self.shape.ensure_eq(other.shape, "inner product")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }
}

impl InnerProduct for ComplexGrid {
    type Output = Complex64;

    fn inner(&self, other: &Self) -> Result<Complex64> {
        self.shape.ensure_eq(other.shape, "inner product")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }
}

/// `⟨a, b⟩`; see [`InnerProduct`].
pub fn inner_product<G: InnerProduct>(a: &G, b: &G) -> Result<G::Output> {
    a.inner(b)
}

/// The joint unknown: a nonnegative PET activity image and a complex MRI
/// image on the same raster.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pet: RealGrid,
    mri: ComplexGrid,
}

impl ImagePair {
    pub fn new(pet: RealGrid, mri: ComplexGrid) -> Result<Self> {
        pet.shape().ensure_eq(mri.shape(), "image pair")?;
        if pet.data().iter().any(|&x| x < 0.0) {
            return Err(Error::param("PET activity must be nonnegative"));
        }
        Ok(Self { pet, mri })
    }

    pub fn shape(&self) -> Shape {
        self.pet.shape()
    }

    pub fn pet(&self) -> &RealGrid {
        &self.pet
    }

    pub fn mri(&self) -> &ComplexGrid {
        &self.mri
    }

    pub fn into_parts(self) -> (RealGrid, ComplexGrid) {
        (self.pet, self.mri)
    }
}
