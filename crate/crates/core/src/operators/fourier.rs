//! Centered, unitary 2-D DFT restricted to a Cartesian line mask.
//!
//! `F v = M · shift(DFT(ishift(v))) / sqrt(h·w)`, where `M` zeroes the
//! k-space columns the mask does not keep. With the full mask `F* F = I`.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ComplexGrid, Shape};
use crate::rng::RandomStream;

/// Cartesian phase-encode mask: one flag per k-space column, constant down
/// each column.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SamplingMask {
    shape: Shape,
    kept: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct MaskFile {
    height: usize,
    width: usize,
    kept_lines: Vec<usize>,
}

impl SamplingMask {
    pub fn new(shape: Shape, kept: Vec<bool>) -> Result<Self> {
        if kept.len() != shape.width {
            return Err(Error::dim(format!(
                "mask has {} line flags for width {}",
                kept.len(),
                shape.width
            )));
        }
        if !kept.iter().any(|&k| k) {
            return Err(Error::param("mask must keep at least one line"));
        }
        if !kept[shape.width / 2] {
            return Err(Error::param("mask must keep the centre line"));
        }
        Ok(Self { shape, kept })
    }

    pub fn full(shape: Shape) -> Self {
        Self {
            shape,
            kept: vec![true; shape.width],
        }
    }

    pub fn from_kept_lines(shape: Shape, lines: &[usize]) -> Result<Self> {
        let mut kept = vec![false; shape.width];
        for &l in lines {
            if l >= shape.width {
                return Err(Error::dim(format!("kept line {l} outside width {}", shape.width)));
            }
            kept[l] = true;
        }
        Self::new(shape, kept)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn is_kept(&self, col: usize) -> bool {
        self.kept[col]
    }

    pub fn kept_lines(&self) -> Vec<usize> {
        (0..self.kept.len()).filter(|&c| self.kept[c]).collect()
    }

    pub fn n_kept(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }

    /// Zeroes unkept columns in place.
    pub fn apply(&self, grid: &mut ComplexGrid) -> Result<()> {
        grid.shape().ensure_eq(self.shape, "mask vs grid")?;
        let w = self.shape.width;
        for (i, z) in grid.data_mut().iter_mut().enumerate() {
            if !self.kept[i % w] {
                *z = Complex64::new(0.0, 0.0);
            }
        }
        Ok(())
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(MaskFile {
            height: self.shape.height,
            width: self.shape.width,
            kept_lines: self.kept_lines(),
        })
        .expect("mask serializes")
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::io::write_json(&self.to_json_value(), path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file: MaskFile = crate::io::read_json(path)?;
        Self::from_kept_lines(Shape::new(file.height, file.width), &file.kept_lines)
    }
}

/// MRI measurement: masked k-space samples.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpaceData {
    mask: SamplingMask,
    data: ComplexGrid,
}

impl KSpaceData {
    /// Rejects data with nonzero entries outside the mask.
    pub fn new(mask: SamplingMask, data: ComplexGrid) -> Result<Self> {
        data.shape().ensure_eq(mask.shape, "k-space vs mask")?;
        let w = mask.shape.width;
        let leaked = data
            .data()
            .iter()
            .enumerate()
            .any(|(i, z)| !mask.kept[i % w] && (z.re != 0.0 || z.im != 0.0));
        if leaked {
            return Err(Error::param("k-space data is nonzero outside the mask"));
        }
        Ok(Self { mask, data })
    }

    pub fn zeros(mask: &SamplingMask) -> Self {
        Self {
            mask: mask.clone(),
            data: ComplexGrid::zeros(mask.shape),
        }
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }

    pub fn data(&self) -> &ComplexGrid {
        &self.data
    }

    pub fn into_data(self) -> ComplexGrid {
        self.data
    }
}

#[derive(Clone, Copy)]
enum Direction {
    Forward,
    Inverse,
}

/// `out[(i + n/2) % n] = in[i]` along both axes (or its inverse).
fn shift2(data: &[Complex64], shape: Shape, inverse: bool) -> Vec<Complex64> {
    let (h, w) = (shape.height, shape.width);
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    for r in 0..h {
        for c in 0..w {
            let (dst, src) = if inverse {
                ((r, c), ((r + h / 2) % h, (c + w / 2) % w))
            } else {
                (((r + h / 2) % h, (c + w / 2) % w), (r, c))
            };
            out[dst.0 * w + dst.1] = data[src.0 * w + src.1];
        }
    }
    out
}

fn transpose(data: &[Complex64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    for r in 0..h {
        for c in 0..w {
            out[c * h + r] = data[r * w + c];
        }
    }
    out
}

/// Centered unitary 2-D transform.
fn centered_dft(input: &ComplexGrid, dir: Direction) -> ComplexGrid {
    let shape = input.shape();
    let (h, w) = (shape.height, shape.width);
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = match dir {
        Direction::Forward => (planner.plan_fft_forward(w), planner.plan_fft_forward(h)),
        Direction::Inverse => (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h)),
    };
    let mut buf = shift2(input.data(), shape, true);
    row_fft.process(&mut buf);
    let mut cols = transpose(&buf, h, w);
    col_fft.process(&mut cols);
    let buf = transpose(&cols, w, h);
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let out = shift2(&buf, shape, false)
        .into_iter()
        .map(|z| z * scale)
        .collect();
    ComplexGrid::from_parts(shape, out)
}

/// `F v`: unitary centered DFT followed by the mask.
pub fn fourier_forward(v: &ComplexGrid, mask: &SamplingMask) -> Result<KSpaceData> {
    v.shape().ensure_eq(mask.shape, "fourier_forward image vs mask")?;
    let mut k = centered_dft(v, Direction::Forward);
    mask.apply(&mut k)?;
    Ok(KSpaceData {
        mask: mask.clone(),
        data: k,
    })
}

/// `F* g`: mask, then the inverse unitary centered DFT.
pub fn fourier_adjoint(g: &KSpaceData) -> Result<ComplexGrid> {
    let mut k = g.data.clone();
    g.mask.apply(&mut k)?;
    Ok(centered_dft(&k, Direction::Inverse))
}

/// Cartesian line mask over the `shape.width` phase-encode lines.
///
/// Keeps exactly `⌈n/R⌉` lines: the `⌈n·center_fraction⌉` lines around the
/// centre always, the rest drawn uniformly without replacement from `stream`.
pub fn make_cartesian_mask(
    shape: Shape,
    accel: f64,
    center_fraction: f64,
    stream: &mut RandomStream,
) -> Result<SamplingMask> {
    let n = shape.width;
    if n == 0 || shape.height == 0 {
        return Err(Error::param("mask shape must be nonempty"));
    }
    if !(accel >= 1.0 && accel.is_finite()) {
        return Err(Error::param(format!("acceleration must be >= 1, got {accel}")));
    }
    if !(center_fraction > 0.0 && center_fraction < 1.0) {
        return Err(Error::param(format!(
            "center_fraction must lie in (0, 1), got {center_fraction}"
        )));
    }
    let n_keep = ((n as f64 / accel) - 1e-9).ceil().max(1.0) as usize;
    let n_center = ((n as f64 * center_fraction) - 1e-9).ceil().max(1.0) as usize;
    if n_center > n_keep {
        return Err(Error::param(format!(
            "{n_center} centre lines exceed the {n_keep} lines allowed at R = {accel}"
        )));
    }
    let start = n / 2 - n_center / 2;
    let mut kept = vec![false; n];
    for k in kept.iter_mut().skip(start).take(n_center) {
        *k = true;
    }
    let outer: Vec<usize> = (0..n).filter(|&c| !kept[c]).collect();
    for i in stream.sample_indices(outer.len(), n_keep - n_center) {
        kept[outer[i]] = true;
    }
    SamplingMask::new(shape, kept)
}
