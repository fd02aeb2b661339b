//! Synthetic paired PET/MRI phantoms.
//!
//! Both images of a pair are painted from one set of ellipses (head outline,
//! interior structures and small lesions), so they share supports and edges.
//! Each modality draws its own intensity for every ellipse. The PET image
//! additionally carries smooth Gaussian uptake blobs, and the MRI image a
//! smooth low-order polynomial phase.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ComplexGrid, ImagePair, RealGrid, Shape};
use crate::rng::RandomStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub size: usize,
    /// Inclusive range for the number of interior ellipses.
    pub n_ellipses: (usize, usize),
    /// Inclusive range for the number of lesions.
    pub lesion_count: (usize, usize),
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            size: 64,
            n_ellipses: (3, 6),
            lesion_count: (1, 3),
        }
    }
}

impl PhantomSpec {
    pub fn with_size(size: usize) -> Self {
        Self {
            size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 16 {
            return Err(Error::param(format!(
                "phantom size must be >= 16, got {}",
                self.size
            )));
        }
        for (name, (lo, hi)) in [("n_ellipses", self.n_ellipses), ("lesion_count", self.lesion_count)] {
            if lo < 1 || hi < lo {
                return Err(Error::param(format!(
                    "{name} range must satisfy 1 <= min <= max, got {lo}..={hi}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    angle: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * c + dy * s) / self.a;
        let v = (-dx * s + dy * c) / self.b;
        u * u + v * v <= 1.0
    }
}

/// Normalized coordinates in [-1, 1] of pixel `(r, c)`.
fn coords(size: usize, r: usize, c: usize) -> (f64, f64) {
    let half = (size as f64 - 1.0) / 2.0;
    ((c as f64 - half) / half, (half - r as f64) / half)
}

/// Generates one aligned PET/MRI pair.
pub fn make_phantom_pair(spec: &PhantomSpec, stream: &mut RandomStream) -> Result<ImagePair> {
    spec.validate()?;
    let m = spec.size;
    let shape = Shape::square(m);

    let head = Ellipse {
        cx: stream.uniform_range(-0.05, 0.05),
        cy: stream.uniform_range(-0.05, 0.05),
        a: stream.uniform_range(0.72, 0.88),
        b: stream.uniform_range(0.62, 0.82),
        angle: stream.uniform_range(-0.3, 0.3),
    };
    // (ellipse, mri intensity, pet intensity), painted in order
    let mut layers = vec![(head, stream.uniform_range(0.3, 0.6), stream.uniform_range(0.2, 0.5))];

    let n_struct = stream.int_range(spec.n_ellipses.0, spec.n_ellipses.1);
    for _ in 0..n_struct {
        let r = 0.55 * stream.uniform().sqrt();
        let t = stream.uniform_range(0.0, std::f64::consts::TAU);
        let e = Ellipse {
            cx: head.cx + r * t.cos() * head.a,
            cy: head.cy + r * t.sin() * head.b,
            a: stream.uniform_range(0.08, 0.3),
            b: stream.uniform_range(0.08, 0.3),
            angle: stream.uniform_range(0.0, std::f64::consts::PI),
        };
        layers.push((e, stream.uniform_range(0.15, 1.0), stream.uniform_range(0.1, 1.0)));
    }

    let n_lesions = stream.int_range(spec.lesion_count.0, spec.lesion_count.1);
    for _ in 0..n_lesions {
        let r = 0.6 * stream.uniform().sqrt();
        let t = stream.uniform_range(0.0, std::f64::consts::TAU);
        let rad = stream.uniform_range(0.04, 0.09);
        let e = Ellipse {
            cx: head.cx + r * t.cos() * head.a,
            cy: head.cy + r * t.sin() * head.b,
            a: rad,
            b: rad * stream.uniform_range(0.7, 1.0),
            angle: stream.uniform_range(0.0, std::f64::consts::PI),
        };
        layers.push((e, stream.uniform_range(0.6, 1.0), stream.uniform_range(0.8, 1.5)));
    }

    let n_blobs = stream.int_range(2, 4);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..n_blobs)
        .map(|_| {
            let r = 0.5 * stream.uniform().sqrt();
            let t = stream.uniform_range(0.0, std::f64::consts::TAU);
            (
                head.cx + r * t.cos() * head.a,
                head.cy + r * t.sin() * head.b,
                stream.uniform_range(0.1, 0.25),
                stream.uniform_range(0.1, 0.4),
            )
        })
        .collect();

    let phase = [
        stream.uniform_range(-0.6, 0.6),
        stream.uniform_range(-0.4, 0.4),
        stream.uniform_range(-0.4, 0.4),
        stream.uniform_range(-0.2, 0.2),
    ];

    let mut mag = RealGrid::zeros(shape);
    let mut pet = RealGrid::zeros(shape);
    for r in 0..m {
        for c in 0..m {
            let (x, y) = coords(m, r, c);
            if !head.contains(x, y) {
                continue;
            }
            let (mut mv, mut pv) = (0.0, 0.0);
            for (e, mi, pi) in &layers {
                if e.contains(x, y) {
                    mv = *mi;
                    pv = *pi;
                }
            }
            for &(bx, by, width, amp) in &blobs {
                let d2 = (x - bx).powi(2) + (y - by).powi(2);
                pv += amp * (-d2 / (2.0 * width * width)).exp();
            }
            mag.set(r, c, mv);
            pet.set(r, c, pv);
        }
    }
    let mag = mag.scaled(1.0 / mag.max());
    let pet = pet.scaled(1.0 / pet.max());

    let mri = ComplexGrid::from_fn(shape, |r, c| {
        let (x, y) = coords(m, r, c);
        let phi = phase[0] + phase[1] * x + phase[2] * y + phase[3] * x * y;
        Complex64::from_polar(mag.get(r, c), phi)
    });
    ImagePair::new(pet, mri)
}
