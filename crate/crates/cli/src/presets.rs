//! Named acquisition presets: k-space acceleration and sinogram raster.

use clap::ValueEnum;
use jointrecon_core::operators::RadonGeometry;
use jointrecon_core::Result;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 3-fold k-space, sinogram raster scaled from 128 × 300.
    Fig2,
    /// 5-fold k-space, sinogram raster scaled from 128 × 300.
    Fig3,
    /// 4-fold k-space, desk sinogram raster scaled from 64 × 60.
    Fig4,
    /// 4-fold k-space, sinogram raster scaled from 128 × 300.
    Fig5,
}

impl Preset {
    pub fn accel(self) -> f64 {
        match self {
            Preset::Fig2 => 3.0,
            Preset::Fig3 => 5.0,
            Preset::Fig4 | Preset::Fig5 => 4.0,
        }
    }

    /// Detectors × angles for an `size × size` image.
    pub fn raster(self, size: usize) -> (usize, usize) {
        match self {
            Preset::Fig4 => default_raster(size),
            _ => (size, (size * 300 + 64) / 128),
        }
    }

    pub fn geometry(self, size: usize) -> Result<RadonGeometry> {
        let (d, a) = self.raster(size);
        RadonGeometry::uniform(size, d, a)
    }
}

/// The desk default: one detector per pixel, angles scaled from 64 × 60.
pub fn default_raster(size: usize) -> (usize, usize) {
    (size, ((size * 60 + 32) / 64).max(1))
}
