use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prior::Stack;
use crate::rng::NormalSource;

/// Geometric noise ladder `σ_i = σ_min (σ_max/σ_min)^(i/N)`, `i = 0..=N`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub n_steps: usize,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            sigma_min: 0.01,
            sigma_max: 10.0,
            n_steps: 100,
        }
    }
}

impl NoiseSchedule {
    pub fn new(sigma_min: f64, sigma_max: f64, n_steps: usize) -> Result<Self> {
        let s = Self {
            sigma_min,
            sigma_max,
            n_steps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max && self.sigma_max.is_finite()) {
            return Err(Error::param(format!(
                "schedule needs 0 < sigma_min < sigma_max, got {} and {}",
                self.sigma_min, self.sigma_max
            )));
        }
        if self.n_steps < 1 {
            return Err(Error::param("schedule needs at least one step"));
        }
        Ok(())
    }

    /// Noise level of index `i`.
    pub fn sigma_at(&self, i: usize) -> Result<f64> {
        if i > self.n_steps {
            return Err(Error::param(format!(
                "level {i} outside schedule 0..={}",
                self.n_steps
            )));
        }
        if i == 0 {
            return Ok(self.sigma_min);
        }
        if i == self.n_steps {
            return Ok(self.sigma_max);
        }
        let frac = i as f64 / self.n_steps as f64;
        Ok(self.sigma_min * (self.sigma_max / self.sigma_min).powf(frac))
    }

    /// `(σ_max/σ_min)^(1/N)`.
    pub fn ratio(&self) -> f64 {
        (self.sigma_max / self.sigma_min).powf(1.0 / self.n_steps as f64)
    }
}

/// `sigma_at`, as a free function.
pub fn sigma_at(i: usize, schedule: &NoiseSchedule) -> Result<f64> {
    schedule.sigma_at(i)
}

/// `x + σ_i z` with `z` drawn from `noise`.
pub fn forward_diffuse(
    x: &Stack,
    level: usize,
    schedule: &NoiseSchedule,
    noise: &mut impl NormalSource,
) -> Result<Stack> {
    let sigma = schedule.sigma_at(level)?;
    let mut z = vec![0.0; x.data().len()];
    noise.fill_normal(&mut z);
    let data = x.data().iter().zip(&z).map(|(a, b)| a + sigma * b).collect();
    Stack::new(x.shape(), x.channels(), data)
}
