//! Isotropic Gaussian mixtures: an exact, analytic stand-in for the joint
//! prior `p(u, v)`.

use serde::{Deserialize, Serialize};

use super::stack::{Channels, Stack};
use super::ScoreSource;
use crate::error::{Error, Result};
use crate::grid::Shape;

/// `Σ_k w_k N(μ_k, τ_k² I)` over flat vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub stds: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, stds: Vec<f64>) -> Result<Self> {
        let gm = Self { weights, means, stds };
        gm.validate()?;
        Ok(gm)
    }

    /// One component at `mean` with std `tau`.
    pub fn single(mean: Vec<f64>, tau: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![tau])
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.stds.len() != k {
            return Err(Error::param(
                "mixture needs matching, nonempty weights, means and stds",
            ));
        }
        let dim = self.means[0].len();
        if dim == 0 || self.means.iter().any(|m| m.len() != dim) {
            return Err(Error::dim("mixture means must share a positive dimension"));
        }
        if self.weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::param("mixture weights must be positive"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::param(format!("mixture weights sum to {total}, not 1")));
        }
        if self.stds.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::param("mixture stds must be positive"));
        }
        if self.means.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::param("mixture means must be finite"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::dim(format!(
                "point has dimension {}, mixture has {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Per-component log of `w_k N(x; μ_k, τ_k² I)`.
    fn component_logs(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim() as f64;
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.stds)
            .map(|((&w, mu), &tau)| {
                let dist2: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
                w.ln() - 0.5 * d * (2.0 * std::f64::consts::PI * tau * tau).ln() - dist2 / (2.0 * tau * tau)
            })
            .collect()
    }

    /// The mixture convolved with `N(0, σ² I)`: every std becomes `sqrt(τ² + σ²)`.
    pub fn smoothed(&self, sigma: f64) -> Self {
        Self {
            weights: self.weights.clone(),
            means: self.means.clone(),
            stds: self.stds.iter().map(|t| (t * t + sigma * sigma).sqrt()).collect(),
        }
    }

    /// Marginal over the coordinates in `range`. Exact for isotropic components.
    pub fn marginal(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.end > self.dim() || range.is_empty() {
            return Err(Error::dim("marginal range outside mixture dimension"));
        }
        Ok(Self {
            weights: self.weights.clone(),
            means: self.means.iter().map(|m| m[range.clone()].to_vec()).collect(),
            stds: self.stds.clone(),
        })
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log p(x)` under the mixture.
pub fn gm_log_density(x: &[f64], gm: &GaussianMixture) -> Result<f64> {
    gm.check_dim(x)?;
    Ok(log_sum_exp(&gm.component_logs(x)))
}

/// `∇ log p(x) = Σ_k r_k(x) (μ_k − x) / τ_k²` with responsibilities `r_k`.
pub fn gm_score(x: &[f64], gm: &GaussianMixture) -> Result<Vec<f64>> {
    gm.check_dim(x)?;
    let logs = gm.component_logs(x);
    let norm = log_sum_exp(&logs);
    let mut score = vec![0.0; x.len()];
    for ((l, mu), &tau) in logs.iter().zip(&gm.means).zip(&gm.stds) {
        let r = (l - norm).exp();
        if r == 0.0 {
            continue;
        }
        let k = r / (tau * tau);
        for ((s, &m), &xi) in score.iter_mut().zip(mu).zip(x) {
            *s += k * (m - xi);
        }
    }
    Ok(score)
}

/// A Gaussian-mixture prior over stacked images of a given raster, usable as
/// a score source. At noise level `σ` it returns the exact score of the
/// mixture smoothed by `N(0, σ² I)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmPrior {
    pub shape: Shape,
    pub channels: Channels,
    pub mixture: GaussianMixture,
}

impl GmPrior {
    pub fn new(shape: Shape, channels: Channels, mixture: GaussianMixture) -> Result<Self> {
        mixture.validate()?;
        if mixture.dim() != shape.len() * channels.count() {
            return Err(Error::dim(format!(
                "mixture dimension {} does not match {} {shape} planes",
                mixture.dim(),
                channels.count()
            )));
        }
        Ok(Self {
            shape,
            channels,
            mixture,
        })
    }

    /// Marginal prior of one modality of a joint prior.
    pub fn marginal(&self, channels: Channels) -> Result<Self> {
        if channels == self.channels {
            return Ok(self.clone());
        }
        if self.channels != Channels::Joint {
            return Err(Error::param("marginals are taken from joint priors"));
        }
        let n = self.shape.len();
        let range = match channels {
            Channels::Pet => 0..n,
            Channels::Mri => n..3 * n,
            Channels::Joint => unreachable!(),
        };
        Self::new(self.shape, channels, self.mixture.marginal(range)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let prior: GmPrior = crate::io::read_json(path)?;
        Self::new(prior.shape, prior.channels, prior.mixture)
    }
}

impl ScoreSource for GmPrior {
    fn channels(&self) -> Channels {
        self.channels
    }

    fn score(&self, x: &Stack, sigma: f64) -> Result<Stack> {
        if x.channels() != self.channels {
            return Err(Error::param(format!(
                "{} prior asked for a {} score",
                self.channels.as_str(),
                x.channels().as_str()
            )));
        }
        x.shape().ensure_eq(self.shape, "prior raster")?;
        let s = gm_score(x.data(), &self.mixture.smoothed(sigma))?;
        Stack::new(x.shape(), x.channels(), s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_gaussian_peak_value_and_score() {
        let mu = vec![0.5, -1.0, 2.0];
        let tau = 0.3;
        let gm = GaussianMixture::single(mu.clone(), tau).unwrap();
        let expected = -1.5 * (2.0 * std::f64::consts::PI * tau * tau).ln();
        assert!((gm_log_density(&mu, &gm).unwrap() - expected).abs() < 1e-12);

        let x = vec![0.0, 0.0, 0.0];
        let s = gm_score(&x, &gm).unwrap();
        for i in 0..3 {
            assert!((s[i] - (mu[i] - x[i]) / (tau * tau)).abs() < 1e-12);
        }
    }

    #[test]
    fn radial_decay() {
        let gm = GaussianMixture::single(vec![0.0, 0.0], 1.0).unwrap();
        let mut last = f64::INFINITY;
        for k in 0..20 {
            let r = 0.25 * k as f64;
            let v = gm_log_density(&[r, 0.0], &gm).unwrap();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn symmetric_midpoint_has_zero_score() {
        let gm = GaussianMixture::new(vec![0.5, 0.5], vec![vec![-1.0, 2.0], vec![1.0, 4.0]], vec![0.7, 0.7]).unwrap();
        let s = gm_score(&[0.0, 3.0], &gm).unwrap();
        assert!(s.iter().all(|v| v.abs() < 1e-12), "{s:?}");
    }

    #[test]
    fn far_points_stay_finite() {
        let gm = GaussianMixture::new(vec![0.3, 0.7], vec![vec![0.0], vec![10.0]], vec![0.01, 0.02]).unwrap();
        let s = gm_score(&[1e4], &gm).unwrap();
        assert!(s[0].is_finite());
        assert!(gm_log_density(&[1e4], &gm).unwrap().is_finite());
    }

    #[test]
    fn validation_and_dimension_errors() {
        assert!(GaussianMixture::new(vec![0.5, 0.6], vec![vec![0.0], vec![1.0]], vec![1.0, 1.0]).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0]], vec![0.0]).is_err());
        let gm = GaussianMixture::single(vec![0.0, 1.0], 1.0).unwrap();
        assert!(matches!(gm_score(&[0.0], &gm), Err(Error::Dimension(_))));
    }

    #[test]
    fn marginal_of_joint_prior() {
        let shape = Shape::new(1, 1);
        let joint = GmPrior::new(
            shape,
            Channels::Joint,
            GaussianMixture::new(vec![0.5, 0.5], vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]], vec![0.1, 0.2]).unwrap(),
        )
        .unwrap();
        let pet = joint.marginal(Channels::Pet).unwrap();
        assert_eq!(pet.mixture.means, vec![vec![1.0], vec![4.0]]);
        let mri = joint.marginal(Channels::Mri).unwrap();
        assert_eq!(mri.mixture.means, vec![vec![2.0, 3.0], vec![5.0, 6.0]]);
    }
}
