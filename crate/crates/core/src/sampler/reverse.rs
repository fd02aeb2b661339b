//! The reverse diffusion loop with data consistency.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dc::{
    gaussian_dc_gradient, gaussian_objective, poisson_curvature, poisson_dc_gradient, poisson_objective, positive_part,
};
use crate::operators::sensitivity;
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::grid::{ComplexGrid, ImagePair, RealGrid, Shape};
use crate::operators::{KSpaceData, Sinogram};
use crate::prior::{Channels, ScoreSource, Stack};
use crate::rng::{NormalSource, RandomStream};

/// How one step at a noise level combines score, data and noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateRule {
    /// Re-noise the current estimate to `σ_i`, denoise it with one Tweedie
    /// step `y + σ_i² s(y, σ_i)`, then take a proximal data step.
    Renoise,
    /// Annealed Langevin dynamics with tempered data weights.
    Langevin,
    /// `x ← x − s − ∇P − ∇G + z` with unit coefficients.
    Literal,
}

impl UpdateRule {
    pub fn as_str(self) -> &'static str {
        match self {
            UpdateRule::Renoise => "renoise",
            UpdateRule::Langevin => "langevin",
            UpdateRule::Literal => "literal",
        }
    }
}

impl std::str::FromStr for UpdateRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "renoise" => Ok(UpdateRule::Renoise),
            "langevin" => Ok(UpdateRule::Langevin),
            "literal" => Ok(UpdateRule::Literal),
            other => Err(Error::param(format!("unknown update rule '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub schedule: NoiseSchedule,
    pub steps_per_level: usize,
    /// `ε₀` in the Langevin step size `α_i = ε₀ (σ_i/σ_max)²`.
    pub step_scale: f64,
    pub dc_weight_pet: f64,
    pub dc_weight_mri: f64,
    pub update: UpdateRule,
    /// Fraction of fresh noise when re-noising, in `[0, 1]`.
    pub eta: f64,
    pub pet_floor: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            schedule: NoiseSchedule::default(),
            steps_per_level: 3,
            step_scale: 20.0,
            dc_weight_pet: 1.0,
            dc_weight_mri: 1e4,
            update: UpdateRule::Renoise,
            eta: 0.8,
            pet_floor: 1e-8,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.steps_per_level == 0 {
            return Err(Error::param("steps_per_level must be at least 1"));
        }
        if !(self.step_scale > 0.0 && self.step_scale.is_finite()) {
            return Err(Error::param("step_scale must be positive"));
        }
        if !(self.dc_weight_pet >= 0.0 && self.dc_weight_mri >= 0.0) {
            return Err(Error::param("data-consistency weights must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::param("eta must lie in [0, 1]"));
        }
        if !(self.pet_floor > 0.0) {
            return Err(Error::param("pet_floor must be positive"));
        }
        Ok(())
    }

    /// `α_i = ε₀ (σ_i/σ_max)²`.
    pub fn step_size(&self, sigma: f64) -> f64 {
        self.step_scale * (sigma / self.schedule.sigma_max).powi(2)
    }
}

/// Measurements available to a reconstruction.
#[derive(Clone, Copy, Debug)]
pub struct Measurements<'a> {
    pub pet: Option<&'a Sinogram>,
    pub mri: Option<&'a KSpaceData>,
}

impl<'a> Measurements<'a> {
    pub fn joint(f: &'a Sinogram, g: &'a KSpaceData) -> Self {
        Self {
            pet: Some(f),
            mri: Some(g),
        }
    }
}

/// Per-level diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub level: usize,
    pub sigma: f64,
    pub poisson_objective: f64,
    pub gaussian_objective: f64,
    pub u_norm: f64,
    pub v_norm: f64,
}

#[derive(Clone, Debug)]
pub struct SamplerState {
    pub x: Stack,
    pub level: usize,
    pub trace: Vec<TraceRow>,
    /// Unit noise direction predicted by the last re-noise step; `None`
    /// until the first one.
    pub noise_estimate: Option<Vec<f64>>,
}

/// Data weights at one noise level.
///
/// Measurements constrain the clean image, while the iterate at level `σ`
/// carries extra noise of that size, so each likelihood is tempered to
/// `λ/(1 + λ h σ²)` with `h` the curvature of its data term. At small `σ`
/// this tends to `λ`.
#[derive(Clone, Copy, Debug)]
struct DataWeights {
    pet: f64,
    mri: f64,
}

/// Precomputed per-reconstruction constants.
#[derive(Clone, Debug)]
pub struct DataScales {
    pub pet_curvature: f64,
    /// `c·A*1`, the sensitivity in counts per unit activity.
    pub pet_sensitivity: Option<RealGrid>,
}

impl DataScales {
    pub fn compute(data: &Measurements) -> Result<Self> {
        let (pet_curvature, pet_sensitivity) = match data.pet {
            Some(f) => (
                poisson_curvature(f, 30)?,
                Some(sensitivity(&f.geometry)?.scaled(f.count_scale)),
            ),
            None => (0.0, None),
        };
        Ok(Self {
            pet_curvature,
            pet_sensitivity,
        })
    }

    fn weights(&self, cfg: &SamplerConfig, sigma: f64) -> DataWeights {
        let temper = |lambda: f64, h: f64| lambda / (1.0 + lambda * h * sigma * sigma);
        DataWeights {
            pet: temper(cfg.dc_weight_pet, self.pet_curvature),
            mri: temper(cfg.dc_weight_mri, 1.0),
        }
    }
}

fn check_data(x: &Stack, data: &Measurements) -> Result<()> {
    let shape = x.shape();
    if x.channels().has_pet() {
        if let Some(f) = data.pet {
            f.geometry.image_shape().ensure_eq(shape, "sinogram geometry")?;
        }
    }
    if x.channels().has_mri() {
        if let Some(g) = data.mri {
            g.mask().shape().ensure_eq(shape, "k-space mask")?;
        }
    }
    Ok(())
}

fn objectives(x: &Stack, data: &Measurements, floor: f64) -> Result<(f64, f64, f64, f64)> {
    let (mut p, mut q, mut un, mut vn) = (0.0, 0.0, 0.0, 0.0);
    if let Some(u) = x.pet() {
        un = u.norm();
        if let Some(f) = data.pet {
            p = poisson_objective(&u, f, floor)?;
        }
    }
    if let Some(v) = x.mri() {
        vn = v.norm();
        if let Some(g) = data.mri {
            q = gaussian_objective(&v, g)?;
        }
    }
    Ok((p, q, un, vn))
}

/// Data-term gradients as a stack, each multiplied by its weight.
fn dc_gradient(x: &Stack, data: &Measurements, w: DataWeights, floor: f64) -> Result<Stack> {
    let mut out = Stack::zeros(x.shape(), x.channels());
    if let (Some(u), Some(f)) = (x.pet(), data.pet) {
        if w.pet != 0.0 {
            out.set_pet(&poisson_dc_gradient(&u, f, floor)?.scaled(w.pet))?;
        }
    }
    if let (Some(v), Some(g)) = (x.mri(), data.mri) {
        if w.mri != 0.0 {
            out.set_mri(&gaussian_dc_gradient(&v, g)?.scaled(w.mri))?;
        }
    }
    Ok(out)
}

fn clamp_pet(x: &mut Stack) {
    if let Some(k) = x.channels().pet_plane() {
        for v in x.plane_mut(k) {
            *v = v.max(0.0);
        }
    }
}

/// Langevin steps at `σ`:
/// `x ← x + α [s(x, σ) − w_p ∇P − w_m ∇G] + sqrt(2α) z`.
fn langevin_steps(
    x: &mut Stack,
    data: &Measurements,
    scales: &DataScales,
    score: &dyn ScoreSource,
    cfg: &SamplerConfig,
    sigma: f64,
    noise: &mut dyn NormalSource,
) -> Result<()> {
    let literal = cfg.update == UpdateRule::Literal;
    let (alpha, weights) = if literal {
        (1.0, DataWeights { pet: 1.0, mri: 1.0 })
    } else {
        (cfg.step_size(sigma), scales.weights(cfg, sigma))
    };
    let noise_scale = if literal { 1.0 } else { (2.0 * alpha).sqrt() };
    let score_sign = if literal { -1.0 } else { 1.0 };
    let mut z = vec![0.0; x.data().len()];
    for _ in 0..cfg.steps_per_level {
        let s = score.score(x, sigma)?;
        let d = dc_gradient(x, data, weights, cfg.pet_floor)?;
        noise.fill_normal(&mut z);
        for (((xi, &si), &di), &zi) in x.data_mut().iter_mut().zip(s.data()).zip(d.data()).zip(&z) {
            *xi += alpha * (score_sign * si - di) + noise_scale * zi;
        }
        check_finite(x, sigma)?;
    }
    Ok(())
}

/// Largest Tweedie correction, in units of the expected noise norm.
pub const TWEEDIE_CAP: f64 = 2.0;

/// Re-noise, denoise and data steps at `σ`.
///
/// The estimate is moved to level `σ` along its predicted noise direction
/// `ε̂` mixed with fresh noise, `y = x + σ d` with `d ∝ sqrt(1 − η²) ε̂ + η z`
/// rescaled to norm `sqrt(dim)`. The first step takes the initial state as
/// `y` itself. One Tweedie step
/// `x = y + σ² s(y, σ)` denoises it and `ε̂ = (y − x)/σ`.
///
/// The MRI step is the exact proximal map of `λ_m G` with radius `σ`,
/// `v ← v − ρ ∇G(v)` with `ρ = λ_m σ²/(1 + λ_m σ²)`, since `F* mask F` is a
/// projection. The PET step uses the per-pixel curvature `c(A*1)_j / u_j`
/// of the Poisson term in place of its Hessian, which gives
/// `u_j ← u_j − λ_p σ² u_j ∇P_j / (u_j + λ_p σ² c(A*1)_j)` on positive
/// pixels and never changes their sign.
#[allow(clippy::too_many_arguments)]
fn renoise_steps(
    x: &mut Stack,
    estimate: &mut Option<Vec<f64>>,
    data: &Measurements,
    scales: &DataScales,
    score: &dyn ScoreSource,
    cfg: &SamplerConfig,
    sigma: f64,
    noise: &mut dyn NormalSource,
) -> Result<()> {
    let var = sigma * sigma;
    let n = x.data().len();
    let keep = (1.0 - cfg.eta * cfg.eta).sqrt();
    let mut z = vec![0.0; n];
    for _ in 0..cfg.steps_per_level {
        noise.fill_normal(&mut z);
        if let Some(e) = estimate.as_ref() {
            let mut dir: Vec<f64> = e.iter().zip(&z).map(|(&ei, &zi)| keep * ei + cfg.eta * zi).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                let k = (n as f64).sqrt() / norm;
                dir.iter_mut().for_each(|v| *v *= k);
            }
            for (xi, &di) in x.data_mut().iter_mut().zip(&dir) {
                *xi += sigma * di;
            }
        }
        // The correction estimates `−σ ε`, so its norm should be close to
        // `σ sqrt(d)`; a learned score far outside that is capped.
        let s = score.score(x, sigma)?;
        let norm = var * s.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let cap = TWEEDIE_CAP * sigma * (n as f64).sqrt();
        let gain = if norm > cap { var * cap / norm } else { var };
        let mut e = vec![0.0; n];
        for ((xi, &si), ei) in x.data_mut().iter_mut().zip(s.data()).zip(e.iter_mut()) {
            *xi += gain * si;
            *ei = -gain * si / sigma;
        }
        *estimate = Some(e);
        if let (Some(v), Some(g)) = (x.mri(), data.mri) {
            let lv = cfg.dc_weight_mri * var;
            if lv > 0.0 {
                let grad = gaussian_dc_gradient(&v, g)?;
                x.set_mri(&v.add_scaled(-lv / (1.0 + lv), &grad)?)?;
            }
        }
        if let (Some(u), Some(f), Some(sens)) = (x.pet(), data.pet, scales.pet_sensitivity.as_ref()) {
            let lv = cfg.dc_weight_pet * var;
            if lv > 0.0 {
                let grad = poisson_dc_gradient(&positive_part(&u), f, cfg.pet_floor)?;
                let mut u = u;
                for ((uj, &gj), &sj) in u.data_mut().iter_mut().zip(grad.data()).zip(sens.data()) {
                    if *uj > 0.0 {
                        *uj -= lv * *uj * gj / (*uj + lv * sj);
                    }
                }
                x.set_pet(&u)?;
            }
        }
        check_finite(x, sigma)?;
    }
    Ok(())
}

fn check_finite(x: &Stack, sigma: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            level: 0,
            reason: format!("non-finite iterate at sigma {sigma:.4e}"),
        })
    }
}

/// One reverse level: from `state.level = i + 1` to `i`, using `σ_i`.
///
/// Runs `steps_per_level` steps of the configured [`UpdateRule`] and then
/// clamps the PET channel at zero.
pub fn reverse_step(
    state: SamplerState,
    data: &Measurements,
    scales: &DataScales,
    score: &dyn ScoreSource,
    cfg: &SamplerConfig,
    noise: &mut dyn NormalSource,
) -> Result<SamplerState> {
    let SamplerState {
        mut x,
        level,
        mut trace,
        mut noise_estimate,
    } = state;
    if level == 0 || level > cfg.schedule.n_steps {
        return Err(Error::param(format!(
            "reverse step needs a state level in 1..={}, got {level}",
            cfg.schedule.n_steps
        )));
    }
    check_data(&x, data)?;
    let target = level - 1;
    let sigma = cfg.schedule.sigma_at(target)?;
    let run = match cfg.update {
        UpdateRule::Renoise => renoise_steps(&mut x, &mut noise_estimate, data, scales, score, cfg, sigma, noise),
        UpdateRule::Langevin | UpdateRule::Literal => langevin_steps(&mut x, data, scales, score, cfg, sigma, noise),
    };
    run.map_err(|e| match e {
        Error::Divergence { reason, .. } => Error::Divergence { level: target, reason },
        other => other,
    })?;
    clamp_pet(&mut x);

    let (p, q, un, vn) = objectives(&x, data, cfg.pet_floor)?;
    trace.push(TraceRow {
        level: target,
        sigma,
        poisson_objective: p,
        gaussian_objective: q,
        u_norm: un,
        v_norm: vn,
    });
    Ok(SamplerState {
        x,
        level: target,
        trace,
        noise_estimate,
    })
}

/// Initial state `u_N = |σ_max z|`, `v_N = σ_max z`.
pub fn initial_state(shape: Shape, channels: Channels, cfg: &SamplerConfig, noise: &mut dyn NormalSource) -> SamplerState {
    let mut x = Stack::zeros(shape, channels);
    noise.fill_normal(x.data_mut());
    let s = cfg.schedule.sigma_max;
    x.data_mut().iter_mut().for_each(|v| *v *= s);
    if let Some(k) = channels.pet_plane() {
        x.plane_mut(k).iter_mut().for_each(|v| *v = v.abs());
    }
    SamplerState {
        x,
        level: cfg.schedule.n_steps,
        trace: Vec::new(),
        noise_estimate: None,
    }
}

/// Runs the reverse process from level `N` to `0` with explicit noise.
pub fn run_sampler(
    shape: Shape,
    data: &Measurements,
    score: &dyn ScoreSource,
    cfg: &SamplerConfig,
    noise: &mut dyn NormalSource,
) -> Result<SamplerState> {
    cfg.validate()?;
    let scales = DataScales::compute(data)?;
    let mut state = initial_state(shape, score.channels(), cfg, noise);
    while state.level > 0 {
        state = reverse_step(state, data, &scales, score, cfg, noise)?;
    }
    Ok(state)
}

fn sampler_stream(cfg: &SamplerConfig) -> RandomStream {
    RandomStream::new(cfg.seed, "sampler")
}

/// Joint reconstruction of `(u, v)` from a sinogram and k-space data.
pub fn reconstruct_joint(
    f: &Sinogram,
    g: &KSpaceData,
    score: &dyn ScoreSource,
    cfg: &SamplerConfig,
) -> Result<(ImagePair, Vec<TraceRow>)> {
    if score.channels() != Channels::Joint {
        return Err(Error::param("joint reconstruction needs a joint score source"));
    }
    let shape = g.mask().shape();
    let state = run_sampler(shape, &Measurements::joint(f, g), score, cfg, &mut sampler_stream(cfg))?;
    Ok((state.x.to_pair()?, state.trace))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Pet,
    Mri,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Pet => "pet",
            Modality::Mri => "mri",
        }
    }

    pub fn channels(self) -> Channels {
        match self {
            Modality::Pet => Channels::Pet,
            Modality::Mri => Channels::Mri,
        }
    }
}

/// Result of a single-modality reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub enum SingleImage {
    Pet(RealGrid),
    Mri(ComplexGrid),
}

/// Single-modality reconstruction with a marginal score source; the other
/// modality's data term is absent.
pub fn reconstruct_single(
    modality: Modality,
    data: &Measurements,
    score: &dyn ScoreSource,
    cfg: &SamplerConfig,
) -> Result<(SingleImage, Vec<TraceRow>)> {
    if score.channels() != modality.channels() {
        return Err(Error::param(format!(
            "{} reconstruction needs a {} score source, got {}",
            modality.as_str(),
            modality.as_str(),
            score.channels().as_str()
        )));
    }
    let (shape, only) = match modality {
        Modality::Pet => {
            let f = data.pet.ok_or_else(|| Error::MissingInput("PET reconstruction needs a sinogram".into()))?;
            (f.geometry.image_shape(), Measurements { pet: Some(f), mri: None })
        }
        Modality::Mri => {
            let g = data.mri.ok_or_else(|| Error::MissingInput("MRI reconstruction needs k-space data".into()))?;
            (g.mask().shape(), Measurements { pet: None, mri: Some(g) })
        }
    };
    let state = run_sampler(shape, &only, score, cfg, &mut sampler_stream(cfg))?;
    let image = match modality {
        Modality::Pet => SingleImage::Pet(state.x.pet().expect("pet stack")),
        Modality::Mri => SingleImage::Mri(state.x.mri().expect("mri stack")),
    };
    Ok((image, state.trace))
}

/// Writes a trace as CSV.
pub fn write_trace_csv(trace: &[TraceRow], path: &Path) -> Result<()> {
    let mut s = String::from("level,sigma,poisson_objective,gaussian_objective,u_norm,v_norm\n");
    for r in trace {
        s.push_str(&format!(
            "{},{:.6e},{:.9e},{:.9e},{:.9e},{:.9e}\n",
            r.level, r.sigma, r.poisson_objective, r.gaussian_objective, r.u_norm, r.v_norm
        ));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
