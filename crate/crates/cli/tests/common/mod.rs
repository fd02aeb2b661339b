#![allow(dead_code)]

use std::path::Path;
use std::process::Command;

use jointrecon_core::acquisition::{
    AcquisitionConfig, AcquisitionRecord, DatasetConfig, DatasetManifest, PhantomSpec, Sample, SampleEntry, Split,
};
use jointrecon_core::io::write_json;
use jointrecon_core::operators::{radon_forward, KSpaceData, RadonGeometry, SamplingMask, Sinogram};
use jointrecon_core::prior::{gm_log_density, Channels, GaussianMixture, GmPrior};
use jointrecon_core::sampler::{NoiseSchedule, SamplerConfig, UpdateRule};
use jointrecon_core::{ComplexGrid, ImagePair, RealGrid, Shape};
use num_complex::Complex64;

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the `jointrecon` binary.
pub fn jointrecon(args: &[&str]) -> Output {
    jointrecon_env(args, &[])
}

pub fn jointrecon_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_jointrecon"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("binary runs");
    Output {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

/// The two-pixel joint problem: one PET pixel seen by one detector bin at
/// `c·A = 40` expected counts per unit activity, one fully sampled complex
/// MRI pixel with noise precision 25, and a two-component mixture prior.
pub struct TwoPixel {
    pub f: Sinogram,
    pub g: KSpaceData,
    pub prior: GmPrior,
    pub f_obs: f64,
    pub g_obs: Complex64,
    /// `c·A`.
    pub gain: f64,
    pub mri_precision: f64,
}

pub fn two_pixel() -> TwoPixel {
    let shape = Shape::square(1);
    let geom = RadonGeometry::uniform(1, 1, 1).unwrap();
    let a = radon_forward(&RealGrid::filled(shape, 1.0), &geom).unwrap().data.get(0, 0);
    let gain = 40.0;
    let f_obs = 22.0;
    let g_obs = Complex64::new(0.6, 0.1);
    let gm = GaussianMixture::new(
        vec![0.4, 0.6],
        vec![vec![0.3, 0.2, 0.0], vec![0.8, 0.7, 0.1]],
        vec![0.15, 0.2],
    )
    .unwrap();
    TwoPixel {
        f: Sinogram::new(geom, RealGrid::filled(Shape::new(1, 1), f_obs), gain / a).unwrap(),
        g: KSpaceData::new(SamplingMask::full(shape), ComplexGrid::from_fn(shape, |_, _| g_obs)).unwrap(),
        prior: GmPrior::new(shape, Channels::Joint, gm).unwrap(),
        f_obs,
        g_obs,
        gain,
        mri_precision: 25.0,
    }
}

/// Sampler settings for the two-pixel problem.
pub fn two_pixel_sampler(tp: &TwoPixel) -> SamplerConfig {
    SamplerConfig {
        schedule: NoiseSchedule::new(0.01, 1.0, 100).unwrap(),
        steps_per_level: 20,
        step_scale: 0.2,
        dc_weight_pet: 1.0,
        dc_weight_mri: tp.mri_precision,
        update: UpdateRule::Langevin,
        ..SamplerConfig::default()
    }
}

/// Posterior mean of `(u, re v, im v)` by trapezoid quadrature on a 161³
/// grid over `[0, 2] × [−1, 2] × [−1.5, 1.5]`.
pub fn oracle_posterior_mean(tp: &TwoPixel) -> [f64; 3] {
    let n = 161;
    let axis = |lo: f64, hi: f64| -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
                let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                (x, w)
            })
            .collect()
    };
    let (us, rs, is) = (axis(0.0, 2.0), axis(-1.0, 2.0), axis(-1.5, 1.5));
    let mut z = 0.0;
    let mut m = [0.0; 3];
    for &(u, wu) in &us {
        let lam = (tp.gain * u).max(1e-8);
        let pet = -(lam - tp.f_obs * lam.ln());
        for &(vr, wr) in &rs {
            for &(vi, wi) in &is {
                let mri = -0.5 * tp.mri_precision * ((vr - tp.g_obs.re).powi(2) + (vi - tp.g_obs.im).powi(2));
                let w = (gm_log_density(&[u, vr, vi], &tp.prior.mixture).unwrap() + pet + mri).exp() * wu * wr * wi;
                z += w;
                m[0] += w * u;
                m[1] += w * vr;
                m[2] += w * vi;
            }
        }
    }
    [m[0] / z, m[1] / z, m[2] / z]
}

pub fn relative_error(est: &[f64; 3], reference: &[f64; 3]) -> f64 {
    let num: f64 = est.iter().zip(reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = reference.iter().map(|b| b * b).sum::<f64>().sqrt();
    num / den
}

/// Writes a dataset whose test split holds `copies` identical two-pixel
/// samples, plus the prior as JSON at `root/prior.json`.
pub fn write_two_pixel_dataset(root: &Path, copies: usize) {
    let tp = two_pixel();
    let shape = Shape::square(1);
    let acquisition = AcquisitionConfig::default();
    let mut samples = Vec::new();
    for i in 0..copies {
        let rel = format!("test/{i:04}");
        let sample = Sample {
            truth: ImagePair::new(
                RealGrid::filled(shape, 0.55),
                ComplexGrid::from_fn(shape, |_, _| tp.g_obs),
            )
            .unwrap(),
            sinogram: tp.f.clone(),
            kspace: tp.g.clone(),
            record: AcquisitionRecord {
                config: acquisition.clone(),
                count_scale: tp.f.count_scale,
                master_seed: 0,
                stream_label: rel.clone(),
            },
        };
        sample.save(&root.join(&rel)).unwrap();
        samples.push(SampleEntry {
            split: Split::Test,
            index: i,
            dir: rel.clone(),
            stream_label: rel,
            pair_hash: String::new(),
        });
    }
    let manifest = DatasetManifest {
        schema_version: 1,
        master_seed: 0,
        config: DatasetConfig {
            n_train: 0,
            n_test: copies,
            master_seed: 0,
            phantom: PhantomSpec::with_size(1),
            geometry: tp.f.geometry.clone(),
            acquisition,
        },
        samples,
    };
    write_json(&manifest, &root.join("manifest.json")).unwrap();
    write_json(&tp.prior, &root.join("prior.json")).unwrap();
}
