//! On-disk datasets of phantom pairs and their simulated measurements.
//!
//! Layout:
//!
//! ```text
//! <root>/manifest.json
//! <root>/<split>/<idx>/{pet.jrg, mri.jrg, sino.jrg, kspace.jrg, mask.json, geometry.json, acq.json}
//! ```
//!
//! Every sample draws from its own stream labelled `"<split>/<idx>"` under
//! the master seed, so the train and test splits never share randomness and
//! the whole dataset is a pure function of its configuration.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::phantom::{make_phantom_pair, PhantomSpec};
use super::simulate::{simulate_mri, simulate_pet, AcquisitionConfig};
use crate::error::{Error, Result};
use crate::grid::{ComplexGrid, ImagePair, RealGrid};
use crate::io;
use crate::operators::{make_cartesian_mask, KSpaceData, RadonGeometry, SamplingMask, Sinogram};
use crate::rng::RandomStream;

pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub master_seed: u64,
    pub phantom: PhantomSpec,
    pub geometry: RadonGeometry,
    pub acquisition: AcquisitionConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub split: Split,
    pub index: usize,
    /// Directory relative to the dataset root.
    pub dir: String,
    pub stream_label: String,
    /// SHA-256 of the stored ground-truth PET and MRI files.
    pub pair_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub master_seed: u64,
    pub config: DatasetConfig,
    pub samples: Vec<SampleEntry>,
}

impl DatasetManifest {
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join("manifest.json");
        if !path.exists() {
            return Err(Error::MissingInput(format!(
                "no dataset manifest at {}",
                path.display()
            )));
        }
        io::read_json(&path)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleEntry> {
        self.samples.iter().filter(move |s| s.split == split)
    }
}

/// Per-sample acquisition record (`acq.json`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionRecord {
    pub config: AcquisitionConfig,
    /// Factor `c` with expected counts `c·A u`.
    pub count_scale: f64,
    pub master_seed: u64,
    pub stream_label: String,
}

/// A fully loaded dataset sample.
#[derive(Clone, Debug)]
pub struct Sample {
    pub truth: ImagePair,
    pub sinogram: Sinogram,
    pub kspace: KSpaceData,
    pub record: AcquisitionRecord,
}

impl Sample {
    /// Simulates a sample in memory from its stream.
    pub fn generate(
        phantom: &PhantomSpec,
        geometry: &RadonGeometry,
        acquisition: &AcquisitionConfig,
        master_seed: u64,
        stream_label: &str,
    ) -> Result<Self> {
        let root = RandomStream::new(master_seed, stream_label);
        let truth = make_phantom_pair(phantom, &mut root.derive("phantom"))?;
        let (sinogram, kspace) = acquire(&truth, geometry, acquisition, &root)?;
        Ok(Self {
            record: AcquisitionRecord {
                config: acquisition.clone(),
                count_scale: sinogram.count_scale,
                master_seed,
                stream_label: stream_label.to_string(),
            },
            truth,
            sinogram,
            kspace,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        io::save_real(self.truth.pet(), &dir.join("pet.jrg"))?;
        io::save_complex(self.truth.mri(), &dir.join("mri.jrg"))?;
        io::save_real(&self.sinogram.data, &dir.join("sino.jrg"))?;
        io::save_complex(self.kspace.data(), &dir.join("kspace.jrg"))?;
        self.kspace.mask().save(&dir.join("mask.json"))?;
        io::write_json(&self.sinogram.geometry, &dir.join("geometry.json"))?;
        io::write_json(&self.record, &dir.join("acq.json"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        for name in ["pet.jrg", "mri.jrg", "sino.jrg", "kspace.jrg", "mask.json", "geometry.json", "acq.json"] {
            if !dir.join(name).exists() {
                return Err(Error::MissingInput(format!(
                    "{} is missing {name}",
                    dir.display()
                )));
            }
        }
        let pet = io::load_real(&dir.join("pet.jrg"))?;
        let mri = io::load_complex(&dir.join("mri.jrg"))?;
        let geometry: RadonGeometry = io::read_json(&dir.join("geometry.json"))?;
        let record: AcquisitionRecord = io::read_json(&dir.join("acq.json"))?;
        let sinogram = Sinogram::new(geometry, io::load_real(&dir.join("sino.jrg"))?, record.count_scale)?;
        let mask = SamplingMask::load(&dir.join("mask.json"))?;
        let kspace = KSpaceData::new(mask, io::load_complex(&dir.join("kspace.jrg"))?)?;
        Ok(Self {
            truth: ImagePair::new(pet, mri)?,
            sinogram,
            kspace,
            record,
        })
    }
}

/// Simulates both measurements of `truth` with substreams of `stream`.
pub fn acquire(
    truth: &ImagePair,
    geometry: &RadonGeometry,
    acquisition: &AcquisitionConfig,
    stream: &RandomStream,
) -> Result<(Sinogram, KSpaceData)> {
    let mask = make_cartesian_mask(
        truth.shape(),
        acquisition.accel,
        acquisition.center_fraction,
        &mut stream.derive("mask"),
    )?;
    let sinogram = simulate_pet(truth.pet(), geometry, acquisition, Some(&mut stream.derive("pet")))?;
    let kspace = simulate_mri(truth.mri(), &mask, acquisition, &mut stream.derive("mri"))?;
    Ok((sinogram, kspace))
}

/// SHA-256 over the JRG1 encodings of a pair.
pub fn pair_hash(pet: &RealGrid, mri: &ComplexGrid) -> String {
    let mut h = Sha256::new();
    h.update(io::encode_real(pet));
    h.update(io::encode_complex(mri));
    hex::encode(h.finalize())
}

/// Prepares `root` for writing: refuses an existing nonempty directory unless
/// `force`, in which case its contents are replaced.
pub fn prepare_output_dir(root: &Path, force: bool) -> Result<()> {
    if root.exists() {
        let nonempty = fs::read_dir(root)
            .map_err(|e| Error::io(root, e))?
            .next()
            .is_some();
        if nonempty {
            if !force {
                return Err(Error::param(format!(
                    "{} already exists; pass --force to overwrite",
                    root.display()
                )));
            }
            fs::remove_dir_all(root).map_err(|e| Error::io(root, e))?;
        }
    }
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))
}

/// Generates and writes a dataset, returning its manifest.
pub fn build_dataset(cfg: &DatasetConfig, root: &Path, force: bool) -> Result<DatasetManifest> {
    cfg.phantom.validate()?;
    cfg.acquisition.validate()?;
    cfg.geometry.validate()?;
    if cfg.geometry.image_size != cfg.phantom.size {
        return Err(Error::param(format!(
            "geometry image_size {} does not match phantom size {}",
            cfg.geometry.image_size, cfg.phantom.size
        )));
    }
    prepare_output_dir(root, force)?;

    let jobs: Vec<(Split, usize)> = (0..cfg.n_train)
        .map(|i| (Split::Train, i))
        .chain((0..cfg.n_test).map(|i| (Split::Test, i)))
        .collect();
    let samples = jobs
        .par_iter()
        .map(|&(split, index)| -> Result<SampleEntry> {
            let rel = format!("{}/{index:04}", split.as_str());
            let label = rel.clone();
            let sample = Sample::generate(&cfg.phantom, &cfg.geometry, &cfg.acquisition, cfg.master_seed, &label)?;
            let dir: PathBuf = root.join(&rel);
            sample.save(&dir)?;
            Ok(SampleEntry {
                split,
                index,
                dir: rel,
                stream_label: label,
                pair_hash: pair_hash(
                    &io::quantize_real(sample.truth.pet()),
                    &io::quantize_complex(sample.truth.mri()),
                ),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = DatasetManifest {
        schema_version: DATASET_SCHEMA_VERSION,
        master_seed: cfg.master_seed,
        config: cfg.clone(),
        samples,
    };
    io::write_json(&manifest, &root.join("manifest.json"))?;
    Ok(manifest)
}
