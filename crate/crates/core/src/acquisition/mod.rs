//! Paired phantoms, simulated measurements and datasets.

pub mod dataset;
pub mod phantom;
pub mod simulate;

pub use dataset::{
    acquire, build_dataset, pair_hash, prepare_output_dir, AcquisitionRecord, DatasetConfig, DatasetManifest, Sample,
    SampleEntry, Split,
};
pub use phantom::{make_phantom_pair, PhantomSpec};
pub use simulate::{simulate_mri, simulate_pet, AcquisitionConfig};
