//! Synthetic shapes, simulated scans, file formats and training patches.

pub mod dataset;
pub mod io;
pub mod partial;
pub mod patches;
pub mod shapes;

pub use dataset::{
    family_library, generate_dataset, generate_sample, generate_sequence, ground_truth, load_sequence, Dataset,
    GenConfig, Manifest, Sample, SampleMeta, Split,
};
pub use io::{read_cloud, write_cloud};
pub use partial::simulate_partial;
pub use patches::{make_patch_pairs, PatchPair};
pub use shapes::{generate_shape, Family, ShapeSpec};
