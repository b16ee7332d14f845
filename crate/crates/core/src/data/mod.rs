//! Synthetic sample triples: parametric shapes, occluded partial views and a
//! simulated generative prior.

mod dataset;
mod prior;
mod shapes;

pub use dataset::{
    assign_splits, build_dataset, gen_sample, generate, read_manifest, sample_id, Dataset, DatasetConfig, Manifest,
    SampleEntry, SampleFiles, SampleTriple, Split, MANIFEST_FILE, MANIFEST_VERSION,
};
pub use prior::{crop_partial, random_direction, resample, simulate_prior, PriorBias};
pub use shapes::{gen_shape, ShapeFamily, ShapeSpec};
