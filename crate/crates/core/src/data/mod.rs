//! Dataset generation, storage, and image preprocessing.

pub mod augment;
pub mod pgm;
pub mod resize;
pub mod store;
pub mod synth;

pub use augment::{add_gaussian_noise, augment_sample, sample_augment_params, AugmentConfig};
pub use pgm::{read_pgm, write_pgm};
pub use resize::{resize, resize_normalize};
pub use store::{load_dataset, write_dataset, Dataset, Sample, Split};
pub use synth::{generate_sample, generate_samples, per_sample_seed, GeneratorConfig, SynthSample};

/// SplitMix64 finalizer; the workhorse for deriving independent seeds.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
