//! Shared inputs for the pipeline benchmarks.

use caliper::phantom::{generate, PhantomParams};
use caliper::rng::derive_key;
use caliper::segnet::{ArchitectureConfig, NetworkParams};
use caliper::{Ellipse, GrayImage, Mask};

/// A default-size phantom frame with its mask and ellipse.
pub fn phantom_frame(index: u64) -> (GrayImage, Mask, Ellipse) {
    generate(derive_key(42, index), &PhantomParams::default()).expect("default phantom parameters are valid")
}

/// Untrained default network: same cost per frame as a trained one.
pub fn toy_network() -> NetworkParams {
    NetworkParams::init(&ArchitectureConfig::default(), 7).expect("default architecture is valid")
}
