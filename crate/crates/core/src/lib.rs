//! Score-based diffusion toolkit.
//!
//! Everything works in the EDM coordinate frame (`s(t) = 1`, `σ(t) = t`).
//! Other noising geometries reach the samplers through [`param::Frame`]
//! rescaling, and every component can be checked against the analytic
//! Gaussian / Dirac mixture in [`oracle`].

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod oracle;
pub mod param;
pub mod schedule;
pub mod solver;
pub mod train;

pub use error::{Error, Result};
pub use oracle::{Component, OracleGmm};
pub use param::{Frame, GuidanceMode, GuidanceSpec, ModelOutput, Parameterization, Preconditioner};
pub use schedule::{GridKind, LossWeighting, StepGrid, TrainNoise};
pub use solver::{Condition, Denoiser, Sampler, Solution};

/// Deterministic RNG used throughout the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Seeded RNG constructor.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

/// Derive an independent stream from a base seed and an index (sample id, cell id, ...).
pub fn substream(seed: u64, index: u64) -> Rng {
    use rand::SeedableRng;
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
