//! Random simple graphs with a prescribed degree sequence via the pairing
//! model: a linear-time approximate sampler, a rejection-augmented exact
//! uniform sampler, and a brute-force oracle for desk-scale verification.

pub mod degree;
pub mod heavy;
pub mod light;
pub mod oracle;
pub mod pairing;
pub mod rng;
pub mod sampler;
pub mod synth;

pub use degree::{
    delta_window, derive_params, moments, plib_check, DegreeSequence, DeltaWindow, Moments,
    StageParams, GAMMA_THRESHOLD,
};
pub use pairing::{census, membership_a0, membership_phi0, Census, Pairing, SignatureMatrix};
pub use sampler::{sample, sample_batch, Mode, RunStats, SampleError};
