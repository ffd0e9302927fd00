//! Plug-and-play ADMM solver for linear inverse problems.
//!
//! The solver alternates a conjugate-gradient data-fidelity update, an
//! optional noise injection, a pluggable denoiser standing in for the prior's
//! proximal operator, a dual update, and Nesterov momentum on both primal and
//! dual iterates. Forward operators cover inpainting masks, separable blur,
//! block downsampling, and subsampled single/multi-coil Fourier maps.

pub mod admm;
pub mod cli;
pub mod denoise;
pub mod error;
pub mod io;
pub mod linsolve;
pub mod metrics;
pub mod ops;
pub mod tensor;

pub use error::{Error, Result};

/// RNG sub-stream assignments. One seed drives a run; every consumer of
/// randomness draws from its own ChaCha stream so adding draws in one place
/// never perturbs another. These numbers are part of the reproducibility
/// contract.
pub mod streams {
    /// Random pixel-keep masks.
    pub const MASK: u64 = 1;
    /// Random k-space line selection.
    pub const KSPACE: u64 = 2;
    /// Measurement noise synthesis.
    pub const MEASUREMENT: u64 = 3;
    /// Lipschitz-estimate probes.
    pub const LIPSCHITZ: u64 = 4;
    /// Per-iteration injected noise in the solver loop.
    pub const INJECTION: u64 = 5;
    /// Synthetic ground-truth phantoms for shape-only tasks.
    pub const PHANTOM: u64 = 6;
}
