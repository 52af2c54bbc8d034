//! Group-wise neural radiance fields.
//!
//! A radiance field maps a 3D position and a viewing direction to a color and
//! a volume density. This crate evaluates the field with a multi-input
//! multi-output (MIMO) perceptron: `N_p` neighbouring samples on a ray are
//! encoded together and a single network invocation produces all `N_p`
//! colors and densities. Fewer invocations per pixel means faster rendering.
//!
//! Training ambiguity introduced by grouping is addressed by reformulating the
//! grouped network several ways (group shift, variation reduction) and asking
//! the reformulations to agree on per-sample colors and alphas.
//!
//! Everything here is pure computation over `alloc` collections:
//!
//! - [`mlp`] and [`adam`]: fixed-architecture network with an analytic
//!   reverse pass, and the optimizer.
//! - [`encoding`], [`grouping`], [`field`]: positional encoding, group
//!   layouts, and batched SISO/MIMO field evaluation.
//! - [`render`]: rays, stratified and hierarchical sampling, compositing.
//! - [`objectives`]: pixel, 3D-consistency and full objectives; presets.
//! - [`pipeline`]: one differentiable training batch and inference rendering.
//! - [`scene`]: procedural ground-truth scenes and a quadrature oracle.
//! - [`metrics`]: PSNR, SSIM, invocation and FLOP accounting.
//!
//! IO, threading, checkpoints and the command line live in the `mimo-nerf`
//! crate.

#![no_std]
// NaN-rejecting `!(a < b)` checks and per-channel index loops are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod adam;
pub mod encoding;
mod error;
pub mod field;
pub mod grouping;
pub mod image;
pub mod metrics;
pub mod mlp;
pub mod objectives;
pub mod pipeline;
mod real;
pub mod render;
pub mod scene;

pub use error::{Error, Result};
pub use real::Real;

/// Seedable generator used everywhere randomness is needed.
pub type SeededRng = rand_chacha::ChaCha8Rng;

/// Deterministic generator for a seed.
pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}
