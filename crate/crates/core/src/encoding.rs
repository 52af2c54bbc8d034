//! Sinusoidal positional encoding.

use alloc::vec;
use alloc::vec::Vec;

use crate::Real;

/// `γ(p) = [p, sin(2⁰p), cos(2⁰p), …, sin(2^{L-1}p), cos(2^{L-1}p)]`, each
/// block holding all components of `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodingSpec {
    pub num_frequencies: usize,
    pub include_input: bool,
    /// Use bands `2^k π p` instead of `2^k p`.
    pub scale_pi: bool,
}

impl EncodingSpec {
    pub const fn new(num_frequencies: usize) -> Self {
        Self {
            num_frequencies,
            include_input: true,
            scale_pi: false,
        }
    }

    /// Output length for a `d`-dimensional input.
    pub fn output_dim(&self, d: usize) -> usize {
        d * (usize::from(self.include_input) + 2 * self.num_frequencies)
    }

    /// Writes the encoding of `p` into `out` (`out.len() == output_dim(p.len())`).
    pub fn encode_into<T: Real>(&self, p: &[T], out: &mut [T]) {
        let d = p.len();
        debug_assert_eq!(out.len(), self.output_dim(d));
        let mut k = 0;
        if self.include_input {
            out[..d].copy_from_slice(p);
            k = d;
        }
        let base = if self.scale_pi { T::of(core::f64::consts::PI) } else { T::one() };
        let mut freq = base;
        for _ in 0..self.num_frequencies {
            for (j, v) in p.iter().enumerate() {
                let (s, c) = (*v * freq).sin_cos();
                out[k + j] = s;
                out[k + d + j] = c;
            }
            k += 2 * d;
            freq = freq + freq;
        }
    }
}

/// Allocating convenience wrapper around [`EncodingSpec::encode_into`].
pub fn positional_encode<T: Real>(p: &[T], spec: &EncodingSpec) -> Vec<T> {
    let mut out = vec![T::zero(); spec.output_dim(p.len())];
    spec.encode_into(p, &mut out);
    out
}
