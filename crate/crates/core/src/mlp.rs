//! Fixed-architecture radiance-field perceptron with an analytic reverse pass.
//!
//! Layout of the network, for `g` grouped samples per invocation:
//!
//! ```text
//! main_in ─► trunk[0] ─ReLU─► … ─► trunk[depth-1] ─ReLU─► h
//!             (main_in re-enters at every skip layer)
//! h ─► density            ─► σ raw (g)
//! h ─► feature ─┐
//! aux_in ───────┴► color_hidden ─ReLU─► color_out ─► c raw (3g)
//! ```
//!
//! Raw outputs are ordered `(c_1 … c_g, σ_1 … σ_g)`: `3g` color logits then
//! `g` density logits. Output activations live in [`crate::field`].
//!
//! Weights are stored input-major (`w[i * out_dim + o]`) so the forward pass
//! is a sequence of row updates that skips zero (post-ReLU) inputs.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::distributions::{Distribution, Uniform};

use crate::{seeded_rng, Error, Real, Result};

/// Shape of the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden_width: usize,
    pub depth: usize,
    /// Trunk layers whose input is `[previous activation, main_in]`.
    pub skip_layers: Vec<usize>,
    /// Direction branch input, concatenated before the color hidden layer.
    pub aux_input_dim: usize,
    /// `4 * group_size`.
    pub output_dim: usize,
}

impl MlpArchitecture {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidArchitecture(msg));
        if self.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        if self.input_dim == 0 || self.hidden_width == 0 {
            return bad("input and hidden dims must be positive".into());
        }
        if self.output_dim == 0 || !self.output_dim.is_multiple_of(4) {
            return bad(format!("output dim {} is not 4 * group size", self.output_dim));
        }
        for &s in &self.skip_layers {
            if s == 0 || s >= self.depth {
                return bad(format!("skip layer {s} outside 1..{}", self.depth));
            }
        }
        Ok(())
    }

    /// Number of samples handled by one invocation.
    pub fn group_size(&self) -> usize {
        self.output_dim / 4
    }

    pub fn color_width(&self) -> usize {
        (self.hidden_width / 2).max(1)
    }

    /// `(in, out)` of every layer in storage order.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let w = self.hidden_width;
        let g = self.group_size();
        let mut dims = Vec::with_capacity(self.depth + 4);
        for l in 0..self.depth {
            let mut fan_in = if l == 0 { self.input_dim } else { w };
            if self.skip_layers.contains(&l) {
                fan_in += self.input_dim;
            }
            dims.push((fan_in, w));
        }
        dims.push((w, g));
        dims.push((w, w));
        dims.push((w + self.aux_input_dim, self.color_width()));
        dims.push((self.color_width(), 3 * g));
        dims
    }

    fn is_skip(&self, layer: usize) -> bool {
        self.skip_layers.contains(&layer)
    }
}

/// Affine layer `y = x W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<T>,
    bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Conventional `(out, in)` weight shape.
    pub fn weight_shape(&self) -> (usize, usize) {
        (self.out_dim, self.in_dim)
    }

    /// Weight connecting input `i` to output `o`.
    pub fn weight(&self, o: usize, i: usize) -> T {
        self.weights[i * self.out_dim + o]
    }

    pub fn set_weight(&mut self, o: usize, i: usize, v: T) {
        self.weights[i * self.out_dim + o] = v;
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }

    /// `out[r] = x[r] W + b` for every row.
    pub fn forward(&self, x: &[T], rows: usize, out: &mut [T]) {
        let (n_in, n_out) = (self.in_dim, self.out_dim);
        debug_assert_eq!(x.len(), rows * n_in);
        debug_assert_eq!(out.len(), rows * n_out);
        for yr in out.chunks_exact_mut(n_out) {
            yr.copy_from_slice(&self.bias);
        }
        gemm_acc(rows, n_out, n_in, x, (n_in, 1), &self.weights, out);
    }

    /// Accumulates parameter gradients into `grad` and, when `dx` is given,
    /// writes the input gradient. With `relu_input` set, entries whose input
    /// is not positive get a zero gradient (the ReLU that produced them).
    pub fn backward(&self, x: &[T], dy: &[T], rows: usize, grad: &mut Dense<T>, dx: Option<(&mut [T], bool)>) {
        let (n_in, n_out) = (self.in_dim, self.out_dim);
        debug_assert_eq!(x.len(), rows * n_in);
        debug_assert_eq!(dy.len(), rows * n_out);
        for dyr in dy.chunks_exact(n_out) {
            for (b, d) in grad.bias.iter_mut().zip(dyr) {
                *b += *d;
            }
        }
        // dW += xᵀ dy
        gemm_acc(n_in, n_out, rows, x, (1, n_in), dy, &mut grad.weights);
        if let Some((dx, relu_input)) = dx {
            debug_assert_eq!(dx.len(), rows * n_in);
            let mut wt = vec![T::zero(); n_in * n_out];
            for (i, wi) in self.weights.chunks_exact(n_out).enumerate() {
                for (o, w) in wi.iter().enumerate() {
                    wt[o * n_in + i] = *w;
                }
            }
            dx.fill(T::zero());
            gemm_acc(rows, n_in, n_out, dy, (n_out, 1), &wt, dx);
            if relu_input {
                for (d, xi) in dx.iter_mut().zip(x) {
                    if *xi <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
        }
    }

    fn cast<U: Real>(&self) -> Dense<U> {
        Dense {
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            weights: self.weights.iter().map(|v| U::of(v.as_f64())).collect(),
            bias: self.bias.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

const TILE_ROWS: usize = 8;
const TILE_COLS: usize = 32;

/// `c += A b` with `A(r, k) = a[r * stride.0 + k * stride.1]`, `b` row-major
/// `k × n` and `c` row-major `m × n`. Every entry of `c` accumulates its
/// products in increasing `k` order, so results do not depend on tiling.
fn gemm_acc<T: Real>(m: usize, n: usize, k: usize, a: &[T], stride: (usize, usize), b: &[T], c: &mut [T]) {
    let (rs, ks) = stride;
    debug_assert!(b.len() >= k * n && c.len() >= m * n);
    let mut r0 = 0;
    while r0 < m {
        let mr = TILE_ROWS.min(m - r0);
        let mut j0 = 0;
        while j0 < n {
            let nr = TILE_COLS.min(n - j0);
            if mr == TILE_ROWS && nr == TILE_COLS {
                let mut acc = [[T::zero(); TILE_COLS]; TILE_ROWS];
                for (i, row) in acc.iter_mut().enumerate() {
                    row.copy_from_slice(&c[(r0 + i) * n + j0..][..TILE_COLS]);
                }
                for kk in 0..k {
                    let brow: &[T; TILE_COLS] = b[kk * n + j0..][..TILE_COLS].try_into().unwrap();
                    for (i, row) in acc.iter_mut().enumerate() {
                        let av = a[(r0 + i) * rs + kk * ks];
                        for (cv, bv) in row.iter_mut().zip(brow) {
                            *cv += av * *bv;
                        }
                    }
                }
                for (i, row) in acc.iter().enumerate() {
                    c[(r0 + i) * n + j0..][..TILE_COLS].copy_from_slice(row);
                }
            } else {
                let mut acc = [[T::zero(); TILE_COLS]; TILE_ROWS];
                for (i, row) in acc.iter_mut().take(mr).enumerate() {
                    row[..nr].copy_from_slice(&c[(r0 + i) * n + j0..][..nr]);
                }
                for kk in 0..k {
                    let brow = &b[kk * n + j0..][..nr];
                    for (i, row) in acc.iter_mut().take(mr).enumerate() {
                        let av = a[(r0 + i) * rs + kk * ks];
                        for (cv, bv) in row.iter_mut().zip(brow) {
                            *cv += av * *bv;
                        }
                    }
                }
                for (i, row) in acc.iter().take(mr).enumerate() {
                    c[(r0 + i) * n + j0..][..nr].copy_from_slice(&row[..nr]);
                }
            }
            j0 += nr;
        }
        r0 += mr;
    }
}

/// All weights and biases of one network. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    arch: MlpArchitecture,
    layers: Vec<Dense<T>>,
}

pub type MlpGrads<T> = MlpParams<T>;

impl<T: Real> MlpParams<T> {
    /// Fan-in scaled uniform weights `U(-√(6/fan_in), √(6/fan_in))`, zero biases.
    pub fn init(arch: &MlpArchitecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = seeded_rng(seed);
        let layers = arch
            .layer_dims()
            .into_iter()
            .map(|(n_in, n_out)| {
                let limit = num_traits::Float::sqrt(6.0 / n_in as f64);
                let dist = Uniform::new_inclusive(-limit, limit);
                let mut layer = Dense::zeros(n_in, n_out);
                for w in &mut layer.weights {
                    *w = T::of(dist.sample(&mut rng));
                }
                layer
            })
            .collect();
        Ok(Self {
            arch: arch.clone(),
            layers,
        })
    }

    pub fn zeros(arch: &MlpArchitecture) -> Result<Self> {
        arch.validate()?;
        Ok(Self::zeros_unchecked(arch))
    }

    fn zeros_unchecked(arch: &MlpArchitecture) -> Self {
        Self {
            arch: arch.clone(),
            layers: arch.layer_dims().into_iter().map(|(i, o)| Dense::zeros(i, o)).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros_unchecked(&self.arch)
    }

    pub fn architecture(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    pub fn trunk(&self, l: usize) -> &Dense<T> {
        &self.layers[l]
    }

    pub fn density_head(&self) -> &Dense<T> {
        &self.layers[self.arch.depth]
    }

    pub fn feature_layer(&self) -> &Dense<T> {
        &self.layers[self.arch.depth + 1]
    }

    pub fn color_hidden(&self) -> &Dense<T> {
        &self.layers[self.arch.depth + 2]
    }

    pub fn color_head(&self) -> &Dense<T> {
        &self.layers[self.arch.depth + 3]
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Visits every scalar in storage order (layer by layer, weights then bias).
    pub fn for_each_mut(&mut self, mut f: impl FnMut(usize, &mut T)) {
        for (li, layer) in self.layers.iter_mut().enumerate() {
            for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                f(li, v);
            }
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += *b;
        }
    }

    pub fn scale(&mut self, k: T) {
        for v in self.values_mut() {
            *v *= k;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    /// Converts storage precision, e.g. to `f64` for gradient checks.
    pub fn cast<U: Real>(&self) -> MlpParams<U> {
        MlpParams {
            arch: self.arch.clone(),
            layers: self.layers.iter().map(Dense::cast).collect(),
        }
    }

    /// Rebuilds parameters from layer-major values (weights then bias per layer).
    pub fn from_values(arch: &MlpArchitecture, values: &[T]) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        let n = p.num_parameters();
        if values.len() != n {
            return Err(Error::ShapeMismatch(format!("expected {n} parameters, got {}", values.len())));
        }
        for (dst, src) in p.values_mut().zip(values) {
            *dst = *src;
        }
        Ok(p)
    }
}

/// Activations retained by [`mlp_forward`] for the reverse pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    rows: usize,
    /// Input of each trunk layer (after concatenation).
    trunk_in: Vec<Vec<T>>,
    /// Output of the last trunk ReLU.
    hidden: Vec<T>,
    /// `[feature, aux]` per row.
    color_in: Vec<T>,
    /// ReLU output of the color hidden layer.
    color_act: Vec<T>,
}

impl<T> ForwardCache<T> {
    pub fn rows(&self) -> usize {
        self.rows
    }
}

fn relu_in_place<T: Real>(v: &mut [T]) {
    for x in v {
        if !(*x > T::zero()) {
            *x = T::zero();
        }
    }
}

fn concat_rows<T: Real>(a: &[T], a_w: usize, b: &[T], b_w: usize, rows: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(rows * (a_w + b_w));
    for r in 0..rows {
        out.extend_from_slice(&a[r * a_w..(r + 1) * a_w]);
        out.extend_from_slice(&b[r * b_w..(r + 1) * b_w]);
    }
    out
}

fn check_inputs<T: Real>(arch: &MlpArchitecture, main_in: &[T], aux_in: &[T]) -> Result<usize> {
    if !main_in.len().is_multiple_of(arch.input_dim) {
        return Err(Error::ShapeMismatch(format!(
            "main input length {} is not a multiple of {}",
            main_in.len(),
            arch.input_dim
        )));
    }
    let rows = main_in.len() / arch.input_dim;
    if aux_in.len() != rows * arch.aux_input_dim {
        return Err(Error::ShapeMismatch(format!(
            "aux input length {} != {} rows x {}",
            aux_in.len(),
            rows,
            arch.aux_input_dim
        )));
    }
    if !main_in.iter().chain(aux_in).all(|v| v.is_finite()) {
        return Err(Error::NonFiniteInput("mlp_forward"));
    }
    Ok(rows)
}

/// Batched forward pass. Inputs are row-major; returns raw (pre-activation)
/// outputs, `output_dim` per row, and the cache for [`mlp_backward`].
pub fn mlp_forward<T: Real>(params: &MlpParams<T>, main_in: &[T], aux_in: &[T]) -> Result<(Vec<T>, ForwardCache<T>)> {
    let (raw, cache) = forward_impl(params, main_in, aux_in, true)?;
    Ok((raw, cache.expect("cache requested")))
}

/// Forward pass without retaining activations.
pub fn mlp_infer<T: Real>(params: &MlpParams<T>, main_in: &[T], aux_in: &[T]) -> Result<Vec<T>> {
    Ok(forward_impl(params, main_in, aux_in, false)?.0)
}

fn forward_impl<T: Real>(params: &MlpParams<T>, main_in: &[T], aux_in: &[T], keep: bool) -> Result<(Vec<T>, Option<ForwardCache<T>>)> {
    let arch = &params.arch;
    let rows = check_inputs(arch, main_in, aux_in)?;
    let w = arch.hidden_width;

    let mut trunk_in = Vec::with_capacity(if keep { arch.depth } else { 0 });
    let mut h: Vec<T> = Vec::new();
    for l in 0..arch.depth {
        let input: Vec<T>;
        let x: &[T] = if l == 0 {
            main_in
        } else if arch.is_skip(l) {
            input = concat_rows(&h, w, main_in, arch.input_dim, rows);
            &input
        } else {
            input = core::mem::take(&mut h);
            &input
        };
        let mut out = vec![T::zero(); rows * w];
        params.layers[l].forward(x, rows, &mut out);
        relu_in_place(&mut out);
        if keep {
            trunk_in.push(x.to_vec());
        }
        h = out;
    }

    let g = arch.group_size();
    let mut density = vec![T::zero(); rows * g];
    params.density_head().forward(&h, rows, &mut density);
    let mut feature = vec![T::zero(); rows * w];
    params.feature_layer().forward(&h, rows, &mut feature);
    let color_in = concat_rows(&feature, w, aux_in, arch.aux_input_dim, rows);
    drop(feature);
    let cw = arch.color_width();
    let mut color_act = vec![T::zero(); rows * cw];
    params.color_hidden().forward(&color_in, rows, &mut color_act);
    relu_in_place(&mut color_act);
    let mut color = vec![T::zero(); rows * 3 * g];
    params.color_head().forward(&color_act, rows, &mut color);

    let mut raw = Vec::with_capacity(rows * 4 * g);
    for r in 0..rows {
        raw.extend_from_slice(&color[r * 3 * g..(r + 1) * 3 * g]);
        raw.extend_from_slice(&density[r * g..(r + 1) * g]);
    }
    let cache = keep.then_some(ForwardCache {
        rows,
        trunk_in,
        hidden: h,
        color_in,
        color_act,
    });
    Ok((raw, cache))
}

/// Gradients of `⟨d_raw_out, raw_out⟩` w.r.t. parameters and the main input.
pub fn mlp_backward<T: Real>(params: &MlpParams<T>, cache: &ForwardCache<T>, d_raw_out: &[T]) -> Result<(MlpGrads<T>, Vec<T>)> {
    let mut grads = params.zeros_like();
    let d_in = backward_accumulate(params, cache, d_raw_out, &mut grads, true)?;
    Ok((grads, d_in.unwrap_or_default()))
}

/// Reverse pass accumulating into an existing gradient buffer.
/// The main-input gradient is only computed when `want_input_grad` is set.
pub fn backward_accumulate<T: Real>(
    params: &MlpParams<T>,
    cache: &ForwardCache<T>,
    d_raw_out: &[T],
    grads: &mut MlpGrads<T>,
    want_input_grad: bool,
) -> Result<Option<Vec<T>>> {
    let arch = &params.arch;
    let rows = cache.rows;
    if d_raw_out.len() != rows * arch.output_dim {
        return Err(Error::ShapeMismatch(format!(
            "d_raw_out length {} != {} rows x {}",
            d_raw_out.len(),
            rows,
            arch.output_dim
        )));
    }
    if grads.arch != *arch {
        return Err(Error::ShapeMismatch("gradient buffer architecture differs".into()));
    }
    let g = arch.group_size();
    let w = arch.hidden_width;
    let cw = arch.color_width();
    let depth = arch.depth;

    let mut d_color = Vec::with_capacity(rows * 3 * g);
    let mut d_density = Vec::with_capacity(rows * g);
    for row in d_raw_out.chunks_exact(4 * g) {
        d_color.extend_from_slice(&row[..3 * g]);
        d_density.extend_from_slice(&row[3 * g..]);
    }

    let mut d_color_act = vec![T::zero(); rows * cw];
    params.color_head().backward(
        &cache.color_act,
        &d_color,
        rows,
        &mut grads.layers[depth + 3],
        Some((&mut d_color_act, true)),
    );
    let mut d_color_in = vec![T::zero(); rows * (w + arch.aux_input_dim)];
    params.color_hidden().backward(
        &cache.color_in,
        &d_color_act,
        rows,
        &mut grads.layers[depth + 2],
        Some((&mut d_color_in, false)),
    );
    let mut d_feature = Vec::with_capacity(rows * w);
    for row in d_color_in.chunks_exact(w + arch.aux_input_dim) {
        d_feature.extend_from_slice(&row[..w]);
    }
    let mut d_h = vec![T::zero(); rows * w];
    params.feature_layer().backward(
        &cache.hidden,
        &d_feature,
        rows,
        &mut grads.layers[depth + 1],
        Some((&mut d_h, true)),
    );
    let mut d_h_density = vec![T::zero(); rows * w];
    params.density_head().backward(
        &cache.hidden,
        &d_density,
        rows,
        &mut grads.layers[depth],
        Some((&mut d_h_density, true)),
    );
    for (a, b) in d_h.iter_mut().zip(&d_h_density) {
        *a += *b;
    }

    let mut d_main = if want_input_grad {
        Some(vec![T::zero(); rows * arch.input_dim])
    } else {
        None
    };
    // d_h is already masked by the ReLU that produced layer depth-1's output.
    for l in (0..depth).rev() {
        let input = &cache.trunk_in[l];
        let n_in = params.layers[l].in_dim;
        let skip = l > 0 && arch.is_skip(l);
        let need_dx = l > 0 || d_main.is_some();
        if !need_dx {
            params.layers[l].backward(input, &d_h, rows, &mut grads.layers[l], None);
            break;
        }
        let mut dx = vec![T::zero(); rows * n_in];
        if l == 0 {
            params.layers[l].backward(input, &d_h, rows, &mut grads.layers[l], Some((&mut dx, false)));
            if let Some(dm) = d_main.as_mut() {
                for (a, b) in dm.iter_mut().zip(&dx) {
                    *a += *b;
                }
            }
            break;
        }
        if skip {
            // Hidden part is ReLU-fed, the re-entering main input is not.
            params.layers[l].backward(input, &d_h, rows, &mut grads.layers[l], Some((&mut dx, false)));
            let mut next = Vec::with_capacity(rows * w);
            for (r, row) in dx.chunks_exact(n_in).enumerate() {
                let xr = &input[r * n_in..r * n_in + w];
                next.extend(row[..w].iter().zip(xr).map(|(d, x)| if *x > T::zero() { *d } else { T::zero() }));
                if let Some(dm) = d_main.as_mut() {
                    for (a, b) in dm[r * arch.input_dim..(r + 1) * arch.input_dim].iter_mut().zip(&row[w..]) {
                        *a += *b;
                    }
                }
            }
            d_h = next;
        } else {
            params.layers[l].backward(input, &d_h, rows, &mut grads.layers[l], Some((&mut dx, true)));
            d_h = dx;
        }
    }
    Ok(d_main)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(input: usize, width: usize, depth: usize, skips: &[usize], aux: usize, group: usize) -> MlpArchitecture {
        MlpArchitecture {
            input_dim: input,
            hidden_width: width,
            depth,
            skip_layers: skips.to_vec(),
            aux_input_dim: aux,
            output_dim: 4 * group,
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = arch(63, 64, 4, &[2], 27, 1);
        let p1 = MlpParams::<f32>::init(&a, 7).unwrap();
        let p2 = MlpParams::<f32>::init(&a, 7).unwrap();
        let p3 = MlpParams::<f32>::init(&a, 8).unwrap();
        assert!(p1.values().zip(p2.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_ne!(p1, p3);
        assert_eq!(p1.trunk(0).weight_shape(), (64, 63));
        assert!(p1.layers().iter().all(|l| l.bias().iter().all(|b| *b == 0.0)));
        let limit = (6.0f32 / 63.0).sqrt();
        assert!(p1.trunk(0).weights().iter().all(|w| w.abs() <= limit));
    }

    #[test]
    fn rejects_invalid_architecture() {
        assert!(MlpParams::<f32>::init(&arch(3, 8, 0, &[], 0, 1), 0).is_err());
        assert!(MlpParams::<f32>::init(&arch(3, 8, 2, &[2], 0, 1), 0).is_err());
        let mut a = arch(3, 8, 2, &[], 0, 1);
        a.output_dim = 6;
        assert!(a.validate().is_err());
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let a = arch(5, 8, 3, &[1], 4, 2);
        let p = MlpParams::<f64>::zeros(&a).unwrap();
        let (raw, _) = mlp_forward(&p, &[0.3; 10], &[1.0; 8]).unwrap();
        assert_eq!(raw.len(), 16);
        assert!(raw.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identical_rows_give_identical_outputs() {
        let a = arch(4, 16, 3, &[2], 3, 2);
        let p = MlpParams::<f32>::init(&a, 1).unwrap();
        let row = [0.1f32, -0.4, 0.9, 0.2];
        let aux = [0.5f32, 0.5, -0.7];
        let main: Vec<f32> = row.iter().chain(&row).copied().collect();
        let auxes: Vec<f32> = aux.iter().chain(&aux).copied().collect();
        let (raw, _) = mlp_forward(&p, &main, &auxes).unwrap();
        assert_eq!(raw[..8], raw[8..]);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let a = arch(2, 4, 1, &[], 0, 1);
        let p = MlpParams::<f32>::zeros(&a).unwrap();
        assert_eq!(
            mlp_forward(&p, &[f32::NAN, 0.0], &[]).unwrap_err(),
            Error::NonFiniteInput("mlp_forward")
        );
        assert!(matches!(mlp_forward(&p, &[0.0; 3], &[]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn hand_evaluated_single_hidden_layer() {
        // depth 1, width 2, no aux, one sample per group (4 raw outputs).
        let a = arch(2, 2, 1, &[], 0, 1);
        let mut p = MlpParams::<f64>::zeros(&a).unwrap();
        let l = p.layers_mut();
        // trunk: h = relu(W x + b), W = [[1, 2], [-1, 0.5]], b = [0.5, 0.25]
        l[0].set_weight(0, 0, 1.0);
        l[0].set_weight(0, 1, 2.0);
        l[0].set_weight(1, 0, -1.0);
        l[0].set_weight(1, 1, 0.5);
        l[0].bias_mut().copy_from_slice(&[0.5, 0.25]);
        // density: σ = 2 h0 + 3 h1 - 1
        l[1].set_weight(0, 0, 2.0);
        l[1].set_weight(0, 1, 3.0);
        l[1].bias_mut()[0] = -1.0;
        // feature = identity, color hidden (width 1) = relu(f0 + f1), color = [1, -1, 2] * a + [0, 0.5, 0]
        l[2].set_weight(0, 0, 1.0);
        l[2].set_weight(1, 1, 1.0);
        l[3].set_weight(0, 0, 1.0);
        l[3].set_weight(0, 1, 1.0);
        l[4].set_weight(0, 0, 1.0);
        l[4].set_weight(1, 0, -1.0);
        l[4].set_weight(2, 0, 2.0);
        l[4].bias_mut()[1] = 0.5;
        let (raw, _) = mlp_forward(&p, &[1.0, 0.0], &[]).unwrap();
        // z = [1 + 0.5, -1 + 0.25] = [1.5, -0.75] → h = [1.5, 0]
        // σ raw = 3 - 1 = 2; color hidden = relu(1.5) = 1.5; color = [1.5, -1.0, 3.0]
        assert_eq!(raw, [1.5, -1.0, 3.0, 2.0]);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let a = arch(6, 8, 3, &[1], 3, 2);
        let p = MlpParams::<f64>::init(&a, 3).unwrap();
        let main: Vec<f64> = (0..18).map(|i| (i as f64 * 0.37).sin()).collect();
        let aux: Vec<f64> = (0..9).map(|i| (i as f64 * 0.11).cos()).collect();
        let (raw, cache) = mlp_forward(&p, &main, &aux).unwrap();
        let (g, d_in) = mlp_backward(&p, &cache, &vec![0.0; raw.len()]).unwrap();
        assert!(g.values().all(|v| *v == 0.0));
        assert!(d_in.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_linear_layer_gradient_is_outer_product() {
        let mut layer = Dense::<f64>::zeros(3, 2);
        for (k, w) in layer.weights_mut().iter_mut().enumerate() {
            *w = k as f64 - 2.0;
        }
        let x = [0.5, -1.0, 2.0];
        let dy = [3.0, -0.5];
        let mut g = Dense::zeros(3, 2);
        let mut dx = [0.0; 3];
        layer.backward(&x, &dy, 1, &mut g, Some((&mut dx, false)));
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(g.weight(o, i), dy[o] * x[i]);
            }
            assert_eq!(g.bias()[o], dy[o]);
        }
        for i in 0..3 {
            let expect: f64 = (0..2).map(|o| layer.weight(o, i) * dy[o]).sum();
            assert_eq!(dx[i], expect);
        }
    }

    fn fd_relative_error(analytic: f64, numeric: f64) -> f64 {
        let scale = analytic.abs().max(numeric.abs());
        if scale < 1e-7 {
            (analytic - numeric).abs()
        } else {
            (analytic - numeric).abs() / scale
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        use rand::Rng;
        let a = arch(6, 12, 3, &[2], 4, 2);
        let p = MlpParams::<f64>::init(&a, 17).unwrap();
        let mut rng = seeded_rng(17);
        let rows = 5;
        let main: Vec<f64> = (0..rows * 6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let aux: Vec<f64> = (0..rows * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let upstream: Vec<f64> = (0..rows * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let objective = |p: &MlpParams<f64>, main: &[f64]| -> f64 {
            let (raw, _) = mlp_forward(p, main, &aux).unwrap();
            raw.iter().zip(&upstream).map(|(r, u)| r * u).sum()
        };
        let (_, cache) = mlp_forward(&p, &main, &aux).unwrap();
        let (grads, d_main) = mlp_backward(&p, &cache, &upstream).unwrap();
        let flat: Vec<f64> = p.values().copied().collect();
        let gflat: Vec<f64> = grads.values().copied().collect();
        let h = 1e-5;
        for _ in 0..100 {
            let k = rng.gen_range(0..flat.len());
            let mut plus = flat.clone();
            plus[k] += h;
            let mut minus = flat.clone();
            minus[k] -= h;
            let fp = objective(&MlpParams::from_values(&a, &plus).unwrap(), &main);
            let fm = objective(&MlpParams::from_values(&a, &minus).unwrap(), &main);
            let numeric = (fp - fm) / (2.0 * h);
            let err = fd_relative_error(gflat[k], numeric);
            assert!(err < 1e-4, "param {k}: analytic {} numeric {numeric}", gflat[k]);
        }
        for k in 0..main.len() {
            let mut plus = main.clone();
            plus[k] += h;
            let mut minus = main.clone();
            minus[k] -= h;
            let numeric = (objective(&p, &plus) - objective(&p, &minus)) / (2.0 * h);
            assert!(fd_relative_error(d_main[k], numeric) < 1e-4);
        }
    }

    #[test]
    fn accumulate_matches_fresh_backward() {
        let a = arch(3, 8, 2, &[1], 2, 1);
        let p = MlpParams::<f64>::init(&a, 5).unwrap();
        let (raw, cache) = mlp_forward(&p, &[0.2, 0.4, -0.1], &[0.3, 0.3]).unwrap();
        let up = vec![1.0; raw.len()];
        let (g1, _) = mlp_backward(&p, &cache, &up).unwrap();
        let mut g2 = p.zeros_like();
        backward_accumulate(&p, &cache, &up, &mut g2, false).unwrap();
        backward_accumulate(&p, &cache, &up, &mut g2, false).unwrap();
        for (a, b) in g1.values().zip(g2.values()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }
}
