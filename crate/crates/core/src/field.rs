//! Radiance-field evaluation: single-sample (SISO) and grouped (MIMO).
//!
//! The batched [`evaluate_pass`] / [`backward_pass`] pair is what rendering
//! and training use. One pass evaluates every group of every ray in a single
//! network call, averages repeated slots, and converts densities to alphas.

use alloc::vec;
use alloc::vec::Vec;

use crate::encoding::EncodingSpec;
use crate::grouping::GroupLayout;
use crate::mlp::{backward_accumulate, mlp_forward, ForwardCache, MlpArchitecture, MlpGrads, MlpParams};
use crate::render::alpha_from_sigma;
use crate::{Error, Real, Result};

/// Activated output for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldOutput<T> {
    /// Sigmoid output, componentwise in `[0, 1]`.
    pub color: [T; 3],
    /// ReLU output, `σ ≥ 0`.
    pub sigma: T,
}

/// Network shape and encodings for one field (coarse or fine).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldSpec {
    pub group_size: usize,
    pub hidden_width: usize,
    pub depth: usize,
    pub skip_layers: Vec<usize>,
    pub pos_encoding: EncodingSpec,
    pub dir_encoding: EncodingSpec,
}

impl FieldSpec {
    /// Desk-scale defaults: width 64, depth 4, skip at layer 2, 6 position
    /// and 4 direction frequencies.
    pub fn desk(group_size: usize) -> Self {
        Self {
            group_size,
            hidden_width: 64,
            depth: 4,
            skip_layers: vec![2],
            pos_encoding: EncodingSpec::new(6),
            dir_encoding: EncodingSpec::new(4),
        }
    }

    /// Full-size architecture: 8 layers of 256, input re-entering at layer 5,
    /// 10 position and 4 direction frequencies.
    pub fn full_scale(group_size: usize) -> Self {
        Self {
            group_size,
            hidden_width: 256,
            depth: 8,
            skip_layers: vec![5],
            pos_encoding: EncodingSpec::new(10),
            dir_encoding: EncodingSpec::new(4),
        }
    }

    pub fn architecture(&self) -> MlpArchitecture {
        MlpArchitecture {
            input_dim: self.group_size * self.pos_encoding.output_dim(3),
            hidden_width: self.hidden_width,
            depth: self.depth,
            skip_layers: self.skip_layers.clone(),
            aux_input_dim: self.dir_encoding.output_dim(3),
            output_dim: 4 * self.group_size,
        }
    }
}

/// A field: spec plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NerfNetwork<T> {
    pub spec: FieldSpec,
    pub params: MlpParams<T>,
}

impl<T: Real> NerfNetwork<T> {
    pub fn init(spec: FieldSpec, seed: u64) -> Result<Self> {
        let params = MlpParams::init(&spec.architecture(), seed)?;
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: FieldSpec, params: MlpParams<T>) -> Result<Self> {
        if *params.architecture() != spec.architecture() {
            return Err(Error::ShapeMismatch("parameters do not match field spec".into()));
        }
        Ok(Self { spec, params })
    }

    pub fn group_size(&self) -> usize {
        self.spec.group_size
    }

    pub fn cast<U: Real>(&self) -> NerfNetwork<U> {
        NerfNetwork {
            spec: self.spec.clone(),
            params: self.params.cast(),
        }
    }

    /// Single-sample field; requires a network with group size 1.
    pub fn field_siso(&self, x: [T; 3], d: [T; 3]) -> Result<FieldOutput<T>> {
        if self.group_size() != 1 {
            return Err(Error::ShapeMismatch("field_siso needs group size 1".into()));
        }
        let mut runs = 0;
        Ok(self.field_mimo(&[x], d, &mut runs)?[0])
    }

    /// One invocation on a group of `N_p` coordinates sharing direction `d`.
    pub fn field_mimo(&self, coords: &[[T; 3]], d: [T; 3], runs: &mut u64) -> Result<Vec<FieldOutput<T>>> {
        let g = self.group_size();
        if coords.len() != g {
            return Err(Error::ShapeMismatch(alloc::format!(
                "group of {} coordinates for group size {g}",
                coords.len()
            )));
        }
        check_unit(d)?;
        let pos_dim = self.spec.pos_encoding.output_dim(3);
        let mut main = vec![T::zero(); g * pos_dim];
        for (c, out) in coords.iter().zip(main.chunks_exact_mut(pos_dim)) {
            self.spec.pos_encoding.encode_into(c, out);
        }
        let mut aux = vec![T::zero(); self.spec.dir_encoding.output_dim(3)];
        self.spec.dir_encoding.encode_into(&d, &mut aux);
        let (raw, _) = mlp_forward(&self.params, &main, &aux)?;
        *runs += 1;
        Ok((0..g).map(|j| activate(&raw, g, j)).collect())
    }
}

fn check_unit<T: Real>(d: [T; 3]) -> Result<()> {
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if (n - T::one()).abs().as_f64() > 1e-5 {
        return Err(Error::InvalidConfig(alloc::format!("direction norm {n} is not 1")));
    }
    Ok(())
}

#[inline]
fn sigmoid<T: Real>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

#[inline]
fn activate<T: Real>(raw_row: &[T], g: usize, j: usize) -> FieldOutput<T> {
    let c = &raw_row[3 * j..3 * j + 3];
    let s = raw_row[3 * g + j];
    FieldOutput {
        color: [sigmoid(c[0]), sigmoid(c[1]), sigmoid(c[2])],
        sigma: if s > T::zero() { s } else { T::zero() },
    }
}

/// Arithmetic mean of each run of `r` consecutive outputs.
pub fn average_repeats<T: Real>(outputs: &[FieldOutput<T>], r: usize) -> Result<Vec<FieldOutput<T>>> {
    if r == 0 || !outputs.len().is_multiple_of(r) {
        return Err(Error::RepetitionMismatch {
            repeat: r,
            group_size: outputs.len(),
        });
    }
    let inv = T::one() / T::of(r as f64);
    Ok(outputs
        .chunks_exact(r)
        .map(|chunk| {
            let mut acc = FieldOutput::<T>::default();
            for o in chunk {
                for k in 0..3 {
                    acc.color[k] += o.color[k];
                }
                acc.sigma += o.sigma;
            }
            for k in 0..3 {
                acc.color[k] *= inv;
            }
            acc.sigma *= inv;
            acc
        })
        .collect())
}

/// Samples of one ray as seen by a pass.
#[derive(Debug, Clone, Copy)]
pub struct RaySamples<'a, T> {
    pub dir: [T; 3],
    pub coords: &'a [[T; 3]],
    pub deltas: &'a [T],
}

/// Either one layout shared by every ray or one per ray.
#[derive(Debug, Clone)]
pub enum Layouts {
    Shared(GroupLayout),
    PerRay(Vec<GroupLayout>),
}

impl Layouts {
    pub fn get(&self, ray: usize) -> &GroupLayout {
        match self {
            Layouts::Shared(l) => l,
            Layouts::PerRay(v) => &v[ray],
        }
    }
}

/// Result of one batched field pass.
#[derive(Debug, Clone)]
pub struct PassForward<T> {
    pub layouts: Layouts,
    row_offsets: Vec<usize>,
    raw: Vec<T>,
    cache: Option<ForwardCache<T>>,
    /// Per ray, per sample: averaged color.
    pub colors: Vec<Vec<[T; 3]>>,
    /// Per ray, per sample: averaged density.
    pub sigmas: Vec<Vec<T>>,
    /// Per ray, per sample: `1 - exp(-σδ)`.
    pub alphas: Vec<Vec<T>>,
    /// Network invocations (rows) in this pass.
    pub runs: u64,
}

/// Evaluates `net` on every group of every ray. With `keep_cache` unset the
/// pass cannot be differentiated but uses far less memory.
pub fn evaluate_pass<T: Real>(
    net: &NerfNetwork<T>,
    rays: &[RaySamples<'_, T>],
    layouts: Layouts,
    keep_cache: bool,
) -> Result<PassForward<T>> {
    let g = net.group_size();
    let pos_dim = net.spec.pos_encoding.output_dim(3);
    let dir_dim = net.spec.dir_encoding.output_dim(3);
    let mut row_offsets = Vec::with_capacity(rays.len() + 1);
    let mut rows = 0;
    for (r, ray) in rays.iter().enumerate() {
        let layout = layouts.get(r);
        if layout.group_size() != g || layout.n_samples() != ray.coords.len() || ray.deltas.len() != ray.coords.len() {
            return Err(Error::ShapeMismatch(alloc::format!(
                "ray {r}: layout ({} samples, group {}) vs {} coords / {} deltas, network group {g}",
                layout.n_samples(),
                layout.group_size(),
                ray.coords.len(),
                ray.deltas.len()
            )));
        }
        row_offsets.push(rows);
        rows += layout.n_groups();
    }
    row_offsets.push(rows);

    let mut main = vec![T::zero(); rows * g * pos_dim];
    let mut aux = vec![T::zero(); rows * dir_dim];
    let mut enc = Vec::new();
    for (r, ray) in rays.iter().enumerate() {
        let layout = layouts.get(r);
        enc.clear();
        enc.resize(ray.coords.len() * pos_dim, T::zero());
        for (c, out) in ray.coords.iter().zip(enc.chunks_exact_mut(pos_dim)) {
            net.spec.pos_encoding.encode_into(c, out);
        }
        let mut dir_enc = vec![T::zero(); dir_dim];
        net.spec.dir_encoding.encode_into(&ray.dir, &mut dir_enc);
        for grp in 0..layout.n_groups() {
            let row = row_offsets[r] + grp;
            let dst = &mut main[row * g * pos_dim..(row + 1) * g * pos_dim];
            for j in 0..g {
                let s = layout.slot_source(grp, j);
                dst[j * pos_dim..(j + 1) * pos_dim].copy_from_slice(&enc[s * pos_dim..(s + 1) * pos_dim]);
            }
            aux[row * dir_dim..(row + 1) * dir_dim].copy_from_slice(&dir_enc);
        }
    }

    let (raw, cache) = if keep_cache {
        let (raw, cache) = mlp_forward(&net.params, &main, &aux)?;
        (raw, Some(cache))
    } else {
        (crate::mlp::mlp_infer(&net.params, &main, &aux)?, None)
    };
    drop(main);

    let mut colors = Vec::with_capacity(rays.len());
    let mut sigmas = Vec::with_capacity(rays.len());
    let mut alphas = Vec::with_capacity(rays.len());
    let out_dim = 4 * g;
    for (r, ray) in rays.iter().enumerate() {
        let layout = layouts.get(r);
        let rep = layout.repeat();
        let n = ray.coords.len();
        let mut cs = Vec::with_capacity(n);
        let mut ss = Vec::with_capacity(n);
        let mut als = Vec::with_capacity(n);
        let mut slots = Vec::with_capacity(rep);
        for i in 0..n {
            let (grp, j0) = layout.sample_position(i);
            let row = row_offsets[r] + grp;
            let raw_row = &raw[row * out_dim..(row + 1) * out_dim];
            slots.clear();
            slots.extend((j0..j0 + rep).map(|j| activate(raw_row, g, j)));
            let o = if rep == 1 { slots[0] } else { average_repeats(&slots, rep)?[0] };
            cs.push(o.color);
            ss.push(o.sigma);
            als.push(alpha_from_sigma(o.sigma, ray.deltas[i]));
        }
        colors.push(cs);
        sigmas.push(ss);
        alphas.push(als);
    }

    Ok(PassForward {
        layouts,
        row_offsets,
        raw,
        cache,
        colors,
        sigmas,
        alphas,
        runs: rows as u64,
    })
}

/// Reverse pass: accumulates parameter gradients given `∂L/∂color` and
/// `∂L/∂alpha` for every sample of every ray.
pub fn backward_pass<T: Real>(
    net: &NerfNetwork<T>,
    pass: &PassForward<T>,
    rays: &[RaySamples<'_, T>],
    d_colors: &[Vec<[T; 3]>],
    d_alphas: &[Vec<T>],
    grads: &mut MlpGrads<T>,
) -> Result<()> {
    let cache = pass
        .cache
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("pass was evaluated without a cache".into()))?;
    let g = net.group_size();
    let out_dim = 4 * g;
    let mut d_raw = vec![T::zero(); pass.raw.len()];
    for (r, ray) in rays.iter().enumerate() {
        let layout = pass.layouts.get(r);
        let rep = layout.repeat();
        let inv_rep = T::one() / T::of(rep as f64);
        for i in 0..ray.coords.len() {
            let (grp, j0) = layout.sample_position(i);
            let row = pass.row_offsets[r] + grp;
            let raw_row = &pass.raw[row * out_dim..(row + 1) * out_dim];
            let d_raw_row = &mut d_raw[row * out_dim..(row + 1) * out_dim];
            let delta = ray.deltas[i];
            // dα/dσ = δ·exp(-σδ)
            let d_sigma = d_alphas[r][i] * delta * (-(pass.sigmas[r][i] * delta)).exp();
            for j in j0..j0 + rep {
                for k in 0..3 {
                    let c = sigmoid(raw_row[3 * j + k]);
                    d_raw_row[3 * j + k] = d_colors[r][i][k] * inv_rep * c * (T::one() - c);
                }
                if raw_row[3 * g + j] > T::zero() {
                    d_raw_row[3 * g + j] = d_sigma * inv_rep;
                }
            }
        }
    }
    backward_accumulate(&net.params, cache, &d_raw, grads, false)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grouping::{GroupingMode, Reformulation};
    use crate::seeded_rng;
    use rand::Rng;

    fn tiny_spec(g: usize) -> FieldSpec {
        FieldSpec {
            group_size: g,
            hidden_width: 16,
            depth: 3,
            skip_layers: vec![2],
            pos_encoding: EncodingSpec::new(3),
            dir_encoding: EncodingSpec::new(2),
        }
    }

    fn unit(v: [f64; 3]) -> [f64; 3] {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        [v[0] / n, v[1] / n, v[2] / n]
    }

    #[test]
    fn zero_parameters_give_grey_and_empty() {
        let spec = tiny_spec(1);
        let net = NerfNetwork::<f64>::from_params(spec.clone(), MlpParams::zeros(&spec.architecture()).unwrap()).unwrap();
        let o = net.field_siso([0.1, 0.2, 0.3], [0.0, 0.0, 1.0]).unwrap();
        assert_eq!(o.color, [0.5; 3]);
        assert_eq!(o.sigma, 0.0);
    }

    #[test]
    fn density_ignores_direction() {
        let net = NerfNetwork::<f64>::init(tiny_spec(4), 9).unwrap();
        let coords = [[0.1, 0.2, 0.3], [0.2, 0.2, 0.3], [0.3, 0.2, 0.3], [0.4, 0.2, 0.3]];
        let mut runs = 0;
        let a = net.field_mimo(&coords, [0.0, 0.0, 1.0], &mut runs).unwrap();
        let b = net.field_mimo(&coords, unit([1.0, -2.0, 0.5]), &mut runs).unwrap();
        assert_eq!(runs, 2);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.sigma, y.sigma);
        }
        assert!(a.iter().zip(&b).any(|(x, y)| x.color != y.color));
    }

    #[test]
    fn single_precision_density_tracks_double_reference() {
        let net = NerfNetwork::<f32>::init(tiny_spec(1), 4).unwrap();
        let net64 = net.cast::<f64>();
        let mut max_err = 0.0f64;
        let mut rng = seeded_rng(1);
        for _ in 0..50 {
            let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let o32 = net.field_siso(x.map(|v: f64| v as f32), [0.0, 1.0, 0.0]).unwrap();
            let o64 = net64.field_siso(x, [0.0, 1.0, 0.0]).unwrap();
            max_err = max_err.max((o32.sigma as f64 - o64.sigma).abs());
        }
        assert!(max_err < 1e-5, "{max_err}");
    }

    #[test]
    fn group_of_one_matches_siso_bitwise() {
        let net = NerfNetwork::<f64>::init(tiny_spec(1), 2).unwrap();
        let x = [0.3, -0.1, 0.7];
        let d = unit([1.0, 1.0, 0.0]);
        let mut runs = 0;
        assert_eq!(net.field_mimo(&[x], d, &mut runs).unwrap()[0], net.field_siso(x, d).unwrap());
    }

    #[test]
    fn permuting_a_group_changes_outputs() {
        let net = NerfNetwork::<f64>::init(tiny_spec(2), 11).unwrap();
        let (a, b) = ([0.1, 0.5, -0.3], [-0.4, 0.2, 0.6]);
        let d = [1.0, 0.0, 0.0];
        let mut runs = 0;
        let ab = net.field_mimo(&[a, b], d, &mut runs).unwrap();
        let ba = net.field_mimo(&[b, a], d, &mut runs).unwrap();
        assert_ne!(ab[0], ba[1]);
    }

    #[test]
    fn averaging_repeats() {
        let o = |s: f64, c: f64| FieldOutput { color: [c; 3], sigma: s };
        let same = average_repeats(&[o(1.0, 0.2), o(1.0, 0.2)], 2).unwrap();
        assert_eq!(same, vec![o(1.0, 0.2)]);
        let mean = average_repeats(&[o(0.2, 0.0), o(0.4, 1.0)], 2).unwrap();
        assert!((mean[0].sigma - 0.3).abs() < 1e-15);
        assert!(mean[0].color.iter().all(|c| (0.0..=1.0).contains(c)));
        assert!(average_repeats(&[o(0.0, 0.0); 3], 2).is_err());
    }

    #[test]
    fn pass_counts_one_run_per_group() {
        let net = NerfNetwork::<f32>::init(tiny_spec(2), 0).unwrap();
        let coords: Vec<[f32; 3]> = (0..256).map(|i| [i as f32 / 256.0, 0.0, 0.0]).collect();
        let deltas = vec![1.0 / 256.0; 256];
        let ray = RaySamples {
            dir: [1.0, 0.0, 0.0],
            coords: &coords,
            deltas: &deltas,
        };
        let layout = GroupLayout::neighbor(256, 2, 0).unwrap();
        let pass = evaluate_pass(&net, &[ray], Layouts::Shared(layout), false).unwrap();
        assert_eq!(pass.runs, 128);
    }

    /// Pass outputs agree with per-group `field_mimo` calls plus averaging.
    #[test]
    fn pass_matches_direct_group_evaluation() {
        let net = NerfNetwork::<f64>::init(tiny_spec(4), 5).unwrap();
        let mut rng = seeded_rng(3);
        let n = 12;
        let coords: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let deltas = vec![0.1; n];
        let d = unit([0.3, -0.2, 1.0]);
        let ray = RaySamples {
            dir: d,
            coords: &coords,
            deltas: &deltas,
        };
        let reform = Reformulation { shift: 1, repeat: 2 };
        let layout = GroupLayout::build(n, 4, reform, GroupingMode::Neighbor, &mut rng).unwrap();
        let pass = evaluate_pass(&net, &[ray], Layouts::Shared(layout.clone()), true).unwrap();
        assert_eq!(pass.runs, 7);
        let mut runs = 0;
        for i in 0..n {
            let (grp, j0) = layout.sample_position(i);
            let group: Vec<[f64; 3]> = (0..4).map(|j| coords[layout.slot_source(grp, j)]).collect();
            let outs = net.field_mimo(&group, d, &mut runs).unwrap();
            let avg = average_repeats(&outs[j0..j0 + 2], 2).unwrap()[0];
            assert!((avg.sigma - pass.sigmas[0][i]).abs() < 1e-14);
            for k in 0..3 {
                assert!((avg.color[k] - pass.colors[0][i][k]).abs() < 1e-14);
            }
        }
    }
}
