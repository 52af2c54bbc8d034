//! Coarse-to-fine rendering of ray batches, with and without gradients.
//!
//! [`run_batch`] is one training step's worth of computation on a batch of
//! rays: it evaluates every reformulation on shared sample sets, composites,
//! evaluates the losses and, on request, back-propagates into both networks.
//! [`render_rays`] is the inference path (base formulation, no gradients).

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::field::{backward_pass, evaluate_pass, FieldSpec, Layouts, NerfNetwork, PassForward, RaySamples};
use crate::grouping::{GroupLayout, GroupingMode, Reformulation};
use crate::mlp::MlpGrads;
use crate::objectives::{consistency_loss, distill_loss, pixel_loss, pixel_loss_grad, PairWeighting, PerSampleRecord};
use crate::render::{composite, composite_backward, hierarchical_sample, stratified_sample, CompositeResult, Ray, SampleSet};
use crate::{Error, Real, Result};

/// Sampling and compositing settings shared by training and inference.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderSettings {
    pub n_coarse: usize,
    pub n_fine: usize,
    pub jitter: bool,
    pub grouping: GroupingMode,
    pub background: [f64; 3],
}

impl RenderSettings {
    pub fn validate(&self, group_size: usize) -> Result<()> {
        if self.n_coarse == 0 {
            return Err(Error::InvalidConfig("n_coarse must be positive".into()));
        }
        for n in [self.n_coarse, self.n_fine] {
            if group_size == 0 || n % group_size != 0 {
                return Err(Error::Indivisible { n, group_size });
            }
        }
        Ok(())
    }

    /// Network invocations per pixel for the base formulation.
    pub fn runs_per_pixel(&self, group_size: usize) -> usize {
        (self.n_coarse + self.n_coarse + self.n_fine) / group_size
    }

    fn background<T: Real>(&self) -> [T; 3] {
        self.background.map(T::of)
    }
}

/// Coarse and fine networks.
#[derive(Debug, Clone, PartialEq)]
pub struct NerfPair<T> {
    pub coarse: NerfNetwork<T>,
    pub fine: NerfNetwork<T>,
}

impl<T: Real> NerfPair<T> {
    /// Coarse network from `seed`, fine network from `seed + 1`.
    pub fn init(spec: FieldSpec, seed: u64) -> Result<Self> {
        Ok(Self {
            coarse: NerfNetwork::init(spec.clone(), seed)?,
            fine: NerfNetwork::init(spec, seed.wrapping_add(1))?,
        })
    }

    pub fn group_size(&self) -> usize {
        self.coarse.group_size()
    }

    pub fn cast<U: Real>(&self) -> NerfPair<U> {
        NerfPair {
            coarse: self.coarse.cast(),
            fine: self.fine.cast(),
        }
    }

    pub fn zero_grads(&self) -> PairGrads<T> {
        PairGrads {
            coarse: self.coarse.params.zeros_like(),
            fine: self.fine.params.zeros_like(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairGrads<T> {
    pub coarse: MlpGrads<T>,
    pub fine: MlpGrads<T>,
}

impl<T: Real> PairGrads<T> {
    pub fn add_assign(&mut self, other: &Self) {
        self.coarse.add_assign(&other.coarse);
        self.fine.add_assign(&other.fine);
    }
}

/// What the batch loss supervises besides pixels.
#[derive(Debug, Clone, Copy)]
pub enum Supervision<'a, T> {
    /// Pixel losses only.
    Pixel,
    /// Consistency between reformulations, weighted by `lambda`.
    Consistency { lambda: T, weighting: PairWeighting },
    /// Consistency of the first reformulation with a frozen teacher.
    Distill { teacher: &'a NerfPair<T>, lambda: T },
}

/// Loss terms, already multiplied by the batch's loss scale.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown<T> {
    pub pixel_coarse: T,
    pub pixel_fine: T,
    pub consistency_coarse: T,
    pub consistency_fine: T,
    pub total: T,
}

impl<T: Real> LossBreakdown<T> {
    pub fn add_assign(&mut self, o: &Self) {
        self.pixel_coarse += o.pixel_coarse;
        self.pixel_fine += o.pixel_fine;
        self.consistency_coarse += o.consistency_coarse;
        self.consistency_fine += o.consistency_fine;
        self.total += o.total;
    }
}

/// Compositing invariant bookkeeping over every composite of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CompositeStats {
    pub composites: u64,
    pub max_weight_sum: f64,
    /// Composites with a negative weight or a weight sum above one
    /// (beyond accumulated rounding).
    pub weight_violations: u64,
    /// Alphas outside `[0, 1)`.
    pub alpha_violations: u64,
}

impl CompositeStats {
    pub fn merge(&mut self, o: &Self) {
        self.composites += o.composites;
        self.max_weight_sum = self.max_weight_sum.max(o.max_weight_sum);
        self.weight_violations += o.weight_violations;
        self.alpha_violations += o.alpha_violations;
    }

    fn record<T: Real>(&mut self, res: &CompositeResult<T>, alphas: &[T]) {
        self.composites += 1;
        let sum: f64 = res.weights.iter().map(|w| w.as_f64()).sum();
        self.max_weight_sum = self.max_weight_sum.max(sum);
        let tol = res.weights.len() as f64 * T::epsilon().as_f64();
        if res.weights.iter().any(|w| *w < T::zero()) || sum > 1.0 + tol {
            self.weight_violations += 1;
        }
        self.alpha_violations += alphas.iter().filter(|a| !(**a >= T::zero() && **a < T::one())).count() as u64;
    }
}

/// Everything random about a batch: sample sets, layouts, and the records
/// seen by the stop-gradient side of the losses. Replaying a plan makes the
/// batch loss a deterministic function of the parameters.
#[derive(Debug, Clone)]
pub struct BatchPlan<T> {
    pub coarse_samples: Vec<SampleSet<T>>,
    pub fine_samples: Vec<SampleSet<T>>,
    coarse_layouts: Vec<Layouts>,
    fine_layouts: Vec<Layouts>,
    /// `[ray][reformulation]`.
    coarse_records: Vec<Vec<PerSampleRecord<T>>>,
    fine_records: Vec<Vec<PerSampleRecord<T>>>,
    /// `[ray]`, distillation only.
    teacher_coarse: Vec<PerSampleRecord<T>>,
    teacher_fine: Vec<PerSampleRecord<T>>,
}

#[derive(Debug, Clone)]
pub struct BatchOutput<T> {
    pub loss: LossBreakdown<T>,
    pub grads: Option<PairGrads<T>>,
    /// Student network invocations.
    pub runs: u64,
    pub teacher_runs: u64,
    /// Fine pixel of the first reformulation, over the background.
    pub pixels: Vec<[T; 3]>,
    /// Unscaled squared error of `pixels` summed over rays and channels.
    pub squared_error: f64,
    pub stats: CompositeStats,
    /// Set when consistency supervision had fewer than two reformulations.
    pub consistency_skipped: bool,
    pub plan: BatchPlan<T>,
}

/// Training-side batch description.
#[derive(Debug, Clone, Copy)]
pub struct BatchSpec<'a, T> {
    pub reforms: &'a [Reformulation],
    pub supervision: Supervision<'a, T>,
    pub settings: &'a RenderSettings,
    /// Multiplies every loss term (typically one over the full batch size).
    pub loss_scale: T,
    pub want_grad: bool,
}

fn build_layouts<R: Rng + ?Sized>(
    n_rays: usize,
    n: usize,
    group_size: usize,
    reform: Reformulation,
    mode: GroupingMode,
    rng: &mut R,
) -> Result<Layouts> {
    Ok(match mode {
        GroupingMode::Neighbor => Layouts::Shared(GroupLayout::build(n, group_size, reform, mode, rng)?),
        GroupingMode::Random => Layouts::PerRay(
            (0..n_rays)
                .map(|_| GroupLayout::build(n, group_size, reform, mode, rng))
                .collect::<Result<_>>()?,
        ),
    })
}

fn ray_samples<'a, T: Real>(rays: &[Ray<T>], sets: &'a [SampleSet<T>]) -> Vec<RaySamples<'a, T>> {
    rays.iter()
        .zip(sets)
        .map(|(r, s)| RaySamples {
            dir: r.dir,
            coords: &s.coords,
            deltas: &s.delta,
        })
        .collect()
}

fn records_of<T: Real>(pass: &PassForward<T>, ray: usize) -> PerSampleRecord<T> {
    PerSampleRecord::new(pass.colors[ray].clone(), pass.alphas[ray].clone())
}

fn teacher_pass<T: Real>(net: &NerfNetwork<T>, samples: &[RaySamples<'_, T>], n: usize) -> Result<PassForward<T>> {
    let layout = GroupLayout::neighbor(n, net.group_size(), 0)?;
    evaluate_pass(net, samples, Layouts::Shared(layout), false)
}

/// Per-pass output of the forward half of [`run_batch`].
struct Stage<T> {
    passes: Vec<PassForward<T>>,
    composites: Vec<Vec<CompositeResult<T>>>,
}

fn forward_stage<T: Real>(
    net: &NerfNetwork<T>,
    samples: &[RaySamples<'_, T>],
    layouts: &[Layouts],
    keep_cache: bool,
    stats: &mut CompositeStats,
) -> Result<Stage<T>> {
    let mut passes = Vec::with_capacity(layouts.len());
    let mut composites = Vec::with_capacity(layouts.len());
    for layout in layouts {
        let pass = evaluate_pass(net, samples, layout.clone(), keep_cache)?;
        let comps: Vec<_> = (0..samples.len())
            .map(|r| {
                let c = composite(&pass.colors[r], &pass.alphas[r], None);
                stats.record(&c, &pass.alphas[r]);
                c
            })
            .collect();
        passes.push(pass);
        composites.push(comps);
    }
    Ok(Stage { passes, composites })
}

/// Loss value and gradient seeds of one stage (coarse or fine).
struct StageLoss<T> {
    pixel: T,
    consistency: T,
    d_colors: Vec<Vec<Vec<[T; 3]>>>,
    d_alphas: Vec<Vec<Vec<T>>>,
    skipped: bool,
}

#[allow(clippy::too_many_arguments)]
fn stage_loss<T: Real>(
    stage: &Stage<T>,
    targets: &[[T; 3]],
    repeats: &[usize],
    supervision: &Supervision<'_, T>,
    frozen: Option<&[Vec<PerSampleRecord<T>>]>,
    teacher: &[PerSampleRecord<T>],
    background: [T; 3],
    scale: T,
    want_grad: bool,
) -> Result<StageLoss<T>> {
    let m = stage.passes.len();
    let n_rays = targets.len();
    let mut out = StageLoss {
        pixel: T::zero(),
        consistency: T::zero(),
        d_colors: Vec::new(),
        d_alphas: Vec::new(),
        skipped: false,
    };
    if want_grad {
        out.d_colors = (0..m)
            .map(|k| stage.passes[k].colors.iter().map(|c| vec![[T::zero(); 3]; c.len()]).collect())
            .collect();
        out.d_alphas = (0..m)
            .map(|k| stage.passes[k].alphas.iter().map(|a| vec![T::zero(); a.len()]).collect())
            .collect();
    }
    for r in 0..n_rays {
        for k in 0..m {
            let pass = &stage.passes[k];
            let comp = &stage.composites[k][r];
            let px = comp.over(background);
            out.pixel += scale * pixel_loss(px, targets[r]);
            if want_grad {
                let g = pixel_loss_grad(px, targets[r]).map(|v| v * scale);
                let (dc, da) = composite_backward(&pass.colors[r], &pass.alphas[r], None, comp, background, g);
                for i in 0..dc.len() {
                    for c in 0..3 {
                        out.d_colors[k][r][i][c] += dc[i][c];
                    }
                    out.d_alphas[k][r][i] += da[i];
                }
            }
        }
        let (terms, lambda) = match supervision {
            Supervision::Pixel => continue,
            Supervision::Consistency { lambda, weighting } => {
                let live: Vec<_> = stage.passes.iter().map(|p| records_of(p, r)).collect();
                let frozen_side = frozen.map_or(&live[..], |f| &f[r][..]);
                (consistency_loss(&live, frozen_side, repeats, *weighting)?, *lambda)
            }
            Supervision::Distill { lambda, .. } => (distill_loss(&records_of(&stage.passes[0], r), &teacher[r])?, *lambda),
        };
        out.skipped |= terms.skipped;
        out.consistency += scale * terms.total();
        if want_grad {
            let w = scale * lambda;
            for (k, (dcs, das)) in terms.d_colors.iter().zip(&terms.d_alphas).enumerate() {
                for i in 0..das.len() {
                    for c in 0..3 {
                        out.d_colors[k][r][i][c] += w * dcs[i][c];
                    }
                    out.d_alphas[k][r][i] += w * das[i];
                }
            }
        }
    }
    Ok(out)
}

/// Renders, scores and (optionally) differentiates one ray batch.
///
/// With `plan` the sample sets, layouts and stop-gradient records are
/// replayed instead of drawn, and `rng` is not used.
pub fn run_batch<T: Real, R: Rng + ?Sized>(
    nets: &NerfPair<T>,
    rays: &[Ray<T>],
    targets: &[[T; 3]],
    spec: &BatchSpec<'_, T>,
    plan: Option<&BatchPlan<T>>,
    rng: &mut R,
) -> Result<BatchOutput<T>> {
    let settings = spec.settings;
    let g = nets.group_size();
    settings.validate(g)?;
    if rays.len() != targets.len() {
        return Err(Error::ShapeMismatch(alloc::format!(
            "{} rays for {} targets",
            rays.len(),
            targets.len()
        )));
    }
    if spec.reforms.is_empty() {
        return Err(Error::InvalidConfig("at least one reformulation is required".into()));
    }
    let distill_teacher = match spec.supervision {
        Supervision::Distill { teacher, .. } => {
            if teacher.group_size() != 1 {
                return Err(Error::InvalidConfig("the distillation teacher must have group size 1".into()));
            }
            Some(teacher)
        }
        _ => None,
    };
    let n_rays = rays.len();
    let n_c = settings.n_coarse;
    let n_all = n_c + settings.n_fine;
    let bg = settings.background::<T>();
    let repeats: Vec<usize> = spec.reforms.iter().map(|r| r.repeat).collect();
    let mut stats = CompositeStats::default();
    let mut teacher_runs = 0;

    // coarse stage
    let (coarse_samples, coarse_layouts) = match plan {
        Some(p) => (p.coarse_samples.clone(), p.coarse_layouts.clone()),
        None => {
            let s: Vec<_> = rays.iter().map(|r| stratified_sample(r, n_c, settings.jitter, rng)).collect();
            let l = spec
                .reforms
                .iter()
                .map(|rf| build_layouts(n_rays, n_c, g, *rf, settings.grouping, rng))
                .collect::<Result<Vec<_>>>()?;
            (s, l)
        }
    };
    let coarse_view = ray_samples(rays, &coarse_samples);
    let coarse = forward_stage(&nets.coarse, &coarse_view, &coarse_layouts, spec.want_grad, &mut stats)?;
    let teacher_coarse: Vec<PerSampleRecord<T>>;
    let mut teacher_coarse_weights = None;
    match (plan, distill_teacher) {
        (Some(p), _) => teacher_coarse = p.teacher_coarse.clone(),
        (None, Some(t)) => {
            let pass = teacher_pass(&t.coarse, &coarse_view, n_c)?;
            teacher_runs += pass.runs;
            teacher_coarse = (0..n_rays).map(|r| records_of(&pass, r)).collect();
            teacher_coarse_weights = Some(
                (0..n_rays)
                    .map(|r| composite(&pass.colors[r], &pass.alphas[r], None).weights)
                    .collect::<Vec<_>>(),
            );
        }
        (None, None) => teacher_coarse = Vec::new(),
    }

    // fine stage
    let (fine_samples, fine_layouts) = match plan {
        Some(p) => (p.fine_samples.clone(), p.fine_layouts.clone()),
        None => {
            let mut s = Vec::with_capacity(n_rays);
            for r in 0..n_rays {
                let w = match &teacher_coarse_weights {
                    Some(tw) => &tw[r],
                    None => &coarse.composites[0][r].weights,
                };
                s.push(hierarchical_sample(
                    &rays[r],
                    &coarse_samples[r],
                    w,
                    settings.n_fine,
                    settings.jitter,
                    rng,
                )?);
            }
            let l = spec
                .reforms
                .iter()
                .map(|rf| build_layouts(n_rays, n_all, g, *rf, settings.grouping, rng))
                .collect::<Result<Vec<_>>>()?;
            (s, l)
        }
    };
    let fine_view = ray_samples(rays, &fine_samples);
    let fine = forward_stage(&nets.fine, &fine_view, &fine_layouts, spec.want_grad, &mut stats)?;
    let teacher_fine: Vec<PerSampleRecord<T>> = match (plan, distill_teacher) {
        (Some(p), _) => p.teacher_fine.clone(),
        (None, Some(t)) => {
            let pass = teacher_pass(&t.fine, &fine_view, n_all)?;
            teacher_runs += pass.runs;
            (0..n_rays).map(|r| records_of(&pass, r)).collect()
        }
        (None, None) => Vec::new(),
    };

    // losses
    let scale = spec.loss_scale;
    let lc = stage_loss(
        &coarse,
        targets,
        &repeats,
        &spec.supervision,
        plan.map(|p| &p.coarse_records[..]),
        &teacher_coarse,
        bg,
        scale,
        spec.want_grad,
    )?;
    let lf = stage_loss(
        &fine,
        targets,
        &repeats,
        &spec.supervision,
        plan.map(|p| &p.fine_records[..]),
        &teacher_fine,
        bg,
        scale,
        spec.want_grad,
    )?;
    let lambda = match spec.supervision {
        Supervision::Pixel => T::zero(),
        Supervision::Consistency { lambda, .. } | Supervision::Distill { lambda, .. } => lambda,
    };
    let loss = LossBreakdown {
        pixel_coarse: lc.pixel,
        pixel_fine: lf.pixel,
        consistency_coarse: lc.consistency,
        consistency_fine: lf.consistency,
        total: lc.pixel + lf.pixel + lambda * (lc.consistency + lf.consistency),
    };

    // gradients
    let grads = if spec.want_grad {
        let mut grads = nets.zero_grads();
        for k in 0..spec.reforms.len() {
            backward_pass(
                &nets.coarse,
                &coarse.passes[k],
                &coarse_view,
                &lc.d_colors[k],
                &lc.d_alphas[k],
                &mut grads.coarse,
            )?;
            backward_pass(
                &nets.fine,
                &fine.passes[k],
                &fine_view,
                &lf.d_colors[k],
                &lf.d_alphas[k],
                &mut grads.fine,
            )?;
        }
        Some(grads)
    } else {
        None
    };

    let pixels: Vec<[T; 3]> = fine.composites[0].iter().map(|c| c.over(bg)).collect();
    let squared_error = pixels.iter().zip(targets).map(|(p, t)| pixel_loss(*p, *t).as_f64()).sum();
    let runs = coarse.passes.iter().chain(&fine.passes).map(|p| p.runs).sum();
    let records = |stage: &Stage<T>| -> Vec<Vec<PerSampleRecord<T>>> {
        (0..n_rays)
            .map(|r| stage.passes.iter().map(|p| records_of(p, r)).collect())
            .collect()
    };
    let plan = match plan {
        Some(p) => p.clone(),
        None => BatchPlan {
            coarse_records: records(&coarse),
            fine_records: records(&fine),
            coarse_samples,
            fine_samples,
            coarse_layouts,
            fine_layouts,
            teacher_coarse,
            teacher_fine,
        },
    };
    Ok(BatchOutput {
        loss,
        grads,
        runs,
        teacher_runs,
        pixels,
        squared_error,
        stats,
        consistency_skipped: lc.skipped || lf.skipped,
        plan,
    })
}

/// Inference: base formulation, midpoint samples, no gradients. Returns
/// pixels over the background and the number of network invocations.
/// `rng` is only consumed by random grouping.
pub fn render_rays<T: Real, R: Rng + ?Sized>(
    nets: &NerfPair<T>,
    rays: &[Ray<T>],
    settings: &RenderSettings,
    rng: &mut R,
) -> Result<(Vec<[T; 3]>, u64)> {
    let g = nets.group_size();
    settings.validate(g)?;
    let n_rays = rays.len();
    let n_c = settings.n_coarse;
    let n_all = n_c + settings.n_fine;
    let coarse_samples: Vec<_> = rays.iter().map(|r| stratified_sample(r, n_c, false, rng)).collect();
    let layout = build_layouts(n_rays, n_c, g, Reformulation::BASE, settings.grouping, rng)?;
    let view = ray_samples(rays, &coarse_samples);
    let coarse = evaluate_pass(&nets.coarse, &view, layout, false)?;
    let mut fine_samples = Vec::with_capacity(n_rays);
    for r in 0..n_rays {
        let w = composite(&coarse.colors[r], &coarse.alphas[r], None).weights;
        fine_samples.push(hierarchical_sample(&rays[r], &coarse_samples[r], &w, settings.n_fine, false, rng)?);
    }
    let layout = build_layouts(n_rays, n_all, g, Reformulation::BASE, settings.grouping, rng)?;
    let view = ray_samples(rays, &fine_samples);
    let fine = evaluate_pass(&nets.fine, &view, layout, false)?;
    let bg = settings.background::<T>();
    let pixels = (0..n_rays)
        .map(|r| composite(&fine.colors[r], &fine.alphas[r], None).over(bg))
        .collect();
    Ok((pixels, coarse.runs + fine.runs))
}

/// Reference renderer calling the single-sample field once per sample.
/// Requires group-size-1 networks.
pub fn render_ray_siso<T: Real>(nets: &NerfPair<T>, ray: &Ray<T>, settings: &RenderSettings) -> Result<[T; 3]> {
    let mut unused = crate::seeded_rng(0);
    let shade = |net: &NerfNetwork<T>, s: &SampleSet<T>| -> Result<(Vec<[T; 3]>, Vec<T>)> {
        let mut colors = Vec::with_capacity(s.len());
        let mut alphas = Vec::with_capacity(s.len());
        for (x, d) in s.coords.iter().zip(&s.delta) {
            let o = net.field_siso(*x, ray.dir)?;
            colors.push(o.color);
            alphas.push(crate::render::alpha_from_sigma(o.sigma, *d));
        }
        Ok((colors, alphas))
    };
    let coarse = stratified_sample(ray, settings.n_coarse, false, &mut unused);
    let (c, a) = shade(&nets.coarse, &coarse)?;
    let w = composite(&c, &a, None).weights;
    let fine = hierarchical_sample(ray, &coarse, &w, settings.n_fine, false, &mut unused)?;
    let (c, a) = shade(&nets.fine, &fine)?;
    Ok(composite(&c, &a, None).over(settings.background::<T>()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::EncodingSpec;
    use crate::render::Camera;
    use crate::seeded_rng;

    fn spec(g: usize) -> FieldSpec {
        FieldSpec {
            group_size: g,
            hidden_width: 16,
            depth: 3,
            skip_layers: vec![1],
            pos_encoding: EncodingSpec::new(3),
            dir_encoding: EncodingSpec::new(2),
        }
    }

    fn settings() -> RenderSettings {
        RenderSettings {
            n_coarse: 8,
            n_fine: 8,
            jitter: true,
            grouping: GroupingMode::Neighbor,
            background: [1.0; 3],
        }
    }

    fn rays(n: usize) -> Vec<Ray<f64>> {
        let cam = Camera {
            pose: [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 3.0]],
            width: 8,
            height: 8,
            focal: 10.0,
            cx: 4.0,
            cy: 4.0,
            near: 2.0,
            far: 4.0,
        };
        (0..n).map(|k| cam.pixel_ray((k % 8) as u32, (k / 8 % 8) as u32)).collect()
    }

    #[test]
    fn base_formulation_run_count() {
        for g in [1usize, 2, 4, 8] {
            let nets = NerfPair::<f32>::init(spec(g), 3).unwrap();
            let rs: Vec<Ray<f32>> = rays(5)
                .iter()
                .map(|r| Ray {
                    origin: r.origin.map(|v| v as f32),
                    dir: r.dir.map(|v| v as f32),
                    t_near: 2.0,
                    t_far: 4.0,
                })
                .collect();
            let (px, runs) = render_rays(&nets, &rs, &settings(), &mut seeded_rng(0)).unwrap();
            assert_eq!(px.len(), 5);
            assert_eq!(runs as usize, 5 * settings().runs_per_pixel(g));
        }
    }

    #[test]
    fn indivisible_sample_counts_are_rejected() {
        let nets = NerfPair::<f64>::init(spec(3), 3).unwrap();
        assert!(render_rays(&nets, &rays(1), &settings(), &mut seeded_rng(0)).is_err());
    }

    #[test]
    fn replaying_a_plan_reproduces_the_loss() {
        let nets = NerfPair::<f64>::init(spec(4), 1).unwrap();
        let rs = rays(6);
        let targets = vec![[0.2, 0.5, 0.9]; 6];
        let reforms = [Reformulation { shift: 1, repeat: 1 }, Reformulation { shift: 0, repeat: 2 }];
        let spec = BatchSpec {
            reforms: &reforms,
            supervision: Supervision::Consistency {
                lambda: 1.0,
                weighting: PairWeighting::Asymmetric,
            },
            settings: &settings(),
            loss_scale: 1.0 / 6.0,
            want_grad: true,
        };
        let first = run_batch(&nets, &rs, &targets, &spec, None, &mut seeded_rng(5)).unwrap();
        let again = run_batch(&nets, &rs, &targets, &spec, Some(&first.plan), &mut seeded_rng(99)).unwrap();
        assert_eq!(first.loss, again.loss);
        assert_eq!(first.grads, again.grads);
        // coarse 8 samples: shift 1 over groups of 4 -> 3 runs, repeat 2 -> 4 runs;
        // fine 16 samples: 5 runs and 8 runs
        assert_eq!(first.runs, 6 * (3 + 4 + 5 + 8));
        assert_eq!(first.stats.weight_violations, 0);
        assert!(first.loss.consistency_coarse > 0.0);
    }

    #[test]
    fn naive_equals_single_reformulation_without_consistency() {
        let nets = NerfPair::<f64>::init(spec(2), 7).unwrap();
        let rs = rays(4);
        let targets = vec![[0.1, 0.1, 0.1]; 4];
        let base = [Reformulation::BASE];
        let st = settings();
        let mk = |sup| BatchSpec {
            reforms: &base,
            supervision: sup,
            settings: &st,
            loss_scale: 0.25,
            want_grad: true,
        };
        let a = run_batch(&nets, &rs, &targets, &mk(Supervision::Pixel), None, &mut seeded_rng(1)).unwrap();
        let b = run_batch(
            &nets,
            &rs,
            &targets,
            &mk(Supervision::Consistency {
                lambda: 0.0,
                weighting: PairWeighting::Asymmetric,
            }),
            None,
            &mut seeded_rng(1),
        )
        .unwrap();
        assert_eq!(a.loss.total, b.loss.total);
        assert_eq!(a.grads, b.grads);
        assert!(b.consistency_skipped);
    }

    #[test]
    fn mimo_with_group_one_matches_siso_reference() {
        let nets = NerfPair::<f64>::init(spec(1), 11).unwrap();
        let rs = rays(16);
        let (px, _) = render_rays(&nets, &rs, &settings(), &mut seeded_rng(0)).unwrap();
        for (r, p) in rs.iter().zip(&px) {
            let q = render_ray_siso(&nets, r, &settings()).unwrap();
            for k in 0..3 {
                assert!((p[k] - q[k]).abs() <= 1e-12);
            }
        }
    }
}
