//! Rays, sampling along rays, and differentiable alpha compositing.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::field::FieldOutput;
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray<T> {
    pub origin: [T; 3],
    /// Unit direction.
    pub dir: [T; 3],
    pub t_near: T,
    pub t_far: T,
}

impl<T: Real> Ray<T> {
    pub fn new(origin: [T; 3], dir: [T; 3], t_near: T, t_far: T) -> Result<Self> {
        let n = norm(dir);
        if (n - T::one()).abs().as_f64() > 1e-6 {
            return Err(Error::InvalidConfig(alloc::format!("ray direction has norm {n}")));
        }
        if !(t_near < t_far) {
            return Err(Error::InvalidConfig(alloc::format!("empty ray segment [{t_near}, {t_far}]")));
        }
        Ok(Self {
            origin,
            dir,
            t_near,
            t_far,
        })
    }

    #[inline]
    pub fn at(&self, t: T) -> [T; 3] {
        [
            self.origin[0] + t * self.dir[0],
            self.origin[1] + t * self.dir[1],
            self.origin[2] + t * self.dir[2],
        ]
    }
}

#[inline]
pub(crate) fn norm<T: Real>(v: [T; 3]) -> T {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

#[inline]
pub(crate) fn normalize<T: Real>(v: [T; 3]) -> [T; 3] {
    let n = norm(v);
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Pinhole camera. The pose is world-from-camera `[R | t]` (3×4, row-major);
/// the camera looks down its −z axis with +y up and +x right.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub pose: [[f64; 4]; 3],
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || !(self.focal > 0.0) || !(self.near < self.far) {
            return Err(Error::InvalidConfig("invalid camera intrinsics or bounds".into()));
        }
        Ok(())
    }

    pub fn position(&self) -> [f64; 3] {
        [self.pose[0][3], self.pose[1][3], self.pose[2][3]]
    }

    /// Ray through continuous image coordinates `(u, v)` (pixel `(x, y)` has
    /// its centre at `(x + 0.5, y + 0.5)`).
    pub fn ray_through<T: Real>(&self, u: f64, v: f64) -> Ray<T> {
        let dc = [(u - self.cx) / self.focal, -(v - self.cy) / self.focal, -1.0];
        let p = &self.pose;
        let dw = normalize([
            p[0][0] * dc[0] + p[0][1] * dc[1] + p[0][2] * dc[2],
            p[1][0] * dc[0] + p[1][1] * dc[1] + p[1][2] * dc[2],
            p[2][0] * dc[0] + p[2][1] * dc[1] + p[2][2] * dc[2],
        ]);
        Ray {
            origin: self.position().map(T::of),
            dir: dw.map(T::of),
            t_near: T::of(self.near),
            t_far: T::of(self.far),
        }
    }

    pub fn pixel_ray<T: Real>(&self, x: u32, y: u32) -> Ray<T> {
        self.ray_through(x as f64 + 0.5, y as f64 + 0.5)
    }
}

/// Rays through the centres of the given pixels.
pub fn generate_rays<T: Real>(camera: &Camera, pixels: &[(u32, u32)]) -> Result<Vec<Ray<T>>> {
    camera.validate()?;
    Ok(pixels.iter().map(|&(x, y)| camera.pixel_ray(x, y)).collect())
}

/// Every pixel in row-major order.
pub fn all_pixels(camera: &Camera) -> Vec<(u32, u32)> {
    (0..camera.height).flat_map(|y| (0..camera.width).map(move |x| (x, y))).collect()
}

/// Ordered samples along one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet<T> {
    pub t: Vec<T>,
    /// `δ_i = t_{i+1} - t_i`, and `t_far - t_N` for the last sample.
    pub delta: Vec<T>,
    pub coords: Vec<[T; 3]>,
}

impl<T: Real> SampleSet<T> {
    /// Builds coordinates and segment lengths from ascending distances.
    pub fn from_distances(ray: &Ray<T>, t: Vec<T>) -> Self {
        let n = t.len();
        let mut delta = Vec::with_capacity(n);
        for i in 0..n {
            let next = if i + 1 < n { t[i + 1] } else { ray.t_far };
            delta.push(next - t[i]);
        }
        let coords = t.iter().map(|&ti| ray.at(ti)).collect();
        Self { t, delta, coords }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// One sample per equal-width bin of `[t_near, t_far]`: the bin midpoint, or
/// a uniform draw inside the bin with `jitter`.
pub fn stratified_sample<T: Real, R: Rng + ?Sized>(ray: &Ray<T>, n: usize, jitter: bool, rng: &mut R) -> SampleSet<T> {
    let width = (ray.t_far - ray.t_near) / T::of(n as f64);
    let t = (0..n)
        .map(|i| {
            let frac = if jitter { T::of(rng.gen::<f64>()) } else { T::half() };
            let t = ray.t_near + (T::of(i as f64) + frac) * width;
            // rounding may not leave the bin
            let lo = ray.t_near + T::of(i as f64) * width;
            t.max(lo).min(ray.t_far)
        })
        .collect();
    SampleSet::from_distances(ray, t)
}

/// Draws `n_fine` distances by inverse-transform sampling of the
/// piecewise-constant density proportional to `weights` over the `n_coarse`
/// equal-width bins of the ray, and merges them with the coarse distances.
///
/// All-zero (or non-finite) weights fall back to a uniform density. Without
/// `jitter` the quantiles are `(k + 1/2) / n_fine`.
pub fn hierarchical_sample<T: Real, R: Rng + ?Sized>(
    ray: &Ray<T>,
    coarse: &SampleSet<T>,
    weights: &[T],
    n_fine: usize,
    jitter: bool,
    rng: &mut R,
) -> Result<SampleSet<T>> {
    let n_bins = coarse.len();
    if weights.len() != n_bins || n_bins == 0 {
        return Err(Error::ShapeMismatch(alloc::format!(
            "{} weights for {n_bins} coarse samples",
            weights.len()
        )));
    }
    if weights.iter().any(|w| *w < T::zero()) {
        return Err(Error::InvalidConfig("negative sampling weight".into()));
    }
    let t_fine = sample_pdf(ray.t_near.as_f64(), ray.t_far.as_f64(), weights, n_fine, jitter, rng);
    let mut t: Vec<T> = coarse.t.clone();
    t.extend(t_fine.into_iter().map(T::of));
    t.sort_by(|a, b| a.partial_cmp(b).expect("finite sample distances"));
    Ok(SampleSet::from_distances(ray, t))
}

fn sample_pdf<T: Real, R: Rng + ?Sized>(near: f64, far: f64, weights: &[T], n: usize, jitter: bool, rng: &mut R) -> Vec<f64> {
    let n_bins = weights.len();
    let mut w: Vec<f64> = weights.iter().map(|v| v.as_f64()).collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        w = vec![1.0; n_bins];
    }
    let total: f64 = w.iter().sum();
    let mut cdf = Vec::with_capacity(n_bins + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for v in &w {
        acc += v / total;
        cdf.push(acc);
    }
    cdf[n_bins] = 1.0;
    let width = (far - near) / n_bins as f64;
    (0..n)
        .map(|k| {
            let u = if jitter { rng.gen::<f64>() } else { (k as f64 + 0.5) / n as f64 };
            // first bin whose upper cdf exceeds u; it has positive weight
            let bin = cdf[1..].partition_point(|c| *c <= u).min(n_bins - 1);
            let span = cdf[bin + 1] - cdf[bin];
            let frac = if span > 0.0 { ((u - cdf[bin]) / span).clamp(0.0, 1.0) } else { 0.5 };
            near + (bin as f64 + frac) * width
        })
        .collect()
}

/// `α = 1 − exp(−σδ)`, kept strictly below one.
#[inline]
pub fn alpha_from_sigma<T: Real>(sigma: T, delta: T) -> T {
    let a = -(-(sigma * delta)).exp_m1();
    a.min(T::ONE_MINUS_ULP)
}

/// Output of [`composite`]. `color` excludes the background.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeResult<T> {
    pub color: [T; 3],
    /// `w_i = T_i α_i`.
    pub weights: Vec<T>,
    /// Transmittance after the last sample, `Π (1 − α_j)`.
    pub transmittance: T,
}

impl<T: Real> CompositeResult<T> {
    pub fn weight_sum(&self) -> T {
        self.weights.iter().copied().sum()
    }

    /// Pixel color with residual transmittance showing `background`.
    pub fn over(&self, background: [T; 3]) -> [T; 3] {
        [
            self.color[0] + self.transmittance * background[0],
            self.color[1] + self.transmittance * background[1],
            self.color[2] + self.transmittance * background[2],
        ]
    }
}

/// Front-to-back compositing `Ĉ = Σ T_i α_i c_i`. Masked samples are skipped.
pub fn composite<T: Real>(colors: &[[T; 3]], alphas: &[T], mask: Option<&[bool]>) -> CompositeResult<T> {
    debug_assert_eq!(colors.len(), alphas.len());
    let mut trans = T::one();
    let mut color = [T::zero(); 3];
    let mut weights = Vec::with_capacity(alphas.len());
    for (i, (c, a)) in colors.iter().zip(alphas).enumerate() {
        if mask.is_some_and(|m| m[i]) {
            weights.push(T::zero());
            continue;
        }
        let w = trans * *a;
        for k in 0..3 {
            color[k] += w * c[k];
        }
        weights.push(w);
        trans *= T::one() - *a;
    }
    CompositeResult {
        color,
        weights,
        transmittance: trans,
    }
}

/// Reverse pass of [`composite`] followed by background compositing:
/// gradients of `⟨d_pixel, result.over(background)⟩` w.r.t. colors and alphas.
pub fn composite_backward<T: Real>(
    colors: &[[T; 3]],
    alphas: &[T],
    mask: Option<&[bool]>,
    result: &CompositeResult<T>,
    background: [T; 3],
    d_pixel: [T; 3],
) -> (Vec<[T; 3]>, Vec<T>) {
    let n = alphas.len();
    let mut d_colors = vec![[T::zero(); 3]; n];
    let mut d_alphas = vec![T::zero(); n];
    // `behind`: color seen from just after sample i (background-terminated).
    let mut behind = background;
    for i in (0..n).rev() {
        if mask.is_some_and(|m| m[i]) {
            continue;
        }
        let w = result.weights[i];
        let a = alphas[i];
        let t_i = if a < T::one() { w / a } else { T::zero() };
        let t_i = if a > T::zero() {
            t_i
        } else {
            transmittance_before(alphas, mask, i)
        };
        let c = colors[i];
        let mut da = T::zero();
        for k in 0..3 {
            d_colors[i][k] = w * d_pixel[k];
            da += t_i * (c[k] - behind[k]) * d_pixel[k];
        }
        d_alphas[i] = da;
        for k in 0..3 {
            behind[k] = a * c[k] + (T::one() - a) * behind[k];
        }
    }
    (d_colors, d_alphas)
}

fn transmittance_before<T: Real>(alphas: &[T], mask: Option<&[bool]>, i: usize) -> T {
    let mut t = T::one();
    for (j, a) in alphas[..i].iter().enumerate() {
        if !mask.is_some_and(|m| m[j]) {
            t *= T::one() - *a;
        }
    }
    t
}

/// Renders one ray of an arbitrary field with stratified samples and
/// compositing; returns the pixel color over `background`.
pub fn render_field_ray<T: Real, F, R>(field: F, ray: &Ray<T>, n: usize, jitter: bool, background: [T; 3], rng: &mut R) -> [T; 3]
where
    F: Fn([T; 3], [T; 3]) -> FieldOutput<T>,
    R: Rng + ?Sized,
{
    let samples = stratified_sample(ray, n, jitter, rng);
    let mut colors = Vec::with_capacity(n);
    let mut alphas = Vec::with_capacity(n);
    for (x, d) in samples.coords.iter().zip(&samples.delta) {
        let o = field(*x, ray.dir);
        colors.push(o.color);
        alphas.push(alpha_from_sigma(o.sigma, *d));
    }
    composite(&colors, &alphas, None).over(background)
}
