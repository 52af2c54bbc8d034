//! Training losses and reformulation presets.
//!
//! Each loss returns its value together with the gradient with respect to
//! its "live" inputs. Stop-gradient is expressed by passing a second, frozen
//! copy of the records: the loss is evaluated as live against frozen and no
//! gradient is produced for the frozen side.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::grouping::Reformulation;
use crate::{Error, Real, Result};

/// Squared L2 distance over RGB.
pub fn pixel_loss<T: Real>(pred: [T; 3], target: [T; 3]) -> T {
    (0..3).map(|k| (pred[k] - target[k]) * (pred[k] - target[k])).sum()
}

/// Gradient of [`pixel_loss`] w.r.t. `pred`.
pub fn pixel_loss_grad<T: Real>(pred: [T; 3], target: [T; 3]) -> [T; 3] {
    let two = T::of(2.0);
    [
        two * (pred[0] - target[0]),
        two * (pred[1] - target[1]),
        two * (pred[2] - target[2]),
    ]
}

/// Sum of [`pixel_loss`] over the predictions of every reformulation.
pub fn mimo_pixel_loss<T: Real>(preds: &[[T; 3]], target: [T; 3]) -> T {
    preds.iter().map(|p| pixel_loss(*p, target)).sum()
}

/// Asymmetric pair weight `√R_j / (√R_max · √R_i)` for the term whose live
/// side is reformulation `i` and frozen side is `j`.
pub fn mu_weight(r_i: usize, r_j: usize, r_max: usize) -> f64 {
    use num_traits::Float;
    Float::sqrt(r_j as f64) / (Float::sqrt(r_max as f64) * Float::sqrt(r_i as f64))
}

/// Per-sample colors and alphas of one reformulation on one ray, aligned on
/// the shared sample index.
#[derive(Debug, Clone, PartialEq)]
pub struct PerSampleRecord<T> {
    pub colors: Vec<[T; 3]>,
    pub alphas: Vec<T>,
    /// `true` for samples excluded from the loss.
    pub masked: Vec<bool>,
}

impl<T: Real> PerSampleRecord<T> {
    pub fn new(colors: Vec<[T; 3]>, alphas: Vec<T>) -> Self {
        let masked = vec![false; alphas.len()];
        Self { colors, alphas, masked }
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }
}

/// Value and live-side gradients of a consistency loss for one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyTerms<T> {
    pub color: T,
    pub alpha: T,
    /// Per reformulation, per sample.
    pub d_colors: Vec<Vec<[T; 3]>>,
    pub d_alphas: Vec<Vec<T>>,
    /// Set when fewer than two reformulations were given; the loss is zero.
    pub skipped: bool,
}

impl<T: Real> ConsistencyTerms<T> {
    pub fn total(&self) -> T {
        self.color + self.alpha
    }
}

/// Pairwise weights used by [`consistency_loss`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairWeighting {
    /// `μ` from the repetition counts.
    Asymmetric,
    /// All weights one.
    Uniform,
}

/// Color plus alpha 3D-consistency loss of one ray.
///
/// For every pair `m1 < m2` and every sample unmasked in both records,
/// `μ12 ‖c1 − sg(c2)‖² + μ21 ‖sg(c1) − c2‖²` (and the same for alphas),
/// divided by the number of samples. `live` supplies the differentiated
/// side of each term and `frozen` the stop-gradient side; pass the same
/// records twice for the ordinary loss.
pub fn consistency_loss<T: Real>(
    live: &[PerSampleRecord<T>],
    frozen: &[PerSampleRecord<T>],
    repeats: &[usize],
    weighting: PairWeighting,
) -> Result<ConsistencyTerms<T>> {
    let m = live.len();
    if frozen.len() != m || repeats.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "{m} live records, {} frozen, {} repetition counts",
            frozen.len(),
            repeats.len()
        )));
    }
    let n = live.first().map_or(0, |r| r.len());
    if live
        .iter()
        .chain(frozen)
        .any(|r| r.len() != n || r.colors.len() != n || r.masked.len() != n)
    {
        return Err(Error::ShapeMismatch("records do not share one sample grid".into()));
    }
    let mut out = ConsistencyTerms {
        color: T::zero(),
        alpha: T::zero(),
        d_colors: vec![vec![[T::zero(); 3]; n]; m],
        d_alphas: vec![vec![T::zero(); n]; m],
        skipped: m < 2,
    };
    if m < 2 || n == 0 {
        return Ok(out);
    }
    let r_max = repeats.iter().copied().max().unwrap_or(1);
    let inv_n = T::one() / T::of(n as f64);
    let two = T::of(2.0);
    for a in 0..m {
        for b in a + 1..m {
            let (mu_ab, mu_ba) = match weighting {
                PairWeighting::Asymmetric => (
                    T::of(mu_weight(repeats[a], repeats[b], r_max)),
                    T::of(mu_weight(repeats[b], repeats[a], r_max)),
                ),
                PairWeighting::Uniform => (T::one(), T::one()),
            };
            for i in 0..n {
                if live[a].masked[i] || live[b].masked[i] {
                    continue;
                }
                for (x, y, mu) in [(a, b, mu_ab), (b, a, mu_ba)] {
                    let w = mu * inv_n;
                    for k in 0..3 {
                        let d = live[x].colors[i][k] - frozen[y].colors[i][k];
                        out.color += w * d * d;
                        out.d_colors[x][i][k] += two * w * d;
                    }
                    let d = live[x].alphas[i] - frozen[y].alphas[i];
                    out.alpha += w * d * d;
                    out.d_alphas[x][i] += two * w * d;
                }
            }
        }
    }
    Ok(out)
}

/// Student-to-teacher consistency: `(‖c_s − sg(c_t)‖² + (α_s − sg(α_t))²) / N`
/// summed over samples, weight one. Gradients are for the student.
pub fn distill_loss<T: Real>(student: &PerSampleRecord<T>, teacher: &PerSampleRecord<T>) -> Result<ConsistencyTerms<T>> {
    let n = student.len();
    if teacher.len() != n || student.colors.len() != n || teacher.colors.len() != n {
        return Err(Error::ShapeMismatch("student and teacher sample grids differ".into()));
    }
    let mut out = ConsistencyTerms {
        color: T::zero(),
        alpha: T::zero(),
        d_colors: vec![vec![[T::zero(); 3]; n]],
        d_alphas: vec![vec![T::zero(); n]],
        skipped: false,
    };
    if n == 0 {
        return Ok(out);
    }
    let inv_n = T::one() / T::of(n as f64);
    let two = T::of(2.0);
    for i in 0..n {
        if student.masked[i] || teacher.masked[i] {
            continue;
        }
        for k in 0..3 {
            let d = student.colors[i][k] - teacher.colors[i][k];
            out.color += inv_n * d * d;
            out.d_colors[0][i][k] = two * inv_n * d;
        }
        let d = student.alphas[i] - teacher.alphas[i];
        out.alpha += inv_n * d * d;
        out.d_alphas[0][i] = two * inv_n * d;
    }
    Ok(out)
}

/// `L_pixel + λ · L_3D`.
pub fn full_objective<T: Real>(pixel: T, consistency: T, lambda: T) -> T {
    pixel + lambda * consistency
}

/// Default consistency weight for object-centric scenes.
pub const LAMBDA_OBJECT: f64 = 1.0;
/// Default consistency weight for forward-facing scenes.
pub const LAMBDA_FORWARD_FACING: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftMode {
    Fixed(usize),
    /// Drawn uniformly each training iteration.
    Resampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReformEntry {
    pub shift: ShiftMode,
    pub repeat: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    R1,
    R2,
    R3,
    R4,
    R5,
    R6,
}

impl Preset {
    pub const ALL: [Preset; 6] = [Preset::R1, Preset::R2, Preset::R3, Preset::R4, Preset::R5, Preset::R6];

    pub fn name(self) -> &'static str {
        match self {
            Preset::R1 => "R1",
            Preset::R2 => "R2",
            Preset::R3 => "R3",
            Preset::R4 => "R4",
            Preset::R5 => "R5",
            Preset::R6 => "R6",
        }
    }

    /// Repetition schedule for group size `n_p`.
    pub fn repeats(self, n_p: usize) -> Result<Vec<usize>> {
        let incompatible = |reason| {
            Err(Error::IncompatiblePreset {
                preset: self.name(),
                group_size: n_p,
                reason,
            })
        };
        match self {
            Preset::R1 => {
                if n_p < 2 || !n_p.is_power_of_two() {
                    return incompatible("needs a power-of-two group size of at least 2");
                }
                if n_p == 2 {
                    return Ok(vec![1, 1]);
                }
                let levels = n_p.trailing_zeros() as usize;
                Ok((0..levels).map(|l| 1 << l).collect())
            }
            Preset::R2 => {
                if n_p < 2 {
                    return incompatible("needs a group size of at least 2");
                }
                Ok(vec![1, 1])
            }
            Preset::R3 => {
                if n_p < 3 {
                    return incompatible("needs a group size of at least 3");
                }
                Ok(vec![1; n_p - 1])
            }
            Preset::R4 => {
                if n_p < 2 || !n_p.is_multiple_of(2) {
                    return incompatible("needs an even group size");
                }
                Ok(vec![1, 2])
            }
            Preset::R5 => {
                if n_p < 4 || !n_p.is_multiple_of(2) {
                    return incompatible("needs an even group size of at least 4");
                }
                Ok(vec![1, n_p / 2])
            }
            Preset::R6 => {
                if n_p < 3 {
                    return incompatible("needs a group size of at least 3");
                }
                Ok(vec![1, 1, 1])
            }
        }
    }
}

impl core::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown preset `{s}` (expected R1..R6)")))
    }
}

/// The set of reformulations trained jointly plus the consistency weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ReformulationConfig {
    pub entries: Vec<ReformEntry>,
    pub lambda: f64,
    pub weighting: PairWeighting,
}

impl ReformulationConfig {
    /// Plain training: the base formulation only.
    pub fn base() -> Self {
        Self {
            entries: vec![ReformEntry {
                shift: ShiftMode::Fixed(0),
                repeat: 1,
            }],
            lambda: 0.0,
            weighting: PairWeighting::Asymmetric,
        }
    }

    pub fn preset(preset: Preset, n_p: usize, lambda: f64) -> Result<Self> {
        let entries = preset
            .repeats(n_p)?
            .into_iter()
            .map(|repeat| ReformEntry {
                shift: ShiftMode::Resampled,
                repeat,
            })
            .collect();
        let cfg = Self {
            entries,
            lambda,
            weighting: PairWeighting::Asymmetric,
        };
        cfg.validate(n_p)?;
        Ok(cfg)
    }

    pub fn validate(&self, n_p: usize) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::InvalidConfig("at least one reformulation is required".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "lambda must be a non-negative number, got {}",
                self.lambda
            )));
        }
        for e in &self.entries {
            if e.repeat == 0 || !n_p.is_multiple_of(e.repeat) {
                return Err(Error::RepetitionMismatch {
                    repeat: e.repeat,
                    group_size: n_p,
                });
            }
            let distinct = n_p / e.repeat;
            let same = self.entries.iter().filter(|o| o.repeat == e.repeat).count();
            if same > distinct {
                return Err(Error::InvalidConfig(format!(
                    "{same} reformulations with repetition {} need distinct shifts but only {distinct} exist",
                    e.repeat
                )));
            }
            if let ShiftMode::Fixed(s) = e.shift {
                if s >= distinct {
                    return Err(Error::InvalidGrouping(format!("fixed shift {s} must be below {distinct}")));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn repeats(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.repeat).collect()
    }

    pub fn r_max(&self) -> usize {
        self.entries.iter().map(|e| e.repeat).max().unwrap_or(1)
    }

    /// Invocations per ray over all reformulations for `n` samples, without
    /// the padding surcharge: `Σ_m (n / n_p) · R^m`.
    pub fn nominal_runs(&self, n: usize, n_p: usize) -> usize {
        self.entries.iter().map(|e| n / n_p * e.repeat).sum()
    }

    /// Whether the nominal cost stays within the single-network cost `n`.
    pub fn budget_compliant(&self, n: usize, n_p: usize) -> bool {
        self.nominal_runs(n, n_p) <= n
    }

    /// Concrete shifts for one iteration. Resampled shifts are uniform over
    /// the valid range and distinct among entries sharing a repetition count.
    pub fn resolve<R: Rng + ?Sized>(&self, n_p: usize, rng: &mut R) -> Result<Vec<Reformulation>> {
        self.validate(n_p)?;
        let mut out: Vec<Option<Reformulation>> = self
            .entries
            .iter()
            .map(|e| match e.shift {
                ShiftMode::Fixed(shift) => Some(Reformulation { shift, repeat: e.repeat }),
                ShiftMode::Resampled => None,
            })
            .collect();
        for (k, e) in self.entries.iter().enumerate() {
            if out[k].is_some() {
                continue;
            }
            let distinct = n_p / e.repeat;
            let free: Vec<usize> = (0..distinct)
                .filter(|s| !out.iter().flatten().any(|r| r.repeat == e.repeat && r.shift == *s))
                .collect();
            if free.is_empty() {
                return Err(Error::InvalidConfig("no distinct shift left".into()));
            }
            let shift = free[rng.gen_range(0..free.len())];
            out[k] = Some(Reformulation { shift, repeat: e.repeat });
        }
        Ok(out.into_iter().flatten().collect())
    }
}
