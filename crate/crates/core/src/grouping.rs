//! Assignment of ray samples to network invocations.
//!
//! A [`GroupLayout`] covers the `N` samples of one ray with groups of
//! `N_p` slots. Three knobs shape it:
//!
//! - **shift** `s`: the first group starts `s` samples before the front
//!   sample, so group boundaries move toward the camera. Slots that fall
//!   outside `0..N` are padding. With `s = 0` groups are `[0, N_p)`,
//!   `[N_p, 2N_p)`, …
//! - **repeat** `R`: each group holds only `N_p / R` distinct samples, each
//!   repeated `R` times (variation reduction).
//! - **mode**: neighbouring samples, or a seeded random partition.
//!
//! Padded slots carry the coordinates of the nearest real sample and are
//! masked out of compositing and losses.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::{seeded_rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroupingMode {
    Neighbor,
    Random,
}

impl GroupingMode {
    pub fn name(self) -> &'static str {
        match self {
            GroupingMode::Neighbor => "neighbor",
            GroupingMode::Random => "random",
        }
    }
}

impl core::str::FromStr for GroupingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "neighbor" | "neighbour" => Ok(GroupingMode::Neighbor),
            "random" => Ok(GroupingMode::Random),
            _ => Err(Error::InvalidConfig(alloc::format!(
                "unknown grouping mode `{s}` (neighbor, random)"
            ))),
        }
    }
}

/// One way of grouping a ray: shift and repetition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Reformulation {
    pub shift: usize,
    pub repeat: usize,
}

impl Reformulation {
    /// The inference formulation: no shift, no repetition.
    pub const BASE: Self = Self { shift: 0, repeat: 1 };
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupLayout {
    n_samples: usize,
    group_size: usize,
    repeat: usize,
    shift: usize,
    mode: GroupingMode,
    n_groups: usize,
    /// Sample feeding each distinct slot, `n_groups * group_size / repeat` entries.
    unique_src: Vec<usize>,
    unique_padded: Vec<bool>,
    /// Distinct slot that carries each real sample.
    sample_slot: Vec<usize>,
}

impl GroupLayout {
    /// Neighbour grouping with shift `s`, no repetition.
    pub fn neighbor(n: usize, group_size: usize, shift: usize) -> Result<Self> {
        Self::build(
            n,
            group_size,
            Reformulation { shift, repeat: 1 },
            GroupingMode::Neighbor,
            &mut seeded_rng(0),
        )
    }

    /// Random partition of the samples into groups.
    pub fn random<R: Rng + ?Sized>(n: usize, group_size: usize, rng: &mut R) -> Result<Self> {
        Self::build(n, group_size, Reformulation::BASE, GroupingMode::Random, rng)
    }

    /// General constructor. `rng` is only consumed in random mode, which
    /// ignores the shift.
    pub fn build<R: Rng + ?Sized>(n: usize, group_size: usize, reform: Reformulation, mode: GroupingMode, rng: &mut R) -> Result<Self> {
        let Reformulation { shift, repeat } = reform;
        if n == 0 {
            return Err(Error::InvalidGrouping("a ray needs at least one sample".into()));
        }
        if group_size == 0 {
            return Err(Error::InvalidGrouping("group size must be at least 1".into()));
        }
        if repeat == 0 || !group_size.is_multiple_of(repeat) {
            return Err(Error::RepetitionMismatch { repeat, group_size });
        }
        let distinct = group_size / repeat;
        match mode {
            GroupingMode::Neighbor => {
                if shift >= distinct {
                    return Err(Error::InvalidGrouping(format!(
                        "shift {shift} must be below the {distinct} distinct samples per group"
                    )));
                }
                if shift == 0 && !n.is_multiple_of(distinct) {
                    return Err(Error::Indivisible { n, group_size: distinct });
                }
                let n_groups = (n + shift).div_ceil(distinct);
                let total = n_groups * distinct;
                let mut unique_src = Vec::with_capacity(total);
                let mut unique_padded = Vec::with_capacity(total);
                let mut sample_slot = alloc::vec![0; n];
                for u in 0..total {
                    let v = u as isize - shift as isize;
                    let real = v >= 0 && (v as usize) < n;
                    let src = v.clamp(0, n as isize - 1) as usize;
                    if real {
                        sample_slot[src] = u;
                    }
                    unique_src.push(src);
                    unique_padded.push(!real);
                }
                Ok(Self {
                    n_samples: n,
                    group_size,
                    repeat,
                    shift,
                    mode,
                    n_groups,
                    unique_src,
                    unique_padded,
                    sample_slot,
                })
            }
            GroupingMode::Random => {
                if !n.is_multiple_of(distinct) {
                    return Err(Error::Indivisible { n, group_size: distinct });
                }
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(rng);
                let mut sample_slot = alloc::vec![0; n];
                for (u, s) in perm.iter().enumerate() {
                    sample_slot[*s] = u;
                }
                Ok(Self {
                    n_samples: n,
                    group_size,
                    repeat,
                    shift: 0,
                    mode,
                    n_groups: n / distinct,
                    unique_padded: alloc::vec![false; n],
                    unique_src: perm,
                    sample_slot,
                })
            }
        }
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// Slots per invocation, `N_p`.
    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn repeat(&self) -> usize {
        self.repeat
    }

    pub fn shift(&self) -> usize {
        self.shift
    }

    pub fn mode(&self) -> GroupingMode {
        self.mode
    }

    /// Number of groups, i.e. network invocations for this ray.
    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    /// Distinct samples per group, `N_p / R`.
    pub fn distinct_per_group(&self) -> usize {
        self.group_size / self.repeat
    }

    /// 1-based index of the first group's head sample, `1 - s`.
    pub fn head_index(&self) -> isize {
        1 - self.shift as isize
    }

    #[inline]
    fn unique_of(&self, group: usize, slot: usize) -> usize {
        group * self.distinct_per_group() + slot / self.repeat
    }

    /// Sample (0-based) whose coordinates fill `slot` of `group`.
    #[inline]
    pub fn slot_source(&self, group: usize, slot: usize) -> usize {
        self.unique_src[self.unique_of(group, slot)]
    }

    #[inline]
    pub fn slot_padded(&self, group: usize, slot: usize) -> bool {
        self.unique_padded[self.unique_of(group, slot)]
    }

    /// First of the `R` slots carrying real sample `i`: `(group, slot)`.
    #[inline]
    pub fn sample_position(&self, i: usize) -> (usize, usize) {
        let u = self.sample_slot[i];
        let d = self.distinct_per_group();
        (u / d, (u % d) * self.repeat)
    }

    /// Per-slot padding flags, `n_groups * N_p` entries.
    pub fn padding_mask(&self) -> Vec<bool> {
        (0..self.n_groups)
            .flat_map(|g| (0..self.group_size).map(move |j| (g, j)))
            .map(|(g, j)| self.slot_padded(g, j))
            .collect()
    }

    pub fn num_padded_slots(&self) -> usize {
        self.padding_mask().iter().filter(|p| **p).count()
    }

    /// 1-based virtual sample indices of a neighbour group, padding included
    /// (indices `< 1` or `> N`). Random groups report their member samples.
    pub fn window(&self, group: usize) -> Vec<isize> {
        let d = self.distinct_per_group();
        (0..d)
            .map(|k| {
                let u = group * d + k;
                match self.mode {
                    GroupingMode::Neighbor => u as isize - self.shift as isize + 1,
                    GroupingMode::Random => self.unique_src[u] as isize + 1,
                }
            })
            .collect()
    }
}

/// Spec-level constructor: neighbour or seeded random grouping.
pub fn make_groups(n: usize, group_size: usize, shift: usize, mode: GroupingMode, seed: u64) -> Result<GroupLayout> {
    let mut rng = seeded_rng(seed);
    GroupLayout::build(n, group_size, Reformulation { shift, repeat: 1 }, mode, &mut rng)
}

/// Repeats each of the `N_p / R` distinct entries `R` times: slot `j` holds
/// entry `⌊j / R⌋`.
pub fn variation_reduce<P: Copy>(distinct: &[P], group_size: usize, repeat: usize) -> Result<Vec<P>> {
    if repeat == 0 || !group_size.is_multiple_of(repeat) {
        return Err(Error::RepetitionMismatch { repeat, group_size });
    }
    if distinct.len() != group_size / repeat {
        return Err(Error::ShapeMismatch(format!(
            "expected {} distinct entries, got {}",
            group_size / repeat,
            distinct.len()
        )));
    }
    Ok((0..group_size).map(|j| distinct[j / repeat]).collect())
}

/// Invocations per ray for `n` samples under a reformulation.
pub fn runs_per_ray(n: usize, group_size: usize, reform: Reformulation) -> usize {
    let distinct = group_size / reform.repeat;
    (n + reform.shift).div_ceil(distinct)
}
