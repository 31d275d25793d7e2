use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Full,
    Uniform,
    Random,
}

/// Cartesian ky-line sampling pattern; kx is always fully sampled.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingMask {
    ny: usize,
    sampled: Vec<bool>,
    acs_start: usize,
    acs_count: usize,
    kind: MaskKind,
    acceleration: usize,
}

fn acs_block(ny: usize, acs: usize) -> usize {
    (ny / 2).saturating_sub(acs / 2)
}

impl SamplingMask {
    /// Builds a mask from an explicit line pattern, checking the ACS block.
    pub fn new(
        sampled: Vec<bool>,
        acs_start: usize,
        acs_count: usize,
        kind: MaskKind,
        acceleration: usize,
    ) -> Result<Self> {
        let ny = sampled.len();
        if ny == 0 {
            return Err(Error::InvalidArgument("mask with zero lines".into()));
        }
        if acs_start + acs_count > ny {
            return Err(Error::InvalidArgument(format!(
                "ACS block {acs_start}+{acs_count} exceeds {ny} lines"
            )));
        }
        if !sampled[acs_start..acs_start + acs_count].iter().all(|&s| s) {
            return Err(Error::InvalidArgument("ACS lines must all be sampled".into()));
        }
        if acceleration == 0 {
            return Err(Error::InvalidArgument("acceleration must be at least 1".into()));
        }
        Ok(Self {
            ny,
            sampled,
            acs_start,
            acs_count,
            kind,
            acceleration,
        })
    }

    pub fn full(ny: usize) -> Self {
        Self {
            ny,
            sampled: vec![true; ny],
            acs_start: 0,
            acs_count: ny,
            kind: MaskKind::Full,
            acceleration: 1,
        }
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    /// Nominal acceleration R the mask was built for.
    pub fn acceleration(&self) -> usize {
        self.acceleration
    }

    pub fn acs_start(&self) -> usize {
        self.acs_start
    }

    pub fn acs_count(&self) -> usize {
        self.acs_count
    }

    pub fn acs_range(&self) -> std::ops::Range<usize> {
        self.acs_start..self.acs_start + self.acs_count
    }

    pub fn is_sampled(&self, ky: usize) -> bool {
        self.sampled[ky]
    }

    pub fn pattern(&self) -> &[bool] {
        &self.sampled
    }

    pub fn sampled_lines(&self) -> Vec<usize> {
        (0..self.ny).filter(|&k| self.sampled[k]).collect()
    }

    pub fn count(&self) -> usize {
        self.sampled.iter().filter(|&&s| s).count()
    }

    pub fn is_full(&self) -> bool {
        self.sampled.iter().all(|&s| s)
    }
}

/// Every `r`-th line from line 0 plus a centered block of `acs` lines.
pub fn make_uniform_mask(ny: usize, r: usize, acs: usize) -> Result<SamplingMask> {
    if r < 1 || r > ny {
        return Err(Error::InvalidArgument(format!(
            "acceleration {r} outside 1..={ny}"
        )));
    }
    if acs > ny {
        return Err(Error::InvalidArgument(format!("{acs} ACS lines exceed {ny}")));
    }
    let acs_start = acs_block(ny, acs);
    let sampled = (0..ny)
        .map(|k| k % r == 0 || (acs_start..acs_start + acs).contains(&k))
        .collect();
    let kind = if r == 1 { MaskKind::Full } else { MaskKind::Uniform };
    SamplingMask::new(sampled, acs_start, acs, kind, r)
}

/// Centered ACS block plus uniformly drawn extra lines, `round(ny / r)` lines
/// in total (the ACS block counts towards the budget).
pub fn make_random_mask(ny: usize, r: usize, acs: usize, seed: u64) -> Result<SamplingMask> {
    if r < 1 || r > ny {
        return Err(Error::InvalidArgument(format!(
            "acceleration {r} outside 1..={ny}"
        )));
    }
    let budget = (ny as f64 / r as f64).round() as usize;
    if budget < acs {
        return Err(Error::InvalidArgument(format!(
            "line budget {budget} smaller than {acs} ACS lines"
        )));
    }
    let acs_start = acs_block(ny, acs);
    let acs_range = acs_start..acs_start + acs;
    let candidates: Vec<usize> = (0..ny).filter(|k| !acs_range.contains(k)).collect();
    let extra = budget - acs;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sampled = vec![false; ny];
    for k in acs_range {
        sampled[k] = true;
    }
    for i in rand::seq::index::sample(&mut rng, candidates.len(), extra).into_iter() {
        sampled[candidates[i]] = true;
    }
    SamplingMask::new(sampled, acs_start, acs, MaskKind::Random, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn uniform_small_example() {
        let m = make_uniform_mask(32, 4, 8).unwrap();
        let expect: BTreeSet<usize> = (0..32).step_by(4).chain(12..20).collect();
        assert_eq!(m.sampled_lines(), expect.into_iter().collect::<Vec<_>>());
        assert_eq!(m.count(), 14);
        assert_eq!(m.acs_range(), 12..20);
    }

    #[test]
    fn uniform_r1_is_full() {
        let m = make_uniform_mask(8, 1, 0).unwrap();
        assert!(m.is_full());
        assert_eq!(m.kind(), MaskKind::Full);
    }

    #[test]
    fn uniform_fastmri_size() {
        let m = make_uniform_mask(368, 4, 24).unwrap();
        let uniform: BTreeSet<usize> = (0..368).step_by(4).collect();
        let acs: BTreeSet<usize> = (172..196).collect();
        assert_eq!(uniform.len(), 92);
        let union: BTreeSet<usize> = uniform.union(&acs).copied().collect();
        assert_eq!(m.count(), union.len());
        assert_eq!(m.count(), 92 + 24 - 6);
    }

    #[test]
    fn uniform_rejects_bad_args() {
        assert!(make_uniform_mask(16, 0, 4).is_err());
        assert!(make_uniform_mask(16, 2, 17).is_err());
    }

    #[test]
    fn random_forced_counts() {
        let m = make_random_mask(32, 4, 8, 99).unwrap();
        assert_eq!(m.count(), 8);
        assert!(m.acs_range().all(|k| m.is_sampled(k)));
    }

    #[test]
    fn random_is_deterministic() {
        let a = make_random_mask(96, 4, 8, 5).unwrap();
        let b = make_random_mask(96, 4, 8, 5).unwrap();
        assert_eq!(a, b);
        let c = make_random_mask(96, 4, 8, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn random_lines_avoid_acs_block() {
        let m = make_random_mask(128, 4, 24, 7).unwrap();
        assert_eq!(m.count(), 32);
        let outside: Vec<usize> = m
            .sampled_lines()
            .into_iter()
            .filter(|k| !(52..76).contains(k))
            .collect();
        assert_eq!(outside.len(), 8);
        assert_eq!(m.acs_range(), 52..76);
    }

    #[test]
    fn random_rejects_small_budget() {
        assert!(make_random_mask(32, 4, 9, 0).is_err());
    }
}
