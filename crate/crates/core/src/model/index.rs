//! Lexicographic indexing of the configuration space (stars and bars).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::Configuration;
use crate::error::{Result, ZrpError};

/// Default cap on enumerated configuration spaces.
pub const DEFAULT_ENUMERATION_LIMIT: u128 = 2_000_000;

/// Position of a configuration in lexicographic order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfigIndex(pub u64);

/// Exact binomial coefficient, `None` on `u128` overflow.
pub fn binomial(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        // C(n, i + 1) = C(n, i) * (n - i) / (i + 1) is exact at every step.
        c = c.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(c)
}

/// Number of ways to put `m` particles on `parts` vertices.
fn compositions(m: u64, parts: u64) -> u128 {
    if parts == 0 {
        return u128::from(m == 0);
    }
    binomial(m + parts - 1, parts - 1).expect("composition count overflow")
}

/// Size of the `r`-particle configuration space on `n` vertices, `C(n + r - 1, r)`.
pub fn space_size(n: usize, r: usize) -> Option<u128> {
    if n == 0 {
        return Some(u128::from(r == 0));
    }
    binomial((n + r - 1) as u64, r as u64)
}

/// The configurations of `r` particles on `n` vertices, with lexicographic
/// ranking in both directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfigSpace {
    n: usize,
    r: usize,
    size: u64,
}

impl ConfigSpace {
    pub fn new(n: usize, r: usize) -> Result<Self> {
        Self::with_limit(n, r, DEFAULT_ENUMERATION_LIMIT)
    }

    pub fn with_limit(n: usize, r: usize, limit: u128) -> Result<Self> {
        if n == 0 {
            return Err(ZrpError::InvalidArgument("need at least one vertex".into()));
        }
        let size = space_size(n, r).ok_or(ZrpError::Capacity { size: u128::MAX, limit })?;
        if size > limit || size > u64::MAX as u128 {
            return Err(ZrpError::Capacity { size, limit });
        }
        Ok(ConfigSpace { n, r, size: size as u64 })
    }

    pub fn vertex_count(&self) -> usize {
        self.n
    }

    pub fn particles(&self) -> usize {
        self.r
    }

    pub fn size(&self) -> usize {
        self.size as usize
    }

    /// All configurations in ascending lexicographic order.
    pub fn enumerate(&self) -> Vec<Configuration> {
        let mut out = Vec::with_capacity(self.size());
        let mut cur = vec![0u32; self.n];
        fill(&mut cur, 0, self.r as u32, &mut out);
        out
    }

    pub fn rank(&self, c: &Configuration) -> Result<ConfigIndex> {
        c.check(self.n, self.r)?;
        let occ = c.occupancy();
        let mut rem = self.r as u64;
        let mut idx: u128 = 0;
        for (i, &ci) in occ.iter().enumerate().take(self.n - 1) {
            let parts_after = (self.n - i - 1) as u64;
            // Sequences sharing the prefix but with a smaller value at position i.
            for k in 0..ci as u64 {
                idx += compositions(rem - k, parts_after);
            }
            rem -= ci as u64;
        }
        Ok(ConfigIndex(idx as u64))
    }

    pub fn unrank(&self, index: ConfigIndex) -> Result<Configuration> {
        if index.0 >= self.size {
            return Err(ZrpError::OutOfRange { index: index.0 as u128, size: self.size as u128 });
        }
        let mut idx = index.0 as u128;
        let mut rem = self.r as u64;
        let mut occ = vec![0u32; self.n];
        for (i, slot) in occ.iter_mut().enumerate().take(self.n - 1) {
            let parts_after = (self.n - i - 1) as u64;
            let mut k = 0u64;
            loop {
                let block = compositions(rem - k, parts_after);
                if idx < block {
                    break;
                }
                idx -= block;
                k += 1;
            }
            *slot = k as u32;
            rem -= k;
        }
        occ[self.n - 1] = rem as u32;
        Ok(Configuration::new(occ))
    }
}

fn fill(cur: &mut Vec<u32>, pos: usize, rem: u32, out: &mut Vec<Configuration>) {
    if pos + 1 == cur.len() {
        cur[pos] = rem;
        out.push(Configuration::new(cur.clone()));
        return;
    }
    for k in 0..=rem {
        cur[pos] = k;
        fill(cur, pos + 1, rem - k, out);
    }
    cur[pos] = 0;
}

/// Configurations of `r` particles on `n` vertices in lexicographic order.
pub fn enumerate_configurations(n: usize, r: usize) -> Result<Vec<Configuration>> {
    Ok(ConfigSpace::new(n, r)?.enumerate())
}

pub fn rank(c: &Configuration) -> Result<ConfigIndex> {
    ConfigSpace::new(c.vertex_count(), c.particles())?.rank(c)
}

pub fn unrank(index: ConfigIndex, n: usize, r: usize) -> Result<Configuration> {
    ConfigSpace::new(n, r)?.unrank(index)
}

/// Draws a configuration uniformly from all `C(n + r - 1, r)` of them by
/// choosing the `r` star positions among `n + r - 1` slots.
pub fn sample_uniform<R: Rng + ?Sized>(n: usize, r: usize, rng: &mut R) -> Configuration {
    let slots = n + r - 1;
    let mut stars = rand::seq::index::sample(rng, slots, r).into_vec();
    stars.sort_unstable();
    let mut occ = vec![0u32; n];
    // A star at slot s lies in vertex (number of bars before s) = s - (stars before s).
    for (i, &s) in stars.iter().enumerate() {
        occ[s - i] += 1;
    }
    Configuration::new(occ)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(v: &[u32]) -> Configuration {
        Configuration::new(v.to_vec())
    }

    #[test]
    fn small_enumerations() {
        assert_eq!(enumerate_configurations(2, 2).unwrap(), vec![c(&[0, 2]), c(&[1, 1]), c(&[2, 0])]);
        assert_eq!(enumerate_configurations(3, 0).unwrap(), vec![c(&[0, 0, 0])]);
        let all = enumerate_configurations(3, 2).unwrap();
        assert_eq!(all.len(), 6);
        assert_eq!(rank(&c(&[1, 0, 1])).unwrap(), ConfigIndex(3));
        assert_eq!(rank(&c(&[0, 0, 2])).unwrap(), ConfigIndex(0));
        assert_eq!(rank(&c(&[2, 0, 0])).unwrap(), ConfigIndex(5));
    }

    /// Independent oracle: every vector in {0..=r}^n with the right sum, sorted.
    fn brute_force(n: usize, r: usize) -> Vec<Configuration> {
        let mut out = Vec::new();
        let total = (r + 1).pow(n as u32);
        for code in 0..total {
            let mut x = code;
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                v.push((x % (r + 1)) as u32);
                x /= r + 1;
            }
            v.reverse();
            if v.iter().map(|&a| a as usize).sum::<usize>() == r {
                out.push(Configuration::new(v));
            }
        }
        out.sort();
        out
    }

    #[test]
    fn enumeration_matches_brute_force_and_ranks() {
        for n in 1..=5 {
            for r in 0..=5 {
                let space = ConfigSpace::new(n, r).unwrap();
                let all = space.enumerate();
                assert_eq!(all, brute_force(n, r), "n={n} r={r}");
                assert_eq!(all.len() as u128, space_size(n, r).unwrap());
                for (i, cfg) in all.iter().enumerate() {
                    assert_eq!(space.rank(cfg).unwrap(), ConfigIndex(i as u64));
                    assert_eq!(&space.unrank(ConfigIndex(i as u64)).unwrap(), cfg);
                }
            }
        }
        assert_eq!(ConfigSpace::new(5, 4).unwrap().size(), 70);
        assert_eq!(ConfigSpace::new(5, 5).unwrap().size(), 126);
    }

    #[test]
    fn capacity_and_range_errors() {
        assert!(matches!(ConfigSpace::with_limit(10, 10, 1000), Err(ZrpError::Capacity { size: 92378, .. })));
        let s = ConfigSpace::new(3, 2).unwrap();
        assert!(matches!(s.unrank(ConfigIndex(6)), Err(ZrpError::OutOfRange { .. })));
        assert!(s.rank(&c(&[1, 1])).is_err());
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(5, 2), Some(10));
        assert_eq!(binomial(40, 20), Some(137_846_528_820));
        assert_eq!(binomial(3, 5), Some(0));
    }

    #[test]
    fn uniform_sampler_is_uniform() {
        let space = ConfigSpace::new(3, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = vec![0usize; space.size()];
        let draws = 100_000;
        for _ in 0..draws {
            let cfg = sample_uniform(3, 3, &mut rng);
            counts[space.rank(&cfg).unwrap().0 as usize] += 1;
        }
        let expected = draws as f64 / space.size() as f64;
        let chi2: f64 = counts.iter().map(|&k| (k as f64 - expected).powi(2) / expected).sum();
        // 9 degrees of freedom; 27.9 is the 0.999 quantile.
        assert!(chi2 < 27.9, "chi2 = {chi2}");
    }

    proptest! {
        #[test]
        fn rank_unrank_round_trip(n in 1usize..8, r in 0usize..9, seed in any::<u64>()) {
            let space = ConfigSpace::new(n, r).unwrap();
            let idx = ConfigIndex(seed % space.size() as u64);
            let cfg = space.unrank(idx).unwrap();
            prop_assert_eq!(cfg.particles(), r);
            prop_assert_eq!(space.rank(&cfg).unwrap(), idx);
        }
    }
}
