use super::rng::Rng64;
use crate::error::{Error, Result};

/// Sorted Monte-Carlo sample acting as an empirical quantile function.
///
/// `query(v)` returns `samples[⌈N·v⌉ − 1]`, i.e. `inf{y : F̂(y) ≥ v}` for the
/// empirical CDF `F̂`. Queries at `v ≤ 0` return the minimum.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileTable {
    samples: Vec<f64>,
}

impl QuantileTable {
    pub fn from_samples(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::arg("quantile table needs at least one sample"));
        }
        if samples.iter().any(|v| v.is_nan()) {
            return Err(Error::arg("quantile table sample is NaN"));
        }
        samples.sort_by(f64::total_cmp);
        Ok(QuantileTable { samples })
    }

    pub fn constant(value: f64) -> Self {
        QuantileTable {
            samples: vec![value],
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn query(&self, v: f64) -> f64 {
        let n = self.samples.len();
        let idx = (n as f64 * v).ceil();
        let idx = if idx < 1.0 { 1 } else { (idx as usize).min(n) };
        self.samples[idx - 1]
    }

    pub fn min(&self) -> f64 {
        self.samples[0]
    }

    pub fn max(&self) -> f64 {
        self.samples[self.samples.len() - 1]
    }
}

/// Table of `n` i.i.d. draws from `sampler`.
pub fn mc_quantile_table(
    mut sampler: impl FnMut(&mut Rng64) -> f64,
    n: usize,
    rng: &mut Rng64,
) -> Result<QuantileTable> {
    if n == 0 {
        return Err(Error::arg("Monte-Carlo sample count must be >= 1"));
    }
    let samples = (0..n).map(|_| sampler(rng)).collect();
    QuantileTable::from_samples(samples)
}

/// Number of entries kept by top-ρ selection out of `total`: `⌊ρ·total⌋`.
///
/// A relative slack of 1e-9 absorbs products like `0.29 * 100 = 28.999…`.
pub fn top_count(rho: f64, total: usize) -> usize {
    let raw = rho * total as f64;
    let k = (raw + 1e-9 * raw.max(1.0)).floor();
    (k.max(0.0) as usize).min(total)
}

/// Empirical `(1−ρ)`-quantile: the value at 1-based ascending index
/// `⌈(1−ρ)·N⌉ = N − ⌊ρN⌋` (at least 1). At most `⌊ρN⌋` values exceed it.
pub fn empirical_top_quantile(values: &[f64], rho: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::arg("empirical quantile of empty list"));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::arg(format!("rho must lie in (0,1], got {rho}")));
    }
    let n = values.len();
    let idx = (n - top_count(rho, n)).max(1);
    let mut sorted = values.to_vec();
    let (_, v, _) = sorted.select_nth_unstable_by(idx - 1, f64::total_cmp);
    Ok(*v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_sampler() {
        let mut rng = Rng64::new(1);
        let t = mc_quantile_table(|_| 2.5, 17, &mut rng).unwrap();
        for v in [1e-9, 0.3, 0.5, 1.0] {
            assert_eq!(t.query(v), 2.5);
        }
    }

    #[test]
    fn zero_samples_rejected() {
        let mut rng = Rng64::new(1);
        assert!(mc_quantile_table(|_| 0.0, 0, &mut rng).is_err());
    }

    #[test]
    fn same_seed_same_table() {
        let draw = |r: &mut Rng64| r.normal().abs();
        let a = mc_quantile_table(draw, 1000, &mut Rng64::new(3)).unwrap();
        let b = mc_quantile_table(draw, 1000, &mut Rng64::new(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn query_convention() {
        let t = QuantileTable::from_samples(vec![4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(t.query(0.25), 1.0);
        assert_eq!(t.query(0.26), 2.0);
        assert_eq!(t.query(1.0), 4.0);
        assert_eq!(t.query(1e-12), t.min());
    }

    #[test]
    fn top_quantile_examples() {
        assert_eq!(empirical_top_quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.4).unwrap(), 3.0);
        assert_eq!(empirical_top_quantile(&[5.0, 2.0, 9.0], 1.0).unwrap(), 2.0);
        assert_eq!(empirical_top_quantile(&[7.0; 9], 0.3).unwrap(), 7.0);
        assert!(empirical_top_quantile(&[], 0.5).is_err());
    }

    #[test]
    fn top_count_absorbs_rounding() {
        assert_eq!(top_count(0.29, 100), 29);
        assert_eq!(top_count(0.2, 262_144), 52_428);
        assert_eq!(top_count(1.0, 10), 10);
    }
}
