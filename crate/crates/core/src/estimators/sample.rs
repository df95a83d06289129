use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An observed sample of counts with cached moments.
#[derive(Debug, Clone, PartialEq)]
pub struct CountSample {
    values: Vec<u64>,
    mean: f64,
    variance: f64,
    min_value: u64,
    max_value: u64,
    /// Sorted distinct values with multiplicities.
    unique: Vec<(u64, usize)>,
}

/// Compact description of a sample for reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub min: u64,
    pub max: u64,
}

impl CountSample {
    pub fn new(values: Vec<u64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InsufficientData("sample is empty".into()));
        }
        let n = values.len();
        let total: u128 = values.iter().map(|&v| v as u128).sum();
        let mean = total as f64 / n as f64;
        let variance = if n > 1 {
            values
                .iter()
                .map(|&v| {
                    let d = v as f64 - mean;
                    d * d
                })
                .sum::<f64>()
                / (n - 1) as f64
        } else {
            0.0
        };
        let mut sorted = values.clone();
        sorted.sort_unstable();
        let mut unique: Vec<(u64, usize)> = Vec::new();
        for v in sorted {
            match unique.last_mut() {
                Some((last, m)) if *last == v => *m += 1,
                _ => unique.push((v, 1)),
            }
        }
        Ok(CountSample {
            min_value: unique[0].0,
            max_value: unique[unique.len() - 1].0,
            values,
            mean,
            variance,
            unique,
        })
    }

    pub fn values(&self) -> &[u64] {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sample variance with denominator `n - 1` (zero when `n = 1`).
    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn min_value(&self) -> u64 {
        self.min_value
    }

    pub fn max_value(&self) -> u64 {
        self.max_value
    }

    pub fn unique(&self) -> &[(u64, usize)] {
        &self.unique
    }

    pub fn summary(&self) -> SampleSummary {
        SampleSummary {
            n: self.n(),
            mean: self.mean,
            variance: self.variance,
            min: self.min_value,
            max: self.max_value,
        }
    }

    /// FNV-1a over the values in observation order.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.values {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments() {
        let s = CountSample::new(vec![2, 2, 5, 7]).unwrap();
        assert_eq!(s.n(), 4);
        assert_eq!(s.mean(), 4.0);
        assert!((s.variance() - 6.0).abs() < 1e-12);
        assert_eq!((s.min_value(), s.max_value()), (2, 7));
        assert_eq!(s.unique(), &[(2, 2), (5, 1), (7, 1)]);
    }

    #[test]
    fn singleton_has_zero_variance() {
        let s = CountSample::new(vec![5]).unwrap();
        assert_eq!(s.variance(), 0.0);
    }

    #[test]
    fn empty_rejected() {
        assert!(matches!(CountSample::new(vec![]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn fingerprint_depends_on_order() {
        let a = CountSample::new(vec![1, 2]).unwrap();
        let b = CountSample::new(vec![2, 1]).unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint(), CountSample::new(vec![1, 2]).unwrap().fingerprint());
    }
}
