//! Monte Carlo reductions.
//!
//! Replicates are computed in parallel but collected in replicate order and
//! summed sequentially, so every estimate is bit-identical regardless of
//! the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rng;

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl MeanEstimate {
    pub fn exact(value: f64) -> Self {
        Self { mean: value, std_error: 0.0, n: 1 }
    }

    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: f64::NAN, std_error: f64::NAN, n };
        }
        let nf = n as f64;
        let mean = xs.iter().sum::<f64>() / nf;
        if n == 1 {
            return Self { mean, std_error: 0.0, n };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
        Self { mean, std_error: (var / nf).sqrt(), n }
    }

    /// Frequency of `hits` out of `n` with the binomial standard error.
    pub fn binomial(hits: usize, n: usize) -> Self {
        let p = hits as f64 / n as f64;
        Self { mean: p, std_error: (p * (1.0 - p) / n as f64).sqrt(), n }
    }

    /// Product of two independent estimates, first-order error propagation.
    pub fn product(&self, other: &Self) -> Self {
        let se = ((other.mean * self.std_error).powi(2) + (self.mean * other.std_error).powi(2)).sqrt();
        Self { mean: self.mean * other.mean, std_error: se, n: self.n.min(other.n) }
    }
}

/// Runs `n` replicates of `f`, each with its own stream key derived from
/// `key`, and returns the results in replicate order.
pub fn replicates<T, F>(n: usize, key: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    (0..n as u64).into_par_iter().map(|i| f(rng::derive(key, i))).collect()
}
