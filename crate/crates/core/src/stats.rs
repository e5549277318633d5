//! Mergeable running moments (count, mean, central moments up to fourth order).
//!
//! Merging follows the pairwise update formulas of Chan et al. and Pébay, so
//! partial accumulators from independent chunks combine exactly as if all
//! values had been pushed into one.

use rayon::prelude::*;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl Moments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        let n1 = self.n;
        self.n += 1.0;
        let n = self.n;
        let delta = x - self.mean;
        let delta_n = delta / n;
        let delta_n2 = delta_n * delta_n;
        let term1 = delta * delta_n * n1;
        self.mean += delta_n;
        self.m4 += term1 * delta_n2 * (n * n - 3.0 * n + 3.0) + 6.0 * delta_n2 * self.m2
            - 4.0 * delta_n * self.m3;
        self.m3 += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * self.m2;
        self.m2 += term1;
    }

    pub fn merge(&self, other: &Self) -> Self {
        if other.n == 0.0 {
            return *self;
        }
        if self.n == 0.0 {
            return *other;
        }
        let (na, nb) = (self.n, other.n);
        let n = na + nb;
        let delta = other.mean - self.mean;
        let d2 = delta * delta;
        let d3 = d2 * delta;
        let d4 = d2 * d2;
        let mean = self.mean + delta * nb / n;
        let m2 = self.m2 + other.m2 + d2 * na * nb / n;
        let m3 = self.m3
            + other.m3
            + d3 * na * nb * (na - nb) / (n * n)
            + 3.0 * delta * (na * other.m2 - nb * self.m2) / n;
        let m4 = self.m4
            + other.m4
            + d4 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n)
            + 6.0 * d2 * (na * na * other.m2 + nb * nb * self.m2) / (n * n)
            + 4.0 * delta * (na * other.m3 - nb * self.m3) / n;
        Self { n, mean, m2, m3, m4 }
    }

    pub fn count(&self) -> usize {
        self.n as usize
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2.0 {
            f64::NAN
        } else {
            self.m2 / (self.n - 1.0)
        }
    }

    pub fn std_error_of_mean(&self) -> f64 {
        (self.variance() / self.n).sqrt()
    }

    /// Standard error of the sample variance, from the fourth central moment:
    /// `Var(s²) ≈ (µ₄ − σ⁴(n−3)/(n−1))/n`.
    pub fn std_error_of_variance(&self) -> f64 {
        if self.n < 4.0 {
            return f64::NAN;
        }
        let n = self.n;
        let mu4 = self.m4 / n;
        let s2 = self.variance();
        ((mu4 - s2 * s2 * (n - 3.0) / (n - 1.0)) / n).max(0.0).sqrt()
    }
}

/// Block size for order-stable parallel reductions.
pub(crate) const CHUNK: usize = 512;

/// Maps fixed-size chunks in parallel and folds the partial results in
/// chunk order, so the floating-point result does not depend on the
/// number of worker threads.
pub(crate) fn chunked_reduce<T, A, F, M>(items: &[T], init: A, map: F, merge: M) -> A
where
    T: Sync,
    A: Send + Clone,
    F: Fn(&[T]) -> A + Sync + Send,
    M: Fn(A, A) -> A,
{
    let partials: Vec<A> = items.par_chunks(CHUNK).map(map).collect();
    partials.into_iter().fold(init, merge)
}
