//! Exact sampling of the stationary thermal quadrature background.
//!
//! The normally ordered autocorrelation of one OPO mode,
//! `κ(e^{−µ|τ|}/2µ − e^{−λ|τ|}/2λ)` with `κ = (λ²−µ²)/4`, is the covariance
//! of `γ(u₁ − u₂)` where `u₁`, `u₂` are Ornstein–Uhlenbeck processes at
//! rates µ and λ driven by the same unit white noise. The pair is a linear
//! Gaussian state-space model, so it is advanced with its exact transition
//! and noise covariance on the sampling grid.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::SourceParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalNoise {
    decay: [f64; 2],
    stationary: Chol2,
    step: Chol2,
    scale: f64,
}

/// Lower-triangular factor of a 2×2 covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Chol2 {
    l11: f64,
    l21: f64,
    l22: f64,
}

impl Chol2 {
    fn new(a: f64, b: f64, c: f64) -> Self {
        let l11 = a.sqrt();
        let l21 = b / l11;
        // rounding can push the Schur complement slightly negative when µ ≈ λ
        let l22 = (c - l21 * l21).max(0.0).sqrt();
        Self { l11, l21, l22 }
    }

    fn apply(&self, z1: f64, z2: f64) -> [f64; 2] {
        [self.l11 * z1, self.l21 * z1 + self.l22 * z2]
    }
}

impl ThermalNoise {
    /// Background seen through `efficiency` on a grid of step `dt`. Output
    /// samples are in per-sample quadrature units (vacuum variance 1/2), so
    /// the covariance of samples `i`, `j` is `efficiency·dt·auto(t_i − t_j)`.
    /// Returns `None` for an unpumped source.
    pub fn new(params: &SourceParams, efficiency: f64, dt: f64) -> Option<Self> {
        if params.epsilon <= 0.0 || efficiency <= 0.0 {
            return None;
        }
        let rates = [params.mu(), params.lambda()];
        let cov = |i: usize, j: usize, horizon: Option<f64>| {
            let r = rates[i] + rates[j];
            match horizon {
                None => 1.0 / r,
                Some(h) => -(-r * h).exp_m1() / r,
            }
        };
        Some(Self {
            decay: [(-rates[0] * dt).exp(), (-rates[1] * dt).exp()],
            stationary: Chol2::new(cov(0, 0, None), cov(0, 1, None), cov(1, 1, None)),
            step: Chol2::new(cov(0, 0, Some(dt)), cov(0, 1, Some(dt)), cov(1, 1, Some(dt))),
            scale: params.gamma_half * (efficiency * dt).sqrt(),
        })
    }

    /// Adds one stationary realization to `out`.
    pub fn add_to<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let mut u = self
            .stationary
            .apply(rng.sample(StandardNormal), rng.sample(StandardNormal));
        for x in out.iter_mut() {
            *x += self.scale * (u[0] - u[1]);
            let w = self
                .step
                .apply(rng.sample(StandardNormal), rng.sample(StandardNormal));
            u = [self.decay[0] * u[0] + w[0], self.decay[1] * u[1] + w[1]];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::OpoKernels;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unpumped_source_has_no_thermal_part() {
        let params = SourceParams {
            epsilon: 0.0,
            ..Default::default()
        };
        assert!(ThermalNoise::new(&params, 1.0, 2e-9).is_none());
    }

    #[test]
    fn sample_autocovariance_matches_kernel() {
        // a strongly pumped source makes the thermal part large enough to check
        let params = SourceParams {
            epsilon: 0.5,
            ..Default::default()
        };
        let dt = 2e-9;
        let noise = ThermalNoise::new(&params, 1.0, dt).unwrap();
        let kernels = OpoKernels::new(&params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (len, reps) = (64, 40_000);
        let lags = [0usize, 5, 20, 60];
        let mut acc = [0.0; 4];
        let mut buf = vec![0.0; len];
        for _ in 0..reps {
            buf.iter_mut().for_each(|x| *x = 0.0);
            noise.add_to(&mut rng, &mut buf);
            for (k, &lag) in lags.iter().enumerate() {
                acc[k] += buf[0] * buf[lag] + buf[len - 1 - lag] * buf[len - 1];
            }
        }
        for (k, &lag) in lags.iter().enumerate() {
            let measured = acc[k] / (2.0 * reps as f64);
            let expected = dt * kernels.auto(lag as f64 * dt);
            let var0 = dt * kernels.auto(0.0);
            // standard error of a lag product is about var0/sqrt(2·reps)
            let tol = 5.0 * var0 / (reps as f64).sqrt();
            assert!(
                (measured - expected).abs() < tol,
                "lag {lag}: {measured} vs {expected} (tol {tol})"
            );
        }
    }
}
