//! Zero-phase Lorentzian low-pass: a first-order recursion run forward and
//! then backward over the record.

use crate::error::{Error, Result};

/// Forward–backward one-pole low-pass with unit DC gain.
///
/// Each pass has pole `a = exp(−2π·f_c/f_s)`; the combined response is real
/// and Lorentzian in amplitude, `|H₁(f)|² ≈ 1/(1+(f/f_c)²)`, and the
/// interior impulse response is the sampled two-sided exponential
/// `c·a^{|k|}` with `c = (1−a)²/(1−a²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorentzFilter {
    cutoff_hz: f64,
    sample_rate: f64,
    pole: f64,
}

impl LorentzFilter {
    pub fn new(cutoff_hz: f64, sample_rate: f64) -> Result<Self> {
        let nyquist_hz = 0.5 * sample_rate;
        if !(cutoff_hz > 0.0 && cutoff_hz < nyquist_hz) {
            return Err(Error::InvalidCutoff {
                cutoff_hz,
                nyquist_hz,
            });
        }
        Ok(Self {
            cutoff_hz,
            sample_rate,
            pole: (-std::f64::consts::TAU * cutoff_hz / sample_rate).exp(),
        })
    }

    pub fn cutoff_hz(&self) -> f64 {
        self.cutoff_hz
    }

    pub fn pole(&self) -> f64 {
        self.pole
    }

    pub fn apply_in_place(&self, x: &mut [f64]) {
        let Some(&first) = x.first() else { return };
        let a = self.pole;
        let b = 1.0 - a;
        let mut y = first;
        for v in x.iter_mut() {
            y = a * y + b * *v;
            *v = y;
        }
        let mut z = *x.last().unwrap();
        for v in x.iter_mut().rev() {
            z = a * z + b * *v;
            *v = z;
        }
    }

    /// Interior impulse response tap `k`.
    pub fn tap(&self, k: i64) -> f64 {
        let a = self.pole;
        (1.0 - a).powi(2) / (1.0 - a * a) * a.powi(k.unsigned_abs() as i32)
    }

    /// Σ h[k]²: white-noise variance gain of the interior output.
    pub fn noise_gain(&self) -> f64 {
        let a = self.pole;
        let c = (1.0 - a).powi(2) / (1.0 - a * a);
        c * c * (1.0 + a * a) / (1.0 - a * a)
    }

    /// Samples at each record end still influenced by the boundary
    /// initialization above `1e-4` relative amplitude.
    pub fn edge_samples(&self) -> usize {
        ((1e-4f64).ln() / self.pole.ln()).ceil() as usize
    }

    /// Combined amplitude response at frequency `f` (Hz).
    pub fn amplitude_response(&self, f: f64) -> f64 {
        let a = self.pole;
        let w = std::f64::consts::TAU * f / self.sample_rate;
        (1.0 - a).powi(2) / (1.0 - 2.0 * a * w.cos() + a * a)
    }
}

/// Applies the zero-phase Lorentzian low-pass at `cutoff_hz`.
pub fn lorentz_lowpass(trace: &[f64], cutoff_hz: f64, sample_rate: f64) -> Result<Vec<f64>> {
    let filter = LorentzFilter::new(cutoff_hz, sample_rate)?;
    let mut out = trace.to_vec();
    filter.apply_in_place(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn dc_passes_unchanged() {
        let out = lorentz_lowpass(&[0.7; 300], 30e6, 5e8).unwrap();
        assert!(out.iter().all(|v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn cutoff_must_be_below_nyquist() {
        assert!(matches!(
            lorentz_lowpass(&[1.0], 250e6, 5e8),
            Err(Error::InvalidCutoff { .. })
        ));
        assert!(lorentz_lowpass(&[1.0], 0.0, 5e8).is_err());
        assert!(lorentz_lowpass(&[], 30e6, 5e8).unwrap().is_empty());
    }

    #[test]
    fn impulse_response_is_symmetric_two_sided_exponential() {
        let filter = LorentzFilter::new(30e6, 5e8).unwrap();
        let mut x = vec![0.0; 401];
        x[200] = 1.0;
        filter.apply_in_place(&mut x);
        for k in -50i64..=50 {
            let got = x[(200 + k) as usize];
            assert!((got - filter.tap(k)).abs() < 1e-12, "tap {k}");
        }
    }

    #[test]
    fn white_noise_variance_follows_frequency_integral() {
        let (fs, fc) = (5e8, 30e6);
        let filter = LorentzFilter::new(fc, fs).unwrap();
        // oracle: mean of |H|² over the band, midpoint rule
        let n = 200_000;
        let ratio: f64 = (0..n)
            .map(|i| filter.amplitude_response((i as f64 + 0.5) / n as f64 * fs / 2.0).powi(2))
            .sum::<f64>()
            / n as f64;
        assert!((ratio - filter.noise_gain()).abs() < 1e-8);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let edge = filter.edge_samples();
        let (mut acc, mut count) = (0.0, 0usize);
        for _ in 0..400 {
            let mut x: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
            filter.apply_in_place(&mut x);
            for v in &x[edge..1000 - edge] {
                acc += v * v;
                count += 1;
            }
        }
        let measured = acc / count as f64;
        assert!((measured / ratio - 1.0).abs() < 0.03, "{measured} vs {ratio}");
    }

    #[test]
    fn half_amplitude_at_cutoff() {
        let filter = LorentzFilter::new(30e6, 5e8).unwrap();
        assert!((filter.amplitude_response(0.0) - 1.0).abs() < 1e-12);
        // discrete pole gives approximately 1/2 at f_c
        assert!((filter.amplitude_response(30e6) - 0.5).abs() < 0.03);
    }
}
