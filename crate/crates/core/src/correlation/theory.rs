//! Expected conditional variance and g² from the OPO correlation kernels.
//!
//! The fields are Gaussian, so the four-point function factorizes:
//! `⟨a_t†a_s†a_s a_t⟩ = ⟨n_t⟩⟨n_s⟩ + |⟨a_t a_s⟩|²`. The trigger mode is the
//! output field seen through the one-sided filter-cavity response; the
//! signal mode is the homodyne record on its sample grid, weighted by the
//! digital low-pass scaled to unit noise gain and reduced by the signal
//! efficiency.

use crate::correlation::{CorrelationCurve, CurveKind};
use crate::error::{Error, Result};
use crate::extraction::LorentzFilter;
use crate::model::{filtered_exponential, ExpTerm, OpoKernels, SourceParams};

/// Signal-side processing assumed by the theory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SignalFilter {
    /// Instantaneous field at `t_c + τ`; g² only, since its photon number is
    /// not a finite per-mode quantity.
    Unfiltered,
    /// Zero-phase Lorentzian low-pass on the record grid.
    Lorentz { cutoff_hz: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryConfig {
    pub signal: SignalFilter,
    /// Apply the trigger filter cavity (HWHM from the source parameters).
    pub trigger_filter: bool,
    pub signal_efficiency: f64,
    pub sample_period: f64,
}

impl TheoryConfig {
    /// 30 MHz signal low-pass, filtered trigger, 2 ns grid.
    pub fn filtered(signal_efficiency: f64) -> Self {
        Self {
            signal: SignalFilter::Lorentz { cutoff_hz: 30e6 },
            trigger_filter: true,
            signal_efficiency,
            sample_period: 2e-9,
        }
    }

    pub fn unfiltered() -> Self {
        Self {
            signal: SignalFilter::Unfiltered,
            trigger_filter: false,
            signal_efficiency: 1.0,
            sample_period: 2e-9,
        }
    }
}

/// Precomputed moments for one source and processing chain.
#[derive(Debug, Clone)]
pub struct TheoryModel {
    cross: [ExpTerm; 2],
    trigger_rate: Option<f64>,
    // unit-norm signal taps, index k ↔ offset (k − half)·Δ
    taps: Vec<f64>,
    half: i64,
    dt: f64,
    efficiency: f64,
    /// ⟨a_t†a_t⟩ (per second).
    pub trigger_number: f64,
    /// ⟨a_s†a_s⟩ (dimensionless), or A(0) in 1/s for the unfiltered signal.
    pub signal_number: f64,
}

impl TheoryModel {
    pub fn new(params: &SourceParams, cfg: &TheoryConfig) -> Result<Self> {
        let kernels = OpoKernels::new(params)?;
        if !(cfg.signal_efficiency > 0.0 && cfg.signal_efficiency <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "signal efficiency must be in (0, 1], got {}",
                cfg.signal_efficiency
            )));
        }
        let trigger_rate = cfg.trigger_filter.then_some(params.trigger_filter_hwhm);
        let auto = kernels.auto_terms();
        let trigger_number = match trigger_rate {
            Some(g) => auto.iter().map(|t| t.amplitude * g / (g + t.rate)).sum(),
            None => kernels.auto(0.0),
        };
        let dt = cfg.sample_period;
        let (taps, half) = match cfg.signal {
            SignalFilter::Unfiltered => (vec![1.0], 0),
            SignalFilter::Lorentz { cutoff_hz } => {
                let filter = LorentzFilter::new(cutoff_hz, 1.0 / dt)?;
                // taps down to 1e-10 of the peak
                let half = ((1e-10f64).ln() / filter.pole().ln()).ceil() as i64;
                let raw: Vec<f64> = (-half..=half).map(|k| filter.tap(k)).collect();
                let norm = raw.iter().map(|t| t * t).sum::<f64>().sqrt();
                (raw.into_iter().map(|t| t / norm).collect(), half)
            }
        };
        let eta = cfg.signal_efficiency;
        let signal_number = match cfg.signal {
            SignalFilter::Unfiltered => kernels.auto(0.0),
            SignalFilter::Lorentz { .. } => {
                let mut s = 0.0;
                for (j, hj) in taps.iter().enumerate() {
                    for (k, hk) in taps.iter().enumerate() {
                        s += hj * hk * kernels.auto((j as f64 - k as f64) * dt);
                    }
                }
                eta * dt * s
            }
        };
        Ok(Self {
            cross: kernels.cross_terms(),
            trigger_rate,
            taps,
            half,
            dt,
            efficiency: eta,
            trigger_number,
            signal_number,
        })
    }

    fn trigger_cross(&self, u: f64) -> f64 {
        match self.trigger_rate {
            Some(g) => self
                .cross
                .iter()
                .map(|t| t.amplitude * filtered_exponential(t.rate, g, u))
                .sum(),
            None => self.cross.iter().map(|t| t.eval(u)).sum(),
        }
    }

    fn is_filtered(&self) -> bool {
        self.taps.len() > 1
    }

    /// `|⟨a_t a_s(τ)⟩|² / ⟨n_t⟩`: excess of the signal photon number after
    /// a trigger click, over the unconditional one.
    pub fn conditional_excess(&self, tau: f64) -> f64 {
        let c = if self.is_filtered() {
            let sum: f64 = self
                .taps
                .iter()
                .enumerate()
                .map(|(k, h)| h * self.trigger_cross(tau + (k as i64 - self.half) as f64 * self.dt))
                .sum();
            (self.efficiency * self.dt).sqrt() * sum
        } else {
            self.trigger_cross(tau)
        };
        c * c / self.trigger_number
    }

    /// `½ + ⟨n_s⟩ + ξ·|⟨a_t a_s⟩|²/⟨n_t⟩`.
    pub fn conditional_variance(&self, tau: f64, xi: f64) -> Result<f64> {
        check_xi(xi)?;
        if !self.is_filtered() {
            return Err(Error::InvalidParameter(
                "the unfiltered signal field has no finite mode variance; use a signal filter".into(),
            ));
        }
        Ok(0.5 + self.signal_number + xi * self.conditional_excess(tau))
    }

    pub fn thermal_variance(&self) -> f64 {
        0.5 + self.signal_number
    }

    /// `1 + ξ·(g²_pure(τ) − 1)`.
    pub fn g2(&self, tau: f64, xi: f64) -> Result<f64> {
        check_xi(xi)?;
        if !(self.signal_number > 0.0 && self.trigger_number > 0.0) {
            return Err(Error::Degenerate(
                "no thermal photons: g² is undefined for an unpumped source".into(),
            ));
        }
        Ok(1.0 + xi * self.conditional_excess(tau) / self.signal_number)
    }
}

fn check_xi(xi: f64) -> Result<()> {
    if (0.0..=1.0).contains(&xi) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "single-photon content must be in [0, 1], got {xi}"
        )))
    }
}

pub fn theory_conditional_variance(params: &SourceParams, tau: f64, cfg: &TheoryConfig, xi: f64) -> Result<f64> {
    TheoryModel::new(params, cfg)?.conditional_variance(tau, xi)
}

pub fn theory_g2(params: &SourceParams, tau: f64, cfg: &TheoryConfig, xi: f64) -> Result<f64> {
    TheoryModel::new(params, cfg)?.g2(tau, xi)
}

pub fn theory_curve(params: &SourceParams, taus: &[f64], cfg: &TheoryConfig, xi: f64) -> Result<CorrelationCurve> {
    let model = TheoryModel::new(params, cfg)?;
    let values = taus.iter().map(|&t| model.g2(t, xi)).collect::<Result<Vec<_>>>()?;
    Ok(CorrelationCurve {
        kind: CurveKind::G2Theory { xi },
        tau: taus.to_vec(),
        values,
        stderr: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(epsilon: f64) -> SourceParams {
        SourceParams {
            epsilon,
            ..SourceParams::default()
        }
    }

    /// Wick factorization written out from the raw two-exponential kernels.
    fn wick_oracle_g2_zero(eps: f64) -> f64 {
        let gamma = std::f64::consts::TAU * 4e6;
        let (l, m) = (gamma * (1.0 + eps), gamma * (1.0 - eps));
        let pre = (l * l - m * m) / 4.0;
        let n = pre * (1.0 / (2.0 * m) - 1.0 / (2.0 * l));
        let c = pre * (1.0 / (2.0 * m) + 1.0 / (2.0 * l));
        (n * n + c * c) / (n * n)
    }

    #[test]
    fn unfiltered_peak_matches_wick_algebra() {
        let g = theory_g2(&params(0.09), 0.0, &TheoryConfig::unfiltered(), 1.0).unwrap();
        assert!((g - wick_oracle_g2_zero(0.09)).abs() < 1e-6 * g);
        assert!((g - (1.0 + 1.0 / 0.0081)).abs() < 1e-6 * g);
        assert!((g - 124.457).abs() < 1e-3);
    }

    #[test]
    fn thermal_content_only_is_uncorrelated() {
        let cfg = TheoryConfig::filtered(0.625);
        for tau in [-50e-9, 0.0, 20e-9] {
            assert!((theory_g2(&params(0.09), tau, &cfg, 0.0).unwrap() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn far_delays_reduce_to_thermal_variance() {
        let model = TheoryModel::new(&params(0.09), &TheoryConfig::filtered(0.625)).unwrap();
        let far = model.conditional_variance(2e-6, 1.0).unwrap();
        assert!((far - model.thermal_variance()).abs() < 1e-12);
        assert!(model.thermal_variance() > 0.5);
    }

    #[test]
    fn matched_filter_weak_pump_peak_is_three_halves() {
        // a low-pass at the cavity half-width is the double-sided exponential
        // mode itself; with ε → 0 the conditioned state is a single photon
        let cfg = TheoryConfig {
            signal: SignalFilter::Lorentz { cutoff_hz: 4e6 },
            trigger_filter: false,
            signal_efficiency: 1.0,
            sample_period: 2e-9,
        };
        let v = theory_conditional_variance(&params(1e-4), 0.0, &cfg, 1.0).unwrap();
        assert!((v - 1.5).abs() < 2e-3, "{v}");
    }

    #[test]
    fn filtered_peak_is_below_unfiltered() {
        let p = params(0.09);
        let unf = theory_g2(&p, 0.0, &TheoryConfig::unfiltered(), 1.0).unwrap();
        let cfg = TheoryConfig::filtered(0.625);
        let model = TheoryModel::new(&p, &cfg).unwrap();
        let peak = (-40..=40)
            .map(|k| model.g2(k as f64 * 1e-9, 1.0).unwrap())
            .fold(f64::MIN, f64::max);
        assert!(peak > 1.0 && peak < unf, "{peak} vs {unf}");
    }

    #[test]
    fn trigger_filter_delays_the_click() {
        // the click comes after the photon has passed the filter cavity, so
        // the signal correlation leans to negative delays
        let model = TheoryModel::new(&params(0.09), &TheoryConfig::filtered(0.625)).unwrap();
        for t in [2e-9, 6e-9, 20e-9] {
            assert!(model.g2(-t, 1.0).unwrap() > model.g2(t, 1.0).unwrap());
        }
        let sym = TheoryModel::new(
            &params(0.09),
            &TheoryConfig {
                trigger_filter: false,
                ..TheoryConfig::filtered(0.625)
            },
        )
        .unwrap();
        for t in [2e-9, 6e-9, 20e-9] {
            let (a, b) = (sym.g2(-t, 1.0).unwrap(), sym.g2(t, 1.0).unwrap());
            assert!((a - b).abs() < 1e-9 * a);
        }
    }

    #[test]
    fn filtered_cross_term_matches_brute_force_convolution() {
        let p = params(0.09);
        let cfg = TheoryConfig::filtered(0.625);
        let model = TheoryModel::new(&p, &cfg).unwrap();
        let k = OpoKernels::new(&p).unwrap();
        let g = p.trigger_filter_hwhm;
        // ∫Γe^{−Γs} C(u + s) ds by a fine Riemann sum over s ∈ [0, 40/Γ]
        let brute = |u: f64| {
            let n = 400_000;
            let h = 40.0 / g / n as f64;
            (0..n)
                .map(|i| {
                    let s = (i as f64 + 0.5) * h;
                    g * (-g * s).exp() * k.cross(u + s) * h
                })
                .sum::<f64>()
        };
        for u in [-30e-9, -4e-9, 0.0, 3e-9, 25e-9] {
            let want = brute(u);
            assert!((model.trigger_cross(u) - want).abs() < 1e-6 * want.abs(), "u={u}");
        }
    }

    #[test]
    fn bad_inputs() {
        let cfg = TheoryConfig::filtered(0.625);
        assert!(matches!(
            theory_g2(&params(1.0), 0.0, &cfg, 1.0),
            Err(Error::AboveThreshold(_))
        ));
        assert!(theory_g2(&params(0.09), 0.0, &cfg, 1.2).is_err());
        assert!(theory_conditional_variance(&params(0.09), 0.0, &TheoryConfig::unfiltered(), 1.0).is_err());
        assert!(matches!(
            theory_g2(&params(0.0), 0.0, &cfg, 1.0),
            Err(Error::Degenerate(_))
        ));
    }

    proptest! {
        #[test]
        fn conditional_variance_is_monotone_in_content(
            tau in -100e-9f64..100e-9,
            xi_a in 0.0f64..1.0,
            xi_b in 0.0f64..1.0,
        ) {
            let model = TheoryModel::new(&params(0.09), &TheoryConfig::filtered(0.625)).unwrap();
            let (lo, hi) = if xi_a <= xi_b { (xi_a, xi_b) } else { (xi_b, xi_a) };
            prop_assert!(model.conditional_variance(tau, lo).unwrap() <= model.conditional_variance(tau, hi).unwrap());
        }

        #[test]
        fn weak_pump_peak_scales_inverse_square(eps in 0.002f64..0.02) {
            let cfg = TheoryConfig::unfiltered();
            let g = theory_g2(&params(eps), 0.0, &cfg, 1.0).unwrap();
            let g_half = theory_g2(&params(eps / 2.0), 0.0, &cfg, 1.0).unwrap();
            prop_assert!(((g_half - 1.0) / (g - 1.0) / 4.0 - 1.0).abs() < 0.02);
            prop_assert!(((g - 1.0) * eps * eps - 1.0).abs() < 0.02);
        }
    }
}
