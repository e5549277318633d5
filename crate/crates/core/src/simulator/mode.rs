//! Temporal mode functions of the heralded photon.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{filtered_exponential, SourceParams};

/// Relative amplitude below which the mode function is treated as zero.
pub const TRUNCATION: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModeKind {
    /// Double-sided exponential √γ·e^{−γ|t|}.
    Plain,
    /// Double-sided exponential smoothed by the trigger filter response.
    Smeared,
}

impl std::str::FromStr for ModeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(ModeKind::Plain),
            "smeared" => Ok(ModeKind::Smeared),
            other => Err(Error::Usage(format!(
                "unknown mode `{other}` (expected plain or smeared)"
            ))),
        }
    }
}

impl std::fmt::Display for ModeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModeKind::Plain => "plain",
            ModeKind::Smeared => "smeared",
        })
    }
}

/// Normalized (∫f²dt = 1) mode function, time measured from the click.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeShape {
    gamma: f64,
    filter_rate: Option<f64>,
    scale: f64,
    support: (f64, f64),
}

impl ModeShape {
    pub fn plain(gamma: f64) -> Result<Self> {
        check_rate("gamma", gamma)?;
        let half = (1.0 / TRUNCATION).ln() / gamma;
        Ok(Self {
            gamma,
            filter_rate: None,
            scale: gamma.sqrt(),
            support: (-half, half),
        })
    }

    /// Convolution of the plain shape with the one-sided response
    /// `Γe^{−Γs}` of the trigger filter, renormalized.
    pub fn smeared(gamma: f64, filter_rate: f64) -> Result<Self> {
        check_rate("gamma", gamma)?;
        check_rate("trigger filter rate", filter_rate)?;
        let mut shape = Self {
            gamma,
            filter_rate: Some(filter_rate),
            scale: 1.0,
            support: (0.0, 0.0),
        };
        shape.scale = 1.0 / shape.raw_norm_sq().sqrt();
        shape.support = shape.find_support();
        Ok(shape)
    }

    pub fn from_params(params: &SourceParams, kind: ModeKind) -> Result<Self> {
        match kind {
            ModeKind::Plain => Self::plain(params.gamma_half),
            ModeKind::Smeared => Self::smeared(params.gamma_half, params.trigger_filter_hwhm),
        }
    }

    pub fn kind(&self) -> ModeKind {
        match self.filter_rate {
            None => ModeKind::Plain,
            Some(_) => ModeKind::Smeared,
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    fn raw(&self, t: f64) -> f64 {
        match self.filter_rate {
            None => (-self.gamma * t.abs()).exp(),
            Some(rate) => filtered_exponential(self.gamma, rate, t),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.scale * self.raw(t)
    }

    /// `[t_lo, t_hi]` outside which the shape is below `TRUNCATION` of its peak.
    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    fn raw_norm_sq(&self) -> f64 {
        let rate = self.filter_rate.unwrap_or(self.gamma);
        // t >= 0 side is a pure exponential with known integral
        let at_zero = self.raw(0.0);
        let positive = at_zero * at_zero / (2.0 * self.gamma);
        // t < 0: Simpson on a smooth interval
        let span = 60.0 / self.gamma.min(rate);
        let n = 200_000;
        let h = span / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let t = -span + i as f64 * h;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let v = self.raw(t);
            acc += w * v * v;
        }
        positive + acc * h / 3.0
    }

    fn find_support(&self) -> (f64, f64) {
        // peak lies in [-(few)/Γ, 0]; scan finely
        let rate = self.filter_rate.unwrap_or(self.gamma);
        let lo_scan = -10.0 / rate;
        let steps = 10_000;
        let (mut peak_t, mut peak) = (0.0, self.raw(0.0));
        for i in 0..=steps {
            let t = lo_scan * i as f64 / steps as f64;
            let v = self.raw(t);
            if v > peak {
                peak = v;
                peak_t = t;
            }
        }
        let threshold = TRUNCATION * peak;
        let t_hi = (self.raw(0.0) / threshold).ln() / self.gamma;
        let (mut a, mut b) = (-200.0 / self.gamma, peak_t);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if self.raw(mid) < threshold {
                a = mid;
            } else {
                b = mid;
            }
        }
        (a, t_hi.max(0.0))
    }

    /// Samples the shape on the record grid `t_i = i·dt` around `center`.
    pub fn sample(&self, center: f64, dt: f64, len: usize) -> Result<SampledMode> {
        let (lo, hi) = self.support;
        let first = ((center + lo) / dt).ceil();
        let last = ((center + hi) / dt).floor();
        if first < 0.0 || last >= len as f64 {
            return Err(Error::Config(format!(
                "mode shape [{:.1} ns, {:.1} ns] around {:.1} ns is truncated by the record edge ({:.1} ns)",
                lo * 1e9,
                hi * 1e9,
                center * 1e9,
                len as f64 * dt * 1e9
            )));
        }
        let start = first as usize;
        let weights = (start..=last as usize)
            .map(|i| self.eval(i as f64 * dt - center))
            .collect();
        Ok(SampledMode { start, weights })
    }
}

fn check_rate(name: &str, rate: f64) -> Result<()> {
    if rate > 0.0 && rate.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} must be positive, got {rate}"
        )))
    }
}

/// Mode function values on a contiguous run of record samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledMode {
    pub start: usize,
    pub weights: Vec<f64>,
}

impl SampledMode {
    pub fn end(&self) -> usize {
        self.start + self.weights.len()
    }

    /// Rescales the weights to unit Euclidean norm.
    pub fn into_unit(mut self) -> Self {
        let norm = self.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        for w in &mut self.weights {
            *w /= norm;
        }
        self
    }

    pub fn dot(&self, samples: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(&samples[self.start..self.end()])
            .map(|(w, x)| w * x)
            .sum()
    }
}

/// Mode amplitude at time `t` after the click, in 1/√s.
pub fn smeared_mode_shape(params: &SourceParams, t: f64, kind: ModeKind) -> Result<f64> {
    Ok(ModeShape::from_params(params, kind)?.eval(t))
}
