//! Trigger/homodyne cross-correlation: point-wise variance of low-passed
//! traces around the herald, and the g² function built from it.

pub mod theory;

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::extraction::LorentzFilter;
use crate::simulator::Trace;
use crate::stats::{chunked_reduce, Moments};

pub use theory::{theory_conditional_variance, theory_curve, theory_g2, SignalFilter, TheoryConfig};

/// Fewest traces for which a point-wise variance is computed.
pub const MIN_TRACES: usize = 100;
/// Default signal low-pass for variance traces.
pub const DEFAULT_CUTOFF_HZ: f64 = 30e6;
/// Bins at least this far from the trigger define the unconditional level.
pub const DEFAULT_FAR_TAU: f64 = 300e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CurveKind {
    ConditionalVariance,
    VacuumVariance,
    G2Data,
    G2Theory { xi: f64 },
}

impl std::fmt::Display for CurveKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CurveKind::ConditionalVariance => f.write_str("conditional_variance"),
            CurveKind::VacuumVariance => f.write_str("vacuum_variance"),
            CurveKind::G2Data => f.write_str("g2_data"),
            CurveKind::G2Theory { xi } => write!(f, "g2_theory_xi{xi:.3}"),
        }
    }
}

/// Values on a delay grid `tau` (seconds, relative to the trigger).
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationCurve {
    pub kind: CurveKind,
    pub tau: Vec<f64>,
    pub values: Vec<f64>,
    pub stderr: Option<Vec<f64>>,
}

impl CorrelationCurve {
    /// Index and value of the largest entry.
    pub fn peak(&self) -> Option<(usize, f64)> {
        self.values
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn value_at(&self, tau: f64) -> Option<f64> {
        self.tau
            .iter()
            .position(|t| (t - tau).abs() < 1e-15)
            .map(|i| self.values[i])
    }

    /// Mean over entries whose delay satisfies `pred`, with the standard
    /// error of the mean when per-point errors exist.
    pub fn band_mean(&self, pred: impl Fn(f64) -> bool) -> Option<Level> {
        let idx: Vec<usize> = (0..self.tau.len()).filter(|&i| pred(self.tau[i])).collect();
        if idx.is_empty() {
            return None;
        }
        let n = idx.len() as f64;
        let value = idx.iter().map(|&i| self.values[i]).sum::<f64>() / n;
        let stderr = self.stderr.as_ref().map_or(f64::NAN, |se| {
            (idx.iter().map(|&i| se[i] * se[i]).sum::<f64>()).sqrt() / n
        });
        Some(Level { value, stderr })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            kind: self.kind,
            tau: self.tau.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
            stderr: self.stderr.as_ref().map(|s| s.iter().map(|e| e * factor.abs()).collect()),
        }
    }
}

/// Curves sharing one delay grid as a table with a `tau_ns` column and a
/// value (plus error, when present) column per curve.
pub fn curves_table(curves: &[&CorrelationCurve], title: &str) -> Result<String> {
    let first = curves
        .first()
        .ok_or_else(|| Error::EmptyInput("no curves to tabulate".into()))?;
    if curves.iter().any(|c| c.tau.len() != first.tau.len()) {
        return Err(Error::InvalidParameter("curves have different delay grids".into()));
    }
    let mut s = String::new();
    let _ = writeln!(s, "# {title}");
    s.push_str("tau_ns");
    for c in curves {
        let _ = write!(s, "\t{}", c.kind);
        if c.stderr.is_some() {
            let _ = write!(s, "\t{}_stderr", c.kind);
        }
    }
    s.push('\n');
    for i in 0..first.tau.len() {
        let _ = write!(s, "{:.3}", first.tau[i] * 1e9);
        for c in curves {
            let _ = write!(s, "\t{:.8e}", c.values[i]);
            if let Some(se) = &c.stderr {
                let _ = write!(s, "\t{:.3e}", se[i]);
            }
        }
        s.push('\n');
    }
    Ok(s)
}

/// A scalar estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level {
    pub value: f64,
    pub stderr: f64,
}

/// Point-wise variance of low-passed traces aligned on the trigger.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceProfile {
    pub tau: Vec<f64>,
    pub variance: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_traces: usize,
    /// Mean variance over bins with `|τ| ≥ far_tau`, if any survive trimming.
    pub far: Option<Level>,
    /// Mean variance over all retained bins.
    pub overall: Level,
}

impl VarianceProfile {
    pub fn curve(&self, kind: CurveKind) -> CorrelationCurve {
        CorrelationCurve {
            kind,
            tau: self.tau.clone(),
            values: self.variance.clone(),
            stderr: Some(self.stderr.clone()),
        }
    }
}

/// Streaming accumulator behind [`VarianceProfile`].
///
/// Each trace is low-passed with the zero-phase Lorentzian scaled to unit
/// noise gain, so white input keeps its variance; bins within the filter's
/// start-up transient at either record end are dropped.
#[derive(Debug, Clone)]
pub struct VarianceAccumulator {
    filter: LorentzFilter,
    gain: f64,
    trace_len: usize,
    trigger_offset: f64,
    sample_period: f64,
    first: usize,
    last: usize,
    far: Vec<bool>,
    bins: Vec<Moments>,
    far_power: Moments,
    all_power: Moments,
}

#[derive(Clone)]
struct Partial {
    bins: Vec<Moments>,
    far_power: Moments,
    all_power: Moments,
}

impl VarianceAccumulator {
    pub fn new(
        sample_rate: f64,
        trace_len: usize,
        trigger_offset: f64,
        cutoff_hz: f64,
        far_tau: f64,
    ) -> Result<Self> {
        let filter = LorentzFilter::new(cutoff_hz, sample_rate)?;
        let edge = filter.edge_samples();
        if trace_len <= 2 * edge {
            return Err(Error::InvalidParameter(format!(
                "{trace_len}-sample traces are shorter than the {cutoff_hz} Hz filter transients"
            )));
        }
        let sample_period = 1.0 / sample_rate;
        let (first, last) = (edge, trace_len - edge);
        let trigger_bin = (trigger_offset / sample_period).round();
        let far = (first..last)
            .map(|i| ((i as f64 - trigger_bin) * sample_period).abs() >= far_tau)
            .collect();
        Ok(Self {
            gain: filter.noise_gain().sqrt().recip(),
            filter,
            trace_len,
            trigger_offset,
            sample_period,
            first,
            last,
            far,
            bins: vec![Moments::new(); last - first],
            far_power: Moments::new(),
            all_power: Moments::new(),
        })
    }

    fn process(&self, traces: &[Trace]) -> Partial {
        let mut part = Partial {
            bins: vec![Moments::new(); self.last - self.first],
            far_power: Moments::new(),
            all_power: Moments::new(),
        };
        let mut buf = vec![0.0; self.trace_len];
        for trace in traces {
            for (b, s) in buf.iter_mut().zip(&trace.samples) {
                *b = f64::from(*s);
            }
            self.filter.apply_in_place(&mut buf);
            let (mut far_sq, mut far_n, mut all_sq) = (0.0, 0usize, 0.0);
            for (k, m) in part.bins.iter_mut().enumerate() {
                let y = self.gain * buf[self.first + k];
                m.push(y);
                let y2 = y * y;
                all_sq += y2;
                if self.far[k] {
                    far_sq += y2;
                    far_n += 1;
                }
            }
            part.all_power.push(all_sq / part.bins.len() as f64);
            if far_n > 0 {
                part.far_power.push(far_sq / far_n as f64);
            }
        }
        part
    }

    pub fn push_all(&mut self, traces: &[Trace]) -> Result<()> {
        for t in traces {
            if t.samples.len() != self.trace_len {
                return Err(Error::InvalidParameter(format!(
                    "trace has {} samples, expected {}",
                    t.samples.len(),
                    self.trace_len
                )));
            }
            if (t.trigger_offset - self.trigger_offset).abs() > 1e-3 * self.sample_period {
                return Err(Error::InvalidParameter(
                    "traces are not aligned on a common trigger offset".into(),
                ));
            }
        }
        let init = Partial {
            bins: std::mem::take(&mut self.bins),
            far_power: self.far_power,
            all_power: self.all_power,
        };
        let merged = chunked_reduce(traces, init, |chunk| self.process(chunk), |mut a, b| {
            for (x, y) in a.bins.iter_mut().zip(&b.bins) {
                *x = x.merge(y);
            }
            a.far_power = a.far_power.merge(&b.far_power);
            a.all_power = a.all_power.merge(&b.all_power);
            a
        });
        self.bins = merged.bins;
        self.far_power = merged.far_power;
        self.all_power = merged.all_power;
        Ok(())
    }

    pub fn n_traces(&self) -> usize {
        self.all_power.count()
    }

    pub fn finish(&self) -> Result<VarianceProfile> {
        let n = self.n_traces();
        if n < MIN_TRACES {
            return Err(Error::InsufficientStatistics(format!(
                "point-wise variance needs at least {MIN_TRACES} traces, got {n}"
            )));
        }
        let trigger_bin = (self.trigger_offset / self.sample_period).round();
        let tau = (self.first..self.last)
            .map(|i| (i as f64 - trigger_bin) * self.sample_period)
            .collect();
        let variance: Vec<f64> = self.bins.iter().map(Moments::variance).collect();
        let stderr = self.bins.iter().map(Moments::std_error_of_variance).collect();
        let band = |select: &dyn Fn(usize) -> bool, power: &Moments| {
            let idx: Vec<usize> = (0..variance.len()).filter(|&k| select(k)).collect();
            (!idx.is_empty()).then(|| Level {
                value: idx.iter().map(|&k| variance[k]).sum::<f64>() / idx.len() as f64,
                stderr: power.std_error_of_mean(),
            })
        };
        let far = band(&|k| self.far[k], &self.far_power);
        let overall = band(&|_| true, &self.all_power).expect("at least one bin is retained");
        Ok(VarianceProfile {
            tau,
            variance,
            stderr,
            n_traces: n,
            far,
            overall,
        })
    }
}

/// Point-wise variance profile of a trigger-aligned batch.
pub fn variance_profile(
    traces: &[Trace],
    sample_rate: f64,
    cutoff_hz: f64,
    far_tau: f64,
) -> Result<VarianceProfile> {
    let first = traces.first().ok_or_else(|| {
        Error::InsufficientStatistics(format!(
            "point-wise variance needs at least {MIN_TRACES} traces, got 0"
        ))
    })?;
    let mut acc = VarianceAccumulator::new(
        sample_rate,
        first.samples.len(),
        first.trigger_offset,
        cutoff_hz,
        far_tau,
    )?;
    acc.push_all(traces)?;
    acc.finish()
}

/// Per-bin variance across traces after the Lorentzian low-pass.
pub fn conditional_variance_trace(
    batch: &crate::simulator::TraceBatch,
    cutoff_hz: f64,
) -> Result<CorrelationCurve> {
    Ok(variance_profile(&batch.traces, batch.sample_rate, cutoff_hz, DEFAULT_FAR_TAU)?
        .curve(CurveKind::ConditionalVariance))
}

/// `g²(τ) = (V(τ) − v₀)/(U − v₀)` with first-order error propagation.
///
/// `v₀` is the filtered-vacuum level and `U` the unconditional level. The
/// normalization is refused when `U − v₀` is not positive or not resolved
/// from zero by two standard errors.
pub fn g2_from_variances(cond: &CorrelationCurve, uncond: Level, vacuum: Level) -> Result<CorrelationCurve> {
    let denom = uncond.value - vacuum.value;
    let denom_se = uncond.stderr.hypot(vacuum.stderr);
    if !(denom > 0.0) {
        return Err(Error::Degenerate(format!(
            "unconditional level {:.6} does not exceed the vacuum level {:.6}",
            uncond.value, vacuum.value
        )));
    }
    if denom <= 2.0 * denom_se {
        return Err(Error::Degenerate(format!(
            "thermal excess {denom:.3e} is within two standard errors ({denom_se:.3e}) of zero"
        )));
    }
    let values: Vec<f64> = cond.values.iter().map(|v| (v - vacuum.value) / denom).collect();
    let stderr = cond.stderr.as_ref().map(|se| {
        se.iter()
            .zip(&values)
            .map(|(s, g)| {
                let num = s.hypot(vacuum.stderr) / denom;
                num.hypot(g * denom_se / denom)
            })
            .collect()
    });
    Ok(CorrelationCurve {
        kind: CurveKind::G2Data,
        tau: cond.tau.clone(),
        values,
        stderr,
    })
}
