//! Quadrature extraction: project each trace onto the photon's temporal mode
//! and express the result in vacuum units (vacuum variance ½).

pub mod filter;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::simulator::{ModeKind, ModeShape, SampledMode, Trace, TraceBatch};
use crate::stats::{chunked_reduce, Moments};

pub use filter::{lorentz_lowpass, LorentzFilter};

/// Spacing, in samples, between mode windows slid across a vacuum trace.
pub const CALIBRATION_STRIDE: usize = 16;

/// Projects `trace` onto `shape` centered at `trigger_offset`.
///
/// The mode is sampled on the record grid and scaled to unit Euclidean norm
/// before the projection; the calibration turns the raw value into vacuum
/// units. Without a calibration the result is meaningless, so `None` is an
/// error.
pub fn extract_quadrature(
    trace: &[f64],
    sample_period: f64,
    shape: &ModeShape,
    trigger_offset: f64,
    calibration: Option<&VacuumCalibration>,
) -> Result<f64> {
    let calibration = calibration.ok_or(Error::Uncalibrated)?;
    let mode = shape
        .sample(trigger_offset, sample_period, trace.len())?
        .into_unit();
    Ok(calibration.norm * mode.dot(trace))
}

/// Scale that maps raw projections onto vacuum units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VacuumCalibration {
    /// Variance of the raw projection on vacuum traces.
    pub vacuum_variance: f64,
    pub vacuum_variance_stderr: f64,
    /// `sqrt(½ / vacuum_variance)`.
    pub norm: f64,
    pub windows: usize,
}

impl VacuumCalibration {
    pub fn from_variance(vacuum_variance: f64) -> Result<Self> {
        if !(vacuum_variance > 0.0 && vacuum_variance.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "vacuum variance must be positive, got {vacuum_variance}"
            )));
        }
        Ok(Self {
            vacuum_variance,
            vacuum_variance_stderr: 0.0,
            norm: (0.5 / vacuum_variance).sqrt(),
            windows: 0,
        })
    }

    /// Calibrates on a vacuum run by sliding the mode across every trace.
    pub fn from_batch(shape: &ModeShape, vacuum: &TraceBatch) -> Result<Self> {
        let mut cal = VacuumCalibrator::new(shape, vacuum.sample_period(), vacuum.trace_len)?;
        cal.push_all(&vacuum.traces)?;
        cal.finish()
    }
}

/// Streaming vacuum calibration, for references too large to hold at once.
#[derive(Debug, Clone)]
pub struct VacuumCalibrator {
    mode: SampledMode,
    shifts: Vec<usize>,
    trace_len: usize,
    pooled: Moments,
    // per-trace mean of the squared projection; its spread gives the error
    per_trace: Moments,
}

#[derive(Clone, Copy)]
struct CalPartial {
    pooled: Moments,
    per_trace: Moments,
}

impl VacuumCalibrator {
    pub fn new(shape: &ModeShape, sample_period: f64, trace_len: usize) -> Result<Self> {
        let (lo, _) = shape.support();
        // grid-aligned center so every shifted window has identical weights
        let c0 = (-lo / sample_period).ceil() * sample_period;
        let mode = shape.sample(c0, sample_period, trace_len)?.into_unit();
        let shifts = (0..=trace_len - mode.end())
            .step_by(CALIBRATION_STRIDE)
            .collect::<Vec<_>>();
        Ok(Self {
            mode,
            shifts,
            trace_len,
            pooled: Moments::new(),
            per_trace: Moments::new(),
        })
    }

    fn process(&self, traces: &[Trace]) -> CalPartial {
        let mut part = CalPartial {
            pooled: Moments::new(),
            per_trace: Moments::new(),
        };
        let w = &self.mode.weights;
        for trace in traces {
            let x = trace.samples_f64();
            let mut sq = 0.0;
            for &s in &self.shifts {
                let at = self.mode.start + s;
                let p: f64 = w.iter().zip(&x[at..at + w.len()]).map(|(a, b)| a * b).sum();
                part.pooled.push(p);
                sq += p * p;
            }
            part.per_trace.push(sq / self.shifts.len() as f64);
        }
        part
    }

    pub fn push_all(&mut self, traces: &[Trace]) -> Result<()> {
        if let Some(bad) = traces.iter().find(|t| t.samples.len() != self.trace_len) {
            return Err(Error::InvalidParameter(format!(
                "vacuum trace has {} samples, expected {}",
                bad.samples.len(),
                self.trace_len
            )));
        }
        let part = chunked_reduce(
            traces,
            CalPartial {
                pooled: self.pooled,
                per_trace: self.per_trace,
            },
            |chunk| self.process(chunk),
            |a, b| CalPartial {
                pooled: a.pooled.merge(&b.pooled),
                per_trace: a.per_trace.merge(&b.per_trace),
            },
        );
        self.pooled = part.pooled;
        self.per_trace = part.per_trace;
        Ok(())
    }

    pub fn finish(&self) -> Result<VacuumCalibration> {
        if self.per_trace.count() < 2 {
            return Err(Error::EmptyInput("vacuum calibration needs at least two traces".into()));
        }
        // vacuum is zero-mean by construction; the second moment about zero is
        // the quantity the extraction normalizes
        let var = self.per_trace.mean();
        let mut cal = VacuumCalibration::from_variance(var)?;
        cal.vacuum_variance_stderr = self.per_trace.std_error_of_mean();
        cal.windows = self.pooled.count();
        Ok(cal)
    }
}

/// Projects traces onto a fixed mode shape with a fixed calibration.
#[derive(Debug, Clone)]
pub struct Extractor {
    shape: ModeShape,
    calibration: VacuumCalibration,
}

impl Extractor {
    pub fn new(shape: ModeShape, calibration: VacuumCalibration) -> Self {
        Self { shape, calibration }
    }

    pub fn calibration(&self) -> &VacuumCalibration {
        &self.calibration
    }

    pub fn extract_batch(&self, batch: &TraceBatch) -> Result<QuadratureSet> {
        let dt = batch.sample_period();
        let len = batch.trace_len;
        // traces share one trigger offset in practice; sample the mode once
        let first = batch.traces.first().map(|t| t.trigger_offset);
        let common = match first {
            Some(t0) => Some((t0, self.shape.sample(t0, dt, len)?.into_unit())),
            None => None,
        };
        let entries = batch
            .traces
            .par_iter()
            .enumerate()
            .map(|(i, trace)| {
                let raw = match &common {
                    Some((t0, mode)) if t0.to_bits() == trace.trigger_offset.to_bits() => {
                        mode.dot(&trace.samples_f64())
                    }
                    _ => self
                        .shape
                        .sample(trace.trigger_offset, dt, len)?
                        .into_unit()
                        .dot(&trace.samples_f64()),
                };
                Ok(QuadratureEntry {
                    trace_index: i,
                    lo_phase: trace.lo_phase,
                    quadrature: self.calibration.norm * raw,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(QuadratureSet {
            entries,
            mode: self.shape.kind(),
            vacuum_variance: self.calibration.vacuum_variance,
            norm: self.calibration.norm,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureEntry {
    pub trace_index: usize,
    pub lo_phase: f64,
    pub quadrature: f64,
}

/// Quadratures in vacuum units with the calibration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureSet {
    pub entries: Vec<QuadratureEntry>,
    pub mode: ModeKind,
    /// Raw vacuum projection variance used for normalization.
    pub vacuum_variance: f64,
    pub norm: f64,
}

const QUAD_COLUMNS: &str = "trace_index\tlo_phase_rad\tquadrature";

impl QuadratureSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn quadratures(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.quadrature).collect()
    }

    pub fn samples(&self) -> Vec<(f64, f64)> {
        self.entries.iter().map(|e| (e.lo_phase, e.quadrature)).collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::with_capacity(40 * self.entries.len() + 200);
        s.push_str("# heraldlab quadratures (vacuum variance = 0.5)\n");
        let _ = writeln!(s, "# mode = {}", self.mode);
        let _ = writeln!(s, "# vacuum_variance = {:e}", self.vacuum_variance);
        let _ = writeln!(s, "# norm = {:e}", self.norm);
        s.push_str(QUAD_COLUMNS);
        s.push('\n');
        for e in &self.entries {
            let _ = writeln!(s, "{}\t{:.17e}\t{:.17e}", e.trace_index, e.lo_phase, e.quadrature);
        }
        s
    }

    pub fn from_tsv(text: &str, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Table {
            path: path.display().to_string(),
            reason,
        };
        let mut mode = None;
        let mut vacuum_variance = None;
        let mut norm = None;
        let mut entries = Vec::new();
        let mut seen_columns = false;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.split_once('=') {
                    let v = v.trim();
                    match k.trim() {
                        "mode" => mode = Some(v.parse::<ModeKind>().map_err(|e| bad(e.to_string()))?),
                        "vacuum_variance" => {
                            vacuum_variance = Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?)
                        }
                        "norm" => norm = Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?),
                        _ => {}
                    }
                }
                continue;
            }
            if !seen_columns {
                if line != QUAD_COLUMNS {
                    return Err(bad(format!("line {}: expected header `{QUAD_COLUMNS}`", n + 1)));
                }
                seen_columns = true;
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(bad(format!("line {}: expected 3 columns, found {}", n + 1, fields.len())));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| bad(format!("line {}: {e}", n + 1)))
            };
            entries.push(QuadratureEntry {
                trace_index: fields[0]
                    .parse()
                    .map_err(|e| bad(format!("line {}: {e}", n + 1)))?,
                lo_phase: num(fields[1])?,
                quadrature: num(fields[2])?,
            });
        }
        if !seen_columns {
            return Err(bad("missing column header".into()));
        }
        Ok(Self {
            entries,
            mode: mode.unwrap_or(ModeKind::Plain),
            vacuum_variance: vacuum_variance.ok_or_else(|| bad("missing vacuum_variance".into()))?,
            norm: norm.ok_or_else(|| bad("missing norm".into()))?,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{vacuum_reference_config, LoPhase, SimConfig, Simulator};
    use proptest::prelude::*;

    fn small_config(n: usize) -> SimConfig {
        SimConfig {
            n_traces: n,
            ..SimConfig::default()
        }
    }

    #[test]
    fn uncalibrated_extraction_is_an_error() {
        let shape = ModeShape::plain(std::f64::consts::TAU * 4e6).unwrap();
        let x = vec![0.0; 1000];
        assert!(matches!(
            extract_quadrature(&x, 2e-9, &shape, 1e-6, None),
            Err(Error::Uncalibrated)
        ));
    }

    #[test]
    fn calibrated_vacuum_has_half_variance() {
        let cfg = small_config(0);
        let vac_cfg = vacuum_reference_config(&cfg, 2000);
        let sim = Simulator::new(&vac_cfg).unwrap();
        let shape = sim.mode_shape().clone();
        let cal = VacuumCalibration::from_batch(&shape, &sim.batch_from(sim.simulate_range(0..1000)))
            .unwrap();
        // independent vacuum traces, extracted at the trigger
        let test = sim.batch_from(sim.simulate_range(1000..2000));
        let set = Extractor::new(shape, cal).extract_batch(&test).unwrap();
        let mut m = Moments::new();
        set.quadratures().iter().for_each(|&q| m.push(q));
        assert!((m.variance() - 0.5).abs() < 4.0 * 0.5 * (2.0 / 1000.0f64).sqrt());
        // raw vacuum variance includes the electronic floor
        let expected_raw = 0.5 * (1.0 + 10f64.powf(-1.05));
        assert!((cal.vacuum_variance / expected_raw - 1.0).abs() < 0.03);
    }

    #[test]
    fn single_trace_extraction_matches_batch() {
        let cfg = small_config(4);
        let sim = Simulator::new(&cfg).unwrap();
        let batch = sim.batch_from(sim.simulate_range(0..4));
        let shape = sim.mode_shape().clone();
        let cal = VacuumCalibration::from_variance(0.55).unwrap();
        let set = Extractor::new(shape.clone(), cal).extract_batch(&batch).unwrap();
        for (t, e) in batch.traces.iter().zip(&set.entries) {
            let q = extract_quadrature(&t.samples_f64(), 2e-9, &shape, t.trigger_offset, Some(&cal))
                .unwrap();
            assert!((q - e.quadrature).abs() < 1e-12);
        }
    }

    #[test]
    fn recovers_injected_mode_quadrature() {
        // no background beyond vacuum, no electronic noise: the projection
        // onto the simulator's own mode returns the injected value exactly
        let mut cfg = small_config(20);
        cfg.electronic_noise_db = None;
        cfg.source.epsilon = 0.05;
        cfg.lo_phase = LoPhase::Fixed(0.0);
        let sim = Simulator::new(&cfg).unwrap();
        let cal = VacuumCalibration::from_variance(0.5).unwrap();
        let shape = sim.mode_shape().clone();
        for i in 0..20 {
            let (trace, truth) = sim.simulate_trace(i);
            if let Some(q) = truth.mode_quadrature {
                let got = extract_quadrature(&trace.samples_f64(), 2e-9, &shape, trace.trigger_offset, Some(&cal))
                    .unwrap();
                assert!((got - q).abs() < 1e-5, "{got} vs {q}");
            }
        }
    }

    #[test]
    fn recalibration_is_stable() {
        let vac_cfg = vacuum_reference_config(&small_config(0), 4000);
        let sim = Simulator::new(&vac_cfg).unwrap();
        let shape = sim.mode_shape().clone();
        let a = VacuumCalibration::from_batch(&shape, &sim.batch_from(sim.simulate_range(0..2000))).unwrap();
        let b = VacuumCalibration::from_batch(&shape, &sim.batch_from(sim.simulate_range(2000..4000))).unwrap();
        // N = sqrt(½/v): relative error of N is half that of v
        let se = 0.5 * (a.vacuum_variance_stderr / a.vacuum_variance)
            .hypot(b.vacuum_variance_stderr / b.vacuum_variance);
        assert!(((a.norm - b.norm) / a.norm).abs() < 3.0 * se);
    }

    #[test]
    fn mode_away_from_the_photon_sees_no_excess() {
        let cfg = small_config(3000);
        let sim = Simulator::new(&cfg).unwrap();
        let shape = sim.mode_shape().clone();
        let cal = VacuumCalibration::from_variance(0.5 * (1.0 + 10f64.powf(-1.05))).unwrap();
        let mut on = Moments::new();
        let mut off = Moments::new();
        for i in 0..3000 {
            let (trace, truth) = sim.simulate_trace(i);
            if !truth.true_herald {
                continue;
            }
            let x = trace.samples_f64();
            on.push(extract_quadrature(&x, 2e-9, &shape, trace.trigger_offset, Some(&cal)).unwrap());
            // 400 ns later the photon's mode has decayed to e^{-10}
            off.push(extract_quadrature(&x, 2e-9, &shape, trace.trigger_offset + 400e-9, Some(&cal)).unwrap());
        }
        let thermal = 0.5 + 0.01; // generous bound on the filtered thermal excess
        assert!(off.variance() < thermal + 4.0 * off.std_error_of_variance(), "{}", off.variance());
        assert!(off.variance() > 0.5 - 4.0 * off.std_error_of_variance());
        assert!(on.variance() > 1.0);
    }

    proptest! {
        #[test]
        fn extraction_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..1000).map(|_| rng.random::<f64>() - 0.5).collect();
            let y: Vec<f64> = (0..1000).map(|_| rng.random::<f64>() - 0.5).collect();
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let shape = ModeShape::plain(std::f64::consts::TAU * 4e6).unwrap();
            let cal = VacuumCalibration::from_variance(0.7).unwrap();
            let e = |v: &[f64]| extract_quadrature(v, 2e-9, &shape, 1e-6, Some(&cal)).unwrap();
            prop_assert!((e(&mix) - (a * e(&x) + b * e(&y))).abs() < 1e-10);
        }

        #[test]
        fn extraction_is_shift_covariant(shift in 0usize..200, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..1000).map(|_| rng.random::<f64>() - 0.5).collect();
            let mut shifted = vec![0.0; 1000];
            shifted[shift..].copy_from_slice(&x[..1000 - shift]);
            let shape = ModeShape::plain(std::f64::consts::TAU * 4e6).unwrap();
            let cal = VacuumCalibration::from_variance(0.5).unwrap();
            let q0 = extract_quadrature(&x, 2e-9, &shape, 400e-9, Some(&cal)).unwrap();
            let q1 = extract_quadrature(&shifted, 2e-9, &shape, 400e-9 + shift as f64 * 2e-9, Some(&cal)).unwrap();
            prop_assert!((q0 - q1).abs() < 1e-9);
        }
    }

    #[test]
    fn tsv_round_trip() {
        let set = QuadratureSet {
            entries: vec![
                QuadratureEntry { trace_index: 0, lo_phase: 0.25, quadrature: -1.5 },
                QuadratureEntry { trace_index: 1, lo_phase: 6.0, quadrature: 1.0 / 3.0 },
            ],
            mode: ModeKind::Smeared,
            vacuum_variance: 0.544,
            norm: 0.9587,
        };
        let back = QuadratureSet::from_tsv(&set.to_tsv(), Path::new("q.tsv")).unwrap();
        assert_eq!(back, set);
        assert!(QuadratureSet::from_tsv("0\t1\t2\n", Path::new("q.tsv")).is_err());
    }
}
