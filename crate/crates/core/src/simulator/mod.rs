//! Synthetic heralded-photon runs: trigger records plus homodyne traces.
//!
//! Each trace is a stationary Gaussian background (white vacuum, thermal
//! light with the OPO autocorrelation) in which, for genuine heralds, the
//! component along the photon's temporal mode is replaced by a quadrature
//! drawn from the Fock-state density of the surviving photon number. White
//! electronic noise is added last, as a detector would.

pub mod mode;
pub mod rng;
pub mod thermal;
pub mod tracefile;

use std::f64::consts::TAU;
use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{parse_bool, parse_f64, parse_u64};
use crate::error::{Error, Result};
use crate::model::{electronic_noise_efficiency, herald_rates, SourceParams};

pub use mode::{smeared_mode_shape, ModeKind, ModeShape, SampledMode};
pub use thermal::ThermalNoise;
pub use tracefile::{read_trace_file, write_trace_file};

/// Local oscillator phase per trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LoPhase {
    /// Uniform over [0, 2π), drawn per trace.
    Scanned,
    Fixed(f64),
}

/// Photon-number occupation of the heralded mode before signal losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotonMixture {
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
}

impl Default for PhotonMixture {
    fn default() -> Self {
        Self {
            p0: 0.0,
            p1: 0.99,
            p2: 0.01,
        }
    }
}

impl PhotonMixture {
    pub fn validate(&self) -> Result<()> {
        let ps = [self.p0, self.p1, self.p2];
        if ps.iter().any(|p| !(*p >= 0.0)) || (ps.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "photon mixture must be non-negative and sum to 1, got {ps:?}"
            )));
        }
        Ok(())
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random();
        if u < self.p0 {
            0
        } else if u < self.p0 + self.p1 {
            1
        } else {
            2
        }
    }
}

/// Everything that defines a simulated run.
///
/// Config keys, besides those of [`SourceParams`]: `sample_rate` (Hz),
/// `trace_len` (samples), `n_traces`, `seed`, `lo_phase` (`scanned` or a
/// phase in rad), `p0`, `p1`, `p2`, `signal_efficiency`,
/// `electronic_noise_db` (dB below vacuum, or `none`), `smear_mode`
/// (bool) and `trigger_jitter_ns`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub source: SourceParams,
    pub sample_rate: f64,
    pub trace_len: usize,
    pub n_traces: usize,
    pub master_seed: u64,
    pub lo_phase: LoPhase,
    pub photon_mixture: PhotonMixture,
    /// End-to-end efficiency of the signal photon after vacuum calibration,
    /// electronic noise included.
    pub signal_efficiency: f64,
    /// Electronic noise level in dB below vacuum; `None` disables it.
    pub electronic_noise_db: Option<f64>,
    /// Place the photon in the trigger-filter-smeared mode (else the plain one).
    pub smear_mode: bool,
    /// Half-width of the uniform photon arrival jitter around the click, s.
    pub trigger_jitter: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            source: SourceParams::default(),
            sample_rate: 5e8,
            trace_len: 1000,
            n_traces: 50_000,
            master_seed: 0x5EED_0001,
            lo_phase: LoPhase::Scanned,
            photon_mixture: PhotonMixture::default(),
            signal_efficiency: 0.625,
            electronic_noise_db: Some(10.5),
            smear_mode: true,
            trigger_jitter: 0.0,
        }
    }
}

impl SimConfig {
    pub const KEYS: [&'static str; 12] = [
        "sample_rate",
        "trace_len",
        "n_traces",
        "seed",
        "lo_phase",
        "p0",
        "p1",
        "p2",
        "signal_efficiency",
        "electronic_noise_db",
        "smear_mode",
        "trigger_jitter_ns",
    ];

    /// Applies one config entry (simulation or source key). Returns
    /// `Ok(false)` for keys that belong to neither.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "sample_rate" => self.sample_rate = parse_f64(key, value)?,
            "trace_len" => self.trace_len = parse_u64(key, value)? as usize,
            "n_traces" => self.n_traces = parse_u64(key, value)? as usize,
            "seed" => self.master_seed = parse_u64(key, value)?,
            "lo_phase" => {
                self.lo_phase = match value {
                    "scanned" => LoPhase::Scanned,
                    v => LoPhase::Fixed(parse_f64(key, v)?),
                }
            }
            "p0" => self.photon_mixture.p0 = parse_f64(key, value)?,
            "p1" => self.photon_mixture.p1 = parse_f64(key, value)?,
            "p2" => self.photon_mixture.p2 = parse_f64(key, value)?,
            "signal_efficiency" => self.signal_efficiency = parse_f64(key, value)?,
            "electronic_noise_db" => {
                self.electronic_noise_db = match value {
                    "none" | "off" => None,
                    v => Some(parse_f64(key, v)?),
                }
            }
            "smear_mode" => self.smear_mode = parse_bool(key, value)?,
            "trigger_jitter_ns" => self.trigger_jitter = parse_f64(key, value)? * 1e-9,
            _ => return self.source.set(key, value),
        }
        Ok(true)
    }

    pub fn sample_period(&self) -> f64 {
        1.0 / self.sample_rate
    }

    /// Record-centered click time.
    pub fn trigger_offset(&self) -> f64 {
        (self.trace_len / 2) as f64 * self.sample_period()
    }

    pub fn mode_kind(&self) -> ModeKind {
        if self.smear_mode {
            ModeKind::Smeared
        } else {
            ModeKind::Plain
        }
    }

    /// Per-sample electronic noise variance in vacuum units (vacuum = 1/2).
    pub fn electronic_variance(&self) -> f64 {
        self.electronic_noise_db
            .map_or(0.0, |db| 0.5 * 10f64.powf(-db / 10.0))
    }

    /// Optical transmission before the detector: the part of
    /// `signal_efficiency` not already accounted for by electronic noise.
    pub fn optical_efficiency(&self) -> f64 {
        let electronic = self
            .electronic_noise_db
            .map_or(1.0, electronic_noise_efficiency);
        self.signal_efficiency / electronic
    }

    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.photon_mixture.validate()?;
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::Config(format!(
                "sample_rate must be positive, got {}",
                self.sample_rate
            )));
        }
        if self.trace_len == 0 || self.trace_len > u32::MAX as usize {
            return Err(Error::Config(format!("bad trace_len {}", self.trace_len)));
        }
        if self.n_traces > u32::MAX as usize {
            return Err(Error::Config(format!("bad n_traces {}", self.n_traces)));
        }
        let duration = self.trace_len as f64 * self.sample_period();
        if duration < 10.0 / self.source.gamma_half {
            return Err(Error::Config(format!(
                "record of {:.1} ns is shorter than 10/γ = {:.1} ns",
                duration * 1e9,
                10.0 / self.source.gamma_half * 1e9
            )));
        }
        if !(self.signal_efficiency > 0.0 && self.signal_efficiency <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "signal_efficiency must lie in (0, 1], got {}",
                self.signal_efficiency
            )));
        }
        if self.optical_efficiency() > 1.0 + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "signal_efficiency {} exceeds the ceiling {:.4} set by electronic noise",
                self.signal_efficiency,
                self.signal_efficiency / self.optical_efficiency()
            )));
        }
        if !(self.trigger_jitter >= 0.0) {
            return Err(Error::Config("trigger_jitter must be non-negative".into()));
        }
        if let LoPhase::Fixed(theta) = self.lo_phase {
            if !theta.is_finite() {
                return Err(Error::Config("fixed lo_phase must be finite".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    /// Click time measured from the first sample, s.
    pub trigger_offset: f64,
    pub lo_phase: f64,
    /// Quadrature readings, vacuum variance 1/2 per sample.
    pub samples: Vec<f32>,
}

impl Trace {
    pub fn samples_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&s| s as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceBatch {
    pub sample_rate: f64,
    pub trace_len: usize,
    pub master_seed: u64,
    pub traces: Vec<Trace>,
}

impl TraceBatch {
    pub fn n_traces(&self) -> usize {
        self.traces.len()
    }

    pub fn sample_period(&self) -> f64 {
        1.0 / self.sample_rate
    }
}

/// Hidden ground truth of one simulated trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceTruth {
    pub true_herald: bool,
    /// Photons surviving signal losses (genuine heralds only).
    pub photons: u32,
    /// Quadrature written into the photon mode before electronic noise.
    pub mode_quadrature: Option<f64>,
    /// Photon mode center, s from record start.
    pub mode_center: f64,
}

/// Quadrature drawn from |⟨q|n⟩|², vacuum variance 1/2, for n ≤ 2.
pub fn sample_fock_quadrature<R: Rng + ?Sized>(n: u32, rng: &mut R) -> f64 {
    match n {
        0 => FRAC_1_SQRT_2 * rng.sample::<f64, _>(StandardNormal),
        1 => {
            // q² ~ Gamma(3/2, 1), i.e. half a chi-square with three degrees of freedom
            let chi2: f64 = (0..3)
                .map(|_| rng.sample::<f64, _>(StandardNormal).powi(2))
                .sum();
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            sign * (0.5 * chi2).sqrt()
        }
        2 => {
            // rejection from N(0, 1): density ratio (2q²−1)² e^{−q²/2}/√2 peaks at q² = 9/2
            let bound = 64.0 * (-2.25f64).exp() / 2f64.sqrt();
            loop {
                let q: f64 = rng.sample(StandardNormal);
                let ratio = (2.0 * q * q - 1.0).powi(2) * (-0.5 * q * q).exp() / 2f64.sqrt();
                if rng.random::<f64>() * bound < ratio {
                    return q;
                }
            }
        }
        _ => panic!("Fock sampling is implemented for n <= 2, got {n}"),
    }
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Precomputed state for generating traces of one configuration.
#[derive(Debug, Clone)]
pub struct Simulator {
    cfg: SimConfig,
    p_true: f64,
    optical_efficiency: f64,
    electronic_sigma: f64,
    thermal: Option<ThermalNoise>,
    shape: ModeShape,
    centered_mode: SampledMode,
}

impl Simulator {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let rates = herald_rates(&cfg.source)?;
        let dt = cfg.sample_period();
        let optical_efficiency = cfg.optical_efficiency().min(1.0);
        let shape = ModeShape::from_params(&cfg.source, cfg.mode_kind())?;
        // the extreme jitter positions must also fit inside the record
        let t_c = cfg.trigger_offset();
        shape.sample(t_c - cfg.trigger_jitter, dt, cfg.trace_len)?;
        shape.sample(t_c + cfg.trigger_jitter, dt, cfg.trace_len)?;
        let centered_mode = shape.sample(t_c, dt, cfg.trace_len)?.into_unit();
        Ok(Self {
            cfg: cfg.clone(),
            p_true: rates.p_true,
            optical_efficiency,
            electronic_sigma: cfg.electronic_variance().sqrt(),
            thermal: ThermalNoise::new(&cfg.source, optical_efficiency, dt),
            shape,
            centered_mode,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    /// Fraction of clicks that herald a photon.
    pub fn p_true(&self) -> f64 {
        self.p_true
    }

    pub fn mode_shape(&self) -> &ModeShape {
        &self.shape
    }

    pub fn simulate_trace(&self, index: u64) -> (Trace, TraceTruth) {
        let cfg = &self.cfg;
        let mut rng = rng::trace_rng(cfg.master_seed, index);
        let true_herald = rng.random::<f64>() < self.p_true;
        let lo_phase = match cfg.lo_phase {
            LoPhase::Scanned => rng.random::<f64>() * TAU,
            LoPhase::Fixed(theta) => theta,
        };
        let trigger_offset = cfg.trigger_offset();
        let mode_center = if cfg.trigger_jitter > 0.0 {
            trigger_offset + cfg.trigger_jitter * (2.0 * rng.random::<f64>() - 1.0)
        } else {
            trigger_offset
        };

        let mut x: Vec<f64> = (0..cfg.trace_len)
            .map(|_| FRAC_1_SQRT_2 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        if let Some(thermal) = &self.thermal {
            thermal.add_to(&mut rng, &mut x);
        }

        let mut truth = TraceTruth {
            true_herald,
            photons: 0,
            mode_quadrature: None,
            mode_center,
        };
        if true_herald {
            let emitted = cfg.photon_mixture.draw(&mut rng);
            let photons = (0..emitted)
                .filter(|_| rng.random::<f64>() < self.optical_efficiency)
                .count() as u32;
            let q = sample_fock_quadrature(photons, &mut rng);
            let jittered;
            let mode = if mode_center == trigger_offset {
                &self.centered_mode
            } else {
                jittered = self
                    .shape
                    .sample(mode_center, cfg.sample_period(), cfg.trace_len)
                    .expect("jitter range checked at construction")
                    .into_unit();
                &jittered
            };
            let delta = q - mode.dot(&x);
            for (xi, w) in x[mode.start..mode.end()].iter_mut().zip(&mode.weights) {
                *xi += delta * w;
            }
            truth.photons = photons;
            truth.mode_quadrature = Some(q);
        }

        if self.electronic_sigma > 0.0 {
            for xi in x.iter_mut() {
                *xi += self.electronic_sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let trace = Trace {
            trigger_offset,
            lo_phase,
            samples: x.into_iter().map(|v| v as f32).collect(),
        };
        (trace, truth)
    }

    /// Traces with indices in `range`, in index order.
    pub fn simulate_range(&self, range: Range<usize>) -> Vec<Trace> {
        range
            .into_par_iter()
            .map(|i| self.simulate_trace(i as u64).0)
            .collect()
    }

    pub fn batch_from(&self, traces: Vec<Trace>) -> TraceBatch {
        TraceBatch {
            sample_rate: self.cfg.sample_rate,
            trace_len: self.cfg.trace_len,
            master_seed: self.cfg.master_seed,
            traces,
        }
    }
}

pub fn simulate_batch(cfg: &SimConfig) -> Result<TraceBatch> {
    let sim = Simulator::new(cfg)?;
    let traces = sim.simulate_range(0..cfg.n_traces);
    Ok(sim.batch_from(traces))
}

/// Configuration of the matching vacuum reference run: unpumped source,
/// same detector noise and grid, independent seed.
pub fn vacuum_reference_config(cfg: &SimConfig, n_traces: usize) -> SimConfig {
    let mut vacuum = cfg.clone();
    vacuum.source.epsilon = 0.0;
    vacuum.source.dark_rate = vacuum.source.dark_rate.max(1.0);
    vacuum.n_traces = n_traces;
    vacuum.master_seed = rng::substream_seed(cfg.master_seed, u64::MAX);
    vacuum
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn fock_density(n: u32, q: f64) -> f64 {
        let h = match n {
            0 => 1.0,
            1 => 2.0 * q,
            2 => 4.0 * q * q - 2.0,
            _ => unreachable!(),
        };
        let fact = [1.0, 1.0, 2.0][n as usize];
        h * h * (-q * q).exp() / (PI.sqrt() * 2f64.powi(n as i32) * fact)
    }

    #[test]
    fn fock_samplers_match_densities() {
        // chi-square goodness of fit on 40 equiprobable-ish bins over [-4, 4]
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 0..=2 {
            let draws = 200_000;
            let bins = 40;
            let (lo, hi) = (-4.0, 4.0);
            let width = (hi - lo) / bins as f64;
            let mut counts = vec![0usize; bins];
            for _ in 0..draws {
                let q = sample_fock_quadrature(n, &mut rng);
                if q >= lo && q < hi {
                    counts[((q - lo) / width) as usize] += 1;
                }
            }
            let mut chi2 = 0.0;
            for (b, &c) in counts.iter().enumerate() {
                // Simpson on each bin
                let a = lo + b as f64 * width;
                let p = width / 6.0
                    * (fock_density(n, a) + 4.0 * fock_density(n, a + width / 2.0) + fock_density(n, a + width));
                let expected = p * draws as f64;
                if expected > 5.0 {
                    chi2 += (c as f64 - expected).powi(2) / expected;
                }
            }
            // 99.9% quantile of chi-square with ~40 dof is about 73
            assert!(chi2 < 73.0, "n={n}: chi2 {chi2}");
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = SimConfig::default();
        cfg.validate().unwrap();
        cfg.photon_mixture.p1 = 0.5;
        assert!(cfg.validate().is_err());

        let mut cfg = SimConfig::default();
        cfg.signal_efficiency = 1.0;
        assert!(cfg.validate().is_err(), "electronic noise caps the efficiency");
        cfg.electronic_noise_db = None;
        cfg.validate().unwrap();

        let mut cfg = SimConfig::default();
        cfg.trace_len = 100;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = SimConfig::default();
        cfg.trigger_jitter = 0.9e-6;
        assert!(matches!(Simulator::new(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn config_keys() {
        let mut cfg = SimConfig::default();
        assert!(cfg.set("lo_phase", "0.5").unwrap());
        assert_eq!(cfg.lo_phase, LoPhase::Fixed(0.5));
        assert!(cfg.set("electronic_noise_db", "none").unwrap());
        assert_eq!(cfg.electronic_noise_db, None);
        assert!(cfg.set("epsilon", "0.05").unwrap());
        assert_eq!(cfg.source.epsilon, 0.05);
        assert!(cfg.set("trigger_jitter_ns", "10").unwrap());
        assert!((cfg.trigger_jitter - 1e-8).abs() < 1e-20);
        assert!(!cfg.set("nonsense", "1").unwrap());
    }

    #[test]
    fn trigger_is_centered() {
        let cfg = SimConfig {
            n_traces: 3,
            ..Default::default()
        };
        let batch = simulate_batch(&cfg).unwrap();
        let duration = cfg.trace_len as f64 / cfg.sample_rate;
        for t in &batch.traces {
            assert!(t.trigger_offset >= 0.4 * duration && t.trigger_offset <= 0.6 * duration);
            assert_eq!(t.samples.len(), cfg.trace_len);
            assert!((0.0..TAU).contains(&t.lo_phase));
        }
    }

    #[test]
    fn deterministic_and_order_independent() {
        let cfg = SimConfig {
            n_traces: 64,
            ..Default::default()
        };
        let a = simulate_batch(&cfg).unwrap();
        let b = simulate_batch(&cfg).unwrap();
        assert_eq!(tracefile::encode(&a), tracefile::encode(&b));
        let sim = Simulator::new(&cfg).unwrap();
        let tail = sim.simulate_range(40..64);
        assert_eq!(&a.traces[40..], &tail[..]);
        let other = simulate_batch(&SimConfig {
            master_seed: cfg.master_seed + 1,
            ..cfg.clone()
        })
        .unwrap();
        assert_ne!(a.traces[0].samples, other.traces[0].samples);
    }

    #[test]
    fn mode_replacement_is_exact() {
        let cfg = SimConfig {
            electronic_noise_db: None,
            ..Default::default()
        };
        let sim = Simulator::new(&cfg).unwrap();
        let mode = sim
            .mode_shape()
            .sample(cfg.trigger_offset(), cfg.sample_period(), cfg.trace_len)
            .unwrap()
            .into_unit();
        let mut checked = 0;
        for i in 0..200 {
            let (trace, truth) = sim.simulate_trace(i);
            if let Some(q) = truth.mode_quadrature {
                let projected = mode.dot(&trace.samples_f64());
                assert!((projected - q).abs() < 1e-5 * (1.0 + q.abs()), "{projected} vs {q}");
                checked += 1;
            }
        }
        assert!(checked > 150);
    }

    #[test]
    fn unpumped_source_gives_only_false_heralds() {
        let cfg = SimConfig {
            source: SourceParams {
                epsilon: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let sim = Simulator::new(&cfg).unwrap();
        assert_eq!(sim.p_true(), 0.0);
        assert!((0..100).all(|i| !sim.simulate_trace(i).1.true_herald));
    }
}
