//! End-to-end runs: simulate → extract → tomo → g2 → report, wired through
//! files in one output directory.

mod report;
mod stages;
mod svg;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{parse_f64, parse_u64, KeyValues};
use crate::error::{Error, Result};
use crate::simulator::{LoPhase, ModeKind, SimConfig};

pub use report::{Report, ReportRow};
pub use stages::{
    extract_stage, g2_stage, report_stage, simulate_stage, tomo_stage, G2Summary, StageOutput,
    TomoSummary, VacuumSource,
};
pub use svg::g2_plot;

pub const TRACES_FILE: &str = "traces.hpt";
pub const QUADS_FILE: &str = "quads.tsv";
pub const RHO_FILE: &str = "rho.tsv";
pub const WIGNER_FILE: &str = "wigner.tsv";
pub const RHO_CORRECTED_FILE: &str = "rho_corrected.tsv";
pub const WIGNER_CORRECTED_FILE: &str = "wigner_corrected.tsv";
pub const G2_TABLE_FILE: &str = "g2.tsv";
pub const G2_PLOT_FILE: &str = "g2.svg";
pub const REPORT_FILE: &str = "report.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Simulate,
    Extract,
    Tomo,
    G2,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Simulate, Stage::Extract, Stage::Tomo, Stage::G2, Stage::Report];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Extract => "extract",
            Stage::Tomo => "tomo",
            Stage::G2 => "g2",
            Stage::Report => "report",
        }
    }

    /// Parses a comma-separated stage list; `all` expands to every stage.
    pub fn parse_list(list: &str) -> Result<Vec<Stage>> {
        let mut stages = Vec::new();
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            if name == "all" {
                stages.extend(Stage::ALL);
            } else {
                stages.push(name.parse()?);
            }
        }
        if stages.is_empty() {
            return Err(Error::Usage("empty stage list".into()));
        }
        stages.sort();
        stages.dedup();
        Ok(stages)
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                Error::Usage(format!(
                    "unknown stage `{s}` (expected simulate, extract, tomo, g2 or report)"
                ))
            })
    }
}

/// Analysis settings. Config keys: `extract_mode` (`auto`, `plain` or
/// `smeared`; `auto` follows `smear_mode`), `vacuum_traces`, `n_max`,
/// `mle_tol`, `mle_max_iter`, `cutoff_check_nmax` (0 disables the rerun),
/// `eta_meas` (or `none`), `g2_cutoff_hz`, `far_tau_ns`, `xi` (comma list),
/// `wigner_extent`, `wigner_points`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisConfig {
    pub extract_mode: Option<ModeKind>,
    pub vacuum_traces: usize,
    pub n_max: usize,
    pub mle_tol: f64,
    pub mle_max_iter: usize,
    pub cutoff_check_nmax: usize,
    pub eta_meas: Option<f64>,
    pub g2_cutoff_hz: f64,
    pub far_tau_ns: f64,
    pub xi: Vec<f64>,
    pub wigner_extent: f64,
    pub wigner_points: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            extract_mode: None,
            vacuum_traces: 50_000,
            n_max: 6,
            mle_tol: 1e-9,
            mle_max_iter: 2000,
            cutoff_check_nmax: 10,
            eta_meas: Some(0.892),
            g2_cutoff_hz: 30e6,
            far_tau_ns: 300.0,
            xi: vec![1.0, 0.8, 0.6],
            wigner_extent: 4.0,
            wigner_points: 81,
        }
    }
}

pub fn parse_xi_list(value: &str) -> Result<Vec<f64>> {
    let xi = value
        .split(',')
        .map(|s| parse_f64("xi", s.trim()))
        .collect::<Result<Vec<_>>>()?;
    if xi.is_empty() || xi.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::Config(format!("xi values must lie in [0, 1], got `{value}`")));
    }
    Ok(xi)
}

impl AnalysisConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "extract_mode" => {
                self.extract_mode = match value {
                    "auto" => None,
                    v => Some(v.parse::<ModeKind>().map_err(|e| Error::Config(e.to_string()))?),
                }
            }
            "vacuum_traces" => self.vacuum_traces = parse_u64(key, value)? as usize,
            "n_max" => self.n_max = parse_u64(key, value)? as usize,
            "mle_tol" => self.mle_tol = parse_f64(key, value)?,
            "mle_max_iter" => self.mle_max_iter = parse_u64(key, value)? as usize,
            "cutoff_check_nmax" => self.cutoff_check_nmax = parse_u64(key, value)? as usize,
            "eta_meas" => {
                self.eta_meas = match value {
                    "none" | "off" => None,
                    v => Some(parse_f64(key, v)?),
                }
            }
            "g2_cutoff_hz" => self.g2_cutoff_hz = parse_f64(key, value)?,
            "far_tau_ns" => self.far_tau_ns = parse_f64(key, value)?,
            "xi" => self.xi = parse_xi_list(value)?,
            "wigner_extent" => self.wigner_extent = parse_f64(key, value)?,
            "wigner_points" => self.wigner_points = parse_u64(key, value)? as usize,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn far_tau(&self) -> f64 {
        self.far_tau_ns * 1e-9
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_max < 2 {
            return Err(Error::Config(format!("n_max must be at least 2, got {}", self.n_max)));
        }
        if self.cutoff_check_nmax != 0 && self.cutoff_check_nmax <= self.n_max {
            return Err(Error::Config(format!(
                "cutoff_check_nmax {} must exceed n_max {} (or be 0)",
                self.cutoff_check_nmax, self.n_max
            )));
        }
        if !(self.mle_tol > 0.0) || self.mle_max_iter == 0 {
            return Err(Error::Config("mle_tol and mle_max_iter must be positive".into()));
        }
        if let Some(eta) = self.eta_meas {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(Error::Config(format!("eta_meas must lie in (0, 1], got {eta}")));
            }
        }
        if !(self.far_tau_ns > 0.0) {
            return Err(Error::Config("far_tau_ns must be positive".into()));
        }
        if !(self.wigner_extent > 0.0) || self.wigner_points < 2 {
            return Err(Error::Config("wigner grid needs a positive extent and at least 2 points".into()));
        }
        Ok(())
    }
}

/// Simulation plus analysis settings, as read from a config file.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub analysis: AnalysisConfig,
}

impl RunConfig {
    /// Applies entries in order; unknown keys are an error.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut cfg = Self::default();
        for e in kv.entries() {
            let known = cfg.analysis.set(&e.key, &e.value)? || cfg.sim.set(&e.key, &e.value)?;
            if !known {
                let place = if e.line == 0 {
                    "override".to_string()
                } else {
                    format!("line {}", e.line)
                };
                return Err(Error::Config(format!("{place}: unknown key `{}`", e.key)));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads an optional config file and applies `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut kv = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                KeyValues::parse(&text)?
            }
            None => KeyValues::default(),
        };
        for o in overrides {
            kv.push_override(o)?;
        }
        Self::from_key_values(&kv)
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.analysis.validate()
    }

    /// Mode used for extraction: explicit setting, else the simulated one.
    pub fn extraction_mode(&self) -> ModeKind {
        self.analysis.extract_mode.unwrap_or(self.sim.mode_kind())
    }

    /// Every setting as config text; parsing it back gives the same config.
    pub fn to_config_text(&self) -> String {
        let sim = &self.sim;
        let a = &self.analysis;
        let mut s = String::new();
        for (k, v) in sim.source.to_config_entries() {
            let _ = writeln!(s, "{k} = {v:?}");
        }
        let _ = writeln!(s, "sample_rate = {:?}", sim.sample_rate);
        let _ = writeln!(s, "trace_len = {}", sim.trace_len);
        let _ = writeln!(s, "n_traces = {}", sim.n_traces);
        let _ = writeln!(s, "seed = {}", sim.master_seed);
        match sim.lo_phase {
            LoPhase::Scanned => s.push_str("lo_phase = scanned\n"),
            LoPhase::Fixed(t) => {
                let _ = writeln!(s, "lo_phase = {t:?}");
            }
        }
        let m = sim.photon_mixture;
        let _ = writeln!(s, "p0 = {:?}\np1 = {:?}\np2 = {:?}", m.p0, m.p1, m.p2);
        let _ = writeln!(s, "signal_efficiency = {:?}", sim.signal_efficiency);
        match sim.electronic_noise_db {
            Some(db) => {
                let _ = writeln!(s, "electronic_noise_db = {db:?}");
            }
            None => s.push_str("electronic_noise_db = none\n"),
        }
        let _ = writeln!(s, "smear_mode = {}", sim.smear_mode);
        let _ = writeln!(s, "trigger_jitter_ns = {:?}", sim.trigger_jitter * 1e9);
        match a.extract_mode {
            Some(mode) => {
                let _ = writeln!(s, "extract_mode = {mode}");
            }
            None => s.push_str("extract_mode = auto\n"),
        }
        let _ = writeln!(s, "vacuum_traces = {}", a.vacuum_traces);
        let _ = writeln!(s, "n_max = {}", a.n_max);
        let _ = writeln!(s, "mle_tol = {:?}", a.mle_tol);
        let _ = writeln!(s, "mle_max_iter = {}", a.mle_max_iter);
        let _ = writeln!(s, "cutoff_check_nmax = {}", a.cutoff_check_nmax);
        match a.eta_meas {
            Some(eta) => {
                let _ = writeln!(s, "eta_meas = {eta:?}");
            }
            None => s.push_str("eta_meas = none\n"),
        }
        let _ = writeln!(s, "g2_cutoff_hz = {:?}", a.g2_cutoff_hz);
        let _ = writeln!(s, "far_tau_ns = {:?}", a.far_tau_ns);
        let xi: Vec<String> = a.xi.iter().map(|x| format!("{x:?}")).collect();
        let _ = writeln!(s, "xi = {}", xi.join(","));
        let _ = writeln!(s, "wigner_extent = {:?}", a.wigner_extent);
        let _ = writeln!(s, "wigner_points = {}", a.wigner_points);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

pub fn file_digest(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        bytes: bytes.len() as u64,
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub seconds: f64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub version: String,
    pub config: String,
    pub config_sha256: String,
    pub master_seed: u64,
    pub vacuum_seed: u64,
    pub stages: Vec<StageRecord>,
    pub total_seconds: f64,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    /// `path → sha256` over every stage output.
    pub fn output_digests(&self) -> BTreeMap<String, String> {
        self.stages
            .iter()
            .flat_map(|s| s.outputs.iter())
            .map(|d| (d.path.clone(), d.sha256.clone()))
            .collect()
    }
}

/// Runs `stages` in pipeline order inside `out_dir`, each reading its
/// predecessors' files from there.
pub fn run_pipeline(cfg: &RunConfig, stages: &[Stage], out_dir: &Path, vacuum: &VacuumSource) -> Result<RunManifest> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut ordered = stages.to_vec();
    ordered.sort();
    ordered.dedup();
    let config = cfg.to_config_text();
    let start = Instant::now();
    let mut records = Vec::new();
    let file = |name: &str| out_dir.join(name);
    for stage in ordered {
        let t = Instant::now();
        let out = match stage {
            Stage::Simulate => simulate_stage(cfg, &file(TRACES_FILE))?,
            Stage::Extract => extract_stage(cfg, &file(TRACES_FILE), &file(QUADS_FILE), vacuum)?,
            Stage::Tomo => tomo_stage(cfg, &file(QUADS_FILE), out_dir)?.0,
            Stage::G2 => g2_stage(cfg, &file(TRACES_FILE), out_dir, vacuum)?.0,
            Stage::Report => report_stage(cfg, out_dir)?.0,
        };
        records.push(StageRecord {
            stage,
            seconds: t.elapsed().as_secs_f64(),
            inputs: out.inputs.iter().map(|p| file_digest(p)).collect::<Result<_>>()?,
            outputs: out.outputs.iter().map(|p| file_digest(p)).collect::<Result<_>>()?,
        });
    }
    Ok(RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: hex::encode(Sha256::digest(config.as_bytes())),
        config,
        master_seed: cfg.sim.master_seed,
        vacuum_seed: crate::simulator::vacuum_reference_config(&cfg.sim, 0).master_seed,
        stages: records,
        total_seconds: start.elapsed().as_secs_f64(),
    })
}

/// `# key = value` comment lines of a table file.
pub fn read_metadata(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter_map(|l| l.trim().strip_prefix('#'))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect())
}

pub(crate) fn require(path: &Path) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path.to_path_buf())
    } else {
        Err(Error::Dependency(path.to_path_buf()))
    }
}
