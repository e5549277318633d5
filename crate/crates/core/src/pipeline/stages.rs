//! The individual pipeline stages. Each reads its inputs from files and
//! writes its outputs to files, so they can be run one at a time.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::correlation::theory::{SignalFilter, TheoryConfig, TheoryModel};
use crate::correlation::{curves_table, g2_from_variances, variance_profile, CorrelationCurve, CurveKind, Level, VarianceAccumulator};
use crate::error::{Error, Result};
use crate::extraction::{Extractor, QuadratureSet, VacuumCalibrator};
use crate::model::herald_rates;
use crate::simulator::{read_trace_file, simulate_batch, vacuum_reference_config, write_trace_file, ModeShape, Simulator, Trace, TraceBatch};
use crate::tomography::{fit_mixture, loss_correct, mle_reconstruct, wigner_grid, wigner_origin, wigner_table, DensityMatrix, MixtureFit, MleOptions};

use super::report::Report;
use super::{require, svg, RunConfig};
use super::{G2_PLOT_FILE, G2_TABLE_FILE, REPORT_FILE, RHO_CORRECTED_FILE, RHO_FILE, WIGNER_CORRECTED_FILE, WIGNER_FILE};

const VACUUM_CHUNK: usize = 5000;

/// Files a stage read and wrote.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StageOutput {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

/// Where the vacuum reference comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VacuumSource {
    /// Generated in chunks from the run config with the pump off.
    Synthesized,
    /// A recorded trace file with the same sample grid as the data.
    File(PathBuf),
}

/// Feeds the vacuum reference to `sink` in chunks; returns the files read.
fn stream_vacuum(
    cfg: &RunConfig,
    source: &VacuumSource,
    data: &TraceBatch,
    mut sink: impl FnMut(&[Trace]) -> Result<()>,
) -> Result<Vec<PathBuf>> {
    match source {
        VacuumSource::Synthesized => {
            let mut vcfg = vacuum_reference_config(&cfg.sim, cfg.analysis.vacuum_traces);
            vcfg.sample_rate = data.sample_rate;
            vcfg.trace_len = data.trace_len;
            let sim = Simulator::new(&vcfg)?;
            let mut start = 0;
            while start < vcfg.n_traces {
                let end = (start + VACUUM_CHUNK).min(vcfg.n_traces);
                sink(&sim.simulate_range(start..end))?;
                start = end;
            }
            Ok(Vec::new())
        }
        VacuumSource::File(path) => {
            let vacuum = read_trace_file(require(path)?)?;
            if vacuum.sample_rate != data.sample_rate || vacuum.trace_len != data.trace_len {
                return Err(Error::Config(format!(
                    "vacuum file {} has a different sample grid ({} Hz × {}) than the data ({} Hz × {})",
                    path.display(),
                    vacuum.sample_rate,
                    vacuum.trace_len,
                    data.sample_rate,
                    data.trace_len
                )));
            }
            for chunk in vacuum.traces.chunks(VACUUM_CHUNK) {
                sink(chunk)?;
            }
            Ok(vec![path.clone()])
        }
    }
}

pub fn simulate_stage(cfg: &RunConfig, out: &Path) -> Result<StageOutput> {
    let batch = simulate_batch(&cfg.sim)?;
    write_trace_file(&batch, out)?;
    Ok(StageOutput {
        inputs: Vec::new(),
        outputs: vec![out.to_path_buf()],
    })
}

pub fn extract_stage(cfg: &RunConfig, traces: &Path, out: &Path, vacuum: &VacuumSource) -> Result<StageOutput> {
    let batch = read_trace_file(require(traces)?)?;
    let shape = ModeShape::from_params(&cfg.sim.source, cfg.extraction_mode())?;
    let mut calibrator = VacuumCalibrator::new(&shape, batch.sample_period(), batch.trace_len)?;
    let mut inputs = stream_vacuum(cfg, vacuum, &batch, |chunk| calibrator.push_all(chunk))?;
    let quads = Extractor::new(shape, calibrator.finish()?).extract_batch(&batch)?;
    quads.write(out)?;
    inputs.insert(0, traces.to_path_buf());
    Ok(StageOutput {
        inputs,
        outputs: vec![out.to_path_buf()],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TomoSummary {
    pub fit: MixtureFit,
    pub rho: DensityMatrix,
    pub wigner_origin: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Largest diagonal change on rerunning at the check cutoff.
    pub cutoff_shift: Option<f64>,
    pub corrected: Option<DensityMatrix>,
}

pub fn tomo_stage(cfg: &RunConfig, quads_path: &Path, out_dir: &Path) -> Result<(StageOutput, TomoSummary)> {
    let a = &cfg.analysis;
    let quads = QuadratureSet::read(require(quads_path)?)?;
    let fit = fit_mixture(&quads.quadratures())?;
    let samples = quads.samples();
    let opts = MleOptions {
        n_max: a.n_max,
        tol: a.mle_tol,
        max_iter: a.mle_max_iter,
    };
    let rec = mle_reconstruct(&samples, &opts)?;
    let cutoff_shift = if a.cutoff_check_nmax > 0 {
        let wide = mle_reconstruct(&samples, &MleOptions { n_max: a.cutoff_check_nmax, ..opts })?;
        let shift = rec
            .rho
            .diagonal()
            .iter()
            .zip(wide.rho.diagonal())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        Some(shift)
    } else {
        None
    };
    let w0 = wigner_origin(&rec.rho);
    let mut meta = vec![
        ("samples", samples.len().to_string()),
        ("mode", quads.mode.to_string()),
        ("mle_tol", format!("{:e}", a.mle_tol)),
        ("mle_max_iter", a.mle_max_iter.to_string()),
        ("iterations", rec.iterations.to_string()),
        ("converged", rec.converged.to_string()),
        ("final_change", format!("{:e}", rec.final_change)),
        ("min_eigenvalue", format!("{:e}", rec.min_eigenvalue)),
        ("log_likelihood", format!("{:.6}", rec.log_likelihood.last().copied().unwrap_or(f64::NAN))),
        ("eta_fit", format!("{:.6}", fit.eta)),
        ("eta_fit_stderr", format!("{:.6}", fit.std_error)),
        ("wigner_origin", format!("{w0:.6}")),
    ];
    if let Some(shift) = cutoff_shift {
        meta.push(("cutoff_check_nmax", a.cutoff_check_nmax.to_string()));
        meta.push(("cutoff_max_diagonal_shift", format!("{shift:.3e}")));
    }
    let rho_path = out_dir.join(RHO_FILE);
    let wigner_path = out_dir.join(WIGNER_FILE);
    rec.rho.write(&rho_path, &meta)?;
    write_wigner(&rec.rho, a.wigner_extent, a.wigner_points, &wigner_path)?;
    let mut outputs = vec![rho_path, wigner_path];
    // the unconverged estimate is kept on disk for inspection
    if !rec.converged {
        return Err(Error::NotConverged {
            iterations: rec.iterations,
            change: rec.final_change,
        });
    }

    let corrected = match a.eta_meas {
        Some(eta) => {
            // loss inversion acts on populations; the reconstructed coherences
            // are sampling noise under a scanned LO phase
            let rho = loss_correct(&rec.rho.phase_averaged(), eta)?;
            let meta = vec![
                ("eta_meas", format!("{eta}")),
                ("phase_averaged", "true".to_string()),
                ("wigner_origin", format!("{:.6}", wigner_origin(&rho))),
            ];
            let rho_path = out_dir.join(RHO_CORRECTED_FILE);
            let wigner_path = out_dir.join(WIGNER_CORRECTED_FILE);
            rho.write(&rho_path, &meta)?;
            write_wigner(&rho, a.wigner_extent, a.wigner_points, &wigner_path)?;
            outputs.extend([rho_path, wigner_path]);
            Some(rho)
        }
        None => None,
    };
    let summary = TomoSummary {
        fit,
        wigner_origin: w0,
        iterations: rec.iterations,
        converged: rec.converged,
        rho: rec.rho,
        cutoff_shift,
        corrected,
    };
    Ok((
        StageOutput {
            inputs: vec![quads_path.to_path_buf()],
            outputs,
        },
        summary,
    ))
}

fn write_wigner(rho: &DensityMatrix, extent: f64, points: usize, path: &Path) -> Result<()> {
    let table = wigner_table(&wigner_grid(rho, extent, points));
    fs::write(path, table).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct G2Summary {
    pub g2: CorrelationCurve,
    pub theory: Vec<CorrelationCurve>,
    pub conditional: CorrelationCurve,
    pub unconditional: Level,
    pub vacuum: Level,
    /// Herald purity used for the reference theory curve.
    pub configured_xi: f64,
    pub peak_index: usize,
    pub theory_peak: f64,
    /// Mean g² beyond the far delay, where the unconditional level is taken.
    pub baseline: Level,
    /// Conditional variance at the g² peak in vacuum-variance-1/2 units.
    pub conditional_peak: f64,
}

pub fn g2_stage(cfg: &RunConfig, traces: &Path, out_dir: &Path, vacuum: &VacuumSource) -> Result<(StageOutput, G2Summary)> {
    let a = &cfg.analysis;
    let batch = read_trace_file(require(traces)?)?;
    let profile = variance_profile(&batch.traces, batch.sample_rate, a.g2_cutoff_hz, a.far_tau())?;
    let first = &batch.traces[0];
    let mut acc = VarianceAccumulator::new(batch.sample_rate, batch.trace_len, first.trigger_offset, a.g2_cutoff_hz, a.far_tau())?;
    let mut inputs = stream_vacuum(cfg, vacuum, &batch, |chunk| acc.push_all(chunk))?;
    inputs.insert(0, traces.to_path_buf());
    let vac_profile = acc.finish()?;
    let unconditional = profile.far.ok_or_else(|| {
        Error::InsufficientStatistics(format!(
            "no delays beyond {:.0} ns for the unconditional level",
            a.far_tau_ns
        ))
    })?;
    let vacuum_level = vac_profile.overall;
    let conditional = profile.curve(CurveKind::ConditionalVariance);
    let g2 = g2_from_variances(&conditional, unconditional, vacuum_level)?;

    let theory_cfg = TheoryConfig {
        signal: SignalFilter::Lorentz { cutoff_hz: a.g2_cutoff_hz },
        trigger_filter: true,
        signal_efficiency: cfg.sim.signal_efficiency,
        sample_period: batch.sample_period(),
    };
    let model = TheoryModel::new(&cfg.sim.source, &theory_cfg)?;
    let configured_xi = herald_rates(&cfg.sim.source)?.p_true;
    let curve_for = |xi: f64| -> Result<CorrelationCurve> {
        Ok(CorrelationCurve {
            kind: CurveKind::G2Theory { xi },
            tau: g2.tau.clone(),
            values: g2.tau.iter().map(|&t| model.g2(t, xi)).collect::<Result<_>>()?,
            stderr: None,
        })
    };
    let reference = curve_for(configured_xi)?;
    let mut theory = a.xi.iter().map(|&xi| curve_for(xi)).collect::<Result<Vec<_>>>()?;
    let theory_peak = reference.peak().map_or(f64::NAN, |p| p.1);
    theory.push(reference);

    let (peak_index, peak) = g2
        .peak()
        .ok_or_else(|| Error::EmptyInput("g2 curve has no finite values".into()))?;
    let peak_se = g2.stderr.as_ref().map_or(f64::NAN, |s| s[peak_index]);
    let far = a.far_tau();
    let baseline = g2
        .band_mean(|t| t.abs() >= far)
        .expect("far band is non-empty when the unconditional level exists");
    let conditional_peak = 0.5 * conditional.values[peak_index] / vacuum_level.value;

    let mut table = String::new();
    let meta: Vec<(&str, String)> = vec![
        ("n_traces", batch.n_traces().to_string()),
        ("vacuum_traces", vac_profile.n_traces.to_string()),
        ("cutoff_hz", format!("{:e}", a.g2_cutoff_hz)),
        ("far_tau_ns", format!("{}", a.far_tau_ns)),
        ("unconditional_level", format!("{:.6e}", unconditional.value)),
        ("unconditional_level_stderr", format!("{:.3e}", unconditional.stderr)),
        ("vacuum_level", format!("{:.6e}", vacuum_level.value)),
        ("vacuum_level_stderr", format!("{:.3e}", vacuum_level.stderr)),
        ("configured_xi", format!("{configured_xi:.6}")),
        ("g2_peak", format!("{peak:.4}")),
        ("g2_peak_stderr", format!("{peak_se:.4}")),
        ("g2_peak_tau_ns", format!("{:.1}", g2.tau[peak_index] * 1e9)),
        ("g2_theory_peak", format!("{theory_peak:.4}")),
        ("g2_baseline", format!("{:.4}", baseline.value)),
        ("g2_baseline_stderr", format!("{:.4}", baseline.stderr)),
        ("conditional_variance_peak", format!("{conditional_peak:.4}")),
    ];
    for (k, v) in &meta {
        let _ = writeln!(table, "# {k} = {v}");
    }
    let vac_curve = vac_profile.curve(CurveKind::VacuumVariance);
    let mut curves: Vec<&CorrelationCurve> = vec![&conditional, &vac_curve, &g2];
    curves.extend(theory.iter());
    table.push_str(&curves_table(&curves, "point-wise variances (vacuum variance = 0.5 before scaling) and g2 versus delay from the trigger")?);

    let table_path = out_dir.join(G2_TABLE_FILE);
    let plot_path = out_dir.join(G2_PLOT_FILE);
    fs::write(&table_path, table).map_err(|e| Error::io(&table_path, e))?;
    let plot = svg::g2_plot(&g2, &theory, 200e-9);
    fs::write(&plot_path, plot).map_err(|e| Error::io(&plot_path, e))?;

    let summary = G2Summary {
        g2,
        theory,
        conditional,
        unconditional,
        vacuum: vacuum_level,
        configured_xi,
        peak_index,
        theory_peak,
        baseline,
        conditional_peak,
    };
    Ok((
        StageOutput {
            inputs,
            outputs: vec![table_path, plot_path],
        },
        summary,
    ))
}

pub fn report_stage(cfg: &RunConfig, dir: &Path) -> Result<(StageOutput, Report)> {
    let mut inputs = vec![
        require(&dir.join(RHO_FILE))?,
        require(&dir.join(G2_TABLE_FILE))?,
    ];
    if cfg.analysis.eta_meas.is_some() {
        inputs.push(require(&dir.join(RHO_CORRECTED_FILE))?);
    }
    let report = Report::from_dir(cfg, dir)?;
    let out = dir.join(REPORT_FILE);
    fs::write(&out, report.to_text()).map_err(|e| Error::io(&out, e))?;
    Ok((
        StageOutput {
            inputs,
            outputs: vec![out],
        },
        report,
    ))
}
