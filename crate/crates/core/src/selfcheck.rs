//! Quick invariant suite behind `heraldlab selfcheck`: closed forms,
//! analytic fixtures and small closed-loop statistics, a few seconds total.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::correlation::theory::{theory_g2, TheoryConfig};
use crate::error::Result;
use crate::extraction::{Extractor, VacuumCalibration};
use crate::model::{
    efficiency_budget, escape_efficiency, pump_parameter_from_gain, threshold_power, trigger_click_rate,
    production_rate, SourceParams,
};
use crate::simulator::tracefile::{decode, encode};
use crate::simulator::{sample_fock_quadrature, vacuum_reference_config, ModeKind, ModeShape, SimConfig, Simulator};
use crate::stats::Moments;
use crate::tomography::{
    binomial_loss, invert_binomial_loss, mle_reconstruct, wigner, wigner_origin, DensityMatrix,
    MleOptions,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn() -> Result<(bool, String)>;

const CHECKS: [(&str, Check); 10] = [
    ("closed-form arithmetic", closed_forms),
    ("mode normalization", mode_normalization),
    ("wigner fixtures", wigner_fixtures),
    ("binomial loss round trip", loss_round_trip),
    ("trace file round trip", trace_file_round_trip),
    ("determinism across thread counts", thread_determinism),
    ("mode replacement", mode_replacement),
    ("vacuum calibration", vacuum_calibration),
    ("unfiltered g2 at zero delay", unfiltered_g2),
    ("tomography oracle", tomography_oracle),
];

/// Runs every check; an `Err` from a check counts as a failure.
pub fn run_selfcheck() -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|(name, check)| match check() {
            Ok((passed, detail)) => CheckResult { name, passed, detail },
            Err(e) => CheckResult {
                name,
                passed: false,
                detail: format!("{}: {e}", e.code()),
            },
        })
        .collect()
}

/// Equal after rounding both to `digits` significant figures.
fn agrees_to(value: f64, published: f64, digits: i32) -> bool {
    let round = |x: f64| {
        let scale = 10f64.powi(digits - 1 - x.abs().log10().floor() as i32);
        (x * scale).round() / scale
    };
    (round(value) - round(published)).abs() <= 1e-12 * published.abs()
}

fn closed_forms() -> Result<(bool, String)> {
    let p = SourceParams::default();
    let p_thr = threshold_power(0.125, 0.004, 0.020)?;
    let esc = escape_efficiency(0.125, 0.004)?;
    let eps = pump_parameter_from_gain(1.2)?;
    let total = efficiency_budget(p.signal_stages())?.eta_total;
    let rate = production_rate(&p)?;
    let clicks = trigger_click_rate(&p, 214_000.0);
    let ok = agrees_to(p_thr, 0.21, 2)
        && agrees_to(esc, 0.97, 2)
        && agrees_to(eps, 0.087, 2)
        && agrees_to(total, 0.75, 2)
        && agrees_to(rate, 2.05e5, 3)
        && agrees_to(clicks, 12_800.0, 3);
    Ok((
        ok,
        format!(
            "P_thr {:.1} mW, escape {esc:.4}, eps {eps:.4}, eta_total {total:.4}, R {rate:.0}/s, clicks {clicks:.0}/s",
            p_thr * 1e3
        ),
    ))
}

fn mode_normalization() -> Result<(bool, String)> {
    let p = SourceParams::default();
    let mut worst: f64 = 0.0;
    for kind in [ModeKind::Plain, ModeKind::Smeared] {
        let shape = ModeShape::from_params(&p, kind)?;
        // trapezoid on a fine grid well beyond the support
        let (lo, hi) = (-3e-6, 3e-6);
        let n = 600_000;
        let h = (hi - lo) / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let f = shape.eval(lo + i as f64 * h);
            acc += if i == 0 || i == n { 0.5 * f * f } else { f * f };
        }
        worst = worst.max((acc * h - 1.0).abs());
    }
    Ok((worst < 1e-6, format!("max |∫f² − 1| = {worst:.1e}")))
}

fn wigner_fixtures() -> Result<(bool, String)> {
    let vacuum = DensityMatrix::from_diagonal(&[1.0, 0.0, 0.0])?;
    let e1 = (wigner_origin(&vacuum) - 1.0 / PI).abs();
    let mix = DensityMatrix::from_diagonal(&[0.38, 0.61, 0.01])?;
    let closed = (0.38 - 0.61 + 0.01) / PI;
    let e2 = (wigner(&mix, 0.0, 0.0) - closed).abs();
    Ok((e1 < 1e-10 && e2 < 1e-10, format!("vacuum error {e1:.1e}, mixture error {e2:.1e}")))
}

fn loss_round_trip() -> Result<(bool, String)> {
    let pops = [0.3, 0.5, 0.15, 0.05];
    let back = invert_binomial_loss(&binomial_loss(&pops, 0.892), 0.892);
    let err = pops.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok((err < 1e-8, format!("max error {err:.1e}")))
}

fn small_config(n: usize) -> SimConfig {
    SimConfig {
        n_traces: n,
        master_seed: 0xC0FFEE,
        ..SimConfig::default()
    }
}

fn trace_file_round_trip() -> Result<(bool, String)> {
    let sim = Simulator::new(&small_config(8))?;
    let batch = sim.batch_from(sim.simulate_range(0..8));
    let bytes = encode(&batch);
    let same = decode(&bytes).map(|b| encode(&b) == bytes).unwrap_or(false);
    let mut corrupt = bytes.clone();
    corrupt[0] ^= 0xFF;
    let rejected = decode(&corrupt).is_err();
    Ok((same && rejected, format!("bit-identical {same}, corrupted magic rejected {rejected}")))
}

fn thread_determinism() -> Result<(bool, String)> {
    let sim = Simulator::new(&small_config(64))?;
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map(|pool| pool.install(|| encode(&sim.batch_from(sim.simulate_range(0..64)))))
    };
    let same = match (run(1), run(3)) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    Ok((same, format!("1 and 3 workers agree: {same}")))
}

fn mode_replacement() -> Result<(bool, String)> {
    let cfg = SimConfig {
        electronic_noise_db: None,
        ..small_config(200)
    };
    let sim = Simulator::new(&cfg)?;
    let mode = sim
        .mode_shape()
        .sample(cfg.trigger_offset(), cfg.sample_period(), cfg.trace_len)?
        .into_unit();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for i in 0..200 {
        let (trace, truth) = sim.simulate_trace(i);
        if let Some(q) = truth.mode_quadrature {
            worst = worst.max((mode.dot(&trace.samples_f64()) - q).abs());
            checked += 1;
        }
    }
    // samples are stored as f32
    Ok((checked > 0 && worst < 1e-4, format!("{checked} heralds, max deviation {worst:.1e}")))
}

fn vacuum_calibration() -> Result<(bool, String)> {
    let cfg = vacuum_reference_config(&small_config(0), 6000);
    let sim = Simulator::new(&cfg)?;
    let shape = sim.mode_shape().clone();
    let cal = VacuumCalibration::from_batch(&shape, &sim.batch_from(sim.simulate_range(0..2000)))?;
    let quads = Extractor::new(shape, cal).extract_batch(&sim.batch_from(sim.simulate_range(2000..6000)))?;
    let mut m = Moments::new();
    for q in quads.quadratures() {
        m.push(q);
    }
    let se = m.std_error_of_variance().hypot(0.5 * cal.vacuum_variance_stderr / cal.vacuum_variance);
    let dev = m.variance() - 0.5;
    Ok((dev.abs() < 3.0 * se, format!("variance {:.4} ± {se:.4}", m.variance())))
}

fn unfiltered_g2() -> Result<(bool, String)> {
    let p = SourceParams::default();
    let g2 = theory_g2(&p, 0.0, &TheoryConfig::unfiltered(), 1.0)?;
    let want = 1.0 + 1.0 / (p.epsilon * p.epsilon);
    Ok(((g2 - want).abs() < 1e-6, format!("g2(0) = {g2:.6}, 1 + 1/eps² = {want:.6}")))
}

fn tomography_oracle() -> Result<(bool, String)> {
    let pops = [0.5, 0.3, 0.2];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let samples: Vec<(f64, f64)> = (0..20_000)
        .map(|_| {
            let u: f64 = rng.random();
            let n = if u < pops[0] { 0 } else if u < pops[0] + pops[1] { 1 } else { 2 };
            (rng.random::<f64>() * 2.0 * PI, sample_fock_quadrature(n, &mut rng))
        })
        .collect();
    let rec = mle_reconstruct(&samples, &MleOptions::default())?;
    let diag = rec.rho.diagonal();
    let err = pops.iter().zip(&diag).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok((
        rec.converged && err < 0.04,
        format!("max diagonal error {err:.4} after {} evaluations", rec.iterations),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_figure_rounding() {
        assert!(agrees_to(0.20801, 0.21, 2));
        assert!(!agrees_to(0.20801, 0.21, 3));
        assert!(agrees_to(12_787.0, 12_800.0, 3));
        assert!(agrees_to(-0.0747, -0.075, 2));
    }

    #[test]
    fn all_checks_pass() {
        for r in run_selfcheck() {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }
}
