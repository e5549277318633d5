//! Summary table of a finished run next to the published reference values.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{herald_rates, production_rate, production_rate_from_clicks};
use crate::tomography::{wigner_origin, DensityMatrix};

use super::{read_metadata, RunConfig, G2_TABLE_FILE, RHO_CORRECTED_FILE, RHO_FILE};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub quantity: &'static str,
    pub value: f64,
    pub stderr: Option<f64>,
    /// Published value, or empty when none exists.
    pub reference: &'static str,
    pub unit: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub notes: Vec<String>,
}

fn meta_f64(meta: &BTreeMap<String, String>, key: &str, path: &Path) -> Result<f64> {
    let v = meta.get(key).ok_or_else(|| Error::Table {
        path: path.display().to_string(),
        reason: format!("missing `{key}` metadata"),
    })?;
    v.parse().map_err(|_| Error::Table {
        path: path.display().to_string(),
        reason: format!("`{key}` = `{v}` is not a number"),
    })
}

impl Report {
    pub fn from_dir(cfg: &RunConfig, dir: &Path) -> Result<Self> {
        let rho_path = dir.join(RHO_FILE);
        let g2_path = dir.join(G2_TABLE_FILE);
        let rho = DensityMatrix::read(&rho_path)?;
        let rho_meta = read_metadata(&rho_path)?;
        let g2_meta = read_metadata(&g2_path)?;
        let m = |key: &str| meta_f64(&rho_meta, key, &rho_path);
        let g = |key: &str| meta_f64(&g2_meta, key, &g2_path);

        let row = |quantity, value, stderr, reference, unit| ReportRow {
            quantity,
            value,
            stderr,
            reference,
            unit,
        };
        let mut rows = vec![
            row("eta_fit", m("eta_fit")?, Some(m("eta_fit_stderr")?), "0.625", "-"),
            row("rho_00", rho.population(0), None, "", "-"),
            row("rho_11", rho.population(1), None, "0.61", "-"),
            row("rho_22", rho.population(2), None, "", "-"),
            row("wigner_origin", wigner_origin(&rho), None, "-0.070", "1/(vacuum quadrature unit)^2"),
        ];
        if cfg.analysis.eta_meas.is_some() {
            let corrected = DensityMatrix::read(dir.join(RHO_CORRECTED_FILE))?;
            rows.push(row("rho_11_corrected", corrected.population(1), None, "0.70", "-"));
            rows.push(row(
                "wigner_origin_corrected",
                wigner_origin(&corrected),
                None,
                "-0.12",
                "1/(vacuum quadrature unit)^2",
            ));
        }
        let params = &cfg.sim.source;
        let rates = herald_rates(params)?;
        rows.extend([
            row("production_rate_theory", production_rate(params)?, None, "200000", "1/s"),
            row("trigger_click_rate", rates.total, None, "12800", "1/s"),
            row(
                "production_rate_from_clicks",
                production_rate_from_clicks(params, rates.total),
                None,
                "215000",
                "1/s",
            ),
            row("herald_purity", rates.p_true, None, "", "-"),
            row("g2_peak", g("g2_peak")?, Some(g("g2_peak_stderr")?), "", "-"),
            row("g2_peak_theory", g("g2_theory_peak")?, None, "", "-"),
            row("g2_peak_tau", g("g2_peak_tau_ns")?, None, "", "ns"),
            row("g2_baseline", g("g2_baseline")?, Some(g("g2_baseline_stderr")?), "1", "-"),
            row("conditional_variance_peak", g("conditional_variance_peak")?, None, "", "vacuum = 0.5"),
        ]);

        let mut notes = vec![
            format!(
                "tomography: n_max {}, {} likelihood evaluations, converged = {}",
                rho.n_max(),
                m("iterations")?,
                rho_meta.get("converged").map_or("unknown", String::as_str)
            ),
            format!(
                "g2 theory reference uses xi = herald purity {:.4}; baseline is the mean beyond {} ns, where the unconditional level is taken",
                g("configured_xi")?,
                g("far_tau_ns")?
            ),
        ];
        if let Ok(shift) = m("cutoff_max_diagonal_shift") {
            notes.push(format!(
                "Fock cutoff check: rerun at n_max {} moves diagonals by at most {shift:.1e}",
                m("cutoff_check_nmax")?
            ));
        }
        Ok(Self { rows, notes })
    }

    pub fn get(&self, quantity: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.quantity == quantity)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("# heraldlab run summary\n");
        let _ = writeln!(s, "{:<28} {:>14} {:>10} {:>10}  unit", "quantity", "value", "stderr", "reference");
        for r in &self.rows {
            let value = if r.value.abs() >= 1e4 {
                format!("{:.0}", r.value)
            } else {
                format!("{:.4}", r.value)
            };
            let se = r.stderr.map_or("-".to_string(), |e| format!("{e:.4}"));
            let reference = if r.reference.is_empty() { "-" } else { r.reference };
            let _ = writeln!(s, "{:<28} {:>14} {:>10} {:>10}  {}", r.quantity, value, se, reference, r.unit);
        }
        for n in &self.notes {
            let _ = writeln!(s, "# {n}");
        }
        s
    }
}
