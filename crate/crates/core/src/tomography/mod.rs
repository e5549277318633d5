//! Fock-basis state estimation from quadrature samples: the vacuum/one-photon
//! mixture fit, maximum-likelihood density matrices, loss correction and
//! Wigner functions.

pub mod fock;
pub mod mle;
pub mod wigner;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub use fock::{fock_quadrature_density, fock_wavefunctions};
pub use mle::{mle_reconstruct, MleOptions, Reconstruction};
pub use wigner::{wigner, wigner_grid, wigner_origin};

/// Hermitian density matrix in the Fock basis `|0⟩ … |n_max⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    dim: usize,
    entries: Vec<Complex64>,
}

impl DensityMatrix {
    pub(crate) fn from_row_major(dim: usize, entries: Vec<Complex64>) -> Self {
        assert_eq!(entries.len(), dim * dim);
        Self { dim, entries }
    }

    pub fn from_fn(dim: usize, f: impl Fn(usize, usize) -> Complex64) -> Self {
        let entries = (0..dim * dim).map(|i| f(i / dim, i % dim)).collect();
        Self { dim, entries }
    }

    /// Diagonal state with the given populations (must be a probability vector).
    pub fn from_diagonal(pops: &[f64]) -> Result<Self> {
        if pops.is_empty()
            || pops.iter().any(|p| !(*p >= 0.0))
            || (pops.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidParameter(format!(
                "populations {pops:?} are not a probability vector"
            )));
        }
        Ok(Self::from_fn(pops.len(), |m, n| {
            if m == n {
                Complex64::new(pops[m], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        }))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_max(&self) -> usize {
        self.dim - 1
    }

    pub fn get(&self, m: usize, n: usize) -> Complex64 {
        self.entries[m * self.dim + n]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|n| self.get(n, n).re).collect()
    }

    /// Population of `|n⟩`, zero beyond the cutoff.
    pub fn population(&self, n: usize) -> f64 {
        if n < self.dim {
            self.get(n, n).re
        } else {
            0.0
        }
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|n| self.get(n, n)).sum()
    }

    pub fn mean_photon_number(&self) -> f64 {
        (0..self.dim).map(|n| n as f64 * self.get(n, n).re).sum()
    }

    pub fn max_off_diagonal(&self) -> f64 {
        let mut max = 0.0f64;
        for m in 0..self.dim {
            for n in 0..self.dim {
                if m != n {
                    max = max.max(self.get(m, n).norm());
                }
            }
        }
        max
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        (0..self.dim).all(|m| (0..self.dim).all(|n| (self.get(m, n) - self.get(n, m).conj()).norm() <= tol))
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let m = DMatrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j));
        m.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Average over all phase rotations `e^{−iφn̂}ρe^{iφn̂}`: keeps the diagonal.
    pub fn phase_averaged(&self) -> Self {
        let diag = self.diagonal();
        Self::from_fn(self.dim, |m, n| {
            if m == n {
                Complex64::new(diag[m], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    /// Copy truncated or zero-padded to a new cutoff.
    pub fn resized(&self, dim: usize) -> Self {
        Self::from_fn(dim, |m, n| {
            if m < self.dim && n < self.dim {
                self.get(m, n)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    pub fn to_tsv(&self, metadata: &[(&str, String)]) -> String {
        let mut s = String::new();
        s.push_str("# heraldlab density matrix (Fock basis)\n");
        let _ = writeln!(s, "# n_max = {}", self.n_max());
        for (k, v) in metadata {
            let _ = writeln!(s, "# {k} = {v}");
        }
        s.push_str("row\tcol\tre\tim\n");
        for m in 0..self.dim {
            for n in 0..self.dim {
                let z = self.get(m, n);
                let _ = writeln!(s, "{m}\t{n}\t{:.17e}\t{:.17e}", z.re, z.im);
            }
        }
        s
    }

    pub fn from_tsv(text: &str, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Table {
            path: path.display().to_string(),
            reason,
        };
        let mut cells = Vec::new();
        let mut header = false;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !header {
                if line != "row\tcol\tre\tim" {
                    return Err(bad(format!("line {}: expected header `row col re im`", i + 1)));
                }
                header = true;
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(bad(format!("line {}: expected 4 columns", i + 1)));
            }
            let idx = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("line {}: {e}", i + 1)));
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("line {}: {e}", i + 1)));
            cells.push((idx(f[0])?, idx(f[1])?, Complex64::new(num(f[2])?, num(f[3])?)));
        }
        let dim = (cells.len() as f64).sqrt().round() as usize;
        if dim == 0 || dim * dim != cells.len() {
            return Err(bad(format!("{} entries do not form a square matrix", cells.len())));
        }
        let mut entries = vec![None; dim * dim];
        for (m, n, z) in cells {
            if m >= dim || n >= dim {
                return Err(bad(format!("index ({m},{n}) outside {dim}x{dim}")));
            }
            entries[m * dim + n] = Some(z);
        }
        let entries = entries
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("duplicate entries".into()))?;
        Ok(Self { dim, entries })
    }

    pub fn write(&self, path: impl AsRef<Path>, metadata: &[(&str, String)]) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv(metadata)).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text, path)
    }
}

/// Fitted weight of the one-photon component in `η|⟨q|1⟩|² + (1−η)|⟨q|0⟩|²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureFit {
    pub eta: f64,
    pub std_error: f64,
    pub samples: usize,
}

pub const MIN_FIT_SAMPLES: usize = 1000;

/// Maximum-likelihood fit of the vacuum/one-photon mixture to raw
/// quadrature values.
///
/// With `dᵢ = 2qᵢ² − 1` the log-likelihood is `Σ ln(1 + η·dᵢ)` up to a
/// constant, which is concave in η; the maximum on `[0, 1]` is found by
/// bisection on the derivative. The standard error is the inverse square
/// root of the observed Fisher information.
pub fn fit_mixture(quads: &[f64]) -> Result<MixtureFit> {
    if quads.len() < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientStatistics(format!(
            "mixture fit needs at least {MIN_FIT_SAMPLES} samples, got {}",
            quads.len()
        )));
    }
    if quads.iter().any(|q| !q.is_finite()) {
        return Err(Error::FitFailure("non-finite quadrature value".into()));
    }
    let first = quads[0];
    if quads.iter().all(|&q| q == first) {
        return Err(Error::FitFailure("all quadrature values are equal".into()));
    }
    let d: Vec<f64> = quads.iter().map(|q| 2.0 * q * q - 1.0).collect();
    let slope = |eta: f64| d.iter().map(|di| di / (1.0 + eta * di)).sum::<f64>();
    let eta = if slope(0.0) <= 0.0 {
        0.0
    } else if d.iter().all(|&di| di > -1.0) && slope(1.0) >= 0.0 {
        1.0
    } else {
        // the derivative diverges to −∞ at η → 1 when some qᵢ = 0, so the
        // root is strictly inside (0, 1)
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if slope(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 {
                break;
            }
        }
        0.5 * (lo + hi)
    };
    let info: f64 = d.iter().map(|di| (di / (1.0 + eta * di)).powi(2)).sum();
    if !(info > 0.0 && info.is_finite()) {
        return Err(Error::FitFailure(format!("singular Fisher information at η = {eta}")));
    }
    Ok(MixtureFit {
        eta,
        std_error: info.sqrt().recip(),
        samples: quads.len(),
    })
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Photon-number distribution after a beam splitter of transmission `eta`.
pub fn binomial_loss(pops: &[f64], eta: f64) -> Vec<f64> {
    (0..pops.len())
        .map(|n| {
            (n..pops.len())
                .map(|m| binomial(m, n) * eta.powi(n as i32) * (1.0 - eta).powi((m - n) as i32) * pops[m])
                .sum()
        })
        .collect()
}

/// Exact inverse of [`binomial_loss`], solved from the cutoff downwards.
pub fn invert_binomial_loss(measured: &[f64], eta: f64) -> Vec<f64> {
    let len = measured.len();
    let mut truth = vec![0.0; len];
    for n in (0..len).rev() {
        let feed: f64 = ((n + 1)..len)
            .map(|m| binomial(m, n) * eta.powi(n as i32) * (1.0 - eta).powi((m - n) as i32) * truth[m])
            .sum();
        truth[n] = (measured[n] - feed) / eta.powi(n as i32);
    }
    truth
}

/// Largest off-diagonal magnitude for which a state is treated as phase
/// invariant by [`loss_correct`].
pub const PHASE_INVARIANCE_TOL: f64 = 1e-3;
/// Most negative corrected population accepted (then clamped to zero).
pub const UNPHYSICAL_TOL: f64 = 0.01;

/// Undoes detection loss `eta_meas` on the photon-number distribution of a
/// phase-invariant state.
pub fn loss_correct(rho: &DensityMatrix, eta_meas: f64) -> Result<DensityMatrix> {
    if !(eta_meas > 0.0 && eta_meas <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "measurement efficiency must be in (0, 1], got {eta_meas}"
        )));
    }
    let off = rho.max_off_diagonal();
    if off > PHASE_INVARIANCE_TOL {
        return Err(Error::InvalidParameter(format!(
            "loss correction needs a phase-invariant state; largest coherence is {off:.2e} \
             (phase-average the state first)"
        )));
    }
    let mut pops = invert_binomial_loss(&rho.diagonal(), eta_meas);
    if let Some((n, &p)) = pops
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .filter(|(_, p)| **p < -UNPHYSICAL_TOL)
    {
        return Err(Error::Unphysical { n, population: p });
    }
    pops.iter_mut().for_each(|p| *p = p.max(0.0));
    let total: f64 = pops.iter().sum();
    pops.iter_mut().for_each(|p| *p /= total);
    DensityMatrix::from_diagonal(&pops)
}

/// Wigner surface as a tab-separated table.
pub fn wigner_table(grid: &[(f64, f64, f64)]) -> String {
    let mut s = String::with_capacity(grid.len() * 40);
    s.push_str("# heraldlab Wigner function, quadratures in vacuum-variance-1/2 units\n");
    s.push_str("x\tp\tW\n");
    for (x, p, w) in grid {
        let _ = writeln!(s, "{x:.4}\t{p:.4}\t{w:.10e}");
    }
    s
}
