//! Iterative maximum-likelihood reconstruction (RρR algorithm).

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::fock::fock_wavefunctions;
use super::DensityMatrix;
use crate::error::{Error, Result};
use crate::stats::chunked_reduce;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleOptions {
    pub n_max: usize,
    /// Stop once no matrix entry changes by more than this between iterations.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            n_max: 6,
            tol: 1e-9,
            max_iter: 2000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub rho: DensityMatrix,
    pub iterations: usize,
    pub converged: bool,
    /// Largest entry change in the last accepted step.
    pub final_change: f64,
    /// Log-likelihood of each accepted iterate, starting with the initial state.
    pub log_likelihood: Vec<f64>,
    /// Smallest eigenvalue seen at the periodic positivity checks.
    pub min_eigenvalue: f64,
}

const PSD_CHECK_EVERY: usize = 100;
// p(q,θ) floor that keeps the logarithm finite for pathological iterates
const MIN_PROBABILITY: f64 = 1e-300;

struct Projectors {
    dim: usize,
    // row k holds ⟨n|q_k,θ_k⟩ = e^{inθ_k}·ψ_n(q_k)
    coeffs: Vec<Complex64>,
}

impl Projectors {
    fn new(samples: &[(f64, f64)], n_max: usize) -> Self {
        let dim = n_max + 1;
        let mut coeffs = Vec::with_capacity(samples.len() * dim);
        for &(theta, q) in samples {
            let psi = fock_wavefunctions(n_max, q);
            let step = Complex64::from_polar(1.0, theta);
            let mut phase = Complex64::new(1.0, 0.0);
            for v in psi {
                coeffs.push(phase * v);
                phase *= step;
            }
        }
        Self { dim, coeffs }
    }

    fn len(&self) -> usize {
        self.coeffs.len() / self.dim
    }

    /// Σ_k Π_k / p_k (upper triangle filled) and Σ_k ln p_k.
    fn accumulate(&self, rho: &[Complex64]) -> (Vec<Complex64>, f64) {
        let d = self.dim;
        let rows: Vec<&[Complex64]> = self.coeffs.chunks_exact(d).collect();
        let zero = (vec![Complex64::new(0.0, 0.0); d * d], 0.0);
        let (mut r, ll) = chunked_reduce(
            &rows,
            zero.clone(),
            |chunk| {
                let mut r = vec![Complex64::new(0.0, 0.0); d * d];
                let mut ll = 0.0;
                let mut v = vec![Complex64::new(0.0, 0.0); d];
                for c in chunk {
                    for m in 0..d {
                        let row = &rho[m * d..(m + 1) * d];
                        v[m] = row.iter().zip(c.iter()).map(|(a, b)| a * b).sum();
                    }
                    let p = c
                        .iter()
                        .zip(&v)
                        .map(|(a, b)| (a.conj() * b).re)
                        .sum::<f64>()
                        .max(MIN_PROBABILITY);
                    ll += p.ln();
                    let w = 1.0 / p;
                    for m in 0..d {
                        let cm = c[m] * w;
                        for n in m..d {
                            r[m * d + n] += cm * c[n].conj();
                        }
                    }
                }
                (r, ll)
            },
            |(mut a, la), (b, lb)| {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
                (a, la + lb)
            },
        );
        for m in 0..d {
            for n in 0..m {
                r[m * d + n] = r[n * d + m].conj();
            }
        }
        (r, ll)
    }
}

fn matmul(a: &[Complex64], b: &[Complex64], d: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            for j in 0..d {
                out[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    out
}

/// `ρ ← TρT / tr(TρT)` with `T = R/N` (plain RρR) or, for a finite
/// dilution `s`, `T = (I + s·R/N)/(1 + s)`.
fn step(rho: &[Complex64], r: &[Complex64], n: usize, d: usize, dilution: Option<f64>) -> Vec<Complex64> {
    let scale = 1.0 / n as f64;
    let t: Vec<Complex64> = match dilution {
        None => r.iter().map(|x| x * scale).collect(),
        Some(s) => (0..d * d)
            .map(|i| {
                let eye = if i / d == i % d { 1.0 } else { 0.0 };
                (r[i] * (s * scale) + eye) / (1.0 + s)
            })
            .collect(),
    };
    let mut out = matmul(&matmul(&t, rho, d), &t, d);
    hermitize(&mut out, d);
    out
}

/// Symmetrizes and renormalizes to unit trace in place.
fn hermitize(m: &mut [Complex64], d: usize) {
    for i in 0..d {
        for j in i..d {
            let h = 0.5 * (m[i * d + j] + m[j * d + i].conj());
            m[i * d + j] = h;
            m[j * d + i] = h.conj();
        }
    }
    let tr: f64 = (0..d).map(|i| m[i * d + i].re).sum();
    m.iter_mut().for_each(|x| *x /= tr);
}

/// Clips negative eigenvalues to zero and renormalizes.
fn clamp_to_psd(m: &mut [Complex64], d: usize) {
    let mat = DMatrix::from_fn(d, d, |i, j| m[i * d + j]);
    let eig = mat.symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return;
    }
    let clipped = eig.eigenvalues.map(|l| Complex64::new(l.max(0.0), 0.0));
    let v = &eig.eigenvectors;
    let fixed = v * DMatrix::from_diagonal(&clipped) * v.adjoint();
    for i in 0..d {
        for j in 0..d {
            m[i * d + j] = fixed[(i, j)];
        }
    }
    hermitize(m, d);
}

fn max_change(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn frobenius(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// An iterate with its likelihood gradient operator and log-likelihood.
#[derive(Clone)]
struct Point {
    rho: Vec<Complex64>,
    r: Vec<Complex64>,
    ll: f64,
}

struct Solver<'a> {
    proj: &'a Projectors,
    d: usize,
    n: usize,
    evaluations: usize,
    max_evaluations: usize,
}

impl Solver<'_> {
    fn eval(&mut self, rho: Vec<Complex64>) -> Point {
        self.evaluations += 1;
        let (r, ll) = self.proj.accumulate(&rho);
        Point { rho, r, ll }
    }

    fn budget_left(&self) -> bool {
        self.evaluations < self.max_evaluations
    }

    fn not_worse(a: f64, b: f64) -> bool {
        a >= b - 1e-12 * b.abs()
    }

    /// One RρR step that does not lower the likelihood, diluting on failure.
    /// Returns `None` when no ascent is possible or the budget ran out.
    fn ascent_step(&mut self, from: &Point) -> Option<Point> {
        let mut dilution = None;
        loop {
            if !self.budget_left() {
                return None;
            }
            let cand = self.eval(step(&from.rho, &from.r, self.n, self.d, dilution));
            if Self::not_worse(cand.ll, from.ll) {
                return Some(cand);
            }
            let s = dilution.map_or(1.0, |s: f64| 0.5 * s);
            if s < 1e-8 {
                return None;
            }
            dilution = Some(s);
        }
    }

    /// Squared extrapolation from three consecutive iterates; returns the
    /// extrapolated point if it is a valid state at least as likely as `p2`.
    fn extrapolate(&mut self, p0: &Point, p1: &Point, p2: &Point) -> Option<Point> {
        let r: Vec<Complex64> = p1.rho.iter().zip(&p0.rho).map(|(a, b)| a - b).collect();
        let v: Vec<Complex64> = (0..r.len())
            .map(|i| p2.rho[i] - 2.0 * p1.rho[i] + p0.rho[i])
            .collect();
        let (nr, nv) = (frobenius(&r), frobenius(&v));
        if nv == 0.0 || nr == 0.0 {
            return None;
        }
        let mut alpha = -nr / nv;
        while alpha < -1.0 {
            let mut cand: Vec<Complex64> = (0..r.len())
                .map(|i| p0.rho[i] - 2.0 * alpha * r[i] + alpha * alpha * v[i])
                .collect();
            hermitize(&mut cand, self.d);
            clamp_to_psd(&mut cand, self.d);
            if !self.budget_left() {
                return None;
            }
            let p = self.eval(cand);
            if Self::not_worse(p.ll, p2.ll) {
                return Some(p);
            }
            alpha = 0.5 * (alpha - 1.0);
            if alpha > -1.0 - 1e-3 {
                break;
            }
        }
        None
    }
}

/// Reconstructs ρ from `(θ, q)` samples.
///
/// The RρR map is accelerated by squared extrapolation (SQUAREM): two plain
/// steps define a direction and a step length, and the extrapolated state is
/// kept only if it is positive semidefinite and at least as likely as the
/// plain iterate, backtracking towards it otherwise. Plain steps that would
/// lower the likelihood are retried in diluted form. Every accepted iterate
/// therefore has non-decreasing log-likelihood. `iterations` counts
/// likelihood evaluations; running out of them is reported through
/// `converged = false`, not as an error.
pub fn mle_reconstruct(samples: &[(f64, f64)], opts: &MleOptions) -> Result<Reconstruction> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no quadrature samples".into()));
    }
    if opts.n_max < 2 {
        return Err(Error::InvalidParameter(format!(
            "Fock cutoff must be at least 2, got {}",
            opts.n_max
        )));
    }
    if samples.iter().any(|(t, q)| !t.is_finite() || !q.is_finite()) {
        return Err(Error::InvalidParameter("non-finite quadrature sample".into()));
    }
    let d = opts.n_max + 1;
    let proj = Projectors::new(samples, opts.n_max);
    let mut solver = Solver {
        proj: &proj,
        d,
        n: proj.len(),
        evaluations: 0,
        max_evaluations: opts.max_iter,
    };

    let maximally_mixed = (0..d * d)
        .map(|i| Complex64::new(if i / d == i % d { 1.0 / d as f64 } else { 0.0 }, 0.0))
        .collect();
    let mut current = solver.eval(maximally_mixed);
    // the starting point is free; the budget counts update steps
    solver.evaluations = 0;
    let mut history = vec![current.ll];
    let mut converged = false;
    let mut final_change = f64::INFINITY;
    let mut min_eigenvalue = f64::INFINITY;
    let mut next_psd_check = PSD_CHECK_EVERY;

    let accept = |from: &Point, to: Point, history: &mut Vec<f64>| -> (Point, f64) {
        history.push(to.ll);
        (to.clone(), max_change(&to.rho, &from.rho))
    };

    'outer: loop {
        let Some(p1) = solver.ascent_step(&current) else {
            converged = solver.budget_left();
            if converged {
                final_change = 0.0;
            }
            break;
        };
        let (p1, change) = accept(&current, p1, &mut history);
        if change < opts.tol {
            current = p1;
            final_change = change;
            converged = true;
            break;
        }
        let Some(p2) = solver.ascent_step(&p1) else {
            current = p1;
            final_change = change;
            converged = solver.budget_left();
            break;
        };
        let (p2, change) = accept(&p1, p2, &mut history);
        final_change = change;
        if change < opts.tol {
            current = p2;
            converged = true;
            break;
        }
        let next = match solver.extrapolate(&current, &p1, &p2) {
            Some(p) => {
                let (p, c) = accept(&p2, p, &mut history);
                final_change = c;
                p
            }
            None => p2,
        };
        current = next;
        if solver.evaluations >= next_psd_check {
            let e = DensityMatrix::from_row_major(d, current.rho.clone()).min_eigenvalue();
            debug_assert!(e >= -1e-9, "iterate lost positivity: {e}");
            min_eigenvalue = min_eigenvalue.min(e);
            next_psd_check += PSD_CHECK_EVERY;
        }
        if !solver.budget_left() {
            break 'outer;
        }
    }
    let rho = DensityMatrix::from_row_major(d, current.rho);
    min_eigenvalue = min_eigenvalue.min(rho.min_eigenvalue());
    Ok(Reconstruction {
        rho,
        iterations: solver.evaluations,
        converged,
        final_change,
        log_likelihood: history,
        min_eigenvalue,
    })
}

#[cfg(test)]
mod tests {
    use super::super::fock::fock_quadrature_density;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Draws `(θ, q)` from a phase-invariant diagonal state by rejection
    /// against the Fock densities.
    pub(crate) fn sample_diagonal(pops: &[f64], n: usize, seed: u64) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 0.8; // max of |⟨q|n⟩|² for n ≤ 3 is below 0.57
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let q = rng.random::<f64>() * 14.0 - 7.0;
            let density: f64 = pops
                .iter()
                .enumerate()
                .map(|(k, p)| p * fock_quadrature_density(k, q))
                .sum();
            if rng.random::<f64>() * bound < density {
                out.push((rng.random::<f64>() * std::f64::consts::TAU, q));
            }
        }
        out
    }

    #[test]
    fn vacuum_samples_give_vacuum() {
        let samples = sample_diagonal(&[1.0], 5000, 1);
        let rec = mle_reconstruct(&samples, &MleOptions::default()).unwrap();
        assert!(rec.rho.get(0, 0).re >= 0.99);
    }

    #[test]
    fn likelihood_never_decreases_and_state_stays_physical() {
        let samples = sample_diagonal(&[0.4, 0.6], 4000, 2);
        let opts = MleOptions {
            max_iter: 300,
            ..MleOptions::default()
        };
        let rec = mle_reconstruct(&samples, &opts).unwrap();
        for w in rec.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-12 * w[0].abs());
        }
        assert!(rec.rho.is_hermitian(1e-12));
        assert!((rec.rho.trace().re - 1.0).abs() < 1e-10);
        assert!(rec.min_eigenvalue >= -1e-9);
    }

    #[test]
    fn empty_and_bad_inputs() {
        assert!(matches!(
            mle_reconstruct(&[], &MleOptions::default()),
            Err(Error::EmptyInput(_))
        ));
        let opts = MleOptions {
            n_max: 1,
            ..MleOptions::default()
        };
        assert!(mle_reconstruct(&[(0.0, 0.1)], &opts).is_err());
    }

    #[test]
    fn accelerated_fixed_point_matches_plain_iteration() {
        let samples = sample_diagonal(&[0.3, 0.6, 0.1], 3000, 4);
        let opts = MleOptions {
            n_max: 3,
            tol: 1e-11,
            max_iter: 5000,
        };
        let rec = mle_reconstruct(&samples, &opts).unwrap();
        assert!(rec.converged);

        let d = 4;
        let proj = Projectors::new(&samples, 3);
        let mut rho: Vec<Complex64> = (0..d * d)
            .map(|i| Complex64::new(if i / d == i % d { 0.25 } else { 0.0 }, 0.0))
            .collect();
        for _ in 0..20_000 {
            let (r, _) = proj.accumulate(&rho);
            rho = step(&rho, &r, samples.len(), d, None);
        }
        let (_, ll_plain) = proj.accumulate(&rho);
        let ll_fast = *rec.log_likelihood.last().unwrap();
        assert!(ll_fast >= ll_plain - 1e-6, "{ll_fast} < {ll_plain}");
        for m in 0..d {
            assert!((rec.rho.get(m, m).re - rho[m * d + m].re).abs() < 1e-4);
        }
    }

    #[test]
    fn non_convergence_is_a_status() {
        let samples = sample_diagonal(&[0.5, 0.5], 2000, 3);
        let opts = MleOptions {
            max_iter: 3,
            ..MleOptions::default()
        };
        let rec = mle_reconstruct(&samples, &opts).unwrap();
        assert!(!rec.converged);
        assert_eq!(rec.iterations, 3);
    }
}
