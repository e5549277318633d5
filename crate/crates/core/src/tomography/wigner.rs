//! Wigner function of a Fock-basis density matrix.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::DensityMatrix;

/// Generalized Laguerre polynomials `L_j^{(k)}(x)` for `j = 0..=n`.
fn laguerre_all(n: usize, k: f64, x: f64) -> Vec<f64> {
    let mut l = Vec::with_capacity(n + 1);
    l.push(1.0);
    if n >= 1 {
        l.push(1.0 + k - x);
    }
    for j in 1..n {
        let jf = j as f64;
        let next = ((2.0 * jf + 1.0 + k - x) * l[j] - (jf + k) * l[j - 1]) / (jf + 1.0);
        l.push(next);
    }
    l
}

/// `W(x, p)` with `∫∫W dx dp = 1`.
///
/// Uses the Fock kernels of `|m⟩⟨n|` (m ≥ n):
/// `(−1)ⁿ/π · √(n!/m!) · (2ᾱ)^{m−n} · e^{−r²} · L_n^{(m−n)}(2r²)`
/// with `α = (x + ip)/√2`, `r² = x² + p²`.
pub fn wigner(rho: &DensityMatrix, x: f64, p: f64) -> f64 {
    let d = rho.dim();
    let r2 = x * x + p * p;
    let gauss = (-r2).exp() / PI;
    let base = Complex64::new(x, -p) * std::f64::consts::SQRT_2;
    let mut total = 0.0;
    for k in 0..d {
        let lag = laguerre_all(d - 1 - k, k as f64, 2.0 * r2);
        let mut power = Complex64::new(1.0, 0.0);
        for _ in 0..k {
            power *= base;
        }
        for n in 0..d - k {
            let m = n + k;
            // √(n!/m!) without factorials
            let ratio: f64 = ((n + 1)..=m).map(|j| 1.0 / (j as f64).sqrt()).product();
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            let kernel = power * (sign * ratio * lag[n] * gauss);
            let term = rho.get(m, n) * kernel;
            total += if k == 0 { term.re } else { 2.0 * term.re };
        }
    }
    total
}

/// `W(0, 0) = (1/π)·Σ(−1)ⁿρₙₙ`.
pub fn wigner_origin(rho: &DensityMatrix) -> f64 {
    (0..rho.dim())
        .map(|n| if n % 2 == 0 { 1.0 } else { -1.0 } * rho.get(n, n).re)
        .sum::<f64>()
        / PI
}

/// Square Wigner grid `[-extent, extent]²` with `points` nodes per axis,
/// row-major in `x` then `p`.
pub fn wigner_grid(rho: &DensityMatrix, extent: f64, points: usize) -> Vec<(f64, f64, f64)> {
    let step = 2.0 * extent / (points - 1) as f64;
    let mut out = Vec::with_capacity(points * points);
    for i in 0..points {
        let x = -extent + i as f64 * step;
        for j in 0..points {
            let p = -extent + j as f64 * step;
            out.push((x, p, wigner(rho, x, p)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::fock::fock_wavefunctions;
    use super::*;

    fn coherent(alpha: Complex64, n_max: usize) -> DensityMatrix {
        let mut amp = vec![Complex64::new(0.0, 0.0); n_max + 1];
        amp[0] = Complex64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
        for n in 1..=n_max {
            amp[n] = amp[n - 1] * alpha / (n as f64).sqrt();
        }
        let norm: f64 = amp.iter().map(|a| a.norm_sqr()).sum();
        DensityMatrix::from_fn(n_max + 1, |m, n| amp[m] * amp[n].conj() / norm)
    }

    fn random_state(d: usize) -> DensityMatrix {
        // deterministic mixed state with complex coherences: ρ = A A† / tr
        let a = |m: usize, n: usize| {
            Complex64::new(((m * 7 + n * 3) as f64).sin(), ((m * 5 + n * 11) as f64).cos() * 0.5)
        };
        let raw = DensityMatrix::from_fn(d, |m, n| {
            (0..d).map(|k| a(m, k) * a(n, k).conj()).sum::<Complex64>()
        });
        let tr = raw.trace();
        DensityMatrix::from_fn(d, |m, n| raw.get(m, n) / tr)
    }

    #[test]
    fn vacuum_peak_is_one_over_pi() {
        let vac = DensityMatrix::from_diagonal(&[1.0, 0.0, 0.0]).unwrap();
        assert!((wigner(&vac, 0.0, 0.0) - 1.0 / PI).abs() < 1e-12);
    }

    #[test]
    fn single_photon_mixture_dip() {
        let rho = DensityMatrix::from_diagonal(&[0.39, 0.61]).unwrap();
        assert!((wigner(&rho, 0.0, 0.0) - (-0.0700)).abs() < 5e-5);
    }

    #[test]
    fn coherent_state_is_displaced_gaussian() {
        let alpha = Complex64::new(0.8, -0.5);
        let rho = coherent(alpha, 30);
        let (x0, p0) = (std::f64::consts::SQRT_2 * alpha.re, std::f64::consts::SQRT_2 * alpha.im);
        for &(x, p) in &[(0.0, 0.0), (1.1, -0.7), (-0.5, 0.3), (2.0, 1.0)] {
            let want = (-(x - x0).powi(2) - (p - p0).powi(2)).exp() / PI;
            assert!((wigner(&rho, x, p) - want).abs() < 1e-10, "({x},{p})");
        }
    }

    #[test]
    fn x_marginal_matches_quadrature_density() {
        let rho = random_state(5);
        for &x in &[-1.3, 0.0, 0.4, 1.7] {
            // ∫W dp by Simpson
            let n = 2000;
            let h = 16.0 / n as f64;
            let mut s = 0.0;
            for i in 0..=n {
                let p = -8.0 + i as f64 * h;
                let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                s += w * wigner(&rho, x, p);
            }
            let marginal = s * h / 3.0;
            let psi = fock_wavefunctions(4, x);
            let mut density = Complex64::new(0.0, 0.0);
            for m in 0..5 {
                for k in 0..5 {
                    density += psi[m] * rho.get(m, k) * psi[k];
                }
            }
            assert!((marginal - density.re).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn origin_closed_form_and_normalization() {
        let rho = random_state(6);
        assert!((wigner(&rho, 0.0, 0.0) - wigner_origin(&rho)).abs() < 1e-10);
        let grid = wigner_grid(&rho, 6.0, 241);
        let h = 12.0 / 240.0;
        let total: f64 = grid.iter().map(|g| g.2).sum::<f64>() * h * h;
        assert!((total - 1.0).abs() < 1e-4);
    }
}
