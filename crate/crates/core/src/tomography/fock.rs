//! Fock-state wavefunctions in the quadrature basis.

use std::f64::consts::PI;

/// `⟨q|n⟩` for `n = 0..=n_max`, via the normalized Hermite recurrence
/// `ψₙ₊₁ = √(2/(n+1))·q·ψₙ − √(n/(n+1))·ψₙ₋₁`, which never forms Hₙ or n!
/// and so stays finite for any cutoff.
pub fn fock_wavefunctions(n_max: usize, q: f64) -> Vec<f64> {
    let mut psi = Vec::with_capacity(n_max + 1);
    psi.push(PI.powf(-0.25) * (-0.5 * q * q).exp());
    if n_max >= 1 {
        psi.push(std::f64::consts::SQRT_2 * q * psi[0]);
    }
    for n in 1..n_max {
        let nf = n as f64;
        let next = (2.0 / (nf + 1.0)).sqrt() * q * psi[n] - (nf / (nf + 1.0)).sqrt() * psi[n - 1];
        psi.push(next);
    }
    psi
}

/// `|⟨q|n⟩|²`, the quadrature density of the Fock state `|n⟩`.
pub fn fock_quadrature_density(n: usize, q: f64) -> f64 {
    fock_wavefunctions(n, q)[n].powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrate(f: impl Fn(f64) -> f64) -> f64 {
        // composite Simpson on [-12, 12]; the integrands are Gaussian-damped
        let (a, b, n) = (-12.0, 12.0, 4000);
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    // physicists' Hermite polynomials by the unnormalized recurrence
    fn hermite(n: usize, x: f64) -> f64 {
        let (mut h0, mut h1) = (1.0, 2.0 * x);
        if n == 0 {
            return h0;
        }
        for k in 1..n {
            let h2 = 2.0 * x * h1 - 2.0 * k as f64 * h0;
            h0 = h1;
            h1 = h2;
        }
        h1
    }

    #[test]
    fn closed_forms_for_low_n() {
        for &q in &[-2.0f64, -0.3, 0.0, 0.7, 1.9] {
            let d0 = (-q * q).exp() / PI.sqrt();
            let d1 = 2.0 * q * q * (-q * q).exp() / PI.sqrt();
            assert!((fock_quadrature_density(0, q) - d0).abs() < 1e-14);
            assert!((fock_quadrature_density(1, q) - d1).abs() < 1e-14);
        }
        assert_eq!(fock_quadrature_density(1, 0.0), 0.0);
    }

    #[test]
    fn matches_explicit_hermite_formula() {
        for n in 0..=10 {
            for &q in &[-3.1, -1.0, 0.2, 2.5] {
                let explicit = PI.powf(-0.25) / (2f64.powi(n as i32) * factorial(n)).sqrt()
                    * hermite(n, q)
                    * (-0.5 * q * q).exp();
                let got = fock_wavefunctions(10, q)[n];
                assert!((got - explicit).abs() < 1e-12, "n={n} q={q}");
            }
        }
    }

    #[test]
    fn densities_are_normalized_with_expected_variances() {
        for n in 0..=2 {
            let norm = integrate(|q| fock_quadrature_density(n, q));
            assert!((norm - 1.0).abs() < 1e-8, "n={n}");
            let var = integrate(|q| q * q * fock_quadrature_density(n, q));
            assert!((var - (n as f64 + 0.5)).abs() < 1e-8, "n={n}");
        }
    }

    #[test]
    fn wavefunctions_are_orthonormal() {
        for m in 0..=8 {
            for n in 0..=8 {
                let overlap = integrate(|q| {
                    let psi = fock_wavefunctions(8, q);
                    psi[m] * psi[n]
                });
                let want = if m == n { 1.0 } else { 0.0 };
                assert!((overlap - want).abs() < 1e-8, "({m},{n})");
            }
        }
    }

    #[test]
    fn large_cutoff_and_argument_stay_finite() {
        let psi = fock_wavefunctions(60, 40.0);
        assert!(psi.iter().all(|v| v.is_finite()));
    }
}
