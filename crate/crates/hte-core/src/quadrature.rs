//! Gauss-Hermite quadrature rules.
//!
//! Nodes are the roots of the physicists' Hermite polynomial H_n, found by
//! Newton iteration on the orthonormal recurrence; the rule integrates
//! `f(x) exp(-x^2)` exactly for polynomial `f` of degree up to `2n - 1`.
//! This path shares no code with the basis evaluation in [`crate::hermite`],
//! so it can serve as an independent oracle for integral checks against the
//! probabilists' weight `exp(-x^2/2)`.

use crate::error::{Error, Result};

/// A Gauss-Hermite rule: `\int f(x) e^{-x^2} dx ≈ Σ w_i f(x_i)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Builds an `n`-point rule. Newton iteration from asymptotic root
    /// guesses, largest root first.
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("quadrature order must be >= 1".into()));
        }
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        let m = n.div_ceil(2);
        let mut z = 0.0_f64;
        for i in 0..m {
            // root guesses, Stroud & Secrest style
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            let mut converged = false;
            for _ in 0..100 {
                // orthonormal physicists' recurrence
                let mut p1 = std::f64::consts::PI.powf(-0.25);
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let dz = p1 / pp;
                z -= dz;
                if dz.abs() <= 3e-14 {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::Numeric(format!(
                    "Gauss-Hermite root {i} of {n} did not converge"
                )));
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        if n % 2 == 1 {
            nodes[m - 1] = 0.0;
        }
        Ok(Self { nodes, weights })
    }

    /// Integrates `f` against the probabilists' weight `exp(-x^2/2)` over the
    /// real line, by the change of variables `x = sqrt(2) t`.
    pub fn integrate_halfsquare_weight<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let s = std::f64::consts::SQRT_2;
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(s * t))
            .sum::<f64>()
            * s
    }

    /// Expectation of `f(Z)` for standard normal `Z`.
    pub fn normal_expectation<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.integrate_halfsquare_weight(f) / (2.0 * std::f64::consts::PI).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_sqrt_pi() {
        for n in [3, 8, 21, 64] {
            let rule = GaussHermite::new(n).unwrap();
            let total: f64 = rule.weights.iter().sum();
            assert!(
                (total - std::f64::consts::PI.sqrt()).abs() < 1e-12,
                "n={n}, sum={total}"
            );
        }
    }

    #[test]
    fn gaussian_moments() {
        let rule = GaussHermite::new(64).unwrap();
        // E[Z^2] = 1, E[Z^4] = 3, E[Z^6] = 15 for Z ~ N(0,1)
        assert!((rule.normal_expectation(|z| z * z) - 1.0).abs() < 1e-12);
        assert!((rule.normal_expectation(|z| z.powi(4)) - 3.0).abs() < 1e-12);
        assert!((rule.normal_expectation(|z| z.powi(6)) - 15.0).abs() < 1e-11);
        assert!(rule.normal_expectation(|z| z.powi(3)).abs() < 1e-12);
    }

    #[test]
    fn zero_order_rejected() {
        assert!(GaussHermite::new(0).is_err());
    }
}
