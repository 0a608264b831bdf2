//! Standing waves, travelling solitons and the perturbed initial data of the
//! drift experiments.
//!
//! The shifted states are `Φ_ω(x; a)_j = α_j⁻¹ √ω sech(√ω (x + a))`. On a
//! balanced graph they satisfy both vertex conditions exactly for every `a`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::graph::{GraphFunction, StarGraph};
use crate::spectral;

/// Point `(ω, a, θ)` on the standing-wave family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftedStateParams {
    pub omega: f64,
    pub a: f64,
    #[serde(default)]
    pub theta: f64,
}

impl ShiftedStateParams {
    pub fn new(omega: f64, a: f64, theta: f64) -> Self {
        ShiftedStateParams { omega, a, theta }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega.is_finite() && self.omega > 0.0) {
            return invalid(format!("omega must be positive, got {}", self.omega));
        }
        if !self.a.is_finite() || !self.theta.is_finite() {
            return invalid("a and theta must be finite");
        }
        Ok(())
    }
}

pub fn sech(x: f64) -> f64 {
    // 1/cosh overflows gracefully to 0 for large |x|
    1.0 / x.cosh()
}

/// The line profile `Φ_ω(x + a)` (without the `α_j⁻¹` factor) and its
/// derivatives in `ω` and `a`, plus `Q = (x + a) Φ` and its derivatives.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Family {
    pub phi: f64,
    pub phi_w: f64,
    pub phi_a: f64,
    pub phi_ww: f64,
    pub phi_wa: f64,
    pub phi_aa: f64,
    pub q: f64,
    pub q_w: f64,
    pub q_a: f64,
}

impl Family {
    pub fn at(omega: f64, a: f64, x: f64) -> Family {
        let s = omega.sqrt();
        let y = s * (x + a);
        let p = sech(y);
        let t = y.tanh();
        let p1 = -p * t;
        let p2 = p * (1.0 - 2.0 * p * p);
        Family {
            phi: s * p,
            phi_w: (p + y * p1) / (2.0 * s),
            phi_a: s * s * p1,
            phi_ww: (y * p1 + y * y * p2 - p) / (4.0 * s * s * s),
            phi_wa: p1 + 0.5 * y * p2,
            phi_aa: s * s * s * p2,
            q: y * p,
            q_w: (p + y * p1) * y / (2.0 * s * s),
            q_a: s * (p + y * p1),
        }
    }
}

/// Samples `α_j⁻¹ · pick(Family)` on every edge.
pub fn sample_family<F>(g: &StarGraph, omega: f64, a: f64, pick: F) -> GraphFunction
where
    F: Fn(&Family) -> f64,
{
    let alpha = g.alpha();
    g.sample_real(|j, x| pick(&Family::at(omega, a, x)) / alpha[j])
}

fn warn_unbalanced(g: &StarGraph) {
    if !g.is_balanced() {
        log::warn!(
            "sampling a shifted state on an unbalanced graph (residual {:.3e})",
            g.balance_residual()
        );
    }
}

/// `e^{iθ} α_j⁻¹ √ω sech(√ω (x + a))` at every node.
pub fn shifted_state(g: &StarGraph, p: ShiftedStateParams) -> GraphFunction {
    warn_unbalanced(g);
    let phase = Complex64::from_polar(1.0, p.theta);
    let alpha = g.alpha();
    let s = p.omega.sqrt();
    g.sample(|j, x| phase * (s * sech(s * (x + p.a)) / alpha[j]))
}

/// α-symmetric lift of the Galilean-boosted line soliton
/// `sech(x − vt − x₀) exp(i(vx/2 + (1 − v²/4)t))`.
pub fn line_soliton(g: &StarGraph, v: f64, x0: f64, t: f64) -> GraphFunction {
    warn_unbalanced(g);
    let alpha = g.alpha();
    g.sample(|j, x| {
        let amp = sech(x - v * t - x0) / alpha[j];
        Complex64::from_polar(amp, 0.5 * v * x + (1.0 - 0.25 * v * v) * t)
    })
}

/// `Φ(·; a) + ε U_a` with `U_a` the unit-norm eigenfunction of `L₊(1, a)` for
/// the second eigenvalue `λ₁(a)`. Requires `a < a*`.
pub fn eigenfunction_perturbed_state(
    g: &StarGraph,
    a: f64,
    eps: Complex64,
) -> Result<GraphFunction> {
    let base = shifted_state(g, ShiftedStateParams::new(1.0, a, 0.0));
    if eps == Complex64::new(0.0, 0.0) {
        if a >= spectral::A_STAR {
            return Err(crate::Error::EigenvalueMerged { a });
        }
        return Ok(base);
    }
    let (_, u) = spectral::lambda1_eigenpair(g, a)?;
    Ok(base.axpy(eps, &u))
}

/// Phase-modulated half-line data: `e^{μx}` on edge 1, `e^{2μx}` on edge 2,
/// remaining edges unmodified.
pub fn phase_modulated_state(g: &StarGraph, a: f64, mu: Complex64) -> GraphFunction {
    warn_unbalanced(g);
    let worst = g.edge_length() * 2.0 * mu.re.abs();
    if worst > 1e3_f64.ln() {
        log::warn!("phase modulation amplifies the tail by e^{worst:.1} on the truncated edge");
    }
    let alpha = g.alpha();
    g.sample(|j, x| {
        let base = sech(x + a) / alpha[j];
        let factor = match j {
            0 => (mu * x).exp(),
            1 => (mu * 2.0 * x).exp(),
            _ => Complex64::new(1.0, 0.0),
        };
        factor * base
    })
}

/// Unit-norm surrogate for `U_a` beyond `a*`: zero on the incoming edge,
/// `−c x e^{−λx}` on edge 2 and `+c x e^{−λx}` on edge 3.
pub fn surrogate_perturbation(g: &StarGraph, lambda: f64) -> Result<GraphFunction> {
    if !(lambda > 0.0) {
        return invalid(format!("decay rate must be positive, got {lambda}"));
    }
    let raw = g.sample_real(|j, x| match j {
        1 => -x * (-lambda * x).exp(),
        2 => x * (-lambda * x).exp(),
        _ => 0.0,
    });
    let norm = crate::functionals::mass(g, &raw).sqrt();
    Ok(raw.scale(Complex64::new(1.0 / norm, 0.0)))
}

/// `Φ(·; a) + ε · surrogate`.
pub fn surrogate_perturbed_state(
    g: &StarGraph,
    a: f64,
    eps: Complex64,
    lambda: f64,
) -> Result<GraphFunction> {
    let base = shifted_state(g, ShiftedStateParams::new(1.0, a, 0.0));
    Ok(base.axpy(eps, &surrogate_perturbation(g, lambda)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::PmlConfig;
    use approx::assert_relative_eq;

    fn graph() -> StarGraph {
        StarGraph::new(vec![1.0, 2f64.sqrt(), 2f64.sqrt()], 40.0, 0.05, PmlConfig::off()).unwrap()
    }

    #[test]
    fn shifted_state_samples_sech() {
        let g = graph();
        let f = shifted_state(&g, ShiftedStateParams::new(1.0, 0.0, 0.0));
        for j in 0..3 {
            for k in [0, 7, 100] {
                let x = g.x(j, k);
                assert_relative_eq!(f[j][k].re, sech(x) / g.alpha()[j], epsilon = 1e-15);
                assert_eq!(f[j][k].im, 0.0);
            }
        }
        let f = shifted_state(&g, ShiftedStateParams::new(4.0, 0.0, 0.0));
        let v = crate::graph::vertex_value(&f, 1).re * g.alpha()[1];
        assert!((v - 2.0).abs() < 2.0 * 4.0 * 0.05 * 0.05, "{v}");
    }

    #[test]
    fn line_soliton_reduces_to_shifted_state() {
        let g = graph();
        let a = 0.37;
        let f = line_soliton(&g, 0.0, -a, 0.0);
        let h = shifted_state(&g, ShiftedStateParams::new(1.0, a, 0.0));
        assert!((&f - &h).max_abs() < 1e-15);
    }

    fn fd(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-5;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn family_derivatives_match_finite_differences() {
        for &(w, a, x) in &[(1.0, 0.3, -0.7), (1.7, -0.4, 1.3), (0.6, 0.0, 2.1)] {
            let f = Family::at(w, a, x);
            let tol = 1e-7;
            assert!((f.phi_w - fd(|w| Family::at(w, a, x).phi, w)).abs() < tol);
            assert!((f.phi_a - fd(|a| Family::at(w, a, x).phi, a)).abs() < tol);
            assert!((f.phi_ww - fd(|w| Family::at(w, a, x).phi_w, w)).abs() < tol);
            assert!((f.phi_wa - fd(|a| Family::at(w, a, x).phi_w, a)).abs() < tol);
            assert!((f.phi_wa - fd(|w| Family::at(w, a, x).phi_a, w)).abs() < tol);
            assert!((f.phi_aa - fd(|a| Family::at(w, a, x).phi_a, a)).abs() < tol);
            assert!((f.q - (x + a) * f.phi).abs() < 1e-14);
            assert!((f.q_w - fd(|w| Family::at(w, a, x).q, w)).abs() < tol);
            assert!((f.q_a - fd(|a| Family::at(w, a, x).q, a)).abs() < tol);
            // Φ_a is the x-derivative
            let dx = fd(|x| Family::at(w, a, x).phi, x);
            assert!((f.phi_a - dx).abs() < tol);
        }
    }

    #[test]
    fn phase_modulation_zero_is_shifted_state() {
        let g = graph();
        let f = phase_modulated_state(&g, -0.3, Complex64::new(0.0, 0.0));
        let h = shifted_state(&g, ShiftedStateParams::new(1.0, -0.3, 0.0));
        assert!((&f - &h).max_abs() < 1e-15);
    }

    #[test]
    fn surrogate_has_unit_norm() {
        let g = graph();
        let u = surrogate_perturbation(&g, 1.0).unwrap();
        assert_relative_eq!(crate::functionals::mass(&g, &u), 1.0, epsilon = 1e-12);
        assert!(u[0].iter().all(|z| z.norm() == 0.0));
        assert!(u[1][3].re < 0.0 && u[2][3].re > 0.0);
    }
}
