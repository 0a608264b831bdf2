//! Reduced Hamiltonian system for the kernel coordinates of the
//! half-soliton,
//!
//! ```text
//! H₀(γ, β) = ½ Σ M_j β_j² − 2 Σ_{j≥2} R_j γ_j³ − 6 Σ_{j<k} P_k γ_j γ_k²,
//! γ̇_j = β_j,   M_j β̇_j = −∂H₀/∂γ_j,
//! ```
//!
//! integrated by classical RK4.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::modulation::{fmt, TrackRecord};
use crate::spectral::{closed_form, KernelBasis};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub t: f64,
}

impl ReducedState {
    pub fn zeros(dim: usize) -> Self {
        ReducedState {
            gamma: vec![0.0; dim],
            beta: vec![0.0; dim],
            t: 0.0,
        }
    }

    pub fn gamma_norm(&self) -> f64 {
        self.gamma.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn beta_norm(&self) -> f64 {
        self.beta.iter().map(|b| b * b).sum::<f64>().sqrt()
    }

    fn is_finite(&self) -> bool {
        self.gamma.iter().chain(&self.beta).all(|v| v.is_finite())
    }
}

/// `M_j`, `R_j`, `P_j` indexed by `j − 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedCoefficients {
    pub m: Vec<f64>,
    pub r: Vec<f64>,
    pub p: Vec<f64>,
}

impl ReducedCoefficients {
    pub fn closed_form(alpha: &[f64], omega: f64) -> Self {
        let c = closed_form(alpha, omega);
        ReducedCoefficients { m: c.m, r: c.r, p: c.p }
    }

    /// Quadrature values from a kernel basis.
    pub fn from_basis(b: &KernelBasis) -> Self {
        ReducedCoefficients {
            m: b.m.clone(),
            r: b.r.clone(),
            p: b.p.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }
}

/// `H₀(γ, β)` exactly as written (the cubic self term starts at `j = 2`).
pub fn hamiltonian(s: &ReducedState, c: &ReducedCoefficients) -> f64 {
    let n = c.dim();
    let g = &s.gamma;
    let kinetic: f64 = (0..n).map(|j| 0.5 * c.m[j] * s.beta[j].powi(2)).sum();
    let self_cubic: f64 = (1..n).map(|j| c.r[j] * g[j].powi(3)).sum();
    let mut cross = 0.0;
    for j in 0..n {
        for k in j + 1..n {
            cross += c.p[k] * g[j] * g[k] * g[k];
        }
    }
    kinetic - 2.0 * self_cubic - 6.0 * cross
}

/// `β̇_j = −∂H₀/∂γ_j / M_j`.
pub fn acceleration(gamma: &[f64], c: &ReducedCoefficients) -> Vec<f64> {
    let n = c.dim();
    (0..n)
        .map(|j| {
            let own = if j >= 1 { 6.0 * c.r[j] * gamma[j].powi(2) } else { 0.0 };
            let lower: f64 = gamma[..j].iter().sum();
            let upper: f64 = (j + 1..n).map(|k| c.p[k] * gamma[k].powi(2)).sum();
            (own + 12.0 * c.p[j] * gamma[j] * lower + 6.0 * upper) / c.m[j]
        })
        .collect()
}

/// One RK4 step of length `dt`.
pub fn step(s: &ReducedState, c: &ReducedCoefficients, dt: f64) -> ReducedState {
    let n = c.dim();
    let add = |x: &[f64], k: &[f64], h: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + h * b).collect() };
    let k1g = s.beta.clone();
    let k1b = acceleration(&s.gamma, c);
    let g2 = add(&s.gamma, &k1g, 0.5 * dt);
    let b2 = add(&s.beta, &k1b, 0.5 * dt);
    let k2g = b2.clone();
    let k2b = acceleration(&g2, c);
    let g3 = add(&s.gamma, &k2g, 0.5 * dt);
    let b3 = add(&s.beta, &k2b, 0.5 * dt);
    let k3g = b3.clone();
    let k3b = acceleration(&g3, c);
    let g4 = add(&s.gamma, &k3g, dt);
    let b4 = add(&s.beta, &k3b, dt);
    let k4g = b4;
    let k4b = acceleration(&g4, c);
    let comb = |x: &[f64], a: &[f64], b: &[f64], cc: &[f64], d: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| x[i] + dt / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * cc[i] + d[i]))
            .collect()
    };
    ReducedState {
        gamma: comb(&s.gamma, &k1g, &k2g, &k3g, &k4g),
        beta: comb(&s.beta, &k1b, &k2b, &k3b, &k4b),
        t: s.t + dt,
    }
}

/// Size of `‖γ‖` treated as blow-up.
pub const OVERFLOW: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<ReducedState>,
    pub blew_up: bool,
}

/// Integrates to `t_end` (the last step is shortened to land on it).
pub fn integrate(s0: &ReducedState, c: &ReducedCoefficients, t_end: f64, dt: f64) -> Result<Trajectory> {
    if !(dt > 0.0 && dt.is_finite()) {
        return invalid(format!("dt must be positive, got {dt}"));
    }
    if s0.gamma.len() != c.dim() || s0.beta.len() != c.dim() {
        return invalid("state and coefficient dimensions differ");
    }
    let mut states = vec![s0.clone()];
    let mut s = s0.clone();
    let t_stop = s0.t + t_end;
    while s.t < t_stop - 1e-12 * t_stop.abs().max(1.0) {
        let h = dt.min(t_stop - s.t);
        let next = step(&s, c, h);
        if !next.is_finite() || next.gamma_norm() > OVERFLOW {
            return Ok(Trajectory { states, blew_up: true });
        }
        s = next;
        states.push(s.clone());
    }
    Ok(Trajectory { states, blew_up: false })
}

/// Roots of `2M₁P₂C² + M₁R₂C − M₂P₂ = 0`, larger first, with the
/// discriminant `M₁²R₂² + 8M₁M₂P₂²`.
pub fn cusp_constant(c: &ReducedCoefficients) -> Result<((f64, f64), f64)> {
    if c.dim() < 2 {
        return invalid("the cusp reduction needs N ≥ 3");
    }
    let (m1, m2, r2, p2) = (c.m[0], c.m[1], c.r[1], c.p[1]);
    let qa = 2.0 * m1 * p2;
    let qb = m1 * r2;
    let qc = -m2 * p2;
    let disc = m1 * m1 * r2 * r2 + 8.0 * m1 * m2 * p2 * p2;
    let sq = disc.sqrt();
    // numerically stable pair
    let q = -0.5 * (qb + qb.signum().max(0.0).mul_add(2.0, -1.0) * sq);
    let q = if qb == 0.0 { -0.5 * sq } else { q };
    let r1 = q / qa;
    let r2_ = qc / q;
    let (hi, lo) = if r1 >= r2_ { (r1, r2_) } else { (r2_, r1) };
    Ok(((hi, lo), disc))
}

/// Initial point on the invariant subspace `γ₁ = Cγ₂`, `γ_{≥3} = 0`, `β = 0`
/// with `‖γ‖ = delta` and `γ₁ < 0`.
pub fn subspace_state(c: &ReducedCoefficients, cusp: f64, delta: f64) -> ReducedState {
    let mut s = ReducedState::zeros(c.dim());
    let g1 = -delta / (1.0 + 1.0 / (cusp * cusp)).sqrt();
    s.gamma[0] = g1;
    s.gamma[1] = g1 / cusp;
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Escape {
    pub eps: f64,
    pub delta: f64,
    /// First time `‖γ‖ = eps`; NaN when no escape before `t_max`.
    pub t0: f64,
    pub escaped: bool,
    /// `max |β|` over `[0, t0]`.
    pub max_beta: f64,
    /// `max_t |γ₁ − Cγ₂|` over `[0, t0]`.
    pub subspace_defect: f64,
}

/// Time step used by [`escape_time`].
pub const ESCAPE_DT: f64 = 1e-3;

/// Escape time from the `delta`-ball to the `eps`-sphere, starting on the
/// invariant subspace (larger cusp root) with `γ₁(0) < 0`, `β(0) = 0`.
/// The search stops at `t_max = 100 ε^{−1/2}`.
pub fn escape_time(eps: f64, delta: f64, c: &ReducedCoefficients) -> Result<Escape> {
    if !(0.0 < delta && delta < eps) {
        return invalid(format!("need 0 < delta < eps, got delta = {delta}, eps = {eps}"));
    }
    let ((cusp, _), _) = cusp_constant(c)?;
    let t_max = 100.0 / eps.sqrt();
    let mut s = subspace_state(c, cusp, delta);
    let mut max_beta = 0.0_f64;
    let mut defect = 0.0_f64;
    while s.t < t_max {
        let next = step(&s, c, ESCAPE_DT);
        let (n0, n1) = (s.gamma_norm(), next.gamma_norm());
        max_beta = max_beta.max(next.beta_norm());
        defect = defect.max((next.gamma[0] - cusp * next.gamma[1]).abs());
        if n1 >= eps {
            let frac = (eps - n0) / (n1 - n0);
            return Ok(Escape {
                eps,
                delta,
                t0: s.t + frac * ESCAPE_DT,
                escaped: true,
                max_beta,
                subspace_defect: defect,
            });
        }
        s = next;
    }
    Ok(Escape {
        eps,
        delta,
        t0: f64::NAN,
        escaped: false,
        max_beta,
        subspace_defect: defect,
    })
}

/// Escape times over `eps_values` with `delta = delta_of(eps)`.
pub fn scaling_table(
    eps_values: &[f64],
    delta_of: impl Fn(f64) -> f64,
    c: &ReducedCoefficients,
) -> Result<Vec<Escape>> {
    eps_values.iter().map(|&e| escape_time(e, delta_of(e), c)).collect()
}

/// Least-squares slope of `ln t0` against `ln eps`.
pub fn loglog_slope(rows: &[Escape]) -> f64 {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.escaped)
        .map(|r| (r.eps.ln(), r.t0.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

pub fn write_trajectory_csv<W: std::io::Write>(out: W, traj: &Trajectory, c: &ReducedCoefficients) -> Result<()> {
    let n = c.dim();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|j| format!("gamma_{j}")));
    header.extend((1..=n).map(|j| format!("beta_{j}")));
    header.push("H0".into());
    w.write_record(&header)?;
    for s in &traj.states {
        let mut row = vec![fmt(s.t)];
        row.extend(s.gamma.iter().map(|&v| fmt(v)));
        row.extend(s.beta.iter().map(|&v| fmt(v)));
        row.push(fmt(hamiltonian(s, c)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_scaling_csv<W: std::io::Write>(out: W, rows: &[Escape]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["eps", "delta", "t0", "escaped", "max_beta", "max_beta_over_eps_1_5", "subspace_defect"])?;
    for r in rows {
        w.write_record([
            fmt(r.eps),
            fmt(r.delta),
            fmt(r.t0),
            r.escaped.to_string(),
            fmt(r.max_beta),
            fmt(r.max_beta / r.eps.powf(1.5)),
            fmt(r.subspace_defect),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// PDE projections `(c, b)` against the reduced flow started from the first
/// projection. Rows: `(t, max_j |c_j − γ_j|, max_j |b_j − β_j|)`.
pub fn compare_with_track(records: &[TrackRecord], c: &ReducedCoefficients, dt: f64) -> Result<Vec<(f64, f64, f64)>> {
    let first = match records.first() {
        Some(r) if r.c.len() == c.dim() => r,
        _ => return invalid("track has no kernel projections"),
    };
    let mut s = ReducedState {
        gamma: first.c.clone(),
        beta: first.b.clone(),
        t: first.t,
    };
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        while s.t < r.t - 1e-12 {
            let h = dt.min(r.t - s.t);
            s = step(&s, c, h);
        }
        let dg = r.c.iter().zip(&s.gamma).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let db = r.b.iter().zip(&s.beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        out.push((r.t, dg, db));
    }
    Ok(out)
}
