//! Modulation parameters `(θ, ω, a)` of a field near the shifted-state
//! family, from the symplectic orthogonality conditions
//!
//! ```text
//! ⟨W, ∂_ωΦ_ω⟩ = 0,   ⟨U, Φ_ω⟩ = 0,   ⟨U, (x + a)Φ_ω⟩ = 0,
//! U = Re(e^{−iθ}Ψ) − Φ_ω(·; a),   W = Im(e^{−iθ}Ψ).
//! ```
//!
//! The system is solved by damped Newton iteration with the exact Jacobian.
//! In half-soliton mode `a = 0` is fixed and only the first two conditions
//! are imposed; the remainder is then further projected on the kernel basis.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::functionals::{gradient_energy, inner, mass};
use crate::graph::{GraphFunction, StarGraph};
use crate::spectral::closed_form;
use crate::states::{sample_family, Family, ShiftedStateParams};

pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulationFit {
    pub theta: f64,
    pub omega: f64,
    pub a: f64,
    /// Discrete `H¹` norm of `U + iW`.
    pub remainder_norm: f64,
    /// `max |G|` at the returned parameters.
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Field-independent pieces of the decomposition at one `(ω, a)`.
struct Profiles {
    phi: GraphFunction,
    phi_w: GraphFunction,
    phi_a: GraphFunction,
    phi_ww: GraphFunction,
    phi_wa: GraphFunction,
    q: GraphFunction,
    q_w: GraphFunction,
    q_a: GraphFunction,
}

impl Profiles {
    fn new(g: &StarGraph, omega: f64, a: f64) -> Profiles {
        let pick = |p: fn(&Family) -> f64| sample_family(g, omega, a, p);
        Profiles {
            phi: pick(|f| f.phi),
            phi_w: pick(|f| f.phi_w),
            phi_a: pick(|f| f.phi_a),
            phi_ww: pick(|f| f.phi_ww),
            phi_wa: pick(|f| f.phi_wa),
            q: pick(|f| f.q),
            q_w: pick(|f| f.q_w),
            q_a: pick(|f| f.q_a),
        }
    }
}

/// Real and imaginary parts of `e^{−iθ}Ψ` as real-valued fields.
fn rotate(f: &GraphFunction, theta: f64) -> (GraphFunction, GraphFunction) {
    let z = f.scale(Complex64::from_polar(1.0, -theta));
    (z.re(), z.im())
}

/// `G(θ, ω, a; Ψ)` and its Jacobian with columns `(θ, ω, a)`.
fn system(g: &StarGraph, f: &GraphFunction, x: [f64; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let [theta, omega, a] = x;
    let p = Profiles::new(g, omega, a);
    let (re, im) = rotate(f, theta);
    let u = &re - &p.phi;
    let ip = |x: &GraphFunction, y: &GraphFunction| inner(g, x, y);
    let gv = [ip(&im, &p.phi_w), ip(&u, &p.phi), ip(&u, &p.q)];
    let jac = [
        [-ip(&re, &p.phi_w), ip(&im, &p.phi_ww), ip(&im, &p.phi_wa)],
        [
            ip(&im, &p.phi),
            ip(&u, &p.phi_w) - ip(&p.phi_w, &p.phi),
            ip(&u, &p.phi_a) - ip(&p.phi_a, &p.phi),
        ],
        [
            ip(&im, &p.q),
            ip(&u, &p.q_w) - ip(&p.phi_w, &p.q),
            ip(&u, &p.q_a) - ip(&p.phi_a, &p.q),
        ],
    ];
    (gv, jac)
}

fn solve3(m: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    let scale: f64 = m.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
    if !(d.abs() > 1e-14 * scale.powi(3)) {
        return None;
    }
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut mc = m;
        for r in 0..3 {
            mc[r][c] = b[r];
        }
        *o = det(&mc) / d;
    }
    Some(out)
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// `U + iW = e^{−iθ}Ψ − Φ_ω(·; a)`.
pub fn remainder(g: &StarGraph, f: &GraphFunction, p: ShiftedStateParams) -> GraphFunction {
    let z = f.scale(Complex64::from_polar(1.0, -p.theta));
    let phi = sample_family(g, p.omega, p.a, |s| s.phi);
    &z - &phi
}

fn h1_norm(g: &StarGraph, f: &GraphFunction) -> f64 {
    (mass(g, f) + gradient_energy(g, f).max(0.0)).sqrt()
}

/// Solves the orthogonality system starting from `guess`. With
/// `fix_shift = true` the shift is held at `guess.a` and only the first two
/// conditions are imposed.
pub fn decompose_with(
    g: &StarGraph,
    f: &GraphFunction,
    guess: ShiftedStateParams,
    fix_shift: bool,
) -> ModulationFit {
    let dims = if fix_shift { 2 } else { 3 };
    let mut x = [guess.theta, guess.omega, guess.a];
    let eval = |x: [f64; 3]| {
        let (mut gv, jac) = system(g, f, x);
        if fix_shift {
            gv[2] = 0.0;
        }
        (gv, jac)
    };
    let (mut gv, mut jac) = eval(x);
    let mut iterations = 0;
    let mut ok = x[1] > 0.0;
    while ok && norm_inf(&gv) > NEWTON_TOL && iterations < NEWTON_MAX_ITER {
        iterations += 1;
        let rhs = [-gv[0], -gv[1], -gv[2]];
        let step = if fix_shift {
            let m = [[jac[0][0], jac[0][1], 0.0], [jac[1][0], jac[1][1], 0.0], [0.0, 0.0, 1.0]];
            solve3(m, [rhs[0], rhs[1], 0.0])
        } else {
            solve3(jac, rhs)
        };
        // far from the orbit the Jacobian may be singular: fall back to its
        // value on the orbit, diag(D₁, D₁, D₂)
        let step = step.unwrap_or_else(|| {
            let c = closed_form(g.alpha(), x[1].max(1e-3));
            [rhs[0] / c.d1, rhs[1] / c.d1, if fix_shift { 0.0 } else { rhs[2] / c.d2 }]
        });
        let before = norm_inf(&gv[..dims]);
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let trial = [x[0] + lambda * step[0], x[1] + lambda * step[1], x[2] + lambda * step[2]];
            if trial[1] > 0.0 && trial.iter().all(|v| v.is_finite()) {
                let (tg, tj) = eval(trial);
                if norm_inf(&tg[..dims]) < before || lambda < 1e-3 {
                    x = trial;
                    gv = tg;
                    jac = tj;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            ok = false;
        }
    }
    let residual = norm_inf(&gv[..dims]);
    let valid = x.iter().all(|v| v.is_finite()) && x[1] > 0.0;
    let (remainder_norm, relative) = if valid {
        let p = ShiftedStateParams {
            theta: x[0],
            omega: x[1],
            a: x[2],
        };
        let r = remainder(g, f, p);
        let phi_norm = (2.0 * x[1].sqrt()).sqrt() / g.alpha()[0];
        (h1_norm(g, &r), mass(g, &r).sqrt() / phi_norm)
    } else {
        (f64::NAN, f64::INFINITY)
    };
    ModulationFit {
        theta: x[0],
        omega: x[1],
        a: x[2],
        remainder_norm,
        residual,
        converged: ok && valid && residual <= NEWTON_TOL && relative < 1.0,
        iterations,
    }
}

/// Full three-parameter decomposition.
pub fn decompose(g: &StarGraph, f: &GraphFunction, guess: ShiftedStateParams) -> ModulationFit {
    decompose_with(g, f, guess, false)
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(x: f64) -> f64 {
    let y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y - 2.0 * PI
    } else {
        y
    }
}

/// Coefficients `c_j = ⟨U, W⁽ʲ⁾⟩/M_j` and `b_j = ⟨W, U⁽ʲ⁾⟩/M_j` of the
/// remainder on the kernel basis at frequency `omega` (half-soliton, `a = 0`).
pub fn kernel_projections(
    g: &StarGraph,
    f: &GraphFunction,
    theta: f64,
    omega: f64,
) -> (Vec<f64>, Vec<f64>) {
    let basis = match crate::spectral::kernel_basis(g, omega) {
        Ok(b) => b,
        Err(_) => return (Vec::new(), Vec::new()),
    };
    let r = remainder(g, f, ShiftedStateParams::new(omega, 0.0, theta));
    let (u, w) = (r.re(), r.im());
    let c = (0..basis.u.len())
        .map(|j| inner(g, &u, &basis.w[j]) / basis.exact.m[j])
        .collect();
    let b = (0..basis.u.len())
        .map(|j| inner(g, &w, &basis.u[j]) / basis.exact.m[j])
        .collect();
    (c, b)
}

/// One row of a modulation track.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub t: f64,
    pub theta: f64,
    pub omega: f64,
    pub a: f64,
    pub remainder_norm: f64,
    pub residual: f64,
    pub converged: bool,
    pub a_dot_fit: f64,
    pub a_dot_pred: f64,
    pub c: Vec<f64>,
    pub b: Vec<f64>,
}

/// Streaming tracker: feeds snapshots in time order, warm-starting each fit
/// from the previous one. Stops accepting snapshots after the first
/// non-converged fit.
#[derive(Clone, Debug)]
pub struct Tracker {
    graph: StarGraph,
    half_soliton: bool,
    guess: ShiftedStateParams,
    unwrapped: Option<f64>,
    records: Vec<TrackRecord>,
    stopped: bool,
}

impl Tracker {
    pub fn new(g: &StarGraph, initial: ShiftedStateParams, half_soliton: bool) -> Tracker {
        Tracker {
            graph: g.clone(),
            half_soliton,
            guess: ShiftedStateParams {
                a: if half_soliton { 0.0 } else { initial.a },
                ..initial
            },
            unwrapped: None,
            records: Vec::new(),
            stopped: false,
        }
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped
    }

    pub fn records(&self) -> &[TrackRecord] {
        &self.records
    }

    /// Fits one snapshot. Returns `false` once the track has been truncated.
    pub fn push(&mut self, t: f64, f: &GraphFunction, momentum: f64) -> bool {
        if self.stopped {
            return false;
        }
        // predict the phase from the previous rate so the Newton start stays
        // in the basin between coarse snapshots
        let mut guess = self.guess;
        if let (Some(prev), Some(last)) = (self.records.len().checked_sub(2), self.records.last()) {
            let p = &self.records[prev];
            let dt = last.t - p.t;
            if dt > 0.0 {
                let rate = (last.theta - p.theta) / dt;
                guess.theta = last.theta + rate * (t - last.t);
            }
        } else if let Some(last) = self.records.last() {
            guess.theta = last.theta + last.omega * (t - last.t);
        }
        let fit = decompose_with(&self.graph, f, guess, self.half_soliton);
        if !fit.converged {
            self.stopped = true;
            return false;
        }
        let theta = match self.unwrapped {
            None => fit.theta,
            Some(prev) => prev + wrap_angle(fit.theta - prev),
        };
        self.unwrapped = Some(theta);
        self.guess = ShiftedStateParams::new(fit.omega, fit.a, theta);
        let (c, b) = if self.half_soliton {
            kernel_projections(&self.graph, f, fit.theta, fit.omega)
        } else {
            (Vec::new(), Vec::new())
        };
        let a1 = self.graph.alpha()[0].powi(2);
        self.records.push(TrackRecord {
            t,
            theta,
            omega: fit.omega,
            a: fit.a,
            remainder_norm: fit.remainder_norm,
            residual: fit.residual,
            converged: true,
            a_dot_fit: f64::NAN,
            a_dot_pred: -a1 * momentum / fit.omega.sqrt(),
            c,
            b,
        });
        true
    }

    /// Fills `a_dot_fit` by centered differences (one-sided at the ends).
    pub fn finish(mut self) -> Vec<TrackRecord> {
        let n = self.records.len();
        if n >= 2 {
            for i in 0..n {
                let (l, r) = match i {
                    0 => (0, 1),
                    _ if i == n - 1 => (n - 2, n - 1),
                    _ => (i - 1, i + 1),
                };
                let (rl, rr) = (&self.records[l], &self.records[r]);
                self.records[i].a_dot_fit = (rr.a - rl.a) / (rr.t - rl.t);
            }
        }
        self.records
    }
}

/// Tracks a sequence of `(t, Ψ(t), P(t))` snapshots.
pub fn track<'a, I>(
    g: &StarGraph,
    snapshots: I,
    initial: ShiftedStateParams,
    half_soliton: bool,
) -> Vec<TrackRecord>
where
    I: IntoIterator<Item = (f64, &'a GraphFunction, f64)>,
{
    let mut tracker = Tracker::new(g, initial, half_soliton);
    for (t, f, p) in snapshots {
        if !tracker.push(t, f, p) {
            break;
        }
    }
    tracker.finish()
}

/// Writes a track as CSV; `c_j`, `b_j` columns appear only when present.
pub fn write_track_csv<W: std::io::Write>(out: W, records: &[TrackRecord], n_coeffs: usize) -> crate::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = [
        "t", "theta", "omega", "a", "remainder_norm", "residual", "converged", "a_dot_fit", "a_dot_pred",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for j in 1..=n_coeffs {
        header.push(format!("c_{j}"));
    }
    for j in 1..=n_coeffs {
        header.push(format!("b_{j}"));
    }
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            fmt(r.t),
            fmt(r.theta),
            fmt(r.omega),
            fmt(r.a),
            fmt(r.remainder_norm),
            fmt(r.residual),
            r.converged.to_string(),
            fmt(r.a_dot_fit),
            fmt(r.a_dot_pred),
        ];
        for j in 0..n_coeffs {
            row.push(fmt(r.c.get(j).copied().unwrap_or(f64::NAN)));
        }
        for j in 0..n_coeffs {
            row.push(fmt(r.b.get(j).copied().unwrap_or(f64::NAN)));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn fmt(x: f64) -> String {
    format!("{x:.12e}")
}
