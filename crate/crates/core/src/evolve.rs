//! Split-step Crank–Nicolson integrator for `i ψ_t + Δψ + 2α²|ψ|²ψ = 0`.
//!
//! The linear sub-flow is discretized by the ghost-closed Laplacian `Δ_h`.
//! Across the vertex every edge gets one ghost node at `r = −dx/2`; the
//! ghosts are fixed by continuity of `α_j ψ_j(0)` and the Kirchhoff
//! condition, with the vertex value taken as the midpoint of the first node
//! and its ghost. That small system has the closed-form solution
//!
//! ```text
//! V   = α_j ψ_j(0) = Σ_i f_{i,0}/(α_i dx_i) / S,   S = Σ_i 1/(α_i² dx_i)
//! g_j = 2V/α_j − f_{j,0}
//! ```
//!
//! so `Δ_h = T + c bᵀ` where `T` is tridiagonal on each edge and the rank-one
//! term couples the first node of every edge. Crank–Nicolson solves reduce to
//! per-edge Thomas sweeps plus a scalar Schur complement at the vertex.
//!
//! Leaf endpoints are homogeneous Dirichlet at `r = L` (ghost `f_M = −f_{M−1}`),
//! optionally preceded by a perfectly matched layer realized as the complex
//! stretch `d/dr → s(r)⁻¹ d/dr`, `s = 1 + iσ(r)`.

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::functionals::Diagnostics;
use crate::graph::{GraphFunction, StarGraph};
use crate::par::Exec;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Growth factor of `max|Ψ|` over its initial value that counts as blow-up.
pub const BLOWUP_FACTOR: f64 = 1e3;

/// Vertex value `V = α_j ψ_j(0)` implied by the ghost closure.
pub fn vertex_weighted_value(g: &StarGraph, f: &GraphFunction) -> Complex64 {
    let mut s = 0.0;
    let mut num = Complex64::new(0.0, 0.0);
    for j in 0..g.n_edges() {
        let (a, h) = (g.alpha()[j], g.dx(j));
        s += 1.0 / (a * a * h);
        num += f[j][0] / (a * h);
    }
    num / s
}

/// Ghost values `g_j` at `r = −dx_j/2`, one per edge.
pub fn ghost_values(g: &StarGraph, f: &GraphFunction) -> Vec<Complex64> {
    let v = vertex_weighted_value(g, f);
    (0..g.n_edges())
        .map(|j| v * (2.0 / g.alpha()[j]) - f[j][0])
        .collect()
}

/// Tridiagonal part of `Δ_h` on one edge: `lower[k]` multiplies `f_{k−1}`,
/// `upper[k]` multiplies `f_{k+1}`.
#[derive(Clone, Debug)]
struct EdgeStencil {
    lower: Vec<Complex64>,
    diag: Vec<Complex64>,
    upper: Vec<Complex64>,
}

impl EdgeStencil {
    fn build(g: &StarGraph, j: usize) -> EdgeStencil {
        let m = g.nodes(j);
        let h = g.dx(j);
        let l = g.edge_length();
        let pml = g.pml(j);
        let stretch = |r: f64| Complex64::new(1.0, pml.sigma(r, l));
        let inv_h2 = 1.0 / (h * h);
        let mut lower = vec![Complex64::new(0.0, 0.0); m];
        let mut diag = vec![Complex64::new(0.0, 0.0); m];
        let mut upper = vec![Complex64::new(0.0, 0.0); m];
        for k in 0..m {
            let r = g.r(j, k);
            let s = stretch(r);
            let sp = stretch(r + 0.5 * h);
            let sm = stretch(r - 0.5 * h);
            let wp = inv_h2 / (s * sp);
            let wm = inv_h2 / (s * sm);
            if k == 0 {
                // ghost g = 2V/α − f₀: the −f₀ part lands on the diagonal,
                // the V part is the rank-one vertex coupling
                diag[k] = -wp - 2.0 * wm;
            } else if k == m - 1 {
                diag[k] = -2.0 * wp - wm;
                lower[k] = wm;
            } else {
                diag[k] = -wp - wm;
                lower[k] = wm;
            }
            if k + 1 < m {
                upper[k] = wp;
            }
        }
        EdgeStencil { lower, diag, upper }
    }

    fn apply(&self, f: &[Complex64], out: &mut [Complex64]) {
        let m = f.len();
        for k in 0..m {
            let mut acc = self.diag[k] * f[k];
            if k > 0 {
                acc += self.lower[k] * f[k - 1];
            }
            if k + 1 < m {
                acc += self.upper[k] * f[k + 1];
            }
            out[k] = acc;
        }
    }
}

/// LU factors of `I − iτT` on one edge (Thomas algorithm).
#[derive(Clone, Debug)]
struct Thomas {
    lower: Vec<Complex64>,
    inv_pivot: Vec<Complex64>,
    upper_mod: Vec<Complex64>,
}

impl Thomas {
    fn factor(st: &EdgeStencil, tau: f64) -> Result<Thomas> {
        let m = st.diag.len();
        let lower: Vec<Complex64> = st.lower.iter().map(|&l| -I * tau * l).collect();
        let diag: Vec<Complex64> = st.diag.iter().map(|&d| 1.0 - I * tau * d).collect();
        let upper: Vec<Complex64> = st.upper.iter().map(|&u| -I * tau * u).collect();
        let mut inv_pivot = vec![Complex64::new(0.0, 0.0); m];
        let mut upper_mod = vec![Complex64::new(0.0, 0.0); m];
        let mut prev = Complex64::new(0.0, 0.0);
        for k in 0..m {
            let piv = diag[k] - if k > 0 { lower[k] * prev } else { Complex64::new(0.0, 0.0) };
            if piv.norm() < 1e-300 {
                return Err(Error::Singular(format!("zero pivot at node {k}")));
            }
            inv_pivot[k] = 1.0 / piv;
            upper_mod[k] = upper[k] * inv_pivot[k];
            prev = upper_mod[k];
        }
        Ok(Thomas {
            lower,
            inv_pivot,
            upper_mod,
        })
    }

    fn solve(&self, rhs: &mut [Complex64]) {
        let m = rhs.len();
        rhs[0] *= self.inv_pivot[0];
        for k in 1..m {
            rhs[k] = (rhs[k] - self.lower[k] * rhs[k - 1]) * self.inv_pivot[k];
        }
        for k in (0..m - 1).rev() {
            let next = rhs[k + 1];
            rhs[k] -= self.upper_mod[k] * next;
        }
    }
}

/// Nonzero entries `((edge, node), (edge, node), value)` of the real part of
/// `Δ_h`, absorbing layers ignored. Shared with the spectral assembly so both
/// see the same vertex closure.
pub(crate) fn laplacian_entries(g: &StarGraph) -> Vec<((usize, usize), (usize, usize), f64)> {
    let plain = g.without_pml();
    let n = g.n_edges();
    let s: f64 = (0..n).map(|j| 1.0 / (g.alpha()[j].powi(2) * g.dx(j))).sum();
    let mut out = Vec::new();
    for j in 0..n {
        let st = EdgeStencil::build(&plain, j);
        for k in 0..st.diag.len() {
            out.push(((j, k), (j, k), st.diag[k].re));
            if k > 0 {
                out.push(((j, k), (j, k - 1), st.lower[k].re));
            }
            if k + 1 < st.diag.len() {
                out.push(((j, k), (j, k + 1), st.upper[k].re));
            }
        }
        let c = 2.0 / (g.alpha()[j] * g.dx(j).powi(2) * s);
        for i in 0..n {
            let b = 1.0 / (g.alpha()[i] * g.dx(i));
            out.push(((j, 0), (i, 0), c * b));
        }
    }
    out
}

/// Split-step integrator bound to one graph and one time step.
#[derive(Clone, Debug)]
pub struct Stepper {
    graph: StarGraph,
    dt: f64,
    exec: Exec,
    stencils: Vec<EdgeStencil>,
    factors: Vec<Thomas>,
    /// `b_j = 1/(α_j dx_j)`, so that `bᵀf = S·V`.
    b: Vec<f64>,
    /// `c_j = 2/(α_j dx_j² S)`.
    c: Vec<f64>,
    /// `A⁻¹c` with `A = I − iτT`.
    z: Vec<Vec<Complex64>>,
    schur: Complex64,
    /// Per-node `exp(−W dt)` of the imaginary potential; empty when off.
    absorb: Vec<Vec<f64>>,
}

impl Stepper {
    pub fn new(graph: &StarGraph, dt: f64, exec: Exec) -> Result<Stepper> {
        if !(dt.is_finite() && dt > 0.0) {
            return invalid(format!("dt must be positive, got {dt}"));
        }
        let n = graph.n_edges();
        let stencils: Vec<EdgeStencil> = (0..n).map(|j| EdgeStencil::build(graph, j)).collect();
        let s: f64 = (0..n)
            .map(|j| 1.0 / (graph.alpha()[j].powi(2) * graph.dx(j)))
            .sum();
        let b: Vec<f64> = (0..n).map(|j| 1.0 / (graph.alpha()[j] * graph.dx(j))).collect();
        let c: Vec<f64> = (0..n)
            .map(|j| 2.0 / (graph.alpha()[j] * graph.dx(j).powi(2) * s))
            .collect();
        let mut st = Stepper {
            graph: graph.clone(),
            dt,
            exec,
            stencils,
            factors: Vec::new(),
            b,
            c,
            z: Vec::new(),
            schur: Complex64::new(0.0, 0.0),
            absorb: Vec::new(),
        };
        st.refactor()?;
        Ok(st)
    }

    fn tau(&self) -> f64 {
        0.25 * self.dt
    }

    fn refactor(&mut self) -> Result<()> {
        let tau = self.tau();
        let g = &self.graph;
        self.absorb = if g.pmls().iter().any(|p| p.damping > 0.0) {
            (0..g.n_edges())
                .map(|j| {
                    (0..g.nodes(j))
                        .map(|k| (-g.pml(j).damping_rate(g.r(j, k), g.edge_length()) * self.dt).exp())
                        .collect()
                })
                .collect()
        } else {
            Vec::new()
        };
        self.factors = self
            .stencils
            .iter()
            .map(|s| Thomas::factor(s, tau))
            .collect::<Result<_>>()?;
        self.z = (0..self.graph.n_edges())
            .map(|j| {
                let mut col = vec![Complex64::new(0.0, 0.0); self.graph.nodes(j)];
                col[0] = Complex64::new(self.c[j], 0.0);
                self.factors[j].solve(&mut col);
                col
            })
            .collect();
        let btz: Complex64 = (0..self.graph.n_edges()).map(|j| self.z[j][0] * self.b[j]).sum();
        self.schur = 1.0 - I * tau * btz;
        if self.schur.norm() < 1e-14 {
            return Err(Error::Singular("vertex Schur complement vanished".into()));
        }
        Ok(())
    }

    pub fn graph(&self) -> &StarGraph {
        &self.graph
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn set_exec(&mut self, exec: Exec) {
        self.exec = exec;
    }

    /// Changes the time step and refactorizes.
    pub fn set_dt(&mut self, dt: f64) -> Result<()> {
        if !(dt.is_finite() && dt > 0.0) {
            return invalid(format!("dt must be positive, got {dt}"));
        }
        if dt != self.dt {
            self.dt = dt;
            self.refactor()?;
        }
        Ok(())
    }

    fn vertex_dot(&self, f: &GraphFunction) -> Complex64 {
        (0..self.graph.n_edges()).map(|j| f[j][0] * self.b[j]).sum()
    }

    /// `Δ_h f` including the vertex coupling and absorbing layers.
    pub fn laplacian(&self, f: &GraphFunction) -> GraphFunction {
        let mut out = self.graph.zeros();
        let coupling = self.vertex_dot(f);
        let stencils = &self.stencils;
        let c = &self.c;
        self.exec.for_each_mut(out.edges_mut(), |j, e| {
            stencils[j].apply(&f[j], e);
            e[0] += coupling * c[j];
        });
        out
    }

    /// One Crank–Nicolson step of length `dt/2` for `ψ_t = iΔ_hψ`.
    pub fn linear_half_step(&self, f: &GraphFunction) -> GraphFunction {
        let tau = self.tau();
        let coupling = self.vertex_dot(f);
        let stencils = &self.stencils;
        let factors = &self.factors;
        let c = &self.c;
        let mut y = f.clone();
        self.exec.for_each_mut(y.edges_mut(), |j, e| {
            let mut lap = vec![Complex64::new(0.0, 0.0); e.len()];
            stencils[j].apply(&f[j], &mut lap);
            lap[0] += coupling * c[j];
            for (x, l) in e.iter_mut().zip(&lap) {
                *x += I * tau * l;
            }
            factors[j].solve(e);
        });
        let beta = self.vertex_dot(&y) / self.schur;
        let scale = I * tau * beta;
        let z = &self.z;
        self.exec.for_each_mut(y.edges_mut(), |j, e| {
            for (x, zz) in e.iter_mut().zip(&z[j]) {
                *x += scale * zz;
            }
        });
        y
    }

    /// Exact nonlinear sub-flow `f ↦ f exp(2i α_j² |f|² dt)`, times
    /// `exp(−W dt)` inside damping layers.
    pub fn nonlinear_step(&self, f: &GraphFunction) -> GraphFunction {
        let mut out = f.clone();
        let alpha = self.graph.alpha();
        let dt = self.dt;
        let absorb = &self.absorb;
        self.exec.for_each_mut(out.edges_mut(), |j, e| {
            let w = 2.0 * alpha[j] * alpha[j] * dt;
            for z in e.iter_mut() {
                *z *= Complex64::from_polar(1.0, w * z.norm_sqr());
            }
            if let Some(damp) = absorb.get(j) {
                for (z, d) in e.iter_mut().zip(damp) {
                    *z *= d;
                }
            }
        });
        out
    }

    /// `L(dt/2) ∘ N(dt) ∘ L(dt/2)`.
    pub fn strang_step(&self, f: &GraphFunction) -> GraphFunction {
        let half = self.linear_half_step(f);
        let rot = self.nonlinear_step(&half);
        self.linear_half_step(&rot)
    }

    /// Number of steps covering `[0, t_end]`; `t_end` must be a multiple of `dt`.
    pub fn steps_for(&self, t_end: f64) -> Result<usize> {
        if !(t_end.is_finite() && t_end >= 0.0) {
            return invalid(format!("t_end must be non-negative, got {t_end}"));
        }
        let n = (t_end / self.dt).round();
        if (n * self.dt - t_end).abs() > 1e-9 * t_end.max(1.0) {
            return invalid(format!("t_end = {t_end} is not a multiple of dt = {}", self.dt));
        }
        Ok(n as usize)
    }

    /// Integrates to `t_end`, calling `observer` at `t = 0` and every
    /// `output_every` steps. Returns the final state and the diagnostics of
    /// every observed state.
    pub fn run<F>(
        &self,
        f0: &GraphFunction,
        t_end: f64,
        output_every: usize,
        mut observer: F,
    ) -> Result<(GraphFunction, Vec<Diagnostics>)>
    where
        F: FnMut(f64, &GraphFunction, &Diagnostics) -> Result<()>,
    {
        if !self.graph.fits(f0) {
            return invalid("initial state does not match the graph grid");
        }
        if output_every == 0 {
            return invalid("output_every must be at least 1");
        }
        let n = self.steps_for(t_end)?;
        let limit = BLOWUP_FACTOR * f0.max_abs().max(f64::MIN_POSITIVE);
        let mut f = f0.clone();
        let mut rows = Vec::with_capacity(n / output_every + 1);
        let d = Diagnostics::compute(&self.graph, &f, 0.0);
        observer(0.0, &f, &d)?;
        rows.push(d);
        for step in 1..=n {
            let next = self.strang_step(&f);
            let t = step as f64 * self.dt;
            if !next.is_finite() || next.max_abs() > limit {
                return Err(Error::BlowUp {
                    t,
                    last_good: (step - 1) as f64 * self.dt,
                });
            }
            f = next;
            if step % output_every == 0 {
                let d = Diagnostics::compute(&self.graph, &f, t);
                observer(t, &f, &d)?;
                rows.push(d);
            }
        }
        Ok((f, rows))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::{inner, mass};
    use crate::graph::PmlConfig;
    use crate::states::{shifted_state, ShiftedStateParams};
    use proptest::prelude::*;

    fn graph() -> StarGraph {
        StarGraph::new(vec![1.0, 2f64.sqrt(), 2f64.sqrt()], 20.0, 0.05, PmlConfig::off()).unwrap()
    }

    #[test]
    fn ghost_values_of_shifted_state() {
        let g = graph();
        let a = 0.4;
        let f = shifted_state(&g, ShiftedStateParams::new(1.0, a, 0.0));
        let gh = ghost_values(&g, &f);
        for j in 0..3 {
            // ghost sits at r = −dx/2, i.e. x = +dx/2 on edge 1 and −dx/2 on the rest
            let x = -g.orientation(j) * 0.025;
            let exact = crate::states::sech(x + a) / g.alpha()[j];
            assert!((gh[j].re - exact).abs() < 0.05 * 0.05, "edge {j}");
        }
        assert!(ghost_values(&g, &g.zeros()).iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn laplacian_is_self_adjoint() {
        let g = StarGraph::with_spacings(
            vec![1.0, 2f64.sqrt(), 2f64.sqrt()],
            4.0,
            vec![0.1, 0.05, 0.2],
            vec![PmlConfig::off(); 3],
        )
        .unwrap();
        let st = Stepper::new(&g, 0.01, Exec::Sequential).unwrap();
        let f = g.sample(|j, x| Complex64::new((x * (j + 1) as f64).sin(), x.cos() * 0.3));
        let h = g.sample(|j, x| Complex64::new((-x * x).exp(), (j as f64) * x));
        let lhs = inner(&g, &st.laplacian(&f), &h);
        let rhs = inner(&g, &f, &st.laplacian(&h));
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0), "{lhs} {rhs}");
        let q = inner(&g, &f, &st.laplacian(&f));
        assert!((q + crate::functionals::gradient_energy(&g, &f)).abs() < 1e-9 * q.abs());
    }

    #[test]
    fn half_step_is_unitary_without_pml() {
        let g = graph();
        let st = Stepper::new(&g, 0.01, Exec::Parallel).unwrap();
        let f = g.sample(|j, x| Complex64::from_polar((-(x - 1.0).powi(2)).exp(), j as f64 + x));
        let out = st.linear_half_step(&f);
        assert!((mass(&g, &out) - mass(&g, &f)).abs() < 1e-12 * mass(&g, &f));
        assert!(st.linear_half_step(&g.zeros()).max_abs() == 0.0);
    }

    #[test]
    fn half_step_solves_the_cn_system() {
        let g = graph();
        let st = Stepper::new(&g, 0.02, Exec::Sequential).unwrap();
        let f = g.sample(|j, x| Complex64::from_polar(1.0 / (x + 0.3 * j as f64).cosh(), 0.2 * x));
        let x = st.linear_half_step(&f);
        let tau = 0.005;
        let lhs = x.axpy(-I * tau, &st.laplacian(&x));
        let rhs = f.axpy(I * tau, &st.laplacian(&f));
        assert!((&lhs - &rhs).max_abs() < 1e-11);
    }

    #[test]
    fn nonlinear_step_is_a_phase_rotation() {
        let g = graph();
        let st = Stepper::new(&g, 0.01, Exec::Sequential).unwrap();
        let c = Complex64::new(0.6, -0.2);
        let f = g.sample(|_, _| c);
        let out = st.nonlinear_step(&f);
        for j in 0..3 {
            let expected = c * Complex64::from_polar(1.0, 2.0 * g.alpha()[j].powi(2) * c.norm_sqr() * 0.01);
            assert!((out[j][5] - expected).norm() < 1e-15);
            assert!((out[j][5].norm() - c.norm()).abs() < 1e-15);
        }
    }

    #[test]
    fn plane_wave_phase_advance() {
        // an interior plane wave e^{ikx} on a long edge picks up the CN phase
        // of the discrete symbol −(4/dx²) sin²(k dx/2)
        let g = StarGraph::new(vec![1.0, 2f64.sqrt(), 2f64.sqrt()], 40.0, 0.05, PmlConfig::off()).unwrap();
        let dt = 0.01;
        let st = Stepper::new(&g, dt, Exec::Sequential).unwrap();
        let k = 2.0;
        let env = |x: f64| (-(x - 20.0).powi(2) / 100.0).exp();
        let f = g.sample(|j, x| if j == 1 { Complex64::from_polar(env(x), k * x) } else { Complex64::new(0.0, 0.0) });
        let out = st.linear_half_step(&f);
        let kk = 20.0 / 0.05 - 0.5;
        let node = kk as usize;
        let ratio = out[1][node] / f[1][node];
        let exact = -k * k * dt / 2.0;
        assert!((ratio.arg() - exact).abs() < 1e-4 * dt + 0.05 * 0.05 * dt * k.powi(4), "{} {}", ratio.arg(), exact);
    }

    #[test]
    fn time_reversal() {
        let g = graph();
        let st = Stepper::new(&g, 0.01, Exec::Sequential).unwrap();
        let f = shifted_state(&g, ShiftedStateParams::new(1.0, 0.5, 0.0))
            .map(|z| z * Complex64::from_polar(1.0, 0.1 * z.re));
        let fwd = st.strang_step(&f);
        let back = st.strang_step(&fwd.conj());
        assert!((&back - &f.conj()).max_abs() < 1e-12);
    }

    #[test]
    fn exec_modes_agree() {
        let g = graph();
        let seq = Stepper::new(&g, 0.01, Exec::Sequential).unwrap();
        let par = Stepper::new(&g, 0.01, Exec::Parallel).unwrap();
        let f = shifted_state(&g, ShiftedStateParams::new(1.0, 0.3, 0.0));
        let a = seq.strang_step(&f);
        let b = par.strang_step(&f);
        assert!((&a - &b).max_abs() == 0.0);
    }

    #[test]
    fn run_row_count_and_validation() {
        let g = graph();
        let st = Stepper::new(&g, 0.01, Exec::Sequential).unwrap();
        let f = shifted_state(&g, ShiftedStateParams::new(1.0, 0.0, 0.0));
        let (_, rows) = st.run(&f, 0.5, 7, |_, _, _| Ok(())).unwrap();
        assert_eq!(rows.len(), 1 + 50 / 7);
        assert!(st.run(&f, 0.505, 1, |_, _, _| Ok(())).is_err());
        assert!(Stepper::new(&g, 0.0, Exec::Sequential).is_err());
    }

    #[test]
    fn blow_up_is_reported() {
        let g = graph();
        let st = Stepper::new(&g, 0.01, Exec::Sequential).unwrap();
        let mut f = g.zeros();
        f[1][3] = Complex64::new(1e-300, 0.0);
        f[2][3] = Complex64::new(f64::NAN, 0.0);
        match st.run(&f, 0.05, 1, |_, _, _| Ok(())) {
            Err(Error::BlowUp { last_good, .. }) => assert_eq!(last_good, 0.0),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn symmetric_data_stay_symmetric(a in -1.0f64..1.0, v in -1.0f64..1.0) {
            let g = StarGraph::new(vec![1.0, 3f64.sqrt(), 3f64.sqrt(), 3f64.sqrt()], 10.0, 0.1, PmlConfig::off()).unwrap();
            let st = Stepper::new(&g, 0.01, Exec::Sequential).unwrap();
            let mut f = crate::states::line_soliton(&g, v, -a, 0.0);
            for _ in 0..20 {
                f = st.strang_step(&f);
            }
            let al = g.alpha();
            for k in 0..g.nodes(1) {
                let u1 = f[1][k] * al[1];
                for j in 2..4 {
                    prop_assert!((f[j][k] * al[j] - u1).norm() < 1e-12);
                }
            }
        }
    }
}
