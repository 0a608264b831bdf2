//! Balanced star graphs and fields sampled on their staggered grids.
//!
//! Edge `0` is the incoming edge, parameterized by `x ∈ [-L, 0)`; edges
//! `1..N` are outgoing with `x ∈ (0, L]`. Every edge is sampled at
//! `|x| = (k + 1/2) dx`, `k = 0..M`, so there is no node at the vertex.
//! Samples are stored in the local outward coordinate `r = |x|`, node `0`
//! being the one nearest the vertex.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Relative balance tolerance: `|1/α₁² − Σ 1/α_j²| ≤ BALANCE_TOL / α₁²`.
pub const BALANCE_TOL: f64 = 1e-12;

/// Absorbing layer near a leaf endpoint.
///
/// The layer occupies `r ∈ [L − width, L]`. With the ramp
/// `ρ(r) = ((r − (L − width)) / width)^exponent` the coordinate stretching is
/// `σ(r) = strength · ρ(r)` and an optional imaginary potential
/// `−i · damping · ρ(r)` acts on the same layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PmlConfig {
    pub width: f64,
    pub strength: f64,
    pub exponent: u32,
    /// Peak of the imaginary potential; it removes the slow components a
    /// stretching layer alone lets through.
    #[serde(default)]
    pub damping: f64,
}

impl PmlConfig {
    pub const fn off() -> Self {
        PmlConfig {
            width: 0.0,
            strength: 0.0,
            exponent: 3,
            damping: 0.0,
        }
    }

    pub fn is_active(&self) -> bool {
        self.width > 0.0 && (self.strength > 0.0 || self.damping > 0.0)
    }

    fn ramp(&self, r: f64, edge_length: f64) -> f64 {
        let start = edge_length - self.width;
        if self.width <= 0.0 || r <= start {
            0.0
        } else {
            ((r - start) / self.width).powi(self.exponent as i32)
        }
    }

    /// Absorption `σ` at outward distance `r` on an edge of length `edge_length`.
    pub fn sigma(&self, r: f64, edge_length: f64) -> f64 {
        self.strength * self.ramp(r, edge_length)
    }

    /// Imaginary potential at outward distance `r`.
    pub fn damping_rate(&self, r: f64, edge_length: f64) -> f64 {
        self.damping * self.ramp(r, edge_length)
    }
}

/// Twenty units of quadratic imaginary potential and no stretching: the
/// stretched layer reflects several percent of an incoming soliton, the
/// potential alone about 10⁻³.
impl Default for PmlConfig {
    fn default() -> Self {
        PmlConfig {
            width: 20.0,
            strength: 0.0,
            exponent: 2,
            damping: 0.3,
        }
    }
}

/// A star graph with `N ≥ 3` truncated edges joined at one vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct StarGraph {
    alpha: Vec<f64>,
    edge_length: f64,
    dx: Vec<f64>,
    pml: Vec<PmlConfig>,
    nodes: Vec<usize>,
    balance_residual: f64,
}

impl StarGraph {
    /// Uniform spacing and absorbing layer on every edge.
    pub fn new(alpha: Vec<f64>, edge_length: f64, dx: f64, pml: PmlConfig) -> Result<Self> {
        let n = alpha.len();
        Self::with_spacings(alpha, edge_length, vec![dx; n], vec![pml; n])
    }

    /// Per-edge spacings and layers.
    pub fn with_spacings(
        alpha: Vec<f64>,
        edge_length: f64,
        dx: Vec<f64>,
        pml: Vec<PmlConfig>,
    ) -> Result<Self> {
        let n = alpha.len();
        if n < 3 {
            return invalid(format!("a star graph needs at least 3 edges, got {n}"));
        }
        if dx.len() != n || pml.len() != n {
            return invalid("alpha, dx and pml must have one entry per edge");
        }
        if let Some(a) = alpha.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return invalid(format!("edge weights must be positive, got {a}"));
        }
        if !(edge_length.is_finite() && edge_length > 0.0) {
            return invalid(format!("edge length must be positive, got {edge_length}"));
        }
        let mut nodes = Vec::with_capacity(n);
        for (j, (&h, p)) in dx.iter().zip(&pml).enumerate() {
            if !(h.is_finite() && h > 0.0) {
                return invalid(format!("grid spacing on edge {j} must be positive, got {h}"));
            }
            let cells = edge_length / h;
            let m = cells.round();
            if (cells - m).abs() > 1e-9 * cells.max(1.0) || m < 4.0 {
                return invalid(format!(
                    "dx = {h} must divide L = {edge_length} into at least 4 cells"
                ));
            }
            if p.strength < 0.0 || p.width < 0.0 || p.exponent < 2 {
                return invalid(format!("invalid absorbing layer on edge {j}: {p:?}"));
            }
            if p.is_active() && p.width > edge_length - 4.0 * h {
                return invalid(format!(
                    "absorbing layer width {} must stay clear of the vertex (L = {edge_length})",
                    p.width
                ));
            }
            nodes.push(m as usize);
        }
        let inv1 = alpha[0].powi(-2);
        let rest: f64 = alpha[1..].iter().map(|a| a.powi(-2)).sum();
        let balance_residual = (inv1 - rest).abs() / inv1;
        Ok(StarGraph {
            alpha,
            edge_length,
            dx,
            pml,
            nodes,
            balance_residual,
        })
    }

    pub fn n_edges(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn edge_length(&self) -> f64 {
        self.edge_length
    }

    pub fn dx(&self, edge: usize) -> f64 {
        self.dx[edge]
    }

    pub fn spacings(&self) -> &[f64] {
        &self.dx
    }

    pub fn pml(&self, edge: usize) -> &PmlConfig {
        &self.pml[edge]
    }

    pub fn pmls(&self) -> &[PmlConfig] {
        &self.pml
    }

    /// Number of grid nodes `M_j` on `edge`.
    pub fn nodes(&self, edge: usize) -> usize {
        self.nodes[edge]
    }

    pub fn node_counts(&self) -> &[usize] {
        &self.nodes
    }

    pub fn total_nodes(&self) -> usize {
        self.nodes.iter().sum()
    }

    pub fn balance_residual(&self) -> f64 {
        self.balance_residual
    }

    pub fn is_balanced(&self) -> bool {
        self.balance_residual <= BALANCE_TOL
    }

    /// `-1` on the incoming edge, `+1` on outgoing edges: `x = orientation · r`.
    pub fn orientation(&self, edge: usize) -> f64 {
        if edge == 0 {
            -1.0
        } else {
            1.0
        }
    }

    /// Outward distance `r = |x|` of node `k`.
    pub fn r(&self, edge: usize, k: usize) -> f64 {
        (k as f64 + 0.5) * self.dx[edge]
    }

    /// Signed coordinate `x` of node `k`.
    pub fn x(&self, edge: usize, k: usize) -> f64 {
        self.orientation(edge) * self.r(edge, k)
    }

    /// Signed node coordinates of one edge, ordered from the vertex outward.
    pub fn grid(&self, edge: usize) -> Vec<f64> {
        (0..self.nodes[edge]).map(|k| self.x(edge, k)).collect()
    }

    /// Same graph with the absorbing layers switched off.
    pub fn without_pml(&self) -> StarGraph {
        StarGraph {
            pml: vec![PmlConfig::off(); self.n_edges()],
            ..self.clone()
        }
    }

    /// Same graph with every weight multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<StarGraph> {
        StarGraph::with_spacings(
            self.alpha.iter().map(|a| a * c).collect(),
            self.edge_length,
            self.dx.clone(),
            self.pml.clone(),
        )
    }

    pub fn zeros(&self) -> GraphFunction {
        GraphFunction {
            edges: self.nodes.iter().map(|&m| vec![Complex64::new(0.0, 0.0); m]).collect(),
        }
    }

    /// Samples `f(edge, x)` at every node.
    pub fn sample<F>(&self, mut f: F) -> GraphFunction
    where
        F: FnMut(usize, f64) -> Complex64,
    {
        GraphFunction {
            edges: (0..self.n_edges())
                .map(|j| (0..self.nodes[j]).map(|k| f(j, self.x(j, k))).collect())
                .collect(),
        }
    }

    /// Samples a real-valued `f(edge, x)`.
    pub fn sample_real<F>(&self, mut f: F) -> GraphFunction
    where
        F: FnMut(usize, f64) -> f64,
    {
        self.sample(|j, x| Complex64::new(f(j, x), 0.0))
    }

    /// Whether `f` has exactly the node counts of this graph.
    pub fn fits(&self, f: &GraphFunction) -> bool {
        f.edges.len() == self.n_edges()
            && f.edges.iter().zip(&self.nodes).all(|(e, &m)| e.len() == m)
    }
}

/// Builds a graph; alias of [`StarGraph::new`] with an explicit edge count check.
pub fn make_graph(
    n_edges: usize,
    alpha: &[f64],
    edge_length: f64,
    dx: f64,
    pml: PmlConfig,
) -> Result<StarGraph> {
    if alpha.len() != n_edges {
        return invalid(format!(
            "n_edges = {n_edges} but {} weights were given",
            alpha.len()
        ));
    }
    StarGraph::new(alpha.to_vec(), edge_length, dx, pml)
}

/// Complex field `Ψ = (ψ_1, …, ψ_N)` sampled on a star graph grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphFunction {
    edges: Vec<Vec<Complex64>>,
}

impl GraphFunction {
    pub fn from_edges(edges: Vec<Vec<Complex64>>) -> Self {
        GraphFunction { edges }
    }

    pub fn edges(&self) -> &[Vec<Complex64>] {
        &self.edges
    }

    pub fn edges_mut(&mut self) -> &mut [Vec<Complex64>] {
        &mut self.edges
    }

    pub fn into_edges(self) -> Vec<Vec<Complex64>> {
        self.edges
    }

    pub fn edge(&self, j: usize) -> &[Complex64] {
        &self.edges[j]
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn len(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &Complex64> {
        self.edges.iter().flatten()
    }

    pub fn map<F: Fn(Complex64) -> Complex64>(&self, f: F) -> GraphFunction {
        GraphFunction {
            edges: self
                .edges
                .iter()
                .map(|e| e.iter().map(|&z| f(z)).collect())
                .collect(),
        }
    }

    pub fn conj(&self) -> GraphFunction {
        self.map(|z| z.conj())
    }

    pub fn re(&self) -> GraphFunction {
        self.map(|z| Complex64::new(z.re, 0.0))
    }

    pub fn im(&self) -> GraphFunction {
        self.map(|z| Complex64::new(z.im, 0.0))
    }

    pub fn scale(&self, c: Complex64) -> GraphFunction {
        self.map(|z| z * c)
    }

    /// `self + c · other`.
    pub fn axpy(&self, c: Complex64, other: &GraphFunction) -> GraphFunction {
        let mut out = self.clone();
        for (a, b) in out.edges.iter_mut().zip(&other.edges) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += c * y;
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl Index<usize> for GraphFunction {
    type Output = Vec<Complex64>;
    fn index(&self, j: usize) -> &Vec<Complex64> {
        &self.edges[j]
    }
}

impl IndexMut<usize> for GraphFunction {
    fn index_mut(&mut self, j: usize) -> &mut Vec<Complex64> {
        &mut self.edges[j]
    }
}

fn zip_with(a: &GraphFunction, b: &GraphFunction, f: impl Fn(Complex64, Complex64) -> Complex64) -> GraphFunction {
    assert_eq!(a.edges.len(), b.edges.len(), "edge count mismatch");
    GraphFunction {
        edges: a
            .edges
            .iter()
            .zip(&b.edges)
            .map(|(x, y)| {
                assert_eq!(x.len(), y.len(), "grid mismatch");
                x.iter().zip(y).map(|(&p, &q)| f(p, q)).collect()
            })
            .collect(),
    }
}

impl Add for &GraphFunction {
    type Output = GraphFunction;
    fn add(self, rhs: &GraphFunction) -> GraphFunction {
        zip_with(self, rhs, |a, b| a + b)
    }
}

impl Sub for &GraphFunction {
    type Output = GraphFunction;
    fn sub(self, rhs: &GraphFunction) -> GraphFunction {
        zip_with(self, rhs, |a, b| a - b)
    }
}

impl Mul<f64> for &GraphFunction {
    type Output = GraphFunction;
    fn mul(self, c: f64) -> GraphFunction {
        self.map(|z| z * c)
    }
}

impl Mul<Complex64> for &GraphFunction {
    type Output = GraphFunction;
    fn mul(self, c: Complex64) -> GraphFunction {
        self.map(|z| z * c)
    }
}

impl AddAssign<&GraphFunction> for GraphFunction {
    fn add_assign(&mut self, rhs: &GraphFunction) {
        for (a, b) in self.edges.iter_mut().zip(&rhs.edges) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// Linear extrapolation of `f` on `edge` to the vertex: `(3 f₀ − f₁) / 2`.
pub fn vertex_value(f: &GraphFunction, edge: usize) -> Complex64 {
    let e = f.edge(edge);
    (e[0] * 3.0 - e[1]) * 0.5
}

/// `max_{j,k} |α_j ψ_j(0) − α_k ψ_k(0)|` with vertex values from [`vertex_value`].
pub fn continuity_residual(g: &StarGraph, f: &GraphFunction) -> f64 {
    let weighted: Vec<Complex64> = (0..g.n_edges())
        .map(|j| vertex_value(f, j) * g.alpha()[j])
        .collect();
    let mut worst = 0.0_f64;
    for (i, a) in weighted.iter().enumerate() {
        for b in &weighted[i + 1..] {
            worst = worst.max((a - b).norm());
        }
    }
    worst
}
