//! Symmetric banded eigenvalue solver: Sturm counts from banded LDLᵀ,
//! bisection for eigenvalues and inverse iteration for eigenvectors.

/// Lower band of a symmetric matrix: `band[i * (bw + 1) + d] = A[i][i − d]`.
#[derive(Clone, Debug)]
pub struct SymBand {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl SymBand {
    pub fn zeros(n: usize, bw: usize) -> Self {
        SymBand {
            n,
            bw,
            band: vec![0.0; n * (bw + 1)],
        }
    }

    #[cfg(test)]
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    /// Entry `(i, j)`; zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let d = hi - lo;
        if d > self.bw {
            0.0
        } else {
            self.band[hi * (self.bw + 1) + d]
        }
    }

    /// Sets `(i, j)` and `(j, i)`.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let d = hi - lo;
        assert!(d <= self.bw, "entry ({i}, {j}) outside bandwidth {}", self.bw);
        self.band[hi * (self.bw + 1) + d] = v;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            y[i] += self.band[i * (self.bw + 1)] * x[i];
            for d in 1..=self.bw.min(i) {
                let a = self.band[i * (self.bw + 1) + d];
                y[i] += a * x[i - d];
                y[i - d] += a * x[i];
            }
        }
        y
    }

    /// Gershgorin interval containing the whole spectrum.
    pub fn gershgorin(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.n {
            let lo_j = i.saturating_sub(self.bw);
            let hi_j = (i + self.bw).min(self.n - 1);
            let r: f64 = (lo_j..=hi_j).filter(|&j| j != i).map(|j| self.get(i, j).abs()).sum();
            let d = self.get(i, i);
            lo = lo.min(d - r);
            hi = hi.max(d + r);
        }
        (lo, hi)
    }

    /// Number of eigenvalues strictly below `sigma`, from the inertia of
    /// `A − σI = L D Lᵀ`.
    pub fn count_below(&self, sigma: f64) -> usize {
        let w = self.bw + 1;
        let n = self.n;
        // l[i * w + d] = L[i][i − d] for d ≥ 1; dvals[i] = D[i]
        let mut l = vec![0.0; n * w];
        let mut dvals = vec![0.0; n];
        let (glo, ghi) = self.gershgorin();
        let scale = glo.abs().max(ghi.abs()).max(1.0);
        let tiny = f64::EPSILON * scale;
        let mut negatives = 0;
        for i in 0..n {
            let start = i.saturating_sub(self.bw);
            for j in start..i {
                // L[i][j] D[j] = A[i][j] − Σ_{k<j} L[i][k] D[k] L[j][k]
                let mut s = self.get(i, j);
                let kstart = start.max(j.saturating_sub(self.bw));
                for k in kstart..j {
                    s -= l[i * w + (i - k)] * dvals[k] * l[j * w + (j - k)];
                }
                l[i * w + (i - j)] = s / dvals[j];
            }
            let mut d = self.get(i, i) - sigma;
            for k in start..i {
                let lik = l[i * w + (i - k)];
                d -= lik * lik * dvals[k];
            }
            if d.abs() < tiny {
                d = -tiny;
            }
            if d < 0.0 {
                negatives += 1;
            }
            dvals[i] = d;
        }
        negatives
    }

    /// Eigenvalue with 0-based index `idx` in ascending order.
    pub fn eigenvalue(&self, idx: usize, tol: f64) -> f64 {
        let (mut lo, mut hi) = self.gershgorin();
        lo -= 1e-9 * (1.0 + lo.abs());
        hi += 1e-9 * (1.0 + hi.abs());
        // invariant: count_below(lo) ≤ idx < count_below(hi)
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if hi - lo <= tol * (1.0 + mid.abs()) || mid == lo || mid == hi {
                break;
            }
            if self.count_below(mid) > idx {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Inverse iteration for the eigenvalue `lambda`, orthogonalized against
    /// `against` (unit vectors of the same cluster). Returns a unit vector and
    /// the residual `‖Ax − λx‖`.
    pub fn inverse_iteration(&self, lambda: f64, against: &[Vec<f64>], seed: u64) -> (Vec<f64>, f64) {
        let (glo, ghi) = self.gershgorin();
        let scale = glo.abs().max(ghi.abs()).max(1.0);
        let shift = lambda + 1e-10 * scale;
        let lu = BandLu::factor(self, shift);
        let mut x = pseudo_random(self.n, seed);
        orthonormalize(&mut x, against);
        let mut residual = f64::INFINITY;
        for _ in 0..8 {
            lu.solve(&mut x);
            orthonormalize(&mut x, against);
            let ax = self.matvec(&x);
            let rq: f64 = ax.iter().zip(&x).map(|(a, b)| a * b).sum();
            residual = ax
                .iter()
                .zip(&x)
                .map(|(a, b)| (a - rq * b).powi(2))
                .sum::<f64>()
                .sqrt();
            if residual < 1e-10 * scale {
                break;
            }
        }
        (x, residual)
    }
}

fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
    // splitmix64; only needs to avoid being orthogonal to the target
    let mut state = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    (0..n)
        .map(|_| {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^= z >> 31;
            (z >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect()
}

fn orthonormalize(x: &mut [f64], against: &[Vec<f64>]) {
    for _ in 0..2 {
        for v in against {
            let p: f64 = x.iter().zip(v).map(|(a, b)| a * b).sum();
            for (a, b) in x.iter_mut().zip(v) {
                *a -= p * b;
            }
        }
    }
    let norm = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm > 0.0 {
        for a in x.iter_mut() {
            *a /= norm;
        }
    }
}

/// LU with partial pivoting of `A − σI` for a banded matrix. Row `i` of the
/// working array covers columns `i − bw ..= i + 2bw`.
struct BandLu {
    n: usize,
    bw: usize,
    width: usize,
    rows: Vec<f64>,
    piv: Vec<usize>,
    mult: Vec<f64>,
}

impl BandLu {
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.bw - i)
    }

    fn factor(a: &SymBand, sigma: f64) -> BandLu {
        let n = a.n;
        let bw = a.bw;
        let width = 3 * bw + 1;
        let mut lu = BandLu {
            n,
            bw,
            width,
            rows: vec![0.0; n * width],
            piv: vec![0; n],
            mult: vec![0.0; n * bw.max(1)],
        };
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let hi = (i + bw).min(n - 1);
            for j in lo..=hi {
                let k = lu.idx(i, j);
                lu.rows[k] = a.get(i, j) - if i == j { sigma } else { 0.0 };
            }
        }
        let (glo, ghi) = a.gershgorin();
        let tiny = f64::EPSILON * glo.abs().max(ghi.abs()).max(1.0);
        for k in 0..n {
            let last = (k + bw).min(n - 1);
            let mut p = k;
            let mut best = lu.rows[lu.idx(k, k)].abs();
            for i in k + 1..=last {
                let v = lu.rows[lu.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            lu.piv[k] = p;
            let cmax = (k + 2 * bw).min(n - 1);
            if p != k {
                for j in k..=cmax {
                    let (x, y) = (lu.idx(k, j), lu.idx(p, j));
                    lu.rows.swap(x, y);
                }
            }
            let kk = lu.idx(k, k);
            if lu.rows[kk].abs() < tiny {
                lu.rows[kk] = tiny;
            }
            let pivot = lu.rows[kk];
            for i in k + 1..=last {
                let ik = lu.idx(i, k);
                let m = lu.rows[ik] / pivot;
                lu.rows[ik] = 0.0;
                lu.mult[k * bw.max(1) + (i - k - 1)] = m;
                if m != 0.0 {
                    for j in k + 1..=cmax {
                        let kj = lu.rows[lu.idx(k, j)];
                        let ij = lu.idx(i, j);
                        lu.rows[ij] -= m * kj;
                    }
                }
            }
        }
        lu
    }

    fn solve(&self, b: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let last = (k + bw).min(n - 1);
            for i in k + 1..=last {
                b[i] -= self.mult[k * bw.max(1) + (i - k - 1)] * b[k];
            }
        }
        for i in (0..n).rev() {
            let cmax = (i + 2 * bw).min(n - 1);
            let mut s = b[i];
            for j in i + 1..=cmax {
                s -= self.rows[self.idx(i, j)] * b[j];
            }
            b[i] = s / self.rows[self.idx(i, i)];
        }
    }
}
