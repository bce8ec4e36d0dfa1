//! The volatility uncertainty set and the sublinear function
//! `G(A) = ½ sup_{Q ∈ Γ} tr[A QQᵀ]`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S> {
    dim: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::InvalidGamma("empty matrix".into()));
        }
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::InvalidGamma(format!(
                    "matrix is not square: row of length {} in a {dim}-row matrix",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { dim, data })
    }

    pub fn scalar(v: S) -> Self {
        Self { dim: 1, data: vec![v] }
    }

    pub fn diag(entries: &[S]) -> Self {
        let dim = entries.len();
        let mut data = vec![S::zero(); dim * dim];
        for (i, &v) in entries.iter().enumerate() {
            data[i * dim + i] = v;
        }
        Self { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.dim + j]
    }

    /// `Q Qᵀ` as a symmetric matrix.
    pub fn outer_gram(&self) -> SymMatrix<S> {
        let d = self.dim;
        let mut out = SymMatrix::zeros(d);
        for i in 0..d {
            for j in i..d {
                let mut acc = S::zero();
                for k in 0..d {
                    acc = acc + self.get(i, k) * self.get(j, k);
                }
                out.set(i, j, acc);
            }
        }
        out
    }
}

/// Real symmetric `d × d` matrix; only the upper triangle is stored, so
/// symmetry holds exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix<S> {
    dim: usize,
    upper: Vec<S>,
}

impl<S: Scalar> SymMatrix<S> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            upper: vec![S::zero(); dim * (dim + 1) / 2],
        }
    }

    pub fn scalar(a: S) -> Self {
        Self { dim: 1, upper: vec![a] }
    }

    pub fn diag(entries: &[S]) -> Self {
        let mut m = Self::zeros(entries.len());
        for (i, &v) in entries.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// Builds from full rows; rejects anything that is not exactly symmetric.
    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let dim = rows.len();
        let mut m = Self::zeros(dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::Config(format!("row {i} of symmetric matrix has wrong length")));
            }
            for j in 0..dim {
                if rows[i][j] != rows[j][i] {
                    return Err(Error::Config(format!("matrix is not symmetric at ({i}, {j})")));
                }
                if j >= i {
                    m.set(i, j, row[j]);
                }
            }
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        // row-major packing of the upper triangle
        i * self.dim - i * (i + 1) / 2 + j
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        self.upper[self.index(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: S) {
        let idx = self.index(i, j);
        self.upper[idx] = v;
    }

    pub fn trace(&self) -> S {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// `tr[self · other]` for two symmetric matrices.
    pub fn trace_product(&self, other: &SymMatrix<S>) -> S {
        let mut acc = S::zero();
        for i in 0..self.dim {
            for j in 0..self.dim {
                acc = acc + self.get(i, j) * other.get(j, i);
            }
        }
        acc
    }

    pub fn add(&self, other: &SymMatrix<S>) -> SymMatrix<S> {
        SymMatrix {
            dim: self.dim,
            upper: self.upper.iter().zip(&other.upper).map(|(&a, &b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &SymMatrix<S>) -> SymMatrix<S> {
        SymMatrix {
            dim: self.dim,
            upper: self.upper.iter().zip(&other.upper).map(|(&a, &b)| a - b).collect(),
        }
    }

    pub fn scale(&self, lambda: S) -> SymMatrix<S> {
        SymMatrix {
            dim: self.dim,
            upper: self.upper.iter().map(|&a| a * lambda).collect(),
        }
    }

    /// Eigenvalues by cyclic Jacobi rotations, ascending.
    pub fn eigenvalues(&self) -> Vec<S> {
        let d = self.dim;
        let mut a: Vec<Vec<S>> = (0..d).map(|i| (0..d).map(|j| self.get(i, j)).collect()).collect();
        let scale = a
            .iter()
            .flatten()
            .fold(S::zero(), |m, v| m.max(v.abs()))
            .max(S::min_positive_value());
        let tol = S::epsilon() * scale;
        for _sweep in 0..100 {
            let mut off = S::zero();
            for i in 0..d {
                for j in (i + 1)..d {
                    off = off.max(a[i][j].abs());
                }
            }
            if off <= tol {
                break;
            }
            for p in 0..d {
                for q in (p + 1)..d {
                    if a[p][q].abs() <= tol {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (S::two() * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + S::one()).sqrt());
                    let c = S::one() / (t * t + S::one()).sqrt();
                    let s = t * c;
                    for k in 0..d {
                        let akp = a[k][p];
                        let akq = a[k][q];
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..d {
                        let apk = a[p][k];
                        let aqk = a[q][k];
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<S> = (0..d).map(|i| a[i][i]).collect();
        ev.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
        ev
    }
}

/// The uncertainty set Γ of volatility matrices.
#[derive(Debug, Clone, PartialEq)]
pub enum GammaSet<S> {
    /// One-dimensional interval `[σ_lo, σ_hi]` with `0 < σ_lo ≤ σ_hi`.
    Interval { lo: S, hi: S },
    /// Finite list of `d × d` matrices, each with `QQᵀ` positive definite.
    Matrices { dim: usize, entries: Vec<Matrix<S>> },
}

impl<S: Scalar> GammaSet<S> {
    pub fn interval(lo: S, hi: S) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::InvalidGamma("interval endpoints must be finite".into()));
        }
        if lo <= S::zero() {
            return Err(Error::InvalidGamma(format!(
                "sigma_lo must be strictly positive (non-degeneracy), got {lo}"
            )));
        }
        if lo > hi {
            return Err(Error::InvalidGamma(format!("sigma_lo = {lo} exceeds sigma_hi = {hi}")));
        }
        Ok(GammaSet::Interval { lo, hi })
    }

    /// The singleton `{σ}` in one dimension.
    pub fn singleton(sigma: S) -> Result<Self> {
        Self::interval(sigma, sigma)
    }

    pub fn matrices(entries: Vec<Matrix<S>>) -> Result<Self> {
        let Some(first) = entries.first() else {
            return Err(Error::InvalidGamma("matrix list is empty".into()));
        };
        let dim = first.dim();
        for (k, q) in entries.iter().enumerate() {
            if q.dim() != dim {
                return Err(Error::InvalidGamma(format!(
                    "entry {k} has dimension {}, expected {dim}",
                    q.dim()
                )));
            }
            if q.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidGamma(format!("entry {k} has non-finite elements")));
            }
            let gram = q.outer_gram();
            let min_ev = gram.eigenvalues()[0];
            let scale = gram.trace().abs().max(S::one());
            if min_ev <= S::lit(64.0) * S::epsilon() * scale {
                return Err(Error::InvalidGamma(format!(
                    "entry {k} is degenerate: smallest eigenvalue of QQᵀ is {min_ev}"
                )));
            }
        }
        Ok(GammaSet::Matrices { dim, entries })
    }

    pub fn dim(&self) -> usize {
        match self {
            GammaSet::Interval { .. } => 1,
            GammaSet::Matrices { dim, .. } => *dim,
        }
    }

    fn check_dim(&self, a: &SymMatrix<S>) -> Result<()> {
        if a.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: a.dim(),
            });
        }
        Ok(())
    }

    /// `G(A) = ½ sup_{Q ∈ Γ} tr[A QQᵀ]`.
    pub fn g_of(&self, a: &SymMatrix<S>) -> Result<S> {
        self.check_dim(a)?;
        Ok(match self {
            GammaSet::Interval { .. } => self.g_scalar(a.get(0, 0)),
            GammaSet::Matrices { entries, .. } => {
                let best = entries
                    .iter()
                    .map(|q| a.trace_product(&q.outer_gram()))
                    .fold(S::neg_infinity(), S::max);
                S::half() * best
            }
        })
    }

    /// One-dimensional `G(a)`. For an interval this is the closed form
    /// `½(σ_hi² a⁺ − σ_lo² a⁻)`; for a 1×1 list it is the sup over entries.
    ///
    /// Panics if the set is multidimensional.
    #[inline]
    pub fn g_scalar(&self, a: S) -> S {
        match self {
            GammaSet::Interval { lo, hi } => {
                S::half() * (*hi * *hi * a.pos_part() - *lo * *lo * a.neg_part())
            }
            GammaSet::Matrices { dim, entries } => {
                assert_eq!(*dim, 1, "g_scalar called on a {dim}-dimensional set");
                let best = entries
                    .iter()
                    .map(|q| {
                        let v = q.get(0, 0);
                        a * (v * v)
                    })
                    .fold(S::neg_infinity(), S::max);
                S::half() * best
            }
        }
    }

    /// A maximising `Q` for `g_of`. Ties go to the first list entry, or to
    /// `σ_hi` for an interval when `a = 0`.
    pub fn argmax_q(&self, a: &SymMatrix<S>) -> Result<Matrix<S>> {
        self.check_dim(a)?;
        Ok(match self {
            GammaSet::Interval { lo, hi } => {
                if a.get(0, 0) >= S::zero() {
                    Matrix::scalar(*hi)
                } else {
                    Matrix::scalar(*lo)
                }
            }
            GammaSet::Matrices { entries, .. } => {
                let mut best = 0;
                let mut best_val = S::neg_infinity();
                for (k, q) in entries.iter().enumerate() {
                    let v = a.trace_product(&q.outer_gram());
                    if v > best_val {
                        best = k;
                        best_val = v;
                    }
                }
                entries[best].clone()
            }
        })
    }

    /// Largest `s` with `QQᵀ ⪰ s·I` for every `Q ∈ Γ` (`σ_lo²` for an interval).
    pub fn nondegeneracy_constant(&self) -> S {
        match self {
            GammaSet::Interval { lo, .. } => *lo * *lo,
            GammaSet::Matrices { entries, .. } => entries
                .iter()
                .map(|q| q.outer_gram().eigenvalues()[0])
                .fold(S::infinity(), S::min),
        }
    }

    /// Largest `σ²` over the set (`σ_hi²` for an interval).
    pub fn sigma_hi_sq(&self) -> S {
        match self {
            GammaSet::Interval { hi, .. } => *hi * *hi,
            GammaSet::Matrices { entries, .. } => entries
                .iter()
                .map(|q| *q.outer_gram().eigenvalues().last().expect("nonempty spectrum"))
                .fold(S::zero(), S::max),
        }
    }

    /// Scalar volatility scenarios used by the one-dimensional solvers.
    ///
    /// Interval: the two endpoints followed by `n_q − 2` evenly spaced interior
    /// points (a singleton interval yields one level). List: `|q|` for each
    /// 1×1 entry, deduplicated in order.
    pub fn scalar_levels(&self, n_q: usize) -> Result<Vec<S>> {
        match self {
            GammaSet::Interval { lo, hi } => {
                if lo == hi {
                    return Ok(vec![*lo]);
                }
                let mut levels = vec![*lo, *hi];
                let interior = n_q.saturating_sub(2);
                for j in 1..=interior {
                    let w = S::lit(j as f64 / (interior + 1) as f64);
                    levels.push(*lo + (*hi - *lo) * w);
                }
                Ok(levels)
            }
            GammaSet::Matrices { dim, entries } => {
                if *dim != 1 {
                    return Err(Error::DimensionMismatch {
                        expected: 1,
                        found: *dim,
                    });
                }
                let mut levels: Vec<S> = Vec::new();
                for q in entries {
                    let v = q.get(0, 0).abs();
                    if !levels.contains(&v) {
                        levels.push(v);
                    }
                }
                Ok(levels)
            }
        }
    }

    /// Whether a scalar volatility level belongs to the set.
    pub fn contains_level(&self, q: S) -> bool {
        match self {
            GammaSet::Interval { lo, hi } => q >= *lo && q <= *hi,
            GammaSet::Matrices { dim, entries } => {
                *dim == 1 && entries.iter().any(|m| m.get(0, 0).abs() == q.abs())
            }
        }
    }
}
