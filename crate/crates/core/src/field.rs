//! Uniform space grid and the space-time value field shared by all solvers.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D<S> {
    x_min: S,
    x_max: S,
    n_x: usize,
    dx: S,
}

impl<S: Scalar> Grid1D<S> {
    pub fn new(x_min: S, x_max: S, n_x: usize) -> Result<Self> {
        if n_x < 3 {
            return Err(Error::Config(format!("grid needs at least 3 nodes, got {n_x}")));
        }
        if !(x_min < x_max) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::Config(format!("grid bounds [{x_min}, {x_max}] are not increasing")));
        }
        let dx = (x_max - x_min) / S::lit((n_x - 1) as f64);
        Ok(Self { x_min, x_max, n_x, dx })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n_x
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn dx(&self) -> S {
        self.dx
    }

    #[inline]
    pub fn x_min(&self) -> S {
        self.x_min
    }

    #[inline]
    pub fn x_max(&self) -> S {
        self.x_max
    }

    #[inline]
    pub fn node(&self, i: usize) -> S {
        if i + 1 == self.n_x {
            self.x_max
        } else {
            self.x_min + self.dx * S::lit(i as f64)
        }
    }

    pub fn nodes(&self) -> Vec<S> {
        (0..self.n_x).map(|i| self.node(i)).collect()
    }

    /// Piecewise-linear interpolation of grid values; `x` is clamped to the
    /// grid extent so every weight is in `[0, 1]`.
    #[inline]
    pub fn interpolate(&self, values: &[S], x: S) -> S {
        let last = self.n_x - 1;
        if x <= self.x_min {
            return values[0];
        }
        if x >= self.x_max {
            return values[last];
        }
        let s = (x - self.x_min) / self.dx;
        let j = s.floor().to_usize().unwrap_or(0).min(last - 1);
        let w = (s - S::lit(j as f64)).max(S::zero()).min(S::one());
        let (a, b) = (values[j], values[j + 1]);
        ((S::one() - w) * a + w * b).max(a.min(b)).min(a.max(b))
    }

    /// Central difference, one-sided at the two edges.
    #[inline]
    pub fn slope(&self, values: &[S], i: usize) -> S {
        let last = self.n_x - 1;
        if i == 0 {
            (values[1] - values[0]) / self.dx
        } else if i == last {
            (values[last] - values[last - 1]) / self.dx
        } else {
            (values[i + 1] - values[i - 1]) / (S::two() * self.dx)
        }
    }

    /// Index range of the middle two thirds of the grid (acceptance region
    /// away from the truncated boundary).
    pub fn interior_two_thirds(&self) -> std::ops::Range<usize> {
        let lo = self.x_min + (self.x_max - self.x_min) / S::lit(6.0);
        let hi = self.x_max - (self.x_max - self.x_min) / S::lit(6.0);
        let start = (0..self.n_x).find(|&i| self.node(i) >= lo).unwrap_or(0);
        let end = (0..self.n_x).rev().find(|&i| self.node(i) <= hi).map_or(self.n_x, |i| i + 1);
        start..end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Lattice,
    Hjb,
    Oracle,
}

/// `V(t_k, x_i)` on a uniform space-time grid, `t_k = t₀ + k·δ`, `k = 0..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField<S> {
    grid: Grid1D<S>,
    t0: S,
    dt: S,
    rows: usize,
    values: Vec<S>,
    pub provenance: Provenance,
}

impl<S: Scalar> ValueField<S> {
    /// A field of `steps + 1` rows, all zero.
    pub fn zeros(grid: Grid1D<S>, t0: S, dt: S, steps: usize, provenance: Provenance) -> Self {
        Self {
            grid,
            t0,
            dt,
            rows: steps + 1,
            values: vec![S::zero(); (steps + 1) * grid.len()],
            provenance,
        }
    }

    /// Samples a closed-form `v(t, x)` on the grid.
    pub fn from_fn(
        grid: Grid1D<S>,
        t0: S,
        dt: S,
        steps: usize,
        provenance: Provenance,
        mut v: impl FnMut(S, S) -> S,
    ) -> Self {
        let mut field = Self::zeros(grid, t0, dt, steps, provenance);
        for k in 0..=steps {
            let t = field.time(k);
            for i in 0..grid.len() {
                field.row_mut(k)[i] = v(t, grid.node(i));
            }
        }
        field
    }

    pub fn grid(&self) -> &Grid1D<S> {
        &self.grid
    }

    pub fn dt(&self) -> S {
        self.dt
    }

    pub fn t0(&self) -> S {
        self.t0
    }

    /// Number of time steps `K` (rows minus one).
    pub fn steps(&self) -> usize {
        self.rows - 1
    }

    #[inline]
    pub fn time(&self, k: usize) -> S {
        self.t0 + self.dt * S::lit(k as f64)
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[S] {
        let n = self.grid.len();
        &self.values[k * n..(k + 1) * n]
    }

    #[inline]
    pub fn row_mut(&mut self, k: usize) -> &mut [S] {
        let n = self.grid.len();
        &mut self.values[k * n..(k + 1) * n]
    }

    pub fn check_row(&self, k: usize) -> Result<()> {
        if k >= self.rows {
            return Err(Error::RowOutOfRange { row: k, rows: self.rows });
        }
        Ok(())
    }

    /// Bilinear interpolation in `(t, x)`, clamped to the field extent.
    pub fn value_at(&self, t: S, x: S) -> S {
        let (k, w) = self.time_weights(t);
        let a = self.grid.interpolate(self.row(k), x);
        if w == S::zero() {
            return a;
        }
        let b = self.grid.interpolate(self.row(k + 1), x);
        (S::one() - w) * a + w * b
    }

    /// `∂ₓV` by central differences, linearly interpolated in `(t, x)`.
    pub fn slope_at(&self, t: S, x: S) -> S {
        let (k, w) = self.time_weights(t);
        let row_slope = |k: usize| {
            let slopes: Vec<S> = (0..self.grid.len()).map(|i| self.grid.slope(self.row(k), i)).collect();
            self.grid.interpolate(&slopes, x)
        };
        let a = row_slope(k);
        if w == S::zero() {
            return a;
        }
        (S::one() - w) * a + w * row_slope(k + 1)
    }

    fn time_weights(&self, t: S) -> (usize, S) {
        let last = self.rows - 1;
        if last == 0 || t <= self.t0 {
            return (0, S::zero());
        }
        let s = (t - self.t0) / self.dt;
        let k = s.floor().to_usize().unwrap_or(0);
        if k >= last {
            return (last, S::zero());
        }
        (k, s - S::lit(k as f64))
    }

    /// First node/row where `|V| > ceiling·(1 + |x|)` or `V` is not finite.
    pub fn check_growth(&self, ceiling: S) -> Result<()> {
        for k in 0..self.rows {
            for (i, &v) in self.row(k).iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite { k, i });
                }
                let x = self.grid.node(i);
                if v.abs() > ceiling * (S::one() + x.abs()) {
                    return Err(Error::GrowthCeiling {
                        k,
                        i,
                        value: v.as_f64(),
                    });
                }
            }
        }
        Ok(())
    }

    /// CSV with header `t,x,v`, rows ordered by time then space, 17
    /// significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 72 + 8);
        out.push_str("t,x,v\n");
        for k in 0..self.rows {
            let t = self.time(k).as_f64();
            for (i, &v) in self.row(k).iter().enumerate() {
                let x = self.grid.node(i).as_f64();
                let _ = writeln!(out, "{t:.16e},{x:.16e},{:.16e}", v.as_f64());
            }
        }
        out
    }

    /// Parses the CSV written by [`ValueField::to_csv`].
    pub fn from_csv(text: &str, provenance: Provenance) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("t,x,v") {
            return Err(Error::Config("value field CSV must start with header `t,x,v`".into()));
        }
        let mut triples = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 2)))?;
            if parts.len() != 3 {
                return Err(Error::Config(format!("line {}: expected 3 columns", n + 2)));
            }
            triples.push((parts[0], parts[1], parts[2]));
        }
        let t0 = triples.first().ok_or_else(|| Error::Config("empty value field".into()))?.0;
        let n_x = triples.iter().take_while(|r| r.0 == t0).count();
        if n_x < 3 || triples.len() % n_x != 0 {
            return Err(Error::Config("value field CSV is not a full space-time grid".into()));
        }
        let rows = triples.len() / n_x;
        let grid = Grid1D::new(S::lit(triples[0].1), S::lit(triples[n_x - 1].1), n_x)?;
        let dt = if rows > 1 { triples[n_x].0 - t0 } else { 0.0 };
        let mut field = Self::zeros(grid, S::lit(t0), S::lit(dt), rows - 1, provenance);
        for (j, r) in triples.iter().enumerate() {
            field.values[j] = S::lit(r.2);
        }
        Ok(field)
    }
}
