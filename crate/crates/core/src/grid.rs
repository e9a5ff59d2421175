//! Uniform time grids and complex samples on them.

use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when snapping a time onto the grid.
const SNAP_TOL: f64 = 1e-9;

/// Uniform grid `t_i = i * dt`, `i = 0..n_points`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dt: f64,
    n_points: usize,
}

impl Grid {
    pub fn new(dt: f64, n_points: usize) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidGrid(format!("dt must be positive, got {dt}")));
        }
        if n_points < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 points, got {n_points}"
            )));
        }
        Ok(Self { dt, n_points })
    }

    /// Grid covering `[0, horizon]`; the horizon is rounded to the nearest multiple of `dt`.
    pub fn with_horizon(dt: f64, horizon: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let cells = (horizon / dt).round() as usize;
        Self::new(dt, cells.max(1) + 1)
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.dt
    }

    #[inline]
    pub fn n_points(&self) -> usize {
        self.n_points
    }

    /// Last grid time.
    #[inline]
    pub fn horizon(&self) -> f64 {
        self.t(self.n_points - 1)
    }

    #[inline]
    pub fn t(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |i| self.t(i))
    }

    /// Index of a time that must lie on the grid.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let x = t / self.dt;
        let i = x.round();
        if t < -SNAP_TOL * self.dt || (x - i).abs() > 1e-6 {
            return Err(Error::Domain(format!(
                "t = {t} is not a grid point for dt = {}",
                self.dt
            )));
        }
        let i = i as usize;
        if i >= self.n_points {
            return Err(Error::InsufficientHorizon {
                needed: t,
                available: self.horizon(),
            });
        }
        Ok(i)
    }

    /// Largest index with `t_i <= t`.
    pub fn floor_index(&self, t: f64) -> usize {
        let x = t / self.dt;
        let i = (x + SNAP_TOL).floor().max(0.0) as usize;
        i.min(self.n_points - 1)
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        self.n_points == other.n_points && (self.dt - other.dt).abs() <= 1e-15 * self.dt
    }

    pub fn check_same(&self, other: &Grid) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                left_dt: self.dt,
                left_n: self.n_points,
                right_dt: other.dt,
                right_n: other.n_points,
            })
        }
    }
}

/// Complex samples on a [`Grid`] with an optional support bound `[0, b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledFn {
    grid: Grid,
    values: Vec<Complex64>,
    support: Option<f64>,
}

impl SampledFn {
    pub fn new(grid: Grid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(Error::Dimension {
                expected: grid.n_points(),
                got: values.len(),
            });
        }
        Ok(Self {
            grid,
            values,
            support: None,
        })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![Complex64::new(0.0, 0.0); grid.n_points()],
            support: None,
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> Complex64) -> Self {
        let values = grid.times().map(f).collect();
        Self {
            grid,
            values,
            support: None,
        }
    }

    pub fn from_real_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        Self::from_fn(grid, |t| Complex64::new(f(t), 0.0))
    }

    /// Attach a support bound `[0, b]`. Samples beyond `b` are forced to exactly zero.
    pub fn with_support(mut self, b: f64) -> Self {
        let b = b.min(self.grid.horizon());
        for (i, v) in self.values.iter_mut().enumerate() {
            if self.grid.t(i) > b * (1.0 + 1e-12) + 1e-14 {
                *v = Complex64::new(0.0, 0.0);
            }
        }
        self.support = Some(b);
        self
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    #[inline]
    pub fn support(&self) -> Option<f64> {
        self.support
    }

    pub fn set_support(&mut self, b: Option<f64>) {
        self.support = b;
    }

    #[inline]
    pub fn at(&self, i: usize) -> Complex64 {
        self.values[i]
    }

    /// Value at a grid time.
    pub fn value_at(&self, t: f64) -> Result<Complex64> {
        Ok(self.values[self.grid.index_of(t)?])
    }

    /// Linear interpolation at an arbitrary time inside the horizon.
    pub fn interpolate(&self, t: f64) -> Complex64 {
        let dt = self.grid.dt();
        let last = self.grid.n_points() - 1;
        if t <= 0.0 {
            return self.values[0];
        }
        let x = t / dt;
        let i = (x.floor() as usize).min(last);
        if i >= last {
            return self.values[last];
        }
        let w = x - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }

    /// Last time with a non-zero sample (0 when all samples vanish).
    pub fn effective_support(&self) -> f64 {
        self.values
            .iter()
            .rposition(|v| v.norm() > 0.0)
            .map_or(0.0, |i| self.grid.t(i))
    }

    /// Largest `|v_i|` over samples with `t_i > b`.
    pub fn max_abs_beyond(&self, b: f64) -> f64 {
        self.values
            .iter()
            .enumerate()
            .filter(|(i, _)| self.grid.t(*i) > b * (1.0 + 1e-12) + 1e-14)
            .map(|(_, v)| v.norm())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &SampledFn) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }

    /// Max abs difference restricted to `t_i <= upto`.
    pub fn max_abs_diff_upto(&self, other: &SampledFn, upto: f64) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        let n = self.grid.floor_index(upto);
        Ok(self.values[..=n]
            .iter()
            .zip(&other.values[..=n])
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }

    pub fn map(&self, f: impl Fn(f64, Complex64) -> Complex64) -> SampledFn {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| f(self.grid.t(i), *v))
            .collect();
        SampledFn {
            grid: self.grid,
            values,
            support: self.support,
        }
    }

    pub fn scale(&self, c: Complex64) -> SampledFn {
        self.map(|_, v| v * c)
    }

    pub fn add(&self, other: &SampledFn) -> Result<SampledFn> {
        self.grid.check_same(&other.grid)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        let support = match (self.support, other.support) {
            (Some(a), Some(b)) => Some(a.max(b)),
            _ => None,
        };
        Ok(SampledFn {
            grid: self.grid,
            values,
            support,
        })
    }

    pub fn sub(&self, other: &SampledFn) -> Result<SampledFn> {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    /// Shift `f_u(t) = f(t + u)`; `u` must be a grid time. Samples past the horizon are zero.
    pub fn shift(&self, u: f64) -> Result<SampledFn> {
        let k = self.grid.index_of(u)?;
        let n = self.grid.n_points();
        let values = (0..n)
            .map(|i| {
                if i + k < n {
                    self.values[i + k]
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        Ok(SampledFn {
            grid: self.grid,
            values,
            support: self.support.map(|b| (b - u).max(0.0)),
        })
    }

    /// Second-order finite-difference derivative (central inside, one-sided at the ends).
    pub fn derivative(&self) -> SampledFn {
        let n = self.values.len();
        let h = self.grid.dt();
        let v = &self.values;
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        if n >= 3 {
            out[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
            out[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h);
            for i in 1..n - 1 {
                out[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
            }
        } else {
            let d = (v[1] - v[0]) / h;
            out[0] = d;
            out[1] = d;
        }
        SampledFn {
            grid: self.grid,
            values: out,
            support: self.support,
        }
    }

    /// Fourth-order finite-difference derivative (five-point stencils, one-sided at the ends).
    pub fn derivative4(&self) -> SampledFn {
        let n = self.values.len();
        if n < 5 {
            return self.derivative();
        }
        let h12 = 12.0 * self.grid.dt();
        let v = &self.values;
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        let fwd0 = |a: &dyn Fn(usize) -> Complex64| {
            (-25.0 * a(0) + 48.0 * a(1) - 36.0 * a(2) + 16.0 * a(3) - 3.0 * a(4)) / h12
        };
        let fwd1 = |a: &dyn Fn(usize) -> Complex64| {
            (-3.0 * a(0) - 10.0 * a(1) + 18.0 * a(2) - 6.0 * a(3) + a(4)) / h12
        };
        let head = |k: usize| v[k];
        let tail = |k: usize| v[n - 1 - k];
        out[0] = fwd0(&head);
        out[1] = fwd1(&head);
        out[n - 1] = -fwd0(&tail);
        out[n - 2] = -fwd1(&tail);
        for i in 2..n - 2 {
            out[i] = (v[i - 2] - 8.0 * v[i - 1] + 8.0 * v[i + 1] - v[i + 2]) / h12;
        }
        SampledFn {
            grid: self.grid,
            values: out,
            support: self.support,
        }
    }

    /// CSV with columns `t,re,im`, 17 significant digits, LF endings.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,re,im\n");
        for (i, v) in self.values.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{}",
                fmt_f64(self.grid.t(i)),
                fmt_f64(v.re),
                fmt_f64(v.im)
            );
        }
        s
    }
}

/// Full-precision float formatting shared by every CSV writer.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
