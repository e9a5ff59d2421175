//! Local k-convoluted semigroups `S_k = k * e^{.A}`, their extension to `k^{*n}`-families
//! and the defining identities.

use std::fmt::Write as _;

use nalgebra::{DMatrix, Dim, Matrix, RawStorage};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::grid::{fmt_f64, Grid, SampledFn};
use crate::kernel::{Kernel, Side};
use crate::kernel_algebra::{canonical_member, ResidualReport};
use crate::operators::{basis, build_lsquare_sequence, Generator, VectorState};
use crate::par;
use crate::quadrature::{integrate_singular, partial_conv, CellMoments};

const C0: Complex64 = Complex64::new(0.0, 0.0);

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Operator family `t -> S(t)` sampled at the grid points of `[0, tau]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvolutedFamily {
    kernel: Kernel,
    power: u32,
    generator: Generator,
    tau: f64,
    grid: Grid,
    /// Row-major `d x d` blocks, one per grid point.
    values: Vec<Complex64>,
}

/// Digest of a family for JSON reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySummary {
    pub kernel: String,
    pub power: u32,
    pub horizon: f64,
    pub dim: usize,
    pub n_points: usize,
}

/// Largest entry modulus.
pub trait SupNorm {
    fn max_modulus(&self) -> f64;
}

impl<R: Dim, C: Dim, S: RawStorage<Complex64, R, C>> SupNorm for Matrix<Complex64, R, C, S> {
    fn max_modulus(&self) -> f64 {
        self.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

fn to_matrix(d: usize, block: &[Complex64]) -> DMatrix<Complex64> {
    DMatrix::from_fn(d, d, |r, c| block[r * d + c])
}

fn store(m: &DMatrix<Complex64>, out: &mut [Complex64]) {
    let d = m.nrows();
    for r in 0..d {
        for c in 0..d {
            out[r * d + c] = m[(r, c)];
        }
    }
}

impl ConvolutedFamily {
    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    /// `n` when the family is convoluted by `k^{*n}`.
    pub fn power(&self) -> u32 {
        self.power
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    /// Last time of the family's domain.
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.generator.dim()
    }

    pub fn n_points(&self) -> usize {
        self.values.len() / (self.dim() * self.dim())
    }

    pub fn raw(&self) -> &[Complex64] {
        &self.values
    }

    pub fn block(&self, i: usize) -> &[Complex64] {
        let s = self.dim() * self.dim();
        &self.values[i * s..(i + 1) * s]
    }

    pub fn operator(&self, i: usize) -> DMatrix<Complex64> {
        to_matrix(self.dim(), self.block(i))
    }

    /// Grid index of `t`, checked against the family's domain.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let i = self.grid.index_of(t)?;
        if i >= self.n_points() {
            return Err(Error::Domain(format!(
                "t = {t} outside the family domain [0, {}]",
                self.tau
            )));
        }
        Ok(i)
    }

    /// `S(t)` at an arbitrary `t` in the domain (linear interpolation between grid points).
    pub fn operator_at(&self, t: f64) -> Result<DMatrix<Complex64>> {
        if !(0.0..=self.tau * (1.0 + 1e-12)).contains(&t) {
            return Err(Error::Domain(format!(
                "t = {t} outside the family domain [0, {}]",
                self.tau
            )));
        }
        let h = self.grid.dt();
        let i = ((t / h).floor() as usize).min(self.n_points() - 1);
        if i + 1 >= self.n_points() {
            return Ok(self.operator(i));
        }
        let w = t / h - i as f64;
        Ok(self.operator(i) * c(1.0 - w) + self.operator(i + 1) * c(w))
    }

    pub fn apply(&self, i: usize, x: &VectorState) -> VectorState {
        self.operator(i) * x
    }

    /// `t -> S(t) x` as a sequence of vectors.
    pub fn orbit(&self, x: &VectorState) -> Vec<VectorState> {
        (0..self.n_points()).map(|i| self.apply(i, x)).collect()
    }

    pub fn summary(&self) -> FamilySummary {
        FamilySummary {
            kernel: self.kernel.tag().to_string(),
            power: self.power,
            horizon: self.tau,
            dim: self.dim(),
            n_points: self.n_points(),
        }
    }

    /// CSV: `t` followed by the real and imaginary parts of each entry, row-major.
    pub fn to_csv(&self) -> String {
        let d = self.dim();
        let mut s = String::from("t");
        for r in 0..d {
            for col in 0..d {
                let _ = write!(s, ",s{r}{col}_re,s{r}{col}_im");
            }
        }
        s.push('\n');
        for i in 0..self.n_points() {
            s.push_str(&fmt_f64(self.grid.t(i)));
            for v in self.block(i) {
                let _ = write!(s, ",{},{}", fmt_f64(v.re), fmt_f64(v.im));
            }
            s.push('\n');
        }
        s
    }
}

/// Kernels that are linear between grid nodes, for which the exponential integrator is exact.
fn piecewise_linear_on(k: &Kernel, grid: &Grid) -> bool {
    let aligned = |b: f64| grid.index_of(b).is_ok() || b >= grid.horizon();
    match k {
        Kernel::Heaviside | Kernel::Sampled(_) => true,
        Kernel::FractionalJ { alpha } => *alpha == 1.0 || *alpha == 2.0,
        Kernel::Indicator01 => aligned(1.0),
        Kernel::BoxSpline { order } => *order <= 2 && aligned(1.0) && aligned(f64::from(*order)),
        Kernel::Scaled { inner, .. } => piecewise_linear_on(inner, grid),
        Kernel::Sum { terms } => terms.iter().all(|t| piecewise_linear_on(t, grid)),
        _ => false,
    }
}

/// Number of grid points in `[0, tau]`.
fn points_upto(tau: f64, grid: &Grid) -> Result<usize> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("tau must be positive, got {tau}")));
    }
    if tau > grid.horizon() * (1.0 + 1e-12) {
        return Err(Error::InsufficientHorizon {
            needed: tau,
            available: grid.horizon(),
        });
    }
    Ok(grid.index_of(tau)? + 1)
}

/// `S_k(t) = integral_0^t k(t - s) e^{sA} ds` on the grid points of `[0, tau]`.
///
/// Uses the recursion `S(t + h) = e^{hA} S(t) + integral_0^h k(t + v) e^{(h - v)A} dv`.
/// For kernels that are linear between nodes the cell integral is evaluated exactly through
/// `phi_1(hA)`, `phi_2(hA)`; otherwise against the kernel's cell moments with `e^{(h-v)A}`
/// interpolated quadratically.
pub fn build_convoluted(
    a: &Generator,
    k: &Kernel,
    tau: f64,
    grid: &Grid,
) -> Result<ConvolutedFamily> {
    a.validate()?;
    k.validate()?;
    if !k.has_time_domain() {
        return Err(Error::NoTimeDomain(k.tag().into()));
    }
    let n = points_upto(tau, grid)?;
    let d = a.dim();
    let h = grid.dt();
    let bs = d * d;
    let mut cells: Vec<DMatrix<Complex64>> = Vec::with_capacity(n - 1);
    if piecewise_linear_on(k, grid) {
        let (_, p1, p2) = a.phi_matrices(h);
        for i in 0..n - 1 {
            let kl = if i == 0 {
                k.regular_value_at_zero()
            } else {
                k.eval_side(grid.t(i), Side::Right)
            };
            let kr = k.eval_side(grid.t(i + 1), Side::Left);
            cells.push((&p1 * kl + &p2 * (kr - kl)) * c(h));
        }
    } else {
        let mom = k.cell_moments(h, n - 1)?;
        let eh = a.exp_matrix(h);
        let ehalf = a.exp_matrix(0.5 * h);
        let id = DMatrix::<Complex64>::identity(d, d);
        for [m0, m1, m2] in mom.mu.iter().copied() {
            let w0 = m0 - m1 * 3.0 + m2 * 2.0;
            let w1 = (m1 - m2) * 4.0;
            let w2 = m2 * 2.0 - m1;
            cells.push(&eh * w0 + &ehalf * w1 + &id * w2);
        }
    }
    let eh = a.exp_matrix(h);
    let mut values = vec![C0; n * bs];
    let mut s = DMatrix::<Complex64>::zeros(d, d);
    for (i, cell) in cells.iter().enumerate() {
        s = &eh * &s + cell;
        store(&s, &mut values[(i + 1) * bs..(i + 2) * bs]);
    }
    Ok(ConvolutedFamily {
        kernel: k.clone(),
        power: 1,
        generator: a.clone(),
        tau: grid.t(n - 1),
        grid: *grid,
        values,
    })
}

fn scheme_tolerance(k: &Kernel, grid: &Grid) -> f64 {
    let order = match k.leading_power() {
        Some(g) if g < 0.0 => (2.0 + g).min(2.0),
        _ => 2.0,
    };
    10.0 * grid.dt().powf(order)
}

/// `integral_0^{t_i} K` at every grid point, and at every half point when `half` is set.
fn kernel_primitive(k: &Kernel, grid: &Grid, n: usize, half: bool) -> Result<Vec<Complex64>> {
    if half {
        Ok(k.cell_moments(0.5 * grid.dt(), 2 * (n - 1))?.running_integral())
    } else {
        Ok(k.cell_moments(grid.dt(), n - 1)?.running_integral())
    }
}

/// Running `integral_0^{t_i} v`, third order (quadratic through three nodes per cell).
fn cumulative_vectors(v: &[VectorState], h: f64) -> Vec<VectorState> {
    let n = v.len();
    let mut out = Vec::with_capacity(n);
    let mut acc = v[0].clone() * C0;
    out.push(acc.clone());
    for j in 0..n - 1 {
        let cell = if n < 3 {
            (&v[j] + &v[j + 1]) * c(0.5 * h)
        } else if j + 2 < n {
            (&v[j] * c(5.0) + &v[j + 1] * c(8.0) - &v[j + 2]) * c(h / 12.0)
        } else {
            (&v[j + 1] * c(5.0) + &v[j] * c(8.0) - &v[j - 1]) * c(h / 12.0)
        };
        acc += cell;
        out.push(acc.clone());
    }
    out
}

/// Rebuild `v(t) = integral_0^t e^{(t-s)A} K(s) x ds` by RK4 from `v' = Av + K(t)x` and
/// check it in integrated form: `v = A integral v + (integral K) x` and `v = integral S x`.
pub fn ivp_residual(family: &ConvolutedFamily, x: &VectorState) -> Result<ResidualReport> {
    let a = family.generator();
    if x.len() != a.dim() {
        return Err(Error::Dimension {
            expected: a.dim(),
            got: x.len(),
        });
    }
    let grid = family.grid();
    let h = grid.dt();
    let n = family.n_points();
    let am = a.matrix();
    let kh = kernel_primitive(family.kernel(), grid, n, true)?;
    let mut v = Vec::with_capacity(n);
    v.push(x * C0);
    for i in 0..n - 1 {
        let vi = &v[i];
        let f = |y: &VectorState, kv: Complex64| &am * y + x * kv;
        let k1 = f(vi, kh[2 * i]);
        let k2 = f(&(vi + &k1 * c(0.5 * h)), kh[2 * i + 1]);
        let k3 = f(&(vi + &k2 * c(0.5 * h)), kh[2 * i + 1]);
        let k4 = f(&(vi + &k3 * c(h)), kh[2 * i + 2]);
        let next = vi + (k1 + k2 * c(2.0) + k3 * c(2.0) + k4) * c(h / 6.0);
        v.push(next);
    }
    // integral_0^t K by Simpson on the half grid
    let mut kk = vec![C0; n];
    for i in 0..n - 1 {
        kk[i + 1] = kk[i] + (kh[2 * i] + kh[2 * i + 1] * 4.0 + kh[2 * i + 2]) * (h / 6.0);
    }
    let iv = cumulative_vectors(&v, h);
    let is = cumulative_vectors(&family.orbit(x), h);
    let mut ode = 0.0f64;
    let mut s_gap = 0.0f64;
    let mut trace = Vec::with_capacity(n);
    for i in 0..n {
        let r1 = (&v[i] - &am * &iv[i] - x * kk[i]).max_modulus();
        let r2 = (&v[i] - &is[i]).max_modulus();
        ode = ode.max(r1);
        s_gap = s_gap.max(r2);
        trace.push((grid.t(i), r1.max(r2)));
    }
    let scale = v.iter().map(|y| y.max_modulus()).fold(1.0, f64::max);
    let tol = scheme_tolerance(family.kernel(), grid) * scale;
    Ok(ResidualReport::new("ivp", ode.max(s_gap), grid, tol)
        .extra("ode_residual", ode)
        .extra("s_equals_v_prime", s_gap)
        .with_trace(trace))
}

/// Scalar canonical family `k_t(s) = k(t - s) 1_{[0,t]}(s)`, `t in [0, tau]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalFamily {
    pub kernel: Kernel,
    pub tau: f64,
    pub grid: Grid,
}

impl CanonicalFamily {
    pub fn member(&self, t: f64) -> Result<SampledFn> {
        if t < 0.0 || t > self.tau {
            return Err(Error::Domain(format!("t = {t} outside [0, {}]", self.tau)));
        }
        canonical_member(&self.kernel, t, &self.grid)
    }

    pub fn members(&self) -> Result<Vec<SampledFn>> {
        let n = self.grid.index_of(self.tau)? + 1;
        (0..n).map(|i| self.member(self.grid.t(i))).collect()
    }
}

pub fn canonical_family(k: &Kernel, tau: f64, grid: &Grid) -> Result<CanonicalFamily> {
    if tau > grid.horizon() * (1.0 + 1e-12) {
        return Err(Error::InsufficientHorizon {
            needed: tau,
            available: grid.horizon(),
        });
    }
    if !k.has_time_domain() {
        return Err(Error::NoTimeDomain(k.tag().into()));
    }
    Ok(CanonicalFamily {
        kernel: k.clone(),
        tau,
        grid: *grid,
    })
}

/// `S_k, S_{k*k}, ..., S_{k^{*N}}`, level `n` on `[0, n kappa]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyLadder {
    kappa_index: usize,
    levels: Vec<ConvolutedFamily>,
    /// Gap between the two branches at each seam `t = (n-1) kappa`, per level `n >= 2`.
    seam_gaps: Vec<f64>,
}

impl FamilyLadder {
    pub fn kappa(&self) -> f64 {
        self.levels[0].grid.t(self.kappa_index)
    }

    pub fn kappa_index(&self) -> usize {
        self.kappa_index
    }

    pub fn depth(&self) -> u32 {
        self.levels.len() as u32
    }

    /// Level `n >= 1` (`n = 1` is the base family on its full domain).
    pub fn level(&self, n: u32) -> Result<&ConvolutedFamily> {
        if n == 0 || n as usize > self.levels.len() {
            return Err(Error::Domain(format!(
                "ladder level {n} not in 1..={}",
                self.levels.len()
            )));
        }
        Ok(&self.levels[n as usize - 1])
    }

    pub fn seam_gaps(&self) -> &[f64] {
        &self.seam_gaps
    }

    pub fn base(&self) -> &ConvolutedFamily {
        &self.levels[0]
    }
}

/// `partial_conv` applied to a whole operator block.
fn conv_block(
    w: &CellMoments,
    data: &[Complex64],
    bs: usize,
    i: usize,
    lo: usize,
    hi: usize,
) -> Vec<Complex64> {
    let mut acc = vec![C0; bs];
    partial_conv(w, data, bs, i, lo, hi, &mut acc);
    acc
}

/// Sharp extension of a `k`-family on `[0, tau]` to `k^{*n}`-families on `[0, n kappa]`,
/// `kappa = tau - dt`, `n <= n_target`.
///
/// Level `n+1` is `k * S_{k^{*n}}` on `[0, n kappa]` and the three-term formula
/// `S_{k^{*n}}(n kappa) S_k(t - n kappa) + integral_0^{n kappa} k(t-s) S_{k^{*n}}(s) ds +
/// integral_0^{t - n kappa} k^{*n}(t-s) S_k(s) ds` on `[n kappa, (n+1) kappa]`. Both
/// branches are evaluated at the seam; their gap is recorded.
pub fn extend_family(family: &ConvolutedFamily, n_target: u32) -> Result<FamilyLadder> {
    if family.power != 1 {
        return Err(Error::Domain(format!(
            "extension starts from a k-family, got power {}",
            family.power
        )));
    }
    if n_target < 1 {
        return Err(Error::Domain("n_target must be >= 1".into()));
    }
    let kk = family.n_points().saturating_sub(2);
    if kk == 0 {
        return Err(Error::InvalidGrid("family too short to extend".into()));
    }
    let grid = family.grid;
    let total = n_target as usize * kk;
    if total >= grid.n_points() {
        return Err(Error::InsufficientHorizon {
            needed: grid.t(kk) * f64::from(n_target),
            available: grid.horizon(),
        });
    }
    let k = family.kernel.clone();
    let d = family.dim();
    let bs = d * d;
    let h = grid.dt();
    let mk = k.cell_moments(h, total)?;
    let mut levels = vec![family.clone()];
    let mut seam_gaps = Vec::new();
    for n in 2..=n_target {
        let prev = &levels[n as usize - 2];
        let seam = (n as usize - 1) * kk;
        let kprev = k.power(n - 1, &grid)?;
        let mprev = kprev.cell_moments(h, total)?;
        let s1 = &family.values;
        let pv = &prev.values;
        let s_seam = to_matrix(d, &pv[seam * bs..(seam + 1) * bs]);
        let three = |i: usize| -> Vec<Complex64> {
            let shift = i - seam;
            let mut out = vec![C0; bs];
            store(
                &(&s_seam * to_matrix(d, &s1[shift * bs..(shift + 1) * bs])),
                &mut out,
            );
            let a = conv_block(&mk, pv, bs, i, 0, seam);
            let b = conv_block(&mprev, s1, bs, i, 0, shift);
            for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
                *o += x + y;
            }
            out
        };
        let rows = par::map_range(n as usize * kk + 1, |i| {
            if i <= seam {
                conv_block(&mk, pv, bs, i, 0, i)
            } else {
                three(i)
            }
        });
        let at_seam = three(seam);
        let gap = rows[seam]
            .iter()
            .zip(&at_seam)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        seam_gaps.push(gap);
        levels.push(ConvolutedFamily {
            kernel: k.power(n, &grid)?,
            power: n,
            generator: family.generator.clone(),
            tau: grid.t(n as usize * kk),
            grid,
            values: rows.concat(),
        });
    }
    Ok(FamilyLadder {
        kappa_index: kk,
        levels,
        seam_gaps,
    })
}

/// `S_{k^{*n}}` rebuilt through the split at level `j`:
/// `integral_0^t k^{*(n-j)}(t-s) S_{k^{*j}}(s) ds` on `[0, j kappa]` and
/// `S_{k^{*j}}(j kappa) S_{k^{*(n-j)}}(t - j kappa) + integral_0^{j kappa} k^{*(n-j)}(t-s)
///  S_{k^{*j}}(s) ds + integral_0^{t - j kappa} k^{*j}(t-s) S_{k^{*(n-j)}}(s) ds` beyond.
pub fn mid_split_family(ladder: &FamilyLadder, j: u32, n: u32) -> Result<ConvolutedFamily> {
    if n < 2 || n > ladder.depth() || j < 1 || j >= n {
        return Err(Error::Domain(format!(
            "need 1 <= j < n <= {}, got j={j}, n={n}",
            ladder.depth()
        )));
    }
    let base = ladder.base();
    let grid = base.grid;
    let h = grid.dt();
    let kk = ladder.kappa_index;
    let d = base.dim();
    let bs = d * d;
    let total = n as usize * kk;
    let k = &base.kernel;
    let m_rest = k.power(n - j, &grid)?.cell_moments(h, total)?;
    let m_j = k.power(j, &grid)?.cell_moments(h, total)?;
    let sj = &ladder.level(j)?.values;
    let srest = &ladder.level(n - j)?.values;
    let split = j as usize * kk;
    let s_split = to_matrix(d, &sj[split * bs..(split + 1) * bs]);
    let rows = par::map_range(total + 1, |i| {
        if i <= split {
            return conv_block(&m_rest, sj, bs, i, 0, i);
        }
        let shift = i - split;
        let mut out = vec![C0; bs];
        store(
            &(&s_split * to_matrix(d, &srest[shift * bs..(shift + 1) * bs])),
            &mut out,
        );
        let a = conv_block(&m_rest, sj, bs, i, 0, split);
        let b = conv_block(&m_j, srest, bs, i, 0, shift);
        for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
            *o += x + y;
        }
        out
    });
    Ok(ConvolutedFamily {
        kernel: k.power(n, &grid)?,
        power: n,
        generator: base.generator.clone(),
        tau: grid.t(total),
        grid,
        values: rows.concat(),
    })
}

fn max_block_gap(a: &ConvolutedFamily, b: &ConvolutedFamily) -> (f64, f64) {
    let bs = a.dim() * a.dim();
    let mut worst = (0.0, 0.0);
    for (i, (x, y)) in a.values.chunks(bs).zip(b.values.chunks(bs)).enumerate() {
        let g = x.iter().zip(y).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
        if g > worst.0 {
            worst = (g, a.grid.t(i));
        }
    }
    worst
}

/// Gap between the level-`j` split and the ladder's own level `n`.
pub fn extend_family_mid(ladder: &FamilyLadder, j: u32, n: u32) -> Result<ResidualReport> {
    let mid = mid_split_family(ladder, j, n)?;
    let level = ladder.level(n)?;
    let (gap, at) = max_block_gap(&mid, level);
    let grid = level.grid();
    Ok(
        ResidualReport::new("extend_mid", gap, grid, scheme_tolerance(&ladder.base().kernel, grid))
            .param("j", f64::from(j))
            .param("n", f64::from(n))
            .extra("worst_t", at),
    )
}

/// Gap between the level-`j1` and level-`j2` splits of `S_{k^{*n}}`.
pub fn mid_split_gap(ladder: &FamilyLadder, n: u32, j1: u32, j2: u32) -> Result<ResidualReport> {
    let a = mid_split_family(ladder, j1, n)?;
    let b = mid_split_family(ladder, j2, n)?;
    let (gap, at) = max_block_gap(&a, &b);
    let grid = a.grid();
    Ok(
        ResidualReport::new("mid_split", gap, grid, scheme_tolerance(&ladder.base().kernel, grid))
            .param("n", f64::from(n))
            .param("j1", f64::from(j1))
            .param("j2", f64::from(j2))
            .extra("worst_t", at),
    )
}

/// Deterministic `(t, s)` lattice: multiples of `extent / 20` with `t + s < extent`
/// (or both below `extent` when `square`).
pub fn pair_lattice(extent: f64, grid: &Grid, square: bool) -> Vec<(f64, f64)> {
    let step = ((extent / 20.0) / grid.dt()).round().max(1.0) as usize;
    let last = grid.index_of(extent).unwrap_or_else(|_| grid.floor_index(extent));
    let mut out = Vec::new();
    for it in (0..=last).step_by(step) {
        for is in (0..=last).step_by(step) {
            let ok = if square {
                it < last && is < last
            } else {
                it + is < last
            };
            if ok {
                out.push((grid.t(it), grid.t(is)));
            }
        }
    }
    out
}

fn composition_at(
    family: &ConvolutedFamily,
    mk: &CellMoments,
    it: usize,
    is: usize,
) -> f64 {
    let d = family.dim();
    let bs = d * d;
    let i = it + is;
    let lhs = family.operator(it) * family.operator(is);
    let r1 = conv_block(mk, &family.values, bs, i, it, i);
    let r2 = conv_block(mk, &family.values, bs, i, 0, is);
    let rhs = to_matrix(d, &r1) - to_matrix(d, &r2);
    (lhs - rhs).max_modulus()
}

/// `S(t)S(s) = integral_t^{t+s} k(t+s-r) S(r) dr - integral_0^s k(t+s-r) S(r) dr` with the
/// family's own kernel, at one pair or over the lattice when `pair` is `None`.
pub fn composition_residual(
    family: &ConvolutedFamily,
    pair: Option<(f64, f64)>,
) -> Result<ResidualReport> {
    let grid = family.grid();
    let n = family.n_points();
    let pairs = match pair {
        Some(p) => vec![p],
        None => pair_lattice(family.tau, grid, false),
    };
    let mut idx = Vec::with_capacity(pairs.len());
    for &(t, s) in &pairs {
        let (it, is) = (grid.index_of(t)?, grid.index_of(s)?);
        if t < 0.0 || s < 0.0 || it + is >= n {
            return Err(Error::Domain(format!(
                "composition needs 0 <= s, t and t + s < {}, got t={t}, s={s}",
                family.tau
            )));
        }
        idx.push((it, is));
    }
    let mk = family.kernel.cell_moments(grid.dt(), n - 1)?;
    let res = par::map_range(idx.len(), |p| composition_at(family, &mk, idx[p].0, idx[p].1));
    let (mut worst, mut at) = (0.0, (0.0, 0.0));
    for (p, r) in res.iter().enumerate() {
        if *r >= worst {
            worst = *r;
            at = pairs[p];
        }
    }
    let mut r = ResidualReport::new(
        "composition",
        worst,
        grid,
        scheme_tolerance(family.kernel(), grid),
    )
    .param("power", f64::from(family.power))
    .extra("worst_t", at.0)
    .extra("worst_s", at.1)
    .extra("pairs", pairs.len() as f64);
    if let Some((t, s)) = pair {
        r = r.param("t", t).param("s", s);
    }
    Ok(r)
}

/// `A integral_0^t S x - S(t) x + K(t) x` with `K` the primitive of the family's kernel; at
/// one `t`, or over the whole domain (with a trace) when `t` is `None`.
pub fn generator_residual(
    family: &ConvolutedFamily,
    x: &VectorState,
    t: Option<f64>,
) -> Result<ResidualReport> {
    let a = family.generator();
    if x.len() != a.dim() {
        return Err(Error::Dimension {
            expected: a.dim(),
            got: x.len(),
        });
    }
    let grid = family.grid();
    let n = family.n_points();
    let am = a.matrix();
    let orbit = family.orbit(x);
    let is = cumulative_vectors(&orbit, grid.dt());
    let kp = kernel_primitive(family.kernel(), grid, n, false)?;
    let at = |i: usize| (&am * &is[i] - &orbit[i] + x * kp[i]).max_modulus();
    let tol = scheme_tolerance(family.kernel(), grid);
    let report = match t {
        Some(t) => {
            let i = family.index_of(t)?;
            ResidualReport::new("generator", at(i), grid, tol).param("t", t)
        }
        None => {
            let trace: Vec<(f64, f64)> = (0..n).map(|i| (grid.t(i), at(i))).collect();
            let worst = trace.iter().map(|p| p.1).fold(0.0, f64::max);
            ResidualReport::new("generator", worst, grid, tol).with_trace(trace)
        }
    };
    Ok(report.param("power", f64::from(family.power)))
}

/// Worst generator residual over all basis vectors and the whole domain.
pub fn generator_residual_all(family: &ConvolutedFamily) -> Result<ResidualReport> {
    let d = family.dim();
    let mut best: Option<ResidualReport> = None;
    for j in 0..d {
        let r = generator_residual(family, &basis(d, j), None)?;
        if best.as_ref().is_none_or(|b| r.max_abs_residual > b.max_abs_residual) {
            best = Some(r);
        }
    }
    Ok(best.expect("d >= 1"))
}

/// `S_{k*k}(t+s) = S_k(t)S_k(s) + (integral_0^t + integral_0^s) k(t+s-u) S_k(u) du`,
/// `t, s in [0, kappa)`, at one pair or over the lattice.
pub fn splitting_residual(
    ladder: &FamilyLadder,
    pair: Option<(f64, f64)>,
) -> Result<ResidualReport> {
    let s2 = ladder.level(2)?;
    let base = ladder.base();
    let grid = base.grid();
    let kk = ladder.kappa_index;
    let pairs = match pair {
        Some(p) => vec![p],
        None => pair_lattice(ladder.kappa(), grid, true),
    };
    let mut idx = Vec::new();
    for &(t, s) in &pairs {
        let (it, is) = (grid.index_of(t)?, grid.index_of(s)?);
        if t < 0.0 || s < 0.0 || it >= kk || is >= kk {
            return Err(Error::Domain(format!(
                "splitting needs t, s in [0, {}), got t={t}, s={s}",
                ladder.kappa()
            )));
        }
        idx.push((it, is));
    }
    let d = base.dim();
    let bs = d * d;
    let mk = base.kernel.cell_moments(grid.dt(), 2 * kk)?;
    let res = par::map_range(idx.len(), |p| {
        let (it, is) = idx[p];
        let i = it + is;
        let lhs = s2.operator(i);
        let a = conv_block(&mk, &base.values, bs, i, 0, it);
        let b = conv_block(&mk, &base.values, bs, i, 0, is);
        let rhs = base.operator(it) * base.operator(is) + to_matrix(d, &a) + to_matrix(d, &b);
        (lhs - rhs).max_modulus()
    });
    let (mut worst, mut at) = (0.0, (0.0, 0.0));
    for (p, r) in res.iter().enumerate() {
        if *r >= worst {
            worst = *r;
            at = pairs[p];
        }
    }
    let mut r = ResidualReport::new("splitting", worst, grid, scheme_tolerance(&base.kernel, grid))
        .extra("worst_t", at.0)
        .extra("worst_s", at.1)
        .extra("pairs", pairs.len() as f64);
    if let Some((t, s)) = pair {
        r = r.param("t", t).param("s", s);
    }
    Ok(r)
}

/// `max_t |S(t) A - A S(t)|`.
pub fn commutation_residual(family: &ConvolutedFamily) -> f64 {
    let am = family.generator().matrix();
    (0..family.n_points())
        .map(|i| {
            let s = family.operator(i);
            (&s * &am - &am * &s).max_modulus()
        })
        .fold(0.0, f64::max)
}

/// Smallest singular value of `[S(t_1); ...; S(t_J)]` over `samples` evenly spaced nonzero
/// grid times; the family is non-degenerate when it is positive.
pub fn rank_check(family: &ConvolutedFamily, samples: usize) -> Result<ResidualReport> {
    let n = family.n_points();
    if samples == 0 || n < 2 {
        return Err(Error::Empty("rank check needs samples and a nontrivial domain".into()));
    }
    let d = family.dim();
    let picks: Vec<usize> = (1..=samples)
        .map(|j| ((j * (n - 1)) as f64 / samples as f64).round() as usize)
        .map(|i| i.clamp(1, n - 1))
        .collect();
    let stack = DMatrix::from_fn(picks.len() * d, d, |r, col| {
        family.block(picks[r / d])[(r % d) * d + col]
    });
    let sv = stack.singular_values();
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let threshold = 1e-12 * smax.max(f64::MIN_POSITIVE);
    let rank = sv.iter().filter(|&&s| s > threshold).count();
    let mut r = ResidualReport::new("rank", smin, family.grid(), threshold)
        .extra("smallest_singular_value", smin)
        .extra("largest_singular_value", smax)
        .extra("rank", rank as f64);
    r.passed = smin > threshold;
    Ok(r)
}

/// `(e^{a t} - 1)/a` for `alpha = 1`, otherwise `integral_0^t j_alpha(r) e^{a(t-r)} dr`.
fn integrated_exponential(a: Complex64, alpha: f64, t: f64) -> Complex64 {
    if t == 0.0 {
        return C0;
    }
    if alpha == 1.0 {
        return if (a * t).norm() < 1e-3 {
            crate::quadrature::phi1(a * t) * t
        } else {
            ((a * t).exp() - 1.0) / a
        };
    }
    let g = gamma(alpha);
    let p = alpha - 1.0;
    let pl = if crate::kernel::is_integer(alpha) { None } else { Some(p) };
    integrate_singular(0.0, t, t / 32.0, pl, None, |r| {
        (a * (t - r)).exp() * (r.powf(p) / g)
    })
}

/// Truncated sequence example: `S_alpha = j_alpha * e^{.A}` for the diagonal `a_m`
/// generator, compared componentwise with its closed form on `[0, t_max]`, and the
/// magnitude of each component tested for monotonicity in `t`.
pub fn lsquare_check(
    period: f64,
    alpha: f64,
    modes: usize,
    t_max: f64,
    grid: &Grid,
) -> Result<ResidualReport> {
    let a = build_lsquare_sequence(period, modes)?;
    let fam = build_convoluted(&a, &Kernel::fractional(alpha), t_max, grid)?;
    let ev = a.eigenvalues().expect("diagonal");
    let n = fam.n_points();
    let d = fam.dim();
    let mut value = 0.0f64;
    let mut violations = 0usize;
    let mut first_drop = vec![f64::NAN; modes];
    for (m, &am) in ev.iter().enumerate() {
        let mut prev = 0.0f64;
        for i in 0..n {
            let s = fam.block(i)[m * d + m];
            let want = integrated_exponential(am, alpha, grid.t(i));
            value = value.max((s - want).norm());
            let mag = s.norm();
            if i > 0 && mag < prev * (1.0 - 1e-14) {
                violations += 1;
                if first_drop[m].is_nan() {
                    first_drop[m] = grid.t(i);
                }
            }
            prev = mag;
        }
    }
    let mut r = ResidualReport::new("lsquare", value, grid, 1e-10)
        .param("T", period)
        .param("alpha", alpha)
        .param("M", modes as f64)
        .param("t_max", t_max)
        .extra("value_residual", value)
        .extra("monotone_violations", violations as f64);
    for (m, t) in first_drop.iter().enumerate() {
        if !t.is_nan() {
            r = r.extra(&format!("first_decrease_m{}", m + 1), *t);
        }
    }
    r.passed = value <= 1e-10 && violations == 0;
    Ok(r)
}

/// Closed-form operator for tests and oracles: `S(t) = sum_j c_j(t) A^j` from a polynomial
/// in `A` with scalar coefficient functions.
pub fn operator_polynomial(a: &Generator, coeffs: &[Complex64]) -> DMatrix<Complex64> {
    let am = a.matrix();
    let d = a.dim();
    let mut acc = DMatrix::<Complex64>::zeros(d, d);
    let mut pow = DMatrix::<Complex64>::identity(d, d);
    for cj in coeffs {
        acc += &pow * *cj;
        pow = &pow * &am;
    }
    acc
}

/// `S(t) x` for the vector `x` at every grid point of the family, as sampled functions per
/// component.
pub fn orbit_components(family: &ConvolutedFamily, x: &VectorState) -> Vec<SampledFn> {
    let d = family.dim();
    let orbit = family.orbit(x);
    let grid = *family.grid();
    (0..d)
        .map(|j| {
            let mut v = vec![C0; grid.n_points()];
            for (i, y) in orbit.iter().enumerate() {
                v[i] = y[j];
            }
            SampledFn::new(grid, v).expect("grid length")
        })
        .collect()
}
