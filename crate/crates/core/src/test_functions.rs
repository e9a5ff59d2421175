//! Compactly supported test functions and the operators `T'_k`, `W_k` acting on them.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::grid::{Grid, SampledFn};
use crate::kernel::Kernel;
use crate::kernel_algebra::{dual_convolve_kernel, laplace_numeric, ResidualReport};
use crate::par;
use crate::quadrature::integrate_singular;

const C0: Complex64 = Complex64::new(0.0, 0.0);

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// `f(t) = P(t + shift) exp(-1 / (1 - u^2))`, `u = (t + shift) / width`, for `t + shift < width`.
///
/// Smooth on `[0, inf)` and identically zero from `b = width - shift` on; `f(0)` and `f'(0)`
/// are in general nonzero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename = "poly_bump")]
pub struct TestFunction {
    /// Coefficients of `P` in increasing degree.
    pub coeffs: Vec<f64>,
    pub width: f64,
    #[serde(default)]
    pub shift: f64,
}

impl TestFunction {
    pub fn bump(b: f64) -> Self {
        Self::poly_bump(vec![1.0], b)
    }

    pub fn poly_bump(coeffs: Vec<f64>, b: f64) -> Self {
        Self {
            coeffs,
            width: b,
            shift: 0.0,
        }
    }

    /// The bump on `[0, 1]`.
    pub fn standard() -> Self {
        Self::bump(1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width.is_finite() && self.width > 0.0) {
            return Err(Error::Domain(format!("width must be positive, got {}", self.width)));
        }
        if !(self.shift >= 0.0 && self.shift < self.width) {
            return Err(Error::Domain(format!(
                "shift must lie in [0, width), got {}",
                self.shift
            )));
        }
        if self.coeffs.iter().any(|a| !a.is_finite()) {
            return Err(Error::Domain("non-finite polynomial coefficient".into()));
        }
        Ok(())
    }

    /// Support endpoint `b`.
    pub fn b(&self) -> f64 {
        self.width - self.shift
    }

    /// `f_u(t) = f(t + u)`.
    pub fn shifted(&self, u: f64) -> Result<Self> {
        let f = Self {
            shift: self.shift + u,
            ..self.clone()
        };
        if u < 0.0 {
            return Err(Error::Domain(format!("shift must be non-negative, got {u}")));
        }
        f.validate()?;
        Ok(f)
    }

    /// `f(t), f'(t), ..., f^{(n)}(t)` from Taylor-jet recurrences.
    pub fn derivatives(&self, t: f64, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n + 1];
        let x = t + self.shift;
        let w = self.width;
        if x < 0.0 || x >= w {
            return out;
        }
        let u = x / w;
        let q = [1.0 - u * u, -2.0 * u, -1.0];
        // g = -1/q as a jet in (v - u)
        let mut r = vec![0.0; n + 1];
        r[0] = 1.0 / q[0];
        for k in 1..=n {
            let s: f64 = (1..=k.min(2)).map(|j| q[j] * r[k - j]).sum();
            r[k] = -s / q[0];
        }
        let h0 = (-r[0]).exp();
        if h0 == 0.0 {
            return out;
        }
        let mut e = vec![0.0; n + 1];
        e[0] = h0;
        for k in 1..=n {
            let s: f64 = (1..=k).map(|j| j as f64 * -r[j] * e[k - j]).sum();
            e[k] = s / k as f64;
        }
        // P as a jet in (v - u): p_k = P^{(k)}(x) w^k / k!
        let deg = self.coeffs.len();
        let mut p = vec![0.0; n + 1];
        let mut coeffs = self.coeffs.clone();
        let mut wk = 1.0;
        let mut fact = 1.0;
        for (k, pk) in p.iter_mut().enumerate() {
            if k >= deg {
                break;
            }
            if k > 0 {
                coeffs = coeffs
                    .iter()
                    .enumerate()
                    .skip(1)
                    .map(|(i, a)| a * i as f64)
                    .collect();
                wk *= w;
                fact *= k as f64;
            }
            let val = coeffs.iter().rev().fold(0.0, |acc, a| acc * x + a);
            *pk = val * wk / fact;
        }
        let mut fact = 1.0;
        let mut wpow = 1.0;
        for (k, o) in out.iter_mut().enumerate() {
            if k > 0 {
                fact *= k as f64;
                wpow *= w;
            }
            let ck: f64 = (0..=k).map(|j| p[j] * e[k - j]).sum();
            *o = ck * fact / wpow;
        }
        out
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.derivatives(t, 0)[0]
    }

    pub fn derivative(&self, t: f64, n: usize) -> f64 {
        self.derivatives(t, n)[n]
    }

    pub fn sample(&self, grid: &Grid) -> SampledFn {
        self.sample_derivative(grid, 0)
    }

    pub fn sample_derivative(&self, grid: &Grid, n: usize) -> SampledFn {
        let mut f = SampledFn::from_real_fn(*grid, |t| self.derivative(t, n));
        f.set_support(Some(self.b().min(grid.horizon())));
        f
    }
}

fn require_inside(f: &TestFunction, grid: &Grid) -> Result<()> {
    f.validate()?;
    if f.b() >= grid.horizon() {
        return Err(Error::HorizonTruncation(format!(
            "test-function support [0, {}] reaches the horizon {}",
            f.b(),
            grid.horizon()
        )));
    }
    Ok(())
}

/// `T'_k f (t) = integral_t^inf k(s - t) f(s) ds`.
pub fn apply_tk(k: &Kernel, f: &TestFunction, grid: &Grid) -> Result<SampledFn> {
    require_inside(f, grid)?;
    dual_convolve_kernel(k, &f.sample(grid))
}

/// Weyl derivative `W_alpha f`, exact for integer order and by analytic differentiation under
/// the integral otherwise.
pub fn weyl_derivative(f: &TestFunction, alpha: f64, grid: &Grid) -> Result<SampledFn> {
    weyl_of_derivative(f, alpha, 0, grid)
}

/// `W_alpha (f^{(d)})`.
fn weyl_of_derivative(f: &TestFunction, alpha: f64, d: usize, grid: &Grid) -> Result<SampledFn> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Domain(format!("Weyl order must be positive, got {alpha}")));
    }
    f.validate()?;
    let m = alpha.ceil() as usize;
    let sign = if m.is_multiple_of(2) { 1.0 } else { -1.0 };
    let b = f.b();
    let mut out = SampledFn::zeros(*grid);
    if crate::kernel::is_integer(alpha) {
        par::fill(out.values_mut(), |i, slot| {
            *slot = c(sign * f.derivative(grid.t(i), m + d));
        });
    } else {
        let beta = m as f64 - alpha;
        let g = gamma(beta);
        let panel = f.width / 64.0;
        par::fill(out.values_mut(), |i, slot| {
            let t = grid.t(i);
            if t >= b {
                return;
            }
            let v = integrate_singular(0.0, b - t, panel, Some(beta - 1.0), None, |r| {
                c(r.powf(beta - 1.0) * f.derivative(t + r, m + d))
            });
            *slot = v * (sign / g);
        });
    }
    out.set_support(Some(b.min(grid.horizon())));
    Ok(out)
}

fn binomial(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `W_k (f^{(d)})` for a test function, by a closed formula when the kernel has one and by
/// numerical inversion of `T'_k` otherwise.
pub fn apply_wk_derivative(k: &Kernel, f: &TestFunction, d: usize, grid: &Grid) -> Result<SampledFn> {
    match k {
        Kernel::FractionalJ { alpha } => weyl_of_derivative(f, *alpha, d, grid),
        Kernel::Heaviside => weyl_of_derivative(f, 1.0, d, grid),
        Kernel::Indicator01 => shifted_sum(f, 1, d, grid),
        Kernel::BoxSpline { order } => shifted_sum(f, *order, d, grid),
        Kernel::Scaled { factor, inner } => {
            Ok(apply_wk_derivative(inner, f, d, grid)?.scale(1.0 / factor))
        }
        _ => {
            require_inside(f, grid)?;
            solve_wk(k, &f.sample_derivative(grid, d))
        }
    }
}

/// `(-1)^n sum_j C(j+n-1, n-1) f^{(n+d)}(t + j)`, the inverse of `T'` for the `n`-fold
/// power of the unit-interval indicator.
fn shifted_sum(f: &TestFunction, n: u32, d: usize, grid: &Grid) -> Result<SampledFn> {
    f.validate()?;
    let b = f.b();
    let sign = if n.is_multiple_of(2) { 1.0 } else { -1.0 };
    let order = n as usize + d;
    let mut out = SampledFn::zeros(*grid);
    par::fill(out.values_mut(), |i, slot| {
        let t = grid.t(i);
        let mut acc = 0.0;
        let mut j = 0u64;
        while t + (j as f64) < b {
            acc += binomial(j + n as u64 - 1, n as u64 - 1) * f.derivative(t + j as f64, order);
            j += 1;
        }
        *slot = c(sign * acc);
    });
    out.set_support(Some(b.min(grid.horizon())));
    Ok(out)
}

/// `W_k f` for a test function (closed formula when available).
pub fn apply_wk(k: &Kernel, f: &TestFunction, grid: &Grid) -> Result<SampledFn> {
    apply_wk_derivative(k, f, 0, grid)
}

/// Diagonal-weight threshold below which the backward Volterra solve is refused.
pub const CONDITIONING_THRESHOLD: f64 = 1e-8;

/// Solve `f = T'_k g` for `g = W_k f`.
///
/// Kernels with a known inverse (fractional, indicator powers, exponential weights, scalings)
/// use it; otherwise back-substitution from the support end with product weights.
pub fn solve_wk(k: &Kernel, f: &SampledFn) -> Result<SampledFn> {
    let b = f
        .support()
        .ok_or_else(|| Error::HorizonTruncation("W_k needs a support bound on f".into()))?;
    let g = match k {
        Kernel::FractionalJ { alpha } => weyl_sampled(f, *alpha)?,
        Kernel::Heaviside => weyl_sampled(f, 1.0)?,
        Kernel::Indicator01 => shifted_sum_sampled(f, 1),
        Kernel::BoxSpline { order } => shifted_sum_sampled(f, *order),
        Kernel::Scaled { factor, inner } => solve_wk(inner, f)?.scale(1.0 / factor),
        Kernel::ExpWeighted { z, inner } => {
            let z = *z;
            let fz = f.map(|t, v| v * (z * t).exp());
            solve_wk(inner, &fz)?.map(|t, v| v * (-z * t).exp())
        }
        _ => back_substitute(k, f, b)?,
    };
    // difference stencils straddle b; the exact inverse vanishes there
    Ok(g.with_support(b))
}

/// `(-1)^m D^m T'_{j_{m-alpha}} f` on samples.
fn weyl_sampled(f: &SampledFn, alpha: f64) -> Result<SampledFn> {
    let m = alpha.ceil() as u32;
    let mut g = if crate::kernel::is_integer(alpha) {
        f.clone()
    } else {
        dual_convolve_kernel(&Kernel::fractional(m as f64 - alpha), f)?
    };
    for _ in 0..m {
        g = g.derivative4();
    }
    Ok(if m.is_multiple_of(2) { g } else { g.scale(c(-1.0)) })
}

fn shifted_sum_sampled(f: &SampledFn, n: u32) -> SampledFn {
    let grid = *f.grid();
    let mut d = f.clone();
    for _ in 0..n {
        d = d.derivative();
    }
    let sign = if n.is_multiple_of(2) { 1.0 } else { -1.0 };
    let step = 1.0 / grid.dt();
    let aligned = (step - step.round()).abs() < 1e-9;
    let step = step.round() as usize;
    let b = f.support().unwrap_or(grid.horizon());
    let mut out = SampledFn::zeros(grid);
    par::fill(out.values_mut(), |i, slot| {
        let t = grid.t(i);
        let mut acc = C0;
        let mut j = 0u64;
        while t + (j as f64) < b {
            let v = if aligned {
                d.values().get(i + j as usize * step).copied().unwrap_or(C0)
            } else {
                d.interpolate(t + j as f64)
            };
            acc += v * binomial(j + n as u64 - 1, n as u64 - 1);
            j += 1;
        }
        *slot = acc * sign;
    });
    out
}

fn back_substitute(k: &Kernel, f: &SampledFn, b: f64) -> Result<SampledFn> {
    let grid = *f.grid();
    let h = grid.dt();
    let n = grid.n_points();
    if k.is_singular() || k.regular_value_at_zero().norm() < CONDITIONING_THRESHOLD {
        return Err(Error::IllPosed(format!(
            "{} has no known inverse and k(0+) is zero or singular",
            k.tag()
        )));
    }
    let jb = ((b / h) - 1e-9).ceil().max(0.0) as usize;
    let jb = jb.min(n - 1);
    let mom = k.cell_moments(h, jb.max(1))?;
    let avg = mom.mu[0][0] / h;
    if avg.norm() < CONDITIONING_THRESHOLD {
        return Err(Error::IllPosed(format!(
            "{}: first-cell average {:.3e} is below {CONDITIONING_THRESHOLD:e}",
            k.tag(),
            avg.norm()
        )));
    }
    // f_i = sum_{j=i}^{jb-1} (mu0 - mu1)_{j-i} g_j + mu1_{j-i} g_{j+1}
    let lo: Vec<Complex64> = mom.mu.iter().map(|m| m[0] - m[1]).collect();
    let hi: Vec<Complex64> = mom.mu.iter().map(|m| m[1]).collect();
    let fv = f.values();
    let mut g = vec![C0; n];
    if jb == 0 {
        return SampledFn::new(grid, g);
    }
    g[jb] = C0;
    for i in (0..jb).rev() {
        let mut rest = hi[0] * g[i + 1];
        for j in i + 1..jb {
            rest += lo[j - i] * g[j] + hi[j - i] * g[j + 1];
        }
        g[i] = (fv[i] - rest) / lo[0];
    }
    SampledFn::new(grid, g)
}

fn max_gap_upto(a: &SampledFn, b: &SampledFn, upto: f64) -> Result<f64> {
    a.max_abs_diff_upto(b, upto)
}

/// Ladder indices for the structure check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ladder {
    pub n: u32,
    pub m: u32,
}

impl Default for Ladder {
    fn default() -> Self {
        Self { n: 3, m: 1 }
    }
}

/// Structural identities of `W_k` on a test function: derivative commutation,
/// factorisation `W_k f = l o W_{k*l} f`, and the ladder `W_{k^m} f = k^{n-m} o W_{k^n} f`.
pub fn wk_structure_check(
    k: &Kernel,
    l: &Kernel,
    f: &TestFunction,
    ladder: Ladder,
    grid: &Grid,
) -> Result<ResidualReport> {
    require_inside(f, grid)?;
    if ladder.m < 1 || ladder.n < ladder.m {
        return Err(Error::Domain(format!(
            "ladder needs n >= m >= 1, got n={}, m={}",
            ladder.n, ladder.m
        )));
    }
    let b = f.b();
    let wk = apply_wk(k, f, grid)?;

    let lhs = apply_wk_derivative(k, f, 1, grid)?;
    let derivative = max_gap_upto(&lhs, &wk.derivative4(), b)?;

    let kl = k.convolve(l, grid)?;
    let rhs = dual_convolve_kernel(l, &apply_wk(&kl, f, grid)?)?;
    let factorisation = max_gap_upto(&wk, &rhs, b)?;

    let km = k.power(ladder.m, grid)?;
    let kn = k.power(ladder.n, grid)?;
    let lhs = apply_wk(&km, f, grid)?;
    let wn = apply_wk(&kn, f, grid)?;
    let rhs = if ladder.n == ladder.m {
        wn
    } else {
        dual_convolve_kernel(&k.power(ladder.n - ladder.m, grid)?, &wn)?
    };
    let ladder_gap = max_gap_upto(&lhs, &rhs, b)?;

    let scale = wk.max_abs().max(1.0);
    let tol = 10.0 * grid.dt().powi(2) * scale;
    let worst = derivative.max(factorisation).max(ladder_gap);
    Ok(ResidualReport::new("wk_structure", worst, grid, tol)
        .param("n", ladder.n as f64)
        .param("m", ladder.m as f64)
        .extra("derivative", derivative)
        .extra("factorisation", factorisation)
        .extra("ladder", ladder_gap)
        .extra("ladder_depth", ladder.n as f64))
}

/// `||f||_{k, e_beta} = integral_0^inf |W_k f(t)| e^{beta t} dt`.
pub fn dk_norm(k: &Kernel, f: &SampledFn, beta: f64) -> Result<f64> {
    let bound = k.abs_k().max(0.0);
    if !(beta > bound) {
        return Err(Error::Domain(format!(
            "the D_k norm needs beta > max(abs(|k|), 0) = {bound}, got {beta}"
        )));
    }
    let w = solve_wk(k, f)?;
    let grid = w.grid();
    let h = grid.dt();
    let n = grid.n_points();
    let mut acc = 0.0;
    for (i, v) in w.values().iter().enumerate() {
        let wt = if i == 0 || i + 1 == n { 0.5 } else { 1.0 };
        acc += wt * v.norm() * (beta * grid.t(i)).exp();
    }
    Ok(acc * h)
}

/// Compare `k o e_{-lambda}` with `k^(lambda) e_{-lambda}`.
///
/// The exponential is truncated at 90% of the horizon and the comparison runs over the first
/// half of that range (further restricted by the kernel's support). When `k^(lambda) = 0`
/// the dual convolution must vanish there.
pub fn laplace_zero_check(k: &Kernel, lambda: Complex64, grid: &Grid) -> Result<ResidualReport> {
    let abs_k = k.abs_k();
    if !(lambda.re > abs_k) {
        return Err(Error::Domain(format!(
            "Re lambda must exceed abs(k) = {abs_k}, got {}",
            lambda.re
        )));
    }
    let khat = match k {
        Kernel::Sampled(s) => laplace_numeric(s, lambda, None).value,
        _ => k.laplace(lambda)?.ok_or_else(|| {
            Error::Domain(format!("lambda = {lambda} outside the transform's half-plane"))
        })?,
    };
    let cut = 0.9 * grid.horizon();
    let e = SampledFn::from_fn(*grid, |t| (-lambda * t).exp()).with_support(cut);
    let dual = dual_convolve_kernel(k, &e)?;
    let interior = match k.support_end() {
        Some(s) => (cut - s).max(0.0).min(0.5 * cut),
        None => 0.5 * cut,
    };
    let mut residual = 0.0f64;
    let mut dual_max = 0.0f64;
    for i in 0..grid.n_points() {
        let t = grid.t(i);
        if t > interior {
            break;
        }
        let d = dual.at(i);
        residual = residual.max((d - khat * e.at(i)).norm());
        dual_max = dual_max.max(d.norm());
    }
    let no_zero = matches!(k, Kernel::FractionalJ { .. } | Kernel::Heaviside);
    Ok(
        ResidualReport::new("laplace_zero", residual, grid, 10.0 * grid.dt().powi(2))
            .param("lambda_re", lambda.re)
            .param("lambda_im", lambda.im)
            .extra("khat_abs", khat.norm())
            .extra("dual_max_abs", dual_max)
            .extra("interior", interior)
            .extra("no_zero", no_zero as u8 as f64),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(dt: f64, horizon: f64) -> Grid {
        Grid::with_horizon(dt, horizon).unwrap()
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let f = TestFunction::poly_bump(vec![1.0, -0.5, 2.0], 1.5);
        for &t in &[0.05, 0.3, 0.9, 1.3] {
            let d = f.derivatives(t, 3);
            let e = 1e-5;
            for k in 0..3 {
                let fd = (f.derivative(t + e, k) - f.derivative(t - e, k)) / (2.0 * e);
                assert!((fd - d[k + 1]).abs() < 1e-5 * (1.0 + d[k + 1].abs()), "t={t} k={k}");
            }
        }
        assert_eq!(f.derivatives(1.5, 4), vec![0.0; 5]);
        assert!((f.eval(0.0) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn shift_moves_support() {
        let f = TestFunction::bump(2.0).shifted(0.5).unwrap();
        assert_eq!(f.b(), 1.5);
        assert_eq!(f.eval(0.2), TestFunction::bump(2.0).eval(0.7));
        assert!(TestFunction::bump(1.0).shifted(1.0).is_err());
    }

    #[test]
    fn heaviside_tk_is_tail_integral() {
        let g = grid(1e-3, 2.0);
        let f = TestFunction::standard();
        let tf = apply_tk(&Kernel::Heaviside, &f, &g).unwrap();
        let total = integrate_singular(0.0, 1.0, 0.01, None, None, |s| c(f.eval(s)));
        assert!((tf.at(0) - total).norm() < 1e-9);
        assert!(tf.max_abs_beyond(1.0) == 0.0);
    }

    #[test]
    fn weyl_order_one_is_minus_derivative() {
        let g = grid(1e-3, 2.0);
        let f = TestFunction::poly_bump(vec![1.0, 1.0], 1.0);
        let w = weyl_derivative(&f, 1.0, &g).unwrap();
        for i in (0..g.n_points()).step_by(37) {
            assert_eq!(w.at(i).re, -f.derivative(g.t(i), 1));
        }
    }

    #[test]
    fn half_weyl_twice_is_minus_derivative() {
        let g = grid(1e-3, 2.0);
        let f = TestFunction::standard();
        let w = weyl_derivative(&f, 0.5, &g).unwrap();
        let ww = solve_wk(&Kernel::fractional(0.5), &w).unwrap();
        let gap = ww.max_abs_diff(&weyl_derivative(&f, 1.0, &g).unwrap()).unwrap();
        assert!(gap < 1e-3, "{gap}");
    }

    #[test]
    fn indicator_inverse_matches_series() {
        let g = grid(1e-3, 4.0);
        let f = TestFunction::poly_bump(vec![1.0, 0.3], 2.5);
        let tf = apply_tk(&Kernel::Indicator01, &f, &g).unwrap();
        let back = solve_wk(&Kernel::Indicator01, &tf).unwrap();
        let gap = back.max_abs_diff(&f.sample(&g)).unwrap();
        assert!(gap < 1e-4, "{gap}");
    }

    #[test]
    fn back_substitution_roundtrip() {
        let g = grid(1e-3, 2.0);
        let k = Kernel::Sum {
            terms: vec![Kernel::Heaviside, Kernel::Indicator01],
        };
        let f = TestFunction::standard();
        let tf = apply_tk(&k, &f, &g).unwrap();
        let back = solve_wk(&k, &tf).unwrap();
        let gap = back.max_abs_diff(&f.sample(&g)).unwrap();
        assert!(gap < 1e-5, "{gap}");
    }

    #[test]
    fn ill_posed_kernels_are_refused() {
        let g = grid(1e-3, 2.0);
        let f = TestFunction::standard().sample(&g);
        let heat = Kernel::HeatBoundary { a: 1.0 };
        assert!(matches!(solve_wk(&heat, &f), Err(Error::IllPosed(_))));
    }

    #[test]
    fn dk_norm_of_integrated_function() {
        let g = grid(1e-3, 2.0);
        let phi = TestFunction::standard();
        let f = apply_tk(&Kernel::Heaviside, &phi, &g).unwrap();
        let k = Kernel::fractional(1.0);
        assert!(dk_norm(&k, &f, 0.0).is_err());
        let got = dk_norm(&k, &f, 1.0).unwrap();
        let want = integrate_singular(0.0, 1.0, 0.01, None, None, |s| c(phi.eval(s) * s.exp()));
        assert!((got - want.re).abs() < 1e-5, "{got} {want}");
        let twice = dk_norm(&k, &f.scale(c(-2.0)), 1.0).unwrap();
        assert!((twice - 2.0 * got).abs() < 1e-12 * got);
    }

    #[test]
    fn heaviside_dual_of_exponential() {
        let g = grid(1e-2, 40.0);
        let r = laplace_zero_check(&Kernel::Heaviside, c(1.0), &g).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.extras["no_zero"], 1.0);
    }

    #[test]
    fn structure_checks_for_integer_and_half_orders() {
        let g = grid(1e-3, 2.0);
        let f = TestFunction::standard();
        let one = Kernel::fractional(1.0);
        let r = wk_structure_check(&one, &one, &f, Ladder::default(), &g).unwrap();
        assert!(r.passed, "{r:?}");
        let r = wk_structure_check(&one, &Kernel::fractional(0.5), &f, Ladder::default(), &g)
            .unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.extras["factorisation"] < 1e-5);
    }

    #[test]
    fn tk_commutes_with_shifts() {
        let g = grid(1e-3, 3.0);
        let f = TestFunction::poly_bump(vec![0.5, 1.0], 2.0);
        let u = 0.25;
        let lhs = apply_tk(&Kernel::Indicator01, &f.shifted(u).unwrap(), &g).unwrap();
        let rhs = apply_tk(&Kernel::Indicator01, &f, &g).unwrap().shift(u).unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-6);
    }

    #[test]
    fn operators_preserve_support() {
        let g = grid(1e-3, 3.0);
        let f = TestFunction::bump(1.3);
        for k in [Kernel::fractional(0.5), Kernel::Indicator01, Kernel::Heaviside] {
            let tf = apply_tk(&k, &f, &g).unwrap();
            assert_eq!(tf.max_abs_beyond(1.3), 0.0);
            assert_eq!(solve_wk(&k, &tf).unwrap().max_abs_beyond(1.3), 0.0);
        }
    }

    #[test]
    fn dual_convolution_vanishes_at_a_transform_zero() {
        // smoothed (indicator of [0,1]) - (indicator of [1,2]); its transform vanishes on 2 pi i Z
        let g = grid(1e-3, 12.0);
        let mollifier = |t: f64| {
            if t > 0.0 && t < 0.2 {
                (std::f64::consts::PI * t / 0.2).sin().powi(2) / 0.1
            } else {
                0.0
            }
        };
        let raw = SampledFn::from_real_fn(g, |t| {
            if t < 1.0 {
                1.0
            } else if t < 2.0 {
                -1.0
            } else {
                0.0
            }
        });
        let kern = crate::kernel_algebra::convolve(&raw, &SampledFn::from_real_fn(g, mollifier))
            .unwrap()
            .with_support(2.2);
        let khat = |z: Complex64| laplace_numeric(&kern, z, None).value;
        let mut z = Complex64::new(0.0, 6.0);
        for _ in 0..30 {
            let e = 1e-6;
            let d = (khat(z + e) - khat(z - e)) / (2.0 * e);
            z -= khat(z) / d;
        }
        // the exact transform has a double zero at 2 pi i, which sampling splits by O(sqrt(dt))
        assert!((z - Complex64::new(0.0, 2.0 * std::f64::consts::PI)).norm() < 0.1, "{z}");
        let r = laplace_zero_check(&Kernel::Sampled(kern), z, &g).unwrap();
        assert!(r.extras["khat_abs"] < 1e-9, "{r:?}");
        assert!(r.extras["dual_max_abs"] < 1e-4, "{r:?}");
    }

    #[test]
    fn fractional_kernels_report_no_zero() {
        let g = grid(1e-2, 20.0);
        let r = laplace_zero_check(&Kernel::fractional(0.5), c(2.0), &g).unwrap();
        assert_eq!(r.extras["no_zero"], 1.0);
        assert!((r.extras["khat_abs"] - 2f64.powf(-0.5)).abs() < 1e-12);
    }

    #[test]
    fn serde_descriptor_roundtrip() {
        let f = TestFunction::poly_bump(vec![1.0, 2.0], 1.5);
        let s = serde_json::to_string(&f).unwrap();
        assert!(s.contains("\"form\":\"poly_bump\""));
        let back: TestFunction = serde_json::from_str(&s).unwrap();
        assert_eq!(back, f);
    }
}
