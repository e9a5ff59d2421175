//! Convolution kernels `k` described analytically, with sampling, cell moments,
//! antiderivatives, Laplace transforms and closed-form convolution powers.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::grid::{Grid, SampledFn};
use crate::quadrature::{integrate_singular, zeta, CellMoments};

const C0: Complex64 = Complex64::new(0.0, 0.0);
const C1: Complex64 = Complex64::new(1.0, 0.0);

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

pub(crate) fn is_integer(x: f64) -> bool {
    (x - x.round()).abs() < 1e-12
}

/// Gevrey sequence `M_j` entering the ultradifferential polynomial through `m_j = M_j / M_{j-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "sequence", rename_all = "snake_case")]
pub enum GevreySequence {
    /// `M_j = (j!)^s`, so `m_j = j^s`.
    FactorialPower { s: f64 },
    /// `M_j = j^{js}`, so `m_j = j^{js} / (j-1)^{(j-1)s}`.
    PowerPower { s: f64 },
}

impl GevreySequence {
    pub fn s(&self) -> f64 {
        match *self {
            GevreySequence::FactorialPower { s } | GevreySequence::PowerPower { s } => s,
        }
    }

    /// Growth exponent `a = 1/s` of `log |P(z)|`.
    pub fn exponent(&self) -> f64 {
        1.0 / self.s()
    }

    pub fn m(&self, j: usize) -> f64 {
        let jf = j as f64;
        match *self {
            GevreySequence::FactorialPower { s } => jf.powf(s),
            GevreySequence::PowerPower { s } => {
                if j == 1 {
                    1.0
                } else {
                    (s * (jf * jf.ln() - (jf - 1.0) * (jf - 1.0).ln())).exp()
                }
            }
        }
    }

    /// Upper bound for `sum_{j > J} 1/m_j` (both sequences satisfy `m_j >= j^s`).
    pub fn tail_sum_bound(&self, trunc: usize) -> f64 {
        let s = self.s();
        (trunc as f64).powf(1.0 - s) / (s - 1.0)
    }
}

/// A truncated infinite product together with a bound on `|full - truncated|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedProduct {
    pub value: Complex64,
    pub tail_bound: f64,
}

/// `P_J(z) = prod_{j=1}^{J} (1 + l z / m_j)` with the bound
/// `|P - P_J| <= |P_J| (exp(l |z| sum_{j>J} 1/m_j) - 1)`.
pub fn ultradifferential_polynomial(
    seq: GevreySequence,
    l: f64,
    trunc: usize,
    z: Complex64,
) -> TruncatedProduct {
    // Summing logarithms keeps the rounding error at ~sqrt(J) ulp for long products.
    let use_log = z.re >= 0.0;
    let mut direct = C1;
    let (mut re, mut re_c, mut im, mut im_c) = (0.0, 0.0, 0.0, 0.0);
    for j in 1..=trunc {
        let u = z * (l / seq.m(j));
        if use_log {
            let lr = 0.5 * (2.0 * u.re + u.re * u.re + u.im * u.im).ln_1p();
            let li = u.im.atan2(1.0 + u.re);
            kahan(&mut re, &mut re_c, lr);
            kahan(&mut im, &mut im_c, li);
        } else {
            direct *= C1 + u;
        }
    }
    let value = if use_log {
        Complex64::new(re, im).exp()
    } else {
        direct
    };
    let tail = l * z.norm() * seq.tail_sum_bound(trunc);
    TruncatedProduct {
        value,
        tail_bound: value.norm() * tail.exp_m1(),
    }
}

fn kahan(sum: &mut f64, comp: &mut f64, x: f64) {
    let y = x - *comp;
    let t = *sum + y;
    *comp = (t - *sum) - y;
    *sum = t;
}

/// Truncated Baumer transform `K(lambda) = lambda^{-2} prod_{n=0}^{N} (n^2 - lambda)/(n^2 + lambda)`.
pub fn baumer_product(trunc: usize, lambda: Complex64) -> TruncatedProduct {
    let mut value = C1 / (lambda * lambda);
    for n in 0..=trunc {
        let n2 = (n * n) as f64;
        value *= (c(n2) - lambda) / (c(n2) + lambda);
    }
    let lam = lambda.norm();
    let nf = trunc as f64;
    let tail_bound = if nf * nf >= 2.0 * lam && trunc > 0 {
        value.norm() * (4.0 * lam / nf).exp_m1()
    } else {
        f64::INFINITY
    };
    TruncatedProduct { value, tail_bound }
}

/// Which one-sided value to use at a jump of the kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Mid,
}

/// Kernel `k` of a convolution product, described analytically where possible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    /// `j_alpha(t) = t^{alpha-1} / Gamma(alpha)`.
    FractionalJ { alpha: f64 },
    /// The constant function 1.
    Heaviside,
    /// `e^{z t} inner(t)`.
    ExpWeighted { z: Complex64, inner: Box<Kernel> },
    /// Indicator of `(0, 1)`.
    Indicator01,
    /// Cardinal B-spline of the given order, the `order`-fold power of the indicator of `(0, 1)`.
    BoxSpline { order: u32 },
    /// `e^{-a^2/4t} / (2 sqrt(pi t^3))`, the boundary heat kernel.
    HeatBoundary { a: f64 },
    /// Kernel known only through its Laplace transform `1/P(lambda)`.
    GevreyProduct {
        #[serde(flatten)]
        sequence: GevreySequence,
        l: f64,
        trunc: usize,
    },
    /// Kernel known only through its truncated Laplace transform.
    BaumerProduct { trunc: usize },
    /// `factor * inner(t)`.
    Scaled { factor: Complex64, inner: Box<Kernel> },
    /// Pointwise sum of kernels.
    Sum { terms: Vec<Kernel> },
    /// Samples on a grid, linearly interpolated, zero beyond the horizon.
    #[serde(skip)]
    Sampled(SampledFn),
}

impl Kernel {
    pub fn fractional(alpha: f64) -> Self {
        Kernel::FractionalJ { alpha }
    }

    pub fn exp_weighted(z: Complex64, inner: Kernel) -> Self {
        Kernel::ExpWeighted {
            z,
            inner: Box::new(inner),
        }
    }

    pub fn scaled(factor: Complex64, inner: Kernel) -> Self {
        Kernel::Scaled {
            factor,
            inner: Box::new(inner),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Kernel::FractionalJ { .. } => "fractional_j",
            Kernel::Heaviside => "heaviside",
            Kernel::ExpWeighted { .. } => "exp_weighted",
            Kernel::Indicator01 => "indicator01",
            Kernel::BoxSpline { .. } => "box_spline",
            Kernel::HeatBoundary { .. } => "heat_boundary",
            Kernel::GevreyProduct { .. } => "gevrey_product",
            Kernel::BaumerProduct { .. } => "baumer_product",
            Kernel::Scaled { .. } => "scaled",
            Kernel::Sum { .. } => "sum",
            Kernel::Sampled(_) => "sampled",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Kernel::FractionalJ { alpha } if !(alpha.is_finite() && *alpha > 0.0) => Err(
                Error::Domain(format!("fractional kernel needs alpha > 0, got {alpha}")),
            ),
            Kernel::BoxSpline { order } if *order == 0 => {
                Err(Error::Domain("box spline order must be at least 1".into()))
            }
            Kernel::HeatBoundary { a } if !(a.is_finite() && *a > 0.0) => Err(Error::Domain(
                format!("heat boundary kernel needs a > 0, got {a}"),
            )),
            Kernel::GevreyProduct { sequence, l, trunc } => {
                if !(sequence.s() > 1.0) {
                    return Err(Error::Domain(format!(
                        "Gevrey exponent s must exceed 1, got {}",
                        sequence.s()
                    )));
                }
                if !(*l > 0.0) || *trunc == 0 {
                    return Err(Error::Domain("Gevrey product needs l > 0 and trunc >= 1".into()));
                }
                Ok(())
            }
            Kernel::ExpWeighted { inner, .. } | Kernel::Scaled { inner, .. } => inner.validate(),
            Kernel::Sum { terms } => {
                if terms.is_empty() {
                    return Err(Error::Empty("sum kernel has no terms".into()));
                }
                terms.iter().try_for_each(Kernel::validate)
            }
            _ => Ok(()),
        }
    }

    /// False for kernels only known through their Laplace transform.
    pub fn has_time_domain(&self) -> bool {
        match self {
            Kernel::GevreyProduct { .. } | Kernel::BaumerProduct { .. } => false,
            Kernel::ExpWeighted { inner, .. } | Kernel::Scaled { inner, .. } => {
                inner.has_time_domain()
            }
            Kernel::Sum { terms } => terms.iter().all(Kernel::has_time_domain),
            _ => true,
        }
    }

    fn require_time_domain(&self) -> Result<()> {
        if self.has_time_domain() {
            Ok(())
        } else {
            Err(Error::NoTimeDomain(format!(
                "kernel '{}' is only available through its Laplace transform",
                self.tag()
            )))
        }
    }

    /// Value at `t > 0`; the average of both one-sided limits at jumps. Zero for `t < 0`.
    pub fn eval(&self, t: f64) -> Result<Complex64> {
        self.require_time_domain()?;
        Ok(self.eval_side(t, Side::Mid))
    }

    /// One-sided value; callers must have checked [`Kernel::has_time_domain`].
    pub fn eval_side(&self, t: f64, side: Side) -> Complex64 {
        if t < 0.0 {
            return C0;
        }
        let jump = |at: f64, inside: bool| -> Complex64 {
            // value of an indicator-like factor that is 1 just left of `at` and 0 after
            if t < at {
                c(inside as u8 as f64)
            } else if t > at {
                C0
            } else {
                match side {
                    Side::Left => C1,
                    Side::Right => C0,
                    Side::Mid => c(0.5),
                }
            }
        };
        match self {
            Kernel::FractionalJ { alpha } => {
                if t == 0.0 {
                    return if *alpha == 1.0 { C1 } else if *alpha > 1.0 { C0 } else { c(f64::INFINITY) };
                }
                c(t.powf(alpha - 1.0) / gamma(*alpha))
            }
            Kernel::Heaviside => C1,
            Kernel::ExpWeighted { z, inner } => (z * t).exp() * inner.eval_side(t, side),
            Kernel::Indicator01 => jump(1.0, true),
            Kernel::BoxSpline { order } => box_spline(*order, t, side),
            Kernel::HeatBoundary { a } => {
                if t <= 0.0 {
                    return C0;
                }
                c((-a * a / (4.0 * t)).exp() / (2.0 * (std::f64::consts::PI * t.powi(3)).sqrt()))
            }
            Kernel::Scaled { factor, inner } => factor * inner.eval_side(t, side),
            Kernel::Sum { terms } => terms.iter().map(|k| k.eval_side(t, side)).sum(),
            Kernel::Sampled(f) => {
                if t > f.grid().horizon() {
                    C0
                } else {
                    f.interpolate(t)
                }
            }
            Kernel::GevreyProduct { .. } | Kernel::BaumerProduct { .. } => c(f64::NAN),
        }
    }

    /// Interior points where the kernel jumps or loses smoothness.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = match self {
            Kernel::Indicator01 => vec![1.0],
            Kernel::BoxSpline { order } => (1..=*order).map(f64::from).collect(),
            Kernel::ExpWeighted { inner, .. } | Kernel::Scaled { inner, .. } => inner.breakpoints(),
            Kernel::Sum { terms } => terms.iter().flat_map(Kernel::breakpoints).collect(),
            _ => Vec::new(),
        };
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    /// End of the support, if compact.
    pub fn support_end(&self) -> Option<f64> {
        match self {
            Kernel::Indicator01 => Some(1.0),
            Kernel::BoxSpline { order } => Some(f64::from(*order)),
            Kernel::ExpWeighted { inner, .. } | Kernel::Scaled { inner, .. } => inner.support_end(),
            Kernel::Sum { terms } => terms
                .iter()
                .map(Kernel::support_end)
                .try_fold(0.0f64, |acc, b| b.map(|b| acc.max(b))),
            Kernel::Sampled(f) => Some(f.support().unwrap_or(f.grid().horizon())),
            _ => None,
        }
    }

    /// Non-smooth power terms `coef * t^gamma` near 0 with non-integer `gamma < 1`.
    pub fn singular_terms(&self) -> Vec<(Complex64, f64)> {
        match self {
            Kernel::FractionalJ { alpha } if !is_integer(*alpha) && *alpha < 2.0 => {
                vec![(c(1.0 / gamma(*alpha)), alpha - 1.0)]
            }
            Kernel::ExpWeighted { z, inner } => {
                let mut out = Vec::new();
                for (coef, g) in inner.singular_terms() {
                    let mut term = coef;
                    let mut p = 0;
                    while g + (p as f64) < 1.0 {
                        out.push((term, g + p as f64));
                        p += 1;
                        term = term * z / p as f64;
                    }
                }
                out
            }
            Kernel::Scaled { factor, inner } => inner
                .singular_terms()
                .into_iter()
                .map(|(a, g)| (a * factor, g))
                .collect(),
            Kernel::Sum { terms } => terms.iter().flat_map(Kernel::singular_terms).collect(),
            _ => Vec::new(),
        }
    }

    /// Smallest non-integer power in the expansion at 0.
    pub fn leading_power(&self) -> Option<f64> {
        self.singular_terms()
            .into_iter()
            .map(|(_, g)| g)
            .min_by(f64::total_cmp)
    }

    /// Power `g` such that `k(t) ~ t^g` governs the smoothness at the origin; used to pick
    /// Gauss-Jacobi rules for integrals starting at 0.
    pub fn endpoint_power(&self) -> Option<f64> {
        match self {
            Kernel::FractionalJ { alpha } if !is_integer(*alpha) => Some(alpha - 1.0),
            Kernel::ExpWeighted { inner, .. } | Kernel::Scaled { inner, .. } => inner.endpoint_power(),
            Kernel::Sum { terms } => terms
                .iter()
                .filter_map(Kernel::endpoint_power)
                .min_by(f64::total_cmp),
            _ => None,
        }
    }

    /// Unbounded at `0+`.
    pub fn is_singular(&self) -> bool {
        self.leading_power().is_some_and(|g| g < 0.0)
    }

    /// `lim_{t -> 0+} (k(t) - sum of singular terms)`.
    pub fn regular_value_at_zero(&self) -> Complex64 {
        match self {
            Kernel::FractionalJ { alpha } => {
                if (*alpha - 1.0).abs() < 1e-15 {
                    C1
                } else {
                    C0
                }
            }
            Kernel::Heaviside | Kernel::Indicator01 => C1,
            Kernel::BoxSpline { order } => c((*order == 1) as u8 as f64),
            Kernel::HeatBoundary { .. } => C0,
            Kernel::ExpWeighted { inner, .. } => inner.regular_value_at_zero(),
            Kernel::Scaled { factor, inner } => factor * inner.regular_value_at_zero(),
            Kernel::Sum { terms } => terms.iter().map(Kernel::regular_value_at_zero).sum(),
            Kernel::Sampled(f) => f.at(0),
            Kernel::GevreyProduct { .. } | Kernel::BaumerProduct { .. } => c(f64::NAN),
        }
    }

    /// Samples ready for trapezoidal convolution.
    ///
    /// Interior samples are point values (averaged at jumps). For kernels with non-smooth
    /// power terms `c t^g` at the origin, the first two samples carry the generalized
    /// Euler-Maclaurin (zeta) endpoint corrections, so trapezoidal sums keep second order.
    pub fn sample(&self, grid: &Grid) -> Result<SampledFn> {
        if let Kernel::Sampled(f) = self {
            grid.check_same(f.grid())?;
            return Ok(f.clone());
        }
        let mut f = self.sample_points(grid)?;
        let h = grid.dt();
        let vals = f.values_mut();
        for (coef, g) in self.singular_terms() {
            if g < 0.0 {
                vals[0] += coef * (2.0 * h.powf(g) * (zeta(-g - 1.0) - zeta(-g)));
                vals[1] -= coef * (zeta(-g - 1.0) * h.powf(g));
            } else {
                vals[0] -= coef * (2.0 * zeta(-g) * h.powf(g));
            }
        }
        Ok(f)
    }

    /// Plain point values; index 0 holds the regular part at `0+`.
    pub fn sample_points(&self, grid: &Grid) -> Result<SampledFn> {
        self.require_time_domain()?;
        if let Kernel::Sampled(f) = self {
            grid.check_same(f.grid())?;
            return Ok(f.clone());
        }
        let mut f = SampledFn::from_fn(*grid, |t| self.eval_side(t, Side::Mid));
        f.values_mut()[0] = self.regular_value_at_zero();
        if let Some(b) = self.support_end() {
            if b < grid.horizon() {
                f.set_support(Some(b));
            }
        }
        Ok(f)
    }

    /// Cell moments `mu_q(m) = integral_0^dt k(m dt + v) (v/dt)^q dv` for `m < n_cells`.
    pub fn cell_moments(&self, dt: f64, n_cells: usize) -> Result<CellMoments> {
        self.require_time_domain()?;
        let mu = match self {
            Kernel::Scaled { factor, inner } => {
                return Ok(inner.cell_moments(dt, n_cells)?.scaled(*factor));
            }
            Kernel::Sum { terms } => {
                let mut acc = vec![[C0; 3]; n_cells];
                for k in terms {
                    let m = k.cell_moments(dt, n_cells)?;
                    for (a, b) in acc.iter_mut().zip(&m.mu) {
                        for q in 0..3 {
                            a[q] += b[q];
                        }
                    }
                }
                acc
            }
            Kernel::Heaviside => vec![[c(dt), c(dt / 2.0), c(dt / 3.0)]; n_cells],
            Kernel::Sampled(f) => {
                if (f.grid().dt() - dt).abs() > 1e-15 * dt {
                    return Err(Error::GridMismatch {
                        left_dt: f.grid().dt(),
                        left_n: f.grid().n_points(),
                        right_dt: dt,
                        right_n: n_cells + 1,
                    });
                }
                (0..n_cells)
                    .map(|m| {
                        let (a, b) = if m + 1 < f.grid().n_points() {
                            (f.at(m), f.at(m + 1))
                        } else {
                            (C0, C0)
                        };
                        [
                            (a + b) * (dt / 2.0),
                            (a / 6.0 + b / 3.0) * dt,
                            (a / 12.0 + b / 4.0) * dt,
                        ]
                    })
                    .collect()
            }
            _ => {
                let breaks = self.breakpoints();
                let mut out: Vec<[Complex64; 3]> = (0..n_cells)
                    .map(|m| self.cell_moment_gl(dt, m, &breaks))
                    .collect();
                if n_cells > 0 {
                    if let Some(first) = self.first_cell_moments(dt) {
                        out[0] = first;
                    }
                }
                out
            }
        };
        Ok(CellMoments { dt, mu })
    }

    fn cell_moment_gl(&self, dt: f64, m: usize, breaks: &[f64]) -> [Complex64; 3] {
        let a = m as f64 * dt;
        let b = a + dt;
        let mut cuts = vec![a];
        cuts.extend(breaks.iter().copied().filter(|&x| x > a + 1e-14 && x < b - 1e-14));
        cuts.push(b);
        let mut acc = [C0; 3];
        for w in cuts.windows(2) {
            let p = if m == 0 && w[0] == 0.0 { self.endpoint_power() } else { None };
            for (q, slot) in acc.iter_mut().enumerate() {
                *slot += integrate_singular(w[0], w[1], w[1] - w[0], p, None, |s| {
                    self.eval_side(s, Side::Mid) * ((s - a) / dt).powi(q as i32)
                });
            }
        }
        acc
    }

    /// Closed-form first-cell moments for kernels with a power singularity.
    fn first_cell_moments(&self, dt: f64) -> Option<[Complex64; 3]> {
        match self {
            Kernel::FractionalJ { alpha } => {
                let base = dt.powf(*alpha) / gamma(*alpha);
                Some([0, 1, 2].map(|q| c(base / (alpha + q as f64))))
            }
            Kernel::ExpWeighted { z, inner } => match inner.as_ref() {
                Kernel::FractionalJ { alpha } => {
                    // sum_j z^j dt^{alpha+j} / (j! (alpha + j + q) Gamma(alpha))
                    let g = gamma(*alpha);
                    let mut out = [C0; 3];
                    for (q, slot) in out.iter_mut().enumerate() {
                        let mut term = c(dt.powf(*alpha) / g);
                        for j in 0..40 {
                            if j > 0 {
                                term = term * z * dt / j as f64;
                            }
                            let add = term / (alpha + j as f64 + q as f64);
                            *slot += add;
                            if add.norm() < 1e-18 * slot.norm() {
                                break;
                            }
                        }
                    }
                    Some(out)
                }
                _ => None,
            },
            _ => None,
        }
    }

    /// `K(t) = integral_0^t k(s) ds`.
    pub fn antiderivative(&self, t: f64) -> Result<Complex64> {
        self.require_time_domain()?;
        if t <= 0.0 {
            return Ok(C0);
        }
        Ok(match self {
            Kernel::FractionalJ { alpha } => c(t.powf(*alpha) / gamma(alpha + 1.0)),
            Kernel::Heaviside => c(t),
            Kernel::Indicator01 => c(t.min(1.0)),
            Kernel::BoxSpline { order } => box_spline_integral(*order, t),
            Kernel::HeatBoundary { a } => c(erfc(a / (2.0 * t.sqrt())) / a),
            Kernel::Scaled { factor, inner } => factor * inner.antiderivative(t)?,
            Kernel::Sum { terms } => {
                let mut acc = C0;
                for k in terms {
                    acc += k.antiderivative(t)?;
                }
                acc
            }
            Kernel::Sampled(f) => {
                let h = f.grid().dt();
                let t = t.min(f.grid().horizon());
                let i = f.grid().floor_index(t);
                let mut acc = C0;
                for j in 0..i {
                    acc += (f.at(j) + f.at(j + 1)) * (h / 2.0);
                }
                let rest = t - f.grid().t(i);
                if rest > 0.0 {
                    acc += (f.at(i) + f.interpolate(t)) * (rest / 2.0);
                }
                acc
            }
            _ => self.integrate(0.0, t),
        })
    }

    /// `integral_a^b k` by panel quadrature split at breakpoints (Gauss-Jacobi at a singular origin).
    pub fn integrate(&self, a: f64, b: f64) -> Complex64 {
        if b <= a {
            return C0;
        }
        match self {
            Kernel::Sum { terms } => return terms.iter().map(|k| k.integrate(a, b)).sum(),
            Kernel::Scaled { factor, inner } => return inner.integrate(a, b) * factor,
            _ => {}
        }
        let mut cuts = vec![a];
        cuts.extend(self.breakpoints().into_iter().filter(|&x| x > a && x < b));
        cuts.push(b);
        let mut acc = C0;
        for w in cuts.windows(2) {
            let p = if w[0] == 0.0 { self.endpoint_power() } else { None };
            acc += integrate_singular(w[0], w[1], 0.01, p, None, |s| self.eval_side(s, Side::Mid));
        }
        acc
    }

    /// Abscissa of absolute convergence of the Laplace integral of `|k|`.
    pub fn abs_k(&self) -> f64 {
        match self {
            Kernel::FractionalJ { .. } | Kernel::Heaviside | Kernel::HeatBoundary { .. } => 0.0,
            Kernel::ExpWeighted { z, inner } => z.re + inner.abs_k(),
            Kernel::Indicator01 | Kernel::BoxSpline { .. } | Kernel::Sampled(_) => {
                f64::NEG_INFINITY
            }
            Kernel::GevreyProduct { .. } | Kernel::BaumerProduct { .. } => 0.0,
            Kernel::Scaled { inner, .. } => inner.abs_k(),
            Kernel::Sum { terms } => terms.iter().map(Kernel::abs_k).fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Closed-form Laplace transform, `None` when the variant has none.
    pub fn laplace(&self, lambda: Complex64) -> Result<Option<Complex64>> {
        let bound = self.abs_k();
        let entire = bound == f64::NEG_INFINITY;
        let ok = match self {
            Kernel::GevreyProduct { .. } => lambda.re >= 0.0,
            _ => entire || lambda.re > bound,
        };
        if !ok {
            return Err(Error::Domain(format!(
                "Re lambda = {} is outside the half-plane Re lambda > {bound} for kernel '{}'",
                lambda.re,
                self.tag()
            )));
        }
        Ok(match self {
            Kernel::FractionalJ { alpha } => Some(lambda.powf(-alpha)),
            Kernel::Heaviside => Some(C1 / lambda),
            Kernel::ExpWeighted { z, inner } => inner.laplace(lambda - z)?,
            Kernel::Indicator01 => Some(indicator_hat(lambda)),
            Kernel::BoxSpline { order } => Some(indicator_hat(lambda).powu(*order)),
            Kernel::HeatBoundary { a } => Some((-lambda.sqrt() * *a).exp() / *a),
            Kernel::GevreyProduct { sequence, l, trunc } => {
                Some(C1 / ultradifferential_polynomial(*sequence, *l, *trunc, lambda).value)
            }
            Kernel::BaumerProduct { trunc } => Some(baumer_product(*trunc, lambda).value),
            Kernel::Scaled { factor, inner } => inner.laplace(lambda)?.map(|v| v * factor),
            Kernel::Sum { terms } => {
                let mut acc = C0;
                for k in terms {
                    match k.laplace(lambda)? {
                        Some(v) => acc += v,
                        None => return Ok(None),
                    }
                }
                Some(acc)
            }
            Kernel::Sampled(_) => None,
        })
    }

    /// Closed form of `self * other` when one is known.
    pub fn convolve_closed(&self, other: &Kernel) -> Option<Kernel> {
        use Kernel::*;
        let frac = |k: &Kernel| match k {
            FractionalJ { alpha } => Some(*alpha),
            Heaviside => Some(1.0),
            _ => None,
        };
        let boxes = |k: &Kernel| match k {
            Indicator01 => Some(1),
            BoxSpline { order } => Some(*order),
            _ => None,
        };
        if let (Some(a), Some(b)) = (frac(self), frac(other)) {
            return Some(FractionalJ { alpha: a + b });
        }
        if let (Some(a), Some(b)) = (boxes(self), boxes(other)) {
            return Some(BoxSpline { order: a + b });
        }
        match (self, other) {
            (HeatBoundary { a }, HeatBoundary { a: b }) => Some(Kernel::scaled(
                c((a + b) / (a * b)),
                HeatBoundary { a: a + b },
            )),
            (ExpWeighted { z, inner }, ExpWeighted { z: w, inner: i2 }) if z == w => {
                Some(Kernel::exp_weighted(*z, inner.convolve_closed(i2)?))
            }
            (Scaled { factor, inner }, o) | (o, Scaled { factor, inner }) => {
                Some(Kernel::scaled(*factor, inner.convolve_closed(o)?))
            }
            (Sum { terms }, o) | (o, Sum { terms }) => {
                let parts: Option<Vec<Kernel>> = terms.iter().map(|k| k.convolve_closed(o)).collect();
                Some(Sum { terms: parts? })
            }
            _ => None,
        }
    }

    /// Closed form of the `n`-fold convolution power, when available.
    pub fn power_closed(&self, n: u32) -> Option<Kernel> {
        if n == 1 {
            return Some(self.clone());
        }
        use Kernel::*;
        match self {
            FractionalJ { alpha } => Some(FractionalJ { alpha: alpha * f64::from(n) }),
            Heaviside => Some(FractionalJ { alpha: f64::from(n) }),
            Indicator01 => Some(BoxSpline { order: n }),
            BoxSpline { order } => Some(BoxSpline { order: order * n }),
            HeatBoundary { a } => {
                let nf = f64::from(n);
                Some(Kernel::scaled(c(nf * a.powf(1.0 - nf)), HeatBoundary { a: nf * a }))
            }
            ExpWeighted { z, inner } => Some(Kernel::exp_weighted(*z, inner.power_closed(n)?)),
            Scaled { factor, inner } => Some(Kernel::scaled(factor.powu(n), inner.power_closed(n)?)),
            _ => {
                let mut acc = self.clone();
                for _ in 1..n {
                    acc = acc.convolve_closed(self)?;
                }
                Some(acc)
            }
        }
    }

    /// `self * other`, in closed form when possible, otherwise sampled on `grid` by product
    /// quadrature of the less singular factor against the moments of the other.
    pub fn convolve(&self, other: &Kernel, grid: &Grid) -> Result<Kernel> {
        if let Some(k) = self.convolve_closed(other) {
            return Ok(k);
        }
        let (wk, sk) = if other.is_singular() && !self.is_singular() {
            (other, self)
        } else {
            (self, other)
        };
        let samples = sk.sample_points(grid)?;
        let n = grid.n_points();
        let moments = wk.cell_moments(grid.dt(), n - 1)?;
        let data = samples.values();
        let mut out = vec![C0; n];
        crate::par::fill(&mut out, |i, slot| {
            let mut acc = [C0];
            crate::quadrature::partial_conv(&moments, data, 1, i, 0, i, &mut acc);
            *slot = acc[0];
        });
        let mut f = SampledFn::new(*grid, out)?;
        if let (Some(a), Some(b)) = (self.support_end(), other.support_end()) {
            if a + b < grid.horizon() {
                f = f.with_support(a + b);
            }
        }
        Ok(Kernel::Sampled(f))
    }

    /// `k^{*n}` in closed form when available, otherwise by repeated product quadrature.
    pub fn power(&self, n: u32, grid: &Grid) -> Result<Kernel> {
        if n == 0 {
            return Err(Error::Domain("convolution power needs n >= 1".into()));
        }
        if let Some(k) = self.power_closed(n) {
            return Ok(k);
        }
        let mut acc = self.clone();
        for _ in 1..n {
            acc = self.convolve(&acc, grid)?;
        }
        Ok(acc)
    }
}

fn indicator_hat(lambda: Complex64) -> Complex64 {
    if lambda.norm() < 1e-8 {
        C1 - lambda / 2.0
    } else {
        (C1 - (-lambda).exp()) / lambda
    }
}

fn binom(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Cardinal B-spline `M_n(t) = 1/(n-1)! sum_j (-1)^j C(n,j) (t-j)_+^{n-1}`.
fn box_spline(order: u32, t: f64, side: Side) -> Complex64 {
    if order == 1 {
        return if t > 0.0 && t < 1.0 {
            C1
        } else if t == 1.0 {
            match side {
                Side::Left => C1,
                Side::Right => C0,
                Side::Mid => c(0.5),
            }
        } else {
            C0
        };
    }
    if t <= 0.0 || t >= f64::from(order) {
        return C0;
    }
    let mut acc = 0.0;
    for j in 0..=order {
        let x = t - f64::from(j);
        if x > 0.0 {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * binom(order, j) * x.powi(order as i32 - 1);
        }
    }
    c(acc / factorial(order - 1))
}

fn box_spline_integral(order: u32, t: f64) -> Complex64 {
    if t >= f64::from(order) {
        return C1;
    }
    let mut acc = 0.0;
    for j in 0..=order {
        let x = t - f64::from(j);
        if x > 0.0 {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * binom(order, j) * x.powi(order as i32);
        }
    }
    c(acc / factorial(order))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::partial_conv;
    use approx::assert_relative_eq;

    #[test]
    fn laplace_closed_forms() {
        let l = c(2.0);
        assert_relative_eq!(Kernel::fractional(2.0).laplace(l).unwrap().unwrap().re, 0.25);
        let hb = Kernel::HeatBoundary { a: 1.0 }.laplace(c(4.0)).unwrap().unwrap();
        assert_relative_eq!(hb.re, (-2.0f64).exp(), max_relative = 1e-14);
        let e = Kernel::exp_weighted(c(-2.0), Kernel::Heaviside);
        assert_relative_eq!(e.laplace(c(3.0)).unwrap().unwrap().re, 0.2, max_relative = 1e-14);
        assert!(Kernel::Heaviside.laplace(c(-1.0)).is_err());
    }

    #[test]
    fn baumer_vanishes_exactly_at_one() {
        let v = Kernel::BaumerProduct { trunc: 20 }.laplace(c(1.0)).unwrap().unwrap();
        assert_eq!(v, C0);
    }

    #[test]
    fn ultradifferential_polynomial_matches_sinh_product() {
        let seq = GevreySequence::FactorialPower { s: 2.0 };
        let p = ultradifferential_polynomial(seq, 1.0, 10_000_000, c(1.0));
        let exact = std::f64::consts::PI.sinh() / std::f64::consts::PI;
        let err = (p.value.re - exact).abs();
        assert!(err < 1e-6, "err {err}");
        assert!(p.tail_bound >= err, "bound {} err {err}", p.tail_bound);
    }

    #[test]
    fn fractional_power_closed_form() {
        let k = Kernel::fractional(0.5).power_closed(4).unwrap();
        assert_eq!(k, Kernel::fractional(2.0));
        assert_eq!(Kernel::Indicator01.power_closed(3).unwrap(), Kernel::BoxSpline { order: 3 });
    }

    #[test]
    fn heat_boundary_square_matches_scaled_kernel_numerically() {
        // (k_1 * k_1)(t) vs 2 * k_2(t) = (2/1) HB(2) by direct quadrature of the convolution
        let k = Kernel::HeatBoundary { a: 1.0 };
        let closed = k.power_closed(2).unwrap();
        for t in [0.5, 1.0, 2.0, 3.0] {
            let direct = crate::quadrature::integrate_panels(0.0, t, 0.005, |s| {
                k.eval_side(t - s, Side::Mid) * k.eval_side(s, Side::Mid)
            });
            let v = closed.eval(t).unwrap();
            assert!((direct - v).norm() < 1e-9 * v.norm().max(1e-3), "t={t}: {direct} vs {v}");
        }
    }

    #[test]
    fn box_spline_is_indicator_power() {
        // M_2 is the hat function on [0, 2]
        let k = Kernel::BoxSpline { order: 2 };
        assert_relative_eq!(k.eval(0.5).unwrap().re, 0.5);
        assert_relative_eq!(k.eval(1.5).unwrap().re, 0.5);
        assert_relative_eq!(k.antiderivative(2.0).unwrap().re, 1.0, epsilon = 1e-14);
        assert_relative_eq!(k.antiderivative(1.0).unwrap().re, 0.5, epsilon = 1e-14);
    }

    #[test]
    fn antiderivatives_agree_with_generic_integration() {
        let kernels = [
            Kernel::fractional(0.5),
            Kernel::fractional(2.5),
            Kernel::HeatBoundary { a: 1.0 },
            Kernel::BoxSpline { order: 3 },
            Kernel::exp_weighted(c(-1.0), Kernel::fractional(0.5)),
        ];
        for k in &kernels {
            for t in [0.3, 1.0, 2.7] {
                let a = k.antiderivative(t).unwrap();
                let b = k.integrate(0.0, t);
                assert!((a - b).norm() < 1e-9, "{}: t={t}: {a} vs {b}", k.tag());
            }
        }
    }

    #[test]
    fn cell_moments_reproduce_antiderivative() {
        let kernels = [
            Kernel::fractional(0.5),
            Kernel::fractional(1.5),
            Kernel::Indicator01,
            Kernel::exp_weighted(c(-1.0), Kernel::fractional(0.3)),
            Kernel::Sum {
                terms: vec![Kernel::Heaviside, Kernel::fractional(0.5)],
            },
        ];
        let dt = 0.01;
        for k in &kernels {
            let m = k.cell_moments(dt, 200).unwrap();
            let run = m.running_integral();
            for i in [1usize, 7, 100, 200] {
                let exact = k.integrate(0.0, i as f64 * dt);
                assert!((run[i] - exact).norm() < 1e-11, "{} i={i}", k.tag());
            }
        }
    }

    #[test]
    fn corrected_samples_give_second_order_convolution() {
        // trapezoid of j_{1/2} * g with g = cos, oracle by Gauss-Jacobi
        let k = Kernel::fractional(0.5);
        let t = 1.0;
        let exact = integrate_singular(0.0, t, 0.1, None, Some(-0.5), |s| {
            c((t - s).powf(-0.5) / gamma(0.5) * s.cos())
        });
        let mut errs = Vec::new();
        for dt in [0.02, 0.01, 0.005] {
            let grid = Grid::with_horizon(dt, 1.0).unwrap();
            let ks = k.sample(&grid).unwrap();
            let n = grid.n_points() - 1;
            let mut acc = C0;
            for j in 0..=n {
                let w = if j == 0 || j == n { 0.5 } else { 1.0 };
                acc += ks.at(n - j) * (grid.t(j)).cos() * w * dt;
            }
            errs.push((acc - exact).norm());
        }
        let r1 = errs[0] / errs[1];
        let r2 = errs[1] / errs[2];
        assert!(r1 > 3.3 && r2 > 3.3, "ratios {r1} {r2}, errs {errs:?}");
    }

    #[test]
    fn moment_quadrature_is_third_order_for_singular_kernel() {
        let k = Kernel::fractional(0.5);
        let t = 1.0;
        let exact = integrate_singular(0.0, t, 0.1, None, Some(-0.5), |s| {
            c((t - s).powf(-0.5) / gamma(0.5) * s.exp())
        });
        let mut errs = Vec::new();
        for dt in [0.02, 0.01] {
            let grid = Grid::with_horizon(dt, 1.0).unwrap();
            let n = grid.n_points() - 1;
            let m = k.cell_moments(dt, n).unwrap();
            let data: Vec<Complex64> = grid.times().map(|s| c(s.exp())).collect();
            let mut acc = [C0];
            partial_conv(&m, &data, 1, n, 0, n, &mut acc);
            errs.push((acc[0] - exact).norm());
        }
        assert!(errs[1] < 1e-6 && errs[0] / errs[1] > 6.0, "{errs:?}");
    }

    #[test]
    fn kernel_serde_roundtrip() {
        let k = Kernel::exp_weighted(Complex64::new(-1.0, 0.5), Kernel::fractional(0.5));
        let s = serde_json::to_string(&k).unwrap();
        let back: Kernel = serde_json::from_str(&s).unwrap();
        assert_eq!(k, back);
    }
}
