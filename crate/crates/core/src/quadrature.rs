//! Quadrature building blocks: Gauss-Legendre cells, product-integration weights,
//! exponential phi-functions and the Riemann zeta values used for endpoint corrections.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use statrs::function::gamma::gamma;

const C0: Complex64 = Complex64::new(0.0, 0.0);

/// 8-point Gauss-Legendre rule on `[-1, 1]`, positive half.
const GL8_X: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_W: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Gauss-Legendre nodes and weights mapped onto `[a, b]`.
pub fn gauss_legendre(a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    (0..8).map(move |i| {
        let (x, w) = (GL8_X[i % 4], GL8_W[i % 4]);
        let x = if i < 4 { -x } else { x };
        (c + h * x, h * w)
    })
}

/// `integral_a^b f` with one Gauss-Legendre panel per sub-interval of length `<= panel`.
pub fn integrate_panels(a: f64, b: f64, panel: f64, f: impl Fn(f64) -> Complex64) -> Complex64 {
    if b <= a {
        return C0;
    }
    let n = ((b - a) / panel).ceil().max(1.0) as usize;
    let h = (b - a) / n as f64;
    let mut acc = C0;
    for p in 0..n {
        let lo = a + p as f64 * h;
        for (x, w) in gauss_legendre(lo, lo + h) {
            acc += f(x) * w;
        }
    }
    acc
}

/// Per-cell kernel moments `mu_q(m) = integral_0^dt k(m dt + v) (v/dt)^q dv`, `q = 0, 1, 2`.
///
/// These are the weights of the product-integration rules: the kernel is integrated
/// exactly (to Gauss-Legendre accuracy) against a polynomial interpolant of the other factor.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMoments {
    pub dt: f64,
    pub mu: Vec<[Complex64; 3]>,
}

impl CellMoments {
    pub fn n_cells(&self) -> usize {
        self.mu.len()
    }

    /// `integral_0^{t_i} k` for every grid index `i` (length `n_cells + 1`).
    pub fn running_integral(&self) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.mu.len() + 1);
        let mut acc = C0;
        out.push(acc);
        for m in &self.mu {
            acc += m[0];
            out.push(acc);
        }
        out
    }

    pub fn scaled(mut self, c: Complex64) -> Self {
        for m in &mut self.mu {
            for q in m.iter_mut() {
                *q *= c;
            }
        }
        self
    }
}

/// Accumulate `integral_{s_lo}^{s_hi} k(t_i - s) S(s) ds` into `out`.
///
/// `data` holds `stride` interleaved components per grid point. `S` is interpolated by a
/// quadratic through three neighbouring nodes, inside `[lo, hi]` unless it spans a single cell.
pub fn partial_conv(
    w: &CellMoments,
    data: &[Complex64],
    stride: usize,
    i: usize,
    lo: usize,
    hi: usize,
    out: &mut [Complex64],
) {
    debug_assert!(lo <= hi && hi <= i);
    if hi <= lo {
        return;
    }
    let nodes = data.len() / stride;
    for j in lo..hi {
        let [m0, m1, m2] = w.mu[i - j - 1];
        let forward = j + 2 <= hi || (hi - lo == 1 && j + 2 < nodes);
        let backward = j >= 1 && (j > lo || hi - lo == 1);
        if !forward && !backward {
            axpy(out, m0 - m1, &data[(j + 1) * stride..(j + 2) * stride]);
            axpy(out, m1, &data[j * stride..(j + 1) * stride]);
        } else if forward {
            axpy(out, m0 - m2, &data[(j + 1) * stride..(j + 2) * stride]);
            axpy(out, (m2 + m1) * 0.5, &data[j * stride..(j + 1) * stride]);
            axpy(out, (m2 - m1) * 0.5, &data[(j + 2) * stride..(j + 3) * stride]);
        } else {
            axpy(
                out,
                (m2 - m1 * 3.0 + m0 * 2.0) * 0.5,
                &data[(j + 1) * stride..(j + 2) * stride],
            );
            axpy(out, m1 * 2.0 - m2, &data[j * stride..(j + 1) * stride]);
            axpy(out, (m2 - m1) * 0.5, &data[(j - 1) * stride..j * stride]);
        }
    }
}

/// Accumulate `integral_{t_i}^{t_upto} k(s - t_i) g(s) ds` into `out`.
pub fn partial_dual(
    w: &CellMoments,
    data: &[Complex64],
    stride: usize,
    i: usize,
    upto: usize,
    out: &mut [Complex64],
) {
    if upto <= i {
        return;
    }
    let linear = upto - i == 1;
    for j in i..upto {
        let [m0, m1, m2] = w.mu[j - i];
        if linear {
            axpy(out, m0 - m1, &data[j * stride..(j + 1) * stride]);
            axpy(out, m1, &data[(j + 1) * stride..(j + 2) * stride]);
        } else if j + 2 <= upto {
            axpy(
                out,
                (m2 - m1 * 3.0 + m0 * 2.0) * 0.5,
                &data[j * stride..(j + 1) * stride],
            );
            axpy(out, m1 * 2.0 - m2, &data[(j + 1) * stride..(j + 2) * stride]);
            axpy(out, (m2 - m1) * 0.5, &data[(j + 2) * stride..(j + 3) * stride]);
        } else {
            axpy(out, (m2 - m1) * 0.5, &data[(j - 1) * stride..j * stride]);
            axpy(out, m0 - m2, &data[j * stride..(j + 1) * stride]);
            axpy(out, (m2 + m1) * 0.5, &data[(j + 1) * stride..(j + 2) * stride]);
        }
    }
}

#[inline]
pub fn axpy(out: &mut [Complex64], a: Complex64, x: &[Complex64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

/// Composite Simpson weights for `n` samples spaced `h` (3/8 rule on the last panel when the
/// number of intervals is odd; trapezoid for two samples).
pub fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; n];
    match n {
        0 | 1 => {}
        2 => {
            w[0] = h / 2.0;
            w[1] = h / 2.0;
        }
        3 => {
            w[0] = h / 3.0;
            w[1] = 4.0 * h / 3.0;
            w[2] = h / 3.0;
        }
        _ => {
            let intervals = n - 1;
            let simpson_end = if intervals.is_multiple_of(2) { n - 1 } else { n - 4 };
            for k in (0..simpson_end).step_by(2) {
                w[k] += h / 3.0;
                w[k + 1] += 4.0 * h / 3.0;
                w[k + 2] += h / 3.0;
            }
            if intervals % 2 == 1 {
                let s = simpson_end;
                w[s] += 3.0 * h / 8.0;
                w[s + 1] += 9.0 * h / 8.0;
                w[s + 2] += 9.0 * h / 8.0;
                w[s + 3] += 3.0 * h / 8.0;
            }
        }
    }
    w
}

/// `phi_1(z) = (e^z - 1) / z`.
pub fn phi1(z: Complex64) -> Complex64 {
    if z.norm() < 0.25 {
        series(z, 1)
    } else {
        (z.exp() - 1.0) / z
    }
}

/// `phi_2(z) = (e^z - 1 - z) / z^2`.
pub fn phi2(z: Complex64) -> Complex64 {
    if z.norm() < 0.25 {
        series(z, 2)
    } else {
        (z.exp() - 1.0 - z) / (z * z)
    }
}

fn series(z: Complex64, shift: u32) -> Complex64 {
    // sum_k z^k / (k + shift)!
    let mut fact: f64 = (1..=shift).map(f64::from).product();
    let mut term = Complex64::new(1.0 / fact, 0.0);
    let mut acc = term;
    for k in 1..24 {
        fact = f64::from(k + shift);
        term = term * z / fact;
        acc += term;
    }
    acc
}

/// Riemann zeta for real `s != 1`.
pub fn zeta(s: f64) -> f64 {
    if s.abs() < 1e-15 {
        return -0.5;
    }
    if s < 0.5 {
        // functional equation
        let one_minus = 1.0 - s;
        return 2f64.powf(s)
            * std::f64::consts::PI.powf(s - 1.0)
            * (std::f64::consts::FRAC_PI_2 * s).sin()
            * gamma(one_minus)
            * zeta(one_minus);
    }
    eta(s) / (1.0 - 2f64.powf(1.0 - s))
}

/// Dirichlet eta by Borwein's accelerated alternating series.
fn eta(s: f64) -> f64 {
    const N: usize = 40;
    let mut d = [0.0f64; N + 1];
    let mut term = 1.0f64;
    let mut acc = term;
    d[0] = acc;
    let n = N as f64;
    for (i, slot) in d.iter_mut().enumerate().skip(1) {
        let fi = i as f64;
        term *= 4.0 * (n + fi - 1.0) * (n - fi + 1.0) / ((2.0 * fi) * (2.0 * fi - 1.0));
        acc += term;
        *slot = acc;
    }
    let dn = d[N];
    let mut sum = 0.0;
    for (k, dk) in d.iter().enumerate().take(N) {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * (dk - dn) / ((k + 1) as f64).powf(s);
    }
    -sum / dn
}


/// Gauss-Jacobi rule for `integral_0^1 x^p g(x) dx` (`p > -1`), as `(node, weight)` pairs.
pub fn gauss_jacobi_unit(p: f64) -> Arc<Vec<(f64, f64)>> {
    type Rule = Arc<Vec<(f64, f64)>>;
    static CACHE: OnceLock<Mutex<HashMap<u64, Rule>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(rule) = cache.lock().expect("rule cache").get(&p.to_bits()) {
        return rule.clone();
    }
    let rule = Arc::new(build_gauss_jacobi(p, 12));
    cache
        .lock()
        .expect("rule cache")
        .insert(p.to_bits(), rule.clone());
    rule
}

fn build_gauss_jacobi(beta: f64, n: usize) -> Vec<(f64, f64)> {
    // Jacobi weight (1 - x)^0 (1 + x)^beta on [-1, 1], Golub-Welsch.
    let alpha = 0.0;
    let ab = alpha + beta;
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let kf = k as f64;
        let a = if k == 0 {
            (beta - alpha) / (ab + 2.0)
        } else {
            (beta * beta - alpha * alpha) / ((2.0 * kf + ab) * (2.0 * kf + ab + 2.0))
        };
        j[(k, k)] = a;
        if k + 1 < n {
            let m = kf + 1.0;
            let b = 4.0 * m * (m + alpha) * (m + beta) * (m + ab)
                / ((2.0 * m + ab).powi(2) * (2.0 * m + ab + 1.0) * (2.0 * m + ab - 1.0));
            j[(k, k + 1)] = b.sqrt();
            j[(k + 1, k)] = b.sqrt();
        }
    }
    let mu0 = 2f64.powf(ab + 1.0) * gamma(alpha + 1.0) * gamma(beta + 1.0) / gamma(ab + 2.0);
    let eig = SymmetricEigen::new(j);
    let scale = 2f64.powf(-(beta + 1.0));
    let mut rule: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            ((1.0 + eig.eigenvalues[k]) / 2.0, mu0 * v0 * v0 * scale)
        })
        .collect();
    rule.sort_by(|a, b| a.0.total_cmp(&b.0));
    rule
}

/// `integral_a^b f` where `f` may behave like `(s-a)^pl` and/or `(b-s)^pr` at the ends.
///
/// End panels use Gauss-Jacobi rules matched to the endpoint power, interior panels plain
/// Gauss-Legendre.
pub fn integrate_singular(
    a: f64,
    b: f64,
    panel: f64,
    pl: Option<f64>,
    pr: Option<f64>,
    f: impl Fn(f64) -> Complex64,
) -> Complex64 {
    if b <= a {
        return C0;
    }
    let n = ((b - a) / panel).ceil().max(2.0) as usize;
    let h = (b - a) / n as f64;
    let mut acc = C0;
    for p in 0..n {
        let lo = a + p as f64 * h;
        let hi = if p + 1 == n { b } else { lo + h };
        match (p, pl, pr) {
            (0, Some(q), _) => {
                for &(x, w) in gauss_jacobi_unit(q).iter() {
                    let d = h * x;
                    acc += f(lo + d) / d.powf(q) * (w * h.powf(q + 1.0));
                }
            }
            (p, _, Some(q)) if p + 1 == n => {
                for &(x, w) in gauss_jacobi_unit(q).iter() {
                    let d = h * x;
                    acc += f(hi - d) / d.powf(q) * (w * h.powf(q + 1.0));
                }
            }
            _ => {
                for (x, w) in gauss_legendre(lo, hi) {
                    acc += f(x) * w;
                }
            }
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_integrates_degree_15_exactly() {
        let got: f64 = gauss_legendre(0.0, 2.0).map(|(x, w)| w * x.powi(15)).sum();
        assert_relative_eq!(got, 2f64.powi(16) / 16.0, max_relative = 1e-13);
    }

    #[test]
    fn zeta_known_values() {
        assert_relative_eq!(zeta(2.0), std::f64::consts::PI.powi(2) / 6.0, epsilon = 1e-13);
        assert_relative_eq!(zeta(0.0), -0.5, epsilon = 1e-15);
        assert_relative_eq!(zeta(-1.0), -1.0 / 12.0, epsilon = 1e-12);
        // zeta(1/2) = -1.4603545088095868...
        assert_relative_eq!(zeta(0.5), -1.460_354_508_809_586_8, epsilon = 1e-12);
        // zeta(-1/2) = -0.2078862249773545...
        assert_relative_eq!(zeta(-0.5), -0.207_886_224_977_354_6, epsilon = 1e-12);
    }

    #[test]
    fn phi_functions_match_direct_formula() {
        for z in [
            Complex64::new(0.3, 0.1),
            Complex64::new(-2.0, 5.0),
            Complex64::new(0.2, -0.1),
        ] {
            let direct1 = (z.exp() - 1.0) / z;
            let direct2 = (z.exp() - 1.0 - z) / (z * z);
            assert!((phi1(z) - direct1).norm() < 1e-12);
            assert!((phi2(z) - direct2).norm() < 1e-12);
        }
        assert!((phi1(Complex64::new(0.0, 0.0)) - 1.0).norm() < 1e-16);
        assert!((phi2(Complex64::new(0.0, 0.0)) - 0.5).norm() < 1e-16);
    }

    #[test]
    fn simpson_weights_integrate_cubics() {
        for n in [2usize, 3, 4, 5, 6, 11, 12] {
            let h = 0.1;
            let w = simpson_weights(n, h);
            let b = (n - 1) as f64 * h;
            let got: f64 = w.iter().enumerate().map(|(i, w)| w * (i as f64 * h).powi(3)).sum();
            let exact = b.powi(4) / 4.0;
            let tol = if n == 2 { 1e-2 } else { 1e-13 };
            assert!((got - exact).abs() < tol, "n={n} got {got} exact {exact}");
        }
    }

    fn moments_const(dt: f64, n: usize) -> CellMoments {
        let c = Complex64::new(1.0, 0.0);
        CellMoments {
            dt,
            mu: vec![[c * dt, c * dt / 2.0, c * dt / 3.0]; n],
        }
    }

    #[test]
    fn partial_conv_exact_for_quadratics() {
        // k = 1, S(s) = s^2: integral_{lo}^{hi} s^2 ds
        let dt = 0.1;
        let w = moments_const(dt, 30);
        let data: Vec<Complex64> = (0..31).map(|i| Complex64::new((i as f64 * dt).powi(2), 0.0)).collect();
        for (lo, hi) in [(0usize, 1usize), (0, 2), (3, 7), (0, 30), (5, 6)] {
            let mut out = [C0];
            partial_conv(&w, &data, 1, 30, lo, hi, &mut out);
            let (a, b) = (lo as f64 * dt, hi as f64 * dt);
            let exact = (b.powi(3) - a.powi(3)) / 3.0;
            let tol = if hi - lo == 1 { 1e-3 } else { 1e-14 };
            assert!((out[0].re - exact).abs() < tol, "{lo}..{hi}: {} vs {exact}", out[0].re);
        }
    }

    #[test]
    fn partial_dual_exact_for_quadratics() {
        let dt = 0.1;
        let w = moments_const(dt, 30);
        let data: Vec<Complex64> = (0..31).map(|i| Complex64::new((i as f64 * dt).powi(2), 0.0)).collect();
        for (i, upto) in [(0usize, 30usize), (4, 9), (10, 12)] {
            let mut out = [C0];
            partial_dual(&w, &data, 1, i, upto, &mut out);
            let (a, b) = (i as f64 * dt, upto as f64 * dt);
            let exact = (b.powi(3) - a.powi(3)) / 3.0;
            assert!((out[0].re - exact).abs() < 1e-13);
        }
    }

    #[test]
    fn gauss_jacobi_exact_for_weighted_polynomials() {
        for p in [-0.5, -0.3, 0.4, 0.0] {
            let rule = gauss_jacobi_unit(p);
            for deg in 0..10 {
                let got: f64 = rule.iter().map(|(x, w)| w * x.powi(deg)).sum();
                let exact = 1.0 / (p + deg as f64 + 1.0);
                assert!((got - exact).abs() < 1e-13, "p={p} deg={deg}");
            }
        }
    }

    #[test]
    fn singular_integration_of_beta_function() {
        // integral_0^1 s^{-1/2} (1-s)^{-0.3} ds = B(1/2, 0.7)
        let got = integrate_singular(0.0, 1.0, 0.25, Some(-0.5), Some(-0.3), |s| {
            Complex64::new(s.powf(-0.5) * (1.0 - s).powf(-0.3), 0.0)
        });
        let exact = gamma(0.5) * gamma(0.7) / gamma(1.2);
        assert!((got.re - exact).abs() < 1e-12, "{} vs {exact}", got.re);
    }
}
