//! The algebra homomorphism `G_k(f) x = integral_0^{n kappa} W_{k^{*n}} f(t) S_{k^{*n}}(t) x dt`
//! over test functions carried with their `T'`-preimages.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::convoluted::{build_convoluted, extend_family, FamilyLadder, SupNorm};
use crate::error::{Error, Result};
use crate::grid::{Grid, SampledFn};
use crate::kernel::Kernel;
use crate::kernel_algebra::{dual_convolve_kernel, ResidualReport};
use crate::operators::{Generator, VectorState};
use crate::par;
use crate::test_functions::{apply_tk, apply_wk_derivative, solve_wk, TestFunction};

const C0: Complex64 = Complex64::new(0.0, 0.0);

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Kernel `k`, generator `A`, and the ladder `S_k, ..., S_{k^{*N}}` built from `S_k` on `[0, tau]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HomomorphismContext {
    ladder: FamilyLadder,
}

impl HomomorphismContext {
    pub fn new(a: &Generator, k: &Kernel, tau: f64, grid: &Grid, max_depth: u32) -> Result<Self> {
        let base = build_convoluted(a, k, tau, grid)?;
        Ok(Self {
            ladder: extend_family(&base, max_depth)?,
        })
    }

    pub fn from_ladder(ladder: FamilyLadder) -> Self {
        Self { ladder }
    }

    pub fn kernel(&self) -> &Kernel {
        self.ladder.base().kernel()
    }

    pub fn generator(&self) -> &Generator {
        self.ladder.base().generator()
    }

    pub fn ladder(&self) -> &FamilyLadder {
        &self.ladder
    }

    pub fn grid(&self) -> &Grid {
        self.ladder.base().grid()
    }

    pub fn kappa(&self) -> f64 {
        self.ladder.kappa()
    }

    pub fn depth(&self) -> u32 {
        self.ladder.depth()
    }

    pub fn dim(&self) -> usize {
        self.ladder.base().dim()
    }

    /// Smallest `n` with `[0, b] subset [0, n kappa]`.
    pub fn smallest_depth(&self, b: f64) -> u32 {
        let n = (b / self.kappa() - 1e-9).ceil().max(1.0) as u32;
        n.max(1)
    }
}

/// A test function `f = T'_{k^{*n}} w` carried with its witness `w = W_{k^{*n}} f`.
#[derive(Debug, Clone, PartialEq)]
pub struct LadderFunction {
    kernel: Kernel,
    depth: u32,
    values: SampledFn,
    witness: SampledFn,
    /// `(phi, d)` when `w = phi^{(d)}` for an analytic test function `phi`.
    source: Option<(TestFunction, usize)>,
}

impl LadderFunction {
    /// `f = T'_{k^{*n}} phi`.
    pub fn constructive(k: &Kernel, n: u32, phi: &TestFunction, grid: &Grid) -> Result<Self> {
        Self::constructive_derivative(k, n, phi, 0, grid)
    }

    /// `f = T'_{k^{*n}} phi^{(d)}`, which is the `d`-th derivative of `T'_{k^{*n}} phi`.
    pub fn constructive_derivative(
        k: &Kernel,
        n: u32,
        phi: &TestFunction,
        d: usize,
        grid: &Grid,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("ladder depth must be >= 1".into()));
        }
        let kn = k.power(n, grid)?;
        let witness = phi.sample_derivative(grid, d);
        let values = if d == 0 {
            apply_tk(&kn, phi, grid)?
        } else {
            dual_convolve_kernel(&kn, &witness)?
        };
        Ok(Self {
            kernel: k.clone(),
            depth: n,
            values,
            witness,
            source: Some((phi.clone(), d)),
        })
    }

    /// Assemble from samples; `witness` must satisfy `values = T'_{k^{*depth}} witness`.
    pub fn from_parts(
        k: &Kernel,
        depth: u32,
        values: SampledFn,
        witness: SampledFn,
    ) -> Result<Self> {
        values.grid().check_same(witness.grid())?;
        if witness.support().is_none() {
            return Err(Error::NoWitness("witness needs a support bound".into()));
        }
        Ok(Self {
            kernel: k.clone(),
            depth,
            values,
            witness,
            source: None,
        })
    }

    /// The zero function, at depth 1.
    pub fn zero(k: &Kernel, grid: &Grid) -> Self {
        let z = SampledFn::zeros(*grid).with_support(0.0);
        Self {
            kernel: k.clone(),
            depth: 1,
            values: z.clone(),
            witness: z,
            source: None,
        }
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn values(&self) -> &SampledFn {
        &self.values
    }

    pub fn witness(&self) -> &SampledFn {
        &self.witness
    }

    pub fn source(&self) -> Option<&(TestFunction, usize)> {
        self.source.as_ref()
    }

    /// Support bound `b` of `f` (and of every witness).
    pub fn support(&self) -> f64 {
        self.witness.support().expect("witness support")
    }

    /// `f'`, with witness `W_{k^{*n}}(f') = (W_{k^{*n}} f)'`.
    pub fn derivative(&self, grid: &Grid) -> Result<Self> {
        match &self.source {
            Some((phi, d)) => Self::constructive_derivative(&self.kernel, self.depth, phi, d + 1, grid),
            None => Err(Error::NoWitness(
                "derivative needs an analytic preimage".into(),
            )),
        }
    }

    /// The same function with its witness at depth `m`: `W_{k^{*(m-n)}} w` going up,
    /// `k^{*(n-m)} o w` going down.
    pub fn at_depth(&self, m: u32, grid: &Grid) -> Result<Self> {
        if m == 0 {
            return Err(Error::Domain("ladder depth must be >= 1".into()));
        }
        let witness = if m == self.depth {
            return Ok(self.clone());
        } else if m > self.depth {
            let up = self.kernel.power(m - self.depth, grid)?;
            match &self.source {
                Some((phi, d)) => apply_wk_derivative(&up, phi, *d, grid)?,
                None => solve_wk(&up, &self.witness)?,
            }
        } else {
            let down = self.kernel.power(self.depth - m, grid)?;
            dual_convolve_kernel(&down, &self.witness)?
        };
        let b = self.support();
        Ok(Self {
            kernel: self.kernel.clone(),
            depth: m,
            values: self.values.clone(),
            witness: witness.with_support(b),
            source: None,
        })
    }

    /// `a f + b g` at the larger of the two depths.
    pub fn combine(a: Complex64, f: &Self, b: Complex64, g: &Self, grid: &Grid) -> Result<Self> {
        let m = f.depth.max(g.depth);
        let (f, g) = (f.at_depth(m, grid)?, g.at_depth(m, grid)?);
        let support = f.support().max(g.support());
        let values = f.values.scale(a).add(&g.values.scale(b))?;
        let witness = f.witness.scale(a).add(&g.witness.scale(b))?.with_support(support);
        Ok(Self {
            kernel: f.kernel,
            depth: m,
            values: values.with_support(support),
            witness,
            source: None,
        })
    }

    /// `f * g` at depth `n_f + n_g`, its witness obtained by inverting `T'` on the product.
    pub fn product(f: &Self, g: &Self, grid: &Grid) -> Result<Self> {
        let depth = f.depth + g.depth;
        let b = (f.support() + g.support()).min(grid.horizon());
        let values = convolve_smooth(&f.values, &g.values)?.with_support(b);
        let witness = solve_wk(&f.kernel.power(depth, grid)?, &values)?;
        Ok(Self {
            kernel: f.kernel.clone(),
            depth,
            values,
            witness,
            source: None,
        })
    }
}

/// `(f * g)(t_i)` with fourth-order Gregory end corrections, for functions smooth on their
/// supports.
pub fn convolve_smooth(f: &SampledFn, g: &SampledFn) -> Result<SampledFn> {
    f.grid().check_same(g.grid())?;
    let grid = *f.grid();
    let h = grid.dt();
    let (a, b) = (f.values(), g.values());
    let ends = [3.0 / 8.0, 7.0 / 6.0, 23.0 / 24.0];
    let mut out = SampledFn::zeros(grid);
    par::fill(out.values_mut(), |i, slot| {
        if i == 0 {
            return;
        }
        let term = |j: usize| a[i - j] * b[j];
        let mut acc = C0;
        if i < 6 {
            acc = (term(0) + term(i)) * 0.5;
            for j in 1..i {
                acc += term(j);
            }
        } else {
            for j in 3..=i - 3 {
                acc += term(j);
            }
            for (e, w) in ends.iter().enumerate() {
                acc += (term(e) + term(i - e)) * *w;
            }
        }
        *slot = acc * h;
    });
    Ok(out)
}

fn trapezoid_weight(i: usize, last: usize) -> f64 {
    if i == 0 || i == last {
        0.5
    } else {
        1.0
    }
}

/// Matrix of `G_k(f)` using the ladder level `m` (which must cover the support).
pub fn gk_matrix_at_depth(
    ctx: &HomomorphismContext,
    f: &LadderFunction,
    m: u32,
) -> Result<DMatrix<Complex64>> {
    if m > ctx.depth() {
        return Err(Error::InsufficientHorizon {
            needed: f.support(),
            available: ctx.kappa() * f64::from(ctx.depth()),
        });
    }
    let grid = ctx.grid();
    grid.check_same(f.values.grid())?;
    let level = ctx.ladder.level(m)?;
    if f.support() > level.tau() * (1.0 + 1e-12) {
        return Err(Error::InsufficientHorizon {
            needed: f.support(),
            available: level.tau(),
        });
    }
    let lifted = f.at_depth(m, grid)?;
    let w = lifted.witness.values();
    let last = grid.index_of(level.tau())?;
    let d = ctx.dim();
    let bs = d * d;
    let mut acc = vec![C0; bs];
    for (i, wi) in w.iter().enumerate().take(last + 1) {
        if *wi == C0 {
            continue;
        }
        let coef = wi * trapezoid_weight(i, last);
        for (o, s) in acc.iter_mut().zip(level.block(i)) {
            *o += coef * s;
        }
    }
    let h = grid.dt();
    Ok(DMatrix::from_fn(d, d, |r, col| acc[r * d + col] * h))
}

/// Matrix of `G_k(f)` at the smallest depth that covers both the support and `f`'s own depth.
pub fn gk_matrix(ctx: &HomomorphismContext, f: &LadderFunction) -> Result<DMatrix<Complex64>> {
    let m = ctx.smallest_depth(f.support()).max(f.depth);
    gk_matrix_at_depth(ctx, f, m)
}

/// `G_k(f) x`.
pub fn gk_apply(
    ctx: &HomomorphismContext,
    f: &LadderFunction,
    x: &VectorState,
) -> Result<VectorState> {
    check_dim(ctx, x)?;
    Ok(gk_matrix(ctx, f)? * x)
}

fn check_dim(ctx: &HomomorphismContext, x: &VectorState) -> Result<()> {
    if x.len() != ctx.dim() {
        return Err(Error::Dimension {
            expected: ctx.dim(),
            got: x.len(),
        });
    }
    Ok(())
}

fn homo_tolerance(grid: &Grid) -> f64 {
    10.0 * grid.dt() * grid.dt()
}

/// `|G(f * g) x - G(f) G(g) x|`, the product taken at depth `n_f + n_g`.
pub fn gk_multiplicativity_residual(
    ctx: &HomomorphismContext,
    f: &LadderFunction,
    g: &LadderFunction,
    x: &VectorState,
) -> Result<ResidualReport> {
    check_dim(ctx, x)?;
    let grid = ctx.grid();
    let fg = LadderFunction::product(f, g, grid)?;
    let lhs = gk_matrix(ctx, &fg)? * x;
    let gf = gk_matrix(ctx, f)?;
    let gg = gk_matrix(ctx, g)?;
    let rhs = &gf * (&gg * x);
    let swapped = &gg * (&gf * x);
    let r = (&lhs - &rhs).max_modulus();
    Ok(ResidualReport::new("multiplicativity", r, grid, homo_tolerance(grid))
        .param("depth", f64::from(fg.depth))
        .extra("lhs_norm", lhs.max_modulus())
        .extra("rhs_norm", rhs.max_modulus())
        .extra("commutator", (&rhs - &swapped).max_modulus()))
}

/// `|A G(f) x + G(f') x + f(0) x|`.
pub fn gk_generator_action_residual(
    ctx: &HomomorphismContext,
    f: &LadderFunction,
    x: &VectorState,
) -> Result<ResidualReport> {
    check_dim(ctx, x)?;
    let grid = ctx.grid();
    let df = f.derivative(grid)?;
    let a = ctx.generator().matrix();
    let gfx = gk_matrix(ctx, f)? * x;
    let gdx = gk_matrix(ctx, &df)? * x;
    let f0 = f.values.at(0);
    let res = &a * &gfx + &gdx + x * f0;
    Ok(
        ResidualReport::new("generator_action", res.max_modulus(), grid, homo_tolerance(grid))
            .extra("f0", f0.re)
            .extra("g_f_norm", gfx.max_modulus())
            .extra("g_fprime_norm", gdx.max_modulus()),
    )
}

/// `|G(f) x|` computed at depth `n` and at depth `n + 1`.
pub fn gk_well_definedness_residual(
    ctx: &HomomorphismContext,
    f: &LadderFunction,
    x: &VectorState,
) -> Result<ResidualReport> {
    check_dim(ctx, x)?;
    let n = ctx.smallest_depth(f.support()).max(f.depth);
    let a = gk_matrix_at_depth(ctx, f, n)? * x;
    let b = gk_matrix_at_depth(ctx, f, n + 1)? * x;
    let grid = ctx.grid();
    Ok(
        ResidualReport::new("well_definedness", (&a - &b).max_modulus(), grid, homo_tolerance(grid))
            .param("n", f64::from(n))
            .extra("value_norm", a.max_modulus()),
    )
}

/// `|G(f) x|` against the bound `(integral |W f|) max_t |S(t) x|`.
pub fn gk_bound(ctx: &HomomorphismContext, f: &LadderFunction, x: &VectorState) -> Result<(f64, f64)> {
    check_dim(ctx, x)?;
    let m = ctx.smallest_depth(f.support()).max(f.depth);
    let value = (gk_matrix_at_depth(ctx, f, m)? * x).norm();
    let lifted = f.at_depth(m, ctx.grid())?;
    let level = ctx.ladder.level(m)?;
    let last = level.n_points() - 1;
    let h = ctx.grid().dt();
    let l1: f64 = lifted
        .witness
        .values()
        .iter()
        .take(last + 1)
        .enumerate()
        .map(|(i, w)| w.norm() * trapezoid_weight(i, last) * h)
        .sum();
    let smax = (0..=last)
        .map(|i| level.apply(i, x).norm())
        .fold(0.0, f64::max);
    Ok((value, l1 * smax))
}

/// `|G_{k*l}(f) x - G_k(f) x|` for `f = T'_{(k*l)^{*n}} phi`; in the `k`-ladder the witness at
/// depth `n` is `l^{*n} o phi`.
pub fn kl_consistency_residual(
    ctx_k: &HomomorphismContext,
    ctx_kl: &HomomorphismContext,
    l: &Kernel,
    f: &LadderFunction,
    x: &VectorState,
) -> Result<ResidualReport> {
    if ctx_k.generator() != ctx_kl.generator() {
        return Err(Error::MismatchedGenerators);
    }
    if f.kernel() != ctx_kl.kernel() {
        return Err(Error::Domain(format!(
            "f must live in the {} ladder",
            ctx_kl.kernel().tag()
        )));
    }
    check_dim(ctx_k, x)?;
    let grid = ctx_k.grid();
    let n = f.depth;
    let witness_k = dual_convolve_kernel(&l.power(n, grid)?, &f.witness)?.with_support(f.support());
    let in_k = LadderFunction::from_parts(ctx_k.kernel(), n, f.values.clone(), witness_k)?;
    let a = gk_apply(ctx_kl, f, x)?;
    let b = gk_apply(ctx_k, &in_k, x)?;
    let tol = match l.leading_power() {
        Some(g) if g < 0.0 => 10.0 * grid.dt().powf(2.0 + g),
        _ => homo_tolerance(grid),
    };
    Ok(ResidualReport::new("kl_consistency", (&a - &b).max_modulus(), grid, tol)
        .param("depth", f64::from(n))
        .extra("value_norm", a.max_modulus()))
}

/// Smallest singular value of the stacked matrices `G(theta_i)`.
pub fn kds_nondegeneracy_check(
    ctx: &HomomorphismContext,
    probes: &[LadderFunction],
) -> Result<ResidualReport> {
    if probes.is_empty() {
        return Err(Error::Empty("no probe functions".into()));
    }
    let d = ctx.dim();
    let mats = probes
        .iter()
        .map(|p| gk_matrix(ctx, p))
        .collect::<Result<Vec<_>>>()?;
    let stack = DMatrix::from_fn(mats.len() * d, d, |r, col| mats[r / d][(r % d, col)]);
    let sv = stack.singular_values();
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let threshold = 1e-12 * smax.max(f64::MIN_POSITIVE);
    let rank = sv.iter().filter(|&&s| s > threshold).count();
    let mut r = ResidualReport::new("kds_nondegeneracy", smin, ctx.grid(), threshold)
        .param("probes", probes.len() as f64)
        .extra("smallest_singular_value", smin)
        .extra("largest_singular_value", smax)
        .extra("rank", rank as f64);
    r.passed = smin > threshold;
    Ok(r)
}

/// CSV of a `G(f)` matrix: `row,col,re,im`.
pub fn matrix_csv(m: &DMatrix<Complex64>) -> String {
    use crate::grid::fmt_f64;
    let mut s = String::from("row,col,re,im\n");
    for r in 0..m.nrows() {
        for col in 0..m.ncols() {
            let v = m[(r, col)];
            s.push_str(&format!("{r},{col},{},{}\n", fmt_f64(v.re), fmt_f64(v.im)));
        }
    }
    s
}

/// `integral_0^inf T'_{k^{*n}} phi (t) w(t) dt = integral_0^inf phi(s) (k^{*n} * w)(s) ds`
/// for a scalar weight, by Gauss-Legendre panels; the oracle for scalar homomorphisms.
pub fn tested_against(phi: &TestFunction, kernel_conv_weight: impl Fn(f64) -> f64) -> f64 {
    let b = phi.b();
    crate::quadrature::integrate_panels(0.0, b, b / 256.0, |s| {
        c(phi.eval(s) * kernel_conv_weight(s))
    })
    .re
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::basis;

    fn decay_ctx(dt: f64, depth: u32) -> HomomorphismContext {
        let g = Grid::with_horizon(dt, 1.0 * f64::from(depth + 1) + 0.5).unwrap();
        let a = Generator::real_dense(&[&[-1.0]]).unwrap();
        HomomorphismContext::new(&a, &Kernel::Heaviside, 1.0, &g, depth).unwrap()
    }

    #[test]
    fn apply_matches_laplace_oracle() {
        let ctx = decay_ctx(1e-3, 3);
        let phi = TestFunction::bump(0.9);
        let f = LadderFunction::constructive(&Kernel::Heaviside, 1, &phi, ctx.grid()).unwrap();
        let got = gk_apply(&ctx, &f, &basis(1, 0)).unwrap()[0].re;
        let want = tested_against(&phi, |s| 1.0 - (-s).exp());
        assert!((got - want).abs() < 1e-6, "{got} {want}");
        let z = LadderFunction::zero(&Kernel::Heaviside, ctx.grid());
        assert_eq!(gk_apply(&ctx, &z, &basis(1, 0)).unwrap()[0], C0);
    }

    #[test]
    fn homomorphism_identities_for_decay() {
        let ctx = decay_ctx(1e-3, 3);
        let g = *ctx.grid();
        let x = basis(1, 0);
        let f = LadderFunction::constructive(&Kernel::Heaviside, 1, &TestFunction::bump(0.9), &g)
            .unwrap();
        let h = LadderFunction::constructive(
            &Kernel::Heaviside,
            1,
            &TestFunction::poly_bump(vec![1.0, -0.5], 0.8),
            &g,
        )
        .unwrap();
        let m = gk_multiplicativity_residual(&ctx, &f, &h, &x).unwrap();
        assert!(m.max_abs_residual < 1e-6, "{m:?}");
        let a = gk_generator_action_residual(&ctx, &f, &x).unwrap();
        assert!(a.max_abs_residual < 1e-6, "{a:?}");
        let w = gk_well_definedness_residual(&ctx, &f, &x).unwrap();
        assert!(w.max_abs_residual < 1e-6, "{w:?}");
        let (v, bound) = gk_bound(&ctx, &f, &x).unwrap();
        assert!(v <= bound);
    }

    #[test]
    fn nilpotent_multiplicativity() {
        let g = Grid::with_horizon(1e-3, 3.5).unwrap();
        let ctx =
            HomomorphismContext::new(&Generator::nilpotent2(), &Kernel::Heaviside, 1.0, &g, 2)
                .unwrap();
        let f = LadderFunction::constructive(&Kernel::Heaviside, 1, &TestFunction::bump(0.9), &g)
            .unwrap();
        for j in 0..2 {
            let r = gk_multiplicativity_residual(&ctx, &f, &f, &basis(2, j)).unwrap();
            assert!(r.passed, "{r:?}");
            let a = gk_generator_action_residual(&ctx, &f, &basis(2, j)).unwrap();
            assert!(a.passed, "{a:?}");
        }
    }

    #[test]
    fn consistency_between_k_and_k_star_l() {
        let g = Grid::with_horizon(1e-3, 3.5).unwrap();
        let a = Generator::real_dense(&[&[-1.0]]).unwrap();
        let ctx_k = HomomorphismContext::new(&a, &Kernel::Heaviside, 1.0, &g, 2).unwrap();
        let kl = Kernel::fractional(2.0);
        let ctx_kl = HomomorphismContext::new(&a, &kl, 1.0, &g, 2).unwrap();
        let f = LadderFunction::constructive(&kl, 1, &TestFunction::bump(0.9), &g).unwrap();
        let r = kl_consistency_residual(&ctx_k, &ctx_kl, &Kernel::Heaviside, &f, &basis(1, 0))
            .unwrap();
        assert!(r.max_abs_residual < 1e-5, "{r:?}");
        let other = HomomorphismContext::new(&Generator::nilpotent2(), &kl, 1.0, &g, 1).unwrap();
        assert!(matches!(
            kl_consistency_residual(&ctx_k, &other, &Kernel::Heaviside, &f, &basis(1, 0)),
            Err(Error::MismatchedGenerators)
        ));
    }

    #[test]
    fn probes_separate_points() {
        let ctx = decay_ctx(1e-3, 2);
        let g = *ctx.grid();
        let probes: Vec<_> = [0.5, 0.7, 0.9]
            .iter()
            .map(|&b| LadderFunction::constructive(&Kernel::Heaviside, 1, &TestFunction::bump(b), &g))
            .collect::<Result<_>>()
            .unwrap();
        let r = kds_nondegeneracy_check(&ctx, &probes).unwrap();
        assert!(r.passed && r.max_abs_residual > 0.0);
        assert!(kds_nondegeneracy_check(&ctx, &[]).is_err());
    }

    #[test]
    fn linearity_is_exact() {
        let ctx = decay_ctx(1e-3, 2);
        let g = *ctx.grid();
        let f = LadderFunction::constructive(&Kernel::Heaviside, 1, &TestFunction::bump(0.9), &g)
            .unwrap();
        let h = LadderFunction::constructive(&Kernel::Heaviside, 1, &TestFunction::bump(0.6), &g)
            .unwrap();
        let comb = LadderFunction::combine(c(2.0), &f, c(-3.0), &h, &g).unwrap();
        let x = basis(1, 0);
        let lhs = gk_apply(&ctx, &comb, &x).unwrap();
        let rhs = gk_apply(&ctx, &f, &x).unwrap() * c(2.0) - gk_apply(&ctx, &h, &x).unwrap() * c(3.0);
        assert!((lhs - rhs).max_modulus() < 1e-14);
    }

    #[test]
    fn support_beyond_ladder_is_rejected() {
        let ctx = decay_ctx(1e-3, 1);
        let g = *ctx.grid();
        let f = LadderFunction::constructive(&Kernel::Heaviside, 1, &TestFunction::bump(1.5), &g)
            .unwrap();
        assert!(gk_apply(&ctx, &f, &basis(1, 0)).is_err());
    }
}
