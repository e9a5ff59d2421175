use kconv::convoluted::{build_convoluted, composition_residual, extend_family, generator_residual_all};
use kconv::homomorphism::{gk_apply, gk_bound, HomomorphismContext, LadderFunction};
use kconv::kernel_algebra::{convolve, convolution_oracle, dual_convolve_kernel, laplace_numeric};
use kconv::test_functions::{apply_tk, solve_wk, weyl_derivative};
use kconv::{basis, Complex64, Generator, Grid, Kernel, SampledFn, SupNorm, TestFunction};
use proptest::prelude::*;

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

fn grid(dt: f64, horizon: f64) -> Grid {
    Grid::with_horizon(dt, horizon).unwrap()
}

/// `sum a_j t^j e^{-t}` on the grid.
fn smooth(g: Grid, coeffs: &[f64]) -> SampledFn {
    SampledFn::from_real_fn(g, |t| {
        coeffs.iter().rev().fold(0.0, |acc, a| acc * t + a) * (-t).exp()
    })
}

fn coeffs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, 1..4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn convolution_commutes(a in coeffs(), b in coeffs()) {
        let g = grid(1e-2, 3.0);
        let (f, h) = (smooth(g, &a), smooth(g, &b));
        let gap = convolve(&f, &h).unwrap().max_abs_diff(&convolve(&h, &f).unwrap()).unwrap();
        prop_assert!(gap < 1e-12);
    }

    #[test]
    fn convolution_associates_to_second_order(a in coeffs(), b in coeffs(), d in coeffs()) {
        let g = grid(2e-3, 2.0);
        let (f, h, k) = (smooth(g, &a), smooth(g, &b), smooth(g, &d));
        let left = convolve(&convolve(&f, &h).unwrap(), &k).unwrap();
        let right = convolve(&f, &convolve(&h, &k).unwrap()).unwrap();
        let scale = a.iter().chain(&b).chain(&d).map(|x| x.abs()).fold(1.0, f64::max).powi(3);
        prop_assert!(left.max_abs_diff(&right).unwrap() < 10.0 * 4e-6 * scale);
    }

    #[test]
    fn fractional_kernels_compose(a in 0.3f64..2.0, b in 0.3f64..2.0, t in 0.2f64..1.5) {
        let (ka, kb) = (Kernel::fractional(a), Kernel::fractional(b));
        let closed = ka.convolve_closed(&kb).unwrap();
        let got = closed.eval(t).unwrap();
        let want = convolution_oracle(&ka, &kb, t);
        prop_assert!((got - want).norm() < 1e-9 * want.norm().max(1.0));
    }

    #[test]
    fn dual_convolution_keeps_support(b in 0.3f64..1.5, alpha in 0.3f64..2.5) {
        let g = grid(1e-3, 2.0);
        let f = TestFunction::bump(b).sample(&g);
        let out = dual_convolve_kernel(&Kernel::fractional(alpha), &f).unwrap();
        prop_assert_eq!(out.max_abs_beyond(b), 0.0);
    }

    #[test]
    fn laplace_is_multiplicative(a in coeffs(), b in coeffs(), lambda in 0.5f64..3.0) {
        let g = grid(1e-3, 30.0);
        let (f, h) = (smooth(g, &a), smooth(g, &b));
        let lf = laplace_numeric(&f, c(lambda), None).value;
        let lh = laplace_numeric(&h, c(lambda), None).value;
        let lfh = laplace_numeric(&convolve(&f, &h).unwrap(), c(lambda), None).value;
        let scale = (lf.norm() * lh.norm()).max(1.0);
        prop_assert!((lfh - lf * lh).norm() < 1e-5 * scale);
    }

    #[test]
    fn tk_then_wk_is_identity(b in 0.5f64..1.5, alpha in prop::sample::select(vec![0.5, 1.0, 2.0])) {
        let g = grid(1e-3, 2.0);
        let f = TestFunction::bump(b);
        let k = Kernel::fractional(alpha);
        let back = solve_wk(&k, &apply_tk(&k, &f, &g).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&f.sample(&g)).unwrap() < 1e-5);
        prop_assert_eq!(back.max_abs_beyond(b), 0.0);
    }

    #[test]
    fn tk_commutes_with_translation(u in 0.05f64..0.5) {
        let g = grid(1e-3, 3.0);
        let u = (u / g.dt()).round() * g.dt();
        let f = TestFunction::poly_bump(vec![1.0, 0.5], 1.5);
        let k = Kernel::fractional(1.5);
        let lhs = apply_tk(&k, &f.shifted(u).unwrap(), &g).unwrap();
        let rhs = apply_tk(&k, &f, &g).unwrap().shift(u).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-5);
    }

    #[test]
    fn weyl_orders_add(b in 0.6f64..1.4) {
        let g = grid(1e-3, 2.0);
        let f = TestFunction::bump(b);
        let once = weyl_derivative(&f, 1.0, &g).unwrap();
        let twice = solve_wk(&Kernel::fractional(1.0), &once).unwrap();
        let direct = weyl_derivative(&f, 2.0, &g).unwrap();
        let scale = direct.max_abs().max(1.0);
        prop_assert!(twice.max_abs_diff(&direct).unwrap() < 1e-4 * scale);
    }
}

fn small_matrix() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5f64..1.5, 4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn composition_law_holds(m in small_matrix(), smooth_kernel in any::<bool>()) {
        let g = grid(2e-3, 1.2);
        let a = Generator::real_dense(&[&[m[0], m[1]], &[m[2], m[3]]]).unwrap();
        let k = if smooth_kernel { Kernel::fractional(2.0) } else { Kernel::Heaviside };
        let fam = build_convoluted(&a, &k, 1.0, &g).unwrap();
        let r = composition_residual(&fam, None).unwrap();
        prop_assert!(r.passed, "{:?}", r);
    }

    #[test]
    fn extension_keeps_the_generator_identity(lambda in -2.0f64..1.0) {
        let g = grid(2e-3, 3.5);
        let a = Generator::real_dense(&[&[lambda]]).unwrap();
        let fam = build_convoluted(&a, &Kernel::Heaviside, 1.0, &g).unwrap();
        let lad = extend_family(&fam, 3).unwrap();
        for n in 1..=3 {
            let r = generator_residual_all(lad.level(n).unwrap()).unwrap();
            prop_assert!(r.passed, "level {}: {:?}", n, r);
        }
        prop_assert!(lad.seam_gaps().iter().all(|&s| s < 1e-8));
    }

    #[test]
    fn homomorphism_is_linear_and_bounded(p in -3.0f64..3.0, q in -3.0f64..3.0, b in 0.4f64..0.9) {
        let g = grid(2e-3, 3.5);
        let a = Generator::real_dense(&[&[-1.0, 0.5], &[0.0, -0.3]]).unwrap();
        let ctx = HomomorphismContext::new(&a, &Kernel::Heaviside, 1.0, &g, 2).unwrap();
        let f = LadderFunction::constructive(&Kernel::Heaviside, 1, &TestFunction::bump(b), &g).unwrap();
        let h = LadderFunction::constructive(
            &Kernel::Heaviside, 1, &TestFunction::poly_bump(vec![0.2, 1.0], 0.7), &g,
        ).unwrap();
        let comb = LadderFunction::combine(c(p), &f, c(q), &h, &g).unwrap();
        for j in 0..2 {
            let x = basis(2, j);
            let lhs = gk_apply(&ctx, &comb, &x).unwrap();
            let rhs = gk_apply(&ctx, &f, &x).unwrap() * c(p) + gk_apply(&ctx, &h, &x).unwrap() * c(q);
            prop_assert!((lhs - rhs).max_modulus() < 1e-13);
            let (value, bound) = gk_bound(&ctx, &f, &x).unwrap();
            prop_assert!(value <= bound * (1.0 + 1e-12));
        }
    }
}
