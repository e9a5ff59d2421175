//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p kconv --test acceptance`. A criterion listed in `UNATTAINABLE` is
//! still evaluated and reported; it does not change the exit status.

use std::time::Instant;

use kconv::convoluted::{
    build_convoluted, extend_family, generator_residual_all, lsquare_check, mid_split_gap,
    operator_polynomial, composition_residual,
};
use kconv::homomorphism::{
    gk_apply, gk_generator_action_residual, gk_multiplicativity_residual,
    gk_well_definedness_residual, kl_consistency_residual, tested_against, HomomorphismContext,
    LadderFunction,
};
use kconv::kernel::{baumer_product, ultradifferential_polynomial};
use kconv::kernel_algebra::laplace_numeric;
use kconv::test_functions::{apply_tk, solve_wk, weyl_derivative};
use kconv::{
    basis, check_identity, Complex64, GevreySequence, Generator, Grid, IdentityParams, Kernel,
    SupNorm, TestFunction,
};

/// The truncated sequence example is not monotone in magnitude for m >= 5 (see README).
const UNATTAINABLE: &[u32] = &[7];

struct Outcome {
    passed: bool,
    detail: String,
}

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

fn grid(dt: f64, horizon: f64) -> Grid {
    Grid::with_horizon(dt, horizon).expect("grid")
}

fn decay() -> Generator {
    Generator::real_dense(&[&[-1.0]]).expect("generator")
}

fn smooth_residual(name: &str, dt: f64) -> f64 {
    check_identity(name, &IdentityParams::default(), &grid(dt, 2.0))
        .expect(name)
        .max_abs_residual
}

fn criterion1() -> Outcome {
    let start = Instant::now();
    let p = IdentityParams::default()
        .with_f(Kernel::fractional(1.0))
        .with_g(Kernel::fractional(1.0))
        .with("t", 2.0)
        .with("tau", 1.0);
    let l = check_identity("lemma21", &p, &grid(1e-3, 3.0)).expect("lemma21");
    let (lhs, rhs) = (l.extras["lhs"], l.extras["rhs"]);
    let mut passed = (lhs - 1.0).abs() < 1e-12 && (rhs - 1.0).abs() < 1e-12;
    let mut detail = format!("lemma21 lhs={lhs:.15} rhs={rhs:.15}");
    let tol = 10.0 * 1e-6;
    for name in ["coro22", "coro23", "thm25"] {
        let r = smooth_residual(name, 1e-3);
        passed &= r < tol;
        detail += &format!("; {name} {r:.2e}");
    }
    let secs = start.elapsed().as_secs_f64();
    passed &= secs < 10.0;
    detail += &format!(" (tol {tol:.0e}); {secs:.2} s");
    Outcome { passed, detail }
}

fn criterion2() -> Outcome {
    let mut passed = true;
    let mut parts = Vec::new();
    for name in ["lemma21", "coro22", "coro23", "thm25"] {
        let ratio = smooth_residual(name, 2e-3) / smooth_residual(name, 1e-3);
        passed &= (3.5..=4.5).contains(&ratio);
        parts.push(format!("{name} {ratio:.3}"));
    }
    Outcome {
        passed,
        detail: format!("residual ratio dt 2e-3 -> 1e-3: {}", parts.join(", ")),
    }
}

fn criterion3() -> Outcome {
    let g = grid(1e-3, 2.5);
    let a = Generator::nilpotent2();
    let fam = build_convoluted(&a, &Kernel::Heaviside, 1.0, &g).expect("family");
    let build = (0..fam.n_points())
        .map(|i| {
            let t = g.t(i);
            (fam.operator(i) - operator_polynomial(&a, &[c(t), c(t * t / 2.0)])).max_modulus()
        })
        .fold(0.0, f64::max);
    let comp = composition_residual(&fam, None).expect("composition").max_abs_residual;
    let lad = extend_family(&fam, 2).expect("ladder");
    let s2 = lad.level(2).expect("level");
    let ext = (0..s2.n_points())
        .map(|i| {
            let t = g.t(i);
            let want = operator_polynomial(&a, &[c(t * t / 2.0), c(t.powi(3) / 6.0)]);
            (s2.operator(i) - want).max_modulus()
        })
        .fold(0.0, f64::max);
    let tol = 10.0 * g.dt() * g.dt();
    Outcome {
        passed: build < 1e-10 && comp < 1e-10 && ext < tol,
        detail: format!(
            "S_1 gap {build:.2e}, composition {comp:.2e} (1e-10); S_2 gap {ext:.2e} on [0, {:.3}] (tol {tol:.0e})",
            s2.tau()
        ),
    }
}

fn criterion4() -> Outcome {
    let g = grid(1e-3, 3.5);
    let fam = build_convoluted(&decay(), &Kernel::Heaviside, 1.0, &g).expect("family");
    let lad = extend_family(&fam, 3).expect("ladder");
    let s3 = lad.level(3).expect("level");
    let closed = (0..s3.n_points())
        .map(|i| {
            let t = g.t(i);
            (s3.operator(i)[(0, 0)].re - (t * t / 2.0 - t + 1.0 - (-t).exp())).abs()
        })
        .fold(0.0, f64::max);
    let tol = 10.0 * g.dt() * g.dt();
    let mut passed = closed < tol;
    let mut detail = format!("S_3 closed-form gap {closed:.2e}; generator residuals");
    for n in 1..=3 {
        let r = generator_residual_all(lad.level(n).expect("level")).expect("generator");
        passed &= r.max_abs_residual < tol;
        detail += &format!(" n={n}: {:.2e}", r.max_abs_residual);
    }
    detail += &format!(" (tol {tol:.0e})");
    Outcome { passed, detail }
}

fn criterion5() -> Outcome {
    let g = grid(1e-3, 3.5);
    let tol = 10.0 * g.dt() * g.dt();
    let mut passed = true;
    let mut parts = Vec::new();
    for (name, a) in [("nilpotent", Generator::nilpotent2()), ("diagonal", decay())] {
        let fam = build_convoluted(&a, &Kernel::Heaviside, 1.0, &g).expect("family");
        let lad = extend_family(&fam, 3).expect("ladder");
        let r = mid_split_gap(&lad, 3, 1, 2).expect("split").max_abs_residual;
        passed &= r < tol;
        parts.push(format!("{name} {r:.2e}"));
    }
    Outcome {
        passed,
        detail: format!("j=1 vs j=2 at n=3: {} (tol {tol:.0e})", parts.join(", ")),
    }
}

fn criterion6() -> Outcome {
    let g = grid(1e-3, 4.5);
    let a = decay();
    let ctx = HomomorphismContext::new(&a, &Kernel::Heaviside, 1.0, &g, 3).expect("context");
    let x = basis(1, 0);
    let phi = TestFunction::bump(0.9);
    let psi = TestFunction::poly_bump(vec![1.0, -0.5], 0.8);
    let f = LadderFunction::constructive(&Kernel::Heaviside, 1, &phi, &g).expect("f");
    let h = LadderFunction::constructive(&Kernel::Heaviside, 1, &psi, &g).expect("g");
    let value = gk_apply(&ctx, &f, &x).expect("apply")[0].re;
    let oracle = tested_against(&phi, |s| 1.0 - (-s).exp());
    let apply = (value - oracle).abs();
    let mult = gk_multiplicativity_residual(&ctx, &f, &h, &x).expect("mult").max_abs_residual;
    let act = gk_generator_action_residual(&ctx, &f, &x).expect("action").max_abs_residual;
    let well = gk_well_definedness_residual(&ctx, &f, &x).expect("depth").max_abs_residual;
    let kl = Kernel::fractional(2.0);
    let ctx_kl = HomomorphismContext::new(&a, &kl, 1.0, &g, 2).expect("context");
    let fkl = LadderFunction::constructive(&kl, 1, &phi, &g).expect("f");
    let cons = kl_consistency_residual(&ctx, &ctx_kl, &Kernel::Heaviside, &fkl, &x)
        .expect("consistency")
        .max_abs_residual;
    Outcome {
        passed: apply < 1e-6 && mult < 1e-6 && act < 1e-6 && well < 1e-6 && cons < 1e-5,
        detail: format!(
            "apply {apply:.2e}, multiplicativity {mult:.2e}, generator action {act:.2e}, depth gap {well:.2e} (1e-6); k*l consistency {cons:.2e} (1e-5)"
        ),
    }
}

fn criterion7() -> Outcome {
    let r = lsquare_check(1.0, 1.0, 8, 0.9, &grid(1e-3, 0.9)).expect("lsquare");
    let drops: Vec<String> = r
        .extras
        .iter()
        .filter(|(k, _)| k.starts_with("first_decrease_m"))
        .map(|(k, v)| format!("m={} at t={v:.3}", &k["first_decrease_m".len()..]))
        .collect();
    Outcome {
        passed: r.passed,
        detail: format!(
            "value gap {:.2e} (1e-10); {} monotonicity violations; first decreases: {}",
            r.extras["value_residual"],
            r.extras["monotone_violations"],
            if drops.is_empty() { "none".into() } else { drops.join(", ") }
        ),
    }
}

fn criterion8() -> Outcome {
    let g = grid(1e-3, 40.0);
    let k = Kernel::HeatBoundary { a: 1.0 }.sample(&g).expect("samples");
    let mut passed = true;
    let mut parts = Vec::new();
    for lambda in [1.0f64, 4.0] {
        let v = laplace_numeric(&k, c(lambda), None).value;
        let gap = (v - c((-lambda.sqrt()).exp())).norm();
        passed &= gap < 1e-4;
        parts.push(format!("lambda={lambda}: {gap:.2e}"));
    }
    Outcome {
        passed,
        detail: format!("{} (1e-4)", parts.join(", ")),
    }
}

fn criterion9() -> Outcome {
    let target = std::f64::consts::PI.sinh() / std::f64::consts::PI;
    let p = ultradifferential_polynomial(
        GevreySequence::FactorialPower { s: 2.0 },
        1.0,
        10_000_000,
        c(1.0),
    );
    let err = (p.value.re - target).abs();
    let b = baumer_product(64, c(1.0)).value;
    Outcome {
        passed: err < 1e-6 && p.tail_bound >= err && b == c(0.0),
        detail: format!(
            "product error {err:.2e} (1e-6), tail bound {:.2e}; Baumer at 1 = {b}",
            p.tail_bound
        ),
    }
}

fn criterion10() -> Outcome {
    let g = grid(1e-3, 2.0);
    let f = TestFunction::standard();
    let tol = 10.0 * g.dt() * g.dt();
    let mut passed = true;
    let mut parts = Vec::new();
    let mut beyond = 0.0f64;
    for (label, k) in [
        ("j_1", Kernel::fractional(1.0)),
        ("j_1/2", Kernel::fractional(0.5)),
        ("chi_(0,1)", Kernel::Indicator01),
    ] {
        let tf = apply_tk(&k, &f, &g).expect("T'");
        let back = solve_wk(&k, &tf).expect("W");
        let gap = back.max_abs_diff(&f.sample(&g)).expect("gap");
        beyond = beyond.max(tf.max_abs_beyond(f.b())).max(back.max_abs_beyond(f.b()));
        passed &= gap < tol;
        parts.push(format!("{label} {gap:.2e}"));
    }
    let w = weyl_derivative(&f, 0.5, &g).expect("W_1/2");
    let ww = solve_wk(&Kernel::fractional(0.5), &w).expect("W_1/2 twice");
    let half = ww
        .max_abs_diff(&weyl_derivative(&f, 1.0, &g).expect("W_1"))
        .expect("gap");
    beyond = beyond.max(w.max_abs_beyond(f.b()));
    passed &= half < 1e-3 && beyond == 0.0;
    Outcome {
        passed,
        detail: format!(
            "roundtrip {} (tol {tol:.0e}); W_1/2 twice vs -f' {half:.2e} (1e-3); beyond support {beyond:e}",
            parts.join(", ")
        ),
    }
}

fn criterion11() -> Outcome {
    let r = check_identity("kunstmann", &IdentityParams::default(), &grid(1e-3, 2.0))
        .expect("kunstmann");
    let brute = r.extras["brute_force"];
    let rhs = r.extras["displayed_rhs"];
    let flagged = r.extras["discrepancy_flag"] == 1.0;
    Outcome {
        passed: (brute - 1.0 / 6.0).abs() < 1e-6 && flagged,
        detail: format!(
            "brute force {brute:.9}, displayed right-hand side {rhs:.9}, discrepancy flagged: {flagged}"
        ),
    }
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "identity suite", criterion1),
        (2, "quadrature order", criterion2),
        (3, "nilpotent family", criterion3),
        (4, "diagonal extension", criterion4),
        (5, "split independence", criterion5),
        (6, "homomorphism suite", criterion6),
        (7, "truncated sequence example", criterion7),
        (8, "heat boundary kernel", criterion8),
        (9, "infinite products", criterion9),
        (10, "Weyl and W_k suite", criterion10),
        (11, "iterated integral identity", criterion11),
    ];
    let mut failures = 0;
    for (id, name, run) in criteria {
        let o = run();
        let status = if o.passed { "PASS" } else { "FAIL" };
        let note = if !o.passed && UNATTAINABLE.contains(&id) {
            " [known unattainable]"
        } else {
            ""
        };
        println!("{status} {id:>2} {name}: {}{note}", o.detail);
        if !o.passed && !UNATTAINABLE.contains(&id) {
            failures += 1;
        }
    }
    if failures > 0 {
        eprintln!("{failures} criteria failed");
        std::process::exit(1);
    }
}
