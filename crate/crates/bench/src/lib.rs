//! Fixtures shared by the benchmarks.

use kconv::{Generator, Grid, Kernel, SampledFn, TestFunction};

pub fn grid(dt: f64, horizon: f64) -> Grid {
    Grid::with_horizon(dt, horizon).expect("valid grid")
}

/// `t^2 e^{-t}` sampled on `grid`.
pub fn smooth_sample(grid: &Grid) -> SampledFn {
    SampledFn::from_real_fn(*grid, |t| t * t * (-t).exp())
}

/// Dense 2x2 generator with a decaying and an oscillating mode.
pub fn dense_generator() -> Generator {
    Generator::real_dense(&[&[-1.0, 0.5], &[-2.0, -0.3]]).expect("square matrix")
}

pub fn kernels() -> Vec<(&'static str, Kernel)> {
    vec![
        ("heaviside", Kernel::Heaviside),
        ("j_1.5", Kernel::fractional(1.5)),
        ("j_0.5", Kernel::fractional(0.5)),
    ]
}

pub fn probe() -> TestFunction {
    TestFunction::bump(0.8)
}
