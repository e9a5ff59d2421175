//! Executes scenario checks against the library.

use std::cell::OnceCell;

use anyhow::{anyhow, Context};
use kconv::convoluted::{
    build_convoluted, composition_residual, extend_family, extend_family_mid, generator_residual,
    ivp_residual, lsquare_check, mid_split_gap, rank_check, splitting_residual,
    ConvolutedFamily, FamilyLadder,
};
use kconv::homomorphism::{
    gk_bound, gk_generator_action_residual, gk_matrix, gk_multiplicativity_residual,
    gk_well_definedness_residual, kds_nondegeneracy_check, kl_consistency_residual, matrix_csv,
    HomomorphismContext, LadderFunction,
};
use kconv::kernel_algebra::{gevrey_bound_check, laplace_numeric};
use kconv::test_functions::{apply_tk, laplace_zero_check, solve_wk, wk_structure_check, Ladder};
use kconv::grid::fmt_f64;
use kconv::{basis, check_identity, Complex64, Generator, Grid, IdentityParams, Kernel, ResidualReport, TestFunction, VectorState};

use crate::scenario::{CheckSpec, ConfigError, Scenario};

/// A finished check plus the files it produced.
pub struct CheckOutcome {
    pub report: ResidualReport,
    pub artifacts: Vec<(String, String)>,
}

pub struct Runner<'a> {
    scenario: &'a Scenario,
    grid: Grid,
    tol_override: Option<f64>,
    base: OnceCell<ConvolutedFamily>,
    ctx: OnceCell<HomomorphismContext>,
}

fn default_tolerance(grid: &Grid) -> f64 {
    10.0 * grid.dt() * grid.dt()
}

impl<'a> Runner<'a> {
    pub fn new(
        scenario: &'a Scenario,
        dt: Option<f64>,
        tol_override: Option<f64>,
    ) -> Result<Self, ConfigError> {
        let dt = dt.unwrap_or(scenario.grid.dt);
        let grid = Grid::with_horizon(dt, scenario.grid.horizon)
            .map_err(|e| ConfigError(format!("grid: {e}")))?;
        if let Some(t) = tol_override {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(ConfigError(format!("--tol: must be >= 0, got {t}")));
            }
        }
        Ok(Self {
            scenario,
            grid,
            tol_override,
            base: OnceCell::new(),
            ctx: OnceCell::new(),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    fn kernel(&self) -> anyhow::Result<&Kernel> {
        self.scenario
            .kernel
            .as_ref()
            .ok_or_else(|| anyhow!(ConfigError("kernel: required".into())))
    }

    fn generator(&self) -> anyhow::Result<Generator> {
        let spec = self
            .scenario
            .generator
            .as_ref()
            .ok_or_else(|| anyhow!(ConfigError("generator: required".into())))?;
        Ok(spec.build()?)
    }

    pub fn base(&self) -> anyhow::Result<&ConvolutedFamily> {
        if let Some(b) = self.base.get() {
            return Ok(b);
        }
        let fam = build_convoluted(
            &self.generator()?,
            self.kernel()?,
            self.scenario.family.tau,
            &self.grid,
        )
        .context("building the base family")?;
        Ok(self.base.get_or_init(|| fam))
    }

    pub fn ctx(&self) -> anyhow::Result<&HomomorphismContext> {
        if let Some(c) = self.ctx.get() {
            return Ok(c);
        }
        let ladder = extend_family(self.base()?, self.scenario.family.depth)
            .context("extending the base family")?;
        Ok(self.ctx.get_or_init(|| HomomorphismContext::from_ladder(ladder)))
    }

    pub fn ladder(&self) -> anyhow::Result<&FamilyLadder> {
        Ok(self.ctx()?.ladder())
    }

    fn family_at(&self, level: Option<u32>) -> anyhow::Result<&ConvolutedFamily> {
        match level {
            None | Some(1) => self.base(),
            Some(n) => Ok(self.ladder()?.level(n)?),
        }
    }

    fn vectors(&self, idx: usize, x: Option<usize>, dim: usize) -> anyhow::Result<Vec<VectorState>> {
        match x {
            Some(j) if j >= dim => Err(anyhow!(ConfigError(format!(
                "checks[{idx}].x: basis index {j} out of range for dimension {dim}"
            )))),
            Some(j) => Ok(vec![basis(dim, j)]),
            None => Ok((0..dim).map(|j| basis(dim, j)).collect()),
        }
    }

    fn constructive(&self, k: &Kernel, f: &TestFunction) -> anyhow::Result<LadderFunction> {
        Ok(LadderFunction::constructive(k, 1, f, &self.grid)?)
    }

    /// Run check `idx`, applying the tolerance precedence `--tol`, check, scenario, default.
    pub fn run(&self, idx: usize, spec: &CheckSpec) -> anyhow::Result<CheckOutcome> {
        let mut artifacts = Vec::new();
        let report = self.evaluate(idx, spec, &mut artifacts)?;
        let tol = self
            .tol_override
            .or(spec.tolerance())
            .or(self.scenario.tolerance);
        let report = match tol {
            Some(t) if spec.tolerance_applies() => report.with_tolerance(t),
            _ => report,
        };
        if let Some(trace) = &report.trace {
            let mut csv = String::from("t,residual\n");
            for (t, r) in trace {
                csv.push_str(&format!("{},{}\n", fmt_f64(*t), fmt_f64(*r)));
            }
            artifacts.push((format!("trace_{idx:02}_{}.csv", report.identity_name), csv));
        }
        Ok(CheckOutcome { report, artifacts })
    }

    fn worst(
        &self,
        idx: usize,
        x: Option<usize>,
        dim: usize,
        mut f: impl FnMut(&VectorState) -> anyhow::Result<ResidualReport>,
    ) -> anyhow::Result<ResidualReport> {
        let mut best: Option<ResidualReport> = None;
        for (j, v) in self.vectors(idx, x, dim)?.iter().enumerate() {
            let r = f(v)?.param("x", j as f64);
            if best.as_ref().is_none_or(|b| r.max_abs_residual > b.max_abs_residual) {
                best = Some(r);
            }
        }
        best.ok_or_else(|| anyhow!("no basis vectors"))
    }

    fn evaluate(
        &self,
        idx: usize,
        spec: &CheckSpec,
        artifacts: &mut Vec<(String, String)>,
    ) -> anyhow::Result<ResidualReport> {
        let grid = &self.grid;
        let pair = |t: Option<f64>, s: Option<f64>| match (t, s) {
            (Some(t), Some(s)) => Ok(Some((t, s))),
            (None, None) => Ok(None),
            _ => Err(anyhow!(ConfigError(format!(
                "checks[{idx}]: give both t and s, or neither for the lattice"
            )))),
        };
        let r = match spec {
            CheckSpec::Identity {
                id, f, g, values, ..
            } => {
                let p = IdentityParams {
                    f: f.clone(),
                    g: g.clone(),
                    values: values.clone(),
                };
                check_identity(id, &p, grid)?
            }
            CheckSpec::Ivp { x, .. } => {
                let fam = self.base()?;
                self.worst(idx, *x, fam.dim(), |v| Ok(ivp_residual(fam, v)?))?
            }
            CheckSpec::Composition { t, s, level, .. } => {
                composition_residual(self.family_at(*level)?, pair(*t, *s)?)?
            }
            CheckSpec::Generator { t, level, .. } => {
                let fam = self.family_at(*level)?;
                let r = self.worst(idx, None, fam.dim(), |v| Ok(generator_residual(fam, v, *t)?))?;
                r.param("level", f64::from(fam.power()))
            }
            CheckSpec::Seams { .. } => {
                let lad = self.ladder()?;
                let gap = lad.seam_gaps().iter().copied().fold(0.0, f64::max);
                ResidualReport::new("seams", gap, grid, default_tolerance(grid))
                    .param("depth", f64::from(lad.depth()))
                    .extra("kappa", lad.kappa())
            }
            CheckSpec::ExtendMid { j, n, .. } => extend_family_mid(self.ladder()?, *j, *n)?,
            CheckSpec::MidSplit { n, j1, j2, .. } => mid_split_gap(self.ladder()?, *n, *j1, *j2)?,
            CheckSpec::Splitting { t, s, .. } => splitting_residual(self.ladder()?, pair(*t, *s)?)?,
            CheckSpec::Rank { samples } => rank_check(self.base()?, samples.unwrap_or(8))?,
            CheckSpec::SequenceExample {
                period,
                alpha,
                modes,
                t_max,
            } => lsquare_check(*period, *alpha, *modes, *t_max, grid)?,
            CheckSpec::HomoBound { f, x } => {
                let ctx = self.ctx()?;
                let lf = self.constructive(ctx.kernel(), f)?;
                artifacts.push((format!("g_matrix_{idx:02}.csv"), matrix_csv(&gk_matrix(ctx, &lf)?)));
                let mut worst = (0.0f64, 0.0f64, 0.0f64);
                for v in self.vectors(idx, *x, ctx.dim())? {
                    let (value, bound) = gk_bound(ctx, &lf, &v)?;
                    let excess = (value - bound).max(0.0);
                    if excess >= worst.0 {
                        worst = (excess, value, bound);
                    }
                }
                let mut r = ResidualReport::new("homo_bound", worst.0, grid, 0.0)
                    .extra("value", worst.1)
                    .extra("bound", worst.2);
                r.passed = worst.1 <= worst.2 * (1.0 + 1e-12);
                r
            }
            CheckSpec::HomoMultiplicativity { f, g, x, .. } => {
                let ctx = self.ctx()?;
                let (lf, lg) = (self.constructive(ctx.kernel(), f)?, self.constructive(ctx.kernel(), g)?);
                self.worst(idx, *x, ctx.dim(), |v| Ok(gk_multiplicativity_residual(ctx, &lf, &lg, v)?))?
            }
            CheckSpec::HomoGeneratorAction { f, x, .. } => {
                let ctx = self.ctx()?;
                let lf = self.constructive(ctx.kernel(), f)?;
                self.worst(idx, *x, ctx.dim(), |v| Ok(gk_generator_action_residual(ctx, &lf, v)?))?
            }
            CheckSpec::HomoWellDefinedness { f, x, .. } => {
                let ctx = self.ctx()?;
                let lf = self.constructive(ctx.kernel(), f)?;
                self.worst(idx, *x, ctx.dim(), |v| Ok(gk_well_definedness_residual(ctx, &lf, v)?))?
            }
            CheckSpec::KlConsistency { l, f, x, .. } => {
                let ctx = self.ctx()?;
                let kl = ctx.kernel().convolve(l, grid)?;
                let ctx_kl = HomomorphismContext::new(
                    ctx.generator(),
                    &kl,
                    self.scenario.family.tau,
                    grid,
                    self.scenario.family.depth,
                )?;
                let lf = self.constructive(&kl, f)?;
                self.worst(idx, *x, ctx.dim(), |v| {
                    Ok(kl_consistency_residual(ctx, &ctx_kl, l, &lf, v)?)
                })?
            }
            CheckSpec::KdsNondegeneracy { probes } => {
                let ctx = self.ctx()?;
                let lfs = probes
                    .iter()
                    .map(|p| self.constructive(ctx.kernel(), p))
                    .collect::<anyhow::Result<Vec<_>>>()?;
                kds_nondegeneracy_check(ctx, &lfs)?
            }
            CheckSpec::Laplace {
                k, lambda, expected, ..
            } => {
                let k = self.pick(k)?;
                let lam = Complex64::new(*lambda, 0.0);
                let reference = match expected {
                    Some(v) => Complex64::new(*v, 0.0),
                    None => k.laplace(lam)?.ok_or_else(|| {
                        anyhow!(ConfigError(format!(
                            "checks[{idx}].expected: kernel `{}` has no closed-form transform at {lambda}",
                            k.tag()
                        )))
                    })?,
                };
                let v = laplace_numeric(&k.sample(grid)?, lam, None).value;
                ResidualReport::new("laplace", (v - reference).norm(), grid, default_tolerance(grid))
                    .param("lambda", *lambda)
                    .extra("numeric", v.re)
                    .extra("reference", reference.re)
            }
            CheckSpec::LaplaceZero { k, lambda, .. } => laplace_zero_check(self.pick(k)?, *lambda, grid)?,
            CheckSpec::Roundtrip { k, f, .. } => {
                let k = self.pick(k)?;
                let back = solve_wk(k, &apply_tk(k, f, grid)?)?;
                let gap = back.max_abs_diff(&f.sample(grid))?;
                ResidualReport::new("roundtrip", gap, grid, default_tolerance(grid))
                    .extra("beyond_support", back.max_abs_beyond(f.b()))
            }
            CheckSpec::WkStructure { k, l, f, n, m, .. } => {
                let d = Ladder::default();
                let ladder = Ladder {
                    n: n.unwrap_or(d.n),
                    m: m.unwrap_or(d.m),
                };
                wk_structure_check(self.pick(k)?, l, f, ladder, grid)?
            }
            CheckSpec::GevreyBound { k, points } => gevrey_bound_check(self.pick(k)?, points)?,
        };
        Ok(r)
    }

    fn pick<'k>(&'k self, k: &'k Option<Kernel>) -> anyhow::Result<&'k Kernel> {
        match k {
            Some(k) => Ok(k),
            None => self.kernel(),
        }
    }
}
