//! Scenario files: what to build and which checks to run.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use kconv::{Complex64, Generator, Kernel, TestFunction, IDENTITY_IDS};
use serde::Deserialize;

/// Invalid scenario; the message names the offending key.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid scenario: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub const BUNDLED: [(&str, &str); 5] = [
    (
        "nilpotent-extension",
        include_str!("../scenarios/nilpotent-extension.toml"),
    ),
    (
        "decay-homomorphism",
        include_str!("../scenarios/decay-homomorphism.toml"),
    ),
    ("identities", include_str!("../scenarios/identities.toml")),
    ("kernels", include_str!("../scenarios/kernels.toml")),
    (
        "sequence-example",
        include_str!("../scenarios/sequence-example.toml"),
    ),
];

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub grid: GridSpec,
    #[serde(default)]
    pub kernel: Option<Kernel>,
    #[serde(default)]
    pub generator: Option<GeneratorSpec>,
    #[serde(default)]
    pub family: FamilySpec,
    /// Default tolerance for every check that does not set its own.
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub checks: Vec<CheckSpec>,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dt: f64,
    pub horizon: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    /// End of the base family's domain.
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Ladder depth built for `extend` and the homomorphism checks.
    #[serde(default = "default_depth")]
    pub depth: u32,
}

fn default_tau() -> f64 {
    1.0
}

fn default_depth() -> u32 {
    2
}

impl Default for FamilySpec {
    fn default() -> Self {
        Self {
            tau: default_tau(),
            depth: default_depth(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Directory for CSV and JSON output (overridden by `--out`).
    #[serde(default)]
    pub dir: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    /// `[[0, 1], [0, 0]]`.
    Nilpotent,
    /// Real matrix rows, with an optional imaginary part of the same shape.
    Dense {
        rows: Vec<Vec<f64>>,
        #[serde(default)]
        imag: Option<Vec<Vec<f64>>>,
    },
    Diagonal {
        re: Vec<f64>,
        #[serde(default)]
        im: Option<Vec<f64>>,
    },
    /// `a_m = m/T + i sqrt((e^m/m)^2 - (m/T)^2)`.
    Sequence { period: f64, modes: usize },
    /// `sign * m^2`, `m = 1..=modes`.
    Dirichlet { modes: usize, sign: i8 },
}

impl GeneratorSpec {
    pub fn build(&self) -> kconv::Result<Generator> {
        match self {
            GeneratorSpec::Nilpotent => Ok(Generator::nilpotent2()),
            GeneratorSpec::Dense { rows, imag } => {
                let im = |i: usize, j: usize| {
                    imag.as_ref()
                        .and_then(|m| m.get(i).and_then(|r| r.get(j)))
                        .copied()
                        .unwrap_or(0.0)
                };
                Generator::dense(
                    rows.iter()
                        .enumerate()
                        .map(|(i, r)| {
                            r.iter()
                                .enumerate()
                                .map(|(j, &v)| Complex64::new(v, im(i, j)))
                                .collect()
                        })
                        .collect(),
                )
            }
            GeneratorSpec::Diagonal { re, im } => Generator::diagonal(
                re.iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        Complex64::new(v, im.as_ref().and_then(|m| m.get(i)).copied().unwrap_or(0.0))
                    })
                    .collect(),
            ),
            GeneratorSpec::Sequence { period, modes } => {
                kconv::operators::build_lsquare_sequence(*period, *modes)
            }
            GeneratorSpec::Dirichlet { modes, sign } => {
                let g = Generator::DirichletLaplacianSpectral {
                    modes: *modes,
                    sign: *sign,
                };
                g.validate()?;
                Ok(g)
            }
        }
    }
}

/// One check. `x` selects a basis vector; when absent every basis vector is tried and the
/// worst residual is reported.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckSpec {
    Identity {
        id: String,
        #[serde(default)]
        f: Option<Kernel>,
        #[serde(default)]
        g: Option<Kernel>,
        #[serde(default)]
        values: BTreeMap<String, f64>,
        #[serde(default)]
        tolerance: Option<f64>,
    },
    Ivp {
        #[serde(default)]
        x: Option<usize>,
        #[serde(default)]
        tolerance: Option<f64>,
    },
    Composition {
        #[serde(default)]
        t: Option<f64>,
        #[serde(default)]
        s: Option<f64>,
        #[serde(default)]
        level: Option<u32>,
        #[serde(default)]
        tolerance: Option<f64>,
    },
    Generator {
        #[serde(default)]
        t: Option<f64>,
        #[serde(default)]
        level: Option<u32>,
        #[serde(default)]
        tolerance: Option<f64>,
    },
    Seams {
        #[serde(default)]
        tolerance: Option<f64>,
    },
    ExtendMid {
        j: u32,
        n: u32,
        #[serde(default)]
        tolerance: Option<f64>,
    },
    MidSplit {
        n: u32,
        j1: u32,
        j2: u32,
        #[serde(default)]
        tolerance: Option<f64>,
    },
    Splitting {
        #[serde(default)]
        t: Option<f64>,
        #[serde(default)]
        s: Option<f64>,
        #[serde(default)]
        tolerance: Option<f64>,
    },
    Rank {
        #[serde(default)]
        samples: Option<usize>,
    },
    SequenceExample {
        period: f64,
        alpha: f64,
        modes: usize,
        t_max: f64,
    },
    HomoBound {
        f: TestFunction,
        #[serde(default)]
        x: Option<usize>,
    },
    HomoMultiplicativity {
        f: TestFunction,
        g: TestFunction,
        #[serde(default)]
        x: Option<usize>,
        #[serde(default)]
        tolerance: Option<f64>,
    },
    HomoGeneratorAction {
        f: TestFunction,
        #[serde(default)]
        x: Option<usize>,
        #[serde(default)]
        tolerance: Option<f64>,
    },
    HomoWellDefinedness {
        f: TestFunction,
        #[serde(default)]
        x: Option<usize>,
        #[serde(default)]
        tolerance: Option<f64>,
    },
    KlConsistency {
        l: Kernel,
        f: TestFunction,
        #[serde(default)]
        x: Option<usize>,
        #[serde(default)]
        tolerance: Option<f64>,
    },
    KdsNondegeneracy {
        probes: Vec<TestFunction>,
    },
    Laplace {
        /// Kernel for this check (defaults to the scenario kernel).
        #[serde(default)]
        k: Option<Kernel>,
        lambda: f64,
        #[serde(default)]
        expected: Option<f64>,
        #[serde(default)]
        tolerance: Option<f64>,
    },
    LaplaceZero {
        /// Kernel for this check (defaults to the scenario kernel).
        #[serde(default)]
        k: Option<Kernel>,
        lambda: Complex64,
        #[serde(default)]
        tolerance: Option<f64>,
    },
    Roundtrip {
        /// Kernel for this check (defaults to the scenario kernel).
        #[serde(default)]
        k: Option<Kernel>,
        f: TestFunction,
        #[serde(default)]
        tolerance: Option<f64>,
    },
    WkStructure {
        /// Kernel for this check (defaults to the scenario kernel).
        #[serde(default)]
        k: Option<Kernel>,
        l: Kernel,
        f: TestFunction,
        #[serde(default)]
        n: Option<u32>,
        #[serde(default)]
        m: Option<u32>,
        #[serde(default)]
        tolerance: Option<f64>,
    },
    GevreyBound {
        /// Kernel for this check (defaults to the scenario kernel).
        #[serde(default)]
        k: Option<Kernel>,
        points: Vec<Complex64>,
    },
}

/// Which subcommand a check belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Identities,
    Verify,
    Homo,
    Kernel,
}

impl CheckSpec {
    pub fn category(&self) -> Category {
        use CheckSpec::*;
        match self {
            Identity { .. } => Category::Identities,
            Ivp { .. }
            | Composition { .. }
            | Generator { .. }
            | Seams { .. }
            | ExtendMid { .. }
            | MidSplit { .. }
            | Splitting { .. }
            | Rank { .. }
            | SequenceExample { .. } => Category::Verify,
            HomoBound { .. }
            | HomoMultiplicativity { .. }
            | HomoGeneratorAction { .. }
            | HomoWellDefinedness { .. }
            | KlConsistency { .. }
            | KdsNondegeneracy { .. } => Category::Homo,
            Laplace { .. }
            | LaplaceZero { .. }
            | Roundtrip { .. }
            | WkStructure { .. }
            | GevreyBound { .. } => Category::Kernel,
        }
    }

    pub fn tolerance(&self) -> Option<f64> {
        use CheckSpec::*;
        match self {
            Identity { tolerance, .. }
            | Ivp { tolerance, .. }
            | Composition { tolerance, .. }
            | Generator { tolerance, .. }
            | Seams { tolerance }
            | ExtendMid { tolerance, .. }
            | MidSplit { tolerance, .. }
            | Splitting { tolerance, .. }
            | HomoMultiplicativity { tolerance, .. }
            | HomoGeneratorAction { tolerance, .. }
            | HomoWellDefinedness { tolerance, .. }
            | KlConsistency { tolerance, .. }
            | Laplace { tolerance, .. }
            | LaplaceZero { tolerance, .. }
            | Roundtrip { tolerance, .. }
            | WkStructure { tolerance, .. } => *tolerance,
            Rank { .. }
            | SequenceExample { .. }
            | HomoBound { .. }
            | KdsNondegeneracy { .. }
            | GevreyBound { .. } => None,
        }
    }

    /// Whether the check's pass criterion is a residual threshold that `--tol` may replace.
    pub fn tolerance_applies(&self) -> bool {
        !matches!(
            self,
            CheckSpec::Rank { .. }
                | CheckSpec::SequenceExample { .. }
                | CheckSpec::HomoBound { .. }
                | CheckSpec::KdsNondegeneracy { .. }
                | CheckSpec::GevreyBound { .. }
        )
    }

    fn needs_kernel(&self) -> bool {
        use CheckSpec::*;
        match self {
            Identity { .. } | SequenceExample { .. } => false,
            Laplace { k, .. }
            | LaplaceZero { k, .. }
            | Roundtrip { k, .. }
            | WkStructure { k, .. }
            | GevreyBound { k, .. } => k.is_none(),
            _ => true,
        }
    }

    fn needs_generator(&self) -> bool {
        !matches!(
            self.category(),
            Category::Identities | Category::Kernel
        ) && !matches!(self, CheckSpec::SequenceExample { .. })
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let s: Scenario = toml::from_str(text).map_err(|e| ConfigError(e.message().to_string()))?;
        s.validate()?;
        Ok(s)
    }

    /// Read a scenario from a path, or from the bundled set by name.
    pub fn load(spec: &str) -> Result<Self, ConfigError> {
        let path = Path::new(spec);
        if path.is_file() {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError(format!("config: cannot read {spec}: {e}")))?;
            return Self::parse(&text);
        }
        let name = spec.trim_end_matches(".toml");
        let name = name.rsplit('/').next().unwrap_or(name);
        BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Self::parse(text))
            .unwrap_or_else(|| {
                Err(ConfigError(format!(
                    "config: no file or bundled scenario named `{spec}` (bundled: {})",
                    BUNDLED.map(|(n, _)| n).join(", ")
                )))
            })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError(format!("{key}: must be positive, got {v}")))
            }
        };
        positive("grid.dt", self.grid.dt)?;
        positive("grid.horizon", self.grid.horizon)?;
        positive("family.tau", self.family.tau)?;
        if self.family.depth == 0 {
            return Err(ConfigError("family.depth: must be >= 1".into()));
        }
        if let Some(t) = self.tolerance {
            positive("tolerance", t)?;
        }
        if let Some(k) = &self.kernel {
            k.validate()
                .map_err(|e| ConfigError(format!("kernel: {e}")))?;
        }
        if let Some(g) = &self.generator {
            g.build()
                .map_err(|e| ConfigError(format!("generator: {e}")))?;
        }
        for (i, c) in self.checks.iter().enumerate() {
            if let Some(t) = c.tolerance() {
                positive(&format!("checks[{i}].tolerance"), t)?;
            }
            if let CheckSpec::Identity { id, .. } = c {
                if !IDENTITY_IDS.contains(&id.as_str()) {
                    return Err(ConfigError(format!(
                        "checks[{i}].id: unknown identity `{id}` (known: {})",
                        IDENTITY_IDS.join(", ")
                    )));
                }
            }
            if let CheckSpec::Laplace { k: Some(k), .. }
            | CheckSpec::LaplaceZero { k: Some(k), .. }
            | CheckSpec::Roundtrip { k: Some(k), .. }
            | CheckSpec::WkStructure { k: Some(k), .. }
            | CheckSpec::GevreyBound { k: Some(k), .. } = c
            {
                k.validate()
                    .map_err(|e| ConfigError(format!("checks[{i}].k: {e}")))?;
            }
            if c.needs_kernel() && self.kernel.is_none() {
                return Err(ConfigError(format!("kernel: required by checks[{i}]")));
            }
            if c.needs_generator() && self.generator.is_none() {
                return Err(ConfigError(format!("generator: required by checks[{i}]")));
            }
        }
        Ok(())
    }
}
