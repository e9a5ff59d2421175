//! Finite-dimensional generators `A` and their classical semigroups `e^{tA}`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{phi1, phi2};

pub type VectorState = DVector<Complex64>;

const C1: Complex64 = Complex64::new(1.0, 0.0);

/// Generator backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    /// Dense `d x d` matrix, row-major.
    DenseMatrix { rows: Vec<Vec<Complex64>> },
    /// Diagonal operator with the given eigenvalues.
    DiagonalSequence { a: Vec<Complex64> },
    /// `sign * m^2`, `m = 1..=modes`: the Dirichlet Laplacian on `[0, pi]` in its eigenbasis.
    DirichletLaplacianSpectral { modes: usize, sign: i8 },
}

impl Generator {
    pub fn dense(rows: Vec<Vec<Complex64>>) -> Result<Self> {
        let g = Generator::DenseMatrix { rows };
        g.validate()?;
        Ok(g)
    }

    pub fn real_dense(rows: &[&[f64]]) -> Result<Self> {
        Self::dense(
            rows.iter()
                .map(|r| r.iter().map(|&v| Complex64::new(v, 0.0)).collect())
                .collect(),
        )
    }

    pub fn diagonal(a: Vec<Complex64>) -> Result<Self> {
        let g = Generator::DiagonalSequence { a };
        g.validate()?;
        Ok(g)
    }

    /// `[[0, 1], [0, 0]]`.
    pub fn nilpotent2() -> Self {
        Self::real_dense(&[&[0.0, 1.0], &[0.0, 0.0]]).expect("valid")
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Generator::DenseMatrix { rows } => {
                let d = rows.len();
                if d == 0 {
                    return Err(Error::Empty("dense generator has no rows".into()));
                }
                for r in rows {
                    if r.len() != d {
                        return Err(Error::Dimension {
                            expected: d,
                            got: r.len(),
                        });
                    }
                    if r.iter().any(|z| !z.is_finite()) {
                        return Err(Error::Domain("non-finite generator entry".into()));
                    }
                }
            }
            Generator::DiagonalSequence { a } => {
                if a.is_empty() {
                    return Err(Error::Empty("diagonal generator has no modes".into()));
                }
                if a.iter().any(|z| !z.is_finite()) {
                    return Err(Error::Domain("non-finite eigenvalue".into()));
                }
            }
            Generator::DirichletLaplacianSpectral { modes, sign } => {
                if *modes == 0 {
                    return Err(Error::Empty("spectral generator needs modes >= 1".into()));
                }
                if sign.abs() != 1 {
                    return Err(Error::Domain(format!("sign must be +1 or -1, got {sign}")));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            Generator::DenseMatrix { rows } => rows.len(),
            Generator::DiagonalSequence { a } => a.len(),
            Generator::DirichletLaplacianSpectral { modes, .. } => *modes,
        }
    }

    /// Eigenvalues of the diagonal backends.
    pub fn eigenvalues(&self) -> Option<Vec<Complex64>> {
        match self {
            Generator::DenseMatrix { .. } => None,
            Generator::DiagonalSequence { a } => Some(a.clone()),
            Generator::DirichletLaplacianSpectral { modes, sign } => Some(
                (1..=*modes)
                    .map(|m| Complex64::new(f64::from(*sign) * (m * m) as f64, 0.0))
                    .collect(),
            ),
        }
    }

    pub fn matrix(&self) -> DMatrix<Complex64> {
        match self {
            Generator::DenseMatrix { rows } => {
                let d = rows.len();
                DMatrix::from_fn(d, d, |i, j| rows[i][j])
            }
            _ => DMatrix::from_diagonal(&DVector::from_vec(self.eigenvalues().expect("diagonal"))),
        }
    }

    fn diag_map(&self, f: impl Fn(Complex64) -> Complex64) -> Option<DMatrix<Complex64>> {
        self.eigenvalues()
            .map(|a| DMatrix::from_diagonal(&DVector::from_iterator(a.len(), a.into_iter().map(f))))
    }

    /// `e^{tA}` (scaling-and-squaring Pade for dense matrices).
    pub fn exp_matrix(&self, t: f64) -> DMatrix<Complex64> {
        self.diag_map(|a| (a * t).exp())
            .unwrap_or_else(|| (self.matrix() * Complex64::new(t, 0.0)).exp())
    }

    /// `(e^{hA}, phi_1(hA), phi_2(hA))`, the dense case through one augmented exponential.
    pub fn phi_matrices(
        &self,
        h: f64,
    ) -> (DMatrix<Complex64>, DMatrix<Complex64>, DMatrix<Complex64>) {
        if let Some(a) = self.eigenvalues() {
            let d = |f: &dyn Fn(Complex64) -> Complex64| {
                DMatrix::from_diagonal(&DVector::from_iterator(a.len(), a.iter().map(|&z| f(z * h))))
            };
            return (d(&|z| z.exp()), d(&phi1), d(&phi2));
        }
        let n = self.dim();
        let mut big = DMatrix::zeros(3 * n, 3 * n);
        big.view_mut((0, 0), (n, n))
            .copy_from(&(self.matrix() * Complex64::new(h, 0.0)));
        for i in 0..n {
            big[(i, n + i)] = C1;
            big[(n + i, 2 * n + i)] = C1;
        }
        let e = big.exp();
        (
            e.view((0, 0), (n, n)).into_owned(),
            e.view((0, n), (n, n)).into_owned(),
            e.view((0, 2 * n), (n, n)).into_owned(),
        )
    }

    fn check_dim(&self, x: &VectorState) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// `e^{tA} x`.
pub fn semigroup_apply(a: &Generator, t: f64, x: &VectorState) -> Result<VectorState> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("semigroup time must be >= 0, got {t}")));
    }
    a.check_dim(x)?;
    if let Some(ev) = a.eigenvalues() {
        return Ok(DVector::from_iterator(
            x.len(),
            ev.iter().zip(x.iter()).map(|(l, v)| (l * t).exp() * v),
        ));
    }
    Ok(a.exp_matrix(t) * x)
}

/// `A x`.
pub fn generator_apply(a: &Generator, x: &VectorState) -> Result<VectorState> {
    a.check_dim(x)?;
    if let Some(ev) = a.eigenvalues() {
        return Ok(DVector::from_iterator(
            x.len(),
            ev.iter().zip(x.iter()).map(|(l, v)| l * v),
        ));
    }
    Ok(a.matrix() * x)
}

/// `a_m = m/T + i sqrt((e^m/m)^2 - (m/T)^2)`, `m = 1..=modes`.
pub fn lsquare_eigenvalue(m: usize, period: f64) -> Result<Complex64> {
    let mf = m as f64;
    let re = mf / period;
    let growth = mf.exp() / mf;
    let disc = growth * growth - re * re;
    if disc < 0.0 {
        return Err(Error::Domain(format!(
            "(e^m/m)^2 < (m/T)^2 for m={m}, T={period}"
        )));
    }
    Ok(Complex64::new(re, disc.sqrt()))
}

/// Diagonal generator with the eigenvalues `a_m` above.
pub fn build_lsquare_sequence(period: f64, modes: usize) -> Result<Generator> {
    if !(period > 0.0 && period.is_finite()) {
        return Err(Error::Domain(format!("T must be positive, got {period}")));
    }
    if modes == 0 {
        return Err(Error::Empty("the sequence needs at least one mode".into()));
    }
    let a = (1..=modes)
        .map(|m| lsquare_eigenvalue(m, period))
        .collect::<Result<Vec<_>>>()?;
    Generator::diagonal(a)
}

/// Unit vector `e_j` in dimension `d`.
pub fn basis(d: usize, j: usize) -> VectorState {
    let mut v = DVector::zeros(d);
    v[j] = C1;
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> VectorState {
        DVector::from_iterator(xs.len(), xs.iter().map(|&x| Complex64::new(x, 0.0)))
    }

    #[test]
    fn nilpotent_exponential() {
        let a = Generator::nilpotent2();
        let y = semigroup_apply(&a, 2.0, &v(&[0.0, 1.0])).unwrap();
        assert!((y - v(&[2.0, 1.0])).norm() < 1e-14);
        let y = generator_apply(&a, &v(&[0.0, 1.0])).unwrap();
        assert_eq!(y, v(&[1.0, 0.0]));
    }

    #[test]
    fn scalar_decay() {
        let a = Generator::real_dense(&[&[-1.0]]).unwrap();
        let y = semigroup_apply(&a, 1.0, &v(&[1.0])).unwrap();
        assert!((y[0].re - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(generator_apply(&a, &v(&[3.0])).unwrap()[0].re, -3.0);
    }

    #[test]
    fn lsquare_values() {
        let a = build_lsquare_sequence(1.0, 2).unwrap();
        let ev = a.eigenvalues().unwrap();
        assert!((ev[0].re - 1.0).abs() < 1e-15);
        assert!((ev[0].im - (std::f64::consts::E.powi(2) - 1.0).sqrt()).abs() < 1e-14);
        assert!((ev[0].im - 2.5277).abs() < 1e-4);
        let want = ((std::f64::consts::E.powi(2) / 2.0).powi(2) - 4.0).sqrt();
        assert!((ev[1] - Complex64::new(2.0, want)).norm() < 1e-14);
        assert!((ev[1].im - 3.106).abs() < 1e-3);
        let y = semigroup_apply(&a, 0.5, &basis(2, 0)).unwrap();
        assert!((y[0].norm() - 0.5f64.exp()).abs() < 1e-14);
        let b = build_lsquare_sequence(2.0, 1).unwrap();
        assert_eq!(b.eigenvalues().unwrap()[0].re, 0.5);
    }

    #[test]
    fn phi_matrices_match_diagonal_formulas() {
        let dense = Generator::real_dense(&[&[-1.0, 0.0], &[0.0, 2.0]]).unwrap();
        let diag = Generator::diagonal(vec![Complex64::new(-1.0, 0.0), Complex64::new(2.0, 0.0)])
            .unwrap();
        let (e1, p1, q1) = dense.phi_matrices(0.3);
        let (e2, p2, q2) = diag.phi_matrices(0.3);
        assert!((e1 - e2).norm() < 1e-14);
        assert!((p1 - p2).norm() < 1e-14);
        assert!((q1 - q2).norm() < 1e-14);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = Generator::nilpotent2();
        assert!(matches!(
            generator_apply(&a, &v(&[1.0])),
            Err(Error::Dimension { expected: 2, got: 1 })
        ));
        assert!(semigroup_apply(&a, -1.0, &v(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn dirichlet_spectrum() {
        let a = Generator::DirichletLaplacianSpectral { modes: 3, sign: -1 };
        let ev = a.eigenvalues().unwrap();
        assert_eq!(ev[2].re, -9.0);
        assert!(Generator::DirichletLaplacianSpectral { modes: 3, sign: 2 }
            .validate()
            .is_err());
    }
}
