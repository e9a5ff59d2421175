//! Local k-convoluted semigroups on uniform grids: the convolution calculus, construction and
//! sharp extension of convoluted families, test functions with their generalized Weyl
//! derivatives, and the induced algebra homomorphism, each checked by residuals against
//! independent quadrature oracles.

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod convoluted;
pub mod error;
pub mod grid;
pub mod homomorphism;
pub mod kernel;
pub mod kernel_algebra;
pub mod operators;
mod par;
pub mod quadrature;
pub mod test_functions;

pub use convoluted::{
    build_convoluted, canonical_family, composition_residual, extend_family, extend_family_mid,
    generator_residual, ivp_residual, lsquare_check, splitting_residual, ConvolutedFamily,
    FamilyLadder, SupNorm,
};
pub use error::{Error, Result};
pub use grid::{Grid, SampledFn};
pub use homomorphism::{
    gk_apply, gk_generator_action_residual, gk_multiplicativity_residual, kds_nondegeneracy_check,
    kl_consistency_residual, HomomorphismContext, LadderFunction,
};
pub use kernel::{GevreySequence, Kernel, Side};
pub use kernel_algebra::{check_identity, IdentityParams, ResidualReport, IDENTITY_IDS};
pub use num_complex::Complex64;
pub use operators::{basis, Generator, VectorState};
pub use test_functions::{apply_tk, apply_wk, solve_wk, weyl_derivative, TestFunction};
