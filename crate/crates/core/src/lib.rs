//! Algebra of elementary symmetric (Hessian) operators on Garding cones,
//! a Monte-Carlo verifier for a concavity inequality of the `sigma_{n-1}`
//! operator, and a prescribed-curvature solver on star-shaped hypersurfaces.
//!
//! The crate is organized around six modules:
//!
//! - [`symfun`]: stable evaluation of `sigma_k`, deleted-index variants and
//!   the first/second derivatives of the induced operator.
//! - [`cone`]: membership, sampling and inequality checks for the Garding
//!   cone `Gamma_k`, plus the semi-convexity predicate.
//! - [`concavity`]: the concavity inequality for `F = sigma_{n-1}` at
//!   strongly negative minimal eigenvalue: exact term decomposition,
//!   rank-one-plus-diagonal quadratic form, determinant identities, and a
//!   randomized verification campaign.
//! - [`geometry`]: star-shaped hypersurfaces as radial graphs over
//!   discretized spheres, with metric, second fundamental form, principal
//!   curvatures and support function.
//! - [`solver`]: damped Newton solution of the prescribed curvature
//!   equation `sigma_k(kappa) = f(X, nu)` with admissibility safeguarding.
//! - [`diagnostics`]: the logarithmic curvature test function, its discrete
//!   critical equation, and the semi-convexity case split.

pub mod concavity;
pub mod cone;
pub mod diagnostics;
pub mod error;
pub mod geometry;
pub mod report;
pub mod solver;
pub mod symfun;

pub use error::{Error, Result};
pub use symfun::{LambdaVec, SigmaDerivatives};

/// Derives the seed for an indexed unit of work (a trial, a worker, a
/// sample) from a campaign master seed.
///
/// The scheme is a single splitmix64 mixing round applied to
/// `master XOR (index + 1) * 0x9E3779B97F4A7C15`; it is documented so that
/// campaigns can be partitioned across workers without changing results:
/// trial `i` always consumes the generator seeded with `derive_seed(seed, i)`
/// no matter which worker runs it.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ (index.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
