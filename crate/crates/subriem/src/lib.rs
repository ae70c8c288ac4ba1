//! subriem: a numerical laboratory for sub-Riemannian analysis on H-type
//! groups.
//!
//! The crate builds, from first principles, the chain of objects needed to
//! study coercive functional inequalities for heavy-tailed measures on
//! Carnot groups of step two:
//!
//! 1. [`htype`] — the group algebra: points, products, dilations, the
//!    horizontal frame `X_1..X_m` and its first/second derivatives.
//! 2. [`distance`] — the Carnot-Caratheodory distance (scalar shooting
//!    solver plus an independent trajectory-optimization oracle) and checks
//!    of its differential properties (gradient length one, sub-Laplacian
//!    growth control).
//! 3. [`measure`] — probability measures `exp(-alpha d^p) dLambda / Z` with
//!    optional bounded perturbations, a seeded component-wise random-walk
//!    Metropolis sampler, and expectation/normalization estimators.
//! 4. [`profile`] + [`functionals`] — the one-dimensional isoperimetric
//!    profile machinery and the battery of inequality verifiers
//!    (gradient-weighted moment bounds, Cheeger, Phi-entropy, defective
//!    log-Sobolev, profile-based infinite-dimensional form, exponential
//!    integrability, classical Sobolev baselines).
//! 5. [`isoperimetry`] — surface measure via enlargements, isoperimetric
//!    ratios against the profile, and co-area accounting.
//! 6. [`heat`] — horizontal Brownian motion, the heat semigroup, gradient
//!    commutation estimates, and pointwise kernel comparisons.
//! 7. [`gibbs`] — finite-lattice spin systems with group-valued spins,
//!    checkerboard sweeps, gradient contraction, and equilibrium-level
//!    entropy bounds.
//! 8. [`report`] — machine-readable verification reports shared by the
//!    library and the command-line front end.
//!
//! Everything stochastic is driven by explicit seeds through counter-split
//! RNG streams; a fixed seed reproduces every estimate bit for bit.

pub mod corpus;
pub mod distance;
pub mod error;
pub mod functionals;
pub mod gibbs;
pub mod heat;
pub mod htype;
pub mod isoperimetry;
pub mod measure;
pub mod profile;
pub mod quad;
pub mod report;
pub mod sobolev;
pub mod stats;

pub use error::{Error, Result};
