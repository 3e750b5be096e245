//! Finite-state Markov semigroups, their uniformization into jump chains,
//! pathwise dilations driven by marked Poisson noise, and the matching
//! quantum (Lindblad) extensions.
//!
//! The crate is organized bottom-up:
//!
//! - [`linalg`]: dense real/complex matrix helpers, matrix exponential,
//!   Hermitian eigenvalues. No external linear-algebra backend.
//! - [`markov`]: rate matrices, stochastic matrices, uniformization
//!   R = lambda(P - I), and the decomposition of a stochastic matrix into
//!   deterministic maps with product weights.
//! - [`dilation`]: the mark space G = E x L, couplings (i, g) -> (i', g'),
//!   marked point configurations, and the shift/jump cocycle machinery.
//! - [`simulate`]: seeded Monte Carlo over marked Poisson configurations,
//!   empirical semigroup checks, and pathwise flow verification.
//! - [`stats`]: chi-square goodness-of-fit and two-sample tests.
//! - [`quantum`]: multiplication operators, the permutation unitary of a
//!   coupling, Kraus families, Lindblad generators, and superoperator
//!   exponentials.
//! - [`io`]: JSON/CSV ingestion and serialization for every artifact above.
//!
//! States are indexed 0..n internally. Serialized artifacts use 1-based
//! state labels and 0-based map labels; see [`io`] for the conventions.

pub mod dilation;
pub mod io;
pub mod linalg;
pub mod markov;
pub mod quantum;
pub mod simulate;
pub mod stats;
pub mod tol;
