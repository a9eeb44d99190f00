//! Verification laboratory for four-dimensional matrix Painlevé systems:
//! trace Hamiltonians on 2x2 matrix pairs, their 4x4 linear problems,
//! Hukuhara–Turrittin–Levelt reduction and spectral-type classification,
//! the degeneration scheme connecting the systems, and Laplace-transform
//! correspondences between linear problems.

pub mod algebra;
pub mod painleve;
pub mod lax;
pub mod htl;
pub mod degeneration;
pub mod laplace;
pub mod cli;
