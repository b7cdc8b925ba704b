//! Tautological rings of genus-zero prestable curves: graph combinatorics,
//! decorated strata, intersection calculus, WDVV relations and comparison
//! with the stable moduli spaces.

pub mod calculus;
pub mod graph;
pub mod identities;
pub mod linalg;
#[cfg(any(test, feature = "oracles"))]
pub mod oracles;
pub mod relations;
pub mod stable;
pub mod strata;
