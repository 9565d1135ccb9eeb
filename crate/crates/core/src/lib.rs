//! Stochastic abelian sandpile models.
//!
//! * [`model`]: specs, configurations, toppling, canonical JSON.
//! * [`reduce`]: fixed-point pruning, irreducibility and FSC existence.
//! * [`oracle`]: exhaustive recurrent-set computation and forbiddenness checks.
//! * [`builders`]: grid models and seeded random specs.
//! * [`fscgen`]: gluing forbidden sub-configurations into larger ones.
//! * [`cli`]: the `sasm` command line.

pub mod builders;
pub mod cli;
pub mod fscgen;
pub mod model;
pub mod oracle;
pub mod reduce;
