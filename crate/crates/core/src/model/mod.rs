//! Core sandpile data model: specs, configurations, toppling and JSON.

mod config;
mod dynamics;
mod json;
mod spec;

use thiserror::Error;

pub use config::{Configuration, SubConfiguration};
pub use dynamics::{
    default_step_budget, is_stable, stabilize, topple, unstable_sites, FirstUnstable,
    Stabilization, ToppleEvent, TopplePolicy,
};
pub use spec::{validate, Rule, SandpileSpec, SiteIdx, SpecDocument, ValidationReport, Violation, Warning};

#[derive(Debug, Clone, Error)]
pub enum ModelError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    #[error("schema error in `{field}`: {message}")]
    Schema { field: String, message: String },

    #[error("invalid sandpile:\n{0}")]
    Invalid(ValidationReport),

    #[error("unknown site {0}")]
    UnknownSite(String),

    #[error("configuration has {found} heights, spec has {expected} sites")]
    ConfigurationMismatch { expected: usize, found: usize },

    #[error("cannot topple {site}: height {height} is below capacity {capacity}")]
    ToppleAtStableSite { site: String, height: u32, capacity: u32 },

    #[error("site {site} has {count} rules, no rule #{index}")]
    InvalidRuleIndex { site: String, index: usize, count: usize },

    #[error("no stable configuration after {budget} topplings")]
    StepBudgetExhausted { budget: usize, trailing: Vec<Configuration> },
}
