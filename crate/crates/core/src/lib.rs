//! Formal reasoning for gradient-boosted tree ensembles.
//!
//! A trained ensemble (LightGBM text dump or portable JSON) is compiled into
//! propositional clauses over "feature <= threshold" atoms and per-leaf path
//! literals. An exact score-gap oracle on top of that encoding answers whether
//! a partial instance forces the model's prediction, which drives:
//!
//! * subset-minimal abductive explanations of single predictions ([`axp`]),
//! * per-class feature intervals aggregated from those explanations ([`classexpl`]),
//! * explanation-guided adversarial generation and detection ([`adversarial`]),
//! * rank-agreement metrics against external attribution rankings ([`metrics`]).
//!
//! [`refcheck`] holds a brute-force cell enumerator used to validate the
//! encoding and the oracle on small models.

pub mod adversarial;
pub mod axp;
pub mod classexpl;
pub mod encoder;
pub mod error;
pub mod logic;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod refcheck;

pub use error::{Error, Result};
