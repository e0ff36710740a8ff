//! Retrieval quality, proxy–data alignment and the numerical checks of the
//! field's minimum structure.

mod assignment;
mod checks;
mod recall;

use thiserror::Error;

use crate::field::FieldError;

pub use assignment::{min_cost_assignment, w2_alignment, AlignmentResult};
pub use checks::{
    corollary1_check, prop1_bound, prop1_check, run_corollary1, run_prop1, two_cluster_points,
    Corollary1Report, Corollary1Trial, Prop1Point, Prop1Report, Prop1Summary, KINK_TOLERANCE,
};
pub use recall::{recall_at_k, RetrievalResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("K = {k} must satisfy 1 <= K < n = {n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("{what}: expected {expected} entries, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("cannot match {proxies} proxies to {data} data points")]
    TooFewData { proxies: usize, data: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
}

// Every vector must share the dimension of the first one.
fn check_dims<'a>(
    what: &'static str,
    vectors: impl IntoIterator<Item = &'a Vec<f64>>,
    dim: usize,
) -> Result<(), MetricsError> {
    for v in vectors {
        if v.len() != dim {
            return Err(MetricsError::LengthMismatch {
                what,
                expected: dim,
                got: v.len(),
            });
        }
    }
    Ok(())
}
