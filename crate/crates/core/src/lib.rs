//! Potential-field metric learning over point-charge embeddings and proxies.
//!
//! Every embedding (and every learnable proxy) is a unit charge. Charges of
//! the same class attract through a decaying potential that is flat inside a
//! clamp radius; charges of different classes repel inside a cutoff radius.
//! Training moves embeddings and proxies along the resulting forces.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`kernel`] | pair potentials ([`FieldParams`], [`PairPotential`], [`PotentialKernel`]) |
//! | [`field`] | charge snapshots, class fields, total energy, forces, field grids |
//! | [`cpml`] | the contrastive baseline kernel |
//! | [`oracle`] | finite-difference force oracle and random gradient checks |
//! | [`optim`] | encoders, proxies, optimizers, training loops, local descent |
//! | [`synthdata`] | Gaussian-mixture datasets, label noise, zero-shot splits |
//! | [`metrics`] | Recall@K, proxy/data W2 alignment, minimum-structure checks |
//! | [`seed`] | hierarchical RNG substreams |

pub mod cpml;
pub mod field;
pub mod kernel;
pub mod metrics;
pub mod optim;
pub mod oracle;
pub mod seed;
pub mod synthdata;
mod vecmath;

pub use cpml::CpmlParams;
pub use field::{ChargeEntity, ChargeSnapshot, EntityKind, Field, FieldError, ForceMode};
pub use kernel::{FieldParams, Interaction, KernelKind, PairPotential, PotentialKernel};

/// Formats a float with 17 significant digits, enough to round-trip any `f64`.
pub fn format_sig17(v: f64) -> String {
    format!("{v:.16e}")
}
