//! Pair potentials.
//!
//! A kernel is described by its radial profile: the attraction and repulsion
//! potentials as functions of the distance `d` between an evaluation point and
//! a source charge, together with their derivatives in `d`. Field assembly in
//! [`crate::field`] only ever talks to the [`PairPotential`] trait.

use serde::{Deserialize, Serialize};

use crate::cpml::CpmlParams;
use crate::field::FieldError;
use crate::vecmath::dist;

/// Distances below this are treated as coincident: attraction uses its clamp
/// branch and repulsion is evaluated at this distance.
pub const DISTANCE_GUARD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Interaction {
    Attraction,
    Repulsion,
}

/// Radial profile of a pair potential.
///
/// `*_slope` is the derivative of the potential with respect to the pair
/// distance. The force exerted on the evaluation point `r` by a source at `z`
/// is `-slope(d) * (r - z) / d`.
pub trait PairPotential {
    fn attraction(&self, d: f64) -> f64;
    fn repulsion(&self, d: f64) -> f64;
    fn attraction_slope(&self, d: f64) -> f64;
    fn repulsion_slope(&self, d: f64) -> f64;

    fn potential(&self, interaction: Interaction, d: f64) -> f64 {
        match interaction {
            Interaction::Attraction => self.attraction(d),
            Interaction::Repulsion => self.repulsion(d),
        }
    }

    fn slope(&self, interaction: Interaction, d: f64) -> f64 {
        match interaction {
            Interaction::Attraction => self.attraction_slope(d),
            Interaction::Repulsion => self.repulsion_slope(d),
        }
    }
}

/// Hyperparameters of the decaying kernel.
///
/// `alpha = 0` selects the no-decay variant: a potential whose force has unit
/// magnitude wherever it is active (`d - delta_att` outside the attraction
/// clamp, `delta_rep - d` inside the repulsion cutoff).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldParams {
    pub delta_att: f64,
    pub delta_rep: f64,
    pub alpha: f64,
}

impl FieldParams {
    pub fn new(delta: f64, alpha: f64) -> Result<Self, FieldError> {
        Self::with_radii(delta, delta, alpha)
    }

    pub fn with_radii(delta_att: f64, delta_rep: f64, alpha: f64) -> Result<Self, FieldError> {
        let params = Self {
            delta_att,
            delta_rep,
            alpha,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if !(self.delta_att.is_finite() && self.delta_att > 0.0) {
            return Err(FieldError::InvalidParams(format!(
                "delta_att must be positive, got {}",
                self.delta_att
            )));
        }
        if !(self.delta_rep.is_finite() && self.delta_rep > 0.0) {
            return Err(FieldError::InvalidParams(format!(
                "delta_rep must be positive, got {}",
                self.delta_rep
            )));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(FieldError::InvalidParams(format!(
                "alpha must be non-negative, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    fn decays(&self) -> bool {
        self.alpha > 0.0
    }
}

// Branches use the "otherwise" side when `d == delta` exactly.
impl PairPotential for FieldParams {
    fn attraction(&self, d: f64) -> f64 {
        let delta = self.delta_att;
        match (self.decays(), d < delta) {
            (true, true) => -delta.powf(-self.alpha),
            (true, false) => -d.powf(-self.alpha),
            (false, true) => 0.0,
            (false, false) => d - delta,
        }
    }

    fn repulsion(&self, d: f64) -> f64 {
        let delta = self.delta_rep;
        match (self.decays(), d < delta) {
            (true, true) => d.powf(-self.alpha),
            (true, false) => delta.powf(-self.alpha),
            (false, true) => delta - d,
            (false, false) => 0.0,
        }
    }

    fn attraction_slope(&self, d: f64) -> f64 {
        match (self.decays(), d < self.delta_att) {
            (_, true) => 0.0,
            (true, false) => self.alpha * d.powf(-self.alpha - 1.0),
            (false, false) => 1.0,
        }
    }

    fn repulsion_slope(&self, d: f64) -> f64 {
        match (self.decays(), d < self.delta_rep) {
            (_, false) => 0.0,
            (true, true) => -self.alpha * d.powf(-self.alpha - 1.0),
            (false, true) => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Pfml,
    Cpml,
}

/// One of the two supported kernels, dispatching [`PairPotential`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PotentialKernel {
    Pfml(FieldParams),
    Cpml(CpmlParams),
}

impl PotentialKernel {
    pub fn kind(&self) -> KernelKind {
        match self {
            Self::Pfml(_) => KernelKind::Pfml,
            Self::Cpml(_) => KernelKind::Cpml,
        }
    }

    /// Builds a kernel of `kind` from the shared parameter set. CPML uses
    /// `delta_att` as its single clamp radius.
    pub fn from_kind(kind: KernelKind, params: FieldParams) -> Result<Self, FieldError> {
        params.validate()?;
        Ok(match kind {
            KernelKind::Pfml => Self::Pfml(params),
            KernelKind::Cpml => Self::Cpml(CpmlParams::new(params.delta_att)?),
        })
    }
}

impl PairPotential for PotentialKernel {
    fn attraction(&self, d: f64) -> f64 {
        match self {
            Self::Pfml(p) => p.attraction(d),
            Self::Cpml(p) => p.attraction(d),
        }
    }

    fn repulsion(&self, d: f64) -> f64 {
        match self {
            Self::Pfml(p) => p.repulsion(d),
            Self::Cpml(p) => p.repulsion(d),
        }
    }

    fn attraction_slope(&self, d: f64) -> f64 {
        match self {
            Self::Pfml(p) => p.attraction_slope(d),
            Self::Cpml(p) => p.attraction_slope(d),
        }
    }

    fn repulsion_slope(&self, d: f64) -> f64 {
        match self {
            Self::Pfml(p) => p.repulsion_slope(d),
            Self::Cpml(p) => p.repulsion_slope(d),
        }
    }
}

fn check_dims(r: &[f64], z: &[f64]) -> Result<(), FieldError> {
    if r.is_empty() {
        return Err(FieldError::EmptyVector);
    }
    if r.len() != z.len() {
        return Err(FieldError::DimensionMismatch {
            expected: r.len(),
            got: z.len(),
        });
    }
    Ok(())
}

/// Attraction potential exerted at `r` by a charge at `z`.
pub fn psi_att<K: PairPotential + ?Sized>(r: &[f64], z: &[f64], kernel: &K) -> Result<f64, FieldError> {
    check_dims(r, z)?;
    Ok(kernel.attraction(dist(r, z)))
}

/// Repulsion potential exerted at `r` by a charge at `z`.
pub fn psi_rep<K: PairPotential + ?Sized>(r: &[f64], z: &[f64], kernel: &K) -> Result<f64, FieldError> {
    check_dims(r, z)?;
    Ok(kernel.repulsion(dist(r, z).max(DISTANCE_GUARD)))
}

/// Force on a unit charge at `r` due to a source at `z`, `-grad_r psi`.
pub fn force_pair<K: PairPotential + ?Sized>(
    r: &[f64],
    z: &[f64],
    kernel: &K,
    interaction: Interaction,
) -> Result<Vec<f64>, FieldError> {
    check_dims(r, z)?;
    let mut out = vec![0.0; r.len()];
    accumulate_pair_force(&mut out, r, z, dist(r, z), kernel, interaction);
    Ok(out)
}

/// Adds the pair force to `out`, returning whether the distance guard fired.
pub(crate) fn accumulate_pair_force<K: PairPotential + ?Sized>(
    out: &mut [f64],
    r: &[f64],
    z: &[f64],
    d: f64,
    kernel: &K,
    interaction: Interaction,
) -> bool {
    let (d_eval, guarded) = guard(d, interaction);
    let slope = kernel.slope(interaction, d_eval);
    if slope != 0.0 && d > 0.0 {
        let coef = -slope / d_eval;
        for ((o, ri), zi) in out.iter_mut().zip(r).zip(z) {
            *o += coef * (ri - zi);
        }
    }
    guarded
}

/// Applies the coincidence guard: attraction keeps `d` (any sub-guard distance
/// is inside the clamp), repulsion is evaluated at the guard distance.
pub(crate) fn guard(d: f64, interaction: Interaction) -> (f64, bool) {
    if d < DISTANCE_GUARD && interaction == Interaction::Repulsion {
        (DISTANCE_GUARD, true)
    } else {
        (d, false)
    }
}
