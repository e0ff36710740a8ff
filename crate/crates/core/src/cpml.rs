//! Contrastive baseline kernel.
//!
//! Attraction is `max(delta^2, d^2)`: flat inside the clamp and quadratic
//! outside, so its force grows linearly with distance. Repulsion is the
//! squared hinge `(delta - d)^2` inside the clamp and zero beyond it.

use serde::{Deserialize, Serialize};

use crate::field::{ChargeSnapshot, Field, FieldError};
use crate::kernel::{self, PairPotential};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpmlParams {
    pub delta: f64,
}

impl CpmlParams {
    pub fn new(delta: f64) -> Result<Self, FieldError> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(FieldError::InvalidParams(format!(
                "cpml delta must be positive, got {delta}"
            )));
        }
        Ok(Self { delta })
    }
}

impl PairPotential for CpmlParams {
    fn attraction(&self, d: f64) -> f64 {
        if d < self.delta {
            self.delta * self.delta
        } else {
            d * d
        }
    }

    fn repulsion(&self, d: f64) -> f64 {
        if d < self.delta {
            (self.delta - d).powi(2)
        } else {
            0.0
        }
    }

    fn attraction_slope(&self, d: f64) -> f64 {
        if d < self.delta {
            0.0
        } else {
            2.0 * d
        }
    }

    fn repulsion_slope(&self, d: f64) -> f64 {
        if d < self.delta {
            -2.0 * (self.delta - d)
        } else {
            0.0
        }
    }
}

pub fn psi_att_star(r: &[f64], z: &[f64], params: &CpmlParams) -> Result<f64, FieldError> {
    kernel::psi_att(r, z, params)
}

pub fn psi_rep_star(r: &[f64], z: &[f64], params: &CpmlParams) -> Result<f64, FieldError> {
    kernel::psi_rep(r, z, params)
}

/// Total energy of a snapshot under the contrastive kernel, with the same
/// class decomposition and self-exclusion as the decaying kernel.
pub fn cpml_total_energy(snapshot: &ChargeSnapshot, params: &CpmlParams) -> f64 {
    Field::new(snapshot, params).total_energy()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{ChargeEntity, EntityKind};
    use crate::kernel::{force_pair, Interaction};

    fn p() -> CpmlParams {
        CpmlParams::new(0.2).unwrap()
    }

    #[test]
    fn attraction_examples() {
        assert!((psi_att_star(&[0.1, 0.0], &[0.0, 0.0], &p()).unwrap() - 0.04).abs() < 1e-15);
        assert!((psi_att_star(&[0.5, 0.0], &[0.0, 0.0], &p()).unwrap() - 0.25).abs() < 1e-15);
        let f = force_pair(&[0.5, 0.0], &[0.0, 0.0], &p(), Interaction::Attraction).unwrap();
        assert!((f[0] + 1.0).abs() < 1e-15 && f[1] == 0.0);
    }

    #[test]
    fn repulsion_examples() {
        assert_eq!(psi_rep_star(&[0.2, 0.0], &[0.0, 0.0], &p()).unwrap(), 0.0);
        assert_eq!(psi_rep_star(&[0.7, 0.0], &[0.0, 0.0], &p()).unwrap(), 0.0);
        assert!((psi_rep_star(&[0.1, 0.0], &[0.0, 0.0], &p()).unwrap() - 0.01).abs() < 1e-15);
        let f = force_pair(&[0.1, 0.0], &[0.0, 0.0], &p(), Interaction::Repulsion).unwrap();
        assert!((f[0] - 0.2).abs() < 1e-15 && f[1] == 0.0);
    }

    #[test]
    fn repulsion_has_continuous_slope_at_delta() {
        let k = p();
        assert!(k.repulsion_slope(0.2 - 1e-12).abs() < 1e-11);
        assert_eq!(k.repulsion_slope(0.2), 0.0);
    }

    #[test]
    fn attraction_force_grows_with_distance() {
        let k = p();
        let mut last = 0.0;
        for i in 1..40 {
            let d = 0.2 + 0.05 * f64::from(i);
            let f = force_pair(&[d, 0.0], &[0.0, 0.0], &k, Interaction::Attraction).unwrap();
            assert!(f[0].abs() > last);
            last = f[0].abs();
        }
    }

    fn sample(id: usize, class_id: usize, x: f64) -> ChargeEntity {
        ChargeEntity::new(id, class_id, EntityKind::Sample, vec![x, 0.0])
    }

    #[test]
    fn total_energy_examples() {
        let two = ChargeSnapshot::new(2, 1, 0, vec![sample(0, 0, 0.0), sample(1, 0, 0.5)]).unwrap();
        assert!((cpml_total_energy(&two, &p()) - 0.5).abs() < 1e-15);
        let one = ChargeSnapshot::new(2, 1, 0, vec![sample(0, 0, 0.0)]).unwrap();
        assert_eq!(cpml_total_energy(&one, &p()), 0.0);
        let apart = ChargeSnapshot::new(2, 2, 0, vec![sample(0, 0, 0.0), sample(1, 1, 0.2)]).unwrap();
        assert_eq!(cpml_total_energy(&apart, &p()), 0.0);
    }

    #[test]
    fn rejects_bad_delta() {
        assert!(CpmlParams::new(0.0).is_err());
        assert!(CpmlParams::new(f64::INFINITY).is_err());
    }
}
