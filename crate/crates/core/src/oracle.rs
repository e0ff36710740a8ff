//! Finite-difference oracle for field forces.
//!
//! The oracle differentiates [`Field::class_potential`] numerically, so it
//! shares no code with the analytic force path beyond the potential values.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::cpml::CpmlParams;
use crate::field::{ChargeEntity, ChargeSnapshot, EntityKind, Field, FieldError, ForceMode};
use crate::kernel::{FieldParams, PairPotential, PotentialKernel};
use crate::seed::SeedTree;
use crate::vecmath::{dist, norm};

/// Central-difference step used by the gradient checks: `1e-6 * max(1, |r|)`.
pub fn default_step(r: &[f64]) -> f64 {
    1e-6 * norm(r).max(1.0)
}

/// `-grad` of the class potential at `r` by central differences.
pub fn finite_difference_force<K: PairPotential + ?Sized>(
    field: &Field<'_, K>,
    r: &[f64],
    class_id: usize,
    exclude: Option<usize>,
    h: f64,
) -> Result<Vec<f64>, FieldError> {
    let mut probe = r.to_vec();
    let mut out = Vec::with_capacity(r.len());
    for k in 0..r.len() {
        probe[k] = r[k] + h;
        let up = field.class_potential(&probe, class_id, exclude)?;
        probe[k] = r[k] - h;
        let down = field.class_potential(&probe, class_id, exclude)?;
        probe[k] = r[k];
        out.push(-(up - down) / (2.0 * h));
    }
    Ok(out)
}

/// `|a - b| / max(|a|, |b|)`, and zero when both vectors vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        dist(a, b) / scale
    }
}

/// Largest relative error between analytic entity forces and the
/// finite-difference oracle over every entity of the snapshot.
pub fn max_force_error<K: PairPotential + ?Sized>(field: &Field<'_, K>) -> f64 {
    let analytic = field.batch_forces(ForceMode::ForceSemantics);
    field
        .snapshot()
        .entities()
        .iter()
        .zip(&analytic)
        .map(|(e, a)| {
            let h = default_step(&e.position);
            let fd = finite_difference_force(field, &e.position, e.class_id, Some(e.entity_id), h)
                .expect("snapshot entities are valid evaluation points");
            relative_error(a, &fd)
        })
        .fold(0.0, f64::max)
}

/// Largest componentwise relative deviation of `FullGradient` from twice
/// `ForceSemantics`.
pub fn max_double_counting_error<K: PairPotential + ?Sized>(field: &Field<'_, K>) -> f64 {
    let semantic = field.batch_forces(ForceMode::ForceSemantics);
    let full = field.batch_forces(ForceMode::FullGradient);
    semantic
        .iter()
        .zip(&full)
        .flat_map(|(s, f)| s.iter().zip(f))
        .map(|(s, f)| {
            let scale = (2.0 * s).abs().max(f.abs());
            if scale == 0.0 {
                0.0
            } else {
                (2.0 * s - f).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

/// Margin kept between every pair distance and the clamp radii.
pub const BOUNDARY_MARGIN: f64 = 1e-3;

/// A random snapshot with samples and proxies from three classes whose pair
/// distances straddle the clamp radii but keep [`BOUNDARY_MARGIN`] from them.
pub fn random_snapshot<R: Rng>(
    rng: &mut R,
    dim: usize,
    radii: &[f64],
    samples: usize,
) -> ChargeSnapshot {
    const CLASSES: usize = 3;
    const PROXIES: usize = 1;
    // pair distances concentrate near sigma * sqrt(2 * dim)
    let spread = rng.random_range(0.15..0.6);
    let sigma = spread / (2.0 * dim as f64).sqrt();
    let normal = Normal::new(0.0, sigma).expect("positive std");
    loop {
        let mut entities = Vec::with_capacity(samples + CLASSES * PROXIES);
        for id in 0..samples {
            let pos = (0..dim).map(|_| normal.sample(rng)).collect();
            entities.push(ChargeEntity::new(id, rng.random_range(0..CLASSES), EntityKind::Sample, pos));
        }
        for c in 0..CLASSES {
            for k in 0..PROXIES {
                let pos = (0..dim).map(|_| normal.sample(rng)).collect();
                entities.push(ChargeEntity::new(samples + c * PROXIES + k, c, EntityKind::Proxy, pos));
            }
        }
        let clear = entities.iter().enumerate().all(|(i, a)| {
            entities[i + 1..].iter().all(|b| {
                let d = dist(&a.position, &b.position);
                radii.iter().all(|r| (d - r).abs() >= BOUNDARY_MARGIN)
            })
        });
        if clear {
            return ChargeSnapshot::new(dim, CLASSES, PROXIES, entities)
                .expect("generated snapshot is valid");
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckCase {
    pub kernel: String,
    pub dim: usize,
    pub alpha: f64,
    pub max_relative_error: f64,
    pub double_counting_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub cases: Vec<GradcheckCase>,
    pub max_relative_error: f64,
    pub max_double_counting_error: f64,
}

/// Runs `repeats` random snapshots for every combination of dimension in
/// {2, 8, 64}, alpha in {1, 2, 4} and kernel in {PFML, CPML}.
pub fn run_gradcheck(seed: u64, repeats: usize) -> GradcheckReport {
    let tree = SeedTree::new(seed);
    let mut cases = Vec::new();
    let mut index = 0u64;
    for dim in [2usize, 8, 64] {
        for alpha in [1.0, 2.0, 4.0] {
            for pfml in [true, false] {
                for _ in 0..repeats {
                    let mut rng = tree.stream("gradcheck", index);
                    index += 1;
                    let delta_att = rng.random_range(0.1..0.3);
                    let delta_rep = if rng.random_bool(0.5) {
                        delta_att
                    } else {
                        delta_att + 0.1
                    };
                    let kernel = if pfml {
                        PotentialKernel::Pfml(
                            FieldParams::with_radii(delta_att, delta_rep, alpha)
                                .expect("valid parameters"),
                        )
                    } else {
                        PotentialKernel::Cpml(CpmlParams::new(delta_att).expect("valid delta"))
                    };
                    let samples = rng.random_range(4..12);
                    let snapshot = random_snapshot(&mut rng, dim, &[delta_att, delta_rep], samples);
                    let field = Field::new(&snapshot, &kernel);
                    cases.push(GradcheckCase {
                        kernel: if pfml { "pfml" } else { "cpml" }.to_string(),
                        dim,
                        alpha,
                        max_relative_error: max_force_error(&field),
                        double_counting_error: max_double_counting_error(&field),
                    });
                }
            }
        }
    }
    let max_relative_error = cases.iter().map(|c| c.max_relative_error).fold(0.0, f64::max);
    let max_double_counting_error = cases
        .iter()
        .map(|c| c.double_counting_error)
        .fold(0.0, f64::max);
    GradcheckReport {
        cases,
        max_relative_error,
        max_double_counting_error,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_differences_reproduce_pair_examples() {
        let kernel = FieldParams::new(0.2, 1.0).unwrap();
        let s = ChargeSnapshot::from_samples(2, 2, [(0, vec![0.0, 0.0])]).unwrap();
        let field = Field::new(&s, &kernel);
        let f = finite_difference_force(&field, &[0.5, 0.0], 0, None, 1e-6).unwrap();
        assert!((f[0] + 4.0).abs() < 1e-6 && f[1].abs() < 1e-9);
        let f = finite_difference_force(&field, &[0.1, 0.0], 1, None, 1e-6).unwrap();
        assert!((f[0] - 100.0).abs() < 1e-4 && f[1].abs() < 1e-9);
    }

    #[test]
    fn relative_error_of_zero_vectors() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(relative_error(&[1.0, 0.0], &[0.0, 0.0]), 1.0);
    }

    #[test]
    fn random_snapshots_respect_margins() {
        let mut rng = SeedTree::new(3).stream("t", 0);
        let s = random_snapshot(&mut rng, 8, &[0.2, 0.3], 10);
        let e = s.entities();
        for i in 0..e.len() {
            for j in i + 1..e.len() {
                let d = dist(&e[i].position, &e[j].position);
                assert!((d - 0.2).abs() >= BOUNDARY_MARGIN && (d - 0.3).abs() >= BOUNDARY_MARGIN);
            }
        }
    }
}
