use serde::Serialize;

use crate::field::{ChargeSnapshot, Field, FieldError, ForceMode};
use crate::kernel::PairPotential;
use crate::vecmath::norm;

/// Sufficient-decrease constant of the Armijo test.
const ARMIJO: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DescentOptions {
    /// Stop once the force norm drops below this.
    pub tolerance: f64,
    pub max_iters: usize,
    /// First trial step, as a multiple of the force.
    pub initial_step: f64,
    /// Caps the displacement of a single step.
    pub max_step: Option<f64>,
    /// Source skipped when evaluating the field.
    pub exclude: Option<usize>,
}

impl Default for DescentOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iters: 10_000,
            initial_step: 1e-2,
            max_step: None,
            exclude: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DescentStatus {
    /// Force norm fell below the tolerance.
    Stationary,
    /// No step of representable length decreases the potential: a minimum
    /// sitting on a kink of the field, where the force never vanishes.
    Stalled,
    MaxIters,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Descent {
    pub position: Vec<f64>,
    pub potential: f64,
    pub force_norm: f64,
    pub iterations: usize,
    pub status: DescentStatus,
}

impl Descent {
    pub fn converged(&self) -> bool {
        self.status != DescentStatus::MaxIters
    }
}

/// Gradient descent with Armijo backtracking on the class-`class_id`
/// potential, starting from `start`.
pub fn find_local_minimum<K: PairPotential + ?Sized>(
    field: &Field<'_, K>,
    class_id: usize,
    start: &[f64],
    options: &DescentOptions,
) -> Result<Descent, FieldError> {
    if !(options.tolerance > 0.0) {
        return Err(FieldError::InvalidParams(format!(
            "descent tolerance must be positive, got {}",
            options.tolerance
        )));
    }
    let exclude = options.exclude;
    let mut x = start.to_vec();
    let mut value = field.class_potential(&x, class_id, exclude)?;
    let mut step = options.initial_step;
    let mut trial = vec![0.0; x.len()];
    for iter in 0..options.max_iters {
        let force = field.class_force(&x, class_id, exclude)?;
        let f_norm = norm(&force);
        let done = |status| Descent {
            position: x.clone(),
            potential: value,
            force_norm: f_norm,
            iterations: iter,
            status,
        };
        if f_norm < options.tolerance {
            return Ok(done(DescentStatus::Stationary));
        }
        let floor = 1e-12 * norm(&x).max(1.0);
        if let Some(cap) = options.max_step {
            step = step.min(cap / f_norm);
        }
        loop {
            if step * f_norm < floor {
                return Ok(done(DescentStatus::Stalled));
            }
            for ((t, xi), fi) in trial.iter_mut().zip(&x).zip(&force) {
                *t = xi + step * fi;
            }
            let candidate = field.class_potential(&trial, class_id, exclude)?;
            if candidate <= value - ARMIJO * step * f_norm * f_norm {
                std::mem::swap(&mut x, &mut trial);
                value = candidate;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
    }
    let f_norm = norm(&field.class_force(&x, class_id, exclude)?);
    Ok(Descent {
        position: x,
        potential: value,
        force_norm: f_norm,
        iterations: options.max_iters,
        status: DescentStatus::MaxIters,
    })
}

/// Outcome of one backtracking step of the whole snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct RelaxStep {
    pub snapshot: ChargeSnapshot,
    pub energy_before: f64,
    pub energy_after: f64,
    /// Step size actually taken; zero when every trial was rejected.
    pub step_size: f64,
}

impl RelaxStep {
    pub fn accepted(&self) -> bool {
        self.step_size > 0.0
    }
}

/// Moves every entity along its force with step `learning_rate`, halving the
/// step up to `max_halvings` times until the total energy does not increase.
/// If no trial step is acceptable the snapshot is returned unchanged.
pub fn backtracking_step<K: PairPotential + ?Sized>(
    snapshot: &ChargeSnapshot,
    kernel: &K,
    learning_rate: f64,
    max_halvings: usize,
) -> Result<RelaxStep, FieldError> {
    let field = Field::new(snapshot, kernel);
    let energy_before = field.total_energy();
    let forces = field.batch_forces(ForceMode::ForceSemantics);
    let positions = snapshot.positions();
    let mut step = learning_rate;
    for _ in 0..=max_halvings {
        let moved: Vec<Vec<f64>> = positions
            .iter()
            .zip(&forces)
            .map(|(p, f)| p.iter().zip(f).map(|(x, g)| x + step * g).collect())
            .collect();
        let mut next = snapshot.clone();
        next.set_positions(moved)?;
        let energy_after = Field::new(&next, kernel).total_energy();
        if energy_after <= energy_before {
            return Ok(RelaxStep {
                snapshot: next,
                energy_before,
                energy_after,
                step_size: step,
            });
        }
        step *= 0.5;
    }
    Ok(RelaxStep {
        snapshot: snapshot.clone(),
        energy_before,
        energy_after: energy_before,
        step_size: 0.0,
    })
}
