//! Class potential fields over a snapshot of charges.
//!
//! A [`ChargeSnapshot`] holds the batch embeddings and all proxies. The field
//! of class `j` at `r` superposes the attraction of every class-`j` charge and
//! the repulsion of every other charge. Sums always run in ascending
//! `entity_id` order so results do not depend on how callers parallelize.

use std::io::{self, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{accumulate_pair_force, guard, Interaction, PairPotential};
use crate::vecmath::dist;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("vectors must have at least one coordinate")]
    EmptyVector,
    #[error("entity {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("duplicate entity id {0}")]
    DuplicateEntity(usize),
    #[error("class id {class_id} out of range for {num_classes} classes")]
    ClassOutOfRange { class_id: usize, num_classes: usize },
    #[error("class {class_id} has {found} proxies, expected {expected}")]
    ProxyCount {
        class_id: usize,
        found: usize,
        expected: usize,
    },
    #[error("invalid kernel parameters: {0}")]
    InvalidParams(String),
    #[error("field grids need a 2-D embedding space, got D = {0}")]
    UnsupportedDimension(usize),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Sample,
    Proxy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChargeEntity {
    pub entity_id: usize,
    pub class_id: usize,
    pub kind: EntityKind,
    pub position: Vec<f64>,
}

impl ChargeEntity {
    pub fn new(entity_id: usize, class_id: usize, kind: EntityKind, position: Vec<f64>) -> Self {
        Self {
            entity_id,
            class_id,
            kind,
            position,
        }
    }
}

/// A validated set of charges: embeddings plus proxies.
#[derive(Clone, Debug, PartialEq)]
pub struct ChargeSnapshot {
    dim: usize,
    num_classes: usize,
    proxies_per_class: usize,
    entities: Vec<ChargeEntity>,
}

impl ChargeSnapshot {
    /// Validates and stores `entities`, sorted by `entity_id`.
    ///
    /// Every class must own exactly `proxies_per_class` proxy entities.
    pub fn new(
        dim: usize,
        num_classes: usize,
        proxies_per_class: usize,
        mut entities: Vec<ChargeEntity>,
    ) -> Result<Self, FieldError> {
        if dim == 0 {
            return Err(FieldError::EmptyVector);
        }
        entities.sort_by_key(|e| e.entity_id);
        let mut proxy_counts = vec![0usize; num_classes];
        for (i, e) in entities.iter().enumerate() {
            if i > 0 && entities[i - 1].entity_id == e.entity_id {
                return Err(FieldError::DuplicateEntity(e.entity_id));
            }
            if e.position.len() != dim {
                return Err(FieldError::DimensionMismatch {
                    expected: dim,
                    got: e.position.len(),
                });
            }
            if e.position.iter().any(|x| !x.is_finite()) {
                return Err(FieldError::NonFinite(e.entity_id));
            }
            if e.class_id >= num_classes {
                return Err(FieldError::ClassOutOfRange {
                    class_id: e.class_id,
                    num_classes,
                });
            }
            if e.kind == EntityKind::Proxy {
                proxy_counts[e.class_id] += 1;
            }
        }
        if let Some((class_id, &found)) = proxy_counts
            .iter()
            .enumerate()
            .find(|(_, &c)| c != proxies_per_class)
        {
            return Err(FieldError::ProxyCount {
                class_id,
                found,
                expected: proxies_per_class,
            });
        }
        Ok(Self {
            dim,
            num_classes,
            proxies_per_class,
            entities,
        })
    }

    /// A proxy-free snapshot of same-dimension samples, ids `0..n`.
    pub fn from_samples(
        dim: usize,
        num_classes: usize,
        samples: impl IntoIterator<Item = (usize, Vec<f64>)>,
    ) -> Result<Self, FieldError> {
        let entities = samples
            .into_iter()
            .enumerate()
            .map(|(id, (class_id, pos))| ChargeEntity::new(id, class_id, EntityKind::Sample, pos))
            .collect();
        Self::new(dim, num_classes, 0, entities)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn proxies_per_class(&self) -> usize {
        self.proxies_per_class
    }

    pub fn entities(&self) -> &[ChargeEntity] {
        &self.entities
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    /// Moves every entity to a new position. Positions are given in entity
    /// order and must be finite.
    pub fn set_positions(&mut self, positions: Vec<Vec<f64>>) -> Result<(), FieldError> {
        if positions.len() != self.entities.len() {
            return Err(FieldError::DimensionMismatch {
                expected: self.entities.len(),
                got: positions.len(),
            });
        }
        for (e, p) in self.entities.iter().zip(&positions) {
            if p.len() != self.dim {
                return Err(FieldError::DimensionMismatch {
                    expected: self.dim,
                    got: p.len(),
                });
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(FieldError::NonFinite(e.entity_id));
            }
        }
        for (e, p) in self.entities.iter_mut().zip(positions) {
            e.position = p;
        }
        Ok(())
    }

    pub fn positions(&self) -> Vec<Vec<f64>> {
        self.entities.iter().map(|e| e.position.clone()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForceMode {
    /// Force on each entity from the field of its class, other charges fixed.
    ForceSemantics,
    /// Negative gradient of the total energy with respect to every position.
    FullGradient,
}

/// Field evaluation over one snapshot with one kernel.
///
/// Counts how often the coincident-charge guard fired; the counter is atomic
/// so a `Field` can be shared across threads.
#[derive(Debug)]
pub struct Field<'a, K: PairPotential + ?Sized> {
    snapshot: &'a ChargeSnapshot,
    kernel: &'a K,
    guard_hits: AtomicU64,
}

impl<'a, K: PairPotential + ?Sized> Field<'a, K> {
    pub fn new(snapshot: &'a ChargeSnapshot, kernel: &'a K) -> Self {
        Self {
            snapshot,
            kernel,
            guard_hits: AtomicU64::new(0),
        }
    }

    pub fn snapshot(&self) -> &ChargeSnapshot {
        self.snapshot
    }

    pub fn guard_hits(&self) -> u64 {
        self.guard_hits.load(Ordering::Relaxed)
    }

    fn check_point(&self, r: &[f64], class_id: usize) -> Result<(), FieldError> {
        if r.len() != self.snapshot.dim {
            return Err(FieldError::DimensionMismatch {
                expected: self.snapshot.dim,
                got: r.len(),
            });
        }
        if class_id >= self.snapshot.num_classes {
            return Err(FieldError::ClassOutOfRange {
                class_id,
                num_classes: self.snapshot.num_classes,
            });
        }
        Ok(())
    }

    fn sources(&self, exclude: Option<usize>) -> impl Iterator<Item = &ChargeEntity> {
        self.snapshot
            .entities
            .iter()
            .filter(move |e| Some(e.entity_id) != exclude)
    }

    fn interaction(class_id: usize, source: &ChargeEntity) -> Interaction {
        if source.class_id == class_id {
            Interaction::Attraction
        } else {
            Interaction::Repulsion
        }
    }

    fn potential_unchecked(&self, r: &[f64], class_id: usize, exclude: Option<usize>) -> f64 {
        let mut total = 0.0;
        let mut hits = 0;
        for src in self.sources(exclude) {
            let interaction = Self::interaction(class_id, src);
            let (d, guarded) = guard(dist(r, &src.position), interaction);
            hits += u64::from(guarded);
            total += self.kernel.potential(interaction, d);
        }
        if hits > 0 {
            self.guard_hits.fetch_add(hits, Ordering::Relaxed);
        }
        total
    }

    fn force_unchecked(&self, r: &[f64], class_id: usize, exclude: Option<usize>) -> Vec<f64> {
        let mut out = vec![0.0; r.len()];
        let mut hits = 0;
        for src in self.sources(exclude) {
            let interaction = Self::interaction(class_id, src);
            let d = dist(r, &src.position);
            let guarded =
                accumulate_pair_force(&mut out, r, &src.position, d, self.kernel, interaction);
            hits += u64::from(guarded);
        }
        if hits > 0 {
            self.guard_hits.fetch_add(hits, Ordering::Relaxed);
        }
        out
    }

    /// Potential of the class-`class_id` field at `r`, skipping the source
    /// named by `exclude`.
    pub fn class_potential(
        &self,
        r: &[f64],
        class_id: usize,
        exclude: Option<usize>,
    ) -> Result<f64, FieldError> {
        self.check_point(r, class_id)?;
        Ok(self.potential_unchecked(r, class_id, exclude))
    }

    /// Force on a unit charge of class `class_id` at `r`.
    pub fn class_force(
        &self,
        r: &[f64],
        class_id: usize,
        exclude: Option<usize>,
    ) -> Result<Vec<f64>, FieldError> {
        self.check_point(r, class_id)?;
        Ok(self.force_unchecked(r, class_id, exclude))
    }

    /// Sum over every entity of its own class field, self-interaction excluded.
    /// Each unordered pair contributes twice.
    pub fn total_energy(&self) -> f64 {
        self.snapshot
            .entities
            .iter()
            .map(|e| self.potential_unchecked(&e.position, e.class_id, Some(e.entity_id)))
            .sum()
    }

    /// Forces on every entity, in the snapshot's entity order.
    pub fn batch_forces(&self, mode: ForceMode) -> Vec<Vec<f64>> {
        match mode {
            ForceMode::ForceSemantics => self
                .snapshot
                .entities
                .iter()
                .map(|e| self.force_unchecked(&e.position, e.class_id, Some(e.entity_id)))
                .collect(),
            ForceMode::FullGradient => self.full_gradient_forces(),
        }
    }

    // Differentiates the total energy pair by pair: both ordered terms of an
    // unordered pair depend on both endpoints.
    fn full_gradient_forces(&self) -> Vec<Vec<f64>> {
        let ents = &self.snapshot.entities;
        let dim = self.snapshot.dim;
        let mut forces = vec![vec![0.0; dim]; ents.len()];
        let mut hits = 0;
        for i in 0..ents.len() {
            for j in (i + 1)..ents.len() {
                let (a, b) = (&ents[i], &ents[j]);
                let interaction = Self::interaction(a.class_id, b);
                let d = dist(&a.position, &b.position);
                let (d_eval, guarded) = guard(d, interaction);
                hits += u64::from(guarded);
                let slope = self.kernel.slope(interaction, d_eval);
                if slope == 0.0 || d == 0.0 {
                    continue;
                }
                let coef = -2.0 * slope / d_eval;
                for k in 0..dim {
                    let step = coef * (a.position[k] - b.position[k]);
                    forces[i][k] += step;
                    forces[j][k] -= step;
                }
            }
        }
        if hits > 0 {
            self.guard_hits.fetch_add(hits, Ordering::Relaxed);
        }
        forces
    }

    /// Evaluates the class field on a regular 2-D grid.
    pub fn grid(
        &self,
        class_id: usize,
        bounds: GridBounds,
        resolution: usize,
    ) -> Result<FieldGrid, FieldError> {
        if self.snapshot.dim != 2 {
            return Err(FieldError::UnsupportedDimension(self.snapshot.dim));
        }
        if resolution < 2 {
            return Err(FieldError::InvalidGrid(format!(
                "resolution must be at least 2, got {resolution}"
            )));
        }
        bounds.validate()?;
        if class_id >= self.snapshot.num_classes {
            return Err(FieldError::ClassOutOfRange {
                class_id,
                num_classes: self.snapshot.num_classes,
            });
        }
        let mut values = Vec::with_capacity(resolution * resolution);
        for row in 0..resolution {
            for col in 0..resolution {
                let p = bounds.point(resolution, row, col);
                values.push(self.potential_unchecked(&p, class_id, None));
            }
        }
        Ok(FieldGrid {
            bounds,
            resolution,
            class_id,
            values,
        })
    }
}

/// Axis-aligned box `[x_min, x_max] x [y_min, y_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridBounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl GridBounds {
    fn validate(&self) -> Result<(), FieldError> {
        let ok = [self.x_min, self.x_max, self.y_min, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_min < self.x_max
            && self.y_min < self.y_max;
        if ok {
            Ok(())
        } else {
            Err(FieldError::InvalidGrid(format!("degenerate bounds {self:?}")))
        }
    }

    /// Coordinates of grid cell `(row, col)`; rows run along `y`.
    pub fn point(&self, resolution: usize, row: usize, col: usize) -> [f64; 2] {
        let steps = (resolution - 1) as f64;
        [
            self.x_min + (self.x_max - self.x_min) * col as f64 / steps,
            self.y_min + (self.y_max - self.y_min) * row as f64 / steps,
        ]
    }
}

/// Class potential sampled on a grid, row-major with `y` as the slow axis.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrid {
    pub bounds: GridBounds,
    pub resolution: usize,
    pub class_id: usize,
    pub values: Vec<f64>,
}

impl FieldGrid {
    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.resolution + col]
    }

    /// Writes `x,y,psi` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x,y,psi")?;
        for row in 0..self.resolution {
            for col in 0..self.resolution {
                let [x, y] = self.bounds.point(self.resolution, row, col);
                writeln!(
                    w,
                    "{},{},{}",
                    crate::format_sig17(x),
                    crate::format_sig17(y),
                    crate::format_sig17(self.value(row, col))
                )?;
            }
        }
        Ok(())
    }
}
