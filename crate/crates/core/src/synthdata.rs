//! Labeled Gaussian-mixture datasets.
//!
//! Each class is a mixture of isotropic Gaussian modes. Mode centers are drawn
//! by rejection sampling so every pair of centers (across all classes) is at
//! least `mode_separation` apart. Label noise and zero-shot class splits keep
//! the pre-noise labels alongside the observed ones.

use std::io::{self, BufRead, Write};

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::SeedTree;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("could not place {modes} mode centers {separation} apart after {attempts} attempts")]
    Infeasible {
        modes: usize,
        separation: f64,
        attempts: usize,
    },
    #[error("label noise needs at least two classes")]
    SingleClassNoise,
    #[error("noise rate must lie in [0, 1], got {0}")]
    InvalidRate(f64),
    #[error("split fraction {fraction} leaves an empty side for {classes} classes")]
    EmptySplit { fraction: f64, classes: usize },
    #[error("sample {0} has a noisy label pointing into the other split; split before corrupting")]
    NoiseCrossesSplit(usize),
    #[error("malformed dataset csv at line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Maximum number of center draws before a spec is declared infeasible.
pub const MAX_CENTER_ATTEMPTS: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub modes_per_class: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub mode_separation: f64,
    pub within_mode_std: f64,
    /// Mode centers lie in a random subspace of this dimension shared by all
    /// classes; `None` uses the whole space. Within-mode noise is always
    /// isotropic in all `dim` coordinates.
    pub latent_dim: Option<usize>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 8,
            modes_per_class: 2,
            dim: 32,
            samples_per_class: 50,
            mode_separation: 4.0,
            within_mode_std: 0.5,
            latent_dim: Some(8),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidSpec(m.to_string()));
        if self.num_classes == 0 {
            return bad("num_classes must be at least 1");
        }
        if self.modes_per_class == 0 {
            return bad("modes_per_class must be at least 1");
        }
        if self.dim == 0 {
            return bad("dim must be at least 1");
        }
        if self.samples_per_class < self.modes_per_class {
            return bad("samples_per_class must be at least modes_per_class");
        }
        if !(self.mode_separation.is_finite() && self.mode_separation >= 0.0) {
            return bad("mode_separation must be finite and non-negative");
        }
        if !(self.within_mode_std.is_finite() && self.within_mode_std >= 0.0) {
            return bad("within_mode_std must be finite and non-negative");
        }
        if matches!(self.latent_dim, Some(r) if r == 0 || r > self.dim) {
            return bad("latent_dim must lie in [1, dim]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub true_labels: Vec<usize>,
    pub noise_mask: Vec<bool>,
    pub num_classes: usize,
}

impl LabeledDataset {
    /// A clean dataset: observed labels equal the true labels.
    pub fn clean(inputs: Vec<Vec<f64>>, labels: Vec<usize>, num_classes: usize) -> Self {
        let n = labels.len();
        Self {
            inputs,
            true_labels: labels.clone(),
            labels,
            noise_mask: vec![false; n],
            num_classes,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn noisy_count(&self) -> usize {
        self.noise_mask.iter().filter(|m| **m).count()
    }

    /// Writes `id,label,true_label,noisy,x0,...` with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let dim = self.dim();
        let coords: Vec<String> = (0..dim).map(|k| format!("x{k}")).collect();
        write!(w, "id,label,true_label,noisy")?;
        for c in &coords {
            write!(w, ",{c}")?;
        }
        writeln!(w)?;
        for i in 0..self.len() {
            write!(
                w,
                "{},{},{},{}",
                i,
                self.labels[i],
                self.true_labels[i],
                u8::from(self.noise_mask[i])
            )?;
            for x in &self.inputs[i] {
                write!(w, ",{}", crate::format_sig17(*x))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Reads the format produced by [`LabeledDataset::write_csv`]. The class
    /// count is one past the largest label seen.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, DataError> {
        let mut lines = r.lines();
        let header = lines.next().ok_or(DataError::Csv {
            line: 1,
            msg: "missing header".into(),
        })??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.len() < 5 || cols[..4] != ["id", "label", "true_label", "noisy"] {
            return Err(DataError::Csv {
                line: 1,
                msg: format!("unexpected header {header:?}"),
            });
        }
        let dim = cols.len() - 4;
        let mut ds = LabeledDataset::clean(Vec::new(), Vec::new(), 0);
        for (i, line) in lines.enumerate() {
            let line = line?;
            let lineno = i + 2;
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| DataError::Csv { line: lineno, msg };
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != dim + 4 {
                return Err(err(format!("expected {} fields, got {}", dim + 4, fields.len())));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|e| err(format!("{s:?}: {e}")));
            let label = int(fields[1])?;
            let true_label = int(fields[2])?;
            let noisy = match fields[3] {
                "0" | "false" => false,
                "1" | "true" => true,
                other => return Err(err(format!("bad noisy flag {other:?}"))),
            };
            if noisy == (label == true_label) {
                return Err(err("noisy flag disagrees with labels".into()));
            }
            let x = fields[4..]
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| err(format!("bad coordinate {s:?}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            ds.inputs.push(x);
            ds.labels.push(label);
            ds.true_labels.push(true_label);
            ds.noise_mask.push(noisy);
            ds.num_classes = ds.num_classes.max(label + 1).max(true_label + 1);
        }
        Ok(ds)
    }
}

/// Draws the mixture described by `spec`. Samples are ordered by class, then
/// mode; the first `samples_per_class % modes_per_class` modes of a class get
/// one extra sample.
pub fn gen_mixture(spec: &SyntheticSpec) -> Result<LabeledDataset, DataError> {
    spec.validate()?;
    let tree = SeedTree::new(spec.seed);
    let centers = place_centers(spec, MAX_CENTER_ATTEMPTS, &mut tree.stream("mode-centers", 0))?;
    let mut rng = tree.stream("mode-samples", 0);
    let noise = Normal::new(0.0, spec.within_mode_std).expect("finite std");
    let mut inputs = Vec::with_capacity(spec.num_classes * spec.samples_per_class);
    let mut labels = Vec::with_capacity(inputs.capacity());
    for class in 0..spec.num_classes {
        let base = spec.samples_per_class / spec.modes_per_class;
        let extra = spec.samples_per_class % spec.modes_per_class;
        for mode in 0..spec.modes_per_class {
            let center = &centers[class * spec.modes_per_class + mode];
            let count = base + usize::from(mode < extra);
            for _ in 0..count {
                inputs.push(center.iter().map(|c| c + noise.sample(&mut rng)).collect());
                labels.push(class);
            }
        }
    }
    Ok(LabeledDataset::clean(inputs, labels, spec.num_classes))
}

// Latent coordinates are drawn from N(0, s^2 I_r) with
// s = 0.75 * separation * K^(1/r) / sqrt(r), K the total number of modes and r
// the latent dimension: about the tightest packing that rejection still fills
// quickly, so typical center distances stay a small multiple of the
// separation. An orthonormal basis then embeds them in the full space, which
// preserves their distances.
fn place_centers<R: Rng>(
    spec: &SyntheticSpec,
    max_attempts: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, DataError> {
    let modes = spec.num_classes * spec.modes_per_class;
    let rank = spec.latent_dim.unwrap_or(spec.dim);
    let r = rank as f64;
    let spread = 0.75 * spec.mode_separation * (modes as f64).powf(1.0 / r) / r.sqrt();
    let normal = Normal::new(0.0, spread.max(f64::MIN_POSITIVE)).expect("finite std");
    let mut latent: Vec<Vec<f64>> = Vec::with_capacity(modes);
    let mut attempts = 0;
    while latent.len() < modes {
        if attempts == max_attempts {
            return Err(DataError::Infeasible {
                modes,
                separation: spec.mode_separation,
                attempts,
            });
        }
        attempts += 1;
        let c: Vec<f64> = (0..rank).map(|_| normal.sample(rng)).collect();
        if latent
            .iter()
            .all(|o| crate::vecmath::dist(o, &c) >= spec.mode_separation)
        {
            latent.push(c);
        }
    }
    if rank == spec.dim {
        return Ok(latent);
    }
    let basis = orthonormal_basis(spec.dim, rank, rng);
    Ok(latent
        .iter()
        .map(|z| {
            (0..spec.dim)
                .map(|i| z.iter().zip(&basis).map(|(zk, b)| zk * b[i]).sum())
                .collect()
        })
        .collect())
}

// `rank` orthonormal vectors of length `dim`, by Gram-Schmidt on Gaussian draws.
fn orthonormal_basis<R: Rng>(dim: usize, rank: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rank);
    while basis.len() < rank {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for _ in 0..2 {
            for b in &basis {
                let proj = crate::vecmath::dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
            }
        }
        let n = crate::vecmath::norm(&v);
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    basis
}

/// Corrupts exactly `round(rate * n)` labels, chosen uniformly without
/// replacement. Each corrupted label becomes a uniformly random class other
/// than the sample's true label.
pub fn inject_label_noise(
    dataset: &LabeledDataset,
    rate: f64,
    seed: u64,
) -> Result<LabeledDataset, DataError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(DataError::InvalidRate(rate));
    }
    let mut out = dataset.clone();
    let n = dataset.len();
    let count = (rate * n as f64).round() as usize;
    if count == 0 {
        return Ok(out);
    }
    if dataset.num_classes < 2 {
        return Err(DataError::SingleClassNoise);
    }
    let mut rng = SeedTree::new(seed).stream("label-noise", 0);
    let mut chosen = index::sample(&mut rng, n, count).into_vec();
    chosen.sort_unstable();
    for i in chosen {
        let truth = dataset.true_labels[i];
        let mut other = rng.random_range(0..dataset.num_classes - 1);
        if other >= truth {
            other += 1;
        }
        out.labels[i] = other;
        out.noise_mask[i] = true;
    }
    Ok(out)
}

/// Splits by class id: the first `round(fraction * N)` classes train, the
/// rest test. Test labels are shifted down to start at zero.
pub fn split_zero_shot(
    dataset: &LabeledDataset,
    train_fraction_of_classes: f64,
) -> Result<(LabeledDataset, LabeledDataset), DataError> {
    let classes = dataset.num_classes;
    let cut = (train_fraction_of_classes * classes as f64).round();
    if !(cut >= 1.0 && cut < classes as f64) {
        return Err(DataError::EmptySplit {
            fraction: train_fraction_of_classes,
            classes,
        });
    }
    let cut = cut as usize;
    let mut train = LabeledDataset::clean(Vec::new(), Vec::new(), cut);
    let mut test = LabeledDataset::clean(Vec::new(), Vec::new(), classes - cut);
    for i in 0..dataset.len() {
        let (label, truth) = (dataset.labels[i], dataset.true_labels[i]);
        let (side, offset) = if label < cut {
            (&mut train, 0)
        } else {
            (&mut test, cut)
        };
        if (truth < cut) != (label < cut) {
            return Err(DataError::NoiseCrossesSplit(i));
        }
        side.inputs.push(dataset.inputs[i].clone());
        side.labels.push(label - offset);
        side.true_labels.push(truth - offset);
        side.noise_mask.push(dataset.noise_mask[i]);
    }
    Ok((train, test))
}
