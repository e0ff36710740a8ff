use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::vecmath::{dot, norm, normalize_in_place};

#[derive(Clone, Debug, PartialEq)]
pub enum EncoderParams {
    /// One free vector per training sample, addressed by sample index.
    FreeEmbeddings { table: Vec<Vec<f64>> },
    /// `out = weight * x + bias`, `weight` stored row-major as `out_dim x in_dim`.
    Linear {
        weight: Vec<f64>,
        bias: Vec<f64>,
        in_dim: usize,
        out_dim: usize,
    },
}

/// Stand-in for the embedding network.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub params: EncoderParams,
    /// Project every emitted embedding onto the unit sphere.
    pub normalize_output: bool,
}

/// Output of one forward pass, kept for the backward pass.
pub(crate) struct Forward {
    pub pre: Vec<f64>,
    pub out: Vec<f64>,
}

impl Encoder {
    pub fn free(mut table: Vec<Vec<f64>>, normalize_output: bool) -> Self {
        if normalize_output {
            table.iter_mut().for_each(|row| normalize_in_place(row));
        }
        Self {
            params: EncoderParams::FreeEmbeddings { table },
            normalize_output,
        }
    }

    /// Linear map with weights drawn from `N(0, 1/in_dim)` and zero bias.
    pub fn linear<R: Rng>(in_dim: usize, out_dim: usize, normalize_output: bool, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (1.0 / in_dim as f64).sqrt()).expect("positive std");
        Self {
            params: EncoderParams::Linear {
                weight: (0..in_dim * out_dim).map(|_| normal.sample(rng)).collect(),
                bias: vec![0.0; out_dim],
                in_dim,
                out_dim,
            },
            normalize_output,
        }
    }

    pub fn out_dim(&self) -> usize {
        match &self.params {
            EncoderParams::FreeEmbeddings { table } => table.first().map_or(0, Vec::len),
            EncoderParams::Linear { out_dim, .. } => *out_dim,
        }
    }

    pub(crate) fn forward(&self, index: usize, input: &[f64]) -> Forward {
        let pre = match &self.params {
            EncoderParams::FreeEmbeddings { table } => table[index].clone(),
            EncoderParams::Linear {
                weight,
                bias,
                in_dim,
                ..
            } => bias
                .iter()
                .enumerate()
                .map(|(o, b)| b + dot(&weight[o * in_dim..(o + 1) * in_dim], input))
                .collect(),
        };
        let mut out = pre.clone();
        if self.normalize_output {
            normalize_in_place(&mut out);
        }
        Forward { pre, out }
    }

    /// Embedding of sample `index` with features `input`. Free embeddings
    /// ignore `input`; linear encoders ignore `index`.
    pub fn encode(&self, index: usize, input: &[f64]) -> Vec<f64> {
        self.forward(index, input).out
    }

    pub fn encode_all(&self, inputs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        inputs
            .iter()
            .enumerate()
            .map(|(i, x)| self.encode(i, x))
            .collect()
    }

    /// Pulls a force on the emitted embedding back to the pre-normalization
    /// output: `(F - e (e . F)) / |pre|`.
    pub(crate) fn pullback(&self, fwd: &Forward, force: &[f64]) -> Vec<f64> {
        if !self.normalize_output {
            return force.to_vec();
        }
        let n = norm(&fwd.pre);
        if n == 0.0 {
            return vec![0.0; force.len()];
        }
        let radial = dot(&fwd.out, force);
        force
            .iter()
            .zip(&fwd.out)
            .map(|(f, e)| (f - e * radial) / n)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::SeedTree;

    #[test]
    fn normalized_outputs_have_unit_norm() {
        let mut rng = SeedTree::new(1).stream("enc", 0);
        let enc = Encoder::linear(5, 3, true, &mut rng);
        for i in 0..20 {
            let x: Vec<f64> = (0..5).map(|k| (i * 7 + k) as f64 * 0.1 - 1.0).collect();
            assert!((norm(&enc.encode(0, &x)) - 1.0).abs() < 1e-9);
        }
        let free = Encoder::free(vec![vec![3.0, 4.0], vec![0.0, -2.0]], true);
        assert_eq!(free.encode(0, &[]), vec![0.6, 0.8]);
        assert_eq!(free.encode(1, &[]), vec![0.0, -1.0]);
    }

    #[test]
    fn pullback_matches_finite_differences() {
        let mut rng = SeedTree::new(2).stream("enc", 0);
        let enc = Encoder::linear(4, 3, true, &mut rng);
        let x = [0.3, -1.2, 0.7, 2.0];
        let force = [0.5, -0.25, 1.5];
        let fwd = enc.forward(0, &x);
        let pulled = enc.pullback(&fwd, &force);
        // directional derivative of force . normalize(pre) along each axis
        let h = 1e-6;
        for k in 0..3 {
            let mut up = fwd.pre.clone();
            up[k] += h;
            let mut down = fwd.pre.clone();
            down[k] -= h;
            normalize_in_place(&mut up);
            normalize_in_place(&mut down);
            let fd = (dot(&force, &up) - dot(&force, &down)) / (2.0 * h);
            assert!((fd - pulled[k]).abs() < 1e-8, "{fd} vs {}", pulled[k]);
        }
    }
}
