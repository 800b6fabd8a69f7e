//! Dense f64 compute core with hand-written backward passes.
//!
//! Vectors are `&[f64]`, matrices are row-major `Vec<f64>` of shape
//! `(out, in)`. Every layer exposes its weights as named parameter blocks
//! through [`Parameterized`], which is what the optimizer, gradient
//! accumulation and checkpoints operate on.

mod adam;
mod dense;
mod embedding;
mod gradcheck;
mod gru;
mod loss;
mod params;

pub use adam::{AdamConfig, AdamState};
pub use dense::{Activation, Dense, Mlp, MlpTrace};
pub use embedding::EmbeddingTable;
pub use gradcheck::{finite_diff_check, GradCheckReport, FD_ABS_FLOOR};
pub use gru::{GruCell, GruTrace};
pub use loss::{cross_entropy, cross_entropy_grad, mse, softmax, softmax_in_place, CE_CLAMP};
pub use params::{BlockRef, Parameterized};

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Glorot-uniform sample for a `fan_out x fan_in` matrix.
pub(crate) fn glorot_uniform<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..=limit))
        .collect()
}

pub(crate) fn normal_init<R: Rng>(rng: &mut R, n: usize, std: f64) -> Vec<f64> {
    let dist = Normal::new(0.0, std).expect("valid std");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// `out += W x` for row-major `W` of shape `(out.len(), x.len())`.
#[inline]
pub(crate) fn matvec_acc(w: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(n)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += Wᵀ g`.
#[inline]
pub(crate) fn matvec_t_acc(w: &[f64], g: &[f64], out: &mut [f64]) {
    let n = out.len();
    for (gi, row) in g.iter().zip(w.chunks_exact(n)) {
        if *gi == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(row) {
            *o += gi * a;
        }
    }
}

/// `W += g xᵀ`.
#[inline]
pub(crate) fn outer_acc(w: &mut [f64], g: &[f64], x: &[f64]) {
    let n = x.len();
    for (gi, row) in g.iter().zip(w.chunks_exact_mut(n)) {
        if *gi == 0.0 {
            continue;
        }
        for (a, xi) in row.iter_mut().zip(x) {
            *a += gi * xi;
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
