use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{join, BlockRef, Parameterized};
use super::{glorot_uniform, matvec_acc, matvec_t_acc, outer_acc, sigmoid};
use crate::{Error, Result};

/// Gated recurrent unit.
///
/// ```text
/// z  = σ(W_z x + U_z h + b_z)
/// r  = σ(W_r x + U_r h + b_r)
/// h̃  = tanh(W_h x + U_h (r ⊙ h) + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_z: Vec<f64>,
    pub w_r: Vec<f64>,
    pub w_h: Vec<f64>,
    pub u_z: Vec<f64>,
    pub u_r: Vec<f64>,
    pub u_h: Vec<f64>,
    pub b_z: Vec<f64>,
    pub b_r: Vec<f64>,
    pub b_h: Vec<f64>,
}

/// Gate activations of one step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GruTrace {
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub candidate: Vec<f64>,
    pub h_new: Vec<f64>,
}

impl GruCell {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let wi = vec![0.0; input_dim * hidden_dim];
        let wh = vec![0.0; hidden_dim * hidden_dim];
        let b = vec![0.0; hidden_dim];
        Self {
            input_dim,
            hidden_dim,
            w_z: wi.clone(),
            w_r: wi.clone(),
            w_h: wi,
            u_z: wh.clone(),
            u_r: wh.clone(),
            u_h: wh,
            b_z: b.clone(),
            b_r: b.clone(),
            b_h: b,
        }
    }

    pub fn init<R: Rng>(rng: &mut R, input_dim: usize, hidden_dim: usize) -> Self {
        let mut cell = Self::zeros(input_dim, hidden_dim);
        for w in [&mut cell.w_z, &mut cell.w_r, &mut cell.w_h] {
            *w = glorot_uniform(rng, input_dim, hidden_dim);
        }
        for u in [&mut cell.u_z, &mut cell.u_r, &mut cell.u_h] {
            *u = glorot_uniform(rng, hidden_dim, hidden_dim);
        }
        cell
    }

    pub fn step(&self, x: &[f64], h: &[f64]) -> Result<GruTrace> {
        if x.len() != self.input_dim || h.len() != self.hidden_dim {
            return Err(Error::shape(format!(
                "gru expects input {} / state {}, got {} / {}",
                self.input_dim,
                self.hidden_dim,
                x.len(),
                h.len()
            )));
        }
        Ok(self.step_unchecked(x, h))
    }

    pub(crate) fn step_unchecked(&self, x: &[f64], h: &[f64]) -> GruTrace {
        let gate = |w: &[f64], u: &[f64], b: &[f64], hh: &[f64]| {
            let mut a = b.to_vec();
            matvec_acc(w, x, &mut a);
            matvec_acc(u, hh, &mut a);
            a
        };
        let mut z = gate(&self.w_z, &self.u_z, &self.b_z, h);
        z.iter_mut().for_each(|v| *v = sigmoid(*v));
        let mut r = gate(&self.w_r, &self.u_r, &self.b_r, h);
        r.iter_mut().for_each(|v| *v = sigmoid(*v));
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        let mut candidate = gate(&self.w_h, &self.u_h, &self.b_h, &rh);
        candidate.iter_mut().for_each(|v| *v = v.tanh());
        let h_new = (0..self.hidden_dim)
            .map(|i| (1.0 - z[i]) * h[i] + z[i] * candidate[i])
            .collect();
        GruTrace {
            z,
            r,
            candidate,
            h_new,
        }
    }

    /// Backpropagates `d_h_new` through one step, accumulating parameter
    /// gradients and adding input/state gradients into `d_x` and `d_h`.
    pub fn backward(
        &self,
        x: &[f64],
        h: &[f64],
        trace: &GruTrace,
        d_h_new: &[f64],
        grads: &mut GruCell,
        d_x: &mut [f64],
        d_h: &mut [f64],
    ) {
        let n = self.hidden_dim;
        let GruTrace {
            z, r, candidate, ..
        } = trace;
        let mut d_az = vec![0.0; n];
        let mut d_ah = vec![0.0; n];
        for i in 0..n {
            let g = d_h_new[i];
            d_h[i] += g * (1.0 - z[i]);
            d_az[i] = g * (candidate[i] - h[i]) * z[i] * (1.0 - z[i]);
            d_ah[i] = g * z[i] * (1.0 - candidate[i] * candidate[i]);
        }
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();

        // candidate path
        outer_acc(&mut grads.w_h, &d_ah, x);
        outer_acc(&mut grads.u_h, &d_ah, &rh);
        grads.b_h.iter_mut().zip(&d_ah).for_each(|(b, g)| *b += g);
        matvec_t_acc(&self.w_h, &d_ah, d_x);
        let mut d_rh = vec![0.0; n];
        matvec_t_acc(&self.u_h, &d_ah, &mut d_rh);
        let mut d_ar = vec![0.0; n];
        for i in 0..n {
            d_h[i] += d_rh[i] * r[i];
            d_ar[i] = d_rh[i] * h[i] * r[i] * (1.0 - r[i]);
        }

        for (w, u, gw, gu, gb, d_a) in [
            (
                &self.w_z,
                &self.u_z,
                &mut grads.w_z,
                &mut grads.u_z,
                &mut grads.b_z,
                &d_az,
            ),
            (
                &self.w_r,
                &self.u_r,
                &mut grads.w_r,
                &mut grads.u_r,
                &mut grads.b_r,
                &d_ar,
            ),
        ] {
            outer_acc(gw, d_a, x);
            outer_acc(gu, d_a, h);
            gb.iter_mut().zip(d_a.iter()).for_each(|(b, g)| *b += g);
            matvec_t_acc(w, d_a, d_x);
            matvec_t_acc(u, d_a, d_h);
        }
    }
}

impl Parameterized for GruCell {
    fn collect_blocks<'a>(&'a self, prefix: &str, out: &mut Vec<BlockRef<'a>>) {
        let (i, h) = (self.input_dim, self.hidden_dim);
        for (name, values, shape) in [
            ("w_z", &self.w_z, vec![h, i]),
            ("w_r", &self.w_r, vec![h, i]),
            ("w_h", &self.w_h, vec![h, i]),
            ("u_z", &self.u_z, vec![h, h]),
            ("u_r", &self.u_r, vec![h, h]),
            ("u_h", &self.u_h, vec![h, h]),
            ("b_z", &self.b_z, vec![h]),
            ("b_r", &self.b_r, vec![h]),
            ("b_h", &self.b_h, vec![h]),
        ] {
            out.push(BlockRef {
                name: join(prefix, name),
                shape,
                values,
            });
        }
    }

    fn collect_blocks_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(&mut self.w_z);
        out.push(&mut self.w_r);
        out.push(&mut self.w_h);
        out.push(&mut self.u_z);
        out.push(&mut self.u_r);
        out.push(&mut self.u_h);
        out.push(&mut self.b_z);
        out.push(&mut self.b_r);
        out.push(&mut self.b_h);
    }
}
