use rand::Rng;
use serde::{Deserialize, Serialize};

use super::normal_init;
use super::params::{join, BlockRef, Parameterized};

/// Lookup table of shape `(cardinality, dim)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub cardinality: usize,
    pub dim: usize,
    pub table: Vec<f64>,
}

impl EmbeddingTable {
    pub const INIT_STD: f64 = 0.02;

    pub fn init<R: Rng>(rng: &mut R, cardinality: usize, dim: usize) -> Self {
        Self {
            cardinality,
            dim,
            table: normal_init(rng, cardinality * dim, Self::INIT_STD),
        }
    }

    pub fn zeros(cardinality: usize, dim: usize) -> Self {
        Self {
            cardinality,
            dim,
            table: vec![0.0; cardinality * dim],
        }
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.table[index * self.dim..(index + 1) * self.dim]
    }

    pub fn accumulate(&mut self, index: usize, grad: &[f64]) {
        let row = &mut self.table[index * self.dim..(index + 1) * self.dim];
        row.iter_mut().zip(grad).for_each(|(r, g)| *r += g);
    }
}

impl Parameterized for EmbeddingTable {
    fn collect_blocks<'a>(&'a self, prefix: &str, out: &mut Vec<BlockRef<'a>>) {
        out.push(BlockRef {
            name: join(prefix, "table"),
            shape: vec![self.cardinality, self.dim],
            values: &self.table,
        });
    }

    fn collect_blocks_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(&mut self.table);
    }
}
