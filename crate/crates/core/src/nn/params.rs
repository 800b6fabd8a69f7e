/// Read-only view of one named parameter block.
#[derive(Debug, Clone)]
pub struct BlockRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: &'a [f64],
}

/// A container of named parameter blocks with a fixed visiting order.
///
/// Gradients are stored in a second instance of the same type, so the two
/// visiting orders line up block for block.
pub trait Parameterized {
    fn collect_blocks<'a>(&'a self, prefix: &str, out: &mut Vec<BlockRef<'a>>);
    fn collect_blocks_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>);

    fn blocks(&self) -> Vec<BlockRef<'_>> {
        let mut out = Vec::new();
        self.collect_blocks("", &mut out);
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        self.collect_blocks_mut(&mut out);
        out
    }

    fn n_params(&self) -> usize {
        self.blocks().iter().map(|b| b.values.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        self.blocks()
            .iter()
            .flat_map(|b| b.values.iter().copied())
            .collect()
    }

    fn assign_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for block in self.blocks_mut() {
            let n = block.len();
            block.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    fn fill_zero(&mut self) {
        for block in self.blocks_mut() {
            block.fill(0.0);
        }
    }

    fn add_scaled(&mut self, other: &Self, scale: f64)
    where
        Self: Sized,
    {
        let src = other.blocks();
        for (dst, src) in self.blocks_mut().into_iter().zip(src) {
            for (d, s) in dst.iter_mut().zip(src.values) {
                *d += scale * s;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for block in self.blocks_mut() {
            block.iter_mut().for_each(|x| *x *= factor);
        }
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
