//! Named parameter blocks shared by the model, its gradients and optimizer state.

use crate::linalg::Matrix;

/// Anything made of named learnable matrices. Gradients and optimizer moments
/// reuse the parameter type itself, so every block name lines up.
pub trait ParamBlocks: Clone {
    fn blocks(&self) -> Vec<(String, &Matrix)>;
    fn blocks_mut(&mut self) -> Vec<(String, &mut Matrix)>;

    /// Same shapes, all zeros.
    fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, m) in out.blocks_mut() {
            m.fill(0.0);
        }
        out
    }

    fn scalar_count(&self) -> usize {
        self.blocks().iter().map(|(_, m)| m.len()).sum()
    }

    /// `self += other`, block by block. Panics on layout mismatch.
    fn accumulate(&mut self, other: &Self) {
        let theirs = other.blocks();
        for ((name, mine), (other_name, other)) in self.blocks_mut().into_iter().zip(theirs) {
            assert_eq!(name, other_name);
            mine.add_assign(other).expect("gradient layout mismatch");
        }
    }

    fn scale_all(&mut self, s: f64) {
        for (_, m) in self.blocks_mut() {
            m.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Flat copy of every scalar in block order.
    fn flatten(&self) -> Vec<f64> {
        self.blocks()
            .iter()
            .flat_map(|(_, m)| m.data().iter().copied())
            .collect()
    }
}

pub(crate) fn prefixed<'a>(
    prefix: &str,
    blocks: Vec<(String, &'a Matrix)>,
) -> impl Iterator<Item = (String, &'a Matrix)> + 'a {
    let prefix = prefix.to_string();
    blocks
        .into_iter()
        .map(move |(n, m)| (format!("{prefix}.{n}"), m))
}

pub(crate) fn prefixed_mut<'a>(
    prefix: &str,
    blocks: Vec<(String, &'a mut Matrix)>,
) -> impl Iterator<Item = (String, &'a mut Matrix)> + 'a {
    let prefix = prefix.to_string();
    blocks
        .into_iter()
        .map(move |(n, m)| (format!("{prefix}.{n}"), m))
}
