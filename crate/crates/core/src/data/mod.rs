//! Dataset loading and federated partitioning.

mod dataset;
pub mod idx;
mod partition;

pub use dataset::{load_idx, Dataset};
pub use partition::{batches, dirichlet_partition, dirichlet_partition_labels, PartitionMap};

use crate::nn::Tensor;

impl Dataset {
    /// Materializes the given samples as a training batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        (
            self.images.gather(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}
