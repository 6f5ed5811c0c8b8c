use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

const MAX_ATTEMPTS: u64 = 10_000;

/// Disjoint assignment of dataset indices to clients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionMap {
    pub client_indices: Vec<Vec<usize>>,
    pub alpha: f64,
    /// Seed of the accepted draw (the requested seed plus the number of
    /// rejected draws that left some client empty).
    pub seed: u64,
}

impl PartitionMap {
    pub fn n_clients(&self) -> usize {
        self.client_indices.len()
    }

    pub fn shard(&self, client: usize) -> &[usize] {
        &self.client_indices[client]
    }
}

/// Non-i.i.d. split: for every class a proportion vector is drawn from a
/// symmetric Dirichlet(`alpha`) over the clients, and that class's shuffled
/// indices are cut at the cumulative proportions. Draws that leave any client
/// without samples are rejected and retried with `seed + 1`, `seed + 2`, ...
pub fn dirichlet_partition(ds: &Dataset, n_clients: usize, alpha: f64, seed: u64) -> Result<PartitionMap> {
    dirichlet_partition_labels(&ds.labels, ds.num_classes, n_clients, alpha, seed)
}

pub fn dirichlet_partition_labels(
    labels: &[usize],
    num_classes: usize,
    n_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<PartitionMap> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Parameter(format!("dirichlet alpha must be > 0, got {alpha}")));
    }
    if n_clients == 0 {
        return Err(Error::Parameter("need at least one client".into()));
    }
    if n_clients > labels.len() {
        return Err(Error::Parameter(format!(
            "{n_clients} clients cannot all receive samples from {} items",
            labels.len()
        )));
    }
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::Parameter(e.to_string()))?;

    for attempt in 0..MAX_ATTEMPTS {
        let draw_seed = seed.wrapping_add(attempt);
        let mut rng = ChaCha8Rng::seed_from_u64(draw_seed);
        let mut clients = vec![Vec::new(); n_clients];
        for members in &by_class {
            let mut members = members.clone();
            members.shuffle(&mut rng);
            let props = loop {
                let g: Vec<f64> = (0..n_clients).map(|_| gamma.sample(&mut rng)).collect();
                let total: f64 = g.iter().sum();
                if total > 0.0 {
                    break g.into_iter().map(|v| v / total).collect::<Vec<_>>();
                }
            };
            let n = members.len();
            let mut cum = 0.0;
            let mut start = 0;
            for (j, p) in props.iter().enumerate() {
                cum += p;
                let end = if j + 1 == n_clients {
                    n
                } else {
                    ((cum * n as f64).round() as usize).clamp(start, n)
                };
                clients[j].extend_from_slice(&members[start..end]);
                start = end;
            }
        }
        if clients.iter().all(|c| !c.is_empty()) {
            for c in &mut clients {
                c.sort_unstable();
            }
            return Ok(PartitionMap { client_indices: clients, alpha, seed: draw_seed });
        }
    }
    Err(Error::Parameter(format!(
        "no partition without empty clients after {MAX_ATTEMPTS} draws (alpha {alpha}, {n_clients} clients)"
    )))
}

/// Shuffles `indices` with `epoch_seed` and cuts them into batches; the last
/// batch may be short.
pub fn batches(indices: &[usize], batch_size: usize, epoch_seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Parameter("batch size must be >= 1".into()));
    }
    if indices.is_empty() {
        return Err(Error::Input("cannot batch an empty shard".into()));
    }
    let mut order = indices.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize, classes: usize) -> Vec<usize> {
        (0..n).map(|i| (i * 7 + i / 3) % classes).collect()
    }

    #[test]
    fn single_client_gets_everything() {
        let l = labels(50, 10);
        let p = dirichlet_partition_labels(&l, 10, 1, 0.5, 3).unwrap();
        assert_eq!(p.client_indices[0], (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_nonpositive_alpha() {
        let l = labels(50, 10);
        for a in [0.0, -1.0, f64::NAN] {
            assert!(matches!(
                dirichlet_partition_labels(&l, 10, 4, a, 0),
                Err(Error::Parameter(_))
            ));
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let l = labels(500, 10);
        let a = dirichlet_partition_labels(&l, 10, 8, 0.5, 42).unwrap();
        let b = dirichlet_partition_labels(&l, 10, 8, 0.5, 42).unwrap();
        let c = dirichlet_partition_labels(&l, 10, 8, 0.5, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.client_indices, c.client_indices);
    }

    #[test]
    fn empty_clients_trigger_redraw() {
        // Small alpha and few samples: most draws leave someone empty.
        let l = labels(40, 4);
        let mut redrawn = 0;
        for seed in 0..50 {
            let p = dirichlet_partition_labels(&l, 4, 6, 0.2, seed).unwrap();
            assert!(p.client_indices.iter().all(|c| !c.is_empty()));
            if p.seed != seed {
                redrawn += 1;
            }
        }
        assert!(redrawn > 0);
    }

    #[test]
    fn batches_cover_epoch_once() {
        let idx: Vec<usize> = (100..110).collect();
        let b = batches(&idx, 4, 9).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, idx);
        assert_eq!(b, batches(&idx, 4, 9).unwrap());
        assert!(matches!(batches(&[], 4, 0), Err(Error::Input(_))));
        assert!(matches!(batches(&idx, 0, 0), Err(Error::Parameter(_))));
    }
}
