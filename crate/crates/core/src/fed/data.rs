use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};

/// Paired inputs and targets, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Array2<f64>,
    targets: Array2<f64>,
}

impl Dataset {
    pub fn new(inputs: Array2<f64>, targets: Array2<f64>) -> Result<Self> {
        check_dim("dataset targets", inputs.nrows(), targets.nrows())?;
        if inputs.nrows() == 0 {
            return Err(Error::Empty("dataset"));
        }
        if inputs.ncols() == 0 || targets.ncols() == 0 {
            return Err(Error::Empty("dataset features"));
        }
        Ok(Self { inputs, targets })
    }

    /// Autoencoder-style dataset where the targets are the inputs.
    pub fn reconstruction(samples: Array2<f64>) -> Result<Self> {
        Self::new(samples.clone(), samples)
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn inputs(&self) -> ArrayView2<'_, f64> {
        self.inputs.view()
    }

    pub fn targets(&self) -> ArrayView2<'_, f64> {
        self.targets.view()
    }

    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        Self::new(
            self.inputs.select(Axis(0), rows),
            self.targets.select(Axis(0), rows),
        )
    }
}

/// One client's private data `P_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    data: Dataset,
}

impl ClientShard {
    pub fn new(client_id: usize, data: Dataset) -> Self {
        Self { client_id, data }
    }

    /// Cardinality `n_k` of the shard.
    pub fn n_k(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }
}

/// Shuffles the dataset with `seed` and deals it into `clients` contiguous shards.
///
/// Shard sizes differ by at most one; the first `n % clients` shards get the extra
/// sample. Shard `k` gets `client_id = k`.
pub fn partition_iid(data: &Dataset, clients: usize, seed: u64) -> Result<Vec<ClientShard>> {
    if clients == 0 {
        return Err(Error::InvalidArgument("client count must be at least 1".into()));
    }
    let n = data.len();
    if clients > n {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} samples across {clients} clients"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let base = n / clients;
    let extra = n % clients;
    let mut start = 0;
    (0..clients)
        .map(|k| {
            let size = base + usize::from(k < extra);
            let rows = &order[start..start + size];
            start += size;
            Ok(ClientShard::new(k, data.select(rows)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn indexed(n: usize) -> Dataset {
        let x = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64);
        let y = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        Dataset::new(x, y).unwrap()
    }

    fn sizes(shards: &[ClientShard]) -> Vec<usize> {
        shards.iter().map(ClientShard::n_k).collect()
    }

    #[test]
    fn exact_division() {
        let shards = partition_iid(&indexed(10), 10, 1).unwrap();
        assert_eq!(sizes(&shards), vec![1; 10]);
        assert!(shards.iter().enumerate().all(|(k, s)| s.client_id == k));
    }

    #[test]
    fn remainder_rule() {
        let shards = partition_iid(&indexed(11), 10, 1).unwrap();
        let mut expected = vec![1; 10];
        expected[0] = 2;
        assert_eq!(sizes(&shards), expected);
    }

    #[test]
    fn union_is_original_multiset() {
        let data = indexed(97);
        let shards = partition_iid(&data, 7, 42).unwrap();
        let mut ids: Vec<usize> = shards
            .iter()
            .flat_map(|s| s.data().targets().column(0).to_vec())
            .map(|v| v as usize)
            .collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..97).collect::<Vec<_>>());
        // rows stay paired
        for s in &shards {
            for (x, y) in s.data().inputs().rows().into_iter().zip(s.data().targets().rows()) {
                assert_eq!(x[0], 2.0 * y[0]);
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let data = indexed(30);
        assert_eq!(
            partition_iid(&data, 4, 5).unwrap(),
            partition_iid(&data, 4, 5).unwrap()
        );
        assert_ne!(
            partition_iid(&data, 4, 5).unwrap(),
            partition_iid(&data, 4, 6).unwrap()
        );
    }

    #[test]
    fn too_many_clients() {
        assert!(partition_iid(&indexed(3), 4, 0).is_err());
        assert!(partition_iid(&indexed(3), 0, 0).is_err());
    }

    #[test]
    fn dataset_shape_errors() {
        assert!(Dataset::new(Array2::zeros((3, 2)), Array2::zeros((2, 1))).is_err());
        assert!(Dataset::new(Array2::zeros((0, 2)), Array2::zeros((0, 1))).is_err());
    }
}
