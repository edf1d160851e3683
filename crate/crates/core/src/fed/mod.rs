//! Synchronous federated averaging and the pooled-data baseline trainer.
//!
//! One round broadcasts the global parameters, lets every client run `E` local
//! epochs of minibatch SGD on its own shard, and replaces the global parameters with
//! the data-size-weighted mean `sum_k (n_k / n) w_k`. Every client participates in
//! every round. Client updates run in parallel on the current rayon pool; results
//! are aggregated in ascending `client_id` order so scheduling never changes the
//! output.

mod data;
mod train;

pub use data::{partition_iid, ClientShard, Dataset};
pub use train::{
    aggregate, client_update, run_centralized, run_centralized_from, run_federated,
    run_federated_from, stream_seed, write_round_csv, CentralConfig, CentralRun, ClientUpdate,
    FedConfig, FedRun, LocalSchedule, RoundLog, TrainMode, DIVERGENCE_LIMIT,
};
