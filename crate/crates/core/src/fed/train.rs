use std::io::Write;
use std::time::Instant;

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{partition_iid, ClientShard, Dataset};
use crate::error::{Error, Result};
use crate::nn::{build_network, unflatten, LayerSpec, Network, ParamVector};

/// Loss above which a run is declared divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Federated-averaging hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    /// Number of clients `K`.
    #[serde(rename = "K")]
    pub clients: usize,
    /// Local epochs per round `E`.
    #[serde(rename = "E")]
    pub local_epochs: usize,
    /// Local minibatch size `B`.
    #[serde(rename = "B")]
    pub batch_size: usize,
    pub lr: f64,
    pub rounds: usize,
    pub seed: u64,
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("{what} must be at least 1")));
        if self.clients == 0 {
            return bad("client count K");
        }
        if self.local_epochs == 0 {
            return bad("local epochs E");
        }
        if self.batch_size == 0 {
            return bad("batch size B");
        }
        if self.rounds == 0 {
            return bad("round count");
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("learning rate {} is invalid", self.lr)));
        }
        Ok(())
    }

    fn local(&self) -> LocalSchedule {
        LocalSchedule {
            epochs: self.local_epochs,
            batch_size: self.batch_size,
            lr: self.lr,
        }
    }
}

/// Pooled-data SGD settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentralConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

/// What one client does with the broadcast parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

/// One entry per round (federated) or epoch (centralized). Entry 0 is the initial model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_ms: f64,
}

/// Parameters returned by one client together with its shard size.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub n_k: usize,
    pub params: ParamVector,
}

#[derive(Debug, Clone)]
pub struct FedRun {
    pub network: Network,
    pub logs: Vec<RoundLog>,
}

#[derive(Debug, Clone)]
pub struct CentralRun {
    pub network: Network,
    pub logs: Vec<RoundLog>,
    /// The requested batch size exceeded the dataset and was clamped.
    pub batch_clamped: bool,
}

/// Pooled or federated training, with its settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainMode {
    Centralized(CentralConfig),
    Federated(FedConfig),
}

impl TrainMode {
    pub fn seed(&self) -> u64 {
        match self {
            TrainMode::Centralized(c) => c.seed,
            TrainMode::Federated(f) => f.seed,
        }
    }

    /// Trains `init` on `data`; federated mode first splits `data` IID across the clients.
    pub fn train(&self, init: Network, data: &Dataset, validation: &Dataset) -> Result<(Network, Vec<RoundLog>)> {
        match self {
            TrainMode::Centralized(cfg) => {
                let run = run_centralized_from(init, data, cfg, validation, &mut |_, _| Ok(()))?;
                Ok((run.network, run.logs))
            }
            TrainMode::Federated(cfg) => {
                let shards = partition_iid(data, cfg.clients, cfg.seed)?;
                let run = run_federated_from(init, &shards, cfg, validation, &mut |_, _| Ok(()))?;
                Ok((run.network, run.logs))
            }
        }
    }
}

/// Seed of the RNG stream for `(client, round)` under a global seed.
///
/// SplitMix64 finalizer applied to a mix of the three values.
pub fn stream_seed(seed: u64, client_id: usize, round: usize) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(mix(seed) ^ client_id as u64) ^ round as u64)
}

/// Runs `epochs` passes of shuffled minibatch SGD over `data`. The last batch of an
/// epoch may be short.
fn local_sgd<R: Rng + ?Sized>(
    net: &mut Network,
    data: &Dataset,
    schedule: &LocalSchedule,
    rng: &mut R,
) -> Result<()> {
    let n = data.len();
    let batch = schedule.batch_size.clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..schedule.epochs {
        order.shuffle(rng);
        for rows in order.chunks(batch) {
            let x = data.inputs().select(Axis(0), rows);
            let y = data.targets().select(Axis(0), rows);
            net.train_step(x.view(), y.view(), schedule.lr)?;
        }
    }
    Ok(())
}

/// `ClientUpdate(k, w)`: local epochs of minibatch SGD starting from `w`.
pub fn client_update<R: Rng + ?Sized>(
    specs: &[LayerSpec],
    w: &ParamVector,
    shard: &ClientShard,
    schedule: &LocalSchedule,
    rng: &mut R,
) -> Result<ParamVector> {
    let mut net = unflatten(w, specs)?;
    local_sgd(&mut net, shard.data(), schedule, rng)?;
    Ok(net.flatten())
}

/// `sum_k (n_k / n) w_k`, summed in ascending `client_id` order.
pub fn aggregate(updates: &[ClientUpdate]) -> Result<ParamVector> {
    if updates.is_empty() {
        return Err(Error::Empty("client updates"));
    }
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.client_id);

    let len = sorted[0].params.len();
    for u in &sorted {
        if u.params.len() != len {
            return Err(Error::Layout {
                expected: len,
                actual: u.params.len(),
            });
        }
        if u.n_k == 0 {
            return Err(Error::InvalidArgument(format!(
                "client {} reported an empty shard",
                u.client_id
            )));
        }
    }
    let total: usize = sorted.iter().map(|u| u.n_k).sum();
    let weights: Vec<f64> = sorted
        .iter()
        .map(|u| u.n_k as f64 / total as f64)
        .collect();
    debug_assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-15 * weights.len() as f64);

    let mut acc: Vec<f64> = sorted[0]
        .params
        .as_slice()
        .iter()
        .map(|v| weights[0] * v)
        .collect();
    for (u, &c) in sorted.iter().zip(&weights).skip(1) {
        for (a, v) in acc.iter_mut().zip(u.params.as_slice()) {
            *a += c * v;
        }
    }
    Ok(ParamVector::new(acc))
}

fn pooled_loss(net: &Network, shards: &[ClientShard]) -> Result<f64> {
    let total: usize = shards.iter().map(ClientShard::n_k).sum();
    let mut loss = 0.0;
    for s in shards {
        let l = net.loss(s.data().inputs(), s.data().targets())?;
        loss += l * s.n_k() as f64 / total as f64;
    }
    Ok(loss)
}

fn checked_log(round: usize, train_loss: f64, val_loss: f64, start: &Instant) -> Result<RoundLog> {
    for loss in [train_loss, val_loss] {
        if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
            return Err(Error::Diverged { round, loss });
        }
    }
    Ok(RoundLog {
        round,
        train_loss,
        val_loss,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Federated averaging from a Glorot initialization seeded with `config.seed`.
pub fn run_federated(
    specs: &[LayerSpec],
    shards: &[ClientShard],
    config: &FedConfig,
    validation: &Dataset,
) -> Result<FedRun> {
    let init = build_network(specs, config.seed)?;
    run_federated_from(init, shards, config, validation, &mut |_, _| Ok(()))
}

/// Federated averaging from a given initial network.
///
/// `observer` sees every round's log and the aggregated global model.
pub fn run_federated_from(
    init: Network,
    shards: &[ClientShard],
    config: &FedConfig,
    validation: &Dataset,
    observer: &mut dyn FnMut(&RoundLog, &Network) -> Result<()>,
) -> Result<FedRun> {
    config.validate()?;
    if shards.is_empty() {
        return Err(Error::Empty("client shards"));
    }
    let specs = init.specs();
    let schedule = config.local();
    let start = Instant::now();

    let mut global = init;
    let mut logs = Vec::with_capacity(config.rounds + 1);
    let first = checked_log(
        0,
        pooled_loss(&global, shards)?,
        global.loss(validation.inputs(), validation.targets())?,
        &start,
    )?;
    observer(&first, &global)?;
    logs.push(first);

    for round in 1..=config.rounds {
        let w = global.flatten();
        let results: Vec<Result<ClientUpdate>> = shards
            .par_iter()
            .map(|shard| {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(stream_seed(config.seed, shard.client_id, round));
                client_update(&specs, &w, shard, &schedule, &mut rng).map(|params| ClientUpdate {
                    client_id: shard.client_id,
                    n_k: shard.n_k(),
                    params,
                })
            })
            .collect();

        let mut updates = Vec::with_capacity(results.len());
        for (shard, result) in shards.iter().zip(results) {
            match result {
                Ok(u) => updates.push(u),
                Err(e) => {
                    return Err(Error::Client {
                        client: shard.client_id,
                        round,
                        source: Box::new(e),
                    })
                }
            }
        }
        global.load_params(&aggregate(&updates)?)?;

        let log = checked_log(
            round,
            pooled_loss(&global, shards)?,
            global.loss(validation.inputs(), validation.targets())?,
            &start,
        )?;
        observer(&log, &global)?;
        logs.push(log);
    }
    Ok(FedRun {
        network: global,
        logs,
    })
}

/// Pooled minibatch SGD from a Glorot initialization seeded with `config.seed`.
pub fn run_centralized(
    specs: &[LayerSpec],
    data: &Dataset,
    config: &CentralConfig,
    validation: &Dataset,
) -> Result<CentralRun> {
    let init = build_network(specs, config.seed)?;
    run_centralized_from(init, data, config, validation, &mut |_, _| Ok(()))
}

/// Pooled minibatch SGD from a given initial network.
///
/// Epoch `e` shuffles with the same stream client 0 uses in round `e` of a
/// federated run, so a single-client federated run reproduces this trainer.
pub fn run_centralized_from(
    init: Network,
    data: &Dataset,
    config: &CentralConfig,
    validation: &Dataset,
    observer: &mut dyn FnMut(&RoundLog, &Network) -> Result<()>,
) -> Result<CentralRun> {
    if config.epochs == 0 {
        return Err(Error::Config("epoch count must be at least 1".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if !(config.lr.is_finite() && config.lr >= 0.0) {
        return Err(Error::Config(format!("learning rate {} is invalid", config.lr)));
    }
    let batch_clamped = config.batch_size > data.len();
    if batch_clamped {
        log::warn!(
            "batch size {} exceeds dataset size {}; clamping",
            config.batch_size,
            data.len()
        );
    }
    let schedule = LocalSchedule {
        epochs: 1,
        batch_size: config.batch_size.min(data.len()),
        lr: config.lr,
    };
    let start = Instant::now();
    let mut net = init;
    let mut logs = Vec::with_capacity(config.epochs + 1);
    let first = checked_log(
        0,
        net.loss(data.inputs(), data.targets())?,
        net.loss(validation.inputs(), validation.targets())?,
        &start,
    )?;
    observer(&first, &net)?;
    logs.push(first);

    for epoch in 1..=config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, 0, epoch));
        local_sgd(&mut net, data, &schedule, &mut rng)?;
        let log = checked_log(
            epoch,
            net.loss(data.inputs(), data.targets())?,
            net.loss(validation.inputs(), validation.targets())?,
            &start,
        )?;
        observer(&log, &net)?;
        logs.push(log);
    }
    Ok(CentralRun {
        network: net,
        logs,
        batch_clamped,
    })
}

/// Writes `round,train_loss,val_loss,wall_ms` rows.
pub fn write_round_csv<W: Write>(mut w: W, logs: &[RoundLog]) -> Result<()> {
    writeln!(w, "round,train_loss,val_loss,wall_ms")?;
    for l in logs {
        writeln!(w, "{},{:e},{:e},{}", l.round, l.train_loss, l.val_loss, l.wall_ms)?;
    }
    Ok(())
}
