//! Dense encoder-decoder pairs for nonlinear reduction of snapshot vectors.

use std::io::{Read, Write};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dynsys::SnapshotMatrix;
use crate::error::{check_dim, Error, Result};
use crate::fed::{Dataset, RoundLog, TrainMode};
use crate::nn::{build_network, mlp_specs, read_checkpoints, write_checkpoints, Activation, Network};

/// Hidden-layer layout of the encoder; the decoder mirrors it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AeArch {
    /// Three hidden layers of 100.
    Ks,
    /// Hidden layers 800, 400, 200.
    Sst,
}

impl AeArch {
    pub fn hidden(self) -> &'static [usize] {
        match self {
            AeArch::Ks => &[100, 100, 100],
            AeArch::Sst => &[800, 400, 200],
        }
    }

    pub fn activation(self) -> Activation {
        Activation::Elu
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    encoder: Network,
    decoder: Network,
    latent: usize,
}

/// Encoder `n -> hidden -> r` and decoder `r -> reversed hidden -> n`, both with
/// linear output layers.
///
/// Both halves are initialized as one network seeded with `seed`, then split.
pub fn build_autoencoder(n: usize, r: usize, arch: AeArch, seed: u64) -> Result<Autoencoder> {
    if r == 0 || r >= n {
        return Err(Error::Config(format!("latent size {r} must satisfy 1 <= R < N = {n}")));
    }
    let hidden = arch.hidden();
    let mut widths = vec![n];
    widths.extend(hidden);
    widths.push(r);
    let mut specs = mlp_specs(&widths, arch.activation(), Activation::Linear);
    let mut back = vec![r];
    back.extend(hidden.iter().rev());
    back.push(n);
    specs.extend(mlp_specs(&back, arch.activation(), Activation::Linear));
    let whole = build_network(&specs, seed)?;
    Autoencoder::from_network(&whole, hidden.len() + 1)
}

impl Autoencoder {
    pub fn new(encoder: Network, decoder: Network) -> Result<Self> {
        let latent = encoder.output_width();
        check_dim("decoder input", latent, decoder.input_width())?;
        check_dim("decoder output", encoder.input_width(), decoder.output_width())?;
        if latent >= encoder.input_width() {
            return Err(Error::Config(format!(
                "latent size {latent} is not below the input size {}",
                encoder.input_width()
            )));
        }
        Ok(Self {
            encoder,
            decoder,
            latent,
        })
    }

    /// Splits a composed network after `encoder_layers` layers.
    pub fn from_network(net: &Network, encoder_layers: usize) -> Result<Self> {
        let (e, d) = net.split_at(encoder_layers)?;
        Self::new(e, d)
    }

    pub fn encoder(&self) -> &Network {
        &self.encoder
    }

    pub fn decoder(&self) -> &Network {
        &self.decoder
    }

    pub fn latent(&self) -> usize {
        self.latent
    }

    pub fn input_width(&self) -> usize {
        self.encoder.input_width()
    }

    /// Encoder followed by decoder as a single network.
    pub fn composed(&self) -> Network {
        self.encoder.concat(&self.decoder).expect("widths checked at construction")
    }

    pub fn encode(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.encoder.forward(u)
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.decoder.forward(z)
    }

    pub fn reconstruct(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.decode(&self.encode(u)?)
    }

    /// Reconstructs every row of `samples`.
    pub fn reconstruct_batch(&self, samples: ArrayView2<f64>) -> Result<Array2<f64>> {
        let z = self.encoder.forward_batch(samples)?;
        self.decoder.forward_batch(z.view())
    }

    /// Reconstructs every column of `snapshots`.
    pub fn reconstruct_snapshots(&self, snapshots: &SnapshotMatrix) -> Result<SnapshotMatrix> {
        SnapshotMatrix::new(self.reconstruct_batch(snapshots.samples().view())?.reversed_axes())
    }

    /// Mean squared reconstruction error over all entries of `snapshots`.
    pub fn mse(&self, snapshots: &SnapshotMatrix) -> Result<f64> {
        let samples = snapshots.samples();
        self.composed().loss(samples.view(), samples.view())
    }

    /// Encoder and decoder as a two-network checkpoint.
    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        write_checkpoints(w, &[&self.encoder, &self.decoder])
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut nets = read_checkpoints(r)?;
        if nets.len() != 2 {
            return Err(Error::Format {
                format: "autoencoder checkpoint",
                reason: format!("expected 2 networks, found {}", nets.len()),
            });
        }
        let decoder = nets.pop().expect("two");
        let encoder = nets.pop().expect("two");
        Self::new(encoder, decoder)
    }
}

/// Divides by one global factor, the largest magnitude in the fitted data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxAbsScaler {
    pub scale: f64,
}

impl MaxAbsScaler {
    pub fn fit(snapshots: &SnapshotMatrix) -> Result<Self> {
        let scale = snapshots.as_array().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 || !scale.is_finite() {
            return Err(Error::InvalidArgument(format!("cannot scale data with max |u| = {scale}")));
        }
        Ok(Self { scale })
    }

    pub fn apply(&self, snapshots: &SnapshotMatrix) -> Result<SnapshotMatrix> {
        SnapshotMatrix::new(snapshots.as_array() / self.scale)
    }

    pub fn invert(&self, snapshots: &SnapshotMatrix) -> Result<SnapshotMatrix> {
        SnapshotMatrix::new(snapshots.as_array() * self.scale)
    }
}

#[derive(Debug, Clone)]
pub struct AeTraining {
    pub autoencoder: Autoencoder,
    pub logs: Vec<RoundLog>,
}

/// Fits an autoencoder to reproduce the columns of `train`.
///
/// Data is used as given; scale it first (see [`MaxAbsScaler`]). The network is
/// seeded with the mode's seed, and federated mode splits the snapshot columns IID
/// across the clients.
pub fn train_autoencoder(
    train: &SnapshotMatrix,
    validation: &SnapshotMatrix,
    latent: usize,
    arch: AeArch,
    mode: &TrainMode,
) -> Result<AeTraining> {
    check_dim("validation state size", train.rows(), validation.rows())?;
    if let TrainMode::Federated(cfg) = mode {
        if train.cols() < cfg.clients {
            return Err(Error::Config(format!(
                "{} snapshots cannot feed {} clients",
                train.cols(),
                cfg.clients
            )));
        }
    }
    let init = build_autoencoder(train.rows(), latent, arch, mode.seed())?;
    let encoder_layers = init.encoder().layers().len();
    let data = Dataset::reconstruction(train.samples())?;
    let val = Dataset::reconstruction(validation.samples())?;
    let (net, logs) = mode.train(init.composed(), &data, &val)?;
    Ok(AeTraining {
        autoencoder: Autoencoder::from_network(&net, encoder_layers)?,
        logs,
    })
}
