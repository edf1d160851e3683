//! Proper orthogonal decomposition of snapshot matrices and the parametric
//! POD-ROM built on top of it.

mod basis;
mod rom;
mod svd;

pub use basis::{compute_pod, compute_pod_energy, rank_for_energy, PodBasis};
pub use rom::{
    rom_predict, split_columns, train_rom, CoefficientScaler, MinMaxScaler, ParamScaler,
    RankChoice, RomErrorBreakdown, RomModel, RomPrediction, RomSettings, RomTraining,
};
pub use svd::{thin_svd, Svd};
