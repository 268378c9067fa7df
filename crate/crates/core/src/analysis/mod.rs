//! Statistics behind the scale-bias, temperature, GEMM and rank claims.

mod clt;
mod crossterm;
mod gamma;
mod gemm;
mod rank;
mod temperature;

pub use clt::{cumulative_scale_bias, CltConfig, CltReport, DeltaSampler};
pub use crossterm::{cross_term_for_blocks, cross_term_vs_blocksize, CrossTermPoint};
pub use gamma::{
    block_delta, gamma_stats_blocks, gamma_stats_synthetic, gamma_stats_tensors, GammaStats,
    GAMMA_BINS, MIN_GAMMA_BLOCKS,
};
pub use gemm::{gemm_error_propagation, GemmPropagation, InputCovariance};
pub use rank::{deadzone_rank_trials, deadzone_truncate, effective_rank, RankTrials};
pub use temperature::{
    aqn_total_noise, effective_temperature_fit, effective_temperature_predict, entropy, softmax,
    total_noise, var_delta_ell, TempFit, TempPrediction, MIN_TEMP_DRAWS,
};
