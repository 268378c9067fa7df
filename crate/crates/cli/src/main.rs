use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use mxdecomp::analysis::{
    cross_term_vs_blocksize, cumulative_scale_bias, effective_temperature_fit,
    effective_temperature_predict, gamma_stats_synthetic, gamma_stats_tensors,
    gemm_error_propagation, total_noise, var_delta_ell, CltConfig, DeltaSampler, InputCovariance,
};
use mxdecomp::corrections::{
    aqn_apply, dz_recovery_rate, mbs_qdq, of_qdq, AqnSchedule, MbsConfig, MbsSelection, OfConfig,
};
use mxdecomp::decomposition::{
    decompose_reconstruction, decompose_tensor, scale_precision_sweep, tensor_stats,
    verify_identity, ErrorDecomposition,
};
use mxdecomp::quantizer::BlockQuantConfig;
use mxdecomp::report::{to_csv_bytes, to_json_bytes, write_atomic};
use mxdecomp::tensorstore::{
    load_container, save_container, synth, synth_tensor, Distribution, SynthSpec, TensorSet,
};
use mxdecomp::{Error, Tensor};

/// Identity residuals above this abort with exit code 3.
const IDENTITY_TOL: f64 = 1e-9;

#[derive(Parser)]
#[command(
    name = "mxdecomp",
    version,
    about = "MXFP4 quantization error decomposition and analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-tensor scale / deadzone / grid decomposition.
    Decompose(DecomposeArgs),
    /// Decomposition across scale mantissa widths.
    Sweep(SweepArgs),
    /// Before/after report for Macro Block Scaling.
    Mbs(MbsArgs),
    /// Before/after report for Outlier Fallback.
    Of(OfArgs),
    /// Distribution of the scale ratio gamma.
    Gamma(GammaArgs),
    /// Cumulative log2 scale bias across layers.
    Cltsum(CltArgs),
    /// Predicted vs fitted effective temperature.
    Temp(TempArgs),
    /// GEMM output error propagation.
    Gemm(GemmArgs),
    /// AQN noise schedule, optionally writing a noised container.
    Aqn(AqnArgs),
    /// Cross term as a function of block size.
    Crossterm(CrossTermArgs),
}

#[derive(Args, Serialize, Clone)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Report path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Omit wall-clock duration so reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Copy, Clone, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Serialize, Clone)]
struct InputArgs {
    /// Tensor container file.
    #[arg(long, conflicts_with = "synth")]
    input: Option<PathBuf>,
    /// Synthetic spec: `dist:AxB[*count]` or JSON.
    #[arg(long)]
    synth: Option<String>,
    /// Keep only tensors whose name contains one of these substrings.
    #[arg(long = "filter")]
    filter: Vec<String>,
}

#[derive(Args, Serialize, Clone)]
struct QuantArgs {
    #[arg(long, default_value_t = 32)]
    block_size: usize,
    #[arg(long, default_value_t = 0)]
    scale_mantissa_bits: u8,
}

#[derive(Args, Serialize, Clone)]
struct MbsArgsShared {
    #[arg(long, default_value_t = 128)]
    macro_block: usize,
    #[arg(long, value_enum, default_value_t = Selection::Exhaustive)]
    mbs_selection: Selection,
}

#[derive(Copy, Clone, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Selection {
    Exhaustive,
    ClosedForm,
}

#[derive(Args, Serialize)]
struct DecomposeArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    quant: QuantArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Serialize)]
struct SweepArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = 32)]
    block_size: usize,
    /// Mantissa widths to sweep.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6,7,8")]
    bits: Vec<u8>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Serialize)]
struct MbsArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    quant: QuantArgs,
    #[command(flatten)]
    mbs: MbsArgsShared,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Serialize)]
struct OfArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    quant: QuantArgs,
    #[arg(long, default_value_t = 0.5)]
    of_alpha: f64,
    /// Use MBS in both passes.
    #[arg(long)]
    with_mbs: bool,
    #[command(flatten)]
    mbs: MbsArgsShared,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Serialize)]
struct GammaArgs {
    /// Tensors to analyse; without input, synthetic blocks are sampled.
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    quant: QuantArgs,
    #[arg(long, default_value_t = 100_000)]
    blocks: usize,
    #[arg(long, default_value = "lognormal_max_blocks")]
    distribution: String,
    #[command(flatten)]
    common: Common,
}

#[derive(Copy, Clone, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum CltMode {
    Uniform,
    OnePerLayer,
    MeanOverBlocks,
}

#[derive(Args, Serialize)]
struct CltArgs {
    #[arg(long, default_value_t = 48)]
    layers: usize,
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    #[arg(long, value_enum, default_value_t = CltMode::Uniform)]
    mode: CltMode,
    #[arg(long, default_value = "lognormal_max_blocks")]
    distribution: String,
    #[arg(long, default_value_t = 32)]
    block_size: usize,
    #[arg(long, default_value_t = 16)]
    blocks_per_layer: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Serialize)]
struct TempArgs {
    #[arg(long, default_value_t = 100)]
    vocab: usize,
    #[arg(long, default_value_t = 100_000)]
    draws: usize,
    /// Values of 2·σ_η² / Var(Δℓ) to evaluate.
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,1")]
    ratios: Vec<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Copy, Clone, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum CovMode {
    Isotropic,
    Diagonal,
    Samples,
}

#[derive(Args, Serialize)]
struct GemmArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    quant: QuantArgs,
    #[arg(long, value_enum, default_value_t = CovMode::Isotropic)]
    covariance: CovMode,
    /// Isotropic input variance.
    #[arg(long, default_value_t = 1.0)]
    variance: f64,
    /// Container whose first tensor (n × cols) is the activation sample set.
    #[arg(long)]
    activations: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long)]
    with_mbs: bool,
    #[command(flatten)]
    mbs: MbsArgsShared,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Serialize)]
struct AqnArgs {
    #[arg(long, default_value_t = 0.01)]
    sigma_start: f64,
    #[arg(long, default_value_t = 0.001)]
    sigma_end: f64,
    #[arg(long, default_value_t = 10)]
    stages: usize,
    /// Grid-noise level combined with each stage as sqrt(grid² + aqn²).
    #[arg(long)]
    sigma_grid: Option<f64>,
    /// Stage used for `--noised-out`.
    #[arg(long, default_value_t = 0)]
    stage: usize,
    #[command(flatten)]
    input: InputArgs,
    /// Write the noised tensors of `--input`/`--synth` here.
    #[arg(long)]
    noised_out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Serialize)]
struct CrossTermArgs {
    #[arg(long, default_value = "gaussian")]
    distribution: String,
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,128,256,512")]
    block_sizes: Vec<usize>,
    #[arg(long, default_value_t = 100_000)]
    blocks: usize,
    #[command(flatten)]
    common: Common,
}

enum Failure {
    Input(String),
    Invariant(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Invariant(m) => Failure::Invariant(m),
            other => Failure::Input(other.to_string()),
        }
    }
}

type CmdResult<T> = std::result::Result<T, Failure>;

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum InputSource {
    Container { path: PathBuf },
    Synth { spec: SynthSpec },
    None,
}

#[derive(Serialize)]
struct RunConfig {
    command: &'static str,
    input: InputSource,
    args: Value,
}

#[derive(Serialize)]
struct Envelope<'a, R: Serialize> {
    artifact: &'static str,
    version: &'static str,
    config: &'a RunConfig,
    seed: u64,
    duration_seconds: Option<f64>,
    result: R,
}

fn quant_config(q: &QuantArgs) -> CmdResult<BlockQuantConfig> {
    Ok(BlockQuantConfig::new(q.block_size, q.scale_mantissa_bits)?)
}

fn mbs_config(m: &MbsArgsShared) -> MbsConfig {
    MbsConfig {
        macro_block: m.macro_block,
        selection: match m.mbs_selection {
            Selection::Exhaustive => MbsSelection::Exhaustive,
            Selection::ClosedForm => MbsSelection::ClosedForm,
        },
    }
}

fn parse_distribution(s: &str) -> CmdResult<Distribution> {
    Ok(s.parse::<Distribution>()?)
}

fn load_input(input: &InputArgs, seed: u64) -> CmdResult<(TensorSet, InputSource)> {
    let (set, source) = match (&input.input, &input.synth) {
        (Some(path), _) => (
            load_container(path)?,
            InputSource::Container { path: path.clone() },
        ),
        (None, Some(s)) => {
            let spec = SynthSpec::parse(s, seed)?;
            (synth(&spec)?, InputSource::Synth { spec })
        }
        (None, None) => {
            return Err(Failure::Input(
                "one of --input or --synth is required".into(),
            ))
        }
    };
    let set = set.filter_names(&input.filter);
    if set.is_empty() {
        return Err(Failure::Input("no tensors selected".into()));
    }
    Ok((set, source))
}

fn check_identity(name: &str, d: &ErrorDecomposition) -> CmdResult<()> {
    let r = verify_identity(d);
    if r > IDENTITY_TOL {
        return Err(Failure::Invariant(format!(
            "MSE identity residual {r:e} on `{name}`"
        )));
    }
    Ok(())
}

fn emit<R: Serialize>(
    common: &Common,
    config: &RunConfig,
    started: Instant,
    result: R,
) -> CmdResult<()> {
    let env = Envelope {
        artifact: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config,
        seed: common.seed,
        duration_seconds: (!common.no_timing).then(|| started.elapsed().as_secs_f64()),
        result,
    };
    let bytes = match common.format {
        Format::Json => to_json_bytes(&env)?,
        Format::Csv => to_csv_bytes(&env)?,
    };
    match &common.out {
        Some(path) => write_atomic(path, &bytes)?,
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(&bytes)
                .map_err(|e| Failure::Input(e.to_string()))?;
        }
    }
    Ok(())
}

fn args_value<T: Serialize>(a: &T) -> CmdResult<Value> {
    serde_json::to_value(a).map_err(|e| Failure::Input(e.to_string()))
}

#[derive(Serialize)]
struct CorrectionRow {
    name: String,
    mse_total_before: f64,
    mse_total_after: f64,
    mse_scale_before: f64,
    mse_scale_after: f64,
    /// Per-element `‖e_dz‖² + ‖e_grid‖²` of plain QDQ.
    floor_mse: f64,
    floor_ratio_before: f64,
    floor_ratio_after: f64,
    scale_reduction: f64,
    dz_rate_before: Option<f64>,
    dz_rate_after: Option<f64>,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else if a == 0.0 {
        1.0
    } else {
        f64::INFINITY
    }
}

fn correction_row(
    name: &str,
    t: &Tensor,
    before: &ErrorDecomposition,
    after: &ErrorDecomposition,
) -> CorrectionRow {
    let n = t.numel().max(1) as f64;
    let floor = (before.norms.dz + before.norms.grid) / n;
    let (tb, ta) = (before.norms.total / n, after.norms.total / n);
    let (sb, sa) = (before.norms.scale / n, after.norms.scale / n);
    CorrectionRow {
        name: name.to_string(),
        mse_total_before: tb,
        mse_total_after: ta,
        mse_scale_before: sb,
        mse_scale_after: sa,
        floor_mse: floor,
        floor_ratio_before: ratio(tb, floor),
        floor_ratio_after: ratio(ta, floor),
        scale_reduction: ratio(sb, sa),
        dz_rate_before: None,
        dz_rate_after: None,
    }
}

fn run(cli: Cli) -> CmdResult<()> {
    let started = Instant::now();
    match cli.command {
        Command::Decompose(a) => {
            let q = quant_config(&a.quant)?;
            let (set, input) = load_input(&a.input, a.common.seed)?;
            let report = tensor_stats(&set, &q)?;
            for r in &report.tensors {
                if r.identity_residual > IDENTITY_TOL {
                    return Err(Failure::Invariant(format!(
                        "MSE identity residual {:e} on `{}`",
                        r.identity_residual, r.name
                    )));
                }
                if r.cos_scale_dz != 0.0 || r.cos_dz_grid != 0.0 {
                    return Err(Failure::Invariant(format!(
                        "deadzone component not orthogonal on `{}`",
                        r.name
                    )));
                }
            }
            let config = RunConfig {
                command: "decompose",
                input,
                args: args_value(&a)?,
            };
            emit(&a.common, &config, started, report)
        }
        Command::Sweep(a) => {
            let q = BlockQuantConfig::new(a.block_size, 0)?;
            let (set, input) = load_input(&a.input, a.common.seed)?;
            #[derive(Serialize)]
            struct Row {
                name: String,
                sweep: mxdecomp::decomposition::SweepReport,
            }
            let mut rows = Vec::new();
            for (name, e) in set.iter() {
                let sweep = scale_precision_sweep(&e.tensor, &q, &a.bits)?;
                if !sweep.grid_invariant {
                    return Err(Failure::Invariant(format!(
                        "grid component changed with scale precision on `{name}`"
                    )));
                }
                rows.push(Row {
                    name: name.clone(),
                    sweep,
                });
            }
            let config = RunConfig {
                command: "sweep",
                input,
                args: args_value(&a)?,
            };
            emit(&a.common, &config, started, rows)
        }
        Command::Mbs(a) => {
            let q = quant_config(&a.quant)?;
            let m = mbs_config(&a.mbs);
            let (set, input) = load_input(&a.input, a.common.seed)?;
            #[derive(Serialize)]
            struct Row {
                #[serde(flatten)]
                row: CorrectionRow,
                macro_blocks: usize,
                mean_code: f64,
            }
            let mut rows = Vec::new();
            for (name, e) in set.iter() {
                let t = &e.tensor;
                let before = decompose_tensor(t, &q)?;
                let out = mbs_qdq(t, &m, &q)?;
                let after = decompose_reconstruction(t, &out.tensor, &q)?;
                check_identity(name, &before)?;
                check_identity(name, &after)?;
                let k = out.codes.len();
                rows.push(Row {
                    row: correction_row(name, t, &before, &after),
                    macro_blocks: k,
                    mean_code: out.codes.iter().map(|&c| f64::from(c)).sum::<f64>()
                        / k.max(1) as f64,
                });
            }
            let config = RunConfig {
                command: "mbs",
                input,
                args: args_value(&a)?,
            };
            emit(&a.common, &config, started, rows)
        }
        Command::Of(a) => {
            let q = quant_config(&a.quant)?;
            let of = OfConfig::new(a.of_alpha)?;
            let m = mbs_config(&a.mbs);
            let (set, input) = load_input(&a.input, a.common.seed)?;
            let mut rows = Vec::new();
            for (name, e) in set.iter() {
                let t = &e.tensor;
                let before = decompose_tensor(t, &q)?;
                let out = of_qdq(t, &of, &q, a.with_mbs.then_some(&m))?;
                let after = decompose_reconstruction(t, &out.x_hat, &q)?;
                check_identity(name, &before)?;
                check_identity(name, &after)?;
                let dz = dz_recovery_rate(t, &out, &q)?;
                let mut row = correction_row(name, t, &before, &after);
                row.dz_rate_before = Some(dz.dz_rate_before);
                row.dz_rate_after = Some(dz.dz_rate_after);
                rows.push(row);
            }
            let config = RunConfig {
                command: "of",
                input,
                args: args_value(&a)?,
            };
            emit(&a.common, &config, started, rows)
        }
        Command::Gamma(a) => {
            let q = quant_config(&a.quant)?;
            let (stats, input) = if a.input.input.is_some() || a.input.synth.is_some() {
                let (set, input) = load_input(&a.input, a.common.seed)?;
                (
                    gamma_stats_tensors(set.iter().map(|(_, e)| &e.tensor), &q)?,
                    input,
                )
            } else {
                let d = parse_distribution(&a.distribution)?;
                (
                    gamma_stats_synthetic(d, a.blocks, &q, a.common.seed)?,
                    InputSource::None,
                )
            };
            let config = RunConfig {
                command: "gamma",
                input,
                args: args_value(&a)?,
            };
            emit(&a.common, &config, started, stats)
        }
        Command::Cltsum(a) => {
            let sampler = match a.mode {
                CltMode::Uniform => DeltaSampler::Uniform,
                CltMode::OnePerLayer => DeltaSampler::OnePerLayer {
                    distribution: parse_distribution(&a.distribution)?,
                    block_size: a.block_size,
                },
                CltMode::MeanOverBlocks => DeltaSampler::MeanOverBlocks {
                    distribution: parse_distribution(&a.distribution)?,
                    block_size: a.block_size,
                    blocks: a.blocks_per_layer,
                },
            };
            let report = cumulative_scale_bias(&CltConfig {
                layers: a.layers,
                trials: a.trials,
                seed: a.common.seed,
                sampler,
            })?;
            let config = RunConfig {
                command: "cltsum",
                input: InputSource::None,
                args: args_value(&a)?,
            };
            emit(&a.common, &config, started, report)
        }
        Command::Temp(a) => {
            let logits = synth_tensor(Distribution::Gaussian, &[a.vocab], a.common.seed)?.data;
            let var = var_delta_ell(&logits)?;
            #[derive(Serialize)]
            struct Row {
                ratio: f64,
                sigma_eta: f64,
                t_eff: f64,
                t_hat: f64,
                rel_error: f64,
                entropy_clean: f64,
                entropy_noisy: f64,
            }
            let mut rows = Vec::new();
            for (i, &r) in a.ratios.iter().enumerate() {
                if !(r >= 0.0 && r.is_finite()) {
                    return Err(Failure::Input(format!(
                        "ratio must be finite and >= 0, got {r}"
                    )));
                }
                let sigma_eta2 = r * var / 2.0;
                let pred = effective_temperature_predict(sigma_eta2, var)?;
                let fit = effective_temperature_fit(
                    &logits,
                    sigma_eta2.sqrt(),
                    a.draws,
                    a.common.seed.wrapping_add(1 + i as u64),
                )?;
                rows.push(Row {
                    ratio: r,
                    sigma_eta: sigma_eta2.sqrt(),
                    t_eff: pred.t_eff,
                    t_hat: fit.t_hat,
                    rel_error: (fit.t_hat - pred.t_eff).abs() / pred.t_eff,
                    entropy_clean: fit.entropy_clean,
                    entropy_noisy: fit.entropy_noisy,
                });
            }
            #[derive(Serialize)]
            struct TempReport {
                vocab: usize,
                var_delta_ell: f64,
                rows: Vec<Row>,
            }
            let config = RunConfig {
                command: "temp",
                input: InputSource::None,
                args: args_value(&a)?,
            };
            emit(
                &a.common,
                &config,
                started,
                TempReport {
                    vocab: a.vocab,
                    var_delta_ell: var,
                    rows,
                },
            )
        }
        Command::Gemm(a) => {
            let q = quant_config(&a.quant)?;
            let m = mbs_config(&a.mbs);
            let (set, input) = load_input(&a.input, a.common.seed)?;
            let activations = match (&a.covariance, &a.activations) {
                (CovMode::Samples, Some(p)) => {
                    let s = load_container(p)?;
                    let (_, e) = s
                        .iter()
                        .next()
                        .ok_or_else(|| Failure::Input("activation container is empty".into()))?;
                    Some(e.tensor.clone())
                }
                (CovMode::Samples, None) => {
                    return Err(Failure::Input(
                        "--covariance samples requires --activations".into(),
                    ))
                }
                _ => None,
            };
            #[derive(Serialize)]
            struct Row {
                name: String,
                #[serde(flatten)]
                gemm: mxdecomp::analysis::GemmPropagation,
            }
            let mut rows = Vec::new();
            for (name, e) in set.iter() {
                let t = &e.tensor;
                if t.shape.len() != 2 {
                    continue;
                }
                let cols = t.shape[1];
                let cov = match a.covariance {
                    CovMode::Isotropic => InputCovariance::Isotropic {
                        variance: a.variance,
                    },
                    // A fixed ramp over [0.5, 1.5).
                    CovMode::Diagonal => InputCovariance::Diagonal {
                        variances: (0..cols)
                            .map(|j| 0.5 + (j as f64 + 0.5) / cols as f64)
                            .collect(),
                    },
                    CovMode::Samples => InputCovariance::SampleSet {
                        samples: activations.clone().expect("checked above"),
                    },
                };
                let g = gemm_error_propagation(
                    t,
                    &q,
                    &cov,
                    a.with_mbs.then_some(&m),
                    a.samples,
                    a.common.seed,
                )?;
                if g.identity_residual > IDENTITY_TOL {
                    return Err(Failure::Invariant(format!(
                        "trace identity residual {:e} on `{name}`",
                        g.identity_residual
                    )));
                }
                rows.push(Row {
                    name: name.clone(),
                    gemm: g,
                });
            }
            if rows.is_empty() {
                return Err(Failure::Input("gemm needs at least one 2-D tensor".into()));
            }
            let config = RunConfig {
                command: "gemm",
                input,
                args: args_value(&a)?,
            };
            emit(&a.common, &config, started, rows)
        }
        Command::Aqn(a) => {
            let schedule = AqnSchedule {
                sigma_start: a.sigma_start,
                sigma_end: a.sigma_end,
                num_stages: a.stages,
                ..AqnSchedule::default()
            };
            let sigmas = schedule.stages()?;
            #[derive(Serialize)]
            struct Stage {
                stage: usize,
                sigma: f64,
                total_noise: Option<f64>,
            }
            let stages: Vec<Stage> = sigmas
                .iter()
                .enumerate()
                .map(|(k, &s)| Stage {
                    stage: k,
                    sigma: s,
                    total_noise: a.sigma_grid.map(|g| total_noise(g, s)),
                })
                .collect();
            let mut input = InputSource::None;
            if let Some(path) = &a.noised_out {
                let sigma = schedule.stage(a.stage)?;
                let (set, src) = load_input(&a.input, a.common.seed)?;
                input = src;
                let mut noised = TensorSet::new();
                for (name, e) in set.iter() {
                    let t = aqn_apply(
                        &e.tensor,
                        sigma,
                        a.common.seed,
                        schedule.multiplier_for(name),
                        name,
                    )?;
                    noised.insert(name.clone(), e.dtype, t)?;
                }
                save_container(&noised, path)?;
            }
            #[derive(Serialize)]
            struct AqnReport {
                schedule: AqnSchedule,
                stages: Vec<Stage>,
            }
            let config = RunConfig {
                command: "aqn",
                input,
                args: args_value(&a)?,
            };
            emit(&a.common, &config, started, AqnReport { schedule, stages })
        }
        Command::Crossterm(a) => {
            let d = parse_distribution(&a.distribution)?;
            let points = cross_term_vs_blocksize(d, &a.block_sizes, a.blocks, a.common.seed)?;
            let config = RunConfig {
                command: "crossterm",
                input: InputSource::None,
                args: args_value(&a)?,
            };
            emit(&a.common, &config, started, points)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Invariant(m)) => {
            eprintln!("invariant violation: {m}");
            ExitCode::from(3)
        }
    }
}
