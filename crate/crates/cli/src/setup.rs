//! Core objects built from a [`Config`].

use crate::config::Config;
use crate::error::{CliError, CliResult, Context};
use difno_core::activations::{GeluLike, Sigmoid};
use difno_core::datagen::{Forcing, GrfSpec, JacobianMode, PdeOperator, PdeSpec, ToyOperator};
use difno_core::fno::{FnoConfig, FnoModel};
use difno_core::jacobian::DiffMode;
use difno_core::losses::WeightVariant;
use difno_core::operator::Operator;
use difno_core::spectral::{GridSpec, SpectralWeight};
use difno_core::training::{checkpoint_load, OptimizerKind, TrainConfig};
use std::path::{Path, PathBuf};

/// Purposes of derived seeds; each gets its own stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Train = 1,
    Val = 2,
    Test = 3,
    Init = 4,
    Shuffle = 5,
    Noise = 6,
}

/// SplitMix64 of `(seed, stream)`.
pub fn derive_seed(seed: u64, stream: Stream) -> u64 {
    let mut z = seed.wrapping_add((stream as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const SPLITS: [(&str, Stream); 3] = [("train", Stream::Train), ("val", Stream::Val), ("test", Stream::Test)];

pub fn split_stream(name: &str) -> CliResult<Stream> {
    SPLITS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s).ok_or_else(|| CliError::config(format!("unknown split `{name}`")))
}

pub fn seed(cfg: &Config) -> CliResult<u64> {
    cfg.u64("seed")
}

pub fn grid(cfg: &Config) -> CliResult<GridSpec> {
    Ok(GridSpec::new(cfg.usize("grid.dim")?, cfg.usize("grid.n")?).at("grid")?)
}

/// Input measure with the seed of one split.
pub fn grf(cfg: &Config, stream: Stream) -> CliResult<GrfSpec> {
    let seed = derive_seed(seed(cfg)?, stream);
    Ok(GrfSpec::new(cfg.f64("grf.omega")?, cfg.f64("grf.rho")?, cfg.f64("grf.tau")?, seed).at("grf")?)
}

pub fn activation(cfg: &Config, key: &str) -> CliResult<GeluLike> {
    Ok(GeluLike::new(match cfg.choice(key, &["gelu", "swish", "gelu-tanh"])? {
        "gelu" => Sigmoid::NormalCdf,
        "swish" => Sigmoid::Logistic,
        _ => Sigmoid::tanh_cubic(),
    }))
}

pub fn fno_config(cfg: &Config) -> CliResult<FnoConfig> {
    let act = activation(cfg, "fno.activation")?;
    Ok(FnoConfig::new(cfg.usize("grid.dim")?, cfg.usize("fno.depth")?, cfg.usize("fno.width")?, cfg.usize("fno.modes")?, 1, 1, act).at("fno")?)
}

pub fn pde_spec(cfg: &Config) -> CliResult<PdeSpec> {
    let mut spec = PdeSpec::new(Forcing::four_bumps(cfg.usize("grid.dim")?));
    spec.newton_tol = cfg.f64("pde.newton_tol")?;
    spec.max_newton = cfg.usize("pde.max_newton")?;
    spec.linear_tol = cfg.f64("pde.linear_tol")?;
    spec.max_linear = cfg.usize("pde.max_linear")?;
    spec.validate().at("pde")?;
    Ok(spec)
}

pub fn toy(cfg: &Config) -> CliResult<ToyOperator> {
    let length = cfg.f64("toy.length")?;
    if !(length >= 0.0) {
        return Err(CliError::config("`toy.length` must be nonnegative"));
    }
    Ok(ToyOperator { length, cutoff: cfg.usize("toy.cutoff")? })
}

pub fn checkpoint_or_default(cfg: &Config, key: &str) -> PathBuf {
    cfg.path(key).unwrap_or_else(|| cfg.out_dir().join("best.difn"))
}

/// The model of a training checkpoint: its best-validation weights.
pub fn load_model(path: &Path) -> CliResult<FnoModel> {
    let (state, fno) = checkpoint_load(path).at(path.display())?;
    Ok(FnoModel::new(fno, state.best_params).at(path.display())?)
}

/// `toy | pde | fno`; `checkpoint_key` locates the FNO.
pub fn operator(cfg: &Config, kind: &str, checkpoint: &Path) -> CliResult<Box<dyn Operator>> {
    Ok(match kind {
        "toy" => Box::new(toy(cfg)?),
        "pde" => Box::new(PdeOperator { spec: pde_spec(cfg)? }),
        "fno" => Box::new(load_model(checkpoint)?),
        other => return Err(CliError::config(format!("unknown operator `{other}`"))),
    })
}

/// The data-generating map named by `operator`.
pub fn truth_operator(cfg: &Config) -> CliResult<Box<dyn Operator>> {
    let kind = cfg.choice("operator", &["toy", "pde", "fno"])?;
    let ckpt = match kind {
        "fno" => cfg.path("operator.checkpoint").ok_or_else(|| CliError::config("operator = fno needs `operator.checkpoint`"))?,
        _ => PathBuf::new(),
    };
    operator(cfg, kind, &ckpt)
}

pub fn input_weight(cfg: &Config) -> CliResult<SpectralWeight> {
    Ok(match cfg.choice("jacobian.x", &["l2", "cm"])? {
        "l2" => SpectralWeight::L2,
        _ => grf(cfg, Stream::Train)?.cameron_martin(),
    })
}

pub fn output_weight(cfg: &Config) -> CliResult<SpectralWeight> {
    let s = cfg.f64("jacobian.y_s")?;
    let w = SpectralWeight::Sobolev { s };
    w.validate().at("jacobian.y_s")?;
    Ok(w)
}

pub fn loss_weight(cfg: &Config) -> CliResult<WeightVariant> {
    Ok(match cfg.choice("train.output_weight", &["l2", "h1", "h1fd"])? {
        "l2" => WeightVariant::LumpedL2,
        "h1" => WeightVariant::Spectral { s: 1.0 },
        _ => WeightVariant::FiniteDifferenceH1,
    })
}

pub fn train_config(cfg: &Config) -> CliResult<TrainConfig> {
    let optimizer = match cfg.choice("train.optimizer", &["adam", "gd", "lbfgs"])? {
        "adam" => OptimizerKind::Adam,
        "gd" => OptimizerKind::GradientDescent,
        _ => OptimizerKind::Lbfgs { memory: cfg.usize("train.lbfgs_memory")? },
    };
    let tc = TrainConfig {
        epochs: cfg.usize("train.epochs")?,
        finetune_epochs: cfg.usize("train.finetune_epochs")?,
        batch_size: cfg.usize("train.batch_size")?,
        lr: cfg.f64("train.lr")?,
        lr_decay: cfg.f64("train.lr_decay")?,
        patience: cfg.usize("train.patience")?,
        plateau_tol: cfg.f64("train.plateau_tol")?,
        derivative_weight: cfg.f64("train.derivative_weight")?,
        partition: cfg.usize("train.partition")?,
        seed: derive_seed(seed(cfg)?, Stream::Shuffle),
        optimizer,
        diff_mode: DiffMode::Auto,
        output_weight: loss_weight(cfg)?,
    };
    tc.validate().at("train")?;
    Ok(tc)
}

/// Short name of a dataset's Jacobian setting.
pub fn mode_name(mode: &JacobianMode) -> &'static str {
    match mode {
        JacobianMode::None => "none",
        JacobianMode::Full { .. } => "full",
        JacobianMode::Reduced { .. } => "reduced",
        JacobianMode::Coarse { .. } => "coarse",
    }
}

pub fn dataset_path(cfg: &Config, split: &str) -> PathBuf {
    cfg.data_dir().join(format!("{split}.difn"))
}
