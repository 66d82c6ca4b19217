//! Output-only and derivative-informed training of FNO weights.

use crate::basis::Basis;
use crate::container::TensorContainer;
use crate::datagen::{Dataset, JacobianMode};
use crate::error::{invalid, Error, Result};
use crate::fno::{forward, param_grad, tangent, tangent_param_grad, vjp, FnoConfig, FnoModel, FnoParams, Tape};
use crate::jacobian::DiffMode;
use crate::losses::{output_loss, ResolutionLevels, WeightVariant, WeightingTensor};
use crate::optim::{descent_step, Adam, DescentState, LineSearchOptions, Method};
use crate::persist::{self, get_fno_params, put_fno_params};
use crate::spectral::{GridFunction, GridSpec};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt::Write as _;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    /// Full-batch backtracking gradient descent, one step per epoch.
    GradientDescent,
    /// Full-batch L-BFGS, one line-searched iteration per epoch.
    Lbfgs { memory: usize },
}

/// How the derivative term is evaluated; must agree with the dataset's Jacobian targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DerivativeMode {
    Full,
    Reduced,
    MixedRes,
}

impl DerivativeMode {
    fn check(&self, mode: &JacobianMode) -> Result<()> {
        let ok = matches!(
            (self, mode),
            (DerivativeMode::Full, JacobianMode::Full { .. })
                | (DerivativeMode::Reduced, JacobianMode::Reduced { .. })
                | (DerivativeMode::MixedRes, JacobianMode::Coarse { .. })
        );
        if ok {
            Ok(())
        } else {
            invalid(format!("derivative mode {self:?} does not match dataset Jacobians `{}`", mode.label()))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    /// Output-only epochs; the warm start of derivative-informed training.
    pub epochs: usize,
    /// Epochs appended after the warm start. Derivative-informed runs add the derivative
    /// term here; output-only runs continue unchanged, so both use the same budget.
    pub finetune_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub patience: usize,
    /// Relative improvement of the monitored loss that resets the plateau counter.
    pub plateau_tol: f64,
    pub derivative_weight: f64,
    /// Jacobian columns (or rows, on the reverse branch) per accumulation chunk; 0 keeps all.
    pub partition: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub diff_mode: DiffMode,
    pub output_weight: WeightVariant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            finetune_epochs: 300,
            batch_size: 32,
            lr: 1e-3,
            lr_decay: 0.1,
            patience: 25,
            plateau_tol: 1e-4,
            derivative_weight: 1.0,
            partition: 0,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            diff_mode: DiffMode::Auto,
            output_weight: WeightVariant::LumpedL2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return invalid("batch size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return invalid("learning rate must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return invalid("learning-rate decay must lie in (0, 1]");
        }
        if self.patience == 0 {
            return invalid("plateau patience must be positive");
        }
        if !(self.plateau_tol >= 0.0 && self.derivative_weight >= 0.0 && self.derivative_weight.is_finite()) {
            return invalid("plateau tolerance and derivative weight must be nonnegative");
        }
        if let OptimizerKind::Lbfgs { memory: 0 } = self.optimizer {
            return invalid("L-BFGS memory must be positive");
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.epochs + self.finetune_epochs
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Whether the derivative term was active.
    pub derivative_phase: bool,
    pub output_loss: f64,
    pub derivative_loss: f64,
    pub val_output: f64,
    /// Present when validation Jacobians were evaluated this epoch.
    pub val_derivative: Option<f64>,
    pub lr: f64,
    /// Best validation output loss so far.
    pub best_val_output: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,phase,output_loss,derivative_loss,val_output_loss,val_derivative_loss,lr,best_val_output_loss\n");
        for r in &self.records {
            let vd = r.val_derivative.map(|v| format!("{v:e}")).unwrap_or_default();
            let phase = if r.derivative_phase { "dino" } else { "output" };
            let _ = writeln!(
                s,
                "{},{phase},{:e},{:e},{:e},{vd},{:e},{:e}",
                r.epoch, r.output_loss, r.derivative_loss, r.val_output, r.lr, r.best_val_output
            );
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: FnoParams,
    pub adam: Adam,
    pub descent: DescentState,
    /// Epochs completed.
    pub epoch: usize,
    pub lr: f64,
    pub best_params: FnoParams,
    /// Best monitored validation loss of the current phase.
    pub best_monitor: f64,
    pub best_val_output: f64,
    pub stale_epochs: usize,
    pub seed: u64,
    pub history: History,
}

impl TrainState {
    pub fn new(params: FnoParams, cfg: &TrainConfig) -> Self {
        let n = params.flat_len();
        Self {
            best_params: params.clone(),
            params,
            adam: Adam::new(n),
            descent: DescentState::default(),
            epoch: 0,
            lr: cfg.lr,
            best_monitor: f64::INFINITY,
            best_val_output: f64::INFINITY,
            stale_epochs: 0,
            seed: cfg.seed,
            history: History::default(),
        }
    }
}

/// Shuffling stream of one epoch; depends only on the seed and the epoch index.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(epoch as u64 + 1);
    r
}

/// Everything needed to evaluate per-sample terms of one dataset.
struct Setting {
    w: WeightingTensor,
    bases: Option<(Box<dyn Basis>, Box<dyn Basis>)>,
    levels: Option<ResolutionLevels>,
}

impl Setting {
    fn new(data: &Dataset, fno: &FnoConfig, variant: WeightVariant) -> Result<Self> {
        let w = WeightingTensor::new(variant, data.grid)?;
        let bases = persist::mode_bases(&data.mode, data.grid, fno.in_channels, fno.out_channels)?;
        let levels = match &data.mode {
            JacobianMode::Coarse { levels, .. } => Some(*levels),
            _ => None,
        };
        Ok(Self { w, bases, levels })
    }

    fn eval_grid(&self, grid: GridSpec) -> GridSpec {
        self.levels.map_or(grid, |l| l.eval)
    }
}

/// Per-sample `(output loss, derivative loss)` and, when `grad` is given, `scale` times
/// the weight gradient of `output + λ·derivative` accumulated into it.
#[allow(clippy::too_many_arguments)]
fn sample_terms(
    params: &FnoParams,
    fno: &FnoConfig,
    a: &GridFunction,
    u: &GridFunction,
    target: Option<&crate::jacobian::JacobianMatrix>,
    setting: &Setting,
    lambda: f64,
    cfg: &TrainConfig,
    scale: f64,
    grad: Option<&mut FnoParams>,
) -> Result<(f64, f64)> {
    let (pred, tape) = forward(params, fno, a)?;
    let (lo, gu) = output_loss(&pred, u, &setting.w)?;
    let mut grad = grad;
    if let Some(g) = grad.as_deref_mut() {
        g.axpy(scale, &param_grad(params, fno, &tape, &gu)?);
    }
    if lambda == 0.0 {
        return Ok((lo, 0.0));
    }
    let (Some(target), Some((xb, yb))) = (target, setting.bases.as_ref()) else {
        return Ok((lo, 0.0));
    };
    let eval = setting.eval_grid(a.grid());
    let coarse_tape;
    let tape = if eval != a.grid() {
        coarse_tape = forward(params, fno, &a.subsample(eval)?)?.1;
        &coarse_tape
    } else {
        &tape
    };
    let ld = derivative_terms(params, fno, tape, target, xb.as_ref(), yb.as_ref(), cfg, lambda * scale, grad)?;
    Ok((lo, ld))
}

/// `‖J(a) − J̃‖²_F` and its weight gradient times `scale`, accumulated chunk by chunk.
#[allow(clippy::too_many_arguments)]
fn derivative_terms(
    params: &FnoParams,
    fno: &FnoConfig,
    tape: &Tape,
    target: &crate::jacobian::JacobianMatrix,
    xb: &dyn Basis,
    yb: &dyn Basis,
    cfg: &TrainConfig,
    scale: f64,
    grad: Option<&mut FnoParams>,
) -> Result<f64> {
    let grid = tape.grid();
    let (rows, cols) = (yb.len(), xb.len());
    if target.rows != rows || target.cols != cols || target.in_tag != xb.tag() || target.out_tag != yb.tag() {
        return Err(Error::BasisMismatch { expected: format!("{} -> {}", xb.tag(), yb.tag()), found: format!("{} -> {}", target.in_tag, target.out_tag) });
    }
    let forward_branch = match cfg.diff_mode {
        DiffMode::Forward => true,
        DiffMode::Reverse => false,
        DiffMode::Auto => cols <= rows,
    };
    let count = if forward_branch { cols } else { rows };
    let chunk = if cfg.partition == 0 { count.max(1) } else { cfg.partition };
    let mut total = 0.0;
    let mut grad = grad;
    let psis: Vec<GridFunction> = if forward_branch { Vec::new() } else { (0..cols).map(|k| xb.synthesize(k, grid)).collect::<Result<_>>()? };
    for start in (0..count).step_by(chunk) {
        let mut acc = grad.as_ref().map(|_| FnoParams::zeros(fno));
        for idx in start..(start + chunk).min(count) {
            if forward_branch {
                let tan = tangent(params, fno, tape, &xb.synthesize(idx, grid)?)?;
                let col = yb.analyze(&tan.output(grid, fno.out_channels))?;
                let d: Vec<f64> = col.iter().enumerate().map(|(j, c)| c - target.get(j, idx)).collect();
                total += d.iter().map(|x| x * x).sum::<f64>();
                if let Some(acc) = acc.as_mut() {
                    let dd: Vec<f64> = d.iter().map(|x| 2.0 * scale * x).collect();
                    tangent_param_grad(params, fno, tape, &tan, &yb.analyze_adjoint(&dd, grid)?, None, acc)?;
                }
            } else {
                let mut e = vec![0.0; rows];
                e[idx] = 1.0;
                let aj = yb.analyze_adjoint(&e, grid)?;
                let abar = vjp(params, fno, tape, &aj)?;
                let d: Vec<f64> = psis
                    .iter()
                    .enumerate()
                    .map(|(k, psi)| abar.values().iter().zip(psi.values()).map(|(x, y)| x * y).sum::<f64>() - target.get(idx, k))
                    .collect();
                total += d.iter().map(|x| x * x).sum::<f64>();
                if let Some(acc) = acc.as_mut() {
                    let dd: Vec<f64> = d.iter().map(|x| 2.0 * scale * x).collect();
                    let tan = tangent(params, fno, tape, &xb.combine(&dd, grid)?)?;
                    tangent_param_grad(params, fno, tape, &tan, &aj, None, acc)?;
                }
            }
        }
        if let (Some(g), Some(acc)) = (grad.as_deref_mut(), acc) {
            g.axpy(1.0, &acc);
        }
    }
    Ok(total)
}

/// Mean losses and gradient over `indices`, reduced in index order.
fn batch_gradient(
    params: &FnoParams,
    fno: &FnoConfig,
    data: &Dataset,
    indices: &[usize],
    setting: &Setting,
    lambda: f64,
    cfg: &TrainConfig,
) -> Result<(f64, f64, FnoParams)> {
    let scale = 1.0 / indices.len() as f64;
    let parts = indices
        .par_iter()
        .map(|&i| {
            let s = &data.samples[i];
            let mut g = FnoParams::zeros(fno);
            let (lo, ld) = sample_terms(params, fno, &s.input, &s.output, s.jacobian.as_ref(), setting, lambda, cfg, scale, Some(&mut g))?;
            Ok((lo, ld, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grad = FnoParams::zeros(fno);
    let (mut lo, mut ld) = (0.0, 0.0);
    for (o, d, g) in &parts {
        lo += o * scale;
        ld += d * scale;
        grad.axpy(1.0, g);
    }
    grad.symmetrize(fno);
    Ok((lo, ld, grad))
}

/// Mean `(output, derivative)` losses over a dataset without gradients.
pub fn evaluate_losses(params: &FnoParams, fno: &FnoConfig, data: &Dataset, variant: WeightVariant, with_derivative: bool) -> Result<(f64, Option<f64>)> {
    let setting = Setting::new(data, fno, variant)?;
    let cfg = TrainConfig { diff_mode: DiffMode::Auto, ..TrainConfig::default() };
    let lambda = if with_derivative && data.has_jacobians() { 1.0 } else { 0.0 };
    let parts = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let s = &data.samples[i];
            sample_terms(params, fno, &s.input, &s.output, s.jacobian.as_ref(), &setting, lambda, &cfg, 1.0, None)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = data.len().max(1) as f64;
    let lo = parts.iter().map(|p| p.0 / n).sum();
    let ld = parts.iter().map(|p| p.1 / n).sum();
    Ok((lo, (lambda > 0.0).then_some(ld)))
}

/// A training run over fixed data; each call to [`Trainer::step`] performs one epoch.
pub struct Trainer<'a> {
    pub cfg: TrainConfig,
    pub fno: FnoConfig,
    train: &'a Dataset,
    val: Option<&'a Dataset>,
    derivative: Option<DerivativeMode>,
    train_setting: Setting,
    val_setting: Option<Setting>,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig, fno: FnoConfig, train: &'a Dataset, val: Option<&'a Dataset>, derivative: Option<DerivativeMode>) -> Result<Self> {
        cfg.validate()?;
        fno.validate()?;
        if train.is_empty() {
            return invalid("training set is empty");
        }
        if let Some(mode) = derivative {
            if !train.has_jacobians() {
                return Err(Error::Format { field: "J_0".into(), detail: "derivative-informed training needs Jacobian records".into() });
            }
            mode.check(&train.mode)?;
            if let Some(v) = val {
                if v.has_jacobians() {
                    mode.check(&v.mode)?;
                }
            }
        }
        let train_setting = Setting::new(train, &fno, cfg.output_weight)?;
        let val_setting = val.map(|v| Setting::new(v, &fno, cfg.output_weight)).transpose()?;
        Ok(Self { cfg, fno, train, val, derivative, train_setting, val_setting })
    }

    pub fn init_state(&self, params: FnoParams) -> Result<TrainState> {
        params.check(&self.fno)?;
        Ok(TrainState::new(params, &self.cfg))
    }

    fn lambda_at(&self, epoch: usize) -> f64 {
        match self.derivative {
            Some(_) if epoch >= self.cfg.epochs => self.cfg.derivative_weight,
            _ => 0.0,
        }
    }

    pub fn is_done(&self, state: &TrainState) -> bool {
        state.epoch >= self.cfg.total_epochs()
    }

    /// One epoch. On error `state` is left at the last completed epoch.
    pub fn step(&self, state: &mut TrainState) -> Result<EpochRecord> {
        let epoch = state.epoch;
        let lambda = self.lambda_at(epoch);
        let mut next = state.clone();
        if lambda > 0.0 && epoch == self.cfg.epochs {
            // The derivative-informed phase monitors a different loss.
            next.best_monitor = f64::INFINITY;
            next.stale_epochs = 0;
        }
        let (lo, ld) = match self.cfg.optimizer {
            OptimizerKind::Adam => self.adam_epoch(&mut next, epoch, lambda)?,
            OptimizerKind::GradientDescent => self.line_search_epoch(&mut next, lambda, Method::GradientDescent)?,
            OptimizerKind::Lbfgs { memory } => self.line_search_epoch(&mut next, lambda, Method::Lbfgs { memory })?,
        };
        if !(lo.is_finite() && ld.is_finite()) {
            return Err(Error::Numeric(format!("non-finite training loss at epoch {epoch}")));
        }
        let (val_output, val_derivative) = match (self.val, &self.val_setting) {
            (Some(v), Some(vs)) => {
                let with_der = lambda > 0.0 && v.has_jacobians();
                let parts = (0..v.len())
                    .into_par_iter()
                    .map(|i| {
                        let s = &v.samples[i];
                        let l = if with_der { 1.0 } else { 0.0 };
                        sample_terms(&next.params, &self.fno, &s.input, &s.output, s.jacobian.as_ref(), vs, l, &self.cfg, 1.0, None)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let n = v.len().max(1) as f64;
                let vo: f64 = parts.iter().map(|p| p.0 / n).sum();
                let vd: f64 = parts.iter().map(|p| p.1 / n).sum();
                (vo, with_der.then_some(vd))
            }
            _ => (lo, (lambda > 0.0).then_some(ld)),
        };
        if !val_output.is_finite() || val_derivative.is_some_and(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite validation loss at epoch {epoch}")));
        }
        let monitor = val_output + lambda * val_derivative.unwrap_or(0.0);
        if monitor < next.best_monitor * (1.0 - self.cfg.plateau_tol) || next.best_monitor.is_infinite() {
            next.best_monitor = monitor;
            next.best_params = next.params.clone();
            next.stale_epochs = 0;
        } else {
            next.stale_epochs += 1;
            if next.stale_epochs >= self.cfg.patience {
                next.lr *= self.cfg.lr_decay;
                next.stale_epochs = 0;
            }
        }
        next.best_val_output = next.best_val_output.min(val_output);
        let record = EpochRecord {
            epoch,
            derivative_phase: lambda > 0.0,
            output_loss: lo,
            derivative_loss: ld,
            val_output,
            val_derivative,
            lr: next.lr,
            best_val_output: next.best_val_output,
        };
        next.history.records.push(record.clone());
        next.epoch += 1;
        *state = next;
        Ok(record)
    }

    fn adam_epoch(&self, state: &mut TrainState, epoch: usize, lambda: f64) -> Result<(f64, f64)> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut epoch_rng(state.seed, epoch));
        let (mut lo, mut ld) = (0.0, 0.0);
        let n = order.len() as f64;
        for batch in order.chunks(self.cfg.batch_size) {
            let (o, d, g) = batch_gradient(&state.params, &self.fno, self.train, batch, &self.train_setting, lambda, &self.cfg)?;
            if !(o.is_finite() && d.is_finite()) {
                return Err(Error::Numeric(format!("non-finite batch loss at epoch {epoch}")));
            }
            lo += o * batch.len() as f64 / n;
            ld += d * batch.len() as f64 / n;
            let mut flat = state.params.to_flat();
            state.adam.step(&mut flat, &g.to_flat(), state.lr)?;
            state.params.assign_flat(&flat)?;
            state.params.symmetrize(&self.fno);
        }
        Ok((lo, ld))
    }

    fn line_search_epoch(&self, state: &mut TrainState, lambda: f64, method: Method) -> Result<(f64, f64)> {
        let all: Vec<usize> = (0..self.train.len()).collect();
        let (lo, ld, g) = batch_gradient(&state.params, &self.fno, self.train, &all, &self.train_setting, lambda, &self.cfg)?;
        let fx = lo + lambda * ld;
        let mut objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let mut p = FnoParams::from_flat(&self.fno, x)?;
            p.symmetrize(&self.fno);
            let (o, d, g) = batch_gradient(&p, &self.fno, self.train, &all, &self.train_setting, lambda, &self.cfg)?;
            Ok((o + lambda * d, g.to_flat()))
        };
        let opts = LineSearchOptions::default();
        let step = descent_step(&mut objective, &state.params.to_flat(), fx, &g.to_flat(), method, &mut state.descent, &opts, &|v| v.to_vec())?;
        if let Some((x, _, _)) = step {
            state.params.assign_flat(&x)?;
            state.params.symmetrize(&self.fno);
        }
        Ok((lo, ld))
    }

    /// Epochs until `until` (or the configured budget) are complete.
    pub fn run_until(&self, state: &mut TrainState, until: usize) -> Result<()> {
        while state.epoch < until.min(self.cfg.total_epochs()) {
            self.step(state)?;
        }
        Ok(())
    }

    pub fn run(&self, state: &mut TrainState) -> Result<()> {
        self.run_until(state, usize::MAX)
    }
}

/// Output-only training for the full epoch budget.
pub fn train_output_only(cfg: &TrainConfig, model: &FnoModel, train: &Dataset, val: Option<&Dataset>) -> Result<TrainState> {
    let t = Trainer::new(*cfg, model.cfg, train, val, None)?;
    let mut s = t.init_state(model.params.clone())?;
    t.run(&mut s)?;
    Ok(s)
}

/// Output-only warm start followed by derivative-informed fine-tuning.
pub fn train_dino(cfg: &TrainConfig, model: &FnoModel, train: &Dataset, val: Option<&Dataset>, mode: DerivativeMode) -> Result<TrainState> {
    let t = Trainer::new(*cfg, model.cfg, train, val, Some(mode))?;
    let mut s = t.init_state(model.params.clone())?;
    t.run(&mut s)?;
    Ok(s)
}

/// Mean `(output, derivative)` terms over the whole dataset and the weight gradient of
/// `output + λ·derivative`, as used by one full-batch step.
pub fn full_gradient(cfg: &TrainConfig, fno: &FnoConfig, params: &FnoParams, data: &Dataset, lambda: f64) -> Result<(f64, f64, FnoParams)> {
    let setting = Setting::new(data, fno, cfg.output_weight)?;
    let all: Vec<usize> = (0..data.len()).collect();
    batch_gradient(params, fno, data, &all, &setting, lambda, cfg)
}

const CHECKPOINT_KIND: &str = "train-state";

pub fn checkpoint_to_container(state: &TrainState, fno: &FnoConfig) -> Result<TensorContainer> {
    let mut c = TensorContainer::new();
    persist::put_text(&mut c, "kind", CHECKPOINT_KIND)?;
    persist::put_fno_config(&mut c, "fno", fno)?;
    put_fno_params(&mut c, "params", fno, &state.params)?;
    put_fno_params(&mut c, "best", fno, &state.best_params)?;
    let n = state.adam.m.len();
    c.push_f64("adam.m", &[n], state.adam.m.clone())?;
    c.push_f64("adam.v", &[n], state.adam.v.clone())?;
    c.push_scalar("adam.t", state.adam.t as f64)?;
    c.push_scalar("descent.step0", state.descent.step0)?;
    let pairs = &state.descent.pairs;
    c.push_f64("descent.s", &[pairs.len(), n], pairs.iter().flat_map(|p| p.0.clone()).collect())?;
    c.push_f64("descent.y", &[pairs.len(), n], pairs.iter().flat_map(|p| p.1.clone()).collect())?;
    c.push_f64("descent.rho", &[pairs.len()], pairs.iter().map(|p| p.2).collect())?;
    c.push_scalar("epoch", state.epoch as f64)?;
    c.push_scalar("lr", state.lr)?;
    c.push_scalar("best_monitor", state.best_monitor)?;
    c.push_scalar("best_val_output", state.best_val_output)?;
    c.push_scalar("stale_epochs", state.stale_epochs as f64)?;
    // Seeds above 2^53 do not survive an f64, so store the two halves.
    c.push_f64("seed", &[2], vec![(state.seed >> 32) as f64, (state.seed & 0xffff_ffff) as f64])?;
    let h = &state.history.records;
    let cols: [(&str, fn(&EpochRecord) -> f64); 8] = [
        ("epoch", |r| r.epoch as f64),
        ("phase", |r| if r.derivative_phase { 1.0 } else { 0.0 }),
        ("output_loss", |r| r.output_loss),
        ("derivative_loss", |r| r.derivative_loss),
        ("val_output", |r| r.val_output),
        ("val_derivative", |r| r.val_derivative.unwrap_or(f64::NAN)),
        ("lr", |r| r.lr),
        ("best_val_output", |r| r.best_val_output),
    ];
    for (name, f) in cols {
        c.push_f64(format!("history.{name}"), &[h.len()], h.iter().map(f).collect())?;
    }
    Ok(c)
}

pub fn checkpoint_from_container(c: &TensorContainer) -> Result<(TrainState, FnoConfig)> {
    let kind = persist::get_text(c, "kind")?;
    if kind != CHECKPOINT_KIND {
        return Err(Error::Format { field: "kind".into(), detail: format!("expected `{CHECKPOINT_KIND}`, found `{kind}`") });
    }
    let fno = persist::get_fno_config(c, "fno")?;
    let params = get_fno_params(c, "params", &fno)?;
    let best_params = get_fno_params(c, "best", &fno)?;
    let n = params.flat_len();
    let count = |name: &str| -> Result<usize> {
        let v = c.scalar(name)?;
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::Format { field: name.into(), detail: "expected a count".into() })
        }
    };
    let adam = Adam { m: c.f64_len("adam.m", n)?.to_vec(), v: c.f64_len("adam.v", n)?.to_vec(), t: count("adam.t")? as u64 };
    let (_, rho) = c.f64("descent.rho")?;
    let s = c.f64_len("descent.s", rho.len() * n)?;
    let y = c.f64_len("descent.y", rho.len() * n)?;
    let pairs = (0..rho.len()).map(|i| (s[i * n..(i + 1) * n].to_vec(), y[i * n..(i + 1) * n].to_vec(), rho[i])).collect();
    let seed = c.f64_len("seed", 2)?;
    let seed = ((seed[0] as u64) << 32) | seed[1] as u64;
    let (_, epochs) = c.f64("history.epoch")?;
    let m = epochs.len();
    let col = |name: &str| c.f64_len(&format!("history.{name}"), m);
    let (phase, lo, ld, vo, vd, lr, bv) = (col("phase")?, col("output_loss")?, col("derivative_loss")?, col("val_output")?, col("val_derivative")?, col("lr")?, col("best_val_output")?);
    let records = (0..m)
        .map(|i| EpochRecord {
            epoch: epochs[i] as usize,
            derivative_phase: phase[i] != 0.0,
            output_loss: lo[i],
            derivative_loss: ld[i],
            val_output: vo[i],
            val_derivative: (!vd[i].is_nan()).then_some(vd[i]),
            lr: lr[i],
            best_val_output: bv[i],
        })
        .collect();
    let state = TrainState {
        params,
        adam,
        descent: DescentState { pairs, step0: c.scalar("descent.step0")? },
        epoch: count("epoch")?,
        lr: c.scalar("lr")?,
        best_params,
        best_monitor: c.scalar("best_monitor")?,
        best_val_output: c.scalar("best_val_output")?,
        stale_epochs: count("stale_epochs")?,
        seed,
        history: History { records },
    };
    Ok((state, fno))
}

pub fn checkpoint_save(state: &TrainState, fno: &FnoConfig, path: impl AsRef<std::path::Path>) -> Result<()> {
    checkpoint_to_container(state, fno)?.save(path)
}

pub fn checkpoint_load(path: impl AsRef<std::path::Path>) -> Result<(TrainState, FnoConfig)> {
    checkpoint_from_container(&TensorContainer::load(path)?)
}
