use crate::config::Config;
use crate::error::{CliResult, Context};
use crate::output::{num, write_manifest, Output};
use crate::setup;
use crate::train::load_dataset;
use difno_core::datagen::JacobianMode;
use difno_core::fno::{FnoModel, FnoParams};
use difno_core::jacobian::{jacobian_in_bases, DiffMode};
use difno_core::losses::{coarse_model_jacobian, derivative_loss, WeightingTensor};
use difno_core::operator::Operator;
use difno_core::persist::mode_bases;
use std::fmt::Write as _;

/// `(e_output, e_derivative)` per sample; `None` where the target norm vanishes or no
/// Jacobian target is stored.
pub type Errors = Vec<(Option<f64>, Option<f64>)>;

pub fn evaluate(model: &FnoModel, cfg: &Config, split: &str) -> CliResult<Errors> {
    let path = setup::dataset_path(cfg, split);
    let data = load_dataset(&path)?;
    model.cfg.check_grid(data.grid).at(path.display())?;
    let w = WeightingTensor::new(setup::loss_weight(cfg)?, data.grid)?;
    let bases = mode_bases(&data.mode, data.grid, model.in_channels(), model.out_channels())?;
    let mut rows = Vec::with_capacity(data.len());
    for (i, s) in data.samples.iter().enumerate() {
        let lin = model.linearize(&s.input).at(format!("sample {i}"))?;
        let den = w.quadratic(&s.output)?.max(0.0).sqrt();
        let num = w.quadratic(&lin.output().sub(&s.output)?)?.max(0.0).sqrt();
        let e_out = (den > 0.0).then(|| num / den);
        let e_der = match (&s.jacobian, &bases) {
            (Some(target), Some((xb, yb))) => {
                let pred = match &data.mode {
                    JacobianMode::Coarse { levels, .. } => coarse_model_jacobian(model, &s.input, levels, xb.as_ref(), yb.as_ref()),
                    _ => jacobian_in_bases(lin.as_ref(), data.grid, xb.as_ref(), yb.as_ref(), DiffMode::Auto),
                }
                .at(format!("sample {i}"))?;
                let den = target.frobenius();
                let num = derivative_loss(&pred, target)?.0.sqrt();
                (den > 0.0).then(|| num / den)
            }
            _ => None,
        };
        rows.push((e_out, e_der));
    }
    Ok(rows)
}

pub fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn metrics_csv(rows: &Errors) -> String {
    let mut s = String::from("sample_id,e_output,e_derivative\n");
    for (i, (o, d)) in rows.iter().enumerate() {
        let _ = writeln!(s, "{i},{},{}", num(*o), num(*d));
    }
    let _ = writeln!(s, "mean,{},{}", num(mean(rows.iter().map(|r| r.0))), num(mean(rows.iter().map(|r| r.1))));
    s
}

pub fn run(cfg: &Config) -> CliResult<()> {
    let split = cfg.choice("eval.split", &["train", "val", "test"])?;
    let model = match cfg.choice("eval.model", &["checkpoint", "zero"])? {
        "checkpoint" => setup::load_model(&setup::checkpoint_or_default(cfg, "eval.checkpoint"))?,
        _ => {
            let fno = setup::fno_config(cfg)?;
            FnoModel::new(fno, FnoParams::zeros(&fno))?
        }
    };
    let rows = evaluate(&model, cfg, split)?;
    let out = Output::new(cfg.out_dir())?;
    out.text("metrics.csv", &metrics_csv(&rows))?;
    write_manifest(&out, "eval", cfg, &format!("split = {split}\nsamples = {}\n", rows.len()))
}
