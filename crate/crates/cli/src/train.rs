use crate::config::Config;
use crate::error::{CliError, CliResult, Context};
use crate::output::{load_container, write_manifest, Output};
use crate::setup::{self, Stream};
use difno_core::datagen::{Dataset, JacobianMode};
use difno_core::fno::FnoParams;
use difno_core::persist::dataset_from_container;
use difno_core::training::{checkpoint_load, checkpoint_to_container, DerivativeMode, Trainer, TrainState};
use std::path::Path;

pub fn load_dataset(path: &Path) -> CliResult<Dataset> {
    dataset_from_container(&load_container(path)?).at(path.display())
}

fn derivative_mode(data: &Dataset, path: &Path) -> CliResult<DerivativeMode> {
    Ok(match data.mode {
        JacobianMode::Full { .. } => DerivativeMode::Full,
        JacobianMode::Reduced { .. } => DerivativeMode::Reduced,
        JacobianMode::Coarse { .. } => DerivativeMode::MixedRes,
        JacobianMode::None => {
            return Err(CliError::config(format!(
                "{}: missing record `J_0`; train.mode = dino needs Jacobian targets (dataset generated with jacobian = none)",
                path.display()
            )))
        }
    })
}

pub fn run(cfg: &Config, resume: Option<&Path>) -> CliResult<()> {
    let tc = setup::train_config(cfg)?;
    let fno = setup::fno_config(cfg)?;
    let train_path = setup::dataset_path(cfg, "train");
    let val_path = setup::dataset_path(cfg, "val");
    let train = load_dataset(&train_path)?;
    let val = load_dataset(&val_path)?;
    fno.check_grid(train.grid).at("fno.modes")?;
    let derivative = match cfg.choice("train.mode", &["fno", "dino"])? {
        "fno" => None,
        _ => Some(derivative_mode(&train, &train_path)?),
    };
    let val = (!val.is_empty()).then_some(&val);
    let trainer = Trainer::new(tc, fno, &train, val, derivative).at(train_path.display())?;
    let mut state: TrainState = match resume {
        Some(p) => {
            let (state, saved) = checkpoint_load(p).at(p.display())?;
            if saved != fno {
                return Err(CliError::config(format!("{}: checkpoint architecture differs from the configured `fno.*`", p.display())));
            }
            if state.seed != tc.seed {
                return Err(CliError::config(format!("{}: checkpoint was trained under a different seed", p.display())));
            }
            state
        }
        None => trainer.init_state(FnoParams::init(&fno, setup::derive_seed(setup::seed(cfg)?, Stream::Init)))?,
    };
    let stop = match cfg.usize("train.stop_at")? {
        0 => usize::MAX,
        n => n,
    };
    trainer.run_until(&mut state, stop)?;
    let out = Output::new(cfg.out_dir())?;
    out.text("history.csv", &state.history.to_csv())?;
    out.container("checkpoint.difn", &checkpoint_to_container(&state, &fno)?)?;
    let mut best = state.clone();
    best.params = state.best_params.clone();
    out.container("best.difn", &checkpoint_to_container(&best, &fno)?)?;
    let notes = format!(
        "epochs_completed = {}\nbudget = {}\nfinished = {}\nresumed_from = {}\n",
        state.epoch,
        tc.total_epochs(),
        trainer.is_done(&state),
        resume.map(|p| p.display().to_string()).unwrap_or_default()
    );
    write_manifest(&out, "train", cfg, &notes)
}
