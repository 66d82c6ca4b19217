use crate::config::Config;
use crate::error::{CliError, CliResult, Context};
use crate::output::{write_manifest, Output};
use crate::setup::{self, Stream, SPLITS};
use difno_core::basis::ModeBasis;
use difno_core::datagen::{generate_dataset, sample_grf_at, Dataset, GrfSpec, JacobianMode};
use difno_core::jacobian::{operator_jacobians, DiffMode};
use difno_core::losses::ResolutionLevels;
use difno_core::operator::Operator;
use difno_core::persist::dataset_to_container;
use difno_core::reduction::{dis_from_jacobians, kle_analytic, pca_in_basis, ReducedBasis};
use difno_core::spectral::{GridFunction, GridSpec};

/// Reduced bases fitted to the training split.
fn reduced_bases(cfg: &Config, op: &dyn Operator, grf: &GrfSpec, grid: GridSpec, count: usize) -> CliResult<(ReducedBasis, ReducedBasis)> {
    let r = cfg.usize("reduction.r")?;
    let input_kind = cfg.choice("reduction.input", &["kle", "pca", "dis"])?;
    let output_kind = cfg.choice("reduction.output", &["pca", "dis"])?;
    if count == 0 {
        return Err(CliError::config("reduced Jacobians need training samples to fit the bases"));
    }
    let inputs: Vec<GridFunction> = (0..count as u64).map(|i| sample_grf_at(grf, grid, i)).collect::<Result<_, _>>()?;
    let xw = setup::input_weight(cfg)?;
    let yw = setup::output_weight(cfg)?;
    let xb = ModeBasis::complete(grid, op.in_channels(), xw)?;
    let yb = ModeBasis::complete(grid, op.out_channels(), yw)?;
    let dis = if input_kind == "dis" || output_kind == "dis" {
        let js = operator_jacobians(op, &inputs, &xb, &yb, DiffMode::Auto).at("reduction.dis")?;
        Some(dis_from_jacobians(&js, &xb, &yb, r, r).at("reduction.dis")?)
    } else {
        None
    };
    let input = match input_kind {
        "kle" => kle_analytic(grf, r, grid, cfg.f64("reduction.kle_power")?).at("reduction.input")?,
        "pca" => pca_in_basis(xb.clone(), &inputs, r).at("reduction.input")?,
        _ => dis.as_ref().map(|d| d.0.clone()).expect("dis bases computed"),
    };
    let output = match output_kind {
        "pca" => {
            let outputs: Vec<GridFunction> = inputs.iter().map(|a| op.apply(a)).collect::<Result<_, _>>()?;
            pca_in_basis(yb, &outputs, r).at("reduction.output")?
        }
        _ => dis.map(|d| d.1).expect("dis bases computed"),
    };
    Ok((input, output))
}

pub fn jacobian_mode(cfg: &Config, op: &dyn Operator, grid: GridSpec) -> CliResult<JacobianMode> {
    Ok(match cfg.choice("jacobian", &["none", "full", "reduced", "coarse"])? {
        "none" => JacobianMode::None,
        "full" => JacobianMode::Full { x: setup::input_weight(cfg)?, y: setup::output_weight(cfg)? },
        "reduced" => {
            let (input, output) = reduced_bases(cfg, op, &setup::grf(cfg, Stream::Train)?, grid, cfg.usize("data.train")?)?;
            JacobianMode::Reduced { input, output }
        }
        _ => {
            let dim = grid.dim();
            let eval = GridSpec::new(dim, cfg.usize("coarse.eval_n")?).at("coarse.eval_n")?;
            let basis = GridSpec::new(dim, cfg.usize("coarse.basis_n")?).at("coarse.basis_n")?;
            JacobianMode::Coarse {
                levels: ResolutionLevels::new(grid, eval, basis).at("coarse")?,
                x: setup::input_weight(cfg)?,
                y: setup::output_weight(cfg)?,
                native: cfg.bool("coarse.native")?,
            }
        }
    })
}

pub fn run(cfg: &Config) -> CliResult<()> {
    let grid = setup::grid(cfg)?;
    let op = setup::truth_operator(cfg)?;
    let mode = jacobian_mode(cfg, op.as_ref(), grid)?;
    let out = Output::new(cfg.out_dir())?;
    let mut notes = String::new();
    for (split, stream) in SPLITS {
        let count = cfg.usize(&format!("data.{split}"))?;
        let grf = setup::grf(cfg, stream)?;
        let (samples, manifest) = generate_dataset(op.as_ref(), &grf, grid, 0, count, &mode).at(format!("split {split}"))?;
        let data = Dataset::new(grid, mode.clone(), samples)?;
        out.container(&format!("{split}.difn"), &dataset_to_container(&data)?)?;
        notes.push_str(&format!("[{split}]\n{manifest}"));
    }
    write_manifest(&out, "gen-data", cfg, &notes)
}
