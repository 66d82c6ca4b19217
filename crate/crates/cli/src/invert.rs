use crate::config::Config;
use crate::error::{CliError, CliResult, Context};
use crate::output::{load_container, num, write_manifest, Output};
use crate::setup::{self, Stream};
use difno_core::basis::ModeBasis;
use difno_core::container::TensorContainer;
use difno_core::datagen::sample_grf_at;
use difno_core::inverse::{
    compare_to_reference, residual_bound_eval, solve_inverse, strided_observations, synthesize_data, InverseMethod, InverseSpec, OptReport,
    SolveOptions,
};
use difno_core::persist::{get_grid_function, put_grid_function};
use difno_core::spectral::{GridFunction, SpectralWeight};
use std::fmt::Write as _;

fn regularization(cfg: &Config) -> CliResult<SpectralWeight> {
    Ok(match cfg.choice("inverse.regularization", &["cm", "l2", "h1"])? {
        "cm" => setup::grf(cfg, Stream::Test)?.cameron_martin(),
        "l2" => SpectralWeight::L2,
        _ => SpectralWeight::Sobolev { s: 1.0 },
    })
}

pub fn run(cfg: &Config) -> CliResult<()> {
    let grid = setup::grid(cfg)?;
    let forward_kind = cfg.choice("inverse.forward", &["pde", "toy", "fno"])?;
    let forward = setup::operator(cfg, forward_kind, &setup::checkpoint_or_default(cfg, "inverse.checkpoint"))?;
    let truth_kind = cfg.choice("operator", &["toy", "pde", "fno"])?;
    let truth = setup::truth_operator(cfg)?;
    let a_true = sample_grf_at(&setup::grf(cfg, Stream::Test)?, grid, cfg.u64("inverse.truth_index")?)?;
    let observations = strided_observations(grid, cfg.usize("inverse.stride")?);
    let (data, gamma) = match cfg.path("inverse.observations") {
        Some(p) => {
            let c = load_container(&p)?;
            let y = c.f64_len("y_obs", observations.len()).at(p.display())?.to_vec();
            (y, c.scalar("gamma").at(p.display())?)
        }
        None => {
            let noise = cfg.f64("inverse.noise")?;
            if !(noise > 0.0) {
                return Err(CliError::config("`inverse.noise` must be positive (it sets the noise scale γ)"));
            }
            synthesize_data(truth.as_ref(), &a_true, &observations, noise, setup::derive_seed(setup::seed(cfg)?, Stream::Noise))
                .at("synthesizing observations")?
        }
    };
    let spec = InverseSpec { observations: observations.clone(), gamma, beta: cfg.f64("inverse.beta")?, regularization: regularization(cfg)?, data };
    spec.validate(grid.len()).at("inverse")?;
    let a0 = match cfg.choice("inverse.a0", &["zero", "truth"])? {
        "zero" => GridFunction::zeros(grid, 1),
        _ => a_true.clone(),
    };
    let method = match cfg.choice("inverse.method", &["lbfgs", "gd"])? {
        "lbfgs" => InverseMethod::Lbfgs,
        _ => InverseMethod::GradientDescent,
    };
    let opts = SolveOptions { max_iterations: cfg.usize("inverse.max_iterations")?, tol: cfg.f64("inverse.tol")?, memory: cfg.usize("inverse.memory")? };
    let mut report: OptReport = solve_inverse(&spec, forward.as_ref(), &a0, method, &opts).at("inverse solve")?;
    if forward_kind != truth_kind {
        let xb = ModeBasis::complete(grid, 1, spec.regularization)?;
        let yb = ModeBasis::complete(grid, 1, SpectralWeight::L2)?;
        let b = residual_bound_eval(&spec, truth.as_ref(), forward.as_ref(), &report.minimizer, &xb, &yb).at("surrogate errors")?;
        report.surrogate_errors = Some((b.e0, b.e1));
        report.bound = Some(b);
    }
    if let Some(p) = cfg.path("inverse.reference") {
        let c = load_container(&p)?;
        let reference = get_grid_function(&c, "a_dagger", grid, 1).at(p.display())?;
        report.reference_error = Some(compare_to_reference(&report.minimizer, &reference).at(p.display())?);
    }
    let error_vs_truth = compare_to_reference(&report.minimizer, &a_true)?;

    let out = Output::new(cfg.out_dir())?;
    let mut c = TensorContainer::new();
    put_grid_function(&mut c, "a_dagger", &report.minimizer)?;
    put_grid_function(&mut c, "a_true", &a_true)?;
    put_grid_function(&mut c, "a0", &a0)?;
    put_grid_function(&mut c, "pointwise_error", &report.minimizer.sub(&a_true)?)?;
    c.push_f64("observations", &[observations.len()], observations.iter().map(|&i| i as f64).collect())?;
    c.push_f64("y_obs", &[spec.data.len()], spec.data.clone())?;
    c.push_scalar("gamma", gamma)?;
    c.push_f64("history", &[report.history.len()], report.history.clone())?;
    out.container("inverse.difn", &c)?;

    let mut h = String::from("iteration,objective\n");
    for (i, v) in report.history.iter().enumerate() {
        let _ = writeln!(h, "{i},{v}");
    }
    out.text("inverse_history.csv", &h)?;

    let (e0, e1) = report.surrogate_errors.unzip();
    let rows: Vec<(&str, String)> = vec![
        ("forward", format!("\"{}\"", forward.label())),
        ("reference_operator", format!("\"{}\"", truth.label())),
        ("objective", num(Some(report.objective))),
        ("grad_norm", num(Some(report.grad_norm))),
        ("iterations", report.iterations.to_string()),
        ("converged", report.converged.to_string()),
        ("line_search_failed", report.line_search_failed.to_string()),
        ("error_vs_truth", num(Some(error_vs_truth))),
        ("reference_error", num(report.reference_error)),
        ("e0", num(e0)),
        ("e1", num(e1)),
        ("bound_lhs", num(report.bound.map(|b| b.lhs))),
        ("bound_factor", num(report.bound.map(|b| b.factor))),
    ];
    let mut r = String::from("key,value\n");
    for (k, v) in &rows {
        let _ = writeln!(r, "{k},{v}");
    }
    out.text("inverse_report.csv", &r)?;
    write_manifest(&out, "invert", cfg, &r)
}
