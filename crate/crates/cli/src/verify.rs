use crate::config::Config;
use crate::error::{CliError, CliResult, Context};
use crate::output::{write_manifest, Output};
use crate::setup;
use difno_core::activations::*;
use difno_core::basis::ModeBasis;
use difno_core::datagen::{sample_grf_at, truncation_errors, GrfSpec};
use difno_core::fno::{FnoConfig, FnoModel, FnoParams};
use difno_core::jacobian::{hilbert_schmidt_sq, jacobian_in_bases, DiffMode};
use difno_core::operator::Operator;
use difno_core::spectral::{project_modes, GridFunction, GridSpec, SpectralWeight};
use std::fmt::Write as _;

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub check: String,
    pub detail: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Row {
    fn at_most(check: &str, detail: String, value: f64, tolerance: f64) -> Self {
        Self { check: check.into(), detail, value, tolerance, pass: value <= tolerance }
    }

    fn failed(check: &str, detail: String, tolerance: f64) -> Self {
        Self { check: check.into(), detail, value: f64::NAN, tolerance, pass: false }
    }
}

fn scan(lo: f64, hi: f64, step: f64, f: impl Fn(f64) -> f64) -> f64 {
    let n = ((hi - lo) / step).ceil() as usize;
    (0..=n).map(|i| f((lo + i as f64 * step).min(hi))).fold(0.0, f64::max)
}

/// Band-limited field with `‖v‖_{L²} = norm`: a projected GRF draw.
fn band_limited(grid: GridSpec, cutoff: usize, index: u64, norm: f64) -> CliResult<GridFunction> {
    let grf = GrfSpec { seed: 0x5eed, ..GrfSpec::default() };
    let v = project_modes(&sample_grf_at(&grf, grid, index)?, cutoff)?;
    Ok(v.scaled(norm / v.l2_norm()))
}

fn calibration_rows(cfg: &Config) -> CliResult<Vec<Row>> {
    let act = setup::activation(cfg, "verify.activation")?;
    let mut rows = Vec::new();
    let (sym, increasing) = act.check_sigmoid(20.0, 40_001);
    rows.push(Row { check: "sigmoid".into(), detail: format!("{} symmetric and increasing on [-20,20]", act.label()), value: sym, tolerance: 1e-14, pass: sym <= 1e-14 && increasing });

    let (eps, r) = (cfg.f64("verify.clip_eps")?, cfg.f64("verify.clip_r")?);
    match calibrate_clip(&act, eps, r) {
        Ok(c) => {
            let h = c.grid_step / 2.0;
            let err = scan(-r, r, h, |x| {
                let (v, d) = clip_eval(&act, &c.params, x);
                (v - x).abs().max((d - 1.0).abs())
            });
            rows.push(Row::at_most("clip", format!("C1 error on [-{r},{r}], theta={}", c.params.theta), err, eps));
            let m = scan(0.0, 1e3, 1e-2, |x| {
                let (v, d) = clip_eval(&act, &c.params, x);
                v.abs().max(d.abs())
            });
            rows.push(Row::at_most("clip_bound", format!("sup |f|,|f'| over [0,1000] against M={}", c.bound_m), m / c.bound_m, 1.0));
        }
        Err(e) => rows.push(Row::failed("clip", e.to_string(), eps)),
    }

    let (eps, r) = (cfg.f64("verify.cutoff_eps")?, cfg.f64("verify.cutoff_r")?);
    match calibrate_cutoff(&act, eps, r) {
        Ok(c) => {
            let h = c.grid_step / 2.0;
            let near = scan(0.0, r, h, |x| {
                let (v, d) = cutoff_eval(&act, &c.params, x);
                (v - 1.0).abs().max(d.abs())
            });
            let far_end = cutoff_far_end(r);
            let far = scan(4.0 * r, far_end, h, |x| {
                let (v, d) = cutoff_eval(&act, &c.params, x);
                v.abs().max(d.abs())
            });
            rows.push(Row::at_most("cutoff_near", format!("C1 distance to 1 on [0,{r}], theta={}", c.params.theta), near, eps));
            rows.push(Row::at_most("cutoff_far", format!("C1 distance to 0 on [{},{far_end}]", 4.0 * r), far, eps));
        }
        Err(e) => rows.push(Row::failed("cutoff", e.to_string(), eps)),
    }

    let eps = cfg.f64("verify.absval_eps")?;
    match calibrate_absval(&act, eps) {
        Ok(c) => {
            let err = absval_error(&act, &c.params, c.grid_step / 2.0);
            rows.push(Row::at_most("absval", format!("uniform error on [-{ABSVAL_RANGE},{ABSVAL_RANGE}], theta={}", c.params.theta), err, eps));
        }
        Err(e) => rows.push(Row::failed("absval", e.to_string(), eps)),
    }

    let (eps, r, x0) = (cfg.f64("verify.identity_eps")?, cfg.f64("verify.identity_r")?, cfg.f64("verify.identity_x0")?);
    match calibrate_identity(&act, eps, r, x0) {
        Ok(c) => {
            let (ev, ed) = identity_errors(&act, &c.params, r, c.grid_step / 2.0)?;
            rows.push(Row::at_most("identity", format!("C1 error on [-{r},{r}], x0={x0}, theta={}", c.params.theta), ev.max(ed), eps));
        }
        Err(e) => rows.push(Row::failed("identity", e.to_string(), eps)),
    }

    let g = GridSpec::new(cfg.usize("grid.dim")?, cfg.usize("verify.functional_n")?).at("verify.functional_n")?;
    let cutoff = cfg.usize("verify.functional_cutoff")?;
    let (eps, r) = (cfg.f64("verify.functional_eps")?, cfg.f64("verify.functional_r")?);
    let samples = cfg.usize("verify.functional_samples")?;
    match CutoffFunctional::calibrate(act, g, cutoff, 1, eps, r) {
        Ok(cf) => {
            let mut inside = (cf.eval(&GridFunction::zeros(g, 1)).0 - 1.0).abs();
            for i in 0..20 {
                inside = inside.max((cf.eval(&band_limited(g, cutoff, i, r * 0.999)?).0 - 1.0).abs());
            }
            rows.push(Row::at_most("functional_inside", format!("|F - 1| for norm < R={r}"), inside, eps));
            let big = cf.big_c * r;
            let mut outside = 0.0f64;
            for i in 0..20 {
                outside = outside.max(cf.eval(&band_limited(g, cutoff, 100 + i, big * 1.001)?).0.abs());
            }
            rows.push(Row::at_most("functional_outside", format!("|F| for norm >= C*R={big}"), outside, eps));
            let mut worst = 0.0f64;
            for i in 0..samples {
                let norm = 10.0 * big * i as f64 / samples.saturating_sub(1).max(1) as f64;
                let v = band_limited(g, cutoff, 1_000 + i as u64, norm.max(1e-9))?;
                let (val, grad) = cf.eval(&v);
                worst = worst.max(val.abs()).max(cf.gradient_dual_norm(&grad)?);
            }
            rows.push(Row::at_most("functional_bounds", format!("sup |F|,|DF| over {samples} inputs against M={}", cf.bound_m), worst / cf.bound_m, 1.0));
        }
        Err(e) => rows.push(Row::failed("functional", e.to_string(), eps)),
    }
    Ok(rows)
}

fn structural_rows(cfg: &Config) -> CliResult<Vec<Row>> {
    let dim = cfg.usize("grid.dim")?;
    let mut rows = Vec::new();
    let g = GridSpec::new(dim, cfg.usize("verify.truncation_n")?).at("verify.truncation_n")?;
    let grf = GrfSpec::new(cfg.f64("verify.truncation_omega")?, cfg.f64("verify.truncation_rho")?, cfg.f64("verify.truncation_tau")?, 0).at("verify.truncation")?;
    let cutoffs = [1, 2, 4, 8];
    let errs = truncation_errors(&setup::toy(cfg)?, &grf, g, cfg.usize("verify.truncation_draws")?, &cutoffs)?;
    let monotone = errs.windows(2).all(|w| w[1] <= w[0]);
    let listed: Vec<String> = cutoffs.iter().zip(&errs).map(|(n, e)| format!("N={n}:{e:.3e}")).collect();
    rows.push(Row { check: "truncation_monotone".into(), detail: listed.join(" "), value: errs[errs.len() - 1], tolerance: f64::INFINITY, pass: monotone });
    rows.push(Row::at_most("truncation", format!("relative error at N=8 on {}^{dim}", g.n()), errs[errs.len() - 1], cfg.f64("verify.truncation_tol")?));

    let g = GridSpec::new(dim, cfg.usize("verify.isometry_n")?).at("verify.isometry_n")?;
    let fno = FnoConfig::new(dim, 2, 4, 2, 1, 1, GeluLike::default())?;
    let model = FnoModel::new(fno, FnoParams::init(&fno, 11))?;
    let a = sample_grf_at(&GrfSpec::default(), g, 0)?;
    let lin = model.linearize(&a)?;
    let xb = ModeBasis::complete(g, 1, SpectralWeight::L2)?;
    let j = jacobian_in_bases(lin.as_ref(), g, &xb, &xb, DiffMode::Forward)?;
    let hs = hilbert_schmidt_sq(lin.as_ref(), g, &xb, SpectralWeight::L2)?;
    let rel = (j.frobenius_sq() - hs).abs() / hs;
    rows.push(Row::at_most("jacobian_isometry", format!("|‖J‖_F² - HS²|/HS² on {}^{dim}, width 4, N=2", g.n()), rel, 1e-10));
    Ok(rows)
}

pub fn rows_csv(rows: &[Row]) -> String {
    let mut s = String::from("check,detail,value,tolerance,pass\n");
    for r in rows {
        let _ = writeln!(s, "{},\"{}\",{:e},{:e},{}", r.check, r.detail, r.value, r.tolerance, r.pass);
    }
    s
}

pub fn verify_rows(cfg: &Config) -> CliResult<Vec<Row>> {
    let mut rows = calibration_rows(cfg)?;
    rows.extend(structural_rows(cfg)?);
    Ok(rows)
}

pub fn run(cfg: &Config) -> CliResult<()> {
    let rows = verify_rows(cfg)?;
    let out = Output::new(cfg.out_dir())?;
    out.text("verify.csv", &rows_csv(&rows))?;
    let failed: Vec<&str> = rows.iter().filter(|r| !r.pass).map(|r| r.check.as_str()).collect();
    write_manifest(&out, "verify", cfg, &format!("failed = {}\n", failed.join(" ")))?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::numeric(format!("verification failed: {}", failed.join(", "))))
    }
}
