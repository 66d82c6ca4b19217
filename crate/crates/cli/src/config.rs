//! Flat `key = value` run configuration. Every key has a default; unknown keys are rejected.

use crate::error::{CliError, CliResult};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// `(key, default, description)` in manifest order.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "master seed; split, initialization, shuffling and noise seeds derive from it"),
    ("out", "out", "output directory"),
    ("data", "", "directory holding train/val/test.difn; empty means `out`"),
    ("grid.dim", "2", "spatial dimension"),
    ("grid.n", "16", "points per axis (power of two)"),
    ("grf.omega", "3.3333333333333335", "Matérn ω of the input measure"),
    ("grf.rho", "0.03333333333333333", "Matérn ρ"),
    ("grf.tau", "2", "Matérn τ (≥ 2)"),
    ("operator", "toy", "data-generating map: toy | pde | fno"),
    ("operator.checkpoint", "", "FNO checkpoint used when operator = fno"),
    ("toy.length", "0.3", "smoothing length of the toy operator"),
    ("toy.cutoff", "6", "band limit of the toy operator"),
    ("pde.newton_tol", "1e-10", "Newton tolerance on the residual L² norm"),
    ("pde.max_newton", "50", "Newton iteration cap"),
    ("pde.linear_tol", "1e-12", "relative tolerance of each linear solve"),
    ("pde.max_linear", "5000", "linear-solver iteration cap"),
    ("data.train", "64", "training samples"),
    ("data.val", "16", "validation samples"),
    ("data.test", "32", "test samples"),
    ("jacobian", "none", "stored derivative targets: none | full | reduced | coarse"),
    ("jacobian.x", "l2", "input inner product: l2 | cm (Cameron–Martin of the input measure)"),
    ("jacobian.y_s", "0", "Sobolev order of the output inner product"),
    ("reduction.r", "16", "reduced rank of input and output bases"),
    ("reduction.input", "kle", "reduced input basis: kle | pca | dis"),
    ("reduction.output", "pca", "reduced output basis: pca | dis"),
    ("reduction.kle_power", "0.5", "KLE rescaling power (0 gives L² sinusoids)"),
    ("coarse.eval_n", "8", "grid on which coarse Jacobians are evaluated"),
    ("coarse.basis_n", "8", "grid whose band limit defines the coarse bases"),
    ("coarse.native", "false", "solve coarse targets on the coarse grid instead of projecting"),
    ("fno.depth", "3", "Fourier layers"),
    ("fno.width", "16", "hidden channels"),
    ("fno.modes", "6", "kernel cutoff"),
    ("fno.activation", "gelu", "gelu | swish | gelu-tanh"),
    ("train.mode", "fno", "fno (output only) | dino (derivative informed)"),
    ("train.epochs", "30", "output-only epochs (the warm start for dino)"),
    ("train.finetune_epochs", "30", "epochs appended after the warm start"),
    ("train.batch_size", "8", "mini-batch size for adam"),
    ("train.lr", "3e-3", "initial learning rate"),
    ("train.lr_decay", "0.1", "learning-rate factor on plateau"),
    ("train.patience", "25", "stale epochs before decay"),
    ("train.plateau_tol", "1e-4", "relative improvement that counts as progress"),
    ("train.derivative_weight", "1", "weight λ of the derivative term"),
    ("train.partition", "0", "Jacobian columns per accumulation chunk (0 = all)"),
    ("train.optimizer", "adam", "adam | gd | lbfgs"),
    ("train.lbfgs_memory", "10", "L-BFGS history length"),
    ("train.output_weight", "l2", "output loss weighting: l2 | h1 | h1fd"),
    ("train.stop_at", "0", "stop after this many epochs and leave a resumable checkpoint (0 = full budget)"),
    ("eval.model", "checkpoint", "checkpoint | zero"),
    ("eval.checkpoint", "", "model checkpoint; empty means <out>/best.difn"),
    ("eval.split", "test", "train | val | test"),
    ("inverse.forward", "toy", "forward map of the solve: pde | toy | fno"),
    ("inverse.checkpoint", "", "FNO checkpoint for forward = fno; empty means <out>/best.difn"),
    ("inverse.method", "lbfgs", "lbfgs | gd"),
    ("inverse.beta", "1", "regularization weight β"),
    ("inverse.regularization", "cm", "regularization norm: cm | l2 | h1"),
    ("inverse.noise", "0.01", "noise level relative to the RMS of clean observations"),
    ("inverse.stride", "2", "observation stride along every axis"),
    ("inverse.truth_index", "0", "test-split GRF draw used as the true parameter"),
    ("inverse.observations", "", "container with y_obs and gamma; empty means synthesize from `operator`"),
    ("inverse.a0", "zero", "initial guess: zero | truth"),
    ("inverse.max_iterations", "500", "iteration cap"),
    ("inverse.tol", "1e-6", "tolerance on the dual-norm gradient"),
    ("inverse.memory", "10", "L-BFGS history length"),
    ("inverse.reference", "", "inverse result container to compare the minimizer against"),
    ("verify.activation", "gelu", "gelu | swish | gelu-tanh"),
    ("verify.clip_eps", "1e-3", "clipping C¹ tolerance"),
    ("verify.clip_r", "2", "clipping radius"),
    ("verify.cutoff_eps", "1e-2", "cutoff regime tolerance"),
    ("verify.cutoff_r", "2", "cutoff radius"),
    ("verify.absval_eps", "1e-3", "absolute-value uniform tolerance"),
    ("verify.identity_eps", "1e-3", "identity-approximation C¹ tolerance"),
    ("verify.identity_r", "2", "identity-approximation radius"),
    ("verify.identity_x0", "1", "identity-approximation expansion point"),
    ("verify.functional_n", "8", "grid of the cutoff functional"),
    ("verify.functional_cutoff", "2", "band limit of the cutoff functional"),
    ("verify.functional_eps", "1e-2", "cutoff functional tolerance"),
    ("verify.functional_r", "2", "cutoff functional radius"),
    ("verify.functional_samples", "1000", "random inputs checked against the global bounds"),
    ("verify.truncation_n", "32", "grid of the truncation check"),
    ("verify.truncation_draws", "32", "GRF draws of the truncation check"),
    ("verify.truncation_omega", "1", "Matérn ω of the truncation-check measure"),
    ("verify.truncation_rho", "1", "Matérn ρ of the truncation-check measure"),
    ("verify.truncation_tau", "2", "Matérn τ of the truncation-check measure"),
    ("verify.truncation_tol", "1e-3", "relative truncation error required at the largest cutoff"),
    ("verify.isometry_n", "8", "grid of the Jacobian isometry check"),
    ("report.inputs", "", "comma-separated CSV files to plot"),
    ("report.fields", "", "comma-separated `container:record` 2-d fields to render as heat maps"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    values: BTreeMap<&'static str, String>,
}

impl Default for Config {
    fn default() -> Self {
        Self { values: KEYS.iter().map(|(k, d, _)| (*k, d.to_string())).collect() }
    }
}

fn key_ref(key: &str) -> Option<&'static str> {
    KEYS.iter().find(|(k, _, _)| *k == key).map(|(k, _, _)| *k)
}

impl Config {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let k = k.trim();
            let key = key_ref(k).ok_or_else(|| CliError::config(format!("line {}: unknown key `{k}`", lineno + 1)))?;
            cfg.values.insert(key, v.trim().to_string());
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> CliResult<()> {
        let key = key_ref(key).ok_or_else(|| CliError::config(format!("unknown key `{key}`")))?;
        self.values.insert(key, value.into());
        Ok(())
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("undeclared key `{key}`"))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, what: &str) -> CliResult<T> {
        let v = self.str(key);
        v.parse().map_err(|_| CliError::config(format!("`{key}` = `{v}` is not {what}")))
    }

    pub fn f64(&self, key: &str) -> CliResult<f64> {
        let v: f64 = self.parsed(key, "a number")?;
        if !v.is_finite() {
            return Err(CliError::config(format!("`{key}` must be finite")));
        }
        Ok(v)
    }

    pub fn usize(&self, key: &str) -> CliResult<usize> {
        self.parsed(key, "a nonnegative integer")
    }

    pub fn u64(&self, key: &str) -> CliResult<u64> {
        self.parsed(key, "a nonnegative integer")
    }

    pub fn bool(&self, key: &str) -> CliResult<bool> {
        self.parsed(key, "true or false")
    }

    pub fn choice<'a>(&self, key: &str, options: &[&'a str]) -> CliResult<&'a str> {
        let v = self.str(key);
        options
            .iter()
            .find(|o| **o == v)
            .copied()
            .ok_or_else(|| CliError::config(format!("`{key}` = `{v}`; expected one of {}", options.join(" | "))))
    }

    /// Non-empty path value, or `None`.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.str(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn list(&self, key: &str) -> Vec<String> {
        self.str(key).split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.str("out"))
    }

    pub fn data_dir(&self) -> PathBuf {
        self.path("data").unwrap_or_else(|| self.out_dir())
    }

    /// Every key with its resolved value and description; parses back to `self`.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, _, doc) in KEYS {
            let _ = writeln!(s, "# {doc}");
            let _ = writeln!(s, "{k} = {}", self.values[k]);
        }
        s
    }
}
