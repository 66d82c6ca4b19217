//! Records for configurations, parameters, bases and datasets inside a [`TensorContainer`].

use crate::activations::{GeluLike, Sigmoid};
use crate::basis::{Basis, ModeBasis};
use crate::container::TensorContainer;
use crate::datagen::{Dataset, JacobianMode, OperatorSample};
use crate::error::{Error, Result};
use crate::fno::{Activation, FnoConfig, FnoParams};
use crate::jacobian::JacobianMatrix;
use crate::losses::ResolutionLevels;
use crate::reduction::ReducedBasis;
use crate::spectral::{GridFunction, GridSpec, SpectralWeight};

fn bad<T>(field: &str, detail: impl Into<String>) -> Result<T> {
    Err(Error::Format { field: field.into(), detail: detail.into() })
}

fn count(c: &TensorContainer, name: &str) -> Result<usize> {
    let v = c.scalar(name)?;
    if !(v >= 0.0 && v.fract() == 0.0 && v < 1e15) {
        return bad(name, format!("expected a count, found {v}"));
    }
    Ok(v as usize)
}

/// UTF-8 text stored byte-wise in an f64 record.
pub fn put_text(c: &mut TensorContainer, name: &str, text: &str) -> Result<()> {
    let bytes: Vec<f64> = text.bytes().map(f64::from).collect();
    c.push_f64(name, &[bytes.len()], bytes)
}

pub fn get_text(c: &TensorContainer, name: &str) -> Result<String> {
    let (_, v) = c.f64(name)?;
    let bytes = v
        .iter()
        .map(|&x| if (0.0..=255.0).contains(&x) && x.fract() == 0.0 { Ok(x as u8) } else { bad(name, "not a byte string") })
        .collect::<Result<Vec<u8>>>()?;
    String::from_utf8(bytes).map_err(|_| Error::Format { field: name.into(), detail: "not UTF-8".into() })
}

pub fn put_grid(c: &mut TensorContainer, prefix: &str, g: GridSpec) -> Result<()> {
    c.push_scalar(format!("{prefix}.dim"), g.dim() as f64)?;
    c.push_scalar(format!("{prefix}.n"), g.n() as f64)
}

pub fn get_grid(c: &TensorContainer, prefix: &str) -> Result<GridSpec> {
    GridSpec::new(count(c, &format!("{prefix}.dim"))?, count(c, &format!("{prefix}.n"))?)
}

pub fn put_weight(c: &mut TensorContainer, prefix: &str, w: SpectralWeight) -> Result<()> {
    let v = match w {
        SpectralWeight::Sobolev { s } => vec![0.0, s],
        SpectralWeight::Matern { omega, rho, tau, power } => vec![1.0, omega, rho, tau, power],
    };
    c.push_f64(format!("{prefix}.weight"), &[v.len()], v)
}

pub fn get_weight(c: &TensorContainer, prefix: &str) -> Result<SpectralWeight> {
    let name = format!("{prefix}.weight");
    let (_, v) = c.f64(&name)?;
    let w = match v {
        [k, s] if *k == 0.0 => SpectralWeight::Sobolev { s: *s },
        [k, omega, rho, tau, power] if *k == 1.0 => SpectralWeight::Matern { omega: *omega, rho: *rho, tau: *tau, power: *power },
        _ => return bad(&name, "unknown weight encoding"),
    };
    w.validate().map_err(|e| Error::Format { field: name, detail: e.to_string() })?;
    Ok(w)
}

pub fn put_grid_function(c: &mut TensorContainer, name: &str, f: &GridFunction) -> Result<()> {
    let mut dims = vec![f.channels()];
    dims.extend(f.grid().shape());
    c.push_f64(name, &dims, f.values().to_vec())
}

pub fn get_grid_function(c: &TensorContainer, name: &str, grid: GridSpec, channels: usize) -> Result<GridFunction> {
    let (dims, v) = c.f64(name)?;
    let mut expected = vec![channels];
    expected.extend(grid.shape());
    if dims != expected.as_slice() {
        return bad(name, format!("dims {dims:?}, expected {expected:?}"));
    }
    GridFunction::new(grid, channels, v.to_vec())
}

/// A mode basis by construction recipe: band-limited cutoff or complete grid, then length.
pub fn put_mode_basis(c: &mut TensorContainer, prefix: &str, b: &ModeBasis) -> Result<()> {
    c.push_scalar(format!("{prefix}.dim"), b.dim() as f64)?;
    c.push_scalar(format!("{prefix}.channels"), b.channels() as f64)?;
    put_weight(c, prefix, b.weight())?;
    c.push_scalar(format!("{prefix}.complete"), b.native_grid().map_or(0.0, |g| g.n() as f64))?;
    c.push_scalar(format!("{prefix}.cutoff"), b.cutoff() as f64)?;
    c.push_scalar(format!("{prefix}.len"), b.len() as f64)
}

pub fn get_mode_basis(c: &TensorContainer, prefix: &str) -> Result<ModeBasis> {
    let dim = count(c, &format!("{prefix}.dim"))?;
    let channels = count(c, &format!("{prefix}.channels"))?;
    let w = get_weight(c, prefix)?;
    let native = count(c, &format!("{prefix}.complete"))?;
    let full = if native > 0 {
        ModeBasis::complete(GridSpec::new(dim, native)?, channels, w)?
    } else {
        ModeBasis::band_limited(dim, channels, w, count(c, &format!("{prefix}.cutoff"))?)?
    };
    let len = count(c, &format!("{prefix}.len"))?;
    if len > full.len() {
        return bad(&format!("{prefix}.len"), "longer than the reconstructed basis");
    }
    full.truncated(len)
}

pub fn put_reduced_basis(c: &mut TensorContainer, prefix: &str, b: &ReducedBasis) -> Result<()> {
    put_mode_basis(c, &format!("{prefix}.parent"), b.parent())?;
    put_text(c, &format!("{prefix}.kind"), b.kind())?;
    c.push_f64(format!("{prefix}.eigenvalues"), &[b.len()], b.eigenvalues().to_vec())?;
    c.push_f64(format!("{prefix}.vectors"), &[b.len(), b.parent().len()], b.vectors().to_vec())
}

pub fn get_reduced_basis(c: &TensorContainer, prefix: &str) -> Result<ReducedBasis> {
    let parent = get_mode_basis(c, &format!("{prefix}.parent"))?;
    let kind = get_text(c, &format!("{prefix}.kind"))?;
    let (_, vals) = c.f64(&format!("{prefix}.eigenvalues"))?;
    let vecs = c.f64_len(&format!("{prefix}.vectors"), vals.len() * parent.len())?;
    ReducedBasis::new(parent, vecs.to_vec(), vals.to_vec(), kind)
}

pub fn put_fno_config(c: &mut TensorContainer, prefix: &str, cfg: &FnoConfig) -> Result<()> {
    let act = match cfg.activation {
        Activation::Gelu(GeluLike { sigmoid: Sigmoid::NormalCdf }) => vec![0.0],
        Activation::Gelu(GeluLike { sigmoid: Sigmoid::Logistic }) => vec![1.0],
        Activation::Gelu(GeluLike { sigmoid: Sigmoid::TanhCubic { a1, a2 } }) => vec![2.0, a1, a2],
        Activation::LinearHook => vec![-1.0],
    };
    let shape = [cfg.dim, cfg.depth, cfg.width, cfg.modes, cfg.in_channels, cfg.out_channels].map(|x| x as f64).to_vec();
    c.push_f64(format!("{prefix}.shape"), &[6], shape)?;
    c.push_f64(format!("{prefix}.activation"), &[act.len()], act)
}

pub fn get_fno_config(c: &TensorContainer, prefix: &str) -> Result<FnoConfig> {
    let name = format!("{prefix}.shape");
    let s = c.f64_len(&name, 6)?;
    if s.iter().any(|x| !(*x >= 0.0 && x.fract() == 0.0 && *x < 1e9)) {
        return bad(&name, "expected counts");
    }
    let u = |i: usize| s[i] as usize;
    let an = format!("{prefix}.activation");
    let activation = match c.f64(&an)?.1 {
        [k] if *k == 0.0 => Activation::Gelu(GeluLike::new(Sigmoid::NormalCdf)),
        [k] if *k == 1.0 => Activation::Gelu(GeluLike::new(Sigmoid::Logistic)),
        [k, a1, a2] if *k == 2.0 => Activation::Gelu(GeluLike::new(Sigmoid::TanhCubic { a1: *a1, a2: *a2 })),
        [k] if *k == -1.0 => Activation::LinearHook,
        _ => return bad(&an, "unknown activation code"),
    };
    let cfg = FnoConfig { dim: u(0), depth: u(1), width: u(2), modes: u(3), in_channels: u(4), out_channels: u(5), activation };
    cfg.validate().map_err(|e| Error::Format { field: name, detail: e.to_string() })?;
    Ok(cfg)
}

pub fn put_fno_params(c: &mut TensorContainer, prefix: &str, cfg: &FnoConfig, p: &FnoParams) -> Result<()> {
    p.check(cfg)?;
    let (w, km) = (cfg.width, cfg.kernel_modes());
    c.push_f64(format!("{prefix}.lift"), &[w, cfg.in_channels], p.lift.clone())?;
    for (l, layer) in p.layers.iter().enumerate() {
        c.push_f64(format!("{prefix}.layer{l}.local"), &[w, w], layer.local.clone())?;
        c.push_complex(format!("{prefix}.layer{l}.bias"), &[w, km], layer.bias.clone())?;
        c.push_complex(format!("{prefix}.layer{l}.kernel"), &[km, w, w], layer.kernel.clone())?;
    }
    c.push_f64(format!("{prefix}.project"), &[cfg.out_channels, w], p.project.clone())
}

pub fn get_fno_params(c: &TensorContainer, prefix: &str, cfg: &FnoConfig) -> Result<FnoParams> {
    let (w, km) = (cfg.width, cfg.kernel_modes());
    let mut p = FnoParams::zeros(cfg);
    p.lift = c.f64_len(&format!("{prefix}.lift"), w * cfg.in_channels)?.to_vec();
    for (l, layer) in p.layers.iter_mut().enumerate() {
        layer.local = c.f64_len(&format!("{prefix}.layer{l}.local"), w * w)?.to_vec();
        for (name, len, dst) in [("bias", w * km, &mut layer.bias), ("kernel", km * w * w, &mut layer.kernel)] {
            let field = format!("{prefix}.layer{l}.{name}");
            let (_, v) = c.complex(&field)?;
            if v.len() != len {
                return bad(&field, format!("expected {len} values, found {}", v.len()));
            }
            *dst = v.to_vec();
        }
    }
    p.project = c.f64_len(&format!("{prefix}.project"), cfg.out_channels * w)?.to_vec();
    if p.to_flat().iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("{prefix} parameters")));
    }
    Ok(p)
}

pub fn put_jacobian(c: &mut TensorContainer, name: &str, j: &JacobianMatrix) -> Result<()> {
    c.push_f64(name, &[j.rows, j.cols], j.data.clone())
}

pub fn get_jacobian(c: &TensorContainer, name: &str, in_basis: &dyn Basis, out_basis: &dyn Basis) -> Result<JacobianMatrix> {
    let (dims, v) = c.f64(name)?;
    if dims != [out_basis.len(), in_basis.len()] {
        return bad(name, format!("dims {dims:?}, expected [{}, {}]", out_basis.len(), in_basis.len()));
    }
    JacobianMatrix::new(dims[0], dims[1], v.to_vec(), in_basis.tag(), out_basis.tag())
}

fn put_mode(c: &mut TensorContainer, mode: &JacobianMode) -> Result<()> {
    match mode {
        JacobianMode::None => c.push_scalar("jacobian.mode", 0.0),
        JacobianMode::Full { x, y } => {
            c.push_scalar("jacobian.mode", 1.0)?;
            put_weight(c, "jacobian.x", *x)?;
            put_weight(c, "jacobian.y", *y)
        }
        JacobianMode::Reduced { input, output } => {
            c.push_scalar("jacobian.mode", 2.0)?;
            put_reduced_basis(c, "jacobian.input", input)?;
            put_reduced_basis(c, "jacobian.output", output)
        }
        JacobianMode::Coarse { levels, x, y, native } => {
            c.push_scalar("jacobian.mode", 3.0)?;
            put_grid(c, "jacobian.eval", levels.eval)?;
            put_grid(c, "jacobian.basis", levels.basis)?;
            put_weight(c, "jacobian.x", *x)?;
            put_weight(c, "jacobian.y", *y)?;
            c.push_scalar("jacobian.native", if *native { 1.0 } else { 0.0 })
        }
    }
}

fn get_mode(c: &TensorContainer, grid: GridSpec) -> Result<JacobianMode> {
    Ok(match count(c, "jacobian.mode")? {
        0 => JacobianMode::None,
        1 => JacobianMode::Full { x: get_weight(c, "jacobian.x")?, y: get_weight(c, "jacobian.y")? },
        2 => JacobianMode::Reduced { input: get_reduced_basis(c, "jacobian.input")?, output: get_reduced_basis(c, "jacobian.output")? },
        3 => JacobianMode::Coarse {
            levels: ResolutionLevels::new(grid, get_grid(c, "jacobian.eval")?, get_grid(c, "jacobian.basis")?)?,
            x: get_weight(c, "jacobian.x")?,
            y: get_weight(c, "jacobian.y")?,
            native: c.scalar("jacobian.native")? != 0.0,
        },
        m => return bad("jacobian.mode", format!("unknown mode {m}")),
    })
}

/// Input and output bases of the stored Jacobian targets.
pub fn mode_bases(mode: &JacobianMode, grid: GridSpec, channels_in: usize, channels_out: usize) -> Result<Option<(Box<dyn Basis>, Box<dyn Basis>)>> {
    Ok(match mode {
        JacobianMode::None => None,
        JacobianMode::Full { x, y } => Some((
            Box::new(ModeBasis::complete(grid, channels_in, *x)?),
            Box::new(ModeBasis::complete(grid, channels_out, *y)?),
        )),
        JacobianMode::Reduced { input, output } => Some((Box::new(input.clone()), Box::new(output.clone()))),
        JacobianMode::Coarse { levels, x, y, .. } => {
            let (xb, yb) = levels.bases(channels_in, channels_out, *x, *y)?;
            Some((Box::new(xb), Box::new(yb)))
        }
    })
}

/// Records `a_i`, `u_i` and (when present) `J_i`, the grid and the Jacobian setting.
pub fn dataset_to_container(d: &Dataset) -> Result<TensorContainer> {
    let mut c = TensorContainer::new();
    put_grid(&mut c, "grid", d.grid)?;
    c.push_scalar("count", d.len() as f64)?;
    let (ci, co) = d.samples.first().map(|s| (s.input.channels(), s.output.channels())).unwrap_or((1, 1));
    c.push_scalar("channels.in", ci as f64)?;
    c.push_scalar("channels.out", co as f64)?;
    put_mode(&mut c, &d.mode)?;
    c.push_f64("linear_solves", &[d.len()], d.samples.iter().map(|s| s.linear_solves as f64).collect())?;
    for (i, s) in d.samples.iter().enumerate() {
        put_grid_function(&mut c, &format!("a_{i}"), &s.input)?;
        put_grid_function(&mut c, &format!("u_{i}"), &s.output)?;
        if let Some(j) = &s.jacobian {
            put_jacobian(&mut c, &format!("J_{i}"), j)?;
        }
    }
    Ok(c)
}

pub fn dataset_from_container(c: &TensorContainer) -> Result<Dataset> {
    let grid = get_grid(c, "grid")?;
    let n = count(c, "count")?;
    let ci = count(c, "channels.in")?;
    let co = count(c, "channels.out")?;
    let mode = get_mode(c, grid)?;
    let bases = mode_bases(&mode, grid, ci, co)?;
    let solves = c.f64_len("linear_solves", n)?;
    let mut samples = Vec::with_capacity(n.min(c.len()));
    for i in 0..n {
        let input = get_grid_function(c, &format!("a_{i}"), grid, ci)?;
        let output = get_grid_function(c, &format!("u_{i}"), grid, co)?;
        let jacobian = match &bases {
            Some((xb, yb)) => Some(get_jacobian(c, &format!("J_{i}"), xb.as_ref(), yb.as_ref())?),
            None => None,
        };
        samples.push(OperatorSample { input, output, jacobian, linear_solves: solves[i] as usize });
    }
    Dataset::new(grid, mode, samples)
}
