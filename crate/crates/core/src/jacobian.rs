//! Dense Jacobians `[J]_{jk} = ⟨φ_j, DG(a) ψ_k⟩_Y` in declared orthonormal bases.

use crate::basis::{check_grid, Basis};
use crate::error::{invalid, shape, Error, Result};
use crate::operator::{Linearization, Operator};
use crate::spectral::{GridFunction, GridSpec};
use rayon::prelude::*;

/// Gram deviation above which a basis is refused.
pub const GRAM_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct JacobianMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries.
    pub data: Vec<f64>,
    pub in_tag: String,
    pub out_tag: String,
}

/// Columns from JVPs of the input basis, or rows from VJPs of the output basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiffMode {
    Forward,
    Reverse,
    /// Forward when the input basis is smaller.
    Auto,
}

impl JacobianMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>, in_tag: impl Into<String>, out_tag: impl Into<String>) -> Result<Self> {
        if data.len() != rows * cols {
            return shape(format!("{} entries for a {rows}×{cols} matrix", data.len()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Jacobian entries".into()));
        }
        Ok(Self { rows, cols, data, in_tag: in_tag.into(), out_tag: out_tag.into() })
    }

    pub fn zeros(rows: usize, cols: usize, in_tag: impl Into<String>, out_tag: impl Into<String>) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols], in_tag: in_tag.into(), out_tag: out_tag.into() }
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.data[j * self.cols + k]
    }

    #[inline]
    pub fn set(&mut self, j: usize, k: usize, v: f64) {
        self.data[j * self.cols + k] = v;
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    pub fn same_bases(&self, other: &JacobianMatrix) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.in_tag == other.in_tag && self.out_tag == other.out_tag
    }

    pub fn check_same_bases(&self, other: &JacobianMatrix) -> Result<()> {
        if self.in_tag != other.in_tag {
            return Err(Error::BasisMismatch { expected: self.in_tag.clone(), found: other.in_tag.clone() });
        }
        if self.out_tag != other.out_tag {
            return Err(Error::BasisMismatch { expected: self.out_tag.clone(), found: other.out_tag.clone() });
        }
        if self.rows != other.rows || self.cols != other.cols {
            return shape(format!("{}×{} vs {}×{} Jacobians", self.rows, self.cols, other.rows, other.cols));
        }
        Ok(())
    }

    /// Leading `rows × cols` block, retagged.
    pub fn leading_block(&self, rows: usize, cols: usize, in_tag: impl Into<String>, out_tag: impl Into<String>) -> Result<Self> {
        if rows > self.rows || cols > self.cols {
            return shape("block exceeds matrix size");
        }
        let data = (0..rows).flat_map(|j| (0..cols).map(move |k| (j, k))).map(|(j, k)| self.get(j, k)).collect();
        Ok(Self { rows, cols, data, in_tag: in_tag.into(), out_tag: out_tag.into() })
    }

    pub fn transpose_data(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.data.len()];
        for j in 0..self.rows {
            for k in 0..self.cols {
                t[k * self.rows + j] = self.get(j, k);
            }
        }
        t
    }

    /// `U^T J V` for column-major coefficient matrices `U` (rows × p) and `V` (cols × q).
    pub fn change_basis(&self, u: &[f64], p: usize, v: &[f64], q: usize, in_tag: impl Into<String>, out_tag: impl Into<String>) -> Result<Self> {
        if u.len() != self.rows * p || v.len() != self.cols * q {
            return shape("change-of-basis matrices do not match Jacobian");
        }
        let mut jv = vec![0.0; self.rows * q];
        for j in 0..self.rows {
            for b in 0..q {
                jv[j * q + b] = (0..self.cols).map(|k| self.get(j, k) * v[b * self.cols + k]).sum();
            }
        }
        let mut out = vec![0.0; p * q];
        for a in 0..p {
            for b in 0..q {
                out[a * q + b] = (0..self.rows).map(|j| u[a * self.rows + j] * jv[j * q + b]).sum();
            }
        }
        Self::new(p, q, out, in_tag, out_tag)
    }
}

fn check_bases(grid: GridSpec, in_basis: &dyn Basis, out_basis: &dyn Basis) -> Result<()> {
    check_grid(in_basis, grid)?;
    check_grid(out_basis, grid)?;
    for b in [in_basis, out_basis] {
        let dev = b.gram_deviation();
        if dev.is_nan() || dev > GRAM_TOLERANCE {
            return invalid(format!("basis `{}` is not orthonormal (Gram deviation {dev:.3e})", b.tag()));
        }
    }
    Ok(())
}

/// `[J]_{jk} = ⟨φ_j, DG(a) ψ_k⟩` from a linearization computed on `grid`.
pub fn jacobian_in_bases(
    lin: &dyn Linearization,
    grid: GridSpec,
    in_basis: &dyn Basis,
    out_basis: &dyn Basis,
    mode: DiffMode,
) -> Result<JacobianMatrix> {
    let out_channels = out_basis.channels();
    check_bases(grid, in_basis, out_basis)?;
    if lin.output().grid() == grid && lin.output().channels() != out_channels {
        return shape("output basis channel count does not match operator");
    }
    let (rows, cols) = (out_basis.len(), in_basis.len());
    let forward = match mode {
        DiffMode::Forward => true,
        DiffMode::Reverse => false,
        DiffMode::Auto => cols <= rows,
    };
    let mut data = vec![0.0; rows * cols];
    if forward {
        for k in 0..cols {
            let du = lin.jvp(&in_basis.synthesize(k, grid)?)?;
            if du.channels() != out_channels {
                return shape("output basis channel count does not match operator");
            }
            for (j, c) in out_basis.analyze(&du)?.into_iter().enumerate() {
                data[j * cols + k] = c;
            }
        }
    } else {
        let psis: Vec<GridFunction> = (0..cols).map(|k| in_basis.synthesize(k, grid)).collect::<Result<_>>()?;
        let mut e = vec![0.0; rows];
        for j in 0..rows {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[j] = 1.0;
            let abar = lin.vjp(&out_basis.analyze_adjoint(&e, grid)?)?;
            for (k, psi) in psis.iter().enumerate() {
                data[j * cols + k] = abar.values().iter().zip(psi.values()).map(|(x, y)| x * y).sum();
            }
        }
    }
    JacobianMatrix::new(rows, cols, data, in_basis.tag(), out_basis.tag())
}

/// Jacobian of `op` at `a` on the grid of `a`.
pub fn operator_jacobian(op: &dyn Operator, a: &GridFunction, in_basis: &dyn Basis, out_basis: &dyn Basis, mode: DiffMode) -> Result<JacobianMatrix> {
    check_bases(a.grid(), in_basis, out_basis)?;
    let lin = op.linearize(a)?;
    jacobian_in_bases(lin.as_ref(), a.grid(), in_basis, out_basis, mode)
}

/// Jacobians at many inputs, evaluated in parallel and returned in input order.
pub fn operator_jacobians(op: &dyn Operator, inputs: &[GridFunction], in_basis: &dyn Basis, out_basis: &dyn Basis, mode: DiffMode) -> Result<Vec<JacobianMatrix>> {
    inputs.par_iter().map(|a| operator_jacobian(op, a, in_basis, out_basis, mode)).collect()
}

/// `Σ_k ‖DG(a) ψ_k‖²_Y` by JVP sweeps, with the output norm taken under `out_weight`.
pub fn hilbert_schmidt_sq(lin: &dyn Linearization, grid: GridSpec, in_basis: &dyn Basis, out_weight: crate::spectral::SpectralWeight) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..in_basis.len() {
        let du = lin.jvp(&in_basis.synthesize(k, grid)?)?;
        total += crate::spectral::weighted_norm(&du, &out_weight).powi(2);
    }
    Ok(total)
}
