//! Batched multi-dimensional FFT helpers over row-major complex arrays.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::cell::RefCell;
use std::sync::Arc;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

#[derive(Clone, Copy)]
pub(crate) enum AxisOp {
    /// Unnormalized transform of full length.
    Full { inverse: bool },
    /// Forward transform of length `n`, keeping modes `-cutoff..=cutoff`.
    Truncate { cutoff: usize },
    /// Zero-pad modes `-cutoff..=cutoff` to length `n` and inverse transform.
    Pad { n: usize, cutoff: usize },
}

fn run(fft: &dyn Fft<f64>, buf: &mut [Complex64]) {
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    fft.process_with_scratch(buf, &mut scratch);
}

/// Applies `op` along `axis` and returns the new array; `shape` is updated in place.
pub(crate) fn transform_axis(
    data: &[Complex64],
    shape: &mut [usize],
    axis: usize,
    op: AxisOp,
) -> Vec<Complex64> {
    let len = shape[axis];
    let stride: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let lines = outer * stride;
    let zero = Complex64::new(0.0, 0.0);
    // Lines laid out contiguously; already the case along the last axis.
    let mut buf: Vec<Complex64> = if stride == 1 {
        data.to_vec()
    } else {
        let mut b = Vec::with_capacity(lines * len);
        for o in 0..outer {
            for i in 0..stride {
                b.extend((0..len).map(|j| data[(o * len + j) * stride + i]));
            }
        }
        b
    };
    let (obuf, out_len) = match op {
        AxisOp::Full { inverse } => {
            if len > 1 {
                run(plan(len, inverse).as_ref(), &mut buf);
            }
            (buf, len)
        }
        AxisOp::Truncate { cutoff } => {
            if len > 1 {
                run(plan(len, false).as_ref(), &mut buf);
            }
            let m = 2 * cutoff + 1;
            let mut out = Vec::with_capacity(lines * m);
            for line in buf.chunks_exact(len) {
                out.extend(line[len - cutoff..].iter().chain(&line[..=cutoff]).copied());
            }
            (out, m)
        }
        AxisOp::Pad { n, cutoff } => {
            let m = 2 * cutoff + 1;
            debug_assert_eq!(len, m);
            let mut out = vec![zero; lines * n];
            for (dst, src) in out.chunks_exact_mut(n).zip(buf.chunks_exact(m)) {
                dst[..=cutoff].copy_from_slice(&src[cutoff..]);
                dst[n - cutoff..].copy_from_slice(&src[..cutoff]);
            }
            if n > 1 {
                run(plan(n, true).as_ref(), &mut out);
            }
            (out, n)
        }
    };
    shape[axis] = out_len;
    if stride == 1 {
        return obuf;
    }
    let mut out = Vec::with_capacity(outer * out_len * stride);
    for o in 0..outer {
        for j in 0..out_len {
            out.extend((0..stride).map(|i| obuf[(o * stride + i) * out_len + j]));
        }
    }
    out
}

/// Full unnormalized transform over axes `first..shape.len()`.
pub(crate) fn transform_all(data: Vec<Complex64>, shape: &[usize], first: usize, inverse: bool) -> Vec<Complex64> {
    let mut shape = shape.to_vec();
    let mut d = data;
    for axis in (first..shape.len()).rev() {
        d = transform_axis(&d, &mut shape, axis, AxisOp::Full { inverse });
    }
    d
}
