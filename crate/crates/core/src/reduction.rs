//! Reduced bases: sample PCA, analytic Karhunen–Loève modes of Matérn fields and
//! derivative-informed subspaces.

use crate::basis::{check_grid, Basis, ModeBasis};
use crate::datagen::GrfSpec;
use crate::error::{invalid, shape, Error, Result};
use crate::jacobian::JacobianMatrix;
use crate::spectral::{GridFunction, GridSpec, SpectralWeight};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

/// Orthonormal combinations `φ_i = Σ_j V_{ji} e_j` of a parent mode basis `{e_j}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedBasis {
    parent: ModeBasis,
    /// Column-major `len(parent) × r`.
    vectors: Vec<f64>,
    eigenvalues: Vec<f64>,
    kind: String,
    degenerate: bool,
}

/// FNV-1a over the bit patterns, for tags that change whenever the vectors do.
fn fingerprint(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

/// Makes the entry of largest magnitude positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

impl ReducedBasis {
    pub fn new(parent: ModeBasis, vectors: Vec<f64>, eigenvalues: Vec<f64>, kind: impl Into<String>) -> Result<Self> {
        let p = parent.len();
        let r = eigenvalues.len();
        if vectors.len() != p * r {
            return shape(format!("{} coefficients for {r} vectors of length {p}", vectors.len()));
        }
        if vectors.iter().chain(&eigenvalues).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("reduced basis".into()));
        }
        let degenerate = eigenvalues.iter().all(|&l| l.abs() <= 1e-14);
        Ok(Self { parent, vectors, eigenvalues, kind: kind.into(), degenerate })
    }

    /// The first `r` members of `parent` themselves.
    pub fn from_parent(parent: ModeBasis, eigenvalues: Vec<f64>, kind: impl Into<String>) -> Result<Self> {
        let p = parent.len();
        let r = eigenvalues.len();
        if r > p {
            return invalid("more eigenvalues than parent modes");
        }
        let mut v = vec![0.0; p * r];
        for i in 0..r {
            v[i * p + i] = 1.0;
        }
        Self::new(parent, v, eigenvalues, kind)
    }

    pub fn parent(&self) -> &ModeBasis {
        &self.parent
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        let p = self.parent.len();
        &self.vectors[i * p..(i + 1) * p]
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    /// All eigenvalues vanish, so any orthonormal family would have served.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Leading `r` members.
    pub fn truncated(&self, r: usize) -> Result<Self> {
        if r > self.len() {
            return invalid(format!("cannot keep {r} of {} vectors", self.len()));
        }
        let p = self.parent.len();
        Self::new(self.parent.clone(), self.vectors[..r * p].to_vec(), self.eigenvalues[..r].to_vec(), self.kind.clone())
    }

    /// `⟨φ_i, v⟩` from parent coefficients.
    pub fn reduce(&self, parent_coeffs: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|i| self.vector(i).iter().zip(parent_coeffs).map(|(a, b)| a * b).sum()).collect()
    }

    /// Parent coefficients of `Σ_i c_i φ_i`.
    pub fn expand(&self, coeffs: &[f64]) -> Vec<f64> {
        let p = self.parent.len();
        let mut out = vec![0.0; p];
        for (i, &c) in coeffs.iter().enumerate() {
            if c != 0.0 {
                out.iter_mut().zip(self.vector(i)).for_each(|(o, v)| *o += c * v);
            }
        }
        out
    }

    /// `Vᵀ J V'` of a Jacobian taken in the parent bases.
    pub fn reduce_jacobian(out: &ReducedBasis, j: &JacobianMatrix, input: &ReducedBasis) -> Result<JacobianMatrix> {
        if j.in_tag != input.parent.tag() || j.out_tag != out.parent.tag() {
            return Err(Error::BasisMismatch {
                expected: format!("{} -> {}", input.parent.tag(), out.parent.tag()),
                found: format!("{} -> {}", j.in_tag, j.out_tag),
            });
        }
        j.change_basis(&out.vectors, out.len(), &input.vectors, input.len(), input.tag(), out.tag())
    }
}

impl Basis for ReducedBasis {
    fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    fn dim(&self) -> usize {
        self.parent.dim()
    }

    fn channels(&self) -> usize {
        self.parent.channels()
    }

    fn weight(&self) -> SpectralWeight {
        self.parent.weight()
    }

    fn tag(&self) -> String {
        format!("{}[r={},{:016x}]<{}>", self.kind, self.len(), fingerprint(&self.vectors), self.parent.tag())
    }

    fn supports_grid(&self, grid: GridSpec) -> bool {
        self.parent.supports_grid(grid)
    }

    fn synthesize(&self, j: usize, grid: GridSpec) -> Result<GridFunction> {
        check_grid(self, grid)?;
        self.parent.combine(self.vector(j), grid)
    }

    fn analyze(&self, v: &GridFunction) -> Result<Vec<f64>> {
        Ok(self.reduce(&self.parent.analyze(v)?))
    }

    fn analyze_adjoint(&self, coeffs: &[f64], grid: GridSpec) -> Result<GridFunction> {
        if coeffs.len() != self.len() {
            return shape("coefficient count does not match basis size");
        }
        self.parent.analyze_adjoint(&self.expand(coeffs), grid)
    }

    fn gram_deviation(&self) -> f64 {
        let r = self.len();
        let mut worst = 0.0f64;
        for a in 0..r {
            for b in a..r {
                let g: f64 = self.vector(a).iter().zip(self.vector(b)).map(|(x, y)| x * y).sum();
                worst = worst.max((g - if a == b { 1.0 } else { 0.0 }).abs());
            }
        }
        worst
    }

    fn combine(&self, coeffs: &[f64], grid: GridSpec) -> Result<GridFunction> {
        if coeffs.len() != self.len() {
            return shape("coefficient count does not match basis size");
        }
        self.parent.combine(&self.expand(coeffs), grid)
    }
}

/// Top eigenpairs of a symmetric matrix, eigenvalues nonincreasing, signs fixed.
fn top_eigen(m: DMatrix<f64>, r: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut vals = Vec::with_capacity(r);
    let mut vecs = Vec::with_capacity(r);
    for &i in order.iter().take(r) {
        vals.push(eig.eigenvalues[i]);
        let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        fix_sign(&mut v);
        vecs.push(v);
    }
    (vals, vecs)
}

/// Relative eigenvalue floor below which a direction is not counted as captured.
const RANK_TOLERANCE: f64 = 1e-12;

/// Principal subspace of sample coefficients in an orthonormal parent basis, from
/// `𝒞 = (1/m) Σ (x_i − x̄)(x_i − x̄)ᵀ`.
pub fn pca_in_basis(parent: ModeBasis, samples: &[GridFunction], r: usize) -> Result<ReducedBasis> {
    let m = samples.len();
    if m == 0 || r > m {
        return invalid(format!("cannot extract {r} components from {m} samples"));
    }
    let p = parent.len();
    if r > p {
        return invalid(format!("cannot extract {r} components from a {p}-dimensional space"));
    }
    let coeffs: Vec<Vec<f64>> = samples.iter().map(|s| parent.analyze(s)).collect::<Result<_>>()?;
    let mut mean = vec![0.0; p];
    for c in &coeffs {
        mean.iter_mut().zip(c).for_each(|(a, b)| *a += b / m as f64);
    }
    let xc = DMatrix::from_fn(p, m, |i, j| coeffs[j][i] - mean[i]);
    let (vals, vecs) = if m < p {
        let gram = xc.transpose() * &xc / m as f64;
        let (vals, small) = top_eigen(gram, r);
        let mut vecs = Vec::with_capacity(r);
        for (lambda, v) in vals.iter().zip(&small) {
            if *lambda <= 0.0 {
                vecs.push(vec![0.0; p]);
                continue;
            }
            let u = &xc * DMatrix::from_column_slice(m, 1, v) / (m as f64 * lambda).sqrt();
            let mut u: Vec<f64> = u.iter().copied().collect();
            fix_sign(&mut u);
            vecs.push(u);
        }
        (vals, vecs)
    } else {
        top_eigen(&xc * xc.transpose() / m as f64, r)
    };
    // Scale of the raw samples, so that round-off in a vanishing covariance is not counted.
    let energy = coeffs.iter().flatten().map(|x| x * x).sum::<f64>() / m as f64;
    let top = vals.first().copied().unwrap_or(0.0).max(energy);
    let achieved = vals.iter().filter(|&&l| l > RANK_TOLERANCE * top.max(f64::MIN_POSITIVE)).count();
    if achieved < r {
        return Err(Error::RankDeficient { requested: r, achieved });
    }
    let vals = vals.into_iter().map(|l| l.max(0.0)).collect();
    ReducedBasis::new(parent, vecs.concat(), vals, "pca")
}

/// PCA in the complete basis of the samples' grid, orthonormal under `inner`.
pub fn pca_from_samples(samples: &[GridFunction], r: usize, inner: SpectralWeight) -> Result<ReducedBasis> {
    let first = samples.first().ok_or_else(|| Error::InvalidArgument("no samples".into()))?;
    let parent = ModeBasis::complete(first.grid(), first.channels(), inner)?;
    pca_in_basis(parent, samples, r)
}

/// Karhunen–Loève modes of the Matérn covariance, ordered by `λ_k = (ω + ρ|k|²)^{−τ}` and
/// rescaled by `λ_k^{power}` so they are orthonormal in the image of `𝒞^{power}`
/// (`power = 0` gives the `L²`-orthonormal sinusoids).
pub fn kle_analytic(grf: &GrfSpec, r: usize, grid: GridSpec, power: f64) -> Result<ReducedBasis> {
    grf.validate()?;
    if !power.is_finite() || power < 0.0 {
        return invalid("KLE scaling power must be nonnegative");
    }
    let weight = if power == 0.0 {
        SpectralWeight::L2
    } else {
        SpectralWeight::Matern { omega: grf.omega, rho: grf.rho, tau: grf.tau, power }
    };
    let full = ModeBasis::band_limited(grid.dim(), 1, weight, grid.max_cutoff())?;
    if r > full.len() {
        return invalid(format!("grid resolves only {} modes", full.len()));
    }
    let parent = full.truncated(r)?;
    let vals = parent.entries().iter().map(|(m, _)| grf.eigenvalue(m.norm_sq())).collect();
    ReducedBasis::from_parent(parent, vals, "kle")
}

/// Dominant eigenspaces of `mean(JᵀJ)` (input) and `mean(JJᵀ)` (output) for Jacobians taken
/// in the orthonormal parents `in_parent`, `out_parent`.
pub fn dis_from_jacobians(
    jacobians: &[JacobianMatrix],
    in_parent: &ModeBasis,
    out_parent: &ModeBasis,
    r_in: usize,
    r_out: usize,
) -> Result<(ReducedBasis, ReducedBasis)> {
    let first = jacobians.first().ok_or_else(|| Error::InvalidArgument("no Jacobians".into()))?;
    for j in jacobians {
        if j.in_tag != in_parent.tag() {
            return Err(Error::BasisMismatch { expected: in_parent.tag(), found: j.in_tag.clone() });
        }
        if j.out_tag != out_parent.tag() {
            return Err(Error::BasisMismatch { expected: out_parent.tag(), found: j.out_tag.clone() });
        }
        j.check_same_bases(first)?;
    }
    let (rows, cols) = (first.rows, first.cols);
    if rows != out_parent.len() || cols != in_parent.len() {
        return shape("Jacobian shape does not match parent bases");
    }
    if r_in > cols || r_out > rows {
        return invalid(format!("requested ({r_in}, {r_out}) directions of a {rows}×{cols} Jacobian"));
    }
    let scale = 1.0 / jacobians.len() as f64;
    let mut hin = DMatrix::zeros(cols, cols);
    let mut hout = DMatrix::zeros(rows, rows);
    for j in jacobians {
        let m = DMatrix::from_row_slice(rows, cols, &j.data);
        hin += m.transpose() * &m * scale;
        hout += &m * m.transpose() * scale;
    }
    let (vi, ei) = top_eigen(hin, r_in);
    let (vo, eo) = top_eigen(hout, r_out);
    let clamp = |v: Vec<f64>| v.into_iter().map(|l| l.max(0.0)).collect::<Vec<_>>();
    Ok((
        ReducedBasis::new(in_parent.clone(), ei.concat(), clamp(vi), "dis-in")?,
        ReducedBasis::new(out_parent.clone(), eo.concat(), clamp(vo), "dis-out")?,
    ))
}

/// A uniformly random `r`-dimensional orthonormal family in the span of `parent`.
pub fn random_subspace(parent: &ModeBasis, r: usize, rng: &mut impl Rng) -> Result<ReducedBasis> {
    let p = parent.len();
    if r > p {
        return invalid("random subspace larger than parent");
    }
    let g = DMatrix::from_fn(p, r, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let vectors: Vec<f64> = (0..r).flat_map(|i| q.column(i).iter().copied().collect::<Vec<_>>()).collect();
    ReducedBasis::new(parent.clone(), vectors, vec![0.0; r], "random")
}

/// `‖Uᵀ J V‖²_F`, the Frobenius mass captured by the reduced pair.
pub fn captured_mass(j: &JacobianMatrix, input: &ReducedBasis, output: &ReducedBasis) -> Result<f64> {
    Ok(ReducedBasis::reduce_jacobian(output, j, input)?.frobenius_sq())
}
