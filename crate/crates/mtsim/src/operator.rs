//! Complex matrices, Hermitian operators, spectra, and unitary evolution.
//!
//! Everything downstream (observables, channels, noise certificates) is built
//! on the types here. Matrix exponentials are always computed spectrally; the
//! Hermitian eigendecomposition is the single numerical primitive.

use nalgebra::{DMatrix, DVector};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::C64;

/// Default relative tolerance for the self-adjointness check.
pub const TOL_HERM: f64 = 1e-9;
/// Default relative tolerance for spectral reconstruction.
pub const TOL_RECON: f64 = 1e-10;
/// Default tolerance for unitarity of evolution operators.
pub const TOL_UNITARY: f64 = 1e-10;
/// Default gap under which eigenvalues are merged into one spectral projector.
pub const GROUP_TOL: f64 = 1e-8;

/// Scale factor for relative tolerances: `max(1, x)`.
#[inline]
pub fn norm_scale(x: f64) -> f64 {
    x.max(1.0)
}

/// Dense complex matrix with finite entries.
///
/// Row-major in its JSON form: `{"rows": n, "cols": m, "entries": [[re, im], ...]}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    m: DMatrix<C64>,
}

impl ComplexMatrix {
    /// Build from row-major entries. Fails on a count mismatch or non-finite entry.
    pub fn new(rows: usize, cols: usize, entries: Vec<C64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidValue("matrix dimensions must be positive".into()));
        }
        if entries.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                entries.len()
            )));
        }
        // DMatrix::from_row_slice copies row-major input into column-major storage.
        Self::from_dmatrix(DMatrix::from_row_slice(rows, cols, &entries))
    }

    /// Wrap an existing nalgebra matrix, checking finiteness.
    pub fn from_dmatrix(m: DMatrix<C64>) -> Result<Self> {
        if m.is_empty() {
            return Err(Error::InvalidValue("matrix dimensions must be positive".into()));
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidValue("matrix contains NaN or infinite entries".into()));
        }
        Ok(Self { m })
    }

    /// Build from real row-major entries.
    pub fn from_real(rows: usize, cols: usize, entries: &[f64]) -> Result<Self> {
        Self::new(rows, cols, entries.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    /// Square matrix of zeros.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { m: DMatrix::zeros(rows, cols) }
    }

    /// Identity on a `dim`-dimensional space.
    pub fn identity(dim: usize) -> Self {
        Self { m: DMatrix::identity(dim, dim) }
    }

    /// Diagonal matrix from real entries.
    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, &x) in diag.iter().enumerate() {
            m[(i, i)] = C64::new(x, 0.0);
        }
        Self { m }
    }

    /// Rank-one outer product `|u><v|`.
    pub fn outer(u: &DVector<C64>, v: &DVector<C64>) -> Self {
        let mut m = DMatrix::zeros(u.len(), v.len());
        for i in 0..u.len() {
            for j in 0..v.len() {
                m[(i, j)] = u[i] * v[j].conj();
            }
        }
        Self { m }
    }

    pub fn rows(&self) -> usize {
        self.m.nrows()
    }

    pub fn cols(&self) -> usize {
        self.m.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.m.is_square()
    }

    /// Entry at `(row, col)`.
    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.m[(row, col)]
    }

    /// Borrow the underlying nalgebra matrix.
    pub fn as_dmatrix(&self) -> &DMatrix<C64> {
        &self.m
    }

    /// Consume into the underlying nalgebra matrix.
    pub fn into_dmatrix(self) -> DMatrix<C64> {
        self.m
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self { m: self.m.adjoint() }
    }

    /// Trace of a square matrix.
    pub fn trace(&self) -> C64 {
        self.m.trace()
    }

    /// Matrix product, checking inner dimensions.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols() != rhs.rows() {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows(),
                self.cols(),
                rhs.rows(),
                rhs.cols()
            )));
        }
        Ok(Self { m: &self.m * &rhs.m })
    }

    /// Entrywise sum, checking shapes.
    pub fn add(&self, rhs: &Self) -> Result<Self> {
        self.same_shape(rhs)?;
        Ok(Self { m: &self.m + &rhs.m })
    }

    /// Entrywise difference, checking shapes.
    pub fn sub(&self, rhs: &Self) -> Result<Self> {
        self.same_shape(rhs)?;
        Ok(Self { m: &self.m - &rhs.m })
    }

    /// Scalar multiple.
    pub fn scale(&self, factor: C64) -> Self {
        Self { m: &self.m * factor }
    }

    /// Apply to a vector.
    pub fn apply(&self, v: &DVector<C64>) -> Result<DVector<C64>> {
        if self.cols() != v.len() {
            return Err(Error::DimensionMismatch(format!(
                "cannot apply {}x{} to a vector of length {}",
                self.rows(),
                self.cols(),
                v.len()
            )));
        }
        Ok(&self.m * v)
    }

    /// Frobenius norm. Upper-bounds the operator norm, so it is the cheap
    /// conservative choice for residual checks against a tolerance.
    pub fn frobenius_norm(&self) -> f64 {
        self.m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Operator norm (largest singular value), computed as the square root of
    /// the top eigenvalue of `A† A`.
    pub fn operator_norm(&self) -> Result<f64> {
        let gram = self.m.adjoint() * &self.m;
        let eig = hermitian_eigen(&gram)?;
        let top = eig.eigenvalues.iter().copied().fold(0.0_f64, f64::max);
        Ok(top.max(0.0).sqrt())
    }

    /// `max_ij |a_ij - b_ij|` against another matrix of the same shape.
    pub fn max_abs_diff(&self, rhs: &Self) -> f64 {
        assert_eq!(self.m.shape(), rhs.m.shape(), "shape mismatch in max_abs_diff");
        self.m
            .iter()
            .zip(rhs.m.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    fn same_shape(&self, rhs: &Self) -> Result<()> {
        if self.m.shape() != rhs.m.shape() {
            return Err(Error::DimensionMismatch(format!(
                "expected {}x{}, got {}x{}",
                self.rows(),
                self.cols(),
                rhs.rows(),
                rhs.cols()
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixWire {
    rows: usize,
    cols: usize,
    entries: Vec<[f64; 2]>,
}

impl Serialize for ComplexMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut entries = Vec::with_capacity(self.rows() * self.cols());
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                let z = self.m[(i, j)];
                entries.push([z.re, z.im]);
            }
        }
        MatrixWire { rows: self.rows(), cols: self.cols(), entries }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ComplexMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let wire = MatrixWire::deserialize(deserializer)?;
        let entries = wire.entries.iter().map(|&[re, im]| C64::new(re, im)).collect();
        ComplexMatrix::new(wire.rows, wire.cols, entries).map_err(D::Error::custom)
    }
}

/// Serde helpers for complex vectors as `[[re, im], ...]`.
pub mod wire {
    use super::*;

    pub fn serialize_cvector<S: Serializer>(
        v: &DVector<C64>,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let pairs: Vec<[f64; 2]> = v.iter().map(|z| [z.re, z.im]).collect();
        pairs.serialize(serializer)
    }

    pub fn deserialize_cvector<'de, D: Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<DVector<C64>, D::Error> {
        let pairs = Vec::<[f64; 2]>::deserialize(deserializer)?;
        if pairs.is_empty() {
            return Err(D::Error::custom("vector must be non-empty"));
        }
        if pairs.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(D::Error::custom("vector contains NaN or infinite entries"));
        }
        Ok(DVector::from_iterator(
            pairs.len(),
            pairs.iter().map(|&[re, im]| C64::new(re, im)),
        ))
    }
}

/// Square complex matrix certified self-adjoint at construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct HermitianOperator {
    matrix: ComplexMatrix,
}

impl HermitianOperator {
    /// Certify with the default tolerance [`TOL_HERM`].
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        Self::with_tolerance(matrix, TOL_HERM)
    }

    /// Certify `‖A - A†‖ ≤ tol · max(1, ‖A‖)` in operator norm.
    pub fn with_tolerance(matrix: ComplexMatrix, tol: f64) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "Hermitian operator must be square, got {}x{}",
                matrix.rows(),
                matrix.cols()
            )));
        }
        let asym = matrix.sub(&matrix.adjoint())?.operator_norm()?;
        let scale = norm_scale(matrix.operator_norm()?);
        if asym > tol * scale {
            return Err(Error::NonHermitian { residual: asym / scale });
        }
        Ok(Self { matrix })
    }

    /// Dimension of the underlying space.
    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    /// Expectation `<u, A u>` as a real number (the imaginary part is rounding noise).
    pub fn expectation(&self, u: &DVector<C64>) -> Result<f64> {
        let au = self.matrix.apply(u)?;
        Ok(u.dotc(&au).re)
    }

    /// Symmetrize `(A + A†)/2`, absorbing rounding-level asymmetry.
    pub fn symmetrized(matrix: &ComplexMatrix) -> Result<Self> {
        let sym = matrix.add(&matrix.adjoint())?.scale(C64::new(0.5, 0.0));
        Self::new(sym)
    }
}

impl<'de> Deserialize<'de> for HermitianOperator {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let matrix = ComplexMatrix::deserialize(deserializer)?;
        HermitianOperator::new(matrix).map_err(D::Error::custom)
    }
}

/// Eigenvalues (ascending) with one orthogonal projector per distinct eigenvalue.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<f64>,
    projectors: Vec<ComplexMatrix>,
}

impl SpectralDecomposition {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn projectors(&self) -> &[ComplexMatrix] {
        &self.projectors
    }

    pub fn dim(&self) -> usize {
        self.projectors[0].rows()
    }

    /// `Σ λ_k P_k`.
    pub fn reconstruct(&self) -> ComplexMatrix {
        self.map_eigenvalues(|lambda| C64::new(lambda, 0.0))
    }

    /// Apply a scalar function through the spectrum: `Σ f(λ_k) P_k`.
    pub fn map_eigenvalues(&self, f: impl Fn(f64) -> C64) -> ComplexMatrix {
        let n = self.dim();
        let mut acc = DMatrix::<C64>::zeros(n, n);
        for (lambda, p) in self.eigenvalues.iter().zip(&self.projectors) {
            acc += p.as_dmatrix() * f(*lambda);
        }
        ComplexMatrix { m: acc }
    }
}

fn hermitian_eigen(m: &DMatrix<C64>) -> Result<nalgebra::SymmetricEigen<C64, nalgebra::Dyn>> {
    nalgebra::SymmetricEigen::try_new(m.clone(), f64::EPSILON, 100_000)
        .ok_or_else(|| Error::NumericalFailure("Hermitian eigensolver did not converge".into()))
}

/// Spectral decomposition of a Hermitian operator, merging eigenvalues closer
/// than `group_tol` into a single projector.
pub fn spectral_decomposition(
    a: &HermitianOperator,
    group_tol: f64,
) -> Result<SpectralDecomposition> {
    if group_tol < 0.0 {
        return Err(Error::InvalidValue("group_tol must be nonnegative".into()));
    }
    // Symmetrize first so rounding-level asymmetry cannot leak into the solver.
    let sym = (a.matrix().as_dmatrix() + a.matrix().as_dmatrix().adjoint()).scale(0.5);
    let eig = hermitian_eigen(&sym)?;

    let n = a.dim();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));

    let mut eigenvalues = Vec::new();
    let mut projectors = Vec::new();
    let mut group: Vec<usize> = Vec::new();
    let flush = |group: &mut Vec<usize>, eigenvalues: &mut Vec<f64>, projectors: &mut Vec<ComplexMatrix>| {
        if group.is_empty() {
            return;
        }
        let mean = group.iter().map(|&k| eig.eigenvalues[k]).sum::<f64>() / group.len() as f64;
        let mut p = DMatrix::<C64>::zeros(n, n);
        for &k in group.iter() {
            let v = eig.eigenvectors.column(k);
            // p += |v><v|
            for i in 0..n {
                for j in 0..n {
                    p[(i, j)] += v[i] * v[j].conj();
                }
            }
        }
        eigenvalues.push(mean);
        projectors.push(ComplexMatrix { m: p });
        group.clear();
    };

    for &k in &order {
        if let Some(&last) = group.last() {
            if eig.eigenvalues[k] - eig.eigenvalues[last] > group_tol {
                flush(&mut group, &mut eigenvalues, &mut projectors);
            }
        }
        group.push(k);
    }
    flush(&mut group, &mut eigenvalues, &mut projectors);

    let dec = SpectralDecomposition { eigenvalues, projectors };
    let scale = norm_scale(a.matrix().operator_norm()?);
    let recon_err = dec.reconstruct().sub(a.matrix())?.frobenius_norm();
    if recon_err > TOL_RECON * scale {
        return Err(Error::NumericalFailure(format!(
            "spectral reconstruction residual {recon_err:.3e} exceeds {:.3e}",
            TOL_RECON * scale
        )));
    }
    Ok(dec)
}

/// Eigenvalues of the symmetrization `(M + M†)/2`, ascending.
pub fn symmetrized_eigenvalues(m: &ComplexMatrix) -> Result<Vec<f64>> {
    let sym = (m.as_dmatrix() + m.as_dmatrix().adjoint()).scale(0.5);
    let eig = hermitian_eigen(&sym)?;
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    Ok(vals)
}

/// Commutator `AB - BA`. Anti-Hermitian whenever both arguments are Hermitian.
pub fn commutator(a: &HermitianOperator, b: &HermitianOperator) -> Result<ComplexMatrix> {
    commutator_matrices(a.matrix(), b.matrix())
}

/// Commutator of raw square matrices.
pub fn commutator_matrices(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    if a.rows() != b.rows() || a.cols() != b.cols() || !a.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "commutator needs equal square matrices, got {}x{} and {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    a.matmul(b)?.sub(&b.matmul(a)?)
}

/// Kronecker product. Index convention: row `(i_a, i_b)` of the product maps
/// to `i_a * rows_b + i_b`, and columns likewise.
pub fn tensor(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    ComplexMatrix { m: a.as_dmatrix().kronecker(b.as_dmatrix()) }
}

/// Kronecker product of vectors, same index convention as [`tensor`].
pub fn tensor_vec(a: &DVector<C64>, b: &DVector<C64>) -> DVector<C64> {
    let mut out = DVector::zeros(a.len() * b.len());
    for i in 0..a.len() {
        for j in 0..b.len() {
            out[i * b.len() + j] = a[i] * b[j];
        }
    }
    out
}

/// `exp(-i H t / hbar)`, computed through the spectrum of `H`.
pub fn unitary_evolution(h: &HermitianOperator, t: f64, hbar: f64) -> Result<ComplexMatrix> {
    if hbar <= 0.0 || !hbar.is_finite() {
        return Err(Error::InvalidValue(format!("hbar must be positive and finite, got {hbar}")));
    }
    if !t.is_finite() {
        return Err(Error::InvalidValue("evolution time must be finite".into()));
    }
    let dec = spectral_decomposition(h, GROUP_TOL)?;
    let u = dec.map_eigenvalues(|lambda| (C64::new(0.0, -1.0) * (lambda * t / hbar)).exp());
    let unitarity = u
        .adjoint()
        .matmul(&u)?
        .sub(&ComplexMatrix::identity(h.dim()))?
        .frobenius_norm();
    if unitarity > TOL_UNITARY * norm_scale(1.0) * (h.dim() as f64) {
        return Err(Error::NumericalFailure(format!(
            "evolution operator lost unitarity (residual {unitarity:.3e})"
        )));
    }
    Ok(u)
}

/// Computational basis vector `|k>` in dimension `dim`.
pub fn basis_vector(dim: usize, k: usize) -> DVector<C64> {
    let mut v = DVector::zeros(dim);
    v[k] = C64::new(1.0, 0.0);
    v
}

/// Pauli X.
pub fn pauli_x() -> HermitianOperator {
    HermitianOperator::new(
        ComplexMatrix::from_real(2, 2, &[0.0, 1.0, 1.0, 0.0]).expect("static entries"),
    )
    .expect("pauli x is Hermitian")
}

/// Pauli Y.
pub fn pauli_y() -> HermitianOperator {
    let i = C64::new(0.0, 1.0);
    let z = C64::new(0.0, 0.0);
    HermitianOperator::new(ComplexMatrix::new(2, 2, vec![z, -i, i, z]).expect("static entries"))
        .expect("pauli y is Hermitian")
}

/// Pauli Z.
pub fn pauli_z() -> HermitianOperator {
    HermitianOperator::new(ComplexMatrix::from_real_diagonal(&[1.0, -1.0]))
        .expect("pauli z is Hermitian")
}
