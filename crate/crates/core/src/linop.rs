//! Operator and superoperator algebra.
//!
//! Operators on a `d`-dimensional Hilbert space are vectorized by row
//! stacking, `|A) = sum_{n,n'} A_{nn'} |n> (x) |n'>`, so that component
//! `n * d + n'` of the vector holds `A[(n, n')]`. Under this convention the
//! map `rho -> K rho K^dag` has matrix `K (x) conj(K)` and a superoperator
//! element `E[(m * d + n, m' * d + n')]` equals `<m| E(|m'><n'|) |n>`.
//! The trace functional is the row vector `(1|`, and `(A|B) = Tr(A^dag B)`.
//!
//! Every module of this crate uses this convention; nothing else is supported.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Eigenvalues with `|lambda| >= 1 - PERIPHERAL_TOL` are peripheral and
/// eigenvalues with `|lambda - 1| < PERIPHERAL_TOL` count toward the unit
/// eigenvalue multiplicity.
pub const PERIPHERAL_TOL: f64 = 1e-9;

/// Default tolerance for CPTP checks of user-supplied maps.
pub const CPTP_TOL: f64 = 1e-9;

/// Default tolerance for density-matrix validation.
pub const STATE_TOL: f64 = 1e-9;

pub(crate) fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Spectral (operator 2-) norm of a matrix.
pub fn op_norm(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd_unordered(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Largest absolute entry.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `m^k` by repeated squaring. `m^0` is the identity.
pub fn mat_pow(m: &CMatrix, mut k: usize) -> CMatrix {
    let n = m.nrows();
    let mut result = CMatrix::identity(n, n);
    let mut base = m.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        k >>= 1;
        if k > 0 {
            base = &base * &base;
        }
    }
    result
}

/// A square complex matrix acting on the system Hilbert space.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator(CMatrix);

impl Operator {
    pub fn new(m: CMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(Error::Empty);
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidArgument("non-finite operator entry".into()));
        }
        Ok(Operator(m))
    }

    /// Builds an operator from row-major real entries.
    pub fn from_real_rows(d: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                found: entries.len(),
            });
        }
        Operator::new(CMatrix::from_row_iterator(
            d,
            d,
            entries.iter().map(|&x| c(x)),
        ))
    }

    pub fn identity(d: usize) -> Self {
        Operator(CMatrix::identity(d, d))
    }

    /// `|i><j|` in a `d`-dimensional space.
    pub fn ket_bra(d: usize, i: usize, j: usize) -> Self {
        let mut m = CMatrix::zeros(d, d);
        m[(i, j)] = c(1.0);
        Operator(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    /// `sqrt(w) * self`, for weighted Kraus operators.
    pub fn scale_sqrt(&self, w: f64) -> Operator {
        Operator(self.0.scale(w.sqrt()))
    }

    pub fn adjoint(&self) -> Operator {
        Operator(self.0.adjoint())
    }

    pub fn trace(&self) -> Complex64 {
        self.0.trace()
    }

    /// Hilbert–Schmidt inner product `Tr(self^dag other)`.
    pub fn hs_inner(&self, other: &Operator) -> Complex64 {
        (self.0.adjoint() * &other.0).trace()
    }
}

/// A validated quantum state: hermitian, unit trace, positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(Operator);

impl DensityMatrix {
    pub fn new(op: Operator) -> Result<Self> {
        Self::with_tolerance(op, STATE_TOL)
    }

    pub fn with_tolerance(op: Operator, tol: f64) -> Result<Self> {
        let m = op.matrix();
        let herm = max_abs(&(m - m.adjoint()));
        if herm > tol {
            return Err(Error::InvalidState(format!("not hermitian ({herm:e})")));
        }
        let tr = m.trace();
        if (tr - c(1.0)).norm() > tol {
            return Err(Error::InvalidState(format!("trace {tr} != 1")));
        }
        let h = (m + m.adjoint()).scale(0.5);
        let min_eig = h
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -tol {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {min_eig:e}"
            )));
        }
        Ok(DensityMatrix(op))
    }

    /// Hermitizes and trace-normalizes `m` without further checks.
    pub(crate) fn normalized_unchecked(m: CMatrix) -> Result<Self> {
        let h = (&m + m.adjoint()).scale(0.5);
        let tr = h.trace().re;
        if !(tr.abs() > 1e-300) || !tr.is_finite() {
            return Err(Error::Numerical("state with vanishing trace".into()));
        }
        Ok(DensityMatrix(Operator(h.unscale(tr))))
    }

    /// `|psi><psi|` for a (not necessarily normalized) vector.
    pub fn pure(psi: &[Complex64]) -> Result<Self> {
        let v = CVector::from_column_slice(psi);
        let norm = v.norm();
        if norm == 0.0 {
            return Err(Error::InvalidState("zero vector".into()));
        }
        let v = v.unscale(norm);
        DensityMatrix::new(Operator::new(&v * v.adjoint())?)
    }

    /// Maximally mixed state `1/d`.
    pub fn maximally_mixed(d: usize) -> Self {
        DensityMatrix(Operator(CMatrix::identity(d, d).unscale(d as f64)))
    }

    /// Qubit state `(1 + r . sigma) / 2` with basis order `(|up>, |down>)`.
    pub fn from_bloch(x: f64, y: f64, z: f64) -> Result<Self> {
        let m = CMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new((1.0 + z) / 2.0, 0.0),
                Complex64::new(x / 2.0, -y / 2.0),
                Complex64::new(x / 2.0, y / 2.0),
                Complex64::new((1.0 - z) / 2.0, 0.0),
            ],
        );
        DensityMatrix::new(Operator::new(m)?)
    }

    /// Bloch vector `(<sigma_x>, <sigma_y>, <sigma_z>)` of a qubit state.
    pub fn bloch(&self) -> Option<[f64; 3]> {
        if self.dim() != 2 {
            return None;
        }
        let m = self.matrix();
        Some([
            2.0 * m[(1, 0)].re,
            2.0 * m[(1, 0)].im,
            (m[(0, 0)] - m[(1, 1)]).re,
        ])
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn matrix(&self) -> &CMatrix {
        self.0.matrix()
    }

    pub fn operator(&self) -> &Operator {
        &self.0
    }

    pub fn vectorize(&self) -> VectorizedOperator {
        vectorize(&self.0)
    }
}

/// An operator in vectorized form.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorizedOperator {
    dim: usize,
    data: CVector,
}

impl VectorizedOperator {
    pub fn from_vector(dim: usize, data: CVector) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: data.len(),
            });
        }
        Ok(VectorizedOperator { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &CVector {
        &self.data
    }

    pub fn into_data(self) -> CVector {
        self.data
    }

    /// `(self|other) = Tr(A^dag B)`.
    pub fn inner(&self, other: &VectorizedOperator) -> Complex64 {
        self.data.dotc(&other.data)
    }
}

pub fn vectorize(a: &Operator) -> VectorizedOperator {
    let d = a.dim();
    let m = a.matrix();
    let data = CVector::from_iterator(d * d, (0..d).flat_map(|n| (0..d).map(move |np| m[(n, np)])));
    VectorizedOperator { dim: d, data }
}

pub fn devectorize(v: &VectorizedOperator) -> Operator {
    let d = v.dim;
    Operator(CMatrix::from_row_iterator(d, d, v.data.iter().cloned()))
}

/// The trace functional `(1|` as a row vector of length `d^2`.
pub fn trace_row(d: usize) -> CVector {
    let mut v = CVector::zeros(d * d);
    for n in 0..d {
        v[n * d + n] = c(1.0);
    }
    v
}

/// Outcome of a CPTP check.
#[derive(Debug, Clone, Serialize)]
pub struct CptpReport {
    /// `max_j |((1|E)_j - (1|_j)|`.
    pub trace_residual: f64,
    /// Hermiticity defect of the Choi matrix.
    pub hermiticity_residual: f64,
    /// Smallest eigenvalue of the (hermitized) Choi matrix.
    pub min_choi_eigenvalue: f64,
    /// `max(0, -min_choi_eigenvalue)`.
    pub positivity_residual: f64,
    pub tolerance: f64,
    pub trace_preserving: bool,
    pub completely_positive: bool,
}

impl CptpReport {
    pub fn passed(&self) -> bool {
        self.trace_preserving && self.completely_positive
    }
}

/// A linear map on operators, stored as a `d^2 x d^2` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Superoperator {
    dim: usize,
    matrix: CMatrix,
}

impl Superoperator {
    pub fn from_matrix(dim: usize, matrix: CMatrix) -> Result<Self> {
        let n = dim * dim;
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: matrix.nrows().max(matrix.ncols()),
            });
        }
        Ok(Superoperator { dim, matrix })
    }

    pub fn identity(dim: usize) -> Self {
        Superoperator {
            dim,
            matrix: CMatrix::identity(dim * dim, dim * dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Superoperator {
            dim,
            matrix: CMatrix::zeros(dim * dim, dim * dim),
        }
    }

    /// The reset map `rho -> Tr(rho) rho0`, i.e. `|rho0)(1|`.
    pub fn reset(rho0: &DensityMatrix) -> Self {
        let d = rho0.dim();
        let v = rho0.vectorize().into_data();
        let t = trace_row(d);
        Superoperator {
            dim: d,
            matrix: &v * t.transpose(),
        }
    }

    /// `rho -> sum_k K_k rho K_k^dag`, i.e. `sum_k K_k (x) conj(K_k)`.
    pub fn from_kraus(kraus: &[Operator]) -> Result<Self> {
        let first = kraus.first().ok_or(Error::Empty)?;
        let d = first.dim();
        let mut m = CMatrix::zeros(d * d, d * d);
        for k in kraus {
            if k.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: k.dim(),
                });
            }
            m += k.matrix().kronecker(&k.matrix().conjugate());
        }
        Ok(Superoperator { dim: d, matrix: m })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn apply(&self, a: &Operator) -> Result<Operator> {
        if a.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: a.dim(),
            });
        }
        let v = vectorize(a);
        Ok(devectorize(&VectorizedOperator {
            dim: self.dim,
            data: &self.matrix * v.data,
        }))
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Superoperator) -> Result<Superoperator> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        Ok(Superoperator {
            dim: self.dim,
            matrix: &self.matrix * &other.matrix,
        })
    }

    pub fn scale(&self, factor: f64) -> Superoperator {
        Superoperator {
            dim: self.dim,
            matrix: self.matrix.scale(factor),
        }
    }

    /// Choi matrix `sum_{m',n'} |m'><n'| (x) E(|m'><n'|)`.
    pub fn choi(&self) -> CMatrix {
        let d = self.dim;
        let mut choi = CMatrix::zeros(d * d, d * d);
        for mp in 0..d {
            for np in 0..d {
                for m in 0..d {
                    for n in 0..d {
                        choi[(mp * d + m, np * d + n)] = self.matrix[(m * d + n, mp * d + np)];
                    }
                }
            }
        }
        choi
    }

    /// Kraus decomposition from the Choi spectrum, dropping eigenvalues
    /// below `tol * max_eigenvalue`.
    pub fn kraus(&self, tol: f64) -> Result<Vec<Operator>> {
        let d = self.dim;
        let choi = self.choi();
        let h = (&choi + choi.adjoint()).scale(0.5);
        let eig = h.symmetric_eigen();
        let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let mut out = Vec::new();
        for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda <= tol * lmax || lambda <= 0.0 {
                continue;
            }
            let v = eig.eigenvectors.column(i);
            let root = lambda.sqrt();
            let mut k = CMatrix::zeros(d, d);
            for mp in 0..d {
                for m in 0..d {
                    k[(m, mp)] = v[mp * d + m] * root;
                }
            }
            out.push(Operator(k));
        }
        Ok(out)
    }
}

/// Checks trace preservation and complete positivity of `e` within `tol`.
pub fn validate_cptp(e: &Superoperator, tol: f64) -> CptpReport {
    let d = e.dim();
    let one = trace_row(d);
    let left = e.matrix().transpose() * &one;
    let trace_residual = (&left - &one).iter().map(|z| z.norm()).fold(0.0, f64::max);
    let choi = e.choi();
    let hermiticity_residual = max_abs(&(&choi - choi.adjoint()));
    let h = (&choi + choi.adjoint()).scale(0.5);
    let min_choi_eigenvalue = h
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let positivity_residual = (-min_choi_eigenvalue).max(0.0);
    CptpReport {
        trace_residual,
        hermiticity_residual,
        min_choi_eigenvalue,
        positivity_residual,
        tolerance: tol,
        trace_preserving: trace_residual <= tol,
        completely_positive: positivity_residual <= tol && hermiticity_residual <= tol,
    }
}

pub(crate) fn require_cptp(e: &Superoperator, tol: f64) -> Result<()> {
    let r = validate_cptp(e, tol);
    if r.passed() {
        Ok(())
    } else {
        Err(Error::NotCptp {
            trace_residual: r.trace_residual,
            positivity_residual: r.positivity_residual.max(r.hermiticity_residual),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Classification {
    NonErgodic,
    ErgodicNotMixing,
    Mixing,
}

impl Classification {
    pub fn is_ergodic(self) -> bool {
        !matches!(self, Classification::NonErgodic)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Classification::NonErgodic => "NonErgodic",
            Classification::ErgodicNotMixing => "ErgodicNotMixing",
            Classification::Mixing => "Mixing",
        }
    }
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Fixed-point data of an ergodic channel.
#[derive(Debug, Clone)]
pub struct Stationary {
    pub rho: DensityMatrix,
    /// `P* = |rho*)(1|`.
    pub projector: CMatrix,
    /// `Q* = 1 - P*`.
    pub complement: CMatrix,
    /// `E' = E - P*`.
    pub remainder: CMatrix,
    /// `(1 - E')^{-1} = (1 - E + P*)^{-1}`; commutes with `P*` and `Q*`.
    pub fundamental: CMatrix,
    /// Reduced resolvent `R = (1 - E')^{-1} Q*`.
    pub reduced_resolvent: CMatrix,
}

#[derive(Debug, Clone)]
pub struct SpectralData {
    /// Eigenvalues sorted by modulus, descending.
    pub eigenvalues: Vec<Complex64>,
    /// Number of eigenvalues within `tol` of 1.
    pub unit_multiplicity: usize,
    pub classification: Classification,
    /// `1 - max |lambda|` over the eigenvalues other than the simple unit one.
    pub spectral_gap: f64,
    pub stationary: Option<Stationary>,
}

impl SpectralData {
    pub fn stationary(&self) -> Result<&Stationary> {
        self.stationary.as_ref().ok_or(Error::NoUniqueFixedPoint)
    }

    pub fn fixed_point(&self) -> Result<&DensityMatrix> {
        self.stationary().map(|s| &s.rho)
    }
}

/// Eigenvalues of a general complex matrix from its complex Schur form.
pub fn eigenvalues(m: &CMatrix) -> Result<Vec<Complex64>> {
    let n = m.nrows();
    if n == 1 {
        return Ok(vec![m[(0, 0)]]);
    }
    let schur = nalgebra::Schur::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("Schur decomposition did not converge".into()))?;
    let (_, t) = schur.unpack();
    Ok((0..n).map(|i| t[(i, i)]).collect())
}

/// Spectrum, mixing classification, fixed point and reduced resolvent.
pub fn spectral_decompose(e: &Superoperator, tol: f64) -> Result<SpectralData> {
    require_cptp(e, CPTP_TOL.max(tol))?;
    let d = e.dim();
    let n = d * d;
    let mut eigs = eigenvalues(e.matrix())?;
    eigs.sort_by(|a, b| b.norm().partial_cmp(&a.norm()).unwrap_or(std::cmp::Ordering::Equal));

    let unit_multiplicity = eigs.iter().filter(|l| (*l - c(1.0)).norm() < tol).count();
    if unit_multiplicity == 0 {
        return Err(Error::Numerical("CPTP map without unit eigenvalue".into()));
    }

    let mut skipped_unit = false;
    let mut others_max: f64 = 0.0;
    for l in &eigs {
        if !skipped_unit && (*l - c(1.0)).norm() < tol {
            skipped_unit = true;
            continue;
        }
        others_max = others_max.max(l.norm());
    }

    let classification = if unit_multiplicity > 1 {
        Classification::NonErgodic
    } else if others_max >= 1.0 - tol {
        Classification::ErgodicNotMixing
    } else {
        Classification::Mixing
    };
    let spectral_gap = if unit_multiplicity > 1 {
        0.0
    } else {
        (1.0 - others_max).max(0.0)
    };

    let stationary = if classification.is_ergodic() {
        let shifted = e.matrix() - CMatrix::identity(n, n);
        let svd = shifted.svd(false, true);
        let v_t = svd
            .v_t
            .ok_or_else(|| Error::Numerical("SVD without right vectors".into()))?;
        let (imin, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
        let x: CVector = v_t.row(imin).adjoint();
        let rho = DensityMatrix::normalized_unchecked(devectorize(&VectorizedOperator {
            dim: d,
            data: x,
        }).into_matrix())?;
        let rv = rho.vectorize().into_data();
        let projector = &rv * trace_row(d).transpose();
        let complement = CMatrix::identity(n, n) - &projector;
        let remainder = e.matrix() - &projector;
        let core = CMatrix::identity(n, n) - &remainder;
        let fundamental = core
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("1 - E + P* is singular".into()))?;
        let reduced_resolvent = &fundamental * &complement;
        Some(Stationary {
            rho,
            projector,
            complement,
            remainder,
            fundamental,
            reduced_resolvent,
        })
    } else {
        None
    };

    Ok(SpectralData {
        eigenvalues: eigs,
        unit_multiplicity,
        classification,
        spectral_gap,
        stationary,
    })
}

/// `(1/N) sum_{n=0}^{N-1} E^n` by direct summation of powers.
pub fn cesaro_mean(e: &Superoperator, n: usize) -> Result<Superoperator> {
    let spec = spectral_decompose(e, PERIPHERAL_TOL)?;
    spec.stationary()?;
    if n == 0 {
        return Err(Error::InvalidArgument("N must be positive".into()));
    }
    let size = e.dim() * e.dim();
    let mut acc = CMatrix::zeros(size, size);
    let mut power = CMatrix::identity(size, size);
    for _ in 0..n {
        acc += &power;
        power = e.matrix() * &power;
    }
    Ok(Superoperator {
        dim: e.dim(),
        matrix: acc.unscale(n as f64),
    })
}

/// `P* + (1/N)(1 - E'^N)(1 - E')^{-1} Q*`.
pub fn cesaro_closed_form(spec: &SpectralData, n: usize) -> Result<CMatrix> {
    let st = spec.stationary()?;
    let size = st.projector.nrows();
    let tail = CMatrix::identity(size, size) - mat_pow(&st.remainder, n);
    Ok(&st.projector + (tail * &st.reduced_resolvent).unscale(n as f64))
}
