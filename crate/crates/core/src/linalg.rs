//! Dense complex linear algebra: validated operator types, Haar sampling,
//! Hermitian exponentials and tensor-factor permutation operators.
//!
//! Qubit ordering: wire 0 is the leftmost tensor factor, i.e. the most
//! significant bit of a computational-basis index.

use std::sync::RwLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perm::Permutation;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;
pub type RMatrix = DMatrix<f64>;
pub type RVector = DVector<f64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

/// Numerical tolerances for operator validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Hermiticity and unit-trace checks.
    pub construction: f64,
    /// Frobenius bound on `U U† - I`.
    pub unitarity: f64,
    /// Most negative eigenvalue accepted for a density matrix.
    pub psd: f64,
    /// Largest Hilbert-space dimension accepted by dense routines.
    pub max_dim: usize,
}

impl Tolerances {
    pub const DEFAULT: Tolerances = Tolerances {
        construction: 1e-12,
        unitarity: 1e-10,
        psd: 1e-10,
        max_dim: 64,
    };
}

impl Default for Tolerances {
    fn default() -> Self {
        Self::DEFAULT
    }
}

static TOLERANCES: RwLock<Tolerances> = RwLock::new(Tolerances::DEFAULT);

/// Current process-wide tolerances.
pub fn tolerances() -> Tolerances {
    *TOLERANCES.read().unwrap_or_else(|e| e.into_inner())
}

/// Replace the process-wide tolerances (normally once, from a config file).
pub fn set_tolerances(tol: Tolerances) {
    *TOLERANCES.write().unwrap_or_else(|e| e.into_inner()) = tol;
}

fn check_dim(d: usize) -> Result<()> {
    if d == 0 {
        return Err(Error::InvalidDimension("dimension must be positive".into()));
    }
    let max = tolerances().max_dim;
    if d > max {
        return Err(Error::Resource(format!(
            "dimension {d} exceeds the dense limit {max}"
        )));
    }
    Ok(())
}

fn check_square_finite(m: &CMatrix) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidDimension(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    check_dim(m.nrows())?;
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::ContractViolation("matrix has non-finite entries".into()));
    }
    Ok(m.nrows())
}

pub fn dagger(a: &CMatrix) -> CMatrix {
    a.adjoint()
}

pub fn trace(a: &CMatrix) -> Complex64 {
    a.trace()
}

/// `Tr(A B)` without forming the product.
pub fn trace_of_product(a: &CMatrix, b: &CMatrix) -> Complex64 {
    let d = a.nrows();
    let mut acc = ZERO;
    for i in 0..d {
        for k in 0..d {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

pub fn frobenius_norm(a: &CMatrix) -> f64 {
    a.norm()
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Kronecker product of a list, left factor most significant.
pub fn kron_all(factors: &[CMatrix]) -> CMatrix {
    factors
        .iter()
        .fold(CMatrix::identity(1, 1), |acc, f| acc.kronecker(f))
}

/// Largest entry of `A - A†`, relative to `max(1, max|A_ij|)`.
pub fn hermiticity_error(a: &CMatrix) -> f64 {
    let scale = a.iter().map(|z| z.norm()).fold(1.0_f64, f64::max);
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst / scale
}

/// Hermitian eigendecomposition, eigenvalues ascending with matching
/// eigenvector columns. The input is symmetrized first.
pub fn eigh(a: &CMatrix) -> (RVector, CMatrix) {
    let sym = (a + a.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(sym);
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = RVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Real symmetric eigendecomposition, eigenvalues ascending.
pub fn eigh_real(a: &RMatrix) -> (RVector, RMatrix) {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = RVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = RMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Condition number of a real symmetric matrix from its eigenvalues.
pub fn condition_number_sym(a: &RMatrix) -> f64 {
    let (vals, _) = eigh_real(a);
    let max = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let min = vals.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solve `A X = B` for symmetric positive definite `A` via Cholesky.
pub fn solve_spd(a: &RMatrix, b: &RMatrix, context: &str) -> Result<RMatrix> {
    match a.clone().cholesky() {
        Some(ch) => Ok(ch.solve(b)),
        None => Err(Error::Conditioning {
            condition_number: condition_number_sym(a),
            context: context.to_string(),
        }),
    }
}

/// Solve a general square system via LU; fails on exact singularity.
pub fn solve(a: &RMatrix, b: &RMatrix) -> Result<RMatrix> {
    a.clone().lu().solve(b).ok_or_else(|| Error::Conditioning {
        condition_number: f64::INFINITY,
        context: "singular linear system".into(),
    })
}

/// Moore-Penrose pseudo-inverse of a real symmetric matrix, discarding
/// eigenvalues below `rel_cutoff * max|λ|`.
pub fn pinv_sym(a: &RMatrix, rel_cutoff: f64) -> RMatrix {
    let (vals, vecs) = eigh_real(a);
    let max = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let inv = RVector::from_iterator(
        vals.len(),
        vals.iter()
            .map(|&v| if v.abs() > rel_cutoff * max { 1.0 / v } else { 0.0 }),
    );
    &vecs * RMatrix::from_diagonal(&inv) * vecs.transpose()
}

/// Single-qubit Paulis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn matrix(self) -> CMatrix {
        let (a, b, c, d) = match self {
            Pauli::I => (ONE, ZERO, ZERO, ONE),
            Pauli::X => (ZERO, ONE, ONE, ZERO),
            Pauli::Y => (ZERO, -I, I, ZERO),
            Pauli::Z => (ONE, ZERO, ZERO, -ONE),
        };
        CMatrix::from_row_slice(2, 2, &[a, b, c, d])
    }

    pub fn from_char(c: char) -> Result<Self> {
        match c.to_ascii_uppercase() {
            'I' => Ok(Pauli::I),
            'X' => Ok(Pauli::X),
            'Y' => Ok(Pauli::Y),
            'Z' => Ok(Pauli::Z),
            other => Err(Error::ContractViolation(format!("unknown Pauli '{other}'"))),
        }
    }

    pub fn label(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }
}

/// Matrix of a Pauli string such as `"ZIX"` (first letter acts on wire 0).
pub fn pauli_string_matrix(s: &str) -> Result<CMatrix> {
    let factors = s
        .chars()
        .map(|c| Pauli::from_char(c).map(Pauli::matrix))
        .collect::<Result<Vec<_>>>()?;
    if factors.is_empty() {
        return Err(Error::InvalidDimension("empty Pauli string".into()));
    }
    Ok(kron_all(&factors))
}

/// Embed a `2^k x 2^k` gate acting on wires `first..first+k` of `n` qubits.
pub fn embed(gate: &CMatrix, first: usize, n: usize) -> CMatrix {
    let k = gate.nrows().trailing_zeros() as usize;
    assert!(first + k <= n, "gate does not fit on the register");
    let left = CMatrix::identity(1 << first, 1 << first);
    let right_dim = 1 << (n - first - k);
    let right = CMatrix::identity(right_dim, right_dim);
    left.kronecker(gate).kronecker(&right)
}

/// Serde encoding of a complex matrix as a list of rows, each entry a
/// `[re, im]` pair.
pub mod complex_pairs {
    use super::CMatrix;
    use num_complex::Complex64;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &CMatrix, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<[f64; 2]>> = (0..m.nrows())
            .map(|r| (0..m.ncols()).map(|c| [m[(r, c)].re, m[(r, c)].im]).collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CMatrix, D::Error> {
        let rows: Vec<Vec<[f64; 2]>> = Vec::deserialize(d)?;
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Ok(CMatrix::from_fn(nrows, ncols, |r, c| {
            Complex64::new(rows[r][c][0], rows[r][c][1])
        }))
    }
}

/// Serde for real matrices as a list of rows.
pub mod real_rows {
    use super::RMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &RMatrix, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<RMatrix, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Ok(RMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
    }
}

/// Serde for real vectors as a plain list.
pub mod real_vec {
    use super::RVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &RVector, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<RVector, D::Error> {
        Ok(RVector::from_vec(Vec::deserialize(d)?))
    }
}

#[derive(Serialize, Deserialize)]
struct ObservableRepr {
    #[serde(with = "complex_pairs")]
    matrix: CMatrix,
    label: String,
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    #[serde(with = "complex_pairs")]
    matrix: CMatrix,
}

impl TryFrom<ObservableRepr> for HermitianObservable {
    type Error = Error;
    fn try_from(r: ObservableRepr) -> Result<Self> {
        Self::new(r.matrix, r.label)
    }
}

impl From<HermitianObservable> for ObservableRepr {
    fn from(o: HermitianObservable) -> Self {
        Self {
            matrix: o.matrix,
            label: o.label,
        }
    }
}

impl TryFrom<MatrixRepr> for DensityMatrix {
    type Error = Error;
    fn try_from(r: MatrixRepr) -> Result<Self> {
        Self::new(r.matrix)
    }
}

impl From<DensityMatrix> for MatrixRepr {
    fn from(o: DensityMatrix) -> Self {
        Self { matrix: o.matrix }
    }
}

impl TryFrom<MatrixRepr> for UnitaryOperator {
    type Error = Error;
    fn try_from(r: MatrixRepr) -> Result<Self> {
        Self::new(r.matrix)
    }
}

impl From<UnitaryOperator> for MatrixRepr {
    fn from(o: UnitaryOperator) -> Self {
        Self { matrix: o.matrix }
    }
}

/// A `d x d` Hermitian operator with a text label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ObservableRepr", into = "ObservableRepr")]
pub struct HermitianObservable {
    matrix: CMatrix,
    label: String,
}

impl HermitianObservable {
    pub fn new(matrix: CMatrix, label: impl Into<String>) -> Result<Self> {
        check_square_finite(&matrix)?;
        let err = hermiticity_error(&matrix);
        if err > tolerances().construction {
            return Err(Error::ContractViolation(format!(
                "observable is not Hermitian (deviation {err:.2e})"
            )));
        }
        Ok(Self {
            matrix,
            label: label.into(),
        })
    }

    /// Pauli string observable; the label is the string itself.
    pub fn pauli(s: &str) -> Result<Self> {
        let m = pauli_string_matrix(s)?;
        check_dim(m.nrows())?;
        Ok(Self {
            matrix: m,
            label: s.to_ascii_uppercase(),
        })
    }

    pub fn identity(d: usize) -> Result<Self> {
        check_dim(d)?;
        Ok(Self {
            matrix: CMatrix::identity(d, d),
            label: "I".into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Eigenvalues (ascending) and eigenvectors.
    pub fn eigh(&self) -> (RVector, CMatrix) {
        eigh(&self.matrix)
    }

    /// Largest absolute eigenvalue.
    pub fn spectral_radius(&self) -> f64 {
        let (v, _) = self.eigh();
        v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    /// Whether `X^2 = I` to construction tolerance.
    pub fn is_involutory(&self) -> bool {
        let d = self.dim();
        let sq = &self.matrix * &self.matrix - CMatrix::identity(d, d);
        sq.iter().all(|z| z.norm() <= 1e-12)
    }
}

/// A `d x d` density matrix: Hermitian, unit trace, positive semidefinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr", into = "MatrixRepr")]
pub struct DensityMatrix {
    matrix: CMatrix,
}

impl DensityMatrix {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        check_square_finite(&matrix)?;
        let tol = tolerances();
        let herm = hermiticity_error(&matrix);
        if herm > tol.construction {
            return Err(Error::ContractViolation(format!(
                "density matrix is not Hermitian (deviation {herm:.2e})"
            )));
        }
        let tr = matrix.trace();
        if (tr - ONE).norm() > tol.construction {
            return Err(Error::ContractViolation(format!(
                "density matrix trace is {tr}, expected 1"
            )));
        }
        let (vals, _) = eigh(&matrix);
        if vals[0] < -tol.psd {
            return Err(Error::ContractViolation(format!(
                "density matrix has negative eigenvalue {:.3e}",
                vals[0]
            )));
        }
        Ok(Self { matrix })
    }

    /// `|ψ⟩⟨ψ|` for a vector normalized to 1 within construction tolerance.
    pub fn from_pure(psi: &CVector) -> Result<Self> {
        check_dim(psi.len())?;
        let norm2 = psi.norm_squared();
        if (norm2 - 1.0).abs() > 1e-10 {
            return Err(Error::ContractViolation(format!(
                "state vector has squared norm {norm2}, expected 1"
            )));
        }
        Ok(Self::from_pure_unchecked(psi))
    }

    /// `|ψ⟩⟨ψ| / ⟨ψ|ψ⟩` for any nonzero vector.
    pub fn from_unnormalized(psi: &CVector) -> Result<Self> {
        check_dim(psi.len())?;
        let n = psi.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ContractViolation("cannot normalize state vector".into()));
        }
        Ok(Self::from_pure_unchecked(&(psi / Complex64::new(n, 0.0))))
    }

    pub(crate) fn from_pure_unchecked(psi: &CVector) -> Self {
        Self {
            matrix: psi * psi.adjoint(),
        }
    }

    /// Computational basis state `|k⟩⟨k|`.
    pub fn basis(d: usize, k: usize) -> Result<Self> {
        check_dim(d)?;
        if k >= d {
            return Err(Error::InvalidDimension(format!("basis index {k} >= {d}")));
        }
        let mut m = CMatrix::zeros(d, d);
        m[(k, k)] = ONE;
        Ok(Self { matrix: m })
    }

    pub fn maximally_mixed(d: usize) -> Result<Self> {
        check_dim(d)?;
        Ok(Self {
            matrix: CMatrix::identity(d, d) / Complex64::new(d as f64, 0.0),
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn purity(&self) -> f64 {
        trace_of_product(&self.matrix, &self.matrix).re
    }

    /// `U ρ U†`.
    pub fn evolve(&self, u: &UnitaryOperator) -> Result<Self> {
        if u.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: u.dim(),
            });
        }
        let m = u.matrix() * &self.matrix * u.matrix().adjoint();
        // restore exact Hermiticity lost to roundoff
        let m = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
        Ok(Self { matrix: m })
    }

    /// `Tr(ρ O)`, real for Hermitian arguments.
    pub fn expectation(&self, o: &HermitianObservable) -> Result<f64> {
        if o.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: o.dim(),
            });
        }
        Ok(trace_of_product(&self.matrix, o.matrix()).re)
    }
}

/// A `d x d` unitary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr", into = "MatrixRepr")]
pub struct UnitaryOperator {
    matrix: CMatrix,
}

impl UnitaryOperator {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        let d = check_square_finite(&matrix)?;
        let err = unitarity_error(&matrix);
        if err > tolerances().unitarity {
            return Err(Error::ContractViolation(format!(
                "matrix is not unitary (‖UU† − I‖_F = {err:.2e})"
            )));
        }
        debug_assert_eq!(matrix.nrows(), d);
        Ok(Self { matrix })
    }

    /// Wrap a matrix known to be unitary by construction.
    pub(crate) fn from_trusted(matrix: CMatrix) -> Self {
        debug_assert!(unitarity_error(&matrix) < 1e-8);
        Self { matrix }
    }

    pub fn identity(d: usize) -> Result<Self> {
        check_dim(d)?;
        Ok(Self {
            matrix: CMatrix::identity(d, d),
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn dagger(&self) -> Self {
        Self {
            matrix: self.matrix.adjoint(),
        }
    }

    /// `self · other` (apply `other` first).
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            matrix: &self.matrix * &other.matrix,
        }
    }

    /// Multiply by a global phase `e^{iφ}`.
    pub fn with_phase(&self, phi: f64) -> Self {
        Self {
            matrix: &self.matrix * Complex64::from_polar(1.0, phi),
        }
    }

    pub fn unitarity_error(&self) -> f64 {
        unitarity_error(&self.matrix)
    }
}

/// `‖U U† − I‖_F`.
pub fn unitarity_error(u: &CMatrix) -> f64 {
    let d = u.nrows();
    (u * u.adjoint() - CMatrix::identity(d, d)).norm()
}

/// Draw a Haar-random `d x d` unitary: Ginibre matrix, QR, then rescale the
/// columns of Q by the phases of R's diagonal.
pub fn sample_haar_unitary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<UnitaryOperator> {
    if d == 0 {
        return Err(Error::InvalidDimension("Haar dimension must be positive".into()));
    }
    Ok(UnitaryOperator::from_trusted(haar_matrix(d, rng)))
}

pub(crate) fn haar_matrix<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let g = CMatrix::from_fn(d, d, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re * s, im * s)
    });
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        let rjj = r[(j, j)];
        let n = rjj.norm();
        let phase = if n > 0.0 { rjj / n } else { ONE };
        for i in 0..d {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// `exp(iθX)` through the eigendecomposition of `X`.
pub fn expm_hermitian_generator(x: &HermitianObservable, theta: f64) -> UnitaryOperator {
    let (vals, vecs) = x.eigh();
    let phases = CVector::from_iterator(
        vals.len(),
        vals.iter().map(|&l| Complex64::from_polar(1.0, theta * l)),
    );
    let scaled = CMatrix::from_fn(vecs.nrows(), vecs.ncols(), |r, c| vecs[(r, c)] * phases[c]);
    UnitaryOperator::from_trusted(scaled * vecs.adjoint())
}

/// Same as [`expm_hermitian_generator`] but validates a raw matrix first.
pub fn expm_hermitian_matrix(x: &CMatrix, theta: f64) -> Result<UnitaryOperator> {
    let obs = HermitianObservable::new(x.clone(), "")?;
    Ok(expm_hermitian_generator(&obs, theta))
}

/// Maximum `d^p` for which permutation operators are built.
pub const PERMUTATION_OPERATOR_LIMIT: usize = 4096;

/// The operator on `(C^d)^{⊗p}` that moves tensor factor `k` to position
/// `σ(k)`. Stored as the induced permutation of computational basis states.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationOperator {
    permutation: Permutation,
    local_dim: usize,
    basis_images: Vec<usize>,
}

/// Build the operator for `σ` on `p = σ.order()` factors of dimension `d`.
pub fn permutation_operator(sigma: &Permutation, d: usize) -> Result<PermutationOperator> {
    if d == 0 {
        return Err(Error::InvalidDimension("local dimension must be positive".into()));
    }
    let p = sigma.order();
    let total = (0..p).try_fold(1usize, |acc, _| acc.checked_mul(d));
    let total = match total {
        Some(t) if t <= PERMUTATION_OPERATOR_LIMIT => t,
        _ => {
            return Err(Error::Resource(format!(
                "d^p = {d}^{p} exceeds {PERMUTATION_OPERATOR_LIMIT}"
            )))
        }
    };
    let mut digits = vec![0usize; p];
    let mut out = vec![0usize; p];
    let basis_images = (0..total)
        .map(|mut idx| {
            for k in (0..p).rev() {
                digits[k] = idx % d;
                idx /= d;
            }
            for k in 0..p {
                out[sigma.apply(k)] = digits[k];
            }
            out.iter().fold(0, |acc, &x| acc * d + x)
        })
        .collect();
    Ok(PermutationOperator {
        permutation: sigma.clone(),
        local_dim: d,
        basis_images,
    })
}

impl PermutationOperator {
    pub fn p(&self) -> usize {
        self.permutation.order()
    }

    pub fn local_dim(&self) -> usize {
        self.local_dim
    }

    pub fn permutation(&self) -> &Permutation {
        &self.permutation
    }

    pub fn total_dim(&self) -> usize {
        self.basis_images.len()
    }

    /// Index of the basis state that basis state `i` is sent to.
    pub fn basis_image(&self, i: usize) -> usize {
        self.basis_images[i]
    }

    pub fn trace(&self) -> usize {
        self.basis_images
            .iter()
            .enumerate()
            .filter(|(i, j)| i == *j)
            .count()
    }

    /// `self · other`, which equals the operator of `σ_self ∘ σ_other`.
    pub fn compose(&self, other: &Self) -> Self {
        assert_eq!(self.total_dim(), other.total_dim());
        Self {
            permutation: self.permutation.compose(&other.permutation),
            local_dim: self.local_dim,
            basis_images: other
                .basis_images
                .iter()
                .map(|&j| self.basis_images[j])
                .collect(),
        }
    }

    pub fn to_matrix(&self) -> CMatrix {
        let n = self.total_dim();
        let mut m = CMatrix::zeros(n, n);
        for (i, &j) in self.basis_images.iter().enumerate() {
            m[(j, i)] = ONE;
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;
    use crate::stats::MomentEstimate;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn random_hermitian(d: usize, seed: u64) -> CMatrix {
        let mut rng = substream(seed, "herm", 0);
        let g = CMatrix::from_fn(d, d, |_, _| {
            Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        });
        (&g + g.adjoint()) * Complex64::new(0.5, 0.0)
    }

    #[test]
    fn density_matrix_validation() {
        let bad_trace = CMatrix::identity(2, 2);
        assert!(DensityMatrix::new(bad_trace).is_err());
        let mut non_herm = CMatrix::zeros(2, 2);
        non_herm[(0, 0)] = ONE;
        non_herm[(0, 1)] = Complex64::new(0.1, 0.0);
        assert!(DensityMatrix::new(non_herm).is_err());
        let neg = CMatrix::from_diagonal(&CVector::from_vec(vec![
            Complex64::new(1.5, 0.0),
            Complex64::new(-0.5, 0.0),
        ]));
        assert!(DensityMatrix::new(neg).is_err());
        let mut nan = CMatrix::identity(2, 2) * Complex64::new(0.5, 0.0);
        nan[(0, 1)] = Complex64::new(f64::NAN, 0.0);
        assert!(DensityMatrix::new(nan).is_err());
        assert!(DensityMatrix::maximally_mixed(4).is_ok());
        assert!(DensityMatrix::basis(2, 2).is_err());
    }

    #[test]
    fn observables_reject_non_hermitian() {
        let mut m = Pauli::Z.matrix();
        m[(0, 1)] = I;
        assert!(HermitianObservable::new(m, "bad").is_err());
        let zz = HermitianObservable::pauli("ZZ").unwrap();
        assert_eq!(zz.dim(), 4);
        assert!(zz.is_involutory());
        assert!(HermitianObservable::pauli("ZQ").is_err());
    }

    #[test]
    fn json_round_trip_revalidates() {
        let o = HermitianObservable::pauli("XY").unwrap();
        let json = serde_json::to_string(&o).unwrap();
        let back: HermitianObservable = serde_json::from_str(&json).unwrap();
        assert_eq!(back, o);
        let bad = r#"{"matrix":[[[1,0],[1,0]],[[0,0],[1,0]]],"label":"x"}"#;
        assert!(serde_json::from_str::<HermitianObservable>(bad).is_err());
    }

    #[test]
    fn wire_zero_is_most_significant() {
        let z0 = pauli_string_matrix("ZI").unwrap();
        // |10⟩ = index 2 has wire 0 in state 1
        assert_eq!(z0[(2, 2)], -ONE);
        assert_eq!(z0[(1, 1)], ONE);
        assert_eq!(embed(&Pauli::Z.matrix(), 0, 2), z0);
    }

    #[test]
    fn haar_one_dimensional_is_a_phase() {
        let mut rng = substream(1, "t", 0);
        let u = sample_haar_unitary(1, &mut rng).unwrap();
        assert_abs_diff_eq!(u.matrix()[(0, 0)].norm(), 1.0, epsilon = 1e-14);
        assert!(sample_haar_unitary(0, &mut rng).is_err());
    }

    #[test]
    fn haar_first_moment() {
        let mut rng = substream(2, "haar-moment", 0);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| haar_matrix(2, &mut rng)[(0, 0)].norm_sqr())
            .collect();
        let est = MomentEstimate::from_samples(&xs);
        assert!(est.agrees_with(0.5, 4.0), "{est:?}");
    }

    #[test]
    fn haar_second_order_entries() {
        // E[U_ij conj(U_kl)] = δ_ik δ_jl / d
        for d in [2usize, 4] {
            let mut rng = substream(3, "haar-entries", d as u64);
            let n = 10_000;
            let samples: Vec<CMatrix> = (0..n).map(|_| haar_matrix(d, &mut rng)).collect();
            for (i, j, k, l) in [(0, 0, 0, 0), (0, 1, 0, 1), (0, 0, 1, 1), (1, 0, 0, 1)] {
                let re: Vec<f64> = samples
                    .iter()
                    .map(|u| (u[(i, j)] * u[(k, l)].conj()).re)
                    .collect();
                let target = if i == k && j == l { 1.0 / d as f64 } else { 0.0 };
                let est = MomentEstimate::from_samples(&re);
                assert!(est.agrees_with(target, 5.0), "d={d} {i}{j}{k}{l}: {est:?}");
            }
        }
    }

    #[test]
    fn expm_of_pauli_z() {
        let z = HermitianObservable::pauli("Z").unwrap();
        let u = expm_hermitian_generator(&z, std::f64::consts::FRAC_PI_2);
        assert!((u.matrix()[(0, 0)] - I).norm() < 1e-14);
        assert!((u.matrix()[(1, 1)] + I).norm() < 1e-14);
        assert!(u.matrix()[(0, 1)].norm() < 1e-14);
        let id = expm_hermitian_generator(&z, 0.0);
        assert!((id.matrix() - CMatrix::identity(2, 2)).norm() < 1e-14);
    }

    #[test]
    fn expm_rejects_non_hermitian() {
        let m = CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO]);
        assert!(expm_hermitian_matrix(&m, 0.3).is_err());
    }

    #[test]
    fn permutation_operator_traces() {
        let id = permutation_operator(&Permutation::identity(3), 2).unwrap();
        assert_eq!(id.trace(), 8);
        let swap = permutation_operator(&Permutation::transposition(2, 0, 1), 2).unwrap();
        assert_eq!(swap.trace(), 2);
        let cyc = permutation_operator(&Permutation::long_cycle(3), 3).unwrap();
        assert_eq!(cyc.trace(), 3);
        assert!(permutation_operator(&Permutation::identity(5), 8).is_err());
        let m = swap.to_matrix();
        assert!(unitarity_error(&m) < 1e-14);
    }

    #[test]
    fn permutation_operator_moves_factors() {
        // σ sends factor 0 to position 1: |a b⟩ -> |b a⟩ for a transposition
        let swap = permutation_operator(&Permutation::transposition(2, 0, 1), 3).unwrap();
        // |1 2⟩ = 1*3 + 2 = 5  ->  |2 1⟩ = 7
        assert_eq!(swap.basis_image(5), 7);
        let cyc = permutation_operator(&Permutation::long_cycle(3), 2).unwrap();
        // factor k moves to k+1: |1 0 0⟩ (idx 4) -> |0 1 0⟩ (idx 2)
        assert_eq!(cyc.basis_image(4), 2);
    }

    #[test]
    fn solvers() {
        let a = RMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = RMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let x = solve_spd(&a, &b, "test").unwrap();
        assert!((&a * &x - &b).norm() < 1e-12);
        let x2 = solve(&a, &b).unwrap();
        assert!((x - x2).norm() < 1e-12);
        let p = pinv_sym(&a, 1e-12);
        assert!((&a * &p - RMatrix::identity(2, 2)).norm() < 1e-10);
        let sing = RMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            solve_spd(&sing, &b, "singular"),
            Err(Error::Conditioning { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn haar_samples_are_unitary(seed in any::<u64>(), d in 1usize..=16) {
            let mut rng = substream(seed, "prop-haar", 0);
            let u = sample_haar_unitary(d, &mut rng).unwrap();
            prop_assert!(u.unitarity_error() < 1e-10);
        }

        #[test]
        fn expm_inverse_pairing(seed in any::<u64>(), d in 1usize..=8, theta in -10.0f64..10.0) {
            let x = HermitianObservable::new(random_hermitian(d, seed), "x").unwrap();
            let a = expm_hermitian_generator(&x, theta);
            let b = expm_hermitian_generator(&x, -theta);
            prop_assert!(a.unitarity_error() < 1e-12);
            prop_assert!((a.matrix() * b.matrix() - CMatrix::identity(d, d)).norm() < 1e-12);
        }

        #[test]
        fn permutation_operators_compose(
            a in Just((0..4usize).collect::<Vec<_>>()).prop_shuffle(),
            b in Just((0..4usize).collect::<Vec<_>>()).prop_shuffle(),
            d in 1usize..=4,
        ) {
            let sa = Permutation::new(a).unwrap();
            let sb = Permutation::new(b).unwrap();
            let pa = permutation_operator(&sa, d).unwrap();
            let pb = permutation_operator(&sb, d).unwrap();
            let pab = permutation_operator(&sa.compose(&sb), d).unwrap();
            prop_assert_eq!(&pa.compose(&pb), &pab);
            let diff = pa.to_matrix() * pb.to_matrix() - pab.to_matrix();
            prop_assert!(diff.norm() < 1e-12);
            prop_assert_eq!(pab.trace(), d.pow(sa.compose(&sb).num_cycles() as u32));
        }
    }
}
