//! Truncated Fock space, the two-level probe, and their tensor product.
//!
//! Joint probe⊗field states are indexed as `probe * (n_max + 1) + n` with
//! `probe = 0` for |g⟩ and `probe = 1` for |e⟩, i.e. the probe factor is the
//! leftmost Kronecker factor.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type Matrix = DMatrix<C64>;
pub type Vector = DVector<C64>;

pub const HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-9;
pub const POSITIVITY_TOL: f64 = 1e-8;

/// Acceptance thresholds for the density-operator invariants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Largest allowed |ρ_ij − conj(ρ_ji)|.
    pub hermitian: f64,
    /// Largest allowed |Tr ρ − 1|.
    pub trace: f64,
    /// Smallest eigenvalue may not go below `-positivity`.
    pub positivity: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            hermitian: HERMITIAN_TOL,
            trace: TRACE_TOL,
            positivity: POSITIVITY_TOL,
        }
    }
}

/// Highest retained Fock index. The field dimension is `n_max + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Truncation {
    n_max: usize,
}

impl Truncation {
    pub fn new(n_max: usize) -> Result<Self> {
        if n_max < 1 {
            return Err(Error::invalid("n_max", "must be at least 1"));
        }
        Ok(Self { n_max })
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn field_dim(&self) -> usize {
        self.n_max + 1
    }

    pub fn joint_dim(&self) -> usize {
        2 * (self.n_max + 1)
    }

    /// Recover the truncation from a matrix dimension on the given space.
    pub fn from_dim(dim: usize, space: Space) -> Result<Self> {
        match space {
            Space::Field => Self::new(dim.saturating_sub(1)),
            Space::Joint => {
                if !dim.is_multiple_of(2) {
                    return Err(Error::invalid(
                        "dim",
                        format!("joint-space dimension {dim} is odd"),
                    ));
                }
                Self::new((dim / 2).saturating_sub(1))
            }
        }
    }

    pub fn dim(&self, space: Space) -> usize {
        match space {
            Space::Field => self.field_dim(),
            Space::Joint => self.joint_dim(),
        }
    }

    /// Largest |α|² a displacement may carry on this truncation.
    pub fn displacement_limit(&self) -> f64 {
        self.n_max as f64 / 4.0
    }
}

/// Which Hilbert space an operator or state lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Space {
    Field,
    Joint,
}

impl Space {
    pub fn name(&self) -> &'static str {
        match self {
            Space::Field => "field",
            Space::Joint => "probe⊗field",
        }
    }
}

/// Dense square complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix(Matrix);

impl OperatorMatrix {
    pub fn from_matrix(m: Matrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        Ok(Self(m))
    }

    pub fn identity(dim: usize) -> Self {
        Self(Matrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(Matrix::zeros(dim, dim))
    }

    pub fn from_diagonal(diag: &[C64]) -> Self {
        Self(Matrix::from_diagonal(&Vector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.0[(row, col)]
    }

    pub fn dagger(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        ensure_dim(self.dim(), other.dim())?;
        Ok(Self(&self.0 * &other.0))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        ensure_dim(self.dim(), other.dim())?;
        Ok(Self(&self.0 + &other.0))
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self(&self.0 * factor)
    }

    pub fn apply(&self, v: &Vector) -> Result<Vector> {
        ensure_dim(self.dim(), v.len())?;
        Ok(&self.0 * v)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        hermiticity_defect(&self.0) <= tol
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }
}

pub(crate) fn ensure_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Largest |m_ij − conj(m_ji)|.
pub fn hermiticity_defect(m: &Matrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for j in 0..n {
        for i in 0..=j {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Largest entry modulus.
pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(m: &Matrix) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// `true` when every eigenvalue of the Hermitian `m` is ≥ `-tol`.
///
/// A Cholesky factorization of `m + tol·I` is tried first; only when it breaks
/// down is the full spectrum computed.
pub fn is_positive_semidefinite(m: &Matrix, tol: f64) -> bool {
    let n = m.nrows();
    let shifted = m + Matrix::identity(n, n) * C64::new(tol, 0.0);
    if hermitian_cholesky_succeeds(shifted) {
        return true;
    }
    min_eigenvalue(m) >= -tol
}

/// In-place Cholesky that fails on any non-positive real pivot. (The generic
/// complex factorization takes complex square roots of negative pivots and so
/// cannot be used as a definiteness test.)
fn hermitian_cholesky_succeeds(mut a: Matrix) -> bool {
    let n = a.nrows();
    for j in 0..n {
        let mut pivot = a[(j, j)].re;
        for k in 0..j {
            pivot -= a[(j, k)].norm_sqr();
        }
        if !(pivot > 0.0) {
            return false;
        }
        let root = pivot.sqrt();
        a[(j, j)] = C64::new(root, 0.0);
        for i in j + 1..n {
            let mut v = a[(i, j)];
            for k in 0..j {
                v -= a[(i, k)] * a[(j, k)].conj();
            }
            a[(i, j)] = v / root;
        }
    }
    true
}

/// Hermitian, unit-trace, positive semidefinite operator on a tagged space.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    matrix: Matrix,
    space: Space,
}

impl DensityOperator {
    pub fn new(matrix: Matrix, space: Space) -> Result<Self> {
        Self::with_tolerances(matrix, space, &Tolerances::default())
    }

    pub fn with_tolerances(matrix: Matrix, space: Space, tol: &Tolerances) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                found: matrix.ncols(),
            });
        }
        Truncation::from_dim(matrix.nrows(), space)?;
        check_density(&matrix, tol)?;
        Ok(Self { matrix, space })
    }

    /// Projector onto a normalized pure state.
    pub fn from_pure(psi: &Vector, space: Space) -> Result<Self> {
        let norm = psi.norm();
        if norm == 0.0 {
            return Err(Error::invalid("psi", "zero vector"));
        }
        let psi = psi / C64::new(norm, 0.0);
        Self::new(&psi * psi.adjoint(), space)
    }

    pub(crate) fn from_checked_parts(matrix: Matrix, space: Space) -> Self {
        Self { matrix, space }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn truncation(&self) -> Truncation {
        Truncation::from_dim(self.dim(), self.space).expect("dimension validated at construction")
    }

    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }

    pub fn expectation(&self, op: &OperatorMatrix) -> Result<C64> {
        ensure_dim(self.dim(), op.dim())?;
        Ok((&self.matrix * op.as_matrix()).trace())
    }

    pub(crate) fn require(&self, space: Space) -> Result<()> {
        if self.space != space {
            return Err(Error::WrongSpace {
                expected: space.name(),
                found: self.space.name(),
            });
        }
        Ok(())
    }
}

pub(crate) fn check_density(m: &Matrix, tol: &Tolerances) -> Result<()> {
    let herm = hermiticity_defect(m);
    if herm > tol.hermitian {
        return Err(Error::NotDensity(format!(
            "hermiticity defect {herm:e} > {:e}",
            tol.hermitian
        )));
    }
    let tr = m.trace();
    if (tr - C64::new(1.0, 0.0)).norm() > tol.trace {
        return Err(Error::NotDensity(format!("trace {tr} differs from 1")));
    }
    if !is_positive_semidefinite(m, tol.positivity) {
        return Err(Error::NotDensity(format!(
            "minimum eigenvalue {:e} below -{:e}",
            min_eigenvalue(m),
            tol.positivity
        )));
    }
    Ok(())
}

// Probe operators in the {|g⟩, |e⟩} basis.

pub fn probe_ground() -> OperatorMatrix {
    probe_unit(0, 0)
}

pub fn probe_excited() -> OperatorMatrix {
    probe_unit(1, 1)
}

/// |g⟩⟨e|
pub fn probe_lowering() -> OperatorMatrix {
    probe_unit(0, 1)
}

/// |e⟩⟨g|
pub fn probe_raising() -> OperatorMatrix {
    probe_unit(1, 0)
}

fn probe_unit(row: usize, col: usize) -> OperatorMatrix {
    let mut m = Matrix::zeros(2, 2);
    m[(row, col)] = C64::new(1.0, 0.0);
    OperatorMatrix(m)
}

// Field operators.

/// Ladder operator â with ⟨n−1|â|n⟩ = √n.
pub fn annihilation_operator(trunc: Truncation) -> OperatorMatrix {
    let d = trunc.field_dim();
    let mut m = Matrix::zeros(d, d);
    for n in 1..d {
        m[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    OperatorMatrix(m)
}

pub fn creation_operator(trunc: Truncation) -> OperatorMatrix {
    annihilation_operator(trunc).dagger()
}

pub fn number_operator(trunc: Truncation) -> OperatorMatrix {
    let diag: Vec<C64> = (0..trunc.field_dim())
        .map(|n| C64::new(n as f64, 0.0))
        .collect();
    OperatorMatrix::from_diagonal(&diag)
}

/// Photon-number parity diag((−1)ⁿ).
pub fn parity_operator(trunc: Truncation) -> OperatorMatrix {
    let diag: Vec<C64> = (0..trunc.field_dim())
        .map(|n| C64::new(if n % 2 == 0 { 1.0 } else { -1.0 }, 0.0))
        .collect();
    OperatorMatrix::from_diagonal(&diag)
}

/// |n⟩⟨n|
pub fn fock_projector(trunc: Truncation, n: usize) -> Result<OperatorMatrix> {
    check_fock_index(trunc, n)?;
    let d = trunc.field_dim();
    let mut m = Matrix::zeros(d, d);
    m[(n, n)] = C64::new(1.0, 0.0);
    Ok(OperatorMatrix(m))
}

/// |row⟩⟨col| on the field.
pub fn fock_transition(trunc: Truncation, row: usize, col: usize) -> Result<OperatorMatrix> {
    check_fock_index(trunc, row)?;
    check_fock_index(trunc, col)?;
    let d = trunc.field_dim();
    let mut m = Matrix::zeros(d, d);
    m[(row, col)] = C64::new(1.0, 0.0);
    Ok(OperatorMatrix(m))
}

fn check_fock_index(trunc: Truncation, n: usize) -> Result<()> {
    if n > trunc.n_max() {
        return Err(Error::invalid(
            "n",
            format!("Fock index {n} exceeds n_max = {}", trunc.n_max()),
        ));
    }
    Ok(())
}

/// D(α) = exp(α↠− α*â) on the truncated space.
///
/// With α = r·e^{iθ} and W = diag(cⁿ), c = i·e^{−iθ}, the generator is
/// W†·(i r X)·W for the real symmetric X = â + â†. Exponentiating through
/// the eigendecomposition of X keeps the result unitary to round-off
/// regardless of truncation.
pub fn displacement_operator(alpha: C64, trunc: Truncation) -> Result<OperatorMatrix> {
    check_displacement(alpha, trunc)?;
    let d = trunc.field_dim();
    if alpha == C64::new(0.0, 0.0) {
        return Ok(OperatorMatrix::identity(d));
    }
    let x = DMatrix::<f64>::from_fn(d, d, |i, j| {
        if i + 1 == j {
            (j as f64).sqrt()
        } else if j + 1 == i {
            (i as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(x);
    let r = alpha.norm();
    let c = C64::i() * (alpha / r).conj();
    let powers: Vec<C64> = (0..d).map(|n| c.powu(n as u32)).collect();
    let v = eig.eigenvectors.map(|x| C64::new(x, 0.0));
    let phases = eig.eigenvalues.map(|lambda| C64::new(0.0, r * lambda).exp());
    let mut m = &v * Matrix::from_diagonal(&phases) * v.transpose();
    for j in 0..d {
        for i in 0..d {
            m[(i, j)] *= powers[i].conj() * powers[j];
        }
    }
    Ok(OperatorMatrix(m))
}

pub(crate) fn check_displacement(alpha: C64, trunc: Truncation) -> Result<()> {
    let norm_sqr = alpha.norm_sqr();
    let limit = trunc.displacement_limit();
    if !norm_sqr.is_finite() || norm_sqr > limit {
        return Err(Error::TruncationUnsafe {
            re: alpha.re,
            im: alpha.im,
            norm_sqr,
            limit,
        });
    }
    Ok(())
}

/// Kronecker product `probe ⊗ field`.
pub fn probe_field_embed(probe_op: &OperatorMatrix, field_op: &OperatorMatrix) -> Result<OperatorMatrix> {
    ensure_dim(2, probe_op.dim())?;
    if field_op.dim() < 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: field_op.dim(),
        });
    }
    Ok(OperatorMatrix(probe_op.0.kronecker(&field_op.0)))
}

/// 𝟙_probe ⊗ op
pub fn embed_field(field_op: &OperatorMatrix) -> Result<OperatorMatrix> {
    probe_field_embed(&OperatorMatrix::identity(2), field_op)
}

/// |g⟩⟨g| ⊗ ρ_f, the only probe preparation the protocol uses.
pub fn ground_with_field(rho_f: &DensityOperator) -> Result<DensityOperator> {
    rho_f.require(Space::Field)?;
    let m = probe_ground().0.kronecker(&rho_f.matrix);
    Ok(DensityOperator::from_checked_parts(m, Space::Joint))
}

/// Tr_probe ρ.
pub fn partial_trace_probe(rho: &DensityOperator) -> Result<DensityOperator> {
    rho.require(Space::Joint)?;
    let d = rho.dim() / 2;
    let m = &rho.matrix;
    let reduced = m.view((0, 0), (d, d)) + m.view((d, d), (d, d));
    Ok(DensityOperator::from_checked_parts(reduced, Space::Field))
}

/// P_n = ⟨n|ρ_f|n⟩.
pub fn fock_population(rho_f: &DensityOperator, n: usize) -> Result<f64> {
    rho_f.require(Space::Field)?;
    check_fock_index(rho_f.truncation(), n)?;
    Ok(rho_f.matrix[(n, n)].re)
}

/// Diagonal of ρ_f.
pub fn fock_distribution(rho_f: &DensityOperator) -> Result<Vec<f64>> {
    rho_f.require(Space::Field)?;
    Ok((0..rho_f.dim()).map(|n| rho_f.matrix[(n, n)].re).collect())
}

// Named field states.

pub fn fock_state(trunc: Truncation, n: usize) -> Result<DensityOperator> {
    let p = fock_projector(trunc, n)?;
    Ok(DensityOperator::from_checked_parts(p.0, Space::Field))
}

/// Coherent state built from its Poisson amplitudes e^{−|β|²/2} βⁿ/√n!,
/// renormalized inside the truncation.
pub fn coherent_state(trunc: Truncation, beta: C64) -> Result<DensityOperator> {
    if !beta.norm_sqr().is_finite() {
        return Err(Error::invalid("beta", "must be finite"));
    }
    let d = trunc.field_dim();
    let mut amp = Vector::zeros(d);
    let mut term = C64::new((-beta.norm_sqr() / 2.0).exp(), 0.0);
    amp[0] = term;
    for n in 1..d {
        term = term * beta / (n as f64).sqrt();
        amp[n] = term;
    }
    DensityOperator::from_pure(&amp, Space::Field)
}

/// Bose–Einstein populations n̄ⁿ/(1+n̄)ⁿ⁺¹, renormalized inside the truncation.
pub fn thermal_state(trunc: Truncation, mean: f64) -> Result<DensityOperator> {
    if !(mean >= 0.0) || !mean.is_finite() {
        return Err(Error::invalid("mean", "must be finite and non-negative"));
    }
    let ratio = mean / (1.0 + mean);
    let weights: Vec<f64> = (0..trunc.field_dim())
        .map(|n| ratio.powi(n as i32) / (1.0 + mean))
        .collect();
    let total: f64 = weights.iter().sum();
    let diag: Vec<C64> = weights.iter().map(|w| C64::new(w / total, 0.0)).collect();
    Ok(DensityOperator::from_checked_parts(
        OperatorMatrix::from_diagonal(&diag).0,
        Space::Field,
    ))
}

/// Convex combination Σ wᵢ ρᵢ; weights are normalized to sum to one.
pub fn mixture(components: &[(f64, DensityOperator)]) -> Result<DensityOperator> {
    let first = components
        .first()
        .ok_or_else(|| Error::invalid("components", "mixture needs at least one state"))?;
    let space = first.1.space;
    let dim = first.1.dim();
    let mut total = 0.0;
    let mut m = Matrix::zeros(dim, dim);
    for (w, rho) in components {
        if !(*w >= 0.0) || !w.is_finite() {
            return Err(Error::invalid("weight", format!("{w} is not a valid weight")));
        }
        rho.require(space)?;
        ensure_dim(dim, rho.dim())?;
        m += &rho.matrix * C64::new(*w, 0.0);
        total += w;
    }
    if total <= 0.0 {
        return Err(Error::invalid("weight", "weights sum to zero"));
    }
    m /= C64::new(total, 0.0);
    DensityOperator::new(m, space)
}
