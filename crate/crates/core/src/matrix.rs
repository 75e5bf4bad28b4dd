//! Dense complex-matrix kernels: products, commutators, tensor products,
//! partial traces, exponentials and the Hilbert–Schmidt geometry.
//!
//! Composite spaces are always ordered system-first, so the basis index of
//! `|i⟩ ⊗ |a⟩` is `i * n_probe + a`.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::{DMatrix, DVector};
pub use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<C64>;

/// Absolute Frobenius tolerance for Hermiticity checks.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Absolute tolerance on the trace of a density matrix.
pub const TRACE_TOL: f64 = 1e-12;
/// Smallest eigenvalue tolerated in a positive semidefinite operator.
pub const PSD_FLOOR: f64 = -1e-10;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);
pub(crate) const I: C64 = C64::new(0.0, 1.0);

pub fn dim_of(m: &CMatrix) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    Ok(m.nrows())
}

pub(crate) fn same_dim(a: &CMatrix, b: &CMatrix) -> Result<usize> {
    let n = dim_of(a)?;
    let m = dim_of(b)?;
    if n != m {
        return Err(Error::DimensionMismatch { expected: n, found: m });
    }
    Ok(n)
}

pub fn is_finite(m: &CMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn trace(m: &CMatrix) -> C64 {
    m.diagonal().iter().sum()
}

pub fn frobenius(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Frobenius distance between `m` and `m†`.
pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    frobenius(&(m - m.adjoint()))
}

pub fn skew_hermitian_deviation(m: &CMatrix) -> f64 {
    frobenius(&(m + m.adjoint()))
}

/// `(m + m†) / 2`.
pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// `m − Tr(m)/n · 1`.
pub fn traceless_part(m: &CMatrix) -> CMatrix {
    let n = m.nrows();
    let shift = trace(m) / n as f64;
    let mut out = m.clone();
    for i in 0..n {
        out[(i, i)] -= shift;
    }
    out
}

/// `AB − BA`.
pub fn commutator(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    same_dim(a, b)?;
    Ok(a * b - b * a)
}

/// `ad_B^k(X)`: the commutator with `B` applied `k` times.
pub fn ad_power(b: &CMatrix, x: &CMatrix, k: usize) -> Result<CMatrix> {
    same_dim(b, x)?;
    let mut out = x.clone();
    for _ in 0..k {
        out = b * &out - &out * b;
    }
    Ok(out)
}

/// Hilbert–Schmidt inner product `Tr(A†B)`.
pub fn hs_inner(a: &CMatrix, b: &CMatrix) -> Result<C64> {
    same_dim(a, b)?;
    Ok(a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum())
}

/// `Tr(AB)` without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> C64 {
    let n = a.nrows();
    let mut acc = ZERO;
    for i in 0..n {
        for j in 0..n {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Kronecker product, system factor first.
pub fn tensor(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Trace over the probe factor of a system ⊗ probe operator.
pub fn partial_trace_probe(m: &CMatrix, n_sys: usize, n_probe: usize) -> Result<CMatrix> {
    let n = dim_of(m)?;
    if n_sys == 0 || n_probe == 0 || n != n_sys * n_probe {
        return Err(Error::DimensionMismatch { expected: n_sys * n_probe, found: n });
    }
    Ok(CMatrix::from_fn(n_sys, n_sys, |i, j| {
        (0..n_probe).map(|a| m[(i * n_probe + a, j * n_probe + a)]).sum()
    }))
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
///
/// Only the Hermitian part of `h` is used.
pub fn eigh(h: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = h.nrows();
    let eig = hermitian_part(h).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

pub fn eigvalsh(h: &CMatrix) -> Vec<f64> {
    eigh(h).0
}

/// Largest absolute eigenvalue of a Hermitian matrix.
pub fn spectral_norm_hermitian(h: &CMatrix) -> f64 {
    eigvalsh(h).iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Matrix exponential.
///
/// Skew-Hermitian arguments go through a unitary eigendecomposition; all
/// others use scaling-and-squaring with a Padé approximant.
pub fn expm(a: &CMatrix) -> CMatrix {
    let n = a.nrows();
    if n == 0 {
        return a.clone();
    }
    let scale = frobenius(a).max(1.0);
    if skew_hermitian_deviation(a) <= HERMITIAN_TOL * scale {
        // a = −iH with H = i·a
        let h = a * I;
        Spectral::new(&h).evolution(1.0)
    } else {
        a.clone().exp()
    }
}

/// Spectral data of a Hermitian generator, used to form `exp(−iHt)` for
/// many `t` without repeating the decomposition.
#[derive(Debug, Clone)]
pub struct Spectral {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl Spectral {
    pub fn new(h: &CMatrix) -> Self {
        let (values, vectors) = eigh(h);
        Spectral { values, vectors }
    }

    /// `exp(−iHt)`.
    pub fn evolution(&self, t: f64) -> CMatrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for (c, &lam) in self.values.iter().enumerate() {
            let phase = C64::from_polar(1.0, -lam * t);
            for r in 0..n {
                scaled[(r, c)] *= phase;
            }
        }
        scaled * self.vectors.adjoint()
    }
}

/// A Hermitian operator (`M = M†` within [`HERMITIAN_TOL`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Hermitian(CMatrix);

impl Hermitian {
    pub fn new(m: CMatrix) -> Result<Self> {
        dim_of(&m)?;
        if !is_finite(&m) {
            return Err(Error::NonFinite);
        }
        let deviation = hermitian_deviation(&m);
        if deviation > HERMITIAN_TOL {
            return Err(Error::NotHermitian { deviation });
        }
        Ok(Hermitian(hermitian_part(&m)))
    }

    /// Wraps the Hermitian part of `m` without checking it.
    pub fn from_hermitian_part(m: &CMatrix) -> Self {
        Hermitian(hermitian_part(m))
    }

    pub fn zeros(n: usize) -> Self {
        Hermitian(CMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        Hermitian(identity(n))
    }

    pub fn from_real_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Hermitian(CMatrix::from_fn(n, n, |i, j| if i == j { C64::new(d[i], 0.0) } else { ZERO }))
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

    pub fn trace(&self) -> f64 {
        trace(&self.0).re
    }

    pub fn traceless(&self) -> Hermitian {
        Hermitian(traceless_part(&self.0))
    }

    pub fn scaled(&self, s: f64) -> Hermitian {
        Hermitian(&self.0 * C64::new(s, 0.0))
    }

    pub fn eigh(&self) -> (Vec<f64>, CMatrix) {
        eigh(&self.0)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        eigvalsh(&self.0)
    }

    /// `Tr(self · m)`, real part.
    pub fn expectation(&self, m: &CMatrix) -> f64 {
        trace_product(&self.0, m).re
    }
}

impl AsRef<CMatrix> for Hermitian {
    fn as_ref(&self) -> &CMatrix {
        &self.0
    }
}

/// Hermitian, unit-trace, positive semidefinite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(CMatrix);

impl DensityMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        let h = Hermitian::new(m)?;
        let tr = h.trace();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(Error::NotDensity(format!("trace {tr} differs from 1")));
        }
        let lo = h.eigenvalues().first().copied().unwrap_or(0.0);
        if lo < PSD_FLOOR {
            return Err(Error::NotDensity(format!("negative eigenvalue {lo:.3e}")));
        }
        Ok(DensityMatrix(h.0))
    }

    /// Wraps a state produced by a trace- and positivity-preserving map.
    pub(crate) fn assume_valid(m: CMatrix) -> Self {
        DensityMatrix(hermitian_part(&m))
    }

    pub fn maximally_mixed(n: usize) -> Self {
        DensityMatrix(identity(n) / C64::new(n as f64, 0.0))
    }

    /// `|ψ⟩⟨ψ|` for a (not necessarily normalized) vector.
    pub fn pure(psi: &DVector<C64>) -> Result<Self> {
        let norm = psi.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::NotDensity("zero state vector".into()));
        }
        let v = psi / C64::new(norm, 0.0);
        Ok(DensityMatrix(hermitian_part(&(&v * v.adjoint()))))
    }

    /// Computational basis projector `|k⟩⟨k|`.
    pub fn basis_state(n: usize, k: usize) -> Self {
        let mut m = CMatrix::zeros(n, n);
        m[(k, k)] = ONE;
        DensityMatrix(m)
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

    pub fn as_hermitian(&self) -> Hermitian {
        Hermitian(self.0.clone())
    }

    pub fn trace(&self) -> f64 {
        trace(&self.0).re
    }

    /// `Tr ρ²`.
    pub fn purity(&self) -> f64 {
        trace_product(&self.0, &self.0).re
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        eigvalsh(&self.0)
    }

    /// `U ρ U†`.
    pub fn conjugate_by(&self, u: &CMatrix) -> DensityMatrix {
        DensityMatrix::assume_valid(u * &self.0 * u.adjoint())
    }
}

impl AsRef<CMatrix> for DensityMatrix {
    fn as_ref(&self) -> &CMatrix {
        &self.0
    }
}

/// The Pauli matrices.
pub mod pauli {
    use super::{CMatrix, C64, ONE, ZERO};

    pub fn x() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
    }

    pub fn y() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[ZERO, C64::new(0.0, -1.0), C64::new(0.0, 1.0), ZERO])
    }

    pub fn z() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
    }
}

/// Spin-1 angular momentum matrices in the `|+1⟩, |0⟩, |−1⟩` basis (ħ = 1).
pub mod spin1 {
    use super::{CMatrix, C64, ZERO};

    pub fn jx() -> CMatrix {
        let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        CMatrix::from_row_slice(3, 3, &[ZERO, s, ZERO, s, ZERO, s, ZERO, s, ZERO])
    }

    pub fn jy() -> CMatrix {
        let a = C64::new(0.0, -std::f64::consts::FRAC_1_SQRT_2);
        let b = -a;
        CMatrix::from_row_slice(3, 3, &[ZERO, a, ZERO, b, ZERO, a, ZERO, b, ZERO])
    }

    pub fn jz() -> CMatrix {
        let one = C64::new(1.0, 0.0);
        CMatrix::from_row_slice(3, 3, &[one, ZERO, ZERO, ZERO, ZERO, ZERO, ZERO, ZERO, -one])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BasisKind {
    /// `(|j⟩⟨k| + |k⟩⟨j|)/√2`
    Sym(usize, usize),
    /// `(−i|j⟩⟨k| + i|k⟩⟨j|)/√2`
    Anti(usize, usize),
    /// `(Σ_{j<l} |j⟩⟨j| − l|l⟩⟨l|)/√(l(l+1))`
    Diag(usize),
    /// `1/√n`
    Identity,
}

/// Hilbert–Schmidt orthonormal basis of the n×n Hermitian matrices: the
/// n²−1 generalized Gell-Mann matrices (scaled to unit norm) followed by
/// `1/√n`.
///
/// Coordinates are real: `c_i = Tr(E_i H)`. For any complex input the
/// coordinates are those of its Hermitian part.
#[derive(Debug, Clone)]
pub struct HermitianBasis {
    n: usize,
    kinds: Vec<BasisKind>,
}

impl HermitianBasis {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("Hermitian basis needs n >= 2, got {n}")));
        }
        let mut kinds = Vec::with_capacity(n * n);
        for j in 0..n {
            for k in (j + 1)..n {
                kinds.push(BasisKind::Sym(j, k));
                kinds.push(BasisKind::Anti(j, k));
            }
        }
        kinds.extend((1..n).map(BasisKind::Diag));
        kinds.push(BasisKind::Identity);
        Ok(HermitianBasis { n, kinds })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of elements, n².
    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    /// Index of the identity direction (the last element).
    pub fn identity_index(&self) -> usize {
        self.kinds.len() - 1
    }

    pub fn element(&self, idx: usize) -> CMatrix {
        let mut c = DVector::zeros(self.len());
        c[idx] = 1.0;
        self.from_coords(&c)
    }

    pub fn elements(&self) -> Vec<CMatrix> {
        (0..self.len()).map(|i| self.element(i)).collect()
    }

    /// `c_i = Re Tr(E_i m)`.
    pub fn coords(&self, m: &CMatrix) -> DVector<f64> {
        let n = self.n;
        DVector::from_iterator(
            self.len(),
            self.kinds.iter().map(|kind| match *kind {
                BasisKind::Sym(j, k) => (m[(k, j)].re + m[(j, k)].re) * FRAC_1_SQRT_2,
                BasisKind::Anti(j, k) => (m[(k, j)].im - m[(j, k)].im) * FRAC_1_SQRT_2,
                BasisKind::Diag(l) => {
                    let s: f64 = (0..l).map(|j| m[(j, j)].re).sum();
                    (s - l as f64 * m[(l, l)].re) / ((l * (l + 1)) as f64).sqrt()
                }
                BasisKind::Identity => (0..n).map(|j| m[(j, j)].re).sum::<f64>() / (n as f64).sqrt(),
            }),
        )
    }

    /// Coordinates restricted to the n²−1 traceless directions.
    pub fn traceless_coords(&self, m: &CMatrix) -> DVector<f64> {
        let c = self.coords(m);
        c.rows(0, self.len() - 1).into_owned()
    }

    /// `Σ c_i E_i`; a vector of length n²−1 is read as traceless coordinates.
    pub fn from_coords(&self, c: &DVector<f64>) -> CMatrix {
        let n = self.n;
        assert!(c.len() == self.len() || c.len() + 1 == self.len(), "coordinate length mismatch");
        let mut m = CMatrix::zeros(n, n);
        for (kind, &v) in self.kinds.iter().zip(c.iter()) {
            if v == 0.0 {
                continue;
            }
            match *kind {
                BasisKind::Sym(j, k) => {
                    let x = C64::new(v * FRAC_1_SQRT_2, 0.0);
                    m[(j, k)] += x;
                    m[(k, j)] += x;
                }
                BasisKind::Anti(j, k) => {
                    let x = C64::new(0.0, v * FRAC_1_SQRT_2);
                    m[(j, k)] -= x;
                    m[(k, j)] += x;
                }
                BasisKind::Diag(l) => {
                    let s = v / ((l * (l + 1)) as f64).sqrt();
                    for j in 0..l {
                        m[(j, j)] += C64::new(s, 0.0);
                    }
                    m[(l, l)] -= C64::new(s * l as f64, 0.0);
                }
                BasisKind::Identity => {
                    let s = v / (n as f64).sqrt();
                    for j in 0..n {
                        m[(j, j)] += C64::new(s, 0.0);
                    }
                }
            }
        }
        m
    }
}

/// JSON form of a square matrix: dimension plus row-major real and
/// imaginary parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixJson {
    pub dim: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl From<&CMatrix> for MatrixJson {
    fn from(m: &CMatrix) -> Self {
        let n = m.nrows();
        let mut re = Vec::with_capacity(n * n);
        let mut im = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..m.ncols() {
                re.push(m[(i, j)].re);
                im.push(m[(i, j)].im);
            }
        }
        MatrixJson { dim: n, re, im }
    }
}

impl MatrixJson {
    pub fn to_matrix(&self) -> Result<CMatrix> {
        let n = self.dim;
        if n == 0 {
            return Err(Error::InvalidArgument("matrix dimension must be positive".into()));
        }
        let len = n.checked_mul(n).ok_or(Error::InvalidArgument("matrix dimension overflows".into()))?;
        if self.re.len() != len || self.im.len() != len {
            return Err(Error::InvalidArgument(format!(
                "dim {n} needs {len} entries, got re: {}, im: {}",
                self.re.len(),
                self.im.len()
            )));
        }
        let m = CMatrix::from_fn(n, n, |i, j| C64::new(self.re[i * n + j], self.im[i * n + j]));
        if !is_finite(&m) {
            return Err(Error::NonFinite);
        }
        Ok(m)
    }
}

/// Serde adapter so `CMatrix` fields use the [`MatrixJson`] layout.
pub mod serde_matrix {
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    use super::{CMatrix, MatrixJson};

    pub fn serialize<S: Serializer>(m: &CMatrix, s: S) -> Result<S::Ok, S::Error> {
        MatrixJson::from(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CMatrix, D::Error> {
        MatrixJson::deserialize(d)?.to_matrix().map_err(D::Error::custom)
    }
}

pub fn matrix_to_json(m: &CMatrix) -> String {
    serde_json::to_string(&MatrixJson::from(m)).expect("matrix serialization cannot fail")
}

/// Parses a matrix from its JSON form.
pub fn matrix_from_json(text: &str) -> Result<CMatrix> {
    let raw: MatrixJson =
        serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("matrix JSON: {e}")))?;
    raw.to_matrix()
}
