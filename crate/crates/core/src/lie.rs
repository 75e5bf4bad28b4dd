//! Dynamical Lie algebras and observability spaces.
//!
//! Real subspaces of `u(n)` are stored as orthonormal coordinate vectors:
//! a skew-Hermitian `K` is identified with the coordinates of the Hermitian
//! matrix `−iK` in the [`HermitianBasis`], which makes the Hilbert–Schmidt
//! inner product the Euclidean one.

use nalgebra::{DMatrix, DVector};

use crate::channels::{Effect, KrausChannel};
use crate::error::{Error, Result};
use crate::matrix::{dim_of, frobenius, CMatrix, DensityMatrix, Hermitian, HermitianBasis, C64, I};

/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_TOL: f64 = 1e-9;
/// Singular values below this are zero regardless of scale.
pub const ABS_RANK_FLOOR: f64 = 1e-12;
/// Largest residual for which one subspace counts as contained in another.
pub const CONTAINMENT_TOL: f64 = 1e-10;
/// Projections smaller than this make two states indistinguishable.
pub const INDISTINGUISHABLE_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct OperatorSubspace {
    basis: HermitianBasis,
    vectors: Vec<DVector<f64>>,
}

impl OperatorSubspace {
    pub fn zero(n: usize) -> Result<Self> {
        Ok(OperatorSubspace { basis: HermitianBasis::new(n)?, vectors: Vec::new() })
    }

    /// Orthonormal basis of the real span of skew-Hermitian `generators`.
    pub fn span(n: usize, generators: &[CMatrix]) -> Result<Self> {
        let basis = HermitianBasis::new(n)?;
        let mut coords = Vec::with_capacity(generators.len());
        for g in generators {
            let d = dim_of(g)?;
            if d != n {
                return Err(Error::DimensionMismatch { expected: n, found: d });
            }
            let deviation = crate::matrix::skew_hermitian_deviation(g);
            if deviation > 1e-10 * frobenius(g).max(1.0) {
                return Err(Error::NotSkewHermitian { deviation });
            }
            coords.push(basis.coords(&(g * -I)));
        }
        Ok(Self::from_coords(basis, coords))
    }

    fn from_coords(basis: HermitianBasis, coords: Vec<DVector<f64>>) -> Self {
        let vectors = orthonormalize(basis.len(), &coords);
        OperatorSubspace { basis, vectors }
    }

    pub fn dim_hilbert(&self) -> usize {
        self.basis.dim()
    }

    pub fn rank(&self) -> usize {
        self.vectors.len()
    }

    pub fn coordinates(&self) -> &[DVector<f64>] {
        &self.vectors
    }

    /// Orthonormal skew-Hermitian basis matrices.
    pub fn basis_matrices(&self) -> Vec<CMatrix> {
        self.vectors.iter().map(|v| self.basis.from_coords(v) * I).collect()
    }

    /// `su(n)`: all traceless skew-Hermitian matrices.
    pub fn su(n: usize) -> Result<Self> {
        let basis = HermitianBasis::new(n)?;
        let vectors = (0..basis.len() - 1)
            .map(|i| {
                let mut v = DVector::zeros(basis.len());
                v[i] = 1.0;
                v
            })
            .collect();
        Ok(OperatorSubspace { basis, vectors })
    }

    /// Projects each basis element onto its traceless part and re-spans:
    /// the quotient by `span{i·1}`.
    pub fn traceless_quotient(&self) -> Self {
        let id = self.basis.identity_index();
        let coords = self
            .vectors
            .iter()
            .map(|v| {
                let mut w = v.clone();
                w[id] = 0.0;
                w
            })
            .collect();
        Self::from_coords(self.basis.clone(), coords)
    }

    pub fn traceless_rank(&self) -> usize {
        self.traceless_quotient().rank()
    }

    fn project_coords(&self, c: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(c.len());
        for v in &self.vectors {
            out.axpy(v.dot(c), v, 1.0);
        }
        out
    }

    /// Orthogonal projection of a Hermitian matrix onto `iV`.
    pub fn project_hermitian(&self, h: &CMatrix) -> CMatrix {
        self.basis.from_coords(&self.project_coords(&self.basis.coords(h)))
    }

    /// Distance from a skew-Hermitian `k` to the subspace.
    pub fn residual(&self, k: &CMatrix) -> f64 {
        let c = self.basis.coords(&(k * -I));
        (&c - self.project_coords(&c)).norm()
    }

    /// Largest residual of `self`'s basis vectors against `other`; zero
    /// means `self ⊆ other`.
    pub fn containment_residual(&self, other: &OperatorSubspace) -> f64 {
        self.vectors.iter().map(|v| (v - other.project_coords(v)).norm()).fold(0.0, f64::max)
    }

    pub fn is_contained_in(&self, other: &OperatorSubspace) -> bool {
        self.containment_residual(other) <= CONTAINMENT_TOL
    }

    /// Frobenius norm of the difference of the orthogonal projectors.
    pub fn distance(&self, other: &OperatorSubspace) -> f64 {
        let d = self.basis.len();
        let mut p = DMatrix::<f64>::zeros(d, d);
        for v in &self.vectors {
            p += v * v.transpose();
        }
        for v in &other.vectors {
            p -= v * v.transpose();
        }
        p.norm()
    }

    /// Equal rank and mutual containment.
    pub fn same_as(&self, other: &OperatorSubspace) -> bool {
        self.rank() == other.rank() && self.is_contained_in(other) && other.is_contained_in(self)
    }
}

/// Orthonormal basis of the span of `coords`, via column-pivoted QR.
/// Columns whose pivot falls below [`RANK_TOL`] times the largest (or
/// below [`ABS_RANK_FLOOR`]) are dropped.
fn orthonormalize(dim: usize, coords: &[DVector<f64>]) -> Vec<DVector<f64>> {
    if coords.is_empty() {
        return Vec::new();
    }
    let qr = DMatrix::from_columns(coords).col_piv_qr();
    let r = qr.r();
    let pivots: Vec<f64> = (0..r.nrows().min(r.ncols())).map(|i| r[(i, i)].abs()).collect();
    let pmax = pivots.iter().cloned().fold(0.0, f64::max);
    let cut = (RANK_TOL * pmax).max(ABS_RANK_FLOOR);
    let rank = pivots.iter().take_while(|&&p| p > cut).count();
    let q = qr.q();
    debug_assert_eq!(q.nrows(), dim);
    (0..rank).map(|i| q.column(i).into_owned()).collect()
}

fn bracket(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

/// Iteration cap for bracket saturation.
fn round_cap(n: usize) -> usize {
    (n * n * n * n).max(4)
}

/// Smallest bracket-closed subspace containing every `−iH(u)`.
pub fn dynamical_lie_algebra(hams: &[Hermitian]) -> Result<OperatorSubspace> {
    let n = hams.first().ok_or_else(|| Error::InvalidArgument("no Hamiltonians given".into()))?.dim();
    let gens: Vec<CMatrix> = hams
        .iter()
        .map(|h| {
            if h.dim() != n {
                return Err(Error::DimensionMismatch { expected: n, found: h.dim() });
            }
            Ok(h.matrix() * -I)
        })
        .collect::<Result<_>>()?;
    let mut current = OperatorSubspace::span(n, &gens)?;
    for _ in 0..round_cap(n) {
        let mats = current.basis_matrices();
        let mut next = mats.clone();
        for i in 0..mats.len() {
            for j in (i + 1)..mats.len() {
                next.push(bracket(&mats[i], &mats[j]));
            }
        }
        let grown = OperatorSubspace::span(n, &next)?;
        if grown.rank() == current.rank() {
            break;
        }
        current = grown;
    }
    Ok(current)
}

/// `⊕_j ad_L^j V`: saturates `V` under brackets with `L`.
pub fn ad_orbit(l: &OperatorSubspace, v: &OperatorSubspace) -> Result<OperatorSubspace> {
    let n = v.dim_hilbert();
    if l.dim_hilbert() != n {
        return Err(Error::DimensionMismatch { expected: n, found: l.dim_hilbert() });
    }
    let l_mats = l.basis_matrices();
    let mut current = v.clone();
    if l_mats.is_empty() {
        return Ok(current);
    }
    for _ in 0..round_cap(n) {
        let mats = current.basis_matrices();
        let mut next = mats.clone();
        for r in &l_mats {
            for w in &mats {
                next.push(bracket(r, w));
            }
        }
        let grown = OperatorSubspace::span(n, &next)?;
        if grown.rank() == current.rank() {
            break;
        }
        current = grown;
    }
    Ok(current)
}

fn dual_image(ch: &KrausChannel, v: &OperatorSubspace, traceless: bool) -> Result<OperatorSubspace> {
    let n = v.dim_hilbert();
    let mut images = Vec::with_capacity(v.rank());
    for k in v.basis_matrices() {
        let img = ch.dual_apply_matrix(&k)?;
        images.push(if traceless { crate::matrix::traceless_part(&img) } else { img });
    }
    OperatorSubspace::span(n, &images)
}

fn recursion(
    l: &OperatorSubspace,
    v0: OperatorSubspace,
    ch: &KrausChannel,
    k_max: usize,
    traceless: bool,
) -> Result<Vec<OperatorSubspace>> {
    if k_max == 0 {
        return Err(Error::InvalidArgument("k_max must be at least 1".into()));
    }
    if ch.dim() != v0.dim_hilbert() {
        return Err(Error::DimensionMismatch { expected: v0.dim_hilbert(), found: ch.dim() });
    }
    let v1 = ad_orbit(l, &v0)?;
    let mut spaces = vec![v0, v1];
    for _ in 2..=k_max {
        let prev = spaces.last().expect("nonempty");
        let next = ad_orbit(l, &dual_image(ch, prev, traceless)?)?;
        spaces.push(next);
    }
    Ok(spaces)
}

/// `[V_0, V_1, …, V_{k_max}]` for the nonselective output `Tr(S_eff ρ)`:
/// `V_0 = span{iS_eff}`, `V_1 = ad-orbit of V_0`,
/// `V_k = ad-orbit of F*(V_{k−1})`.
pub fn observability_spaces(
    l: &OperatorSubspace,
    s_eff: &Hermitian,
    ch: &KrausChannel,
    k_max: usize,
) -> Result<Vec<OperatorSubspace>> {
    let n = l.dim_hilbert();
    if s_eff.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, found: s_eff.dim() });
    }
    let tr = s_eff.trace();
    if tr.abs() > 1e-10 * frobenius(s_eff.matrix()).max(1.0) {
        return Err(Error::InvalidArgument(format!("effective observable must be traceless (trace {tr:.3e})")));
    }
    let v0 = OperatorSubspace::span(n, &[s_eff.matrix() * I])?;
    recursion(l, v0, ch, k_max, false)
}

/// Selective spaces, seeded by `span_m{iF_m}`. Every level is quotiented
/// by `span{i·1}` (all elements are kept traceless).
pub fn selective_observability_spaces(
    l: &OperatorSubspace,
    effects: &[Effect],
    ch: &KrausChannel,
    k_max: usize,
) -> Result<Vec<OperatorSubspace>> {
    let n = l.dim_hilbert();
    let mut seeds = Vec::with_capacity(effects.len());
    for e in effects {
        if e.matrix.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, found: e.matrix.dim() });
        }
        seeds.push(e.matrix.traceless().matrix() * I);
    }
    let v0 = OperatorSubspace::span(n, &seeds)?;
    recursion(l, v0, ch, k_max, true)
}

/// `V ≅ su(n)` once the identity direction is quotiented out.
pub fn is_observable(v: &OperatorSubspace) -> bool {
    let n = v.dim_hilbert();
    v.traceless_rank() == n * n - 1
}

/// First `k` with `V_k = V_{k+1}`, if the sequence settles within the list.
pub fn stabilization_index(spaces: &[OperatorSubspace]) -> Option<usize> {
    spaces.windows(2).position(|w| w[0].same_as(&w[1]))
}

/// Splits `ρ = ρ1 + ρ2` with `ρ1` the orthogonal projection onto `iV`.
pub fn decompose_state(rho: &DensityMatrix, v: &OperatorSubspace) -> Result<(Hermitian, Hermitian)> {
    if rho.dim() != v.dim_hilbert() {
        return Err(Error::DimensionMismatch { expected: v.dim_hilbert(), found: rho.dim() });
    }
    let rho1 = v.project_hermitian(rho.matrix());
    let rho2 = rho.matrix() - &rho1;
    Ok((Hermitian::from_hermitian_part(&rho1), Hermitian::from_hermitian_part(&rho2)))
}

/// True when `ρa − ρb` has no component along `iV_k`.
pub fn indistinguishable(a: &DensityMatrix, b: &DensityMatrix, v: &OperatorSubspace) -> Result<bool> {
    let n = v.dim_hilbert();
    for d in [a.dim(), b.dim()] {
        if d != n {
            return Err(Error::DimensionMismatch { expected: n, found: d });
        }
    }
    let diff = a.matrix() - b.matrix();
    Ok(frobenius(&v.project_hermitian(&diff)) <= INDISTINGUISHABLE_TOL)
}

/// Skew-Hermitian `iH`.
pub fn times_i(h: &Hermitian) -> CMatrix {
    h.matrix() * C64::new(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{identity, pauli, spin1};

    fn h(m: CMatrix) -> Hermitian {
        Hermitian::new(m).unwrap()
    }

    #[test]
    fn span_examples() {
        let z = pauli::z() * I;
        assert_eq!(OperatorSubspace::span(2, &[z.clone(), &z * C64::new(2.0, 0.0)]).unwrap().rank(), 1);
        let all = [pauli::x() * I, pauli::y() * I, pauli::z() * I];
        assert_eq!(OperatorSubspace::span(2, &all).unwrap().rank(), 3);
        assert_eq!(OperatorSubspace::span(2, &[]).unwrap().rank(), 0);
        // tiny perturbation of a dependent set does not add rank
        let eps = pauli::x() * C64::new(0.0, 1e-13);
        let perturbed = [z.clone(), &z * C64::new(-3.0, 0.0) + eps];
        assert_eq!(OperatorSubspace::span(2, &perturbed).unwrap().rank(), 1);
        assert!(matches!(OperatorSubspace::span(2, &[pauli::x()]), Err(Error::NotSkewHermitian { .. })));
    }

    #[test]
    fn span_is_orthonormal() {
        let gens = [pauli::x() * I, (pauli::x() + pauli::y()) * I, identity(2) * I];
        let v = OperatorSubspace::span(2, &gens).unwrap();
        let mats = v.basis_matrices();
        for (i, a) in mats.iter().enumerate() {
            assert!(crate::matrix::skew_hermitian_deviation(a) < 1e-12);
            for (j, b) in mats.iter().enumerate() {
                let g = crate::matrix::hs_inner(a, b).unwrap();
                assert!((g.re - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn lie_algebra_examples() {
        let e = 0.9;
        let l = dynamical_lie_algebra(&[h(pauli::x() * C64::new(e, 0.0)), h(pauli::y() * C64::new(e, 0.0))]).unwrap();
        assert_eq!(l.rank(), 3);
        assert_eq!(dynamical_lie_algebra(&[h(pauli::z())]).unwrap().rank(), 1);
        let l1 = dynamical_lie_algebra(&[h(spin1::jx()), h(spin1::jy())]).unwrap();
        assert_eq!(l1.rank(), 3);
        assert!(dynamical_lie_algebra(&[]).is_err());
    }

    #[test]
    fn ad_orbit_examples() {
        let v = OperatorSubspace::span(2, &[pauli::z() * I]).unwrap();
        let zero = OperatorSubspace::zero(2).unwrap();
        assert!(ad_orbit(&zero, &v).unwrap().same_as(&v));
        let l = dynamical_lie_algebra(&[h(pauli::x()), h(pauli::y())]).unwrap();
        let orbit = ad_orbit(&l, &v).unwrap();
        assert_eq!(orbit.rank(), 3);
        assert!(v.is_contained_in(&orbit));
        // idempotent
        assert!(ad_orbit(&l, &orbit).unwrap().same_as(&orbit));
    }

    #[test]
    fn qubit_observability_and_zero_seed() {
        let l = dynamical_lie_algebra(&[h(pauli::x()), h(pauli::y())]).unwrap();
        let ch = KrausChannel::luders(&h(pauli::y()));
        let spaces = observability_spaces(&l, &h(pauli::y() * C64::new(0.3, 0.0)), &ch, 3).unwrap();
        assert_eq!(spaces[0].rank(), 1);
        for v in &spaces[1..] {
            assert!(v.same_as(&OperatorSubspace::su(2).unwrap()));
            assert!(is_observable(v));
        }
        let spaces = observability_spaces(&l, &Hermitian::zeros(2), &ch, 3).unwrap();
        assert!(spaces.iter().all(|v| v.rank() == 0 && !is_observable(v)));
        assert!(observability_spaces(&l, &Hermitian::identity(2), &ch, 2).is_err());
    }

    #[test]
    fn spin_half_selective_matches_nonselective() {
        let l = dynamical_lie_algebra(&[h(pauli::z())]).unwrap();
        let ch = KrausChannel::luders(&h(pauli::z()));
        let sel = selective_observability_spaces(&l, &ch.effects(), &ch, 1).unwrap();
        let non = observability_spaces(&l, &ch.effective_observable().unwrap(), &ch, 1).unwrap();
        assert!(sel[0].same_as(&non[0]));
    }

    #[test]
    fn spin1_selective_gap() {
        let l = dynamical_lie_algebra(&[h(spin1::jx()), h(spin1::jy())]).unwrap();
        let ch = KrausChannel::luders(&h(spin1::jz()));
        let sel = selective_observability_spaces(&l, &ch.effects(), &ch, 2).unwrap();
        assert_eq!(sel[0].rank(), 2);
        let want = OperatorSubspace::span(
            3,
            &[
                Hermitian::from_real_diagonal(&[1.0, -1.0, 0.0]).matrix() * I,
                Hermitian::from_real_diagonal(&[0.0, 1.0, -1.0]).matrix() * I,
            ],
        )
        .unwrap();
        assert!(sel[0].distance(&want) < 1e-10);
        assert_eq!(sel[1].rank(), 8);
        assert!(is_observable(&sel[1]));
        let non = observability_spaces(&l, &ch.effective_observable().unwrap(), &ch, 5).unwrap();
        for v in &non[1..] {
            assert_eq!(v.rank(), 3);
            assert!(!is_observable(v));
        }
        assert_eq!(stabilization_index(&non), Some(1));
    }

    #[test]
    fn decomposition_examples() {
        let (a, c) = (0.3, -0.5);
        let rho = DensityMatrix::new(
            (identity(2) + pauli::x() * C64::new(a, 0.0) + pauli::z() * C64::new(c, 0.0)) * C64::new(0.5, 0.0),
        )
        .unwrap();
        let v = OperatorSubspace::span(2, &[pauli::z() * I]).unwrap();
        let (r1, r2) = decompose_state(&rho, &v).unwrap();
        assert!(frobenius(&(r1.matrix() - pauli::z() * C64::new(c / 2.0, 0.0))) < 1e-14);
        assert!(frobenius(&(r1.matrix() + r2.matrix() - rho.matrix())) < 1e-14);
        assert!(crate::matrix::hs_inner(r1.matrix(), r2.matrix()).unwrap().norm() < 1e-14);

        let (r1, r2) = decompose_state(&rho, &OperatorSubspace::su(2).unwrap()).unwrap();
        assert!(frobenius(&(r2.matrix() - identity(2) * C64::new(0.5, 0.0))) < 1e-14);
        assert!(r1.trace().abs() < 1e-14);
    }

    #[test]
    fn indistinguishability_examples() {
        let rho = DensityMatrix::basis_state(2, 0);
        let other = DensityMatrix::basis_state(2, 1);
        let su2 = OperatorSubspace::su(2).unwrap();
        assert!(indistinguishable(&rho, &rho, &su2).unwrap());
        assert!(!indistinguishable(&rho, &other, &su2).unwrap());
        let vy = OperatorSubspace::span(2, &[pauli::y() * I]).unwrap();
        assert!(indistinguishable(&rho, &other, &vy).unwrap());
    }

    #[test]
    fn nearly_parallel_generators_have_rank_one() {
        // columns proportional to one direction up to round-off
        let d = [0.34127361906905607, 0.5723459489475747, -0.7158281339727289];
        let scales = [1.0, 0.19460851, -0.08748255];
        let noise = [9.4e-16, 4.6e-16, -4.6e-15];
        let basis = HermitianBasis::new(2).unwrap();
        let gens: Vec<CMatrix> = scales
            .iter()
            .zip(&noise)
            .map(|(&c, &e)| {
                let coords = DVector::from_vec(vec![c * d[0], c * d[1], c * d[2], e]);
                basis.from_coords(&coords) * I
            })
            .collect();
        let v = OperatorSubspace::span(2, &gens).unwrap();
        assert_eq!(v.rank(), 1);
        let dir = DVector::from_vec(vec![d[0], d[1], d[2], 0.0]).normalize();
        assert!(v.coordinates()[0].dot(&dir).abs() > 1.0 - 1e-14);
    }
}
