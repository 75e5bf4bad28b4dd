//! Seeded generators for random states, observables and channels.
//!
//! Every randomized procedure in the crate takes an explicit RNG so runs are
//! reproducible from a seed.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::channels::{KrausChannel, Outcome};
use crate::matrix::{eigh, CMatrix, DensityMatrix, Hermitian, C64};

/// Matrix with i.i.d. standard complex Gaussian entries.
pub fn ginibre<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    })
}

/// Hermitian matrix from the Gaussian unitary ensemble.
pub fn random_hermitian<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Hermitian {
    Hermitian::from_hermitian_part(&ginibre(rng, n, n))
}

/// Hermitian matrix rescaled to unit spectral norm.
pub fn random_unit_hermitian<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Hermitian {
    let h = random_hermitian(rng, n);
    let norm = crate::matrix::spectral_norm_hermitian(h.matrix());
    h.scaled(1.0 / norm)
}

/// Haar-random unitary (QR of a Ginibre matrix with phase correction).
pub fn random_unitary<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CMatrix {
    let qr = ginibre(rng, n, n).qr();
    let (mut q, r) = qr.unpack();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Full-rank mixed state `G G† / Tr(G G†)`.
pub fn random_density<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DensityMatrix {
    let g = ginibre(rng, n, n);
    let m = &g * g.adjoint();
    let tr = crate::matrix::trace(&m);
    DensityMatrix::new(crate::matrix::hermitian_part(&(m / tr))).expect("Ginibre state is valid")
}

/// Haar-random pure state.
pub fn random_pure<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DensityMatrix {
    let v = ginibre(rng, n, 1);
    DensityMatrix::pure(&v.column(0).into_owned()).expect("nonzero vector")
}

/// Random trace-preserving channel with `outcomes` outcomes of
/// `ops_per_outcome` Kraus operators each; outcome `m` has value `m`.
pub fn random_channel<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    outcomes: usize,
    ops_per_outcome: usize,
) -> KrausChannel {
    let raw: Vec<Vec<CMatrix>> = (0..outcomes)
        .map(|_| (0..ops_per_outcome).map(|_| ginibre(rng, n, n)).collect())
        .collect();
    let mut c = CMatrix::zeros(n, n);
    for k in raw.iter().flatten() {
        c += k.adjoint() * k;
    }
    let (vals, vecs) = eigh(&c);
    let inv_sqrt = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        n,
        vals.iter().map(|v| C64::new(1.0 / v.sqrt(), 0.0)),
    ));
    let norm = &vecs * inv_sqrt * vecs.adjoint();
    let ops = raw.into_iter().map(|g| g.into_iter().map(|k| k * &norm).collect()).collect();
    let labels = (0..outcomes).map(|m| Outcome::numeric(m as f64)).collect();
    KrausChannel::new(labels, ops).expect("normalized Kraus family is complete")
}

/// Lüders channel of a random observable.
pub fn random_luders<R: Rng + ?Sized>(rng: &mut R, n: usize) -> KrausChannel {
    KrausChannel::luders(&random_hermitian(rng, n))
}
