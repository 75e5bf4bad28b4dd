//! Measurement back-action: how far a channel moves a state, the small-time
//! quadratic form, the worst-case initial state and the least disturbing
//! probe preparation.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channels::KrausChannel;
use crate::error::{Error, Result};
use crate::matrix::{frobenius, pauli, same_dim, trace_product, CMatrix, DensityMatrix, Hermitian, C64};

/// Gaps below this fraction of the spectral spread count as ties.
const TIE_TOL: f64 = 1e-12;
const REFINE_STARTS: usize = 20;
const REFINE_ITERS: usize = 400;

/// `‖F(ρ) − ρ‖_F`.
pub fn disturbance(rho: &DensityMatrix, ch: &KrausChannel) -> Result<f64> {
    let out = ch.apply_matrix(rho.matrix())?;
    Ok(frobenius(&(out - rho.matrix())))
}

/// `2τ² Tr(X²ρ² − XρXρ)`: the leading term of `d²` when the measurement
/// acts as a short unitary kick generated by `X`.
pub fn small_time_disturbance(rho: &DensityMatrix, x: &Hermitian, tau: f64) -> Result<f64> {
    same_dim(rho.matrix(), x.matrix())?;
    let xr = x.matrix() * rho.matrix();
    let rx = rho.matrix() * x.matrix();
    let v = trace_product(&rx, &xr).re - trace_product(&xr, &xr).re;
    Ok((2.0 * tau * tau * v).max(0.0))
}

/// `X = H(u) + Tr(B ρ_P) A`.
pub fn disturbance_generator(h: &Hermitian, a: &Hermitian, b_expectation: f64) -> Result<Hermitian> {
    same_dim(h.matrix(), a.matrix())?;
    Ok(Hermitian::from_hermitian_part(&(h.matrix() + a.matrix() * C64::new(b_expectation, 0.0))))
}

#[derive(Debug, Clone)]
pub struct DisturbanceReport {
    pub d_squared: f64,
    pub worst_state: DensityMatrix,
    /// Eigenvalues `x_k` of `X`, ascending.
    pub eigenvalues: Vec<f64>,
    /// Weights `r_k²` of the worst state in the eigenbasis.
    pub weights: Vec<f64>,
    /// Eigenvector pair carrying the maximum.
    pub pair: (usize, usize),
    /// Lagrange multiplier of the norm constraint at the maximizer.
    pub multiplier: f64,
    /// `X ∝ 1`: every state is optimal.
    pub degenerate: bool,
    /// Several eigenvector pairs attain the maximum; the lowest is returned.
    pub tie: bool,
}

/// `2τ² Σ_{k>j} (x_k − x_j)² s_k s_j` with `s_k = r_k²`.
pub fn quadratic_form(eigenvalues: &[f64], weights: &[f64], tau: f64) -> f64 {
    let mut acc = 0.0;
    for k in 0..eigenvalues.len() {
        for j in 0..k {
            let gap = eigenvalues[k] - eigenvalues[j];
            acc += gap * gap * weights[k] * weights[j];
        }
    }
    2.0 * tau * tau * acc
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &mut [f64]) {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cum += u;
        let t = (cum - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

/// Projected gradient ascent on the simplex from `REFINE_STARTS` seeded
/// starts; returns the best weights found.
fn refine(x: &[f64], tau: f64) -> (f64, Vec<f64>) {
    let n = x.len();
    let spread = x[n - 1] - x[0];
    let step = 1.0 / (4.0 * spread * spread).max(1e-300);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut best = (f64::NEG_INFINITY, vec![0.0; n]);
    for _ in 0..REFINE_STARTS {
        let mut s: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let total: f64 = s.iter().sum();
        s.iter_mut().for_each(|v| *v /= total);
        for _ in 0..REFINE_ITERS {
            let mean: f64 = s.iter().zip(x).map(|(w, v)| w * v).sum();
            for (w, v) in s.iter_mut().zip(x) {
                *w += step * (v * v - 2.0 * mean * v);
            }
            project_simplex(&mut s);
        }
        let val = quadratic_form(x, &s, tau);
        if val > best.0 {
            best = (val, s);
        }
    }
    best
}

/// Pure state maximizing the small-time disturbance generated by `x`.
///
/// Each eigenvector pair `(j, k)` in equal superposition scores
/// `2τ²(x_k − x_j)²/4`; the best pair is cross-checked by multi-start
/// refinement over the simplex of weights.
pub fn worst_case_state(x: &Hermitian, tau: f64) -> Result<DisturbanceReport> {
    let n = x.dim();
    if n < 2 {
        return Err(Error::InvalidArgument("worst-case state needs dimension at least 2".into()));
    }
    let (vals, vecs) = x.eigh();
    let spread = vals[n - 1] - vals[0];
    let scale = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let degenerate = spread <= TIE_TOL * scale;

    let mut best_pair = (0, 1);
    let mut best_gap = f64::NEG_INFINITY;
    let mut winners = 0;
    for j in 0..n {
        for k in (j + 1)..n {
            let gap = vals[k] - vals[j];
            if gap > best_gap + TIE_TOL * scale {
                best_gap = gap;
                best_pair = (j, k);
                winners = 1;
            } else if (gap - best_gap).abs() <= TIE_TOL * scale {
                winners += 1;
            }
        }
    }
    let mut weights = vec![0.0; n];
    weights[best_pair.0] = 0.5;
    weights[best_pair.1] = 0.5;
    let mut d_squared = quadratic_form(&vals, &weights, tau);

    if n > 2 && !degenerate {
        let (val, s) = refine(&vals, tau);
        if val > d_squared * (1.0 + 1e-12) + 1e-300 {
            log::debug!("simplex refinement improved on the best pair: {val:e} > {d_squared:e}");
            d_squared = val;
            weights = s;
        }
    }

    let amps = DVector::from_iterator(n, weights.iter().map(|w| C64::new(w.sqrt(), 0.0)));
    let psi: DVector<C64> = &vecs * amps;
    let worst_state = DensityMatrix::pure(&psi)?;
    Ok(DisturbanceReport {
        d_squared,
        worst_state,
        eigenvalues: vals,
        weights,
        pair: best_pair,
        multiplier: 2.0 * d_squared,
        degenerate,
        tie: !degenerate && winners > 1,
    })
}

/// Spectral spread `x_max − x_min` of `H + cA`.
pub fn worst_case_gap(h: &Hermitian, a: &Hermitian, c: f64) -> Result<f64> {
    let x = disturbance_generator(h, a, c)?;
    let v = x.eigenvalues();
    Ok(v[v.len() - 1] - v[0])
}

fn bloch(m: &CMatrix) -> [f64; 3] {
    [
        trace_product(m, &pauli::x()).re / 2.0,
        trace_product(m, &pauli::y()).re / 2.0,
        trace_product(m, &pauli::z()).re / 2.0,
    ]
}

/// The `c ∈ [lo, hi]` minimizing the spread of `H + cA`.
///
/// Qubits use the closed form on Bloch vectors; larger systems use
/// golden-section search (the spread is convex in `c`).
pub fn optimal_probe(h: &Hermitian, a: &Hermitian, lo: f64, hi: f64) -> Result<f64> {
    same_dim(h.matrix(), a.matrix())?;
    if !(lo <= hi) {
        return Err(Error::InvalidArgument(format!("empty probe range [{lo}, {hi}]")));
    }
    if h.dim() == 2 {
        let hb = bloch(h.matrix());
        let ab = bloch(a.matrix());
        let aa: f64 = ab.iter().map(|v| v * v).sum();
        if aa == 0.0 {
            return Ok(lo.max(0.0).min(hi) + 0.0);
        }
        let ha: f64 = hb.iter().zip(&ab).map(|(p, q)| p * q).sum();
        return Ok((-ha / aa).clamp(lo, hi) + 0.0);
    }
    let gap = |c: f64| worst_case_gap(h, a, c).expect("dimensions checked");
    let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut l, mut r) = (lo, hi);
    let mut c1 = r - phi * (r - l);
    let mut c2 = l + phi * (r - l);
    let (mut f1, mut f2) = (gap(c1), gap(c2));
    while r - l > 1e-12 * (1.0 + lo.abs().max(hi.abs())) {
        if f1 <= f2 {
            r = c2;
            c2 = c1;
            f2 = f1;
            c1 = r - phi * (r - l);
            f1 = gap(c1);
        } else {
            l = c1;
            c1 = c2;
            f1 = f2;
            c2 = l + phi * (r - l);
            f2 = gap(c2);
        }
    }
    Ok(0.5 * (l + r))
}

/// Minimally disturbing `c = Tr(σx ρ_P)` for the qubit scenario with
/// `H(u1) = Eσx`, `H(u2) = Eσy`, `A = σy`, `B = σx`.
pub fn optimal_probe_qubit(e: f64, control: &str) -> Result<f64> {
    let h = match control {
        "u1" => pauli::x(),
        "u2" => pauli::y(),
        other => return Err(Error::UnknownSymbol(other.to_string())),
    };
    let h = Hermitian::from_hermitian_part(&(h * C64::new(e, 0.0)));
    optimal_probe(&h, &Hermitian::from_hermitian_part(&pauli::y()), -1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indirect::{indirect_channel, IndirectSetup};
    use crate::matrix::{identity, pauli};
    use crate::random::{random_density, random_hermitian, random_pure};

    fn h(m: CMatrix) -> Hermitian {
        Hermitian::new(m).unwrap()
    }

    fn plus() -> DensityMatrix {
        DensityMatrix::new(CMatrix::from_element(2, 2, C64::new(0.5, 0.0))).unwrap()
    }

    #[test]
    fn disturbance_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rho = random_density(&mut rng, 3);
        assert_eq!(disturbance(&rho, &KrausChannel::identity(3)).unwrap(), 0.0);
        let lz = KrausChannel::luders(&h(pauli::z()));
        assert!(disturbance(&DensityMatrix::basis_state(2, 0), &lz).unwrap() < 1e-15);
        assert!((disturbance(&plus(), &lz).unwrap() - 0.5_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn small_time_examples() {
        let z = h(pauli::z());
        assert!(small_time_disturbance(&DensityMatrix::basis_state(2, 1), &z, 0.3).unwrap().abs() < 1e-16);
        assert!((small_time_disturbance(&plus(), &z, 0.1).unwrap() - 0.02).abs() < 1e-15);
    }

    #[test]
    fn small_time_matches_simulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (hu, a, b, s) = (
            random_hermitian(&mut rng, 2),
            random_hermitian(&mut rng, 2),
            random_hermitian(&mut rng, 2),
            random_hermitian(&mut rng, 2),
        );
        let rho_p = random_density(&mut rng, 2);
        let rho = random_pure(&mut rng, 2);
        let x = disturbance_generator(&hu, &a, b.expectation(rho_p.matrix())).unwrap();
        let mut ratios = Vec::new();
        for tau in [1e-2, 5e-3, 2.5e-3] {
            let setup = IndirectSetup::new(a.clone(), b.clone(), s.clone(), rho_p.clone(), tau, tau, Some(hu.clone())).unwrap();
            let ch = indirect_channel(&setup).unwrap();
            let sim = disturbance(&rho, ch.kraus()).unwrap().powi(2);
            let formula = small_time_disturbance(&rho, &x, tau).unwrap();
            ratios.push((sim - formula).abs() / tau.powi(3));
        }
        let max = ratios.iter().cloned().fold(0.0, f64::max);
        assert!(max < 50.0, "{ratios:?}");
    }

    #[test]
    fn qubit_worst_case_is_equal_superposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_hermitian(&mut rng, 2);
        let tau = 0.2;
        let r = worst_case_state(&x, tau).unwrap();
        let gap = r.eigenvalues[1] - r.eigenvalues[0];
        assert!((r.d_squared - 2.0 * tau * tau * gap * gap / 4.0).abs() < 1e-12);
        assert!((r.worst_state.purity() - 1.0).abs() < 1e-12);
        let (_, v) = x.eigh();
        for k in 0..2 {
            let p = (v.column(k).adjoint() * r.worst_state.matrix() * v.column(k))[(0, 0)].re;
            assert!((p - 0.5).abs() < 1e-12);
        }
        assert!((small_time_disturbance(&r.worst_state, &x, tau).unwrap() - r.d_squared).abs() < 1e-12);
        assert!(!r.degenerate && !r.tie);
        assert!((r.multiplier - 2.0 * r.d_squared).abs() < 1e-15);
    }

    #[test]
    fn degenerate_and_tied_spectra() {
        let r = worst_case_state(&Hermitian::identity(3).scaled(2.0), 0.5).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.d_squared, 0.0);
        let r = worst_case_state(&Hermitian::from_real_diagonal(&[0.0, 0.0, 1.0]), 0.5).unwrap();
        assert!(r.tie);
        assert_eq!(r.pair, (0, 2));
        assert_eq!(r.weights.iter().filter(|w| **w > 0.0).count(), 2);
    }

    fn grid_max(x: &[f64], tau: f64, steps: usize) -> f64 {
        let mut best = 0.0_f64;
        let n = x.len();
        let mut idx = vec![0usize; n - 1];
        loop {
            let used: usize = idx.iter().sum();
            if used <= steps {
                let mut w: Vec<f64> = idx.iter().map(|&i| i as f64 / steps as f64).collect();
                w.push((steps - used) as f64 / steps as f64);
                best = best.max(quadratic_form(x, &w, tau));
            }
            let mut p = 0;
            loop {
                if p == n - 1 {
                    return best;
                }
                idx[p] += 1;
                if idx[p] <= steps {
                    break;
                }
                idx[p] = 0;
                p += 1;
            }
        }
    }

    #[test]
    fn matches_simplex_grid_for_three_levels() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..3 {
            let x = random_hermitian(&mut rng, 3);
            let r = worst_case_state(&x, 0.7).unwrap();
            let grid = grid_max(&r.eigenvalues, 0.7, 1000);
            assert!((r.d_squared - grid).abs() < 1e-6);
            assert!(r.d_squared >= grid - 1e-12);
        }
    }

    #[test]
    fn upper_bounds_random_pure_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_hermitian(&mut rng, 4);
        let r = worst_case_state(&x, 0.3).unwrap();
        for _ in 0..1000 {
            let rho = random_pure(&mut rng, 4);
            assert!(small_time_disturbance(&rho, &x, 0.3).unwrap() <= r.d_squared + 1e-9);
        }
    }

    #[test]
    fn shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_hermitian(&mut rng, 3);
        let rho = random_pure(&mut rng, 3);
        let shifted = Hermitian::from_hermitian_part(&(x.matrix() + identity(3) * C64::new(4.2, 0.0)));
        let a = small_time_disturbance(&rho, &x, 0.4).unwrap();
        let b = small_time_disturbance(&rho, &shifted, 0.4).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn qubit_probe_choices() {
        for e in [0.3, 1.0, 3.0] {
            assert_eq!(optimal_probe_qubit(e, "u1").unwrap(), 0.0);
            assert_eq!(optimal_probe_qubit(e, "u2").unwrap(), (-e).max(-1.0));
        }
        assert_eq!(optimal_probe_qubit(0.5, "u2").unwrap(), -0.5);
        assert!(matches!(optimal_probe_qubit(1.0, "u3"), Err(Error::UnknownSymbol(_))));
        let hx = h(pauli::x() * C64::new(0.7, 0.0));
        let gap = worst_case_gap(&hx, &h(pauli::y()), 0.4).unwrap();
        assert!((gap - 2.0 * (0.49_f64 + 0.16).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn golden_section_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (hh, a) = (random_hermitian(&mut rng, 3), random_hermitian(&mut rng, 3));
        let c = optimal_probe(&hh, &a, -1.0, 1.0).unwrap();
        let g = worst_case_gap(&hh, &a, c).unwrap();
        for i in 0..=400 {
            let t = -1.0 + i as f64 / 200.0;
            assert!(g <= worst_case_gap(&hh, &a, t).unwrap() + 1e-9);
        }
    }
}
