//! Probe-mediated measurement.
//!
//! The system (dimension `n_s`) is coupled to a probe (dimension `n_p`)
//! through `g(t) A ⊗ B` for a time `τ`; afterwards `S` is measured on the
//! probe. Only the integrated coupling `G = ∫ g` matters when no system
//! Hamiltonian acts during the interaction.

use crate::channels::{KrausChannel, Outcome};
use crate::error::{Error, Result};
use crate::matrix::{
    dim_of, eigh, expm, frobenius, identity, partial_trace_probe, spectral_norm_hermitian, tensor,
    trace_product, CMatrix, DensityMatrix, Hermitian, HermitianBasis, C64, I,
};

/// Default relative tolerance of the series truncation.
pub const SERIES_TOL: f64 = 1e-14;
/// Default cap on the number of series terms.
pub const SERIES_CAP: usize = 60;

/// Probe states with weight below this contribute no Kraus operators.
const PROBE_WEIGHT_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone)]
pub struct IndirectSetup {
    pub a: Hermitian,
    pub b: Hermitian,
    pub s: Hermitian,
    pub rho_p: DensityMatrix,
    pub coupling: f64,
    pub tau: f64,
    pub h_u: Option<Hermitian>,
}

impl IndirectSetup {
    pub fn new(
        a: Hermitian,
        b: Hermitian,
        s: Hermitian,
        rho_p: DensityMatrix,
        coupling: f64,
        tau: f64,
        h_u: Option<Hermitian>,
    ) -> Result<Self> {
        let np = b.dim();
        for d in [s.dim(), rho_p.dim()] {
            if d != np {
                return Err(Error::DimensionMismatch { expected: np, found: d });
            }
        }
        if let Some(h) = &h_u {
            if h.dim() != a.dim() {
                return Err(Error::DimensionMismatch { expected: a.dim(), found: h.dim() });
            }
        }
        if !coupling.is_finite() {
            return Err(Error::InvalidArgument(format!("coupling must be finite, got {coupling}")));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!("interaction time must be positive, got {tau}")));
        }
        Ok(IndirectSetup { a, b, s, rho_p, coupling, tau, h_u })
    }

    pub fn system_dim(&self) -> usize {
        self.a.dim()
    }

    pub fn probe_dim(&self) -> usize {
        self.b.dim()
    }

    /// `Tr(ρ_P S)`.
    pub fn probe_expectation(&self) -> f64 {
        self.s.expectation(self.rho_p.matrix())
    }

    /// Unitary of the whole interaction on system ⊗ probe.
    pub fn total_unitary(&self) -> CMatrix {
        let ns = self.system_dim();
        let np = self.probe_dim();
        let mut gen = tensor(self.a.matrix(), self.b.matrix()) * C64::new(self.coupling, 0.0);
        if let Some(h) = &self.h_u {
            gen += tensor(h.matrix(), &identity(np)) * C64::new(self.tau, 0.0);
        }
        debug_assert_eq!(gen.nrows(), ns * np);
        expm(&(gen * -I))
    }
}

#[derive(Debug, Clone)]
pub struct SeriesResult {
    pub raw: Hermitian,
    pub traceless: Hermitian,
    /// Index of the last term included.
    pub terms_used: usize,
    pub converged: bool,
}

/// Power series `Σ_k A^k Tr(ad_{−iB}^k(ρ_P) S) G^k / k!`.
///
/// Stops once a rigorous bound on the remaining tail drops below
/// `tol · max(‖sum‖, √n ‖S‖)`.
pub fn effective_observable_series(setup: &IndirectSetup, tol: f64, k_cap: usize) -> Result<SeriesResult> {
    if setup.h_u.is_some() {
        return Err(Error::Unsupported(
            "no series exists with a system Hamiltonian during the interaction; use the exact or first-order form".into(),
        ));
    }
    let ns = setup.system_dim();
    let g = setup.coupling;
    let a = setup.a.matrix();
    let minus_ib = setup.b.matrix() * -I;
    let s = setup.s.matrix();

    let a_norm = spectral_norm_hermitian(a);
    let b_eigs = setup.b.eigenvalues();
    let spread = b_eigs.last().copied().unwrap_or(0.0) - b_eigs.first().copied().unwrap_or(0.0);
    let x = a_norm * spread * g.abs();
    let scale = (ns as f64).sqrt() * spectral_norm_hermitian(s);

    let mut d = setup.rho_p.matrix().clone();
    let mut a_pow = identity(ns);
    let mut coeff = 1.0_f64; // G^k / k!
    let mut bound = scale; // scale · x^k / k!
    let mut acc = CMatrix::zeros(ns, ns);
    let mut k = 0;
    let mut converged = false;
    loop {
        let c_k = trace_product(&d, s).re;
        acc += &a_pow * C64::new(c_k * coeff, 0.0);
        let next_bound = bound * x / (k + 1) as f64;
        let ratio = x / (k + 2) as f64;
        if next_bound <= tol * frobenius(&acc).max(scale) && ratio < 0.5 {
            converged = true;
            break;
        }
        if k >= k_cap {
            break;
        }
        k += 1;
        d = &minus_ib * &d - &d * &minus_ib;
        a_pow = &a_pow * a;
        coeff *= g / k as f64;
        bound = next_bound;
    }
    if !converged {
        log::warn!("effective observable series hit the cap of {k_cap} terms before reaching tolerance {tol:e}");
    }
    let raw = Hermitian::from_hermitian_part(&acc);
    let traceless = raw.traceless();
    Ok(SeriesResult { raw, traceless, terms_used: k, converged })
}

/// The Hermitian `S_eff` with `Tr(S_eff ρ) = Tr((1⊗S) U (ρ⊗ρ_P) U†)`, read
/// off by evaluating the map on an orthonormal Hermitian basis.
pub fn effective_observable_exact(setup: &IndirectSetup) -> Hermitian {
    let ns = setup.system_dim();
    let np = setup.probe_dim();
    let u = setup.total_unitary();
    let u_adj = u.adjoint();
    let one_s = tensor(&identity(ns), setup.s.matrix());
    let basis = HermitianBasis::new(ns.max(2)).expect("basis of positive dimension");
    let mut out = CMatrix::zeros(ns, ns);
    if ns == 1 {
        let rho = tensor(&identity(1), setup.rho_p.matrix());
        out[(0, 0)] = trace_product(&one_s, &(&u * rho * &u_adj));
        return Hermitian::from_hermitian_part(&out);
    }
    for e in basis.elements() {
        let joint = tensor(&e, setup.rho_p.matrix());
        let y = trace_product(&one_s, &(&u * joint * &u_adj)).re;
        out += e * C64::new(y, 0.0);
    }
    debug_assert_eq!(out.nrows(), ns);
    debug_assert!(np > 0);
    Hermitian::from_hermitian_part(&out)
}

/// Two-term approximation `Tr(ρ_P S)·1 + Tr([−iB, ρ_P] S)·G·A`, with `G`
/// replaced by `τ` when a system Hamiltonian is present.
pub fn effective_observable_first_order(setup: &IndirectSetup) -> Hermitian {
    let ns = setup.system_dim();
    let rho = setup.rho_p.matrix();
    let minus_ib = setup.b.matrix() * -I;
    let comm = &minus_ib * rho - rho * &minus_ib;
    let c1 = trace_product(&comm, setup.s.matrix()).re;
    let g = if setup.h_u.is_some() { setup.tau } else { setup.coupling };
    let m = identity(ns) * C64::new(setup.probe_expectation(), 0.0) + setup.a.matrix() * C64::new(c1 * g, 0.0);
    Hermitian::from_hermitian_part(&m)
}

/// The system channel induced by the interaction, in Kraus form and as a
/// dense partial trace.
#[derive(Debug, Clone)]
pub struct IndirectChannel {
    kraus: KrausChannel,
    unitary: CMatrix,
    rho_p: CMatrix,
    n_s: usize,
    n_p: usize,
}

impl IndirectChannel {
    pub fn kraus(&self) -> &KrausChannel {
        &self.kraus
    }

    pub fn into_kraus(self) -> KrausChannel {
        self.kraus
    }

    pub fn unitary(&self) -> &CMatrix {
        &self.unitary
    }

    /// `Tr_P(U (ρ ⊗ ρ_P) U†)`.
    pub fn apply_dense(&self, rho: &CMatrix) -> Result<CMatrix> {
        let d = dim_of(rho)?;
        if d != self.n_s {
            return Err(Error::DimensionMismatch { expected: self.n_s, found: d });
        }
        let joint = tensor(rho, &self.rho_p);
        partial_trace_probe(&(&self.unitary * joint * self.unitary.adjoint()), self.n_s, self.n_p)
    }
}

/// Kraus operators `√p_a (1⊗⟨b|) U (1⊗|a⟩)` with `ρ_P = Σ p_a |a⟩⟨a|` and
/// `|b⟩` running over an eigenbasis of `S`; operators are grouped into one
/// outcome per distinct eigenvalue of `S`.
pub fn indirect_channel(setup: &IndirectSetup) -> Result<IndirectChannel> {
    let ns = setup.system_dim();
    let np = setup.probe_dim();
    let u = setup.total_unitary();
    let id_s = identity(ns);
    let (weights, probe_vecs) = eigh(setup.rho_p.matrix());
    let probe_meas = KrausChannel::luders(&setup.s);

    let mut outcomes: Vec<Outcome> = Vec::new();
    let mut operators: Vec<Vec<CMatrix>> = Vec::new();
    for (outcome, proj) in probe_meas.outcomes().iter().zip(probe_meas.operators()) {
        let (pv, vecs) = eigh(&proj[0]);
        let mut group = Vec::new();
        for (j, _) in pv.iter().enumerate().filter(|(_, &v)| v > 0.5) {
            let bra = CMatrix::from_fn(1, np, |_, c| vecs[(c, j)].conj());
            let left = tensor(&id_s, &bra);
            let lu = &left * &u;
            for (a, &p) in weights.iter().enumerate() {
                if p <= PROBE_WEIGHT_FLOOR {
                    continue;
                }
                let ket = CMatrix::from_fn(np, 1, |r, _| probe_vecs[(r, a)]);
                let right = tensor(&id_s, &ket);
                group.push(&lu * right * C64::new(p.sqrt(), 0.0));
            }
        }
        outcomes.push(outcome.clone());
        operators.push(group);
    }
    let kraus = KrausChannel::new(outcomes, operators)?;
    Ok(IndirectChannel { kraus, unitary: u, rho_p: setup.rho_p.matrix().clone(), n_s: ns, n_p: np })
}

/// `trPS·1 + γ G A`, the form taken by `S_eff` when `[B, S] = iγ1` on an
/// infinite-dimensional probe. No finite probe satisfies that relation.
pub fn conjugate_probe_formula(gamma: f64, coupling: f64, a: &Hermitian, tr_ps: f64) -> Hermitian {
    let n = a.dim();
    let m = identity(n) * C64::new(tr_ps, 0.0) + a.matrix() * C64::new(gamma * coupling, 0.0);
    Hermitian::from_hermitian_part(&m)
}

/// Probe state with Bloch vector `r` (|r| ≤ 1).
pub fn qubit_state(r: [f64; 3]) -> Result<DensityMatrix> {
    use crate::matrix::pauli;
    let m = (identity(2)
        + pauli::x() * C64::new(r[0], 0.0)
        + pauli::y() * C64::new(r[1], 0.0)
        + pauli::z() * C64::new(r[2], 0.0))
        * C64::new(0.5, 0.0);
    DensityMatrix::new(m)
}
