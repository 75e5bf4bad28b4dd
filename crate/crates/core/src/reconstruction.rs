//! Initial-state reconstruction from one output record.
//!
//! For a traceless `S` the output is `y(t) = Tr(C(t) ρ₀)` with
//! `C(t) = X(t)† S X(t)`. The Gramian `g_ij = ∫ f_i f_j dt` over the
//! traceless coordinates `f_i` of `C(t)` is invertible exactly when the
//! record determines `ρ₀`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{ControlSchedule, Segment};
use crate::error::{Error, Result};
use crate::lie::{ad_orbit, dynamical_lie_algebra, is_observable, OperatorSubspace};
use crate::matrix::{eigh, identity, trace_product, CMatrix, DensityMatrix, Hermitian, HermitianBasis, C64, I};

/// Default number of quadrature nodes.
pub const DEFAULT_NODES: usize = 801;
/// Relative eigenvalue threshold for an invertible Gramian.
pub const RANK_THRESHOLD: f64 = 1e-9;
/// Eigenvalues below this after inversion trigger the PSD projection.
pub const PSD_CLIP: f64 = -1e-8;
/// Eigenvalues below this additionally log a warning.
pub const PSD_WARN: f64 = -1e-4;

/// `X(t)† S X(t)`.
pub fn conjugated_observable(schedule: &ControlSchedule, s: &Hermitian, t: f64) -> Result<Hermitian> {
    if s.dim() != schedule.dim() {
        return Err(Error::DimensionMismatch { expected: schedule.dim(), found: s.dim() });
    }
    let x = schedule.forward(t)?;
    Ok(Hermitian::from_hermitian_part(&(x.adjoint() * s.matrix() * x)))
}

/// Nodes and weights of a composite Simpson rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    /// Composite Simpson on `[0, horizon]`, split at `breaks` so no panel
    /// straddles a kink. About `nodes` points in total; every piece gets an
    /// even number (≥ 2) of intervals.
    pub fn simpson(horizon: f64, breaks: &[f64], nodes: usize) -> Result<Self> {
        if nodes < 3 {
            return Err(Error::InvalidArgument(format!("Simpson quadrature needs at least 3 nodes, got {nodes}")));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        let eps = 1e-12 * horizon;
        let mut cuts = vec![0.0];
        let mut inner: Vec<f64> = breaks.iter().copied().filter(|&b| b > eps && b < horizon - eps).collect();
        inner.sort_by(f64::total_cmp);
        for b in inner {
            if b - cuts.last().unwrap() > eps {
                cuts.push(b);
            }
        }
        cuts.push(horizon);

        let intervals = (nodes - 1) as f64;
        let mut out = Quadrature { nodes: vec![0.0], weights: vec![0.0] };
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let share = intervals * (b - a) / horizon;
            let m = (2 * (share / 2.0).round() as usize).max(2);
            let h = (b - a) / m as f64;
            let last = out.weights.len() - 1;
            out.weights[last] += h / 3.0;
            for i in 1..=m {
                let t = if i == m { b } else { a + i as f64 * h };
                let coef = if i == m {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                out.nodes.push(t);
                out.weights.push(coef * h / 3.0);
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct GramianOperator {
    pub dim_hilbert: usize,
    /// `(n²−1)×(n²−1)` in the traceless Hermitian basis.
    pub matrix: DMatrix<f64>,
    pub horizon: f64,
    pub quadrature_nodes: usize,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
}

impl GramianOperator {
    /// `λmax/λmin`; infinite when singular.
    pub fn condition_number(&self) -> f64 {
        if self.min_eigenvalue <= 0.0 {
            f64::INFINITY
        } else {
            self.max_eigenvalue / self.min_eigenvalue
        }
    }

    pub fn rank(&self) -> usize {
        let eig = self.matrix.clone().symmetric_eigen();
        let cut = RANK_THRESHOLD * self.max_eigenvalue.max(0.0);
        eig.eigenvalues.iter().filter(|&&v| v > cut && v > 0.0).count()
    }
}

fn gramian_from_samples(n: usize, horizon: f64, weights: &[f64], coords: &[DVector<f64>]) -> GramianOperator {
    let d = n * n - 1;
    let mut g = DMatrix::<f64>::zeros(d, d);
    for (w, f) in weights.iter().zip(coords) {
        g.ger(*w, f, f, 1.0);
    }
    g = (&g + g.transpose()) * 0.5;
    let eig = g.clone().symmetric_eigen();
    let min_eigenvalue = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_eigenvalue = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    GramianOperator {
        dim_hilbert: n,
        matrix: g,
        horizon,
        quadrature_nodes: weights.len(),
        min_eigenvalue,
        max_eigenvalue,
    }
}

/// Quadrature grid used by [`gramian`] and [`reconstruct`].
pub fn quadrature_for(schedule: &ControlSchedule, horizon: f64, nodes: usize) -> Result<Quadrature> {
    let total = schedule.total_duration();
    if horizon > total + 1e-12 {
        return Err(Error::TimeOutOfRange { t: horizon, total });
    }
    Quadrature::simpson(horizon, schedule.breakpoints(), nodes)
}

fn coordinate_samples(schedule: &ControlSchedule, s: &Hermitian, basis: &HermitianBasis, quad: &Quadrature) -> Result<Vec<DVector<f64>>> {
    quad.nodes
        .iter()
        .map(|&t| Ok(basis.traceless_coords(conjugated_observable(schedule, s, t)?.matrix())))
        .collect()
}

/// `g_ij = ∫₀^T f_i(t) f_j(t) dt`.
pub fn gramian(schedule: &ControlSchedule, s: &Hermitian, horizon: f64, nodes: usize) -> Result<GramianOperator> {
    let n = schedule.dim();
    let basis = HermitianBasis::new(n)?;
    let quad = quadrature_for(schedule, horizon, nodes)?;
    let coords = coordinate_samples(schedule, s, &basis, &quad)?;
    Ok(gramian_from_samples(n, horizon, &quad.weights, &coords))
}

/// `∫₀^T C(t) Tr(C(t) ρ̂) dt` evaluated directly on matrices.
pub fn apply_gramian(schedule: &ControlSchedule, s: &Hermitian, horizon: f64, nodes: usize, rho_hat: &CMatrix) -> Result<CMatrix> {
    let n = schedule.dim();
    let quad = quadrature_for(schedule, horizon, nodes)?;
    let mut out = CMatrix::zeros(n, n);
    for (&t, &w) in quad.nodes.iter().zip(&quad.weights) {
        let c = conjugated_observable(schedule, s, t)?;
        let y = trace_product(c.matrix(), rho_hat).re;
        out += c.matrix() * C64::new(w * y, 0.0);
    }
    Ok(out)
}

/// True when the smallest eigenvalue exceeds `1e-9` times the largest.
pub fn check_rank(w: &GramianOperator) -> bool {
    w.max_eigenvalue > 0.0 && w.min_eigenvalue > RANK_THRESHOLD * w.max_eigenvalue
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub state: DensityMatrix,
    pub gramian: GramianOperator,
    /// `‖y − ŷ‖₂` over the sample grid.
    pub residual: f64,
    /// The raw inverse had eigenvalues below [`PSD_CLIP`] and was clipped.
    pub projected: bool,
    /// Smallest eigenvalue before any projection.
    pub raw_min_eigenvalue: f64,
}

/// Piecewise-linear interpolation on sorted samples.
fn interpolate(samples: &[(f64, f64)], t: f64) -> f64 {
    let idx = samples.partition_point(|&(ts, _)| ts <= t);
    if idx == 0 {
        return samples[0].1;
    }
    if idx == samples.len() {
        return samples[samples.len() - 1].1;
    }
    let (t0, y0) = samples[idx - 1];
    let (t1, y1) = samples[idx];
    if t1 == t0 {
        return y1;
    }
    y0 + (y1 - y0) * (t - t0) / (t1 - t0)
}

/// Clips negative eigenvalues and renormalizes the trace.
pub fn project_to_density(m: &CMatrix) -> Result<DensityMatrix> {
    let n = m.nrows();
    let (vals, vecs) = eigh(m);
    let clipped: Vec<f64> = vals.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if total <= 0.0 {
        return Ok(DensityMatrix::maximally_mixed(n));
    }
    let d = CMatrix::from_diagonal(&DVector::from_iterator(n, clipped.iter().map(|v| C64::new(v / total, 0.0))));
    DensityMatrix::new(crate::matrix::hermitian_part(&(&vecs * d * vecs.adjoint())))
}

/// `ρ₀ = 1/n + W⁻¹(∫ C(t) y(t) dt)` from `(time, y)` samples covering
/// `[0, horizon]`.
pub fn reconstruct(
    samples: &[(f64, f64)],
    schedule: &ControlSchedule,
    s: &Hermitian,
    horizon: f64,
    nodes: usize,
) -> Result<Reconstruction> {
    let n = schedule.dim();
    if s.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, found: s.dim() });
    }
    let basis = HermitianBasis::new(n)?;
    let quad = quadrature_for(schedule, horizon, nodes)?;
    if samples.len() < quad.len() {
        return Err(Error::TooFewSamples { samples: samples.len(), nodes: quad.len() });
    }
    if samples.iter().any(|(t, y)| !t.is_finite() || !y.is_finite()) {
        return Err(Error::InvalidArgument("samples must be finite".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let span_tol = 1e-9 * horizon;
    if sorted[0].0 > span_tol || sorted[sorted.len() - 1].0 < horizon - span_tol {
        return Err(Error::InvalidArgument(format!(
            "samples span [{}, {}] but must cover [0, {horizon}]",
            sorted[0].0,
            sorted[sorted.len() - 1].0
        )));
    }

    let coords = coordinate_samples(schedule, s, &basis, &quad)?;
    let w = gramian_from_samples(n, horizon, &quad.weights, &coords);
    if !check_rank(&w) {
        return Err(Error::RankDeficient { min_eig: w.min_eigenvalue, max_eig: w.max_eigenvalue });
    }
    // a trace in S only adds the constant Tr(S)/n to y
    let offset = s.trace() / n as f64;
    let mut b = DVector::<f64>::zeros(n * n - 1);
    for ((&t, &wt), f) in quad.nodes.iter().zip(&quad.weights).zip(&coords) {
        b.axpy(wt * (interpolate(&sorted, t) - offset), f, 1.0);
    }
    let chol = w
        .matrix
        .clone()
        .cholesky()
        .ok_or(Error::RankDeficient { min_eig: w.min_eigenvalue, max_eig: w.max_eigenvalue })?;
    let c = chol.solve(&b);
    let raw = identity(n) * C64::new(1.0 / n as f64, 0.0) + basis.from_coords(&c);
    let raw = crate::matrix::hermitian_part(&raw);
    let raw_min = eigh(&raw).0[0];
    let (state, projected) = if raw_min < PSD_CLIP {
        if raw_min < PSD_WARN {
            log::warn!("reconstructed state has eigenvalue {raw_min:e}; projecting onto density matrices");
        }
        (project_to_density(&raw)?, true)
    } else {
        (DensityMatrix::new(raw.clone()).or_else(|_| project_to_density(&raw))?, false)
    };

    let mut sq = 0.0;
    for &(t, y) in &sorted {
        let t = t.min(schedule.total_duration());
        let yhat = conjugated_observable(schedule, s, t)?.expectation(state.matrix());
        sq += (y - yhat).powi(2);
    }
    Ok(Reconstruction { state, gramian: w, residual: sq.sqrt(), projected, raw_min_eigenvalue: raw_min })
}

/// `(t, Tr(S X(t) ρ₀ X(t)†))` at the given times.
pub fn synthetic_record(schedule: &ControlSchedule, s: &Hermitian, rho0: &DensityMatrix, times: &[f64]) -> Result<Vec<(f64, f64)>> {
    times
        .iter()
        .map(|&t| Ok((t, s.expectation(schedule.evolve(rho0, t)?.matrix()))))
        .collect()
}

#[derive(Debug, Clone)]
pub struct SearchOptions {
    pub segments: usize,
    pub seed: u64,
    /// Horizon of the first attempt.
    pub horizon: f64,
    pub nodes: usize,
    pub max_attempts: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions { segments: 4, seed: 0, horizon: std::f64::consts::TAU, nodes: DEFAULT_NODES, max_attempts: 32 }
    }
}

/// Random piecewise-constant schedule whose Gramian for `s` is invertible.
///
/// Fails early with [`Error::NotObservable`] when the one-step observability
/// space of the controls is too small. The horizon doubles every eight
/// rejected attempts.
pub fn candidate_control_search(
    hamiltonians: &BTreeMap<String, Hermitian>,
    s: &Hermitian,
    opts: &SearchOptions,
) -> Result<ControlSchedule> {
    if opts.segments == 0 {
        return Err(Error::InvalidArgument("at least one segment is required".into()));
    }
    let hams: Vec<Hermitian> = hamiltonians.values().cloned().collect();
    let l = dynamical_lie_algebra(&hams)?;
    let n = l.dim_hilbert();
    let v0 = OperatorSubspace::span(n, &[s.traceless().matrix() * I])?;
    let v1 = ad_orbit(&l, &v0)?;
    if !is_observable(&v1) {
        return Err(Error::NotObservable { rank: v1.traceless_rank(), needed: n * n - 1 });
    }

    let symbols: Vec<String> = hamiltonians.keys().cloned().collect();
    let base = ControlSchedule::new(hamiltonians.clone(), Vec::new())?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best = f64::INFINITY;
    for attempt in 0..opts.max_attempts {
        let horizon = opts.horizon * 2f64.powi((attempt / 8) as i32);
        let raw: Vec<f64> = (0..opts.segments).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let timeline = raw
            .iter()
            .map(|w| Segment::new(symbols[rng.random_range(0..symbols.len())].clone(), horizon * w / total))
            .collect();
        let schedule = base.with_timeline(timeline)?;
        let g = gramian(&schedule, s, schedule.total_duration(), opts.nodes)?;
        if check_rank(&g) {
            log::debug!("control search accepted attempt {attempt} (condition {:e})", g.condition_number());
            return Ok(schedule);
        }
        best = best.min(g.condition_number());
    }
    Err(Error::SearchExhausted { attempts: opts.max_attempts, best_condition: best })
}
