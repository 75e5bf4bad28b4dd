//! Asymptotic state observer driven by the output record.
//!
//! The sliding Gramian `𝒫_t(Δ) = ∫_{t−σ}^t e^{−M(t−τ)} K Tr(KΔ) dτ` uses
//! the kernel `K(t, τ) = X(t)X(τ)† S X(τ)X(t)†`, which expresses the past
//! output `y(τ)` as a linear function of the current state. The estimate
//! follows `ρ̂' = −i[H, ρ̂] + ½ 𝒫_t⁻¹(S)(y − Tr(Sρ̂))`, whose error obeys
//! `Δ' = −i[H, Δ] − ½ 𝒫_t⁻¹(S) Tr(SΔ)` and makes `V = Tr(Δ𝒫_t(Δ))` decay
//! at least like `e^{−Mt}`.
//!
//! Runs integrate in the initial-time frame `X(t)† · X(t)`, where the true
//! state is constant and the kernel becomes `X(τ)† S X(τ)`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::ControlSchedule;
use crate::error::{Error, Result};
use crate::matrix::{
    identity, same_dim, spectral_norm_hermitian, trace_product, CMatrix, DensityMatrix, Hermitian, HermitianBasis, C64,
};
use crate::reconstruction::{conjugated_observable, Quadrature};

/// Largest `‖H‖·step` accepted by [`run_observer`].
pub const MAX_PHASE_STEP: f64 = 0.1;
/// Relative eigenvalue floor below which `𝒫_t` counts as singular.
pub const SINGULAR_TOL: f64 = 1e-12;
/// Output-noise floor below which `‖Δ‖` is left out of the decay fit.
const FIT_FLOOR: f64 = 1e-12;

/// `X(t)X(τ)† S X(τ)X(t)†`.
pub fn kernel_observable(schedule: &ControlSchedule, s: &Hermitian, t: f64, tau: f64) -> Result<Hermitian> {
    if !(0.0..=t).contains(&tau) {
        return Err(Error::InvalidArgument(format!("kernel needs 0 <= tau <= t, got tau = {tau}, t = {t}")));
    }
    same_dim(s.matrix(), &identity(schedule.dim()))?;
    let xt = schedule.forward(t)?;
    let xtau = schedule.forward(tau)?;
    let w = &xt * xtau.adjoint();
    Ok(Hermitian::from_hermitian_part(&(&w * s.matrix() * w.adjoint())))
}

#[derive(Debug, Clone)]
pub struct SlidingGramian {
    pub dim_hilbert: usize,
    pub window: f64,
    pub forgetting: f64,
    /// `n²×n²` in the full Hermitian basis.
    pub matrix: DMatrix<f64>,
    pub time: f64,
    basis: HermitianBasis,
}

impl SlidingGramian {
    /// `𝒫_t(Δ)`.
    pub fn apply(&self, delta: &CMatrix) -> CMatrix {
        self.basis.from_coords(&(&self.matrix * self.basis.coords(delta)))
    }

    /// `𝒫_t⁻¹(h)` on the range of `𝒫_t`; components along the null space
    /// are dropped.
    pub fn pseudo_inverse_apply(&self, h: &CMatrix) -> CMatrix {
        let eig = self.matrix.clone().symmetric_eigen();
        let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let c = self.basis.coords(h);
        let mut out = DVector::zeros(c.len());
        for (i, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam > SINGULAR_TOL * max && lam > 0.0 {
                let v = eig.eigenvectors.column(i);
                out.axpy(v.dot(&c) / lam, &v, 1.0);
            }
        }
        self.basis.from_coords(&out)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.matrix.clone().symmetric_eigen().eigenvalues.iter().cloned().collect();
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn rank(&self) -> usize {
        let v = self.eigenvalues();
        let max = v.last().copied().unwrap_or(0.0);
        v.iter().filter(|&&l| l > SINGULAR_TOL * max && l > 0.0).count()
    }
}

fn check_window(sigma: f64, m: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("window must be positive, got {sigma}")));
    }
    if !(m.is_finite() && m > 0.0) {
        return Err(Error::InvalidArgument(format!("forgetting rate must be positive, got {m}")));
    }
    Ok(())
}

/// `𝒫_t` assembled by Simpson quadrature over `[t − σ, t]`.
pub fn sliding_gramian(
    schedule: &ControlSchedule,
    s: &Hermitian,
    t: f64,
    sigma: f64,
    m: f64,
    nodes: usize,
) -> Result<SlidingGramian> {
    check_window(sigma, m)?;
    if t < sigma {
        return Err(Error::InvalidArgument(format!("sliding Gramian needs t >= sigma ({t} < {sigma})")));
    }
    let n = schedule.dim();
    let basis = HermitianBasis::new(n)?;
    let lo = t - sigma;
    let breaks: Vec<f64> = schedule.breakpoints().iter().map(|b| b - lo).collect();
    let quad = Quadrature::simpson(sigma, &breaks, nodes)?;
    let mut g = DMatrix::<f64>::zeros(n * n, n * n);
    for (&r, &w) in quad.nodes.iter().zip(&quad.weights) {
        let tau = (lo + r).min(t);
        let k = kernel_observable(schedule, s, t, tau)?;
        let c = basis.coords(k.matrix());
        g.ger(w * (-m * (t - tau)).exp(), &c, &c, 1.0);
    }
    let matrix = (&g + g.transpose()) * 0.5;
    Ok(SlidingGramian { dim_hilbert: n, window: sigma, forgetting: m, matrix, time: t, basis })
}

/// Empirical constants of the uniform observability condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservabilityBounds {
    pub alpha1: f64,
    pub alpha2: f64,
}

impl ObservabilityBounds {
    pub fn certified(&self) -> bool {
        self.alpha1 > 0.0
    }
}

/// Smallest and largest eigenvalue of `∫_{t−σ}^t c(τ)c(τ)ᵀ dτ` on the
/// traceless block, over `t` from `σ` to `horizon` in steps of `σ/8` (plus
/// `horizon` itself). Values of `α₁` below `1e-12·α₂` are reported as 0.
pub fn uniform_observability_check(
    schedule: &ControlSchedule,
    s: &Hermitian,
    sigma: f64,
    horizon: f64,
    nodes: usize,
) -> Result<ObservabilityBounds> {
    check_window(sigma, 1.0)?;
    if horizon < sigma {
        return Err(Error::InvalidArgument(format!("horizon {horizon} shorter than window {sigma}")));
    }
    let n = schedule.dim();
    let basis = HermitianBasis::new(n)?;
    let mut ts = Vec::new();
    let count = ((horizon - sigma) / (sigma / 8.0)).floor() as usize;
    ts.extend((0..=count).map(|i| sigma + i as f64 * sigma / 8.0));
    if ts.last().is_none_or(|&t| horizon - t > 1e-12) {
        ts.push(horizon);
    }
    let (mut a1, mut a2) = (f64::INFINITY, 0.0_f64);
    for t in ts {
        let lo = t - sigma;
        let breaks: Vec<f64> = schedule.breakpoints().iter().map(|b| b - lo).collect();
        let quad = Quadrature::simpson(sigma, &breaks, nodes)?;
        let d = n * n - 1;
        let mut g = DMatrix::<f64>::zeros(d, d);
        for (&r, &w) in quad.nodes.iter().zip(&quad.weights) {
            let c = basis.traceless_coords(conjugated_observable(schedule, s, (lo + r).min(t))?.matrix());
            g.ger(w, &c, &c, 1.0);
        }
        let eig = ((&g + g.transpose()) * 0.5).symmetric_eigen();
        a1 = a1.min(eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min));
        a2 = a2.max(eig.eigenvalues.iter().cloned().fold(0.0, f64::max));
    }
    if a1 <= SINGULAR_TOL * a2 {
        a1 = 0.0;
    }
    Ok(ObservabilityBounds { alpha1: a1, alpha2: a2 })
}

#[derive(Debug, Clone, Copy)]
pub struct ObserverParams {
    pub forgetting: f64,
    pub window: f64,
    pub horizon: f64,
    pub step: f64,
    /// Quadrature nodes for the uniform observability certificate.
    pub check_nodes: usize,
}

/// Least-squares fit of `ln ‖Δ(t)‖ = intercept + slope·t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

#[derive(Debug, Clone)]
pub struct ObserverRun {
    pub times: Vec<f64>,
    pub true_states: Vec<DensityMatrix>,
    pub estimates: Vec<CMatrix>,
    pub delta_norms: Vec<f64>,
    /// `Tr(Δ𝒫_t(Δ))`; before the warm-up ends the window is `[0, t]`.
    pub lyapunov: Vec<f64>,
    pub bounds: ObservabilityBounds,
    pub decay: Option<DecayFit>,
    pub warmup: f64,
}

impl ObserverRun {
    /// CSV with columns `time,delta_norm,lyapunov`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "delta_norm", "lyapunov"])?;
        for i in 0..self.times.len() {
            w.write_record([
                format!("{:.16e}", self.times[i]),
                format!("{:.16e}", self.delta_norms[i]),
                format!("{:.16e}", self.lyapunov[i]),
            ])?;
        }
        w.flush()
    }
}

pub fn fit_decay(times: &[f64], norms: &[f64], from: f64) -> Option<DecayFit> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(norms)
        .filter(|(t, d)| **t >= from && **d > FIT_FLOOR)
        .map(|(t, d)| (*t, d.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let k = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(DecayFit { slope, intercept: my - slope * mt, r_squared, points: pts.len() })
}

/// Samples `c(τ)` on a half-step grid and keeps those within the window.
struct WindowBuffer {
    half: f64,
    samples: VecDeque<(usize, DVector<f64>)>,
}

impl WindowBuffer {
    fn time(&self, j: usize) -> f64 {
        j as f64 * self.half
    }

    fn push(&mut self, j: usize, c: DVector<f64>) {
        self.samples.push_back((j, c));
    }

    fn prune(&mut self, lo: f64) {
        while self.samples.len() > 1 && self.time(self.samples[1].0) <= lo {
            self.samples.pop_front();
        }
    }

    /// Trapezoid rule for `∫_{lo}^{t_j} e^{−M(t−τ)} c cᵀ dτ`, with the exact
    /// `c(lo)` supplied when `lo` falls between grid points.
    fn gram(&self, j: usize, lo: f64, c_lo: &DVector<f64>, m: f64) -> DMatrix<f64> {
        let t = self.time(j);
        let d = c_lo.len();
        let mut nodes: Vec<(f64, &DVector<f64>)> = vec![(lo, c_lo)];
        for (k, c) in &self.samples {
            let tk = self.time(*k);
            if tk > lo + 1e-12 * self.half && *k <= j {
                nodes.push((tk, c));
            }
        }
        let mut g = DMatrix::<f64>::zeros(d, d);
        for w in nodes.windows(2) {
            let (t0, c0) = w[0];
            let (t1, c1) = w[1];
            let h = 0.5 * (t1 - t0);
            g.ger(h * (-m * (t - t0)).exp(), c0, c0, 1.0);
            g.ger(h * (-m * (t - t1)).exp(), c1, c1, 1.0);
        }
        g
    }
}

/// Simulates the true state and the observer estimate on `[0, horizon]`.
///
/// The gain is zero until the window is full (`t < σ`). Fails with
/// [`Error::Singular`] when `𝒫_t` loses rank on the traceless block after
/// the warm-up.
pub fn run_observer(
    rho0: &DensityMatrix,
    rho_hat0: &DensityMatrix,
    schedule: &ControlSchedule,
    s: &Hermitian,
    params: &ObserverParams,
) -> Result<ObserverRun> {
    let n = schedule.dim();
    for d in [rho0.dim(), rho_hat0.dim(), s.dim()] {
        if d != n {
            return Err(Error::DimensionMismatch { expected: n, found: d });
        }
    }
    let ObserverParams { forgetting: m, window: sigma, horizon, step, check_nodes } = *params;
    check_window(sigma, m)?;
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    if horizon < sigma || horizon > schedule.total_duration() + 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} must lie in [window, schedule length] = [{sigma}, {}]",
            schedule.total_duration()
        )));
    }
    let h_norm = schedule
        .hamiltonians()
        .values()
        .map(|h| spectral_norm_hermitian(h.matrix()))
        .fold(0.0, f64::max);
    if h_norm * step > MAX_PHASE_STEP {
        return Err(Error::InvalidArgument(format!(
            "step {step} too large: ‖H‖·step = {:.3} exceeds {MAX_PHASE_STEP}",
            h_norm * step
        )));
    }
    let bounds = uniform_observability_check(schedule, s, sigma, horizon, check_nodes)?;

    let basis = HermitianBasis::new(n)?;
    let tr_s = s.trace() / n as f64;
    let coords = |t: f64| -> Result<DVector<f64>> {
        Ok(basis.traceless_coords(conjugated_observable(schedule, s, t)?.matrix()))
    };
    let xi_true = basis.traceless_coords(rho0.matrix());
    let mut xi = basis.traceless_coords(rho_hat0.matrix());
    let steps = (horizon / step).round() as usize;
    let step = horizon / steps as f64;
    let half = step / 2.0;

    let mut buf = WindowBuffer { half, samples: VecDeque::new() };
    buf.push(0, coords(0.0)?);

    // gain ½ Q̃⁻¹ c at half-step index j, or None during warm-up
    let gain_at = |buf: &WindowBuffer, j: usize| -> Result<(DMatrix<f64>, Option<DVector<f64>>, DVector<f64>)> {
        let t = buf.time(j);
        let lo = (t - sigma).max(0.0);
        let c_lo = coords(lo)?;
        let q = buf.gram(j, lo, &c_lo, m);
        let c = buf.samples.iter().find(|(k, _)| *k == j).map(|(_, c)| c.clone()).expect("sample pushed");
        if t < sigma - 1e-12 * sigma {
            return Ok((q, None, c));
        }
        let eig = q.clone().symmetric_eigen();
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        if !(min > SINGULAR_TOL * max && min > 0.0) {
            return Err(Error::Singular { time: t, min_eig: min });
        }
        let chol = q.clone().cholesky().ok_or(Error::Singular { time: t, min_eig: min })?;
        let g = chol.solve(&c) * 0.5;
        Ok((q, Some(g), c))
    };
    let output = |t: f64| -> Result<f64> { Ok(s.expectation(schedule.evolve(rho0, t)?.matrix())) };
    let rhs = |gain: &Option<DVector<f64>>, c: &DVector<f64>, y: f64, xi: &DVector<f64>| -> DVector<f64> {
        match gain {
            None => DVector::zeros(xi.len()),
            Some(g) => g * (y - c.dot(xi) - tr_s),
        }
    };

    let mut run = ObserverRun {
        times: Vec::with_capacity(steps + 1),
        true_states: Vec::with_capacity(steps + 1),
        estimates: Vec::with_capacity(steps + 1),
        delta_norms: Vec::with_capacity(steps + 1),
        lyapunov: Vec::with_capacity(steps + 1),
        bounds,
        decay: None,
        warmup: sigma,
    };
    let record = |run: &mut ObserverRun, t: f64, q: &DMatrix<f64>, xi: &DVector<f64>| -> Result<()> {
        let x = schedule.forward(t)?;
        let delta = &xi_true - xi;
        let frame = identity(n) * C64::new(1.0 / n as f64, 0.0) + basis.from_coords(xi);
        run.times.push(t);
        run.true_states.push(rho0.conjugate_by(&x));
        run.estimates.push(&x * frame * x.adjoint());
        run.delta_norms.push(delta.norm());
        run.lyapunov.push(delta.dot(&(q * &delta)));
        Ok(())
    };

    let (q0, mut g0, mut c0) = gain_at(&buf, 0)?;
    record(&mut run, 0.0, &q0, &xi)?;
    for i in 0..steps {
        let j = 2 * i;
        let t = buf.time(j);
        buf.push(j + 1, coords(buf.time(j + 1))?);
        buf.push(j + 2, coords(buf.time(j + 2))?);
        let (_, g_mid, c_mid) = gain_at(&buf, j + 1)?;
        let (q_end, g_end, c_end) = gain_at(&buf, j + 2)?;
        let y0 = output(t)?;
        let y_mid = output(t + half)?;
        let y_end = output(t + step)?;
        let k1 = rhs(&g0, &c0, y0, &xi);
        let k2 = rhs(&g_mid, &c_mid, y_mid, &(&xi + &k1 * half));
        let k3 = rhs(&g_mid, &c_mid, y_mid, &(&xi + &k2 * half));
        let k4 = rhs(&g_end, &c_end, y_end, &(&xi + &k3 * step));
        xi += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (step / 6.0);
        record(&mut run, buf.time(j + 2), &q_end, &xi)?;
        g0 = g_end;
        c0 = c_end;
        buf.prune(buf.time(j + 2) - sigma);
    }
    run.decay = fit_decay(&run.times, &run.delta_norms, sigma);
    Ok(run)
}

/// `Tr(A B)` for Hermitian arguments.
pub fn hs(a: &CMatrix, b: &CMatrix) -> f64 {
    trace_product(a, b).re
}
