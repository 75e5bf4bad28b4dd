//! Piecewise-constant controlled evolution.
//!
//! A [`ControlSchedule`] maps control symbols to Hamiltonians and lays out a
//! timeline of `(symbol, duration)` segments. Segment propagators are exact
//! exponentials, so sampling at any `t` only splits the active segment.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::channels::KrausChannel;
use crate::error::{Error, Result};
use crate::matrix::{identity, trace_product, CMatrix, DensityMatrix, Hermitian, Spectral};

/// Slack allowed when a requested time overshoots the end of a schedule.
const TIME_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub symbol: String,
    pub duration: f64,
}

impl Segment {
    pub fn new(symbol: impl Into<String>, duration: f64) -> Self {
        Segment { symbol: symbol.into(), duration }
    }
}

#[derive(Debug, Clone)]
pub struct ControlSchedule {
    dim: usize,
    hamiltonians: BTreeMap<String, Hermitian>,
    spectra: BTreeMap<String, Spectral>,
    timeline: Vec<Segment>,
    /// Start time of each segment, plus the total duration at the end.
    starts: Vec<f64>,
    /// `X` at the start of each segment.
    start_props: Vec<CMatrix>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `X(t)` with `Ẋ = −iH(u)X`, `X(0) = 1`.
    Forward,
    /// `X(t)†`.
    Adjoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Propagator {
    pub matrix: CMatrix,
    pub time: f64,
}

impl ControlSchedule {
    pub fn new(hamiltonians: BTreeMap<String, Hermitian>, timeline: Vec<Segment>) -> Result<Self> {
        let dim = hamiltonians
            .values()
            .next()
            .map(Hermitian::dim)
            .ok_or_else(|| Error::InvalidArgument("a schedule needs at least one Hamiltonian".into()))?;
        for h in hamiltonians.values() {
            if h.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: h.dim() });
            }
        }
        let spectra = hamiltonians.iter().map(|(k, h)| (k.clone(), Spectral::new(h.matrix()))).collect();
        let mut sched = ControlSchedule {
            dim,
            hamiltonians,
            spectra,
            timeline: Vec::new(),
            starts: vec![0.0],
            start_props: Vec::new(),
        };
        sched.set_timeline(timeline)?;
        Ok(sched)
    }

    /// Same control set, new timeline.
    pub fn with_timeline(&self, timeline: Vec<Segment>) -> Result<Self> {
        let mut sched = self.clone();
        sched.set_timeline(timeline)?;
        Ok(sched)
    }

    fn set_timeline(&mut self, timeline: Vec<Segment>) -> Result<()> {
        let mut starts = Vec::with_capacity(timeline.len() + 1);
        let mut props = Vec::with_capacity(timeline.len());
        let mut t = 0.0;
        let mut x = identity(self.dim);
        for seg in &timeline {
            if !(seg.duration.is_finite() && seg.duration >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "segment `{}` has invalid duration {}",
                    seg.symbol, seg.duration
                )));
            }
            let spec = self.spectra.get(&seg.symbol).ok_or_else(|| Error::UnknownSymbol(seg.symbol.clone()))?;
            starts.push(t);
            props.push(x.clone());
            x = spec.evolution(seg.duration) * x;
            t += seg.duration;
        }
        if !t.is_finite() {
            return Err(Error::InvalidArgument("total duration is not finite".into()));
        }
        starts.push(t);
        self.timeline = timeline;
        self.starts = starts;
        self.start_props = props;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn timeline(&self) -> &[Segment] {
        &self.timeline
    }

    pub fn hamiltonians(&self) -> &BTreeMap<String, Hermitian> {
        &self.hamiltonians
    }

    pub fn hamiltonian(&self, symbol: &str) -> Result<&Hermitian> {
        self.hamiltonians.get(symbol).ok_or_else(|| Error::UnknownSymbol(symbol.to_string()))
    }

    pub fn total_duration(&self) -> f64 {
        *self.starts.last().expect("starts is never empty")
    }

    /// Segment boundary times, `0` and the total duration included.
    pub fn breakpoints(&self) -> &[f64] {
        &self.starts
    }

    /// Index of the segment active at `t` (the last one that starts at or
    /// before `t` and has positive length), or `None` before any segment.
    pub fn segment_at(&self, t: f64) -> Option<usize> {
        let count = self.starts[..self.timeline.len()].partition_point(|&s| s <= t);
        (0..count).rev().find(|&i| self.timeline[i].duration > 0.0)
    }

    /// Hamiltonian driving the evolution at `t` (right-continuous).
    pub fn hamiltonian_at(&self, t: f64) -> Option<&Hermitian> {
        self.segment_at(t).map(|i| &self.hamiltonians[&self.timeline[i].symbol])
    }

    fn check_time(&self, t: f64) -> Result<f64> {
        let total = self.total_duration();
        if !t.is_finite() || t < 0.0 || t > total + TIME_SLACK {
            return Err(Error::TimeOutOfRange { t, total });
        }
        Ok(t.min(total))
    }

    /// `X(t)`.
    pub fn forward(&self, t: f64) -> Result<CMatrix> {
        let t = self.check_time(t)?;
        match self.segment_at(t) {
            None => Ok(identity(self.dim)),
            Some(i) => {
                let spec = &self.spectra[&self.timeline[i].symbol];
                let dt = (t - self.starts[i]).min(self.timeline[i].duration);
                if dt == 0.0 {
                    return Ok(self.start_props[i].clone());
                }
                Ok(spec.evolution(dt) * &self.start_props[i])
            }
        }
    }

    pub fn propagator(&self, t: f64, direction: Direction) -> Result<Propagator> {
        let x = self.forward(t)?;
        let matrix = match direction {
            Direction::Forward => x,
            Direction::Adjoint => x.adjoint(),
        };
        Ok(Propagator { matrix, time: t })
    }

    /// `X(t) ρ₀ X(t)†`.
    pub fn evolve(&self, rho0: &DensityMatrix, t: f64) -> Result<DensityMatrix> {
        if rho0.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: rho0.dim() });
        }
        Ok(rho0.conjugate_by(&self.forward(t)?))
    }
}

/// Builds a timeline that cycles through `symbols`, each held for `dwell`,
/// until `total` is covered (the last segment is shortened to fit).
pub fn periodic_timeline(symbols: &[&str], dwell: f64, total: f64) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut t = 0.0;
    let mut i = 0;
    while t < total - 1e-12 && !symbols.is_empty() {
        let d = dwell.min(total - t);
        out.push(Segment::new(symbols[i % symbols.len()], d));
        t += d;
        i += 1;
    }
    out
}

pub fn evolve_density(rho0: &DensityMatrix, schedule: &ControlSchedule, t: f64) -> Result<DensityMatrix> {
    schedule.evolve(rho0, t)
}

/// `y = Tr(S_eff ρ)`.
pub fn output_value(rho: &DensityMatrix, s_eff: &Hermitian) -> Result<f64> {
    if rho.dim() != s_eff.dim() {
        return Err(Error::DimensionMismatch { expected: s_eff.dim(), found: rho.dim() });
    }
    Ok(trace_product(s_eff.matrix(), rho.matrix()).re)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub time: f64,
    /// 1-based index of the evolution stage this state belongs to.
    pub stage: usize,
    /// True for the state right after a measurement was applied.
    pub after_measurement: bool,
    pub state: DensityMatrix,
}

/// Alternating unitary evolution and nonselective measurement.
///
/// Stage `j` evolves along schedule `j` and ends with one application of the
/// channel, so the states of stage `k` are `ρ_k(t, u, ρ̄)` (evolved after
/// `k − 1` measurements). Times are global and non-decreasing; a measurement
/// contributes a pre- and a post-measurement point at the same time.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasuredTrajectory {
    pub points: Vec<TrajectoryPoint>,
    pub measurement_times: Vec<f64>,
}

impl MeasuredTrajectory {
    pub fn final_state(&self) -> &DensityMatrix {
        &self.points.last().expect("trajectory has at least one point").state
    }

    /// `(time, Tr(S ρ))` for every point of `stage` that precedes its
    /// measurement.
    pub fn stage_outputs(&self, stage: usize, s: &Hermitian) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .filter(|p| p.stage == stage && !p.after_measurement)
            .map(|p| (p.time, trace_product(s.matrix(), p.state.matrix()).re))
            .collect()
    }

    /// CSV with header `time,re_i_j,im_i_j,…` (row-major entries).
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let n = self.points.first().map(|p| p.state.dim()).unwrap_or(0);
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["time".to_string()];
        for i in 0..n {
            for j in 0..n {
                header.push(format!("re_{i}_{j}"));
                header.push(format!("im_{i}_{j}"));
            }
        }
        w.write_record(&header)?;
        for p in &self.points {
            let mut row = vec![format!("{:.16e}", p.time)];
            let m = p.state.matrix();
            for i in 0..n {
                for j in 0..n {
                    row.push(format!("{:.16e}", m[(i, j)].re));
                    row.push(format!("{:.16e}", m[(i, j)].im));
                }
            }
            w.write_record(&row)?;
        }
        w.flush()
    }
}

/// Runs `k` stages of evolution + measurement. Within each stage the state
/// is recorded at every segment boundary and, when `sample_step` is given,
/// on a uniform grid of that spacing.
pub fn measured_trajectory(
    rho0: &DensityMatrix,
    schedules: &[ControlSchedule],
    channel: &KrausChannel,
    k: usize,
    sample_step: Option<f64>,
) -> Result<MeasuredTrajectory> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if schedules.len() < k {
        return Err(Error::InsufficientSchedules { needed: k, given: schedules.len() });
    }
    if let Some(h) = sample_step {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidArgument(format!("sample step must be positive, got {h}")));
        }
    }
    for s in &schedules[..k] {
        if s.dim() != rho0.dim() {
            return Err(Error::DimensionMismatch { expected: rho0.dim(), found: s.dim() });
        }
    }
    if channel.dim() != rho0.dim() {
        return Err(Error::DimensionMismatch { expected: rho0.dim(), found: channel.dim() });
    }

    let mut points = Vec::new();
    let mut measurement_times = Vec::with_capacity(k);
    let mut offset = 0.0;
    let mut current = rho0.clone();
    points.push(TrajectoryPoint { time: 0.0, stage: 1, after_measurement: false, state: current.clone() });
    for (j, sched) in schedules[..k].iter().enumerate() {
        let stage = j + 1;
        for t in sample_times(sched, sample_step) {
            if t == 0.0 {
                continue;
            }
            points.push(TrajectoryPoint {
                time: offset + t,
                stage,
                after_measurement: false,
                state: sched.evolve(&current, t)?,
            });
        }
        let before = sched.evolve(&current, sched.total_duration())?;
        offset += sched.total_duration();
        if stage > 1 && sched.total_duration() == 0.0 {
            // zero-length stage: its only state is the previous post-measurement one
            points.push(TrajectoryPoint { time: offset, stage, after_measurement: false, state: before.clone() });
        }
        current = channel.apply(&before)?;
        measurement_times.push(offset);
        points.push(TrajectoryPoint { time: offset, stage, after_measurement: true, state: current.clone() });
    }
    Ok(MeasuredTrajectory { points, measurement_times })
}

/// Sorted sample times in `[0, T]` of one schedule.
fn sample_times(sched: &ControlSchedule, step: Option<f64>) -> Vec<f64> {
    let total = sched.total_duration();
    let mut ts: Vec<f64> = sched.breakpoints().to_vec();
    if let Some(h) = step {
        let n = (total / h).floor() as usize;
        ts.extend((1..=n).map(|i| i as f64 * h).filter(|&t| t < total));
    }
    ts.sort_by(f64::total_cmp);
    ts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * total.max(1.0));
    ts
}

/// Marginal probability of outcome `m` at the `k`-th measurement:
/// `Tr(F_m X_k F(X_{k−1} ⋯ F(X_1 ρ₀ X_1†) ⋯ X_{k−1}†) X_k†)`.
pub fn selective_probability(
    rho0: &DensityMatrix,
    schedules: &[ControlSchedule],
    channel: &KrausChannel,
    outcome: &str,
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if schedules.len() < k {
        return Err(Error::InsufficientSchedules { needed: k, given: schedules.len() });
    }
    let m = channel.outcome_index(outcome)?;
    let mut rho = rho0.clone();
    for sched in &schedules[..k - 1] {
        rho = channel.apply(&sched.evolve(&rho, sched.total_duration())?)?;
    }
    let last = &schedules[k - 1];
    let rho = last.evolve(&rho, last.total_duration())?;
    Ok(channel.probability(rho.matrix(), m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{expm, frobenius, pauli, C64};
    use crate::random::{random_channel, random_density, random_hermitian};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn qubit_controls(e: f64) -> BTreeMap<String, Hermitian> {
        let mut map = BTreeMap::new();
        map.insert("u1".to_string(), Hermitian::new(pauli::x() * C64::new(e, 0.0)).unwrap());
        map.insert("u2".to_string(), Hermitian::new(pauli::y() * C64::new(e, 0.0)).unwrap());
        map
    }

    fn random_schedule(rng: &mut ChaCha8Rng, hams: &BTreeMap<String, Hermitian>, segments: usize) -> ControlSchedule {
        let keys: Vec<String> = hams.keys().cloned().collect();
        let timeline = (0..segments)
            .map(|_| Segment::new(keys[rng.random_range(0..keys.len())].clone(), rng.random_range(0.0..1.5)))
            .collect();
        ControlSchedule::new(hams.clone(), timeline).unwrap()
    }

    #[test]
    fn propagator_basics() {
        let e = 0.8;
        let tau = 1.3;
        let s = ControlSchedule::new(qubit_controls(e), vec![Segment::new("u1", tau)]).unwrap();
        assert_eq!(s.forward(0.0).unwrap(), identity(2));
        // closed form: cos(Eτ)·1 − i sin(Eτ)·σx
        let want = identity(2) * C64::new((e * tau).cos(), 0.0) - pauli::x() * C64::new(0.0, (e * tau).sin());
        assert!(frobenius(&(s.forward(tau).unwrap() - &want)) < 1e-14);
        assert!(frobenius(&(s.forward(tau).unwrap() - expm(&(pauli::x() * C64::new(0.0, -e * tau))))) < 1e-14);
        assert!(matches!(s.forward(tau + 0.1), Err(Error::TimeOutOfRange { .. })));
        assert!(matches!(s.forward(-0.1), Err(Error::TimeOutOfRange { .. })));
    }

    #[test]
    fn unknown_symbol_rejected() {
        let err = ControlSchedule::new(qubit_controls(1.0), vec![Segment::new("u3", 1.0)]).unwrap_err();
        assert_eq!(err, Error::UnknownSymbol("u3".into()));
    }

    #[test]
    fn propagators_unitary_and_adjoint_relation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut hams = BTreeMap::new();
        for name in ["a", "b", "c"] {
            hams.insert(name.to_string(), random_hermitian(&mut rng, 3));
        }
        for _ in 0..20 {
            let s = random_schedule(&mut rng, &hams, 5);
            let t = rng.random_range(0.0..=s.total_duration());
            let x = s.propagator(t, Direction::Forward).unwrap().matrix;
            let u = s.propagator(t, Direction::Adjoint).unwrap().matrix;
            assert!(frobenius(&(&u * &x - identity(3))) < 1e-10);
            assert!(frobenius(&(x.adjoint() * &x - identity(3))) < 1e-10);
        }
    }

    #[test]
    fn concatenation_composes_propagators() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let hams = qubit_controls(1.1);
        for _ in 0..10 {
            let first = random_schedule(&mut rng, &hams, 3);
            let second = random_schedule(&mut rng, &hams, 4);
            let mut joined = first.timeline().to_vec();
            joined.extend_from_slice(second.timeline());
            let whole = first.with_timeline(joined).unwrap();
            let lhs = whole.forward(whole.total_duration()).unwrap();
            let rhs = second.forward(second.total_duration()).unwrap() * first.forward(first.total_duration()).unwrap();
            assert!(frobenius(&(lhs - rhs)) < 1e-10);
        }
    }

    #[test]
    fn evolve_density_examples() {
        let e = 0.7;
        let s = ControlSchedule::new(qubit_controls(e), vec![Segment::new("u1", std::f64::consts::PI / (2.0 * e))])
            .unwrap();
        let mixed = DensityMatrix::maximally_mixed(2);
        let out = evolve_density(&mixed, &s, 0.9).unwrap();
        assert!(frobenius(&(out.matrix() - mixed.matrix())) < 1e-15);
        let flipped = evolve_density(&DensityMatrix::basis_state(2, 0), &s, s.total_duration()).unwrap();
        assert!(frobenius(&(flipped.matrix() - DensityMatrix::basis_state(2, 1).matrix())) < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rho = random_density(&mut rng, 2);
        let evolved = evolve_density(&rho, &s, 1.7).unwrap();
        for (a, b) in rho.eigenvalues().iter().zip(evolved.eigenvalues()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn output_value_examples() {
        let sz = Hermitian::new(pauli::z()).unwrap();
        assert_eq!(output_value(&DensityMatrix::basis_state(2, 0), &sz).unwrap(), 1.0);
        assert_eq!(output_value(&DensityMatrix::maximally_mixed(2), &sz).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rho = random_density(&mut rng, 3);
        let s = random_hermitian(&mut rng, 3);
        let u = crate::random::random_unitary(&mut rng, 3);
        let s2 = Hermitian::from_hermitian_part(&(&u * s.matrix() * u.adjoint()));
        let rho2 = rho.conjugate_by(&u);
        assert!((output_value(&rho, &s).unwrap() - output_value(&rho2, &s2).unwrap()).abs() < 1e-12);
        assert!(output_value(&rho, &Hermitian::zeros(2)).is_err());
    }

    #[test]
    fn trajectory_examples() {
        let hams = qubit_controls(1.0);
        let zero = ControlSchedule::new(hams.clone(), vec![]).unwrap();
        let plus = DensityMatrix::new((identity(2) + pauli::x()) * C64::new(0.5, 0.0)).unwrap();
        let luders = KrausChannel::luders(&Hermitian::new(pauli::z()).unwrap());
        let traj = measured_trajectory(&plus, &[zero.clone()], &luders, 1, None).unwrap();
        assert!(frobenius(&(traj.final_state().matrix() - identity(2) * C64::new(0.5, 0.0))) < 1e-14);
        assert_eq!(traj.measurement_times, vec![0.0]);

        let s = ControlSchedule::new(hams, vec![Segment::new("u1", 0.4), Segment::new("u2", 0.9)]).unwrap();
        let id = KrausChannel::identity(2);
        let traj = measured_trajectory(&plus, &[s.clone()], &id, 1, Some(0.1)).unwrap();
        let direct = s.evolve(&plus, s.total_duration()).unwrap();
        assert!(frobenius(&(traj.final_state().matrix() - direct.matrix())) < 1e-14);
        for w in traj.points.windows(2) {
            assert!(w[1].time >= w[0].time);
        }
        assert!(measured_trajectory(&plus, &[s], &id, 2, None).is_err());
    }

    #[test]
    fn trajectory_states_remain_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut hams = BTreeMap::new();
        hams.insert("a".to_string(), random_hermitian(&mut rng, 3));
        hams.insert("b".to_string(), random_hermitian(&mut rng, 3));
        let ch = random_channel(&mut rng, 3, 2, 2);
        let schedules: Vec<_> = (0..4).map(|_| random_schedule(&mut rng, &hams, 3)).collect();
        let traj = measured_trajectory(&random_density(&mut rng, 3), &schedules, &ch, 4, Some(0.2)).unwrap();
        for p in &traj.points {
            assert!((p.state.trace() - 1.0).abs() < 1e-12);
            assert!(p.state.eigenvalues()[0] >= -1e-10);
        }
        assert_eq!(traj.measurement_times.len(), 4);
    }

    #[test]
    fn selective_probability_examples() {
        let hams = qubit_controls(1.0);
        let zero = ControlSchedule::new(hams, vec![]).unwrap();
        let luders = KrausChannel::luders(&Hermitian::new(pauli::z()).unwrap());
        let ket0 = DensityMatrix::basis_state(2, 0);
        let p = selective_probability(&ket0, &[zero.clone()], &luders, "+1", 1).unwrap();
        assert_eq!(p, 1.0);
        assert_eq!(selective_probability(&ket0, &[zero.clone()], &luders, "-1", 1).unwrap(), 0.0);
        let plus = DensityMatrix::new((identity(2) + pauli::x()) * C64::new(0.5, 0.0)).unwrap();
        assert!((selective_probability(&plus, &[zero.clone()], &luders, "1", 1).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(
            selective_probability(&plus, &[zero], &luders, "2", 1),
            Err(Error::UnknownOutcome(_))
        ));
    }

    #[test]
    fn csv_header_and_rows() {
        let hams = qubit_controls(1.0);
        let s = ControlSchedule::new(hams, vec![Segment::new("u1", 0.5)]).unwrap();
        let traj =
            measured_trajectory(&DensityMatrix::basis_state(2, 0), &[s], &KrausChannel::identity(2), 1, None).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "time,re_0_0,im_0_0,re_0_1,im_0_1,re_1_0,im_1_0,re_1_1,im_1_1");
        assert_eq!(lines.count(), traj.points.len());
    }
}
