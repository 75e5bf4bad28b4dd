//! Generalized measurements in Kraus form.
//!
//! A channel is an ordered list of outcomes, each carrying one or more Kraus
//! operators `Ω_{mk}`. The operation for outcome `m` is
//! `Φ_m(ρ) = Σ_k Ω_{mk} ρ Ω_{mk}†`, the nonselective channel is
//! `F = Σ_m Φ_m`, and the effect of `m` is `F_m = Σ_k Ω_{mk}† Ω_{mk}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{
    dim_of, frobenius, identity, trace_product, CMatrix, DensityMatrix, Hermitian, MatrixJson, C64,
};

/// Completeness tolerance `‖Σ Ω†Ω − 1‖_F`.
pub const COMPLETENESS_TOL: f64 = 1e-10;
/// Relative gap separating distinct eigenvalues in a Lüders decomposition.
pub const EIGEN_CLUSTER_TOL: f64 = 1e-9;
/// Outcomes less likely than this cannot be conditioned on.
pub const NULL_EVENT_TOL: f64 = 1e-14;
const REPETITION_TOL: f64 = 1e-10;

/// A measurement result. `value` is `None` for events that carry no number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub label: String,
    pub value: Option<f64>,
}

impl Outcome {
    pub fn numeric(value: f64) -> Self {
        Outcome { label: format_value(value), value: Some(value) }
    }
}

/// Short, stable label for a numeric outcome: `1`, `-1`, `0.5`.
pub fn format_value(v: f64) -> String {
    let r = (v * 1e12).round() / 1e12;
    if r == 0.0 {
        "0".to_string()
    } else {
        format!("{r}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Effect {
    pub outcome: Outcome,
    pub matrix: Hermitian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrausChannel {
    dim: usize,
    outcomes: Vec<Outcome>,
    operators: Vec<Vec<CMatrix>>,
}

impl KrausChannel {
    pub fn new(outcomes: Vec<Outcome>, operators: Vec<Vec<CMatrix>>) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::InvalidArgument("a channel needs at least one outcome".into()));
        }
        if outcomes.len() != operators.len() {
            return Err(Error::InvalidArgument(format!(
                "{} outcomes but {} operator groups",
                outcomes.len(),
                operators.len()
            )));
        }
        for (i, o) in outcomes.iter().enumerate() {
            if outcomes[..i].iter().any(|p| p.label == o.label) {
                return Err(Error::InvalidArgument(format!("duplicate outcome label `{}`", o.label)));
            }
            if let Some(v) = o.value {
                if !v.is_finite() {
                    return Err(Error::NonFinite);
                }
            }
        }
        let first = operators
            .iter()
            .flatten()
            .next()
            .ok_or_else(|| Error::InvalidArgument("a channel needs at least one operator".into()))?;
        let dim = dim_of(first)?;
        for (o, group) in outcomes.iter().zip(&operators) {
            if group.is_empty() {
                return Err(Error::InvalidArgument(format!("outcome `{}` has no operators", o.label)));
            }
            for op in group {
                let d = dim_of(op)?;
                if d != dim {
                    return Err(Error::DimensionMismatch { expected: dim, found: d });
                }
                if !crate::matrix::is_finite(op) {
                    return Err(Error::NonFinite);
                }
            }
        }
        let ch = KrausChannel { dim, outcomes, operators };
        let deviation = frobenius(&(ch.completeness() - identity(dim)));
        if deviation > COMPLETENESS_TOL {
            return Err(Error::NotTracePreserving { deviation });
        }
        Ok(ch)
    }

    /// The channel that leaves every state untouched.
    pub fn identity(n: usize) -> Self {
        KrausChannel {
            dim: n,
            outcomes: vec![Outcome { label: "id".into(), value: None }],
            operators: vec![vec![identity(n)]],
        }
    }

    /// Von Neumann–Lüders measurement of `s`: one outcome per distinct
    /// eigenvalue (descending), with the orthogonal eigenprojector as its
    /// single Kraus operator.
    pub fn luders(s: &Hermitian) -> Self {
        let n = s.dim();
        let (values, vectors) = s.eigh();
        let scale = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let tol = EIGEN_CLUSTER_TOL * scale;
        // descending order; a new cluster starts once the gap to the cluster head exceeds tol
        let mut clusters: Vec<Vec<usize>> = Vec::new();
        for i in (0..n).rev() {
            match clusters.last_mut() {
                Some(c) if (values[c[0]] - values[i]).abs() <= tol => c.push(i),
                _ => clusters.push(vec![i]),
            }
        }
        let mut outcomes = Vec::with_capacity(clusters.len());
        let mut operators = Vec::with_capacity(clusters.len());
        for cluster in clusters {
            let value = cluster.iter().map(|&i| values[i]).sum::<f64>() / cluster.len() as f64;
            let mut proj = CMatrix::zeros(n, n);
            for &i in &cluster {
                let v = vectors.column(i);
                proj += &v * v.adjoint();
            }
            outcomes.push(Outcome::numeric(value));
            operators.push(vec![crate::matrix::hermitian_part(&proj)]);
        }
        KrausChannel { dim: n, outcomes, operators }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn operators(&self) -> &[Vec<CMatrix>] {
        &self.operators
    }

    /// Resolves an outcome by label, or by numeric value when the query
    /// parses as a number (so `+1` finds the outcome labelled `1`).
    pub fn outcome_index(&self, query: &str) -> Result<usize> {
        if let Some(i) = self.outcomes.iter().position(|o| o.label == query) {
            return Ok(i);
        }
        if let Ok(v) = query.trim().parse::<f64>() {
            let hit = self.outcomes.iter().position(|o| match o.value {
                Some(x) => (x - v).abs() <= 1e-9 * x.abs().max(1.0),
                None => false,
            });
            if let Some(i) = hit {
                return Ok(i);
            }
        }
        Err(Error::UnknownOutcome(query.to_string()))
    }

    fn check_dim(&self, m: &CMatrix) -> Result<()> {
        let d = dim_of(m)?;
        if d != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: d });
        }
        Ok(())
    }

    /// `Σ Ω†Ω`.
    pub fn completeness(&self) -> CMatrix {
        let mut acc = CMatrix::zeros(self.dim, self.dim);
        for op in self.operators.iter().flatten() {
            acc += op.adjoint() * op;
        }
        acc
    }

    /// `Φ_m(x)` for outcome index `m`, on an arbitrary operator.
    pub fn operation_matrix(&self, m: usize, x: &CMatrix) -> CMatrix {
        let mut acc = CMatrix::zeros(self.dim, self.dim);
        for op in &self.operators[m] {
            acc += op * x * op.adjoint();
        }
        acc
    }

    /// `F(x) = Σ_m Φ_m(x)` on an arbitrary operator.
    pub fn apply_matrix(&self, x: &CMatrix) -> Result<CMatrix> {
        self.check_dim(x)?;
        let mut acc = CMatrix::zeros(self.dim, self.dim);
        for op in self.operators.iter().flatten() {
            acc += op * x * op.adjoint();
        }
        Ok(acc)
    }

    pub fn apply(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        Ok(DensityMatrix::assume_valid(self.apply_matrix(rho.matrix())?))
    }

    /// `F*(x) = Σ Ω† x Ω`, the Hilbert–Schmidt adjoint of [`Self::apply_matrix`].
    pub fn dual_apply_matrix(&self, x: &CMatrix) -> Result<CMatrix> {
        self.check_dim(x)?;
        let mut acc = CMatrix::zeros(self.dim, self.dim);
        for op in self.operators.iter().flatten() {
            acc += op.adjoint() * x * op;
        }
        Ok(acc)
    }

    pub fn dual_apply(&self, s: &Hermitian) -> Result<Hermitian> {
        Ok(Hermitian::from_hermitian_part(&self.dual_apply_matrix(s.matrix())?))
    }

    pub fn effect(&self, m: usize) -> Hermitian {
        let mut acc = CMatrix::zeros(self.dim, self.dim);
        for op in &self.operators[m] {
            acc += op.adjoint() * op;
        }
        Hermitian::from_hermitian_part(&acc)
    }

    pub fn effects(&self) -> Vec<Effect> {
        (0..self.outcomes.len())
            .map(|m| Effect { outcome: self.outcomes[m].clone(), matrix: self.effect(m) })
            .collect()
    }

    /// `S_eff = Σ_m m F_m`, returned traceless.
    pub fn effective_observable(&self) -> Result<Hermitian> {
        let mut acc = CMatrix::zeros(self.dim, self.dim);
        for (m, o) in self.outcomes.iter().enumerate() {
            let v = o.value.ok_or_else(|| Error::NonNumericOutcome(o.label.clone()))?;
            acc += self.effect(m).matrix() * C64::new(v, 0.0);
        }
        Ok(Hermitian::from_hermitian_part(&acc).traceless())
    }

    /// Checks `Ω_{mk} Ω_{rl} = δ_{mr} δ_{kl} Ω_{mk}` for every pair.
    pub fn has_repetition_property(&self) -> bool {
        let flat: Vec<&CMatrix> = self.operators.iter().flatten().collect();
        for (i, a) in flat.iter().enumerate() {
            for (j, b) in flat.iter().enumerate() {
                let prod = *a * *b;
                let residual = if i == j { frobenius(&(prod - *a)) } else { frobenius(&prod) };
                if residual > REPETITION_TOL {
                    return false;
                }
            }
        }
        true
    }

    /// Probability `Tr(F_m ρ)` of outcome `m`.
    pub fn probability(&self, rho: &CMatrix, m: usize) -> f64 {
        trace_product(self.effect(m).matrix(), rho).re
    }

    /// Conditions `ρ` on the outcome named by `query`:
    /// returns `(P(m), Φ_m(ρ)/P(m))`.
    pub fn selective_update(&self, rho: &DensityMatrix, query: &str) -> Result<(f64, DensityMatrix)> {
        self.check_dim(rho.matrix())?;
        let m = self.outcome_index(query)?;
        let p = self.probability(rho.matrix(), m);
        if p <= NULL_EVENT_TOL {
            return Err(Error::NullEvent { outcome: self.outcomes[m].label.clone(), probability: p });
        }
        let post = self.operation_matrix(m, rho.matrix()) / C64::new(p, 0.0);
        Ok((p, DensityMatrix::assume_valid(post)))
    }

    pub fn to_json_value(&self) -> ChannelJson {
        ChannelJson {
            outcomes: self.outcomes.clone(),
            operators: self
                .operators
                .iter()
                .map(|g| g.iter().map(MatrixJson::from).collect())
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_json_value()).expect("channel serialization cannot fail")
    }

    /// Parses and validates a channel from JSON.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: ChannelJson =
            serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("channel JSON: {e}")))?;
        raw.to_channel()
    }
}

/// Serialized channel layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelJson {
    pub outcomes: Vec<Outcome>,
    pub operators: Vec<Vec<MatrixJson>>,
}

impl ChannelJson {
    pub fn to_channel(&self) -> Result<KrausChannel> {
        let ops = self
            .operators
            .iter()
            .map(|g| g.iter().map(MatrixJson::to_matrix).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        KrausChannel::new(self.outcomes.clone(), ops)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{expm, pauli, C64};
    use crate::random::{random_channel, random_density, random_hermitian};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn plus() -> DensityMatrix {
        DensityMatrix::new((identity(2) + pauli::x()) * C64::new(0.5, 0.0)).unwrap()
    }

    fn sz() -> Hermitian {
        Hermitian::new(pauli::z()).unwrap()
    }

    #[test]
    fn identity_channel_is_trivial() {
        let id = KrausChannel::identity(2);
        let rho = plus();
        assert_eq!(id.apply(&rho).unwrap().matrix(), rho.matrix());
        assert_eq!(id.dual_apply(&sz()).unwrap(), sz());
        assert!(id.has_repetition_property());
        let effects = id.effects();
        assert_eq!(effects.len(), 1);
        assert_eq!(effects[0].matrix.matrix(), &identity(2));
    }

    #[test]
    fn luders_sigma_z() {
        let ch = KrausChannel::luders(&sz());
        assert_eq!(ch.outcomes().len(), 2);
        assert_eq!(ch.outcomes()[0].value, Some(1.0));
        assert_eq!(ch.outcomes()[1].value, Some(-1.0));
        assert_eq!(ch.outcomes()[0].label, "1");
        assert!(frobenius(&(&ch.operators()[0][0] - DensityMatrix::basis_state(2, 0).matrix())) < 1e-14);
        assert!(frobenius(&(&ch.operators()[1][0] - DensityMatrix::basis_state(2, 1).matrix())) < 1e-14);
        // dephases |+⟩⟨+| to 1/2
        let out = ch.apply(&plus()).unwrap();
        assert!(frobenius(&(out.matrix() - identity(2) * C64::new(0.5, 0.0))) < 1e-14);
        // σx has no diagonal part
        let dx = ch.dual_apply(&Hermitian::new(pauli::x()).unwrap()).unwrap();
        assert!(frobenius(dx.matrix()) < 1e-14);
        let seff = ch.effective_observable().unwrap();
        assert!(frobenius(&(seff.matrix() - pauli::z())) < 1e-14);
        assert!(ch.has_repetition_property());
    }

    #[test]
    fn luders_degenerate_and_spin1() {
        let ch = KrausChannel::luders(&Hermitian::identity(3));
        assert_eq!(ch.outcomes().len(), 1);
        assert!(frobenius(&(&ch.operators()[0][0] - identity(3))) < 1e-14);

        let sz1 = Hermitian::from_real_diagonal(&[1.0, 0.0, -1.0]);
        let ch = KrausChannel::luders(&sz1);
        assert_eq!(ch.outcomes().len(), 3);
        for (k, group) in ch.operators().iter().enumerate() {
            let p = &group[0];
            assert!(frobenius(&(p * p - p)) < 1e-14);
            assert!((crate::matrix::trace(p).re - 1.0).abs() < 1e-14, "rank-1 projector {k}");
        }
        assert_eq!(ch.outcome_index("+1").unwrap(), 0);
        assert_eq!(ch.outcome_index("0").unwrap(), 1);
    }

    #[test]
    fn luders_clusters_near_degenerate_eigenvalues() {
        let s = Hermitian::from_real_diagonal(&[1.0, 1.0 + 1e-13, -2.0]);
        assert_eq!(KrausChannel::luders(&s).outcomes().len(), 2);
        let s = Hermitian::from_real_diagonal(&[1.0, 1.0 + 1e-6, -2.0]);
        assert_eq!(KrausChannel::luders(&s).outcomes().len(), 3);
    }

    #[test]
    fn non_projector_unitary_lacks_repetition() {
        let u = expm(&(pauli::x() * C64::new(0.0, -0.3)));
        let ch = KrausChannel::new(vec![Outcome::numeric(0.0)], vec![vec![u]]).unwrap();
        assert!(!ch.has_repetition_property());
    }

    #[test]
    fn incomplete_operators_rejected() {
        let half = identity(2) * C64::new(0.5, 0.0);
        let err = KrausChannel::new(vec![Outcome::numeric(1.0)], vec![vec![half]]).unwrap_err();
        assert!(matches!(err, Error::NotTracePreserving { .. }));
    }

    #[test]
    fn effective_observable_requires_numbers() {
        let id = KrausChannel::identity(2);
        assert!(matches!(id.effective_observable(), Err(Error::NonNumericOutcome(_))));
        let zero = KrausChannel::new(vec![Outcome::numeric(0.0)], vec![vec![identity(2)]]).unwrap();
        assert!(frobenius(zero.effective_observable().unwrap().matrix()) == 0.0);
    }

    #[test]
    fn selective_update_examples() {
        let ch = KrausChannel::luders(&sz());
        let (p, post) = ch.selective_update(&DensityMatrix::basis_state(2, 0), "1").unwrap();
        assert!((p - 1.0).abs() < 1e-15);
        assert!(frobenius(&(post.matrix() - DensityMatrix::basis_state(2, 0).matrix())) < 1e-15);
        let (p, post) = ch.selective_update(&plus(), "+1").unwrap();
        assert!((p - 0.5).abs() < 1e-15);
        assert!(frobenius(&(post.matrix() - DensityMatrix::basis_state(2, 0).matrix())) < 1e-14);
        let err = ch.selective_update(&DensityMatrix::basis_state(2, 0), "-1").unwrap_err();
        assert!(matches!(err, Error::NullEvent { .. }));
        assert!(matches!(ch.selective_update(&plus(), "7"), Err(Error::UnknownOutcome(_))));
    }

    #[test]
    fn random_channels_obey_algebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..60 {
            let n = 2 + trial % 3;
            let ch = random_channel(&mut rng, n, 1 + trial % 3, 2);
            let rho = random_density(&mut rng, n);
            let s = random_hermitian(&mut rng, n);
            let lhs = trace_product(ch.dual_apply(&s).unwrap().matrix(), rho.matrix()).re;
            let rhs = trace_product(s.matrix(), ch.apply(&rho).unwrap().matrix()).re;
            assert!((lhs - rhs).abs() < 1e-12);
            // unital dual
            let one = ch.dual_apply(&Hermitian::identity(n)).unwrap();
            assert!(frobenius(&(one.matrix() - identity(n))) < 1e-10);
            let mut sum = CMatrix::zeros(n, n);
            for e in ch.effects() {
                assert!(e.matrix.eigenvalues()[0] >= -1e-10);
                sum += e.matrix.matrix();
            }
            assert!(frobenius(&(sum - identity(n))) < 1e-10);
            let total: f64 = (0..ch.outcomes().len()).map(|m| ch.probability(rho.matrix(), m)).sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!((ch.apply(&rho).unwrap().trace() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn repetition_implies_idempotence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 2..=4 {
            let s = random_hermitian(&mut rng, n);
            let ch = KrausChannel::luders(&s);
            let rho = random_density(&mut rng, n);
            let once = ch.apply(&rho).unwrap();
            let twice = ch.apply(&once).unwrap();
            assert!(frobenius(&(once.matrix() - twice.matrix())) < 1e-10);
            let x = random_hermitian(&mut rng, n);
            let d1 = ch.dual_apply(&x).unwrap();
            let d2 = ch.dual_apply(&d1).unwrap();
            assert!(frobenius(&(d1.matrix() - d2.matrix())) < 1e-10);
            let seff = ch.effective_observable().unwrap();
            let back = ch.dual_apply(&seff).unwrap();
            assert!(frobenius(&(back.matrix() - seff.matrix())) < 1e-10);
        }
    }

    #[test]
    fn json_round_trip() {
        let ch = KrausChannel::luders(&Hermitian::from_real_diagonal(&[1.0, 0.0, -1.0]));
        let back = KrausChannel::from_json(&ch.to_json()).unwrap();
        assert_eq!(back, ch);
        assert!(KrausChannel::from_json(r#"{"outcomes":[],"operators":[]}"#).is_err());
    }
}
