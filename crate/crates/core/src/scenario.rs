//! Scenario documents, output records and schedule files.
//!
//! A scenario binds a set of control Hamiltonians, a measurement and
//! optional defaults into one JSON document. Parsing reports schema
//! problems with the path of the offending field; Hermiticity and
//! dimension problems are reported separately.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channels::{ChannelJson, KrausChannel};
use crate::dynamics::{ControlSchedule, Segment};
use crate::error::Error;
use crate::indirect::{effective_observable_exact, effective_observable_series, indirect_channel, IndirectSetup};
use crate::matrix::{hermitian_deviation, CMatrix, DensityMatrix, Hermitian, MatrixJson, HERMITIAN_TOL};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("schema violation at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("`{field}` is not Hermitian (deviation {deviation:.3e})")]
    NotHermitian { field: String, deviation: f64 },

    #[error("`{field}` has dimension {found}, expected {expected}")]
    DimensionMismatch { field: String, expected: usize, found: usize },

    #[error("`{field}`: {source}")]
    Invalid { field: String, source: Error },
}

impl ScenarioError {
    /// Short stable identifier of the error kind.
    pub fn code(&self) -> &'static str {
        match self {
            ScenarioError::Schema { .. } => "schema",
            ScenarioError::NotHermitian { .. } => "not_hermitian",
            ScenarioError::DimensionMismatch { .. } => "dimension_mismatch",
            ScenarioError::Invalid { .. } => "invalid",
        }
    }
}

type SResult<T> = std::result::Result<T, ScenarioError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum MeasurementDoc {
    /// Output `Tr(Sρ)` with no state change.
    Direct { s: MatrixJson },
    /// Von Neumann–Lüders measurement of `s`.
    Luders { s: MatrixJson },
    Indirect {
        a: MatrixJson,
        b: MatrixJson,
        s: MatrixJson,
        rho_p: MatrixJson,
        coupling: f64,
        tau: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        h_u: Option<MatrixJson>,
    },
    Kraus { channel: ChannelJson },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Defaults {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kcap: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kmax: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forgetting: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observer_horizon: Option<f64>,
}

impl Defaults {
    pub fn tol(&self) -> f64 {
        self.tol.unwrap_or(crate::indirect::SERIES_TOL)
    }
    pub fn kcap(&self) -> usize {
        self.kcap.unwrap_or(crate::indirect::SERIES_CAP)
    }
    pub fn kmax(&self) -> usize {
        self.kmax.unwrap_or(3)
    }
    pub fn nodes(&self) -> usize {
        self.nodes.unwrap_or(crate::reconstruction::DEFAULT_NODES)
    }
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
    pub fn segments(&self) -> usize {
        self.segments.unwrap_or(4)
    }
    pub fn forgetting(&self) -> f64 {
        self.forgetting.unwrap_or(1.0)
    }
    pub fn step(&self) -> f64 {
        self.step.unwrap_or(0.01)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub name: String,
    pub dim: usize,
    pub hamiltonians: BTreeMap<String, MatrixJson>,
    pub measurement: MeasurementDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<Segment>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<MatrixJson>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub defaults: Defaults,
}

fn is_default(d: &Defaults) -> bool {
    *d == Defaults::default()
}

#[derive(Debug, Clone)]
pub enum Measurement {
    Direct(Hermitian),
    Luders(Hermitian),
    Indirect(Box<IndirectSetup>),
    Kraus(KrausChannel),
}

/// Result of computing the effective observable of a scenario.
#[derive(Debug, Clone)]
pub struct EffectiveObservable {
    pub raw: Hermitian,
    pub traceless: Hermitian,
    /// Last series index used, when the series was evaluated.
    pub terms_used: Option<usize>,
    pub converged: bool,
    pub method: &'static str,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub doc: ScenarioDoc,
    pub hamiltonians: BTreeMap<String, Hermitian>,
    pub measurement: Measurement,
    pub initial_state: Option<DensityMatrix>,
}

fn matrix_field(m: &MatrixJson, field: &str) -> SResult<CMatrix> {
    m.to_matrix().map_err(|source| ScenarioError::Invalid { field: field.to_string(), source })
}

fn hermitian_field(m: &MatrixJson, field: &str, dim: Option<usize>) -> SResult<Hermitian> {
    let raw = matrix_field(m, field)?;
    if let Some(expected) = dim {
        if raw.nrows() != expected {
            return Err(ScenarioError::DimensionMismatch { field: field.to_string(), expected, found: raw.nrows() });
        }
    }
    let deviation = hermitian_deviation(&raw);
    let scale = crate::matrix::frobenius(&raw).max(1.0);
    if deviation > HERMITIAN_TOL * scale {
        return Err(ScenarioError::NotHermitian { field: field.to_string(), deviation });
    }
    Ok(Hermitian::from_hermitian_part(&raw))
}

fn density_field(m: &MatrixJson, field: &str, dim: Option<usize>) -> SResult<DensityMatrix> {
    let h = hermitian_field(m, field, dim)?;
    DensityMatrix::new(h.into_matrix()).map_err(|source| ScenarioError::Invalid { field: field.to_string(), source })
}

fn invalid(field: &str) -> impl Fn(Error) -> ScenarioError + '_ {
    move |source| ScenarioError::Invalid { field: field.to_string(), source }
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> SResult<Scenario> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: ScenarioDoc = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ScenarioError::Schema { path, message: e.into_inner().to_string() }
    })?;
    Scenario::from_doc(doc)
}

impl Scenario {
    pub fn from_doc(doc: ScenarioDoc) -> SResult<Self> {
        let n = doc.dim;
        if n < 2 {
            return Err(ScenarioError::Invalid {
                field: "dim".into(),
                source: Error::InvalidArgument(format!("dimension must be at least 2, got {n}")),
            });
        }
        if doc.hamiltonians.is_empty() {
            return Err(ScenarioError::Schema {
                path: "hamiltonians".into(),
                message: "at least one control Hamiltonian is required".into(),
            });
        }
        let mut hamiltonians = BTreeMap::new();
        for (sym, m) in &doc.hamiltonians {
            hamiltonians.insert(sym.clone(), hermitian_field(m, &format!("hamiltonians.{sym}"), Some(n))?);
        }
        let measurement = match &doc.measurement {
            MeasurementDoc::Direct { s } => Measurement::Direct(hermitian_field(s, "measurement.s", Some(n))?),
            MeasurementDoc::Luders { s } => Measurement::Luders(hermitian_field(s, "measurement.s", Some(n))?),
            MeasurementDoc::Indirect { a, b, s, rho_p, coupling, tau, h_u } => {
                let a = hermitian_field(a, "measurement.a", Some(n))?;
                let b = hermitian_field(b, "measurement.b", None)?;
                let np = b.dim();
                let s = hermitian_field(s, "measurement.s", Some(np))?;
                let rho_p = density_field(rho_p, "measurement.rho_p", Some(np))?;
                let h_u = h_u.as_ref().map(|h| hermitian_field(h, "measurement.h_u", Some(n))).transpose()?;
                let setup =
                    IndirectSetup::new(a, b, s, rho_p, *coupling, *tau, h_u).map_err(invalid("measurement"))?;
                Measurement::Indirect(Box::new(setup))
            }
            MeasurementDoc::Kraus { channel } => {
                let ch = channel.to_channel().map_err(invalid("measurement.channel"))?;
                if ch.dim() != n {
                    return Err(ScenarioError::DimensionMismatch {
                        field: "measurement.channel".into(),
                        expected: n,
                        found: ch.dim(),
                    });
                }
                ch.effective_observable().map_err(invalid("measurement.channel"))?;
                Measurement::Kraus(ch)
            }
        };
        if let Some(tl) = &doc.schedule {
            ControlSchedule::new(hamiltonians.clone(), tl.clone()).map_err(invalid("schedule"))?;
        }
        let initial_state = doc
            .initial_state
            .as_ref()
            .map(|m| density_field(m, "initial_state", Some(n)))
            .transpose()?;
        Ok(Scenario { doc, hamiltonians, measurement, initial_state })
    }

    pub fn dim(&self) -> usize {
        self.doc.dim
    }

    pub fn name(&self) -> &str {
        &self.doc.name
    }

    pub fn defaults(&self) -> &Defaults {
        &self.doc.defaults
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.doc).expect("scenario serialization cannot fail")
    }

    /// Channel applied at each measurement.
    pub fn channel(&self) -> crate::Result<KrausChannel> {
        match &self.measurement {
            Measurement::Direct(_) => Ok(KrausChannel::identity(self.dim())),
            Measurement::Luders(s) => Ok(KrausChannel::luders(s)),
            Measurement::Indirect(setup) => Ok(indirect_channel(setup)?.into_kraus()),
            Measurement::Kraus(ch) => Ok(ch.clone()),
        }
    }

    /// Effective observable; `traceless` is what the analysis uses.
    ///
    /// Indirect setups use the series when no system Hamiltonian acts during
    /// the interaction and the dense exponential otherwise.
    pub fn effective_observable(&self, tol: f64, k_cap: usize) -> crate::Result<EffectiveObservable> {
        let plain = |raw: Hermitian, method| EffectiveObservable {
            traceless: raw.traceless(),
            raw,
            terms_used: None,
            converged: true,
            method,
        };
        Ok(match &self.measurement {
            Measurement::Direct(s) => plain(s.clone(), "direct"),
            Measurement::Luders(s) => plain(s.clone(), "luders"),
            Measurement::Kraus(ch) => {
                let mut raw = CMatrix::zeros(self.dim(), self.dim());
                for (o, e) in ch.outcomes().iter().zip(ch.effects()) {
                    let v = o.value.ok_or_else(|| Error::NonNumericOutcome(o.label.clone()))?;
                    raw += e.matrix.matrix() * crate::matrix::C64::new(v, 0.0);
                }
                plain(Hermitian::from_hermitian_part(&raw), "kraus")
            }
            Measurement::Indirect(setup) if setup.h_u.is_some() => plain(effective_observable_exact(setup), "exact"),
            Measurement::Indirect(setup) => {
                let r = effective_observable_series(setup, tol, k_cap)?;
                EffectiveObservable {
                    raw: r.raw,
                    traceless: r.traceless,
                    terms_used: Some(r.terms_used),
                    converged: r.converged,
                    method: "series",
                }
            }
        })
    }

    /// Control schedule from the document's timeline (empty if absent).
    pub fn schedule(&self) -> crate::Result<ControlSchedule> {
        ControlSchedule::new(self.hamiltonians.clone(), self.doc.schedule.clone().unwrap_or_default())
    }

    pub fn with_timeline(&self, timeline: Vec<Segment>) -> crate::Result<ControlSchedule> {
        ControlSchedule::new(self.hamiltonians.clone(), timeline)
    }

    pub fn hamiltonian_list(&self) -> Vec<Hermitian> {
        self.hamiltonians.values().cloned().collect()
    }
}

/// Schedule file: one timeline per evolution stage. A single stage is
/// reused for every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleFile {
    pub stages: Vec<Vec<Segment>>,
}

impl ScheduleFile {
    /// Timelines for `k` steps.
    pub fn timelines(&self, k: usize) -> crate::Result<Vec<Vec<Segment>>> {
        match self.stages.len() {
            0 => Err(Error::InsufficientSchedules { needed: k, given: 0 }),
            1 => Ok(vec![self.stages[0].clone(); k]),
            m if m >= k => Ok(self.stages[..k].to_vec()),
            m => Err(Error::InsufficientSchedules { needed: k, given: m }),
        }
    }
}

pub fn parse_schedule_file(text: &str) -> SResult<ScheduleFile> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: ScheduleFile = serde_path_to_error::deserialize(de)
        .map_err(|e| ScenarioError::Schema { path: e.path().to_string(), message: e.into_inner().to_string() })?;
    for (i, stage) in file.stages.iter().enumerate() {
        for (j, seg) in stage.iter().enumerate() {
            if !(seg.duration.is_finite() && seg.duration >= 0.0) {
                return Err(ScenarioError::Invalid {
                    field: format!("stages[{i}][{j}].duration"),
                    source: Error::InvalidArgument(format!("duration must be finite and non-negative, got {}", seg.duration)),
                });
            }
        }
    }
    Ok(file)
}

#[derive(Debug, Deserialize)]
struct SampleRow {
    time: f64,
    y: f64,
}

/// Reads an output record from CSV with header `time,y`.
pub fn parse_samples<R: std::io::Read>(reader: R) -> SResult<Vec<(f64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| ScenarioError::Schema { path: "header".into(), message: e.to_string() })?
        .clone();
    if headers.len() != 2 || &headers[0] != "time" || &headers[1] != "y" {
        return Err(ScenarioError::Schema {
            path: "header".into(),
            message: format!("expected `time,y`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<SampleRow>().enumerate() {
        let row = row.map_err(|e| ScenarioError::Schema { path: format!("row {}", i + 1), message: e.to_string() })?;
        if !(row.time.is_finite() && row.y.is_finite()) {
            return Err(ScenarioError::Schema { path: format!("row {}", i + 1), message: "values must be finite".into() });
        }
        out.push((row.time, row.y));
    }
    Ok(out)
}

/// Writes `time,y` rows with 17 significant digits.
pub fn write_samples<W: std::io::Write>(out: W, samples: &[(f64, f64)]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "y"])?;
    for (t, y) in samples {
        w.write_record([format!("{t:.16e}"), format!("{y:.16e}")])?;
    }
    w.flush()
}
