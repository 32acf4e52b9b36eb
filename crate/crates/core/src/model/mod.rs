//! Domain model: CTBN specifications, sensor models, conditional probability
//! tables and the discretized two-slice network used by the generating
//! process and the factored-frontier baseline.

mod config;
pub mod fire;
pub mod topology;

pub use config::{load_domain, save_domain};
pub use fire::{build_fire_domain, FireDomain, FireParams, RoomVars};
pub use topology::Topology;

use crate::linalg::{matrix_exp, IntensityMatrix, LinalgError};
use thiserror::Error;

/// Tolerance on probability-row sums.
pub const PROB_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("topology error: {0}")]
    Topology(String),
    #[error("parameter error: {0}")]
    Param(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariableSpec {
    pub name: String,
    pub states: Vec<String>,
    /// Distribution of the variable at the start of monitoring.
    pub initial: Vec<f64>,
}

impl VariableSpec {
    pub fn new(name: &str, states: &[&str], initial: &[f64]) -> Self {
        Self {
            name: name.to_string(),
            states: states.iter().map(|s| s.to_string()).collect(),
            initial: initial.to_vec(),
        }
    }

    pub fn card(&self) -> usize {
        self.states.len()
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.card() < 2 {
            return Err(ModelError::Validation(format!(
                "variable {} needs at least two states",
                self.name
            )));
        }
        check_distribution(&self.initial, self.card())
            .map_err(|e| ModelError::Validation(format!("initial of {}: {e}", self.name)))
    }
}

fn check_distribution(p: &[f64], card: usize) -> Result<(), String> {
    if p.len() != card {
        return Err(format!("expected {card} entries, got {}", p.len()));
    }
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(format!("entries outside [0, 1]: {p:?}"));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > PROB_TOL {
        return Err(format!("entries sum to {s}"));
    }
    Ok(())
}

/// Number of joint configurations of a parent list.
pub fn config_count(cards: &[usize]) -> usize {
    cards.iter().product()
}

/// Mixed-radix index of a parent configuration, first parent most significant.
pub fn config_index(cards: &[usize], values: &[usize]) -> usize {
    debug_assert_eq!(cards.len(), values.len());
    values
        .iter()
        .zip(cards)
        .fold(0, |acc, (&v, &c)| acc * c + v)
}

/// Inverse of [`config_index`].
pub fn config_values(cards: &[usize], mut index: usize) -> Vec<usize> {
    let mut out = vec![0; cards.len()];
    for (slot, &c) in out.iter_mut().zip(cards).rev() {
        *slot = index % c;
        index /= c;
    }
    out
}

/// Conditional probability table of a child given an ordered parent list.
#[derive(Debug, Clone, PartialEq)]
pub struct Cpt {
    child_card: usize,
    parent_cards: Vec<usize>,
    /// `table[config * child_card + x]`
    table: Vec<f64>,
}

impl Cpt {
    pub fn new(child_card: usize, parent_cards: Vec<usize>, table: Vec<f64>) -> Result<Self, ModelError> {
        let rows = config_count(&parent_cards);
        if table.len() != rows * child_card {
            return Err(ModelError::Validation(format!(
                "table has {} entries, expected {}",
                table.len(),
                rows * child_card
            )));
        }
        for (i, row) in table.chunks(child_card).enumerate() {
            check_distribution(row, child_card)
                .map_err(|e| ModelError::Validation(format!("row {i}: {e}")))?;
        }
        Ok(Self {
            child_card,
            parent_cards,
            table,
        })
    }

    /// Parentless table holding a single distribution.
    pub fn prior(p: &[f64]) -> Result<Self, ModelError> {
        Self::new(p.len(), Vec::new(), p.to_vec())
    }

    /// Transition table of a variable over `dt`, conditioned on its own
    /// previous value followed by the parents whose values select the CIM.
    /// Parents are held constant across the interval.
    pub fn from_cims(cims: &[IntensityMatrix], parent_cards: &[usize], dt: f64) -> Result<Self, ModelError> {
        let n = cims
            .first()
            .map(IntensityMatrix::n)
            .ok_or_else(|| ModelError::Validation("no CIMs".into()))?;
        if cims.len() != config_count(parent_cards) {
            return Err(ModelError::Schema(format!(
                "{} CIMs for {} parent configurations",
                cims.len(),
                config_count(parent_cards)
            )));
        }
        let mut cards = Vec::with_capacity(parent_cards.len() + 1);
        cards.push(n);
        cards.extend_from_slice(parent_cards);
        let mut table = vec![0.0; config_count(&cards) * n];
        let block = cims.len();
        for (u, q) in cims.iter().enumerate() {
            let p = matrix_exp(q, dt)?;
            for x_prev in 0..n {
                let row = x_prev * block + u;
                table[row * n..(row + 1) * n].copy_from_slice(p.row(x_prev));
            }
        }
        Ok(Self {
            child_card: n,
            parent_cards: cards,
            table,
        })
    }

    pub fn child_card(&self) -> usize {
        self.child_card
    }

    pub fn parent_cards(&self) -> &[usize] {
        &self.parent_cards
    }

    pub fn n_configs(&self) -> usize {
        self.table.len() / self.child_card
    }

    pub fn row(&self, config: usize) -> &[f64] {
        &self.table[config * self.child_card..(config + 1) * self.child_card]
    }

    pub fn row_for(&self, values: &[usize]) -> &[f64] {
        self.row(config_index(&self.parent_cards, values))
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }
}

/// Continuous-time Bayesian network: variables, a possibly cyclic parent
/// graph and one intensity matrix per parent configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CtbnSpec {
    pub variables: Vec<VariableSpec>,
    pub parents: Vec<Vec<usize>>,
    /// `cims[var][config_index(parent cards, parent values)]`
    pub cims: Vec<Vec<IntensityMatrix>>,
}

impl CtbnSpec {
    pub fn new(
        variables: Vec<VariableSpec>,
        parents: Vec<Vec<usize>>,
        cims: Vec<Vec<IntensityMatrix>>,
    ) -> Result<Self, ModelError> {
        let spec = Self {
            variables,
            parents,
            cims,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.variables.len();
        if self.parents.len() != n || self.cims.len() != n {
            return Err(ModelError::Schema("parents/cims do not cover every variable".into()));
        }
        for (i, v) in self.variables.iter().enumerate() {
            v.validate()?;
            for &p in &self.parents[i] {
                if p >= n || p == i {
                    return Err(ModelError::Schema(format!("bad parent {p} of {}", v.name)));
                }
            }
            let want = config_count(&self.parent_cards(i));
            if self.cims[i].len() != want {
                return Err(ModelError::Schema(format!(
                    "{} has {} CIMs, expected one per parent configuration ({want})",
                    v.name,
                    self.cims[i].len()
                )));
            }
            if let Some(q) = self.cims[i].iter().find(|q| q.n() != v.card()) {
                return Err(ModelError::Validation(format!(
                    "CIM of {} has {} states, variable has {}",
                    v.name,
                    q.n(),
                    v.card()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn card(&self, var: usize) -> usize {
        self.variables[var].card()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn parent_cards(&self, var: usize) -> Vec<usize> {
        self.parents[var].iter().map(|&p| self.card(p)).collect()
    }

    pub fn children(&self, var: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&c| self.parents[c].contains(&var))
            .collect()
    }

    pub fn cim(&self, var: usize, parent_values: &[usize]) -> &IntensityMatrix {
        &self.cims[var][config_index(&self.parent_cards(var), parent_values)]
    }

    /// Largest exit rate over every CIM.
    pub fn max_rate(&self) -> f64 {
        self.cims
            .iter()
            .flatten()
            .map(IntensityMatrix::max_exit_rate)
            .fold(0.0, f64::max)
    }

    /// Transition table of `var` over `dt` with parents held constant.
    pub fn transition_cpt(&self, var: usize, dt: f64) -> Result<Cpt, ModelError> {
        Cpt::from_cims(&self.cims[var], &self.parent_cards(var), dt)
    }
}

/// An observed variable with an instantaneous distribution given the current
/// values of its state-variable parents. The first parent hosts the sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSpec {
    pub name: String,
    pub states: Vec<String>,
    pub parents: Vec<usize>,
    pub cpt: Cpt,
}

impl SensorSpec {
    pub fn card(&self) -> usize {
        self.states.len()
    }

    pub fn host(&self) -> usize {
        self.parents[0]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservationModel {
    pub sensors: Vec<SensorSpec>,
}

impl ObservationModel {
    pub fn validate(&self, spec: &CtbnSpec) -> Result<(), ModelError> {
        for s in &self.sensors {
            if s.parents.is_empty() {
                return Err(ModelError::Schema(format!("sensor {} has no parents", s.name)));
            }
            if let Some(&p) = s.parents.iter().find(|&&p| p >= spec.len()) {
                return Err(ModelError::Schema(format!("sensor {} has bad parent {p}", s.name)));
            }
            let cards: Vec<usize> = s.parents.iter().map(|&p| spec.card(p)).collect();
            if s.cpt.parent_cards() != cards.as_slice() || s.cpt.child_card() != s.card() {
                return Err(ModelError::Validation(format!(
                    "sensor {} table shape does not match its parents",
                    s.name
                )));
            }
        }
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.sensors.iter().position(|s| s.name == name)
    }
}

/// Two-slice network obtained by discretizing a CTBN with step `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoSliceDbn {
    pub dt: f64,
    pub parents: Vec<Vec<usize>>,
    /// Per state variable: table over (own previous value, previous parent values).
    pub transitions: Vec<Cpt>,
    pub observation: ObservationModel,
}

pub fn discretize(spec: &CtbnSpec, obs: &ObservationModel, dt: f64) -> Result<TwoSliceDbn, ModelError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(ModelError::Param(format!("step must be positive, got {dt}")));
    }
    let transitions = (0..spec.len())
        .map(|v| spec.transition_cpt(v, dt))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TwoSliceDbn {
        dt,
        parents: spec.parents.clone(),
        transitions,
        observation: obs.clone(),
    })
}
