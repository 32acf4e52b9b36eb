//! Asynchronous DBN monitoring. Each supernode owns one or more state
//! variables and keeps a bounded history of time-stamped subnodes per
//! variable. On every update it creates new subnodes, runs local inference
//! over its history using the messages stored from other supernodes, and
//! emits one communication per neighbour.

mod convert;
mod network;
mod store;
mod supernode;
mod wire;

pub use convert::{approach1_bindings, cpt_approach1, cpt_approach2, plan_approach2, Subperiod};
pub use network::AdbnNetwork;
pub use store::{MessageStore, SubnodeId};
pub use supernode::{Supernode, UpdateReport};
pub use wire::Communication;

use crate::bp::BpError;
use crate::model::{CtbnSpec, ModelError, ObservationModel};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdbnError {
    #[error("interval [{t_prev}, {t_now}] is not positive")]
    NonpositiveInterval { t_prev: f64, t_now: f64 },
    #[error("update at {now} does not follow the previous update at {last}")]
    ClockNotMonotone { last: f64, now: f64 },
    #[error("variable {0} has no subnodes")]
    EmptyHistory(usize),
    #[error("variable {0} is not owned by this supernode")]
    UnknownVariable(usize),
    #[error("layout error: {0}")]
    Layout(String),
    #[error("wire format error: {0}")]
    Wire(String),
    #[error(transparent)]
    Bp(#[from] BpError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// How the interval between two updates is turned into CPTs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    /// One CPT over the whole interval, parents at their latest known update.
    #[default]
    First,
    /// Split the interval at parent updates, with auxiliary subnodes.
    Second,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdbnConfig {
    /// Subnodes kept per variable; `None` keeps all of them.
    pub history: Option<usize>,
    pub approach: Approach,
    /// Reported subnode counted back from the newest one.
    pub reporting_offset: usize,
    /// Inference sweeps for supernodes owning several variables.
    pub local_sweeps: usize,
    /// Time of the implicit subnode holding each variable's initial distribution.
    pub start_time: f64,
}

impl Default for AdbnConfig {
    fn default() -> Self {
        Self {
            history: Some(2),
            approach: Approach::First,
            reporting_offset: 1,
            local_sweeps: 5,
            start_time: 0.0,
        }
    }
}

/// The monitored model together with its partition into supernodes.
///
/// Variable ids cover state variables `0..n` followed by one id per sensor.
#[derive(Debug, Clone)]
pub struct AdbnModel {
    pub spec: CtbnSpec,
    pub obs: ObservationModel,
    groups: Vec<Vec<usize>>,
    owner: Vec<usize>,
    hosted: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    neighbors: Vec<Vec<usize>>,
}

impl AdbnModel {
    /// One supernode per state variable.
    pub fn per_variable(spec: CtbnSpec, obs: ObservationModel) -> Result<Self, AdbnError> {
        let groups = (0..spec.len()).map(|v| vec![v]).collect();
        Self::new(spec, obs, groups)
    }

    /// Supernode `i` owns the state variables in `groups[i]`. Every state
    /// variable must appear exactly once. Sensors live with their first parent.
    pub fn new(spec: CtbnSpec, obs: ObservationModel, groups: Vec<Vec<usize>>) -> Result<Self, AdbnError> {
        obs.validate(&spec)?;
        let n = spec.len();
        let mut owner = vec![usize::MAX; n];
        for (g, vars) in groups.iter().enumerate() {
            if vars.is_empty() {
                return Err(AdbnError::Layout(format!("supernode {g} is empty")));
            }
            for &v in vars {
                if v >= n || owner[v] != usize::MAX {
                    return Err(AdbnError::Layout(format!("variable {v} assigned twice or unknown")));
                }
                owner[v] = g;
            }
        }
        if let Some(v) = owner.iter().position(|&o| o == usize::MAX) {
            return Err(AdbnError::Layout(format!("variable {v} has no supernode")));
        }
        let mut hosted = vec![Vec::new(); groups.len()];
        for (s, sensor) in obs.sensors.iter().enumerate() {
            hosted[owner[sensor.host()]].push(s);
        }
        let total = n + obs.sensors.len();
        let mut children = vec![Vec::new(); total];
        for c in 0..n {
            for &p in &spec.parents[c] {
                children[p].push(c);
            }
        }
        for (s, sensor) in obs.sensors.iter().enumerate() {
            for &p in &sensor.parents {
                children[p].push(n + s);
            }
        }
        let mut model = Self {
            spec,
            obs,
            groups,
            owner,
            hosted,
            children,
            neighbors: Vec::new(),
        };
        let mut neighbors = vec![std::collections::BTreeSet::new(); model.groups.len()];
        for v in 0..total {
            let a = model.owner_of(v);
            for &p in model.parents_of(v) {
                let b = model.owner_of(p);
                if a != b {
                    neighbors[a].insert(b);
                    neighbors[b].insert(a);
                }
            }
        }
        model.neighbors = neighbors.into_iter().map(|s| s.into_iter().collect()).collect();
        Ok(model)
    }

    pub fn n_state(&self) -> usize {
        self.spec.len()
    }

    pub fn n_supernodes(&self) -> usize {
        self.groups.len()
    }

    pub fn group(&self, s: usize) -> &[usize] {
        &self.groups[s]
    }

    /// Sensors whose readings are taken by supernode `s`.
    pub fn hosted(&self, s: usize) -> &[usize] {
        &self.hosted[s]
    }

    pub fn neighbors(&self, s: usize) -> &[usize] {
        &self.neighbors[s]
    }

    pub fn sensor_var(&self, sensor: usize) -> usize {
        self.n_state() + sensor
    }

    pub fn owner_of(&self, var: usize) -> usize {
        if var < self.n_state() {
            self.owner[var]
        } else {
            self.owner[self.obs.sensors[var - self.n_state()].host()]
        }
    }

    pub fn parents_of(&self, var: usize) -> &[usize] {
        if var < self.n_state() {
            &self.spec.parents[var]
        } else {
            &self.obs.sensors[var - self.n_state()].parents
        }
    }

    pub fn children_of(&self, var: usize) -> &[usize] {
        &self.children[var]
    }

    pub fn card(&self, var: usize) -> usize {
        if var < self.n_state() {
            self.spec.card(var)
        } else {
            self.obs.sensors[var - self.n_state()].card()
        }
    }
}
