//! Factored frontier filtering: the belief state is a product of per-variable
//! marginals, advanced one slice at a time by loopy belief propagation on
//! the two-slice network.

use crate::bp::{lbp_run, BpError, Evidence, LbpOptions, Network};
use crate::model::{CtbnSpec, Cpt, ModelError, TwoSliceDbn};
use crate::sim::{timed, BeliefLog, EventTrace, LogEntry};
use thiserror::Error;

pub const DEFAULT_LBP_ITERS: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FfError {
    #[error("invalid filter setting: {0}")]
    Config(String),
    #[error(transparent)]
    Bp(#[from] BpError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactoredState {
    pub time: f64,
    pub marginals: Vec<Vec<f64>>,
}

impl FactoredState {
    /// Initial distributions of every state variable at time 0.
    pub fn initial(spec: &CtbnSpec) -> Self {
        Self {
            time: 0.0,
            marginals: spec.variables.iter().map(|v| v.initial.clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfStep {
    pub state: FactoredState,
    pub messages: usize,
}

/// Reusable two-slice network. Nodes `0..n` hold the previous slice as
/// parentless priors, `n..2n` the current slice and `2n..` the sensors.
#[derive(Debug, Clone)]
pub struct FfFilter {
    dt: f64,
    n: usize,
    iters: usize,
    net: Network,
    state: FactoredState,
}

impl FfFilter {
    pub fn new(dbn: &TwoSliceDbn, state: FactoredState, lbp_iters: usize) -> Result<Self, FfError> {
        if lbp_iters == 0 {
            return Err(FfError::Config("at least one LBP iteration is required".into()));
        }
        let n = dbn.transitions.len();
        if state.marginals.len() != n || dbn.parents.len() != n {
            return Err(FfError::Config(format!(
                "{} marginals for {n} state variables",
                state.marginals.len()
            )));
        }
        let mut parents = Vec::with_capacity(2 * n + dbn.observation.sensors.len());
        let mut cpts = Vec::with_capacity(parents.capacity());
        for m in &state.marginals {
            parents.push(Vec::new());
            cpts.push(Cpt::prior(m)?);
        }
        for (v, cpt) in dbn.transitions.iter().enumerate() {
            let mut ps = vec![v];
            ps.extend(dbn.parents[v].iter().copied());
            parents.push(ps);
            cpts.push(cpt.clone());
        }
        for s in &dbn.observation.sensors {
            parents.push(s.parents.iter().map(|&p| n + p).collect());
            cpts.push(s.cpt.clone());
        }
        Ok(Self {
            dt: dbn.dt,
            n,
            iters: lbp_iters,
            net: Network::new(parents, cpts)?,
            state,
        })
    }

    pub fn state(&self) -> &FactoredState {
        &self.state
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    /// Messages computed by one step.
    pub fn messages_per_step(&self) -> usize {
        2 * self.iters * self.net.edge_count()
    }

    /// Advances one slice given `(sensor, state)` readings, returning the
    /// number of messages computed.
    pub fn step(&mut self, readings: &Evidence) -> Result<usize, FfError> {
        for (v, m) in self.state.marginals.iter().enumerate() {
            self.net.set_cpt(v, Cpt::prior(m)?)?;
        }
        let ev: Evidence = readings.iter().map(|(s, y)| (2 * self.n + s, y)).collect();
        let res = lbp_run(&self.net, &ev, LbpOptions::new(self.iters))?;
        for (v, b) in res.beliefs[self.n..2 * self.n].iter().enumerate() {
            self.state.marginals[v].clone_from(&b.probs);
        }
        self.state.time += self.dt;
        Ok(res.messages)
    }

    /// Steps at every `period`-th generating step of `trace` with the
    /// readings at that step; readings in between are not used.
    pub fn run(&mut self, trace: &EventTrace, period: usize, monitored: &[usize], labels: &[String]) -> Result<FfRun, FfError> {
        if period == 0 {
            return Err(FfError::Config("update period must be at least one step".into()));
        }
        let mut log = BeliefLog::new(labels.to_vec());
        let mut messages = 0u64;
        let mut update_nanos = Vec::new();
        for step in (period..trace.horizon()).step_by(period) {
            let ev: Evidence = trace.readings(step).iter().enumerate().map(|(s, &y)| (s, y as usize)).collect();
            let (done, ns) = timed(|| self.step(&ev));
            messages += done? as u64;
            update_nanos.push(ns);
            for &v in monitored {
                log.push(LogEntry {
                    step,
                    time: trace.time(step),
                    supernode: v,
                    var: v,
                    probs: self.state.marginals[v].clone(),
                    message_count: messages,
                });
            }
        }
        Ok(FfRun {
            log,
            messages,
            updates: update_nanos.len(),
            update_nanos,
        })
    }
}

/// One factored frontier step from `state` with sensor evidence `ev`.
pub fn ff_step(state: &FactoredState, dbn: &TwoSliceDbn, ev: &Evidence, lbp_iters: usize) -> Result<FfStep, FfError> {
    let mut f = FfFilter::new(dbn, state.clone(), lbp_iters)?;
    let messages = f.step(ev)?;
    Ok(FfStep {
        state: f.state,
        messages,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfRun {
    pub log: BeliefLog,
    pub messages: u64,
    pub updates: usize,
    /// Wall time of each update in nanoseconds.
    pub update_nanos: Vec<u64>,
}

/// Runs the filter every `period` generating steps of `trace`, using the
/// readings at each update step. `dbn` must be discretized at `period`
/// steps of the trace. Logs the marginals of `monitored` variables.
pub fn ff_run(
    dbn: &TwoSliceDbn,
    initial: FactoredState,
    trace: &EventTrace,
    period: usize,
    lbp_iters: usize,
    monitored: &[usize],
    labels: &[String],
) -> Result<FfRun, FfError> {
    let want = period as f64 * trace.dt();
    if (dbn.dt - want).abs() > 1e-9 * want {
        return Err(FfError::Config(format!(
            "network step {} does not match {period} trace steps ({want})",
            dbn.dt
        )));
    }
    FfFilter::new(dbn, initial, lbp_iters)?.run(trace, period, monitored, labels)
}
