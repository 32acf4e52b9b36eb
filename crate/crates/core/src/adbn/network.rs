use super::supernode::{Supernode, UpdateReport};
use super::wire::Communication;
use super::{AdbnConfig, AdbnError, AdbnModel, SubnodeId};
use std::collections::VecDeque;
use std::sync::Arc;

/// All supernodes of a model with a FIFO inbox each. A communication sent
/// during an update is delivered when its recipient next updates.
#[derive(Debug, Clone)]
pub struct AdbnNetwork {
    model: Arc<AdbnModel>,
    nodes: Vec<Supernode>,
    inboxes: Vec<VecDeque<Communication>>,
    messages: u64,
    remote_messages: u64,
}

impl AdbnNetwork {
    pub fn new(model: AdbnModel, cfg: AdbnConfig) -> Self {
        let model = Arc::new(model);
        let n = model.n_supernodes();
        Self {
            nodes: (0..n).map(|s| Supernode::new(Arc::clone(&model), s, cfg.clone())).collect(),
            inboxes: vec![VecDeque::new(); n],
            model,
            messages: 0,
            remote_messages: 0,
        }
    }

    pub fn model(&self) -> &AdbnModel {
        &self.model
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn supernode(&self, s: usize) -> &Supernode {
        &self.nodes[s]
    }

    /// Messages computed so far by all supernodes.
    pub fn message_count(&self) -> u64 {
        self.messages
    }

    pub fn remote_message_count(&self) -> u64 {
        self.remote_messages
    }

    /// Communications waiting for supernode `s`.
    pub fn pending(&self, s: usize) -> usize {
        self.inboxes[s].len()
    }

    pub fn update(&mut self, s: usize, now: f64, readings: &[(usize, usize)]) -> Result<UpdateReport, AdbnError> {
        let inbox: Vec<Communication> = self.inboxes[s].drain(..).collect();
        let report = self.nodes[s].update(now, readings, inbox)?;
        for c in &report.communications {
            self.inboxes[c.recipient].push_back(c.clone());
        }
        self.messages += report.messages as u64;
        self.remote_messages += report.remote_messages as u64;
        Ok(report)
    }

    /// Reported belief of state variable `var` from its owner.
    pub fn report(&self, var: usize, offset: usize) -> Result<(SubnodeId, &[f64]), AdbnError> {
        if var >= self.model.n_state() {
            return Err(AdbnError::UnknownVariable(var));
        }
        self.nodes[self.model.owner_of(var)].report(var, offset)
    }
}
