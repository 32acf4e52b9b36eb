use super::convert::{approach1_bindings, cpt_approach1, cpt_approach2};
use super::store::{MessageStore, SubnodeId};
use super::wire::Communication;
use super::{AdbnConfig, AdbnError, AdbnModel, Approach};
use crate::bp::{self, BpError, Message, MessageKind};
use crate::model::Cpt;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

#[derive(Debug, Clone)]
struct Subnode {
    id: SubnodeId,
    cpt: Cpt,
    /// Local predecessor first, then one bound subnode per CTBN parent.
    parents: Vec<SubnodeId>,
    intermediate: bool,
    belief: Vec<f64>,
}

/// A sensor reading taken at an update, attached below its host subnode.
#[derive(Debug, Clone)]
struct Leaf {
    id: SubnodeId,
    sensor: usize,
    parents: Vec<SubnodeId>,
    reading: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateReport {
    /// One per neighbouring supernode, in ascending neighbour order.
    pub communications: Vec<Communication>,
    /// π and λ messages computed during the update.
    pub messages: usize,
    /// The subset of `messages` sent to other supernodes.
    pub remote_messages: usize,
}

#[derive(Debug, Clone)]
pub struct Supernode {
    id: usize,
    model: Arc<AdbnModel>,
    cfg: AdbnConfig,
    history: BTreeMap<usize, Vec<Subnode>>,
    leaves: Vec<Leaf>,
    store: MessageStore,
    /// Known update times of remote parents, ascending.
    known: BTreeMap<usize, Vec<f64>>,
    last_time: f64,
}

fn normalized(mut v: Vec<f64>, from: SubnodeId) -> Result<Vec<f64>, AdbnError> {
    if bp::normalize(&mut v) {
        Ok(v)
    } else {
        Err(BpError::ZeroMessage(from.to_string()).into())
    }
}

fn times(v: &[f64]) -> Vec<f64> {
    v.to_vec()
}

impl Supernode {
    pub fn new(model: Arc<AdbnModel>, id: usize, cfg: AdbnConfig) -> Self {
        let vars = model.group(id).to_vec();
        let local = |v: usize| model.owner_of(v) == id;
        let mut known = BTreeMap::new();
        let hosted = model.hosted(id).iter().map(|&s| model.sensor_var(s));
        for v in vars.iter().copied().chain(hosted) {
            for &p in model.parents_of(v) {
                if !local(p) {
                    known.insert(p, vec![cfg.start_time]);
                }
            }
        }
        Self {
            id,
            history: vars.iter().map(|&v| (v, Vec::new())).collect(),
            leaves: Vec::new(),
            store: MessageStore::new(),
            known,
            last_time: cfg.start_time,
            model,
            cfg,
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn vars(&self) -> &[usize] {
        self.model.group(self.id)
    }

    pub fn last_time(&self) -> f64 {
        self.last_time
    }

    pub fn store(&self) -> &MessageStore {
        &self.store
    }

    fn is_local(&self, var: usize) -> bool {
        self.model.owner_of(var) == self.id
    }

    /// Live subnodes of `var` in time order, with their intermediate flag.
    pub fn subnodes(&self, var: usize) -> Vec<(SubnodeId, bool)> {
        self.history
            .get(&var)
            .map(|h| h.iter().map(|s| (s.id, s.intermediate)).collect())
            .unwrap_or_default()
    }

    /// Parent subnodes of a live subnode: its local predecessor followed by
    /// one per CTBN parent.
    pub fn bindings(&self, id: SubnodeId) -> Option<&[SubnodeId]> {
        self.find(id).map(|s| s.parents.as_slice())
    }

    pub fn belief(&self, id: SubnodeId) -> Option<&[f64]> {
        self.find(id).map(|s| s.belief.as_slice())
    }

    fn find(&self, id: SubnodeId) -> Option<&Subnode> {
        self.history.get(&id.var())?.iter().find(|s| s.id == id)
    }

    /// The frozen π message into the oldest live subnode of `var` from its
    /// phased-out predecessor.
    pub fn tail_message(&self, var: usize) -> Option<&[f64]> {
        let first = self.history.get(&var)?.first()?;
        self.store.pi(first.id, first.parents[0])
    }

    /// Belief of the subnode `offset` places before the newest one, or of
    /// the oldest subnode when the history is shorter.
    pub fn report(&self, var: usize, offset: usize) -> Result<(SubnodeId, &[f64]), AdbnError> {
        let hist = self.history.get(&var).ok_or(AdbnError::UnknownVariable(var))?;
        let full: Vec<&Subnode> = hist.iter().filter(|s| !s.intermediate).collect();
        if full.is_empty() {
            return Err(AdbnError::EmptyHistory(var));
        }
        let s = full[full.len().saturating_sub(1 + offset)];
        Ok((s.id, &s.belief))
    }

    /// Reporting subnode under the configured offset.
    pub fn report_default(&self, var: usize) -> Result<(SubnodeId, &[f64]), AdbnError> {
        self.report(var, self.cfg.reporting_offset)
    }

    /// Runs one update at time `now` with the given `(sensor, state)`
    /// readings after taking in the delivered communications.
    pub fn update<I>(&mut self, now: f64, readings: &[(usize, usize)], inbox: I) -> Result<UpdateReport, AdbnError>
    where
        I: IntoIterator<Item = Communication>,
    {
        if !(now > self.last_time) || !now.is_finite() {
            return Err(AdbnError::ClockNotMonotone {
                last: self.last_time,
                now,
            });
        }
        for &(s, state) in readings {
            if !self.model.hosted(self.id).contains(&s) {
                return Err(AdbnError::UnknownVariable(self.model.sensor_var(s)));
            }
            if state >= self.model.obs.sensors[s].card() {
                return Err(BpError::BadEvidence {
                    node: self.model.sensor_var(s),
                    state,
                }
                .into());
            }
        }
        for c in inbox {
            self.receive(c);
        }
        self.create_subnodes(now)?;
        self.attach_leaves(now, readings);
        self.phase_out();
        let report = self.infer(now)?;
        self.prune(now);
        self.last_time = now;
        Ok(report)
    }

    fn receive(&mut self, c: Communication) {
        for m in c.messages {
            let var = m.sender.var();
            if let Some(tl) = self.known.get_mut(&var) {
                if tl.last().is_none_or(|&t| m.sender.time > t) {
                    tl.push(m.sender.time);
                }
            }
            self.store.insert(m.recipient, m.kind, m.sender, m.values);
        }
    }

    fn timeline(&self, var: usize) -> Vec<f64> {
        match self.known.get(&var) {
            Some(tl) => times(tl),
            None => std::iter::once(self.cfg.start_time)
                .chain(
                    self.history[&var]
                        .iter()
                        .filter(|s| !s.intermediate)
                        .map(|s| s.id.time),
                )
                .collect(),
        }
    }

    fn create_subnodes(&mut self, now: f64) -> Result<(), AdbnError> {
        let model = Arc::clone(&self.model);
        for &v in model.group(self.id) {
            let pred = self.history[&v]
                .last()
                .map(|s| s.id)
                .unwrap_or_else(|| SubnodeId::new(v, self.cfg.start_time));
            let parents = &model.spec.parents[v];
            let timelines: Vec<Vec<f64>> = parents.iter().map(|&p| self.timeline(p)).collect();
            let refs: Vec<&[f64]> = timelines.iter().map(Vec::as_slice).collect();
            let cims = &model.spec.cims[v];
            let cards = model.spec.parent_cards(v);
            let bind = |times: &[f64]| -> Vec<SubnodeId> {
                parents.iter().zip(times).map(|(&p, &t)| SubnodeId::new(p, t)).collect()
            };
            let mut new = Vec::new();
            match self.cfg.approach {
                Approach::First => {
                    let cpt = cpt_approach1(cims, &cards, pred.time, now)?;
                    let mut ps = vec![pred];
                    ps.extend(bind(&approach1_bindings(&refs, now)));
                    new.push(Subnode {
                        id: SubnodeId::new(v, now),
                        cpt,
                        parents: ps,
                        intermediate: false,
                        belief: Vec::new(),
                    });
                }
                Approach::Second => {
                    let mut prev = pred;
                    for (sp, cpt) in cpt_approach2(cims, &cards, pred.time, now, &refs)? {
                        let id = SubnodeId::new(v, sp.end);
                        let mut ps = vec![prev];
                        ps.extend(bind(&sp.bindings));
                        new.push(Subnode {
                            id,
                            cpt,
                            parents: ps,
                            intermediate: sp.intermediate,
                            belief: Vec::new(),
                        });
                        prev = id;
                    }
                }
            }
            self.history.get_mut(&v).expect("local variable").extend(new);
        }
        Ok(())
    }

    fn attach_leaves(&mut self, now: f64, readings: &[(usize, usize)]) {
        for &(s, reading) in readings {
            let sensor = &self.model.obs.sensors[s];
            let parents = sensor
                .parents
                .iter()
                .map(|&p| {
                    if self.is_local(p) {
                        SubnodeId::new(p, now)
                    } else {
                        let t = self.known[&p].last().copied().unwrap_or(self.cfg.start_time);
                        SubnodeId::new(p, t)
                    }
                })
                .collect();
            self.leaves.push(Leaf {
                id: SubnodeId::new(self.model.sensor_var(s), now),
                sensor: s,
                parents,
                reading,
            });
        }
    }

    /// Drops the oldest full subnode of each variable beyond the history
    /// bound, along with the auxiliary subnodes of the interval it opened.
    fn phase_out(&mut self) {
        let Some(k) = self.cfg.history else { return };
        let k = k.max(1);
        let mut dropped = BTreeSet::new();
        for hist in self.history.values_mut() {
            while hist.iter().filter(|s| !s.intermediate).count() > k {
                dropped.insert(hist.remove(0).id);
                while hist.first().is_some_and(|s| s.intermediate) {
                    dropped.insert(hist.remove(0).id);
                }
            }
        }
        if !dropped.is_empty() {
            self.leaves.retain(|l| !dropped.contains(&l.parents[0]));
        }
    }

    fn pis_for(&self, id: SubnodeId, parents: &[SubnodeId]) -> Vec<Vec<f64>> {
        parents
            .iter()
            .map(|&p| match self.store.pi(id, p) {
                Some(v) => v.to_vec(),
                None => self.model.spec.variables[p.var()].initial.clone(),
            })
            .collect()
    }

    fn lambda_of(&self, id: SubnodeId, card: usize, except: Option<SubnodeId>) -> Vec<f64> {
        let mut out = vec![1.0; card];
        for (s, v) in self.store.to(id, MessageKind::Lambda) {
            if Some(s) != except {
                out.iter_mut().zip(v).for_each(|(o, x)| *o *= x);
            }
        }
        out
    }

    fn pi_value(&self, node: &Subnode) -> Result<Vec<f64>, AdbnError> {
        let pis = self.pis_for(node.id, &node.parents);
        let refs: Vec<&[f64]> = pis.iter().map(Vec::as_slice).collect();
        Ok(bp::pi_value(&node.cpt, &refs, None)?)
    }

    fn lambda_to_parent(&self, id: SubnodeId, cpt: &Cpt, lambda: &[f64], parents: &[SubnodeId], slot: usize) -> Result<Vec<f64>, AdbnError> {
        let pis = self.pis_for(id, parents);
        let refs: Vec<&[f64]> = pis.iter().map(Vec::as_slice).collect();
        normalized(bp::lambda_message(cpt, lambda, &refs, slot)?, id)
    }

    fn leaf_cpt(&self, leaf: &Leaf) -> &Cpt {
        &self.model.obs.sensors[leaf.sensor].cpt
    }

    fn infer(&mut self, now: f64) -> Result<UpdateReport, AdbnError> {
        let mut order: Vec<(usize, usize)> = self
            .history
            .iter()
            .flat_map(|(&v, h)| (0..h.len()).map(move |i| (v, i)))
            .collect();
        order.sort_by(|a, b| {
            let ta = self.history[&a.0][a.1].id.time;
            let tb = self.history[&b.0][b.1].id.time;
            ta.total_cmp(&tb).then(a.0.cmp(&b.0))
        });
        let single = self.history.len() == 1;
        let sweeps = if single { 1 } else { self.cfg.local_sweeps.max(1) };
        let mut local_children: BTreeMap<SubnodeId, Vec<SubnodeId>> = BTreeMap::new();
        for &(v, i) in &order {
            let node = &self.history[&v][i];
            for &p in &node.parents {
                local_children.entry(p).or_default().push(node.id);
            }
        }
        if !single {
            for leaf in &self.leaves {
                for &p in &leaf.parents {
                    if self.is_local(p.var()) {
                        local_children.entry(p).or_default().push(leaf.id);
                    }
                }
            }
        }
        let mut count = 0;

        for _ in 0..sweeps {
            for li in 0..self.leaves.len() {
                let leaf = &self.leaves[li];
                let lambda = bp::indicator(self.model.card(leaf.id.var()), leaf.reading);
                let mut sends = Vec::new();
                for (j, &p) in leaf.parents.iter().enumerate() {
                    if self.is_local(p.var()) {
                        let m = self.lambda_to_parent(leaf.id, self.leaf_cpt(leaf), &lambda, &leaf.parents, j)?;
                        sends.push((p, m));
                    }
                }
                for (p, m) in sends {
                    self.store.insert(p, MessageKind::Lambda, leaf.id, m);
                    count += 1;
                }
            }
            for &(v, i) in &order {
                let node = &self.history[&v][i];
                let pi = self.pi_value(node)?;
                let id = node.id;
                let card = pi.len();
                for &c in local_children.get(&id).map(Vec::as_slice).unwrap_or(&[]) {
                    let others = self.lambda_of(id, card, Some(c));
                    let m = normalized(pi.iter().zip(&others).map(|(a, b)| a * b).collect(), id)?;
                    self.store.insert(c, MessageKind::Pi, id, m);
                    count += 1;
                }
            }
            for &(v, i) in order.iter().rev() {
                let node = &self.history[&v][i];
                let lambda = self.lambda_of(node.id, node.cpt.child_card(), None);
                let mut sends = Vec::new();
                for (j, &p) in node.parents.iter().enumerate() {
                    if self.is_local(p.var()) {
                        sends.push((p, self.lambda_to_parent(node.id, &node.cpt, &lambda, &node.parents, j)?));
                    }
                }
                let id = node.id;
                for (p, m) in sends {
                    self.store.insert(p, MessageKind::Lambda, id, m);
                    count += 1;
                }
            }
        }

        // Final pass: beliefs and every message leaving the supernode.
        let mut out: Vec<Message<SubnodeId>> = Vec::new();
        let mut pis: BTreeMap<SubnodeId, Vec<f64>> = BTreeMap::new();
        let mut beliefs = Vec::with_capacity(order.len());
        for &(v, i) in &order {
            let node = &self.history[&v][i];
            let pi = self.pi_value(node)?;
            let lambda = self.lambda_of(node.id, pi.len(), None);
            let bel = bp::belief(node.id.var(), &pi, &lambda)
                .map_err(|_| BpError::ZeroBelief(node.id.to_string()))?;
            beliefs.push(bel.probs);
            pis.insert(node.id, pi);
        }

        for li in 0..self.leaves.len() {
            let leaf = &self.leaves[li];
            let mut local_pis = Vec::new();
            for &p in &leaf.parents {
                if let Some(pi) = pis.get(&p) {
                    let others = self.lambda_of(p, pi.len(), Some(leaf.id));
                    let m = normalized(pi.iter().zip(&others).map(|(a, b)| a * b).collect(), p)?;
                    local_pis.push((p, m));
                }
            }
            let id = leaf.id;
            for (p, m) in local_pis {
                self.store.insert(id, MessageKind::Pi, p, m);
                count += 1;
            }
            let leaf = &self.leaves[li];
            let lambda = bp::indicator(self.model.card(leaf.id.var()), leaf.reading);
            for (j, &p) in leaf.parents.iter().enumerate() {
                if !self.is_local(p.var()) {
                    let values = self.lambda_to_parent(leaf.id, self.leaf_cpt(leaf), &lambda, &leaf.parents, j)?;
                    out.push(Message {
                        kind: MessageKind::Lambda,
                        sender: leaf.id,
                        recipient: p,
                        values,
                    });
                }
            }
        }

        let mut own_pending = Vec::new();
        for &(v, i) in &order {
            let hist = &self.history[&v];
            let node = &hist[i];
            if node.intermediate {
                continue;
            }
            let id = node.id;
            let pi = &pis[&id];
            let lambda = self.lambda_of(id, pi.len(), None);
            for (j, &p) in node.parents.iter().enumerate() {
                if !self.is_local(p.var()) {
                    let values = self.lambda_to_parent(id, &node.cpt, &lambda, &node.parents, j)?;
                    out.push(Message {
                        kind: MessageKind::Lambda,
                        sender: id,
                        recipient: p,
                        values,
                    });
                }
            }
            let remote_children: Vec<SubnodeId> = self
                .store
                .to(id, MessageKind::Lambda)
                .map(|(s, _)| s)
                .filter(|s| !self.is_local(s.var()))
                .collect();
            for c in remote_children {
                let others = self.lambda_of(id, pi.len(), Some(c));
                let values = normalized(pi.iter().zip(&others).map(|(a, b)| a * b).collect(), id)?;
                out.push(Message {
                    kind: MessageKind::Pi,
                    sender: id,
                    recipient: c,
                    values,
                });
            }
            let newest = hist.iter().rev().find(|s| !s.intermediate).map(|s| s.id) == Some(id);
            if newest {
                let full = normalized(pi.iter().zip(&lambda).map(|(a, b)| a * b).collect(), id)?;
                for &cv in self.model.children_of(v) {
                    if !self.is_local(cv) {
                        out.push(Message {
                            kind: MessageKind::Pi,
                            sender: id,
                            recipient: SubnodeId::pending(cv),
                            values: full.clone(),
                        });
                    }
                }
                own_pending.push((SubnodeId::pending(v), id, full));
            }
        }
        for (r, s, m) in own_pending {
            self.store.insert(r, MessageKind::Pi, s, m);
            count += 1;
        }

        for (&(v, i), bel) in order.iter().zip(beliefs) {
            self.history.get_mut(&v).expect("local variable")[i].belief = bel;
        }

        let remote = out.len();
        let mut by_recipient: BTreeMap<usize, Vec<Message<SubnodeId>>> = BTreeMap::new();
        for m in out {
            by_recipient
                .entry(self.model.owner_of(m.recipient.var()))
                .or_default()
                .push(m);
        }
        let communications = self
            .model
            .neighbors(self.id)
            .iter()
            .map(|&nb| Communication {
                sender: self.id,
                recipient: nb,
                time: now,
                messages: by_recipient.remove(&nb).unwrap_or_default(),
            })
            .collect();
        debug_assert!(by_recipient.is_empty());
        Ok(UpdateReport {
            communications,
            messages: count + remote,
            remote_messages: remote,
        })
    }

    fn prune(&mut self, now: f64) {
        let mut live = BTreeSet::new();
        let mut bound = BTreeSet::new();
        let mut newest = BTreeMap::new();
        for (&v, hist) in &self.history {
            for s in hist {
                live.insert(s.id);
                bound.extend(s.parents.iter().copied());
            }
            if let Some(s) = hist.iter().rev().find(|s| !s.intermediate) {
                newest.insert(v, s.id);
            }
        }
        for l in &self.leaves {
            live.insert(l.id);
            bound.extend(l.parents.iter().copied());
        }
        let model = &self.model;
        let id = self.id;
        let known = &self.known;
        self.store.retain(|r, _, s| {
            if r.is_pending() {
                if model.owner_of(s.var()) == id {
                    newest.get(&s.var()) == Some(&s)
                } else {
                    bound.contains(&s) || known.get(&s.var()).and_then(|tl| tl.last()) == Some(&s.time)
                }
            } else {
                live.contains(&r)
            }
        });
        for tl in self.known.values_mut() {
            if let Some(i) = tl.iter().rposition(|&t| t <= now) {
                tl.drain(..i);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bp::{exact_enumerate, Evidence, Network};
    use crate::linalg::{matrix_exp, IntensityMatrix};
    use crate::model::{CtbnSpec, ObservationModel, SensorSpec, VariableSpec};
    use crate::adbn::AdbnNetwork;

    fn q(a: f64, b: f64) -> IntensityMatrix {
        IntensityMatrix::from_off_diagonal(&[vec![0.0, a], vec![b, 0.0]]).unwrap()
    }

    fn binary(name: &str, p1: f64) -> VariableSpec {
        VariableSpec::new(name, &["off", "on"], &[1.0 - p1, p1])
    }

    fn sensor(name: &str, host: usize, acc: f64) -> SensorSpec {
        SensorSpec {
            name: name.into(),
            states: vec!["off".into(), "on".into()],
            parents: vec![host],
            cpt: Cpt::new(2, vec![2], vec![acc, 1.0 - acc, 1.0 - acc, acc]).unwrap(),
        }
    }

    /// Binary chain v0 -> v1 -> ... where each child tends to follow its parent.
    fn chain(n: usize, sensed: &[(usize, f64)]) -> AdbnModel {
        let vars = (0..n).map(|i| binary(&format!("V{i}"), 0.3)).collect();
        let parents = (0..n).map(|i| if i == 0 { vec![] } else { vec![i - 1] }).collect();
        let cims = (0..n)
            .map(|i| if i == 0 { vec![q(0.4, 0.6)] } else { vec![q(0.2, 1.5), q(1.3, 0.1)] })
            .collect();
        let spec = CtbnSpec::new(vars, parents, cims).unwrap();
        let obs = ObservationModel {
            sensors: sensed.iter().map(|&(h, acc)| sensor(&format!("S{h}"), h, acc)).collect(),
        };
        AdbnModel::per_variable(spec, obs).unwrap()
    }

    fn cfg(history: Option<usize>, start_time: f64) -> AdbnConfig {
        AdbnConfig {
            history,
            start_time,
            ..AdbnConfig::default()
        }
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn isolated_symmetric_variable_stays_uniform() {
        let spec = CtbnSpec::new(vec![binary("X", 0.5)], vec![vec![]], vec![vec![q(0.7, 0.7)]]).unwrap();
        let model = Arc::new(AdbnModel::per_variable(spec, ObservationModel::default()).unwrap());
        let mut s = Supernode::new(model, 0, AdbnConfig::default());
        assert!(matches!(s.report(0, 0), Err(AdbnError::EmptyHistory(0))));
        for t in 1..6 {
            let r = s.update(t as f64 * 0.3, &[], vec![]).unwrap();
            assert!(r.communications.is_empty());
            assert!(close(s.report(0, 0).unwrap().1, &[0.5, 0.5], 1e-12));
        }
    }

    #[test]
    fn single_variable_matches_fixed_interval_smoothing() {
        // With one sensed variable the history is a chain; the belief of each
        // subnode is the smoothed posterior given every reading so far.
        let spec = CtbnSpec::new(vec![binary("X", 0.2)], vec![vec![]], vec![vec![q(0.5, 0.8)]]).unwrap();
        let obs = ObservationModel {
            sensors: vec![sensor("S", 0, 0.8)],
        };
        let model = Arc::new(AdbnModel::per_variable(spec, obs).unwrap());
        let mut s = Supernode::new(model, 0, cfg(None, 0.0));
        let times = [0.4, 0.9, 1.7, 2.0, 3.1];
        let ys = [1, 1, 0, 1, 0];
        let e = [[0.8, 0.2], [0.2, 0.8]];
        let mut prev = 0.0;
        let mut trans = Vec::new();
        for (&t, &y) in times.iter().zip(&ys) {
            s.update(t, &[(0, y)], vec![]).unwrap();
            trans.push(matrix_exp(&q(0.5, 0.8), t - prev).unwrap());
            prev = t;
        }
        let n = times.len();
        let mut alpha = vec![[0.0; 2]; n];
        let mut p = [0.8, 0.2];
        for k in 0..n {
            for j in 0..2 {
                alpha[k][j] = (0..2).map(|i| p[i] * trans[k].get(i, j)).sum::<f64>() * e[ys[k]][j];
            }
            let z: f64 = alpha[k].iter().sum();
            alpha[k].iter_mut().for_each(|a| *a /= z);
            p = alpha[k];
        }
        let mut beta = [1.0, 1.0];
        for k in (0..n).rev() {
            let mut post = [alpha[k][0] * beta[0], alpha[k][1] * beta[1]];
            let z = post[0] + post[1];
            post.iter_mut().for_each(|a| *a /= z);
            let id = SubnodeId::new(0, times[k]);
            assert!(close(s.belief(id).unwrap(), &post, 1e-12), "{k}");
            let mut nb = [0.0; 2];
            for i in 0..2 {
                nb[i] = (0..2).map(|j| trans[k].get(i, j) * e[ys[k]][j] * beta[j]).sum();
            }
            beta = nb;
        }
    }

    /// Schedule of (supernode, time) pairs with optional reading of sensor 0.
    type Event = (usize, f64, Option<usize>);

    fn run(model: AdbnModel, c: AdbnConfig, events: &[Event]) -> AdbnNetwork {
        let mut net = AdbnNetwork::new(model, c);
        for &(s, t, y) in events {
            let readings: Vec<(usize, usize)> = y.map(|y| (0, y)).into_iter().collect();
            net.update(s, t, &readings).unwrap();
        }
        net
    }

    #[test]
    fn two_variable_chain_matches_exact_posterior() {
        // A -> B with a perfect sensor on B, updates alternating. The unrolled
        // network is exact for message passing once B is observed.
        let model = chain(2, &[(1, 1.0)]);
        let ys = [1, 1, 0, 1];
        let mut events = Vec::new();
        for k in 0..4 {
            events.push((0, 2.0 * k as f64, None));
            events.push((1, 2.0 * k as f64 + 1.0, Some(ys[k])));
        }
        for k in 4..9 {
            events.push((0, 2.0 * k as f64, None));
            events.push((1, 2.0 * k as f64 + 1.0, None));
        }
        let net = run(model.clone(), cfg(None, -1.0), &events);

        // Oracle nodes: a_s, a0, a2, a4, a6, b_s, b1, b3, b5, b7, y1, y3, y5, y7.
        let spec = &model.spec;
        let a = |dt| Cpt::from_cims(&spec.cims[0], &[], dt).unwrap();
        let b = |dt| Cpt::from_cims(&spec.cims[1], &[2], dt).unwrap();
        let mut parents = vec![vec![], vec![0], vec![1], vec![2], vec![3]];
        let mut cpts = vec![Cpt::prior(&spec.variables[0].initial).unwrap(), a(1.0), a(2.0), a(2.0), a(2.0)];
        parents.push(vec![]);
        cpts.push(Cpt::prior(&spec.variables[1].initial).unwrap());
        for k in 0..4 {
            parents.push(vec![5 + k, 1 + k]);
            cpts.push(b(2.0));
        }
        let mut ev = Evidence::new();
        for k in 0..4 {
            parents.push(vec![6 + k]);
            cpts.push(model.obs.sensors[0].cpt.clone());
            ev.observe(10 + k, ys[k]);
        }
        let exact = exact_enumerate(&Network::new(parents, cpts).unwrap(), &ev).unwrap();
        for k in 0..4 {
            let a_k = net.supernode(0).belief(SubnodeId::new(0, 2.0 * k as f64)).unwrap();
            assert!(close(a_k, &exact[1 + k].probs, 1e-9), "a{k}: {a_k:?} vs {:?}", exact[1 + k].probs);
            let b_k = net.supernode(1).belief(SubnodeId::new(1, 2.0 * k as f64 + 1.0)).unwrap();
            assert!(close(b_k, &exact[6 + k].probs, 1e-9));
        }
    }

    fn figure6(reading_c5: usize) -> Vec<(f64, Vec<f64>)> {
        // A -> B -> C, sensor on C. A at 0,3,6,8; B at 1,4,7; C at 2,5.
        let model = chain(3, &[(2, 1.0)]);
        let mut net = AdbnNetwork::new(model, cfg(Some(8), -1.0));
        let events = [(0, 0.0), (1, 1.0), (2, 2.0), (0, 3.0), (1, 4.0), (2, 5.0), (0, 6.0), (1, 7.0), (0, 8.0)];
        let a6 = SubnodeId::new(0, 6.0);
        let mut seen = Vec::new();
        for (s, t) in events {
            let readings = match (s, t) {
                (2, 2.0) => vec![(0, 0)],
                (2, _) => vec![(0, reading_c5)],
                _ => vec![],
            };
            net.update(s, t, &readings).unwrap();
            if let Some(b) = net.supernode(0).belief(a6) {
                seen.push((t, b.to_vec()));
            }
        }
        seen
    }

    #[test]
    fn evidence_reaches_a_after_two_hops() {
        let cold = figure6(0);
        let hot = figure6(1);
        assert_eq!(cold.len(), 3);
        // after A's update at 6 and B's update at 7, A^(6) is unchanged
        for i in 0..2 {
            assert_eq!(cold[i], hot[i]);
        }
        // A's update at 8 brings the reading of C^(5) through B^(7)
        assert_eq!(cold[2].0, 8.0);
        assert!(hot[2].1[1] > cold[2].1[1]);
        assert!(hot[2].1[1] > hot[1].1[1]);
    }

    #[test]
    fn history_is_bounded_and_tail_is_kept() {
        let model = chain(2, &[(1, 0.9)]);
        let mut net = AdbnNetwork::new(model, cfg(Some(2), 0.0));
        let mut store_sizes = Vec::new();
        for k in 1..60 {
            let t = k as f64 * 0.5;
            net.update(0, t, &[]).unwrap();
            net.update(1, t + 0.25, &[(0, k % 2)]).unwrap();
            for s in 0..2 {
                let node = net.supernode(s);
                let subs = node.subnodes(s);
                assert!(subs.len() <= 2);
                if k >= 3 {
                    let tail = node.tail_message(s).expect("tail message");
                    assert!((tail.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
            store_sizes.push(net.supernode(0).store().len() + net.supernode(1).store().len());
        }
        let late = &store_sizes[10..];
        assert!(late.iter().all(|&n| n == late[0]), "{store_sizes:?}");
    }

    #[test]
    fn work_per_update_is_constant() {
        let model = chain(3, &[(0, 0.9), (1, 0.9), (2, 0.9)]);
        let mut net = AdbnNetwork::new(model, cfg(Some(3), 0.0));
        let mut counts = vec![Vec::new(); 3];
        for k in 1..40 {
            for s in 0..3 {
                let r = net.update(s, k as f64 + 0.1 * s as f64, &[(s, (k + s) % 2)]).unwrap();
                assert_eq!(r.communications.len(), net.model().neighbors(s).len());
                for c in &r.communications {
                    assert_eq!(c.sender, s);
                    assert!(c.messages.iter().all(|m| net.model().owner_of(m.recipient.var()) == c.recipient));
                }
                counts[s].push(r.messages);
            }
        }
        for c in &counts {
            let late = &c[10..];
            assert!(late.iter().all(|&n| n == late[0]), "{c:?}");
        }
        // the middle variable has one parent edge and one child edge
        assert!(counts[1][20] > counts[0][20]);
    }

    #[test]
    fn identical_schedules_give_identical_beliefs() {
        let events: Vec<Event> = (1..30)
            .flat_map(|k| [(0, k as f64, None), (1, k as f64 + 0.5, Some(k % 3 / 2))])
            .collect();
        let a = run(chain(2, &[(1, 0.85)]), cfg(Some(2), 0.0), &events);
        let b = run(chain(2, &[(1, 0.85)]), cfg(Some(2), 0.0), &events);
        for v in 0..2 {
            assert_eq!(a.report(v, 1).unwrap(), b.report(v, 1).unwrap());
        }
        assert_eq!(a.message_count(), b.message_count());
    }

    #[test]
    fn second_approach_adds_auxiliary_subnodes() {
        let model = chain(2, &[(1, 0.9)]);
        let c2 = AdbnConfig {
            approach: Approach::Second,
            ..cfg(Some(2), 0.0)
        };
        // B at 0.5, then A at 1, 2, 3, then B at 4.
        let events: Vec<Event> = vec![(0, 0.2, None), (1, 0.5, Some(1)), (0, 1.0, None), (0, 2.0, None), (0, 3.0, None), (1, 4.0, Some(0))];
        let net = run(model.clone(), c2.clone(), &events);
        let subs = net.supernode(1).subnodes(1);
        let times: Vec<(f64, bool)> = subs.iter().map(|(id, i)| (id.time, *i)).collect();
        // A^(0.2) also splits the first interval from the start time
        assert_eq!(times, vec![(0.2, true), (0.5, false), (1.0, true), (2.0, true), (3.0, true), (4.0, false)]);
        let b4 = net.supernode(1).bindings(SubnodeId::new(1, 4.0)).unwrap();
        assert_eq!(b4, &[SubnodeId::new(1, 3.0), SubnodeId::new(0, 3.0)]);
        let b1 = net.supernode(1).bindings(SubnodeId::new(1, 1.0)).unwrap();
        assert_eq!(b1, &[SubnodeId::new(1, 0.5), SubnodeId::new(0, 0.2)]);
        assert_eq!(net.report(1, 0).unwrap().0, SubnodeId::new(1, 4.0));
        assert_eq!(net.report(1, 1).unwrap().0, SubnodeId::new(1, 0.5));

        // without parent updates inside any interval both approaches coincide
        let events: Vec<Event> = (1..12)
            .flat_map(|k| [(0, k as f64, None), (1, k as f64, Some(k % 2))])
            .collect();
        let first = run(model.clone(), cfg(Some(2), 0.0), &events);
        let second = run(model, c2, &events);
        for v in 0..2 {
            assert_eq!(first.report(v, 1).unwrap(), second.report(v, 1).unwrap());
        }
    }

    #[test]
    fn invalid_updates_are_rejected() {
        let model = Arc::new(chain(2, &[(1, 0.9)]));
        let mut s = Supernode::new(Arc::clone(&model), 1, AdbnConfig::default());
        s.update(1.0, &[(0, 1)], vec![]).unwrap();
        assert!(matches!(s.update(1.0, &[], vec![]), Err(AdbnError::ClockNotMonotone { .. })));
        assert!(s.update(2.0, &[(0, 5)], vec![]).is_err());
        assert!(matches!(s.update(2.0, &[(3, 0)], vec![]), Err(AdbnError::UnknownVariable(_))));
        assert!(matches!(s.report(0, 0), Err(AdbnError::UnknownVariable(0))));
        assert_eq!(s.report(1, 9).unwrap().0, SubnodeId::new(1, 1.0));
    }
}
