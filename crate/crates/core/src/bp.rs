//! Pearl belief propagation: the π/λ message equations, a synchronous loopy
//! runner for static directed networks, and brute-force enumeration.

use crate::model::{config_count, Cpt};
use std::collections::{BTreeMap, VecDeque};
use thiserror::Error;

/// Largest joint state space [`exact_enumerate`] accepts.
pub const MAX_JOINT_STATES: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BpError {
    #[error("domain mismatch: {0}")]
    DomainMismatch(String),
    #[error("belief of node {0} is identically zero")]
    ZeroBelief(String),
    #[error("message from {0} is identically zero")]
    ZeroMessage(String),
    #[error("joint state space of {0} states is too large to enumerate")]
    TooLarge(usize),
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("evidence on node {node} has state {state} outside its domain")]
    BadEvidence { node: usize, state: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MessageKind {
    Pi,
    Lambda,
}

/// A π or λ message. For π_X(U) and λ_X(U) alike the values range over the
/// domain of the parent U.
#[derive(Debug, Clone, PartialEq)]
pub struct Message<Id> {
    pub kind: MessageKind,
    pub sender: Id,
    pub recipient: Id,
    pub values: Vec<f64>,
}

/// Observed state index per node.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Evidence(BTreeMap<usize, usize>);

impl Evidence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, node: usize, state: usize) -> &mut Self {
        self.0.insert(node, state);
        self
    }

    pub fn get(&self, node: usize) -> Option<usize> {
        self.0.get(&node).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.0.iter().map(|(&n, &s)| (n, s))
    }

    fn validate(&self, cards: &[usize]) -> Result<(), BpError> {
        for (node, state) in self.iter() {
            if node >= cards.len() || state >= cards[node] {
                return Err(BpError::BadEvidence { node, state });
            }
        }
        Ok(())
    }
}

impl FromIterator<(usize, usize)> for Evidence {
    fn from_iter<T: IntoIterator<Item = (usize, usize)>>(iter: T) -> Self {
        Self(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    pub node: usize,
    pub probs: Vec<f64>,
}

pub fn indicator(card: usize, state: usize) -> Vec<f64> {
    let mut v = vec![0.0; card];
    v[state] = 1.0;
    v
}

/// Scales `v` to sum to one.
pub fn normalize(v: &mut [f64]) -> bool {
    let s: f64 = v.iter().sum();
    if !(s > 0.0 && s.is_finite()) {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= s);
    true
}

/// Calls `f(config, values)` for every parent configuration in index order.
pub fn for_each_config(cards: &[usize], mut f: impl FnMut(usize, &[usize])) {
    let mut values = vec![0; cards.len()];
    for c in 0..config_count(cards) {
        f(c, &values);
        for (v, &card) in values.iter_mut().zip(cards).rev() {
            *v += 1;
            if *v < card {
                break;
            }
            *v = 0;
        }
    }
}

fn check_messages(cards: &[usize], msgs: &[&[f64]], skip: Option<usize>) -> Result<(), BpError> {
    if msgs.len() != cards.len() {
        return Err(BpError::DomainMismatch(format!(
            "{} messages for {} parents",
            msgs.len(),
            cards.len()
        )));
    }
    for (i, (m, &c)) in msgs.iter().zip(cards).enumerate() {
        if Some(i) != skip && m.len() != c {
            return Err(BpError::DomainMismatch(format!(
                "message {i} has {} entries, parent has {c} states",
                m.len()
            )));
        }
    }
    Ok(())
}

/// π(x): the indicator of the observed state, or Σ_u P(x|u) Π_i π_X(u_i).
pub fn pi_value(cpt: &Cpt, parent_pis: &[&[f64]], observed: Option<usize>) -> Result<Vec<f64>, BpError> {
    let n = cpt.child_card();
    if let Some(s) = observed {
        if s >= n {
            return Err(BpError::DomainMismatch(format!("observed state {s} of {n}")));
        }
        return Ok(indicator(n, s));
    }
    let cards = cpt.parent_cards();
    check_messages(cards, parent_pis, None)?;
    let mut out = vec![0.0; n];
    for_each_config(cards, |c, vals| {
        let w: f64 = vals.iter().zip(parent_pis).map(|(&v, m)| m[v]).product();
        if w != 0.0 {
            for (o, p) in out.iter_mut().zip(cpt.row(c)) {
                *o += w * p;
            }
        }
    });
    Ok(out)
}

/// λ(x): the indicator of the observed state, or Π_j λ_{Y_j}(x).
pub fn lambda_value(card: usize, child_lambdas: &[&[f64]], observed: Option<usize>) -> Result<Vec<f64>, BpError> {
    if let Some(s) = observed {
        if s >= card {
            return Err(BpError::DomainMismatch(format!("observed state {s} of {card}")));
        }
        return Ok(indicator(card, s));
    }
    let mut out = vec![1.0; card];
    for m in child_lambdas {
        if m.len() != card {
            return Err(BpError::DomainMismatch(format!(
                "λ message has {} entries, node has {card} states",
                m.len()
            )));
        }
        out.iter_mut().zip(m.iter()).for_each(|(o, v)| *o *= v);
    }
    Ok(out)
}

/// π_X(U) = π(u) Π λ_{V}(u) over the other children V of U.
pub fn pi_message(pi_u: &[f64], other_lambdas: &[&[f64]]) -> Result<Vec<f64>, BpError> {
    lambda_value(pi_u.len(), other_lambdas, None).map(|prod| {
        prod.iter().zip(pi_u).map(|(l, p)| l * p).collect()
    })
}

/// λ_Y(X) for the parent in slot `target`:
/// Σ_y λ(y) Σ_w P(y | x, w) Π π_Y(w_i), summing over co-parent values w.
/// `parent_pis[target]` is ignored.
pub fn lambda_message(cpt: &Cpt, lambda_y: &[f64], parent_pis: &[&[f64]], target: usize) -> Result<Vec<f64>, BpError> {
    let cards = cpt.parent_cards();
    if target >= cards.len() {
        return Err(BpError::DomainMismatch(format!("no parent slot {target}")));
    }
    if lambda_y.len() != cpt.child_card() {
        return Err(BpError::DomainMismatch(format!(
            "λ has {} entries, child has {} states",
            lambda_y.len(),
            cpt.child_card()
        )));
    }
    check_messages(cards, parent_pis, Some(target))?;
    let mut out = vec![0.0; cards[target]];
    for_each_config(cards, |c, vals| {
        let w: f64 = vals
            .iter()
            .zip(parent_pis)
            .enumerate()
            .filter(|&(i, _)| i != target)
            .map(|(_, (&v, m))| m[v])
            .product();
        if w != 0.0 {
            let s: f64 = cpt.row(c).iter().zip(lambda_y).map(|(p, l)| p * l).sum();
            out[vals[target]] += w * s;
        }
    });
    Ok(out)
}

/// Bel(x) = α π(x) λ(x).
pub fn belief(node: usize, pi: &[f64], lambda: &[f64]) -> Result<Belief, BpError> {
    if pi.len() != lambda.len() {
        return Err(BpError::DomainMismatch(format!(
            "π has {} entries, λ has {}",
            pi.len(),
            lambda.len()
        )));
    }
    let mut probs: Vec<f64> = pi.iter().zip(lambda).map(|(p, l)| p * l).collect();
    if !normalize(&mut probs) {
        return Err(BpError::ZeroBelief(node.to_string()));
    }
    Ok(Belief { node, probs })
}

/// Directed acyclic network of discrete variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    cards: Vec<usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    cpts: Vec<Cpt>,
}

impl Network {
    pub fn new(parents: Vec<Vec<usize>>, cpts: Vec<Cpt>) -> Result<Self, BpError> {
        let n = parents.len();
        if cpts.len() != n {
            return Err(BpError::InvalidNetwork(format!("{} CPTs for {n} nodes", cpts.len())));
        }
        let cards: Vec<usize> = cpts.iter().map(Cpt::child_card).collect();
        let mut children = vec![Vec::new(); n];
        for (x, ps) in parents.iter().enumerate() {
            for &u in ps {
                if u >= n || u == x {
                    return Err(BpError::InvalidNetwork(format!("bad parent {u} of {x}")));
                }
                if children[u].contains(&x) {
                    return Err(BpError::InvalidNetwork(format!("duplicate edge {u} -> {x}")));
                }
                children[u].push(x);
            }
            let want: Vec<usize> = ps.iter().map(|&u| cards[u]).collect();
            if cpts[x].parent_cards() != want.as_slice() {
                return Err(BpError::InvalidNetwork(format!("CPT of {x} does not match its parents")));
            }
        }
        let net = Self {
            cards,
            parents,
            children,
            cpts,
        };
        if net.topological_order().is_none() {
            return Err(BpError::InvalidNetwork("directed cycle".into()));
        }
        Ok(net)
    }

    pub fn len(&self) -> usize {
        self.cards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cards.is_empty()
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn parents(&self, x: usize) -> &[usize] {
        &self.parents[x]
    }

    pub fn children(&self, x: usize) -> &[usize] {
        &self.children[x]
    }

    pub fn cpt(&self, x: usize) -> &Cpt {
        &self.cpts[x]
    }

    pub fn edge_count(&self) -> usize {
        self.parents.iter().map(Vec::len).sum()
    }

    /// Replaces the CPT of `x` with one of the same shape.
    pub fn set_cpt(&mut self, x: usize, cpt: Cpt) -> Result<(), BpError> {
        let old = self
            .cpts
            .get(x)
            .ok_or_else(|| BpError::InvalidNetwork(format!("no node {x}")))?;
        if old.child_card() != cpt.child_card() || old.parent_cards() != cpt.parent_cards() {
            return Err(BpError::InvalidNetwork(format!("CPT of {x} changes shape")));
        }
        self.cpts[x] = cpt;
        Ok(())
    }

    fn topological_order(&self) -> Option<Vec<usize>> {
        let mut indeg: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut queue: VecDeque<usize> = (0..self.len()).filter(|&x| indeg[x] == 0).collect();
        let mut order = Vec::with_capacity(self.len());
        while let Some(x) = queue.pop_front() {
            order.push(x);
            for &c in &self.children[x] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        (order.len() == self.len()).then_some(order)
    }

    /// Longest shortest path in the undirected skeleton, in edges.
    pub fn diameter(&self) -> usize {
        let n = self.len();
        let mut best = 0;
        for s in 0..n {
            let mut dist = vec![usize::MAX; n];
            dist[s] = 0;
            let mut queue = VecDeque::from([s]);
            while let Some(x) = queue.pop_front() {
                for &y in self.parents[x].iter().chain(&self.children[x]) {
                    if dist[y] == usize::MAX {
                        dist[y] = dist[x] + 1;
                        queue.push_back(y);
                    }
                }
            }
            best = best.max(dist.iter().filter(|&&d| d != usize::MAX).copied().max().unwrap_or(0));
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LbpOptions {
    pub iterations: usize,
    /// Normalize every message after computing it.
    pub normalize: bool,
}

impl LbpOptions {
    pub fn new(iterations: usize) -> Self {
        Self {
            iterations,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbpResult {
    pub beliefs: Vec<Belief>,
    /// π and λ messages computed, two per edge per sweep.
    pub messages: usize,
}

/// Synchronous loopy BP. All messages start at all-ones; each sweep
/// recomputes every message from the previous sweep's values.
pub fn lbp_run(net: &Network, ev: &Evidence, opts: LbpOptions) -> Result<LbpResult, BpError> {
    if opts.iterations == 0 {
        return Err(BpError::InvalidNetwork("at least one iteration is required".into()));
    }
    ev.validate(&net.cards)?;
    // edge e = (parent, child, slot of parent in child's list)
    let mut edges = Vec::with_capacity(net.edge_count());
    let mut in_edges = vec![Vec::new(); net.len()];
    let mut out_edges = vec![Vec::new(); net.len()];
    for (x, ps) in net.parents.iter().enumerate() {
        for (slot, &u) in ps.iter().enumerate() {
            in_edges[x].push(edges.len());
            out_edges[u].push(edges.len());
            edges.push((u, x, slot));
        }
    }
    let mut pi_msgs: Vec<Vec<f64>> = edges.iter().map(|&(u, _, _)| vec![1.0; net.cards[u]]).collect();
    let mut lambda_msgs = pi_msgs.clone();
    let mut messages = 0;

    let node_pi = |x: usize, pi_msgs: &[Vec<f64>]| {
        let msgs: Vec<&[f64]> = in_edges[x].iter().map(|&e| pi_msgs[e].as_slice()).collect();
        pi_value(&net.cpts[x], &msgs, ev.get(x))
    };
    let node_lambda = |x: usize, lambda_msgs: &[Vec<f64>], except: Option<usize>| {
        let msgs: Vec<&[f64]> = out_edges[x]
            .iter()
            .filter(|&&e| Some(e) != except)
            .map(|&e| lambda_msgs[e].as_slice())
            .collect();
        lambda_value(net.cards[x], &msgs, ev.get(x))
    };
    let finish = |mut v: Vec<f64>, from: usize| -> Result<Vec<f64>, BpError> {
        if opts.normalize && !normalize(&mut v) {
            return Err(BpError::ZeroMessage(from.to_string()));
        }
        Ok(v)
    };

    for _ in 0..opts.iterations {
        let pis = (0..net.len())
            .map(|x| node_pi(x, &pi_msgs))
            .collect::<Result<Vec<_>, _>>()?;
        let lambdas = (0..net.len())
            .map(|x| node_lambda(x, &lambda_msgs, None))
            .collect::<Result<Vec<_>, _>>()?;
        let mut new_pi = Vec::with_capacity(edges.len());
        let mut new_lambda = Vec::with_capacity(edges.len());
        for (e, &(u, x, slot)) in edges.iter().enumerate() {
            let others = node_lambda(u, &lambda_msgs, Some(e))?;
            new_pi.push(finish(pi_message(&pis[u], &[&others])?, u)?);

            let msgs: Vec<&[f64]> = in_edges[x].iter().map(|&e| pi_msgs[e].as_slice()).collect();
            new_lambda.push(finish(lambda_message(&net.cpts[x], &lambdas[x], &msgs, slot)?, x)?);
            messages += 2;
        }
        pi_msgs = new_pi;
        lambda_msgs = new_lambda;
    }

    let beliefs = (0..net.len())
        .map(|x| belief(x, &node_pi(x, &pi_msgs)?, &node_lambda(x, &lambda_msgs, None)?))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LbpResult { beliefs, messages })
}

/// Exact posterior marginals by summing the full joint distribution.
pub fn exact_enumerate(net: &Network, ev: &Evidence) -> Result<Vec<Belief>, BpError> {
    ev.validate(&net.cards)?;
    let total: f64 = net.cards.iter().map(|&c| c as f64).product();
    if total > MAX_JOINT_STATES as f64 {
        return Err(BpError::TooLarge(total as usize));
    }
    let mut marginals: Vec<Vec<f64>> = net.cards.iter().map(|&c| vec![0.0; c]).collect();
    let mut z = 0.0;
    let mut parent_vals = Vec::new();
    for_each_config(&net.cards, |_, assign| {
        if ev.iter().any(|(n, s)| assign[n] != s) {
            return;
        }
        let mut p = 1.0;
        for x in 0..net.len() {
            parent_vals.clear();
            parent_vals.extend(net.parents[x].iter().map(|&u| assign[u]));
            p *= net.cpts[x].row_for(&parent_vals)[assign[x]];
            if p == 0.0 {
                return;
            }
        }
        z += p;
        for (m, &v) in marginals.iter_mut().zip(assign) {
            m[v] += p;
        }
    });
    if z <= 0.0 {
        return Err(BpError::ZeroBelief("evidence has zero probability".into()));
    }
    Ok(marginals
        .into_iter()
        .enumerate()
        .map(|(node, m)| Belief {
            node,
            probs: m.into_iter().map(|v| v / z).collect(),
        })
        .collect())
}
