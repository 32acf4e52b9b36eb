use crate::bp::MessageKind;
use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};
use std::ops::Bound;

/// A subnode: variable `var` instantiated at `time`. Sensor variables are
/// numbered after the state variables. An infinite time denotes the not yet
/// created next subnode of `var` (see [`SubnodeId::pending`]).
#[derive(Debug, Clone, Copy)]
pub struct SubnodeId {
    pub var: u32,
    pub time: f64,
}

impl SubnodeId {
    pub const MIN: Self = Self {
        var: 0,
        time: f64::NEG_INFINITY,
    };
    pub const MAX: Self = Self {
        var: u32::MAX,
        time: f64::INFINITY,
    };

    pub fn new(var: usize, time: f64) -> Self {
        Self {
            var: var as u32,
            time,
        }
    }

    /// Placeholder recipient for messages addressed to whichever subnode of
    /// `var` is created next.
    pub fn pending(var: usize) -> Self {
        Self::new(var, f64::INFINITY)
    }

    pub fn is_pending(&self) -> bool {
        self.time == f64::INFINITY
    }

    pub fn var(&self) -> usize {
        self.var as usize
    }
}

impl PartialEq for SubnodeId {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for SubnodeId {}

impl Hash for SubnodeId {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.var.hash(state);
        self.time.to_bits().hash(state);
    }
}

impl PartialOrd for SubnodeId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SubnodeId {
    fn cmp(&self, other: &Self) -> Ordering {
        self.var
            .cmp(&other.var)
            .then_with(|| self.time.total_cmp(&other.time))
    }
}

impl std::fmt::Display for SubnodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_pending() {
            write!(f, "{}^(next)", self.var)
        } else {
            write!(f, "{}^({})", self.var, self.time)
        }
    }
}

type Key = (SubnodeId, MessageKind, SubnodeId);

/// Messages held by their recipient, latest value per
/// (recipient, kind, sender).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MessageStore {
    map: BTreeMap<Key, Vec<f64>>,
}

impl MessageStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn insert(&mut self, recipient: SubnodeId, kind: MessageKind, sender: SubnodeId, values: Vec<f64>) {
        self.map.insert((recipient, kind, sender), values);
    }

    pub fn get(&self, recipient: SubnodeId, kind: MessageKind, sender: SubnodeId) -> Option<&[f64]> {
        self.map.get(&(recipient, kind, sender)).map(Vec::as_slice)
    }

    /// π message from `sender` to `recipient`, falling back to one addressed
    /// to the pending subnode of the recipient's variable.
    pub fn pi(&self, recipient: SubnodeId, sender: SubnodeId) -> Option<&[f64]> {
        self.get(recipient, MessageKind::Pi, sender)
            .or_else(|| self.get(SubnodeId::pending(recipient.var()), MessageKind::Pi, sender))
    }

    /// All stored messages of `kind` addressed to `recipient`, by sender.
    pub fn to(&self, recipient: SubnodeId, kind: MessageKind) -> impl Iterator<Item = (SubnodeId, &[f64])> {
        self.map
            .range((
                Bound::Included((recipient, kind, SubnodeId::MIN)),
                Bound::Included((recipient, kind, SubnodeId::MAX)),
            ))
            .map(|((_, _, s), v)| (*s, v.as_slice()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (SubnodeId, MessageKind, SubnodeId, &[f64])> {
        self.map.iter().map(|((r, k, s), v)| (*r, *k, *s, v.as_slice()))
    }

    pub fn retain(&mut self, mut keep: impl FnMut(SubnodeId, MessageKind, SubnodeId) -> bool) {
        self.map.retain(|(r, k, s), _| keep(*r, *k, *s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn ids_order_by_var_then_time() {
        let a = SubnodeId::new(1, 2.0);
        let b = SubnodeId::new(1, 3.5);
        let c = SubnodeId::new(2, -1.0);
        assert!(a < b && b < c);
        assert!(b < SubnodeId::pending(1));
        assert!(SubnodeId::MIN < a && c < SubnodeId::MAX);
        let set: HashSet<_> = [a, b, SubnodeId::new(1, 2.0)].into_iter().collect();
        assert_eq!(set.len(), 2);
    }

    #[test]
    fn range_and_pending_lookup() {
        let mut s = MessageStore::new();
        let x = SubnodeId::new(0, 1.0);
        let u = SubnodeId::new(1, 0.5);
        let y1 = SubnodeId::new(2, 1.5);
        let y2 = SubnodeId::new(3, 1.2);
        s.insert(x, MessageKind::Lambda, y1, vec![0.2, 0.8]);
        s.insert(x, MessageKind::Lambda, y2, vec![0.5, 0.5]);
        s.insert(SubnodeId::pending(0), MessageKind::Pi, u, vec![0.9, 0.1]);
        let lambdas: Vec<_> = s.to(x, MessageKind::Lambda).map(|(id, _)| id).collect();
        assert_eq!(lambdas, vec![y1, y2]);
        assert_eq!(s.to(x, MessageKind::Pi).count(), 0);
        assert_eq!(s.pi(x, u), Some(&[0.9, 0.1][..]));
        s.insert(x, MessageKind::Pi, u, vec![0.6, 0.4]);
        assert_eq!(s.pi(x, u), Some(&[0.6, 0.4][..]));
        s.retain(|r, _, _| !r.is_pending());
        assert_eq!(s.len(), 3);
    }
}
