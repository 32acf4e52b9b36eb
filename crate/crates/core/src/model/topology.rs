//! Room adjacency graphs.

use super::ModelError;
use std::collections::{BTreeSet, HashMap, VecDeque};

/// Hand-authored 58-room layout. It approximates the experimental floor
/// plan; the exact adjacency of that plan is not available.
const ROOMS58: &str = include_str!("../../data/rooms58.edges");

/// Undirected room graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub names: Vec<String>,
    /// Each edge stored once with `a < b`.
    pub edges: Vec<(usize, usize)>,
}

impl Topology {
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, ModelError> {
        let names = (0..n).map(|i| i.to_string()).collect();
        Self::new(names, edges)
    }

    fn new(names: Vec<String>, edges: &[(usize, usize)]) -> Result<Self, ModelError> {
        let n = names.len();
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a >= n || b >= n || a == b {
                return Err(ModelError::Topology(format!("bad edge ({a}, {b})")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let t = Self {
            names,
            edges: set.into_iter().collect(),
        };
        t.check_connected()?;
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Sorted neighbor list of `room`.
    pub fn neighbors(&self, room: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == room {
                    Some(b)
                } else if b == room {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    fn check_connected(&self) -> Result<(), ModelError> {
        let n = self.len();
        if n == 0 {
            return Err(ModelError::Topology("no rooms".into()));
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(r) = queue.pop_front() {
            for m in self.neighbors(r) {
                if !seen[m] {
                    seen[m] = true;
                    queue.push_back(m);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(r) => Err(ModelError::Topology(format!(
                "room {} is unreachable",
                self.names[r]
            ))),
            None => Ok(()),
        }
    }

    /// Parses an edge list: one whitespace-separated pair of room names per
    /// line, `#` starts a comment. Rooms are numbered in order of appearance.
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let mut names = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut edges = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 2 {
                return Err(ModelError::Parse(format!(
                    "line {}: expected two room names",
                    lineno + 1
                )));
            }
            let mut id = |name: &str| {
                *index.entry(name.to_string()).or_insert_with(|| {
                    names.push(name.to_string());
                    names.len() - 1
                })
            };
            let a = id(parts[0]);
            let b = id(parts[1]);
            edges.push((a, b));
        }
        Self::new(names, &edges)
    }

    pub fn to_edge_list(&self) -> String {
        self.edges
            .iter()
            .map(|&(a, b)| format!("{} {}\n", self.names[a], self.names[b]))
            .collect()
    }

    pub fn line(n: usize) -> Result<Self, ModelError> {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::from_edges(n, &edges)
    }

    pub fn ring(n: usize) -> Result<Self, ModelError> {
        let mut edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        if n > 2 {
            edges.push((n - 1, 0));
        }
        Self::from_edges(n, &edges)
    }

    /// Loop blocks laid out in sequence. Consecutive loops are joined by a
    /// corridor of `link` rooms running from the far side of one loop to the
    /// first room of the next; a dead-end corridor of `dead_end` rooms hangs
    /// off the first room of the first loop.
    pub fn loops_and_corridors(loops: &[usize], link: usize, dead_end: usize) -> Result<Self, ModelError> {
        let mut edges = Vec::new();
        let mut next = 0usize;
        let mut prev_far: Option<usize> = None;
        let mut first_room = None;
        for &size in loops {
            if size < 3 {
                return Err(ModelError::Topology(format!("loop of size {size}")));
            }
            let start = next;
            for i in 0..size {
                edges.push((start + i, start + (i + 1) % size));
            }
            next += size;
            if let Some(far) = prev_far {
                let mut at = far;
                for _ in 0..link {
                    edges.push((at, next));
                    at = next;
                    next += 1;
                }
                edges.push((at, start));
            }
            first_room.get_or_insert(start);
            prev_far = Some(start + size / 2);
        }
        let mut at = first_room.unwrap_or(0);
        if loops.is_empty() {
            next = 1;
        }
        for _ in 0..dead_end {
            edges.push((at, next));
            at = next;
            next += 1;
        }
        Self::from_edges(next, &edges)
    }

    /// Desk-scale default: an 8-room loop plus a 4-room dead-end corridor.
    pub fn rooms12() -> Self {
        Self::loops_and_corridors(&[8], 0, 4).expect("static layout")
    }

    /// The shipped 58-room approximation.
    pub fn rooms58() -> Self {
        Self::parse(ROOMS58).expect("shipped layout")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rooms12_shape() {
        let t = Topology::rooms12();
        assert_eq!(t.len(), 12);
        assert_eq!(t.edges.len(), 12);
        assert_eq!(t.neighbors(0), vec![1, 7, 8]);
        assert_eq!(t.neighbors(11), vec![10]);
    }

    #[test]
    fn rooms58_has_loops_and_dead_ends() {
        let t = Topology::rooms58();
        assert_eq!(t.len(), 58);
        // a connected graph with more edges than a tree has cycles
        assert!(t.edges.len() > t.len() - 1);
        assert!((0..t.len()).any(|r| t.neighbors(r).len() == 1));
    }

    #[test]
    fn disconnected_is_rejected() {
        assert!(matches!(
            Topology::from_edges(4, &[(0, 1), (2, 3)]),
            Err(ModelError::Topology(_))
        ));
    }

    #[test]
    fn parse_roundtrip() {
        let t = Topology::parse("# demo\na b\nb c\nc a\nc d # tail\n").unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!(Topology::parse(&t.to_edge_list()).unwrap(), t);
        assert!(Topology::parse("a b c\n").is_err());
    }

    #[test]
    fn generator_joins_loops() {
        let t = Topology::loops_and_corridors(&[4, 4], 2, 1).unwrap();
        assert_eq!(t.len(), 11);
        assert_eq!(t.edges.len(), 4 + 4 + 3 + 1);
    }
}
