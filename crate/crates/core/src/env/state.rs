use std::sync::Arc;

use super::{EnvError, ProblemConfig};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub x: f64,
    pub y: f64,
}

impl Node {
    pub fn pos(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    pub fn dist_to(&self, x: f64, y: f64) -> f64 {
        f64::hypot(self.x - x, self.y - y)
    }
}

/// A pin-jointed bar between two nodes. Stored with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Member {
    pub a: NodeId,
    pub b: NodeId,
    /// 1-based index into the problem's area ladder.
    pub size_level: usize,
}

/// The mutable design under construction.
///
/// Node ids are assigned in insertion order and never reused; the first
/// `n_fixed` nodes come from the problem config (supports, then loads) and
/// are immovable.
#[derive(Debug, Clone, PartialEq)]
pub struct TrussState {
    problem: Arc<ProblemConfig>,
    nodes: Vec<Node>,
    members: Vec<Member>,
    n_fixed: usize,
}

impl TrussState {
    /// The empty design for a problem: support and load nodes only.
    pub fn initial(problem: Arc<ProblemConfig>) -> Result<Self, EnvError> {
        problem.validate()?;
        let mut nodes = Vec::new();
        for s in &problem.supports {
            nodes.push(Node { id: nodes.len(), x: s.x, y: s.y });
        }
        for l in &problem.loads {
            nodes.push(Node { id: nodes.len(), x: l.x, y: l.y });
        }
        let n_fixed = nodes.len();
        Ok(TrussState { problem, nodes, members: Vec::new(), n_fixed })
    }

    pub fn problem(&self) -> &Arc<ProblemConfig> {
        &self.problem
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn n_fixed(&self) -> usize {
        self.n_fixed
    }

    pub fn support_ids(&self) -> std::ops::Range<NodeId> {
        0..self.problem.supports.len()
    }

    pub fn load_ids(&self) -> std::ops::Range<NodeId> {
        self.problem.supports.len()..self.n_fixed
    }

    /// Exact-coordinate node lookup. Actions reference nodes by their
    /// coordinates, which are copied bit-for-bit from the node set, so exact
    /// comparison is the intended semantics.
    pub fn node_at(&self, x: f64, y: f64) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.x == x && n.y == y).map(|n| n.id)
    }

    /// Index into `members` for the unordered pair `(a, b)`.
    pub fn find_member(&self, a: NodeId, b: NodeId) -> Option<usize> {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        self.members.iter().position(|m| m.a == lo && m.b == hi)
    }

    pub fn nearest_node_distance(&self, x: f64, y: f64) -> f64 {
        self.nodes
            .iter()
            .map(|n| n.dist_to(x, y))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn member_length(&self, m: &Member) -> f64 {
        let a = self.nodes[m.a];
        let b = self.nodes[m.b];
        a.dist_to(b.x, b.y)
    }

    pub(super) fn push_node(&mut self, x: f64, y: f64) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node { id, x, y });
        id
    }

    pub(super) fn push_member(&mut self, a: NodeId, b: NodeId) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        self.members.push(Member { a: lo, b: hi, size_level: 1 });
    }

    pub(super) fn thicken_member(&mut self, idx: usize) {
        self.members[idx].size_level += 1;
    }
}
