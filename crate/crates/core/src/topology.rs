//! Radio-range geometry and the spanning-tree overlay.
//!
//! The group's overlay is the minimum spanning tree of the radio graph:
//! nodes within radio range are joined by edges weighted by Euclidean
//! distance, and the tree defines both the authenticated-neighbor relation
//! and the unique route between any two members.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use thiserror::Error;

/// Identifier of a node, unique within one scenario.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A point in the plane, in arbitrary distance units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("position has non-finite coordinates")]
    InvalidPosition,
    #[error("radio range must be positive and finite, got {0}")]
    InvalidRange(f64),
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("network is partitioned, components: {0:?}")]
    Partition(Vec<Vec<NodeId>>),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

/// Undirected radio-graph edge; endpoints are stored with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: NodeId,
    pub b: NodeId,
    pub weight: f64,
}

/// Geometric graph over node positions: an edge joins every pair whose
/// distance is within radio range (inclusive), weighted by that distance.
///
/// This is the per-node adjacency table: everyone a node can exchange
/// radio messages with, whether or not they are tree neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioGraph {
    nodes: BTreeMap<NodeId, Position>,
    range: f64,
    edges: Vec<Edge>,
    adjacency: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

impl RadioGraph {
    pub fn nodes(&self) -> &BTreeMap<NodeId, Position> {
        &self.nodes
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Nodes within radio range of `id` (the adjacency table row).
    pub fn neighbors_of(&self, id: NodeId) -> Option<&BTreeSet<NodeId>> {
        self.adjacency.get(&id)
    }
}

/// Cycle-free overlay connecting every live node; exactly `n - 1` edges,
/// every edge drawn from the source radio graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanningTree {
    root: NodeId,
    edges: Vec<(NodeId, NodeId)>,
    adjacency: BTreeMap<NodeId, BTreeSet<NodeId>>,
    total_weight: f64,
}

impl SpanningTree {
    /// Lowest node id, used as the canonical orientation point.
    pub fn root(&self) -> NodeId {
        self.root
    }

    /// Tree edges as `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.adjacency.contains_key(&id)
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency.keys().copied()
    }

    pub fn neighbors(&self, id: NodeId) -> Option<&BTreeSet<NodeId>> {
        self.adjacency.get(&id)
    }
}

/// Tree-adjacent (authenticated) neighbors of one node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborTable {
    pub owner: NodeId,
    pub neighbors: BTreeSet<NodeId>,
}

/// Euclidean distance between two positions.
pub fn euclidean_distance(a: Position, b: Position) -> Result<f64, TopologyError> {
    if !a.is_finite() || !b.is_finite() {
        return Err(TopologyError::InvalidPosition);
    }
    Ok(((b.x - a.x).powi(2) + (b.y - a.y).powi(2)).sqrt())
}

/// Build the radio graph over `nodes`: an edge joins every pair whose
/// distance is at most `range` (boundary nodes can communicate).
pub fn build_radio_graph(
    nodes: &[(NodeId, Position)],
    range: f64,
) -> Result<RadioGraph, TopologyError> {
    if range <= 0.0 || !range.is_finite() {
        return Err(TopologyError::InvalidRange(range));
    }
    let mut map = BTreeMap::new();
    for &(id, pos) in nodes {
        if !pos.is_finite() {
            return Err(TopologyError::InvalidPosition);
        }
        if map.insert(id, pos).is_some() {
            return Err(TopologyError::DuplicateNode(id));
        }
    }
    let ids: Vec<NodeId> = map.keys().copied().collect();
    let mut edges = Vec::new();
    let mut adjacency: BTreeMap<NodeId, BTreeSet<NodeId>> =
        ids.iter().map(|&id| (id, BTreeSet::new())).collect();
    for (i, &a) in ids.iter().enumerate() {
        for &b in &ids[i + 1..] {
            let weight = euclidean_distance(map[&a], map[&b])?;
            if weight <= range {
                edges.push(Edge { a, b, weight });
                adjacency.get_mut(&a).unwrap().insert(b);
                adjacency.get_mut(&b).unwrap().insert(a);
            }
        }
    }
    Ok(RadioGraph {
        nodes: map,
        range,
        edges,
        adjacency,
    })
}

/// Connected components of the radio graph, each sorted, ordered by their
/// smallest member.
pub fn connected_components(graph: &RadioGraph) -> Vec<Vec<NodeId>> {
    let ids: Vec<NodeId> = graph.nodes.keys().copied().collect();
    let index: BTreeMap<NodeId, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut uf = UnionFind::new(ids.len());
    for e in &graph.edges {
        uf.union(index[&e.a], index[&e.b]);
    }
    let mut groups: BTreeMap<usize, Vec<NodeId>> = BTreeMap::new();
    for (i, &id) in ids.iter().enumerate() {
        groups.entry(uf.find(i)).or_default().push(id);
    }
    let mut components: Vec<Vec<NodeId>> = groups.into_values().collect();
    components.sort_by_key(|c| c[0]);
    components
}

/// Kruskal's algorithm over the radio graph. Ties on weight break by
/// (smaller endpoint, larger endpoint) so the tree is reproducible.
pub fn build_mst(graph: &RadioGraph) -> Result<SpanningTree, TopologyError> {
    if graph.nodes.is_empty() {
        return Err(TopologyError::EmptyGraph);
    }
    let ids: Vec<NodeId> = graph.nodes.keys().copied().collect();
    let index: BTreeMap<NodeId, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();

    let mut sorted: Vec<&Edge> = graph.edges.iter().collect();
    sorted.sort_by(|x, y| {
        x.weight
            .total_cmp(&y.weight)
            .then(x.a.cmp(&y.a))
            .then(x.b.cmp(&y.b))
    });

    let mut uf = UnionFind::new(ids.len());
    let mut edges = Vec::with_capacity(ids.len().saturating_sub(1));
    let mut total_weight = 0.0;
    for e in sorted {
        if uf.union(index[&e.a], index[&e.b]) {
            edges.push((e.a, e.b));
            total_weight += e.weight;
            if edges.len() == ids.len() - 1 {
                break;
            }
        }
    }
    if edges.len() != ids.len() - 1 {
        return Err(TopologyError::Partition(connected_components(graph)));
    }

    let mut adjacency: BTreeMap<NodeId, BTreeSet<NodeId>> =
        ids.iter().map(|&id| (id, BTreeSet::new())).collect();
    for &(a, b) in &edges {
        adjacency.get_mut(&a).unwrap().insert(b);
        adjacency.get_mut(&b).unwrap().insert(a);
    }
    edges.sort();
    Ok(SpanningTree {
        root: ids[0],
        edges,
        adjacency,
        total_weight,
    })
}

/// The unique simple path from `src` to `dst`, both endpoints included.
pub fn tree_path(
    tree: &SpanningTree,
    src: NodeId,
    dst: NodeId,
) -> Result<Vec<NodeId>, TopologyError> {
    if !tree.contains(src) {
        return Err(TopologyError::UnknownNode(src));
    }
    if !tree.contains(dst) {
        return Err(TopologyError::UnknownNode(dst));
    }
    if src == dst {
        return Ok(vec![src]);
    }
    let mut parent: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    let mut queue = VecDeque::from([src]);
    'bfs: while let Some(cur) = queue.pop_front() {
        for &next in &tree.adjacency[&cur] {
            if next != src && !parent.contains_key(&next) {
                parent.insert(next, cur);
                if next == dst {
                    break 'bfs;
                }
                queue.push_back(next);
            }
        }
    }
    let mut path = vec![dst];
    let mut cur = dst;
    while cur != src {
        cur = parent[&cur];
        path.push(cur);
    }
    path.reverse();
    Ok(path)
}

/// The neighbor table of `node`: exactly its tree-adjacent nodes.
pub fn neighbor_table(tree: &SpanningTree, node: NodeId) -> Result<NeighborTable, TopologyError> {
    let neighbors = tree
        .neighbors(node)
        .ok_or(TopologyError::UnknownNode(node))?;
    Ok(NeighborTable {
        owner: node,
        neighbors: neighbors.clone(),
    })
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            self.parent[x] = self.find(self.parent[x]);
        }
        self.parent[x]
    }

    fn union(&mut self, x: usize, y: usize) -> bool {
        let (rx, ry) = (self.find(x), self.find(y));
        if rx == ry {
            return false;
        }
        match self.rank[rx].cmp(&self.rank[ry]) {
            std::cmp::Ordering::Less => self.parent[rx] = ry,
            std::cmp::Ordering::Greater => self.parent[ry] = rx,
            std::cmp::Ordering::Equal => {
                self.parent[ry] = rx;
                self.rank[rx] += 1;
            }
        }
        true
    }
}
