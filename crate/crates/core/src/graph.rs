//! Quivers, layered network graphs and exact path counting.
//!
//! Two independent counters live here: [`enumerate_paths`] walks every path
//! explicitly and is only usable on tiny graphs, while [`count_paths_dp`]
//! accumulates counts in topological order. The closed-form measures in
//! [`crate::emergence`] are checked against both.

use std::collections::BTreeSet;
use std::fmt;

use num_bigint::BigUint;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emergence::EmergenceValue;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("directed cycle through vertex {0} in the allowed subgraph")]
    Cycle(VertexId),
    #[error("vertex {0} is not part of the quiver")]
    UnknownVertex(VertexId),
    #[error("edge {0} is not part of the quiver")]
    UnknownEdge(EdgeId),
    #[error("layered shape needs at least 2 layers, got {0}")]
    TooFewLayers(usize),
    #[error("layer {layer} has zero nodes")]
    EmptyLayer { layer: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VertexId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeId(pub usize);

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

pub type VertexSet = BTreeSet<VertexId>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub id: EdgeId,
    pub tail: VertexId,
    pub head: VertexId,
}

/// A finite directed multigraph. Loops and parallel edges are allowed.
///
/// Vertices are the dense range `0..vertex_count`; edge ids are assigned in
/// insertion order and are therefore unique.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quiver {
    vertex_count: usize,
    edges: Vec<Edge>,
}

impl Quiver {
    pub fn new(vertex_count: usize) -> Self {
        Self {
            vertex_count,
            edges: Vec::new(),
        }
    }

    pub fn add_vertex(&mut self) -> VertexId {
        self.vertex_count += 1;
        VertexId(self.vertex_count - 1)
    }

    pub fn add_edge(&mut self, tail: VertexId, head: VertexId) -> Result<EdgeId, GraphError> {
        self.check_vertex(tail)?;
        self.check_vertex(head)?;
        let id = EdgeId(self.edges.len());
        self.edges.push(Edge { id, tail, head });
        Ok(id)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn vertices(&self) -> impl Iterator<Item = VertexId> {
        (0..self.vertex_count).map(VertexId)
    }

    pub fn all_vertices(&self) -> VertexSet {
        self.vertices().collect()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, id: EdgeId) -> Result<&Edge, GraphError> {
        self.edges.get(id.0).ok_or(GraphError::UnknownEdge(id))
    }

    pub fn contains(&self, v: VertexId) -> bool {
        v.0 < self.vertex_count
    }

    pub fn out_edges(&self, v: VertexId) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.tail == v)
    }

    fn check_vertex(&self, v: VertexId) -> Result<(), GraphError> {
        if self.contains(v) {
            Ok(())
        } else {
            Err(GraphError::UnknownVertex(v))
        }
    }

    fn mask(&self, set: &VertexSet) -> Result<Vec<bool>, GraphError> {
        let mut mask = vec![false; self.vertex_count];
        for &v in set {
            self.check_vertex(v)?;
            mask[v.0] = true;
        }
        Ok(mask)
    }

    /// Adjacency lists of the subgraph induced by `allowed`, keeping only the
    /// edges accepted by `keep_edge`. Parallel edges stay duplicated.
    fn induced_adjacency(
        &self,
        allowed: &[bool],
        keep_edge: impl Fn(&Edge) -> bool,
    ) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertex_count];
        for e in &self.edges {
            if allowed[e.tail.0] && allowed[e.head.0] && keep_edge(e) {
                adj[e.tail.0].push(e.head.0);
            }
        }
        adj
    }
}

/// Per-vertex dimensions of a quiver representation; the linear maps on the
/// arrows are not modelled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuiverRep {
    quiver: Quiver,
    vertex_dim: Vec<u64>,
}

impl QuiverRep {
    pub fn new(quiver: Quiver, vertex_dim: Vec<u64>) -> Result<Self, GraphError> {
        if vertex_dim.len() != quiver.vertex_count() {
            return Err(GraphError::UnknownVertex(VertexId(
                vertex_dim.len().min(quiver.vertex_count()),
            )));
        }
        Ok(Self { quiver, vertex_dim })
    }

    /// Every vertex space one-dimensional.
    pub fn unit(quiver: Quiver) -> Self {
        let n = quiver.vertex_count();
        Self {
            quiver,
            vertex_dim: vec![1; n],
        }
    }

    pub fn quiver(&self) -> &Quiver {
        &self.quiver
    }

    pub fn dim(&self, v: VertexId) -> u64 {
        self.vertex_dim[v.0]
    }
}

/// Node counts of a feedforward network, input layer first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct LayeredShape(Vec<usize>);

impl LayeredShape {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self, GraphError> {
        if layer_sizes.len() < 2 {
            return Err(GraphError::TooFewLayers(layer_sizes.len()));
        }
        if let Some(layer) = layer_sizes.iter().position(|&n| n == 0) {
            return Err(GraphError::EmptyLayer { layer: layer + 1 });
        }
        Ok(Self(layer_sizes))
    }

    pub fn sizes(&self) -> &[usize] {
        &self.0
    }

    /// Number of layers `N`.
    pub fn depth(&self) -> usize {
        self.0.len()
    }

    /// Nodes in layer `i`, 1-based.
    pub fn width(&self, i: usize) -> usize {
        self.0[i - 1]
    }

    /// Number of weight matrices connecting consecutive layers.
    pub fn weight_layers(&self) -> usize {
        self.0.len() - 1
    }

    /// Every node active.
    pub fn full_profile(&self) -> ActivationProfile {
        ActivationProfile(self.0.clone())
    }
}

impl TryFrom<Vec<usize>> for LayeredShape {
    type Error = GraphError;
    fn try_from(v: Vec<usize>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<LayeredShape> for Vec<usize> {
    fn from(s: LayeredShape) -> Self {
        s.0
    }
}

/// Active node counts per layer. Consistency with a shape is checked where a
/// shape is supplied alongside it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActivationProfile(pub Vec<usize>);

impl ActivationProfile {
    pub fn zeros(depth: usize) -> Self {
        Self(vec![0; depth])
    }

    pub fn counts(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `true` when lengths agree and every `a_i <= n_i`.
    pub fn fits(&self, shape: &LayeredShape) -> bool {
        self.0.len() == shape.depth() && self.0.iter().zip(shape.sizes()).all(|(a, n)| a <= n)
    }
}

/// A fully connected feedforward graph together with the vertex ranges of
/// each layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayeredQuiver {
    pub quiver: Quiver,
    offsets: Vec<usize>,
}

impl LayeredQuiver {
    /// Vertices of layer `i` (1-based).
    pub fn layer(&self, i: usize) -> impl Iterator<Item = VertexId> {
        (self.offsets[i - 1]..self.offsets[i]).map(VertexId)
    }

    /// The active set for `profile`: the first `a_i` vertices of every layer.
    /// Any choice of `a_i` vertices per layer gives the same counts.
    pub fn active_set(&self, profile: &ActivationProfile) -> VertexSet {
        profile
            .counts()
            .iter()
            .enumerate()
            .flat_map(|(idx, &a)| self.layer(idx + 1).take(a))
            .collect()
    }

    /// The edges leaving vertices outside `active`.
    pub fn edges_out_of_complement(&self, active: &VertexSet) -> Vec<EdgeId> {
        self.quiver
            .edges()
            .iter()
            .filter(|e| !active.contains(&e.tail))
            .map(|e| e.id)
            .collect()
    }
}

pub fn build_layered_quiver(shape: &LayeredShape) -> LayeredQuiver {
    let mut offsets = Vec::with_capacity(shape.depth() + 1);
    let mut total = 0;
    offsets.push(0);
    for &n in shape.sizes() {
        total += n;
        offsets.push(total);
    }
    let mut quiver = Quiver::new(total);
    for i in 0..shape.weight_layers() {
        for u in offsets[i]..offsets[i + 1] {
            for v in offsets[i + 1]..offsets[i + 2] {
                quiver
                    .add_edge(VertexId(u), VertexId(v))
                    .expect("layer ranges are within the vertex count");
            }
        }
    }
    LayeredQuiver { quiver, offsets }
}

/// Kahn's algorithm over an adjacency list restricted to `allowed`.
fn topological_order(adj: &[Vec<usize>], allowed: &[bool]) -> Result<Vec<usize>, GraphError> {
    let n = adj.len();
    let mut indegree = vec![0usize; n];
    for targets in adj {
        for &w in targets {
            indegree[w] += 1;
        }
    }
    let mut stack: Vec<usize> = (0..n).filter(|&v| allowed[v] && indegree[v] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = stack.pop() {
        order.push(v);
        for &w in &adj[v] {
            indegree[w] -= 1;
            if indegree[w] == 0 {
                stack.push(w);
            }
        }
    }
    let expected = allowed.iter().filter(|&&a| a).count();
    if order.len() != expected {
        let stuck = (0..n)
            .find(|&v| allowed[v] && indegree[v] > 0)
            .expect("a vertex with remaining in-degree exists when the order is short");
        return Err(GraphError::Cycle(VertexId(stuck)));
    }
    Ok(order)
}

fn check_sources(sources: &VertexSet, allowed: &[bool]) -> Result<(), GraphError> {
    match sources.iter().find(|s| !allowed[s.0]) {
        Some(&s) => Err(GraphError::UnknownVertex(s)),
        None => Ok(()),
    }
}

/// Counts every directed path (length ≥ 0) that starts at a source and stays
/// inside `allowed`, by walking each one. Exponential; small graphs only.
pub fn enumerate_paths(
    quiver: &Quiver,
    sources: &VertexSet,
    allowed: &VertexSet,
) -> Result<EmergenceValue, GraphError> {
    let mask = quiver.mask(allowed)?;
    check_sources(sources, &mask)?;
    let adj = quiver.induced_adjacency(&mask, |_| true);
    topological_order(&adj, &mask)?;

    let mut count = BigUint::zero();
    let mut stack: Vec<usize> = sources.iter().map(|s| s.0).collect();
    while let Some(v) = stack.pop() {
        count += 1u32;
        stack.extend_from_slice(&adj[v]);
    }
    Ok(EmergenceValue::from(count))
}

/// Same count as [`enumerate_paths`], in time linear in the graph size.
pub fn count_paths_dp(
    quiver: &Quiver,
    sources: &VertexSet,
    allowed: &VertexSet,
) -> Result<EmergenceValue, GraphError> {
    let mask = quiver.mask(allowed)?;
    check_sources(sources, &mask)?;
    let paths = paths_from_each(quiver, &mask, |_| true)?;
    let total: BigUint = sources.iter().map(|s| &paths[s.0]).sum();
    Ok(EmergenceValue::from(total))
}

/// Number of length-≥0 paths starting at each vertex of the subgraph induced
/// by `allowed` (restricted further by `keep_edge`). Vertices outside
/// `allowed` get zero.
pub(crate) fn paths_from_each(
    quiver: &Quiver,
    allowed: &[bool],
    keep_edge: impl Fn(&Edge) -> bool,
) -> Result<Vec<BigUint>, GraphError> {
    let adj = quiver.induced_adjacency(allowed, keep_edge);
    let order = topological_order(&adj, allowed)?;
    let mut paths = vec![BigUint::zero(); quiver.vertex_count()];
    for &v in order.iter().rev() {
        let mut p = BigUint::one();
        for &w in &adj[v] {
            p += &paths[w];
        }
        paths[v] = p;
    }
    Ok(paths)
}

pub(crate) fn vertex_mask(quiver: &Quiver, set: &VertexSet) -> Result<Vec<bool>, GraphError> {
    quiver.mask(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ids: &[usize]) -> VertexSet {
        ids.iter().copied().map(VertexId).collect()
    }

    #[test]
    fn layered_quiver_counts() {
        for (sizes, v, e) in [(vec![1, 1], 2, 1), (vec![2, 3], 5, 6), (vec![2, 3, 2], 7, 12)] {
            let lq = build_layered_quiver(&LayeredShape::new(sizes).unwrap());
            assert_eq!(lq.quiver.vertex_count(), v);
            assert_eq!(lq.quiver.edges().len(), e);
        }
    }

    #[test]
    fn layered_edges_only_between_consecutive_layers() {
        let lq = build_layered_quiver(&LayeredShape::new(vec![2, 3, 2]).unwrap());
        let layer_of = |v: VertexId| (1..=3).find(|&i| lq.layer(i).any(|u| u == v)).unwrap();
        for e in lq.quiver.edges() {
            assert_eq!(layer_of(e.head), layer_of(e.tail) + 1);
        }
    }

    #[test]
    fn shape_validation() {
        assert_eq!(LayeredShape::new(vec![3]), Err(GraphError::TooFewLayers(1)));
        assert_eq!(
            LayeredShape::new(vec![3, 0, 2]),
            Err(GraphError::EmptyLayer { layer: 2 })
        );
    }

    #[test]
    fn empty_sources_count_zero() {
        let lq = build_layered_quiver(&LayeredShape::new(vec![2, 2]).unwrap());
        let all = lq.quiver.all_vertices();
        assert_eq!(enumerate_paths(&lq.quiver, &set(&[]), &all).unwrap(), 0u32.into());
        assert_eq!(count_paths_dp(&lq.quiver, &set(&[]), &all).unwrap(), 0u32.into());
    }

    #[test]
    fn isolated_source_has_trivial_path() {
        let mut q = Quiver::new(2);
        q.add_edge(VertexId(0), VertexId(1)).unwrap();
        let allowed = set(&[0]);
        assert_eq!(enumerate_paths(&q, &set(&[0]), &allowed).unwrap(), 1u32.into());
        assert_eq!(count_paths_dp(&q, &set(&[0]), &allowed).unwrap(), 1u32.into());
    }

    #[test]
    fn complete_bipartite_two_by_two() {
        let lq = build_layered_quiver(&LayeredShape::new(vec![2, 2]).unwrap());
        let all = lq.quiver.all_vertices();
        let sources: VertexSet = lq.layer(1).collect();
        assert_eq!(enumerate_paths(&lq.quiver, &sources, &all).unwrap(), 6u32.into());
        assert_eq!(count_paths_dp(&lq.quiver, &sources, &all).unwrap(), 6u32.into());
    }

    #[test]
    fn chain_of_three() {
        let mut q = Quiver::new(3);
        q.add_edge(VertexId(0), VertexId(1)).unwrap();
        q.add_edge(VertexId(1), VertexId(2)).unwrap();
        let all = q.all_vertices();
        assert_eq!(count_paths_dp(&q, &set(&[0]), &all).unwrap(), 3u32.into());
        assert_eq!(enumerate_paths(&q, &set(&[0]), &all).unwrap(), 3u32.into());
    }

    #[test]
    fn parallel_edges_are_distinct_paths() {
        let mut q = Quiver::new(2);
        q.add_edge(VertexId(0), VertexId(1)).unwrap();
        q.add_edge(VertexId(0), VertexId(1)).unwrap();
        let all = q.all_vertices();
        assert_eq!(count_paths_dp(&q, &set(&[0]), &all).unwrap(), 3u32.into());
        assert_eq!(enumerate_paths(&q, &set(&[0]), &all).unwrap(), 3u32.into());
    }

    #[test]
    fn cycles_are_rejected_only_inside_allowed() {
        let mut q = Quiver::new(3);
        q.add_edge(VertexId(0), VertexId(1)).unwrap();
        q.add_edge(VertexId(1), VertexId(2)).unwrap();
        q.add_edge(VertexId(2), VertexId(1)).unwrap();
        let all = q.all_vertices();
        assert!(matches!(
            count_paths_dp(&q, &set(&[0]), &all),
            Err(GraphError::Cycle(_))
        ));
        assert!(matches!(
            enumerate_paths(&q, &set(&[0]), &all),
            Err(GraphError::Cycle(_))
        ));
        // dropping vertex 2 breaks the cycle
        let allowed = set(&[0, 1]);
        assert_eq!(count_paths_dp(&q, &set(&[0]), &allowed).unwrap(), 2u32.into());
    }

    #[test]
    fn self_loop_is_a_cycle() {
        let mut q = Quiver::new(1);
        q.add_edge(VertexId(0), VertexId(0)).unwrap();
        assert!(count_paths_dp(&q, &set(&[0]), &set(&[0])).is_err());
    }

    #[test]
    fn source_outside_allowed_is_an_error() {
        let q = Quiver::new(2);
        assert_eq!(
            count_paths_dp(&q, &set(&[1]), &set(&[0])),
            Err(GraphError::UnknownVertex(VertexId(1)))
        );
    }

    #[test]
    fn unknown_vertex_in_edge() {
        let mut q = Quiver::new(1);
        assert!(q.add_edge(VertexId(0), VertexId(4)).is_err());
    }
}
