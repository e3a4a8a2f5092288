//! Layered attribution graphs and their min-cost circulation extension.
//!
//! Node ids follow a fixed layout for `t` tokens and `l` attention layers:
//! node `0` and node `t(l+1)+1` are the two super nodes, and token `i`
//! (zero-based) of token layer `k` (one-based, `1` = input tokens,
//! `l+1` = output side) is node `1 + (k-1)t + i`.
//!
//! The backward graph runs from the super-source (the highest id) through
//! layers `l+1, l, ..., 1` into the super-target (node `0`); the edge
//! `v[k+1][i] -> v[k][j]` carries capacity `info[k-1][i][j]`. The forward
//! graph uses the same nodes with every edge reversed and the super nodes
//! swapped.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::info_tensor::InfoTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Backward,
    Forward,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Backward => "backward",
            Direction::Forward => "forward",
        }
    }

    pub fn reversed(self) -> Self {
        match self {
            Direction::Backward => Direction::Forward,
            Direction::Forward => Direction::Backward,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "backward" => Ok(Direction::Backward),
            "forward" => Ok(Direction::Forward),
            other => Err(Error::invalid(alloc::format!(
                "unknown direction {other:?} (expected backward or forward)"
            ))),
        }
    }
}

/// A directed edge with real lower/upper capacities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub tail: usize,
    pub head: usize,
    pub lower: f64,
    pub upper: f64,
}

/// What an edge connects, derived from its endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    /// Leaves the super-source.
    Source,
    /// Between adjacent token layers; carries the smaller token-layer index.
    Middle { layer: usize },
    /// Enters the super-target.
    Sink,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayeredGraph {
    tokens: usize,
    layers: usize,
    direction: Direction,
    edges: Vec<Edge>,
    integral_upper: Vec<u64>,
    scale_gamma: f64,
}

impl LayeredGraph {
    /// Reassemble a graph from serialized parts, checking that every edge
    /// respects the layered pattern of `direction`.
    pub fn from_parts(
        tokens: usize,
        layers: usize,
        direction: Direction,
        scale_gamma: f64,
        edges: Vec<Edge>,
        integral_upper: Vec<u64>,
    ) -> Result<Self> {
        node_count_for(tokens, layers)?;
        if edges.len() != integral_upper.len() {
            return Err(Error::shape(alloc::format!(
                "{} edges but {} integral capacities",
                edges.len(),
                integral_upper.len()
            )));
        }
        if !(scale_gamma > 0.0 && scale_gamma.is_finite()) {
            return Err(Error::invalid("gamma must be positive and finite"));
        }
        let g = Self {
            tokens,
            layers,
            direction,
            edges,
            integral_upper,
            scale_gamma,
        };
        let mut seen = BTreeMap::new();
        for (idx, e) in g.edges.iter().enumerate() {
            if !(e.upper > 0.0 && e.upper.is_finite()) || e.lower != 0.0 {
                return Err(Error::invalid(alloc::format!(
                    "edge {idx} must have lower 0 and finite positive upper"
                )));
            }
            if g.kind_of(e.tail, e.head).is_none() {
                return Err(Error::invalid(alloc::format!(
                    "edge {idx} ({} -> {}) breaks the {} layered pattern",
                    e.tail,
                    e.head,
                    direction
                )));
            }
            if seen.insert((e.tail, e.head), idx).is_some() {
                return Err(Error::invalid(alloc::format!("duplicate edge {idx}")));
            }
        }
        Ok(g)
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    /// Number of attention layers `l`; there are `l + 1` token layers.
    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn node_count(&self) -> usize {
        self.tokens * (self.layers + 1) + 2
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn integral_upper(&self) -> &[u64] {
        &self.integral_upper
    }

    pub fn scale_gamma(&self) -> f64 {
        self.scale_gamma
    }

    pub fn super_source(&self) -> usize {
        match self.direction {
            Direction::Backward => self.node_count() - 1,
            Direction::Forward => 0,
        }
    }

    pub fn super_target(&self) -> usize {
        match self.direction {
            Direction::Backward => 0,
            Direction::Forward => self.node_count() - 1,
        }
    }

    /// Node id of `token` (zero-based) in token layer `layer` (one-based).
    pub fn token_node(&self, layer: usize, token: usize) -> usize {
        assert!((1..=self.layers + 1).contains(&layer) && token < self.tokens);
        1 + (layer - 1) * self.tokens + token
    }

    /// Token layer of a node, `0` for the two super nodes.
    pub fn layer_of(&self, node: usize) -> usize {
        if node == 0 || node + 1 == self.node_count() {
            0
        } else {
            (node - 1) / self.tokens + 1
        }
    }

    pub fn token_of(&self, node: usize) -> Option<usize> {
        (self.layer_of(node) != 0).then(|| (node - 1) % self.tokens)
    }

    /// The nodes of token layer `layer`, in token order.
    pub fn layer_nodes(&self, layer: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.tokens).map(move |i| self.token_node(layer, i))
    }

    /// Classify `tail -> head` against this graph's layered pattern.
    pub fn kind_of(&self, tail: usize, head: usize) -> Option<EdgeKind> {
        let n = self.node_count();
        if tail >= n || head >= n {
            return None;
        }
        let (ss, st) = (self.super_source(), self.super_target());
        let (lt, lh) = (self.layer_of(tail), self.layer_of(head));
        let source_layer = match self.direction {
            Direction::Backward => self.layers + 1,
            Direction::Forward => 1,
        };
        let sink_layer = self.layers + 2 - source_layer;
        if tail == ss {
            return (head != st && lh == source_layer).then_some(EdgeKind::Source);
        }
        if head == st {
            return (tail != ss && lt == sink_layer).then_some(EdgeKind::Sink);
        }
        if lt == 0 || lh == 0 {
            return None;
        }
        let ok = match self.direction {
            Direction::Backward => lt == lh + 1,
            Direction::Forward => lh == lt + 1,
        };
        ok.then(|| EdgeKind::Middle { layer: lt.min(lh) })
    }

    pub fn edge_kind(&self, edge: usize) -> EdgeKind {
        let e = self.edges[edge];
        self.kind_of(e.tail, e.head)
            .expect("edges are validated on construction")
    }

    /// Sum of all upper capacities, `||u||_1`.
    pub fn total_capacity(&self) -> f64 {
        self.edges.iter().map(|e| e.upper).sum()
    }

    /// Incidence matrix of the graph edges alone (no return edge).
    pub fn incidence(&self) -> IncidenceMatrix {
        IncidenceMatrix {
            cols: self.node_count(),
            rows: self.edges.iter().map(|e| (e.tail, e.head)).collect(),
        }
    }

    /// Map from `(tail, head)` to edge index.
    pub fn edge_index(&self) -> BTreeMap<(usize, usize), usize> {
        self.edges
            .iter()
            .enumerate()
            .map(|(i, e)| ((e.tail, e.head), i))
            .collect()
    }
}

fn node_count_for(tokens: usize, layers: usize) -> Result<usize> {
    if tokens == 0 || layers == 0 {
        return Err(Error::shape("graphs need at least one token and one layer"));
    }
    layers
        .checked_add(1)
        .and_then(|k| k.checked_mul(tokens))
        .and_then(|n| n.checked_add(2))
        .filter(|&n| n <= u32::MAX as usize)
        .ok_or(Error::GraphTooLarge { tokens, layers })
}

/// Options for [`build_graph_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GraphOptions {
    /// Added to every middle capacity before the graph is built; `0`
    /// disables smoothing.
    pub epsilon_smooth: f64,
}

pub fn build_graph(info: &InfoTensor, direction: Direction) -> Result<LayeredGraph> {
    build_graph_with(info, direction, GraphOptions::default())
}

pub fn build_graph_with(
    info: &InfoTensor,
    direction: Direction,
    options: GraphOptions,
) -> Result<LayeredGraph> {
    let (l, t) = (info.layers(), info.tokens());
    let n = node_count_for(t, l)?;
    let smooth = options.epsilon_smooth;
    if !(smooth >= 0.0 && smooth.is_finite()) {
        return Err(Error::invalid("epsilon-smooth must be a finite non-negative number"));
    }
    let cap = |layer: usize, i: usize, j: usize| info.at(layer, i, j) + smooth;

    let mut min_positive = f64::INFINITY;
    for layer in 0..l {
        let mut any = false;
        for i in 0..t {
            for j in 0..t {
                let c = cap(layer, i, j);
                if c > 0.0 {
                    any = true;
                    min_positive = min_positive.min(c);
                }
            }
        }
        if !any {
            return Err(Error::DisconnectedLayer { layer: layer + 1 });
        }
    }
    let gamma = scale_for(min_positive);

    let node = |layer: usize, token: usize| 1 + (layer - 1) * t + token;
    let u_inf = t as f64;
    let mut edges = Vec::new();
    let mut push = |tail: usize, head: usize, upper: f64| {
        if upper > 0.0 {
            edges.push(Edge {
                tail,
                head,
                lower: 0.0,
                upper,
            });
        }
    };
    match direction {
        Direction::Backward => {
            let ss = n - 1;
            for i in 0..t {
                push(ss, node(l + 1, i), u_inf);
            }
            for layer in (1..=l).rev() {
                for i in 0..t {
                    for j in 0..t {
                        push(node(layer + 1, i), node(layer, j), cap(layer - 1, i, j));
                    }
                }
            }
            for i in 0..t {
                push(node(1, i), 0, u_inf);
            }
        }
        Direction::Forward => {
            let st = n - 1;
            for i in 0..t {
                push(0, node(1, i), u_inf);
            }
            for layer in 1..=l {
                for j in 0..t {
                    for i in 0..t {
                        push(node(layer, j), node(layer + 1, i), cap(layer - 1, i, j));
                    }
                }
            }
            for i in 0..t {
                push(node(l + 1, i), st, u_inf);
            }
        }
    }
    let integral_upper = edges.iter().map(|e| integral(gamma, e.upper)).collect();
    Ok(LayeredGraph {
        tokens: t,
        layers: l,
        direction,
        edges,
        integral_upper,
        scale_gamma: gamma,
    })
}

/// `10^beta` with `beta = -floor(log10(min_positive))`, nudged so that
/// `gamma * min_positive` lands in `[1, 10)` under floating point.
fn scale_for(min_positive: f64) -> f64 {
    let mut beta = -(libm::floor(libm::log10(min_positive)) as i32);
    while pow10(beta) * min_positive < 1.0 {
        beta += 1;
    }
    while pow10(beta) * min_positive >= 10.0 {
        beta -= 1;
    }
    pow10(beta)
}

fn pow10(beta: i32) -> f64 {
    libm::pow(10.0, f64::from(beta))
}

fn integral(gamma: f64, upper: f64) -> u64 {
    // Truncation, except that values within f32 storage error of an integer
    // snap to it: 0.7f32 is 0.69999998 and should still give 7 at gamma 10.
    let x = gamma * upper;
    let nearest = libm::round(x);
    if (x - nearest).abs() <= 4.0 * f64::from(f32::EPSILON) * x.max(1.0) {
        nearest as u64
    } else {
        x as u64
    }
}

/// Edge of a circulation problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircEdge {
    pub tail: usize,
    pub head: usize,
    pub lower: f64,
    pub upper: f64,
    pub cost: f64,
}

/// Sparse edge-vertex incidence matrix: row `e` holds `-1` at the tail and
/// `+1` at the head of edge `e`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncidenceMatrix {
    cols: usize,
    rows: Vec<(usize, usize)>,
}

impl IncidenceMatrix {
    pub fn rows(&self) -> usize {
        self.rows.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Non-zero entries `(column, value)` of row `e`.
    pub fn row(&self, e: usize) -> [(usize, f64); 2] {
        let (tail, head) = self.rows[e];
        [(tail, -1.0), (head, 1.0)]
    }

    /// `B^T f`: net inflow at every vertex.
    pub fn transpose_mul(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.rows.len());
        let mut out = alloc::vec![0.0; self.cols];
        for (&(tail, head), &fe) in self.rows.iter().zip(f) {
            out[tail] -= fe;
            out[head] += fe;
        }
        out
    }
}

/// `min c^T f` subject to `B^T f = 0` and `lower <= f <= upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct CirculationProblem {
    node_count: usize,
    edges: Vec<CircEdge>,
    return_edge: Option<usize>,
}

impl CirculationProblem {
    pub fn new(node_count: usize, edges: Vec<CircEdge>) -> Result<Self> {
        for (i, e) in edges.iter().enumerate() {
            if e.tail >= node_count || e.head >= node_count || e.tail == e.head {
                return Err(Error::invalid(alloc::format!(
                    "edge {i} ({} -> {}) is not a proper edge over {node_count} nodes",
                    e.tail,
                    e.head
                )));
            }
            if !(e.lower.is_finite() && e.upper.is_finite() && e.cost.is_finite())
                || e.lower >= e.upper
            {
                return Err(Error::invalid(alloc::format!(
                    "edge {i} needs finite bounds with lower < upper"
                )));
            }
        }
        Ok(Self {
            node_count,
            edges,
            return_edge: None,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[CircEdge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Index of the `st -> ss` edge when built by [`to_circulation`].
    pub fn return_edge(&self) -> Option<usize> {
        self.return_edge
    }

    pub fn incidence(&self) -> IncidenceMatrix {
        IncidenceMatrix {
            cols: self.node_count,
            rows: self.edges.iter().map(|e| (e.tail, e.head)).collect(),
        }
    }

    pub fn cost(&self, f: &[f64]) -> f64 {
        self.edges.iter().zip(f).map(|(e, x)| e.cost * x).sum()
    }
}

/// Append the return edge `st -> ss` (upper `||u||_1`, cost `-1`) so that
/// maximum flow becomes a minimum-cost circulation. Graph edges keep their
/// indices; the return edge is last.
pub fn to_circulation(g: &LayeredGraph) -> CirculationProblem {
    let mut edges: Vec<CircEdge> = g
        .edges()
        .iter()
        .map(|e| CircEdge {
            tail: e.tail,
            head: e.head,
            lower: e.lower,
            upper: e.upper,
            cost: 0.0,
        })
        .collect();
    edges.push(CircEdge {
        tail: g.super_target(),
        head: g.super_source(),
        lower: 0.0,
        upper: g.total_capacity(),
        cost: -1.0,
    });
    let return_edge = Some(edges.len() - 1);
    CirculationProblem {
        node_count: g.node_count(),
        edges,
        return_edge,
    }
}
