//! Exact maximum flow by shortest augmenting paths (Dinic's level graphs).
//!
//! Arcs are scanned in edge-list order, so a given graph always yields the
//! same flow vector. On the integral capacities every augmentation is an
//! integer, so the returned flows are integral before rescaling by `1/gamma`.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{build_graph, Direction, LayeredGraph};
use crate::info_tensor::InfoTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Exact,
    Barrier,
}

impl SolverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverKind::Exact => "exact",
            SolverKind::Barrier => "barrier",
        }
    }
}

/// Per-edge flow plus the s-t value it carries.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSolution {
    /// One entry per edge, in the edge order of the solved graph or problem.
    pub per_edge: Vec<f64>,
    pub value: f64,
    pub solver: SolverKind,
    /// Largest conservation violation over the nodes where conservation is
    /// required.
    pub residual: f64,
    /// Final barrier weight, for barrier solutions.
    pub mu_final: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapacityScale {
    /// Solve on `int(gamma * u)` and report in real units.
    Integral,
    /// Solve directly on the real capacities.
    Real,
}

pub fn max_flow_exact(g: &LayeredGraph, scale: CapacityScale) -> FlowSolution {
    let caps: Vec<f64> = match scale {
        CapacityScale::Integral => g.integral_upper().iter().map(|&c| c as f64).collect(),
        CapacityScale::Real => g.edges().iter().map(|e| e.upper).collect(),
    };
    let arcs: Vec<(usize, usize)> = g.edges().iter().map(|e| (e.tail, e.head)).collect();
    let tol = match scale {
        CapacityScale::Integral => 0.5,
        CapacityScale::Real => caps.iter().fold(0.0f64, |m, &c| m.max(c)) * 1e-13,
    };
    let (value, mut flows) = dinic(
        g.node_count(),
        &arcs,
        &caps,
        g.super_source(),
        g.super_target(),
        tol,
    );
    let (value, per_edge) = match scale {
        CapacityScale::Integral => {
            let gamma = g.scale_gamma();
            flows.iter_mut().for_each(|f| *f /= gamma);
            (value / gamma, flows)
        }
        CapacityScale::Real => (value, flows),
    };
    let residual = conservation_residual(g, &per_edge);
    FlowSolution {
        per_edge,
        value,
        solver: SolverKind::Exact,
        residual,
        mu_final: None,
    }
}

/// Largest `|inflow - outflow|` over token nodes of `g`.
pub fn conservation_residual(g: &LayeredGraph, flows: &[f64]) -> f64 {
    let net = g.incidence().transpose_mul(&flows[..g.edges().len()]);
    let (ss, st) = (g.super_source(), g.super_target());
    net.iter()
        .enumerate()
        .filter(|&(v, _)| v != ss && v != st)
        .fold(0.0, |m, (_, x)| m.max(x.abs()))
}

struct Arc {
    to: usize,
    cap: f64,
    rev: usize,
}

/// Dinic over `(tail, head)` arcs with capacities `caps`. Residual
/// capacities at or below `tol` count as saturated. Returns the value and the
/// flow on each input arc.
fn dinic(
    n: usize,
    edges: &[(usize, usize)],
    caps: &[f64],
    s: usize,
    t: usize,
    tol: f64,
) -> (f64, Vec<f64>) {
    let mut adj: Vec<Vec<Arc>> = (0..n).map(|_| Vec::new()).collect();
    let mut handle = Vec::with_capacity(edges.len());
    for (&(u, v), &c) in edges.iter().zip(caps) {
        let (iu, iv) = (adj[u].len(), adj[v].len());
        adj[u].push(Arc { to: v, cap: c, rev: iv });
        adj[v].push(Arc { to: u, cap: 0.0, rev: iu });
        handle.push((u, iu));
    }

    let mut value = 0.0;
    let mut level = vec![usize::MAX; n];
    let mut next = vec![0usize; n];
    loop {
        level.fill(usize::MAX);
        level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for a in &adj[u] {
                if a.cap > tol && level[a.to] == usize::MAX {
                    level[a.to] = level[u] + 1;
                    queue.push_back(a.to);
                }
            }
        }
        if level[t] == usize::MAX {
            break;
        }
        next.fill(0);
        loop {
            let pushed = augment(&mut adj, &level, &mut next, s, t, f64::INFINITY, tol);
            if pushed <= tol {
                break;
            }
            value += pushed;
        }
    }

    let flows = edges
        .iter()
        .zip(caps)
        .zip(&handle)
        .map(|((_, &c), &(u, i))| c - adj[u][i].cap)
        .collect();
    (value, flows)
}

fn augment(
    adj: &mut [Vec<Arc>],
    level: &[usize],
    next: &mut [usize],
    u: usize,
    t: usize,
    limit: f64,
    tol: f64,
) -> f64 {
    if u == t {
        return limit;
    }
    while next[u] < adj[u].len() {
        let i = next[u];
        let (to, cap) = (adj[u][i].to, adj[u][i].cap);
        if cap > tol && level[to] == level[u] + 1 {
            let pushed = augment(adj, level, next, to, t, limit.min(cap), tol);
            if pushed > tol {
                adj[u][i].cap -= pushed;
                let rev = adj[u][i].rev;
                adj[to][rev].cap += pushed;
                return pushed;
            }
        }
        next[u] += 1;
    }
    0.0
}

/// Flows on `from`'s edges re-expressed on the edges of `onto`, which must be
/// the same graph built in the opposite direction.
pub fn map_flows(from: &LayeredGraph, flows: &[f64], onto: &LayeredGraph) -> Result<Vec<f64>> {
    if from.direction() == onto.direction()
        || from.tokens() != onto.tokens()
        || from.layers() != onto.layers()
    {
        return Err(Error::invalid("flows can only be mapped onto the reversed graph"));
    }
    let index = onto.edge_index();
    let mut out = vec![0.0; onto.edges().len()];
    for (e, &f) in from.edges().iter().zip(flows) {
        let j = index
            .get(&(e.head, e.tail))
            .ok_or_else(|| Error::invalid("graphs do not share the same edge set"))?;
        out[*j] = f;
    }
    Ok(out)
}

/// Outcome of solving the backward and forward graphs of one tensor exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct NonUniquenessReport {
    pub value_backward: f64,
    pub value_forward: f64,
    pub linf_flow_distance: f64,
    pub distinct: bool,
    /// Exact flow on the backward graph's edges.
    pub flows_backward: Vec<f64>,
    /// Exact forward flow, mapped onto the backward edges.
    pub flows_forward_mapped: Vec<f64>,
    pub gamma: f64,
}

/// Flow distance above which two optimal flows count as different.
pub const DISTINCT_THRESHOLD: f64 = 1e-6;

pub fn compare_directions(info: &InfoTensor) -> Result<NonUniquenessReport> {
    let backward = build_graph(info, Direction::Backward)?;
    let forward = build_graph(info, Direction::Forward)?;
    let fb = max_flow_exact(&backward, CapacityScale::Integral);
    let ff = max_flow_exact(&forward, CapacityScale::Integral);
    let mapped = map_flows(&forward, &ff.per_edge, &backward)?;
    let linf = linf_distance(&fb.per_edge, &mapped);
    Ok(NonUniquenessReport {
        value_backward: fb.value,
        value_forward: ff.value,
        linf_flow_distance: linf,
        distinct: linf > DISTINCT_THRESHOLD,
        flows_backward: fb.per_edge,
        flows_forward_mapped: mapped,
        gamma: backward.scale_gamma(),
    })
}

pub(crate) fn linf_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::info_tensor::AggregationMode;

    fn info(slices: &[Vec<Vec<f64>>]) -> InfoTensor {
        InfoTensor::from_nested(slices, AggregationMode::Af).unwrap()
    }

    #[test]
    fn six_node_value_is_middle_cut() {
        let g = build_graph(&info(&[vec![vec![0.5, 0.5], vec![0.3, 0.7]]]), Direction::Backward)
            .unwrap();
        for scale in [CapacityScale::Integral, CapacityScale::Real] {
            let sol = max_flow_exact(&g, scale);
            assert!((sol.value - 2.0).abs() < 1e-6, "{scale:?}: {}", sol.value);
            assert!(sol.residual < 1e-9);
        }
    }

    #[test]
    fn integral_flows_are_integers() {
        let g = build_graph(
            &info(&[vec![vec![0.5, 0.25], vec![0.125, 0.7]]]),
            Direction::Forward,
        )
        .unwrap();
        let sol = max_flow_exact(&g, CapacityScale::Integral);
        for f in &sol.per_edge {
            let scaled = f * g.scale_gamma();
            assert!((scaled - libm::round(scaled)).abs() < 1e-9);
        }
    }

    #[test]
    fn single_bottleneck() {
        let g = build_graph(&info(&[vec![vec![0.4]]]), Direction::Backward).unwrap();
        let sol = max_flow_exact(&g, CapacityScale::Real);
        assert!((sol.value - 0.4).abs() < 1e-7);
    }

    #[test]
    fn all_twos_has_two_vertex_optima() {
        // Both (2,0,0,2) and (0,2,2,0) on the middle edges are feasible with
        // value 4; the solver must return one of them.
        let g = build_graph(&info(&[vec![vec![2.0, 2.0], vec![2.0, 2.0]]]), Direction::Backward)
            .unwrap();
        let sol = max_flow_exact(&g, CapacityScale::Integral);
        assert_eq!(sol.value, 4.0);
        let middle = &sol.per_edge[2..6];
        assert!(middle == [2.0, 0.0, 0.0, 2.0] || middle == [0.0, 2.0, 2.0, 0.0]);
    }

    #[test]
    fn single_token_chain_flows_agree() {
        let r = compare_directions(&info(&[vec![vec![0.3]], vec![vec![0.6]]])).unwrap();
        assert_eq!(r.value_backward, r.value_forward);
        assert!(!r.distinct);
        assert_eq!(r.linf_flow_distance, 0.0);
    }

    #[test]
    fn solver_is_deterministic() {
        let t = info(&[
            vec![vec![0.2, 0.9, 0.4], vec![0.5, 0.1, 0.3], vec![0.8, 0.6, 0.7]],
            vec![vec![0.3, 0.3, 0.2], vec![0.9, 0.4, 0.1], vec![0.2, 0.5, 0.6]],
        ]);
        let g = build_graph(&t, Direction::Backward).unwrap();
        assert_eq!(
            max_flow_exact(&g, CapacityScale::Integral),
            max_flow_exact(&g, CapacityScale::Integral)
        );
    }
}
