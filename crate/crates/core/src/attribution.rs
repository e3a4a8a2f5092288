//! Token attributions read off a solved flow, the Shapley machinery used to
//! check them, and the demonstration that exact max-flow optima do not
//! define attributions.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{build_graph, Direction, LayeredGraph};
use crate::info_tensor::InfoTensor;
use crate::maxflow::{
    compare_directions, linf_distance, FlowSolution, SolverKind, DISTINCT_THRESHOLD,
};

/// Per-token scores of one token layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionVector {
    pub token_scores: Vec<f64>,
    /// Token layer that was read, `1` being the input tokens.
    pub layer: usize,
    pub normalized: bool,
    /// Value of the flow the scores came from.
    pub total_flow: f64,
}

/// Token layer used when the caller does not pick one.
pub const INPUT_LAYER: usize = 1;

/// Outflow of every token of `layer`, from a flow on `g`'s edges. A trailing
/// return-edge entry is accepted and ignored.
pub fn token_outflows(flow: &[f64], g: &LayeredGraph, layer: usize) -> Result<Vec<f64>> {
    let m = g.edges().len();
    if flow.len() != m && flow.len() != m + 1 {
        return Err(Error::shape(alloc::format!(
            "flow has {} entries but the graph has {m} edges",
            flow.len()
        )));
    }
    check_layer(g, layer)?;
    let mut out = vec![0.0; g.tokens()];
    for (e, &f) in g.edges().iter().zip(flow) {
        if g.layer_of(e.tail) == layer {
            if let Some(i) = g.token_of(e.tail) {
                out[i] += f.abs();
            }
        }
    }
    Ok(out)
}

fn check_layer(g: &LayeredGraph, layer: usize) -> Result<()> {
    if !(1..=g.layers() + 1).contains(&layer) {
        return Err(Error::invalid(alloc::format!(
            "layer {layer} is outside 1..={}",
            g.layers() + 1
        )));
    }
    Ok(())
}

/// Attributions of the tokens in `layer` from a barrier solution on `g`.
pub fn attribute(
    flow: &FlowSolution,
    g: &LayeredGraph,
    layer: usize,
    normalize: bool,
) -> Result<AttributionVector> {
    if flow.solver == SolverKind::Exact {
        return Err(Error::invalid(
            "exact max-flow solutions are not unique and cannot be used for attribution",
        ));
    }
    let mut scores = token_outflows(&flow.per_edge, g, layer)?;
    if normalize {
        let sum: f64 = scores.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::DegenerateNormalization);
        }
        scores.iter_mut().for_each(|s| *s /= sum);
    }
    Ok(AttributionVector {
        token_scores: scores,
        layer,
        normalized: normalize,
        total_flow: flow.value,
    })
}

/// Payoff of a coalition of same-layer nodes: their summed outflow under
/// the fixed flow.
pub fn payoff(flow: &FlowSolution, g: &LayeredGraph, subset: &[usize]) -> Result<f64> {
    let Some(&first) = subset.first() else {
        return Ok(0.0);
    };
    let layer = g.layer_of(first);
    if first >= g.node_count() || layer == 0 {
        return Err(Error::invalid(alloc::format!("node {first} is not a token node")));
    }
    let mut members = vec![false; g.tokens()];
    for &v in subset {
        if v >= g.node_count() || g.layer_of(v) != layer {
            return Err(Error::invalid("coalition mixes nodes from different layers"));
        }
        members[g.token_of(v).expect("token node")] = true;
    }
    let out = token_outflows(&flow.per_edge, g, layer)?;
    Ok(out
        .iter()
        .zip(&members)
        .filter(|(_, &m)| m)
        .map(|(v, _)| v)
        .sum())
}

/// Largest player count accepted by [`shapley_exact`].
pub const MAX_EXACT_PLAYERS: usize = 20;

/// Exact Shapley values of an `n`-player game by enumerating every
/// coalition. Coalitions are bit masks over the players.
pub fn shapley_exact(n: usize, game: impl Fn(u64) -> f64) -> Result<Vec<f64>> {
    if n > MAX_EXACT_PLAYERS {
        return Err(Error::invalid(alloc::format!(
            "exact Shapley enumeration supports at most {MAX_EXACT_PLAYERS} players"
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    // weight[s] = s! (n - s - 1)! / n!
    let mut weight = vec![0.0f64; n];
    weight[0] = 1.0 / n as f64;
    for s in 1..n {
        weight[s] = weight[s - 1] * s as f64 / (n - s) as f64;
    }
    let values: Vec<f64> = (0..1u64 << n).map(&game).collect();
    let mut phi = vec![0.0; n];
    for (mask, &v) in values.iter().enumerate() {
        let size = (mask as u64).count_ones() as usize;
        for (i, p) in phi.iter_mut().enumerate() {
            let bit = 1usize << i;
            if mask & bit == 0 {
                *p += weight[size] * (values[mask | bit] - v);
            }
        }
    }
    Ok(phi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxiomCheck {
    pub passed: bool,
    pub worst_deviation: f64,
}

impl AxiomCheck {
    fn within(deviation: f64, tol: f64) -> Self {
        Self {
            passed: deviation <= tol,
            worst_deviation: deviation,
        }
    }
}

/// Outcome of checking the Shapley axioms on the additive outflow game.
#[derive(Debug, Clone, PartialEq)]
pub struct AxiomReport {
    pub layer: usize,
    /// Sum of scores against the payoff of the grand coalition.
    pub efficiency: AxiomCheck,
    /// Enumerated Shapley values against the outflow scores. `None` when
    /// the layer has more than [`MAX_BRUTE_FORCE_TOKENS`] tokens.
    pub brute_force: Option<AxiomCheck>,
    /// Players with identical marginal contributions get equal values.
    pub symmetry: AxiomCheck,
    /// Players that never change the payoff get zero.
    pub nullity: AxiomCheck,
    /// Values of the sum of this game and the next layer's game add up.
    pub linearity: Option<AxiomCheck>,
}

impl AxiomReport {
    pub fn all_passed(&self) -> bool {
        self.efficiency.passed
            && self.symmetry.passed
            && self.nullity.passed
            && self.brute_force.is_none_or(|c| c.passed)
            && self.linearity.is_none_or(|c| c.passed)
    }
}

pub const MAX_BRUTE_FORCE_TOKENS: usize = 12;
const EFFICIENCY_TOL: f64 = 1e-6;
const EXACT_TOL: f64 = 1e-9;

fn additive_game(scores: &[f64]) -> impl Fn(u64) -> f64 + '_ {
    move |mask| {
        scores
            .iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(_, s)| s)
            .sum()
    }
}

pub fn shapley_check(flow: &FlowSolution, g: &LayeredGraph, layer: usize) -> Result<AxiomReport> {
    let scores = token_outflows(&flow.per_edge, g, layer)?;
    let t = scores.len();
    let nodes: Vec<usize> = g.layer_nodes(layer).collect();
    let grand = payoff(flow, g, &nodes)?;
    let sum: f64 = scores.iter().sum();
    let efficiency = AxiomCheck::within((sum - grand).abs().max((sum - flow.value).abs()), EFFICIENCY_TOL);

    let (brute_force, symmetry, nullity, linearity) = if t <= MAX_BRUTE_FORCE_TOKENS {
        let phi = shapley_exact(t, additive_game(&scores))?;
        let brute = AxiomCheck::within(linf_distance(&phi, &scores), EXACT_TOL);

        // Interchangeable players of an additive game are the ones with equal
        // stand-alone worth; null players are the ones worth nothing.
        let mut sym = 0.0f64;
        let mut null = 0.0f64;
        for i in 0..t {
            if scores[i] == 0.0 {
                null = null.max(phi[i].abs());
            }
            for j in i + 1..t {
                if scores[i] == scores[j] {
                    sym = sym.max((phi[i] - phi[j]).abs());
                }
            }
        }

        let other = if layer <= g.layers() { layer + 1 } else { layer - 1 };
        let linearity = if other != layer && other >= 1 {
            let second = token_outflows(&flow.per_edge, g, other)?;
            let combined: Vec<f64> = scores.iter().zip(&second).map(|(a, b)| a + 2.0 * b).collect();
            let lhs = shapley_exact(t, additive_game(&combined))?;
            let rhs = shapley_exact(t, additive_game(&second))?;
            let dev = lhs
                .iter()
                .zip(phi.iter().zip(&rhs))
                .fold(0.0f64, |m, (l, (a, b))| m.max((l - (a + 2.0 * b)).abs()));
            Some(AxiomCheck::within(dev, EXACT_TOL))
        } else {
            None
        };
        (
            Some(brute),
            AxiomCheck::within(sym, EXACT_TOL),
            AxiomCheck::within(null, EXACT_TOL),
            linearity,
        )
    } else {
        (None, AxiomCheck::within(0.0, EXACT_TOL), AxiomCheck::within(0.0, EXACT_TOL), None)
    };
    Ok(AxiomReport {
        layer,
        efficiency,
        brute_force,
        symmetry,
        nullity,
        linearity,
    })
}

/// Token indices by descending score, ties broken by ascending index.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// Two optimal flows with different edge values were found.
    Distinct,
    /// The search budget ran out without a second optimum.
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimumSource {
    /// Backward and forward exact solutions.
    Directions,
    /// Backward exact solution and a copy shifted along a residual cycle.
    ResidualCycle,
}

/// Two exact optima of one tensor and the attributions each would give.
#[derive(Debug, Clone, PartialEq)]
pub struct Corollary1Report {
    pub verdict: Verdict,
    pub source: Option<OptimumSource>,
    pub value_a: f64,
    pub value_b: f64,
    /// L-infinity distance between the two flows on the backward edges.
    pub flow_disagreement: f64,
    /// Largest L-infinity distance between the two outflow vectors over all
    /// token layers.
    pub attribution_disagreement: f64,
    /// Per token layer, index 0 being the input layer.
    pub layer_disagreement: Vec<f64>,
    /// Input-layer outflows of each optimum.
    pub attributions_a: Vec<f64>,
    pub attributions_b: Vec<f64>,
    pub flows_a: Vec<f64>,
    pub flows_b: Vec<f64>,
}

pub const DEMO_SEED: u64 = 0;
pub const DEMO_BUDGET: usize = 64;

pub fn corollary1_demo(info: &InfoTensor) -> Result<Corollary1Report> {
    corollary1_demo_with(info, DEMO_SEED, DEMO_BUDGET)
}

/// Like [`corollary1_demo`] with an explicit seed and number of residual
/// cycle attempts.
pub fn corollary1_demo_with(info: &InfoTensor, seed: u64, budget: usize) -> Result<Corollary1Report> {
    let g = build_graph(info, Direction::Backward)?;
    let dirs = compare_directions(info)?;
    let a = dirs.flows_backward;
    let mut b = dirs.flows_forward_mapped;
    let mut source = OptimumSource::Directions;
    let mut value_b = dirs.value_forward;
    if !dirs.distinct {
        if let Some(shifted) = shift_along_residual_cycle(&g, &a, seed, budget) {
            b = shifted;
            source = OptimumSource::ResidualCycle;
            value_b = dirs.value_backward;
        }
    }
    let flow_disagreement = linf_distance(&a, &b);
    let distinct = flow_disagreement > DISTINCT_THRESHOLD;
    let mut layer_disagreement = Vec::with_capacity(g.layers() + 1);
    for layer in 1..=g.layers() + 1 {
        let oa = token_outflows(&a, &g, layer)?;
        let ob = token_outflows(&b, &g, layer)?;
        layer_disagreement.push(linf_distance(&oa, &ob));
    }
    Ok(Corollary1Report {
        verdict: if distinct { Verdict::Distinct } else { Verdict::Inconclusive },
        source: distinct.then_some(source),
        value_a: dirs.value_backward,
        value_b,
        flow_disagreement,
        attribution_disagreement: layer_disagreement.iter().cloned().fold(0.0, f64::max),
        attributions_a: token_outflows(&a, &g, INPUT_LAYER)?,
        attributions_b: token_outflows(&b, &g, INPUT_LAYER)?,
        layer_disagreement,
        flows_a: a,
        flows_b: b,
    })
}

/// Residual arc: edge index and whether it runs along the edge.
#[derive(Clone, Copy)]
struct Arc {
    edge: usize,
    forward: bool,
    to: usize,
}

/// Look for a cycle of residual arcs on `g` and push half its bottleneck
/// around it. Cycles never reuse an edge, so the result is a different flow
/// with the same value.
fn shift_along_residual_cycle(g: &LayeredGraph, flow: &[f64], seed: u64, budget: usize) -> Option<Vec<f64>> {
    let tol = 1e-12 * g.edges().iter().fold(1.0f64, |m, e| m.max(e.upper));
    let n = g.node_count();
    let mut out: Vec<Vec<Arc>> = vec![Vec::new(); n];
    for (idx, (e, &f)) in g.edges().iter().zip(flow).enumerate() {
        if e.upper - f > tol {
            out[e.tail].push(Arc { edge: idx, forward: true, to: e.head });
        }
        if f - e.lower > tol {
            out[e.head].push(Arc { edge: idx, forward: false, to: e.tail });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..budget {
        let start = rng.gen_range(0..n);
        let mut position = vec![usize::MAX; n];
        let mut path: Vec<Arc> = Vec::new();
        let mut v = start;
        position[v] = 0;
        let close = loop {
            let last = path.last().map(|a| a.edge);
            let mut choices: Vec<&Arc> = out[v].iter().filter(|a| Some(a.edge) != last).collect();
            choices.shuffle(&mut rng);
            let Some(&arc) = choices.first().copied() else {
                break None;
            };
            path.push(arc);
            v = arc.to;
            if position[v] != usize::MAX {
                break Some(position[v]);
            }
            position[v] = path.len();
        };
        let Some(from) = close else { continue };
        let cycle = &path[from..];
        let mut used = vec![false; flow.len()];
        if cycle.iter().any(|a| core::mem::replace(&mut used[a.edge], true)) {
            continue;
        }
        let bottleneck = cycle
            .iter()
            .map(|a| {
                let e = g.edges()[a.edge];
                if a.forward { e.upper - flow[a.edge] } else { flow[a.edge] - e.lower }
            })
            .fold(f64::INFINITY, f64::min);
        let delta = 0.5 * bottleneck;
        let mut shifted = flow.to_vec();
        for a in cycle {
            shifted[a.edge] += if a.forward { delta } else { -delta };
        }
        return Some(shifted);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::BarrierSolver;
    use crate::graph::to_circulation;
    use crate::info_tensor::AggregationMode;
    use crate::maxflow::{max_flow_exact, CapacityScale};

    fn info(slices: &[Vec<Vec<f64>>]) -> InfoTensor {
        InfoTensor::from_nested(slices, AggregationMode::Af).unwrap()
    }

    fn solve(g: &LayeredGraph) -> FlowSolution {
        BarrierSolver::default().solve(&to_circulation(g)).unwrap()
    }

    #[test]
    fn uniform_pair_splits_evenly() {
        let g = build_graph(&info(&[vec![vec![0.5, 0.5], vec![0.5, 0.5]]]), Direction::Backward).unwrap();
        let a = attribute(&solve(&g), &g, INPUT_LAYER, true).unwrap();
        assert!((a.token_scores[0] - 0.5).abs() < 1e-9);
        assert!((a.token_scores[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn six_node_scores_sum_to_value() {
        let g = build_graph(&info(&[vec![vec![0.5, 0.5], vec![0.3, 0.7]]]), Direction::Backward).unwrap();
        let a = attribute(&solve(&g), &g, INPUT_LAYER, false).unwrap();
        let sum: f64 = a.token_scores.iter().sum();
        assert!((sum - 2.0).abs() < 1e-6, "{sum}");
    }

    #[test]
    fn exact_flows_are_refused() {
        let g = build_graph(&info(&[vec![vec![0.5, 0.5], vec![0.3, 0.7]]]), Direction::Backward).unwrap();
        let exact = max_flow_exact(&g, CapacityScale::Real);
        assert!(matches!(attribute(&exact, &g, 1, false), Err(Error::Invalid(_))));
    }

    #[test]
    fn length_mismatch_and_bad_layer() {
        let g = build_graph(&info(&[vec![vec![0.5, 0.5], vec![0.3, 0.7]]]), Direction::Backward).unwrap();
        let mut flow = solve(&g);
        assert!(attribute(&flow, &g, 3, false).is_err());
        flow.per_edge.truncate(3);
        assert!(matches!(attribute(&flow, &g, 1, false), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_flow_cannot_be_normalized() {
        let g = build_graph(&info(&[vec![vec![1.0]]]), Direction::Backward).unwrap();
        let flow = FlowSolution {
            per_edge: vec![0.0; g.edges().len() + 1],
            value: 0.0,
            solver: SolverKind::Barrier,
            residual: 0.0,
            mu_final: None,
        };
        assert_eq!(attribute(&flow, &g, 1, true), Err(Error::DegenerateNormalization));
        assert_eq!(attribute(&flow, &g, 1, false).unwrap().token_scores, vec![0.0]);
    }

    #[test]
    fn payoff_rules() {
        let g = build_graph(&info(&[vec![vec![0.5, 0.5], vec![0.3, 0.7]]]), Direction::Backward).unwrap();
        let flow = solve(&g);
        assert_eq!(payoff(&flow, &g, &[]).unwrap(), 0.0);
        let input: Vec<usize> = g.layer_nodes(1).collect();
        let all = payoff(&flow, &g, &input).unwrap();
        assert!((all - flow.value).abs() < 1e-6);
        let single = payoff(&flow, &g, &input[..1]).unwrap();
        let a = attribute(&flow, &g, 1, false).unwrap();
        assert_eq!(single, a.token_scores[0]);
        let mixed = [g.token_node(1, 0), g.token_node(2, 0)];
        assert!(payoff(&flow, &g, &mixed).is_err());
        assert!(payoff(&flow, &g, &[0]).is_err());
    }

    #[test]
    fn shapley_weights_match_closed_forms() {
        // Glove game: player 0 owns a left glove, players 1 and 2 right gloves.
        let phi = shapley_exact(3, |m| if m & 1 == 1 && m & 6 != 0 { 1.0 } else { 0.0 }).unwrap();
        assert!((phi[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((phi[1] - 1.0 / 6.0).abs() < 1e-12);
        assert!((phi[2] - 1.0 / 6.0).abs() < 1e-12);
        // Unanimity game on all four players.
        let phi = shapley_exact(4, |m| if m == 15 { 1.0 } else { 0.0 }).unwrap();
        assert!(phi.iter().all(|p| (p - 0.25).abs() < 1e-12));
        assert!(shapley_exact(0, |_| 0.0).unwrap().is_empty());
        assert!(shapley_exact(MAX_EXACT_PLAYERS + 1, |_| 0.0).is_err());
    }

    #[test]
    fn axiom_report_passes_on_solved_graph() {
        let g = build_graph(&crate::synthetic::uniform_info_tensor(2, 2, 3).unwrap(), Direction::Backward).unwrap();
        let r = shapley_check(&solve(&g), &g, 1).unwrap();
        assert!(r.all_passed(), "{r:?}");
        assert!(r.brute_force.unwrap().worst_deviation <= 1e-12);
    }

    #[test]
    fn ranking_breaks_ties_by_index() {
        assert_eq!(ranking(&[0.2, 0.5, 0.2, 0.1]), vec![1, 0, 2, 3]);
        assert!(ranking(&[]).is_empty());
    }

    #[test]
    fn chain_is_inconclusive() {
        let r = corollary1_demo(&info(&[vec![vec![0.7]], vec![vec![0.3]]])).unwrap();
        assert_eq!(r.verdict, Verdict::Inconclusive);
        assert_eq!(r.attribution_disagreement, 0.0);
        assert_eq!(r.flow_disagreement, 0.0);
    }

    #[test]
    fn all_twos_graph_has_a_second_optimum() {
        let two = vec![vec![2.0, 2.0], vec![2.0, 2.0]];
        let r = corollary1_demo(&info(&[two])).unwrap();
        assert_eq!(r.verdict, Verdict::Distinct);
        assert_eq!(r.value_a, r.value_b);
        assert!((r.flow_disagreement - 1.0).abs() < 1e-9, "{}", r.flow_disagreement);
        // Every token carries its full capacity in both optima.
        assert_eq!(r.attribution_disagreement, 0.0);
    }
}
