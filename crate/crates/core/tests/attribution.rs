use gaflow_core::attribution::{
    attribute, corollary1_demo, ranking, shapley_check, shapley_exact, token_outflows, Verdict, INPUT_LAYER,
};
use gaflow_core::barrier::{BarrierConfig, BarrierSolver};
use gaflow_core::graph::{
    build_graph, build_graph_with, to_circulation, CircEdge, CirculationProblem, Direction, GraphOptions, LayeredGraph,
};
use gaflow_core::info_tensor::{AggregationMode, InfoTensor};
use gaflow_core::maxflow::FlowSolution;
use gaflow_core::synthetic::uniform_info_tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn solve(g: &LayeredGraph, eps: f64) -> FlowSolution {
    let solver = BarrierSolver::new(BarrierConfig { eps, ..Default::default() }).unwrap();
    solver.solve(&to_circulation(g)).unwrap()
}

#[test]
fn enumerated_shapley_matches_outflows_on_every_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for seed in 0..15u64 {
        let t = rng.gen_range(1..=5);
        let l = rng.gen_range(1..=3);
        let info = uniform_info_tensor(seed, l, t).unwrap();
        let g = build_graph(&info, Direction::Backward).unwrap();
        let flow = solve(&g, 1e-6);
        for layer in 1..=l + 1 {
            let scores = token_outflows(&flow.per_edge, &g, layer).unwrap();
            let nodes: Vec<usize> = g.layer_nodes(layer).collect();
            let game = |mask: u64| {
                let members: Vec<usize> =
                    nodes.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &v)| v).collect();
                gaflow_core::payoff(&flow, &g, &members).unwrap()
            };
            let phi = shapley_exact(t, game).unwrap();
            for (p, s) in phi.iter().zip(&scores) {
                assert!((p - s).abs() <= 1e-9, "seed {seed} layer {layer}: {p} vs {s}");
            }
            let sum: f64 = scores.iter().sum();
            assert!((sum - flow.value).abs() <= 1e-6, "seed {seed}: {sum} vs {}", flow.value);
            let report = shapley_check(&flow, &g, layer).unwrap();
            assert!(report.all_passed(), "{report:?}");
        }
    }
}

#[test]
fn swapping_two_tokens_leaves_a_symmetric_game() {
    // Tokens 0 and 1 are interchangeable: every slice is invariant under
    // swapping both its rows and its columns.
    let slice = |a: f64, b: f64, c: f64, d: f64| vec![vec![a, b, c], vec![b, a, c], vec![d, d, 0.4]];
    let info = InfoTensor::from_nested(
        &[slice(0.6, 0.2, 0.3, 0.5), slice(0.1, 0.7, 0.25, 0.45)],
        AggregationMode::Af,
    )
    .unwrap();
    for dir in [Direction::Backward, Direction::Forward] {
        let g = build_graph(&info, dir).unwrap();
        let a = attribute(&solve(&g, 1e-6), &g, INPUT_LAYER, false).unwrap();
        assert!((a.token_scores[0] - a.token_scores[1]).abs() <= 1e-6, "{:?}", a.token_scores);
    }
}

#[test]
fn a_token_with_only_tiny_capacities_gets_almost_nothing() {
    let eps = 1e-12;
    let strong = vec![vec![0.8, 0.3, 0.0], vec![0.2, 0.9, 0.0], vec![0.0, 0.0, 0.0]];
    let info = InfoTensor::from_nested(&[strong.clone(), strong], AggregationMode::Af).unwrap();
    let g = build_graph_with(&info, Direction::Backward, GraphOptions { epsilon_smooth: eps }).unwrap();
    let a = attribute(&solve(&g, 1e-6), &g, INPUT_LAYER, false).unwrap();
    // Token 2 reaches the sink through three eps edges from the layer above.
    let degree = 3.0;
    assert!(a.token_scores[2] <= degree * eps, "{:?}", a.token_scores);
}

#[test]
fn doubling_every_capacity_keeps_normalized_scores() {
    let solver = BarrierSolver::new(BarrierConfig { eps: 1e-8, ..Default::default() }).unwrap();
    for seed in 0..12u64 {
        let info = uniform_info_tensor(seed, 1 + (seed % 3) as usize, 2 + (seed % 4) as usize).unwrap();
        let g = build_graph(&info, Direction::Backward).unwrap();
        let p = to_circulation(&g);
        let doubled: Vec<CircEdge> = p.edges().iter().map(|e| CircEdge { upper: 2.0 * e.upper, ..*e }).collect();
        let p2 = CirculationProblem::new(p.node_count(), doubled).unwrap();
        let a = attribute(&solver.solve(&p).unwrap(), &g, INPUT_LAYER, true).unwrap();
        let b = attribute(&solver.solve(&p2).unwrap(), &g, INPUT_LAYER, true).unwrap();
        for (x, y) in a.token_scores.iter().zip(&b.token_scores) {
            assert!((x - y).abs() <= 1e-4, "seed {seed}: {x} vs {y}");
        }
        assert_eq!(ranking(&a.token_scores)[0], ranking(&b.token_scores)[0]);
    }
}

#[test]
fn scores_are_nonnegative_and_normalize_to_one() {
    for seed in 0..10u64 {
        let info = uniform_info_tensor(seed, 3, 4).unwrap();
        let g = build_graph(&info, Direction::Forward).unwrap();
        let flow = solve(&g, 1e-6);
        for layer in 1..=4 {
            let a = attribute(&flow, &g, layer, true).unwrap();
            assert!(a.token_scores.iter().all(|&s| s >= -1e-9));
            let sum: f64 = a.token_scores.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn seeded_tensor_refutes_exact_attributions() {
    let info = uniform_info_tensor(7, 4, 3).unwrap();
    let r = corollary1_demo(&info).unwrap();
    assert_eq!(r.verdict, Verdict::Distinct);
    assert_eq!(r.value_a, r.value_b);
    assert!(r.attribution_disagreement > 1e-6);
    // The same tensor solved through the barrier gives one answer whatever
    // the direction.
    let back = build_graph(&info, Direction::Backward).unwrap();
    let fwd = build_graph(&info, Direction::Forward).unwrap();
    let fb = solve(&back, 1e-6);
    let ff = solve(&fwd, 1e-6);
    let mapped = gaflow_core::maxflow::map_flows(&fwd, &ff.per_edge[..fwd.edges().len()], &back).unwrap();
    for layer in 1..=5 {
        let sb = token_outflows(&fb.per_edge, &back, layer).unwrap();
        let sf = token_outflows(&mapped, &back, layer).unwrap();
        for (x, y) in sb.iter().zip(&sf) {
            assert!((x - y).abs() < 1e-5, "layer {layer}: {x} vs {y}");
        }
    }
}
