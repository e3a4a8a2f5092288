use gaflow_core::attribution::{ranking, shapley_exact, token_outflows};
use gaflow_core::barrier::BarrierSolver;
use gaflow_core::graph::{build_graph, to_circulation, Direction, EdgeKind};
use gaflow_core::info_tensor::{aggregate, AggregationMode};
use gaflow_core::maxflow::{conservation_residual, max_flow_exact, CapacityScale};
use gaflow_core::evaluation::violation_ratio;
use gaflow_core::synthetic::{random_bundle, uniform_info_tensor};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(48) })]

    #[test]
    fn aggregated_tensors_are_nonnegative_and_bounded(seed in any::<u64>(), l in 1usize..4, h in 1usize..4, t in 1usize..6) {
        let bundle = random_bundle(seed, l, h, t).unwrap();
        for mode in [AggregationMode::Af, AggregationMode::Gf, AggregationMode::Agf] {
            let info = aggregate(&bundle, mode).unwrap();
            prop_assert_eq!(info.values().shape(), &[l, t, t][..]);
            for &v in info.values().data() {
                prop_assert!(v >= 0.0);
            }
        }
        // Head means of row-stochastic slices stay row-stochastic.
        let af = aggregate(&bundle, AggregationMode::Af).unwrap();
        for k in 0..l {
            for i in 0..t {
                let row: f64 = (0..t).map(|j| af.at(k, i, j)).sum();
                prop_assert!((row - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn graphs_follow_the_layered_pattern(seed in any::<u64>(), l in 1usize..5, t in 1usize..6, forward in any::<bool>()) {
        let dir = if forward { Direction::Forward } else { Direction::Backward };
        let g = build_graph(&uniform_info_tensor(seed, l, t).unwrap(), dir).unwrap();
        prop_assert_eq!(g.node_count(), t * (l + 1) + 2);
        prop_assert_eq!(g.edges().len(), l * t * t + 2 * t);
        let mut sources = 0;
        for (i, e) in g.edges().iter().enumerate() {
            match g.edge_kind(i) {
                EdgeKind::Source => {
                    sources += 1;
                    prop_assert_eq!(e.upper, t as f64);
                }
                EdgeKind::Sink => prop_assert_eq!(e.upper, t as f64),
                EdgeKind::Middle { layer } => prop_assert!((1..=l).contains(&layer)),
            }
            let scaled = g.scale_gamma() * e.upper;
            prop_assert!(g.integral_upper()[i] as f64 <= scaled + 1e-6 * scaled.max(1.0));
        }
        prop_assert_eq!(sources, t);
        let m = g.scale_gamma() * g.edges().iter().map(|e| e.upper).fold(f64::INFINITY, f64::min);
        prop_assert!((1.0..10.0).contains(&m));
        let p = to_circulation(&g);
        prop_assert_eq!(p.edge_count(), g.edges().len() + 1);
        let ret = p.edges()[p.return_edge().unwrap()];
        prop_assert_eq!((ret.tail, ret.head), (g.super_target(), g.super_source()));
    }

    #[test]
    fn exact_flows_are_feasible(seed in any::<u64>(), l in 1usize..5, t in 1usize..6) {
        let g = build_graph(&uniform_info_tensor(seed, l, t).unwrap(), Direction::Backward).unwrap();
        for scale in [CapacityScale::Integral, CapacityScale::Real] {
            let sol = max_flow_exact(&g, scale);
            prop_assert!(conservation_residual(&g, &sol.per_edge) < 1e-9);
            // Integral capacities may round f32 storage error up by an ulp.
            for (e, &f) in g.edges().iter().zip(&sol.per_edge) {
                prop_assert!(f >= -1e-12 && f <= e.upper * (1.0 + 4.0 * f64::from(f32::EPSILON)));
            }
            let input: f64 = token_outflows(&sol.per_edge, &g, 1).unwrap().iter().sum();
            prop_assert!((input - sol.value).abs() < 1e-9);
        }
    }

    #[test]
    fn barrier_iterates_stay_interior(seed in any::<u64>(), l in 1usize..4, t in 1usize..5) {
        let g = build_graph(&uniform_info_tensor(seed, l, t).unwrap(), Direction::Backward).unwrap();
        let p = to_circulation(&g);
        let sol = BarrierSolver::default().solve(&p).unwrap();
        for (e, &f) in p.edges().iter().zip(&sol.per_edge) {
            prop_assert!(f > e.lower && f < e.upper);
        }
        let exact = max_flow_exact(&g, CapacityScale::Real).value;
        prop_assert!((sol.value - exact).abs() <= 1e-6 * exact.max(1.0));
    }

    #[test]
    fn shapley_of_additive_games_is_the_weight_vector(w in prop::collection::vec(-5.0f64..5.0, 0..9)) {
        let phi = shapley_exact(w.len(), |mask| {
            w.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, x)| x).sum()
        }).unwrap();
        for (p, x) in phi.iter().zip(&w) {
            prop_assert!((p - x).abs() < 1e-9);
        }
    }

    #[test]
    fn shapley_is_efficient_on_arbitrary_games(values in prop::collection::vec(-1.0f64..1.0, 16)) {
        let game = |mask: u64| if mask == 0 { 0.0 } else { values[mask as usize] };
        let phi = shapley_exact(4, game).unwrap();
        let sum: f64 = phi.iter().sum();
        prop_assert!((sum - values[15]).abs() < 1e-12);
    }

    #[test]
    fn rankings_are_sorted_permutations(scores in prop::collection::vec(0.0f64..1.0, 0..20)) {
        let r = ranking(&scores);
        let mut sorted = r.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..scores.len()).collect::<Vec<_>>());
        for w in r.windows(2) {
            prop_assert!(scores[w[0]] > scores[w[1]] || (scores[w[0]] == scores[w[1]] && w[0] < w[1]));
        }
    }

    #[test]
    fn violation_ratios_of_swapped_samples_sum_to_one(
        a in prop::collection::vec(-1e3f64..1e3, 1..40),
        b in prop::collection::vec(-1e3f64..1e3, 1..40),
    ) {
        let sum = violation_ratio(&a, &b).unwrap() + violation_ratio(&b, &a).unwrap();
        prop_assert_eq!(sum, 1.0);
    }

    #[test]
    fn scaling_the_tensor_scales_only_middle_edges(seed in any::<u64>(), l in 1usize..4, t in 1usize..5, c in 0.1f64..10.0) {
        let info = uniform_info_tensor(seed, l, t).unwrap();
        let g = build_graph(&info, Direction::Backward).unwrap();
        let gc = build_graph(&info.scaled(c).unwrap(), Direction::Backward).unwrap();
        for (i, (a, b)) in g.edges().iter().zip(gc.edges()).enumerate() {
            prop_assert_eq!((a.tail, a.head), (b.tail, b.head));
            match g.edge_kind(i) {
                EdgeKind::Middle { .. } => prop_assert!((b.upper - c * a.upper).abs() <= 1e-6 * c * a.upper),
                _ => prop_assert_eq!(a.upper, b.upper),
            }
        }
    }
}
