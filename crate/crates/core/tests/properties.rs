//! Property tests for cross-module invariants.

use std::collections::BTreeSet;

use iop_core::graph::{
    first_interaction_times, parse_edge_list_str, static_projection, EdgeEvent, NodeId, StaticGraph, TemporalGraph,
};
use iop_core::models::{
    train_dyn_embeddings, DynTrainConfig, EncoderConfig, EncoderInput, IopModel, PermutationClassifier, Pooling,
    TatModel,
};
use iop_core::motif::{build_dataset, chronological_split, enumerate_cliques};
use iop_core::nn::{attention_weights, AdamConfig, Tape, TimeEncoding};
use iop_core::seqspace::is_permutation;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn events(max_node: u64, max_len: usize) -> impl Strategy<Value = Vec<(u64, u64, i64)>> {
    prop::collection::vec((0..max_node, 0..max_node, 0i64..60), 1..max_len)
}

fn to_text(events: &[(u64, u64, i64)]) -> String {
    events.iter().map(|(u, v, t)| format!("{u} {v} {t}\n")).collect()
}

fn graph_of(events: &[(u64, u64, i64)]) -> Option<TemporalGraph> {
    parse_edge_list_str(&to_text(events)).ok().map(|(g, _)| g)
}

/// All `n`-subsets that are cliques no outside node extends.
fn brute_force_cliques(sg: &StaticGraph, n: usize) -> BTreeSet<Vec<NodeId>> {
    let nodes: Vec<NodeId> = sg.nodes().collect();
    let mut out = BTreeSet::new();
    let mut pick = Vec::new();
    fn rec(
        sg: &StaticGraph,
        nodes: &[NodeId],
        start: usize,
        n: usize,
        pick: &mut Vec<NodeId>,
        out: &mut BTreeSet<Vec<NodeId>>,
    ) {
        if pick.len() == n {
            let clique = pick
                .iter()
                .enumerate()
                .all(|(i, &a)| pick[i + 1..].iter().all(|&b| sg.is_adjacent(a, b)));
            let maximal = !nodes
                .iter()
                .any(|w| !pick.contains(w) && pick.iter().all(|&a| sg.is_adjacent(a, *w)));
            if clique && maximal {
                out.insert(pick.clone());
            }
            return;
        }
        for i in start..nodes.len() {
            pick.push(nodes[i]);
            rec(sg, nodes, i + 1, n, pick, out);
            pick.pop();
        }
    }
    rec(sg, &nodes, 0, n, &mut pick, &mut out);
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn edge_list_round_trips(evs in events(20, 60)) {
        let Some(g) = graph_of(&evs) else { return Ok(()) };
        let (again, _) = parse_edge_list_str(&g.to_edge_list()).unwrap();
        prop_assert_eq!(again, g);
    }

    #[test]
    fn pair_times_are_consistent(evs in events(15, 60)) {
        let Some(g) = graph_of(&evs) else { return Ok(()) };
        prop_assert!(g.num_static_edges() <= g.num_events());
        let static_pairs: BTreeSet<_> = g.static_edges().collect();
        let timed_pairs: BTreeSet<_> = g.per_pair_times().keys().copied().collect();
        prop_assert_eq!(&static_pairs, &timed_pairs);
        let mut total = 0;
        for (pair, times) in g.per_pair_times() {
            prop_assert!(pair.lo < pair.hi);
            prop_assert!(!times.is_empty() && times.windows(2).all(|w| w[0] <= w[1]));
            total += times.len();
        }
        prop_assert_eq!(total, g.num_events());
        for (pair, first) in first_interaction_times(&g) {
            prop_assert!(g.times(pair).unwrap().contains(&first));
        }
    }

    #[test]
    fn line_order_does_not_change_pair_times(
        (evs, shuffled) in events(12, 40).prop_flat_map(|e| (Just(e.clone()), Just(e).prop_shuffle()))
    ) {
        let (Some(a), Some(b)) = (graph_of(&evs), graph_of(&shuffled)) else { return Ok(()) };
        prop_assert_eq!(a.per_pair_times(), b.per_pair_times());
        prop_assert_eq!(a.num_events(), b.num_events());
    }

    #[test]
    fn cliques_match_brute_force(
        edges in prop::collection::vec((0u64..11, 0u64..11), 1..45),
        n in 3usize..=5,
    ) {
        let evs: Vec<_> = edges.iter().enumerate().map(|(i, &(u, v))| (u, v, i as i64)).collect();
        let Some(g) = graph_of(&evs) else { return Ok(()) };
        let sg = static_projection(&g);
        let found: BTreeSet<Vec<NodeId>> = enumerate_cliques(&sg, n)
            .into_iter()
            .map(|mut c| { c.sort(); c })
            .collect();
        prop_assert_eq!(found, brute_force_cliques(&sg, n));
    }

    #[test]
    fn samples_are_valid(evs in events(10, 50), n in 3usize..=4) {
        let Some(g) = graph_of(&evs) else { return Ok(()) };
        let sg = static_projection(&g);
        for s in build_dataset(&g, n, 1).unwrap() {
            prop_assert!(is_permutation(s.label.ids(), n * (n - 1) / 2));
            for (i, &a) in s.clique.iter().enumerate() {
                prop_assert!(s.subgraph.contains_node(a));
                for &b in &s.clique[i + 1..] {
                    prop_assert!(sg.is_adjacent(a, b));
                }
            }
        }
    }

    #[test]
    fn chronological_split_separates_train_and_test(evs in events(9, 80)) {
        let Some(g) = graph_of(&evs) else { return Ok(()) };
        let samples = build_dataset(&g, 3, 1).unwrap();
        let total = samples.len();
        let Ok(split) = chronological_split(samples, (0.8, 0.1, 0.1)) else { return Ok(()) };
        let mut ids: Vec<usize> = split.train.iter().chain(&split.validation).chain(&split.test).map(|s| s.id).collect();
        ids.sort();
        prop_assert_eq!(ids, (0..total).collect::<Vec<_>>());
        let max_train = split.train.iter().map(|s| s.completion_time).max();
        let min_test = split.test.iter().map(|s| s.completion_time).min();
        if let (Some(a), Some(b)) = (max_train, min_test) {
            prop_assert!(a <= b);
        }
    }

    #[test]
    fn attention_weights_are_a_distribution(
        query in prop::collection::vec(-20.0f64..20.0, 4),
        keys in prop::collection::vec(prop::collection::vec(-20.0f64..20.0, 4), 1..10),
    ) {
        let w = attention_weights(&query, &keys);
        prop_assert_eq!(w.len(), keys.len());
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forward_and_backward_are_bit_identical(evs in events(10, 40), seed in 0u64..1000) {
        let Some(g) = graph_of(&evs) else { return Ok(()) };
        let Some(sample) = build_dataset(&g, 3, 1).unwrap().into_iter().next() else { return Ok(()) };
        let cfg = EncoderConfig {
            dim: 4,
            time: TimeEncoding::new(2, 10_000.0).unwrap(),
            layers: 2,
            max_neighbors: 4,
            mask_target_edges: true,
        };
        let input = EncoderInput::prepare(&sample, &cfg).unwrap();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = TatModel::new(cfg, Pooling::Concat, 3, &mut rng, |p, d, r| {
                PermutationClassifier::new(p, 3, d, 4, r)
            })
            .unwrap();
            let mut tape = Tape::new(m.params());
            let loss = m.loss(&mut tape, &input, &sample.label).unwrap();
            let grads = tape.backward(loss);
            let flat: Vec<u64> = m.params().ids().flat_map(|id| grads.get(id).unwrap_or(&[]).to_vec()).map(f64::to_bits).collect();
            (tape.scalar(loss).to_bits(), flat)
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn dyn_updates_never_pass_the_stream_end(evs in events(12, 60), seed in 0u64..1000) {
        let Some(g) = graph_of(&evs) else { return Ok(()) };
        let cfg = DynTrainConfig { dim: 3, epochs: 1, batch_size: 4, adam: AdamConfig::with_lr(0.01) };
        let emb = train_dyn_embeddings(&g, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let end = g.events().iter().map(|e: &EdgeEvent| e.t).max().unwrap();
        for &node in g.nodes() {
            let last = emb.table.last_update(node).unwrap();
            prop_assert!(last.is_some_and(|t| t <= end));
        }
        prop_assert!(emb.table.rows().iter().flatten().all(|x| x.is_finite()));
    }
}

#[test]
fn brute_force_oracle_sees_maximality() {
    // K4 on 1..=4 plus a triangle 4-5-6 sharing node 4.
    let text = "1 2 1\n1 3 2\n1 4 3\n2 3 4\n2 4 5\n3 4 6\n4 5 7\n5 6 8\n4 6 9\n";
    let g = parse_edge_list_str(text).unwrap().0;
    let sg = static_projection(&g);
    assert_eq!(brute_force_cliques(&sg, 3), BTreeSet::from([vec![4, 5, 6]]));
    assert_eq!(brute_force_cliques(&sg, 4), BTreeSet::from([vec![1, 2, 3, 4]]));
    assert!(graph_of(&[(0, 1, 5), (1, 2, 6)]).is_some());
}
