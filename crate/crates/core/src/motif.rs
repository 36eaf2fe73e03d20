//! Mining of n-clique interaction-order samples.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IopError, Result};
use crate::graph::{static_projection, EdgeEvent, NodeId, Pair, StaticGraph, TemporalGraph, Timestamp};
use crate::seqspace::{EdgeVocab, PermutationLabel};

/// One clique with its neighborhood and ground-truth interaction order.
#[derive(Debug, Clone, PartialEq)]
pub struct IopSample {
    pub id: usize,
    /// Sorted clique members; clique-local position `i` is `clique[i]`.
    pub clique: Vec<NodeId>,
    pub subgraph: TemporalGraph,
    pub label: PermutationLabel,
    pub completion_time: Timestamp,
    pub tied: bool,
}

impl IopSample {
    pub fn n(&self) -> usize {
        self.clique.len()
    }

    pub fn vocab(&self) -> EdgeVocab {
        EdgeVocab::new(self.n())
    }

    /// Global pair for a clique-local token id.
    pub fn pair_of(&self, vocab: &EdgeVocab, id: usize) -> Pair {
        let t = vocab.token(id);
        Pair {
            lo: self.clique[t.a],
            hi: self.clique[t.b],
        }
    }
}

/// Result of ordering a clique's edges by first interaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderLabel {
    pub label: PermutationLabel,
    pub completion_time: Timestamp,
    pub tied: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetSplit {
    pub train: Vec<IopSample>,
    pub validation: Vec<IopSample>,
    pub test: Vec<IopSample>,
}

/// Maximal cliques with exactly `n` members, each sorted, in ascending order.
pub fn enumerate_cliques(g: &StaticGraph, n: usize) -> Vec<Vec<NodeId>> {
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    let p: BTreeSet<NodeId> = g.nodes().collect();
    let mut r = Vec::with_capacity(n);
    bron_kerbosch(g, n, &mut r, p, BTreeSet::new(), &mut out);
    for c in &mut out {
        c.sort_unstable();
    }
    out.sort();
    out
}

fn bron_kerbosch(
    g: &StaticGraph,
    n: usize,
    r: &mut Vec<NodeId>,
    mut p: BTreeSet<NodeId>,
    mut x: BTreeSet<NodeId>,
    out: &mut Vec<Vec<NodeId>>,
) {
    if p.is_empty() {
        if x.is_empty() && r.len() == n {
            out.push(r.clone());
        }
        return;
    }
    // Every maximal clique below here is larger than n, or smaller than n.
    if r.len() >= n || r.len() + p.len() < n {
        return;
    }
    let empty = BTreeSet::new();
    let pivot = p
        .iter()
        .chain(x.iter())
        .copied()
        .max_by_key(|&u| {
            let nu = g.neighbors(u).unwrap_or(&empty);
            (p.intersection(nu).count(), std::cmp::Reverse(u))
        })
        .expect("p is non-empty");
    let pivot_nbrs = g.neighbors(pivot).unwrap_or(&empty);
    let candidates: Vec<NodeId> = p.difference(pivot_nbrs).copied().collect();
    for v in candidates {
        let nv = g.neighbors(v).unwrap_or(&empty);
        let next_p = p.intersection(nv).copied().collect();
        let next_x = x.intersection(nv).copied().collect();
        r.push(v);
        bron_kerbosch(g, n, r, next_p, next_x, out);
        r.pop();
        p.remove(&v);
        x.insert(v);
    }
}

/// Vertices within `k` hops of `seeds` in `sg`.
pub fn khop_nodes(sg: &StaticGraph, seeds: &[NodeId], k: usize) -> Result<BTreeMap<NodeId, usize>> {
    let mut dist = BTreeMap::new();
    let mut queue = VecDeque::new();
    for &s in seeds {
        if !sg.contains_node(s) {
            return Err(IopError::UnknownNode(s));
        }
        if dist.insert(s, 0).is_none() {
            queue.push_back(s);
        }
    }
    while let Some(u) = queue.pop_front() {
        let d = dist[&u];
        if d == k {
            continue;
        }
        for &w in sg.neighbors(u).into_iter().flatten() {
            if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(w) {
                e.insert(d + 1);
                queue.push_back(w);
            }
        }
    }
    Ok(dist)
}

/// Induced temporal subgraph over the `k`-hop neighborhood of `seeds`.
pub fn khop_subgraph(g: &TemporalGraph, seeds: &[NodeId], k: usize) -> Result<TemporalGraph> {
    khop_subgraph_in(g, &static_projection(g), seeds, k)
}

/// [`khop_subgraph`] against a precomputed static projection of `g`.
pub fn khop_subgraph_in(g: &TemporalGraph, sg: &StaticGraph, seeds: &[NodeId], k: usize) -> Result<TemporalGraph> {
    let keep = khop_nodes(sg, seeds, k)?;
    let mut events = Vec::new();
    for &a in keep.keys() {
        for &b in sg.neighbors(a).into_iter().flatten().filter(|&&b| b > a) {
            if keep.contains_key(&b) {
                let pair = Pair { lo: a, hi: b };
                for &t in g.times(pair).unwrap_or(&[]) {
                    events.push(EdgeEvent { u: a, v: b, t });
                }
            }
        }
    }
    Ok(TemporalGraph::from_events(events))
}

/// Clique edges sorted by first-interaction time, ties broken by canonical
/// edge order.
pub fn interaction_order_label(g: &TemporalGraph, clique: &[NodeId]) -> Result<OrderLabel> {
    let mut members = clique.to_vec();
    members.sort_unstable();
    members.dedup();
    let vocab = EdgeVocab::new(members.len());
    let mut timed = Vec::with_capacity(vocab.len());
    for (id, tok) in vocab.tokens().iter().enumerate() {
        let (a, b) = (members[tok.a], members[tok.b]);
        let pair = Pair { lo: a, hi: b };
        let t = g.first_time(pair).ok_or(IopError::InvalidClique(a, b))?;
        timed.push((t, id));
    }
    // (time, id) order: ids are already canonical, so this breaks ties lexicographically.
    timed.sort_unstable();
    let tied = timed.windows(2).any(|w| w[0].0 == w[1].0);
    let completion_time = timed.last().map_or(0, |&(t, _)| t);
    let label = PermutationLabel::new(timed.into_iter().map(|(_, id)| id).collect(), &vocab)?;
    Ok(OrderLabel {
        label,
        completion_time,
        tied,
    })
}

pub fn build_dataset(g: &TemporalGraph, n: usize, k: usize) -> Result<Vec<IopSample>> {
    let sg = static_projection(g);
    enumerate_cliques(&sg, n)
        .into_iter()
        .enumerate()
        .map(|(id, clique)| {
            let subgraph = khop_subgraph_in(g, &sg, &clique, k)?;
            let order = interaction_order_label(g, &clique)?;
            Ok(IopSample {
                id,
                clique,
                subgraph,
                label: order.label,
                completion_time: order.completion_time,
                tied: order.tied,
            })
        })
        .collect()
}

/// Cumulative floor partition sizes `(train, validation, test)`.
pub fn split_sizes(total: usize, ratios: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(IopError::Config(format!(
            "split ratios {a}/{b}/{c} must be non-negative and sum to 1"
        )));
    }
    if total < 3 {
        return Err(IopError::Split(total));
    }
    let cut = |r: f64| ((r * total as f64) + 1e-9).floor() as usize;
    let train_end = cut(a).min(total);
    let val_end = cut(a + b).clamp(train_end, total);
    Ok((train_end, val_end - train_end, total - val_end))
}

fn partition(samples: Vec<IopSample>, sizes: (usize, usize, usize)) -> DatasetSplit {
    let mut iter = samples.into_iter();
    let train = iter.by_ref().take(sizes.0).collect();
    let validation = iter.by_ref().take(sizes.1).collect();
    let test = iter.collect();
    DatasetSplit {
        train,
        validation,
        test,
    }
}

/// Stable sort by completion time, then cumulative-ratio partition.
pub fn chronological_split(mut samples: Vec<IopSample>, ratios: (f64, f64, f64)) -> Result<DatasetSplit> {
    let sizes = split_sizes(samples.len(), ratios)?;
    samples.sort_by_key(|s| s.completion_time);
    Ok(partition(samples, sizes))
}

/// Seeded shuffle, then cumulative-ratio partition.
pub fn random_split(mut samples: Vec<IopSample>, ratios: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    let sizes = split_sizes(samples.len(), ratios)?;
    samples.sort_by_key(|s| s.id);
    samples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(partition(samples, sizes))
}

/// Line-delimited JSON form of an [`IopSample`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: usize,
    pub clique: Vec<NodeId>,
    pub label: String,
    pub completion_time: Timestamp,
    pub tied: bool,
    /// `[u, v, t]` triples of the neighborhood subgraph.
    pub events: Vec<(NodeId, NodeId, Timestamp)>,
}

impl From<&IopSample> for SampleRecord {
    fn from(s: &IopSample) -> Self {
        SampleRecord {
            id: s.id,
            clique: s.clique.clone(),
            label: s.vocab().format_sequence(s.label.ids()),
            completion_time: s.completion_time,
            tied: s.tied,
            events: s.subgraph.events().iter().map(|e| (e.u, e.v, e.t)).collect(),
        }
    }
}

impl TryFrom<SampleRecord> for IopSample {
    type Error = IopError;

    fn try_from(r: SampleRecord) -> Result<Self> {
        let vocab = EdgeVocab::new(r.clique.len());
        let label = PermutationLabel::new(vocab.parse_sequence(&r.label)?, &vocab)?;
        let events = r
            .events
            .iter()
            .map(|&(u, v, t)| {
                EdgeEvent::new(u, v, t).ok_or_else(|| IopError::InvalidSample(format!("self-loop on node {u}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(IopSample {
            id: r.id,
            clique: r.clique,
            subgraph: TemporalGraph::from_events(events),
            label,
            completion_time: r.completion_time,
            tied: r.tied,
        })
    }
}

pub fn write_samples<W: Write>(mut w: W, samples: &[IopSample]) -> Result<()> {
    for s in samples {
        serde_json::to_writer(&mut w, &SampleRecord::from(s))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_samples<R: BufRead>(r: R) -> Result<Vec<IopSample>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(&line)?;
        out.push(rec.try_into()?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{parse_edge_list_str, synth_generate, SynthParams};

    fn graph(text: &str) -> TemporalGraph {
        parse_edge_list_str(text).unwrap().0
    }

    #[test]
    fn triangle_with_pendant() {
        let g = graph("1 2 1\n2 3 2\n1 3 3\n3 4 4\n");
        assert_eq!(enumerate_cliques(&static_projection(&g), 3), vec![vec![1, 2, 3]]);
    }

    #[test]
    fn k4_is_not_a_three_clique() {
        let g = graph("1 2 1\n1 3 1\n1 4 1\n2 3 1\n2 4 1\n3 4 1\n");
        let sg = static_projection(&g);
        assert!(enumerate_cliques(&sg, 3).is_empty());
        assert_eq!(enumerate_cliques(&sg, 4), vec![vec![1, 2, 3, 4]]);
    }

    #[test]
    fn edgeless_graph_has_no_cliques() {
        let sg = StaticGraph::from_pairs(&[1, 2, 3], []);
        assert!(enumerate_cliques(&sg, 3).is_empty());
    }

    #[test]
    fn khop_closure() {
        let g = graph("1 2 1\n2 3 2\n1 3 3\n3 4 4\n4 5 5\n");
        let k0 = khop_subgraph(&g, &[1, 2, 3], 0).unwrap();
        assert_eq!(k0.nodes(), &[1, 2, 3]);
        assert_eq!(k0.num_events(), 3);
        let k1 = khop_subgraph(&g, &[1, 2, 3], 1).unwrap();
        assert_eq!(k1.nodes(), &[1, 2, 3, 4]);
        let k9 = khop_subgraph(&g, &[1, 2, 3], 9).unwrap();
        assert_eq!(k9, g);
        assert!(matches!(khop_subgraph(&g, &[1, 99], 1), Err(IopError::UnknownNode(99))));
    }

    #[test]
    fn labels_follow_first_interactions() {
        let vocab = EdgeVocab::new(3);
        let g = graph("1 2 5\n2 3 7\n1 3 9\n");
        let l = interaction_order_label(&g, &[1, 2, 3]).unwrap();
        assert_eq!(vocab.format_sequence(l.label.ids()), "12 23 13");
        assert!(!l.tied);
        assert_eq!(l.completion_time, 9);

        let g = graph("1 2 20\n1 2 5\n2 3 7\n1 3 9\n");
        let l = interaction_order_label(&g, &[3, 1, 2]).unwrap();
        assert_eq!(vocab.format_sequence(l.label.ids()), "12 23 13");

        let g = graph("1 2 5\n1 3 5\n2 3 9\n");
        let l = interaction_order_label(&g, &[1, 2, 3]).unwrap();
        assert_eq!(vocab.format_sequence(l.label.ids()), "12 13 23");
        assert!(l.tied);
    }

    #[test]
    fn label_requires_clique() {
        let g = graph("1 2 5\n2 3 7\n");
        assert!(matches!(
            interaction_order_label(&g, &[1, 2, 3]),
            Err(IopError::InvalidClique(1, 3))
        ));
    }

    #[test]
    fn planted_triangles_become_samples() {
        let g = synth_generate(SynthParams {
            num_nodes: 8,
            num_cliques: 2,
            n: 3,
            noise_edges: 0,
            seed: 3,
        })
        .unwrap();
        let samples = build_dataset(&g, 3, 1).unwrap();
        assert_eq!(samples.len(), 2);
        for s in &samples {
            assert_eq!(s.label.ids(), &[0, 1, 2]);
        }
    }

    fn dummy(id: usize, t: Timestamp) -> IopSample {
        let vocab = EdgeVocab::new(3);
        IopSample {
            id,
            clique: vec![0, 1, 2],
            subgraph: TemporalGraph::default(),
            label: PermutationLabel::identity(&vocab),
            completion_time: t,
            tied: false,
        }
    }

    #[test]
    fn split_arithmetic() {
        assert_eq!(split_sizes(10, (0.8, 0.1, 0.1)).unwrap(), (8, 1, 1));
        assert_eq!(split_sizes(7135, (0.8, 0.1, 0.1)).unwrap(), (5708, 713, 714));
        assert_eq!(split_sizes(1304, (0.8, 0.1, 0.1)).unwrap(), (1043, 130, 131));
        assert!(matches!(split_sizes(2, (0.8, 0.1, 0.1)), Err(IopError::Split(2))));
        assert!(matches!(split_sizes(10, (0.8, 0.1, 0.2)), Err(IopError::Config(_))));
    }

    #[test]
    fn chronological_split_orders_and_is_stable() {
        let samples: Vec<_> = (0..10).map(|i| dummy(i, (10 - i) as i64)).collect();
        let split = chronological_split(samples, (0.8, 0.1, 0.1)).unwrap();
        let max_train = split.train.iter().map(|s| s.completion_time).max().unwrap();
        let min_test = split.test.iter().map(|s| s.completion_time).min().unwrap();
        assert!(max_train <= min_test);
        assert_eq!(split.test[0].id, 0);

        let same: Vec<_> = (0..10).map(|i| dummy(i, 4)).collect();
        let split = chronological_split(same, (0.8, 0.1, 0.1)).unwrap();
        let ids: Vec<_> = split
            .train
            .iter()
            .chain(&split.validation)
            .chain(&split.test)
            .map(|s| s.id)
            .collect();
        assert_eq!(ids, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn random_split_is_seeded_partition() {
        let samples: Vec<_> = (0..20).map(|i| dummy(i, i as i64)).collect();
        let a = random_split(samples.clone(), (0.8, 0.1, 0.1), 5).unwrap();
        let b = random_split(samples, (0.8, 0.1, 0.1), 5).unwrap();
        assert_eq!(a, b);
        let mut ids: Vec<_> = a
            .train
            .iter()
            .chain(&a.validation)
            .chain(&a.test)
            .map(|s| s.id)
            .collect();
        ids.sort();
        assert_eq!(ids, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn sample_records_round_trip() {
        let g = graph("1 2 5\n2 3 7\n1 3 9\n3 4 11\n1 2 12\n");
        let samples = build_dataset(&g, 3, 1).unwrap();
        let mut buf = Vec::new();
        write_samples(&mut buf, &samples).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("\"label\":\"12 23 13\""), "{text}");
        assert_eq!(read_samples(buf.as_slice()).unwrap(), samples);
    }
}
