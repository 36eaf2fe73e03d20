//! Timestamped undirected interaction data.
//!
//! A [`TemporalGraph`] holds every raw event (including repeated interactions
//! between the same pair) together with per-pair timestamp lists. It is
//! immutable once built.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IopError, Result};

pub type NodeId = u64;
pub type Timestamp = i64;

/// Unordered node pair stored with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pair {
    pub lo: NodeId,
    pub hi: NodeId,
}

impl Pair {
    /// Returns `None` for a self-loop.
    pub fn new(a: NodeId, b: NodeId) -> Option<Self> {
        match a.cmp(&b) {
            std::cmp::Ordering::Less => Some(Pair { lo: a, hi: b }),
            std::cmp::Ordering::Greater => Some(Pair { lo: b, hi: a }),
            std::cmp::Ordering::Equal => None,
        }
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.lo == node || self.hi == node
    }

    pub fn other(&self, node: NodeId) -> NodeId {
        if self.lo == node {
            self.hi
        } else {
            self.lo
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeEvent {
    pub u: NodeId,
    pub v: NodeId,
    pub t: Timestamp,
}

impl EdgeEvent {
    /// Canonicalizes the endpoints; `None` for self-loops.
    pub fn new(a: NodeId, b: NodeId, t: Timestamp) -> Option<Self> {
        Pair::new(a, b).map(|p| EdgeEvent { u: p.lo, v: p.hi, t })
    }

    pub fn pair(&self) -> Pair {
        Pair { lo: self.u, hi: self.v }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TemporalGraph {
    nodes: Vec<NodeId>,
    events: Vec<EdgeEvent>,
    per_pair_times: BTreeMap<Pair, Vec<Timestamp>>,
}

/// Counters collected while parsing an edge list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ParseStats {
    pub lines: usize,
    pub events: usize,
    pub self_loops_dropped: usize,
}

impl TemporalGraph {
    /// Builds a graph from canonical events. Events are stably sorted by time.
    pub fn from_events(mut events: Vec<EdgeEvent>) -> Self {
        events.sort_by_key(|e| e.t);
        let mut per_pair_times: BTreeMap<Pair, Vec<Timestamp>> = BTreeMap::new();
        let mut nodes = BTreeSet::new();
        for e in &events {
            per_pair_times.entry(e.pair()).or_default().push(e.t);
            nodes.insert(e.u);
            nodes.insert(e.v);
        }
        TemporalGraph {
            nodes: nodes.into_iter().collect(),
            events,
            per_pair_times,
        }
    }

    /// Sorted node ids.
    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn contains_node(&self, node: NodeId) -> bool {
        self.nodes.binary_search(&node).is_ok()
    }

    /// Position of `node` in [`Self::nodes`].
    pub fn node_index(&self, node: NodeId) -> Option<usize> {
        self.nodes.binary_search(&node).ok()
    }

    /// Chronologically sorted events.
    pub fn events(&self) -> &[EdgeEvent] {
        &self.events
    }

    pub fn num_events(&self) -> usize {
        self.events.len()
    }

    pub fn static_edges(&self) -> impl Iterator<Item = Pair> + '_ {
        self.per_pair_times.keys().copied()
    }

    pub fn num_static_edges(&self) -> usize {
        self.per_pair_times.len()
    }

    pub fn per_pair_times(&self) -> &BTreeMap<Pair, Vec<Timestamp>> {
        &self.per_pair_times
    }

    pub fn times(&self, pair: Pair) -> Option<&[Timestamp]> {
        self.per_pair_times.get(&pair).map(Vec::as_slice)
    }

    pub fn first_time(&self, pair: Pair) -> Option<Timestamp> {
        self.times(pair).and_then(|ts| ts.first().copied())
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Serializes to the `src dst timestamp` line format.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::with_capacity(self.events.len() * 16);
        for e in &self.events {
            let _ = writeln!(out, "{} {} {}", e.u, e.v, e.t);
        }
        out
    }

    /// Induced subgraph keeping every event whose endpoints are both in `keep`.
    pub fn induced(&self, keep: &BTreeSet<NodeId>) -> TemporalGraph {
        let events = self
            .events
            .iter()
            .filter(|e| keep.contains(&e.u) && keep.contains(&e.v))
            .copied()
            .collect();
        TemporalGraph::from_events(events)
    }

    /// Events with `t <= cutoff`.
    pub fn up_to(&self, cutoff: Timestamp) -> TemporalGraph {
        let end = self.events.partition_point(|e| e.t <= cutoff);
        TemporalGraph::from_events(self.events[..end].to_vec())
    }
}

/// Parses a whitespace-delimited edge list. Lines starting with `#` and blank
/// lines are skipped; fields after the third are ignored.
pub fn parse_edge_list<R: BufRead>(reader: R) -> Result<(TemporalGraph, ParseStats)> {
    let mut stats = ParseStats::default();
    let mut events = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        stats.lines = line_no;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let mut next = |what: &str| -> Result<&str> {
            fields.next().ok_or_else(|| IopError::Parse {
                line: line_no,
                msg: format!("missing {what} field"),
            })
        };
        let src = next("source")?;
        let dst = next("destination")?;
        let ts = next("timestamp")?;
        let parse_node = |s: &str| -> Result<NodeId> {
            s.parse().map_err(|_| IopError::Parse {
                line: line_no,
                msg: format!("invalid node id {s:?}"),
            })
        };
        let u = parse_node(src)?;
        let v = parse_node(dst)?;
        let t: Timestamp = ts.parse().map_err(|_| IopError::Parse {
            line: line_no,
            msg: format!("invalid timestamp {ts:?}"),
        })?;
        match EdgeEvent::new(u, v, t) {
            Some(e) => events.push(e),
            None => stats.self_loops_dropped += 1,
        }
    }
    if events.is_empty() {
        return Err(IopError::EmptyGraph);
    }
    stats.events = events.len();
    Ok((TemporalGraph::from_events(events), stats))
}

pub fn parse_edge_list_str(text: &str) -> Result<(TemporalGraph, ParseStats)> {
    parse_edge_list(text.as_bytes())
}

/// Earliest interaction time of every static edge.
pub fn first_interaction_times(g: &TemporalGraph) -> BTreeMap<Pair, Timestamp> {
    g.per_pair_times.iter().map(|(p, ts)| (*p, ts[0])).collect()
}

/// Undirected simple graph over the pairs that interacted at least once.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StaticGraph {
    adjacency: BTreeMap<NodeId, BTreeSet<NodeId>>,
    num_edges: usize,
}

impl StaticGraph {
    pub fn from_pairs<I: IntoIterator<Item = Pair>>(nodes: &[NodeId], pairs: I) -> Self {
        let mut adjacency: BTreeMap<NodeId, BTreeSet<NodeId>> = nodes.iter().map(|&n| (n, BTreeSet::new())).collect();
        let mut num_edges = 0;
        for p in pairs {
            if adjacency.entry(p.lo).or_default().insert(p.hi) {
                num_edges += 1;
            }
            adjacency.entry(p.hi).or_default().insert(p.lo);
        }
        StaticGraph { adjacency, num_edges }
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency.keys().copied()
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    pub fn contains_node(&self, node: NodeId) -> bool {
        self.adjacency.contains_key(&node)
    }

    pub fn neighbors(&self, node: NodeId) -> Option<&BTreeSet<NodeId>> {
        self.adjacency.get(&node)
    }

    pub fn degree(&self, node: NodeId) -> usize {
        self.adjacency.get(&node).map_or(0, BTreeSet::len)
    }

    pub fn is_adjacent(&self, a: NodeId, b: NodeId) -> bool {
        self.adjacency.get(&a).is_some_and(|n| n.contains(&b))
    }

    pub fn edges(&self) -> impl Iterator<Item = Pair> + '_ {
        self.adjacency
            .iter()
            .flat_map(|(&a, ns)| ns.range(a + 1..).map(move |&b| Pair { lo: a, hi: b }))
    }
}

pub fn static_projection(g: &TemporalGraph) -> StaticGraph {
    StaticGraph::from_pairs(g.nodes(), g.static_edges())
}

/// Parameters for [`synth_generate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthParams {
    pub num_nodes: usize,
    pub num_cliques: usize,
    pub n: usize,
    pub noise_edges: usize,
    pub seed: u64,
}

/// Plants `num_cliques` disjoint `n`-cliques whose edges first interact in
/// ascending lexicographic order, then adds `noise_edges` random events that
/// never touch a planted pair.
pub fn synth_generate(params: SynthParams) -> Result<TemporalGraph> {
    let SynthParams {
        num_nodes,
        num_cliques,
        n,
        noise_edges,
        seed,
    } = params;
    if n < 2 {
        return Err(IopError::Config(format!("clique size must be at least 2, got {n}")));
    }
    if num_nodes < n * num_cliques {
        return Err(IopError::Config(format!(
            "{num_cliques} disjoint {n}-cliques need at least {} nodes, got {num_nodes}",
            n * num_cliques
        )));
    }
    if noise_edges > 0 && num_nodes < 2 {
        return Err(IopError::Config("noise events need at least 2 nodes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<NodeId> = (0..num_nodes as NodeId).collect();
    ids.shuffle(&mut rng);

    let mut events = Vec::new();
    let mut planted = BTreeSet::new();
    let mut clock: Timestamp = 0;
    for c in 0..num_cliques {
        let mut members = ids[c * n..(c + 1) * n].to_vec();
        members.sort_unstable();
        for i in 0..n {
            for j in i + 1..n {
                clock += rng.random_range(1..=3);
                let e = EdgeEvent::new(members[i], members[j], clock).expect("distinct members");
                planted.insert(e.pair());
                events.push(e);
            }
        }
        clock += rng.random_range(1..=5);
    }

    let horizon = clock.max(1);
    let mut added = 0;
    let mut attempts = 0usize;
    while added < noise_edges {
        attempts += 1;
        if attempts > 1000 * (noise_edges + 1) {
            return Err(IopError::Config(
                "could not place noise events outside planted pairs".into(),
            ));
        }
        let a = rng.random_range(0..num_nodes as NodeId);
        let b = rng.random_range(0..num_nodes as NodeId);
        let Some(pair) = Pair::new(a, b) else { continue };
        if planted.contains(&pair) {
            continue;
        }
        let t = rng.random_range(0..=horizon);
        events.push(EdgeEvent {
            u: pair.lo,
            v: pair.hi,
            t,
        });
        added += 1;
    }
    Ok(TemporalGraph::from_events(events))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_simple_list() {
        let (g, stats) = parse_edge_list_str("1 2 5\n1 3 9\n").unwrap();
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.num_static_edges(), 2);
        assert_eq!(g.num_events(), 2);
        assert_eq!(stats.self_loops_dropped, 0);
    }

    #[test]
    fn repeated_pair_is_one_static_edge() {
        let (g, _) = parse_edge_list_str("# header\n1 2 5\n1 2 20\n").unwrap();
        assert_eq!(g.num_static_edges(), 1);
        assert_eq!(g.times(Pair::new(1, 2).unwrap()).unwrap(), &[5, 20]);
    }

    #[test]
    fn drops_self_loops_and_keeps_duplicates() {
        let (g, stats) = parse_edge_list_str("1 1 3\n2 1 4\n1 2 4\n\n").unwrap();
        assert_eq!(stats.self_loops_dropped, 1);
        assert_eq!(g.num_events(), 2);
        assert_eq!(g.events()[0], EdgeEvent { u: 1, v: 2, t: 4 });
    }

    #[test]
    fn reports_line_number_on_bad_field() {
        let err = parse_edge_list_str("1 2 3\n# c\n4 x 5\n").unwrap_err();
        assert!(matches!(err, IopError::Parse { line: 3, .. }), "{err}");
        let err = parse_edge_list_str("1 2\n").unwrap_err();
        assert!(matches!(err, IopError::Parse { line: 1, .. }));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(parse_edge_list_str(""), Err(IopError::EmptyGraph)));
        assert!(matches!(parse_edge_list_str("# only\n\n"), Err(IopError::EmptyGraph)));
        assert!(matches!(parse_edge_list_str("3 3 1\n"), Err(IopError::EmptyGraph)));
    }

    #[test]
    fn ties_keep_input_order() {
        let (g, _) = parse_edge_list_str("5 6 1\n1 2 1\n3 4 0\n").unwrap();
        let order: Vec<_> = g.events().iter().map(|e| (e.u, e.t)).collect();
        assert_eq!(order, vec![(3, 0), (5, 1), (1, 1)]);
    }

    #[test]
    fn first_interaction() {
        let (g, _) = parse_edge_list_str("1 2 20\n1 2 5\n3 4 7\n").unwrap();
        let first = first_interaction_times(&g);
        assert_eq!(first[&Pair::new(1, 2).unwrap()], 5);
        assert_eq!(first[&Pair::new(3, 4).unwrap()], 7);
        assert!(first_interaction_times(&TemporalGraph::default()).is_empty());
    }

    #[test]
    fn projection_dedups_pairs() {
        let (g, _) = parse_edge_list_str("1 2 5\n1 2 20\n2 3 7\n").unwrap();
        let s = static_projection(&g);
        let edges: Vec<_> = s.edges().collect();
        assert_eq!(edges, vec![Pair::new(1, 2).unwrap(), Pair::new(2, 3).unwrap()]);
        assert_eq!(s.num_nodes(), 3);
        assert_eq!(static_projection(&TemporalGraph::default()).num_edges(), 0);
    }

    #[test]
    fn synth_single_triangle() {
        let g = synth_generate(SynthParams {
            num_nodes: 3,
            num_cliques: 1,
            n: 3,
            noise_edges: 0,
            seed: 9,
        })
        .unwrap();
        let first = first_interaction_times(&g);
        let mut by_time: Vec<_> = first.iter().collect();
        by_time.sort_by_key(|(_, t)| **t);
        let order: Vec<Pair> = by_time.into_iter().map(|(p, _)| *p).collect();
        let mut lex = order.clone();
        lex.sort();
        assert_eq!(order, lex);
    }

    #[test]
    fn synth_rejects_infeasible() {
        let err = synth_generate(SynthParams {
            num_nodes: 5,
            num_cliques: 2,
            n: 3,
            noise_edges: 0,
            seed: 0,
        });
        assert!(matches!(err, Err(IopError::Config(_))));
    }

    #[test]
    fn synth_is_deterministic() {
        let p = SynthParams {
            num_nodes: 40,
            num_cliques: 5,
            n: 4,
            noise_edges: 30,
            seed: 77,
        };
        let a = synth_generate(p).unwrap().to_edge_list();
        let b = synth_generate(p).unwrap().to_edge_list();
        assert_eq!(a, b);
        let c = synth_generate(SynthParams { seed: 78, ..p }).unwrap().to_edge_list();
        assert_ne!(a, c);
    }
}
