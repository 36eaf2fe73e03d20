//! TAT-lite: two stacked single-head attention layers over a clique's
//! neighborhood, where every neighbor message carries the sinusoidal
//! encoding of the edge's first-interaction rank.

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha8Rng;

use crate::error::{IopError, Result};
use crate::graph::{first_interaction_times, NodeId, Pair};
use crate::motif::IopSample;
use crate::nn::{time_encode, Linear, ModelParams, ParamId, Tape, TimeEncoding, Var};

/// Distance-to-clique roles are capped at this value.
pub const MAX_ROLE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub dim: usize,
    pub time: TimeEncoding,
    pub layers: usize,
    /// Per-node cap on attended neighbors; the most recent are kept.
    pub max_neighbors: usize,
    /// Replace the time encoding of intra-clique edges with a learned vector
    /// so the encoder cannot read the label off the input.
    pub mask_target_edges: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: 128,
            time: TimeEncoding::default(),
            layers: 2,
            max_neighbors: 16,
            mask_target_edges: true,
        }
    }
}

/// Parameter-independent view of a sample's neighborhood.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderInput {
    /// Role (capped distance to the clique) of each local node.
    pub roles: Vec<usize>,
    /// Attended neighbors per local node: `(neighbor, first-interaction rank)`,
    /// with `None` for masked intra-clique edges.
    pub neighbors: Vec<Vec<(usize, Option<u64>)>>,
    /// Local index of each clique member in clique order.
    pub clique: Vec<usize>,
}

impl EncoderInput {
    pub fn prepare(sample: &IopSample, cfg: &EncoderConfig) -> Result<Self> {
        let g = &sample.subgraph;
        let nodes = g.nodes();
        let local = |id: NodeId| -> Result<usize> {
            g.node_index(id)
                .ok_or_else(|| IopError::InvalidSample(format!("clique node {id} missing from subgraph")))
        };
        let clique: Vec<usize> = sample.clique.iter().map(|&c| local(c)).collect::<Result<_>>()?;
        let clique_set: BTreeSet<NodeId> = sample.clique.iter().copied().collect();
        let is_target = |p: &Pair| cfg.mask_target_edges && clique_set.contains(&p.lo) && clique_set.contains(&p.hi);

        // Dense ranks of first-interaction times over the unmasked pairs.
        let first = first_interaction_times(g);
        let times: BTreeSet<i64> = first.iter().filter(|(p, _)| !is_target(p)).map(|(_, &t)| t).collect();
        let rank_of: BTreeMap<i64, u64> = times.into_iter().enumerate().map(|(r, t)| (t, r as u64)).collect();

        let mut adjacency: Vec<Vec<(usize, Option<u64>)>> = vec![Vec::new(); nodes.len()];
        for (pair, t) in &first {
            let (a, b) = (local(pair.lo)?, local(pair.hi)?);
            let rank = if is_target(pair) { None } else { Some(rank_of[t]) };
            adjacency[a].push((b, rank));
            adjacency[b].push((a, rank));
        }
        for list in &mut adjacency {
            // Masked edges first, then most recent; ties by local index.
            list.sort_by_key(|&(j, r)| (r.is_some(), std::cmp::Reverse(r), j));
            list.truncate(cfg.max_neighbors.max(1));
        }

        let mut roles = vec![MAX_ROLE; nodes.len()];
        let mut frontier: Vec<usize> = clique.clone();
        for &c in &clique {
            roles[c] = 0;
        }
        let mut depth = 0;
        while !frontier.is_empty() && depth < MAX_ROLE {
            depth += 1;
            let mut next = Vec::new();
            for &u in &frontier {
                for &(w, _) in &adjacency[u] {
                    if roles[w] > depth {
                        roles[w] = depth;
                        next.push(w);
                    }
                }
            }
            frontier = next;
        }

        for (&c, &id) in clique.iter().zip(&sample.clique) {
            if adjacency[c].is_empty() {
                return Err(IopError::InvalidSample(format!("clique node {id} has no neighbors")));
            }
        }
        Ok(EncoderInput {
            roles,
            neighbors: adjacency,
            clique,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.roles.len()
    }
}

#[derive(Debug, Clone, Copy)]
struct AttentionLayer {
    query: ParamId,
    key: ParamId,
    value: ParamId,
    out: Linear,
}

#[derive(Debug, Clone)]
pub struct TatLite {
    cfg: EncoderConfig,
    roles: ParamId,
    masked_time: ParamId,
    layers: Vec<AttentionLayer>,
}

impl TatLite {
    pub fn new(params: &mut ModelParams, cfg: EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.dim;
        let dt = cfg.time.dim();
        let roles = params.add_uniform("enc.roles", MAX_ROLE + 1, d, d, rng);
        let masked_time = params.add_uniform("enc.masked_time", dt, 1, dt, rng);
        let layers = (0..cfg.layers)
            .map(|l| AttentionLayer {
                query: params.add_uniform(&format!("enc.l{l}.wq"), d, d, d, rng),
                key: params.add_uniform(&format!("enc.l{l}.wk"), d, d + dt, d + dt, rng),
                value: params.add_uniform(&format!("enc.l{l}.wv"), d, d + dt, d + dt, rng),
                out: Linear::new(params, &format!("enc.l{l}.out"), 2 * d, d, rng),
            })
            .collect();
        TatLite {
            cfg,
            roles,
            masked_time,
            layers,
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn output_dim(&self) -> usize {
        self.cfg.dim
    }

    /// One embedding per clique member, in clique order.
    pub fn encode(&self, tape: &mut Tape, input: &EncoderInput) -> Vec<Var> {
        let num_layers = self.layers.len();
        // needed[l]: nodes whose layer-l representation is used.
        let mut needed: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); num_layers + 1];
        needed[num_layers] = input.clique.iter().copied().collect();
        for l in (0..num_layers).rev() {
            let mut set = needed[l + 1].clone();
            for &u in &needed[l + 1] {
                set.extend(input.neighbors[u].iter().map(|&(j, _)| j));
            }
            needed[l] = set;
        }

        let role_table = tape.param(self.roles);
        let mut h: BTreeMap<usize, Var> = needed[0]
            .iter()
            .map(|&u| (u, tape.row(role_table, input.roles[u])))
            .collect();

        let masked = tape.param(self.masked_time);
        let mut encodings: BTreeMap<u64, Var> = BTreeMap::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let wq = tape.param(layer.query);
            let wk = tape.param(layer.key);
            let wv = tape.param(layer.value);
            let mut next = BTreeMap::new();
            for &u in &needed[l + 1] {
                let hu = h[&u];
                let q = tape.matvec(wq, hu);
                let mut keys = Vec::with_capacity(input.neighbors[u].len());
                let mut values = Vec::with_capacity(input.neighbors[u].len());
                for &(j, rank) in &input.neighbors[u] {
                    let te = match rank {
                        None => masked,
                        Some(r) => *encodings
                            .entry(r)
                            .or_insert_with(|| tape.input(time_encode(r, &self.cfg.time))),
                    };
                    let msg = tape.concat(&[h[&j], te]);
                    keys.push(tape.matvec(wk, msg));
                    values.push(tape.matvec(wv, msg));
                }
                let agg = tape.attention(q, &keys, &values, self.cfg.dim);
                let joined = tape.concat(&[hu, agg]);
                let z = layer.out.forward(tape, joined);
                next.insert(u, tape.tanh(z));
            }
            h = next;
        }
        input.clique.iter().map(|c| h[c]).collect()
    }

    /// Forward-only convenience returning plain vectors.
    pub fn encode_values(&self, params: &ModelParams, input: &EncoderInput) -> Vec<Vec<f64>> {
        let mut tape = Tape::new(params);
        let out = self.encode(&mut tape, input);
        out.into_iter().map(|v| tape.value(v).to_vec()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::parse_edge_list_str;
    use crate::motif::build_dataset;
    use rand::SeedableRng;

    fn small_cfg() -> EncoderConfig {
        EncoderConfig {
            dim: 6,
            time: TimeEncoding::new(4, 10_000.0).unwrap(),
            ..EncoderConfig::default()
        }
    }

    fn sample(text: &str) -> IopSample {
        let g = parse_edge_list_str(text).unwrap().0;
        build_dataset(&g, 3, 1).unwrap().remove(0)
    }

    const TRIANGLE_PLUS: &str = "1 2 5\n2 3 7\n1 3 9\n3 4 11\n1 5 2\n5 6 4\n2 6 8\n";

    #[test]
    fn output_shape() {
        let s = sample(TRIANGLE_PLUS);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ModelParams::new();
        let enc = TatLite::new(&mut params, EncoderConfig::default(), &mut rng);
        let input = EncoderInput::prepare(&s, enc.config()).unwrap();
        let out = enc.encode_values(&params, &input);
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|v| v.len() == 128));
    }

    #[test]
    fn target_edges_are_masked() {
        let s = sample(TRIANGLE_PLUS);
        let input = EncoderInput::prepare(&s, &small_cfg()).unwrap();
        for &c in &input.clique {
            for &(j, rank) in &input.neighbors[c] {
                assert_eq!(rank.is_none(), input.clique.contains(&j));
            }
        }
        assert_eq!(input.roles.iter().filter(|&&r| r == 0).count(), 3);
    }

    #[test]
    fn neighbor_order_does_not_matter() {
        let s = sample(TRIANGLE_PLUS);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = ModelParams::new();
        let enc = TatLite::new(&mut params, small_cfg(), &mut rng);
        let input = EncoderInput::prepare(&s, enc.config()).unwrap();
        let mut shuffled = input.clone();
        for list in &mut shuffled.neighbors {
            list.reverse();
        }
        let a = enc.encode_values(&params, &input);
        let b = enc.encode_values(&params, &shuffled);
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn relabeling_nodes_does_not_matter() {
        let relabeled = "10 20 5\n20 30 7\n10 30 9\n30 4 11\n10 55 2\n55 66 4\n20 66 8\n";
        let (a, b) = (sample(TRIANGLE_PLUS), sample(relabeled));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = ModelParams::new();
        let enc = TatLite::new(&mut params, small_cfg(), &mut rng);
        let ea = enc.encode_values(&params, &EncoderInput::prepare(&a, enc.config()).unwrap());
        let eb = enc.encode_values(&params, &EncoderInput::prepare(&b, enc.config()).unwrap());
        for (x, y) in ea.iter().flatten().zip(eb.iter().flatten()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn clique_node_outside_subgraph_is_rejected() {
        let s = sample("1 2 5\n2 3 7\n1 3 9\n");
        let mut broken = s.clone();
        broken.subgraph = parse_edge_list_str("1 2 5\n2 9 1\n").unwrap().0;
        assert!(EncoderInput::prepare(&s, &small_cfg()).is_ok());
        assert!(matches!(
            EncoderInput::prepare(&broken, &small_cfg()),
            Err(IopError::InvalidSample(_))
        ));
    }
}
