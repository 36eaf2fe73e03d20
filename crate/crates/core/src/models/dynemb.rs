//! Dynamic node embeddings updated by each interaction, with a learned
//! projection through elapsed time.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{IopError, Result};
use crate::graph::{static_projection, EdgeEvent, NodeId, StaticGraph, TemporalGraph, Timestamp};
use crate::nn::{adam_step, sigmoid_scalar, AdamConfig, ModelParams, ParamId, Tape, Var};

/// Standardizes raw elapsed times with statistics of the training stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElapsedScaler {
    pub mean: f64,
    pub std: f64,
}

impl ElapsedScaler {
    /// Fits on the elapsed time of both endpoints of every event; a node's
    /// first event counts as zero elapsed time.
    pub fn fit(events: &[EdgeEvent]) -> Self {
        let mut last: BTreeMap<NodeId, Timestamp> = BTreeMap::new();
        let mut xs = Vec::with_capacity(events.len() * 2);
        for e in events {
            for node in [e.u, e.v] {
                let prev = last.insert(node, e.t);
                xs.push(prev.map_or(0.0, |p| (e.t - p) as f64));
            }
        }
        if xs.is_empty() {
            return ElapsedScaler { mean: 0.0, std: 1.0 };
        }
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        ElapsedScaler { mean, std }
    }

    pub fn scale(&self, raw: f64) -> f64 {
        (raw - self.mean) / self.std
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DynParams {
    pub w_self: ParamId,
    pub w_other: ParamId,
    pub w_time: ParamId,
    pub w_proj: ParamId,
    pub dim: usize,
}

impl DynParams {
    pub fn new(params: &mut ModelParams, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        DynParams {
            w_self: params.add_uniform("dyn.w_self", dim, dim, dim, rng),
            w_other: params.add_uniform("dyn.w_other", dim, dim, dim, rng),
            w_time: params.add_uniform("dyn.w_time", dim, 1, dim, rng),
            w_proj: params.add_zeros("dyn.w_proj", dim, 1),
            dim,
        }
    }

    /// `tanh(W_self e_u + W_other e_v + w_time dt)`.
    fn update(&self, tape: &mut Tape, e_u: Var, e_v: Var, dt: f64) -> Var {
        let ws = tape.param(self.w_self);
        let wo = tape.param(self.w_other);
        let wt = tape.param(self.w_time);
        let a = tape.matvec(ws, e_u);
        let b = tape.matvec(wo, e_v);
        let c = tape.scale(wt, dt);
        let s = tape.sum(&[a, b, c]);
        tape.tanh(s)
    }

    /// `(1 + dt * w_proj) * e`.
    fn project(&self, tape: &mut Tape, e: Var, dt: f64) -> Var {
        let wp = tape.param(self.w_proj);
        let scaled = tape.scale(wp, dt);
        let factor = tape.offset(scaled, 1.0);
        tape.mul(factor, e)
    }
}

/// Current embedding and last update time of every node.
#[derive(Debug, Clone, PartialEq)]
pub struct DynEmbeddingTable {
    index: BTreeMap<NodeId, usize>,
    embeddings: Vec<Vec<f64>>,
    last_update: Vec<Option<Timestamp>>,
}

impl DynEmbeddingTable {
    /// Starts every node at a small random embedding.
    pub fn new(nodes: &[NodeId], dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (dim.max(1) as f64).sqrt();
        DynEmbeddingTable {
            index: nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect(),
            embeddings: (0..nodes.len())
                .map(|_| (0..dim).map(|_| rng.random_range(-bound..=bound)).collect())
                .collect(),
            last_update: vec![None; nodes.len()],
        }
    }

    /// Rebuilds a table from saved rows; update times are unknown.
    pub fn from_rows(nodes: &[NodeId], rows: Vec<Vec<f64>>) -> Result<Self> {
        if nodes.len() != rows.len() {
            return Err(IopError::Checkpoint(format!(
                "{} embedding rows for {} nodes",
                rows.len(),
                nodes.len()
            )));
        }
        Ok(DynEmbeddingTable {
            index: nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect(),
            last_update: vec![None; nodes.len()],
            embeddings: rows,
        })
    }

    /// Embeddings in node-id order.
    pub fn rows(&self) -> &[Vec<f64>] {
        &self.embeddings
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.index.contains_key(&node)
    }

    fn slot(&self, node: NodeId) -> Result<usize> {
        self.index.get(&node).copied().ok_or(IopError::UnknownNode(node))
    }

    pub fn embedding(&self, node: NodeId) -> Result<&[f64]> {
        Ok(&self.embeddings[self.slot(node)?])
    }

    pub fn last_update(&self, node: NodeId) -> Result<Option<Timestamp>> {
        Ok(self.last_update[self.slot(node)?])
    }

    fn elapsed(&self, slot: usize, t: Timestamp, node: NodeId) -> Result<f64> {
        match self.last_update[slot] {
            Some(last) if t < last => Err(IopError::TimeOrder { node, event: t, last }),
            Some(last) => Ok((t - last) as f64),
            None => Ok(0.0),
        }
    }
}

/// Applies one interaction to both endpoints.
pub fn dyn_update(
    table: &mut DynEmbeddingTable,
    event: &EdgeEvent,
    model: &DynParams,
    params: &ModelParams,
    scaler: &ElapsedScaler,
) -> Result<()> {
    let (su, sv) = (table.slot(event.u)?, table.slot(event.v)?);
    let du = scaler.scale(table.elapsed(su, event.t, event.u)?);
    let dv = scaler.scale(table.elapsed(sv, event.t, event.v)?);
    let mut tape = Tape::new(params);
    let eu = tape.input(table.embeddings[su].clone());
    let ev = tape.input(table.embeddings[sv].clone());
    let nu = model.update(&mut tape, eu, ev, du);
    let nv = model.update(&mut tape, ev, eu, dv);
    table.embeddings[su] = tape.value(nu).to_vec();
    table.embeddings[sv] = tape.value(nv).to_vec();
    table.last_update[su] = Some(event.t);
    table.last_update[sv] = Some(event.t);
    Ok(())
}

pub fn dyn_project(e: &[f64], dt: f64, w_proj: &[f64]) -> Vec<f64> {
    e.iter().zip(w_proj).map(|(x, w)| (1.0 + dt * w) * x).collect()
}

pub fn link_score(a: &[f64], b: &[f64]) -> f64 {
    sigmoid_scalar(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

/// Sorted standard-normal draws, one per test sample in chronological order.
pub fn assign_test_elapsed_times(count: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut xs: Vec<f64> = (0..count).map(|_| rng.sample(StandardNormal)).collect();
    xs.sort_by(f64::total_cmp);
    xs
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynTrainConfig {
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

/// Trained parameters plus the table after replaying the stream once more
/// with them.
#[derive(Debug, Clone)]
pub struct DynEmbedding {
    pub params: ModelParams,
    pub model: DynParams,
    pub table: DynEmbeddingTable,
    pub scaler: ElapsedScaler,
    pub losses: Vec<f64>,
}

impl DynEmbedding {
    pub fn w_proj(&self) -> &[f64] {
        &self.params.get(self.model.w_proj).data
    }

    /// Concatenated clique embeddings, each projected by `dt` when given.
    /// Nodes absent from the training stream contribute zeros.
    pub fn features(&self, clique: &[NodeId], dt: Option<f64>) -> Vec<f64> {
        let zeros = vec![0.0; self.model.dim];
        let mut out = Vec::with_capacity(clique.len() * self.model.dim);
        for &node in clique {
            let e = self.table.embedding(node).unwrap_or(&zeros);
            match dt {
                Some(dt) => out.extend(dyn_project(e, dt, self.w_proj())),
                None => out.extend_from_slice(e),
            }
        }
        out
    }
}

fn negative_for(sg: &StaticGraph, nodes: &[NodeId], u: NodeId, v: NodeId, rng: &mut ChaCha8Rng) -> Option<NodeId> {
    (0..32).find_map(|_| {
        let w = *nodes.choose(rng)?;
        (w != u && w != v && !sg.is_adjacent(u, w)).then_some(w)
    })
}

/// Loss for one event `(e_u, e_v, negative)` with scaled elapsed times `(du, dv, dw)`:
/// projected embeddings should score the observed link
/// above a sampled non-neighbor, and so should the updated embeddings.
pub fn dyn_event_loss(
    tape: &mut Tape,
    model: &DynParams,
    (eu, ev, ew): (&[f64], &[f64], Option<&[f64]>),
    (du, dv, dw): (f64, f64, f64),
) -> Var {
    let eu = tape.input(eu.to_vec());
    let ev = tape.input(ev.to_vec());
    let pu = model.project(tape, eu, du);
    let pv = model.project(tape, ev, dv);
    let mut terms = Vec::with_capacity(4);
    let s = tape.dot(pu, pv);
    terms.push(tape.binary_cross_entropy(s, vec![1.0]));
    let nu = model.update(tape, eu, ev, du);
    let nv = model.update(tape, ev, eu, dv);
    let s = tape.dot(nu, nv);
    terms.push(tape.binary_cross_entropy(s, vec![1.0]));
    if let Some(ew) = ew {
        let ew = tape.input(ew.to_vec());
        let pw = model.project(tape, ew, dw);
        let s = tape.dot(pu, pw);
        terms.push(tape.binary_cross_entropy(s, vec![0.0]));
        let s = tape.dot(nu, ew);
        terms.push(tape.binary_cross_entropy(s, vec![0.0]));
    }
    tape.mean(&terms)
}

/// Trains the update and projection weights on the chronological stream of
/// `graph`, which should hold only data visible at training time.
pub fn train_dyn_embeddings(graph: &TemporalGraph, cfg: &DynTrainConfig, rng: &mut ChaCha8Rng) -> Result<DynEmbedding> {
    if graph.is_empty() {
        return Err(IopError::EmptyGraph);
    }
    let mut params = ModelParams::new();
    let model = DynParams::new(&mut params, cfg.dim, rng);
    let initial = DynEmbeddingTable::new(graph.nodes(), cfg.dim, rng);
    let scaler = ElapsedScaler::fit(graph.events());
    let sg = static_projection(graph);
    let nodes = graph.nodes();
    let batch = cfg.batch_size.max(1);
    let mut losses = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        let mut table = initial.clone();
        let mut total = 0.0;
        for chunk in graph.events().chunks(batch) {
            for e in chunk {
                let (su, sv) = (table.slot(e.u)?, table.slot(e.v)?);
                let du = scaler.scale(table.elapsed(su, e.t, e.u)?);
                let dv = scaler.scale(table.elapsed(sv, e.t, e.v)?);
                let neg = negative_for(&sg, nodes, e.u, e.v, rng);
                let (ew, dw) = match neg {
                    Some(w) => {
                        let sw = table.slot(w)?;
                        let dw = match table.last_update[sw] {
                            Some(last) if last <= e.t => scaler.scale((e.t - last) as f64),
                            _ => scaler.scale(0.0),
                        };
                        (Some(table.embeddings[sw].clone()), dw)
                    }
                    None => (None, 0.0),
                };
                let grads = {
                    let mut tape = Tape::new(&params);
                    let loss = dyn_event_loss(
                        &mut tape,
                        &model,
                        (&table.embeddings[su], &table.embeddings[sv], ew.as_deref()),
                        (du, dv, dw),
                    );
                    let l = tape.scalar(loss);
                    if !l.is_finite() {
                        return Err(IopError::Numeric(format!("non-finite embedding loss at t={}", e.t)));
                    }
                    total += l;
                    tape.backward(loss)
                };
                params.accumulate(&grads);
                dyn_update(&mut table, e, &model, &params, &scaler)?;
            }
            params.scale_grad(1.0 / chunk.len() as f64);
            adam_step(&mut params, &cfg.adam)?;
        }
        losses.push(total / graph.num_events() as f64);
    }

    let mut table = initial;
    for e in graph.events() {
        dyn_update(&mut table, e, &model, &params, &scaler)?;
    }
    Ok(DynEmbedding {
        params,
        model,
        table,
        scaler,
        losses,
    })
}
