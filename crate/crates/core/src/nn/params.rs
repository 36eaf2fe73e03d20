use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{IopError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

/// A dense row-major matrix (vectors have one column) with its gradient and
/// Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub grad: Vec<f64>,
    pub(crate) m: Vec<f64>,
    pub(crate) v: Vec<f64>,
}

impl Param {
    fn new(name: String, rows: usize, cols: usize, data: Vec<f64>) -> Self {
        let len = rows * cols;
        debug_assert_eq!(data.len(), len);
        Param {
            name,
            rows,
            cols,
            data,
            grad: vec![0.0; len],
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Named parameter store shared by all layers of one model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    params: Vec<Param>,
    by_name: BTreeMap<String, ParamId>,
    pub(crate) step: u64,
}

pub const CHECKPOINT_FORMAT: &str = "iop-params";
pub const CHECKPOINT_VERSION: u32 = 1;

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter initialized uniformly in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn add_uniform(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
        self.insert(Param::new(name.to_string(), rows, cols, data))
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.insert(Param::new(name.to_string(), rows, cols, vec![0.0; rows * cols]))
    }

    pub fn add_with(&mut self, name: &str, rows: usize, cols: usize, data: Vec<f64>) -> ParamId {
        assert_eq!(data.len(), rows * cols, "shape mismatch for {name}");
        self.insert(Param::new(name.to_string(), rows, cols, data))
    }

    fn insert(&mut self, p: Param) -> ParamId {
        assert!(!self.by_name.contains_key(&p.name), "duplicate parameter {}", p.name);
        let id = ParamId(self.params.len());
        self.by_name.insert(p.name.clone(), id);
        self.params.push(p);
        id
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Adds a backward pass's gradients into the gradient slots.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (i, g) in grads.slots.iter().enumerate() {
            if let Some(g) = g {
                for (slot, x) in self.params[i].grad.iter_mut().zip(g) {
                    *slot += x;
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Scales all gradient slots, e.g. to average over a mini-batch.
    pub fn scale_grad(&mut self, factor: f64) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// Copies values (not moments) from `other` for every parameter name both share.
    pub fn copy_values_from(&mut self, other: &ModelParams) {
        for p in &mut self.params {
            if let Some(id) = other.id(&p.name) {
                p.data.copy_from_slice(&other.get(id).data);
            }
        }
    }

    /// Writes the text checkpoint format:
    ///
    /// ```text
    /// iop-params 1
    /// meta <key> <value...>
    /// param <name> <rows> <cols>
    /// <rows*cols whitespace-separated values>
    /// ```
    pub fn save<W: Write>(&self, mut w: W, meta: &BTreeMap<String, String>) -> Result<()> {
        writeln!(w, "{CHECKPOINT_FORMAT} {CHECKPOINT_VERSION}")?;
        for (k, v) in meta {
            writeln!(w, "meta {k} {v}")?;
        }
        for p in &self.params {
            writeln!(w, "param {} {} {}", p.name, p.rows, p.cols)?;
            let line: Vec<String> = p.data.iter().map(|x| x.to_string()).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(r: R) -> Result<(ModelParams, BTreeMap<String, String>)> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| IopError::Checkpoint("empty checkpoint".into()))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(CHECKPOINT_FORMAT) {
            return Err(IopError::Checkpoint(format!("unrecognized header {header:?}")));
        }
        match parts.next().and_then(|v| v.parse::<u32>().ok()) {
            Some(CHECKPOINT_VERSION) => {}
            other => return Err(IopError::Checkpoint(format!("unsupported version {other:?}"))),
        }
        let mut params = ModelParams::new();
        let mut meta = BTreeMap::new();
        while let Some(line) = lines.next().transpose()? {
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                meta.insert(k.to_string(), v.to_string());
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [kw, name, rows, cols] = fields[..] else {
                return Err(IopError::Checkpoint(format!("bad record {line:?}")));
            };
            if kw != "param" {
                return Err(IopError::Checkpoint(format!("bad record {line:?}")));
            }
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| IopError::Checkpoint(format!("bad shape in {line:?}")))
            };
            let (rows, cols) = (parse(rows)?, parse(cols)?);
            let values = lines
                .next()
                .transpose()?
                .ok_or_else(|| IopError::Checkpoint(format!("missing values for {name}")))?;
            let data = values
                .split_whitespace()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| IopError::Checkpoint(format!("bad value {s:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if data.len() != rows * cols {
                return Err(IopError::Checkpoint(format!(
                    "{name}: expected {} values, got {}",
                    rows * cols,
                    data.len()
                )));
            }
            params.insert(Param::new(name.to_string(), rows, cols, data));
        }
        Ok((params, meta))
    }
}

/// Per-parameter gradients produced by one backward pass.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    pub(crate) slots: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.slots.get(id.0).and_then(|s| s.as_deref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn uniform_init_respects_fan_in() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ModelParams::new();
        let id = p.add_uniform("w", 4, 16, 16, &mut rng);
        assert!(p.get(id).data.iter().all(|x| x.abs() <= 0.25));
        assert!(p.get(id).grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = ModelParams::new();
        p.add_uniform("enc.w", 3, 2, 2, &mut rng);
        p.add_with("bias", 2, 1, vec![0.1, -1e-300]);
        let meta = BTreeMap::from([("kind".to_string(), "classifier".to_string())]);
        let mut buf = Vec::new();
        p.save(&mut buf, &meta).unwrap();
        let (q, meta2) = ModelParams::load(buf.as_slice()).unwrap();
        assert_eq!(meta, meta2);
        for ((_, a), (_, b)) in p.iter().zip(q.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.data, b.data);
        }
    }

    #[test]
    fn checkpoint_rejects_bad_version() {
        assert!(ModelParams::load("iop-params 9\n".as_bytes()).is_err());
        assert!(ModelParams::load("param w 1 2\n1 2\n".as_bytes()).is_err());
        assert!(ModelParams::load("iop-params 1\nparam w 1 2\n1\n".as_bytes()).is_err());
    }
}
