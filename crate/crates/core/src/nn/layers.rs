use rand_chacha::ChaCha8Rng;

use super::params::{ModelParams, ParamId};
use super::tape::{softmax, Tape, Var};
use crate::error::{IopError, Result};

/// Sinusoidal encoding of a discretized timestamp rank.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeEncoding {
    dim: usize,
    base: f64,
}

impl TimeEncoding {
    pub fn new(dim: usize, base: f64) -> Result<Self> {
        if dim == 0 || !dim.is_multiple_of(2) {
            return Err(IopError::Config(format!(
                "time encoding dimension must be even and positive, got {dim}"
            )));
        }
        if !(base > 1.0) {
            return Err(IopError::Config(format!(
                "time encoding base must exceed 1, got {base}"
            )));
        }
        Ok(TimeEncoding { dim, base })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn base(&self) -> f64 {
        self.base
    }
}

impl Default for TimeEncoding {
    fn default() -> Self {
        TimeEncoding {
            dim: 16,
            base: 10_000.0,
        }
    }
}

/// `out[2i] = sin(rank / base^(2i/d))`, `out[2i+1] = cos(rank / base^(2i/d))`.
pub fn time_encode(rank: u64, enc: &TimeEncoding) -> Vec<f64> {
    let d = enc.dim as f64;
    let mut out = Vec::with_capacity(enc.dim);
    for i in 0..enc.dim / 2 {
        let angle = rank as f64 / enc.base.powf(2.0 * i as f64 / d);
        out.push(angle.sin());
        out.push(angle.cos());
    }
    out
}

/// Softmax attention over scaled dot products; zero vector of `query.len()`
/// entries for an empty neighborhood.
pub fn attention_aggregate(query: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>]) -> Vec<f64> {
    assert_eq!(keys.len(), values.len(), "keys and values differ in count");
    let Some(first) = values.first() else {
        return vec![0.0; query.len()];
    };
    let weights = attention_weights(query, keys);
    let mut out = vec![0.0; first.len()];
    for (w, v) in weights.iter().zip(values) {
        for (o, x) in out.iter_mut().zip(v) {
            *o += w * x;
        }
    }
    out
}

pub fn attention_weights(query: &[f64], keys: &[Vec<f64>]) -> Vec<f64> {
    let scale = 1.0 / (query.len() as f64).sqrt();
    let scores: Vec<f64> = keys
        .iter()
        .map(|k| k.iter().zip(query).map(|(a, b)| a * b).sum::<f64>() * scale)
        .collect();
    softmax(&scores)
}

/// Affine map `w x + b`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(params: &mut ModelParams, name: &str, input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = params.add_uniform(&format!("{name}.w"), output, input, input, rng);
        let b = params.add_uniform(&format!("{name}.b"), output, 1, input, rng);
        Linear { w, b, input, output }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        let y = tape.matvec(w, x);
        tape.add(y, b)
    }
}

/// Affine, tanh, affine. Returns unnormalized outputs.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn new(
        params: &mut ModelParams,
        name: &str,
        input: usize,
        hidden: usize,
        out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Mlp {
            hidden: Linear::new(params, &format!("{name}.hidden"), input, hidden, rng),
            out: Linear::new(params, &format!("{name}.out"), hidden, out, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let h = self.hidden.forward(tape, x);
        let h = tape.tanh(h);
        self.out.forward(tape, h)
    }

    pub fn output_dim(&self) -> usize {
        self.out.output
    }
}

pub fn mlp_forward(x: &[f64], params: &ModelParams, mlp: &Mlp) -> Vec<f64> {
    let mut tape = Tape::new(params);
    let x = tape.input(x.to_vec());
    let y = mlp.forward(&mut tape, x);
    tape.value(y).to_vec()
}

/// Single GRU layer cell.
#[derive(Debug, Clone, Copy)]
pub struct GruCell {
    pub update_x: ParamId,
    pub update_h: ParamId,
    pub update_b: ParamId,
    pub reset_x: ParamId,
    pub reset_h: ParamId,
    pub reset_b: ParamId,
    pub cand_x: ParamId,
    pub cand_h: ParamId,
    pub cand_b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(params: &mut ModelParams, name: &str, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut mat =
            |suffix: &str, cols: usize| params.add_uniform(&format!("{name}.{suffix}"), hidden, cols, hidden, rng);
        let update_x = mat("wz", input);
        let update_h = mat("uz", hidden);
        let update_b = mat("bz", 1);
        let reset_x = mat("wr", input);
        let reset_h = mat("ur", hidden);
        let reset_b = mat("br", 1);
        let cand_x = mat("wc", input);
        let cand_h = mat("uc", hidden);
        let cand_b = mat("bc", 1);
        GruCell {
            update_x,
            update_h,
            update_b,
            reset_x,
            reset_h,
            reset_b,
            cand_x,
            cand_h,
            cand_b,
            input,
            hidden,
        }
    }

    fn gate(&self, tape: &mut Tape, wx: ParamId, uh: ParamId, b: ParamId, x: Var, h: Var) -> Var {
        let wx = tape.param(wx);
        let uh = tape.param(uh);
        let b = tape.param(b);
        let a = tape.matvec(wx, x);
        let c = tape.matvec(uh, h);
        tape.sum(&[a, c, b])
    }

    /// `h' = (1 - z) * h + z * tanh(Wc x + Uc (r * h) + bc)`.
    pub fn step(&self, tape: &mut Tape, h: Var, x: Var) -> Var {
        let z = self.gate(tape, self.update_x, self.update_h, self.update_b, x, h);
        let z = tape.sigmoid(z);
        let r = self.gate(tape, self.reset_x, self.reset_h, self.reset_b, x, h);
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, h);
        let c = self.gate(tape, self.cand_x, self.cand_h, self.cand_b, x, rh);
        let c = tape.tanh(c);
        let delta = tape.sub(c, h);
        let moved = tape.mul(z, delta);
        tape.add(h, moved)
    }
}

pub fn gru_step(h: &[f64], x: &[f64], params: &ModelParams, cell: &GruCell) -> Vec<f64> {
    let mut tape = Tape::new(params);
    let h = tape.input(h.to_vec());
    let x = tape.input(x.to_vec());
    let y = cell.step(&mut tape, h, x);
    tape.value(y).to_vec()
}
