//! Prediction heads over a pooled clique context.

use rand_chacha::ChaCha8Rng;

use crate::error::{IopError, Result};
use crate::nn::{softmax, GruCell, Linear, Mlp, ModelParams, ParamId, Tape, Var};
use crate::seqspace::{
    apply_mask, argmax, factorial, index_to_perm, perm_to_index, permutation_mask, EdgeVocab, PermutationLabel,
};

/// Largest clique size the flat classifier supports (`6! = 720` classes).
pub const MAX_CLASSIFIER_N: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pooling {
    #[default]
    Concat,
    Mean,
}

impl Pooling {
    pub fn output_dim(self, n: usize, node_dim: usize) -> usize {
        match self {
            Pooling::Concat => n * node_dim,
            Pooling::Mean => node_dim,
        }
    }
}

/// Pooled clique representation; only [`pool_context`] builds one, so every
/// head consumes encoder output through the same door.
#[derive(Debug, Clone, Copy)]
pub struct Context(Var);

impl Context {
    pub fn var(self) -> Var {
        self.0
    }
}

pub fn pool_context(tape: &mut Tape, nodes: &[Var], pooling: Pooling) -> Context {
    Context(match pooling {
        Pooling::Concat => tape.concat(nodes),
        Pooling::Mean => tape.mean(nodes),
    })
}

/// Wraps a fixed feature vector as a context, for models without an encoder.
pub fn context_from_features(tape: &mut Tape, features: Vec<f64>) -> Context {
    Context(tape.input(features))
}

pub trait Head {
    fn loss(&self, tape: &mut Tape, ctx: Context, target: &PermutationLabel) -> Result<Var>;

    /// Predicted token sequence. `target` is consulted only by heads that
    /// predict a single slot and fill the rest from the reference.
    fn predict(&self, tape: &mut Tape, ctx: Context, target: &PermutationLabel) -> Result<Vec<usize>>;
}

/// Flat softmax over all `m!` orderings.
#[derive(Debug, Clone, Copy)]
pub struct PermutationClassifier {
    pub mlp: Mlp,
    pub n: usize,
}

impl PermutationClassifier {
    pub fn new(params: &mut ModelParams, n: usize, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if !(3..=MAX_CLASSIFIER_N).contains(&n) {
            return Err(IopError::Config(format!(
                "the permutation classifier supports n in 3..={MAX_CLASSIFIER_N}, got {n}"
            )));
        }
        let classes = factorial(EdgeVocab::new(n).len()).expect("small n") as usize;
        Ok(PermutationClassifier {
            mlp: Mlp::new(params, "cls", input, hidden, classes, rng),
            n,
        })
    }

    pub fn classes(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn probabilities(&self, tape: &mut Tape, ctx: Context) -> Vec<f64> {
        let logits = self.mlp.forward(tape, ctx.var());
        softmax(tape.value(logits))
    }
}

impl Head for PermutationClassifier {
    fn loss(&self, tape: &mut Tape, ctx: Context, target: &PermutationLabel) -> Result<Var> {
        let class = perm_to_index(target)? as usize;
        let logits = self.mlp.forward(tape, ctx.var());
        Ok(tape.softmax_cross_entropy(logits, class))
    }

    fn predict(&self, tape: &mut Tape, ctx: Context, _target: &PermutationLabel) -> Result<Vec<usize>> {
        let logits = self.mlp.forward(tape, ctx.var());
        let class = argmax(tape.value(logits));
        Ok(index_to_perm(class as u64, &EdgeVocab::new(self.n))?.ids().to_vec())
    }
}

/// GRU decoder emitting one edge token per step.
#[derive(Debug, Clone, Copy)]
pub struct SequenceDecoder {
    pub init: Linear,
    pub cell: GruCell,
    /// `(m + 1) x emb` token embeddings; row `m` is the start token.
    pub embed: ParamId,
    pub out: Linear,
    pub m: usize,
    pub constrained: bool,
}

impl SequenceDecoder {
    pub fn new(
        params: &mut ModelParams,
        n: usize,
        input: usize,
        hidden: usize,
        emb: usize,
        constrained: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let m = EdgeVocab::new(n).len();
        SequenceDecoder {
            init: Linear::new(params, "dec.init", input, hidden, rng),
            cell: GruCell::new(params, "dec.gru", emb, hidden, rng),
            embed: params.add_uniform("dec.embed", m + 1, emb, emb, rng),
            out: Linear::new(params, "dec.out", hidden, m, rng),
            m,
            constrained,
        }
    }

    fn start(&self, tape: &mut Tape, ctx: Context) -> (Var, Var) {
        let h = self.init.forward(tape, ctx.var());
        let h = tape.tanh(h);
        (h, tape.param(self.embed))
    }

    /// Runs the decoder for `m` steps; `feed` chooses each step's emitted
    /// token from its logits and the tokens emitted so far.
    fn unroll<F>(&self, tape: &mut Tape, ctx: Context, mut feed: F) -> Vec<Var>
    where
        F: FnMut(&[f64], &[usize], usize) -> usize,
    {
        let (mut h, table) = self.start(tape, ctx);
        let mut prev = self.m;
        let mut emitted = Vec::with_capacity(self.m);
        let mut logits = Vec::with_capacity(self.m);
        for step in 0..self.m {
            let x = tape.row(table, prev);
            h = self.cell.step(tape, h, x);
            let l = self.out.forward(tape, h);
            let tok = feed(tape.value(l), &emitted, step);
            emitted.push(tok);
            logits.push(l);
            prev = tok;
        }
        logits
    }

    pub fn decode(&self, tape: &mut Tape, ctx: Context, constrained: bool) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.m);
        self.unroll(tape, ctx, |logits, emitted, _| {
            let tok = greedy_step(logits, emitted, constrained);
            out.push(tok);
            tok
        });
        out
    }
}

/// One greedy decoding step, optionally masking already-emitted tokens.
pub fn greedy_step(logits: &[f64], emitted: &[usize], constrained: bool) -> usize {
    let mut l = logits.to_vec();
    if constrained {
        let mask = permutation_mask(emitted, l.len());
        apply_mask(&mut l, &mask);
    }
    argmax(&l)
}

impl Head for SequenceDecoder {
    /// Teacher-forced mean cross-entropy over the `m` steps.
    fn loss(&self, tape: &mut Tape, ctx: Context, target: &PermutationLabel) -> Result<Var> {
        if target.len() != self.m {
            return Err(IopError::InvalidLabel(format!(
                "expected {} tokens, got {}",
                self.m,
                target.len()
            )));
        }
        let ids = target.ids();
        let logits = self.unroll(tape, ctx, |_, _, step| ids[step]);
        let losses: Vec<Var> = logits
            .iter()
            .zip(ids)
            .map(|(&l, &t)| tape.softmax_cross_entropy(l, t))
            .collect();
        Ok(tape.mean(&losses))
    }

    fn predict(&self, tape: &mut Tape, ctx: Context, _target: &PermutationLabel) -> Result<Vec<usize>> {
        Ok(self.decode(tape, ctx, self.constrained))
    }
}

/// One query of the per-timestep formulation: which two clique nodes form
/// the edge that first appears at step `t` (1-based)?
#[derive(Debug, Clone, PartialEq)]
pub struct TimestepQuery {
    pub t: usize,
    /// Multi-hot over the `n` clique nodes.
    pub target: Vec<f64>,
}

/// Expands a label into its `m` per-timestep queries.
pub fn expand_timestep_samples(label: &PermutationLabel, n: usize) -> Vec<TimestepQuery> {
    let vocab = EdgeVocab::new(n);
    label
        .tokens(&vocab)
        .enumerate()
        .map(|(i, tok)| {
            let mut target = vec![0.0; n];
            target[tok.a] = 1.0;
            target[tok.b] = 1.0;
            TimestepQuery { t: i + 1, target }
        })
        .collect()
}

/// Sigmoid scores over clique nodes given the context and a one-hot step.
#[derive(Debug, Clone, Copy)]
pub struct TimestepPredictor {
    pub mlp: Mlp,
    pub n: usize,
    pub m: usize,
    /// Train and predict only this step (1-based); `None` covers all steps.
    pub only: Option<usize>,
}

impl TimestepPredictor {
    pub fn new(
        params: &mut ModelParams,
        n: usize,
        input: usize,
        hidden: usize,
        only: Option<usize>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let m = EdgeVocab::new(n).len();
        if let Some(t) = only {
            if t == 0 || t > m {
                return Err(IopError::Config(format!("timestep {t} outside 1..={m}")));
            }
        }
        Ok(TimestepPredictor {
            mlp: Mlp::new(params, "step", input + m, hidden, n, rng),
            n,
            m,
            only,
        })
    }

    fn logits(&self, tape: &mut Tape, ctx: Context, t: usize) -> Result<Var> {
        if t == 0 || t > self.m {
            return Err(IopError::Range {
                value: t as u64,
                limit: self.m as u64,
            });
        }
        let mut onehot = vec![0.0; self.m];
        onehot[t - 1] = 1.0;
        let step = tape.input(onehot);
        let x = tape.concat(&[ctx.var(), step]);
        Ok(self.mlp.forward(tape, x))
    }

    /// Per-node sigmoid scores at step `t` (1-based).
    pub fn scores(&self, tape: &mut Tape, ctx: Context, t: usize) -> Result<Vec<f64>> {
        let l = self.logits(tape, ctx, t)?;
        let s = tape.sigmoid(l);
        Ok(tape.value(s).to_vec())
    }

    /// Token id of the pair with the two highest scores at step `t`.
    pub fn predict_token(&self, tape: &mut Tape, ctx: Context, t: usize) -> Result<usize> {
        let (a, b) = top_two(&self.scores(tape, ctx, t)?);
        Ok(EdgeVocab::new(self.n).id_of(a, b).expect("distinct clique positions"))
    }

    fn steps(&self) -> Vec<usize> {
        match self.only {
            Some(t) => vec![t],
            None => (1..=self.m).collect(),
        }
    }
}

/// Indices of the two largest entries in ascending index order; ties go to
/// the lower index.
pub fn top_two(scores: &[f64]) -> (usize, usize) {
    assert!(scores.len() >= 2, "need at least two scores");
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    (idx[0].min(idx[1]), idx[0].max(idx[1]))
}

impl Head for TimestepPredictor {
    fn loss(&self, tape: &mut Tape, ctx: Context, target: &PermutationLabel) -> Result<Var> {
        let queries = expand_timestep_samples(target, self.n);
        let mut losses = Vec::new();
        for t in self.steps() {
            let l = self.logits(tape, ctx, t)?;
            losses.push(tape.binary_cross_entropy(l, queries[t - 1].target.clone()));
        }
        Ok(tape.mean(&losses))
    }

    /// All steps: the per-step pairs in order, which need not form a
    /// permutation. Single step: the reference with that slot replaced.
    fn predict(&self, tape: &mut Tape, ctx: Context, target: &PermutationLabel) -> Result<Vec<usize>> {
        match self.only {
            Some(t) => {
                let mut seq = target.ids().to_vec();
                seq[t - 1] = self.predict_token(tape, ctx, t)?;
                Ok(seq)
            }
            None => (1..=self.m).map(|t| self.predict_token(tape, ctx, t)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use crate::seqspace::is_permutation;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    #[test]
    fn timestep_expansion_for_a_triangle() {
        let vocab = EdgeVocab::new(3);
        let label = PermutationLabel::new(vec![0, 2, 1], &vocab).unwrap();
        let q = expand_timestep_samples(&label, 3);
        let got: Vec<(usize, Vec<f64>)> = q.into_iter().map(|q| (q.t, q.target)).collect();
        assert_eq!(
            got,
            vec![
                (1, vec![1.0, 1.0, 0.0]),
                (2, vec![0.0, 1.0, 1.0]),
                (3, vec![1.0, 0.0, 1.0]),
            ]
        );
    }

    #[test]
    fn timestep_expansion_worked_example() {
        let vocab = EdgeVocab::new(3);
        let q = expand_timestep_samples(&PermutationLabel::identity(&vocab), 3);
        let targets: Vec<Vec<f64>> = q.iter().map(|q| q.target.clone()).collect();
        assert_eq!(
            targets,
            vec![vec![1.0, 1.0, 0.0], vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]]
        );
        let q4 = expand_timestep_samples(&PermutationLabel::identity(&EdgeVocab::new(4)), 4);
        assert_eq!(q4.len(), 6);
        assert!(q4.iter().all(|q| q.target.iter().sum::<f64>() == 2.0));
    }

    #[test]
    fn zero_weight_timestep_head_picks_lowest_pair() {
        let mut p = ModelParams::new();
        let h = TimestepPredictor::new(&mut p, 4, 3, 5, None, &mut rng()).unwrap();
        let ids: Vec<_> = p.ids().collect();
        for id in ids {
            p.get_mut(id).data.iter_mut().for_each(|x| *x = 0.0);
        }
        let mut tape = Tape::new(&p);
        let ctx = context_from_features(&mut tape, vec![1.0, -2.0, 3.0]);
        assert_eq!(h.scores(&mut tape, ctx, 2).unwrap(), vec![0.5; 4]);
        assert_eq!(h.predict_token(&mut tape, ctx, 2).unwrap(), 0);
        assert!(matches!(
            h.scores(&mut tape, ctx, 7),
            Err(IopError::Range { value: 7, limit: 6 })
        ));
        assert!(h.scores(&mut tape, ctx, 0).is_err());
    }

    #[test]
    fn top_two_breaks_ties_low() {
        assert_eq!(top_two(&[0.1, 0.9, 0.2, 0.8]), (1, 3));
        assert_eq!(top_two(&[0.5, 0.5, 0.5]), (0, 1));
    }

    #[test]
    fn classifier_rejects_large_cliques() {
        let mut p = ModelParams::new();
        assert!(PermutationClassifier::new(&mut p, 5, 4, 8, &mut rng()).is_err());
        let mut p = ModelParams::new();
        let c = PermutationClassifier::new(&mut p, 4, 4, 8, &mut rng()).unwrap();
        assert_eq!(c.classes(), 720);
    }

    #[test]
    fn classifier_probabilities_sum_to_one() {
        let mut p = ModelParams::new();
        let c = PermutationClassifier::new(&mut p, 3, 5, 8, &mut rng()).unwrap();
        let mut tape = Tape::new(&p);
        let ctx = context_from_features(&mut tape, vec![0.3, -0.2, 0.9, 0.0, 1.0]);
        let probs = c.probabilities(&mut tape, ctx);
        assert_eq!(probs.len(), 6);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let pred = c
            .predict(&mut tape, ctx, &PermutationLabel::identity(&EdgeVocab::new(3)))
            .unwrap();
        assert!(is_permutation(&pred, 3));
    }

    fn biased_decoder(constrained: bool) -> (ModelParams, SequenceDecoder) {
        let mut p = ModelParams::new();
        let d = SequenceDecoder::new(&mut p, 3, 4, 6, 5, constrained, &mut rng());
        // Output depends only on the bias, which prefers token 1, then 2, then 0.
        p.get_mut(d.out.w).data.iter_mut().for_each(|x| *x = 0.0);
        p.get_mut(d.out.b).data.copy_from_slice(&[0.1, 2.0, 1.0]);
        (p, d)
    }

    #[test]
    fn constrained_decoding_takes_runner_ups() {
        let (p, d) = biased_decoder(true);
        let mut tape = Tape::new(&p);
        let ctx = context_from_features(&mut tape, vec![0.5; 4]);
        assert_eq!(d.decode(&mut tape, ctx, true), vec![1, 2, 0]);
    }

    #[test]
    fn unconstrained_decoding_can_repeat() {
        let (p, d) = biased_decoder(false);
        let mut tape = Tape::new(&p);
        let ctx = context_from_features(&mut tape, vec![0.5; 4]);
        let out = d.decode(&mut tape, ctx, false);
        assert_eq!(out, vec![1, 1, 1]);
        assert!(!is_permutation(&out, 3));
    }

    #[test]
    fn single_step_predictor_fills_from_reference() {
        let mut p = ModelParams::new();
        let h = TimestepPredictor::new(&mut p, 3, 4, 8, Some(2), &mut rng()).unwrap();
        let target = PermutationLabel::new(vec![2, 0, 1], &EdgeVocab::new(3)).unwrap();
        let mut tape = Tape::new(&p);
        let ctx = context_from_features(&mut tape, vec![0.1, 0.2, 0.3, 0.4]);
        let pred = h.predict(&mut tape, ctx, &target).unwrap();
        assert_eq!((pred[0], pred[2]), (2, 1));
        assert!(pred[1] < 3);
        assert!(TimestepPredictor::new(&mut ModelParams::new(), 3, 4, 8, Some(4), &mut rng()).is_err());
    }

    fn check_head<H: Head>(params: &ModelParams, head: &H, n: usize, ctx_dim: usize) {
        let vocab = EdgeVocab::new(n);
        let ids: Vec<usize> = (0..vocab.len()).rev().collect();
        let target = PermutationLabel::new(ids, &vocab).unwrap();
        let features: Vec<f64> = (0..ctx_dim).map(|i| (i as f64 * 0.37).sin()).collect();
        let err = grad_check(params, 1e-5, |tape| {
            let ctx = context_from_features(tape, features.clone());
            head.loss(tape, ctx, &target)
        })
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        let mut p = ModelParams::new();
        let c = PermutationClassifier::new(&mut p, 3, 5, 7, &mut rng()).unwrap();
        check_head(&p, &c, 3, 5);

        let mut p = ModelParams::new();
        let d = SequenceDecoder::new(&mut p, 3, 5, 6, 4, true, &mut rng());
        check_head(&p, &d, 3, 5);

        let mut p = ModelParams::new();
        let t = TimestepPredictor::new(&mut p, 4, 5, 7, None, &mut rng()).unwrap();
        check_head(&p, &t, 4, 5);
    }
}
