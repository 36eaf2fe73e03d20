//! Model families for interaction order prediction.
//!
//! Encoder-based models pair [`TatLite`] with any [`Head`]; the dynamic
//! embedding family feeds precomputed clique features to the same heads.

mod dynemb;
mod encoder;
mod heads;

pub use dynemb::{
    assign_test_elapsed_times, dyn_event_loss, dyn_project, dyn_update, link_score, train_dyn_embeddings, DynEmbedding,
    DynEmbeddingTable, DynParams, DynTrainConfig, ElapsedScaler,
};
pub use encoder::{EncoderConfig, EncoderInput, TatLite, MAX_ROLE};
pub use heads::{
    context_from_features, expand_timestep_samples, greedy_step, pool_context, top_two, Context, Head,
    PermutationClassifier, Pooling, SequenceDecoder, TimestepPredictor, TimestepQuery, MAX_CLASSIFIER_N,
};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{ModelParams, Tape, Var};
use crate::seqspace::{EdgeVocab, PermutationLabel};

/// What the training loop needs from a model.
pub trait IopModel {
    type Input;

    fn params(&self) -> &ModelParams;
    fn params_mut(&mut self) -> &mut ModelParams;
    fn loss(&self, tape: &mut Tape, input: &Self::Input, target: &PermutationLabel) -> Result<Var>;
    fn predict(&self, input: &Self::Input, target: &PermutationLabel) -> Result<Vec<usize>>;
}

/// TAT-lite encoder, pooling and a head sharing one parameter store.
#[derive(Debug, Clone)]
pub struct TatModel<H> {
    pub params: ModelParams,
    pub encoder: TatLite,
    pub pooling: Pooling,
    pub head: H,
}

impl<H: Head> TatModel<H> {
    /// Builds the encoder, then the head from the pooled context width.
    pub fn new<F>(cfg: EncoderConfig, pooling: Pooling, n: usize, rng: &mut ChaCha8Rng, head: F) -> Result<Self>
    where
        F: FnOnce(&mut ModelParams, usize, &mut ChaCha8Rng) -> Result<H>,
    {
        let mut params = ModelParams::new();
        let encoder = TatLite::new(&mut params, cfg, rng);
        let ctx_dim = pooling.output_dim(n, encoder.output_dim());
        let head = head(&mut params, ctx_dim, rng)?;
        Ok(TatModel {
            params,
            encoder,
            pooling,
            head,
        })
    }

    fn context(&self, tape: &mut Tape, input: &EncoderInput) -> Context {
        let nodes = self.encoder.encode(tape, input);
        pool_context(tape, &nodes, self.pooling)
    }
}

impl<H: Head> IopModel for TatModel<H> {
    type Input = EncoderInput;

    fn params(&self) -> &ModelParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    fn loss(&self, tape: &mut Tape, input: &EncoderInput, target: &PermutationLabel) -> Result<Var> {
        let ctx = self.context(tape, input);
        self.head.loss(tape, ctx, target)
    }

    fn predict(&self, input: &EncoderInput, target: &PermutationLabel) -> Result<Vec<usize>> {
        let mut tape = Tape::new(&self.params);
        let ctx = self.context(&mut tape, input);
        self.head.predict(&mut tape, ctx, target)
    }
}

/// A head over fixed per-sample feature vectors.
#[derive(Debug, Clone)]
pub struct FeatureModel<H> {
    pub params: ModelParams,
    pub head: H,
}

impl<H: Head> IopModel for FeatureModel<H> {
    type Input = Vec<f64>;

    fn params(&self) -> &ModelParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    fn loss(&self, tape: &mut Tape, input: &Vec<f64>, target: &PermutationLabel) -> Result<Var> {
        let ctx = context_from_features(tape, input.clone());
        self.head.loss(tape, ctx, target)
    }

    fn predict(&self, input: &Vec<f64>, target: &PermutationLabel) -> Result<Vec<usize>> {
        let mut tape = Tape::new(&self.params);
        let ctx = context_from_features(&mut tape, input.clone());
        self.head.predict(&mut tape, ctx, target)
    }
}

/// A uniformly random ordering of the clique's edges.
pub fn random_order_baseline(vocab: &EdgeVocab, rng: &mut ChaCha8Rng) -> PermutationLabel {
    let mut ids: Vec<usize> = (0..vocab.len()).collect();
    ids.shuffle(rng);
    PermutationLabel::new(ids, vocab).expect("shuffle preserves the permutation")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::parse_edge_list_str;
    use crate::motif::build_dataset;
    use crate::nn::{grad_check, TimeEncoding};
    use crate::seqspace::{is_permutation, perm_to_index};
    use rand::SeedableRng;

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig {
            dim: 3,
            time: TimeEncoding::new(2, 10_000.0).unwrap(),
            layers: 2,
            max_neighbors: 4,
            mask_target_edges: true,
        }
    }

    fn sample_input() -> (EncoderInput, PermutationLabel) {
        let g = parse_edge_list_str("1 2 5\n2 3 7\n1 3 9\n3 4 11\n1 5 2\n").unwrap().0;
        let s = build_dataset(&g, 3, 1).unwrap().remove(0);
        (EncoderInput::prepare(&s, &tiny_cfg()).unwrap(), s.label)
    }

    #[test]
    fn encoder_and_heads_grad_check() {
        let (input, label) = sample_input();
        for pooling in [Pooling::Concat, Pooling::Mean] {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let m = TatModel::new(tiny_cfg(), pooling, 3, &mut rng, |p, d, r| {
                PermutationClassifier::new(p, 3, d, 4, r)
            })
            .unwrap();
            let err = grad_check(&m.params, 1e-5, |tape| m.loss(tape, &input, &label)).unwrap();
            assert!(err < 1e-4, "{pooling:?}: relative error {err}");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = TatModel::new(tiny_cfg(), Pooling::Concat, 3, &mut rng, |p, d, r| {
            Ok(SequenceDecoder::new(p, 3, d, 3, 2, true, r))
        })
        .unwrap();
        let err = grad_check(&m.params, 1e-5, |tape| m.loss(tape, &input, &label)).unwrap();
        assert!(err < 1e-4, "decoder: relative error {err}");
    }

    #[test]
    fn heads_swap_without_touching_the_encoder() {
        let (input, label) = sample_input();
        let build = |seed| ChaCha8Rng::seed_from_u64(seed);
        let a = TatModel::new(tiny_cfg(), Pooling::Mean, 3, &mut build(1), |p, d, r| {
            PermutationClassifier::new(p, 3, d, 4, r)
        })
        .unwrap();
        let b = TatModel::new(tiny_cfg(), Pooling::Mean, 3, &mut build(1), |p, d, r| {
            TimestepPredictor::new(p, 3, d, 4, None, r)
        })
        .unwrap();
        assert_eq!(
            a.encoder.encode_values(&a.params, &input),
            b.encoder.encode_values(&b.params, &input)
        );
        assert!(is_permutation(&a.predict(&input, &label).unwrap(), 3));
        assert_eq!(b.predict(&input, &label).unwrap().len(), 3);
    }

    #[test]
    fn random_baseline_is_roughly_uniform() {
        let vocab = EdgeVocab::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut counts = [0usize; 6];
        for _ in 0..6000 {
            counts[perm_to_index(&random_order_baseline(&vocab, &mut rng)).unwrap() as usize] += 1;
        }
        assert!(counts.iter().all(|&c| (800..1200).contains(&c)), "{counts:?}");

        let target = PermutationLabel::identity(&vocab);
        let trials = 10_000;
        let hits = (0..trials)
            .filter(|_| random_order_baseline(&vocab, &mut rng) == target)
            .count();
        assert!((hits as f64 / trials as f64 - 1.0 / 6.0).abs() < 0.02);
    }
}
