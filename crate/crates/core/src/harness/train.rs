use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IopError, Result};
use crate::metrics::{aggregate, score_sample, AggregateMetrics, MetricOptions, MetricReport, SampleRecord};
use crate::models::IopModel;
use crate::nn::{adam_step, AdamConfig, Tape};
use crate::seqspace::{EdgeVocab, PermutationLabel};

/// A model input paired with its sample id and label.
#[derive(Debug, Clone)]
pub struct Prepared<I> {
    pub sample_id: usize,
    pub input: I,
    pub label: PermutationLabel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub metrics: MetricOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation: AggregateMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch with the best validation accuracy; ties go to the earliest.
    pub selected_epoch: usize,
}

/// Trains with Adam on shuffled mini-batches, validating after every epoch.
/// On return the model holds the parameters of the selected epoch.
pub fn fit<M: IopModel>(
    model: &mut M,
    train: &[Prepared<M::Input>],
    validation: &[Prepared<M::Input>],
    vocab: &EdgeVocab,
    opts: &TrainOptions,
    rng: &mut ChaCha8Rng,
) -> Result<FitResult> {
    if train.is_empty() || validation.is_empty() {
        return Err(IopError::Input("training and validation sets must be non-empty".into()));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(opts.epochs);
    let mut best: Option<(f64, usize, crate::nn::ModelParams)> = None;

    for epoch in 1..=opts.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for batch in order.chunks(opts.batch_size.max(1)) {
            for &i in batch {
                let sample = &train[i];
                let grads = {
                    let mut tape = Tape::new(model.params());
                    let loss = model.loss(&mut tape, &sample.input, &sample.label)?;
                    let value = tape.scalar(loss);
                    if !value.is_finite() {
                        return Err(IopError::Numeric(format!(
                            "loss {value} at epoch {epoch} on sample {}",
                            sample.sample_id
                        )));
                    }
                    total += value;
                    tape.backward(loss)
                };
                model.params_mut().accumulate(&grads);
            }
            model.params_mut().scale_grad(1.0 / batch.len() as f64);
            adam_step(model.params_mut(), &opts.adam)?;
        }
        let (report, _) = evaluate(model, validation, vocab, opts.metrics)?;
        let acc = report.aggregate.accuracy;
        if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
            best = Some((acc, epoch, model.params().clone()));
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            validation: report.aggregate,
        });
    }
    let (_, selected_epoch, params) = best.expect("at least one epoch");
    *model.params_mut() = params;
    Ok(FitResult { epochs, selected_epoch })
}

/// Scores every sample; also returns the raw predicted sequences.
pub fn evaluate<M: IopModel>(
    model: &M,
    samples: &[Prepared<M::Input>],
    vocab: &EdgeVocab,
    opts: MetricOptions,
) -> Result<(MetricReport, Vec<Vec<usize>>)> {
    let predictions = samples
        .iter()
        .map(|s| model.predict(&s.input, &s.label))
        .collect::<Result<Vec<_>>>()?;
    let report = score_predictions(
        samples.iter().map(|s| (s.sample_id, &s.label)),
        &predictions,
        vocab,
        opts,
    )?;
    Ok((report, predictions))
}

pub fn score_predictions<'a>(
    targets: impl IntoIterator<Item = (usize, &'a PermutationLabel)>,
    predictions: &[Vec<usize>],
    vocab: &EdgeVocab,
    opts: MetricOptions,
) -> Result<MetricReport> {
    let records = targets
        .into_iter()
        .zip(predictions)
        .map(|((sample_id, label), pred)| {
            Ok(SampleRecord {
                sample_id,
                prediction: vocab.format_sequence(pred),
                target: vocab.format_sequence(label.ids()),
                metrics: score_sample(pred, label.ids(), opts)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{FeatureModel, PermutationClassifier};
    use crate::nn::ModelParams;
    use rand::SeedableRng;

    fn toy_data(vocab: &EdgeVocab) -> Vec<Prepared<Vec<f64>>> {
        // Two linearly separable feature clusters with different labels.
        let a = PermutationLabel::identity(vocab);
        let b = PermutationLabel::new(vec![2, 1, 0], vocab).unwrap();
        (0..20)
            .map(|i| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                Prepared {
                    sample_id: i,
                    input: vec![s, 0.1 * i as f64, -s],
                    label: if i % 2 == 0 { a.clone() } else { b.clone() },
                }
            })
            .collect()
    }

    fn model() -> FeatureModel<PermutationClassifier> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ModelParams::new();
        let head = PermutationClassifier::new(&mut params, 3, 3, 8, &mut rng).unwrap();
        FeatureModel { params, head }
    }

    fn opts(epochs: usize) -> TrainOptions {
        TrainOptions {
            epochs,
            batch_size: 4,
            adam: AdamConfig::with_lr(0.05),
            metrics: MetricOptions::default(),
        }
    }

    #[test]
    fn fit_learns_and_keeps_the_selected_epoch() {
        let vocab = EdgeVocab::new(3);
        let data = toy_data(&vocab);
        let mut m = model();
        let fit = fit(
            &mut m,
            &data,
            &data,
            &vocab,
            &opts(15),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let best = fit
            .epochs
            .iter()
            .map(|e| e.validation.accuracy)
            .fold(f64::NEG_INFINITY, f64::max);
        let first_best = fit.epochs.iter().find(|e| e.validation.accuracy == best).unwrap();
        assert_eq!(fit.selected_epoch, first_best.epoch);
        let (report, _) = evaluate(&m, &data, &vocab, MetricOptions::default()).unwrap();
        assert_eq!(report.aggregate.accuracy, best);
        assert_eq!(best, 1.0);
    }

    #[test]
    fn fit_is_deterministic() {
        let vocab = EdgeVocab::new(3);
        let data = toy_data(&vocab);
        let run = || {
            let mut m = model();
            let f = fit(
                &mut m,
                &data,
                &data,
                &vocab,
                &opts(3),
                &mut ChaCha8Rng::seed_from_u64(7),
            )
            .unwrap();
            (f, m.params)
        };
        let (f1, p1) = run();
        let (f2, p2) = run();
        assert_eq!(f1, f2);
        assert_eq!(p1, p2);
    }

    struct Exploding(ModelParams);

    impl IopModel for Exploding {
        type Input = Vec<f64>;
        fn params(&self) -> &ModelParams {
            &self.0
        }
        fn params_mut(&mut self) -> &mut ModelParams {
            &mut self.0
        }
        fn loss(&self, tape: &mut Tape, input: &Vec<f64>, _t: &PermutationLabel) -> Result<crate::nn::Var> {
            let x = tape.input(vec![input[0] * f64::INFINITY]);
            Ok(tape.sum(&[x]))
        }
        fn predict(&self, _i: &Vec<f64>, t: &PermutationLabel) -> Result<Vec<usize>> {
            Ok(t.ids().to_vec())
        }
    }

    #[test]
    fn divergence_is_a_numeric_error() {
        let vocab = EdgeVocab::new(3);
        let data = toy_data(&vocab);
        let mut m = Exploding(ModelParams::new());
        let err = fit(
            &mut m,
            &data,
            &data,
            &vocab,
            &opts(1),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn empty_partitions_are_rejected() {
        let vocab = EdgeVocab::new(3);
        let data = toy_data(&vocab);
        let mut m = model();
        assert!(fit(&mut m, &data, &[], &vocab, &opts(1), &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
