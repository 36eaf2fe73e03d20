use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ModelKind, SplitMode, SPLIT_RATIOS};
use super::train::{evaluate, fit, score_predictions, EpochRecord, FitResult, Prepared, TrainOptions};
use crate::error::{IopError, Result};
use crate::graph::{parse_edge_list, static_projection, synth_generate, SynthParams, TemporalGraph};
use crate::metrics::{AggregateMetrics, MetricOptions, MetricReport};
use crate::models::{
    assign_test_elapsed_times, random_order_baseline, train_dyn_embeddings, DynEmbedding, DynEmbeddingTable, DynParams,
    DynTrainConfig, ElapsedScaler, EncoderConfig, EncoderInput, FeatureModel, Head, IopModel, PermutationClassifier,
    SequenceDecoder, TatModel, TimestepPredictor,
};
use crate::motif::{build_dataset, chronological_split, random_split, DatasetSplit, IopSample};
use crate::nn::{AdamConfig, ModelParams, TimeEncoding};
use crate::seqspace::{is_permutation, EdgeVocab};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "IOP_OUTPUT_ROOT";

// Independent RNG streams per purpose, all derived from the config seed.
const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_EMBED: u64 = 2;
const STREAM_ELAPSED: u64 = 3;
const STREAM_BASELINE: u64 = 4;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub nodes: usize,
    pub static_edges: usize,
    pub events: usize,
    pub samples: usize,
    pub tied: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

/// Per-horizon result of a single-step predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonRow {
    pub t: usize,
    pub selected_epoch: usize,
    pub epochs: Vec<EpochRecord>,
    pub test: AggregateMetrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrefixAccuracy {
    pub prefix: usize,
    /// Samples actually scored; below `prefix` when the test set is shorter.
    pub count: usize,
    pub accuracy: f64,
}

/// Everything a run produced. A time-t sweep keeps its per-horizon curves
/// in `horizons`, leaves `epochs` empty and scores the sequence assembled
/// from all horizons as `test`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub dataset: DatasetStats,
    pub epochs: Vec<EpochRecord>,
    pub selected_epoch: usize,
    pub test: MetricReport,
    pub horizons: Vec<HorizonRow>,
    pub prefix_accuracy: Vec<PrefixAccuracy>,
    pub embedding_losses: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_secs: Option<f64>,
}

impl RunRecord {
    /// JSON without wall-clock fields; identical across reruns.
    pub fn deterministic_json(&self) -> Result<String> {
        let mut r = self.clone();
        r.duration_secs = None;
        Ok(serde_json::to_string_pretty(&r)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub sample_id: usize,
    pub prediction: Vec<usize>,
    pub target: Vec<usize>,
}

/// Parameters to persist, keyed by file name.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub file: String,
    pub params: ModelParams,
    pub meta: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub predictions: Vec<PredictionRow>,
    pub checkpoints: Vec<Checkpoint>,
}

/// Reads an edge-list file, or generates one from
/// `synth:nodes=<N>,cliques=<C>,noise=<E>,seed=<S>[,n=<n>]`.
pub fn load_graph(dataset: &str, n: usize) -> Result<TemporalGraph> {
    if let Some(spec) = dataset.strip_prefix("synth:") {
        let mut p = SynthParams {
            num_nodes: 0,
            num_cliques: 0,
            n,
            noise_edges: 0,
            seed: 0,
        };
        for part in spec.split(',').filter(|s| !s.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| IopError::Config(format!("bad synth field {part:?}")))?;
            let v: u64 = v
                .trim()
                .parse()
                .map_err(|_| IopError::Config(format!("bad synth value {part:?}")))?;
            match k.trim() {
                "nodes" => p.num_nodes = v as usize,
                "cliques" => p.num_cliques = v as usize,
                "noise" => p.noise_edges = v as usize,
                "seed" => p.seed = v,
                "n" => p.n = v as usize,
                other => return Err(IopError::Config(format!("unknown synth field {other:?}"))),
            }
        }
        return synth_generate(p);
    }
    let file = fs::File::open(dataset).map_err(|e| IopError::Input(format!("{dataset}: {e}")))?;
    Ok(parse_edge_list(BufReader::new(file))?.0)
}

/// Mines samples and splits them per the config.
pub fn prepare_split(cfg: &ExperimentConfig, graph: &TemporalGraph) -> Result<(DatasetSplit, DatasetStats)> {
    let mut samples = build_dataset(graph, cfg.n, cfg.k)?;
    let total = samples.len();
    let tied = samples.iter().filter(|s| s.tied).count();
    if cfg.exclude_tied {
        samples.retain(|s| !s.tied);
    }
    if let Some(max) = cfg.max_samples {
        samples.sort_by_key(|s| (s.completion_time, s.id));
        samples.truncate(max);
    }
    let split = match cfg.split {
        SplitMode::Chronological => chronological_split(samples, SPLIT_RATIOS)?,
        SplitMode::Random => random_split(samples, SPLIT_RATIOS, cfg.seed)?,
    };
    let stats = DatasetStats {
        nodes: graph.num_nodes(),
        static_edges: graph.num_static_edges(),
        events: graph.num_events(),
        samples: total,
        tied,
        train: split.train.len(),
        validation: split.validation.len(),
        test: split.test.len(),
    };
    Ok((split, stats))
}

fn encoder_config(cfg: &ExperimentConfig) -> Result<EncoderConfig> {
    Ok(EncoderConfig {
        dim: cfg.dim,
        time: TimeEncoding::new(cfg.time_dim, 10_000.0)?,
        layers: 2,
        max_neighbors: cfg.max_neighbors,
        mask_target_edges: cfg.mask_target_edges,
    })
}

fn train_options(cfg: &ExperimentConfig) -> TrainOptions {
    TrainOptions {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        adam: AdamConfig::with_lr(cfg.lr),
        metrics: MetricOptions { pad_rank: cfg.pad_rank },
    }
}

fn encoder_inputs(samples: &[IopSample], enc: &EncoderConfig) -> Result<Vec<Prepared<EncoderInput>>> {
    samples
        .iter()
        .map(|s| {
            Ok(Prepared {
                sample_id: s.id,
                input: EncoderInput::prepare(s, enc)?,
                label: s.label.clone(),
            })
        })
        .collect()
}

struct Trained {
    fit: Option<FitResult>,
    test: MetricReport,
    predictions: Vec<Vec<usize>>,
    params: ModelParams,
}

fn train_and_test<M: IopModel>(
    mut model: M,
    data: [&[Prepared<M::Input>]; 3],
    vocab: &EdgeVocab,
    cfg: &ExperimentConfig,
) -> Result<Trained> {
    let [train, validation, test] = data;
    let opts = train_options(cfg);
    let fit = fit(
        &mut model,
        train,
        validation,
        vocab,
        &opts,
        &mut rng_for(cfg.seed, STREAM_SHUFFLE),
    )?;
    let (test, predictions) = evaluate(&model, test, vocab, opts.metrics)?;
    Ok(Trained {
        fit: Some(fit),
        test,
        predictions,
        params: model.params().clone(),
    })
}

/// The encoder-based model for `kind` with untrained parameters.
fn build_tat<H, F>(cfg: &ExperimentConfig, make: F) -> Result<TatModel<H>>
where
    H: Head,
    F: FnOnce(&mut ModelParams, usize, &mut ChaCha8Rng) -> Result<H>,
{
    TatModel::new(
        encoder_config(cfg)?,
        cfg.pooling,
        cfg.n,
        &mut rng_for(cfg.seed, STREAM_INIT),
        make,
    )
}

fn classifier_model(cfg: &ExperimentConfig) -> Result<TatModel<PermutationClassifier>> {
    let (n, hidden) = (cfg.n, cfg.hidden);
    build_tat(cfg, |p, d, r| PermutationClassifier::new(p, n, d, hidden, r))
}

fn sequence_model(cfg: &ExperimentConfig, constrained: bool) -> Result<TatModel<SequenceDecoder>> {
    let (n, hidden, emb) = (cfg.n, cfg.hidden, cfg.dim);
    build_tat(cfg, |p, d, r| {
        Ok(SequenceDecoder::new(p, n, d, hidden, emb, constrained, r))
    })
}

fn timestep_model(cfg: &ExperimentConfig, only: Option<usize>) -> Result<TatModel<TimestepPredictor>> {
    let (n, hidden) = (cfg.n, cfg.hidden);
    build_tat(cfg, |p, d, r| TimestepPredictor::new(p, n, d, hidden, only, r))
}

fn dyn_classifier(cfg: &ExperimentConfig) -> Result<FeatureModel<PermutationClassifier>> {
    let mut params = ModelParams::new();
    let mut rng = rng_for(cfg.seed, STREAM_INIT);
    let head = PermutationClassifier::new(&mut params, cfg.n, cfg.n * cfg.dim, cfg.hidden, &mut rng)?;
    Ok(FeatureModel { params, head })
}

fn config_meta(cfg: &ExperimentConfig, extra: &[(&str, String)]) -> BTreeMap<String, String> {
    let mut meta: BTreeMap<String, String> = cfg
        .to_kv_string()
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (format!("cfg.{k}"), v.to_string()))
        .collect();
    for (k, v) in extra {
        meta.insert(k.to_string(), v.clone());
    }
    meta
}

fn config_from_meta(meta: &BTreeMap<String, String>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    for (k, v) in meta {
        if let Some(key) = k.strip_prefix("cfg.") {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Time offsets for the test set: sorted draws assigned in completion order.
pub fn test_elapsed_times(test: &[IopSample], seed: u64) -> Vec<f64> {
    let draws = assign_test_elapsed_times(test.len(), &mut rng_for(seed, STREAM_ELAPSED));
    let mut order: Vec<usize> = (0..test.len()).collect();
    order.sort_by_key(|&i| (test[i].completion_time, test[i].id));
    let mut out = vec![0.0; test.len()];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = draws[rank];
    }
    out
}

fn dyn_inputs(
    emb: &DynEmbedding,
    split: &DatasetSplit,
    projected: bool,
    seed: u64,
) -> ([Vec<Prepared<Vec<f64>>>; 3], Vec<f64>) {
    let plain = |samples: &[IopSample]| -> Vec<Prepared<Vec<f64>>> {
        samples
            .iter()
            .map(|s| Prepared {
                sample_id: s.id,
                input: emb.features(&s.clique, None),
                label: s.label.clone(),
            })
            .collect()
    };
    let elapsed = if projected {
        test_elapsed_times(&split.test, seed)
    } else {
        Vec::new()
    };
    let test = split
        .test
        .iter()
        .enumerate()
        .map(|(i, s)| Prepared {
            sample_id: s.id,
            input: emb.features(&s.clique, elapsed.get(i).copied()),
            label: s.label.clone(),
        })
        .collect();
    ([plain(&split.train), plain(&split.validation), test], elapsed)
}

/// Training stream for dynamic embeddings: every event up to the latest
/// training-clique completion.
fn embedding_stream(graph: &TemporalGraph, split: &DatasetSplit) -> TemporalGraph {
    let cutoff = split.train.iter().map(|s| s.completion_time).max().unwrap_or(i64::MIN);
    graph.up_to(cutoff)
}

fn prefix_accuracy(test: &[IopSample], report: &MetricReport, prefixes: &[usize]) -> Vec<PrefixAccuracy> {
    let mut order: Vec<usize> = (0..test.len()).collect();
    order.sort_by_key(|&i| (test[i].completion_time, test[i].id));
    prefixes
        .iter()
        .map(|&prefix| {
            let count = prefix.min(order.len());
            let hits: f64 = order[..count].iter().map(|&i| report.samples[i].metrics.accuracy).sum();
            PrefixAccuracy {
                prefix,
                count,
                accuracy: if count == 0 { 0.0 } else { hits / count as f64 },
            }
        })
        .collect()
}

fn merge_params(parts: &[&ModelParams]) -> ModelParams {
    let mut out = ModelParams::new();
    for part in parts {
        for (_, p) in part.iter() {
            out.add_with(&p.name, p.rows, p.cols, p.data.clone());
        }
    }
    out
}

/// Copies every parameter of `target` from `source`, failing on missing
/// names or shape mismatches.
fn load_into(target: &mut ModelParams, source: &ModelParams) -> Result<()> {
    for (_, p) in target.iter() {
        let id = source
            .id(&p.name)
            .ok_or_else(|| IopError::Checkpoint(format!("missing parameter {}", p.name)))?;
        let s = source.get(id);
        if (s.rows, s.cols) != (p.rows, p.cols) {
            return Err(IopError::Checkpoint(format!(
                "{}: checkpoint shape {}x{}, model {}x{}",
                p.name, s.rows, s.cols, p.rows, p.cols
            )));
        }
    }
    target.copy_values_from(source);
    Ok(())
}

fn table_params(table: &DynEmbeddingTable, dim: usize) -> ModelParams {
    let mut p = ModelParams::new();
    let rows = table.rows();
    p.add_with("dyn.table", rows.len(), dim, rows.concat());
    p
}

/// Trains and tests the configured model on an already-split dataset.
pub fn train_loop(
    cfg: &ExperimentConfig,
    graph: &TemporalGraph,
    split: &DatasetSplit,
    stats: DatasetStats,
) -> Result<RunOutcome> {
    cfg.validate()?;
    if split.train.is_empty() || split.validation.is_empty() || split.test.is_empty() {
        return Err(IopError::Input("every split partition must be non-empty".into()));
    }
    let vocab = EdgeVocab::new(cfg.n);
    let mut record = RunRecord {
        config: ExperimentConfig {
            output: None,
            ..cfg.clone()
        },
        dataset: stats,
        epochs: Vec::new(),
        selected_epoch: 0,
        test: MetricReport {
            samples: Vec::new(),
            aggregate: AggregateMetrics::default(),
            count: 0,
            skipped_correlation: 0,
        },
        horizons: Vec::new(),
        prefix_accuracy: Vec::new(),
        embedding_losses: Vec::new(),
        duration_secs: None,
    };
    let mut checkpoints = Vec::new();
    let kind_meta = |kind: ModelKind| config_meta(cfg, &[("kind", kind.to_string())]);

    let trained = match cfg.model {
        ModelKind::RandomBaseline => {
            let mut rng = rng_for(cfg.seed, STREAM_BASELINE);
            let predictions: Vec<Vec<usize>> = split
                .test
                .iter()
                .map(|_| random_order_baseline(&vocab, &mut rng).ids().to_vec())
                .collect();
            let test = score_predictions(
                split.test.iter().map(|s| (s.id, &s.label)),
                &predictions,
                &vocab,
                train_options(cfg).metrics,
            )?;
            Trained {
                fit: None,
                test,
                predictions,
                params: ModelParams::new(),
            }
        }
        ModelKind::DynEmb | ModelKind::DynEmbProjected => {
            let stream = embedding_stream(graph, split);
            let dyn_cfg = DynTrainConfig {
                dim: cfg.dim,
                epochs: cfg.dyn_epochs,
                batch_size: cfg.batch_size,
                adam: AdamConfig::with_lr(cfg.lr),
            };
            let emb = train_dyn_embeddings(&stream, &dyn_cfg, &mut rng_for(cfg.seed, STREAM_EMBED))?;
            record.embedding_losses = emb.losses.clone();
            let projected = cfg.model == ModelKind::DynEmbProjected;
            let (data, _) = dyn_inputs(&emb, split, projected, cfg.seed);
            let [train, validation, test] = &data;
            let t = train_and_test(dyn_classifier(cfg)?, [train, validation, test], &vocab, cfg)?;
            record.prefix_accuracy = prefix_accuracy(&split.test, &t.test, &cfg.prefixes);
            let params = merge_params(&[&emb.params, &table_params(&emb.table, cfg.dim), &t.params]);
            Trained { params, ..t }
        }
        ModelKind::TimeT(None) => {
            let enc = encoder_config(cfg)?;
            let data = [
                encoder_inputs(&split.train, &enc)?,
                encoder_inputs(&split.validation, &enc)?,
                encoder_inputs(&split.test, &enc)?,
            ];
            let mut assembled: Vec<Vec<usize>> = vec![vec![0; vocab.len()]; split.test.len()];
            for t in 1..=vocab.len() {
                let model = timestep_model(cfg, Some(t))?;
                let r = train_and_test(model, [&data[0], &data[1], &data[2]], &vocab, cfg)?;
                for (row, pred) in assembled.iter_mut().zip(&r.predictions) {
                    row[t - 1] = pred[t - 1];
                }
                let fit = r.fit.expect("trained");
                checkpoints.push(Checkpoint {
                    file: format!("checkpoint-t{t}.txt"),
                    params: r.params,
                    meta: kind_meta(ModelKind::TimeT(Some(t))),
                });
                record.horizons.push(HorizonRow {
                    t,
                    selected_epoch: fit.selected_epoch,
                    epochs: fit.epochs,
                    test: r.test.aggregate,
                });
            }
            let test = score_predictions(
                split.test.iter().map(|s| (s.id, &s.label)),
                &assembled,
                &vocab,
                train_options(cfg).metrics,
            )?;
            Trained {
                fit: None,
                test,
                predictions: assembled,
                params: ModelParams::new(),
            }
        }
        kind => {
            let enc = encoder_config(cfg)?;
            let data = [
                encoder_inputs(&split.train, &enc)?,
                encoder_inputs(&split.validation, &enc)?,
                encoder_inputs(&split.test, &enc)?,
            ];
            let refs = [&data[0][..], &data[1][..], &data[2][..]];
            match kind {
                ModelKind::Classifier => train_and_test(classifier_model(cfg)?, refs, &vocab, cfg)?,
                ModelKind::Sequence => train_and_test(sequence_model(cfg, false)?, refs, &vocab, cfg)?,
                ModelKind::SequencePerm => train_and_test(sequence_model(cfg, true)?, refs, &vocab, cfg)?,
                ModelKind::TimeAll => train_and_test(timestep_model(cfg, None)?, refs, &vocab, cfg)?,
                ModelKind::TimeT(Some(step)) => {
                    let t = train_and_test(timestep_model(cfg, Some(step))?, refs, &vocab, cfg)?;
                    let fit = t.fit.clone().expect("trained");
                    record.horizons.push(HorizonRow {
                        t: step,
                        selected_epoch: fit.selected_epoch,
                        epochs: fit.epochs,
                        test: t.test.aggregate,
                    });
                    t
                }
                _ => unreachable!("handled above"),
            }
        }
    };

    if let Some(fit) = trained.fit {
        record.epochs = fit.epochs;
        record.selected_epoch = fit.selected_epoch;
    }
    if cfg.model != ModelKind::TimeT(None) {
        checkpoints.push(Checkpoint {
            file: "checkpoint.txt".into(),
            params: trained.params,
            meta: kind_meta(cfg.model),
        });
    }
    let predictions = split
        .test
        .iter()
        .zip(&trained.predictions)
        .map(|(s, p)| PredictionRow {
            sample_id: s.id,
            prediction: p.clone(),
            target: s.label.ids().to_vec(),
        })
        .collect();
    record.test = trained.test;
    Ok(RunOutcome {
        record,
        predictions,
        checkpoints,
    })
}

/// Whole pipeline in memory: load, mine, split, train, test.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let graph = load_graph(&cfg.dataset, cfg.n)?;
    let (split, stats) = prepare_split(cfg, &graph)?;
    let mut outcome = train_loop(cfg, &graph, &split, stats)?;
    outcome.record.duration_secs = Some(start.elapsed().as_secs_f64());
    Ok(outcome)
}

pub fn output_root(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Creates `<root>/<model>-n<n>-<timestamp>[-i]`, never reusing a directory.
pub fn fresh_run_dir(root: &Path, cfg: &ExperimentConfig) -> Result<PathBuf> {
    fs::create_dir_all(root)?;
    let kind = cfg.model.to_string().replace(':', "");
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let base = format!("{kind}-n{}-{stamp}", cfg.n);
    for i in 1.. {
        let name = if i == 1 { base.clone() } else { format!("{base}-{i}") };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!()
}

fn curve_csv(record: &RunRecord) -> String {
    let mut out = String::from(
        "t,epoch,train_loss,val_accuracy,val_bleu3,val_meteor,val_kendall_tau,val_spearman_rho,selected\n",
    );
    let mut rows = |t: &str, epochs: &[EpochRecord], selected: usize| {
        for e in epochs {
            let v = &e.validation;
            out.push_str(&format!(
                "{t},{},{},{},{},{},{},{},{}\n",
                e.epoch,
                e.train_loss,
                v.accuracy,
                v.bleu3,
                v.meteor,
                v.kendall_tau,
                v.spearman_rho,
                u8::from(e.epoch == selected)
            ));
        }
    };
    if record.horizons.is_empty() || !record.epochs.is_empty() {
        rows("", &record.epochs, record.selected_epoch);
    } else {
        for h in &record.horizons {
            rows(&h.t.to_string(), &h.epochs, h.selected_epoch);
        }
    }
    out
}

fn horizon_csv(record: &RunRecord) -> String {
    let mut out = String::from("t,selected_epoch,accuracy,bleu3,meteor,kendall_tau,spearman_rho\n");
    for h in &record.horizons {
        let a = &h.test;
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            h.t, h.selected_epoch, a.accuracy, a.bleu3, a.meteor, a.kendall_tau, a.spearman_rho
        ));
    }
    out
}

fn prefix_csv(record: &RunRecord) -> String {
    let mut out = String::from("prefix,count,accuracy\n");
    for p in &record.prefix_accuracy {
        out.push_str(&format!("{},{},{}\n", p.prefix, p.count, p.accuracy));
    }
    out
}

/// Writes the report files derived from a record into `dir`.
pub fn emit_report(record: &RunRecord, dir: &Path) -> Result<()> {
    fs::write(dir.join("metrics.json"), record.deterministic_json()?)?;
    fs::write(dir.join("run.json"), serde_json::to_string_pretty(record)?)?;
    fs::write(dir.join("test_metrics.csv"), record.test.to_csv())?;
    fs::write(dir.join("curve.csv"), curve_csv(record))?;
    if !record.horizons.is_empty() {
        fs::write(dir.join("horizon.csv"), horizon_csv(record))?;
    }
    if !record.prefix_accuracy.is_empty() {
        fs::write(dir.join("prefix_accuracy.csv"), prefix_csv(record))?;
    }
    Ok(())
}

fn write_outcome(outcome: &RunOutcome, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::write(dir.join("config.txt"), cfg.to_kv_string())?;
    emit_report(&outcome.record, dir)?;
    let mut w = BufWriter::new(fs::File::create(dir.join("predictions.jsonl"))?);
    for row in &outcome.predictions {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    for c in &outcome.checkpoints {
        let mut w = BufWriter::new(fs::File::create(dir.join(&c.file))?);
        c.params.save(&mut w, &c.meta)?;
        w.flush()?;
    }
    Ok(())
}

/// Runs the pipeline and writes every artifact to a fresh run directory.
/// On failure the directory holds `FAILED` with the error and whatever was
/// written before it.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(PathBuf, RunRecord)> {
    cfg.validate()?;
    let dir = fresh_run_dir(&output_root(cfg), cfg)?;
    fs::write(dir.join("config.txt"), cfg.to_kv_string())?;
    match execute(cfg).and_then(|o| write_outcome(&o, cfg, &dir).map(|()| o)) {
        Ok(outcome) => Ok((dir, outcome.record)),
        Err(e) => {
            let _ = fs::write(dir.join("FAILED"), format!("{e}\n"));
            Err(e)
        }
    }
}

pub fn load_record(run_dir: &Path) -> Result<RunRecord> {
    let path = run_dir.join("run.json");
    let text = fs::read_to_string(&path).map_err(|e| IopError::Input(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Human-readable summary of a finished run.
pub fn render_summary(record: &RunRecord) -> String {
    let a = &record.test.aggregate;
    let d = &record.dataset;
    let mut out = format!(
        "model {} n={} seed={}\n\
         dataset {}: {} nodes, {} edges, {} events, {} samples ({} tied)\n\
         split {}/{}/{}\n",
        record.config.model,
        record.config.n,
        record.config.seed,
        record.config.dataset,
        d.nodes,
        d.static_edges,
        d.events,
        d.samples,
        d.tied,
        d.train,
        d.validation,
        d.test
    );
    if record.selected_epoch > 0 {
        out.push_str(&format!(
            "selected epoch {} of {}\n",
            record.selected_epoch,
            record.epochs.len()
        ));
    }
    out.push_str(&format!(
        "test accuracy {:.4}  bleu3 {:.4}  meteor {:.4}  kendall {:.4}  spearman {:.4}  ({} samples, {} without correlations)\n",
        a.accuracy, a.bleu3, a.meteor, a.kendall_tau, a.spearman_rho, record.test.count, record.test.skipped_correlation
    ));
    for h in &record.horizons {
        out.push_str(&format!(
            "  t={} accuracy {:.4} (epoch {})\n",
            h.t, h.test.accuracy, h.selected_epoch
        ));
    }
    for p in &record.prefix_accuracy {
        out.push_str(&format!(
            "  first {} ({} scored) accuracy {:.4}\n",
            p.prefix, p.count, p.accuracy
        ));
    }
    if let Some(s) = record.duration_secs {
        out.push_str(&format!("took {s:.1}s\n"));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for SplitName {
    type Err = IopError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "validation" | "val" => Ok(SplitName::Validation),
            "test" => Ok(SplitName::Test),
            other => Err(IopError::Config(format!("unknown split {other:?}"))),
        }
    }
}

fn pick(split: &DatasetSplit, which: SplitName) -> &[IopSample] {
    match which {
        SplitName::Train => &split.train,
        SplitName::Validation => &split.validation,
        SplitName::Test => &split.test,
    }
}

/// Re-scores a saved checkpoint on one partition of its dataset.
pub fn evaluate_checkpoint(path: &Path, which: SplitName) -> Result<MetricReport> {
    let file = fs::File::open(path).map_err(|e| IopError::Input(format!("{}: {e}", path.display())))?;
    let (saved, meta) = ModelParams::load(BufReader::new(file))?;
    let mut cfg = config_from_meta(&meta)?;
    if let Some(kind) = meta.get("kind") {
        cfg.model = kind.parse()?;
    }
    let graph = load_graph(&cfg.dataset, cfg.n)?;
    let (split, _) = prepare_split(&cfg, &graph)?;
    let samples = pick(&split, which);
    let vocab = EdgeVocab::new(cfg.n);
    let metrics = MetricOptions { pad_rank: cfg.pad_rank };

    fn score<M: IopModel>(
        mut model: M,
        saved: &ModelParams,
        data: &[Prepared<M::Input>],
        vocab: &EdgeVocab,
        metrics: MetricOptions,
    ) -> Result<MetricReport> {
        load_into(model.params_mut(), saved)?;
        Ok(evaluate(&model, data, vocab, metrics)?.0)
    }

    match cfg.model {
        ModelKind::RandomBaseline => {
            let mut rng = rng_for(cfg.seed, STREAM_BASELINE);
            let preds: Vec<Vec<usize>> = samples
                .iter()
                .map(|_| random_order_baseline(&vocab, &mut rng).ids().to_vec())
                .collect();
            score_predictions(samples.iter().map(|s| (s.id, &s.label)), &preds, &vocab, metrics)
        }
        ModelKind::DynEmb | ModelKind::DynEmbProjected => {
            let stream = embedding_stream(&graph, &split);
            let mut params = ModelParams::new();
            let model = DynParams::new(&mut params, cfg.dim, &mut rng_for(cfg.seed, STREAM_INIT));
            load_into(&mut params, &saved)?;
            let table_id = saved
                .id("dyn.table")
                .ok_or_else(|| IopError::Checkpoint("missing parameter dyn.table".into()))?;
            let rows: Vec<Vec<f64>> = saved.get(table_id).data.chunks(cfg.dim).map(<[f64]>::to_vec).collect();
            let emb = DynEmbedding {
                params,
                model,
                table: DynEmbeddingTable::from_rows(stream.nodes(), rows)?,
                scaler: ElapsedScaler::fit(stream.events()),
                losses: Vec::new(),
            };
            let projected = cfg.model == ModelKind::DynEmbProjected && which == SplitName::Test;
            let (data, _) = dyn_inputs(&emb, &split, projected, cfg.seed);
            let idx = match which {
                SplitName::Train => 0,
                SplitName::Validation => 1,
                SplitName::Test => 2,
            };
            score(dyn_classifier(&cfg)?, &saved, &data[idx], &vocab, metrics)
        }
        ModelKind::TimeT(None) => Err(IopError::Checkpoint(
            "sweep runs save one checkpoint per horizon; evaluate checkpoint-t<t>.txt".into(),
        )),
        kind => {
            let data = encoder_inputs(samples, &encoder_config(&cfg)?)?;
            match kind {
                ModelKind::Classifier => score(classifier_model(&cfg)?, &saved, &data, &vocab, metrics),
                ModelKind::Sequence => score(sequence_model(&cfg, false)?, &saved, &data, &vocab, metrics),
                ModelKind::SequencePerm => score(sequence_model(&cfg, true)?, &saved, &data, &vocab, metrics),
                ModelKind::TimeAll => score(timestep_model(&cfg, None)?, &saved, &data, &vocab, metrics),
                ModelKind::TimeT(t) => score(timestep_model(&cfg, t)?, &saved, &data, &vocab, metrics),
                _ => unreachable!("handled above"),
            }
        }
    }
}

/// Counts of maximal cliques per requested size, for ingestion reports.
pub fn clique_counts(graph: &TemporalGraph, sizes: &[usize]) -> BTreeMap<usize, usize> {
    let sg = static_projection(graph);
    sizes
        .iter()
        .map(|&n| (n, crate::motif::enumerate_cliques(&sg, n).len()))
        .collect()
}

/// Share of predictions that are permutations; unconstrained decoders can
/// fall below one.
pub fn permutation_rate(predictions: &[PredictionRow]) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    let ok = predictions
        .iter()
        .filter(|p| is_permutation(&p.prediction, p.target.len()))
        .count();
    ok as f64 / predictions.len() as f64
}
