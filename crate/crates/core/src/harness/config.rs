use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{IopError, Result};
use crate::models::{Pooling, MAX_CLASSIFIER_N};
use crate::seqspace::EdgeVocab;

/// Train/validation/test ratios.
pub const SPLIT_RATIOS: (f64, f64, f64) = (0.8, 0.1, 0.1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ModelKind {
    Classifier,
    Sequence,
    SequencePerm,
    TimeAll,
    /// Single-horizon predictor; `None` sweeps every horizon.
    TimeT(Option<usize>),
    DynEmb,
    DynEmbProjected,
    RandomBaseline,
}

impl ModelKind {
    pub const ALL: [&'static str; 8] = [
        "classifier",
        "sequence",
        "sequence-perm",
        "time-all",
        "time-t",
        "dyn-emb",
        "dyn-emb-projected",
        "random-baseline",
    ];

    pub fn is_dyn(self) -> bool {
        matches!(self, ModelKind::DynEmb | ModelKind::DynEmbProjected)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Classifier => f.write_str("classifier"),
            ModelKind::Sequence => f.write_str("sequence"),
            ModelKind::SequencePerm => f.write_str("sequence-perm"),
            ModelKind::TimeAll => f.write_str("time-all"),
            ModelKind::TimeT(None) => f.write_str("time-t"),
            ModelKind::TimeT(Some(t)) => write!(f, "time-t:{t}"),
            ModelKind::DynEmb => f.write_str("dyn-emb"),
            ModelKind::DynEmbProjected => f.write_str("dyn-emb-projected"),
            ModelKind::RandomBaseline => f.write_str("random-baseline"),
        }
    }
}

impl FromStr for ModelKind {
    type Err = IopError;

    /// Accepts the names in [`ModelKind::ALL`]; `time-t:<t>` fixes the horizon.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "classifier" => ModelKind::Classifier,
            "sequence" => ModelKind::Sequence,
            "sequence-perm" => ModelKind::SequencePerm,
            "time-all" => ModelKind::TimeAll,
            "time-t" => ModelKind::TimeT(None),
            "dyn-emb" => ModelKind::DynEmb,
            "dyn-emb-projected" => ModelKind::DynEmbProjected,
            "random-baseline" => ModelKind::RandomBaseline,
            other => match other.strip_prefix("time-t:").map(str::parse::<usize>) {
                Some(Ok(t)) => ModelKind::TimeT(Some(t)),
                _ => {
                    return Err(IopError::Config(format!(
                        "unknown model kind {other:?}; expected one of {}",
                        ModelKind::ALL.join(", ")
                    )))
                }
            },
        })
    }
}

impl From<ModelKind> for String {
    fn from(k: ModelKind) -> String {
        k.to_string()
    }
}

impl TryFrom<String> for ModelKind {
    type Error = IopError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    #[default]
    Chronological,
    Random,
}

/// One experiment. Text form is `key = value` lines; `#` starts a comment.
///
/// | key | default | meaning |
/// |---|---|---|
/// | `dataset` | required | edge-list path, or `synth:nodes=..,cliques=..,noise=..,seed=..` |
/// | `n` | 3 | clique size |
/// | `k` | 1 | neighborhood hops |
/// | `model` | classifier | one of [`ModelKind::ALL`], or `time-t:<t>` |
/// | `pooling` | concat | `concat` or `mean` |
/// | `dim` | 128 | node embedding width |
/// | `time_dim` | 16 | time encoding width (even) |
/// | `hidden` | 128 | head hidden width |
/// | `max_neighbors` | 16 | attended neighbors per node |
/// | `mask_target_edges` | true | hide intra-clique edge times from the encoder |
/// | `epochs` | 50 | training epochs |
/// | `dyn_epochs` | 5 | passes over the stream for dynamic embeddings |
/// | `batch_size` | 16 | samples per optimizer step |
/// | `lr` | 0.001 | Adam learning rate |
/// | `seed` | 0 | RNG seed |
/// | `split` | chronological | `chronological` or `random` |
/// | `exclude_tied` | false | drop samples with tied first-interaction times |
/// | `max_samples` | none | keep only the earliest-completing samples |
/// | `pad_rank` | false | score non-permutations with padded ranks |
/// | `prefixes` | 50,100,150,200 | test prefixes for dyn-emb accuracy |
/// | `output` | none | output root (else `IOP_OUTPUT_ROOT`, else `runs`) |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub n: usize,
    pub k: usize,
    pub model: ModelKind,
    #[serde(with = "pooling_serde")]
    pub pooling: Pooling,
    pub dim: usize,
    pub time_dim: usize,
    pub hidden: usize,
    pub max_neighbors: usize,
    pub mask_target_edges: bool,
    pub epochs: usize,
    pub dyn_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub split: SplitMode,
    pub exclude_tied: bool,
    pub max_samples: Option<usize>,
    pub pad_rank: bool,
    pub prefixes: Vec<usize>,
    #[serde(skip)]
    pub output: Option<PathBuf>,
}

mod pooling_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(p: &Pooling, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(super::pooling_name(*p))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Pooling, D::Error> {
        let s = String::deserialize(d)?;
        super::parse_pooling(&s).map_err(serde::de::Error::custom)
    }
}

fn pooling_name(p: Pooling) -> &'static str {
    match p {
        Pooling::Concat => "concat",
        Pooling::Mean => "mean",
    }
}

fn parse_pooling(s: &str) -> Result<Pooling> {
    match s {
        "concat" => Ok(Pooling::Concat),
        "mean" => Ok(Pooling::Mean),
        other => Err(IopError::Config(format!("unknown pooling {other:?}"))),
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: String::new(),
            n: 3,
            k: 1,
            model: ModelKind::Classifier,
            pooling: Pooling::Concat,
            dim: 128,
            time_dim: 16,
            hidden: 128,
            max_neighbors: 16,
            mask_target_edges: true,
            epochs: 50,
            dyn_epochs: 5,
            batch_size: 16,
            lr: 1e-3,
            seed: 0,
            split: SplitMode::Chronological,
            exclude_tied: false,
            max_samples: None,
            pad_rank: false,
            prefixes: vec![50, 100, 150, 200],
            output: None,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| IopError::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(IopError::Config(format!(
            "{key}: expected true or false, got {value:?}"
        ))),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| IopError::Config(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = value.to_string(),
            "n" => self.n = parse_num(key, value)?,
            "k" => self.k = parse_num(key, value)?,
            "model" => self.model = value.parse()?,
            "pooling" => self.pooling = parse_pooling(value)?,
            "dim" => self.dim = parse_num(key, value)?,
            "time_dim" => self.time_dim = parse_num(key, value)?,
            "hidden" => self.hidden = parse_num(key, value)?,
            "max_neighbors" => self.max_neighbors = parse_num(key, value)?,
            "mask_target_edges" => self.mask_target_edges = parse_bool(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "dyn_epochs" => self.dyn_epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "split" => {
                self.split = match value {
                    "chronological" => SplitMode::Chronological,
                    "random" => SplitMode::Random,
                    other => return Err(IopError::Config(format!("unknown split mode {other:?}"))),
                }
            }
            "exclude_tied" => self.exclude_tied = parse_bool(key, value)?,
            "max_samples" => {
                self.max_samples = match value {
                    "" | "none" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "pad_rank" => self.pad_rank = parse_bool(key, value)?,
            "prefixes" => {
                self.prefixes = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse_num(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "output" => self.output = Some(PathBuf::from(value)),
            other => return Err(IopError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Text form accepted by [`ExperimentConfig::parse`]; `output` is omitted.
    pub fn to_kv_string(&self) -> String {
        let prefixes: Vec<String> = self.prefixes.iter().map(|p| p.to_string()).collect();
        let split = match self.split {
            SplitMode::Chronological => "chronological",
            SplitMode::Random => "random",
        };
        let mut out = String::new();
        let mut put = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        put("dataset", self.dataset.clone());
        put("n", self.n.to_string());
        put("k", self.k.to_string());
        put("model", self.model.to_string());
        put("pooling", pooling_name(self.pooling).to_string());
        put("dim", self.dim.to_string());
        put("time_dim", self.time_dim.to_string());
        put("hidden", self.hidden.to_string());
        put("max_neighbors", self.max_neighbors.to_string());
        put("mask_target_edges", self.mask_target_edges.to_string());
        put("epochs", self.epochs.to_string());
        put("dyn_epochs", self.dyn_epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("lr", self.lr.to_string());
        put("seed", self.seed.to_string());
        put("split", split.to_string());
        put("exclude_tied", self.exclude_tied.to_string());
        put(
            "max_samples",
            self.max_samples.map_or("none".to_string(), |m| m.to_string()),
        );
        put("pad_rank", self.pad_rank.to_string());
        put("prefixes", prefixes.join(","));
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(IopError::Config(msg));
        if self.dataset.is_empty() {
            return bad("dataset is required".into());
        }
        if self.n < 3 {
            return bad(format!("n must be at least 3, got {}", self.n));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.dim == 0 || self.hidden == 0 || self.batch_size == 0 || self.max_neighbors == 0 {
            return bad("dim, hidden, batch_size and max_neighbors must be positive".into());
        }
        if self.model.is_dyn() && self.dyn_epochs == 0 {
            return bad("dyn_epochs must be at least 1".into());
        }
        if self.time_dim == 0 || !self.time_dim.is_multiple_of(2) {
            return bad(format!("time_dim must be even and positive, got {}", self.time_dim));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        let needs_ranking = matches!(self.model, ModelKind::Classifier) || self.model.is_dyn();
        if needs_ranking && self.n > MAX_CLASSIFIER_N {
            return bad(format!(
                "{} enumerates all orderings and supports n <= {MAX_CLASSIFIER_N}",
                self.model
            ));
        }
        if let ModelKind::TimeT(Some(t)) = self.model {
            let m = EdgeVocab::new(self.n).len();
            if t == 0 || t > m {
                return bad(format!("timestep {t} outside 1..={m}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_keys() {
        let cfg = ExperimentConfig::parse(
            "# experiment\ndataset = data/college.txt\nn = 4\nmodel = time-t:3  # third edge\npooling = mean\nepochs=2\nprefixes = 10, 20\n",
        )
        .unwrap();
        assert_eq!(cfg.n, 4);
        assert_eq!(cfg.model, ModelKind::TimeT(Some(3)));
        assert_eq!(cfg.pooling, Pooling::Mean);
        assert_eq!(cfg.prefixes, vec![10, 20]);
        assert_eq!(cfg.k, 1);
        cfg.validate().unwrap();
    }

    #[test]
    fn text_form_round_trips() {
        let mut cfg = ExperimentConfig {
            dataset: "synth:nodes=30".into(),
            model: ModelKind::DynEmbProjected,
            max_samples: Some(40),
            ..Default::default()
        };
        cfg.lr = 0.0025;
        assert_eq!(ExperimentConfig::parse(&cfg.to_kv_string()).unwrap(), cfg);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&json).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::parse("colour = blue").is_err());
        assert!(ExperimentConfig::parse("model = gat").is_err());
        assert!(ExperimentConfig::parse("n three").is_err());
        let base = ExperimentConfig {
            dataset: "x".into(),
            ..Default::default()
        };
        for (k, v) in [("epochs", "0"), ("n", "2"), ("time_dim", "7"), ("model", "time-t:4")] {
            let mut c = base.clone();
            c.set(k, v).unwrap();
            assert!(c.validate().is_err(), "{k}={v}");
        }
        let mut c = base.clone();
        c.set("n", "5").unwrap();
        assert!(c.validate().is_err());
        c.set("model", "sequence-perm").unwrap();
        assert!(c.validate().is_ok());
    }
}
