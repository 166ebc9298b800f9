//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::data::{gen_blobs, gen_spirals, load_idx, Dataset, Standardizer};
use crate::diagnostics::MiConvention;
use crate::error::Result;
use crate::linalg::Rng;
use crate::model::ModelSpec;
use crate::regularizer::{CkaSrConfig, PairWeights, Variant};
use crate::sparsify::PruneMethod;
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug)]
enum Kind {
    Count,
    Seed,
    Real,
    Flag,
    Choice(&'static [&'static str]),
    /// Comma-separated reals; may be empty.
    Reals,
    /// A count of at least 2, or `all`.
    CountOrAll,
    Text,
}

struct Key {
    name: &'static str,
    default: &'static str,
    kind: Kind,
}

const fn key(name: &'static str, default: &'static str, kind: Kind) -> Key {
    Key { name, default, kind }
}

const KEYS: &[Key] = &[
    key("model.depth", "6", Kind::Count),
    key("model.width", "64", Kind::Count),
    key("model.stages", "1", Kind::Count),
    key("data.kind", "spirals", Kind::Choice(&["spirals", "blobs", "idx"])),
    key("data.classes", "3", Kind::Count),
    key("data.per_class", "300", Kind::Count),
    key("data.noise", "0.05", Kind::Real),
    key("data.dim", "2", Kind::Count),
    key("data.spread", "0.5", Kind::Real),
    key("data.eval_fraction", "0.25", Kind::Real),
    key("data.seed", "100", Kind::Seed),
    key("data.standardize", "true", Kind::Flag),
    key("data.images", "", Kind::Text),
    key("data.labels", "", Kind::Text),
    key("train.epochs", "30", Kind::Count),
    key("train.batch_size", "32", Kind::Count),
    key("train.learning_rate", "0.01", Kind::Real),
    key("train.momentum", "0.9", Kind::Real),
    key("train.weight_decay", "5e-4", Kind::Real),
    key("train.seed", "0", Kind::Seed),
    key("train.epsilons", "0.01", Kind::Reals),
    key("cka_sr.beta", "8e-4", Kind::Real),
    key("cka_sr.variant", "standard", Kind::Choice(&["standard", "augmented"])),
    key("cka_sr.pair_weights", "uniform", Kind::Choice(&["uniform", "adjacent"])),
    key("cka_sr.sample_n", "all", Kind::CountOrAll),
    key("cka_sr.batch_m", "1", Kind::Count),
    key("cka_sr.include_input", "true", Kind::Flag),
    key("sparsify.method", "magnitude", Kind::Choice(&["magnitude", "l1_filter", "knapsack", "random"])),
    key("sparsify.ratio", "0.5", Kind::Real),
    key("sparsify.ratios", "", Kind::Reals),
    key("sparsify.finetune_epochs", "0", Kind::Count),
    key("sparsify.train_mask", "none", Kind::Choice(&["none", "random", "random_layerwise"])),
    key("sparsify.train_mask_ratio", "0.9", Kind::Real),
    key("diagnose.mi_samples", "2000", Kind::Count),
    key("diagnose.mi_convention", "appendix", Kind::Choice(&["appendix", "standard"])),
    key("diagnose.epsilons", "1e-6,1e-5,1e-4,1e-3,1e-2,1e-1", Kind::Reals),
    key("diagnose.theorem1_epsilons", "1e-6,1e-4,1e-3,1e-2", Kind::Reals),
    key("output.dir", "runs", Kind::Text),
    key("output.histogram_bins", "101", Kind::Count),
    key("output.histogram_bound", "0.5", Kind::Real),
];

/// Keys that do not change what a run computes and stay out of its hash.
const UNHASHED: &[&str] = &["train.seed", "output.dir"];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, found {text:?}")]
    Syntax { line: usize, text: String },
    #[error("{}unknown key {key:?}", at(*line))]
    UnknownKey { key: String, line: Option<usize> },
    #[error("{}key {key:?} appears twice", at(Some(*line)))]
    Duplicate { key: String, line: usize },
    #[error("{}bad value {value:?} for {key}: expected {expected}", at(*line))]
    BadValue {
        key: String,
        value: String,
        expected: String,
        line: Option<usize>,
    },
    #[error("override {0:?} is not of the form key=value")]
    Override(String),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn at(line: Option<usize>) -> String {
    line.map(|l| format!("line {l}: ")).unwrap_or_default()
}

fn describe(kind: Kind) -> String {
    match kind {
        Kind::Count => "a non-negative integer".into(),
        Kind::Seed => "an unsigned 64-bit integer".into(),
        Kind::Real => "a finite number".into(),
        Kind::Flag => "true or false".into(),
        Kind::Choice(opts) => format!("one of {}", opts.join(", ")),
        Kind::Reals => "a comma-separated list of numbers".into(),
        Kind::CountOrAll => "`all` or an integer >= 2".into(),
        Kind::Text => "text".into(),
    }
}

fn parse_reals(v: &str) -> Option<Vec<f64>> {
    if v.trim().is_empty() {
        return Some(Vec::new());
    }
    v.split(',')
        .map(|s| s.trim().parse::<f64>().ok().filter(|x| x.is_finite()))
        .collect()
}

fn valid(kind: Kind, v: &str) -> bool {
    match kind {
        Kind::Count => v.parse::<usize>().is_ok(),
        Kind::Seed => v.parse::<u64>().is_ok(),
        Kind::Real => v.parse::<f64>().is_ok_and(f64::is_finite),
        Kind::Flag => matches!(v, "true" | "false"),
        Kind::Choice(opts) => opts.contains(&v),
        Kind::Reals => parse_reals(v).is_some(),
        Kind::CountOrAll => v == "all" || v.parse::<usize>().is_ok_and(|n| n >= 2),
        Kind::Text => true,
    }
}

/// A fully resolved configuration: every known key has a value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExperimentConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            values: KEYS.iter().map(|k| (k.name, k.default.to_string())).collect(),
        }
    }
}

impl ExperimentConfig {
    /// Defaults overlaid with the document's assignments. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let Some((k, v)) = t.split_once('=') else {
                return Err(ConfigError::Syntax { line, text: t.to_string() });
            };
            let k = k.trim();
            if seen.insert(k.to_string(), line).is_some() {
                return Err(ConfigError::Duplicate { key: k.to_string(), line });
            }
            cfg.assign(k, v.trim(), Some(line))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        self.assign(key, value, None)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::Override(assignment.to_string()))?;
        self.set(k.trim(), v.trim())
    }

    fn assign(&mut self, k: &str, v: &str, line: Option<usize>) -> Result<(), ConfigError> {
        let Some(spec) = KEYS.iter().find(|s| s.name == k) else {
            return Err(ConfigError::UnknownKey { key: k.to_string(), line });
        };
        if !valid(spec.kind, v) {
            return Err(ConfigError::BadValue {
                key: k.to_string(),
                value: v.to_string(),
                expected: describe(spec.kind),
                line,
            });
        }
        self.values.insert(spec.name, v.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("unknown config key {key}"))
    }

    fn count(&self, key: &str) -> usize {
        self.get(key).parse().expect("validated on assignment")
    }

    fn real(&self, key: &str) -> f64 {
        self.get(key).parse().expect("validated on assignment")
    }

    fn flag(&self, key: &str) -> bool {
        self.get(key) == "true"
    }

    pub fn reals(&self, key: &str) -> Vec<f64> {
        parse_reals(self.get(key)).expect("validated on assignment")
    }

    pub fn seed(&self) -> u64 {
        self.get("train.seed").parse().expect("validated on assignment")
    }

    pub fn data_seed(&self) -> u64 {
        self.get("data.seed").parse().expect("validated on assignment")
    }

    /// Every key in sorted order, one `key = value` per line.
    pub fn resolved_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// First 8 hex digits of the SHA-256 of the resolved config, with the
    /// seed and output location left out.
    pub fn hash8(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.values {
            if !UNHASHED.contains(k) {
                h.update(format!("{k} = {v}\n").as_bytes());
            }
        }
        h.finalize().iter().take(4).map(|b| format!("{b:02x}")).collect()
    }

    pub fn epochs(&self) -> usize {
        self.count("train.epochs")
    }

    pub fn cka_sr(&self) -> CkaSrConfig {
        CkaSrConfig {
            beta: self.real("cka_sr.beta"),
            pair_weights: match self.get("cka_sr.pair_weights") {
                "adjacent" => PairWeights::AdjacentOnly,
                _ => PairWeights::Uniform,
            },
            variant: match self.get("cka_sr.variant") {
                "augmented" => Variant::Augmented,
                _ => Variant::Standard,
            },
            sample_n: match self.get("cka_sr.sample_n") {
                "all" => None,
                n => Some(n.parse().expect("validated on assignment")),
            },
            batch_m: self.count("cka_sr.batch_m"),
            include_input_layer: self.flag("cka_sr.include_input"),
        }
    }

    /// Training settings; the mask is left for the caller.
    pub fn train_config(&self, run_id: impl Into<String>) -> TrainConfig {
        TrainConfig {
            epochs: self.count("train.epochs"),
            batch_size: self.count("train.batch_size"),
            learning_rate: self.real("train.learning_rate"),
            momentum: self.real("train.momentum"),
            weight_decay: self.real("train.weight_decay"),
            seed: self.seed(),
            cka_sr: self.cka_sr(),
            mask: None,
            epsilons: self.reals("train.epsilons"),
            run_id: run_id.into(),
        }
    }

    /// `model.depth` hidden layers of `model.width` units split into
    /// `model.stages` contiguous stages, earlier stages taking the remainder.
    pub fn model_spec(&self, input_dim: usize, num_classes: usize) -> ModelSpec {
        let depth = self.count("model.depth");
        let width = self.count("model.width");
        let stages = self.count("model.stages").clamp(1, depth.max(1));
        let mut spec = ModelSpec::mlp(input_dim, num_classes, depth, width, self.seed());
        spec.stages = (0..stages)
            .map(|s| vec![width; depth / stages + usize::from(s < depth % stages)])
            .collect();
        spec
    }

    /// Generates or loads the dataset and splits it into (train, eval).
    pub fn build_data(&self) -> Result<(Dataset, Dataset)> {
        let seed = self.data_seed();
        let mut rng = Rng::new(seed);
        let classes = self.count("data.classes");
        let per_class = self.count("data.per_class");
        let ds = match self.get("data.kind") {
            "blobs" => gen_blobs(classes, per_class, self.count("data.dim"), self.real("data.spread"), &mut rng)?,
            "idx" => load_idx(self.get("data.images"), self.get("data.labels"))?,
            _ => gen_spirals(classes, per_class, self.real("data.noise"), &mut rng)?,
        };
        let (train, eval) = ds.split(self.real("data.eval_fraction"), &mut Rng::new(seed.wrapping_add(1)))?;
        if !self.flag("data.standardize") {
            return Ok((train, eval));
        }
        let st = Standardizer::fit(&train.features);
        Ok((st.apply_dataset(&train), st.apply_dataset(&eval)))
    }

    pub fn prune_method(&self) -> PruneMethod {
        self.get("sparsify.method").parse().expect("validated on assignment")
    }

    /// `sparsify.ratios` when given, else the single `sparsify.ratio`.
    pub fn prune_ratios(&self) -> Vec<f64> {
        let list = self.reals("sparsify.ratios");
        if list.is_empty() {
            vec![self.real("sparsify.ratio")]
        } else {
            list
        }
    }

    pub fn finetune_epochs(&self) -> usize {
        self.count("sparsify.finetune_epochs")
    }

    pub fn train_mask(&self) -> (&str, f64) {
        (self.get("sparsify.train_mask"), self.real("sparsify.train_mask_ratio"))
    }

    pub fn mi_samples(&self) -> usize {
        self.count("diagnose.mi_samples")
    }

    pub fn mi_convention(&self) -> MiConvention {
        self.get("diagnose.mi_convention").parse().expect("validated on assignment")
    }

    pub fn histogram(&self) -> (usize, f64) {
        (self.count("output.histogram_bins"), self.real("output.histogram_bound"))
    }

    pub fn output_dir(&self) -> PathBuf {
        PathBuf::from(self.get("output.dir"))
    }

    pub fn keys() -> impl Iterator<Item = &'static str> {
        KEYS.iter().map(|k| k.name)
    }
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.resolved_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_overlays_defaults() {
        let cfg = ExperimentConfig::parse("# comment\n\ntrain.epochs = 3\ncka_sr.beta=0\n").unwrap();
        assert_eq!(cfg.epochs(), 3);
        assert_eq!(cfg.cka_sr().beta, 0.0);
        assert_eq!(cfg.get("model.width"), "64");
    }

    #[test]
    fn errors_name_line_and_key() {
        let e = ExperimentConfig::parse("train.epochs = 3\nmodel.colour = red\n").unwrap_err();
        assert!(e.to_string().contains("line 2") && e.to_string().contains("model.colour"), "{e}");
        let e = ExperimentConfig::parse("train.epochs = three\n").unwrap_err();
        assert!(e.to_string().contains("line 1") && e.to_string().contains("train.epochs"), "{e}");
        let e = ExperimentConfig::parse("no equals sign\n").unwrap_err();
        assert!(matches!(e, ConfigError::Syntax { line: 1, .. }));
        let e = ExperimentConfig::parse("train.seed = 1\ntrain.seed = 2\n").unwrap_err();
        assert!(matches!(e, ConfigError::Duplicate { line: 2, .. }));
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.apply_override("cka_sr.sample_n=1").is_err());
        assert!(cfg.apply_override("nonsense").is_err());
        cfg.apply_override("cka_sr.sample_n=8").unwrap();
        assert_eq!(cfg.cka_sr().sample_n, Some(8));
    }

    #[test]
    fn resolved_text_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("sparsify.ratios", "0.7,0.85,0.9,0.95,0.98,0.998").unwrap();
        let back = ExperimentConfig::parse(&cfg.resolved_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.prune_ratios(), vec![0.7, 0.85, 0.9, 0.95, 0.98, 0.998]);
        assert_eq!(ExperimentConfig::keys().count(), cfg.resolved_text().lines().count());
    }

    #[test]
    fn hash_ignores_seed_but_not_beta() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.set("train.seed", "9").unwrap();
        assert_eq!(a.hash8(), b.hash8());
        b.set("cka_sr.beta", "0").unwrap();
        assert_ne!(a.hash8(), b.hash8());
        assert_eq!(a.hash8().len(), 8);
    }

    #[test]
    fn stages_split_depth() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("model.stages", "4").unwrap();
        let spec = cfg.model_spec(2, 3);
        let sizes: Vec<usize> = spec.stages.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![2, 2, 1, 1]);
    }
}
