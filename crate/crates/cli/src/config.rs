//! JSON pipeline configuration.

use std::fs;
use std::path::{Path, PathBuf};

use pairgen::backend::{BackendDescriptor, BackendKind, GenerationParams, MockBehavior, ENV_BACKEND_URL};
use pairgen::baseline::Hyperparams;
use pairgen::prompting::{DocField, LabelSet, RelevanceLabel};
use pairgen::retrieval::Bm25Params;
use pairgen::synthgen::{FilterMode, Flow};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelsSpec {
    /// `binary` or `fine-grained`.
    Named(String),
    Custom(Vec<RelevanceLabel>),
}

impl Default for LabelsSpec {
    fn default() -> Self {
        LabelsSpec::Named("binary".into())
    }
}

impl LabelsSpec {
    pub fn resolve(&self) -> Result<LabelSet, CliError> {
        match self {
            LabelsSpec::Named(n) if n == "binary" => Ok(LabelSet::binary()),
            LabelsSpec::Named(n) if n == "fine-grained" => Ok(LabelSet::fine_grained()),
            LabelsSpec::Named(n) => Err(CliError::Config(format!("unknown label set {n:?}"))),
            LabelsSpec::Custom(labels) => Ok(LabelSet::new(labels.clone())?),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Bm25,
    Baseline,
    Random,
    /// Gold grade lookup; a sanity check for the evaluation plumbing.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k: usize,
    /// BM25 depth merged with gold documents when qrels lack negatives.
    pub pool_depth: usize,
    /// Qrels carry judged negatives, so the pool is the judged set.
    pub gold_negatives: bool,
    pub scorer: ScorerKind,
    pub model: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: 10,
            pool_depth: 20,
            gold_negatives: false,
            scorer: ScorerKind::Bm25,
            model: None,
        }
    }
}

fn default_backend() -> BackendDescriptor {
    BackendDescriptor::mock()
}

fn default_negatives() -> usize {
    1
}

fn default_workers() -> usize {
    4
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_field() -> DocField {
    DocField::Passage
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: PathBuf,
    #[serde(default)]
    pub queries: Option<PathBuf>,
    #[serde(default)]
    pub qrels: Option<PathBuf>,
    pub exemplars: PathBuf,
    #[serde(default)]
    pub template_overrides: Option<PathBuf>,
    #[serde(default = "default_field")]
    pub doc_field: DocField,
    pub flow: Flow,
    #[serde(default)]
    pub labels: LabelsSpec,
    /// Ordered label pairs for the label-pairs flow.
    #[serde(default)]
    pub label_pairs: Option<Vec<(String, String)>>,
    #[serde(default = "default_backend")]
    pub backend: BackendDescriptor,
    #[serde(default)]
    pub mock: MockBehavior,
    #[serde(default)]
    pub generation: GenerationParams,
    #[serde(default)]
    pub sample_size: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub filter_mode: FilterMode,
    #[serde(default = "default_negatives")]
    pub negatives_per_query: usize,
    #[serde(default)]
    pub bm25: Bm25Params,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub train: Hyperparams,
    /// Balanced validation examples held out by `train` and `export`.
    #[serde(default)]
    pub validation_size: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Read, apply overrides and resolve relative paths against the
    /// config file's directory (flag paths stay relative to the caller).
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.apply(overrides);
        if cfg.backend.kind == BackendKind::Remote && cfg.backend.endpoint.is_none() {
            cfg.backend.endpoint = std::env::var(ENV_BACKEND_URL).ok();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.exemplars);
        fix(&mut self.out);
        for p in [&mut self.queries, &mut self.qrels, &mut self.template_overrides, &mut self.eval.model]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        for (name, p) in [("corpus", Some(&self.corpus)), ("exemplars", Some(&self.exemplars))]
            .into_iter()
            .chain([
                ("queries", self.queries.as_ref()),
                ("qrels", self.qrels.as_ref()),
                ("template_overrides", self.template_overrides.as_ref()),
            ])
        {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(CliError::Config(format!("{name} path {} does not exist", p.display())));
                }
            }
        }
        self.labels.resolve()?;
        self.backend.validate()?;
        self.mock.validate()?;
        self.generation.validate()?;
        self.bm25.validate()?;
        self.train.validate()?;
        if self.workers == 0 {
            return Err(CliError::Config("workers must be >= 1".into()));
        }
        if self.eval.k == 0 || self.eval.pool_depth == 0 {
            return Err(CliError::Config("eval k and pool_depth must be >= 1".into()));
        }
        if self.flow == Flow::LabelPairs && self.labels.resolve()?.is_binary() && self.label_pairs.is_none() {
            return Err(CliError::Config("the label-pairs flow expects a fine-grained label set".into()));
        }
        Ok(())
    }

    /// Digest of everything that influences generated data: the config
    /// minus worker count, output directory and input locations, plus the
    /// bytes of the corpus, exemplar and template files.
    pub fn config_hash(&self) -> Result<String, CliError> {
        let mut view = self.clone();
        view.workers = 0;
        view.out = PathBuf::new();
        let mut inputs = vec![&self.corpus, &self.exemplars];
        inputs.extend(self.template_overrides.as_ref());
        let mut h = Sha256::new();
        for p in inputs {
            h.update(file_digest(p)?.as_bytes());
        }
        view.corpus = PathBuf::new();
        view.exemplars = PathBuf::new();
        view.template_overrides = None;
        view.queries = None;
        view.qrels = None;
        view.eval.model = None;
        let json = serde_json::to_string(&view).map_err(|e| CliError::Config(e.to_string()))?;
        h.update(json.as_bytes());
        Ok(hex(&h.finalize()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}
