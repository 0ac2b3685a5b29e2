use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::filter::{consistency_filter, dedup, predict_label_generation, predict_label_scoring, FilterMode};
use super::journal::ItemStore;
use super::parse::parse_completion;
use super::stats::StageStats;
use super::{Candidate, GenerationRecord, ParseResult, Stage, SynthError, SyntheticExample, Verdict};
use crate::backend::{Backend, GenerationParams};
use crate::corpus::Document;
use crate::prompting::{
    build_exemplar_set, build_filter_set, render_generation_prompt, ExemplarSet, LabelSet, LabeledPair, QGenVariant,
    RelevanceLabel, TemplateSet, TruncationEvent,
};

/// End-to-end generation recipe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Flow {
    /// Relevant queries only; negatives come from a retrieval miner.
    RelevantOnly,
    /// One prompt per (document, label).
    LabelConditioned,
    /// One prompt per document yielding a relevant and an irrelevant query.
    Pairwise,
    /// Relevant-only first, then one pairwise prompt per surviving relevant
    /// query to write the irrelevant one.
    IterativePairwise,
    /// Fine-grained pairwise prompts over a schedule of ordered label pairs.
    LabelPairs,
    /// One prompt per document asking for a query per label.
    AllLabels,
}

impl Flow {
    pub fn as_str(self) -> &'static str {
        match self {
            Flow::RelevantOnly => "relevant-only",
            Flow::LabelConditioned => "label-conditioned",
            Flow::Pairwise => "pairwise",
            Flow::IterativePairwise => "iterative-pairwise",
            Flow::LabelPairs => "label-pairs",
            Flow::AllLabels => "all-labels",
        }
    }

    pub fn stages(self) -> &'static [Stage] {
        match self {
            Flow::RelevantOnly => &[Stage::Generate, Stage::MinedNegative],
            Flow::IterativePairwise => &[Stage::Generate, Stage::Iterative],
            _ => &[Stage::Generate],
        }
    }
}

impl fmt::Display for Flow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Flow {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            Flow::RelevantOnly,
            Flow::LabelConditioned,
            Flow::Pairwise,
            Flow::IterativePairwise,
            Flow::LabelPairs,
            Flow::AllLabels,
        ]
        .into_iter()
        .find(|f| f.as_str() == s)
        .ok_or_else(|| SynthError::Config(format!("unknown flow {s:?}")))
    }
}

/// Ordered label pairs for [`Flow::LabelPairs`]: for four or more labels,
/// every label paired with the one two ranks away, in both orders, so each
/// label appears as query1 and as query2 and adjacent labels are skipped.
/// Smaller sets use every ordered pair.
pub fn default_pair_schedule(labels: &LabelSet) -> Vec<(String, String)> {
    let names = labels.names();
    let n = names.len();
    if n >= 4 {
        (0..n - 2)
            .flat_map(|i| [(names[i].clone(), names[i + 2].clone()), (names[i + 2].clone(), names[i].clone())])
            .collect()
    } else {
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    out.push((names[i].clone(), names[j].clone()));
                }
            }
        }
        out
    }
}

/// Every exemplar set a flow needs.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSets {
    pub flow: Flow,
    pub label_set: LabelSet,
    /// First-stage prompt sets; several only for label pairs.
    pub generation: Vec<ExemplarSet>,
    /// Iterative second stage.
    pub stage2: Option<ExemplarSet>,
    pub filter: ExemplarSet,
}

impl FlowSets {
    pub fn build(
        flow: Flow,
        pairs: &[LabeledPair],
        label_set: &LabelSet,
        templates: &TemplateSet,
        schedule: Option<&[(String, String)]>,
    ) -> Result<Self, SynthError> {
        let build = |v: QGenVariant| build_exemplar_set(pairs, v, label_set, templates);
        let mut stage2 = None;
        let generation = match flow {
            Flow::RelevantOnly => vec![build(QGenVariant::RelevantOnly)?],
            Flow::LabelConditioned => vec![build(QGenVariant::LabelConditioned)?],
            Flow::Pairwise => vec![build(QGenVariant::Pairwise)?],
            Flow::IterativePairwise => {
                stage2 = Some(build(QGenVariant::IterativeStage2)?);
                vec![build(QGenVariant::RelevantOnly)?]
            }
            Flow::AllLabels => vec![build(QGenVariant::AllLabels)?],
            Flow::LabelPairs => {
                let schedule = match schedule {
                    Some(s) => s.to_vec(),
                    None => default_pair_schedule(label_set),
                };
                let Some((a, b)) = schedule.first() else {
                    return Err(SynthError::Config("empty label-pair schedule".into()));
                };
                let first = build(QGenVariant::PairwiseLabelPair(a.clone(), b.clone()))?;
                let mut sets = Vec::with_capacity(schedule.len());
                for (a, b) in &schedule {
                    sets.push(first.retarget(QGenVariant::PairwiseLabelPair(a.clone(), b.clone()))?);
                }
                sets
            }
        };
        let sets = Self {
            flow,
            label_set: label_set.clone(),
            generation,
            stage2,
            filter: build_filter_set(pairs, label_set, templates)?,
        };
        sets.validate()?;
        Ok(sets)
    }

    /// Check that the sets fit the flow and share one label set.
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::Config(msg));
        if self.generation.is_empty() {
            return bad(format!("{} has no generation prompts", self.flow));
        }
        let expected = |v: &QGenVariant| match self.flow {
            Flow::RelevantOnly | Flow::IterativePairwise => *v == QGenVariant::RelevantOnly,
            Flow::LabelConditioned => *v == QGenVariant::LabelConditioned,
            Flow::Pairwise => *v == QGenVariant::Pairwise,
            Flow::LabelPairs => matches!(v, QGenVariant::PairwiseLabelPair(..)),
            Flow::AllLabels => *v == QGenVariant::AllLabels,
        };
        for set in &self.generation {
            if !expected(&set.variant) {
                return bad(format!("{} prompts cannot drive the {} flow", set.variant, self.flow));
            }
        }
        if self.flow != Flow::LabelPairs && self.generation.len() != 1 {
            return bad(format!("{} takes exactly one generation set", self.flow));
        }
        match (&self.stage2, self.flow) {
            (Some(s), Flow::IterativePairwise) if s.variant == QGenVariant::IterativeStage2 => {}
            (None, f) if f != Flow::IterativePairwise => {}
            _ => return bad(format!("{} needs a second-stage set only for the iterative flow", self.flow)),
        }
        let all = self.generation.iter().chain(&self.stage2).chain([&self.filter]);
        for set in all {
            if set.label_set != self.label_set {
                return bad("exemplar sets use different label sets".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSpec {
    pub sets: FlowSets,
    pub params: GenerationParams,
    pub filter_mode: FilterMode,
    /// Hard negatives mined per relevant query (relevant-only flow).
    pub negatives_per_query: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub workers: usize,
    /// Stop after computing this many items that were not already stored.
    pub halt_after: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            halt_after: None,
        }
    }
}

/// Supplies irrelevant documents for relevant synthetic queries.
pub trait NegativeMiner {
    /// Up to `per_query` examples per relevant example, labelled
    /// `negative_label`, never pointing at the source document.
    fn mine(
        &self,
        relevant: &[SyntheticExample],
        per_query: usize,
        negative_label: &RelevanceLabel,
    ) -> Vec<SyntheticExample>;
}

/// A generation request that failed after retries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureEvent {
    pub doc_id: String,
    pub stage: Stage,
    pub variant: QGenVariant,
    pub prompt_index: usize,
    pub error: String,
}

/// Everything produced for one document, before deduplication.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemOutcome {
    pub doc_id: String,
    pub records: Vec<GenerationRecord>,
    pub failures: Vec<FailureEvent>,
    /// Filtered candidates; verdicts are retained or a filter drop.
    pub examples: Vec<SyntheticExample>,
    pub stats: BTreeMap<Stage, StageStats>,
    pub truncation: Option<TruncationEvent>,
}

/// One line of the invalid-output audit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub doc_id: String,
    pub stage: Stage,
    pub variant: QGenVariant,
    pub prompt_index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_index: Option<usize>,
    pub reason: String,
    pub raw_text_truncated_200: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunOutput {
    /// All examples with their final verdicts.
    pub examples: Vec<SyntheticExample>,
    pub records: Vec<GenerationRecord>,
    pub audit: Vec<AuditRecord>,
    pub stats: BTreeMap<Stage, StageStats>,
    pub truncations: Vec<TruncationEvent>,
}

impl RunOutput {
    pub fn retained(&self) -> impl Iterator<Item = &SyntheticExample> {
        self.examples.iter().filter(|e| e.is_retained())
    }

    pub fn total_stats(&self) -> StageStats {
        StageStats::merged(self.stats.values())
    }
}

struct Worker<'a> {
    backend: &'a dyn Backend,
    spec: &'a PipelineSpec,
}

impl Worker<'_> {
    fn item(&self, doc: &Document) -> Result<ItemOutcome, SynthError> {
        let mut out = ItemOutcome {
            doc_id: doc.id.clone(),
            records: Vec::new(),
            failures: Vec::new(),
            examples: Vec::new(),
            stats: BTreeMap::new(),
            truncation: None,
        };
        let sets = &self.spec.sets;
        match sets.flow {
            Flow::LabelConditioned => {
                for (i, label) in sets.label_set.labels().iter().enumerate() {
                    self.prompt(doc, Stage::Generate, &sets.generation[0], i, Some(label), None, &mut out)?;
                }
            }
            Flow::LabelPairs => {
                for (i, set) in sets.generation.iter().enumerate() {
                    self.prompt(doc, Stage::Generate, set, i, None, None, &mut out)?;
                }
            }
            Flow::IterativePairwise => {
                let relevant = self.prompt(doc, Stage::Generate, &sets.generation[0], 0, None, None, &mut out)?;
                let stage2 = sets.stage2.as_ref().ok_or_else(|| SynthError::Config("missing stage-2 set".into()))?;
                for (i, q) in relevant.iter().enumerate() {
                    self.prompt(doc, Stage::Iterative, stage2, i, None, Some(q), &mut out)?;
                }
            }
            Flow::RelevantOnly | Flow::Pairwise | Flow::AllLabels => {
                self.prompt(doc, Stage::Generate, &sets.generation[0], 0, None, None, &mut out)?;
            }
        }
        Ok(out)
    }

    /// Render, generate, parse and filter one prompt. Returns the retained
    /// queries.
    #[allow(clippy::too_many_arguments)]
    fn prompt(
        &self,
        doc: &Document,
        stage: Stage,
        set: &ExemplarSet,
        prompt_index: usize,
        target_label: Option<&RelevanceLabel>,
        prior_query: Option<&str>,
        out: &mut ItemOutcome,
    ) -> Result<Vec<String>, SynthError> {
        let label_set = &self.spec.sets.label_set;
        let prompt = render_generation_prompt(set, doc, target_label, prior_query)?;
        if out.truncation.is_none() {
            out.truncation = prompt.truncation.clone();
        }
        let stats = out.stats.entry(stage).or_default();
        stats.prompt_inputs += 1;
        let completions = match self.backend.generate(&prompt, &self.spec.params) {
            Ok(c) => c,
            Err(e) => {
                stats.failed_generations += 1;
                out.failures.push(FailureEvent {
                    doc_id: doc.id.clone(),
                    stage,
                    variant: set.variant.clone(),
                    prompt_index,
                    error: e.to_string(),
                });
                return Ok(Vec::new());
            }
        };
        let arity = set.variant.arity(label_set) as u64;
        stats.requested_queries += completions.len() as u64;
        stats.requested_candidates += completions.len() as u64 * arity;

        let mut candidates = Vec::new();
        for c in &completions {
            let parse = parse_completion(&set.variant, &prompt.complete_with(&c.text), label_set, target_label);
            match &parse {
                ParseResult::Valid(queries) => {
                    stats.valid_query_outputs += queries.len() as u64;
                    candidates.extend(queries.iter().map(|q| Candidate {
                        query: q.query.clone(),
                        doc_id: doc.id.clone(),
                        intended_label: q.intended_label.clone(),
                        variant: set.variant.clone(),
                        stage,
                    }));
                }
                ParseResult::Invalid(_) => stats.invalid_completions += 1,
            }
            out.records.push(GenerationRecord {
                doc_id: doc.id.clone(),
                variant: set.variant.clone(),
                stage,
                prompt_index,
                output_index: c.output_index,
                raw_text: c.text.clone(),
                parse,
            });
        }

        let predict = match self.spec.filter_mode {
            FilterMode::Scoring => predict_label_scoring,
            FilterMode::Generation => predict_label_generation,
        };
        let predictions = candidates
            .iter()
            .map(|c| predict(self.backend, &self.spec.sets.filter, &c.query, doc, label_set))
            .collect::<Result<Vec<_>, _>>()?;
        let filtered = consistency_filter(&candidates, &predictions)?;
        let stats = out.stats.entry(stage).or_default();
        let mut retained = Vec::new();
        for e in &filtered {
            match e.verdict {
                Verdict::Retained => {
                    stats.filtered_query_outputs += 1;
                    retained.push(e.query.clone());
                }
                Verdict::DroppedLabelMismatch => stats.dropped_label_mismatch += 1,
                Verdict::DroppedTie => stats.dropped_tie += 1,
                Verdict::DroppedFilterError => stats.filter_errors += 1,
                Verdict::DroppedDuplicateConflict | Verdict::DroppedDuplicate => {}
            }
        }
        out.examples.extend(filtered);
        Ok(retained)
    }
}

/// Process documents on a pool of workers. Results come back in document
/// order whatever the scheduling.
fn run_items(
    worker: &Worker<'_>,
    docs: &[Document],
    options: RunOptions,
    store: Option<&dyn ItemStore>,
) -> Result<Vec<ItemOutcome>, SynthError> {
    let slots: Vec<Mutex<Option<ItemOutcome>>> = docs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let fresh = AtomicUsize::new(0);
    let halted = AtomicBool::new(false);
    let abort = AtomicBool::new(false);
    let error: Mutex<Option<(usize, SynthError)>> = Mutex::new(None);

    let fail = |i: usize, e: SynthError| {
        abort.store(true, Ordering::SeqCst);
        let mut slot = error.lock().unwrap_or_else(|p| p.into_inner());
        if slot.as_ref().is_none_or(|(j, _)| i < *j) {
            *slot = Some((i, e));
        }
    };

    std::thread::scope(|scope| {
        for _ in 0..options.workers.max(1) {
            scope.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(doc) = docs.get(i) else { break };
                if let Some(done) = store.and_then(|s| s.lookup(&doc.id)) {
                    *slots[i].lock().unwrap_or_else(|p| p.into_inner()) = Some(done);
                    continue;
                }
                if let Some(limit) = options.halt_after {
                    if fresh.fetch_add(1, Ordering::SeqCst) >= limit {
                        halted.store(true, Ordering::SeqCst);
                        continue;
                    }
                }
                let outcome = worker.item(doc).and_then(|o| {
                    if let Some(s) = store {
                        s.record(&o)?;
                    }
                    Ok(o)
                });
                match outcome {
                    Ok(o) => *slots[i].lock().unwrap_or_else(|p| p.into_inner()) = Some(o),
                    Err(e) => fail(i, e),
                }
            });
        }
    });

    if let Some((_, e)) = error.into_inner().unwrap_or_else(|p| p.into_inner()) {
        return Err(e);
    }
    if halted.load(Ordering::SeqCst) {
        return Err(SynthError::Halted {
            completed: options.halt_after.unwrap_or(0),
        });
    }
    slots
        .into_iter()
        .map(|s| s.into_inner().unwrap_or_else(|p| p.into_inner()))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| SynthError::Config("worker pool left items unprocessed".into()))
}

fn truncate_chars(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

/// Run a flow over `docs`: generate, parse, filter, mine negatives
/// (relevant-only) and deduplicate, with full per-stage accounting.
///
/// Items already present in `store` are reused instead of recomputed, and
/// fresh ones are recorded there as they finish.
pub fn run_variant(
    backend: &dyn Backend,
    docs: &[Document],
    spec: &PipelineSpec,
    miner: Option<&dyn NegativeMiner>,
    options: RunOptions,
    store: Option<&dyn ItemStore>,
) -> Result<RunOutput, SynthError> {
    spec.sets.validate()?;
    spec.params
        .validate()
        .map_err(|e| SynthError::Config(e.to_string()))?;
    if spec.sets.flow == Flow::RelevantOnly && miner.is_none() {
        return Err(SynthError::Config("the relevant-only flow needs a negative miner".into()));
    }
    let mut sorted: Vec<&Document> = docs.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let docs: Vec<Document> = sorted.into_iter().cloned().collect();

    let worker = Worker { backend, spec };
    let outcomes = run_items(&worker, &docs, options, store)?;

    let mut out = RunOutput::default();
    for stage in spec.sets.flow.stages() {
        out.stats.insert(*stage, StageStats::default());
    }
    for o in outcomes {
        for (stage, s) in &o.stats {
            out.stats.entry(*stage).or_default().merge(s);
        }
        for r in &o.records {
            if let ParseResult::Invalid(reason) = &r.parse {
                out.audit.push(AuditRecord {
                    doc_id: r.doc_id.clone(),
                    stage: r.stage,
                    variant: r.variant.clone(),
                    prompt_index: r.prompt_index,
                    output_index: Some(r.output_index),
                    reason: reason.to_string(),
                    raw_text_truncated_200: truncate_chars(&r.raw_text, 200),
                });
            }
        }
        for f in &o.failures {
            out.audit.push(AuditRecord {
                doc_id: f.doc_id.clone(),
                stage: f.stage,
                variant: f.variant.clone(),
                prompt_index: f.prompt_index,
                output_index: None,
                reason: format!("generation failed: {}", f.error),
                raw_text_truncated_200: String::new(),
            });
        }
        out.truncations.extend(o.truncation);
        out.records.extend(o.records);
        out.examples.extend(o.examples);
    }

    if let (Flow::RelevantOnly, Some(miner)) = (spec.sets.flow, miner) {
        let relevant: Vec<SyntheticExample> = out.retained().cloned().collect();
        let mined = miner.mine(&relevant, spec.negatives_per_query, spec.sets.label_set.bottom());
        out.stats.entry(Stage::MinedNegative).or_default().mined_negatives += mined.len() as u64;
        out.examples.extend(mined.into_iter().map(|mut e| {
            e.stage = Stage::MinedNegative;
            e.verdict = Verdict::Retained;
            e
        }));
    }

    out.examples = dedup(std::mem::take(&mut out.examples));
    for e in &out.examples {
        let s = out.stats.entry(e.stage).or_default();
        match e.verdict {
            Verdict::Retained => {
                s.train_examples += 1;
                *s.per_label_counts.entry(e.label.name.clone()).or_default() += 1;
            }
            Verdict::DroppedDuplicateConflict => s.duplicate_conflicts += 1,
            Verdict::DroppedDuplicate => s.duplicates_collapsed += 1,
            _ => {}
        }
    }
    Ok(out)
}
