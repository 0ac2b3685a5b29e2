//! Reference checks shared by the core integration tests and the CLI
//! acceptance suite. Each returns a one-line summary on success and a
//! description of the first discrepancy on failure.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::PathBuf;

use pairgen::backend::{Backend, BackendError, Completion, GenerationParams, MockBackend, MockBehavior};
use pairgen::baseline::{predict_relevance, prepare, random_score, train_features, FeatureVector, Hyperparams, Namespace, PointwiseModel, HASH_DIM};
use pairgen::corpus::{Document, DocumentCollection, Qrels};
use pairgen::evalmetrics::{ndcg_at_k, rank_with_scorer, Gain, NdcgConfig, RankedRun};
use pairgen::fixture::{eval_fixture, golden_prompts, synthetic_corpus};
use pairgen::prompting::{
    build_exemplar_set, build_filter_set, load_labeled_pairs, render_generation_prompt, LabelSet, LabeledPair,
    QGenVariant, RelevanceLabel, RenderedPrompt, TemplateSet,
};
use pairgen::retrieval::{augment_eval_pool, build_index, Bm25Params, HardNegativeMiner};
use pairgen::synthgen::{
    consistency_filter, dedup, parse_completion, predict_label_scoring, run_variant, Candidate, FilterMode, Flow, FlowSets,
    NegativeMiner, ParseResult, PipelineSpec, RunOptions, RunOutput, Stage, StageStats, StatsRow, SyntheticExample,
    Verdict,
};
use pairgen::text::{normalize_query, tokenize, SplitMix64};

pub type Check = Result<String, String>;

pub fn workspace_root() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../.."))
}

pub fn exemplars(name: &str) -> Vec<LabeledPair> {
    load_labeled_pairs(workspace_root().join("fixtures/exemplars").join(name)).unwrap()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- stats

#[derive(serde::Deserialize)]
struct StatsFixture {
    labels: LabelSet,
    stages: BTreeMap<Stage, StageStats>,
}

fn stats_fixture(name: &str) -> Result<StatsFixture, String> {
    let path = workspace_root().join("fixtures/stats").join(name);
    let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{name}: {e}"))
}

fn ratios(row: &StatsRow) -> [&str; 3] {
    [&row.pct_valid_queries, &row.pct_valid_examples, &row.bottom_top_ratio]
}

/// Table ratios recomputed from published counters, exact to two decimals.
pub fn stats_arithmetic() -> Check {
    let pairwise = stats_fixture("pairwise_trec_covid.json")?;
    let relevant = stats_fixture("relevant_only_trec_covid.json")?;
    for (name, f) in [("pairwise", &pairwise), ("relevant-only", &relevant)] {
        for (stage, s) in &f.stages {
            s.check().map_err(|e| format!("{name} {stage}: {e}"))?;
        }
    }
    let row = StatsRow::new("pairwise", &pairwise.stages[&Stage::Generate], &pairwise.labels);
    ensure(ratios(&row) == ["0.89", "0.50", "0.50"], || format!("pairwise row {:?}", ratios(&row)))?;
    let total = StageStats::merged(relevant.stages.values());
    let row = StatsRow::new("relevant-only total", &total, &relevant.labels);
    ensure(ratios(&row) == ["0.99", "0.77", "0.82"], || format!("relevant-only row {:?}", ratios(&row)))?;

    use pairgen::synthgen::format_ratio;
    for (n, d, want) in [(1, 8, "0.13"), (999, 1000, "0.99"), (1000, 1000, "1.00"), (0, 0, "0 (n/a)"), (3, 2, "1.50")] {
        ensure(format_ratio(n, d) == want, || format!("format_ratio({n}, {d}) = {}", format_ratio(n, d)))?;
    }
    Ok("pairwise 0.89/0.50/0.50, relevant-only total 0.99/0.77/0.82".into())
}

// ---------------------------------------------------------------- NDCG

fn gain_value(gain: Gain, grade: u32) -> f64 {
    match gain {
        Gain::Exponential => 2f64.powi(grade as i32) - 1.0,
        Gain::Linear => f64::from(grade),
    }
}

fn plain_dcg(grades: &[u32], k: usize, gain: Gain) -> f64 {
    let mut total = 0.0;
    for (i, g) in grades.iter().take(k).enumerate() {
        total += gain_value(gain, *g) / (i as f64 + 2.0).log2();
    }
    total
}

fn permutations(items: &[u32]) -> Vec<Vec<u32>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// NDCG with the ideal DCG found by trying every ordering of the judged
/// grades.
fn brute_force_ndcg(ranked_grades: &[u32], judged: &[u32], k: usize, gain: Gain) -> f64 {
    let ideal = permutations(judged)
        .iter()
        .map(|p| plain_dcg(p, k, gain))
        .fold(0.0, f64::max);
    if ideal == 0.0 {
        0.0
    } else {
        plain_dcg(ranked_grades, k, gain) / ideal
    }
}

/// NDCG@k against brute force over random pools of at most six documents
/// with grades in {0, 1, 2}; ideal orderings must score exactly 1.
pub fn ndcg_oracle(pools: usize) -> Check {
    let mut rng = SplitMix64::new(2024);
    let mut worst = 0.0f64;
    let mut ideal_checked = 0;
    for p in 0..pools {
        let size = 1 + rng.below(6) as usize;
        let mut scored = Vec::new();
        let mut qrels = Qrels::new();
        let mut grades = BTreeMap::new();
        for d in 0..size {
            let id = format!("d{d}");
            scored.push((id.clone(), rng.next_f64()));
            let grade = rng.below(3) as u32;
            qrels.insert("q", &id, grade).unwrap();
            grades.insert(id, grade);
        }
        let mut run = RankedRun::new();
        run.insert("q", scored).map_err(|e| e.to_string())?;
        let ranked: Vec<u32> = run.get("q").unwrap().iter().map(|(d, _)| grades[d]).collect();
        let judged: Vec<u32> = grades.values().copied().collect();

        let mut ideal_run = RankedRun::new();
        ideal_run
            .insert("q", grades.iter().map(|(d, g)| (d.clone(), f64::from(*g))).collect())
            .map_err(|e| e.to_string())?;
        for k in [1, 3, 5, 10] {
            for gain in [Gain::Exponential, Gain::Linear] {
                let cfg = NdcgConfig { k, gain };
                let got = ndcg_at_k(&run, &qrels, cfg).map_err(|e| e.to_string())?.mean;
                let want = brute_force_ndcg(&ranked, &judged, k, gain);
                worst = worst.max((got - want).abs());
                ensure((got - want).abs() <= 1e-12, || format!("pool {p} k={k} {gain:?}: {got} vs {want}"))?;
                let report = ndcg_at_k(&ideal_run, &qrels, cfg).map_err(|e| e.to_string())?;
                if report.zero_ideal.is_empty() {
                    ensure(report.mean == 1.0, || format!("pool {p} ideal ordering scored {}", report.mean))?;
                    ideal_checked += 1;
                }
            }
        }
    }
    // Grades [3, 2, 3, 0, 1, 2] in rank order, k = 6, exponential gain.
    let mut run = RankedRun::new();
    let mut qrels = Qrels::new();
    let mut scored = Vec::new();
    for (i, g) in [3u32, 2, 3, 0, 1, 2].iter().enumerate() {
        scored.push((format!("d{i}"), 10.0 - i as f64));
        qrels.insert("h", &format!("d{i}"), *g).unwrap();
    }
    run.insert("h", scored).map_err(|e| e.to_string())?;
    let got = ndcg_at_k(&run, &qrels, NdcgConfig { k: 6, gain: Gain::Exponential }).map_err(|e| e.to_string())?.mean;
    ensure((got - 0.948_810_748_6).abs() < 1e-9, || format!("hand-computed case gave {got}"))?;
    Ok(format!("{pools} pools x 4 cutoffs x 2 gains, max abs error {worst:.1e}, {ideal_checked} ideal orderings at 1.0"))
}

// ---------------------------------------------------------------- BM25

/// Hand-computed scores on three documents at k1 = 1.2, b = 0.75, and the
/// prefix property of search on random corpora of up to 50 documents.
pub fn bm25_oracle(corpora: usize) -> Check {
    let docs = [("d1", "the cat sat"), ("d2", "the dog sat on the mat"), ("d3", "cat cat dog")]
        .iter()
        .map(|(id, text)| Document::new(*id, None, *text))
        .collect();
    let coll = DocumentCollection::new(docs, "hand").unwrap();
    let index = build_index(&coll, Bm25Params { k1: 1.2, b: 0.75 }).map_err(|e| e.to_string())?;
    let expected = [
        ("cat", "d1", 0.523_548_346_501_579),
        ("cat", "d2", 0.0),
        ("cat", "d3", 0.695_131_418_044_113_3),
        ("dog mat", "d1", 0.0),
        ("dog mat", "d2", 1.204_465_034_326_949_6),
        ("dog mat", "d3", 0.523_548_346_501_579),
    ];
    for (q, d, want) in expected {
        let got = index.score_doc(q, d);
        ensure((got - want).abs() <= 1e-9, || format!("{q:?} on {d}: {got} vs {want}"))?;
    }

    let vocab: Vec<String> = (0..25).map(|i| format!("w{i}")).collect();
    let mut rng = SplitMix64::new(77);
    let mut searches = 0;
    for c in 0..corpora {
        let n = 1 + rng.below(50) as usize;
        let docs: Vec<Document> = (0..n)
            .map(|i| {
                let len = 1 + rng.below(40) as usize;
                let words: Vec<&str> = (0..len).map(|_| vocab[rng.below(vocab.len() as u64) as usize].as_str()).collect();
                Document::new(format!("d{i:03}"), None, words.join(" "))
            })
            .collect();
        let coll = DocumentCollection::new(docs, "random").unwrap();
        let index = build_index(&coll, Bm25Params::default()).map_err(|e| e.to_string())?;
        for _ in 0..3 {
            let qlen = 1 + rng.below(4) as usize;
            let query: Vec<&str> = (0..qlen).map(|_| vocab[rng.below(vocab.len() as u64) as usize].as_str()).collect();
            let query = query.join(" ");
            let mut previous = Vec::new();
            for k in 0..=n + 1 {
                let hits = index.search(&query, k);
                ensure(hits.len() <= k, || format!("corpus {c}: {} hits for k={k}", hits.len()))?;
                ensure(hits.starts_with(&previous), || format!("corpus {c} {query:?}: search({k}) extends a different prefix"))?;
                for (d, s) in &hits {
                    ensure((index.score_doc(&query, d) - s).abs() <= 1e-12, || format!("corpus {c}: search and score_doc disagree on {d}"))?;
                }
                previous = hits;
                searches += 1;
            }
        }
    }
    Ok(format!("3-doc hand fixture exact; prefix property over {corpora} corpora, {searches} searches"))
}

// ---------------------------------------------------------------- filter and dedup

/// Scores each label from a fixed table keyed on the candidate query.
pub struct StubScorer {
    pub scores: BTreeMap<String, Vec<f64>>,
}

impl Backend for StubScorer {
    fn generate(&self, _: &RenderedPrompt, _: &GenerationParams) -> Result<Vec<Completion>, BackendError> {
        Err(BackendError::Config("scoring only".into()))
    }

    fn score(&self, prompt: &RenderedPrompt, continuations: &[String]) -> Result<Vec<f64>, BackendError> {
        let q = prompt.meta.filter_query.as_deref().unwrap_or_default();
        match self.scores.get(q) {
            Some(s) if s.len() == continuations.len() => Ok(s.clone()),
            _ => Err(BackendError::Config(format!("no scores for {q}"))),
        }
    }
}

/// Argmax filtering through a stubbed scorer: label-matching candidates
/// stay, mismatches, ties and failures drop.
pub fn stubbed_filter() -> Result<usize, String> {
    let labels = LabelSet::fine_grained();
    let filter = build_filter_set(&exemplars("product.jsonl"), &labels, &TemplateSet::product()).map_err(|e| e.to_string())?;
    let doc = Document::new("p1", None, "Stainless steel water bottle with straw lid");
    // Scores follow descending label order: Exact, Substitute, Complement, Irrelevant.
    let table = [
        ("steel water bottle", "Exact", vec![-0.5, -2.0, -3.0, -4.0], Verdict::Retained),
        ("plastic bottle", "Exact", vec![-3.0, -0.7, -2.0, -4.0], Verdict::DroppedLabelMismatch),
        ("bottle brush", "Complement", vec![-3.0, -2.0, -0.2, -4.0], Verdict::Retained),
        ("garden hose", "Irrelevant", vec![-3.0, -1.0, -2.0, -1.0], Verdict::DroppedTie),
        ("flat tie", "Exact", vec![-1.0, -1.0, -1.0, -1.0], Verdict::DroppedTie),
        ("unscored query", "Substitute", vec![], Verdict::DroppedFilterError),
    ];
    let backend = StubScorer {
        scores: table.iter().filter(|r| !r.2.is_empty()).map(|r| (r.0.to_string(), r.2.clone())).collect(),
    };
    let candidates: Vec<Candidate> = table
        .iter()
        .map(|(q, label, _, _)| Candidate {
            query: q.to_string(),
            doc_id: doc.id.clone(),
            intended_label: labels.get(label).unwrap().clone(),
            variant: QGenVariant::AllLabels,
            stage: Stage::Generate,
        })
        .collect();
    let predictions = candidates
        .iter()
        .map(|c| predict_label_scoring(&backend, &filter, &c.query, &doc, &labels))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let verdicts: Vec<Verdict> = consistency_filter(&candidates, &predictions)
        .map_err(|e| e.to_string())?
        .iter()
        .map(|e| e.verdict)
        .collect();
    let want: Vec<Verdict> = table.iter().map(|r| r.3).collect();
    ensure(verdicts == want, || format!("verdicts {verdicts:?}, expected {want:?}"))?;
    ensure(consistency_filter(&candidates, &predictions[1..]).is_err(), || "misaligned input accepted".into())?;
    Ok(table.len())
}

const FLOWS: [(Flow, bool); 7] = [
    (Flow::RelevantOnly, false),
    (Flow::LabelConditioned, false),
    (Flow::Pairwise, false),
    (Flow::IterativePairwise, false),
    (Flow::LabelConditioned, true),
    (Flow::LabelPairs, true),
    (Flow::AllLabels, true),
];

/// Conservation and conflict removal on one finished run.
pub fn check_run(out: &RunOutput, num_outputs: u64) -> Result<(), String> {
    for (stage, s) in &out.stats {
        s.check().map_err(|e| format!("{stage}: {e}"))?;
        if *stage != Stage::MinedNegative {
            ensure(s.requested_queries == num_outputs * (s.prompt_inputs - s.failed_generations), || {
                format!("{stage}: requested {} for {} prompts", s.requested_queries, s.prompt_inputs)
            })?;
        }
    }
    let total = out.total_stats();
    let dropped = |v: Verdict| out.examples.iter().filter(|e| e.verdict == v).count() as u64;
    let candidates = total.valid_query_outputs + total.mined_negatives;
    let accounted = out.retained().count() as u64
        + dropped(Verdict::DroppedLabelMismatch)
        + dropped(Verdict::DroppedTie)
        + dropped(Verdict::DroppedFilterError)
        + dropped(Verdict::DroppedDuplicate)
        + dropped(Verdict::DroppedDuplicateConflict);
    ensure(candidates == accounted && accounted == out.examples.len() as u64, || {
        format!("{candidates} candidates, {accounted} accounted, {} examples", out.examples.len())
    })?;
    ensure(total.train_examples == out.retained().count() as u64, || "train examples != retained".into())?;

    let mut labels_of: BTreeMap<(String, &str), BTreeSet<&str>> = BTreeMap::new();
    for e in out.examples.iter().filter(|e| matches!(e.verdict, Verdict::Retained | Verdict::DroppedDuplicate | Verdict::DroppedDuplicateConflict)) {
        labels_of.entry((normalize_query(&e.query), e.doc_id.as_str())).or_default().insert(&e.label.name);
    }
    let mut seen = BTreeSet::new();
    for e in out.retained() {
        let key = (normalize_query(&e.query), e.doc_id.as_str());
        ensure(labels_of[&key].len() == 1, || format!("conflicting pair {key:?} kept"))?;
        ensure(seen.insert(key.clone()), || format!("duplicate {key:?} kept"))?;
    }
    Ok(())
}

/// Conservation on randomized mock runs, argmax filtering with a stubbed
/// scorer, and dedup behaviour on random batches.
pub fn filter_dedup_properties(runs: usize) -> Check {
    let mut rng = SplitMix64::new(5);
    let mut examples = 0;
    for r in 0..runs {
        let (flow, fine) = FLOWS[rng.below(FLOWS.len() as u64) as usize];
        let seed = rng.next_u64();
        let corpus = synthetic_corpus(1 + rng.below(4) as usize, seed);
        let behavior = MockBehavior {
            invalid_rate: rng.next_f64() * 0.6,
            failure_rate: rng.next_f64() * 0.3,
            filter_failure_rate: rng.next_f64() * 0.3,
            label_noise: rng.next_f64() * 0.6,
            ..MockBehavior::default()
        };
        let out = mock_run(flow, fine, &corpus, behavior, seed, 1 + rng.below(3) as usize);
        check_run(&out, 2).map_err(|e| format!("run {r} ({flow}): {e}"))?;
        examples += out.examples.len();
    }

    let stubbed = stubbed_filter()?;

    let labels = LabelSet::binary();
    let queries = ["cheap flights", "Cheap  Flights", "hotel deals", "car hire"];
    for t in 0..runs {
        let n = rng.below(30) as usize;
        let batch: Vec<SyntheticExample> = (0..n)
            .map(|_| SyntheticExample {
                query: queries[rng.below(4) as usize].to_string(),
                doc_id: format!("d{}", rng.below(3)),
                label: labels.labels()[rng.below(2) as usize].clone(),
                variant: QGenVariant::Pairwise,
                verdict: if rng.below(4) == 0 { Verdict::DroppedLabelMismatch } else { Verdict::Retained },
                stage: Stage::Generate,
            })
            .collect();
        let once = dedup(batch.clone());
        ensure(once.len() == batch.len(), || format!("batch {t}: dedup changed length"))?;
        ensure(dedup(once.clone()) == once, || format!("batch {t}: dedup not idempotent"))?;
        let mut labels_of: BTreeMap<(String, &str), BTreeSet<&str>> = BTreeMap::new();
        for e in batch.iter().filter(|e| e.is_retained()) {
            labels_of.entry((normalize_query(&e.query), e.doc_id.as_str())).or_default().insert(&e.label.name);
        }
        for (before, after) in batch.iter().zip(&once) {
            if !before.is_retained() {
                ensure(before == after, || format!("batch {t}: dropped example altered"))?;
                continue;
            }
            let conflict = labels_of[&(normalize_query(&before.query), before.doc_id.as_str())].len() > 1;
            ensure(conflict == (after.verdict == Verdict::DroppedDuplicateConflict), || {
                format!("batch {t}: {:?} for a pair with conflict={conflict}", after.verdict)
            })?;
        }
    }
    Ok(format!(
        "{runs} randomized mock runs ({examples} candidates) conserve counts; {stubbed} stubbed-scorer cases; {runs} dedup batches"
    ))
}

// ---------------------------------------------------------------- goldens

pub fn goldens() -> Check {
    let cases = golden_prompts(&exemplars("passage.jsonl"), &exemplars("product.jsonl")).map_err(|e| e.to_string())?;
    let dir = workspace_root().join("crates/core/tests/golden");
    let mut bad = Vec::new();
    for (name, text) in &cases {
        let path = dir.join(format!("{name}.txt"));
        match fs::read_to_string(&path) {
            Ok(want) if &want == text => {}
            _ => bad.push(name.clone()),
        }
    }
    ensure(bad.is_empty(), || format!("prompts differ from goldens: {bad:?}"))?;
    Ok(format!("{} prompts byte-identical", cases.len()))
}

// ---------------------------------------------------------------- parser

#[derive(serde::Deserialize)]
struct ParserCase {
    variant: String,
    labels: String,
    text: String,
    expect: String,
    #[serde(default)]
    target: Option<String>,
    #[serde(default)]
    queries: Option<Vec<String>>,
}

fn parse_kind(result: &ParseResult) -> String {
    match result {
        ParseResult::Valid(_) => "valid".into(),
        ParseResult::Invalid(reason) => serde_json::to_value(reason).unwrap()["kind"].as_str().unwrap().to_string(),
    }
}

/// Every case of the parser corpus parses to its expected kind.
pub fn parser_corpus() -> Check {
    let text = fs::read_to_string(workspace_root().join("fixtures/parser_corpus.jsonl")).map_err(|e| e.to_string())?;
    let cases: Vec<ParserCase> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let garbage = cases.iter().filter(|c| c.expect == "garbage-continuation").count();
    ensure(cases.len() >= 50 && garbage >= 5, || format!("{} cases, {garbage} garbage", cases.len()))?;
    for (i, c) in cases.iter().enumerate() {
        let labels = if c.labels == "binary" { LabelSet::binary() } else { LabelSet::fine_grained() };
        let variant: QGenVariant = c.variant.parse().map_err(|e| format!("case {}: {e}", i + 1))?;
        let target = c
            .target
            .as_deref()
            .map(|t| labels.get(t).cloned().unwrap_or_else(|| RelevanceLabel::new(t, -1)));
        let result = parse_completion(&variant, &c.text, &labels, target.as_ref());
        let kind = parse_kind(&result);
        ensure(kind == c.expect, || format!("case {}: expected {}, got {result:?}", i + 1, c.expect))?;
        if let (ParseResult::Valid(got), Some(want)) = (&result, &c.queries) {
            let got: Vec<&String> = got.iter().map(|q| &q.query).collect();
            ensure(got.iter().copied().eq(want.iter()), || format!("case {}: queries {got:?} vs {want:?}", i + 1))?;
        }
    }
    Ok(format!("{} cases ({garbage} garbage continuations)", cases.len()))
}

/// Share of malformed mock completions over `prompts` relevant-only
/// prompts with `invalid_rate` 0.46.
pub fn mock_invalid_rate(prompts: usize) -> Result<f64, String> {
    let corpus = synthetic_corpus(prompts, 1);
    let labels = LabelSet::binary();
    let set = build_exemplar_set(&exemplars("passage.jsonl"), QGenVariant::RelevantOnly, &labels, &TemplateSet::passage())
        .map_err(|e| e.to_string())?;
    let backend = MockBackend::new(17, MockBehavior { invalid_rate: 0.46, ..MockBehavior::default() }).map_err(|e| e.to_string())?;
    let params = GenerationParams { num_outputs: 1, ..GenerationParams::default() };
    let mut invalid = 0usize;
    for doc in corpus.iter() {
        let prompt = render_generation_prompt(&set, doc, None, None).map_err(|e| e.to_string())?;
        let out = backend.generate(&prompt, &params).map_err(|e| e.to_string())?;
        let parsed = parse_completion(&QGenVariant::RelevantOnly, &prompt.complete_with(&out[0].text), &labels, None);
        if !parsed.is_valid() {
            invalid += 1;
        }
    }
    Ok(invalid as f64 / prompts as f64)
}

pub fn parser_and_invalid_rate() -> Check {
    let corpus = parser_corpus()?;
    let rate = mock_invalid_rate(10_000)?;
    ensure((rate - 0.46).abs() <= 0.02, || format!("{corpus}; invalid rate {rate:.4} outside 0.46 +/- 0.02"))?;
    Ok(format!("{corpus}; mock invalid rate {rate:.4} over 10000 prompts"))
}

// ---------------------------------------------------------------- pipeline

pub fn pipeline_spec(flow: Flow, fine: bool) -> PipelineSpec {
    let (pairs, labels, templates) = if fine {
        (exemplars("product.jsonl"), LabelSet::fine_grained(), TemplateSet::product())
    } else {
        (exemplars("passage.jsonl"), LabelSet::binary(), TemplateSet::passage())
    };
    PipelineSpec {
        sets: FlowSets::build(flow, &pairs, &labels, &templates, None).unwrap(),
        params: GenerationParams::default(),
        filter_mode: FilterMode::Scoring,
        negatives_per_query: 1,
    }
}

pub fn mock_run(
    flow: Flow,
    fine: bool,
    corpus: &DocumentCollection,
    behavior: MockBehavior,
    seed: u64,
    workers: usize,
) -> RunOutput {
    let backend = MockBackend::new(seed, behavior).unwrap();
    let index = build_index(corpus, Bm25Params::default()).unwrap();
    let miner = HardNegativeMiner { index: &index };
    let miner = (flow == Flow::RelevantOnly).then_some(&miner as &dyn NegativeMiner);
    let options = RunOptions { workers, halt_after: None };
    run_variant(&backend, &corpus.documents, &pipeline_spec(flow, fine), miner, options, None).unwrap()
}

/// Second-stage prompts equal retained first-stage relevant queries and
/// each yields `num_outputs` completions unless it failed.
pub fn iterative_arity() -> Check {
    let corpus = synthetic_corpus(60, 2);
    let behavior = MockBehavior { invalid_rate: 0.1, failure_rate: 0.1, ..MockBehavior::default() };
    let out = mock_run(Flow::IterativePairwise, false, &corpus, behavior, 9, 4);
    let first = &out.stats[&Stage::Generate];
    let second = &out.stats[&Stage::Iterative];
    ensure(second.prompt_inputs == first.filtered_query_outputs, || {
        format!("{} stage-2 prompts for {} retained relevant queries", second.prompt_inputs, first.filtered_query_outputs)
    })?;
    let expected = 2 * (second.prompt_inputs - second.failed_generations);
    ensure(second.requested_queries == expected, || format!("requested {} vs {expected}", second.requested_queries))?;
    ensure(second.requested_candidates == second.requested_queries, || "stage-2 arity is not one".into())?;
    let bottom = LabelSet::binary().bottom().clone();
    ensure(
        out.examples.iter().filter(|e| e.stage == Stage::Iterative).all(|e| e.label == bottom && e.variant == QGenVariant::IterativeStage2),
        || "stage-2 example with the wrong label".into(),
    )?;
    for s in out.stats.values() {
        s.check()?;
    }
    Ok(format!(
        "{} retained relevant -> {} stage-2 prompts ({} failed) -> {} requested",
        first.filtered_query_outputs, second.prompt_inputs, second.failed_generations, second.requested_queries
    ))
}

// ---------------------------------------------------------------- baseline

/// 200 examples: positives reuse three document words, negatives use
/// three words absent from the document.
pub fn separable_fixture() -> (DocumentCollection, Vec<SyntheticExample>) {
    let corpus = synthetic_corpus(100, 6);
    let labels = LabelSet::binary();
    let mut rng = SplitMix64::new(99);
    let mut examples = Vec::new();
    for (i, doc) in corpus.iter().enumerate() {
        let words: Vec<String> = tokenize(&doc.display_text()).into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let mut pos = words.clone();
        rng.partial_shuffle(&mut pos, 3);
        let other = &corpus.documents[(i + 7) % corpus.len()];
        let mut neg: Vec<String> = tokenize(&other.display_text()).into_iter().filter(|w| !words.contains(w)).collect::<BTreeSet<_>>().into_iter().collect();
        rng.partial_shuffle(&mut neg, 3);
        for (query, label) in [(pos[..3].join(" "), labels.top()), (neg[..3.min(neg.len())].join(" "), labels.bottom())] {
            examples.push(SyntheticExample {
                query,
                doc_id: doc.id.clone(),
                label: label.clone(),
                variant: QGenVariant::Pairwise,
                verdict: Verdict::Retained,
                stage: Stage::Generate,
            });
        }
    }
    (corpus, examples)
}

fn gradient_check() -> Result<f64, String> {
    let (corpus, examples) = separable_fixture();
    let docs = corpus.by_id();
    let data = prepare(&examples[..24], &docs, None).map_err(|e| e.to_string())?;
    let hp = Hyperparams { l2: 1e-3, ..Hyperparams::default() };
    let mut model = PointwiseModel::zero(hp.clone());
    let mut rng = SplitMix64::new(3);
    let touched: BTreeSet<u32> = data.iter().flat_map(|(x, _)| x.entries().iter().map(|&(i, _)| i)).collect();
    for &i in &touched {
        model.weights[i as usize] = rng.next_f64() - 0.5;
    }
    model.bias = 0.3;

    let (x0, _) = &data[0];
    let q_terms = tokenize(&examples[0].query);
    let doc = docs[examples[0].doc_id.as_str()];
    let shared = q_terms.iter().find(|t| tokenize(&doc.display_text()).contains(t)).cloned().unwrap_or_default();
    let mut probes = vec![
        Namespace::Query.index(&q_terms[0]),
        Namespace::Doc.index(&tokenize(&doc.display_text())[0]),
        Namespace::Overlap.index(&shared),
    ];
    probes.extend((0..4).map(|i| (HASH_DIM + i) as u32));
    let probes: Vec<u32> = probes.into_iter().filter(|i| x0.get(*i) != 0.0 || touched.contains(i)).collect();
    ensure(probes.len() >= 5, || "probe indices missing from features".into())?;

    let (grad, bias_grad) = model.gradient(&data, hp.l2);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let rel = |a: f64, n: f64| {
        let scale = a.abs().max(n.abs());
        if scale < 1e-10 { 0.0 } else { (a - n).abs() / scale }
    };
    for &i in &probes {
        let w = model.weights[i as usize];
        model.weights[i as usize] = w + h;
        let up = model.loss(&data, hp.l2);
        model.weights[i as usize] = w - h;
        let down = model.loss(&data, hp.l2);
        model.weights[i as usize] = w;
        let numeric = (up - down) / (2.0 * h);
        let analytic = grad.get(&i).copied().unwrap_or(hp.l2 * w);
        let e = rel(analytic, numeric);
        worst = worst.max(e);
        ensure(e < 1e-4, || format!("index {i}: analytic {analytic} numeric {numeric}"))?;
    }
    let b = model.bias;
    model.bias = b + h;
    let up = model.loss(&data, hp.l2);
    model.bias = b - h;
    let down = model.loss(&data, hp.l2);
    let e = rel(bias_grad, (up - down) / (2.0 * h));
    ensure(e < 1e-4, || format!("bias: relative error {e}"))?;
    Ok(worst.max(e))
}

/// Mean NDCG@10 of a scorer on the fixture evaluation set.
fn fixture_ndcg(corpus: &DocumentCollection, scorer: impl Fn(&str, &Document) -> f64) -> Result<f64, String> {
    let eval = eval_fixture(corpus, 1, false);
    let index = build_index(corpus, Bm25Params::default()).map_err(|e| e.to_string())?;
    let pool = augment_eval_pool(&index, &eval.queries, &eval.qrels, 20).map_err(|e| e.to_string())?;
    let run = rank_with_scorer(|q, d| Ok(scorer(q, d)), &pool, &eval.queries, &corpus.by_id()).map_err(|e| e.to_string())?;
    Ok(ndcg_at_k(&run, &eval.qrels, NdcgConfig::default()).map_err(|e| e.to_string())?.mean)
}

/// Gradient check, separable fit, and NDCG of a model trained on mock
/// pairwise data against the 20-seed random-scorer mean.
pub fn baseline() -> Check {
    let grad_err = gradient_check()?;

    let (corpus, examples) = separable_fixture();
    let data: Vec<(FeatureVector, f64)> = prepare(&examples, &corpus.by_id(), None).map_err(|e| e.to_string())?;
    let hp = Hyperparams { epochs: 50, ..Hyperparams::default() };
    let (_, report) = train_features(&data, None, &hp).map_err(|e| e.to_string())?;
    ensure(report.train_accuracy >= 0.99, || format!("separable fixture accuracy {}", report.train_accuracy))?;

    let corpus = synthetic_corpus(400, 12);
    let generated = mock_run(Flow::Pairwise, false, &corpus, MockBehavior::default(), 4, 4);
    let train: Vec<SyntheticExample> = generated.retained().cloned().collect();
    let data = prepare(&train, &corpus.by_id(), None).map_err(|e| e.to_string())?;
    let (model, _) = train_features(&data, None, &Hyperparams::default()).map_err(|e| e.to_string())?;
    let trained = fixture_ndcg(&corpus, |q, d| predict_relevance(&model, q, d))?;
    let mut random = 0.0;
    for seed in 0..20 {
        random += fixture_ndcg(&corpus, |q, d| random_score(seed, q, &d.id))?;
    }
    random /= 20.0;
    ensure(trained > random, || format!("trained NDCG@10 {trained:.4} <= random mean {random:.4}"))?;
    Ok(format!(
        "gradient rel err {grad_err:.1e}; separable accuracy {:.3}; NDCG@10 {trained:.4} vs random mean {random:.4}",
        report.train_accuracy
    ))
}
