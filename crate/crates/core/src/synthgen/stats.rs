use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::prompting::LabelSet;

/// Counters for one stage of a generation flow.
///
/// A prompt that fails after retries adds to `failed_generations` and
/// requests nothing, so `requested_queries` counts completions actually
/// received: `num_outputs * (prompt_inputs - failed_generations)`.
/// `requested_candidates` is the same figure times the number of queries a
/// completion should carry.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageStats {
    pub prompt_inputs: u64,
    pub failed_generations: u64,
    pub requested_queries: u64,
    pub requested_candidates: u64,
    pub invalid_completions: u64,
    pub valid_query_outputs: u64,
    pub filtered_query_outputs: u64,
    pub dropped_label_mismatch: u64,
    pub dropped_tie: u64,
    pub filter_errors: u64,
    pub mined_negatives: u64,
    pub duplicate_conflicts: u64,
    pub duplicates_collapsed: u64,
    pub train_examples: u64,
    pub per_label_counts: BTreeMap<String, u64>,
}

impl StageStats {
    /// Field-wise sum. Associative and commutative.
    pub fn merge(&mut self, other: &StageStats) {
        self.prompt_inputs += other.prompt_inputs;
        self.failed_generations += other.failed_generations;
        self.requested_queries += other.requested_queries;
        self.requested_candidates += other.requested_candidates;
        self.invalid_completions += other.invalid_completions;
        self.valid_query_outputs += other.valid_query_outputs;
        self.filtered_query_outputs += other.filtered_query_outputs;
        self.dropped_label_mismatch += other.dropped_label_mismatch;
        self.dropped_tie += other.dropped_tie;
        self.filter_errors += other.filter_errors;
        self.mined_negatives += other.mined_negatives;
        self.duplicate_conflicts += other.duplicate_conflicts;
        self.duplicates_collapsed += other.duplicates_collapsed;
        self.train_examples += other.train_examples;
        for (label, n) in &other.per_label_counts {
            *self.per_label_counts.entry(label.clone()).or_default() += n;
        }
    }

    pub fn merged<'a>(stats: impl IntoIterator<Item = &'a StageStats>) -> StageStats {
        let mut total = StageStats::default();
        for s in stats {
            total.merge(s);
        }
        total
    }

    /// The accounting identities every stage must satisfy.
    pub fn check(&self) -> Result<(), String> {
        let filtered_side =
            self.filtered_query_outputs + self.dropped_label_mismatch + self.dropped_tie + self.filter_errors;
        if self.valid_query_outputs != filtered_side {
            return Err(format!(
                "valid outputs {} != retained {} + mismatched {} + ties {} + filter errors {}",
                self.valid_query_outputs,
                self.filtered_query_outputs,
                self.dropped_label_mismatch,
                self.dropped_tie,
                self.filter_errors
            ));
        }
        let before = self.filtered_query_outputs + self.mined_negatives;
        let after = self.train_examples + self.duplicate_conflicts + self.duplicates_collapsed;
        if before != after {
            return Err(format!("dedup lost examples: {before} before, {after} accounted after"));
        }
        let labelled: u64 = self.per_label_counts.values().sum();
        if labelled != self.train_examples {
            return Err(format!("per-label counts sum to {labelled}, train examples {}", self.train_examples));
        }
        if self.failed_generations > self.prompt_inputs
            || self.invalid_completions > self.requested_queries
            || self.valid_query_outputs > self.requested_candidates
        {
            return Err("a sub-count exceeds its total".into());
        }
        Ok(())
    }
}

/// `num / den` in hundredths, rounded half up. A ratio below one is never
/// shown as 1.00, so a near-perfect stage still reads as imperfect.
/// `None` when `den` is zero.
pub fn round2(num: u64, den: u64) -> Option<u64> {
    if den == 0 {
        return None;
    }
    let (n, d) = (u128::from(num), u128::from(den));
    let hundredths = (200 * n + d) / (2 * d);
    Some(if n < d && hundredths == 100 { 99 } else { hundredths as u64 })
}

/// Two-decimal rendering of [`round2`]; a zero denominator prints `0 (n/a)`.
pub fn format_ratio(num: u64, den: u64) -> String {
    match round2(num, den) {
        Some(h) => format!("{}.{:02}", h / 100, h % 100),
        None => "0 (n/a)".to_string(),
    }
}

/// One line of the statistics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub name: String,
    pub prompt_inputs: u64,
    pub requested_queries: u64,
    pub valid_query_outputs: u64,
    pub filtered_query_outputs: u64,
    pub train_examples: u64,
    /// Train examples per label, most relevant first.
    pub per_label: Vec<(String, u64)>,
    pub pct_valid_queries: String,
    pub pct_valid_examples: String,
    /// Least relevant over most relevant train examples.
    pub bottom_top_ratio: String,
    /// A zero denominator was hit.
    pub not_applicable: bool,
}

impl StatsRow {
    /// Percentages are taken over `requested_candidates`: valid outputs for
    /// "% valid queries" and filter survivors for "% valid examples".
    pub fn new(name: impl Into<String>, s: &StageStats, labels: &LabelSet) -> Self {
        let per_label: Vec<(String, u64)> = labels
            .labels()
            .iter()
            .map(|l| (l.name.clone(), s.per_label_counts.get(&l.name).copied().unwrap_or(0)))
            .collect();
        let top = per_label.first().map_or(0, |(_, n)| *n);
        let bottom = per_label.last().map_or(0, |(_, n)| *n);
        Self {
            name: name.into(),
            prompt_inputs: s.prompt_inputs,
            requested_queries: s.requested_queries,
            valid_query_outputs: s.valid_query_outputs,
            filtered_query_outputs: s.filtered_query_outputs,
            train_examples: s.train_examples,
            pct_valid_queries: format_ratio(s.valid_query_outputs, s.requested_candidates),
            pct_valid_examples: format_ratio(s.filtered_query_outputs, s.requested_candidates),
            bottom_top_ratio: format_ratio(bottom, top),
            not_applicable: s.requested_candidates == 0 || top == 0,
            per_label,
        }
    }
}

/// Fixed-width text table, one row per entry.
pub fn render_stats_table(rows: &[StatsRow], labels: &LabelSet) -> String {
    let mut header: Vec<String> = [
        "Stage",
        "Prompt Inputs",
        "Requested Queries",
        "Valid Query Outputs",
        "Filtered Query Outputs",
        "Train Examples",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(labels.names().into_iter().map(|n| format!("{n} Examples")));
    header.push("% Valid Queries".into());
    header.push("% Valid Examples".into());
    header.push(format!("{} / {}", labels.bottom().name, labels.top().name));

    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut cells = vec![
                r.name.clone(),
                r.prompt_inputs.to_string(),
                r.requested_queries.to_string(),
                r.valid_query_outputs.to_string(),
                r.filtered_query_outputs.to_string(),
                r.train_examples.to_string(),
            ];
            cells.extend(r.per_label.iter().map(|(_, n)| n.to_string()));
            cells.push(r.pct_valid_queries.clone());
            cells.push(r.pct_valid_examples.clone());
            cells.push(r.bottom_top_ratio.clone());
            cells
        })
        .collect();

    let widths: Vec<usize> = (0..header.len())
        .map(|i| body.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(&header);
    out.push('\n');
    for r in &body {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}
