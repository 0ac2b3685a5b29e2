use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::PromptError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelevanceLabel {
    pub name: String,
    /// Higher is more relevant.
    pub rank: i32,
}

impl RelevanceLabel {
    pub fn new(name: impl Into<String>, rank: i32) -> Self {
        Self {
            name: name.into(),
            rank,
        }
    }
}

/// Relevance labels ordered by strictly descending rank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct LabelSet {
    labels: Vec<RelevanceLabel>,
}

impl LabelSet {
    /// Labels may be given in any order; they are sorted by descending rank
    /// and must have distinct names and ranks.
    pub fn new(mut labels: Vec<RelevanceLabel>) -> Result<Self, PromptError> {
        if labels.len() < 2 {
            return Err(PromptError::InvalidLabelSet("need at least two labels".into()));
        }
        labels.sort_by_key(|l| std::cmp::Reverse(l.rank));
        for pair in labels.windows(2) {
            if pair[0].rank == pair[1].rank {
                return Err(PromptError::InvalidLabelSet(format!(
                    "labels {} and {} share rank {}",
                    pair[0].name, pair[1].name, pair[0].rank
                )));
            }
        }
        for (i, a) in labels.iter().enumerate() {
            if a.name.trim().is_empty() || a.name.chars().any(char::is_whitespace) {
                return Err(PromptError::InvalidLabelSet(format!(
                    "label name {:?} must be a single non-empty word",
                    a.name
                )));
            }
            if labels[i + 1..].iter().any(|b| b.name.eq_ignore_ascii_case(&a.name)) {
                return Err(PromptError::InvalidLabelSet(format!("duplicate label {}", a.name)));
            }
        }
        Ok(Self { labels })
    }

    /// `relevant` / `irrelevant`.
    pub fn binary() -> Self {
        Self {
            labels: vec![
                RelevanceLabel::new("relevant", 1),
                RelevanceLabel::new("irrelevant", 0),
            ],
        }
    }

    /// The four-way shopping scale: Exact > Substitute > Complement > Irrelevant.
    pub fn fine_grained() -> Self {
        Self {
            labels: vec![
                RelevanceLabel::new("Exact", 3),
                RelevanceLabel::new("Substitute", 2),
                RelevanceLabel::new("Complement", 1),
                RelevanceLabel::new("Irrelevant", 0),
            ],
        }
    }

    pub fn labels(&self) -> &[RelevanceLabel] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn is_binary(&self) -> bool {
        self.labels.len() == 2
    }

    /// Most relevant label.
    pub fn top(&self) -> &RelevanceLabel {
        &self.labels[0]
    }

    /// Least relevant label.
    pub fn bottom(&self) -> &RelevanceLabel {
        &self.labels[self.labels.len() - 1]
    }

    /// Case-insensitive lookup by name.
    pub fn get(&self, name: &str) -> Option<&RelevanceLabel> {
        self.labels.iter().find(|l| l.name.eq_ignore_ascii_case(name))
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l.name.eq_ignore_ascii_case(name))
    }

    /// Relevance of a label mapped onto [0, 1]: 1 for the top label, 0 for
    /// the bottom one, evenly spaced in between.
    pub fn relevance_fraction(&self, name: &str) -> Option<f64> {
        let pos = self.position(name)?;
        Some(1.0 - pos as f64 / (self.labels.len() - 1) as f64)
    }

    pub fn names(&self) -> Vec<String> {
        self.labels.iter().map(|l| l.name.clone()).collect()
    }
}

impl<'de> Deserialize<'de> for LabelSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let labels = Vec::<RelevanceLabel>::deserialize(deserializer)?;
        LabelSet::new(labels).map_err(serde::de::Error::custom)
    }
}

/// Which prompt formulation a generation request uses.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QGenVariant {
    RelevantOnly,
    LabelConditioned,
    Pairwise,
    /// Second step of the iterative flow: the pairwise prompt with the
    /// relevant query already filled in.
    IterativeStage2,
    /// Fine-grained pairwise generation for an ordered label pair.
    PairwiseLabelPair(String, String),
    AllLabels,
}

impl QGenVariant {
    /// Number of queries a well-formed completion carries.
    pub fn arity(&self, label_set: &LabelSet) -> usize {
        match self {
            QGenVariant::RelevantOnly | QGenVariant::LabelConditioned | QGenVariant::IterativeStage2 => 1,
            QGenVariant::Pairwise | QGenVariant::PairwiseLabelPair(..) => 2,
            QGenVariant::AllLabels => label_set.len(),
        }
    }
}

impl fmt::Display for QGenVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QGenVariant::RelevantOnly => f.write_str("relevant-only"),
            QGenVariant::LabelConditioned => f.write_str("label-conditioned"),
            QGenVariant::Pairwise => f.write_str("pairwise"),
            QGenVariant::IterativeStage2 => f.write_str("iterative-stage2"),
            QGenVariant::PairwiseLabelPair(a, b) => write!(f, "pair:{a}-{b}"),
            QGenVariant::AllLabels => f.write_str("all-labels"),
        }
    }
}

impl FromStr for QGenVariant {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "relevant-only" => QGenVariant::RelevantOnly,
            "label-conditioned" => QGenVariant::LabelConditioned,
            "pairwise" => QGenVariant::Pairwise,
            "iterative-stage2" => QGenVariant::IterativeStage2,
            "all-labels" => QGenVariant::AllLabels,
            other => {
                let pair = other
                    .strip_prefix("pair:")
                    .and_then(|rest| rest.split_once('-'))
                    .filter(|(a, b)| !a.is_empty() && !b.is_empty());
                match pair {
                    Some((a, b)) => QGenVariant::PairwiseLabelPair(a.to_string(), b.to_string()),
                    None => return Err(PromptError::UnknownVariant(other.to_string())),
                }
            }
        })
    }
}

impl Serialize for QGenVariant {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for QGenVariant {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
