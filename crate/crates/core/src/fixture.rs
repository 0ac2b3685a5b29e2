//! Seeded synthetic datasets: topical documents, one test query per topic
//! and graded judgments by query-word overlap. Used by tests and demos.

use std::collections::BTreeSet;

use crate::corpus::{Document, DocumentCollection, Qrels, TestQuery};
use crate::prompting::{
    build_exemplar_set, build_filter_set, render_filter_prompt, render_generation_prompt, LabelSet, LabeledPair,
    PromptError, QGenVariant, TemplateSet,
};
use crate::text::{derive_seed, tokenize, SplitMix64};

const TOPICS: [[&str; 12]; 20] = [
    ["virus", "vaccine", "antibody", "infection", "immune", "respiratory", "spike", "protein", "booster", "variant", "clinical", "trial"],
    ["solar", "panel", "inverter", "rooftop", "photovoltaic", "battery", "grid", "kilowatt", "installer", "sunlight", "efficiency", "module"],
    ["guitar", "chord", "fret", "string", "amplifier", "pick", "acoustic", "tuning", "melody", "strum", "capo", "riff"],
    ["mortgage", "interest", "lender", "refinance", "escrow", "principal", "loan", "credit", "closing", "appraisal", "equity", "payment"],
    ["volcano", "lava", "magma", "eruption", "crater", "ash", "tectonic", "basalt", "caldera", "seismic", "summit", "vent"],
    ["coffee", "espresso", "roast", "bean", "grinder", "brew", "arabica", "crema", "barista", "latte", "caffeine", "aroma"],
    ["glacier", "ice", "melt", "arctic", "polar", "iceberg", "snowpack", "fjord", "moraine", "permafrost", "tundra", "frozen"],
    ["python", "compiler", "syntax", "function", "variable", "debugger", "runtime", "library", "module", "interpreter", "script", "loop"],
    ["marathon", "runner", "stride", "endurance", "pace", "sneaker", "hydration", "training", "mileage", "finish", "sprint", "tempo"],
    ["telescope", "galaxy", "nebula", "orbit", "planet", "comet", "asteroid", "lens", "observatory", "star", "cosmic", "eclipse"],
    ["diabetes", "insulin", "glucose", "pancreas", "sugar", "blood", "dose", "meter", "carbohydrate", "diet", "hormone", "kidney"],
    ["wine", "vineyard", "grape", "tannin", "cellar", "vintage", "merlot", "barrel", "ferment", "sommelier", "cork", "harvest"],
    ["chess", "bishop", "knight", "gambit", "checkmate", "rook", "pawn", "opening", "endgame", "castle", "queen", "tournament"],
    ["bee", "hive", "honey", "pollen", "queen", "colony", "nectar", "wax", "swarm", "beekeeper", "drone", "comb"],
    ["earthquake", "fault", "richter", "aftershock", "tremor", "epicenter", "quake", "rupture", "shaking", "magnitude", "crust", "tsunami"],
    ["bread", "yeast", "dough", "flour", "knead", "oven", "crust", "sourdough", "loaf", "bake", "starter", "gluten"],
    ["satellite", "rocket", "launch", "payload", "booster", "thrust", "capsule", "module", "spacecraft", "reentry", "fuel", "countdown"],
    ["tax", "deduction", "refund", "irs", "filing", "income", "bracket", "audit", "withholding", "return", "credit", "exemption"],
    ["dinosaur", "fossil", "jurassic", "skeleton", "paleontologist", "extinction", "raptor", "cretaceous", "bone", "excavation", "predator", "herbivore"],
    ["piano", "keyboard", "sonata", "pedal", "octave", "concerto", "scale", "composer", "recital", "hammer", "keys", "rhythm"],
];

const FILLER: [&str; 24] = [
    "people", "often", "report", "many", "study", "years", "several", "common", "approach", "recent", "general",
    "important", "various", "example", "public", "result", "process", "early", "level", "known", "system", "method",
    "within", "based",
];

/// Test queries and graded judgments over a [`synthetic_corpus`].
#[derive(Debug, Clone)]
pub struct EvalFixture {
    pub queries: Vec<TestQuery>,
    pub qrels: Qrels,
}

pub fn topic_count() -> usize {
    TOPICS.len()
}

/// `n` documents `doc0000..`, cycling through the topics; each has a short
/// topical title and a body mixing topic words with filler.
pub fn synthetic_corpus(n: usize, seed: u64) -> DocumentCollection {
    let mut rng = SplitMix64::new(derive_seed(seed, "fixture-corpus"));
    let docs = (0..n)
        .map(|i| {
            let topic = &TOPICS[i % TOPICS.len()];
            let pick = |rng: &mut SplitMix64, pool: &[&str]| pool[rng.below(pool.len() as u64) as usize].to_string();
            let title: Vec<String> = (0..3).map(|_| pick(&mut rng, topic)).collect();
            let body: Vec<String> = (0..24)
                .map(|_| {
                    if rng.next_f64() < 0.55 {
                        pick(&mut rng, topic)
                    } else {
                        pick(&mut rng, &FILLER)
                    }
                })
                .collect();
            Document::new(format!("doc{i:04}"), Some(title.join(" ")), body.join(" "))
        })
        .collect();
    DocumentCollection::new(docs, "synthetic").expect("generated ids are unique")
}

/// One three-word query per topic. A document of the query's topic is
/// judged 2 when it holds at least two query words and 1 when it holds one.
/// With `judged_negatives`, up to five off-topic documents sharing no
/// query word are also judged 0.
pub fn eval_fixture(corpus: &DocumentCollection, seed: u64, judged_negatives: bool) -> EvalFixture {
    let mut rng = SplitMix64::new(derive_seed(seed, "fixture-queries"));
    let mut queries = Vec::new();
    let mut qrels = Qrels::new();
    for (t, topic) in TOPICS.iter().enumerate() {
        let mut words: Vec<&str> = topic.to_vec();
        rng.partial_shuffle(&mut words, 3);
        let qwords: BTreeSet<String> = words[..3].iter().map(|w| w.to_string()).collect();
        let qid = format!("q{t:02}");
        queries.push(TestQuery {
            id: qid.clone(),
            text: words[..3].join(" "),
        });
        let mut negatives = 0;
        for (i, doc) in corpus.iter().enumerate() {
            let tokens: BTreeSet<String> = tokenize(&doc.display_text()).into_iter().collect();
            if i % TOPICS.len() == t {
                let hits = qwords.intersection(&tokens).count();
                if hits > 0 {
                    qrels.insert(&qid, &doc.id, if hits >= 2 { 2 } else { 1 }).expect("fresh pair");
                }
            } else if judged_negatives && negatives < 5 && qwords.is_disjoint(&tokens) {
                qrels.insert(&qid, &doc.id, 0).expect("fresh pair");
                negatives += 1;
            }
        }
    }
    EvalFixture { queries, qrels }
}

/// Every prompt shape rendered for one fixed target: binary variants over
/// passage exemplars and fine-grained variants over product exemplars.
/// Returns (case name, prompt text) pairs in a fixed order.
pub fn golden_prompts(passages: &[LabeledPair], products: &[LabeledPair]) -> Result<Vec<(String, String)>, PromptError> {
    let passage = Document::new(
        "target-passage",
        None,
        "The Eiffel Tower is a wrought-iron lattice tower on the Champ de Mars in Paris. It is 330 metres tall and was completed in 1889.",
    );
    let product = Document::new(
        "target-product",
        None,
        "Insulated Stainless Steel Water Bottle 32 oz with Straw Lid, Leak Proof, Keeps Drinks Cold for 24 Hours",
    );
    let mut out = Vec::new();
    for (prefix, pairs, labels, templates, doc) in [
        ("binary", passages, LabelSet::binary(), TemplateSet::passage(), &passage),
        ("fine", products, LabelSet::fine_grained(), TemplateSet::product(), &product),
    ] {
        let names = labels.names();
        let mut variants = vec![QGenVariant::RelevantOnly, QGenVariant::LabelConditioned];
        if labels.is_binary() {
            variants.extend([QGenVariant::Pairwise, QGenVariant::IterativeStage2]);
        } else {
            variants.extend([
                QGenVariant::PairwiseLabelPair(names[0].clone(), names[1].clone()),
                QGenVariant::PairwiseLabelPair(names[1].clone(), names[3].clone()),
                QGenVariant::AllLabels,
            ]);
        }
        for variant in variants {
            let set = build_exemplar_set(pairs, variant.clone(), &labels, &templates)?;
            let name = format!("{prefix}_{}", variant.to_string().replace([' ', '/', ':'], "_"));
            match &variant {
                QGenVariant::LabelConditioned => {
                    for label in labels.labels() {
                        let text = render_generation_prompt(&set, doc, Some(label), None)?.text;
                        out.push((format!("{name}_{}", label.name.to_lowercase()), text));
                    }
                }
                QGenVariant::IterativeStage2 => {
                    let text = render_generation_prompt(&set, doc, None, Some("how tall is the eiffel tower"))?.text;
                    out.push((name, text));
                }
                _ => out.push((name, render_generation_prompt(&set, doc, None, None)?.text)),
            }
        }
        let filter = build_filter_set(pairs, &labels, &templates)?;
        let query = if labels.is_binary() { "when was the eiffel tower built" } else { "insulated water bottle with straw" };
        out.push((format!("{prefix}_filter"), render_filter_prompt(&filter, query, doc)?.text));
    }
    Ok(out)
}
