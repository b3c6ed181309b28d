//! Seeded synthetic corpora shaped like the clarification-pane datasets the
//! pipeline targets: 3-8 panes per query, 2-5 options per pane, and gold
//! labels drawn from a configurable (usually imbalanced) prior.

use std::collections::BTreeMap;

use hitl_core::unit::ClarificationPane;
use hitl_core::{AnnotationUnit, Label, TaskKind};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, QueryGroup};

/// Gold prior with labels 1 and 2 rare and 3-5 sharing the rest equally.
pub const IMBALANCED_PRIOR: [f64; 5] = [0.024, 0.087, 0.889 / 3.0, 0.889 / 3.0, 0.889 / 3.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub units: usize,
    pub tasks: Vec<TaskKind>,
    #[serde(default = "default_prior")]
    pub label_prior: [f64; 5],
    #[serde(default = "default_panes")]
    pub panes_per_query: (usize, usize),
    pub seed: u64,
}

fn default_prior() -> [f64; 5] {
    IMBALANCED_PRIOR
}

fn default_panes() -> (usize, usize) {
    (3, 4)
}

impl SynthSpec {
    pub fn new(units: usize, tasks: Vec<TaskKind>, seed: u64) -> Self {
        SynthSpec { units, tasks, label_prior: IMBALANCED_PRIOR, panes_per_query: default_panes(), seed }
    }
}

const TOPICS: &[&str] = &[
    "jaguar", "python", "mercury", "apple", "java", "amazon", "orange", "saturn", "bass", "crane",
    "pitch", "seal", "spring", "bolt", "mole", "turkey", "bank", "club", "date", "fan",
];
const FACETS: &[&str] = &[
    "history", "price", "reviews", "near me", "images", "definition", "tutorial", "facts", "news",
    "recipes", "tickets", "specs", "symptoms", "lyrics", "careers",
];

pub fn generate(spec: &SynthSpec) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let prior = WeightedIndex::new(spec.label_prior).expect("label prior must have positive mass");
    let (lo, hi) = spec.panes_per_query;
    let mut corpus = Corpus::default();
    let mut q = 0usize;
    while corpus.units.len() < spec.units {
        q += 1;
        let query_id = format!("q{q:04}");
        let topic = TOPICS[rng.random_range(0..TOPICS.len())];
        let query = format!("{topic} {}", q);
        let remaining = spec.units - corpus.units.len();
        let panes = rng.random_range(lo..=hi.max(lo)).min(remaining);
        let mut pane_ids = Vec::with_capacity(panes);
        for p in 1..=panes {
            let pane_id = format!("{query_id}-p{p}");
            let n_opts = rng.random_range(2..=5usize);
            let options = (0..n_opts)
                .map(|_| format!("{topic} {}", FACETS[rng.random_range(0..FACETS.len())]))
                .collect();
            let gold: BTreeMap<TaskKind, Label> = spec
                .tasks
                .iter()
                .map(|t| (*t, Label::from_index(prior.sample(&mut rng)).expect("five-way prior")))
                .collect();
            corpus.units.push(AnnotationUnit {
                unit_id: pane_id.clone(),
                query_id: query_id.clone(),
                query: query.clone(),
                pane: ClarificationPane {
                    pane_id: pane_id.clone(),
                    question: format!("What would you like to know about {topic}?"),
                    options,
                },
                gold,
            });
            pane_ids.push(pane_id);
        }
        corpus.queries.push(QueryGroup { query_id, query, pane_ids });
    }
    corpus
}
