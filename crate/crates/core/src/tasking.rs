//! Task templates and prompt construction.
//!
//! A [`TaskTemplate`] is configuration: guideline text, an optional rationale
//! section, the scale anchors, a reworded guideline for the `Rephrased`
//! variant, and an item body with `{query}`, `{question}`, `{options}`,
//! `{examples}` (and, for list-wise rating, `{panes}`) placeholders. The
//! output-format instruction is appended by [`build_prompt`] so that every
//! response ends in parseable `LABEL=.. CONFIDENCE=..` trailers.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label::{Label, TaskKind};
use crate::unit::AnnotationUnit;

/// Default max-token limits for prompt-sensitivity sweeps; 1000 is the base.
pub const DEFAULT_TOKEN_LIMITS: [u32; 3] = [250, 1000, 2000];
pub const BASE_MAX_TOKENS: u32 = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("{task} expects {expected}, got {got}")]
    Arity { task: TaskKind, expected: &'static str, got: &'static str },
    #[error("few-shot setting with no examples")]
    NoExamples,
    #[error("query group is empty")]
    EmptyGroup,
    #[error("pane group mixes queries {0} and {1}")]
    MixedGroup(String, String),
    #[error("template for {0} has no item body")]
    EmptyTemplate(TaskKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    /// Task definition only.
    Zss,
    /// Task definition plus labelled examples.
    Fss,
}

impl PromptMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptMode::Zss => "zss",
            PromptMode::Fss => "fss",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub unit_id: String,
    pub rendering: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSetting {
    pub mode: PromptMode,
    #[serde(default)]
    pub few_shot_examples: Vec<FewShotExample>,
}

impl PromptSetting {
    pub fn zero_shot() -> Self {
        PromptSetting { mode: PromptMode::Zss, few_shot_examples: Vec::new() }
    }

    pub fn few_shot(examples: Vec<FewShotExample>) -> Self {
        PromptSetting { mode: PromptMode::Fss, few_shot_examples: examples }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transformation {
    Baseline,
    Rephrased,
    ExampleOrderShuffled,
    Shortened,
}

impl Transformation {
    pub const ALL: [Transformation; 4] = [
        Transformation::Baseline,
        Transformation::Rephrased,
        Transformation::ExampleOrderShuffled,
        Transformation::Shortened,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Transformation::Baseline => "baseline",
            Transformation::Rephrased => "rephrased",
            Transformation::ExampleOrderShuffled => "shuffled",
            Transformation::Shortened => "shortened",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptVariant {
    pub variant_id: String,
    pub transformation: Transformation,
    pub max_tokens: u32,
    /// Seed for `ExampleOrderShuffled`; ignored otherwise.
    #[serde(default)]
    pub shuffle_seed: u64,
}

impl PromptVariant {
    pub fn baseline() -> Self {
        PromptVariant::new(Transformation::Baseline, BASE_MAX_TOKENS, 0)
    }

    pub fn new(transformation: Transformation, max_tokens: u32, shuffle_seed: u64) -> Self {
        PromptVariant {
            variant_id: format!("{}-{}", transformation.as_str(), max_tokens),
            transformation,
            max_tokens,
            shuffle_seed,
        }
    }
}

/// Every transformation crossed with every token limit.
pub fn enumerate_variants(token_limits: &[u32], shuffle_seed: u64) -> Vec<PromptVariant> {
    let mut limits: Vec<u32> = token_limits.to_vec();
    limits.sort_unstable();
    limits.dedup();
    Transformation::ALL
        .iter()
        .flat_map(|&t| limits.iter().map(move |&m| PromptVariant::new(t, m, shuffle_seed)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskTemplate {
    pub task: TaskKind,
    pub guideline: String,
    #[serde(default)]
    pub rationale: String,
    pub scale: String,
    pub rephrased: String,
    pub body: String,
}

const PAIR_BODY: &str = "{examples}Query: {query}\nClarifying question: {question}\nOptions:\n{options}";
const LIST_BODY: &str = "{examples}Query: {query}\n\n{panes}";

impl TaskTemplate {
    /// Built-in template; the wording can be overridden from files.
    pub fn default_for(task: TaskKind) -> Self {
        let (guideline, rationale, scale, rephrased) = match task {
            TaskKind::Preference => (
                "You are shown a search query together with all clarification panes generated for it. \
                 Rate each pane on a 5-star scale according to how much you would prefer to see it for this query. \
                 Consider all panes together and rate them relative to each other; identical ratings are allowed.",
                "A clarification pane asks the user a multiple-choice question to narrow down an ambiguous or broad query. \
                 A preferred pane helps the user reach the intended information quickly.",
                "5 = highest preference\n4 = high preference\n3 = moderate preference\n2 = low preference\n1 = lowest preference",
                "Give every clarification pane below a preference score between 1 and 5 stars for the given query. \
                 Judge the panes side by side. Several panes may receive the same score.",
            ),
            TaskKind::Quality => (
                "You are shown a search query and one clarification pane (a clarifying question with its options). \
                 Rate the overall quality of the clarification pane for this query.",
                "A good pane asks a natural question about the query and offers options that are relevant, \
                 distinct and easy to understand.",
                "1 = very bad\n2 = bad\n3 = fair\n4 = good\n5 = very good",
                "Judge how good this clarification pane is overall for the query, on a five-level scale.",
            ),
            TaskKind::Coverage => (
                "You are shown a search query and one clarification pane. \
                 Rate its coverage: the extent to which the pane covers every potential aspect of the query.",
                "Broad or ambiguous queries have several intents; a pane with good coverage offers an option for each plausible one.",
                "1 = covers almost none of the aspects\n2 = covers few aspects\n3 = covers some aspects\n\
                 4 = covers most aspects\n5 = covers every potential aspect",
                "How completely do the options of this pane span the possible aspects of the query? Answer on a 1 to 5 scale.",
            ),
            TaskKind::Diversity => (
                "You are shown a search query and one clarification pane. \
                 Rate its diversity: the extent to which the pane does not contain redundant information.",
                "Options that overlap or repeat each other waste space and confuse the user.",
                "1 = highly redundant\n2 = mostly redundant\n3 = somewhat redundant\n\
                 4 = little redundancy\n5 = no redundant information",
                "Score from 1 to 5 how free of repetition and overlap the options of this pane are.",
            ),
            TaskKind::OptionOrder => (
                "You are shown a search query and one clarification pane. \
                 Rate its option order: the extent to which the most relevant and important options are positioned from left to right.",
                "Users scan options from left to right, so the most likely intent should come first.",
                "1 = very poorly ordered\n2 = poorly ordered\n3 = acceptably ordered\n\
                 4 = well ordered\n5 = perfectly ordered",
                "Are the options sorted from most to least relevant, left to right? Rate the ordering from 1 to 5.",
            ),
        };
        TaskTemplate {
            task,
            guideline: guideline.into(),
            rationale: rationale.into(),
            scale: scale.into(),
            rephrased: rephrased.into(),
            body: if task.is_listwise() { LIST_BODY } else { PAIR_BODY }.into(),
        }
    }
}

/// What a prompt asks about: one unit, or every pane of one query.
#[derive(Debug, Clone, Copy)]
pub enum PromptTarget<'a> {
    Unit(&'a AnnotationUnit),
    Group(&'a [AnnotationUnit]),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub text: String,
    pub task: TaskKind,
    /// Rated items in the order their trailers are expected.
    pub unit_ids: Vec<String>,
    pub variant_id: String,
    pub max_tokens: u32,
}

fn render_options(options: &[String]) -> String {
    let mut s = String::new();
    for (i, o) in options.iter().enumerate() {
        let _ = writeln!(s, "{}. {}", i + 1, o);
    }
    s.truncate(s.trim_end().len());
    s
}

/// Plain rendering of a query/pane pair, used for few-shot examples.
pub fn render_pair(unit: &AnnotationUnit) -> String {
    format!(
        "Query: {}\nClarifying question: {}\nOptions:\n{}",
        unit.query,
        unit.pane.question,
        render_options(&unit.pane.options)
    )
}

fn render_panes(panes: &[AnnotationUnit]) -> String {
    let mut s = format!("There are {} clarification panes.\n", panes.len());
    for (i, u) in panes.iter().enumerate() {
        let _ = write!(
            s,
            "\nPane {}:\nClarifying question: {}\nOptions:\n{}\n",
            i + 1,
            u.pane.question,
            render_options(&u.pane.options)
        );
    }
    s.truncate(s.trim_end().len());
    s
}

fn render_examples(examples: &[&FewShotExample]) -> String {
    if examples.is_empty() {
        return String::new();
    }
    let mut s = String::from("Examples of how human annotators labelled similar items:\n\n");
    for (i, ex) in examples.iter().enumerate() {
        let _ = write!(s, "Example {}:\n{}\nRating: {}\n\n", i + 1, ex.rendering, ex.label);
    }
    s.push_str("Now rate the following.\n\n");
    s
}

/// Single-pass `{name}` substitution; substituted values are not rescanned.
fn fill(body: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(body.len());
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}').map(|close| (&after[..close], close)) {
            Some((name, close)) if vars.iter().any(|(k, _)| *k == name) => {
                let value = vars.iter().find(|(k, _)| *k == name).map(|(_, v)| *v).unwrap_or("");
                out.push_str(value);
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn output_instruction(items: usize) -> String {
    if items == 1 {
        "State your rating and how confident you are in it, as a percentage from 0 to 100. \
         End your answer with exactly one line of the form:\nLABEL=<1-5> CONFIDENCE=<0-100>"
            .to_string()
    } else {
        format!(
            "For each of the {items} panes, state your rating and how confident you are in it, as a percentage from 0 to 100. \
             End your answer with exactly {items} lines, one per pane in the order shown, each of the form:\n\
             LABEL=<1-5> CONFIDENCE=<0-100>"
        )
    }
}

pub fn build_prompt(
    template: &TaskTemplate,
    target: PromptTarget<'_>,
    setting: &PromptSetting,
    variant: &PromptVariant,
) -> Result<PromptText, PromptError> {
    let task = template.task;
    if template.body.trim().is_empty() {
        return Err(PromptError::EmptyTemplate(task));
    }
    let (query, units): (&str, &[AnnotationUnit]) = match (task.is_listwise(), target) {
        (true, PromptTarget::Group(panes)) => {
            let first = panes.first().ok_or(PromptError::EmptyGroup)?;
            if let Some(other) = panes.iter().find(|u| u.query_id != first.query_id) {
                return Err(PromptError::MixedGroup(first.query_id.clone(), other.query_id.clone()));
            }
            (&first.query, panes)
        }
        (false, PromptTarget::Unit(u)) => (&u.query, core::slice::from_ref(u)),
        (true, PromptTarget::Unit(_)) => {
            return Err(PromptError::Arity { task, expected: "a query group", got: "a single unit" })
        }
        (false, PromptTarget::Group(_)) => {
            return Err(PromptError::Arity { task, expected: "a single unit", got: "a query group" })
        }
    };

    let mut examples: Vec<&FewShotExample> = match setting.mode {
        PromptMode::Zss => Vec::new(),
        PromptMode::Fss => {
            if setting.few_shot_examples.is_empty() {
                return Err(PromptError::NoExamples);
            }
            setting.few_shot_examples.iter().collect()
        }
    };
    if variant.transformation == Transformation::ExampleOrderShuffled {
        let mut rng = ChaCha8Rng::seed_from_u64(variant.shuffle_seed);
        examples.shuffle(&mut rng);
    }

    let examples_text = render_examples(&examples);
    let (question, options, panes) = if task.is_listwise() {
        (String::new(), String::new(), render_panes(units))
    } else {
        (units[0].pane.question.clone(), render_options(&units[0].pane.options), String::new())
    };
    let item = fill(
        &template.body,
        &[
            ("query", query),
            ("question", &question),
            ("options", &options),
            ("examples", &examples_text),
            ("panes", &panes),
        ],
    );
    let scale = format!("Rating scale:\n{}", template.scale);
    let instruction = output_instruction(units.len());

    let sections: Vec<&str> = match variant.transformation {
        Transformation::Baseline | Transformation::ExampleOrderShuffled => {
            [&template.guideline, &template.rationale, &scale, &item, &instruction]
                .into_iter()
                .map(String::as_str)
                .collect()
        }
        Transformation::Shortened => [&template.guideline, &scale, &item, &instruction]
            .into_iter()
            .map(String::as_str)
            .collect(),
        Transformation::Rephrased => [&item, &template.rephrased, &template.rationale, &scale, &instruction]
            .into_iter()
            .map(String::as_str)
            .collect(),
    };
    let text = sections
        .into_iter()
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("\n\n");

    Ok(PromptText {
        text,
        task,
        unit_ids: units.iter().map(|u| u.unit_id.clone()).collect(),
        variant_id: variant.variant_id.clone(),
        max_tokens: variant.max_tokens,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unit::ClarificationPane;
    use alloc::collections::BTreeMap;
    use alloc::vec;

    fn unit(id: &str, query_id: &str) -> AnnotationUnit {
        AnnotationUnit {
            unit_id: id.into(),
            query_id: query_id.into(),
            query: "jaguar".into(),
            pane: ClarificationPane {
                pane_id: id.into(),
                question: format!("What do you mean by jaguar ({id})?"),
                options: vec!["animal".into(), "car".into(), "football team".into()],
            },
            gold: BTreeMap::new(),
        }
    }

    fn examples() -> Vec<FewShotExample> {
        (1..=5)
            .map(|v| FewShotExample {
                unit_id: format!("ex{v}"),
                rendering: format!("Query: example {v}"),
                label: Label::new(v).unwrap(),
            })
            .collect()
    }

    fn example_order(text: &str) -> Vec<usize> {
        (1..=5)
            .map(|v| text.find(&format!("Query: example {v}\n")).unwrap())
            .collect()
    }

    #[test]
    fn zero_shot_quality_prompt() {
        let u = unit("p1", "q1");
        let t = TaskTemplate::default_for(TaskKind::Quality);
        let p = build_prompt(&t, PromptTarget::Unit(&u), &PromptSetting::zero_shot(), &PromptVariant::baseline())
            .unwrap();
        assert!(p.text.contains("Query: jaguar"));
        assert!(p.text.contains(&u.pane.question));
        assert!(p.text.contains("1. animal\n2. car\n3. football team"));
        assert!(p.text.contains("1 = very bad\n2 = bad\n3 = fair\n4 = good\n5 = very good"));
        assert!(p.text.ends_with("LABEL=<1-5> CONFIDENCE=<0-100>"));
        assert!(!p.text.contains("Example 1"));
        assert_eq!(p.unit_ids, vec!["p1".to_string()]);
    }

    #[test]
    fn preference_lists_every_pane() {
        let group = vec![unit("p1", "q1"), unit("p2", "q1"), unit("p3", "q1")];
        let t = TaskTemplate::default_for(TaskKind::Preference);
        let p = build_prompt(
            &t,
            PromptTarget::Group(&group),
            &PromptSetting::few_shot(examples()),
            &PromptVariant::baseline(),
        )
        .unwrap();
        assert!(p.text.contains("There are 3 clarification panes."));
        for u in &group {
            assert!(p.text.contains(&u.pane.question));
        }
        assert!(p.text.contains("identical ratings are allowed"));
        assert!(p.text.contains("exactly 3 lines"));
        assert_eq!(p.unit_ids.len(), 3);
    }

    #[test]
    fn arity_and_example_errors() {
        let u = unit("p1", "q1");
        let pref = TaskTemplate::default_for(TaskKind::Preference);
        let qual = TaskTemplate::default_for(TaskKind::Quality);
        let zss = PromptSetting::zero_shot();
        let base = PromptVariant::baseline();
        assert!(matches!(build_prompt(&pref, PromptTarget::Unit(&u), &zss, &base), Err(PromptError::Arity { .. })));
        let group = [u.clone()];
        assert!(matches!(
            build_prompt(&qual, PromptTarget::Group(&group), &zss, &base),
            Err(PromptError::Arity { .. })
        ));
        assert_eq!(
            build_prompt(&qual, PromptTarget::Unit(&u), &PromptSetting::few_shot(vec![]), &base),
            Err(PromptError::NoExamples)
        );
        assert_eq!(build_prompt(&pref, PromptTarget::Group(&[]), &zss, &base), Err(PromptError::EmptyGroup));
        let mixed = [unit("p1", "q1"), unit("p2", "q2")];
        assert!(matches!(
            build_prompt(&pref, PromptTarget::Group(&mixed), &zss, &base),
            Err(PromptError::MixedGroup(..))
        ));
    }

    #[test]
    fn shuffled_examples_are_a_permutation() {
        let u = unit("p1", "q1");
        let t = TaskTemplate::default_for(TaskKind::Quality);
        let fss = PromptSetting::few_shot(examples());
        let base = build_prompt(&t, PromptTarget::Unit(&u), &fss, &PromptVariant::baseline()).unwrap();
        let shuffled_variant = PromptVariant::new(Transformation::ExampleOrderShuffled, 1000, 42);
        let shuffled = build_prompt(&t, PromptTarget::Unit(&u), &fss, &shuffled_variant).unwrap();

        let base_pos = example_order(&base.text);
        let shuf_pos = example_order(&shuffled.text);
        // same multiset of examples
        let mut a = base.text.lines().filter(|l| l.starts_with("Query: example")).collect::<Vec<_>>();
        let mut b = shuffled.text.lines().filter(|l| l.starts_with("Query: example")).collect::<Vec<_>>();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert!(base_pos.windows(2).all(|w| w[0] < w[1]));
        assert!(!shuf_pos.windows(2).all(|w| w[0] < w[1]), "seed 42 should reorder five examples");
    }

    #[test]
    fn few_shot_contains_zero_shot_description() {
        let u = unit("p1", "q1");
        for task in [TaskKind::Quality, TaskKind::Coverage, TaskKind::Diversity, TaskKind::OptionOrder] {
            let t = TaskTemplate::default_for(task);
            for v in enumerate_variants(&DEFAULT_TOKEN_LIMITS, 3) {
                let z = build_prompt(&t, PromptTarget::Unit(&u), &PromptSetting::zero_shot(), &v).unwrap();
                let f = build_prompt(&t, PromptTarget::Unit(&u), &PromptSetting::few_shot(examples()), &v).unwrap();
                let desc = if v.transformation == Transformation::Rephrased { &t.rephrased } else { &t.guideline };
                assert!(z.text.contains(desc.as_str()) && f.text.contains(desc.as_str()));
                assert!(f.text.len() > z.text.len());
            }
        }
    }

    #[test]
    fn shortened_drops_rationale_keeps_scale() {
        let u = unit("p1", "q1");
        let t = TaskTemplate::default_for(TaskKind::Quality);
        let v = PromptVariant::new(Transformation::Shortened, 250, 0);
        let p = build_prompt(&t, PromptTarget::Unit(&u), &PromptSetting::zero_shot(), &v).unwrap();
        assert!(!p.text.contains(&t.rationale));
        assert!(p.text.contains(&t.scale));
        assert_eq!(p.max_tokens, 250);
    }

    #[test]
    fn variant_enumeration() {
        let all = enumerate_variants(&DEFAULT_TOKEN_LIMITS, 0);
        assert_eq!(all.len(), 12);
        let baseline_1000 = all
            .iter()
            .filter(|v| v.transformation == Transformation::Baseline && v.max_tokens == 1000)
            .count();
        assert_eq!(baseline_1000, 1);
        let mut ids: Vec<&str> = all.iter().map(|v| v.variant_id.as_str()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 12);
        assert_eq!(enumerate_variants(&[1000], 0).len(), 4);
    }

    #[test]
    fn placeholder_values_are_not_rescanned() {
        assert_eq!(fill("a {x} b {y} {z}", &[("x", "{y}"), ("y", "Y")]), "a {y} b Y {z}");
    }
}
