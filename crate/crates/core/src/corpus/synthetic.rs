//! Deterministic synthetic corpus generator.
//!
//! Rules are templated conjunctions/disjunctions of atomic conditions, so
//! every gold label can be recomputed mechanically from the example text.
//! The generator is the test bed for the whole pipeline: retrieval (titles
//! reappear in questions), segmentation (conditions become clauses), span
//! labeling (follow-ups are one-token edits of their condition clause) and
//! decision logic (three-valued evaluation of the rule form).

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

use super::{CorpusSplit, Decision, DialogueExample, FollowUpAnswer, HistoryTurn, RuleDocument};

/// Atomic condition phrasings. Each must be a present-tense "you <verb> ..."
/// statement so that "do " + statement is a grammatical question and the
/// token edit distance between question and clause is exactly one.
pub const CONDITIONS: [&str; 16] = [
    "have a valid passport",
    "have a residence permit",
    "live in the city",
    "work full time",
    "own a car",
    "earn less than the limit",
    "receive a pension",
    "care for a child",
    "study at a university",
    "rent your home",
    "hold a library card",
    "run a small business",
    "farm your own land",
    "teach at a school",
    "serve on a jury",
    "volunteer each week",
];

/// Off-topic scenario sentences marking an Irrelevant example. They contain
/// no rule-topic tokens so retrieval is unaffected.
pub const OFF_TOPIC_MARKERS: [&str; 3] = [
    "My question is about something else entirely.",
    "This is about a different matter.",
    "My question concerns another issue.",
];

const SYLLABLES: [&str; 12] = [
    "ka", "ri", "mo", "ta", "lu", "ben", "sol", "ve", "na", "zu", "pi", "dor",
];

/// Unique pronounceable topic word for rule `i`.
pub fn topic_word(i: usize) -> String {
    let mut s = String::new();
    s.push_str(SYLLABLES[i % 12]);
    s.push_str(SYLLABLES[(i / 12) % 12]);
    s.push_str(SYLLABLES[(i / 144) % 12]);
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleForm {
    Single,
    All,
    Any,
}

/// Generator-side description of one templated rule.
#[derive(Debug, Clone)]
pub struct RuleLogic {
    pub doc_id: String,
    pub topic: String,
    pub form: RuleForm,
    /// Indices into [`CONDITIONS`], in the order they appear in the text.
    pub conditions: Vec<usize>,
}

impl RuleLogic {
    pub fn statement(idx: usize) -> String {
        format!("you {}", CONDITIONS[idx])
    }

    pub fn question(idx: usize) -> String {
        format!("Do you {}?", CONDITIONS[idx])
    }

    pub fn affirm(idx: usize) -> String {
        format!("I {}.", CONDITIONS[idx])
    }

    pub fn deny(idx: usize) -> String {
        format!("I do not {}.", CONDITIONS[idx])
    }

    pub fn title(&self) -> String {
        format!("The {} benefit", self.topic)
    }

    pub fn text(&self) -> String {
        let connective = match self.form {
            RuleForm::Any => " or ",
            _ => " and ",
        };
        let clauses: Vec<String> = self.conditions.iter().map(|&c| Self::statement(c)).collect();
        format!(
            "The {topic} benefit. You qualify for the {topic} benefit if {conds}. Contact the {topic} office for details.",
            topic = self.topic,
            conds = clauses.join(connective),
        )
    }

    /// Three-valued evaluation: `facts` maps condition index to a known
    /// truth value; absent means unknown. Returns the decision and, for
    /// Inquire, the first unknown condition in rule order.
    pub fn evaluate(&self, facts: &BTreeMap<usize, bool>) -> (Decision, Option<usize>) {
        let values: Vec<Option<bool>> = self.conditions.iter().map(|c| facts.get(c).copied()).collect();
        let first_unknown = self
            .conditions
            .iter()
            .zip(&values)
            .find(|(_, v)| v.is_none())
            .map(|(c, _)| *c);
        let decision = match self.form {
            RuleForm::Any => {
                if values.iter().any(|v| *v == Some(true)) {
                    Decision::Yes
                } else if values.iter().all(|v| *v == Some(false)) {
                    Decision::No
                } else {
                    Decision::Inquire
                }
            }
            _ => {
                if values.iter().any(|v| *v == Some(false)) {
                    Decision::No
                } else if values.iter().all(|v| *v == Some(true)) {
                    Decision::Yes
                } else {
                    Decision::Inquire
                }
            }
        };
        (decision, if decision == Decision::Inquire { first_unknown } else { None })
    }
}

/// Generator ground truth for one example, used by oracle tests.
#[derive(Debug, Clone)]
pub struct ExampleTruth {
    pub utterance_id: String,
    pub rule_index: usize,
    /// Facts established by the scenario (condition index -> value).
    pub scenario_facts: BTreeMap<usize, bool>,
    /// Facts established by the dialog history.
    pub history_facts: BTreeMap<usize, bool>,
    pub off_topic: bool,
    /// The condition the gold follow-up asks about, if any.
    pub asked_condition: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct SyntheticMeta {
    pub rules: Vec<RuleLogic>,
    pub truths: Vec<ExampleTruth>,
}

pub struct SyntheticConfig {
    pub seed: u64,
    pub n_rules: usize,
    pub n_examples: usize,
    /// Fraction of rules usable by training examples; remaining rules only
    /// appear in dev/test, giving a genuine unseen partition.
    pub seen_fraction: f64,
    /// Fractions of examples assigned to dev and test.
    pub dev_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 0,
            n_rules: 10,
            n_examples: 50,
            seen_fraction: 0.5,
            dev_fraction: 0.15,
            test_fraction: 0.15,
        }
    }
}

/// Generate a synthetic corpus. Deterministic given the config.
pub fn generate(config: &SyntheticConfig) -> (Vec<RuleDocument>, CorpusSplit, SyntheticMeta) {
    assert!(config.n_rules >= 1 && config.n_examples >= 1);
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);

    let mut rules = Vec::with_capacity(config.n_rules);
    for i in 0..config.n_rules {
        let n_conds = rng.gen_range(1..=3.min(CONDITIONS.len() - 1)) + usize::from(rng.gen_bool(0.2));
        let n_conds = n_conds.min(4);
        let mut pool: Vec<usize> = (0..CONDITIONS.len()).collect();
        pool.shuffle(&mut rng);
        let conditions: Vec<usize> = pool.into_iter().take(n_conds).collect();
        let form = if conditions.len() == 1 {
            RuleForm::Single
        } else if rng.gen_bool(0.5) {
            RuleForm::All
        } else {
            RuleForm::Any
        };
        rules.push(RuleLogic {
            doc_id: format!("doc-{i:03}"),
            topic: topic_word(i),
            form,
            conditions,
        });
    }

    let docs: Vec<RuleDocument> = rules
        .iter()
        .map(|r| RuleDocument {
            doc_id: r.doc_id.clone(),
            title: r.title(),
            text: r.text(),
            extra: BTreeMap::new(),
        })
        .collect();

    let n_dev = ((config.n_examples as f64) * config.dev_fraction).round() as usize;
    let n_test = ((config.n_examples as f64) * config.test_fraction).round() as usize;
    let n_train = config.n_examples.saturating_sub(n_dev + n_test).max(1);
    let n_seen_rules = (((config.n_rules as f64) * config.seen_fraction).ceil() as usize)
        .clamp(1, config.n_rules);

    let mut train = Vec::new();
    let mut dev = Vec::new();
    let mut test = Vec::new();
    let mut truths = Vec::new();

    for j in 0..(n_train + n_dev + n_test) {
        let (bucket, rule_limit) = if j < n_train {
            (0, n_seen_rules)
        } else if j < n_train + n_dev {
            (1, config.n_rules)
        } else {
            (2, config.n_rules)
        };
        let rule_index = rng.gen_range(0..rule_limit);
        let (example, truth) = generate_example(&mut rng, j, &rules[rule_index], rule_index);
        truths.push(truth);
        match bucket {
            0 => train.push(example),
            1 => dev.push(example),
            _ => test.push(example),
        }
    }

    let split = CorpusSplit::new(train, dev, test);
    let meta = SyntheticMeta { rules, truths };
    (docs, split, meta)
}

/// The spec-facing entry point: rules plus split, metadata dropped.
pub fn generate_synthetic_corpus(
    seed: u64,
    n_rules: usize,
    n_examples: usize,
) -> (Vec<RuleDocument>, CorpusSplit) {
    let (docs, split, _) = generate(&SyntheticConfig {
        seed,
        n_rules,
        n_examples,
        ..SyntheticConfig::default()
    });
    (docs, split)
}

fn generate_example(
    rng: &mut ChaCha20Rng,
    index: usize,
    rule: &RuleLogic,
    rule_index: usize,
) -> (DialogueExample, ExampleTruth) {
    // Pick a target decision, then sample facts that realize it.
    let target = match rng.gen_range(0..10) {
        0..=2 => Decision::Yes,
        3..=5 => Decision::No,
        6..=8 => Decision::Inquire,
        _ => Decision::Irrelevant,
    };

    let conds = &rule.conditions;
    let mut values: Vec<Option<bool>> = vec![None; conds.len()];
    let off_topic = target == Decision::Irrelevant;

    if !off_topic {
        match (target, rule.form) {
            (Decision::Yes, RuleForm::Any) => {
                // At least one true; the rest are anything except "all false".
                let t = rng.gen_range(0..conds.len());
                values[t] = Some(true);
                for (i, v) in values.iter_mut().enumerate() {
                    if i != t && rng.gen_bool(0.5) {
                        *v = Some(rng.gen_bool(0.5));
                    }
                }
            }
            (Decision::Yes, _) => {
                for v in values.iter_mut() {
                    *v = Some(true);
                }
            }
            (Decision::No, RuleForm::Any) => {
                for v in values.iter_mut() {
                    *v = Some(false);
                }
            }
            (Decision::No, _) => {
                let f = rng.gen_range(0..conds.len());
                values[f] = Some(false);
                for (i, v) in values.iter_mut().enumerate() {
                    if i != f && rng.gen_bool(0.5) {
                        *v = Some(rng.gen_bool(0.5));
                    }
                }
            }
            (Decision::Inquire, RuleForm::Any) => {
                // No true yet, at least one unknown.
                let u = rng.gen_range(0..conds.len());
                for (i, v) in values.iter_mut().enumerate() {
                    if i != u && rng.gen_bool(0.5) {
                        *v = Some(false);
                    }
                }
                values[u] = None;
            }
            (Decision::Inquire, _) => {
                // No false, at least one unknown.
                let u = rng.gen_range(0..conds.len());
                for (i, v) in values.iter_mut().enumerate() {
                    if i != u && rng.gen_bool(0.5) {
                        *v = Some(true);
                    }
                }
                values[u] = None;
            }
            (Decision::Irrelevant, _) => unreachable!(),
        }
    } else {
        // Off-topic examples may still mention random facts.
        for v in values.iter_mut() {
            if rng.gen_bool(0.3) {
                *v = Some(rng.gen_bool(0.5));
            }
        }
    }

    // Distribute known facts between scenario and history.
    let mut scenario_facts = BTreeMap::new();
    let mut history_facts = BTreeMap::new();
    for (i, v) in values.iter().enumerate() {
        if let Some(val) = v {
            if rng.gen_bool(0.5) {
                scenario_facts.insert(conds[i], *val);
            } else {
                history_facts.insert(conds[i], *val);
            }
        }
    }

    let mut scenario_sentences: Vec<String> = Vec::new();
    if off_topic {
        scenario_sentences.push(OFF_TOPIC_MARKERS[rng.gen_range(0..OFF_TOPIC_MARKERS.len())].to_string());
    }
    for (&c, &val) in &scenario_facts {
        scenario_sentences.push(if val { RuleLogic::affirm(c) } else { RuleLogic::deny(c) });
    }
    // Occasionally mention a condition the rule does not use.
    if rng.gen_bool(0.3) {
        let distractor = rng.gen_range(0..CONDITIONS.len());
        if !conds.contains(&distractor) {
            scenario_sentences.push(if rng.gen_bool(0.5) {
                RuleLogic::affirm(distractor)
            } else {
                RuleLogic::deny(distractor)
            });
        }
    }

    let history: Vec<HistoryTurn> = history_facts
        .iter()
        .map(|(&c, &val)| HistoryTurn {
            follow_up_question: RuleLogic::question(c),
            follow_up_answer: if val { FollowUpAnswer::Yes } else { FollowUpAnswer::No },
        })
        .collect();

    let facts: BTreeMap<usize, bool> = scenario_facts
        .iter()
        .chain(history_facts.iter())
        .map(|(&k, &v)| (k, v))
        .collect();
    let (decision, asked) = if off_topic {
        (Decision::Irrelevant, None)
    } else {
        rule.evaluate(&facts)
    };
    debug_assert_eq!(decision, target);

    let gold_follow_up = asked.map(RuleLogic::question);
    let evidence: Vec<String> = history
        .iter()
        .map(|h| h.follow_up_question.clone())
        .collect();

    let example = DialogueExample {
        utterance_id: format!("ex-{index:04}"),
        tree_id: format!("tree-{rule_index:03}"),
        gold_doc_id: rule.doc_id.clone(),
        question: format!("Do I qualify for the {} benefit?", rule.topic),
        scenario: scenario_sentences.join(" "),
        history,
        evidence,
        decision,
        gold_follow_up,
        extra: BTreeMap::new(),
    };
    let truth = ExampleTruth {
        utterance_id: example.utterance_id.clone(),
        rule_index,
        scenario_facts,
        history_facts,
        off_topic,
        asked_condition: asked,
    };
    (example, truth)
}
