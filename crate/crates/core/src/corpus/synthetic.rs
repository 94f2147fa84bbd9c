//! Parameterized synthetic dialog corpus over a domains × intents × slots ×
//! values grid. Used by tests, benches and the `gen-synthetic` subcommand.
//!
//! The last user turn carries the annotated request; earlier turns are
//! distractors that mention other domains, so recovering the intent needs
//! the turn structure and not just a bag of words.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sample::{DialogSample, Turn};
use crate::error::{Error, Result};
use crate::sts::{AnnotationPath, SemanticTree};

const DOMAINS: &[(&str, &[&str])] = &[
    ("restaurant", &["restaurant", "table", "dinner"]),
    ("hotel", &["hotel", "room", "stay"]),
    ("train", &["train", "rail", "ticket"]),
    ("taxi", &["taxi", "cab", "ride"]),
    ("attraction", &["attraction", "museum", "sight"]),
    ("flight", &["flight", "plane", "airline"]),
    ("bank", &["bank", "account", "transfer"]),
    ("movie", &["movie", "film", "cinema"]),
    ("weather", &["weather", "forecast", "rain"]),
    ("music", &["music", "song", "playlist"]),
];

const ACTS: &[(&str, &[&str])] = &[
    ("book", &["book", "reserve", "secure"]),
    ("find", &["find", "search for", "look up"]),
    ("cancel", &["cancel", "call off", "drop"]),
    ("change", &["change", "modify", "move"]),
    ("compare", &["compare", "weigh", "contrast"]),
    ("confirm", &["confirm", "verify", "double check"]),
    ("rate", &["rate", "review", "score"]),
    ("recommend", &["recommend", "suggest", "propose"]),
];

const SLOTS: &[(&str, &[&str])] = &[
    ("area", &["north", "south", "east", "west", "centre", "harbour"]),
    ("price", &["cheap", "moderate", "expensive", "premium", "budget", "pricey"]),
    ("day", &["monday", "tuesday", "wednesday", "thursday", "friday", "sunday"]),
    ("time", &["morning", "noon", "afternoon", "evening", "night", "midnight"]),
    ("people", &["one", "two", "three", "four", "five", "six"]),
    ("name", &["alpha", "bravo", "delta", "echo", "kilo", "oscar"]),
    ("type", &["modern", "classic", "quiet", "lively", "family", "fancy"]),
    ("stars", &["bronze", "silver", "gold", "platinum", "diamond", "ruby"]),
];

const FILLER: &[&str] = &[
    "please", "i", "would", "like", "to", "could", "you", "hey", "so", "the", "a", "for", "me", "now", "just",
    "maybe", "okay", "well", "we", "need", "want", "it", "with", "some", "also", "then", "thanks",
];

const SYSTEM_OPENERS: &[&str] = &[
    "how can i help",
    "anything else",
    "what do you need",
    "sure thing",
    "got it",
    "let me check",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub domains: usize,
    pub intents_per_domain: usize,
    pub slots_per_domain: usize,
    pub values_per_slot: usize,
    pub labeled: usize,
    pub unlabeled: usize,
    /// Maximum number of context turns before the final user turn.
    pub max_history: usize,
    /// Fraction of labeled samples annotated with only the intent or only
    /// the slot-value pairs.
    pub partial_annotation_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            domains: 5,
            intents_per_domain: 4,
            slots_per_domain: 4,
            values_per_slot: 4,
            labeled: 200,
            unlabeled: 200,
            max_history: 2,
            partial_annotation_rate: 0.3,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        let check = |name: &str, v: usize, max: usize| {
            if v == 0 || v > max {
                Err(Error::Config(format!("{name} must be in 1..={max}, got {v}")))
            } else {
                Ok(())
            }
        };
        check("domains", self.domains, DOMAINS.len())?;
        check("intents_per_domain", self.intents_per_domain, ACTS.len())?;
        check("slots_per_domain", self.slots_per_domain, SLOTS.len())?;
        check("values_per_slot", self.values_per_slot, SLOTS[0].1.len())?;
        if !(0.0..=1.0).contains(&self.partial_annotation_rate) {
            return Err(Error::Config("partial_annotation_rate must be within [0, 1]".into()));
        }
        Ok(())
    }

    /// Intent labels in generation order.
    pub fn intent_labels(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (domain, _) in &DOMAINS[..self.domains] {
            for (act, _) in &ACTS[..self.intents_per_domain] {
                out.push(intent_label(act, domain));
            }
        }
        out
    }
}

fn intent_label(act: &str, domain: &str) -> String {
    format!("{act}_{domain}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticCorpus {
    pub labeled: Vec<DialogSample>,
    pub unlabeled: Vec<DialogSample>,
}

struct Request {
    domain: usize,
    act: usize,
    slots: Vec<(usize, usize)>,
    text: String,
}

struct Generator<'a> {
    cfg: &'a SyntheticConfig,
    rng: ChaCha8Rng,
}

impl Generator<'_> {
    fn filler(&mut self, max: usize) -> Vec<&'static str> {
        let k = self.rng.random_range(0..=max);
        (0..k).map(|_| *FILLER.choose(&mut self.rng).unwrap()).collect()
    }

    fn request(&mut self) -> Request {
        let cfg = self.cfg;
        let domain = self.rng.random_range(0..cfg.domains);
        let act = self.rng.random_range(0..cfg.intents_per_domain);
        let n_slots = self.rng.random_range(0..=2.min(cfg.slots_per_domain));
        let mut slot_ids: Vec<usize> = (0..cfg.slots_per_domain).collect();
        let (chosen, _) = slot_ids.partial_shuffle(&mut self.rng, n_slots);
        let mut slots: Vec<(usize, usize)> =
            chosen.iter().map(|&s| (s, self.rng.random_range(0..cfg.values_per_slot))).collect();
        slots.sort_unstable();

        let mut words: Vec<String> = self.filler(3).into_iter().map(str::to_owned).collect();
        words.push(ACTS[act].1.choose(&mut self.rng).unwrap().to_string());
        words.extend(self.filler(1).into_iter().map(str::to_owned));
        words.push(DOMAINS[domain].1.choose(&mut self.rng).unwrap().to_string());
        for &(s, v) in &slots {
            words.extend(self.filler(1).into_iter().map(str::to_owned));
            words.push(SLOTS[s].0.to_string());
            words.push(SLOTS[s].1[v].to_string());
        }
        words.extend(self.filler(2).into_iter().map(str::to_owned));
        Request { domain, act, slots, text: words.join(" ") }
    }

    fn system_turn(&mut self) -> String {
        let opener = *SYSTEM_OPENERS.choose(&mut self.rng).unwrap();
        let d = self.rng.random_range(0..self.cfg.domains);
        let noun = *DOMAINS[d].1.choose(&mut self.rng).unwrap();
        format!("{opener} with the {noun}")
    }

    fn dialog(&mut self) -> (Vec<Turn>, Request) {
        let history = self.rng.random_range(0..=self.cfg.max_history);
        let mut turns = Vec::with_capacity(history + 1);
        // Alternate roles so that the final turn is always the user's.
        for h in (0..history).rev() {
            if h % 2 == 0 {
                turns.push(Turn::system(self.system_turn()));
            } else {
                let earlier = self.request();
                turns.push(Turn::user(earlier.text));
            }
        }
        let req = self.request();
        turns.push(Turn::user(req.text.clone()));
        (turns, req)
    }

    fn annotation(&mut self, req: &Request) -> SemanticTree {
        let domain = DOMAINS[req.domain].0;
        let intent = intent_label(ACTS[req.act].0, domain);
        let partial = self.rng.random::<f64>() < self.cfg.partial_annotation_rate;
        let slot_only = partial && !req.slots.is_empty() && self.rng.random::<bool>();
        let path = |d: Option<&str>, i: Option<&str>, s: Option<&str>, v: Option<&str>| {
            AnnotationPath::new(d, i, s, v).expect("generated labels are non-empty")
        };
        let mut tree = SemanticTree::new();
        if slot_only {
            for &(s, v) in &req.slots {
                tree.insert(path(None, None, Some(SLOTS[s].0), Some(SLOTS[s].1[v])));
            }
        } else if partial || req.slots.is_empty() {
            tree.insert(path((!partial).then_some(domain), Some(&intent), None, None));
        } else {
            for &(s, v) in &req.slots {
                tree.insert(path(Some(domain), Some(&intent), Some(SLOTS[s].0), Some(SLOTS[s].1[v])));
            }
        }
        tree
    }
}

/// Generates the labeled and unlabeled pools. Identical configs produce
/// identical corpora.
pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut g = Generator { cfg, rng: ChaCha8Rng::seed_from_u64(cfg.seed) };
    let mut labeled = Vec::with_capacity(cfg.labeled);
    for i in 0..cfg.labeled {
        let (turns, req) = g.dialog();
        let tree = g.annotation(&req);
        labeled.push(DialogSample {
            dialog_id: format!("syn-l{i:05}"),
            source: "synthetic".into(),
            turns,
            annotation: Some(tree),
        });
    }
    let mut unlabeled = Vec::with_capacity(cfg.unlabeled);
    for i in 0..cfg.unlabeled {
        let (turns, _) = g.dialog();
        unlabeled.push(DialogSample {
            dialog_id: format!("syn-u{i:05}"),
            source: "synthetic-unlabeled".into(),
            turns,
            annotation: None,
        });
    }
    Ok(SyntheticCorpus { labeled, unlabeled })
}
