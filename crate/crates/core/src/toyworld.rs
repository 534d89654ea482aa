//! A synthetic world of topics with disjoint pseudo-word vocabularies.
//!
//! Each topic holds facts `entity relation value` with Zipf-distributed
//! frequencies. Documents are streams of fact sentences; QA items ask for the
//! value of a fact and offer four full statements as options.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::io::{write_documents, write_qa};
use crate::corpus::{Document, QAItem};
use crate::error::{Error, Result};
use crate::harness::DataPaths;
use crate::rng::{Role, RngKey};

const TOPIC_NAMES: &[&str] = &[
    "world_religions",
    "high_school_geography",
    "high_school_us_history",
    "global_facts",
    "astronomy",
    "nutrition",
    "philosophy",
    "prehistory",
    "sociology",
    "virology",
];

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "th", "br", "dr", "kr", "st",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub topics: usize,
    pub entities_per_topic: usize,
    pub relations_per_topic: usize,
    pub values_per_relation: usize,
    pub zipf_exponent: f64,
    pub docs_per_topic: usize,
    pub sentences_per_doc: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            topics: 2,
            entities_per_topic: 40,
            relations_per_topic: 3,
            values_per_relation: 8,
            zipf_exponent: 1.0,
            docs_per_topic: 60,
            sentences_per_doc: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fact {
    pub entity: String,
    pub relation: String,
    pub value: String,
    /// Relative sampling weight within the topic.
    pub weight: f64,
}

impl Fact {
    pub fn sentence(&self) -> String {
        format!("{} {} {}.", capitalize(&self.entity), self.relation, self.value)
    }

    pub fn statement(&self, value: &str) -> String {
        format!("{} {} {}", self.entity, self.relation, value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topic {
    pub name: String,
    pub facts: Vec<Fact>,
    /// Candidate values per relation.
    pub values: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub config: WorldConfig,
    pub topics: Vec<Topic>,
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn fresh_word<R: Rng>(rng: &mut R, used: &mut HashSet<String>) -> String {
    loop {
        let syllables = rng.random_range(2..=3);
        let w: String = (0..syllables)
            .map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap()))
            .collect();
        if used.insert(w.clone()) {
            return w;
        }
    }
}

impl World {
    pub fn generate(config: WorldConfig) -> Self {
        let mut rng = RngKey::new(config.seed, 0, Role::World, 0).rng();
        let mut used = HashSet::new();
        let mut topics = Vec::with_capacity(config.topics);
        for t in 0..config.topics {
            let name = TOPIC_NAMES
                .get(t)
                .map_or_else(|| format!("topic_{t}"), |s| s.to_string());
            let entities: Vec<String> = (0..config.entities_per_topic)
                .map(|_| fresh_word(&mut rng, &mut used))
                .collect();
            let mut values = BTreeMap::new();
            let mut relations = Vec::new();
            for _ in 0..config.relations_per_topic {
                let r = fresh_word(&mut rng, &mut used);
                let vs: Vec<String> = (0..config.values_per_relation)
                    .map(|_| fresh_word(&mut rng, &mut used))
                    .collect();
                values.insert(r.clone(), vs);
                relations.push(r);
            }
            let mut facts = Vec::new();
            for e in &entities {
                for r in &relations {
                    let v = values[r].choose(&mut rng).unwrap().clone();
                    facts.push(Fact {
                        entity: e.clone(),
                        relation: r.clone(),
                        value: v,
                        weight: 0.0,
                    });
                }
            }
            let mut ranks: Vec<usize> = (1..=facts.len()).collect();
            ranks.shuffle(&mut rng);
            for (f, r) in facts.iter_mut().zip(ranks) {
                f.weight = 1.0 / (r as f64).powf(config.zipf_exponent);
            }
            topics.push(Topic { name, facts, values });
        }
        Self { config, topics }
    }

    pub fn topic(&self, name: &str) -> Option<&Topic> {
        self.topics.iter().find(|t| t.name == name)
    }

    pub fn topic_names(&self) -> Vec<String> {
        self.topics.iter().map(|t| t.name.clone()).collect()
    }

    /// `docs_per_topic` documents per topic, each a run of fact sentences
    /// drawn by weight. Ids are `<topic>-<n>`; `stream` separates corpora
    /// drawn from the same world.
    pub fn documents(&self, topics: &[&str], stream: u64) -> Vec<Document> {
        let mut out = Vec::new();
        for (ti, topic) in self.topics.iter().enumerate() {
            if !topics.is_empty() && !topics.contains(&topic.name.as_str()) {
                continue;
            }
            let weights = WeightedIndex::new(topic.facts.iter().map(|f| f.weight)).unwrap();
            for d in 0..self.config.docs_per_topic {
                let key = RngKey::new(self.config.seed, stream, Role::World, ((ti as u64) << 32) | (d as u64 + 1));
                let mut rng = key.rng();
                let text: Vec<String> = (0..self.config.sentences_per_doc)
                    .map(|_| topic.facts[weights.sample(&mut rng)].sentence())
                    .collect();
                out.push(Document::new(format!("{}-{d:04}", topic.name), text.join(" ")));
            }
        }
        out
    }

    /// One question per fact with four statement options.
    pub fn qa_items(&self, topic: &str) -> Vec<QAItem> {
        let Some((ti, t)) = self.topics.iter().enumerate().find(|(_, t)| t.name == topic) else {
            return Vec::new();
        };
        t.facts
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let key = RngKey::new(self.config.seed, 1 << 20, Role::World, ((ti as u64) << 32) | i as u64);
                let mut rng = key.rng();
                let mut distractors: Vec<&String> = t.values[&f.relation].iter().filter(|v| **v != f.value).collect();
                distractors.shuffle(&mut rng);
                let mut values: Vec<&String> = distractors.into_iter().take(3).collect();
                let gold = rng.random_range(0..=values.len());
                values.insert(gold, &f.value);
                QAItem {
                    id: format!("{}-q{i:04}", t.name),
                    subject: t.name.clone(),
                    question: format!("What does {} {}?", capitalize(&f.entity), f.relation),
                    options: values.iter().map(|v| f.statement(v)).collect(),
                    gold_index: gold,
                }
            })
            .collect()
    }

    /// Write a training corpus, a held-out corpus and QA items under `dir`.
    /// Documents come from `corpus_topics` (all when empty), QA from `qa_topics`.
    pub fn write_fixture(&self, dir: &Path, corpus_topics: &[&str], qa_topics: &[&str]) -> Result<DataPaths> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let train = dir.join("train.txt");
        let heldout = dir.join("heldout.txt");
        let qa = dir.join("qa.jsonl");
        write_documents(&train, &self.documents(corpus_topics, 1))?;
        write_documents(&heldout, &self.documents(corpus_topics, 2))?;
        let items: Vec<QAItem> = qa_topics.iter().flat_map(|t| self.qa_items(t)).collect();
        write_qa(&qa, &items)?;
        Ok(DataPaths {
            train,
            prompts: None,
            heldout,
            qa,
            templates: None,
        })
    }

    /// Question texts per topic, for topic matching.
    pub fn exemplar_questions(&self, per_topic: usize) -> BTreeMap<String, Vec<String>> {
        self.topics
            .iter()
            .map(|t| {
                let qs = self.qa_items(&t.name).into_iter().take(per_topic).map(|q| q.question).collect();
                (t.name.clone(), qs)
            })
            .collect()
    }
}
