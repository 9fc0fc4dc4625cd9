//! Deterministic relation-chain corpus for desk-scale training.
//!
//! A chain links entities `E0 -> E1 -> ... -> Eh` through named relations,
//! one fact document per edge ("The capital of balko is muntha."), plus
//! distractor documents with fresh entities. Questions nest the relations
//! ("What is the mayor of the capital of balko?"); the answer is the
//! terminal entity and the gold documents are exactly the chain edges.
//!
//! Entity names are random pronounceable strings so BM25 sees realistic
//! lexical structure without accidental collisions. The same seed always
//! yields the same corpus and instances.

use std::collections::BTreeSet;
use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Provenance, QaInstance};
use crate::error::EnvError;
use crate::index::{index_tokens, Document};

pub const MIN_HOPS: usize = 2;
pub const MAX_HOPS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainWorldSpec {
    /// Size of the entity pool chains are carved from.
    pub entity_count: usize,
    pub relation_vocab: Vec<String>,
    /// Unnormalized weights for hop counts 2, 3, 4.
    pub hop_weights: [f64; 3],
    pub distractor_count: usize,
    pub seed: u64,
}

impl Default for ChainWorldSpec {
    fn default() -> Self {
        Self {
            entity_count: 200,
            relation_vocab: [
                "capital", "mayor", "founder", "ruler", "anthem", "emblem", "patron", "motto",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            hop_weights: [1.0, 0.0, 0.0],
            distractor_count: 400,
            seed: 7,
        }
    }
}

impl ChainWorldSpec {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.relation_vocab.is_empty() {
            return Err(EnvError::BadSpec("relation vocabulary is empty".into()));
        }
        if self
            .relation_vocab
            .iter()
            .any(|r| r.split_whitespace().count() != 1)
        {
            return Err(EnvError::BadSpec(
                "relation names must be single words".into(),
            ));
        }
        if self.hop_weights.iter().any(|&w| w < 0.0) || self.hop_weights.iter().sum::<f64>() <= 0.0
        {
            return Err(EnvError::BadSpec(
                "hop weights must be nonnegative and not all zero".into(),
            ));
        }
        let min_hops = (0..3)
            .find(|&i| self.hop_weights[i] > 0.0)
            .map(|i| i + MIN_HOPS)
            .unwrap_or(MIN_HOPS);
        if self.entity_count < min_hops + 1 {
            return Err(EnvError::TooFewEntities {
                needed: min_hops + 1,
                hops: min_hops,
                have: self.entity_count,
            });
        }
        Ok(())
    }
}

/// Generate the corpus and its question set.
pub fn generate(spec: &ChainWorldSpec) -> Result<(Vec<Document>, Vec<QaInstance>), EnvError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut used_names: HashSet<String> = HashSet::new();
    let mut entities: Vec<String> = Vec::with_capacity(spec.entity_count);
    while entities.len() < spec.entity_count {
        let name = pronounceable(&mut rng);
        if used_names.insert(name.clone()) {
            entities.push(name);
        }
    }
    entities.shuffle(&mut rng);

    let mut docs: Vec<Document> = Vec::new();
    let mut instances: Vec<QaInstance> = Vec::new();
    let mut cursor = 0usize;
    let mut fact_num = 0usize;

    while cursor < entities.len() {
        let hops = sample_hops(&mut rng, &spec.hop_weights);
        if cursor + hops + 1 > entities.len() {
            break;
        }
        let chain = &entities[cursor..cursor + hops + 1];
        cursor += hops + 1;

        let relations: Vec<&str> = (0..hops)
            .map(|_| spec.relation_vocab[rng.gen_range(0..spec.relation_vocab.len())].as_str())
            .collect();
        let mut gold: BTreeSet<String> = BTreeSet::new();
        for (i, rel) in relations.iter().enumerate() {
            let id = format!("f{fact_num:05}");
            fact_num += 1;
            docs.push(Document {
                id: id.clone(),
                title: format!("{} {}", chain[i], rel),
                body: format!("The {} of {} is {}.", rel, chain[i], chain[i + 1]),
            });
            gold.insert(id);
        }
        let qid = format!("q{:05}", instances.len());
        instances.push(QaInstance {
            id: qid,
            question: chain_question(&relations, &chain[0]),
            gold_answer: chain[hops].clone(),
            gold_doc_ids: gold,
            hop_count: hops,
            provenance: Provenance::Original,
        });
    }

    if instances.is_empty() {
        return Err(EnvError::BadSpec(
            "entity pool too small to build a single chain".into(),
        ));
    }

    for i in 0..spec.distractor_count {
        let rel = &spec.relation_vocab[rng.gen_range(0..spec.relation_vocab.len())];
        let subject = loop {
            let name = pronounceable(&mut rng);
            if used_names.insert(name.clone()) {
                break name;
            }
        };
        let object = loop {
            let name = pronounceable(&mut rng);
            if used_names.insert(name.clone()) {
                break name;
            }
        };
        docs.push(Document {
            id: format!("x{i:05}"),
            title: format!("{subject} {rel}"),
            body: format!("The {rel} of {subject} is {object}."),
        });
    }

    Ok((docs, instances))
}

/// Nested question over `relations` applied innermost-first to `head`:
/// relations `[capital, mayor]` read "What is the mayor of the capital
/// of head?".
pub fn chain_question(relations: &[&str], head: &str) -> String {
    let mut phrase = head.to_string();
    for rel in relations {
        phrase = format!("the {rel} of {phrase}");
    }
    format!("What is {phrase}?")
}

/// Recover `(relations innermost-first, head entity)` from a chain
/// question. Returns `None` for foreign phrasings.
pub fn parse_chain_question(question: &str) -> Option<(Vec<String>, String)> {
    let q = question.trim().to_lowercase();
    let q = q.strip_prefix("what is ")?.trim_end_matches(['?', ' ']);
    let mut relations = Vec::new();
    let mut rest = q;
    loop {
        let inner = rest.strip_prefix("the ")?;
        let of_at = inner.find(" of ")?;
        relations.push(inner[..of_at].to_owned());
        rest = &inner[of_at + 4..];
        if !rest.starts_with("the ") {
            break;
        }
    }
    if rest.is_empty() || rest.contains(' ') {
        return None;
    }
    relations.reverse();
    Some((relations, rest.to_owned()))
}

/// Scan free text for a fact "the `relation` of `subject` is X" and return
/// X. Works on normalized tokens, so punctuation and doc framing are
/// transparent.
pub fn find_fact_object(text: &str, relation: &str, subject: &str) -> Option<String> {
    let toks = index_tokens(text);
    let rel = relation.to_lowercase();
    let subj = subject.to_lowercase();
    toks.windows(6).find_map(|w| {
        (w[0] == "the" && w[1] == rel && w[2] == "of" && w[3] == subj && w[4] == "is")
            .then(|| w[5].clone())
    })
}

fn sample_hops(rng: &mut ChaCha8Rng, weights: &[f64; 3]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut draw = rng.gen_range(0.0..total);
    for (i, &w) in weights.iter().enumerate() {
        if draw < w {
            return i + MIN_HOPS;
        }
        draw -= w;
    }
    MAX_HOPS
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

fn pronounceable(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.gen_range(2..=3);
    let mut name = String::with_capacity(syllables * 2 + 1);
    for _ in 0..syllables {
        name.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
        name.push(VOWELS[rng.gen_range(0..VOWELS.len())] as char);
    }
    // A trailing consonant cuts vowel-heavy lookalikes.
    name.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
    name
}
