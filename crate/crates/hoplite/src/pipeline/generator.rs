//! Completion clients for the synthetic-question pipeline.
//!
//! [`GeneratorClient`] is the trait the pipeline talks to. Production uses
//! the HTTP client against a live endpoint; tests and desk-scale runs use
//! the scripted chain-world generator, which actually reads the documents
//! in the prompt and answers (or refuses) deterministically — identical
//! prompt, identical completion.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::chainworld::parse_chain_question;
use crate::config::GeneratorConfig;
use crate::error::GeneratorError;
use crate::index::index_tokens;
use crate::metrics::REFUSAL_SENTINEL;
use crate::policy::{parse_synthetic_question, synthetic_question};

#[derive(Debug, Clone, Serialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: usize,
}

pub trait GeneratorClient: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<String, GeneratorError>;
}

// ---------------------------------------------------------------------
// HTTP client
// ---------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct HttpRequestBody<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
    max_tokens: usize,
}

#[derive(Debug, Deserialize)]
struct HttpResponseBody {
    completion: Option<String>,
}

/// Blocking HTTP client with bounded retries and a request timeout.
/// Authentication comes from the environment variable named in config.
pub struct HttpGeneratorClient {
    endpoint: String,
    model: String,
    api_key: String,
    retries: u32,
    client: reqwest::blocking::Client,
}

impl HttpGeneratorClient {
    pub fn new(cfg: &GeneratorConfig) -> Result<Self, GeneratorError> {
        let api_key = std::env::var(&cfg.api_key_env)
            .map_err(|_| GeneratorError::MissingApiKey(cfg.api_key_env.clone()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_s))
            .build()
            .map_err(|e| GeneratorError::Exhausted {
                attempts: 0,
                last_error: e.to_string(),
            })?;
        Ok(Self {
            endpoint: cfg.endpoint.clone(),
            model: cfg.model.clone(),
            api_key,
            retries: cfg.retries,
            client,
        })
    }
}

impl GeneratorClient for HttpGeneratorClient {
    fn complete(&self, req: &CompletionRequest) -> Result<String, GeneratorError> {
        let attempts = self.retries.max(1);
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(200 * u64::from(attempt)));
            }
            let body = HttpRequestBody {
                model: &self.model,
                prompt: &req.prompt,
                temperature: req.temperature,
                max_tokens: req.max_tokens,
            };
            let response = self
                .client
                .post(&self.endpoint)
                .bearer_auth(&self.api_key)
                .json(&body)
                .send();
            match response {
                Ok(resp) if resp.status().is_success() => {
                    let parsed: Result<HttpResponseBody, _> = resp.json();
                    match parsed {
                        Ok(HttpResponseBody {
                            completion: Some(text),
                        }) => return Ok(text),
                        Ok(_) => return Err(GeneratorError::MalformedResponse),
                        Err(e) => last_error = e.to_string(),
                    }
                }
                Ok(resp) => {
                    last_error = format!("status {}", resp.status().as_u16());
                }
                Err(e) => last_error = e.to_string(),
            }
        }
        Err(GeneratorError::Exhausted {
            attempts,
            last_error,
        })
    }
}

// ---------------------------------------------------------------------
// Scripted chain-world generator
// ---------------------------------------------------------------------

/// Deterministic stand-in for the live generator. It parses the documents
/// embedded in the prompt, resolves relation chains, and
///
/// * for verification prompts answers the question from those documents
///   only, refusing with the mandated sentinel when the chain cannot be
///   resolved;
/// * for generation prompts reconstructs the document chain and emits the
///   alternative question phrasing over it.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScriptedChainworldGenerator;

impl GeneratorClient for ScriptedChainworldGenerator {
    fn complete(&self, req: &CompletionRequest) -> Result<String, GeneratorError> {
        let prompt = &req.prompt;
        if prompt.starts_with("You are a Question Answering system.") {
            let docs = section(prompt, "--- DOCUMENTS ---")
                .ok_or(GeneratorError::NoScriptedRule)?;
            let question =
                section(prompt, "--- QUESTION ---").ok_or(GeneratorError::NoScriptedRule)?;
            Ok(answer_from_documents(&question, &docs))
        } else if prompt.starts_with("You are an expert at creating high-quality questions") {
            let docs = section(prompt, "--- DOCUMENTS ---")
                .ok_or(GeneratorError::NoScriptedRule)?;
            generate_question_from_documents(&docs).ok_or(GeneratorError::NoScriptedRule)
        } else {
            Err(GeneratorError::NoScriptedRule)
        }
    }
}

/// Text between the last occurrence of `header` and the next `---`
/// delimiter (or end of prompt). The last occurrence is the target
/// section; in-context exemplars use different markers.
fn section(prompt: &str, header: &str) -> Option<String> {
    let start = prompt.rfind(header)? + header.len();
    let rest = &prompt[start..];
    let end = rest.find("\n---").unwrap_or(rest.len());
    Some(rest[..end].trim().to_owned())
}

/// All `(relation, subject, object)` facts stated in `text`.
fn extract_facts(text: &str) -> Vec<(String, String, String)> {
    let toks = index_tokens(text);
    let mut facts = Vec::new();
    for w in toks.windows(6) {
        if w[0] == "the" && w[2] == "of" && w[4] == "is" {
            facts.push((w[1].clone(), w[3].clone(), w[5].clone()));
        }
    }
    facts
}

fn answer_from_documents(question: &str, docs: &str) -> String {
    let parsed = parse_chain_question(question).or_else(|| parse_synthetic_question(question));
    let Some((relations, head)) = parsed else {
        return REFUSAL_SENTINEL.to_owned();
    };
    let facts = extract_facts(docs);
    let mut entity = head;
    for rel in &relations {
        let next = facts
            .iter()
            .find(|(r, s, _)| r == rel && s == &entity)
            .map(|(_, _, o)| o.clone());
        match next {
            Some(o) => entity = o,
            None => return REFUSAL_SENTINEL.to_owned(),
        }
    }
    entity
}

/// Rebuild the relation chain in the documents and phrase a new question
/// over it. Returns `None` when the documents do not form a chain.
fn generate_question_from_documents(docs: &str) -> Option<String> {
    let facts = extract_facts(docs);
    if facts.is_empty() {
        return None;
    }
    let objects: std::collections::HashSet<&str> =
        facts.iter().map(|(_, _, o)| o.as_str()).collect();
    let head = facts
        .iter()
        .map(|(_, s, _)| s.as_str())
        .find(|s| !objects.contains(s))?
        .to_owned();
    let mut relations: Vec<&str> = Vec::new();
    let mut entity = head.clone();
    for _ in 0..facts.len() {
        let Some((r, _, o)) = facts.iter().find(|(_, s, _)| s == &entity) else {
            break;
        };
        relations.push(r);
        entity = o.clone();
    }
    if relations.is_empty() {
        return None;
    }
    Some(synthetic_question(&relations, &head))
}

/// Fixed-completion fake for unit tests.
#[derive(Debug, Clone)]
pub struct StaticGenerator(pub String);

impl GeneratorClient for StaticGenerator {
    fn complete(&self, _req: &CompletionRequest) -> Result<String, GeneratorError> {
        Ok(self.0.clone())
    }
}

/// Always-failing client for exercising error paths.
#[derive(Debug, Clone, Copy, Default)]
pub struct FailingGenerator;

impl GeneratorClient for FailingGenerator {
    fn complete(&self, _req: &CompletionRequest) -> Result<String, GeneratorError> {
        Err(GeneratorError::Exhausted {
            attempts: 3,
            last_error: "scripted failure".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::Document;
    use crate::prompts::answer_verification_prompt;

    fn chain_docs() -> Vec<Document> {
        vec![
            Document {
                id: "f1".into(),
                title: "balko capital".into(),
                body: "The capital of balko is muntha.".into(),
            },
            Document {
                id: "f2".into(),
                title: "muntha mayor".into(),
                body: "The mayor of muntha is tarvel.".into(),
            },
        ]
    }

    fn req(prompt: String) -> CompletionRequest {
        CompletionRequest {
            prompt,
            temperature: 0.0,
            max_tokens: 32,
        }
    }

    #[test]
    fn verification_answers_from_gold_documents() {
        let prompt = answer_verification_prompt(
            &chain_docs(),
            "What is the mayor of the capital of balko?",
        );
        let answer = ScriptedChainworldGenerator.complete(&req(prompt)).unwrap();
        assert_eq!(answer, "tarvel");
    }

    #[test]
    fn verification_refuses_without_evidence() {
        let prompt = answer_verification_prompt(
            &chain_docs()[..1],
            "What is the mayor of the capital of balko?",
        );
        let answer = ScriptedChainworldGenerator.complete(&req(prompt)).unwrap();
        assert_eq!(answer, REFUSAL_SENTINEL);
    }

    #[test]
    fn verification_handles_synthetic_phrasing() {
        let question = synthetic_question(&["capital", "mayor"], "balko");
        let prompt = answer_verification_prompt(&chain_docs(), &question);
        let answer = ScriptedChainworldGenerator.complete(&req(prompt)).unwrap();
        assert_eq!(answer, "tarvel");
    }

    #[test]
    fn generation_emits_dissimilar_question_over_the_chain() {
        let prompt = crate::prompts::question_generation_prompt(
            &[],
            &chain_docs(),
            "What is the mayor of the capital of balko?",
        );
        let q = ScriptedChainworldGenerator.complete(&req(prompt)).unwrap();
        assert_eq!(q, synthetic_question(&["capital", "mayor"], "balko"));
    }

    #[test]
    fn identical_prompt_identical_completion() {
        let prompt = answer_verification_prompt(&chain_docs(), "What is the capital of balko?");
        let a = ScriptedChainworldGenerator.complete(&req(prompt.clone())).unwrap();
        let b = ScriptedChainworldGenerator.complete(&req(prompt)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_prompt_shape_is_an_error() {
        let err = ScriptedChainworldGenerator
            .complete(&req("tell me a story".into()))
            .unwrap_err();
        assert!(matches!(err, GeneratorError::NoScriptedRule));
    }
}
