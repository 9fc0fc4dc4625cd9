//! Document store and Okapi BM25 inverted index.
//!
//! One index serves both the rollout environment (shallow top-k per search
//! turn) and candidate verification (deep top-k). The index is immutable
//! after build; searches need no synchronization.
//!
//! Indexing tokenizes title and body concatenated with the same rules as
//! answer normalization except that articles are kept — they can carry
//! signal in titles. Scores use the nonnegative IDF form
//! `ln(1 + (N - df + 0.5) / (df + 0.5))`, so any document containing at
//! least one query term scores strictly above zero and zero-score
//! documents are simply absent from results.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::IndexError;

const MAGIC: &[u8; 8] = b"HOPBM25\x00";
const FORMAT_VERSION: u32 = 1;
const FLAG_TITLES_INDEXED: u32 = 1;

/// One retrievable text unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    #[serde(rename = "text")]
    pub body: String,
}

/// BM25 free parameters. Conventional defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Posting {
    doc: u32,
    tf: u32,
}

/// Immutable inverted index over a corpus.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    params: Bm25Params,
    docs: Vec<Document>,
    doc_lengths: Vec<u32>,
    avg_doc_len: f64,
    postings: BTreeMap<String, Vec<Posting>>,
    id_to_pos: HashMap<String, u32>,
    /// Exact-duplicate bodies dropped during build.
    dedup_dropped: u32,
    /// Hash of the run config that built this index, hex-encoded.
    config_hash: String,
    seed: u64,
}

/// Ranked search output. Scores are nonincreasing, ids unique, length <= k.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub query: String,
    pub ranked: Vec<ScoredDoc>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDoc {
    pub id: String,
    pub score: f64,
}

impl RetrievalResult {
    pub fn doc_ids(&self) -> Vec<String> {
        self.ranked.iter().map(|d| d.id.clone()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.ranked.is_empty()
    }
}

/// Index-side tokenizer: answer normalization minus article removal.
pub fn index_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .map(|c| if c.is_ascii_punctuation() { ' ' } else { c })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

impl Bm25Index {
    /// Build an index over `corpus`. Duplicate ids and empty bodies are
    /// build errors; documents whose body exactly duplicates an earlier
    /// one are dropped and counted in [`Bm25Index::dedup_dropped`].
    pub fn build(corpus: Vec<Document>, params: Bm25Params) -> Result<Self, IndexError> {
        Self::build_tagged(corpus, params, "", 0)
    }

    /// [`Bm25Index::build`] with provenance fields for the persisted file.
    pub fn build_tagged(
        corpus: Vec<Document>,
        params: Bm25Params,
        config_hash: &str,
        seed: u64,
    ) -> Result<Self, IndexError> {
        if corpus.is_empty() {
            return Err(IndexError::EmptyCorpus);
        }
        if !(params.k1 > 0.0) || !(0.0..=1.0).contains(&params.b) {
            return Err(IndexError::BadParams {
                k1: params.k1,
                b: params.b,
            });
        }

        let mut docs: Vec<Document> = Vec::with_capacity(corpus.len());
        let mut id_to_pos: HashMap<String, u32> = HashMap::with_capacity(corpus.len());
        let mut seen_bodies: std::collections::HashSet<String> = HashSet::default();
        let mut dedup_dropped = 0u32;

        for doc in corpus {
            if doc.body.trim().is_empty() {
                return Err(IndexError::EmptyBody(doc.id));
            }
            if id_to_pos.contains_key(&doc.id) {
                return Err(IndexError::DuplicateDocId(doc.id));
            }
            if !seen_bodies.insert(doc.body.clone()) {
                dedup_dropped += 1;
                continue;
            }
            id_to_pos.insert(doc.id.clone(), docs.len() as u32);
            docs.push(doc);
        }

        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(docs.len());
        for (pos, doc) in docs.iter().enumerate() {
            let tokens = index_tokens(&format!("{} {}", doc.title, doc.body));
            doc_lengths.push(tokens.len() as u32);
            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            for tok in tokens {
                *counts.entry(tok).or_insert(0) += 1;
            }
            for (term, tf) in counts {
                postings.entry(term).or_default().push(Posting {
                    doc: pos as u32,
                    tf,
                });
            }
        }

        let avg_doc_len =
            doc_lengths.iter().map(|&l| l as f64).sum::<f64>() / doc_lengths.len() as f64;

        Ok(Self {
            params,
            docs,
            doc_lengths,
            avg_doc_len,
            postings,
            id_to_pos,
            dedup_dropped,
            config_hash: config_hash.to_owned(),
            seed,
        })
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn dedup_dropped(&self) -> u32 {
        self.dedup_dropped
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn doc(&self, id: &str) -> Option<&Document> {
        self.id_to_pos.get(id).map(|&p| &self.docs[p as usize])
    }

    /// Document frequency of a term under index tokenization.
    pub fn doc_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.docs.len() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Top-k documents by BM25 score, ties broken by ascending doc id.
    /// Documents matching no query term are excluded; a query that
    /// normalizes to zero tokens yields an empty result.
    pub fn search(&self, query: &str, k: usize) -> RetrievalResult {
        assert!(k >= 1, "retrieval depth k must be >= 1");
        let terms = index_tokens(query);
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for term in &terms {
            if let Some(list) = self.postings.get(term) {
                let idf = self.idf(list.len());
                for p in list {
                    let Bm25Params { k1, b } = self.params;
                    let dl = self.doc_lengths[p.doc as usize] as f64;
                    let tf = p.tf as f64;
                    let contrib =
                        idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / self.avg_doc_len));
                    *acc.entry(p.doc).or_insert(0.0) += contrib;
                }
            }
        }
        let mut scored: Vec<(u32, f64)> = acc.into_iter().filter(|&(_, s)| s > 0.0).collect();
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("BM25 scores are finite")
                .then_with(|| self.docs[a.0 as usize].id.cmp(&self.docs[b.0 as usize].id))
        });
        scored.truncate(k);
        RetrievalResult {
            query: query.to_owned(),
            ranked: scored
                .into_iter()
                .map(|(pos, score)| ScoredDoc {
                    id: self.docs[pos as usize].id.clone(),
                    score,
                })
                .collect(),
        }
    }

    // ---- persistence -------------------------------------------------

    /// Write the index as a single versioned binary file. Writes are
    /// canonical (terms sorted, postings by position), so identical
    /// inputs produce byte-identical files.
    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        write_u32(&mut w, FORMAT_VERSION)?;
        write_u32(&mut w, FLAG_TITLES_INDEXED)?;
        write_f64(&mut w, self.params.k1)?;
        write_f64(&mut w, self.params.b)?;
        let mut hash_bytes = [0u8; 32];
        let raw = self.config_hash.as_bytes();
        hash_bytes[..raw.len().min(32)].copy_from_slice(&raw[..raw.len().min(32)]);
        w.write_all(&hash_bytes)?;
        write_u64(&mut w, self.seed)?;
        write_u32(&mut w, self.dedup_dropped)?;
        write_u32(&mut w, self.docs.len() as u32)?;
        for (doc, len) in self.docs.iter().zip(&self.doc_lengths) {
            write_str(&mut w, &doc.id)?;
            write_str(&mut w, &doc.title)?;
            write_str(&mut w, &doc.body)?;
            write_u32(&mut w, *len)?;
        }
        write_u32(&mut w, self.postings.len() as u32)?;
        for (term, list) in &self.postings {
            write_str(&mut w, term)?;
            write_u32(&mut w, list.len() as u32)?;
            for p in list {
                write_u32(&mut w, p.doc)?;
                write_u32(&mut w, p.tf)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Load an index file, rejecting unknown magic or version.
    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(IndexError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(IndexError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let _flags = read_u32(&mut r)?;
        let k1 = read_f64(&mut r)?;
        let b = read_f64(&mut r)?;
        let mut hash_bytes = [0u8; 32];
        r.read_exact(&mut hash_bytes)?;
        let config_hash = String::from_utf8_lossy(&hash_bytes)
            .trim_end_matches('\0')
            .to_owned();
        let seed = read_u64(&mut r)?;
        let dedup_dropped = read_u32(&mut r)?;
        let doc_count = read_u32(&mut r)? as usize;
        if doc_count == 0 {
            return Err(IndexError::Corrupt("zero documents".into()));
        }
        let mut docs = Vec::with_capacity(doc_count);
        let mut doc_lengths = Vec::with_capacity(doc_count);
        let mut id_to_pos = HashMap::with_capacity(doc_count);
        for pos in 0..doc_count {
            let id = read_str(&mut r)?;
            let title = read_str(&mut r)?;
            let body = read_str(&mut r)?;
            doc_lengths.push(read_u32(&mut r)?);
            id_to_pos.insert(id.clone(), pos as u32);
            docs.push(Document { id, title, body });
        }
        let term_count = read_u32(&mut r)? as usize;
        let mut postings = BTreeMap::new();
        for _ in 0..term_count {
            let term = read_str(&mut r)?;
            let n = read_u32(&mut r)? as usize;
            let mut list = Vec::with_capacity(n);
            for _ in 0..n {
                let doc = read_u32(&mut r)?;
                let tf = read_u32(&mut r)?;
                if doc as usize >= doc_count {
                    return Err(IndexError::Corrupt(format!(
                        "posting references document {doc} of {doc_count}"
                    )));
                }
                list.push(Posting { doc, tf });
            }
            postings.insert(term, list);
        }
        let avg_doc_len =
            doc_lengths.iter().map(|&l| l as f64).sum::<f64>() / doc_lengths.len() as f64;
        Ok(Self {
            params: Bm25Params { k1, b },
            docs,
            doc_lengths,
            avg_doc_len,
            postings,
            id_to_pos,
            dedup_dropped,
            config_hash,
            seed,
        })
    }
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_f64<W: Write>(w: &mut W, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, IndexError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, IndexError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, IndexError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn read_str<R: Read>(r: &mut R) -> Result<String, IndexError> {
    let len = read_u32(r)? as usize;
    if len > 64 << 20 {
        return Err(IndexError::Corrupt(format!("string length {len} too large")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| IndexError::Corrupt(e.to_string()))
}

/// Exhaustive reference scorer used by tests and the acceptance suite:
/// computes the BM25 score of every document independently and sorts.
/// Kept free of the inverted-index machinery on purpose.
pub fn brute_force_search(
    corpus: &[Document],
    params: Bm25Params,
    query: &str,
    k: usize,
) -> Vec<ScoredDoc> {
    let terms = index_tokens(query);
    let n = corpus.len() as f64;
    let doc_tokens: Vec<Vec<String>> = corpus
        .iter()
        .map(|d| index_tokens(&format!("{} {}", d.title, d.body)))
        .collect();
    let avg: f64 = doc_tokens.iter().map(|t| t.len() as f64).sum::<f64>() / n;
    let df = |term: &str| -> f64 {
        doc_tokens
            .iter()
            .filter(|toks| toks.iter().any(|t| t == term))
            .count() as f64
    };
    let mut scored: Vec<ScoredDoc> = corpus
        .iter()
        .enumerate()
        .filter_map(|(pos, doc)| {
            let toks = &doc_tokens[pos];
            let dl = toks.len() as f64;
            let mut score = 0.0;
            for term in &terms {
                let tf = toks.iter().filter(|t| *t == term).count() as f64;
                if tf > 0.0 {
                    let d = df(term);
                    let idf = (1.0 + (n - d + 0.5) / (d + 0.5)).ln();
                    score +=
                        idf * tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * dl / avg));
                }
            }
            (score > 0.0).then(|| ScoredDoc {
                id: doc.id.clone(),
                score,
            })
        })
        .collect();
    scored.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then_with(|| a.id.cmp(&b.id))
    });
    scored.truncate(k);
    scored
}
