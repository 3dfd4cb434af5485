//! Generated retrieval data with known structure, for smoke runs and
//! end-to-end checks.
//!
//! Concepts are grouped into families. A query names its family and its
//! concept; the matching document names the same family and concept, mostly
//! through document-side synonyms, surrounded by filler. Telling concepts
//! of one family apart is the hard part, which is what mined negatives are for.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::pairs::TextPair;
use crate::data::prefix::{apply_prefix, TaskKind};
use crate::data::tokenizer::split_words;
use crate::error::{Error, Result};
use crate::eval::{IdText, ProbeTask, Qrel, RetrievalTask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub families: usize,
    pub concepts_per_family: usize,
    pub fillers: usize,
    pub sources: Vec<String>,
    pub train_pairs: usize,
    pub eval_queries: usize,
    /// Probability that a query uses the concept's shared keyword rather
    /// than its query-only synonym.
    pub shared_keyword_rate: f64,
    pub query_fillers: (usize, usize),
    pub doc_fillers: (usize, usize),
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            families: 40,
            concepts_per_family: 10,
            fillers: 300,
            sources: vec!["forum".into(), "titles".into()],
            train_pairs: 5000,
            eval_queries: 200,
            shared_keyword_rate: 0.5,
            query_fillers: (1, 3),
            doc_fillers: (8, 16),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Concept {
    family: usize,
    query_word: String,
    doc_words: [String; 2],
    shared_word: String,
}

/// A generated vocabulary of families, concepts and filler words.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    config: SyntheticConfig,
    family_words: Vec<[String; 2]>,
    concepts: Vec<Concept>,
    fillers: Vec<String>,
    /// Per-source filler subsets, so sources differ in style.
    source_fillers: Vec<Vec<String>>,
}

/// Training pairs plus a held-out retrieval task over the same concepts.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Vec<TextPair>,
    /// The training document collection, indexed by concept.
    pub documents: Vec<String>,
    pub eval: RetrievalTask,
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// The `i`-th pseudo-word: three consonant-vowel syllables.
fn pseudo_word(i: usize) -> String {
    let n = CONSONANTS.len() * VOWELS.len();
    let mut out = String::with_capacity(6);
    let mut x = i;
    for _ in 0..3 {
        let s = x % n;
        x /= n;
        out.push(CONSONANTS[s / VOWELS.len()] as char);
        out.push(VOWELS[s % VOWELS.len()] as char);
    }
    out
}

impl SyntheticWorld {
    pub fn new(config: SyntheticConfig, seed: u64) -> Result<Self> {
        if config.families == 0 || config.concepts_per_family == 0 || config.fillers == 0 {
            return Err(Error::InvalidArgument(
                "synthetic world needs families, concepts and fillers".into(),
            ));
        }
        if config.sources.is_empty() {
            return Err(Error::InvalidArgument(
                "synthetic world needs at least one source".into(),
            ));
        }
        if !(0.0..=1.0).contains(&config.shared_keyword_rate) {
            return Err(Error::InvalidArgument(
                "shared_keyword_rate must lie in [0, 1]".into(),
            ));
        }
        let (ql, qh) = config.query_fillers;
        let (dl, dh) = config.doc_fillers;
        if ql > qh || dl > dh {
            return Err(Error::InvalidArgument(
                "filler ranges must be (min, max)".into(),
            ));
        }
        let total =
            2 * config.families + 4 * config.families * config.concepts_per_family + config.fillers;
        let mut ids: Vec<usize> = (0..CONSONANTS.len().pow(3) * VOWELS.len().pow(3)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ids.shuffle(&mut rng);
        let mut words = ids.into_iter().take(total).map(pseudo_word);
        let mut next = || words.next().expect("word pool is large enough");

        let family_words: Vec<[String; 2]> =
            (0..config.families).map(|_| [next(), next()]).collect();
        let concepts = (0..config.families * config.concepts_per_family)
            .map(|c| Concept {
                family: c / config.concepts_per_family,
                query_word: next(),
                doc_words: [next(), next()],
                shared_word: next(),
            })
            .collect();
        let fillers: Vec<String> = (0..config.fillers).map(|_| next()).collect();
        let source_fillers = (0..config.sources.len())
            .map(|s| {
                let mut f = fillers.clone();
                f.shuffle(&mut ChaCha8Rng::seed_from_u64(
                    seed ^ ((s as u64 + 1) * 0x9e37_79b9),
                ));
                f.truncate((fillers.len() * 2 / 3).max(1));
                f
            })
            .collect();
        Ok(Self {
            config,
            family_words,
            concepts,
            fillers,
            source_fillers,
        })
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.config
    }

    pub fn num_concepts(&self) -> usize {
        self.concepts.len()
    }

    /// Every word the generator can emit.
    pub fn vocabulary(&self) -> Vec<String> {
        let mut v: Vec<String> = self.family_words.iter().flatten().cloned().collect();
        for c in &self.concepts {
            v.push(c.query_word.clone());
            v.extend(c.doc_words.iter().cloned());
            v.push(c.shared_word.clone());
        }
        v.extend(self.fillers.iter().cloned());
        v
    }

    fn fillers_for(&self, source: usize) -> &[String] {
        &self.source_fillers[source % self.source_fillers.len()]
    }

    fn take_fillers<R: Rng>(
        &self,
        source: usize,
        (lo, hi): (usize, usize),
        rng: &mut R,
    ) -> Vec<String> {
        let pool = self.fillers_for(source);
        let n = rng.gen_range(lo..=hi);
        (0..n)
            .map(|_| pool[rng.gen_range(0..pool.len())].clone())
            .collect()
    }

    pub fn query_text<R: Rng>(&self, concept: usize, source: usize, rng: &mut R) -> String {
        let c = &self.concepts[concept];
        let mut words = self.take_fillers(source, self.config.query_fillers, rng);
        words.push(self.family_words[c.family][rng.gen_range(0..2)].clone());
        let key = if rng.gen_bool(self.config.shared_keyword_rate) {
            &c.shared_word
        } else {
            &c.query_word
        };
        words.push(key.clone());
        words.shuffle(rng);
        words.join(" ")
    }

    /// Content words of a document: both family words, both doc-side
    /// synonyms and the shared keyword.
    pub fn document_keywords(&self, concept: usize) -> Vec<String> {
        let c = &self.concepts[concept];
        let mut w: Vec<String> = self.family_words[c.family].to_vec();
        w.extend(c.doc_words.iter().cloned());
        w.push(c.shared_word.clone());
        w
    }

    pub fn document_text<R: Rng>(&self, concept: usize, source: usize, rng: &mut R) -> String {
        let mut words = self.take_fillers(source, self.config.doc_fillers, rng);
        words.extend(self.document_keywords(concept));
        words.shuffle(rng);
        words.join(" ")
    }

    /// Training pairs over a fixed document collection (one document per
    /// concept, each concept belonging to one source, several queries per
    /// document), plus a held-out task with fresh documents and queries.
    pub fn corpus(&self, seed: u64) -> SyntheticCorpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.concepts.len();
        let sources = self.config.sources.len();
        let documents: Vec<String> = (0..n)
            .map(|c| self.document_text(c, c % sources, &mut rng))
            .collect();
        let train = (0..self.config.train_pairs)
            .map(|_| {
                let c = rng.gen_range(0..n);
                TextPair::new(
                    self.query_text(c, c % sources, &mut rng),
                    documents[c].clone(),
                    self.config.sources[c % sources].clone(),
                )
            })
            .collect();

        let corpus: Vec<IdText> = (0..n)
            .map(|c| IdText {
                id: format!("d{c:04}"),
                text: self.document_text(c, c, &mut rng),
            })
            .collect();
        let mut picked: Vec<usize> = (0..n).collect();
        picked.shuffle(&mut rng);
        picked.truncate(self.config.eval_queries.min(n));
        let mut queries = Vec::new();
        let mut qrels = Vec::new();
        for (i, &c) in picked.iter().enumerate() {
            let id = format!("q{i:04}");
            queries.push(IdText {
                id: id.clone(),
                text: self.query_text(c, c, &mut rng),
            });
            qrels.push(Qrel {
                query_id: id,
                doc_id: format!("d{c:04}"),
                relevance: 1,
            });
        }
        let eval =
            RetrievalTask::new(queries, corpus, &qrels).expect("generated task is consistent");
        SyntheticCorpus {
            train,
            documents,
            eval,
        }
    }

    pub fn needle_probe(&self, documents: usize, seed: u64) -> NeedleProbe<'_> {
        NeedleProbe {
            world: self,
            documents: documents.clamp(1, self.concepts.len()),
            seed,
        }
    }
}

/// Long-document retrieval where each document is filler except for its
/// concept keywords, which sit in the final tenth of the text.
#[derive(Debug, Clone)]
pub struct NeedleProbe<'a> {
    world: &'a SyntheticWorld,
    documents: usize,
    seed: u64,
}

impl NeedleProbe<'_> {
    /// Tokens taken by `[CLS]`, `[SEP]` and the document prefix.
    pub fn reserved_tokens() -> usize {
        2 + split_words(&apply_prefix(TaskKind::SearchDocument, "")).len()
    }
}

impl ProbeTask for NeedleProbe<'_> {
    /// Documents whose model input is exactly `length` tokens.
    fn task_at(&self, length: usize) -> Result<RetrievalTask> {
        let w = self.world;
        let reserved = Self::reserved_tokens();
        let needle_len = w.document_keywords(0).len();
        if length < reserved + needle_len {
            return Err(Error::InvalidArgument(format!(
                "probe length {length} cannot hold a {needle_len}-token needle"
            )));
        }
        let body = length - reserved;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut concepts: Vec<usize> = (0..w.concepts.len()).collect();
        concepts.shuffle(&mut rng);
        concepts.truncate(self.documents);

        let mut corpus = Vec::new();
        let mut queries = Vec::new();
        let mut qrels = Vec::new();
        for (i, &c) in concepts.iter().enumerate() {
            let mut words: Vec<String> = (0..body - needle_len)
                .map(|_| w.fillers[rng.gen_range(0..w.fillers.len())].clone())
                .collect();
            // Needle start within the last 10% of the body, clamped so it fits.
            let start_lo = (9 * body).div_ceil(10).min(body - needle_len);
            let start = rng.gen_range(start_lo..=body - needle_len);
            let mut needle = w.document_keywords(c);
            needle.shuffle(&mut rng);
            words.splice(start..start, needle);
            let doc_id = format!("n{i:04}");
            corpus.push(IdText {
                id: doc_id.clone(),
                text: words.join(" "),
            });
            let qid = format!("q{i:04}");
            queries.push(IdText {
                id: qid.clone(),
                text: w.query_text(c, i, &mut rng),
            });
            qrels.push(Qrel {
                query_id: qid,
                doc_id,
                relevance: 1,
            });
        }
        RetrievalTask::new(queries, corpus, &qrels)
    }
}
