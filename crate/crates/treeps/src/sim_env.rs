//! Synthetic multi-hop retrieval environment.
//!
//! The corpus is built from fact chains. Chain i is a sequence of entities
//! `e_0 -> e_1 -> ... -> e_h` linked by one relation per hop; each link
//! becomes one passage ("the <relation> of <head> is <tail>"), and the
//! question asks for the final entity given only `e_0` and the relation
//! names. Every chain also gets distractor passages that reuse a chain
//! entity under a different relation pointing at a decoy, so surface overlap
//! alone does not identify the gold chain. Distractors take the low passage
//! ids on purpose: scores tie at equal term overlap and ties resolve to the
//! lower id, which makes underspecified queries (a relation with no entity)
//! drown in distractors instead of luckily hitting gold facts.
//!
//! Retrieval is a pure function: score a passage by how many distinct
//! normalized query terms it shares, rank by (score desc, id asc), keep the
//! top K, then cut the concatenated text down to a combined token budget.

use crate::credit::normalize_answer;
use crate::engine::{Retriever, RetrieverError};
use crate::model::{Observation, Passage, PassageId, Question};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use thiserror::Error;

/// Relation vocabulary. The first `hop_count` symbols carry the chains;
/// later symbols are free for distractors and off-topic probe queries.
pub const RELATION_POOL: [&str; 7] = [
    "steward", "hallmark", "wellspring", "patron", "beacon", "harbinger", "signet",
];

const SYLLABLES: [&str; 18] = [
    "ka", "ro", "ve", "li", "mo", "ta", "su", "ne", "bi", "zu", "fa", "del", "or", "mi", "pa",
    "quo", "ren", "gal",
];

/// Shape of the synthetic task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub seed: u64,
    /// Number of fact chains; one question per chain.
    pub num_chains: usize,
    /// Facts per chain, between 1 and 4.
    pub hop_count: usize,
    /// Distractor passages per chain.
    pub distractors_per_chain: usize,
    /// Passages returned per query.
    pub passages_per_query: usize,
    /// Combined token budget across one observation's passages.
    pub passage_token_cap: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            seed: 42,
            num_chains: 6,
            hop_count: 2,
            distractors_per_chain: 3,
            passages_per_query: 3,
            passage_token_cap: 512,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(1..=4).contains(&self.hop_count) {
            return Err(EnvError::InvalidConfig(format!(
                "hop_count must be within 1..=4, got {}",
                self.hop_count
            )));
        }
        if self.num_chains == 0 || self.passages_per_query == 0 || self.passage_token_cap == 0 {
            return Err(EnvError::InvalidConfig(
                "num_chains, passages_per_query, and passage_token_cap must be positive".to_owned(),
            ));
        }
        Ok(())
    }
}

/// One underlying relation triple and the passage that states it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub chain: u32,
    pub hop: u32,
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub passage_id: PassageId,
}

/// A corpus passage with the entities it mentions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusPassage {
    pub id: PassageId,
    pub text: String,
    pub entities: Vec<String>,
}

/// The generated environment: passages to retrieve over, the fact chains
/// underlying them, and one question per chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub config: EnvConfig,
    pub passages: Vec<CorpusPassage>,
    pub facts: Vec<Fact>,
    pub questions: Vec<Question>,
}

fn fresh_entity(rng: &mut ChaCha8Rng, used: &mut BTreeSet<String>) -> String {
    loop {
        let name: String = (0..3)
            .map(|_| SYLLABLES[rng.gen_range(0..SYLLABLES.len())])
            .collect();
        if used.insert(name.clone()) {
            return name;
        }
    }
}

fn passage_text(relation: &str, head: &str, tail: &str) -> String {
    format!("the {relation} of {head} is {tail}")
}

fn question_text(relations: &[String], origin: &str) -> String {
    let mut text = String::from("what is");
    for relation in relations.iter().rev() {
        text.push_str(&format!(" the {relation} of"));
    }
    text.push_str(&format!(" {origin}?"));
    text
}

/// Builds the corpus and its questions deterministically from the config.
pub fn generate_corpus(config: &EnvConfig) -> Result<Corpus, EnvError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut used_names: BTreeSet<String> = RELATION_POOL.iter().map(|r| r.to_string()).collect();

    let hops = config.hop_count;
    let relations: Vec<String> = (0..hops).map(|j| RELATION_POOL[j].to_owned()).collect();
    let chain_entities: Vec<Vec<String>> = (0..config.num_chains)
        .map(|_| (0..=hops).map(|_| fresh_entity(&mut rng, &mut used_names)).collect())
        .collect();

    let mut passages = Vec::new();
    let mut facts = Vec::new();

    // distractors first: they claim the low ids and soak up tied scores
    for (chain, entities) in chain_entities.iter().enumerate() {
        for d in 0..config.distractors_per_chain {
            let position = d % hops;
            let relation = if hops >= 2 {
                RELATION_POOL[(position + 1) % hops]
            } else {
                RELATION_POOL[hops]
            };
            let decoy = fresh_entity(&mut rng, &mut used_names);
            let id = PassageId(passages.len() as u32);
            passages.push(CorpusPassage {
                id,
                text: passage_text(relation, &entities[position], &decoy),
                entities: vec![entities[position].clone(), decoy],
            });
            let _ = chain;
        }
    }

    for (chain, entities) in chain_entities.iter().enumerate() {
        for hop in 0..hops {
            let id = PassageId(passages.len() as u32);
            passages.push(CorpusPassage {
                id,
                text: passage_text(&relations[hop], &entities[hop], &entities[hop + 1]),
                entities: vec![entities[hop].clone(), entities[hop + 1].clone()],
            });
            facts.push(Fact {
                chain: chain as u32,
                hop: hop as u32,
                head: entities[hop].clone(),
                relation: relations[hop].clone(),
                tail: entities[hop + 1].clone(),
                passage_id: id,
            });
        }
    }

    let questions = chain_entities
        .iter()
        .enumerate()
        .map(|(chain, entities)| Question {
            id: chain.to_string(),
            text: question_text(&relations, &entities[0]),
            gold_answer: entities[hops].clone(),
        })
        .collect();

    let corpus = Corpus {
        config: config.clone(),
        passages,
        facts,
        questions,
    };
    corpus.self_check()?;
    Ok(corpus)
}

fn term_set(text: &str) -> BTreeSet<String> {
    normalize_answer(text)
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

/// Top-K lexical retrieval over the corpus. Pure: equal inputs always return
/// the same observation. Scores count distinct shared normalized terms; ties
/// rank the lower passage id first; the concatenated text of the winners is
/// truncated to `token_cap` whitespace tokens (a passage cut mid-way keeps
/// its leading tokens, later passages are dropped entirely).
pub fn retrieve(query: &str, corpus: &Corpus, k: usize, token_cap: usize) -> Observation {
    let query_terms = term_set(query);
    let mut scored: Vec<(usize, &CorpusPassage)> = corpus
        .passages
        .iter()
        .map(|p| {
            let terms = term_set(&p.text);
            (query_terms.intersection(&terms).count(), p)
        })
        .collect();
    scored.sort_by(|(sa, pa), (sb, pb)| sb.cmp(sa).then(pa.id.cmp(&pb.id)));

    let mut passages = Vec::new();
    let mut kept_tokens = 0usize;
    for (_, passage) in scored.into_iter().take(k) {
        let remaining = token_cap - kept_tokens;
        if remaining == 0 {
            break;
        }
        let tokens: Vec<&str> = passage.text.split_whitespace().collect();
        if tokens.len() <= remaining {
            kept_tokens += tokens.len();
            passages.push(Passage {
                id: passage.id,
                text: passage.text.clone(),
            });
        } else {
            kept_tokens += remaining;
            passages.push(Passage {
                id: passage.id,
                text: tokens[..remaining].join(" "),
            });
        }
    }
    Observation {
        passages,
        truncated_token_count: kept_tokens as u32,
    }
}

impl Corpus {
    /// Fails unless every question is solvable by walking its chain (each
    /// hop's canonical query retrieves the gold fact) while no single
    /// passage short-circuits a multi-hop question.
    pub fn self_check(&self) -> Result<(), EnvError> {
        let expected =
            self.config.num_chains * self.config.hop_count + self.config.num_chains * self.config.distractors_per_chain;
        if self.passages.len() != expected {
            return Err(EnvError::CorruptCorpus(format!(
                "expected {expected} passages, found {}",
                self.passages.len()
            )));
        }
        let k = self.config.passages_per_query;
        let cap = self.config.passage_token_cap;
        for question in &self.questions {
            let chain: Vec<&Fact> = self
                .facts
                .iter()
                .filter(|f| f.chain.to_string() == question.id)
                .collect();
            if chain.len() != self.config.hop_count {
                return Err(EnvError::CorruptCorpus(format!(
                    "question {} spans {} facts, expected {}",
                    question.id,
                    chain.len(),
                    self.config.hop_count
                )));
            }
            for fact in &chain {
                let query = format!("{} {}", fact.head, fact.relation);
                let observation = retrieve(&query, self, k, cap);
                if !observation.passage_ids().any(|id| id == fact.passage_id) {
                    return Err(EnvError::Unsolvable {
                        question_id: question.id.clone(),
                        hop: fact.hop,
                    });
                }
            }
            if self.config.hop_count >= 2 {
                let origin = &chain[0].head;
                let answer = &question.gold_answer;
                for passage in &self.passages {
                    let terms = term_set(&passage.text);
                    if terms.contains(&normalize_answer(origin)) && terms.contains(&normalize_answer(answer)) {
                        return Err(EnvError::CorruptCorpus(format!(
                            "passage {} reaches the answer of question {} in one step",
                            passage.id, question.id
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn question(&self, id: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }
}

/// What a policy may know about one question's chain: the entity sequence,
/// per-hop relations, the passage ids that state each hop, and spare
/// relations for off-topic probes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainTask {
    pub question: Question,
    pub entities: Vec<String>,
    pub relations: Vec<String>,
    pub gold_passage_ids: Vec<PassageId>,
    pub noise_relations: Vec<String>,
}

/// Chain lookups keyed by question id, shared by scripted and tabular
/// policies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskIndex {
    tasks: BTreeMap<String, ChainTask>,
    hop_count: usize,
}

impl TaskIndex {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let hop_count = corpus.config.hop_count;
        let noise_relations: Vec<String> = RELATION_POOL[hop_count..hop_count + 2]
            .iter()
            .map(|r| r.to_string())
            .collect();
        let mut tasks = BTreeMap::new();
        for question in &corpus.questions {
            let mut chain: Vec<&Fact> = corpus
                .facts
                .iter()
                .filter(|f| f.chain.to_string() == question.id)
                .collect();
            chain.sort_by_key(|f| f.hop);
            let mut entities = vec![chain[0].head.clone()];
            entities.extend(chain.iter().map(|f| f.tail.clone()));
            tasks.insert(
                question.id.clone(),
                ChainTask {
                    question: question.clone(),
                    entities,
                    relations: chain.iter().map(|f| f.relation.clone()).collect(),
                    gold_passage_ids: chain.iter().map(|f| f.passage_id).collect(),
                    noise_relations: noise_relations.clone(),
                },
            );
        }
        TaskIndex { tasks, hop_count }
    }

    pub fn get(&self, question_id: &str) -> Option<&ChainTask> {
        self.tasks.get(question_id)
    }

    pub fn hop_count(&self) -> usize {
        self.hop_count
    }

    /// Tasks in question-id order.
    pub fn iter(&self) -> impl Iterator<Item = &ChainTask> {
        self.tasks.values()
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

/// Engine-facing retriever over a shared corpus.
#[derive(Debug, Clone)]
pub struct SimRetriever {
    corpus: Arc<Corpus>,
    k: usize,
    token_cap: usize,
}

impl SimRetriever {
    pub fn new(corpus: Arc<Corpus>, k: usize, token_cap: usize) -> Self {
        SimRetriever { corpus, k, token_cap }
    }

    pub fn from_corpus(corpus: Arc<Corpus>) -> Self {
        let k = corpus.config.passages_per_query;
        let cap = corpus.config.passage_token_cap;
        SimRetriever::new(corpus, k, cap)
    }
}

impl Retriever for SimRetriever {
    fn retrieve(&self, query: &str) -> Result<Observation, RetrieverError> {
        Ok(retrieve(query, &self.corpus, self.k, self.token_cap))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("corpus failed its audit: {0}")]
    CorruptCorpus(String),
    #[error("question {question_id} cannot retrieve its hop {hop} fact")]
    Unsolvable { question_id: String, hop: u32 },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_per_seed() {
        let config = EnvConfig::default();
        let a = generate_corpus(&config).unwrap();
        let b = generate_corpus(&config).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let other = generate_corpus(&EnvConfig {
            seed: 43,
            ..config
        })
        .unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn corpus_has_the_documented_shape() {
        let config = EnvConfig {
            num_chains: 3,
            hop_count: 2,
            distractors_per_chain: 3,
            ..EnvConfig::default()
        };
        let corpus = generate_corpus(&config).unwrap();
        assert_eq!(corpus.passages.len(), 3 * 2 + 3 * 3);
        assert_eq!(corpus.questions.len(), 3);
        assert_eq!(corpus.facts.len(), 6);
        corpus.self_check().unwrap();
    }

    #[test]
    fn every_hop_count_generates_solvable_corpora() {
        for hops in 1..=4 {
            let config = EnvConfig {
                hop_count: hops,
                num_chains: 4,
                ..EnvConfig::default()
            };
            generate_corpus(&config).unwrap().self_check().unwrap();
        }
    }

    #[test]
    fn retrieval_ranks_own_text_first() {
        let corpus = generate_corpus(&EnvConfig::default()).unwrap();
        for passage in corpus.passages.iter().take(5) {
            let observation = retrieve(&passage.text, &corpus, 3, 512);
            assert_eq!(observation.passages[0].id, passage.id);
        }
    }

    #[test]
    fn retrieval_returns_everything_when_k_covers_the_corpus() {
        let config = EnvConfig {
            num_chains: 2,
            distractors_per_chain: 1,
            ..EnvConfig::default()
        };
        let corpus = generate_corpus(&config).unwrap();
        let total = corpus.passages.len();
        let observation = retrieve("anything at all", &corpus, total + 5, 10_000);
        assert_eq!(observation.passages.len(), total);
    }

    #[test]
    fn score_ties_resolve_to_lower_ids() {
        let corpus = generate_corpus(&EnvConfig::default()).unwrap();
        // a query matching nothing scores every passage 0: ranked purely by id
        let observation = retrieve("zzz yyy xxx", &corpus, 3, 512);
        let ids: Vec<u32> = observation.passages.iter().map(|p| p.id.0).collect();
        assert_eq!(ids, vec![0, 1, 2]);
    }

    #[test]
    fn token_cap_truncates_the_tail() {
        let corpus = generate_corpus(&EnvConfig::default()).unwrap();
        let passage = &corpus.passages[0];
        let full = retrieve(&passage.text, &corpus, 3, 512);
        assert!(full.truncated_token_count > 8);
        let capped = retrieve(&passage.text, &corpus, 3, 8);
        assert_eq!(capped.truncated_token_count, 8);
        let kept: usize = capped
            .passages
            .iter()
            .map(|p| p.text.split_whitespace().count())
            .sum();
        assert_eq!(kept, 8);
        // the six-token first passage survives intact, the second is cut to
        // the two tokens left under the cap
        assert_eq!(capped.passages[0].text, passage.text);
        assert_eq!(capped.passages[1].text.split_whitespace().count(), 2);
    }

    #[test]
    fn chain_queries_hit_gold_facts_and_stray_queries_do_not() {
        let config = EnvConfig {
            num_chains: 4,
            ..EnvConfig::default()
        };
        let corpus = generate_corpus(&config).unwrap();
        let tasks = TaskIndex::from_corpus(&corpus);
        let task = tasks.get("2").unwrap();
        // full chain walk: each canonical query retrieves its gold fact
        for hop in 0..2 {
            let query = format!("{} {}", task.entities[hop], task.relations[hop]);
            let observation = retrieve(&query, &corpus, 3, 512);
            assert!(observation.passage_ids().any(|id| id == task.gold_passage_ids[hop]));
        }
        // an underspecified hop-1 query (relation without the intermediate
        // entity) is absorbed by distractors
        let observation = retrieve(&task.relations[1], &corpus, 3, 512);
        assert!(!observation
            .passage_ids()
            .any(|id| task.gold_passage_ids.contains(&id)));
    }

    #[test]
    fn task_index_exposes_chain_structure() {
        let corpus = generate_corpus(&EnvConfig::default()).unwrap();
        let tasks = TaskIndex::from_corpus(&corpus);
        assert_eq!(tasks.hop_count(), 2);
        let task = tasks.get("0").unwrap();
        assert_eq!(task.entities.len(), 3);
        assert_eq!(task.relations.len(), 2);
        assert_eq!(task.question.gold_answer, task.entities[2]);
        assert_eq!(task.noise_relations.len(), 2);
        assert!(tasks.get("99").is_none());
    }

    #[test]
    fn corpus_serialization_round_trips() {
        let corpus = generate_corpus(&EnvConfig::default()).unwrap();
        let json = serde_json::to_string(&corpus).unwrap();
        let back: Corpus = serde_json::from_str(&json).unwrap();
        assert_eq!(back, corpus);
    }
}
