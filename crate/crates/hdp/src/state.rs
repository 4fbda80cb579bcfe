//! Sampler state: topic indicators and every sufficient statistic, with
//! validated bookkeeping.
//!
//! Topics are 1-based to match the flag-topic convention (`K*` is both the
//! truncation level and the flag topic). Dense topic-indexed vectors have
//! length `k_star + 1` with slot 0 unused.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::randdist::{derive_stream, DistError, StreamKey, UnitKind};
use crate::sampler::{rebuild_phi_columns, sample_phi_row, sample_psi, SparsePhiRow};

#[derive(Debug, Error)]
pub enum StateError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("inconclusive estimate: {0}")]
    Inconclusive(String),
    #[error("cannot initialize from an empty corpus")]
    EmptyCorpus,
    #[error("topic index {topic} out of range 1..={k_star}")]
    TopicOutOfRange { topic: u32, k_star: u32 },
    #[error("no topic has positive probability for word type {word}; state is unrecoverable")]
    DeadWordType { word: u32 },
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// Model and run configuration.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HdpConfig {
    /// Document DP concentration.
    pub alpha: f64,
    /// Symmetric topic-word prior.
    pub beta: f64,
    /// Concentration of the global topic distribution.
    pub gamma: f64,
    /// Truncation level; also the index of the flag topic.
    pub k_star: u32,
    pub iterations: u64,
    pub threads: usize,
    pub seed: u64,
}

impl Default for HdpConfig {
    fn default() -> Self {
        Self { alpha: 0.1, beta: 0.01, gamma: 1.0, k_star: 1000, iterations: 100, threads: 1, seed: 1 }
    }
}

impl HdpConfig {
    pub fn validate(&self) -> Result<(), StateError> {
        let positive = [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(StateError::InvalidConfig(format!("{name} must be positive, got {value}")));
            }
        }
        if self.k_star < 1 {
            return Err(StateError::InvalidConfig("k_star must be at least 1".into()));
        }
        if self.iterations < 1 {
            return Err(StateError::InvalidConfig("iterations must be at least 1".into()));
        }
        if self.threads < 1 {
            return Err(StateError::InvalidConfig("threads must be at least 1".into()));
        }
        Ok(())
    }
}

/// Small sorted sparse vector of per-topic counts for one document.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SparseCounts {
    entries: Vec<(u32, u32)>,
}

impl SparseCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, topic: u32) -> u32 {
        match self.entries.binary_search_by_key(&topic, |&(k, _)| k) {
            Ok(pos) => self.entries[pos].1,
            Err(_) => 0,
        }
    }

    pub fn increment(&mut self, topic: u32) {
        match self.entries.binary_search_by_key(&topic, |&(k, _)| k) {
            Ok(pos) => self.entries[pos].1 += 1,
            Err(pos) => self.entries.insert(pos, (topic, 1)),
        }
    }

    /// Removes one count; the entry must exist.
    pub fn decrement(&mut self, topic: u32) {
        let pos = self
            .entries
            .binary_search_by_key(&topic, |&(k, _)| k)
            .expect("decrement of a topic with zero count");
        self.entries[pos].1 -= 1;
        if self.entries[pos].1 == 0 {
            self.entries.remove(pos);
        }
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(u32, u32)] {
        &self.entries
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|&(_, c)| c as u64).sum()
    }
}

/// Topic-word sufficient statistic: per-topic sparse counts over word types
/// plus per-topic totals. Rows iterate in ascending word-type order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicWordCounts {
    rows: Vec<BTreeMap<u32, u32>>,
    totals: Vec<u64>,
}

impl TopicWordCounts {
    pub fn new(k_star: u32) -> Self {
        Self {
            rows: vec![BTreeMap::new(); k_star as usize + 1],
            totals: vec![0; k_star as usize + 1],
        }
    }

    pub fn k_star(&self) -> u32 {
        (self.rows.len() - 1) as u32
    }

    pub fn increment(&mut self, topic: u32, word: u32) {
        *self.rows[topic as usize].entry(word).or_insert(0) += 1;
        self.totals[topic as usize] += 1;
    }

    pub fn decrement(&mut self, topic: u32, word: u32) {
        let row = &mut self.rows[topic as usize];
        let count = row.get_mut(&word).expect("decrement of a zero topic-word count");
        *count -= 1;
        if *count == 0 {
            row.remove(&word);
        }
        self.totals[topic as usize] -= 1;
    }

    pub fn row(&self, topic: u32) -> &BTreeMap<u32, u32> {
        &self.rows[topic as usize]
    }

    pub fn total(&self, topic: u32) -> u64 {
        self.totals[topic as usize]
    }

    pub fn grand_total(&self) -> u64 {
        self.totals.iter().sum()
    }
}

/// Topic indicators and document-topic counts for one document, owned
/// exclusively by one worker during the z sweep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocState {
    pub z: Vec<u32>,
    pub m: SparseCounts,
}

/// Full sampler state.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub docs: Vec<DocState>,
    pub n: TopicWordCounts,
    pub phi: Vec<SparsePhiRow>,
    /// By-word-type view of `phi`: for each word type, (topic, probability)
    /// pairs in ascending topic order. Rebuilt after every Phi step.
    pub phi_cols: Vec<Vec<(u32, f64)>>,
    pub psi: Vec<f64>,
    pub l: Vec<u64>,
    /// Document-count-by-occupancy: row k holds sorted (p, number of
    /// documents with exactly p tokens in topic k) pairs.
    pub dtable: Vec<Vec<(u32, u32)>>,
}

/// Instrumentation of the z step's doubly sparse inner loop.
#[derive(Debug, Clone, Copy, Default)]
pub struct WorkCounters {
    pub tokens: u64,
    pub inner_steps: u64,
    /// Max over tokens of steps / min(doc-topic nnz, topic-word nnz).
    pub max_work_ratio: f64,
}

impl WorkCounters {
    pub fn record_token(&mut self, steps: u64, bound: u64) {
        self.tokens += 1;
        self.inner_steps += steps;
        let ratio = if bound == 0 { 0.0 } else { steps as f64 / bound as f64 };
        if ratio > self.max_work_ratio {
            self.max_work_ratio = ratio;
        }
    }

    pub fn merge(&mut self, other: &WorkCounters) {
        self.tokens += other.tokens;
        self.inner_steps += other.inner_steps;
        self.max_work_ratio = self.max_work_ratio.max(other.max_work_ratio);
    }
}

/// Exact (m, n) implied by the topic indicators.
pub fn rebuild_counts(
    z: &[Vec<u32>],
    corpus: &Corpus,
    k_star: u32,
) -> Result<(Vec<SparseCounts>, TopicWordCounts), StateError> {
    assert_eq!(z.len(), corpus.num_docs(), "indicators not aligned with corpus");
    let mut m = Vec::with_capacity(z.len());
    let mut n = TopicWordCounts::new(k_star);
    for (doc_z, doc) in z.iter().zip(corpus.docs()) {
        assert_eq!(doc_z.len(), doc.len(), "indicators not aligned with document");
        let mut counts = SparseCounts::new();
        for (&topic, &word) in doc_z.iter().zip(doc) {
            if topic < 1 || topic > k_star {
                return Err(StateError::TopicOutOfRange { topic, k_star });
            }
            counts.increment(topic);
            n.increment(topic, word);
        }
        m.push(counts);
    }
    Ok((m, n))
}

/// dtable(k, p) = number of documents with exactly p tokens in topic k, p >= 1.
pub fn rebuild_dtable<'a, I>(m: I, k_star: u32) -> Vec<Vec<(u32, u32)>>
where
    I: IntoIterator<Item = &'a SparseCounts>,
{
    let mut rows: Vec<BTreeMap<u32, u32>> = vec![BTreeMap::new(); k_star as usize + 1];
    for counts in m {
        for &(topic, occupancy) in counts.entries() {
            *rows[topic as usize].entry(occupancy).or_insert(0) += 1;
        }
    }
    rows.into_iter().map(|row| row.into_iter().collect()).collect()
}

/// Reverse cumulative sum of one dtable row: `D[j-1]` = number of documents
/// with at least j tokens in the topic, for j = 1..=max occupancy.
pub fn threshold_counts(dtable_row: &[(u32, u32)]) -> Vec<u64> {
    let Some(&(max_p, _)) = dtable_row.last() else {
        return Vec::new();
    };
    let mut thresholds = vec![0u64; max_p as usize];
    let mut suffix = 0u64;
    let mut entry_iter = dtable_row.iter().rev().peekable();
    for j in (1..=max_p).rev() {
        while let Some(&&(p, count)) = entry_iter.peek() {
            if p == j {
                suffix += count as u64;
                entry_iter.next();
            } else {
                break;
            }
        }
        thresholds[j as usize - 1] = suffix;
    }
    thresholds
}

/// Initializes the sampler with every token in topic 1, drawing Psi and Phi
/// from their full conditionals at iteration 0.
pub fn init_state(corpus: &Corpus, config: &HdpConfig) -> Result<ModelState, StateError> {
    config.validate()?;
    if corpus.num_tokens() == 0 {
        return Err(StateError::EmptyCorpus);
    }
    let z: Vec<Vec<u32>> = corpus.docs().iter().map(|doc| vec![1u32; doc.len()]).collect();
    let (m, n) = rebuild_counts(&z, corpus, config.k_star)?;
    let dtable = rebuild_dtable(m.iter(), config.k_star);

    let mut l = vec![0u64; config.k_star as usize + 1];
    // Every document's first urn draw comes from Psi with probability 1.
    l[1] = corpus.docs().iter().filter(|doc| !doc.is_empty()).count() as u64;

    let mut psi_stream = derive_stream(&StreamKey::new(config.seed, 0, UnitKind::Psi, 0));
    let psi = sample_psi(&mut psi_stream, &l, config.gamma, config.k_star)?;

    let mut phi = Vec::with_capacity(config.k_star as usize + 1);
    phi.push(SparsePhiRow::default());
    for k in 1..=config.k_star {
        let mut stream = derive_stream(&StreamKey::new(config.seed, 0, UnitKind::PhiRow, k as u64));
        phi.push(sample_phi_row(&mut stream, n.row(k), config.beta, corpus.vocab_size())?);
    }
    let phi_cols = rebuild_phi_columns(&phi, corpus.vocab_size());

    let docs = z
        .into_iter()
        .zip(m)
        .map(|(doc_z, doc_m)| DocState { z: doc_z, m: doc_m })
        .collect();

    Ok(ModelState { docs, n, phi, phi_cols, psi, l, dtable })
}

const PSI_SUM_TOLERANCE: f64 = 1e-12;

/// Checks every state invariant; returns one message per violation.
pub fn validate_state(state: &ModelState, corpus: &Corpus, config: &HdpConfig) -> Vec<String> {
    let mut violations = Vec::new();
    let k_star = config.k_star;

    if state.docs.len() != corpus.num_docs() {
        violations.push(format!(
            "document count: state has {}, corpus has {}",
            state.docs.len(),
            corpus.num_docs()
        ));
        return violations;
    }

    let z: Vec<Vec<u32>> = state.docs.iter().map(|d| d.z.clone()).collect();
    for (d, (doc_z, doc)) in z.iter().zip(corpus.docs()).enumerate() {
        if doc_z.len() != doc.len() {
            violations.push(format!("doc {d}: z length {} != doc length {}", doc_z.len(), doc.len()));
            return violations;
        }
    }

    match rebuild_counts(&z, corpus, k_star) {
        Err(err) => violations.push(format!("z: {err}")),
        Ok((expected_m, expected_n)) => {
            for (d, (doc, expected)) in state.docs.iter().zip(&expected_m).enumerate() {
                if &doc.m != expected {
                    violations.push(format!("doc {d}: m does not match counts implied by z"));
                }
                if doc.m.total() != doc.z.len() as u64 {
                    violations.push(format!("doc {d}: m total {} != doc length {}", doc.m.total(), doc.z.len()));
                }
            }
            if state.n != expected_n {
                violations.push("n does not match counts implied by z".to_string());
            }
            for k in 1..=k_star {
                let row_sum: u64 = state.n.row(k).values().map(|&c| c as u64).sum();
                if row_sum != state.n.total(k) {
                    violations.push(format!("topic {k}: n row sum {row_sum} != total {}", state.n.total(k)));
                }
            }
            if state.n.grand_total() != corpus.num_tokens() {
                violations.push(format!(
                    "n grand total {} != corpus tokens {}",
                    state.n.grand_total(),
                    corpus.num_tokens()
                ));
            }
        }
    }

    if state.psi.len() != k_star as usize + 1 {
        violations.push(format!("psi length {} != k_star + 1", state.psi.len()));
    } else {
        let sum: f64 = state.psi[1..].iter().sum();
        if (sum - 1.0).abs() > PSI_SUM_TOLERANCE {
            violations.push(format!("psi sums to {sum}, expected 1"));
        }
        if let Some(k) = (1..=k_star).find(|&k| state.psi[k as usize] < 0.0) {
            violations.push(format!("psi[{k}] is negative"));
        }
    }

    let expected_dtable = rebuild_dtable(state.docs.iter().map(|d| &d.m), k_star);
    if state.dtable != expected_dtable {
        violations.push("dtable does not match counts implied by m".to_string());
    }
    for k in 1..=k_star as usize {
        let weighted: u64 = state.dtable[k].iter().map(|&(p, c)| p as u64 * c as u64).sum();
        let m_total: u64 = state.docs.iter().map(|d| d.m.get(k as u32) as u64).sum();
        if weighted != m_total {
            violations.push(format!("dtable row {k}: weighted sum {weighted} != m column total {m_total}"));
        }
    }

    if state.l.len() != k_star as usize + 1 {
        violations.push(format!("l length {} != k_star + 1", state.l.len()));
    } else {
        for k in 1..=k_star as usize {
            let m_total: u64 = state.docs.iter().map(|d| d.m.get(k as u32) as u64).sum();
            let docs_with_topic = state.docs.iter().filter(|d| d.m.get(k as u32) >= 1).count() as u64;
            if state.l[k] < docs_with_topic || state.l[k] > m_total {
                violations.push(format!(
                    "l[{k}] = {} outside bounds [{docs_with_topic}, {m_total}]",
                    state.l[k]
                ));
            }
        }
    }

    for k in 1..=k_star as usize {
        if let Err(msg) = state.phi[k].check() {
            violations.push(format!("phi row {k}: {msg}"));
        }
    }

    violations
}
