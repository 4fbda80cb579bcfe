//! Run diagnostics: the joint log-likelihood trace, topic summaries,
//! CSV trace output, and checksummed checkpoints.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::corpus::Corpus;
use crate::randdist::{derive_stream, StreamKey, UnitKind};
use crate::sampler::{rebuild_phi_columns, sample_phi_row, sample_psi};
use crate::state::{rebuild_counts, rebuild_dtable, DocState, HdpConfig, ModelState, SparseCounts, StateError};

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint was written for a different corpus ({0})")]
    CorpusMismatch(String),
    #[error(transparent)]
    State(#[from] StateError),
}

/// Wall time per Gibbs phase, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimes {
    pub phi: f64,
    pub z: f64,
    pub l: f64,
    pub psi: f64,
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iteration: u64,
    pub joint_log_likelihood: f64,
    pub active_topics: usize,
    pub flag_topic_tokens: u64,
    /// (topic, token count) for every active topic.
    pub tokens_per_topic: Vec<(u32, u64)>,
    pub max_work_ratio: f64,
    pub phase_ms: PhaseTimes,
}

impl TraceRecord {
    /// Clears the wall-time fields; used when traces must be byte-comparable
    /// across runs.
    pub fn zero_timings(&mut self) {
        self.phase_ms = PhaseTimes::default();
    }
}

/// Joint log probability of the tokens and indicators given (Psi, alpha,
/// beta), with the topic-word distributions, urn flags, and document-topic
/// proportions all marginalized:
///
/// log p(w | z, beta) — a collapsed Dirichlet-multinomial per topic — plus
/// log p(z | Psi, alpha) — the urn-sequence marginal per document, whose i-th
/// factor is (alpha psi_z + prefix count of z) / (alpha + i - 1).
pub fn joint_log_likelihood(state: &ModelState, corpus: &Corpus, config: &HdpConfig) -> f64 {
    let vocab = corpus.vocab_size() as f64;
    let beta = config.beta;
    let lg_vbeta = ln_gamma(vocab * beta);
    let lg_beta = ln_gamma(beta);

    let mut word_term = 0.0;
    for k in 1..=config.k_star {
        let total = state.n.total(k);
        if total == 0 {
            continue;
        }
        word_term += lg_vbeta - ln_gamma(vocab * beta + total as f64);
        for &count in state.n.row(k).values() {
            word_term += ln_gamma(beta + count as f64) - lg_beta;
        }
    }

    let alpha = config.alpha;
    let mut indicator_term = 0.0;
    for doc in &state.docs {
        let mut prefix = SparseCounts::new();
        for (i, &topic) in doc.z.iter().enumerate() {
            let repeats = prefix.get(topic) as f64;
            indicator_term += (alpha * state.psi[topic as usize] + repeats).ln();
            indicator_term -= (alpha + i as f64).ln();
            prefix.increment(topic);
        }
    }
    word_term + indicator_term
}

/// Number of topics with at least one token assigned.
pub fn active_topic_count(state: &ModelState) -> usize {
    (1..=state.n.k_star()).filter(|&k| state.n.total(k) > 0).count()
}

#[derive(Debug, Clone)]
pub struct SummarySpec {
    /// Rank quantiles to sample, as fractions of the ranking.
    pub quantiles: Vec<f64>,
    pub per_quantile: usize,
    pub top_words: usize,
    pub min_tokens: u64,
}

impl Default for SummarySpec {
    fn default() -> Self {
        Self { quantiles: vec![1.0, 0.75, 0.5, 0.25, 0.05], per_quantile: 5, top_words: 8, min_tokens: 100 }
    }
}

/// One topic's entry in the quantile summary.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicSummary {
    pub quantile: f64,
    pub topic: u32,
    pub tokens: u64,
    /// (word type, count), by descending count then ascending word type.
    pub top_words: Vec<(u32, u32)>,
}

/// Ranks all topics with at least `min_tokens` tokens by size and, for each
/// quantile of the ranking, reports the `per_quantile` rank-nearest topics
/// with their top words. Ties in rank distance go to the larger topic.
pub fn quantile_topic_summary(state: &ModelState, spec: &SummarySpec) -> Vec<TopicSummary> {
    let mut ranked: Vec<(u32, u64)> = (1..=state.n.k_star())
        .map(|k| (k, state.n.total(k)))
        .filter(|&(_, tokens)| tokens >= spec.min_tokens)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    if ranked.is_empty() {
        return Vec::new();
    }

    let mut out = Vec::new();
    for &q in &spec.quantiles {
        let target = (1.0 - q) * (ranked.len() - 1) as f64;
        let mut by_distance: Vec<usize> = (0..ranked.len()).collect();
        by_distance.sort_by(|&a, &b| {
            let da = (a as f64 - target).abs();
            let db = (b as f64 - target).abs();
            da.partial_cmp(&db).unwrap().then(a.cmp(&b))
        });
        let mut chosen: Vec<usize> = by_distance.into_iter().take(spec.per_quantile).collect();
        chosen.sort_unstable();
        for rank in chosen {
            let (topic, tokens) = ranked[rank];
            let mut words: Vec<(u32, u32)> = state.n.row(topic).iter().map(|(&v, &c)| (v, c)).collect();
            words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            words.truncate(spec.top_words);
            out.push(TopicSummary { quantile: q, topic, tokens, top_words: words });
        }
    }
    out
}

pub const TRACE_HEADER: &str =
    "iteration,joint_ll,active_topics,flag_tokens,max_work_ratio,phase_ms_phi,phase_ms_z,phase_ms_l,phase_ms_psi";

pub fn format_trace_row(record: &TraceRecord) -> String {
    format!(
        "{},{:.6},{},{},{:.6},{:.3},{:.3},{:.3},{:.3}",
        record.iteration,
        record.joint_log_likelihood,
        record.active_topics,
        record.flag_topic_tokens,
        record.max_work_ratio,
        record.phase_ms.phi,
        record.phase_ms.z,
        record.phase_ms.l,
        record.phase_ms.psi,
    )
}

/// Incremental trace writer; one row per iteration, flushed as written.
pub struct TraceWriter {
    out: BufWriter<File>,
}

impl TraceWriter {
    pub fn create<P: AsRef<Path>>(path: P) -> std::io::Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{TRACE_HEADER}")?;
        out.flush()?;
        Ok(Self { out })
    }

    /// Reopens an existing trace for appending (checkpoint resume).
    pub fn append_to<P: AsRef<Path>>(path: P) -> std::io::Result<Self> {
        let out = BufWriter::new(File::options().append(true).open(path)?);
        Ok(Self { out })
    }

    pub fn write(&mut self, record: &TraceRecord) -> std::io::Result<()> {
        writeln!(self.out, "{}", format_trace_row(record))?;
        self.out.flush()
    }
}

/// Writes a whole trace in one call.
pub fn write_trace<P: AsRef<Path>>(records: &[TraceRecord], path: P) -> std::io::Result<()> {
    let mut writer = TraceWriter::create(path)?;
    for record in records {
        writer.write(record)?;
    }
    Ok(())
}

/// Writes the tab-separated topic summary.
pub fn write_topic_summary<P: AsRef<Path>>(
    summaries: &[TopicSummary],
    vocab: &crate::corpus::Vocabulary,
    path: P,
) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "quantile\ttopic\ttokens\ttop_words")?;
    for summary in summaries {
        let words: Vec<String> = summary
            .top_words
            .iter()
            .map(|&(v, c)| format!("{}:{}", vocab.term(v), c))
            .collect();
        writeln!(
            out,
            "{:.2}\t{}\t{}\t{}",
            summary.quantile,
            summary.topic,
            summary.tokens,
            words.join(" ")
        )?;
    }
    out.flush()
}

const CHECKPOINT_MAGIC: &str = "HDPCKPT";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointPayload {
    config: HdpConfig,
    iteration: u64,
    corpus_fingerprint: String,
    /// Per-document topic indicators, delta-encoded.
    z_delta: Vec<Vec<i64>>,
    /// Global-topic statistic at the checkpointed iteration; Psi is
    /// reconstructed from it through the iteration's stream key.
    l: Vec<u64>,
}

fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn corpus_fingerprint(corpus: &Corpus) -> String {
    let mut hasher = Sha256::new();
    hasher.update((corpus.num_docs() as u64).to_le_bytes());
    hasher.update(u64::from(corpus.vocab_size()).to_le_bytes());
    for doc in corpus.docs() {
        hasher.update((doc.len() as u64).to_le_bytes());
        for &token in doc {
            hasher.update(token.to_le_bytes());
        }
    }
    to_hex(&hasher.finalize())
}

fn delta_encode(z: &[u32]) -> Vec<i64> {
    let mut out = Vec::with_capacity(z.len());
    let mut prev = 0i64;
    for &value in z {
        out.push(value as i64 - prev);
        prev = value as i64;
    }
    out
}

fn delta_decode(deltas: &[i64]) -> Result<Vec<u32>, CheckpointError> {
    let mut out = Vec::with_capacity(deltas.len());
    let mut prev = 0i64;
    for &delta in deltas {
        prev += delta;
        let value = u32::try_from(prev)
            .map_err(|_| CheckpointError::Corrupt(format!("decoded topic indicator {prev} out of range")))?;
        out.push(value);
    }
    Ok(out)
}

/// Saves a checksummed checkpoint sufficient for exact resume: config,
/// iteration, the indicators, and the global-topic statistic. All other
/// sufficient statistics are rebuilt on load.
pub fn save_checkpoint<P: AsRef<Path>>(
    state: &ModelState,
    config: &HdpConfig,
    iteration: u64,
    corpus: &Corpus,
    path: P,
) -> Result<(), CheckpointError> {
    let payload = CheckpointPayload {
        config: config.clone(),
        iteration,
        corpus_fingerprint: corpus_fingerprint(corpus),
        z_delta: state.docs.iter().map(|d| delta_encode(&d.z)).collect(),
        l: state.l.clone(),
    };
    let body = serde_json::to_string(&payload)
        .map_err(|e| CheckpointError::Corrupt(format!("serialization failed: {e}")))?;
    let checksum = to_hex(&Sha256::digest(body.as_bytes()));
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION} {checksum}")?;
    out.write_all(body.as_bytes())?;
    out.flush()?;
    Ok(())
}

/// Loads a checkpoint and rebuilds the full state against `corpus`.
/// Returns the state, the run config, and the iteration it was saved at.
pub fn load_checkpoint<P: AsRef<Path>>(
    path: P,
    corpus: &Corpus,
) -> Result<(ModelState, HdpConfig, u64), CheckpointError> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    let (header, body) = text
        .split_once('\n')
        .ok_or_else(|| CheckpointError::Corrupt("missing header line".into()))?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some(CHECKPOINT_MAGIC) {
        return Err(CheckpointError::Corrupt("bad magic".into()));
    }
    let version: u32 = fields
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| CheckpointError::Corrupt("missing version".into()))?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let declared = fields.next().ok_or_else(|| CheckpointError::Corrupt("missing checksum".into()))?;
    let actual = to_hex(&Sha256::digest(body.as_bytes()));
    if declared != actual {
        return Err(CheckpointError::Corrupt("checksum mismatch".into()));
    }
    let payload: CheckpointPayload = serde_json::from_str(body)
        .map_err(|e| CheckpointError::Corrupt(format!("payload parse failed: {e}")))?;

    let fingerprint = corpus_fingerprint(corpus);
    if payload.corpus_fingerprint != fingerprint {
        return Err(CheckpointError::CorpusMismatch(format!(
            "expected {}, loaded corpus has {fingerprint}",
            payload.corpus_fingerprint
        )));
    }
    let config = payload.config;
    config.validate()?;
    if payload.z_delta.len() != corpus.num_docs() {
        return Err(CheckpointError::Corrupt("document count mismatch".into()));
    }
    if payload.l.len() != config.k_star as usize + 1 {
        return Err(CheckpointError::Corrupt("l length mismatch".into()));
    }

    let z = payload
        .z_delta
        .iter()
        .map(|deltas| delta_decode(deltas))
        .collect::<Result<Vec<_>, _>>()?;
    let (m, n) = rebuild_counts(&z, corpus, config.k_star)?;
    let dtable = rebuild_dtable(m.iter(), config.k_star);
    let iteration = payload.iteration;

    let mut psi_stream = derive_stream(&StreamKey::new(config.seed, iteration, UnitKind::Psi, 0));
    let psi = sample_psi(&mut psi_stream, &payload.l, config.gamma, config.k_star)?;

    let mut phi = Vec::with_capacity(config.k_star as usize + 1);
    phi.push(Default::default());
    for k in 1..=config.k_star {
        let mut stream = derive_stream(&StreamKey::new(config.seed, iteration, UnitKind::PhiRow, k as u64));
        phi.push(sample_phi_row(&mut stream, n.row(k), config.beta, corpus.vocab_size())?);
    }
    let phi_cols = rebuild_phi_columns(&phi, corpus.vocab_size());

    let docs: Vec<DocState> = z
        .into_iter()
        .zip(m)
        .map(|(doc_z, doc_m)| DocState { z: doc_z, m: doc_m })
        .collect();
    let state = ModelState { docs, n, phi, phi_cols, psi, l: payload.l, dtable };
    Ok((state, config, iteration))
}
