//! The doubly sparse, data-parallel Gibbs sampler: Poisson Polya urn rows for
//! Phi, the two-bucket sparse step for z, direct binomial sampling of l, and
//! the truncated stick-breaking step for Psi.
//!
//! Every phase is fork-join: work units (topic rows, documents) are owned
//! exclusively, draw from their own keyed stream, and merge in a fixed order,
//! so results depend only on (seed, config, corpus) and never on thread count.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use crate::corpus::Corpus;
use crate::diag::{active_topic_count, joint_log_likelihood, PhaseTimes, TraceRecord};
use crate::randdist::{derive_stream, draw_beta, draw_binomial, draw_poisson, AliasTable, Stream, StreamKey, UnitKind};
use crate::state::{DocState, HdpConfig, ModelState, SparseCounts, StateError, WorkCounters, rebuild_dtable, threshold_counts};

/// One topic's word distribution: sorted (word type, probability) pairs over
/// the word types that received a nonzero Poisson count, plus the integer
/// total of the raw counts before normalization.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparsePhiRow {
    entries: Vec<(u32, f64)>,
    raw_total: u64,
}

impl SparsePhiRow {
    pub fn from_counts(counts: Vec<(u32, u64)>) -> Self {
        let raw_total: u64 = counts.iter().map(|&(_, c)| c).sum();
        if raw_total == 0 {
            return Self::default();
        }
        let entries = counts
            .into_iter()
            .filter(|&(_, c)| c > 0)
            .map(|(v, c)| (v, c as f64 / raw_total as f64))
            .collect();
        Self { entries, raw_total }
    }

    /// Wraps already-normalized probabilities (ascending word type). Rows not
    /// produced by the Poisson urn carry a raw total of 0.
    pub fn from_probabilities(entries: Vec<(u32, f64)>) -> Self {
        Self { entries, raw_total: 0 }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn raw_total(&self) -> u64 {
        self.raw_total
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn prob(&self, word: u32) -> f64 {
        match self.entries.binary_search_by_key(&word, |&(v, _)| v) {
            Ok(pos) => self.entries[pos].1,
            Err(_) => 0.0,
        }
    }

    /// Internal consistency: positive probabilities summing to 1 when nonempty.
    pub fn check(&self) -> Result<(), String> {
        if self.entries.is_empty() {
            return if self.raw_total == 0 { Ok(()) } else { Err("empty row with nonzero raw total".into()) };
        }
        if self.entries.iter().any(|&(_, p)| p <= 0.0) {
            return Err("nonpositive probability entry".into());
        }
        if !self.entries.windows(2).all(|w| w[0].0 < w[1].0) {
            return Err("entries not sorted by word type".into());
        }
        let sum: f64 = self.entries.iter().map(|&(_, p)| p).sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(format!("probabilities sum to {sum}"));
        }
        Ok(())
    }
}

/// Raw Poisson Polya urn counts for one topic row: the prior part is one
/// Poisson(beta * V) total scattered uniformly over word types, the count part
/// an independent Poisson(n_kv) per nonzero topic-word count.
pub fn sample_phi_counts(
    stream: &mut Stream,
    n_row: &BTreeMap<u32, u32>,
    beta: f64,
    vocab_size: u32,
) -> Result<Vec<(u32, u64)>, StateError> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(StateError::InvalidParameter(format!("beta must be positive, got {beta}")));
    }
    if vocab_size < 1 {
        return Err(StateError::InvalidParameter("vocabulary must be nonempty".into()));
    }
    let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
    let beta_total = draw_poisson(stream, beta * vocab_size as f64)?;
    for _ in 0..beta_total {
        *counts.entry(stream.random_range(0..vocab_size)).or_insert(0) += 1;
    }
    for (&word, &count) in n_row {
        let draw = draw_poisson(stream, count as f64)?;
        if draw > 0 {
            *counts.entry(word).or_insert(0) += draw;
        }
    }
    Ok(counts.into_iter().collect())
}

/// Draws one Phi row from the Poisson Polya urn and normalizes it.
pub fn sample_phi_row(
    stream: &mut Stream,
    n_row: &BTreeMap<u32, u32>,
    beta: f64,
    vocab_size: u32,
) -> Result<SparsePhiRow, StateError> {
    Ok(SparsePhiRow::from_counts(sample_phi_counts(stream, n_row, beta, vocab_size)?))
}

/// By-word-type view of Phi: for each word type the (topic, probability)
/// pairs with nonzero probability, in ascending topic order.
pub fn rebuild_phi_columns(phi: &[SparsePhiRow], vocab_size: u32) -> Vec<Vec<(u32, f64)>> {
    let mut cols: Vec<Vec<(u32, f64)>> = vec![Vec::new(); vocab_size as usize];
    for (k, row) in phi.iter().enumerate().skip(1) {
        for &(v, p) in row.entries() {
            cols[v as usize].push((k as u32, p));
        }
    }
    cols
}

/// Alias table over the nonzero-Phi topics of one word type, with weights
/// alpha * psi_k * phi_kv. `total_a` is the bucket (a) mass of the z step.
#[derive(Debug, Clone)]
pub struct WordAlias {
    pub table: AliasTable,
    pub total_a: f64,
}

impl WordAlias {
    fn empty() -> Self {
        Self { table: AliasTable::build(Vec::new(), &[]).expect("empty table"), total_a: 0.0 }
    }
}

/// Builds the per-word-type alias tables for the current (Phi, Psi).
pub fn build_word_aliases(phi_cols: &[Vec<(u32, f64)>], psi: &[f64], alpha: f64) -> Vec<WordAlias> {
    phi_cols
        .iter()
        .map(|col| {
            if col.is_empty() {
                return WordAlias::empty();
            }
            let support: Vec<u32> = col.iter().map(|&(k, _)| k).collect();
            let weights: Vec<f64> = col.iter().map(|&(k, p)| alpha * psi[k as usize] * p).collect();
            let table = AliasTable::build(support, &weights).expect("alias weights are nonnegative");
            let total_a = table.total_weight();
            WordAlias { table, total_a }
        })
        .collect()
}

/// One token's move between topics, applied to n after the document sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenMove {
    pub word: u32,
    pub from: u32,
    pub to: u32,
}

/// Resamples one token's topic. `m_d` must already have the token's old topic
/// removed. Bucket (b) walks the smaller of the document-topic and topic-word
/// supports and looks the other up by binary search; bucket (a) resolves with
/// one alias draw.
pub fn sample_token(
    stream: &mut Stream,
    word: u32,
    m_d: &SparseCounts,
    col: &[(u32, f64)],
    alias: &WordAlias,
    scratch: &mut Vec<(u32, f64)>,
    counters: &mut WorkCounters,
) -> Result<u32, StateError> {
    scratch.clear();
    let m_entries = m_d.entries();
    let mut total_b = 0.0f64;
    let steps;
    if m_entries.len() <= col.len() {
        steps = m_entries.len();
        for &(k, count) in m_entries {
            if let Ok(pos) = col.binary_search_by_key(&k, |&(t, _)| t) {
                total_b += col[pos].1 * count as f64;
                scratch.push((k, total_b));
            }
        }
    } else {
        steps = col.len();
        for &(k, phi_kv) in col {
            let count = m_d.get(k);
            if count > 0 {
                total_b += phi_kv * count as f64;
                scratch.push((k, total_b));
            }
        }
    }
    counters.record_token(steps as u64, m_entries.len().min(col.len()) as u64);

    let total = alias.total_a + total_b;
    if total <= 0.0 {
        return Err(StateError::DeadWordType { word });
    }
    let u = stream.random::<f64>() * total;
    if u < alias.total_a {
        Ok(alias.table.draw(stream)?)
    } else {
        let target = u - alias.total_a;
        for &(k, cum) in scratch.iter() {
            if target < cum {
                return Ok(k);
            }
        }
        Ok(scratch.last().expect("bucket b selected with zero mass").0)
    }
}

/// Resamples every token of one document in order, updating z and m in place.
/// n is never read or written here; topic moves are returned for a
/// deterministic post-sweep merge.
pub fn sample_document(
    stream: &mut Stream,
    tokens: &[u32],
    doc: &mut DocState,
    phi_cols: &[Vec<(u32, f64)>],
    aliases: &[WordAlias],
) -> Result<(Vec<TokenMove>, WorkCounters), StateError> {
    let mut moves = Vec::new();
    let mut counters = WorkCounters::default();
    let mut scratch: Vec<(u32, f64)> = Vec::new();
    for (i, &word) in tokens.iter().enumerate() {
        let old = doc.z[i];
        doc.m.decrement(old);
        let new = sample_token(
            stream,
            word,
            &doc.m,
            &phi_cols[word as usize],
            &aliases[word as usize],
            &mut scratch,
            &mut counters,
        )?;
        doc.m.increment(new);
        if new != old {
            doc.z[i] = new;
            moves.push(TokenMove { word, from: old, to: new });
        }
    }
    Ok((moves, counters))
}

/// Draws the global-topic statistic for one topic by summing binomials over
/// occupancy levels: the j-th level contributes Bin(D_kj, r / (r + j - 1))
/// with r = psi_k * alpha; the j = 1 level is deterministic.
pub fn sample_l_topic(
    stream: &mut Stream,
    psi_k: f64,
    alpha: f64,
    thresholds: &[u64],
) -> Result<u64, StateError> {
    if psi_k < 0.0 {
        return Err(StateError::InvalidParameter(format!("psi must be nonnegative, got {psi_k}")));
    }
    let rate = psi_k * alpha;
    let mut l = 0u64;
    for (idx, &trials) in thresholds.iter().enumerate() {
        if idx == 0 {
            l += trials;
        } else {
            let p = rate / (rate + idx as f64);
            l += draw_binomial(stream, trials, p)?;
        }
    }
    Ok(l)
}

/// Stick parameters of the truncated posterior: for topic k < K*,
/// Beta(1 + l_k, gamma + sum of l beyond k); the K* stick is fixed at 1.
pub fn stick_parameters(l: &[u64], gamma: f64, k_star: u32) -> Vec<(f64, f64)> {
    let mut tail = vec![0u64; k_star as usize + 2];
    for k in (1..=k_star as usize).rev() {
        tail[k] = tail[k + 1] + l[k];
    }
    (1..k_star as usize)
        .map(|k| (1.0 + l[k] as f64, gamma + tail[k + 1] as f64))
        .collect()
}

/// Draws Psi from its stick-breaking full conditional with the final stick
/// pinned to 1. Slot 0 of `l` and of the result is unused.
pub fn sample_psi(stream: &mut Stream, l: &[u64], gamma: f64, k_star: u32) -> Result<Vec<f64>, StateError> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(StateError::InvalidParameter(format!("gamma must be positive, got {gamma}")));
    }
    assert_eq!(l.len(), k_star as usize + 1);
    let params = stick_parameters(l, gamma, k_star);
    let mut psi = vec![0.0; k_star as usize + 1];
    let mut remaining = 1.0f64;
    for (k, &(a, b)) in params.iter().enumerate() {
        let stick = draw_beta(stream, a, b)?;
        psi[k + 1] = stick * remaining;
        remaining *= 1.0 - stick;
    }
    psi[k_star as usize] = remaining;
    Ok(psi)
}

fn thread_pool(threads: usize) -> Arc<rayon::ThreadPool> {
    static POOLS: OnceLock<Mutex<HashMap<usize, Arc<rayon::ThreadPool>>>> = OnceLock::new();
    let pools = POOLS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = pools.lock().unwrap();
    guard
        .entry(threads)
        .or_insert_with(|| {
            Arc::new(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .expect("failed to build thread pool"),
            )
        })
        .clone()
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Runs one full Gibbs iteration: Phi rows in parallel over topics, alias
/// rebuild, documents in parallel, dtable + l in parallel over topics, then
/// Psi. Returns the iteration's trace record.
pub fn gibbs_iteration(
    state: &mut ModelState,
    corpus: &Corpus,
    config: &HdpConfig,
    iteration: u64,
) -> Result<TraceRecord, StateError> {
    let k_star = config.k_star;
    let parallel = config.threads > 1;
    let pool = parallel.then(|| thread_pool(config.threads));

    // Phi phase
    let phi_start = Instant::now();
    let sample_row = |k: u32| -> Result<SparsePhiRow, StateError> {
        let mut stream = derive_stream(&StreamKey::new(config.seed, iteration, UnitKind::PhiRow, k as u64));
        sample_phi_row(&mut stream, state.n.row(k), config.beta, corpus.vocab_size())
    };
    let rows: Result<Vec<SparsePhiRow>, StateError> = match &pool {
        Some(pool) => pool.install(|| (1..=k_star).into_par_iter().map(sample_row).collect()),
        None => (1..=k_star).map(sample_row).collect(),
    };
    let mut phi = Vec::with_capacity(k_star as usize + 1);
    phi.push(SparsePhiRow::default());
    phi.extend(rows?);
    state.phi = phi;
    state.phi_cols = rebuild_phi_columns(&state.phi, corpus.vocab_size());
    let phase_phi = elapsed_ms(phi_start);

    // z phase (alias rebuild included)
    let z_start = Instant::now();
    let aliases = build_word_aliases(&state.phi_cols, &state.psi, config.alpha);
    let docs = corpus.docs();
    let phi_cols = &state.phi_cols;
    let sweep = |(d, doc): (usize, &mut DocState)| -> Result<(Vec<TokenMove>, WorkCounters), StateError> {
        let mut stream = derive_stream(&StreamKey::new(config.seed, iteration, UnitKind::Document, d as u64));
        sample_document(&mut stream, &docs[d], doc, phi_cols, &aliases)
    };
    let doc_results: Result<Vec<(Vec<TokenMove>, WorkCounters)>, StateError> = match &pool {
        Some(pool) => pool.install(|| state.docs.par_iter_mut().enumerate().map(sweep).collect()),
        None => state.docs.iter_mut().enumerate().map(sweep).collect(),
    };
    let mut work = WorkCounters::default();
    for (moves, counters) in doc_results? {
        for TokenMove { word, from, to } in moves {
            state.n.decrement(from, word);
            state.n.increment(to, word);
        }
        work.merge(&counters);
    }
    let phase_z = elapsed_ms(z_start);

    // l phase
    let l_start = Instant::now();
    state.dtable = rebuild_dtable(state.docs.iter().map(|d| &d.m), k_star);
    let dtable = &state.dtable;
    let psi = &state.psi;
    let sample_l = |k: u32| -> Result<u64, StateError> {
        let row = &dtable[k as usize];
        if row.is_empty() {
            return Ok(0);
        }
        let mut stream = derive_stream(&StreamKey::new(config.seed, iteration, UnitKind::LTopic, k as u64));
        sample_l_topic(&mut stream, psi[k as usize], config.alpha, &threshold_counts(row))
    };
    let l_values: Result<Vec<u64>, StateError> = match &pool {
        Some(pool) => pool.install(|| (1..=k_star).into_par_iter().map(sample_l).collect()),
        None => (1..=k_star).map(sample_l).collect(),
    };
    let mut l = vec![0u64];
    l.extend(l_values?);
    state.l = l;
    let phase_l = elapsed_ms(l_start);

    // Psi phase
    let psi_start = Instant::now();
    let mut psi_stream = derive_stream(&StreamKey::new(config.seed, iteration, UnitKind::Psi, 0));
    state.psi = sample_psi(&mut psi_stream, &state.l, config.gamma, k_star)?;
    let phase_psi = elapsed_ms(psi_start);

    let tokens_per_topic: Vec<(u32, u64)> =
        (1..=k_star).filter(|&k| state.n.total(k) > 0).map(|k| (k, state.n.total(k))).collect();

    Ok(TraceRecord {
        iteration,
        joint_log_likelihood: joint_log_likelihood(state, corpus, config),
        active_topics: active_topic_count(state),
        flag_topic_tokens: state.n.total(k_star),
        tokens_per_topic,
        max_work_ratio: work.max_work_ratio,
        phase_ms: PhaseTimes { phi: phase_phi, z: phase_z, l: phase_l, psi: phase_psi },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Corpus;
    use crate::oracle::antoniak_pmf;
    use crate::state::{init_state, validate_state};
    use crate::stats::{chi_square_fits, sample_mean_var};

    fn stream(tag: u64) -> Stream {
        derive_stream(&StreamKey::new(417, 0, UnitKind::Init, tag))
    }

    #[test]
    fn phi_row_vanishing_rate_is_empty() {
        let mut s = stream(0);
        let n_row = BTreeMap::new();
        for _ in 0..1000 {
            let row = sample_phi_row(&mut s, &n_row, 1e-10, 10).unwrap();
            assert!(row.is_empty());
        }
    }

    #[test]
    fn phi_row_normalized_mean_matches_dirichlet() {
        let mut s = stream(1);
        let (beta, vocab_size, count) = (0.01, 10u32, 100u32);
        let mut n_row = BTreeMap::new();
        n_row.insert(0u32, count);
        let n_draws = 100_000;
        let draws: Vec<f64> = (0..n_draws)
            .map(|_| sample_phi_row(&mut s, &n_row, beta, vocab_size).unwrap().prob(0))
            .collect();
        let (mean, var) = sample_mean_var(&draws);
        let expected = (beta + count as f64) / (vocab_size as f64 * beta + count as f64);
        let se = (var / n_draws as f64).sqrt();
        assert!((mean - expected).abs() < 3.0 * se, "mean {mean} vs {expected} (se {se})");
    }

    #[test]
    fn phi_raw_counts_fit_the_split_poisson() {
        let mut s = stream(2);
        let (beta, vocab_size) = (1.0, 5u32);
        let mut n_row = BTreeMap::new();
        n_row.insert(2u32, 3u32);
        let n_draws = 100_000usize;
        let mut observed = vec![0u64; 30];
        for _ in 0..n_draws {
            let counts = sample_phi_counts(&mut s, &n_row, beta, vocab_size).unwrap();
            let raw = counts.iter().find(|&&(v, _)| v == 2).map_or(0, |&(_, c)| c);
            observed[(raw as usize).min(29)] += 1;
        }
        // Poisson(beta + 3) pmf
        let rate: f64 = 4.0;
        let mut pmf = vec![0.0f64; 30];
        pmf[0] = (-rate).exp();
        for k in 1..30 {
            pmf[k] = pmf[k - 1] * rate / k as f64;
        }
        let spill: f64 = 1.0 - pmf.iter().sum::<f64>();
        pmf[29] += spill;
        assert!(chi_square_fits(&observed, &pmf, n_draws as f64, 1e-3));
    }

    #[test]
    fn word_alias_hand_product() {
        let phi_cols = vec![vec![(1u32, 0.5f64)], Vec::new()];
        let psi = vec![0.0, 0.4, 0.6];
        let aliases = build_word_aliases(&phi_cols, &psi, 0.1);
        assert!((aliases[0].total_a - 0.02).abs() < 1e-15);
        assert_eq!(aliases[0].table.support(), &[1]);
        assert!(aliases[1].table.is_empty());
        assert_eq!(aliases[1].total_a, 0.0);
    }

    #[test]
    fn word_alias_two_entry_frequencies() {
        let phi_cols = vec![vec![(1u32, 0.3f64), (4, 0.7)]];
        let psi = vec![0.0, 0.5, 0.0, 0.0, 0.5];
        let alpha = 0.2;
        let aliases = build_word_aliases(&phi_cols, &psi, alpha);
        let w1 = alpha * 0.5 * 0.3;
        let w4 = alpha * 0.5 * 0.7;
        assert!((aliases[0].total_a - (w1 + w4)).abs() < 1e-15);
        let mut s = stream(3);
        let n = 100_000;
        let mut count1 = 0u64;
        for _ in 0..n {
            if aliases[0].table.draw(&mut s).unwrap() == 1 {
                count1 += 1;
            }
        }
        let observed = [count1, n - count1];
        let probs = [w1 / (w1 + w4), w4 / (w1 + w4)];
        assert!(chi_square_fits(&observed, &probs, n as f64, 1e-3));
    }

    #[test]
    fn token_single_topic_is_forced() {
        let phi_cols = vec![vec![(1u32, 1.0f64)]];
        let psi = vec![0.0, 1.0];
        let aliases = build_word_aliases(&phi_cols, &psi, 0.5);
        let mut s = stream(4);
        let m_d = SparseCounts::new();
        let mut scratch = Vec::new();
        let mut counters = WorkCounters::default();
        for _ in 0..100 {
            let k = sample_token(&mut s, 0, &m_d, &phi_cols[0], &aliases[0], &mut scratch, &mut counters).unwrap();
            assert_eq!(k, 1);
        }
    }

    #[test]
    fn token_two_bucket_hand_distribution() {
        // phi column {1: 0.6, 2: 0.4}, psi = (0.5, 0.5), alpha = 0.2, m = {2: 3}
        // P(k = 2) = (0.2*0.5*0.4 + 0.4*3) / (0.2*0.5 + 1.2) = 1.24/1.3
        let phi_cols = vec![vec![(1u32, 0.6f64), (2, 0.4)]];
        let psi = vec![0.0, 0.5, 0.5];
        let aliases = build_word_aliases(&phi_cols, &psi, 0.2);
        let mut m_d = SparseCounts::new();
        for _ in 0..3 {
            m_d.increment(2);
        }
        let mut s = stream(5);
        let mut scratch = Vec::new();
        let mut counters = WorkCounters::default();
        let n = 100_000;
        let mut count2 = 0u64;
        for _ in 0..n {
            let k = sample_token(&mut s, 0, &m_d, &phi_cols[0], &aliases[0], &mut scratch, &mut counters).unwrap();
            if k == 2 {
                count2 += 1;
            }
        }
        let p2 = 1.24 / 1.3;
        let observed = [n - count2, count2];
        assert!(chi_square_fits(&observed, &[1.0 - p2, p2], n as f64, 1e-3));
        assert!(counters.max_work_ratio <= 1.0);
    }

    #[test]
    fn token_bucket_mass_matches_dense_sum() {
        // total_a + total_b must equal the dense sum over all topics of
        // phi_kv * (alpha psi_k + m_dk), within float tolerance.
        let mut s = stream(6);
        let k_star = 8u32;
        for trial in 0..200 {
            let mut phi_col: Vec<(u32, f64)> = Vec::new();
            for k in 1..=k_star {
                if s.random::<f64>() < 0.5 {
                    phi_col.push((k, s.random::<f64>() * 0.3 + 1e-3));
                }
            }
            let mut psi = vec![0.0; k_star as usize + 1];
            let mut rest = 1.0;
            for k in 1..=k_star as usize {
                let part = s.random::<f64>() * rest;
                psi[k] = part;
                rest -= part;
            }
            let mut m_d = SparseCounts::new();
            for k in 1..=k_star {
                for _ in 0..s.random_range(0..4u32) {
                    m_d.increment(k);
                }
            }
            let alpha = 0.3;
            let aliases = build_word_aliases(&[phi_col.clone()], &psi, alpha);

            let mut total_b = 0.0;
            for &(k, count) in m_d.entries() {
                if let Ok(pos) = phi_col.binary_search_by_key(&k, |&(t, _)| t) {
                    total_b += phi_col[pos].1 * count as f64;
                }
            }
            let sparse_total = aliases[0].total_a + total_b;

            let mut dense_total = 0.0;
            for k in 1..=k_star {
                let phi_kv = phi_col
                    .binary_search_by_key(&k, |&(t, _)| t)
                    .map_or(0.0, |pos| phi_col[pos].1);
                dense_total += phi_kv * (alpha * psi[k as usize] + m_d.get(k) as f64);
            }
            if dense_total > 0.0 {
                let rel = (sparse_total - dense_total).abs() / dense_total;
                assert!(rel < 1e-10, "trial {trial}: {sparse_total} vs {dense_total}");
            }
        }
    }

    #[test]
    fn token_dead_word_type_is_fatal() {
        let phi_cols: Vec<Vec<(u32, f64)>> = vec![Vec::new()];
        let psi = vec![0.0, 1.0];
        let aliases = build_word_aliases(&phi_cols, &psi, 0.5);
        let mut s = stream(7);
        let mut scratch = Vec::new();
        let mut counters = WorkCounters::default();
        let err = sample_token(&mut s, 0, &SparseCounts::new(), &phi_cols[0], &aliases[0], &mut scratch, &mut counters);
        assert!(matches!(err, Err(StateError::DeadWordType { word: 0 })));
    }

    #[test]
    fn document_sweep_empty_and_forced() {
        let phi_cols = vec![vec![(1u32, 1.0f64)]];
        let psi = vec![0.0, 1.0];
        let aliases = build_word_aliases(&phi_cols, &psi, 0.5);

        let mut empty = DocState { z: Vec::new(), m: SparseCounts::new() };
        let mut s = stream(8);
        let (moves, counters) = sample_document(&mut s, &[], &mut empty, &phi_cols, &aliases).unwrap();
        assert!(moves.is_empty());
        assert_eq!(counters.tokens, 0);

        let mut single = DocState { z: vec![1], m: SparseCounts::new() };
        single.m.increment(1);
        let (moves, _) = sample_document(&mut s, &[0], &mut single, &phi_cols, &aliases).unwrap();
        assert!(moves.is_empty());
        assert_eq!(single.z, vec![1]);
        assert_eq!(single.m.entries(), &[(1, 1)]);
    }

    #[test]
    fn document_sweep_replays_deterministically() {
        let phi_cols = vec![vec![(1u32, 0.6f64), (2, 0.4)], vec![(1, 0.2), (2, 0.8)]];
        let psi = vec![0.0, 0.5, 0.5];
        let aliases = build_word_aliases(&phi_cols, &psi, 0.3);
        let tokens = [0u32, 1, 1, 0, 1];
        let run = || {
            let mut doc = DocState { z: vec![1; 5], m: SparseCounts::new() };
            for _ in 0..5 {
                doc.m.increment(1);
            }
            let mut s = derive_stream(&StreamKey::new(99, 7, UnitKind::Document, 3));
            let (moves, _) = sample_document(&mut s, &tokens, &mut doc, &phi_cols, &aliases).unwrap();
            (doc.z.clone(), doc.m.entries().to_vec(), moves)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn l_topic_first_level_is_deterministic() {
        let mut s = stream(9);
        for _ in 0..100 {
            assert_eq!(sample_l_topic(&mut s, 0.7, 0.1, &[1]).unwrap(), 1);
        }
        assert_eq!(sample_l_topic(&mut s, 0.0, 0.1, &[]).unwrap(), 0);
    }

    #[test]
    fn l_topic_two_level_coin() {
        // D = [1, 1] with psi*alpha = 1: l = 1 + Ber(1/2)
        let mut s = stream(10);
        let n = 100_000;
        let mut twos = 0u64;
        for _ in 0..n {
            match sample_l_topic(&mut s, 0.5, 2.0, &[1, 1]).unwrap() {
                1 => {}
                2 => twos += 1,
                other => panic!("impossible l = {other}"),
            }
        }
        let observed = [n - twos, twos];
        assert!(chi_square_fits(&observed, &[0.5, 0.5], n as f64, 1e-3));
    }

    #[test]
    fn l_topic_matches_antoniak_law() {
        // single document with m tokens in the topic: thresholds all ones
        let (theta, m) = (1.0f64, 5usize);
        let thresholds = vec![1u64; m];
        let mut s = stream(11);
        let n = 100_000usize;
        let mut observed = vec![0u64; m];
        for _ in 0..n {
            let l = sample_l_topic(&mut s, theta, 1.0, &thresholds).unwrap();
            observed[(l - 1) as usize] += 1;
        }
        let pmf = antoniak_pmf(m as u64, theta).unwrap();
        assert!(chi_square_fits(&observed, &pmf, n as f64, 1e-3));
    }

    #[test]
    fn psi_stick_parameters_hand_values() {
        let l = vec![0, 3, 1, 0, 0];
        let params = stick_parameters(&l, 1.0, 4);
        assert_eq!(params, vec![(4.0, 2.0), (2.0, 1.0), (1.0, 1.0)]);
    }

    #[test]
    fn psi_prior_recovery_mean() {
        let l = vec![0u64; 6];
        let mut s = stream(12);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_psi(&mut s, &l, 1.0, 5).unwrap()[1]).collect();
        let (mean, var) = sample_mean_var(&draws);
        let se = (var / n as f64).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn psi_sums_to_one_and_rejects_bad_gamma() {
        let l = vec![0, 5, 3, 2, 0, 0];
        let mut s = stream(13);
        let psi = sample_psi(&mut s, &l, 1.0, 5).unwrap();
        assert!((psi[1..].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(psi[0], 0.0);
        assert!(sample_psi(&mut s, &l, 0.0, 5).is_err());
    }

    fn small_corpus() -> Corpus {
        Corpus::new(
            vec![vec![0, 1, 2, 0, 1], vec![2, 3, 3, 1], vec![0, 0, 3, 2, 1, 1]],
            4,
        )
        .unwrap()
    }

    #[test]
    fn iteration_preserves_invariants_and_replays() {
        let corpus = small_corpus();
        let config = HdpConfig { k_star: 6, seed: 21, threads: 1, beta: 1.0, ..HdpConfig::default() };
        let mut state = init_state(&corpus, &config).unwrap();
        for t in 1..=20 {
            gibbs_iteration(&mut state, &corpus, &config, t).unwrap();
            let violations = validate_state(&state, &corpus, &config);
            assert!(violations.is_empty(), "iteration {t}: {violations:?}");
        }

        let run = |threads: usize| {
            let config = HdpConfig { k_star: 6, seed: 21, threads, beta: 1.0, ..HdpConfig::default() };
            let mut state = init_state(&corpus, &config).unwrap();
            let mut lls = Vec::new();
            for t in 1..=10 {
                let record = gibbs_iteration(&mut state, &corpus, &config, t).unwrap();
                lls.push(record.joint_log_likelihood.to_bits());
            }
            let z: Vec<Vec<u32>> = state.docs.iter().map(|d| d.z.clone()).collect();
            (z, lls)
        };
        let serial = run(1);
        assert_eq!(serial, run(1));
        assert_eq!(serial, run(4));
    }

    #[test]
    fn iteration_single_topic_never_moves_tokens() {
        let corpus = small_corpus();
        let config = HdpConfig { k_star: 1, seed: 5, threads: 1, beta: 2.0, ..HdpConfig::default() };
        let mut state = init_state(&corpus, &config).unwrap();
        for t in 1..=5 {
            gibbs_iteration(&mut state, &corpus, &config, t).unwrap();
            for doc in &state.docs {
                assert!(doc.z.iter().all(|&k| k == 1));
            }
        }
    }

    #[test]
    fn iteration_work_ratio_within_bound() {
        let corpus = small_corpus();
        let config = HdpConfig { k_star: 6, seed: 9, threads: 1, beta: 1.0, ..HdpConfig::default() };
        let mut state = init_state(&corpus, &config).unwrap();
        for t in 1..=20 {
            let record = gibbs_iteration(&mut state, &corpus, &config, t).unwrap();
            assert!(record.max_work_ratio <= 1.0, "iteration {t}: {}", record.max_work_ratio);
        }
    }
}
