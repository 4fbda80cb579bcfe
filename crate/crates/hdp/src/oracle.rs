//! Exact, slow reference implementations used solely to validate the
//! production sampler's distributions at desk scale: dense Dirichlet rows in
//! place of the Poisson urn, explicit per-token urn flags in place of the
//! binomial trick, the Antoniak law of the table-count statistic, and an
//! importance-sampling check of the stick-breaking posterior.
//!
//! Everything here is single-threaded and favors auditability over speed.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::ln_gamma;

use crate::corpus::Corpus;
use crate::randdist::{derive_stream, Stream, StreamKey, UnitKind};
use crate::sampler::{build_word_aliases, rebuild_phi_columns, sample_document, sample_psi, SparsePhiRow, TokenMove};
use crate::state::{rebuild_dtable, HdpConfig, ModelState, SparseCounts, StateError};

/// Per-document urn-draw indicators, aligned with the document's tokens.
/// The first draw always comes from the global distribution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BFlags {
    pub flags: Vec<bool>,
}

/// Exact Dirichlet(beta + n_k) row via normalized Gamma variates.
pub fn draw_dirichlet_row(
    stream: &mut Stream,
    n_row: &BTreeMap<u32, u32>,
    beta: f64,
    vocab_size: u32,
) -> Result<Vec<f64>, StateError> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(StateError::InvalidParameter(format!("beta must be positive, got {beta}")));
    }
    let mut row = Vec::with_capacity(vocab_size as usize);
    let base = Gamma::new(beta, 1.0).map_err(|e| StateError::InvalidParameter(e.to_string()))?;
    for v in 0..vocab_size {
        let shape = match n_row.get(&v) {
            Some(&c) => beta + c as f64,
            None => beta,
        };
        let draw = if shape == beta {
            base.sample(stream)
        } else {
            Gamma::new(shape, 1.0).map_err(|e| StateError::InvalidParameter(e.to_string()))?.sample(stream)
        };
        row.push(draw);
    }
    let total: f64 = row.iter().sum();
    for x in &mut row {
        *x /= total;
    }
    Ok(row)
}

/// Samples the urn flags for one document from their full conditional:
/// P(b_i = 1) = a / (a + r) with a = alpha * psi_{z_i} and r the number of
/// earlier tokens in the document with the same topic.
pub fn sample_b_flags(stream: &mut Stream, z_d: &[u32], psi: &[f64], alpha: f64) -> BFlags {
    let mut seen = SparseCounts::new();
    let mut flags = Vec::with_capacity(z_d.len());
    for &topic in z_d {
        let repeats = seen.get(topic);
        let flag = if repeats == 0 {
            true
        } else {
            let a = alpha * psi[topic as usize];
            stream.random::<f64>() < a / (a + repeats as f64)
        };
        flags.push(flag);
        seen.increment(topic);
    }
    BFlags { flags }
}

/// Counts flagged tokens per topic. Slot 0 of the result is unused.
pub fn l_from_flags(z: &[Vec<u32>], flags: &[BFlags], k_star: u32) -> Vec<u64> {
    assert_eq!(z.len(), flags.len());
    let mut l = vec![0u64; k_star as usize + 1];
    for (doc_z, doc_flags) in z.iter().zip(flags) {
        assert_eq!(doc_z.len(), doc_flags.flags.len());
        for (&topic, &flag) in doc_z.iter().zip(&doc_flags.flags) {
            if flag {
                l[topic as usize] += 1;
            }
        }
    }
    l
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Law of the number of occupied tables when `m` customers are seated by a
/// restaurant process with concentration `theta`:
/// P(L = t) = |s(m, t)| theta^t Gamma(theta) / Gamma(theta + m),
/// with unsigned Stirling numbers of the first kind evaluated in log space.
/// Returns the pmf over t = 1..=m.
pub fn antoniak_pmf(m: u64, theta: f64) -> Result<Vec<f64>, StateError> {
    if m < 1 {
        return Err(StateError::InvalidParameter("table-count law needs at least one customer".into()));
    }
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(StateError::InvalidParameter(format!("theta must be positive, got {theta}")));
    }
    // log |s(row, t)| for t = 1..=row, built by the triangular recurrence
    // |s(row, t)| = |s(row-1, t-1)| + (row-1) |s(row-1, t)|
    let mut log_s = vec![0.0f64];
    for row in 2..=m {
        let ln_factor = ((row - 1) as f64).ln();
        let mut next = Vec::with_capacity(row as usize);
        for t in 1..=row as usize {
            let carry = if t >= 2 { log_s[t - 2] } else { f64::NEG_INFINITY };
            let scaled = if t <= row as usize - 1 { ln_factor + log_s[t - 1] } else { f64::NEG_INFINITY };
            next.push(log_add_exp(carry, scaled));
        }
        log_s = next;
    }
    let log_theta = theta.ln();
    let log_norm = ln_gamma(theta) - ln_gamma(theta + m as f64);
    Ok((1..=m as usize)
        .map(|t| (log_s[t - 1] + t as f64 * log_theta + log_norm).exp())
        .collect())
}

/// Self-normalized importance estimates of the stick-breaking posterior's
/// first two moments, drawing proposals from the truncated prior. Serves as
/// an estimator family independent of the Gibbs code under test.
#[derive(Debug, Clone)]
pub struct GemPosterior {
    /// Posterior mean of each component; slot 0 unused.
    pub mean: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub se_mean: Vec<f64>,
    pub se_second: Vec<f64>,
    pub effective_samples: f64,
}

pub fn gem_posterior_importance(
    stream: &mut Stream,
    l: &[u64],
    gamma: f64,
    k_star: u32,
    samples: usize,
) -> Result<GemPosterior, StateError> {
    if samples < 100_000 {
        return Err(StateError::InvalidParameter(format!("need at least 1e5 samples, got {samples}")));
    }
    assert_eq!(l.len(), k_star as usize + 1);
    let k = k_star as usize;
    let zero_l = vec![0u64; k + 1];
    let mut draws = vec![0.0f64; samples * k];
    let mut log_w = vec![0.0f64; samples];
    for s in 0..samples {
        let psi = sample_psi(stream, &zero_l, gamma, k_star)?;
        let mut lw = 0.0;
        for topic in 1..=k {
            if l[topic] > 0 {
                lw += l[topic] as f64 * psi[topic].ln();
            }
        }
        draws[s * k..(s + 1) * k].copy_from_slice(&psi[1..]);
        log_w[s] = lw;
    }

    let shift = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if shift == f64::NEG_INFINITY {
        return Err(StateError::Inconclusive("all importance weights are zero".into()));
    }
    let weights: Vec<f64> = log_w.iter().map(|&lw| (lw - shift).exp()).collect();
    let w_sum: f64 = weights.iter().sum();
    let w_sq_sum: f64 = weights.iter().map(|w| w * w).sum();
    let effective_samples = w_sum * w_sum / w_sq_sum;
    if !(effective_samples >= 100.0) {
        return Err(StateError::Inconclusive(format!(
            "effective sample size {effective_samples:.1} below 100"
        )));
    }

    let mut mean = vec![0.0; k + 1];
    let mut second_moment = vec![0.0; k + 1];
    let mut se_mean = vec![0.0; k + 1];
    let mut se_second = vec![0.0; k + 1];
    for topic in 1..=k {
        let mut wx = 0.0;
        let mut wx2 = 0.0;
        for s in 0..samples {
            let x = draws[s * k + topic - 1];
            wx += weights[s] * x;
            wx2 += weights[s] * x * x;
        }
        let mu = wx / w_sum;
        let mu2 = wx2 / w_sum;
        let mut var_mu = 0.0;
        let mut var_mu2 = 0.0;
        for s in 0..samples {
            let x = draws[s * k + topic - 1];
            var_mu += (weights[s] * (x - mu)).powi(2);
            var_mu2 += (weights[s] * (x * x - mu2)).powi(2);
        }
        mean[topic] = mu;
        second_moment[topic] = mu2;
        se_mean[topic] = var_mu.sqrt() / w_sum;
        se_second[topic] = var_mu2.sqrt() / w_sum;
    }
    Ok(GemPosterior { mean, second_moment, se_mean, se_second, effective_samples })
}

/// One iteration of the exact reference chain at finite truncation: dense
/// Dirichlet rows for Phi, the same z step as the production sampler,
/// explicit urn flags, l from the flags, then the Psi step. Single-threaded.
pub fn gibbs_iteration_exact(
    state: &mut ModelState,
    corpus: &Corpus,
    config: &HdpConfig,
    iteration: u64,
) -> Result<(), StateError> {
    let k_star = config.k_star;

    let mut phi = Vec::with_capacity(k_star as usize + 1);
    phi.push(SparsePhiRow::default());
    for k in 1..=k_star {
        let mut stream = derive_stream(&StreamKey::new(config.seed, iteration, UnitKind::PhiRow, k as u64));
        let dense = draw_dirichlet_row(&mut stream, state.n.row(k), config.beta, corpus.vocab_size())?;
        let entries: Vec<(u32, f64)> = dense
            .into_iter()
            .enumerate()
            .filter(|&(_, p)| p > 0.0)
            .map(|(v, p)| (v as u32, p))
            .collect();
        phi.push(SparsePhiRow::from_probabilities(entries));
    }
    state.phi = phi;
    state.phi_cols = rebuild_phi_columns(&state.phi, corpus.vocab_size());

    let aliases = build_word_aliases(&state.phi_cols, &state.psi, config.alpha);
    let mut all_flags = Vec::with_capacity(state.docs.len());
    for (d, doc) in state.docs.iter_mut().enumerate() {
        let mut stream = derive_stream(&StreamKey::new(config.seed, iteration, UnitKind::Document, d as u64));
        let (moves, _) = sample_document(&mut stream, corpus.doc(d), doc, &state.phi_cols, &aliases)?;
        for TokenMove { word, from, to } in moves {
            state.n.decrement(from, word);
            state.n.increment(to, word);
        }
        all_flags.push(sample_b_flags(&mut stream, &doc.z, &state.psi, config.alpha));
    }

    let z: Vec<Vec<u32>> = state.docs.iter().map(|d| d.z.clone()).collect();
    state.l = l_from_flags(&z, &all_flags, k_star);
    state.dtable = rebuild_dtable(state.docs.iter().map(|d| &d.m), k_star);

    let mut psi_stream = derive_stream(&StreamKey::new(config.seed, iteration, UnitKind::Psi, 0));
    state.psi = sample_psi(&mut psi_stream, &state.l, config.gamma, k_star)?;
    Ok(())
}
