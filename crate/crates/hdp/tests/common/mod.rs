#![allow(dead_code)]

use std::collections::BTreeMap;

use hdp::corpus::Corpus;
use hdp::oracle::draw_dirichlet_row;
use hdp::randdist::{derive_stream, Stream, StreamKey, UnitKind};
use rand::Rng;

pub const SYN_DOCS: usize = 50;
pub const SYN_VOCAB: u32 = 30;
pub const SYN_DOC_LEN: usize = 40;
pub const SYN_TOPICS: usize = 4;

fn sample_categorical(stream: &mut Stream, probs: &[f64]) -> usize {
    let u = stream.random::<f64>();
    let mut cum = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    probs.len() - 1
}

/// 4-topic finite-mixture corpus: each topic concentrates on its own block of
/// word types (with a little off-block smoothing), document mixtures drawn
/// from a Dirichlet. Every word type ends up with a healthy corpus count, so
/// the sparse sampler never sees pathological one-off words.
pub fn synthetic_corpus(seed: u64) -> Corpus {
    let mut stream = derive_stream(&StreamKey::new(seed, 0, UnitKind::Init, 0));
    let blocks: [(u32, u32); SYN_TOPICS] = [(0, 8), (8, 15), (15, 23), (23, 30)];
    let topic_word: Vec<Vec<f64>> = blocks
        .iter()
        .map(|&(lo, hi)| {
            let in_block = 0.96 / (hi - lo) as f64;
            let off_block = 0.04 / (SYN_VOCAB - (hi - lo)) as f64;
            (0..SYN_VOCAB).map(|v| if v >= lo && v < hi { in_block } else { off_block }).collect()
        })
        .collect();

    let empty = BTreeMap::new();
    let mut docs = Vec::with_capacity(SYN_DOCS);
    for _ in 0..SYN_DOCS {
        let theta = draw_dirichlet_row(&mut stream, &empty, 0.5, SYN_TOPICS as u32).unwrap();
        let mut doc = Vec::with_capacity(SYN_DOC_LEN);
        for _ in 0..SYN_DOC_LEN {
            let topic = sample_categorical(&mut stream, &theta);
            doc.push(sample_categorical(&mut stream, &topic_word[topic]) as u32);
        }
        docs.push(doc);
    }
    let corpus = Corpus::new(docs, SYN_VOCAB).unwrap();

    let mut word_counts = vec![0u64; SYN_VOCAB as usize];
    for doc in corpus.docs() {
        for &w in doc {
            word_counts[w as usize] += 1;
        }
    }
    let min_count = word_counts.iter().min().copied().unwrap_or(0);
    assert!(min_count >= 10, "synthetic corpus has a rare word (count {min_count}); pick another seed");
    corpus
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Poisson pmf over 0..len-1 with the tail mass folded into the last bin.
pub fn poisson_pmf_with_tail(rate: f64, len: usize) -> Vec<f64> {
    let mut pmf = vec![0.0f64; len];
    pmf[0] = (-rate).exp();
    for k in 1..len {
        pmf[k] = pmf[k - 1] * rate / k as f64;
    }
    let spill: f64 = 1.0 - pmf.iter().sum::<f64>();
    pmf[len - 1] += spill.max(0.0);
    pmf
}
