//! Reproducible, schedule-independent random streams and the distribution
//! primitives used by every sampler step.
//!
//! Each parallel work unit (a topic row, a document, ...) derives its own
//! generator from a [`StreamKey`], so results depend only on the key and never
//! on thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Binomial, Distribution, Poisson};
use thiserror::Error;

/// Generator owned by a single work unit.
pub type Stream = ChaCha8Rng;

#[derive(Debug, Error, PartialEq)]
pub enum DistError {
    #[error("beta parameters must be positive, got a={a}, b={b}")]
    InvalidBeta { a: f64, b: f64 },
    #[error("poisson rate must be finite and nonnegative, got {0}")]
    InvalidPoissonRate(f64),
    #[error("binomial probability must lie in [0,1], got {0}")]
    InvalidBinomialProb(f64),
    #[error("alias weight at support position {index} is invalid: {weight}")]
    InvalidWeight { index: usize, weight: f64 },
    #[error("cannot draw from an empty alias table")]
    EmptyAliasTable,
}

/// Kind of work unit a stream is derived for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnitKind {
    PhiRow = 1,
    Document = 2,
    LTopic = 3,
    Psi = 4,
    Init = 5,
}

/// Identifies one random stream. Streams with distinct keys are independent;
/// the stream is a pure function of the key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub iteration: u64,
    pub unit_kind: UnitKind,
    pub unit_index: u64,
}

impl StreamKey {
    pub fn new(seed: u64, iteration: u64, unit_kind: UnitKind, unit_index: u64) -> Self {
        Self { seed, iteration, unit_kind, unit_index }
    }
}

// SplitMix64 finalizer; bijective on u64.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Derives the generator for a key. Identical keys give identical streams
/// across runs, thread counts, and schedules.
pub fn derive_stream(key: &StreamKey) -> Stream {
    let mut state = mix(key.seed ^ GOLDEN);
    for word in [key.iteration, key.unit_kind as u64, key.unit_index] {
        state = mix(state.wrapping_add(GOLDEN).wrapping_add(word));
    }
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        state = state.wrapping_add(GOLDEN);
        chunk.copy_from_slice(&mix(state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Beta(a, b) variate.
pub fn draw_beta(stream: &mut Stream, a: f64, b: f64) -> Result<f64, DistError> {
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(DistError::InvalidBeta { a, b });
    }
    let dist = Beta::new(a, b).map_err(|_| DistError::InvalidBeta { a, b })?;
    Ok(dist.sample(stream))
}

/// Poisson(rate) variate; rate 0 is the degenerate point mass at 0.
pub fn draw_poisson(stream: &mut Stream, rate: f64) -> Result<u64, DistError> {
    if !rate.is_finite() || rate < 0.0 {
        return Err(DistError::InvalidPoissonRate(rate));
    }
    if rate == 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(rate).map_err(|_| DistError::InvalidPoissonRate(rate))?;
    Ok(dist.sample(stream) as u64)
}

/// Binomial(trials, p) variate.
pub fn draw_binomial(stream: &mut Stream, trials: u64, p: f64) -> Result<u64, DistError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(DistError::InvalidBinomialProb(p));
    }
    if trials == 0 {
        return Ok(0);
    }
    let dist = Binomial::new(trials, p).map_err(|_| DistError::InvalidBinomialProb(p))?;
    Ok(dist.sample(stream))
}

/// Walker alias table over a sparse support of original indices.
/// Construction is O(K), each draw O(1).
#[derive(Debug, Clone)]
pub struct AliasTable {
    support: Vec<u32>,
    prob: Vec<f64>,
    alias: Vec<u32>,
    total_weight: f64,
}

impl AliasTable {
    /// Builds the table for `weights` over `support` (parallel slices).
    /// All-zero weights yield an empty table with `total_weight` 0.
    pub fn build(support: Vec<u32>, weights: &[f64]) -> Result<Self, DistError> {
        assert_eq!(support.len(), weights.len());
        for (index, &weight) in weights.iter().enumerate() {
            if !weight.is_finite() || weight < 0.0 {
                return Err(DistError::InvalidWeight { index, weight });
            }
        }
        let total_weight: f64 = weights.iter().sum();
        if total_weight <= 0.0 {
            return Ok(Self { support: Vec::new(), prob: Vec::new(), alias: Vec::new(), total_weight: 0.0 });
        }

        let n = weights.len();
        let mut prob: Vec<f64> = weights.iter().map(|w| w * n as f64 / total_weight).collect();
        let mut alias: Vec<u32> = (0..n as u32).collect();
        let mut small: Vec<u32> = Vec::with_capacity(n);
        let mut large: Vec<u32> = Vec::with_capacity(n);
        for (i, &p) in prob.iter().enumerate() {
            if p < 1.0 {
                small.push(i as u32);
            } else {
                large.push(i as u32);
            }
        }
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            alias[s as usize] = l;
            prob[l as usize] -= 1.0 - prob[s as usize];
            if prob[l as usize] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // Residual slots are full columns up to rounding.
        for &i in small.iter().chain(large.iter()) {
            prob[i as usize] = 1.0;
        }

        Ok(Self { support, prob, alias, total_weight })
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Draws an original support index with probability weight / total_weight.
    pub fn draw(&self, stream: &mut Stream) -> Result<u32, DistError> {
        if self.is_empty() {
            return Err(DistError::EmptyAliasTable);
        }
        let n = self.support.len();
        let pos = stream.random::<f64>() * n as f64;
        let slot = (pos as usize).min(n - 1);
        let frac = pos - slot as f64;
        let chosen = if frac < self.prob[slot] { slot } else { self.alias[slot] as usize };
        Ok(self.support[chosen])
    }

    /// Probability mass each support entry receives from the packed columns.
    /// Reconstructs weight_i / total_weight; used to audit construction.
    pub fn implied_probabilities(&self) -> Vec<f64> {
        let n = self.support.len();
        let mut mass = vec![0.0; n];
        for i in 0..n {
            mass[i] += self.prob[i];
            if self.prob[i] < 1.0 {
                mass[self.alias[i] as usize] += 1.0 - self.prob[i];
            }
        }
        for m in &mut mass {
            *m /= n as f64;
        }
        mass
    }

    pub fn support(&self) -> &[u32] {
        &self.support
    }
}
