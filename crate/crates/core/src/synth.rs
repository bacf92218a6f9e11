//! Seeded synthetic fixtures: hidden-Markov corpora and loss curves generated
//! forward from a planted frontier `K*(N)`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenStream;
use crate::error::{Error, Result};
use crate::fit::{LossCurve, LossPoint};
use crate::spectrum::{Spectrum, TailMass, SUM_TOLERANCE};

/// A hidden Markov chain with per-state token emissions.
///
/// ```json
/// {
///   "n_states": 2,
///   "vocab_size": 2,
///   "transitions": [[0.0, 1.0], [1.0, 0.0]],
///   "emissions": [[[0, 1.0]], [[1, 1.0]]],
///   "seed": 7
/// }
/// ```
///
/// `transitions[i][j]` is the probability of moving from hidden state `i` to `j`;
/// `emissions[i]` lists `[token, probability]` pairs for hidden state `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovSpec {
    pub n_states: usize,
    pub vocab_size: u32,
    pub transitions: Vec<Vec<f64>>,
    pub emissions: Vec<Vec<(u32, f64)>>,
    pub seed: u64,
}

impl MarkovSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidMarkovSpec(m));
        if self.n_states == 0 {
            return bad("at least one hidden state is required".into());
        }
        if self.transitions.len() != self.n_states || self.emissions.len() != self.n_states {
            return bad("transition and emission tables must have n_states rows".into());
        }
        for (i, row) in self.transitions.iter().enumerate() {
            if row.len() != self.n_states {
                return bad(format!("transition row {i} has {} entries", row.len()));
            }
            if row.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
                return bad(format!("transition row {i} has an invalid probability"));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > SUM_TOLERANCE {
                return bad(format!("transition row {i} sums to {s}"));
            }
        }
        for (i, row) in self.emissions.iter().enumerate() {
            if row.is_empty() {
                return bad(format!("emission row {i} is empty"));
            }
            if row
                .iter()
                .any(|&(t, p)| t >= self.vocab_size || !(p >= 0.0 && p.is_finite()))
            {
                return bad(format!("emission row {i} has an invalid entry"));
            }
            let s: f64 = row.iter().map(|&(_, p)| p).sum();
            if (s - 1.0).abs() > SUM_TOLERANCE {
                return bad(format!("emission row {i} sums to {s}"));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: MarkovSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Walks the chain from hidden state 0, emitting one token per step.
pub fn generate_markov_corpus(spec: &MarkovSpec, length: usize) -> Result<TokenStream> {
    Ok(generate_with_states(spec, length)?.0)
}

/// Like [`generate_markov_corpus`], also returning the hidden state behind each token.
pub fn generate_with_states(spec: &MarkovSpec, length: usize) -> Result<(TokenStream, Vec<usize>)> {
    spec.validate()?;
    if length < 2 {
        return Err(Error::InvalidStream(format!("length must be at least 2, got {length}")));
    }
    let weighted = |w: Vec<f64>| {
        WeightedIndex::new(w).map_err(|e| Error::InvalidMarkovSpec(e.to_string()))
    };
    let moves = spec
        .transitions
        .iter()
        .map(|row| weighted(row.clone()))
        .collect::<Result<Vec<_>>>()?;
    let emits = spec
        .emissions
        .iter()
        .map(|row| weighted(row.iter().map(|&(_, p)| p).collect()))
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut tokens = Vec::with_capacity(length);
    let mut hidden = Vec::with_capacity(length);
    let mut state = 0usize;
    for _ in 0..length {
        let e = emits[state].sample(&mut rng);
        tokens.push(spec.emissions[state][e].0);
        hidden.push(state);
        state = moves[state].sample(&mut rng);
    }
    Ok((TokenStream::new(tokens, spec.vocab_size)?, hidden))
}

/// `K*(N) = clamp(round(scale * N^gamma), 1, M)`, rounding half up.
pub fn planted_cutoffs(m: usize, gamma: f64, scale: f64, sizes: &[u64]) -> Vec<usize> {
    sizes
        .iter()
        .map(|&n| {
            let k = (scale * (n as f64).powf(gamma) + 0.5).floor();
            if k.is_nan() || k < 1.0 {
                1
            } else if k >= m as f64 {
                m
            } else {
                k as usize
            }
        })
        .collect()
}

/// Loss curve `L(N) = floor + T(K*(N))` realizing the planted frontier exactly.
pub fn planted_frontier_losses(
    dataset: &str,
    spectrum: &Spectrum,
    gamma: f64,
    scale: f64,
    sizes: &[u64],
    floor: f64,
) -> Result<LossCurve> {
    if !(gamma > 0.0 && gamma.is_finite()) || !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Domain("gamma and scale must be positive".into()));
    }
    if !(floor > 0.0 && floor.is_finite()) {
        return Err(Error::Domain("loss floor must be positive".into()));
    }
    let tail = TailMass::new(spectrum)?;
    if tail.is_empty() {
        return Err(Error::DegenerateSpectrum);
    }
    let ks = planted_cutoffs(tail.len(), gamma, scale, sizes);
    let points = sizes
        .iter()
        .zip(ks)
        .map(|(&n, k)| {
            Ok(LossPoint {
                n,
                loss: floor + tail.at(k)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LossCurve::new(dataset, points)
}
