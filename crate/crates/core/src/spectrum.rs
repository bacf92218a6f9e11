//! Next-token distributions, KL contributions and ranked spectra.
//!
//! A state's contribution is `E(s) = mu(s) * KL(P(next | s) || P(next))` where
//! the next-token counts of `s` are `count(s, c) = occ(delta(s, c))`. Spectra are
//! kept in descending order; ranks are 1-based.

use std::fmt;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenStream;
use crate::error::{Error, Result};
use crate::sam::{sort_descending, Automaton, StateId, ROOT};

/// Tolerance on probability sums.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Sparse probability distribution over token ids.
///
/// Tokens listed in `entries` carry their own probability; every other id of the
/// vocabulary carries `floor` (zero unless the distribution is add-alpha smoothed).
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution {
    entries: Vec<(u32, f64)>,
    floor: f64,
    vocab_size: u32,
}

impl Distribution {
    /// Builds from `(token, probability)` pairs in any order; duplicate tokens are rejected.
    pub fn from_pairs(mut entries: Vec<(u32, f64)>, vocab_size: u32) -> Result<Self> {
        entries.sort_by_key(|&(t, _)| t);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Domain("duplicate token in distribution".into()));
        }
        let d = Distribution {
            entries,
            floor: 0.0,
            vocab_size,
        };
        d.validate()?;
        Ok(d)
    }

    /// Normalizes nonnegative counts.
    pub fn from_counts(counts: &[(u32, f64)], vocab_size: u32) -> Result<Self> {
        let total: f64 = counts.iter().map(|&(_, c)| c).sum();
        if total <= 0.0 {
            return Err(Error::Domain("distribution needs positive total count".into()));
        }
        Distribution::from_pairs(
            counts
                .iter()
                .filter(|&&(_, c)| c > 0.0)
                .map(|&(t, c)| (t, c / total))
                .collect(),
            vocab_size,
        )
    }

    fn validate(&self) -> Result<()> {
        if self
            .entries
            .iter()
            .any(|&(t, p)| !(p >= 0.0 && p.is_finite()) || t >= self.vocab_size)
        {
            return Err(Error::Domain("invalid probability entry".into()));
        }
        let sum = self.total();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Domain(format!("probabilities sum to {sum}")));
        }
        Ok(())
    }

    fn total(&self) -> f64 {
        let listed: f64 = self.entries.iter().map(|&(_, p)| p).sum();
        listed + self.floor * (f64::from(self.vocab_size) - self.entries.len() as f64)
    }

    pub fn prob(&self, token: u32) -> f64 {
        match self.entries.binary_search_by_key(&token, |&(t, _)| t) {
            Ok(i) => self.entries[i].1,
            Err(_) if token < self.vocab_size => self.floor,
            Err(_) => 0.0,
        }
    }

    /// Explicitly listed `(token, probability)` pairs, sorted by token.
    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    /// Probability shared by every unlisted id.
    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    /// Number of tokens with positive probability.
    pub fn support_size(&self) -> usize {
        let listed = self.entries.iter().filter(|&&(_, p)| p > 0.0).count();
        if self.floor > 0.0 {
            listed + self.vocab_size as usize - self.entries.len()
        } else {
            listed
        }
    }

    /// Mass-weighted average of distributions with disjoint-or-overlapping sparse support.
    pub(crate) fn mixture(parts: &[(f64, &Distribution)]) -> Result<Distribution> {
        let total: f64 = parts.iter().map(|&(w, _)| w).sum();
        if total <= 0.0 {
            return Err(Error::Domain("mixture needs positive weight".into()));
        }
        let vocab = parts.iter().map(|(_, d)| d.vocab_size).max().unwrap_or(0);
        let mut acc: Vec<(u32, f64)> = Vec::new();
        for &(w, d) in parts {
            acc = merge_sparse(&acc, 1.0, &d.entries, w / total);
        }
        let mut d = Distribution {
            entries: acc,
            floor: 0.0,
            vocab_size: vocab,
        };
        renormalize(&mut d.entries);
        d.validate()?;
        Ok(d)
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (t, p)) in self.entries.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{t}: {p}")?;
        }
        if self.floor > 0.0 {
            write!(f, ", *: {}", self.floor)?;
        }
        write!(f, "}}")
    }
}

/// `a * sa + b * sb` over sorted sparse vectors.
pub(crate) fn merge_sparse(a: &[(u32, f64)], sa: f64, b: &[(u32, f64)], sb: f64) -> Vec<(u32, f64)> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        match (a.get(i), b.get(j)) {
            (Some(&(ta, pa)), Some(&(tb, pb))) if ta == tb => {
                out.push((ta, pa * sa + pb * sb));
                i += 1;
                j += 1;
            }
            (Some(&(ta, pa)), Some(&(tb, _))) if ta < tb => {
                out.push((ta, pa * sa));
                i += 1;
            }
            (Some(&(ta, pa)), None) => {
                out.push((ta, pa * sa));
                i += 1;
            }
            (_, Some(&(tb, pb))) => {
                out.push((tb, pb * sb));
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    out
}

fn renormalize(entries: &mut [(u32, f64)]) {
    let total: f64 = entries.iter().map(|&(_, p)| p).sum();
    if total > 0.0 {
        for e in entries.iter_mut() {
            e.1 /= total;
        }
    }
}

/// Corpus-wide next-token baseline. `alpha = 0` gives raw unigram frequencies;
/// `alpha > 0` gives `(count + alpha) / (n + alpha * vocab)` over the full vocabulary.
pub fn global_next_distribution(stream: &TokenStream, alpha: f64) -> Result<Distribution> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Domain(format!("smoothing weight {alpha} must be >= 0")));
    }
    let mut sorted = stream.tokens().to_vec();
    sorted.sort_unstable();
    let mut counts: Vec<(u32, u64)> = Vec::new();
    for t in sorted {
        match counts.last_mut() {
            Some((last, c)) if *last == t => *c += 1,
            _ => counts.push((t, 1)),
        }
    }
    let n = stream.len() as f64;
    let vocab = stream.vocab_size();
    let denom = n + alpha * f64::from(vocab);
    let entries = counts
        .into_iter()
        .map(|(t, c)| (t, (c as f64 + alpha) / denom))
        .collect();
    let d = Distribution {
        entries,
        floor: alpha / denom,
        vocab_size: vocab,
    };
    d.validate()?;
    Ok(d)
}

/// Raw next-token counts of a state: `(token, occ(target))` for each outgoing transition.
pub fn state_next_counts(automaton: &Automaton, state: StateId) -> Vec<(u32, u64)> {
    automaton
        .state(state)
        .transitions()
        .iter()
        .map(|&(t, target)| (t, automaton.state(target).occ()))
        .collect()
}

/// `P(next | s)`, or `None` when the state has no outgoing transitions.
pub fn state_next_distribution(
    automaton: &Automaton,
    state: StateId,
    vocab_size: u32,
) -> Option<Distribution> {
    assert!(state != ROOT, "the root has no next-token distribution");
    let counts = state_next_counts(automaton, state);
    let total: u64 = counts.iter().map(|&(_, c)| c).sum();
    if total == 0 {
        return None;
    }
    let entries = counts
        .into_iter()
        .map(|(t, c)| (t, c as f64 / total as f64))
        .collect();
    Some(Distribution {
        entries,
        floor: 0.0,
        vocab_size,
    })
}

/// `KL(p || q)` in nats. Terms with `p(t) = 0` contribute nothing.
pub fn kl_divergence(p: &Distribution, q: &Distribution) -> Result<f64> {
    let mut kl = 0.0;
    for &(t, pt) in &p.entries {
        if pt == 0.0 {
            continue;
        }
        let qt = q.prob(t);
        if qt <= 0.0 {
            return Err(Error::BaselineSupportViolation(t));
        }
        kl += pt * (pt / qt).ln();
    }
    if p.floor > 0.0 {
        for t in 0..p.vocab_size {
            if p.entries.binary_search_by_key(&t, |&(x, _)| x).is_ok() {
                continue;
            }
            let qt = q.prob(t);
            if qt <= 0.0 {
                return Err(Error::BaselineSupportViolation(t));
            }
            kl += p.floor * (p.floor / qt).ln();
        }
    }
    Ok(kl.max(0.0))
}

/// Jensen-Shannon divergence in nats, clamped to `[0, ln 2]`.
pub fn js_divergence(p: &Distribution, q: &Distribution) -> f64 {
    let m = merge_sparse(&p.entries, 0.5, &q.entries, 0.5);
    let half_kl = |d: &Distribution| -> f64 {
        d.entries
            .iter()
            .filter(|&&(_, pt)| pt > 0.0)
            .map(|&(t, pt)| {
                let mt = m[m.binary_search_by_key(&t, |&(x, _)| x).unwrap()].1;
                pt * (pt / mt).ln()
            })
            .sum()
    };
    (0.5 * half_kl(p) + 0.5 * half_kl(q)).clamp(0.0, std::f64::consts::LN_2)
}

/// `E(s)` indexed by state id; the root and states without continuations get 0.
pub fn state_contributions(automaton: &Automaton, baseline: &Distribution) -> Result<Vec<f64>> {
    let masses = automaton.masses();
    let vocab = baseline.vocab_size();
    (0..automaton.state_count() as StateId)
        .into_par_iter()
        .map(|s| {
            if s == ROOT {
                return Ok(0.0);
            }
            match state_next_distribution(automaton, s, vocab) {
                Some(p) => Ok(masses[s as usize] * kl_divergence(&p, baseline)?),
                None => Ok(0.0),
            }
        })
        .collect()
}

/// Descending `E(s)` over all non-root states, ties by ascending state id.
pub fn global_kl_spectrum(automaton: &Automaton, baseline: &Distribution) -> Result<Spectrum> {
    let contributions = state_contributions(automaton, baseline)?;
    let mut ranked: Vec<(StateId, f64)> = contributions
        .into_iter()
        .enumerate()
        .skip(1)
        .map(|(i, e)| (i as StateId, e))
        .collect();
    sort_descending(&mut ranked);
    Ok(Spectrum::from_sorted(
        ranked.into_iter().map(|(_, e)| e).collect(),
        Provenance::GlobalKlRaw,
        automaton.source_length(),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    StateMass,
    GlobalKlRaw,
    GlobalKlSmoothed,
    Quotient,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::StateMass => "state-mass",
            Provenance::GlobalKlRaw => "global-kl-raw",
            Provenance::GlobalKlSmoothed => "global-kl-smoothed",
            Provenance::Quotient => "quotient",
        }
    }
}

/// Descending nonnegative weights.
///
/// A per-rank spectrum places weight `k` at rank `k + 1`. A log-binned spectrum
/// instead carries an explicit (generally fractional) rank per point and, when
/// known, the number of original ranks each point stands for.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    weights: Vec<f64>,
    ranks: Option<Vec<f64>>,
    members: Option<Vec<usize>>,
    normalized: bool,
    provenance: Provenance,
    source_size: usize,
}

impl Spectrum {
    /// Per-rank spectrum from weights already in descending order.
    pub fn from_sorted(weights: Vec<f64>, provenance: Provenance, source_size: usize) -> Self {
        debug_assert!(weights.windows(2).all(|w| w[0] >= w[1]));
        Spectrum {
            weights,
            ranks: None,
            members: None,
            normalized: false,
            provenance,
            source_size,
        }
    }

    /// Sorts arbitrary nonnegative weights into a per-rank spectrum.
    pub fn from_unsorted(mut weights: Vec<f64>, provenance: Provenance, source_size: usize) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Domain("spectrum weights must be finite and nonnegative".into()));
        }
        weights.sort_by(|a, b| b.total_cmp(a));
        Ok(Spectrum::from_sorted(weights, provenance, source_size))
    }

    pub(crate) fn with_normalized_flag(mut self, normalized: bool) -> Self {
        self.normalized = normalized;
        self
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn source_size(&self) -> usize {
        self.source_size
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// True when weights sit at consecutive integer ranks 1..=len.
    pub fn is_per_rank(&self) -> bool {
        self.ranks.is_none()
    }

    pub fn rank(&self, index: usize) -> f64 {
        match &self.ranks {
            Some(r) => r[index],
            None => (index + 1) as f64,
        }
    }

    /// `(rank, weight)` pairs in spectrum order.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.weights
            .iter()
            .enumerate()
            .map(move |(i, &w)| (self.rank(i), w))
    }

    /// Per-rank view: each binned point is repeated once per member rank.
    pub fn expand(&self) -> Result<Spectrum> {
        if self.ranks.is_none() {
            return Ok(self.clone());
        }
        let members = self
            .members
            .as_ref()
            .ok_or_else(|| Error::Domain("binned spectrum has no member counts to expand".into()))?;
        let mut weights = Vec::with_capacity(members.iter().sum());
        for (&w, &m) in self.weights.iter().zip(members) {
            weights.extend(std::iter::repeat_n(w, m));
        }
        weights.sort_by(|a, b| b.total_cmp(a));
        Ok(Spectrum::from_sorted(weights, self.provenance, self.source_size))
    }

    /// CSV with header `rank,weight`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["rank", "weight"])?;
        for (i, &weight) in self.weights.iter().enumerate() {
            let rank = match &self.ranks {
                Some(r) => r[i].to_string(),
                None => (i + 1).to_string(),
            };
            w.write_record([rank, weight.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Reads `rank,weight` rows. Rows must be in descending weight order. Ranks
    /// 1, 2, 3, ... give a per-rank spectrum; anything else is kept as binned points.
    pub fn read_csv<R: Read>(input: R) -> Result<Spectrum> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["rank", "weight"] {
            return Err(Error::Parse("spectrum csv header must be rank,weight".into()));
        }
        let mut ranks = Vec::new();
        let mut weights = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("{:?}: {e}", &rec[i])))
            };
            ranks.push(parse(0)?);
            weights.push(parse(1)?);
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Parse("weights must be finite and nonnegative".into()));
        }
        if !weights.windows(2).all(|w| w[0] >= w[1]) {
            return Err(Error::Parse("weights must be in descending order".into()));
        }
        let per_rank = ranks.iter().enumerate().all(|(i, &r)| r == (i + 1) as f64);
        let normalized = (weights.iter().sum::<f64>() - 1.0).abs() <= SUM_TOLERANCE;
        Ok(Spectrum {
            weights,
            ranks: (!per_rank).then_some(ranks),
            members: None,
            normalized,
            provenance: if per_rank {
                Provenance::GlobalKlRaw
            } else {
                Provenance::GlobalKlSmoothed
            },
            source_size: 0,
        })
    }
}

/// Divides every weight by the total.
pub fn normalize_spectrum(spectrum: &Spectrum) -> Result<Spectrum> {
    if spectrum.normalized {
        return Ok(spectrum.clone());
    }
    let total = spectrum.total();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::DegenerateSpectrum);
    }
    let mut out = spectrum.clone();
    for w in &mut out.weights {
        *w /= total;
    }
    out.normalized = true;
    Ok(out)
}

/// Residual tail mass `T(K)` with O(1) queries.
#[derive(Clone, Debug)]
pub struct TailMass {
    /// `suffix[k] = sum of weights at ranks > k`; `suffix[len] = 0`.
    suffix: Vec<f64>,
}

impl TailMass {
    pub fn new(spectrum: &Spectrum) -> Result<Self> {
        if !spectrum.is_normalized() {
            return Err(Error::Domain("tail mass needs a normalized spectrum".into()));
        }
        if !spectrum.is_per_rank() {
            return Err(Error::Domain("tail mass needs a per-rank spectrum".into()));
        }
        let w = spectrum.weights();
        let mut suffix = vec![0.0; w.len() + 1];
        for k in (0..w.len()).rev() {
            suffix[k] = suffix[k + 1] + w[k];
        }
        Ok(TailMass { suffix })
    }

    /// Number of ranks `M`.
    pub fn len(&self) -> usize {
        self.suffix.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn at(&self, k: usize) -> Result<f64> {
        self.suffix.get(k).copied().ok_or(Error::RankOutOfRange {
            rank: k,
            len: self.len(),
        })
    }

    /// Non-increasing suffix sums, index 0..=M.
    pub fn as_slice(&self) -> &[f64] {
        &self.suffix
    }

    /// Smallest `K` in `0..=M` with `T(K) <= threshold`.
    pub fn smallest_rank_at_most(&self, threshold: f64) -> usize {
        self.suffix.partition_point(|&t| t > threshold)
    }
}

/// `T(K) = sum_{k > K} w_k`.
pub fn tail_mass(spectrum: &Spectrum, k: usize) -> Result<f64> {
    TailMass::new(spectrum)?.at(k)
}

/// Index of the geometric bin `[10^(i/b), 10^((i+1)/b))` containing `rank`.
fn log_bin(rank: f64, bins_per_decade: u32) -> i64 {
    let b = f64::from(bins_per_decade);
    let edge = |i: i64| 10f64.powf(i as f64 / b);
    let mut i = (rank.log10() * b).floor() as i64;
    while edge(i + 1) <= rank {
        i += 1;
    }
    while edge(i) > rank {
        i -= 1;
    }
    i
}

/// Log-binned averaging: each geometric rank bin collapses to one point at the
/// geometric-mean rank of its members, carrying their arithmetic-mean weight.
pub fn smooth_spectrum(spectrum: &Spectrum, bins_per_decade: u32) -> Result<Spectrum> {
    if spectrum.is_empty() {
        return Err(Error::Domain("cannot smooth an empty spectrum".into()));
    }
    if bins_per_decade == 0 {
        return Err(Error::Domain("bins per decade must be at least 1".into()));
    }
    let member_count = |i: usize| spectrum.members.as_ref().map_or(1, |m| m[i]);

    // Points ordered by rank, so each bin is a contiguous run.
    let mut order: Vec<usize> = (0..spectrum.len()).collect();
    order.sort_by(|&a, &b| spectrum.rank(a).total_cmp(&spectrum.rank(b)));

    let mut bins: Vec<(f64, f64, usize)> = Vec::new(); // (rank, weight, members)
    let mut current: Option<(i64, f64, f64, usize)> = None; // (bin, sum ln rank, sum weight, members)
    for &i in &order {
        let rank = spectrum.rank(i);
        let m = member_count(i);
        let bin = log_bin(rank, bins_per_decade);
        let mf = m as f64;
        match &mut current {
            Some((b, ln_sum, w_sum, count)) if *b == bin => {
                *ln_sum += mf * rank.ln();
                *w_sum += mf * spectrum.weights[i];
                *count += m;
            }
            _ => {
                if let Some((_, ln_sum, w_sum, count)) = current.take() {
                    let c = count as f64;
                    bins.push(((ln_sum / c).exp(), w_sum / c, count));
                }
                current = Some((bin, mf * rank.ln(), mf * spectrum.weights[i], m));
            }
        }
    }
    if let Some((_, ln_sum, w_sum, count)) = current {
        let c = count as f64;
        bins.push(((ln_sum / c).exp(), w_sum / c, count));
    }
    // Stable, so equal means keep rank order.
    bins.sort_by(|a, b| b.1.total_cmp(&a.1));

    Ok(Spectrum {
        weights: bins.iter().map(|b| b.1).collect(),
        ranks: Some(bins.iter().map(|b| b.0).collect()),
        members: Some(bins.iter().map(|b| b.2).collect()),
        normalized: false,
        provenance: Provenance::GlobalKlSmoothed,
        source_size: spectrum.source_size,
    })
}
