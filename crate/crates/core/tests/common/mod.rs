//! Brute-force references shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use samspec::sam::StateId;
use samspec::spectrum::state_next_distribution;
use samspec::{Automaton, TokenStream};

/// Every distinct substring of `tokens` with its set of zero-based end positions.
pub struct EndposOracle {
    pub tokens: Vec<u32>,
    pub endpos: HashMap<Vec<u32>, BTreeSet<usize>>,
}

impl EndposOracle {
    pub fn new(tokens: &[u32]) -> Self {
        let mut endpos: HashMap<Vec<u32>, BTreeSet<usize>> = HashMap::new();
        for i in 0..tokens.len() {
            for j in i + 1..=tokens.len() {
                endpos.entry(tokens[i..j].to_vec()).or_default().insert(j - 1);
            }
        }
        EndposOracle {
            tokens: tokens.to_vec(),
            endpos,
        }
    }

    pub fn distinct_substrings(&self) -> u64 {
        self.endpos.len() as u64
    }

    /// Substrings grouped by endpos set.
    pub fn classes(&self) -> BTreeMap<BTreeSet<usize>, Vec<Vec<u32>>> {
        let mut out: BTreeMap<BTreeSet<usize>, Vec<Vec<u32>>> = BTreeMap::new();
        for (s, e) in &self.endpos {
            out.entry(e.clone()).or_default().push(s.clone());
        }
        out
    }

    /// Tally of the token following each occurrence of `pattern`.
    pub fn next_counts(&self, pattern: &[u32]) -> BTreeMap<u32, u64> {
        let mut out = BTreeMap::new();
        if let Some(ends) = self.endpos.get(pattern) {
            for &e in ends {
                if let Some(&t) = self.tokens.get(e + 1) {
                    *out.entry(t).or_insert(0) += 1;
                }
            }
        }
        out
    }
}

/// The longest string of a state, recovered from one of its end positions.
pub fn longest_string(a: &Automaton, tokens: &[u32], s: StateId) -> Vec<u32> {
    let st = a.state(s);
    let end = st.first_end().expect("built in memory");
    tokens[end + 1 - st.len()..=end].to_vec()
}

/// Compares an automaton against the oracle; returns a description of the first mismatch.
pub fn check_automaton(a: &Automaton, stream: &TokenStream) -> Result<(), String> {
    let tokens = stream.tokens();
    let oracle = EndposOracle::new(tokens);
    let classes = oracle.classes();
    if a.state_count() != classes.len() + 1 {
        return Err(format!("{} states vs {} classes + root", a.state_count(), classes.len()));
    }
    if samspec::distinct_substring_count(a) != oracle.distinct_substrings() {
        return Err("distinct substring count".into());
    }
    let mut seen = BTreeSet::new();
    for s in 1..a.state_count() as StateId {
        let st = a.state(s);
        let longest = longest_string(a, tokens, s);
        let ends = oracle.endpos.get(&longest).ok_or("longest string not a substring")?;
        let members = &classes[ends];
        let max_len = members.iter().map(Vec::len).max().unwrap();
        let min_len = members.iter().map(Vec::len).min().unwrap();
        let link_len = a.state(st.link().ok_or("missing link")?).len();
        if max_len != st.len() || min_len != link_len + 1 || members.len() != st.len() - link_len {
            return Err(format!("state {s}: class lengths"));
        }
        if st.occ() != ends.len() as u64 {
            return Err(format!("state {s}: occ {} vs {}", st.occ(), ends.len()));
        }
        for &(c, target) in st.transitions() {
            let mut ext = longest.clone();
            ext.push(c);
            let want = oracle.endpos.get(&ext).ok_or("transition to a non-substring")?;
            let got = oracle.endpos.get(&longest_string(a, tokens, target)).unwrap();
            if want != got {
                return Err(format!("state {s}: transition on {c}"));
            }
        }
        let next = oracle.next_counts(&longest);
        if next.len() != st.transitions().len() {
            return Err(format!("state {s}: missing transitions"));
        }
        if !seen.insert(ends.clone()) {
            return Err(format!("state {s}: duplicate class"));
        }
    }
    for pattern in oracle.endpos.keys() {
        if !a.accepts(pattern) {
            return Err(format!("rejects substring {pattern:?}"));
        }
    }
    Ok(())
}

/// Brute-force `P(next | s)` against the automaton's, to `tol`.
pub fn check_next_distributions(a: &Automaton, stream: &TokenStream, tol: f64) -> Result<(), String> {
    let oracle = EndposOracle::new(stream.tokens());
    for s in 1..a.state_count() as StateId {
        let counts = oracle.next_counts(&longest_string(a, stream.tokens(), s));
        let total: u64 = counts.values().sum();
        match state_next_distribution(a, s, stream.vocab_size()) {
            None if total == 0 => {}
            None => return Err(format!("state {s}: empty but has continuations")),
            Some(d) => {
                if d.entries().len() != counts.len() {
                    return Err(format!("state {s}: support"));
                }
                for (&t, &c) in &counts {
                    if (d.prob(t) - c as f64 / total as f64).abs() > tol {
                        return Err(format!("state {s}: P({t})"));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Brute-force `E(s)` for every state, in nats, from raw endpos tallies.
pub fn brute_contributions(a: &Automaton, stream: &TokenStream) -> Vec<f64> {
    let tokens = stream.tokens();
    let oracle = EndposOracle::new(tokens);
    let mut unigram: BTreeMap<u32, f64> = BTreeMap::new();
    for &t in tokens {
        *unigram.entry(t).or_insert(0.0) += 1.0 / tokens.len() as f64;
    }
    let occ: Vec<f64> = (0..a.state_count() as StateId)
        .map(|s| {
            if s == 0 {
                0.0
            } else {
                oracle.endpos[&longest_string(a, tokens, s)].len() as f64
            }
        })
        .collect();
    let total: f64 = occ.iter().sum();
    (0..a.state_count() as StateId)
        .map(|s| {
            if s == 0 {
                return 0.0;
            }
            let counts = oracle.next_counts(&longest_string(a, tokens, s));
            let n: u64 = counts.values().sum();
            let kl: f64 = counts
                .iter()
                .map(|(t, &c)| {
                    let p = c as f64 / n as f64;
                    p * (p / unigram[t]).ln()
                })
                .sum();
            occ[s as usize] / total * kl.max(0.0)
        })
        .collect()
}

/// `min { K : T(K) <= ratio }` by linear scan over an explicitly summed tail, with
/// the endpoint overrides.
pub fn linear_cutoff(weights: &[f64], ratio: f64) -> usize {
    let m = weights.len();
    if ratio == 1.0 {
        return 1;
    }
    if ratio == 0.0 {
        return m;
    }
    for k in 1..=m {
        let tail: f64 = weights[k..].iter().rev().sum();
        if tail <= ratio {
            return k;
        }
    }
    m
}

/// Random stream of length `1..=max_len` over an alphabet of `2..=8` tokens.
pub fn random_stream(rng: &mut ChaCha8Rng, max_len: usize) -> TokenStream {
    let alphabet = rng.random_range(2..=8u32);
    let len = rng.random_range(1..=max_len);
    let tokens = (0..len).map(|_| rng.random_range(0..alphabet)).collect();
    TokenStream::new(tokens, alphabet).unwrap()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Proptest strategy for small streams with alphabets of 2 to 8 tokens.
pub fn small_stream(max_len: usize) -> impl Strategy<Value = TokenStream> {
    (2u32..=8).prop_flat_map(move |v| {
        prop::collection::vec(0..v, 1..=max_len).prop_map(move |t| TokenStream::new(t, v).unwrap())
    })
}

/// `w_k = k^exponent` for `k = 1..=m`, not normalized.
pub fn power_law(m: usize, exponent: f64) -> Vec<f64> {
    (1..=m).map(|k| (k as f64).powf(exponent)).collect()
}

/// Normalized raw spectrum exactly as the report computes it.
pub fn report_spectrum(stream: &TokenStream, prepared: usize, alpha: f64) -> samspec::Spectrum {
    let s = samspec::prepare_corpus(stream, prepared).unwrap();
    let a = Automaton::from_stream(&s);
    let base = samspec::global_next_distribution(&s, alpha).unwrap();
    samspec::normalize_spectrum(&samspec::global_kl_spectrum(&a, &base).unwrap()).unwrap()
}

/// Losses whose inferred cutoffs are exactly `K = N / 1000`: the largest excess
/// anchors `K = 1`, zero excess anchors `K = M`, and each interior ratio sits
/// halfway down the tail step at its target rank.
pub fn exact_frontier_curve(name: &str, sp: &samspec::Spectrum, interior: &[usize]) -> samspec::LossCurve {
    use samspec::fit::LossPoint;
    let tail = samspec::TailMass::new(sp).unwrap();
    let mut ks = vec![1];
    ks.extend_from_slice(interior);
    ks.push(sp.len());
    let points = ks
        .iter()
        .map(|&k| {
            let excess = if k == 1 {
                1.0
            } else if k == sp.len() {
                0.0
            } else {
                let w = sp.weights()[k - 1];
                assert!(w > 0.0, "rank {k} has zero weight");
                tail.at(k).unwrap() + w / 2.0
            };
            LossPoint {
                n: 1000 * k as u64,
                loss: 2.0 + excess,
            }
        })
        .collect();
    samspec::LossCurve::new(name, points).unwrap()
}

/// Three seeded Markov corpora under `dir` plus planted loss curves for each.
pub fn report_fixture(dir: &std::path::Path) -> (samspec::report::RunConfig, Vec<samspec::LossCurve>) {
    use samspec::synth::{generate_markov_corpus, MarkovSpec};
    let mut config = samspec::report::RunConfig {
        prepared_size: 6_000,
        tail_windows: vec![(10.0, 1_000.0), (30.0, 3_000.0)],
        ..Default::default()
    };
    let mut curves = Vec::new();
    for (i, fwd) in [0.6, 0.75, 0.9].into_iter().enumerate() {
        let o = (1.0 - fwd) / 2.0;
        let spec = MarkovSpec {
            n_states: 3,
            vocab_size: 9,
            transitions: vec![vec![o, fwd, o], vec![o, o, fwd], vec![fwd, o, o]],
            emissions: (0..3u32)
                .map(|h| vec![(h * 3, 0.5), (h * 3 + 1, 0.3), (h * 3 + 2, 0.2)])
                .collect(),
            seed: 11 + i as u64,
        };
        let stream = generate_markov_corpus(&spec, 8_000).unwrap();
        let name = format!("markov{i}");
        let path = dir.join(format!("{name}.toks"));
        stream.save(&path).unwrap();
        config.datasets.insert(name.clone(), path);
        let sp = report_spectrum(&stream, config.prepared_size, config.alpha);
        curves.push(exact_frontier_curve(&name, &sp, &[10, 100]));
    }
    (config, curves)
}

/// Every file under `root`, keyed by relative path.
pub fn read_tree(root: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(base: &std::path::Path, dir: &std::path::Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(base, &path, out);
            } else {
                let rel = path.strip_prefix(base).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}
