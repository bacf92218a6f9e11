//! Kernel quotient: automaton states merged by next-token kernel similarity.
//!
//! States are visited in descending mass order (ties by id). Each joins the first
//! existing cluster whose mass-weighted centroid kernel lies within `epsilon`
//! Jensen-Shannon divergence of its own kernel, otherwise it opens a new cluster.
//! `epsilon = 0` never merges, so the quotient is the identity on states with
//! continuations.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sam::{sort_descending, Automaton, StateId};
use crate::spectrum::{
    js_divergence, kl_divergence, state_next_distribution, Distribution, Provenance,
    Spectrum,
};

pub const DEFAULT_EPSILON: f64 = 0.05;

#[derive(Clone, Debug)]
pub struct Cluster {
    pub members: Vec<StateId>,
    pub mass: f64,
    pub kernel: Distribution,
}

#[derive(Clone, Debug)]
pub struct QuotientStates {
    pub clusters: Vec<Cluster>,
    pub epsilon: f64,
    source_size: usize,
}

impl QuotientStates {
    pub fn total_mass(&self) -> f64 {
        self.clusters.iter().map(|c| c.mass).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct ClusterView<'a> {
            members: &'a [StateId],
            mass: f64,
            kernel: &'a [(u32, f64)],
        }
        #[derive(Serialize)]
        struct View<'a> {
            epsilon: f64,
            clusters: Vec<ClusterView<'a>>,
        }
        let view = View {
            epsilon: self.epsilon,
            clusters: self
                .clusters
                .iter()
                .map(|c| ClusterView {
                    members: &c.members,
                    mass: c.mass,
                    kernel: c.kernel.entries(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&view)?)
    }
}

/// Greedy sequential clustering of the states that have a next-token kernel.
pub fn kernel_quotient(automaton: &Automaton, epsilon: f64, vocab_size: u32) -> Result<QuotientStates> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::Domain(format!("epsilon {epsilon} must be >= 0")));
    }
    let masses = automaton.masses();
    let mut order: Vec<(StateId, f64)> = (1..automaton.state_count() as StateId)
        .map(|s| (s, masses[s as usize]))
        .collect();
    sort_descending(&mut order);

    let mut clusters: Vec<Cluster> = Vec::new();
    for (s, mass) in order {
        let Some(kernel) = state_next_distribution(automaton, s, vocab_size) else {
            continue;
        };
        let target = if epsilon > 0.0 {
            clusters
                .iter()
                .position(|c| js_divergence(&c.kernel, &kernel) <= epsilon)
        } else {
            None
        };
        match target {
            Some(i) => {
                let c = &mut clusters[i];
                let total = c.mass + mass;
                c.kernel = Distribution::mixture(&[(c.mass, &c.kernel), (mass, &kernel)])?;
                c.mass = total;
                c.members.push(s);
            }
            None => clusters.push(Cluster {
                members: vec![s],
                mass,
                kernel,
            }),
        }
    }
    Ok(QuotientStates {
        clusters,
        epsilon,
        source_size: automaton.source_length(),
    })
}

/// Descending `mass(C) * KL(kernel(C) || baseline)`, ties by cluster order.
pub fn quotient_spectrum(quotient: &QuotientStates, baseline: &Distribution) -> Result<Spectrum> {
    let mut ranked = quotient
        .clusters
        .iter()
        .enumerate()
        .map(|(i, c)| Ok((i as StateId, c.mass * kl_divergence(&c.kernel, baseline)?)))
        .collect::<Result<Vec<_>>>()?;
    sort_descending(&mut ranked);
    Ok(Spectrum::from_sorted(
        ranked.into_iter().map(|(_, w)| w).collect(),
        Provenance::Quotient,
        quotient.source_size,
    ))
}
