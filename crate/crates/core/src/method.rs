//! Named spectrum constructions behind a common trait.
//!
//! The CLI and the report look methods up by name, so a new spectrum variant only
//! needs an implementation of [`SpectrumMethod`] and a call to
//! [`SpectrumRegistry::register`].

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::TokenStream;
use crate::error::{Error, Result};
use crate::quotient::{kernel_quotient, quotient_spectrum, DEFAULT_EPSILON};
use crate::sam::{state_mass_spectrum, Automaton};
use crate::spectrum::{global_kl_spectrum, global_next_distribution, smooth_spectrum, Spectrum};

pub const DEFAULT_SMOOTH_BINS: u32 = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodParams {
    /// Add-alpha weight for the global next-token baseline.
    pub alpha: f64,
    /// Log bins per decade for smoothed spectra.
    pub smooth_bins: u32,
    /// Jensen-Shannon merge threshold for the kernel quotient.
    pub epsilon: f64,
}

impl Default for MethodParams {
    fn default() -> Self {
        MethodParams {
            alpha: 0.0,
            smooth_bins: DEFAULT_SMOOTH_BINS,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

pub struct SpectrumInput<'a> {
    pub stream: &'a TokenStream,
    pub automaton: &'a Automaton,
    pub params: &'a MethodParams,
}

pub trait SpectrumMethod: Send + Sync {
    /// Registry key.
    fn name(&self) -> &'static str;

    /// Short tag used in output file names (`<dataset>.<tag>.csv`).
    fn file_tag(&self) -> &'static str;

    fn compute(&self, input: &SpectrumInput<'_>) -> Result<Spectrum>;
}

struct StateMass;

impl SpectrumMethod for StateMass {
    fn name(&self) -> &'static str {
        "state-mass"
    }
    fn file_tag(&self) -> &'static str {
        "mass"
    }
    fn compute(&self, input: &SpectrumInput<'_>) -> Result<Spectrum> {
        Ok(state_mass_spectrum(input.automaton))
    }
}

struct GlobalKl;

impl SpectrumMethod for GlobalKl {
    fn name(&self) -> &'static str {
        "global-kl"
    }
    fn file_tag(&self) -> &'static str {
        "raw"
    }
    fn compute(&self, input: &SpectrumInput<'_>) -> Result<Spectrum> {
        let baseline = global_next_distribution(input.stream, input.params.alpha)?;
        global_kl_spectrum(input.automaton, &baseline)
    }
}

struct SmoothedGlobalKl;

impl SpectrumMethod for SmoothedGlobalKl {
    fn name(&self) -> &'static str {
        "global-kl-smoothed"
    }
    fn file_tag(&self) -> &'static str {
        "smooth"
    }
    fn compute(&self, input: &SpectrumInput<'_>) -> Result<Spectrum> {
        smooth_spectrum(&GlobalKl.compute(input)?, input.params.smooth_bins)
    }
}

struct KernelQuotient;

impl SpectrumMethod for KernelQuotient {
    fn name(&self) -> &'static str {
        "quotient"
    }
    fn file_tag(&self) -> &'static str {
        "quotient"
    }
    fn compute(&self, input: &SpectrumInput<'_>) -> Result<Spectrum> {
        let baseline = global_next_distribution(input.stream, input.params.alpha)?;
        let q = kernel_quotient(input.automaton, input.params.epsilon, input.stream.vocab_size())?;
        quotient_spectrum(&q, &baseline)
    }
}

#[derive(Clone, Default)]
pub struct SpectrumRegistry {
    methods: BTreeMap<&'static str, Arc<dyn SpectrumMethod>>,
}

impl SpectrumRegistry {
    pub fn with_defaults() -> Self {
        let mut r = SpectrumRegistry::default();
        r.register(Arc::new(StateMass));
        r.register(Arc::new(GlobalKl));
        r.register(Arc::new(SmoothedGlobalKl));
        r.register(Arc::new(KernelQuotient));
        r
    }

    /// Adds a method, replacing any previous one with the same name.
    pub fn register(&mut self, method: Arc<dyn SpectrumMethod>) {
        self.methods.insert(method.name(), method);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn SpectrumMethod>> {
        self.methods
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownMethod(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.methods.keys().copied()
    }
}
