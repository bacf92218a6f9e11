//! Suffix-automaton predictive contribution spectra and spectral-frontier fits.
//!
//! The pipeline runs corpus → [`sam::Automaton`] → ranked [`spectrum::Spectrum`]
//! → tail and frontier fits ([`fit`]). [`quotient`] coarsens automaton states by
//! next-token kernel similarity, [`synth`] generates planted fixtures, and
//! [`report`] wires everything into a reproducible output bundle. Spectrum
//! variants are selected by name through [`method::SpectrumRegistry`].

pub mod corpus;
pub mod error;
pub mod fit;
pub mod method;
pub mod quotient;
pub mod report;
pub mod sam;
pub mod spectrum;
pub mod synth;

pub use corpus::{load_token_stream, parse_token_ids, prepare_corpus, tokenize_bytes, TokenStream};
pub use error::{Error, Result};
pub use fit::{
    cross_dataset_regression, effective_cutoff, frontier_fit, loglog_fit, pooled_frontier_fit,
    read_loss_table, scaling_slope, tail_slope, write_loss_table, FitResult, FrontierTrace, LossCurve,
};
pub use sam::{build_sam, compute_occurrences, distinct_substring_count, state_mass_spectrum, Automaton};
pub use spectrum::{
    global_kl_spectrum, global_next_distribution, kl_divergence, normalize_spectrum, smooth_spectrum,
    tail_mass, Distribution, Provenance, Spectrum, TailMass,
};
