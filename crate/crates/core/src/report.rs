//! End-to-end analysis bundle.
//!
//! For every dataset that has both a corpus and a loss curve: prepare the corpus,
//! build the automaton, emit raw and smoothed global-KL spectra, tail slopes per
//! window, the data-scaling slope and frontier traces. Then pooled and
//! per-dataset frontier fits plus the cross-dataset slope regression.
//!
//! Bundle layout under the output directory:
//!
//! ```text
//! manifest.json                 config echo, input and output content hashes
//! curves.csv                    loss table actually analysed
//! spectra/<dataset>.raw.csv
//! spectra/<dataset>.smooth.csv
//! spectra/<dataset>.<tag>.csv   any extra registry methods
//! frontier/<dataset>.csv        raw-spectrum K(N) trace
//! frontier/<dataset>.smooth.csv smoothed-spectrum K(N) trace
//! fits.json                     per-dataset fits
//! slopes.csv                    scaling slope vs tail slopes
//! pooled.json                   pooled fits, cross-dataset regressions, fit table
//! table.csv                     fit,slope,r_squared
//! ```
//!
//! Per-dataset failures are recorded in place and never abort the run. Output
//! bytes do not depend on the worker count.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{load_token_stream, prepare_corpus};
use crate::error::{Error, Result};
use crate::fit::{
    effective_cutoff, frontier_fit, pooled_frontier_fit, scaling_slope, tail_slope,
    cross_dataset_regression, write_loss_table, FitResult, FrontierEntry, FrontierTrace, LossCurve,
    TailFit,
};
use crate::method::{MethodParams, SpectrumInput, SpectrumRegistry};
use crate::sam::Automaton;
use crate::spectrum::{normalize_spectrum, smooth_spectrum, Spectrum};

pub const DEFAULT_PREPARED_SIZE: usize = 1_000_000;

fn default_windows() -> Vec<(f64, f64)> {
    vec![(1_000.0, 100_000.0), (300.0, 50_000.0)]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset name to `.toks` corpus path.
    pub datasets: BTreeMap<String, PathBuf>,
    pub prepared_size: usize,
    pub alpha: f64,
    pub smooth_bins: u32,
    pub tail_windows: Vec<(f64, f64)>,
    pub epsilon: f64,
    /// Registry methods written next to the raw and smoothed spectra.
    pub extra_spectra: Vec<String>,
    pub interior_only: bool,
    #[serde(skip_serializing)]
    pub output_dir: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let params = MethodParams::default();
        RunConfig {
            datasets: BTreeMap::new(),
            prepared_size: DEFAULT_PREPARED_SIZE,
            alpha: params.alpha,
            smooth_bins: params.smooth_bins,
            tail_windows: default_windows(),
            epsilon: params.epsilon,
            extra_spectra: vec!["state-mass".into()],
            interior_only: false,
            output_dir: None,
            workers: 1,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.prepared_size < 2 {
            return Err(Error::Config("prepared_size must be at least 2".into()));
        }
        if let Some(&(lo, hi)) = self.tail_windows.iter().find(|&&(lo, hi)| !(lo > 0.0 && lo < hi)) {
            return Err(Error::Config(format!("tail window {lo}:{hi} must satisfy 0 < lo < hi")));
        }
        if self.smooth_bins == 0 {
            return Err(Error::Config("smooth_bins must be at least 1".into()));
        }
        if self.alpha.is_nan() || self.epsilon.is_nan() || self.alpha < 0.0 || self.epsilon < 0.0 {
            return Err(Error::Config("alpha and epsilon must be nonnegative".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        let registry = SpectrumRegistry::with_defaults();
        for name in &self.extra_spectra {
            let tag = registry.get(name).map_err(|e| Error::Config(e.to_string()))?.file_tag();
            if tag == "raw" || tag == "smooth" {
                return Err(Error::Config(format!("{name} is always written; drop it from extra_spectra")));
            }
        }
        Ok(())
    }

    /// Resolves relative corpus paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for p in self.datasets.values_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    fn params(&self) -> MethodParams {
        MethodParams {
            alpha: self.alpha,
            smooth_bins: self.smooth_bins,
            epsilon: self.epsilon,
        }
    }
}

/// A fit or the reason it could not be produced.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Outcome<T> {
    Ok(T),
    Err { error: String },
}

impl<T> Outcome<T> {
    pub fn ok(&self) -> Option<&T> {
        match self {
            Outcome::Ok(v) => Some(v),
            Outcome::Err { .. } => None,
        }
    }
}

impl<T> From<Result<T>> for Outcome<T> {
    fn from(r: Result<T>) -> Self {
        match r {
            Ok(v) => Outcome::Ok(v),
            Err(e) => Outcome::Err { error: e.to_string() },
        }
    }
}

fn window_key(w: (f64, f64)) -> String {
    format!("{}:{}", w.0, w.1)
}

#[derive(Clone, Debug, Serialize)]
pub struct TailSlopes {
    pub raw: BTreeMap<String, Outcome<TailFit>>,
    pub smooth: BTreeMap<String, Outcome<TailFit>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Traces {
    pub raw: Outcome<Vec<FrontierEntry>>,
    pub smooth: Outcome<Vec<FrontierEntry>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DatasetAnalysis {
    pub corpus_tokens: usize,
    pub states: usize,
    pub transitions: usize,
    pub scaling: Outcome<FitResult>,
    pub tail: TailSlopes,
    pub frontier_raw: Outcome<FitResult>,
    pub frontier_smooth: Outcome<FitResult>,
    pub traces: Traces,
    #[serde(skip)]
    raw_trace: Option<FrontierTrace>,
    #[serde(skip)]
    smooth_trace: Option<FrontierTrace>,
    #[serde(skip)]
    spectra: Vec<(String, Spectrum)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TableRow {
    pub fit: String,
    pub slope: Option<f64>,
    pub r_squared: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PooledReport {
    pub pooled_raw: Outcome<FitResult>,
    pub pooled_smooth: Outcome<FitResult>,
    /// Keyed by `"<raw|smooth> <lo>:<hi>"`.
    pub cross_dataset: BTreeMap<String, Outcome<FitResult>>,
    pub table: Vec<TableRow>,
}

#[derive(Debug)]
pub struct ReportBundle {
    pub datasets: BTreeMap<String, Outcome<DatasetAnalysis>>,
    pub pooled: PooledReport,
    /// Relative output path to SHA-256.
    pub outputs: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn analyze_dataset(
    path: &Path,
    curve: &LossCurve,
    config: &RunConfig,
    registry: &SpectrumRegistry,
) -> Result<DatasetAnalysis> {
    let stream = prepare_corpus(&load_token_stream(path)?, config.prepared_size)?;
    let automaton = Automaton::from_stream(&stream);
    let params = config.params();
    let input = SpectrumInput {
        stream: &stream,
        automaton: &automaton,
        params: &params,
    };

    let raw = registry.get("global-kl")?.compute(&input)?;
    let smooth = smooth_spectrum(&raw, config.smooth_bins)?;
    let mut spectra = vec![("raw".to_string(), raw.clone()), ("smooth".to_string(), smooth.clone())];
    for name in &config.extra_spectra {
        let method = registry.get(name)?;
        spectra.push((method.file_tag().to_string(), method.compute(&input)?));
    }

    let tails = |sp: &Spectrum| -> BTreeMap<String, Outcome<TailFit>> {
        config
            .tail_windows
            .iter()
            .map(|&w| (window_key(w), tail_slope(sp, w).into()))
            .collect()
    };
    let tail = TailSlopes {
        raw: tails(&raw),
        smooth: tails(&smooth),
    };

    let raw_trace = normalize_spectrum(&raw).and_then(|sp| effective_cutoff(&sp, curve));
    let smooth_trace = smooth
        .expand()
        .and_then(|sp| normalize_spectrum(&sp))
        .and_then(|sp| effective_cutoff(&sp, curve));
    let fit_of = |t: &Result<FrontierTrace>| -> Outcome<FitResult> {
        match t {
            Ok(t) => frontier_fit(t, config.interior_only).into(),
            Err(e) => Outcome::Err { error: e.to_string() },
        }
    };
    let entries_of = |t: &Result<FrontierTrace>| -> Outcome<Vec<FrontierEntry>> {
        match t {
            Ok(t) => Outcome::Ok(t.entries.clone()),
            Err(e) => Outcome::Err { error: e.to_string() },
        }
    };

    Ok(DatasetAnalysis {
        corpus_tokens: stream.len(),
        states: automaton.state_count(),
        transitions: automaton.transition_count(),
        scaling: scaling_slope(curve).into(),
        tail,
        frontier_raw: fit_of(&raw_trace),
        frontier_smooth: fit_of(&smooth_trace),
        traces: Traces {
            raw: entries_of(&raw_trace),
            smooth: entries_of(&smooth_trace),
        },
        raw_trace: raw_trace.ok(),
        smooth_trace: smooth_trace.ok(),
        spectra,
    })
}

fn pooled_report(datasets: &BTreeMap<String, Outcome<DatasetAnalysis>>, config: &RunConfig) -> PooledReport {
    let analyses: Vec<(&String, &DatasetAnalysis)> =
        datasets.iter().filter_map(|(n, a)| a.ok().map(|a| (n, a))).collect();
    let raw_traces: Vec<FrontierTrace> = analyses.iter().filter_map(|(_, a)| a.raw_trace.clone()).collect();
    let smooth_traces: Vec<FrontierTrace> =
        analyses.iter().filter_map(|(_, a)| a.smooth_trace.clone()).collect();
    let pooled_raw: Outcome<FitResult> = pooled_frontier_fit(&raw_traces, config.interior_only).into();
    let pooled_smooth: Outcome<FitResult> =
        pooled_frontier_fit(&smooth_traces, config.interior_only).into();

    let mut cross_dataset = BTreeMap::new();
    for variant in ["raw", "smooth"] {
        for &w in &config.tail_windows {
            let key = window_key(w);
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for (name, a) in &analyses {
                let tails = if variant == "raw" { &a.tail.raw } else { &a.tail.smooth };
                if let (Some(t), Some(s)) = (tails.get(&key).and_then(Outcome::ok), a.scaling.ok()) {
                    xs.push(((*name).clone(), t.fit.slope));
                    ys.push(((*name).clone(), s.slope));
                }
            }
            cross_dataset.insert(
                format!("{variant} {key}"),
                cross_dataset_regression(&xs, &ys).into(),
            );
        }
    }

    let row = |fit: String, o: &Outcome<FitResult>| TableRow {
        fit,
        slope: o.ok().map(|f| f.slope),
        r_squared: o.ok().map(|f| f.r_squared),
    };
    let mut table = vec![
        row("Pooled raw global-KL cutoff".into(), &pooled_raw),
        row("Pooled smooth global-KL cutoff".into(), &pooled_smooth),
    ];
    for (name, a) in datasets {
        let o = match a {
            Outcome::Ok(a) => a.frontier_smooth.clone(),
            Outcome::Err { error } => Outcome::Err { error: error.clone() },
        };
        table.push(row(format!("{name} (smooth)"), &o));
    }

    PooledReport {
        pooled_raw,
        pooled_smooth,
        cross_dataset,
        table,
    }
}

struct BundleWriter<'a> {
    root: &'a Path,
    outputs: BTreeMap<String, String>,
}

impl BundleWriter<'_> {
    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.outputs.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

fn table_csv(table: &[TableRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["fit", "slope", "r_squared"])?;
    let cell = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for r in table {
        w.write_record([r.fit.clone(), cell(r.slope), cell(r.r_squared)])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn slopes_csv(datasets: &BTreeMap<String, Outcome<DatasetAnalysis>>, windows: &[(f64, f64)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["dataset".to_string(), "scaling_slope".to_string()];
    for variant in ["raw", "smooth"] {
        for &win in windows {
            header.push(format!("tail_{variant}_{}", window_key(win)));
        }
    }
    w.write_record(&header)?;
    let cell = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for (name, a) in datasets {
        let Some(a) = a.ok() else { continue };
        let mut rec = vec![name.clone(), cell(a.scaling.ok().map(|f| f.slope))];
        for tails in [&a.tail.raw, &a.tail.smooth] {
            for &win in windows {
                rec.push(cell(tails.get(&window_key(win)).and_then(Outcome::ok).map(|t| t.fit.slope)));
            }
        }
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Runs the full analysis and writes the bundle into `out_dir`.
pub fn run_report(config: &RunConfig, curves: &[LossCurve], out_dir: &Path) -> Result<ReportBundle> {
    config.validate()?;
    if !curves.iter().any(|c| config.datasets.contains_key(&c.dataset)) {
        return Err(Error::Config(
            "no dataset appears in both the loss table and the config".into(),
        ));
    }
    let registry = SpectrumRegistry::with_defaults();
    let mut work: Vec<&LossCurve> = curves.iter().collect();
    work.sort_by(|a, b| a.dataset.cmp(&b.dataset));

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let results: Vec<(String, Outcome<DatasetAnalysis>)> = pool.install(|| {
        work.par_iter()
            .map(|curve| {
                let outcome = match config.datasets.get(&curve.dataset) {
                    Some(path) => analyze_dataset(path, curve, config, &registry).into(),
                    None => Outcome::Err {
                        error: "missing corpus".into(),
                    },
                };
                (curve.dataset.clone(), outcome)
            })
            .collect()
    });
    let datasets: BTreeMap<String, Outcome<DatasetAnalysis>> = results.into_iter().collect();
    let pooled = pooled_report(&datasets, config);

    let mut w = BundleWriter {
        root: out_dir,
        outputs: BTreeMap::new(),
    };
    fs::create_dir_all(out_dir)?;

    let mut curve_bytes = Vec::new();
    let ordered: Vec<LossCurve> = work.iter().map(|c| (*c).clone()).collect();
    write_loss_table(&ordered, &mut curve_bytes)?;
    w.write("curves.csv", &curve_bytes)?;

    for (name, a) in &datasets {
        let Some(a) = a.ok() else { continue };
        for (tag, sp) in &a.spectra {
            w.write(&format!("spectra/{name}.{tag}.csv"), sp.to_csv_string().as_bytes())?;
        }
        if let Some(t) = &a.raw_trace {
            w.write(&format!("frontier/{name}.csv"), t.to_csv_string().as_bytes())?;
        }
        if let Some(t) = &a.smooth_trace {
            w.write(&format!("frontier/{name}.smooth.csv"), t.to_csv_string().as_bytes())?;
        }
    }
    w.write("fits.json", &json_bytes(&datasets)?)?;
    w.write("pooled.json", &json_bytes(&pooled)?)?;
    w.write("table.csv", &table_csv(&pooled.table)?)?;
    w.write("slopes.csv", &slopes_csv(&datasets, &config.tail_windows)?)?;

    #[derive(Serialize)]
    struct Manifest<'a> {
        tool: String,
        config: &'a RunConfig,
        inputs: BTreeMap<String, String>,
        outputs: &'a BTreeMap<String, String>,
    }
    let mut inputs = BTreeMap::new();
    inputs.insert("losses".to_string(), sha256_hex(&curve_bytes));
    for (name, path) in &config.datasets {
        let digest = fs::read(path).map_or_else(|e| format!("unreadable: {e}"), |b| sha256_hex(&b));
        inputs.insert(format!("corpus/{name}"), digest);
    }
    let outputs = w.outputs.clone();
    let manifest = Manifest {
        tool: format!("samspec {}", env!("CARGO_PKG_VERSION")),
        config,
        inputs,
        outputs: &outputs,
    };
    w.write("manifest.json", &json_bytes(&manifest)?)?;

    Ok(ReportBundle {
        datasets,
        pooled,
        outputs: w.outputs,
    })
}

/// Frontier fits from precomputed spectra, as written by the `frontier` command.
#[derive(Debug, Serialize)]
pub struct FrontierReport {
    pub fits: BTreeMap<String, Outcome<FitResult>>,
    pub traces: BTreeMap<String, Outcome<Vec<FrontierEntry>>>,
}

/// Cutoff traces and fits for each curve with a spectrum. With `smooth_bins`,
/// each spectrum is log-binned and expanded back to per-rank weights first.
pub fn frontier_report(
    spectra: &BTreeMap<String, Spectrum>,
    curves: &[LossCurve],
    interior_only: bool,
    smooth_bins: Option<u32>,
) -> FrontierReport {
    let mut fits = BTreeMap::new();
    let mut traces = BTreeMap::new();
    let mut ok_traces = Vec::new();
    for curve in curves {
        let trace = match spectra.get(&curve.dataset) {
            None => Err(Error::Config("missing spectrum".into())),
            Some(sp) => {
                let prepared = match smooth_bins {
                    Some(b) => smooth_spectrum(sp, b).and_then(|s| s.expand()),
                    None => Ok(sp.clone()),
                };
                prepared
                    .and_then(|s| normalize_spectrum(&s))
                    .and_then(|s| effective_cutoff(&s, curve))
            }
        };
        match trace {
            Ok(t) => {
                fits.insert(curve.dataset.clone(), frontier_fit(&t, interior_only).into());
                traces.insert(curve.dataset.clone(), Outcome::Ok(t.entries.clone()));
                ok_traces.push(t);
            }
            Err(e) => {
                fits.insert(curve.dataset.clone(), Outcome::Err { error: e.to_string() });
                traces.insert(curve.dataset.clone(), Outcome::Err { error: e.to_string() });
            }
        }
    }
    fits.insert("pooled".into(), pooled_frontier_fit(&ok_traces, interior_only).into());
    FrontierReport { fits, traces }
}
