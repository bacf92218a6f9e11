//! Regression machinery: log-log fits, data-scaling slopes, tail-window slopes,
//! cross-dataset slope regression, excess loss, effective cutoff ranks and
//! frontier fits.
//!
//! R² is always `1 - SS_res / SS_tot` in the space the regression runs in
//! (log-log for power-law fits). A constant response has `SS_tot = 0` and is
//! reported as R² = 0.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum::{Provenance, Spectrum, TailMass};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub window: Option<(f64, f64)>,
    pub n_points: usize,
}

/// Ordinary least squares of `ys` on `xs`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<FitResult> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 2 {
        return Err(Error::InsufficientPoints);
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut ss_tot) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        ss_tot += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::InsufficientPoints);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let r_squared = if ss_tot == 0.0 {
        0.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(FitResult {
        slope,
        intercept,
        r_squared,
        window: None,
        n_points: n,
    })
}

/// Least squares of `ln y` on `ln x`, optionally restricted to `x_lo <= x <= x_hi`.
pub fn loglog_fit(points: &[(f64, f64)], window: Option<(f64, f64)>) -> Result<FitResult> {
    let inside = points
        .iter()
        .filter(|&&(x, _)| window.is_none_or(|(lo, hi)| x >= lo && x <= hi));
    let (mut lx, mut ly) = (Vec::new(), Vec::new());
    for &(x, y) in inside {
        if !(x > 0.0 && y > 0.0) {
            return Err(Error::Domain(format!(
                "log-log fit needs positive values, got ({x}, {y})"
            )));
        }
        lx.push(x.ln());
        ly.push(y.ln());
    }
    let mut fit = linear_fit(&lx, &ly)?;
    fit.window = window;
    Ok(fit)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub n: u64,
    pub loss: f64,
}

/// Best validation loss per training size for one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub dataset: String,
    points: Vec<LossPoint>,
}

impl LossCurve {
    pub fn new(dataset: impl Into<String>, points: Vec<LossPoint>) -> Result<Self> {
        let dataset = dataset.into();
        if points.len() < 2 {
            return Err(Error::InvalidCurve(format!("{dataset}: needs at least 2 points")));
        }
        if !points.windows(2).all(|w| w[0].n < w[1].n) {
            return Err(Error::InvalidCurve(format!(
                "{dataset}: token counts must be strictly increasing"
            )));
        }
        if points.iter().any(|p| !(p.loss > 0.0 && p.loss.is_finite()) || p.n == 0) {
            return Err(Error::InvalidCurve(format!(
                "{dataset}: losses and token counts must be positive"
            )));
        }
        Ok(LossCurve { dataset, points })
    }

    pub fn points(&self) -> &[LossPoint] {
        &self.points
    }
}

/// Reads a `dataset,n_tokens,loss` table into curves ordered by dataset name.
pub fn read_loss_table<R: Read>(input: R) -> Result<Vec<LossCurve>> {
    #[derive(Deserialize)]
    struct Row {
        dataset: String,
        n_tokens: u64,
        loss: f64,
    }
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["dataset", "n_tokens", "loss"] {
        return Err(Error::Parse("loss table header must be dataset,n_tokens,loss".into()));
    }
    let mut grouped: BTreeMap<String, Vec<LossPoint>> = BTreeMap::new();
    for row in r.deserialize() {
        let row: Row = row?;
        grouped.entry(row.dataset).or_default().push(LossPoint {
            n: row.n_tokens,
            loss: row.loss,
        });
    }
    grouped
        .into_iter()
        .map(|(name, mut pts)| {
            pts.sort_by_key(|p| p.n);
            LossCurve::new(name, pts)
        })
        .collect()
}

pub fn write_loss_table<W: Write>(curves: &[LossCurve], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dataset", "n_tokens", "loss"])?;
    for c in curves {
        for p in &c.points {
            w.write_record([c.dataset.clone(), p.n.to_string(), p.loss.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Slope of `ln L` against `ln N` over every point of the curve.
pub fn scaling_slope(curve: &LossCurve) -> Result<FitResult> {
    let pts: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.n as f64, p.loss)).collect();
    loglog_fit(&pts, None)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    #[serde(flatten)]
    pub fit: FitResult,
    /// Zero weights inside the window, left out of the log-log fit.
    pub zero_excluded: usize,
}

/// Log-log fit of weight against rank over ranks in `[rank_lo, rank_hi]`.
pub fn tail_slope(spectrum: &Spectrum, window: (f64, f64)) -> Result<TailFit> {
    let (lo, hi) = window;
    if !(lo > 0.0 && lo < hi) {
        return Err(Error::Domain(format!("window {lo}:{hi} must satisfy 0 < lo < hi")));
    }
    let mut zero_excluded = 0;
    let mut pts = Vec::new();
    for (rank, w) in spectrum.points() {
        if rank < lo || rank > hi {
            continue;
        }
        if w > 0.0 {
            pts.push((rank, w));
        } else {
            zero_excluded += 1;
        }
    }
    if pts.is_empty() {
        return Err(Error::WindowOutOfRange);
    }
    let fit = loglog_fit(&pts, Some(window))?;
    Ok(TailFit { fit, zero_excluded })
}

/// Linear regression of data-scaling slope on tail slope across datasets.
pub fn cross_dataset_regression(
    tail_slopes: &[(String, f64)],
    scaling_slopes: &[(String, f64)],
) -> Result<FitResult> {
    let xs: BTreeMap<&str, f64> = tail_slopes.iter().map(|(d, v)| (d.as_str(), *v)).collect();
    let ys: BTreeMap<&str, f64> = scaling_slopes.iter().map(|(d, v)| (d.as_str(), *v)).collect();
    if xs.len() != tail_slopes.len() || ys.len() != scaling_slopes.len() {
        return Err(Error::DatasetMismatch("duplicate dataset name".into()));
    }
    if !xs.keys().eq(ys.keys()) {
        return Err(Error::DatasetMismatch(format!(
            "tail slopes cover {:?}, scaling slopes cover {:?}",
            xs.keys().collect::<Vec<_>>(),
            ys.keys().collect::<Vec<_>>()
        )));
    }
    if xs.len() < 3 {
        return Err(Error::InsufficientPoints);
    }
    let x: Vec<f64> = xs.values().copied().collect();
    let y: Vec<f64> = ys.values().copied().collect();
    linear_fit(&x, &y)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcessPoint {
    pub n: u64,
    pub delta_l: f64,
    pub ratio: f64,
}

/// `ΔL(N) = L(N) - min L` and `ΔL / max ΔL` (all ratios 0 when the curve is flat).
pub fn excess_loss(curve: &LossCurve) -> Vec<ExcessPoint> {
    let min = curve.points.iter().map(|p| p.loss).fold(f64::INFINITY, f64::min);
    let deltas: Vec<f64> = curve.points.iter().map(|p| p.loss - min).collect();
    let max = deltas.iter().copied().fold(0.0, f64::max);
    curve
        .points
        .iter()
        .zip(deltas)
        .map(|(p, d)| ExcessPoint {
            n: p.n,
            delta_l: d,
            ratio: if max == 0.0 { 0.0 } else { d / max },
        })
        .collect()
}

/// Cutoff rank for one normalized excess ratio. Ratio 1 maps to rank 1 and
/// ratio 0 to rank M; otherwise the smallest `K >= 1` with `T(K) <= ratio`.
pub fn cutoff_rank(tail: &TailMass, ratio: f64) -> usize {
    let m = tail.len();
    if ratio == 1.0 {
        1
    } else if ratio == 0.0 {
        m
    } else {
        tail.smallest_rank_at_most(ratio).clamp(1, m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontierEntry {
    pub n: u64,
    pub delta_l: f64,
    pub ratio: f64,
    pub k: usize,
}

impl FrontierEntry {
    /// Pinned by the endpoint conventions rather than the tail-mass match.
    pub fn is_anchored(&self) -> bool {
        self.ratio == 0.0 || self.ratio == 1.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontierTrace {
    pub dataset: String,
    pub provenance: Provenance,
    pub spectrum_len: usize,
    pub entries: Vec<FrontierEntry>,
}

impl FrontierTrace {
    /// A flat loss curve: every entry sits at ratio 0 and carries no frontier information.
    pub fn is_degenerate(&self) -> bool {
        self.entries.iter().all(|e| e.ratio == 0.0)
    }

    fn fit_points(&self, interior_only: bool) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.entries
            .iter()
            .filter(move |e| !(interior_only && e.is_anchored()))
            .map(|e| (e.n as f64, e.k as f64))
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["n", "delta_l", "ratio", "k"]).unwrap();
        for e in &self.entries {
            w.write_record([
                e.n.to_string(),
                e.delta_l.to_string(),
                e.ratio.to_string(),
                e.k.to_string(),
            ])
            .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

/// `K(N)` for every point of the curve against a normalized per-rank spectrum.
pub fn effective_cutoff(spectrum: &Spectrum, curve: &LossCurve) -> Result<FrontierTrace> {
    let tail = TailMass::new(spectrum)?;
    if tail.is_empty() {
        return Err(Error::DegenerateSpectrum);
    }
    let entries = excess_loss(curve)
        .into_iter()
        .map(|e| FrontierEntry {
            n: e.n,
            delta_l: e.delta_l,
            ratio: e.ratio,
            k: cutoff_rank(&tail, e.ratio),
        })
        .collect();
    Ok(FrontierTrace {
        dataset: curve.dataset.clone(),
        provenance: spectrum.provenance(),
        spectrum_len: tail.len(),
        entries,
    })
}

/// Log-log fit of `K` against `N` for one dataset.
pub fn frontier_fit(trace: &FrontierTrace, interior_only: bool) -> Result<FitResult> {
    if trace.is_degenerate() {
        return Err(Error::InsufficientPoints);
    }
    let pts: Vec<_> = trace.fit_points(interior_only).collect();
    loglog_fit(&pts, None)
}

/// One log-log fit over the concatenated `(N, K)` points of every non-degenerate
/// trace. At least two such traces are required.
pub fn pooled_frontier_fit(traces: &[FrontierTrace], interior_only: bool) -> Result<FitResult> {
    let usable: Vec<&FrontierTrace> = traces.iter().filter(|t| !t.is_degenerate()).collect();
    if usable.len() < 2 {
        return Err(Error::InsufficientPoints);
    }
    let pts: Vec<_> = usable
        .iter()
        .flat_map(|t| t.fit_points(interior_only))
        .collect();
    loglog_fit(&pts, None)
}
