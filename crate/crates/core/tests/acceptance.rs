//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::panic;
use std::process::ExitCode;
use std::time::Instant;

use common::{
    brute_contributions, check_automaton, check_next_distributions, linear_cutoff, power_law,
    random_stream, read_tree, report_fixture, seeded,
};
use rand::Rng;
use samspec::fit::{cutoff_rank, LossPoint};
use samspec::quotient::{kernel_quotient, quotient_spectrum};
use samspec::report::run_report;
use samspec::sam::StateId;
use samspec::spectrum::{state_contributions, Provenance};
use samspec::synth::planted_frontier_losses;
use samspec::{
    effective_cutoff, global_kl_spectrum, global_next_distribution, loglog_fit, normalize_spectrum,
    pooled_frontier_fit, tail_slope, Automaton, LossCurve, Spectrum, TailMass, TokenStream,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ac1_sam_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(1);
    for case in 0..1000 {
        let s = random_stream(&mut rng, 200);
        check_automaton(&Automaton::from_stream(&s), &s).map_err(|e| format!("case {case}: {e}"))?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!("1000 fuzzed streams match the endpos oracle in {secs:.2} s"))
}

fn peak_rss_kib() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

/// Byte-level pseudo-text: Zipf-weighted words from a seeded random lexicon.
fn pseudo_text(len: usize, seed: u64) -> Vec<u8> {
    let mut rng = seeded(seed);
    let lexicon: Vec<Vec<u8>> = (0..5_000)
        .map(|_| {
            let n = rng.random_range(1..=9);
            (0..n).map(|_| rng.random_range(b'a'..=b'z')).collect()
        })
        .collect();
    let cdf: Vec<f64> = lexicon
        .iter()
        .enumerate()
        .scan(0.0, |acc, (i, _)| {
            *acc += 1.0 / (i + 1) as f64;
            Some(*acc)
        })
        .collect();
    let total = *cdf.last().unwrap();
    let mut out = Vec::with_capacity(len + 16);
    while out.len() < len {
        let u = rng.random::<f64>() * total;
        let w = cdf.partition_point(|&c| c < u).min(lexicon.len() - 1);
        out.extend_from_slice(&lexicon[w]);
        out.push(if rng.random_range(0..12) == 0 { b'\n' } else { b' ' });
    }
    out.truncate(len);
    out
}

fn ac2_size_bounds() -> Outcome {
    let mut rng = seeded(2);
    for case in 0..1000 {
        let s = random_stream(&mut rng, 200);
        let a = Automaton::from_stream(&s);
        let n = s.len();
        if n >= 2 {
            ensure(a.state_count() < 2 * n, || format!("case {case}: states"))?;
        }
        if n >= 3 {
            ensure(a.transition_count() <= 3 * n - 4, || format!("case {case}: transitions"))?;
        }
    }
    let n = 2_000_000;
    let stream = samspec::tokenize_bytes(&pseudo_text(n, 7)).unwrap();
    let start = Instant::now();
    let a = Automaton::from_stream(&stream);
    let secs = start.elapsed().as_secs_f64();
    let rss_mib = peak_rss_kib().map(|k| k as f64 / 1024.0);
    ensure(a.state_count() < 2 * n, || "2M states bound".into())?;
    ensure(a.transition_count() <= 3 * n - 4, || "2M transitions bound".into())?;
    ensure(secs < 60.0, || format!("2M build took {secs:.1} s"))?;
    if let Some(mib) = rss_mib {
        ensure(mib < 4096.0, || format!("peak RSS {mib:.0} MiB"))?;
    }
    Ok(format!(
        "bounds hold on 1000 fuzzed streams; 2M-byte build: {} states, {} transitions, {secs:.2} s, peak RSS {}",
        a.state_count(),
        a.transition_count(),
        rss_mib.map_or("n/a".into(), |m| format!("{m:.0} MiB"))
    ))
}

fn ac3_spectrum_oracle() -> Outcome {
    let mut rng = seeded(3);
    let mut worst: f64 = 0.0;
    for case in 0..500 {
        let s = random_stream(&mut rng, 200);
        let a = Automaton::from_stream(&s);
        check_next_distributions(&a, &s, 1e-9).map_err(|e| format!("case {case}: {e}"))?;
        let base = global_next_distribution(&s, 0.0).unwrap();
        let fast = state_contributions(&a, &base).unwrap();
        for (f, b) in fast.iter().zip(brute_contributions(&a, &s)) {
            worst = worst.max((f - b).abs());
            ensure(*f >= 0.0, || format!("case {case}: negative E"))?;
        }
        let mass: f64 = a.masses().iter().sum();
        ensure((mass - 1.0).abs() < 1e-9, || format!("case {case}: mass sums to {mass}"))?;
    }
    ensure(worst <= 1e-9, || format!("E deviates by {worst:e}"))?;
    for n in [1, 2, 10, 200] {
        let s = TokenStream::new(vec![0; n], 3).unwrap();
        let sp = global_kl_spectrum(&Automaton::from_stream(&s), &global_next_distribution(&s, 0.0).unwrap()).unwrap();
        ensure(sp.weights().iter().all(|&w| w == 0.0), || "unary corpus has weight".into())?;
        ensure(normalize_spectrum(&sp).is_err(), || "unary corpus normalized".into())?;
    }
    Ok(format!("500 fuzzed streams, max |E - brute| = {worst:.1e}; unary corpora degenerate"))
}

fn ac4_fit_exactness() -> Outcome {
    let mut worst: f64 = 0.0;
    for i in 0..=100 {
        let slope = -5.0 + 0.1 * f64::from(i);
        if slope.abs() < 1e-12 {
            continue; // a flat response has SS_tot = 0, so R^2 is 0 by definition
        }
        let pts: Vec<(f64, f64)> = (0..20)
            .map(|j| {
                let x = 10f64.powf(f64::from(j) / 5.0);
                (x, 2.0 * x.powf(slope))
            })
            .collect();
        let fit = loglog_fit(&pts, None).unwrap();
        worst = worst.max((fit.slope - slope).abs());
        ensure((fit.r_squared - 1.0).abs() < 1e-9, || format!("slope {slope}: R^2 {}", fit.r_squared))?;
    }
    ensure(worst < 1e-9, || format!("slope error {worst:e}"))?;
    let sp = Spectrum::from_sorted(power_law(60_000, -1.5), Provenance::GlobalKlRaw, 0);
    let tail = tail_slope(&sp, (300.0, 50_000.0)).unwrap();
    let err = (tail.fit.slope + 1.5).abs();
    ensure(err <= 1e-6, || format!("tail slope {}", tail.fit.slope))?;
    Ok(format!(
        "max slope error {worst:.1e} over [-5, 5]; tail slope on 300..50000 = {:.9}",
        tail.fit.slope
    ))
}

fn ac5_cutoff_rule() -> Outcome {
    let mut rng = seeded(5);
    for case in 0..1000 {
        let m = rng.random_range(1..=400);
        let mut raw: Vec<f64> = (0..m)
            .map(|_| if rng.random_range(0..5) == 0 { 0.0 } else { rng.random::<f64>() })
            .collect();
        if raw.iter().all(|&w| w == 0.0) {
            raw[0] = 1.0;
        }
        let sp = normalize_spectrum(&Spectrum::from_unsorted(raw, Provenance::GlobalKlRaw, 0).unwrap()).unwrap();
        let tail = TailMass::new(&sp).unwrap();
        // Mix interior ratios with exact tail values, where ties matter.
        let ratio = match rng.random_range(0..3) {
            0 => tail.at(rng.random_range(0..=m)).unwrap().min(1.0),
            _ => rng.random::<f64>(),
        };
        let (fast, slow) = (cutoff_rank(&tail, ratio), linear_cutoff(sp.weights(), ratio));
        ensure(fast == slow, || format!("case {case}: ratio {ratio}: {fast} vs {slow}"))?;
    }
    let sp = normalize_spectrum(&Spectrum::from_sorted(vec![0.5, 0.3, 0.2], Provenance::GlobalKlRaw, 0)).unwrap();
    let curve = LossCurve::new(
        "d",
        [5.0, 4.4, 4.0].iter().enumerate().map(|(i, &loss)| LossPoint { n: 10 * (i as u64 + 1), loss }).collect(),
    )
    .unwrap();
    let ks: Vec<usize> = effective_cutoff(&sp, &curve).unwrap().entries.iter().map(|e| e.k).collect();
    ensure(ks == [1, 2, 3], || format!("endpoints {ks:?}"))?;
    let tail = TailMass::new(&sp).unwrap();
    ensure(cutoff_rank(&tail, 1.0) == 1 && cutoff_rank(&tail, 0.0) == 3, || "overrides".into())?;
    Ok("1000 fuzzed cases agree with the linear scan; ratio 1 -> K = 1, ratio 0 -> K = M".into())
}

fn ac6_frontier_round_trip() -> Outcome {
    let sizes = [100_000, 200_000, 500_000, 1_000_000, 2_000_000];
    let c = 1e5f64.powf(-3.9);
    let mut traces = Vec::new();
    for (i, exponent) in [-1.1, -1.2, -1.3].into_iter().enumerate() {
        let sp = normalize_spectrum(&Spectrum::from_sorted(power_law(100_000, exponent), Provenance::GlobalKlRaw, 0)).unwrap();
        let curve = planted_frontier_losses(&format!("d{i}"), &sp, 3.9, c, &sizes, 2.0).unwrap();
        traces.push(effective_cutoff(&sp, &curve).unwrap());
    }
    let fit = pooled_frontier_fit(&traces, false).unwrap();
    let rel = (fit.slope - 3.9).abs() / 3.9;
    ensure(rel <= 0.05 && fit.r_squared >= 0.99, || {
        format!("pooled slope {:.4}, R^2 {:.4}", fit.slope, fit.r_squared)
    })?;
    Ok(format!(
        "pooled slope {:.4} ({:.2}% off 3.9), R^2 {:.4} over 3 planted spectra, M = 1e5",
        fit.slope,
        100.0 * rel,
        fit.r_squared
    ))
}

fn ac7_quotient() -> Outcome {
    let mut rng = seeded(7);
    for case in 0..100 {
        let s = random_stream(&mut rng, 200);
        let a = Automaton::from_stream(&s);
        let base = global_next_distribution(&s, 0.0).unwrap();
        let raw = global_kl_spectrum(&a, &base).unwrap();
        let identity = quotient_spectrum(&kernel_quotient(&a, 0.0, s.vocab_size()).unwrap(), &base).unwrap();
        ensure(identity.weights() == &raw.weights()[..identity.len()], || {
            format!("case {case}: epsilon 0 differs from the raw spectrum")
        })?;
        let eps = rng.random_range(0.0..0.7);
        let q = kernel_quotient(&a, eps, s.vocab_size()).unwrap();
        let with_kernel: f64 = (1..a.state_count() as StateId)
            .filter(|&st| !a.state(st).transitions().is_empty())
            .map(|st| a.masses()[st as usize])
            .sum();
        ensure((q.total_mass() - with_kernel).abs() <= 1e-9, || format!("case {case}: mass"))?;
        let qs = quotient_spectrum(&q, &base).unwrap();
        ensure(qs.total() <= raw.total() + 1e-12, || format!("case {case}: weight grew"))?;
    }
    Ok("100 fuzzed corpora: identity at epsilon 0, mass conserved, weight never grows".into())
}

fn ac8_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (mut config, curves) = report_fixture(dir.path());
    config.extra_spectra.push("quotient".into());
    let mut trees = Vec::new();
    for (i, workers) in [1, 8, 1].into_iter().enumerate() {
        config.workers = workers;
        let out = dir.path().join(format!("run{i}"));
        run_report(&config, &curves, &out).map_err(|e| e.to_string())?;
        trees.push(read_tree(&out));
    }
    ensure(trees[0] == trees[1], || "workers 1 vs 8 differ".into())?;
    ensure(trees[0] == trees[2], || "rerun differs".into())?;
    Ok(format!("{} files byte-identical across reruns and workers 1 vs 8", trees[0].len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("AC1", "SAM correctness oracle", ac1_sam_oracle),
        ("AC2", "size bounds and 2M build", ac2_size_bounds),
        ("AC3", "spectrum oracle", ac3_spectrum_oracle),
        ("AC4", "fit exactness", ac4_fit_exactness),
        ("AC5", "cutoff rule", ac5_cutoff_rule),
        ("AC6", "frontier round trip", ac6_frontier_round_trip),
        ("AC7", "quotient sanity", ac7_quotient),
        ("AC8", "report determinism", ac8_determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, name, run) in criteria {
        let outcome = panic::catch_unwind(run).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(msg)
        });
        match outcome {
            Ok(detail) => println!("{id} PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("{id} FAIL  {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
