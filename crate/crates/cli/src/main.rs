use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use samspec::method::{MethodParams, SpectrumInput, SpectrumRegistry, DEFAULT_SMOOTH_BINS};
use samspec::quotient::{kernel_quotient, quotient_spectrum, DEFAULT_EPSILON};
use samspec::report::{frontier_report, run_report, RunConfig};
use samspec::synth::{generate_markov_corpus, planted_frontier_losses, MarkovSpec};
use samspec::{
    distinct_substring_count, global_next_distribution, load_token_stream, normalize_spectrum,
    parse_token_ids, prepare_corpus, read_loss_table, scaling_slope, smooth_spectrum, tail_slope,
    tokenize_bytes, write_loss_table, Automaton, LossCurve, Spectrum, TokenStream,
};

/// Suffix-automaton predictive spectra and frontier scaling fits.
#[derive(Parser)]
#[command(name = "samspec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a corpus into the binary token-stream format.
    Ingest(IngestArgs),
    /// Suffix automaton operations.
    #[command(subcommand)]
    Sam(SamCommand),
    /// Compute a contribution spectrum from an automaton.
    Spectrum(SpectrumArgs),
    /// Kernel-quotient spectrum.
    Quotient(QuotientArgs),
    /// Fit the log-log tail slope of a spectrum inside a rank window.
    FitTail(FitTailArgs),
    /// Infer K(N) from loss curves and fit log K against log N.
    Frontier(FrontierArgs),
    /// Per-dataset data-scaling slopes of a loss table.
    Slopes(SlopesArgs),
    /// Synthetic fixtures.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Run the full analysis and write a report bundle.
    Report(ReportArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Treat the input as raw bytes (vocabulary 256). Otherwise the input is an
    /// existing token stream or whitespace-separated token ids.
    #[arg(long)]
    bytes: bool,
    /// Keep only the first N tokens.
    #[arg(long, value_name = "N")]
    truncate: Option<usize>,
    /// Vocabulary size for token-id text input (default: max id + 1).
    #[arg(long)]
    vocab_size: Option<u32>,
}

#[derive(Subcommand)]
enum SamCommand {
    /// Build the automaton of a token stream.
    Build {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Print state, transition and distinct-substring counts.
        #[arg(long)]
        stats: bool,
    },
}

#[derive(Args)]
struct SpectrumArgs {
    #[arg(long)]
    sam: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Registered method name.
    #[arg(long, default_value = "global-kl")]
    method: String,
    /// Add-alpha baseline smoothing; the bare flag means 0.5.
    #[arg(long, num_args = 0..=1, default_value_t = 0.0, default_missing_value = "0.5")]
    alpha: f64,
    /// Log-bin the spectrum with this many bins per decade.
    #[arg(long, value_name = "BINS")]
    smooth: Option<u32>,
    #[arg(long)]
    normalize: bool,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct QuotientArgs {
    #[arg(long)]
    sam: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, num_args = 0..=1, default_value_t = 0.0, default_missing_value = "0.5")]
    alpha: f64,
    #[arg(long)]
    output: PathBuf,
    /// Also write cluster membership as JSON.
    #[arg(long, value_name = "FILE")]
    clusters: Option<PathBuf>,
}

#[derive(Args)]
struct FitTailArgs {
    #[arg(long)]
    spectrum: PathBuf,
    /// Inclusive rank window, e.g. 1000:100000.
    #[arg(long, value_name = "LO:HI", value_parser = parse_window)]
    window: (f64, f64),
}

#[derive(Args)]
struct FrontierArgs {
    /// Directory holding `<dataset>.csv` (or `<dataset>.raw.csv`) spectra.
    #[arg(long)]
    spectrum_dir: PathBuf,
    #[arg(long)]
    losses: PathBuf,
    #[arg(long)]
    interior_only: bool,
    /// Log-bin each spectrum before cutoff matching.
    #[arg(long, value_name = "BINS")]
    smooth: Option<u32>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct SlopesArgs {
    #[arg(long)]
    losses: PathBuf,
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Sample a corpus from a hidden Markov chain.
    Markov {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        length: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Loss curve realizing a planted frontier K*(N) = scale * N^gamma.
    Frontier {
        #[arg(long)]
        spectrum: PathBuf,
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        scale: f64,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<u64>,
        #[arg(long)]
        floor: f64,
        #[arg(long, default_value = "synthetic")]
        dataset: String,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    losses: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Datasets analysed in parallel (overrides the config).
    #[arg(long)]
    workers: Option<usize>,
}

fn parse_window(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or("expected LO:HI")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("bad LO: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("bad HI: {e}"))?;
    Ok((lo, hi))
}

fn read_spectrum(path: &Path) -> Result<Spectrum> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Spectrum::read_csv(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn read_losses(path: &Path) -> Result<Vec<LossCurve>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_loss_table(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn ingest(args: IngestArgs) -> Result<()> {
    let raw = fs::read(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let stream = if args.bytes {
        tokenize_bytes(&raw)?
    } else if raw.starts_with(b"SPFK") {
        TokenStream::from_bytes(&raw)?
    } else {
        let text = std::str::from_utf8(&raw).context("token-id input is not UTF-8")?;
        parse_token_ids(text, args.vocab_size)?
    };
    let stream = match args.truncate {
        Some(n) => prepare_corpus(&stream, n)?,
        None => stream,
    };
    stream.save(&args.output)?;
    eprintln!("{} tokens, vocabulary {}", stream.len(), stream.vocab_size());
    Ok(())
}

fn spectrum(args: SpectrumArgs) -> Result<()> {
    let stream = load_token_stream(&args.corpus)?;
    let automaton = Automaton::load(&args.sam)?;
    if automaton.source_length() != stream.len() {
        bail!(
            "automaton was built from {} tokens but the corpus has {}",
            automaton.source_length(),
            stream.len()
        );
    }
    let params = MethodParams {
        alpha: args.alpha,
        smooth_bins: args.smooth.unwrap_or(DEFAULT_SMOOTH_BINS),
        epsilon: args.epsilon,
    };
    let input = SpectrumInput {
        stream: &stream,
        automaton: &automaton,
        params: &params,
    };
    let method = SpectrumRegistry::with_defaults().get(&args.method)?;
    let mut sp = method.compute(&input)?;
    if let (Some(bins), false) = (args.smooth, args.method == "global-kl-smoothed") {
        sp = smooth_spectrum(&sp, bins)?;
    }
    if args.normalize {
        sp = normalize_spectrum(&sp)?;
    }
    write_text(&args.output, &sp.to_csv_string())
}

fn quotient(args: QuotientArgs) -> Result<()> {
    let stream = load_token_stream(&args.corpus)?;
    let automaton = Automaton::load(&args.sam)?;
    let baseline = global_next_distribution(&stream, args.alpha)?;
    let q = kernel_quotient(&automaton, args.epsilon, stream.vocab_size())?;
    write_text(&args.output, &quotient_spectrum(&q, &baseline)?.to_csv_string())?;
    if let Some(path) = args.clusters {
        write_text(&path, &q.to_json()?)?;
    }
    eprintln!("{} clusters", q.clusters.len());
    Ok(())
}

fn frontier(args: FrontierArgs) -> Result<()> {
    let curves = read_losses(&args.losses)?;
    let mut spectra = BTreeMap::new();
    for c in &curves {
        let plain = args.spectrum_dir.join(format!("{}.csv", c.dataset));
        let raw = args.spectrum_dir.join(format!("{}.raw.csv", c.dataset));
        let path = if plain.exists() { plain } else { raw };
        if path.exists() {
            spectra.insert(c.dataset.clone(), read_spectrum(&path)?);
        }
    }
    let report = frontier_report(&spectra, &curves, args.interior_only, args.smooth);
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    write_text(&args.output, &json)
}

fn slopes(args: SlopesArgs) -> Result<()> {
    let curves = read_losses(&args.losses)?;
    let mut out = io::stdout().lock();
    writeln!(out, "dataset,slope,intercept,r_squared,n_points")?;
    for c in &curves {
        match scaling_slope(c) {
            Ok(f) => writeln!(
                out,
                "{},{},{},{},{}",
                c.dataset, f.slope, f.intercept, f.r_squared, f.n_points
            )?,
            Err(e) => eprintln!("{}: {e}", c.dataset),
        }
    }
    Ok(())
}

fn synth(cmd: SynthCommand) -> Result<()> {
    match cmd {
        SynthCommand::Markov { spec, length, output } => {
            let text = fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
            generate_markov_corpus(&MarkovSpec::from_json(&text)?, length)?.save(&output)?;
        }
        SynthCommand::Frontier {
            spectrum,
            gamma,
            scale,
            sizes,
            floor,
            dataset,
            output,
        } => {
            let sp = normalize_spectrum(&read_spectrum(&spectrum)?)?;
            let curve = planted_frontier_losses(&dataset, &sp, gamma, scale, &sizes, floor)?;
            let f = File::create(&output).with_context(|| format!("creating {}", output.display()))?;
            write_loss_table(&[curve], f)?;
        }
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let mut config = RunConfig::from_json(&text).context("invalid run config")?;
    if let Some(w) = args.workers {
        config.workers = w;
    }
    let base = args.config.parent().unwrap_or(Path::new("."));
    config.resolve_paths(base);
    let out = match (args.out, &config.output_dir) {
        (Some(o), _) => o,
        (None, Some(o)) => base.join(o),
        (None, None) => bail!("no output directory: pass --out or set output_dir"),
    };
    let curves = read_losses(&args.losses)?;
    let bundle = run_report(&config, &curves, &out)?;
    for (name, outcome) in &bundle.datasets {
        if let samspec::report::Outcome::Err { error } = outcome {
            eprintln!("{name}: {error}");
        }
    }
    eprintln!("wrote {} files to {}", bundle.outputs.len() + 1, out.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Ingest(a) => ingest(a),
        Command::Sam(SamCommand::Build { corpus, output, stats }) => {
            let stream = load_token_stream(&corpus)?;
            let automaton = Automaton::from_stream(&stream);
            automaton.save(&output)?;
            if stats {
                println!("states {}", automaton.state_count());
                println!("transitions {}", automaton.transition_count());
                println!("distinct_substrings {}", distinct_substring_count(&automaton));
            }
            Ok(())
        }
        Command::Spectrum(a) => spectrum(a),
        Command::Quotient(a) => quotient(a),
        Command::FitTail(a) => {
            let fit = tail_slope(&read_spectrum(&a.spectrum)?, a.window)?;
            println!("{}", serde_json::to_string_pretty(&fit)?);
            Ok(())
        }
        Command::Frontier(a) => frontier(a),
        Command::Slopes(a) => slopes(a),
        Command::Synth(c) => synth(c),
        Command::Report(a) => report(a),
    }
}
