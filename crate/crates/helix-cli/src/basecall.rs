//! `basecall`: signal to reads, consensus, and error classification.
//!
//! Three input modes besides the default synthetic pipeline: a raw signal
//! file (newline-delimited floats), a read set (newline-delimited ACGT
//! strings, vote only), or a probability matrix (CSV, decode only).

use std::path::Path;

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use helix_core::ctc::beam_search;
use helix_core::genome::{bases_to_string, classify_errors, parse_bases, Base, Read};
use helix_core::nn::{basecaller_forward, sliding_window_reads, ProbMatrix, QuantMode};
use helix_core::seat::sequence_accuracy;
use helix_core::synth::{generate_truth, matched_caller, synthesize_stream, window_with_read_noise};
use helix_core::vote::{align_and_vote, vote_aligned};

use crate::config::RunConfig;
use crate::{write_output, CliError, Format};

#[derive(Debug, clap::Args)]
pub struct BasecallArgs {
    /// Raw signal file: one sample per line.
    #[arg(long)]
    pub signal: Option<std::path::PathBuf>,
    /// Read set to vote on: one ACGT string per line.
    #[arg(long)]
    pub reads: Option<std::path::PathBuf>,
    /// Probability matrix to decode: CSV with 5 columns per timestep.
    #[arg(long)]
    pub prob_matrix: Option<std::path::PathBuf>,
    /// Ground-truth sequence (ACGT on one line) for accuracy reporting.
    #[arg(long)]
    pub truth: Option<std::path::PathBuf>,
}

#[derive(Serialize)]
struct BasecallSummary {
    reads: usize,
    consensus: String,
    read_accuracy: Option<f64>,
    vote_accuracy: Option<f64>,
    random_errors: Option<usize>,
    systematic_errors: Option<usize>,
}

pub fn run(
    args: &BasecallArgs,
    cfg: &RunConfig,
    seed: u64,
    out: &Path,
    format: Format,
) -> Result<(), CliError> {
    if let Some(path) = &args.prob_matrix {
        return decode_matrix(path, cfg, out, format).map_err(CliError::Config);
    }
    if let Some(path) = &args.reads {
        return vote_reads(path, out, format).map_err(CliError::Config);
    }
    let (reads, truth, signal_len) = match &args.signal {
        Some(path) => {
            let signal = load_signal(path).map_err(CliError::Config)?;
            let truth = match &args.truth {
                Some(t) => Some(load_truth(t).map_err(CliError::Config)?),
                None => None,
            };
            let reads = decode_signal(&signal, cfg).map_err(CliError::Runtime)?;
            (reads, truth, signal.len())
        }
        None => synthetic_pipeline(cfg, seed).map_err(CliError::Runtime)?,
    };
    if reads.is_empty() {
        return Err(CliError::Runtime(anyhow::anyhow!(
            "no reads decoded from {signal_len} samples"
        )));
    }
    // With known provenance (synthetic mode) the reads are anchored to truth
    // coordinates and vote per column; raw signal reads chain by content.
    let consensus = if truth.is_some() {
        vote_aligned(&reads)
    } else {
        align_and_vote(&reads)
    }
    .context("voting failed")
    .map_err(CliError::Runtime)?;

    let mut summary = BasecallSummary {
        reads: reads.len(),
        consensus: consensus.to_string_acgt(),
        read_accuracy: None,
        vote_accuracy: None,
        random_errors: None,
        systematic_errors: None,
    };
    let mut error_report = None;
    if let Some(truth) = &truth {
        let read_acc = reads
            .iter()
            .map(|r| {
                let end = (r.origin_offset + r.len()).min(truth.len());
                let segment = &truth[r.origin_offset.min(truth.len())..end];
                sequence_accuracy(&r.symbols, segment)
            })
            .sum::<f64>()
            / reads.len() as f64;
        summary.read_accuracy = Some(read_acc);
        summary.vote_accuracy = Some(sequence_accuracy(&consensus.symbols, truth));
        let report = classify_errors(&reads, truth)
            .context("error classification")
            .map_err(CliError::Runtime)?;
        summary.random_errors = Some(report.random_count);
        summary.systematic_errors = Some(report.systematic_count);
        error_report = Some(report);
    }

    let reads_text: String = reads
        .iter()
        .map(|r| format!("{}\n", bases_to_string(&r.symbols)))
        .collect();
    write_output(out, "reads.txt", &reads_text).map_err(CliError::Runtime)?;
    emit(out, "consensus", &consensus, format).map_err(CliError::Runtime)?;
    if let Some(report) = &error_report {
        emit(out, "errors", report, format).map_err(CliError::Runtime)?;
    }
    emit(out, "basecall_summary", &summary, format).map_err(CliError::Runtime)?;
    println!(
        "basecall: {} reads, consensus {} bases{}",
        summary.reads,
        consensus.symbols.len(),
        match (summary.read_accuracy, summary.vote_accuracy) {
            (Some(r), Some(v)) => format!(", read accuracy {r:.4}, vote accuracy {v:.4}"),
            _ => String::new(),
        }
    );
    Ok(())
}

/// Synthetic end-to-end pipeline with known provenance: the decoded window
/// reads are re-anchored to truth coordinates via the dwell map.
fn synthetic_pipeline(cfg: &RunConfig, seed: u64) -> Result<(Vec<Read>, Option<Vec<Base>>, usize)> {
    let synth_cfg = cfg.synth.to_synth_config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = generate_truth(cfg.synth.truth_len, false, &mut rng);
    let window_len = cfg.synth.window_len;
    let slide = (window_len / cfg.coverage()).max(1);
    // Pick a stream length the window tiling covers exactly, inside the
    // reachable dwell range, so every truth base is decoded.
    let n = truth.len();
    let (lo, hi) = (n * synth_cfg.dwell_min, n * synth_cfg.dwell_max);
    if hi < window_len {
        bail!(
            "truth of {n} bases cannot fill a {window_len}-sample window; \
             raise synth.truth_len or dwell range"
        );
    }
    let mid = n * (synth_cfg.dwell_min + synth_cfg.dwell_max) / 2;
    let k = (mid.max(window_len) - window_len) / slide;
    let mut total = window_len + k * slide;
    while total < lo {
        total += slide;
    }
    if total > hi {
        bail!("window tiling cannot fit the dwell range; adjust synth settings");
    }
    let signal = synthesize_stream(&truth, total, &synth_cfg, &mut rng);
    let (topology, weights) = matched_caller(window_len, slide, &synth_cfg);
    let mode = QuantMode::Fixed(cfg.bit_width());
    let beam = cfg.beam_width();
    // Decode each window under its own per-dwell noise draw: errors become
    // independent across the reads covering a locus, which is what voting
    // repairs. Reads are re-anchored at the truth index of their window
    // start.
    let mut reads: Vec<Read> = Vec::new();
    let mut offset = 0;
    while offset + window_len <= signal.samples.len() {
        let window = window_with_read_noise(
            &truth,
            &signal,
            offset,
            window_len,
            &synth_cfg,
            cfg.synth.read_noise_sigma,
            &mut rng,
        );
        let probs = basecaller_forward(&topology, &weights, &window, mode)?;
        let symbols = beam_search(&probs, beam).expect("non-empty matrix").0.symbols;
        if !symbols.is_empty() {
            reads.push(Read::new(symbols, signal.base_index[offset]));
        }
        offset += slide;
    }
    Ok((reads, Some(truth), signal.samples.len()))
}

fn decode_signal(signal: &[f64], cfg: &RunConfig) -> Result<Vec<Read>> {
    let synth_cfg = cfg.synth.to_synth_config();
    let window_len = cfg.synth.window_len;
    let slide = (window_len / cfg.coverage()).max(1);
    let (topology, weights) = matched_caller(window_len, slide, &synth_cfg);
    let mode = QuantMode::Fixed(cfg.bit_width());
    let beam = cfg.beam_width();
    let reads = sliding_window_reads(signal, &topology, &weights, mode, |probs| {
        beam_search(probs, beam).expect("non-empty matrix").0.symbols
    })?;
    Ok(reads.into_iter().filter(|r| !r.is_empty()).collect())
}

fn load_signal(path: &Path) -> Result<Vec<f64>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let samples: Vec<f64> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse::<f64>()
                .with_context(|| format!("malformed signal sample {l:?}"))
        })
        .collect::<Result<_>>()?;
    if samples.is_empty() {
        bail!("signal file {} holds no samples", path.display());
    }
    Ok(samples)
}

fn load_truth(path: &Path) -> Result<Vec<Base>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let line = text.trim();
    if line.is_empty() {
        bail!("truth file {} is empty", path.display());
    }
    Ok(parse_bases(line)?)
}

fn vote_reads(path: &Path, out: &Path, format: Format) -> Result<()> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let reads: Vec<Read> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| Ok(Read::from_str_at(l.trim(), i)?))
        .collect::<Result<_>>()?;
    if reads.is_empty() {
        bail!("read file {} is empty", path.display());
    }
    let consensus = align_and_vote(&reads)?;
    emit(out, "consensus", &consensus, format)?;
    println!(
        "vote: {} reads -> consensus {}",
        reads.len(),
        consensus.to_string_acgt()
    );
    Ok(())
}

fn decode_matrix(path: &Path, cfg: &RunConfig, out: &Path, format: Format) -> Result<()> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != 5 {
            bail!("probability row needs 5 columns, got {}", record.len());
        }
        let mut row = [0.0f64; 5];
        for (slot, field) in row.iter_mut().zip(record.iter()) {
            *slot = field
                .trim()
                .parse()
                .with_context(|| format!("malformed probability {field:?}"))?;
        }
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("probability matrix {} is empty", path.display());
    }
    let matrix = ProbMatrix::from_rows(&rows).context("invalid probability matrix")?;
    let (read, prob) = beam_search(&matrix, cfg.beam_width())?;
    #[derive(Serialize)]
    struct Decoded {
        read: String,
        probability: f64,
        beam_width: usize,
    }
    let decoded = Decoded {
        read: bases_to_string(&read.symbols),
        probability: prob,
        beam_width: cfg.beam_width(),
    };
    emit(out, "decoded", &decoded, format)?;
    println!("decode: {} (p = {prob:.6})", decoded.read);
    Ok(())
}

fn emit<T: Serialize>(out: &Path, stem: &str, value: &T, _format: Format) -> Result<()> {
    // Structured outputs are JSON regardless of the tabular format flag.
    let text = serde_json::to_string_pretty(value)?;
    write_output(out, &format!("{stem}.json"), &text)
}
