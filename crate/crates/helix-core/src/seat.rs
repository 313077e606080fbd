//! Consensus-aware loss functions and desk-scale training.
//!
//! Two losses over a training set of (signal window, truth read) pairs:
//!
//! - the per-read loss `sum_i -ln p(G_i | R_i)`, and
//! - the consensus-aware loss
//!   `sum_i [-eta * ln p(G_i | R_i) + (ln p(G_i | R_i) - ln p(C_i | R_i))^2]`,
//!   where `C_i` is the consensus voted from the reads the model predicts on
//!   a bundle of overlapping windows around `R_i`.
//!
//! The quadratic term drags the consensus probability toward the truth
//! probability, which is what suppresses voting-resistant errors in a
//! quantized model. Gradients come from central finite differences on the
//! forward path actually being trained (float or fixed-point); the
//! consensus is refreshed from the current model once per step and held
//! fixed while the gradient is probed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::ctc::{beam_search, ctc_prob};
use crate::genome::{edit_distance, Base};
use crate::nn::{basecaller_forward, BasecallerWeights, NetTopology, NnError, ProbMatrix, QuantMode};
use crate::synth::{generate_truth, synthesize_window, SynthConfig};
use crate::vote::align_and_vote;

#[derive(Debug, Error, PartialEq)]
pub enum SeatError {
    #[error("eta {0} outside [0, 1]")]
    BadEta(f64),
    #[error("vote arity {0} must be an odd number of at least 3")]
    BadArity(usize),
    #[error("sample {sample} holds {got} windows, expected vote arity {want}")]
    ArityMismatch {
        sample: usize,
        got: usize,
        want: usize,
    },
    #[error("forward pass failed: {0}")]
    Forward(#[from] NnError),
}

/// Probabilities are floored here before every logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// One training sample: a bundle of overlapping signal windows around one
/// locus and the ground-truth read for it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub windows: Vec<Vec<f64>>,
    pub truth: Vec<Base>,
}

impl TrainSample {
    /// The window the losses condition on.
    pub fn center(&self) -> &[f64] {
        &self.windows[self.windows.len() / 2]
    }
}

/// Consensus-loss knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeatConfig {
    /// Weight of the per-read term inside the consensus-aware loss.
    pub eta: f64,
    /// Number of overlapping windows voting per sample; odd, at least 3.
    pub vote_arity: usize,
    /// Beam width used when decoding predicted reads.
    pub beam_width: usize,
}

impl SeatConfig {
    pub fn new(eta: f64, vote_arity: usize) -> Result<SeatConfig, SeatError> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(SeatError::BadEta(eta));
        }
        if vote_arity < 3 || vote_arity % 2 == 0 {
            return Err(SeatError::BadArity(vote_arity));
        }
        Ok(SeatConfig {
            eta,
            vote_arity,
            beam_width: 4,
        })
    }
}

/// A trainable model: topology, weights, and the forward mode the loss is
/// computed on.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub topology: NetTopology,
    pub weights: BasecallerWeights,
    pub mode: QuantMode,
}

impl ToyModel {
    pub fn new(topology: NetTopology, weights: BasecallerWeights, mode: QuantMode) -> ToyModel {
        ToyModel {
            topology,
            weights,
            mode,
        }
    }

    pub fn forward(&self, window: &[f64]) -> Result<ProbMatrix, NnError> {
        basecaller_forward(&self.topology, &self.weights, window, self.mode)
    }

    pub fn decode(&self, window: &[f64], beam_width: usize) -> Result<Vec<Base>, NnError> {
        let probs = self.forward(window)?;
        Ok(beam_search(&probs, beam_width)
            .expect("non-empty matrix")
            .0
            .symbols)
    }
}

fn ln_floored(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// Per-read loss from precomputed truth probabilities.
pub fn loss0_from_probs(truth_probs: &[f64]) -> f64 {
    truth_probs.iter().map(|&p| -ln_floored(p)).sum()
}

/// Consensus-aware loss from precomputed (truth, consensus) probability
/// pairs.
pub fn loss1_from_probs(pairs: &[(f64, f64)], eta: f64) -> f64 {
    pairs
        .iter()
        .map(|&(p_truth, p_consensus)| {
            let lt = ln_floored(p_truth);
            let lc = ln_floored(p_consensus);
            -eta * lt + (lt - lc) * (lt - lc)
        })
        .sum()
}

/// Per-read loss of a model over a training set.
pub fn loss0(samples: &[TrainSample], model: &ToyModel) -> Result<f64, SeatError> {
    let mut probs = Vec::with_capacity(samples.len());
    for s in samples {
        let matrix = model.forward(s.center())?;
        probs.push(ctc_prob(&s.truth, &matrix));
    }
    Ok(loss0_from_probs(&probs))
}

/// Vote the consensus read for one sample from the model's current
/// predictions on all of its windows. Empty predictions abstain; if every
/// read is empty the consensus is empty.
pub fn consensus_of(
    sample: &TrainSample,
    model: &ToyModel,
    cfg: &SeatConfig,
) -> Result<Vec<Base>, SeatError> {
    let mut reads = Vec::new();
    for (i, w) in sample.windows.iter().enumerate() {
        let symbols = model.decode(w, cfg.beam_width)?;
        if !symbols.is_empty() {
            reads.push(crate::genome::Read::new(symbols, i));
        }
    }
    if reads.is_empty() {
        return Ok(Vec::new());
    }
    Ok(align_and_vote(&reads)
        .expect("non-empty, non-degenerate reads")
        .symbols)
}

/// Consensus-aware loss; consensus reads are recomputed from the model.
pub fn loss1(
    samples: &[TrainSample],
    model: &ToyModel,
    cfg: &SeatConfig,
) -> Result<f64, SeatError> {
    for (i, s) in samples.iter().enumerate() {
        if s.windows.len() != cfg.vote_arity {
            return Err(SeatError::ArityMismatch {
                sample: i,
                got: s.windows.len(),
                want: cfg.vote_arity,
            });
        }
    }
    let consensuses: Vec<Vec<Base>> = samples
        .iter()
        .map(|s| consensus_of(s, model, cfg))
        .collect::<Result<_, _>>()?;
    loss1_with_frozen_consensus(samples, model, cfg, &consensuses)
}

fn loss1_with_frozen_consensus(
    samples: &[TrainSample],
    model: &ToyModel,
    cfg: &SeatConfig,
    consensuses: &[Vec<Base>],
) -> Result<f64, SeatError> {
    let mut pairs = Vec::with_capacity(samples.len());
    for (s, c) in samples.iter().zip(consensuses) {
        let matrix = model.forward(s.center())?;
        pairs.push((ctc_prob(&s.truth, &matrix), ctc_prob(c, &matrix)));
    }
    Ok(loss1_from_probs(&pairs, cfg.eta))
}

/// Which loss drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    PerRead,
    ConsensusAware,
}

/// Training knobs: plain Adam over central-finite-difference gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub steps: usize,
    pub lr: f64,
    /// Finite-difference probe size. Keep well below weight scale on the
    /// float path; on a fixed-point path it must stay comparable to the
    /// quantization step or the probes never cross a level boundary.
    pub fd_epsilon: f64,
}

impl Default for TrainOptions {
    fn default() -> TrainOptions {
        TrainOptions {
            steps: 100,
            lr: 0.05,
            fd_epsilon: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub loss: f64,
    pub read_accuracy: f64,
    pub vote_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ToyModel,
    pub trace: Vec<TraceRow>,
    pub diverged: bool,
}

/// Normalized sequence accuracy: 1 minus edit distance over the longer
/// length.
pub fn sequence_accuracy(pred: &[Base], truth: &[Base]) -> f64 {
    let longest = pred.len().max(truth.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - edit_distance(pred, truth) as f64 / longest as f64
}

/// Mean per-read accuracy of center-window decodes.
pub fn read_accuracy(
    samples: &[TrainSample],
    model: &ToyModel,
    beam_width: usize,
) -> Result<f64, SeatError> {
    let mut total = 0.0;
    for s in samples {
        let pred = model.decode(s.center(), beam_width)?;
        total += sequence_accuracy(&pred, &s.truth);
    }
    Ok(total / samples.len() as f64)
}

/// Mean consensus accuracy over samples.
pub fn vote_accuracy(
    samples: &[TrainSample],
    model: &ToyModel,
    cfg: &SeatConfig,
) -> Result<f64, SeatError> {
    let mut total = 0.0;
    for s in samples {
        let consensus = consensus_of(s, model, cfg)?;
        total += sequence_accuracy(&consensus, &s.truth);
    }
    Ok(total / samples.len() as f64)
}

fn loss_at(
    samples: &[TrainSample],
    model: &ToyModel,
    cfg: &SeatConfig,
    kind: LossKind,
    consensuses: &[Vec<Base>],
) -> Result<f64, SeatError> {
    match kind {
        LossKind::PerRead => loss0(samples, model),
        LossKind::ConsensusAware => {
            loss1_with_frozen_consensus(samples, model, cfg, consensuses)
        }
    }
}

/// Train a toy model by Adam over central finite differences.
///
/// Consensus reads (for the consensus-aware loss) are refreshed from the
/// current model at the top of every step and frozen during the gradient
/// probes. Training stops early and flags divergence if the loss stops
/// being finite.
pub fn train_toy(
    model: &ToyModel,
    samples: &[TrainSample],
    kind: LossKind,
    cfg: &SeatConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome, SeatError> {
    assert!(
        model.topology.param_count() <= 2000,
        "finite differences are budgeted for at most 2000 parameters"
    );
    let mut current = model.clone();
    let mut theta = current.weights.to_flat();
    let mut adam_m = vec![0.0; theta.len()];
    let mut adam_v = vec![0.0; theta.len()];
    let (beta1, beta2, adam_eps) = (0.9, 0.999, 1e-8);
    let mut trace = Vec::with_capacity(opts.steps + 1);
    let mut diverged = false;
    for step in 0..=opts.steps {
        let consensuses: Vec<Vec<Base>> = samples
            .iter()
            .map(|s| consensus_of(s, &current, cfg))
            .collect::<Result<_, _>>()?;
        let loss = loss_at(samples, &current, cfg, kind, &consensuses)?;
        trace.push(TraceRow {
            step,
            loss,
            read_accuracy: read_accuracy(samples, &current, cfg.beam_width)?,
            vote_accuracy: vote_accuracy(samples, &current, cfg)?,
        });
        if !loss.is_finite() {
            diverged = true;
            break;
        }
        if step == opts.steps || opts.lr == 0.0 {
            if opts.lr == 0.0 && step < opts.steps {
                // Nothing will change; replicate the row for the remaining
                // steps so traces keep their promised length.
                for s in step + 1..=opts.steps {
                    let mut row = trace.last().expect("pushed above").clone();
                    row.step = s;
                    trace.push(row);
                }
            }
            break;
        }
        // Central finite differences, probed in parallel.
        let grad: Vec<f64> = (0..theta.len())
            .into_par_iter()
            .map(|i| {
                let mut probe = current.clone();
                let mut plus = theta.clone();
                plus[i] += opts.fd_epsilon;
                probe.weights.load_flat(&plus).expect("same length");
                let up = loss_at(samples, &probe, cfg, kind, &consensuses)
                    .expect("probe forward cannot fail after base forward");
                let mut minus = theta.clone();
                minus[i] -= opts.fd_epsilon;
                probe.weights.load_flat(&minus).expect("same length");
                let down = loss_at(samples, &probe, cfg, kind, &consensuses)
                    .expect("probe forward cannot fail after base forward");
                (up - down) / (2.0 * opts.fd_epsilon)
            })
            .collect();
        let t = (step + 1) as f64;
        for i in 0..theta.len() {
            adam_m[i] = beta1 * adam_m[i] + (1.0 - beta1) * grad[i];
            adam_v[i] = beta2 * adam_v[i] + (1.0 - beta2) * grad[i] * grad[i];
            let m_hat = adam_m[i] / (1.0 - beta1.powf(t));
            let v_hat = adam_v[i] / (1.0 - beta2.powf(t));
            theta[i] -= opts.lr * m_hat / (v_hat.sqrt() + adam_eps);
        }
        current.weights.load_flat(&theta).expect("same length");
    }
    Ok(TrainOutcome {
        model: current,
        trace,
        diverged,
    })
}

/// Central finite difference of the per-read loss along one coordinate.
pub fn fd_central(
    samples: &[TrainSample],
    model: &ToyModel,
    coord: usize,
    eps: f64,
) -> Result<f64, SeatError> {
    let theta = model.weights.to_flat();
    let mut probe = model.clone();
    let mut plus = theta.clone();
    plus[coord] += eps;
    probe.weights.load_flat(&plus).expect("same length");
    let up = loss0(samples, &probe)?;
    let mut minus = theta;
    minus[coord] -= eps;
    probe.weights.load_flat(&minus).expect("same length");
    let down = loss0(samples, &probe)?;
    Ok((up - down) / (2.0 * eps))
}

/// Forward finite difference of the per-read loss along one coordinate.
pub fn fd_forward(
    samples: &[TrainSample],
    model: &ToyModel,
    coord: usize,
    eps: f64,
) -> Result<f64, SeatError> {
    let theta = model.weights.to_flat();
    let base = loss0(samples, model)?;
    let mut probe = model.clone();
    let mut plus = theta;
    plus[coord] += eps;
    probe.weights.load_flat(&plus).expect("same length");
    let up = loss0(samples, &probe)?;
    Ok((up - base) / eps)
}

/// Build a synthetic training set: repeat-free truths, each sampled into
/// `vote_arity` overlapping windows with independent dwell and noise.
pub fn make_toy_dataset(
    n_samples: usize,
    truth_len: usize,
    vote_arity: usize,
    window_len: usize,
    synth: &SynthConfig,
    seed: u64,
) -> Vec<TrainSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_samples)
        .map(|_| {
            let truth = generate_truth(truth_len, synth.allow_repeats, &mut rng);
            let windows = (0..vote_arity)
                .map(|_| synthesize_window(&truth, window_len, synth, &mut rng))
                .collect();
            TrainSample { windows, truth }
        })
        .collect()
}
