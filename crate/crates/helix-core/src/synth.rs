//! Synthetic nanopore-style signals and an analytically constructed toy
//! base-caller.
//!
//! Each base holds the signal at a per-base current level for a random dwell
//! of one to a few timesteps before the next base takes over; dwell
//! variation is what makes the decoder's many-to-one alignment necessary.
//! Gaussian noise rides on top. The matched toy caller is a
//! conv/GRU/FC stack whose weights are written in closed form to implement
//! the nearest-level discriminant, so pipeline tests have a working decoder
//! without any training.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::genome::Base;
use crate::nn::{BasecallerWeights, NetTopology, RnnParams};

/// Signal-synthesis parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Mean signal level per base, indexed `[A, C, G, T]`.
    pub base_levels: [f64; 4],
    /// Independent noise per signal sample.
    pub noise_sigma: f64,
    /// Noise drawn once per dwell event and held for its duration; flips a
    /// whole base at once, so decode errors come out as substitutions.
    pub dwell_noise_sigma: f64,
    pub dwell_min: usize,
    pub dwell_max: usize,
    /// Permit consecutive identical bases in generated truths. Collapse
    /// decoding cannot separate a repeat from dwell without blank emissions,
    /// so demos default to repeat-free truths.
    pub allow_repeats: bool,
}

impl Default for SynthConfig {
    fn default() -> SynthConfig {
        SynthConfig {
            base_levels: [-0.9, -0.3, 0.3, 0.9],
            noise_sigma: 0.05,
            dwell_noise_sigma: 0.0,
            dwell_min: 1,
            dwell_max: 3,
            allow_repeats: false,
        }
    }
}

/// Random truth sequence over the four bases.
pub fn generate_truth<R: Rng>(len: usize, allow_repeats: bool, rng: &mut R) -> Vec<Base> {
    let mut out: Vec<Base> = Vec::with_capacity(len);
    while out.len() < len {
        let b = Base::ALL[rng.gen_range(0..4)];
        if !allow_repeats && out.last() == Some(&b) {
            continue;
        }
        out.push(b);
    }
    out
}

/// A synthesized signal plus the truth index that produced each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSignal {
    pub samples: Vec<f64>,
    /// For every signal sample, the index of the truth base it came from.
    pub base_index: Vec<usize>,
}

fn emit_dwell<R: Rng>(
    signal: &mut SynthSignal,
    base: Base,
    truth_idx: usize,
    dwell: usize,
    cfg: &SynthConfig,
    rng: &mut R,
) {
    let sample_noise =
        Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let dwell_noise =
        Normal::new(0.0, cfg.dwell_noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let event_offset = if cfg.dwell_noise_sigma > 0.0 {
        dwell_noise.sample(rng)
    } else {
        0.0
    };
    for _ in 0..dwell {
        let n = if cfg.noise_sigma > 0.0 {
            sample_noise.sample(rng)
        } else {
            0.0
        };
        signal
            .samples
            .push(cfg.base_levels[base.index()] + event_offset + n);
        signal.base_index.push(truth_idx);
    }
}

/// Synthesize a free-running signal: every base dwells for a random number
/// of timesteps at its level plus noise.
pub fn synthesize<R: Rng>(truth: &[Base], cfg: &SynthConfig, rng: &mut R) -> SynthSignal {
    let mut signal = SynthSignal {
        samples: Vec::new(),
        base_index: Vec::new(),
    };
    for (i, &b) in truth.iter().enumerate() {
        let dwell = rng.gen_range(cfg.dwell_min..=cfg.dwell_max);
        emit_dwell(&mut signal, b, i, dwell, cfg, rng);
    }
    signal
}

/// Random per-base dwells in `[dwell_min, dwell_max]` summing exactly to
/// `total`.
fn partition_dwells<R: Rng>(
    n: usize,
    total: usize,
    dwell_min: usize,
    dwell_max: usize,
    rng: &mut R,
) -> Vec<usize> {
    assert!(
        n * dwell_min <= total && total <= n * dwell_max,
        "{total} samples not reachable with {n} bases dwelling {dwell_min}..={dwell_max}"
    );
    let mut dwells = vec![dwell_min; n];
    let mut remaining = total - n * dwell_min;
    while remaining > 0 {
        let k = rng.gen_range(0..n);
        if dwells[k] < dwell_max {
            dwells[k] += 1;
            remaining -= 1;
        }
    }
    dwells
}

/// Synthesize exactly `total_len` samples for a truth by partitioning the
/// stream into per-base dwells inside `[dwell_min, dwell_max]`, keeping the
/// sample-to-base map.
pub fn synthesize_stream<R: Rng>(
    truth: &[Base],
    total_len: usize,
    cfg: &SynthConfig,
    rng: &mut R,
) -> SynthSignal {
    let dwells = partition_dwells(truth.len(), total_len, cfg.dwell_min, cfg.dwell_max, rng);
    let mut signal = SynthSignal {
        samples: Vec::with_capacity(total_len),
        base_index: Vec::with_capacity(total_len),
    };
    for (i, (&b, &d)) in truth.iter().zip(&dwells).enumerate() {
        emit_dwell(&mut signal, b, i, d, cfg, rng);
    }
    signal
}

/// Synthesize exactly `window_len` samples for a truth; the window variant
/// of [`synthesize_stream`].
pub fn synthesize_window<R: Rng>(
    truth: &[Base],
    window_len: usize,
    cfg: &SynthConfig,
    rng: &mut R,
) -> Vec<f64> {
    synthesize_stream(truth, window_len, cfg, rng).samples
}

/// Re-emit one window of a synthesized stream with a fresh level-noise draw
/// per dwell run, so the errors this read makes are independent of every
/// other read covering the same bases and stay substitutions rather than
/// indels.
pub fn window_with_read_noise<R: Rng>(
    truth: &[Base],
    stream: &SynthSignal,
    offset: usize,
    window_len: usize,
    cfg: &SynthConfig,
    read_noise_sigma: f64,
    rng: &mut R,
) -> Vec<f64> {
    let sample_noise =
        Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let level_noise =
        Normal::new(0.0, read_noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut out = Vec::with_capacity(window_len);
    let mut current_run = usize::MAX;
    let mut run_offset = 0.0;
    for k in offset..offset + window_len {
        let idx = stream.base_index[k];
        if idx != current_run {
            current_run = idx;
            run_offset = if read_noise_sigma > 0.0 {
                level_noise.sample(rng)
            } else {
                0.0
            };
        }
        let n = if cfg.noise_sigma > 0.0 {
            sample_noise.sample(rng)
        } else {
            0.0
        };
        out.push(cfg.base_levels[truth[idx].index()] + run_offset + n);
    }
    out
}

/// Topology of the matched toy caller.
pub fn matched_topology(window_len: usize, slide: usize) -> NetTopology {
    NetTopology::toy("level-matched", window_len, slide)
}

/// Closed-form weights implementing the nearest-level classifier.
///
/// The conv passes the signal through its center tap onto channel 0, the
/// GRU update gate is forced to zero so the cell re-emits `tanh` of its
/// input, and the FC head applies the equal-variance discriminant
/// `a*(m_b*h - m_b^2/2)` against the twice-squashed levels `m_b`. Blank
/// carries a constant losing logit, so repeats collapse by dwell rather
/// than by blank emission.
pub fn matched_weights(topology: &NetTopology, cfg: &SynthConfig, sharpness: f64) -> BasecallerWeights {
    let mut w = BasecallerWeights::zeros(topology);
    // Conv: center tap of kernel 3 onto output channel 0.
    let conv = &mut w.convs[0];
    let spec = conv.spec;
    assert_eq!(spec.kernel, 3);
    assert_eq!(spec.in_ch, 1);
    conv.w[(1 * spec.in_ch) * spec.out_ch] = 1.0;
    // GRU: update gate zero, candidate passes tanh(x) on channel 0.
    match &mut w.rnns[0] {
        RnnParams::Gru(p) => {
            p.b_z.fill(-0.5);
            p.w_h[(0, 0)] = 1.0;
        }
        RnnParams::Lstm(_) => unreachable!("toy topology uses a GRU"),
    }
    // FC: discriminant over the twice-squashed levels on hidden channel 0.
    let squashed: Vec<f64> = cfg
        .base_levels
        .iter()
        .map(|&m| m.tanh().tanh())
        .collect();
    for (b, &m) in squashed.iter().enumerate() {
        w.fc.w[(b, 0)] = sharpness * m;
        w.fc.b[b] = -sharpness * m * m / 2.0;
    }
    // Blank never wins on in-range signals.
    w.fc.b[4] = -sharpness * 0.25;
    w
}

/// A ready-to-run matched caller at the default sharpness.
pub fn matched_caller(
    window_len: usize,
    slide: usize,
    cfg: &SynthConfig,
) -> (NetTopology, BasecallerWeights) {
    let topology = matched_topology(window_len, slide);
    let weights = matched_weights(&topology, cfg, 100.0);
    (topology, weights)
}
