//! Run configuration: one JSON file drives every subcommand, with CLI flags
//! overriding the seed and output paths.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use helix_core::nn::NetTopology;
use helix_core::pim::{ComponentTable, CrossbarConfig, HostCalibration, Scheme, Workload};
use helix_core::synth::SynthConfig;
use helix_core::variation::VariationParams;

/// Synthetic-pipeline knobs for `basecall`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    pub truth_len: usize,
    pub base_levels: [f64; 4],
    pub noise_sigma: f64,
    pub dwell_noise_sigma: f64,
    /// Fresh noise added to each window copy before decoding; errors it
    /// causes are independent across the reads covering a locus, which is
    /// the regime read voting repairs.
    pub read_noise_sigma: f64,
    pub dwell_min: usize,
    pub dwell_max: usize,
    /// Signal window length the toy caller decodes at a time.
    pub window_len: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            truth_len: 60,
            base_levels: [-0.9, -0.3, 0.3, 0.9],
            noise_sigma: 0.05,
            dwell_noise_sigma: 0.0,
            read_noise_sigma: 0.0,
            dwell_min: 2,
            dwell_max: 3,
            window_len: 24,
        }
    }
}

impl SynthSection {
    pub fn to_synth_config(&self) -> SynthConfig {
        SynthConfig {
            base_levels: self.base_levels,
            noise_sigma: self.noise_sigma,
            dwell_noise_sigma: self.dwell_noise_sigma,
            dwell_min: self.dwell_min,
            dwell_max: self.dwell_max,
            allow_repeats: false,
        }
    }
}

/// Toy-training knobs for `train-toy`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub samples: usize,
    pub truth_len: usize,
    pub window_len: usize,
    pub vote_arity: usize,
    pub eta: f64,
    pub steps: usize,
    pub lr: f64,
    pub fd_epsilon: f64,
    pub noise_sigma: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            samples: 6,
            truth_len: 3,
            window_len: 8,
            vote_arity: 3,
            eta: 1.0,
            steps: 40,
            lr: 0.05,
            fd_epsilon: 1e-4,
            noise_sigma: 0.08,
        }
    }
}

/// Monte Carlo knobs for `mc`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct McSection {
    pub samples: u64,
    pub cell_sizes_f2: Vec<f64>,
    pub tail_prob: f64,
}

impl Default for McSection {
    fn default() -> Self {
        McSection {
            samples: 1_000_000,
            cell_sizes_f2: vec![40.0, 50.0, 60.0],
            tail_prob: 1e-9,
        }
    }
}

/// The whole run configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Base-caller family: `guppy`, `scrappie`, or `chiron-toy`.
    pub topology: Option<String>,
    pub bit_width: Option<u32>,
    pub beam_width: Option<usize>,
    pub coverage: Option<usize>,
    /// Scheme labels for `simulate`, in ladder order.
    pub variants: Option<Vec<String>>,
    pub seed: Option<u64>,
    pub synth: SynthSection,
    pub train: TrainSection,
    pub mc: McSection,
    pub accelerator: Option<CrossbarConfig>,
    pub components: Option<ComponentTable>,
    pub calibration: Option<HostCalibration>,
    pub variation: Option<VariationParams>,
}

pub const KNOWN_TOPOLOGIES: [&str; 3] = ["guppy", "scrappie", "chiron-toy"];

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let cfg = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(name) = &self.topology {
            if !KNOWN_TOPOLOGIES.contains(&name.as_str()) {
                bail!(
                    "unknown topology {name:?}; expected one of {}",
                    KNOWN_TOPOLOGIES.join("|")
                );
            }
        }
        if let Some(bits) = self.bit_width {
            if !(3..=32).contains(&bits) {
                bail!("bit_width {bits} outside [3, 32]");
            }
        }
        if let Some(w) = self.beam_width {
            if w == 0 {
                bail!("beam_width must be at least 1");
            }
        }
        if let Some(c) = self.coverage {
            if c == 0 {
                bail!("coverage must be at least 1");
            }
        }
        if self.train.vote_arity < 3 || self.train.vote_arity % 2 == 0 {
            bail!("train.vote_arity must be odd and at least 3");
        }
        if !(0.0..=1.0).contains(&self.train.eta) {
            bail!("train.eta must lie in [0, 1]");
        }
        if self.synth.dwell_min == 0 || self.synth.dwell_max < self.synth.dwell_min {
            bail!("synth dwell range is empty");
        }
        Ok(())
    }

    pub fn bit_width(&self) -> u32 {
        self.bit_width.unwrap_or(5)
    }

    pub fn beam_width(&self) -> usize {
        self.beam_width.unwrap_or(4)
    }

    pub fn coverage(&self) -> usize {
        self.coverage.unwrap_or(3)
    }

    pub fn seed(&self, cli_seed: Option<u64>) -> u64 {
        cli_seed.or(self.seed).unwrap_or(0)
    }

    pub fn accelerator(&self) -> CrossbarConfig {
        self.accelerator.unwrap_or_default()
    }

    pub fn components(&self) -> ComponentTable {
        self.components.clone().unwrap_or_default()
    }

    pub fn calibration(&self) -> HostCalibration {
        self.calibration.unwrap_or_default()
    }

    pub fn variation(&self) -> VariationParams {
        self.variation.unwrap_or_default()
    }

    /// Scheme list for `simulate`; an explicitly empty list is an error.
    pub fn schemes(&self) -> Result<Vec<Scheme>> {
        let labels = match &self.variants {
            None => return Ok(Scheme::LADDER.to_vec()),
            Some(l) => l,
        };
        if labels.is_empty() {
            bail!("variant list is empty");
        }
        labels
            .iter()
            .map(|l| {
                Scheme::LADDER
                    .iter()
                    .copied()
                    .find(|s| s.label().eq_ignore_ascii_case(l))
                    .with_context(|| format!("unknown variant {l:?}"))
            })
            .collect()
    }

    /// Accelerator workloads for `simulate`: the published profiles.
    pub fn workloads(&self) -> Vec<Workload> {
        let families = match &self.topology {
            Some(name) => vec![name.as_str()],
            None => KNOWN_TOPOLOGIES.to_vec(),
        };
        families
            .into_iter()
            .map(|f| {
                let topo = match f {
                    "guppy" => NetTopology::guppy(),
                    "scrappie" => NetTopology::scrappie(),
                    _ => NetTopology::chiron(),
                };
                Workload::from_topology(&topo)
            })
            .collect()
    }
}
