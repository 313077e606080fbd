//! `train-toy`: finite-difference training of the toy base-caller with
//! either loss, emitting the trace as CSV.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use helix_core::nn::{BasecallerWeights, NetTopology, QuantMode};
use helix_core::seat::{
    make_toy_dataset, train_toy, LossKind, SeatConfig, ToyModel, TrainOptions,
};
use helix_core::synth::SynthConfig;

use crate::config::RunConfig;
use crate::{write_output, CliError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum LossArg {
    /// Per-read negative log likelihood.
    PerRead,
    /// Consensus-aware loss with the quadratic vote term.
    ConsensusAware,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value_t = LossArg::ConsensusAware)]
    pub loss: LossArg,
}

pub fn run(args: &TrainArgs, cfg: &RunConfig, seed: u64, out: &Path) -> Result<(), CliError> {
    let t = &cfg.train;
    let seat_cfg = SeatConfig::new(t.eta, t.vote_arity).map_err(|e| CliError::Config(e.into()))?;
    let kind = match args.loss {
        LossArg::PerRead => LossKind::PerRead,
        LossArg::ConsensusAware => LossKind::ConsensusAware,
    };
    if kind == LossKind::ConsensusAware && t.eta == 0.0 {
        eprintln!(
            "warning: eta = 0 disables the per-read term; \
             training typically fails to converge"
        );
    }
    let synth = SynthConfig {
        noise_sigma: t.noise_sigma,
        dwell_min: 2,
        dwell_max: 3,
        ..SynthConfig::default()
    };
    let samples = make_toy_dataset(
        t.samples,
        t.truth_len,
        t.vote_arity,
        t.window_len,
        &synth,
        seed,
    );
    let topology = NetTopology::toy("train-toy", t.window_len, t.window_len);
    if topology.param_count() > 2000 {
        return Err(CliError::Config(anyhow::anyhow!(
            "toy model has {} parameters, finite differences are budgeted for 2000",
            topology.param_count()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let weights = BasecallerWeights::random(&topology, 0.3, &mut rng);
    let mode = QuantMode::Fixed(cfg.bit_width());
    let model = ToyModel::new(topology, weights, mode);
    let opts = TrainOptions {
        steps: t.steps,
        lr: t.lr,
        fd_epsilon: t.fd_epsilon,
    };
    let outcome =
        train_toy(&model, &samples, kind, &seat_cfg, &opts).map_err(|e| CliError::Runtime(e.into()))?;
    let mut csv_text = String::from("step,loss,read_accuracy,vote_accuracy\n");
    for row in &outcome.trace {
        csv_text.push_str(&format!(
            "{},{:.9e},{:.6},{:.6}\n",
            row.step, row.loss, row.read_accuracy, row.vote_accuracy
        ));
    }
    write_output(out, "train_trace.csv", &csv_text).map_err(CliError::Runtime)?;
    let last = outcome.trace.last().expect("trace is never empty");
    println!(
        "train-toy: {} steps, loss {:.4}, read accuracy {:.4}, vote accuracy {:.4}",
        last.step, last.loss, last.read_accuracy, last.vote_accuracy
    );
    if outcome.diverged {
        return Err(CliError::Runtime(anyhow::anyhow!(
            "training diverged: loss became non-finite"
        )));
    }
    Ok(())
}
