//! Desk-scale model of a processing-in-memory nanopore base-calling accelerator.
//!
//! The crate is organized around the base-calling pipeline and the hardware it
//! runs on:
//!
//! - [`genome`]: DNA symbol types, edit distance, random/systematic error
//!   classification.
//! - [`quant`]: uniform fixed-point quantization plus the bit-slicing and
//!   bit-serial decompositions a crossbar consumes.
//! - [`nn`]: float and quantized forward passes for Conv/GRU/FC base-callers,
//!   producing per-timestep base probability matrices.
//! - [`ctc`]: CTC probability computation, prefix beam search, and the
//!   crossbar-mapped beam step.
//! - [`seat`]: consensus-aware loss functions and finite-difference toy
//!   training.
//! - [`vote`]: read alignment, majority consensus, and the binary comparator
//!   array model.
//! - [`pim`]: crossbar dot-product engine, SOT-MRAM ADC array, pipeline
//!   timing, and the power/area ledger.
//! - [`variation`]: process-variation Monte Carlo for SOT-MRAM write timing
//!   and comparator reliability.
//! - [`report`]: aggregation of per-scheme simulation results into normalized
//!   comparison tables.
//! - [`synth`]: synthetic signal generation and an analytically constructed
//!   toy base-caller used by the CLI and tests.

pub mod ctc;
pub mod genome;
pub mod nn;
pub mod pim;
pub mod quant;
pub mod report;
pub mod seat;
pub mod synth;
pub mod variation;
pub mod vote;
