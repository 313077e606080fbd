//! `report`: aggregate simulate outputs into the normalized scheme ladder.

use std::path::{Path, PathBuf};

use anyhow::Context;

use helix_core::report::scheme_comparison;

use crate::simulate::parse_simulate_csv;
use crate::{write_output, CliError, Format};

#[derive(Debug, clap::Args)]
pub struct ReportArgs {
    /// Simulate CSVs to aggregate; defaults to `<out>/simulate.csv`.
    #[arg(long)]
    pub inputs: Vec<PathBuf>,
}

pub fn run(args: &ReportArgs, out: &Path, format: Format) -> Result<(), CliError> {
    let inputs = if args.inputs.is_empty() {
        vec![out.join("simulate.csv")]
    } else {
        args.inputs.clone()
    };
    for input in &inputs {
        if !input.exists() {
            return Err(CliError::Config(anyhow::anyhow!(
                "input {} does not exist; run `helix simulate` first",
                input.display()
            )));
        }
    }
    let results = parse_simulate_csv(&inputs)
        .context("parsing simulate outputs")
        .map_err(CliError::Config)?;
    let table = scheme_comparison(&results).map_err(|e| CliError::Runtime(e.into()))?;
    write_output(out, "comparison.csv", &table.to_csv()).map_err(CliError::Runtime)?;
    if format == Format::Json {
        let json = serde_json::to_string_pretty(&table).map_err(|e| CliError::Runtime(e.into()))?;
        write_output(out, "comparison.json", &json).map_err(CliError::Runtime)?;
    }
    for row in &table.rows {
        println!(
            "{:>7}: throughput x{:.3}, per W x{:.3}, per mm2 x{:.3}",
            row.scheme.label(),
            row.throughput_ratio,
            row.throughput_per_watt_ratio,
            row.throughput_per_mm2_ratio
        );
    }
    Ok(())
}
