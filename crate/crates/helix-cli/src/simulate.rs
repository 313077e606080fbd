//! `simulate`: throughput, power, and area for every configured scheme.

use std::path::Path;

use anyhow::Result;
use serde::Serialize;

use helix_core::pim::{ledger_rollup, map_network, Scheme};
use helix_core::report::VariantResult;

use crate::config::RunConfig;
use crate::{write_output, CliError, Format};

#[derive(Serialize)]
struct SimRow {
    variant: &'static str,
    caller: String,
    bases_per_s: f64,
    power_w: f64,
    area_mm2: f64,
    bases_per_s_per_w: f64,
    bases_per_s_per_mm2: f64,
    dnn_share: f64,
    ctc_share: f64,
    vote_share: f64,
}

pub fn run(cfg: &RunConfig, out: &Path, format: Format) -> Result<(), CliError> {
    let schemes = cfg.schemes().map_err(CliError::Config)?;
    let accel = cfg.accelerator();
    let table = cfg.components();
    let cal = cfg.calibration();
    let workloads = cfg.workloads();
    let mut rows = Vec::new();
    for &scheme in &schemes {
        let ledger = ledger_rollup(&table, &accel, scheme.ledger_variant());
        for workload in &workloads {
            let mapped =
                map_network(workload, &accel, &cal, scheme).map_err(|e| CliError::Runtime(e.into()))?;
            rows.push(SimRow {
                variant: scheme.label(),
                caller: workload.name.clone(),
                bases_per_s: mapped.bases_per_s,
                power_w: ledger.chip_power_w,
                area_mm2: ledger.chip_area_mm2,
                bases_per_s_per_w: mapped.bases_per_s / ledger.chip_power_w,
                bases_per_s_per_mm2: mapped.bases_per_s / ledger.chip_area_mm2,
                dnn_share: mapped.phase_shares[0],
                ctc_share: mapped.phase_shares[1],
                vote_share: mapped.phase_shares[2],
            });
        }
    }
    let csv_text = rows_to_csv(&rows);
    write_output(out, "simulate.csv", &csv_text).map_err(CliError::Runtime)?;
    if format == Format::Json {
        let json = serde_json::to_string_pretty(&rows).map_err(|e| CliError::Runtime(e.into()))?;
        write_output(out, "simulate.json", &json).map_err(CliError::Runtime)?;
    }
    for &scheme in &[Scheme::Isaac, Scheme::Helix] {
        if schemes.contains(&scheme) {
            let ledger = ledger_rollup(&table, &accel, scheme.ledger_variant());
            println!(
                "{}: {:.1} W, {:.2} mm2",
                scheme.label(),
                ledger.chip_power_w,
                ledger.chip_area_mm2
            );
        }
    }
    println!("simulate: {} rows -> simulate.csv", rows.len());
    Ok(())
}

fn rows_to_csv(rows: &[SimRow]) -> String {
    let mut out = String::from(
        "variant,caller,bases_per_s,power_w,area_mm2,bases_per_s_per_w,bases_per_s_per_mm2,dnn_share,ctc_share,vote_share\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6e},{:.4},{:.4},{:.6e},{:.6e},{:.6},{:.6},{:.6}\n",
            r.variant,
            r.caller,
            r.bases_per_s,
            r.power_w,
            r.area_mm2,
            r.bases_per_s_per_w,
            r.bases_per_s_per_mm2,
            r.dnn_share,
            r.ctc_share,
            r.vote_share
        ));
    }
    out
}

/// Parse one or more `simulate.csv` files back into variant results.
pub fn parse_simulate_csv(paths: &[std::path::PathBuf]) -> Result<Vec<VariantResult>> {
    let mut out = Vec::new();
    for path in paths {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        for record in reader.records() {
            let record = record?;
            let label = record.get(0).unwrap_or_default().to_string();
            let scheme = Scheme::LADDER
                .iter()
                .copied()
                .find(|s| s.label() == label)
                .ok_or_else(|| anyhow::anyhow!("unknown variant {label:?} in {path:?}"))?;
            out.push(VariantResult {
                scheme,
                caller: record.get(1).unwrap_or_default().to_string(),
                bases_per_s: record.get(2).unwrap_or_default().parse()?,
                power_w: record.get(3).unwrap_or_default().parse()?,
                area_mm2: record.get(4).unwrap_or_default().parse()?,
            });
        }
    }
    Ok(out)
}
