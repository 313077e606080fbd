//! `mc`: write-duration Monte Carlo across cell sizes.

use std::path::Path;

use anyhow::Context;
use serde::Serialize;

use helix_core::variation::{calibrate, mc_sweep, SweepResult, DESIGN_PULSE_S};

use crate::config::RunConfig;
use crate::{write_output, CliError, Format};

#[derive(Serialize)]
struct SizeSummary {
    cell_size_f2: f64,
    samples: u64,
    min_s: f64,
    mean_s: f64,
    max_s: f64,
    exceed_design_pulse: u64,
    design_pulse_s: f64,
}

pub fn run(cfg: &RunConfig, seed: u64, out: &Path, format: Format) -> Result<(), CliError> {
    let mc = &cfg.mc;
    if mc.samples < 10_000 {
        return Err(CliError::Config(anyhow::anyhow!(
            "mc.samples = {} is below the 10000 minimum",
            mc.samples
        )));
    }
    let params = cfg.variation();
    let fit = calibrate(&params, mc.tail_prob)
        .context("calibration")
        .map_err(CliError::Runtime)?;
    let mut summaries = Vec::new();
    for &size in &mc.cell_sizes_f2 {
        let sweep = mc_sweep(&params, &fit, size, mc.samples, seed)
            .map_err(|e| CliError::Runtime(e.into()))?;
        write_output(
            out,
            &format!("mc_hist_{}f2.csv", size as u64),
            &histogram_csv(&sweep),
        )
        .map_err(CliError::Runtime)?;
        println!(
            "mc {}F2: n = {}, worst case {:.4e} s, {} samples above {:.2e} s",
            size, sweep.n, sweep.max, sweep.exceed_design_pulse, DESIGN_PULSE_S
        );
        summaries.push(SizeSummary {
            cell_size_f2: size,
            samples: sweep.n,
            min_s: sweep.min,
            mean_s: sweep.mean,
            max_s: sweep.max,
            exceed_design_pulse: sweep.exceed_design_pulse,
            design_pulse_s: DESIGN_PULSE_S,
        });
    }
    let json = serde_json::to_string_pretty(&summaries).map_err(|e| CliError::Runtime(e.into()))?;
    write_output(out, "mc_summary.json", &json).map_err(CliError::Runtime)?;
    if format == Format::Csv {
        let mut csv_text = String::from(
            "cell_size_f2,samples,min_s,mean_s,max_s,exceed_design_pulse,design_pulse_s\n",
        );
        for s in &summaries {
            csv_text.push_str(&format!(
                "{},{},{:.9e},{:.9e},{:.9e},{},{:.9e}\n",
                s.cell_size_f2,
                s.samples,
                s.min_s,
                s.mean_s,
                s.max_s,
                s.exceed_design_pulse,
                s.design_pulse_s
            ));
        }
        write_output(out, "mc_summary.csv", &csv_text).map_err(CliError::Runtime)?;
    }
    Ok(())
}

fn histogram_csv(sweep: &SweepResult) -> String {
    let edges = SweepResult::histogram_bin_edges();
    let mut out = String::from("bin_lo_s,bin_hi_s,count\n");
    // First and last slots catch under- and overflow.
    out.push_str(&format!("0,{:.6e},{}\n", edges[0], sweep.histogram[0]));
    for (i, pair) in edges.windows(2).enumerate() {
        let count = sweep.histogram[i + 1];
        if count > 0 {
            out.push_str(&format!("{:.6e},{:.6e},{}\n", pair[0], pair[1], count));
        }
    }
    out.push_str(&format!(
        "{:.6e},inf,{}\n",
        edges[edges.len() - 1],
        sweep.histogram[sweep.histogram.len() - 1]
    ));
    out
}
