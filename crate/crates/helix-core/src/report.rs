//! Aggregation of per-scheme simulation results into the normalized
//! comparison structure: throughput, throughput per watt, and throughput per
//! square millimeter for every scheme, ratioed against the baseline.
//!
//! Averages across base-callers use the geometric mean; the output metadata
//! records that choice.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::pim::Scheme;

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("no results for scheme {0}")]
    MissingScheme(String),
    #[error("no results at all")]
    Empty,
    #[error("scheme {scheme} regresses throughput: {value:.4} < predecessor {prev:.4}")]
    NotAccumulating {
        scheme: String,
        value: f64,
        prev: f64,
    },
}

/// One simulated (scheme, base-caller) result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantResult {
    pub scheme: Scheme,
    pub caller: String,
    pub bases_per_s: f64,
    pub power_w: f64,
    pub area_mm2: f64,
}

/// One aggregated row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeRow {
    pub scheme: Scheme,
    /// Geometric-mean absolute throughput across callers.
    pub bases_per_s: f64,
    pub power_w: f64,
    pub area_mm2: f64,
    /// Ratios normalized to the baseline scheme.
    pub throughput_ratio: f64,
    pub throughput_per_watt_ratio: f64,
    pub throughput_per_mm2_ratio: f64,
}

/// The full comparison: one row per scheme in ladder order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub rows: Vec<SchemeRow>,
    /// How per-caller numbers were averaged.
    pub averaging: &'static str,
}

fn geomean(values: &[f64]) -> f64 {
    let log_sum: f64 = values.iter().map(|v| v.ln()).sum();
    (log_sum / values.len() as f64).exp()
}

/// Aggregate per-variant results into the normalized scheme ladder.
///
/// Every scheme must be present for the same workload set; throughput must
/// accumulate monotonically along the ladder. The baseline row normalizes
/// to exactly 1.
pub fn scheme_comparison(results: &[VariantResult]) -> Result<ComparisonTable, ReportError> {
    if results.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut by_scheme: BTreeMap<Scheme, Vec<&VariantResult>> = BTreeMap::new();
    for r in results {
        by_scheme.entry(r.scheme).or_default().push(r);
    }
    let mut absolute: BTreeMap<Scheme, (f64, f64, f64)> = BTreeMap::new();
    for &scheme in &Scheme::LADDER {
        let rs = by_scheme
            .get(&scheme)
            .ok_or_else(|| ReportError::MissingScheme(scheme.label().into()))?;
        let throughput = geomean(&rs.iter().map(|r| r.bases_per_s).collect::<Vec<_>>());
        let power = geomean(&rs.iter().map(|r| r.power_w).collect::<Vec<_>>());
        let area = geomean(&rs.iter().map(|r| r.area_mm2).collect::<Vec<_>>());
        absolute.insert(scheme, (throughput, power, area));
    }
    let base = absolute[&Scheme::Isaac];
    let mut rows = Vec::new();
    let mut prev: Option<f64> = None;
    for &scheme in &Scheme::LADDER {
        let (t, p, a) = absolute[&scheme];
        if let Some(prev_t) = prev {
            if t < prev_t {
                return Err(ReportError::NotAccumulating {
                    scheme: scheme.label().into(),
                    value: t,
                    prev: prev_t,
                });
            }
        }
        prev = Some(t);
        rows.push(SchemeRow {
            scheme,
            bases_per_s: t,
            power_w: p,
            area_mm2: a,
            throughput_ratio: t / base.0,
            throughput_per_watt_ratio: (t / p) / (base.0 / base.1),
            throughput_per_mm2_ratio: (t / a) / (base.0 / base.2),
        });
    }
    Ok(ComparisonTable {
        rows,
        averaging: "geometric mean over base-callers",
    })
}

impl ComparisonTable {
    pub fn row(&self, scheme: Scheme) -> &SchemeRow {
        self.rows
            .iter()
            .find(|r| r.scheme == scheme)
            .expect("ladder is complete by construction")
    }

    /// Ratio of one scheme's throughput over another's.
    pub fn step_ratio(&self, num: Scheme, den: Scheme) -> f64 {
        self.row(num).throughput_ratio / self.row(den).throughput_ratio
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "scheme,bases_per_s,power_w,area_mm2,throughput_ratio,throughput_per_watt_ratio,throughput_per_mm2_ratio\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.6e},{:.6e},{:.6e},{:.6},{:.6},{:.6}\n",
                r.scheme.label(),
                r.bases_per_s,
                r.power_w,
                r.area_mm2,
                r.throughput_ratio,
                r.throughput_per_watt_ratio,
                r.throughput_per_mm2_ratio
            ));
        }
        out
    }
}
