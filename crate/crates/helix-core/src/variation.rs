//! Process-variation Monte Carlo for SOT-MRAM write duration, transistor
//! sizing sweeps, and comparator read-error tail estimation.
//!
//! The switching-time law is `t = tau0 * exp((1 - I/(A*Jc0)) * delta)`. The
//! fitting constants are not physical givens; they are calibrated so that at
//! the reference 60F^2 cell size the write-duration tail crosses the design
//! pulse width (1.56 ns) only with negligible probability, mirroring how the
//! transistor is sized up until the worst-case cell switches inside the
//! pulse. Write current comes from a square-law proxy
//! `I = k * (W/L) * (Vgs - Vth)^2`, which preserves the monotone
//! dependencies the parameter table exercises.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum VariationError {
    #[error("write current must be positive, got {0}")]
    NonPositiveCurrent(f64),
    #[error("sample count {0} below minimum 10000")]
    TooFewSamples(u64),
    #[error("calibration failed to bracket the tail target")]
    CalibrationFailed,
}

/// A positive parameter with multiplicative lognormal variation:
/// `X = mean * exp(rel_sigma * Z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LognormalParam {
    pub mean: f64,
    pub rel_sigma: f64,
}

impl LognormalParam {
    pub fn new(mean: f64, rel_sigma: f64) -> LognormalParam {
        LognormalParam { mean, rel_sigma }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.mean * (self.rel_sigma * z).exp()
    }
}

/// Device-variation table: write/read transistor geometry, threshold
/// voltage, MTJ resistance-area product, MTJ cross-section, and
/// magnetization stability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariationParams {
    /// Write/read transistor width, meters.
    pub transistor_width: LognormalParam,
    /// Write/read transistor length, meters.
    pub transistor_length: LognormalParam,
    /// Threshold voltage, volts.
    pub threshold_voltage: LognormalParam,
    /// MTJ resistance-area product, ohm * m^2.
    pub resistance_area: LognormalParam,
    /// MTJ free-layer cross-section, m^2.
    pub mtj_area: LognormalParam,
    /// Magnetization stability energy height, dimensionless.
    pub stability: LognormalParam,
}

impl Default for VariationParams {
    fn default() -> VariationParams {
        VariationParams {
            transistor_width: LognormalParam::new(384e-9, 0.10),
            transistor_length: LognormalParam::new(192e-9, 0.10),
            threshold_voltage: LognormalParam::new(0.2, 0.10),
            resistance_area: LognormalParam::new(25e-12, 0.08),
            mtj_area: LognormalParam::new(64e-9 * 128e-9, 0.05),
            stability: LognormalParam::new(22.0, 0.27),
        }
    }
}

impl VariationParams {
    /// Copy with every sigma zeroed; sampling becomes degenerate.
    pub fn nominal_only(&self) -> VariationParams {
        let zero = |p: LognormalParam| LognormalParam::new(p.mean, 0.0);
        VariationParams {
            transistor_width: zero(self.transistor_width),
            transistor_length: zero(self.transistor_length),
            threshold_voltage: zero(self.threshold_voltage),
            resistance_area: zero(self.resistance_area),
            mtj_area: zero(self.mtj_area),
            stability: zero(self.stability),
        }
    }
}

/// Reference cell size the calibration anchors to.
pub const REFERENCE_CELL_F2: f64 = 60.0;
/// Design write-pulse width the sizing sweep must respect.
pub const DESIGN_PULSE_S: f64 = 1.56e-9;

/// Fitting constants of the switching-time law plus the current proxy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConstants {
    /// Attempt-time prefactor, seconds.
    pub tau0: f64,
    /// Critical current density at zero temperature, A/m^2.
    pub j_c0: f64,
    /// Square-law transconductance, A/V^2.
    pub k_trans: f64,
    /// Gate drive voltage, volts.
    pub v_gs: f64,
}

/// One sampled cell: parameter draws, the derived write current, and the
/// fitting constants in force.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSample {
    pub transistor_width: f64,
    pub transistor_length: f64,
    pub threshold_voltage: f64,
    pub resistance_area: f64,
    pub mtj_area: f64,
    pub stability: f64,
    pub current: f64,
    pub tau0: f64,
    pub j_c0: f64,
}

fn current_from_geometry(fit: &FitConstants, width: f64, length: f64, v_th: f64) -> f64 {
    let overdrive = (fit.v_gs - v_th).max(1e-6);
    fit.k_trans * (width / length) * overdrive * overdrive
}

/// Sample one cell at a given cell size; the write transistor width scales
/// with the cell footprint relative to the 60F^2 reference.
pub fn sample_cell<R: Rng>(
    params: &VariationParams,
    fit: &FitConstants,
    cell_size_f2: f64,
    rng: &mut R,
) -> CellSample {
    let width_scale = cell_size_f2 / REFERENCE_CELL_F2;
    let width = params.transistor_width.sample(rng) * width_scale;
    let length = params.transistor_length.sample(rng);
    let v_th = params.threshold_voltage.sample(rng);
    let ra = params.resistance_area.sample(rng);
    let area = params.mtj_area.sample(rng);
    let delta = params.stability.sample(rng);
    CellSample {
        transistor_width: width,
        transistor_length: length,
        threshold_voltage: v_th,
        resistance_area: ra,
        mtj_area: area,
        stability: delta,
        current: current_from_geometry(fit, width, length, v_th),
        tau0: fit.tau0,
        j_c0: fit.j_c0,
    }
}

/// The all-nominal cell at a given size.
pub fn nominal_cell(params: &VariationParams, fit: &FitConstants, cell_size_f2: f64) -> CellSample {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    sample_cell(&params.nominal_only(), fit, cell_size_f2, &mut rng)
}

/// Switching duration `tau0 * exp((1 - I/(A*Jc0)) * delta)`.
///
/// Strictly decreasing in the write current and strictly increasing in the
/// stability when the current is below the critical value.
pub fn write_duration(cell: &CellSample) -> Result<f64, VariationError> {
    if cell.current <= 0.0 {
        return Err(VariationError::NonPositiveCurrent(cell.current));
    }
    let critical = cell.mtj_area * cell.j_c0;
    Ok(cell.tau0 * ((1.0 - cell.current / critical) * cell.stability).exp())
}

/// Calibrate the fitting constants.
///
/// `tau0` is fixed at 1 ns and `j_c0` is solved so that at the reference
/// 60F^2 size the probability of a cell needing more than the design pulse
/// is `tail_prob` (default 1e-9, three orders below what a million-sample
/// sweep can resolve). The tail integral runs over the stability
/// distribution with the current treated as lognormal with the combined
/// relative sigma of its factors.
pub fn calibrate(
    params: &VariationParams,
    tail_prob: f64,
) -> Result<FitConstants, VariationError> {
    let mut fit = FitConstants {
        tau0: 1e-9,
        j_c0: 0.0,
        k_trans: 50e-6,
        v_gs: 1.0,
    };
    let c = (DESIGN_PULSE_S / fit.tau0).ln();
    // Combined lognormal sigma of current over critical current.
    let vth = params.threshold_voltage;
    let overdrive = fit.v_gs - vth.mean;
    let sigma_vth_term = 2.0 * vth.mean * vth.rel_sigma / overdrive;
    let sigma_rho = (params.transistor_width.rel_sigma.powi(2)
        + params.transistor_length.rel_sigma.powi(2)
        + params.mtj_area.rel_sigma.powi(2)
        + sigma_vth_term.powi(2))
    .sqrt();
    let unit_normal = Normal::new(0.0, 1.0).expect("unit normal");
    // P(fail) for a given nominal current ratio rho_nom = I/(A*Jc0).
    let fail_prob = |ln_rho_nom: f64| -> f64 {
        let steps = 4000;
        let (lo, hi) = (-10.0f64, 10.0f64);
        let h = (hi - lo) / steps as f64;
        let mut acc = 0.0;
        for k in 0..=steps {
            let z = lo + k as f64 * h;
            let weight = if k == 0 || k == steps {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let delta = params.stability.mean * (params.stability.rel_sigma * z).exp();
            let rho_limit = 1.0 - c / delta;
            let inner = if rho_limit <= 0.0 || sigma_rho == 0.0 {
                if rho_limit > 0.0 && ln_rho_nom < rho_limit.ln() {
                    1.0
                } else {
                    0.0
                }
            } else {
                unit_normal.cdf((rho_limit.ln() - ln_rho_nom) / sigma_rho)
            };
            let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
            acc += weight * phi * inner;
        }
        acc * h / 3.0
    };
    // Bisection on ln(rho_nom); failure probability decreases with rho.
    let (mut lo, mut hi) = (0.0f64, 3.0f64);
    if fail_prob(lo) < tail_prob || fail_prob(hi) > tail_prob {
        return Err(VariationError::CalibrationFailed);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if fail_prob(mid) > tail_prob {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let rho_nom = (0.5 * (lo + hi)).exp();
    let i_nom = current_from_geometry(
        &fit,
        params.transistor_width.mean,
        params.transistor_length.mean,
        params.threshold_voltage.mean,
    );
    fit.j_c0 = i_nom / (rho_nom * params.mtj_area.mean);
    Ok(fit)
}

const CHUNK: u64 = 65_536;
const TOP_K: usize = 1024;
/// Histogram over log10(duration/seconds) from 1e-40 s up.
const HIST_LO_LOG10: f64 = -40.0;
const HIST_BINS: usize = 400;
const HIST_STEP: f64 = 0.1;

/// Empirical write-duration distribution from a Monte Carlo sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub cell_size_f2: f64,
    pub n: u64,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Samples above the design pulse width.
    pub exceed_design_pulse: u64,
    /// Largest `TOP_K` durations, descending.
    pub top: Vec<f64>,
    /// Counts per log10-duration bin.
    pub histogram: Vec<u64>,
}

impl SweepResult {
    /// Duration at the given upper quantile, taken from the retained top
    /// samples; `None` when the rank falls outside them.
    pub fn upper_quantile(&self, q: f64) -> Option<f64> {
        let rank = ((self.n as f64) * (1.0 - q)).floor() as usize;
        self.top.get(rank).copied()
    }

    pub fn histogram_bin_edges() -> Vec<f64> {
        (0..=HIST_BINS)
            .map(|i| 10f64.powf(HIST_LO_LOG10 + i as f64 * HIST_STEP))
            .collect()
    }
}

struct ChunkStats {
    min: f64,
    max: f64,
    sum: f64,
    exceed: u64,
    top: Vec<f64>,
    histogram: Vec<u64>,
}

fn sweep_chunk(
    params: &VariationParams,
    fit: &FitConstants,
    cell_size_f2: f64,
    seed: u64,
    chunk_idx: u64,
    count: u64,
) -> ChunkStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk_idx + 1);
    let mut stats = ChunkStats {
        min: f64::INFINITY,
        max: f64::NEG_INFINITY,
        sum: 0.0,
        exceed: 0,
        top: Vec::with_capacity(TOP_K + 1),
        histogram: vec![0; HIST_BINS + 2],
    };
    for _ in 0..count {
        let cell = sample_cell(params, fit, cell_size_f2, &mut rng);
        let t = write_duration(&cell).expect("positive current by construction");
        stats.min = stats.min.min(t);
        stats.max = stats.max.max(t);
        stats.sum += t;
        if t > DESIGN_PULSE_S {
            stats.exceed += 1;
        }
        let bin = ((t.log10() - HIST_LO_LOG10) / HIST_STEP).floor();
        let idx = if bin < 0.0 {
            0
        } else {
            (bin as usize + 1).min(HIST_BINS + 1)
        };
        stats.histogram[idx] += 1;
        // Maintain the per-chunk top list.
        let pos = stats
            .top
            .partition_point(|&x| x > t);
        if pos < TOP_K {
            stats.top.insert(pos, t);
            stats.top.truncate(TOP_K);
        }
    }
    stats
}

/// Run `n` independent cell draws at one cell size.
///
/// Sampling is chunked with one deterministic RNG stream per chunk, so the
/// result is bit-exact for a given seed regardless of thread count.
pub fn mc_sweep(
    params: &VariationParams,
    fit: &FitConstants,
    cell_size_f2: f64,
    n: u64,
    seed: u64,
) -> Result<SweepResult, VariationError> {
    if n < 10_000 {
        return Err(VariationError::TooFewSamples(n));
    }
    let chunks: Vec<(u64, u64)> = (0..n.div_ceil(CHUNK))
        .map(|i| (i, CHUNK.min(n - i * CHUNK)))
        .collect();
    let stats: Vec<ChunkStats> = chunks
        .par_iter()
        .map(|&(idx, count)| sweep_chunk(params, fit, cell_size_f2, seed, idx, count))
        .collect();
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut exceed = 0;
    let mut top: Vec<f64> = Vec::new();
    let mut histogram = vec![0u64; HIST_BINS + 2];
    for s in stats {
        min = min.min(s.min);
        max = max.max(s.max);
        sum += s.sum;
        exceed += s.exceed;
        top.extend(s.top);
        for (h, c) in histogram.iter_mut().zip(s.histogram) {
            *h += c;
        }
    }
    top.sort_by(|a, b| b.partial_cmp(a).expect("finite durations"));
    top.truncate(TOP_K);
    Ok(SweepResult {
        cell_size_f2,
        n,
        min,
        max,
        mean: sum / n as f64,
        exceed_design_pulse: exceed,
        top,
        histogram,
    })
}

/// Per-cell read-error estimate for the binary comparator.
///
/// A cell misreads when its resistance drifts across the sense threshold.
/// The threshold sits where the lognormal resistance tail equals the
/// configured target rate; the estimate then re-derives the tail from `n`
/// fresh resistance draws by fitting the log-resistance moments and
/// extrapolating analytically, which is what a tail this deep requires.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparatorReliability {
    pub per_cell_error: f64,
    pub log_resistance_mu: f64,
    pub log_resistance_sigma: f64,
    pub sense_threshold_log: f64,
    pub samples: u64,
}

pub const COMPARATOR_CELL_ERROR_TARGET: f64 = 1e-11;

pub fn comparator_error_estimate(
    params: &VariationParams,
    n: u64,
    seed: u64,
) -> Result<ComparatorReliability, VariationError> {
    if n < 10_000 {
        return Err(VariationError::TooFewSamples(n));
    }
    let unit_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let sigma_ln_r = (params.resistance_area.rel_sigma.powi(2)
        + params.mtj_area.rel_sigma.powi(2))
    .sqrt();
    let nominal_ln_r = (params.resistance_area.mean / params.mtj_area.mean).ln();
    let z_target = unit_normal.inverse_cdf(1.0 - COMPARATOR_CELL_ERROR_TARGET);
    let threshold = nominal_ln_r + z_target * sigma_ln_r;
    // Fit the log-resistance moments from fresh draws, chunked
    // deterministically like the duration sweep.
    let chunks: Vec<(u64, u64)> = (0..n.div_ceil(CHUNK))
        .map(|i| (i, CHUNK.min(n - i * CHUNK)))
        .collect();
    let partials: Vec<(f64, f64)> = chunks
        .par_iter()
        .map(|&(idx, count)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(idx + 1);
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..count {
                let ra = params.resistance_area.sample(&mut rng);
                let area = params.mtj_area.sample(&mut rng);
                let ln_r = (ra / area).ln();
                sum += ln_r;
                sum_sq += ln_r * ln_r;
            }
            (sum, sum_sq)
        })
        .collect();
    let (sum, sum_sq) = partials
        .into_iter()
        .fold((0.0, 0.0), |(a, b), (c, d)| (a + c, b + d));
    let mu = sum / n as f64;
    let sigma = ((sum_sq / n as f64 - mu * mu).max(0.0)).sqrt();
    let per_cell_error = if sigma == 0.0 {
        0.0
    } else {
        1.0 - unit_normal.cdf((threshold - mu) / sigma)
    };
    Ok(ComparatorReliability {
        per_cell_error,
        log_resistance_mu: mu,
        log_resistance_sigma: sigma,
        sense_threshold_log: threshold,
        samples: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn default_fit() -> FitConstants {
        calibrate(&VariationParams::default(), 1e-9).unwrap()
    }

    #[test]
    fn duration_at_critical_current_is_tau0() {
        let fit = default_fit();
        let mut cell = nominal_cell(&VariationParams::default(), &fit, 60.0);
        cell.current = cell.mtj_area * cell.j_c0;
        assert_abs_diff_eq!(write_duration(&cell).unwrap(), fit.tau0, epsilon = 1e-24);
    }

    #[test]
    fn duration_at_ten_percent_overdrive() {
        let fit = default_fit();
        let mut cell = nominal_cell(&VariationParams::default(), &fit, 60.0);
        cell.stability = 22.0;
        cell.current = 1.1 * cell.mtj_area * cell.j_c0;
        let expected = fit.tau0 * (-2.2f64).exp();
        assert_abs_diff_eq!(write_duration(&cell).unwrap(), expected, epsilon = 1e-22);
    }

    #[test]
    fn nominal_reference_cell_switches_within_pulse() {
        let fit = default_fit();
        let cell = nominal_cell(&VariationParams::default(), &fit, 60.0);
        assert!(write_duration(&cell).unwrap() <= DESIGN_PULSE_S);
    }

    #[test]
    fn non_positive_current_rejected() {
        let fit = default_fit();
        let mut cell = nominal_cell(&VariationParams::default(), &fit, 60.0);
        cell.current = 0.0;
        assert!(matches!(
            write_duration(&cell),
            Err(VariationError::NonPositiveCurrent(_))
        ));
    }

    #[test]
    fn duration_monotone_in_current_and_stability() {
        use rand::Rng;
        let fit = default_fit();
        let params = VariationParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let cell = sample_cell(&params, &fit, 60.0, &mut rng);
            let t = write_duration(&cell).unwrap();
            let mut more_current = cell;
            more_current.current *= 1.0 + rng.gen_range(0.01..0.5);
            assert!(write_duration(&more_current).unwrap() < t);
            if cell.current < cell.mtj_area * cell.j_c0 {
                let mut more_stable = cell;
                more_stable.stability *= 1.0 + rng.gen_range(0.01..0.5);
                assert!(write_duration(&more_stable).unwrap() > t);
            }
        }
    }

    #[test]
    fn zero_sigma_sweep_is_degenerate() {
        let params = VariationParams::default();
        let fit = calibrate(&params, 1e-9).unwrap();
        let frozen = params.nominal_only();
        let sweep = mc_sweep(&frozen, &fit, 60.0, 10_000, 1).unwrap();
        assert_eq!(sweep.min, sweep.max);
        assert_abs_diff_eq!(sweep.mean, sweep.min, epsilon = 1e-30);
    }

    #[test]
    fn sweep_rejects_small_n() {
        let params = VariationParams::default();
        let fit = default_fit();
        assert_eq!(
            mc_sweep(&params, &fit, 60.0, 9_999, 1).unwrap_err(),
            VariationError::TooFewSamples(9_999)
        );
    }

    #[test]
    fn reference_size_tail_clear_of_pulse() {
        let params = VariationParams::default();
        let fit = calibrate(&params, 1e-9).unwrap();
        let sweep = mc_sweep(&params, &fit, 60.0, 100_000, 42).unwrap();
        assert_eq!(sweep.exceed_design_pulse, 0);
        assert!(sweep.max < DESIGN_PULSE_S);
    }

    #[test]
    fn sweep_reproducible_bit_exact() {
        let params = VariationParams::default();
        let fit = default_fit();
        let a = mc_sweep(&params, &fit, 60.0, 50_000, 7).unwrap();
        let b = mc_sweep(&params, &fit, 60.0, 50_000, 7).unwrap();
        assert_eq!(a, b);
        let c = mc_sweep(&params, &fit, 60.0, 50_000, 8).unwrap();
        assert_ne!(a.max, c.max);
    }

    #[test]
    fn bigger_cells_strictly_lower_extreme_quantile() {
        let params = VariationParams::default();
        let fit = default_fit();
        let q = 0.9999;
        let mut prev = f64::INFINITY;
        for size in [40.0, 50.0, 60.0] {
            let sweep = mc_sweep(&params, &fit, size, 100_000, 11).unwrap();
            let quant = sweep.upper_quantile(q).unwrap();
            assert!(
                quant < prev,
                "quantile should drop with size: {quant} vs {prev}"
            );
            prev = quant;
        }
    }

    #[test]
    fn log_duration_affine_in_stability_alone() {
        let params = VariationParams::default();
        let fit = default_fit();
        let mut only_delta = params.nominal_only();
        only_delta.stability = params.stability;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut pts = Vec::new();
        for _ in 0..2_000 {
            let cell = sample_cell(&only_delta, &fit, 60.0, &mut rng);
            pts.push((cell.stability, write_duration(&cell).unwrap().ln()));
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let cov = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / n;
        let vx = pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>() / n;
        let vy = pts.iter().map(|p| (p.1 - my).powi(2)).sum::<f64>() / n;
        let corr = cov / (vx * vy).sqrt();
        // Affine with negative slope: the calibrated current ratio exceeds 1.
        assert!(corr.abs() >= 0.99, "correlation {corr}");
    }

    #[test]
    fn comparator_estimate_consistent_with_target() {
        let params = VariationParams::default();
        let est = comparator_error_estimate(&params, 200_000, 3).unwrap();
        let ratio = est.per_cell_error / COMPARATOR_CELL_ERROR_TARGET;
        assert!(
            (0.2..5.0).contains(&ratio),
            "estimate {} drifted from target",
            est.per_cell_error
        );
        assert!(matches!(
            comparator_error_estimate(&params, 100, 3),
            Err(VariationError::TooFewSamples(100))
        ));
    }
}
