//! Behavioral and timing/energy model of the crossbar dot-product engine,
//! the SOT-MRAM ADC array, the five-stage engine pipeline, and the
//! tile/chip power-area ledger.
//!
//! The functional path is exact integer arithmetic: 1-bit serial inputs
//! drive 2-bit weight slices, column currents digitize through an ADC model,
//! and shift-and-add recomposes the full product. The timing path counts
//! engine cycles at the 10 MHz pipeline rate and rolls throughput up through
//! array replication across the chip.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{NetTopology, RnnKind};
use crate::quant::{bitserial_inputs, slice_weights, FixedTensor};

#[derive(Debug, Error, PartialEq)]
pub enum PimError {
    #[error("array shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("cell plane is not programmed (empty)")]
    Unprogrammed,
    #[error("reference ladder must hold {want} strictly decreasing voltages, got {got}")]
    BadRefLadder { want: usize, got: usize },
    #[error("layer {0} cannot be mapped: {1}")]
    Unmappable(String, String),
    #[error("network needs {needed} arrays, chip has {available}")]
    ChipTooSmall { needed: u64, available: u64 },
    #[error("beam width {width} needs {cells} diagonal cells, array has {dim}")]
    BeamTooWide {
        width: usize,
        cells: usize,
        dim: usize,
    },
    #[error("unknown ledger component {0:?}")]
    UnknownComponent(String),
}

/// Crossbar geometry and hierarchy, ISAAC-style defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossbarConfig {
    pub rows: usize,
    pub cols: usize,
    pub bits_per_cell: u32,
    pub dac_bits: u32,
    pub arrays_per_engine: usize,
    pub engines_per_tile: usize,
    pub tiles: usize,
    pub engine_freq_hz: f64,
    pub pipeline_stages: u64,
    /// Engine cycles per CTC beam step mapped onto an array: program the
    /// diagonal, then drive and merge.
    pub ctc_cycles_per_beam_step: u64,
    /// Comparator-bank compare rate used for the read-vote offload.
    pub comparator_arrays: u64,
    pub comparator_rows: u64,
    pub comparator_freq_hz: f64,
}

impl Default for CrossbarConfig {
    fn default() -> CrossbarConfig {
        CrossbarConfig {
            rows: 128,
            cols: 128,
            bits_per_cell: 2,
            dac_bits: 1,
            arrays_per_engine: 8,
            engines_per_tile: 12,
            tiles: 168,
            engine_freq_hz: 10e6,
            pipeline_stages: 5,
            ctc_cycles_per_beam_step: 2,
            comparator_arrays: 1024,
            comparator_rows: 256,
            comparator_freq_hz: 100e6,
        }
    }
}

impl CrossbarConfig {
    pub fn total_arrays(&self) -> u64 {
        (self.tiles * self.engines_per_tile * self.arrays_per_engine) as u64
    }
}

/// ADC resolution needed for exact digitization of a partial matvec:
/// `ceil(log2(rows)) + dac_bits + bits_per_cell - 1`.
pub fn required_adc_bits(rows: usize, dac_bits: u32, bits_per_cell: u32) -> u32 {
    (rows as f64).log2().ceil() as u32 + dac_bits + bits_per_cell - 1
}

/// Ideal column-current sum: `out[j] = sum_i input[i] * cells[i][j]`.
///
/// `cells` is a row-major `rows x cols` plane of cell levels; `input` is one
/// bit-plane of word-line drives.
pub fn analog_mac(
    cells: &[u8],
    rows: usize,
    cols: usize,
    input: &[u8],
) -> Result<Vec<u32>, PimError> {
    if cells.is_empty() {
        return Err(PimError::Unprogrammed);
    }
    if cells.len() != rows * cols {
        return Err(PimError::ShapeMismatch(format!(
            "plane holds {} cells, geometry wants {}",
            cells.len(),
            rows * cols
        )));
    }
    if input.len() != rows {
        return Err(PimError::ShapeMismatch(format!(
            "input drives {} word lines, geometry wants {rows}",
            input.len()
        )));
    }
    let mut out = vec![0u32; cols];
    for (i, &drive) in input.iter().enumerate() {
        if drive == 0 {
            continue;
        }
        let row = &cells[i * cols..(i + 1) * cols];
        for (o, &cell) in out.iter_mut().zip(row) {
            *o += drive as u32 * cell as u32;
        }
    }
    Ok(out)
}

/// SOT-MRAM ADC array: a column of cells biased by a descending
/// reference-voltage ladder.
///
/// A larger read-bit-line reference voltage lowers the write threshold, so
/// the cell under the highest reference switches first and the switched
/// cells always form a contiguous thermometer prefix. The threshold for each
/// cell is the affine image of its reference voltage, calibrated so the
/// `2^bits` design levels of the input span hit the `2^bits` codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdcArrayConfig {
    pub rows: usize,
    pub cols: usize,
    pub resolution_bits: u32,
    pub conversion_rate_hz: f64,
    pub write_pulse_s: f64,
    pub v_max: f64,
    /// Strictly decreasing reference ladder, one entry per code.
    pub refs: Vec<f64>,
    #[serde(skip)]
    thresholds: Vec<f64>,
}

impl AdcArrayConfig {
    pub fn with_refs(
        resolution_bits: u32,
        v_max: f64,
        refs: Vec<f64>,
    ) -> Result<AdcArrayConfig, PimError> {
        let want = 1usize << resolution_bits;
        if refs.len() != want || refs.windows(2).any(|w| w[1] >= w[0]) {
            return Err(PimError::BadRefLadder {
                want,
                got: refs.len(),
            });
        }
        let mut cfg = AdcArrayConfig {
            rows: 32,
            cols: 32,
            resolution_bits,
            conversion_rate_hz: 640e6,
            write_pulse_s: 1.56e-9,
            v_max,
            refs,
            thresholds: Vec::new(),
        };
        cfg.calibrate();
        Ok(cfg)
    }

    /// The two-bit demonstration ladder: 3 V down to 2.73 V in 90 mV steps.
    pub fn demo_2bit() -> AdcArrayConfig {
        AdcArrayConfig::with_refs(2, 3.0, vec![3.0, 2.91, 2.82, 2.73]).expect("valid ladder")
    }

    /// Production 5-bit ladder: 32 references spanning the same window.
    pub fn standard_5bit() -> AdcArrayConfig {
        let refs = (0..32).map(|k| 3.0 - 0.27 * k as f64 / 31.0).collect();
        AdcArrayConfig::with_refs(5, 3.0, refs).expect("valid ladder")
    }

    /// Map each reference voltage to its input threshold with the affine
    /// decreasing law pinned at the first and last design levels.
    fn calibrate(&mut self) {
        let levels = self.levels();
        let n = self.refs.len();
        let v_first = levels[0];
        let v_last = levels[n - 1];
        let slope = (v_last - v_first) / (self.refs[0] - self.refs[n - 1]);
        let intercept = v_first + slope * self.refs[0];
        self.thresholds = self.refs.iter().map(|&r| intercept - slope * r).collect();
    }

    /// The designed input levels, uniform over `(0, v_max]`.
    pub fn levels(&self) -> Vec<f64> {
        let n = 1usize << self.resolution_bits;
        (0..n)
            .map(|k| (k + 1) as f64 * self.v_max / n as f64)
            .collect()
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }
}

/// One conversion result: the digital code, the raw thermometer pattern,
/// and range flags.
#[derive(Debug, Clone, PartialEq)]
pub struct AdcReading {
    pub code: u32,
    pub pattern: Vec<bool>,
    pub under_range: bool,
    pub over_range: bool,
}

impl AdcReading {
    /// Render the thermometer pattern as a bit string, switched cells first.
    pub fn pattern_string(&self) -> String {
        self.pattern
            .iter()
            .map(|&b| if b { '1' } else { '0' })
            .collect()
    }
}

/// Convert an input voltage: cell `k` switches when the input reaches its
/// threshold, and the code is the number of switched cells minus one.
pub fn adc_convert(v_in: f64, cfg: &AdcArrayConfig) -> AdcReading {
    let pattern: Vec<bool> = cfg.thresholds.iter().map(|&t| v_in >= t).collect();
    let switched = pattern.iter().filter(|&&b| b).count() as u32;
    let max_code = (1u32 << cfg.resolution_bits) - 1;
    AdcReading {
        code: switched.saturating_sub(1).min(max_code),
        pattern,
        under_range: switched == 0,
        over_range: v_in > cfg.v_max,
    }
}

/// Outcome of pushing a fixed-point matvec through the full engine pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossbarMatvec {
    /// `sum_i x_i * w_ij` over the stored (offset-binary) levels.
    pub level_products: Vec<i64>,
    /// Conversions that hit the ADC ceiling; zero means exact.
    pub saturated_conversions: u64,
}

/// Execute `w^T x` on the crossbar: slice weights into cell planes, stream
/// input bit planes, digitize every 128-column partial sum with an ideal
/// ADC of `adc_bits`, and shift-and-add.
///
/// With enough ADC resolution (see [`required_adc_bits`]) the result equals
/// the direct integer matvec exactly.
pub fn crossbar_matvec(
    w: &FixedTensor,
    x: &FixedTensor,
    cfg: &CrossbarConfig,
    adc_bits: u32,
) -> Result<CrossbarMatvec, PimError> {
    if w.shape.len() != 2 {
        return Err(PimError::ShapeMismatch(format!(
            "weights must be 2-D, got {:?}",
            w.shape
        )));
    }
    let (rows, cols) = (w.shape[0], w.shape[1]);
    if x.shape != vec![rows] {
        return Err(PimError::ShapeMismatch(format!(
            "input shape {:?} does not match {rows} weight rows",
            x.shape
        )));
    }
    let w_planes = slice_weights(w, cfg.bits_per_cell)
        .map_err(|e| PimError::ShapeMismatch(e.to_string()))?;
    let x_planes = bitserial_inputs(x);
    let adc_ceiling = (1u64 << adc_bits) - 1;
    let mut products = vec![0i64; cols];
    let mut saturated = 0u64;
    for row_start in (0..rows).step_by(cfg.rows) {
        let row_count = cfg.rows.min(rows - row_start);
        for xp in &x_planes {
            let drive = &xp.data[row_start..row_start + row_count];
            for wp in &w_planes {
                for col_start in (0..cols).step_by(cfg.cols) {
                    let col_count = cfg.cols.min(cols - col_start);
                    // Gather the sub-plane for this array pass.
                    let mut sub = vec![0u8; row_count * col_count];
                    for r in 0..row_count {
                        let src = (row_start + r) * cols + col_start;
                        sub[r * col_count..(r + 1) * col_count]
                            .copy_from_slice(&wp.data[src..src + col_count]);
                    }
                    let sums = analog_mac(&sub, row_count, col_count, drive)?;
                    for (j, &s) in sums.iter().enumerate() {
                        let code = (s as u64).min(adc_ceiling);
                        if (s as u64) > adc_ceiling {
                            saturated += 1;
                        }
                        products[col_start + j] += (code as i64) << (xp.shift + wp.shift);
                    }
                }
            }
        }
    }
    Ok(CrossbarMatvec {
        level_products: products,
        saturated_conversions: saturated,
    })
}

/// Dequantize a crossbar product back to real values by subtracting the
/// rank-1 zero-point terms after accumulation.
pub fn dequantize_matvec(result: &CrossbarMatvec, w: &FixedTensor, x: &FixedTensor) -> Vec<f64> {
    let (rows, cols) = (w.shape[0], w.shape[1]);
    let zp_w = w.spec.zero_point;
    let zp_x = x.spec.zero_point;
    let sum_x: i64 = x.data.iter().sum();
    let scale = w.spec.scale * x.spec.scale;
    (0..cols)
        .map(|j| {
            let col_sum: i64 = (0..rows).map(|i| w.data[i * cols + j]).sum();
            let corrected = result.level_products[j] - zp_w * sum_x - zp_x * col_sum
                + rows as i64 * zp_x * zp_w;
            corrected as f64 * scale
        })
        .collect()
}

/// One weight-stationary matmul to map: `in_dim x out_dim`, applied
/// `timesteps` times per window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDims {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub timesteps: u64,
}

/// Array mapping and cycle count for one layer at one precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerMapping {
    pub row_groups: u64,
    pub col_groups: u64,
    pub arrays: u64,
    /// Engine cycles for one matvec: serial input bits x array passes.
    pub steps_per_matvec: u64,
    /// Cycles to stream the whole window through this layer, without fill.
    pub steps_per_window: u64,
}

/// Cycle count for one layer pass: `input_bits` serial steps times the
/// row/column array passes, plus pipeline fill.
pub fn pipeline_cycles(
    layer: &LayerDims,
    cfg: &CrossbarConfig,
    input_bits: u32,
    weight_bits: u32,
) -> Result<LayerMapping, PimError> {
    if layer.in_dim == 0 || layer.out_dim == 0 || layer.timesteps == 0 {
        return Err(PimError::Unmappable(
            layer.name.clone(),
            "zero dimension".into(),
        ));
    }
    let slices = weight_bits.div_ceil(cfg.bits_per_cell) as u64;
    let row_groups = (layer.in_dim as u64).div_ceil(cfg.rows as u64);
    let col_groups = (layer.out_dim as u64 * slices).div_ceil(cfg.cols as u64);
    let steps_per_matvec = input_bits as u64 * row_groups * col_groups;
    Ok(LayerMapping {
        row_groups,
        col_groups,
        arrays: row_groups * col_groups,
        steps_per_matvec,
        steps_per_window: steps_per_matvec * layer.timesteps,
    })
}

/// Total cycles for one matvec through the five-stage engine pipeline.
pub fn matvec_cycles_with_fill(mapping: &LayerMapping, cfg: &CrossbarConfig) -> u64 {
    mapping.steps_per_matvec + (cfg.pipeline_stages - 1)
}

// ---------------------------------------------------------------------------
// Power/area ledger
// ---------------------------------------------------------------------------

/// Where a component row counts in the rollup hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Engine,
    Tile,
    Chip,
}

/// One component row: power and area for the row's full unit count, the way
/// hardware tables print them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRecord {
    pub name: String,
    pub scope: Scope,
    pub power_mw: f64,
    pub area_mm2: f64,
}

fn record(name: &str, scope: Scope, power_mw: f64, area_mm2: f64) -> ComponentRecord {
    ComponentRecord {
        name: name.into(),
        scope,
        power_mw,
        area_mm2,
    }
}

/// The component table: shared tile logic, the engine excluding conversion,
/// and the two conversion options plus the comparator banks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentTable {
    pub tile: Vec<ComponentRecord>,
    pub engine_base: Vec<ComponentRecord>,
    pub cmos_adc: Vec<ComponentRecord>,
    pub sot_adc: Vec<ComponentRecord>,
    pub comparator_banks: Vec<ComponentRecord>,
}

impl Default for ComponentTable {
    fn default() -> ComponentTable {
        ComponentTable {
            tile: vec![
                record("edram_buffer", Scope::Tile, 20.7, 0.083),
                record("bus", Scope::Tile, 7.0, 0.09),
                record("router", Scope::Tile, 10.5, 0.0378),
                record("activation", Scope::Tile, 0.52, 0.0006),
                record("tile_shift_add", Scope::Tile, 0.05, 0.00006),
                record("max_pool", Scope::Tile, 0.4, 0.0024),
                record("tile_output_reg", Scope::Tile, 1.68, 0.0032),
            ],
            engine_base: vec![
                record("nvm_arrays", Scope::Engine, 2.4, 0.0002),
                record("sample_hold", Scope::Engine, 0.001, 0.00004),
                record("engine_shift_add", Scope::Engine, 0.2, 0.00024),
                record("input_reg", Scope::Engine, 1.24, 0.0021),
                record("output_reg", Scope::Engine, 0.23, 0.00077),
                record("dac", Scope::Engine, 4.0, 0.00017),
            ],
            cmos_adc: vec![record("cmos_adc", Scope::Engine, 16.0, 0.0096)],
            sot_adc: vec![
                record("sot_adc_arrays", Scope::Engine, 0.6, 0.00005),
                record("sot_voltage_ref", Scope::Engine, 0.02, 0.00003),
                record("sot_encoders", Scope::Engine, 0.001, 0.000002),
            ],
            comparator_banks: vec![record("comparator_banks", Scope::Chip, 1300.0, 0.11)],
        }
    }
}

impl ComponentTable {
    pub fn find(&self, name: &str) -> Result<&ComponentRecord, PimError> {
        self.tile
            .iter()
            .chain(&self.engine_base)
            .chain(&self.cmos_adc)
            .chain(&self.sot_adc)
            .chain(&self.comparator_banks)
            .find(|r| r.name == name)
            .ok_or_else(|| PimError::UnknownComponent(name.into()))
    }
}

/// Accelerator build variants the ledger can roll up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccelVariant {
    /// CMOS-ADC engines, host-side decoding and voting.
    IsaacCmosAdc,
    /// Engines with the SOT-MRAM ADC stack, no comparator banks.
    HelixSotAdc,
    /// SOT ADC stack plus the comparator banks.
    HelixFull,
}

/// Totals at every hierarchy level; power and area roll up additively.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyAreaLedger {
    pub variant: AccelVariant,
    pub rows: Vec<ComponentRecord>,
    pub engine_power_mw: f64,
    pub engine_area_mm2: f64,
    pub tile_power_mw: f64,
    pub tile_area_mm2: f64,
    pub chip_power_w: f64,
    pub chip_area_mm2: f64,
}

/// Sum the component rows for one variant into engine, tile, and chip
/// totals.
pub fn ledger_rollup(
    table: &ComponentTable,
    cfg: &CrossbarConfig,
    variant: AccelVariant,
) -> EnergyAreaLedger {
    let adc_rows = match variant {
        AccelVariant::IsaacCmosAdc => &table.cmos_adc,
        AccelVariant::HelixSotAdc | AccelVariant::HelixFull => &table.sot_adc,
    };
    let mut rows: Vec<ComponentRecord> = Vec::new();
    rows.extend(table.tile.iter().cloned());
    rows.extend(table.engine_base.iter().cloned());
    rows.extend(adc_rows.iter().cloned());
    if variant == AccelVariant::HelixFull {
        rows.extend(table.comparator_banks.iter().cloned());
    }
    let sum = |scope: Scope, f: fn(&ComponentRecord) -> f64| -> f64 {
        rows.iter().filter(|r| r.scope == scope).map(f).sum()
    };
    let engine_power = sum(Scope::Engine, |r| r.power_mw);
    let engine_area = sum(Scope::Engine, |r| r.area_mm2);
    let engines = cfg.engines_per_tile as f64;
    let tile_power = sum(Scope::Tile, |r| r.power_mw) + engines * engine_power;
    let tile_area = sum(Scope::Tile, |r| r.area_mm2) + engines * engine_area;
    let chip_power_mw = cfg.tiles as f64 * tile_power + sum(Scope::Chip, |r| r.power_mw);
    let chip_area = cfg.tiles as f64 * tile_area + sum(Scope::Chip, |r| r.area_mm2);
    EnergyAreaLedger {
        variant,
        rows,
        engine_power_mw: engines * engine_power,
        engine_area_mm2: engines * engine_area,
        tile_power_mw: tile_power,
        tile_area_mm2: tile_area,
        chip_power_w: chip_power_mw / 1000.0,
        chip_area_mm2: chip_area,
    }
}

// ---------------------------------------------------------------------------
// Network mapping and scheme performance model
// ---------------------------------------------------------------------------

/// The accumulating scheme ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scheme {
    /// Full-precision base-caller on CMOS-ADC engines, host CTC and vote.
    Isaac,
    /// 16-bit quantization, otherwise as the baseline.
    Bits16,
    /// 5-bit consensus-aware quantization.
    Seat,
    /// 5-bit plus the SOT-MRAM ADC arrays.
    Adc,
    /// Plus CTC decoding on the dot-product engines.
    Ctc,
    /// Plus comparator-array read voting: every technique together.
    Helix,
}

impl Scheme {
    pub const LADDER: [Scheme; 6] = [
        Scheme::Isaac,
        Scheme::Bits16,
        Scheme::Seat,
        Scheme::Adc,
        Scheme::Ctc,
        Scheme::Helix,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Scheme::Isaac => "ISAAC",
            Scheme::Bits16 => "16-bit",
            Scheme::Seat => "SEAT",
            Scheme::Adc => "ADC",
            Scheme::Ctc => "CTC",
            Scheme::Helix => "Helix",
        }
    }

    pub fn dnn_bits(&self) -> u32 {
        match self {
            Scheme::Isaac => 32,
            Scheme::Bits16 => 16,
            _ => 5,
        }
    }

    pub fn ctc_on_crossbar(&self) -> bool {
        matches!(self, Scheme::Ctc | Scheme::Helix)
    }

    pub fn vote_on_comparators(&self) -> bool {
        matches!(self, Scheme::Helix)
    }

    pub fn ledger_variant(&self) -> AccelVariant {
        match self {
            Scheme::Isaac | Scheme::Bits16 | Scheme::Seat => AccelVariant::IsaacCmosAdc,
            Scheme::Adc | Scheme::Ctc => AccelVariant::HelixSotAdc,
            Scheme::Helix => AccelVariant::HelixFull,
        }
    }
}

/// Host-side speed calibration for the phases that stay off the crossbar.
///
/// The host CTC-to-vote split follows the measured execution-time breakdown
/// of the quantized reference base-caller (16.7% CTC against 37% voting);
/// the overall host scale is pinned by the DNN share of the full-precision
/// baseline, and the comparator offload removes the substring-matching
/// portion of the vote.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HostCalibration {
    /// DNN fraction of total window time on the full-precision baseline.
    pub baseline_dnn_share: f64,
    /// Host CTC share of host (CTC + vote) time: 16.7 / 53.7.
    pub host_ctc_fraction: f64,
    /// Fraction of host vote time spent on substring comparison, which the
    /// comparator banks absorb.
    pub vote_comparison_fraction: f64,
}

impl Default for HostCalibration {
    fn default() -> HostCalibration {
        HostCalibration {
            baseline_dnn_share: 0.23,
            host_ctc_fraction: 16.7 / 53.7,
            vote_comparison_fraction: 0.58,
        }
    }
}

/// Workload description for the mapper: the matmul layers, decoder length,
/// and voting coverage of one base-caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub name: String,
    pub layers: Vec<LayerDims>,
    pub macs_per_window: f64,
    pub ctc_steps: u64,
    pub beam_width: usize,
    pub bases_per_window: f64,
    pub coverage: u32,
}

impl Workload {
    /// Build the mapped layer list from a topology: conv as im2col matmuls,
    /// each recurrent layer as its input-path and recurrent-path matmuls
    /// with gate-concatenated outputs, then the FC head.
    pub fn from_topology(topology: &NetTopology) -> Workload {
        let gates = match topology.rnn.kind {
            RnnKind::Gru => 3,
            RnnKind::Lstm => 4,
        };
        let mut layers = Vec::new();
        let mut len = topology.window_len;
        for (i, c) in topology.convs.iter().enumerate() {
            len = len.div_ceil(c.stride);
            layers.push(LayerDims {
                name: format!("conv{i}"),
                in_dim: c.kernel * c.in_ch,
                out_dim: c.out_ch,
                timesteps: len as u64,
            });
        }
        let steps = len as u64;
        let mut in_dim = topology.conv_out_channels();
        for i in 0..topology.rnn.layers {
            layers.push(LayerDims {
                name: format!("rnn{i}_x"),
                in_dim,
                out_dim: gates * topology.rnn.width,
                timesteps: steps,
            });
            layers.push(LayerDims {
                name: format!("rnn{i}_h"),
                in_dim: topology.rnn.width,
                out_dim: gates * topology.rnn.width,
                timesteps: steps,
            });
            in_dim = topology.rnn.width;
        }
        layers.push(LayerDims {
            name: "fc".into(),
            in_dim: topology.rnn.width,
            out_dim: topology.fc_out,
            timesteps: steps,
        });
        let computed_macs: f64 = layers
            .iter()
            .map(|l| (l.in_dim * l.out_dim) as f64 * l.timesteps as f64)
            .sum();
        Workload {
            name: topology.name.clone(),
            layers,
            macs_per_window: topology.declared_macs.unwrap_or(computed_macs),
            ctc_steps: steps,
            beam_width: 10,
            bases_per_window: 30.0,
            coverage: (topology.window_len / topology.slide.max(1)) as u32,
        }
    }
}

/// Per-phase window times and throughput for one workload on one scheme.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MappedNetwork {
    pub workload: String,
    pub scheme: Scheme,
    pub macs_per_window: f64,
    /// Whole-network replicas resident across the chip.
    pub replication: u64,
    pub dnn_time_s: f64,
    pub ctc_time_s: f64,
    pub vote_time_s: f64,
    pub window_time_s: f64,
    pub bases_per_s: f64,
    /// Phase shares of the window time: DNN, CTC, vote.
    pub phase_shares: [f64; 3],
}

fn dnn_window_time(
    workload: &Workload,
    cfg: &CrossbarConfig,
    bits: u32,
) -> Result<(f64, u64), PimError> {
    let mut arrays_needed = 0u64;
    let mut bottleneck = 0u64;
    for layer in &workload.layers {
        let mapping = pipeline_cycles(layer, cfg, bits, bits)?;
        arrays_needed += mapping.arrays;
        bottleneck = bottleneck.max(mapping.steps_per_window);
    }
    let available = cfg.total_arrays();
    if arrays_needed > available {
        return Err(PimError::ChipTooSmall {
            needed: arrays_needed,
            available,
        });
    }
    let replication = (available / arrays_needed).max(1);
    let cycles = bottleneck + (cfg.pipeline_stages - 1);
    Ok((
        cycles as f64 / (cfg.engine_freq_hz * replication as f64),
        replication,
    ))
}

fn crossbar_ctc_time(workload: &Workload, cfg: &CrossbarConfig) -> Result<f64, PimError> {
    let cells = workload.beam_width * workload.beam_width;
    if cells > cfg.cols {
        return Err(PimError::BeamTooWide {
            width: workload.beam_width,
            cells,
            dim: cfg.cols,
        });
    }
    Ok((workload.ctc_steps * cfg.ctc_cycles_per_beam_step) as f64 / cfg.engine_freq_hz)
}

fn comparator_compare_time(workload: &Workload, cfg: &CrossbarConfig) -> f64 {
    // Substring comparisons per window: each consecutive read pair scans
    // its substring starts against the array rows.
    let len = workload.bases_per_window;
    let comparisons = workload.coverage as f64 * len * len;
    let rate = (cfg.comparator_arrays * cfg.comparator_rows) as f64 * cfg.comparator_freq_hz;
    comparisons / rate
}

/// Map a workload onto the accelerator under one scheme: crossbar DNN time
/// from the cycle model, host or crossbar CTC, host or comparator vote.
pub fn map_network(
    workload: &Workload,
    cfg: &CrossbarConfig,
    cal: &HostCalibration,
    scheme: Scheme,
) -> Result<MappedNetwork, PimError> {
    let (dnn32, _) = dnn_window_time(workload, cfg, 32)?;
    let (dnn_time, replication) = dnn_window_time(workload, cfg, scheme.dnn_bits())?;
    let host_total = dnn32 * (1.0 - cal.baseline_dnn_share) / cal.baseline_dnn_share;
    let host_ctc = host_total * cal.host_ctc_fraction;
    let host_vote = host_total - host_ctc;
    let ctc_time = if scheme.ctc_on_crossbar() {
        crossbar_ctc_time(workload, cfg)?
    } else {
        host_ctc
    };
    let vote_time = if scheme.vote_on_comparators() {
        host_vote * (1.0 - cal.vote_comparison_fraction) + comparator_compare_time(workload, cfg)
    } else {
        host_vote
    };
    let window_time = dnn_time + ctc_time + vote_time;
    Ok(MappedNetwork {
        workload: workload.name.clone(),
        scheme,
        macs_per_window: workload.macs_per_window,
        replication,
        dnn_time_s: dnn_time,
        ctc_time_s: ctc_time,
        vote_time_s: vote_time,
        window_time_s: window_time,
        bases_per_s: workload.bases_per_window / window_time,
        phase_shares: [
            dnn_time / window_time,
            ctc_time / window_time,
            vote_time / window_time,
        ],
    })
}

/// Map every scheme for every workload; returns results keyed by scheme in
/// ladder order.
pub fn map_all_schemes(
    workloads: &[Workload],
    cfg: &CrossbarConfig,
    cal: &HostCalibration,
) -> Result<BTreeMap<Scheme, Vec<MappedNetwork>>, PimError> {
    let mut out = BTreeMap::new();
    for &scheme in &Scheme::LADDER {
        let mut results = Vec::new();
        for w in workloads {
            results.push(map_network(w, cfg, cal, scheme)?);
        }
        out.insert(scheme, results);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::QuantSpec;
    use rand::Rng;
    use rand::SeedableRng;

    fn tensor(shape: Vec<usize>, data: Vec<i64>, bits: u32) -> FixedTensor {
        FixedTensor {
            shape,
            data,
            spec: QuantSpec::new(bits, 1.0, 0).unwrap(),
        }
    }

    #[test]
    fn analog_mac_zero_input_gives_zero() {
        let cells = vec![3u8; 16];
        let out = analog_mac(&cells, 4, 4, &[0, 0, 0, 0]).unwrap();
        assert_eq!(out, vec![0, 0, 0, 0]);
    }

    #[test]
    fn analog_mac_one_hot_selects_row() {
        let cells: Vec<u8> = (0..16).map(|i| i as u8).collect();
        let out = analog_mac(&cells, 4, 4, &[0, 0, 1, 0]).unwrap();
        assert_eq!(out, vec![8, 9, 10, 11]);
    }

    #[test]
    fn analog_mac_rejects_bad_shapes() {
        assert_eq!(analog_mac(&[], 4, 4, &[0; 4]), Err(PimError::Unprogrammed));
        assert!(matches!(
            analog_mac(&[0u8; 12], 4, 4, &[0; 4]),
            Err(PimError::ShapeMismatch(_))
        ));
        assert!(matches!(
            analog_mac(&[0u8; 16], 4, 4, &[0; 3]),
            Err(PimError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn required_bits_formula() {
        assert_eq!(required_adc_bits(128, 1, 2), 9);
        assert_eq!(required_adc_bits(32, 1, 2), 7);
    }

    fn direct_matvec(w: &FixedTensor, x: &FixedTensor) -> Vec<i64> {
        let (rows, cols) = (w.shape[0], w.shape[1]);
        let mut out = vec![0i64; cols];
        for i in 0..rows {
            for j in 0..cols {
                out[j] += x.data[i] * w.data[i * cols + j];
            }
        }
        out
    }

    #[test]
    fn pipeline_matches_direct_matvec_small() {
        let cfg = CrossbarConfig::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        for _ in 0..25 {
            let (rows, cols) = (rng.gen_range(1..200), rng.gen_range(1..150));
            let w = tensor(
                vec![rows, cols],
                (0..rows * cols).map(|_| rng.gen_range(0..32)).collect(),
                5,
            );
            let x = tensor(vec![rows], (0..rows).map(|_| rng.gen_range(0..32)).collect(), 5);
            let got = crossbar_matvec(&w, &x, &cfg, required_adc_bits(cfg.rows, 1, 2)).unwrap();
            assert_eq!(got.level_products, direct_matvec(&w, &x));
            assert_eq!(got.saturated_conversions, 0);
        }
    }

    #[test]
    fn guaranteed_exact_at_formula_bits_even_worst_case() {
        // All-ones inputs against all-max cells saturate any narrower ADC.
        let cfg = CrossbarConfig::default();
        let w = tensor(vec![128, 8], vec![31; 128 * 8], 5);
        let x = tensor(vec![128], vec![31; 128], 5);
        let bits = required_adc_bits(cfg.rows, cfg.dac_bits, cfg.bits_per_cell);
        let got = crossbar_matvec(&w, &x, &cfg, bits).unwrap();
        assert_eq!(got.level_products, direct_matvec(&w, &x));
        assert_eq!(got.saturated_conversions, 0);
        let narrow = crossbar_matvec(&w, &x, &cfg, bits - 1).unwrap();
        assert!(narrow.saturated_conversions > 0);
    }

    #[test]
    fn dequantized_matvec_tracks_float_product() {
        let cfg = CrossbarConfig::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(43);
        let (rows, cols) = (64, 16);
        let w_real: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x_real: Vec<f64> = (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = FixedTensor::quantize(&w_real, &[rows, cols], 8).unwrap();
        let x = FixedTensor::quantize(&x_real, &[rows], 8).unwrap();
        let result = crossbar_matvec(&w, &x, &cfg, 9).unwrap();
        let got = dequantize_matvec(&result, &w, &x);
        for j in 0..cols {
            let want: f64 = (0..rows).map(|i| x_real[i] * w_real[i * cols + j]).sum();
            assert!(
                (got[j] - want).abs() < 0.2,
                "column {j}: {} vs {want}",
                got[j]
            );
        }
    }

    #[test]
    fn adc_demo_ladder_reproduces_patterns_and_codes() {
        let cfg = AdcArrayConfig::demo_2bit();
        let expectations = [
            (0.75, "1000", 0),
            (1.5, "1100", 1),
            (2.25, "1110", 2),
            (3.0, "1111", 3),
        ];
        for (v, pattern, code) in expectations {
            let reading = adc_convert(v, &cfg);
            assert_eq!(reading.pattern_string(), pattern, "at {v} V");
            assert_eq!(reading.code, code, "at {v} V");
            assert!(!reading.under_range);
            assert!(!reading.over_range);
        }
    }

    #[test]
    fn adc_zero_input_flags_under_range() {
        let cfg = AdcArrayConfig::demo_2bit();
        let reading = adc_convert(0.0, &cfg);
        assert_eq!(reading.code, 0);
        assert!(reading.under_range);
    }

    #[test]
    fn adc_sweep_is_monotone_with_contiguous_patterns() {
        let cfg = AdcArrayConfig::standard_5bit();
        let mut prev = 0u32;
        let mut seen = std::collections::BTreeSet::new();
        for k in 0..1000 {
            let v = 3.0 * k as f64 / 999.0;
            let reading = adc_convert(v, &cfg);
            assert!(reading.code >= prev, "code dropped at {v} V");
            prev = reading.code;
            seen.insert(reading.code);
            // Thermometer prefix must be contiguous.
            let first_zero = reading.pattern.iter().position(|&b| !b);
            if let Some(z) = first_zero {
                assert!(reading.pattern[z..].iter().all(|&b| !b));
            }
        }
        assert_eq!(seen.len(), 32, "expected 32 distinct codes");
    }

    #[test]
    fn adc_rejects_bad_ladders() {
        assert!(matches!(
            AdcArrayConfig::with_refs(2, 3.0, vec![3.0, 2.9, 2.9, 2.8]),
            Err(PimError::BadRefLadder { .. })
        ));
        assert!(matches!(
            AdcArrayConfig::with_refs(2, 3.0, vec![3.0, 2.9]),
            Err(PimError::BadRefLadder { want: 4, got: 2 })
        ));
    }

    #[test]
    fn pipeline_cycles_worked_example() {
        // 128x128 layer, 5-bit inputs, 2-bit cells, 5-bit weights (3
        // slices): 5 serial steps x 3 column groups = 15 cycles, plus 4
        // cycles of pipeline fill.
        let cfg = CrossbarConfig::default();
        let layer = LayerDims {
            name: "demo".into(),
            in_dim: 128,
            out_dim: 128,
            timesteps: 1,
        };
        let mapping = pipeline_cycles(&layer, &cfg, 5, 5).unwrap();
        assert_eq!(mapping.row_groups, 1);
        assert_eq!(mapping.col_groups, 3);
        assert_eq!(mapping.steps_per_matvec, 15);
        assert_eq!(matvec_cycles_with_fill(&mapping, &cfg), 19);
    }

    #[test]
    fn pipeline_cycles_trivial_layer() {
        let cfg = CrossbarConfig::default();
        let layer = LayerDims {
            name: "unit".into(),
            in_dim: 1,
            out_dim: 1,
            timesteps: 1,
        };
        let mapping = pipeline_cycles(&layer, &cfg, 1, 2).unwrap();
        assert_eq!(mapping.steps_per_matvec, 1);
        assert_eq!(matvec_cycles_with_fill(&mapping, &cfg), 5);
    }

    #[test]
    fn doubling_rows_doubles_passes() {
        let cfg = CrossbarConfig::default();
        let small = LayerDims {
            name: "s".into(),
            in_dim: 128,
            out_dim: 64,
            timesteps: 1,
        };
        let big = LayerDims {
            name: "b".into(),
            in_dim: 256,
            out_dim: 64,
            timesteps: 1,
        };
        let a = pipeline_cycles(&small, &cfg, 5, 5).unwrap();
        let b = pipeline_cycles(&big, &cfg, 5, 5).unwrap();
        assert_eq!(b.steps_per_matvec, 2 * a.steps_per_matvec);
    }

    #[test]
    fn ledger_reproduces_baseline_totals() {
        let table = ComponentTable::default();
        let cfg = CrossbarConfig::default();
        let ledger = ledger_rollup(&table, &cfg, AccelVariant::IsaacCmosAdc);
        assert!((ledger.engine_power_mw - 289.0).abs() / 289.0 < 0.02);
        assert!((ledger.engine_area_mm2 - 0.157).abs() / 0.157 < 0.02);
        assert!((ledger.tile_power_mw - 330.0).abs() / 330.0 < 0.02);
        assert!((ledger.chip_power_w - 55.4).abs() / 55.4 < 0.02);
        assert!((ledger.chip_area_mm2 - 62.5).abs() / 62.5 < 0.02);
    }

    #[test]
    fn ledger_reproduces_full_stack_totals() {
        let table = ComponentTable::default();
        let cfg = CrossbarConfig::default();
        let ledger = ledger_rollup(&table, &cfg, AccelVariant::HelixFull);
        assert!((ledger.chip_power_w - 25.7).abs() / 25.7 < 0.02);
        assert!((ledger.chip_area_mm2 - 43.83).abs() / 43.83 < 0.02);
    }

    #[test]
    fn sot_stack_strictly_cheaper_per_engine() {
        let table = ComponentTable::default();
        let cfg = CrossbarConfig::default();
        let isaac = ledger_rollup(&table, &cfg, AccelVariant::IsaacCmosAdc);
        let helix = ledger_rollup(&table, &cfg, AccelVariant::HelixSotAdc);
        assert!(helix.engine_power_mw < isaac.engine_power_mw);
        assert!(helix.engine_area_mm2 < isaac.engine_area_mm2);
    }

    #[test]
    fn zero_tiles_leaves_comparator_banks_only() {
        let table = ComponentTable::default();
        let mut cfg = CrossbarConfig::default();
        cfg.tiles = 0;
        let ledger = ledger_rollup(&table, &cfg, AccelVariant::HelixFull);
        assert!((ledger.chip_power_w - 1.3).abs() < 1e-12);
        assert!((ledger.chip_area_mm2 - 0.11).abs() < 1e-12);
    }

    #[test]
    fn ledger_totals_additive_and_order_invariant() {
        let mut table = ComponentTable::default();
        let cfg = CrossbarConfig::default();
        let before = ledger_rollup(&table, &cfg, AccelVariant::HelixFull);
        table.tile.reverse();
        table.engine_base.reverse();
        let after = ledger_rollup(&table, &cfg, AccelVariant::HelixFull);
        assert!((before.chip_power_w - after.chip_power_w).abs() < 1e-12);
        assert!((before.chip_area_mm2 - after.chip_area_mm2).abs() < 1e-12);
        let row_sum_mw: f64 = before
            .rows
            .iter()
            .map(|r| match r.scope {
                Scope::Engine => {
                    r.power_mw * (cfg.engines_per_tile * cfg.tiles) as f64
                }
                Scope::Tile => r.power_mw * cfg.tiles as f64,
                Scope::Chip => r.power_mw,
            })
            .sum();
        assert!((row_sum_mw / 1000.0 - before.chip_power_w).abs() < 1e-9);
    }

    #[test]
    fn unknown_component_lookup_errors() {
        let table = ComponentTable::default();
        assert!(table.find("cmos_adc").is_ok());
        assert_eq!(
            table.find("flux_capacitor").unwrap_err(),
            PimError::UnknownComponent("flux_capacitor".into())
        );
    }

    #[test]
    fn guppy_workload_reports_declared_macs() {
        let workload = Workload::from_topology(&NetTopology::guppy());
        assert!((workload.macs_per_window - 36.3e6).abs() < 1.0);
        assert_eq!(workload.ctc_steps, 150);
    }

    #[test]
    fn baseline_phase_shares_follow_measured_split() {
        let workload = Workload::from_topology(&NetTopology::guppy());
        let cfg = CrossbarConfig::default();
        let cal = HostCalibration::default();
        let mapped = map_network(&workload, &cfg, &cal, Scheme::Isaac).unwrap();
        let [_, ctc, vote] = mapped.phase_shares;
        assert!((ctc / vote - 16.7 / 37.0).abs() < 1e-9);
        // Baseline DNN share is the calibration anchor.
        assert!((mapped.phase_shares[0] - cal.baseline_dnn_share).abs() < 1e-9);
    }

    #[test]
    fn scheme_ladder_is_monotone_in_throughput() {
        let cfg = CrossbarConfig::default();
        let cal = HostCalibration::default();
        for topo in [
            NetTopology::guppy(),
            NetTopology::scrappie(),
            NetTopology::chiron(),
        ] {
            let workload = Workload::from_topology(&topo);
            let mut prev = 0.0;
            for scheme in Scheme::LADDER {
                let mapped = map_network(&workload, &cfg, &cal, scheme).unwrap();
                assert!(
                    mapped.bases_per_s >= prev,
                    "{} slower than predecessor under {:?}",
                    topo.name,
                    scheme
                );
                prev = mapped.bases_per_s;
            }
        }
    }

    #[test]
    fn oversized_beam_is_rejected() {
        let mut workload = Workload::from_topology(&NetTopology::guppy());
        workload.beam_width = 12; // 144 diagonal cells > 128 columns
        let cfg = CrossbarConfig::default();
        let cal = HostCalibration::default();
        assert!(matches!(
            map_network(&workload, &cfg, &cal, Scheme::Helix),
            Err(PimError::BeamTooWide { .. })
        ));
    }

    #[test]
    fn chip_capacity_guard() {
        let workload = Workload::from_topology(&NetTopology::chiron());
        let mut cfg = CrossbarConfig::default();
        cfg.tiles = 1;
        cfg.engines_per_tile = 1;
        let cal = HostCalibration::default();
        assert!(matches!(
            map_network(&workload, &cfg, &cal, Scheme::Isaac),
            Err(PimError::ChipTooSmall { .. })
        ));
    }
}
