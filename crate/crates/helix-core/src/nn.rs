//! Float and fixed-point forward passes for the Conv/GRU/FC base-caller
//! stacks, producing per-timestep base probability matrices.
//!
//! Convolutions use same-padding (a 300-sample window at stride 2 must yield
//! 150 timesteps). The GRU cell is implemented exactly as configured here,
//! including the bias applied outside the gate nonlinearity:
//!
//! ```text
//! z_t = sigmoid(W_z x_t + U_z h_{t-1}) + b_z
//! r_t = sigmoid(W_r x_t + U_r h_{t-1}) + b_r
//! g_t = tanh(W_h x_t + U_h (r_t * h_{t-1})) + b_h
//! h_t = z_t * h_{t-1} + (1 - z_t) * g_t
//! ```
//!
//! The quantized path fake-quantizes every weight tensor and every
//! layer-boundary activation tensor through [`crate::quant`] and converges to
//! the float path as the bit width grows.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genome::{Base, Read};
use crate::quant::FixedTensor;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("signal length {got} does not match topology window {want}")]
    WindowMismatch { got: usize, want: usize },
    #[error("input length {len} shorter than kernel {kernel}")]
    InputShorterThanKernel { len: usize, kernel: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sliding offset must be positive")]
    BadSlide,
    #[error("signal of length {len} shorter than window {window}")]
    StreamTooShort { len: usize, window: usize },
    #[error("probability row {row} sums to {sum}, not 1")]
    BadProbRow { row: usize, sum: f64 },
    #[error("parameter vector has {got} elements, topology needs {want}")]
    BadParamCount { got: usize, want: usize },
}

/// One 1-D convolution layer: `kernel x in_ch x out_ch` filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RnnKind {
    Gru,
    Lstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RnnSpec {
    pub kind: RnnKind,
    pub width: usize,
    pub layers: usize,
}

/// A stage shape printed in a published architecture table, kept so the
/// engine can cross-check it against what the layer parameters compose to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeclaredShape {
    pub stage: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeWarning {
    pub stage: String,
    pub declared: (usize, usize),
    pub computed: (usize, usize),
}

impl std::fmt::Display for ShapeWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "stage {}: configured shape {}x{} disagrees with composed shape {}x{}",
            self.stage, self.declared.0, self.declared.1, self.computed.0, self.computed.1
        )
    }
}

/// Layer structure of a base-caller network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetTopology {
    pub name: String,
    /// Input window length L.
    pub window_len: usize,
    /// Sliding offset T.
    pub slide: usize,
    pub convs: Vec<ConvSpec>,
    pub rnn: RnnSpec,
    /// FC output width; 4 bases plus blank.
    pub fc_out: usize,
    /// Shapes as printed in the source architecture table, if any.
    #[serde(default)]
    pub declared_shapes: Vec<DeclaredShape>,
    /// Published MAC count per window, used by the accelerator mapping.
    #[serde(default)]
    pub declared_macs: Option<f64>,
}

fn conv_out_len(len: usize, stride: usize) -> usize {
    len.div_ceil(stride)
}

impl NetTopology {
    /// Timestep count after the conv stack (rows of the output matrix).
    pub fn composed_timesteps(&self) -> usize {
        self.convs
            .iter()
            .fold(self.window_len, |len, c| conv_out_len(len, c.stride))
    }

    /// Channel count entering the recurrent stack.
    pub fn conv_out_channels(&self) -> usize {
        self.convs.last().map_or(1, |c| c.out_ch)
    }

    /// Compare declared shapes against composed ones; mismatches are
    /// returned as warnings rather than errors.
    pub fn shape_warnings(&self) -> Vec<ShapeWarning> {
        let steps = self.composed_timesteps();
        let mut computed = std::collections::BTreeMap::new();
        computed.insert("conv", (steps, self.conv_out_channels()));
        computed.insert("rnn", (steps, self.rnn.width));
        computed.insert("fc", (steps, self.fc_out));
        self.declared_shapes
            .iter()
            .filter_map(|d| {
                let &(rows, cols) = computed.get(d.stage.as_str())?;
                if (rows, cols) != (d.rows, d.cols) {
                    Some(ShapeWarning {
                        stage: d.stage.clone(),
                        declared: (d.rows, d.cols),
                        computed: (rows, cols),
                    })
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        for c in &self.convs {
            n += c.kernel * c.in_ch * c.out_ch + c.out_ch;
        }
        let gates = match self.rnn.kind {
            RnnKind::Gru => 3,
            RnnKind::Lstm => 4,
        };
        let mut in_dim = self.conv_out_channels();
        for _ in 0..self.rnn.layers {
            n += gates * (self.rnn.width * in_dim + self.rnn.width * self.rnn.width + self.rnn.width);
            in_dim = self.rnn.width;
        }
        n += self.fc_out * self.rnn.width + self.fc_out;
        n
    }

    /// Guppy-class architecture: one 11-tap conv at stride 2, five GRU
    /// layers, FC to 5 symbols.
    pub fn guppy() -> NetTopology {
        NetTopology {
            name: "guppy".into(),
            window_len: 300,
            slide: 30,
            convs: vec![ConvSpec {
                kernel: 11,
                in_ch: 1,
                out_ch: 96,
                stride: 2,
            }],
            rnn: RnnSpec {
                kind: RnnKind::Gru,
                width: 256,
                layers: 5,
            },
            fc_out: 5,
            declared_shapes: vec![
                DeclaredShape {
                    stage: "conv".into(),
                    rows: 150,
                    cols: 96,
                },
                DeclaredShape {
                    stage: "rnn".into(),
                    rows: 150,
                    cols: 40,
                },
                DeclaredShape {
                    stage: "fc".into(),
                    rows: 60,
                    cols: 5,
                },
            ],
            declared_macs: Some(36.3e6),
        }
    }

    /// Scrappie-class architecture: one 11-tap conv at stride 5, five GRU
    /// layers of width 96.
    pub fn scrappie() -> NetTopology {
        NetTopology {
            name: "scrappie".into(),
            window_len: 300,
            slide: 30,
            convs: vec![ConvSpec {
                kernel: 11,
                in_ch: 1,
                out_ch: 96,
                stride: 5,
            }],
            rnn: RnnSpec {
                kind: RnnKind::Gru,
                width: 96,
                layers: 5,
            },
            fc_out: 5,
            declared_shapes: vec![
                DeclaredShape {
                    stage: "conv".into(),
                    rows: 60,
                    cols: 96,
                },
                DeclaredShape {
                    stage: "rnn".into(),
                    rows: 60,
                    cols: 1025,
                },
                DeclaredShape {
                    stage: "fc".into(),
                    rows: 60,
                    cols: 5,
                },
            ],
            declared_macs: Some(8.47e6),
        }
    }

    /// Chiron-class architecture: three conv layers and six LSTM layers.
    pub fn chiron() -> NetTopology {
        NetTopology {
            name: "chiron".into(),
            window_len: 300,
            slide: 30,
            convs: vec![
                ConvSpec {
                    kernel: 1,
                    in_ch: 1,
                    out_ch: 256,
                    stride: 1,
                },
                ConvSpec {
                    kernel: 1,
                    in_ch: 256,
                    out_ch: 256,
                    stride: 1,
                },
                ConvSpec {
                    kernel: 3,
                    in_ch: 256,
                    out_ch: 256,
                    stride: 1,
                },
            ],
            rnn: RnnSpec {
                kind: RnnKind::Lstm,
                width: 100,
                layers: 6,
            },
            fc_out: 5,
            declared_shapes: vec![
                DeclaredShape {
                    stage: "conv".into(),
                    rows: 60,
                    cols: 256,
                },
                DeclaredShape {
                    stage: "rnn".into(),
                    rows: 300,
                    cols: 100,
                },
                DeclaredShape {
                    stage: "fc".into(),
                    rows: 300,
                    cols: 5,
                },
            ],
            declared_macs: Some(615.2e6),
        }
    }

    /// Small trainable topology used by the toy training loop and the CLI
    /// demos; a few hundred parameters.
    pub fn toy(name: &str, window_len: usize, slide: usize) -> NetTopology {
        NetTopology {
            name: name.into(),
            window_len,
            slide,
            convs: vec![ConvSpec {
                kernel: 3,
                in_ch: 1,
                out_ch: 4,
                stride: 1,
            }],
            rnn: RnnSpec {
                kind: RnnKind::Gru,
                width: 6,
                layers: 1,
            },
            fc_out: 5,
            declared_shapes: vec![],
            declared_macs: None,
        }
    }
}

/// Weights for one conv layer, `(kernel, in_ch, out_ch)` flattened
/// row-major plus a bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub spec: ConvSpec,
    /// Indexed `[tap][in][out]`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl ConvWeights {
    fn at(&self, tap: usize, i: usize, o: usize) -> f64 {
        self.w[(tap * self.spec.in_ch + i) * self.spec.out_ch + o]
    }
}

/// The nine GRU parameters: per-gate input weights, recurrent weights and
/// biases, all shape-consistent with `(input -> hidden, hidden -> hidden)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_z: Array2<f64>,
    pub u_z: Array2<f64>,
    pub b_z: Array1<f64>,
    pub w_r: Array2<f64>,
    pub u_r: Array2<f64>,
    pub b_r: Array1<f64>,
    pub w_h: Array2<f64>,
    pub u_h: Array2<f64>,
    pub b_h: Array1<f64>,
}

impl GruParams {
    pub fn zeros(input: usize, hidden: usize) -> GruParams {
        GruParams {
            w_z: Array2::zeros((hidden, input)),
            u_z: Array2::zeros((hidden, hidden)),
            b_z: Array1::zeros(hidden),
            w_r: Array2::zeros((hidden, input)),
            u_r: Array2::zeros((hidden, hidden)),
            b_r: Array1::zeros(hidden),
            w_h: Array2::zeros((hidden, input)),
            u_h: Array2::zeros((hidden, hidden)),
            b_h: Array1::zeros(hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_z.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_i: Array2<f64>,
    pub u_i: Array2<f64>,
    pub b_i: Array1<f64>,
    pub w_f: Array2<f64>,
    pub u_f: Array2<f64>,
    pub b_f: Array1<f64>,
    pub w_o: Array2<f64>,
    pub u_o: Array2<f64>,
    pub b_o: Array1<f64>,
    pub w_g: Array2<f64>,
    pub u_g: Array2<f64>,
    pub b_g: Array1<f64>,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> LstmParams {
        LstmParams {
            w_i: Array2::zeros((hidden, input)),
            u_i: Array2::zeros((hidden, hidden)),
            b_i: Array1::zeros(hidden),
            w_f: Array2::zeros((hidden, input)),
            u_f: Array2::zeros((hidden, hidden)),
            b_f: Array1::zeros(hidden),
            w_o: Array2::zeros((hidden, input)),
            u_o: Array2::zeros((hidden, hidden)),
            b_o: Array1::zeros(hidden),
            w_g: Array2::zeros((hidden, input)),
            u_g: Array2::zeros((hidden, hidden)),
            b_g: Array1::zeros(hidden),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RnnParams {
    Gru(GruParams),
    Lstm(LstmParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcParams {
    /// `(out, in)`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// All weights of a base-caller network, in topology order.
#[derive(Debug, Clone, PartialEq)]
pub struct BasecallerWeights {
    pub convs: Vec<ConvWeights>,
    pub rnns: Vec<RnnParams>,
    pub fc: FcParams,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// 1-D convolution with same-padding: output length is `ceil(L / stride)`.
pub fn conv1d_forward(
    input: ArrayView2<f64>,
    weights: &ConvWeights,
    stride: usize,
) -> Result<Array2<f64>, NnError> {
    let (len, in_ch) = input.dim();
    let spec = weights.spec;
    if in_ch != spec.in_ch {
        return Err(NnError::ShapeMismatch(format!(
            "conv expects {} input channels, got {in_ch}",
            spec.in_ch
        )));
    }
    if len < spec.kernel {
        return Err(NnError::InputShorterThanKernel {
            len,
            kernel: spec.kernel,
        });
    }
    let out_len = conv_out_len(len, stride);
    let pad_total = ((out_len - 1) * stride + spec.kernel).saturating_sub(len);
    let pad_left = pad_total / 2;
    let mut out = Array2::zeros((out_len, spec.out_ch));
    for t in 0..out_len {
        for o in 0..spec.out_ch {
            let mut acc = weights.b[o];
            for tap in 0..spec.kernel {
                let idx = (t * stride + tap) as isize - pad_left as isize;
                if idx < 0 || idx as usize >= len {
                    continue;
                }
                for i in 0..in_ch {
                    acc += input[(idx as usize, i)] * weights.at(tap, i, o);
                }
            }
            out[(t, o)] = acc;
        }
    }
    Ok(out)
}

/// GRU forward pass over a sequence; returns the hidden state at every step.
pub fn gru_forward(
    params: &GruParams,
    x_seq: ArrayView2<f64>,
    h0: ArrayView1<f64>,
) -> Result<Array2<f64>, NnError> {
    let (steps, in_dim) = x_seq.dim();
    let hidden = params.hidden();
    if params.w_z.ncols() != in_dim {
        return Err(NnError::ShapeMismatch(format!(
            "gru expects input width {}, got {in_dim}",
            params.w_z.ncols()
        )));
    }
    if h0.len() != hidden {
        return Err(NnError::ShapeMismatch(format!(
            "h0 width {} does not match hidden {hidden}",
            h0.len()
        )));
    }
    let mut h = h0.to_owned();
    let mut out = Array2::zeros((steps, hidden));
    for t in 0..steps {
        let x = x_seq.row(t);
        let z = (params.w_z.dot(&x) + params.u_z.dot(&h)).mapv(sigmoid) + &params.b_z;
        let r = (params.w_r.dot(&x) + params.u_r.dot(&h)).mapv(sigmoid) + &params.b_r;
        let gated = &r * &h;
        let g = (params.w_h.dot(&x) + params.u_h.dot(&gated)).mapv(f64::tanh) + &params.b_h;
        h = &z * &h + (1.0 - &z) * &g;
        out.row_mut(t).assign(&h);
    }
    Ok(out)
}

/// Canonical LSTM forward pass; returns the hidden state at every step.
pub fn lstm_forward(
    params: &LstmParams,
    x_seq: ArrayView2<f64>,
    h0: ArrayView1<f64>,
) -> Result<Array2<f64>, NnError> {
    let (steps, in_dim) = x_seq.dim();
    let hidden = params.w_i.nrows();
    if params.w_i.ncols() != in_dim {
        return Err(NnError::ShapeMismatch(format!(
            "lstm expects input width {}, got {in_dim}",
            params.w_i.ncols()
        )));
    }
    let mut h = h0.to_owned();
    let mut c = Array1::zeros(hidden);
    let mut out = Array2::zeros((steps, hidden));
    for t in 0..steps {
        let x = x_seq.row(t);
        let i = (params.w_i.dot(&x) + params.u_i.dot(&h) + &params.b_i).mapv(sigmoid);
        let f = (params.w_f.dot(&x) + params.u_f.dot(&h) + &params.b_f).mapv(sigmoid);
        let o = (params.w_o.dot(&x) + params.u_o.dot(&h) + &params.b_o).mapv(sigmoid);
        let g = (params.w_g.dot(&x) + params.u_g.dot(&h) + &params.b_g).mapv(f64::tanh);
        c = &f * &c + &i * &g;
        h = &o * &c.mapv(f64::tanh);
        out.row_mut(t).assign(&h);
    }
    Ok(out)
}

/// Per-timestep distribution over `[A, C, G, T, blank]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    rows: Array2<f64>,
}

pub const PROB_ROW_TOL: f64 = 1e-9;

impl ProbMatrix {
    pub fn from_array(rows: Array2<f64>) -> Result<ProbMatrix, NnError> {
        if rows.ncols() != 5 {
            return Err(NnError::ShapeMismatch(format!(
                "probability matrix needs 5 columns, got {}",
                rows.ncols()
            )));
        }
        for (i, row) in rows.axis_iter(Axis(0)).enumerate() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > PROB_ROW_TOL || row.iter().any(|&p| p < 0.0) {
                return Err(NnError::BadProbRow { row: i, sum });
            }
        }
        Ok(ProbMatrix { rows })
    }

    pub fn from_rows(rows: &[[f64; 5]]) -> Result<ProbMatrix, NnError> {
        let arr = Array2::from_shape_vec(
            (rows.len(), 5),
            rows.iter().flat_map(|r| r.iter().copied()).collect(),
        )
        .expect("shape is consistent by construction");
        ProbMatrix::from_array(arr)
    }

    pub fn timesteps(&self) -> usize {
        self.rows.nrows()
    }

    /// Probability of `sym` at timestep `t`.
    pub fn prob(&self, t: usize, sym: crate::genome::CtcSymbol) -> f64 {
        self.rows[(t, sym.index())]
    }

    pub fn row(&self, t: usize) -> ArrayView1<'_, f64> {
        self.rows.row(t)
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.rows
    }
}

/// Float or fixed-point execution of a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantMode {
    Float,
    /// Fake-quantize weights and layer-boundary activations at this width.
    Fixed(u32),
}

fn fake_quant(values: &[f64], bits: u32) -> Vec<f64> {
    if values.iter().all(|&v| v == 0.0) {
        return values.to_vec();
    }
    FixedTensor::quantize(values, &[values.len()], bits)
        .expect("finite non-empty tensor")
        .dequantize()
}

fn fake_quant_arr2(a: &Array2<f64>, bits: u32) -> Array2<f64> {
    let shape = a.dim();
    let data = fake_quant(a.as_slice().expect("standard layout"), bits);
    Array2::from_shape_vec(shape, data).expect("same length")
}

fn fake_quant_arr1(a: &Array1<f64>, bits: u32) -> Array1<f64> {
    Array1::from_vec(fake_quant(a.as_slice().expect("standard layout"), bits))
}

fn maybe_quant2(a: &Array2<f64>, mode: QuantMode) -> Array2<f64> {
    match mode {
        QuantMode::Float => a.clone(),
        QuantMode::Fixed(bits) => fake_quant_arr2(a, bits),
    }
}

fn maybe_quant1(a: &Array1<f64>, mode: QuantMode) -> Array1<f64> {
    match mode {
        QuantMode::Float => a.clone(),
        QuantMode::Fixed(bits) => fake_quant_arr1(a, bits),
    }
}

fn quantized_gru(p: &GruParams, mode: QuantMode) -> GruParams {
    GruParams {
        w_z: maybe_quant2(&p.w_z, mode),
        u_z: maybe_quant2(&p.u_z, mode),
        b_z: maybe_quant1(&p.b_z, mode),
        w_r: maybe_quant2(&p.w_r, mode),
        u_r: maybe_quant2(&p.u_r, mode),
        b_r: maybe_quant1(&p.b_r, mode),
        w_h: maybe_quant2(&p.w_h, mode),
        u_h: maybe_quant2(&p.u_h, mode),
        b_h: maybe_quant1(&p.b_h, mode),
    }
}

fn quantized_lstm(p: &LstmParams, mode: QuantMode) -> LstmParams {
    LstmParams {
        w_i: maybe_quant2(&p.w_i, mode),
        u_i: maybe_quant2(&p.u_i, mode),
        b_i: maybe_quant1(&p.b_i, mode),
        w_f: maybe_quant2(&p.w_f, mode),
        u_f: maybe_quant2(&p.u_f, mode),
        b_f: maybe_quant1(&p.b_f, mode),
        w_o: maybe_quant2(&p.w_o, mode),
        u_o: maybe_quant2(&p.u_o, mode),
        b_o: maybe_quant1(&p.b_o, mode),
        w_g: maybe_quant2(&p.w_g, mode),
        u_g: maybe_quant2(&p.u_g, mode),
        b_g: maybe_quant1(&p.b_g, mode),
    }
}

/// Run the full base-caller forward pass on one signal window.
pub fn basecaller_forward(
    topology: &NetTopology,
    weights: &BasecallerWeights,
    signal: &[f64],
    mode: QuantMode,
) -> Result<ProbMatrix, NnError> {
    if signal.len() != topology.window_len {
        return Err(NnError::WindowMismatch {
            got: signal.len(),
            want: topology.window_len,
        });
    }
    if weights.convs.len() != topology.convs.len() || weights.rnns.len() != topology.rnn.layers {
        return Err(NnError::ShapeMismatch(
            "weight stack does not match topology".into(),
        ));
    }
    let quantized_signal = match mode {
        QuantMode::Float => signal.to_vec(),
        QuantMode::Fixed(bits) => fake_quant(signal, bits),
    };
    let mut acts =
        Array2::from_shape_vec((signal.len(), 1), quantized_signal).expect("column vector");
    for (cw, spec) in weights.convs.iter().zip(&topology.convs) {
        let cw_q = match mode {
            QuantMode::Float => cw.clone(),
            QuantMode::Fixed(bits) => ConvWeights {
                spec: cw.spec,
                w: fake_quant(&cw.w, bits),
                b: fake_quant(&cw.b, bits),
            },
        };
        acts = conv1d_forward(acts.view(), &cw_q, spec.stride)?.mapv(f64::tanh);
        acts = maybe_quant2(&acts, mode);
    }
    for rnn in &weights.rnns {
        let h0 = Array1::zeros(topology.rnn.width);
        acts = match rnn {
            RnnParams::Gru(p) => gru_forward(&quantized_gru(p, mode), acts.view(), h0.view())?,
            RnnParams::Lstm(p) => lstm_forward(&quantized_lstm(p, mode), acts.view(), h0.view())?,
        };
        acts = maybe_quant2(&acts, mode);
    }
    let fc_w = maybe_quant2(&weights.fc.w, mode);
    let fc_b = maybe_quant1(&weights.fc.b, mode);
    if fc_w.ncols() != acts.ncols() {
        return Err(NnError::ShapeMismatch(format!(
            "fc expects {} inputs, got {}",
            fc_w.ncols(),
            acts.ncols()
        )));
    }
    let mut logits = acts.dot(&fc_w.t()) + &fc_b;
    logits = maybe_quant2(&logits, mode);
    let mut probs = Array2::zeros(logits.dim());
    for (mut out, row) in probs.axis_iter_mut(Axis(0)).zip(logits.axis_iter(Axis(0))) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let exps = row.mapv(|v| (v - max).exp());
        let sum = exps.sum();
        out.assign(&(exps / sum));
    }
    ProbMatrix::from_array(probs)
}

/// Slide a window of length `L` by `T` over a signal stream, decode each
/// window, and emit one read per window tagged with its start index.
pub fn sliding_window_reads<F>(
    signal: &[f64],
    topology: &NetTopology,
    weights: &BasecallerWeights,
    mode: QuantMode,
    decoder: F,
) -> Result<Vec<Read>, NnError>
where
    F: Fn(&ProbMatrix) -> Vec<Base>,
{
    if topology.slide == 0 {
        return Err(NnError::BadSlide);
    }
    if signal.len() < topology.window_len {
        return Err(NnError::StreamTooShort {
            len: signal.len(),
            window: topology.window_len,
        });
    }
    let mut reads = Vec::new();
    let mut offset = 0;
    while offset + topology.window_len <= signal.len() {
        let window = &signal[offset..offset + topology.window_len];
        let probs = basecaller_forward(topology, weights, window, mode)?;
        reads.push(Read::new(decoder(&probs), offset));
        offset += topology.slide;
    }
    Ok(reads)
}

/// Window start offsets covering a signal element at `position`.
pub fn windows_covering(position: usize, window_len: usize, slide: usize, stream_len: usize) -> usize {
    let mut count = 0;
    let mut offset = 0;
    while offset + window_len <= stream_len {
        if position >= offset && position < offset + window_len {
            count += 1;
        }
        offset += slide;
    }
    count
}

impl BasecallerWeights {
    pub fn zeros(topology: &NetTopology) -> BasecallerWeights {
        let mut convs = Vec::new();
        for spec in &topology.convs {
            convs.push(ConvWeights {
                spec: *spec,
                w: vec![0.0; spec.kernel * spec.in_ch * spec.out_ch],
                b: vec![0.0; spec.out_ch],
            });
        }
        let mut rnns = Vec::new();
        let mut in_dim = topology.conv_out_channels();
        for _ in 0..topology.rnn.layers {
            rnns.push(match topology.rnn.kind {
                RnnKind::Gru => RnnParams::Gru(GruParams::zeros(in_dim, topology.rnn.width)),
                RnnKind::Lstm => RnnParams::Lstm(LstmParams::zeros(in_dim, topology.rnn.width)),
            });
            in_dim = topology.rnn.width;
        }
        BasecallerWeights {
            convs,
            rnns,
            fc: FcParams {
                w: Array2::zeros((topology.fc_out, topology.rnn.width)),
                b: Array1::zeros(topology.fc_out),
            },
        }
    }

    pub fn random<R: Rng>(topology: &NetTopology, scale: f64, rng: &mut R) -> BasecallerWeights {
        let normal = Normal::new(0.0, scale).expect("positive std dev");
        let mut w = BasecallerWeights::zeros(topology);
        let mut flat = w.to_flat();
        for v in &mut flat {
            *v = normal.sample(rng);
        }
        w.load_flat(&flat).expect("same length");
        w
    }

    fn visit_tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for c in &self.convs {
            out.push(&c.w);
            out.push(&c.b);
        }
        for r in &self.rnns {
            match r {
                RnnParams::Gru(p) => {
                    for m in [&p.w_z, &p.u_z, &p.w_r, &p.u_r, &p.w_h, &p.u_h] {
                        out.push(m.as_slice().expect("standard layout"));
                    }
                    for v in [&p.b_z, &p.b_r, &p.b_h] {
                        out.push(v.as_slice().expect("standard layout"));
                    }
                }
                RnnParams::Lstm(p) => {
                    for m in [
                        &p.w_i, &p.u_i, &p.w_f, &p.u_f, &p.w_o, &p.u_o, &p.w_g, &p.u_g,
                    ] {
                        out.push(m.as_slice().expect("standard layout"));
                    }
                    for v in [&p.b_i, &p.b_f, &p.b_o, &p.b_g] {
                        out.push(v.as_slice().expect("standard layout"));
                    }
                }
            }
        }
        out.push(self.fc.w.as_slice().expect("standard layout"));
        out.push(self.fc.b.as_slice().expect("standard layout"));
        out
    }

    fn visit_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for c in &mut self.convs {
            out.push(&mut c.w);
            out.push(&mut c.b);
        }
        for r in &mut self.rnns {
            match r {
                RnnParams::Gru(p) => {
                    for m in [
                        &mut p.w_z, &mut p.u_z, &mut p.w_r, &mut p.u_r, &mut p.w_h, &mut p.u_h,
                    ] {
                        out.push(m.as_slice_mut().expect("standard layout"));
                    }
                    for v in [&mut p.b_z, &mut p.b_r, &mut p.b_h] {
                        out.push(v.as_slice_mut().expect("standard layout"));
                    }
                }
                RnnParams::Lstm(p) => {
                    for m in [
                        &mut p.w_i, &mut p.u_i, &mut p.w_f, &mut p.u_f, &mut p.w_o, &mut p.u_o,
                        &mut p.w_g, &mut p.u_g,
                    ] {
                        out.push(m.as_slice_mut().expect("standard layout"));
                    }
                    for v in [&mut p.b_i, &mut p.b_f, &mut p.b_o, &mut p.b_g] {
                        out.push(v.as_slice_mut().expect("standard layout"));
                    }
                }
            }
        }
        out.push(self.fc.w.as_slice_mut().expect("standard layout"));
        out.push(self.fc.b.as_slice_mut().expect("standard layout"));
        out
    }

    /// Flatten every parameter into one vector, in a fixed order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.visit_tensors().concat()
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<(), NnError> {
        let want: usize = self.visit_tensors().iter().map(|t| t.len()).sum();
        if flat.len() != want {
            return Err(NnError::BadParamCount {
                got: flat.len(),
                want,
            });
        }
        let mut cursor = 0;
        for tensor in self.visit_tensors_mut() {
            tensor.copy_from_slice(&flat[cursor..cursor + tensor.len()]);
            cursor += tensor.len();
        }
        Ok(())
    }

    /// Store the flat parameter vector as a near-lossless 32-bit container.
    pub fn save<W: std::io::Write>(&self, w: &mut W) -> Result<(), crate::quant::QuantError> {
        let flat = self.to_flat();
        let tensor = FixedTensor::quantize(&flat, &[flat.len()], 32)?;
        tensor.write_to(w)
    }

    pub fn load<R: std::io::Read>(
        topology: &NetTopology,
        r: &mut R,
    ) -> Result<BasecallerWeights, NnError> {
        let tensor = FixedTensor::read_from(r)
            .map_err(|e| NnError::ShapeMismatch(format!("weight container: {e}")))?;
        let mut weights = BasecallerWeights::zeros(topology);
        weights.load_flat(&tensor.dequantize())?;
        Ok(weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    #[test]
    fn conv_same_padding_stride_2_halves_300() {
        let spec = ConvSpec {
            kernel: 11,
            in_ch: 1,
            out_ch: 96,
            stride: 2,
        };
        let w = ConvWeights {
            spec,
            w: vec![0.01; 11 * 96],
            b: vec![0.0; 96],
        };
        let input = Array2::zeros((300, 1));
        let out = conv1d_forward(input.view(), &w, 2).unwrap();
        assert_eq!(out.dim(), (150, 96));
    }

    #[test]
    fn conv_same_padding_stride_5_gives_60() {
        let spec = ConvSpec {
            kernel: 11,
            in_ch: 1,
            out_ch: 96,
            stride: 5,
        };
        let w = ConvWeights {
            spec,
            w: vec![0.01; 11 * 96],
            b: vec![0.0; 96],
        };
        let input = Array2::zeros((300, 1));
        let out = conv1d_forward(input.view(), &w, 5).unwrap();
        assert_eq!(out.dim(), (60, 96));
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let spec = ConvSpec {
            kernel: 1,
            in_ch: 1,
            out_ch: 1,
            stride: 1,
        };
        let w = ConvWeights {
            spec,
            w: vec![1.0],
            b: vec![0.0],
        };
        let input =
            Array2::from_shape_vec((6, 1), vec![0.5, -1.0, 2.0, 0.0, 3.5, -0.25]).unwrap();
        let out = conv1d_forward(input.view(), &w, 1).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn conv_rejects_input_shorter_than_kernel() {
        let spec = ConvSpec {
            kernel: 5,
            in_ch: 1,
            out_ch: 1,
            stride: 1,
        };
        let w = ConvWeights {
            spec,
            w: vec![1.0; 5],
            b: vec![0.0],
        };
        let input = Array2::zeros((3, 1));
        assert!(matches!(
            conv1d_forward(input.view(), &w, 1),
            Err(NnError::InputShorterThanKernel { .. })
        ));
    }

    #[test]
    fn gru_zero_params_halves_unit_state() {
        let params = GruParams::zeros(1, 1);
        let xs = Array2::zeros((3, 1));
        let h0 = Array1::from_vec(vec![1.0]);
        let out = gru_forward(&params, xs.view(), h0.view()).unwrap();
        // sigmoid(0) = 0.5, tanh(0) = 0: each step halves the state.
        assert_abs_diff_eq!(out[(0, 0)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(out[(1, 0)], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(out[(2, 0)], 0.125, epsilon = 1e-15);
    }

    /// Scalar transcription of the recurrence, kept separate from the
    /// ndarray implementation it checks.
    fn scalar_gru_step(
        (wz, uz, bz): (f64, f64, f64),
        (wr, ur, br): (f64, f64, f64),
        (wh, uh, bh): (f64, f64, f64),
        x: f64,
        h: f64,
    ) -> f64 {
        let z = sigmoid(wz * x + uz * h) + bz;
        let r = sigmoid(wr * x + ur * h) + br;
        let g = (wh * x + uh * (r * h)).tanh() + bh;
        z * h + (1.0 - z) * g
    }

    #[test]
    fn gru_matches_scalar_oracle() {
        use rand::Rng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..25 {
            let coef: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let mut params = GruParams::zeros(1, 1);
            params.w_z[(0, 0)] = coef[0];
            params.u_z[(0, 0)] = coef[1];
            params.b_z[0] = coef[2];
            params.w_r[(0, 0)] = coef[3];
            params.u_r[(0, 0)] = coef[4];
            params.b_r[0] = coef[5];
            params.w_h[(0, 0)] = coef[6];
            params.u_h[(0, 0)] = coef[7];
            params.b_h[0] = coef[8];
            let xs: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x_arr = Array2::from_shape_vec((5, 1), xs.clone()).unwrap();
            let h0 = Array1::from_vec(vec![rng.gen_range(-1.0..1.0)]);
            let out = gru_forward(&params, x_arr.view(), h0.view()).unwrap();
            let mut h = h0[0];
            for (t, &x) in xs.iter().enumerate() {
                h = scalar_gru_step(
                    (coef[0], coef[1], coef[2]),
                    (coef[3], coef[4], coef[5]),
                    (coef[6], coef[7], coef[8]),
                    x,
                    h,
                );
                assert_abs_diff_eq!(out[(t, 0)], h, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn saturated_update_gate_copies_state_forward() {
        // Large W_z drives sigmoid to 1 with b_z = 0, so h_t stays h_{t-1}.
        let mut params = GruParams::zeros(1, 2);
        params.w_z.fill(60.0);
        let xs = Array2::from_elem((4, 1), 1.0);
        let h0 = Array1::from_vec(vec![0.7, -0.3]);
        let out = gru_forward(&params, xs.view(), h0.view()).unwrap();
        for t in 0..4 {
            assert_abs_diff_eq!(out[(t, 0)], 0.7, epsilon = 1e-12);
            assert_abs_diff_eq!(out[(t, 1)], -0.3, epsilon = 1e-12);
        }
    }

    #[test]
    fn uniform_logits_give_uniform_rows() {
        let topo = NetTopology::toy("toy", 12, 4);
        let weights = BasecallerWeights::zeros(&topo);
        let signal: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let probs = basecaller_forward(&topo, &weights, &signal, QuantMode::Float).unwrap();
        for t in 0..probs.timesteps() {
            for s in crate::genome::CtcSymbol::ALL {
                assert_abs_diff_eq!(probs.prob(t, s), 0.2, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn rows_normalize_for_random_weights() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for seed in 0..5 {
            let topo = NetTopology::toy("toy", 16, 4);
            let weights = BasecallerWeights::random(&topo, 0.5 + 0.1 * seed as f64, &mut rng);
            let signal: Vec<f64> = (0..16).map(|i| (i as f64 * 0.9).cos()).collect();
            let probs = basecaller_forward(&topo, &weights, &signal, QuantMode::Float).unwrap();
            for t in 0..probs.timesteps() {
                let sum: f64 = (0..5)
                    .map(|i| probs.prob(t, crate::genome::CtcSymbol::from_index(i).unwrap()))
                    .sum();
                assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn guppy_row_count_matches_composed_shapes() {
        // Independent composition of the conv stack shapes.
        fn composed_rows(topo: &NetTopology) -> usize {
            let mut len = topo.window_len;
            for c in &topo.convs {
                len = len.div_ceil(c.stride);
            }
            len
        }
        let topo = NetTopology::guppy();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let weights = BasecallerWeights::random(&topo, 0.05, &mut rng);
        let signal: Vec<f64> = (0..300).map(|i| (i as f64 * 0.11).sin()).collect();
        let probs = basecaller_forward(&topo, &weights, &signal, QuantMode::Float).unwrap();
        assert_eq!(probs.timesteps(), composed_rows(&topo));
        assert_eq!(probs.timesteps(), 150);
    }

    #[test]
    fn guppy_table_shapes_raise_warnings() {
        let warnings = NetTopology::guppy().shape_warnings();
        let stages: Vec<&str> = warnings.iter().map(|w| w.stage.as_str()).collect();
        // The published table's RNN and FC shapes do not compose; conv does.
        assert!(stages.contains(&"rnn"));
        assert!(stages.contains(&"fc"));
        assert!(!stages.contains(&"conv"));
    }

    #[test]
    fn quantized_path_converges_to_float_with_width() {
        let topo = NetTopology::toy("toy", 16, 4);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let weights = BasecallerWeights::random(&topo, 0.8, &mut rng);
        let signal: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).sin()).collect();
        let float = basecaller_forward(&topo, &weights, &signal, QuantMode::Float).unwrap();
        let mut prev = f64::INFINITY;
        for bits in [8, 16, 32] {
            let fixed =
                basecaller_forward(&topo, &weights, &signal, QuantMode::Fixed(bits)).unwrap();
            let dev = float
                .as_array()
                .iter()
                .zip(fixed.as_array().iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(
                dev <= prev,
                "deviation should not increase with width: {dev} > {prev} at {bits} bits"
            );
            prev = dev;
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn sliding_window_coverage() {
        // L=5, T=1 over a stream of 9: interior elements see 5 windows.
        assert_eq!(windows_covering(4, 5, 1, 9), 5);
        // T=L: non-overlapping, every element covered once.
        assert_eq!(windows_covering(4, 5, 5, 10), 1);
        assert_eq!(windows_covering(7, 5, 5, 10), 1);
        // L=6, T=2: interior coverage 3.
        assert_eq!(windows_covering(7, 6, 2, 20), 3);
    }

    #[test]
    fn sliding_window_reads_tags_offsets() {
        let topo = NetTopology::toy("toy", 8, 2);
        let weights = BasecallerWeights::zeros(&topo);
        let signal: Vec<f64> = (0..14).map(|i| i as f64 * 0.01).collect();
        let reads = sliding_window_reads(&signal, &topo, &weights, QuantMode::Float, |_| {
            vec![Base::A]
        })
        .unwrap();
        let offsets: Vec<usize> = reads.iter().map(|r| r.origin_offset).collect();
        assert_eq!(offsets, vec![0, 2, 4, 6]);
    }

    #[test]
    fn sliding_window_rejects_zero_slide() {
        let mut topo = NetTopology::toy("toy", 8, 2);
        topo.slide = 0;
        let weights = BasecallerWeights::zeros(&topo);
        let signal = vec![0.0; 16];
        assert_eq!(
            sliding_window_reads(&signal, &topo, &weights, QuantMode::Float, |_| vec![])
                .unwrap_err(),
            NnError::BadSlide
        );
    }

    #[test]
    fn flat_params_round_trip() {
        let topo = NetTopology::toy("toy", 12, 4);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let weights = BasecallerWeights::random(&topo, 1.0, &mut rng);
        let flat = weights.to_flat();
        assert_eq!(flat.len(), topo.param_count());
        let mut other = BasecallerWeights::zeros(&topo);
        other.load_flat(&flat).unwrap();
        assert_eq!(weights, other);
    }

    #[test]
    fn weights_save_load_close() {
        let topo = NetTopology::toy("toy", 12, 4);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(22);
        let weights = BasecallerWeights::random(&topo, 1.0, &mut rng);
        let mut buf = Vec::new();
        weights.save(&mut buf).unwrap();
        let loaded = BasecallerWeights::load(&topo, &mut buf.as_slice()).unwrap();
        for (a, b) in weights.to_flat().iter().zip(loaded.to_flat()) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
        }
    }
}
