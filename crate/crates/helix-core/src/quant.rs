//! Uniform fixed-point quantization and the bit-sliced / bit-serial
//! decompositions a crossbar dot-product engine consumes.
//!
//! Values are quantized symmetrically per tensor and stored offset-binary:
//! the signed level `q` lives at `q + zero_point`, so every stored element is
//! non-negative and maps directly onto a cell conductance. The shift-and-add
//! stage subtracts the zero-point contribution after accumulation.

use std::io::{self, Read as IoRead, Write as IoWrite};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QuantError {
    #[error("bit width {0} outside supported range 2..=32")]
    BadBitWidth(u32),
    #[error("tensor is empty")]
    EmptyTensor,
    #[error("tensor contains a non-finite value")]
    NonFinite,
    #[error("shape {shape:?} does not match {len} data elements")]
    ShapeMismatch { shape: Vec<usize>, len: usize },
    #[error("bits per cell must be 1 or 2, got {0}")]
    BadBitsPerCell(u32),
    #[error("container i/o: {0}")]
    Io(String),
    #[error("bad container magic")]
    BadMagic,
}

impl From<io::Error> for QuantError {
    fn from(e: io::Error) -> Self {
        QuantError::Io(e.to_string())
    }
}

/// Bit width, scale and zero point of a quantized tensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub bit_width: u32,
    pub scale: f64,
    pub zero_point: i64,
}

impl QuantSpec {
    pub fn new(bit_width: u32, scale: f64, zero_point: i64) -> Result<QuantSpec, QuantError> {
        if !(2..=32).contains(&bit_width) {
            return Err(QuantError::BadBitWidth(bit_width));
        }
        assert!(scale > 0.0, "scale must be positive");
        let max_level = (1i64 << bit_width) - 1;
        assert!(
            (0..=max_level).contains(&zero_point),
            "zero point {zero_point} not representable in {bit_width} bits"
        );
        Ok(QuantSpec {
            bit_width,
            scale,
            zero_point,
        })
    }

    /// Largest stored level, `2^bit_width - 1`.
    pub fn max_level(&self) -> i64 {
        (1i64 << self.bit_width) - 1
    }

    /// Real value of a stored level.
    pub fn value_of(&self, level: i64) -> f64 {
        (level - self.zero_point) as f64 * self.scale
    }
}

/// A quantized tensor: offset-binary integer levels plus their [`QuantSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedTensor {
    pub shape: Vec<usize>,
    pub data: Vec<i64>,
    pub spec: QuantSpec,
}

fn round_half_away(x: f64) -> f64 {
    // f64::round already rounds half away from zero.
    x.round()
}

impl FixedTensor {
    /// Symmetric per-tensor quantization with round-half-away-from-zero.
    ///
    /// The scale spans `[-max|x|, +max|x|]` over `2^bits - 1` steps; an
    /// all-zero tensor quantizes with scale 1. Min/max calibration.
    pub fn quantize(values: &[f64], shape: &[usize], bit_width: u32) -> Result<FixedTensor, QuantError> {
        if values.is_empty() {
            return Err(QuantError::EmptyTensor);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(QuantError::NonFinite);
        }
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(QuantError::ShapeMismatch {
                shape: shape.to_vec(),
                len: values.len(),
            });
        }
        if !(2..=32).contains(&bit_width) {
            return Err(QuantError::BadBitWidth(bit_width));
        }
        let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let levels = ((1u64 << bit_width) - 1) as f64;
        let scale = if max_abs == 0.0 { 1.0 } else { 2.0 * max_abs / levels };
        let half = 1i64 << (bit_width - 1);
        let zero_point = half;
        let data = values
            .iter()
            .map(|&v| {
                let q = round_half_away(v / scale) as i64;
                let q = q.clamp(-half, half - 1);
                q + zero_point
            })
            .collect();
        Ok(FixedTensor {
            shape: shape.to_vec(),
            data,
            spec: QuantSpec {
                bit_width,
                scale,
                zero_point,
            },
        })
    }

    pub fn dequantize(&self) -> Vec<f64> {
        self.data.iter().map(|&u| self.spec.value_of(u)).collect()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Serialize as the binary tensor container: magic, shape, bit width,
    /// scale, zero point, then little-endian `i64` levels.
    pub fn write_to<W: IoWrite>(&self, w: &mut W) -> Result<(), QuantError> {
        w.write_all(b"FXT1")?;
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &d in &self.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        w.write_all(&self.spec.bit_width.to_le_bytes())?;
        w.write_all(&self.spec.scale.to_le_bytes())?;
        w.write_all(&self.spec.zero_point.to_le_bytes())?;
        for &v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: IoRead>(r: &mut R) -> Result<FixedTensor, QuantError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"FXT1" {
            return Err(QuantError::BadMagic);
        }
        let mut buf4 = [0u8; 4];
        let mut buf8 = [0u8; 8];
        r.read_exact(&mut buf4)?;
        let ndim = u32::from_le_bytes(buf4) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            r.read_exact(&mut buf8)?;
            shape.push(u64::from_le_bytes(buf8) as usize);
        }
        r.read_exact(&mut buf4)?;
        let bit_width = u32::from_le_bytes(buf4);
        r.read_exact(&mut buf8)?;
        let scale = f64::from_le_bytes(buf8);
        r.read_exact(&mut buf8)?;
        let zero_point = i64::from_le_bytes(buf8);
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            r.read_exact(&mut buf8)?;
            data.push(i64::from_le_bytes(buf8));
        }
        Ok(FixedTensor {
            shape,
            data,
            spec: QuantSpec::new(bit_width, scale, zero_point)?,
        })
    }
}

/// One cell-plane of a bit-sliced tensor: every element holds
/// `bits_per_cell` bits of the stored level, least significant plane first.
#[derive(Debug, Clone, PartialEq)]
pub struct CellPlane {
    pub shape: Vec<usize>,
    pub data: Vec<u8>,
    pub bits: u32,
    /// Radix shift of this plane: level = sum over planes of data << shift.
    pub shift: u32,
}

/// Split the stored levels of `w` into `ceil(bit_width / bits_per_cell)`
/// planes of `bits_per_cell`-bit cells, least significant first.
///
/// Recomposing the planes with their radix shifts reproduces the stored
/// levels exactly.
pub fn slice_weights(w: &FixedTensor, bits_per_cell: u32) -> Result<Vec<CellPlane>, QuantError> {
    if !(1..=2).contains(&bits_per_cell) {
        return Err(QuantError::BadBitsPerCell(bits_per_cell));
    }
    let plane_count = w.spec.bit_width.div_ceil(bits_per_cell);
    let mask = (1i64 << bits_per_cell) - 1;
    let planes = (0..plane_count)
        .map(|k| {
            let shift = k * bits_per_cell;
            CellPlane {
                shape: w.shape.clone(),
                data: w.data.iter().map(|&u| ((u >> shift) & mask) as u8).collect(),
                bits: bits_per_cell,
                shift,
            }
        })
        .collect();
    Ok(planes)
}

/// Split the stored levels of `x` into single-bit planes, least significant
/// first: `sum_k plane_k << k` reproduces the levels exactly.
pub fn bitserial_inputs(x: &FixedTensor) -> Vec<CellPlane> {
    slice_weights(x, 1).expect("1 bit per cell is always valid")
}

/// Recompose sliced planes back into integer levels (shift-and-add).
pub fn recompose(planes: &[CellPlane]) -> Vec<i64> {
    let numel = planes.first().map_or(0, |p| p.data.len());
    let mut out = vec![0i64; numel];
    for plane in planes {
        for (acc, &cell) in out.iter_mut().zip(&plane.data) {
            *acc += (cell as i64) << plane.shift;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_tensor_maps_to_zero_point() {
        for bits in [2, 5, 8, 32] {
            let t = FixedTensor::quantize(&[0.0], &[1], bits).unwrap();
            assert_eq!(t.spec.scale, 1.0);
            assert_eq!(t.data[0], t.spec.zero_point);
            assert_eq!(t.dequantize()[0], 0.0);
        }
    }

    #[test]
    fn five_bit_scale_and_error_bound() {
        let xs = [-1.0, 1.0];
        let t = FixedTensor::quantize(&xs, &[2], 5).unwrap();
        assert_eq!(t.spec.scale, 2.0 / 31.0);
        for (x, y) in xs.iter().zip(t.dequantize()) {
            assert!((x - y).abs() <= t.spec.scale / 2.0 + 1e-15);
        }
    }

    #[test]
    fn thirty_two_bit_round_trip_near_lossless() {
        let xs: Vec<f64> = (0..64).map(|i| (i as f64 * 0.7133).sin() * 3.0).collect();
        let t = FixedTensor::quantize(&xs, &[64], 32).unwrap();
        for (x, y) in xs.iter().zip(t.dequantize()) {
            let rel = (x - y).abs() / x.abs().max(1e-30);
            assert!(rel <= 1e-6, "relative error {rel} too large");
        }
    }

    #[test]
    fn slice_five_bit_example() {
        // Stored level 0b10110 = 22 with 2 bits per cell: planes (LSB first)
        // 0b10, 0b01, 0b1 recombine as 2 + 1*4 + 1*16 = 22.
        let t = FixedTensor {
            shape: vec![1],
            data: vec![22],
            spec: QuantSpec::new(5, 1.0, 0).unwrap(),
        };
        let planes = slice_weights(&t, 2).unwrap();
        assert_eq!(planes.len(), 3);
        assert_eq!(planes[0].data, vec![0b10]);
        assert_eq!(planes[1].data, vec![0b01]);
        assert_eq!(planes[2].data, vec![0b1]);
        assert_eq!(recompose(&planes), vec![22]);
    }

    #[test]
    fn slice_zero_weight_gives_zero_planes() {
        let t = FixedTensor {
            shape: vec![2],
            data: vec![0, 0],
            spec: QuantSpec::new(5, 1.0, 0).unwrap(),
        };
        for plane in slice_weights(&t, 2).unwrap() {
            assert!(plane.data.iter().all(|&c| c == 0));
        }
    }

    #[test]
    fn two_bit_weight_single_plane_identity() {
        let t = FixedTensor {
            shape: vec![4],
            data: vec![0, 1, 2, 3],
            spec: QuantSpec::new(2, 1.0, 0).unwrap(),
        };
        let planes = slice_weights(&t, 2).unwrap();
        assert_eq!(planes.len(), 1);
        assert_eq!(planes[0].data, vec![0, 1, 2, 3]);
    }

    #[test]
    fn bits_per_cell_out_of_range_rejected() {
        let t = FixedTensor {
            shape: vec![1],
            data: vec![1],
            spec: QuantSpec::new(5, 1.0, 0).unwrap(),
        };
        assert_eq!(slice_weights(&t, 0), Err(QuantError::BadBitsPerCell(0)));
        assert_eq!(slice_weights(&t, 3), Err(QuantError::BadBitsPerCell(3)));
    }

    #[test]
    fn bitserial_trio() {
        let spec = QuantSpec::new(5, 1.0, 0).unwrap();
        // Zero input.
        let zero = FixedTensor {
            shape: vec![3],
            data: vec![0, 0, 0],
            spec,
        };
        for plane in bitserial_inputs(&zero) {
            assert!(plane.data.iter().all(|&c| c == 0));
        }
        // Single-bit identity: a 2-bit tensor of 0/1 yields itself as plane 0.
        let single = FixedTensor {
            shape: vec![2],
            data: vec![1, 0],
            spec: QuantSpec::new(2, 1.0, 0).unwrap(),
        };
        assert_eq!(bitserial_inputs(&single)[0].data, vec![1, 0]);
        // Random 5-bit recomposition.
        let t = FixedTensor {
            shape: vec![4],
            data: vec![22, 7, 31, 0],
            spec,
        };
        assert_eq!(recompose(&bitserial_inputs(&t)), t.data);
    }

    /// Direct integer matrix-vector product over stored levels.
    fn int_matvec(w: &[i64], x: &[i64], rows: usize, cols: usize) -> Vec<i64> {
        let mut out = vec![0i64; cols];
        for i in 0..rows {
            for (j, o) in out.iter_mut().enumerate() {
                *o += x[i] * w[i * cols + j];
            }
        }
        out
    }

    #[test]
    fn sliced_planes_reproduce_integer_matvec_exactly() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (rows, cols) = (16, 12);
        for _ in 0..20 {
            let w_data: Vec<i64> = (0..rows * cols).map(|_| rng.gen_range(0..32)).collect();
            let x_data: Vec<i64> = (0..rows).map(|_| rng.gen_range(0..32)).collect();
            let spec = QuantSpec::new(5, 1.0, 0).unwrap();
            let w = FixedTensor {
                shape: vec![rows, cols],
                data: w_data.clone(),
                spec,
            };
            let x = FixedTensor {
                shape: vec![rows],
                data: x_data.clone(),
                spec,
            };
            let w_planes = slice_weights(&w, 2).unwrap();
            let x_planes = bitserial_inputs(&x);
            let mut acc = vec![0i64; cols];
            for xp in &x_planes {
                for wp in &w_planes {
                    let xi: Vec<i64> = xp.data.iter().map(|&b| b as i64).collect();
                    let wi: Vec<i64> = wp.data.iter().map(|&c| c as i64).collect();
                    let partial = int_matvec(&wi, &xi, rows, cols);
                    for (a, p) in acc.iter_mut().zip(partial) {
                        *a += p << (xp.shift + wp.shift);
                    }
                }
            }
            assert_eq!(acc, int_matvec(&w_data, &x_data, rows, cols));
        }
    }

    proptest! {
        #[test]
        fn quantization_error_within_half_scale(
            xs in proptest::collection::vec(-100.0f64..100.0, 1..40),
            bits in 2u32..12,
        ) {
            let t = FixedTensor::quantize(&xs, &[xs.len()], bits).unwrap();
            let back = t.dequantize();
            for (x, y) in xs.iter().zip(back) {
                prop_assert!((x - y).abs() <= t.spec.scale / 2.0 + 1e-12);
            }
        }

        #[test]
        fn container_round_trip(
            xs in proptest::collection::vec(-10.0f64..10.0, 1..24),
            bits in 2u32..16,
        ) {
            let t = FixedTensor::quantize(&xs, &[xs.len()], bits).unwrap();
            let mut buf = Vec::new();
            t.write_to(&mut buf).unwrap();
            let back = FixedTensor::read_from(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(t, back);
        }
    }
}
