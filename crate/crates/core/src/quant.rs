//! Absmean weight ternarization, absmax int8 activation quantization and the
//! 2-bit trit packing used both in memory and in the container's `t2` payload.
//!
//! Packing layout: codes `0 → 0b00`, `+1 → 0b01`, `-1 → 0b10`; trit `j` of a
//! group of four occupies bits `2j+1..=2j` (first trit in the lowest bits).
//! Every row is padded on its own to a whole byte with `0b00`. The code
//! `0b11` is never produced and is rejected on decode.
//!
//! All rounding is half-away-from-zero (`f32::round`).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Smallest weight scale; keeps all-zero tensors from dividing by zero.
pub const BETA_FLOOR: f32 = 1e-8;

/// Largest magnitude of a quantized activation.
pub const QMAX: i32 = 127;

/// Bytes per packed row of `cols` trits.
#[inline]
pub const fn packed_row_bytes(cols: usize) -> usize {
    cols.div_ceil(4)
}

/// Row-major `{-1, 0, +1}` matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TritMatrix {
    rows: usize,
    cols: usize,
    trits: Vec<i8>,
}

impl TritMatrix {
    pub fn new(rows: usize, cols: usize, trits: Vec<i8>) -> Result<Self> {
        if trits.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} trit matrix needs {} values, got {}",
                rows * cols,
                trits.len()
            )));
        }
        if let Some(pos) = trits.iter().position(|t| !(-1..=1).contains(t)) {
            return Err(Error::Data(format!(
                "value {} at index {pos} is not a trit",
                trits[pos]
            )));
        }
        Ok(Self { rows, cols, trits })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn trits(&self) -> &[i8] {
        &self.trits
    }

    pub fn row(&self, i: usize) -> &[i8] {
        &self.trits[i * self.cols..(i + 1) * self.cols]
    }

    pub fn pack(&self, scale: f32) -> PackedTernaryMatrix {
        // A validated matrix always packs.
        let bytes = pack_trits(&self.trits, self.rows, self.cols).expect("valid trits");
        PackedTernaryMatrix {
            rows: self.rows,
            cols: self.cols,
            bytes,
            scale,
        }
    }
}

/// `rows × cols` trits packed four per byte, with one per-tensor scale β.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedTernaryMatrix {
    rows: usize,
    cols: usize,
    bytes: Vec<u8>,
    scale: f32,
}

impl PackedTernaryMatrix {
    /// Wraps raw packed bytes after checking the byte count and rejecting
    /// any `0b11` code.
    pub fn from_bytes(rows: usize, cols: usize, bytes: Vec<u8>, scale: f32) -> Result<Self> {
        validate_packed(&bytes, rows, cols)?;
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(Error::Data(format!(
                "ternary scale {scale} must be finite and >= 0"
            )));
        }
        Ok(Self {
            rows,
            cols,
            bytes,
            scale,
        })
    }

    /// Absmean-quantizes and packs a dense weight in one step.
    pub fn quantize(w: &Tensor) -> Result<Self> {
        let (trits, beta) = quantize_weights_absmean(w)?;
        Ok(trits.pack(beta))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn scale(&self) -> f32 {
        self.scale
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn row_bytes(&self) -> usize {
        packed_row_bytes(self.cols)
    }

    pub fn packed_row(&self, o: usize) -> &[u8] {
        let rb = self.row_bytes();
        &self.bytes[o * rb..(o + 1) * rb]
    }

    pub fn trits(&self) -> TritMatrix {
        // Bytes were validated on construction.
        unpack_trits(&self.bytes, self.rows, self.cols).expect("validated packing")
    }
}

/// Per-token int8 activations with per-row absmax scales γ.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedTokens {
    rows: usize,
    cols: usize,
    values: Vec<i8>,
    scales: Vec<f32>,
}

impl QuantizedTokens {
    pub fn new(rows: usize, cols: usize, values: Vec<i8>, scales: Vec<f32>) -> Result<Self> {
        if values.len() != rows * cols || scales.len() != rows {
            return Err(Error::Shape(format!(
                "quantized tokens {rows}x{cols}: got {} values and {} scales",
                values.len(),
                scales.len()
            )));
        }
        if values.contains(&i8::MIN) {
            return Err(Error::Data(
                "quantized activation -128 is out of range".into(),
            ));
        }
        Ok(Self {
            rows,
            cols,
            values,
            scales,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[i8] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn scale(&self, i: usize) -> f32 {
        self.scales[i]
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    /// `γ·q/127` back in f32; the activation half of the dense oracle.
    pub fn dequantize(&self) -> Tensor {
        let mut out = Vec::with_capacity(self.values.len());
        for i in 0..self.rows {
            let g = self.scales[i];
            out.extend(self.row(i).iter().map(|&q| g * q as f32 / QMAX as f32));
        }
        Tensor::new(vec![self.rows, self.cols], out).expect("shape preserved")
    }
}

fn check_finite(x: &Tensor, what: &str) -> Result<()> {
    if let Some(pos) = x.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!(
            "{what} contains non-finite value at index {pos}"
        )));
    }
    Ok(())
}

/// `β = mean|W|`, `T = clip(round(W/β), -1, 1)`.
pub fn quantize_weights_absmean(w: &Tensor) -> Result<(TritMatrix, f32)> {
    let (rows, cols) = w.dims2()?;
    check_finite(w, "weight")?;
    let beta = absmean(w.data()).max(BETA_FLOOR);
    let trits = w
        .data()
        .iter()
        .map(|&v| (v / beta).round().clamp(-1.0, 1.0) as i8)
        .collect();
    Ok((TritMatrix::new(rows, cols, trits)?, beta))
}

/// Mean absolute value, accumulated in f64 and rounded once to f32.
pub fn absmean(values: &[f32]) -> f32 {
    if values.is_empty() {
        return 0.0;
    }
    let sum: f64 = values.iter().map(|v| v.abs() as f64).sum();
    (sum / values.len() as f64) as f32
}

/// `γ_i = max_k |x[i,k]|`, `q = clip(round(127·x/γ_i), -127, 127)`; a zero
/// row gets `γ = 0` and all-zero codes.
pub fn quantize_activations_absmax(x: &Tensor) -> Result<QuantizedTokens> {
    let (rows, cols) = x.dims2()?;
    check_finite(x, "activation")?;
    let mut values = Vec::with_capacity(rows * cols);
    let mut scales = Vec::with_capacity(rows);
    for i in 0..rows {
        let row = x.row(i);
        let gamma = row.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        scales.push(gamma);
        if gamma == 0.0 {
            values.extend(std::iter::repeat_n(0i8, cols));
        } else {
            values.extend(
                row.iter()
                    .map(|&v| (QMAX as f32 * v / gamma).round().clamp(-127.0, 127.0) as i8),
            );
        }
    }
    QuantizedTokens::new(rows, cols, values, scales)
}

#[inline]
fn encode(t: i8) -> u8 {
    match t {
        0 => 0b00,
        1 => 0b01,
        _ => 0b10,
    }
}

/// Packs a row-major trit slice; each row is padded to a whole byte.
pub fn pack_trits(trits: &[i8], rows: usize, cols: usize) -> Result<Vec<u8>> {
    if trits.len() != rows * cols {
        return Err(Error::Shape(format!(
            "{rows}x{cols} packing needs {} trits, got {}",
            rows * cols,
            trits.len()
        )));
    }
    let rb = packed_row_bytes(cols);
    let mut out = vec![0u8; rows * rb];
    for r in 0..rows {
        let src = &trits[r * cols..(r + 1) * cols];
        let dst = &mut out[r * rb..(r + 1) * rb];
        for (k, &t) in src.iter().enumerate() {
            if !(-1..=1).contains(&t) {
                return Err(Error::Data(format!(
                    "value {t} at row {r}, col {k} is not a trit"
                )));
            }
            dst[k / 4] |= encode(t) << (2 * (k % 4));
        }
    }
    Ok(out)
}

fn validate_packed(bytes: &[u8], rows: usize, cols: usize) -> Result<()> {
    let rb = packed_row_bytes(cols);
    if bytes.len() != rows * rb {
        return Err(Error::Shape(format!(
            "{rows}x{cols} packed matrix needs {} bytes, got {}",
            rows * rb,
            bytes.len()
        )));
    }
    for (idx, &b) in bytes.iter().enumerate() {
        if !BYTE_VALID[b as usize] {
            return Err(Error::Corruption {
                row: idx / rb.max(1),
                byte: idx % rb.max(1),
            });
        }
    }
    Ok(())
}

/// Exact inverse of [`pack_trits`] on valid input.
pub fn unpack_trits(bytes: &[u8], rows: usize, cols: usize) -> Result<TritMatrix> {
    validate_packed(bytes, rows, cols)?;
    let rb = packed_row_bytes(cols);
    let mut trits = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let row = &bytes[r * rb..(r + 1) * rb];
        for k in 0..cols {
            trits.push(DECODE_LUT[row[k / 4] as usize][k % 4]);
        }
    }
    TritMatrix::new(rows, cols, trits)
}

/// `β·T` as a dense tensor.
pub fn dequantize_weights(p: &PackedTernaryMatrix) -> Tensor {
    let t = p.trits();
    let beta = p.scale();
    let data = t.trits().iter().map(|&v| beta * v as f32).collect();
    Tensor::new(vec![p.rows(), p.cols()], data).expect("shape preserved")
}

const fn decode_code(c: u8) -> i8 {
    match c {
        0b01 => 1,
        0b10 => -1,
        _ => 0,
    }
}

const fn build_lut() -> [[i8; 4]; 256] {
    let mut lut = [[0i8; 4]; 256];
    let mut b = 0;
    while b < 256 {
        let mut j = 0;
        while j < 4 {
            lut[b][j] = decode_code(((b >> (2 * j)) & 0b11) as u8);
            j += 1;
        }
        b += 1;
    }
    lut
}

const fn build_valid() -> [bool; 256] {
    let mut ok = [true; 256];
    let mut b = 0;
    while b < 256 {
        let mut j = 0;
        while j < 4 {
            if (b >> (2 * j)) & 0b11 == 0b11 {
                ok[b] = false;
            }
            j += 1;
        }
        b += 1;
    }
    ok
}

/// Byte → four trits. Entries for bytes containing `0b11` are unused.
pub static DECODE_LUT: [[i8; 4]; 256] = build_lut();

static BYTE_VALID: [bool; 256] = build_valid();
