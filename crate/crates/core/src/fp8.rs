//! Bit-exact software emulation of the FP8 (E4M3) quantized linear path:
//! encoding, per-tensor scaling, dynamic activation quantization, and the
//! divisibility-by-16 eligibility rule.
//!
//! Format: 1 sign bit, 4 exponent bits (bias 7), 3 mantissa bits. No
//! infinities; the only NaN pattern is S.1111.111. Largest finite value is
//! ±448, smallest subnormal 2⁻⁹. Out-of-range inputs saturate to ±448.

use crate::error::{Error, Result};

/// Largest finite E4M3 magnitude.
pub const E4M3_MAX: f64 = 448.0;
/// Positive NaN byte (S.1111.111).
pub const E4M3_NAN: u8 = 0x7F;
/// Largest finite non-negative byte (0.1111.110 = 448).
const MAX_FINITE_BYTE: u8 = 0x7E;

/// Decode one E4M3 byte. The NaN patterns (0x7F / 0xFF) decode to NaN;
/// 0x80 decodes to -0.0.
pub fn decode_e4m3(byte: u8) -> f64 {
    let sign = if byte & 0x80 != 0 { -1.0 } else { 1.0 };
    let exp = (byte >> 3) & 0x0F;
    let mant = (byte & 0x07) as f64;
    if exp == 0x0F && byte & 0x07 == 0x07 {
        return f64::NAN;
    }
    let magnitude = if exp == 0 {
        // subnormal: m/8 · 2⁻⁶
        mant / 8.0 * 2f64.powi(-6)
    } else {
        (1.0 + mant / 8.0) * 2f64.powi(exp as i32 - 7)
    };
    sign * magnitude
}

/// Encode a value to the nearest representable E4M3 byte, round half to
/// even, saturating beyond ±448. NaN encodes to the NaN byte. Total.
pub fn encode_e4m3(x: f64) -> u8 {
    if x.is_nan() {
        return E4M3_NAN;
    }
    let negative = x.is_sign_negative();
    let magnitude = x.abs().min(E4M3_MAX);
    // Positive bytes 0x00..=0x7E decode monotonically; binary-search the
    // insertion point, then round to nearest with ties to even mantissa
    // (the mantissa LSB is the byte LSB).
    let mut lo = 0u8;
    let mut hi = MAX_FINITE_BYTE;
    while lo < hi {
        let mid = (lo + hi) / 2;
        if decode_e4m3(mid) < magnitude {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    // lo is the first byte with decode(lo) >= magnitude
    let byte = if lo == 0 {
        0
    } else {
        let upper = decode_e4m3(lo);
        let lower = decode_e4m3(lo - 1);
        let d_up = upper - magnitude;
        let d_down = magnitude - lower;
        // nearest wins; an exact tie goes to the even mantissa
        if d_up < d_down || (d_up == d_down && lo % 2 == 0) {
            lo
        } else {
            lo - 1
        }
    };
    if negative {
        byte | 0x80
    } else {
        byte
    }
}

/// Eligibility rule for quantized linear layers: both dimensions must be
/// divisible by 16 to satisfy the kernel alignment requirement.
pub fn eligible(in_dim: usize, out_dim: usize) -> bool {
    in_dim % 16 == 0 && out_dim % 16 == 0
}

/// A linear layer stored as E4M3 bytes with one per-tensor scale.
/// Weights are row-major `[out_dim][in_dim]` (y = x·Wᵀ).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantLinear {
    pub q_weights: Vec<u8>,
    pub scale: f64,
    pub in_dim: usize,
    pub out_dim: usize,
}

fn max_abs(rows: &[Vec<f64>]) -> f64 {
    rows.iter()
        .flatten()
        .fold(0.0f64, |acc, &v| acc.max(v.abs()))
}

fn check_matrix(rows: &[Vec<f64>], ctx: &'static str) -> Result<usize> {
    let cols = rows.first().map_or(0, |r| r.len());
    if rows.is_empty() || cols == 0 {
        return Err(Error::invalid(format!("{ctx}: matrix must be nonempty")));
    }
    for r in rows {
        if r.len() != cols {
            return Err(Error::DimensionMismatch {
                context: "ragged matrix",
                expected: cols,
                got: r.len(),
            });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("{ctx}: entries must be finite")));
        }
    }
    Ok(cols)
}

/// Quantize a weight matrix with a per-tensor scale `max|w| / 448`
/// (1 for an all-zero tensor), so every scaled entry is in range.
pub fn quantize_tensor(weights: &[Vec<f64>]) -> Result<QuantLinear> {
    let in_dim = check_matrix(weights, "quantize_tensor")?;
    let out_dim = weights.len();
    let peak = max_abs(weights);
    let scale = if peak == 0.0 { 1.0 } else { peak / E4M3_MAX };
    let mut q_weights = Vec::with_capacity(out_dim * in_dim);
    for row in weights {
        for &w in row {
            q_weights.push(encode_e4m3(w / scale));
        }
    }
    Ok(QuantLinear {
        q_weights,
        scale,
        in_dim,
        out_dim,
    })
}

impl QuantLinear {
    /// Dequantized weight value at `[out][in]`.
    pub fn weight(&self, out: usize, input: usize) -> f64 {
        decode_e4m3(self.q_weights[out * self.in_dim + input]) * self.scale
    }

    /// Binary blob: `in_dim: u32 LE, out_dim: u32 LE, scale: f64 LE`,
    /// then row-major weight bytes. Bit-exact across platforms.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.q_weights.len());
        out.extend_from_slice(&(self.in_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.out_dim as u32).to_le_bytes());
        out.extend_from_slice(&self.scale.to_le_bytes());
        out.extend_from_slice(&self.q_weights);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Parse("quant blob shorter than its header".into()));
        }
        let in_dim = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let out_dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let scale = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let expected = in_dim
            .checked_mul(out_dim)
            .ok_or_else(|| Error::Parse("quant blob dims overflow".into()))?;
        if bytes.len() != 16 + expected {
            return Err(Error::Parse(format!(
                "quant blob holds {} weight bytes, header says {expected}",
                bytes.len() - 16
            )));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Parse(format!("quant blob scale must be > 0, got {scale}")));
        }
        Ok(Self {
            q_weights: bytes[16..].to_vec(),
            scale,
            in_dim,
            out_dim,
        })
    }
}

/// Exact reference matmul `y = x · Wᵀ` in f64, fixed summation order.
pub fn matmul_exact(x: &[Vec<f64>], weights: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let in_dim = check_matrix(weights, "matmul_exact weights")?;
    let x_cols = check_matrix(x, "matmul_exact input")?;
    if x_cols != in_dim {
        return Err(Error::DimensionMismatch {
            context: "matmul input width",
            expected: in_dim,
            got: x_cols,
        });
    }
    Ok(x
        .iter()
        .map(|row| {
            weights
                .iter()
                .map(|w| row.iter().zip(w).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect())
}

/// Quantized matmul: activations get their own dynamic per-tensor scale,
/// products accumulate in f64 in a fixed order, and the output is scaled
/// back by `scale_w · scale_x`.
pub fn quant_matmul(x: &[Vec<f64>], layer: &QuantLinear) -> Result<Vec<Vec<f64>>> {
    let x_cols = check_matrix(x, "quant_matmul input")?;
    if x_cols != layer.in_dim {
        return Err(Error::DimensionMismatch {
            context: "quant_matmul input width",
            expected: layer.in_dim,
            got: x_cols,
        });
    }
    let peak = max_abs(x);
    let scale_x = if peak == 0.0 { 1.0 } else { peak / E4M3_MAX };
    let out_scale = layer.scale * scale_x;

    let mut result = Vec::with_capacity(x.len());
    let mut xq = vec![0.0f64; layer.in_dim];
    for row in x {
        for (q, &v) in xq.iter_mut().zip(row) {
            *q = decode_e4m3(encode_e4m3(v / scale_x));
        }
        let mut out_row = Vec::with_capacity(layer.out_dim);
        for o in 0..layer.out_dim {
            let w = &layer.q_weights[o * layer.in_dim..(o + 1) * layer.in_dim];
            let mut acc = 0.0f64;
            for (xv, &wb) in xq.iter().zip(w) {
                acc += xv * decode_e4m3(wb);
            }
            out_row.push(acc * out_scale);
        }
        result.push(out_row);
    }
    Ok(result)
}

/// A linear layer that quantizes itself when eligible and otherwise keeps
/// the exact f64 path, mirroring the deployment-time replacement rule.
#[derive(Debug, Clone)]
pub enum Linear {
    Exact(Vec<Vec<f64>>),
    Quantized(QuantLinear),
}

impl Linear {
    pub fn from_weights(weights: Vec<Vec<f64>>) -> Result<Self> {
        let in_dim = check_matrix(&weights, "Linear::from_weights")?;
        if eligible(in_dim, weights.len()) {
            Ok(Linear::Quantized(quantize_tensor(&weights)?))
        } else {
            Ok(Linear::Exact(weights))
        }
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self, Linear::Quantized(_))
    }

    pub fn forward(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        match self {
            Linear::Exact(w) => matmul_exact(x, w),
            Linear::Quantized(q) => quant_matmul(x, q),
        }
    }
}
