//! 8-bit floating point (1 sign, 4 exponent, 3 mantissa, bias 7) used for
//! feature payload scalars.
//!
//! The format has no infinities: the largest magnitude is 448 and the byte
//! 0x7F (sign-extended: 0xFF) is NaN. Finite inputs above 448 in magnitude
//! saturate to the max normal. Encoding rounds to nearest, ties to even.

use std::sync::OnceLock;

const NAN_BYTE: u8 = 0x7F;
const MAX_NORMAL_BYTE: u8 = 0x7E;

/// Largest representable magnitude.
pub const FP8_MAX: f64 = 448.0;
/// Smallest positive normal value (2^-6).
pub const FP8_MIN_NORMAL: f64 = 0.015625;

/// Decoded values of the 127 non-negative, non-NaN codes 0x00..=0x7E,
/// strictly increasing.
fn positive_table() -> &'static [f64; 127] {
    static TABLE: OnceLock<[f64; 127]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [0.0f64; 127];
        for (code, slot) in t.iter_mut().enumerate() {
            let exp_field = (code >> 3) as i32;
            let mantissa = (code & 0x7) as f64;
            *slot = if exp_field == 0 {
                // Subnormal: mantissa / 8 * 2^-6.
                mantissa / 8.0 * FP8_MIN_NORMAL
            } else {
                (1.0 + mantissa / 8.0) * 2f64.powi(exp_field - 7)
            };
        }
        t
    })
}

/// Decode a byte to its exact value. The two NaN codes decode to NaN.
pub fn fp8_decode(byte: u8) -> f64 {
    let magnitude = byte & 0x7F;
    if magnitude == NAN_BYTE {
        return f64::NAN;
    }
    let value = positive_table()[magnitude as usize];
    if byte & 0x80 != 0 {
        -value
    } else {
        value
    }
}

/// Encode with round-to-nearest-even and saturation at ±448.
///
/// NaN encodes to the NaN byte; the sign of zero is preserved.
pub fn fp8_encode(x: f64) -> u8 {
    if x.is_nan() {
        return NAN_BYTE;
    }
    let sign = if x.is_sign_negative() { 0x80u8 } else { 0 };
    let a = x.abs();
    if a > FP8_MAX {
        return sign | MAX_NORMAL_BYTE;
    }
    let table = positive_table();
    // Position of the first table value >= a.
    let idx = table.partition_point(|&v| v < a);
    let code = if idx == 0 {
        0
    } else if idx > 126 {
        MAX_NORMAL_BYTE as usize
    } else {
        let lo = idx - 1;
        let hi = idx;
        let d_lo = a - table[lo];
        let d_hi = table[hi] - a;
        if d_lo < d_hi {
            lo
        } else if d_hi < d_lo {
            hi
        } else {
            // Tie: pick the code with even low bit.
            if lo & 1 == 0 {
                lo
            } else {
                hi
            }
        }
    } as u8;
    sign | code
}
