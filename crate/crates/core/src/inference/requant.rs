//! Exact int8 requantization.
//!
//! Every positive normal `f32` is `m * 2^e` with an integer mantissa
//! `m < 2^24`, so `acc * s_in * s_w / s_out` is a rational number that can
//! be rounded exactly with 128-bit integer arithmetic. No floating-point
//! multiplier is involved, so the result is bit-reproducible everywhere.

use super::Result;
use super::tensor::check_scale;

pub const QMAX: i32 = 127;

/// Maps an integer accumulator at scale `s_in * s_w` onto an int8 value at
/// scale `s_out`, rounding half away from zero and saturating to ±127.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Requantizer {
    numer: u64,
    denom: u32,
    shift: i32,
}

fn decompose(v: f32) -> (u32, i32) {
    let bits = v.to_bits();
    let exp = ((bits >> 23) & 0xff) as i32;
    let frac = bits & 0x7f_ffff;
    // normal numbers only (checked by callers)
    (frac | 0x80_0000, exp - 127 - 23)
}

impl Requantizer {
    pub fn new(input_scale: f32, weight_scale: f32, output_scale: f32) -> Result<Self> {
        check_scale(input_scale)?;
        check_scale(weight_scale)?;
        check_scale(output_scale)?;
        let (mi, ei) = decompose(input_scale);
        let (mw, ew) = decompose(weight_scale);
        let (mo, eo) = decompose(output_scale);
        Ok(Self {
            numer: mi as u64 * mw as u64,
            denom: mo,
            shift: ei + ew - eo,
        })
    }

    /// `round_half_away(acc * numer * 2^shift / denom)` clamped to [-127, 127].
    pub fn apply(&self, acc: i64) -> i8 {
        if acc == 0 {
            return 0;
        }
        let magnitude = acc.unsigned_abs() as u128 * self.numer as u128;
        let (n, d) = if self.shift >= 0 {
            match 1u128
                .checked_shl(self.shift as u32)
                .and_then(|p| magnitude.checked_mul(p))
            {
                Some(n) => (n, self.denom as u128),
                None => return saturate(acc),
            }
        } else {
            let sh = (-self.shift) as u32;
            // magnitude < 2^111 and denom >= 2^23: anything shifted this far rounds to 0
            if sh >= 89 {
                return 0;
            }
            (magnitude, (self.denom as u128) << sh)
        };
        let quot = n / d;
        if quot > QMAX as u128 {
            return saturate(acc);
        }
        let rem = n % d;
        let q = quot as i32 + i32::from(2 * rem >= d);
        let q = q.min(QMAX);
        if acc < 0 {
            -q as i8
        } else {
            q as i8
        }
    }
}

fn saturate(acc: i64) -> i8 {
    if acc < 0 {
        -QMAX as i8
    } else {
        QMAX as i8
    }
}

/// Round half away from zero, then clamp to the symmetric int8 range.
pub fn quantize_value(real: f64, scale: f32) -> i8 {
    let q = (real / scale as f64).round();
    q.clamp(-QMAX as f64, QMAX as f64) as i8
}
