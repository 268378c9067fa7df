//! E2M1 element grid and E8Mk block-scale codes.
//!
//! Element codes use the OCP FP4 bit layout: bit 3 is the sign and bits 0..=2 index
//! the eight non-negative grid magnitudes in increasing order. Scale codes are a
//! signed power-of-two exponent plus an optional `M`-bit multiplicative mantissa,
//! `2^e · (1 + c / 2^M)`; `M = 0` is plain E8M0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Non-negative magnitudes of an 8-level sign-magnitude element format.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElementGrid {
    values: [f64; 8],
}

impl ElementGrid {
    /// The MXFP4 element set {0, 0.5, 1, 1.5, 2, 3, 4, 6}.
    pub const E2M1: ElementGrid = ElementGrid {
        values: [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0],
    };

    pub fn new(values: [f64; 8]) -> Result<Self> {
        let ok = values[0] == 0.0
            && values.iter().all(|v| v.is_finite())
            && values.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(Error::InvalidConfig(format!(
                "grid magnitudes must start at 0 and be strictly increasing: {values:?}"
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64; 8] {
        &self.values
    }

    pub fn q_max(&self) -> f64 {
        self.values[7]
    }

    pub fn q_min(&self) -> f64 {
        self.values[1]
    }

    /// Magnitude index nearest to `a >= 0`, saturating at the top of the grid.
    ///
    /// Exact midpoints resolve to the even index, so on E2M1 the ties
    /// 0.25, 0.75, 1.25, 1.75, 2.5, 3.5, 5 go to 0, 1, 1, 2, 2, 4, 4.
    fn nearest_index(&self, a: f64) -> u8 {
        for k in 0..7 {
            let mid = 0.5 * (self.values[k] + self.values[k + 1]);
            if a < mid {
                return k as u8;
            }
            if a == mid {
                return if k % 2 == 0 { k as u8 } else { k as u8 + 1 };
            }
        }
        7
    }

    /// Signed code whose magnitude is nearest to `u`. Saturates beyond `±q_max`.
    pub fn nearest_code(&self, u: f64) -> Result<GridCode> {
        if !u.is_finite() {
            return Err(Error::NonFinite(u));
        }
        let idx = self.nearest_index(u.abs());
        let sign = if u < 0.0 && idx != 0 { 0b1000 } else { 0 };
        Ok(GridCode(sign | idx))
    }

    pub fn decode(&self, code: GridCode) -> f64 {
        let mag = self.values[code.magnitude_index() as usize];
        // -0.0 is never produced so that zeros compare bitwise equal.
        if code.is_negative() && mag != 0.0 {
            -mag
        } else {
            mag
        }
    }
}

impl Default for ElementGrid {
    fn default() -> Self {
        Self::E2M1
    }
}

/// A 4-bit sign-magnitude element code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct GridCode(u8);

impl GridCode {
    pub const ZERO: GridCode = GridCode(0);

    pub fn from_bits(bits: u8) -> Result<Self> {
        if bits > 0x0f {
            return Err(Error::InvalidGridCode(bits));
        }
        Ok(Self(bits))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn magnitude_index(self) -> u8 {
        self.0 & 0b0111
    }

    pub fn is_negative(self) -> bool {
        self.0 & 0b1000 != 0
    }
}

/// E2M1 code nearest to `u` (ties to the even magnitude index, saturating at ±6).
pub fn nearest_grid_code(u: f64) -> Result<GridCode> {
    ElementGrid::E2M1.nearest_code(u)
}

/// Decodes a raw 4-bit E2M1 code.
pub fn decode_grid(bits: u8) -> Result<f64> {
    Ok(ElementGrid::E2M1.decode(GridCode::from_bits(bits)?))
}

pub const MAX_MANTISSA_BITS: u8 = 8;

/// Block scale `2^exponent · (1 + mantissa / 2^mantissa_bits)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScaleCode {
    pub exponent: i32,
    pub mantissa: u16,
    pub mantissa_bits: u8,
}

impl ScaleCode {
    /// The scale 1.0, used as the sentinel for all-zero blocks.
    pub const UNIT: ScaleCode = ScaleCode {
        exponent: 0,
        mantissa: 0,
        mantissa_bits: 0,
    };

    pub fn new(exponent: i32, mantissa: u16, mantissa_bits: u8) -> Result<Self> {
        if mantissa_bits > MAX_MANTISSA_BITS {
            return Err(Error::InvalidMantissaBits(mantissa_bits));
        }
        if u32::from(mantissa) >= 1u32 << mantissa_bits {
            return Err(Error::InvalidConfig(format!(
                "mantissa code {mantissa} does not fit in {mantissa_bits} bits"
            )));
        }
        Ok(Self {
            exponent,
            mantissa,
            mantissa_bits,
        })
    }

    pub fn decode(self) -> f64 {
        let frac = f64::from(self.mantissa) / f64::from(1u32 << self.mantissa_bits);
        pow2(self.exponent) * (1.0 + frac)
    }
}

/// Smallest E8Mk value that is `>= s_star`.
///
/// For `M = 0` this is exactly `2^⌈log2 s_star⌉`. Computed from the bit pattern so
/// it is exact for every positive finite input.
pub fn encode_scale_ceiling(s_star: f64, mantissa_bits: u8) -> Result<ScaleCode> {
    if mantissa_bits > MAX_MANTISSA_BITS {
        return Err(Error::InvalidMantissaBits(mantissa_bits));
    }
    if !(s_star.is_finite() && s_star > 0.0) {
        return Err(Error::InvalidScale(s_star));
    }
    let (mut exponent, significand) = split_pow2(s_star);
    let steps = 1u32 << mantissa_bits;
    // (significand - 1) * 2^M is exact: both factors are binary fractions in range.
    let mut code = ((significand - 1.0) * f64::from(steps)).ceil() as u32;
    if code == steps {
        exponent += 1;
        code = 0;
    }
    Ok(ScaleCode {
        exponent,
        mantissa: code as u16,
        mantissa_bits,
    })
}

/// `2^e` as an exact f64 (saturating to 0 / inf outside the representable range).
pub fn pow2(e: i32) -> f64 {
    if e > 1023 {
        f64::INFINITY
    } else if e >= -1022 {
        f64::from_bits(((e + 1023) as u64) << 52)
    } else if e >= -1074 {
        f64::from_bits(1u64 << (e + 1074))
    } else {
        0.0
    }
}

/// Splits positive finite `x` into `(e, f)` with `x = 2^e · f`, `f ∈ [1, 2)`.
pub(crate) fn split_pow2(x: f64) -> (i32, f64) {
    debug_assert!(x > 0.0 && x.is_finite());
    let bits = x.to_bits();
    let biased = ((bits >> 52) & 0x7ff) as i32;
    if biased == 0 {
        // Subnormal: renormalise first.
        let (e, f) = split_pow2(x * pow2(64));
        return (e - 64, f);
    }
    let f = f64::from_bits((bits & ((1u64 << 52) - 1)) | (1023u64 << 52));
    (biased - 1023, f)
}
