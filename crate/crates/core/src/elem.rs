//! 16-bit element arithmetic.
//!
//! Matrix and vector elements are stored as raw 16-bit patterns and
//! interpreted through an [`ElemFormat`]. The datapath rounds every product
//! and every accumulator update to the element format, so all arithmetic here
//! goes through an f32 intermediate and rounds to nearest-even on the way
//! back. A value field of exactly 0.0 (either sign) is reserved as the
//! datapath no-op sentinel.

use half::{bf16, f16};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interpretation of the 16-bit element patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ElemFormat {
    /// 8-bit exponent, 7-bit mantissa (truncated f32). Default.
    #[default]
    Bf16,
    /// 5-bit exponent, 10-bit mantissa (IEEE binary16).
    Fp16,
}

impl ElemFormat {
    pub fn decode(self, bits: u16) -> f32 {
        match self {
            ElemFormat::Bf16 => bf16::from_bits(bits).to_f32(),
            ElemFormat::Fp16 => f16::from_bits(bits).to_f32(),
        }
    }

    pub fn encode_f32(self, v: f32) -> u16 {
        match self {
            ElemFormat::Bf16 => bf16::from_f32(v).to_bits(),
            ElemFormat::Fp16 => f16::from_f32(v).to_bits(),
        }
    }

    pub fn encode_f64(self, v: f64) -> u16 {
        match self {
            ElemFormat::Bf16 => bf16::from_f64(v).to_bits(),
            ElemFormat::Fp16 => f16::from_f64(v).to_bits(),
        }
    }

    /// Product rounded to the element format.
    pub fn mul(self, a: u16, b: u16) -> u16 {
        self.encode_f32(self.decode(a) * self.decode(b))
    }

    /// Sum rounded to the element format.
    pub fn add(self, a: u16, b: u16) -> u16 {
        self.encode_f32(self.decode(a) + self.decode(b))
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bf16" => Ok(ElemFormat::Bf16),
            "fp16" | "f16" => Ok(ElemFormat::Fp16),
            other => Err(Error::invalid(format!(
                "unknown element format {other:?} (expected bf16 or fp16)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ElemFormat::Bf16 => "bf16",
            ElemFormat::Fp16 => "fp16",
        }
    }
}

/// True for the two signed-zero patterns, which the datapath treats as the
/// "no multiply, no eFIFO pop" sentinel.
pub fn is_zero_pattern(bits: u16) -> bool {
    bits & 0x7fff == 0
}

/// Canonical sentinel pattern written into value fields that carry no cell.
pub const SENTINEL: u16 = 0;
