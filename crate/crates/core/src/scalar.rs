//! Lane element types.
//!
//! Every floating-point computation in the interpreter, the constant folder and
//! the host VM goes through [`Element`], so the three execution paths agree
//! bit-for-bit on results.

use std::fmt::Debug;

use num_traits::Float;

use crate::guest::ArithOp;

/// Floating-point element stored in a vector lane or scalar FP register.
pub trait Element: Float + Debug + Default + Send + Sync + 'static {
    /// Width of one element in bytes.
    const BYTES: usize;

    /// Decode from the low bits of a register image.
    fn from_bits64(bits: u64) -> Self;

    /// Encode into a zero-extended register image.
    fn to_bits64(self) -> u64;

    fn read_le(bytes: &[u8]) -> Self {
        let mut raw = [0u8; 8];
        raw[..Self::BYTES].copy_from_slice(&bytes[..Self::BYTES]);
        Self::from_bits64(u64::from_le_bytes(raw))
    }

    fn write_le(self, bytes: &mut [u8]) {
        let raw = self.to_bits64().to_le_bytes();
        bytes[..Self::BYTES].copy_from_slice(&raw[..Self::BYTES]);
    }
}

impl Element for f32 {
    const BYTES: usize = 4;

    fn from_bits64(bits: u64) -> Self {
        f32::from_bits(bits as u32)
    }

    fn to_bits64(self) -> u64 {
        self.to_bits() as u64
    }
}

impl Element for f64 {
    const BYTES: usize = 8;

    fn from_bits64(bits: u64) -> Self {
        f64::from_bits(bits)
    }

    fn to_bits64(self) -> u64 {
        self.to_bits()
    }
}

/// Error raised by a single arithmetic step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DivideByZero;

/// Applies `op` to two elements. Division by an exact zero is an error rather
/// than an infinity, matching the interpreter's fault model.
pub fn apply<T: Element>(op: ArithOp, a: T, b: T) -> Result<T, DivideByZero> {
    Ok(match op {
        ArithOp::Add => a + b,
        ArithOp::Sub => a - b,
        ArithOp::Mul => a * b,
        ArithOp::Div => {
            if b == T::zero() {
                return Err(DivideByZero);
            }
            a / b
        }
    })
}

/// Bit-level variant of [`apply`] used where the element type is only known at
/// run time.
pub fn apply_bits<T: Element>(op: ArithOp, a: u64, b: u64) -> Result<u64, DivideByZero> {
    apply(op, T::from_bits64(a), T::from_bits64(b)).map(T::to_bits64)
}

/// 32-bit wrapping integer arithmetic on sign-extended register values.
pub fn apply_i32(op: ArithOp, a: i64, b: i64) -> Result<i64, DivideByZero> {
    let (a, b) = (a as i32, b as i32);
    let r = match op {
        ArithOp::Add => a.wrapping_add(b),
        ArithOp::Sub => a.wrapping_sub(b),
        ArithOp::Mul => a.wrapping_mul(b),
        ArithOp::Div => {
            if b == 0 {
                return Err(DivideByZero);
            }
            a.wrapping_div(b)
        }
    };
    Ok(r as i64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bits_round_trip_is_zero_extended() {
        let bits = 1.5f32.to_bits64();
        assert_eq!(bits >> 32, 0);
        assert_eq!(f32::from_bits64(bits), 1.5);
    }

    #[test]
    fn float_division_by_zero_is_reported() {
        assert_eq!(apply(ArithOp::Div, 1.0f64, 0.0), Err(DivideByZero));
        assert_eq!(apply(ArithOp::Div, 1.0f64, -0.0), Err(DivideByZero));
        assert_eq!(apply(ArithOp::Div, 3.0f32, 2.0), Ok(1.5));
    }

    #[test]
    fn i32_ops_wrap() {
        assert_eq!(apply_i32(ArithOp::Add, i32::MAX as i64, 1).unwrap(), i32::MIN as i64);
        assert_eq!(apply_i32(ArithOp::Div, i32::MIN as i64, -1).unwrap(), i32::MIN as i64);
        assert!(apply_i32(ArithOp::Div, 4, 0).is_err());
    }

    #[test]
    fn le_codec_matches_width() {
        let mut buf = [0xAAu8; 8];
        2.0f32.write_le(&mut buf);
        assert_eq!(&buf[4..], &[0xAA; 4]);
        assert_eq!(f32::read_le(&buf), 2.0);
    }
}
