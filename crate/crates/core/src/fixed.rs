// SPDX-License-Identifier: Apache-2.0

//! Signed 8-bit fixed-point weights and the 24-bit accumulator they feed.
//!
//! Weights are stored as raw two's-complement bytes; a raw value `r` with
//! `frac_bits = f` decodes to `r * 2^-f`. Membrane potentials and synaptic
//! sums share the same scale but live in a wider register, see [`ACC_BITS`].

use crate::error::{config, CoreError, Result};

/// Width of the membrane / class accumulator register.
pub const ACC_BITS: u32 = 24;
pub const ACC_MAX: i64 = (1 << (ACC_BITS - 1)) - 1;
pub const ACC_MIN: i64 = -(1 << (ACC_BITS - 1));

/// Clamp `v` into the accumulator range. The flag is set when clamping happened.
#[inline]
pub fn saturate_acc(v: i64) -> (i64, bool) {
    if v > ACC_MAX {
        (ACC_MAX, true)
    } else if v < ACC_MIN {
        (ACC_MIN, true)
    } else {
        (v, false)
    }
}

/// Signed 8-bit fixed point with a configurable binary point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FixedPointFormat {
    frac_bits: u8,
}

impl FixedPointFormat {
    pub const TOTAL_BITS: u32 = 8;

    pub fn new(frac_bits: u8) -> Result<Self> {
        if frac_bits > 7 {
            return config(format!("frac_bits must be in [0, 7], got {frac_bits}"));
        }
        Ok(Self { frac_bits })
    }

    pub fn frac_bits(self) -> u8 {
        self.frac_bits
    }

    /// Raw value of 1.0 in accumulator units.
    pub fn unit(self) -> i64 {
        1 << self.frac_bits
    }

    pub fn min_value(self) -> f64 {
        -(2f64.powi(7 - self.frac_bits as i32))
    }

    pub fn max_value(self) -> f64 {
        2f64.powi(7 - self.frac_bits as i32) - 2f64.powi(-(self.frac_bits as i32))
    }

    pub fn decode(self, raw: i8) -> f64 {
        raw as f64 * 2f64.powi(-(self.frac_bits as i32))
    }
}

impl Default for FixedPointFormat {
    fn default() -> Self {
        Self { frac_bits: 4 }
    }
}

/// Round half away from zero, then saturate into the signed 8-bit range.
/// NaN maps to zero.
pub fn quantize(value: f64, format: FixedPointFormat) -> i8 {
    if value.is_nan() {
        return 0;
    }
    let scaled = (value * 2f64.powi(format.frac_bits as i32)).round();
    scaled.clamp(i8::MIN as f64, i8::MAX as f64) as i8
}

/// Dense row-major tensor of raw 8-bit fixed-point values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixedTensor {
    shape: Vec<usize>,
    format: FixedPointFormat,
    values: Vec<i8>,
}

impl FixedTensor {
    pub fn new(shape: Vec<usize>, format: FixedPointFormat, values: Vec<i8>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(CoreError::Config(format!(
                "tensor shape {shape:?} needs {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Self {
            shape,
            format,
            values,
        })
    }

    pub fn zeros(shape: Vec<usize>, format: FixedPointFormat) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            format,
            values: vec![0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn format(&self) -> FixedPointFormat {
        self.format
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [i8] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Row-major flat offset; `None` when the index rank or any coordinate is out of range.
    pub fn offset(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            if i >= d {
                return None;
            }
            off = off * d + i;
        }
        Some(off)
    }

    pub fn get(&self, index: &[usize]) -> Option<i8> {
        self.offset(index).map(|o| self.values[o])
    }

    /// Real value of the element at flat offset `i`.
    pub fn decode(&self, i: usize) -> f64 {
        self.format.decode(self.values[i])
    }
}

/// Dense `[channel][y][x]` map of widened synaptic sums (raw accumulator units).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SumTensor {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<i64>,
}

impl SumTensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            values: vec![0; channels * height * width],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        debug_assert!(c < self.channels && y < self.height && x < self.width);
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> i64 {
        self.values[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: i64) {
        let i = self.index(c, y, x);
        self.values[i] = v;
    }

    #[inline]
    pub fn add(&mut self, c: usize, y: usize, x: usize, v: i64) {
        let i = self.index(c, y, x);
        self.values[i] += v;
    }

    pub fn values(&self) -> &[i64] {
        &self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn f4() -> FixedPointFormat {
        FixedPointFormat::new(4).unwrap()
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(0.0, f4()), 0);
        let r = quantize(3.0 / 16.0, f4());
        assert_eq!(r, 3);
        assert_eq!(f4().decode(r), 0.1875);
        assert_eq!(quantize(100.0, f4()), 127);
        assert_eq!(quantize(-100.0, f4()), -128);
        assert_eq!(quantize(f64::NAN, f4()), 0);
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        // 0.5 LSB on either side of zero
        assert_eq!(quantize(1.0 / 32.0, f4()), 1);
        assert_eq!(quantize(-1.0 / 32.0, f4()), -1);
        assert_eq!(quantize(3.0 / 32.0, f4()), 2);
    }

    #[test]
    fn representable_range() {
        let f = f4();
        assert_eq!(f.min_value(), -8.0);
        assert_eq!(f.max_value(), 8.0 - 1.0 / 16.0);
        assert_eq!(f.decode(127), f.max_value());
        assert_eq!(f.decode(-128), f.min_value());
        assert!(FixedPointFormat::new(8).is_err());
    }

    #[test]
    fn tensor_shape_checked() {
        assert!(FixedTensor::new(vec![2, 3], f4(), vec![0; 5]).is_err());
        let t = FixedTensor::new(vec![2, 3], f4(), (0..6).collect()).unwrap();
        assert_eq!(t.get(&[1, 2]), Some(5));
        assert_eq!(t.get(&[2, 0]), None);
    }

    #[test]
    fn accumulator_saturates() {
        assert_eq!(saturate_acc(ACC_MAX + 1), (ACC_MAX, true));
        assert_eq!(saturate_acc(ACC_MIN - 5), (ACC_MIN, true));
        assert_eq!(saturate_acc(-3), (-3, false));
    }

    proptest! {
        #[test]
        fn quantize_decode_round_trip(raw in any::<i8>(), frac in 0u8..=7) {
            let f = FixedPointFormat::new(frac).unwrap();
            prop_assert_eq!(quantize(f.decode(raw), f), raw);
        }

        #[test]
        fn quantize_is_monotone(a in -300.0f64..300.0, b in -300.0f64..300.0, frac in 0u8..=7) {
            let f = FixedPointFormat::new(frac).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(quantize(lo, f) <= quantize(hi, f));
        }
    }
}
