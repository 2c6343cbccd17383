// SPDX-License-Identifier: Apache-2.0

//! Bit-packed binary spike maps.

use rand::Rng;

use crate::error::{CoreError, Result};

/// Channel/height/width triple.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape3 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape3 {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Spatial positions per channel.
    pub fn tokens(&self) -> usize {
        self.height * self.width
    }
}

impl std::fmt::Display for Shape3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Binary activation map, row-major `[c][h][w]`, packed 64 spikes per word.
///
/// Bits past `len()` in the last word are always zero.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SpikeTensor {
    shape: Shape3,
    words: Vec<u64>,
}

impl std::fmt::Debug for SpikeTensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SpikeTensor({}, {} spikes)", self.shape, self.total_spikes())
    }
}

impl SpikeTensor {
    pub fn zeros(shape: Shape3) -> Self {
        Self {
            shape,
            words: vec![0; shape.len().div_ceil(64)],
        }
    }

    pub fn ones(shape: Shape3) -> Self {
        Self::from_fn(shape, |_, _, _| true)
    }

    pub fn from_fn(shape: Shape3, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut t = Self::zeros(shape);
        for c in 0..shape.channels {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    if f(c, y, x) {
                        t.set(c, y, x, true);
                    }
                }
            }
        }
        t
    }

    /// Bernoulli map: each element fires with probability `density`.
    pub fn random<R: Rng + ?Sized>(shape: Shape3, density: f64, rng: &mut R) -> Self {
        let d = density.clamp(0.0, 1.0);
        Self::from_fn(shape, |_, _, _| rng.gen_bool(d))
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn len(&self) -> usize {
        self.shape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    fn flat(&self, c: usize, y: usize, x: usize) -> usize {
        debug_assert!(c < self.shape.channels && y < self.shape.height && x < self.shape.width);
        (c * self.shape.height + y) * self.shape.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> bool {
        self.get_flat(self.flat(c, y, x))
    }

    #[inline]
    pub fn get_flat(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: bool) {
        let i = self.flat(c, y, x);
        self.set_flat(i, v);
    }

    #[inline]
    pub fn set_flat(&mut self, i: usize, v: bool) {
        let mask = 1u64 << (i % 64);
        if v {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    /// Number of 1-bits.
    pub fn total_spikes(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn channel_spikes(&self, c: usize) -> u64 {
        let per = self.shape.tokens();
        (c * per..(c + 1) * per).filter(|&i| self.get_flat(i)).count() as u64
    }

    /// Coordinates of every spike in channel-major raster order.
    pub fn iter_spikes(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let (h, w) = (self.shape.height, self.shape.width);
        self.words.iter().enumerate().flat_map(move |(wi, &word)| {
            let mut bits = word;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let b = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                let i = wi * 64 + b;
                Some((i / (h * w), (i / w) % h, i % w))
            })
        })
    }

    pub fn and(&self, other: &Self) -> Result<Self> {
        self.zip_words(other, |a, b| a & b)
    }

    pub fn or(&self, other: &Self) -> Result<Self> {
        self.zip_words(other, |a, b| a | b)
    }

    fn zip_words(&self, other: &Self, f: impl Fn(u64, u64) -> u64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(CoreError::Config(format!(
                "spike shape mismatch: {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(Self {
            shape: self.shape,
            words: self.words.iter().zip(&other.words).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// Pack as bytes, LSB-first within each byte, `ceil(len / 8)` bytes.
    pub fn to_packed_bytes(&self) -> Vec<u8> {
        let n = self.len().div_ceil(8);
        (0..n).map(|b| (self.words[b / 8] >> ((b % 8) * 8)) as u8).collect()
    }

    pub fn from_packed_bytes(shape: Shape3, bytes: &[u8]) -> Result<Self> {
        let need = shape.len().div_ceil(8);
        if bytes.len() != need {
            return Err(CoreError::Config(format!(
                "bitmap for {shape} needs {need} bytes, got {}",
                bytes.len()
            )));
        }
        let mut t = Self::zeros(shape);
        for (b, &byte) in bytes.iter().enumerate() {
            t.words[b / 8] |= (byte as u64) << ((b % 8) * 8);
        }
        let tail = shape.len() % 64;
        if tail != 0 {
            let last = t.words.len() - 1;
            if t.words[last] >> tail != 0 {
                return Err(CoreError::Config("padding bits past the map are set".into()));
            }
        }
        Ok(t)
    }
}

/// Number of 1-bits in `t`.
pub fn total_spikes(t: &SpikeTensor) -> u64 {
    t.total_spikes()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const S: Shape3 = Shape3::new(3, 4, 4);

    #[test]
    fn zero_and_full_counts() {
        assert_eq!(total_spikes(&SpikeTensor::zeros(S)), 0);
        assert_eq!(total_spikes(&SpikeTensor::ones(S)), 48);
    }

    #[test]
    fn random_count_matches_element_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for density in [0.05, 0.3, 0.9] {
            let t = SpikeTensor::random(Shape3::new(5, 11, 13), density, &mut rng);
            let mut naive = 0;
            for c in 0..5 {
                for y in 0..11 {
                    for x in 0..13 {
                        naive += t.get(c, y, x) as u64;
                    }
                }
            }
            assert_eq!(t.total_spikes(), naive);
        }
    }

    #[test]
    fn iter_spikes_is_raster_order() {
        let mut t = SpikeTensor::zeros(S);
        t.set(2, 0, 1, true);
        t.set(0, 3, 3, true);
        t.set(0, 1, 0, true);
        let v: Vec<_> = t.iter_spikes().collect();
        assert_eq!(v, vec![(0, 1, 0), (0, 3, 3), (2, 0, 1)]);
    }

    #[test]
    fn packed_rejects_padding_bits() {
        let shape = Shape3::new(1, 1, 3);
        assert!(SpikeTensor::from_packed_bytes(shape, &[0b0000_0101]).is_ok());
        assert!(SpikeTensor::from_packed_bytes(shape, &[0b0000_1101]).is_err());
        assert!(SpikeTensor::from_packed_bytes(shape, &[]).is_err());
    }

    proptest! {
        #[test]
        fn count_is_additive_over_channels(seed in any::<u64>(), d in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = SpikeTensor::random(Shape3::new(4, 7, 9), d, &mut rng);
            let per: u64 = (0..4).map(|c| t.channel_spikes(c)).sum();
            prop_assert_eq!(per, t.total_spikes());
        }

        #[test]
        fn packed_bytes_round_trip(seed in any::<u64>(), c in 1usize..4, h in 1usize..9, w in 1usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = SpikeTensor::random(Shape3::new(c, h, w), 0.4, &mut rng);
            let back = SpikeTensor::from_packed_bytes(t.shape(), &t.to_packed_bytes()).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
