//! Finite binary strings.
//!
//! Bit order is fixed everywhere: when a string is read as an integer (a table
//! row, column or color) the first bit is the most significant one, and when a
//! string is packed into bytes the first bit lands in the high bit of byte 0.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// A finite sequence of bits.
#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct BitString {
    bits: Vec<bool>,
}

impl BitString {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn zeros(len: usize) -> Self {
        BitString {
            bits: vec![false; len],
        }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        BitString { bits }
    }

    /// The `width`-bit big-endian rendering of `value`. `value` must fit.
    pub fn from_u64(value: u64, width: u32) -> Result<Self> {
        if width < 64 && value >> width != 0 {
            return Err(Error::OutOfRange {
                what: "value",
                value,
                limit: 1u64 << width,
            });
        }
        let bits = (0..width)
            .rev()
            .map(|k| k < 64 && (value >> k) & 1 == 1)
            .collect();
        Ok(BitString { bits })
    }

    /// Unpacks `len` bits from `bytes`, most significant bit of each byte first.
    pub fn from_bytes(bytes: &[u8], len: usize) -> Result<Self> {
        if len > bytes.len() * 8 {
            return Err(Error::invalid(format!(
                "{len} bits requested from {} bytes",
                bytes.len()
            )));
        }
        let bits = (0..len)
            .map(|i| (bytes[i / 8] >> (7 - i % 8)) & 1 == 1)
            .collect();
        Ok(BitString { bits })
    }

    /// Packs the bits most significant bit first, zero-padding the last byte.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.bits.len().div_ceil(8)];
        for (i, &b) in self.bits.iter().enumerate() {
            if b {
                out[i / 8] |= 0x80 >> (i % 8);
            }
        }
        out
    }

    /// The string read as an unsigned integer, written big-endian into
    /// `ceil(len/8)` bytes (leading padding bits are zero).
    pub fn to_index_bytes(&self) -> Vec<u8> {
        let nbytes = self.bits.len().div_ceil(8);
        let pad = nbytes * 8 - self.bits.len();
        let mut out = vec![0u8; nbytes];
        for (i, &b) in self.bits.iter().enumerate() {
            if b {
                let p = i + pad;
                out[p / 8] |= 0x80 >> (p % 8);
            }
        }
        out
    }

    /// Integer value, most significant bit first. Fails above 64 bits.
    pub fn to_u64(&self) -> Result<u64> {
        if self.bits.len() > 64 {
            return Err(Error::TooLarge(format!(
                "{}-bit string does not fit in 64 bits",
                self.bits.len()
            )));
        }
        Ok(self.bits.iter().fold(0u64, |acc, &b| (acc << 1) | b as u64))
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<bool> {
        self.bits.get(i).copied()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    pub fn push(&mut self, bit: bool) {
        self.bits.push(bit);
    }

    pub fn extend_from(&mut self, other: &BitString) {
        self.bits.extend_from_slice(&other.bits);
    }

    pub fn concat(&self, other: &BitString) -> BitString {
        let mut bits = Vec::with_capacity(self.len() + other.len());
        bits.extend_from_slice(&self.bits);
        bits.extend_from_slice(&other.bits);
        BitString { bits }
    }

    pub fn slice(&self, start: usize, end: usize) -> BitString {
        BitString {
            bits: self.bits[start..end].to_vec(),
        }
    }

    pub fn truncated(&self, len: usize) -> BitString {
        self.slice(0, len.min(self.len()))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString({self})")
    }
}

impl FromStr for BitString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::invalid(format!("not a bit: {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(BitString::from_bits)
    }
}

impl FromIterator<bool> for BitString {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        BitString {
            bits: iter.into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn msb_first_integer_reading() {
        let x: BitString = "000000000001".parse().unwrap();
        assert_eq!(x.to_u64().unwrap(), 1);
        let y: BitString = "100000000000".parse().unwrap();
        assert_eq!(y.to_u64().unwrap(), 1 << 11);
        assert_eq!(BitString::from_u64(5, 4).unwrap().to_string(), "0101");
    }

    #[test]
    fn byte_packing_pads_the_tail() {
        let x: BitString = "1010000011".parse().unwrap();
        assert_eq!(x.to_bytes(), vec![0b1010_0000, 0b1100_0000]);
        assert_eq!(x.to_index_bytes(), vec![0b0000_0010, 0b1000_0011]);
    }

    #[test]
    fn from_u64_rejects_overflow() {
        assert!(BitString::from_u64(16, 4).is_err());
        assert!(BitString::from_u64(u64::MAX, 64).is_ok());
    }

    #[test]
    fn too_short_byte_buffer() {
        assert!(BitString::from_bytes(&[0xff], 9).is_err());
    }

    proptest! {
        #[test]
        fn bytes_round_trip(bits in proptest::collection::vec(any::<bool>(), 0..200)) {
            let x = BitString::from_bits(bits);
            let back = BitString::from_bytes(&x.to_bytes(), x.len()).unwrap();
            prop_assert_eq!(back, x);
        }

        #[test]
        fn index_bytes_match_integer_value(v in any::<u64>(), width in 1u32..=64) {
            let v = if width == 64 { v } else { v & ((1u64 << width) - 1) };
            let x = BitString::from_u64(v, width).unwrap();
            prop_assert_eq!(x.to_u64().unwrap(), v);
            let mut be = [0u8; 8];
            let ib = x.to_index_bytes();
            be[8 - ib.len()..].copy_from_slice(&ib);
            prop_assert_eq!(u64::from_be_bytes(be), v);
        }
    }
}
