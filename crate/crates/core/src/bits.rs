//! Fixed-length bit strings used for seeds, labels and generator outputs.
//!
//! A string of length `len` is stored in the low `len` bits of a `u128`,
//! first bit most significant. Prefixes, suffixes and concatenation follow
//! that order, so `x || y` reads `x` first.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_BITS: usize = 128;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BitString {
    value: u128,
    len: u8,
}

fn mask(len: usize) -> u128 {
    if len >= 128 {
        u128::MAX
    } else {
        (1u128 << len) - 1
    }
}

impl BitString {
    pub const EMPTY: BitString = BitString { value: 0, len: 0 };

    /// Builds a string of `len` bits from the low bits of `value`.
    pub fn new(value: u128, len: usize) -> Result<Self> {
        if len > MAX_BITS {
            return Err(Error::input(format!(
                "bit strings are limited to {MAX_BITS} bits, got {len}"
            )));
        }
        if value & !mask(len) != 0 {
            return Err(Error::input(format!(
                "value {value} does not fit in {len} bits"
            )));
        }
        Ok(BitString {
            value,
            len: len as u8,
        })
    }

    /// Like [`BitString::new`] but truncates `value` to `len` bits.
    pub fn truncate(value: u128, len: usize) -> Self {
        assert!(len <= MAX_BITS, "bit string too long: {len}");
        BitString {
            value: value & mask(len),
            len: len as u8,
        }
    }

    pub fn zeros(len: usize) -> Self {
        Self::truncate(0, len)
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn value(&self) -> u128 {
        self.value
    }

    /// Bit at position `i`, counted from the front.
    pub fn bit(&self, i: usize) -> bool {
        assert!(i < self.len(), "bit index {i} out of range");
        (self.value >> (self.len() - 1 - i)) & 1 == 1
    }

    pub fn prefix(&self, len: usize) -> Self {
        assert!(len <= self.len(), "prefix {len} longer than {}", self.len);
        BitString {
            value: if len == 0 {
                0
            } else {
                self.value >> (self.len() - len)
            },
            len: len as u8,
        }
    }

    pub fn suffix(&self, len: usize) -> Self {
        assert!(len <= self.len(), "suffix {len} longer than {}", self.len);
        BitString {
            value: self.value & mask(len),
            len: len as u8,
        }
    }

    /// Substring `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        self.prefix(start + len).suffix(len)
    }

    pub fn concat(&self, other: &BitString) -> Result<Self> {
        let len = self.len() + other.len();
        if len > MAX_BITS {
            return Err(Error::input(format!(
                "concatenation of {} and {} bits exceeds {MAX_BITS}",
                self.len, other.len
            )));
        }
        let value = if other.len() == 128 {
            other.value
        } else {
            (self.value << other.len()) | other.value
        };
        Ok(BitString {
            value,
            len: len as u8,
        })
    }

    /// Appends zero bits at the end (used to pad seeds).
    pub fn pad_to(&self, len: usize) -> Self {
        assert!(len >= self.len());
        let extra = len - self.len();
        BitString::truncate(if extra >= 128 { 0 } else { self.value << extra }, len)
    }

    /// The `index`-th chunk of `width` bits, read as an unsigned integer.
    pub fn chunk(&self, index: usize, width: usize) -> usize {
        self.slice(index * width, width).value as usize
    }

    /// All strings of length `len` in increasing order.
    pub fn all(len: usize) -> impl Iterator<Item = BitString> + Clone {
        assert!(len < 64, "refusing to enumerate 2^{len} strings");
        (0..(1u128 << len)).map(move |v| BitString::truncate(v, len))
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("-");
        }
        for i in 0..self.len() {
            f.write_str(if self.bit(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "b\"{self}\"")
    }
}

impl FromStr for BitString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "-" {
            return Ok(BitString::EMPTY);
        }
        if s.len() > MAX_BITS {
            return Err(Error::input(format!("bit string longer than {MAX_BITS}")));
        }
        let mut value = 0u128;
        for c in s.chars() {
            value = (value << 1)
                | match c {
                    '0' => 0,
                    '1' => 1,
                    other => return Err(Error::input(format!("invalid bit character {other:?}"))),
                };
        }
        BitString::new(value, s.len())
    }
}
