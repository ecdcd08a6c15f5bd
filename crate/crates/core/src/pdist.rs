//! Finite pseudodistributions: weighted lists of output strings whose
//! realized matrix on a program segment is `E_i[coeff_i * M^{string_i}]`.
//!
//! Scaling, union and concatenation mirror scaling, addition and
//! multiplication of realized matrices.

use std::fmt::Write as _;

use num_bigint::BigInt;
use num_traits::{One, Zero};

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::mat::{fmt_q, parse_q, Mat, Q};
use crate::robp::Robp;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PseudoDist {
    out_len: usize,
    entries: Vec<(BitString, Q)>,
}

impl PseudoDist {
    pub fn new(out_len: usize, entries: Vec<(BitString, Q)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::input("a pseudodistribution needs at least one entry"));
        }
        if let Some((s, _)) = entries.iter().find(|(s, _)| s.len() != out_len) {
            return Err(Error::input(format!(
                "entry {s} has {} bits, expected {out_len}",
                s.len()
            )));
        }
        Ok(PseudoDist { out_len, entries })
    }

    pub fn single(s: BitString, coeff: Q) -> Self {
        PseudoDist {
            out_len: s.len(),
            entries: vec![(s, coeff)],
        }
    }

    /// Every string of length `out_len` with coefficient 1.
    pub fn uniform(out_len: usize) -> Self {
        PseudoDist {
            out_len,
            entries: BitString::all(out_len).map(|s| (s, Q::one())).collect(),
        }
    }

    pub fn out_len(&self) -> usize {
        self.out_len
    }

    pub fn size(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(BitString, Q)] {
        &self.entries
    }

    /// `E_i[coeff_i * M_{a..b}^{string_i}]`.
    pub fn realize(&self, robp: &Robp, a: usize, b: usize) -> Result<Mat<Q>> {
        if b < a || self.out_len != (b - a) * robp.d_step() {
            return Err(Error::input(format!(
                "pseudodistribution of {} bits cannot be realized on segment {a}..{b} with {} bits per step",
                self.out_len,
                robp.d_step()
            )));
        }
        let w = robp.width();
        let mut acc = Mat::<Q>::zeros(w);
        for (s, c) in &self.entries {
            if c.is_zero() {
                continue;
            }
            for (i, j) in robp.walk(a, b, s)?.into_iter().enumerate() {
                let cur = acc.get(i, j).clone();
                acc.set(i, j, cur + c);
            }
        }
        Ok(acc.div_int(self.size() as u64))
    }

    /// Same strings, coefficients multiplied by `c`.
    pub fn scale(&self, c: &Q) -> Self {
        PseudoDist {
            out_len: self.out_len,
            entries: self
                .entries
                .iter()
                .map(|(s, v)| (*s, v * c))
                .collect(),
        }
    }

    /// Realizes the sum of both realized matrices: the `self` block is
    /// reweighted by `(S_A + S_B) / S_A`, the `other` block by `(S_A + S_B) / S_B`.
    pub fn union(&self, other: &PseudoDist) -> Result<Self> {
        if self.out_len != other.out_len {
            return Err(Error::input(format!(
                "union of {}-bit and {}-bit pseudodistributions",
                self.out_len, other.out_len
            )));
        }
        let (sa, sb) = (self.size() as i64, other.size() as i64);
        let total = BigInt::from(sa + sb);
        let wa = Q::new(total.clone(), BigInt::from(sa));
        let wb = Q::new(total, BigInt::from(sb));
        let entries = self
            .entries
            .iter()
            .map(|(s, v)| (*s, v * &wa))
            .chain(other.entries.iter().map(|(s, v)| (*s, v * &wb)))
            .collect();
        Ok(PseudoDist {
            out_len: self.out_len,
            entries,
        })
    }

    /// Row-major product bundle: index `a * S_B + b` holds `F_A(a) || F_B(b)`
    /// with coefficient `coeff_A(a) * coeff_B(b)`.
    pub fn concat(&self, other: &PseudoDist) -> Result<Self> {
        let mut entries = Vec::with_capacity(self.size() * other.size());
        for (sa, ca) in &self.entries {
            for (sb, cb) in &other.entries {
                entries.push((sa.concat(sb)?, ca * cb));
            }
        }
        Ok(PseudoDist {
            out_len: self.out_len + other.out_len,
            entries,
        })
    }

    /// One line per entry: `bitstring num/den`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (s, c) in &self.entries {
            let _ = writeln!(out, "{s} {}", fmt_q(c));
        }
        out
    }

    pub fn parse_dump(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut out_len = None;
        for (lno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            let parse_err = |field: usize, message: String| Error::Parse {
                line: lno + 1,
                field,
                message,
            };
            let s: BitString = fields
                .next()
                .unwrap_or("")
                .parse()
                .map_err(|e: Error| parse_err(1, e.to_string()))?;
            let c = parse_q(fields.next().ok_or_else(|| parse_err(2, "missing coefficient".into()))?)
                .map_err(|e| parse_err(2, e.to_string()))?;
            if fields.next().is_some() {
                return Err(parse_err(3, "trailing field".into()));
            }
            if *out_len.get_or_insert(s.len()) != s.len() {
                return Err(parse_err(1, "strings must all have the same length".into()));
            }
            entries.push((s, c));
        }
        PseudoDist::new(out_len.unwrap_or(0), entries)
    }
}
