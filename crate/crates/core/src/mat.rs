//! Dense square matrices over exact rationals, integers or floats, plus the
//! infinity norm everything is measured in.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exact rational scalar used by every verification path.
pub type Q = BigRational;

/// Scalars a matrix can hold.
pub trait Scalar:
    Clone
    + fmt::Debug
    + PartialOrd
    + Zero
    + One
    + Signed
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + Send
    + Sync
    + 'static
{
    /// `num / 2^log2_den`.
    fn from_dyadic(num: i64, log2_den: u32) -> Self;
    fn from_q(q: &Q) -> Self;
    fn to_f64(&self) -> f64;
    /// Division by a positive integer.
    fn div_int(&self, den: u64) -> Self;
}

impl Scalar for Q {
    fn from_dyadic(num: i64, log2_den: u32) -> Self {
        Q::new(BigInt::from(num), BigInt::one() << log2_den)
    }

    fn from_q(q: &Q) -> Self {
        q.clone()
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }

    fn div_int(&self, den: u64) -> Self {
        self / Q::from_integer(BigInt::from(den))
    }
}

impl Scalar for f64 {
    fn from_dyadic(num: i64, log2_den: u32) -> Self {
        num as f64 / 2f64.powi(log2_den as i32)
    }

    fn from_q(q: &Q) -> Self {
        ToPrimitive::to_f64(q).unwrap_or(f64::NAN)
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn div_int(&self, den: u64) -> Self {
        self / den as f64
    }
}

/// Integer shorthand for rationals.
pub fn q(num: i64) -> Q {
    Q::from_integer(BigInt::from(num))
}

pub fn qr(num: i64, den: i64) -> Q {
    Q::new(BigInt::from(num), BigInt::from(den))
}

/// `2^-bits` as an exact rational.
pub fn pow2_neg(bits: u32) -> Q {
    Q::new(BigInt::one(), BigInt::one() << bits)
}

pub fn pow2(bits: u32) -> Q {
    Q::from_integer(BigInt::one() << bits)
}

pub fn qpow(base: &Q, exp: u32) -> Q {
    let mut acc = Q::one();
    for _ in 0..exp {
        acc = &acc * base;
    }
    acc
}

/// Formats a rational as `num/den` (or `num` when integral).
pub fn fmt_q(x: &Q) -> String {
    if x.is_integer() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

pub fn parse_q(s: &str) -> Result<Q> {
    let bad = || Error::input(format!("not a rational: {s:?}"));
    match s.split_once('/') {
        Some((n, d)) => {
            let n: BigInt = n.trim().parse().map_err(|_| bad())?;
            let d: BigInt = d.trim().parse().map_err(|_| bad())?;
            if d.is_zero() {
                return Err(bad());
            }
            Ok(Q::new(n, d))
        }
        None => Ok(Q::from_integer(s.trim().parse().map_err(|_| bad())?)),
    }
}

/// Serde adapter writing rationals as `"num/den"` strings.
pub mod q_str {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &Q, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&fmt_q(x))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Q, D::Error> {
        let s = String::deserialize(d)?;
        parse_q(&s).map_err(serde::de::Error::custom)
    }
}

/// Optional-rational variant of [`q_str`].
pub mod opt_q_str {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &Option<Q>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match x {
            Some(v) => s.serialize_some(&fmt_q(v)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Q>, D::Error> {
        let s = Option::<String>::deserialize(d)?;
        s.map(|v| parse_q(&v).map_err(serde::de::Error::custom))
            .transpose()
    }
}

/// A `dim x dim` matrix stored row-major.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Mat<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Clone + Zero + One> Mat<T> {
    pub fn zeros(dim: usize) -> Self {
        Mat {
            dim,
            data: vec![T::zero(); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = T::one();
        }
        m
    }

    /// The 0/1 matrix of a successor map: row `i` has its 1 in column `succ[i]`.
    pub fn from_successors(succ: &[usize]) -> Self {
        let dim = succ.len();
        let mut m = Self::zeros(dim);
        for (i, &j) in succ.iter().enumerate() {
            m.data[i * dim + j] = T::one();
        }
        m
    }
}

impl<T> Mat<T> {
    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::input("matrix rows must all have length equal to the row count"));
        }
        Ok(Mat {
            dim,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(f(i, j));
            }
        }
        Mat { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> &T {
        &self.data[i * self.dim + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.dim + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn entries(&self) -> &[T] {
        &self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Mat<U> {
        Mat {
            dim: self.dim,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// The top-left `dim x dim` block.
    pub fn top_left(&self, dim: usize) -> Mat<T>
    where
        T: Clone,
    {
        assert!(dim <= self.dim);
        Mat::from_fn(dim, |i, j| self.get(i, j).clone())
    }
}

impl<T> Mat<T>
where
    T: Clone + Zero + One + Add<Output = T> + Sub<Output = T> + Mul<Output = T>,
{
    fn check_dim(&self, other: &Self) {
        assert_eq!(self.dim, other.dim, "matrix dimension mismatch");
    }

    pub fn add(&self, other: &Self) -> Self {
        self.check_dim(other);
        Mat {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a.clone() + b.clone())
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.check_dim(other);
        Mat {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a.clone() - b.clone())
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        self.check_dim(other);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = a.clone() + b.clone();
        }
    }

    pub fn sub_assign(&mut self, other: &Self) {
        self.check_dim(other);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = a.clone() - b.clone();
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        self.check_dim(other);
        let n = self.dim;
        let mut out: Mat<T> = Mat::zeros(n);
        for i in 0..n {
            for l in 0..n {
                let a = &self.data[i * n + l];
                if a.is_zero() {
                    continue;
                }
                for j in 0..n {
                    let b = &other.data[l * n + j];
                    if !b.is_zero() {
                        out.data[i * n + j] = out.data[i * n + j].clone() + a.clone() * b.clone();
                    }
                }
            }
        }
        out
    }

    pub fn scale(&self, c: &T) -> Self {
        self.map(|a| a.clone() * c.clone())
    }

    pub fn pow(&self, exp: usize) -> Self {
        let mut acc = Mat::identity(self.dim);
        for _ in 0..exp {
            acc = acc.mul(self);
        }
        acc
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(Zero::is_zero)
    }
}

impl<T: Scalar> Mat<T> {
    /// Maximum absolute row sum.
    pub fn inf_norm(&self) -> T {
        let mut best = T::zero();
        for i in 0..self.dim {
            let s = self
                .row(i)
                .iter()
                .fold(T::zero(), |acc, a| acc + a.abs());
            if s > best {
                best = s;
            }
        }
        best
    }

    /// Maximum absolute entry.
    pub fn max_norm(&self) -> T {
        self.data
            .iter()
            .map(|a| a.abs())
            .fold(T::zero(), |acc, a| if a > acc { a } else { acc })
    }

    pub fn norms(&self) -> NormReport<T> {
        NormReport {
            inf_norm: self.inf_norm(),
            max_norm: self.max_norm(),
        }
    }

    pub fn div_int(&self, den: u64) -> Self {
        self.map(|a| a.div_int(den))
    }

    /// Every entry non-negative and every row sum at most one.
    pub fn is_substochastic(&self) -> bool {
        (0..self.dim).all(|i| {
            let row = self.row(i);
            row.iter().all(|a| !a.is_negative())
                && row.iter().fold(T::zero(), |acc, a| acc + a.clone()) <= T::one()
        })
    }

    pub fn is_stochastic(&self) -> bool {
        (0..self.dim).all(|i| {
            let row = self.row(i);
            row.iter().all(|a| !a.is_negative())
                && row.iter().fold(T::zero(), |acc, a| acc + a.clone()) == T::one()
        })
    }
}

impl Mat<i64> {
    pub fn to_scalar<T: Scalar>(&self) -> Mat<T> {
        self.map(|&a| T::from_dyadic(a, 0))
    }

    /// `self / 2^log2_den` in the target scalar.
    pub fn to_dyadic<T: Scalar>(&self, log2_den: u32) -> Mat<T> {
        self.map(|&a| T::from_dyadic(a, log2_den))
    }
}

impl Mat<Q> {
    pub fn to_f64(&self) -> Mat<f64> {
        self.map(Scalar::to_f64)
    }
}

/// Both matrix norms of one matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct NormReport<T> {
    pub inf_norm: T,
    pub max_norm: T,
}

impl<T: fmt::Debug> fmt::Debug for Mat<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<&[T]> = (0..self.dim)
            .map(|i| &self.data[i * self.dim..(i + 1) * self.dim])
            .collect();
        f.debug_list().entries(rows).finish()
    }
}

impl fmt::Display for Mat<Q> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.dim {
            let row: Vec<String> = self.row(i).iter().map(fmt_q).collect();
            writeln!(f, "[{}]", row.join(", "))?;
        }
        Ok(())
    }
}

impl Serialize for Mat<Q> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<String>> = (0..self.dim)
            .map(|i| self.row(i).iter().map(fmt_q).collect())
            .collect();
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mat<Q> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<String>>::deserialize(d)?;
        let parsed = rows
            .into_iter()
            .map(|r| r.iter().map(|s| parse_q(s)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()
            .map_err(serde::de::Error::custom)?;
        Mat::from_rows(parsed).map_err(serde::de::Error::custom)
    }
}
