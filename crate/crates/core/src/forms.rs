//! Seed-indexed matrix families `x -> A(x)` and their norm, robust norm and weight.

use rayon::prelude::*;

use crate::bits::BitString;
use crate::capacity::check_capacity;
use crate::error::{Error, Result};
use crate::mat::{Mat, Scalar};

/// A family of `dim x dim` matrices indexed by an outer seed.
///
/// `inner_len` is non-zero for forms whose value at `x` still averages over
/// an unflattened inner seed; samplers refuse those.
pub trait SeedForm<T: Scalar>: Sync {
    fn outer_len(&self) -> usize;

    fn inner_len(&self) -> usize {
        0
    }

    fn dim(&self) -> usize;

    fn at(&self, x: BitString) -> Result<Mat<T>>;

    /// `E_x A(x)`. The default enumerates every seed.
    fn mean(&self) -> Result<Mat<T>> {
        check_capacity("form mean", self.outer_len())?;
        let sum = BitString::all(self.outer_len())
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|x| self.at(x))
            .try_reduce(|| Mat::zeros(self.dim()), |a, b| Ok(a.add(&b)))?;
        Ok(sum.div_int(1u64 << self.outer_len()))
    }
}

/// A form stored as an explicit table, index = seed value.
#[derive(Clone, Debug, PartialEq)]
pub struct TableForm<T> {
    outer_len: usize,
    dim: usize,
    values: Vec<Mat<T>>,
}

impl<T: Scalar> TableForm<T> {
    pub fn new(outer_len: usize, values: Vec<Mat<T>>) -> Result<Self> {
        if outer_len >= 32 || values.len() != 1usize << outer_len {
            return Err(Error::input(format!(
                "a table form over {outer_len} seed bits needs 2^{outer_len} matrices, got {}",
                values.len()
            )));
        }
        let dim = values[0].dim();
        if values.iter().any(|m| m.dim() != dim) {
            return Err(Error::input("table form matrices must share one dimension"));
        }
        Ok(TableForm {
            outer_len,
            dim,
            values,
        })
    }

    /// Tabulates any form.
    pub fn tabulate(form: &dyn SeedForm<T>) -> Result<Self> {
        check_capacity("tabulation", form.outer_len())?;
        let values = BitString::all(form.outer_len())
            .map(|x| form.at(x))
            .collect::<Result<Vec<_>>>()?;
        TableForm::new(form.outer_len(), values)
    }

    pub fn values(&self) -> &[Mat<T>] {
        &self.values
    }
}

impl<T: Scalar> SeedForm<T> for TableForm<T> {
    fn outer_len(&self) -> usize {
        self.outer_len
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn at(&self, x: BitString) -> Result<Mat<T>> {
        if x.len() != self.outer_len {
            return Err(Error::input(format!(
                "seed has {} bits, form expects {}",
                x.len(),
                self.outer_len
            )));
        }
        Ok(self.values[x.value() as usize].clone())
    }
}

/// `x -> A(x) - C` for a fixed matrix `C`.
pub struct Shifted<'a, T> {
    pub form: &'a dyn SeedForm<T>,
    pub shift: &'a Mat<T>,
}

impl<T: Scalar> SeedForm<T> for Shifted<'_, T> {
    fn outer_len(&self) -> usize {
        self.form.outer_len()
    }

    fn inner_len(&self) -> usize {
        self.form.inner_len()
    }

    fn dim(&self) -> usize {
        self.form.dim()
    }

    fn at(&self, x: BitString) -> Result<Mat<T>> {
        Ok(self.form.at(x)?.sub(self.shift))
    }

    fn mean(&self) -> Result<Mat<T>> {
        Ok(self.form.mean()?.sub(self.shift))
    }
}

/// Norm `||E_x A(x)||`, robust norm `E_x ||A(x)||` and weight `max_x ||A(x)||`.
#[derive(Clone, Debug, PartialEq)]
pub struct FormStats<T> {
    pub norm: T,
    pub robust_norm: T,
    pub weight: T,
}

/// Exact statistics by enumerating every outer seed.
pub fn form_stats<T: Scalar>(form: &dyn SeedForm<T>) -> Result<FormStats<T>> {
    check_capacity("form statistics", form.outer_len())?;
    let dim = form.dim();
    let (sum, norm_sum, weight) = BitString::all(form.outer_len())
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|x| {
            let a = form.at(x)?;
            let nrm = a.inf_norm();
            Ok((a, nrm.clone(), nrm))
        })
        .try_reduce(
            || (Mat::zeros(dim), T::zero(), T::zero()),
            |(sa, na, wa), (sb, nb, wb)| {
                Ok((sa.add(&sb), na + nb, if wb > wa { wb } else { wa }))
            },
        )?;
    let count = 1u64 << form.outer_len();
    Ok(FormStats {
        norm: sum.div_int(count).inf_norm(),
        robust_norm: norm_sum.div_int(count),
        weight,
    })
}
