//! Evaluating robust PRPDs on a program segment: matrix form `A(x, y)`,
//! robust form `Â(x) = E_y A(x, y)`, flattened form and averages.
//!
//! The robust form is computed by factorization: left children read a
//! prefix of `y` and right children a disjoint suffix, so every product
//! term averages as the product of the two averages. The definitional route
//! (enumerating `y`) is kept as [`MatrixForm::robust_by_enumeration`].

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::bits::BitString;
use crate::capacity::check_capacity;
use crate::error::{Error, Result};
use crate::forms::SeedForm;
use crate::mat::{Mat, Scalar};
use crate::prpd::{Merge, Node, RobustPrpd, Side, View};
use crate::robp::Robp;

type Cache<T> = Mutex<HashMap<(usize, usize), (Arc<Node>, Mat<T>)>>;

/// Left and right per-index averages of one merge.
pub type SidePair<T> = (Vec<Mat<T>>, Vec<Mat<T>>);

/// Evaluates generators on one program. Averages of nodes are cached per
/// (node, start step).
pub struct Evaluator<'r, T> {
    robp: &'r Robp,
    means: Cache<T>,
}

impl<'r, T: Scalar> Evaluator<'r, T> {
    pub fn new(robp: &'r Robp) -> Self {
        Evaluator {
            robp,
            means: Mutex::new(HashMap::new()),
        }
    }

    pub fn robp(&self) -> &Robp {
        self.robp
    }

    fn steps_of(&self, node: &Node) -> usize {
        node.out_len() / self.robp.d_step()
    }

    fn check(&self, prpd: &RobustPrpd, a: usize, b: usize) -> Result<()> {
        if prpd.d_step() != self.robp.d_step() {
            return Err(Error::input(format!(
                "generator emits {}-bit steps, program reads {}",
                prpd.d_step(),
                self.robp.d_step()
            )));
        }
        if b < a || b > self.robp.len() || (b - a) * prpd.d_step() != prpd.out_len() {
            return Err(Error::input(format!(
                "generator of {} bits does not match segment {a}..{b}",
                prpd.out_len()
            )));
        }
        Ok(())
    }

    /// The matrix form of `prpd` on `M_{a..b}`.
    pub fn matrix_form<'e>(&'e self, prpd: &'e RobustPrpd, a: usize, b: usize) -> Result<MatrixForm<'e, 'r, T>> {
        self.check(prpd, a, b)?;
        Ok(MatrixForm { ev: self, prpd, start: a })
    }

    /// `A(x, y)` as an integer matrix.
    pub(crate) fn matrix_int(&self, prpd: &RobustPrpd, a: usize, x: &BitString, y: &BitString) -> Result<Mat<i64>> {
        let (nx, ny) = prpd.native(x, y);
        self.node_matrix_int(&prpd.node().clone(), a, &nx, &ny)
    }

    fn side_matrix_int(&self, side: &Side, a: usize, x: &BitString, part: &BitString) -> Result<Mat<i64>> {
        match &side.sampler {
            Some(g) => self.matrix_int(&side.child, a, &g.eval(x, part)?, &BitString::EMPTY),
            None => self.matrix_int(&side.child, a, x, &part.prefix(side.child.s_in())),
        }
    }

    fn node_matrix_int(&self, node: &Arc<Node>, a: usize, x: &BitString, y: &BitString) -> Result<Mat<i64>> {
        let m = match &**node {
            Node::Identity { .. } => return self.robp.walk_matrix_int(a, a + self.steps_of(node), y),
            Node::Merge(m) => m,
        };
        let mid = a + m.half_len() / self.robp.d_step();
        let (lv, rv) = self.per_side(m, |side, left| {
            if left {
                self.side_matrix_int(side, a, x, &y.prefix(side.y_len))
            } else {
                self.side_matrix_int(side, mid, x, &y.suffix(side.y_len))
            }
        })?;
        let mut acc = Mat::<i64>::zeros(self.robp.width());
        for t in &m.terms {
            let p = lv[t.i].mul(&rv[t.j]);
            if t.sign > 0 {
                acc.add_assign(&p);
            } else {
                acc.sub_assign(&p);
            }
        }
        Ok(acc)
    }

    /// Evaluates the children each term needs (index `0..=k` on both sides).
    fn per_side<V>(&self, m: &Merge, mut f: impl FnMut(&Side, bool) -> Result<V>) -> Result<(Vec<V>, Vec<V>)> {
        let lv = m.lefts.iter().map(|s| f(s, true)).collect::<Result<Vec<_>>>()?;
        let rv = m.rights.iter().map(|s| f(s, false)).collect::<Result<Vec<_>>>()?;
        Ok((lv, rv))
    }

    /// `Â(x)` for declared outer seed `x`.
    pub(crate) fn robust(&self, prpd: &RobustPrpd, a: usize, x: &BitString) -> Result<Mat<T>> {
        match prpd.view() {
            View::Plain => {
                let nx = x.prefix(prpd.node().s_out());
                self.node_robust(prpd.node(), a, &nx)
            }
            View::Flat { .. } => Ok(self.matrix_int(prpd, a, x, &BitString::zeros(prpd.s_in()))?.to_scalar()),
        }
    }

    fn side_robust(&self, side: &Side, a: usize, x: &BitString) -> Result<Mat<T>> {
        match &side.sampler {
            Some(g) => {
                let form = FlatChild { ev: self, prpd: &side.child, start: a };
                g.estimate_matrix(&form, x)
            }
            None => self.robust(&side.child, a, x),
        }
    }

    fn node_robust(&self, node: &Arc<Node>, a: usize, x: &BitString) -> Result<Mat<T>> {
        let m = match &**node {
            Node::Identity { .. } => return self.node_mean(node, a),
            Node::Merge(m) => m,
        };
        let mid = a + m.half_len() / self.robp.d_step();
        let (lv, rv) = self.per_side(m, |side, left| self.side_robust(side, if left { a } else { mid }, x))?;
        let mut acc = Mat::<T>::zeros(self.robp.width());
        for t in &m.terms {
            let p = lv[t.i].mul(&rv[t.j]);
            if t.sign > 0 {
                acc.add_assign(&p);
            } else {
                acc.sub_assign(&p);
            }
        }
        Ok(acc)
    }

    /// The per-index averages `(Â_i(x), B̂_j(x))` that a merge node combines.
    pub fn merge_sides(&self, prpd: &RobustPrpd, a: usize, x: &BitString) -> Result<SidePair<T>> {
        let m = match (&**prpd.node(), prpd.view()) {
            (Node::Merge(m), View::Plain) => m,
            _ => return Err(Error::input("merge_sides needs an unflattened merge node")),
        };
        if x.len() != prpd.s_out() {
            return Err(Error::input("outer seed length mismatch"));
        }
        let nx = x.prefix(m.s_out);
        let mid = a + m.half_len() / self.robp.d_step();
        self.per_side(m, |side, left| self.side_robust(side, if left { a } else { mid }, &nx))
    }

    /// `E_{x,y} A(x, y)`; flattening and padding leave it unchanged.
    pub(crate) fn mean(&self, prpd: &RobustPrpd, a: usize) -> Result<Mat<T>> {
        self.node_mean(prpd.node(), a)
    }

    fn node_mean(&self, node: &Arc<Node>, a: usize) -> Result<Mat<T>> {
        let key = (Arc::as_ptr(node) as usize, a);
        if let Some((_, m)) = self.means.lock().expect("mean cache poisoned").get(&key) {
            return Ok(m.clone());
        }
        let value = match &**node {
            Node::Identity { .. } => self.robp.exact_average(a, a + self.steps_of(node))?,
            Node::Merge(m) => {
                // Children first, so the parallel loop below only reads the cache.
                let mid = a + m.half_len() / self.robp.d_step();
                for s in &m.lefts {
                    self.node_mean(s.child.node(), a)?;
                }
                for s in &m.rights {
                    self.node_mean(s.child.node(), mid)?;
                }
                if node.ignores_outer_seed() {
                    // Enumeration samplers ignore x, so Â is constant.
                    let v = self.node_robust(node, a, &BitString::zeros(m.s_out))?;
                    self.means
                        .lock()
                        .expect("mean cache poisoned")
                        .insert(key, (node.clone(), v.clone()));
                    return Ok(v);
                }
                check_capacity("generator average", m.s_out)?;
                let sum = BitString::all(m.s_out)
                    .collect::<Vec<_>>()
                    .into_par_iter()
                    .map(|x| self.node_robust(node, a, &x))
                    .try_reduce(|| Mat::zeros(self.robp.width()), |p, q| Ok(p.add(&q)))?;
                sum.div_int(1u64 << m.s_out)
            }
        };
        self.means
            .lock()
            .expect("mean cache poisoned")
            .insert(key, (node.clone(), value.clone()));
        Ok(value)
    }
}

/// A flattened child seen as a form over its outer seed.
struct FlatChild<'e, 'r, T> {
    ev: &'e Evaluator<'r, T>,
    prpd: &'e RobustPrpd,
    start: usize,
}

impl<T: Scalar> SeedForm<T> for FlatChild<'_, '_, T> {
    fn outer_len(&self) -> usize {
        self.prpd.s_out()
    }

    fn inner_len(&self) -> usize {
        self.prpd.s_in()
    }

    fn dim(&self) -> usize {
        self.ev.robp.width()
    }

    fn at(&self, x: BitString) -> Result<Mat<T>> {
        self.ev.robust(self.prpd, self.start, &x)
    }

    fn mean(&self) -> Result<Mat<T>> {
        self.ev.mean(self.prpd, self.start)
    }
}

/// The matrix form `(x, y) -> A(x, y)` of a generator on a fixed segment.
///
/// As a [`SeedForm`] it exposes the robust form at `x` but reports its inner
/// seed length, so samplers refuse it until it is flattened.
pub struct MatrixForm<'e, 'r, T> {
    ev: &'e Evaluator<'r, T>,
    prpd: &'e RobustPrpd,
    start: usize,
}

impl<'e, 'r, T: Scalar> MatrixForm<'e, 'r, T> {
    pub fn prpd(&self) -> &RobustPrpd {
        self.prpd
    }

    /// `A(x, y) = Σ_i ρ(x, y, i) M^{G(x, y, i)}`.
    pub fn eval(&self, x: &BitString, y: &BitString) -> Result<Mat<T>> {
        self.prpd.check_seeds(x, y)?;
        Ok(self.ev.matrix_int(self.prpd, self.start, x, y)?.to_scalar())
    }

    /// `A(x, y)` with integer entries.
    pub fn eval_int(&self, x: &BitString, y: &BitString) -> Result<Mat<i64>> {
        self.prpd.check_seeds(x, y)?;
        self.ev.matrix_int(self.prpd, self.start, x, y)
    }

    /// `Â(x) = E_y A(x, y)` by factorization.
    pub fn robust(&self, x: &BitString) -> Result<Mat<T>> {
        if x.len() != self.prpd.s_out() {
            return Err(Error::input(format!(
                "outer seed has {} bits, generator takes {}",
                x.len(),
                self.prpd.s_out()
            )));
        }
        self.ev.robust(self.prpd, self.start, x)
    }

    /// `Â(x)` by enumerating every inner seed.
    pub fn robust_by_enumeration(&self, x: &BitString) -> Result<Mat<T>> {
        check_capacity("inner seed enumeration", self.prpd.s_in())?;
        let sum = BitString::all(self.prpd.s_in())
            .map(|y| self.eval_int(x, &y))
            .try_fold(Mat::<i64>::zeros(self.ev.robp.width()), |acc, m| m.map(|m| acc.add(&m)))?;
        Ok(sum.to_scalar::<T>().div_int(1u64 << self.prpd.s_in()))
    }

    /// `⟨A⟩ = E_{x,y} A(x, y)`.
    pub fn average(&self) -> Result<Mat<T>> {
        self.ev.mean(self.prpd, self.start)
    }

    pub fn robust_form(&self) -> RobustForm<'_, 'r, T> {
        RobustForm { ev: self.ev, prpd: self.prpd, start: self.start }
    }

    /// The flattened form `x || y -> A(x, y)`.
    pub fn flat_form(&self) -> FlatForm<'e, 'r, T> {
        FlatForm { ev: self.ev, prpd: self.prpd.flatten(), start: self.start }
    }
}

impl<T: Scalar> SeedForm<T> for MatrixForm<'_, '_, T> {
    fn outer_len(&self) -> usize {
        self.prpd.s_out()
    }

    fn inner_len(&self) -> usize {
        self.prpd.s_in()
    }

    fn dim(&self) -> usize {
        self.ev.robp.width()
    }

    fn at(&self, x: BitString) -> Result<Mat<T>> {
        self.robust(&x)
    }

    fn mean(&self) -> Result<Mat<T>> {
        self.average()
    }
}

/// `x -> Â(x)`.
pub struct RobustForm<'e, 'r, T> {
    ev: &'e Evaluator<'r, T>,
    prpd: &'e RobustPrpd,
    start: usize,
}

impl<T: Scalar> SeedForm<T> for RobustForm<'_, '_, T> {
    fn outer_len(&self) -> usize {
        self.prpd.s_out()
    }

    fn dim(&self) -> usize {
        self.ev.robp.width()
    }

    fn at(&self, x: BitString) -> Result<Mat<T>> {
        if x.len() != self.prpd.s_out() {
            return Err(Error::input("outer seed length mismatch"));
        }
        self.ev.robust(self.prpd, self.start, &x)
    }

    fn mean(&self) -> Result<Mat<T>> {
        self.ev.mean(self.prpd, self.start)
    }
}

/// `z -> Ā(z)` for the flattened generator.
pub struct FlatForm<'e, 'r, T> {
    ev: &'e Evaluator<'r, T>,
    prpd: RobustPrpd,
    start: usize,
}

impl<T: Scalar> FlatForm<'_, '_, T> {
    pub fn prpd(&self) -> &RobustPrpd {
        &self.prpd
    }
}

impl<T: Scalar> SeedForm<T> for FlatForm<'_, '_, T> {
    fn outer_len(&self) -> usize {
        self.prpd.s_out()
    }

    fn dim(&self) -> usize {
        self.ev.robp.width()
    }

    fn at(&self, z: BitString) -> Result<Mat<T>> {
        if z.len() != self.prpd.s_out() {
            return Err(Error::input("flattened seed length mismatch"));
        }
        self.ev.robust(&self.prpd, self.start, &z)
    }

    fn mean(&self) -> Result<Mat<T>> {
        self.ev.mean(&self.prpd, self.start)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::Q;

    #[test]
    fn identity_forms() {
        let robp = Robp::random(3, 3, 1, 5).unwrap();
        let ev = Evaluator::<Q>::new(&robp);
        let p = RobustPrpd::identity(3, 3, 1).unwrap();
        let mf = ev.matrix_form(&p, 0, 3).unwrap();
        for y in BitString::all(3) {
            assert_eq!(mf.eval(&BitString::EMPTY, &y).unwrap(), robp.walk_matrix(0, 3, &y).unwrap());
        }
        let avg = robp.exact_average::<Q>(0, 3).unwrap();
        assert_eq!(mf.robust(&BitString::EMPTY).unwrap(), avg);
        assert_eq!(mf.robust_by_enumeration(&BitString::EMPTY).unwrap(), avg);
        let flat = mf.flat_form();
        assert_eq!(flat.outer_len(), 3);
        assert_eq!(crate::forms::SeedForm::mean(&flat).unwrap(), avg);
        let y: BitString = "011".parse().unwrap();
        assert_eq!(flat.at(y).unwrap(), robp.walk_matrix(0, 3, &y).unwrap());
    }

    #[test]
    fn exact_samplers_skip_the_outer_seed() {
        use crate::recursion::{recursive_prpd, RecursionParams};
        let params = RecursionParams {
            k: Some(1),
            ..RecursionParams::default()
        };
        let (p, _) = recursive_prpd(4, 2, None, &params).unwrap();
        assert!(p.ignores_outer_seed());
        let robp = Robp::random(4, 2, 1, 12).unwrap();
        let ev = Evaluator::<Q>::new(&robp);
        let mf = ev.matrix_form(&p, 0, 4).unwrap();
        let first = mf.robust_by_enumeration(&BitString::zeros(p.s_out())).unwrap();
        let mut sum = Mat::<Q>::zeros(2);
        for x in BitString::all(p.s_out()) {
            let r = mf.robust_by_enumeration(&x).unwrap();
            assert_eq!(r, first);
            assert_eq!(mf.robust(&x).unwrap(), r);
            sum = sum.add(&r);
        }
        assert_eq!(mf.average().unwrap(), sum.div_int(1 << p.s_out()));
    }

    #[test]
    fn segment_mismatch_is_rejected() {
        let robp = Robp::random(4, 2, 1, 1).unwrap();
        let ev = Evaluator::<Q>::new(&robp);
        let p = RobustPrpd::identity(3, 2, 1).unwrap();
        assert!(ev.matrix_form(&p, 0, 4).is_err());
        assert!(ev.matrix_form(&p, 1, 4).is_ok());
        assert!(ev.matrix_form(&p, 2, 5).is_err());
    }
}
