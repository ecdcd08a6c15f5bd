//! Robust PRPDs: generators `(x, y, i) -> (string, ±µ)` stored as a tree of
//! merge nodes over identity leaves.
//!
//! A [`RobustPrpd`] is a node plus a *view* describing how the declared
//! outer/inner seeds map onto the node's native seeds. Padding raises the
//! declared lengths and reads prefixes; flattening moves the inner seed into
//! the outer one.

use std::collections::HashMap;
use std::sync::Arc;

use num_traits::{One, Signed};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::mat::{opt_q_str, Q};
use crate::pdist::PseudoDist;
use crate::sampler::Sampler;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum View {
    /// Reads prefixes of `x` and `y`.
    Plain,
    /// The first `outer + inner` bits of `x` are split into the pre-flatten
    /// outer and inner seeds; `y` is ignored.
    Flat { outer: usize, inner: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// `G(x, y, 1) = y` with sign +1; µ = 1, no outer seed.
    Identity { out_len: usize },
    Merge(Merge),
}

/// One product level: `Σ_{i+j=k} A_i B_j - Σ_{i+j=k-1} A_i B_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub k: usize,
    pub out_len: usize,
    pub s_out: usize,
    pub s_in: usize,
    pub mu: u128,
    pub lefts: Vec<Side>,
    pub rights: Vec<Side>,
    pub terms: Vec<Term>,
}

/// A prepared child of a merge node.
///
/// Sampled children are flattened and read `child(g(x, a))` for the seed
/// part `a` of `y`; the rest read `child(x, a)` after padding to `s_out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Side {
    pub child: RobustPrpd,
    pub sampler: Option<Sampler>,
    /// Bits of `y` consumed: a prefix for left children, a suffix for right ones.
    pub y_len: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    pub i: usize,
    pub j: usize,
    pub sign: i8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustPrpd {
    node: Arc<Node>,
    view: View,
    s_out: usize,
    s_in: usize,
    width: usize,
    d_step: usize,
    #[serde(with = "opt_q_str")]
    error_bound: Option<Q>,
}

/// The telescoping term list for precision `k`.
pub fn telescoping_terms(k: usize) -> Vec<Term> {
    let mut terms: Vec<Term> = (0..=k).map(|i| Term { i, j: k - i, sign: 1 }).collect();
    if k >= 1 {
        terms.extend((0..k).map(|i| Term { i, j: k - 1 - i, sign: -1 }));
    }
    terms
}

impl Node {
    pub fn out_len(&self) -> usize {
        match self {
            Node::Identity { out_len } => *out_len,
            Node::Merge(m) => m.out_len,
        }
    }

    pub fn s_out(&self) -> usize {
        match self {
            Node::Identity { .. } => 0,
            Node::Merge(m) => m.s_out,
        }
    }

    pub fn s_in(&self) -> usize {
        match self {
            Node::Identity { out_len } => *out_len,
            Node::Merge(m) => m.s_in,
        }
    }

    pub fn mu(&self) -> u128 {
        match self {
            Node::Identity { .. } => 1,
            Node::Merge(m) => m.mu,
        }
    }
}

impl Node {
    pub(crate) fn ignores_outer_seed(&self) -> bool {
        match self {
            Node::Identity { .. } => true,
            Node::Merge(m) => m
                .lefts
                .iter()
                .chain(&m.rights)
                .all(|s| s.sampler.as_ref().is_some_and(|g| g.is_enumeration())),
        }
    }
}

impl Merge {
    /// Whether left/right children with index `i` go through a sampler.
    pub fn is_sampled(&self, i: usize) -> bool {
        self.lefts[i].sampler.is_some()
    }

    pub fn half_len(&self) -> usize {
        self.out_len / 2
    }
}

impl RobustPrpd {
    /// The terminal generator: outputs its inner seed.
    pub fn identity(out_len: usize, width: usize, d_step: usize) -> Result<Self> {
        if d_step == 0 || !out_len.is_multiple_of(d_step) {
            return Err(Error::input(format!(
                "output length {out_len} is not a multiple of the step width {d_step}"
            )));
        }
        Ok(RobustPrpd {
            node: Arc::new(Node::Identity { out_len }),
            view: View::Plain,
            s_out: 0,
            s_in: out_len,
            width,
            d_step,
            error_bound: Some(Q::from_integer(0.into())),
        })
    }

    pub(crate) fn from_merge(merge: Merge, width: usize, d_step: usize, error_bound: Option<Q>) -> Self {
        let (s_out, s_in) = (merge.s_out, merge.s_in);
        RobustPrpd {
            node: Arc::new(Node::Merge(merge)),
            view: View::Plain,
            s_out,
            s_in,
            width,
            d_step,
            error_bound,
        }
    }

    pub fn node(&self) -> &Arc<Node> {
        &self.node
    }

    pub fn view(&self) -> &View {
        &self.view
    }

    pub fn s_out(&self) -> usize {
        self.s_out
    }

    pub fn s_in(&self) -> usize {
        self.s_in
    }

    /// Total seed length `s_out + s_in`.
    pub fn seed_len(&self) -> usize {
        self.s_out + self.s_in
    }

    pub fn mu(&self) -> u128 {
        self.node.mu()
    }

    /// Output length in bits.
    pub fn out_len(&self) -> usize {
        self.node.out_len()
    }

    /// Output length in steps.
    pub fn steps(&self) -> usize {
        self.out_len() / self.d_step
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn d_step(&self) -> usize {
        self.d_step
    }

    /// Proven bound on `E_x ||Â(x) - M||`, if the construction hypotheses held.
    pub fn error_bound(&self) -> Option<&Q> {
        self.error_bound.as_ref()
    }

    pub fn is_terminal(&self) -> bool {
        matches!(*self.node, Node::Identity { .. })
    }

    /// Whether `Â(x)` is the same for every outer seed: true for identity
    /// leaves and for merges whose sides all use enumeration samplers.
    pub fn ignores_outer_seed(&self) -> bool {
        self.view == View::Plain && self.node.ignores_outer_seed()
    }

    /// Moves the inner seed into the outer seed; `E_x Ā(x)` and µ are unchanged.
    pub fn flatten(&self) -> Self {
        let mut out = self.clone();
        if self.s_in == 0 {
            return out;
        }
        if self.view == View::Plain {
            out.view = View::Flat {
                outer: self.s_out,
                inner: self.s_in,
            };
        }
        out.s_out = self.s_out + self.s_in;
        out.s_in = 0;
        out
    }

    /// Declares longer seeds; only prefixes are read.
    pub fn pad_seeds(&self, s_out: usize, s_in: usize) -> Result<Self> {
        if s_out < self.s_out || s_in < self.s_in {
            return Err(Error::input(format!(
                "cannot shrink seeds from ({}, {}) to ({s_out}, {s_in})",
                self.s_out, self.s_in
            )));
        }
        let mut out = self.clone();
        out.s_out = s_out;
        out.s_in = s_in;
        Ok(out)
    }

    pub(crate) fn check_seeds(&self, x: &BitString, y: &BitString) -> Result<()> {
        if x.len() != self.s_out || y.len() != self.s_in {
            return Err(Error::input(format!(
                "seeds of ({}, {}) bits given, generator takes ({}, {})",
                x.len(),
                y.len(),
                self.s_out,
                self.s_in
            )));
        }
        Ok(())
    }

    /// Maps declared seeds to the node's native `(x, y)`.
    pub(crate) fn native(&self, x: &BitString, y: &BitString) -> (BitString, BitString) {
        let (n_out, n_in) = (self.node.s_out(), self.node.s_in());
        match self.view {
            View::Plain => (x.prefix(n_out), y.prefix(n_in)),
            View::Flat { outer, inner } => {
                let z = x.prefix(outer + inner);
                (z.prefix(outer).prefix(n_out), z.suffix(inner).prefix(n_in))
            }
        }
    }

    /// The full pseudodistribution `i -> (G(x, y, i), ±µ)`.
    pub fn expand(&self, x: &BitString, y: &BitString) -> Result<PseudoDist> {
        self.check_seeds(x, y)?;
        let (nx, ny) = self.native(x, y);
        expand_node(&self.node, &nx, &ny)
    }

    /// `(G(x, y, i), sign)` for `i` in `[µ]` (0-based).
    pub fn gen(&self, x: &BitString, y: &BitString, i: usize) -> Result<(BitString, i8)> {
        let pd = self.expand(x, y)?;
        let (s, c) = pd
            .entries()
            .get(i)
            .ok_or_else(|| Error::input(format!("index {i} is not below µ = {}", pd.size())))?;
        Ok((*s, if c.is_negative() { -1 } else { 1 }))
    }

    /// Hex SHA-256 of the generator's structure. Shared subtrees are hashed once.
    pub fn digest(&self) -> String {
        let mut memo = HashMap::new();
        hex::encode(prpd_digest(self, &mut memo))
    }
}

fn expand_side(side: &Side, x: &BitString, part: &BitString) -> Result<PseudoDist> {
    match &side.sampler {
        Some(g) => side.child.expand(&g.eval(x, part)?, &BitString::EMPTY),
        None => side.child.expand(x, &part.prefix(side.child.s_in())),
    }
}

fn expand_node(node: &Node, x: &BitString, y: &BitString) -> Result<PseudoDist> {
    let m = match node {
        Node::Identity { .. } => return Ok(PseudoDist::single(*y, Q::one())),
        Node::Merge(m) => m,
    };
    let mut acc: Option<PseudoDist> = None;
    for t in &m.terms {
        let (l, r) = (&m.lefts[t.i], &m.rights[t.j]);
        let a = expand_side(l, x, &y.prefix(l.y_len))?;
        let b = expand_side(r, x, &y.suffix(r.y_len))?;
        let mut prod = a.concat(&b)?;
        if t.sign < 0 {
            prod = prod.scale(&Q::from_integer((-1).into()));
        }
        acc = Some(match acc {
            None => prod,
            Some(prev) => prev.union(&prod)?,
        });
    }
    acc.ok_or_else(|| Error::contract("merge node without terms"))
}

fn node_digest(node: &Arc<Node>, memo: &mut HashMap<usize, Vec<u8>>) -> Vec<u8> {
    let key = Arc::as_ptr(node) as usize;
    if let Some(d) = memo.get(&key) {
        return d.clone();
    }
    let mut h = Sha256::new();
    match &**node {
        Node::Identity { out_len } => h.update(format!("identity {out_len}").as_bytes()),
        Node::Merge(m) => {
            h.update(format!("merge {} {} {} {} {}", m.k, m.out_len, m.s_out, m.s_in, m.mu).as_bytes());
            for side in m.lefts.iter().chain(&m.rights) {
                h.update(prpd_digest(&side.child, memo));
                let sampler = serde_json::to_string(&side.sampler).expect("sampler serializes");
                h.update(format!("{} {sampler}", side.y_len).as_bytes());
            }
            for t in &m.terms {
                h.update(format!("{} {} {}", t.i, t.j, t.sign).as_bytes());
            }
        }
    }
    let d = h.finalize().to_vec();
    memo.insert(key, d.clone());
    d
}

fn prpd_digest(p: &RobustPrpd, memo: &mut HashMap<usize, Vec<u8>>) -> Vec<u8> {
    let mut h = Sha256::new();
    h.update(node_digest(&p.node, memo));
    let bound = p.error_bound.as_ref().map(crate::mat::fmt_q);
    h.update(format!("{:?} {} {} {} {} {bound:?}", p.view, p.s_out, p.s_in, p.width, p.d_step).as_bytes());
    h.finalize().to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_expands_to_inner_seed() {
        let p = RobustPrpd::identity(3, 2, 1).unwrap();
        let y: BitString = "101".parse().unwrap();
        assert_eq!(p.gen(&BitString::EMPTY, &y, 0).unwrap(), (y, 1));
        assert_eq!(p.mu(), 1);
        assert!(p.gen(&BitString::EMPTY, &y, 1).is_err());
    }

    #[test]
    fn flatten_and_pad_lengths() {
        let p = RobustPrpd::identity(2, 2, 1).unwrap();
        let f = p.flatten();
        assert_eq!((f.s_out(), f.s_in()), (2, 0));
        assert_eq!(f.flatten(), f);
        let q = p.pad_seeds(3, 4).unwrap();
        assert_eq!((q.s_out(), q.s_in()), (3, 4));
        assert!(q.pad_seeds(2, 4).is_err());
        let qf = q.flatten();
        assert_eq!((qf.s_out(), qf.s_in()), (7, 0));
        let z: BitString = "0001101".parse().unwrap();
        assert_eq!(qf.gen(&z, &BitString::EMPTY, 0).unwrap().0.to_string(), "11");
    }

    #[test]
    fn telescoping_term_counts() {
        assert_eq!(telescoping_terms(0).len(), 1);
        let t2 = telescoping_terms(2);
        assert_eq!(t2.len(), 5);
        assert_eq!(t2.iter().filter(|t| t.sign < 0).count(), 2);
    }

    #[test]
    fn digest_is_stable() {
        let a = RobustPrpd::identity(4, 2, 1).unwrap();
        let b = RobustPrpd::identity(4, 2, 1).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), a.flatten().digest());
    }
}
