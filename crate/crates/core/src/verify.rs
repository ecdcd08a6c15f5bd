//! Exhaustive error measurements: robust error of a generator against the
//! exact segment average, the matrix-sampler and product inequalities on
//! explicit forms, and the per-term split of one merge level.

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::capacity::check_capacity;
use crate::error::{Error, Result};
use crate::eval::Evaluator;
use crate::forms::{form_stats, FormStats, SeedForm, Shifted};
use crate::mat::{opt_q_str, q_str, qpow, Mat, Scalar, Q};
use crate::prpd::{Node, RobustPrpd, View};
use crate::recursion::binom;
use crate::sampler::Sampler;

fn qint(v: u64) -> Q {
    Q::from_integer(v.into())
}

/// Statistics of `x -> Â(x) - M_{a..b}` where `b = a + steps`. The robust
/// norm is the robust error `E_x ||Â(x) - M_{a..b}||`.
pub fn robust_error<T: Scalar>(ev: &Evaluator<T>, prpd: &RobustPrpd, a: usize) -> Result<FormStats<T>> {
    let b = a + prpd.steps();
    let target = ev.robp().exact_average::<T>(a, b)?;
    let mf = ev.matrix_form(prpd, a, b)?;
    if prpd.ignores_outer_seed() {
        let n = mf.robust(&BitString::zeros(prpd.s_out()))?.sub(&target).inf_norm();
        return Ok(FormStats {
            norm: n.clone(),
            robust_norm: n.clone(),
            weight: n,
        });
    }
    let rf = mf.robust_form();
    form_stats(&Shifted { form: &rf, shift: &target })
}

/// The matrix-sampler inequality for one sampler and one flat form:
/// outside a set of at most `w^2 δ` inputs, `||E_s A(g(x, s)) - ⟨A⟩|| <= 2wµε`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixSamplerCheck {
    #[serde(with = "q_str")]
    pub bad_fraction: Q,
    #[serde(with = "q_str")]
    pub bad_bound: Q,
    /// Largest deviation among the good inputs.
    #[serde(with = "q_str")]
    pub max_good_deviation: Q,
    #[serde(with = "q_str")]
    pub deviation_bound: Q,
    pub holds: bool,
}

pub fn matrix_sampler_check(g: &Sampler, form: &dyn SeedForm<Q>) -> Result<MatrixSamplerCheck> {
    let cert = g
        .cert()
        .ok_or_else(|| Error::contract("matrix sampler check needs a certified sampler"))?;
    check_capacity("sampler inputs", g.n())?;
    let stats = form_stats(form)?;
    let mean = form.mean()?;
    let w = qint(form.dim() as u64);
    let deviation_bound = qint(2) * &w * &stats.weight * &cert.eps;
    let mut bad = 0u64;
    let mut max_good = Q::zero();
    for x in BitString::all(g.n()) {
        let dev = g.estimate_matrix(form, &x)?.sub(&mean).inf_norm();
        if dev > deviation_bound {
            bad += 1;
        } else if dev > max_good {
            max_good = dev;
        }
    }
    let bad_fraction = qint(bad) / qint(1u64 << g.n());
    let bad_bound = &w * &w * &cert.delta;
    Ok(MatrixSamplerCheck {
        holds: bad_fraction <= bad_bound,
        bad_fraction,
        bad_bound,
        max_good_deviation: max_good,
        deviation_bound,
    })
}

/// One factor of a product inequality: a form read through a sampler, or
/// read directly at the common input `z`.
pub enum ProductSide<'a> {
    Sampled(&'a dyn SeedForm<Q>, &'a Sampler),
    Direct(&'a dyn SeedForm<Q>),
}

impl ProductSide<'_> {
    fn form(&self) -> &dyn SeedForm<Q> {
        match self {
            ProductSide::Sampled(f, _) | ProductSide::Direct(f) => *f,
        }
    }

    fn z_len(&self) -> Option<usize> {
        match self {
            ProductSide::Sampled(_, g) if g.is_enumeration() => None,
            ProductSide::Sampled(_, g) => Some(g.n()),
            ProductSide::Direct(f) => Some(f.outer_len()),
        }
    }

    fn at(&self, z: &BitString) -> Result<Mat<Q>> {
        match self {
            ProductSide::Sampled(f, g) => g.estimate_matrix(*f, z),
            ProductSide::Direct(f) => f.at(*z),
        }
    }

    /// `(probability mass of bad z, weight, factor on good z)`.
    fn terms(&self) -> Result<(Q, Q, Q)> {
        let stats = form_stats(self.form())?;
        match self {
            ProductSide::Sampled(f, g) => {
                let cert = g
                    .cert()
                    .ok_or_else(|| Error::contract("product inequality needs certified samplers"))?;
                let w = qint(f.dim() as u64);
                let bad = &w * &w * &cert.delta;
                let factor = &stats.norm + qint(2) * &w * &stats.weight * &cert.eps;
                Ok((bad, stats.weight, factor))
            }
            ProductSide::Direct(_) => Ok((Q::zero(), stats.weight, stats.robust_norm)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductCheck {
    /// `E_z ||L(z) R(z)||` with each side sampled or read directly.
    #[serde(with = "q_str")]
    pub measured: Q,
    /// `(bad mass) µµ' + f_L f_R`, `f = ||A|| + 2wµε` for sampled sides and `||A||_r` otherwise.
    #[serde(with = "q_str")]
    pub bound: Q,
    pub holds: bool,
}

/// The symmetric, left and right product inequalities, chosen by which
/// sides are sampled. At least one side must be sampled.
pub fn product_check(left: &ProductSide, right: &ProductSide) -> Result<ProductCheck> {
    if matches!((left, right), (ProductSide::Direct(_), ProductSide::Direct(_))) {
        return Err(Error::input("a product inequality needs at least one sampled side"));
    }
    let z_len = match (left.z_len(), right.z_len()) {
        (Some(a), Some(b)) if a != b => {
            return Err(Error::input(format!("the two sides read {a} and {b} bits of z")))
        }
        (a, b) => a.or(b).unwrap_or(0),
    };
    check_capacity("product inequality inputs", z_len)?;
    let mut sum = Q::zero();
    for z in BitString::all(z_len) {
        sum += left.at(&z)?.mul(&right.at(&z)?).inf_norm();
    }
    let measured = sum / qint(1u64 << z_len);
    let (bad_l, mu_l, f_l) = left.terms()?;
    let (bad_r, mu_r, f_r) = right.terms()?;
    let bound = (bad_l + bad_r) * mu_l * mu_r + f_l * f_r;
    Ok(ProductCheck {
        holds: measured <= bound,
        measured,
        bound,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TermKind {
    /// `(Â_i - A)(B̂_j - B)` with both sides sampled.
    Symmetric,
    /// Left side sampled, right side read directly.
    SampledLeft,
    /// Left side read directly, right side sampled.
    SampledRight,
    /// `(Â_k - A) B`.
    LastLeft,
    /// `A (B̂_k - B)`.
    LastRight,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermMeasure {
    pub kind: TermKind,
    pub i: Option<usize>,
    pub j: Option<usize>,
    pub sign: i8,
    /// `E_x` of the norm of the term.
    #[serde(with = "q_str")]
    pub measured: Q,
    /// The per-term bound stated in terms of γ, δ and binomials; valid when
    /// the construction hypotheses hold.
    #[serde(with = "q_str")]
    pub bound: Q,
    /// The product inequality evaluated with the measured norms, weights and
    /// the samplers' certificates; valid unconditionally.
    #[serde(with = "q_str")]
    pub general_bound: Q,
}

impl TermMeasure {
    pub fn holds(&self) -> bool {
        self.measured <= self.bound
    }

    pub fn general_holds(&self) -> bool {
        self.measured <= self.general_bound
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermDecomposition {
    pub k: usize,
    #[serde(with = "q_str")]
    pub gamma: Q,
    pub terms: Vec<TermMeasure>,
    /// `E_x ||Ĉ(x) - AB||`.
    #[serde(with = "q_str")]
    pub robust_error: Q,
    #[serde(with = "q_str")]
    pub term_sum: Q,
    #[serde(with = "q_str")]
    pub level_bound: Q,
    /// `Ĉ(x) - AB` equals the signed sum of the terms for every `x`.
    pub identity_holds: bool,
    /// The factorized `Ĉ(x)` agrees with averaging `C(x, y)` over every `y`;
    /// `None` when the inner seed is too long to enumerate.
    pub enumeration_agrees: Option<bool>,
    #[serde(with = "opt_q_str")]
    pub error_bound: Option<Q>,
}

impl TermDecomposition {
    /// Everything that holds without the construction hypotheses.
    pub fn unconditional_checks_hold(&self) -> bool {
        self.identity_holds
            && self.enumeration_agrees != Some(false)
            && self.robust_error <= self.term_sum
            && self.terms.iter().all(|t| t.general_holds())
    }

    pub fn closed_form_terms_hold(&self) -> bool {
        self.terms.iter().all(|t| t.holds())
    }
}

struct SideData {
    sampled: bool,
    /// `||⟨F⟩||` for sampled sides, `||F||_r` for direct ones, `F = child - target`.
    norm: Q,
    weight: Q,
    eps: Q,
    delta: Q,
}

impl SideData {
    fn factor(&self, w: &Q) -> Q {
        if self.sampled {
            &self.norm + qint(2) * w * &self.weight * &self.eps
        } else {
            self.norm.clone()
        }
    }

    fn bad(&self, w: &Q) -> Q {
        if self.sampled {
            w * w * &self.delta
        } else {
            Q::zero()
        }
    }
}

/// Largest inner seed for which the enumeration cross-check runs.
const ENUM_CHECK_BITS: usize = 14;

/// Splits the error of the merge at the root of `prpd` (placed at step `a`)
/// into the telescoping terms and measures each one exactly.
pub fn term_decomposition(ev: &Evaluator<Q>, prpd: &RobustPrpd, a: usize, gamma: &Q) -> Result<TermDecomposition> {
    let m = match (&**prpd.node(), prpd.view()) {
        (Node::Merge(m), View::Plain) => m,
        _ => return Err(Error::input("term decomposition needs an unflattened merge node")),
    };
    let k = m.k;
    let half = k.div_ceil(2);
    let steps = m.half_len() / prpd.d_step();
    let mid = a + steps;
    let b = mid + steps;
    let robp = ev.robp();
    let ta = robp.exact_average::<Q>(a, mid)?;
    let tb = robp.exact_average::<Q>(mid, b)?;
    let target = ta.mul(&tb);
    let w = qint(robp.width() as u64);

    let side_data = |sides: &[crate::prpd::Side], start: usize, shift: &Mat<Q>| -> Result<Vec<SideData>> {
        sides
            .iter()
            .map(|s| {
                let mf = ev.matrix_form(&s.child, start, start + steps)?;
                let rf = mf.robust_form();
                let stats = form_stats(&Shifted { form: &rf, shift })?;
                Ok(match &s.sampler {
                    Some(g) => {
                        let cert = g.cert().ok_or_else(|| Error::contract("merge sampler lost its certificate"))?;
                        SideData {
                            sampled: true,
                            norm: stats.norm,
                            weight: stats.weight,
                            eps: cert.eps.clone(),
                            delta: cert.delta.clone(),
                        }
                    }
                    None => SideData {
                        sampled: false,
                        norm: stats.robust_norm,
                        weight: stats.weight,
                        eps: Q::zero(),
                        delta: Q::zero(),
                    },
                })
            })
            .collect()
    };
    let ld = side_data(&m.lefts, a, &ta)?;
    let rd = side_data(&m.rights, mid, &tb)?;

    let binom_q = |n: u64, i: u64| Q::from_integer(binom(n, i));
    let half_binom = |i: usize| binom_q(steps as u64 - 1, i as u64);
    let max_delta = |x: &SideData, y: &SideData| {
        let (dx, dy) = (&x.delta, &y.delta);
        if dx > dy { dx.clone() } else { dy.clone() }
    };

    let mut terms = Vec::new();
    for t in &m.terms {
        let (l, r) = (&ld[t.i], &rd[t.j]);
        let gpow = qpow(gamma, (t.i + t.j + 2) as u32);
        let bb = half_binom(t.i) * half_binom(t.j);
        let (kind, bound) = match (t.i <= half, t.j <= half) {
            (true, true) => (TermKind::Symmetric, qint(2) * &w * &w * max_delta(l, r) * bb + qint(9) * gpow),
            (true, false) => (TermKind::SampledLeft, &w * &w * &l.delta * bb + qint(3) * gpow),
            (false, true) => (TermKind::SampledRight, &w * &w * &r.delta * bb + qint(3) * gpow),
            (false, false) => return Err(Error::input(format!("term ({}, {}) has no sampled side", t.i, t.j))),
        };
        let general_bound = (l.bad(&w) + r.bad(&w)) * &l.weight * &r.weight + l.factor(&w) * r.factor(&w);
        terms.push(TermMeasure {
            kind,
            i: Some(t.i),
            j: Some(t.j),
            sign: t.sign,
            measured: Q::zero(),
            bound,
            general_bound,
        });
    }
    let last_bound = |s: &SideData| {
        if k >= 2 {
            qpow(gamma, k as u32 + 1)
        } else {
            &w * &w * &s.delta * half_binom(k) + qint(3) * qpow(gamma, k as u32 + 1)
        }
    };
    let (na, nb) = (ta.inf_norm(), tb.inf_norm());
    for (kind, s, other_norm) in [(TermKind::LastLeft, &ld[k], &nb), (TermKind::LastRight, &rd[k], &na)] {
        terms.push(TermMeasure {
            kind,
            i: (kind == TermKind::LastLeft).then_some(k),
            j: (kind == TermKind::LastRight).then_some(k),
            sign: 1,
            measured: Q::zero(),
            bound: last_bound(s),
            general_bound: (s.bad(&w) * &s.weight + s.factor(&w)) * other_norm,
        });
    }

    // Measure every term and the identity at each outer seed.
    let mf = ev.matrix_form(prpd, a, b)?;
    let seeds: Vec<BitString> = if prpd.ignores_outer_seed() {
        vec![BitString::zeros(prpd.s_out())]
    } else {
        check_capacity("outer seeds", prpd.s_out())?;
        BitString::all(prpd.s_out()).collect()
    };
    let check_enum = prpd.s_in() <= ENUM_CHECK_BITS;
    let mut identity_holds = true;
    let mut enumeration_agrees = true;
    let mut robust_sum = Q::zero();
    let mut sums = vec![Q::zero(); terms.len()];
    for x in &seeds {
        let (lv, rv) = ev.merge_sides(prpd, a, x)?;
        let c_hat = mf.robust(x)?;
        if check_enum && c_hat != mf.robust_by_enumeration(x)? {
            enumeration_agrees = false;
        }
        let diff = c_hat.sub(&target);
        robust_sum += diff.inf_norm();
        let mut recomposed = Mat::<Q>::zeros(robp.width());
        for (idx, tm) in terms.iter().enumerate() {
            let value = match tm.kind {
                TermKind::LastLeft => lv[k].sub(&ta).mul(&tb),
                TermKind::LastRight => ta.mul(&rv[k].sub(&tb)),
                _ => {
                    let (i, j) = (tm.i.expect("paired term"), tm.j.expect("paired term"));
                    lv[i].sub(&ta).mul(&rv[j].sub(&tb))
                }
            };
            sums[idx] += value.inf_norm();
            if tm.sign > 0 {
                recomposed.add_assign(&value);
            } else {
                recomposed.sub_assign(&value);
            }
        }
        if recomposed != diff {
            identity_holds = false;
        }
    }
    let count = qint(seeds.len() as u64);
    for (tm, s) in terms.iter_mut().zip(sums) {
        tm.measured = s / &count;
    }
    let term_sum = terms.iter().fold(Q::zero(), |acc, t| acc + &t.measured);
    Ok(TermDecomposition {
        k,
        gamma: gamma.clone(),
        robust_error: robust_sum / &count,
        term_sum,
        level_bound: qpow(&(qint(11) * gamma), k as u32 + 1),
        identity_holds,
        enumeration_agrees: check_enum.then_some(enumeration_agrees),
        error_bound: prpd.error_bound().cloned(),
        terms,
    })
}
