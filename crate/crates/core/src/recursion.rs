//! The telescoping product, the one-level construction `C_k`, the full
//! recursion over levels, and its seed ledger.

use std::collections::HashMap;

use num_bigint::BigInt;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::{fmt_q, opt_q_str, q_str, qpow, Mat, Scalar, Q};
use crate::prpd::{telescoping_terms, Merge, RobustPrpd, Side};
use crate::sampler::{Certificate, Sampler};

/// `binom(n, k)` exactly; 0 when `k > n`.
pub fn binom(n: u64, k: u64) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

fn qint(v: impl Into<BigInt>) -> Q {
    Q::from_integer(v.into())
}

/// `Σ_{i+j=k} A_i B_j - Σ_{i+j=k-1} A_i B_j`.
pub fn telescoping_product<T: Scalar>(a: &[Mat<T>], b: &[Mat<T>], k: usize) -> Result<Mat<T>> {
    if a.len() < k + 1 || b.len() < k + 1 {
        return Err(Error::input(format!(
            "precision {k} needs {} approximations per side, got {} and {}",
            k + 1,
            a.len(),
            b.len()
        )));
    }
    let mut acc = Mat::zeros(a[0].dim());
    for t in telescoping_terms(k) {
        let p = a[t.i].mul(&b[t.j]);
        if t.sign > 0 {
            acc.add_assign(&p);
        } else {
            acc.sub_assign(&p);
        }
    }
    Ok(acc)
}

/// `(k+2)γ^{k+1} + (k+1)γ^{k+2}`.
pub fn telescoping_error_bound(gamma: &Q, k: usize) -> Q {
    let k32 = k as u32;
    qint(k as u64 + 2) * qpow(gamma, k32 + 1) + qint(k as u64 + 1) * qpow(gamma, k32 + 2)
}

/// `(11γ)^{k+1}`, the error of one merge level.
pub fn level_error_bound(gamma: &Q, k: usize) -> Q {
    qpow(&(qint(11) * gamma), k as u32 + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HypothesisPolicy {
    /// A failed hypothesis aborts the construction.
    Enforce,
    /// Failed hypotheses are recorded; the result carries no error bound.
    Record,
}

/// One inequality checked during a construction, with both sides printed exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub lhs: String,
    pub rhs: String,
    pub holds: bool,
}

impl Check {
    fn q(name: String, lhs: &Q, rhs: &Q) -> Check {
        Check {
            name,
            lhs: fmt_q(lhs),
            rhs: fmt_q(rhs),
            holds: lhs <= rhs,
        }
    }

    fn int(name: String, lhs: impl Into<BigInt>, rhs: impl Into<BigInt>) -> Check {
        let (l, r) = (lhs.into(), rhs.into());
        Check {
            name,
            lhs: l.to_string(),
            rhs: r.to_string(),
            holds: l <= r,
        }
    }

    fn to_error(&self) -> Error {
        Error::Construction {
            inequality: self.name.clone(),
            lhs: self.lhs.clone(),
            rhs: self.rhs.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CkConfig {
    pub k: usize,
    /// Level γ: the children are γ^{i+1}-approximators.
    pub gamma: Q,
    pub width: usize,
    /// Seed lengths; `None` picks the smallest admissible value.
    pub s_out: Option<usize>,
    pub s_in: Option<usize>,
    pub policy: HypothesisPolicy,
    pub trust_assumed: bool,
}

/// What a construction checked and what it produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CkReport {
    pub s_out: usize,
    pub s_in: usize,
    pub mu: u128,
    pub checks: Vec<Check>,
    /// `γ^{i+1} / (w binom(m-1, i))` per sampled index; `None` when the binomial is 0.
    #[serde(with = "opt_q_vec")]
    pub eps_required: Vec<Option<Q>>,
    #[serde(with = "q_str")]
    pub delta_required: Q,
    /// The index `i` whose `binom(2m-1, i)` gives the binding δ requirement.
    pub delta_binding: usize,
}

mod opt_q_vec {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[Option<Q>], s: S) -> std::result::Result<S::Ok, S::Error> {
        let strs: Vec<Option<String>> = v.iter().map(|x| x.as_ref().map(fmt_q)).collect();
        strs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Option<Q>>, D::Error> {
        let strs: Vec<Option<String>> = Vec::deserialize(d)?;
        strs.into_iter()
            .map(|s| s.map(|s| crate::mat::parse_q(&s)).transpose())
            .collect::<Result<_>>()
            .map_err(serde::de::Error::custom)
    }
}

impl CkReport {
    pub fn all_hold(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }
}

/// Sampler requirements of one merge: per-index ε_i and the common δ with
/// the index that binds it.
pub fn sampler_requirements(gamma: &Q, width: usize, steps: usize, k: usize) -> (Vec<Option<Q>>, Q, usize) {
    let half = k.div_ceil(2);
    let w = qint(width as u64);
    let eps = (0..=half)
        .map(|i| {
            let b = binom(steps as u64 - 1, i as u64);
            (!b.is_zero()).then(|| qpow(gamma, i as u32 + 1) / (&w * Q::from_integer(b)))
        })
        .collect();
    let mut delta: Option<(Q, usize)> = None;
    for i in 0..=half {
        let b = binom(2 * steps as u64 - 1, i as u64);
        if b.is_zero() {
            continue;
        }
        let d = qpow(gamma, k as u32 + 1) / (&w * &w * Q::from_integer(b));
        if delta.as_ref().is_none_or(|(best, _)| &d < best) {
            delta = Some((d, i));
        }
    }
    let (delta, binding) = delta.unwrap_or((Q::zero(), 0));
    (eps, delta, binding)
}

/// Builds `C_k` from children `{A_i}` (left), `{B_i}` (right) and samplers
/// `g_i` for `i <= ⌈k/2⌉`.
///
/// Structural requirements (matching sampler shapes, room for padding,
/// disjoint prefix/suffix reads of `y`) always abort. The hypotheses the
/// error bound depends on abort under [`HypothesisPolicy::Enforce`] and are
/// only recorded under [`HypothesisPolicy::Record`].
pub fn build_ck(
    lefts: &[RobustPrpd],
    rights: &[RobustPrpd],
    samplers: &[Sampler],
    cfg: &CkConfig,
) -> Result<(RobustPrpd, CkReport)> {
    let k = cfg.k;
    let half = k.div_ceil(2);
    if lefts.len() < k + 1 || rights.len() < k + 1 || samplers.len() < half + 1 {
        return Err(Error::input(format!(
            "precision {k} needs {} children per side and {} samplers",
            k + 1,
            half + 1
        )));
    }
    let (lefts, rights, samplers) = (&lefts[..=k], &rights[..=k], &samplers[..=half]);
    let out_len = lefts[0].out_len();
    let d_step = lefts[0].d_step();
    if lefts.iter().chain(rights).any(|c| c.out_len() != out_len || c.d_step() != d_step) {
        return Err(Error::input("all children must share output length and step width"));
    }
    if lefts.iter().chain(rights).any(|c| c.s_in() == 0 && c.s_out() == 0) {
        return Err(Error::input("children need a non-empty seed"));
    }
    let steps = out_len / d_step;

    for (i, g) in samplers.iter().enumerate() {
        g.require_cert(cfg.trust_assumed)?;
        if g.m() != lefts[i].seed_len() || g.m() != rights[i].seed_len() {
            return Err(Error::input(format!(
                "sampler {i} outputs {} bits but the flattened children take {} and {}",
                g.m(),
                lefts[i].seed_len(),
                rights[i].seed_len()
            )));
        }
    }

    let child_out = lefts.iter().chain(rights).map(|c| c.s_out()).max().unwrap_or(0);
    let sampled_seed = (0..=half)
        .map(|i| lefts[i].seed_len().max(rights[i].seed_len()))
        .max()
        .unwrap_or(0);
    let declared_n = samplers.iter().find(|g| !g.is_enumeration()).map(|g| g.n());
    let s_out = cfg
        .s_out
        .or(declared_n)
        .unwrap_or(child_out.max(sampled_seed));
    if s_out < child_out {
        return Err(Check::int("s_out(G_i) <= s_out".into(), child_out as u64, s_out as u64).to_error());
    }
    if let Some(g) = samplers.iter().find(|g| !g.is_enumeration() && g.n() != s_out) {
        return Err(Error::input(format!(
            "sampler reads {} outer bits but the outer seed has {s_out}",
            g.n()
        )));
    }

    let len_a = |i: usize| if i <= half { samplers[i].d() } else { lefts[i].s_in() };
    let len_b = |j: usize| if j <= half { samplers[j].d() } else { rights[j].s_in() };
    let mut need_in = 0;
    let mut need_name = String::new();
    for i in 0..=k {
        for j in 0..=k - i {
            let need = len_a(i) + len_b(j);
            if need > need_in {
                need_in = need;
                need_name = match (i <= half, j <= half) {
                    (true, true) => format!("d_{i} + d_{j} <= s_in"),
                    (false, _) => format!("s_in(A_{i}) + d_{j} <= s_in"),
                    (true, false) => format!("d_{i} + s_in(B_{j}) <= s_in"),
                };
            }
        }
    }
    let s_in = cfg.s_in.unwrap_or(need_in);
    if s_in < need_in {
        return Err(Check::int(need_name, need_in as u64, s_in as u64).to_error());
    }

    let mut checks = Vec::new();
    for (side, children) in [("A", lefts), ("B", rights)] {
        for (i, c) in children.iter().enumerate() {
            let target = qpow(&cfg.gamma, i as u32 + 1);
            match c.error_bound() {
                Some(e) => checks.push(Check::q(format!("error({side}_{i}) <= gamma^{}", i + 1), e, &target)),
                None => checks.push(Check {
                    name: format!("error({side}_{i}) <= gamma^{}", i + 1),
                    lhs: "unproven".into(),
                    rhs: fmt_q(&target),
                    holds: false,
                }),
            }
            checks.push(Check::int(
                format!("mu({side}_{i}) <= binom(m-1, {i})"),
                c.mu(),
                binom(steps as u64 - 1, i as u64),
            ));
        }
    }
    let (eps_required, delta_required, delta_binding) = sampler_requirements(&cfg.gamma, cfg.width, steps, k);
    for i in 0..=half {
        checks.push(Check::int(format!("s(G_{i}) <= s_out"), sampled_seed_of(lefts, rights, i) as u64, s_out as u64));
        let cert = samplers[i].cert().expect("checked above");
        let name = format!("eps_{i} <= gamma^{}/(w*binom(m-1,{i}))", i + 1);
        checks.push(match &eps_required[i] {
            Some(req) => Check::q(name, &cert.eps, req),
            None => Check {
                name,
                lhs: fmt_q(&cert.eps),
                rhs: "undefined (binomial is 0)".into(),
                holds: false,
            },
        });
        checks.push(Check::q(
            format!("delta_{i} <= gamma^{}/(w^2*binom(2m-1,{delta_binding}))", k + 1),
            &cert.delta,
            &delta_required,
        ));
    }

    let mut mu: u128 = 0;
    let terms = telescoping_terms(k);
    for t in &terms {
        mu = lefts[t.i]
            .mu()
            .checked_mul(rights[t.j].mu())
            .and_then(|p| mu.checked_add(p))
            .ok_or_else(|| Error::input("weight overflows 128 bits"))?;
    }
    checks.push(Check::int(
        format!("mu(C_{k}) <= binom(2m-1, {k})"),
        mu,
        binom(2 * steps as u64 - 1, k as u64),
    ));

    if cfg.policy == HypothesisPolicy::Enforce {
        if let Some(c) = checks.iter().find(|c| !c.holds) {
            return Err(c.to_error());
        }
    }

    let prepare = |children: &[RobustPrpd], is_left: bool| -> Result<Vec<Side>> {
        children
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i <= half {
                    Ok(Side {
                        child: c.flatten(),
                        sampler: Some(samplers[i].clone().with_outer_len(s_out)),
                        y_len: samplers[i].d(),
                    })
                } else {
                    Ok(Side {
                        child: c.pad_seeds(s_out, c.s_in())?,
                        sampler: None,
                        y_len: if is_left { len_a(i) } else { len_b(i) },
                    })
                }
            })
            .collect()
    };
    let merge = Merge {
        k,
        out_len: 2 * out_len,
        s_out,
        s_in,
        mu,
        lefts: prepare(lefts, true)?,
        rights: prepare(rights, false)?,
        terms,
    };
    let report = CkReport {
        s_out,
        s_in,
        mu,
        checks,
        eps_required,
        delta_required,
        delta_binding,
    };
    let bound = report.all_hold().then(|| level_error_bound(&cfg.gamma, k));
    Ok((RobustPrpd::from_merge(merge, cfg.width, d_step, bound), report))
}

fn sampled_seed_of(lefts: &[RobustPrpd], rights: &[RobustPrpd], i: usize) -> usize {
    lefts[i].seed_len().max(rights[i].seed_len())
}

/// How samplers are instantiated inside the recursion.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerMode {
    /// `(0, 0)`-samplers that enumerate every seed.
    ExactEnumeration,
    /// Heuristic samplers certified by brute force at build time.
    CertifiedBackend(CertifiedBackend),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    ExpanderWalk { degree_bits: usize },
    SeededHash,
    XorShift,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertifiedBackend {
    pub kind: BackendKind,
    /// Sampler seeds are this many bits shorter than their outputs (at least 1 bit).
    pub seed_deficit: usize,
    /// Outer seed bits added beyond the smallest admissible outer seed.
    pub extra_outer_bits: usize,
    pub key: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecursionParams {
    /// Base γ; defaults to `n^-4` for the padded length `n`.
    #[serde(with = "opt_q_str")]
    pub gamma: Option<Q>,
    /// Precision index; derived from ε when absent.
    pub k: Option<usize>,
    /// Sampler constant used by the ledger bounds.
    pub c: f64,
    pub mode: SamplerMode,
    pub policy: HypothesisPolicy,
    pub trust_assumed: bool,
    pub d_step: usize,
}

impl Default for RecursionParams {
    fn default() -> Self {
        RecursionParams {
            gamma: None,
            k: None,
            c: 1.0,
            mode: SamplerMode::ExactEnumeration,
            policy: HypothesisPolicy::Enforce,
            trust_assumed: false,
            d_step: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerRecord {
    pub i: usize,
    pub backend: String,
    pub n: usize,
    pub d: usize,
    pub m: usize,
    /// `⌈c i log(n/γ) + 2c log(max(k,1) n w/γ)⌉`.
    pub d_theory: u64,
    #[serde(with = "opt_q_str")]
    pub eps_required: Option<Q>,
    #[serde(with = "q_str")]
    pub delta_required: Q,
    pub delta_binding: usize,
    pub certificate: Option<Certificate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerNode {
    pub h: usize,
    pub k: usize,
    pub terminal: bool,
    pub s_out: usize,
    pub s_in: usize,
    pub mu: u128,
    #[serde(with = "opt_q_str")]
    pub level_gamma: Option<Q>,
    #[serde(with = "opt_q_str")]
    pub error_bound: Option<Q>,
    pub samplers: Vec<SamplerRecord>,
    pub checks: Vec<Check>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedLedger {
    pub n: usize,
    pub n_padded: usize,
    pub w: usize,
    pub d_step: usize,
    pub k: usize,
    #[serde(with = "q_str")]
    pub gamma: Q,
    pub c: f64,
    pub mode: SamplerMode,
    pub nodes: Vec<LedgerNode>,
}

impl SeedLedger {
    pub fn node(&self, h: usize, k: usize) -> Option<&LedgerNode> {
        self.nodes.iter().find(|n| n.h == h && n.k == k)
    }
}

/// Smallest `k >= 0` with `(n^{-1/2})^{k+1} <= eps`.
pub fn precision_for(n: usize, eps: &Q) -> Result<usize> {
    if eps <= &Q::zero() {
        return Err(Error::input("target error must be positive"));
    }
    if n < 2 {
        return Ok(0);
    }
    let eps2 = eps * eps;
    let mut pow = qint(n as u64);
    for k in 0..256 {
        if &pow * &eps2 >= Q::one() {
            return Ok(k);
        }
        pow *= qint(n as u64);
    }
    Err(Error::input("target error too small"))
}

struct Builder<'p> {
    params: &'p RecursionParams,
    n: usize,
    w: usize,
    gamma: Q,
    memo: HashMap<(usize, usize), RobustPrpd>,
    ledger: SeedLedger,
}

fn log2_q(x: &Q) -> f64 {
    let (n, d) = (x.numer(), x.denom());
    let bits = |v: &BigInt| {
        let b = v.bits();
        if b <= 60 {
            v.to_f64().unwrap_or(f64::NAN).log2()
        } else {
            let shift = b - 60;
            (v >> shift).to_f64().unwrap_or(f64::NAN).log2() + shift as f64
        }
    };
    bits(n) - bits(d)
}

impl Builder<'_> {
    fn d_theory(&self, i: usize, k: usize) -> u64 {
        let c = self.params.c;
        let n = self.n as f64;
        let lg = log2_q(&self.gamma);
        let v = c * i as f64 * (n.log2() - lg) + 2.0 * c * ((k.max(1) as f64 * n * self.w as f64).log2() - lg);
        v.ceil().max(0.0) as u64
    }

    fn node(&mut self, h: usize, k: usize) -> Result<RobustPrpd> {
        if let Some(p) = self.memo.get(&(h, k)) {
            return Ok(p.clone());
        }
        let d_step = self.params.d_step;
        if h == 0 || 2 * k >= 1 << h {
            let p = RobustPrpd::identity((1 << h) * d_step, self.w, d_step)?;
            self.ledger.nodes.push(LedgerNode {
                h,
                k,
                terminal: true,
                s_out: 0,
                s_in: p.s_in(),
                mu: 1,
                level_gamma: None,
                error_bound: p.error_bound().cloned(),
                samplers: vec![],
                checks: vec![],
            });
            self.memo.insert((h, k), p.clone());
            return Ok(p);
        }
        let children = (0..=k).map(|i| self.node(h - 1, i)).collect::<Result<Vec<_>>>()?;
        let level_gamma = qpow(&qint(11), h as u32 - 1) * &self.gamma;
        let half = k.div_ceil(2);
        let steps = 1usize << (h - 1);
        let child_out = children.iter().map(|c| c.s_out()).max().unwrap_or(0);
        let sampled = (0..=half).map(|i| children[i].seed_len()).max().unwrap_or(0);
        let (eps_req, delta_req, binding) = sampler_requirements(&level_gamma, self.w, steps, k);
        let mut samplers = Vec::new();
        let s_out = match &self.params.mode {
            SamplerMode::ExactEnumeration => {
                let s_out = child_out.max(sampled);
                for c in &children[..=half] {
                    samplers.push(Sampler::enumeration(c.seed_len())?.with_outer_len(s_out));
                }
                s_out
            }
            SamplerMode::CertifiedBackend(b) => {
                let s_out = child_out.max(sampled) + b.extra_outer_bits;
                for (i, c) in children[..=half].iter().enumerate() {
                    let m = c.seed_len();
                    let d = m.saturating_sub(b.seed_deficit).max(1);
                    let key = b.key ^ ((h as u64) << 48) ^ ((k as u64) << 32) ^ i as u64;
                    let g = match b.kind {
                        BackendKind::ExpanderWalk { degree_bits } => Sampler::expander_walk(s_out, d, m, degree_bits, key)?,
                        BackendKind::SeededHash => Sampler::seeded_hash(s_out, d, m, key)?,
                        BackendKind::XorShift => Sampler::xor_shift(s_out, m, key)?,
                    };
                    let profile = g.tv_profile()?;
                    let g = match &eps_req[i] {
                        Some(req) if profile.verdict(req, &delta_req) => g.certified(req, &delta_req)?,
                        _ => {
                            if self.params.policy == HypothesisPolicy::Enforce {
                                let best = profile.min_eps(&delta_req);
                                return Err(Error::Construction {
                                    inequality: format!("eps_{i} <= gamma^{}/(w*binom(m-1,{i}))", i + 1),
                                    lhs: fmt_q(&best),
                                    rhs: eps_req[i].as_ref().map(fmt_q).unwrap_or_else(|| "undefined".into()),
                                });
                            }
                            g.certified_best(&delta_req)?
                        }
                    };
                    samplers.push(g);
                }
                s_out
            }
        };
        let cfg = CkConfig {
            k,
            gamma: level_gamma.clone(),
            width: self.w,
            s_out: Some(s_out),
            s_in: None,
            policy: self.params.policy,
            trust_assumed: self.params.trust_assumed,
        };
        let (p, report) = build_ck(&children, &children, &samplers, &cfg)?;
        let records = samplers
            .iter()
            .enumerate()
            .map(|(i, g)| SamplerRecord {
                i,
                backend: g.backend_name().into(),
                n: g.n(),
                d: g.d(),
                m: g.m(),
                d_theory: self.d_theory(i, k),
                eps_required: eps_req[i].clone(),
                delta_required: delta_req.clone(),
                delta_binding: binding,
                certificate: g.cert().cloned(),
            })
            .collect();
        self.ledger.nodes.push(LedgerNode {
            h,
            k,
            terminal: false,
            s_out: p.s_out(),
            s_in: p.s_in(),
            mu: p.mu(),
            level_gamma: Some(level_gamma),
            error_bound: p.error_bound().cloned(),
            samplers: records,
            checks: report.checks,
        });
        self.memo.insert((h, k), p.clone());
        Ok(p)
    }
}

/// The recursion with the ledger of every node attempted, even on failure.
pub fn recursive_prpd_partial(
    n: usize,
    w: usize,
    eps: Option<&Q>,
    params: &RecursionParams,
) -> (Result<RobustPrpd>, Option<SeedLedger>) {
    let setup = || -> Result<(usize, usize, Q)> {
        if n == 0 || w == 0 || params.d_step == 0 {
            return Err(Error::input("n, w and d_step must be positive"));
        }
        if params.c.is_nan() || params.c <= 0.0 {
            return Err(Error::input("the sampler constant c must be positive"));
        }
        let n_pad = n.next_power_of_two();
        let k = match (params.k, eps) {
            (Some(k), _) => k,
            (None, Some(e)) => precision_for(n_pad, e)?,
            (None, None) => return Err(Error::input("give either k or a target error")),
        };
        let gamma = match &params.gamma {
            Some(g) => g.clone(),
            None => Q::one() / qpow(&qint(n_pad as u64), 4),
        };
        if gamma <= Q::zero() || gamma >= Q::one() {
            return Err(Error::input("gamma must lie strictly between 0 and 1"));
        }
        Ok((n_pad, k, gamma))
    };
    let (n_pad, k, gamma) = match setup() {
        Ok(v) => v,
        Err(e) => return (Err(e), None),
    };
    let mut b = Builder {
        params,
        n: n_pad,
        w,
        gamma: gamma.clone(),
        memo: HashMap::new(),
        ledger: SeedLedger {
            n,
            n_padded: n_pad,
            w,
            d_step: params.d_step,
            k,
            gamma,
            c: params.c,
            mode: params.mode.clone(),
            nodes: vec![],
        },
    };
    let top = b.node(n_pad.trailing_zeros() as usize, k);
    b.ledger.nodes.sort_by_key(|n| (n.h, n.k));
    (top, Some(b.ledger))
}

/// Builds `G_{log n, k}` bottom-up. Both halves of every merge use the same
/// child generator. `n` is padded to a power of two; evaluate the result on
/// [`crate::robp::Robp::padded_to`].
pub fn recursive_prpd(n: usize, w: usize, eps: Option<&Q>, params: &RecursionParams) -> Result<(RobustPrpd, SeedLedger)> {
    let (top, ledger) = recursive_prpd_partial(n, w, eps, params);
    Ok((top?, ledger.expect("ledger exists when the build succeeds")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub h: usize,
    pub k: usize,
    pub quantity: String,
    pub used: String,
    pub bound: String,
    pub slack: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerReport {
    pub rows: Vec<LedgerRow>,
    pub all_ok: bool,
}

/// Replays the inductive seed-length and weight bounds for every node, plus
/// the construction hypotheses recorded at build time.
pub fn ledger_check(ledger: &SeedLedger, c: f64) -> LedgerReport {
    let n = ledger.n_padded as f64;
    let lg = -log2_q(&ledger.gamma);
    let log_n_g = n.log2() + lg;
    let log_w_g = (ledger.w as f64).log2() + lg;
    let mut rows = Vec::new();
    let row_f = |h, k, quantity: &str, used: usize, bound: f64| LedgerRow {
        h,
        k,
        quantity: quantity.into(),
        used: used.to_string(),
        bound: format!("{bound:.3}"),
        slack: bound - used as f64,
        ok: used as f64 <= bound,
    };
    for node in &ledger.nodes {
        let (h, k) = (node.h, node.k);
        let (hf, kf) = (h as f64, k as f64);
        let out_bound = if k <= 1 {
            hf * (3.0 * c * kf * log_n_g + 7.0 * c * log_w_g)
        } else {
            4.0 * c * kf * log_n_g + ((kf.log2().ceil()) + 1.0) * hf * (10.0 * c * log_w_g)
        };
        let in_bound = if k <= 1 {
            c * kf * log_n_g + 4.0 * c * log_w_g
        } else {
            c * kf * log_n_g + hf * (4.0 * c * ((kf * ledger.w as f64).log2() + lg))
        };
        rows.push(row_f(h, k, "s_out", node.s_out, out_bound));
        rows.push(row_f(h, k, "s_in", node.s_in, in_bound));
        let mu_bound = binom((1u64 << h) - 1, k as u64).max(BigInt::one());
        let mu = BigInt::from(node.mu);
        rows.push(LedgerRow {
            h,
            k,
            quantity: "mu".into(),
            used: mu.to_string(),
            bound: mu_bound.to_string(),
            slack: (&mu_bound - &mu).to_f64().unwrap_or(f64::INFINITY),
            ok: mu <= mu_bound,
        });
        for check in &node.checks {
            rows.push(LedgerRow {
                h,
                k,
                quantity: check.name.clone(),
                used: check.lhs.clone(),
                bound: check.rhs.clone(),
                slack: f64::NAN,
                ok: check.holds,
            });
        }
    }
    let all_ok = rows.iter().all(|r| r.ok);
    LedgerReport { rows, all_ok }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::{q, qr};

    #[test]
    fn binomials() {
        assert_eq!(binom(5, 2), BigInt::from(10));
        assert_eq!(binom(0, 0), BigInt::from(1));
        assert_eq!(binom(1, 2), BigInt::from(0));
        assert_eq!(binom(63, 3), BigInt::from(39711));
    }

    #[test]
    fn telescoping_collapses_on_exact_inputs() {
        let a = Mat::<Q>::from_rows(vec![vec![qr(1, 2), qr(1, 2)], vec![q(0), q(1)]]).unwrap();
        let b = Mat::<Q>::from_rows(vec![vec![qr(1, 3), qr(2, 3)], vec![qr(1, 4), qr(3, 4)]]).unwrap();
        for k in 0..4 {
            let r = telescoping_product(&vec![a.clone(); k + 1], &vec![b.clone(); k + 1], k).unwrap();
            assert_eq!(r, a.mul(&b));
        }
        assert!(telescoping_product(std::slice::from_ref(&a), &[b], 1).is_err());
    }

    #[test]
    fn telescoping_bound_k0() {
        let g = qr(1, 16);
        assert_eq!(telescoping_error_bound(&g, 0), q(2) * &g + &g * &g);
    }

    #[test]
    fn precision_from_target() {
        assert_eq!(precision_for(4, &qr(1, 2)).unwrap(), 0);
        assert_eq!(precision_for(4, &qr(1, 4)).unwrap(), 1);
        assert_eq!(precision_for(16, &qr(1, 16)).unwrap(), 1);
        assert_eq!(precision_for(16, &qr(1, 17)).unwrap(), 2);
    }

    #[test]
    fn requirements_pick_conservative_delta() {
        let (eps, delta, binding) = sampler_requirements(&qr(1, 256), 2, 4, 2);
        assert_eq!(eps.len(), 2);
        assert_eq!(eps[0], Some(qr(1, 512)));
        assert_eq!(eps[1], Some(qr(1, 256 * 256 * 2 * 3)));
        assert_eq!(binding, 1);
        assert_eq!(delta, qpow(&qr(1, 256), 3) / q(4 * 7));
    }

    #[test]
    fn small_recursion_ledger() {
        let params = RecursionParams {
            k: Some(1),
            ..RecursionParams::default()
        };
        let (p, ledger) = recursive_prpd(4, 2, None, &params).unwrap();
        assert_eq!(p.steps(), 4);
        assert_eq!(p.error_bound(), Some(&level_error_bound(&(q(11) * qpow(&qr(1, 4), 4)), 1)));
        let report = ledger_check(&ledger, 1.0);
        assert!(report.all_ok, "{:?}", report.rows.iter().filter(|r| !r.ok).collect::<Vec<_>>());
        assert_eq!(p.mu(), 3);
    }
}
