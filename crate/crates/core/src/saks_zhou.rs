//! Snap rounding, recursive powering with offline randomness reused across
//! levels, and the sampler wrapper that turns a bounded generator into an
//! offline matrix-power approximator.

use std::collections::HashMap;
use std::sync::Mutex;

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::capacity::check_capacity;
use crate::error::{Error, Result};
use crate::eval::Evaluator;
use crate::forms::SeedForm;
use crate::mat::{pow2, pow2_neg, q_str, Mat, Q};
use crate::prpd::RobustPrpd;
use crate::robp::Robp;
use crate::sampler::Sampler;

fn qint(v: u64) -> Q {
    Q::from_integer(v.into())
}

/// `max(⌊x 2^d - 2^{-d} y⌋ 2^{-d}, 0)` with `y` read as an integer in `[0, 2^d)`.
pub fn snap_value(x: &Q, y: u64, d: u32) -> Q {
    let shifted = x * pow2(d) - qint(y) * pow2_neg(d);
    let v = Q::from_integer(shifted.floor().to_integer()) * pow2_neg(d);
    if v.is_negative() {
        Q::zero()
    } else {
        v
    }
}

/// Entrywise snap with offset `y`, a `d`-bit string.
pub fn snap_matrix(m: &Mat<Q>, y: &BitString) -> Mat<Q> {
    let (v, d) = (y.value() as u64, y.len() as u32);
    m.map(|x| snap_value(x, v, d))
}

/// Fraction of offsets `y ∈ {0,1}^d` with `Snap_d(a, y) != Snap_d(b, y)`.
pub fn snap_collision_rate(a: &Mat<Q>, b: &Mat<Q>, d: u32) -> Result<Q> {
    check_capacity("snap offsets", d as usize)?;
    let differ = (0..1u64 << d)
        .filter(|&y| {
            a.entries()
                .iter()
                .zip(b.entries())
                .any(|(x, z)| snap_value(x, y, d) != snap_value(z, y, d))
        })
        .count();
    Ok(qint(differ as u64) / pow2(d))
}

/// `w^2 (2^d ε + 2^{-d})` for `ε = ||a - b||_max`.
pub fn collision_bound(a: &Mat<Q>, b: &Mat<Q>, d: u32) -> Q {
    let w = qint(a.dim() as u64);
    let eps = a.sub(b).max_norm();
    &w * &w * (pow2(d) * eps + pow2_neg(d))
}

/// Rounds every entry down to the `2^{-d}` grid, clamps negatives to 0 and
/// trims rows whose sum exceeds 1 from the right, so the result is a
/// substochastic grid matrix.
pub fn round_to_grid(m: &Mat<Q>, d: u32) -> Mat<Q> {
    let scale = pow2(d);
    let mut counts: Vec<Vec<BigInt>> = (0..m.dim())
        .map(|i| {
            m.row(i)
                .iter()
                .map(|x| (x * &scale).floor().to_integer().max(BigInt::zero()))
                .collect()
        })
        .collect();
    let full = BigInt::one() << d;
    for row in &mut counts {
        let mut excess: BigInt = row.iter().sum::<BigInt>() - &full;
        for v in row.iter_mut().rev() {
            if !excess.is_positive() {
                break;
            }
            let cut = (&*v).min(&excess).clone();
            *v -= &cut;
            excess -= cut;
        }
    }
    Mat::from_fn(m.dim(), |i, j| Q::new(counts[i][j].clone(), full.clone()))
}

/// The `(n1, w+1, d)` program whose walk from real state `i` lands on `j`
/// with probability `M'_{ij}`; leftover labels go to the absorbing state `w`.
pub fn robp_from_matrix(m: &Mat<Q>, n1: usize, d: usize) -> Result<Robp> {
    let w = m.dim();
    let scale = pow2(d as u32);
    let labels = 1usize << d;
    let mut step = vec![vec![w; w + 1]; labels];
    for i in 0..w {
        let mut next = 0usize;
        for j in 0..w {
            let scaled = m.get(i, j) * &scale;
            if !scaled.is_integer() || scaled.is_negative() {
                return Err(Error::input(format!(
                    "entry ({i}, {j}) = {} is not a non-negative multiple of 2^-{d}",
                    m.get(i, j)
                )));
            }
            let count = scaled.to_integer().to_usize().unwrap_or(usize::MAX);
            if count > labels - next {
                return Err(Error::input(format!("row {i} sums above 1")));
            }
            for label in step.iter_mut().skip(next).take(count) {
                label[i] = j;
            }
            next += count;
        }
    }
    Robp::new(n1, w + 1, d, vec![step; n1])
}

/// A random substochastic matrix with small rational entries, reproducible
/// from `seed`. Each row is `a_j / (Σ a + slack)` for random integer weights.
pub fn random_substochastic(w: usize, seed: u64) -> Mat<Q> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Mat::zeros(w);
    for i in 0..w {
        let weights: Vec<u64> = (0..w).map(|_| rng.gen_range(0..12)).collect();
        let slack = rng.gen_range(0..4u64);
        let total = weights.iter().sum::<u64>() + slack;
        for (j, &a) in weights.iter().enumerate() {
            if total > 0 {
                m.set(i, j, qint(a) / qint(total));
            }
        }
    }
    m
}

/// An offline randomized algorithm for the `n1`-th power of a substochastic matrix.
pub trait Approximator: Sync {
    /// The power computed.
    fn power(&self) -> usize;

    /// Bits of offline randomness read.
    fn y_len(&self) -> usize;

    fn approx(&self, m: &Mat<Q>, y: &BitString) -> Result<Mat<Q>>;
}

/// `M^{n1}` exactly; ignores `y`.
pub struct ExactPower {
    pub n1: usize,
}

impl Approximator for ExactPower {
    fn power(&self) -> usize {
        self.n1
    }

    fn y_len(&self) -> usize {
        0
    }

    fn approx(&self, m: &Mat<Q>, _y: &BitString) -> Result<Mat<Q>> {
        Ok(m.pow(self.n1))
    }
}

/// The smallest `d` with `2^d >= 3 n1 w / ε`.
pub fn armoni_bits(n1: usize, w: usize, eps: &Q) -> Result<usize> {
    if !eps.is_positive() {
        return Err(Error::input("approximation error must be positive"));
    }
    let need = qint(3 * n1 as u64 * w as u64) / eps;
    (0..64)
        .find(|&d| pow2(d) >= need)
        .map(|d| d as usize)
        .ok_or_else(|| Error::input("approximation error too small"))
}

/// Generator-plus-sampler approximator for the `n1`-th power of `w x w`
/// matrices: round to `d = log(3 n1 w / ε)` bits, build the grid program, and
/// average the signed walks over the generator's flattened seeds drawn
/// through the sampler at `y`.
pub struct Armoni {
    prpd: RobustPrpd,
    sampler: Sampler,
    n1: usize,
    w: usize,
    d: usize,
    eps: Q,
}

impl Armoni {
    /// Checks the wrapper's contract: the generator covers `(n1, w+1, d)`
    /// programs with error at most `ε/3`, and the sampler is certified at
    /// `(ε/(6µ), ε/w^2)` over the flattened seed.
    pub fn new(prpd: RobustPrpd, sampler: Sampler, n1: usize, w: usize, eps: Q) -> Result<Self> {
        let d = armoni_bits(n1, w, &eps)?;
        if prpd.steps() != n1 || prpd.d_step() != d || prpd.width() != w + 1 {
            return Err(Error::contract(format!(
                "generator covers ({}, {}, {}) programs, the approximator needs ({n1}, {}, {d})",
                prpd.steps(),
                prpd.width(),
                prpd.d_step(),
                w + 1
            )));
        }
        match prpd.error_bound() {
            Some(e) if *e <= &eps / qint(3) => {}
            _ => return Err(Error::contract("generator error is not proven to be at most eps/3")),
        }
        let flat = prpd.flatten();
        if sampler.m() != flat.s_out() {
            return Err(Error::contract(format!(
                "sampler outputs {} bits, the flattened generator takes {}",
                sampler.m(),
                flat.s_out()
            )));
        }
        let mu = Q::from_integer(prpd.mu().into());
        let w_q = qint(w as u64);
        let need_eps = &eps / (qint(6) * mu);
        let need_delta = &eps / (&w_q * &w_q);
        if !sampler.is_certified_at(&need_eps, &need_delta) {
            return Err(Error::contract(format!(
                "sampler is not certified at ({}, {})",
                need_eps, need_delta
            )));
        }
        Ok(Armoni {
            prpd: flat,
            sampler,
            n1,
            w,
            d,
            eps,
        })
    }

    pub fn bits(&self) -> usize {
        self.d
    }

    pub fn eps(&self) -> &Q {
        &self.eps
    }
}

impl Approximator for Armoni {
    fn power(&self) -> usize {
        self.n1
    }

    fn y_len(&self) -> usize {
        if self.sampler.is_enumeration() {
            0
        } else {
            self.sampler.n()
        }
    }

    fn approx(&self, m: &Mat<Q>, y: &BitString) -> Result<Mat<Q>> {
        armoni_pow(m, self, y)
    }
}

/// One call of the wrapper on `M` with offline randomness `y`.
pub fn armoni_pow(m: &Mat<Q>, arm: &Armoni, y: &BitString) -> Result<Mat<Q>> {
    if m.dim() != arm.w {
        return Err(Error::input(format!("approximator built for width {}, got {}", arm.w, m.dim())));
    }
    let grid = round_to_grid(m, arm.d as u32);
    let robp = robp_from_matrix(&grid, arm.n1, arm.d)?;
    let ev = Evaluator::<Q>::new(&robp);
    let mf = ev.matrix_form(&arm.prpd, 0, arm.n1)?;
    let form = mf.robust_form();
    debug_assert_eq!(form.outer_len(), arm.sampler.m());
    Ok(arm.sampler.estimate_matrix(&form, y)?.top_left(arm.w))
}

type ApproxKey = (Mat<Q>, BitString);

/// Caches results per `(M, y)`; the powering chain revisits the same inputs often.
pub struct Memoized<A> {
    inner: A,
    cache: Mutex<HashMap<ApproxKey, Mat<Q>>>,
}

impl<A: Approximator> Memoized<A> {
    pub fn new(inner: A) -> Self {
        Memoized {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn inner(&self) -> &A {
        &self.inner
    }
}

impl<A: Approximator> Approximator for Memoized<A> {
    fn power(&self) -> usize {
        self.inner.power()
    }

    fn y_len(&self) -> usize {
        self.inner.y_len()
    }

    fn approx(&self, m: &Mat<Q>, y: &BitString) -> Result<Mat<Q>> {
        let key = (m.clone(), *y);
        if let Some(v) = self.cache.lock().expect("approximator cache poisoned").get(&key) {
            return Ok(v.clone());
        }
        let v = self.inner.approx(m, y)?;
        self.cache
            .lock()
            .expect("approximator cache poisoned")
            .insert(key, v.clone());
        Ok(v)
    }
}

/// `n = n1^{n2}` with snap precision `d`, offline string `y` and per-level
/// offsets `z_1..z_{n2}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SzSchedule {
    pub n: usize,
    pub n1: usize,
    pub n2: usize,
    pub d: usize,
    /// Per-level approximation error of the approximator.
    #[serde(with = "q_str")]
    pub eps: Q,
    pub y: BitString,
    pub z: Vec<BitString>,
}

impl SzSchedule {
    pub fn new(n: usize, n1: usize, n2: usize, d: usize, eps: Q, y: BitString, z: Vec<BitString>) -> Result<Self> {
        let s = SzSchedule { n, n1, n2, d, eps, y, z };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d > 62 {
            return Err(Error::input(format!("snap precision {} is outside 1..=62", self.d)));
        }
        if self.n1 == 0 || self.n2 == 0 {
            return Err(Error::input("n1 and n2 must be positive"));
        }
        if self.n1 == 1 && self.n2 > 1 {
            return Err(Error::input("n1 = 1 with several levels never reaches n"));
        }
        let power = (self.n1 as u128).checked_pow(self.n2 as u32);
        if power != Some(self.n as u128) {
            return Err(Error::input(format!("n1^n2 = {}^{} is not n = {}", self.n1, self.n2, self.n)));
        }
        if self.z.len() != self.n2 || self.z.iter().any(|z| z.len() != self.d) {
            return Err(Error::input(format!("need {} offsets of {} bits", self.n2, self.d)));
        }
        Ok(())
    }
}

/// `M̂_0 = M`, `M̂_i = Snap_d(Pow(M̂_{i-1}, y), z_i)`.
pub fn sz_power(m: &Mat<Q>, schedule: &SzSchedule, approx: &dyn Approximator) -> Result<Mat<Q>> {
    Ok(sz_trace(m, schedule, approx)?.result().clone())
}

/// Every level of one powering run, alongside the chain
/// `M̄_i = Snap_d(M̄_{i-1}^{n1}, z_i)` it should coincide with.
#[derive(Clone, Debug, PartialEq)]
pub struct SzTrace {
    pub hats: Vec<Mat<Q>>,
    pub bars: Vec<Mat<Q>>,
    /// Per level: `||Pow(M̄_{i-1}, y) - M̄_{i-1}^{n1}||_max <= ε`.
    pub approx_ok: Vec<bool>,
    /// Per level: `Snap(Pow(M̄_{i-1}, y), z_i) = Snap(M̄_{i-1}^{n1}, z_i)`.
    pub snap_ok: Vec<bool>,
}

impl SzTrace {
    pub fn result(&self) -> &Mat<Q> {
        self.hats.last().expect("trace starts with M")
    }

    /// Both good events held at every level.
    pub fn good(&self) -> bool {
        self.approx_ok.iter().chain(&self.snap_ok).all(|&b| b)
    }
}

pub fn sz_trace(m: &Mat<Q>, schedule: &SzSchedule, approx: &dyn Approximator) -> Result<SzTrace> {
    schedule.validate()?;
    if approx.power() != schedule.n1 {
        return Err(Error::input(format!(
            "approximator computes power {}, schedule needs {}",
            approx.power(),
            schedule.n1
        )));
    }
    if approx.y_len() != 0 && schedule.y.len() != approx.y_len() {
        return Err(Error::input(format!(
            "approximator reads {} offline bits, schedule has {}",
            approx.y_len(),
            schedule.y.len()
        )));
    }
    let mut trace = SzTrace {
        hats: vec![m.clone()],
        bars: vec![m.clone()],
        approx_ok: vec![],
        snap_ok: vec![],
    };
    for z in &schedule.z {
        let hat = trace.hats.last().expect("non-empty");
        let bar = trace.bars.last().expect("non-empty");
        let next_hat = snap_matrix(&approx.approx(hat, &schedule.y)?, z);
        let exact = bar.pow(schedule.n1);
        let on_bar = approx.approx(bar, &schedule.y)?;
        trace.approx_ok.push(on_bar.sub(&exact).max_norm() <= schedule.eps);
        let next_bar = snap_matrix(&exact, z);
        trace.snap_ok.push(snap_matrix(&on_bar, z) == next_bar);
        trace.hats.push(next_hat);
        trace.bars.push(next_bar);
    }
    Ok(trace)
}

/// `n w 2^{-d+1}`.
pub fn sz_error_bound(n: usize, w: usize, d: usize) -> Q {
    qint(n as u64 * w as u64) * pow2_neg(d as u32) * qint(2)
}

/// `n2 (ε + w^2 (2^d ε + 2^{-d}))`: one approximation and one snap event per level.
pub fn sz_failure_bound(n2: usize, w: usize, d: usize, eps: &Q) -> Q {
    let w = qint(w as u64);
    qint(n2 as u64) * (eps + &w * &w * (pow2(d as u32) * eps + pow2_neg(d as u32)))
}

/// Exhaustive failure statistics of the powering chain over every
/// `(y, z_1..z_{n2})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SzFailure {
    pub runs: u64,
    /// Runs ending farther than `n w 2^{-d+1}` from `M^n`.
    pub failures: u64,
    /// Runs where some good event failed.
    pub bad_events: u64,
    #[serde(with = "q_str")]
    pub failure_rate: Q,
    #[serde(with = "q_str")]
    pub union_bound: Q,
    #[serde(with = "q_str")]
    pub max_error: Q,
    #[serde(with = "q_str")]
    pub error_bound: Q,
}

impl SzFailure {
    pub fn holds(&self) -> bool {
        self.failure_rate <= self.union_bound
    }
}

pub fn sz_failure_rate(m: &Mat<Q>, n1: usize, n2: usize, d: usize, eps: &Q, approx: &dyn Approximator) -> Result<SzFailure> {
    let y_len = approx.y_len();
    check_capacity("powering randomness", y_len + n2 * d)?;
    let n = n1.pow(n2 as u32);
    let target = m.pow(n);
    let error_bound = sz_error_bound(n, m.dim(), d);
    let mut out = SzFailure {
        runs: 0,
        failures: 0,
        bad_events: 0,
        failure_rate: Q::zero(),
        union_bound: sz_failure_bound(n2, m.dim(), d, eps),
        max_error: Q::zero(),
        error_bound,
    };
    for y in BitString::all(y_len) {
        for zs in BitString::all(n2 * d) {
            let z = (0..n2).map(|i| zs.slice(i * d, d)).collect();
            let sched = SzSchedule::new(n, n1, n2, d, eps.clone(), y, z)?;
            let trace = sz_trace(m, &sched, approx)?;
            let err = trace.result().sub(&target).inf_norm();
            out.runs += 1;
            if err > out.error_bound {
                out.failures += 1;
            }
            if !trace.good() {
                out.bad_events += 1;
            }
            if err > out.max_error {
                out.max_error = err;
            }
        }
    }
    out.failure_rate = qint(out.failures) / qint(out.runs);
    Ok(out)
}

/// The largest `|Snap_d(x, y) - x|` over every `y` and every `x` on the
/// `2^{-fine}` grid in `[0, 1]`, as a multiple of `2^{-2d}` for the record.
pub fn max_snap_shift(d: u32, fine: u32) -> Result<(Q, BigInt)> {
    check_capacity("snap grid", (d + fine) as usize)?;
    let mut worst = Q::zero();
    for i in 0..=(1u64 << fine) {
        let x = qint(i) * pow2_neg(fine);
        for y in 0..1u64 << d {
            let dev = (&x - snap_value(&x, y, d)).abs();
            if dev > worst {
                worst = dev;
            }
        }
    }
    let units = (&worst * pow2(2 * d)).ceil().to_integer();
    Ok((worst, units))
}
