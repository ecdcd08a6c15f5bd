//! Averaging samplers `{0,1}^n x {0,1}^d -> {0,1}^m` with brute-force
//! (ε, δ) certification by per-input total-variation distance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::capacity::check_capacity;
use crate::error::{Error, Result};
use crate::forms::SeedForm;
use crate::mat::{fmt_q, pow2, q_str, Mat, Scalar, Q};

/// SplitMix64 finalizer; the mixing function behind every hashed backend.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn low_bits(v: u64, bits: usize) -> u64 {
    if bits >= 64 {
        v
    } else {
        v & ((1u64 << bits) - 1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backend {
    /// `eval(x, s) = s`; ignores `x`.
    Enumeration,
    /// Walk on the Cayley graph of `Z_2^m` with `2^degree_bits` hashed
    /// generators. The start vertex is read from `x`, walk labels from the
    /// remaining bits of `x` (continued by hashing once they run out); the
    /// output for seed `s` is the vertex reached after `s` steps.
    ExpanderWalk { degree_bits: usize, graph_seed: u64 },
    /// Keyed hash of `(x, s)`.
    SeededHash { key: u64 },
    /// `eval(x, s) = s xor h_key(x)`; requires `d = m`.
    XorShift { key: u64 },
    /// Explicit outputs, index `x * 2^d + s`.
    Table { outputs: Vec<u64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertMethod {
    BruteForce,
    Analytic,
    Assumed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    #[serde(with = "q_str")]
    pub eps: Q,
    #[serde(with = "q_str")]
    pub delta: Q,
    pub method: CertMethod,
    #[serde(with = "crate::mat::opt_q_str")]
    pub max_tv: Option<Q>,
    pub bad_x: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sampler {
    n: usize,
    d: usize,
    m: usize,
    backend: Backend,
    cert: Option<Certificate>,
}

/// Per-`x` total-variation distance from uniform, stored as integer
/// numerators over the common denominator `2^log2_den`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TvProfile {
    log2_den: u32,
    numerators: Vec<u128>,
}

impl TvProfile {
    pub fn len(&self) -> usize {
        self.numerators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.numerators.is_empty()
    }

    pub fn tv(&self, x: usize) -> Q {
        Q::from_integer(self.numerators[x].into()) / pow2(self.log2_den)
    }

    pub fn all(&self) -> Vec<Q> {
        (0..self.len()).map(|x| self.tv(x)).collect()
    }

    pub fn max(&self) -> Q {
        let top = self.numerators.iter().copied().max().unwrap_or(0);
        Q::from_integer(top.into()) / pow2(self.log2_den)
    }

    /// Number of inputs whose distance exceeds `eps`.
    pub fn bad_count(&self, eps: &Q) -> u64 {
        let scaled = eps * pow2(self.log2_den);
        self.numerators
            .iter()
            .filter(|&&v| Q::from_integer(v.into()) > scaled)
            .count() as u64
    }

    /// `|{x : TV > eps}| <= delta * 2^n`.
    pub fn verdict(&self, eps: &Q, delta: &Q) -> bool {
        Q::from_integer(self.bad_count(eps).into()) <= delta * Q::from_integer(self.len().into())
    }

    /// The smallest ε with `verdict(ε, delta)`.
    pub fn min_eps(&self, delta: &Q) -> Q {
        let allowed = (delta * Q::from_integer(self.len().into())).floor();
        let allowed: usize = allowed.to_integer().try_into().unwrap_or(usize::MAX);
        if allowed >= self.len() {
            return Q::from_integer(0.into());
        }
        let mut sorted = self.numerators.clone();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        Q::from_integer(sorted[allowed].into()) / pow2(self.log2_den)
    }
}

impl Sampler {
    fn checked(n: usize, d: usize, m: usize, backend: Backend) -> Result<Self> {
        if n > 64 || d > 64 || m > 64 {
            return Err(Error::input(format!(
                "sampler shape n={n}, d={d}, m={m} exceeds 64 bits"
            )));
        }
        Ok(Sampler {
            n,
            d,
            m,
            backend,
            cert: None,
        })
    }

    /// `eval(x, s) = s`: an exact (0, 0)-sampler. `n` is 0 until set with
    /// [`Sampler::with_outer_len`]; any `x` is accepted.
    pub fn enumeration(m: usize) -> Result<Self> {
        let mut g = Self::checked(0, m, m, Backend::Enumeration)?;
        g.cert = Some(Certificate {
            eps: Q::from_integer(0.into()),
            delta: Q::from_integer(0.into()),
            method: CertMethod::Analytic,
            max_tv: Some(Q::from_integer(0.into())),
            bad_x: Some(0),
        });
        Ok(g)
    }

    pub fn expander_walk(n: usize, d: usize, m: usize, degree_bits: usize, graph_seed: u64) -> Result<Self> {
        if m == 0 || degree_bits == 0 || degree_bits > 16 {
            return Err(Error::input(format!(
                "expander walk needs m >= 1 and 1 <= degree_bits <= 16, got m={m}, degree_bits={degree_bits}"
            )));
        }
        Self::checked(n, d, m, Backend::ExpanderWalk { degree_bits, graph_seed })
    }

    pub fn seeded_hash(n: usize, d: usize, m: usize, key: u64) -> Result<Self> {
        Self::checked(n, d, m, Backend::SeededHash { key })
    }

    pub fn xor_shift(n: usize, m: usize, key: u64) -> Result<Self> {
        Self::checked(n, m, m, Backend::XorShift { key })
    }

    pub fn from_table(n: usize, d: usize, m: usize, outputs: Vec<u64>) -> Result<Self> {
        if n + d > 30 || outputs.len() != 1usize << (n + d) {
            return Err(Error::input(format!(
                "a sampler table over n={n}, d={d} needs 2^{} outputs, got {}",
                n + d,
                outputs.len()
            )));
        }
        if outputs.iter().any(|&o| low_bits(o, m) != o) {
            return Err(Error::input(format!("table output does not fit in {m} bits")));
        }
        Self::checked(n, d, m, Backend::Table { outputs })
    }

    /// Sets the declared outer length of an enumeration sampler.
    pub fn with_outer_len(mut self, n: usize) -> Self {
        if self.backend == Backend::Enumeration {
            self.n = n;
        }
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn is_enumeration(&self) -> bool {
        self.backend == Backend::Enumeration
    }

    pub fn cert(&self) -> Option<&Certificate> {
        self.cert.as_ref()
    }

    pub fn backend_name(&self) -> &'static str {
        match self.backend {
            Backend::Enumeration => "enumeration",
            Backend::ExpanderWalk { .. } => "expander-walk",
            Backend::SeededHash { .. } => "seeded-hash",
            Backend::XorShift { .. } => "xor-shift",
            Backend::Table { .. } => "table",
        }
    }

    fn eval_raw(&self, x: u64, s: u64) -> u64 {
        match &self.backend {
            Backend::Enumeration => s,
            Backend::SeededHash { key } => low_bits(mix64(mix64(mix64(*key) ^ x) ^ s), self.m),
            Backend::XorShift { key } => s ^ low_bits(mix64(*key ^ mix64(x)), self.m),
            Backend::Table { outputs } => outputs[((x << self.d) | s) as usize],
            Backend::ExpanderWalk { .. } => self.walk_outputs(x, s as usize + 1)[s as usize],
        }
    }

    /// The first `count` vertices of the walk for input `x`.
    fn walk_outputs(&self, x: u64, count: usize) -> Vec<u64> {
        let Backend::ExpanderWalk { degree_bits, graph_seed } = self.backend else {
            unreachable!("walk_outputs on a non-walk backend")
        };
        let m = self.m;
        let start_bits = m.min(self.n);
        let mut v = if start_bits == 0 {
            0
        } else {
            (x >> (self.n - start_bits)) << (m - start_bits)
        };
        let rest_bits = self.n - start_bits;
        let rest = low_bits(x, rest_bits);
        let from_x = rest_bits / degree_bits;
        let gens: Vec<u64> = (0..1u64 << degree_bits)
            .map(|j| low_bits(mix64(graph_seed ^ mix64(j)), m))
            .collect();
        let mut out = Vec::with_capacity(count);
        for t in 0..count {
            out.push(v);
            let label = if t < from_x {
                (rest >> (rest_bits - (t + 1) * degree_bits)) & ((1 << degree_bits) - 1)
            } else {
                low_bits(mix64(graph_seed ^ mix64(rest ^ ((t as u64) << 40))), degree_bits)
            };
            v ^= gens[label as usize];
        }
        out
    }

    /// Outputs for every seed `s` in increasing order, as integers.
    pub fn outputs_for(&self, x: u64) -> Vec<u64> {
        assert!(self.d < 40, "refusing to list 2^{} sampler outputs", self.d);
        let count = 1usize << self.d;
        match self.backend {
            Backend::ExpanderWalk { .. } => self.walk_outputs(x, count),
            _ => (0..count as u64).map(|s| self.eval_raw(x, s)).collect(),
        }
    }

    fn check_x(&self, x: &BitString) -> Result<()> {
        if !self.is_enumeration() && x.len() != self.n {
            return Err(Error::input(format!(
                "sampler input has {} bits, expected {}",
                x.len(),
                self.n
            )));
        }
        Ok(())
    }

    pub fn eval(&self, x: &BitString, s: &BitString) -> Result<BitString> {
        self.check_x(x)?;
        if s.len() != self.d {
            return Err(Error::input(format!(
                "sampler seed has {} bits, expected {}",
                s.len(),
                self.d
            )));
        }
        let xv = if self.is_enumeration() { 0 } else { x.value() as u64 };
        BitString::new(self.eval_raw(xv, s.value() as u64) as u128, self.m)
    }

    /// Exact per-`x` total-variation profile.
    pub fn tv_profile(&self) -> Result<TvProfile> {
        check_capacity("sampler certification", self.n + self.d)?;
        check_capacity("sampler output histogram", self.m)?;
        let (d, m) = (self.d as u32, self.m as u32);
        let numerators = (0..1u64 << self.n)
            .into_par_iter()
            .map(|x| {
                let mut counts = vec![0u64; 1usize << m];
                for o in self.outputs_for(x) {
                    counts[o as usize] += 1;
                }
                counts
                    .iter()
                    .map(|&c| ((c as i128) << m).abs_diff(1i128 << d))
                    .sum::<u128>()
            })
            .collect();
        Ok(TvProfile {
            log2_den: d + m + 1,
            numerators,
        })
    }

    /// Whether the strong per-`x` property holds at `(eps, delta)`.
    pub fn certify(&self, eps: &Q, delta: &Q) -> Result<(bool, TvProfile)> {
        let profile = self.tv_profile()?;
        Ok((profile.verdict(eps, delta), profile))
    }

    /// Attaches a brute-force certificate at `(eps, delta)` when it holds;
    /// otherwise returns the sampler uncertified.
    pub fn certified(mut self, eps: &Q, delta: &Q) -> Result<Self> {
        let (ok, profile) = self.certify(eps, delta)?;
        self.cert = ok.then(|| Certificate {
            eps: eps.clone(),
            delta: delta.clone(),
            method: CertMethod::BruteForce,
            max_tv: Some(profile.max()),
            bad_x: Some(profile.bad_count(eps)),
        });
        Ok(self)
    }

    /// Certifies at the smallest ε that holds for the given δ.
    pub fn certified_best(self, delta: &Q) -> Result<Self> {
        let eps = self.tv_profile()?.min_eps(delta);
        self.certified(&eps, delta)
    }

    /// Attaches an unverified certificate. Constructions only accept it
    /// behind an explicit trust flag.
    pub fn assume_certificate(mut self, eps: Q, delta: Q) -> Self {
        self.cert = Some(Certificate {
            eps,
            delta,
            method: CertMethod::Assumed,
            max_tv: None,
            bad_x: None,
        });
        self
    }

    /// Certificates are monotone: one at (ε, δ) covers every larger pair.
    pub fn is_certified_at(&self, eps: &Q, delta: &Q) -> bool {
        self.cert
            .as_ref()
            .is_some_and(|c| &c.eps <= eps && &c.delta <= delta)
    }

    pub(crate) fn require_cert(&self, trust_assumed: bool) -> Result<&Certificate> {
        match &self.cert {
            None => Err(Error::contract(format!(
                "{} sampler (n={}, d={}, m={}) is not certified",
                self.backend_name(),
                self.n,
                self.d,
                self.m
            ))),
            Some(c) if c.method == CertMethod::Assumed && !trust_assumed => Err(Error::contract(
                "sampler certificate is assumed, not verified; pass the trust flag to use it",
            )),
            Some(c) => Ok(c),
        }
    }

    /// `E_s f(g(x, s))`. For `f` into `[l, r]` this is within `ε(r - l)` of
    /// `E_y f(y)` for all but a δ fraction of `x`.
    pub fn estimate_scalar(&self, f: &dyn Fn(BitString) -> Q, x: &BitString) -> Result<Q> {
        self.require_cert(true)?;
        self.check_x(x)?;
        check_capacity("scalar estimate", self.d)?;
        let xv = if self.is_enumeration() { 0 } else { x.value() as u64 };
        let sum = self
            .outputs_for(xv)
            .into_iter()
            .map(|o| f(BitString::truncate(o as u128, self.m)))
            .fold(Q::from_integer(0.into()), |a, b| a + b);
        Ok(sum / pow2(self.d as u32))
    }

    /// `E_s A(g(x, s))` for a flattened form over `m` bits.
    pub fn estimate_matrix<T: Scalar>(&self, form: &dyn SeedForm<T>, x: &BitString) -> Result<Mat<T>> {
        self.require_cert(true)?;
        self.check_x(x)?;
        if form.inner_len() != 0 {
            return Err(Error::contract(format!(
                "matrix estimates need a flattened form; this one still has {} inner seed bits",
                form.inner_len()
            )));
        }
        if form.outer_len() != self.m {
            return Err(Error::input(format!(
                "form reads {} bits but the sampler outputs {}",
                form.outer_len(),
                self.m
            )));
        }
        if self.is_enumeration() {
            return form.mean();
        }
        check_capacity("matrix estimate", self.d)?;
        let mut acc = Mat::zeros(form.dim());
        for o in self.outputs_for(x.value() as u64) {
            acc.add_assign(&form.at(BitString::truncate(o as u128, self.m))?);
        }
        Ok(acc.div_int(1u64 << self.d))
    }

    /// One-line description used in reports.
    pub fn describe(&self) -> String {
        let cert = match &self.cert {
            None => "uncertified".to_string(),
            Some(c) => format!(
                "eps={} delta={} method={:?}",
                fmt_q(&c.eps),
                fmt_q(&c.delta),
                c.method
            ),
        };
        format!("{} n={} d={} m={} {cert}", self.backend_name(), self.n, self.d, self.m)
    }
}
