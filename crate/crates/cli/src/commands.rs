//! The five subcommands.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use prpd_core::eval::Evaluator;
use prpd_core::mat::{fmt_q, parse_q, qpow};
use prpd_core::prpd::RobustPrpd;
use prpd_core::recursion::{
    ledger_check, recursive_prpd_partial, BackendKind, CertifiedBackend, HypothesisPolicy, RecursionParams,
    SamplerMode, SeedLedger,
};
use prpd_core::saks_zhou::{
    armoni_bits, random_substochastic, sz_error_bound, sz_failure_rate, sz_power, Armoni, ExactPower, Memoized,
    SzSchedule,
};
use prpd_core::sampler::Sampler;
use prpd_core::verify::robust_error;
use prpd_core::{BitString, Error, Result, Robp, Q};

use crate::report::{align, Report};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerArg {
    Exact,
    Expander,
    Hash,
    Xor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyArg {
    Enforce,
    Record,
}

/// Generator parameters shared by build-prpd, verify-error and ledger-check.
#[derive(Args, Clone, Debug, Serialize)]
pub struct GenArgs {
    /// Program length; padded up to a power of two.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub w: usize,
    /// Target error as `num/den`; picks k when --k is absent.
    #[arg(long)]
    pub eps: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Base γ as `num/den`; defaults to n^-4.
    #[arg(long)]
    pub gamma: Option<String>,
    /// Sampler constant used by the ledger bounds.
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, value_enum, default_value_t = SamplerArg::Exact)]
    pub sampler: SamplerArg,
    /// Certified backends: seed bits fewer than the sampled output.
    #[arg(long, default_value_t = 1)]
    pub seed_deficit: usize,
    #[arg(long, default_value_t = 0)]
    pub extra_outer_bits: usize,
    #[arg(long, default_value_t = 2)]
    pub degree_bits: usize,
    #[arg(long, default_value_t = 0)]
    pub key: u64,
    #[arg(long, value_enum, default_value_t = PolicyArg::Enforce)]
    pub policy: PolicyArg,
    #[arg(long, default_value_t = 1)]
    pub d_step: usize,
}

fn q_arg(s: &Option<String>) -> Result<Option<Q>> {
    s.as_deref().map(parse_q).transpose()
}

impl GenArgs {
    fn n(&self) -> Result<usize> {
        self.n.ok_or_else(|| Error::Input("--n is required".into()))
    }

    fn params(&self) -> Result<RecursionParams> {
        let mode = match self.sampler {
            SamplerArg::Exact => SamplerMode::ExactEnumeration,
            other => SamplerMode::CertifiedBackend(CertifiedBackend {
                kind: match other {
                    SamplerArg::Expander => BackendKind::ExpanderWalk {
                        degree_bits: self.degree_bits,
                    },
                    SamplerArg::Hash => BackendKind::SeededHash,
                    _ => BackendKind::XorShift,
                },
                seed_deficit: self.seed_deficit,
                extra_outer_bits: self.extra_outer_bits,
                key: self.key,
            }),
        };
        Ok(RecursionParams {
            gamma: q_arg(&self.gamma)?,
            k: self.k,
            c: self.c,
            mode,
            policy: match self.policy {
                PolicyArg::Enforce => HypothesisPolicy::Enforce,
                PolicyArg::Record => HypothesisPolicy::Record,
            },
            trust_assumed: false,
            d_step: self.d_step,
        })
    }

    fn build(&self, report: &mut Report) -> Option<(RobustPrpd, SeedLedger)> {
        let built = (|| {
            let n = self.n()?;
            let eps = q_arg(&self.eps)?;
            Ok::<_, Error>(recursive_prpd_partial(n, self.w, eps.as_ref(), &self.params()?))
        })();
        match built {
            Err(e) => {
                report.error(&e);
                None
            }
            Ok((Err(e), ledger)) => {
                if let Some(l) = ledger {
                    report.record("partial-ledger", &l);
                }
                report.error(&e);
                None
            }
            Ok((Ok(p), ledger)) => Some((p, ledger.expect("ledger exists on success"))),
        }
    }
}

fn opt_q(v: Option<&Q>) -> String {
    v.map(fmt_q).unwrap_or_else(|| "none".into())
}

#[derive(Serialize, Deserialize)]
struct GeneratorFile {
    generator: RobustPrpd,
    ledger: SeedLedger,
}

fn generator_summary(p: &RobustPrpd) -> serde_json::Value {
    json!({
        "digest": p.digest(),
        "out_len": p.out_len(),
        "steps": p.steps(),
        "width": p.width(),
        "s_out": p.s_out(),
        "s_in": p.s_in(),
        "seed_len": p.seed_len(),
        "mu": p.mu().to_string(),
        "error_bound": p.error_bound().map(fmt_q),
    })
}

#[derive(Args, Debug, Serialize)]
pub struct BuildArgs {
    #[command(flatten)]
    pub gen: GenArgs,
    /// Writes the generator and its ledger as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn build_prpd(args: &BuildArgs) -> Report {
    let mut report = Report::new("build-prpd", args);
    let Some((p, ledger)) = args.gen.build(&mut report) else {
        return report;
    };
    let mut rows = vec![["h", "k", "terminal", "s_out", "s_in", "mu", "error_bound"].map(String::from).to_vec()];
    for node in &ledger.nodes {
        report.record("ledger-node", node);
        rows.push(vec![
            node.h.to_string(),
            node.k.to_string(),
            node.terminal.to_string(),
            node.s_out.to_string(),
            node.s_in.to_string(),
            node.mu.to_string(),
            opt_q(node.error_bound.as_ref()),
        ]);
    }
    report.record("generator", generator_summary(&p));
    report.table = align(&rows);
    report.table.push(format!("generator digest {}", p.digest()));
    if let Some(path) = &args.out {
        let file = GeneratorFile { generator: p, ledger };
        let text = serde_json::to_string_pretty(&file).expect("generator serializes");
        if let Err(e) = std::fs::write(path, text + "\n") {
            report.error(&Error::Input(format!("cannot write {}: {e}", path.display())));
        }
    }
    report
}

#[derive(Args, Debug, Serialize)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub gen: GenArgs,
    /// Number of random programs.
    #[arg(long, default_value_t = 20)]
    pub robps: usize,
    #[arg(long, default_value_t = 0)]
    pub robp_seed: u64,
    /// Use the identity program instead of random ones.
    #[arg(long)]
    pub identity: bool,
    /// Replay one program from its text form.
    #[arg(long)]
    pub robp_file: Option<PathBuf>,
    /// Writes the worst program's text form here.
    #[arg(long)]
    pub worst_out: Option<PathBuf>,
}

pub fn verify_error(args: &VerifyArgs) -> Report {
    let mut report = Report::new("verify-error", args);
    let Some((p, ledger)) = args.gen.build(&mut report) else {
        return report;
    };
    let n_pad = ledger.n_padded;
    let top_h = n_pad.trailing_zeros();
    let nominal = qpow(&(qpow(&Q::from_integer(11.into()), top_h) * &ledger.gamma), ledger.k as u32 + 1);
    let (bound, bound_kind) = match p.error_bound() {
        Some(b) => (b.clone(), "proven"),
        None => (nominal, "nominal"),
    };
    let robps: Result<Vec<(String, Robp)>> = (|| {
        if let Some(path) = &args.robp_file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
            return Ok(vec![(path.display().to_string(), Robp::parse(&text)?.padded_to(n_pad)?)]);
        }
        let n = args.gen.n()?;
        if args.identity {
            return Ok(vec![("identity".into(), Robp::identity(n_pad, args.gen.w, args.gen.d_step)?)]);
        }
        (0..args.robps as u64)
            .map(|i| {
                let seed = args.robp_seed + i;
                Ok((format!("seed {seed}"), Robp::random(n, args.gen.w, args.gen.d_step, seed)?.padded_to(n_pad)?))
            })
            .collect()
    })();
    let robps = match robps {
        Ok(r) => r,
        Err(e) => {
            report.error(&e);
            return report;
        }
    };
    let mut rows = vec![["instance", "robust_error", "bound", "ok"].map(String::from).to_vec()];
    let mut worst: Option<(Q, usize)> = None;
    let mut sum = Q::zero();
    for (idx, (label, robp)) in robps.iter().enumerate() {
        let ev = Evaluator::<Q>::new(robp);
        let stats = match robust_error(&ev, &p, 0) {
            Ok(s) => s,
            Err(e) => {
                report.error(&e);
                return report;
            }
        };
        let ok = stats.robust_norm <= bound;
        report.ok &= ok;
        report.record(
            "instance",
            json!({
                "index": idx,
                "program": label,
                "robust_error": fmt_q(&stats.robust_norm),
                "norm_error": fmt_q(&stats.norm),
                "max_error": fmt_q(&stats.weight),
                "bound": fmt_q(&bound),
                "bound_kind": bound_kind,
                "ok": ok,
            }),
        );
        rows.push(vec![label.clone(), fmt_q(&stats.robust_norm), fmt_q(&bound), ok.to_string()]);
        sum += &stats.robust_norm;
        if worst.as_ref().is_none_or(|(w, _)| stats.robust_norm > *w) {
            worst = Some((stats.robust_norm.clone(), idx));
        }
    }
    let (max, worst_idx) = worst.unwrap_or((Q::zero(), 0));
    let worst_text = robps.get(worst_idx).map(|(_, r)| r.to_text()).unwrap_or_default();
    report.record(
        "summary",
        json!({
            "generator": generator_summary(&p),
            "instances": robps.len(),
            "max_robust_error": fmt_q(&max),
            "mean_robust_error": fmt_q(&(sum / Q::from_integer(robps.len().max(1).into()))),
            "bound": fmt_q(&bound),
            "bound_kind": bound_kind,
            "all_ok": report.ok,
            "worst_index": worst_idx,
            "worst_program": worst_text,
        }),
    );
    report.table = align(&rows);
    report.table.push(format!("max {} vs {bound_kind} bound {}", fmt_q(&max), fmt_q(&bound)));
    if let Some(path) = &args.worst_out {
        if let Err(e) = std::fs::write(path, &worst_text) {
            report.error(&Error::Input(format!("cannot write {}: {e}", path.display())));
        }
    }
    report
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendArg {
    Enumeration,
    Expander,
    Hash,
    Xor,
}

#[derive(Args, Debug, Serialize)]
pub struct CertifyArgs {
    #[arg(long, value_enum)]
    pub backend: BackendArg,
    #[arg(long, default_value_t = 0)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub d: usize,
    #[arg(long)]
    pub m: usize,
    #[arg(long, default_value_t = 0)]
    pub key: u64,
    #[arg(long, default_value_t = 2)]
    pub degree_bits: usize,
    /// Requested ε as `num/den`.
    #[arg(long)]
    pub eps: Option<String>,
    /// Requested δ as `num/den`.
    #[arg(long)]
    pub delta: Option<String>,
}

pub fn certify_sampler(args: &CertifyArgs) -> Report {
    let mut report = Report::new("certify-sampler", args);
    if let Err(e) = certify_inner(args, &mut report) {
        report.error(&e);
    }
    report
}

fn certify_inner(args: &CertifyArgs, report: &mut Report) -> Result<()> {
    let g = match args.backend {
        BackendArg::Enumeration => Sampler::enumeration(args.m)?,
        BackendArg::Expander => Sampler::expander_walk(args.n, args.d, args.m, args.degree_bits, args.key)?,
        BackendArg::Hash => Sampler::seeded_hash(args.n, args.d, args.m, args.key)?,
        BackendArg::Xor => Sampler::xor_shift(args.n, args.m, args.key)?,
    };
    let eps = q_arg(&args.eps)?;
    let delta = q_arg(&args.delta)?.unwrap_or_else(Q::zero);
    if g.is_enumeration() {
        let cert = g.cert().expect("enumeration samplers carry a certificate");
        report.record("certificate", json!({ "sampler": g.describe(), "certificate": cert }));
        report.table.push(g.describe());
        return Ok(());
    }
    let profile = g.tv_profile()?;
    let min_eps = profile.min_eps(&delta);
    let verdict = eps.as_ref().map(|e| profile.verdict(e, &delta));
    let cert = match &eps {
        Some(e) if verdict == Some(true) => g.clone().certified(e, &delta)?.cert().cloned(),
        _ => g.clone().certified(&min_eps, &delta)?.cert().cloned(),
    };
    report.ok = verdict != Some(false);
    report.record(
        "certificate",
        json!({
            "sampler": g.describe(),
            "max_tv": fmt_q(&profile.max()),
            "delta": fmt_q(&delta),
            "min_eps": fmt_q(&min_eps),
            "requested_eps": eps.as_ref().map(fmt_q),
            "bad_inputs_at_requested_eps": eps.as_ref().map(|e| profile.bad_count(e)),
            "verdict": verdict,
            "certificate": cert,
        }),
    );
    report.table = align(&[
        vec!["sampler".into(), g.describe()],
        vec!["max TV".into(), fmt_q(&profile.max())],
        vec![format!("min eps at delta {}", fmt_q(&delta)), fmt_q(&min_eps)],
        vec![
            "verdict".into(),
            verdict.map(|v| v.to_string()).unwrap_or_else(|| "not requested".into()),
        ],
    ]);
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApproxArg {
    Exact,
    Armoni,
}

#[derive(Args, Debug, Serialize)]
pub struct SzArgs {
    #[arg(long, default_value_t = 2)]
    pub w: usize,
    #[arg(long, default_value_t = 2)]
    pub n1: usize,
    #[arg(long, default_value_t = 2)]
    pub n2: usize,
    /// Snap precision in bits.
    #[arg(long, default_value_t = 6)]
    pub d: usize,
    /// Per-level approximation error as `num/den`.
    #[arg(long, default_value = "1/4096")]
    pub eps: String,
    #[arg(long, default_value_t = 10)]
    pub matrices: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ApproxArg::Exact)]
    pub approximator: ApproxArg,
    /// Base γ of the generator inside the sampler wrapper.
    #[arg(long, default_value = "1/262144")]
    pub gamma: String,
}

pub fn sz_demo(args: &SzArgs) -> Report {
    let mut report = Report::new("sz-demo", args);
    if let Err(e) = sz_inner(args, &mut report) {
        report.error(&e);
    }
    report
}

fn sz_inner(args: &SzArgs, report: &mut Report) -> Result<()> {
    let eps = parse_q(&args.eps)?;
    let n = (args.n1 as u128)
        .checked_pow(args.n2 as u32)
        .filter(|&v| v <= 1 << 20)
        .ok_or_else(|| Error::Input("n1^n2 is too large".into()))? as usize;
    let bound = sz_error_bound(n, args.w, args.d);
    let mut rows = vec![];
    match args.approximator {
        ApproxArg::Exact => {
            rows.push(["matrix", "error", "bound", "ok"].map(String::from).to_vec());
            let approx = ExactPower { n1: args.n1 };
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            let mut max = Q::zero();
            for i in 0..args.matrices {
                let m = random_substochastic(args.w, args.seed.wrapping_add(i as u64));
                let z = (0..args.n2)
                    .map(|_| BitString::truncate(rng.gen::<u64>() as u128, args.d))
                    .collect();
                let sched = SzSchedule::new(n, args.n1, args.n2, args.d, eps.clone(), BitString::EMPTY, z)?;
                let err = sz_power(&m, &sched, &approx)?.sub(&m.pow(n)).inf_norm();
                let ok = err <= bound;
                report.ok &= ok;
                report.record(
                    "sz-run",
                    json!({
                        "index": i,
                        "matrix": m.to_string(),
                        "offsets": sched.z.iter().map(|z| z.to_string()).collect::<Vec<_>>(),
                        "error": fmt_q(&err),
                        "bound": fmt_q(&bound),
                        "ok": ok,
                    }),
                );
                rows.push(vec![i.to_string(), fmt_q(&err), fmt_q(&bound), ok.to_string()]);
                if err > max {
                    max = err;
                }
            }
            report.record("summary", json!({ "max_error": fmt_q(&max), "bound": fmt_q(&bound), "all_ok": report.ok }));
        }
        ApproxArg::Armoni => {
            rows.push(["matrix", "runs", "failures", "rate", "union_bound", "ok"].map(String::from).to_vec());
            let approx = armoni_approximator(args, &eps)?;
            for i in 0..args.matrices {
                let m = random_substochastic(args.w, args.seed.wrapping_add(i as u64));
                let f = sz_failure_rate(&m, args.n1, args.n2, args.d, &eps, &approx)?;
                let ok = f.holds();
                report.ok &= ok;
                report.record("sz-failure", json!({ "index": i, "matrix": m.to_string(), "stats": f, "ok": ok }));
                rows.push(vec![
                    i.to_string(),
                    f.runs.to_string(),
                    f.failures.to_string(),
                    fmt_q(&f.failure_rate),
                    fmt_q(&f.union_bound),
                    ok.to_string(),
                ]);
            }
            report.record(
                "approximator",
                json!({ "bits": approx.inner().bits(), "eps": fmt_q(approx.inner().eps()) }),
            );
        }
    }
    report.table = align(&rows);
    Ok(())
}

fn armoni_approximator(args: &SzArgs, eps: &Q) -> Result<Memoized<Armoni>> {
    let d = armoni_bits(args.n1, args.w, eps)?;
    let params = RecursionParams {
        gamma: Some(parse_q(&args.gamma)?),
        k: Some(0),
        d_step: d,
        ..RecursionParams::default()
    };
    let (prpd, _) = recursive_prpd_partial(args.n1, args.w + 1, None, &params);
    let prpd = prpd?;
    if prpd.steps() != args.n1 {
        return Err(Error::Input("the wrapper needs n1 to be a power of two".into()));
    }
    let g = Sampler::enumeration(prpd.seed_len())?;
    Ok(Memoized::new(Armoni::new(prpd, g, args.n1, args.w, eps.clone())?))
}

#[derive(Args, Debug, Serialize)]
pub struct LedgerArgs {
    /// A generator file written by `build-prpd --out`; otherwise the
    /// generator is built from the flags below.
    #[arg(long)]
    pub from: Option<PathBuf>,
    #[command(flatten)]
    pub gen: GenArgs,
}

pub fn ledger_check_cmd(args: &LedgerArgs) -> Report {
    let mut report = Report::new("ledger-check", args);
    let ledger = match &args.from {
        Some(path) => {
            let parsed = std::fs::read_to_string(path)
                .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))
                .and_then(|t| {
                    serde_json::from_str::<GeneratorFile>(&t)
                        .map_err(|e| Error::Input(format!("{} is not a generator file: {e}", path.display())))
                });
            match parsed {
                Ok(f) => f.ledger,
                Err(e) => {
                    report.error(&e);
                    return report;
                }
            }
        }
        None => match args.gen.build(&mut report) {
            Some((_, l)) => l,
            None => return report,
        },
    };
    let check = ledger_check(&ledger, args.gen.c);
    let mut rows = vec![["h", "k", "quantity", "used", "bound", "ok"].map(String::from).to_vec()];
    for r in &check.rows {
        report.record("ledger-row", r);
        rows.push(vec![
            r.h.to_string(),
            r.k.to_string(),
            r.quantity.clone(),
            r.used.clone(),
            r.bound.clone(),
            r.ok.to_string(),
        ]);
    }
    report.ok = check.all_ok;
    report.record("summary", json!({ "rows": check.rows.len(), "all_ok": check.all_ok, "c": args.gen.c }));
    report.table = align(&rows);
    report
}
