use num_traits::{One, Signed, Zero};
use proptest::prelude::*;

use prpd_core::eval::Evaluator;
use prpd_core::forms::{form_stats, TableForm};
use prpd_core::mat::{pow2, pow2_neg, qpow, qr};
use prpd_core::recursion::{recursive_prpd, telescoping_error_bound, telescoping_product, RecursionParams};
use prpd_core::saks_zhou::{random_substochastic, round_to_grid, snap_value};
use prpd_core::sampler::Sampler;
use prpd_core::verify::robust_error;
use prpd_core::{BitString, Mat, PseudoDist, Robp, Q};

fn qi(v: i64) -> Q {
    Q::from_integer(v.into())
}

fn dyadic() -> impl Strategy<Value = Q> {
    (-64i64..=64, 0u32..6).prop_map(|(n, b)| qi(n) * pow2_neg(b))
}

fn matrix(w: usize) -> impl Strategy<Value = Mat<Q>> {
    prop::collection::vec(dyadic(), w * w)
        .prop_map(move |v| Mat::from_rows(v.chunks(w).map(|r| r.to_vec()).collect()).unwrap())
}

fn pdist(out_len: usize) -> impl Strategy<Value = PseudoDist> {
    prop::collection::vec((any::<u128>(), dyadic()), 1..12).prop_map(move |v| {
        PseudoDist::new(out_len, v.into_iter().map(|(s, c)| (BitString::truncate(s, out_len), c)).collect()).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bit_concat_splits_back(a in any::<u64>(), la in 0usize..40, b in any::<u64>(), lb in 0usize..40) {
        let x = BitString::truncate(a as u128, la);
        let y = BitString::truncate(b as u128, lb);
        let xy = x.concat(&y).unwrap();
        prop_assert_eq!(xy.len(), la + lb);
        prop_assert_eq!(xy.prefix(la), x);
        prop_assert_eq!(xy.suffix(lb), y);
        prop_assert_eq!(xy.to_string().parse::<BitString>().unwrap(), xy);
    }

    #[test]
    fn realization_is_linear(seed in any::<u64>(), w in 1usize..4, a in pdist(3), b in pdist(3), c in dyadic()) {
        let robp = Robp::random(3, w, 1, seed).unwrap();
        let (ra, rb) = (a.realize(&robp, 0, 3).unwrap(), b.realize(&robp, 0, 3).unwrap());
        prop_assert_eq!(a.union(&b).unwrap().realize(&robp, 0, 3).unwrap(), ra.add(&rb));
        prop_assert_eq!(a.scale(&c).realize(&robp, 0, 3).unwrap(), ra.scale(&c));
    }

    #[test]
    fn concatenation_multiplies(seed in any::<u64>(), w in 1usize..4, a in pdist(2), b in pdist(4)) {
        let robp = Robp::random(3, w, 2, seed).unwrap();
        let want = a.realize(&robp, 0, 1).unwrap().mul(&b.realize(&robp, 1, 3).unwrap());
        prop_assert_eq!(a.concat(&b).unwrap().realize(&robp, 0, 3).unwrap(), want);
    }

    #[test]
    fn dump_roundtrips(a in pdist(7)) {
        prop_assert_eq!(PseudoDist::parse_dump(&a.dump()).unwrap(), a);
    }

    #[test]
    fn norm_chain(values in prop::collection::vec(matrix(2), 8)) {
        let s = form_stats(&TableForm::new(3, values).unwrap()).unwrap();
        prop_assert!(s.norm <= s.robust_norm);
        prop_assert!(s.robust_norm <= s.weight);
    }

    #[test]
    fn inf_norm_is_submultiplicative(a in matrix(3), b in matrix(3)) {
        prop_assert!(a.mul(&b).inf_norm() <= a.inf_norm() * b.inf_norm());
        prop_assert!(a.add(&b).inf_norm() <= a.inf_norm() + b.inf_norm());
    }

    #[test]
    fn telescoping_within_bound(sa in any::<u64>(), sb in any::<u64>(), k in 0usize..4, e in prop::collection::vec(matrix(2), 8)) {
        let gamma = qr(1, 16);
        let (a, b) = (random_substochastic(2, sa), random_substochastic(2, sb));
        let unit = |m: &Mat<Q>| if m.inf_norm().is_zero() { m.clone() } else { m.scale(&(Q::one() / m.inf_norm())) };
        let ai: Vec<_> = (0..=k).map(|i| a.add(&unit(&e[i]).scale(&qpow(&gamma, i as u32 + 1)))).collect();
        let bi: Vec<_> = (0..=k).map(|i| b.add(&unit(&e[4 + i]).scale(&qpow(&gamma, i as u32 + 1)))).collect();
        let err = telescoping_product(&ai, &bi, k).unwrap().sub(&a.mul(&b)).inf_norm();
        prop_assert!(err <= telescoping_error_bound(&gamma, k));
    }

    #[test]
    fn snap_stays_close(num in 0u64..=1 << 20, y in any::<u64>(), d in 1u32..10) {
        let x = qi(num as i64) * pow2_neg(20);
        let y = y % (1 << d);
        let s = snap_value(&x, y, d);
        prop_assert!(!s.is_negative());
        prop_assert!((&s * pow2(d)).is_integer());
        prop_assert!((&x - &s).abs() < qi(2) * pow2_neg(d));
    }

    #[test]
    fn grid_rounding_is_substochastic(seed in any::<u64>(), w in 1usize..4, d in 1u32..8) {
        let m = random_substochastic(w, seed);
        let r = round_to_grid(&m, d);
        prop_assert!(r.is_substochastic());
        prop_assert!(r.entries().iter().all(|v| (v * pow2(d)).is_integer()));
    }

    #[test]
    fn robp_text_roundtrips(seed in any::<u64>(), n in 1usize..6, w in 1usize..5, d in 1usize..3) {
        let robp = Robp::random(n, w, d, seed).unwrap();
        prop_assert_eq!(Robp::parse(&robp.to_text()).unwrap(), robp);
    }

    #[test]
    fn padding_keeps_the_prefix(seed in any::<u64>(), n in 1usize..5, w in 1usize..4) {
        let robp = Robp::random(n, w, 1, seed).unwrap();
        let padded = robp.padded_to(8).unwrap();
        prop_assert_eq!(padded.exact_average::<Q>(0, n).unwrap(), robp.exact_average::<Q>(0, n).unwrap());
        prop_assert_eq!(padded.exact_average::<Q>(n, 8).unwrap(), Mat::identity(w));
    }

    #[test]
    fn tv_verdict_is_monotone(n in 1usize..5, d in 1usize..4, m in 1usize..4, key in any::<u64>(), e in 0i64..16) {
        let g = Sampler::seeded_hash(n, d, m, key).unwrap();
        let p = g.tv_profile().unwrap();
        let (lo, hi) = (qr(e, 16), qr(e + 1, 16));
        for delta in [qi(0), qr(1, 4)] {
            prop_assert!(!p.verdict(&lo, &delta) || p.verdict(&hi, &delta));
            prop_assert!(p.verdict(&p.min_eps(&delta), &delta));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn exact_generator_meets_its_bound(seed in any::<u64>(), k in 0usize..3) {
        let params = RecursionParams { k: Some(k), ..RecursionParams::default() };
        let (p, _) = recursive_prpd(4, 2, None, &params).unwrap();
        let robp = Robp::random(4, 2, 1, seed).unwrap();
        let ev = Evaluator::<Q>::new(&robp);
        let err = robust_error(&ev, &p, 0).unwrap().robust_norm;
        prop_assert!(err <= *p.error_bound().unwrap());
    }
}
