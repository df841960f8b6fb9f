//! Property tests for the operator algebra, the folded engines and the
//! fold/split plumbing.

use opcal::linalg::{self, Mat};
use opcal::operators::compose;
use opcal::oracle::reference_pls;
use opcal::pls::{nipals_adjoint_extract, simpls_extract};
use opcal::stats;
use opcal::{build_operator, center, compact_bank, cross_covariance, LinOp, OperatorSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn rel(a: &Mat, b: &Mat) -> f64 {
    linalg::max_abs(&(a - b)) / linalg::max_abs(b).max(1e-300)
}

fn leaf() -> impl Strategy<Value = OperatorSpec> {
    prop_oneof![
        Just(OperatorSpec::Identity),
        (1usize..=5, 0usize..=3).prop_map(|(h, o)| OperatorSpec::SavgolSmooth {
            window: 2 * h + 3,
            order: o.min(2 * h + 2),
        }),
        (1usize..=5, 1usize..=3, 1usize..=2).prop_map(|(h, o, d)| OperatorSpec::SavgolDeriv {
            window: 2 * h + 3,
            order: o.max(d),
            deriv: d,
        }),
        Just(OperatorSpec::FiniteDiffFirst),
        (1usize..=2).prop_map(|degree| OperatorSpec::Detrend { degree }),
        (1usize..=3, 1usize..=3).prop_map(|(gap, s)| OperatorSpec::NwGapDeriv { gap, segment: 2 * s - 1 }),
    ]
}

fn spec() -> impl Strategy<Value = OperatorSpec> {
    leaf().prop_recursive(2, 8, 3, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 2..=3).prop_map(OperatorSpec::Compose),
            prop::collection::vec((0.05f64..2.0, inner), 2..=3).prop_map(OperatorSpec::Mixture),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spec_strings_round_trip(s in spec()) {
        let text = s.to_string();
        let back: OperatorSpec = text.parse().unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(back.to_string(), text);
    }

    #[test]
    fn adjoint_is_consistent_with_rows(s in spec(), p in 30usize..90, seed in any::<u64>()) {
        let op = build_operator(&s, p).unwrap();
        let x = random(6, p, seed);
        let v = random(p, 1, seed ^ 1);
        let lhs = op.apply_rows(&x).unwrap() * &v;
        let rhs = &x * op.apply_adjoint(&v).unwrap();
        prop_assert!(rel(&lhs, &rhs) <= 1e-10, "{}: {:e}", s, rel(&lhs, &rhs));
    }

    #[test]
    fn construction_is_strict(s in spec(), p in 30usize..90) {
        let a = build_operator(&s, p).unwrap().materialise().unwrap();
        let b = build_operator(&s, p).unwrap().materialise().unwrap();
        prop_assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn composition_is_associative(a in leaf(), b in leaf(), c in leaf(), p in 30usize..90, seed in any::<u64>()) {
        let [oa, ob, oc]: [LinOp; 3] = [&a, &b, &c].map(|s| build_operator(s, p).unwrap());
        let nested = compose(&[oa.clone(), compose(&[ob.clone(), oc.clone()]).unwrap()]).unwrap();
        let flat = compose(&[oa, ob, oc]).unwrap();
        let v = random(p, 2, seed);
        let lhs = nested.apply_forward(&v).unwrap();
        let rhs = flat.apply_forward(&v).unwrap();
        prop_assert!(linalg::max_abs(&(&lhs - &rhs)) <= 1e-12 * linalg::max_abs(&rhs).max(1.0));
    }

    #[test]
    fn savgol_smoothing_reproduces_low_degree_polynomials(
        h in 1usize..=6, order in 0usize..=3, p in 30usize..80, coef in prop::collection::vec(-1.0f64..1.0, 4)
    ) {
        let window = 2 * h + 3;
        let order = order.min(window - 1);
        let op = build_operator(&OperatorSpec::SavgolSmooth { window, order }, p).unwrap();
        let poly = |j: usize| {
            let t = j as f64 / p as f64;
            (0..=order).map(|d| coef[d] * t.powi(d as i32)).sum::<f64>()
        };
        let x = Mat::from_fn(p, 1, |j, _| poly(j));
        let out = op.apply_forward(&x).unwrap();
        prop_assert!(linalg::max_abs(&(&out - &x)) <= 1e-10, "{:e}", linalg::max_abs(&(&out - &x)));
    }

    #[test]
    fn savgol_derivative_is_exact_on_monomials(h in 1usize..=6, deriv in 1usize..=2, extra in 0usize..=1, p in 30usize..80) {
        let window = 2 * h + 3;
        let order = (deriv + extra).min(window - 1);
        let op = build_operator(&OperatorSpec::SavgolDeriv { window, order, deriv }, p).unwrap();
        let c = p as f64 / 2.0;
        let x = Mat::from_fn(p, 1, |j, _| (j as f64 - c).powi(deriv as i32));
        let out = op.apply_forward(&x).unwrap();
        let want = if deriv == 1 { 1.0 } else { 2.0 };
        let half = window / 2;
        for j in half..p - half {
            prop_assert!((out[j] - want).abs() <= 1e-8, "channel {}: {}", j, out[j]);
        }
    }

    #[test]
    fn detrend_is_an_idempotent_annihilator(degree in 1usize..=2, p in 10usize..80) {
        let a = build_operator(&OperatorSpec::Detrend { degree }, p).unwrap().materialise().unwrap();
        prop_assert!(linalg::max_abs(&(&a * &a - &a)) <= 1e-10);
        let v = Mat::from_fn(p, degree + 1, |j, d| (j as f64 / p as f64).powi(d as i32));
        prop_assert!(linalg::max_abs(&(&a * v)) <= 1e-10);
    }

    #[test]
    fn cross_covariance_identity_for_bank(n in 12usize..40, p in 30usize..70, q in 1usize..3, seed in any::<u64>()) {
        let d = center(&random(n, p, seed), &random(n, q, seed ^ 7)).unwrap();
        let s = cross_covariance(&d);
        for op in compact_bank(p).ops() {
            let folded = op.apply_forward(&s.s).unwrap();
            let xt = op.apply_rows(&d.xc).unwrap();
            let direct = xt.tr_mul(&d.yc);
            prop_assert!(linalg::max_abs(&(&folded - &direct)) <= 1e-10 * linalg::max_abs(&direct).max(1.0));
        }
    }

    #[test]
    fn folded_simpls_matches_materialised_reference(n in 15usize..40, p in 30usize..60, q in 1usize..3, k in 1usize..6, seed in any::<u64>()) {
        let x = random(n, p, seed);
        let y = random(n, q, seed ^ 3);
        let d = center(&x, &y).unwrap();
        let s = cross_covariance(&d);
        let xnew = random(5, p, seed ^ 11);
        for op in compact_bank(p).ops() {
            let xt = op.apply_rows(&x).unwrap();
            let cap = k.min(n - 1);
            let fit = simpls_extract(&s, &d, op, cap).unwrap();
            let r = reference_pls(&xt, &y, cap).unwrap();
            let kk = fit.n_components.min(r.n_components());
            if kk == 0 { continue; }
            let a = opcal::pls::predict_linear(&fit.prefix_coefficients(kk), &fit.x_mean, &fit.y_mean, &xnew).unwrap();
            let b = r.predict(&op.apply_rows(&xnew).unwrap(), kk).unwrap();
            prop_assert!(rel(&a, &b) <= 1e-6, "{}: {:e}", op.spec(), rel(&a, &b));
        }
    }

    #[test]
    fn simpls_and_nipals_agree_on_rmsep(n in 15usize..50, p in 30usize..70, k in 1usize..6, seed in any::<u64>()) {
        let x = random(n, p, seed);
        let y = random(n, 1, seed ^ 5);
        let d = center(&x, &y).unwrap();
        let s = cross_covariance(&d);
        for op in compact_bank(p).ops() {
            let a = simpls_extract(&s, &d, op, k).unwrap();
            let b = nipals_adjoint_extract(&d, op, k).unwrap();
            let ra = stats::rmsep(a.predict(&x).unwrap().as_slice(), y.as_slice()).unwrap();
            let rb = stats::rmsep(b.predict(&x).unwrap().as_slice(), y.as_slice()).unwrap();
            prop_assert!((ra - rb).abs() <= 1e-9, "{}: {:e}", op.spec(), (ra - rb).abs());
        }
    }

    #[test]
    fn stratified_folds_keep_class_shares(counts in prop::collection::vec(5usize..20, 2..4), k in 2usize..5, seed in any::<u64>()) {
        let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &m)| std::iter::repeat_n(c, m)).collect();
        let plan = stats::kfold_plan(labels.len(), k, seed, Some(&labels)).unwrap();
        for fold in &plan.folds {
            for (c, &m) in counts.iter().enumerate() {
                let got = fold.validation.iter().filter(|&&i| labels[i] == c).count() as f64;
                prop_assert!((got - m as f64 / k as f64).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn spxy_selection_ignores_row_order(n in 6usize..30, seed in any::<u64>()) {
        let x = random(n, 5, seed);
        let y = random(n, 1, seed ^ 9);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let a = stats::spxy_split(&x, &y, 0.3).unwrap();
        let b = stats::spxy_split(&linalg::select_rows(&x, &perm), &linalg::select_rows(&y, &perm), 0.3).unwrap();
        let mut mapped: Vec<usize> = b.train.iter().map(|&i| perm[i]).collect();
        mapped.sort();
        let mut train = a.train.clone();
        train.sort();
        prop_assert_eq!(mapped, train);
        prop_assert_eq!(stats::spxy_split(&x, &y, 0.3).unwrap(), a);
    }
}
