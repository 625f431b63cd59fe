mod common;

use ordibench::align::{self, LandmarkSet, Point, SimilarityTransform};
use ordibench::data::LabelSet;
use ordibench::methods::{self, Family, Method, MethodConfig, Posterior};
use ordibench::predict;
use ordibench::stats::{self, ResultMatrix};
use proptest::prelude::*;

fn posterior_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 2..60).prop_filter("some mass", |v| v.iter().sum::<f64>() > 1e-3)
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

proptest! {
    #[test]
    fn softmax_ignores_constant_shift(logits in prop::collection::vec(-20.0f64..20.0, 2..30), c in -50.0f64..50.0) {
        let a = methods::softmax(&logits).unwrap();
        let shifted: Vec<f64> = logits.iter().map(|z| z + c).collect();
        let b = methods::softmax(&shifted).unwrap();
        for (x, y) in a.probs().iter().zip(b.probs()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        let t = logits.len() / 2;
        let la = methods::ce_loss(&logits, t).unwrap().value;
        let lb = methods::ce_loss(&shifted, t).unwrap().value;
        prop_assert!((la - lb).abs() < 1e-9 * (1.0 + la.abs()));
    }

    #[test]
    fn bayes_invariant_under_rescaling(raw in posterior_strategy(), c in 1e-3f64..1e3) {
        let k = raw.len();
        let labels = LabelSet::range(0, k as i64 - 1).unwrap();
        let p = Posterior::new(normalize(&raw)).unwrap();
        let scaled: Vec<f64> = raw.iter().map(|v| v * c).collect();
        let q = Posterior::new(normalize(&scaled)).unwrap();
        let a = predict::bayes_mae_predict(&p, &labels).unwrap();
        let b = predict::bayes_mae_predict(&q, &labels).unwrap();
        prop_assert_eq!(a.label_index, b.label_index);
        prop_assert_eq!(a.label_index, predict::brute_force_bayes(&p, &labels).unwrap().label_index);
    }

    #[test]
    fn ebc_decode_is_monotone(probs in prop::collection::vec(0.0f64..1.0, 1..40), i in any::<prop::sample::Index>(), bump in 0.0f64..1.0) {
        let labels = LabelSet::range(0, probs.len() as i64).unwrap();
        let before = predict::ebc_decode(&probs, &labels).unwrap().label_index.unwrap();
        let mut raised = probs.clone();
        let j = i.index(raised.len());
        raised[j] = (raised[j] + bump).min(1.0);
        let after = predict::ebc_decode(&raised, &labels).unwrap().label_index.unwrap();
        prop_assert!(after >= before);
    }

    #[test]
    fn every_decoder_stays_in_label_range(
        family in prop::sample::select(Family::ALL.to_vec()),
        k in 2usize..30,
        lo in 0i64..50,
        raw in prop::collection::vec(-1e3f64..1e3, 30),
    ) {
        let labels = LabelSet::range(lo, lo + k as i64 - 1).unwrap();
        let method = Method::new(MethodConfig::new(family), labels).unwrap();
        let head = &raw[..method.head_size()];
        let age = method.decode(head).age;
        prop_assert!(age >= lo as f64 && age <= (lo + k as i64 - 1) as f64);
    }

    #[test]
    fn row_ranks_sum_to_triangular_number(rows in prop::collection::vec(prop::collection::vec(0u8..6, 5), 1..10)) {
        let m: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
        for r in stats::rank_rows(&m).unwrap() {
            let s: f64 = r.iter().sum();
            prop_assert!((s - 15.0).abs() < 1e-12);
            prop_assert!(r.iter().all(|&x| (1.0..=5.0).contains(&x)));
        }
    }

    #[test]
    fn cdfs_are_monotone_and_bounded(x in 0.0f64..50.0, dx in 0.0f64..10.0, d1 in 1.0f64..40.0, d2 in 1.0f64..40.0) {
        let a = stats::chi2_cdf(x, d1).unwrap();
        let b = stats::chi2_cdf(x + dx, d1).unwrap();
        prop_assert!((0.0..=1.0).contains(&a) && b >= a - 1e-12);
        let a = stats::f_cdf(x, d1, d2).unwrap();
        let b = stats::f_cdf(x + dx, d1, d2).unwrap();
        prop_assert!((0.0..=1.0).contains(&a) && b >= a - 1e-12);
    }

    #[test]
    fn alignment_absorbs_source_rotation(pts in prop::collection::vec((0.0f64..300.0, 0.0f64..300.0), 5), angle in -3.0f64..3.0) {
        let src: Vec<Point> = pts.iter().map(|&(x, y)| [x, y]).collect();
        let template = align::default_template(256.0);
        let spread: f64 = src.iter().map(|p| (p[0] - src[0][0]).abs() + (p[1] - src[0][1]).abs()).sum();
        prop_assume!(spread > 1.0);
        let rot = SimilarityTransform { scale: 1.0, rotation: angle, tx: 0.0, ty: 0.0 };
        let rotated = common::transform_points(&rot, &src);
        let a = align::similarity_align(&LandmarkSet::new(src.clone()).unwrap(), &template).unwrap();
        let b = align::similarity_align(&LandmarkSet::new(rotated.clone()).unwrap(), &template).unwrap();
        let ra = a.residual(&src, &template.points);
        let rb = b.residual(&rotated, &template.points);
        prop_assert!((ra - rb).abs() <= 1e-9 * (1.0 + ra));
    }

    #[test]
    fn matrix_csv_round_trips(rows in prop::collection::vec(prop::collection::vec(0.0f64..100.0, 3), 1..6)) {
        let m = ResultMatrix::new(
            (0..rows.len()).map(|i| format!("d{i}")).collect(),
            vec!["a".into(), "b".into(), "c".into()],
            rows,
        ).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = ResultMatrix::parse_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        prop_assert_eq!(back.mae, m.mae);
        prop_assert_eq!(back.datasets, m.datasets);
    }
}

#[test]
fn special_functions_match_reference() {
    use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor};
    use statrs::function::gamma::ln_gamma;
    for &df in &[1.0, 2.0, 3.5, 8.0, 20.0, 79.0] {
        let reference = ChiSquared::new(df).unwrap();
        for i in 0..60 {
            let x = i as f64 * 0.75;
            let ours = stats::chi2_cdf(x, df).unwrap();
            assert!((ours - reference.cdf(x)).abs() < 1e-10, "chi2 df={df} x={x}");
        }
    }
    for &(d1, d2) in &[(1.0, 1.0), (2.0, 6.0), (4.0, 24.0), (8.0, 72.0), (9.0, 9.0), (30.0, 3.0)] {
        let reference = FisherSnedecor::new(d1, d2).unwrap();
        for i in 0..60 {
            let x = i as f64 * 0.2;
            let ours = stats::f_cdf(x, d1, d2).unwrap();
            assert!((ours - reference.cdf(x)).abs() < 1e-10, "F({d1},{d2}) x={x}");
        }
    }
    for i in 1..200 {
        let x = i as f64 * 0.37;
        assert!((stats::ln_gamma(x) - ln_gamma(x)).abs() < 1e-10 * (1.0 + ln_gamma(x).abs()), "ln_gamma({x})");
    }
}

#[test]
fn f_distribution_median_is_one_for_equal_dof() {
    for d in [1.0, 2.0, 5.0, 17.0, 60.0] {
        assert!((stats::f_cdf(1.0, d, d).unwrap() - 0.5).abs() < 1e-6);
    }
}
