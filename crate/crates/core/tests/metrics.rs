use proptest::prelude::*;

use lvse_core::evaluation::{loading_quality, nearest_rank, pooled_quantile, voltage_quality};

#[test]
fn quantile_picks_the_nearest_rank_order_statistic() {
    let n = 35_040;
    // distinct magnitudes in scrambled order, half of them negative
    let samples: Vec<f64> = (0..n)
        .map(|i| {
            let k = (i * 7919) % n + 1;
            if i % 2 == 0 { k as f64 } else { -(k as f64) }
        })
        .collect();
    assert_eq!(nearest_rank(0.99, n), 34_690);
    assert_eq!(pooled_quantile(&samples, 0.99).unwrap(), 34_690.0);
    assert_eq!(pooled_quantile(&samples, 0.95).unwrap(), 33_288.0);
}

fn arb_samples() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-1.0f64..1.0, 1..200)
}

proptest! {
    #[test]
    fn quantile_is_monotone_in_q(s in arb_samples(), a in 0.001f64..0.999, b in 0.001f64..0.999) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(pooled_quantile(&s, lo).unwrap() <= pooled_quantile(&s, hi).unwrap());
    }

    #[test]
    fn quantile_ignores_sample_order(mut s in arb_samples(), q in 0.001f64..0.999, rot in 0usize..200) {
        let before = pooled_quantile(&s, q).unwrap();
        let k = rot % s.len();
        s.rotate_left(k);
        s.reverse();
        prop_assert_eq!(before, pooled_quantile(&s, q).unwrap());
    }

    #[test]
    fn quantile_is_one_of_the_magnitudes(s in arb_samples(), q in 0.001f64..0.999) {
        let v = pooled_quantile(&s, q).unwrap();
        prop_assert!(s.iter().any(|x| x.abs() == v));
    }

    #[test]
    fn loading_quality_is_antisymmetric(a in 0.0f64..500.0, b in 0.0f64..500.0, imax in 1.0f64..600.0) {
        prop_assert_eq!(loading_quality(a, b, imax), -loading_quality(b, a, imax));
    }

    #[test]
    fn voltage_quality_flips_sign(a in 0.8f64..1.2, b in 0.8f64..1.2) {
        let fwd = voltage_quality(a, b);
        let back = voltage_quality(b, a);
        prop_assert!(fwd * back <= 0.0);
        prop_assert_eq!(fwd == 0.0, back == 0.0);
    }

    #[test]
    fn inflating_the_error_scales_the_sample(truth in 0.8f64..1.2, err in -0.05f64..0.05, k in 0.1f64..10.0, i in 0.0f64..300.0, ie in -50.0f64..50.0, imax in 100.0f64..400.0) {
        let v = voltage_quality(truth + k * err, truth);
        prop_assert!((v - k * voltage_quality(truth + err, truth)).abs() <= 1e-12 * (1.0 + v.abs()));
        // current magnitudes are never negative
        prop_assume!(i + ie >= 0.0 && i + k * ie >= 0.0);
        let l = loading_quality(i + k * ie, i, imax);
        prop_assert!((l - k * loading_quality(i + ie, i, imax)).abs() <= 1e-12 * (1.0 + l.abs()));
    }
}
