use lobsim_analytics::*;
use lobsim_core::types::MICROS_PER_SECOND as S;
use proptest::prelude::*;

fn price_path() -> impl Strategy<Value = PriceSeries> {
    prop::collection::vec((1u64..3_000_000, 50.0f64..150.0), 3..80).prop_map(|steps| {
        let mut t = 0;
        let mut times = Vec::new();
        let mut prices = Vec::new();
        for (gap, p) in steps {
            times.push(t);
            prices.push(p);
            t += gap;
        }
        PriceSeries::new(times, prices).unwrap()
    })
}

proptest! {
    #[test]
    fn log_returns_telescope(p in price_path(), dt in 1u64..500_000) {
        let end = *p.times.last().unwrap();
        prop_assume!(end >= 4 * dt);
        let fine = resample(&p, dt).unwrap();
        let coarse = resample(&p, 2 * dt).unwrap();
        let paired = fine.aggregate(2);
        prop_assert_eq!(paired.values.len(), coarse.values.len());
        for (a, b) in paired.values.iter().zip(&coarse.values) {
            prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
        }
    }

    #[test]
    fn drawdown_translation_and_scaling(p in price_path(), shift in 0.0f64..100.0, scale in 0.1f64..10.0, frac in 0.0f64..0.9) {
        let end = *p.times.last().unwrap();
        let trigger = (end as f64 * frac) as u64;
        let base = drawdown_slope(&p, trigger).unwrap();
        let shifted = PriceSeries::new(p.times.clone(), p.prices.iter().map(|x| x + shift).collect()).unwrap();
        let scaled = PriceSeries::new(p.times.clone(), p.prices.iter().map(|x| x * scale).collect()).unwrap();
        let tol = 1e-9 * (1.0 + base.abs());
        prop_assert!((drawdown_slope(&shifted, trigger).unwrap() - base).abs() < tol * 100.0);
        prop_assert!((drawdown_slope(&scaled, trigger).unwrap() - scale * base).abs() < tol * 100.0 * scale);
    }

    /// Amplifying a stress episode never un-detects it, for a calm mean of
    /// zero and an episode made only of non-positive returns after the trigger.
    #[test]
    fn detection_is_monotone_for_falling_episodes(
        pre in prop::collection::vec(-1.9f64..1.9, 120),
        post in prop::collection::vec(-6.0f64..0.0, 1..60),
        tail in prop::collection::vec(-1.9f64..0.0, 200),
        c in 1.0f64..4.0,
    ) {
        let calm = CalmStats { mean: 0.0, std: 1.0, samples: 1 };
        let trigger = 120 * S;
        let build = |k: f64| {
            let mut v: Vec<f64> = pre.clone();
            v.extend(post.iter().map(|r| r * k));
            v.extend(tail.iter().map(|r| r * k));
            ReturnSeries { origin: 0, dt: S, values: v }
        };
        let params = ImpactParams::default();
        let base = detect_immediate_impact(&build(1.0), trigger, Some(&calm), &params).unwrap();
        let amplified = detect_immediate_impact(&build(c), trigger, Some(&calm), &params).unwrap();
        if base.detected {
            prop_assert!(amplified.detected, "base {:?} amplified {:?}", base, amplified);
        }
    }
}
