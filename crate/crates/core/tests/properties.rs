use proptest::prelude::*;
use rsd::config::RunConfig;
use rsd::schedule::{evenly_placed, ScheduleShape, ShiftingSchedule};

fn shape() -> impl Strategy<Value = ScheduleShape> {
    prop_oneof![Just(ScheduleShape::LogLinear), Just(ScheduleShape::Linear)]
}

proptest! {
    #[test]
    fn schedules_increase_and_telescope(
        steps in 2usize..40,
        lo in 1e-4f64..0.2,
        span in 0.05f64..0.8,
        kappa in 0.1f64..4.0,
        shape in shape(),
    ) {
        let hi = (lo + span).min(1.0);
        let s = ShiftingSchedule::build(steps, lo, hi, kappa, shape).unwrap();
        prop_assert_eq!(s.eta(steps), hi);
        let mut sum = 0.0;
        for t in 1..=steps {
            prop_assert!(s.alpha(t) > 0.0);
            sum += s.alpha(t);
        }
        prop_assert!((sum - hi).abs() < 1e-12);
        for t in 2..=steps {
            let w = s.weight_of(t).unwrap();
            prop_assert!(w > 0.0 && w.is_finite());
            prop_assert_eq!(s.loss_weight(t, true), w);
        }
        prop_assert_eq!(s.loss_weight(1, true), 0.0);
    }

    #[test]
    fn placed_timesteps_end_at_t(steps in 1usize..60, frac in 0.0f64..1.0) {
        let n = 1 + ((steps - 1) as f64 * frac) as usize;
        let ts = evenly_placed(steps, n).unwrap();
        prop_assert_eq!(*ts.last().unwrap(), steps);
        prop_assert!(ts[0] >= 1);
        prop_assert!(ts.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(ts.len() <= n);
    }

    #[test]
    fn config_overrides_round_trip(seed in 0u64..1_000_000, lr in 1e-6f64..1e-2, steps in 1usize..5000) {
        let set = vec![
            format!("distill.seed={seed}"),
            format!("distill.lr={lr:e}"),
            format!("teacher.steps={steps}"),
        ];
        let cfg = RunConfig::parse_with("", &set).unwrap();
        prop_assert_eq!(cfg.distill.seed, seed);
        prop_assert_eq!(cfg.teacher.steps, steps);
        prop_assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }
}
