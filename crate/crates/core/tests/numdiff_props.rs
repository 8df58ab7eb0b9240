use proptest::prelude::*;

use wcreg::numdiff::{self, Truth};
use wcreg::{add_noise, integrate_volterra, sup_distance, Grid, HolderSpec, NoiseModel};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn budget_dominates_error(
        truth in prop_oneof![Just(Truth::Sine), Just(Truth::Square), (0u64..1000).prop_map(Truth::Spline)],
        model in prop::sample::select(NoiseModel::ALL.to_vec()),
        log_delta in -5.0f64..-2.0,
        a in 1.2f64..=2.0,
        m in 0.5f64..4.0,
        seed in any::<u64>(),
    ) {
        let spec = HolderSpec::new(a, m).unwrap();
        let grid = Grid::new(1025).unwrap();
        let delta = 10f64.powf(log_delta);
        let u = truth.admissible(grid, &spec, 0.9).unwrap();
        let data = add_noise(&integrate_volterra(&u), delta, model, seed).unwrap();
        let v = numdiff::differentiate(&data, &spec).unwrap();
        let budget = numdiff::error_budget(delta, &spec, grid).unwrap();
        let e = sup_distance(&v, &u).unwrap();
        prop_assert!(e <= budget.total * (1.0 + 1e-6), "{} > {}", e, budget.total);
    }

    #[test]
    fn budget_rate_slope(a in 1.1f64..=2.0, m in 0.1f64..10.0) {
        let spec = HolderSpec::new(a, m).unwrap();
        let (d1, d2) = (1e-3, 1e-7);
        let t1 = numdiff::continuous_error_budget(d1, &spec).unwrap().total;
        let t2 = numdiff::continuous_error_budget(d2, &spec).unwrap().total;
        let slope = (t1 / t2).ln() / (d1 / d2).ln();
        prop_assert!((slope - (1.0 - 1.0 / a)).abs() <= 0.02);
    }
}
