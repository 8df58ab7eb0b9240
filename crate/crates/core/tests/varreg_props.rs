use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wcreg::linreg;
use wcreg::matrix::norm2;
use wcreg::varreg::{self, NonlinearProblem, Nonlinearity};

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn nonlinearity() -> impl Strategy<Value = Nonlinearity> {
    prop_oneof![Just(Nonlinearity::Identity), Just(Nonlinearity::Cubic)]
}

// A point of K_c: direction scaled to φ(u) = fill · c.
fn inside(dir: &[f64], c: f64, fill: f64) -> Vec<f64> {
    let scale = (fill * c).sqrt() / norm2(dir).max(1e-300);
    dir.iter().map(|x| x * scale).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn truth_is_feasible_and_dominated(
        nl in nonlinearity(),
        dir in prop::collection::vec(-1.0f64..1.0, 2..5),
        fill in 0.05f64..1.0,
        log_delta in -5.0f64..-1.0,
        seed in 0u64..1000,
    ) {
        let n = dir.len();
        let problem = NonlinearProblem::gallery(n, nl, 2.0, seed).unwrap();
        let u = inside(&dir, 2.0, fill);
        let delta = 10f64.powf(log_delta);
        let f = varreg::noisy_data(&problem, &u, delta, 1.0, seed).unwrap();
        let f_truth = varreg::functional(&problem, &u, &f, delta).unwrap();
        prop_assert!(f_truth <= (1.0 + varreg::phi(&u)) * delta, "F(u) = {}", f_truth);
        let report = varreg::minimize_with_starts(&problem, &f, delta, 4, seed, &[u.clone()]).unwrap();
        prop_assert!(report.feasible, "{:?}", report);
        prop_assert!(report.m_hat <= f_truth * (1.0 + 1e-12), "{} > {}", report.m_hat, f_truth);
    }
}

#[test]
fn forward_map_is_injective_on_compactum() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for nl in [Nonlinearity::Identity, Nonlinearity::Cubic] {
        let problem = NonlinearProblem::gallery(4, nl, 3.0, 1).unwrap();
        for _ in 0..100 {
            let draw = |rng: &mut ChaCha8Rng| {
                let d: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                inside(&d, 3.0, rng.gen_range(0.0..1.0))
            };
            let (v, w) = (draw(&mut rng), draw(&mut rng));
            let gap = distance(&problem.forward(&v).unwrap(), &problem.forward(&w).unwrap());
            assert!(gap > 1e-12 * norm2(&v).max(norm2(&w)).max(1.0));
        }
    }
}

// Minimum of F over a 400 x 400 grid on the box around B⁻¹f containing S_δ.
fn grid_oracle(problem: &NonlinearProblem, f: &[f64], delta: f64) -> f64 {
    let t = problem.matrix_svd();
    let center = linreg::apply(t, f, f64::MIN_POSITIVE).unwrap();
    let half: Vec<f64> = (0..2)
        .map(|i| {
            let row: Vec<f64> = (0..2).map(|j| (0..2).map(|k| t.v[(i, k)] / t.sigma[k] * t.u[(j, k)]).sum()).collect();
            delta * norm2(&row)
        })
        .collect();
    let n = 400;
    let mut best = f64::INFINITY;
    for i in 0..=n {
        for j in 0..=n {
            let v = [
                center[0] + half[0] * (2.0 * i as f64 / n as f64 - 1.0),
                center[1] + half[1] * (2.0 * j as f64 / n as f64 - 1.0),
            ];
            if problem.residual(&v, f).unwrap() <= delta && varreg::phi(&v) <= problem.phi_cap() {
                best = best.min(varreg::functional(problem, &v, f, delta).unwrap());
            }
        }
    }
    best
}

#[test]
fn planar_identity_matches_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for s in 0..6u64 {
        let problem = NonlinearProblem::gallery(2, Nonlinearity::Identity, 4.0, s).unwrap();
        let u: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let delta = [0.05, 0.2, 0.5][s as usize % 3];
        let f = varreg::noisy_data(&problem, &u, delta, 0.9, s).unwrap();
        let report = varreg::minimize(&problem, &f, delta, 16, s).unwrap();
        let oracle = grid_oracle(&problem, &f, delta);
        assert!((report.f_value - oracle).abs() <= 0.01 * oracle, "{} vs {oracle}", report.f_value);
    }
}

// With the identity the stationarity condition of an interior minimizer is
// (BᵀB + 2δ‖Bv - f‖) v = Bᵀf, the linear filter at a = 2δ‖Bv - f‖.
#[test]
fn identity_case_agrees_with_linear_filter() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut compared = 0;
    for s in 0..24u64 {
        let n = 2 + s as usize % 3;
        let problem = NonlinearProblem::gallery(n, Nonlinearity::Identity, 4.0, s).unwrap();
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let delta = [0.05, 0.1, 0.3][s as usize % 3];
        let f = varreg::noisy_data(&problem, &u, delta, 0.9, s).unwrap();
        let report = varreg::minimize(&problem, &f, delta, 16, s).unwrap();
        let res = problem.residual(&report.v_delta, &f).unwrap();
        if !(res < delta * (1.0 - 1e-6) && res > 0.0 && varreg::phi(&report.v_delta) < problem.phi_cap()) {
            continue;
        }
        let linear = linreg::apply(problem.matrix_svd(), &f, 2.0 * delta * res).unwrap();
        let (e_var, e_lin) = (distance(&report.v_delta, &u), distance(&linear, &u));
        assert!((e_var - e_lin).abs() <= 0.1 * e_lin, "seed {s}: {e_var} vs {e_lin}");
        compared += 1;
    }
    assert!(compared >= 6, "only {compared} interior instances");
}
