//! Variational regularization of an injective nonlinear problem `A(v) = f`:
//! minimize `F_δ(v) = ‖A(v) - f_δ‖ + δ φ(v)` over
//! `S_δ = {v : ‖A(v) - f_δ‖ ≤ δ, φ(v) ≤ c}` with `φ(v) = ‖v‖²`.
//!
//! Any `u` that generated the data is feasible, so the minimum is at most
//! `(1 + φ(u)) δ`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linreg::apply;
use crate::matrix::{norm2, Matrix};
use crate::seeds::derive_seed;
use crate::spectral::{make_problem, svd, ProblemSpec, SvdTriple};

pub const DEFAULT_RESTARTS: usize = 32;

const DESCENT_ITERATIONS: usize = 500;
const NEWTON_ITERATIONS: usize = 100;
const FD_STEP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Nonlinearity {
    Identity,
    /// `t + t³/3`
    Cubic,
}

impl Nonlinearity {
    pub fn eval(self, t: f64) -> f64 {
        match self {
            Nonlinearity::Identity => t,
            Nonlinearity::Cubic => t + t * t * t / 3.0,
        }
    }

    pub fn derivative(self, t: f64) -> f64 {
        match self {
            Nonlinearity::Identity => 1.0,
            Nonlinearity::Cubic => 1.0 + t * t,
        }
    }

    pub fn inverse(self, y: f64) -> f64 {
        match self {
            Nonlinearity::Identity => y,
            Nonlinearity::Cubic => {
                // Real root of t³ + 3t - 3y = 0, polished by Newton.
                let s = (2.25 * y * y + 1.0).sqrt();
                let mut t = (1.5 * y + s).cbrt() + (1.5 * y - s).cbrt();
                for _ in 0..3 {
                    t -= (self.eval(t) - y) / self.derivative(t);
                }
                t
            }
        }
    }
}

impl std::str::FromStr for Nonlinearity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Nonlinearity::Identity),
            "cubic" => Ok(Nonlinearity::Cubic),
            _ => Err(Error::InvalidProblem(format!("unknown nonlinearity `{s}` (identity, cubic)"))),
        }
    }
}

impl std::fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Nonlinearity::Identity => "identity",
            Nonlinearity::Cubic => "cubic",
        })
    }
}

/// `A(v) = B σ(v)` with `σ` applied componentwise.
#[derive(Clone, Debug)]
pub struct NonlinearProblem {
    b: Matrix,
    b_svd: SvdTriple,
    nonlinearity: Nonlinearity,
    phi_cap: f64,
}

impl NonlinearProblem {
    pub fn new(b: Matrix, nonlinearity: Nonlinearity, phi_cap: f64) -> Result<Self> {
        let b_svd = svd(&b)?;
        if b_svd.sigma.last().copied().unwrap_or(0.0) <= 0.0 {
            return Err(Error::InvalidProblem("B must be injective".into()));
        }
        if !(phi_cap > 0.0 && phi_cap.is_finite()) {
            return Err(Error::InvalidProblem(format!("φ cap must be positive, got {phi_cap}")));
        }
        Ok(Self { b, b_svd, nonlinearity, phi_cap })
    }

    /// `B = Q₁ diag(1/i) Q₂ᵀ` of dimension `n`.
    pub fn gallery(n: usize, nonlinearity: Nonlinearity, phi_cap: f64, seed: u64) -> Result<Self> {
        let (b, _) = make_problem(&ProblemSpec::rotated_diagonal(n, 1.0, seed))?;
        Self::new(b, nonlinearity, phi_cap)
    }

    pub fn dim(&self) -> usize {
        self.b.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.b
    }

    pub fn matrix_svd(&self) -> &SvdTriple {
        &self.b_svd
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        self.nonlinearity
    }

    pub fn phi_cap(&self) -> f64 {
        self.phi_cap
    }

    pub fn forward(&self, v: &[f64]) -> Result<Vec<f64>> {
        let s: Vec<f64> = v.iter().map(|&t| self.nonlinearity.eval(t)).collect();
        self.b.matvec(&s)
    }

    pub fn residual(&self, v: &[f64], f_delta: &[f64]) -> Result<f64> {
        let av = self.forward(v)?;
        if av.len() != f_delta.len() {
            return Err(Error::DimensionMismatch { expected: av.len(), got: f_delta.len() });
        }
        Ok(av.iter().zip(f_delta).map(|(a, f)| (a - f) * (a - f)).sum::<f64>().sqrt())
    }
}

/// `φ(v) = ‖v‖²`
pub fn phi(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// `‖A(v) - f_δ‖ + δ ‖v‖²`
pub fn functional(problem: &NonlinearProblem, v: &[f64], f_delta: &[f64], delta: f64) -> Result<f64> {
    Ok(problem.residual(v, f_delta)? + delta * phi(v))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinimizeReport {
    pub v_delta: Vec<f64>,
    pub f_value: f64,
    pub m_hat: f64,
    pub feasible: bool,
    pub iterations: usize,
    pub restarts: usize,
}

struct Local<'a> {
    problem: &'a NonlinearProblem,
    f: &'a [f64],
    delta: f64,
}

impl Local<'_> {
    fn value(&self, v: &[f64]) -> f64 {
        functional(self.problem, v, self.f, self.delta).expect("dimensions checked")
    }

    fn residual(&self, v: &[f64]) -> f64 {
        self.problem.residual(v, self.f).expect("dimensions checked")
    }

    fn feasible(&self, v: &[f64]) -> bool {
        self.residual(v) <= self.delta && phi(v) <= self.problem.phi_cap
    }

    fn project_cap(&self, v: &mut [f64]) {
        let p = phi(v);
        if p > self.problem.phi_cap {
            let scale = (self.problem.phi_cap / p).sqrt() * (1.0 - 1e-12);
            v.iter_mut().for_each(|x| *x *= scale);
        }
    }

    /// Damped Gauss–Newton on `A(v) = f` until the residual is at most `target`.
    fn reduce_residual(&self, mut v: Vec<f64>, target: f64) -> (Vec<f64>, usize) {
        let nl = self.problem.nonlinearity;
        let mut res = self.residual(&v);
        let mut steps = 0;
        for _ in 0..NEWTON_ITERATIONS {
            if res <= target {
                break;
            }
            let av = self.problem.forward(&v).expect("dimensions checked");
            let r: Vec<f64> = av.iter().zip(self.f).map(|(a, f)| f - a).collect();
            // J = B diag(σ'(v)) is invertible: Δ = diag(1/σ') B⁻¹ r.
            let binv_r = apply(&self.problem.b_svd, &r, f64::MIN_POSITIVE).expect("dimensions checked");
            let dir: Vec<f64> = binv_r.iter().zip(&v).map(|(x, t)| x / nl.derivative(*t)).collect();
            let mut t = 1.0;
            let mut moved = false;
            while t > 1e-12 {
                let w: Vec<f64> = v.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
                let rw = self.residual(&w);
                if rw < res {
                    v = w;
                    res = rw;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            steps += 1;
            if !moved {
                break;
            }
        }
        (v, steps)
    }

    /// Brings `v` into `S_δ` by alternating residual reduction and radial projection.
    fn make_feasible(&self, mut v: Vec<f64>) -> (Option<Vec<f64>>, usize) {
        let mut steps = 0;
        for _ in 0..8 {
            self.project_cap(&mut v);
            if self.feasible(&v) {
                return (Some(v), steps);
            }
            let (w, s) = self.reduce_residual(v, self.delta);
            v = w;
            steps += s;
            if self.feasible(&v) {
                return (Some(v), steps);
            }
        }
        (None, steps)
    }

    fn gradient(&self, v: &[f64]) -> Vec<f64> {
        let h = FD_STEP * norm2(v).max(1.0);
        let mut w = v.to_vec();
        (0..v.len())
            .map(|i| {
                w[i] = v[i] + h;
                let up = self.value(&w);
                w[i] = v[i] - h;
                let down = self.value(&w);
                w[i] = v[i];
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    /// Feasibility phase, projected descent with residual repair, then a
    /// zero-residual polish (the residual term is an exact penalty for small δ).
    fn run(&self, start: Vec<f64>) -> Option<(Vec<f64>, f64, usize)> {
        let (v, mut iterations) = self.make_feasible(start);
        let mut v = v?;
        let mut fv = self.value(&v);
        let mut t = 1.0;
        for _ in 0..DESCENT_ITERATIONS {
            iterations += 1;
            let g = self.gradient(&v);
            let gg: f64 = g.iter().map(|x| x * x).sum();
            if gg == 0.0 || !gg.is_finite() {
                break;
            }
            let mut accepted = false;
            while t * gg.sqrt() > 1e-15 * norm2(&v).max(1.0) {
                let mut w: Vec<f64> = v.iter().zip(&g).map(|(a, d)| a - t * d).collect();
                self.project_cap(&mut w);
                if self.residual(&w) > self.delta {
                    w = self.reduce_residual(w, self.delta).0;
                }
                if self.feasible(&w) {
                    let fw = self.value(&w);
                    if fw <= fv - 1e-4 * t * gg {
                        v = w;
                        fv = fw;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
            t *= 2.0;
        }
        let (polished, steps) = self.reduce_residual(v.clone(), 0.0);
        iterations += steps;
        if self.feasible(&polished) {
            let fp = self.value(&polished);
            if fp < fv {
                v = polished;
                fv = fp;
            }
        }
        Some((v, fv, iterations))
    }
}

/// Multi-start minimization of `F_δ` over `S_δ`: starts at 0, at the
/// linearized Tikhonov solution and at `restarts` seeded points of `K_c`.
pub fn minimize(
    problem: &NonlinearProblem,
    f_delta: &[f64],
    delta: f64,
    restarts: usize,
    seed: u64,
) -> Result<MinimizeReport> {
    minimize_with_starts(problem, f_delta, delta, restarts, seed, &[])
}

pub fn minimize_with_starts(
    problem: &NonlinearProblem,
    f_delta: &[f64],
    delta: f64,
    restarts: usize,
    seed: u64,
    extra_starts: &[Vec<f64>],
) -> Result<MinimizeReport> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidDelta(delta));
    }
    if restarts == 0 {
        return Err(Error::InvalidArgument("restart budget must be at least 1".into()));
    }
    let n = problem.dim();
    if f_delta.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: f_delta.len() });
    }
    for s in extra_starts {
        if s.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: s.len() });
        }
    }

    let linearized: Vec<f64> = apply(&problem.b_svd, f_delta, delta)?
        .into_iter()
        .map(|y| problem.nonlinearity.inverse(y))
        .collect();
    let mut starts = vec![vec![0.0; n], linearized];
    starts.extend(extra_starts.iter().cloned());
    let radius = problem.phi_cap.sqrt();
    for i in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[i as u64]));
        let dir: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let r = radius * rng.gen::<f64>().powf(1.0 / n as f64) / norm2(&dir).max(f64::MIN_POSITIVE);
        starts.push(dir.iter().map(|x| x * r).collect());
    }

    let local = Local { problem, f: f_delta, delta };
    let runs: Vec<Option<(Vec<f64>, f64, usize)>> = starts.par_iter().map(|s| local.run(s.clone())).collect();
    let iterations = runs.iter().flatten().map(|r| r.2).sum();
    let best = runs
        .into_iter()
        .flatten()
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .ok_or_else(|| Error::Infeasible("no start reached ‖A(v) - f_δ‖ ≤ δ within φ(v) ≤ c".into()))?;
    let (v_delta, f_value, _) = best;
    Ok(MinimizeReport {
        feasible: local.feasible(&v_delta),
        v_delta,
        f_value,
        m_hat: f_value,
        iterations,
        restarts: starts.len(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyRow {
    pub delta: f64,
    pub f_value: f64,
    /// `c₁ δ = (1 + φ(u)) δ`
    pub c1_delta: f64,
    pub error_to_truth: f64,
    pub feasible: bool,
}

impl StudyRow {
    pub const CSV_HEADER: &'static str = "delta,F_value,m_hat_bound_c1delta,error_to_truth,feasible";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.delta, self.f_value, self.c1_delta, self.error_to_truth, self.feasible)
    }
}

fn perturb(exact: &[f64], radius: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir: Vec<f64> = exact.iter().map(|_| StandardNormal.sample(&mut rng)).collect();
    // Shrunk until the rounded data keeps the truth strictly inside S_δ.
    let target = radius * (1.0 - 1e-12);
    let mut scale = target / norm2(&dir);
    loop {
        let f: Vec<f64> = exact.iter().zip(&dir).map(|(a, e)| a + scale * e).collect();
        let dist = exact.iter().zip(&f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if dist <= target {
            return f;
        }
        scale *= target / dist * (1.0 - 1e-12);
    }
}

/// Data `A(u) + e` with `e` in a seeded random direction and `‖e‖ = noise_fraction · δ`.
pub fn noisy_data(problem: &NonlinearProblem, u: &[f64], delta: f64, noise_fraction: f64, seed: u64) -> Result<Vec<f64>> {
    if !(delta >= 0.0 && delta.is_finite()) || !(0.0..=1.0).contains(&noise_fraction) {
        return Err(Error::InvalidArgument(format!("noise δ = {delta}, fraction {noise_fraction}")));
    }
    Ok(perturb(&problem.forward(u)?, noise_fraction * delta, seed))
}

/// For each `δ`, minimizes `F_δ` on data `A(u) + e` with `‖e‖ = δ` and records
/// the distance to `u`.
pub fn convergence_study(
    problem: &NonlinearProblem,
    u_true: &[f64],
    deltas: &[f64],
    restarts: usize,
    seed: u64,
) -> Result<Vec<StudyRow>> {
    convergence_study_with_noise(problem, u_true, deltas, restarts, seed, 1.0)
}

/// As [`convergence_study`], with noise of norm `noise_fraction · δ`.
pub fn convergence_study_with_noise(
    problem: &NonlinearProblem,
    u_true: &[f64],
    deltas: &[f64],
    restarts: usize,
    seed: u64,
    noise_fraction: f64,
) -> Result<Vec<StudyRow>> {
    if deltas.is_empty() {
        return Err(Error::InvalidArgument("no noise levels given".into()));
    }
    if deltas.iter().any(|&d| !(d > 0.0 && d.is_finite())) || deltas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("noise levels must be positive and decreasing".into()));
    }
    if !(0.0..=1.0).contains(&noise_fraction) {
        return Err(Error::InvalidArgument(format!("noise fraction {noise_fraction} outside [0, 1]")));
    }
    let phi_u = phi(u_true);
    if phi_u > problem.phi_cap {
        return Err(Error::InvalidArgument(format!("φ(u) = {phi_u} exceeds the cap {}", problem.phi_cap)));
    }
    let exact = problem.forward(u_true)?;
    deltas
        .iter()
        .enumerate()
        .map(|(i, &delta)| {
            let f = perturb(&exact, noise_fraction * delta, derive_seed(seed, &[i as u64, 0]));
            let report = minimize(problem, &f, delta, restarts, derive_seed(seed, &[i as u64, 1]))?;
            let error = report.v_delta.iter().zip(u_true).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            Ok(StudyRow {
                delta,
                f_value: report.f_value,
                c1_delta: (1.0 + phi_u) * delta,
                error_to_truth: error,
                feasible: report.feasible,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }

    #[test]
    fn cubic_inverse() {
        for y in [-5.0, -0.3, 0.0, 1e-9, 0.7, 12.0] {
            let t = Nonlinearity::Cubic.inverse(y);
            assert!((Nonlinearity::Cubic.eval(t) - y).abs() < 1e-13 * y.abs().max(1.0));
        }
    }

    #[test]
    fn functional_examples() {
        let p = NonlinearProblem::gallery(3, Nonlinearity::Cubic, 4.0, 1).unwrap();
        let u = [0.5, -0.2, 0.1];
        let f = p.forward(&u).unwrap();
        assert!((functional(&p, &u, &f, 0.01).unwrap() - 0.01 * 0.3).abs() < 1e-15);
        let zero = functional(&p, &[0.0; 3], &f, 0.01).unwrap();
        assert!((zero - norm2(&f)).abs() < 1e-15);

        // B = diag(1, 2): A(1, -1) = (4/3, -8/3); against f = (1, 0):
        // ‖(1/3, -8/3)‖ + 0.1·2 = √65/3 + 0.2.
        let p = NonlinearProblem::new(Matrix::from_diagonal(&[1.0, 2.0]), Nonlinearity::Cubic, 4.0).unwrap();
        let v = functional(&p, &[1.0, -1.0], &[1.0, 0.0], 0.1).unwrap();
        assert!((v - (65f64.sqrt() / 3.0 + 0.2)).abs() < 1e-14, "{v}");
    }

    #[test]
    fn rejects_singular_operator() {
        let b = Matrix::from_diagonal(&[1.0, 0.0]);
        assert!(matches!(NonlinearProblem::new(b, Nonlinearity::Identity, 1.0), Err(Error::InvalidProblem(_))));
    }

    #[test]
    fn exact_data_from_truth() {
        let p = NonlinearProblem::gallery(4, Nonlinearity::Cubic, 4.0, 2).unwrap();
        let u = [0.4, -0.3, 0.8, 0.1];
        let f = p.forward(&u).unwrap();
        let r = minimize_with_starts(&p, &f, 1e-3, 4, 0, &[u.to_vec()]).unwrap();
        assert!(r.feasible);
        assert!(dist(&r.v_delta, &u) < 1e-8, "{:?}", r.v_delta);
        assert!(r.f_value <= functional(&p, &u, &f, 1e-3).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn value_below_twice_c1_delta() {
        let p = NonlinearProblem::gallery(4, Nonlinearity::Cubic, 4.0, 5).unwrap();
        let u = [0.9, -0.5, 0.2, 0.6];
        let c1 = 1.0 + phi(&u);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for delta in [1e-1, 1e-2, 1e-3] {
            let e: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let scale = 0.99 * delta / norm2(&e);
            let f: Vec<f64> = p.forward(&u).unwrap().iter().zip(&e).map(|(a, b)| a + scale * b).collect();
            assert!(functional(&p, &u, &f, delta).unwrap() <= c1 * delta);
            let r = minimize(&p, &f, delta, 8, 1).unwrap();
            assert!(r.feasible && r.f_value <= 2.0 * c1 * delta, "{r:?}");
            assert!(r.f_value <= functional(&p, &u, &f, delta).unwrap() * (1.0 + 1e-9));
        }
    }

    #[test]
    fn infeasible_data_is_reported() {
        let p = NonlinearProblem::gallery(2, Nonlinearity::Identity, 0.01, 3).unwrap();
        let f = p.forward(&[3.0, 3.0]).unwrap();
        assert!(matches!(minimize(&p, &f, 1e-3, 4, 0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn injective_on_random_pairs() {
        let p = NonlinearProblem::gallery(4, Nonlinearity::Cubic, 4.0, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let v: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let gap = dist(&p.forward(&v).unwrap(), &p.forward(&w).unwrap());
            assert!(gap > 1e-12 * dist(&v, &w).max(1.0));
        }
    }

    #[test]
    fn zero_noise_study() {
        let p = NonlinearProblem::gallery(4, Nonlinearity::Cubic, 4.0, 9).unwrap();
        let u = [0.3, 0.5, -0.7, 0.2];
        let rows = convergence_study_with_noise(&p, &u, &[1e-1, 1e-2, 1e-3], 4, 0, 0.0).unwrap();
        for r in &rows {
            assert!(r.feasible && r.error_to_truth < 1e-8, "{r:?}");
        }
        assert!(convergence_study(&p, &u, &[1e-3, 1e-2], 4, 0).is_err());
    }
}
