//! Tikhonov regularization `R_δ = (T + aI)^(-1) A*` under a spectral source
//! condition, with its worst-case error certificate.
//!
//! The a-priori set is `K = {y : ∫ s^(-2p) dρ_y ≤ k²}` where `dρ_y` is the
//! spectral measure of `y` for `T = A*A`. The worst-case error over
//! `{y ∈ K : ‖Ay - f_δ‖ ≤ δ}` splits as `J1 + J2` with
//! `J1 ≤ δ/(2√a)` and `J2 ≤ c_p k a^p`; the choice `a = b_p δ^(2/(2p+1))`
//! balances them to `C_p δ^(2p/(2p+1))`.

use std::cell::Cell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::norm2;
use crate::seeds::derive_seed;
use crate::spectral::{make_problem, ProblemSpec, SvdTriple};

/// Null-mode coefficients up to this size (relative to `max(1, ‖y‖)`) count as zero.
pub const NULL_COEFFICIENT_TOLERANCE: f64 = 1e-14;

pub const DEFAULT_RESTARTS: usize = 32;

/// Random restarts per trial inside [`certify`]; each trial also starts from its own truth.
pub const CERTIFY_RESTARTS: usize = 8;

/// Grid size of the exact scalar search.
pub const SCALAR_GRID_POINTS: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SourceSpec {
    p: f64,
    k: f64,
}

impl SourceSpec {
    pub fn new(p: f64, k: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) || !(k > 0.0 && k.is_finite()) {
            return Err(Error::InvalidSource { p, k });
        }
        Ok(Self { p, k })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// Exponent of the convergence rate, `2p/(2p+1)`.
    pub fn rate_exponent(&self) -> f64 {
        2.0 * self.p / (2.0 * self.p + 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantsPack {
    pub c_p: f64,
    pub b_p: f64,
    pub big_c_p: f64,
}

/// `c_p = p^p (1-p)^(1-p)`, `b_p = (4 p c_p k)^(-2/(2p+1))`,
/// `C_p = 1/(2√b_p) + c_p k b_p^p`.
pub fn constants(source: &SourceSpec) -> ConstantsPack {
    let (p, k) = (source.p, source.k);
    let c_p = p.powf(p) * (1.0 - p).powf(1.0 - p);
    let b_p = (4.0 * p * c_p * k).powf(-2.0 / (2.0 * p + 1.0));
    let big_c_p = 1.0 / (2.0 * b_p.sqrt()) + c_p * k * b_p.powf(p);
    ConstantsPack { c_p, b_p, big_c_p }
}

fn require_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidDelta(delta));
    }
    Ok(())
}

fn require_parameter(a: f64) -> Result<()> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::InvalidParameter(a));
    }
    Ok(())
}

/// `a(δ) = b_p δ^(2/(2p+1))`
pub fn choose_a(delta: f64, source: &SourceSpec) -> Result<f64> {
    require_delta(delta)?;
    Ok(constants(source).b_p * delta.powf(2.0 / (2.0 * source.p + 1.0)))
}

/// `δ/(2√a)`
pub fn j1_cont(delta: f64, a: f64) -> f64 {
    delta / (2.0 * a.sqrt())
}

/// `c_p k a^p`
pub fn j2_cont(source: &SourceSpec, a: f64) -> f64 {
    constants(source).c_p * source.k * a.powf(source.p)
}

/// `C_p δ^(2p/(2p+1))`
pub fn rate_bound(delta: f64, source: &SourceSpec) -> f64 {
    constants(source).big_c_p * delta.powf(source.rate_exponent())
}

/// `V diag(σ_i/(s_i+a)) Uᵀ f_δ`
pub fn apply(svd: &SvdTriple, f_delta: &[f64], a: f64) -> Result<Vec<f64>> {
    require_parameter(a)?;
    let g = svd.to_left_basis(f_delta)?;
    let z: Vec<f64> = svd.sigma.iter().zip(&g).map(|(&s, &gi)| s * gi / (s * s + a)).collect();
    svd.from_right_basis(&z)
}

/// `max_i σ_i/(σ_i²+a)` over a list of singular values.
pub fn filter_norm(sigma: &[f64], a: f64) -> Result<f64> {
    require_parameter(a)?;
    Ok(sigma.iter().fold(0.0, |m, &s| m.max(s / (s * s + a))))
}

/// `‖(T+aI)^(-1) A*‖ = max_i σ_i/(s_i+a)`
pub fn operator_norm(svd: &SvdTriple, a: f64) -> Result<f64> {
    filter_norm(&svd.sigma, a)
}

/// `k max_{s_i>0} a s_i^p/(s_i+a)`: the exact sup of `a‖(T+aI)^(-1)y‖` over `K`.
pub fn bias_sup(svd: &SvdTriple, source: &SourceSpec, a: f64) -> Result<f64> {
    require_parameter(a)?;
    Ok(source.k
        * svd
            .spectrum()
            .iter()
            .filter(|&&s| s > 0.0)
            .fold(0.0_f64, |m, &s| m.max(a * s.powf(source.p) / (s + a))))
}

/// `Σ_{s_i>0} s_i^(-2p) ⟨y, v_i⟩²` and whether it is at most `k²`.
pub fn source_membership(y: &[f64], svd: &SvdTriple, source: &SourceSpec) -> Result<(f64, bool)> {
    let z = svd.to_right_basis(y)?;
    let null_tol = NULL_COEFFICIENT_TOLERANCE * norm2(y).max(1.0);
    let mut value = 0.0;
    for (&sigma, &zi) in svd.sigma.iter().zip(&z) {
        if sigma > 0.0 {
            value += (sigma * sigma).powf(-2.0 * source.p) * zi * zi;
        } else if zi.abs() > null_tol {
            return Ok((f64::INFINITY, false));
        }
    }
    Ok((value, value <= source.k * source.k * (1.0 + 1e-9)))
}

fn active_modes(svd: &SvdTriple) -> Result<Vec<usize>> {
    let active: Vec<usize> = (0..svd.dim()).filter(|&i| svd.sigma[i] > 0.0).collect();
    if active.is_empty() {
        return Err(Error::DegenerateProblem);
    }
    Ok(active)
}

/// Spectral coordinates of a source element with energies `w_i k² s_i^(2p)`.
fn source_coordinates(svd: &SvdTriple, source: &SourceSpec, active: &[usize], w: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut z = vec![0.0; svd.dim()];
    for (&i, &wi) in active.iter().zip(w) {
        let s = svd.sigma[i] * svd.sigma[i];
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        z[i] = sign * wi.sqrt() * source.k * s.powf(source.p);
    }
    z
}

/// Seeded elements of `K` with random simplex weights over the non-null modes
/// and random signs; each has source value `k²` up to rounding.
pub fn sample_source_set(svd: &SvdTriple, source: &SourceSpec, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Err(Error::InvalidArgument("count must be at least 1".into()));
    }
    let active = active_modes(svd)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut w: Vec<f64> = active.iter().map(|_| Exp1.sample(&mut rng)).collect();
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= total);
            let z = source_coordinates(svd, source, &active, &w, &mut rng);
            svd.from_right_basis(&z)
        })
        .collect()
}

/// `y = k s_j^p v_j`, the source element concentrated on mode `j`.
pub fn source_mode(svd: &SvdTriple, source: &SourceSpec, j: usize) -> Result<Vec<f64>> {
    if j >= svd.dim() || svd.sigma[j] == 0.0 {
        return Err(Error::InvalidArgument(format!("mode {j} is not a non-null mode")));
    }
    let mut z = vec![0.0; svd.dim()];
    z[j] = source.k * (svd.sigma[j] * svd.sigma[j]).powf(source.p);
    svd.from_right_basis(&z)
}

/// The feasible set `{y ∈ K : ‖Ay - f_δ‖ ≤ δ}` in right-singular coordinates,
/// restricted to non-null modes: `Σ w1 z² ≤ k²` and `Σ w2 (z - c)² ≤ ρ²`.
struct Feasible {
    w1: Vec<f64>,
    w2: Vec<f64>,
    c: Vec<f64>,
    k2: f64,
    rho2: f64,
    // Multipliers of the last linear maximization, used as warm starts.
    hint_l1: Cell<f64>,
    hint_log_l2: Cell<f64>,
}

impl Feasible {
    fn new(svd: &SvdTriple, source: &SourceSpec, active: &[usize], g: &[f64], delta: f64) -> Result<Self> {
        let mut null_energy = 0.0;
        for i in 0..svd.dim() {
            if svd.sigma[i] == 0.0 {
                null_energy += g[i] * g[i];
            }
        }
        let rho2 = delta * delta - null_energy;
        if rho2 <= 0.0 {
            return Err(Error::Infeasible("data has more than δ energy outside the range of A".into()));
        }
        let w1 = active.iter().map(|&i| (svd.sigma[i] * svd.sigma[i]).powf(-2.0 * source.p)).collect();
        let w2 = active.iter().map(|&i| svd.sigma[i] * svd.sigma[i]).collect();
        let c = active.iter().map(|&i| g[i] / svd.sigma[i]).collect();
        Ok(Self { w1, w2, c, k2: source.k * source.k, rho2, hint_l1: Cell::new(0.0), hint_log_l2: Cell::new(f64::NAN) })
    }

    fn q1(&self, z: &[f64]) -> f64 {
        z.iter().zip(&self.w1).map(|(x, w)| w * x * x).sum()
    }

    fn q2(&self, z: &[f64]) -> f64 {
        z.iter().zip(&self.c).zip(&self.w2).map(|((x, c), w)| w * (x - c) * (x - c)).sum()
    }

    /// Point of `E1` closest to the centre of `E2` in the `E2` metric, with its `q2`.
    fn most_consistent(&self) -> (Vec<f64>, f64) {
        let at = |mu: f64| -> Vec<f64> {
            self.c.iter().zip(&self.w1).zip(&self.w2).map(|((c, w1), w2)| w2 * c / (w2 + mu * w1)).collect()
        };
        let z0 = at(0.0);
        if self.q1(&z0) <= self.k2 {
            return (z0, 0.0);
        }
        // 1/√q1(μ) is concave increasing in μ: Newton from the left converges monotonically.
        let mut mu = 0.0;
        let mut z = z0;
        for _ in 0..200 {
            let q = self.q1(&z);
            if (q / self.k2 - 1.0).abs() < 1e-14 {
                break;
            }
            let dq: f64 = z
                .iter()
                .zip(&self.w1)
                .zip(&self.w2)
                .map(|((x, w1), w2)| -2.0 * w1 * w1 * x * x / (w2 + mu * w1))
                .sum();
            let psi = 1.0 / q.sqrt() - 1.0 / self.k2.sqrt();
            let dpsi = -0.5 * q.powf(-1.5) * dq;
            let step = -psi / dpsi;
            if !(step > 0.0) || !step.is_finite() {
                break;
            }
            mu += step;
            z = at(mu);
        }
        let q2 = self.q2(&z);
        (z, q2)
    }

    /// `argmax ⟨d, z⟩` over both ellipsoids, through the two-multiplier dual.
    fn linear_max(&self, d: &[f64]) -> Vec<f64> {
        let only_e1 = {
            let scale = (d.iter().zip(&self.w1).map(|(d, w)| d * d / w).sum::<f64>() / self.k2).sqrt();
            d.iter().zip(&self.w1).map(|(d, w)| d / (w * scale)).collect::<Vec<f64>>()
        };
        if self.q2(&only_e1) <= self.rho2 {
            return only_e1;
        }
        let lambda2_alone = d.iter().zip(&self.w2).map(|(d, w)| d * d / w).sum::<f64>().sqrt() / (2.0 * self.rho2.sqrt());
        let only_e2: Vec<f64> =
            d.iter().zip(&self.c).zip(&self.w2).map(|((d, c), w)| c + d / (2.0 * lambda2_alone * w)).collect();
        if self.q1(&only_e2) <= self.k2 {
            return only_e2;
        }

        // G(λ2) = q2(z(λ1*(λ2), λ2)) - ρ² is decreasing; bracket its root in
        // log λ2, starting from the multiplier of the previous call.
        let excess = |t: f64| {
            let z = self.inner(d, t.exp());
            (self.q2(&z) / self.rho2 - 1.0, z)
        };
        let t0 = match self.hint_log_l2.get() {
            t if t.is_finite() => t,
            _ => lambda2_alone.ln(),
        };
        let (mut lo, mut hi) = (t0, t0);
        let (g0, z0) = excess(t0);
        let (mut g_lo, mut g_hi, mut z_hi) = (g0, g0, z0);
        let mut step = 0.25;
        for _ in 0..200 {
            if g_lo > 0.0 {
                break;
            }
            hi = lo;
            g_hi = g_lo;
            lo -= step;
            step *= 2.0;
            let (g, z) = excess(lo);
            if g <= 0.0 {
                z_hi = z;
            }
            g_lo = g;
        }
        for _ in 0..200 {
            if g_hi <= 0.0 {
                break;
            }
            lo = hi;
            g_lo = g_hi;
            hi += step;
            step *= 2.0;
            (g_hi, z_hi) = excess(hi);
        }
        if g_hi > 0.0 {
            return z_hi;
        }
        // Illinois regula falsi, keeping the feasible end.
        let mut side = 0;
        for _ in 0..200 {
            if g_hi.abs() < 1e-11 || hi - lo < 1e-15 * hi.abs().max(1.0) {
                break;
            }
            let t = (lo * g_hi - hi * g_lo) / (g_hi - g_lo);
            let t = if t > lo && t < hi { t } else { 0.5 * (lo + hi) };
            let (g, z) = excess(t);
            if g > 0.0 {
                lo = t;
                g_lo = g;
                if side == -1 {
                    g_hi *= 0.5;
                }
                side = -1;
            } else {
                hi = t;
                g_hi = g;
                z_hi = z;
                if side == 1 {
                    g_lo *= 0.5;
                }
                side = 1;
            }
        }
        self.hint_log_l2.set(hi);
        z_hi
    }

    /// Maximizer of the Lagrangian for fixed `λ2 > 0`, with `λ1 ≥ 0` chosen so `z ∈ E1`.
    /// `1/√q1` is concave increasing in `λ1`, so Newton from any start lands
    /// left of the root and then climbs to it monotonically.
    fn inner(&self, d: &[f64], l2: f64) -> Vec<f64> {
        let num: Vec<f64> = d.iter().zip(&self.c).zip(&self.w2).map(|((d, c), w)| d + 2.0 * l2 * w * c).collect();
        let at = |l1: f64| -> Vec<f64> {
            num.iter()
                .zip(&self.w1)
                .zip(&self.w2)
                .map(|((n, w1), w2)| n / (2.0 * (l1 * w1 + l2 * w2)))
                .collect()
        };
        let mut l1 = self.hint_l1.get();
        let mut z = at(l1);
        for _ in 0..100 {
            let q = self.q1(&z);
            if (l1 == 0.0 && q <= self.k2) || (q / self.k2 - 1.0).abs() < 1e-12 {
                break;
            }
            let dq: f64 = z
                .iter()
                .zip(&self.w1)
                .zip(&self.w2)
                .map(|((x, w1), w2)| -2.0 * w1 * w1 * x * x / (l1 * w1 + l2 * w2))
                .sum();
            let psi = 1.0 / q.sqrt() - 1.0 / self.k2.sqrt();
            let dpsi = -0.5 * q.powf(-1.5) * dq;
            let next = (l1 - psi / dpsi).max(0.0);
            if !next.is_finite() || next == l1 {
                break;
            }
            l1 = next;
            z = at(l1);
        }
        self.hint_l1.set(l1);
        z
    }
}


fn distance(z: &[f64], r: &[f64]) -> f64 {
    z.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Convex maximization of `‖z - r‖` by repeated exact linear maximization
/// along the current gradient; the value increases monotonically.
fn climb(set: &Feasible, r: &[f64], start_direction: &[f64]) -> (f64, Vec<f64>) {
    let mut z = set.linear_max(start_direction);
    let mut best = distance(&z, r);
    for _ in 0..500 {
        let d: Vec<f64> = z.iter().zip(r).map(|(a, b)| a - b).collect();
        if d.iter().all(|&x| x == 0.0) {
            break;
        }
        let next = set.linear_max(&d);
        let value = distance(&next, r);
        if value <= best * (1.0 + ASCENT_TOLERANCE) {
            break;
        }
        best = value;
        z = next;
    }
    (best, z)
}

/// Relative gain below which an ascent counts as converged.
const ASCENT_TOLERANCE: f64 = 1e-7;

const ESCAPE_ANGLES: [f64; 4] = [0.5, 0.2, 0.08, 0.03];

/// Number of best climbs refined by [`escape`].
const ESCAPE_CANDIDATES: usize = 3;

/// Repeated climbs from randomly tilted gradient directions at a climbed
/// point: fixed points of the linearized ascent include saddles along the boundary.
fn escape(set: &Feasible, r: &[f64], mut best: f64, mut z: Vec<f64>, rng: &mut ChaCha8Rng) -> f64 {
    let mut improvements = 0;
    'outer: while improvements < 50 {
        let u: Vec<f64> = z.iter().zip(r).map(|(a, b)| (a - b) / best.max(f64::MIN_POSITIVE)).collect();
        for eps in ESCAPE_ANGLES {
            let xi: Vec<f64> = u.iter().map(|_| StandardNormal.sample(&mut *rng)).collect();
            let scale = eps / norm2(&xi);
            let d: Vec<f64> = u.iter().zip(&xi).map(|(u, x)| u + scale * x).collect();
            let (value, next) = climb(set, r, &d);
            if value > best * (1.0 + ASCENT_TOLERANCE) {
                best = value;
                z = next;
                improvements += 1;
                continue 'outer;
            }
        }
        break;
    }
    best
}

fn scalar_search(set: &Feasible, r: f64) -> Result<f64> {
    let half1 = (set.k2 / set.w1[0]).sqrt();
    let half2 = (set.rho2 / set.w2[0]).sqrt();
    let lo = (-half1).max(set.c[0] - half2);
    let hi = half1.min(set.c[0] + half2);
    if lo > hi {
        return Err(Error::Infeasible("source ball and data ball do not intersect".into()));
    }
    let steps = (SCALAR_GRID_POINTS - 1) as f64;
    Ok((0..SCALAR_GRID_POINTS)
        .map(|i| {
            let y = if i + 1 == SCALAR_GRID_POINTS { hi } else { lo + (hi - lo) * i as f64 / steps };
            (y - r).abs()
        })
        .fold(0.0, f64::max))
}

/// Lower estimate of `sup ‖R_a f_δ - y‖` over `{y ∈ K : ‖Ay - f_δ‖ ≤ δ}`.
pub fn worst_case_search(
    svd: &SvdTriple,
    source: &SourceSpec,
    f_delta: &[f64],
    delta: f64,
    a: f64,
    restarts: usize,
    seed: u64,
) -> Result<f64> {
    worst_case_search_with_starts(svd, source, f_delta, delta, a, restarts, seed, &[])
}

/// As [`worst_case_search`], with additional starting points `extra_starts`
/// (for instance the element that generated the data).
#[allow(clippy::too_many_arguments)]
pub fn worst_case_search_with_starts(
    svd: &SvdTriple,
    source: &SourceSpec,
    f_delta: &[f64],
    delta: f64,
    a: f64,
    restarts: usize,
    seed: u64,
    extra_starts: &[Vec<f64>],
) -> Result<f64> {
    require_delta(delta)?;
    require_parameter(a)?;
    let active = active_modes(svd)?;
    let g = svd.to_left_basis(f_delta)?;
    let set = Feasible::new(svd, source, &active, &g, delta)?;
    let r: Vec<f64> = active.iter().map(|&i| svd.sigma[i] * g[i] / (svd.sigma[i] * svd.sigma[i] + a)).collect();

    if active.len() == 1 {
        return scalar_search(&set, r[0]);
    }
    let (_, q2_min) = set.most_consistent();
    if q2_min > set.rho2 * (1.0 + 1e-12) {
        return Err(Error::Infeasible("source set and data ball do not intersect".into()));
    }

    let m = active.len();
    let mut directions: Vec<Vec<f64>> = Vec::new();
    // Modes carrying the largest noise amplification and the largest bias.
    let j1 = (0..m).max_by(|&i, &j| {
        let f = |t: usize| svd.sigma[active[t]] / (set.w2[t] + a);
        f(i).total_cmp(&f(j))
    });
    let j2 = (0..m).max_by(|&i, &j| {
        let f = |t: usize| set.w2[t].powf(source.p) / (set.w2[t] + a);
        f(i).total_cmp(&f(j))
    });
    for j in [j1, j2].into_iter().flatten() {
        for sign in [1.0, -1.0] {
            let mut d = vec![0.0; m];
            d[j] = sign;
            directions.push(d);
        }
    }
    for y in extra_starts {
        let z = svd.to_right_basis(y)?;
        let d: Vec<f64> = active.iter().zip(&r).map(|(&i, ri)| z[i] - ri).collect();
        if d.iter().any(|&x| x != 0.0) {
            directions.push(d);
        }
    }
    for t in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[t as u64]));
        directions.push((0..m).map(|_| StandardNormal.sample(&mut rng)).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[u64::MAX]));
    let mut climbed: Vec<(f64, Vec<f64>)> = directions.iter().map(|d| climb(&set, &r, d)).collect();
    climbed.sort_by(|x, y| y.0.total_cmp(&x.0));
    Ok(climbed
        .into_iter()
        .take(ESCAPE_CANDIDATES)
        .map(|(best, z)| escape(&set, &r, best, z, &mut rng))
        .fold(0.0, f64::max))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Certificate {
    pub delta: f64,
    pub a_used: f64,
    pub p: f64,
    pub k: f64,
    pub j1_cont: f64,
    pub j2_cont: f64,
    pub total_cont: f64,
    pub j1_disc: f64,
    pub j2_disc: f64,
    pub rate_bound: f64,
    pub empirical_lower: f64,
    pub pass: bool,
}

impl Certificate {
    pub const CSV_HEADER: &'static str = "delta,a,p,k,J1_cont,J2_cont,J1_disc,J2_disc,rate_bound,empirical_lower,pass";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.delta,
            self.a_used,
            self.p,
            self.k,
            self.j1_cont,
            self.j2_cont,
            self.j1_disc,
            self.j2_disc,
            self.rate_bound,
            self.empirical_lower,
            self.pass
        )
    }

    /// `empirical ≤ J1_disc + J2_disc ≤ J1_cont + J2_cont`, and the continuous
    /// total equals the rate bound when `a` is the a-priori choice.
    pub fn chain_holds(&self, rel: f64) -> bool {
        let disc = self.j1_disc + self.j2_disc;
        self.empirical_lower <= disc + 1e-9
            && self.j1_disc <= self.j1_cont * (1.0 + 1e-12)
            && self.j2_disc <= self.j2_cont * (1.0 + 1e-12)
            && self.total_cont <= self.rate_bound * (1.0 + rel)
    }
}

/// Certificate bounds at one noise level and parameter, without the search.
pub fn bounds(svd: &SvdTriple, source: &SourceSpec, delta: f64, a: f64) -> Result<Certificate> {
    require_delta(delta)?;
    let j1_disc = delta * operator_norm(svd, a)?;
    let j2_disc = bias_sup(svd, source, a)?;
    let (j1c, j2c) = (j1_cont(delta, a), j2_cont(source, a));
    Ok(Certificate {
        delta,
        a_used: a,
        p: source.p,
        k: source.k,
        j1_cont: j1c,
        j2_cont: j2c,
        total_cont: j1c + j2c,
        j1_disc,
        j2_disc,
        rate_bound: rate_bound(delta, source),
        empirical_lower: 0.0,
        pass: true,
    })
}

/// Certifies `R_δ` at `a = choose_a(δ)` for each `δ`, with `trials` draws of a
/// boundary element of `K` and noise of norm `δ`.
pub fn certify(
    problem: &ProblemSpec,
    source: &SourceSpec,
    deltas: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<Certificate>> {
    certify_with_restarts(problem, source, deltas, trials, CERTIFY_RESTARTS, seed)
}

pub fn certify_with_restarts(
    problem: &ProblemSpec,
    source: &SourceSpec,
    deltas: &[f64],
    trials: usize,
    restarts: usize,
    seed: u64,
) -> Result<Vec<Certificate>> {
    if deltas.is_empty() {
        return Err(Error::InvalidArgument("no noise levels given".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    for &d in deltas {
        require_delta(d)?;
    }
    let (a_matrix, svd) = make_problem(problem)?;
    let active = active_modes(&svd)?;
    let n = svd.dim();

    let mut certs = deltas
        .iter()
        .map(|&d| bounds(&svd, source, d, choose_a(d, source)?))
        .collect::<Result<Vec<_>>>()?;

    let jobs: Vec<(usize, usize)> = (0..deltas.len()).flat_map(|d| (0..trials).map(move |t| (d, t))).collect();
    let values = jobs
        .par_iter()
        .map(|&(di, t)| {
            let (delta, a) = (deltas[di], certs[di].a_used);
            let item_seed = derive_seed(seed, &[di as u64, t as u64]);
            let mut rng = ChaCha8Rng::seed_from_u64(item_seed);
            let y = if t % 4 == 3 {
                // Energy on the mode where the bias filter peaks.
                let j = *active
                    .iter()
                    .max_by(|&&i, &&j| {
                        let f = |m: usize| {
                            let s = svd.sigma[m] * svd.sigma[m];
                            s.powf(source.p) / (s + a)
                        };
                        f(i).total_cmp(&f(j))
                    })
                    .expect("non-empty");
                source_mode(&svd, source, j)?
            } else {
                sample_source_set(&svd, source, 1, rng.gen())?.remove(0)
            };
            let e: Vec<f64> = if t < 2 {
                // Noise along the left singular vector of largest amplification.
                let j = (0..n)
                    .max_by(|&i, &j| {
                        let f = |m: usize| svd.sigma[m] / (svd.sigma[m] * svd.sigma[m] + a);
                        f(i).total_cmp(&f(j))
                    })
                    .expect("non-empty");
                let sign = if t == 0 { 1.0 } else { -1.0 };
                svd.u.column(j).iter().map(|x| sign * delta * x).collect()
            } else {
                let raw: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                let scale = delta / norm2(&raw);
                raw.iter().map(|x| x * scale).collect()
            };
            let ay = a_matrix.matvec(&y)?;
            let f: Vec<f64> = ay.iter().zip(&e).map(|(a, b)| a + b).collect();
            // The rounding of Ay + e may push ‖e‖ a hair above δ.
            let slack = delta * (1.0 + 1e-12);
            worst_case_search_with_starts(&svd, source, &f, slack, a, restarts, rng.gen(), &[y])
        })
        .collect::<Result<Vec<f64>>>()?;

    for (&(di, _), v) in jobs.iter().zip(values) {
        certs[di].empirical_lower = certs[di].empirical_lower.max(v);
    }
    for c in &mut certs {
        c.pass = c.empirical_lower <= c.rate_bound * (1.0 + 1e-9);
    }
    Ok(certs)
}

/// `δ/(2√a) + c_p k a^p`, the bound minimized by [`choose_a`].
pub fn continuous_total(delta: f64, source: &SourceSpec, a: f64) -> f64 {
    j1_cont(delta, a) + j2_cont(source, a)
}

/// Residual `‖A y - f‖` through the SVD, for callers holding only the factors.
pub fn residual_norm(svd: &SvdTriple, y: &[f64], f: &[f64]) -> Result<f64> {
    let z = svd.to_right_basis(y)?;
    let g = svd.to_left_basis(f)?;
    Ok(z.iter()
        .zip(&g)
        .zip(&svd.sigma)
        .map(|((z, g), s)| (s * z - g) * (s * z - g))
        .sum::<f64>()
        .sqrt())
}
