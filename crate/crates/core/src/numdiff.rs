//! Stable numerical differentiation of noisy data.
//!
//! Given `f_δ` with `‖f_δ - Au‖_∞ ≤ δ` and the a-priori bound `‖u‖_a ≤ M`
//! (`1 < a ≤ 2`), the difference quotient with step `h(δ) = c_a δ^(1/a)`
//! recovers `u` with worst-case error `δ/h + M h^(a-1)` over every `v` in
//! `S_{δ,a} = {v : ‖Av - f_δ‖ ≤ δ, ‖v‖_a ≤ M}`. For `a ≤ 1` no such
//! regularizer exists; [`witness_pair`] builds two admissible solutions
//! sharing the same data to exhibit the lower bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::function_space::{
    holder_norm, integrate_volterra, sup_distance, Grid, HolderSpec, NoisyData, SampledFunction,
    MEMBERSHIP_TOLERANCE,
};
use crate::seeds::derive_seed;

/// Error budget of the difference regularizer at one noise level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffErrorBudget {
    pub delta: f64,
    pub h: f64,
    /// `δ / h`
    pub noise_term: f64,
    /// `M h^(a-1)`
    pub bias_term: f64,
    pub total: f64,
    /// `K_a δ^(1-1/a)`, the total at the un-snapped step.
    pub rate_bound: f64,
}

fn require_regular(spec: &HolderSpec) -> Result<()> {
    if spec.a() <= 1.0 {
        return Err(Error::UnsupportedExponent(spec.a()));
    }
    Ok(())
}

fn require_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidDelta(delta));
    }
    Ok(())
}

/// `c_a = (2 / ((a-1) M))^(1/a)`.
pub fn step_constant(spec: &HolderSpec) -> Result<f64> {
    require_regular(spec)?;
    let a = spec.a();
    Ok((2.0 / ((a - 1.0) * spec.bound())).powf(1.0 / a))
}

/// `K_a = 1/c_a + M c_a^(a-1)`: the budget total at the un-snapped step is `K_a δ^(1-1/a)`.
pub fn rate_constant(spec: &HolderSpec) -> Result<f64> {
    let c = step_constant(spec)?;
    Ok(1.0 / c + spec.bound() * c.powf(spec.a() - 1.0))
}

/// `h(δ) = c_a δ^(1/a)`, the exact minimizer of `2δ/h + M h^(a-1)`.
///
/// One-sided difference quotients map noise of size `δ` to `2δ/h`, so this
/// step balances the worst branch. At this step the worst-case error on every
/// branch stays below the budget `δ/h + M h^(a-1)` reported by [`error_budget`].
pub fn step_size(delta: f64, spec: &HolderSpec) -> Result<f64> {
    require_delta(delta)?;
    Ok(step_constant(spec)? * delta.powf(1.0 / spec.a()))
}

/// Step snapped to the grid: `m = max(1, round(h/dx))` nodes, `h = m dx`.
pub fn snapped_step(delta: f64, spec: &HolderSpec, grid: Grid) -> Result<(usize, f64)> {
    let h = step_size(delta, spec)?;
    let dx = grid.dx();
    let m = ((h / dx).round() as usize).max(1);
    let snapped = m as f64 * dx;
    if snapped >= 0.5 {
        return Err(Error::StepTooLarge { h: snapped });
    }
    Ok((m, snapped))
}

fn budget_at(delta: f64, spec: &HolderSpec, h: f64) -> Result<DiffErrorBudget> {
    let noise_term = delta / h;
    let bias_term = spec.bound() * h.powf(spec.a() - 1.0);
    Ok(DiffErrorBudget {
        delta,
        h,
        noise_term,
        bias_term,
        total: noise_term + bias_term,
        rate_bound: rate_constant(spec)? * delta.powf(1.0 - 1.0 / spec.a()),
    })
}

/// Budget with the grid-snapped step actually used by [`differentiate`].
///
/// The noise term `δ/h` bounds the central branch; the one-sided branches
/// can amplify alternating-sign noise up to `2δ/h` within `h` of either
/// endpoint, which [`step_size`] pays for with a longer step.
pub fn error_budget(delta: f64, spec: &HolderSpec, grid: Grid) -> Result<DiffErrorBudget> {
    let (_, h) = snapped_step(delta, spec, grid)?;
    budget_at(delta, spec, h)
}

/// Budget at the un-snapped step; `total == rate_bound` up to rounding.
pub fn continuous_error_budget(delta: f64, spec: &HolderSpec) -> Result<DiffErrorBudget> {
    let h = step_size(delta, spec)?;
    budget_at(delta, spec, h)
}

/// Applies the three-branch difference stencil with an offset of `m` nodes:
/// central where `h ≤ x ≤ 1-h`, forward for `x < h`, backward for `x > 1-h`.
pub fn difference_quotient(f: &SampledFunction, m: usize) -> Result<SampledFunction> {
    let grid = f.grid();
    let n = grid.len();
    if m == 0 || 2 * m >= n - 1 {
        return Err(Error::StepTooLarge { h: m as f64 * grid.dx() });
    }
    let h = m as f64 * grid.dx();
    let v = f.values();
    let out = (0..n)
        .map(|i| {
            if i < m {
                (v[i + m] - v[i]) / h
            } else if i + m > n - 1 {
                (v[i] - v[i - m]) / h
            } else {
                (v[i + m] - v[i - m]) / (2.0 * h)
            }
        })
        .collect();
    SampledFunction::new(grid, out)
}

/// `R(δ) f_δ` on every node, with the step from [`snapped_step`].
pub fn differentiate(data: &NoisyData, spec: &HolderSpec) -> Result<SampledFunction> {
    require_delta(data.delta)?;
    let (m, _) = snapped_step(data.delta, spec, data.grid())?;
    difference_quotient(&data.f_delta, m)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Membership {
    pub admissible: bool,
    /// `‖Av - f_δ‖_∞`
    pub residual: f64,
    /// Grid estimate of `‖v‖_a`.
    pub norm: f64,
}

/// Tests `v ∈ S_{δ,a}` with relative slack [`MEMBERSHIP_TOLERANCE`] on both bounds.
pub fn membership(v: &SampledFunction, data: &NoisyData, spec: &HolderSpec) -> Result<Membership> {
    let residual = sup_distance(&integrate_volterra(v), &data.f_delta)?;
    let norm = holder_norm(v, spec.a())?;
    let admissible = residual <= data.delta * (1.0 + MEMBERSHIP_TOLERANCE)
        && norm <= spec.bound() * (1.0 + MEMBERSHIP_TOLERANCE);
    Ok(Membership { admissible, residual, norm })
}

// Profile φ(t) = (1 - t²)³ on [-1, 1].
const BUMP_SLOPE: f64 = 1.717_300_673_375_482_2; // max |φ'| = 96 / (25 √5)
const BUMP_CURVATURE: f64 = 6.0; // max |φ''|
const BUMP_MASS: f64 = 32.0 / 35.0; // ∫ φ

fn bump_profile(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        let s = 1.0 - t * t;
        s * s * s
    }
}

/// Unit-height bump of half-width `width` centred at `center`.
pub fn bump(grid: Grid, center: f64, width: f64) -> SampledFunction {
    SampledFunction::from_fn(grid, |x| bump_profile((x - center) / width))
}

/// Upper bound on the continuum `‖·‖_a` of a unit-height bump of half-width `w`.
fn bump_norm_bound(a: f64, w: f64) -> f64 {
    if a <= 1.0 {
        1.0 + (BUMP_SLOPE / w).powf(a)
    } else {
        let b = a - 1.0;
        1.0 + BUMP_SLOPE / w
            + (BUMP_CURVATURE / (w * w)).powf(b) * (2.0 * BUMP_SLOPE / w).powf(1.0 - b)
    }
}

/// Two admissible solutions `v± = ±ψ` sharing the data `f_δ = A·0 = 0`.
#[derive(Clone, Debug)]
pub struct WitnessPair {
    pub v_plus: SampledFunction,
    pub v_minus: SampledFunction,
    pub f_delta: SampledFunction,
    pub delta: f64,
    /// `sup |v+ - v-| = 2 · amplitude`
    pub separation: f64,
    pub width: f64,
    pub amplitude: f64,
    /// Bump centre, snapped to a grid node.
    pub center: f64,
}

impl WitnessPair {
    pub fn data(&self) -> NoisyData {
        NoisyData {
            f_delta: self.f_delta.clone(),
            delta: self.delta,
            model: crate::function_space::NoiseModel::ExactShift,
            seed: 0,
        }
    }
}

/// Builds the witness pair `v± = ±A φ((x - c)/w)`.
///
/// The width and amplitude maximize `A` subject to `‖ψ‖_a ≤ M/2` and
/// `‖Aψ‖_∞ ≤ δ`, so `A ~ M^(1/(a+1)) δ^(a/(a+1))` for small `δ` and
/// `A = M/4` for every `δ` when `a = 0`. Any regularizer errs by at least
/// `A` on one of the two.
pub fn witness_pair(delta: f64, spec: &HolderSpec, center: f64, grid: Grid) -> Result<WitnessPair> {
    require_delta(delta)?;
    if !(center > 0.0 && center < 1.0) {
        return Err(Error::InvalidArgument(format!("bump centre {center} outside (0, 1)")));
    }
    let a = spec.a();
    let half_bound = 0.5 * spec.bound();
    let center = grid.node(grid.nearest(center));
    let dx = grid.dx();
    let max_width = center.min(1.0 - center);
    let min_width = 4.0 * dx;

    let by_norm = |w: f64| half_bound / bump_norm_bound(a, w);
    let by_data = |w: f64| delta / (w * BUMP_MASS);
    // by_norm increases and by_data decreases with w: the best width is where they cross.
    let width = if by_norm(max_width) <= by_data(max_width) {
        max_width
    } else {
        let (mut lo, mut hi) = (1e-300f64.max(min_width * 1e-6), max_width);
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if by_norm(mid) < by_data(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    };
    if width < min_width {
        return Err(Error::Resolution { width, dx });
    }
    let mut amplitude = by_norm(width).min(by_data(width));

    let shape = bump(grid, center, width);
    let data_residual = integrate_volterra(&shape).sup_norm() * amplitude;
    if data_residual > delta {
        amplitude *= delta / data_residual;
    }
    let v_plus = shape.scaled(amplitude);
    let v_minus = shape.scaled(-amplitude);
    let pair = WitnessPair {
        separation: sup_distance(&v_plus, &v_minus)?,
        v_plus,
        v_minus,
        f_delta: SampledFunction::zeros(grid),
        delta,
        width,
        amplitude,
        center,
    };
    let data = pair.data();
    for v in [&pair.v_plus, &pair.v_minus] {
        let m = membership(v, &data, spec)?;
        if !m.admissible {
            return Err(Error::InvalidClass(format!(
                "witness failed membership (residual {}, norm {})",
                m.residual, m.norm
            )));
        }
    }
    Ok(pair)
}

/// Candidate members of `S_{δ,a}` for [`empirical_sup_error_with`].
#[derive(Clone, Debug, Default)]
pub struct CandidateSampler {
    /// Base points; each admissible anchor is kept and perturbed.
    pub anchors: Vec<SampledFunction>,
    /// Extra candidates tested as-is (e.g. witness-pair members).
    pub injected: Vec<SampledFunction>,
    /// Add a smoothed copy of `R(δ) f_δ` to the anchors.
    pub include_output: bool,
    /// Seeded bump perturbations per admissible anchor.
    pub perturbations: usize,
    pub seed: u64,
}

fn box_smooth(f: &SampledFunction, half: usize) -> SampledFunction {
    let v = f.values();
    let n = v.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for x in v {
        prefix.push(prefix.last().unwrap() + x);
    }
    let out = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64
        })
        .collect();
    SampledFunction::new(f.grid(), out).expect("averages of finite values are finite")
}

/// Largest `t ∈ (0, 1]·t_max` with `anchor + t ψ` admissible, found by halving.
fn perturb_within(
    anchor: &SampledFunction,
    anchor_fit: &Membership,
    direction: &SampledFunction,
    data: &NoisyData,
    spec: &HolderSpec,
) -> Result<Option<SampledFunction>> {
    let norm_slack = spec.bound() - anchor_fit.norm;
    let residual_slack = data.delta - anchor_fit.residual;
    if norm_slack <= 0.0 || residual_slack <= 0.0 {
        return Ok(None);
    }
    let dir_norm = holder_norm(direction, spec.a())?;
    let dir_residual = integrate_volterra(direction).sup_norm();
    let mut t = (norm_slack / dir_norm).min(residual_slack / dir_residual);
    for _ in 0..8 {
        let candidate = anchor.axpy(t, direction)?;
        if membership(&candidate, data, spec)?.admissible {
            return Ok(Some(candidate));
        }
        t *= 0.5;
    }
    Ok(None)
}

/// Sampled lower estimate of `sup_{v ∈ S_{δ,a}} ‖R(δ) f_δ - v‖_∞`.
///
/// Every admissible candidate gives a valid lower bound; the true supremum is
/// an infinite-dimensional program. Errors when no candidate is admissible.
pub fn empirical_sup_error_with(
    data: &NoisyData,
    spec: &HolderSpec,
    sampler: &CandidateSampler,
) -> Result<f64> {
    let output = differentiate(data, spec)?;
    let grid = data.grid();
    let mut anchors = sampler.anchors.clone();
    if sampler.include_output {
        let (m, _) = snapped_step(data.delta, spec, grid)?;
        anchors.push(box_smooth(&box_smooth(&output, m), m));
    }

    let mut accepted: Vec<f64> = Vec::new();
    for v in &sampler.injected {
        if membership(v, data, spec)?.admissible {
            accepted.push(sup_distance(&output, v)?);
        }
    }
    for (k, anchor) in anchors.iter().enumerate() {
        let fit = membership(anchor, data, spec)?;
        if !fit.admissible {
            continue;
        }
        accepted.push(sup_distance(&output, anchor)?);
        let found: Vec<Option<f64>> = (0..sampler.perturbations)
            .into_par_iter()
            .map(|j| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(sampler.seed, &[k as u64, j as u64]));
                let center = rng.gen_range(0.05..0.95);
                let width = rng.gen_range(0.02..0.3f64).min(center).min(1.0 - center);
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let direction = bump(grid, center, width).scaled(sign);
                perturb_within(anchor, &fit, &direction, data, spec)?
                    .map(|v| sup_distance(&output, &v))
                    .transpose()
            })
            .collect::<Result<_>>()?;
        accepted.extend(found.into_iter().flatten());
    }
    accepted
        .into_iter()
        .reduce(f64::max)
        .ok_or(Error::EmptyAdmissibleSet)
}

/// [`empirical_sup_error_with`] using the smoothed regularizer output as the
/// only anchor and `n_samples` seeded perturbations of it.
pub fn empirical_sup_error(data: &NoisyData, spec: &HolderSpec, n_samples: usize, seed: u64) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    empirical_sup_error_with(
        data,
        spec,
        &CandidateSampler {
            include_output: true,
            perturbations: n_samples,
            seed,
            ..Default::default()
        },
    )
}

/// Smooth test truths for differentiation experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Truth {
    /// `sin(2πx)`
    Sine,
    /// `x²`
    Square,
    /// Uniform cubic B-spline with eight seeded coefficients in [-1, 1].
    Spline(u64),
}

impl Truth {
    pub fn sample(&self, grid: Grid) -> SampledFunction {
        match *self {
            Truth::Sine => SampledFunction::from_fn(grid, |x| (2.0 * std::f64::consts::PI * x).sin()),
            Truth::Square => SampledFunction::from_fn(grid, |x| x * x),
            Truth::Spline(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let coef: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..=1.0)).collect();
                SampledFunction::from_fn(grid, |x| cubic_bspline(&coef, x))
            }
        }
    }

    /// The truth rescaled so its grid norm is `fraction · M`.
    pub fn admissible(&self, grid: Grid, spec: &HolderSpec, fraction: f64) -> Result<SampledFunction> {
        let u = self.sample(grid);
        let norm = holder_norm(&u, spec.a())?;
        Ok(u.scaled(fraction * spec.bound() / norm))
    }
}

impl std::str::FromStr for Truth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sin" | "sine" => Ok(Truth::Sine),
            "square" => Ok(Truth::Square),
            _ => match s.strip_prefix("spline") {
                Some(rest) => {
                    let seed = rest.trim_start_matches(':');
                    let seed = if seed.is_empty() { 0 } else { seed.parse().map_err(|_| Error::Parse(s.into()))? };
                    Ok(Truth::Spline(seed))
                }
                None => Err(Error::Parse(format!("unknown truth `{s}` (sin, square, spline[:seed])"))),
            },
        }
    }
}

fn cubic_bspline(coef: &[f64], x: f64) -> f64 {
    let segments = coef.len() - 3;
    let t = x.clamp(0.0, 1.0) * segments as f64;
    let j = (t.floor() as usize).min(segments - 1);
    let u = t - j as f64;
    let b0 = (1.0 - u).powi(3);
    let b1 = 3.0 * u.powi(3) - 6.0 * u * u + 4.0;
    let b2 = -3.0 * u.powi(3) + 3.0 * u * u + 3.0 * u + 1.0;
    let b3 = u.powi(3);
    (b0 * coef[j] + b1 * coef[j + 1] + b2 * coef[j + 2] + b3 * coef[j + 3]) / 6.0
}

/// One row of the differentiation certificate CSV.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffCertificate {
    pub a: f64,
    pub bound: f64,
    pub budget: DiffErrorBudget,
    pub empirical_lower: f64,
    pub pass: bool,
}

impl DiffCertificate {
    pub const CSV_HEADER: &'static str = "delta,a,M,h,noise_term,bias_term,total,empirical_lower,pass";

    pub fn csv_row(&self) -> String {
        let b = &self.budget;
        format!(
            "{},{},{},{},{},{},{},{},{}",
            b.delta, self.a, self.bound, b.h, b.noise_term, b.bias_term, b.total, self.empirical_lower, self.pass
        )
    }
}

/// Certifies the difference regularizer on data generated from `truth`:
/// the empirical worst case over `S_{δ,a}` (truth, its perturbations and the
/// smoothed output as anchors) must not exceed the budget total.
pub fn certify_difference(
    truth: &SampledFunction,
    delta: f64,
    model: crate::function_space::NoiseModel,
    spec: &HolderSpec,
    n_samples: usize,
    seed: u64,
) -> Result<DiffCertificate> {
    let data = crate::function_space::add_noise(&integrate_volterra(truth), delta, model, seed)?;
    let budget = error_budget(delta, spec, truth.grid())?;
    let empirical_lower = empirical_sup_error_with(
        &data,
        spec,
        &CandidateSampler {
            anchors: vec![truth.clone()],
            include_output: true,
            perturbations: n_samples,
            seed,
            ..Default::default()
        },
    )?;
    Ok(DiffCertificate {
        a: spec.a(),
        bound: spec.bound(),
        budget,
        empirical_lower,
        pass: empirical_lower <= budget.total * (1.0 + 1e-6),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function_space::{add_noise, NoiseModel};

    fn spec(a: f64, m: f64) -> HolderSpec {
        HolderSpec::new(a, m).unwrap()
    }

    // Brute-force minimizer of 2δ/h + M h^(a-1) over a fine log grid.
    fn scan_minimizer(delta: f64, a: f64, m: f64) -> f64 {
        let worst = |h: f64| 2.0 * delta / h + m * h.powf(a - 1.0);
        (0..200_001)
            .map(|i| 10f64.powf(-6.0 + 6.0 * i as f64 / 200_000.0))
            .min_by(|x, y| worst(*x).partial_cmp(&worst(*y)).unwrap())
            .unwrap()
    }

    #[test]
    fn step_rule_matches_worst_branch_minimizer() {
        for (delta, a, m, expect) in [
            (1e-4, 2.0, 1.0, 0.014142135623730952),
            (1e-3, 1.5, 2.0, 0.015874010519681996),
            (1e-4, 2.0, 4.0, 0.007071067811865476),
        ] {
            let h = step_size(delta, &spec(a, m)).unwrap();
            assert!((h / expect - 1.0).abs() < 1e-14, "{h}");
            let scanned = scan_minimizer(delta, a, m);
            assert!((scanned / h - 1.0).abs() < 1e-4, "{scanned} vs {h}");
        }
        assert!((step_constant(&spec(2.0, 1.0)).unwrap() - std::f64::consts::SQRT_2).abs() < 1e-15);
        assert!((step_constant(&spec(2.0, 4.0)).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn step_rule_rejects_irregular_classes() {
        assert!(matches!(step_size(1e-3, &spec(1.0, 1.0)), Err(Error::UnsupportedExponent(_))));
        assert!(matches!(step_size(1e-3, &spec(0.5, 1.0)), Err(Error::UnsupportedExponent(_))));
        assert!(step_size(0.0, &spec(2.0, 1.0)).is_err());
    }

    #[test]
    fn snapped_step_is_clamped_and_bounded() {
        let g = Grid::new(101).unwrap();
        let (m, h) = snapped_step(1e-12, &spec(2.0, 1.0), g).unwrap();
        assert_eq!((m, h), (1, g.dx()));
        assert!(matches!(snapped_step(0.5, &spec(2.0, 1.0), g), Err(Error::StepTooLarge { .. })));
    }

    #[test]
    fn budget_examples() {
        // Values by direct substitution of h = c_a δ^(1/a).
        let b = continuous_error_budget(1e-4, &spec(2.0, 1.0)).unwrap();
        assert!((b.noise_term - 0.0070710678118654745).abs() < 1e-15);
        assert!((b.bias_term - 0.014142135623730952).abs() < 1e-15);
        assert!((b.total - 0.021213203435596427).abs() < 1e-15);
        assert!((b.total - b.rate_bound).abs() < 1e-12 * b.total);

        let b = continuous_error_budget(1e-3, &spec(1.5, 2.0)).unwrap();
        assert!((b.noise_term - 0.06299605249474366).abs() < 1e-14);
        assert!((b.bias_term - 0.25198420997897464).abs() < 1e-14);
        assert!((b.total - 0.3149802624737183).abs() < 1e-14);
        assert!(b.total >= b.rate_bound * (1.0 - 1e-9));

        let g = Grid::new(4097).unwrap();
        let totals: Vec<f64> = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6]
            .iter()
            .map(|&d| error_budget(d, &spec(2.0, 1.0), g).unwrap().total)
            .collect();
        assert!(totals.windows(2).all(|w| w[1] < w[0]), "{totals:?}");
    }

    #[test]
    fn snapped_budget_dominates_minimum() {
        let g = Grid::new(4097).unwrap();
        for d in [1e-2, 3e-3, 1e-4, 2e-6] {
            let b = error_budget(d, &spec(1.7, 1.3), g).unwrap();
            assert!(b.total >= b.rate_bound * (1.0 - 1e-12));
            assert_eq!(b.total, b.noise_term + b.bias_term);
        }
    }

    #[test]
    fn stencil_is_exact_on_affine_data() {
        let g = Grid::new(201).unwrap();
        let f = SampledFunction::from_fn(g, |x| x);
        for m in [1, 7, 40] {
            let d = difference_quotient(&f, m).unwrap();
            assert!(d.values().iter().all(|v| (v - 1.0).abs() < 1e-11));
        }
    }

    #[test]
    fn stencil_on_quadratic_data() {
        let g = Grid::new(201).unwrap();
        let f = SampledFunction::from_fn(g, |x| 0.5 * x * x);
        let m = 10;
        let h = m as f64 * g.dx();
        let d = difference_quotient(&f, m).unwrap();
        for (i, (x, v)) in g.nodes().zip(d.values()).enumerate() {
            let expect = if i < m {
                x + h / 2.0
            } else if i > 200 - m {
                x - h / 2.0
            } else {
                x
            };
            assert!((v - expect).abs() < 1e-12, "node {i}: {v} vs {expect}");
        }
    }

    #[test]
    fn branch_boundaries_use_central_stencil() {
        // Data that is linear with slope 1 except a kink only visible to one-sided stencils.
        let g = Grid::new(21).unwrap();
        let m = 3;
        let f = SampledFunction::from_fn(g, |x| x * x);
        let d = difference_quotient(&f, m).unwrap();
        let h = m as f64 * g.dx();
        // x = h and x = 1 - h are exact under the central stencil for x².
        assert!((d.values()[m] - 2.0 * h).abs() < 1e-12);
        assert!((d.values()[20 - m] - 2.0 * (1.0 - h)).abs() < 1e-12);
        assert!((d.values()[m - 1] - (2.0 * g.node(m - 1) + h)).abs() < 1e-12);
        assert!((d.values()[20 - m + 1] - (2.0 * g.node(20 - m + 1) - h)).abs() < 1e-12);
    }

    #[test]
    fn alternating_noise_on_unit_step() {
        // Central differences cancel (-1)^i noise; one-sided ones double it.
        let g = Grid::new(101).unwrap();
        let delta = 1e-4;
        let data = add_noise(&SampledFunction::from_fn(g, |x| x), delta, NoiseModel::Alternating, 0).unwrap();
        let d = difference_quotient(&data.f_delta, 1).unwrap();
        let v = d.values();
        for x in &v[1..100] {
            assert!((x - 1.0).abs() < 1e-9);
        }
        assert!((v[0] - (1.0 - 2.0 * delta / g.dx())).abs() < 1e-9);
        assert!((v[100] - (1.0 + 2.0 * delta / g.dx())).abs() < 1e-9);
    }

    #[test]
    fn worst_central_noise_attains_noise_term() {
        let g = Grid::new(101).unwrap();
        let delta = 1e-4;
        let e = SampledFunction::from_fn(g, |x| if x > 0.5 { delta } else { -delta });
        let f = SampledFunction::from_fn(g, |x| x).axpy(1.0, &e).unwrap();
        let d = difference_quotient(&f, 1).unwrap();
        let worst = d.values().iter().fold(0.0f64, |m, v| m.max((v - 1.0).abs()));
        assert!((worst - delta / g.dx()).abs() < 1e-9);
    }

    #[test]
    fn differentiate_rejects_a_at_most_one() {
        let g = Grid::new(101).unwrap();
        let data = add_noise(&SampledFunction::zeros(g), 1e-3, NoiseModel::Smooth, 0).unwrap();
        assert!(matches!(differentiate(&data, &spec(1.0, 1.0)), Err(Error::UnsupportedExponent(_))));
    }

    #[test]
    fn membership_examples() {
        let g = Grid::new(1025).unwrap();
        let s = spec(2.0, 1.0);
        let u = Truth::Sine.admissible(g, &s, 0.9).unwrap();
        let delta = 1e-4;
        let data = add_noise(&integrate_volterra(&u), delta, NoiseModel::SeededUniform, 1).unwrap();
        assert!(membership(&u, &data, &s).unwrap().admissible);

        let shifted = u.axpy(3.0 * delta, &SampledFunction::from_fn(g, |_| 1.0)).unwrap();
        let m = membership(&shifted, &data, &s).unwrap();
        assert!(!m.admissible);
        assert!(m.residual > delta);
    }

    #[test]
    fn empirical_error_with_truth_only() {
        let g = Grid::new(1025).unwrap();
        let s = spec(2.0, 1.0);
        let u = Truth::Square.admissible(g, &s, 0.9).unwrap();
        let data = add_noise(&integrate_volterra(&u), 1e-4, NoiseModel::Spike, 5).unwrap();
        let sampler = CandidateSampler { anchors: vec![u.clone()], ..Default::default() };
        let got = empirical_sup_error_with(&data, &s, &sampler).unwrap();
        let direct = sup_distance(&differentiate(&data, &s).unwrap(), &u).unwrap();
        assert_eq!(got, direct);
    }

    #[test]
    fn empirical_error_bounded_by_budget() {
        let g = Grid::new(1025).unwrap();
        let s = spec(2.0, 1.0);
        let u = Truth::Spline(3).admissible(g, &s, 0.8).unwrap();
        let delta = 1e-4;
        let data = add_noise(&integrate_volterra(&u), delta, NoiseModel::Smooth, 2).unwrap();
        let sampler = CandidateSampler {
            anchors: vec![u],
            include_output: true,
            perturbations: 16,
            seed: 11,
            ..Default::default()
        };
        let got = empirical_sup_error_with(&data, &s, &sampler).unwrap();
        let budget = error_budget(delta, &s, g).unwrap();
        assert!(got <= budget.total, "{got} > {}", budget.total);
    }

    #[test]
    fn empty_sampler_is_an_error() {
        let g = Grid::new(257).unwrap();
        let s = spec(2.0, 1.0);
        let data = add_noise(&SampledFunction::from_fn(g, |x| 5.0 * x), 1e-4, NoiseModel::Smooth, 0).unwrap();
        let far = SampledFunction::from_fn(g, |_| 100.0);
        let sampler = CandidateSampler { anchors: vec![far], perturbations: 2, ..Default::default() };
        assert!(matches!(empirical_sup_error_with(&data, &s, &sampler), Err(Error::EmptyAdmissibleSet)));
    }

    #[test]
    fn witness_members_and_separation() {
        let g = Grid::new(2049).unwrap();
        for (a, m, delta) in [(2.0, 1.0, 1e-3), (1.5, 2.0, 1e-4), (1.0, 1.0, 1e-3), (0.5, 1.0, 1e-2)] {
            let s = spec(a, m);
            let w = witness_pair(delta, &s, 0.5, g).unwrap();
            let data = w.data();
            for v in [&w.v_plus, &w.v_minus] {
                let fit = membership(v, &data, &s).unwrap();
                assert!(fit.admissible);
                assert!(fit.residual <= delta * (1.0 + 1e-12));
                assert!(fit.norm <= 0.5 * m * (1.0 + 1e-12));
            }
            assert!((w.separation - 2.0 * w.amplitude).abs() <= 1e-12);
        }
    }

    #[test]
    fn witness_lower_bounds_empirical_error() {
        let g = Grid::new(2049).unwrap();
        let s = spec(2.0, 1.0);
        let w = witness_pair(1e-4, &s, 0.4, g).unwrap();
        let sampler = CandidateSampler {
            injected: vec![w.v_plus.clone(), w.v_minus.clone()],
            ..Default::default()
        };
        let got = empirical_sup_error_with(&w.data(), &s, &sampler).unwrap();
        assert!(got >= w.separation / 2.0);
    }

    #[test]
    fn witness_scaling_law() {
        let g = Grid::new(4097).unwrap();
        let s = spec(2.0, 1.0);
        let big = witness_pair(1e-4, &s, 0.5, g).unwrap();
        let small = witness_pair(1e-4 / 8.0, &s, 0.5, g).unwrap();
        let ratio = big.separation / small.separation;
        assert!((ratio / 4.0 - 1.0).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn witness_without_decay_for_bounded_class() {
        let g = Grid::new((1 << 19) + 1).unwrap();
        let s = spec(0.0, 3.0);
        let big = witness_pair(1e-2, &s, 0.5, g).unwrap();
        let small = witness_pair(1e-5, &s, 0.5, g).unwrap();
        let ratio = big.separation / small.separation;
        assert!((ratio - 1.0).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn witness_resolution_error() {
        let g = Grid::new(65).unwrap();
        let s = spec(0.0, 3.0);
        assert!(matches!(witness_pair(1e-5, &s, 0.5, g), Err(Error::Resolution { .. })));
        assert!(witness_pair(1e-3, &s, 1.0, g).is_err());
    }

    #[test]
    fn truth_parsing() {
        assert_eq!("sin".parse::<Truth>().unwrap(), Truth::Sine);
        assert_eq!("spline:7".parse::<Truth>().unwrap(), Truth::Spline(7));
        assert_eq!("spline".parse::<Truth>().unwrap(), Truth::Spline(0));
        assert!("cosh".parse::<Truth>().is_err());
    }
}
