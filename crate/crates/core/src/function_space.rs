//! Uniform grids on [0, 1], sampled functions, grid Hölder norms, the Volterra
//! integration operator `(Au)(x) = ∫₀ˣ u(s) ds` and bounded-noise models.
//!
//! Every norm here is the sup norm over grid nodes. Grid Hölder norms are
//! maxima over sampled node pairs, so they are lower estimates of the
//! continuum norms they stand for.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Largest grid on which `holder_norm` runs an all-pairs scan (a > 0).
pub const MAX_PAIR_SCAN_NODES: usize = 4097;

/// Relative slack applied to norm bounds in membership tests.
pub const MEMBERSHIP_TOLERANCE: f64 = 1e-9;

/// Uniform grid `x_i = i / (n - 1)`, `i = 0..n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Grid {
    n: usize,
}

impl Grid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidGrid(n));
        }
        Ok(Self { n })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        1.0 / (self.n - 1) as f64
    }

    /// Node `i`; exact at both endpoints.
    pub fn node(&self, i: usize) -> f64 {
        i as f64 / (self.n - 1) as f64
    }

    pub fn nodes(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        (0..self.n).map(|i| self.node(i))
    }

    /// Index of the node closest to `x` (clamped to the grid).
    pub fn nearest(&self, x: f64) -> usize {
        let i = (x * (self.n - 1) as f64).round();
        i.clamp(0.0, (self.n - 1) as f64) as usize
    }
}

/// Values of a function at the nodes of a [`Grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct SampledFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl SampledFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidSamples(format!(
                "{} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSamples(format!("non-finite value at node {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().map(f).collect();
        Self { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![0.0; grid.len()] }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `self + scale * other` on a shared grid.
    pub fn axpy(&self, scale: f64, other: &SampledFunction) -> Result<SampledFunction> {
        same_grid(self, other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + scale * b)
            .collect();
        Ok(SampledFunction { grid: self.grid, values })
    }

    pub fn scaled(&self, scale: f64) -> SampledFunction {
        SampledFunction {
            grid: self.grid,
            values: self.values.iter().map(|v| v * scale).collect(),
        }
    }

    /// Writes `x,value` CSV, one row per node, shortest round-trip decimals.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "value"]).map_err(csv_err)?;
        for (x, v) in self.grid.nodes().zip(&self.values) {
            w.write_record([x.to_string(), v.to_string()]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `x,value` CSV. The `x` column must be the uniform grid on [0, 1].
    pub fn read_csv<R: Read>(input: R) -> Result<SampledFunction> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = r.headers().map_err(csv_err)?.clone();
        if headers.len() != 2 || &headers[0] != "x" || &headers[1] != "value" {
            return Err(Error::Parse("expected header `x,value`".into()));
        }
        let mut xs = Vec::new();
        let mut values = Vec::new();
        for record in r.records() {
            let record = record.map_err(csv_err)?;
            xs.push(parse_f64(&record[0])?);
            values.push(parse_f64(&record[1])?);
        }
        let grid = Grid::new(values.len())?;
        for (i, x) in xs.iter().enumerate() {
            if (x - grid.node(i)).abs() > 1e-12 {
                return Err(Error::Parse(format!("row {i}: x = {x} is off the uniform grid")));
            }
        }
        SampledFunction::new(grid, values)
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

pub(crate) fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("not a number: `{s}`")))
}

fn same_grid(f: &SampledFunction, g: &SampledFunction) -> Result<()> {
    if f.grid != g.grid {
        return Err(Error::GridMismatch { left: f.grid.len(), right: g.grid.len() });
    }
    Ok(())
}

/// Compactum parameters: `K = {v : ‖v‖_a ≤ M}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HolderSpec {
    a: f64,
    bound: f64,
}

impl HolderSpec {
    pub fn new(a: f64, bound: f64) -> Result<Self> {
        if !(0.0..=2.0).contains(&a) {
            return Err(Error::InvalidExponent(a));
        }
        if !(bound > 0.0 && bound.is_finite()) {
            return Err(Error::InvalidClass(format!("norm bound must be positive, got {bound}")));
        }
        Ok(Self { a, bound })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    /// The norm bound `M_a`.
    pub fn bound(&self) -> f64 {
        self.bound
    }
}

/// How `add_noise` perturbs exact data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NoiseModel {
    /// `f + δ`.
    ExactShift,
    /// `f + δ·(-1)^i`.
    Alternating,
    /// `f + δ` at one seeded node.
    Spike,
    /// `f + δ·cos(2πx)`.
    Smooth,
    /// i.i.d. uniform draws rescaled so the largest magnitude is exactly `δ`.
    SeededUniform,
}

impl NoiseModel {
    pub const ALL: [NoiseModel; 5] = [
        NoiseModel::ExactShift,
        NoiseModel::Alternating,
        NoiseModel::Spike,
        NoiseModel::Smooth,
        NoiseModel::SeededUniform,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            NoiseModel::ExactShift => "exact-shift",
            NoiseModel::Alternating => "alternating",
            NoiseModel::Spike => "spike",
            NoiseModel::Smooth => "smooth",
            NoiseModel::SeededUniform => "seeded-uniform",
        }
    }
}

impl fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NoiseModel::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidModel(s.to_string()))
    }
}

/// Noisy data `f_δ` together with its radius: the exact data lies in the
/// sup-norm ball `B(f_δ, δ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisyData {
    pub f_delta: SampledFunction,
    pub delta: f64,
    pub model: NoiseModel,
    pub seed: u64,
}

impl NoisyData {
    /// Wraps externally supplied data (e.g. read from CSV).
    pub fn observed(f_delta: SampledFunction, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidDelta(delta));
        }
        Ok(Self { f_delta, delta, model: NoiseModel::ExactShift, seed: 0 })
    }

    pub fn grid(&self) -> Grid {
        self.f_delta.grid()
    }
}

/// Cumulative trapezoid rule: `f(x_0) = 0`,
/// `f(x_i) = f(x_{i-1}) + dx·(u_{i-1} + u_i)/2`.
pub fn integrate_volterra(u: &SampledFunction) -> SampledFunction {
    let dx = u.grid.dx();
    let mut values = Vec::with_capacity(u.values.len());
    let mut acc = 0.0;
    values.push(acc);
    for w in u.values.windows(2) {
        acc += 0.5 * dx * (w[0] + w[1]);
        values.push(acc);
    }
    SampledFunction { grid: u.grid, values }
}

/// `max_i |f(x_i) - g(x_i)|`.
pub fn sup_distance(f: &SampledFunction, g: &SampledFunction) -> Result<f64> {
    same_grid(f, g)?;
    Ok(f.values
        .iter()
        .zip(&g.values)
        .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
}

/// Grid derivative: centered differences inside, one-sided at both ends.
pub fn grid_derivative(u: &SampledFunction) -> SampledFunction {
    let n = u.values.len();
    let dx = u.grid.dx();
    let v = &u.values;
    let mut d = Vec::with_capacity(n);
    d.push((v[1] - v[0]) / dx);
    for i in 1..n - 1 {
        d.push((v[i + 1] - v[i - 1]) / (2.0 * dx));
    }
    d.push((v[n - 1] - v[n - 2]) / dx);
    SampledFunction { grid: u.grid, values: d }
}

/// Largest difference quotient `|u(x) - u(y)| / |x - y|^e` over all node pairs.
fn holder_seminorm(values: &[f64], dx: f64, exponent: f64) -> Result<f64> {
    let n = values.len();
    if exponent == 0.0 {
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        return Ok(hi - lo);
    }
    if n > MAX_PAIR_SCAN_NODES {
        return Err(Error::GridTooLarge { n, cap: MAX_PAIR_SCAN_NODES });
    }
    let mut best = 0.0f64;
    for k in 1..n {
        let spread = values[k..]
            .iter()
            .zip(values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        best = best.max(spread / (k as f64 * dx).powf(exponent));
    }
    Ok(best)
}

/// Grid estimate of `‖u‖_a`.
///
/// For `0 ≤ a ≤ 1`: `max |u(x)-u(y)|/|x-y|^a + max |u|` over node pairs.
/// For `1 < a ≤ 2`: `max (|u| + |u'|) + max |u'(x)-u'(y)|/|x-y|^(a-1)`, with
/// `u'` from [`grid_derivative`].
///
/// The result is a lower estimate of the continuum norm. All-pairs scans are
/// limited to [`MAX_PAIR_SCAN_NODES`] nodes; `a = 0` has no such limit.
pub fn holder_norm(u: &SampledFunction, a: f64) -> Result<f64> {
    if !(0.0..=2.0).contains(&a) {
        return Err(Error::InvalidExponent(a));
    }
    let dx = u.grid.dx();
    if a <= 1.0 {
        Ok(holder_seminorm(&u.values, dx, a)? + u.sup_norm())
    } else {
        let du = grid_derivative(u);
        let sup = u
            .values
            .iter()
            .zip(&du.values)
            .fold(0.0f64, |m, (v, d)| m.max(v.abs() + d.abs()));
        Ok(sup + holder_seminorm(&du.values, dx, a - 1.0)?)
    }
}

/// Perturbs `f` by noise of sup-norm radius `delta` according to `model`.
///
/// Deterministic in `(f, delta, model, seed)`; `delta = 0` returns `f` unchanged.
pub fn add_noise(f: &SampledFunction, delta: f64, model: NoiseModel, seed: u64) -> Result<NoisyData> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidDelta(delta));
    }
    let data = |f_delta| NoisyData { f_delta, delta, model, seed };
    if delta == 0.0 {
        return Ok(data(f.clone()));
    }
    let grid = f.grid;
    let n = grid.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = match model {
        NoiseModel::ExactShift => vec![delta; n],
        NoiseModel::Alternating => (0..n)
            .map(|i| if i % 2 == 0 { delta } else { -delta })
            .collect(),
        NoiseModel::Spike => {
            let at = rng.gen_range(0..n);
            (0..n).map(|i| if i == at { delta } else { 0.0 }).collect()
        }
        NoiseModel::Smooth => grid
            .nodes()
            .map(|x| delta * (2.0 * std::f64::consts::PI * x).cos())
            .collect(),
        NoiseModel::SeededUniform => {
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let (peak_at, peak) = raw
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |(j, m), (i, v)| if v.abs() > m { (i, v.abs()) } else { (j, m) });
            let mut e: Vec<f64> = raw.iter().map(|v| (delta * (v / peak)).clamp(-delta, delta)).collect();
            e[peak_at] = delta.copysign(raw[peak_at]);
            e
        }
    };
    let values = f.values.iter().zip(noise).map(|(&v, e)| perturb_within(v, e, delta)).collect();
    Ok(data(SampledFunction { grid, values }))
}

// `v + e`, pulled back toward `v` by whole ulps when rounding leaves the ball of radius `delta`.
fn perturb_within(v: f64, e: f64, delta: f64) -> f64 {
    let mut w = v + e;
    while (w - v).abs() > delta {
        w = if w > v { w.next_down() } else { w.next_up() };
    }
    w
}
