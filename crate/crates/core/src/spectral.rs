//! Dense SVD by one-sided Jacobi rotations, and a gallery of discretized
//! ill-posed linear problems.
//!
//! For `A = U diag(σ) Vᵀ`, the operator `T = AᵀA` has eigenvalues
//! `s_i = σ_i²` with eigenvectors `v_i`; its spectral measure puts mass
//! `⟨y, v_i⟩²` at `s_i`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::function_space::{Grid, SampledFunction};
use crate::matrix::{dot, Matrix};

/// Largest supported dimension.
pub const MAX_DIMENSION: usize = 1024;

/// Singular values below this fraction of `σ_max` are set to exactly zero.
pub const NULL_THRESHOLD: f64 = 1e-14;

const MAX_SWEEPS: usize = 80;

#[derive(Clone, Debug)]
pub struct SvdTriple {
    pub u: Matrix,
    /// Descending, non-negative.
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl SvdTriple {
    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    /// Eigenvalues `s_i = σ_i²` of `T = AᵀA`.
    pub fn spectrum(&self) -> Vec<f64> {
        self.sigma.iter().map(|s| s * s).collect()
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma.first().copied().unwrap_or(0.0)
    }

    /// Coordinates `Vᵀ y` in the right singular basis.
    pub fn to_right_basis(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.v.matvec_transposed(y)
    }

    /// `V z`
    pub fn from_right_basis(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.v.matvec(z)
    }

    /// Coordinates `Uᵀ f` in the left singular basis.
    pub fn to_left_basis(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.u.matvec_transposed(f)
    }

    pub fn from_left_basis(&self, g: &[f64]) -> Result<Vec<f64>> {
        self.u.matvec(g)
    }

    /// `U diag(σ) Vᵀ`
    pub fn reconstruct(&self) -> Matrix {
        let n = self.dim();
        let us = Matrix::from_fn(n, n, |i, j| self.u[(i, j)] * self.sigma[j]);
        us.matmul(&self.v.transpose()).expect("square factors")
    }
}

/// Orthonormalizes `cols` in place (modified Gram–Schmidt, two passes),
/// replacing columns flagged in `fill` by completions from the standard basis.
fn orthonormalize(cols: &mut [Vec<f64>], fill: &[bool]) {
    let n = cols.len();
    let mut next_basis = 0;
    for j in 0..n {
        if fill[j] {
            loop {
                let mut e = vec![0.0; n];
                e[next_basis % n] = 1.0;
                next_basis += 1;
                if project_out(&mut e, &cols[..j]) > 1e-3 {
                    cols[j] = e;
                    break;
                }
                assert!(next_basis < 2 * n + 2, "basis completion failed");
            }
        } else {
            let mut c = std::mem::take(&mut cols[j]);
            project_out(&mut c, &cols[..j]);
            cols[j] = c;
        }
    }
}

/// Removes components along `basis` (twice), normalizes, returns the norm before normalizing.
fn project_out(x: &mut [f64], basis: &[Vec<f64>]) -> f64 {
    for _ in 0..2 {
        for b in basis {
            let c = dot(x, b);
            for (xi, bi) in x.iter_mut().zip(b) {
                *xi -= c * bi;
            }
        }
    }
    let norm = dot(x, x).sqrt();
    if norm > 0.0 {
        for xi in x.iter_mut() {
            *xi /= norm;
        }
    }
    norm
}

fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (p, q) = (*a, *b);
        *a = c * p - s * q;
        *b = s * p + c * q;
    }
}

/// Thin wrapper giving two disjoint mutable columns.
fn pair_mut(cols: &mut [Vec<f64>], p: usize, q: usize) -> (&mut Vec<f64>, &mut Vec<f64>) {
    debug_assert!(p < q);
    let (head, tail) = cols.split_at_mut(q);
    (&mut head[p], &mut tail[0])
}

/// Singular value decomposition of a square matrix by one-sided Jacobi.
///
/// Columns of `A V` are rotated pairwise until mutually orthogonal; their
/// norms are the singular values. Deterministic for a fixed input.
pub fn svd(a: &Matrix) -> Result<SvdTriple> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::InvalidMatrix(format!("expected square matrix, got {}x{}", n, a.cols())));
    }
    if n == 0 || n > MAX_DIMENSION {
        return Err(Error::InvalidMatrix(format!("dimension {n} outside 1..={MAX_DIMENSION}")));
    }
    if a.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidMatrix("non-finite entry".into()));
    }

    let mut work: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut right: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let eps = f64::EPSILON;
    for _ in 0..MAX_SWEEPS {
        let mut norms: Vec<f64> = work.iter().map(|c| dot(c, c)).collect();
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta) = (norms[p], norms[q]);
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = dot(&work[p], &work[q]);
                if gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (wp, wq) = pair_mut(&mut work, p, q);
                rotate(wp, wq, c, s);
                let (vp, vq) = pair_mut(&mut right, p, q);
                rotate(vp, vq, c, s);
                norms[p] = alpha - t * gamma;
                norms[q] = beta + t * gamma;
            }
        }
        if !rotated {
            break;
        }
    }

    let raw: Vec<f64> = work.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| raw[j].total_cmp(&raw[i]).then(i.cmp(&j)));
    let sigma_max = raw[order[0]];

    let mut sigma = Vec::with_capacity(n);
    let mut left = Vec::with_capacity(n);
    let mut fill = Vec::with_capacity(n);
    let mut v_cols = Vec::with_capacity(n);
    for &j in &order {
        let s = raw[j];
        let null = s <= NULL_THRESHOLD * sigma_max || s == 0.0;
        sigma.push(if null { 0.0 } else { s });
        fill.push(null);
        left.push(if null { vec![0.0; n] } else { work[j].iter().map(|x| x / s).collect() });
        v_cols.push(std::mem::take(&mut right[j]));
    }
    orthonormalize(&mut left, &fill);

    let u = Matrix::from_fn(n, n, |i, j| left[j][i]);
    let v = Matrix::from_fn(n, n, |i, j| v_cols[j][i]);
    Ok(SvdTriple { u, sigma, v })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProblemKind {
    /// Trapezoid discretization of `u ↦ ∫₀ˣ u`.
    Volterra,
    /// `diag(i^-q)`
    Diagonal,
    /// `Q₁ diag(i^-q) Q₂ᵀ` with seeded orthogonal `Q₁, Q₂`.
    RotatedDiagonal,
}

impl std::str::FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "volterra" => Ok(ProblemKind::Volterra),
            "diagonal" => Ok(ProblemKind::Diagonal),
            "rotated-diagonal" => Ok(ProblemKind::RotatedDiagonal),
            _ => Err(Error::InvalidProblem(format!(
                "unknown problem `{s}` (volterra, diagonal, rotated-diagonal)"
            ))),
        }
    }
}

impl std::fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ProblemKind::Volterra => "volterra",
            ProblemKind::Diagonal => "diagonal",
            ProblemKind::RotatedDiagonal => "rotated-diagonal",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub n: usize,
    /// Decay exponent of the diagonal kinds.
    pub q: f64,
    /// Seed of the rotated kind.
    pub seed: u64,
}

impl ProblemSpec {
    pub fn volterra(n: usize) -> Self {
        Self { kind: ProblemKind::Volterra, n, q: 1.0, seed: 0 }
    }

    pub fn diagonal(n: usize, q: f64) -> Self {
        Self { kind: ProblemKind::Diagonal, n, q, seed: 0 }
    }

    pub fn rotated_diagonal(n: usize, q: f64, seed: u64) -> Self {
        Self { kind: ProblemKind::RotatedDiagonal, n, q, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > MAX_DIMENSION {
            return Err(Error::InvalidProblem(format!("n = {} outside 1..={MAX_DIMENSION}", self.n)));
        }
        if self.kind == ProblemKind::Volterra && self.n < 3 {
            return Err(Error::InvalidProblem("volterra needs n >= 3".into()));
        }
        if self.kind != ProblemKind::Volterra && !(self.q > 0.0 && self.q.is_finite()) {
            return Err(Error::InvalidProblem(format!("decay exponent q = {} must be positive", self.q)));
        }
        Ok(())
    }
}

/// Matrix of the cumulative trapezoid rule on `n` uniform nodes of [0, 1].
pub fn volterra_matrix(n: usize) -> Result<Matrix> {
    let dx = Grid::new(n)?.dx();
    Ok(Matrix::from_fn(n, n, |i, j| {
        if i == 0 || j > i {
            0.0
        } else if j == 0 || j == i {
            0.5 * dx
        } else {
            dx
        }
    }))
}

/// Haar-distributed orthogonal matrix from a seeded Gaussian matrix.
pub fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    orthonormalize(&mut cols, &vec![false; n]);
    Matrix::from_fn(n, n, |i, j| cols[j][i])
}

pub fn make_problem(spec: &ProblemSpec) -> Result<(Matrix, SvdTriple)> {
    spec.validate()?;
    let n = spec.n;
    let decay: Vec<f64> = (1..=n).map(|i| (i as f64).powf(-spec.q)).collect();
    let a = match spec.kind {
        ProblemKind::Volterra => volterra_matrix(n)?,
        ProblemKind::Diagonal => Matrix::from_diagonal(&decay),
        ProblemKind::RotatedDiagonal => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let q1 = random_orthogonal(n, &mut rng);
            let q2 = random_orthogonal(n, &mut rng);
            q1.matmul(&Matrix::from_diagonal(&decay))?.matmul(&q2.transpose())?
        }
    };
    let triple = svd(&a)?;
    Ok((a, triple))
}

/// Applies a matrix discretization to a sampled function on the matching grid.
pub fn apply_to_samples(a: &Matrix, u: &SampledFunction) -> Result<Vec<f64>> {
    a.matvec(u.values())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function_space::integrate_volterra;
    use rand::Rng;

    fn check_invariants(a: &Matrix, t: &SvdTriple) {
        let n = a.rows();
        let eye = Matrix::identity(n);
        let utu = t.u.transpose().matmul(&t.u).unwrap();
        let vtv = t.v.transpose().matmul(&t.v).unwrap();
        assert!(utu.max_abs_diff(&eye) <= 1e-10, "U not orthogonal: {}", utu.max_abs_diff(&eye));
        assert!(vtv.max_abs_diff(&eye) <= 1e-10, "V not orthogonal: {}", vtv.max_abs_diff(&eye));
        let err = t.reconstruct().max_abs_diff(a);
        assert!(err <= 1e-10 * n as f64 * t.sigma_max().max(f64::MIN_POSITIVE), "reconstruction {err}");
        assert!(t.sigma.windows(2).all(|w| w[0] >= w[1]));
        assert!(t.sigma.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn diagonal_input() {
        let a = Matrix::from_diagonal(&[3.0, 1.0, 2.0]);
        let t = svd(&a).unwrap();
        assert_eq!(t.sigma, vec![3.0, 2.0, 1.0]);
        check_invariants(&a, &t);
    }

    #[test]
    fn zero_matrix() {
        let a = Matrix::zeros(4, 4);
        let t = svd(&a).unwrap();
        assert_eq!(t.sigma, vec![0.0; 4]);
        check_invariants(&a, &t);
    }

    #[test]
    fn random_matrix_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let a = Matrix::from_fn(50, 50, |_, _| rng.gen_range(-1.0..1.0));
        let t = svd(&a).unwrap();
        check_invariants(&a, &t);
    }

    #[test]
    fn rank_deficient_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = Matrix::from_fn(12, 3, |_, _| rng.gen_range(-1.0..1.0));
        let c = Matrix::from_fn(3, 12, |_, _| rng.gen_range(-1.0..1.0));
        let a = b.matmul(&c).unwrap();
        let t = svd(&a).unwrap();
        check_invariants(&a, &t);
        assert!(t.sigma[3..].iter().all(|&s| s == 0.0), "{:?}", t.sigma);
    }

    #[test]
    fn rejects_bad_input() {
        let mut a = Matrix::identity(3);
        a[(1, 2)] = f64::NAN;
        assert!(matches!(svd(&a), Err(Error::InvalidMatrix(_))));
        assert!(svd(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn diagonal_problem_singular_values() {
        let (_, t) = make_problem(&ProblemSpec::diagonal(4, 1.0)).unwrap();
        for (s, e) in t.sigma.iter().zip([1.0, 0.5, 1.0 / 3.0, 0.25]) {
            assert!((s - e).abs() < 1e-15);
        }
        let (_, t) = make_problem(&ProblemSpec::diagonal(30, 1.7)).unwrap();
        for (i, s) in t.sigma.iter().enumerate() {
            assert!((s - ((i + 1) as f64).powf(-1.7)).abs() <= 1e-12);
        }
    }

    #[test]
    fn rotation_preserves_singular_values() {
        let (_, plain) = make_problem(&ProblemSpec::diagonal(40, 1.2)).unwrap();
        let (a, rot) = make_problem(&ProblemSpec::rotated_diagonal(40, 1.2, 9)).unwrap();
        check_invariants(&a, &rot);
        for (x, y) in plain.sigma.iter().zip(&rot.sigma) {
            assert!((x - y).abs() <= 1e-10);
        }
        let (b, _) = make_problem(&ProblemSpec::rotated_diagonal(40, 1.2, 9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn volterra_top_singular_value() {
        // Continuum: σ_j = 2 / ((2j - 1) π).
        let (a, t) = make_problem(&ProblemSpec::volterra(512)).unwrap();
        let top = 2.0 / std::f64::consts::PI;
        assert!((t.sigma[0] / top - 1.0).abs() < 0.01, "{}", t.sigma[0]);
        assert!((t.sigma[1] / (top / 3.0) - 1.0).abs() < 0.01, "{}", t.sigma[1]);
        check_invariants(&a, &t);
    }

    #[test]
    fn volterra_matrix_matches_quadrature() {
        let g = Grid::new(33).unwrap();
        let u = SampledFunction::from_fn(g, |x| (3.0 * x).cos());
        let a = volterra_matrix(33).unwrap();
        let via_matrix = apply_to_samples(&a, &u).unwrap();
        let direct = integrate_volterra(&u);
        for (x, y) in via_matrix.iter().zip(direct.values()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn problem_validation() {
        assert!(make_problem(&ProblemSpec::diagonal(0, 1.0)).is_err());
        assert!(make_problem(&ProblemSpec::diagonal(3, 0.0)).is_err());
        assert!(make_problem(&ProblemSpec::volterra(2)).is_err());
        assert!("hilbert".parse::<ProblemKind>().is_err());
    }
}
