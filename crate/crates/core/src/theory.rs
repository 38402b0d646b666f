//! Loss-reduction bounds for full versus subset gradient steps, checked on
//! quadratics `f(w) = 1/2 w'Aw - b'w` whose gradient is exactly
//! `lambda_max(A)`-Lipschitz.
//!
//! For a step `w' = w - eta * g` restricted to a coordinate subset `S`:
//!
//! ```text
//! reduction_all >= eta * |g|^2       * (1 - eta L / 2)
//! reduction_S   >= eta * (|g|^2 - d) * (1 - eta L / 2),   d = |g|^2 - |g_S|^2
//! ```
//!
//! and the difference of the two right-hand sides, `-eta d (1 - eta L / 2)`,
//! is non-negative only once `eta L >= 2`.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{derived_rng, rng_from_seed};

const SYMMETRY_TOL: f64 = 1e-12;
const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 10_000;
// eigenvalue error is at most residual^2 / spectral gap
const RESIDUAL_TOL: f64 = 1e-8;
const BOUND_TOL: f64 = 1e-9;
const CROSSOVER_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProblem {
    pub a: Array2<f64>,
    pub b: Array1<f64>,
    /// Disjoint coordinate sets covering `0..dim`.
    pub layers: Vec<Vec<usize>>,
}

impl QuadraticProblem {
    pub fn new(a: Array2<f64>, b: Array1<f64>, layers: Vec<Vec<usize>>) -> Result<Self> {
        let p = Self { a, b, layers };
        p.validate()?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if self.a.dim() != (n, n) {
            return Err(Error::ShapeMismatch(format!("A is {:?}, b has {n} entries", self.a.dim())));
        }
        for i in 0..n {
            for j in 0..i {
                if (self.a[[i, j]] - self.a[[j, i]]).abs() > SYMMETRY_TOL {
                    return Err(Error::InvalidArgument(format!("A is not symmetric at ({i}, {j})")));
                }
            }
        }
        if !cholesky_feasible(&self.a) {
            return Err(Error::InvalidArgument("A is not positive definite".to_string()));
        }
        let mut seen = vec![false; n];
        for &i in self.layers.iter().flatten() {
            if i >= n || seen[i] {
                return Err(Error::InvalidArgument(format!("coordinate {i} is out of range or repeated")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) || self.layers.iter().any(Vec::is_empty) {
            return Err(Error::InvalidArgument("layers must partition the coordinates".to_string()));
        }
        Ok(())
    }

    pub fn loss(&self, w: &Array1<f64>) -> f64 {
        0.5 * w.dot(&self.a.dot(w)) - self.b.dot(w)
    }

    pub fn gradient(&self, w: &Array1<f64>) -> Array1<f64> {
        self.a.dot(w) - &self.b
    }

    fn subset_coords(&self, subset: &BTreeSet<usize>) -> Result<Vec<bool>> {
        if subset.is_empty() {
            return Err(Error::InvalidArgument("subset of layers is empty".to_string()));
        }
        let mut mask = vec![false; self.dim()];
        for &l in subset {
            let layer = self
                .layers
                .get(l)
                .ok_or_else(|| Error::InvalidArgument(format!("no layer {l}")))?;
            for &i in layer {
                mask[i] = true;
            }
        }
        Ok(mask)
    }
}

fn cholesky_feasible(a: &Array2<f64>) -> bool {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if !(diag > 0.0) {
            return false;
        }
        let ljj = diag.sqrt();
        l[[j, j]] = ljj;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / ljj;
        }
    }
    true
}

/// `A = M'M + 0.1 I` and `b` with entries uniform in `[-1, 1]`; the
/// coordinates are cut into `num_layers` contiguous runs.
pub fn make_quadratic(dim: usize, num_layers: usize, seed: u64) -> Result<QuadraticProblem> {
    if num_layers == 0 || dim < num_layers {
        return Err(Error::InvalidArgument(format!(
            "need dim >= num_layers >= 1, got dim={dim}, num_layers={num_layers}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let m = Array2::from_shape_fn((dim, dim), |_| rng.gen_range(-1.0..=1.0));
    let b = Array1::from_shape_fn(dim, |_| rng.gen_range(-1.0..=1.0));
    let mut a = m.t().dot(&m);
    for i in 0..dim {
        a[[i, i]] += 0.1;
        for j in 0..i {
            let s = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = s;
            a[[j, i]] = s;
        }
    }
    let layers = (0..num_layers)
        .map(|l| (l * dim / num_layers..(l + 1) * dim / num_layers).collect())
        .collect();
    QuadraticProblem::new(a, b, layers)
}

/// `lambda_max(A)` by power iteration. Stops once the Rayleigh quotient
/// moves by at most 1e-10 relative and the eigen-residual is small.
pub fn lipschitz(problem: &QuadraticProblem) -> Result<f64> {
    let n = problem.dim();
    let mut v = Array1::from_shape_fn(n, |i| 1.0 + 1.0 / (i as f64 + 1.0));
    v /= v.dot(&v).sqrt();
    let mut prev = f64::NAN;
    for _ in 0..POWER_MAX_ITERS {
        let av = problem.a.dot(&v);
        let lambda = v.dot(&av);
        let residual = (&av - &(&v * lambda)).dot(&(&av - &(&v * lambda))).sqrt();
        if (lambda - prev).abs() <= POWER_TOL * lambda.abs() && residual <= RESIDUAL_TOL * lambda.abs() {
            return Ok(lambda);
        }
        prev = lambda;
        let norm = av.dot(&av).sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v = av / norm;
    }
    Err(Error::NoConvergence(POWER_MAX_ITERS))
}

/// The tight gap `|grad f(w)|^2 - |grad_S f(w)|^2`, accumulated over the
/// coordinates outside `subset`.
pub fn delta_gap(problem: &QuadraticProblem, w: &Array1<f64>, subset: &BTreeSet<usize>) -> Result<f64> {
    let mask = problem.subset_coords(subset)?;
    let g = problem.gradient(w);
    Ok(g.iter().zip(&mask).filter(|(_, &m)| !m).map(|(x, _)| x * x).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub eta: f64,
    pub lipschitz_l: f64,
    pub grad_norm_sq: f64,
    pub delta: f64,
    pub delta_full: f64,
    pub delta_subset: f64,
    pub bound_full: f64,
    pub bound_subset: f64,
    pub full_holds: bool,
    pub subset_holds: bool,
    pub crossover_term: f64,
}

impl BoundReport {
    pub fn eta_l(&self) -> f64 {
        self.eta * self.lipschitz_l
    }

    /// The crossover term has the sign `eta L` predicts: negative below 2,
    /// zero at 2, positive above (vacuous when `delta == 0`).
    pub fn crossover_consistent(&self) -> bool {
        let el = self.eta_l();
        let t = self.crossover_term;
        if (el - 2.0).abs() <= CROSSOVER_TOL {
            t.abs() <= CROSSOVER_TOL
        } else if self.delta == 0.0 {
            t == 0.0
        } else if el < 2.0 {
            t < 0.0
        } else {
            t > 0.0
        }
    }

    pub fn passed(&self) -> bool {
        self.full_holds && self.subset_holds && self.crossover_consistent()
    }
}

fn holds(actual: f64, bound: f64) -> bool {
    actual >= bound - BOUND_TOL * bound.abs().max(1.0)
}

/// Evaluates one full step and one subset step of size `eta` from `w`.
pub fn verify_bounds(
    problem: &QuadraticProblem,
    w: &Array1<f64>,
    subset: &BTreeSet<usize>,
    eta: f64,
) -> Result<BoundReport> {
    let l = lipschitz(problem)?;
    verify_with_l(problem, w, subset, eta, l)
}

fn verify_with_l(
    problem: &QuadraticProblem,
    w: &Array1<f64>,
    subset: &BTreeSet<usize>,
    eta: f64,
    l: f64,
) -> Result<BoundReport> {
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument(format!("eta must be positive, got {eta}")));
    }
    let mask = problem.subset_coords(subset)?;
    let g = problem.gradient(w);
    let grad_norm_sq = g.dot(&g);
    let delta = delta_gap(problem, w, subset)?;

    let full_step = w - &(&g * eta);
    let mut subset_step = w.clone();
    for ((x, &gi), &m) in subset_step.iter_mut().zip(&g).zip(&mask) {
        if m {
            *x -= eta * gi;
        }
    }
    let base = problem.loss(w);
    let delta_full = base - problem.loss(&full_step);
    let delta_subset = base - problem.loss(&subset_step);
    let factor = 1.0 - eta * l / 2.0;
    let bound_full = eta * grad_norm_sq * factor;
    let bound_subset = eta * (grad_norm_sq - delta) * factor;
    Ok(BoundReport {
        eta,
        lipschitz_l: l,
        grad_norm_sq,
        delta,
        delta_full,
        delta_subset,
        bound_full,
        bound_subset,
        full_holds: holds(delta_full, bound_full),
        subset_holds: holds(delta_subset, bound_subset),
        crossover_term: -eta * delta * factor,
    })
}

/// One report per step size in `eta_grid`.
pub fn crossover_scan(
    problem: &QuadraticProblem,
    w: &Array1<f64>,
    subset: &BTreeSet<usize>,
    eta_grid: &[f64],
) -> Result<Vec<BoundReport>> {
    if eta_grid.is_empty() {
        return Err(Error::InvalidArgument("eta grid is empty".to_string()));
    }
    let l = lipschitz(problem)?;
    eta_grid.iter().map(|&eta| verify_with_l(problem, w, subset, eta, l)).collect()
}

/// Parameters of a seeded sweep over random problems.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub problems: usize,
    pub dim: usize,
    pub num_layers: usize,
    /// Random starting points per problem.
    pub points: usize,
    /// Check every non-empty proper layer subset at each point instead of
    /// one seeded subset.
    pub all_subsets: bool,
    /// Step sizes expressed as products `eta * L`; each problem converts
    /// them with its own `L`.
    pub eta_l_grid: Vec<f64>,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            problems: 50,
            dim: 8,
            num_layers: 4,
            points: 1,
            all_subsets: false,
            eta_l_grid: vec![0.1, 0.5, 1.0, 1.9, 2.0, 4.0],
            seed: 0,
        }
    }
}

/// A random starting point with entries uniform in `[-2, 2]`.
pub fn random_point(dim: usize, seed: u64) -> Array1<f64> {
    let mut rng = rng_from_seed(seed);
    Array1::from_shape_fn(dim, |_| rng.gen_range(-2.0..=2.0))
}

/// Every non-empty proper subset of `0..num_layers`.
pub fn proper_subsets(num_layers: usize) -> Vec<BTreeSet<usize>> {
    (1..(1u64 << num_layers) - 1)
        .map(|mask| (0..num_layers).filter(|i| mask >> i & 1 == 1).collect())
        .collect()
}

/// One report per grid entry for every problem, point and checked subset.
pub fn sweep(cfg: &SweepConfig) -> Result<Vec<BoundReport>> {
    if cfg.num_layers < 2 {
        return Err(Error::InvalidArgument("a proper subset needs at least two layers".to_string()));
    }
    if cfg.eta_l_grid.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::InvalidArgument("eta grid entries must be positive".to_string()));
    }
    let subsets = proper_subsets(cfg.num_layers);
    let mut out = Vec::with_capacity(cfg.problems * cfg.points * subsets.len() * cfg.eta_l_grid.len());
    for p in 0..cfg.problems as u64 {
        let problem = make_quadratic(cfg.dim, cfg.num_layers, crate::rng::derive_seed(cfg.seed, "problem", p, 0))?;
        let l = lipschitz(&problem)?;
        for i in 0..cfg.points as u64 {
            let w = random_point(cfg.dim, crate::rng::derive_seed(cfg.seed, "point", p, i));
            let chosen: Vec<&BTreeSet<usize>> = if cfg.all_subsets {
                subsets.iter().collect()
            } else {
                vec![&subsets[derived_rng(cfg.seed, "subset", p, i).gen_range(0..subsets.len())]]
            };
            for subset in chosen {
                for &el in &cfg.eta_l_grid {
                    out.push(verify_with_l(&problem, &w, subset, el / l, l)?);
                }
            }
        }
    }
    Ok(out)
}
