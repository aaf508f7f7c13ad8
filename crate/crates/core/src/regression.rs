//! Identity-link Poisson regression at source level.
//!
//! Row `i` carries `Z_i = (|S_i|, x_{i,1}, …, x_{i,p})` and a count `y_i`;
//! with growth rate `k` the model is `y_i ~ Poisson(γ' Z̃_i)`, `Z̃_i = k Z_i`.
//! The log-likelihood is concave on `{γ ≥ 0 : γ' Z̃_i > 0 ∀i}`; [`fit`]
//! maximises it by projected Fisher scoring with step halving, so optima on
//! a face of the orthant (e.g. a true `α = 0`) are reached exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::IntersectionTable;
use crate::linalg::{cholesky, cholesky_solve, nnls, sym_sqrt, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum RegressionError {
    #[error("design row {0}: area must be positive and covariates nonnegative and finite")]
    InvalidRow(usize),
    #[error("design rows have inconsistent covariate counts")]
    RaggedDesign,
    #[error("scale k must be positive")]
    InvalidScale,
    #[error("fitted mean of row {0} is not positive")]
    NonpositiveMean(usize),
    #[error("parameter vector has length {got}, design needs {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("design is not identifiable: {0}")]
    NotIdentifiable(String),
    #[error("no convergence after {} iterations (score norm {})", .0.iterations, .0.score_norm)]
    MaxIterations(Box<FitResult<f64>>),
    #[error("Fisher information is singular")]
    SingularInformation,
    #[error("fit has not converged")]
    UnconvergedFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRow<T> {
    pub area: T,
    pub x: Vec<T>,
    pub y: u64,
}

/// Source-level regression data.
#[derive(Debug, Clone, PartialEq)]
pub struct Design<T> {
    rows: Vec<DesignRow<T>>,
    k: T,
}

impl<T: Scalar> Design<T> {
    pub fn new(rows: Vec<DesignRow<T>>, k: T) -> Result<Self, RegressionError> {
        if !(k > T::zero()) || !k.is_finite() {
            return Err(RegressionError::InvalidScale);
        }
        let p = rows.first().map_or(0, |r| r.x.len());
        for (i, r) in rows.iter().enumerate() {
            if r.x.len() != p {
                return Err(RegressionError::RaggedDesign);
            }
            let ok = |v: T| v >= T::zero() && v.is_finite();
            if !(r.area > T::zero()) || !r.area.is_finite() || !r.x.iter().all(|&v| ok(v)) {
                return Err(RegressionError::InvalidRow(i));
            }
        }
        Ok(Self { rows, k })
    }

    /// One row per source: area, totals of the chosen auxiliaries, observed count.
    pub fn from_sources(
        table: &IntersectionTable<T>,
        source_counts: &[u64],
        aux: &[usize],
        k: T,
    ) -> Result<Self, RegressionError> {
        let rows = (0..table.n_sources())
            .map(|s| DesignRow {
                area: table.source_areas[s],
                x: aux.iter().map(|&j| table.source_aux[s][j]).collect(),
                y: source_counts[s],
            })
            .collect();
        Self::new(rows, k)
    }

    pub fn rows(&self) -> &[DesignRow<T>] {
        &self.rows
    }

    pub fn k(&self) -> T {
        self.k
    }

    /// Number of parameters, `p + 1`.
    pub fn dim(&self) -> usize {
        self.rows.first().map_or(1, |r| r.x.len() + 1)
    }

    /// `Z̃_i = k (|S_i|, x_i)`.
    pub fn z(&self, i: usize) -> Vec<T> {
        let r = &self.rows[i];
        std::iter::once(r.area).chain(r.x.iter().copied()).map(|v| v * self.k).collect()
    }

    fn means(&self, gamma: &[T]) -> Result<Vec<T>, RegressionError> {
        if gamma.len() != self.dim() {
            return Err(RegressionError::DimensionMismatch { expected: self.dim(), got: gamma.len() });
        }
        (0..self.rows.len())
            .map(|i| {
                let mu: T = self.z(i).iter().zip(gamma).map(|(&a, &b)| a * b).sum();
                if mu > T::zero() && mu.is_finite() {
                    Ok(mu)
                } else {
                    Err(RegressionError::NonpositiveMean(i))
                }
            })
            .collect()
    }

    /// Same rows in a different order.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self { rows: order.iter().map(|&i| self.rows[i].clone()).collect(), k: self.k }
    }
}

/// `ln(n!)`: exact summation up to 256, Stirling series beyond.
pub fn ln_factorial(n: u64) -> f64 {
    if n < 2 {
        return 0.0;
    }
    if n <= 256 {
        return (2..=n).map(|v| (v as f64).ln()).sum();
    }
    let x = n as f64 + 1.0;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln()
        + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)))
}

/// `l(γ) = Σ y_i ln(γ'Z̃_i) − γ'Z̃_i − ln(y_i!)`.
pub fn log_likelihood<T: Scalar>(design: &Design<T>, gamma: &[T]) -> Result<T, RegressionError> {
    let mu = design.means(gamma)?;
    Ok(design
        .rows
        .iter()
        .zip(mu)
        .map(|(r, m)| T::of_count(r.y) * m.ln() - m - T::of(ln_factorial(r.y)))
        .sum())
}

/// `s(γ) = Σ Z̃_i (y_i / γ'Z̃_i − 1)`.
pub fn score<T: Scalar>(design: &Design<T>, gamma: &[T]) -> Result<Vec<T>, RegressionError> {
    let mu = design.means(gamma)?;
    let mut s = vec![T::zero(); design.dim()];
    for (i, (r, m)) in design.rows.iter().zip(mu).enumerate() {
        let w = T::of_count(r.y) / m - T::one();
        for (sj, zj) in s.iter_mut().zip(design.z(i)) {
            *sj = *sj + zj * w;
        }
    }
    Ok(s)
}

/// `F(γ) = Σ Z̃_i Z̃_i' / γ'Z̃_i`.
pub fn fisher_info<T: Scalar>(design: &Design<T>, gamma: &[T]) -> Result<Matrix<T>, RegressionError> {
    let mu = design.means(gamma)?;
    let mut f = Matrix::zeros(design.dim());
    for (i, m) in mu.into_iter().enumerate() {
        f.add_outer(&design.z(i), T::one() / m);
    }
    Ok(f)
}

/// Observed information `H(γ) = Σ Z̃_i Z̃_i' y_i / (γ'Z̃_i)²`.
pub fn observed_info<T: Scalar>(design: &Design<T>, gamma: &[T]) -> Result<Matrix<T>, RegressionError> {
    let mu = design.means(gamma)?;
    let mut h = Matrix::zeros(design.dim());
    for (i, (r, m)) in design.rows.iter().zip(mu).enumerate() {
        h.add_outer(&design.z(i), T::of_count(r.y) / (m * m));
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions<T> {
    pub init: Option<Vec<T>>,
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Scalar> Default for FitOptions<T> {
    fn default() -> Self {
        Self { init: None, tol: T::of(1e-10).max(T::epsilon() * T::of(100.0)), max_iter: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult<T> {
    /// `(α̂, β̂_1, …)`
    pub gamma_hat: Vec<T>,
    pub loglik: T,
    /// Sup-norm of the projected score (free coordinates only at a boundary optimum).
    pub score_norm: T,
    /// Rows of `F(γ̂)`.
    pub fisher_info: Vec<Vec<T>>,
    pub iterations: usize,
    pub converged: bool,
    /// Some coordinate of `γ̂` sits on the zero face.
    pub boundary: bool,
    /// Log-likelihood after each accepted step, starting from the initial point.
    #[serde(default, skip_serializing)]
    pub history: Vec<T>,
}

impl<T: Scalar> FitResult<T> {
    pub fn to_f64(&self) -> FitResult<f64> {
        FitResult {
            gamma_hat: self.gamma_hat.iter().map(|v| v.as_f64()).collect(),
            loglik: self.loglik.as_f64(),
            score_norm: self.score_norm.as_f64(),
            fisher_info: self.fisher_info.iter().map(|r| r.iter().map(|v| v.as_f64()).collect()).collect(),
            iterations: self.iterations,
            converged: self.converged,
            boundary: self.boundary,
            history: self.history.iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn information(&self) -> Matrix<T> {
        Matrix::from_rows(&self.fisher_info)
    }

    /// `γ̂' Z` for an unscaled covariate vector `(area, x…)`.
    pub fn linear_predictor(&self, area: T, x: &[T]) -> T {
        self.gamma_hat[0] * area + self.gamma_hat[1..].iter().zip(x).map(|(&b, &v)| b * v).sum::<T>()
    }
}

fn check_identifiable<T: Scalar>(design: &Design<T>) -> Result<(), RegressionError> {
    let m = design.dim();
    let n = design.rows.len();
    if n < m {
        return Err(RegressionError::NotIdentifiable(format!("{n} rows for {m} parameters")));
    }
    let mut gram = Matrix::zeros(m);
    for i in 0..n {
        gram.add_outer(&design.z(i), T::one());
    }
    // Column scaling so the rank test is unit-free.
    let d: Vec<T> = (0..m).map(|j| gram[(j, j)].sqrt()).collect();
    if let Some(j) = d.iter().position(|&v| !(v > T::zero())) {
        return Err(RegressionError::NotIdentifiable(format!("covariate {j} is identically zero")));
    }
    let mut corr = Matrix::zeros(m);
    for i in 0..m {
        for j in 0..m {
            corr[(i, j)] = gram[(i, j)] / (d[i] * d[j]);
        }
    }
    if cholesky(&corr, T::of(1e-10).max(T::epsilon() * T::of(64.0))).is_none() {
        return Err(RegressionError::NotIdentifiable("design matrix is rank deficient".into()));
    }
    Ok(())
}

fn starting_point<T: Scalar>(design: &Design<T>) -> Vec<T> {
    let n = design.rows.len();
    let rows: Vec<Vec<T>> = (0..n).map(|i| design.z(i)).collect();
    let y: Vec<T> = design.rows.iter().map(|r| T::of_count(r.y)).collect();
    let mut gamma = nnls(&rows, &y);
    let mean_y = y.iter().copied().sum::<T>() / T::of_count(n as u64);
    let floor = T::of(1e-8) * mean_y.max(T::one());
    let m = design.dim();
    // Strictly positive direction: every mean becomes positive along it.
    let uniform: Vec<T> = (0..m)
        .map(|j| {
            let col = rows.iter().map(|r| r[j]).sum::<T>() / T::of_count(n as u64);
            mean_y.max(T::one()) / (T::of_count(m as u64) * col)
        })
        .collect();
    let min_mean = |g: &[T]| {
        rows.iter()
            .map(|r| r.iter().zip(g).map(|(&a, &b)| a * b).sum::<T>())
            .fold(T::infinity(), |a, b| a.min(b))
    };
    let mut tau = T::of(1e-8);
    while min_mean(&gamma) < floor && tau <= T::one() {
        for (g, u) in gamma.iter_mut().zip(&uniform) {
            *g = *g + tau * *u;
        }
        tau = tau * T::of(2.0);
    }
    gamma
}

/// Maximum-likelihood fit. See the module docs for the algorithm.
///
/// Convergence: the projected score satisfies
/// `‖s‖∞ ≤ tol·(1 + |l|)`, or the Newton decrement `s' F⁻¹ s` on the free
/// coordinates does (the score itself carries the units of `Z̃`), in which
/// case one final Newton step is taken.
pub fn fit<T: Scalar>(design: &Design<T>, opts: &FitOptions<T>) -> Result<FitResult<T>, RegressionError> {
    check_identifiable(design)?;
    let m = design.dim();
    if design.rows.iter().all(|r| r.y == 0) {
        return Ok(FitResult {
            gamma_hat: vec![T::zero(); m],
            loglik: T::zero(),
            score_norm: T::zero(),
            fisher_info: vec![vec![T::zero(); m]; m],
            iterations: 0,
            converged: true,
            boundary: true,
            history: vec![T::zero()],
        });
    }
    let mut gamma = match &opts.init {
        Some(g) if g.len() != m => return Err(RegressionError::DimensionMismatch { expected: m, got: g.len() }),
        Some(g) if g.iter().all(|&v| v >= T::zero()) && design.means(g).is_ok() => g.clone(),
        _ => starting_point(design),
    };
    let mut ll = log_likelihood(design, &gamma)?;
    let mut history = vec![ll];
    let mut iterations = 0;
    let mut converged = false;
    let mut pg_norm = T::infinity();
    while iterations <= opts.max_iter {
        let s = score(design, &gamma)?;
        let f = fisher_info(design, &gamma)?;
        // Coordinates whose own Newton step would cross zero go straight to the bound.
        let snap: Vec<bool> =
            (0..m).map(|j| s[j] < T::zero() && gamma[j] > T::zero() && gamma[j] <= -s[j] / f[(j, j)]).collect();
        let free: Vec<usize> = (0..m).filter(|&j| !snap[j] && (gamma[j] > T::zero() || s[j] > T::zero())).collect();
        pg_norm = free.iter().fold(T::zero(), |a, &j| a.max(s[j].abs()));
        let thresh = opts.tol * (T::one() + ll.abs());
        let snapping = snap.iter().any(|&b| b);
        let dir_free = if free.is_empty() {
            Vec::new()
        } else {
            let l = cholesky(&f.select(&free), T::of(1e-300)).ok_or(RegressionError::SingularInformation)?;
            cholesky_solve(&l, &free.iter().map(|&j| s[j]).collect::<Vec<_>>())
        };
        let decrement: T = free.iter().zip(&dir_free).map(|(&j, &d)| s[j] * d).sum();
        if !snapping && pg_norm <= thresh {
            converged = true;
            break;
        }
        // Inside the quadratic region: take the last Newton step and stop.
        let last = !snapping && decrement <= thresh;
        if iterations == opts.max_iter && !last {
            break;
        }
        iterations += 1;
        let mut dir = vec![T::zero(); m];
        for (&j, &d) in free.iter().zip(&dir_free) {
            dir[j] = d;
        }
        let slack = T::of(1e-13) * (T::one() + ll.abs());
        let mut t = T::one();
        let mut accepted = None;
        for _ in 0..64 {
            let cand: Vec<T> = (0..m).map(|j| if snap[j] { T::zero() } else { (gamma[j] + t * dir[j]).max(T::zero()) }).collect();
            if let Ok(l_new) = log_likelihood(design, &cand) {
                if l_new >= ll - slack {
                    accepted = Some((cand, l_new));
                    break;
                }
            }
            t = t * T::of(0.5);
        }
        let Some((cand, l_new)) = accepted else {
            converged = last;
            break;
        };
        gamma = cand;
        ll = l_new;
        history.push(ll);
        if last {
            converged = true;
            let s = score(design, &gamma)?;
            pg_norm = (0..m).filter(|&j| gamma[j] > T::zero() || s[j] > T::zero()).fold(T::zero(), |a, j| a.max(s[j].abs()));
            break;
        }
    }
    let f = fisher_info(design, &gamma)?;
    let result = FitResult {
        boundary: gamma.iter().any(|&g| g == T::zero()),
        gamma_hat: gamma,
        loglik: ll,
        score_norm: pg_norm,
        fisher_info: f.rows(),
        iterations,
        converged,
        history,
    };
    if converged {
        Ok(result)
    } else {
        Err(RegressionError::MaxIterations(Box::new(result.to_f64())))
    }
}

/// `F(γ₀)^{1/2} (γ̂ − γ₀)` with the symmetric square root.
pub fn standardized_estimator<T: Scalar>(
    design: &Design<T>,
    fit: &FitResult<T>,
    gamma_true: &[T],
) -> Result<Vec<T>, RegressionError> {
    if !fit.converged {
        return Err(RegressionError::UnconvergedFit);
    }
    let f = fisher_info(design, gamma_true)?;
    let root = sym_sqrt(&f).ok_or(RegressionError::SingularInformation)?;
    let diff: Vec<T> = fit.gamma_hat.iter().zip(gamma_true).map(|(&a, &b)| a - b).collect();
    Ok(root.mul_vec(&diff))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(rows: &[(f64, f64, u64)]) -> Design<f64> {
        Design::new(rows.iter().map(|&(a, x, y)| DesignRow { area: a, x: vec![x], y }).collect(), 1.0).unwrap()
    }

    #[test]
    fn loglik_examples() {
        let d = design(&[(1.0, 0.0, 0)]);
        assert!((log_likelihood(&d, &[3.0, 0.0]).unwrap() + 3.0).abs() < 1e-15);
        let d = design(&[(1.0, 0.0, 2)]);
        let expect = 2.0 * 2f64.ln() - 2.0 - 2f64.ln();
        assert!((log_likelihood(&d, &[2.0, 0.0]).unwrap() - expect).abs() < 1e-15);
        assert_eq!(log_likelihood(&d, &[0.0, 5.0]).unwrap_err(), RegressionError::NonpositiveMean(0));
        assert!(matches!(log_likelihood(&d, &[1.0]), Err(RegressionError::DimensionMismatch { .. })));
    }

    #[test]
    fn ln_factorial_matches_summation() {
        for n in [0u64, 1, 5, 100, 256, 257, 1000, 123_456] {
            let exact: f64 = (2..=n).map(|v| (v as f64).ln()).sum();
            assert!((ln_factorial(n) - exact).abs() <= 1e-12 * exact.max(1.0), "n={n}");
        }
    }

    #[test]
    fn exact_fit_score_is_zero() {
        let d = design(&[(1.0, 2.0, 5), (1.0, 4.0, 7)]);
        assert_eq!(score(&d, &[3.0, 1.0]).unwrap(), vec![0.0, 0.0]);
        let r = fit(&d, &FitOptions::default()).unwrap();
        assert!((r.gamma_hat[0] - 3.0).abs() < 1e-8 && (r.gamma_hat[1] - 1.0).abs() < 1e-8, "{:?}", r.gamma_hat);
        assert!(r.converged && !r.boundary);
    }

    #[test]
    fn start_next_to_bound_converges_on_it() {
        let d = design(&[(1.0, 1.0, 10), (1.0, 2.0, 10), (1.0, 3.0, 10), (1.0, 4.0, 9)]);
        let opts = FitOptions { init: Some(vec![10.0, 1e-11]), ..FitOptions::default() };
        let r = fit(&d, &opts).unwrap();
        assert!(r.converged && r.boundary, "{r:?}");
        assert_eq!(r.gamma_hat[1], 0.0);
        assert!((r.gamma_hat[0] - 9.75).abs() < 1e-8);
    }

    #[test]
    fn single_row_information() {
        let d = design(&[(1.0, 0.0, 3)]);
        let f = fisher_info(&d, &[4.0, 0.0]).unwrap();
        assert_eq!(f.data, vec![0.25, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn all_zero_counts_hit_the_origin() {
        let d = design(&[(1.0, 2.0, 0), (2.0, 1.0, 0), (1.0, 5.0, 0)]);
        let r = fit(&d, &FitOptions::default()).unwrap();
        assert_eq!(r.gamma_hat, vec![0.0, 0.0]);
        assert!(r.boundary && r.converged);
    }

    #[test]
    fn boundary_alpha_zero() {
        // Counts exactly proportional to x with a negative unconstrained intercept.
        let d = design(&[(1.0, 10.0, 8), (1.0, 20.0, 21), (1.0, 30.0, 33)]);
        let r = fit(&d, &FitOptions::default()).unwrap();
        assert_eq!(r.gamma_hat[0], 0.0);
        assert!(r.boundary);
        let total: f64 = d.rows().iter().map(|r| r.y as f64).sum();
        assert!((r.gamma_hat[1] * 60.0 - total).abs() < 1e-6);
    }

    #[test]
    fn identifiability() {
        let d = design(&[(1.0, 2.0, 5)]);
        assert!(matches!(fit(&d, &FitOptions::default()), Err(RegressionError::NotIdentifiable(_))));
        let d = design(&[(1.0, 2.0, 5), (2.0, 4.0, 9)]);
        assert!(matches!(fit(&d, &FitOptions::default()), Err(RegressionError::NotIdentifiable(_))));
        let d = design(&[(1.0, 0.0, 5), (2.0, 0.0, 9)]);
        assert!(matches!(fit(&d, &FitOptions::default()), Err(RegressionError::NotIdentifiable(_))));
    }

    #[test]
    fn design_validation() {
        let bad = vec![DesignRow { area: 0.0, x: vec![1.0], y: 1 }];
        assert_eq!(Design::new(bad, 1.0).unwrap_err(), RegressionError::InvalidRow(0));
        let ragged = vec![DesignRow { area: 1.0, x: vec![1.0], y: 1 }, DesignRow { area: 1.0, x: vec![], y: 1 }];
        assert_eq!(Design::new(ragged, 1.0).unwrap_err(), RegressionError::RaggedDesign);
        assert_eq!(Design::<f64>::new(vec![], 0.0).unwrap_err(), RegressionError::InvalidScale);
    }

    #[test]
    fn standardized_at_truth_is_zero() {
        let d = design(&[(1.0, 2.0, 5), (1.0, 4.0, 7), (2.0, 1.0, 8)]);
        let mut r = fit(&d, &FitOptions::default()).unwrap();
        let g = r.gamma_hat.clone();
        assert!(standardized_estimator(&d, &r, &g).unwrap().iter().all(|v| v.abs() < 1e-12));
        r.converged = false;
        assert_eq!(standardized_estimator(&d, &r, &g).unwrap_err(), RegressionError::UnconvergedFit);
    }

    #[test]
    fn works_in_f32() {
        let rows = vec![
            DesignRow { area: 1.0f32, x: vec![2.0], y: 5 },
            DesignRow { area: 1.0, x: vec![4.0], y: 7 },
        ];
        let r = fit(&Design::new(rows, 1.0).unwrap(), &FitOptions::default()).unwrap();
        assert!((r.gamma_hat[0] - 3.0).abs() < 1e-3 && (r.gamma_hat[1] - 1.0).abs() < 1e-3);
    }
}
