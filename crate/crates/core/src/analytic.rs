//! Closed-form errors of the share-based predictors.
//!
//! A predictor that hands a fixed share `w` of the source count `Y_S` to a
//! subzone with expectation `λ_T` (inside a source with expectation `λ_S`)
//! has bias `w λ_S − λ_T` and variance `(w − 1)² λ_T + w² (λ_S − λ_T)`,
//! because `Y_T` and `Y_S − Y_T` are independent Poisson counts. DAW, DAX and
//! the composite predictor differ only in `w`. Non-nested targets sum these
//! over their intersections, sources being independent.

use serde::Serialize;
use thiserror::Error;

use crate::aim::AimParams;
use crate::grid::{GeometryStats, GridError, GridRegion, IntersectionTable, Zone};
use crate::interp::Method;
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticError {
    #[error("target `{0}` is not nested in the source")]
    NotNested(String),
    #[error("target `{0}` straddles control zones")]
    TargetStraddlesControl(String),
    #[error("expected count is not positive")]
    ZeroExpectation,
    #[error("auxiliary total of the source is zero")]
    ZeroAuxiliary,
    #[error("{0} has no closed-form error")]
    NoClosedForm(Method),
    #[error("auxiliary index {0} out of range")]
    AuxIndex(usize),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Target,
    Source,
    Region,
}

impl Scope {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scope::Target => "target",
            Scope::Source => "source",
            Scope::Region => "region",
        }
    }
}

/// Bias, variance and relative error of one predictor on one zone.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorSummary<T> {
    pub scope: Scope,
    pub scope_id: String,
    pub method: Method,
    pub bias: T,
    pub variance: T,
    pub mse: T,
    /// `√mse / E(Y)`
    pub relative: T,
}

impl<T: Scalar> ErrorSummary<T> {
    pub fn new(scope: Scope, scope_id: impl Into<String>, method: Method, bias: T, variance: T, expected: T) -> Self {
        let mse = bias * bias + variance;
        Self { scope, scope_id: scope_id.into(), method, bias, variance, mse, relative: mse.sqrt() / expected }
    }
}

/// `(bias, variance)` of `w · Y_S` as a predictor of `Y_T`.
pub fn share_error<T: Scalar>(w: T, lambda_t: T, lambda_s: T) -> (T, T) {
    let bias = w * lambda_s - lambda_t;
    let one = T::one();
    (bias, (w - one) * (w - one) * lambda_t + w * w * (lambda_s - lambda_t))
}

/// A target nested in a source with one auxiliary variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NestedPair<T> {
    pub source_area: T,
    pub source_x: T,
    pub target_area: T,
    pub target_x: T,
}

impl<T: Scalar> NestedPair<T> {
    /// From grid zones; fails unless `target ⊆ source`.
    pub fn from_zones(region: &GridRegion<T>, source: &Zone, target: &Zone, x: &[T]) -> Result<Self, AnalyticError> {
        if !target.cells().iter().all(|&c| source.contains(c)) {
            return Err(AnalyticError::NotNested(target.id.clone()));
        }
        Ok(Self {
            source_area: source.area(region),
            source_x: source.sum(x),
            target_area: target.area(region),
            target_x: target.sum(x),
        })
    }

    pub fn p(&self) -> T {
        self.target_area / self.source_area
    }

    pub fn q(&self) -> T {
        self.target_x / self.source_x
    }
}

fn single<T: Scalar>(params: &AimParams<T>) -> (T, T) {
    (params.alpha, params.betas.first().copied().unwrap_or_else(T::zero))
}

/// Closed forms for DAW and DAX on a nested target:
/// bias `βx_S(p − q)` and `α|S|(q − p)`, variances
/// `βx_S(p−q)² + βx_T(1−q) + α|T|(1−p)` and `α|S|(p−q)² + βx_T(1−q) + α|T|(1−p)`.
pub fn bias_variance_daw_dax<T: Scalar>(
    params: &AimParams<T>,
    pair: &NestedPair<T>,
    target_id: &str,
) -> Result<(ErrorSummary<T>, ErrorSummary<T>), AnalyticError> {
    let (a, b) = single(params);
    if !(pair.source_x > T::zero()) {
        return Err(AnalyticError::ZeroAuxiliary);
    }
    let lambda_t = a * pair.target_area + b * pair.target_x;
    if !(a * pair.source_area + b * pair.source_x > T::zero()) {
        return Err(AnalyticError::ZeroExpectation);
    }
    let (p, q) = (pair.p(), pair.q());
    let one = T::one();
    let d2 = (p - q) * (p - q);
    let common = b * pair.target_x * (one - q) + a * pair.target_area * (one - p);
    let daw_var = b * pair.source_x * d2 + common;
    let dax_var = a * pair.source_area * d2 + common;
    Ok((
        ErrorSummary::new(Scope::Target, target_id, Method::Daw, b * pair.source_x * (p - q), daw_var, lambda_t),
        ErrorSummary::new(Scope::Target, target_id, Method::Dax, a * pair.source_area * (q - p), dax_var, lambda_t),
    ))
}

/// Source-level variances `(Var_S^DAW, Var_S^DAX)`:
/// `βx_S(D + B) + α|S|C` and `α|S|(D + C) + βx_S B`.
pub fn source_variances<T: Scalar>(params: &AimParams<T>, stats: &GeometryStats<T>, source_area: T, source_x: T) -> (T, T) {
    let (a, b) = single(params);
    let (ax, bx) = (a * source_area, b * source_x);
    (bx * (stats.d + stats.b) + ax * stats.c, ax * (stats.d + stats.c) + bx * stats.b)
}

/// Source-level errors in terms of the effect shares `I_a`, `I_x`, the
/// expectation `E` and the geometry `D, B, C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SourceErrors<T> {
    pub expected: T,
    pub delta: T,
    pub er_daw: T,
    pub er_dax: T,
    pub re2_daw: T,
    pub re2_dax: T,
}

impl<T: Scalar> SourceErrors<T> {
    /// `(Re^DAW)² − (Re^DAX)²` evaluated as `−DΔ(1 + 1/E)`.
    pub fn re2_difference(&self, d: T) -> T {
        -d * self.delta * (T::one() + T::one() / self.expected)
    }
}

pub fn source_errors<T: Scalar>(
    params: &AimParams<T>,
    stats: &GeometryStats<T>,
    source_area: T,
    source_x: T,
) -> Result<SourceErrors<T>, AnalyticError> {
    let (a, b) = single(params);
    let e = a * source_area + b * source_x;
    if !(e > T::zero()) {
        return Err(AnalyticError::ZeroExpectation);
    }
    let (ia, ix) = (a * source_area / e, b * source_x / e);
    let (d, bb, c) = (stats.d, stats.b, stats.c);
    let er_daw = ix * ix * e * e * d + ix * e * (d + bb) + ia * e * c;
    let er_dax = ia * ia * e * e * d + ia * e * (d + c) + ix * e * bb;
    Ok(SourceErrors {
        expected: e,
        delta: ia - ix,
        er_daw,
        er_dax,
        re2_daw: ix * ix * d + (ix * (d + bb) + ia * c) / e,
        re2_dax: ia * ia * d + (ia * (d - bb + c) + bb) / e,
    })
}

/// `Er^DAW_T − Er^DAX_T = (p − q)² (βx_S − α|S|)(E(Y_S) + 1)`.
pub fn error_difference<T: Scalar>(params: &AimParams<T>, pair: &NestedPair<T>) -> Result<T, AnalyticError> {
    let (a, b) = single(params);
    if !(pair.source_x > T::zero()) {
        return Err(AnalyticError::ZeroAuxiliary);
    }
    let e = a * pair.source_area + b * pair.source_x;
    if !(e > T::zero()) {
        return Err(AnalyticError::ZeroExpectation);
    }
    let d = pair.p() - pair.q();
    Ok(d * d * (b * pair.source_x - a * pair.source_area) * (e + T::one()))
}

/// Composite predictor error `λ_T (λ_S − λ_T) / λ_S`.
pub fn composite_target_error<T: Scalar>(lambda_t: T, lambda_s: T) -> T {
    lambda_t * (lambda_s - lambda_t) / lambda_s
}

/// Composite errors on a source split into nested targets: per-target
/// summaries and the source total `λ_S − Σ λ_T² / λ_S`.
pub fn composite_error<T: Scalar>(
    params: &AimParams<T>,
    source_id: &str,
    target_ids: &[&str],
    target_areas: &[T],
    target_x: &[T],
) -> Result<(Vec<ErrorSummary<T>>, ErrorSummary<T>), AnalyticError> {
    let lambdas: Vec<T> = target_areas.iter().zip(target_x).map(|(&a, &x)| params.mean(a, &[x])).collect();
    let lambda_s: T = lambdas.iter().copied().sum();
    if !(lambda_s > T::zero()) {
        return Err(AnalyticError::ZeroExpectation);
    }
    let targets = target_ids
        .iter()
        .zip(&lambdas)
        .map(|(id, &l)| ErrorSummary::new(Scope::Target, *id, Method::Composite, T::zero(), composite_target_error(l, lambda_s), l))
        .collect();
    let er_s = lambda_s - lambdas.iter().map(|&l| l * l).sum::<T>() / lambda_s;
    Ok((targets, ErrorSummary::new(Scope::Source, source_id, Method::Composite, T::zero(), er_s, lambda_s)))
}

/// `(Re^C_S)² = (1/(4E)) [−Δ²D + 2Δ(C − B) + D + 2B + 2C]`.
pub fn composite_re2_formula<T: Scalar>(delta: T, stats: &GeometryStats<T>, expected: T) -> T {
    let two = T::of(2.0);
    let (d, b, c) = (stats.d, stats.b, stats.c);
    (-delta * delta * d + two * delta * (c - b) + d + two * b + two * c) / (T::of(4.0) * expected)
}

/// Leading-order comparison with the regression predictor at source level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegApproximation<T> {
    /// `E(Y_S)^{-1/2}`
    pub re_reg: T,
    /// `(Re^REG)² − (Re^DAW)² ≈ −((1 − Δ)/2)² D`
    pub diff_daw: T,
    /// `(Re^REG)² − (Re^DAX)² ≈ −((1 + Δ)/2)² D`
    pub diff_dax: T,
}

pub fn reg_error_approximations<T: Scalar>(expected: T, delta: T, d: T) -> Result<RegApproximation<T>, AnalyticError> {
    if !(expected > T::zero()) {
        return Err(AnalyticError::ZeroExpectation);
    }
    let half = T::of(0.5);
    let ix = (T::one() - delta) * half;
    let ia = (T::one() + delta) * half;
    Ok(RegApproximation { re_reg: T::one() / expected.sqrt(), diff_daw: -ix * ix * d, diff_dax: -ia * ia * d })
}

/// Per-entry expectations `α|A_st| + Σ β_j x_st,j` using table columns `aux`.
pub fn entry_lambdas<T: Scalar>(
    params: &AimParams<T>,
    table: &IntersectionTable<T>,
    aux: &[usize],
) -> Result<Vec<T>, AnalyticError> {
    if let Some(&j) = aux.iter().find(|&&j| j >= table.n_aux) {
        return Err(AnalyticError::AuxIndex(j));
    }
    Ok(table
        .entries
        .iter()
        .map(|e| params.mean(e.area, &aux.iter().map(|&j| e.aux[j]).collect::<Vec<_>>()))
        .collect())
}

/// Share `w_st` of each intersection for a share-based method. Composite
/// shares come from the expectations `lambda`; DAX uses table column `aux`
/// with the areal fallback for zero sources.
pub fn method_shares<T: Scalar>(
    method: Method,
    table: &IntersectionTable<T>,
    lambda: &[T],
    aux: Option<usize>,
) -> Result<Vec<T>, AnalyticError> {
    let lambda_s = table.to_sources(lambda);
    table
        .entries
        .iter()
        .zip(lambda)
        .map(|(e, &l)| {
            let by_area = e.area / table.source_areas[e.source];
            match method {
                Method::Daw => Ok(by_area),
                Method::Dax => {
                    let j = aux.unwrap_or(0);
                    if j >= table.n_aux {
                        return Err(AnalyticError::AuxIndex(j));
                    }
                    let xs = table.source_aux[e.source][j];
                    Ok(if xs > T::zero() { e.aux[j] / xs } else { by_area })
                }
                Method::Composite => {
                    if lambda_s[e.source] > T::zero() {
                        Ok(l / lambda_s[e.source])
                    } else {
                        Err(AnalyticError::ZeroExpectation)
                    }
                }
                m => Err(AnalyticError::NoClosedForm(m)),
            }
        })
        .collect()
}

/// Analytic errors of a share-based method on every target, source and the
/// whole region, given per-intersection expectations `lambda`.
///
/// Target errors sum bias and variance over the target's intersections.
/// Source errors are `Σ_t E(Ŷ_st − Y_st)²` and the region error is
/// `Σ_t E(Ŷ_t − Y_t)²`; both are reported through `variance` with zero bias.
pub fn table_errors<T: Scalar>(
    method: Method,
    table: &IntersectionTable<T>,
    lambda: &[T],
    aux: Option<usize>,
) -> Result<Vec<ErrorSummary<T>>, AnalyticError> {
    let w = method_shares(method, table, lambda, aux)?;
    let lambda_s = table.to_sources(lambda);
    let (bias, var): (Vec<T>, Vec<T>) =
        table.entries.iter().enumerate().map(|(i, e)| share_error(w[i], lambda[i], lambda_s[e.source])).unzip();
    let mse: Vec<T> = bias.iter().zip(&var).map(|(&b, &v)| b * b + v).collect();
    let lambda_t = table.to_targets(lambda);
    let (tb, tv) = (table.to_targets(&bias), table.to_targets(&var));
    let mut out: Vec<ErrorSummary<T>> = (0..table.n_targets())
        .map(|t| ErrorSummary::new(Scope::Target, &table.target_ids[t], method, tb[t], tv[t], lambda_t[t]))
        .collect();
    let smse = table.to_sources(&mse);
    for s in 0..table.n_sources() {
        out.push(ErrorSummary::new(Scope::Source, &table.source_ids[s], method, T::zero(), smse[s], lambda_s[s]));
    }
    let region: T = out.iter().filter(|e| e.scope == Scope::Target).map(|e| e.mse).sum();
    let total: T = lambda.iter().copied().sum();
    out.push(ErrorSummary::new(Scope::Region, "region", method, T::zero(), region, total));
    Ok(out)
}

/// DAW errors on targets nested in control zones of a piecewise model.
/// `cell_intensity` is the per-cell piecewise intensity, `controls` the
/// control zones; each target must lie inside `source` and inside one control zone.
pub fn piecewise_errors<T: Scalar>(
    region: &GridRegion<T>,
    cell_intensity: &[T],
    controls: &[&Zone],
    source: &Zone,
    targets: &[&Zone],
) -> Result<Vec<ErrorSummary<T>>, AnalyticError> {
    let lambda_s = source.sum(cell_intensity);
    if !(lambda_s > T::zero()) {
        return Err(AnalyticError::ZeroExpectation);
    }
    targets
        .iter()
        .map(|t| {
            if !t.cells().iter().all(|&c| source.contains(c)) {
                return Err(AnalyticError::NotNested(t.id.clone()));
            }
            if !controls.iter().any(|z| t.cells().iter().all(|&c| z.contains(c))) {
                return Err(AnalyticError::TargetStraddlesControl(t.id.clone()));
            }
            let lambda_t = t.sum(cell_intensity);
            let (b, v) = share_error(t.area(region) / source.area(region), lambda_t, lambda_s);
            Ok(ErrorSummary::new(Scope::Target, &t.id, Method::Daw, b, v, lambda_t))
        })
        .collect()
}
