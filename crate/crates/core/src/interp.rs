//! Intersection-level predictors and their aggregation to targets.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aim::AimParams;
use crate::grid::IntersectionTable;
use crate::regression::FitResult;
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum InterpError {
    #[error("{expected} source counts expected, got {got}")]
    SourceCountMismatch { expected: usize, got: usize },
    #[error("auxiliary index {0} out of range")]
    AuxIndex(usize),
    #[error("expected count of source `{0}` is not positive")]
    ZeroExpectation(String),
    #[error("fitted denominator of source `{0}` is not positive")]
    ZeroFittedDenominator(String),
    #[error("fit has not converged")]
    UnconvergedFit,
    #[error("model has {expected} auxiliary coefficients, {got} auxiliary indices given")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Daw,
    Dax,
    Composite,
    Reg,
    Scr,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Daw, Method::Dax, Method::Composite, Method::Reg, Method::Scr];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Daw => "DAW",
            Method::Dax => "DAX",
            Method::Composite => "COMPOSITE",
            Method::Reg => "REG",
            Method::Scr => "SCR",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

/// Predicted count on one intersection `A_st`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub source: usize,
    pub target: usize,
    pub value: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet<T> {
    pub method: Method,
    pub source_ids: Vec<String>,
    pub target_ids: Vec<String>,
    /// Same order as the intersection table entries.
    pub entries: Vec<Prediction<T>>,
    /// `Ŷ_t`, sums over each target's intersections.
    pub targets: Vec<T>,
    /// Entries whose raw value is negative (REG only).
    pub negative: Vec<usize>,
    /// Sources allocated by area because their auxiliary total was zero (DAX only).
    pub fallback_sources: Vec<usize>,
}

impl<T: Scalar> PredictionSet<T> {
    fn build(method: Method, table: &IntersectionTable<T>, values: Vec<T>) -> Self {
        let targets = table.to_targets(&values);
        let negative = values.iter().enumerate().filter(|(_, v)| **v < T::zero()).map(|(i, _)| i).collect();
        let entries = table
            .entries
            .iter()
            .zip(values)
            .map(|(e, value)| Prediction { source: e.source, target: e.target, value })
            .collect();
        Self {
            method,
            source_ids: table.source_ids.clone(),
            target_ids: table.target_ids.clone(),
            entries,
            targets,
            negative,
            fallback_sources: Vec::new(),
        }
    }

    pub fn values(&self) -> Vec<T> {
        self.entries.iter().map(|p| p.value).collect()
    }

    /// `Σ_t Ŷ_st` per source.
    pub fn source_totals(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.source_ids.len()];
        for p in &self.entries {
            out[p.source] = out[p.source] + p.value;
        }
        out
    }

    /// Copy with negative values set to zero, for presentation.
    pub fn clamped(&self) -> Self {
        let mut out = self.clone();
        for p in &mut out.entries {
            p.value = p.value.max(T::zero());
        }
        out.targets = vec![T::zero(); out.target_ids.len()];
        for p in &out.entries {
            out.targets[p.target] = out.targets[p.target] + p.value;
        }
        out
    }
}

fn check_counts<T: Scalar>(table: &IntersectionTable<T>, y: &[u64]) -> Result<(), InterpError> {
    if y.len() != table.n_sources() {
        return Err(InterpError::SourceCountMismatch { expected: table.n_sources(), got: y.len() });
    }
    Ok(())
}

/// Shares `w_st` applied to `Y_s`.
fn allocate<T: Scalar>(table: &IntersectionTable<T>, y: &[u64], share: impl Fn(usize) -> T) -> Vec<T> {
    table
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| share(i) * T::of_count(y[e.source]))
        .collect()
}

/// Areal weighting: `Ŷ_st = |A_st|/|S_s| · Y_s`.
pub fn predict_daw<T: Scalar>(y: &[u64], table: &IntersectionTable<T>) -> Result<PredictionSet<T>, InterpError> {
    check_counts(table, y)?;
    let values = allocate(table, y, |i| {
        let e = &table.entries[i];
        e.area / table.source_areas[e.source]
    });
    Ok(PredictionSet::build(Method::Daw, table, values))
}

/// Dasymetric weighting: `Ŷ_st = x_st/x_s · Y_s`. Sources with `x_s = 0`
/// fall back to areal weights.
pub fn predict_dax<T: Scalar>(
    y: &[u64],
    table: &IntersectionTable<T>,
    aux: usize,
) -> Result<PredictionSet<T>, InterpError> {
    check_counts(table, y)?;
    if aux >= table.n_aux {
        return Err(InterpError::AuxIndex(aux));
    }
    let fallback: Vec<usize> = (0..table.n_sources()).filter(|&s| !(table.source_aux[s][aux] > T::zero())).collect();
    for &s in &fallback {
        log::warn!("source `{}` has zero auxiliary total; allocating by area", table.source_ids[s]);
    }
    let values = allocate(table, y, |i| {
        let e = &table.entries[i];
        let xs = table.source_aux[e.source][aux];
        if xs > T::zero() {
            e.aux[aux] / xs
        } else {
            e.area / table.source_areas[e.source]
        }
    });
    let mut set = PredictionSet::build(Method::Dax, table, values);
    set.fallback_sources = fallback;
    Ok(set)
}

fn model_shares<T: Scalar>(
    table: &IntersectionTable<T>,
    gamma: &[T],
    aux: &[usize],
    zero_err: impl Fn(String) -> InterpError,
) -> Result<Vec<T>, InterpError> {
    if gamma.len() != aux.len() + 1 {
        return Err(InterpError::DimensionMismatch { expected: gamma.len() - 1, got: aux.len() });
    }
    if let Some(&j) = aux.iter().find(|&&j| j >= table.n_aux) {
        return Err(InterpError::AuxIndex(j));
    }
    let lin = |area: T, x: &[T]| gamma[0] * area + aux.iter().zip(&gamma[1..]).map(|(&j, &g)| g * x[j]).sum::<T>();
    let denom: Vec<T> = (0..table.n_sources()).map(|s| lin(table.source_areas[s], &table.source_aux[s])).collect();
    if let Some(s) = denom.iter().position(|&d| !(d > T::zero())) {
        return Err(zero_err(table.source_ids[s].clone()));
    }
    Ok(table.entries.iter().map(|e| lin(e.area, &e.aux) / denom[e.source]).collect())
}

/// Oracle predictor with the true parameters: `Ŷ_st = λ_st/λ_s · Y_s`.
/// `aux[j]` is the table column matching `params.betas[j]`.
pub fn predict_composite<T: Scalar>(
    params: &AimParams<T>,
    y: &[u64],
    table: &IntersectionTable<T>,
    aux: &[usize],
) -> Result<PredictionSet<T>, InterpError> {
    check_counts(table, y)?;
    let shares = model_shares(table, &params.gamma(), aux, InterpError::ZeroExpectation)?;
    Ok(PredictionSet::build(Method::Composite, table, allocate(table, y, |i| shares[i])))
}

/// Regression predictor `Ŷ_st = α̂|A_st| + Σ β̂_j x_st,j`. Negative values are kept and flagged.
pub fn predict_reg<T: Scalar>(
    fit: &FitResult<T>,
    table: &IntersectionTable<T>,
    aux: &[usize],
) -> Result<PredictionSet<T>, InterpError> {
    if !fit.converged {
        return Err(InterpError::UnconvergedFit);
    }
    let g = &fit.gamma_hat;
    if g.len() != aux.len() + 1 {
        return Err(InterpError::DimensionMismatch { expected: g.len() - 1, got: aux.len() });
    }
    if let Some(&j) = aux.iter().find(|&&j| j >= table.n_aux) {
        return Err(InterpError::AuxIndex(j));
    }
    let values = table
        .entries
        .iter()
        .map(|e| g[0] * e.area + aux.iter().zip(&g[1..]).map(|(&j, &b)| b * e.aux[j]).sum::<T>())
        .collect();
    let set = PredictionSet::build(Method::Reg, table, values);
    if !set.negative.is_empty() {
        log::warn!("{} negative regression predictions", set.negative.len());
    }
    Ok(set)
}

/// Scaled regression: fitted intensities rescaled to each source count.
pub fn predict_scr<T: Scalar>(
    fit: &FitResult<T>,
    y: &[u64],
    table: &IntersectionTable<T>,
    aux: &[usize],
) -> Result<PredictionSet<T>, InterpError> {
    if !fit.converged {
        return Err(InterpError::UnconvergedFit);
    }
    check_counts(table, y)?;
    let shares = model_shares(table, &fit.gamma_hat, aux, InterpError::ZeroFittedDenominator)?;
    Ok(PredictionSet::build(Method::Scr, table, allocate(table, y, |i| shares[i])))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PycnoLevel {
    Source,
    Region,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PycnoReport {
    pub level: PycnoLevel,
    /// `|ΣŶ − Y| / max(Y, 1)` per source, or one value for the region.
    pub discrepancies: Vec<f64>,
    pub max_discrepancy: f64,
    pub pass: bool,
}

pub const PYCNO_TOL: f64 = 1e-9;

/// Mass preservation of `pred` against the observed source counts.
pub fn pycnophylactic_check<T: Scalar>(pred: &PredictionSet<T>, y: &[u64], level: PycnoLevel) -> PycnoReport {
    let totals = pred.source_totals();
    let rel = |got: f64, want: u64| (got - want as f64).abs() / (want as f64).max(1.0);
    let discrepancies: Vec<f64> = match level {
        PycnoLevel::Source => totals.iter().zip(y).map(|(t, &v)| rel(t.as_f64(), v)).collect(),
        PycnoLevel::Region => vec![rel(totals.iter().map(|t| t.as_f64()).sum(), y.iter().sum())],
    };
    let max_discrepancy = discrepancies.iter().fold(0.0f64, |a, &b| a.max(b));
    PycnoReport { level, discrepancies, pass: max_discrepancy <= PYCNO_TOL, max_discrepancy }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{intersect, GridRegion, ZoneKind, ZoneSystem};

    /// Fixture R1: one source of 4 cells, targets of 1 and 3 cells, x = (30, 10).
    fn r1() -> IntersectionTable<f64> {
        let r = GridRegion::new(1, 4, 1.0).unwrap();
        let s = ZoneSystem::whole(r, "S", ZoneKind::Source);
        let t = ZoneSystem::from_labels(r, &["T1", "T2", "T2", "T2"], ZoneKind::Target).unwrap();
        let x = [30.0, 10.0 / 3.0, 10.0 / 3.0, 10.0 / 3.0];
        intersect(&s, &t, &[&x]).unwrap()
    }

    fn fit_with(gamma: Vec<f64>) -> FitResult<f64> {
        FitResult {
            gamma_hat: gamma,
            loglik: 0.0,
            score_norm: 0.0,
            fisher_info: vec![],
            iterations: 0,
            converged: true,
            boundary: false,
            history: vec![],
        }
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(u, v)| (u - v).abs() < 1e-12)
    }

    #[test]
    fn fixture_r1_predictions() {
        let t = r1();
        assert!(close(&predict_daw(&[28], &t).unwrap().targets, &[7.0, 21.0]));
        assert!(close(&predict_dax(&[28], &t, 0).unwrap().targets, &[21.0, 7.0]));
        let p = AimParams::single(2.0, 0.5).unwrap();
        assert!(close(&predict_composite(&p, &[28], &t, &[0]).unwrap().targets, &[17.0, 11.0]));
    }

    #[test]
    fn composite_limits() {
        let t = r1();
        let areal = AimParams::single(2.0, 0.0).unwrap();
        let aux = AimParams::single(0.0, 0.5).unwrap();
        assert!(close(&predict_composite(&areal, &[28], &t, &[0]).unwrap().targets, &[7.0, 21.0]));
        assert!(close(&predict_composite(&aux, &[28], &t, &[0]).unwrap().targets, &[21.0, 7.0]));
        let bad = AimParams { alpha: 0.0, betas: vec![0.0] };
        assert!(matches!(predict_composite(&bad, &[28], &t, &[0]), Err(InterpError::ZeroExpectation(_))));
    }

    #[test]
    fn reg_and_scr() {
        let t = r1();
        let reg = predict_reg(&fit_with(vec![3.0, 1.0]), &t, &[0]).unwrap();
        assert!(close(&reg.targets, &[33.0, 19.0]));
        assert!(close(&predict_scr(&fit_with(vec![2.0, 0.0]), &[28], &t, &[0]).unwrap().targets, &[7.0, 21.0]));
        assert!(close(&predict_scr(&fit_with(vec![0.0, 1.0]), &[28], &t, &[0]).unwrap().targets, &[21.0, 7.0]));
        assert!(close(&predict_scr(&fit_with(vec![2.0, 0.5]), &[28], &t, &[0]).unwrap().targets, &[17.0, 11.0]));
        let mut f = fit_with(vec![1.0, 1.0]);
        f.converged = false;
        assert_eq!(predict_reg(&f, &t, &[0]).unwrap_err(), InterpError::UnconvergedFit);
        assert!(matches!(predict_scr(&fit_with(vec![0.0, 0.0]), &[28], &t, &[0]), Err(InterpError::ZeroFittedDenominator(_))));
    }

    #[test]
    fn negative_reg_values_are_flagged() {
        let t = r1();
        let reg = predict_reg(&fit_with(vec![-20.0, 1.0]), &t, &[0]).unwrap();
        assert_eq!(reg.negative, vec![1]);
        assert!(reg.clamped().values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn dax_zero_auxiliary_falls_back() {
        let r = GridRegion::new(1, 4, 1.0).unwrap();
        let s = ZoneSystem::from_labels(r, &["a", "a", "b", "b"], ZoneKind::Source).unwrap();
        let tg = ZoneSystem::from_labels(r, &["u", "v", "u", "v"], ZoneKind::Target).unwrap();
        let x = [0.0, 0.0, 3.0, 1.0];
        let t = intersect(&s, &tg, &[&x]).unwrap();
        let p = predict_dax(&[10, 8], &t, 0).unwrap();
        assert_eq!(p.fallback_sources, vec![0]);
        assert!(close(&p.values(), &[5.0, 5.0, 6.0, 2.0]));
        assert!(pycnophylactic_check(&p, &[10, 8], PycnoLevel::Source).pass);
        assert_eq!(predict_dax(&[10, 8], &t, 1).unwrap_err(), InterpError::AuxIndex(1));
        assert!(matches!(predict_daw(&[10], &t), Err(InterpError::SourceCountMismatch { .. })));
    }

    #[test]
    fn pycnophylactic_levels() {
        let t = r1();
        assert!(pycnophylactic_check(&predict_daw(&[28], &t).unwrap(), &[28], PycnoLevel::Source).pass);
        let reg = predict_reg(&fit_with(vec![3.0, 1.0]), &t, &[0]).unwrap();
        let rep = pycnophylactic_check(&reg, &[28], PycnoLevel::Region);
        assert!(!rep.pass && (rep.max_discrepancy - 24.0 / 28.0).abs() < 1e-12);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("kriging".parse::<Method>().is_err());
    }
}
