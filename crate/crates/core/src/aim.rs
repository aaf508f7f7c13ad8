//! The auxiliary information model: `Y_A ~ Poisson(α|A| + Σ_j β_j x_{A,j})`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::IntensityField;
use crate::grid::{GridError, ZoneSystem};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum AimError {
    #[error("coefficients must be nonnegative and finite")]
    NegativeCoefficient,
    #[error("all coefficients are zero")]
    Degenerate,
    #[error("expected count is not positive")]
    ZeroExpectation,
    #[error("effect decomposition needs exactly one auxiliary variable, model has {0}")]
    NotSingleAuxiliary(usize),
    #[error("model has {expected} auxiliary coefficients, got {got} auxiliary values")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("control zones do not partition the region: {0}")]
    NotAPartition(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// `γ = (α, β_1 … β_p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AimParams<T> {
    pub alpha: T,
    #[serde(default)]
    pub betas: Vec<T>,
}

impl<T: Scalar> AimParams<T> {
    pub fn new(alpha: T, betas: Vec<T>) -> Result<Self, AimError> {
        let p = Self { alpha, betas };
        p.validate()?;
        Ok(p)
    }

    /// Single-auxiliary model.
    pub fn single(alpha: T, beta: T) -> Result<Self, AimError> {
        Self::new(alpha, vec![beta])
    }

    pub fn validate(&self) -> Result<(), AimError> {
        let ok = |v: T| v >= T::zero() && v.is_finite();
        if !ok(self.alpha) || !self.betas.iter().all(|&b| ok(b)) {
            return Err(AimError::NegativeCoefficient);
        }
        if self.alpha == T::zero() && self.betas.iter().all(|&b| b == T::zero()) {
            return Err(AimError::Degenerate);
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.betas.len()
    }

    /// `(α, β_1, …)` as one vector.
    pub fn gamma(&self) -> Vec<T> {
        std::iter::once(self.alpha).chain(self.betas.iter().copied()).collect()
    }

    pub fn from_gamma(gamma: &[T]) -> Self {
        Self { alpha: gamma[0], betas: gamma[1..].to_vec() }
    }

    /// Multiplies every coefficient by `k` (intensity growth rate).
    pub fn scaled(&self, k: T) -> Self {
        Self { alpha: self.alpha * k, betas: self.betas.iter().map(|&b| b * k).collect() }
    }

    /// `α·area + Σ β_j x_j`.
    pub fn mean(&self, area: T, x: &[T]) -> T {
        self.alpha * area + self.betas.iter().zip(x).map(|(&b, &v)| b * v).sum::<T>()
    }
}

/// `E(Y_A) = α|A| + Σ β_j x_{A,j}`.
pub fn expected_count<T: Scalar>(params: &AimParams<T>, area: T, x: &[T]) -> Result<T, AimError> {
    if x.len() != params.p() {
        return Err(AimError::DimensionMismatch { expected: params.p(), got: x.len() });
    }
    Ok(params.mean(area, x))
}

/// Relative weight of the areal and auxiliary effects in one zone.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectDecomposition<T> {
    pub zone_id: String,
    pub expected: T,
    /// `α|A| / E(Y_A)`
    pub i_area: T,
    /// `β x_A / E(Y_A)`
    pub i_aux: T,
    /// `i_area − i_aux`, the imbalance index.
    pub delta: T,
}

pub fn decompose_effects<T: Scalar>(
    params: &AimParams<T>,
    zone_id: &str,
    area: T,
    x: T,
) -> Result<EffectDecomposition<T>, AimError> {
    if params.p() != 1 {
        return Err(AimError::NotSingleAuxiliary(params.p()));
    }
    let areal = params.alpha * area;
    let auxiliary = params.betas[0] * x;
    let expected = areal + auxiliary;
    if !(expected > T::zero()) {
        return Err(AimError::ZeroExpectation);
    }
    Ok(EffectDecomposition {
        zone_id: zone_id.to_string(),
        expected,
        i_area: areal / expected,
        i_aux: auxiliary / expected,
        delta: (areal - auxiliary) / expected,
    })
}

/// Imbalance index per source, in source order.
pub fn imbalance_table<T: Scalar>(
    params: &AimParams<T>,
    sources: &ZoneSystem<T>,
    x: &[T],
) -> Result<Vec<EffectDecomposition<T>>, AimError> {
    let xs = sources.sums(x);
    sources
        .zones()
        .iter()
        .zip(sources.areas())
        .zip(xs)
        .map(|((z, a), xv)| decompose_effects(params, &z.id, a, xv))
        .collect()
}

/// Homogeneous intensity `α_*` inside each control zone.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseModel<T> {
    pub control_zones: ZoneSystem<T>,
    pub intensities: Vec<T>,
}

impl<T: Scalar> PiecewiseModel<T> {
    pub fn new(control_zones: ZoneSystem<T>, intensities: Vec<T>) -> Result<Self, AimError> {
        if intensities.len() != control_zones.len() {
            return Err(AimError::NotAPartition(format!(
                "{} control zones but {} intensities",
                control_zones.len(),
                intensities.len()
            )));
        }
        if intensities.iter().any(|&a| !(a >= T::zero()) || !a.is_finite()) {
            return Err(AimError::NegativeCoefficient);
        }
        Ok(Self { control_zones, intensities })
    }
}

/// Per-cell field equal to `α_*` on control zone `*`.
pub fn piecewise_intensity<T: Scalar>(model: &PiecewiseModel<T>) -> Result<IntensityField<T>, AimError> {
    let zones = &model.control_zones;
    let values = (0..zones.region().n_cells()).map(|c| model.intensities[zones.zone_of(c)]).collect();
    IntensityField::new(*zones.region(), values).map_err(|e| AimError::NotAPartition(e.to_string()))
}
