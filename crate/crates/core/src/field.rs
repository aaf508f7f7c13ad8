//! Per-cell intensity surfaces and Poisson count fields.
//!
//! Counts are simulated cell by cell: a Poisson pattern aggregated to cells
//! has independent `Poisson(k·λ_c·cell_area)` cell counts, so individual
//! point coordinates are never materialised.
//!
//! Random streams: a field simulated for replicate `r` of base seed `s` uses
//! a ChaCha8 generator seeded with `s` and switched to stream `r`. Streams of
//! one seed never overlap, so replicates can run in any order or in
//! parallel and still produce identical fields.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridRegion, Zone};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum FieldError {
    #[error("field has {got} values, grid has {expected} cells")]
    SizeMismatch { expected: usize, got: usize },
    #[error("intensity at cell {0} is negative or not finite")]
    InvalidIntensity(usize),
    #[error("alpha and beta are both zero")]
    DegenerateModel,
    #[error("alpha and beta must be nonnegative and finite")]
    NegativeCoefficient,
    #[error("scale must be positive")]
    InvalidScale,
    #[error("all counts are zero")]
    AllZero,
    #[error("cell {cell} outside a grid of {n_cells} cells")]
    CellOutOfBounds { cell: usize, n_cells: usize },
}

/// Piecewise-constant intensity, one value per cell (points per unit area).
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityField<T> {
    region: GridRegion<T>,
    values: Vec<T>,
}

impl<T: Scalar> IntensityField<T> {
    pub fn new(region: GridRegion<T>, values: Vec<T>) -> Result<Self, FieldError> {
        if values.len() != region.n_cells() {
            return Err(FieldError::SizeMismatch { expected: region.n_cells(), got: values.len() });
        }
        if let Some(c) = values.iter().position(|v| !(*v >= T::zero()) || !v.is_finite()) {
            return Err(FieldError::InvalidIntensity(c));
        }
        Ok(Self { region, values })
    }

    pub fn constant(region: GridRegion<T>, value: T) -> Result<Self, FieldError> {
        Self::new(region, vec![value; region.n_cells()])
    }

    /// Two-level surface: `high` on the listed cells, `low` elsewhere.
    pub fn two_level(region: GridRegion<T>, low: T, high: T, high_cells: &[usize]) -> Result<Self, FieldError> {
        let mut values = vec![low; region.n_cells()];
        for &c in high_cells {
            if c >= values.len() {
                return Err(FieldError::CellOutOfBounds { cell: c, n_cells: values.len() });
            }
            values[c] = high;
        }
        Self::new(region, values)
    }

    /// Treats realised per-cell counts as a (conditional) intensity.
    pub fn from_counts(counts: &CountField<T>) -> Self {
        let a = counts.region.cell_area;
        let values = counts.counts.iter().map(|&n| T::of_count(n) / a).collect();
        Self { region: counts.region, values }
    }

    pub fn region(&self) -> &GridRegion<T> {
        &self.region
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Expected count per cell, `λ_c · cell_area`.
    pub fn cell_means(&self) -> Vec<T> {
        self.values.iter().map(|&v| v * self.region.cell_area).collect()
    }

    /// Expected count over a zone.
    pub fn expected_count(&self, zone: &Zone) -> T {
        zone.cells().iter().map(|&c| self.values[c]).sum::<T>() * self.region.cell_area
    }

    pub fn total(&self) -> T {
        self.values.iter().copied().sum::<T>() * self.region.cell_area
    }
}

/// `λ_Y = α + β·λ_X`, cell by cell.
pub fn derive_target_intensity<T: Scalar>(
    x_field: &IntensityField<T>,
    alpha: T,
    beta: T,
) -> Result<IntensityField<T>, FieldError> {
    if !(alpha >= T::zero() && beta >= T::zero()) || !alpha.is_finite() || !beta.is_finite() {
        return Err(FieldError::NegativeCoefficient);
    }
    if alpha == T::zero() && beta == T::zero() {
        return Err(FieldError::DegenerateModel);
    }
    let values = x_field.values.iter().map(|&v| alpha + beta * v).collect();
    IntensityField::new(x_field.region, values)
}

/// Where a count field came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedProvenance {
    pub base_seed: u64,
    pub replicate: u64,
}

/// Realised nonnegative counts, one per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CountField<T> {
    region: GridRegion<T>,
    counts: Vec<u64>,
    pub provenance: Option<SeedProvenance>,
}

impl<T: Scalar> CountField<T> {
    pub fn new(region: GridRegion<T>, counts: Vec<u64>) -> Result<Self, FieldError> {
        if counts.len() != region.n_cells() {
            return Err(FieldError::SizeMismatch { expected: region.n_cells(), got: counts.len() });
        }
        Ok(Self { region, counts, provenance: None })
    }

    pub fn region(&self) -> &GridRegion<T> {
        &self.region
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Counts as scalars.
    pub fn values(&self) -> Vec<T> {
        self.counts.iter().map(|&n| T::of_count(n)).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Generator for replicate `replicate` of `base_seed`.
pub fn replicate_rng(base_seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(replicate);
    rng
}

/// One Poisson draw with mean `mean ≥ 0`.
pub fn poisson_draw<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive finite mean").sample(rng) as u64
}

/// Draws per-cell counts `Poisson(k·λ_c·cell_area)` from an explicit generator.
pub fn simulate_counts_with<T: Scalar, R: Rng + ?Sized>(
    field: &IntensityField<T>,
    k: T,
    rng: &mut R,
) -> Result<CountField<T>, FieldError> {
    if !(k > T::zero()) || !k.is_finite() {
        return Err(FieldError::InvalidScale);
    }
    let scale = (k * field.region.cell_area).as_f64();
    let counts = field.values.iter().map(|v| poisson_draw(v.as_f64() * scale, rng)).collect();
    Ok(CountField { region: field.region, counts, provenance: None })
}

/// Replicate `replicate` of `base_seed`; see the module docs for the stream layout.
pub fn simulate_replicate<T: Scalar>(
    field: &IntensityField<T>,
    k: T,
    base_seed: u64,
    replicate: u64,
) -> Result<CountField<T>, FieldError> {
    let mut rng = replicate_rng(base_seed, replicate);
    let mut out = simulate_counts_with(field, k, &mut rng)?;
    out.provenance = Some(SeedProvenance { base_seed, replicate });
    Ok(out)
}

/// Same as replicate 0 of `seed`.
pub fn simulate_counts<T: Scalar>(field: &IntensityField<T>, k: T, seed: u64) -> Result<CountField<T>, FieldError> {
    simulate_replicate(field, k, seed, 0)
}

/// Sum of the counts over `zone`.
pub fn aggregate_count<T: Scalar>(counts: &CountField<T>, zone: &Zone) -> u64 {
    zone.cells().iter().map(|&c| counts.counts[c]).sum()
}

/// Gini coefficient of the cell counts in mean-absolute-difference form,
/// `Σ_i Σ_j |y_i − y_j| / (2 n Σ y)`.
pub fn gini<T: Scalar>(counts: &CountField<T>) -> Result<f64, FieldError> {
    gini_of(counts.counts())
}

pub fn gini_of(values: &[u64]) -> Result<f64, FieldError> {
    let total: u64 = values.iter().sum();
    if total == 0 {
        return Err(FieldError::AllZero);
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as f64;
    // Σ_i Σ_j |y_i − y_j| = 2 Σ_i (2i − n + 1) y_(i) over ascending order.
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, &y)| (2.0 * i as f64 - n + 1.0) * y as f64)
        .sum();
    Ok(2.0 * weighted / (2.0 * n * total as f64))
}

/// Pearson correlation between two count fields of the same grid.
pub fn correlation(a: &[u64], b: &[u64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<u64>() as f64 / n;
    let mb = b.iter().sum::<u64>() as f64 / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x as f64 - ma, y as f64 - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    sab / (saa * sbb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region(r: usize, c: usize) -> GridRegion<f64> {
        GridRegion::new(r, c, 1.0).unwrap()
    }

    fn brute_gini(v: &[u64]) -> f64 {
        let n = v.len() as f64;
        let total: f64 = v.iter().map(|&y| y as f64).sum();
        let mut s = 0.0;
        for &a in v {
            for &b in v {
                s += (a as f64 - b as f64).abs();
            }
        }
        s / (2.0 * n * total)
    }

    #[test]
    fn target_intensity_is_pointwise_affine() {
        let x = IntensityField::new(region(1, 3), vec![3.0, 0.0, 1.5]).unwrap();
        assert_eq!(derive_target_intensity(&x, 80.0, 1.0).unwrap().values(), &[83.0, 80.0, 81.5]);
        assert_eq!(derive_target_intensity(&x, 0.0, 1.0).unwrap().values(), x.values());
        assert_eq!(derive_target_intensity(&x, 2.0, 0.0).unwrap().values(), &[2.0; 3]);
        assert_eq!(derive_target_intensity(&x, 0.0, 0.0).unwrap_err(), FieldError::DegenerateModel);
        assert_eq!(derive_target_intensity(&x, -1.0, 1.0).unwrap_err(), FieldError::NegativeCoefficient);
    }

    #[test]
    fn invalid_fields() {
        assert_eq!(
            IntensityField::new(region(1, 2), vec![1.0]).unwrap_err(),
            FieldError::SizeMismatch { expected: 2, got: 1 }
        );
        assert_eq!(IntensityField::new(region(1, 2), vec![1.0, -1.0]).unwrap_err(), FieldError::InvalidIntensity(1));
        let f = IntensityField::constant(region(1, 2), 1.0).unwrap();
        assert_eq!(simulate_counts(&f, 0.0, 1).unwrap_err(), FieldError::InvalidScale);
    }

    #[test]
    fn zero_field_gives_zero_counts() {
        let f = IntensityField::constant(region(4, 4), 0.0).unwrap();
        assert_eq!(simulate_counts(&f, 1.0, 9).unwrap().total(), 0);
    }

    #[test]
    fn same_seed_same_field() {
        let f = IntensityField::constant(region(8, 8), 12.5).unwrap();
        let a = simulate_replicate(&f, 1.0, 77, 3).unwrap();
        let b = simulate_replicate(&f, 1.0, 77, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.provenance, Some(SeedProvenance { base_seed: 77, replicate: 3 }));
        assert_ne!(a.counts(), simulate_replicate(&f, 1.0, 77, 4).unwrap().counts());
    }

    #[test]
    fn large_field_mean_matches_intensity() {
        // 10^6 cells of mean 5: sd of the sample mean is sqrt(5)/1000.
        let f = IntensityField::constant(region(1000, 1000), 5.0).unwrap();
        let c = simulate_counts(&f, 1.0, 2024).unwrap();
        let mean = c.total() as f64 / 1e6;
        assert!((4.99..=5.01).contains(&mean), "mean {mean}");
    }

    #[test]
    fn aggregation_is_additive() {
        let r = region(3, 3);
        let f = IntensityField::constant(r, 7.0).unwrap();
        let c = simulate_counts(&f, 1.0, 5).unwrap();
        let a = Zone::new("a", vec![0, 1, 2, 3]).unwrap();
        let b = Zone::new("b", vec![4, 5, 6, 7, 8]).unwrap();
        let all = Zone::new("s", (0..9).collect()).unwrap();
        assert_eq!(aggregate_count(&c, &a) + aggregate_count(&c, &b), aggregate_count(&c, &all));
        assert_eq!(aggregate_count(&c, &all), c.total());
        assert_eq!(aggregate_count(&c, &Zone::new("one", vec![4]).unwrap()), c.counts()[4]);
    }

    #[test]
    fn gini_cases() {
        assert_eq!(gini_of(&[4, 4, 4, 4]).unwrap(), 0.0);
        assert!((gini_of(&[0, 0, 0, 9]).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(gini_of(&[0, 0]).unwrap_err(), FieldError::AllZero);
        let v = [3, 0, 17, 5, 5, 1, 40, 2];
        assert!((gini_of(&v).unwrap() - brute_gini(&v)).abs() < 1e-14);
    }

    #[test]
    fn homogeneous_field_has_small_gini() {
        let f = IntensityField::constant(region(16, 16), 100_000.0 / 256.0).unwrap();
        let g = gini(&simulate_counts(&f, 1.0, 11).unwrap()).unwrap();
        assert!((g - 0.03).abs() <= 0.01, "gini {g}");
    }

    proptest::proptest! {
        #[test]
        fn gini_matches_brute_force(v in proptest::collection::vec(0u64..50, 1..40)) {
            proptest::prop_assume!(v.iter().sum::<u64>() > 0);
            let g = gini_of(&v).unwrap();
            proptest::prop_assert!((g - brute_gini(&v)).abs() < 1e-12);
            proptest::prop_assert!((0.0..1.0).contains(&g));
        }
    }
}
