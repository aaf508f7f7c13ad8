//! Rectangular grids, zone systems built from cell unions, source/target
//! intersections and the per-source geometric summaries `D`, `B`, `C`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid must have at least one row and column and a positive cell area")]
    InvalidRegion,
    #[error("expected {expected} cell labels, got {got}")]
    OutOfBounds { expected: usize, got: usize },
    #[error("cell index {cell} outside a grid of {n_cells} cells")]
    CellOutOfBounds { cell: usize, n_cells: usize },
    #[error("zone `{0}` has no cells")]
    EmptyZone(String),
    #[error("empty zone label at cell {0}")]
    EmptyLabel(usize),
    #[error("duplicate zone id `{0}`")]
    DuplicateId(String),
    #[error("cell {cell} belongs to both `{first}` and `{second}`")]
    Overlap { cell: usize, first: String, second: String },
    #[error("cell {0} is not covered by any zone")]
    Uncovered(usize),
    #[error("zone systems are defined on different grids")]
    RegionMismatch,
    #[error("auxiliary total of the source is zero")]
    ZeroAuxiliary,
    #[error("targets do not partition the source: {0}")]
    NotAPartition(String),
    #[error("auxiliary field has {got} cells, grid has {expected}")]
    FieldSize { expected: usize, got: usize },
}

/// The study region: `n_rows × n_cols` cells of equal area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRegion<T> {
    pub n_rows: usize,
    pub n_cols: usize,
    pub cell_area: T,
}

impl<T: Scalar> GridRegion<T> {
    pub fn new(n_rows: usize, n_cols: usize, cell_area: T) -> Result<Self, GridError> {
        if n_rows == 0 || n_cols == 0 || !(cell_area > T::zero()) || !cell_area.is_finite() {
            return Err(GridError::InvalidRegion);
        }
        Ok(Self { n_rows, n_cols, cell_area })
    }

    pub fn n_cells(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn total_area(&self) -> T {
        T::of_count(self.n_cells() as u64) * self.cell_area
    }

    /// Row-major index of `(row, col)`.
    pub fn index(&self, row: usize, col: usize) -> Option<usize> {
        (row < self.n_rows && col < self.n_cols).then(|| row * self.n_cols + col)
    }

    pub fn row_col(&self, cell: usize) -> (usize, usize) {
        (cell / self.n_cols, cell % self.n_cols)
    }

    pub fn area_of(&self, n_cells: usize) -> T {
        T::of_count(n_cells as u64) * self.cell_area
    }
}

/// A named union of grid cells. Cells are kept sorted and unique.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Zone {
    pub id: String,
    cells: Vec<usize>,
}

impl Zone {
    pub fn new(id: impl Into<String>, mut cells: Vec<usize>) -> Result<Self, GridError> {
        let id = id.into();
        cells.sort_unstable();
        cells.dedup();
        if cells.is_empty() {
            return Err(GridError::EmptyZone(id));
        }
        Ok(Self { id, cells })
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, cell: usize) -> bool {
        self.cells.binary_search(&cell).is_ok()
    }

    pub fn area<T: Scalar>(&self, region: &GridRegion<T>) -> T {
        region.area_of(self.cells.len())
    }

    /// Sum of per-cell values over the zone.
    pub fn sum<T: Scalar>(&self, values: &[T]) -> T {
        self.cells.iter().map(|&c| values[c]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZoneKind {
    Source,
    Target,
    Control,
}

/// A partition of the grid into zones.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneSystem<T> {
    region: GridRegion<T>,
    zones: Vec<Zone>,
    kind: ZoneKind,
    cell_zone: Vec<usize>,
}

impl<T: Scalar> ZoneSystem<T> {
    /// Validates that `zones` is a partition of `region`.
    pub fn new(region: GridRegion<T>, zones: Vec<Zone>, kind: ZoneKind) -> Result<Self, GridError> {
        let n = region.n_cells();
        let mut cell_zone = vec![usize::MAX; n];
        let mut seen: HashMap<&str, ()> = HashMap::new();
        for (zi, zone) in zones.iter().enumerate() {
            if seen.insert(zone.id.as_str(), ()).is_some() {
                return Err(GridError::DuplicateId(zone.id.clone()));
            }
            for &c in zone.cells() {
                if c >= n {
                    return Err(GridError::CellOutOfBounds { cell: c, n_cells: n });
                }
                if cell_zone[c] != usize::MAX {
                    return Err(GridError::Overlap {
                        cell: c,
                        first: zones[cell_zone[c]].id.clone(),
                        second: zone.id.clone(),
                    });
                }
                cell_zone[c] = zi;
            }
        }
        if let Some(c) = cell_zone.iter().position(|&z| z == usize::MAX) {
            return Err(GridError::Uncovered(c));
        }
        Ok(Self { region, zones, kind, cell_zone })
    }

    /// Builds a partition from one label per cell (row-major). Zones are
    /// ordered by first appearance of their label.
    pub fn from_labels<S: AsRef<str>>(
        region: GridRegion<T>,
        labels: &[S],
        kind: ZoneKind,
    ) -> Result<Self, GridError> {
        if labels.len() != region.n_cells() {
            return Err(GridError::OutOfBounds { expected: region.n_cells(), got: labels.len() });
        }
        let mut order: Vec<String> = Vec::new();
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut cells: Vec<Vec<usize>> = Vec::new();
        for (c, label) in labels.iter().enumerate() {
            let label = label.as_ref();
            if label.is_empty() {
                return Err(GridError::EmptyLabel(c));
            }
            let zi = *index.entry(label).or_insert_with(|| {
                order.push(label.to_string());
                cells.push(Vec::new());
                order.len() - 1
            });
            cells[zi].push(c);
        }
        let zones = order
            .into_iter()
            .zip(cells)
            .map(|(id, cells)| Zone::new(id, cells))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(region, zones, kind)
    }

    /// Every cell its own zone, ids `r{row}c{col}`.
    pub fn cells(region: GridRegion<T>, kind: ZoneKind) -> Self {
        let zones = (0..region.n_cells())
            .map(|c| {
                let (r, col) = region.row_col(c);
                Zone::new(format!("r{r}c{col}"), vec![c]).expect("single cell")
            })
            .collect();
        Self::new(region, zones, kind).expect("cell partition is valid")
    }

    /// The whole region as one zone.
    pub fn whole(region: GridRegion<T>, id: &str, kind: ZoneKind) -> Self {
        let zone = Zone::new(id, (0..region.n_cells()).collect()).expect("non-empty grid");
        Self::new(region, vec![zone], kind).expect("whole region is a partition")
    }

    pub fn region(&self) -> &GridRegion<T> {
        &self.region
    }

    pub fn zones(&self) -> &[Zone] {
        &self.zones
    }

    pub fn kind(&self) -> ZoneKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.zones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zones.is_empty()
    }

    /// Index of the zone containing `cell`.
    pub fn zone_of(&self, cell: usize) -> usize {
        self.cell_zone[cell]
    }

    pub fn areas(&self) -> Vec<T> {
        self.zones.iter().map(|z| z.area(&self.region)).collect()
    }

    /// Per-zone sums of a per-cell field.
    pub fn sums(&self, values: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.zones.len()];
        for (c, &v) in values.iter().enumerate() {
            out[self.cell_zone[c]] = out[self.cell_zone[c]] + v;
        }
        out
    }

    /// Per-zone sums of integer counts.
    pub fn count_sums(&self, counts: &[u64]) -> Vec<u64> {
        let mut out = vec![0u64; self.zones.len()];
        for (c, &v) in counts.iter().enumerate() {
            out[self.cell_zone[c]] += v;
        }
        out
    }

    /// Row-major label per cell.
    pub fn labels(&self) -> Vec<&str> {
        self.cell_zone.iter().map(|&z| self.zones[z].id.as_str()).collect()
    }
}

/// One nonempty source ∩ target overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionEntry<T> {
    pub source: usize,
    pub target: usize,
    pub cells: Vec<usize>,
    pub area: T,
    /// One total per auxiliary variable.
    pub aux: Vec<T>,
}

/// All nonempty intersections, ordered by source then target index.
#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionTable<T> {
    pub source_ids: Vec<String>,
    pub target_ids: Vec<String>,
    pub source_areas: Vec<T>,
    pub target_areas: Vec<T>,
    /// `source_aux[s][j]`: total of auxiliary `j` over source `s`.
    pub source_aux: Vec<Vec<T>>,
    pub entries: Vec<IntersectionEntry<T>>,
    pub n_aux: usize,
    /// `by_source[s]`: positions in `entries`.
    by_source: Vec<Vec<usize>>,
    by_target: Vec<Vec<usize>>,
}

impl<T: Scalar> IntersectionTable<T> {
    pub fn entries_of_source(&self, s: usize) -> impl Iterator<Item = &IntersectionEntry<T>> {
        self.by_source[s].iter().map(move |&i| &self.entries[i])
    }

    pub fn entries_of_target(&self, t: usize) -> impl Iterator<Item = &IntersectionEntry<T>> {
        self.by_target[t].iter().map(move |&i| &self.entries[i])
    }

    pub fn n_sources(&self) -> usize {
        self.source_ids.len()
    }

    pub fn n_targets(&self) -> usize {
        self.target_ids.len()
    }

    /// Per-entry sums of a per-cell field.
    pub fn entry_sums(&self, values: &[T]) -> Vec<T> {
        self.entries.iter().map(|e| e.cells.iter().map(|&c| values[c]).sum()).collect()
    }

    /// Per-entry sums of integer counts.
    pub fn entry_counts(&self, counts: &[u64]) -> Vec<u64> {
        self.entries.iter().map(|e| e.cells.iter().map(|&c| counts[c]).sum()).collect()
    }

    /// Aggregates per-entry values to targets.
    pub fn to_targets(&self, per_entry: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.n_targets()];
        for (e, &v) in self.entries.iter().zip(per_entry) {
            out[e.target] = out[e.target] + v;
        }
        out
    }

    /// Aggregates per-entry values to sources.
    pub fn to_sources(&self, per_entry: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.n_sources()];
        for (e, &v) in self.entries.iter().zip(per_entry) {
            out[e.source] = out[e.source] + v;
        }
        out
    }

    /// `true` when every target lies inside a single source.
    pub fn is_nested(&self) -> bool {
        self.by_target.iter().all(|v| v.len() == 1)
    }
}

/// Intersects two partitions of the same grid. `aux` holds per-cell values
/// of each auxiliary variable.
pub fn intersect<T: Scalar>(
    sources: &ZoneSystem<T>,
    targets: &ZoneSystem<T>,
    aux: &[&[T]],
) -> Result<IntersectionTable<T>, GridError> {
    if sources.region() != targets.region() {
        return Err(GridError::RegionMismatch);
    }
    let region = sources.region();
    let n = region.n_cells();
    for a in aux {
        if a.len() != n {
            return Err(GridError::FieldSize { expected: n, got: a.len() });
        }
    }
    let nt = targets.len();
    let mut cells: Vec<Vec<usize>> = vec![Vec::new(); sources.len() * nt];
    for c in 0..n {
        cells[sources.zone_of(c) * nt + targets.zone_of(c)].push(c);
    }
    let mut entries = Vec::new();
    let mut by_source = vec![Vec::new(); sources.len()];
    let mut by_target = vec![Vec::new(); nt];
    for (k, cs) in cells.into_iter().enumerate() {
        if cs.is_empty() {
            continue;
        }
        let (s, t) = (k / nt, k % nt);
        let aux_tot = aux.iter().map(|a| cs.iter().map(|&c| a[c]).sum()).collect();
        by_source[s].push(entries.len());
        by_target[t].push(entries.len());
        entries.push(IntersectionEntry { source: s, target: t, area: region.area_of(cs.len()), cells: cs, aux: aux_tot });
    }
    let source_aux = (0..sources.len())
        .map(|s| {
            (0..aux.len())
                .map(|j| by_source[s].iter().map(|&i| entries[i].aux[j]).sum())
                .collect()
        })
        .collect();
    Ok(IntersectionTable {
        source_ids: sources.zones().iter().map(|z| z.id.clone()).collect(),
        target_ids: targets.zones().iter().map(|z| z.id.clone()).collect(),
        source_areas: sources.areas(),
        target_areas: targets.areas(),
        source_aux,
        entries,
        n_aux: aux.len(),
        by_source,
        by_target,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NestingReport {
    pub nested: bool,
    /// Ids of targets that straddle more than one source.
    pub violations: Vec<String>,
}

pub fn nesting_check<T: Scalar>(sources: &ZoneSystem<T>, targets: &ZoneSystem<T>) -> NestingReport {
    let violations: Vec<String> = targets
        .zones()
        .iter()
        .filter(|t| {
            let first = sources.zone_of(t.cells()[0]);
            t.cells().iter().any(|&c| sources.zone_of(c) != first)
        })
        .map(|t| t.id.clone())
        .collect();
    NestingReport { nested: violations.is_empty() && sources.region() == targets.region(), violations }
}

/// Geometry of one source split into nested targets.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryStats<T> {
    /// Area shares `|T|/|S|`.
    pub p: Vec<T>,
    /// Auxiliary shares `x_T/x_S`.
    pub q: Vec<T>,
    /// `Σ (p − q)²`
    pub d: T,
    /// `1 − Σ q²`
    pub b: T,
    /// `1 − Σ p²`
    pub c: T,
}

impl<T: Scalar> GeometryStats<T> {
    /// From per-target areas and auxiliary totals; the source totals are
    /// their sums.
    pub fn from_parts(target_areas: &[T], target_x: &[T]) -> Result<Self, GridError> {
        if target_areas.is_empty() || target_areas.len() != target_x.len() {
            return Err(GridError::NotAPartition("area and auxiliary lists differ".into()));
        }
        let area: T = target_areas.iter().copied().sum();
        let x: T = target_x.iter().copied().sum();
        if !(x > T::zero()) {
            return Err(GridError::ZeroAuxiliary);
        }
        let p: Vec<T> = target_areas.iter().map(|&a| a / area).collect();
        let q: Vec<T> = target_x.iter().map(|&v| v / x).collect();
        let d = p.iter().zip(&q).map(|(&a, &b)| (a - b) * (a - b)).sum();
        let b = T::one() - q.iter().map(|&v| v * v).sum::<T>();
        let c = T::one() - p.iter().map(|&v| v * v).sum::<T>();
        Ok(Self { p, q, d, b, c })
    }

    /// `Σ p_T q_T`
    pub fn cross(&self) -> T {
        self.p.iter().zip(&self.q).map(|(&a, &b)| a * b).sum()
    }
}

/// Geometry statistics for `source` split into `nested_targets`, using the
/// per-cell auxiliary values `x`.
pub fn geometry_stats<T: Scalar>(
    region: &GridRegion<T>,
    source: &Zone,
    nested_targets: &[&Zone],
    x: &[T],
) -> Result<GeometryStats<T>, GridError> {
    let covered: usize = nested_targets.iter().map(|t| t.len()).sum();
    if covered != source.len() {
        return Err(GridError::NotAPartition(format!(
            "targets cover {covered} cells, source has {}",
            source.len()
        )));
    }
    let mut seen = vec![false; region.n_cells()];
    for t in nested_targets {
        for &c in t.cells() {
            if !source.contains(c) {
                return Err(GridError::NotAPartition(format!("target `{}` leaves the source", t.id)));
            }
            if std::mem::replace(&mut seen[c], true) {
                return Err(GridError::NotAPartition(format!("cell {c} in two targets")));
            }
        }
    }
    let areas: Vec<T> = nested_targets.iter().map(|t| t.area(region)).collect();
    let xs: Vec<T> = nested_targets.iter().map(|t| t.sum(x)).collect();
    GeometryStats::from_parts(&areas, &xs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region(r: usize, c: usize) -> GridRegion<f64> {
        GridRegion::new(r, c, 1.0).unwrap()
    }

    #[test]
    fn singleton_partition() {
        let sys = ZoneSystem::from_labels(region(1, 1), &["a"], ZoneKind::Source).unwrap();
        assert_eq!(sys.len(), 1);
        assert_eq!(sys.areas(), vec![1.0]);
    }

    #[test]
    fn zone_order_follows_first_appearance() {
        let labels = ["b", "a", "b", "c"];
        let sys = ZoneSystem::from_labels(region(2, 2), &labels, ZoneKind::Target).unwrap();
        let ids: Vec<_> = sys.zones().iter().map(|z| z.id.as_str()).collect();
        assert_eq!(ids, ["b", "a", "c"]);
        assert_eq!(sys.labels(), labels);
    }

    #[test]
    fn five_by_five_three_blocks() {
        let mut labels = vec!["s1"; 25];
        for l in labels.iter_mut().skip(10).take(5) {
            *l = "s2";
        }
        for l in labels.iter_mut().skip(15) {
            *l = "s3";
        }
        let sys = ZoneSystem::from_labels(region(5, 5), &labels, ZoneKind::Source).unwrap();
        assert_eq!(sys.len(), 3);
        assert_eq!(sys.areas().iter().sum::<f64>(), 25.0);
    }

    #[test]
    fn label_errors() {
        let r = region(2, 2);
        assert_eq!(
            ZoneSystem::from_labels(r, &["a", "b"], ZoneKind::Source).unwrap_err(),
            GridError::OutOfBounds { expected: 4, got: 2 }
        );
        assert_eq!(
            ZoneSystem::from_labels(r, &["a", "", "a", "a"], ZoneKind::Source).unwrap_err(),
            GridError::EmptyLabel(1)
        );
        let z = vec![Zone::new("a", vec![0, 1]).unwrap(), Zone::new("a", vec![2, 3]).unwrap()];
        assert_eq!(ZoneSystem::new(r, z, ZoneKind::Source).unwrap_err(), GridError::DuplicateId("a".into()));
        let z = vec![Zone::new("a", vec![0, 1]).unwrap(), Zone::new("b", vec![1, 2, 3]).unwrap()];
        assert!(matches!(ZoneSystem::new(r, z, ZoneKind::Source), Err(GridError::Overlap { cell: 1, .. })));
        let z = vec![Zone::new("a", vec![0, 1]).unwrap(), Zone::new("b", vec![2]).unwrap()];
        assert_eq!(ZoneSystem::new(r, z, ZoneKind::Source).unwrap_err(), GridError::Uncovered(3));
        let z = vec![Zone::new("a", vec![0, 1, 2, 9]).unwrap()];
        assert!(matches!(ZoneSystem::new(r, z, ZoneKind::Source), Err(GridError::CellOutOfBounds { cell: 9, .. })));
        assert_eq!(Zone::new("e", vec![]).unwrap_err(), GridError::EmptyZone("e".into()));
        assert_eq!(GridRegion::new(0, 3, 1.0f64).unwrap_err(), GridError::InvalidRegion);
        assert_eq!(GridRegion::new(2, 3, 0.0f64).unwrap_err(), GridError::InvalidRegion);
    }

    #[test]
    fn self_intersection_is_diagonal() {
        let r = region(3, 3);
        let labels = ["a", "a", "b", "a", "c", "b", "c", "c", "b"];
        let s = ZoneSystem::from_labels(r, &labels, ZoneKind::Source).unwrap();
        let t = ZoneSystem::from_labels(r, &labels, ZoneKind::Target).unwrap();
        let table = intersect(&s, &t, &[]).unwrap();
        assert_eq!(table.entries.len(), 3);
        for e in &table.entries {
            assert_eq!(e.source, e.target);
            assert_eq!(e.area, table.source_areas[e.source]);
        }
    }

    #[test]
    fn whole_region_against_refinement() {
        let r = region(4, 4);
        let s = ZoneSystem::whole(r, "omega", ZoneKind::Source);
        let labels: Vec<String> = (0..16).map(|c| format!("t{}", c % 7)).collect();
        let t = ZoneSystem::from_labels(r, &labels, ZoneKind::Target).unwrap();
        let x: Vec<f64> = (0..16).map(|c| c as f64).collect();
        let table = intersect(&s, &t, &[&x]).unwrap();
        assert_eq!(table.entries.len(), 7);
        assert_eq!(table.entries.iter().map(|e| e.area).sum::<f64>(), 16.0);
        assert_eq!(table.source_aux[0][0], 120.0);
    }

    #[test]
    fn region_mismatch() {
        let s = ZoneSystem::whole(region(2, 2), "a", ZoneKind::Source);
        let t = ZoneSystem::whole(region(2, 3), "a", ZoneKind::Target);
        assert_eq!(intersect(&s, &t, &[]).unwrap_err(), GridError::RegionMismatch);
    }

    #[test]
    fn nesting() {
        let r = region(2, 2);
        let s = ZoneSystem::from_labels(r, &["a", "a", "b", "b"], ZoneKind::Source).unwrap();
        let fine = ZoneSystem::cells(r, ZoneKind::Target);
        assert!(nesting_check(&s, &fine).nested);
        let cross = ZoneSystem::from_labels(r, &["x", "y", "x", "y"], ZoneKind::Target).unwrap();
        let rep = nesting_check(&s, &cross);
        assert!(!rep.nested);
        assert_eq!(rep.violations, ["x", "y"]);
    }

    #[test]
    fn fixture_r1_geometry() {
        // |S| = 4, |T1| = 1, |T2| = 3, x_T = (30, 10).
        let r = region(1, 4);
        let source = Zone::new("s", vec![0, 1, 2, 3]).unwrap();
        let t1 = Zone::new("t1", vec![0]).unwrap();
        let t2 = Zone::new("t2", vec![1, 2, 3]).unwrap();
        let x = [30.0, 4.0, 3.0, 3.0];
        let g = geometry_stats(&r, &source, &[&t1, &t2], &x).unwrap();
        assert!((g.d - 0.5).abs() < 1e-15);
        assert!((g.b - 0.375).abs() < 1e-15);
        assert!((g.c - 0.375).abs() < 1e-15);
        assert!((g.cross() - (2.0 - g.b - g.c - g.d) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn geometry_trivial_cases() {
        let g = GeometryStats::from_parts(&[4.0f64], &[7.0]).unwrap();
        assert_eq!((g.d, g.b, g.c), (0.0, 0.0, 0.0));
        let g = GeometryStats::from_parts(&[1.0f64; 5], &[3.0; 5]).unwrap();
        assert!(g.d.abs() < 1e-15);
        assert!((g.b - 0.8).abs() < 1e-15 && (g.c - 0.8).abs() < 1e-15);
        assert_eq!(GeometryStats::from_parts(&[1.0f64, 1.0], &[0.0, 0.0]).unwrap_err(), GridError::ZeroAuxiliary);
    }

    #[test]
    fn geometry_rejects_non_partition() {
        let r = region(1, 4);
        let source = Zone::new("s", vec![0, 1, 2, 3]).unwrap();
        let t1 = Zone::new("t1", vec![0, 1]).unwrap();
        let x = [1.0; 4];
        assert!(matches!(geometry_stats(&r, &source, &[&t1], &x), Err(GridError::NotAPartition(_))));
    }
}
