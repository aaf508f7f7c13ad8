#![allow(dead_code)]

use std::path::PathBuf;

use areal_core::aim::AimParams;
use areal_core::field::poisson_draw;
use areal_core::grid::{intersect, GridRegion, IntersectionTable, ZoneKind, ZoneSystem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

/// Random labels `prefix0..prefix{k-1}` over `n` cells, every label used.
pub fn random_labels<R: Rng>(rng: &mut R, n: usize, k: usize, prefix: &str) -> Vec<String> {
    let mut labels: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
    for i in (1..n).rev() {
        labels.swap(i, rng.random_range(0..=i));
    }
    labels.into_iter().map(|l| format!("{prefix}{l}")).collect()
}

/// Non-nested sources and targets on a small grid with one auxiliary.
pub struct Fixture {
    pub region: GridRegion<f64>,
    pub table: IntersectionTable<f64>,
    pub params: AimParams<f64>,
    pub cell_x: Vec<f64>,
    /// Expected count per intersection.
    pub lambda: Vec<f64>,
}

impl Fixture {
    pub fn source_lambda(&self) -> Vec<f64> {
        self.table.to_sources(&self.lambda)
    }

    pub fn draw_sources<R: Rng>(&self, rng: &mut R) -> Vec<u64> {
        self.source_lambda().iter().map(|&l| poisson_draw(l, rng)).collect()
    }
}

pub fn random_fixture<R: Rng>(rng: &mut R) -> Fixture {
    let (rows, cols) = (rng.random_range(2..=5), rng.random_range(2..=5));
    let n = rows * cols;
    let region = GridRegion::new(rows, cols, rng.random_range(0.5..2.0)).unwrap();
    let ns = rng.random_range(3..=n.min(5));
    let nt = rng.random_range(2..=n.min(6));
    let sources = ZoneSystem::from_labels(region, &random_labels(rng, n, ns, "S"), ZoneKind::Source).unwrap();
    let targets = ZoneSystem::from_labels(region, &random_labels(rng, n, nt, "T"), ZoneKind::Target).unwrap();
    let cell_x: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..20.0)).collect();
    let params = AimParams::single(rng.random_range(0.5..5.0), rng.random_range(0.0..2.0)).unwrap();
    let table = intersect(&sources, &targets, &[&cell_x]).unwrap();
    let lambda = table.entries.iter().map(|e| params.mean(e.area, &e.aux)).collect();
    Fixture { region, table, params, cell_x, lambda }
}

/// One source split into nested targets, described by target areas and auxiliary totals.
pub struct Nested {
    pub params: AimParams<f64>,
    pub areas: Vec<f64>,
    pub xs: Vec<f64>,
}

impl Nested {
    pub fn source_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    pub fn source_x(&self) -> f64 {
        self.xs.iter().sum()
    }
}

pub fn random_nested<R: Rng>(rng: &mut R) -> Nested {
    let n = rng.random_range(2..=6);
    Nested {
        params: AimParams::single(rng.random_range(0.01..5.0), rng.random_range(0.01..2.0)).unwrap(),
        areas: (0..n).map(|_| rng.random_range(0.5..5.0)).collect(),
        xs: (0..n).map(|_| rng.random_range(0.1..50.0)).collect(),
    }
}

/// Fixture R1: one source of 4 unit cells, targets of 1 and 3 cells, x = (30, 10), α = 2, β = 0.5.
pub fn r1() -> Fixture {
    let region = GridRegion::new(1, 4, 1.0).unwrap();
    let sources = ZoneSystem::whole(region, "S", ZoneKind::Source);
    let targets = ZoneSystem::from_labels(region, &["T1", "T2", "T2", "T2"], ZoneKind::Target).unwrap();
    let cell_x = vec![30.0, 10.0 / 3.0, 10.0 / 3.0, 10.0 / 3.0];
    let params = AimParams::single(2.0, 0.5).unwrap();
    let table = intersect(&sources, &targets, &[&cell_x]).unwrap();
    let lambda = table.entries.iter().map(|e| params.mean(e.area, &e.aux)).collect();
    Fixture { region, table, params, cell_x, lambda }
}
