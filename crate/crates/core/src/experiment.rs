//! Scenario configuration and the experiment drivers behind the CLI.
//!
//! Relative paths in a config resolve against the config file's directory.
//! Auxiliary fields drawn from an intensity use the ChaCha stream
//! `u64::MAX − i` of the base seed, so they never collide with the
//! replicate streams `0, 1, …` used for `Y`.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aim::{decompose_effects, AimError, AimParams};
use crate::analytic::{bias_variance_daw_dax, error_difference, table_errors, AnalyticError, NestedPair, Scope};
use crate::field::{gini_of, replicate_rng, simulate_counts_with, FieldError, IntensityField};
use crate::grid::{intersect, GridError, GridRegion, IntersectionTable, ZoneKind, ZoneSystem};
use crate::interp::{InterpError, Method};
use crate::io::{self, ErrorRow, IoError};
use crate::mc::{draw_entries, fit_sources, mc_evaluate, source_counts, McError, McReport, McScenario, PredictorSpec};
use crate::regression::{standardized_estimator, Design, RegressionError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Aim(#[from] AimError),
    #[error(transparent)]
    Mc(#[from] McError),
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error(transparent)]
    Interp(#[from] InterpError),
}

impl ExperimentError {
    /// Problems with the user's input rather than with the numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, ExperimentError::Config(_) | ExperimentError::Io(_) | ExperimentError::Grid(_))
    }
}

fn config_err(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Config(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n_rows: usize,
    pub n_cols: usize,
    #[serde(default = "one")]
    pub cell_area: f64,
}

fn one() -> f64 {
    1.0
}

/// An auxiliary variable: per-cell values from `file` or `constant`, used
/// as they are or, with `draw`, as the intensity of one Poisson draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuxSpec {
    pub name: String,
    #[serde(default)]
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub constant: Option<f64>,
    #[serde(default)]
    pub draw: bool,
    /// Multiplies the values before any draw.
    #[serde(default = "one")]
    pub scale: f64,
}

/// Homogeneous intensity per control zone, added to the linear model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewiseSpec {
    pub controls: PathBuf,
    pub intensities: Vec<f64>,
}

/// Target variable `Y ~ Poisson(α|A| + Σ β_j x_{A,j} [+ piecewise])`; `aux`
/// names the auxiliaries matching `betas`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub label: String,
    pub alpha: f64,
    #[serde(default)]
    pub betas: Vec<f64>,
    #[serde(default)]
    pub aux: Vec<String>,
    #[serde(default)]
    pub piecewise: Option<PiecewiseSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorEntry {
    pub label: String,
    pub method: Method,
    #[serde(default)]
    pub aux: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub grid: GridSpec,
    /// One label file per source system.
    pub sources: Vec<PathBuf>,
    /// Target label file; the grid cells when absent.
    #[serde(default)]
    pub targets: Option<PathBuf>,
    #[serde(default)]
    pub auxiliaries: Vec<AuxSpec>,
    pub scenarios: Vec<ScenarioSpec>,
    /// Overrides the default predictor set (DAW, DAX, REG, SCR and COMPOSITE on each scenario's auxiliaries).
    #[serde(default)]
    pub predictors: Vec<PredictorEntry>,
    pub replicates: usize,
    pub seed: u64,
    /// Intensity growth rates for the asymptotics experiment.
    #[serde(default)]
    pub scales: Vec<f64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_err(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.replicates == 0 {
            return Err(config_err("replicates must be at least 1"));
        }
        if self.sources.is_empty() {
            return Err(config_err("at least one source system is required"));
        }
        if self.scenarios.is_empty() {
            return Err(config_err("at least one scenario is required"));
        }
        let names: Vec<&str> = self.auxiliaries.iter().map(|a| a.name.as_str()).collect();
        for (i, a) in self.auxiliaries.iter().enumerate() {
            if names[..i].contains(&a.name.as_str()) {
                return Err(config_err(format!("auxiliary `{}` declared twice", a.name)));
            }
            if a.file.is_some() == a.constant.is_some() {
                return Err(config_err(format!("auxiliary `{}` needs exactly one of file, constant", a.name)));
            }
            if !(a.scale > 0.0) || !a.scale.is_finite() {
                return Err(config_err(format!("auxiliary `{}` has a nonpositive scale", a.name)));
            }
        }
        for s in &self.scenarios {
            if s.betas.len() != s.aux.len() {
                return Err(config_err(format!("scenario `{}`: {} betas for {} auxiliaries", s.label, s.betas.len(), s.aux.len())));
            }
            if let Some(n) = s.aux.iter().find(|n| !names.contains(&n.as_str())) {
                return Err(config_err(format!("scenario `{}` uses unknown auxiliary `{n}`", s.label)));
            }
            if s.alpha < 0.0 || s.betas.iter().any(|&b| b < 0.0) {
                return Err(config_err(format!("scenario `{}` has a negative coefficient", s.label)));
            }
        }
        for p in &self.predictors {
            if let Some(n) = p.aux.iter().find(|n| !names.contains(&n.as_str())) {
                return Err(config_err(format!("predictor `{}` uses unknown auxiliary `{n}`", p.label)));
            }
            if p.method == Method::Dax && p.aux.len() != 1 {
                return Err(config_err(format!("predictor `{}`: DAX takes exactly one auxiliary", p.label)));
            }
        }
        if self.scales.iter().any(|&k| !(k > 0.0)) {
            return Err(config_err("scales must be positive"));
        }
        Ok(())
    }
}

/// Reads and validates a config; returns it with the directory relative paths resolve against.
pub fn load_config(path: &Path) -> Result<(ExperimentConfig, PathBuf), ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let cfg = ExperimentConfig::from_json(&text)?;
    Ok((cfg, path.parent().map(Path::to_path_buf).unwrap_or_default()))
}

/// Everything a config resolves to.
#[derive(Debug, Clone)]
pub struct Setup {
    pub region: GridRegion<f64>,
    /// `(name, system)`; the name is the label-file stem.
    pub source_systems: Vec<(String, ZoneSystem<f64>)>,
    pub targets: ZoneSystem<f64>,
    pub aux_names: Vec<String>,
    /// Realized per-cell values of each auxiliary.
    pub aux_cells: Vec<Vec<f64>>,
}

impl Setup {
    pub fn load(cfg: &ExperimentConfig, base: &Path) -> Result<Self, ExperimentError> {
        let region = GridRegion::new(cfg.grid.n_rows, cfg.grid.n_cols, cfg.grid.cell_area)?;
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let source_systems = cfg
            .sources
            .iter()
            .map(|p| {
                let path = resolve(p);
                let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                Ok((name, io::read_zone_labels(io::open(&path)?, region, ZoneKind::Source)?))
            })
            .collect::<Result<Vec<_>, ExperimentError>>()?;
        let targets = match &cfg.targets {
            Some(p) => io::read_zone_labels(io::open(&resolve(p))?, region, ZoneKind::Target)?,
            None => ZoneSystem::cells(region, ZoneKind::Target),
        };
        let mut aux_cells = Vec::new();
        for (i, a) in cfg.auxiliaries.iter().enumerate() {
            let base_values = match (&a.file, a.constant) {
                (Some(p), _) => io::read_field(io::open(&resolve(p))?, &region)?,
                (None, Some(c)) => vec![c; region.n_cells()],
                (None, None) => unreachable!("validated"),
            };
            let values: Vec<f64> = base_values.iter().map(|v| v * a.scale).collect();
            if a.draw {
                let field = IntensityField::new(region, values)?;
                let mut rng = replicate_rng(cfg.seed, u64::MAX - i as u64);
                aux_cells.push(simulate_counts_with(&field, 1.0, &mut rng)?.values());
            } else {
                if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return Err(config_err(format!("auxiliary `{}` has negative or non-finite values", a.name)));
                }
                aux_cells.push(values);
            }
        }
        Ok(Self {
            region,
            source_systems,
            targets,
            aux_names: cfg.auxiliaries.iter().map(|a| a.name.clone()).collect(),
            aux_cells,
        })
    }

    fn aux_index(&self, name: &str) -> Result<usize, ExperimentError> {
        self.aux_names.iter().position(|n| n == name).ok_or_else(|| config_err(format!("unknown auxiliary `{name}`")))
    }

    pub fn aux_indices(&self, names: &[String]) -> Result<Vec<usize>, ExperimentError> {
        names.iter().map(|n| self.aux_index(n)).collect()
    }

    /// Intersection table of source system `sys` with the targets, carrying every auxiliary.
    pub fn table(&self, sys: usize) -> Result<IntersectionTable<f64>, ExperimentError> {
        let aux: Vec<&[f64]> = self.aux_cells.iter().map(Vec::as_slice).collect();
        Ok(intersect(&self.source_systems[sys].1, &self.targets, &aux)?)
    }

    pub fn params(&self, s: &ScenarioSpec) -> AimParams<f64> {
        AimParams { alpha: s.alpha, betas: s.betas.clone() }
    }

    /// Per-cell expectation of `Y` under a scenario.
    pub fn cell_lambda(&self, s: &ScenarioSpec, base: &Path) -> Result<Vec<f64>, ExperimentError> {
        let idx = self.aux_indices(&s.aux)?;
        let mut lambda: Vec<f64> = (0..self.region.n_cells())
            .map(|c| s.alpha * self.region.cell_area + idx.iter().zip(&s.betas).map(|(&j, &b)| b * self.aux_cells[j][c]).sum::<f64>())
            .collect();
        if let Some(pw) = &s.piecewise {
            let path = if pw.controls.is_absolute() { pw.controls.clone() } else { base.join(&pw.controls) };
            let controls = io::read_zone_labels(io::open(&path)?, self.region, ZoneKind::Control)?;
            if pw.intensities.len() != controls.len() {
                return Err(config_err(format!("scenario `{}`: {} intensities for {} control zones", s.label, pw.intensities.len(), controls.len())));
            }
            for (c, l) in lambda.iter_mut().enumerate() {
                *l += pw.intensities[controls.zone_of(c)] * self.region.cell_area;
            }
        }
        if lambda.iter().all(|&l| l == 0.0) {
            return Err(config_err(format!("scenario `{}` has zero expectation everywhere", s.label)));
        }
        Ok(lambda)
    }

    /// Predictor specs for a scenario: the configured list, or the default set.
    pub fn predictors(&self, cfg: &ExperimentConfig, s: &ScenarioSpec) -> Result<Vec<PredictorSpec>, ExperimentError> {
        if !cfg.predictors.is_empty() {
            return cfg
                .predictors
                .iter()
                .map(|p| Ok(PredictorSpec::new(&p.label, p.method, self.aux_indices(&p.aux)?)))
                .collect();
        }
        let aux = self.aux_indices(&s.aux)?;
        let mut out = vec![PredictorSpec::plain(Method::Daw, vec![])];
        if let Some(&first) = aux.first() {
            out.push(PredictorSpec::plain(Method::Dax, vec![first]));
        }
        out.push(PredictorSpec::plain(Method::Reg, aux.clone()));
        out.push(PredictorSpec::plain(Method::Scr, aux.clone()));
        out.push(PredictorSpec::plain(Method::Composite, aux));
        Ok(out)
    }
}

/// Monte-Carlo evaluation of one scenario on one source system.
pub fn evaluate_scenario(
    cfg: &ExperimentConfig,
    base: &Path,
    setup: &Setup,
    sys: usize,
    scenario: &ScenarioSpec,
    predictors: Vec<PredictorSpec>,
) -> Result<(IntersectionTable<f64>, Vec<f64>, McReport), ExperimentError> {
    let table = setup.table(sys)?;
    let lambda = table.entry_sums(&setup.cell_lambda(scenario, base)?);
    let sc = McScenario {
        table: &table,
        lambda: lambda.clone(),
        specs: predictors,
        k: 1.0,
        replicates: cfg.replicates,
        base_seed: cfg.seed,
    };
    let report = mc_evaluate(&sc)?;
    Ok((table, lambda, report))
}

pub fn out_file(dir: &Path, name: &str) -> Result<std::fs::File, ExperimentError> {
    std::fs::create_dir_all(dir).map_err(|source| IoError::File { path: dir.display().to_string(), source })?;
    Ok(io::create(&dir.join(name))?)
}

/// Writes rows to `dir/name`.
pub fn write_csv<S: Serialize>(dir: &Path, name: &str, rows: &[S]) -> Result<(), ExperimentError> {
    io::write_rows(out_file(dir, name)?, rows)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticRow {
    pub scenario: String,
    pub sources: String,
    pub predictor: String,
    pub replicates: usize,
    pub failures: usize,
    pub negative_replicates: usize,
    pub boundary_fits: usize,
}

pub fn diagnostics(scenario: &str, sources: &str, report: &McReport) -> Vec<DiagnosticRow> {
    report
        .diagnostics
        .iter()
        .map(|d| DiagnosticRow {
            scenario: scenario.into(),
            sources: sources.into(),
            predictor: d.label.clone(),
            replicates: report.replicates,
            failures: d.failures,
            negative_replicates: d.negative_replicates,
            boundary_fits: d.boundary_fits,
        })
        .collect()
}

fn with_context(rows: Vec<ErrorRow>, scenario: &str, sources: &str) -> Vec<ContextErrorRow> {
    rows.into_iter()
        .map(|r| ContextErrorRow {
            scenario: scenario.into(),
            sources: sources.into(),
            scope: r.scope,
            scope_id: r.scope_id,
            method: r.method,
            bias: r.bias,
            variance: r.variance,
            mse: r.mse,
            relative: r.relative,
            std_error: r.std_error,
            replicates: r.replicates,
        })
        .collect()
}

/// An error-report line tagged with its scenario and source system.
#[derive(Debug, Serialize)]
pub struct ContextErrorRow {
    pub scenario: String,
    pub sources: String,
    pub scope: String,
    pub scope_id: String,
    pub method: String,
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
    pub relative: f64,
    pub std_error: Option<f64>,
    pub replicates: Option<usize>,
}

fn mc_rows(report: &McReport) -> Vec<ErrorRow> {
    report.estimates.iter().map(ErrorRow::from).collect()
}

/// Analytic rows for the share-based methods.
pub fn analytic_rows(table: &IntersectionTable<f64>, lambda: &[f64], dax_aux: Option<usize>) -> Result<Vec<ErrorRow>, ExperimentError> {
    let mut rows = Vec::new();
    let mut methods = vec![Method::Daw, Method::Composite];
    if dax_aux.is_some() {
        methods.insert(1, Method::Dax);
    }
    for m in methods {
        rows.extend(table_errors(m, table, lambda, dax_aux)?.iter().map(|e| {
            let mut r = ErrorRow::from(e);
            r.method = format!("{}_ANALYTIC", r.method);
            r
        }));
    }
    Ok(rows)
}

fn region_mse(report: &McReport, label: &str) -> Option<(f64, f64)> {
    report.find(label, Scope::Region, "region").map(|e| (e.mse_hat, e.std_error))
}

/// Mean over targets of `√mse_T / E(Y_T)`, in percent.
fn mean_relative(report: &McReport, label: &str) -> f64 {
    let t = report.scope(label, Scope::Target);
    100.0 * t.iter().map(|e| e.relative_hat).sum::<f64>() / t.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1Row {
    pub scenario: String,
    pub method: String,
    /// `√(Σ_t E(Ŷ_t − Y_t)²)`
    pub sqrt_error: f64,
    pub mse: f64,
    pub mse_std_error: f64,
    pub analytic_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table2Row {
    pub scenario: String,
    pub source_id: String,
    pub expected: f64,
    pub i_area: f64,
    pub i_aux: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table3Row {
    pub scenario: String,
    pub source_id: String,
    pub target_id: String,
    pub source_expected: f64,
    pub delta: f64,
    pub abs_p_minus_q: f64,
    pub er_daw: f64,
    pub er_dax: f64,
    /// `Er^DAW − Er^DAX`
    pub er_difference: f64,
    /// `√(Er^DAW / Er^DAX)`
    pub re_ratio: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Toy1Output {
    pub table1: Vec<Table1Row>,
    pub table2: Vec<Table2Row>,
    pub table3: Vec<Table3Row>,
}

/// Small non-nested study: conditional on one auxiliary field, every
/// scenario is replicated and the overall regional error reported.
pub fn run_toy1(cfg: &ExperimentConfig, base: &Path, out: &Path, svg: bool) -> Result<Toy1Output, ExperimentError> {
    let setup = Setup::load(cfg, base)?;
    let mut result = Toy1Output::default();
    let mut errors = Vec::new();
    let mut diag = Vec::new();
    let sys_name = setup.source_systems[0].0.clone();
    for s in &cfg.scenarios {
        let (table, lambda, report) = evaluate_scenario(cfg, base, &setup, 0, s, setup.predictors(cfg, s)?)?;
        let aux = setup.aux_indices(&s.aux)?;
        let analytic = analytic_rows(&table, &lambda, aux.first().copied())?;
        for spec in setup.predictors(cfg, s)? {
            let (mse, se) = region_mse(&report, &spec.label).unwrap_or((f64::NAN, f64::NAN));
            let key = format!("{}_ANALYTIC", spec.method);
            let analytic_mse = match spec.method {
                Method::Daw | Method::Dax | Method::Composite => {
                    analytic.iter().find(|r| r.method == key && r.scope == "region").map(|r| r.mse)
                }
                _ => None,
            };
            result.table1.push(Table1Row {
                scenario: s.label.clone(),
                method: spec.label.clone(),
                sqrt_error: mse.sqrt(),
                mse,
                mse_std_error: se,
                analytic_mse,
            });
        }
        if s.betas.len() == 1 && s.piecewise.is_none() {
            let params = setup.params(s);
            let j = aux[0];
            for src in 0..table.n_sources() {
                let (area, xs) = (table.source_areas[src], table.source_aux[src][j]);
                let dec = decompose_effects(&params, &table.source_ids[src], area, xs)?;
                result.table2.push(Table2Row {
                    scenario: s.label.clone(),
                    source_id: dec.zone_id.clone(),
                    expected: dec.expected,
                    i_area: dec.i_area,
                    i_aux: dec.i_aux,
                    delta: dec.delta,
                });
                for e in table.entries_of_source(src) {
                    let pair = NestedPair { source_area: area, source_x: xs, target_area: e.area, target_x: e.aux[j] };
                    let (daw, dax) = bias_variance_daw_dax(&params, &pair, &table.target_ids[e.target])?;
                    result.table3.push(Table3Row {
                        scenario: s.label.clone(),
                        source_id: table.source_ids[src].clone(),
                        target_id: table.target_ids[e.target].clone(),
                        source_expected: dec.expected,
                        delta: dec.delta,
                        abs_p_minus_q: (pair.p() - pair.q()).abs(),
                        er_daw: daw.mse,
                        er_dax: dax.mse,
                        er_difference: error_difference(&params, &pair)?,
                        re_ratio: (daw.mse / dax.mse).sqrt(),
                    });
                }
            }
        }
        let mut rows = mc_rows(&report);
        rows.extend(analytic);
        errors.extend(with_context(rows, &s.label, &sys_name));
        diag.extend(diagnostics(&s.label, &sys_name, &report));
        if svg {
            write_svg(out, &format!("y_{}_expected.svg", s.label), &setup.region, &setup.cell_lambda(s, base)?, &s.label)?;
        }
    }
    if svg {
        write_aux_svgs(out, &setup)?;
    }
    write_csv(out, "table1.csv", &result.table1)?;
    write_csv(out, "table2.csv", &result.table2)?;
    write_csv(out, "table3.csv", &result.table3)?;
    write_csv(out, "errors.csv", &errors)?;
    write_csv(out, "diagnostics.csv", &diag)?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Toy2Row {
    pub scenario: String,
    pub sources: String,
    pub n_sources: usize,
    pub expected: f64,
    pub sqrt_expected: f64,
    /// `(label, value)` per predictor, flattened into columns when written.
    #[serde(skip)]
    pub methods: Vec<(String, f64)>,
    /// Analytic composite benchmark.
    pub composite: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImbalanceRow {
    pub scenario: String,
    pub sources: String,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Toy2Output {
    /// Square roots of summed target errors.
    pub table4: Vec<Toy2Row>,
    /// Mean relative target errors, percent.
    pub table5: Vec<Toy2Row>,
    pub imbalance: Vec<ImbalanceRow>,
    pub reports: Vec<(String, String, McReport)>,
}

fn write_wide(dir: &Path, name: &str, rows: &[Toy2Row], value_name: &str) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out_file(dir, name)?);
    let Some(first) = rows.first() else { return Ok(()) };
    let mut header = vec!["scenario".to_string(), "sources".into(), "n_sources".into(), value_name.into()];
    header.extend(first.methods.iter().map(|(l, _)| l.clone()));
    header.push("composite".into());
    w.write_record(&header).map_err(IoError::from)?;
    for r in rows {
        let value = if value_name == "expected" { r.expected } else { r.sqrt_expected };
        let mut rec = vec![r.scenario.clone(), r.sources.clone(), r.n_sources.to_string(), value.to_string()];
        rec.extend(r.methods.iter().map(|(_, v)| v.to_string()));
        rec.push(r.composite.to_string());
        w.write_record(&rec).map_err(IoError::from)?;
    }
    w.flush().map_err(IoError::from)?;
    Ok(())
}

/// Every scenario on every source system, predicting at target level.
pub fn run_toy2(cfg: &ExperimentConfig, base: &Path, out: &Path, svg: bool) -> Result<Toy2Output, ExperimentError> {
    let setup = Setup::load(cfg, base)?;
    let mut result = Toy2Output::default();
    let mut errors = Vec::new();
    let mut diag = Vec::new();
    for s in &cfg.scenarios {
        let predictors: Vec<PredictorSpec> =
            setup.predictors(cfg, s)?.into_iter().filter(|p| p.method != Method::Composite).collect();
        let params = setup.params(s);
        let aux = setup.aux_indices(&s.aux)?;
        for sys in 0..setup.source_systems.len() {
            let sys_name = setup.source_systems[sys].0.clone();
            let (table, lambda, report) = evaluate_scenario(cfg, base, &setup, sys, s, predictors.clone())?;
            let comp = table_errors(Method::Composite, &table, &lambda, None)?;
            let expected: f64 = lambda.iter().sum();
            let comp_region = comp.iter().find(|e| e.scope == Scope::Region).map_or(f64::NAN, |e| e.mse);
            let comp_targets: Vec<f64> = comp.iter().filter(|e| e.scope == Scope::Target).map(|e| e.relative).collect();
            let base_row = Toy2Row {
                scenario: s.label.clone(),
                sources: sys_name.clone(),
                n_sources: table.n_sources(),
                expected,
                sqrt_expected: expected.sqrt(),
                methods: Vec::new(),
                composite: comp_region.sqrt(),
            };
            let mut r4 = base_row.clone();
            let mut r5 = base_row;
            r5.composite = 100.0 * comp_targets.iter().sum::<f64>() / comp_targets.len() as f64;
            for p in &predictors {
                r4.methods.push((p.label.clone(), region_mse(&report, &p.label).map_or(f64::NAN, |m| m.0.sqrt())));
                r5.methods.push((p.label.clone(), mean_relative(&report, &p.label)));
            }
            let deltas: Vec<f64> = (0..table.n_sources())
                .map(|src| {
                    let x: Vec<f64> = aux.iter().map(|&j| table.source_aux[src][j]).collect();
                    let areal = params.alpha * table.source_areas[src];
                    (areal - (params.mean(table.source_areas[src], &x) - areal)) / params.mean(table.source_areas[src], &x)
                })
                .collect();
            result.imbalance.push(ImbalanceRow {
                scenario: s.label.clone(),
                sources: sys_name.clone(),
                min: deltas.iter().copied().fold(f64::INFINITY, f64::min),
                mean: deltas.iter().sum::<f64>() / deltas.len() as f64,
                max: deltas.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            });
            result.table4.push(r4);
            result.table5.push(r5);
            let mut rows = mc_rows(&report);
            rows.extend(comp.iter().map(|e| {
                let mut r = ErrorRow::from(e);
                r.method = "COMPOSITE_ANALYTIC".into();
                r
            }));
            errors.extend(with_context(rows, &s.label, &sys_name));
            diag.extend(diagnostics(&s.label, &sys_name, &report));
            result.reports.push((s.label.clone(), sys_name, report));
        }
    }
    if svg {
        write_aux_svgs(out, &setup)?;
    }
    write_wide(out, "table4.csv", &result.table4, "sqrt_expected")?;
    write_wide(out, "table5.csv", &result.table5, "expected")?;
    write_csv(out, "toy2_imbalance.csv", &result.imbalance)?;
    write_csv(out, "errors.csv", &errors)?;
    write_csv(out, "diagnostics.csv", &diag)?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table6Row {
    pub predictor: String,
    /// Mean relative target error, percent.
    pub relative: f64,
    pub region_mse: f64,
    pub region_mse_std_error: f64,
    pub failures: usize,
}

/// First scenario on the first source system with the configured predictor list.
pub fn run_robustness(cfg: &ExperimentConfig, base: &Path, out: &Path, svg: bool) -> Result<Vec<Table6Row>, ExperimentError> {
    let setup = Setup::load(cfg, base)?;
    let s = &cfg.scenarios[0];
    let (_, _, report) = evaluate_scenario(cfg, base, &setup, 0, s, setup.predictors(cfg, s)?)?;
    let rows: Vec<Table6Row> = report
        .diagnostics
        .iter()
        .map(|d| {
            let (mse, se) = region_mse(&report, &d.label).unwrap_or((f64::NAN, f64::NAN));
            Table6Row {
                predictor: d.label.clone(),
                relative: mean_relative(&report, &d.label),
                region_mse: mse,
                region_mse_std_error: se,
                failures: d.failures,
            }
        })
        .collect();
    if svg {
        write_aux_svgs(out, &setup)?;
    }
    let sys_name = &setup.source_systems[0].0;
    write_csv(out, "table6.csv", &rows)?;
    write_csv(out, "errors.csv", &with_context(mc_rows(&report), &s.label, sys_name))?;
    write_csv(out, "diagnostics.csv", &diagnostics(&s.label, sys_name, &report))?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticsRow {
    pub k: f64,
    pub replicates: usize,
    pub failures: usize,
    pub median_gamma_error: f64,
    /// Mean and variance of each standardized-estimator component.
    #[serde(skip)]
    pub z_mean: Vec<f64>,
    #[serde(skip)]
    pub z_var: Vec<f64>,
    /// `Σ_t mse_t(REG) / E(Y_Ω)`
    pub reg_mse_over_expected: f64,
    /// `Σ_t mse_t(ScR) / Σ_t Er^C_t`
    pub scr_over_composite: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

/// Fits at each scale `k` with `Y ~ Poisson(k λ)` on the first source system.
pub fn run_asymptotics(cfg: &ExperimentConfig, base: &Path, out: &Path) -> Result<Vec<AsymptoticsRow>, ExperimentError> {
    if cfg.scales.is_empty() {
        return Err(config_err("asymptotics needs a list of scales"));
    }
    let setup = Setup::load(cfg, base)?;
    let s = &cfg.scenarios[0];
    let aux = setup.aux_indices(&s.aux)?;
    let gamma0 = setup.params(s).gamma();
    let table = setup.table(0)?;
    let lambda = table.entry_sums(&setup.cell_lambda(s, base)?);
    let mut rows = Vec::new();
    for &k in &cfg.scales {
        let scaled: Vec<f64> = lambda.iter().map(|l| l * k).collect();
        let fits: Vec<Option<(f64, Vec<f64>)>> = (0..cfg.replicates)
            .into_par_iter()
            .map(|rep| {
                let y = draw_entries(&scaled, cfg.seed, rep as u64);
                let ys = source_counts(&table, &y);
                let design = Design::from_sources(&table, &ys, &aux, k).ok()?;
                let f = fit_sources(&table, &ys, &aux, k).ok()?;
                let err = f.gamma_hat.iter().zip(&gamma0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                let z = standardized_estimator(&design, &f, &gamma0).ok()?;
                Some((err, z))
            })
            .collect();
        let ok: Vec<&(f64, Vec<f64>)> = fits.iter().flatten().collect();
        let m = gamma0.len();
        let n = ok.len() as f64;
        let z_mean: Vec<f64> = (0..m).map(|j| ok.iter().map(|(_, z)| z[j]).sum::<f64>() / n).collect();
        let z_var: Vec<f64> = (0..m)
            .map(|j| ok.iter().map(|(_, z)| (z[j] - z_mean[j]).powi(2)).sum::<f64>() / (n - 1.0))
            .collect();
        let sc = McScenario {
            table: &table,
            lambda: scaled.clone(),
            specs: vec![PredictorSpec::plain(Method::Reg, aux.clone()), PredictorSpec::plain(Method::Scr, aux.clone())],
            k,
            replicates: cfg.replicates,
            base_seed: cfg.seed,
        };
        let report = mc_evaluate(&sc)?;
        let comp = table_errors(Method::Composite, &table, &scaled, None)?;
        let comp_region = comp.iter().find(|e| e.scope == Scope::Region).map_or(f64::NAN, |e| e.mse);
        let expected: f64 = scaled.iter().sum();
        rows.push(AsymptoticsRow {
            k,
            replicates: cfg.replicates,
            failures: fits.len() - ok.len(),
            median_gamma_error: median(ok.iter().map(|(e, _)| *e).collect()),
            z_mean,
            z_var,
            reg_mse_over_expected: region_mse(&report, "REG").map_or(f64::NAN, |m| m.0) / expected,
            scr_over_composite: region_mse(&report, "SCR").map_or(f64::NAN, |m| m.0) / comp_region,
        });
    }
    let mut w = csv::Writer::from_writer(out_file(out, "diagnostics.csv")?);
    let m = gamma0.len();
    let mut header: Vec<String> = ["k", "replicates", "failures", "median_gamma_error"].map(String::from).to_vec();
    for j in 0..m {
        header.push(format!("z{j}_mean"));
        header.push(format!("z{j}_var"));
    }
    header.push("reg_mse_over_expected".into());
    header.push("scr_over_composite".into());
    w.write_record(&header).map_err(IoError::from)?;
    for r in &rows {
        let mut rec = vec![r.k.to_string(), r.replicates.to_string(), r.failures.to_string(), r.median_gamma_error.to_string()];
        for j in 0..m {
            rec.push(r.z_mean[j].to_string());
            rec.push(r.z_var[j].to_string());
        }
        rec.push(r.reg_mse_over_expected.to_string());
        rec.push(r.scr_over_composite.to_string());
        w.write_record(&rec).map_err(IoError::from)?;
    }
    w.flush().map_err(IoError::from)?;
    Ok(rows)
}

pub fn write_svg(dir: &Path, name: &str, region: &GridRegion<f64>, values: &[f64], title: &str) -> Result<(), ExperimentError> {
    let mut f = out_file(dir, name)?;
    io::write_svg_heatmap(&mut f, region, values, title)?;
    f.flush().map_err(IoError::from)?;
    Ok(())
}

pub fn write_aux_svgs(dir: &Path, setup: &Setup) -> Result<(), ExperimentError> {
    for (name, cells) in setup.aux_names.iter().zip(&setup.aux_cells) {
        write_svg(dir, &format!("x_{name}.svg"), &setup.region, cells, name)?;
    }
    Ok(())
}

/// Gini coefficient and total of each auxiliary (integer-valued fields only).
pub fn aux_summary(setup: &Setup) -> HashMap<String, (Option<f64>, f64)> {
    setup
        .aux_names
        .iter()
        .zip(&setup.aux_cells)
        .map(|(n, v)| {
            let ints: Option<Vec<u64>> = v.iter().map(|&x| (x.fract() == 0.0 && x >= 0.0).then_some(x as u64)).collect();
            (n.clone(), (ints.and_then(|i| gini_of(&i).ok()), v.iter().sum()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> String {
        r#"{"schema_version":1,"grid":{"n_rows":2,"n_cols":2},"sources":["s.csv"],
            "auxiliaries":[{"name":"X","constant":3.0}],
            "scenarios":[{"label":"Y","alpha":1.0,"betas":[1.0],"aux":["X"]}],
            "replicates":10,"seed":1}"#
            .to_string()
    }

    #[test]
    fn parses_minimal_config() {
        let cfg = ExperimentConfig::from_json(&minimal()).unwrap();
        assert_eq!(cfg.grid.cell_area, 1.0);
        assert!(cfg.targets.is_none());
    }

    #[test]
    fn rejects_bad_configs() {
        let unknown = minimal().replace("\"seed\":1", "\"seed\":1,\"sead\":2");
        assert!(matches!(ExperimentConfig::from_json(&unknown), Err(ExperimentError::Config(_))));
        let version = minimal().replace("\"schema_version\":1", "\"schema_version\":9");
        assert!(ExperimentConfig::from_json(&version).is_err());
        let reps = minimal().replace("\"replicates\":10", "\"replicates\":0");
        assert!(ExperimentConfig::from_json(&reps).is_err());
        let aux = minimal().replace("\"aux\":[\"X\"]", "\"aux\":[\"Z\"]");
        assert!(ExperimentConfig::from_json(&aux).is_err());
        let both = minimal().replace("\"constant\":3.0", "\"constant\":3.0,\"file\":\"x.csv\"");
        assert!(ExperimentConfig::from_json(&both).is_err());
        let noseed = minimal().replace(",\"seed\":1", "");
        assert!(ExperimentConfig::from_json(&noseed).is_err());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(vec![]).is_nan());
    }
}
