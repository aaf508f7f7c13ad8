use std::path::{Path, PathBuf};
use std::process::ExitCode;

use areal_core::experiment::{
    self, analytic_rows, diagnostics, evaluate_scenario, load_config, out_file, write_aux_svgs, write_csv, write_svg,
    ExperimentConfig, ExperimentError, Setup,
};
use areal_core::field::{replicate_rng, simulate_counts_with, IntensityField};
use areal_core::interp::{predict_composite, predict_daw, predict_dax, predict_reg, predict_scr, PredictionSet};
use areal_core::io::{self, ErrorRow};
use areal_core::mc::fit_sources;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "areal", version, about = "Areal interpolation of Poisson counts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON scenario config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config replicate count.
    #[arg(long)]
    replicates: Option<usize>,
    /// Also write SVG heatmaps.
    #[arg(long)]
    svg: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Draw per-cell counts for every scenario.
    Simulate(Common),
    /// Fit the regression on source counts.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Observed per-cell counts (`row,col,value`); simulated from the seed when absent.
        #[arg(long)]
        counts: Option<PathBuf>,
    },
    /// Predict target counts with every method.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        counts: Option<PathBuf>,
    },
    /// Analytic and Monte-Carlo error reports.
    Evaluate(Common),
    /// Run one of the packaged experiments.
    Experiment {
        #[arg(value_enum)]
        which: Which,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Toy1,
    Toy2,
    Robustness,
    Asymptotics,
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), ExperimentError> {
    let (mut cfg, base) = load_config(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(r) = common.replicates {
        cfg.replicates = r;
    }
    cfg.validate()?;
    Ok((cfg, base))
}

/// One realization of per-cell counts for a scenario.
fn cell_counts(
    cfg: &ExperimentConfig,
    base: &Path,
    setup: &Setup,
    scenario: usize,
    rep: u64,
    counts: Option<&Path>,
) -> Result<Vec<u64>, ExperimentError> {
    if let Some(p) = counts {
        let v: Vec<f64> = io::read_field(io::open(p)?, &setup.region)?;
        return v
            .iter()
            .map(|&x| {
                if x >= 0.0 && x.fract() == 0.0 {
                    Ok(x as u64)
                } else {
                    Err(ExperimentError::Config(format!("{}: counts must be nonnegative integers", p.display())))
                }
            })
            .collect();
    }
    let lambda = setup.cell_lambda(&cfg.scenarios[scenario], base)?;
    let field = IntensityField::new(setup.region, lambda)?;
    let mut rng = replicate_rng(cfg.seed, rep);
    Ok(simulate_counts_with(&field, 1.0, &mut rng)?.counts().to_vec())
}

fn simulate(common: &Common) -> Result<(), ExperimentError> {
    let (cfg, base) = load(common)?;
    let setup = Setup::load(&cfg, &base)?;
    for (name, cells) in setup.aux_names.iter().zip(&setup.aux_cells) {
        io::write_field(out_file(&common.out, &format!("x_{name}.csv"))?, &setup.region, cells)?;
    }
    for (i, s) in cfg.scenarios.iter().enumerate() {
        for rep in 0..cfg.replicates {
            let counts = cell_counts(&cfg, &base, &setup, i, rep as u64, None)?;
            let values: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
            io::write_field(out_file(&common.out, &format!("y_{}_{rep}.csv", s.label))?, &setup.region, &values)?;
            if common.svg && rep == 0 {
                write_svg(&common.out, &format!("y_{}.svg", s.label), &setup.region, &values, &s.label)?;
            }
        }
    }
    if common.svg {
        write_aux_svgs(&common.out, &setup)?;
    }
    Ok(())
}

fn fit_or_predict(common: &Common, counts: Option<&Path>, predict: bool) -> Result<(), ExperimentError> {
    let (cfg, base) = load(common)?;
    let setup = Setup::load(&cfg, &base)?;
    for (i, s) in cfg.scenarios.iter().enumerate() {
        let cells = cell_counts(&cfg, &base, &setup, i, 0, counts)?;
        let aux = setup.aux_indices(&s.aux)?;
        for sys in 0..setup.source_systems.len() {
            let sys_name = &setup.source_systems[sys].0;
            let table = setup.table(sys)?;
            let ys = setup.source_systems[sys].1.count_sums(&cells);
            let fit = fit_sources(&table, &ys, &aux, 1.0)?;
            let stem = format!("{}_{sys_name}", s.label);
            if !predict {
                io::write_fit_json(out_file(&common.out, &format!("fit_{stem}.json"))?, &fit)?;
                continue;
            }
            let mut sets: Vec<PredictionSet<f64>> = vec![predict_daw(&ys, &table)?];
            if let Some(&j) = aux.first() {
                sets.push(predict_dax(&ys, &table, j)?);
            }
            if s.piecewise.is_none() {
                sets.push(predict_composite(&setup.params(s), &ys, &table, &aux)?);
            }
            sets.push(predict_reg(&fit, &table, &aux)?);
            sets.push(predict_scr(&fit, &ys, &table, &aux)?);
            let refs: Vec<&PredictionSet<f64>> = sets.iter().collect();
            io::write_predictions(out_file(&common.out, &format!("predictions_{stem}.csv"))?, &refs)?;
            if common.svg && cfg.targets.is_none() {
                for set in &sets {
                    let name = format!("pred_{stem}_{}.svg", set.method);
                    write_svg(&common.out, &name, &setup.region, &set.targets, &format!("{stem} {}", set.method))?;
                }
            }
        }
    }
    Ok(())
}

fn evaluate(common: &Common) -> Result<(), ExperimentError> {
    let (cfg, base) = load(common)?;
    let setup = Setup::load(&cfg, &base)?;
    let mut diag = Vec::new();
    for s in &cfg.scenarios {
        for sys in 0..setup.source_systems.len() {
            let sys_name = setup.source_systems[sys].0.clone();
            let (table, lambda, report) = evaluate_scenario(&cfg, &base, &setup, sys, s, setup.predictors(&cfg, s)?)?;
            let mut rows: Vec<ErrorRow> = report.estimates.iter().map(ErrorRow::from).collect();
            rows.extend(analytic_rows(&table, &lambda, setup.aux_indices(&s.aux)?.first().copied())?);
            io::write_error_report(out_file(&common.out, &format!("errors_{}_{sys_name}.csv", s.label))?, &rows)?;
            diag.extend(diagnostics(&s.label, &sys_name, &report));
        }
    }
    write_csv(&common.out, "diagnostics.csv", &diag)
}

fn run_experiment(which: Which, common: &Common) -> Result<(), ExperimentError> {
    let (cfg, base) = load(common)?;
    let out = &common.out;
    match which {
        Which::Toy1 => experiment::run_toy1(&cfg, &base, out, common.svg).map(|_| ()),
        Which::Toy2 => experiment::run_toy2(&cfg, &base, out, common.svg).map(|_| ()),
        Which::Robustness => experiment::run_robustness(&cfg, &base, out, common.svg).map(|_| ()),
        Which::Asymptotics => experiment::run_asymptotics(&cfg, &base, out).map(|_| ()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::Fit { common, counts } => fit_or_predict(common, counts.as_deref(), false),
        Command::Predict { common, counts } => fit_or_predict(common, counts.as_deref(), true),
        Command::Evaluate(c) => evaluate(c),
        Command::Experiment { which, common } => run_experiment(*which, common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
