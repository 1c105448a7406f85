//! Batch front end: simulate lattice datasets, fit the autoregressive
//! families, krige missing regions, run replicated comparisons, and emit the
//! truncation-correlation demo. Exit code 0 on success, 2 on configuration or
//! input problems, 3 on numerical failures.

mod ingest;
mod io;

use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use truncar::error::{Error, ErrorClass, Result};
use truncar::graph::{build_neighbor_sets, read_coords_csv, AdjacencyGraph};
use truncar::metrics::score_card;
use truncar::model::{CorrelationSpec, Family, PrecisionModel};
use truncar::predict::{
    kriging_predict, residual_map, NeumannConfig, NeumannMode, DEFAULT_NEUMANN_MAX_ORDER,
    DEFAULT_NEUMANN_TAIL_TOL,
};
use truncar::sampler::{sample_posterior, Dataset, PosteriorDraws, PriorConfig};
use truncar::simulate::{
    motivation_experiment, replicate_study, simulate_dataset, write_matrix_csv,
    write_replicate_csv, write_replicate_table_csv, FitSpec, SimulationDesign,
};

use ingest::FormulaSpec;
use io::RunLog;

#[derive(Parser)]
#[command(
    name = "truncar",
    version,
    about = "Spatial regression with truncated autoregressive priors on areal graphs"
)]
struct Cli {
    /// Cap the worker-thread count (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset CSV: id,y,<covariates...> with a blank response at unobserved
    /// regions, or any headered CSV when --formula is given.
    #[arg(long)]
    data: PathBuf,
    /// Adjacency edge list, one `i j` pair per line (graph families).
    #[arg(long)]
    adjacency: Option<PathBuf>,
    /// Formula JSON: response, log flag, covariates, optional categorical
    /// with reference level, intercept flag.
    #[arg(long)]
    formula: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    /// Model family.
    #[arg(long, value_parser = parse_family)]
    family: Family,
    /// Coordinates CSV id,x,y (nngp-tar only).
    #[arg(long)]
    coords: Option<PathBuf>,
    /// Conditioning-set size (nngp-tar only).
    #[arg(long, default_value_t = 5)]
    neighbors_m: usize,
    /// Exponential correlation decay rate (nngp-tar only).
    #[arg(long, default_value_t = 1.0)]
    phi: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset from a design JSON.
    Simulate {
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample the joint posterior of one family on a dataset.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Parameter grid: `start:step:end`, a comma list, or one value.
        /// Defaults: delta 0.1:0.1:10, rho -0.99:0.02:0.99.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long, default_value_t = 0.01)]
        prior_a: f64,
        #[arg(long, default_value_t = 0.01)]
        prior_b: f64,
        /// Number of posterior draws.
        #[arg(long, default_value_t = 1000)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Krige the unobserved regions from fit artifacts.
    Predict {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// posterior.csv written by fit.
        #[arg(long)]
        posterior: PathBuf,
        /// Generating response for scoring (id,y over all regions).
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Series tail tolerance.
        #[arg(long, default_value_t = DEFAULT_NEUMANN_TAIL_TOL)]
        neumann_tol: f64,
        /// auto | series | solve.
        #[arg(long, default_value = "auto", value_parser = parse_mode)]
        neumann_mode: NeumannMode,
        /// Also write the per-region predictive draws.
        #[arg(long, default_value_t = false)]
        export_samples: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replicated simulate/fit/predict study across families.
    Compare {
        #[arg(long)]
        design: PathBuf,
        /// Comma list, e.g. tar-c,car.
        #[arg(long)]
        families: String,
        #[arg(long, default_value_t = 10)]
        replicates: usize,
        #[arg(long, default_value_t = 500)]
        draws: usize,
        #[arg(long, default_value_t = 0.01)]
        prior_a: f64,
        #[arg(long, default_value_t = 0.01)]
        prior_b: f64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_NEUMANN_TAIL_TOL)]
        neumann_tol: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Correlation induced by truncation alone, on a square lattice.
    Motivate {
        /// Region count; must be a perfect square.
        #[arg(long, default_value_t = 100)]
        regions: usize,
        #[arg(long, default_value_t = 1000)]
        replicates: usize,
        /// Constraint bound on |x_i - neighbor average|^2.
        #[arg(long, default_value_t = 0.5)]
        k: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_family(s: &str) -> std::result::Result<Family, String> {
    match s {
        "tar-c" => Ok(Family::TarC),
        "tar-s" => Ok(Family::TarS),
        "car" => Ok(Family::Car),
        "sar" => Ok(Family::Sar),
        "nngp-tar" => Ok(Family::NngpTar),
        _ => Err(format!(
            "unknown family `{s}` (expected tar-c, tar-s, car, sar, nngp-tar)"
        )),
    }
}

fn parse_mode(s: &str) -> std::result::Result<NeumannMode, String> {
    match s {
        "auto" => Ok(NeumannMode::Auto),
        "series" => Ok(NeumannMode::Series),
        "solve" => Ok(NeumannMode::Solve),
        _ => Err(format!("unknown mode `{s}` (expected auto, series, solve)")),
    }
}

/// `start:step:end`, a comma list, or a single value.
fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let s = spec.trim();
    let bad = |msg: String| Error::InvalidInput(msg);
    let num = |t: &str| -> Result<f64> {
        t.trim()
            .parse::<f64>()
            .map_err(|_| bad(format!("grid component `{t}` is not a number")))
    };
    let values: Vec<f64> = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(bad(format!(
                "range grid must be start:step:end, got `{s}`"
            )));
        }
        let (start, step, end) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || end < start {
            return Err(bad(format!(
                "range grid needs a positive step and end >= start, got `{s}`"
            )));
        }
        let len = ((end - start) / step + 1e-9).floor() as usize + 1;
        (0..len).map(|k| start + k as f64 * step).collect()
    } else {
        s.split(',').map(num).collect::<Result<_>>()?
    };
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(bad(format!("grid `{s}` has no finite values")));
    }
    Ok(values)
}

fn default_grid(family: Family) -> Vec<f64> {
    match family {
        Family::TarC | Family::TarS | Family::NngpTar => {
            parse_grid("0.1:0.1:10").expect("static spec")
        }
        Family::Car | Family::Sar => parse_grid("-0.99:0.02:0.99").expect("static spec"),
    }
}

/// Model plus region count, from the family-appropriate inputs.
fn build_model(margs: &ModelArgs, dargs: &DataArgs, grid: Vec<f64>) -> Result<PrecisionModel> {
    if margs.family == Family::NngpTar {
        let coords_path = margs.coords.as_ref().ok_or_else(|| {
            Error::InvalidInput("nngp-tar needs --coords with point locations".into())
        })?;
        let coords = read_coords_csv(coords_path)?;
        let sets = build_neighbor_sets(&coords, margs.neighbors_m)?;
        let corr = CorrelationSpec::exponential(margs.phi)?;
        PrecisionModel::new_nngp(sets, coords, corr, grid)
    } else {
        let adj = dargs.adjacency.as_ref().ok_or_else(|| {
            Error::InvalidInput(format!(
                "family {} needs --adjacency with the edge list",
                margs.family.as_str()
            ))
        })?;
        let graph = AdjacencyGraph::from_edge_list_file(adj)?;
        for w in graph.warnings() {
            eprintln!("warning: {w}");
        }
        PrecisionModel::new(margs.family, Arc::new(graph), grid)
    }
}

fn load_data(dargs: &DataArgs, n_regions: usize) -> Result<Dataset> {
    let data = match &dargs.formula {
        Some(fp) => {
            let formula = FormulaSpec::from_json_file(fp)?;
            ingest::ingest_dataset(&dargs.data, &formula, n_regions)?
        }
        None => io::read_dataset_csv(&dargs.data)?,
    };
    if data.n() != n_regions {
        return Err(Error::ShapeMismatch(format!(
            "{} data rows for {} regions",
            data.n(),
            n_regions
        )));
    }
    Ok(data)
}

/// Substitute the generating response at unobserved regions so residuals and
/// scores can be computed.
fn attach_truth(data: Dataset, truth: &[f64]) -> Result<Dataset> {
    let mut y = data.y().to_vec();
    for (i, v) in y.iter_mut().enumerate() {
        if !data.observed()[i] {
            *v = truth[i];
        }
    }
    Dataset::new(
        y,
        data.x().clone(),
        data.observed().to_vec(),
        data.names().to_vec(),
    )
}

fn cmd_simulate(design_path: &Path, out: &Path) -> Result<()> {
    let mut log = RunLog::start("simulate");
    let design = SimulationDesign::from_json_file(design_path)?;
    std::fs::create_dir_all(out)?;
    let data = log.step("simulate", || simulate_dataset(&design))?;
    io::write_dataset_csv(&data, &out.join("dataset.csv"))?;
    io::write_truth_csv(&data, &out.join("truth.csv"))?;
    io::write_mask_csv(&data, &out.join("mask.csv"))?;
    design.graph()?.write_edge_list(&out.join("adjacency.txt"))?;
    design.to_json_file(&out.join("design.json"))?;
    log.write(out)?;
    println!(
        "simulated {} regions ({} observed, {} masked) into {}",
        data.n(),
        data.n_obs(),
        data.n() - data.n_obs(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_fit(
    dargs: &DataArgs,
    margs: &ModelArgs,
    grid: Option<&str>,
    prior: PriorConfig,
    draws: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let mut log = RunLog::start("fit");
    let grid = match grid {
        Some(spec) => parse_grid(spec)?,
        None => default_grid(margs.family),
    };
    let model = build_model(margs, dargs, grid)?;
    let data = load_data(dargs, model.n())?;
    let posterior = log.step("fit", || sample_posterior(&data, &model, &prior, draws, seed))?;
    std::fs::create_dir_all(out)?;
    posterior.write_csv(&out.join("posterior.csv"))?;
    let summary = posterior.summary(data.names())?;
    std::fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    log.write(out)?;
    println!(
        "fit {} with {} grid values, {} draws; artifacts in {}",
        margs.family.as_str(),
        model.grid().len(),
        posterior.n_draws(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_predict(
    dargs: &DataArgs,
    margs: &ModelArgs,
    posterior: &Path,
    truth: Option<&Path>,
    alpha: f64,
    seed: u64,
    neumann_tol: f64,
    neumann_mode: NeumannMode,
    export_samples: bool,
    out: &Path,
) -> Result<()> {
    let mut log = RunLog::start("predict");
    if !posterior.exists() {
        return Err(Error::InvalidInput(format!(
            "posterior file {} not found; run fit first",
            posterior.display()
        )));
    }
    let draws = PosteriorDraws::read_csv(posterior)?;
    let model = build_model(margs, dargs, draws.grid().to_vec())?;
    let mut data = load_data(dargs, model.n())?;
    let truth_values = match truth {
        Some(tp) => {
            let t = io::read_truth_csv(tp, data.n())?;
            data = attach_truth(data, &t)?;
            Some(t)
        }
        None => None,
    };
    let cfg = NeumannConfig::new(neumann_mode, DEFAULT_NEUMANN_MAX_ORDER, neumann_tol)?;
    let summary = log.step("predict", || {
        kriging_predict(&data, &model, &draws, &cfg, alpha, seed)
    })?;
    std::fs::create_dir_all(out)?;
    summary.write_csv(&out.join("predictions.csv"))?;
    if export_samples {
        summary.write_samples_csv(&out.join("samples.csv"))?;
    }
    if summary.n_locations() == 0 {
        eprintln!("warning: every region is observed; predictions.csv has no rows");
    } else if let Some(t) = truth_values {
        let residuals = residual_map(&data, &summary)?;
        let truth_at: Vec<f64> = summary.ids().iter().map(|&i| t[i]).collect();
        io::write_residuals_csv(
            summary.ids(),
            &truth_at,
            summary.point(),
            &residuals,
            &out.join("residuals.csv"),
        )?;
        let samples: Vec<Vec<f64>> = (0..summary.n_locations())
            .map(|k| summary.samples_for(k))
            .collect();
        let card = score_card(
            &truth_at,
            summary.point(),
            summary.lower(),
            summary.upper(),
            &samples,
            alpha,
        )?;
        std::fs::write(
            out.join("scorecard.json"),
            serde_json::to_string_pretty(&card)? + "\n",
        )?;
    }
    log.write(out)?;
    println!(
        "predicted {} regions from {} draws; artifacts in {}",
        summary.n_locations(),
        draws.n_draws(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_compare(
    design_path: &Path,
    families: &str,
    replicates: usize,
    draws: usize,
    prior: PriorConfig,
    alpha: f64,
    seed: u64,
    neumann_tol: f64,
    out: &Path,
) -> Result<()> {
    let mut log = RunLog::start("compare");
    let design = SimulationDesign::from_json_file(design_path)?;
    let fits: Vec<FitSpec> = families
        .split(',')
        .map(|name| {
            let family = parse_family(name.trim()).map_err(Error::InvalidInput)?;
            Ok(FitSpec {
                family,
                grid: default_grid(family),
            })
        })
        .collect::<Result<_>>()?;
    let cfg = NeumannConfig::new(NeumannMode::Auto, DEFAULT_NEUMANN_MAX_ORDER, neumann_tol)?;
    let records = log.step("study", || {
        replicate_study(
            &design, &fits, replicates, draws, &prior, &cfg, alpha, seed,
        )
    })?;
    std::fs::create_dir_all(out)?;
    write_replicate_csv(&records, &out.join("metrics_long.csv"))?;
    write_replicate_table_csv(&records, &out.join("metrics_wide.csv"))?;
    log.write(out)?;
    println!(
        "compared {} families over {replicates} replicates; tables in {}",
        fits.len(),
        out.display()
    );
    Ok(())
}

fn cmd_motivate(regions: usize, replicates: usize, k: f64, seed: u64, out: &Path) -> Result<()> {
    let mut log = RunLog::start("motivate");
    let result = log.step("gibbs", || {
        motivation_experiment(regions, replicates, k, seed)
    })?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    std::fs::create_dir_all(out)?;
    write_matrix_csv(&result.correlation, &out.join("correlation.csv"))?;
    log.write(out)?;
    println!(
        "estimated a {regions}x{regions} correlation matrix from {replicates} retained draws; \
         wrote {}",
        out.join("correlation.csv").display()
    );
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate { design, out } => cmd_simulate(&design, &out),
        Command::Fit {
            data,
            model,
            grid,
            prior_a,
            prior_b,
            draws,
            seed,
            out,
        } => cmd_fit(
            &data,
            &model,
            grid.as_deref(),
            PriorConfig {
                a: prior_a,
                b: prior_b,
            },
            draws,
            seed,
            &out,
        ),
        Command::Predict {
            data,
            model,
            posterior,
            truth,
            alpha,
            seed,
            neumann_tol,
            neumann_mode,
            export_samples,
            out,
        } => cmd_predict(
            &data,
            &model,
            &posterior,
            truth.as_deref(),
            alpha,
            seed,
            neumann_tol,
            neumann_mode,
            export_samples,
            &out,
        ),
        Command::Compare {
            design,
            families,
            replicates,
            draws,
            prior_a,
            prior_b,
            alpha,
            seed,
            neumann_tol,
            out,
        } => cmd_compare(
            &design,
            &families,
            replicates,
            draws,
            PriorConfig {
                a: prior_a,
                b: prior_b,
            },
            alpha,
            seed,
            neumann_tol,
            &out,
        ),
        Command::Motivate {
            regions,
            replicates,
            k,
            seed,
            out,
        } => cmd_motivate(regions, replicates, k, seed, &out),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            std::process::exit(2);
        }
        // A second global-pool initialization cannot happen: main runs once.
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .expect("thread pool init");
    }
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        let code = match e.class() {
            ErrorClass::Config => 2,
            ErrorClass::Numerical => 3,
        };
        std::process::exit(code);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_specs_parse_to_expected_values() {
        assert_eq!(parse_grid("1.5").unwrap(), vec![1.5]);
        assert_eq!(parse_grid("0.5,1,2").unwrap(), vec![0.5, 1.0, 2.0]);
        let g = parse_grid("0.1:0.1:10").unwrap();
        assert_eq!(g.len(), 100);
        assert!((g[0] - 0.1).abs() < 1e-12);
        assert!((g[99] - 10.0).abs() < 1e-9);
        let r = parse_grid("-0.99:0.02:0.99").unwrap();
        assert_eq!(r.len(), 100);
        assert!(r.iter().all(|v| v.abs() < 1.0));
        assert!(parse_grid("1:0:2").is_err());
        assert!(parse_grid("2:1:1").is_err());
        assert!(parse_grid("a,b").is_err());
        assert!(parse_grid("1:2").is_err());
    }

    #[test]
    fn family_names_round_trip() {
        for name in ["tar-c", "tar-s", "car", "sar", "nngp-tar"] {
            assert_eq!(parse_family(name).unwrap().as_str(), name);
        }
        assert!(parse_family("gp").is_err());
    }

    #[test]
    fn default_grids_are_inside_the_valid_ranges() {
        for f in [Family::TarC, Family::TarS, Family::NngpTar] {
            let g = default_grid(f);
            assert_eq!(g.len(), 100);
            assert!(g.iter().all(|&v| v > 0.0));
        }
        for f in [Family::Car, Family::Sar] {
            let g = default_grid(f);
            assert_eq!(g.len(), 100);
            assert!(g.iter().all(|&v| v.abs() < 1.0));
        }
    }
}
