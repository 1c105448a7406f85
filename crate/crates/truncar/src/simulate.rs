//! Synthetic-data generation on lattice graphs, replicated model-comparison
//! studies, and the truncated-Gaussian demonstration of constraint-induced
//! correlation.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::AdjacencyGraph;
use crate::metrics::{score_card, ScoreCard};
use crate::model::{
    precision_car, precision_sar, precision_tar_c, precision_tar_s, Family, PrecisionModel,
};
use crate::predict::{kriging_predict, NeumannConfig};
use crate::sampler::{sample_posterior, Dataset, PriorConfig};
use crate::sparse::{ldl_factor, LdlFactor};

/// Axis-aligned rectangle of jointly missing cells; its offset inside the
/// lattice is drawn from the mask RNG stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub rows: usize,
    pub cols: usize,
}

/// Missing-data pattern: a fraction of cells drawn uniformly without
/// replacement outside the block, plus the block itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissingSpec {
    pub random_fraction: f64,
    pub block: Option<BlockSpec>,
}

impl MissingSpec {
    pub fn none() -> Self {
        MissingSpec {
            random_fraction: 0.0,
            block: None,
        }
    }
}

/// Everything needed to draw one synthetic dataset: the generating family and
/// its true parameters on a rows x cols lattice, covariates iid uniform(0,1),
/// and the missing pattern.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationDesign {
    pub family: Family,
    pub rows: usize,
    pub cols: usize,
    pub beta: Vec<f64>,
    pub sigma2: f64,
    /// delta for the truncated families, rho for car/sar.
    pub theta: f64,
    pub missing: MissingSpec,
    pub seed: u64,
}

impl SimulationDesign {
    /// The 40x40 benchmark design for a family: beta = (2, 5)', sigma2 = 0.5,
    /// delta = 1 for the truncated families and rho = -0.606 for car/sar,
    /// 480 cells missing in total (a 15x15 block plus 255 random cells
    /// outside it).
    pub fn canonical(family: Family, seed: u64) -> Result<Self> {
        let theta = match family {
            Family::TarC | Family::TarS => 1.0,
            Family::Car | Family::Sar => -0.606,
            Family::NngpTar => {
                return Err(Error::InvalidInput(
                    "simulation designs cover the four lattice families".into(),
                ))
            }
        };
        Ok(SimulationDesign {
            family,
            rows: 40,
            cols: 40,
            beta: vec![2.0, 5.0],
            sigma2: 0.5,
            theta,
            missing: MissingSpec {
                random_fraction: 255.0 / 1600.0,
                block: Some(BlockSpec { rows: 15, cols: 15 }),
            },
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.rows * self.cols
    }

    /// The areal graph the design generates on: the queen lattice, where
    /// diagonal cells count as neighbors. Interior regions then have eight
    /// neighbors, which is the usual choice for raster-style areal data.
    pub fn graph(&self) -> Result<AdjacencyGraph> {
        AdjacencyGraph::grid_queen(self.rows, self.cols)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json_file(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidDimension(
                "lattice needs at least one row and one column".into(),
            ));
        }
        if self.beta.is_empty() || self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidInput(
                "true coefficient vector must be non-empty and finite".into(),
            ));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::ParameterRange(format!(
                "true variance must be positive, got {}",
                self.sigma2
            )));
        }
        match self.family {
            Family::TarC | Family::TarS => {
                if !(self.theta > 0.0 && self.theta.is_finite()) {
                    return Err(Error::ParameterRange(format!(
                        "delta must be positive, got {}",
                        self.theta
                    )));
                }
            }
            Family::Sar => {
                if !(self.theta.is_finite() && self.theta.abs() < 1.0) {
                    return Err(Error::ParameterRange(format!(
                        "sar autocorrelation {} outside (-1, 1)",
                        self.theta
                    )));
                }
            }
            // car range depends on the lattice spectrum, checked at build.
            Family::Car => {}
            Family::NngpTar => {
                return Err(Error::InvalidInput(
                    "simulation designs cover the four lattice families".into(),
                ))
            }
        }
        if !(self.missing.random_fraction >= 0.0 && self.missing.random_fraction < 1.0) {
            return Err(Error::InvalidInput(format!(
                "random missing fraction must lie in [0, 1), got {}",
                self.missing.random_fraction
            )));
        }
        if let Some(b) = self.missing.block {
            if b.rows == 0 || b.cols == 0 || b.rows > self.rows || b.cols > self.cols {
                return Err(Error::InvalidInput(format!(
                    "{}x{} missing block does not fit a {}x{} lattice",
                    b.rows, b.cols, self.rows, self.cols
                )));
            }
        }
        Ok(())
    }
}

fn precision_for(
    g: &AdjacencyGraph,
    family: Family,
    theta: f64,
    sigma2: f64,
) -> Result<crate::sparse::SparseMatrix> {
    match family {
        Family::TarC => precision_tar_c(g, theta, sigma2),
        Family::TarS => precision_tar_s(g, theta, sigma2),
        Family::Car => {
            let (lo, hi) = g.car_rho_range()?;
            if !(theta.is_finite() && theta > lo && theta < hi) {
                return Err(Error::ParameterRange(format!(
                    "car autocorrelation {theta} outside the valid interval ({lo}, {hi})"
                )));
            }
            precision_car(g, theta, sigma2)
        }
        Family::Sar => precision_sar(g, theta, sigma2),
        Family::NngpTar => Err(Error::InvalidInput(
            "simulation designs cover the four lattice families".into(),
        )),
    }
}

/// Draw one dataset from the design: X entries iid uniform(0,1), then
/// y = X beta + e with e ~ N(0, Q(theta, sigma2)^{-1}) through the sparse
/// factorization of Q. The true response is kept at masked positions, so
/// downstream scoring can read it back.
///
/// Covariates, noise, and mask consume three separate RNG streams of the
/// design seed; the mask is a deterministic function of the seed alone.
pub fn simulate_dataset(design: &SimulationDesign) -> Result<Dataset> {
    design.validate()?;
    let n = design.n();
    let p = design.beta.len();
    let g = design.graph()?;
    let q = precision_for(&g, design.family, design.theta, design.sigma2)?;
    let factor = ldl_factor(&q)?;

    let mut rng_x = ChaCha8Rng::seed_from_u64(design.seed);
    rng_x.set_stream(0);
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            x[(i, j)] = rng_x.random::<f64>();
        }
    }

    let mut rng_z = ChaCha8Rng::seed_from_u64(design.seed);
    rng_z.set_stream(1);
    let z = DVector::from_fn(n, |_, _| rng_z.sample(StandardNormal));
    let noise = factor.sample_transform(&z);

    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let mut v = noise[i];
        for j in 0..p {
            v += x[(i, j)] * design.beta[j];
        }
        y.push(v);
    }

    let mut rng_mask = ChaCha8Rng::seed_from_u64(design.seed);
    rng_mask.set_stream(2);
    let mut observed = vec![true; n];
    if let Some(b) = design.missing.block {
        let r0 = rng_mask.random_range(0..=design.rows - b.rows);
        let c0 = rng_mask.random_range(0..=design.cols - b.cols);
        for r in r0..r0 + b.rows {
            for c in c0..c0 + b.cols {
                observed[r * design.cols + c] = false;
            }
        }
    }
    let n_random = (design.missing.random_fraction * n as f64).round() as usize;
    if n_random > 0 {
        let mut pool: Vec<usize> = (0..n).filter(|&i| observed[i]).collect();
        if n_random > pool.len() {
            return Err(Error::InvalidInput(format!(
                "{n_random} random missing cells requested but only {} remain outside the block",
                pool.len()
            )));
        }
        for i in 0..n_random {
            let j = rng_mask.random_range(i..pool.len());
            pool.swap(i, j);
            observed[pool[i]] = false;
        }
    }
    let n_obs = observed.iter().filter(|&&o| o).count();
    if n_obs < p + 1 {
        return Err(Error::InvalidInput(format!(
            "missing pattern leaves {n_obs} observed cells, need at least {}",
            p + 1
        )));
    }

    let names = (1..=p).map(|j| format!("x{j}")).collect();
    Dataset::new(y, x, observed, names)
}

/// One family to fit, with its parameter grid.
#[derive(Debug, Clone)]
pub struct FitSpec {
    pub family: Family,
    pub grid: Vec<f64>,
}

/// Scores for one (replicate, fitted family) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub family: Family,
    pub scores: ScoreCard,
    /// Frobenius distance between the generating covariance and the fitted
    /// covariance evaluated at the posterior-mean parameters.
    pub frobenius: f64,
    pub sigma2_mean: f64,
    pub theta_mean: f64,
}

fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// || s_a A^{-1} - s_b B^{-1} ||_F via paired column solves, never forming
// either inverse.
fn frobenius_between_factors(fa: &LdlFactor, sa: f64, fb: &LdlFactor, sb: f64) -> f64 {
    let n = fa.n();
    let per_column: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut ca = vec![0.0; n];
            ca[j] = 1.0;
            fa.solve_in_place(&mut ca);
            let mut cb = vec![0.0; n];
            cb[j] = 1.0;
            fb.solve_in_place(&mut cb);
            ca.iter()
                .zip(&cb)
                .map(|(a, b)| {
                    let d = sa * a - sb * b;
                    d * d
                })
                .sum::<f64>()
        })
        .collect();
    per_column.iter().sum::<f64>().sqrt()
}

/// Simulate `replicates` datasets from the design, fit every entry of `fits`
/// to each, krige the missing cells, and score. Output is one record per
/// (replicate, family), ordered by replicate then by fit position.
/// Replicates run in parallel on seeds derived from `seed`; the records do
/// not depend on the thread count.
#[allow(clippy::too_many_arguments)]
pub fn replicate_study(
    design: &SimulationDesign,
    fits: &[FitSpec],
    replicates: usize,
    n_draws: usize,
    prior: &PriorConfig,
    cfg: &NeumannConfig,
    alpha: f64,
    seed: u64,
) -> Result<Vec<ReplicateRecord>> {
    if replicates == 0 {
        return Err(Error::InvalidInput("need at least one replicate".into()));
    }
    if fits.is_empty() {
        return Err(Error::InvalidInput("no families to fit".into()));
    }
    if n_draws < 2 {
        return Err(Error::InvalidInput(
            "scoring needs at least two posterior draws".into(),
        ));
    }
    design.validate()?;
    let graph = Arc::new(design.graph()?);
    let q_true = precision_for(&graph, design.family, design.theta, 1.0)?;
    let f_true = ldl_factor(&q_true)?;

    let per_replicate: Vec<Vec<ReplicateRecord>> = (0..replicates)
        .into_par_iter()
        .map(|r| -> Result<Vec<ReplicateRecord>> {
            let mut local = design.clone();
            local.seed = derive_seed(seed, r as u64, 0);
            let data = simulate_dataset(&local)?;
            let mut records = Vec::with_capacity(fits.len());
            for (fi, fit) in fits.iter().enumerate() {
                let model =
                    PrecisionModel::new(fit.family, graph.clone(), fit.grid.clone())?;
                let draws = sample_posterior(
                    &data,
                    &model,
                    prior,
                    n_draws,
                    derive_seed(seed, r as u64, 1 + fi as u64),
                )?;
                let summary = kriging_predict(
                    &data,
                    &model,
                    &draws,
                    cfg,
                    alpha,
                    derive_seed(seed, r as u64, 101 + fi as u64),
                )?;
                let truth: Vec<f64> = summary.ids().iter().map(|&i| data.y()[i]).collect();
                let samples: Vec<Vec<f64>> = (0..summary.n_locations())
                    .map(|k| summary.samples_for(k))
                    .collect();
                let scores = score_card(
                    &truth,
                    summary.point(),
                    summary.lower(),
                    summary.upper(),
                    &samples,
                    alpha,
                )?;
                let theta_hat = draws.theta_mean();
                let sigma2_hat = draws.sigma2_mean();
                let q_hat = model.precision_unit(theta_hat)?;
                let f_hat = ldl_factor(&q_hat)?;
                let frob =
                    frobenius_between_factors(&f_true, design.sigma2, &f_hat, sigma2_hat);
                records.push(ReplicateRecord {
                    replicate: r,
                    family: fit.family,
                    scores,
                    frobenius: frob,
                    sigma2_mean: sigma2_hat,
                    theta_mean: theta_hat,
                });
            }
            Ok(records)
        })
        .collect::<Result<_>>()?;
    Ok(per_replicate.into_iter().flatten().collect())
}

/// The eight metrics every fitted family is scored on. The posterior-mean
/// autocorrelation parameter is deliberately absent: delta and rho live on
/// different scales, so it cannot be compared across families.
pub const REPLICATE_METRICS: [&str; 8] = [
    "r2",
    "mae",
    "rmse",
    "crps",
    "int_score",
    "cvg",
    "frobenius",
    "sigma2_mean",
];

fn metric_value(rec: &ReplicateRecord, metric: &str) -> Option<f64> {
    match metric {
        "r2" => rec.scores.r2,
        "mae" => Some(rec.scores.mae),
        "rmse" => Some(rec.scores.rmse),
        "crps" => Some(rec.scores.crps),
        "int_score" => Some(rec.scores.int_score),
        "cvg" => Some(rec.scores.cvg),
        "frobenius" => Some(rec.frobenius),
        "sigma2_mean" => Some(rec.sigma2_mean),
        _ => None,
    }
}

/// Long-format export: replicate,family,metric,value, eight metric rows per
/// record. An undefined r2 leaves the value field empty.
pub fn write_replicate_csv(records: &[ReplicateRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "replicate,family,metric,value")?;
    for rec in records {
        for metric in REPLICATE_METRICS {
            match metric_value(rec, metric) {
                Some(v) => writeln!(w, "{},{},{metric},{v}", rec.replicate, rec.family.as_str())?,
                None => writeln!(w, "{},{},{metric},", rec.replicate, rec.family.as_str())?,
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Wide-format export: one row per (replicate, family) with a column per
/// metric.
pub fn write_replicate_table_csv(records: &[ReplicateRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "replicate,family,{}", REPLICATE_METRICS.join(","))?;
    for rec in records {
        let mut line = format!("{},{}", rec.replicate, rec.family.as_str());
        for metric in REPLICATE_METRICS {
            match metric_value(rec, metric) {
                Some(v) => write!(line, ",{v}").expect("string write"),
                None => line.push(','),
            }
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Empirical correlation matrix of draws from a standard normal truncated to
/// the constraint set, plus any sampling caveats.
#[derive(Debug, Clone)]
pub struct MotivationResult {
    pub correlation: DMatrix<f64>,
    pub warnings: Vec<String>,
}

const GIBBS_BURN_IN: usize = 100;
const GIBBS_THIN: usize = 10;

// One coordinate-wise Gibbs sweep over x under N(0, I) restricted to
// { |x_i - (Bx)_i| < sqrt(k) for all i }. Row m and every row j with
// B_jm != 0 each restrict x_m to an interval; the conditional is the standard
// normal truncated to their intersection, sampled by inverse CDF.
fn gibbs_sweep(
    b: &crate::sparse::SparseMatrix,
    x: &mut [f64],
    sqrt_k: f64,
    std_normal: &Normal,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let n = x.len();
    for m in 0..n {
        let (cols_m, vals_m) = b.row(m);
        let mut center = 0.0;
        for (&j, &v) in cols_m.iter().zip(vals_m) {
            if j != m {
                center += v * x[j];
            }
        }
        let mut lo = center - sqrt_k;
        let mut hi = center + sqrt_k;
        // The support of B is symmetric on an undirected graph, so the rows
        // touching x_m are exactly the neighbors of m.
        for &j in cols_m {
            if j == m {
                continue;
            }
            let (cols_j, vals_j) = b.row(j);
            let mut bx_j_rest = 0.0;
            let mut b_jm = 0.0;
            for (&l, &v) in cols_j.iter().zip(vals_j) {
                if l == m {
                    b_jm = v;
                } else {
                    bx_j_rest += v * x[l];
                }
            }
            if b_jm == 0.0 {
                continue;
            }
            let off = x[j] - bx_j_rest;
            lo = lo.max((off - sqrt_k) / b_jm);
            hi = hi.min((off + sqrt_k) / b_jm);
        }
        if !(lo < hi) {
            return Err(Error::NumericalFailure(format!(
                "empty conditional interval at coordinate {m}"
            )));
        }
        let pl = std_normal.cdf(lo);
        let ph = std_normal.cdf(hi);
        let u = (pl + rng.random::<f64>() * (ph - pl)).clamp(1e-16, 1.0 - 1e-16);
        x[m] = std_normal.inverse_cdf(u).clamp(lo, hi);
    }
    Ok(())
}

// Retained Gibbs draws, one row per replicate. Starts at x = 0, which sits
// strictly inside the constraint set for any k > 0.
fn truncated_normal_draws(
    b: &crate::sparse::SparseMatrix,
    replicates: usize,
    k: f64,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let n = b.nrows();
    let sqrt_k = k.sqrt();
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; n];
    for _ in 0..GIBBS_BURN_IN {
        gibbs_sweep(b, &mut x, sqrt_k, &std_normal, &mut rng)?;
    }
    let mut out = DMatrix::zeros(replicates, n);
    for r in 0..replicates {
        for _ in 0..GIBBS_THIN {
            gibbs_sweep(b, &mut x, sqrt_k, &std_normal, &mut rng)?;
        }
        for (j, &v) in x.iter().enumerate() {
            out[(r, j)] = v;
        }
    }
    Ok(out)
}

/// Demonstrates correlation induced purely by truncation: draw from N(0, I_n)
/// restricted to { |x_i - (Bx)_i| < sqrt(k) } with B the row-normalized
/// adjacency of the sqrt(n) x sqrt(n) lattice, and report the empirical
/// correlation matrix (exactly symmetric, unit diagonal).
pub fn motivation_experiment(
    n: usize,
    replicates: usize,
    k: f64,
    seed: u64,
) -> Result<MotivationResult> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::ParameterRange(format!(
            "constraint bound must be positive, got {k}"
        )));
    }
    if replicates < 2 {
        return Err(Error::InvalidInput(
            "correlation needs at least two retained draws".into(),
        ));
    }
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n || side < 2 {
        return Err(Error::InvalidInput(format!(
            "region count {n} is not the square of a lattice side of at least 2"
        )));
    }
    let g = AdjacencyGraph::grid(side, side)?;
    let b = g.neighbor_average();
    let draws = truncated_normal_draws(&b, replicates, k, seed)?;

    let rf = replicates as f64;
    let means: Vec<f64> = (0..n).map(|j| draws.column(j).sum() / rf).collect();
    let sds: Vec<f64> = (0..n)
        .map(|j| {
            (draws
                .column(j)
                .iter()
                .map(|v| (v - means[j]) * (v - means[j]))
                .sum::<f64>()
                / (rf - 1.0))
                .sqrt()
        })
        .collect();
    if sds.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::NumericalFailure(
            "a coordinate degenerated to a constant across replicates".into(),
        ));
    }
    let mut corr = DMatrix::identity(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut cov = 0.0;
            for r in 0..replicates {
                cov += (draws[(r, i)] - means[i]) * (draws[(r, j)] - means[j]);
            }
            let c = cov / ((rf - 1.0) * sds[i] * sds[j]);
            corr[(i, j)] = c;
            corr[(j, i)] = c;
        }
    }
    let mut warnings = Vec::new();
    if replicates < 30 {
        warnings.push(format!(
            "empirical correlations from only {replicates} retained draws are noisy"
        ));
    }
    Ok(MotivationResult {
        correlation: corr,
        warnings,
    })
}

/// Square matrix to CSV, plain values, no header.
pub fn write_matrix_csv(m: &DMatrix<f64>, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    for i in 0..m.nrows() {
        let mut line = String::new();
        for j in 0..m.ncols() {
            if j > 0 {
                line.push(',');
            }
            write!(line, "{}", m[(i, j)]).expect("string write");
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}
