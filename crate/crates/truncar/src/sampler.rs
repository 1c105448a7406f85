//! MCMC-free posterior sampling for spatial regression with a discretized
//! spatial-dependence parameter.
//!
//! The spatial parameter θ (δ for the truncated families, ρ for CAR/SAR) lives
//! on a finite grid, β carries a flat prior, and σ² an inverse-gamma prior.
//! Integrating β and σ² out analytically leaves a closed-form marginal
//! posterior over the grid, so exact draws come from a categorical pick of θ
//! followed by conjugate σ² and β draws. No chains, no burn-in.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::quantile_sorted;
use crate::model::PrecisionModel;
use crate::sparse::{ldl_factor, SparseMatrix};

/// Response, design matrix, and observation mask over the full set of
/// regions. `y` may hold NaN at unobserved positions; observed entries must
/// be finite. The observed rows of `x` must have full column rank, and there
/// must be at least p+1 of them, both checked at construction.
#[derive(Debug, Clone)]
pub struct Dataset {
    y: Vec<f64>,
    x: DMatrix<f64>,
    observed: Vec<bool>,
    names: Vec<String>,
    obs_idx: Vec<usize>,
    miss_idx: Vec<usize>,
}

impl Dataset {
    pub fn new(
        y: Vec<f64>,
        x: DMatrix<f64>,
        observed: Vec<bool>,
        names: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if x.nrows() != n || observed.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "response has {n} rows, design {}, mask {}",
                x.nrows(),
                observed.len()
            )));
        }
        let p = x.ncols();
        if p == 0 {
            return Err(Error::InvalidInput(
                "design matrix needs at least one column".into(),
            ));
        }
        if names.len() != p {
            return Err(Error::InvalidInput(format!(
                "{} column names for {p} design columns",
                names.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "design matrix entries must be finite".into(),
            ));
        }
        let mut obs_idx = Vec::new();
        let mut miss_idx = Vec::new();
        for (i, &o) in observed.iter().enumerate() {
            if o {
                if !y[i].is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "observed response at region {i} is not finite"
                    )));
                }
                obs_idx.push(i);
            } else {
                miss_idx.push(i);
            }
        }
        let n_o = obs_idx.len();
        if n_o < p + 1 {
            return Err(Error::InvalidInput(format!(
                "need at least p+1 = {} observed responses, have {n_o}",
                p + 1
            )));
        }
        let x_o = gather_rows(&x, &obs_idx);
        let sv = x_o.clone().svd(false, false).singular_values;
        let tol = 1e-10 * sv[0];
        let rank = sv.iter().filter(|&&s| s > tol).count();
        if rank < p {
            return Err(Error::SingularDesign(format!(
                "observed design rows have rank {rank} < {p}"
            )));
        }
        Ok(Dataset {
            y,
            x,
            observed,
            names,
            obs_idx,
            miss_idx,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_obs(&self) -> usize {
        self.obs_idx.len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn observed(&self) -> &[bool] {
        &self.observed
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn observed_indices(&self) -> &[usize] {
        &self.obs_idx
    }

    pub fn missing_indices(&self) -> &[usize] {
        &self.miss_idx
    }

    pub fn y_obs(&self) -> DVector<f64> {
        DVector::from_iterator(self.obs_idx.len(), self.obs_idx.iter().map(|&i| self.y[i]))
    }

    pub fn x_obs(&self) -> DMatrix<f64> {
        gather_rows(&self.x, &self.obs_idx)
    }

    pub fn x_missing(&self) -> DMatrix<f64> {
        gather_rows(&self.x, &self.miss_idx)
    }
}

fn gather_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

/// Inverse-gamma prior on σ². The grid prior over θ is uniform and lives with
/// the precision model, which owns the grid.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PriorConfig {
    pub a: f64,
    pub b: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig { a: 0.01, b: 0.01 }
    }
}

impl PriorConfig {
    fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite() && self.b > 0.0 && self.b.is_finite()) {
            return Err(Error::ParameterRange(format!(
                "inverse-gamma prior needs a > 0 and b > 0, got a = {}, b = {}",
                self.a, self.b
            )));
        }
        Ok(())
    }
}

/// Principal submatrix of a full-lattice precision over the observed regions.
/// This is exactly how the observed-data precision is defined here: take the
/// submatrix of Q, never invert the full covariance.
pub fn observed_precision(q: &SparseMatrix, observed: &[bool]) -> Result<SparseMatrix> {
    if observed.len() != q.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "mask length {} for a {} x {} precision",
            observed.len(),
            q.nrows(),
            q.ncols()
        )));
    }
    let keep: Vec<usize> = observed
        .iter()
        .enumerate()
        .filter_map(|(i, &o)| if o { Some(i) } else { None })
        .collect();
    if keep.is_empty() {
        return Err(Error::InvalidMask("no observed regions".into()));
    }
    q.principal_submatrix(&keep)
}

// Everything the sampler needs about one grid value, computed once.
struct NodeFit {
    log_weight: f64,
    beta_gls: DVector<f64>,
    // Lower-triangular L with L L' = (X_O' Q_o X_O)^{-1}.
    beta_half: DMatrix<f64>,
    scale: f64,
}

fn fit_node(data: &Dataset, q_obs: &SparseMatrix, prior: &PriorConfig) -> Result<NodeFit> {
    let n_o = data.n_obs();
    let p = data.p();
    if q_obs.nrows() != n_o || q_obs.ncols() != n_o {
        return Err(Error::ShapeMismatch(format!(
            "observed precision is {} x {}, need {n_o} x {n_o}",
            q_obs.nrows(),
            q_obs.ncols()
        )));
    }
    let fact = ldl_factor(q_obs)?;
    let log_det_q = fact.log_det();

    let x_o = data.x_obs();
    let y_o = data.y_obs();
    let qx = q_obs.mul_dense(&x_o);
    let mut xtqx = x_o.tr_mul(&qx);
    xtqx = (&xtqx + xtqx.transpose()) * 0.5;
    let chol = Cholesky::new(xtqx).ok_or_else(|| {
        Error::SingularDesign("X'QX is not positive definite over the observed regions".into())
    })?;
    let log_det_xtqx: f64 = (0..p).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>() * 2.0;

    let qy = q_obs.matvec(&y_o);
    let ytqy = y_o.dot(&qy);
    let xtqy = x_o.tr_mul(&qy);
    let beta_gls = chol.solve(&xtqy);
    // Residual quadratic form; exactly zero when y is in the column span of X,
    // clamp tiny negative round-off.
    let res = (ytqy - xtqy.dot(&beta_gls)).max(0.0);
    let shape = prior.a + (n_o - p) as f64 / 2.0;
    let scale = prior.b + 0.5 * res;

    let log_weight = 0.5 * log_det_q - 0.5 * log_det_xtqx - shape * scale.ln();

    let mut cov_unit = chol.inverse();
    cov_unit = (&cov_unit + cov_unit.transpose()) * 0.5;
    let beta_half = Cholesky::new(cov_unit)
        .ok_or_else(|| {
            Error::NumericalFailure("GLS coefficient covariance lost positive definiteness".into())
        })?
        .l();

    Ok(NodeFit {
        log_weight,
        beta_gls,
        beta_half,
        scale,
    })
}

/// Log of the θ-marginal posterior kernel at one grid value, up to an additive
/// constant shared across the grid:
///
///   ½ log det Q_o − ½ log det(X_O' Q_o X_O) − (a + (n_O−p)/2) log(b + res/2)
///
/// with res the GLS residual quadratic form. `q_obs` is the observed-region
/// precision at unit variance; the flat θ prior contributes nothing
/// θ-dependent and is dropped.
pub fn log_joint_theta(data: &Dataset, q_obs: &SparseMatrix, prior: &PriorConfig) -> Result<f64> {
    prior.validate()?;
    Ok(fit_node(data, q_obs, prior)?.log_weight)
}

fn softmax(log_w: &[f64]) -> Vec<f64> {
    let m = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = log_w.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = w.iter().sum();
    for v in &mut w {
        *v /= s;
    }
    w
}

/// Exact joint posterior draws of (β, σ², θ).
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    beta: DMatrix<f64>,
    sigma2: Vec<f64>,
    theta: Vec<f64>,
    seed: u64,
    grid: Vec<f64>,
    log_weights: Vec<f64>,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.sigma2.len()
    }

    pub fn p(&self) -> usize {
        self.beta.ncols()
    }

    /// G x p matrix of coefficient draws.
    pub fn beta(&self) -> &DMatrix<f64> {
        &self.beta
    }

    pub fn sigma2(&self) -> &[f64] {
        &self.sigma2
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Unnormalized log posterior over the grid, aligned with `grid()`.
    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Normalized posterior mass over the grid, aligned with `grid()`.
    pub fn posterior_mass(&self) -> Vec<f64> {
        softmax(&self.log_weights)
    }

    /// Posterior mean of β.
    pub fn beta_mean(&self) -> DVector<f64> {
        let g = self.n_draws() as f64;
        self.beta.row_sum().transpose() / g
    }

    pub fn sigma2_mean(&self) -> f64 {
        self.sigma2.iter().sum::<f64>() / self.n_draws() as f64
    }

    pub fn theta_mean(&self) -> f64 {
        self.theta.iter().sum::<f64>() / self.n_draws() as f64
    }

    /// One row per draw: draw, beta_0..beta_{p-1}, sigma2, theta.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        let mut header = String::from("draw");
        for j in 0..self.p() {
            write!(header, ",beta_{j}").expect("string write");
        }
        header.push_str(",sigma2,theta");
        writeln!(w, "{header}")?;
        for g in 0..self.n_draws() {
            let mut line = g.to_string();
            for j in 0..self.p() {
                write!(line, ",{}", self.beta[(g, j)]).expect("string write");
            }
            write!(line, ",{},{}", self.sigma2[g], self.theta[g]).expect("string write");
            writeln!(w, "{line}")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Rebuild draws from a `write_csv` artifact. The grid comes back as the
    /// distinct θ values present and the weights as their empirical log
    /// frequencies, so mass summaries reflect the file rather than the
    /// original fit; the stored seed is zero.
    pub fn read_csv(path: &Path) -> Result<PosteriorDraws> {
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::Parse {
            path: display.clone(),
            line: 1,
            msg: "empty posterior file".into(),
        })?;
        let cols: Vec<&str> = header.split(',').collect();
        let p = cols.len().checked_sub(3).filter(|&p| p >= 1).ok_or_else(|| {
            Error::Parse {
                path: display.clone(),
                line: 1,
                msg: format!("expected draw,beta_*,sigma2,theta header, got `{header}`"),
            }
        })?;
        let expected: Vec<String> = std::iter::once("draw".to_string())
            .chain((0..p).map(|j| format!("beta_{j}")))
            .chain(["sigma2".to_string(), "theta".to_string()])
            .collect();
        if cols != expected {
            return Err(Error::Parse {
                path: display,
                line: 1,
                msg: format!("expected header `{}`, got `{header}`", expected.join(",")),
            });
        }
        let mut beta_rows: Vec<f64> = Vec::new();
        let mut sigma2 = Vec::new();
        let mut theta = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != p + 3 {
                return Err(Error::Parse {
                    path: display.clone(),
                    line: idx + 1,
                    msg: format!("expected {} fields, got {}", p + 3, fields.len()),
                });
            }
            let parse = |s: &str, what: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|_| Error::Parse {
                    path: display.clone(),
                    line: idx + 1,
                    msg: format!("{what} `{s}` is not a number"),
                })
            };
            for (j, f) in fields[1..=p].iter().enumerate() {
                beta_rows.push(parse(f, &format!("beta_{j}"))?);
            }
            sigma2.push(parse(fields[p + 1], "sigma2")?);
            theta.push(parse(fields[p + 2], "theta")?);
        }
        if sigma2.is_empty() {
            return Err(Error::Parse {
                path: display,
                line: 1,
                msg: "no posterior draws".into(),
            });
        }
        let g_n = sigma2.len();
        let beta = DMatrix::from_row_iterator(g_n, p, beta_rows);
        let mut grid: Vec<f64> = theta.clone();
        grid.sort_by(|a, b| a.partial_cmp(b).expect("NaN theta in posterior file"));
        grid.dedup();
        let log_weights = grid
            .iter()
            .map(|&v| {
                let count = theta.iter().filter(|&&t| t == v).count();
                (count as f64 / g_n as f64).ln()
            })
            .collect();
        Ok(PosteriorDraws {
            beta,
            sigma2,
            theta,
            seed: 0,
            grid,
            log_weights,
        })
    }

    /// Posterior means, 95% equal-tailed intervals, and the θ mass table.
    pub fn summary(&self, names: &[String]) -> Result<FitSummary> {
        if names.len() != self.p() {
            return Err(Error::InvalidInput(format!(
                "{} names for {} coefficients",
                names.len(),
                self.p()
            )));
        }
        let interval = |values: &[f64]| -> IntervalEstimate {
            let mut sorted = values.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN in posterior draws"));
            IntervalEstimate {
                mean: values.iter().sum::<f64>() / values.len() as f64,
                lower: quantile_sorted(&sorted, 0.025),
                upper: quantile_sorted(&sorted, 0.975),
            }
        };
        let beta = names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let col: Vec<f64> = (0..self.n_draws()).map(|g| self.beta[(g, j)]).collect();
                let est = interval(&col);
                CoefficientEstimate {
                    name: name.clone(),
                    mean: est.mean,
                    lower: est.lower,
                    upper: est.upper,
                }
            })
            .collect();
        let mass = self.posterior_mass();
        let theta_mass = self
            .grid
            .iter()
            .zip(&mass)
            .map(|(&value, &mass)| ThetaMass { value, mass })
            .collect();
        Ok(FitSummary {
            n_draws: self.n_draws(),
            beta,
            sigma2: interval(&self.sigma2),
            theta_mean: self.theta_mean(),
            theta_mass,
        })
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientEstimate {
    pub name: String,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ThetaMass {
    pub value: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub n_draws: usize,
    pub beta: Vec<CoefficientEstimate>,
    pub sigma2: IntervalEstimate,
    pub theta_mean: f64,
    pub theta_mass: Vec<ThetaMass>,
}

/// Draw `n_draws` exact joint posterior samples of (β, σ², θ).
///
/// Per grid value, the observed-region precision is factored once and the
/// GLS pieces cached; draws then cost a categorical pick, one gamma variate,
/// and p normals each. θ, σ², and β consume three independent RNG streams
/// derived from `seed`, so the draw sequence is reproducible bit for bit.
pub fn sample_posterior(
    data: &Dataset,
    model: &PrecisionModel,
    prior: &PriorConfig,
    n_draws: usize,
    seed: u64,
) -> Result<PosteriorDraws> {
    prior.validate()?;
    if n_draws == 0 {
        return Err(Error::InvalidInput("need at least one posterior draw".into()));
    }
    if model.n() != data.n() {
        return Err(Error::ShapeMismatch(format!(
            "model covers {} regions, data has {}",
            model.n(),
            data.n()
        )));
    }

    let grid = model.grid().to_vec();
    let mut nodes = Vec::with_capacity(grid.len());
    for &theta in &grid {
        let q_unit = model.precision_unit(theta)?;
        let q_obs = observed_precision(&q_unit, data.observed())?;
        nodes.push(fit_node(data, &q_obs, prior)?);
    }
    let log_weights: Vec<f64> = nodes.iter().map(|n| n.log_weight).collect();
    let probs = softmax(&log_weights);
    let mut cum = probs.clone();
    for k in 1..cum.len() {
        cum[k] += cum[k - 1];
    }

    let shape = prior.a + (data.n_obs() - data.p()) as f64 / 2.0;
    let gamma = Gamma::new(shape, 1.0)
        .map_err(|e| Error::NumericalFailure(format!("gamma sampler setup: {e}")))?;

    let mut rng_theta = ChaCha8Rng::seed_from_u64(seed);
    rng_theta.set_stream(0);
    let mut rng_sigma = ChaCha8Rng::seed_from_u64(seed);
    rng_sigma.set_stream(1);
    let mut rng_beta = ChaCha8Rng::seed_from_u64(seed);
    rng_beta.set_stream(2);

    let p = data.p();
    let mut beta = DMatrix::zeros(n_draws, p);
    let mut sigma2 = Vec::with_capacity(n_draws);
    let mut theta = Vec::with_capacity(n_draws);
    for g in 0..n_draws {
        let u = rng_theta.random::<f64>();
        let k = cum.partition_point(|&c| c <= u).min(grid.len() - 1);
        let node = &nodes[k];

        // 1/Gamma(shape, 1) scaled by the node's rate is inverse-gamma.
        let s2 = node.scale / gamma.sample(&mut rng_sigma);

        let z = DVector::from_fn(p, |_, _| rng_beta.sample(StandardNormal));
        let b = &node.beta_gls + (&node.beta_half * z) * s2.sqrt();
        beta.row_mut(g).copy_from(&b.transpose());
        sigma2.push(s2);
        theta.push(grid[k]);
    }

    Ok(PosteriorDraws {
        beta,
        sigma2,
        theta,
        seed,
        grid,
        log_weights,
    })
}

/// CAR/SAR fitting is the same machinery with ρ in place of δ on the grid.
pub fn sample_posterior_car_sar(
    data: &Dataset,
    model: &PrecisionModel,
    prior: &PriorConfig,
    n_draws: usize,
    seed: u64,
) -> Result<PosteriorDraws> {
    sample_posterior(data, model, prior, n_draws, seed)
}
