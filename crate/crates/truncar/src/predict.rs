//! Posterior-predictive inference at unobserved regions.
//!
//! Covariance columns come from the precision matrix either through a
//! geometric (Neumann) series when the family certifies a contraction, or
//! through sparse-factorization column solves otherwise. Predictive draws are
//! univariate per missing location, sampled in parallel with one RNG stream
//! per location so results never depend on the thread count.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::quantile_sorted;
use crate::model::PrecisionModel;
use crate::sampler::{Dataset, PosteriorDraws};
use crate::sparse::{ldl_factor, LdlFactor, SparseMatrix};

pub const DEFAULT_NEUMANN_MAX_ORDER: usize = 5_000;
pub const DEFAULT_NEUMANN_TAIL_TOL: f64 = 1e-8;
/// Cap on dense operator powers kept alive for reuse across grid values.
pub const DEFAULT_POWER_BUDGET_BYTES: usize = 256 << 20;

/// How covariance columns are recovered from the precision matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NeumannMode {
    /// Series when a contraction certificate exists, solves otherwise.
    Auto,
    /// Series only; error out when no certificate holds.
    Series,
    /// Always factorize and solve.
    Solve,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NeumannConfig {
    pub mode: NeumannMode,
    pub max_order: usize,
    pub tail_tol: f64,
}

impl Default for NeumannConfig {
    fn default() -> Self {
        NeumannConfig {
            mode: NeumannMode::Auto,
            max_order: DEFAULT_NEUMANN_MAX_ORDER,
            tail_tol: DEFAULT_NEUMANN_TAIL_TOL,
        }
    }
}

impl NeumannConfig {
    pub fn new(mode: NeumannMode, max_order: usize, tail_tol: f64) -> Result<Self> {
        let cfg = NeumannConfig {
            mode,
            max_order,
            tail_tol,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.max_order < 1 {
            return Err(Error::ParameterRange(
                "series order cap must be at least 1".into(),
            ));
        }
        if !(self.tail_tol > 0.0 && self.tail_tol.is_finite()) {
            return Err(Error::ParameterRange(format!(
                "tail tolerance must be positive, got {}",
                self.tail_tol
            )));
        }
        Ok(())
    }
}

/// Smallest truncation order K whose geometric tail |c|^(K+1)/(1-|c|) in the
/// max-row-sum norm falls below `tail_tol`.
pub fn neumann_order(coeff: f64, tail_tol: f64) -> Result<usize> {
    if !(tail_tol > 0.0 && tail_tol.is_finite()) {
        return Err(Error::ParameterRange(format!(
            "tail tolerance must be positive, got {tail_tol}"
        )));
    }
    let c = coeff.abs();
    if !(c < 1.0) {
        return Err(Error::NoConvergence(format!(
            "no contraction: |series coefficient| = {c} is not below 1"
        )));
    }
    if c == 0.0 {
        return Ok(0);
    }
    // Closed form, then nudge to the exact smallest K in case of rounding.
    let guess = ((tail_tol * (1.0 - c)).ln() / c.ln()).ceil() - 1.0;
    let mut k = guess.max(0.0) as usize;
    let bound = |k: usize| c.powi(k as i32 + 1) / (1.0 - c);
    while k > 0 && bound(k - 1) < tail_tol {
        k -= 1;
    }
    while bound(k) >= tail_tol {
        k += 1;
    }
    Ok(k)
}

/// Dense powers of a fixed sparse operator, shared across series evaluations
/// with different coefficients. Powers are stored up to a byte budget; higher
/// orders are recomputed on the fly by one extra sparse-dense product each,
/// which yields bitwise-identical sums either way.
pub struct PowerCache {
    op: SparseMatrix,
    powers: Vec<DMatrix<f64>>,
    budget_bytes: usize,
}

impl PowerCache {
    pub fn new(op: SparseMatrix, budget_bytes: usize) -> Result<Self> {
        if op.nrows() != op.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "power cache needs a square operator, got {} x {}",
                op.nrows(),
                op.ncols()
            )));
        }
        Ok(PowerCache {
            op,
            powers: Vec::new(),
            budget_bytes,
        })
    }

    pub fn with_default_budget(op: SparseMatrix) -> Result<Self> {
        Self::new(op, DEFAULT_POWER_BUDGET_BYTES)
    }

    pub fn n(&self) -> usize {
        self.op.nrows()
    }

    /// Number of dense powers currently held.
    pub fn stored_powers(&self) -> usize {
        self.powers.len()
    }

    pub fn budget_bytes(&self) -> usize {
        self.budget_bytes
    }

    /// I + sum_{k=1}^{order} coeff^k A^k.
    pub fn series_sum(&mut self, coeff: f64, order: usize) -> DMatrix<f64> {
        let n = self.op.nrows();
        let mut acc = DMatrix::<f64>::identity(n, n);
        let per_power = n * n * std::mem::size_of::<f64>();
        let mut ck = 1.0;
        // Power past the stored prefix when the budget is exhausted.
        let mut overflow: Option<DMatrix<f64>> = None;
        for k in 1..=order {
            ck *= coeff;
            if k <= self.powers.len() {
                axpy(&mut acc, ck, &self.powers[k - 1]);
                continue;
            }
            let next = match (&overflow, self.powers.last()) {
                (Some(cur), _) => self.op.mul_dense(cur),
                (None, Some(last)) => self.op.mul_dense(last),
                (None, None) => self.op.to_dense(),
            };
            axpy(&mut acc, ck, &next);
            if (self.powers.len() + 1) * per_power <= self.budget_bytes {
                self.powers.push(next);
            } else {
                overflow = Some(next);
            }
        }
        acc
    }
}

fn axpy(acc: &mut DMatrix<f64>, c: f64, m: &DMatrix<f64>) {
    for (a, v) in acc.as_mut_slice().iter_mut().zip(m.as_slice()) {
        *a += c * v;
    }
}

/// Unit-variance covariance access: fully materialized from a truncated
/// series, or implicit behind a sparse factorization of the precision (kept
/// alongside its factor, so conditional blocks can be sliced without ever
/// materializing the inverse).
pub enum CovarianceHandle {
    Dense(DMatrix<f64>),
    Solver {
        precision: SparseMatrix,
        factor: LdlFactor,
    },
}

impl CovarianceHandle {
    pub fn n(&self) -> usize {
        match self {
            CovarianceHandle::Dense(m) => m.nrows(),
            CovarianceHandle::Solver { factor, .. } => factor.n(),
        }
    }

    pub fn is_series(&self) -> bool {
        matches!(self, CovarianceHandle::Dense(_))
    }

    pub fn column(&self, j: usize) -> DVector<f64> {
        match self {
            CovarianceHandle::Dense(m) => m.column(j).into(),
            CovarianceHandle::Solver { factor, .. } => {
                let mut e = DVector::zeros(factor.n());
                e[j] = 1.0;
                factor.solve(&e)
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            CovarianceHandle::Dense(m) => m.clone(),
            CovarianceHandle::Solver { factor, .. } => {
                let n = factor.n();
                let mut out = DMatrix::zeros(n, n);
                for j in 0..n {
                    out.set_column(j, &self.column(j));
                }
                out
            }
        }
    }
}

/// Unit-variance covariance of the model at one grid value.
///
/// The conditional family contracts with coefficient delta/(1+delta) and
/// `car` with rho when |rho| < 1; those take the truncated-series route with
/// tail below `cfg.tail_tol`, reusing `cache` for the operator powers (pass
/// the same cache across grid values; it is created on first use). Families
/// without a certificate fall back to factorization column solves, unless
/// `Series` mode forbids that. In `Auto` mode the series route is only worth
/// taking when its powers fit the cache budget; once they spill, every call
/// would recompute the high orders, so the factorization wins and is chosen.
pub fn covariance_from_precision(
    model: &PrecisionModel,
    theta: f64,
    cfg: &NeumannConfig,
    cache: &mut Option<PowerCache>,
) -> Result<CovarianceHandle> {
    cfg.validate()?;
    if cfg.mode != NeumannMode::Solve {
        if let Some(parts) = model.series_parts(theta) {
            let order = neumann_order(parts.coeff, cfg.tail_tol)?;
            let n = model.n();
            let budget = cache
                .as_ref()
                .map_or(DEFAULT_POWER_BUDGET_BYTES, PowerCache::budget_bytes);
            let cacheable = order
                .saturating_mul(n * n * std::mem::size_of::<f64>())
                <= budget;
            if order <= cfg.max_order && (cfg.mode == NeumannMode::Series || cacheable) {
                let graph = model
                    .graph()
                    .expect("series certificates only exist for graph families");
                if cache.is_none() {
                    *cache = Some(PowerCache::with_default_budget(
                        graph.neighbor_average(),
                    )?);
                }
                let pc = cache.as_mut().unwrap();
                let mut dense = pc.series_sum(parts.coeff, order);
                for (j, s) in parts.scale_diag.iter().enumerate() {
                    dense.column_mut(j).scale_mut(*s);
                }
                return Ok(CovarianceHandle::Dense(dense));
            }
            if cfg.mode == NeumannMode::Series {
                return Err(Error::NoConvergence(format!(
                    "series needs order {order}, above the cap {}",
                    cfg.max_order
                )));
            }
        } else if cfg.mode == NeumannMode::Series {
            return Err(Error::NoConvergence(format!(
                "no series contraction certificate for {} at theta = {theta}; \
                 allow the factorization fallback",
                model.family().as_str()
            )));
        }
    }
    let q = model.precision_unit(theta)?;
    let factor = ldl_factor(&q)?;
    Ok(CovarianceHandle::Solver {
        precision: q,
        factor,
    })
}

/// Predictive draws and interval summaries at the missing locations.
#[derive(Debug, Clone)]
pub struct PredictiveSummary {
    ids: Vec<usize>,
    point: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    samples: DMatrix<f64>,
    alpha: f64,
}

impl PredictiveSummary {
    fn empty(n_draws: usize, alpha: f64) -> Self {
        PredictiveSummary {
            ids: Vec::new(),
            point: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
            samples: DMatrix::zeros(n_draws, 0),
            alpha,
        }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn point(&self) -> &[f64] {
        &self.point
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// G x n_missing matrix of predictive draws.
    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n_locations(&self) -> usize {
        self.ids.len()
    }

    pub fn n_draws(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Predictive draws for one location, in draw order.
    pub fn samples_for(&self, k: usize) -> Vec<f64> {
        self.samples.column(k).iter().cloned().collect()
    }

    /// One row per missing location: id,point,lower,upper.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "id,point,lower,upper")?;
        for k in 0..self.ids.len() {
            writeln!(
                w,
                "{},{},{},{}",
                self.ids[k], self.point[k], self.lower[k], self.upper[k]
            )?;
        }
        w.flush()?;
        Ok(())
    }

    /// Full predictive sample matrix, one row per location: id,then draws.
    pub fn write_samples_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        let mut header = String::from("id");
        for g in 0..self.n_draws() {
            write!(header, ",draw_{g}").expect("string write");
        }
        writeln!(w, "{header}")?;
        for k in 0..self.ids.len() {
            let mut line = self.ids[k].to_string();
            for g in 0..self.n_draws() {
                write!(line, ",{}", self.samples[(g, k)]).expect("string write");
            }
            writeln!(w, "{line}")?;
        }
        w.flush()?;
        Ok(())
    }
}

// Per-grid-value Kriging pieces, independent of the draw index:
// mean_{g,i} = u[i] + w.row(i) . beta_g, var_{g,i} = sigma2_g * var0[i].
struct ThetaPrep {
    u: DVector<f64>,
    w: DMatrix<f64>,
    var0: Vec<f64>,
}

fn prep_theta(
    sigma: &DMatrix<f64>,
    obs: &[usize],
    miss: &[usize],
    y_o: &DVector<f64>,
    x_o: &DMatrix<f64>,
    x_m: &DMatrix<f64>,
) -> Result<ThetaPrep> {
    let gather = |rows: &[usize], cols: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| sigma[(rows[i], cols[j])])
    };
    let s_oo = {
        let m = gather(obs, obs);
        (&m + m.transpose()) * 0.5
    };
    let s_mo = gather(miss, obs);
    let chol = Cholesky::new(s_oo).ok_or_else(|| {
        Error::NumericalFailure(
            "observed-block covariance is not positive definite".into(),
        )
    })?;
    let u = &s_mo * chol.solve(y_o);
    let v = &s_mo * chol.solve(x_o);
    let w = x_m - v;
    // var0_i = Sigma_ii - || L^{-1} Sigma_{O,i} ||^2, the Schur complement
    // diagonal; forward solves only.
    let half = chol
        .l_dirty()
        .solve_lower_triangular(&s_mo.transpose())
        .ok_or_else(|| {
            Error::NumericalFailure("triangular solve against a zero pivot".into())
        })?;
    let mut var0 = Vec::with_capacity(miss.len());
    for (i, &mi) in miss.iter().enumerate() {
        let v0 = sigma[(mi, mi)] - half.column(i).norm_squared();
        if !(v0 > 0.0) {
            return Err(Error::NumericalFailure(format!(
                "conditional predictive variance at region {mi} is not positive ({v0:e})"
            )));
        }
        var0.push(v0);
    }
    Ok(ThetaPrep { u, w, var0 })
}

// The same conditional moments read off the precision instead: with Q
// partitioned by the observed and missing index sets, the block-inverse
// identities Sigma_MO Sigma_OO^{-1} = -Q_MM^{-1} Q_MO and
// Sigma_MM - Sigma_MO Sigma_OO^{-1} Sigma_OM = Q_MM^{-1} turn every piece
// into a solve against the small missing-block factor. Q_MO never needs
// explicit slicing: multiplying a vector that is zero at the missing
// positions by the full Q and reading the missing rows gives Q_MO v.
fn prep_theta_sparse(
    q: &SparseMatrix,
    obs: &[usize],
    miss: &[usize],
    y_o: &DVector<f64>,
    x_o: &DMatrix<f64>,
    x_m: &DMatrix<f64>,
) -> Result<ThetaPrep> {
    let n = q.nrows();
    let q_mm = q.principal_submatrix(miss)?;
    let f_mm = ldl_factor(&q_mm)?;
    let q_mo_times = |col: &dyn Fn(usize) -> f64| {
        let mut padded = DVector::zeros(n);
        for (k, &o) in obs.iter().enumerate() {
            padded[o] = col(k);
        }
        let full = q.matvec(&padded);
        DVector::from_fn(miss.len(), |i, _| full[miss[i]])
    };
    let u = -f_mm.solve(&q_mo_times(&|k| y_o[k]));
    let mut w = x_m.clone();
    for j in 0..x_o.ncols() {
        let v = -f_mm.solve(&q_mo_times(&|k| x_o[(k, j)]));
        for i in 0..miss.len() {
            w[(i, j)] -= v[i];
        }
    }
    let mut var0 = Vec::with_capacity(miss.len());
    for (i, &mi) in miss.iter().enumerate() {
        let mut e = DVector::zeros(miss.len());
        e[i] = 1.0;
        let v0 = f_mm.solve(&e)[i];
        if !(v0 > 0.0) {
            return Err(Error::NumericalFailure(format!(
                "conditional predictive variance at region {mi} is not positive ({v0:e})"
            )));
        }
        var0.push(v0);
    }
    Ok(ThetaPrep { u, w, var0 })
}

/// Kriging at every missing region: for each posterior draw g and missing
/// location i, one draw from the univariate conditional margin
///
///   N( x_i'beta_g + Sigma_iO Sigma_OO^{-1} (y_O - X_O beta_g),
///      sigma2_g * (Sigma_ii - Sigma_iO Sigma_OO^{-1} Sigma_Oi) )
///
/// at theta_g, with the covariance blocks computed once per distinct grid
/// value in the draws. A series handle materializes Sigma and conditions on
/// its observed block; a factorization handle reaches the same moments
/// through the missing block of the precision, which is far smaller than the
/// observed block whenever most regions are observed. Location i uses its
/// own RNG stream derived from `seed`, so output is identical for any
/// parallel schedule.
pub fn kriging_predict(
    data: &Dataset,
    model: &PrecisionModel,
    draws: &PosteriorDraws,
    cfg: &NeumannConfig,
    alpha: f64,
    seed: u64,
) -> Result<PredictiveSummary> {
    cfg.validate()?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::ParameterRange(format!(
            "interval level must lie in (0, 1), got {alpha}"
        )));
    }
    if model.n() != data.n() {
        return Err(Error::ShapeMismatch(format!(
            "model covers {} regions, data has {}",
            model.n(),
            data.n()
        )));
    }
    if draws.p() != data.p() {
        return Err(Error::ShapeMismatch(format!(
            "draws carry {} coefficients, design has {}",
            draws.p(),
            data.p()
        )));
    }
    let g_n = draws.n_draws();
    let miss = data.missing_indices();
    if miss.is_empty() {
        return Ok(PredictiveSummary::empty(g_n, alpha));
    }
    let obs = data.observed_indices();
    let y_o = data.y_obs();
    let x_o = data.x_obs();
    let x_m = data.x_missing();

    // Covariance prep once per distinct theta value among the draws.
    let mut distinct: Vec<f64> = draws.theta().to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("NaN theta draw"));
    distinct.dedup();
    let mut cache: Option<PowerCache> = None;
    let mut preps = Vec::with_capacity(distinct.len());
    for &theta in &distinct {
        let prep = match covariance_from_precision(model, theta, cfg, &mut cache)? {
            CovarianceHandle::Dense(sigma) => {
                prep_theta(&sigma, obs, miss, &y_o, &x_o, &x_m)?
            }
            CovarianceHandle::Solver { precision, .. } => {
                prep_theta_sparse(&precision, obs, miss, &y_o, &x_o, &x_m)?
            }
        };
        preps.push(prep);
    }
    let draw_prep: Vec<usize> = draws
        .theta()
        .iter()
        .map(|t| {
            distinct
                .binary_search_by(|probe| probe.partial_cmp(t).unwrap())
                .expect("draw theta missing from the distinct set")
        })
        .collect();

    let beta = draws.beta();
    let sigma2 = draws.sigma2();
    let p = data.p();
    let columns: Vec<Vec<f64>> = (0..miss.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            (0..g_n)
                .map(|g| {
                    let pr = &preps[draw_prep[g]];
                    let mut mean = pr.u[i];
                    for j in 0..p {
                        mean += pr.w[(i, j)] * beta[(g, j)];
                    }
                    let sd = (sigma2[g] * pr.var0[i]).sqrt();
                    let z: f64 = rng.sample(StandardNormal);
                    mean + sd * z
                })
                .collect()
        })
        .collect();

    let half = alpha / 2.0;
    let mut point = Vec::with_capacity(miss.len());
    let mut lower = Vec::with_capacity(miss.len());
    let mut upper = Vec::with_capacity(miss.len());
    for col in &columns {
        let mean = col.iter().sum::<f64>() / g_n as f64;
        let mut sorted = col.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN predictive draw"));
        let lo = quantile_sorted(&sorted, half);
        let hi = quantile_sorted(&sorted, 1.0 - half);
        if g_n >= 100 {
            debug_assert!(
                lo <= mean && mean <= hi,
                "sample mean {mean} escaped its central interval [{lo}, {hi}]"
            );
        }
        point.push(mean);
        lower.push(lo);
        upper.push(hi);
    }
    let samples = DMatrix::from_fn(g_n, miss.len(), |g, i| columns[i][g]);
    Ok(PredictiveSummary {
        ids: miss.to_vec(),
        point,
        lower,
        upper,
        samples,
        alpha,
    })
}

/// truth - point at each predicted location, in summary order. The truth is
/// the response value stored at the masked position (simulation or held-out
/// runs keep it there); NaN means there is none.
pub fn residual_map(data: &Dataset, summary: &PredictiveSummary) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(summary.n_locations());
    for (k, &id) in summary.ids().iter().enumerate() {
        if id >= data.n() {
            return Err(Error::InvalidInput(format!(
                "predicted location {id} outside the {}-region lattice",
                data.n()
            )));
        }
        let truth = data.y()[id];
        if !truth.is_finite() {
            return Err(Error::TruthUnavailable);
        }
        out.push(truth - summary.point()[k]);
    }
    Ok(out)
}
