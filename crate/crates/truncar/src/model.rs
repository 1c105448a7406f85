//! Precision matrices for the five model families and the identities that
//! connect them.
//!
//! All constructors satisfy Q(sigma2) = Q(1)/sigma2, so callers that scan a
//! parameter grid build each Q once at unit variance and fold sigma2 in
//! analytically. Positive definiteness is certified by attempting a sparse
//! factorization, not by eigenvalue checks.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AdjacencyGraph, DirectedNeighborSets};
use crate::sparse::SparseMatrix;

/// Model family. The truncated families (`tar-c`, `tar-s`, `nngp-tar`) are
/// indexed by the precision-nugget ratio delta > 0; the classical pair
/// (`car`, `sar`) by the autocorrelation coefficient rho.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    TarC,
    TarS,
    Car,
    Sar,
    NngpTar,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::TarC => "tar-c",
            Family::TarS => "tar-s",
            Family::Car => "car",
            Family::Sar => "sar",
            Family::NngpTar => "nngp-tar",
        }
    }

    /// True when the grid parameter is delta (a positive nugget ratio) rather
    /// than an autocorrelation rho.
    pub fn uses_delta(&self) -> bool {
        matches!(self, Family::TarC | Family::TarS | Family::NngpTar)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tar-c" => Ok(Family::TarC),
            "tar-s" => Ok(Family::TarS),
            "car" => Ok(Family::Car),
            "sar" => Ok(Family::Sar),
            "nngp-tar" => Ok(Family::NngpTar),
            other => Err(Error::InvalidInput(format!(
                "unknown family `{other}` (expected tar-c, tar-s, car, sar, or nngp-tar)"
            ))),
        }
    }
}

/// Exponential correlation C(s, s') = exp(-phi * ||s - s'||). The only kind
/// supported; phi must be a positive range parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSpec {
    phi: f64,
}

impl CorrelationSpec {
    pub fn exponential(phi: f64) -> Result<Self> {
        if !(phi.is_finite() && phi > 0.0) {
            return Err(Error::ParameterRange(format!(
                "correlation range phi must be positive, got {phi}"
            )));
        }
        Ok(CorrelationSpec { phi })
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn value(&self, distance: f64) -> f64 {
        (-self.phi * distance).exp()
    }
}

fn check_scale(delta_or_rho: f64, sigma2: f64, name: &str) -> Result<()> {
    if !delta_or_rho.is_finite() {
        return Err(Error::ParameterRange(format!(
            "{name} must be finite, got {delta_or_rho}"
        )));
    }
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::ParameterRange(format!(
            "variance sigma2 must be positive, got {sigma2}"
        )));
    }
    Ok(())
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::ParameterRange(format!(
            "nugget ratio delta must be positive, got {delta}"
        )));
    }
    Ok(())
}

fn symmetrized(m: &SparseMatrix) -> SparseMatrix {
    m.add(&m.transpose()).expect("square input").scaled(0.5)
}

/// Q = (1/sigma2) [(1/delta) D_w + (D_w - W)]. Strictly positive definite for
/// every delta > 0; the nugget term lives on the precision diagonal.
pub fn precision_tar_c(g: &AdjacencyGraph, delta: f64, sigma2: f64) -> Result<SparseMatrix> {
    check_scale(delta, sigma2, "delta")?;
    check_delta(delta)?;
    let s = 1.0 / sigma2;
    let diag_scale = (1.0 + 1.0 / delta) * s;
    let trips = g
        .w()
        .triplets()
        .map(|(i, j, v)| (i, j, -v * s))
        .chain((0..g.n()).map(|i| (i, i, g.degrees()[i] * diag_scale)));
    SparseMatrix::from_triplets(g.n(), g.n(), trips)
}

/// Q = (1/sigma2) [(1/delta) I + (I - A)'(I - A)] with A the row-normalized
/// adjacency. Strictly positive definite for every delta > 0.
pub fn precision_tar_s(g: &AdjacencyGraph, delta: f64, sigma2: f64) -> Result<SparseMatrix> {
    check_scale(delta, sigma2, "delta")?;
    check_delta(delta)?;
    let n = g.n();
    let a = g.neighbor_average();
    let i_minus_a = SparseMatrix::identity(n).add(&a.scaled(-1.0))?;
    let gram = i_minus_a.transpose().matmul(&i_minus_a)?;
    let q = gram
        .add(&SparseMatrix::from_diagonal(&vec![1.0 / delta; n]))?
        .scaled(1.0 / sigma2);
    Ok(symmetrized(&q))
}

/// Q = (1/sigma2) (D_w - rho W). No range check here: a rho outside the valid
/// interval produces an indefinite matrix and the error surfaces from the
/// attempted factorization, which is the certificate this crate uses.
pub fn precision_car(g: &AdjacencyGraph, rho: f64, sigma2: f64) -> Result<SparseMatrix> {
    check_scale(rho, sigma2, "rho")?;
    let s = 1.0 / sigma2;
    let trips = g
        .w()
        .triplets()
        .filter(|_| rho != 0.0)
        .map(|(i, j, v)| (i, j, -rho * v * s))
        .chain((0..g.n()).map(|i| (i, i, g.degrees()[i] * s)));
    SparseMatrix::from_triplets(g.n(), g.n(), trips)
}

/// Q = (1/sigma2) (I - rho A)'(I - rho A); proper only for |rho| < 1.
pub fn precision_sar(g: &AdjacencyGraph, rho: f64, sigma2: f64) -> Result<SparseMatrix> {
    check_scale(rho, sigma2, "rho")?;
    if rho.abs() >= 1.0 {
        return Err(Error::ParameterRange(format!(
            "sar autocorrelation must lie strictly inside (-1, 1), got {rho}"
        )));
    }
    let n = g.n();
    let a = g.neighbor_average();
    let i_minus_ra = SparseMatrix::identity(n).add(&a.scaled(-rho))?;
    let q = i_minus_ra
        .transpose()
        .matmul(&i_minus_ra)?
        .scaled(1.0 / sigma2);
    Ok(symmetrized(&q))
}

/// Directed-conditioning factors of a unit-variance exponential-correlation
/// process: row i of `b` holds the kriging weights of location i onto its
/// conditioning set, `f[i]` the conditional variance left over.
#[derive(Clone, Debug)]
pub struct NngpFactors {
    b: SparseMatrix,
    f: Vec<f64>,
}

impl NngpFactors {
    pub fn b(&self) -> &SparseMatrix {
        &self.b
    }

    pub fn f(&self) -> &[f64] {
        &self.f
    }

    /// Q = (1/sigma2) [(1/delta) I + (I - B)' F^{-1} (I - B)].
    pub fn precision(&self, delta: f64, sigma2: f64) -> Result<SparseMatrix> {
        check_scale(delta, sigma2, "delta")?;
        check_delta(delta)?;
        let n = self.f.len();
        let trips = self
            .b
            .triplets()
            .map(|(i, j, v)| (i, j, -v))
            .chain((0..n).map(|i| (i, i, 1.0)));
        let i_minus_b = SparseMatrix::from_triplets(n, n, trips)?;
        let finv: Vec<f64> = self.f.iter().map(|&f| 1.0 / f).collect();
        let q = i_minus_b
            .transpose()
            .matmul(&SparseMatrix::from_diagonal(&finv).matmul(&i_minus_b)?)?
            .add(&SparseMatrix::from_diagonal(&vec![1.0 / delta; n]))?
            .scaled(1.0 / sigma2);
        Ok(symmetrized(&q))
    }
}

/// Solves the small conditional-Gaussian systems b_i' = C(s_i, S_i) C(S_i, S_i)^{-1}
/// and f_i = 1 - b_i' C(S_i, s_i) for every location.
pub fn nngp_factors(
    sets: &DirectedNeighborSets,
    coords: &[(f64, f64)],
    corr: &CorrelationSpec,
) -> Result<NngpFactors> {
    let n = sets.n();
    if coords.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} coordinates for {} locations",
            coords.len(),
            n
        )));
    }
    let dist = |a: usize, b: usize| {
        let dx = coords[a].0 - coords[b].0;
        let dy = coords[a].1 - coords[b].1;
        (dx * dx + dy * dy).sqrt()
    };
    let mut trips = Vec::new();
    let mut f = vec![1.0; n];
    for i in 0..n {
        let set = sets.set(i);
        let m = set.len();
        if m == 0 {
            continue;
        }
        let css = DMatrix::from_fn(m, m, |a, b| corr.value(dist(set[a], set[b])));
        let csi = DVector::from_fn(m, |a, _| corr.value(dist(set[a], i)));
        let chol = css.cholesky().ok_or_else(|| {
            Error::NumericalFailure(format!(
                "ill-conditioned correlation over the conditioning set of location {i}"
            ))
        })?;
        let b_i = chol.solve(&csi);
        let fi = 1.0 - b_i.dot(&csi);
        if !(fi.is_finite() && fi > 0.0) {
            return Err(Error::NumericalFailure(format!(
                "conditional variance at location {i} collapsed to {fi}"
            )));
        }
        f[i] = fi;
        for (a, &j) in set.iter().enumerate() {
            trips.push((i, j, b_i[a]));
        }
    }
    let b = SparseMatrix::from_triplets(n, n, trips)?;
    Ok(NngpFactors { b, f })
}

/// Q = (1/sigma2) [(1/delta) I + (I - B)' F^{-1} (I - B)] over directed
/// nearest-neighbor sets with exponential correlation.
pub fn precision_nngp_tar(
    sets: &DirectedNeighborSets,
    coords: &[(f64, f64)],
    corr: &CorrelationSpec,
    delta: f64,
    sigma2: f64,
) -> Result<SparseMatrix> {
    nngp_factors(sets, coords, corr)?.precision(delta, sigma2)
}

/// Conditional-form decomposition Q^{-1} = (I - C)^{-1} M of a truncated
/// family: C couples each region to its neighbors, M is a positive diagonal.
#[derive(Clone, Debug)]
pub struct CarRepresentation {
    pub c: SparseMatrix,
    pub m_diag: Vec<f64>,
    /// max-entry difference between (I - C)^{-1} M and the dense inverse of Q,
    /// recorded by the verification pass
    pub residual: f64,
}

/// Builds and verifies the conditional-form pair (C, M) for the `tar-c` and
/// `tar-s` families with nugget tau2 = delta * sigma2.
///
/// Verification is dense (two n x n inversions), so this is a diagnostic for
/// moderate n, not a fitting path. The four checks: C has a zero diagonal, M
/// is strictly positive, c_ij / m_ii is symmetric, and (I - C)^{-1} M matches
/// Q^{-1} to 1e-8 in the max norm.
pub fn car_representation(
    g: &AdjacencyGraph,
    family: Family,
    delta: f64,
    sigma2: f64,
) -> Result<CarRepresentation> {
    check_scale(delta, sigma2, "delta")?;
    check_delta(delta)?;
    let n = g.n();
    let tau2 = delta * sigma2;
    let weight = 1.0 / tau2 + 1.0 / sigma2;

    let (c, m_diag, q) = match family {
        Family::TarC => {
            let ratio = tau2 / (tau2 + sigma2);
            let c = g.neighbor_average().scaled(ratio);
            let m_diag: Vec<f64> = g.degrees().iter().map(|&d| 1.0 / (weight * d)).collect();
            (c, m_diag, precision_tar_c(g, delta, sigma2)?)
        }
        Family::TarS => {
            let a = g.neighbor_average();
            let ata = a.transpose().matmul(&a)?;
            let d1 = ata.diagonal();
            let neg_d1: Vec<f64> = d1.iter().map(|&v| -v).collect();
            let d2 = ata.add(&SparseMatrix::from_diagonal(&neg_d1))?;
            let dvec: Vec<f64> = d1.iter().map(|&v| weight + v / sigma2).collect();
            let r = a
                .add(&a.transpose())?
                .add(&d2.scaled(-1.0))?
                .scaled(1.0 / sigma2);
            let c = SparseMatrix::from_triplets(
                n,
                n,
                r.triplets().map(|(i, j, v)| (i, j, v / dvec[i])),
            )?;
            let m_diag: Vec<f64> = dvec.iter().map(|&v| 1.0 / v).collect();
            (c, m_diag, precision_tar_s(g, delta, sigma2)?)
        }
        other => {
            return Err(Error::InvalidInput(format!(
                "the conditional-form decomposition is defined for tar-c and tar-s, not {other}"
            )))
        }
    };

    for i in 0..n {
        if c.get(i, i).abs() > 1e-14 {
            return Err(Error::RepresentationMismatch {
                residual: c.get(i, i).abs(),
            });
        }
        if !(m_diag[i] > 0.0) {
            return Err(Error::RepresentationMismatch { residual: f64::NAN });
        }
    }
    for (i, j, v) in c.triplets() {
        if i == j {
            continue;
        }
        let lhs = v / m_diag[i];
        let rhs = c.get(j, i) / m_diag[j];
        if (lhs - rhs).abs() > 1e-10 * lhs.abs().max(1.0) {
            return Err(Error::RepresentationMismatch {
                residual: (lhs - rhs).abs(),
            });
        }
    }

    let q_inv = q
        .to_dense()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite {
            index: 0,
            pivot: f64::NAN,
        })?
        .inverse();
    let i_minus_c = DMatrix::identity(n, n) - c.to_dense();
    let reproduced = i_minus_c
        .try_inverse()
        .ok_or(Error::RepresentationMismatch {
            residual: f64::INFINITY,
        })?
        * DMatrix::from_diagonal(&DVector::from_vec(m_diag.clone()));
    let residual = (reproduced - q_inv).amax();
    if !(residual < 1e-8) {
        return Err(Error::RepresentationMismatch { residual });
    }

    Ok(CarRepresentation { c, m_diag, residual })
}

/// Geometric-series split of a covariance: Sigma(theta, sigma2 = 1) equals
/// (sum_k coeff^k A^k) * diag(scale_diag) when |coeff| < 1, with A the
/// row-normalized adjacency.
#[derive(Clone, Debug)]
pub struct SeriesParts {
    pub coeff: f64,
    pub scale_diag: Vec<f64>,
}

#[derive(Clone, Debug)]
struct NngpParts {
    sets: DirectedNeighborSets,
    factors: NngpFactors,
}

/// A family plus its validated parameter grid, ready for posterior scans.
/// Construction checks every grid value up front (positivity for the delta
/// families, the spectral interval for `car`, (-1, 1) for `sar`) so fitting
/// never stumbles on an improper candidate.
#[derive(Clone, Debug)]
pub struct PrecisionModel {
    family: Family,
    graph: Option<Arc<AdjacencyGraph>>,
    nngp: Option<NngpParts>,
    grid: Vec<f64>,
    rho_range: Option<(f64, f64)>,
}

impl PrecisionModel {
    pub fn new(family: Family, graph: Arc<AdjacencyGraph>, grid: Vec<f64>) -> Result<Self> {
        if family == Family::NngpTar {
            return Err(Error::InvalidInput(
                "nngp-tar is built from directed neighbor sets; use PrecisionModel::new_nngp"
                    .into(),
            ));
        }
        if grid.is_empty() {
            return Err(Error::InvalidInput("empty parameter grid".into()));
        }
        let mut rho_range = None;
        match family {
            Family::TarC | Family::TarS => {
                for &v in &grid {
                    check_delta(v)?;
                }
            }
            Family::Car => {
                let (lo, hi) = graph.car_rho_range()?;
                for &v in &grid {
                    if !(v.is_finite() && v > lo && v < hi) {
                        return Err(Error::ParameterRange(format!(
                            "car autocorrelation {v} outside the valid interval ({lo}, {hi})"
                        )));
                    }
                }
                rho_range = Some((lo, hi));
            }
            Family::Sar => {
                for &v in &grid {
                    if !(v.is_finite() && v.abs() < 1.0) {
                        return Err(Error::ParameterRange(format!(
                            "sar autocorrelation {v} outside (-1, 1)"
                        )));
                    }
                }
            }
            Family::NngpTar => unreachable!(),
        }
        Ok(PrecisionModel {
            family,
            graph: Some(graph),
            nngp: None,
            grid,
            rho_range,
        })
    }

    pub fn new_nngp(
        sets: DirectedNeighborSets,
        coords: Vec<(f64, f64)>,
        corr: CorrelationSpec,
        grid: Vec<f64>,
    ) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::InvalidInput("empty parameter grid".into()));
        }
        for &v in &grid {
            check_delta(v)?;
        }
        let factors = nngp_factors(&sets, &coords, &corr)?;
        Ok(PrecisionModel {
            family: Family::NngpTar,
            graph: None,
            nngp: Some(NngpParts { sets, factors }),
            grid,
            rho_range: None,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn n(&self) -> usize {
        match (&self.graph, &self.nngp) {
            (Some(g), _) => g.n(),
            (None, Some(p)) => p.sets.n(),
            (None, None) => unreachable!(),
        }
    }

    pub fn graph(&self) -> Option<&Arc<AdjacencyGraph>> {
        self.graph.as_ref()
    }

    pub fn neighbor_sets(&self) -> Option<&DirectedNeighborSets> {
        self.nngp.as_ref().map(|p| &p.sets)
    }

    /// Valid autocorrelation interval, computed once at construction (`car`
    /// only).
    pub fn rho_range(&self) -> Option<(f64, f64)> {
        self.rho_range
    }

    /// Q(theta) at unit variance; multiply by 1/sigma2 for the full precision.
    pub fn precision_unit(&self, theta: f64) -> Result<SparseMatrix> {
        match self.family {
            Family::TarC => precision_tar_c(self.graph.as_ref().unwrap(), theta, 1.0),
            Family::TarS => precision_tar_s(self.graph.as_ref().unwrap(), theta, 1.0),
            Family::Car => precision_car(self.graph.as_ref().unwrap(), theta, 1.0),
            Family::Sar => precision_sar(self.graph.as_ref().unwrap(), theta, 1.0),
            Family::NngpTar => self.nngp.as_ref().unwrap().factors.precision(theta, 1.0),
        }
    }

    /// Geometric-series decomposition of the unit-variance covariance, when
    /// one exists: the conditional family contracts with coeff =
    /// delta/(1+delta), `car` with coeff = rho provided |rho| < 1. The
    /// simultaneous and directed families have squared operators with no such
    /// split and return None.
    pub fn series_parts(&self, theta: f64) -> Option<SeriesParts> {
        let g = self.graph.as_deref()?;
        match self.family {
            Family::TarC if theta > 0.0 => {
                let c = theta / (1.0 + theta);
                Some(SeriesParts {
                    coeff: c,
                    scale_diag: g.degrees().iter().map(|&d| c / d).collect(),
                })
            }
            Family::Car if theta.abs() < 1.0 => Some(SeriesParts {
                coeff: theta,
                scale_diag: g.degrees().iter().map(|&d| 1.0 / d).collect(),
            }),
            _ => None,
        }
    }
}

/// Truncated kernels whose auxiliary-variable integral has a closed form.
/// Each case pairs a Gaussian base density with box constraints whose widths
/// are driven by uniform variables; integrating the uniforms out multiplies
/// the base by exp(-r^2 / (2 s^2)) per constraint.
#[derive(Clone, Copy, Debug)]
pub enum TruncationKernel<'a> {
    /// Single-site conditional of the conditional family: base N(0, tau_i^2)
    /// on the centered value, one constraint tying it to the neighbor average
    /// with scale sigma_i^2 (both weighted by the region degree).
    TarCConditional {
        graph: &'a AdjacencyGraph,
        index: usize,
    },
    /// Joint kernel of the simultaneous family: base N(0, tau2 I), one
    /// constraint per region at scale sigma2.
    TarSJoint { graph: &'a AdjacencyGraph },
    /// Joint kernel of the directed nearest-neighbor family: base N(0, tau2 I),
    /// constraint i at scale sigma2 * f_i.
    NngpJoint {
        sets: &'a DirectedNeighborSets,
        coords: &'a [(f64, f64)],
        corr: &'a CorrelationSpec,
    },
}

#[derive(Clone, Copy, Debug)]
pub enum OracleMethod {
    /// Product midpoint rule over the unit cube; limited to 3 auxiliary
    /// dimensions.
    Midpoint { points: usize },
    /// Plain Monte Carlo over the unit cube with a fixed stream.
    MonteCarlo { draws: usize, seed: u64 },
}

/// Numeric estimate with its precision: a binomial standard error for Monte
/// Carlo, a deterministic resolution bound for the midpoint rule.
#[derive(Clone, Copy, Debug)]
pub struct OracleEstimate {
    pub value: f64,
    pub std_error: f64,
}

// (log base density, per-constraint (residual, scale^2))
fn kernel_parts(
    kernel: &TruncationKernel,
    delta: f64,
    sigma2: f64,
    y: &[f64],
) -> Result<(f64, Vec<(f64, f64)>)> {
    check_scale(delta, sigma2, "delta")?;
    check_delta(delta)?;
    let tau2 = delta * sigma2;
    match *kernel {
        TruncationKernel::TarCConditional { graph, index } => {
            let n = graph.n();
            if y.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "{} values for {} regions",
                    y.len(),
                    n
                )));
            }
            if index >= n {
                return Err(Error::InvalidInput(format!("region {index} out of range")));
            }
            let d = graph.degrees()[index];
            let (cols, vals) = graph.w().row(index);
            let avg = cols
                .iter()
                .zip(vals)
                .map(|(&j, &w)| w * y[j])
                .sum::<f64>()
                / d;
            let tau2_i = tau2 / d;
            let sigma2_i = sigma2 / d;
            let log_base = -y[index] * y[index] / (2.0 * tau2_i);
            Ok((log_base, vec![(y[index] - avg, sigma2_i)]))
        }
        TruncationKernel::TarSJoint { graph } => {
            let n = graph.n();
            if y.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "{} values for {} regions",
                    y.len(),
                    n
                )));
            }
            let a = graph.neighbor_average();
            let resid = DVector::from_column_slice(y) - a.matvec(&DVector::from_column_slice(y));
            let log_base = -y.iter().map(|v| v * v).sum::<f64>() / (2.0 * tau2);
            Ok((log_base, resid.iter().map(|&r| (r, sigma2)).collect()))
        }
        TruncationKernel::NngpJoint { sets, coords, corr } => {
            let n = sets.n();
            if y.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "{} values for {} locations",
                    y.len(),
                    n
                )));
            }
            let factors = nngp_factors(sets, coords, corr)?;
            let by = factors.b().matvec(&DVector::from_column_slice(y));
            let log_base = -y.iter().map(|v| v * v).sum::<f64>() / (2.0 * tau2);
            let cons = (0..n)
                .map(|i| (y[i] - by[i], sigma2 * factors.f()[i]))
                .collect();
            Ok((log_base, cons))
        }
    }
}

/// The kernel after the auxiliary uniforms are integrated out analytically:
/// base * prod_i exp(-r_i^2 / (2 s_i^2)).
pub fn truncation_kernel_closed_form(
    kernel: &TruncationKernel,
    delta: f64,
    sigma2: f64,
    y: &[f64],
) -> Result<f64> {
    let (log_base, cons) = kernel_parts(kernel, delta, sigma2, y)?;
    let log_trunc: f64 = cons.iter().map(|&(r, s2)| -r * r / (2.0 * s2)).sum();
    Ok((log_base + log_trunc).exp())
}

/// Integrates the auxiliary uniforms numerically instead of analytically.
/// A pure validation tool for tiny systems (at most 6 constraints): it walks
/// the unit cube and counts where every half-width bound sqrt(-2 s^2 ln u)
/// covers its residual.
pub fn truncation_density_oracle(
    kernel: &TruncationKernel,
    delta: f64,
    sigma2: f64,
    y: &[f64],
    method: OracleMethod,
) -> Result<OracleEstimate> {
    let (log_base, cons) = kernel_parts(kernel, delta, sigma2, y)?;
    let base = log_base.exp();
    let k = cons.len();
    if k > 6 {
        return Err(Error::InvalidDimension(format!(
            "oracle integration is limited to 6 auxiliary dimensions, got {k}"
        )));
    }
    let satisfied =
        |r: f64, s2: f64, u: f64| r * r < -2.0 * s2 * u.ln();
    match method {
        OracleMethod::Midpoint { points } => {
            if k > 3 {
                return Err(Error::InvalidInput(format!(
                    "midpoint quadrature is limited to 3 auxiliary dimensions, got {k}"
                )));
            }
            if points < 2 {
                return Err(Error::InvalidInput("need at least 2 quadrature points".into()));
            }
            let total = points.pow(k as u32);
            let mut hits = 0usize;
            let mut idx = vec![0usize; k];
            for _ in 0..total {
                let ok = cons.iter().zip(&idx).all(|(&(r, s2), &t)| {
                    let u = (t as f64 + 0.5) / points as f64;
                    satisfied(r, s2, u)
                });
                if ok {
                    hits += 1;
                }
                for slot in idx.iter_mut() {
                    *slot += 1;
                    if *slot < points {
                        break;
                    }
                    *slot = 0;
                }
            }
            Ok(OracleEstimate {
                value: base * hits as f64 / total as f64,
                // each axis can misclassify at most half a cell
                std_error: base * k as f64 / (2.0 * points as f64),
            })
        }
        OracleMethod::MonteCarlo { draws, seed } => {
            if draws == 0 {
                return Err(Error::InvalidInput("need at least one draw".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut hits = 0usize;
            for _ in 0..draws {
                let ok = cons
                    .iter()
                    .all(|&(r, s2)| satisfied(r, s2, rng.random::<f64>()));
                if ok {
                    hits += 1;
                }
            }
            let p = hits as f64 / draws as f64;
            Ok(OracleEstimate {
                value: base * p,
                std_error: base * (p * (1.0 - p) / draws as f64).sqrt(),
            })
        }
    }
}
