//! Trace records and the quantities used to check convergence claims.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algorithms::{ergodic_step_size, safe_step_size, NetworkState};
use crate::manifold::{
    gaussian_matrix, landing_field, project_to_stiefel, relative_gradient, singular_values,
    tangent_projection,
};
use crate::merit::{merit_value, MeritConstants};
use crate::problems::{Objective, ProblemInstance, ReferenceSolution};
use crate::{Error, Mat, Result};

/// One row of a trace. Field order is the column order of `trace.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: usize,
    /// `||sum_i grad f_i(x_i)||`.
    pub grad_norm_sum: f64,
    /// `||Λ(x̄)||` for the averaged objective.
    pub landing_norm_avg: f64,
    /// `sum_i ||x_i - x̄||`.
    pub consensus_x: f64,
    /// `||y - 1 ⊗ ȳ||`.
    pub consensus_y: f64,
    /// Mean over agents of `||x_i - Proj(x_i)||`.
    pub feasibility_avg: f64,
    /// Merit at the average iterate.
    pub merit_avg: f64,
    pub wall_time_s: f64,
    pub qr_svd_count: u64,
}

/// Receives trace records as a run progresses.
pub trait TraceSink {
    fn push(&mut self, rec: &TraceRecord) -> Result<()>;
}

impl TraceSink for Vec<TraceRecord> {
    fn push(&mut self, rec: &TraceRecord) -> Result<()> {
        Vec::push(self, *rec);
        Ok(())
    }
}

/// Discards every record.
pub struct NullSink;

impl TraceSink for NullSink {
    fn push(&mut self, _: &TraceRecord) -> Result<()> {
        Ok(())
    }
}

/// `||x - Proj(x)||_F = ||S - I||_F` from the singular values of `x`.
pub fn distance_to_manifold(x: &Mat) -> f64 {
    singular_values(x)
        .iter()
        .map(|s| (s - 1.0).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Metrics for the current state. A single-block state (centralized
/// landing) stands in for every agent. Costs one SVD per block.
pub fn record(
    state: &NetworkState,
    problem: &ProblemInstance,
    consts: &MeritConstants,
    wall_time_s: f64,
) -> Result<TraceRecord> {
    let params = consts.params();
    let n = problem.n();
    let (d, r) = problem.dims();
    let mut grad_sum = Mat::zeros(d, r);
    for i in 0..n {
        let xi = if state.n() == 1 {
            &state.x[0]
        } else {
            &state.x[i]
        };
        let g = problem.local(i)?.gradient(xi);
        grad_sum += relative_gradient(xi, &g)?;
    }
    let xbar = state.mean_x();
    let gbar = problem.global().gradient(&xbar);
    let field = landing_field(&xbar, &gbar, &params)?;
    let feas = state.x.iter().map(distance_to_manifold).sum::<f64>() / state.n() as f64;
    Ok(TraceRecord {
        k: state.iteration,
        grad_norm_sum: grad_sum.norm(),
        landing_norm_avg: field.norm(),
        consensus_x: state.consensus_x(),
        consensus_y: state.consensus_y(),
        feasibility_avg: feas,
        merit_avg: merit_value(&xbar, problem.global(), consts),
        wall_time_s,
        qr_svd_count: state.factorizations,
    })
}

fn theta(sigma: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&sigma) {
        return Err(Error::Parameter(format!(
            "sigma_W must lie in [0, 1), got {sigma}"
        )));
    }
    let s2 = sigma * sigma;
    Ok((1.0 + s2) / (1.0 - s2))
}

/// The 2x2 matrix driving the consensus and tracking errors:
///
/// ```text
/// [ (1+σ²)/2 + 4L'²α²Θ   8Θ       ]
/// [ Θα²L'²               (1+σ²)/2 ]
/// ```
pub fn build_gtilde(alpha: f64, l_prime: f64, sigma: f64) -> Result<Mat> {
    let th = theta(sigma)?;
    let h = (1.0 + sigma * sigma) / 2.0;
    let a2l2 = alpha * alpha * l_prime * l_prime;
    Ok(Mat::from_row_slice(
        2,
        2,
        &[h + 4.0 * a2l2 * th, 8.0 * th, th * a2l2, h],
    ))
}

/// The 3x3 matrix of the local linear-rate recursion:
///
/// ```text
/// [ (1+σ²)/2 + 4L'²α²Θ   8(1+α²L'²)Θ          96α²L'²Θ/ρ²  ]
/// [ α²L'²Θ               (1+σ²)/2             0            ]
/// [ 0                    α²L'² + αL'C²/ρ      1 - αρμ'/4   ]
/// ```
pub fn build_m(
    alpha: f64,
    l_prime: f64,
    sigma: f64,
    rho: f64,
    mu_prime: f64,
    c: f64,
) -> Result<Mat> {
    let th = theta(sigma)?;
    let h = (1.0 + sigma * sigma) / 2.0;
    let a2l2 = alpha * alpha * l_prime * l_prime;
    let m = Mat::from_row_slice(
        3,
        3,
        &[
            h + 4.0 * a2l2 * th,
            8.0 * (1.0 + a2l2) * th,
            96.0 * a2l2 * th / (rho * rho),
            a2l2 * th,
            h,
            0.0,
            0.0,
            a2l2 + alpha * l_prime * c * c / rho,
            1.0 - alpha * rho * mu_prime / 4.0,
        ],
    );
    if m.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::Parameter(
            "rate matrix has negative or non-finite entries".into(),
        ));
    }
    Ok(m)
}

/// Largest eigenvalue modulus via dense eigenvalues.
pub fn spectral_radius_dense(m: &Mat) -> Result<f64> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::Dimension(
            "spectral radius needs a square matrix".into(),
        ));
    }
    Ok(m.clone()
        .complex_eigenvalues()
        .iter()
        .fold(0.0f64, |a, z| a.max(z.norm())))
}

/// Spectral radius of a non-negative matrix by power iteration, falling back
/// to dense eigenvalues when the iteration stalls.
pub fn spectral_radius(m: &Mat) -> Result<f64> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::Dimension(
            "spectral radius needs a square matrix".into(),
        ));
    }
    if m.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::Parameter(
            "power iteration needs a finite non-negative matrix".into(),
        ));
    }
    let n = m.nrows();
    let mut v = nalgebra::DVector::from_element(n, 1.0 / (n as f64).sqrt());
    for _ in 0..100_000 {
        let w = m * &v;
        let lam = w.norm();
        if lam == 0.0 {
            break;
        }
        let resid = (&w - &v * lam).norm();
        if resid <= 1e-13 * lam.max(1.0) {
            return Ok(lam);
        }
        v = w / lam;
    }
    spectral_radius_dense(m)
}

/// Least-squares fit of `log(gap_k) = a + slope * k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
    pub k_first: f64,
    pub k_last: f64,
}

/// Gaps that are non-finite or below `1e-14` are dropped; at least 20 must remain.
/// A constant log-gap gives slope 0 and `r_squared` 0.
pub fn fit_linear_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    let kept: Vec<(f64, f64)> = points
        .iter()
        .filter(|(k, g)| k.is_finite() && g.is_finite() && *g >= 1e-14)
        .map(|&(k, g)| (k, g.ln()))
        .collect();
    if kept.len() < 20 {
        return Err(Error::InsufficientData(format!(
            "{} usable points, need at least 20",
            kept.len()
        )));
    }
    let n = kept.len() as f64;
    let kx = kept.iter().map(|p| p.0).sum::<f64>() / n;
    let ky = kept.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = kept.iter().map(|p| (p.0 - kx).powi(2)).sum();
    let sxy: f64 = kept.iter().map(|p| (p.0 - kx) * (p.1 - ky)).sum();
    let syy: f64 = kept.iter().map(|p| (p.1 - ky).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData(
            "all points share one iteration index".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = ky - slope * kx;
    let r_squared = if syy == 0.0 {
        0.0
    } else {
        let ss_res: f64 = kept
            .iter()
            .map(|p| (p.1 - intercept - slope * p.0).powi(2))
            .sum();
        1.0 - ss_res / syy
    };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        points: kept.len(),
        k_first: kept[0].0,
        k_last: kept[kept.len() - 1].0,
    })
}

/// Step-size premises for the averaged-stationarity bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErgodicPremise {
    pub alpha: f64,
    pub alpha_safe: f64,
    pub alpha_limit: f64,
    pub rho: f64,
    pub l_prime: f64,
    pub sigma: f64,
    pub n: usize,
}

impl ErgodicPremise {
    pub fn new(alpha: f64, consts: &MeritConstants, sigma: f64, n: usize) -> Result<Self> {
        Ok(Self {
            alpha,
            alpha_safe: safe_step_size(
                consts.bounds.local_relative_grad,
                consts.l_prime,
                consts.lambda,
                consts.epsilon,
                sigma,
                n,
            )?,
            alpha_limit: ergodic_step_size(consts, sigma)?,
            rho: consts.rho,
            l_prime: consts.l_prime,
            sigma,
            n,
        })
    }

    pub fn satisfied(&self) -> bool {
        self.alpha > 0.0 && self.alpha <= self.alpha_safe && self.alpha < self.alpha_limit
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErgodicVerdict {
    Holds,
    Violated,
    PremiseViolated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErgodicReport {
    pub horizon: usize,
    /// `sum_{k<K} ||Λ(x̄_k)||² / K`.
    pub lhs: f64,
    /// `4 (L(x̄_0) - L(x̄_K)) / (α ρ K)`.
    pub rhs: f64,
    pub ratio: f64,
    /// `sum_{k<=K} consensus_x² / K`, an upper bound on the stacked consensus error.
    pub consensus_lhs: f64,
    pub consensus_rhs: f64,
    pub premises_met: bool,
    pub verdict: ErgodicVerdict,
}

/// Checks the averaged-stationarity bound on the first `horizon` iterations
/// of a per-iteration trace. A violated premise is reported as such and the
/// bound itself is not judged.
pub fn ergodic_check(
    trace: &[TraceRecord],
    horizon: usize,
    premise: &ErgodicPremise,
) -> Result<ErgodicReport> {
    if horizon == 0 || trace.len() <= horizon {
        return Err(Error::InsufficientData(format!(
            "horizon {horizon} needs {} records, trace has {}",
            horizon + 1,
            trace.len()
        )));
    }
    if let Some(bad) = trace[..=horizon]
        .iter()
        .enumerate()
        .find(|(j, r)| r.k != *j)
    {
        return Err(Error::InsufficientData(format!(
            "trace is not recorded every iteration (position {} holds k = {})",
            bad.0, bad.1.k
        )));
    }
    let kf = horizon as f64;
    let lhs = trace[..horizon]
        .iter()
        .map(|r| r.landing_norm_avg.powi(2))
        .sum::<f64>()
        / kf;
    let drop = trace[0].merit_avg - trace[horizon].merit_avg;
    let rhs = 4.0 * drop / (premise.alpha * premise.rho * kf);
    let s2 = premise.sigma * premise.sigma;
    let consensus_lhs = trace[1..=horizon]
        .iter()
        .map(|r| r.consensus_x.powi(2))
        .sum::<f64>()
        / kf;
    let consensus_rhs = (1.0 + s2).powi(2) / (1.0 - s2).powi(4)
        * 512.0
        * premise.n as f64
        * premise.alpha.powi(3)
        * premise.l_prime.powi(2)
        / premise.rho
        * drop
        / kf;
    let premises_met = premise.satisfied();
    let verdict = if !premises_met {
        ErgodicVerdict::PremiseViolated
    } else if lhs <= rhs * (1.0 + 1e-6) {
        ErgodicVerdict::Holds
    } else {
        ErgodicVerdict::Violated
    };
    Ok(ErgodicReport {
        horizon,
        lhs,
        rhs,
        ratio: lhs / rhs,
        consensus_lhs,
        consensus_rhs,
        premises_met,
        verdict,
    })
}

/// Empirical Polyak-Łojasiewicz constant near a solution set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlFit {
    /// Smallest `||grad f||² / (2 (f - f*))` over the samples.
    pub min_ratio: f64,
    pub samples: usize,
    pub radius: f64,
}

/// Samples feasible points within `radius` of the solution set and records
/// the smallest PŁ ratio. Points whose gap is below `1e-12 (1 + |f*|)` are skipped.
pub fn fit_pl_constant(
    objective: &dyn Objective,
    reference: &ReferenceSolution,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<PlFit> {
    if !(radius > 0.0) || samples == 0 {
        return Err(Error::Parameter(
            "need a positive radius and sample count".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, r) = reference.x.shape();
    let mut best = f64::INFINITY;
    let mut used = 0;
    let floor = 1e-12 * (1.0 + reference.value.abs());
    let mut attempts = 0;
    while used < samples && attempts < 20 * samples {
        attempts += 1;
        let v = gaussian_matrix(d, r, &mut rng);
        let xi = tangent_projection(&reference.x, &v)?;
        let t = radius * rng.random::<f64>();
        let x = project_to_stiefel(&(&reference.x + &xi * (t / xi.norm())))?.into_inner();
        if reference.distance(&x) > radius {
            continue;
        }
        let gap = objective.value(&x) - reference.value;
        if gap <= floor {
            continue;
        }
        let g = relative_gradient(&x, &objective.gradient(&x))?;
        best = best.min(g.norm_squared() / (2.0 * gap));
        used += 1;
    }
    if used == 0 {
        return Err(Error::InsufficientData(
            "no usable sample near the solution set".into(),
        ));
    }
    Ok(PlFit {
        min_ratio: best,
        samples: used,
        radius,
    })
}
