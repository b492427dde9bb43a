//! Decentralized retraction-free gradient tracking, its centralized
//! counterpart and a QR-retraction baseline.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{record, TraceRecord, TraceSink};
use crate::manifold::{
    axpy, feasibility_residual, landing_field, qr_retraction, relative_gradient,
    tangent_projection, LandingParams,
};
use crate::merit::MeritConstants;
use crate::network::MixingMatrix;
use crate::problems::ProblemInstance;
use crate::{Error, Mat, Result};

/// Iterates with a Frobenius norm above this are declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e6;

/// Per-agent work (`d * d * r * n` flops) above which agents run in parallel.
const PARALLEL_WORK: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Drfgt,
    CentralizedLanding,
    RetractionDgt,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Drfgt => "drfgt",
            Algorithm::CentralizedLanding => "centralized_landing",
            Algorithm::RetractionDgt => "retraction_dgt",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().replace('-', "_").as_str() {
            "drfgt" => Ok(Algorithm::Drfgt),
            "centralized_landing" | "landing" => Ok(Algorithm::CentralizedLanding),
            "retraction_dgt" => Ok(Algorithm::RetractionDgt),
            other => Err(Error::Parameter(format!("unknown algorithm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub max_iters: usize,
    pub tol_grad: f64,
    pub tol_consensus: f64,
    /// Mixing rounds per iteration; only the retraction baseline uses more than one.
    pub consensus_rounds: usize,
    /// Record every `trace_stride`-th iteration (the first and last are always kept).
    pub trace_stride: usize,
}

impl AlgorithmConfig {
    pub fn validate(&self) -> Result<()> {
        self.params()?;
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::Parameter(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.tol_grad >= 0.0 && self.tol_consensus >= 0.0) {
            return Err(Error::Parameter("tolerances must be non-negative".into()));
        }
        if self.consensus_rounds == 0 {
            return Err(Error::Parameter(
                "consensus_rounds must be at least 1".into(),
            ));
        }
        if self.trace_stride == 0 {
            return Err(Error::Parameter("trace_stride must be at least 1".into()));
        }
        Ok(())
    }

    pub fn params(&self) -> Result<LandingParams> {
        LandingParams::new(self.lambda, self.epsilon)
    }
}

/// Stacked agent states. `landing` holds the direction fed to the tracker at
/// the previous iteration: the landing field for the retraction-free methods,
/// the relative gradient for the retraction baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub x: Vec<Mat>,
    pub y: Vec<Mat>,
    pub landing: Vec<Mat>,
    pub iteration: usize,
    /// QR or SVD factorizations performed by the optimization itself.
    pub factorizations: u64,
}

impl NetworkState {
    /// Every agent starts at `x0` with zero tracker and zero previous direction.
    pub fn new(x0: &Mat, n: usize) -> Self {
        let zero = Mat::zeros(x0.nrows(), x0.ncols());
        Self {
            x: vec![x0.clone(); n],
            y: vec![zero.clone(); n],
            landing: vec![zero; n],
            iteration: 0,
            factorizations: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn mean_x(&self) -> Mat {
        mean(&self.x)
    }

    pub fn mean_y(&self) -> Mat {
        mean(&self.y)
    }

    /// `sum_i ||x_i - x̄||`.
    pub fn consensus_x(&self) -> f64 {
        let m = self.mean_x();
        self.x.iter().map(|x| (x - &m).norm()).sum()
    }

    /// `||y - 1 ⊗ ȳ||_F` over the stacked trackers.
    pub fn consensus_y(&self) -> f64 {
        let m = self.mean_y();
        self.y
            .iter()
            .map(|y| (y - &m).norm_squared())
            .sum::<f64>()
            .sqrt()
    }
}

pub(crate) fn mean(blocks: &[Mat]) -> Mat {
    let mut m = blocks[0].clone();
    for b in &blocks[1..] {
        m += b;
    }
    m / blocks.len() as f64
}

fn check_divergence(x: &[Mat], iteration: usize) -> Result<()> {
    for xi in x {
        // NaN and infinity fail the comparison too
        if !(xi.norm_squared() <= DIVERGENCE_NORM * DIVERGENCE_NORM) {
            let max_entry = xi.iter().fold(0.0f64, |a, v| {
                if v.is_finite() {
                    a.max(v.abs())
                } else {
                    f64::INFINITY
                }
            });
            return Err(Error::Divergence {
                iteration,
                max_entry,
            });
        }
    }
    Ok(())
}

fn check_network(state: &NetworkState, problem: &ProblemInstance, w: &MixingMatrix) -> Result<()> {
    if state.n() != problem.n() || w.n() != problem.n() {
        return Err(Error::Dimension(format!(
            "state has {} agents, problem {}, mixing matrix {}",
            state.n(),
            problem.n(),
            w.n()
        )));
    }
    Ok(())
}

fn per_agent<F>(problem: &ProblemInstance, f: F) -> Result<Vec<Mat>>
where
    F: Fn(usize) -> Result<Mat> + Sync + Send,
{
    let (d, r) = problem.dims();
    let n = problem.n();
    if n > 1 && d * d * r * n >= PARALLEL_WORK {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

fn landing_fields(
    problem: &ProblemInstance,
    x: &[Mat],
    params: &LandingParams,
) -> Result<Vec<Mat>> {
    per_agent(problem, |i| {
        let g = problem.local(i)?.gradient(&x[i]);
        landing_field(&x[i], &g, params)
    })
}

/// One round of retraction-free gradient tracking, in place:
///
/// ```text
/// x_i <- sum_j W_ij x_j - alpha y_i
/// y_i <- sum_j W_ij y_j - Λ_i(old x_i) + Λ_i(new x_i)
/// ```
pub fn drfgt_step(
    state: &mut NetworkState,
    problem: &ProblemInstance,
    w: &MixingMatrix,
    cfg: &AlgorithmConfig,
) -> Result<()> {
    check_network(state, problem, w)?;
    let params = cfg.params()?;
    let mut x = w.mix(&state.x)?;
    for (xi, yi) in x.iter_mut().zip(&state.y) {
        axpy(xi, -cfg.alpha, yi);
    }
    check_divergence(&x, state.iteration + 1)?;
    let fields = landing_fields(problem, &x, &params)?;
    let mut y = w.mix(&state.y)?;
    for ((yi, old), new) in y.iter_mut().zip(&state.landing).zip(&fields) {
        *yi -= old;
        *yi += new;
    }
    state.x = x;
    state.y = y;
    state.landing = fields;
    state.iteration += 1;
    Ok(())
}

/// `x - alpha Λ(x)` for the averaged objective.
pub fn centralized_landing_step(
    x: &Mat,
    problem: &ProblemInstance,
    params: &LandingParams,
    alpha: f64,
) -> Result<Mat> {
    let g = problem.global().gradient(x);
    let field = landing_field(x, &g, params)?;
    let mut out = x.clone();
    axpy(&mut out, -alpha, &field);
    Ok(out)
}

/// Decentralized gradient tracking with a QR retraction per agent:
///
/// ```text
/// x_i <- qr(x_i + P_{x_i}((W^t x)_i - x_i - alpha y_i))
/// y_i <- (W^t y)_i - grad f_i(old x_i) + grad f_i(new x_i)
/// ```
pub fn retraction_dgt_step(
    state: &mut NetworkState,
    problem: &ProblemInstance,
    w: &MixingMatrix,
    cfg: &AlgorithmConfig,
) -> Result<()> {
    check_network(state, problem, w)?;
    for (i, xi) in state.x.iter().enumerate() {
        let res = feasibility_residual(xi);
        if res > 1e-10 {
            return Err(Error::Precondition(format!(
                "retraction baseline needs feasible iterates, agent {i} has residual {res:e}"
            )));
        }
    }
    let mixed = w.mix_rounds(&state.x, cfg.consensus_rounds)?;
    let x = per_agent(problem, |i| {
        let mut v = &mixed[i] - &state.x[i];
        axpy(&mut v, -cfg.alpha, &state.y[i]);
        let step = tangent_projection(&state.x[i], &v)?;
        Ok(qr_retraction(&state.x[i], &step)?.into_inner())
    })?;
    state.factorizations += problem.n() as u64;
    check_divergence(&x, state.iteration + 1)?;
    let grads = per_agent(problem, |i| {
        let g = problem.local(i)?.gradient(&x[i]);
        relative_gradient(&x[i], &g)
    })?;
    let mut y = w.mix_rounds(&state.y, cfg.consensus_rounds)?;
    for ((yi, old), new) in y.iter_mut().zip(&state.landing).zip(&grads) {
        *yi -= old;
        *yi += new;
    }
    state.x = x;
    state.y = y;
    state.landing = grads;
    state.iteration += 1;
    Ok(())
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&sigma) {
        return Err(Error::Parameter(format!(
            "sigma_W must lie in [0, 1), got {sigma}"
        )));
    }
    Ok(())
}

/// Largest step that keeps every agent in the safety region, the minimum of
///
/// ```text
/// (1-σ)² ε / (20 √n (G + λε(1+ε)))
/// λ ε² (1-σ)² / (16 L' (G + λε(1+ε)))
/// 1 / (2λ)
/// λ ε (1-ε) / (2 (G² + λ²(1+ε)ε² + ε⁴λ²/16))
/// ```
pub fn safe_step_size(
    g: f64,
    l_prime: f64,
    lambda: f64,
    epsilon: f64,
    sigma: f64,
    n: usize,
) -> Result<f64> {
    LandingParams::new(lambda, epsilon)?;
    check_sigma(sigma)?;
    if !(g >= 0.0 && g.is_finite() && l_prime > 0.0 && l_prime.is_finite()) {
        return Err(Error::Parameter(format!(
            "need G >= 0 and L' > 0, got G = {g}, L' = {l_prime}"
        )));
    }
    if n == 0 {
        return Err(Error::Parameter("need at least one agent".into()));
    }
    let (lam, eps) = (lambda, epsilon);
    let gap = (1.0 - sigma).powi(2);
    let reach = g + lam * eps * (1.0 + eps);
    let t1 = gap * eps / (20.0 * (n as f64).sqrt() * reach);
    let t2 = lam * eps * eps * gap / (16.0 * l_prime * reach);
    let t3 = 1.0 / (2.0 * lam);
    let t4 = lam * eps * (1.0 - eps)
        / (2.0 * (g * g + lam * lam * (1.0 + eps) * eps * eps + eps.powi(4) * lam * lam / 16.0));
    Ok(t1.min(t2).min(t3).min(t4))
}

/// `(1-σ²)² / ((1+σ²) 16 L')`, below which the consensus/tracking error
/// recursion is contractive.
pub fn stable_step_size(l_prime: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if !(l_prime > 0.0 && l_prime.is_finite()) {
        return Err(Error::Parameter(format!(
            "L' must be positive, got {l_prime}"
        )));
    }
    let s2 = sigma * sigma;
    Ok((1.0 - s2).powi(2) / ((1.0 + s2) * 16.0 * l_prime))
}

/// Upper limit for the averaged-stationarity bound: the minimum of the
/// stability threshold, `cbrt(ρ(1-σ²)⁴ / ((1+σ²)² C²)) / (4L')` and `ρ / (8L')`.
pub fn ergodic_step_size(consts: &MeritConstants, sigma: f64) -> Result<f64> {
    let stable = stable_step_size(consts.l_prime, sigma)?;
    let s2 = sigma * sigma;
    let lp = consts.l_prime;
    let cube = (consts.rho * (1.0 - s2).powi(4) / ((1.0 + s2).powi(2) * consts.c * consts.c))
        .cbrt()
        / (4.0 * lp);
    Ok(stable.min(cube).min(consts.rho / (8.0 * lp)))
}

/// Step limit for the local linear rate; needs `mu'`.
///
/// With `Θ = (1+σ²)/(1-σ²)` and `Φ = 4L'/(ρμ') + 8L'C²/(ρ²μ')` this is the minimum of
/// `ρ/(2L')`, `(1-σ²)/(ρμ')`, `√(1-σ²) / (4L'√Θ (1 + 12Φ/ρ²)^{1/4})` and `(1-σ²)/(16L'Θ)`.
pub fn linear_rate_step_size(consts: &MeritConstants, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    let mp = consts
        .mu_prime
        .ok_or_else(|| Error::Parameter("linear-rate step size needs mu".into()))?;
    let (lp, rho, c) = (consts.l_prime, consts.rho, consts.c);
    let s2 = sigma * sigma;
    let theta = (1.0 + s2) / (1.0 - s2);
    let phi = 4.0 * lp / (rho * mp) + 8.0 * lp * c * c / (rho * rho * mp);
    let a = rho / (2.0 * lp);
    let b = (1.0 - s2) / (rho * mp);
    let d =
        (1.0 - s2).sqrt() / (4.0 * lp * theta.sqrt() * (1.0 + 12.0 * phi / (rho * rho)).powf(0.25));
    let e = (1.0 - s2) / (16.0 * lp * theta);
    Ok(a.min(b).min(d).min(e))
}

/// All step-size limits for one problem, network and parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizeBounds {
    pub safe: f64,
    pub stable: f64,
    pub ergodic: f64,
    pub linear: Option<f64>,
}

pub fn step_size_bounds(consts: &MeritConstants, sigma: f64, n: usize) -> Result<StepSizeBounds> {
    Ok(StepSizeBounds {
        safe: safe_step_size(
            consts.bounds.local_relative_grad,
            consts.l_prime,
            consts.lambda,
            consts.epsilon,
            sigma,
            n,
        )?,
        stable: stable_step_size(consts.l_prime, sigma)?,
        ergodic: ergodic_step_size(consts, sigma)?,
        linear: consts
            .mu_prime
            .map(|_| linear_rate_step_size(consts, sigma))
            .transpose()?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum ExitReason {
    Converged,
    MaxIters,
    Diverged { iteration: usize, max_entry: f64 },
}

/// Steps one algorithm and keeps the bookkeeping needed for traces.
pub struct Solver<'a> {
    algorithm: Algorithm,
    problem: &'a ProblemInstance,
    mixing: &'a MixingMatrix,
    cfg: AlgorithmConfig,
    params: LandingParams,
    state: NetworkState,
    elapsed: f64,
    metric_projections: u64,
}

impl<'a> Solver<'a> {
    pub fn new(
        algorithm: Algorithm,
        problem: &'a ProblemInstance,
        mixing: &'a MixingMatrix,
        cfg: &AlgorithmConfig,
        x0: &Mat,
    ) -> Result<Self> {
        cfg.validate()?;
        if x0.shape() != problem.dims() {
            return Err(Error::Dimension(format!(
                "initial point is {:?}, problem is {:?}",
                x0.shape(),
                problem.dims()
            )));
        }
        if !x0.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("initial point".into()));
        }
        if mixing.n() != problem.n() {
            return Err(Error::Dimension(format!(
                "mixing matrix has {} agents, problem has {}",
                mixing.n(),
                problem.n()
            )));
        }
        let params = cfg.params()?;
        let state = match algorithm {
            Algorithm::CentralizedLanding => {
                let mut s = NetworkState::new(x0, 1);
                let g = problem.global().gradient(x0);
                let f = landing_field(x0, &g, &params)?;
                s.y[0] = f.clone();
                s.landing[0] = f;
                s
            }
            _ => NetworkState::new(x0, problem.n()),
        };
        Ok(Self {
            algorithm,
            problem,
            mixing,
            cfg: *cfg,
            params,
            state,
            elapsed: 0.0,
            metric_projections: 0,
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn state(&self) -> &NetworkState {
        &self.state
    }

    pub fn config(&self) -> &AlgorithmConfig {
        &self.cfg
    }

    /// Seconds spent inside optimization steps.
    pub fn elapsed(&self) -> f64 {
        self.elapsed
    }

    pub fn step(&mut self) -> Result<()> {
        let start = Instant::now();
        let out = match self.algorithm {
            Algorithm::Drfgt => drfgt_step(&mut self.state, self.problem, self.mixing, &self.cfg),
            Algorithm::RetractionDgt => {
                retraction_dgt_step(&mut self.state, self.problem, self.mixing, &self.cfg)
            }
            Algorithm::CentralizedLanding => self.centralized_step(),
        };
        self.elapsed += start.elapsed().as_secs_f64();
        out
    }

    fn centralized_step(&mut self) -> Result<()> {
        let s = &mut self.state;
        let mut x = s.x[0].clone();
        axpy(&mut x, -self.cfg.alpha, &s.y[0]);
        check_divergence(std::slice::from_ref(&x), s.iteration + 1)?;
        let g = self.problem.global().gradient(&x);
        let f = landing_field(&x, &g, &self.params)?;
        s.x[0] = x;
        s.y[0] = f.clone();
        s.landing[0] = f;
        s.iteration += 1;
        Ok(())
    }

    /// `(||Λ(x̄)||, sum_i ||x_i - x̄||)` for the averaged objective.
    pub fn stationarity(&self) -> Result<(f64, f64)> {
        let m = self.state.mean_x();
        let g = self.problem.global().gradient(&m);
        let f = landing_field(&m, &g, &self.params)?;
        Ok((f.norm(), self.state.consensus_x()))
    }

    pub fn converged(&self) -> Result<bool> {
        let (field, consensus) = self.stationarity()?;
        Ok(field <= self.cfg.tol_grad && consensus <= self.cfg.tol_consensus)
    }

    pub fn record(&mut self, consts: &MeritConstants) -> Result<TraceRecord> {
        let rec = record(&self.state, self.problem, consts, self.elapsed)?;
        self.metric_projections += self.state.n() as u64;
        Ok(rec)
    }

    /// SVDs spent on metrics, kept apart from the optimization count.
    pub fn metric_projections(&self) -> u64 {
        self.metric_projections
    }

    pub fn into_state(self) -> NetworkState {
        self.state
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub algorithm: Algorithm,
    pub exit: ExitReason,
    pub iterations: usize,
    pub state: NetworkState,
    pub last: TraceRecord,
    pub wall_time_s: f64,
    pub metric_projections: u64,
    pub warnings: Vec<String>,
}

/// Step-size warnings for `alpha` against the safety and stability limits.
pub fn step_size_warnings(
    alpha: f64,
    consts: &MeritConstants,
    sigma: f64,
    n: usize,
) -> Result<Vec<String>> {
    let b = step_size_bounds(consts, sigma, n)?;
    let mut out = Vec::new();
    if alpha > b.safe {
        out.push(format!(
            "alpha = {alpha:e} exceeds the safe step {:e}; iterates may leave the safety region",
            b.safe
        ));
    }
    if alpha > b.stable {
        out.push(format!(
            "alpha = {alpha:e} exceeds the stability threshold {:e}",
            b.stable
        ));
    }
    Ok(out)
}

/// Runs until convergence, `max_iters` or divergence.
///
/// `observer` sees the state after initialization and after every step.
pub fn run_with_observer(
    algorithm: Algorithm,
    problem: &ProblemInstance,
    w: &MixingMatrix,
    cfg: &AlgorithmConfig,
    x0: &Mat,
    consts: &MeritConstants,
    sink: &mut dyn TraceSink,
    observer: &mut dyn FnMut(&NetworkState) -> Result<()>,
) -> Result<RunOutcome> {
    let mut solver = Solver::new(algorithm, problem, w, cfg, x0)?;
    let warnings = step_size_warnings(cfg.alpha, consts, w.sigma(), problem.n())?;
    for msg in &warnings {
        log::warn!("{msg}");
    }
    let mut last = solver.record(consts)?;
    sink.push(&last)?;
    observer(solver.state())?;
    let mut exit = ExitReason::MaxIters;
    if solver.converged()? {
        exit = ExitReason::Converged;
    }
    while exit == ExitReason::MaxIters && solver.state().iteration < cfg.max_iters {
        match solver.step() {
            Ok(()) => {}
            Err(Error::Divergence {
                iteration,
                max_entry,
            }) => {
                exit = ExitReason::Diverged {
                    iteration,
                    max_entry,
                };
                break;
            }
            Err(e) => return Err(e),
        }
        observer(solver.state())?;
        let k = solver.state().iteration;
        let done = solver.converged()?;
        if done {
            exit = ExitReason::Converged;
        }
        if done || k % cfg.trace_stride == 0 || k == cfg.max_iters {
            last = solver.record(consts)?;
            sink.push(&last)?;
        }
    }
    Ok(RunOutcome {
        algorithm,
        exit,
        iterations: solver.state().iteration,
        last,
        wall_time_s: solver.elapsed(),
        metric_projections: solver.metric_projections(),
        state: solver.into_state(),
        warnings,
    })
}

pub fn run(
    algorithm: Algorithm,
    problem: &ProblemInstance,
    w: &MixingMatrix,
    cfg: &AlgorithmConfig,
    x0: &Mat,
    consts: &MeritConstants,
    sink: &mut dyn TraceSink,
) -> Result<RunOutcome> {
    run_with_observer(
        algorithm,
        problem,
        w,
        cfg,
        x0,
        consts,
        sink,
        &mut |_| Ok(()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::random_stiefel;
    use crate::merit::estimate_constants;
    use crate::problems::{generate_planted_pca, PlantedPcaSpec, Sign};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize) -> (ProblemInstance, MixingMatrix, Mat) {
        let pca = generate_planted_pca(&PlantedPcaSpec {
            n,
            d: 10,
            r: 3,
            m: 50,
            leading: vec![2.0, 1.4, 0.8],
            floor: 0.1,
            weights: None,
            sign: Sign::Negative,
            seed: 3,
        })
        .unwrap();
        let p = ProblemInstance::from_pca(pca).unwrap();
        let w = MixingMatrix::ring(n, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x0 = random_stiefel(10, 3, &mut rng).unwrap().into_inner();
        (p, w, x0)
    }

    fn cfg(alpha: f64) -> AlgorithmConfig {
        AlgorithmConfig {
            alpha,
            lambda: 20.0,
            epsilon: 0.5,
            max_iters: 100,
            tol_grad: 0.0,
            tol_consensus: 0.0,
            consensus_rounds: 1,
            trace_stride: 1,
        }
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in [
            Algorithm::Drfgt,
            Algorithm::CentralizedLanding,
            Algorithm::RetractionDgt,
        ] {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("sgd".parse::<Algorithm>().is_err());
    }

    #[test]
    fn safe_step_by_hand() {
        // n = 1, sigma = 0, G = 0, lambda = 1, eps = 0.5, L' = 1:
        // t1 = 0.5 / (20 * 0.75) = 1/30, t2 = 0.25 / (16 * 0.75) = 1/48,
        // t3 = 0.5, t4 = 0.25 / (2 * (0.375 + 0.00390625))
        let a = safe_step_size(0.0, 1.0, 1.0, 0.5, 0.0, 1).unwrap();
        assert!((a - 1.0 / 48.0).abs() < 1e-15);
        assert!(safe_step_size(0.0, 1.0, 1.0, 0.8, 0.0, 1).is_err());
        assert!(safe_step_size(0.0, 1.0, 1.0, 0.5, 1.0, 1).is_err());
    }

    #[test]
    fn stable_step_by_hand() {
        // sigma = 0: 1 / (16 L')
        assert_eq!(stable_step_size(2.0, 0.0).unwrap(), 1.0 / 32.0);
        let s: f64 = 0.5;
        let expect = (1.0 - 0.25f64).powi(2) / (1.25 * 16.0);
        assert!((stable_step_size(1.0, s).unwrap() - expect).abs() < 1e-16);
    }

    #[test]
    fn first_round_is_pure_consensus() {
        let (p, w, x0) = setup(4);
        let mut s = NetworkState::new(&x0, 4);
        drfgt_step(&mut s, &p, &w, &cfg(1e-3)).unwrap();
        for xi in &s.x {
            assert!((xi - &x0).norm() < 1e-15);
        }
    }

    #[test]
    fn tracker_mean_equals_mean_landing_field() {
        let (p, w, x0) = setup(5);
        let mut s = NetworkState::new(&x0, 5);
        for _ in 0..50 {
            drfgt_step(&mut s, &p, &w, &cfg(1e-3)).unwrap();
            let diff = s.mean_y() - mean(&s.landing);
            assert!(diff.norm() <= 1e-12 * (1.0 + s.mean_y().norm()));
        }
    }

    #[test]
    fn retraction_keeps_iterates_feasible() {
        let (p, w, x0) = setup(4);
        let mut s = NetworkState::new(&x0, 4);
        for k in 1..=30 {
            retraction_dgt_step(&mut s, &p, &w, &cfg(1e-3)).unwrap();
            assert_eq!(s.factorizations, 4 * k);
            for xi in &s.x {
                assert!(feasibility_residual(xi) <= 1e-10);
            }
        }
        let mut bad = NetworkState::new(&(x0 * 1.1), 4);
        assert!(matches!(
            retraction_dgt_step(&mut bad, &p, &w, &cfg(1e-3)),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn huge_step_diverges_with_iteration_index() {
        let (p, w, x0) = setup(3);
        let k = estimate_constants(&p, cfg(1.0).params().unwrap(), 0, 0).unwrap();
        let mut sink = Vec::new();
        let c = AlgorithmConfig {
            max_iters: 10_000,
            ..cfg(1.0)
        };
        let out = run(Algorithm::Drfgt, &p, &w, &c, &x0, &k, &mut sink).unwrap();
        match out.exit {
            ExitReason::Diverged { iteration, .. } => assert_eq!(iteration, out.iterations + 1),
            other => panic!("expected divergence, got {other:?}"),
        }
        assert!(!out.warnings.is_empty());
    }

    #[test]
    fn mismatched_dimensions_are_rejected() {
        let (p, w, _) = setup(3);
        assert!(Solver::new(Algorithm::Drfgt, &p, &w, &cfg(1e-3), &Mat::zeros(4, 2)).is_err());
        let w4 = MixingMatrix::ring(4, 0.5).unwrap();
        let x0 = Mat::identity(10, 3);
        assert!(Solver::new(Algorithm::Drfgt, &p, &w4, &cfg(1e-3), &x0).is_err());
        assert!(Solver::new(Algorithm::Drfgt, &p, &w, &cfg(-1.0), &x0).is_err());
    }

    #[test]
    fn trace_stride_keeps_first_and_last() {
        let (p, w, x0) = setup(3);
        let c = AlgorithmConfig {
            max_iters: 25,
            trace_stride: 10,
            ..cfg(1e-3)
        };
        let k = estimate_constants(&p, c.params().unwrap(), 0, 0).unwrap();
        let mut sink: Vec<TraceRecord> = Vec::new();
        let out = run(Algorithm::Drfgt, &p, &w, &c, &x0, &k, &mut sink).unwrap();
        assert_eq!(out.exit, ExitReason::MaxIters);
        let ks: Vec<usize> = sink.iter().map(|r| r.k).collect();
        assert_eq!(ks, vec![0, 10, 20, 25]);
        assert_eq!(out.metric_projections, 4 * 3);
    }
}
