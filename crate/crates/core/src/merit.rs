//! Merit function `L = f + h + gamma * p` and the constants that control it.
//!
//! `h(x) = -<sym(xᵀ ∇f(x)), xᵀx - I> / 2` and `p` is the penalty from
//! [`crate::manifold::penalty`]. On the manifold `L = f` and its gradient is
//! the Riemannian gradient in the embedded metric.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::manifold::{
    feasibility_residual, gaussian_matrix, gram_residual, landing_field, penalty_gradient,
    project_to_stiefel, random_with_residual, relative_gradient, LandingParams,
};
use crate::problems::{pca, Objective, ProblemInstance, ReferenceSolution};
use crate::{Error, Mat, Result};

/// Multiplier applied to the smallest admissible `gamma`.
pub const GAMMA_MARGIN: f64 = 1.05;

/// Multiplier applied to sampled bounds.
pub const SAMPLED_INFLATION: f64 = 1.5;

/// Floor used for `L_hat` when the objective is identically zero.
pub const L_HAT_FLOOR: f64 = 1e-12;

/// Residual up to which the closed-form manifold gradient is used.
pub const ON_MANIFOLD_TOL: f64 = 1e-10;

/// Slack tolerance for audits, relative to the size of the two sides.
pub const AUDIT_TOL: f64 = 1e-10;

/// Bounds on the objective over the safety region `St(d, r)^eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBounds {
    /// Lipschitz constant of every local Euclidean gradient.
    pub smoothness: f64,
    /// `max(smoothness, sup ||∇f||)` for the averaged objective.
    pub l_hat: f64,
    /// `sup ||sym(xᵀ ∇f(x))||`.
    pub s: f64,
    /// `sup ||grad f_i(x)||` over agents.
    pub local_relative_grad: f64,
    /// `sup ||∇f_i(x)||` over agents.
    pub local_euclidean_grad: f64,
    /// Lipschitz constant of `∇(f + h)`.
    pub l_fh: f64,
}

/// Every constant derived from the objective bounds and `(lambda, epsilon)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeritConstants {
    pub lambda: f64,
    pub epsilon: f64,
    pub bounds: ObjectiveBounds,
    pub gamma: f64,
    pub rho: f64,
    pub c: f64,
    pub l_prime: f64,
    /// Lipschitz bound of the landing field.
    pub l_landing: f64,
    /// Lipschitz bound of the merit gradient.
    pub l_merit: f64,
    pub mu: Option<f64>,
    pub mu_prime: Option<f64>,
    /// Set when any bound came from sampling instead of a closed form.
    pub estimated: bool,
}

/// Smallest `gamma` for which the landing field is a descent direction of `L`.
pub fn gamma_threshold(bounds: &ObjectiveBounds, params: &LandingParams) -> f64 {
    let eps = params.epsilon;
    let b = bounds;
    2.0 / (3.0 - 4.0 * eps)
        * (b.smoothness * (1.0 - eps)
            + 3.0 * b.s
            + b.l_hat * b.l_hat * (1.0 + eps).powi(2) / (params.lambda * (1.0 - eps)))
}

impl MeritConstants {
    pub fn from_bounds(bounds: ObjectiveBounds, params: LandingParams, estimated: bool) -> Self {
        let mut bounds = bounds;
        bounds.l_hat = bounds.l_hat.max(L_HAT_FLOOR);
        let gamma = GAMMA_MARGIN * gamma_threshold(&bounds, &params);
        let mut out = Self {
            lambda: params.lambda,
            epsilon: params.epsilon,
            bounds,
            gamma,
            rho: 0.0,
            c: 0.0,
            l_prime: 0.0,
            l_landing: 0.0,
            l_merit: 0.0,
            mu: None,
            mu_prime: None,
            estimated,
        };
        out.derive();
        out
    }

    fn derive(&mut self) {
        let eps = self.epsilon;
        let lam = self.lambda;
        let b = &self.bounds;
        self.rho = 0.5f64.min(self.gamma / (4.0 * lam * (1.0 + eps)));
        self.l_merit = b.l_fh + (2.0 + 3.0 * eps) * self.gamma;
        self.l_landing = (1.0 + eps) * b.smoothness
            + 2.0 * (1.0 + eps).sqrt() * b.local_euclidean_grad
            + lam * (2.0 + 3.0 * eps);
        self.l_prime = b.l_hat.max(self.l_merit).max(self.l_landing);
        self.c = 3.0 * self.l_prime / (lam * (1.0 - eps)) + 2.0;
        self.mu_prime = self.mu.map(|mu| {
            let a = 1.0 / mu;
            let b2 = (2.0 * (3.0 + 2.0 * eps).powi(2) * b.l_hat * b.l_hat + mu * self.l_prime)
                / (2.0 * mu * lam * lam * (1.0 - eps).powi(2));
            1.0 / a.max(b2)
        });
    }

    pub fn params(&self) -> LandingParams {
        LandingParams {
            lambda: self.lambda,
            epsilon: self.epsilon,
        }
    }

    /// Replaces `gamma` and recomputes everything that depends on it.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::Parameter(format!(
                "gamma must be non-negative, got {gamma}"
            )));
        }
        let mut out = *self;
        out.gamma = gamma;
        out.derive();
        Ok(out)
    }

    /// Attaches a Polyak-Łojasiewicz constant of `f` near the solution set.
    pub fn with_mu(&self, mu: f64) -> Result<Self> {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::Parameter(format!("mu must be positive, got {mu}")));
        }
        let mut out = *self;
        out.mu = Some(mu);
        out.derive();
        Ok(out)
    }

    pub fn gamma_threshold(&self) -> f64 {
        gamma_threshold(&self.bounds, &self.params())
    }
}

/// Closed-form bounds for a PCA problem on `St(d, r)^eps`.
pub fn pca_bounds(p: &pca::PcaInstance, epsilon: f64) -> ObjectiveBounds {
    let cmax = pca::max_local_norm(p);
    let cbar = pca::mean_norm(p);
    let dmax = p.weights()[0];
    let dfro = p.weights().norm();
    let smoothness = 2.0 * cmax * dmax;
    let global_grad = 2.0 * cbar * (1.0 + epsilon).sqrt() * dfro;
    let local_grad = 2.0 * cmax * (1.0 + epsilon).sqrt() * dfro;
    let l_hat = smoothness.max(global_grad);
    ObjectiveBounds {
        smoothness,
        l_hat,
        s: 2.0 * (1.0 + epsilon) * cbar * dfro,
        local_relative_grad: local_grad * (1.0 + epsilon),
        local_euclidean_grad: local_grad,
        l_fh: l_hat * (3.0 + 3.0 * epsilon),
    }
}

/// Bounds from `sample_count` random points of the safety region, inflated by
/// [`SAMPLED_INFLATION`]. Points are drawn from one seeded stream, so a larger
/// sample extends a smaller one and the bounds can only grow.
pub fn sampled_bounds(
    problem: &ProblemInstance,
    epsilon: f64,
    sample_count: usize,
    seed: u64,
) -> Result<ObjectiveBounds> {
    if sample_count == 0 {
        return Err(Error::Parameter("sample_count must be positive".into()));
    }
    let (d, r) = problem.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut smooth: f64 = 0.0;
    let mut global_grad: f64 = 0.0;
    let mut s: f64 = 0.0;
    let mut rel: f64 = 0.0;
    let mut euc: f64 = 0.0;
    for _ in 0..sample_count {
        let radius = epsilon * rng.random::<f64>();
        let x = random_with_residual(d, r, radius, &mut rng)?;
        let dir = gaussian_matrix(d, r, &mut rng);
        let y = &x + &dir * (1e-3 / dir.norm());
        let g = problem.global().gradient(&x);
        global_grad = global_grad.max(g.norm());
        let xtg = x.tr_mul(&g);
        s = s.max(((&xtg + xtg.transpose()) * 0.5).norm());
        for obj in problem.locals() {
            let gi = obj.gradient(&x);
            euc = euc.max(gi.norm());
            rel = rel.max(relative_gradient(&x, &gi)?.norm());
            let gy = obj.gradient(&y);
            smooth = smooth.max((gy - &gi).norm() / (&y - &x).norm());
        }
    }
    let k = SAMPLED_INFLATION;
    let smoothness = problem.smoothness().unwrap_or(k * smooth);
    let l_hat = smoothness.max(k * global_grad);
    let local_relative_grad = problem.grad_bound().unwrap_or(k * rel);
    Ok(ObjectiveBounds {
        smoothness,
        l_hat,
        s: k * s,
        local_relative_grad,
        local_euclidean_grad: k * euc,
        l_fh: l_hat * (3.0 + 3.0 * epsilon),
    })
}

/// Closed-form constants for PCA problems, sampled ones otherwise.
pub fn estimate_constants(
    problem: &ProblemInstance,
    params: LandingParams,
    sample_count: usize,
    seed: u64,
) -> Result<MeritConstants> {
    match problem.pca() {
        Some(p) => Ok(MeritConstants::from_bounds(
            pca_bounds(p, params.epsilon),
            params,
            false,
        )),
        None => {
            let b = sampled_bounds(problem, params.epsilon, sample_count, seed)?;
            Ok(MeritConstants::from_bounds(b, params, true))
        }
    }
}

/// `h(x) = -<sym(xᵀ∇f), xᵀx - I> / 2` given `∇f` at `x`.
fn h_value(x: &Mat, g: &Mat, delta: &Mat) -> f64 {
    // delta is symmetric, so the sym() can be dropped
    -0.5 * x.tr_mul(g).dot(delta)
}

pub fn merit_value(x: &Mat, objective: &dyn Objective, consts: &MeritConstants) -> f64 {
    let delta = gram_residual(x);
    if delta.norm() > consts.epsilon {
        log::debug!("merit evaluated outside the safety region");
    }
    let g = objective.gradient(x);
    objective.value(x) + h_value(x, &g, &delta) + consts.gamma * 0.25 * delta.norm_squared()
}

/// `∇f - x sym(xᵀ∇f)`, valid only on the manifold.
pub fn merit_gradient_on_manifold(x: &Mat, euclidean_grad: &Mat) -> Result<Mat> {
    let res = feasibility_residual(x);
    if res > ON_MANIFOLD_TOL {
        return Err(Error::Precondition(format!(
            "closed-form merit gradient needs a feasible point, residual is {res:e}"
        )));
    }
    let xtg = x.tr_mul(euclidean_grad);
    let s = (&xtg + xtg.transpose()) * 0.5;
    let mut out = euclidean_grad.clone();
    out.gemm(-1.0, x, &s, 1.0);
    Ok(out)
}

/// Central differences of the merit value with step `1e-6`.
pub fn merit_gradient_fd(x: &Mat, objective: &dyn Objective, consts: &MeritConstants) -> Mat {
    let h = 1e-6;
    let mut probe = x.clone();
    Mat::from_fn(x.nrows(), x.ncols(), |i, j| {
        let orig = probe[(i, j)];
        probe[(i, j)] = orig + h;
        let up = merit_value(&probe, objective, consts);
        probe[(i, j)] = orig - h;
        let down = merit_value(&probe, objective, consts);
        probe[(i, j)] = orig;
        (up - down) / (2.0 * h)
    })
}

/// Exact merit gradient from a Hessian-vector product:
/// `∇f - (∇f Δ + ∇²f[xΔ] + x(A + Aᵀ)) / 2 + gamma x Δ` with `Δ = xᵀx - I`, `A = xᵀ∇f`.
pub fn merit_gradient_exact(
    x: &Mat,
    objective: &dyn Objective,
    consts: &MeritConstants,
) -> Option<Mat> {
    let delta = gram_residual(x);
    let xd = x * &delta;
    let hv = objective.hessian_vector(x, &xd)?;
    let g = objective.gradient(x);
    let a = x.tr_mul(&g);
    let mut out = &g - (&g * &delta + hv + x * (&a + a.transpose())) * 0.5;
    out += xd * consts.gamma;
    Some(out)
}

/// Closed form on the manifold, the exact formula when the objective offers
/// Hessian-vector products, finite differences otherwise.
pub fn merit_gradient(x: &Mat, objective: &dyn Objective, consts: &MeritConstants) -> Mat {
    if feasibility_residual(x) <= ON_MANIFOLD_TOL {
        let g = objective.gradient(x);
        if let Ok(v) = merit_gradient_on_manifold(x, &g) {
            return v;
        }
    }
    merit_gradient_exact(x, objective, consts)
        .unwrap_or_else(|| merit_gradient_fd(x, objective, consts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckStatus {
    Pass,
    Fail,
    NotApplicable,
}

/// One inequality evaluated at one point. `slack` is positive when it holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub status: CheckStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub residual: f64,
    pub in_region: bool,
    pub estimated_constants: bool,
    pub checks: Vec<AuditCheck>,
}

impl AuditReport {
    pub fn failures(&self) -> impl Iterator<Item = &AuditCheck> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Fail)
    }

    pub fn check(&self, name: &str) -> Option<&AuditCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const CHECK_DESCENT: &str = "descent_alignment";
pub const CHECK_MERIT_GRADIENT: &str = "merit_gradient_bound";
pub const CHECK_MANIFOLD_GRADIENT: &str = "manifold_merit_gradient_bound";
pub const CHECK_ORTHOGONALITY: &str = "landing_orthogonality";
pub const CHECK_PROJECTION: &str = "projection_distance";
pub const CHECK_LIPSCHITZ: &str = "relative_gradient_lipschitz";
pub const CHECK_DOMINATION: &str = "pseudo_gradient_domination";
pub const CHECK_GROWTH: &str = "quadratic_growth";

/// Everything an audit needs besides the point itself.
pub struct AuditContext<'a> {
    pub objective: &'a dyn Objective,
    pub consts: &'a MeritConstants,
    pub reference: Option<&'a ReferenceSolution>,
    /// Radius around the solution set where the local checks apply.
    pub delta: f64,
}

enum Dir {
    AtMost,
    AtLeast,
}

fn evaluate(name: &str, lhs: f64, rhs: f64, dir: Dir, applicable: bool) -> AuditCheck {
    let slack = match dir {
        Dir::AtMost => rhs - lhs,
        Dir::AtLeast => lhs - rhs,
    };
    let status = if !applicable {
        CheckStatus::NotApplicable
    } else if slack >= -AUDIT_TOL * (1.0 + lhs.abs().max(rhs.abs())) {
        CheckStatus::Pass
    } else {
        CheckStatus::Fail
    };
    AuditCheck {
        name: name.to_string(),
        lhs,
        rhs,
        slack,
        status,
    }
}

/// Evaluates the descent, gradient-bound and local-geometry inequalities at `x`.
///
/// Every check is not-applicable outside the safety region. The
/// manifold-only bound needs a feasible `x`; the two local checks need `mu`,
/// a reference solution and `dist(x, S) <= delta`.
pub fn audit_inequalities(x: &Mat, ctx: &AuditContext<'_>) -> Result<AuditReport> {
    let k = ctx.consts;
    let params = k.params();
    let residual = feasibility_residual(x);
    let in_region = residual <= k.epsilon;
    let g = ctx.objective.gradient(x);
    let rg = relative_gradient(x, &g)?;
    let field = landing_field(x, &g, &params)?;
    let grad_l = merit_gradient(x, ctx.objective, k);
    let field_norm = field.norm();
    let grad_l_norm = grad_l.norm();
    let mut checks = Vec::new();

    checks.push(evaluate(
        CHECK_DESCENT,
        field.dot(&grad_l),
        k.rho * field_norm * field_norm,
        Dir::AtLeast,
        in_region,
    ));
    checks.push(evaluate(
        CHECK_MERIT_GRADIENT,
        grad_l_norm,
        k.c * field_norm,
        Dir::AtMost,
        in_region,
    ));
    checks.push(evaluate(
        CHECK_MANIFOLD_GRADIENT,
        grad_l_norm,
        2.0 * field_norm,
        Dir::AtMost,
        in_region && residual <= ON_MANIFOLD_TOL,
    ));
    let pg = penalty_gradient(x);
    checks.push(evaluate(
        CHECK_ORTHOGONALITY,
        rg.dot(&pg).abs() / (1.0 + rg.norm() * pg.norm()),
        0.0,
        Dir::AtMost,
        in_region,
    ));

    let proj = if in_region {
        project_to_stiefel(x).ok()
    } else {
        None
    };
    let (proj_dist, lip_lhs, lip_rhs) = match &proj {
        Some(p) => {
            let dist = (x - p.data()).norm();
            let gp = ctx.objective.gradient(p);
            let rgp = relative_gradient(p, &gp)?;
            let lip = (3.0 + 2.0 * k.epsilon) * k.bounds.l_hat * dist;
            (dist, (&rg - rgp).norm(), lip)
        }
        None => (f64::NAN, f64::NAN, f64::NAN),
    };
    checks.push(evaluate(
        CHECK_PROJECTION,
        proj_dist,
        residual,
        Dir::AtMost,
        proj.is_some(),
    ));
    checks.push(evaluate(
        CHECK_LIPSCHITZ,
        lip_lhs,
        lip_rhs,
        Dir::AtMost,
        proj.is_some(),
    ));

    let local = match (ctx.reference, k.mu_prime) {
        (Some(s), Some(mp)) if in_region => {
            let dist = s.distance(x);
            (dist <= ctx.delta).then_some((s, mp, dist))
        }
        _ => None,
    };
    let (gap, dom_rhs, growth_rhs) = match local {
        Some((s, mp, dist)) => {
            let gap = merit_value(x, ctx.objective, k) - s.value;
            (
                gap,
                field_norm * field_norm / mp,
                mp * k.rho * k.rho / 4.0 * dist * dist,
            )
        }
        None => (f64::NAN, f64::NAN, f64::NAN),
    };
    checks.push(evaluate(
        CHECK_DOMINATION,
        gap,
        dom_rhs,
        Dir::AtMost,
        local.is_some(),
    ));
    checks.push(evaluate(
        CHECK_GROWTH,
        gap,
        growth_rhs,
        Dir::AtLeast,
        local.is_some(),
    ));

    Ok(AuditReport {
        residual,
        in_region,
        estimated_constants: k.estimated,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::random_stiefel;
    use crate::problems::{
        generate_planted_pca, PcaInstance, PcaObjective, PlantedPcaSpec, ProblemInstance, Sign,
    };
    use nalgebra::DVector;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn params(lambda: f64, eps: f64) -> LandingParams {
        LandingParams::new(lambda, eps).unwrap()
    }

    fn planted(seed: u64) -> ProblemInstance {
        ProblemInstance::from_pca(
            generate_planted_pca(&PlantedPcaSpec {
                n: 3,
                d: 8,
                r: 3,
                m: 60,
                leading: vec![2.0, 1.4, 0.8],
                floor: 0.1,
                weights: None,
                sign: Sign::Negative,
                seed,
            })
            .unwrap(),
        )
        .unwrap()
    }

    // Closed-form merit gradient for f = s tr(D xᵀ C x), written out directly:
    // 2sCxD - s[Cx(DΔ + ΔD) + x(KD + DK)] + gamma xΔ with K = xᵀCx.
    fn quadratic_merit_gradient(c: &Mat, w: &DVector<f64>, s: f64, gamma: f64, x: &Mat) -> Mat {
        let d = Mat::from_diagonal(w);
        let delta = x.tr_mul(x) - Mat::identity(x.ncols(), x.ncols());
        let k = x.transpose() * c * x;
        let cx = c * x;
        &cx * &d * (2.0 * s) - (&cx * (&d * &delta + &delta * &d) + x * (&k * &d + &d * &k)) * s
            + x * &delta * gamma
    }

    #[test]
    fn isotropic_two_column_constants() {
        // C = I, D = diag(2, 1): smoothness 2 * 1 * 2 = 4
        let pca = PcaInstance::new(
            vec![Mat::identity(5, 5)],
            DVector::from_vec(vec![2.0, 1.0]),
            Sign::Negative,
        )
        .unwrap();
        let eps = 0.5;
        let b = pca_bounds(&pca, eps);
        assert_eq!(b.smoothness, 4.0);
        // sup ||2 x D|| over the safety region is 2 sqrt(1 + eps) ||D||_F
        let sup = 2.0 * (1.0 + eps).sqrt() * 5f64.sqrt();
        assert!((b.l_hat - sup.max(4.0)).abs() < 1e-12);
        assert!((b.s - 2.0 * (1.0 + eps) * 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn derived_constants_follow_their_definitions() {
        let p = planted(1);
        let k = estimate_constants(&p, params(30.0, 0.4), 0, 0).unwrap();
        let b = k.bounds;
        let eps = 0.4;
        let lam = 30.0;
        let threshold = 2.0 / (3.0 - 4.0 * eps)
            * (b.smoothness * (1.0 - eps)
                + 3.0 * b.s
                + b.l_hat.powi(2) * (1.0 + eps).powi(2) / (lam * (1.0 - eps)));
        assert!((k.gamma - 1.05 * threshold).abs() <= 1e-12 * k.gamma);
        assert!((k.rho - (k.gamma / (4.0 * lam * (1.0 + eps))).min(0.5)).abs() < 1e-15);
        assert!((k.c - (3.0 * k.l_prime / (lam * (1.0 - eps)) + 2.0)).abs() < 1e-12);
        assert!(k.l_prime >= b.l_hat);
        assert!(k.l_prime >= b.l_fh + (2.0 + 3.0 * eps) * k.gamma);
        assert!(!k.estimated);
    }

    #[test]
    fn mu_prime_never_exceeds_mu() {
        let k = estimate_constants(&planted(2), params(20.0, 0.3), 0, 0)
            .unwrap()
            .with_mu(0.25)
            .unwrap();
        let mp = k.mu_prime.unwrap();
        assert!(mp > 0.0 && mp <= 0.25);
        assert!(k.with_mu(0.0).is_err());
    }

    #[test]
    fn zero_objective_gets_floored_constants() {
        struct Zero;
        impl Objective for Zero {
            fn dims(&self) -> (usize, usize) {
                (4, 2)
            }
            fn value(&self, _: &Mat) -> f64 {
                0.0
            }
            fn gradient(&self, x: &Mat) -> Mat {
                Mat::zeros(x.nrows(), x.ncols())
            }
        }
        let p = ProblemInstance::new(vec![Arc::new(Zero)]).unwrap();
        let k = estimate_constants(&p, params(1.0, 0.5), 10, 3).unwrap();
        assert!(k.estimated);
        assert_eq!(k.bounds.l_hat, L_HAT_FLOOR);
        assert!(k.gamma > 0.0 && k.gamma.is_finite());
        assert!(k.rho > 0.0 && k.rho.is_finite());
        assert!(estimate_constants(&p, params(1.0, 0.5), 0, 3).is_err());
    }

    #[test]
    fn sampled_bounds_grow_with_sample_count() {
        let p = planted(4);
        let stripped = ProblemInstance::new(p.locals().to_vec()).unwrap();
        let mut prev = sampled_bounds(&stripped, 0.3, 1, 9).unwrap();
        for n in [5, 20, 80] {
            let b = sampled_bounds(&stripped, 0.3, n, 9).unwrap();
            assert!(b.smoothness >= prev.smoothness);
            assert!(b.l_hat >= prev.l_hat);
            assert!(b.s >= prev.s);
            assert!(b.local_relative_grad >= prev.local_relative_grad);
            prev = b;
        }
        // sampled sups never exceed the closed-form sups by more than the inflation
        let exact = pca_bounds(p.pca().unwrap(), 0.3);
        assert!(prev.s <= SAMPLED_INFLATION * exact.s);
        assert!(prev.smoothness <= SAMPLED_INFLATION * exact.smoothness * (1.0 + 1e-9));
    }

    #[test]
    fn merit_equals_objective_on_manifold() {
        let p = planted(5);
        let k = estimate_constants(&p, params(10.0, 0.5), 0, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_stiefel(8, 3, &mut rng).unwrap();
        let f = p.global().value(&x);
        assert!((merit_value(&x, p.global(), &k) - f).abs() < 1e-12 * (1.0 + f.abs()));
    }

    #[test]
    fn manifold_closed_form_needs_feasible_point() {
        let x = Mat::identity(4, 2) * 1.1;
        assert!(matches!(
            merit_gradient_on_manifold(&x, &Mat::zeros(4, 2)),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn audit_outside_region_is_not_applicable() {
        let p = planted(6);
        let k = estimate_constants(&p, params(10.0, 0.2), 0, 0).unwrap();
        let ctx = AuditContext {
            objective: p.global(),
            consts: &k,
            reference: p.reference(),
            delta: 0.5,
        };
        let x = Mat::identity(8, 3) * 1.5;
        let rep = audit_inequalities(&x, &ctx).unwrap();
        assert!(!rep.in_region);
        assert!(rep
            .checks
            .iter()
            .all(|c| c.status == CheckStatus::NotApplicable));
    }

    #[test]
    fn undersized_gamma_is_reported() {
        // With sign +1 and x = c u for the minimizer u, the landing field is
        // purely normal and <Λ, ∇(f + h)> < 0, so gamma = 0 breaks descent.
        let pca = PcaInstance::new(
            vec![Mat::from_diagonal(&DVector::from_vec(vec![
                1.0, 2.0, 3.0, 4.0,
            ]))],
            DVector::from_vec(vec![2.0, 1.0]),
            Sign::Positive,
        )
        .unwrap();
        let p = ProblemInstance::from_pca(pca).unwrap();
        let good = estimate_constants(&p, params(5.0, 0.5), 0, 0).unwrap();
        let bad = good.with_gamma(0.0).unwrap();
        let x = p.reference().unwrap().x.clone() * 0.85;
        let run = |k: &MeritConstants| {
            let ctx = AuditContext {
                objective: p.global(),
                consts: k,
                reference: None,
                delta: 0.5,
            };
            audit_inequalities(&x, &ctx).unwrap()
        };
        let ok = run(&good);
        assert_eq!(ok.check(CHECK_DESCENT).unwrap().status, CheckStatus::Pass);
        let rep = run(&bad);
        let c = rep.check(CHECK_DESCENT).unwrap();
        assert_eq!(c.status, CheckStatus::Fail);
        assert!(c.slack < 0.0);
        assert_eq!(rep.failures().count(), 1);
    }

    fn quad_case(seed: u64) -> (PcaObjective, Mat, DVector<f64>, Mat) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = gaussian_matrix(6, 6, &mut rng);
        let c = a.tr_mul(&a) / 6.0;
        let w = DVector::from_vec(vec![3.0, 2.0, 1.0]);
        let obj = PcaObjective::new(c.clone(), w.clone(), Sign::Negative).unwrap();
        let t = 0.5 * rng.random::<f64>();
        let x = random_with_residual(6, 3, t, &mut rng).unwrap();
        (obj, c, w, x)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn exact_merit_gradient_matches_closed_form(seed in any::<u64>()) {
            let (obj, c, w, x) = quad_case(seed);
            let p = ProblemInstance::new(vec![Arc::new(obj.clone())]).unwrap();
            let k = estimate_constants(&p, params(10.0, 0.5), 4, seed).unwrap();
            let oracle = quadratic_merit_gradient(&c, &w, -1.0, k.gamma, &x);
            let exact = merit_gradient_exact(&x, &obj, &k).unwrap();
            prop_assert!((&exact - &oracle).norm() <= 1e-10 * (1.0 + oracle.norm()));
            let fd = merit_gradient_fd(&x, &obj, &k);
            prop_assert!((&fd - &oracle).norm() <= 1e-6 * (1.0 + oracle.norm()));
        }

        #[test]
        fn on_manifold_closed_form_matches_full_gradient(seed in any::<u64>()) {
            let (obj, c, w, _) = quad_case(seed);
            let p = ProblemInstance::new(vec![Arc::new(obj.clone())]).unwrap();
            let k = estimate_constants(&p, params(10.0, 0.5), 4, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
            let x = random_stiefel(6, 3, &mut rng).unwrap();
            let oracle = quadratic_merit_gradient(&c, &w, -1.0, k.gamma, &x);
            let cf = merit_gradient_on_manifold(&x, &obj.gradient(&x)).unwrap();
            prop_assert!((&cf - &oracle).norm() <= 1e-10 * (1.0 + oracle.norm()));
        }

        #[test]
        fn global_inequalities_hold_in_safety_region(seed in any::<u64>(), t in 0.0f64..1.0) {
            let p = planted(seed % 16);
            let eps = 0.5;
            let k = estimate_constants(&p, params(20.0, eps), 0, 0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_with_residual(8, 3, t * eps, &mut rng).unwrap();
            let ctx = AuditContext { objective: p.global(), consts: &k, reference: None, delta: 0.5 };
            let rep = audit_inequalities(&x, &ctx).unwrap();
            prop_assert!(rep.failures().count() == 0, "{:?}", rep);
        }
    }
}
