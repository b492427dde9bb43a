//! Objectives, problem instances and reference solutions.

mod dataset;
pub(crate) mod pca;

use std::sync::Arc;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::manifold::{gaussian_matrix, random_with_residual};
use crate::{Error, Mat, Result};

pub use dataset::{load_dataset_matrix, partition_rows, pca_from_data, DatasetOptions, Partition};
pub use pca::{
    generate_planted_pca, generate_synthetic_pca, reference_solution_pca, PcaInstance,
    PcaObjective, PlantedPcaSpec, Sign, SyntheticPcaSpec,
};

/// A smooth function of a `d x r` matrix with its Euclidean gradient.
pub trait Objective: Send + Sync {
    fn dims(&self) -> (usize, usize);
    fn value(&self, x: &Mat) -> f64;
    fn gradient(&self, x: &Mat) -> Mat;

    /// `∇²f(x)[v]`, when the objective can provide it cheaply.
    fn hessian_vector(&self, _x: &Mat, _v: &Mat) -> Option<Mat> {
        None
    }
}

/// Average of several objectives.
pub struct MeanObjective {
    parts: Vec<Arc<dyn Objective>>,
}

impl Objective for MeanObjective {
    fn dims(&self) -> (usize, usize) {
        self.parts[0].dims()
    }

    fn value(&self, x: &Mat) -> f64 {
        self.parts.iter().map(|p| p.value(x)).sum::<f64>() / self.parts.len() as f64
    }

    fn gradient(&self, x: &Mat) -> Mat {
        let mut g = self.parts[0].gradient(x);
        for p in &self.parts[1..] {
            g += p.gradient(x);
        }
        g / self.parts.len() as f64
    }

    fn hessian_vector(&self, x: &Mat, v: &Mat) -> Option<Mat> {
        let mut acc = self.parts[0].hessian_vector(x, v)?;
        for p in &self.parts[1..] {
            acc += p.hessian_vector(x, v)?;
        }
        Some(acc / self.parts.len() as f64)
    }
}

/// A known minimizer `x*` of the global objective together with `f(x*)`.
///
/// When `sign_invariant` is set the solution set is `{x* diag(s) : s in {±1}^r}`
/// and [`ReferenceSolution::distance`] measures distance to that set.
#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    pub x: Mat,
    pub value: f64,
    pub sign_invariant: bool,
}

impl ReferenceSolution {
    pub fn distance(&self, x: &Mat) -> f64 {
        if !self.sign_invariant {
            return (x - &self.x).norm();
        }
        let mut total = 0.0;
        for j in 0..x.ncols() {
            let a = x.column(j);
            let u = self.x.column(j);
            let plus = (a - u).norm_squared();
            let minus = (a + u).norm_squared();
            total += plus.min(minus);
        }
        total.sqrt()
    }
}

/// `n` local objectives sharing the dimensions `d x r`.
#[derive(Clone)]
pub struct ProblemInstance {
    d: usize,
    r: usize,
    locals: Vec<Arc<dyn Objective>>,
    global: Arc<dyn Objective>,
    smoothness: Option<f64>,
    grad_bound: Option<f64>,
    pca: Option<Arc<PcaInstance>>,
    reference: Option<ReferenceSolution>,
}

impl std::fmt::Debug for ProblemInstance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemInstance")
            .field("n", &self.locals.len())
            .field("d", &self.d)
            .field("r", &self.r)
            .field("pca", &self.pca.is_some())
            .finish()
    }
}

impl ProblemInstance {
    pub fn new(locals: Vec<Arc<dyn Objective>>) -> Result<Self> {
        let Some(first) = locals.first() else {
            return Err(Error::Parameter("need at least one agent".into()));
        };
        let (d, r) = first.dims();
        if r == 0 || r > d {
            return Err(Error::Dimension(format!(
                "need 1 <= r <= d, got d={d}, r={r}"
            )));
        }
        if let Some(bad) = locals.iter().position(|o| o.dims() != (d, r)) {
            return Err(Error::Dimension(format!(
                "agent {bad} has dimensions {:?}, expected {:?}",
                locals[bad].dims(),
                (d, r)
            )));
        }
        let global: Arc<dyn Objective> = Arc::new(MeanObjective {
            parts: locals.clone(),
        });
        Ok(Self {
            d,
            r,
            locals,
            global,
            smoothness: None,
            grad_bound: None,
            pca: None,
            reference: None,
        })
    }

    /// Builds the PCA problem; the reference solution is attached whenever the
    /// averaged covariance has the required spectral gaps.
    pub fn from_pca(pca: PcaInstance) -> Result<Self> {
        let locals: Vec<Arc<dyn Objective>> = (0..pca.n())
            .map(|i| Arc::new(pca.local_objective(i)) as Arc<dyn Objective>)
            .collect();
        let mut inst = Self::new(locals)?;
        inst.global = Arc::new(pca.global_objective());
        inst.reference = reference_solution_pca(&pca).ok();
        inst.pca = Some(Arc::new(pca));
        Ok(inst)
    }

    pub fn with_smoothness(mut self, l: f64) -> Self {
        self.smoothness = Some(l);
        self
    }

    pub fn with_grad_bound(mut self, g: f64) -> Self {
        self.grad_bound = Some(g);
        self
    }

    pub fn with_reference(mut self, reference: ReferenceSolution) -> Self {
        self.reference = Some(reference);
        self
    }

    pub fn n(&self) -> usize {
        self.locals.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.d, self.r)
    }

    pub fn local(&self, i: usize) -> Result<&dyn Objective> {
        self.locals.get(i).map(|o| o.as_ref()).ok_or_else(|| {
            Error::Parameter(format!(
                "agent index {i} out of range for {} agents",
                self.n()
            ))
        })
    }

    pub fn locals(&self) -> &[Arc<dyn Objective>] {
        &self.locals
    }

    pub fn global(&self) -> &dyn Objective {
        self.global.as_ref()
    }

    pub fn pca(&self) -> Option<&PcaInstance> {
        self.pca.as_deref()
    }

    pub fn reference(&self) -> Option<&ReferenceSolution> {
        self.reference.as_ref()
    }

    pub fn smoothness(&self) -> Option<f64> {
        self.smoothness
    }

    pub fn grad_bound(&self) -> Option<f64> {
        self.grad_bound
    }

    /// Compares every local gradient with central differences at random
    /// points of the safety region. Fails on the first relative error above `tol`.
    pub fn check_gradients(&self, samples: usize, seed: u64, tol: f64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = 1e-6;
        for s in 0..samples {
            let x = random_with_residual(self.d, self.r, 0.25, &mut rng)?;
            let dir = gaussian_matrix(self.d, self.r, &mut rng);
            let dir = &dir / dir.norm();
            for (i, obj) in self.locals.iter().enumerate() {
                let g = obj.gradient(&x);
                let fd = (obj.value(&(&x + &dir * h)) - obj.value(&(&x - &dir * h))) / (2.0 * h);
                let an = g.dot(&dir);
                let err = (fd - an).abs() / (1.0 + an.abs().max(g.norm()));
                if !(err <= tol) {
                    return Err(Error::Precondition(format!(
                        "gradient of agent {i} disagrees with finite differences at sample {s} \
                         (relative error {err:e})"
                    )));
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn check_weights(weights: &DVector<f64>, r: usize) -> Result<()> {
    if weights.len() != r {
        return Err(Error::Dimension(format!(
            "weight vector has length {}, expected r = {r}",
            weights.len()
        )));
    }
    if !weights.iter().all(|w| w.is_finite() && *w > 0.0) {
        return Err(Error::Parameter("weights must be positive".into()));
    }
    if weights.as_slice().windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::Parameter(
            "weights must be strictly decreasing".into(),
        ));
    }
    Ok(())
}

/// `diag(r, r-1, ..., 1)`.
pub fn default_weights(r: usize) -> DVector<f64> {
    DVector::from_iterator(r, (0..r).map(|j| (r - j) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quartic {
        d: usize,
        r: usize,
    }

    impl Objective for Quartic {
        fn dims(&self) -> (usize, usize) {
            (self.d, self.r)
        }
        fn value(&self, x: &Mat) -> f64 {
            x.iter().map(|v| v.powi(4)).sum::<f64>() / 4.0
        }
        fn gradient(&self, x: &Mat) -> Mat {
            x.map(|v| v.powi(3))
        }
    }

    struct Broken;

    impl Objective for Broken {
        fn dims(&self) -> (usize, usize) {
            (3, 2)
        }
        fn value(&self, x: &Mat) -> f64 {
            x.norm_squared()
        }
        fn gradient(&self, x: &Mat) -> Mat {
            x.clone()
        }
    }

    #[test]
    fn mean_objective_averages_locals() {
        let p = ProblemInstance::new(vec![
            Arc::new(Quartic { d: 3, r: 2 }),
            Arc::new(Quartic { d: 3, r: 2 }),
        ])
        .unwrap();
        let x = Mat::from_element(3, 2, 2.0);
        assert_eq!(p.global().value(&x), 24.0);
        assert_eq!(p.global().gradient(&x), Mat::from_element(3, 2, 8.0));
    }

    #[test]
    fn mismatched_agents_are_rejected() {
        let r = ProblemInstance::new(vec![
            Arc::new(Quartic { d: 3, r: 2 }),
            Arc::new(Quartic { d: 4, r: 2 }),
        ]);
        assert!(matches!(r, Err(Error::Dimension(_))));
        assert!(ProblemInstance::new(vec![]).is_err());
    }

    #[test]
    fn out_of_range_agent_is_an_error() {
        let p = ProblemInstance::new(vec![Arc::new(Quartic { d: 3, r: 2 })]).unwrap();
        assert!(p.local(0).is_ok());
        assert!(p.local(1).is_err());
    }

    #[test]
    fn gradient_check_catches_wrong_gradient() {
        let good = ProblemInstance::new(vec![Arc::new(Quartic { d: 3, r: 2 })]).unwrap();
        good.check_gradients(5, 1, 1e-6).unwrap();
        let bad = ProblemInstance::new(vec![Arc::new(Broken)]).unwrap();
        assert!(bad.check_gradients(5, 1, 1e-6).is_err());
    }

    #[test]
    fn sign_invariant_distance_ignores_column_flips() {
        let x = Mat::identity(4, 2);
        let reference = ReferenceSolution {
            x: x.clone(),
            value: 0.0,
            sign_invariant: true,
        };
        let mut flipped = x.clone();
        flipped.column_mut(1).neg_mut();
        assert_eq!(reference.distance(&flipped), 0.0);
        let strict = ReferenceSolution {
            sign_invariant: false,
            ..reference
        };
        assert!((strict.distance(&flipped) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn weights_must_decrease() {
        assert!(check_weights(&default_weights(3), 3).is_ok());
        assert!(check_weights(&DVector::from_vec(vec![1.0, 1.0]), 2).is_err());
        assert!(check_weights(&DVector::from_vec(vec![2.0, 1.0]), 3).is_err());
        assert!(check_weights(&DVector::from_vec(vec![1.0, -1.0]), 2).is_err());
    }
}
