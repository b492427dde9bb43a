use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_weights, default_weights, Objective, ReferenceSolution};
use crate::manifold::{gaussian_matrix, qr_retraction};
use crate::{Error, Mat, Result};

/// Orientation of the PCA objective `sign * tr(D xᵀ C x)`.
///
/// `Negative` (the default) recovers the leading eigenvectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sign {
    Positive,
    #[default]
    Negative,
}

impl Sign {
    pub fn factor(self) -> f64 {
        match self {
            Sign::Positive => 1.0,
            Sign::Negative => -1.0,
        }
    }

    pub fn from_factor(v: i64) -> Result<Self> {
        match v {
            1 => Ok(Sign::Positive),
            -1 => Ok(Sign::Negative),
            _ => Err(Error::Parameter(format!("sign must be +1 or -1, got {v}"))),
        }
    }
}

/// `f(x) = sign * tr(D xᵀ C x)` with `D` diagonal.
#[derive(Debug, Clone)]
pub struct PcaObjective {
    cov: Mat,
    weights: DVector<f64>,
    sign: f64,
}

impl PcaObjective {
    pub fn new(cov: Mat, weights: DVector<f64>, sign: Sign) -> Result<Self> {
        if !cov.is_square() {
            return Err(Error::Dimension("covariance must be square".into()));
        }
        if weights.len() > cov.nrows() {
            return Err(Error::Dimension("need r <= d".into()));
        }
        Ok(Self {
            cov,
            weights,
            sign: sign.factor(),
        })
    }

    pub fn covariance(&self) -> &Mat {
        &self.cov
    }
}

impl Objective for PcaObjective {
    fn dims(&self) -> (usize, usize) {
        (self.cov.nrows(), self.weights.len())
    }

    fn value(&self, x: &Mat) -> f64 {
        let cx = &self.cov * x;
        let mut v = 0.0;
        for j in 0..x.ncols() {
            v += self.weights[j] * x.column(j).dot(&cx.column(j));
        }
        self.sign * v
    }

    fn gradient(&self, x: &Mat) -> Mat {
        let mut g = &self.cov * x;
        for j in 0..g.ncols() {
            let s = 2.0 * self.sign * self.weights[j];
            g.column_mut(j).scale_mut(s);
        }
        g
    }

    fn hessian_vector(&self, _x: &Mat, v: &Mat) -> Option<Mat> {
        Some(self.gradient(v))
    }
}

/// Local covariances `C_i`, their average, and the shared weights `D`.
#[derive(Debug, Clone)]
pub struct PcaInstance {
    covariances: Vec<Mat>,
    mean: Mat,
    weights: DVector<f64>,
    sign: Sign,
}

impl PcaInstance {
    pub fn new(covariances: Vec<Mat>, weights: DVector<f64>, sign: Sign) -> Result<Self> {
        let Some(first) = covariances.first() else {
            return Err(Error::Parameter("need at least one agent".into()));
        };
        let d = first.nrows();
        for (i, c) in covariances.iter().enumerate() {
            if c.shape() != (d, d) {
                return Err(Error::Dimension(format!(
                    "covariance {i} has shape {:?}, expected {d}x{d}",
                    c.shape()
                )));
            }
            if !c.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("covariance {i}")));
            }
        }
        if weights.len() == 0 || weights.len() > d {
            return Err(Error::Dimension(format!(
                "need 1 <= r <= d, got d={d}, r={}",
                weights.len()
            )));
        }
        check_weights(&weights, weights.len())?;
        let mut mean = Mat::zeros(d, d);
        for c in &covariances {
            mean += c;
        }
        mean /= covariances.len() as f64;
        Ok(Self {
            covariances,
            mean,
            weights,
            sign,
        })
    }

    pub fn n(&self) -> usize {
        self.covariances.len()
    }

    pub fn d(&self) -> usize {
        self.mean.nrows()
    }

    pub fn r(&self) -> usize {
        self.weights.len()
    }

    pub fn covariances(&self) -> &[Mat] {
        &self.covariances
    }

    pub fn mean_covariance(&self) -> &Mat {
        &self.mean
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn sign(&self) -> Sign {
        self.sign
    }

    pub fn local_objective(&self, i: usize) -> PcaObjective {
        PcaObjective {
            cov: self.covariances[i].clone(),
            weights: self.weights.clone(),
            sign: self.sign.factor(),
        }
    }

    pub fn global_objective(&self) -> PcaObjective {
        PcaObjective {
            cov: self.mean.clone(),
            weights: self.weights.clone(),
            sign: self.sign.factor(),
        }
    }

    /// Eigenvalues of the averaged covariance, sorted in decreasing order.
    pub fn mean_spectrum(&self) -> Vec<f64> {
        sorted_eigen(&self.mean).0
    }
}

/// Eigenvalues in decreasing order with matching eigenvector columns.
pub(crate) fn sorted_eigen(c: &Mat) -> (Vec<f64>, Mat) {
    let sym = (c + c.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Mat::from_fn(c.nrows(), order.len(), |i, j| {
        eig.eigenvectors[(i, order[j])]
    });
    (values, vectors)
}

pub(crate) fn spectral_norm_sym(c: &Mat) -> f64 {
    let (v, _) = sorted_eigen(c);
    v[0].abs().max(v[v.len() - 1].abs())
}

/// Minimizer of the averaged objective together with its value.
///
/// Columns are eigenvectors of `mean(C_i)` paired with the weights so that the
/// largest weight meets the most favourable eigenvalue. Each column is signed
/// so its largest-magnitude entry is positive.
pub fn reference_solution_pca(pca: &PcaInstance) -> Result<ReferenceSolution> {
    let (mut values, mut vectors) = sorted_eigen(&pca.mean);
    let d = pca.d();
    let r = pca.r();
    if pca.sign == Sign::Positive {
        values.reverse();
        vectors = Mat::from_fn(d, d, |i, j| vectors[(i, d - 1 - j)]);
    }
    let relevant = (r + 1).min(d);
    for k in 1..relevant {
        let gap = (values[k - 1] - values[k]).abs();
        if gap < 1e-8 {
            return Err(Error::Degenerate(format!(
                "eigenvalues {} and {} of the averaged covariance are separated by {gap:e}",
                k,
                k + 1
            )));
        }
    }
    let mut x = vectors.columns(0, r).into_owned();
    for j in 0..r {
        let mut col = x.column_mut(j);
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col.neg_mut();
        }
    }
    let value = pca.sign.factor() * (0..r).map(|j| pca.weights[j] * values[j]).sum::<f64>();
    Ok(ReferenceSolution {
        x,
        value,
        sign_invariant: true,
    })
}

fn check_sizes(n: usize, d: usize, r: usize, m: usize) -> Result<()> {
    if n == 0 || m == 0 {
        return Err(Error::Parameter("need n >= 1 and m >= 1".into()));
    }
    if r == 0 || r > d {
        return Err(Error::Dimension(format!(
            "need 1 <= r <= d, got d={d}, r={r}"
        )));
    }
    Ok(())
}

fn resolve_weights(weights: &Option<Vec<f64>>, r: usize) -> Result<DVector<f64>> {
    let w = match weights {
        Some(w) => DVector::from_vec(w.clone()),
        None => default_weights(r),
    };
    check_weights(&w, r)?;
    Ok(w)
}

/// Gaussian data per agent with the covariance spectrum mapped affinely onto
/// `[spectrum_max / condition_target, spectrum_max]`.
#[derive(Debug, Clone)]
pub struct SyntheticPcaSpec {
    pub n: usize,
    pub d: usize,
    pub r: usize,
    pub m: usize,
    pub condition_target: f64,
    /// Defaults to the largest eigenvalue of each raw covariance.
    pub spectrum_max: Option<f64>,
    pub weights: Option<Vec<f64>>,
    pub sign: Sign,
    pub seed: u64,
}

pub fn generate_synthetic_pca(spec: &SyntheticPcaSpec) -> Result<PcaInstance> {
    check_sizes(spec.n, spec.d, spec.r, spec.m)?;
    if !(spec.condition_target >= 1.0 && spec.condition_target.is_finite()) {
        return Err(Error::Parameter(format!(
            "condition_target must be >= 1, got {}",
            spec.condition_target
        )));
    }
    if let Some(s) = spec.spectrum_max {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Parameter(format!(
                "spectrum_max must be positive, got {s}"
            )));
        }
    }
    let weights = resolve_weights(&spec.weights, spec.r)?;
    if spec.m < spec.d {
        log::warn!(
            "m = {} < d = {}: raw local covariances are rank deficient",
            spec.m,
            spec.d
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut covs = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let a = gaussian_matrix(spec.m, spec.d, &mut rng);
        let c = a.tr_mul(&a);
        covs.push(remap_spectrum(&c, spec.condition_target, spec.spectrum_max));
    }
    PcaInstance::new(covs, weights, spec.sign)
}

fn remap_spectrum(c: &Mat, kappa: f64, spectrum_max: Option<f64>) -> Mat {
    let (values, vectors) = sorted_eigen(c);
    let hi0 = values[0];
    let lo0 = values[values.len() - 1];
    let hi = spectrum_max.unwrap_or(hi0);
    let lo = hi / kappa;
    let span = hi0 - lo0;
    let mapped = DVector::from_iterator(
        values.len(),
        values.iter().map(|&v| {
            if span > 0.0 {
                lo + (v - lo0) / span * (hi - lo)
            } else {
                hi
            }
        }),
    );
    let out = &vectors * Mat::from_diagonal(&mapped) * vectors.transpose();
    (&out + out.transpose()) * 0.5
}

/// Gaussian rows with population covariance `U diag(leading, floor, ..., floor) Uᵀ`
/// for a Haar-random orthogonal `U` shared by all agents.
#[derive(Debug, Clone)]
pub struct PlantedPcaSpec {
    pub n: usize,
    pub d: usize,
    pub r: usize,
    pub m: usize,
    pub leading: Vec<f64>,
    pub floor: f64,
    pub weights: Option<Vec<f64>>,
    pub sign: Sign,
    pub seed: u64,
}

pub fn generate_planted_pca(spec: &PlantedPcaSpec) -> Result<PcaInstance> {
    check_sizes(spec.n, spec.d, spec.r, spec.m)?;
    if spec.leading.len() > spec.d {
        return Err(Error::Dimension(format!(
            "{} leading eigenvalues for d = {}",
            spec.leading.len(),
            spec.d
        )));
    }
    let mut spectrum = spec.leading.clone();
    spectrum.resize(spec.d, spec.floor);
    if !spectrum.iter().all(|v| v.is_finite() && *v >= 0.0) {
        return Err(Error::Parameter(
            "planted spectrum must be non-negative".into(),
        ));
    }
    let weights = resolve_weights(&spec.weights, spec.r)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let g = gaussian_matrix(spec.d, spec.d, &mut rng);
    let u = qr_retraction(&g, &Mat::zeros(spec.d, spec.d))?.into_inner();
    let root = DVector::from_iterator(spec.d, spectrum.iter().map(|v| v.sqrt()));
    let factor = Mat::from_diagonal(&root) * u.transpose() / (spec.m as f64).sqrt();
    let mut covs = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let z = gaussian_matrix(spec.m, spec.d, &mut rng);
        let a = z * &factor;
        covs.push(a.tr_mul(&a));
    }
    PcaInstance::new(covs, weights, spec.sign)
}

pub(crate) fn max_local_norm(pca: &PcaInstance) -> f64 {
    pca.covariances
        .iter()
        .map(spectral_norm_sym)
        .fold(0.0, f64::max)
}

pub(crate) fn mean_norm(pca: &PcaInstance) -> f64 {
    spectral_norm_sym(&pca.mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::random_stiefel;
    use crate::problems::ProblemInstance;
    use proptest::prelude::*;

    fn diag(v: &[f64]) -> Mat {
        Mat::from_diagonal(&DVector::from_row_slice(v))
    }

    #[test]
    fn objective_and_gradient_by_hand() {
        // C = diag(4,3,2,1), D = diag(2,1), x = [e1 e2]: f = -(2*4 + 1*3) = -11
        let f = PcaObjective::new(
            diag(&[4.0, 3.0, 2.0, 1.0]),
            DVector::from_vec(vec![2.0, 1.0]),
            Sign::Negative,
        )
        .unwrap();
        let x = Mat::identity(4, 2);
        assert_eq!(f.value(&x), -11.0);
        let mut g = Mat::zeros(4, 2);
        g[(0, 0)] = -16.0;
        g[(1, 1)] = -6.0;
        assert_eq!(f.gradient(&x), g);
    }

    #[test]
    fn reference_for_diagonal_covariance() {
        let pca = PcaInstance::new(
            vec![diag(&[4.0, 3.0, 2.0, 1.0])],
            DVector::from_vec(vec![2.0, 1.0]),
            Sign::Negative,
        )
        .unwrap();
        let sol = reference_solution_pca(&pca).unwrap();
        assert!((sol.x.clone() - Mat::identity(4, 2)).norm() < 1e-12);
        assert!((sol.value + 11.0).abs() < 1e-12);
    }

    #[test]
    fn positive_sign_selects_smallest_eigenvalues() {
        let pca = PcaInstance::new(
            vec![diag(&[4.0, 3.0, 2.0, 1.0])],
            DVector::from_vec(vec![2.0, 1.0]),
            Sign::Positive,
        )
        .unwrap();
        let sol = reference_solution_pca(&pca).unwrap();
        // weight 2 pairs with eigenvalue 1 (e4), weight 1 with eigenvalue 2 (e3)
        assert!((sol.x.column(0).into_owned() - Mat::identity(4, 4).column(3)).norm() < 1e-12);
        assert!((sol.x.column(1).into_owned() - Mat::identity(4, 4).column(2)).norm() < 1e-12);
        assert!((sol.value - 4.0).abs() < 1e-12);
    }

    #[test]
    fn isotropic_covariance_is_degenerate() {
        let pca = PcaInstance::new(
            vec![Mat::identity(4, 4) * 3.0],
            DVector::from_vec(vec![2.0, 1.0]),
            Sign::Negative,
        )
        .unwrap();
        assert!(matches!(
            reference_solution_pca(&pca),
            Err(Error::Degenerate(_))
        ));
        let p = ProblemInstance::from_pca(pca).unwrap();
        assert!(p.reference().is_none());
    }

    #[test]
    fn unit_condition_target_gives_scaled_identity() {
        let spec = SyntheticPcaSpec {
            n: 3,
            d: 6,
            r: 2,
            m: 20,
            condition_target: 1.0,
            spectrum_max: Some(5.0),
            weights: None,
            sign: Sign::Negative,
            seed: 1,
        };
        let pca = generate_synthetic_pca(&spec).unwrap();
        for c in pca.covariances() {
            assert!((c - Mat::identity(6, 6) * 5.0).norm() < 1e-10);
        }
        assert!(reference_solution_pca(&pca).is_err());
    }

    #[test]
    fn condition_target_is_met() {
        let spec = SyntheticPcaSpec {
            n: 4,
            d: 10,
            r: 3,
            m: 50,
            condition_target: 100.0,
            spectrum_max: None,
            weights: None,
            sign: Sign::Negative,
            seed: 7,
        };
        let pca = generate_synthetic_pca(&spec).unwrap();
        for c in pca.covariances() {
            let (v, _) = sorted_eigen(c);
            let kappa = v[0] / v[v.len() - 1];
            assert!((kappa / 100.0 - 1.0).abs() < 0.01, "kappa = {kappa}");
        }
    }

    #[test]
    fn generators_are_deterministic() {
        let spec = PlantedPcaSpec {
            n: 3,
            d: 8,
            r: 2,
            m: 30,
            leading: vec![1.0, 0.5],
            floor: 0.1,
            weights: None,
            sign: Sign::Negative,
            seed: 42,
        };
        let a = generate_planted_pca(&spec).unwrap();
        let b = generate_planted_pca(&spec).unwrap();
        assert_eq!(a.covariances(), b.covariances());
        let c = generate_planted_pca(&PlantedPcaSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(a.covariances(), c.covariances());
    }

    #[test]
    fn planted_spectrum_is_recovered_with_many_samples() {
        let spec = PlantedPcaSpec {
            n: 2,
            d: 6,
            r: 2,
            m: 20000,
            leading: vec![3.0, 2.0],
            floor: 0.5,
            weights: None,
            sign: Sign::Negative,
            seed: 5,
        };
        let pca = generate_planted_pca(&spec).unwrap();
        let v = pca.mean_spectrum();
        assert!((v[0] - 3.0).abs() < 0.15);
        assert!((v[1] - 2.0).abs() < 0.1);
        assert!((v[5] - 0.5).abs() < 0.05);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let base = SyntheticPcaSpec {
            n: 2,
            d: 4,
            r: 2,
            m: 10,
            condition_target: 0.5,
            spectrum_max: None,
            weights: None,
            sign: Sign::Negative,
            seed: 1,
        };
        assert!(matches!(
            generate_synthetic_pca(&base),
            Err(Error::Parameter(_))
        ));
        let wide = SyntheticPcaSpec {
            r: 5,
            condition_target: 2.0,
            ..base.clone()
        };
        assert!(matches!(
            generate_synthetic_pca(&wide),
            Err(Error::Dimension(_))
        ));
        let flat = SyntheticPcaSpec {
            weights: Some(vec![1.0, 1.0]),
            condition_target: 2.0,
            ..base
        };
        assert!(generate_synthetic_pca(&flat).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn global_value_is_mean_of_locals(seed in any::<u64>(), n in 1usize..6) {
            let pca = generate_planted_pca(&PlantedPcaSpec {
                n, d: 7, r: 3, m: 12,
                leading: vec![2.0, 1.5, 1.0], floor: 0.2,
                weights: None, sign: Sign::Negative, seed,
            }).unwrap();
            let p = ProblemInstance::from_pca(pca).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
            let x = random_stiefel(7, 3, &mut rng).unwrap();
            let mean = (0..n).map(|i| p.local(i).unwrap().value(&x)).sum::<f64>() / n as f64;
            let g = p.global().value(&x);
            prop_assert!((g - mean).abs() <= 1e-12 * (1.0 + mean.abs()));
            let mut gm = Mat::zeros(7, 3);
            for i in 0..n {
                gm += p.local(i).unwrap().gradient(&x);
            }
            gm /= n as f64;
            prop_assert!((p.global().gradient(&x) - &gm).norm() <= 1e-12 * (1.0 + gm.norm()));
        }

        #[test]
        fn reference_attains_optimal_value(seed in any::<u64>()) {
            let pca = generate_planted_pca(&PlantedPcaSpec {
                n: 3, d: 8, r: 3, m: 40,
                leading: vec![3.0, 2.0, 1.0], floor: 0.1,
                weights: None, sign: Sign::Negative, seed,
            }).unwrap();
            let p = ProblemInstance::from_pca(pca).unwrap();
            let sol = p.reference().unwrap();
            let v = p.global().value(&sol.x);
            prop_assert!((v - sol.value).abs() <= 1e-10 * (1.0 + v.abs()));
            prop_assert!(sol.x.tr_mul(&sol.x).relative_eq(&Mat::identity(3, 3), 1e-12, 1e-12));
            // no feasible point does better
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..20 {
                let x = random_stiefel(8, 3, &mut rng).unwrap();
                prop_assert!(p.global().value(&x) >= sol.value - 1e-10);
            }
        }

        #[test]
        fn pca_gradients_pass_finite_difference_check(seed in any::<u64>()) {
            let pca = generate_synthetic_pca(&SyntheticPcaSpec {
                n: 2, d: 5, r: 2, m: 8, condition_target: 10.0,
                spectrum_max: Some(2.0), weights: None, sign: Sign::Positive, seed,
            }).unwrap();
            let p = ProblemInstance::from_pca(pca).unwrap();
            prop_assert!(p.check_gradients(3, seed, 1e-7).is_ok());
        }
    }
}
