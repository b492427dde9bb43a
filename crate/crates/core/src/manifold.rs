//! Primitives for matrices near the Stiefel manifold `St(d, r) = {x : xᵀx = I}`.

use std::ops::Deref;
use std::sync::OnceLock;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Mat, Result};

/// Residual below which a matrix counts as exactly on the manifold.
pub const FEASIBILITY_TOL: f64 = 1e-12;

/// Singular values or `|R_jj|` below this are treated as rank loss.
pub const RANK_TOL: f64 = 1e-12;

/// A `d x r` iterate with `r <= d` and finite entries.
///
/// The Gram residual `||xᵀx - I||_F` is computed lazily and cached until the
/// matrix is mutated through [`StiefelIterate::update`].
#[derive(Debug, Clone)]
pub struct StiefelIterate {
    data: Mat,
    residual: OnceLock<f64>,
}

impl StiefelIterate {
    pub fn new(data: Mat) -> Result<Self> {
        check_shape(&data)?;
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("iterate".into()));
        }
        Ok(Self {
            data,
            residual: OnceLock::new(),
        })
    }

    pub fn data(&self) -> &Mat {
        &self.data
    }

    pub fn into_inner(self) -> Mat {
        self.data
    }

    pub fn residual(&self) -> f64 {
        *self
            .residual
            .get_or_init(|| feasibility_residual(&self.data))
    }

    pub fn is_feasible(&self) -> bool {
        self.residual() <= FEASIBILITY_TOL
    }

    /// Mutates the matrix in place; the shape must not change.
    pub fn update(&mut self, f: impl FnOnce(&mut Mat)) -> Result<()> {
        let shape = self.data.shape();
        f(&mut self.data);
        self.residual = OnceLock::new();
        if self.data.shape() != shape {
            return Err(Error::Dimension(format!(
                "update changed shape from {:?} to {:?}",
                shape,
                self.data.shape()
            )));
        }
        if !self.data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("iterate".into()));
        }
        Ok(())
    }
}

impl Deref for StiefelIterate {
    type Target = Mat;
    fn deref(&self) -> &Mat {
        &self.data
    }
}

impl PartialEq for StiefelIterate {
    fn eq(&self, other: &Self) -> bool {
        self.data == other.data
    }
}

/// Landing parameters: penalty weight `lambda` and safety radius `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandingParams {
    pub lambda: f64,
    pub epsilon: f64,
}

impl LandingParams {
    pub fn new(lambda: f64, epsilon: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::Parameter(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        if !(epsilon > 0.0 && epsilon < 0.75) {
            return Err(Error::Parameter(format!(
                "epsilon must lie in (0, 3/4), got {epsilon}"
            )));
        }
        Ok(Self { lambda, epsilon })
    }
}

fn check_shape(x: &Mat) -> Result<()> {
    let (d, r) = x.shape();
    if r == 0 || d == 0 {
        return Err(Error::Dimension("empty matrix".into()));
    }
    if r > d {
        return Err(Error::Dimension(format!("need r <= d, got {d}x{r}")));
    }
    Ok(())
}

fn check_square(a: &Mat) -> Result<()> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

fn check_same(x: &Mat, g: &Mat) -> Result<()> {
    if x.shape() != g.shape() {
        return Err(Error::Dimension(format!(
            "shapes {:?} and {:?} differ",
            x.shape(),
            g.shape()
        )));
    }
    Ok(())
}

pub fn skew(a: &Mat) -> Result<Mat> {
    check_square(a)?;
    Ok((a - a.transpose()) * 0.5)
}

pub fn sym(a: &Mat) -> Result<Mat> {
    check_square(a)?;
    Ok((a + a.transpose()) * 0.5)
}

/// `xᵀx - I`.
pub fn gram_residual(x: &Mat) -> Mat {
    let mut g = x.tr_mul(x);
    for i in 0..g.nrows() {
        g[(i, i)] -= 1.0;
    }
    g
}

/// `||xᵀx - I||_F`.
pub fn feasibility_residual(x: &Mat) -> f64 {
    gram_residual(x).norm()
}

pub fn in_safety_region(x: &Mat, epsilon: f64) -> Result<bool> {
    if !(epsilon > 0.0 && epsilon < 0.75) {
        return Err(Error::Parameter(format!(
            "epsilon must lie in (0, 3/4), got {epsilon}"
        )));
    }
    Ok(feasibility_residual(x) <= epsilon)
}

/// Relative gradient `skew(g xᵀ) x`.
///
/// Evaluated as `(g (xᵀx) - x (gᵀx)) / 2`, which never forms a `d x d` matrix.
pub fn relative_gradient(x: &Mat, g: &Mat) -> Result<Mat> {
    check_shape(x)?;
    check_same(x, g)?;
    let xtx = x.tr_mul(x);
    let gtx = g.tr_mul(x);
    let mut out = g * xtx;
    out.gemm(-1.0, x, &gtx, 1.0);
    out *= 0.5;
    Ok(out)
}

/// `||xᵀx - I||_F^2 / 4`.
pub fn penalty(x: &Mat) -> f64 {
    0.25 * gram_residual(x).norm_squared()
}

/// `out += a * x`, elementwise.
pub fn axpy(out: &mut Mat, a: f64, x: &Mat) {
    out.zip_apply(x, |o, v| *o += a * v);
}

/// `x (xᵀx - I)`.
pub fn penalty_gradient(x: &Mat) -> Mat {
    x * gram_residual(x)
}

/// `grad f(x) + lambda * x (xᵀx - I)` for a Euclidean gradient `g`.
///
/// Evaluated as `(g/2 + λx)(xᵀx) - x (gᵀx/2 + λI)`.
pub fn landing_field(x: &Mat, g: &Mat, params: &LandingParams) -> Result<Mat> {
    check_shape(x)?;
    check_same(x, g)?;
    let lam = params.lambda;
    let xtx = x.tr_mul(x);
    let mut b = g.tr_mul(x);
    b *= 0.5;
    for i in 0..b.nrows() {
        b[(i, i)] += lam;
    }
    let mut a = g * 0.5;
    axpy(&mut a, lam, x);
    let mut field = a * xtx;
    field.gemm(-1.0, x, &b, 1.0);
    Ok(field)
}

/// Projection onto the tangent space at a feasible `x`: `v - x sym(xᵀv)`.
pub fn tangent_projection(x: &Mat, v: &Mat) -> Result<Mat> {
    check_same(x, v)?;
    let xtv = x.tr_mul(v);
    let s = (&xtv + xtv.transpose()) * 0.5;
    let mut out = v.clone();
    out.gemm(-1.0, x, &s, 1.0);
    Ok(out)
}

pub fn singular_values(x: &Mat) -> DVector<f64> {
    x.clone().svd(false, false).singular_values
}

/// Nearest point on the manifold, `U Vᵀ` from the thin SVD `x = U S Vᵀ`.
pub fn project_to_stiefel(x: &Mat) -> Result<StiefelIterate> {
    check_shape(x)?;
    let svd = x.clone().svd(true, true);
    let smin = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if !(smin >= RANK_TOL) {
        return Err(Error::Singular(smin));
    }
    let u = svd.u.expect("svd computed with u");
    let vt = svd.v_t.expect("svd computed with v_t");
    StiefelIterate::new(u * vt)
}

/// QR retraction of `x + step`, with the sign convention `diag(R) > 0`.
pub fn qr_retraction(x: &Mat, step: &Mat) -> Result<StiefelIterate> {
    check_shape(x)?;
    check_same(x, step)?;
    let qr = (x + step).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..r.ncols() {
        let rjj = r[(j, j)];
        if !(rjj.abs() >= RANK_TOL) {
            return Err(Error::Singular(rjj.abs()));
        }
        if rjj < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    StiefelIterate::new(q)
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Haar-distributed point of `St(d, r)`.
pub fn random_stiefel<R: Rng + ?Sized>(d: usize, r: usize, rng: &mut R) -> Result<StiefelIterate> {
    let z = gaussian_matrix(d, r, rng);
    qr_retraction(&z, &Mat::zeros(d, r))
}

/// Random point with `||xᵀx - I||_F = radius`, built as `Q (I + S)^{1/2}` for a
/// random symmetric `S` with `||S||_F = radius`.
pub fn random_with_residual<R: Rng + ?Sized>(
    d: usize,
    r: usize,
    radius: f64,
    rng: &mut R,
) -> Result<Mat> {
    if !(0.0..1.0).contains(&radius) {
        return Err(Error::Parameter(format!(
            "radius must lie in [0, 1), got {radius}"
        )));
    }
    let q = random_stiefel(d, r, rng)?.into_inner();
    let a = gaussian_matrix(r, r, rng);
    let mut s = (&a + a.transpose()) * 0.5;
    let n = s.norm();
    if n == 0.0 {
        return Ok(q);
    }
    s *= radius / n;
    let eig = s.symmetric_eigen();
    let root = DVector::from_iterator(r, eig.eigenvalues.iter().map(|l| (1.0 + l).sqrt()));
    let sqrt = &eig.eigenvectors * Mat::from_diagonal(&root) * eig.eigenvectors.transpose();
    Ok(q * sqrt)
}
