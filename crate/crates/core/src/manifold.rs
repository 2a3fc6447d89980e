//! Geometry of the complex circle manifold (unit-modulus vectors), the
//! complex oblique manifold (unit-norm columns) and their product.
//!
//! Both factors are embedded in complex Euclidean space with the real
//! metric `<a, b> = Re{a^H b}`; the product metric is the sum of the two.
//! Tangent projection is orthogonal projection under that metric and the
//! retraction is the nearest-point map (entrywise normalization for the
//! circle factor, columnwise normalization for the oblique factor).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};

/// Tolerance on `|theta_n| - 1` and `||w_k|| - 1` for points on the manifold.
pub const MANIFOLD_TOL: f64 = 1e-12;
/// Tolerance on the tangency residuals of a tangent vector.
pub const TANGENT_TOL: f64 = 1e-10;

/// RIS reflection coefficients, every entry on the unit circle.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseVector(DVector<Complex64>);

impl PhaseVector {
    pub fn new(entries: DVector<Complex64>) -> Result<Self> {
        for (n, z) in entries.iter().enumerate() {
            let err = (z.norm() - 1.0).abs();
            if !(err <= MANIFOLD_TOL) {
                return Err(Error::Domain(format!(
                    "phase entry {n} has modulus {} (not unit)",
                    z.norm()
                )));
            }
        }
        Ok(Self(entries))
    }

    pub fn from_angles(angles: &[f64]) -> Self {
        Self(DVector::from_iterator(
            angles.len(),
            angles.iter().map(|&a| Complex64::from_polar(1.0, a)),
        ))
    }

    /// Uniform random phases on `[0, 2pi)`.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let angles: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect();
        Self::from_angles(&angles)
    }

    pub fn ones(n: usize) -> Self {
        Self(DVector::from_element(n, Complex64::new(1.0, 0.0)))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<Complex64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<Complex64> {
        self.0
    }
}

/// BS receive beamformers, one unit-norm column per device.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamMatrix(DMatrix<Complex64>);

impl BeamMatrix {
    pub fn new(entries: DMatrix<Complex64>) -> Result<Self> {
        for (k, col) in entries.column_iter().enumerate() {
            let err = (col.norm() - 1.0).abs();
            if !(err <= MANIFOLD_TOL) {
                return Err(Error::Domain(format!(
                    "beam column {k} has norm {} (not unit)",
                    col.norm()
                )));
            }
        }
        Ok(Self(entries))
    }

    /// Normalizes every column of `raw`; fails on a zero column.
    pub fn normalized(mut raw: DMatrix<Complex64>) -> Result<Self> {
        for (k, mut col) in raw.column_iter_mut().enumerate() {
            let norm = col.norm();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(Error::DegenerateRetraction(format!(
                    "column {k} has norm {norm}"
                )));
            }
            col.unscale_mut(norm);
        }
        Ok(Self(raw))
    }

    /// Columns drawn from a circular Gaussian and normalized.
    pub fn random<R: Rng + ?Sized>(m: usize, k: usize, rng: &mut R) -> Self {
        loop {
            let raw = DMatrix::from_fn(m, k, |_, _| crate::channel::circular_gaussian(rng));
            if let Ok(w) = Self::normalized(raw) {
                return w;
            }
        }
    }

    /// An `m x 0` matrix, for problems with no beamforming block.
    pub fn empty(m: usize) -> Self {
        Self(DMatrix::zeros(m, 0))
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<Complex64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<Complex64> {
        self.0
    }
}

/// A point `(theta, W)` on the product manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductPoint {
    pub theta: PhaseVector,
    pub w: BeamMatrix,
}

impl ProductPoint {
    pub fn new(theta: PhaseVector, w: BeamMatrix) -> Self {
        Self { theta, w }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.theta.len(), self.w.nrows(), self.w.ncols())
    }

    /// Squared ambient (Frobenius over both blocks) distance.
    pub fn distance_sq(&self, other: &ProductPoint) -> f64 {
        (self.theta.as_vector() - other.theta.as_vector()).norm_squared()
            + (self.w.as_matrix() - other.w.as_matrix()).norm_squared()
    }

    pub fn to_ambient(&self) -> AmbientPair {
        AmbientPair {
            theta: self.theta.as_vector().clone(),
            w: self.w.as_matrix().clone(),
        }
    }
}

/// An unconstrained vector/matrix pair in the embedding space, e.g. a
/// Euclidean gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbientPair {
    pub theta: DVector<Complex64>,
    pub w: DMatrix<Complex64>,
}

impl AmbientPair {
    pub fn zeros(n: usize, m: usize, k: usize) -> Self {
        Self {
            theta: DVector::zeros(n),
            w: DMatrix::zeros(m, k),
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.theta.len(), self.w.nrows(), self.w.ncols())
    }

    pub fn inner(&self, other: &AmbientPair) -> f64 {
        self.theta.dotc(&other.theta).re + self.w.dotc(&other.w).re
    }

    pub fn norm_squared(&self) -> f64 {
        self.theta.norm_squared() + self.w.norm_squared()
    }
}

/// A direction in the tangent space of a [`ProductPoint`].
///
/// Values are only produced by projection (or checked on construction), so
/// the tangency residuals stay below [`TANGENT_TOL`] for the base point the
/// vector was built at.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    d_theta: DVector<Complex64>,
    d_w: DMatrix<Complex64>,
}

impl TangentVector {
    /// Wraps the pair after checking it is tangent at `base`.
    pub fn new(
        base: &ProductPoint,
        d_theta: DVector<Complex64>,
        d_w: DMatrix<Complex64>,
    ) -> Result<Self> {
        check_shapes(base.shape(), (d_theta.len(), d_w.nrows(), d_w.ncols()))?;
        let v = Self { d_theta, d_w };
        let (circle, oblique) = tangency_residuals(base, &v);
        if circle > TANGENT_TOL || oblique > TANGENT_TOL {
            return Err(Error::Domain(format!(
                "not tangent: circle residual {circle:e}, oblique residual {oblique:e}"
            )));
        }
        Ok(v)
    }

    pub fn zero(base: &ProductPoint) -> Self {
        let (n, m, k) = base.shape();
        Self {
            d_theta: DVector::zeros(n),
            d_w: DMatrix::zeros(m, k),
        }
    }

    pub fn d_theta(&self) -> &DVector<Complex64> {
        &self.d_theta
    }

    pub fn d_w(&self) -> &DMatrix<Complex64> {
        &self.d_w
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.d_theta.len(), self.d_w.nrows(), self.d_w.ncols())
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn norm_squared(&self) -> f64 {
        self.d_theta.norm_squared() + self.d_w.norm_squared()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            d_theta: &self.d_theta * Complex64::new(s, 0.0),
            d_w: &self.d_w * Complex64::new(s, 0.0),
        }
    }

    /// `self + s * other`; both must live in the same tangent space.
    pub fn add_scaled(&self, s: f64, other: &TangentVector) -> Result<Self> {
        check_shapes(self.shape(), other.shape())?;
        let c = Complex64::new(s, 0.0);
        Ok(Self {
            d_theta: &self.d_theta + &other.d_theta * c,
            d_w: &self.d_w + &other.d_w * c,
        })
    }

    pub fn to_ambient(&self) -> AmbientPair {
        AmbientPair {
            theta: self.d_theta.clone(),
            w: self.d_w.clone(),
        }
    }
}

fn check_shapes(a: (usize, usize, usize), b: (usize, usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!(
            "expected (N, M, K) = {a:?}, got {b:?}"
        )));
    }
    Ok(())
}

/// Largest `|Re{conj(d_theta_n) theta_n}|` and largest `|Re{w_k^H d_w_k}|`.
pub fn tangency_residuals(base: &ProductPoint, v: &TangentVector) -> (f64, f64) {
    let circle = base
        .theta
        .as_vector()
        .iter()
        .zip(v.d_theta.iter())
        .map(|(t, d)| (d.conj() * t).re.abs())
        .fold(0.0, f64::max);
    let oblique = base
        .w
        .as_matrix()
        .column_iter()
        .zip(v.d_w.column_iter())
        .map(|(w, d)| w.dotc(&d).re.abs())
        .fold(0.0, f64::max);
    (circle, oblique)
}

/// Product metric `Re{a_theta^H b_theta} + Re{tr(a_W^H b_W)}`.
pub fn inner_product(a: &TangentVector, b: &TangentVector) -> Result<f64> {
    check_shapes(a.shape(), b.shape())?;
    Ok(a.d_theta.dotc(&b.d_theta).re + a.d_w.dotc(&b.d_w).re)
}

/// Orthogonal projection of an ambient pair onto the tangent space at `base`.
pub fn project_tangent(base: &ProductPoint, ambient: &AmbientPair) -> Result<TangentVector> {
    check_shapes(base.shape(), ambient.shape())?;
    let theta = base.theta.as_vector();
    let d_theta = DVector::from_iterator(
        theta.len(),
        theta
            .iter()
            .zip(ambient.theta.iter())
            .map(|(t, u)| u - t * (t.conj() * u).re),
    );

    let w = base.w.as_matrix();
    let mut d_w = ambient.w.clone();
    for (k, mut col) in d_w.column_iter_mut().enumerate() {
        let wk = w.column(k);
        let radial = wk.dotc(&col).re;
        col.axpy(Complex64::new(-radial, 0.0), &wk, Complex64::new(1.0, 0.0));
    }
    Ok(TangentVector { d_theta, d_w })
}

/// Moves from `base` along `step * v` and maps back to the manifold.
///
/// The circle block is normalized entrywise and the oblique block
/// columnwise. `step == 0` returns `base` unchanged. Negative steps are
/// accepted (finite-difference probes use them).
pub fn retract(base: &ProductPoint, v: &TangentVector, step: f64) -> Result<ProductPoint> {
    check_shapes(base.shape(), v.shape())?;
    if !step.is_finite() {
        return Err(Error::Domain(format!("retraction step {step} is not finite")));
    }
    if step == 0.0 {
        return Ok(base.clone());
    }
    let s = Complex64::new(step, 0.0);

    let moved = base.theta.as_vector() + &v.d_theta * s;
    let mut theta = moved;
    for (n, z) in theta.iter_mut().enumerate() {
        let r = z.norm();
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::DegenerateRetraction(format!(
                "phase entry {n} has modulus {r} after the step"
            )));
        }
        *z /= r;
    }

    let w = BeamMatrix::normalized(base.w.as_matrix() + &v.d_w * s)?;
    Ok(ProductPoint {
        theta: PhaseVector(theta),
        w,
    })
}

/// Riemannian gradient: projection of the Euclidean gradient.
pub fn riemannian_gradient(base: &ProductPoint, euclidean_grad: &AmbientPair) -> Result<TangentVector> {
    project_tangent(base, euclidean_grad)
}
