//! Hypersphere geometry: the sigmoid-angle spherization map, ambient-space
//! projection onto the radius-`R` sphere, chord distance, and the hand-written
//! backward rules for each.
//!
//! The spherization map sends a latent vector `v ∈ R^D` to angles
//! `θᵢ = δ + (π/2 − 2δ)·σ(s·vᵢ)` and then to Cartesian coordinates in
//! `R^{D+1}`:
//!
//! ```text
//! x₁     = R·cos θ₁
//! x_k    = R·(∏_{j<k} sin θⱼ)·cos θ_k      k = 2..D
//! x_{D+1} = R·∏_{j≤D} sin θⱼ
//! ```
//!
//! All angles stay inside the open first quadrant, so every coordinate is
//! strictly positive and no sine or cosine factor vanishes.

use std::f64::consts::FRAC_PI_2;

use thiserror::Error;

use crate::scalar::{dot, euclidean, norm, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("non-finite input at index {index}")]
    NonFinite { index: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("projection gradient undefined at the origin")]
    ZeroNorm,
    #[error("invalid spherization parameters: {0}")]
    InvalidParams(String),
    #[error("point with norm {norm} is not on the sphere of radius {radius}")]
    OffSphere { norm: f64, radius: f64 },
}

pub const DEFAULT_RADIUS: f64 = 1.0;
pub const DEFAULT_SCALE: f64 = 1.0;
pub const DEFAULT_DELTA: f64 = 1e-4;
pub const DEFAULT_EPSILON: f64 = 1e-9;

/// Relative tolerance on `‖x‖ = R` for a [`SphericalPoint`].
pub const SPHERE_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpherizationParams<T> {
    /// Latent dimension `D`; outputs live in `R^{D+1}`.
    pub dim: usize,
    pub radius: T,
    /// Sigmoid input scale.
    pub scale: T,
    /// Angle margin keeping `θ` inside `(δ, π/2 − δ)`.
    pub delta: T,
    /// Stabilizer in the projection denominator.
    pub epsilon: T,
}

impl<T: Scalar> SpherizationParams<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            radius: T::lit(DEFAULT_RADIUS),
            scale: T::lit(DEFAULT_SCALE),
            delta: T::lit(DEFAULT_DELTA),
            epsilon: T::lit(DEFAULT_EPSILON),
        }
    }

    pub fn with_radius(mut self, radius: T) -> Self {
        self.radius = radius;
        self
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |msg: String| Err(GeometryError::InvalidParams(msg));
        if self.dim == 0 {
            return bad("dimension must be at least 1".into());
        }
        if !(self.radius.is_finite() && self.radius > T::zero()) {
            return bad(format!("radius must be positive, got {}", self.radius));
        }
        if !(self.scale.is_finite() && self.scale > T::zero()) {
            return bad(format!("scale must be positive, got {}", self.scale));
        }
        if !(self.delta > T::zero() && self.delta.as_f64() < std::f64::consts::FRAC_PI_4) {
            return bad(format!("delta must lie in (0, pi/4), got {}", self.delta));
        }
        if !(self.epsilon.is_finite() && self.epsilon > T::zero()) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        Ok(())
    }

    /// Width of the angle interval, `π/2 − 2δ`.
    #[inline]
    fn span(&self) -> T {
        T::lit(FRAC_PI_2) - self.delta - self.delta
    }
}

/// A point on a radius-`R` sphere in `R^{D+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalPoint<T> {
    coords: Vec<T>,
}

impl<T: Scalar> SphericalPoint<T> {
    /// Checks `| ‖coords‖ − R | ≤ 1e-5·R`.
    pub fn new(coords: Vec<T>, radius: T) -> Result<Self, GeometryError> {
        let n = norm(&coords).as_f64();
        let r = radius.as_f64();
        if (n - r).abs() > SPHERE_TOLERANCE * r || !n.is_finite() {
            return Err(GeometryError::OffSphere { norm: n, radius: r });
        }
        Ok(Self { coords })
    }

    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<T> {
        self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn norm(&self) -> T {
        norm(&self.coords)
    }
}

/// Everything [`spherize_backward`] needs from the forward pass.
#[derive(Debug, Clone)]
pub struct SpherizeCache<T> {
    input: Vec<T>,
    params: SpherizationParams<T>,
    sigmoid: Vec<T>,
    sin: Vec<T>,
    cos: Vec<T>,
    /// `prefix[k] = ∏_{j<k} sin θⱼ`, length `D + 1`.
    prefix: Vec<T>,
    coords: Vec<T>,
}

impl<T: Scalar> SpherizeCache<T> {
    pub fn input(&self) -> &[T] {
        &self.input
    }

    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    pub fn angles(&self) -> Vec<T> {
        let span = self.params.span();
        self.sigmoid.iter().map(|&s| self.params.delta + span * s).collect()
    }

    pub fn into_coords(self) -> Vec<T> {
        self.coords
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

fn check_finite<T: Scalar>(v: &[T]) -> Result<(), GeometryError> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(GeometryError::NonFinite { index }),
        None => Ok(()),
    }
}

fn check_len(expected: usize, actual: usize) -> Result<(), GeometryError> {
    if expected == actual {
        Ok(())
    } else {
        Err(GeometryError::DimensionMismatch { expected, actual })
    }
}

/// Spherization forward pass retaining the backward workspace.
pub fn spherize_cached<T: Scalar>(v: &[T], params: &SpherizationParams<T>) -> Result<SpherizeCache<T>, GeometryError> {
    check_len(params.dim, v.len())?;
    check_finite(v)?;
    let d = v.len();
    let span = params.span();
    let mut sig = Vec::with_capacity(d);
    let mut sin = Vec::with_capacity(d);
    let mut cos = Vec::with_capacity(d);
    let mut prefix = Vec::with_capacity(d + 1);
    let mut coords = Vec::with_capacity(d + 1);
    let mut running = T::one();
    for &vi in v {
        let s = sigmoid(params.scale * vi);
        let (st, ct) = (params.delta + span * s).sin_cos();
        prefix.push(running);
        coords.push(params.radius * running * ct);
        running *= st;
        sig.push(s);
        sin.push(st);
        cos.push(ct);
    }
    prefix.push(running);
    coords.push(params.radius * running);
    Ok(SpherizeCache {
        input: v.to_vec(),
        params: *params,
        sigmoid: sig,
        sin,
        cos,
        prefix,
        coords,
    })
}

/// Maps a latent vector onto the radius-`R` sphere.
pub fn spherize_forward<T: Scalar>(
    v: &[T],
    params: &SpherizationParams<T>,
) -> Result<(SphericalPoint<T>, SpherizeCache<T>), GeometryError> {
    let cache = spherize_cached(v, params)?;
    let point = SphericalPoint {
        coords: cache.coords.clone(),
    };
    Ok((point, cache))
}

/// Allocation-light forward pass writing `D + 1` coordinates into `out`.
/// Inputs are assumed finite and correctly sized.
pub(crate) fn spherize_into<T: Scalar>(v: &[T], params: &SpherizationParams<T>, out: &mut [T]) {
    debug_assert_eq!(out.len(), v.len() + 1);
    let span = params.span();
    let mut running = params.radius;
    for (o, &vi) in out.iter_mut().zip(v) {
        let (st, ct) = (params.delta + span * sigmoid(params.scale * vi)).sin_cos();
        *o = running * ct;
        running *= st;
    }
    out[v.len()] = running;
}

/// Returns `(Jᵀ·grad_out, ∂/∂s)` for the spherization map recorded in `cache`.
pub fn spherize_backward<T: Scalar>(cache: &SpherizeCache<T>, grad_out: &[T]) -> Result<(Vec<T>, T), GeometryError> {
    let d = cache.input.len();
    check_len(d + 1, grad_out.len())?;
    let p = &cache.params;
    let span = p.span();
    let mut grad_v = vec![T::zero(); d];
    let mut grad_s = T::zero();
    // suffix = Σ_{k>j} g_k·x_k over ambient coordinates after j
    let mut suffix = grad_out[d] * cache.coords[d];
    for j in (0..d).rev() {
        let dtheta = cache.cos[j] / cache.sin[j] * suffix - grad_out[j] * p.radius * cache.prefix[j] * cache.sin[j];
        let sg = cache.sigmoid[j];
        let dz = dtheta * span * sg * (T::one() - sg);
        grad_v[j] = dz * p.scale;
        grad_s += dz * cache.input[j];
        suffix += grad_out[j] * cache.coords[j];
    }
    Ok((grad_v, grad_s))
}

/// `R·p / (‖p‖ + ε)`; the origin maps to the origin.
pub fn project_to_sphere<T: Scalar>(p: &[T], radius: T, epsilon: T) -> Vec<T> {
    let mut out = p.to_vec();
    project_in_place(&mut out, radius, epsilon);
    out
}

pub(crate) fn project_in_place<T: Scalar>(p: &mut [T], radius: T, epsilon: T) {
    let n = norm(p);
    if n == T::zero() {
        return;
    }
    let k = radius / (n + epsilon);
    p.iter_mut().for_each(|x| *x *= k);
}

/// Transposed Jacobian of [`project_to_sphere`] applied to `grad_out`.
pub fn project_backward<T: Scalar>(p: &[T], radius: T, epsilon: T, grad_out: &[T]) -> Result<Vec<T>, GeometryError> {
    check_len(p.len(), grad_out.len())?;
    let n = norm(p);
    if n == T::zero() {
        return Err(GeometryError::ZeroNorm);
    }
    let denom = n + epsilon;
    let a = radius / denom;
    let b = radius / (denom * denom * n) * dot(p, grad_out);
    Ok(p.iter().zip(grad_out).map(|(&pi, &gi)| a * gi - b * pi).collect())
}

/// Straight-line distance between two points on a sphere.
pub fn chord_distance<T: Scalar>(a: &SphericalPoint<T>, b: &SphericalPoint<T>) -> Result<T, GeometryError> {
    check_len(a.dim(), b.dim())?;
    Ok(euclidean(a.coords(), b.coords()))
}

/// Gradient of `‖a − b‖` with respect to `a`; the gradient with respect to
/// `b` is its negation. Returns zero where `a = b`.
pub fn chord_backward<T: Scalar>(a: &[T], b: &[T]) -> Result<Vec<T>, GeometryError> {
    check_len(a.len(), b.len())?;
    let dist = euclidean(a, b);
    if dist == T::zero() {
        return Ok(vec![T::zero(); a.len()]);
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| (x - y) / dist).collect())
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest `|analytic − numeric| / max(1, |analytic|)` over all coordinates,
/// with the numeric gradient taken by central differences of step `h`.
pub fn finite_diff_check<F: Fn(&[f64]) -> f64>(f: F, analytic: &[f64], x: &[f64], h: f64) -> f64 {
    assert_eq!(analytic.len(), x.len(), "gradient and point differ in length");
    finite_diff_gradient(f, x, h)
        .iter()
        .zip(analytic)
        .map(|(&n, &a)| (a - n).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max)
}
