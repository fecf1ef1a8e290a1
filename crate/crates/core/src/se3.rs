//! Quaternion and rigid-transform algebra.
//!
//! Quaternions are scalar-first, `[s, v]`. A [`RigidTransform`] `(t, q)` acts
//! on a point as `x -> R(q) x + t`; composition `a.compose(&b)` applies `b`
//! first.

use std::ops::{Mul, Neg};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance on `|s^2 + v.v - 1|` for a quaternion to count as unit.
pub const UNIT_TOL: f64 = 1e-9;

/// Dot products above `1 - SLERP_NLERP_THRESHOLD` interpolate linearly.
const SLERP_NLERP_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    pub s: f64,
    pub v: Vec3,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        s: 1.0,
        v: Vector3::new(0.0, 0.0, 0.0),
    };

    pub const fn new(s: f64, x: f64, y: f64, z: f64) -> Self {
        Quaternion {
            s,
            v: Vector3::new(x, y, z),
        }
    }

    pub fn from_parts(s: f64, v: Vec3) -> Self {
        Quaternion { s, v }
    }

    /// Rotation by `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::invalid("rotation axis must be a finite non-zero vector"));
        }
        let (sin, cos) = (0.5 * angle).sin_cos();
        Ok(Quaternion::from_parts(cos, axis * (sin / n)))
    }

    /// Exponential map of a rotation vector: rotation by `|w|` about `w`.
    pub fn from_rotation_vector(w: &Vec3) -> Self {
        let theta = w.norm();
        let half = 0.5 * theta;
        // sin(x)/x series below the cancellation threshold
        let k = if theta < 1e-8 {
            0.5 - theta * theta / 48.0
        } else {
            half.sin() / theta
        };
        Quaternion::from_parts(half.cos(), w * k)
    }

    /// Unit quaternion from a proper rotation matrix (Shepperd's method).
    pub fn from_rotation_matrix(m: &Mat3) -> Self {
        let tr = m.trace();
        let q = if tr > 0.0 {
            let r = (1.0 + tr).sqrt();
            let f = 0.5 / r;
            Quaternion::new(
                0.5 * r,
                (m[(2, 1)] - m[(1, 2)]) * f,
                (m[(0, 2)] - m[(2, 0)]) * f,
                (m[(1, 0)] - m[(0, 1)]) * f,
            )
        } else if m[(0, 0)] >= m[(1, 1)] && m[(0, 0)] >= m[(2, 2)] {
            let r = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt();
            let f = 0.5 / r;
            Quaternion::new(
                (m[(2, 1)] - m[(1, 2)]) * f,
                0.5 * r,
                (m[(0, 1)] + m[(1, 0)]) * f,
                (m[(0, 2)] + m[(2, 0)]) * f,
            )
        } else if m[(1, 1)] >= m[(2, 2)] {
            let r = (1.0 - m[(0, 0)] + m[(1, 1)] - m[(2, 2)]).sqrt();
            let f = 0.5 / r;
            Quaternion::new(
                (m[(0, 2)] - m[(2, 0)]) * f,
                (m[(0, 1)] + m[(1, 0)]) * f,
                0.5 * r,
                (m[(1, 2)] + m[(2, 1)]) * f,
            )
        } else {
            let r = (1.0 - m[(0, 0)] - m[(1, 1)] + m[(2, 2)]).sqrt();
            let f = 0.5 / r;
            Quaternion::new(
                (m[(1, 0)] - m[(0, 1)]) * f,
                (m[(0, 2)] + m[(2, 0)]) * f,
                (m[(1, 2)] + m[(2, 1)]) * f,
                0.5 * r,
            )
        };
        q.normalized()
    }

    pub fn norm_squared(&self) -> f64 {
        self.s * self.s + self.v.dot(&self.v)
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn dot(&self, other: &Quaternion) -> f64 {
        self.s * other.s + self.v.dot(&other.v)
    }

    pub fn is_unit(&self) -> bool {
        (self.norm_squared() - 1.0).abs() <= UNIT_TOL
    }

    pub fn conjugate(&self) -> Self {
        Quaternion::from_parts(self.s, -self.v)
    }

    /// Scaled to unit norm. Used by optimizers after a tangent step; parsers
    /// and validators reject non-unit input instead of calling this.
    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Quaternion::from_parts(self.s / n, self.v / n)
    }

    /// `[s, -v] / |q|^2`.
    pub fn inverse(&self) -> Result<Self> {
        let n2 = self.norm_squared();
        if !(n2 > 0.0) || !n2.is_finite() {
            return Err(Error::invalid("cannot invert a zero-norm quaternion"));
        }
        Ok(Quaternion::from_parts(self.s / n2, -self.v / n2))
    }

    pub fn ensure_unit(&self) -> Result<()> {
        if self.is_unit() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "quaternion is not unit (|q|^2 = {})",
                self.norm_squared()
            )))
        }
    }

    /// Rotates `v` by this unit quaternion.
    pub fn rotate_vector(&self, v: &Vec3) -> Result<Vec3> {
        self.ensure_unit()?;
        Ok(self.rotate_unchecked(v))
    }

    /// `v + 2 q x (q x v + s v)`; caller guarantees a unit quaternion.
    #[inline]
    pub fn rotate_unchecked(&self, v: &Vec3) -> Vec3 {
        let inner = self.v.cross(v) + v * self.s;
        v + self.v.cross(&inner) * 2.0
    }

    pub fn to_matrix(&self) -> Result<Mat3> {
        self.ensure_unit()?;
        Ok(self.to_matrix_unchecked())
    }

    #[inline]
    pub fn to_matrix_unchecked(&self) -> Mat3 {
        let (s, x, y, z) = (self.s, self.v.x, self.v.y, self.v.z);
        Mat3::new(
            s * s + x * x - y * y - z * z,
            2.0 * (x * y - s * z),
            2.0 * (x * z + s * y),
            2.0 * (x * y + s * z),
            s * s - x * x + y * y - z * z,
            2.0 * (y * z - s * x),
            2.0 * (x * z - s * y),
            2.0 * (y * z + s * x),
            s * s - x * x - y * y + z * z,
        )
    }

    /// Representative with `s >= 0`. When `s == 0` the first non-zero vector
    /// component is made positive.
    pub fn canonicalize(&self) -> Self {
        let flip = if self.s != 0.0 {
            self.s < 0.0
        } else {
            self.v
                .iter()
                .find(|c| **c != 0.0)
                .is_some_and(|c| *c < 0.0)
        };
        if flip {
            -*self
        } else {
            *self
        }
    }

    /// `min(|a - b|, |a + b|)`: distance between the rotations, ignoring sign.
    pub fn double_cover_distance(&self, other: &Quaternion) -> f64 {
        self.double_cover_distance_squared(other).sqrt()
    }

    pub fn double_cover_distance_squared(&self, other: &Quaternion) -> f64 {
        let minus = (*self - *other).norm_squared();
        let plus = (*self + *other).norm_squared();
        minus.min(plus)
    }

    /// Rotation angle in `[0, pi]` of a unit quaternion.
    pub fn angle(&self) -> f64 {
        2.0 * self.v.norm().atan2(self.s.abs())
    }

    /// Angle in `[0, pi]` of the rotation taking `self` to `other`.
    pub fn angle_to(&self, other: &Quaternion) -> f64 {
        (self.conjugate() * *other).angle()
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;

    fn mul(self, rhs: Quaternion) -> Quaternion {
        Quaternion::from_parts(
            self.s * rhs.s - self.v.dot(&rhs.v),
            rhs.v * self.s + self.v * rhs.s + self.v.cross(&rhs.v),
        )
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;

    fn neg(self) -> Quaternion {
        Quaternion::from_parts(-self.s, -self.v)
    }
}

impl std::ops::Add for Quaternion {
    type Output = Quaternion;

    fn add(self, rhs: Quaternion) -> Quaternion {
        Quaternion::from_parts(self.s + rhs.s, self.v + rhs.v)
    }
}

impl std::ops::Sub for Quaternion {
    type Output = Quaternion;

    fn sub(self, rhs: Quaternion) -> Quaternion {
        Quaternion::from_parts(self.s - rhs.s, self.v - rhs.v)
    }
}

pub fn quat_mul(q1: &Quaternion, q2: &Quaternion) -> Quaternion {
    *q1 * *q2
}

/// A rigid motion `x -> R(q) x + t` with unit `q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub t: Vec3,
    pub q: Quaternion,
}

impl Default for RigidTransform {
    fn default() -> Self {
        RigidTransform::IDENTITY
    }
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        t: Vector3::new(0.0, 0.0, 0.0),
        q: Quaternion::IDENTITY,
    };

    pub fn new(t: Vec3, q: Quaternion) -> Result<Self> {
        q.ensure_unit()?;
        if !t.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("translation must be finite"));
        }
        Ok(RigidTransform { t, q })
    }

    pub fn from_translation(t: Vec3) -> Self {
        RigidTransform {
            t,
            q: Quaternion::IDENTITY,
        }
    }

    pub fn from_rotation(q: Quaternion) -> Result<Self> {
        RigidTransform::new(Vec3::zeros(), q)
    }

    #[inline]
    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.q.rotate_unchecked(x) + self.t
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        self.q.to_matrix_unchecked()
    }

    /// `self ∘ first = (t2 + R2 t1, q2 q1)`.
    pub fn compose(&self, first: &RigidTransform) -> RigidTransform {
        RigidTransform {
            t: self.t + self.q.rotate_unchecked(&first.t),
            q: self.q * first.q,
        }
    }

    /// `(-R^T t, q^-1)`.
    pub fn inverse(&self) -> RigidTransform {
        let qi = self.q.conjugate();
        RigidTransform {
            t: -qi.rotate_unchecked(&self.t),
            q: qi,
        }
    }

    /// Re-projects the rotation onto the unit sphere.
    pub fn renormalized(&self) -> RigidTransform {
        RigidTransform {
            t: self.t,
            q: self.q.normalized(),
        }
    }

    /// Same rotation with a canonical (`s >= 0`) quaternion.
    pub fn canonicalized(&self) -> RigidTransform {
        RigidTransform {
            t: self.t,
            q: self.q.canonicalize(),
        }
    }

    /// Equality of the rigid motions, treating `q` and `-q` as equal.
    pub fn approx_eq(&self, other: &RigidTransform, tol: f64) -> bool {
        (self.t - other.t).amax() <= tol && self.q.double_cover_distance(&other.q) <= tol
    }
}

pub fn compose(second: &RigidTransform, first: &RigidTransform) -> RigidTransform {
    second.compose(first)
}

pub fn inverse(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

fn check_time(time: f64) -> Result<()> {
    if (0.0..=1.0).contains(&time) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "interpolation time {time} outside [0, 1]"
        )))
    }
}

pub fn lerp(r0: &Vec3, r1: &Vec3, time: f64) -> Result<Vec3> {
    check_time(time)?;
    if r0 == r1 {
        return Ok(*r0);
    }
    Ok(r0 * (1.0 - time) + r1 * time)
}

/// Shortest-arc spherical interpolation `q0 (q0^-1 q1)^time`.
pub fn slerp(q0: &Quaternion, q1: &Quaternion, time: f64) -> Result<Quaternion> {
    check_time(time)?;
    q0.ensure_unit()?;
    q1.ensure_unit()?;
    if time == 0.0 {
        return Ok(*q0);
    }
    let mut end = *q1;
    let mut d = q0.dot(q1);
    if d < 0.0 {
        end = -end;
        d = -d;
    }
    if time == 1.0 || end == *q0 {
        return Ok(end);
    }
    if d > 1.0 - SLERP_NLERP_THRESHOLD {
        let q = Quaternion::from_parts(
            q0.s * (1.0 - time) + end.s * time,
            q0.v * (1.0 - time) + end.v * time,
        );
        return Ok(q.normalized());
    }
    let theta = d.min(1.0).acos();
    let sin_theta = theta.sin();
    let a = ((1.0 - time) * theta).sin() / sin_theta;
    let b = (time * theta).sin() / sin_theta;
    let q = Quaternion::from_parts(q0.s * a + end.s * b, q0.v * a + end.v * b);
    // a, b are exact in exact arithmetic; the division only removes rounding drift
    Ok(q.normalized())
}

pub fn interp_transform(t0: &RigidTransform, t1: &RigidTransform, time: f64) -> Result<RigidTransform> {
    Ok(RigidTransform {
        t: lerp(&t0.t, &t1.t, time)?,
        q: slerp(&t0.q, &t1.q, time)?,
    })
}
