//! Rigid-body pose algebra, twists, wrenches and the block-diagonal
//! quasi-dynamic inertia.
//!
//! Orientations are unit quaternions. Whenever a quaternion is written out
//! (logs, datasets, configs) the component order is scalar-last:
//! `[qx, qy, qz, qw]`.

use nalgebra::{Matrix3, Quaternion, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::real::{lift, Real};

/// Below this squared angle the exponential map switches to its Taylor series.
const SMALL_ANGLE_SQ: f64 = 1e-8;

/// Rigid transform: world position plus unit orientation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose<T: Real = f64> {
    pub translation: Vector3<T>,
    pub rotation: UnitQuaternion<T>,
}

impl<T: Real> Pose<T> {
    pub fn new(translation: Vector3<T>, rotation: UnitQuaternion<T>) -> Self {
        Self {
            translation,
            rotation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), UnitQuaternion::identity())
    }

    pub fn from_translation(translation: Vector3<T>) -> Self {
        Self::new(translation, UnitQuaternion::identity())
    }

    pub fn inverse(&self) -> Self {
        let rotation = self.rotation.inverse();
        Self::new(-(rotation * self.translation), rotation)
    }

    /// Maps a point expressed in this frame into the parent frame.
    #[inline]
    pub fn transform_point(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p + self.translation
    }

    /// Maps a parent-frame point into this frame.
    #[inline]
    pub fn inverse_transform_point(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation.inverse_transform_vector(&(p - self.translation))
    }

    /// Drops derivative information.
    pub fn re(&self) -> Pose<f64> {
        let q = self.rotation.quaternion();
        Pose::new(
            self.translation.map(|x| x.re()),
            Unit::new_unchecked(Quaternion::new(q.w.re(), q.i.re(), q.j.re(), q.k.re())),
        )
    }

    pub fn is_finite(&self) -> bool {
        let q = self.rotation.quaternion();
        self.translation.iter().all(|x| x.re().is_finite())
            && [q.w, q.i, q.j, q.k].iter().all(|x| x.re().is_finite())
    }
}

impl Pose<f64> {
    /// Constant lift into another scalar type.
    pub fn lift<T: Real>(&self) -> Pose<T> {
        let q = self.rotation.quaternion();
        Pose::new(
            self.translation.map(lift),
            Unit::new_unchecked(Quaternion::new(
                lift(q.w),
                lift(q.i),
                lift(q.j),
                lift(q.k),
            )),
        )
    }

    /// `[x, y, z, qx, qy, qz, qw]`.
    pub fn to_array(&self) -> [f64; 7] {
        let q = self.rotation.quaternion();
        let t = self.translation;
        [t.x, t.y, t.z, q.i, q.j, q.k, q.w]
    }

    /// Inverse of [`Pose::to_array`]; the quaternion is renormalized.
    pub fn from_array(a: [f64; 7]) -> Self {
        Pose::new(
            Vector3::new(a[0], a[1], a[2]),
            UnitQuaternion::from_quaternion(Quaternion::new(a[6], a[3], a[4], a[5])),
        )
    }
}

/// Serialized as `[x, y, z, qx, qy, qz, qw]`.
impl Serialize for Pose<f64> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose<f64> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let a = <[f64; 7]>::deserialize(d)?;
        let norm = (a[3] * a[3] + a[4] * a[4] + a[5] * a[5] + a[6] * a[6]).sqrt();
        if !(norm > 0.0) || a.iter().any(|x| !x.is_finite()) {
            return Err(serde::de::Error::custom("pose needs finite values and a nonzero quaternion"));
        }
        Ok(Pose::from_array(a))
    }
}

/// Group composition `a ∘ b`, with the orientation renormalized.
pub fn compose<T: Real>(a: &Pose<T>, b: &Pose<T>) -> Pose<T> {
    Pose::new(
        a.rotation * b.translation + a.translation,
        renormalize(a.rotation.quaternion() * b.rotation.quaternion()),
    )
}

#[inline]
fn renormalize<T: Real>(q: Quaternion<T>) -> UnitQuaternion<T> {
    UnitQuaternion::new_normalize(q)
}

/// Exponential map of a rotation vector.
///
/// Uses a Taylor series near zero so the dual path never differentiates the
/// norm at the origin.
pub fn exp_rotation<T: Real>(omega: &Vector3<T>) -> UnitQuaternion<T> {
    let theta_sq = omega.norm_squared();
    let (w, s) = if theta_sq.re() < SMALL_ANGLE_SQ {
        // cos(θ/2) ≈ 1 − θ²/8, sin(θ/2)/θ ≈ 1/2 − θ²/48
        (
            T::one() - theta_sq / 8.0,
            lift::<T>(0.5) - theta_sq / 48.0,
        )
    } else {
        let theta = theta_sq.sqrt();
        let half = theta * 0.5;
        (half.cos(), half.sin() / theta)
    };
    renormalize(Quaternion::new(w, omega.x * s, omega.y * s, omega.z * s))
}

/// Translation increment plus rotation vector, both in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Twist<T: Real = f64> {
    pub linear: Vector3<T>,
    pub angular: Vector3<T>,
}

impl<T: Real> Twist<T> {
    pub fn new(linear: Vector3<T>, angular: Vector3<T>) -> Self {
        Self { linear, angular }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn scale(&self, s: T) -> Self {
        Self::new(self.linear * s, self.angular * s)
    }

    /// Layout `[vx, vy, vz, wx, wy, wz]`.
    pub fn coord(&self, i: usize) -> T {
        if i < 3 {
            self.linear[i]
        } else {
            self.angular[i - 3]
        }
    }

    pub fn from_coords(c: [T; 6]) -> Self {
        Self::new(
            Vector3::new(c[0], c[1], c[2]),
            Vector3::new(c[3], c[4], c[5]),
        )
    }
}

impl<T: Real> std::ops::Neg for Twist<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.linear, -self.angular)
    }
}

/// Applies a pose increment: translation is added, orientation is
/// left-multiplied by `exp(angular)`.
pub fn apply_twist<T: Real>(q: &Pose<T>, u: &Twist<T>) -> Pose<T> {
    Pose::new(
        q.translation + u.linear,
        renormalize(exp_rotation(&u.angular).quaternion() * q.rotation.quaternion()),
    )
}

/// Force and torque in world coordinates about a stated reference point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wrench<T: Real = f64> {
    pub force: Vector3<T>,
    pub torque: Vector3<T>,
}

impl<T: Real> Wrench<T> {
    pub fn new(force: Vector3<T>, torque: Vector3<T>) -> Self {
        Self { force, torque }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    /// Point force `f` applied at `lever` relative to the reference point.
    #[inline]
    pub fn from_point_force(lever: &Vector3<T>, f: &Vector3<T>) -> Self {
        Self::new(*f, lever.cross(f))
    }

    /// Re-expresses the wrench about a reference point moved by `offset`.
    pub fn shift_reference(&self, offset: &Vector3<T>) -> Self {
        Self::new(self.force, self.torque - offset.cross(&self.force))
    }

    pub fn re(&self) -> Wrench<f64> {
        Wrench::new(self.force.map(|x| x.re()), self.torque.map(|x| x.re()))
    }
}

/// Serialized as `[fx, fy, fz, tx, ty, tz]`.
impl Serialize for Wrench<f64> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let (f, t) = (self.force, self.torque);
        [f.x, f.y, f.z, t.x, t.y, t.z].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Wrench<f64> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let a = <[f64; 6]>::deserialize(d)?;
        Ok(Wrench::new(Vector3::new(a[0], a[1], a[2]), Vector3::new(a[3], a[4], a[5])))
    }
}

impl<T: Real> std::ops::Add for Wrench<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.force + o.force, self.torque + o.torque)
    }
}

impl<T: Real> std::ops::AddAssign for Wrench<T> {
    fn add_assign(&mut self, o: Self) {
        self.force += o.force;
        self.torque += o.torque;
    }
}

impl<T: Real> std::ops::Neg for Wrench<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.force, -self.torque)
    }
}

/// Mass properties. `rotational` is expressed in the object frame and
/// `com` is the center of mass in the object frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InertiaSpec", into = "InertiaSpec")]
pub struct InertiaParams {
    mass: f64,
    rotational: Matrix3<f64>,
    rotational_inv: Matrix3<f64>,
    gravity: Vector3<f64>,
    com: Vector3<f64>,
}

impl InertiaParams {
    pub fn new(
        mass: f64,
        rotational: Matrix3<f64>,
        gravity: Vector3<f64>,
        com: Vector3<f64>,
    ) -> Result<Self, ConfigError> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(ConfigError::invalid("inertia.mass", "must be positive"));
        }
        if (rotational - rotational.transpose()).abs().max() > 1e-12 * rotational.abs().max() {
            return Err(ConfigError::invalid("inertia.rotational", "must be symmetric"));
        }
        let chol = rotational.cholesky().ok_or_else(|| {
            ConfigError::invalid("inertia.rotational", "must be positive definite")
        })?;
        Ok(Self {
            mass,
            rotational,
            rotational_inv: chol.inverse(),
            gravity,
            com,
        })
    }

    /// Diagonal rotational inertia, CoM at the frame origin.
    pub fn diagonal(mass: f64, diag: [f64; 3], gravity: Vector3<f64>) -> Result<Self, ConfigError> {
        Self::new(
            mass,
            Matrix3::from_diagonal(&Vector3::from(diag)),
            gravity,
            Vector3::zeros(),
        )
    }

    pub fn solid_box(mass: f64, half_extents: [f64; 3], gravity: Vector3<f64>) -> Result<Self, ConfigError> {
        let [a, b, c] = half_extents.map(|h| 2.0 * h);
        let k = mass / 12.0;
        Self::diagonal(mass, [k * (b * b + c * c), k * (a * a + c * c), k * (a * a + b * b)], gravity)
    }

    /// Solid cylinder with its axis along the object-frame y axis.
    pub fn solid_cylinder_y(mass: f64, radius: f64, half_length: f64, gravity: Vector3<f64>) -> Result<Self, ConfigError> {
        let h = 2.0 * half_length;
        let transverse = mass * (3.0 * radius * radius + h * h) / 12.0;
        let axial = 0.5 * mass * radius * radius;
        Self::diagonal(mass, [transverse, axial, transverse], gravity)
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn rotational(&self) -> &Matrix3<f64> {
        &self.rotational
    }

    pub fn gravity(&self) -> &Vector3<f64> {
        &self.gravity
    }

    pub fn com(&self) -> &Vector3<f64> {
        &self.com
    }

    pub fn with_gravity(mut self, gravity: Vector3<f64>) -> Self {
        self.gravity = gravity;
        self
    }
}

/// Gravity wrench about the pose origin: `m·g` at the CoM.
pub fn gravity_wrench<T: Real>(inertia: &InertiaParams, q: &Pose<T>) -> Wrench<T> {
    let force: Vector3<T> = inertia.gravity.map(|g| lift::<T>(g * inertia.mass));
    let lever = q.rotation * inertia.com.map(lift::<T>);
    Wrench::from_point_force(&lever, &force)
}

/// `M⁻¹·[force; torque]` with `M = diag(m·I, I_rot)`, the rotational block
/// taken as given (object frame aligned with the world).
pub fn solve_inertia<T: Real>(inertia: &InertiaParams, w: &Wrench<T>) -> Twist<T> {
    let inv = inertia.rotational_inv.map(lift::<T>);
    Twist::new(w.force / lift::<T>(inertia.mass), inv * w.torque)
}

/// Same as [`solve_inertia`] with the rotational block rotated into the
/// world frame: `R I⁻¹ Rᵀ τ`.
pub fn solve_inertia_world<T: Real>(
    inertia: &InertiaParams,
    rotation: &UnitQuaternion<T>,
    w: &Wrench<T>,
) -> Twist<T> {
    let inv = inertia.rotational_inv.map(lift::<T>);
    let body_torque = rotation.inverse_transform_vector(&w.torque);
    Twist::new(
        w.force / lift::<T>(inertia.mass),
        rotation * (inv * body_torque),
    )
}

/// Applies a CoM-referenced increment to the object pose: the CoM is
/// translated and the orientation rotated about the CoM.
pub fn integrate_about_com<T: Real>(inertia: &InertiaParams, q: &Pose<T>, delta: &Twist<T>) -> Pose<T> {
    let com_local = inertia.com.map(lift::<T>);
    let com_world = q.transform_point(&com_local) + delta.linear;
    let rotation = renormalize(exp_rotation(&delta.angular).quaternion() * q.rotation.quaternion());
    Pose::new(com_world - rotation * com_local, rotation)
}

/// Human-writable form used in configs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InertiaSpec {
    mass: f64,
    rotational: [[f64; 3]; 3],
    gravity: [f64; 3],
    #[serde(default)]
    com: [f64; 3],
}

impl TryFrom<InertiaSpec> for InertiaParams {
    type Error = ConfigError;
    fn try_from(s: InertiaSpec) -> Result<Self, ConfigError> {
        let r = s.rotational;
        InertiaParams::new(
            s.mass,
            Matrix3::new(
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ),
            Vector3::from(s.gravity),
            Vector3::from(s.com),
        )
    }
}

impl From<InertiaParams> for InertiaSpec {
    fn from(p: InertiaParams) -> Self {
        let r = p.rotational;
        InertiaSpec {
            mass: p.mass,
            rotational: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            gravity: p.gravity.into(),
            com: p.com.into(),
        }
    }
}
