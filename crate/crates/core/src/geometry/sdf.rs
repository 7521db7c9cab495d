use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::real::{lift, Real};
use crate::se3::Pose;

const SINGULAR_EPS: f64 = 1e-12;

/// Nominal (contact-free) shape of a hydroelastic body, in its own frame.
///
/// Capsules are aligned with the local z axis. The ellipsoid uses the usual
/// `k0 (k0 - 1) / k1` approximation: its zero level set is exact, but it is
/// not a true distance away from the surface.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SdfShape {
    Sphere { radius: f64 },
    HalfSpace { normal: [f64; 3], offset: f64 },
    Ellipsoid { semi_axes: [f64; 3] },
    Capsule { radius: f64, half_length: f64 },
    RoundedBox { half_extents: [f64; 3], radius: f64 },
}

/// World-frame SDF gradient. `singular` marks points where the gradient is
/// undefined and the fallback `+z` axis was returned.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SdfGradient<T: Real = f64> {
    pub direction: Vector3<T>,
    pub singular: bool,
}

impl SdfShape {
    pub fn ground() -> Self {
        SdfShape::HalfSpace {
            normal: [0.0, 0.0, 1.0],
            offset: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |field: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::invalid(field, "must be positive"))
            }
        };
        match self {
            SdfShape::Sphere { radius } => positive("sphere.radius", *radius),
            SdfShape::HalfSpace { normal, offset } => {
                let n = Vector3::from(*normal).norm();
                if !(n > 0.0 && n.is_finite() && offset.is_finite()) {
                    return Err(ConfigError::invalid("half_space.normal", "must be nonzero"));
                }
                Ok(())
            }
            SdfShape::Ellipsoid { semi_axes } => semi_axes
                .iter()
                .try_for_each(|a| positive("ellipsoid.semi_axes", *a)),
            SdfShape::Capsule {
                radius,
                half_length,
            } => {
                positive("capsule.radius", *radius)?;
                if *half_length < 0.0 {
                    return Err(ConfigError::invalid("capsule.half_length", "must be >= 0"));
                }
                Ok(())
            }
            SdfShape::RoundedBox {
                half_extents,
                radius,
            } => {
                half_extents
                    .iter()
                    .try_for_each(|a| positive("rounded_box.half_extents", *a))?;
                if *radius < 0.0 || half_extents.iter().any(|h| h < radius) {
                    return Err(ConfigError::invalid(
                        "rounded_box.radius",
                        "must be >= 0 and no larger than any half extent",
                    ));
                }
                Ok(())
            }
        }
    }

    /// Signed distance of a point in the body frame; negative inside.
    pub fn eval_local<T: Real>(&self, p: &Vector3<T>) -> T {
        match self {
            SdfShape::Sphere { radius } => p.norm() - *radius,
            SdfShape::HalfSpace { normal, offset } => {
                let n = Vector3::from(*normal).normalize().map(lift::<T>);
                n.dot(p) - *offset
            }
            SdfShape::Ellipsoid { semi_axes } => {
                let r = Vector3::from(*semi_axes);
                let k0 = p.component_div(&r.map(lift::<T>)).norm();
                let k1 = p.component_div(&r.map(|a| lift::<T>(a * a))).norm();
                if k1.re() < SINGULAR_EPS {
                    return lift::<T>(-r.min());
                }
                k0 * (k0 - 1.0) / k1
            }
            SdfShape::Capsule {
                radius,
                half_length,
            } => capsule_offset(p, *half_length).norm() - *radius,
            SdfShape::RoundedBox {
                half_extents,
                radius,
            } => {
                let q = rounded_box_q(p, half_extents, *radius);
                let outside = q.map(|x| if x.re() > 0.0 { x } else { T::zero() });
                let inner = {
                    let m = q.x.max(q.y).max(q.z);
                    if m.re() < 0.0 {
                        m
                    } else {
                        T::zero()
                    }
                };
                outside.norm() + inner - *radius
            }
        }
    }

    /// Body-frame gradient of [`SdfShape::eval_local`], normalized.
    pub fn gradient_local<T: Real>(&self, p: &Vector3<T>) -> SdfGradient<T> {
        let unit = |v: Vector3<T>| {
            let n = v.norm();
            if n.re() < SINGULAR_EPS {
                fallback()
            } else {
                SdfGradient {
                    direction: v / n,
                    singular: false,
                }
            }
        };
        match self {
            SdfShape::Sphere { .. } => unit(*p),
            SdfShape::HalfSpace { normal, .. } => SdfGradient {
                direction: Vector3::from(*normal).normalize().map(lift::<T>),
                singular: false,
            },
            SdfShape::Ellipsoid { semi_axes } => {
                let r = Vector3::from(*semi_axes);
                let r2 = r.map(|a| lift::<T>(a * a));
                let r4 = r.map(|a| lift::<T>(a * a * a * a));
                let k0 = p.component_div(&r.map(lift::<T>)).norm();
                let k1 = p.component_div(&r2).norm();
                if k0.re() < SINGULAR_EPS || k1.re() < SINGULAR_EPS {
                    return fallback();
                }
                let dk0 = p.component_div(&r2) / k0;
                let dk1 = p.component_div(&r4) / k1;
                let g = (dk0 * ((k0 * 2.0 - 1.0) * k1) - dk1 * (k0 * (k0 - 1.0))) / (k1 * k1);
                unit(g)
            }
            SdfShape::Capsule { half_length, .. } => unit(capsule_offset(p, *half_length)),
            SdfShape::RoundedBox {
                half_extents,
                radius,
            } => {
                let q = rounded_box_q(p, half_extents, *radius);
                let sign = p.map(|x| if x.re() < 0.0 { -T::one() } else { T::one() });
                if q.iter().any(|x| x.re() > 0.0) {
                    let outside = q.map(|x| if x.re() > 0.0 { x } else { T::zero() });
                    unit(outside.component_mul(&sign))
                } else {
                    let axis = (0..3)
                        .max_by(|&a, &b| q[a].re().total_cmp(&q[b].re()))
                        .unwrap_or(2);
                    let mut d = Vector3::zeros();
                    d[axis] = sign[axis];
                    SdfGradient {
                        direction: d,
                        singular: false,
                    }
                }
            }
        }
    }

    /// Whether the field is a true (1-Lipschitz) distance.
    pub fn is_lipschitz(&self) -> bool {
        !matches!(self, SdfShape::Ellipsoid { .. })
    }
}

fn fallback<T: Real>() -> SdfGradient<T> {
    SdfGradient {
        direction: Vector3::new(T::zero(), T::zero(), T::one()),
        singular: true,
    }
}

#[inline]
fn capsule_offset<T: Real>(p: &Vector3<T>, half_length: f64) -> Vector3<T> {
    let z = p.z.max(lift(-half_length)).min(lift(half_length));
    Vector3::new(p.x, p.y, p.z - z)
}

#[inline]
fn rounded_box_q<T: Real>(p: &Vector3<T>, half_extents: &[f64; 3], radius: f64) -> Vector3<T> {
    Vector3::new(
        p.x.abs() - (half_extents[0] - radius),
        p.y.abs() - (half_extents[1] - radius),
        p.z.abs() - (half_extents[2] - radius),
    )
}

/// Evaluates the nominal SDF of a body at `hydro_pose` on a world point.
pub fn sdf_eval<T: Real>(shape: &SdfShape, hydro_pose: &Pose<T>, p_world: &Vector3<T>) -> T {
    shape.eval_local(&hydro_pose.inverse_transform_point(p_world))
}

/// World-frame unit gradient of the SDF (fallback `+z` at singular points).
pub fn sdf_gradient<T: Real>(
    shape: &SdfShape,
    hydro_pose: &Pose<T>,
    p_world: &Vector3<T>,
) -> SdfGradient<T> {
    let local = shape.gradient_local(&hydro_pose.inverse_transform_point(p_world));
    if local.singular {
        return local;
    }
    SdfGradient {
        direction: hydro_pose.rotation * local.direction,
        singular: false,
    }
}
