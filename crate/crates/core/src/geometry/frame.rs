use nalgebra::{Matrix3, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::sdf::{sdf_gradient, SdfShape};
use crate::geometry::surface::SurfaceSample;
use crate::real::{lift, Real};
use crate::se3::{Pose, Wrench};

/// Where the contact normal comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalSource {
    /// Outward object surface normal, rotated into the world.
    #[default]
    ObjectSurface,
    /// Negated hydro-body SDF gradient at the contact point.
    HydroGradient,
}

/// Contact frame of one surface sample. `normal` is the first column of
/// [`ContactFrame::rotation`] and points out of the object; the pressure
/// exerted on the object acts along `-normal`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactFrame<T: Real = f64> {
    pub origin: Vector3<T>,
    pub normal: Vector3<T>,
}

impl<T: Real> ContactFrame<T> {
    /// Orthonormal `[n̂, t̂₁, t̂₂]`. The first tangent comes from the world axis
    /// least aligned with `n̂` (lowest index on ties), Gram–Schmidt
    /// orthogonalized; `t̂₂ = n̂ × t̂₁`.
    pub fn rotation(&self) -> Matrix3<T> {
        let n = self.normal;
        let axis = (0..3)
            .min_by(|&a, &b| n[a].re().abs().total_cmp(&n[b].re().abs()))
            .unwrap_or(0);
        let mut e = Vector3::zeros();
        e[axis] = T::one();
        let t1 = (e - n * n.dot(&e)).normalize();
        let t2 = n.cross(&t1);
        Matrix3::from_columns(&[n, t1, t2])
    }

    /// Direction of the normal contact force acting on the object.
    #[inline]
    pub fn push_direction(&self) -> Vector3<T> {
        -self.normal
    }
}

/// Contact frame of `sample` with the object at `object_pose`.
pub fn contact_frame<T: Real>(sample: &SurfaceSample, object_pose: &Pose<T>) -> ContactFrame<T> {
    ContactFrame {
        origin: object_pose.transform_point(&sample.position.map(lift)),
        normal: object_pose.rotation * sample.normal.map(lift::<T>),
    }
}

/// Contact frame whose normal is taken from the hydro body instead of the
/// object: `n̂ = -∇φ` at the contact point.
pub fn contact_frame_from_sdf<T: Real>(
    sample: &SurfaceSample,
    object_pose: &Pose<T>,
    shape: &SdfShape,
    hydro_pose: &Pose<T>,
) -> ContactFrame<T> {
    let origin = object_pose.transform_point(&sample.position.map(lift));
    let g = sdf_gradient(shape, hydro_pose, &origin);
    ContactFrame {
        origin,
        normal: -g.direction,
    }
}

/// Maps a point force at the contact origin to a wrench about the object CoM.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactJacobian<T: Real = f64> {
    pub lever: Vector3<T>,
}

impl<T: Real> ContactJacobian<T> {
    /// `Jᵀ f = [f; lever × f]`.
    #[inline]
    pub fn transpose_apply(&self, f: &Vector3<T>) -> Wrench<T> {
        Wrench::from_point_force(&self.lever, f)
    }

    /// Explicit 6×3 matrix of `Jᵀ`.
    pub fn transpose_matrix(&self) -> SMatrix<T, 6, 3> {
        let mut m = SMatrix::<T, 6, 3>::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
        m.fixed_view_mut::<3, 3>(3, 0).copy_from(&self.lever.cross_matrix());
        m
    }
}

pub fn contact_jacobian<T: Real>(origin: &Vector3<T>, com_world: &Vector3<T>) -> ContactJacobian<T> {
    ContactJacobian {
        lever: origin - com_world,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::exp_rotation;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn sample(normal: Vector3<f64>) -> SurfaceSample {
        SurfaceSample {
            position: Vector3::new(0.01, 0.02, 0.03),
            area: 1e-4,
            normal,
        }
    }

    #[test]
    fn frame_follows_object_rotation() {
        let f = contact_frame(&sample(Vector3::z()), &Pose::<f64>::identity());
        assert_relative_eq!(f.normal, Vector3::z());
        let flipped = Pose::new(Vector3::zeros(), exp_rotation(&Vector3::new(PI, 0.0, 0.0)));
        let f = contact_frame(&sample(Vector3::z()), &flipped);
        assert_relative_eq!(f.normal, -Vector3::z(), epsilon = 1e-12);
        assert_relative_eq!(f.origin, Vector3::new(0.01, -0.02, -0.03), epsilon = 1e-12);
    }

    #[test]
    fn frame_from_ground_gradient() {
        let ground = SdfShape::ground();
        let f = contact_frame_from_sdf(&sample(Vector3::x()), &Pose::<f64>::identity(), &ground, &Pose::<f64>::identity());
        assert_relative_eq!(f.normal, -Vector3::z());
    }

    #[test]
    fn jacobian_cases() {
        let com = Vector3::new(0.3, -0.1, 0.2);
        let at_com = contact_jacobian(&com, &com);
        assert_relative_eq!(at_com.transpose_apply(&Vector3::new(1.0, 2.0, 3.0)).torque, Vector3::zeros());
        let j = contact_jacobian(&(com + Vector3::new(0.1, 0.0, 0.0)), &com);
        let w = j.transpose_apply(&Vector3::new(0.0, 1.0, 0.0));
        assert_relative_eq!(w.torque, Vector3::new(0.0, 0.0, 0.1), epsilon = 1e-12);
        let m = j.transpose_matrix();
        let direct = m * Vector3::new(0.0, 1.0, 0.0);
        assert_relative_eq!(direct.fixed_rows::<3>(3).into_owned(), w.torque, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn rotation_is_proper(n in prop::array::uniform3(-1.0..1.0f64),
                              w in prop::array::uniform3(-3.0..3.0f64)) {
            let n = Vector3::from(n);
            prop_assume!(n.norm() > 1e-3);
            let pose = Pose::new(Vector3::zeros(), exp_rotation(&Vector3::from(w)));
            let r = contact_frame(&sample(n.normalize()), &pose).rotation();
            prop_assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-9);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn jacobian_is_linear_and_shifts_with_lever(
            f1 in prop::array::uniform3(-2.0..2.0f64),
            f2 in prop::array::uniform3(-2.0..2.0f64),
            o in prop::array::uniform3(-0.2..0.2f64),
            d in prop::array::uniform3(-0.2..0.2f64),
        ) {
            let (f1, f2, o, d) = (Vector3::from(f1), Vector3::from(f2), Vector3::from(o), Vector3::from(d));
            let j = contact_jacobian(&o, &Vector3::zeros());
            let sum = j.transpose_apply(&(f1 + f2));
            let parts = j.transpose_apply(&f1) + j.transpose_apply(&f2);
            prop_assert!((sum.torque - parts.torque).norm() < 1e-12);
            let shifted = contact_jacobian(&(o + d), &Vector3::zeros()).transpose_apply(&f1);
            prop_assert!((shifted.torque - j.transpose_apply(&f1).torque - d.cross(&f1)).norm() < 1e-12);
        }
    }
}
