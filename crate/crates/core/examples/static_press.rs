//! A box settling on a hydroelastic table, compared with the linear-spring
//! equilibrium `E·A·d = m·g`.

use hydrotact::contact::{ContactModel, ContactSettings, MaterialParams};
use hydrotact::dynamics::{rollout, HydroBody, QuasiDynParams, Scene, SystemState};
use hydrotact::geometry::{sample_surface, NormalSource, ObjectShape, SdfShape};
use hydrotact::se3::{InertiaParams, Pose, Twist};
use nalgebra::Vector3;

fn main() {
    let half = [0.04, 0.04, 0.02];
    let mass = 0.5;
    let e = 1.6e6;
    let k = e * 4.0 * half[0] * half[1];
    let scene = Scene {
        samples: sample_surface(&ObjectShape::Box { half_extents: half }, 400, 0).unwrap(),
        inertia: InertiaParams::solid_box(mass, half, Vector3::new(0.0, 0.0, -9.81)).unwrap(),
        bodies: vec![HydroBody {
            name: "table".into(),
            shape: SdfShape::ground(),
            material: MaterialParams {
                normal_modulus: e,
                tangential_modulus: 1e6,
                friction: 0.3,
                sharpness: 2e4,
            },
            normal_source: Some(NormalSource::HydroGradient),
        }],
        params: QuasiDynParams {
            step: 0.1,
            regularizer: 0.01 * k / (0.7 * mass),
            max_pose_change: 0.05,
        },
        model: ContactModel::Nh,
        settings: ContactSettings::default(),
    };
    let x0 = SystemState::unloaded(&scene, Pose::from_translation(Vector3::new(0.0, 0.0, 0.025)), vec![Pose::identity()]);
    let traj = rollout(&scene, &x0, &vec![vec![Twist::zero()]; 80]).unwrap();
    for (i, x) in traj.iter().enumerate().step_by(8) {
        println!("step {i:>3}: bottom at {:+.4} mm", (x.object.translation.z - half[2]) * 1e3);
    }
    let d = half[2] - traj.last().unwrap().object.translation.z;
    println!("depth {:.4} mm, spring estimate {:.4} mm", d * 1e3, mass * 9.81 / k * 1e3);
}
