//! One surface point pressed into a bubble, dragged out and back.
//!
//! NH keeps the tangential force it built up; PF only sees the current
//! slip velocity, so its force vanishes the moment the drag stops. At this
//! shallow depth NHS keeps only a fraction σ(−βφ) of its force each step.

use hydrotact::contact::{ContactModel, ContactSettings, ContactState, MaterialParams, PointMotion};
use hydrotact::geometry::ContactFrame;
use nalgebra::Vector3;

fn main() {
    let mat = MaterialParams {
        normal_modulus: 2.5e5,
        tangential_modulus: 1.5e5,
        friction: 0.6,
        sharpness: 3e3,
    };
    let area = 1e-4;
    let depth = 1e-3;
    let settings = ContactSettings::default();
    let frame = ContactFrame {
        origin: Vector3::zeros(),
        normal: Vector3::z(),
    };
    let push = frame.push_direction();
    let limit = mat.friction * mat.normal_modulus * depth / mat.tangential_modulus;
    println!("stick limit {:.3} mm", limit * 1e3);

    let mut path = vec![0.0];
    for k in 1..=20 {
        path.push(k as f64 * 0.2 * limit);
    }
    for k in (0..20).rev() {
        path.push(k as f64 * 0.2 * limit);
    }
    path.push(0.0);

    println!("{:>8} {:>10} {:>10} {:>10}", "x [mm]", "nh f_t", "nhs f_t", "pf f_t");
    let models = [ContactModel::Nh, ContactModel::Nhs, ContactModel::Pf];
    let mut states: Vec<ContactState> = models.iter().map(|_| ContactState::new(0.0, Vector3::zeros())).collect();
    let mut prev = Vector3::zeros();
    let mut prev_phi = 0.0;
    for (k, x) in path.iter().enumerate() {
        let local = Vector3::new(*x, 0.0, 0.0) - push * depth;
        let motion = PointMotion {
            prev_local: prev,
            next_local: local,
            prev_phi,
            next_phi: -depth,
            displacement: prev - local,
        };
        let mut row = format!("{:>8.3}", x * 1e3);
        for (m, s) in models.iter().zip(states.iter_mut()) {
            *s = m.update(s, &frame, &motion, &mat, area, &settings, 0.1).unwrap();
            let f_t = s.force.x;
            row += &format!(" {f_t:>10.5}");
        }
        if k > 0 {
            println!("{row}");
        }
        prev = local;
        prev_phi = -depth;
    }
    println!("cone limit mu f_n = {:.5} N", mat.friction * mat.normal_modulus * area * depth);
}
