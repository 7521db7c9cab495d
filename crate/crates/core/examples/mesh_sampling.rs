//! Surface samples of an OBJ mesh compared with the equivalent box.

use hydrotact::geometry::{sample_surface, ObjectShape};
use nalgebra::Vector3;

const CUBE: &str = "\
v -0.02 -0.02 -0.02
v 0.02 -0.02 -0.02
v 0.02 0.02 -0.02
v -0.02 0.02 -0.02
v -0.02 -0.02 0.02
v 0.02 -0.02 0.02
v 0.02 0.02 0.02
v -0.02 0.02 0.02
f 1 3 2
f 1 4 3
f 5 6 7
f 5 7 8
f 1 2 6
f 1 6 5
f 2 3 7
f 2 7 6
f 3 4 8
f 3 8 7
f 4 1 5
f 4 5 8
";

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cube.obj");
    std::fs::write(&path, CUBE).unwrap();
    let mesh = ObjectShape::Mesh {
        path: path.to_string_lossy().into_owned(),
    };
    let lattice = ObjectShape::Box {
        half_extents: [0.02; 3],
    };
    for (name, shape) in [("mesh", &mesh), ("box", &lattice)] {
        let s = sample_surface(shape, 300, 1).unwrap();
        let area: f64 = s.iter().map(|p| p.area).sum();
        let centroid: Vector3<f64> = s.iter().map(|p| p.position * p.area).sum::<Vector3<f64>>() / area;
        let flux: Vector3<f64> = s.iter().map(|p| p.normal * p.area).sum();
        println!(
            "{name:<5} {} samples, area {:.6} m^2 (exact 0.0096), centroid {:.1e}, |sum n dA| {:.1e}",
            s.len(),
            area,
            centroid.norm(),
            flux.norm()
        );
    }
}
