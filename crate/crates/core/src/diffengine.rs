//! Gradients of rollout costs with respect to the control sequence.
//!
//! Derivatives are taken with forward-mode dual numbers pushed through the
//! same generic `step` used for plain simulation, so they are the exact
//! derivatives of the discrete map that is actually executed (up to the
//! declared kink conventions: `relu'(0) = 0`, and at cone saturation
//! `s = 1` the scaled branch). Coordinates are processed in chunks of at most
//! [`MAX_LANES`] dual lanes per sweep.

use nalgebra::{Const, U1};
use num_dual::DualSVec64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{step, Scene, SystemState};
use crate::error::{DiffError, StepFault};
use crate::real::Real;
use crate::se3::Twist;

pub const MAX_LANES: usize = 32;

/// Scalar objective `J = Σ_{k<K} ℓ_k(x_k, u_k) + Φ(x_K)`.
pub trait RolloutCost: Sync {
    fn stage<T: Real>(&self, k: usize, state: &SystemState<T>, controls: &[Twist<T>]) -> T;
    fn terminal<T: Real>(&self, state: &SystemState<T>) -> T;
}

/// Flat control vector layout: coordinate `c` of body `j` at step `k` is at
/// `(k·M + j)·6 + c`, with `c` ordered `[vx, vy, vz, wx, wy, wz]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlLayout {
    pub steps: usize,
    pub bodies: usize,
}

impl ControlLayout {
    pub fn new(steps: usize, bodies: usize) -> Self {
        Self { steps, bodies }
    }

    pub fn per_step(&self) -> usize {
        6 * self.bodies
    }

    pub fn len(&self) -> usize {
        self.steps * self.per_step()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, k: usize, body: usize, c: usize) -> usize {
        (k * self.bodies + body) * 6 + c
    }

    /// Twists of step `k`.
    pub fn step_twists<T: Real>(&self, flat: &[T], k: usize) -> Vec<Twist<T>> {
        (0..self.bodies)
            .map(|j| {
                let o = self.index(k, j, 0);
                Twist::from_coords([flat[o], flat[o + 1], flat[o + 2], flat[o + 3], flat[o + 4], flat[o + 5]])
            })
            .collect()
    }

    pub fn unflatten<T: Real>(&self, flat: &[T]) -> Vec<Vec<Twist<T>>> {
        (0..self.steps).map(|k| self.step_twists(flat, k)).collect()
    }

    pub fn check(&self, flat_len: usize) -> Result<(), DiffError> {
        if flat_len != self.len() {
            return Err(DiffError::Shape {
                got: flat_len,
                per_step: self.per_step(),
            });
        }
        Ok(())
    }
}

/// `∂J/∂u` in the flat layout. Coordinates that were not differentiated
/// are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct CostGradient {
    pub layout: ControlLayout,
    pub values: Vec<f64>,
}

impl CostGradient {
    pub fn get(&self, k: usize, body: usize, c: usize) -> f64 {
        self.values[self.layout.index(k, body, c)]
    }

    /// `[vx, vy, vz, wx, wy, wz]` for one body at one step.
    pub fn twist(&self, k: usize, body: usize) -> [f64; 6] {
        std::array::from_fn(|c| self.get(k, body, c))
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Evaluates `J` along the rollout from `x0` in any scalar type.
pub fn evaluate<T: Real, C: RolloutCost>(
    scene: &Scene,
    x0: &SystemState<T>,
    controls: &[T],
    layout: &ControlLayout,
    cost: &C,
) -> Result<T, StepFault> {
    let mut x = x0.clone();
    let mut total = T::zero();
    for k in 0..layout.steps {
        let u = layout.step_twists(controls, k);
        total += cost.stage(k, &x, &u);
        x = step(scene, &x, &u).map_err(|kind| StepFault { step: k, kind })?;
    }
    Ok(total + cost.terminal(&x))
}

/// Undifferentiated cost.
pub fn rollout_cost<C: RolloutCost>(
    scene: &Scene,
    x0: &SystemState,
    controls: &[f64],
    layout: &ControlLayout,
    cost: &C,
) -> Result<f64, DiffError> {
    layout.check(controls.len())?;
    Ok(evaluate(scene, x0, controls, layout, cost)?)
}

/// `(J, ∂J/∂u)` for the smooth models. `coords` selects the control
/// coordinates to differentiate; `None` means all of them.
pub fn grad_rollout<C: RolloutCost>(
    scene: &Scene,
    x0: &SystemState,
    controls: &[f64],
    layout: &ControlLayout,
    cost: &C,
    coords: Option<&[usize]>,
) -> Result<(f64, CostGradient), DiffError> {
    if !scene.model.is_differentiable() {
        return Err(DiffError::UnsupportedModel(scene.model.as_str()));
    }
    forward_gradient(scene, x0, controls, layout, cost, coords)
}

/// Same sweep as [`grad_rollout`] without the model check. On the hard model
/// the result is the almost-everywhere derivative, which ignores the force
/// jumps at contact transitions.
pub fn forward_gradient<C: RolloutCost>(
    scene: &Scene,
    x0: &SystemState,
    controls: &[f64],
    layout: &ControlLayout,
    cost: &C,
    coords: Option<&[usize]>,
) -> Result<(f64, CostGradient), DiffError> {
    layout.check(controls.len())?;
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..controls.len()).collect();
            &all
        }
    };
    let mut values = vec![0.0; controls.len()];
    if coords.is_empty() {
        let j = evaluate(scene, x0, controls, layout, cost)?;
        return Ok((j, CostGradient { layout: *layout, values }));
    }
    let mut value = 0.0;
    for chunk in coords.chunks(MAX_LANES) {
        let (j, g) = match chunk.len() {
            1 => sweep::<1, C>(scene, x0, controls, layout, cost, chunk)?,
            2 => sweep::<2, C>(scene, x0, controls, layout, cost, chunk)?,
            3..=4 => sweep::<4, C>(scene, x0, controls, layout, cost, chunk)?,
            5..=8 => sweep::<8, C>(scene, x0, controls, layout, cost, chunk)?,
            9..=16 => sweep::<16, C>(scene, x0, controls, layout, cost, chunk)?,
            _ => sweep::<32, C>(scene, x0, controls, layout, cost, chunk)?,
        };
        value = j;
        for (&c, gc) in chunk.iter().zip(g) {
            values[c] = gc;
        }
    }
    Ok((value, CostGradient { layout: *layout, values }))
}

fn sweep<const N: usize, C: RolloutCost>(
    scene: &Scene,
    x0: &SystemState,
    controls: &[f64],
    layout: &ControlLayout,
    cost: &C,
    chunk: &[usize],
) -> Result<(f64, Vec<f64>), StepFault> {
    let mut u: Vec<DualSVec64<N>> = controls.iter().map(|&v| DualSVec64::from_re(v)).collect();
    for (lane, &c) in chunk.iter().enumerate() {
        u[c] = u[c].derivative(lane);
    }
    let j = evaluate(scene, &x0.lift::<DualSVec64<N>>(), &u, layout, cost)?;
    let eps = j.eps.unwrap_generic(Const::<N>, U1);
    Ok((j.re, eps.iter().take(chunk.len()).copied().collect()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdEntry {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub abs_error: f64,
    /// `|g − g_fd| / |g|`, only for coordinates with `|g|` above the floor.
    pub rel_error: Option<f64>,
    /// The forward and backward one-sided differences disagree grossly: the
    /// stencil straddles a derivative kink and the central difference is
    /// not an oracle for this coordinate, even after refinement.
    pub kink: bool,
    /// Stencil half-width actually used.
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdReport {
    pub delta: f64,
    pub grad_floor: f64,
    pub cost: f64,
    pub entries: Vec<FdEntry>,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
}

impl FdReport {
    /// Relative error within `rel_tol` on every kink-free coordinate, and
    /// at most a tenth of the compared coordinates left unresolved as kinks.
    pub fn passes(&self, rel_tol: f64) -> bool {
        let compared = self.entries.iter().filter(|e| e.rel_error.is_some()).count();
        self.max_rel_error <= rel_tol && self.kinks() * 10 <= compared
    }

    /// Entries whose relative error exceeds `rel_tol`.
    pub fn offenders(&self, rel_tol: f64) -> Vec<&FdEntry> {
        self.entries
            .iter()
            .filter(|e| !e.kink && e.rel_error.is_some_and(|r| r > rel_tol))
            .collect()
    }

    pub fn kinks(&self) -> usize {
        self.entries.iter().filter(|e| e.kink).count()
    }
}

/// Relative disagreement of the one-sided differences above which a stencil
/// is shrunk. On a smooth coordinate the disagreement is `|f''|δ` while the
/// central error is `O(δ²)`; a kink inside the stencil shows up as a
/// disagreement of twice the central error it causes.
pub const KINK_ASYMMETRY: f64 = 1e-4;

/// A kink-straddling stencil is retried with `δ/10` up to this many times.
pub const KINK_REFINEMENTS: usize = 2;

/// Gradients with `|g|` at or below this are compared in absolute terms only.
pub const GRAD_FLOOR: f64 = 1e-8;

/// Central differences with step `delta` on every selected coordinate,
/// compared with [`grad_rollout`]. Where the two one-sided differences
/// disagree by more than [`KINK_ASYMMETRY`] the stencil is shrunk, since a
/// stencil across a relu or cone kink measures an average of two slopes.
pub fn fd_check<C: RolloutCost>(
    scene: &Scene,
    x0: &SystemState,
    controls: &[f64],
    layout: &ControlLayout,
    cost: &C,
    delta: f64,
    coords: Option<&[usize]>,
) -> Result<FdReport, DiffError> {
    let (j, g) = grad_rollout(scene, x0, controls, layout, cost, coords)?;
    fd_compare(scene, x0, controls, layout, cost, delta, coords, j, &g)
}

/// Like [`fd_check`] but accepts the hard model, differentiating it with
/// [`forward_gradient`].
pub fn fd_check_any<C: RolloutCost>(
    scene: &Scene,
    x0: &SystemState,
    controls: &[f64],
    layout: &ControlLayout,
    cost: &C,
    delta: f64,
    coords: Option<&[usize]>,
) -> Result<FdReport, DiffError> {
    let (j, g) = forward_gradient(scene, x0, controls, layout, cost, coords)?;
    fd_compare(scene, x0, controls, layout, cost, delta, coords, j, &g)
}

#[allow(clippy::too_many_arguments)]
fn fd_compare<C: RolloutCost>(
    scene: &Scene,
    x0: &SystemState,
    controls: &[f64],
    layout: &ControlLayout,
    cost: &C,
    delta: f64,
    coords: Option<&[usize]>,
    j: f64,
    g: &CostGradient,
) -> Result<FdReport, DiffError> {
    let indices: Vec<usize> = match coords {
        Some(c) => c.to_vec(),
        None => (0..controls.len()).collect(),
    };
    let mut entries = Vec::with_capacity(indices.len());
    let center = evaluate(scene, x0, controls, layout, cost)?;
    let mut u = controls.to_vec();
    for &c in &indices {
        let analytic = g.values[c];
        let mut d = delta;
        let mut attempt = 0;
        let entry = loop {
            let base = u[c];
            u[c] = base + d;
            let plus = evaluate(scene, x0, &u, layout, cost)?;
            u[c] = base - d;
            let minus = evaluate(scene, x0, &u, layout, cost)?;
            u[c] = base;
            let numeric = (plus - minus) / (2.0 * d);
            let abs_error = (analytic - numeric).abs();
            let rel_error = (analytic.abs() > GRAD_FLOOR).then(|| abs_error / analytic.abs());
            let forward = (plus - center) / d;
            let backward = (center - minus) / d;
            let kink = rel_error.is_some() && (forward - backward).abs() > KINK_ASYMMETRY * numeric.abs();
            let entry = FdEntry {
                index: c,
                analytic,
                numeric,
                abs_error,
                rel_error,
                kink,
                delta: d,
            };
            if !kink || attempt == KINK_REFINEMENTS {
                break entry;
            }
            attempt += 1;
            d /= 10.0;
        };
        entries.push(entry);
    }
    let max_abs_error = entries.iter().map(|e| e.abs_error).fold(0.0, f64::max);
    let max_rel_error = entries
        .iter()
        .filter(|e| !e.kink)
        .filter_map(|e| e.rel_error)
        .fold(0.0, f64::max);
    Ok(FdReport {
        delta,
        grad_floor: GRAD_FLOOR,
        cost: j,
        entries,
        max_abs_error,
        max_rel_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contact::{ContactModel, ContactSettings, MaterialParams};
    use crate::dynamics::{HydroBody, QuasiDynParams};
    use crate::geometry::{sample_surface, ObjectShape, SdfShape};
    use crate::real::lift;
    use crate::se3::{InertiaParams, Pose};
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    fn scene(model: ContactModel) -> (Scene, SystemState) {
        let half = [0.04, 0.04, 0.02];
        let samples = sample_surface(&ObjectShape::Box { half_extents: half }, 150, 0).unwrap();
        let inertia = InertiaParams::solid_box(0.2, half, Vector3::new(0.0, 0.0, -9.81)).unwrap();
        let bubble = MaterialParams {
            normal_modulus: 2e5,
            tangential_modulus: 1e5,
            friction: 0.8,
            sharpness: 3e3,
        };
        let ground = MaterialParams {
            normal_modulus: 1e6,
            tangential_modulus: 5e5,
            friction: 0.3,
            sharpness: 1e4,
        };
        let scene = Scene {
            samples,
            inertia,
            bodies: vec![
                HydroBody {
                    name: "ground".into(),
                    shape: SdfShape::ground(),
                    material: ground,
                    normal_source: None,
                },
                HydroBody {
                    name: "bubble".into(),
                    shape: SdfShape::Ellipsoid {
                        semi_axes: [0.05, 0.05, 0.02],
                    },
                    material: bubble,
                    normal_source: None,
                },
            ],
            params: QuasiDynParams::default(),
            model,
            settings: ContactSettings::default(),
        };
        let x0 = SystemState::unloaded(
            &scene,
            Pose::from_translation(Vector3::new(0.0, 0.0, 0.0198)),
            vec![Pose::identity(), Pose::from_translation(Vector3::new(0.0, 0.0, 0.0595))],
        );
        (scene, x0)
    }

    /// Squared distance of the bubble from a target plus object x position.
    struct Reach {
        target: Vector3<f64>,
        object_weight: f64,
    }

    impl RolloutCost for Reach {
        fn stage<T: Real>(&self, _: usize, _: &SystemState<T>, _: &[Twist<T>]) -> T {
            T::zero()
        }
        fn terminal<T: Real>(&self, x: &SystemState<T>) -> T {
            let d = x.hydro[1].translation - self.target.map(lift::<T>);
            d.norm_squared() + x.object.translation.x * self.object_weight
        }
    }

    struct Constant;

    impl RolloutCost for Constant {
        fn stage<T: Real>(&self, _: usize, _: &SystemState<T>, _: &[Twist<T>]) -> T {
            lift(1.5)
        }
        fn terminal<T: Real>(&self, _: &SystemState<T>) -> T {
            lift(2.0)
        }
    }

    /// Cost of the state after step `k_obs` only.
    struct Observe(usize);

    impl RolloutCost for Observe {
        fn stage<T: Real>(&self, k: usize, x: &SystemState<T>, _: &[Twist<T>]) -> T {
            if k == self.0 {
                x.object.translation.x * 1e3 + x.hydro[1].translation.norm_squared()
            } else {
                T::zero()
            }
        }
        fn terminal<T: Real>(&self, _: &SystemState<T>) -> T {
            T::zero()
        }
    }

    fn pushing_controls(layout: &ControlLayout) -> Vec<f64> {
        let mut u = vec![0.0; layout.len()];
        for k in 0..layout.steps {
            u[layout.index(k, 1, 0)] = 8e-4;
            u[layout.index(k, 1, 2)] = if k < 3 { -4e-4 } else { 0.0 };
        }
        u
    }

    fn bubble_coords(layout: &ControlLayout) -> Vec<usize> {
        (0..layout.steps)
            .flat_map(|k| [0, 1, 2, 5].map(|c| layout.index(k, 1, c)))
            .collect()
    }

    #[test]
    fn state_independent_cost_has_zero_gradient() {
        let (scene, x0) = scene(ContactModel::Nhs);
        let layout = ControlLayout::new(4, 2);
        let u = pushing_controls(&layout);
        let (j, g) = grad_rollout(&scene, &x0, &u, &layout, &Constant, None).unwrap();
        assert_eq!(j, 4.0 * 1.5 + 2.0);
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn no_contact_quadratic_gradient_is_analytic() {
        let (scene, mut x0) = scene(ContactModel::Nhs);
        x0 = SystemState::unloaded(&scene, x0.object, vec![Pose::identity(), Pose::from_translation(Vector3::new(0.0, 0.0, 0.3))]);
        let mut scene = scene;
        scene.inertia = scene.inertia.clone().with_gravity(Vector3::zeros());
        let layout = ControlLayout::new(5, 2);
        let u: Vec<f64> = (0..layout.len()).map(|i| 1e-3 * ((i % 7) as f64 - 3.0)).collect();
        let cost = Reach {
            target: Vector3::new(0.05, -0.02, 0.25),
            object_weight: 0.0,
        };
        let (j, g) = grad_rollout(&scene, &x0, &u, &layout, &cost, None).unwrap();
        let mut end = x0.hydro[1].translation;
        for k in 0..layout.steps {
            for c in 0..3 {
                end[c] += u[layout.index(k, 1, c)];
            }
        }
        let diff = end - cost.target;
        assert_relative_eq!(j, diff.norm_squared(), max_relative = 1e-12);
        for k in 0..layout.steps {
            for c in 0..6 {
                let expected = if c < 3 { 2.0 * diff[c] } else { 0.0 };
                assert!((g.get(k, 1, c) - expected).abs() < 1e-9);
                assert_eq!(g.get(k, 0, c), 0.0);
            }
        }
    }

    #[test]
    fn rejects_hard_model_and_bad_shape() {
        let (scene, x0) = scene(ContactModel::Nh);
        let layout = ControlLayout::new(2, 2);
        let u = vec![0.0; layout.len()];
        assert_eq!(
            grad_rollout(&scene, &x0, &u, &layout, &Constant, None).unwrap_err(),
            DiffError::UnsupportedModel("nh")
        );
        let (scene, x0) = self::scene(ContactModel::Nhs);
        assert!(matches!(
            grad_rollout(&scene, &x0, &u[1..], &layout, &Constant, None),
            Err(DiffError::Shape { .. })
        ));
    }

    #[test]
    fn value_matches_plain_rollout() {
        let (scene, x0) = scene(ContactModel::Nhs);
        let layout = ControlLayout::new(8, 2);
        let u = pushing_controls(&layout);
        let cost = Reach {
            target: Vector3::new(0.01, 0.0, 0.05),
            object_weight: 10.0,
        };
        let plain = rollout_cost(&scene, &x0, &u, &layout, &cost).unwrap();
        let coords = bubble_coords(&layout);
        let (j, g) = grad_rollout(&scene, &x0, &u, &layout, &cost, Some(&coords)).unwrap();
        assert_relative_eq!(j, plain, max_relative = 1e-12);
        assert!(g.norm() > 0.0);
    }

    #[test]
    fn gradient_is_linear_in_cost() {
        struct Mix<'a>(f64, &'a Reach, f64, &'a Observe);
        impl RolloutCost for Mix<'_> {
            fn stage<T: Real>(&self, k: usize, x: &SystemState<T>, u: &[Twist<T>]) -> T {
                self.1.stage(k, x, u) * self.0 + self.3.stage(k, x, u) * self.2
            }
            fn terminal<T: Real>(&self, x: &SystemState<T>) -> T {
                self.1.terminal(x) * self.0 + self.3.terminal(x) * self.2
            }
        }
        let (scene, x0) = scene(ContactModel::Nhs);
        let layout = ControlLayout::new(6, 2);
        let u = pushing_controls(&layout);
        let coords = bubble_coords(&layout);
        let a = Reach {
            target: Vector3::new(0.01, 0.0, 0.05),
            object_weight: 3.0,
        };
        let b = Observe(4);
        let (_, ga) = grad_rollout(&scene, &x0, &u, &layout, &a, Some(&coords)).unwrap();
        let (_, gb) = grad_rollout(&scene, &x0, &u, &layout, &b, Some(&coords)).unwrap();
        let (_, gm) = grad_rollout(&scene, &x0, &u, &layout, &Mix(2.0, &a, -0.5, &b), Some(&coords)).unwrap();
        for i in 0..u.len() {
            let expected = 2.0 * ga.values[i] - 0.5 * gb.values[i];
            assert!((gm.values[i] - expected).abs() <= 1e-10 * (1.0 + expected.abs()));
        }
    }

    #[test]
    fn gradient_is_causal() {
        let (scene, x0) = scene(ContactModel::Nhs);
        let layout = ControlLayout::new(8, 2);
        let u = pushing_controls(&layout);
        // the stage term at k sees x_k, which depends on u_0..u_{k-1}
        let k_obs = 5;
        let (_, g) = grad_rollout(&scene, &x0, &u, &layout, &Observe(k_obs), None).unwrap();
        for k in k_obs..layout.steps {
            for j in 0..2 {
                assert_eq!(g.twist(k, j), [0.0; 6]);
            }
        }
        assert!((0..k_obs).any(|k| g.twist(k, 1) != [0.0; 6]));
    }

    #[test]
    fn contact_gradient_matches_finite_differences() {
        let (scene, x0) = scene(ContactModel::Nhs);
        let layout = ControlLayout::new(10, 2);
        let u = pushing_controls(&layout);
        let cost = Reach {
            target: Vector3::new(0.01, 0.0, 0.05),
            object_weight: 10.0,
        };
        let coords = bubble_coords(&layout);
        let report = fd_check(&scene, &x0, &u, &layout, &cost, 1e-6, Some(&coords)).unwrap();
        assert!(report.entries.iter().any(|e| e.rel_error.is_some()));
        assert!(report.passes(1e-4), "{:?} kinks {}", report.offenders(1e-4), report.kinks());
    }

    #[test]
    fn fd_error_shrinks_with_delta() {
        let (scene, x0) = scene(ContactModel::Nhs);
        let layout = ControlLayout::new(6, 2);
        let u = pushing_controls(&layout);
        let cost = Reach {
            target: Vector3::new(0.01, 0.0, 0.05),
            object_weight: 10.0,
        };
        let c = [layout.index(2, 1, 0)];
        let coarse = fd_check(&scene, &x0, &u, &layout, &cost, 1e-4, Some(&c)).unwrap();
        let fine = fd_check(&scene, &x0, &u, &layout, &cost, 5e-5, Some(&c)).unwrap();
        assert!(fine.max_abs_error < coarse.max_abs_error);
    }
}
