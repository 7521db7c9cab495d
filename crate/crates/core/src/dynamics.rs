//! Quasi-dynamic stepping of one rigid object against kinematic hydro bodies.
//!
//! One step:
//! 1. hydro poses advance by their commanded twists;
//! 2. the stored contact forces are summed into a wrench about the CoM;
//! 3. the object moves by `(h²/ε)·M⁻¹(w + m·g)` about its CoM;
//! 4. every (point, body) pair is updated by the selected contact model.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::contact::{ContactModel, ContactSettings, ContactState, DisplacementMode, MaterialParams, PointMotion};
use crate::error::{ConfigError, FaultKind, StepFault};
use crate::geometry::{contact_frame, contact_frame_from_sdf, NormalSource, SdfShape, SurfaceSample};
use crate::real::{lift, Real};
use crate::se3::{apply_twist, integrate_about_com, solve_inertia_world, InertiaParams, Pose, Twist, Wrench};

/// A compliant (or, for the table, very stiff) body driven by pose commands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HydroBody {
    pub name: String,
    pub shape: SdfShape,
    pub material: MaterialParams,
    /// Overrides the scene-wide normal source for this body's contacts.
    #[serde(default)]
    pub normal_source: Option<NormalSource>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuasiDynParams {
    /// Step `h` [s].
    pub step: f64,
    /// Regularizer `ε`; only `h²/ε` enters the update.
    pub regularizer: f64,
    /// Largest accepted object pose change per step, translation [m] plus
    /// rotation [rad]. Larger changes are reported as divergence.
    pub max_pose_change: f64,
}

impl QuasiDynParams {
    pub fn gain(&self) -> f64 {
        self.step * self.step / self.regularizer
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(ConfigError::invalid("dynamics.step", "must be positive"));
        }
        if !(self.regularizer > 0.0 && self.regularizer.is_finite()) {
            return Err(ConfigError::invalid("dynamics.regularizer", "must be positive"));
        }
        if !(self.max_pose_change > 0.0) {
            return Err(ConfigError::invalid("dynamics.max_pose_change", "must be positive"));
        }
        Ok(())
    }
}

impl Default for QuasiDynParams {
    fn default() -> Self {
        Self {
            step: 0.1,
            regularizer: 500.0,
            max_pose_change: 0.05,
        }
    }
}

/// Everything that stays fixed during a rollout.
#[derive(Clone, Debug)]
pub struct Scene {
    pub samples: Vec<SurfaceSample>,
    pub inertia: InertiaParams,
    pub bodies: Vec<HydroBody>,
    pub params: QuasiDynParams,
    pub model: ContactModel,
    pub settings: ContactSettings,
}

impl Scene {
    pub fn num_points(&self) -> usize {
        self.samples.len()
    }

    pub fn num_bodies(&self) -> usize {
        self.bodies.len()
    }

    pub fn with_model(&self, model: ContactModel) -> Scene {
        Scene { model, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.params.validate()?;
        for b in &self.bodies {
            b.shape.validate()?;
            b.material.validate()?;
        }
        if self.samples.is_empty() {
            return Err(ConfigError::invalid("object.samples", "object has no surface samples"));
        }
        Ok(())
    }

    /// Contact state of an untouched pair at the given poses.
    fn fresh_contact(&self, object: &Pose<f64>, hydro: &Pose<f64>, body: usize, point: usize) -> ContactState<f64> {
        let world = object.transform_point(&self.samples[point].position);
        let local = hydro.inverse_transform_point(&world);
        ContactState::new(self.bodies[body].shape.eval_local(&local), local)
    }
}

/// `x = [q^O, q^H, F]`. Contact pair (point `i`, body `j`) lives at `j·N + i`.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemState<T: Real = f64> {
    pub object: Pose<T>,
    pub hydro: Vec<Pose<T>>,
    pub contacts: Vec<ContactState<T>>,
}

impl SystemState<f64> {
    /// State with all contact forces zero.
    pub fn unloaded(scene: &Scene, object: Pose<f64>, hydro: Vec<Pose<f64>>) -> Self {
        let n = scene.num_points();
        let contacts = (0..hydro.len() * n)
            .map(|idx| scene.fresh_contact(&object, &hydro[idx / n], idx / n, idx % n))
            .collect();
        Self {
            object,
            hydro,
            contacts,
        }
    }

    pub fn lift<T: Real>(&self) -> SystemState<T> {
        SystemState {
            object: self.object.lift(),
            hydro: self.hydro.iter().map(Pose::lift).collect(),
            contacts: self.contacts.iter().map(ContactState::lift).collect(),
        }
    }
}

impl<T: Real> SystemState<T> {
    pub fn re(&self) -> SystemState<f64> {
        SystemState {
            object: self.object.re(),
            hydro: self.hydro.iter().map(Pose::re).collect(),
            contacts: self.contacts.iter().map(ContactState::re).collect(),
        }
    }

    #[inline]
    pub fn contact(&self, num_points: usize, point: usize, body: usize) -> &ContactState<T> {
        &self.contacts[body * num_points + point]
    }
}

/// Net contact wrenches, all about the object CoM.
#[derive(Clone, Debug, PartialEq)]
pub struct WrenchSplit<T: Real = f64> {
    pub object: Wrench<T>,
    /// Reaction on each hydro body, `-(sum of its contact forces)`.
    pub hydro: Vec<Wrench<T>>,
    /// CoM in world coordinates, the common reference point.
    pub com: Vector3<T>,
}

impl<T: Real> WrenchSplit<T> {
    /// Reaction on body `j` re-expressed about `origin`.
    pub fn hydro_about(&self, j: usize, origin: &Vector3<T>) -> Wrench<T> {
        self.hydro[j].shift_reference(&(origin - self.com))
    }
}

/// Sums the stored contact forces into object and hydro-body wrenches.
pub fn aggregate_wrench<T: Real>(scene: &Scene, state: &SystemState<T>) -> WrenchSplit<T> {
    let n = scene.num_points();
    let com = state.object.transform_point(&scene.inertia.com().map(lift::<T>));
    let mut object = Wrench::zero();
    let mut hydro = Vec::with_capacity(state.hydro.len());
    for j in 0..state.hydro.len() {
        let mut body = Wrench::zero();
        for (i, c) in state.contacts[j * n..(j + 1) * n].iter().enumerate() {
            if c.force.iter().all(|x| x.re() == 0.0) {
                continue;
            }
            let origin = state.object.transform_point(&scene.samples[i].position.map(lift::<T>));
            body += Wrench::from_point_force(&(origin - com), &c.force);
        }
        object += body;
        hydro.push(-body);
    }
    WrenchSplit { object, hydro, com }
}

/// Contact forces at the new poses, from the forces and poses of `prev`.
pub fn compute_forces<T: Real>(
    scene: &Scene,
    prev: &SystemState<T>,
    object_next: &Pose<T>,
    hydro_next: &[Pose<T>],
) -> Result<Vec<ContactState<T>>, FaultKind> {
    let n = scene.num_points();
    let object_next_re = object_next.re();
    let mut out = Vec::with_capacity(prev.contacts.len());
    for (j, body) in scene.bodies.iter().enumerate() {
        let hydro_re = hydro_next[j].re();
        for (i, sample) in scene.samples.iter().enumerate() {
            let state = &prev.contacts[j * n + i];
            // Cheap real-valued pre-pass: most pairs are far from contact.
            let local_re = hydro_re.inverse_transform_point(&object_next_re.transform_point(&sample.position));
            let phi_re = body.shape.eval_local(&local_re);
            if !phi_re.is_finite() {
                return Err(FaultKind::NonFinitePose);
            }
            if scene.model.is_inactive(phi_re, &body.material, &scene.settings) {
                out.push(ContactState::new(phi_re, local_re));
                continue;
            }
            let position = sample.position.map(lift::<T>);
            let next_world = object_next.transform_point(&position);
            let next_local = hydro_next[j].inverse_transform_point(&next_world);
            let prev_world = prev.object.transform_point(&position);
            let prev_local = prev.hydro[j].inverse_transform_point(&prev_world);
            let next_phi = body.shape.eval_local(&next_local);
            let prev_phi = body.shape.eval_local(&prev_local);
            let motion = match scene.settings.displacement {
                DisplacementMode::Relative => {
                    PointMotion::relative(prev_local, next_local, prev_phi, next_phi, &hydro_next[j].rotation)
                }
                DisplacementMode::ObjectOnly => PointMotion {
                    prev_local,
                    next_local,
                    prev_phi,
                    next_phi,
                    displacement: prev_world - next_world,
                },
            };
            let frame = match body.normal_source.unwrap_or(scene.settings.normal_source) {
                NormalSource::ObjectSurface => contact_frame(sample, object_next),
                NormalSource::HydroGradient => contact_frame_from_sdf(sample, object_next, &body.shape, &hydro_next[j]),
            };
            let next = scene
                .model
                .update(state, &frame, &motion, &body.material, sample.area, &scene.settings, scene.params.step)
                .map_err(|_| FaultKind::Contact(crate::error::ContactError { point: i, body: j }))?;
            out.push(next);
        }
    }
    Ok(out)
}

/// Advances the state by one step under one twist per hydro body.
pub fn step<T: Real>(scene: &Scene, state: &SystemState<T>, controls: &[Twist<T>]) -> Result<SystemState<T>, FaultKind> {
    if controls.len() != state.hydro.len() {
        return Err(FaultKind::ControlCount {
            expected: state.hydro.len(),
            got: controls.len(),
        });
    }
    let hydro_next: Vec<Pose<T>> = state.hydro.iter().zip(controls).map(|(q, u)| apply_twist(q, u)).collect();

    let split = aggregate_wrench(scene, state);
    let gravity = scene.inertia.gravity().map(|g| lift::<T>(g * scene.inertia.mass()));
    let total = split.object + Wrench::new(gravity, Vector3::zeros());
    let accel = solve_inertia_world(&scene.inertia, &state.object.rotation, &total);
    let delta = accel.scale(lift::<T>(scene.params.gain()));
    let object_next = integrate_about_com(&scene.inertia, &state.object, &delta);

    if !object_next.is_finite() || !hydro_next.iter().all(Pose::is_finite) {
        return Err(FaultKind::NonFinitePose);
    }
    let change = delta.linear.map(|x| x.re()).norm() + delta.angular.map(|x| x.re()).norm();
    if change > scene.params.max_pose_change {
        return Err(FaultKind::Divergence {
            change,
            bound: scene.params.max_pose_change,
        });
    }

    let contacts = compute_forces(scene, state, &object_next, &hydro_next)?;
    Ok(SystemState {
        object: object_next,
        hydro: hydro_next,
        contacts,
    })
}

/// `K + 1` states for `K` control steps.
pub fn rollout<T: Real>(
    scene: &Scene,
    x0: &SystemState<T>,
    controls: &[Vec<Twist<T>>],
) -> Result<Vec<SystemState<T>>, StepFault> {
    let mut traj = Vec::with_capacity(controls.len() + 1);
    traj.push(x0.clone());
    for (k, u) in controls.iter().enumerate() {
        let next = step(scene, &traj[k], u).map_err(|kind| StepFault { step: k, kind })?;
        traj.push(next);
    }
    Ok(traj)
}
