//! The four benchmark tasks, their goal samplers and cost presets, and the
//! simulated plant with tactile force feedback.
//!
//! A [`Scenario`] lists the manipulators first and the optional ground last,
//! so hydro body `j < manipulators.len()` is commandable and the ground never
//! moves.

use std::fmt;
use std::str::FromStr;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::contact::{cone_project, ContactModel, ContactSettings, ContactState, MaterialParams};
use crate::dynamics::{step, HydroBody, QuasiDynParams, Scene, SystemState};
use crate::error::{ConfigError, StepFault};
use crate::geometry::{contact_frame, contact_frame_from_sdf, sample_surface, NormalSource, ObjectShape, SdfShape};
use crate::optimizer::{ControlSpace, CostSpec, CostWeights, OptimizerConfig, Plant, StateBounds};
use crate::se3::{exp_rotation, InertiaParams, Pose, Twist};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    PlanarPushing,
    PlanarRotation,
    Rolling,
    InhandRotation,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::PlanarPushing,
        TaskKind::PlanarRotation,
        TaskKind::Rolling,
        TaskKind::InhandRotation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::PlanarPushing => "planar_pushing",
            TaskKind::PlanarRotation => "planar_rotation",
            TaskKind::Rolling => "rolling",
            TaskKind::InhandRotation => "inhand_rotation",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| ConfigError::Unknown {
                kind: "scenario",
                name: s.to_string(),
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub shape: ObjectShape,
    pub mass: f64,
    /// Target number of surface samples.
    pub points: usize,
    #[serde(default)]
    pub sample_seed: u64,
    pub pose: Pose,
    /// Principal moments about the CoM; derived from the shape when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inertia: Option<[f64; 3]>,
}

/// One commandable hydro body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManipulatorSpec {
    pub name: String,
    pub shape: SdfShape,
    pub material: MaterialParams,
    pub pose: Pose,
    /// Twist coordinates `[vx, vy, vz, wx, wy, wz]` the planner may use.
    pub free: [bool; 6],
    /// Symmetric per-step bound on each coordinate.
    pub limit: [f64; 6],
    pub prior_std: [f64; 6],
    /// Per-step twist applied while pressing into the initial grasp.
    pub press: [f64; 6],
    /// Overrides the scene-wide contact normal source for this body.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal_source: Option<NormalSource>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundSpec {
    pub material: MaterialParams,
    #[serde(default)]
    pub height: f64,
}

/// Goals are offsets from the object's start pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalSampler {
    /// Zero, one or two world directions spanning the translation offset.
    pub translation_axes: Vec<[f64; 3]>,
    /// Offset length range [m]. With one axis the sign is random.
    pub radius: [f64; 2],
    pub rotation_axis: [f64; 3],
    /// Rotation magnitude range [rad]; the sign is random.
    pub angle: [f64; 2],
    /// When set, the rotation is tied to the translation along the first
    /// axis as rolling without slip on this radius.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roll_radius: Option<f64>,
    /// Reported tolerances `[m, rad]`.
    pub tolerance: [f64; 2],
}

/// Scalar tracking error in millimetres: translation plus rotation
/// converted to arc length on `arc_radius`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorMetric {
    pub translation_weight: f64,
    /// [m]
    pub arc_radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub task: TaskKind,
    pub object: ObjectSpec,
    pub manipulators: Vec<ManipulatorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground: Option<GroundSpec>,
    pub gravity: [f64; 3],
    pub press_steps: usize,
    pub settle_steps: usize,
    pub dynamics: QuasiDynParams,
    #[serde(default)]
    pub contact: ContactSettings,
    pub goals: GoalSampler,
    pub weights: CostWeights,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_bounds: Option<StateBounds>,
    pub metric: ErrorMetric,
    pub optimizer: OptimizerConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalPose {
    pub pose: Pose,
    /// [m]
    pub tolerance_translation: f64,
    /// [rad]
    pub tolerance_rotation: f64,
}

impl GoalPose {
    /// The same offset applied to `to` instead of `from`.
    pub fn rebased(&self, from: &Pose, to: &Pose) -> GoalPose {
        let pose = Pose::new(
            self.pose.translation - from.translation + to.translation,
            self.pose.rotation * from.rotation.inverse() * to.rotation,
        );
        GoalPose { pose, ..*self }
    }
}

fn bubble_material() -> MaterialParams {
    MaterialParams {
        normal_modulus: 2.5e5,
        tangential_modulus: 1.5e5,
        friction: 1.0,
        sharpness: 3e3,
    }
}

fn table_material() -> MaterialParams {
    MaterialParams {
        normal_modulus: 1.6e5,
        tangential_modulus: 1e5,
        friction: 0.15,
        sharpness: 4e3,
    }
}

fn bubble() -> SdfShape {
    SdfShape::Ellipsoid {
        semi_axes: [0.06, 0.06, 0.03],
    }
}

fn mask(free: &[usize]) -> [bool; 6] {
    let mut m = [false; 6];
    free.iter().for_each(|&i| m[i] = true);
    m
}

fn on(free: &[usize], v: f64) -> [f64; 6] {
    let mut m = [0.0; 6];
    free.iter().for_each(|&i| m[i] = v);
    m
}

fn weights(terminal_translation: f64, arc_radius: f64) -> CostWeights {
    let terminal_rotation = 4.0 * terminal_translation * arc_radius * arc_radius;
    CostWeights {
        translation: 0.1 * terminal_translation,
        rotation: 0.1 * terminal_rotation,
        terminal_translation,
        terminal_rotation,
        effort_linear: 10.0,
        effort_angular: 10.0 * arc_radius * arc_radius,
        state_penalty: 0.0,
    }
}

impl Scenario {
    /// Default configuration of a task. Material and step parameters are
    /// placeholders sized for desk-scale objects.
    pub fn preset(task: TaskKind) -> Scenario {
        let dynamics = QuasiDynParams {
            step: 0.1,
            regularizer: 112.5,
            max_pose_change: 0.2,
        };
        let optimizer = OptimizerConfig {
            horizon: 8,
            episode: 8,
            ..OptimizerConfig::default()
        };
        let top_bubble = |z: f64, free: &[usize], limit: f64, std: f64, press: f64| ManipulatorSpec {
            name: "bubble".into(),
            shape: bubble(),
            material: bubble_material(),
            pose: Pose::from_translation(Vector3::new(0.0, 0.0, z)),
            free: mask(free),
            limit: on(free, limit),
            prior_std: on(free, std),
            press: on(&[2], -press),
            normal_source: None,
        };
        let half_box = [0.04, 0.04, 0.02];
        let flat_box = ObjectSpec {
            shape: ObjectShape::Box { half_extents: half_box },
            mass: 0.1,
            points: 200,
            sample_seed: 0,
            pose: Pose::from_translation(Vector3::new(0.0, 0.0, half_box[2])),
            inertia: None,
        };
        let ground = Some(GroundSpec {
            material: table_material(),
            height: 0.0,
        });
        let base = |object: ObjectSpec, manipulators: Vec<ManipulatorSpec>, goals: GoalSampler, arc: f64| Scenario {
            task,
            object,
            manipulators,
            ground,
            gravity: [0.0, 0.0, -9.81],
            press_steps: 8,
            settle_steps: 4,
            dynamics,
            // Membrane pressure acts along the bubble normal.
            contact: ContactSettings {
                normal_source: NormalSource::HydroGradient,
                ..ContactSettings::default()
            },
            goals,
            weights: weights(1e4, arc),
            state_bounds: None,
            metric: ErrorMetric {
                translation_weight: 1.0,
                arc_radius: arc,
            },
            optimizer: optimizer.clone(),
        };
        match task {
            TaskKind::PlanarPushing => base(
                flat_box,
                vec![top_bubble(0.07, &[0, 1], 0.003, 0.0015, 0.001)],
                GoalSampler {
                    translation_axes: vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
                    radius: [0.003, 0.007],
                    rotation_axis: [0.0, 0.0, 1.0],
                    angle: [0.0, 0.0],
                    roll_radius: None,
                    tolerance: [0.001, 0.02],
                },
                0.04,
            ),
            TaskKind::PlanarRotation => base(
                flat_box,
                vec![top_bubble(0.07, &[5], 0.05, 0.025, 0.001)],
                GoalSampler {
                    translation_axes: vec![],
                    radius: [0.0, 0.0],
                    rotation_axis: [0.0, 0.0, 1.0],
                    angle: [0.03, 0.07],
                    roll_radius: None,
                    tolerance: [0.001, 0.02],
                },
                0.04,
            ),
            TaskKind::Rolling => {
                let (r, hl) = (0.025, 0.04);
                let mut s = base(
                    ObjectSpec {
                        shape: ObjectShape::Cylinder {
                            radius: r,
                            half_length: hl,
                        },
                        mass: 0.1,
                        points: 200,
                        sample_seed: 0,
                        pose: Pose::from_translation(Vector3::new(0.0, 0.0, r)),
                        inertia: None,
                    },
                    vec![top_bubble(2.0 * r + 0.03, &[0], 0.006, 0.003, 0.001)],
                    GoalSampler {
                        translation_axes: vec![[1.0, 0.0, 0.0]],
                        radius: [0.003, 0.007],
                        rotation_axis: [0.0, 1.0, 0.0],
                        angle: [0.0, 0.0],
                        roll_radius: Some(r),
                        tolerance: [0.001, 0.04],
                    },
                    r,
                );
                s.press_steps = 12;
                s.dynamics.regularizer = 225.0;
                s.ground = Some(GroundSpec {
                    material: MaterialParams {
                        normal_modulus: 1e6,
                        tangential_modulus: 6e5,
                        friction: 0.6,
                        sharpness: 8e3,
                    },
                    height: 0.0,
                });
                s
            }
            TaskKind::InhandRotation => {
                let h = 0.03;
                // Thin bubble axis along world x, facing the object.
                let side = |sign: f64, name: &str| ManipulatorSpec {
                    name: name.into(),
                    shape: bubble(),
                    material: bubble_material(),
                    pose: Pose::new(
                        Vector3::new(sign * (h + 0.03), 0.0, 0.0),
                        UnitQuaternion::from_axis_angle(&Vector3::y_axis(), std::f64::consts::FRAC_PI_2),
                    ),
                    free: mask(&[2]),
                    limit: on(&[2], 0.002),
                    prior_std: on(&[2], 0.001),
                    press: on(&[0], -sign * 0.001),
                    normal_source: None,
                };
                let mut s = base(
                    ObjectSpec {
                        shape: ObjectShape::Box { half_extents: [h; 3] },
                        mass: 0.1,
                        points: 200,
                        sample_seed: 0,
                        pose: Pose::identity(),
                        inertia: None,
                    },
                    vec![side(-1.0, "left"), side(1.0, "right")],
                    GoalSampler {
                        translation_axes: vec![],
                        radius: [0.0, 0.0],
                        rotation_axis: [0.0, 1.0, 0.0],
                        angle: [0.05, 0.2],
                        roll_radius: None,
                        tolerance: [0.001, 0.02],
                    },
                    h,
                );
                s.ground = None;
                s.press_steps = 5;
                s.settle_steps = 6;
                s
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.manipulators.is_empty() {
            return Err(ConfigError::invalid("scenario.manipulators", "at least one hydro body is required"));
        }
        if self.task == TaskKind::InhandRotation && self.manipulators.len() != 2 {
            return Err(ConfigError::invalid(
                "scenario.manipulators",
                "in-hand rotation needs exactly two hydro bodies",
            ));
        }
        if !self.manipulators.iter().any(|m| m.free.iter().any(|&f| f)) {
            return Err(ConfigError::invalid("scenario.manipulators.free", "no free control coordinate"));
        }
        if !(self.object.mass > 0.0 && self.object.mass.is_finite()) {
            return Err(ConfigError::invalid("scenario.object.mass", "must be positive"));
        }
        if self.object.points == 0 {
            return Err(ConfigError::invalid("scenario.object.points", "must be positive"));
        }
        let g = &self.goals;
        let ordered = |r: [f64; 2]| r[0] >= 0.0 && r[0] <= r[1] && r[1].is_finite();
        if !ordered(g.radius) || !ordered(g.angle) {
            return Err(ConfigError::invalid("scenario.goals", "ranges must satisfy 0 ≤ lo ≤ hi"));
        }
        if g.translation_axes.len() > 2 {
            return Err(ConfigError::invalid("scenario.goals.translation_axes", "at most two axes"));
        }
        if g.translation_axes.iter().chain([&g.rotation_axis]).any(|a| Vector3::from(*a).norm() == 0.0) {
            return Err(ConfigError::invalid("scenario.goals", "axes must be nonzero"));
        }
        if g.roll_radius.is_some_and(|r| !(r > 0.0)) || (g.roll_radius.is_some() && g.translation_axes.is_empty()) {
            return Err(ConfigError::invalid(
                "scenario.goals.roll_radius",
                "needs a positive radius and a translation axis",
            ));
        }
        if !(self.metric.arc_radius >= 0.0 && self.metric.translation_weight >= 0.0) {
            return Err(ConfigError::invalid("scenario.metric", "must be non-negative"));
        }
        self.control_space().validate()?;
        self.optimizer.validate()?;
        self.cost(Pose::identity()).validate()?;
        self.scene(ContactModel::Nh).map(|_| ())
    }

    pub fn num_bodies(&self) -> usize {
        self.manipulators.len() + usize::from(self.ground.is_some())
    }

    pub fn inertia(&self) -> Result<InertiaParams, ConfigError> {
        let m = self.object.mass;
        let g = Vector3::from(self.gravity);
        if let Some(d) = self.object.inertia {
            return InertiaParams::diagonal(m, d, g);
        }
        match &self.object.shape {
            ObjectShape::Box { half_extents } => InertiaParams::solid_box(m, *half_extents, g),
            ObjectShape::Cylinder { radius, half_length } => InertiaParams::solid_cylinder_y(m, *radius, *half_length, g),
            ObjectShape::Sphere { radius } => InertiaParams::diagonal(m, [0.4 * m * radius * radius; 3], g),
            // Solid sphere of the bounding radius unless given explicitly.
            ObjectShape::Mesh { .. } => {
                let r = self
                    .object
                    .shape
                    .bounding_radius()
                    .map_err(|e| ConfigError::invalid("scenario.object.shape", e.to_string()))?;
                InertiaParams::diagonal(m, [0.4 * m * r * r; 3], g)
            }
        }
    }

    /// Hydro bodies in scene order.
    pub fn bodies(&self) -> Vec<HydroBody> {
        let mut out: Vec<HydroBody> = self
            .manipulators
            .iter()
            .map(|m| HydroBody {
                name: m.name.clone(),
                shape: m.shape.clone(),
                material: m.material,
                normal_source: m.normal_source,
            })
            .collect();
        if let Some(g) = &self.ground {
            out.push(HydroBody {
                name: "ground".into(),
                shape: SdfShape::HalfSpace {
                    normal: [0.0, 0.0, 1.0],
                    offset: g.height,
                },
                material: g.material,
                // Box edges and cylinder caps would otherwise push sideways.
                normal_source: Some(NormalSource::HydroGradient),
            });
        }
        out
    }

    pub fn scene(&self, model: ContactModel) -> Result<Scene, ConfigError> {
        let samples = sample_surface(&self.object.shape, self.object.points, self.object.sample_seed)
            .map_err(|e| ConfigError::invalid("scenario.object.shape", e.to_string()))?;
        let scene = Scene {
            samples,
            inertia: self.inertia()?,
            bodies: self.bodies(),
            params: self.dynamics,
            model,
            settings: self.contact,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn initial_hydro(&self) -> Vec<Pose> {
        let mut out: Vec<Pose> = self.manipulators.iter().map(|m| m.pose).collect();
        if self.ground.is_some() {
            out.push(Pose::identity());
        }
        out
    }

    /// Control space over all scene bodies; the ground is fully masked.
    pub fn control_space(&self) -> ControlSpace {
        let mut free = Vec::new();
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        let mut prior_std = Vec::new();
        for m in &self.manipulators {
            for i in 0..6 {
                free.push(m.free[i]);
                let l = if m.free[i] { m.limit[i] } else { 0.0 };
                lower.push(-l);
                upper.push(l);
                prior_std.push(if m.free[i] { m.prior_std[i] } else { 0.0 });
            }
        }
        if self.ground.is_some() {
            free.extend([false; 6]);
            lower.extend([0.0; 6]);
            upper.extend([0.0; 6]);
            prior_std.extend([0.0; 6]);
        }
        ControlSpace {
            bodies: self.num_bodies(),
            free,
            lower,
            upper,
            prior_std,
        }
    }

    fn press_twists(&self, pressing: bool) -> Vec<Twist> {
        (0..self.num_bodies())
            .map(|j| match self.manipulators.get(j) {
                Some(m) if pressing => Twist::from_coords(m.press),
                _ => Twist::zero(),
            })
            .collect()
    }

    /// Presses the manipulators into contact and lets the object settle.
    /// `observe` sees every intermediate state, so a tactile estimator can
    /// track its anchors through the approach.
    pub fn settle(
        &self,
        scene: &Scene,
        mut observe: impl FnMut(&SystemState),
    ) -> Result<SystemState, StepFault> {
        let mut x = SystemState::unloaded(scene, self.object.pose, self.initial_hydro());
        observe(&x);
        for k in 0..self.press_steps + self.settle_steps {
            let u = self.press_twists(k < self.press_steps);
            x = step(scene, &x, &u).map_err(|kind| StepFault { step: k, kind })?;
            observe(&x);
        }
        Ok(x)
    }

    pub fn cost(&self, goal: Pose) -> CostSpec {
        CostSpec {
            goal,
            weights: self.weights,
            state_bounds: self.state_bounds,
        }
    }

    /// Scalar error [mm] of a final pose.
    pub fn score(&self, q: &Pose, goal: &GoalPose) -> f64 {
        let (t, r) = pose_error(q, goal);
        self.metric.translation_weight * t + self.metric.arc_radius * 1000.0 * r
    }
}

pub fn sample_goals(scenario: &Scenario, n: usize, seed: u64) -> Vec<GoalPose> {
    let g = &scenario.goals;
    let start = scenario.object.pose;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniform = |rng: &mut ChaCha8Rng, r: [f64; 2]| if r[1] > r[0] { rng.gen_range(r[0]..=r[1]) } else { r[0] };
    let axis = Vector3::from(g.rotation_axis).normalize();
    (0..n)
        .map(|_| {
            let len = uniform(&mut rng, g.radius);
            let axes: Vec<Vector3<f64>> = g.translation_axes.iter().map(|a| Vector3::from(*a).normalize()).collect();
            let (offset, along_first) = match axes.as_slice() {
                [] => (Vector3::zeros(), 0.0),
                [a] => {
                    let s = if rng.gen_bool(0.5) { len } else { -len };
                    (a * s, s)
                }
                [a, b, ..] => {
                    let th = rng.gen_range(0.0..std::f64::consts::TAU);
                    (a * (len * th.cos()) + b * (len * th.sin()), len * th.cos())
                }
            };
            let angle = match g.roll_radius {
                Some(r) => along_first / r,
                None => {
                    let a = uniform(&mut rng, g.angle);
                    if rng.gen_bool(0.5) {
                        a
                    } else {
                        -a
                    }
                }
            };
            let rotation = exp_rotation(&(axis * angle)) * start.rotation;
            GoalPose {
                pose: Pose::new(start.translation + offset, rotation),
                tolerance_translation: g.tolerance[0],
                tolerance_rotation: g.tolerance[1],
            }
        })
        .collect()
}

/// `(‖Δt‖ in mm, geodesic angle in rad)`.
pub fn pose_error(q: &Pose, goal: &GoalPose) -> (f64, f64) {
    let t = (q.translation - goal.pose.translation).norm() * 1000.0;
    (t, q.rotation.angle_to(&goal.pose.rotation))
}

/// Force on the object from an observed deformation, using the linear
/// compliance law and the friction cone. `depth` is the penetration along
/// the push direction and `d_t` the tangential deformation, both [m].
pub fn compliance_force(push: &Vector3<f64>, depth: f64, d_t: &Vector3<f64>, mat: &MaterialParams, area: f64, eps: f64) -> Vector3<f64> {
    let f = push * (mat.normal_modulus * area * depth) + d_t * (mat.tangential_modulus * area);
    let r = crate::geometry::ContactFrame {
        origin: Vector3::zeros(),
        normal: -push,
    }
    .rotation();
    // Contact coordinates along [push, t1, t2].
    let local = Vector3::new(f.dot(push), f.dot(&r.column(1)), f.dot(&r.column(2)));
    let p = cone_project(&local, mat.friction, eps);
    push * p.x + r.column(1) * p.y + r.column(2) * p.z
}

/// Contact forces recovered from object and hydro poses alone. Each pair
/// keeps an anchor: the body-frame location where the point first touched,
/// interpolated to the surface crossing between two observations. The
/// anchor slides along with the point while the pair is slipping.
#[derive(Clone, Debug, PartialEq)]
pub struct TactileEstimator {
    anchors: Vec<Option<Vector3<f64>>>,
    last: Vec<Option<(Vector3<f64>, f64)>>,
}

impl TactileEstimator {
    pub fn new(scene: &Scene) -> Self {
        let n = scene.num_points() * scene.num_bodies();
        Self {
            anchors: vec![None; n],
            last: vec![None; n],
        }
    }

    /// Updates the anchors and returns one contact state per pair.
    pub fn estimate(&mut self, scene: &Scene, object: &Pose, hydro: &[Pose]) -> Vec<ContactState> {
        let n = scene.num_points();
        let mut out = Vec::with_capacity(self.anchors.len());
        for (j, body) in scene.bodies.iter().enumerate() {
            for (i, sample) in scene.samples.iter().enumerate() {
                let world = object.transform_point(&sample.position);
                let local = hydro[j].inverse_transform_point(&world);
                let phi = body.shape.eval_local(&local);
                let last = self.last[j * n + i].replace((local, phi));
                let anchor = &mut self.anchors[j * n + i];
                if phi > 0.0 {
                    *anchor = None;
                    out.push(ContactState::new(phi, local));
                    continue;
                }
                let a = *anchor.get_or_insert_with(|| match last {
                    Some((p, phi_p)) if phi_p > 0.0 => p + (local - p) * (phi_p / (phi_p - phi)),
                    _ => local,
                });
                let frame = match body.normal_source.unwrap_or(scene.settings.normal_source) {
                    NormalSource::ObjectSurface => contact_frame(sample, object),
                    NormalSource::HydroGradient => contact_frame_from_sdf(sample, object, &body.shape, &hydro[j]),
                };
                let push = frame.push_direction();
                let d = hydro[j].rotation * (a - local);
                let d_t = d - push * d.dot(&push);
                let force = compliance_force(&push, -phi, &d_t, &body.material, sample.area, scene.settings.tangent_eps);
                // Slide the anchor so the stored shear matches the projected force.
                let k = body.material.tangential_modulus * sample.area;
                let f_t = force - push * force.dot(&push);
                if d_t.norm() > 0.0 && k > 0.0 {
                    let excess = d_t - f_t / k;
                    *anchor = Some(a - hydro[j].rotation.inverse() * excess);
                }
                let mut state = ContactState::new(phi, local);
                state.force = force;
                out.push(state);
            }
        }
        out
    }
}

/// Stateless estimate with every anchor at the current point: pure normal
/// compliance.
pub fn tactile_force_estimate(scene: &Scene, object: &Pose, hydro: &[Pose]) -> Vec<ContactState> {
    TactileEstimator::new(scene).estimate(scene, object, hydro)
}

/// Plant-side mismatch relative to the nominal scenario.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSpec {
    /// Multiplies every friction coefficient of the plant.
    pub friction_scale: f64,
    /// Multiplies the normal and tangential moduli of every plant body.
    pub stiffness_scale: f64,
    /// Object pose noise std, [m] per axis.
    pub translation_noise: f64,
    /// Object orientation noise std, [rad] per axis.
    pub rotation_noise: f64,
    /// Replace the true contact forces with tactile estimates in the feedback.
    pub tactile: bool,
}

impl Default for PlantSpec {
    fn default() -> Self {
        Self {
            friction_scale: 0.8,
            stiffness_scale: 0.8,
            translation_noise: 2e-4,
            rotation_noise: 2e-3,
            tactile: true,
        }
    }
}

impl PlantSpec {
    pub fn exact() -> Self {
        Self {
            friction_scale: 1.0,
            stiffness_scale: 1.0,
            translation_noise: 0.0,
            rotation_noise: 0.0,
            tactile: false,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.friction_scale > 0.0 && self.friction_scale.is_finite()) {
            return Err(ConfigError::invalid("plant.friction_scale", "must be positive"));
        }
        if !(self.stiffness_scale > 0.0 && self.stiffness_scale.is_finite()) {
            return Err(ConfigError::invalid("plant.stiffness_scale", "must be positive"));
        }
        if !(self.translation_noise >= 0.0 && self.rotation_noise >= 0.0) {
            return Err(ConfigError::invalid("plant.noise", "must be non-negative"));
        }
        Ok(())
    }
}

/// Simulated system standing in for the robot, tag tracker and tactile
/// sensors.
#[derive(Clone, Debug)]
pub struct SimulatedPlant {
    pub scene: Scene,
    pub state: SystemState,
    pub spec: PlantSpec,
    estimator: TactileEstimator,
    rng: ChaCha8Rng,
}

impl SimulatedPlant {
    fn noisy(&mut self, q: &Pose) -> Pose {
        let s = self.spec;
        let mut draw = |std: f64| {
            if std > 0.0 {
                let d = Normal::new(0.0, std).expect("std is positive");
                Vector3::new(d.sample(&mut self.rng), d.sample(&mut self.rng), d.sample(&mut self.rng))
            } else {
                Vector3::zeros()
            }
        };
        let dt = draw(s.translation_noise);
        let dr = draw(s.rotation_noise);
        Pose::new(q.translation + dt, exp_rotation(&dr) * q.rotation)
    }
}

impl Plant for SimulatedPlant {
    fn measure(&mut self) -> SystemState {
        let truth = self.state.object;
        let object = self.noisy(&truth);
        let hydro = self.state.hydro.clone();
        let contacts = if self.spec.tactile {
            self.estimator.estimate(&self.scene, &object, &hydro)
        } else {
            self.state.contacts.clone()
        };
        SystemState { object, hydro, contacts }
    }

    fn truth(&self) -> &SystemState {
        &self.state
    }

    fn apply(&mut self, controls: &[Twist]) -> Result<(), StepFault> {
        self.state = step(&self.scene, &self.state, controls).map_err(|kind| StepFault { step: 0, kind })?;
        Ok(())
    }

    fn scene(&self) -> &Scene {
        &self.scene
    }
}

/// Plant stepping `model` with the configured mismatch, already pressed
/// into its initial grasp.
pub fn build_plant(scenario: &Scenario, model: ContactModel, spec: PlantSpec, seed: u64) -> Result<SimulatedPlant, PlantBuildError> {
    spec.validate()?;
    let mut scene = scenario.scene(model)?;
    for b in &mut scene.bodies {
        b.material = b.material.with_friction(b.material.friction * spec.friction_scale);
        b.material.normal_modulus *= spec.stiffness_scale;
        b.material.tangential_modulus *= spec.stiffness_scale;
    }
    let mut estimator = TactileEstimator::new(&scene);
    let state = scenario.settle(&scene, |x| {
        estimator.estimate(&scene, &x.object, &x.hydro);
    })?;
    Ok(SimulatedPlant {
        scene,
        state,
        spec,
        estimator,
        rng: ChaCha8Rng::seed_from_u64(seed),
    })
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum PlantBuildError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("initial press: {0}")]
    Fault(#[from] StepFault),
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn presets_validate() {
        for t in TaskKind::ALL {
            Scenario::preset(t).validate().unwrap();
            assert_eq!(t.as_str().parse::<TaskKind>().unwrap(), t);
        }
        assert!("juggling".parse::<TaskKind>().is_err());
    }

    #[test]
    fn inhand_needs_two_bodies() {
        let mut s = Scenario::preset(TaskKind::InhandRotation);
        s.manipulators.pop();
        assert!(s.validate().is_err());
    }

    #[test]
    fn empty_mask_rejected() {
        let mut s = Scenario::preset(TaskKind::PlanarPushing);
        s.manipulators[0].free = [false; 6];
        assert!(s.validate().is_err());
    }

    #[test]
    fn goals_deterministic_and_bounded() {
        for t in TaskKind::ALL {
            let s = Scenario::preset(t);
            assert!(sample_goals(&s, 0, 1).is_empty());
            let a = sample_goals(&s, 10, 7);
            assert_eq!(a, sample_goals(&s, 10, 7));
            for g in &a {
                let start = GoalPose {
                    pose: s.object.pose,
                    tolerance_translation: 0.0,
                    tolerance_rotation: 0.0,
                };
                let (dt, dr) = pose_error(&g.pose, &start);
                let r = s.goals.radius;
                assert!(dt <= r[1] * 1000.0 + 1e-9 && dt >= r[0] * 1000.0 - 1e-9, "{t}: {dt}");
                if let Some(rr) = s.goals.roll_radius {
                    assert_relative_eq!(dr, dt / 1000.0 / rr, epsilon = 1e-9);
                } else {
                    let a = s.goals.angle;
                    assert!(dr <= a[1] + 1e-9 && dr >= a[0] - 1e-9, "{t}: {dr}");
                }
            }
        }
    }

    #[test]
    fn pose_error_examples() {
        let goal = GoalPose {
            pose: Pose::identity(),
            tolerance_translation: 0.0,
            tolerance_rotation: 0.0,
        };
        assert_eq!(pose_error(&Pose::identity(), &goal), (0.0, 0.0));
        let (t, r) = pose_error(&Pose::from_translation(Vector3::new(0.005, 0.0, 0.0)), &goal);
        assert_relative_eq!(t, 5.0, epsilon = 1e-12);
        assert_eq!(r, 0.0);
        let q = Pose::new(
            Vector3::zeros(),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2),
        );
        let (t, r) = pose_error(&q, &goal);
        assert_eq!(t, 0.0);
        assert_relative_eq!(r, std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn rebase_keeps_offset() {
        let s = Scenario::preset(TaskKind::PlanarRotation);
        let g = sample_goals(&s, 1, 3)[0];
        let to = Pose::from_translation(Vector3::new(0.001, 0.0, 0.019));
        let moved = g.rebased(&s.object.pose, &to);
        let start = GoalPose { pose: to, ..g };
        let (_, dr) = pose_error(&moved.pose, &start);
        assert_relative_eq!(dr, g.pose.rotation.angle_to(&s.object.pose.rotation), epsilon = 1e-12);
    }

    fn one_point_scene() -> Scene {
        let mut s = Scenario::preset(TaskKind::PlanarPushing);
        s.ground = None;
        let mut scene = s.scene(ContactModel::Nh).unwrap();
        scene.samples.truncate(1);
        scene.samples[0] = crate::geometry::SurfaceSample {
            position: Vector3::zeros(),
            area: 2e-4,
            normal: Vector3::z(),
        };
        scene
    }

    #[test]
    fn estimate_no_penetration_is_zero() {
        let scene = one_point_scene();
        let hydro = [Pose::from_translation(Vector3::new(0.0, 0.0, 0.2))];
        let est = tactile_force_estimate(&scene, &Pose::identity(), &hydro);
        assert!(est.iter().all(|c| c.force == Vector3::zeros()));
    }

    #[test]
    fn estimate_pure_normal_matches_hand_law() {
        let scene = one_point_scene();
        let mat = scene.bodies[0].material;
        // Spheres give a true distance; a 2 mm overlap from below.
        let mut scene = scene;
        scene.bodies[0].shape = SdfShape::Sphere { radius: 0.05 };
        let d = 0.002;
        let hydro = [Pose::from_translation(Vector3::new(0.0, 0.0, 0.05 - d))];
        let est = tactile_force_estimate(&scene, &Pose::identity(), &hydro);
        let expect = Vector3::new(0.0, 0.0, -mat.normal_modulus * 2e-4 * d);
        assert!((est[0].force - expect).norm() <= 1e-9 * expect.norm());
    }

    #[test]
    fn estimate_shear_follows_anchor_and_cone() {
        let mut scene = one_point_scene();
        scene.bodies[0].shape = SdfShape::Sphere { radius: 0.05 };
        let mat = scene.bodies[0].material;
        let a = 2e-4;
        let mut est = TactileEstimator::new(&scene);
        let d = 0.002;
        let mut hydro = [Pose::from_translation(Vector3::new(0.0, 0.0, 0.05 - d))];
        est.estimate(&scene, &Pose::identity(), &hydro);
        // Small slide of the body in +x: the point lags at -x in the body frame.
        let dx = 1e-5;
        hydro[0].translation.x += dx;
        let f = est.estimate(&scene, &Pose::identity(), &hydro)[0].force;
        // Pressure acts along the bubble normal, here tilted by dx / r.
        let push = (-hydro[0].translation).normalize();
        let f_n = f.dot(&push);
        let f_t = f - push * f_n;
        assert!(f_n > 0.0);
        let phi = hydro[0].inverse_transform_point(&Vector3::zeros()).norm() - 0.05;
        assert_relative_eq!(f_n, mat.normal_modulus * a * -phi, max_relative = 1e-9);
        // d = R(anchor - local): anchor is the old point, so d points along +x.
        let expect_t = mat.tangential_modulus * a * dx;
        assert!(f_t.norm() < mat.friction * f_n);
        assert_relative_eq!(f_t.x, expect_t, max_relative = 1e-3);
        // A large slide saturates the cone.
        hydro[0].translation.x += 0.01;
        let f = est.estimate(&scene, &Pose::identity(), &hydro)[0].force;
        let push = (-hydro[0].translation).normalize();
        let f_n = f.dot(&push);
        let f_t = f - push * f_n;
        assert_relative_eq!(f_t.norm(), mat.friction * f_n, max_relative = 1e-9);
    }

    #[test]
    fn estimate_matches_nh_after_normal_press() {
        let mut s = Scenario::preset(TaskKind::PlanarPushing);
        s.ground = None;
        s.gravity = [0.0; 3];
        s.settle_steps = 0;
        // A flat plate keeps the SDF a true distance along the push
        // direction, so both sides reduce to E·A·d.
        s.manipulators[0].shape = SdfShape::HalfSpace {
            normal: [0.0, 0.0, -1.0],
            offset: 0.0,
        };
        s.manipulators[0].pose = Pose::from_translation(Vector3::new(0.0, 0.0, 0.025));
        s.object.pose = Pose::identity();
        s.object.mass = 1e6;
        let scene = s.scene(ContactModel::Nh).unwrap();
        let x = s.settle(&scene, |_| {}).unwrap();
        let est = tactile_force_estimate(&scene, &x.object, &x.hydro);
        let mut compared = 0;
        for (c, e) in x.contacts.iter().zip(&est) {
            if c.force.norm() > 1e-6 {
                assert!((c.force - e.force).norm() <= 0.01 * c.force.norm(), "{:?} vs {:?}", c.force, e.force);
                compared += 1;
            }
        }
        assert!(compared > 0);
    }

    #[test]
    fn noise_injection_has_requested_std() {
        let s = Scenario::preset(TaskKind::PlanarPushing);
        let spec = PlantSpec {
            friction_scale: 1.0,
            stiffness_scale: 1.0,
            translation_noise: 1e-3,
            rotation_noise: 0.0,
            tactile: false,
        };
        let mut plant = build_plant(&s, ContactModel::Nh, spec, 5).unwrap();
        let truth = plant.truth().object.translation;
        let draws: Vec<f64> = (0..3000).map(|_| plant.measure().object.translation.x - truth.x).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        assert_relative_eq!(var.sqrt(), 1e-3, max_relative = 0.05);
    }

    #[test]
    fn masked_bodies_and_ground_have_zero_bounds() {
        for t in TaskKind::ALL {
            let s = Scenario::preset(t);
            let space = s.control_space();
            for (i, f) in space.free.iter().enumerate() {
                if !f {
                    assert_eq!((space.lower[i], space.upper[i]), (0.0, 0.0));
                }
            }
        }
    }
}
