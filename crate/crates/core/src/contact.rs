//! Contact force models.
//!
//! * `nh`  non-holonomic incremental hydroelastic model: forces are state,
//!   integrated from in-penetration displacement, projected onto the friction
//!   cone and reset on exit.
//! * `nhs` smoothed variant: full-step displacement and a sigmoid weight in
//!   place of the Heaviside reset.
//! * `pf`  holonomic pressure field with velocity-direction Coulomb friction.
//! * `pff` pressure field without tangential force.
//!
//! All four share [`ContactModel::update`]. Forces are stored as world
//! vectors and re-expressed through the current contact frame on every
//! update. The normal component `f_n` is measured along
//! [`ContactFrame::push_direction`], i.e. positive when it pushes the object
//! out of the hydro body.

use std::fmt;
use std::str::FromStr;

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, ContactError};
use crate::geometry::{ContactFrame, NormalSource};
use crate::real::{lift, relu, sigmoid, Real};

/// Elastic and frictional parameters of one hydro body.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialParams {
    /// Normal modulus `E` (force per area per depth).
    pub normal_modulus: f64,
    /// Tangential modulus `K`.
    pub tangential_modulus: f64,
    /// Coulomb coefficient `μ`.
    pub friction: f64,
    /// Sigmoid sharpness `β` [1/m] of the smoothed model.
    pub sharpness: f64,
}

impl MaterialParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let check = |name: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::invalid(name, "out of range"))
            }
        };
        check("material.normal_modulus", self.normal_modulus > 0.0 && self.normal_modulus.is_finite())?;
        check(
            "material.tangential_modulus",
            self.tangential_modulus > 0.0 && self.tangential_modulus.is_finite(),
        )?;
        check("material.friction", self.friction >= 0.0 && self.friction.is_finite())?;
        check("material.sharpness", self.sharpness > 0.0 && self.sharpness.is_finite())
    }

    pub fn with_friction(mut self, friction: f64) -> Self {
        self.friction = friction;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContactModel {
    Nh,
    Nhs,
    Pf,
    Pff,
}

impl ContactModel {
    pub const ALL: [ContactModel; 4] = [ContactModel::Nh, ContactModel::Nhs, ContactModel::Pf, ContactModel::Pff];

    pub fn as_str(self) -> &'static str {
        match self {
            ContactModel::Nh => "nh",
            ContactModel::Nhs => "nhs",
            ContactModel::Pf => "pf",
            ContactModel::Pff => "pff",
        }
    }

    /// Whether gradients through this model are supported. The hard model is
    /// excluded: its Heaviside reset and `α_d` switching make the rollout
    /// piecewise constant in the controls around contact transitions.
    pub fn is_differentiable(self) -> bool {
        !matches!(self, ContactModel::Nh)
    }

    /// Whether a pair whose next SDF value is `phi` produces exactly zero
    /// force, so the full update can be skipped.
    #[inline]
    pub(crate) fn is_inactive(self, phi: f64, mat: &MaterialParams, settings: &ContactSettings) -> bool {
        match self {
            ContactModel::Nh => phi > 0.0,
            ContactModel::Pf | ContactModel::Pff => phi >= 0.0,
            ContactModel::Nhs => mat.sharpness * phi > settings.smooth_cutoff,
        }
    }

    /// Advances one contact pair by one step.
    #[allow(clippy::too_many_arguments)]
    pub fn update<T: Real>(
        self,
        state: &ContactState<T>,
        frame: &ContactFrame<T>,
        motion: &PointMotion<T>,
        mat: &MaterialParams,
        area: f64,
        settings: &ContactSettings,
        step: f64,
    ) -> Result<ContactState<T>, ContactError> {
        match self {
            ContactModel::Nh => nh_update(state, frame, motion, mat, area, settings),
            ContactModel::Nhs => nhs_update(state, frame, motion, mat, area, settings),
            ContactModel::Pf | ContactModel::Pff => {
                check_finite(motion, state)?;
                let force = if self == ContactModel::Pff {
                    pff_force(frame, motion.next_phi, area, mat)
                } else {
                    let v = -motion.displacement() / lift::<T>(step);
                    let n = frame.push_direction();
                    let v_t = v - n * n.dot(&v);
                    pf_force(frame, motion.next_phi, area, &v_t, mat, settings.tangent_eps)
                };
                Ok(motion.next_state(force))
            }
        }
    }
}

impl fmt::Display for ContactModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ContactModel {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nh" => Ok(ContactModel::Nh),
            "nhs" => Ok(ContactModel::Nhs),
            "pf" => Ok(ContactModel::Pf),
            "pff" => Ok(ContactModel::Pff),
            _ => Err(ConfigError::Unknown {
                kind: "contact model",
                name: s.to_string(),
            }),
        }
    }
}

/// Which relative motion generates displacement.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisplacementMode {
    /// Point motion relative to the (moving) hydro body.
    #[default]
    Relative,
    /// Object motion only; hydro-body motion generates no shear.
    ObjectOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContactSettings {
    pub normal_source: NormalSource,
    pub displacement: DisplacementMode,
    /// Tangential-force guard [N] in the cone projection and PF direction.
    pub tangent_eps: f64,
    /// `|φ_k − φ_{k+1}|` [m] below which `α_d` takes its one-sided limit.
    pub alpha_eps: f64,
    /// Smoothed pairs with `β φ` above this are treated as out of contact
    /// (the sigmoid weight is below `e^-cutoff`).
    pub smooth_cutoff: f64,
}

impl Default for ContactSettings {
    fn default() -> Self {
        Self {
            normal_source: NormalSource::ObjectSurface,
            displacement: DisplacementMode::Relative,
            tangent_eps: 1e-12,
            alpha_eps: 1e-12,
            smooth_cutoff: 40.0,
        }
    }
}

/// Persistent state of one (surface point, hydro body) pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactState<T: Real = f64> {
    /// Contact force on the object, world frame [N].
    pub force: Vector3<T>,
    /// SDF value at the end of the last update [m].
    pub phi: f64,
    /// Point position in the hydro-body frame at the end of the last update [m].
    pub point: Vector3<f64>,
}

impl<T: Real> ContactState<T> {
    pub fn new(phi: f64, point: Vector3<f64>) -> Self {
        Self {
            force: Vector3::zeros(),
            phi,
            point,
        }
    }

    pub fn re(&self) -> ContactState<f64> {
        ContactState {
            force: self.force.map(|x| x.re()),
            phi: self.phi,
            point: self.point,
        }
    }
}

impl ContactState<f64> {
    pub fn lift<T: Real>(&self) -> ContactState<T> {
        ContactState {
            force: self.force.map(lift),
            phi: self.phi,
            point: self.point,
        }
    }
}

/// Motion of one surface point across a step.
#[derive(Clone, Copy, Debug)]
pub struct PointMotion<T: Real = f64> {
    /// Hydro-frame position before the step.
    pub prev_local: Vector3<T>,
    /// Hydro-frame position after the step.
    pub next_local: Vector3<T>,
    pub prev_phi: T,
    pub next_phi: T,
    /// World-frame displacement `r = p_k − p_{k+1}` driving the update.
    pub displacement: Vector3<T>,
}

impl<T: Real> PointMotion<T> {
    /// Motion relative to the hydro body; `hydro_rotation` maps the
    /// hydro-frame displacement to the world.
    pub fn relative(
        prev_local: Vector3<T>,
        next_local: Vector3<T>,
        prev_phi: T,
        next_phi: T,
        hydro_rotation: &UnitQuaternion<T>,
    ) -> Self {
        Self {
            prev_local,
            next_local,
            prev_phi,
            next_phi,
            displacement: hydro_rotation * (prev_local - next_local),
        }
    }

    #[inline]
    pub fn displacement(&self) -> Vector3<T> {
        self.displacement
    }

    fn next_state(&self, force: Vector3<T>) -> ContactState<T> {
        ContactState {
            force,
            phi: self.next_phi.re(),
            point: self.next_local.map(|x| x.re()),
        }
    }
}

fn check_finite<T: Real>(motion: &PointMotion<T>, state: &ContactState<T>) -> Result<(), ContactError> {
    let ok = motion.prev_phi.re().is_finite()
        && motion.next_phi.re().is_finite()
        && motion.prev_local.iter().chain(motion.next_local.iter()).all(|x| x.re().is_finite())
        && state.force.iter().all(|x| x.re().is_finite());
    if ok {
        Ok(())
    } else {
        Err(ContactError { point: 0, body: 0 })
    }
}

/// In-penetration fraction of the segment from `φ_k` to `φ_{k+1}`.
pub fn penetration_fraction<T: Real>(phi_k: T, phi_k1: T, eps: f64) -> T {
    let denom = phi_k - phi_k1;
    if denom.re().abs() < eps {
        return if phi_k.re() <= 0.0 { T::one() } else { T::zero() };
    }
    let alpha = (relu(-phi_k1) - relu(-phi_k)) / denom;
    if alpha.re() < 0.0 {
        T::zero()
    } else if alpha.re() > 1.0 {
        T::one()
    } else {
        alpha
    }
}

/// Friction-cone projection of a force given in contact-frame coordinates
/// `[f_n, f_t1, f_t2]`.
pub fn cone_project<T: Real>(f: &Vector3<T>, mu: f64, eps: f64) -> Vector3<T> {
    let (n, t) = project_split(f.x, Vector3::new(T::zero(), f.y, f.z), mu, eps);
    Vector3::new(n, t.y, t.z)
}

/// `[relu(f_n); min(1, μ relu(f_n) / ‖f_t‖) f_t]`. A tangential norm below
/// `eps` is left unscaled; at `s = 1` the scaled branch is taken.
#[inline]
fn project_split<T: Real>(f_n: T, f_t: Vector3<T>, mu: f64, eps: f64) -> (T, Vector3<T>) {
    let n = relu(f_n);
    let t_norm_sq = f_t.norm_squared();
    if t_norm_sq.re() <= eps * eps {
        return (n, f_t);
    }
    let s = (n * mu) / t_norm_sq.sqrt();
    if s.re() <= 1.0 {
        (n, f_t * s)
    } else {
        (n, f_t)
    }
}

/// Adds `E A d_n` / `K A d_t` to the stored force and projects onto the cone.
#[inline]
fn accumulate<T: Real>(
    prev: &Vector3<T>,
    n: &Vector3<T>,
    d: &Vector3<T>,
    mat: &MaterialParams,
    area: f64,
    eps: f64,
) -> Vector3<T> {
    let f_n0 = prev.dot(n);
    let f_t0 = prev - n * f_n0;
    let d_n = d.dot(n);
    let d_t = d - n * d_n;
    let f_n = f_n0 + d_n * (mat.normal_modulus * area);
    let f_t = f_t0 + d_t * lift::<T>(mat.tangential_modulus * area);
    let (f_n, f_t) = project_split(f_n, f_t, mat.friction, eps);
    n * f_n + f_t
}

/// Hard non-holonomic update.
pub fn nh_update<T: Real>(
    state: &ContactState<T>,
    frame: &ContactFrame<T>,
    motion: &PointMotion<T>,
    mat: &MaterialParams,
    area: f64,
    settings: &ContactSettings,
) -> Result<ContactState<T>, ContactError> {
    check_finite(motion, state)?;
    if motion.next_phi.re() > 0.0 {
        return Ok(motion.next_state(Vector3::zeros()));
    }
    let alpha = penetration_fraction(motion.prev_phi, motion.next_phi, settings.alpha_eps);
    let d = motion.displacement() * alpha;
    let force = accumulate(&state.force, &frame.push_direction(), &d, mat, area, settings.tangent_eps);
    Ok(motion.next_state(force))
}

/// Smoothed non-holonomic update: `α_d ≡ 1`, reset weight `σ(−β φ_{k+1})`.
pub fn nhs_update<T: Real>(
    state: &ContactState<T>,
    frame: &ContactFrame<T>,
    motion: &PointMotion<T>,
    mat: &MaterialParams,
    area: f64,
    settings: &ContactSettings,
) -> Result<ContactState<T>, ContactError> {
    check_finite(motion, state)?;
    if ContactModel::Nhs.is_inactive(motion.next_phi.re(), mat, settings) {
        return Ok(motion.next_state(Vector3::zeros()));
    }
    let weight = sigmoid(motion.next_phi * (-mat.sharpness));
    let force = accumulate(
        &state.force,
        &frame.push_direction(),
        &motion.displacement(),
        mat,
        area,
        settings.tangent_eps,
    );
    Ok(motion.next_state(force * weight))
}

/// Pressure-field force with kinetic Coulomb friction opposing `v_t`.
pub fn pf_force<T: Real>(
    frame: &ContactFrame<T>,
    phi: T,
    area: f64,
    v_t: &Vector3<T>,
    mat: &MaterialParams,
    eps: f64,
) -> Vector3<T> {
    let f_n = relu(phi * (-mat.normal_modulus * area));
    let normal = frame.push_direction() * f_n;
    let speed_sq = v_t.norm_squared();
    if speed_sq.re() <= eps * eps || f_n.re() == 0.0 {
        return normal;
    }
    normal - v_t * (f_n * mat.friction / speed_sq.sqrt())
}

/// Frictionless pressure-field force.
pub fn pff_force<T: Real>(frame: &ContactFrame<T>, phi: T, area: f64, mat: &MaterialParams) -> Vector3<T> {
    frame.push_direction() * relu(phi * (-mat.normal_modulus * area))
}

/// Splits a world force into `(f_n, f_t)` relative to the push direction.
pub fn split_force<T: Real>(frame: &ContactFrame<T>, f: &Vector3<T>) -> (T, Vector3<T>) {
    let n = frame.push_direction();
    let f_n = f.dot(&n);
    (f_n, f - n * f_n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn mat() -> MaterialParams {
        MaterialParams {
            normal_modulus: 1e4,
            tangential_modulus: 5e3,
            friction: 0.5,
            sharpness: 2000.0,
        }
    }

    /// Object point on a ground half-space: the object's outward normal points
    /// down, so the push direction is +z.
    fn ground_frame() -> ContactFrame {
        ContactFrame {
            origin: Vector3::zeros(),
            normal: -Vector3::z(),
        }
    }

    fn motion(prev: Vector3<f64>, next: Vector3<f64>) -> PointMotion {
        PointMotion::relative(prev, next, prev.z, next.z, &UnitQuaternion::identity())
    }

    fn st(force: Vector3<f64>) -> ContactState {
        ContactState {
            force,
            phi: 0.0,
            point: Vector3::zeros(),
        }
    }

    fn in_cone(f: &Vector3<f64>, mu: f64) -> bool {
        let (f_n, f_t) = split_force(&ground_frame(), f);
        f_n >= 0.0 && f_t.norm() <= mu * f_n + 1e-9
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(penetration_fraction(0.02, 0.01, 1e-12), 0.0);
        assert_eq!(penetration_fraction(-0.01, -0.03, 1e-12), 1.0);
        assert_relative_eq!(penetration_fraction(0.01, -0.03, 1e-12), 0.75, epsilon = 1e-15);
        assert_relative_eq!(penetration_fraction(-0.03, 0.01, 1e-12), 0.75, epsilon = 1e-15);
        assert_eq!(penetration_fraction(-0.01, -0.01, 1e-12), 1.0);
        assert_eq!(penetration_fraction(0.01, 0.01, 1e-12), 0.0);
    }

    #[test]
    fn cone_examples() {
        let eps = 1e-12;
        let inside = Vector3::new(1.0, 0.2, -0.1);
        assert_eq!(cone_project(&inside, 0.5, eps), inside);
        assert_eq!(cone_project(&Vector3::new(-1.0, 0.3, 0.0), 0.5, eps), Vector3::zeros());
        assert_relative_eq!(
            cone_project(&Vector3::new(1.0, 2.0, 0.0), 0.5, eps),
            Vector3::new(1.0, 0.5, 0.0),
            epsilon = 1e-15
        );
        assert_eq!(cone_project(&Vector3::new(1.0, 0.0, 0.0), 0.5, eps), Vector3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn nh_no_motion_keeps_state() {
        let s = ContactSettings::default();
        let f0 = Vector3::new(0.01, -0.02, 0.1);
        let p = Vector3::new(0.0, 0.0, -0.001);
        let out = nh_update(&st(f0), &ground_frame(), &motion(p, p), &mat(), 1e-4, &s).unwrap();
        assert_relative_eq!(out.force, f0, epsilon = 1e-16);
    }

    #[test]
    fn nh_resets_outside() {
        let s = ContactSettings::default();
        let out = nh_update(
            &st(Vector3::new(0.0, 0.0, 1.0)),
            &ground_frame(),
            &motion(Vector3::new(0.0, 0.0, -0.001), Vector3::new(0.0, 0.0, 0.0005)),
            &mat(),
            1e-4,
            &s,
        )
        .unwrap();
        assert_eq!(out.force, Vector3::zeros());
        assert_eq!(out.phi, 0.0005);
    }

    #[test]
    fn nh_pure_normal_press() {
        let s = ContactSettings::default();
        let out = nh_update(
            &st(Vector3::zeros()),
            &ground_frame(),
            &motion(Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.0, 0.0, -0.002)),
            &mat(),
            1e-4,
            &s,
        )
        .unwrap();
        // α_d = 1 on [0, -0.002]; f_n = E A d_n.
        assert_relative_eq!(out.force, Vector3::new(0.0, 0.0, 0.002), epsilon = 1e-15);
    }

    #[test]
    fn nh_entry_counts_only_inside_part() {
        let s = ContactSettings::default();
        let out = nh_update(
            &st(Vector3::zeros()),
            &ground_frame(),
            &motion(Vector3::new(0.0, 0.0, 0.001), Vector3::new(0.0, 0.0, -0.003)),
            &mat(),
            1e-4,
            &s,
        )
        .unwrap();
        // α_d = 0.75 of a 4 mm segment: 3 mm of depth.
        assert_relative_eq!(out.force.z, 1e4 * 1e-4 * 0.003, epsilon = 1e-15);
    }

    #[test]
    fn nhs_half_weight_at_surface() {
        let s = ContactSettings::default();
        let m = motion(Vector3::new(0.0, 0.0, -0.001), Vector3::new(0.001, 0.0, 0.0));
        let hard = nh_update(&st(Vector3::new(0.0, 0.0, 0.02)), &ground_frame(), &m, &mat(), 1e-4, &s).unwrap();
        let soft = nhs_update(&st(Vector3::new(0.0, 0.0, 0.02)), &ground_frame(), &m, &mat(), 1e-4, &s).unwrap();
        assert_relative_eq!(soft.force, hard.force * 0.5, epsilon = 1e-15);
    }

    #[test]
    fn nhs_matches_nh_deep_inside() {
        let s = ContactSettings::default();
        let m = mat();
        let depth = -10.0 / m.sharpness;
        let mo = motion(Vector3::new(0.0, 0.0, depth + 0.0002), Vector3::new(0.0003, 0.0, depth));
        let f0 = Vector3::new(0.001, 0.0, 0.05);
        let hard = nh_update(&st(f0), &ground_frame(), &mo, &m, 1e-4, &s).unwrap();
        let soft = nhs_update(&st(f0), &ground_frame(), &mo, &m, 1e-4, &s).unwrap();
        assert!(sigmoid(10.0) >= 0.9999);
        assert!((soft.force - hard.force).norm() <= 1e-3 * hard.force.norm());
    }

    #[test]
    fn nhs_tracks_nh_on_deep_press_trajectory() {
        // Scripted press and shear that stays deeper than 8/β throughout; at
        // every step both updates start from the hard model's state.
        let s = ContactSettings::default();
        let m = mat();
        let base = -8.5 / m.sharpness;
        let mut state = st(Vector3::new(0.0, 0.0, 0.02));
        let mut p = Vector3::new(0.0, 0.0, base);
        for k in 0..200 {
            let t = k as f64 * 0.05;
            let next = Vector3::new(1e-3 * t.sin(), 5e-4 * (2.0 * t).cos(), base - 1e-3 * (0.5 * t).sin().abs());
            let mo = motion(p, next);
            let hard = nh_update(&state, &ground_frame(), &mo, &m, 1e-4, &s).unwrap();
            let soft = nhs_update(&state, &ground_frame(), &mo, &m, 1e-4, &s).unwrap();
            assert!((soft.force - hard.force).norm() <= 1e-3 * hard.force.norm(), "step {k}");
            state = hard;
            p = next;
        }
    }

    #[test]
    fn pf_examples() {
        let m = mat();
        let eps = 1e-12;
        let f = ground_frame();
        assert_eq!(pf_force(&f, 0.001, 1e-4, &Vector3::zeros(), &m, eps), Vector3::zeros());
        let still = pf_force(&f, -0.002, 1e-4, &Vector3::zeros(), &m, eps);
        assert_relative_eq!(still, Vector3::new(0.0, 0.0, 0.002), epsilon = 1e-15);
        let sliding = pf_force(&f, -0.002, 1e-4, &Vector3::new(0.01, 0.0, 0.0), &m, eps);
        assert_relative_eq!(sliding, Vector3::new(-0.001, 0.0, 0.002), epsilon = 1e-15);
    }

    #[test]
    fn pff_examples() {
        let m = mat();
        let f = ground_frame();
        let out = pff_force(&f, -0.003, 1e-4, &m);
        assert_eq!(split_force(&f, &out).1, Vector3::zeros());
        assert_relative_eq!(out.z, 1e4 * 1e-4 * 0.003, epsilon = 1e-15);
        assert_eq!(pff_force(&f, 0.0, 1e-4, &m), Vector3::zeros());
        let s = ContactSettings::default();
        let shear = motion(Vector3::new(0.0, 0.0, -0.003), Vector3::new(0.01, 0.0, -0.003));
        let via_update = ContactModel::Pff
            .update(&st(Vector3::zeros()), &f, &shear, &m, 1e-4, &s, 0.01)
            .unwrap();
        assert_eq!(via_update.force.x, 0.0);
        assert_eq!(via_update.force.y, 0.0);
    }

    #[test]
    fn stick_is_substep_invariant() {
        let s = ContactSettings::default();
        let m = mat();
        let area = 1e-4;
        let depth = -0.004;
        let pressed = st(Vector3::new(0.0, 0.0, m.normal_modulus * area * -depth));
        let total = Vector3::new(0.002, 0.001, 0.0);
        let run = |n: usize| {
            let mut state = pressed;
            for k in 0..n {
                let a = Vector3::new(0.0, 0.0, depth) + total * (k as f64 / n as f64);
                let b = Vector3::new(0.0, 0.0, depth) + total * ((k + 1) as f64 / n as f64);
                state = nh_update(&state, &ground_frame(), &motion(a, b), &m, area, &s).unwrap();
            }
            state.force
        };
        let one = run(1);
        let hundred = run(100);
        // Shear opposes the object's motion.
        let expected = -total * m.tangential_modulus * area;
        assert!((one.xy() - expected.xy()).norm() < 1e-9);
        assert!((hundred.xy() - expected.xy()).norm() < 1e-9);
    }

    #[test]
    fn invalid_input_is_reported() {
        let s = ContactSettings::default();
        let mut mo = motion(Vector3::zeros(), Vector3::new(0.0, 0.0, -0.001));
        mo.next_phi = f64::NAN;
        assert!(nh_update(&st(Vector3::zeros()), &ground_frame(), &mo, &mat(), 1e-4, &s).is_err());
    }

    #[test]
    fn model_names_round_trip() {
        for m in ContactModel::ALL {
            assert_eq!(m.as_str().parse::<ContactModel>().unwrap(), m);
        }
        assert!("hard".parse::<ContactModel>().is_err());
    }

    proptest! {
        #[test]
        fn alpha_is_bounded(a in -1.0..1.0f64, b in -1.0..1.0f64) {
            let alpha = penetration_fraction(a, b, 1e-12);
            prop_assert!((0.0..=1.0).contains(&alpha));
            if a >= 0.0 && b >= 0.0 && a != b { prop_assert_eq!(alpha, 0.0); }
            if a <= 0.0 && b <= 0.0 { prop_assert_eq!(alpha, 1.0); }
        }

        #[test]
        fn updates_stay_in_cone(
            f in prop::array::uniform3(-1.0..1.0f64),
            a in prop::array::uniform3(-0.005..0.005f64),
            b in prop::array::uniform3(-0.005..0.005f64),
            mu in 0.0..1.5f64,
        ) {
            let s = ContactSettings::default();
            let m = mat().with_friction(mu);
            let prior = nh_update(&st(Vector3::from(f)), &ground_frame(),
                                  &motion(Vector3::from(a), Vector3::from(a)), &m, 1e-4, &s).unwrap();
            let mo = motion(Vector3::from(a), Vector3::from(b));
            for model in [ContactModel::Nh, ContactModel::Nhs, ContactModel::Pf, ContactModel::Pff] {
                let out = model.update(&prior, &ground_frame(), &mo, &m, 1e-4, &s, 0.01).unwrap();
                prop_assert!(in_cone(&out.force, mu), "{model}: {:?}", out.force);
            }
        }

        #[test]
        fn reentry_starts_from_zero(
            depth in 0.0001..0.005f64,
            out in 0.0001..0.005f64,
        ) {
            let s = ContactSettings::default();
            let m = mat();
            let inside = Vector3::new(0.0, 0.0, -depth);
            let outside = Vector3::new(0.001, 0.0, out);
            let pressed = nh_update(&st(Vector3::zeros()), &ground_frame(),
                                    &motion(Vector3::zeros(), inside), &m, 1e-4, &s).unwrap();
            let left = nh_update(&pressed, &ground_frame(), &motion(inside, outside), &m, 1e-4, &s).unwrap();
            prop_assert_eq!(left.force, Vector3::zeros());
            let back = nh_update(&left, &ground_frame(), &motion(outside, inside), &m, 1e-4, &s).unwrap();
            let fresh = nh_update(&st(Vector3::zeros()), &ground_frame(), &motion(outside, inside), &m, 1e-4, &s).unwrap();
            prop_assert_eq!(back.force, fresh.force);
        }
    }
}
