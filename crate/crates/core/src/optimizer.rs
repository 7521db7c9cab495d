//! Cross-entropy sampling with gradient refinement, and the receding-horizon
//! driver around it.
//!
//! Control sequences are flat vectors in the [`ControlLayout`] order. Each
//! planning call samples a population, refines every member with a few
//! gradient steps, refits a diagonal Gaussian to the lowest-cost members and
//! returns the best sequence seen.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffengine::{evaluate, grad_rollout, ControlLayout, RolloutCost};
use crate::dynamics::{aggregate_wrench, rollout, Scene, SystemState};
use crate::error::{ConfigError, PlanError, StepFault};
use crate::real::{lift, relu, Real};
use crate::se3::{Pose, Twist, Wrench};

/// Per-step control box, mask and sampling prior, `6·M` entries each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSpace {
    pub bodies: usize,
    /// Coordinates the planner may move; the rest stay exactly zero.
    pub free: Vec<bool>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Prior standard deviation of each coordinate.
    pub prior_std: Vec<f64>,
}

impl ControlSpace {
    pub fn per_step(&self) -> usize {
        6 * self.bodies
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.per_step();
        if [self.free.len(), self.lower.len(), self.upper.len(), self.prior_std.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(ConfigError::invalid("controls", format!("expected {n} entries per field")));
        }
        if !self.free.iter().any(|&f| f) {
            return Err(ConfigError::invalid("controls.free", "no free control coordinate"));
        }
        for c in 0..n {
            if !(self.lower[c] <= 0.0 && 0.0 <= self.upper[c]) {
                return Err(ConfigError::invalid("controls.bounds", "bounds must bracket zero"));
            }
            if self.free[c] && !(self.prior_std[c] > 0.0) {
                return Err(ConfigError::invalid("controls.prior_std", "free coordinates need a positive std"));
            }
        }
        Ok(())
    }

    /// Masks and clamps a flat sequence in place.
    pub fn project(&self, u: &mut [f64]) {
        let n = self.per_step();
        for (i, v) in u.iter_mut().enumerate() {
            let c = i % n;
            *v = if self.free[c] { v.clamp(self.lower[c], self.upper[c]) } else { 0.0 };
        }
    }

    /// Flat indices of free coordinates for `steps` steps.
    pub fn free_indices(&self, steps: usize) -> Vec<usize> {
        let n = self.per_step();
        (0..steps * n).filter(|i| self.free[i % n]).collect()
    }
}

/// Diagonal Gaussian over a flat control sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlDistribution {
    pub per_step: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl ControlDistribution {
    pub fn prior(space: &ControlSpace, steps: usize) -> Self {
        let n = space.per_step();
        let var = (0..steps * n)
            .map(|i| if space.free[i % n] { space.prior_std[i % n].powi(2) } else { 0.0 })
            .collect();
        Self {
            per_step: n,
            mean: vec![0.0; steps * n],
            var,
        }
    }

    pub fn steps(&self) -> usize {
        self.mean.len() / self.per_step.max(1)
    }

    pub fn sample(&self, space: &ControlSpace, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut u: Vec<f64> = self
            .mean
            .iter()
            .zip(&self.var)
            .map(|(&m, &v)| {
                if v > 0.0 {
                    let z: f64 = StandardNormal.sample(rng);
                    m + v.sqrt() * z
                } else {
                    m
                }
            })
            .collect();
        space.project(&mut u);
        u
    }

    /// Drops the first step and resizes to `steps`, padding with the prior.
    pub fn shift(&mut self, space: &ControlSpace, steps: usize) {
        let n = self.per_step;
        let prior = ControlDistribution::prior(space, 1);
        let drop = n.min(self.mean.len());
        self.mean.drain(..drop);
        self.var.drain(..drop);
        while self.mean.len() < steps * n {
            self.mean.extend_from_slice(&prior.mean);
            self.var.extend_from_slice(&prior.var);
        }
        self.mean.truncate(steps * n);
        self.var.truncate(steps * n);
    }

    /// Sample mean and diagonal sample variance of `elites`, with the
    /// variance of free coordinates floored at `sigma_min²`.
    pub fn refit(&mut self, elites: &[&[f64]], space: &ControlSpace, sigma_min: f64) {
        let m = elites.len() as f64;
        let n = self.per_step;
        for i in 0..self.mean.len() {
            let mean = elites.iter().map(|e| e[i]).sum::<f64>() / m;
            self.mean[i] = mean;
            self.var[i] = if space.free[i % n] {
                let var = elites.iter().map(|e| (e[i] - mean).powi(2)).sum::<f64>() / m;
                var.max(sigma_min * sigma_min)
            } else {
                0.0
            };
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Population size `B`.
    pub samples: usize,
    /// Elite count `M`.
    pub elites: usize,
    /// Gradient iterations `G` per member.
    pub grad_iters: usize,
    /// Gradient step `η`, in units of the prior std along the largest
    /// preconditioned gradient coordinate.
    pub step_size: f64,
    /// Planning horizon `K`.
    pub horizon: usize,
    /// Episode length `H`.
    pub episode: usize,
    pub seed: u64,
    /// Sample / refine / refit rounds per planning call.
    pub cem_iters: usize,
    pub sigma_min: f64,
    /// Halvings of `η` tried before a gradient step is rejected.
    pub backtracking: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            samples: 16,
            elites: 4,
            grad_iters: 10,
            step_size: 1.0,
            horizon: 8,
            episode: 8,
            seed: 0,
            cem_iters: 1,
            sigma_min: 1e-4,
            backtracking: 5,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(1 <= self.elites && self.elites <= self.samples) {
            return Err(ConfigError::invalid("optimizer.elites", "need 1 <= elites <= samples"));
        }
        if self.horizon == 0 {
            return Err(ConfigError::invalid("optimizer.horizon", "must be at least 1"));
        }
        if self.cem_iters == 0 {
            return Err(ConfigError::invalid("optimizer.cem_iters", "must be at least 1"));
        }
        if !(self.step_size > 0.0) || !(self.sigma_min > 0.0) {
            return Err(ConfigError::invalid("optimizer.step_size", "step size and sigma_min must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    /// Stage weight on squared object translation error [1/m²].
    pub translation: f64,
    /// Stage weight on `1 − ⟨q, q*⟩²`.
    pub rotation: f64,
    pub terminal_translation: f64,
    pub terminal_rotation: f64,
    /// Weights on squared linear / angular control coordinates.
    pub effort_linear: f64,
    pub effort_angular: f64,
    /// Weight of the squared violation of the object translation box.
    pub state_penalty: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            translation: 0.0,
            rotation: 0.0,
            terminal_translation: 1e4,
            terminal_rotation: 0.0,
            effort_linear: 0.0,
            effort_angular: 0.0,
            state_penalty: 1e6,
        }
    }
}

/// Box on the object translation, enforced as a penalty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateBounds {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
}

/// Quadratic pose-tracking cost towards a goal pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub goal: Pose,
    pub weights: CostWeights,
    pub state_bounds: Option<StateBounds>,
}

impl CostSpec {
    pub fn new(goal: Pose, weights: CostWeights) -> Self {
        Self {
            goal,
            weights,
            state_bounds: None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let w = &self.weights;
        let all = [
            w.translation,
            w.rotation,
            w.terminal_translation,
            w.terminal_rotation,
            w.effort_linear,
            w.effort_angular,
            w.state_penalty,
        ];
        if all.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
            return Err(ConfigError::invalid("cost.weights", "weights must be finite and non-negative"));
        }
        if let Some(b) = &self.state_bounds {
            if (0..3).any(|i| b.lower[i] > b.upper[i]) {
                return Err(ConfigError::invalid("cost.state_bounds", "lower bound above upper bound"));
            }
        }
        Ok(())
    }

    fn pose_terms<T: Real>(&self, q: &Pose<T>) -> (T, T) {
        let dt = q.translation - self.goal.translation.map(lift::<T>);
        let a = q.rotation.quaternion();
        let b = self.goal.rotation.quaternion();
        let dot = a.w * b.w + a.i * b.i + a.j * b.j + a.k * b.k;
        (dt.norm_squared(), T::one() - dot * dot)
    }

    fn state_penalty<T: Real>(&self, q: &Pose<T>) -> T {
        let Some(b) = &self.state_bounds else {
            return T::zero();
        };
        let mut total = T::zero();
        for i in 0..3 {
            let x = q.translation[i];
            let hi = relu(x - b.upper[i]);
            let lo = relu(-(x - b.lower[i]));
            total += hi * hi + lo * lo;
        }
        total * self.weights.state_penalty
    }
}

impl RolloutCost for CostSpec {
    fn stage<T: Real>(&self, _k: usize, x: &SystemState<T>, u: &[Twist<T>]) -> T {
        let w = &self.weights;
        let (t, r) = self.pose_terms(&x.object);
        let mut total = t * w.translation + r * w.rotation + self.state_penalty(&x.object);
        for tw in u {
            total += tw.linear.norm_squared() * w.effort_linear + tw.angular.norm_squared() * w.effort_angular;
        }
        total
    }

    fn terminal<T: Real>(&self, x: &SystemState<T>) -> T {
        let (t, r) = self.pose_terms(&x.object);
        t * self.weights.terminal_translation + r * self.weights.terminal_rotation + self.state_penalty(&x.object)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanDiagnostics {
    /// Best cost after each sample / refine / refit round.
    pub round_best: Vec<f64>,
    /// Elite costs of the last round, ascending.
    pub elite_costs: Vec<f64>,
    pub faulted: usize,
    pub accepted_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanResult {
    pub best: Vec<f64>,
    pub best_cost: f64,
    pub diagnostics: PlanDiagnostics,
}

/// Distribution and population carried between planning calls.
#[derive(Clone, Debug)]
pub struct PlannerState {
    pub dist: ControlDistribution,
    /// Refined sequences kept for the next call (elites first).
    pub population: Vec<Vec<f64>>,
    /// Lowest-cost sequence of the last call.
    pub incumbent: Option<Vec<f64>>,
    pub rng: ChaCha8Rng,
}

impl PlannerState {
    pub fn new(space: &ControlSpace, steps: usize, seed: u64) -> Self {
        Self {
            dist: ControlDistribution::prior(space, steps),
            population: Vec::new(),
            incumbent: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Moves to the next time step with a window of `steps` steps.
    pub fn shift(&mut self, space: &ControlSpace, steps: usize) {
        self.dist.shift(space, steps);
        let n = space.per_step();
        let prior = ControlDistribution::prior(space, 1);
        let shift_seq = |u: &mut Vec<f64>| {
            u.drain(..n.min(u.len()));
            while u.len() < steps * n {
                u.extend_from_slice(&prior.mean);
            }
            u.truncate(steps * n);
        };
        self.population.iter_mut().for_each(shift_seq);
        if let Some(u) = self.incumbent.as_mut() {
            shift_seq(u);
        }
    }
}

/// Gradient refinement of one sequence with backtracking; returns the
/// refined sequence, its cost and the number of accepted steps.
#[allow(clippy::too_many_arguments)]
fn refine<C: RolloutCost>(
    scene: &Scene,
    space: &ControlSpace,
    cfg: &OptimizerConfig,
    cost: &C,
    x: &SystemState,
    layout: &ControlLayout,
    coords: &[usize],
    mut u: Vec<f64>,
) -> (Vec<f64>, Option<f64>, usize) {
    let n = space.per_step();
    let use_gradient = cfg.grad_iters > 0 && scene.model.is_differentiable() && !coords.is_empty();
    let mut j = match evaluate(scene, x, &u, layout, cost) {
        Ok(j) if j.is_finite() => j,
        _ => return (u, None, 0),
    };
    if !use_gradient {
        return (u, Some(j), 0);
    }
    let mut accepted = 0;
    for _ in 0..cfg.grad_iters {
        let Ok((_, g)) = grad_rollout(scene, x, &u, layout, cost, Some(coords)) else {
            break;
        };
        // Precondition by the prior std and normalize to the largest entry.
        let scaled: Vec<f64> = coords.iter().map(|&i| g.values[i] * space.prior_std[i % n]).collect();
        let peak = scaled.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if !(peak > 0.0 && peak.is_finite()) {
            break;
        }
        let mut eta = cfg.step_size;
        let mut improved = false;
        for _ in 0..=cfg.backtracking {
            let mut cand = u.clone();
            for (&i, s) in coords.iter().zip(&scaled) {
                cand[i] -= eta * space.prior_std[i % n] * s / peak;
            }
            space.project(&mut cand);
            if let Ok(jc) = evaluate(scene, x, &cand, layout, cost) {
                if jc < j {
                    u = cand;
                    j = jc;
                    improved = true;
                    break;
                }
            }
            eta *= 0.5;
        }
        if !improved {
            break;
        }
        accepted += 1;
    }
    (u, Some(j), accepted)
}

/// One planning call from state `x` over `state.dist.steps()` steps.
pub fn plan<C: RolloutCost>(
    scene: &Scene,
    space: &ControlSpace,
    cfg: &OptimizerConfig,
    cost: &C,
    x: &SystemState,
    state: &mut PlannerState,
) -> Result<PlanResult, PlanError> {
    let steps = state.dist.steps();
    let layout = ControlLayout::new(steps, space.bodies);
    let coords = space.free_indices(steps);
    let mut diagnostics = PlanDiagnostics::default();
    let mut best: Option<(Vec<f64>, f64)> = None;

    // Carried members first, then the incumbent, then fresh samples.
    let mut population: Vec<Vec<f64>> = std::mem::take(&mut state.population);
    population.truncate(cfg.samples);
    if let Some(inc) = state.incumbent.take().filter(|inc| !population.contains(inc)) {
        if population.len() == cfg.samples {
            population.pop();
        }
        population.insert(0, inc);
    }
    while population.len() < cfg.samples {
        population.push(state.dist.sample(space, &mut state.rng));
    }

    for _ in 0..cfg.cem_iters {
        let refined: Vec<(Vec<f64>, Option<f64>, usize)> = population
            .into_par_iter()
            .map(|u| refine(scene, space, cfg, cost, x, &layout, &coords, u))
            .collect();
        let mut scored: Vec<(Vec<f64>, f64)> = Vec::with_capacity(refined.len());
        for (u, j, acc) in refined {
            diagnostics.accepted_steps += acc;
            match j {
                Some(j) => scored.push((u, j)),
                None => diagnostics.faulted += 1,
            }
        }
        if scored.is_empty() {
            return Err(PlanError::AllFaulted(cfg.samples));
        }
        // Stable sort keeps the result independent of float ties.
        scored.sort_by(|a, b| a.1.total_cmp(&b.1));
        if best.as_ref().is_none_or(|b| scored[0].1 < b.1) {
            best = Some(scored[0].clone());
        }
        diagnostics.round_best.push(best.as_ref().map(|b| b.1).unwrap_or(f64::INFINITY));
        let m = cfg.elites.min(scored.len());
        let elites: Vec<&[f64]> = scored[..m].iter().map(|(u, _)| u.as_slice()).collect();
        state.dist.refit(&elites, space, cfg.sigma_min);
        diagnostics.elite_costs = scored[..m].iter().map(|s| s.1).collect();

        // Keep the elites, resample the rest.
        population = scored.into_iter().take(m).map(|s| s.0).collect();
        if let Some((b, _)) = &best {
            if !population.contains(b) {
                population.insert(0, b.clone());
                population.truncate(m.max(1));
            }
        }
        while population.len() < cfg.samples {
            population.push(state.dist.sample(space, &mut state.rng));
        }
    }
    let (best, best_cost) = best.expect("at least one scored round");
    state.population = population;
    state.incumbent = Some(best.clone());
    Ok(PlanResult {
        best,
        best_cost,
        diagnostics,
    })
}

/// Real or simulated system the controller acts on.
pub trait Plant {
    /// State estimate handed to the planner.
    fn measure(&mut self) -> SystemState;
    /// Ground-truth state.
    fn truth(&self) -> &SystemState;
    fn apply(&mut self, controls: &[Twist]) -> Result<(), StepFault>;
    /// Scene used for logging wrenches.
    fn scene(&self) -> &Scene;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStep {
    pub step: usize,
    /// Time at the end of the step.
    pub time: f64,
    /// Estimate the plan was computed from.
    pub measured_object: Pose,
    /// True poses after applying `control`.
    pub object: Pose,
    pub hydro: Vec<Pose>,
    /// Applied controls, `6·M` entries.
    pub control: Vec<f64>,
    /// Planner's best cost at this step; open-loop steps carry the plan's cost.
    pub cost: Option<f64>,
    /// Net contact wrench on each hydro body about its origin.
    pub wrenches: Vec<Wrench>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub steps: Vec<EpisodeStep>,
    /// True object pose after the last applied control.
    pub final_object: Option<Pose>,
    /// Plan computed at the first step.
    pub first_plan: Option<Vec<f64>>,
    /// Object pose the planner's model predicts at the end of the first plan.
    pub predicted_final: Option<Pose>,
    pub fault: Option<String>,
}

fn wrenches(plant: &dyn Plant) -> Vec<Wrench> {
    let scene = plant.scene();
    let x = plant.truth();
    let split = aggregate_wrench(scene, x);
    (0..x.hydro.len())
        .map(|j| split.hydro_about(j, &x.hydro[j].translation))
        .collect()
}

fn record(plant: &dyn Plant, h: usize, measured: &SystemState, control: &[f64], cost: Option<f64>) -> EpisodeStep {
    let x = plant.truth();
    EpisodeStep {
        step: h,
        time: (h + 1) as f64 * plant.scene().params.step,
        measured_object: measured.object,
        object: x.object,
        hydro: x.hydro.clone(),
        control: control.to_vec(),
        cost,
        wrenches: wrenches(plant),
    }
}

/// Receding-horizon control for `cfg.episode` steps. The window at step `h`
/// covers `min(K, H − h)` steps, so with `K ≥ H` the terminal time is fixed.
pub fn mpc_run<C: RolloutCost>(
    scene: &Scene,
    space: &ControlSpace,
    cfg: &OptimizerConfig,
    cost: &C,
    plant: &mut dyn Plant,
) -> EpisodeLog {
    let n = space.per_step();
    let window = |h: usize| cfg.horizon.min(cfg.episode - h);
    let mut log = EpisodeLog::default();
    if cfg.episode == 0 {
        log.final_object = Some(plant.truth().object);
        return log;
    }
    let mut state = PlannerState::new(space, window(0), cfg.seed);
    for h in 0..cfg.episode {
        let measured = plant.measure();
        if h > 0 {
            state.shift(space, window(h));
        }
        let result = match plan(scene, space, cfg, cost, &measured, &mut state) {
            Ok(r) => r,
            Err(e) => {
                log.fault = Some(format!("step {h}: {e}"));
                break;
            }
        };
        if h == 0 {
            let layout = ControlLayout::new(window(0), space.bodies);
            log.predicted_final = rollout(scene, &measured, &layout.unflatten(&result.best))
                .ok()
                .and_then(|t| t.last().map(|x| x.object));
            log.first_plan = Some(result.best.clone());
        }
        let first = &result.best[..n];
        let twists = ControlLayout::new(1, space.bodies).step_twists(first, 0);
        if let Err(e) = plant.apply(&twists) {
            log.fault = Some(PlanError::Plant(StepFault { step: h, kind: e.kind }).to_string());
            break;
        }
        log.steps.push(record(plant, h, &measured, first, Some(result.best_cost)));
    }
    log.final_object = Some(plant.truth().object);
    log
}

/// Executes a fixed flat control sequence without re-planning.
pub fn open_loop_run(plant: &mut dyn Plant, controls: &[f64], bodies: usize, cost: Option<f64>) -> EpisodeLog {
    let layout = ControlLayout::new(controls.len() / (6 * bodies).max(1), bodies);
    let mut log = EpisodeLog {
        first_plan: Some(controls.to_vec()),
        ..EpisodeLog::default()
    };
    for h in 0..layout.steps {
        let measured = plant.measure();
        let twists = layout.step_twists(controls, h);
        if let Err(e) = plant.apply(&twists) {
            log.fault = Some(PlanError::Plant(StepFault { step: h, kind: e.kind }).to_string());
            break;
        }
        log.steps.push(record(plant, h, &measured, &controls[h * 6 * bodies..(h + 1) * 6 * bodies], cost));
    }
    log.final_object = Some(plant.truth().object);
    log
}

/// Plant that simply steps a scene with no measurement noise.
#[derive(Clone, Debug)]
pub struct ExactPlant {
    pub scene: Scene,
    pub state: SystemState,
}

impl Plant for ExactPlant {
    fn measure(&mut self) -> SystemState {
        self.state.clone()
    }

    fn truth(&self) -> &SystemState {
        &self.state
    }

    fn apply(&mut self, controls: &[Twist]) -> Result<(), StepFault> {
        self.state = crate::dynamics::step(&self.scene, &self.state, controls).map_err(|kind| StepFault { step: 0, kind })?;
        Ok(())
    }

    fn scene(&self) -> &Scene {
        &self.scene
    }
}
