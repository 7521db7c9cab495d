//! Receding-horizon pushing against a plant with softer, slipperier
//! contacts than the planner assumes.

use hydrotact::contact::ContactModel;
use hydrotact::optimizer::{mpc_run, open_loop_run, Plant};
use hydrotact::scenarios::{build_plant, pose_error, sample_goals, PlantSpec, Scenario, TaskKind};

fn main() {
    let s = Scenario::preset(TaskKind::PlanarPushing);
    let planner = s.scene(ContactModel::Nhs).unwrap();
    let spec = PlantSpec::default();
    let mut plant = build_plant(&s, ContactModel::Nh, spec, 1).unwrap();
    let goal = sample_goals(&s, 1, 2)[0].rebased(&s.object.pose, &plant.truth().object);
    println!("goal offset {:.2} mm", pose_error(&plant.truth().object, &goal).0);

    let log = mpc_run(&planner, &s.control_space(), &s.optimizer, &s.cost(goal.pose), &mut plant);
    for e in &log.steps {
        let (t, r) = pose_error(&e.object, &goal);
        println!("t = {:.1} s: {t:.2} mm, {r:.4} rad, cost {:.3}", e.time, e.cost.unwrap_or(f64::NAN));
    }
    let mut replay = build_plant(&s, ContactModel::Nh, spec, 1).unwrap();
    let ol = open_loop_run(&mut replay, log.first_plan.as_deref().unwrap_or(&[]), s.num_bodies(), None);
    println!(
        "closed loop {:.2} mm, open loop {:.2} mm",
        s.score(&log.final_object.unwrap(), &goal),
        s.score(&ol.final_object.unwrap(), &goal)
    );
}
