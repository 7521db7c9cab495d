//! Two bubbles rotating a grasped cube about the horizontal axis by
//! sliding in opposite directions.

use hydrotact::contact::ContactModel;
use hydrotact::optimizer::{mpc_run, Plant};
use hydrotact::scenarios::{build_plant, pose_error, sample_goals, PlantSpec, Scenario, TaskKind};

fn main() {
    let s = Scenario::preset(TaskKind::InhandRotation);
    let planner = s.scene(ContactModel::Nhs).unwrap();
    let mut plant = build_plant(&s, ContactModel::Nh, PlantSpec::default(), 3).unwrap();
    let goal = sample_goals(&s, 1, 7)[0].rebased(&s.object.pose, &plant.truth().object);
    println!("target rotation {:.3} rad", pose_error(&plant.truth().object, &goal).1);
    let log = mpc_run(&planner, &s.control_space(), &s.optimizer, &s.cost(goal.pose), &mut plant);
    for e in &log.steps {
        let left = e.control[2] * 1e3;
        let right = e.control[8] * 1e3;
        let net: f64 = e.wrenches.iter().map(|w| w.force.norm()).sum();
        println!(
            "step {}: left {left:+.2} mm, right {right:+.2} mm, error {:.4} rad, grip {net:.2} N",
            e.step,
            pose_error(&e.object, &goal).1
        );
    }
    if let Some(f) = log.fault {
        println!("stopped: {f}");
    }
}
