//! Dual-number gradient of a pushing rollout against central differences.

use hydrotact::contact::ContactModel;
use hydrotact::diffengine::{fd_check, ControlLayout};
use hydrotact::optimizer::ControlDistribution;
use hydrotact::scenarios::{sample_goals, Scenario, TaskKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let s = Scenario::preset(TaskKind::PlanarPushing);
    let steps = 6;
    for model in [ContactModel::Nhs, ContactModel::Pf] {
        let scene = s.scene(model).unwrap();
        let x0 = s.settle(&scene, |_| {}).unwrap();
        let space = s.control_space();
        let mut u = ControlDistribution::prior(&space, steps).sample(&space, &mut ChaCha8Rng::seed_from_u64(4));
        space.project(&mut u);
        let goal = sample_goals(&s, 1, 4)[0].rebased(&s.object.pose, &x0.object);
        let coords = space.free_indices(steps);
        let layout = ControlLayout::new(steps, s.num_bodies());
        let r = fd_check(&scene, &x0, &u, &layout, &s.cost(goal.pose), 1e-6, Some(&coords)).unwrap();
        println!("{model}: cost {:.6}, max rel error {:.2e}, kinks {}", r.cost, r.max_rel_error, r.kinks());
        for e in r.entries.iter().take(4) {
            println!("  u[{:>2}] analytic {:+.6e} numeric {:+.6e}", e.index, e.analytic, e.numeric);
        }
    }
}
