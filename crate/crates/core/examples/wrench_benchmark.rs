//! Synthetic drag-and-twist wrench streams scored by every model.

use hydrotact::cli::{generate_dataset, score_dataset, BenchmarkScene, WrenchDataset};
use hydrotact::contact::ContactModel;
use hydrotact::scenarios::{Scenario, TaskKind};

fn main() {
    let s = Scenario::preset(TaskKind::PlanarPushing);
    let bench = BenchmarkScene::from_scenario(&s);
    let ds = generate_dataset(&bench, s.object.pose, s.manipulators[0].pose, ContactModel::Nh, 20, 40, 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("wrenches.csv");
    ds.write(&path).unwrap();
    let loaded = WrenchDataset::read(&path).unwrap();
    println!("{} rows, {} skipped", loaded.rows, loaded.skipped.len());
    println!("{:<6} {:>12} {:>10}", "model", "RMSE [N]", "std [N]");
    for m in ContactModel::ALL {
        let r = score_dataset(&loaded.dataset, m).unwrap();
        println!("{:<6} {:>12.4} {:>10.4}", m.as_str(), r.force.mean, r.force.std);
    }
}
