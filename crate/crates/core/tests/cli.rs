use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hydrotact::cli::*;
use hydrotact::contact::{ContactModel, ContactSettings, MaterialParams};
use hydrotact::dynamics::HydroBody;
use hydrotact::geometry::{sample_surface, NormalSource, ObjectShape, SdfShape};
use hydrotact::scenarios::TaskKind;
use hydrotact::se3::{Pose, Wrench};
use nalgebra::Vector3;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hydrotact"));
    c.env_remove(OUT_ENV);
    c
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn simulate_zero_steps_writes_one_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scenario = \"planar_pushing\"\n[simulate]\nsteps = 0\n");
    let out = dir.path().join("out");
    let o = bin().args(["simulate", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let log = TrajectoryLog::read(&out.join("trajectory.jsonl")).unwrap();
    assert_eq!(log.records.len(), 1);
    assert_eq!(log.header.version, LOG_VERSION);
    assert!(out.join("config.resolved.toml").exists());
}

#[test]
fn simulate_is_byte_identical_and_output_root_comes_from_env() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "scenario = \"rolling\"\nseed = 4\n[simulate]\nsteps = 5\ncontrols = [[0.002, 0, 0, 0, 0, 0]]\n",
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let o = bin().args(["simulate", "--config"]).arg(&cfg).env(OUT_ENV, d).output().unwrap();
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let read = |d: &Path| std::fs::read(d.join("trajectory.jsonl")).unwrap();
    assert_eq!(read(&a), read(&b));
    let log = TrajectoryLog::read(&a.join("trajectory.jsonl")).unwrap();
    assert_eq!(log.records.len(), 6);
    for (k, r) in log.records.iter().enumerate() {
        assert_eq!(r.step, k);
    }
}

#[test]
fn seed_flag_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scenario = \"planar_pushing\"\n[simulate]\nsteps = 1\n");
    let out = dir.path().join("out");
    let o = bin()
        .args(["simulate", "--seed", "77", "--model", "pf", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let echo = RunConfig::from_toml(&std::fs::read_to_string(out.join("config.resolved.toml")).unwrap()).unwrap();
    assert_eq!(echo.seed, 77);
    assert_eq!(echo.models.plant, ContactModel::Pf);
    assert!(echo.params.is_some());
}

#[test]
fn config_errors_exit_one_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 1\n");
    let o = bin().args(["simulate", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("scenario"));

    let cfg = write_config(dir.path(), "scenario = \"planar_pushing\"\n[params.dynamics]\nstepsize = 0.1\n");
    let o = bin().args(["simulate", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("stepsize"));

    let cfg = write_config(dir.path(), "scenario = \"juggling\"\n");
    assert_eq!(code(&bin().args(["simulate", "--config"]).arg(&cfg).output().unwrap()), 1);

    assert_eq!(code(&bin().arg("simulate").output().unwrap()), 1);
}

#[test]
fn divergence_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "scenario = \"planar_pushing\"\n[simulate]\nsteps = 8\nsettle = false\ncontrols = [[0, 0, -0.004, 0, 0, 0]]\n[params.dynamics]\nmax_pose_change = 1e-5\n",
    );
    let out = dir.path().join("out");
    let o = bin().args(["simulate", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let log = TrajectoryLog::read(&out.join("trajectory.jsonl")).unwrap();
    assert!(log.footer.unwrap().fault.is_some());
}

#[test]
fn gradcheck_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scenario = \"planar_pushing\"\n[gradcheck]\nsteps = 3\n");
    let out = dir.path().join("out");
    let run = |extra: &[&str]| {
        bin().arg("gradcheck").arg("--config").arg(&cfg).arg("--out").arg(&out).args(extra).output().unwrap()
    };
    assert_eq!(code(&run(&[])), 0);
    let nh = run(&["--model", "nh"]);
    assert_eq!(code(&nh), 1);
    assert!(String::from_utf8_lossy(&nh.stderr).contains("not differentiable"));
    let strict = run(&["--threshold", "1e-30"]);
    assert_eq!(code(&strict), 3);
    assert!(String::from_utf8_lossy(&strict.stderr).contains("offending"));
}

#[test]
fn gradcheck_zero_steps_is_empty_pass() {
    let mut cfg = RunConfig::new(TaskKind::PlanarRotation);
    cfg.gradcheck.steps = 0;
    let dir = tempfile::tempdir().unwrap();
    let r = cmd_gradcheck(&resolve(cfg).unwrap(), dir.path()).unwrap();
    assert!(r.passed);
    assert!(r.report.entries.is_empty());
}

#[test]
fn log_round_trip() {
    let mut cfg = RunConfig::new(TaskKind::InhandRotation);
    cfg.simulate.steps = 3;
    cfg.simulate.controls = vec![[0.0, 0.0, 1e-3, 0.0, 0.0, 0.0], [0.0; 6]];
    let dir = tempfile::tempdir().unwrap();
    let r = cmd_simulate(&resolve(cfg).unwrap(), dir.path()).unwrap();
    let log = TrajectoryLog::read(&r.log).unwrap();
    let copy = dir.path().join("copy.jsonl");
    log.write(&copy).unwrap();
    assert_eq!(TrajectoryLog::read(&copy).unwrap(), log);
    assert_eq!(std::fs::read(&copy).unwrap(), std::fs::read(&r.log).unwrap());
    assert_eq!(log.records.last().unwrap().object, r.final_object);
}

#[test]
fn optimize_at_the_start_pose_and_summary_arithmetic() {
    let text = "scenario = \"planar_pushing\"\n\
        [optimize]\ngoals = 2\n\
        [plant]\nfriction_scale = 1.0\nstiffness_scale = 1.0\ntranslation_noise = 0.0\nrotation_noise = 0.0\ntactile = false\n\
        [params.goals]\nradius = [0.0, 0.0]\nangle = [0.0, 0.0]\n";
    let r = resolve(RunConfig::from_toml(text).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let s = cmd_optimize(&r, dir.path()).unwrap();
    let p = &s.planners[0];
    assert!(p.start.mean < 1e-9);
    assert!(p.closed_loop.mean < 0.5, "{}", s.table());
    let mean = s.goals.iter().map(|g| g.closed_loop_error_mm).sum::<f64>() / s.goals.len() as f64;
    assert!((mean - p.closed_loop.mean).abs() < 1e-12);

    let logs: Vec<PathBuf> = ["cl", "ol"].iter().map(|t| dir.path().join(format!("logs/{t}_nhs_s0_g00.jsonl"))).collect();
    let plots = dir.path().join("plots");
    let files = cmd_export_plots(&logs, &plots).unwrap();
    assert_eq!(files.len(), 2);
    let mut rdr = csv::Reader::from_path(&files[0]).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), PLOT_COLUMNS.to_vec());
    assert_eq!(rdr.records().count(), r.scenario.optimizer.episode);

    let sim = dir.path().join("sim");
    let mut sc = r.config.clone();
    sc.simulate.steps = 1;
    cmd_simulate(&resolve(sc).unwrap(), &sim).unwrap();
    let mixed = [logs[0].clone(), sim.join("trajectory.jsonl")];
    assert_eq!(cmd_export_plots(&mixed, &plots).unwrap_err().exit_code(), 1);
}

#[test]
fn pff_pushing_flags_no_motion() {
    let mut cfg = RunConfig::new(TaskKind::PlanarPushing);
    cfg.optimize.goals = 2;
    cfg.optimize.planners = Some(vec![ContactModel::Pff]);
    let dir = tempfile::tempdir().unwrap();
    let s = cmd_optimize(&resolve(cfg).unwrap(), dir.path()).unwrap();
    assert!(s.planners[0].no_meaningful_motion, "{}", s.table());
    assert!(s.table().contains("no meaningful motion"));
}

#[test]
fn optimize_threshold_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scenario = \"planar_rotation\"\n[optimize]\ngoals = 1\n");
    let o = bin()
        .args(["optimize", "--threshold", "0", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 3);
    assert!(dir.path().join("o/summary.json").exists());
}

#[test]
fn export_plots_with_no_logs_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("plots");
    let o = bin().arg("export-plots").arg("--out").arg(&out).output().unwrap();
    assert_eq!(code(&o), 0);
    assert!(!out.exists());
}

fn plate_scene() -> BenchmarkScene {
    BenchmarkScene {
        object: ObjectShape::Box {
            half_extents: [0.03, 0.03, 0.02],
        },
        points: 300,
        sample_seed: 0,
        body: HydroBody {
            name: "plate".into(),
            shape: SdfShape::HalfSpace {
                normal: [0.0, 0.0, -1.0],
                offset: 0.0,
            },
            material: MaterialParams {
                normal_modulus: 2e5,
                tangential_modulus: 1e5,
                friction: 0.5,
                sharpness: 3e3,
            },
            normal_source: Some(NormalSource::HydroGradient),
        },
        step: 0.1,
        contact: ContactSettings::default(),
    }
}

#[test]
fn constant_pose_rmse_matches_hand_evaluation() {
    let scene = plate_scene();
    let depth = 1.5e-3;
    let h = 0.02 - depth;
    let rows = 10;
    let measured = Vector3::new(0.3, -0.2, 5.0);
    let samples = (0..rows)
        .map(|k| WrenchSample {
            trajectory: 0,
            timestamp: k as f64 * 0.1,
            hydro: Pose::from_translation(Vector3::new(0.0, 0.0, h)),
            object: Pose::identity(),
            wrench: Wrench::new(measured, Vector3::zeros()),
        })
        .collect();
    let ds = WrenchDataset {
        scene: scene.clone(),
        samples,
    };
    // Static pressure prediction: E A (z − h) upward on the plate from every
    // sample above its face.
    let points = sample_surface(&scene.object, scene.points, 0).unwrap();
    let e = scene.body.material.normal_modulus;
    let lift: f64 = points.iter().filter(|p| p.position.z > h).map(|p| e * p.area * (p.position.z - h)).sum();
    let stat = Vector3::new(0.0, 0.0, lift);
    let n = rows as f64;
    let memoryless = (((measured.norm_squared()) + (n - 1.0) * (measured - stat).norm_squared()) / n).sqrt();
    for m in ContactModel::ALL {
        let r = score_dataset(&ds, m).unwrap();
        // Rate-law models start unloaded and see no motion, so they predict zero.
        let expected = if matches!(m, ContactModel::Nh | ContactModel::Nhs) { measured.norm() } else { memoryless };
        assert!((r.force.mean - expected).abs() < 1e-9 * expected, "{m}: {} vs {expected}", r.force.mean);
    }
}

#[test]
fn malformed_rows_are_counted_and_bounded() {
    let scene = plate_scene();
    let start = Pose::from_translation(Vector3::new(0.0, 0.0, 0.05));
    let ds = generate_dataset(&scene, Pose::identity(), start, ContactModel::Nh, 4, 40, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    ds.write(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[5] = "0,not-a-number".into();
    let one_bad = dir.path().join("one.csv");
    std::fs::write(&one_bad, lines.join("\n")).unwrap();
    let loaded = WrenchDataset::read(&one_bad).unwrap();
    assert_eq!(loaded.skipped, vec![4]);
    assert_eq!(loaded.rows, ds.samples.len());

    let mut cfg = RunConfig::new(TaskKind::PlanarPushing);
    cfg.benchmark.models = vec![ContactModel::Nh];
    let r = resolve(cfg).unwrap();
    let s = cmd_benchmark(&r, Some(&one_bad), &dir.path().join("o1")).unwrap();
    assert_eq!(s.skipped, 1);

    for l in lines.iter_mut().skip(10).take(3) {
        *l = "x".into();
    }
    let many_bad = dir.path().join("many.csv");
    std::fs::write(&many_bad, lines.join("\n")).unwrap();
    let e = cmd_benchmark(&r, Some(&many_bad), &dir.path().join("o2")).unwrap_err();
    assert_eq!(e.exit_code(), 1);
}

#[test]
fn benchmark_cli_generates_and_scores() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scenario = \"planar_pushing\"\n[benchmark]\ntrajectories = 2\nsteps = 20\n");
    let out = dir.path().join("o");
    let o = bin().args(["benchmark", "--model", "nh,pff", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("nh") && stdout.contains("pff"));
    let strict = bin()
        .args(["benchmark", "--model", "pff", "--threshold", "1e-6", "--dataset"])
        .arg(out.join("dataset.csv"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o2"))
        .output()
        .unwrap();
    assert_eq!(code(&strict), 3);
}
