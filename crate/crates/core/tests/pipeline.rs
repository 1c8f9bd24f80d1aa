use std::fs;
use std::path::{Path, PathBuf};

use simgrasp::advsup::{read_loss_log, LOSS_LOG_FILE};
use simgrasp::detector::read_detections;
use simgrasp::eval::MetricsReport;
use simgrasp::pipeline::*;
use simgrasp::scenegen::Manifest;
use simgrasp::Error;

fn tiny(variant: Variant) -> PipelineConfig {
    let mut c = PipelineConfig::smoke();
    c.variant = variant;
    c.seed = 11;
    c.data.train = 8;
    c.data.val = 4;
    c.data.test = 4;
    c.advsup.batch_size = 4;
    c.advsup.max_steps = Some(4);
    c.training.checkpoint_every = 2;
    c.synthesis.batch_size = 8;
    c.detector.epochs = 1;
    c.eval.judge_steps = 2;
    c.grasp.protocol.trials_per_tier = 3;
    c
}

fn pipeline(config: PipelineConfig, dir: &Path) -> Pipeline {
    Pipeline::new(config, dir.to_path_buf(), false).unwrap()
}

fn read(path: PathBuf) -> Vec<u8> {
    fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn ids(dir: &Path) -> Vec<String> {
    Manifest::load(dir).unwrap().entries.into_iter().map(|e| e.id).collect()
}

#[test]
fn splits_are_disjoint_and_eval_splits_are_real_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(Variant::Adversarial);
    let p = pipeline(cfg.clone(), tmp.path());
    p.run_stage(Stage::GenScenes).unwrap();

    let seeds: SplitSeeds = serde_json::from_slice(&read(tmp.path().join("data/splits.json"))).unwrap();
    assert_eq!((seeds.train.len(), seeds.val.len(), seeds.test.len()), (8, 4, 4));
    assert!(seeds.disjoint());
    for (split, expect_sim) in [("train", true), ("val", false), ("test", false)] {
        let m = Manifest::load(&tmp.path().join("data").join(split)).unwrap();
        for e in &m.entries {
            assert_eq!(e.sim_image.is_some(), expect_sim, "{split}/{}", e.id);
            assert!(e.real_image.is_some());
        }
    }
    assert_eq!(read(tmp.path().join(CONFIG_FILE)), cfg.to_toml().unwrap().into_bytes());
    let m = RunManifest::load(tmp.path()).unwrap();
    assert!(m.is_done(Stage::GenScenes) && !m.is_done(Stage::TrainDiffusion));
    assert!(!tmp.path().join(LOCK_FILE).exists());
}

#[test]
fn run_dir_guards() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(Variant::SimOnly);
    let p = pipeline(cfg.clone(), tmp.path());
    assert!(matches!(p.run_stage(Stage::Synthesize), Err(Error::MissingStage { .. })));
    p.run_stage(Stage::GenScenes).unwrap();
    assert!(matches!(p.run_stage(Stage::GenScenes), Err(Error::RunDirNotEmpty(_))));
    assert!(matches!(p.run_stage(Stage::TrainDetector), Err(Error::MissingStage { .. })));

    let mut other = cfg.clone();
    other.seed += 1;
    assert!(matches!(pipeline(other, tmp.path()).run_stage(Stage::TrainDiffusion), Err(Error::InvalidConfig(_))));

    fs::write(tmp.path().join(LOCK_FILE), "1").unwrap();
    assert!(matches!(p.run_stage(Stage::TrainDiffusion), Err(Error::RunDirLocked(_))));
    fs::remove_file(tmp.path().join(LOCK_FILE)).unwrap();

    fs::write(tmp.path().join("keep.txt"), "x").unwrap();
    Pipeline::new(cfg, tmp.path().to_path_buf(), true).unwrap().run_stage(Stage::GenScenes).unwrap();
    assert!(tmp.path().join("keep.txt").exists());
}

#[test]
fn sim_only_skips_generator_and_copies_sim_renders() {
    let tmp = tempfile::tempdir().unwrap();
    let p = pipeline(tiny(Variant::SimOnly), tmp.path());
    for s in [Stage::GenScenes, Stage::TrainDiffusion, Stage::Synthesize] {
        p.run_stage(s).unwrap();
    }
    let m = RunManifest::load(tmp.path()).unwrap();
    let rec = m.record(Stage::TrainDiffusion).unwrap();
    assert_eq!(rec.state, StageState::Skipped);
    assert!(rec.note.is_some());
    assert!(!tmp.path().join(DIFFUSION_DIR).exists());

    let train = tmp.path().join("data/train");
    assert_eq!(ids(&tmp.path().join(SYNTH_DIR)), ids(&train));
    for id in ids(&train) {
        let name = format!("images/{id}_sim.png");
        assert_eq!(read(tmp.path().join(SYNTH_DIR).join(&name)), read(train.join(&name)));
    }
}

#[test]
fn no_adv_logs_a_zero_adversarial_column() {
    let tmp = tempfile::tempdir().unwrap();
    let p = pipeline(tiny(Variant::NoAdv), tmp.path());
    p.run_stage(Stage::GenScenes).unwrap();
    p.run_stage(Stage::TrainDiffusion).unwrap();
    let log = read_loss_log(&tmp.path().join(DIFFUSION_DIR).join(LOSS_LOG_FILE)).unwrap();
    assert_eq!(log.len(), 4);
    assert!(log.iter().all(|r| r.l_adv_gen == 0.0));
    assert!(log.iter().all(|r| r.l_diff.is_finite() && r.l_dis.is_finite()));
    let header = fs::read_to_string(tmp.path().join(DIFFUSION_DIR).join(LOSS_LOG_FILE)).unwrap();
    assert!(header.starts_with("step,L_diff,L_adv_gen,L_Dis\n"));
}

#[test]
fn interrupted_training_resumes_with_continuous_steps() {
    let full_dir = tempfile::tempdir().unwrap();
    let cut_dir = tempfile::tempdir().unwrap();
    let resumed_dir = tempfile::tempdir().unwrap();
    let full = tiny(Variant::Adversarial);
    let mut cut = full.clone();
    cut.advsup.max_steps = Some(2);

    let a = pipeline(full.clone(), full_dir.path());
    a.run_stage(Stage::GenScenes).unwrap();
    a.run_stage(Stage::TrainDiffusion).unwrap();

    let b = pipeline(cut, cut_dir.path());
    b.run_stage(Stage::GenScenes).unwrap();
    b.run_stage(Stage::TrainDiffusion).unwrap();

    let c = pipeline(full, resumed_dir.path());
    c.run_stage(Stage::GenScenes).unwrap();
    let src = cut_dir.path().join(DIFFUSION_DIR);
    let dst = resumed_dir.path().join(DIFFUSION_DIR);
    fs::create_dir_all(&dst).unwrap();
    for entry in fs::read_dir(&src).unwrap() {
        let entry = entry.unwrap();
        fs::copy(entry.path(), dst.join(entry.file_name())).unwrap();
    }
    c.run_stage(Stage::TrainDiffusion).unwrap();

    let log = read_loss_log(&dst.join(LOSS_LOG_FILE)).unwrap();
    let steps: Vec<usize> = log.iter().map(|r| r.step).collect();
    let expect: Vec<usize> = (steps[0]..steps[0] + 4).collect();
    assert_eq!(steps, expect);
    let fresh = full_dir.path().join(DIFFUSION_DIR);
    for f in fs::read_dir(&fresh).unwrap() {
        let name = f.unwrap().file_name();
        assert_eq!(read(fresh.join(&name)), read(dst.join(&name)), "{name:?}");
    }
}

#[test]
fn oracle_grasping_succeeds_on_the_plain_tier() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(Variant::SimOnly);
    cfg.grasp.oracle = true;
    cfg.grasp.protocol.trials_per_tier = 20;
    let p = pipeline(cfg, tmp.path());
    p.run_stage(Stage::GenScenes).unwrap();
    p.run_stage(Stage::RunGrasp).unwrap();
    let summary = GraspSummary::load(&tmp.path().join(GRASP_DIR).join(GRASP_SUMMARY_FILE)).unwrap();
    assert_eq!(summary.detector, "oracle");
    assert_eq!(summary.rate(simgrasp::grasp::Tier::Plain), Some(1.0));
    for tier in ["plain", "complex"] {
        let n = fs::read_dir(tmp.path().join(GRASP_DIR).join(tier)).unwrap().count();
        assert_eq!(n, 20);
    }
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn full_runs_are_reproducible_and_equal_the_staged_path() {
    let one = tempfile::tempdir().unwrap();
    let two = tempfile::tempdir().unwrap();
    let cfg = tiny(Variant::Adversarial);
    pipeline(cfg.clone(), one.path()).run_all().unwrap();
    let staged = pipeline(cfg.clone(), two.path());
    for s in Stage::ALL {
        staged.run_stage(s).unwrap();
    }

    let files = files_under(one.path());
    assert_eq!(files, files_under(two.path()));
    for f in &files {
        if f.as_os_str() == RUN_MANIFEST_FILE {
            continue;
        }
        assert_eq!(read(one.path().join(f)), read(two.path().join(f)), "{}", f.display());
    }
    for want in [
        "config.toml",
        "run_manifest.json",
        "diffusion/loss_log.csv",
        "detector/loss_log.csv",
        "detector/epoch_metrics.jsonl",
        "grasp/plain/trial_00.jsonl",
        "grasp/complex/trial_02.jsonl",
        "report.json",
        "report.csv",
        "report.md",
    ] {
        assert!(files.iter().any(|f| f == Path::new(want)), "missing {want}");
    }
    let m = RunManifest::load(one.path()).unwrap();
    assert!(Stage::ALL.iter().all(|s| m.is_done(*s)));
    assert_eq!(m.config_hash, cfg.hash().unwrap());

    // The report row is recomputed from the dumps alone.
    let report = MetricsReport::load(&one.path().join("report.json")).unwrap();
    assert_eq!(report.methods.len(), 1);
    let row = &report.methods[0];
    assert_eq!(row.method, "adversarial");
    let test = one.path().join("data/test");
    let data = simgrasp::scenegen::load_dataset(&test).unwrap();
    let dumps = read_detections(&one.path().join(DETECTOR_DIR).join(TEST_DETECTIONS_FILE)).unwrap();
    let direct = dump_metrics(&data.scenes, &ids(&test), &dumps, cfg.eval.score_threshold).unwrap();
    assert_eq!(row.precision, direct.precision);
    assert_eq!(row.recall, direct.recall);
    assert_eq!(row.map50, direct.map50);
    assert_eq!(row.map50_95, direct.map50_95);
    assert_eq!(row.center_deviation, direct.center_deviation);
    let grasp = GraspSummary::load(&one.path().join(GRASP_DIR).join(GRASP_SUMMARY_FILE)).unwrap();
    assert_eq!(row.grasp_success_plain, grasp.rate(simgrasp::grasp::Tier::Plain));

    let epochs: Vec<EpochMetrics> =
        simgrasp::jsonl::read_jsonl(&one.path().join(DETECTOR_DIR).join(EPOCH_METRICS_FILE)).unwrap();
    assert_eq!(epochs.len(), cfg.detector.epochs);
}

#[test]
fn comparative_report_orders_methods() {
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for (d, v) in dirs.iter().zip([Variant::NoAdv, Variant::SimOnly]) {
        pipeline(tiny(v), d.path()).run_all().unwrap();
    }
    let out = tempfile::tempdir().unwrap();
    let runs: Vec<PathBuf> = dirs.iter().map(|d| d.path().to_path_buf()).collect();
    let report = compare_runs(&runs, out.path()).unwrap();
    let names: Vec<&str> = report.methods.iter().map(|m| m.method.as_str()).collect();
    assert_eq!(names, ["sim_only", "no_adv"]);
    assert!(out.path().join("report.md").exists());
    assert_eq!(load_run_metrics(&runs[0]).unwrap(), report.methods[1]);
    assert!(matches!(compare_runs(&[], out.path()), Err(Error::MissingStage { .. })));
}
