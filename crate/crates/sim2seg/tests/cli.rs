use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use sim2seg::config::PipelineConfig;
use sim2seg::segmentation::SegHyper;
use sim2seg::translation::TranslationHyper;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn sim2seg(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_sim2seg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn with_config(cfg: &Path, args: &[&str]) -> Run {
    let mut all = args.to_vec();
    all.extend(["--config", cfg.to_str().unwrap()]);
    sim2seg(&all)
}

fn tiny_config(root: &Path) -> PathBuf {
    let mut cfg = PipelineConfig::default();
    cfg.scene.image_size = [32, 32];
    cfg.translation = TranslationHyper {
        image_size: 32,
        iterations: 2,
        ngf: 4,
        ndf: 4,
        n_blocks: Some(1),
        disc_layers: 2,
        checkpoint_every: 2,
        ..TranslationHyper::default()
    };
    cfg.segmentation = SegHyper {
        image_size: 32,
        iterations: 2,
        ngf: 4,
        ndf: 4,
        levels: Some(3),
        disc_layers: 2,
        checkpoint_every: 2,
        ..SegHyper::default()
    };
    cfg.postproc.marker_min_distance = 2.0;
    cfg.postproc.min_instance_area = 2;
    cfg.paths.synth_dataset = root.join("synth");
    cfg.paths.real_images = root.join("real");
    cfg.paths.checkpoints = root.join("ckpt");
    cfg.paths.reports = root.join("reports");
    cfg.workers = Some(1);
    let path = root.join("config.json");
    fs::write(&path, cfg.to_json()).unwrap();
    path
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    v.sort();
    v
}

#[test]
fn config_problems_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(sim2seg(&["show-config"]).code, 2);
    assert_eq!(with_config(&tmp.path().join("absent.json"), &["show-config"]).code, 2);

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{ "segmentation": { "ngf": 4, "wings": 2 } }"#).unwrap();
    let r = with_config(&bad, &["show-config"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("wings"), "{}", r.stderr);

    fs::write(&bad, r#"{ "translation": { "learning_rate": -1 } }"#).unwrap();
    assert_eq!(with_config(&bad, &["show-config"]).code, 2);
}

#[test]
fn show_config_prints_loadable_json() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let r = with_config(&cfg, &["show-config"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let back = tmp.path().join("echo.json");
    fs::write(&back, &r.stdout).unwrap();
    let again = with_config(&back, &["show-config"]);
    assert_eq!(again.code, 0, "{}", again.stderr);
    assert_eq!(again.stdout, r.stdout);
}

#[test]
fn missing_artifacts_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    assert_eq!(with_config(&cfg, &["train-seg"]).code, 3);
    let r = with_config(&cfg, &["infer", "--input", tmp.path().to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(r.code, 3, "{}", r.stderr);
}

#[test]
fn end_to_end_on_a_tiny_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = tiny_config(root);
    let s = |p: &Path| p.to_str().unwrap().to_string();

    let r = with_config(&cfg, &["gen-data", "--count", "4", "--seed", "3"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let synth = root.join("synth");
    assert_eq!(files_in(&synth.join("samples")), ["000000", "000001", "000002", "000003"]);

    // the rendered images double as the unlabeled real set
    fs::create_dir_all(root.join("real")).unwrap();
    for n in files_in(&synth.join("samples")) {
        fs::copy(synth.join("samples").join(&n).join("rgb.png"), root.join("real").join(format!("{n}.png"))).unwrap();
    }
    for cmd in ["train-translate", "train-seg"] {
        let r = with_config(&cfg, &[cmd]);
        assert_eq!(r.code, 0, "{cmd}: {}", r.stderr);
    }

    let (out_a, out_b) = (root.join("infer_a"), root.join("infer_b"));
    for out in [&out_a, &out_b] {
        let r = with_config(&cfg, &["infer", "--input", &s(&root.join("real")), "--out", &s(out)]);
        assert_eq!(r.code, 0, "{}", r.stderr);
        assert!(r.stdout.contains("4 images segmented, 0 skipped"), "{}", r.stdout);
    }
    for sub in ["translated", "raw", "instances", "composite"] {
        assert_eq!(files_in(&out_a.join(sub)).len(), 4, "{sub}");
    }
    for f in files_in(&out_a.join("instances")) {
        assert_eq!(fs::read(out_a.join("instances").join(&f)).unwrap(), fs::read(out_b.join("instances").join(&f)).unwrap());
    }

    let r = with_config(&cfg, &["infer", "--input", &s(&root.join("real")), "--out", &s(&root.join("plain")), "--skip-translation"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(root.join("plain/infer_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["translation"], false);

    let r = with_config(&cfg, &["eval", "--pred", &s(&out_a), "--gt", &s(&synth), "--label", "tiny"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("tiny"), "{}", r.stdout);

    fs::remove_file(out_b.join("instances").join("000002.png")).unwrap();
    let r = with_config(&cfg, &["eval", "--pred", &s(&out_b), "--gt", &s(&synth)]);
    assert_eq!(r.code, 4, "{}", r.stderr);

    let r = with_config(&cfg, &["ablate", "--labeled", &s(&synth)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let reports = files_in(&root.join("reports"));
    assert_eq!(reports.len(), 2, "{reports:?}");
    let ablation = reports.iter().find(|d| d.ends_with("ablate")).expect("ablation report");
    for f in ["report.json", "table.txt", "per_sample.csv", "grid.png"] {
        assert!(root.join("reports").join(ablation).join(f).is_file(), "{f}");
    }
}
