use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cookcast::cis::EmbeddingModel;
use cookcast::harness::load_weights;
use cookcast::img::Image;
use cookcast::monitor::{run_session_offline, MonitorConfig, MonitorReport};
use cookcast::sessions::{desk_recipes, load_session, SyntheticRecipeSpec};
use sha2::{Digest, Sha256};

fn cookcast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cookcast"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = cookcast(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// SHA-256 of every file under `root`, keyed by relative path.
fn tree_hash(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    Sha256::digest(fs::read(&p).unwrap()).to_vec(),
                );
            }
        }
    }
    out
}

fn small_specs(dir: &Path, size: usize) -> PathBuf {
    let specs: Vec<SyntheticRecipeSpec> = desk_recipes(size).into_iter().take(2).collect();
    let p = dir.join("recipes.json");
    fs::write(&p, serde_json::to_string_pretty(&specs).unwrap()).unwrap();
    p
}

#[test]
fn usage_errors_exit_with_status_2() {
    assert_eq!(cookcast(&["bake"]).status.code(), Some(2));
    assert_eq!(
        cookcast(&["synth", "--no-such-flag"]).status.code(),
        Some(2)
    );
    assert_eq!(
        cookcast(&[
            "generate",
            "--archive",
            "a",
            "--raw",
            "r",
            "--recipe",
            "x",
            "--out",
            "o"
        ])
        .status
        .code(),
        Some(2)
    );
    assert_eq!(cookcast(&[]).status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_with_status_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = cookcast(&["train-cis", "--config", s(&missing)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));

    let empty = dir.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let out = cookcast(&[
        "split",
        "--data",
        s(&empty),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn synth_is_deterministic_and_split_covers_it() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_specs(dir.path(), 32);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&[
            "synth",
            "--spec",
            s(&spec),
            "--out",
            s(out),
            "--sessions",
            "6",
            "--frames",
            "8",
        ]);
    }
    let ha = tree_hash(&a);
    assert_eq!(ha, tree_hash(&b));
    assert_eq!(
        ha.keys().filter(|k| k.ends_with("session.json")).count(),
        12
    );

    let sp = dir.path().join("split");
    let stdout = ok(&["split", "--data", s(&a), "--out", s(&sp), "--seed", "3"]);
    assert!(
        stdout.contains("train 8, val 1, test 3") || stdout.contains("train 9, val 1, test 2"),
        "{stdout}"
    );
    let split: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(sp.join("split.json")).unwrap()).unwrap();
    let total: usize = ["train", "val", "test"]
        .iter()
        .map(|k| split[k].as_array().unwrap().len())
        .sum();
    assert_eq!(total, 12);
    assert!(sp.join("run_manifest.json").exists());
}

/// One pass through every subcommand with networks small enough for a test.
#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let spec = small_specs(root, 32);
    ok(&[
        "synth",
        "--spec",
        s(&spec),
        "--out",
        s(&root.join("data")),
        "--sessions",
        "5",
        "--frames",
        "8",
    ]);
    ok(&["split", "--data", s(&root.join("data")), "--out", s(root)]);

    let net =
        r#"{"img_size":32,"conv_channels":[8,16],"groups":4,"embed_dim":32,"proj_dims":[32,128]}"#;
    fs::write(
        root.join("cis.json"),
        format!(r#"{{"data":"data","split":"split.json","out":"cis_run","net":{net},"train":{{"epochs":2,"batch_size":4,"seed":5}}}}"#),
    )
    .unwrap();
    ok(&["train-cis", "--config", s(&root.join("cis.json"))]);
    let curve = fs::read(root.join("cis_run/cis_curve.csv")).unwrap();
    let manifest = fs::read(root.join("cis_run/run_manifest.json")).unwrap();
    assert!(String::from_utf8_lossy(&curve).starts_with("epoch,mean_loss,lr\n"));
    // equal config and seed reproduce the outputs byte for byte
    ok(&["train-cis", "--config", s(&root.join("cis.json"))]);
    assert_eq!(fs::read(root.join("cis_run/cis_curve.csv")).unwrap(), curve);
    assert_eq!(
        fs::read(root.join("cis_run/run_manifest.json")).unwrap(),
        manifest
    );
    let m: serde_json::Value = serde_json::from_slice(&manifest).unwrap();
    assert_eq!(m["seed"], 5);
    assert!(m["version"]
        .as_str()
        .unwrap()
        .starts_with(env!("CARGO_PKG_VERSION")));
    assert!(m["param_counts"]["cis"].as_u64().unwrap() > 0);

    let cis_dir = root.join("cis_run/cis");
    let session_dir = fs::read_dir(root.join("data"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .min()
        .unwrap();
    let target = session_dir.join("frame_0004.png");
    let mon = root.join("mon");
    ok(&[
        "monitor",
        "--cis",
        s(&cis_dir),
        "--session",
        s(&session_dir),
        "--target",
        s(&target),
        "--out",
        s(&mon),
    ]);
    let trace = fs::read_to_string(mon.join("trace.csv")).unwrap();
    assert!(trace.starts_with("frame_index,t_seconds,raw_similarity,smoothed,decision\n"));
    let from_cli: MonitorReport =
        serde_json::from_str(&fs::read_to_string(mon.join("report.json")).unwrap()).unwrap();
    let cis: EmbeddingModel = load_weights(&cis_dir).unwrap();
    let session = load_session(&session_dir).unwrap();
    let direct = run_session_offline(
        &cis,
        &session,
        &Image::load_png(&target).unwrap(),
        &MonitorConfig::default(),
    )
    .unwrap();
    assert_eq!(from_cli, direct);
    assert_eq!(mon.join("strip.png").exists(), direct.stop.is_some());

    let ev = root.join("eval");
    ok(&[
        "eval",
        "--cis",
        s(&cis_dir),
        "--data",
        s(&root.join("data")),
        "--split",
        s(&root.join("split.json")),
        "--out",
        s(&ev),
        "--plots",
    ]);
    let table = fs::read_to_string(ev.join("state_table.csv")).unwrap();
    assert!(
        table.starts_with("pair_kind,ssim,one_minus_pyramid_l1,cis,count\n"),
        "{table}"
    );
    assert!(table.contains("raw-raw,1,1,1,"));
    let n_traj = fs::read_dir(ev.join("trajectories")).unwrap().count();
    assert!(n_traj >= 2 && n_traj.is_multiple_of(2));

    let q = root.join("cis_q");
    let stdout = ok(&["quantize", "--archive", s(&cis_dir), "--out", s(&q)]);
    assert!(stdout.contains("smaller"));
    let qcis: EmbeddingModel = load_weights(&q).unwrap();
    assert_eq!(qcis.store.param_count(), cis.store.param_count());

    let gen = r#"{"img_size":32,"base_dim":8,"dim_mults":[1,2],"resnet_groups":4,"n_mid":1}"#;
    fs::write(
        root.join("gen.json"),
        format!(
            r#"{{"data":"data","split":"split.json","cis":"cis_run/cis","out":"gen_run","generator":{gen},"discriminator":{{"ndf":8}},"train":{{"epochs_const":1,"epochs_decay":1,"seed":2}}}}"#
        ),
    )
    .unwrap();
    let stdout = ok(&["train-gen", "--config", s(&root.join("gen.json"))]);
    let census = stdout
        .lines()
        .find(|l| l.starts_with("generator parameters:"))
        .unwrap();
    let nums: Vec<&str> = census
        .split(|c: char| !c.is_ascii_digit())
        .filter(|t| !t.is_empty())
        .collect();
    assert_eq!(nums[0], nums[1], "{census}");
    let gm: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.join("gen_run/run_manifest.json")).unwrap())
            .unwrap();
    assert_eq!(gm["config"]["train"]["lambda_gan"], 1.0);
    assert_eq!(gm["config"]["train"]["lambda_perc"], 50.0);
    assert_eq!(gm["config"]["train"]["lambda_cis"], 50.0);
    assert!(gm["start_loss"].is_number() && gm["end_loss"].is_number());
    let curve = fs::read_to_string(root.join("gen_run/gen_curve.csv")).unwrap();
    assert!(curve.starts_with("epoch,gan_d,gan_g,perc,cis,composite,lr\n"));

    let raw = session_dir.join("frame_0000.png");
    let out = root.join("gen_out");
    ok(&[
        "generate",
        "--archive",
        s(&root.join("gen_run/generator")),
        "--raw",
        s(&raw),
        "--recipe",
        "cookie",
        "--all-states",
        "--out",
        s(&out),
    ]);
    for st in ["basic", "standard", "extended"] {
        let img = Image::load_png(&out.join(format!("{st}.png"))).unwrap();
        assert_eq!((img.height(), img.width()), (32, 32));
    }
    let one = root.join("gen_one");
    ok(&[
        "generate",
        "--archive",
        s(&root.join("gen_run/generator")),
        "--raw",
        s(&raw),
        "--recipe",
        "cookie",
        "--state",
        "standard",
        "--out",
        s(&one),
    ]);
    assert!(one.join("standard.png").exists() && !one.join("basic.png").exists());
    let bad = cookcast(&[
        "generate",
        "--archive",
        s(&root.join("gen_run/generator")),
        "--raw",
        s(&raw),
        "--recipe",
        "pizza",
        "--all-states",
        "--out",
        s(&one),
    ]);
    assert_eq!(bad.status.code(), Some(1));

    let rep = root.join("report");
    ok(&[
        "report",
        "--generator",
        s(&root.join("gen_run/generator")),
        "--data",
        s(&root.join("data")),
        "--split",
        s(&root.join("split.json")),
        "--out",
        s(&rep),
        "--sessions",
        "2",
    ]);
    let grid = Image::load_png(&rep.join("grid.png")).unwrap();
    assert_eq!(grid.width(), 3 * 32);
    assert_eq!(grid.height() % 32, 0);
}
