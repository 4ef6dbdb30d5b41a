use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dsr::feature_maps::{decode_fmap, encode_fmap, read_fmap, FeatureMap};
use dsr::learning::{read_checkpoint, Fcn, FcnConfig};
use dsr::store::GalleryStore;
use dsr::synthetic::{Labeled, PersonImages};
use serde_json::Value;

fn dsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = dsr(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> i32 {
    dsr(args).status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

fn one_cell(v: &[f64]) -> FeatureMap<f64> {
    FeatureMap::new(1, 1, v.len(), v.to_vec()).unwrap()
}

fn labeled(id: &str, map: FeatureMap<f64>) -> Labeled<f64> {
    Labeled {
        person_id: id.into(),
        shot: 0,
        map,
    }
}

fn synthetic_stores(dir: &Path) -> (PathBuf, PathBuf) {
    let g = dir.join("gallery");
    let q = dir.join("probes");
    ok(&["extract", "--synthetic", "feature-gallery", "--out", p(&g)]);
    ok(&["extract", "--synthetic", "feature-probes:0", "--out", p(&q)]);
    (g, q)
}

#[test]
fn extract_constant_map_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.fmap");
    let o = ok(&["extract", "--synthetic", "constant:8x8x3", "--out", p(&out)]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("8x8x3"));
    let bytes = std::fs::read(&out).unwrap();
    let fm: FeatureMap<f32> = decode_fmap(&bytes).unwrap();
    assert!(fm.data().iter().all(|&v| v == 0.5));
    assert_eq!(encode_fmap(&fm).unwrap(), bytes);
}

#[test]
fn extract_through_a_checkpoint_follows_the_pool_stack() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("vgg.ckpt");
    let net = Fcn::<f64>::he_init(FcnConfig::vgg_like(3, [4, 4, 4, 4, 4]), 1).unwrap();
    dsr::learning::write_checkpoint(&ckpt, &net).unwrap();
    let out = dir.path().join("f.fmap");
    let o = ok(&[
        "extract",
        "--synthetic",
        "noise:64x64x3",
        "--checkpoint",
        p(&ckpt),
        "--out",
        p(&out),
    ]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("2x2x4"));
    let small = dir.path().join("s.fmap");
    ok(&[
        "extract",
        "--synthetic",
        "noise:16x16x3",
        "--out",
        p(&small),
    ]);
    assert_eq!(
        code(&[
            "extract",
            "--input",
            p(&small),
            "--checkpoint",
            p(&ckpt),
            "--out",
            p(&out)
        ]),
        3
    );
}

#[test]
fn corrupt_probe_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let (g, _) = synthetic_stores(dir.path());
    let bad = dir.path().join("bad.fmap");
    let mut bytes = std::fs::read(g.join("p000_s0.fmap")).unwrap();
    bytes[0] = b'X';
    std::fs::write(&bad, bytes).unwrap();
    let out = dsr(&["match", "--probe", p(&bad), "--store", p(&g)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("format"));
}

#[test]
fn probe_in_store_ranks_itself_first_at_zero_beta() {
    let dir = tempfile::tempdir().unwrap();
    let (g, _) = synthetic_stores(dir.path());
    let o = ok(&[
        "--beta",
        "0",
        "match",
        "--probe",
        p(&g.join("p007_s0.fmap")),
        "--store",
        p(&g),
        "--shots",
        "1",
    ]);
    let rows = csv_rows(&String::from_utf8_lossy(&o.stdout));
    assert_eq!(rows.len(), 30);
    assert_eq!(rows[0][1], "p007");
    assert_eq!(rows[0][2].parse::<f64>().unwrap(), 0.0);
    assert_eq!(rows[0][3], "1");
}

#[test]
fn two_entry_store_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    GalleryStore::create(
        &g,
        &[
            labeled("a", one_cell(&[1.0, 0.0])),
            labeled("b", one_cell(&[0.0, 1.0])),
        ],
    )
    .unwrap();
    let probe = dir.path().join("q.fmap");
    dsr::feature_maps::write_fmap(&probe, &one_cell(&[0.6, 0.8]).with_source("q")).unwrap();
    let csv = dir.path().join("r.csv");
    let scores = dir.path().join("s.json");
    ok(&[
        "match",
        "--probe",
        p(&probe),
        "--store",
        p(&g),
        "--out",
        p(&csv),
        "--scores",
        p(&scores),
    ]);
    let rows = csv_rows(&std::fs::read_to_string(&csv).unwrap());
    // atom b: w = 0.8 - 0.4, residual (0.6, 0.4); atom a: w = 0.2, residual (0.4, 0.8)
    let expect = [("b", 0.52), ("a", 0.8)];
    for (row, (id, d)) in rows.iter().zip(expect) {
        assert_eq!(row[1], id);
        assert!((row[2].parse::<f64>().unwrap() - d).abs() < 1e-6, "{row:?}");
    }
    let doc = json(&scores);
    assert_eq!(doc["entries"].as_array().unwrap().len(), 2);
    assert_eq!(doc["probe_blocks"], 1);
}

#[test]
fn scale_flag_changes_reported_block_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (g, _) = synthetic_stores(dir.path());
    let probe = g.join("p001_s0.fmap");
    let one = dsr(&[
        "--scales",
        "1",
        "match",
        "--probe",
        p(&probe),
        "--store",
        p(&g),
        "--shots",
        "1",
    ]);
    let all = dsr(&[
        "--scales",
        "1,2,3",
        "match",
        "--probe",
        p(&probe),
        "--store",
        p(&g),
        "--shots",
        "1",
    ]);
    // 4x8 map: 32 windows at scale 1, 3*7 at scale 2, 2*6 at scale 3
    assert!(String::from_utf8_lossy(&one.stderr).contains("probe blocks: 32 (scale 1: 32)"));
    assert!(String::from_utf8_lossy(&all.stderr)
        .contains("probe blocks: 65 (scale 1: 32, scale 2: 21, scale 3: 12)"));
}

#[test]
fn channel_mismatch_and_empty_store_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (g, _) = synthetic_stores(dir.path());
    let probe = dir.path().join("c.fmap");
    ok(&[
        "extract",
        "--synthetic",
        "constant:4x4x5",
        "--out",
        p(&probe),
    ]);
    assert_eq!(code(&["match", "--probe", p(&probe), "--store", p(&g)]), 3);
    let empty = dir.path().join("empty");
    GalleryStore::<f64>::create(&empty, &[]).unwrap();
    assert_eq!(
        code(&["match", "--probe", p(&probe), "--store", p(&empty)]),
        3
    );
}

#[test]
fn eval_with_gallery_as_probes_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let (g, _) = synthetic_stores(dir.path());
    let out = dir.path().join("e");
    ok(&[
        "eval",
        "--store",
        p(&g),
        "--probes",
        p(&g),
        "--shots",
        "1",
        "--out",
        p(&out),
    ]);
    let s = json(&out.join("summary.json"));
    assert_eq!(s["rank1"], 1.0);
    for key in ["rank1", "rank3", "mAP", "auc", "timing"] {
        assert!(!s[key].is_null(), "{key}");
    }
    let cmc = std::fs::read_to_string(out.join("cmc.csv")).unwrap();
    assert!(cmc.starts_with("rank,value\n"));
    let values: Vec<f64> = csv_rows(&cmc)
        .iter()
        .map(|r| r[1].parse().unwrap())
        .collect();
    assert!(values.iter().all(|&v| v == 1.0));
    assert!(std::fs::read_to_string(out.join("roc.csv"))
        .unwrap()
        .starts_with("far,tar\n"));
}

#[test]
fn eval_is_deterministic_and_multishot_helps() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, shots: &str| {
        let out = dir.path().join(name);
        ok(&[
            "--seed",
            "3",
            "eval",
            "--synthetic",
            "--repetitions",
            "2",
            "--shots",
            shots,
            "--out",
            p(&out),
        ]);
        out
    };
    let a = run("a", "1");
    let b = run("b", "1");
    for f in ["cmc.csv", "roc.csv"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap()
        );
    }
    let (mut sa, mut sb) = (json(&a.join("summary.json")), json(&b.join("summary.json")));
    sa.as_object_mut().unwrap().remove("timing");
    sb.as_object_mut().unwrap().remove("timing");
    assert_eq!(sa, sb);
    let multi = json(&run("m", "3").join("summary.json"));
    assert!(multi["rank1"].as_f64().unwrap() >= sa["rank1"].as_f64().unwrap());
}

#[test]
fn eval_rejects_probe_identity_missing_from_gallery() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    let q = dir.path().join("q");
    GalleryStore::create(
        &g,
        &[
            labeled("a", one_cell(&[1.0, 0.0])),
            labeled("b", one_cell(&[0.0, 1.0])),
        ],
    )
    .unwrap();
    GalleryStore::create(&q, &[labeled("z", one_cell(&[1.0, 1.0]))]).unwrap();
    assert_eq!(
        code(&[
            "eval",
            "--store",
            p(&g),
            "--probes",
            p(&q),
            "--out",
            p(&dir.path().join("e"))
        ]),
        3
    );
}

#[test]
fn zero_epochs_writes_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("init.ckpt");
    ok(&[
        "train",
        "--synthetic",
        "3",
        "--epochs",
        "0",
        "--out",
        p(&ckpt),
    ]);
    let net: Fcn<f32> = read_checkpoint(&ckpt).unwrap();
    let fresh = Fcn::<f32>::he_init(FcnConfig::desk(3), 0).unwrap();
    assert_eq!(net.config, fresh.config);
    assert_eq!(net.params, fresh.params);
    let history = std::fs::read_to_string(dir.path().join("init.loss.csv")).unwrap();
    assert_eq!(history, "step,loss\n");
}

#[test]
fn training_smoke_run_records_finite_losses() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("t.ckpt");
    let hist = dir.path().join("h.csv");
    ok(&[
        "train",
        "--synthetic",
        "3",
        "--pretrain",
        "--epochs",
        "1",
        "--out",
        p(&ckpt),
        "--history",
        p(&hist),
    ]);
    let rows = csv_rows(&std::fs::read_to_string(&hist).unwrap());
    assert!(!rows.is_empty());
    assert!(rows
        .iter()
        .all(|r| r[1].parse::<f64>().unwrap().is_finite()));
    read_checkpoint::<f64>(&ckpt).unwrap();
}

#[test]
fn pair_manifest_training_and_malformed_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let imgs = PersonImages {
        identities: 2,
        ..PersonImages::default()
    };
    for (i, l) in imgs.gallery::<f64>(1, 0).unwrap().iter().enumerate() {
        dsr::feature_maps::write_fmap(dir.path().join(format!("{i}.fmap")), &l.map).unwrap();
    }
    let good = dir.path().join("pairs.json");
    std::fs::write(&good, r#"[{"probe":"0.fmap","gallery":"0.fmap","alpha":1},{"probe":"0.fmap","gallery":"1.fmap","alpha":-1}]"#).unwrap();
    ok(&[
        "train",
        "--pairs",
        p(&good),
        "--epochs",
        "1",
        "--out",
        p(&dir.path().join("m.ckpt")),
    ]);
    for (name, body) in [
        (
            "alpha.json",
            r#"[{"probe":"0.fmap","gallery":"1.fmap","alpha":0}]"#,
        ),
        ("field.json", r#"[{"probe":"0.fmap","alpha":1}]"#),
        ("syntax.json", "[{"),
        ("empty.json", "[]"),
    ] {
        let path = dir.path().join(name);
        std::fs::write(&path, body).unwrap();
        assert_eq!(
            code(&[
                "train",
                "--pairs",
                p(&path),
                "--out",
                p(&dir.path().join("x.ckpt"))
            ]),
            3,
            "{name}"
        );
    }
}

#[test]
fn bench_reports_counters_workers_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let imgs = PersonImages {
        identities: 4,
        ..PersonImages::default()
    };
    let g = dir.path().join("g");
    let q = dir.path().join("q");
    GalleryStore::create(&g, &imgs.gallery::<f64>(1, 0).unwrap()).unwrap();
    GalleryStore::create(&q, &imgs.partial_probes::<f64>(8, 1).unwrap()[..3]).unwrap();
    let out = dir.path().join("bench.json");
    ok(&[
        "--workers",
        "2",
        "--seed",
        "11",
        "--scales",
        "1,2",
        "bench",
        "--store",
        p(&g),
        "--probes",
        p(&q),
        "--network",
        "c4,p,c4,p",
        "--out",
        p(&out),
    ]);
    let r = json(&out);
    assert_eq!(r["workers"], 2);
    assert_eq!(r["seed"], 11);
    let modes = r["modes"].as_array().unwrap();
    let get = |name: &str| modes.iter().find(|m| m["mode"] == name).unwrap();
    assert_eq!(get("dsr_single")["gallery_extractions"], 1);
    assert_eq!(get("dsr_multi")["gallery_extractions"], 1);
    assert_eq!(get("recompute")["gallery_extractions"], 3 * 4);
    assert!(get("dsr_multi")["mean_secs"].as_f64().unwrap() > 0.0);
}

#[test]
fn solve_prints_soft_threshold_solution() {
    let dir = tempfile::tempdir().unwrap();
    let prob = dir.path().join("p.json");
    std::fs::write(
        &prob,
        r#"{"atoms": [[1, 0], [0, 1]], "target": [1.0, 0.2]}"#,
    )
    .unwrap();
    let o = ok(&["solve", "--problem", p(&prob)]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let w: Vec<f64> = serde_json::from_value(v["coefficients"].clone()).unwrap();
    assert!((w[0] - 0.6).abs() < 1e-12 && w[1] == 0.0);
    assert_eq!(v["converged"], true);
}

#[test]
fn config_precedence_for_each_global_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(
        &cfg,
        "scales = [1]\nseed = 5\nworkers = 1\n[solver]\nbeta = 0.1\n",
    )
    .unwrap();
    let prob = dir.path().join("p.json");
    std::fs::write(
        &prob,
        r#"{"atoms": [[1, 0], [0, 1]], "target": [1.0, 0.2]}"#,
    )
    .unwrap();
    let beta_of = |args: &[&str]| -> f64 {
        let v: Value = serde_json::from_slice(&ok(args).stdout).unwrap();
        v["beta"].as_f64().unwrap()
    };
    assert_eq!(beta_of(&["solve", "--problem", p(&prob)]), 0.4);
    assert_eq!(
        beta_of(&["--config", p(&cfg), "solve", "--problem", p(&prob)]),
        0.1
    );
    assert_eq!(
        beta_of(&[
            "--config",
            p(&cfg),
            "--beta",
            "0.3",
            "solve",
            "--problem",
            p(&prob)
        ]),
        0.3
    );

    let (g, _) = synthetic_stores(dir.path());
    let probe = g.join("p001_s0.fmap");
    let blocks = |args: &[&str]| String::from_utf8_lossy(&ok(args).stderr).to_string();
    assert!(blocks(&[
        "match",
        "--probe",
        p(&probe),
        "--store",
        p(&g),
        "--shots",
        "1"
    ])
    .contains("probe blocks: 65"));
    assert!(blocks(&[
        "--config",
        p(&cfg),
        "match",
        "--probe",
        p(&probe),
        "--store",
        p(&g),
        "--shots",
        "1"
    ])
    .contains("probe blocks: 32"));
    assert!(blocks(&[
        "--config",
        p(&cfg),
        "--scales",
        "1,2",
        "match",
        "--probe",
        p(&probe),
        "--store",
        p(&g),
        "--shots",
        "1"
    ])
    .contains("probe blocks: 53"));

    let noise = |args: &[&str], name: &str| {
        let out = dir.path().join(name);
        let mut full = args.to_vec();
        full.extend(["extract", "--synthetic", "noise:3x3x1", "--out", p(&out)]);
        ok(&full);
        read_fmap::<f32>(&out).unwrap().into_data()
    };
    let default = noise(&[], "n0.fmap");
    let file = noise(&["--config", p(&cfg)], "n1.fmap");
    let flag = noise(&["--config", p(&cfg), "--seed", "9"], "n2.fmap");
    assert_eq!(default, noise(&["--seed", "0"], "n3.fmap"));
    assert_eq!(file, noise(&["--seed", "5"], "n4.fmap"));
    assert_eq!(flag, noise(&["--seed", "9"], "n5.fmap"));
    assert_ne!(default, file);
    assert_ne!(file, flag);

    let workers = |args: &[&str], name: &str| {
        let imgs = PersonImages {
            identities: 2,
            ..PersonImages::default()
        };
        let g = dir.path().join(format!("{name}_g"));
        GalleryStore::create(&g, &imgs.gallery::<f64>(1, 0).unwrap()).unwrap();
        let out = dir.path().join(format!("{name}.json"));
        let mut full = args.to_vec();
        full.extend([
            "bench",
            "--store",
            p(&g),
            "--probes",
            p(&g),
            "--network",
            "c2,p",
            "--out",
            p(&out),
        ]);
        ok(&full);
        json(&out)["workers"].as_u64().unwrap()
    };
    assert_eq!(workers(&["--config", p(&cfg)], "w1"), 1);
    assert_eq!(workers(&["--config", p(&cfg), "--workers", "3"], "w3"), 3);
}

#[test]
fn exit_codes_distinguish_usage_data_and_numeric_failures() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["--scales", "0", "solve", "--problem", "x"]), 2);
    let bad_cfg = dir.path().join("bad.toml");
    std::fs::write(&bad_cfg, "[solver]\nbeta = -2.0\n").unwrap();
    assert_eq!(
        code(&["--config", p(&bad_cfg), "solve", "--problem", "x"]),
        2
    );
    assert_eq!(
        code(&["solve", "--problem", p(&dir.path().join("missing.json"))]),
        3
    );

    let prob = dir.path().join("p.json");
    let atoms: Vec<Vec<f64>> = (0..6)
        .map(|i| (0..6).map(|j| ((i * 7 + j * 3) % 5) as f64 - 2.0).collect())
        .collect();
    let body = serde_json::json!({"atoms": atoms, "target": [1.0, -2.0, 0.5, 3.0, -1.0, 2.0], "beta": 0.01});
    std::fs::write(&prob, body.to_string()).unwrap();
    let capped = dir.path().join("cap.toml");
    std::fs::write(&capped, "[solver]\nmax_iters = 1\n").unwrap();
    assert_eq!(
        code(&["--config", p(&capped), "solve", "--problem", p(&prob)]),
        4
    );
    ok(&["solve", "--problem", p(&prob)]);
}
