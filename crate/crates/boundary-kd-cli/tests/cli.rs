//! End-to-end runs of the `boundary-kd` binary on small synthetic tasks.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use boundary_kd::labels::TransferSet;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_boundary-kd")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, json: &serde_json::Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(json).unwrap()).unwrap();
    path
}

fn blobs_dataset(classes: usize, per_class: usize, seed: u64) -> serde_json::Value {
    blobs_split(classes, per_class, seed, 0)
}

/// Same task (same seed, same anchors), disjoint sample slots.
fn blobs_split(
    classes: usize,
    per_class: usize,
    seed: u64,
    slot_offset: usize,
) -> serde_json::Value {
    serde_json::json!({
        "kind": "blobs",
        "dimensions": [1, 2, 1],
        "class_count": classes,
        "per_class": per_class,
        "dispersion": 0.03,
        "seed": seed,
        "slot_offset": slot_offset,
    })
}

fn robustness_config(strategy: &str) -> serde_json::Value {
    serde_json::json!({
        "seed": 5,
        "dataset": blobs_dataset(3, 12, 7),
        "oracle": {"kind": "dataset_teacher"},
        "robustness": {
            "strategy": strategy,
            "reference_per_class": 4,
            "gradient_samples": 24,
            "query_limit_per_direction": 400,
        },
    })
}

fn read_records(dir: &Path) -> Vec<boundary_kd::geometry::RobustnessRecord> {
    let file = std::fs::File::open(dir.join("records.csv")).unwrap();
    boundary_kd::geometry::read_records_csv(std::io::BufReader::new(file)).unwrap()
}

#[test]
fn robustness_writes_records_heatmap_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "run.json", &robustness_config("mbd"));
    let out_dir = tmp.path().join("out");
    let output = run(&[
        "robustness",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    for f in [
        "records.csv",
        "heatmap.csv",
        "summary.json",
        "resolved_config.json",
    ] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("\"stage\":\"robustness\""),
        "progress events missing"
    );
    let first = std::fs::read_to_string(out_dir.join("records.csv")).unwrap();
    assert!(first.starts_with("# config_hash="));
    assert_eq!(read_records(&out_dir).len(), 36);
}

#[test]
fn rerunning_produces_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "run.json", &robustness_config("mbd"));
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    for out in [&out_a, &out_b] {
        let output = run(&[
            "robustness",
            "--config",
            config.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
        ]);
        assert!(output.status.success());
    }
    for f in ["records.csv", "heatmap.csv", "resolved_config.json"] {
        let a = std::fs::read(out_a.join(f)).unwrap();
        let b = std::fs::read(out_b.join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between identical runs");
    }
}

#[test]
fn sd_strategy_spends_no_queries() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "run.json", &robustness_config("sd"));
    let out_dir = tmp.path().join("out");
    assert!(run(&[
        "robustness",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ])
    .status
    .success());
    for record in read_records(&out_dir) {
        assert_eq!(record.queries_spent, 0);
    }
}

#[test]
fn mbd_is_entrywise_below_bd() {
    let tmp = tempfile::tempdir().unwrap();
    let mut outs = Vec::new();
    for strategy in ["bd", "mbd"] {
        let config = write_config(
            tmp.path(),
            &format!("{strategy}.json"),
            &robustness_config(strategy),
        );
        let out_dir = tmp.path().join(strategy);
        assert!(run(&[
            "robustness",
            "--config",
            config.to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
        ])
        .status
        .success());
        outs.push(read_records(&out_dir));
    }
    let (bd, mbd) = (&outs[0], &outs[1]);
    assert_eq!(bd.len(), mbd.len());
    for (b, m) in bd.iter().zip(mbd) {
        assert_eq!(b.sample_index, m.sample_index);
        for (db, dm) in b.distances.iter().zip(&m.distances) {
            if let (Some(db), Some(dm)) = (db, dm) {
                assert!(dm <= &(db + 1e-12), "mbd {dm} > bd {db}");
            }
        }
    }
}

#[test]
fn unknown_config_keys_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let mut bad = robustness_config("mbd");
    bad["not_a_key"] = serde_json::json!(1);
    let config = write_config(tmp.path(), "bad.json", &bad);
    let output = run(&[
        "robustness",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn missing_dataset_path_exits_2_and_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "run.json",
        &serde_json::json!({
            "dataset": {"kind": "idx", "images": "/nonexistent/images", "labels": "/nonexistent/labels"},
            "oracle": {"kind": "dataset_teacher"},
        }),
    );
    let output = run(&[
        "robustness",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn exhausted_global_budget_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = robustness_config("mbd");
    config["budget"] = serde_json::json!(4);
    let path = write_config(tmp.path(), "run.json", &config);
    let output = run(&[
        "robustness",
        "--config",
        path.to_str().unwrap(),
        "--out-dir",
        tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(3));
}

#[test]
fn teacher_training_is_reproducible_and_evaluable() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "teacher.json",
        &serde_json::json!({
            "seed": 3,
            "dataset": blobs_dataset(3, 40, 7),
            "eval_dataset": blobs_split(3, 20, 7, 40),
            "teacher_train": {
                "preset": "mlp-tiny",
                "epochs": 20,
                "batch_size": 32,
                "optimizer": {"kind": "adam", "lr": 0.005},
                "init_seed": 1,
            },
        }),
    );
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    for out in [&out_a, &out_b] {
        let output = run(&[
            "train-teacher",
            "--config",
            config.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
        ]);
        assert!(
            output.status.success(),
            "{}",
            String::from_utf8_lossy(&output.stderr)
        );
    }
    let a = std::fs::read(out_a.join("teacher.bin")).unwrap();
    let b = std::fs::read(out_b.join("teacher.bin")).unwrap();
    assert_eq!(a, b, "checkpoints differ across identical runs");
    let eval: serde_json::Value =
        serde_json::from_reader(std::fs::File::open(out_a.join("eval.json")).unwrap()).unwrap();
    assert!(eval["accuracy"].as_f64().unwrap() > 0.95);

    // evaluate command agrees with the eval written during training.
    let eval_config = write_config(
        tmp.path(),
        "eval.json.cfg",
        &serde_json::json!({
            "dataset": blobs_split(3, 20, 7, 40),
            "checkpoint": out_a.join("teacher"),
        }),
    );
    let out_eval = tmp.path().join("eval");
    assert!(run(&[
        "evaluate",
        "--config",
        eval_config.to_str().unwrap(),
        "--out-dir",
        out_eval.to_str().unwrap(),
    ])
    .status
    .success());
    let again: serde_json::Value =
        serde_json::from_reader(std::fs::File::open(out_eval.join("eval.json")).unwrap()).unwrap();
    assert_eq!(again["accuracy"], eval["accuracy"]);
}

#[test]
fn labels_then_distill_then_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let out_rob = tmp.path().join("rob");
    let config = write_config(tmp.path(), "rob.json", &robustness_config("mbd"));
    assert!(run(&[
        "robustness",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out_rob.to_str().unwrap(),
    ])
    .status
    .success());

    let mut labels_cfg = robustness_config("mbd");
    labels_cfg["records_csv"] = serde_json::json!(out_rob.join("records.csv"));
    labels_cfg["labels"] = serde_json::json!({"temperature": 0.3});
    let labels_path = write_config(tmp.path(), "labels.json", &labels_cfg);
    let out_labels = tmp.path().join("labels");
    assert!(run(&[
        "labels",
        "--config",
        labels_path.to_str().unwrap(),
        "--out-dir",
        out_labels.to_str().unwrap(),
    ])
    .status
    .success());
    let set = TransferSet::load(&out_labels.join("transfer")).unwrap();
    assert_eq!(set.entries.len(), 36);
    assert!((set.metadata.temperature - 0.3).abs() < 1e-12);

    let mut distill_cfg = robustness_config("mbd");
    distill_cfg["eval_dataset"] = blobs_split(3, 20, 7, 12);
    distill_cfg["distill"] = serde_json::json!({
        "preset": "mlp-tiny",
        "mode": "db3kd",
        "transfer_base": out_labels.join("transfer"),
        "train": {
            "temperature": 0.3,
            "lambda": 1.0,
            "optimizer": {"kind": "adam", "lr": 0.005},
            "epochs": 40,
            "batch_size": 16,
            "seed": 2,
        },
    });
    let distill_path = write_config(tmp.path(), "distill.json", &distill_cfg);
    let out_distill = tmp.path().join("distill");
    let output = run(&[
        "distill",
        "--config",
        distill_path.to_str().unwrap(),
        "--out-dir",
        out_distill.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let eval: serde_json::Value =
        serde_json::from_reader(std::fs::File::open(out_distill.join("eval.json")).unwrap())
            .unwrap();
    assert!(
        eval["accuracy"].as_f64().unwrap() > 0.9,
        "student accuracy {eval}"
    );
}

#[test]
fn generate_emits_loadable_pseudo_set_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "gen.json",
        &serde_json::json!({
            "seed": 4,
            "dataset": blobs_dataset(3, 5, 7),
            "oracle": {"kind": "dataset_teacher"},
            "generation": {
                "probes_per_step": 2,
                "ascent_step": 0.05,
                "outer_iterations": 5,
                "mbd_query_limit": 500,
                "per_class_quota": 4,
                "robustness": {"gradient_samples": 16},
            },
        }),
    );
    let out_dir = tmp.path().join("out");
    let output = run(&[
        "generate",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_reader(std::fs::File::open(out_dir.join("report.json")).unwrap()).unwrap();
    let counts: Vec<u64> = report["per_class_counts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    assert_eq!(counts.iter().sum::<u64>(), 12, "quota x classes");
    let set = TransferSet::load(&out_dir.join("pseudo")).unwrap();
    assert_eq!(set.entries.len(), 12);
    let ds = boundary_kd::data::Dataset::load(&out_dir.join("pseudo_dataset")).unwrap();
    assert_eq!(ds.len(), 12);
}

#[test]
fn sweep_runs_cells_and_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = robustness_config("mbd");
    config["eval_dataset"] = blobs_split(3, 15, 7, 12);
    config["labels"] = serde_json::json!({"temperature": 0.3});
    config["distill"] = serde_json::json!({
        "preset": "mlp-tiny",
        "mode": "db3kd",
        "train": {
            "temperature": 0.3,
            "optimizer": {"kind": "adam", "lr": 0.005},
            "epochs": 20,
            "batch_size": 16,
            "seed": 2,
        },
    });
    config["sweep"] = serde_json::json!({"axis": "query_budget", "values": [60.0, 200.0]});
    let path = write_config(tmp.path(), "sweep.json", &config);
    let out_dir = tmp.path().join("out");
    let output = run(&[
        "sweep",
        "--config",
        path.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let sweep_csv = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(
        sweep_csv.lines().count(),
        4,
        "comment + header + 2 rows: {sweep_csv}"
    );
    assert!(out_dir
        .join("cell_query_budget_60")
        .join("eval.json")
        .exists());

    // Re-run: cells are skipped, output unchanged.
    assert!(run(&[
        "sweep",
        "--config",
        path.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ])
    .status
    .success());

    // A conflicting completed cell is an error.
    let cell_cfg = out_dir
        .join("cell_query_budget_60")
        .join("resolved_config.json");
    std::fs::write(&cell_cfg, "{}").unwrap();
    let conflicted = run(&[
        "sweep",
        "--config",
        path.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(conflicted.status.code(), Some(2));
}

#[test]
fn whitebox_heatmap_ranks_like_the_mbd_heatmap() {
    let tmp = tempfile::tempdir().unwrap();
    // A 5-class blobs task with enough overlap that the trained teacher keeps
    // informative (non-saturated) probabilities.
    let wide_blobs = |per_class: usize, slot_offset: usize| {
        serde_json::json!({
            "kind": "blobs",
            "dimensions": [1, 2, 1],
            "class_count": 5,
            "per_class": per_class,
            "dispersion": 0.06,
            "seed": 17,
            "slot_offset": slot_offset,
        })
    };
    let train_cfg = write_config(
        tmp.path(),
        "teacher.json",
        &serde_json::json!({
            "seed": 3,
            "dataset": wide_blobs(60, 0),
            "teacher_train": {
                "preset": "mlp-tiny",
                "epochs": 25,
                "batch_size": 32,
                "optimizer": {"kind": "adam", "lr": 0.005},
                "init_seed": 1,
            },
        }),
    );
    let out_teacher = tmp.path().join("teacher");
    assert!(run(&[
        "train-teacher",
        "--config",
        train_cfg.to_str().unwrap(),
        "--out-dir",
        out_teacher.to_str().unwrap(),
    ])
    .status
    .success());
    let ckpt = out_teacher.join("teacher");

    let rob_cfg = write_config(
        tmp.path(),
        "rob.json",
        &serde_json::json!({
            "seed": 5,
            "dataset": wide_blobs(16, 60),
            "oracle": {"kind": "checkpoint", "base": ckpt},
            "robustness": {
                "strategy": "mbd",
                "reference_per_class": 4,
                "gradient_samples": 24,
                "query_limit_per_direction": 400,
            },
        }),
    );
    let out_rob = tmp.path().join("rob");
    assert!(run(&[
        "robustness",
        "--config",
        rob_cfg.to_str().unwrap(),
        "--out-dir",
        out_rob.to_str().unwrap(),
    ])
    .status
    .success());

    let wb_cfg = write_config(
        tmp.path(),
        "wb.json",
        &serde_json::json!({
            "dataset": wide_blobs(16, 60),
            "checkpoint": ckpt,
        }),
    );
    let out_wb = tmp.path().join("wb");
    assert!(run(&[
        "whitebox-heatmap",
        "--config",
        wb_cfg.to_str().unwrap(),
        "--out-dir",
        out_wb.to_str().unwrap(),
    ])
    .status
    .success());

    let parse_matrix = |path: PathBuf| -> Vec<Vec<Option<f64>>> {
        let text = std::fs::read_to_string(path).unwrap();
        text.lines()
            .skip(2)
            .map(|line| {
                line.split(',')
                    .skip(1)
                    .map(|f| {
                        if f.is_empty() {
                            None
                        } else {
                            Some(f.parse().unwrap())
                        }
                    })
                    .collect()
            })
            .collect()
    };
    let mbd = parse_matrix(out_rob.join("heatmap.csv"));
    let wb = parse_matrix(out_wb.join("whitebox_heatmap.csv"));
    for m in 0..5 {
        let pairs: Vec<(f64, f64)> = (0..5)
            .filter(|&n| n != m)
            .filter_map(|n| Some((mbd[m][n]?, wb[m][n]?)))
            .collect();
        assert_eq!(pairs.len(), 4);
        let rho = spearman(&pairs);
        assert!(rho > 0.5, "row {m}: spearman {rho} with pairs {pairs:?}");
    }
}

fn spearman(pairs: &[(f64, f64)]) -> f64 {
    fn ranks(values: Vec<f64>) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..values.len()).collect();
        idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
        let mut r = vec![0.0; values.len()];
        for (rank, &i) in idx.iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    }
    let a = ranks(pairs.iter().map(|p| p.0).collect());
    let b = ranks(pairs.iter().map(|p| p.1).collect());
    let n = a.len() as f64;
    let mean = (n - 1.0) / 2.0;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..a.len() {
        cov += (a[i] - mean) * (b[i] - mean);
        va += (a[i] - mean).powi(2);
        vb += (b[i] - mean).powi(2);
    }
    cov / (va.sqrt() * vb.sqrt())
}
