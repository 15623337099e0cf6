mod common;

use std::path::Path;

use common::{path_str, run};
use qualaudit::tensor_io::{
    load_manifest, load_scores, manifest_to_string, write_correctness, write_npy_file, write_scores,
    CorrectnessTable, RecordKey, ScoreTable, TensorF32,
};

fn write_clean_set(dir: &Path, n: usize) -> std::path::PathBuf {
    let m = common::clean_manifest(n);
    common::write_images(dir, &m, 10, 10);
    let path = dir.join("manifest.jsonl");
    std::fs::write(&path, manifest_to_string(&m)).unwrap();
    path
}

/// 15 corruptions x 5 severities, 4 images per group; q tracks accuracy when `aligned`.
fn seventy_five_groups(dir: &Path, aligned: bool) -> (std::path::PathBuf, std::path::PathBuf) {
    let mut s = ScoreTable::new();
    let mut c = CorrectnessTable::new();
    for k in 0..15 {
        for sev in 1..=5u8 {
            let g = k * 5 + usize::from(sev);
            let correct_count = g % 5;
            let q = if aligned {
                correct_count as f64 / 4.0
            } else {
                ((g * 37) % 11) as f64
            };
            for img in 0..4 {
                let key = RecordKey::new(&format!("img{img}"), &format!("c{k:02}"), sev);
                // Per-image offsets keep point-wise scores non-degenerate.
                s.push(key.clone(), "m1", q + 0.01 * img as f64).unwrap();
                c.push(key, "net", u8::from(img < correct_count)).unwrap();
            }
        }
    }
    let (sp, cp) = (dir.join("scores.csv"), dir.join("correct.csv"));
    write_scores(&s, &sp).unwrap();
    write_correctness(&c, &cp).unwrap();
    (sp, cp)
}

#[test]
fn score_tv_one_row_per_image() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_clean_set(dir.path(), 4);
    let out = dir.path().join("scores.csv");
    let r = run(&[
        "score",
        "--manifest",
        path_str(&manifest),
        "--images",
        path_str(dir.path()),
        "--out",
        path_str(&out),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let t = load_scores(&out).unwrap();
    assert_eq!(t.len(), 4);
    assert!(t.records().iter().all(|r| r.metric == "tv" && r.value > 0.0));
}

#[test]
fn score_logits_three_rows_per_image_and_alignment() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_clean_set(dir.path(), 3);
    let logits = dir.path().join("logits.npy");
    write_npy_file(
        &TensorF32::new(
            3,
            4,
            vec![2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 5.0, -1.0, 0.5],
        )
        .unwrap(),
        &logits,
    )
    .unwrap();
    let out = dir.path().join("scores.csv");
    let r = run(&[
        "score",
        "--manifest",
        path_str(&manifest),
        "--logits",
        path_str(&logits),
        "--out",
        path_str(&out),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let t = load_scores(&out).unwrap();
    assert_eq!(t.len(), 9);
    assert_eq!(t.metrics(), vec!["tg.q_p", "tg.q_h", "tg.q_l"]);

    let bad = dir.path().join("bad.npy");
    write_npy_file(&TensorF32::new(2, 4, vec![0.0; 8]).unwrap(), &bad).unwrap();
    let r = run(&[
        "score",
        "--manifest",
        path_str(&manifest),
        "--logits",
        path_str(&bad),
        "--out",
        path_str(&out),
    ]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("2 rows but manifest has 3"), "{}", r.stderr);
}

#[test]
fn score_zsclip_from_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_clean_set(dir.path(), 2);
    let (z, w) = (dir.path().join("z.npy"), dir.path().join("w.npy"));
    write_npy_file(
        &TensorF32::new(2, 3, vec![3.0, 4.0, 0.0, 0.0, 0.0, 2.0]).unwrap(),
        &z,
    )
    .unwrap();
    write_npy_file(
        &TensorF32::new(2, 3, vec![0.0, 0.0, 1.0, 0.6, 0.8, 0.0]).unwrap(),
        &w,
    )
    .unwrap();
    let out = dir.path().join("s.csv");
    let r = run(&[
        "score",
        "--manifest",
        path_str(&manifest),
        "--embeddings",
        path_str(&z),
        "--text-weights",
        path_str(&w),
        "--out",
        path_str(&out),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let t = load_scores(&out).unwrap();
    let q_l = t.for_metric("zsclip.q_l");
    assert!((q_l[&RecordKey::new("img00000", "clean", 0)] - 1.0).abs() < 1e-6);
}

#[test]
fn report_writes_csv_json_and_one_circle_per_group() {
    let dir = tempfile::tempdir().unwrap();
    let (s, c) = seventy_five_groups(dir.path(), true);
    let out = dir.path().join("report");
    let args = [
        "report",
        "--scores",
        path_str(&s),
        "--correctness",
        path_str(&c),
        "--resamples",
        "200",
        "--permutations",
        "200",
        "--out",
        path_str(&out),
    ];
    let r = run(&args);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let svg = std::fs::read_to_string(out.join("scatter_m1_net.svg")).unwrap();
    assert_eq!(svg.matches("<circle").count(), 75);
    let csv = std::fs::read_to_string(out.join("correlation.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..2], ["m1", "net"]);
    // Group mean q is accuracy plus a constant, so PLCC is exactly 1.
    let plcc: f64 = row[10].parse().unwrap();
    assert!((plcc - 1.0).abs() < 1e-9, "{plcc}");
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("predictability.json")).unwrap()).unwrap();
    assert_eq!(json[0]["metric"], "m1");
    assert!(json[0]["auc"].as_f64().unwrap() > 0.5);

    // Re-running overwrites with identical bytes.
    let first = std::fs::read(out.join("correlation.csv")).unwrap();
    let first_json = std::fs::read(out.join("predictability.json")).unwrap();
    assert_eq!(run(&args).code, 0);
    assert_eq!(std::fs::read(out.join("correlation.csv")).unwrap(), first);
    assert_eq!(
        std::fs::read(out.join("predictability.json")).unwrap(),
        first_json
    );
}

#[test]
fn report_single_group_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = ScoreTable::new();
    let mut c = CorrectnessTable::new();
    for i in 0..20 {
        let key = RecordKey::new(&format!("i{i}"), "clean", 0);
        s.push(key.clone(), "tv", f64::from(i)).unwrap();
        c.push(key, "net", u8::from(i % 3 == 0)).unwrap();
    }
    let (sp, cp) = (dir.path().join("s.csv"), dir.path().join("c.csv"));
    write_scores(&s, &sp).unwrap();
    write_correctness(&c, &cp).unwrap();
    let r = run(&[
        "report",
        "--scores",
        path_str(&sp),
        "--correctness",
        path_str(&cp),
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("need at least 3 groups, got 1"), "{}", r.stderr);
}

#[test]
fn predict_with_labels_and_per_image() {
    let dir = tempfile::tempdir().unwrap();
    let (s, c) = seventy_five_groups(dir.path(), true);
    let m = qualaudit::tensor_io::DatasetManifest::new(
        (0..4)
            .map(|i| {
                qualaudit::tensor_io::ManifestEntry::clean(format!("img{i}"), format!("img{i}.pgm"), i % 2)
            })
            .collect(),
    )
    .unwrap();
    let mp = dir.path().join("m.jsonl");
    std::fs::write(&mp, manifest_to_string(&m)).unwrap();
    let out = dir.path().join("p");
    let r = run(&[
        "predict",
        "--scores",
        path_str(&s),
        "--correctness",
        path_str(&c),
        "--manifest",
        path_str(&mp),
        "--folds",
        "2",
        "--per-image",
        "--resamples",
        "50",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("predictability.json")).unwrap()).unwrap();
    assert!(json[0]["mauc"].as_f64().is_some());
    assert!(json[0]["per_image"]["evaluated"].as_u64().unwrap() > 0);
    assert!(!out.join("correlation.csv").exists());
}

#[test]
fn mixture_sweep_counts_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let mp = dir.path().join("clean.jsonl");
    std::fs::write(&mp, manifest_to_string(&common::clean_manifest(1000))).unwrap();
    let out = dir.path().join("mix");
    let r = run(&[
        "mixture",
        "--manifest",
        path_str(&mp),
        "--sweep",
        "1..3",
        "--severities",
        "1,2,3",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    for (n, expected) in [(1, 10), (2, 20), (3, 30)] {
        let m = load_manifest(&out.join(format!("mixture_pc{n:03}.jsonl"))).unwrap();
        assert_eq!(m.iter().filter(|e| !e.is_clean()).count(), expected);
        assert!(m.iter().all(|e| e.severity <= 3));
    }
    let r = run(&[
        "mixture",
        "--manifest",
        path_str(&mp),
        "--severities",
        "",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(r.code, 2);
    let r = run(&[
        "mixture",
        "--manifest",
        path_str(&mp),
        "--p-c",
        "1.5",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(r.code, 2);
}

#[test]
fn mixture_auc_flat_under_constant_signal() {
    let dir = tempfile::tempdir().unwrap();
    let n = 5000;
    let clean = common::clean_manifest(n);
    let mp = dir.path().join("clean.jsonl");
    std::fs::write(&mp, manifest_to_string(&clean)).unwrap();
    let kinds = ["gaussian_noise", "contrast"];
    let mut s = ScoreTable::new();
    let mut c = CorrectnessTable::new();
    let mut i = 0u64;
    for e in clean.iter() {
        let mut variants = vec![("clean".to_string(), 0u8)];
        for k in kinds {
            variants.extend((1..=3).map(|sev| (k.to_string(), sev)));
        }
        for (kind, sev) in variants {
            i += 1;
            let u = qualaudit::rng::unit_from_key(qualaudit::rng::key_index(1, i));
            let v = qualaudit::rng::unit_from_key(qualaudit::rng::key_index(2, i));
            let key = RecordKey::new(&e.image_id, &kind, sev);
            s.push(key.clone(), "q", u).unwrap();
            c.push(key, "net", u8::from(v < 1.0 / (1.0 + (-4.0 * (u - 0.5)).exp())))
                .unwrap();
        }
    }
    let (sp, cp) = (dir.path().join("s.csv"), dir.path().join("c.csv"));
    write_scores(&s, &sp).unwrap();
    write_correctness(&c, &cp).unwrap();
    let out = dir.path().join("mix");
    let r = run(&[
        "mixture",
        "--manifest",
        path_str(&mp),
        "--corruptions",
        "gaussian_noise,contrast",
        "--severities",
        "1,2,3",
        "--sweep",
        "1..3",
        "--scores",
        path_str(&sp),
        "--correctness",
        path_str(&cp),
        "--resamples",
        "50",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let csv = std::fs::read_to_string(out.join("auc_vs_pc.csv")).unwrap();
    let aucs: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(4).unwrap().parse().unwrap())
        .collect();
    assert_eq!(aucs.len(), 3);
    let mean = aucs.iter().sum::<f64>() / 3.0;
    assert!(aucs.iter().all(|a| (a - mean).abs() <= 0.02), "{aucs:?}");
    assert!(out.join("auc_vs_pc_q_net.svg").exists());
}

#[test]
fn corrupt_subcommand_and_missing_image() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_clean_set(dir.path(), 3);
    let out = dir.path().join("out");
    let r = run(&[
        "corrupt",
        "--manifest",
        path_str(&manifest),
        "--images",
        path_str(dir.path()),
        "--corruptions",
        "gaussian_blur",
        "--severities",
        "1",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let m = load_manifest(&out.join("manifest.jsonl")).unwrap();
    assert!(m.iter().all(|e| std::path::Path::new(&e.path).exists()));

    std::fs::remove_file(dir.path().join("img00002.pgm")).unwrap();
    let r = run(&[
        "corrupt",
        "--manifest",
        path_str(&manifest),
        "--images",
        path_str(dir.path()),
        "--out",
        path_str(&out),
    ]);
    assert_eq!(r.code, 3);
    assert!(r.stderr.contains("img00002.pgm"), "{}", r.stderr);
}

#[test]
fn dag_exit_codes() {
    let r = run(&["dag", "check", "--n", "0"]);
    assert_eq!(r.code, 0, "{}", r.stdout);
    assert_eq!(r.stdout.matches("PASS").count(), 8);
    let r = run(&["dag", "--n", "0", "--claim", "baseline:Q:M:X=false"]);
    assert_eq!(r.code, 1);
    assert!(r.stdout.contains("FAIL"));
    let r = run(&["dag", "--n", "0", "--claim", "baseline:Q:NOPE:X=true"]);
    assert_eq!(r.code, 2);
}

#[test]
fn simulate_and_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("frame.csv");
    let cfg = dir.path().join("run.ini");
    std::fs::write(
        &cfg,
        format!(
            "[common]\nseed = 4\n\n[simulate]\nn = 12\nout = {}\n",
            out.display()
        ),
    )
    .unwrap();
    let r = run(&["--config", path_str(&cfg), "simulate", "--scm", "shared_z_sim"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 13);
    assert!(text.lines().next().unwrap().contains('Z'));

    std::fs::write(&cfg, "[simulate]\nnonsense = 1\n").unwrap();
    let r = run(&["--config", path_str(&cfg), "simulate", "--out", path_str(&out)]);
    assert_eq!(r.code, 2);
    let r = run(&[
        "--config",
        path_str(&dir.path().join("absent.ini")),
        "simulate",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(r.code, 3);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["frobnicate"]).code, 2);
    assert_eq!(run(&["simulate", "--scm", "nope", "--out", "/dev/null"]).code, 2);
    assert_eq!(run(&["--help"]).code, 0);
}
