use std::path::Path;
use std::process::{Command, Output};

fn daal(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_daal")).args(args).current_dir(cwd).output().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

const CONFIG: &str = r#"seed = 3

[dataset]
kind = "rot-gauss"
per_class = 30

[protocol]
targets = [1, 2]
rounds = 5
budget_fraction = 0.1
reps = 2
strategies = ["daal", "random"]

[model]
hidden = [16]
feature_dim = 8

[train]
iters_full = 200

[forest]
n_trees = 10
"#;

#[test]
fn gen_is_byte_identical_and_summarises() {
    let dir = tempfile::tempdir().unwrap();
    let a = daal(&["gen", "--preset", "rot-gauss", "--seed", "7", "--out", "a.csv"], dir.path());
    ok(&a);
    ok(&daal(&["gen", "--preset", "rot-gauss", "--seed", "7", "--out", "b.csv"], dir.path()));
    let (x, y) = (std::fs::read(dir.path().join("a.csv")).unwrap(), std::fs::read(dir.path().join("b.csv")).unwrap());
    assert_eq!(x, y);
    let stdout = String::from_utf8(a.stdout).unwrap();
    assert!(stdout.contains("4 domains, 5 classes, 4000 samples, dim 16"), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("domain ")).count(), 4);
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["domain_names"][3], "rot90");

    ok(&daal(&["gen", "--preset", "rot-gauss", "--seed", "8", "--out", "c.csv"], dir.path()));
    assert_ne!(x, std::fs::read(dir.path().join("c.csv")).unwrap());
}

#[test]
fn invalid_preset_exits_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = daal(&["gen", "--preset", "moons", "--out", "a.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("moons"));
}

#[test]
fn config_errors_exit_2_and_runtime_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("over.toml"), CONFIG.replace("budget_fraction = 0.1", "budget_fraction = 0.3")).unwrap();
    let out = daal(&["run", "--config", "over.toml", "--out", "o1"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    let out = daal(&["run", "--config", "missing.toml", "--out", "o2"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(dir.path().join("typo.toml"), CONFIG.replace("rounds = 5", "rounds = 5\nroundz = 2")).unwrap();
    assert_eq!(daal(&["run", "--config", "typo.toml", "--out", "o3"], dir.path()).status.code(), Some(2));

    // Diverging training is a runtime failure.
    std::fs::write(dir.path().join("lr.toml"), CONFIG.replace("iters_full = 200", "iters_full = 200\nlr0 = 1e6")).unwrap();
    let out = daal(&["run", "--config", "lr.toml", "--out", "o4"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    std::fs::write(dir.path().join("csv.toml"), "seed = 1\n[dataset]\nkind = \"csv\"\npath = \"nope.csv\"\n[protocol]\nrounds = 2\nbudget = 5\n").unwrap();
    assert_eq!(daal(&["run", "--config", "csv.toml", "--out", "o5"], dir.path()).status.code(), Some(3));
}

#[test]
fn run_report_and_dump_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("exp.toml"), CONFIG).unwrap();
    ok(&daal(&["run", "--config", "exp.toml", "--out", "r1"], p));
    ok(&daal(&["run", "--config", "exp.toml", "--out", "r2"], p));
    for f in ["records.jsonl", "traces.jsonl", "aggregate.csv", "resolved_config.toml"] {
        assert_eq!(std::fs::read(p.join("r1").join(f)).unwrap(), std::fs::read(p.join("r2").join(f)).unwrap(), "{f}");
    }
    let records = std::fs::read_to_string(p.join("r1/records.jsonl")).unwrap();
    // 2 strategies x 2 targets x 2 reps x 5 rounds.
    assert_eq!(records.lines().count(), 40);
    assert!(!records.contains("wall_time"));
    assert_eq!(std::fs::read_to_string(p.join("r1/timings.jsonl")).unwrap().lines().count(), 40);

    // The resolved config reruns to the same records.
    ok(&daal(&["run", "--config", "r1/resolved_config.toml", "--out", "r3"], p));
    assert_eq!(records, std::fs::read_to_string(p.join("r3/records.jsonl")).unwrap());
    let resolved = std::fs::read_to_string(p.join("r1/resolved_config.toml")).unwrap();
    assert!(resolved.contains("[seeds]") && resolved.contains("\"init/t1/r0\""), "{resolved}");

    // Overrides: ERM baseline only, three reps.
    ok(&daal(&["run", "--config", "exp.toml", "--strategy", "random", "--no-weak-loss", "--reps", "3", "--out", "r4"], p));
    let agg = std::fs::read_to_string(p.join("r4/aggregate.csv")).unwrap();
    assert!(agg.lines().skip(1).all(|l| l.contains(",random,") && l.ends_with(",3")), "{agg}");
    assert_eq!(agg.lines().count(), 1 + 2 * 5);

    // Report: 2 strategies x 5 rounds, target columns plus Avg.
    ok(&daal(&["report", "--records", "r1/records.jsonl", "--out", "table.csv", "--markdown", "table.md", "--diagnostics", "diag.csv"], p));
    let table = std::fs::read_to_string(p.join("table.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "strategy,round,labeled_frac,t1,t2,Avg");
    assert_eq!(lines.len(), 11);
    // Cells equal the aggregate file.
    let agg = std::fs::read_to_string(p.join("r1/aggregate.csv")).unwrap();
    for row in agg.lines().skip(1) {
        let c: Vec<&str> = row.split(',').collect();
        let line = lines.iter().find(|l| l.starts_with(&format!("{},{},", c[1], c[2]))).unwrap();
        let col = if c[0] == "1" { 3 } else { 4 };
        assert_eq!(line.split(',').nth(col).unwrap(), c[4]);
    }
    ok(&daal(&["report", "--records", "r1/records.jsonl", "--out", "table2.csv"], p));
    assert_eq!(table, std::fs::read_to_string(p.join("table2.csv")).unwrap());
    assert!(std::fs::read_to_string(p.join("table.md")).unwrap().starts_with("| strategy | round"));
    assert_eq!(std::fs::read_to_string(p.join("diag.csv")).unwrap().lines().count(), 11);

    // Feature dumps.
    let ckpt = "r1/checkpoints/daal_t1_r0.json";
    let ids: Vec<String> = (0..100).map(|i| (i * 5).to_string()).collect();
    let ids = ids.join(",");
    ok(&daal(&["dump-features", "--checkpoint", ckpt, "--dataset", "r1/dataset.csv", "--ids", &ids, "--out", "f1.csv"], p));
    ok(&daal(&["dump-features", "--checkpoint", ckpt, "--dataset", "r1/dataset.csv", "--ids", &ids, "--out", "f2.csv"], p));
    let f1 = std::fs::read_to_string(p.join("f1.csv")).unwrap();
    assert_eq!(f1, std::fs::read_to_string(p.join("f2.csv")).unwrap());
    assert_eq!(f1.lines().count(), 101);
    assert!(f1.lines().all(|l| l.split(',').count() == 8 + 3));

    ok(&daal(&[
        "dump-features", "--checkpoint", ckpt, "--dataset", "r1/dataset.csv",
        "--plan", "r1/plans/daal_t1_r0.json", "--domain", "0", "--out", "m.csv",
    ], p));
    let plan: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p.join("r1/plans/daal_t1_r0.json")).unwrap()).unwrap();
    let subset: Vec<usize> = plan["subsets"]["0"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap() as usize).collect();
    assert_eq!(subset.len(), 4);
    let masked = std::fs::read_to_string(p.join("m.csv")).unwrap();
    for line in masked.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').skip(3).map(|v| v.parse().unwrap()).collect();
        for (j, v) in cols.iter().enumerate() {
            if !subset.contains(&j) {
                assert_eq!(*v, 0.0);
            }
        }
    }

    // Dimension mismatch between checkpoint and dataset.
    std::fs::write(p.join("small.csv"), "domain,label,f0,f1\n0,0,0.5,0.5\n0,1,0.1,0.2\n").unwrap();
    let out = daal(&["dump-features", "--checkpoint", ckpt, "--dataset", "small.csv", "--out", "x.csv"], p);
    assert_eq!(out.status.code(), Some(3));
}

fn write_idx(dir: &Path, n: usize, side: usize) {
    let mut images = vec![0, 0, 8, 3];
    let mut labels = vec![0, 0, 8, 1];
    for v in [n as u32, side as u32, side as u32] {
        images.extend(v.to_be_bytes());
    }
    labels.extend((n as u32).to_be_bytes());
    for i in 0..n {
        let class = i % 3;
        labels.push(class as u8);
        for r in 0..side {
            for c in 0..side {
                // One bright bar per class, plus a per-image offset.
                let on = match class {
                    0 => r == side / 2,
                    1 => c == side / 2,
                    _ => r == c,
                };
                images.push(if on { 200 + (i % 50) as u8 } else { (i % 7) as u8 });
            }
        }
    }
    std::fs::write(dir.join("img.idx"), images).unwrap();
    std::fs::write(dir.join("lbl.idx"), labels).unwrap();
}

#[test]
fn idx_rotated_dataset_runs() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::create_dir(p.join("cfg")).unwrap();
    write_idx(&p.join("cfg"), 60, 8);
    let config = r#"seed = 2
[dataset]
kind = "idx-rotated"
images = "img.idx"
labels = "lbl.idx"
angles = [0.0, 30.0, 60.0]
width = 8
height = 8

[protocol]
targets = [2]
rounds = 2
budget = 20
reps = 1
strategies = ["daal"]

[model]
hidden = [16]
feature_dim = 8

[train]
iters_full = 100

[forest]
n_trees = 5
"#;
    std::fs::write(p.join("cfg/exp.toml"), config).unwrap();
    ok(&daal(&["run", "--config", "cfg/exp.toml", "--out", "out"], p));
    let records = std::fs::read_to_string(p.join("out/records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 2);
    // Paths in the echo are absolute, so it reruns from anywhere.
    ok(&daal(&["run", "--config", "out/resolved_config.toml", "--out", "again"], p));
    assert_eq!(records, std::fs::read_to_string(p.join("again/records.jsonl")).unwrap());
}
