use std::fs;
use std::process::{Command, Output};

fn fairmine(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairmine"))
        .args(args)
        .env_remove("FAIRMINE_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn analytic_subcommands() {
    let o = fairmine(&["winprob", "--shares", "0.2,0.8"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "0.125,0.875\n");

    assert_eq!(stdout(&fairmine(&["drift", "--z", "0.5"])), "0\n");

    let o = fairmine(&[
        "oracle",
        "--protocol",
        "mlpos",
        "--a",
        "0.5",
        "--reward",
        "1",
        "--blocks",
        "2",
    ]);
    assert_eq!(stdout(&o), "lambda,prob\n0,0.375\n0.5,0.25\n1,0.375\n");

    let o = fairmine(&[
        "limit",
        "--a",
        "0.2",
        "--reward",
        "0.01",
        "--epsilon",
        "0.1",
    ]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let unfair = v["unfair"].as_f64().unwrap();
    assert!(unfair > 0.55 && unfair < 0.7, "{unfair}");
}

#[test]
fn bounds_subcommand() {
    let o = fairmine(&[
        "bounds",
        "--theorem",
        "pow",
        "--a",
        "0.2",
        "--epsilon",
        "0.1",
        "--delta",
        "0.1",
    ]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["minimal_n"], 3745);

    let o = fairmine(&[
        "bounds",
        "--theorem",
        "mlpos",
        "--a",
        "0.2",
        "--reward",
        "0.01",
    ]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["satisfied"], false);

    let o = fairmine(&["bounds", "--theorem", "cpos", "--n", "0", "--a", "0.2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn exit_codes() {
    assert_eq!(fairmine(&[]).status.code(), Some(2));
    assert_eq!(
        fairmine(&[
            "simulate",
            "--protocol",
            "bogus",
            "--shares",
            "1",
            "--blocks",
            "1"
        ])
        .status
        .code(),
        Some(2)
    );
    assert_eq!(
        fairmine(&["winprob", "--shares", "0.5,abc"]).status.code(),
        Some(2)
    );
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no/such/dir/out.csv");
    let o = fairmine(&[
        "simulate",
        "--protocol",
        "pow",
        "--shares",
        "0.2,0.8",
        "--blocks",
        "10",
        "--trials",
        "2",
        "--out",
        missing.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn normalization_warning() {
    let o = fairmine(&["winprob", "--shares", "1,4"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "0.125,0.875\n");
    assert!(String::from_utf8_lossy(&o.stderr).contains("normalizing"));
}

#[test]
fn simulate_outputs_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("r.csv");
    let json = dir.path().join("r.json");
    let common = [
        "simulate",
        "--protocol",
        "mlpos",
        "--shares",
        "0.2,0.8",
        "--reward",
        "0.01",
        "--blocks",
        "300",
        "--trials",
        "40",
        "--seed",
        "42",
    ];
    let mut a = common.to_vec();
    a.extend(["--out", csv.to_str().unwrap()]);
    assert!(fairmine(&a).status.success());
    let mut b = common.to_vec();
    b.extend(["--out", json.to_str().unwrap()]);
    assert!(fairmine(&b).status.success());

    let csv_text = fs::read_to_string(&csv).unwrap();
    assert!(csv_text.starts_with("n,mean,stderr,p05,p95,unfair_prob\n"));
    assert!(!csv_text.contains('\r'));
    let report = fairmine::FairnessReport::from_json(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report.to_csv(), csv_text);
}

#[test]
fn thread_count_does_not_change_output() {
    let args = [
        "simulate",
        "--protocol",
        "cpos",
        "--shares",
        "0.2,rest:3",
        "--reward",
        "0.01",
        "--inflation",
        "0.1",
        "--shards",
        "8",
        "--blocks",
        "200",
        "--trials",
        "60",
        "--seed",
        "3",
    ];
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_fairmine"))
            .args(args)
            .env("FAIRMINE_THREADS", threads)
            .output()
            .unwrap()
    };
    let one = run("1");
    let four = run("4");
    assert!(one.status.success());
    assert_eq!(one.stdout, four.stdout);
    assert_eq!(run("zero").status.code(), Some(2));
}

#[test]
fn trial_dump_reproduces_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("trials.csv");
    let o = fairmine(&[
        "simulate",
        "--protocol",
        "slpos",
        "--shares",
        "0.2,0.8",
        "--blocks",
        "100",
        "--trials",
        "101",
        "--seed",
        "8",
        "--format",
        "json",
        "--dump-trials",
        dump.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let report = fairmine::FairnessReport::from_json(&stdout(&o)).unwrap();

    let text = fs::read_to_string(&dump).unwrap();
    let mut lines = text.lines();
    let header: Vec<u64> = lines
        .next()
        .unwrap()
        .split(',')
        .skip(1)
        .map(|t| t.parse().unwrap())
        .collect();
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').skip(1).map(|t| t.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 101);
    for (ci, stats) in report.checkpoints.iter().enumerate() {
        assert_eq!(stats.t, header[ci]);
        let mut col: Vec<f64> = rows.iter().map(|r| r[ci]).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        assert_eq!(mean, stats.mean);
        col.sort_by(f64::total_cmp);
        // nearest rank: ceil(0.05 * 101) = 6, ceil(0.95 * 101) = 96
        assert_eq!(col[5], stats.p05);
        assert_eq!(col[95], stats.p95);
        let unfair = col
            .iter()
            .filter(|&&l| !(0.18 - 1e-12..=0.22 + 1e-12).contains(&l))
            .count() as f64
            / 101.0;
        assert_eq!(unfair, stats.unfair_prob);
    }
}
