use std::path::Path;
use std::process::{Command, Output};

use oscp::calibration::ConformalPredictor;
use oscp::selector::quantile_index;

fn oscp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oscp")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn generate(dir: &Path, name: &str, extra: &[&str]) -> String {
    let out = dir.join(name);
    let mut args = vec!["generate", "--out", p(&out)];
    args.extend_from_slice(extra);
    let o = oscp(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    out.to_str().unwrap().to_string()
}

#[test]
fn solve_toy_instance() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy.json");
    std::fs::write(&data, r#"{"d":1,"T":2,"N":4,"series":[[[1],[1]],[[2],[3]],[[3],[2]],[[5],[5]]]}"#).unwrap();
    let lp = dir.path().join("toy.lp");
    let o = oscp(&["solve", "--data", p(&data), "--p1", "3", "--export-lp", p(&lp)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("cost=6\n"));
    assert!(std::fs::read_to_string(&lp).unwrap().contains("Minimize"));

    for extra in [&["--no-prune"][..], &["--brute-force"][..]] {
        let mut args = vec!["solve", "--data", p(&data), "--p1", "3"];
        args.extend_from_slice(extra);
        let o = oscp(&args);
        assert!(stdout(&o).contains("cost=6\n"), "{}", stdout(&o));
    }

    let o = oscp(&["solve", "--data", p(&data), "--p1", "2"]);
    assert!(stdout(&o).contains("cost=5\n"));
}

#[test]
fn solve_reports_node_limit() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "d.json", &["-d", "2", "--horizon", "6", "--count", "40", "--seed", "2"]);
    let o = oscp(&["solve", "--data", &data, "--p1", "30", "--no-prune", "--node-limit", "1"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stdout(&o).contains("optimal=false"));
}

#[test]
fn pruned_and_unpruned_solve_agree() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "d.json", &["-d", "3", "--horizon", "4", "--count", "30", "--seed", "9"]);
    let a = oscp(&["solve", "--data", &data, "--p1", "25"]);
    let b = oscp(&["solve", "--data", &data, "--p1", "25", "--no-prune"]);
    let cost = |o: &Output| stdout(o).lines().next().unwrap().to_string();
    assert_eq!(cost(&a), cost(&b));
}

#[test]
fn fit_writes_consistent_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "cal.json", &["-d", "2", "--horizon", "5", "--count", "60", "--seed", "1"]);
    let art = dir.path().join("p.json");
    let o = oscp(&["fit", "--data", &data, "--epsilon", "0.2", "--out", p(&art), "--seed", "4"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("p1="));
    let predictor = ConformalPredictor::from_json_str(&std::fs::read_to_string(&art).unwrap()).unwrap();
    assert_eq!(predictor.p1, quantile_index(0.2, predictor.n1).unwrap());
    assert_eq!(predictor.p2, quantile_index(0.2, predictor.n2).unwrap());
    assert!(predictor.created_at.is_some());
}

#[test]
fn fit_is_byte_identical_without_timestamp() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(
        dir.path(),
        "cal.csv",
        &["-d", "2", "--horizon", "4", "--count", "40", "--model", "ar1", "--ar-coefficient", "-0.3"],
    );
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for out in [&a, &b] {
        let o = oscp(&[
            "fit",
            "--data",
            &data,
            "--epsilon",
            "0.25",
            "--norm",
            "ellipsoid",
            "--no-timestamp",
            "--out",
            p(out),
        ]);
        assert_eq!(o.status.code(), Some(0));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn fit_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "small.json", &["-d", "2", "--horizon", "3", "--count", "20"]);
    let out = dir.path().join("p.json");
    let o = oscp(&["fit", "--data", &data, "--epsilon", "0.001", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("need n >="));

    let one = generate(dir.path(), "one.json", &["-d", "1", "--horizon", "3", "--count", "20"]);
    let o = oscp(&["fit", "--data", &one, "--epsilon", "0.3", "--norm", "ellipsoid", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());

    let o = oscp(&["fit", "--data", &data, "--epsilon", "2", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));

    let o = oscp(&["fit", "--data", p(&dir.path().join("missing.json")), "--epsilon", "0.3", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn evaluate_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cal = generate(dir.path(), "cal.json", &["-d", "2", "--horizon", "4", "--count", "80", "--seed", "1"]);
    let truth = generate(dir.path(), "truth.json", &["-d", "2", "--horizon", "4", "--count", "50", "--seed", "2"]);
    let zero = generate(dir.path(), "zero.json", &["-d", "2", "--horizon", "4", "--count", "50", "--sigma", "0"]);
    let art = dir.path().join("p.json");
    oscp(&["fit", "--data", &cal, "--epsilon", "0.2", "--out", p(&art)]);

    let report = dir.path().join("r.json");
    let o =
        oscp(&["evaluate", "--predictor", p(&art), "--test-nominal", &zero, "--test-true", &zero, "--out", p(&report)]);
    assert_eq!(o.status.code(), Some(0));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["coverage"], 1.0);

    let csv = dir.path().join("grid.csv");
    let o = oscp(&[
        "evaluate",
        "--predictor",
        p(&art),
        "--test-nominal",
        &zero,
        "--test-true",
        &truth,
        "--out",
        p(&report),
        "--csv",
        p(&csv),
        "--epsilon-grid",
        "0.05:0.5:10",
        "--data",
        &cal,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 11);
    assert!(text.starts_with("epsilon,coverage,total_volume,avg_radius,solve_nodes,solve_millis"));

    let sweep_out = dir.path().join("sweep.csv");
    let o = oscp(&[
        "sweep",
        "--data",
        &cal,
        "--test-nominal",
        &zero,
        "--test-true",
        &truth,
        "--epsilon-grid",
        "0.1:0.3:3",
        "--norm",
        "l1",
        "--out",
        p(&sweep_out),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(&sweep_out).unwrap().lines().count(), 4);

    let empty = dir.path().join("empty.json");
    std::fs::write(&empty, r#"{"d":2,"T":4,"N":0,"series":[]}"#).unwrap();
    let o = oscp(&[
        "evaluate",
        "--predictor",
        p(&art),
        "--test-nominal",
        p(&empty),
        "--test-true",
        p(&empty),
        "--out",
        p(&report),
    ]);
    assert_eq!(o.status.code(), Some(2));

    let short = generate(dir.path(), "short.json", &["-d", "2", "--horizon", "3", "--count", "50"]);
    let o = oscp(&[
        "evaluate",
        "--predictor",
        p(&art),
        "--test-nominal",
        &short,
        "--test-true",
        &short,
        "--out",
        p(&report),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn predict_residuals_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let cal = generate(dir.path(), "cal.json", &["-d", "2", "--horizon", "3", "--count", "40"]);
    let truth = generate(dir.path(), "truth.json", &["-d", "2", "--horizon", "3", "--count", "5", "--seed", "7"]);
    let nominal = generate(dir.path(), "nominal.json", &["-d", "2", "--horizon", "3", "--count", "5", "--seed", "8"]);
    let art = dir.path().join("p.json");
    oscp(&["fit", "--data", &cal, "--epsilon", "0.3", "--out", p(&art)]);

    let regions = dir.path().join("regions.json");
    let o = oscp(&["predict", "--predictor", p(&art), "--nominal", &nominal, "--out", p(&regions)]);
    assert_eq!(o.status.code(), Some(0));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&regions).unwrap()).unwrap();
    assert_eq!(json["radii"].as_array().unwrap().len(), 3);
    assert_eq!(json["N"], 5);

    let res = dir.path().join("res.csv");
    let o = oscp(&["residuals", "--truth", &truth, "--nominal", &nominal, "--out", p(&res)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(std::fs::read_to_string(&res).unwrap().starts_with("series_id,t,dim_0,dim_1"));

    let back = dir.path().join("back.json");
    let o = oscp(&["export", "--data", p(&res), "--out", p(&back)]);
    assert_eq!(o.status.code(), Some(0));
    let o = oscp(&["residuals", "--truth", &truth, "--nominal", p(&back), "--out", p(&dir.path().join("x.json"))]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn usage_and_help() {
    assert_eq!(oscp(&[]).status.code(), Some(1));
    assert_eq!(oscp(&["solve"]).status.code(), Some(1));
    let help = oscp(&["evaluate", "--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(stdout(&help).contains("start:end:count"));
}
