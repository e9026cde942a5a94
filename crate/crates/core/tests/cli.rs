use std::path::Path;
use std::process::{Command, Output};

use lcbp::bench::read_records;
use lcbp::io::load_factor_graph;

fn lcbp(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lcbp")).args(args).current_dir(dir).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn gen_writes_both_formats_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = lcbp(&["gen", "--n", "10", "--seed", "4", "--out", "g.fg", "--pairwise", "g.pw"], dir.path());
    assert!(o.status.success());
    let fg = std::fs::read_to_string(dir.path().join("g.fg")).unwrap();
    assert!(fg.starts_with("# manifest family=regular N=10 d=3"));
    assert!(fg.contains("seed=4"));
    let g = load_factor_graph(dir.path().join("g.fg")).unwrap();
    assert_eq!(g.num_vars(), 10);
    assert_eq!(g.num_factors(), 10 + 15);
    let pw = std::fs::read_to_string(dir.path().join("g.pw")).unwrap();
    let model = lcbp::cumulant::PairwiseBinaryModel::parse(&pw).unwrap();
    assert_eq!(model.edges().count(), 15);
}

#[test]
fn gen_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = lcbp(&["gen", "--family", "kfactor", "--n", "12", "--m", "10", "--seed", "9"], dir.path());
    let b = lcbp(&["gen", "--family", "kfactor", "--n", "12", "--m", "10", "--seed", "9"], dir.path());
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn exact_and_run_print_one_line_per_variable() {
    let dir = tempfile::tempdir().unwrap();
    assert!(lcbp(&["gen", "--n", "8", "--out", "g.fg"], dir.path()).status.success());
    let ex = lcbp(&["exact", "g.fg"], dir.path());
    assert!(ex.status.success());
    let exact: Vec<Vec<f64>> = stdout(&ex)
        .lines()
        .map(|l| l.split_whitespace().skip(1).map(|t| t.parse().unwrap()).collect())
        .collect();
    assert_eq!(exact.len(), 8);
    for method in ["bp", "lcbp", "mf", "lcbp-cum", "lcbp-cum-lin", "exact"] {
        let o = lcbp(&["run", "g.fg", "--method", method], dir.path());
        assert!(o.status.success(), "{method}");
        let text = stdout(&o);
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with(&format!("# method {method} converged")));
        for (l, e) in lines.zip(&exact) {
            let p: Vec<f64> = l.split_whitespace().skip(1).map(|t| t.parse().unwrap()).collect();
            assert!((p[0] + p[1] - 1.0).abs() < 1e-9);
            // loose: mean field on a β = 0.5 instance is still within this
            assert!((p[0] - e[0]).abs() < 0.2, "{method}");
        }
    }
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(lcbp(&["run", "missing.fg"], dir.path()).status.code(), Some(1));
    assert_eq!(lcbp(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(lcbp(&["gen", "--d", "2"], dir.path()).status.code(), Some(1));
    std::fs::write(dir.path().join("bad.fg"), "1\n\n2\n0 1\n2 2\n4\n0 1\n").unwrap();
    let o = lcbp(&["exact", "bad.fg"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"));
    assert_eq!(lcbp(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn capacity_and_degeneracy_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    // a single 25-ary factor exceeds the exact-inference table limit
    let mut text = String::from("1\n\n25\n");
    text.push_str(&(0..25).map(|i| i.to_string()).collect::<Vec<_>>().join(" "));
    text.push('\n');
    text.push_str(&vec!["2"; 25].join(" "));
    text.push_str("\n1\n0 1.0\n");
    std::fs::write(dir.path().join("big.fg"), text).unwrap();
    assert_eq!(lcbp(&["exact", "big.fg"], dir.path()).status.code(), Some(2));
    std::fs::write(dir.path().join("zero.fg"), "1\n\n1\n0\n2\n0\n").unwrap();
    assert_eq!(lcbp(&["exact", "zero.fg"], dir.path()).status.code(), Some(2));
}

#[test]
fn bench_csv_is_deterministic_without_timing() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("suite.toml"), "n = 10\nbeta = 0.8\nseeds = \"0..3\"\nmethods = [\"bp\", \"lcbp\"]\n").unwrap();
    let args = ["bench", "--config", "suite.toml", "--methods", "bp,lcbp,lcbp-cum", "--threads", "1", "--no-timing"];
    let a = lcbp(&[&args[..], &["--out", "a.csv"]].concat(), dir.path());
    let b = lcbp(&[&args[..], &["--out", "b.csv"]].concat(), dir.path());
    assert!(a.status.success() && b.status.success());
    assert!(String::from_utf8_lossy(&a.stderr).contains("lcbp-cum"));
    let ca = std::fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(ca, std::fs::read(dir.path().join("b.csv")).unwrap());
    let recs = read_records(&ca[..]).unwrap();
    assert_eq!(recs.len(), 9);
    assert!(recs.iter().all(|r| r.n == 10 && r.wall_seconds == 0.0));
}

#[test]
fn bench_rejects_unknown_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("suite.toml"), "nodes = 10\n").unwrap();
    assert_eq!(lcbp(&["bench", "--config", "suite.toml"], dir.path()).status.code(), Some(1));
}
