use std::path::Path;
use std::process::{Command, Output};

fn regress(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_regress"));
    cmd.args(args).env_remove("REGRESS_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&regress(&[], &[])), 1);
    assert_eq!(code(&regress(&["solve", "--solver", "lasso", "--data", "x.csv"], &[])), 1);
    assert_eq!(code(&regress(&["--help"], &[])), 0);
}

#[test]
fn gen_solve_audit_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let truth = dir.path().join("truth.txt");
    let out = regress(
        &[
            "gen", "--n", "500", "--d", "3", "--sigma", "0.1", "--override", "project=false", "--override",
            "noise=gaussian", "--out", path(&data), "--truth", path(&truth),
        ],
        &[],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&data).unwrap();
    assert!(text.starts_with("x0,x1,x2,y\n"));
    assert_eq!(text.lines().count(), 501);

    let out = regress(
        &["solve", "--solver", "ols", "--data", path(&data), "--truth", path(&truth)],
        &[],
    );
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let err: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("error = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(err < 0.05, "{stdout}");

    let out = regress(
        &["audit", "--data", path(&data), "--alpha", "0.1", "--truth", path(&truth), "--sigma", "0.1", "--trials", "20"],
        &[],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().filter(|l| l.starts_with("rho")).count(), 4);
}

#[test]
fn missing_data_is_a_runtime_failure() {
    let out = regress(&["solve", "--solver", "ols", "--data", "/nonexistent/data.csv"], &[]);
    assert_eq!(code(&out), 2);
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "n = 100\nfrobnicate = yes\n").unwrap();
    let out = regress(&["run", "--config", path(&cfg)], &[]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn run_writes_csv_and_honours_seed_env() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(
        &cfg,
        "d = 3\nn = 300\nsigma = 0.2\nproject = false\nnoise = gaussian\nsolvers = ols, sgd\nrepetitions = 2\nseed = 1\n",
    )
    .unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let c = dir.path().join("c.csv");
    assert_eq!(code(&regress(&["run", "--config", path(&cfg), "--out", path(&a)], &[])), 0);
    assert_eq!(
        code(&regress(&["run", "--config", path(&cfg), "--out", path(&b), "--override", "seed=2"], &[])),
        0
    );
    assert_eq!(
        code(&regress(&["run", "--config", path(&cfg), "--out", path(&c)], &[("REGRESS_SEED", "2")])),
        0
    );
    let strip = |p: &Path| {
        std::fs::read_to_string(p)
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect::<Vec<_>>()
    };
    let (ra, rb, rc) = (strip(&a), strip(&b), strip(&c));
    assert_eq!(ra[0], "solver,n,kappa,sigma,alpha_corrupt,seed,error");
    assert_eq!(ra.len(), 1 + 2 * (2 + 2));
    assert_ne!(ra, rb);
    assert_eq!(rb, rc);
    assert_eq!(code(&regress(&["run", "--config", path(&cfg)], &[("REGRESS_SEED", "abc")])), 1);
}
