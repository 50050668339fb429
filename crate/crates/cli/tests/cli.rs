use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn examples_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples")
}

fn put_cfg() -> PathBuf {
    examples_dir().join("put.cfg")
}

fn israeli_cfg() -> PathBuf {
    examples_dir().join("israeli_put.cfg")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stopgame"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stopgame"))
        .args(args)
        .env(key, value)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes `text` into a fresh config file.
fn config(dir: &tempfile::TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn value_after(text: &str, key: &str) -> f64 {
    let line = text
        .lines()
        .find(|l| l.starts_with(key))
        .unwrap_or_else(|| panic!("no `{key}` in\n{text}"));
    line[key.len()..]
        .trim()
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn solve_put_prints_threshold_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("put.csv");
    let o = run(&["solve", path(&put_cfg()), "-o", path(&csv)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(
        stdout(&o).lines().any(|l| l == "b_star = 52.6316"),
        "{}",
        stdout(&o)
    );
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("x,y,psi,phi,WG,WH,V_scaled,V,eps_star,delta_star,region")
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4097);
    for r in &rows {
        let f: Vec<&str> = r.split(',').collect();
        assert_eq!(f.len(), 11);
        assert!(["C", "D+"].contains(&f[10]), "{r}");
        assert!(f[5].is_empty() && f[9].is_empty());
        let x: f64 = f[0].parse().unwrap();
        let v: f64 = f[7].parse().unwrap();
        assert!(v >= (100.0 - x).max(0.0) - 1e-9);
    }
}

#[test]
fn csv_is_byte_stable_and_export_matches() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    assert_eq!(
        code(&run(&["game", path(&israeli_cfg()), "-o", path(&a)])),
        0
    );
    assert_eq!(
        code(&run(&["game", path(&israeli_cfg()), "-o", path(&b)])),
        0
    );
    let first = std::fs::read(&a).unwrap();
    assert_eq!(first, std::fs::read(&b).unwrap());
    let exported = run(&["export", path(&israeli_cfg())]);
    assert_eq!(code(&exported), 0);
    assert_eq!(exported.stdout, first);
}

#[test]
fn shipped_examples_match_the_generator() {
    let dir = tempfile::tempdir().unwrap();
    for (name, file) in [("put", "put.cfg"), ("israeli-put", "israeli_put.cfg")] {
        let out = dir.path().join(file);
        let o = run(&["example", name, "--config-out", path(&out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert_eq!(
            std::fs::read(&out).unwrap(),
            std::fs::read(examples_dir().join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn israeli_put_is_a_saddle_and_twice_the_critical_penalty_is_degenerate() {
    let o = run(&["example", "israeli-put"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(
        out.lines().any(|l| l == "equilibrium = NashSaddle"),
        "{out}"
    );
    assert!(value_after(&out, "exercise-level residual =") <= 1e-8);
    let ds = value_after(&out, "closed-form delta_star =");
    assert!((value_after(&out, "delta_star =") / ds - 1.0).abs() < 1e-9);

    let d = format!("{}", 2.0 * ds);
    let o = run(&["example", "israeli-put", "--delta", &d]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(
        stdout(&o).lines().any(|l| l == "equilibrium = Degenerate"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn game_config_given_to_solve_is_a_config_error() {
    let o = run(&["solve", path(&israeli_cfg())]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("use `game`"), "{}", stderr(&o));
    let o = run(&["game", path(&put_cfg())]);
    assert_eq!(code(&o), 1);
}

#[test]
fn obstacle_order_violation_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(israeli_cfg())
        .unwrap()
        .replace("payoff.H = pos(K - x) + delta", "payoff.H = pos(K - x) - 1");
    let o = run(&["game", path(&config(&dir, "bad.cfg", &text))]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("G > H"), "{}", stderr(&o));
}

#[test]
fn forced_growth_violation_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(put_cfg())
        .unwrap()
        .replace("payoff.G = pos(K - x)", "payoff.G = pos(1 - abs(x - 50))")
        + "game.l_a = 1.0\n";
    let o = run(&["solve", path(&config(&dir, "spike.cfg", &text))]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("no finite value"), "{}", stderr(&o));
}

#[test]
fn config_errors_name_line_and_key() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(put_cfg()).unwrap() + "grid.nodes = 17\n";
    let o = run(&["solve", path(&config(&dir, "typo.cfg", &text))]);
    assert_eq!(code(&o), 1);
    let n = text.lines().count();
    assert!(
        stderr(&o).contains(&format!("line {n}: `grid.nodes`")),
        "{}",
        stderr(&o)
    );

    let o = run(&["solve", path(&dir.path().join("missing.cfg"))]);
    assert_eq!(code(&o), 1);
    let o = run(&["solve"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn verify_put_passes() {
    let o = run(&[
        "verify",
        path(&put_cfg()),
        "--paths",
        "20000",
        "--dt",
        "1e-3",
        "--seed",
        "42",
    ]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    assert!(
        stdout(&o).lines().any(|l| l == "verify: PASS"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn verify_game_runs_the_saddle_check() {
    let o = run(&[
        "verify",
        path(&israeli_cfg()),
        "--paths",
        "4000",
        "--dt",
        "1e-2",
        "--seed",
        "3",
    ]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("saddle check"), "{out}");
    assert_eq!(
        out.lines()
            .filter(|l| l.trim_start().starts_with("sigma'") || l.trim_start().starts_with("tau'"))
            .count(),
        10
    );
}

#[test]
fn verify_with_few_paths_is_inconclusive() {
    let o = run(&["verify", path(&put_cfg()), "--paths", "10"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(
        stdout(&o).lines().any(|l| l == "verify: INCONCLUSIVE"),
        "{}",
        stdout(&o)
    );
    assert!(stderr(&o).contains("warning"));
}

#[test]
fn verify_is_deterministic() {
    let cfg = put_cfg();
    let args = [
        "verify",
        path(&cfg),
        "--paths",
        "2000",
        "--dt",
        "1e-2",
        "--seed",
        "9",
    ];
    let (a, b) = (run(&args), run(&args));
    assert_eq!(code(&a), code(&b));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn exceeded_budget_exits_2() {
    let o = run_env(
        &["verify", path(&put_cfg()), "--paths", "1000"],
        "STOPGAME_BUDGET",
        "1e3",
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("budget"), "{}", stderr(&o));
}
