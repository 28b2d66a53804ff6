use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_onesided"));
    c.env_remove("LEVY_ONESIDED_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("onesided-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

/// Parse a CSV written by the CLI into header and numeric-or-text rows.
fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let j = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[j].parse().unwrap()).collect()
}

fn lambda_values(o: &Output) -> Vec<f64> {
    stdout(o)
        .lines()
        .skip(1)
        .map(|l| {
            let cells: Vec<&str> = l.split_whitespace().collect();
            cells[cells.len() - 2].parse().unwrap()
        })
        .collect()
}

#[test]
fn cir_symbol_value() {
    let o = run(&["symbol", "--catalog", "cir", "--params", "a=2,b=1,sigma=1", "--x", "1", "--xi", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    // a(b − x)ξ − ½σ²xξ² at x = ξ = 1
    let expected = 2.0 * (1.0 - 1.0) * 1.0 - 0.5 * 1.0 * 1.0 * 1.0;
    assert_eq!(lambda_values(&o), vec![expected]);

    let o = run(&["symbol", "--catalog", "cir", "--x", "1", "--xi", "0"]);
    assert_eq!(lambda_values(&o), vec![0.0]);
}

#[test]
fn absorbed_bm_symbol() {
    let out = scratch("absorbed");
    let o = run(&["symbol", "--catalog", "absorbed_bm", "--x", "0,1", "--xi", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(lambda_values(&o), vec![0.0, -4.5]);
    let (header, rows) = read_csv(&out.join("symbol.csv"));
    assert_eq!(header, ["x", "xi", "lambda", "provenance"]);
    assert_eq!(column(&header, &rows, "lambda"), vec![0.0, -4.5]);
    assert_eq!(rows[0][3], "closed_form");
}

#[test]
fn check_exit_codes() {
    let o = run(&["check", "--catalog", "cir", "--params", "a=2,b=1,sigma=1", "--measure", "gamma:4,4"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let o = run(&["check", "--catalog", "verhulst", "--params", "a=1,sigma=1", "--measure", "gamma:2,2"]);
    assert_eq!(code(&o), 1, "{}", stdout(&o));
}

#[test]
fn wrong_gamma_residual_is_pinned() {
    let out = scratch("gamma34");
    let o = run(&["check", "--catalog", "cir", "--measure", "gamma:3,4", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("check.json")).unwrap()).unwrap();
    let max_r = report["candidates"][0]["report"]["max_r"].as_f64().unwrap();
    assert!((max_r - 0.5896246308765595).abs() < 1e-9, "{max_r}");
    assert_eq!(report["verdict"], "not_invariant");
}

#[test]
fn fit_recovers_cir_gamma() {
    let out = scratch("fit");
    let o = run(&["fit", "--catalog", "cir", "--family", "gamma", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("fit.json")).unwrap()).unwrap();
    let params = &report["fit"]["params"];
    let shape = params[0][1].as_f64().unwrap();
    let rate = params[1][1].as_f64().unwrap();
    assert!((shape - 4.0).abs() < 1e-4 && (rate - 4.0).abs() < 1e-4, "{params}");
}

#[test]
fn cir_ode_matches_gamma_transform() {
    let out = scratch("ode");
    let o = run(&["ode", "--catalog", "cir", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (header, rows) = read_csv(&out.join("ode.csv"));
    let xi = column(&header, &rows, "xi");
    let psi = column(&header, &rows, "psi");
    let err = xi
        .iter()
        .zip(&psi)
        .map(|(x, p)| (p - (4.0 / (4.0 + x)).powi(4)).abs())
        .fold(0.0, f64::max);
    assert!(err <= 1e-8, "{err}");
}

#[test]
fn ergodic_cir_estimate() {
    let o = run(&["simulate", "--catalog", "cir", "--ergodic", "--xi", "1", "--seed", "11"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let line = stdout(&o).lines().nth(1).unwrap().to_string();
    let cells: Vec<f64> = line.split_whitespace().take(3).map(|c| c.parse().unwrap()).collect();
    let (psi, se) = (cells[1], cells[2]);
    assert!((psi - 0.4096).abs() <= 3.0 * se, "{psi} ± {se}");
}

#[test]
fn reports_are_byte_identical() {
    let a = scratch("det-a");
    let b = scratch("det-b");
    for dir in [&a, &b] {
        let o = run(&["check", "--catalog", "cir", "--measure", "gamma:4,4", "--out", dir.to_str().unwrap()]);
        assert_eq!(code(&o), 0);
        let o = run(&["simulate", "--catalog", "cir", "--ergodic", "--xi", "0.5,1", "--seed", "5", "--out", dir.to_str().unwrap()]);
        assert_eq!(code(&o), 0);
    }
    for f in ["check.json", "residuals.csv", "ergodic.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("check.json")).unwrap()).unwrap();
    assert_eq!(report["meta"]["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn config_hash_tracks_parameters() {
    let hash = |params: &str| {
        let dir = scratch(&format!("hash-{}", params.replace([',', '='], "_")));
        run(&["check", "--catalog", "cir", "--params", params, "--measure", "gamma:4,4", "--out", dir.to_str().unwrap()]);
        let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("check.json")).unwrap()).unwrap();
        report["meta"]["config_hash"].as_str().unwrap().to_string()
    };
    assert_ne!(hash("a=2"), hash("a=3"));
}

#[test]
fn config_file_matches_catalog() {
    let cfg = configs().join("cir_sde.json");
    let o = run(&["symbol", "--config", cfg.to_str().unwrap(), "--x", "1", "--xi", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(lambda_values(&o), vec![-0.5]);
    let o = run(&["check", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
}

#[test]
fn shipped_configs_load() {
    for f in ["cir_sde", "cbi_jumps", "subordinated_stable", "ou_bijection", "verhulst"] {
        let cfg = configs().join(format!("{f}.json"));
        let o = run(&["symbol", "--config", cfg.to_str().unwrap(), "--x", "0.5", "--xi", "1"]);
        assert_eq!(code(&o), 0, "{f}: {}", stderr(&o));
    }
}

#[test]
fn config_errors_exit_2_with_path() {
    let dir = scratch("bad-config");
    std::fs::create_dir_all(&dir).unwrap();
    let cases = [
        (r#"{"name":"m","model":{"kind":"catalog","entry":"cir"},"grid":{"xi_min":1,"xi_max":2,"n_points":3,"extra":1}}"#, "grid.extra"),
        (
            r#"{"name":"m","model":{"kind":"sde"},"driver":{"drift":[1]},"phi":[["2*(1 - x) +"]]}"#,
            "phi[0][0]",
        ),
        (
            r#"{"name":"m","model":{"kind":"sde"},"driver":{"drift":[0],"levy_measure":{"variant":"gamma","shape":1,"rate":1}},"phi":[["1"]]}"#,
            "driver.cutoff",
        ),
        (r#"{"name":"m","model":{"kind":"catalog","entry":"cir","params":{"q":1}}}"#, "model"),
    ];
    for (i, (text, path)) in cases.iter().enumerate() {
        let f = dir.join(format!("c{i}.json"));
        std::fs::write(&f, text).unwrap();
        let o = run(&["check", "--config", f.to_str().unwrap(), "--measure", "gamma:1,1"]);
        assert_eq!(code(&o), 2, "case {i}: {}", stderr(&o));
        assert!(stderr(&o).contains(path), "case {i}: {}", stderr(&o));
    }
    let o = run(&["symbol", "--catalog", "nope"]);
    assert_eq!(code(&o), 2);
    let o = run(&["symbol", "--catalog", "cir", "--x", "-1"]);
    assert_eq!(code(&o), 2);
    let o = bin().args(["symbol", "--catalog", "cir"]).env("LEVY_ONESIDED_THREADS", "many").output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn threads_flag_and_env_are_accepted() {
    let o = run(&["symbol", "--catalog", "cir", "--threads", "1"]);
    assert_eq!(code(&o), 0);
    let o = bin().args(["symbol", "--catalog", "cir"]).env("LEVY_ONESIDED_THREADS", "1").output().unwrap();
    assert_eq!(code(&o), 0);
}

#[test]
fn catalog_lists_entries() {
    let o = run(&["catalog"]);
    assert_eq!(code(&o), 0);
    let s = stdout(&o);
    for name in ["cir", "verhulst", "cbi", "gou", "absorbed_bm", "subordinator", "ou"] {
        assert!(s.lines().any(|l| l.starts_with(name)), "{name}");
    }
    let o = run(&["catalog", "--catalog", "verhulst"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["name"], "verhulst");
}

#[test]
fn affine_ode_has_closed_form_column() {
    let out = scratch("cbi");
    let o = run(&["ode", "--catalog", "cbi", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (header, rows) = read_csv(&out.join("ode.csv"));
    let psi = column(&header, &rows, "psi");
    let closed = column(&header, &rows, "psi_closed_form");
    let xi = column(&header, &rows, "xi");
    for ((p, c), x) in psi.iter().zip(&closed).zip(&xi) {
        assert!((p - c).abs() < 1e-8);
        // Gamma(2, 2) transform
        assert!((p - (2.0 / (2.0 + x)).powi(2)).abs() < 1e-8);
    }
}

#[test]
fn subordinator_ode_has_no_solution() {
    let o = run(&["ode", "--catalog", "subordinator", "--params", "kind=gamma"]);
    assert_eq!(code(&o), 1, "{}{}", stdout(&o), stderr(&o));
}
