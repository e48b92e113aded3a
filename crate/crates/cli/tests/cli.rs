use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use certrom::affine::build_benchmark;
use certrom::config::RunConfig;
use certrom::sensitivity::solve_state;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_certrom"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("certrom-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Data rows of a CSV written by the CLI, with the header row first.
fn table(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn column(rows: &[Vec<String>], name: &str) -> String {
    let k = rows[0]
        .iter()
        .position(|c| c == name)
        .unwrap_or_else(|| panic!("no column {name}"));
    rows[1][k].clone()
}

fn e0(level: u32, dir: &Path) -> f64 {
    let out = dir.join(format!("level{level}"));
    let o = run(&[
        "solve",
        "--mesh-level",
        &level.to_string(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    column(&table(&out.join("output.csv")), "e0").parse().unwrap()
}

#[test]
fn missing_config_is_a_usage_error_naming_the_path() {
    let path = "/definitely/not/here/run.toml";
    let o = run(&["solve", "--config", path]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(path), "{}", stderr(&o));
}

#[test]
fn malformed_config_reports_the_line() {
    let dir = scratch("badkey");
    let path = dir.join("run.toml");
    std::fs::write(&path, "seed = 3\n[geometry]\nmesh_levle = 2\n").unwrap();
    let o = run(&["solve", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["optimize", "--mode", "sideways"]).status.code(), Some(1));
    assert_eq!(run(&["solve", "--mesh-level", "0"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn solve_matches_the_library() {
    let dir = scratch("solve");
    let o = run(&["solve", "--mesh-level", "2", "--out", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));

    let mut cfg = RunConfig::default();
    cfg.geometry.mesh_level = 2;
    let (model, mesh) = build_benchmark(&cfg.geometry).unwrap();
    let p = cfg.solve_point();
    assert_eq!(p, model.reference);
    assert_eq!(cfg.solve.phi, vec![90.0]);
    let u = solve_state(&model, &p, &cfg.solve.phi, cfg.optimization.solve_tol).unwrap();
    let expected = format!("{:.14e}", model.output.dot(&u));

    let rows = table(&dir.join("output.csv"));
    assert_eq!(column(&rows, "e0"), expected);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains(&format!("E0 = {expected}")), "{stdout}");

    let field = table(&dir.join("solution.csv"));
    assert_eq!(field[0], ["node", "x", "y", "u"]);
    assert_eq!(field.len() - 1, mesh.num_nodes());
}

#[test]
fn refinement_shrinks_the_output_change_fourfold() {
    let dir = scratch("refine");
    let e: Vec<f64> = (1..=4).map(|l| e0(l, &dir)).collect();
    for w in e.windows(3) {
        let ratio = (w[1] - w[0]).abs() / (w[2] - w[1]).abs();
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio} from {w:?}");
    }
}

#[test]
fn headers_carry_units_and_config_hash() {
    let dir = scratch("headers");
    let o = run(&["pod-study", "--mesh-level", "1", "--out", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut cfg = RunConfig::default();
    cfg.geometry.mesh_level = 1;
    cfg.output_dir = dir.clone();
    for name in ["pod_spectrum.csv", "pod_random.csv"] {
        let text = std::fs::read_to_string(dir.join(name)).unwrap();
        assert!(text.contains(&format!("# config_hash: {}", cfg.hash())), "{name}");
        assert!(text.lines().any(|l| l.starts_with("# units:")), "{name}");
    }
}

#[test]
fn same_config_and_seed_give_identical_files() {
    let a = scratch("det-a");
    let b = scratch("det-b");
    for dir in [&a, &b] {
        for verb in ["pod-study", "error-study"] {
            let o = run(&[verb, "--mesh-level", "1", "--seed", "7", "--out", dir.to_str().unwrap()]);
            assert!(o.status.success(), "{}", stderr(&o));
        }
        let o = run(&[
            "optimize",
            "--mode",
            "robust-quad",
            "--backend",
            "rom",
            "--mesh-level",
            "1",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 5);
    for name in names {
        let (x, y) = (
            std::fs::read(a.join(&name)).unwrap(),
            std::fs::read(b.join(&name)).unwrap(),
        );
        assert!(x == y, "{name:?} differs");
    }

    let c = scratch("det-c");
    let o = run(&[
        "pod-study",
        "--mesh-level",
        "1",
        "--seed",
        "8",
        "--out",
        c.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_ne!(
        std::fs::read(a.join("pod_random.csv")).unwrap(),
        std::fs::read(c.join("pod_random.csv")).unwrap()
    );
}

fn summary(mode: &str, backend: &str, dir: &Path) -> Vec<Vec<String>> {
    let o = run(&[
        "optimize",
        "--mode",
        mode,
        "--backend",
        backend,
        "--mesh-level",
        "2",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{mode} {backend}: {}", stderr(&o));
    table(&dir.join(format!("summary_{mode}_{backend}.csv")))
}

#[test]
fn optimize_volume_ordering_and_solve_counts() {
    let dir = scratch("optimize");
    let value = |rows: &[Vec<String>], c: &str| -> f64 { column(rows, c).parse().unwrap() };

    let nominal = summary("nominal", "full", &dir);
    assert!(value(&nominal, "volume_change") < 0.0);
    let lin = summary("robust-lin", "full", &dir);
    let quad = summary("robust-quad", "full", &dir);
    let (vn, vl, vq) = (value(&nominal, "volume"), value(&lin, "volume"), value(&quad, "volume"));
    assert!(vn <= vl && vl <= vq, "{vn} {vl} {vq}");
    assert!(value(&quad, "e0_worst_case") >= value(&quad, "target") - 1e-3);

    for (mode, full) in [("nominal", &nominal), ("robust-quad", &quad)] {
        let rom = summary(mode, "rom", &dir);
        assert_eq!(column(&rom, "converged"), "true");
        assert!(value(&rom, "full_solves") < value(full, "full_solves"), "{mode}");
        assert!((value(&rom, "volume") - value(full, "volume")).abs() <= 1e-2 * value(full, "volume"));
    }
    assert!(dir.join("trace_nominal_rom.csv").exists());
    assert!(dir.join("history_nominal_full.csv").exists());
}
