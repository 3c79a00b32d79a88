use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
[problem]
kind = "latent_aware"

[candidates]
n = 120
seed = 11

[campaign]
q = 2
n_bo_iterations = 2
seeds = [1]
arms = ["sa", "baseline"]

[optimizer]
n_iterations = 200

[baseline]
n_restarts = 2
max_local_iters = 40

[gp]
restarts = 2
max_iters = 50

[qehvi]
n_mc_samples = 32
"#;

fn moboa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moboa"))
        .args(args)
        .env_remove("MOBOA_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> =
        fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    v.sort();
    v
}

#[test]
fn hv_of_two_point_front() {
    let dir = tempfile::tempdir().unwrap();
    let front = write(dir.path(), "front.csv", "y1,y2\n1,2\n2,1\n");
    let o = moboa(&["hv", s(&front), "--reference", "0,0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "3");
}

#[test]
fn hv_empty_body_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let front = write(dir.path(), "front.csv", "y1,y2\n");
    let o = moboa(&["hv", s(&front), "--reference", "0,0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "0");
}

#[test]
fn hv_reference_dominating_everything_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let front = write(dir.path(), "front.csv", "1,2\n2,1\n");
    let o = moboa(&["hv", s(&front), "--reference", "5,5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "0");
}

#[test]
fn hv_accepts_negative_reference() {
    let dir = tempfile::tempdir().unwrap();
    let front = write(dir.path(), "front.csv", "0,0\n");
    let o = moboa(&["hv", s(&front), "--reference", "-1,-2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "2");
}

#[test]
fn hv_parse_error_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let front = write(dir.path(), "front.csv", "y1,y2\n1,2\n2,abc\n");
    let o = moboa(&["hv", s(&front), "--reference", "0,0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn missing_config_exits_2_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let o = moboa(&["run", "--config", s(&missing), "--out", s(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.toml"), "{}", stderr(&o));
}

#[test]
fn unknown_field_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &format!("{SMALL}\n[extra]\nx = 1\n"));
    let o = moboa(&["run", "--config", s(&cfg), "--out", s(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn invalid_value_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let o = moboa(&["run", "--config", s(&cfg), "--out", s(&dir.path().join("out")), "--override", "optimizer.alpha=1.5"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn run_writes_outputs_and_echoes_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let out = dir.path().join("out");
    let o = moboa(&[
        "run",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--override",
        "optimizer.alpha=0.99",
        "--override",
        "campaign.arms=[\"sa\"]",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let listed = files(&out);
    for f in ["sa_seed1.csv", "sa_aggregate.csv", "sa_evaluations.csv", "convergence.svg", "manifest.json", "result.json"]
    {
        assert!(listed.contains(&f.to_string()), "missing {f} in {listed:?}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["optimizer"]["alpha"].as_f64(), Some(0.99));
    for f in manifest["outputs"].as_array().unwrap() {
        assert!(out.join(f.as_str().unwrap()).exists(), "listed output {f} missing");
    }
}

#[test]
fn compare_runs_both_arms_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let out = dir.path().join("out");
    let o = moboa(&[
        "compare",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--seeds",
        "1,2,3,4,5",
        "--override",
        "campaign.n_bo_iterations=1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("sa final mean hypervolume"), "{text}");
    assert!(text.contains("baseline final mean hypervolume"), "{text}");
    assert!(text.contains("relative difference"), "{text}");
    let listed = files(&out);
    for arm in ["sa", "baseline"] {
        let n = listed.iter().filter(|f| f.starts_with(&format!("{arm}_seed")) && f.ends_with(".csv")).count();
        assert_eq!(n, 5, "{listed:?}");
    }
    assert!(listed.contains(&"comparison.csv".to_string()));
    let svg = fs::read_to_string(out.join("convergence.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);

    // Both arms see the same candidate set for a given seed.
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let seeds = manifest["seeds"].as_array().unwrap();
    assert_eq!(seeds.len(), 5);
    assert!(seeds.iter().all(|s| s["candidate_seed"].as_u64().is_some()));

    let cov = dir.path().join("cov");
    let o = moboa(&["coverage", s(&out), "--out", s(&cov)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let listed = files(&cov);
    // Latent-Aware has two objectives: 2 arms x 2 histograms + 2 fronts.
    assert_eq!(listed.iter().filter(|f| f.contains("_hist_y")).count(), 4, "{listed:?}");
    assert_eq!(listed.iter().filter(|f| f.ends_with("_front.csv")).count(), 2, "{listed:?}");
    let hist = fs::read_to_string(cov.join("sa_hist_y1.csv")).unwrap();
    let total: usize = hist.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
    let evals = fs::read_to_string(out.join("sa_evaluations.csv")).unwrap().lines().count() - 1;
    assert_eq!(total, evals);
}

#[test]
fn compare_requires_both_arms() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let o = moboa(&[
        "compare",
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("out")),
        "--override",
        "campaign.arms=[\"sa\"]",
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn coverage_without_evaluations_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = moboa(&["coverage", s(dir.path()), "--out", s(&dir.path().join("cov"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = moboa(&["compare", "--config", s(&cfg), "--out", s(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let listed = files(&a);
    assert_eq!(listed, files(&b));
    for f in listed.iter().filter(|f| f.as_str() != "timings.json") {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs between reruns");
    }
}

#[test]
fn default_seed_applies_only_without_config_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let no_seeds = SMALL.replace("seeds = [1]\n", "").replace("arms = [\"sa\", \"baseline\"]", "arms = [\"sa\"]");
    let cfg = write(dir.path(), "c.toml", &no_seeds);
    let out = dir.path().join("out");
    let o = Command::new(env!("CARGO_BIN_EXE_moboa"))
        .args(["run", "--config", s(&cfg), "--out", s(&out), "--override", "campaign.n_bo_iterations=1"])
        .env("MOBOA_SEED", "42")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("sa_seed42.csv").exists(), "{:?}", files(&out));

    let cfg = write(dir.path(), "d.toml", &SMALL.replace("arms = [\"sa\", \"baseline\"]", "arms = [\"sa\"]"));
    let out = dir.path().join("out2");
    let o = Command::new(env!("CARGO_BIN_EXE_moboa"))
        .args(["run", "--config", s(&cfg), "--out", s(&out), "--override", "campaign.n_bo_iterations=1"])
        .env("MOBOA_SEED", "42")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("sa_seed1.csv").exists(), "{:?}", files(&out));
}

#[test]
fn table_problem_runs_and_missing_table_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("x1,x2,y1,y2\n");
    for i in 0..30 {
        let a = i as f64 / 29.0;
        let b = ((i * 7) % 30) as f64 / 29.0;
        csv.push_str(&format!("{a},{b},{},{}\n", a * (1.0 - b), (1.0 - a) * b + 0.1 * a));
    }
    write(dir.path(), "table.csv", &csv);
    let cfg = r#"
[problem]
kind = "table"
path = "table.csv"
n_inputs = 2

[campaign]
n_init = 6
q = 3
n_bo_iterations = 2
seeds = [1]

[optimizer]
variant = "parallel"
n_iterations = 100
n_chains = 3

[gp]
restarts = 2
max_iters = 50
"#;
    let cfg_path = write(dir.path(), "t.toml", cfg);
    let out = dir.path().join("out");
    let o = moboa(&["run", "--config", s(&cfg_path), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("sa_evaluations.csv")).unwrap().lines().count(), 1 + 6 + 3 * 2);

    fs::remove_file(dir.path().join("table.csv")).unwrap();
    let o = moboa(&["run", "--config", s(&cfg_path), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("table.csv"), "{}", stderr(&o));
}

#[test]
fn shipped_profiles_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../profiles");
    for name in ["zdt1", "dtlz2", "kursawe", "latent_aware"] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = root.join(format!("{name}.toml"));
        let o = moboa(&[
            "run",
            "--config",
            s(&cfg),
            "--out",
            s(dir.path()),
            "--seeds",
            "1",
            "--override",
            "campaign.n_bo_iterations=0",
            "--override",
            "candidates.n=100",
        ]);
        assert!(o.status.success(), "{name}: {}", stderr(&o));
    }
}
