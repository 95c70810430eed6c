use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use twist_cli::config::{CompareConfig, NoiseConfig, ObservableConfig};
use twist_cli::ExperimentConfig;

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.run.samples = 2000;
    cfg.run.steps = vec![0, 1, 10, 100];
    cfg.oracle.horizon = 200;
    cfg.envelope.horizon = 40;
    cfg.envelope.samples = 300;
    cfg.envelope.window = 5;
    cfg.clt.replicas = 400;
    cfg.clt.covariance_replicas = 400;
    cfg.clt.ladder = vec![8, 40];
    cfg.clt.fit_lags = 5;
    cfg.counterexample.ladder = vec![10, 100];
    cfg.nonresonance.grid_points = 20;
    cfg
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, cfg.to_toml()).unwrap();
    path
}

fn twist(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_twist")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn run(cmd: &str, cfg: &ExperimentConfig, out: &Path, extra: &[&str]) -> (i32, String) {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), cfg);
    let mut args = vec![cmd, "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    twist(&args)
}

fn read_json(path: PathBuf) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn presets() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut files: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files
}

#[test]
fn config_round_trip_is_identity() {
    let mut configs = vec![ExperimentConfig::default(), small_config()];
    for preset in presets() {
        configs.push(ExperimentConfig::parse(&fs::read_to_string(preset).unwrap()).unwrap());
    }
    let mut resonant = small_config();
    resonant.noise = NoiseConfig::Resonant { c: 0.1, k: 2, reference_action: Some(0.5) };
    resonant.observable = ObservableConfig::FourierMode { k: 2, power: 1.5 };
    resonant.compare = CompareConfig { z_threshold: 3.0, oracle_c: Some(0.2) };
    configs.push(resonant);
    for cfg in configs {
        let text = cfg.to_toml();
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml(), text);
        assert_eq!(back.hash(), cfg.hash());
    }
}

#[test]
fn presets_cover_the_reference_experiments() {
    let names: Vec<String> = presets()
        .iter()
        .map(|p| p.file_stem().unwrap().to_string_lossy().into_owned())
        .collect();
    for want in ["paper_fig1", "paper_fig3_c005", "paper_fig3_c01", "paper_fig3_c02", "paper_clt", "counterexample"] {
        assert!(names.iter().any(|n| n == want), "missing preset {want}");
    }
    let clt = ExperimentConfig::parse(&fs::read_to_string(presets().into_iter().find(|p| p.ends_with("paper_clt.toml")).unwrap()).unwrap()).unwrap();
    assert_eq!(clt.observable, ObservableConfig::ICos);
    assert_eq!(clt.clt.replicas, 100_000);
    assert_eq!(clt.clt.full_scale_replicas, 1_000_000);
}

#[test]
fn invalid_configs_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        "schema_version = 2\n",
        "schema_version = 1\n[run]\nsamples = 0\n",
        "schema_version = 1\n[run]\nbogus = 3\n",
        "schema_version = 1\n[density]\nkind = \"gaussian\"\nq0 = 1.0\np0 = 0.0\neps0 = 0.0\n",
        "schema_version = 1\n[run]\nsteps = [10, 1]\n",
    ];
    for (i, text) in cases.iter().enumerate() {
        let path = tmp.path().join(format!("bad{i}.toml"));
        fs::write(&path, text).unwrap();
        let out = tmp.path().join(format!("out{i}"));
        let (code, err) = twist(&["oracle", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code, 2, "case {i}: {err}");
    }
    assert_eq!(twist(&["no-such-command"]).0, 2);
    assert_eq!(twist(&["oracle", "--threads", "0"]).0, 2);
}

#[test]
fn unwritable_output_is_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let (code, err) = run("check-nonresonance", &small_config(), &blocker.join("sub"), &[]);
    assert_eq!(code, 4);
    assert!(err.contains("file"), "{err}");
}

#[test]
fn outputs_are_byte_identical_across_thread_counts() {
    let mut cfg = small_config();
    cfg.noise = NoiseConfig::Brownian { c: 0.1 };
    let mut clt_cfg = small_config();
    clt_cfg.observable = ObservableConfig::ICos;
    clt_cfg.noise = NoiseConfig::Brownian { c: 0.2 };
    let mut ce_cfg = small_config();
    ce_cfg.observable = ObservableConfig::ICos;
    ce_cfg.noise = NoiseConfig::Resonant { c: 0.1, k: 1, reference_action: None };
    let jobs = [
        ("simulate", &cfg),
        ("oracle", &cfg),
        ("compare", &cfg),
        ("clt", &clt_cfg),
        ("covariance", &clt_cfg),
        ("counterexample", &ce_cfg),
        ("check-nonresonance", &cfg),
    ];
    for (cmd, cfg) in jobs {
        let tmp = tempfile::tempdir().unwrap();
        let mut dirs = Vec::new();
        for threads in ["1", "4", "4"] {
            let out = tmp.path().join(format!("t{threads}-{}", dirs.len()));
            let (code, _) = run(cmd, cfg, &out, &["--threads", threads]);
            assert!(code == 0 || code == 3, "{cmd} exited {code}");
            dirs.push(out);
        }
        let mut names: Vec<_> = fs::read_dir(&dirs[0]).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert!(names.len() >= 2, "{cmd} wrote {names:?}");
        for other in &dirs[1..] {
            for name in &names {
                let a = fs::read(dirs[0].join(name)).unwrap();
                let b = fs::read(other.join(name)).unwrap();
                assert!(a == b, "{cmd}: {name:?} differs");
            }
        }
    }
}

#[test]
fn csv_headers_carry_hash_and_seed() {
    let cfg = small_config();
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    assert_eq!(run("simulate", &cfg, &out, &["--seed", "77"]).0, 0);
    let mut effective = cfg.clone();
    effective.run.master_seed = 77;
    let header = format!("# config_hash={} master_seed=77 command=simulate", effective.hash());
    for j in &cfg.run.steps {
        let text = fs::read_to_string(out.join(format!("phase_t{j}.csv"))).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), header);
        assert_eq!(lines.next().unwrap(), "q,p,I,theta");
        assert_eq!(lines.count(), cfg.run.samples);
    }
    let means = fs::read_to_string(out.join("ensemble_means.csv")).unwrap();
    assert_eq!(means.lines().nth(1).unwrap(), "j,re_mean,im_mean,stderr_re,stderr_im,centroid_norm");
    let row: Vec<&str> = means.lines().nth(2).unwrap().split(',').collect();
    let digits = row[1].split('e').next().unwrap().replace(['-', '.'], "");
    assert_eq!(digits.len(), 17);
    let summary = read_json(out.join("simulate_summary.json"));
    assert_eq!(summary["master_seed"], 77);
    assert_eq!(summary["energy"]["reference_level_within_spread"], true);
}

#[test]
fn single_sample_simulation_runs() {
    let mut cfg = small_config();
    cfg.run.samples = 1;
    cfg.envelope.samples = 1;
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("one");
    assert_eq!(run("simulate", &cfg, &out, &[]).0, 0);
    let text = fs::read_to_string(out.join("phase_t100.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn compare_passes_and_catches_a_wrong_intensity() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.noise = NoiseConfig::Brownian { c: 0.1 };
    assert_eq!(run("compare", &cfg, &tmp.path().join("ok"), &[]).0, 0);

    cfg.run.samples = 100;
    assert_eq!(run("compare", &cfg, &tmp.path().join("small"), &[]).0, 0);

    cfg.run.samples = 2000;
    cfg.compare.oracle_c = Some(0.3);
    let out = tmp.path().join("fault");
    assert_eq!(run("compare", &cfg, &out, &[]).0, 3);
    let report = read_json(out.join("compare_report.json"));
    assert_eq!(report["pass"], false);
    assert!(report["max_abs_z"].as_f64().unwrap() > 20.0);

    cfg.compare.oracle_c = None;
    cfg.run.samples = 50;
    assert_eq!(run("compare", &cfg, &tmp.path().join("tiny"), &[]).0, 2);
}

#[test]
fn oracle_reports_limit_and_gates_truncation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let out = tmp.path().join("det");
    assert_eq!(run("oracle", &cfg, &out, &[]).0, 0);
    let summary = read_json(out.join("oracle_summary.json"));
    assert!(summary["limit_value"]["abs"].as_f64().unwrap() < 1e-10);
    let cesaro = fs::read_to_string(out.join("oracle_cesaro.csv")).unwrap();
    assert_eq!(cesaro.lines().nth(1).unwrap(), "N,re,im,abs");
    assert_eq!(cesaro.lines().count(), 2 + 200);

    let mut edge = small_config();
    edge.observable = ObservableConfig::FourierMode { k: 16, power: 1.0 };
    let out = tmp.path().join("edge");
    assert_eq!(run("oracle", &edge, &out, &[]).0, 3);
    assert!(out.join("oracle_means.csv").exists());
}

#[test]
fn clt_checks_observable_and_replicas() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.noise = NoiseConfig::Brownian { c: 0.2 };
    assert_eq!(run("clt", &cfg, &tmp.path().join("complex"), &[]).0, 2);

    cfg.observable = ObservableConfig::ICos;
    cfg.clt.replicas = 50;
    assert_eq!(run("clt", &cfg, &tmp.path().join("few"), &[]).0, 2);

    cfg.observable = ObservableConfig::Constant { value: 0.0 };
    cfg.clt.replicas = 400;
    let out = tmp.path().join("zero");
    assert_eq!(run("clt", &cfg, &out, &[]).0, 0);
    let report = read_json(out.join("clt_report.json"));
    assert_eq!(report["degenerate"], true);
    assert_eq!(report["covariance"]["sigma_star2"], 0.0);
    let samples = fs::read_to_string(out.join("clt_samples_N40.csv")).unwrap();
    assert!(samples.lines().skip(2).all(|l| l.split(',').nth(1) == Some("0.0000000000000000e0")));
}

#[test]
fn counterexample_requires_resonance() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.observable = ObservableConfig::ICos;
    cfg.noise = NoiseConfig::Brownian { c: 0.1 };
    assert_eq!(run("counterexample", &cfg, &tmp.path().join("b"), &[]).0, 2);

    cfg.noise = NoiseConfig::Resonant { c: 0.1, k: 0, reference_action: None };
    assert_eq!(run("counterexample", &cfg, &tmp.path().join("k0"), &[]).0, 2);

    cfg.noise = NoiseConfig::Resonant { c: 0.1, k: 1, reference_action: None };
    let out = tmp.path().join("ok");
    assert_eq!(run("counterexample", &cfg, &out, &[]).0, 0);
    let report = read_json(out.join("counterexample_report.json"));
    assert_eq!(report["modal_constant"], true);
    assert_eq!(report["non_convergence_detected"], true);
}

#[test]
fn nonresonance_report_for_reference_model() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("nr");
    assert_eq!(run("check-nonresonance", &small_config(), &out, &[]).0, 0);
    let report = read_json(out.join("nonresonance_report.json"));
    assert_eq!(report["k_max"], 8);
    assert!(report["worst_margin"].as_f64().unwrap() > 0.0);
}
