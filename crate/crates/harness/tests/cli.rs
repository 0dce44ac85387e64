use std::path::Path;
use std::process::{Command, Output};

use pdmd_harness::read_records;

fn pdmd(args: &[&str], env_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pdmd"));
    cmd.args(args);
    match env_dir {
        Some(d) => cmd.env("PDMD_OUTPUT_DIR", d),
        None => cmd.env_remove("PDMD_OUTPUT_DIR"),
    };
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL_CONFIG: &str = r#"format_version = 1
base_seed = 5
dimensions = [20, 40]
algorithms = ["cold_sgd", "warm_sgd", "pda_exact"]
trials = 2
eval_samples = 300
output = "nested/run.csv"

[grid]
learning_rates = [0.5, 2.0]
clip_norms = [1.0]
epochs = [3]

[grid.learning_rate_overrides]
pda_exact = [1e4]

[synth]
n_private = 200
nnz_first_block = 3
nnz_last_block = 6
"#;

#[test]
fn calibrate_prints_sigma() {
    let o = pdmd(&["calibrate", "--eps", "1", "--delta", "1e-5", "--clip", "1", "--steps", "100", "--n", "1000"], None);
    assert!(o.status.success());
    let sigma: f64 = stdout(&o).trim().parse().unwrap();
    assert!((sigma - 0.095970).abs() < 1e-6);
}

#[test]
fn calibrate_rejects_bad_budget() {
    let o = pdmd(&["calibrate", "--eps", "0", "--delta", "1e-5", "--clip", "1", "--steps", "100", "--n", "1000"], None);
    assert!(!o.status.success());
    assert!(!o.stderr.is_empty());
}

#[test]
fn simulate_missing_config_names_the_path() {
    let o = pdmd(&["simulate", "--config", "missing.file"], None);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.file"));
}

#[test]
fn simulate_then_summarize() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.toml");
    std::fs::write(&config, SMALL_CONFIG).unwrap();
    let out = dir.path().join("run.csv");
    let o = pdmd(&["simulate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let records = read_records(std::fs::File::open(&out).unwrap()).unwrap();
    // 2 dimensions × 2 trials × (2 + 2 + 1 grid points).
    assert_eq!(records.len(), 20);
    assert!(records.iter().all(|r| r.wall_ms == 0));

    let summary_csv = dir.path().join("summary.csv");
    let o = pdmd(&["summarize", "--in", out.to_str().unwrap(), "--out", summary_csv.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 6, "{text}");
    assert!(rows.iter().any(|r| r.starts_with("pda_exact") && r.contains(" 40 ")));
    let summary = std::fs::read_to_string(summary_csv).unwrap();
    assert_eq!(summary.lines().count(), 7);
    assert!(summary.starts_with("algorithm,p,lr,clip,epochs,alpha_K,trials,mean_loss,ci_half_width"));
}

#[test]
fn output_dir_env_redirects_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.toml");
    std::fs::write(&config, SMALL_CONFIG.replace("trials = 2", "trials = 1")).unwrap();
    let target = dir.path().join("redirected");
    let o = pdmd(&["simulate", "--config", config.to_str().unwrap()], Some(&target));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(target.join("run.csv").exists());
    assert!(!dir.path().join("nested").exists());

    let o = pdmd(&["stability", "--p", "5", "--samples", "200", "--out", "stab.csv"], Some(&target));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stab = std::fs::read_to_string(target.join("stab.csv")).unwrap();
    assert!(stab.starts_with("direction_id,analytic,mc,samples,rel_err"));
    assert_eq!(stab.lines().count(), 1 + 5 + 4);
}

#[test]
fn gen_data_writes_split() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    let o = pdmd(&["gen-data", "--p", "200", "--n-private", "50", "--seed", "3", "--out-dir", out.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let public = std::fs::read_to_string(out.join("public.csv")).unwrap();
    assert_eq!(public.lines().count(), 1 + 300);
    assert!(public.lines().next().unwrap().ends_with("x_199,y"));
    let private = std::fs::read_to_string(out.join("private.csv")).unwrap();
    assert_eq!(private.lines().count(), 1 + 50);
    let star = std::fs::read_to_string(out.join("theta_star.csv")).unwrap();
    assert_eq!(star.lines().count(), 1 + 200);
}

#[test]
fn fedsim_writes_round_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fed.csv");
    let o = pdmd(
        &["fedsim", "--p", "200", "--clients", "20", "--public-clients", "2", "--rounds", "3", "--clients-per-round", "4", "--out", out.to_str().unwrap()],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out).unwrap();
    assert!(text.starts_with("round,train_loss,eval_loss,alpha,sigma"));
    assert_eq!(text.lines().count(), 1 + 4);
}

#[test]
fn summarize_rejects_foreign_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("other.csv");
    std::fs::write(&path, "a,b\n1,2\n").unwrap();
    let o = pdmd(&["summarize", "--in", path.to_str().unwrap()], None);
    assert!(!o.status.success());
}

#[test]
fn shipped_configs_are_valid() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["desk_scale.toml", "smoke.toml"] {
        let spec = pdmd_harness::ExperimentSpec::from_file(&root.join(name)).unwrap();
        assert!(spec.trials >= 1, "{name}");
    }
}
