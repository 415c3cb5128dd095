//! End-to-end checks of the command-line surface.

use std::path::Path;
use std::process::Command;

fn ncc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ncc"))
}

fn write_config(dir: &Path, out_dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.txt");
    let text = format!(
        "[env]\nkind = grid\nwidth = 3\nheight = 3\nwall_prob = 0.2\ngamma = 0.9\n\n\
         [method]\nname = ncc-reg\neta_x = 0.3\nbuffer_size = 4\nbatch_levels = 3\n\
         m_per_level = 2\nnew_levels = 1\nphi_mc_batch = 4\n\n\
         [run]\niterations = 8\nseeds = 1,2\neval_cadence = 4\neval_levels = 6\n\
         eval_episodes = 2\nout_dir = {}\n\n\
         [analysis]\nepsilon = 0.05\nconstants = true\nprobe_samples = 10\n\
         cvar_alphas = 50,100\ncvar_candidates = 10\n",
        out_dir.display()
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn train_writes_artifacts_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let config = write_config(dir.path(), &out);
    let status = ncc()
        .args(["train", "--config"])
        .arg(&config)
        .arg("--quiet")
        .status()
        .unwrap();
    assert!(status.success());
    for seed in [1, 2] {
        assert!(out.join(format!("seed_{seed}/train_log.csv")).exists());
        assert!(out.join(format!("seed_{seed}/eval.csv")).exists());
        assert!(out.join(format!("seed_{seed}/cvar.csv")).exists());
    }
    assert!(out.join("summary.csv").exists());
    assert!(out.join("manifest.txt").exists());
}

#[test]
fn train_respects_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let config = write_config(dir.path(), &out);
    let status = ncc()
        .args(["train", "--config"])
        .arg(&config)
        .args(["--seed-override", "9", "--quiet"])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("seed_9").exists());
    assert!(!out.join("seed_1").exists());
}

#[test]
fn eval_and_cvar_consume_training_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let config = write_config(dir.path(), &out);
    assert!(ncc()
        .args(["train", "--config"])
        .arg(&config)
        .arg("--quiet")
        .status()
        .unwrap()
        .success());
    let policy = out.join("seed_1/policy_final.txt");
    let levels = out.join("seed_1/eval_levels.txt");
    let eval_csv = dir.path().join("eval_out.csv");
    let output = ncc()
        .args(["eval", "--policy"])
        .arg(&policy)
        .arg("--levels")
        .arg(&levels)
        .args(["--episodes", "2", "--gamma", "0.9", "--out"])
        .arg(&eval_csv)
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(String::from_utf8_lossy(&output.stdout).contains("aggregate:"));
    assert!(eval_csv.exists());

    let output = ncc()
        .args(["cvar", "--policy"])
        .arg(&policy)
        .arg("--levels")
        .arg(&levels)
        .args(["--alphas", "50,100", "--episodes", "2", "--gamma", "0.9"])
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(String::from_utf8_lossy(&output.stdout).contains("cvar"));
}

#[test]
fn constants_prints_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &dir.path().join("run"));
    let output = ncc()
        .args(["constants", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("sigma_sq"));
    assert!(stdout.contains("iteration_bound"));
    assert!(stdout.contains("eta_x"));
}

#[test]
fn project_test_passes() {
    let output = ncc()
        .args(["project-test", "--points", "200", "--max-dim", "16"])
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(String::from_utf8_lossy(&output.stdout).contains("PASS"));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "[env]\nwidht = 3\n").unwrap();
    let status = ncc()
        .args(["train", "--config"])
        .arg(&bad)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    let missing = dir.path().join("missing.txt");
    let status = ncc()
        .args(["train", "--config"])
        .arg(&missing)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let config_a = write_config(dir.path(), &out_a);
    assert!(ncc()
        .args(["train", "--config"])
        .arg(&config_a)
        .arg("--quiet")
        .status()
        .unwrap()
        .success());
    let out_b = dir.path().join("b");
    assert!(ncc()
        .args(["train", "--config"])
        .arg(&config_a)
        .arg("--out")
        .arg(&out_b)
        .arg("--quiet")
        .status()
        .unwrap()
        .success());
    for file in ["seed_1/train_log.csv", "seed_2/eval.csv", "summary.csv"] {
        let a = std::fs::read(out_a.join(file)).unwrap();
        let b = std::fs::read(out_b.join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between reruns");
    }
}

#[test]
fn compare_runs_two_methods() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cmp");
    let config = write_config(dir.path(), &out);
    let output = ncc()
        .args(["compare", "--config"])
        .arg(&config)
        .args(["--methods", "ncc-reg,dr", "--quiet"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("ncc-reg"));
    assert!(stdout.contains("dr"));
    assert!(out.join("compare.csv").exists());
}
