use std::path::Path;
use std::process::{Command, Output};

fn noiseprop(args: &[&str], envs: &[(&str, &str)], cwd: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_noiseprop"));
    cmd.args(args).current_dir(cwd);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const TEACHER: &str = "dataset = \"teacher\"\nhidden = [2, 2]\nrule = \"anp\"\nloss = \"squared_error\"\n\
optimizer = \"adam\"\neta = 1e-2\nepochs = 3\nseed = 4\nbatch_size = 10\n[noise]\nkind = \"gaussian\"\nsigma = 0.01\n";

#[test]
fn train_from_config_writes_metrics_sidecar_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), TEACHER).unwrap();
    let out = noiseprop(
        &["train", "--config", "run.toml", "--out", "out/m.csv", "--checkpoint", "out/net.npck"],
        &[],
        dir.path(),
    );
    ok(&out);
    let csv = std::fs::read_to_string(dir.path().join("out/m.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("epoch,train_loss"));
    let echo = std::fs::read_to_string(dir.path().join("out/m.json")).unwrap();
    assert!(echo.contains("\"seed\": 4"));
    let net = noiseprop::checkpoint::load(&dir.path().join("out/net.npck")).unwrap();
    assert_eq!(net.widths(), vec![2, 2, 2, 1]);
}

#[test]
fn flags_and_env_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), TEACHER).unwrap();
    let out = noiseprop(
        &["train", "--config", "run.toml", "--epochs", "7", "--set", "noise.sigma=0.05", "--dry-run"],
        &[("NOISEPROP_SEED", "99")],
        dir.path(),
    );
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg: noiseprop_harness::ExperimentConfig = toml::from_str(&text).unwrap();
    assert_eq!(cfg.epochs, 7);
    assert_eq!(cfg.seed, 99);
    assert_eq!(cfg.noise, Some(noiseprop::noise::NoiseSpec::Gaussian { sigma: 0.05 }));
}

#[test]
fn train_from_flags_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = noiseprop(
        &[
            "train", "--dataset", "teacher", "--hidden", "2,2", "--rule", "bp", "--loss", "squared_error",
            "--optimizer", "plain", "--eta", "0.01", "--epochs", "2", "--seed", "1", "--out", "bp.csv",
        ],
        &[],
        dir.path(),
    );
    ok(&out);
    assert!(dir.path().join("bp.csv").exists());
}

#[test]
fn live_flags_build_a_live_noise_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), TEACHER).unwrap();
    let out = noiseprop(
        &["train", "--config", "run.toml", "--device", "/dev/ttyACM0", "--frame", "adc_counts", "--dry-run"],
        &[("NOISEPROP_BUFFER_SIZE", "200"), ("NOISEPROP_MIN_WAIT", "0.001"), ("NOISEPROP_BAUD", "115200")],
        dir.path(),
    );
    ok(&out);
    let cfg: noiseprop_harness::ExperimentConfig = toml::from_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(
        cfg.noise,
        Some(noiseprop::noise::NoiseSpec::Live {
            buffer_size: 200,
            min_wait: 0.001
        })
    );
    assert!(matches!(
        cfg.live,
        Some(noiseprop_harness::config::LiveSource::Device { baud: Some(115200), .. })
    ));
}

#[test]
fn invalid_config_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), TEACHER.replace("eta = 1e-2", "eta = -1.0")).unwrap();
    let out = noiseprop(&["train", "--config", "run.toml"], &[], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("eta"));
}

#[test]
fn sweep_writes_points_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let grid = format!(
        "[base]\n{}\n[[axis]]\nname = \"eta\"\nvalues = [1e-2, 1e-3]\n",
        TEACHER.replace("[noise]", "[base.noise]")
    );
    std::fs::write(dir.path().join("grid.toml"), grid).unwrap();
    let out = noiseprop(&["sweep", "grid.toml", "--threads", "2", "--out", "sw"], &[], dir.path());
    ok(&out);
    for f in ["point_0000.csv", "point_0001.csv", "point_0000.json", "summary.csv", "envelopes.csv"] {
        assert!(dir.path().join("sw").join(f).exists(), "{f}");
    }
    assert!(String::from_utf8_lossy(&out.stdout).contains("best point"));
}

#[test]
fn characterize_spec_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("hmm.toml"),
        "kind = \"hmm\"\np_flip = 0.0809\nmu1 = 0.048\nmu2 = 0.0362\nsigma_obs = 0.001\n",
    )
    .unwrap();
    let out = noiseprop(
        &["characterize", "--spec", "hmm.toml", "--steps", "100000", "--rate", "40000", "--out", "ch", "--max-lag", "20"],
        &[],
        dir.path(),
    );
    ok(&out);
    let hist = std::fs::read_to_string(dir.path().join("ch/histogram.csv")).unwrap();
    assert!(hist.starts_with("bin_center,count\n"));
    let acf = std::fs::read_to_string(dir.path().join("ch/acf.csv")).unwrap();
    assert!(acf.starts_with("lag,lag_seconds,correlation\n"));
    assert_eq!(acf.lines().count(), 22);
    assert!(acf.lines().nth(2).unwrap().starts_with("1,0.000025,"));

    // White noise from a recorded text trace: no two-level structure.
    let trace: Vec<String> = noiseprop::noise::sample_gaussian(&mut noiseprop::rng::stream_rng(1, 0), 1.0, 20_000)
        .iter()
        .map(|v| v.to_string())
        .collect();
    std::fs::write(dir.path().join("white.txt"), trace.join("\n")).unwrap();
    let out = noiseprop(
        &["characterize", "--trace", "white.txt", "--rate", "1000", "--out", "wh"],
        &[],
        dir.path(),
    );
    ok(&out);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("wh/summary.json")).unwrap()).unwrap();
    assert!(summary["hmm"].is_null());
    assert_eq!(summary["notes"].as_array().unwrap().len(), 2);
}

#[test]
fn teacher_gen_writes_task_and_weights() {
    let dir = tempfile::tempdir().unwrap();
    let out = noiseprop(&["teacher-gen", "--seed", "3", "--out", "t/teacher.csv"], &[], dir.path());
    ok(&out);
    let csv = std::fs::read_to_string(dir.path().join("t/teacher.csv")).unwrap();
    assert!(csv.starts_with("x0,x1,y0\n"));
    assert_eq!(csv.lines().count(), 101);
    let net = noiseprop::checkpoint::load(&dir.path().join("t/teacher.npck")).unwrap();
    let task = noiseprop::data::make_teacher_task(3).unwrap();
    assert_eq!(net, task.teacher);
}
