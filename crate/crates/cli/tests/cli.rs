use std::path::Path;
use std::process::{Command, Output};

fn surgsim(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_surgsim"))
        .args(args)
        .env("SURGSIM_OUTPUT_ROOT", root)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: [&str; 10] = [
    "-o",
    "train.n_robots=16",
    "-o",
    "train.n_steps=25",
    "-o",
    "train.total_steps=800",
    "-o",
    "train.hidden=[16, 16]",
    "-o",
    "env.episode_len=20",
];

fn strip_wall_clock(line: &str) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(line).unwrap();
    let o = v.as_object_mut().unwrap();
    o.remove("fps");
    o.remove("wall_time_s");
    v
}

fn metrics(dir: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(dir.join("metrics.jsonl"))
        .unwrap()
        .lines()
        .map(strip_wall_clock)
        .collect()
}

#[test]
fn list_robots_shows_bundled_models() {
    let tmp = tempfile::tempdir().unwrap();
    let o = surgsim(tmp.path(), &["list-robots"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("psm") && out.contains("RRPRRRR"));
    assert!(out.contains("ecm") && out.contains("RRPRRR"));
    assert!(out.contains("star") && out.contains("RRRRRRRR"));
}

#[test]
fn missing_robot_file_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = surgsim(tmp.path(), &["train", "-o", "robot.file=\"/no/such/arm.toml\""]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/no/such/arm.toml"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "[train]\nn_robot = 64\n").unwrap();
    let o = surgsim(tmp.path(), &["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train.n_robot"), "{}", stderr(&o));
    let o = surgsim(tmp.path(), &["train", "--config", "/no/such/run.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/no/such/run.toml"));
}

#[test]
fn smoke_train_eval_and_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--out", "smoke"];
    args.extend(SMALL);
    let o = surgsim(tmp.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = tmp.path().join("smoke");
    let mut files: Vec<String> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    assert_eq!(files, ["config.toml", "metrics.jsonl", "obs_layout.json", "policy.ckpt"]);
    let resolved = std::fs::read_to_string(dir.join("config.toml")).unwrap();
    assert!(resolved.contains("n_robots = 16"));
    let first = metrics(&dir);
    assert_eq!(first.len(), 2);
    assert_eq!(first[1]["env_steps"], 800);
    let layout: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("obs_layout.json")).unwrap()).unwrap();
    assert_eq!(layout["dim"], 27);

    // Re-running from the resolved config reproduces the metric log.
    let rerun = tmp.path().join("rerun");
    let o = surgsim(
        tmp.path(),
        &["train", "--config", dir.join("config.toml").to_str().unwrap(), "--out", rerun.to_str().unwrap()],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(metrics(&rerun), first);

    // Fixed-length evaluation with trajectory export.
    let csv = tmp.path().join("traj.csv");
    let ckpt = dir.join("policy.ckpt");
    let o = surgsim(
        tmp.path(),
        &[
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--episodes",
            "3",
            "--trajectory",
            csv.to_str().unwrap(),
            "-o",
            "env.episode_len=20",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["episodes"], 3);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("episode,step,q_0"));
    assert!(header.contains("p_tip_x") && header.contains("goal_z") && header.ends_with("reward"));
    assert_eq!(lines.count(), 3 * 20);

    // The checkpoint does not fit another robot.
    let o = surgsim(
        tmp.path(),
        &["eval", "--checkpoint", ckpt.to_str().unwrap(), "-o", "robot.name=\"ecm\""],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("obs_dim"), "{}", stderr(&o));
}

#[test]
fn bench_sim_reports_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let o = surgsim(
        tmp.path(),
        &["bench", "--mode", "sim", "--envs", "8", "--steps", "1000", "--runs", "2", "--task", "target_reaching", "--robot", "psm", "--baseline"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("Seconds per 1M Timesteps"));
    let json = std::fs::read_to_string(tmp.path().join("bench/bench-sim.json")).unwrap();
    let reports: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 2);
    let r = &reports[0];
    assert_eq!(r["elapsed_s"].as_array().unwrap().len(), 2);
    assert_eq!(r["steps_per_run"], 1000);
    assert!(r["host"]["logical_cores"].as_u64().unwrap() >= 1);
}

#[test]
fn bench_rejects_bad_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let o = surgsim(tmp.path(), &["bench", "--mode", "fast"]);
    assert_eq!(o.status.code(), Some(2));
    let o = surgsim(tmp.path(), &["bench", "--task", "juggling"]);
    assert_eq!(o.status.code(), Some(2));
    let o = surgsim(tmp.path(), &["bench", "--runs", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn image_matching_dumps_pgm() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--out", "img", "-o", "env.task=\"image_matching\"", "-o", "robot.name=\"ecm\""];
    args.extend(SMALL);
    let o = surgsim(tmp.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = tmp.path().join("img/policy.ckpt");
    let images = tmp.path().join("images");
    let o = surgsim(
        tmp.path(),
        &[
            "eval",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--episodes",
            "2",
            "--dump-images",
            images.to_str().unwrap(),
            "-o",
            "env.task=\"image_matching\"",
            "-o",
            "robot.name=\"ecm\"",
            "-o",
            "env.episode_len=5",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let pgm = std::fs::read(images.join("episode0000_target.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n32 32\n255\n"));
    assert_eq!(pgm.len(), b"P5\n32 32\n255\n".len() + 32 * 32);
    assert!(images.join("episode0001_final.pgm").exists());
}
