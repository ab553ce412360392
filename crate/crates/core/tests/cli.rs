use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn stagdid(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_stagdid"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn run(cmd: &str, config: &Path) -> Output {
    let out = stagdid(&[cmd, "--config", config.to_str().unwrap()], &[]);
    assert!(
        out.status.success(),
        "{cmd} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn base_config(out: &Path) -> String {
    format!(
        "out_dir = {}\nseed = 3\nsim_cohort_size = 4\nsim_effect = constant\nsim_effect_value = -20\nreplicates = 19\n",
        out.display()
    )
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn simulate_prepare_estimate_aggregate() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), "run.cfg", &base_config(&out));
    run("simulate", &cfg);
    let panel_first = std::fs::read(out.join("panel.csv")).unwrap();
    run("simulate", &cfg);
    assert_eq!(panel_first, std::fs::read(out.join("panel.csv")).unwrap());

    run("prepare", &cfg);
    let report = read(&out.join("exclusions.csv"));
    assert!(report.contains("included,88"), "{report}");
    assert!(report.contains("total,88"));
    assert_eq!(read(&out.join("cohorts.csv")), read(&out.join("cohorts_intended.csv")));

    run("estimate", &cfg);
    let heatmap = read(&out.join("heatmap.csv"));
    assert_eq!(heatmap.lines().count(), 1 + 418);
    let masked = read(&out.join("heatmap_masked.csv"));
    assert_eq!(masked.lines().count(), 1 + 418);

    run("aggregate", &cfg);
    let curve = read(&out.join("event_study.csv"));
    let ref_row = curve.lines().find(|l| l.starts_with("-3,")).unwrap();
    assert!(ref_row.starts_with("-3,0,0,0,"), "{ref_row}");
    assert_eq!(curve.lines().count(), 1 + 31);
    let manifest: serde_json::Value = serde_json::from_str(&read(&out.join("manifest_aggregate.json"))).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn nearest_controls_and_balanced_metadata() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let body = base_config(&out) + "control = nearest_10\nscheme = balanced\nbalanced_from = -10\nbalanced_to = 10\n";
    let cfg = write_config(dir.path(), "run.cfg", &body);
    run("simulate", &cfg);
    run("prepare", &cfg);
    run("estimate", &cfg);
    for line in read(&out.join("heatmap.csv")).lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let s: i32 = f[2].parse().unwrap();
        if s >= 10 {
            assert_eq!(f[8], "0", "{line}");
        }
    }

    let all = write_config(
        dir.path(),
        "all.cfg",
        // four persons per cohort leave some age-controlled cells collinear
        &(base_config(&out) + "covariates =\nscheme = balanced\nbalanced_from = -10\nbalanced_to = 10\n"),
    );
    run("aggregate", &all);
    let manifest: serde_json::Value = serde_json::from_str(&read(&out.join("manifest_aggregate.json"))).unwrap();
    assert_eq!(manifest["metadata"]["cohort_set"], serde_json::json!([2003, 2004]));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");

    let missing = write_config(dir.path(), "a.cfg", &format!("out_dir = {}\nsim_effect = constant\n", out.display()));
    let o = stagdid(&["simulate", "--config", missing.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sim_effect_value"));

    let unknown = write_config(dir.path(), "b.cfg", "sede = 1\n");
    let o = stagdid(&["estimate", "--config", unknown.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(1));

    let o = stagdid(&["estimate"], &[]);
    assert_eq!(o.status.code(), Some(1));

    std::fs::create_dir_all(&out).unwrap();
    std::fs::write(out.join("panel.csv"), "person,year\n1,2000\n").unwrap();
    let cfg = write_config(dir.path(), "c.cfg", &base_config(&out));
    let o = stagdid(&["prepare", "--config", cfg.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("wage"));

    // estimation failure: every simulated death is at the event year, so
    // no non-recipient has a death inside the matched cohort window
    let cfg = write_config(dir.path(), "d.cfg", &(base_config(&out) + "match_pool = nonrecipients_with_death\n"));
    run("simulate", &cfg);
    run("prepare", &cfg);
    let o = stagdid(&["match", "--config", cfg.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn environment_and_flags_override_the_file() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), "run.cfg", &base_config(&out));
    let other = dir.path().join("other");
    let o = stagdid(
        &["simulate", "--config", cfg.to_str().unwrap(), "--out", other.to_str().unwrap()],
        &[("STAGDID_SIM_COHORT_SIZE", "2")],
    );
    assert!(o.status.success());
    assert!(!out.exists());
    let manifest: serde_json::Value = serde_json::from_str(&read(&other.join("manifest_simulate.json"))).unwrap();
    assert_eq!(manifest["metadata"]["persons"], 44);

    let o = stagdid(&["simulate", "--config", cfg.to_str().unwrap()], &[("STAGDID_BOGUS", "1")]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn twfe_match_describe_share_the_prepared_cohorts() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let body = base_config(&out)
        + "sim_never_treated = 100\nmatch_covariates = age,sex,education_level\nmatch_transform = identity\n";
    let cfg = write_config(dir.path(), "run.cfg", &body);
    run("simulate", &cfg);
    run("prepare", &cfg);
    run("twfe", &cfg);
    run("match", &cfg);
    run("describe", &cfg);
    let cohorts_hash = |name: &str| {
        let m: serde_json::Value = serde_json::from_str(&read(&out.join(name))).unwrap();
        m["inputs"]
            .as_array()
            .unwrap()
            .iter()
            .find(|i| i["role"] == "cohorts")
            .unwrap()["sha256"]
            .clone()
    };
    assert_eq!(cohorts_hash("manifest_twfe.json"), cohorts_hash("manifest_match.json"));
    let balance = read(&out.join("balance.csv"));
    assert_eq!(balance.lines().count(), 1 + 3);
    let estimates = read(&out.join("matched_estimates.csv"));
    assert_eq!(estimates.lines().count(), 1 + 13);
    assert!(read(&out.join("proximity.csv")).starts_with("delta,"));
}
