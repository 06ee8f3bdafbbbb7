use std::path::Path;
use std::process::{Command, Output};

fn ncgrpo(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncgrpo"))
        .args(args)
        .current_dir(dir)
        .env_remove("NCGRPO_SEEDS")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn bad_config_exits_2_with_field_name() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "c.toml", "[train]\nlearnig_rate = 1.0\n");
    let out = ncgrpo(&["train", "--config", "c.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learnig_rate"));
}

#[test]
fn missing_files_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        ncgrpo(&["train", "--config", "absent.toml"], dir.path())
            .status
            .code(),
        Some(3)
    );
    assert_eq!(
        ncgrpo(&["estimate", "absent.csv"], dir.path())
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn estimate_examples() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "agree.csv",
        "prompt_id,response_id,r_observed,r_true\n0,0,1,1\n0,1,0,0\n1,0,0,0\n",
    );
    let out = ncgrpo(&["estimate", "agree.csv"], dir.path());
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["rho_plus_hat"], 0.0);
    assert_eq!(v["rho_minus_hat"], 0.0);

    let mut rows = String::from("prompt_id,response_id,r_observed,r_true\n");
    for (i, (obs, truth)) in [
        (1, 0),
        (1, 0),
        (0, 0),
        (0, 0),
        (0, 1),
        (1, 1),
        (1, 1),
        (1, 1),
    ]
    .iter()
    .enumerate()
    {
        rows.push_str(&format!("{i},0,{obs},{truth}\n"));
    }
    write(dir.path(), "eight.csv", &rows);
    let out = ncgrpo(&["estimate", "eight.csv", "--out", "est"], dir.path());
    assert!(out.status.success());
    let v: serde_json::Value =
        serde_json::from_str(&read(&dir.path().join("est"), "estimate.json")).unwrap();
    assert_eq!(v["rho_plus_hat"], 0.5);
    assert_eq!(v["rho_minus_hat"], 0.25);
    assert_eq!(v["positives"], 4);

    write(
        dir.path(),
        "one_class.csv",
        "prompt_id,response_id,r_observed,r_true\n0,0,1,1\n",
    );
    assert_eq!(
        ncgrpo(&["estimate", "one_class.csv"], dir.path())
            .status
            .code(),
        Some(1)
    );
    write(
        dir.path(),
        "bad.csv",
        "prompt_id,response_id,r_observed,r_true\n0,0,2,1\n",
    );
    assert_eq!(
        ncgrpo(&["estimate", "bad.csv"], dir.path()).status.code(),
        Some(2)
    );
}

#[test]
fn recursion_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = ncgrpo(&["recursion", "--out", "r", "--svg"], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let r = dir.path().join("r");
    let summary = read(&r, "fixed_points.csv");
    let rows: Vec<Vec<f64>> = summary
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(
        summary.lines().next(),
        Some("rho_plus,rho_minus,p_star_noisy,p_star_clean")
    );
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r[2] < r[3] && r[2] > 0.25));
    assert!(rows.windows(2).all(|w| w[1][2] < w[0][2]));
    assert!(read(&r, "recursion_rho0.2_0.3.csv").starts_with("k,p_clean,p_noisy\n1,"));
    assert!(read(&r, "recursion.svg").starts_with("<svg"));

    write(
        dir.path(),
        "c.toml",
        "[noise]\ngrid = []\n[recursion]\nk_max = 0\n",
    );
    let out = ncgrpo(
        &["recursion", "--config", "c.toml", "--out", "empty"],
        dir.path(),
    );
    assert!(out.status.success());
    let e = dir.path().join("empty");
    assert_eq!(read(&e, "recursion_clean.csv"), "k,p_clean\n");
    assert_eq!(read(&e, "fixed_points.csv").lines().count(), 1);
    assert!(!e.join("recursion_rho0.2_0.3.csv").exists());
}

#[test]
fn penalty_curves_outputs() {
    let dir = tempfile::tempdir().unwrap();
    assert!(
        ncgrpo(&["penalty-curves", "--out", "p", "--svg"], dir.path())
            .status
            .success()
    );
    let text = read(&dir.path().join("p"), "penalty.csv");
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 99);
    assert!(rows.iter().all(|r| r[3] == 0.0));
    let mid = &rows[49];
    assert!(rows[0][1] > 4.0 * mid[1] && rows[98][1] > 4.0 * mid[1]);
    assert!(rows.iter().all(|r| r[2].abs() < 1.0));
    assert_eq!(
        read(&dir.path().join("p"), "penalty.svg")
            .matches("<polyline")
            .count(),
        3
    );
}

#[test]
fn single_arm_single_seed() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "c.toml",
        "[environment]\nprompts = 6\n[train]\nepochs = 2\nbatch_size = 3\n[[train.arms]]\nname = \"only\"\n",
    );
    let out = ncgrpo(
        &["train", "--config", "c.toml", "--seed", "11", "--out", "t"],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let t = dir.path().join("t");
    let mut names: Vec<String> = std::fs::read_dir(&t)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("train_"))
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "train_only_seed11.csv",
            "train_summary.csv",
            "train_table.csv"
        ]
    );
    let csv = read(&t, "train_only_seed11.csv");
    assert!(csv
        .starts_with("iter,clean_acc,noisy_reward_mean,mode,correction,rho_plus,rho_minus,seed\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    let manifest: serde_json::Value =
        serde_json::from_str(&read(&t, "train.manifest.json")).unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([11]));
}

#[test]
fn shared_seeds_share_sampling_streams() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "c.toml",
        "seeds = [2]\n[environment]\nprompts = 6\n[train]\nepochs = 3\nbatch_size = 3\nrho_plus = 0.0\nrho_minus = 0.0\n\
         [[train.arms]]\nname = \"a\"\nnoisy = true\n[[train.arms]]\nname = \"b\"\nnoisy = true\ncorrection = \"natarajan\"\nrates = \"oracle\"\n",
    );
    assert!(
        ncgrpo(&["train", "--config", "c.toml", "--out", "t"], dir.path())
            .status
            .success()
    );
    let t = dir.path().join("t");
    // with an identity channel the correction is a no-op, so both arms coincide
    let strip = |s: String| -> Vec<String> {
        s.lines()
            .map(|l| l.split(',').take(3).collect::<Vec<_>>().join(","))
            .collect()
    };
    assert_eq!(
        strip(read(&t, "train_a_seed2.csv")),
        strip(read(&t, "train_b_seed2.csv"))
    );
}

#[test]
fn verify_suite_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let out = ncgrpo(&["verify", "gradient", "--out", "v"], dir.path());
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().all(|l| l.starts_with("PASS")));
    assert!(read(&dir.path().join("v"), "verify_gradient.csv")
        .starts_with("suite,check,instance,margin,passed\n"));
    assert_eq!(
        ncgrpo(&["verify", "nonsense"], dir.path()).status.code(),
        Some(2)
    );
}

#[test]
fn verify_bounds_writes_rows() {
    let dir = tempfile::tempdir().unwrap();
    assert!(ncgrpo(&["verify", "bounds", "--out", "v"], dir.path())
        .status
        .success());
    let text = read(&dir.path().join("v"), "bounds.csv");
    assert!(text.starts_with("variant,seed,lhs,rhs,holds\n"));
    assert_eq!(text.lines().count(), 1 + 3000);
    assert!(text.lines().skip(1).all(|l| l.ends_with(",1")));
}
