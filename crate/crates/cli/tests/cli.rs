use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rflab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rflab")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn accept_list_prints_every_criterion_without_running() {
    let dir = tempfile::tempdir().unwrap();
    let o = rflab(&["accept", "--list"], dir.path());
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 8, "{text}");
    assert!(text.lines().next().unwrap().starts_with("1 "));
    assert!(fs::read_dir(dir.path()).unwrap().next().is_none(), "--list must not write outputs");
}

#[test]
fn treft_translation_on_the_analytic_field_is_the_identity() {
    let dir = tempfile::tempdir().unwrap();
    let input = "z_0,z_1\n0.5,-1.25\n3,4\n-0.1,1e-3\n";
    fs::write(dir.path().join("in.csv"), input).unwrap();
    fs::write(
        dir.path().join("t.toml"),
        "strategy = \"treft\"\ninput = \"in.csv\"\n[field]\nkind = \"analytic\"\nmu = [1.0, 2.0]\nsigma_sq = 0.3\n",
    )
    .unwrap();
    let o = rflab(&["translate", "--config", "t.toml", "--out", "out"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let read = |p: &Path| -> Vec<Vec<f64>> {
        fs::read_to_string(p)
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
            .collect()
    };
    assert_eq!(read(&dir.path().join("out/translated.csv")), read(&dir.path().join("in.csv")));
    assert!(dir.path().join("out/resolved_config.toml").exists());
}

#[test]
fn finetune_with_missing_checkpoint_fails_loudly() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("f.toml"),
        r#"
checkpoint = "nowhere/pretrain.ckpt"
a = { name = "a", seed = 1, count = 10, generator = { kind = "ring", radius = 1.0, std = 0.1 } }
b = { name = "b", seed = 2, count = 10, generator = { kind = "blob", std = 0.5 } }
"#,
    )
    .unwrap();
    let o = rflab(&["finetune", "--config", "f.toml", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere/pretrain.ckpt"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn finetune_requires_a_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = rflab(&["finetune"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--config"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.toml"), "pairs = 10\nbogus = 1\n").unwrap();
    let o = rflab(&["angles", "--config", "a.toml", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn angles_run_writes_one_row_per_pair_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let o = rflab(&["angles", "--out", "first"], dir.path());
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).starts_with("PASS"));
    let first = fs::read(dir.path().join("first/angles.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&first).lines().count(), 3583);
    // re-running from the resolved config reproduces the bytes
    let o = rflab(&["angles", "--config", "first/resolved_config.toml", "--out", "second"], dir.path());
    assert!(o.status.success());
    assert_eq!(first, fs::read(dir.path().join("second/angles.csv")).unwrap());
}
