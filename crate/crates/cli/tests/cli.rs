use std::path::Path;
use std::process::{Command, Output};

fn mats(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mats")).args(args).current_dir(cwd).output().expect("spawn mats")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("adv.toml");
    std::fs::write(&path, "case = \"advection_appendix_b\"\nn_delta = 513\noutput_dir = \"out\"\n").unwrap();
    path
}

#[test]
fn defaults_parse_back_for_every_case() {
    let dir = tempfile::tempdir().unwrap();
    for case in ["color", "burgers_slow", "burgers_fast", "advection_appendix_b"] {
        let o = mats(&["config", "--defaults", "--case", case], dir.path());
        assert!(o.status.success());
        let text = stdout(&o);
        assert!(text.contains(&format!("case = \"{case}\"")));
        mats::experiments::ExperimentConfig::from_toml(&text).unwrap();
    }
}

#[test]
fn offline_online_reconstruct_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let cfg = cfg.to_str().unwrap();

    let o = mats(&["offline", "--config", cfg], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("signature"));
    let bundle = dir.path().join("out/bundle.mats");
    assert!(bundle.exists());
    assert!(dir.path().join("out/offline_spectra.csv").exists());

    let o = mats(&["online", "--config", cfg, "--bundle", bundle.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("mean over 1 completed runs"), "{}", stdout(&o));
    for f in ["errors.csv", "runs.csv", "trajectories/test_00.traj"] {
        assert!(dir.path().join("out").join(f).exists(), "missing {f}");
    }

    let traj = dir.path().join("out/trajectories/test_00.traj");
    let recon = dir.path().join("recon");
    let o = mats(
        &["reconstruct", "--bundle", bundle.to_str().unwrap(), "--trajectory", traj.to_str().unwrap(), "--out", recon.to_str().unwrap()],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let n = std::fs::read_dir(&recon).unwrap().count();
    assert!(n > 1);
    assert!(stdout(&o).starts_with(&format!("{n} snapshots")));
    let first = std::fs::read_dir(&recon).unwrap().next().unwrap().unwrap().path();
    assert_eq!(mats::io::read_snapshot(&first).unwrap().u.grid().n_nodes(), 513);
}

#[test]
fn bad_inputs_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "case = \"advection_appendix_b\"\nnot_a_key = 3\n").unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["offline", "--config", bad.to_str().unwrap()],
        vec!["offline", "--config", "missing.toml"],
        vec!["config", "--defaults", "--case", "heat"],
        vec!["config"],
        vec!["online", "--config", bad.to_str().unwrap()],
        vec!["reconstruct", "--bundle", "missing.mats", "--trajectory", "x", "--out", "y"],
    ];
    for args in cases {
        let o = mats(&args, dir.path());
        assert!(!o.status.success(), "{args:?} succeeded");
        assert!(!o.stderr.is_empty(), "{args:?} printed no error");
    }
}
