use mats::experiments::{run_offline, Case, ExperimentConfig};
use mats::io::{
    mu_hash, read_snapshot, read_trajectory, snapshot_from_str, snapshot_path, trajectory_from_str, write_csv,
    write_snapshot, write_trajectory, Trajectory,
};
use mats::offline::OfflineBundle;
use mats::online::ReducedState;
use mats::{Grid, GridFn, StopReason};
use proptest::prelude::*;

fn small_config(dir: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig { n_delta: 257, output_dir: dir.to_path_buf(), ..ExperimentConfig::defaults(Case::AdvectionAppendixB) }
}

#[test]
fn snapshot_file_round_trips_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let grid = Grid::new(-1.5, 2.25, 97).unwrap();
    let u = GridFn::from_fn(grid, |x| (3.0 * x).sin() / 7.0 + 1e-300);
    let mu = [0.1 + 0.2, std::f64::consts::PI];
    let path = snapshot_path(dir.path(), "color", &mu, 0.3);
    write_snapshot(&path, &u, 0.3, &mu).unwrap();
    let back = read_snapshot(&path).unwrap();
    assert_eq!(back.u, u);
    assert_eq!(back.t, 0.3);
    assert_eq!(back.mu, mu);
    assert!(path.to_string_lossy().contains(&mu_hash(&mu)));
}

#[test]
fn malformed_snapshots_are_rejected() {
    assert!(snapshot_from_str("").is_err());
    assert!(snapshot_from_str("# wrong header\n# 0 1 2 0\n1\n2\n").is_err());
    assert!(snapshot_from_str("# x_left x_right n_nodes t\n# 0 1 3 0\n1\n2\n").is_err());
    assert!(snapshot_from_str("# x_left x_right n_nodes t\n# 0 1 2 0\n1\nabc\n").is_err());
}

#[test]
fn trajectory_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let rows = (0..4)
        .map(|k| {
            let s = ReducedState {
                step: k * 3,
                alpha: vec![1.0, -0.5 * k as f64],
                beta: vec![0.25, 1.0 / 3.0, k as f64],
                particles: vec![0.1, 0.7, 1.9],
            };
            (k as f64 * 0.01, s)
        })
        .collect();
    let tr = Trajectory {
        mu: vec![120.0, 0.5],
        n_local: 3,
        n_modes: 2,
        lambda: 0.5,
        k_target: 12,
        stop: Some(StopReason::SmallGradient),
        rows,
    };
    let path = dir.path().join("a/b/run.traj");
    write_trajectory(&path, &tr).unwrap();
    assert_eq!(read_trajectory(&path).unwrap(), tr);
    let no_stop = Trajectory { stop: None, ..tr };
    assert_eq!(trajectory_from_str(&mats::io::trajectory_to_string(&no_stop)).unwrap(), no_stop);
}

#[test]
fn truncated_trajectory_row_is_rejected() {
    let text = "# mu 1\n# N 1 M 1 lambda 0.5 K 2 stop none\n# k t alpha_1 beta_1 x_1\n0 0 1 2\n";
    assert!(trajectory_from_str(text).is_err());
}

#[test]
fn csv_has_comments_then_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    write_csv(&path, &["case color".into()], &["a", "b"], &[vec!["1".into(), "x,y".into()]]).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, "# case color\na,b\n1,\"x,y\"\n");
}

#[test]
fn bundle_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let bundle = run_offline(&cfg).unwrap().bundle;
    let path = dir.path().join("nested/bundle.mats");
    bundle.save(&path).unwrap();
    let back = OfflineBundle::load(&path).unwrap();
    assert_eq!(back, bundle);
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(OfflineBundle::load(&path).is_err());
}

#[test]
fn config_toml_round_trips_and_fills_defaults() {
    for case in Case::ALL {
        let c = ExperimentConfig::defaults(case);
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
    let c = ExperimentConfig::from_toml("case = \"burgers_fast\"\nN = 5\n").unwrap();
    assert_eq!((c.n_local, c.n_modes), (5, ExperimentConfig::defaults(Case::BurgersFast).n_modes));
    assert!(ExperimentConfig::from_toml("case = \"burgers_fast\"\nbogus = 1\n").is_err());
}

proptest! {
    #[test]
    fn snapshot_text_round_trips(vals in prop::collection::vec(-1e6f64..1e6, 2..50), t in 0.0f64..10.0) {
        let grid = Grid::new(0.0, 1.0, vals.len()).unwrap();
        let u = GridFn::new(grid, vals).unwrap();
        let back = snapshot_from_str(&mats::io::snapshot_to_string(&u, t, &[t, -t])).unwrap();
        prop_assert_eq!(back.u, u);
        prop_assert_eq!(back.t, t);
    }
}
