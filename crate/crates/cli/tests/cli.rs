use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rigidpack::io::{parse_transforms, write_assembly_xyz};
use rigidpack::random::{self, cluster_fixture};

fn rigidpack(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rigidpack"))
        .args(args)
        .env("RIGIDPACK_THREADS", threads)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

struct Files {
    dir: tempfile::TempDir,
}

impl Files {
    fn new(seed: u64) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let fx = cluster_fixture(seed);
        write_assembly_xyz(&fx.target, &dir.path().join("gt.xyz")).unwrap();
        write_assembly_xyz(&fx.initial, &dir.path().join("init.xyz")).unwrap();
        Files { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }
}

#[test]
fn metrics_output_is_identical_across_runs_and_thread_counts() {
    let f = Files::new(1);
    let (init, gt) = (f.arg("init.xyz"), f.arg("gt.xyz"));
    for metric in ["pm_atom", "pm_center", "rmsd_atom"] {
        for assign in ["none", "exact", "sinkhorn"] {
            let args = ["metrics", "--pred", &init, "--gt", &gt, "--metric", metric, "--assign", assign];
            let a = rigidpack(&args, "1");
            let b = rigidpack(&args, "4");
            assert!(a.status.success(), "{metric} {assign}: {}", String::from_utf8_lossy(&a.stderr));
            assert_eq!(stdout(&a), stdout(&b), "{metric} {assign}");
            assert!(stdout(&a).trim().parse::<f64>().unwrap() > 0.0);
        }
    }
}

#[test]
fn csv_rows_are_reproducible() {
    let f = Files::new(2);
    let (init, gt) = (f.arg("init.xyz"), f.arg("gt.xyz"));
    for name in ["a.csv", "b.csv"] {
        let csv = f.arg(name);
        for assign in ["exact", "sinkhorn"] {
            let o = rigidpack(
                &["metrics", "--pred", &init, "--gt", &gt, "--metric", "rmsd_atom", "--assign", assign, "--seed", "7", "--csv", &csv],
                "3",
            );
            assert!(o.status.success());
        }
    }
    let a = std::fs::read_to_string(f.path("a.csv")).unwrap();
    assert_eq!(a, std::fs::read_to_string(f.path("b.csv")).unwrap());
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "metric,value,assignment,alpha,reg,seed");
    let exact: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(exact[0], "rmsd_atom");
    assert_eq!((exact[2], exact[3], exact[4], exact[5]), ("exact", "", "", "7"));
    let sink: Vec<&str> = lines[2].split(',').collect();
    assert_eq!(sink[2], "sinkhorn");
    assert!(sink[4].parse::<f64>().unwrap() > 0.0);
}

#[test]
fn fit_writes_transforms_and_reports_the_assignment() {
    let f = Files::new(3);
    let out = f.arg("fit.txt");
    let o = rigidpack(
        &["fit", "--init", &f.arg("init.xyz"), "--target", &f.arg("gt.xyz"), "--loss", "rmsd", "--out", &out],
        "2",
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("loss_rmsd "));
    assert!(lines[0][10..].parse::<f64>().unwrap() < 1e-6);
    assert!(lines[1].starts_with("iterations "));
    assert_eq!(lines[2], "converged true");
    let mut pairing: Vec<usize> = lines[3]
        .strip_prefix("assignment ")
        .unwrap()
        .split(' ')
        .map(|x| x.parse().unwrap())
        .collect();
    pairing.sort_unstable();
    assert_eq!(pairing, (0..17).collect::<Vec<_>>());
    let fitted = parse_transforms(Path::new(&out)).unwrap();
    assert_eq!(fitted.transforms.len(), 17);
}

#[test]
fn assign_recovers_a_shuffle() {
    let f = Files::new(4);
    let fx = cluster_fixture(4);
    let order = random::permutation(&mut random::rng(4), 17);
    write_assembly_xyz(&fx.target.reindexed(&order).unwrap(), &f.path("perm.xyz")).unwrap();
    let o = rigidpack(&["assign", "--pred", &f.arg("gt.xyz"), "--gt", &f.arg("perm.xyz")], "2");
    assert!(o.status.success());
    let text = stdout(&o);
    let got: Vec<usize> = text.lines().next().unwrap().split(' ').map(|x| x.parse().unwrap()).collect();
    assert_eq!(got, order);
    assert_eq!(text.lines().nth(1), Some("cost 0.000000"));
}

#[test]
fn selftest_passes() {
    let o = rigidpack(&["selftest"], "2");
    assert!(o.status.success());
    assert!(stdout(&o).ends_with("failed 0\n"));
}

#[test]
fn bad_inputs_exit_with_one() {
    let f = Files::new(5);
    let missing = f.arg("missing.xyz");
    let o = rigidpack(&["metrics", "--pred", &missing, "--gt", &f.arg("gt.xyz"), "--metric", "pm_atom"], "2");
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.xyz"));
    let o = rigidpack(
        &["fit", "--init", &f.arg("init.xyz"), "--target", &f.arg("gt.xyz"), "--loss", "ml", "--alpha=-1"],
        "2",
    );
    assert_eq!(o.status.code(), Some(1));
    let o = rigidpack(&["selftest"], "zero");
    assert_eq!(o.status.code(), Some(1));
    let o = rigidpack(&["interp", "--init", &f.arg("init.xyz"), "--target", &f.arg("gt.xyz"), "--steps", "1", "--out", &f.arg("t.xyz")], "2");
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(rigidpack(&["metrics", "--metric", "nope"], "2").status.code(), Some(2));
    assert_eq!(rigidpack(&["frobnicate"], "2").status.code(), Some(2));
}
