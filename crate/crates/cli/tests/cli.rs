use std::path::Path;
use std::process::{Command, Output};

const TOY: &str = "\
system=linear_gaussian
alpha=0.5
noise_std=0.05
domain.lower=-1
domain.upper=1
initial.lower=-0.1
initial.upper=0.1
unsafe.1.lower=-1
unsafe.1.upper=-0.9
unsafe.2.lower=0.9
unsafe.2.upper=1
kx_a=1
kx_b=1
n_samples=400
lambda=2.5e-6
epsilon=0.05
gamma=1
c=0.02
zeta1=0.001
zeta2=0.001
envelope_n_train=40
mc_runs=1000
sweep_epsilons=0,0.05
";

fn run(dir: &Path, args: &[&str]) -> Output {
    let config = dir.join("toy.cfg");
    if !config.exists() {
        std::fs::write(&config, TOY).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_cme-barrier"))
        .args(["--config", config.to_str().unwrap(), "--out", dir.to_str().unwrap()])
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn all_verbs_succeed_on_the_toy_system() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gen = run(d, &["generate-data"]);
    assert!(gen.status.success(), "{}", stderr(&gen));
    assert!(d.join("data.csv").exists() && d.join("data.meta").exists());

    let cert = run(d, &["certify"]);
    assert!(cert.status.success(), "{}", stderr(&cert));
    assert!(stdout(&cert).contains("P(avoid unsafe for 10 steps)"));

    let val = run(d, &["validate"]);
    assert!(val.status.success(), "{}{}", stdout(&val), stderr(&val));
    assert!(stdout(&val).contains("monte_carlo"));

    let sweep = run(d, &["sweep-epsilon"]);
    assert!(sweep.status.success(), "{}", stderr(&sweep));
    assert_eq!(stdout(&sweep).lines().count(), 3);

    let plot = run(d, &["plot-data", "--input", d.join("certificate.txt").to_str().unwrap()]);
    assert!(plot.status.success(), "{}", stderr(&plot));
    let grid = std::fs::read_to_string(d.join("plot.csv")).unwrap();
    assert!(grid.contains("x1,B\n"));

    let sim = run(d, &["simulate", "--runs", "2"]);
    assert!(sim.status.success(), "{}", stderr(&sim));
}

#[test]
fn seed_flag_changes_the_data() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(a.path(), &["generate-data", "--seed", "3"]);
    run(b.path(), &["generate-data", "--seed", "4"]);
    assert_ne!(std::fs::read(a.path().join("data.csv")).unwrap(), std::fs::read(b.path().join("data.csv")).unwrap());
}

#[test]
fn failing_stages_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bad = d.join("bad.cfg");
    std::fs::write(&bad, "seed=1\nn_samples=0\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_cme-barrier"))
        .args(["--config", bad.to_str().unwrap(), "certify"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    std::fs::write(d.join("toy.cfg"), format!("{TOY}epsilon=1000\n").replace("epsilon=0.05\n", "")).unwrap();
    let o = run(d, &["certify"]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
    assert!(stderr(&o).contains("infeasible"));

    std::fs::write(d.join("broken.txt"), "[barrier]\nnum_vars=1\n").unwrap();
    let o = run(d, &["validate", "--certificate", d.join("broken.txt").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("missing section [constants]"));

    let o = run(d, &["plot-data", "--input", d.join("absent.txt").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(9));
}
