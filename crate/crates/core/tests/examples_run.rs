use std::path::PathBuf;
use std::process::Command;

/// `cargo test` builds the examples next to the test binaries.
fn example(name: &str) -> PathBuf {
    let deps = std::env::current_exe().unwrap().parent().unwrap().to_path_buf();
    deps.parent().unwrap().join("examples").join(name)
}

fn run(name: &str, args: &[&str]) -> String {
    let path = example(name);
    assert!(path.exists(), "{} was not built", path.display());
    let out = Command::new(&path).args(args).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(out.status.success(), "{name} failed:\n{stdout}\n{}", String::from_utf8_lossy(&out.stderr));
    stdout
}

#[test]
fn render_scene_prints_the_object() {
    let out = run("render_scene", &["green-cube", "200", "125"]);
    assert!(out.contains("@"));
    assert!(out.contains("tallest pixel"));
}

#[test]
fn gradient_check_agrees_with_finite_differences() {
    for seed in ["0", "1", "2"] {
        assert!(run("gradient_check", &[seed]).contains("worst relative error"));
    }
}

#[test]
fn dataset_io_round_trips_and_rejects_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("dataset_io", &[dir.path().to_str().unwrap()]);
    assert!(out.contains("identical: true"));
    assert!(out.contains("checkpoint parameters identical: true"));
    assert!(out.contains("fingerprint mismatch"));
    assert!(out.contains("checksum mismatch"));
}

#[test]
fn experiment_matrix_lists_fourteen_runs() {
    let out = run("experiment_matrix", &[]);
    assert_eq!(out.lines().count(), 14);
}
