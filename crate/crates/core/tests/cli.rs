use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ska-shmem"))
}

fn run_script(dir: &Path, script: &str, extra: &[&str]) -> Output {
    let input = dir.join("in.ski");
    std::fs::write(&input, script).unwrap();
    bin()
        .arg("-i")
        .arg(&input)
        .arg("-o")
        .arg(dir.join("out.sko"))
        .args(extra)
        .output()
        .unwrap()
}

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_flag_exits_2() {
    let out = bin()
        .args(["-i", "x.ski", "--frobnicate"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn valid_script_writes_result_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_script(
        dir.path(),
        "comm_pt2pt = MPI_COMM_WORLD\nmeasure comm_pt2pt : Shmem_Put_Simple(10, 5)\n",
        &["--clock", "virtual", "--alpha", "1e-6", "--beta", "1e-9"],
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(dir.path().join("out.sko")).unwrap();
    assert!(text.starts_with("# ska-shmem result file"));
    assert!(text.contains("# npes=2 unit=1000000 clock=virtual"));
    assert!(text.contains("Shmem_Put_Simple 10 5 time=1.01 "), "{text}");
    let names: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(names.len(), 2, "stray files: {names:?}");
}

#[test]
fn unknown_routine_exits_1_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_script(
        dir.path(),
        "measure MPI_COMM_WORLD : Shmem_Put_Simpel(10, 5)\n",
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("Shmem_Put_Simpel") && err.contains("Shmem_Put_Simple"),
        "{err}"
    );
    assert!(!dir.path().join("out.sko").exists());
}

#[test]
fn syntax_error_reports_location() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_script(dir.path(), "set_unit(1e9)\n", &[]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains(":1:10:") && err.contains("scientific notation"),
        "{err}"
    );
}

#[test]
fn routine_failure_exits_1_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_script(
        dir.path(),
        "measure MPI_COMM_WORLD : Shmem_Bcast_All(8, 5)\n",
        &["-n", "2"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Shmem_Bcast_All(8, 5)"));
    assert!(!dir.path().join("out.sko").exists());
}

#[test]
fn heap_size_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.ski");
    std::fs::write(&input, "measure MPI_COMM_WORLD : Shmem_Malloc(2, 64)\n").unwrap();
    let out = bin()
        .arg("-i")
        .arg(&input)
        .arg("-o")
        .arg(dir.path().join("o.sko"))
        .env("SKA_HEAP_SIZE", "512K")
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(1),
        "heap below the minimum must be rejected"
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("heap size"));
    let out = bin()
        .arg("-i")
        .arg(&input)
        .arg("-o")
        .arg(dir.path().join("o.sko"))
        .env("SKA_HEAP_SIZE", "4M")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn list_routines_exits_0() {
    let out = bin().arg("--list-routines").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text
        .lines()
        .any(|l| l.starts_with("Shmem_Iput_Round(count, stride, iterations)")));
}
