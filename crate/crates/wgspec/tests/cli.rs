//! End-to-end runs of the `wgspec` binary: exit codes, artifact files,
//! manifest contents, and rerun determinism.

use std::fs;
use std::process::{Command, Output};

use tempfile::TempDir;

const BASE: &str = "\
theta = 0.7853981633974483
pml_start = 1.0
truncation = 4.0
mesh_h = 0.2
";

fn run(cmd: &str, config_text: &str, extra_args: &[&str]) -> (Output, TempDir) {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("run.cfg");
    fs::write(&config, config_text).unwrap();
    let out_dir = dir.path().join("out");
    let output = Command::new(env!("CARGO_BIN_EXE_wgspec"))
        .arg(cmd)
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&out_dir)
        .args(extra_args)
        .output()
        .unwrap();
    (output, dir)
}

fn manifest(dir: &TempDir) -> String {
    fs::read_to_string(dir.path().join("out/manifest.txt")).unwrap()
}

fn read_out(dir: &TempDir, name: &str) -> String {
    fs::read_to_string(dir.path().join("out").join(name)).unwrap()
}

fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("process exited normally")
}

#[test]
fn spectrum_run_writes_all_artifacts() {
    let config = format!("{BASE}shift = 2.0 0.0\nnev = 6\n");
    let (output, dir) = run("spectrum", &config, &[]);
    assert_eq!(exit_code(&output), 0, "stderr: {}", String::from_utf8_lossy(&output.stderr));

    let m = manifest(&dir);
    assert!(m.contains("command = spectrum"));
    assert!(m.contains("status = ok"));
    assert!(m.contains("config_sha256 = "));
    assert!(m.contains("dof_count = "));
    assert!(m.contains("pairing_passed = "));
    assert!(m.contains("output = eigenvalues.csv"));
    assert!(m.contains("output = branches.csv"));

    let eig = read_out(&dir, "eigenvalues.csv");
    let mut lines = eig.lines();
    assert_eq!(
        lines.next().unwrap(),
        "re_k,im_k,re_lambda,im_lambda,residual,ess_distance,rho,classification"
    );
    assert!(lines.clone().count() >= 1);
    // The uniform strip carries a reflectionless standing-wave ladder:
    // one rung sits near the shift and classifies as a real mode.
    assert!(eig.contains("reflectionless_mode"));

    let branches = read_out(&dir, "branches.csv");
    assert!(branches.starts_with("branch_n,side,re_k,im_k"));

    // Default mode dumps cover the non-artifact entries; file names keep
    // the entry index of the eigenvalue table.
    let mut mode_files: Vec<_> = fs::read_dir(dir.path().join("out/modes"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    mode_files.sort();
    assert!(!mode_files.is_empty());
    let field = fs::read_to_string(&mode_files[0]).unwrap();
    assert!(field.starts_with("x,y,re_u,im_u"));
}

#[test]
fn spectrum_reruns_byte_identically() {
    let config = format!("{BASE}shift = 2.0 0.0\ndump_modes = none\n");
    let (a, dir_a) = run("spectrum", &config, &[]);
    let (b, dir_b) = run("spectrum", &config, &[]);
    assert_eq!(exit_code(&a), 0);
    assert_eq!(exit_code(&b), 0);
    assert_eq!(read_out(&dir_a, "eigenvalues.csv"), read_out(&dir_b, "eigenvalues.csv"));
    assert_eq!(read_out(&dir_a, "branches.csv"), read_out(&dir_b, "branches.csv"));
}

#[test]
fn spectrum_without_shifts_is_a_usage_error() {
    let (output, dir) = run("spectrum", BASE, &[]);
    assert_eq!(exit_code(&output), 2);
    assert!(manifest(&dir).contains("status = error"));
}

#[test]
fn bad_geometry_exits_2_and_still_writes_a_manifest() {
    let config = "theta = 2.0\npml_start = 1.0\ntruncation = 4.0\nmesh_h = 0.2\nshift = 2 0\n";
    let (output, dir) = run("spectrum", config, &[]);
    assert_eq!(exit_code(&output), 2);
    let m = manifest(&dir);
    assert!(m.contains("status = error"));
    assert!(m.contains("error = "));
    assert!(String::from_utf8_lossy(&output.stderr).contains("theta"));
}

#[test]
fn unknown_config_key_exits_2() {
    let config = format!("{BASE}warp_factor = 9\n");
    let (output, dir) = run("spectrum", &config, &[]);
    assert_eq!(exit_code(&output), 2);
    assert!(manifest(&dir).contains("unknown key"));
}

#[test]
fn missing_config_file_exits_2() {
    let dir = TempDir::new().unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_wgspec"))
        .args(["spectrum", "--config"])
        .arg(dir.path().join("absent.cfg"))
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn missing_required_flag_exits_2() {
    let output = Command::new(env!("CARGO_BIN_EXE_wgspec"))
        .args(["spectrum", "--out", "/tmp/nowhere"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn sweep_writes_one_row_per_grid_point() {
    let config = format!("{BASE}k_min = 1.3\nk_max = 1.5\nk_step = 0.1\n");
    let (output, dir) = run("sweep", &config, &["--threads", "2"]);
    assert_eq!(exit_code(&output), 0, "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let sweep = read_out(&dir, "sweep.csv");
    let lines: Vec<&str> = sweep.lines().collect();
    assert_eq!(lines[0], "k,abs_r00,re_r00,im_r00,energy_defect");
    assert_eq!(lines.len(), 4);
    // The uniform strip reflects nothing.
    for row in &lines[1..] {
        let abs_r00: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
        assert!(abs_r00 < 1e-10, "row {row}");
    }
    assert!(manifest(&dir).contains("status = ok"));
}

#[test]
fn sweep_without_range_is_a_usage_error() {
    let (output, dir) = run("sweep", BASE, &[]);
    assert_eq!(exit_code(&output), 2);
    assert!(manifest(&dir).contains("k_min"));
}

#[test]
fn classify_annotates_a_previous_run() {
    let spectrum_config = format!("{BASE}shift = 2.0 0.0\ndump_modes = none\n");
    let (output, dir) = run("spectrum", &spectrum_config, &[]);
    assert_eq!(exit_code(&output), 0);

    let table = dir.path().join("out/eigenvalues.csv");
    let n_rows = read_out(&dir, "eigenvalues.csv").lines().count() - 1;
    let classify_config = format!("{BASE}eigenvalues_csv = {}\n", table.display());
    let (output2, dir2) = run("classify", &classify_config, &[]);
    assert_eq!(exit_code(&output2), 0, "stderr: {}", String::from_utf8_lossy(&output2.stderr));

    let classified = read_out(&dir2, "classified.csv");
    let lines: Vec<&str> = classified.lines().collect();
    assert_eq!(
        lines[0],
        "re_k,im_k,re_lambda,im_lambda,residual,ess_distance,rho,classification,flux_defect,b_minus_abs,flag"
    );
    assert_eq!(lines.len(), n_rows + 1);

    let mut saw_real_mode = false;
    for row in &lines[1..] {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 11);
        assert_eq!(fields[10], "", "unexpected flag in {row}");
        if fields[7] == "reflectionless_mode" {
            saw_real_mode = true;
            let flux: f64 = fields[8].parse().unwrap();
            assert!(flux < 1e-6, "flux defect {flux} in {row}");
            assert!(!fields[9].is_empty(), "missing amplitudes in {row}");
        }
    }
    assert!(saw_real_mode);
}

#[test]
fn classify_of_an_empty_table_succeeds_with_an_empty_table() {
    let dir = TempDir::new().unwrap();
    let table = dir.path().join("empty.csv");
    fs::write(&table, "re_k,im_k,re_lambda,im_lambda,residual,ess_distance,rho,classification\n")
        .unwrap();
    let config = format!("{BASE}eigenvalues_csv = {}\n", table.display());
    let (output, run_dir) = run("classify", &config, &[]);
    assert_eq!(exit_code(&output), 0, "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let classified = read_out(&run_dir, "classified.csv");
    assert_eq!(classified.lines().count(), 1);
}

#[test]
fn classify_without_table_is_a_usage_error() {
    let (output, _dir) = run("classify", BASE, &[]);
    assert_eq!(exit_code(&output), 2);
}

#[test]
fn mesh_dump_lists_nodes_and_triangles() {
    let (output, dir) = run("mesh-dump", BASE, &[]);
    assert_eq!(exit_code(&output), 0);
    let dump = read_out(&dir, "mesh.txt");
    assert!(dump.starts_with("n 0 "));
    assert!(dump.contains("\ne 0 "));
    assert!(manifest(&dir).contains("triangles = "));
}

#[test]
fn bundled_configs_parse_and_validate() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().map_or(true, |e| e != "cfg") {
            continue;
        }
        let text = fs::read_to_string(&path).unwrap();
        wgspec::config::parse_config(&text).unwrap_or_else(|e| panic!("{path:?}: {e}"));
        seen += 1;
    }
    assert!(seen >= 6, "expected the bundled configs, found {seen}");
}

#[test]
fn partial_convergence_exits_3_unless_allowed() {
    // A hopeless accuracy demand with no restarts leaves some of the
    // requested pairs unconverged without failing the factorization.
    let config = format!("{BASE}shift = 2.0 0.0\nnev = 16\ntol = 1e-15\nmax_restarts = 0\ndump_modes = none\n");
    let (output, dir) = run("spectrum", &config, &[]);
    assert_eq!(exit_code(&output), 3, "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let m = manifest(&dir);
    assert!(m.contains("status = partial"));
    assert!(m.contains("warning = shift k = "));
    // The partial table is still written.
    assert!(dir.path().join("out/eigenvalues.csv").exists());

    let (output2, dir2) = run("spectrum", &config, &["--allow-partial"]);
    assert_eq!(exit_code(&output2), 0);
    assert!(manifest(&dir2).contains("status = partial"));
}
