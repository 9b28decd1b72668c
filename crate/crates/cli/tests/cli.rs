//! End-to-end checks of the binary: exit codes, output files, and the
//! determinism contract for repeated runs.

use std::process::Command;

fn goafem() -> Command {
    Command::new(env!("CARGO_BIN_EXE_goafem"))
}

#[test]
fn run_writes_csv_and_meshes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("z1");
    let status = goafem()
        .args([
            "run",
            "--problem",
            "zshape",
            "--p",
            "1",
            "--strategy",
            "maximum",
            "--theta",
            "0.5",
            "--max-dofs",
            "500",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(out.join("convergence.csv")).unwrap();
    assert!(csv.lines().count() >= 3, "header plus at least two rows");
    assert!(csv.starts_with("iter,ntri,nedges,ndof,eta2,eta_star2"));
    assert!(out.join("mesh_final.txt").exists());
    assert!(out.join("level_final.svg").exists());
    assert!(out.join("convergence.svg").exists());
    // the final mesh file parses back
    let mesh = goafem::Mesh::from_text(&std::fs::read_to_string(out.join("mesh_final.txt")).unwrap())
        .unwrap();
    assert!(mesh.n_triangles() > 7);
}

#[test]
fn goal_run_records_dual_quantities() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bet");
    let status = goafem()
        .args([
            "run",
            "--problem",
            "goal_square",
            "--strategy",
            "bet",
            "--p",
            "2",
            "--max-dofs",
            "400",
            "--svg",
            "off",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(out.join("convergence.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    assert!(header.contains(&"eta_star2") && header.contains(&"goal"));
    // dual estimator column carries real values
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let eta_star: f64 = row[5].parse().unwrap();
    assert!(eta_star > 0.0);
    assert!(!out.join("convergence.svg").exists(), "svg was off");
}

#[test]
fn invalid_theta_exits_with_usage_error() {
    let out = goafem()
        .args(["run", "--problem", "zshape", "--theta", "1.5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("theta"));
    assert!(stderr.contains("usage"), "prints a synopsis");
}

#[test]
fn unknown_flags_exit_with_code_2() {
    let out = goafem().args(["run", "--nonsense"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn repeated_runs_are_deterministic_up_to_timing() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let status = goafem()
            .args([
                "run",
                "--problem",
                "goal_square",
                "--strategy",
                "goafem_maximum",
                "--max-dofs",
                "300",
                "--snapshot-every",
                "2",
                "--out",
            ])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    // CSVs agree except for the wall-time column; SVGs and meshes byte-wise.
    let strip_seconds = |text: String| -> String {
        text.lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect::<Vec<_>>()
            .join("\n")
    };
    let csv_a = strip_seconds(std::fs::read_to_string(a.join("convergence.csv")).unwrap());
    let csv_b = strip_seconds(std::fs::read_to_string(b.join("convergence.csv")).unwrap());
    assert_eq!(csv_a, csv_b);
    for name in ["mesh_final.txt", "level_final.svg", "convergence.svg", "mesh_0002.txt"] {
        let bytes_a = std::fs::read(a.join(name)).unwrap();
        let bytes_b = std::fs::read(b.join(name)).unwrap();
        assert_eq!(bytes_a, bytes_b, "{name} differs between identical runs");
    }
}
