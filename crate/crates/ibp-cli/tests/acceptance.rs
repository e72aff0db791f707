//! Acceptance: deterministic mode produces byte-identical artifacts.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ibp"))
}

fn tempdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ibp-accept-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("missing {}: {e}", path.display()))
}

#[test]
fn acceptance_8_deterministic_runs_are_byte_identical() {
    let work = tempdir("det");
    let scenario = work.join("scenario.toml");

    // Generation itself must be reproducible.
    let scenario2 = work.join("scenario2.toml");
    for target in [&scenario, &scenario2] {
        let status = bin()
            .args([
                "generate",
                "--scenario",
                target.to_str().unwrap(),
                "--seed",
                "7",
                "--template",
                "peaked",
                "--slots",
                "12",
                "--clusters",
                "2",
            ])
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(read(&scenario), read(&scenario2));

    // Two deterministic sweeps, two lower-bound runs, two exports.
    for run in ["a", "b"] {
        let out = work.join(format!("sweep-{run}"));
        let status = bin()
            .args([
                "sweep",
                "--scenario",
                scenario.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--xi",
                "0,0.01,0.02",
                "--blocks",
                "2",
                "--node-limit",
                "3",
                "--deterministic",
            ])
            .status()
            .unwrap();
        assert!(status.success());

        let out = work.join(format!("lb-{run}"));
        let status = bin()
            .args([
                "lower-bound",
                "--scenario",
                scenario.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());

        let out = work.join(format!("mps-{run}"));
        let status = bin()
            .args([
                "export-mps",
                "--scenario",
                scenario.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--xi",
                "0.02",
            ])
            .status()
            .unwrap();
        assert!(status.success());
    }
    for (dir, files) in [
        ("sweep", vec!["sweep.csv", "summary.txt"]),
        ("lb", vec!["lower_bound.csv", "profiles.csv", "summary.txt"]),
        ("mps", vec!["model.mps", "model_stats.txt"]),
    ] {
        for file in files {
            let a = read(&work.join(format!("{dir}-a")).join(file));
            let b = read(&work.join(format!("{dir}-b")).join(file));
            assert_eq!(a, b, "{dir}/{file} differs between identical runs");
        }
    }
    println!("acceptance 8 (deterministic byte-identical artifacts): PASS");
}
