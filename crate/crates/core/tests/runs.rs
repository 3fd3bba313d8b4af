use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use eigen_core::flow::VectorField;
use eigen_core::pipeline::{self, load_checkpoint, RunConfig, ScoreRecord};

fn small_config(out: &Path, generations: u64) -> RunConfig {
    RunConfig {
        species_count: 2,
        species_size: 5,
        max_generations: generations,
        seed: 9,
        output_dir: out.to_path_buf(),
        workers: 2,
        ..RunConfig::default()
    }
}

/// Every file under `root` keyed by relative path, skipping checkpoints
/// (they embed the output directory).
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else if path.file_name().unwrap() != "checkpoint.json" {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn single_generation_run() {
    let dir = tempfile::tempdir().unwrap();
    let report = pipeline::run(&small_config(dir.path(), 1)).unwrap();
    assert_eq!(report.generations.len(), 1);
    assert!(dir.path().join("gen_0/best.png").exists());
    assert!(!dir.path().join("gen_1").exists());
    for f in [
        "best.png",
        "best_overlay.png",
        "best_genome.json",
        "scores.json",
        "composite.png",
    ] {
        assert!(dir.path().join("final").join(f).exists(), "{f}");
    }
    let scores: Vec<ScoreRecord> =
        serde_json::from_slice(&fs::read(dir.path().join("gen_0/scores.json")).unwrap()).unwrap();
    assert_eq!(scores.len(), 10);
    assert!(scores.iter().enumerate().all(|(i, s)| s.index == i));
    assert_eq!(
        fs::read(dir.path().join("gen_0/best_genome.json")).unwrap(),
        fs::read(dir.path().join("final/best_genome.json")).unwrap()
    );
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline::run(&small_config(a.path(), 4)).unwrap();
    pipeline::run(&RunConfig {
        workers: 1,
        ..small_config(b.path(), 4)
    })
    .unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert!(ta.len() > 20);
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in &ta {
        assert!(tb[k] == *v, "{} differs", k.display());
    }
}

#[test]
fn resume_from_any_generation_matches() {
    let full = tempfile::tempdir().unwrap();
    let report = pipeline::run(&small_config(full.path(), 4)).unwrap();
    let reference = tree(full.path());
    for k in 0..4u64 {
        let out = tempfile::tempdir().unwrap();
        let ck = full.path().join(format!("gen_{k}/checkpoint.json"));
        let resumed = pipeline::resume(&ck, Some(out.path())).unwrap();
        // wall time is not persisted, so compare the serialized form
        assert_eq!(
            serde_json::to_string(&resumed).unwrap(),
            serde_json::to_string(&report).unwrap()
        );
        let got = tree(out.path());
        for (path, bytes) in &got {
            assert!(
                reference[path] == *bytes,
                "gen {k}: {} differs",
                path.display()
            );
        }
        // generations after k were all rewritten, and the final directory too
        assert!(got.contains_key(Path::new("final/best_genome.json")));
        assert_eq!(
            got.keys().filter(|p| p.starts_with("gen_3")).count(),
            usize::from(k < 3) * 5
        );
    }
}

#[test]
fn checkpoint_holds_the_evaluated_generation() {
    let dir = tempfile::tempdir().unwrap();
    pipeline::run(&small_config(dir.path(), 2)).unwrap();
    let ck = load_checkpoint(&dir.path().join("gen_1/checkpoint.json")).unwrap();
    assert_eq!(ck.population.generation, 1);
    assert_eq!(ck.scores.len(), 10);
    assert_eq!(ck.history.len(), 2);
    assert_eq!(ck.reports.len(), 2);
    assert_eq!(ck.config.seed, 9);
}

#[test]
fn best_total_never_decreases() {
    let dir = tempfile::tempdir().unwrap();
    let report = pipeline::run(&RunConfig {
        convergence_patience: 100,
        ..small_config(dir.path(), 6)
    })
    .unwrap();
    assert_eq!(report.generations.len(), 6);
    for w in report.generations.windows(2) {
        assert!(
            w[1].best_total >= w[0].best_total,
            "{} -> {}",
            w[0].best_total,
            w[1].best_total
        );
    }
}

#[test]
fn convergence_stops_early() {
    let dir = tempfile::tempdir().unwrap();
    // offspring are plain copies, so the elite stays best
    let frozen = eigen_core::neat::NeatParams {
        weight_mutate_rate: 0.0,
        add_connection_rate: 0.0,
        add_node_rate: 0.0,
        crossover_rate: 0.0,
        ..Default::default()
    };
    let report = pipeline::run(&RunConfig {
        neat: frozen,
        convergence_patience: 2,
        ..small_config(dir.path(), 50)
    })
    .unwrap();
    assert!(report.converged);
    assert_eq!(report.generations.len(), 3);
    assert!(!dir.path().join("gen_3").exists());
}

#[test]
fn diagnostics_cover_every_member() {
    let dir = tempfile::tempdir().unwrap();
    pipeline::run(&RunConfig {
        diagnostics: true,
        ..small_config(dir.path(), 1)
    })
    .unwrap();
    for i in 0..10 {
        let d = dir.path().join(format!("gen_0/genomes/{i:03}"));
        for f in ["image.png", "overlay.png", "score.json"] {
            assert!(d.join(f).exists(), "{}", d.join(f).display());
        }
        let field: VectorField =
            serde_json::from_slice(&fs::read(d.join("flow.json")).unwrap()).unwrap();
        assert_eq!(field.source_size, (160, 120));
    }
}

fn eigen() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_eigen"));
    c.env("RUST_LOG", "warn");
    c
}

#[test]
fn cli_run_applies_file_and_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        "# small smoke run\nspecies_count = 2\nspecies_size = 3\nseed = 1\nmax_generations = 9\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let status = eigen()
        .args(["run", "--config"])
        .arg(&cfg)
        .args([
            "--generations",
            "2",
            "--seed",
            "4",
            "--predictor",
            "shift:1,0",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("gen_1").exists() && !out.join("gen_2").exists());
    let ck = load_checkpoint(&out.join("gen_1/checkpoint.json")).unwrap();
    assert_eq!((ck.config.seed, ck.config.species_size), (4, 3));
    assert_eq!(ck.config.predictor.to_string(), "shift:1,0");

    let status = eigen()
        .args(["resume", "--checkpoint"])
        .arg(out.join("gen_0/checkpoint.json"))
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn cli_score_prints_json() {
    let dir = tempfile::tempdir().unwrap();
    pipeline::run(&small_config(dir.path(), 1)).unwrap();
    let image = dir.path().join("final/best.png");
    let overlay = dir.path().join("scored_overlay.png");
    let out = eigen()
        .args(["score", "--predictor", "shift:2,0", "--image"])
        .arg(&image)
        .arg("--overlay")
        .arg(&overlay)
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["n_valid"].as_u64().unwrap() > 0);
    assert!(overlay.exists());

    let out = eigen()
        .args(["score", "--predictor", "identity", "--image"])
        .arg(&image)
        .output()
        .unwrap();
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["total"].as_f64(), Some(0.0));
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "no_such_key = 1\n").unwrap();
    let code = |c: &mut Command| c.status().unwrap().code();

    assert_eq!(code(eigen().args(["run", "--config"]).arg(&bad)), Some(2));
    assert_eq!(
        code(
            eigen()
                .args(["score", "--predictor", "identity", "--image"])
                .arg(dir.path().join("missing.png"))
        ),
        Some(3)
    );

    pipeline::run(&small_config(dir.path(), 1)).unwrap();
    let sidecar = format!(
        "external:{} echo-predictor --fail broken",
        env!("CARGO_BIN_EXE_eigen")
    );
    assert_eq!(
        code(
            eigen()
                .args(["score", "--predictor", &sidecar, "--image"])
                .arg(dir.path().join("final/best.png"))
        ),
        Some(4)
    );
}
