use std::path::Path;
use std::process::{Command, Output};

use gmclab::estimator::GirsanovFunctional;
use gmclab::geometry::TileKind;
use gmclab::Rect;
use gmclab_cli::{run, CommandKind, ExperimentConfig, KernelChoice, RunManifest};
use proptest::prelude::*;

fn gmclab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gmclab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(o: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&o.stdout);
    serde_json::from_str(text.lines().last().unwrap_or("")).expect("json summary line")
}

fn out(dir: &Path) -> &str {
    dir.to_str().unwrap()
}

fn arb_config() -> impl Strategy<Value = ExperimentConfig> {
    let commands = prop::sample::select(vec![
        CommandKind::ScanMoments,
        CommandKind::VerifyScaling,
        CommandKind::VerifyGirsanov,
        CommandKind::VerifyKahane,
        CommandKind::Tile,
        CommandKind::TailIndex,
    ]);
    let kinds = prop::sample::select(vec![TileKind::Whitney, TileKind::Gamma, TileKind::Pi]);
    (
        (
            commands,
            0.1f64..1.99,
            -3.0f64..3.0,
            -3.0f64..3.0,
            prop::option::of(-0.4f64..0.4),
        ),
        (
            1usize..128,
            prop::collection::vec(1usize..256, 0..5),
            any::<u64>(),
            0.01f64..1.0,
        ),
        (
            prop::collection::vec(-2.0f64..2.0, 0..4),
            kinds,
            0u32..10,
            prop::option::of(4usize..500),
            any::<bool>(),
        ),
    )
        .prop_map(
            |(
                (command, gamma, p, q, v),
                (n, res, seed, c),
                (grid, tile_kind, levels, hill_k, cos),
            )| {
                ExperimentConfig {
                    command,
                    gamma,
                    p,
                    q,
                    region: Rect {
                        x0: -0.25,
                        x1: 0.25,
                        y0: 0.0,
                        y1: 0.5,
                    },
                    localization: v,
                    n_cells: n,
                    resolutions: res,
                    seed,
                    diag_constant: c,
                    p_grid: grid.clone(),
                    q_grid: grid,
                    kernel: if cos {
                        KernelChoice::CosGaussian
                    } else {
                        KernelChoice::ExactScaling
                    },
                    functionals: vec![GirsanovFunctional::Quotient { p, q }],
                    tile_kind,
                    levels,
                    hill_k,
                    ..ExperimentConfig::default()
                }
            },
        )
}

proptest! {
    #[test]
    fn config_round_trips_through_json(c in arb_config()) {
        prop_assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
    }
}

#[test]
fn partial_config_file_fills_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("c.json");
    std::fs::write(
        &path,
        r#"{"command": "tile", "tile_kind": "gamma", "levels": 2}"#,
    )
    .unwrap();
    let c = ExperimentConfig::load(&path).unwrap();
    assert_eq!(c.command, CommandKind::Tile);
    assert_eq!(c.levels, 2);
    assert_eq!(c.n_samples, ExperimentConfig::default().n_samples);
}

#[test]
fn gamma_tiling_covers_the_cube() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gmclab(&[
        "tile",
        "--kind",
        "gamma",
        "--r",
        "1",
        "--levels",
        "3",
        "--output-dir",
        out(tmp.path()),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("results.json")).unwrap()).unwrap();
    assert_eq!(json["partition"]["area_sum"], serde_json::json!("4"));
    assert_eq!(json["partition"]["disjoint"], serde_json::json!(true));
    let csv = std::fs::read_to_string(tmp.path().join("results.csv")).unwrap();
    assert!(csv.starts_with("tile,level,part,x0,x1,y0,y1,area"));
}

#[test]
fn kahane_preset_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gmclab(&[
        "verify-kahane",
        "--preset",
        "monomial-2d",
        "--output-dir",
        out(tmp.path()),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout_json(&o)["passed"], serde_json::json!(true));
}

#[test]
fn input_errors_exit_with_two_and_report_json() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gmclab(&[
        "verify-kahane",
        "--preset",
        "no-such-preset",
        "--output-dir",
        out(tmp.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let j = stdout_json(&o);
    assert_eq!(j["exit_code"], serde_json::json!(2));
    assert!(j["message"].as_str().unwrap().contains("no-such-preset"));

    let o = gmclab(&[
        "verify-scaling",
        "--kernel",
        "cos-gaussian",
        "--output-dir",
        out(tmp.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));

    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"gama": 1.0}"#).unwrap();
    let o = gmclab(&[
        "scan-moments",
        "--config",
        bad.to_str().unwrap(),
        "--output-dir",
        out(tmp.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failed_check_exits_with_one() {
    // No z-score is that small.
    let tmp = tempfile::tempdir().unwrap();
    let o = gmclab(&[
        "verify-girsanov",
        "--n-cells",
        "4",
        "--n-samples",
        "200",
        "--z-threshold",
        "1e-12",
        "--output-dir",
        out(tmp.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stdout_json(&o)["passed"], serde_json::json!(false));
}

#[test]
fn manifest_digests_match_outputs_and_rerun_reproduces() {
    let tmp = tempfile::tempdir().unwrap();
    let config = ExperimentConfig {
        command: CommandKind::ScanMoments,
        gamma: 1.5,
        p_grid: vec![0.5, 1.6],
        q_grid: vec![0.0],
        resolutions: vec![4, 8, 16],
        n_samples: 256,
        seed: 11,
        output_dir: tmp.path().join("first"),
        ..ExperimentConfig::default()
    };
    let outcome = run(&config).unwrap();
    let manifest = RunManifest::load(&outcome.output_dir.join("manifest.json")).unwrap();
    assert!(manifest.verify_digests(&outcome.output_dir).unwrap());
    assert!(manifest.files.iter().any(|f| f.name == "phase_diagram.csv"));
    let phase = std::fs::read_to_string(outcome.output_dir.join("phase_diagram.csv")).unwrap();
    assert_eq!(phase.lines().count(), 3);

    std::fs::write(outcome.output_dir.join("results.csv"), "tampered").unwrap();
    assert!(!manifest.verify_digests(&outcome.output_dir).unwrap());

    let rerun_dir = tmp.path().join("again");
    let o = gmclab(&[
        "rerun",
        "--manifest",
        outcome.output_dir.join("manifest.json").to_str().unwrap(),
        "--output-dir",
        out(&rerun_dir),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout_json(&o)["reproduced"], serde_json::json!(true));
}
