use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tdae_cli::image_io::{read_image, write_image, RgbImage};

fn tdae(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tdae"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn test_image(dir: &Path, name: &str) -> PathBuf {
    let data = (0..16 * 16 * 3).map(|i| ((i * 29 + i / 48 * 7) % 256) as u8).collect();
    let p = dir.join(name);
    write_image(&p, &RgbImage::new(16, 16, data)).unwrap();
    p
}

const SMALL: &str = r#"
schema_version = 1
seed = 3

[tdae]
eps_v = 8
iterations = 8
dpd_period = 4
dpd_iterations = 2

[plan]
source = { family = "cond-conv", seed = 1 }
targets = [{ family = "cond-mlp", seed = 2 }]
images = { count = 2, height = 16, width = 16, seed = 0 }
trials = 2

[ablate]
ratios = [0.0, 0.3]
"#;

fn strip_wall(json: &str) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(json).unwrap();
    v.as_object_mut().unwrap().remove("wall_secs");
    v
}

#[test]
fn zero_budget_reproduces_the_input_file() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "zero.toml", "schema_version = 1\n[tdae]\neps_v = 0\niterations = 5\n");
    for ext in ["png", "ppm"] {
        let input = test_image(dir.path(), &format!("in.{ext}"));
        let out = tdae(dir.path(), &["immunize", "--config", "zero.toml", &format!("in.{ext}"), &format!("out.{ext}")]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(read_image(&input).unwrap(), read_image(&dir.path().join(format!("out.{ext}"))).unwrap());
    }
}

#[test]
fn immunized_output_is_budgeted_and_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "run.toml", "schema_version = 1\nseed = 9\n[tdae]\neps_v = 4\niterations = 6\n");
    let input = test_image(dir.path(), "in.png");
    for name in ["a.png", "b.png"] {
        let out = tdae(dir.path(), &["immunize", "--config", "run.toml", "in.png", name]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(dir.path().join("a.png")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.png")).unwrap());
    let sa = std::fs::read_to_string(dir.path().join("a.png.json")).unwrap();
    let sb = std::fs::read_to_string(dir.path().join("b.png.json")).unwrap();
    assert_eq!(strip_wall(&sa), strip_wall(&sb));
    let side = strip_wall(&sa);
    assert!(side["final_linf_levels"].as_u64().unwrap() <= 4);
    assert_eq!(side["records"].as_array().unwrap().len(), 6);
    let x = read_image(&input).unwrap();
    let y = read_image(&dir.path().join("a.png")).unwrap();
    assert!(x.max_level_diff(&y) <= 4);
    assert_ne!(x, y);

    let other = tdae(dir.path(), &["immunize", "--config", "run.toml", "--seed", "10", "in.png", "c.png"]);
    assert!(other.status.success());
    assert_ne!(a, std::fs::read(dir.path().join("c.png")).unwrap());
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    test_image(dir.path(), "in.png");
    write(dir.path(), "bad.toml", "schema_version = 1\n[tdae]\nepsilon = 3\n");
    write(dir.path(), "empty.toml", "schema_version = 1\n");
    write(dir.path(), "broken.png", "definitely not a png");

    let missing = tdae(dir.path(), &["immunize", "nope.png", "out.png"]);
    assert_eq!(missing.status.code(), Some(2));
    let broken = tdae(dir.path(), &["immunize", "broken.png", "out.png"]);
    assert_eq!(broken.status.code(), Some(2));
    let unknown = tdae(dir.path(), &["immunize", "--config", "bad.toml", "in.png", "out.png"]);
    assert_eq!(unknown.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("epsilon"));
    let no_config = tdae(dir.path(), &["evaluate", "--config", "absent.toml"]);
    assert_eq!(no_config.status.code(), Some(2));
    for cmd in ["evaluate", "ablate", "bench"] {
        let empty = tdae(dir.path(), &[cmd, "--config", "empty.toml"]);
        assert_eq!(empty.status.code(), Some(3), "{cmd}");
        assert!(String::from_utf8_lossy(&empty.stderr).contains("[plan]"));
    }
    let usage = tdae(dir.path(), &["frobnicate"]);
    assert_eq!(usage.status.code(), Some(3));
}

#[test]
fn ablate_assert_passes_the_reduction_check() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "small.toml", SMALL);
    let out = tdae(dir.path(), &["ablate", "--config", "small.toml", "--assert", "--format", "csv", "--out", "r"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(stdout.contains("PASS ablate: ratio 0 reproduces pgd"));
    let csv = std::fs::read_to_string(dir.path().join("r/ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn failed_assertions_exit_with_five() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL}\n[bench]\nmin_wall_ratio = 1000.0\n");
    write(dir.path(), "strict.toml", &cfg);
    let out = tdae(dir.path(), &["bench", "--config", "strict.toml", "--assert"]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL bench: wall-time ratio"));
    let lenient = tdae(dir.path(), &["bench", "--config", "strict.toml"]);
    assert_eq!(lenient.status.code(), Some(0));
}

#[test]
fn evaluate_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL}\n[evaluate]\ntasks = [\"intra\", \"cross\", \"imperceptibility\", \"flatness\"]\n");
    write(dir.path(), "eval.toml", &cfg);
    for (run, format) in [("a", "json"), ("b", "json"), ("c", "csv"), ("d", "csv")] {
        let out = tdae(dir.path(), &["evaluate", "--config", "eval.toml", "--format", format, "--out", run]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for task in ["intra", "cross", "imperceptibility", "flatness"] {
        for (x, y, ext) in [("a", "b", "json"), ("c", "d", "csv")] {
            let p = |r: &str| dir.path().join(r).join(format!("{task}.{ext}"));
            assert_eq!(std::fs::read(p(x)).unwrap(), std::fs::read(p(y)).unwrap(), "{task}.{ext}");
        }
    }
    let cross: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/cross.json")).unwrap()).unwrap();
    assert_eq!(cross["schema_version"], 1);
    assert_eq!(cross["rows"].as_array().unwrap().len(), 2 * 2 * 2);
}

#[test]
fn ablation_csv_matches_the_recorded_fixture() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "small.toml", SMALL);
    let out = tdae(dir.path(), &["ablate", "--config", "small.toml", "--format", "csv", "--out", "r"]);
    assert!(out.status.success());
    let got = std::fs::read_to_string(dir.path().join("r/ablation.csv")).unwrap();
    let want = include_str!("fixtures/ablation_small.csv");
    assert_eq!(got, want);
}

#[test]
fn config_subcommand_prints_a_canonical_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "small.toml", SMALL);
    let first = tdae(dir.path(), &["config", "--config", "small.toml"]);
    assert!(first.status.success());
    write(dir.path(), "canon.toml", &String::from_utf8(first.stdout.clone()).unwrap());
    let second = tdae(dir.path(), &["config", "--config", "canon.toml"]);
    assert_eq!(first.stdout, second.stdout);
    let text = String::from_utf8(first.stdout).unwrap();
    assert!(text.contains("schema_version = 1"));
    assert!(text.contains("[tdae]"));
}
