//! End-to-end checks of the command-line interface: exit codes, the
//! documented pipeline behaviors, and report structure.

use std::path::Path;
use std::process::{Command, Output};

use ncbc::field::{Field, LatticeDims};
use ncbc::io;
use ncbc::metrics::Roi;

fn ncbc_cmd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ncbc")).args(args).output().expect("spawn the CLI binary")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("CLI terminated by signal")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Generate a small phantom directory; returns (observed, truth) paths.
fn make_phantom(dir: &Path, seed: &str, extra: &[&str]) -> (std::path::PathBuf, std::path::PathBuf) {
    let mut args = vec!["phantom", "--testcard", "48x48", "--seed", seed, "--out-dir", s(dir)];
    args.extend_from_slice(extra);
    let out = ncbc_cmd(&args);
    assert_eq!(code(&out), 0, "phantom failed: {}", String::from_utf8_lossy(&out.stderr));
    (dir.join("observed.raw"), dir.join("truth.raw"))
}

fn write_standard_rois(path: &Path) {
    let rois = ncbc::phantom::test_card_rois(LatticeDims::new(48, 48).unwrap()).unwrap();
    io::save_rois(&rois, path).unwrap();
}

// ---------------------------------------------------------------------------
// Exit codes
// ---------------------------------------------------------------------------

#[test]
fn usage_errors_exit_1() {
    for args in [
        vec!["correct", "--no-such-flag"],
        vec!["phantom", "--testcard", "64x64"], // missing --out-dir
        vec!["phantom", "--testcard", "sixty-four", "--out-dir", "/tmp/x"],
        vec!["frobnicate"],
    ] {
        let out = ncbc_cmd(&args);
        assert_eq!(code(&out), 1, "expected usage error for {args:?}");
        assert!(!out.stderr.is_empty(), "usage errors should print to stderr");
    }
}

#[test]
fn help_and_version_exit_0() {
    let help = ncbc_cmd(&["--help"]);
    assert_eq!(code(&help), 0);
    assert!(String::from_utf8_lossy(&help.stdout).contains("Usage"));
    assert_eq!(code(&ncbc_cmd(&["--version"])), 0);
    assert_eq!(code(&ncbc_cmd(&["correct", "--help"])), 0);
}

#[test]
fn missing_input_file_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ncbc_cmd(&[
        "correct",
        "--input",
        s(&tmp.path().join("nowhere.raw")),
        "--out-image",
        s(&tmp.path().join("out.raw")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());
}

#[test]
fn out_of_bounds_roi_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let (observed, _) = make_phantom(&tmp.path().join("p"), "1", &[]);
    let rois_path = tmp.path().join("rois.json");
    let bad = vec![Roi { name: "prostate".into(), x: 40, y: 40, w: 20, h: 20 }];
    io::save_rois(&bad, &rois_path).unwrap();
    let out = ncbc_cmd(&[
        "evaluate",
        "--image",
        s(&observed),
        "--rois",
        s(&rois_path),
        "--report",
        s(&tmp.path().join("report.json")),
    ]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("prostate"), "error should name the offending roi, got: {err}");
}

#[test]
fn degenerate_metric_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let dims = LatticeDims::new(48, 48).unwrap();
    let flat = tmp.path().join("flat.raw");
    io::save_image(&Field::new(dims, 0.6), &flat).unwrap();
    let rois_path = tmp.path().join("rois.json");
    write_standard_rois(&rois_path);
    let out = ncbc_cmd(&[
        "evaluate",
        "--image",
        s(&flat),
        "--rois",
        s(&rois_path),
        "--report",
        s(&tmp.path().join("report.json")),
    ]);
    assert_eq!(code(&out), 3, "zero-variance rois must fail as degeneracy");
}

// ---------------------------------------------------------------------------
// Phantom generation
// ---------------------------------------------------------------------------

#[test]
fn noise_free_unit_gain_phantom_reproduces_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("p");
    make_phantom(&dir, "1", &["--noise-sigma", "0", "--gain-min", "1", "--gain-max", "1"]);
    let observed = std::fs::read(dir.join("observed.raw")).unwrap();
    let truth = std::fs::read(dir.join("truth.raw")).unwrap();
    assert_eq!(observed, truth, "no corruption means observed == truth byte for byte");
    let bias = io::load_image(&dir.join("bias.raw")).unwrap();
    assert!(bias.values().iter().all(|&b| b == 1.0), "unit gain span gives a flat bias");
}

#[test]
fn default_phantom_corruption_lowers_truth_correlation() {
    let tmp = tempfile::tempdir().unwrap();
    let (observed, truth) = make_phantom(&tmp.path().join("p"), "1", &[]);
    let rois_path = tmp.path().join("rois.json");
    write_standard_rois(&rois_path);
    let report_path = tmp.path().join("report.json");
    let out = ncbc_cmd(&[
        "evaluate",
        "--image",
        s(&observed),
        "--truth",
        s(&truth),
        "--rois",
        s(&rois_path),
        "--report",
        s(&report_path),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    let r = doc["report"]["images"]["observed"]["r"].as_f64().unwrap();
    assert!(r < 1.0, "bias and noise must hurt the truth correlation, got r = {r}");
    assert!(r > 0.0, "the corruption is not supposed to destroy the image, got r = {r}");
}

// ---------------------------------------------------------------------------
// Correction
// ---------------------------------------------------------------------------

#[test]
fn constant_input_yields_unit_bias_and_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let dims = LatticeDims::new(16, 16).unwrap();
    let input = tmp.path().join("flat.raw");
    io::save_image(&Field::new(dims, 3.7), &input).unwrap();

    for method in ["ncbc", "lowpass"] {
        let img_path = tmp.path().join(format!("{method}.raw"));
        let bias_path = tmp.path().join(format!("{method}_bias.raw"));
        let out = ncbc_cmd(&[
            "correct", "--input", s(&input), "--method", method,
            "--out-image", s(&img_path), "--out-bias", s(&bias_path),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let latent = io::load_image(&img_path).unwrap();
        let bias = io::load_image(&bias_path).unwrap();
        let expect = 3.7f32 as f64; // file IO quantizes to f32
        assert!(
            latent.values().iter().all(|&m| (m - expect).abs() < 1e-6),
            "a constant image is its own correction under {method}"
        );
        assert!(bias.values().iter().all(|&b| b == 1.0), "no bias to find under {method}");
    }
}

#[test]
fn diagnostics_record_a_non_increasing_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let (observed, _) = make_phantom(&tmp.path().join("p"), "1", &[]);
    let diag_path = tmp.path().join("diagnostics.json");
    let out = ncbc_cmd(&[
        "correct",
        "--input",
        s(&observed),
        "--seed",
        "9",
        "--out-image",
        s(&tmp.path().join("corrected.raw")),
        "--diagnostics",
        s(&diag_path),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&diag_path).unwrap()).unwrap();
    let trace: Vec<f64> = doc["diagnostics"]["energy_trace"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert!(trace.len() >= 2, "expected a real optimization run");
    assert!(trace.windows(2).all(|w| w[1] <= w[0]), "energy trace must never rise");
    let seed = doc["diagnostics"]["seed"].as_u64();
    assert_eq!(seed, Some(9), "the --seed override lands in the diagnostics");
}

// ---------------------------------------------------------------------------
// Evaluation and comparison reports
// ---------------------------------------------------------------------------

#[test]
fn evaluating_an_image_against_itself_gives_perfect_correlation() {
    let tmp = tempfile::tempdir().unwrap();
    // The noisy observed image doubles as its own "truth"; the noise-free
    // card would be constant inside each ROI and trip the degeneracy checks.
    let (observed, _) = make_phantom(&tmp.path().join("p"), "1", &[]);
    let rois_path = tmp.path().join("rois.json");
    write_standard_rois(&rois_path);
    let report_path = tmp.path().join("report.json");
    let out = ncbc_cmd(&[
        "evaluate", "--image", s(&observed), "--truth", s(&observed),
        "--rois", s(&rois_path), "--report", s(&report_path),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(doc["report"]["images"]["observed"]["r"].as_f64(), Some(1.0));
}

#[test]
fn evaluate_without_truth_omits_correlation() {
    let tmp = tempfile::tempdir().unwrap();
    let (observed, _) = make_phantom(&tmp.path().join("p"), "1", &[]);
    let rois_path = tmp.path().join("rois.json");
    write_standard_rois(&rois_path);
    let report_path = tmp.path().join("report.json");
    let out = ncbc_cmd(&[
        "evaluate", "--image", s(&observed),
        "--rois", s(&rois_path), "--report", s(&report_path),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    let set = doc["report"]["images"]["observed"].as_object().unwrap();
    assert!(!set.contains_key("r"), "no truth, no correlation entry");
    assert!(set.contains_key("snr_db"), "roi metrics are still reported");
}

#[test]
fn compare_with_method_none_skips_significance() {
    let tmp = tempfile::tempdir().unwrap();
    let (obs1, _) = make_phantom(&tmp.path().join("p1"), "1", &[]);
    let (obs2, _) = make_phantom(&tmp.path().join("p2"), "2", &[]);
    let rois_path = tmp.path().join("rois.json");
    write_standard_rois(&rois_path);
    let report_path = tmp.path().join("report.json");
    let inputs = format!("{},{}", s(&obs1), s(&obs2));
    let out = ncbc_cmd(&[
        "compare", "--inputs", &inputs, "--methods", "none",
        "--rois", s(&rois_path), "--report", s(&report_path),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    let report = doc["report"].as_object().unwrap();
    assert!(!report.contains_key("p_values"), "nothing to test against with no correction");
    // Same file stem in both directories: case names get the parent prefix.
    let images = report["images"].as_object().unwrap();
    assert!(images.contains_key("none/p1_observed"), "keys: {:?}", images.keys());
    assert!(images.contains_key("none/p2_observed"));
}

#[test]
fn compare_computes_p_values_for_each_correction_method() {
    let tmp = tempfile::tempdir().unwrap();
    let (obs1, _) = make_phantom(&tmp.path().join("p1"), "1", &[]);
    let (obs2, _) = make_phantom(&tmp.path().join("p2"), "2", &[]);
    let rois_path = tmp.path().join("rois.json");
    write_standard_rois(&rois_path);
    let report_path = tmp.path().join("report.json");
    let inputs = format!("{},{}", s(&obs1), s(&obs2));
    let out = ncbc_cmd(&[
        "compare", "--inputs", &inputs, "--seed", "4",
        "--rois", s(&rois_path), "--report", s(&report_path),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(doc["cases"].as_array().unwrap().len(), 2);
    let p_values = doc["report"]["p_values"].as_object().unwrap();
    for method in ["ncbc", "lowpass"] {
        let per_metric = p_values[method].as_object().unwrap();
        let p = per_metric["snr_db"].as_f64().unwrap();
        assert!((1e-300..=1.0).contains(&p), "{method} snr p-value out of range: {p}");
    }
}

#[test]
fn compare_accepts_a_single_file_listed_twice() {
    let tmp = tempfile::tempdir().unwrap();
    let (obs1, _) = make_phantom(&tmp.path().join("p1"), "1", &[]);
    let rois_path = tmp.path().join("rois.json");
    write_standard_rois(&rois_path);
    let report_path = tmp.path().join("report.json");
    let inputs = format!("{},{}", s(&obs1), s(&obs1));
    let out = ncbc_cmd(&[
        "compare", "--inputs", &inputs, "--methods", "ncbc,none",
        "--rois", s(&rois_path), "--report", s(&report_path),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(doc["cases"].as_array().unwrap().len(), 2, "the pair counts as two cases");
}

#[test]
fn compare_expands_glob_patterns_per_case_directory() {
    let tmp = tempfile::tempdir().unwrap();
    make_phantom(&tmp.path().join("c1"), "1", &[]);
    make_phantom(&tmp.path().join("c2"), "2", &[]);
    let rois_path = tmp.path().join("rois.json");
    write_standard_rois(&rois_path);
    let report_path = tmp.path().join("report.json");
    let pattern = format!("{}/c*/observed.raw", s(tmp.path()));
    let out = ncbc_cmd(&[
        "compare", "--inputs", &pattern, "--methods", "none",
        "--rois", s(&rois_path), "--report", s(&report_path),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    let cases: Vec<&str> =
        doc["cases"].as_array().unwrap().iter().map(|c| c.as_str().unwrap()).collect();
    assert_eq!(cases, ["c1_observed", "c2_observed"], "sorted, directory-qualified names");
}

#[test]
fn compare_rejects_a_pattern_matching_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let rois_path = tmp.path().join("rois.json");
    write_standard_rois(&rois_path);
    let pattern = format!("{}/missing*/observed.raw", s(tmp.path()));
    let out = ncbc_cmd(&[
        "compare", "--inputs", &pattern, "--methods", "none",
        "--rois", s(&rois_path), "--report", s(&tmp.path().join("report.json")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing*"));
}

// ---------------------------------------------------------------------------
// Configuration handling
// ---------------------------------------------------------------------------

#[test]
fn unknown_config_key_exits_2_and_names_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let (observed, _) = make_phantom(&tmp.path().join("p"), "1", &[]);
    let cfg_path = tmp.path().join("config.json");
    std::fs::write(&cfg_path, r#"{ "mu1": 1.0, "mu3": 0.5 }"#).unwrap();
    let out = ncbc_cmd(&[
        "correct", "--input", s(&observed), "--config", s(&cfg_path),
        "--out-image", s(&tmp.path().join("out.raw")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("mu3"));
}

#[test]
fn invalid_config_value_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let (observed, _) = make_phantom(&tmp.path().join("p"), "1", &[]);
    let cfg_path = tmp.path().join("config.json");
    std::fs::write(&cfg_path, r#"{ "rel_tol": -1.0 }"#).unwrap();
    let out = ncbc_cmd(&[
        "correct", "--input", s(&observed), "--config", s(&cfg_path),
        "--out-image", s(&tmp.path().join("out.raw")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("rel_tol"));
}

#[test]
fn failed_runs_leave_no_partial_output_files() {
    let tmp = tempfile::tempdir().unwrap();
    let dims = LatticeDims::new(48, 48).unwrap();
    let flat = tmp.path().join("flat.raw");
    io::save_image(&Field::new(dims, 0.6), &flat).unwrap();
    let rois_path = tmp.path().join("rois.json");
    write_standard_rois(&rois_path);
    let report_path = tmp.path().join("report.json");
    let out = ncbc_cmd(&[
        "evaluate", "--image", s(&flat), "--rois", s(&rois_path),
        "--report", s(&report_path),
    ]);
    assert_eq!(code(&out), 3);
    assert!(!report_path.exists(), "a failed evaluation must not leave a report behind");
    let leftovers: Vec<_> = std::fs::read_dir(tmp.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.contains(".tmp"))
        .collect();
    assert!(leftovers.is_empty(), "stray temp files: {leftovers:?}");
}
