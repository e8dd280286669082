mod common;

use std::path::PathBuf;

use boop_cli::commands::{sha256_hex, Command};
use boop_cli::config::Overrides;
use boop_cli::main_with_args;
use common::{invoke, read_tsv, small_bvar_config, snapshot, write_var_csv};

fn write(path: &std::path::Path, text: &str) -> PathBuf {
    std::fs::write(path, text).unwrap();
    path.to_path_buf()
}

#[test]
fn optimize_on_bench_writes_iterations_plus_j0_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let code = main_with_args(["boop", "optimize", "--strategy", "boop", "--iterations", "5", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    let (header, rows) = read_tsv(&out.join("trace.tsv"));
    assert_eq!(rows.len(), 7);
    assert_eq!(header, ["iter", "x0", "x1", "f_hat", "se", "g_used", "stopped_early", "f_max", "cum_draws", "fallback"]);
    let (_, summary) = read_tsv(&out.join("summary.tsv"));
    let labels: Vec<&str> = summary.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(labels, ["incumbent", "optimized", "standard"]);
}

#[test]
fn bo_ei_runs_every_evaluation_to_the_cap() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let code = main_with_args(["boop", "optimize", "--strategy", "bo-ei", "--iterations", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    let (header, rows) = read_tsv(&out.join("trace.tsv"));
    let g = header.iter().position(|h| h == "g_used").unwrap();
    assert!(rows.iter().all(|r| r[g] == "10000"));
}

#[test]
fn grid_with_two_points_per_axis_has_eight_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("var.csv");
    write_var_csv(&data, 80, 3);
    let mut text = small_bvar_config(&data, 2);
    text.push_str(
        "\n[grid]\ndraws = 600\naxes = [\n  { lower = 0.1, upper = 0.2, step = 0.1 },\n  { lower = 0.5, upper = 1.0, step = 0.5 },\n  { lower = 1.0, upper = 2.0, step = 1.0 },\n]\n",
    );
    let config = write(&dir.path().join("grid.toml"), &text);
    let out = dir.path().join("grid");
    invoke(Command::Grid, Some(config), Overrides::default(), &out).unwrap();
    let (header, rows) = read_tsv(&out.join("surface.tsv"));
    assert_eq!(header, ["lambda1", "lambda2", "lambda3", "f_hat", "se"]);
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r[3].parse::<f64>().unwrap().is_finite()));
    // last axis varies fastest
    assert_eq!(rows[0][2], rows[2][2]);
    assert_ne!(rows[0][2], rows[1][2]);
    let (_, summary) = read_tsv(&out.join("summary.tsv"));
    assert_eq!(summary[0][0], "argmax");
}

#[test]
fn surface_export_covers_the_requested_grid() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("var.csv");
    write_var_csv(&data, 80, 4);
    let mut text = small_bvar_config(&data, 3);
    text.push_str("\n[surface]\nlambda3 = 1.5\nlambda1 = { lower = 0.1, upper = 0.3, step = 0.1 }\nlambda2 = { lower = 0.2, upper = 0.4, step = 0.2 }\n");
    let config = write(&dir.path().join("run.toml"), &text);
    let opt = dir.path().join("opt");
    invoke(Command::Optimize, Some(config.clone()), Overrides::default(), &opt).unwrap();

    let out = dir.path().join("surface");
    let overrides = Overrides { data: Some(opt.join("trace.tsv")), ..Overrides::default() };
    let manifest = invoke(Command::SurfaceExport, Some(config), overrides, &out).unwrap();
    let (header, rows) = read_tsv(&out.join("surface_export.tsv"));
    assert_eq!(header, ["lambda1", "lambda2", "lambda3", "mean", "sd"]);
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert_eq!(r[2].parse::<f64>().unwrap(), 1.5);
        assert!(r[4].parse::<f64>().unwrap() >= 0.0);
    }
    assert_eq!(manifest.inputs[0].role, "trace");
}

#[test]
fn manifest_hashes_match_the_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("var.csv");
    write_var_csv(&data, 80, 5);
    let config = write(&dir.path().join("run.toml"), &small_bvar_config(&data, 1));
    let out = dir.path().join("run");
    let manifest = invoke(Command::Optimize, Some(config), Overrides::default(), &out).unwrap();
    assert_eq!(manifest.config_sha256, sha256_hex(&std::fs::read(out.join("config.toml")).unwrap()));
    assert_eq!(manifest.inputs[0].sha256, sha256_hex(&std::fs::read(&data).unwrap()));
    for a in &manifest.artifacts {
        assert_eq!(a.sha256, sha256_hex(&std::fs::read(out.join(&a.name)).unwrap()));
    }
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(json["command"], "optimize");
    assert_eq!(json["seed"], 7);
    assert!(json["aggregation"].as_str().unwrap().contains("mean"));
}

#[test]
fn rerun_from_saved_config_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    let code = main_with_args(["boop", "optimize", "--seed", "11", "--iterations", "4", "--out", first.to_str().unwrap()]);
    assert_eq!(code, 0);
    let second = dir.path().join("b");
    let saved = first.join("config.toml");
    let code = main_with_args(["boop", "optimize", "--config", saved.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert_eq!(snapshot(&first), snapshot(&second));
}

#[test]
fn seed_changes_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<Vec<u8>> = ["1", "2"]
        .iter()
        .map(|seed| {
            let out = dir.path().join(seed);
            assert_eq!(main_with_args(["boop", "optimize", "--seed", seed, "--iterations", "2", "--out", out.to_str().unwrap()]), 0);
            std::fs::read(out.join("trace.tsv")).unwrap()
        })
        .collect();
    assert_ne!(runs[0], runs[1]);
}

#[test]
fn exit_codes_classify_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let bad_key = write(&dir.path().join("bad.toml"), "[optimizer]\nalpah = 0.1\n");
    assert_eq!(main_with_args(["boop", "optimize", "--config", bad_key.to_str().unwrap(), "--out", out]), 2);
    let bad_value = write(&dir.path().join("alpha.toml"), "[optimizer]\nalpha = 2.0\n");
    assert_eq!(main_with_args(["boop", "grid", "--config", bad_value.to_str().unwrap(), "--out", out]), 2);
    assert_eq!(main_with_args(["boop", "optimize", "--config", "/nonexistent/run.toml", "--out", out]), 2);
    assert_eq!(main_with_args(["boop", "optimize", "--strategy", "random", "--out", out]), 2);

    let data = dir.path().join("var.csv");
    let config = write(&dir.path().join("bvar.toml"), &small_bvar_config(&data, 1));
    // the data file does not exist yet
    assert_eq!(main_with_args(["boop", "optimize", "--config", config.to_str().unwrap(), "--out", out]), 4);
    std::fs::write(&data, "gdp,infl,rate\n1,2,3\n4,oops,6\n").unwrap();
    assert_eq!(main_with_args(["boop", "optimize", "--config", config.to_str().unwrap(), "--out", out]), 4);
    let err = invoke(Command::Optimize, Some(config.clone()), Overrides::default(), dir.path()).unwrap_err().to_string();
    assert!(err.contains("row 2") && err.contains("column 2"), "{err}");
    // too short for two lags
    std::fs::write(&data, "gdp,infl,rate\n1,2,3\n4,5,6\n7,8,9\n").unwrap();
    assert_eq!(main_with_args(["boop", "optimize", "--config", config.to_str().unwrap(), "--out", out]), 4);

    let trace = write(&dir.path().join("trace.tsv"), "not a trace\n");
    assert_eq!(main_with_args(["boop", "surface-export", "--data", trace.to_str().unwrap(), "--out", out]), 4);
}

#[test]
fn benchmark_requires_the_synthetic_objective() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("var.csv");
    write_var_csv(&data, 60, 1);
    let config = write(&dir.path().join("bvar.toml"), &small_bvar_config(&data, 1));
    let err = invoke(Command::Benchmark, Some(config), Overrides::default(), &dir.path().join("out")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn benchmark_writes_curves_for_both_strategies() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(&dir.path().join("bench.toml"), "[benchmark]\nseeds = [0, 1]\niterations = 3\n");
    let out = dir.path().join("bench");
    invoke(Command::Benchmark, Some(config), Overrides::default(), &out).unwrap();
    let (_, curves) = read_tsv(&out.join("benchmark_curves.tsv"));
    // two strategies, two seeds, five evaluations each
    assert_eq!(curves.len(), 20);
    let (header, summary) = read_tsv(&out.join("benchmark_summary.tsv"));
    assert_eq!(header[0], "strategy");
    assert_eq!(summary.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(), ["boop", "bo-ei"]);
}

#[test]
fn chib_validate_passes_on_the_bundled_models() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cv");
    assert_eq!(main_with_args(["boop", "chib-validate", "--out", out.to_str().unwrap()]), 0);
    let (header, cases) = read_tsv(&out.join("chib_cases.tsv"));
    assert_eq!(header, ["case", "replicate", "exact", "estimate", "se", "z"]);
    assert_eq!(cases.iter().filter(|r| r[0] == "toy").count(), 50);
    assert_eq!(cases.iter().filter(|r| r[0] == "conjugate").count(), 20);
    let (_, summary) = read_tsv(&out.join("chib_summary.tsv"));
    assert!(summary.iter().all(|r| r[3] == "true"), "{summary:?}");
}

#[test]
fn failed_check_exits_with_numerical_status() {
    let dir = tempfile::tempdir().unwrap();
    // tiny runs and a perfect pass rate; some check fails deterministically or none does
    let config = write(
        &dir.path().join("cv.toml"),
        "[chib_validate]\nseeds = [0, 1, 2, 3, 4, 5]\ndraws = 120\nburn = 20\ntoy_replicates = 30\ntoy_draws = 40\ntoy_burn = 5\nmin_pass_rate = 1.0\n",
    );
    let out = dir.path().join("cv");
    let code = main_with_args(["boop", "chib-validate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let (_, summary) = read_tsv(&out.join("chib_summary.tsv"));
    let any_failed = summary.iter().any(|r| r[3] == "false");
    assert_eq!(code, if any_failed { 3 } else { 0 });
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert_eq!(manifest.contains("\"status\": \"ok\""), !any_failed);
}

#[test]
fn monthly_columns_are_aggregated_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("mixed.csv");
    // 130 months of a slowly varying series and a quarterly one; the final month is dropped
    let mut text = String::from("m,q\n");
    for t in 0..130 {
        let q = if t < 43 { format!("{}", 100.0 * (0.01 * t as f64).exp() + (t as f64).sin()) } else { String::new() };
        text.push_str(&format!("{},{q}\n", 1.0 + (0.3 * t as f64).sin()));
    }
    std::fs::write(&data, text).unwrap();
    let config = format!(
        "objective = \"bvar\"\ndata = \"{}\"\n[optimizer]\ng_min = 400\nburn = 100\nbatch = 100\ng_max = 500\niterations = 0\n[model]\nlags = 1\n[[model.columns]]\nname = \"m\"\nfrequency = \"monthly\"\n[[model.columns]]\nname = \"q\"\ntransform = \"diff_log400\"\n",
        data.display()
    );
    let config = write(&dir.path().join("mixed.toml"), &config);
    let manifest = invoke(Command::Optimize, Some(config), Overrides::default(), &dir.path().join("out")).unwrap();
    assert_eq!(manifest.warnings.len(), 1, "{:?}", manifest.warnings);
    assert!(manifest.warnings[0].contains("dropped 1"));
}
