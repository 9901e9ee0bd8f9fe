use std::path::Path;
use std::process::{Command, Output};

use sparse_kd::distributions::{zipf, Rng};
use sparse_kd::experiments::targets_to_jsonl;
use sparse_kd::sparsify;

fn sparsekd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparsekd")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn fixture(name: &str) -> String {
    format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn csv_body(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn zipf_targets_small_vocab() {
    let out = stdout(&sparsekd(&["zipf-targets", "--vocab-size", "4", "--k", "4", "--rounds", "20", "--seed", "3"]));
    let first = out.lines().next().unwrap();
    assert!(first.starts_with("# {") && first.contains("\"seed\":3") && first.contains("\"vocab_size\":4"));
    let rows = csv_body(&out);
    assert_eq!(rows[0], ["token_index", "ground_truth", "topk_normalized", "naive_fix", "random_sampling_mean"]);
    assert_eq!(rows.len(), 5);
    for row in &rows[1..] {
        let v: Vec<f64> = row.iter().map(|c| c.parse().unwrap()).collect();
        assert!((v[2] - v[1]).abs() < 1e-15 && (v[3] - v[1]).abs() < 1e-15);
    }
}

#[test]
fn zipf_targets_is_deterministic_and_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let args = ["zipf-targets", "--vocab-size", "500", "--rounds", "50", "--out"];
    for path in [&a, &dir.path().join("b.csv")] {
        let mut v = args.to_vec();
        v.push(path.to_str().unwrap());
        stdout(&sparsekd(&v));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(dir.path().join("b.csv")).unwrap());
}

#[test]
fn unwritable_output_is_a_data_error() {
    let o = sparsekd(&["zipf-targets", "--vocab-size", "10", "--k", "3", "--out", "/nonexistent-dir/x.csv"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn usage_errors_exit_2() {
    let o = sparsekd(&["train-toy", "--scheme", "bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
    assert_eq!(sparsekd(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(sparsekd(&["zipf-targets", "--k", "0", "--vocab-size", "5"]).status.code(), Some(2));
}

const TINY: [&str; 10] = [
    "--classes", "8", "--dim", "4", "--train-rounds", "30", "--batch-size", "32", "--hidden-student", "12",
];

#[test]
fn train_toy_emits_run_record() {
    let mut args = vec!["train-toy", "--scheme", "topk", "--k", "3", "--seed", "9", "--repeats", "2"];
    args.extend(TINY);
    let out = stdout(&sparsekd(&args));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["command"], "train-toy");
    assert_eq!(v["seed"], 9);
    assert_eq!(v["config"]["toy"]["classes"], 8);
    assert_eq!(v["config"]["scheme"]["kind"], "top_k");
    let runs = v["result"].as_array().unwrap();
    assert_eq!(runs.len(), 2);
    assert_eq!(runs[1]["seed"], 10);
    let report = &runs[0]["student"]["report"];
    for key in ["bins", "ece", "n_samples", "n_bins", "seed"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    assert!(v["rng"].as_str().unwrap().contains("ChaCha8"));
}

#[test]
fn train_toy_top_p() {
    let mut args = vec!["train-toy", "--scheme", "top-p", "--top-p", "0.8", "--k", "5"];
    args.extend(TINY);
    let v: serde_json::Value = serde_json::from_str(&stdout(&sparsekd(&args))).unwrap();
    assert_eq!(v["config"]["scheme"]["kind"], "top_p");
    assert_eq!(v["config"]["scheme"]["p"], 0.8);
}

#[test]
fn grad_sim_self_row_and_determinism() {
    let mut args = vec!["grad-sim", "--repeats", "2", "--k", "3", "--seed", "4"];
    args.extend(TINY);
    let a = stdout(&sparsekd(&args));
    assert_eq!(a, stdout(&sparsekd(&args)));
    let rows = csv_body(&a);
    assert_eq!(rows[0], ["scheme", "angle_deg", "norm_ratio"]);
    assert_eq!(rows[1], ["fullkd", "0", "1"]);
    assert_eq!(rows[2][0], "topk-3");
    assert_eq!(rows[3][0], "rs-matched");
}

#[test]
fn unique_curve_fit() {
    let out = stdout(&sparsekd(&["unique-curve", "--vocab-size", "1000", "--repeats", "20", "--rounds", "5,10,20,40"]));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let points = v["result"]["points"].as_array().unwrap();
    assert_eq!(points.len(), 4);
    let xy: Vec<(f64, f64)> = points
        .iter()
        .map(|p| ((p[0].as_f64().unwrap()).ln(), p[1].as_f64().unwrap().ln()))
        .collect();
    // independent least-squares slope
    let n = xy.len() as f64;
    let (mx, my) = (xy.iter().map(|p| p.0).sum::<f64>() / n, xy.iter().map(|p| p.1).sum::<f64>() / n);
    let slope = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / xy.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((v["result"]["fit"]["slope"].as_f64().unwrap() - slope).abs() < 1e-12);
    assert!(v["result"]["fit"]["r_squared"].as_f64().unwrap() > 0.9);
}

fn write_targets(path: &Path) {
    let t = zipf(300).unwrap();
    let mut rng = Rng::new(1);
    let targets: Vec<_> = (0..25).map(|_| sparsify::random_sampling(&t, 50, 1.0, &mut rng).unwrap()).collect();
    std::fs::write(path, targets_to_jsonl(&targets).unwrap()).unwrap();
}

#[test]
fn cache_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (src, bin, back) = (dir.path().join("t.jsonl"), dir.path().join("t.skdc"), dir.path().join("back.jsonl"));
    write_targets(&src);
    let o = sparsekd(&["cache-pack", src.to_str().unwrap(), "--out", bin.to_str().unwrap()]);
    stdout(&o);
    let summary: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(summary["scheme_id"], 3);
    assert_eq!(summary["param"], 50);
    assert_eq!(std::fs::metadata(&bin).unwrap().len(), summary["bytes"].as_u64().unwrap());
    stdout(&sparsekd(&["cache-unpack", bin.to_str().unwrap(), "--out", back.to_str().unwrap()]));
    assert_eq!(std::fs::read(&src).unwrap(), std::fs::read(&back).unwrap());
}

#[test]
fn cache_ratio_pack_and_corrupt_input() {
    let dir = tempfile::tempdir().unwrap();
    let (src, bin) = (dir.path().join("t.jsonl"), dir.path().join("t.skdc"));
    write_targets(&src);
    let o = sparsekd(&["cache-pack", src.to_str().unwrap(), "--out", bin.to_str().unwrap(), "--scheme", "topk-ratio", "--k", "50"]);
    stdout(&o);
    let jsonl = stdout(&sparsekd(&["cache-unpack", bin.to_str().unwrap()]));
    assert_eq!(jsonl.lines().count(), 25);

    let mut bytes = std::fs::read(&bin).unwrap();
    bytes[0] = b'X';
    std::fs::write(&bin, &bytes).unwrap();
    let o = sparsekd(&["cache-unpack", bin.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("byte 0"));

    let o = sparsekd(&["cache-pack", src.to_str().unwrap(), "--out", bin.to_str().unwrap(), "--scheme", "rs-counts", "--rounds", "200"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ece_golden_fixture() {
    let out = stdout(&sparsekd(&["ece", &fixture("predictions.json")]));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    // reference value from tests/fixtures/make_predictions.py
    let ece = v["result"]["report"]["ece"].as_f64().unwrap();
    assert!((ece - 0.3708333333333333).abs() < 1e-9, "{ece}");
    assert!((v["result"]["ece_percent"].as_f64().unwrap() - 37.08333333333333).abs() < 1e-7);
    assert_eq!(v["result"]["report"]["n_samples"], 60);
    assert_eq!(v["config"]["n_bins"], 10);
}
