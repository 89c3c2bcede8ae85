use std::ffi::OsStr;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use protoscope::network::{load_model, Model, NetworkSpec};
use protoscope_cli::manifest::{manifest_path, read_manifest};
use protoscope_cli::sweep::MEAN_LABEL;
use serde_json::Value;

fn protoscope<S: AsRef<OsStr> + std::fmt::Debug>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_protoscope"))
        .args(args)
        .env_remove("PROTOSCOPE_SEED")
        .output()
        .unwrap()
}

fn ok<S: AsRef<OsStr> + std::fmt::Debug>(args: &[S]) -> Output {
    let out = protoscope(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Fixture {
            dir: tempfile::tempdir().unwrap(),
        };
        ok(&[
            "gen-data",
            "--blobs",
            "--k",
            "3",
            "--p",
            "4",
            "--per-class",
            "60",
            "--seed",
            "3",
            "--out",
            p(&f.path("data.csv")),
            "--test-out",
            p(&f.path("test.csv")),
        ]);
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, name: &str, extra: &[&str]) -> PathBuf {
        let (data, out) = (self.path("data.csv"), self.path(name));
        let mut args = vec!["train", "--data", p(&data), "--q", "8", "--spec", "mlp:16"];
        args.extend(["--out", p(&out)]);
        args.extend(extra);
        ok(&args);
        out
    }
}

#[test]
fn gen_data_to_stdout() {
    let out = ok(&[
        "gen-data",
        "--blobs",
        "--k",
        "4",
        "--per-class",
        "100",
        "--p",
        "8",
        "--seed",
        "7",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 400);
    assert_eq!(text.lines().next().unwrap().split(',').count(), 9);
    let again = ok(&[
        "gen-data",
        "--blobs",
        "--k",
        "4",
        "--per-class",
        "100",
        "--p",
        "8",
        "--seed",
        "7",
    ]);
    assert_eq!(text.as_bytes(), &again.stdout[..]);
}

#[test]
fn seed_falls_back_to_environment() {
    let flag = ok(&["gen-data", "--blobs", "--seed", "7"]).stdout;
    let env = Command::new(env!("CARGO_BIN_EXE_protoscope"))
        .args(["gen-data", "--blobs"])
        .env("PROTOSCOPE_SEED", "7")
        .output()
        .unwrap();
    assert_eq!(flag, env.stdout);
    assert_ne!(flag, ok(&["gen-data", "--blobs"]).stdout);
}

#[test]
fn missing_required_flag_is_usage_error() {
    let out = protoscope(&["gen-data", "--k", "4"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(protoscope(&["train", "--data", "x.csv"]).status.code(), Some(2));
}

#[test]
fn split_files_partition_the_data() {
    let f = Fixture::new();
    let train = std::fs::read_to_string(f.path("data.csv")).unwrap();
    let test = std::fs::read_to_string(f.path("test.csv")).unwrap();
    assert_eq!(train.lines().count(), 126);
    assert_eq!(test.lines().count(), 54);
    let m = read_manifest(&manifest_path(&f.path("test.csv"))).unwrap();
    assert_eq!(m.command, "gen-data");
    assert_eq!(m.outputs.len(), 2);
}

#[test]
fn zero_epochs_saves_the_initial_model() {
    let f = Fixture::new();
    let path = f.train("m0.json", &["--epochs", "0", "--seed", "5"]);
    let saved = load_model(&path).unwrap();
    let mut fresh = Model::build(NetworkSpec::dense(4, 8, 3, &[16], 5)).unwrap();
    fresh.set_labels(Some(vec!["0".into(), "1".into(), "2".into()]));
    assert_eq!(saved, fresh);
}

#[test]
fn training_converges_and_records_history() {
    let f = Fixture::new();
    let history = f.path("h.csv");
    let model = f.train("m.json", &["--epochs", "60", "--seed", "1", "--history", p(&history)]);
    let text = std::fs::read_to_string(&history).unwrap();
    assert_eq!(text.lines().count(), 61);
    let last: f64 = text
        .lines()
        .last()
        .unwrap()
        .rsplit(',')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!(last >= 0.98, "final accuracy {last}");

    let m = read_manifest(&manifest_path(&model)).unwrap();
    assert_eq!(m.model_hash, Some(load_model(&model).unwrap().content_hash()));
    assert_eq!(m.config["train"]["epochs"], 60);
    assert_eq!(m.config["seed"], 1);
    assert_eq!(
        read_manifest(&manifest_path(&history)).unwrap().model_hash,
        m.model_hash
    );
}

#[test]
fn fraction_trains_on_a_subset() {
    let f = Fixture::new();
    let out = f.path("m.json");
    let stdout = ok(&[
        "train",
        "--data",
        p(&f.path("data.csv")),
        "--epochs",
        "1",
        "--fraction",
        "0.25",
        "--out",
        p(&out),
    ])
    .stdout;
    // 42 per class in the training file, a quarter of each rounds to 11.
    assert!(String::from_utf8(stdout).unwrap().contains("on 33 examples"));
}

#[test]
fn divergence_exits_3() {
    let f = Fixture::new();
    let out = protoscope(&[
        "train",
        "--data",
        p(&f.path("data.csv")),
        "--lr1",
        "1e300",
        "--lr2",
        "1e300",
        "--epochs",
        "3",
        "--out",
        p(&f.path("m.json")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
    assert!(!f.path("m.json").exists());
}

#[test]
fn bad_inputs_exit_2() {
    let f = Fixture::new();
    std::fs::write(f.path("bad.csv"), "0,1,2\n1,x,3\n").unwrap();
    let out = protoscope(&["train", "--data", p(&f.path("bad.csv")), "--out", p(&f.path("m.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.csv:2"));

    std::fs::write(f.path("bad.json"), "{\"version\":1}").unwrap();
    let out = protoscope(&["evaluate", "--model", p(&f.path("bad.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("spec"));

    let out = protoscope(&[
        "train",
        "--data",
        p(&f.path("data.csv")),
        "--spec",
        "mlp:x",
        "--out",
        "m.json",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn evaluate_report_fields() {
    let f = Fixture::new();
    let model = f.train("m.json", &["--epochs", "40", "--seed", "2"]);
    let report = f.path("r.json");
    let csv = f.path("r.csv");
    ok(&[
        "evaluate",
        "--model",
        p(&model),
        "--out",
        p(&report),
        "--csv",
        p(&csv),
        "--fraction",
        "0.5",
    ]);
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    for field in [
        "h_w",
        "mean_weight_angle_deg",
        "m_in_mean",
        "m_in_std",
        "m_in_per_class",
        "bt_cossim_mean",
        "bt_cossim_std",
        "m_bt",
        "upper_bound",
        "lower_bound",
        "excluded_zero_features",
    ] {
        assert!(doc.get(field).is_some(), "missing {field}");
    }
    assert!(doc.get("accuracy").is_none());
    let upper = doc["m_in_mean"].as_f64().unwrap() - 2.0 * doc["m_in_std"].as_f64().unwrap();
    assert_eq!(doc["upper_bound"].as_f64().unwrap(), upper);

    let rows = std::fs::read_to_string(&csv).unwrap();
    let mut lines = rows.lines();
    assert_eq!(lines.next().unwrap(), protoscope::metrics::MetricReport::CSV_HEADER);
    let row = lines.next().unwrap();
    assert!(row.starts_with("0.5,") && row.ends_with(','));

    ok(&[
        "evaluate",
        "--model",
        p(&model),
        "--out",
        p(&report),
        "--validate",
        p(&f.path("test.csv")),
    ]);
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(doc["accuracy"].as_f64().unwrap() >= 0.95);
    let m = read_manifest(&manifest_path(&report)).unwrap();
    assert_eq!(m.inputs.len(), 2);
}

#[test]
fn unconverged_prototypes_exit_4() {
    let f = Fixture::new();
    let model = f.train("m.json", &["--epochs", "0"]);
    let out = protoscope(&[
        "evaluate",
        "--model",
        p(&model),
        "--max-iters",
        "1",
        "--delta-loss",
        "1e-9",
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("classes"));
}

#[test]
fn sweep_table_and_report_series() {
    let f = Fixture::new();
    let table = f.path("sweep.csv");
    ok(&[
        "sweep",
        "--data",
        p(&f.path("data.csv")),
        "--fractions",
        "1.0,0.25,0.5",
        "--seeds",
        "3",
        "--epochs",
        "40",
        "--q",
        "8",
        "--spec",
        "mlp:16",
        "--jobs",
        "3",
        "--out",
        p(&table),
    ]);
    let mut reader = csv::Reader::from_path(&table).unwrap();
    let headers = reader.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 12);
    let means: Vec<&csv::StringRecord> = rows.iter().filter(|r| &r[col("seed")] == MEAN_LABEL).collect();
    assert_eq!(means.len(), 3);

    for mean in &means {
        let cells: Vec<&csv::StringRecord> = rows
            .iter()
            .filter(|r| r[col("fraction")] == mean[col("fraction")] && &r[col("status")] == "ok")
            .collect();
        assert!(!cells.is_empty());
        for name in ["m_in", "upper", "m_bt_lower", "accuracy", "h_w"] {
            let c = col(name);
            let avg = cells.iter().map(|r| r[c].parse::<f64>().unwrap()).sum::<f64>() / cells.len() as f64;
            assert_eq!(mean[c].parse::<f64>().unwrap(), avg, "{name}");
        }
    }

    let series = f.path("series.csv");
    ok(&["report", "--sweep", p(&table), "--out", p(&series)]);
    let text = std::fs::read_to_string(&series).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "fraction,lower,accuracy,upper");
    let fractions: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(fractions, ["0.25", "0.5", "1"]);
    for line in &lines[1..] {
        let v: Vec<&str> = line.split(',').collect();
        let mean = means.iter().find(|m| &m[col("fraction")] == v[0]).unwrap();
        assert_eq!(
            [v[1], v[2], v[3]],
            [&mean[col("m_bt_lower")], &mean[col("accuracy")], &mean[col("upper")]]
        );
    }
    assert!(manifest_path(&series).exists());
}

#[test]
fn failed_cells_are_recorded() {
    let f = Fixture::new();
    let table = f.path("sweep.csv");
    ok(&[
        "sweep",
        "--data",
        p(&f.path("data.csv")),
        "--fractions",
        "0.001,1.0",
        "--seeds",
        "1",
        "--epochs",
        "40",
        "--q",
        "8",
        "--spec",
        "mlp:16",
        "--out",
        p(&table),
    ]);
    let text = std::fs::read_to_string(&table).unwrap();
    let failed: Vec<&str> = text.lines().filter(|l| l.contains(",failed,")).collect();
    assert_eq!(failed.len(), 1);
    assert!(failed[0].starts_with("0.001,0,failed,") && failed[0].contains("empty"));

    let out = protoscope(&[
        "sweep",
        "--data",
        p(&f.path("data.csv")),
        "--fractions",
        "0.001",
        "--seeds",
        "2",
        "--epochs",
        "1",
        "--out",
        p(&table),
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn malformed_sweep_table_exits_2() {
    let f = Fixture::new();
    std::fs::write(f.path("s.csv"), "fraction,seed\n0.5,mean\n").unwrap();
    let out = protoscope(&["report", "--sweep", p(&f.path("s.csv")), "--out", p(&f.path("o.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing column"));
}
