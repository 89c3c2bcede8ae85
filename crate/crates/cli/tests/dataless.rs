//! Evaluation must not open any dataset unless asked to validate. Kept in
//! its own test binary so no concurrent test touches the read counter.

use protoscope::data::{dataset_reads, gen_blobs, split_train_test, write_csv, BlobConfig};
use protoscope::network::{save_model, Model, NetworkSpec};
use protoscope::trainer::{train, TrainConfig};

#[test]
fn evaluate_reads_no_dataset_without_validate() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_blobs(&BlobConfig {
        k: 3,
        p: 4,
        per_class: 50,
        seed: 1,
        ..Default::default()
    })
    .unwrap();
    let (train_ds, test_ds) = split_train_test(&ds, 0.3, 1).unwrap();
    let model = Model::build(NetworkSpec::dense(4, 8, 3, &[16], 1)).unwrap();
    let cfg = TrainConfig {
        epochs: 30,
        phase_split: 15,
        ..Default::default()
    };
    let (model, _) = train(model, &train_ds, &cfg).unwrap();
    let model_path = dir.path().join("m.json");
    save_model(&model, &model_path).unwrap();
    let test_path = dir.path().join("test.csv");
    write_csv(&test_ds, std::fs::File::create(&test_path).unwrap(), false).unwrap();

    let m = model_path.to_str().unwrap();
    let out = dir.path().join("r.json");
    let before = dataset_reads();
    protoscope_cli::run(["protoscope", "evaluate", "--model", m, "--out", out.to_str().unwrap()]).unwrap();
    assert_eq!(dataset_reads(), before);
    assert!(out.exists());

    protoscope_cli::run([
        "protoscope",
        "evaluate",
        "--model",
        m,
        "--out",
        out.to_str().unwrap(),
        "--validate",
        test_path.to_str().unwrap(),
    ])
    .unwrap();
    assert_eq!(dataset_reads(), before + 1);
}
