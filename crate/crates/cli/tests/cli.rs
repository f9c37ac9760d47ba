use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use propclass_core::features::{BinTable, Feature};
use propclass_core::model::{Classifier, ModelFile, ModelMetadata};
use propclass_core::tree::{DecisionTree, Node, SplitTest, TreeParams};

fn propclass(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_propclass"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, extra: &str) {
    let text = format!(
        "synth_n = 300\nsynth_noise = 0.1\nsynth_seed = 5\nseed = 8\nout_dir = \"out\"\n{extra}"
    );
    fs::write(dir.join("run.toml"), text).unwrap();
}

#[test]
fn predict_with_hand_built_stump() {
    let dir = tempfile::tempdir().unwrap();
    let tree = DecisionTree::from_nodes(
        vec![
            Node::Split {
                test: SplitTest::Numeric {
                    feature: Feature::BuildingSize,
                    threshold: 89.0,
                },
                counts: [10, 0, 10],
                left: 1,
                right: 2,
            },
            Node::Leaf { counts: [10, 0, 0] },
            Node::Leaf { counts: [0, 0, 10] },
        ],
        TreeParams::default(),
    )
    .unwrap();
    let file = ModelFile::new(
        ModelMetadata {
            data_source: "hand built".into(),
            train_size: 20,
            train_fingerprint: String::new(),
            split_seed: None,
            bins: BinTable::default(),
        },
        Classifier::DecisionTree(tree),
    );
    fs::write(dir.path().join("stump.model"), file.to_json()).unwrap();
    fs::write(dir.path().join("q.csv"), "building_size\n80\n200\n").unwrap();

    let o = propclass(dir.path(), &["predict", "--model", "stump.model", "--input", "q.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "1: Price_A with probability 100.0%");
    assert_eq!(lines[1], "2: Price_C with probability 100.0%");
}

#[test]
fn evaluate_matching_predictions_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("p.csv"),
        "location,building_size,land_size,bedroom,bathroom,truth,predicted,explanation\n\
         \"Kopo, Bandung\",60,90,2,1,Price_A,Price_A,x\n\
         \"Cibiru, Bandung\",140,150,3,2,Price_B,Price_B,x\n\
         \"Setiabudi, Bandung\",320,400,5,4,Price_C,Price_C,x\n",
    )
    .unwrap();
    let o = propclass(
        dir.path(),
        &["evaluate", "--predictions", "p.csv", "--format", "structured"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["overall_accuracy"], 1.0);
    assert_eq!(report["test_size"], 3);
}

#[test]
fn compare_pipeline_reports_lists_all_rows() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "format = \"structured\"\n");
    let o = propclass(dir.path(), &["run", "--config", "run.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = propclass(
        dir.path(),
        &["compare", "out/eval_tree.json", "out/eval_knn.json"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    for label in ["Data Source", "Measurement Indicator", "Analysis", "Result of Accuracy"] {
        assert!(table.contains(label), "missing {label}:\n{table}");
    }
    let written = fs::read_to_string(dir.path().join("out/comparison.json")).unwrap();
    assert!(written.contains("Result of Accuracy"));
}

#[test]
fn missing_input_reports_ingest_stage() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.toml"),
        "input = \"absent.csv\"\nseed = 1\nout_dir = \"out\"\n",
    )
    .unwrap();
    let o = propclass(dir.path(), &["run", "--config", "run.toml"]);
    assert_eq!(o.status.code(), Some(2));
    let record: serde_json::Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert_eq!(record["stage"], "ingest");
    assert_eq!(record["exit_code"], 2);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), "synth_n = 50\nsynth_seed = 1\nout_dir = \"out\"\n").unwrap();
    let o = propclass(dir.path(), &["run", "--config", "run.toml"]);
    assert_eq!(o.status.code(), Some(1), "seed must be required");
    assert!(stderr(&o).contains("seed"));

    let o = propclass(dir.path(), &["train", "--input", "x.csv", "--model", "tree", "--out", "m"]);
    assert_eq!(o.status.code(), Some(1));
    let o = propclass(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "");
    let o = propclass(
        dir.path(),
        &["run", "--config", "run.toml", "--seed", "77", "--out-dir", "other"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(dir.path().join("other/eval_tree.txt")).unwrap();
    assert!(report.contains("seed: 77"), "{report}");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "");
    for out in ["a", "b"] {
        let o = propclass(dir.path(), &["run", "--config", "run.toml", "--out-dir", out]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for name in ["cleaned.csv", "tree.model", "knn.model", "eval_tree.txt", "eval_knn.txt", "comparison.txt"] {
        let a = fs::read(dir.path().join("a").join(name)).unwrap();
        let b = fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs");
    }
}

#[test]
fn subcommand_chain() {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        let o = propclass(dir.path(), args);
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        o
    };
    run(&["synth", "--n", "240", "--noise", "0", "--seed", "3", "--out", "raw.csv"]);
    run(&["ingest", "--input", "raw.csv", "--out", "clean.csv"]);
    run(&[
        "train", "--input", "clean.csv", "--model", "knn", "--seed", "4", "--k", "1",
        "--no-location", "--out", "knn.model", "--test-out", "test.csv",
    ]);
    let o = run(&["predict", "--model", "knn.model", "--input", "test.csv", "--out", "pred.csv"]);
    assert!(stdout(&o).lines().next().unwrap().contains("from neighbors ["));
    let o = run(&[
        "evaluate", "--predictions", "pred.csv", "--model", "knn.model", "--format", "structured",
    ]);
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let test_rows = fs::read_to_string(dir.path().join("test.csv")).unwrap().lines().count() - 1;
    assert_eq!(report["test_size"], test_rows);
    assert_eq!(report["provenance"]["seed"], "4");
}
