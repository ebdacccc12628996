use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn attkgcn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attkgcn"))
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

const SMALL: &str = "\
epochs = 3
batch_size = 16
synth_identities = 20
synth_images = 4
synth_attributes = 6
synth_dim = 8
synth_blocks = 2
sweep_lambda = 1, 2, 3, 4, 5, 6, 7, 8
";

fn small_config(dir: &Path) -> String {
    fs::write(dir.join("exp.cfg"), SMALL).unwrap();
    "exp.cfg".into()
}

#[test]
fn build_graph_two_record_fixture() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("schema.txt"), "hat\nbag\n").unwrap();
    fs::write(
        dir.path().join("ann.csv"),
        "image_id,identity,camera,hat,bag\n1,1,0,1,1\n2,2,1,1,0\n",
    )
    .unwrap();
    let o = attkgcn(
        dir.path(),
        &["build-graph", "--annotations", "ann.csv", "--schema", "schema.txt", "--out", "g"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("attributes: 2"), "{text}");
    assert!(text.contains("P(hat -> bag) = 0.5"), "{text}");
    assert!(dir.path().join("g/graph.bin").exists());
    assert!(dir.path().join("g/graph.csv").exists());
}

#[test]
fn build_graph_27_attributes() {
    let dir = tempfile::tempdir().unwrap();
    let names: Vec<String> = (0..27).map(|i| format!("a{i}")).collect();
    fs::write(dir.path().join("schema.txt"), names.join("\n") + "\n").unwrap();
    let mut csv = format!("image_id,identity,camera,{}\n", names.join(","));
    for id in 0..10 {
        let bits: Vec<String> = (0..27).map(|k| ((id + k) % 3 == 0) as u8).map(|b| b.to_string()).collect();
        csv.push_str(&format!("{id},{id},0,{}\n", bits.join(",")));
    }
    fs::write(dir.path().join("ann.csv"), csv).unwrap();
    let o = attkgcn(dir.path(), &["build-graph", "--annotations", "ann.csv", "--schema", "schema.txt"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("attributes: 27"));
}

#[test]
fn missing_schema_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("ann.csv"), "image_id,identity,camera,hat\n").unwrap();
    let o = attkgcn(dir.path(), &["build-graph", "--annotations", "ann.csv", "--schema", "nope.txt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.txt"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.cfg"), "epochs = 3\nlearning_rate = 0.1\n").unwrap();
    let o = attkgcn(dir.path(), &["--config", "bad.cfg", "train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"));
    let o = attkgcn(dir.path(), &["--variant", "bogus", "train"]);
    assert_eq!(o.status.code(), Some(2));
    let o = attkgcn(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    fs::write(dir.path().join("junk.bin"), b"not a checkpoint").unwrap();
    let o = attkgcn(dir.path(), &["--config", &cfg, "eval", "--checkpoint", "junk.bin"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn default_report_header_echoes_training_settings() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("exp.cfg"), "epochs = 120\nsynth_identities = 8\nsynth_images = 2\nsynth_dim = 4\n").unwrap();
    let o = attkgcn(dir.path(), &["--config", "exp.cfg", "train"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(dir.path().join("out/train_report.csv")).unwrap();
    let header = report.lines().next().unwrap();
    for field in ["batch=90", "epochs=120", "lambda=5", "layers=2"] {
        assert!(header.contains(field), "{header}");
    }
    assert_eq!(report.lines().nth(1).unwrap(), "epoch,l_att,l_id,l_total");
    assert_eq!(report.lines().count(), 2 + 120);
}

#[test]
fn baseline_checkpoint_has_no_graph_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = attkgcn(dir.path(), &["--config", &cfg, "--variant", "baseline", "train"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let model = attkgcn_core::ModelParams::load(&dir.path().join("out/checkpoint.bin")).unwrap();
    assert!(model.gcn.is_none() && model.rw_gcn.is_none() && model.rw_head.is_none());
    assert!(model.p_norm.is_none());
    let o = attkgcn(dir.path(), &["--config", &cfg, "eval", "--checkpoint", "out/checkpoint.bin"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/eval.json")).unwrap()).unwrap();
    assert_eq!(json["descriptor"], "visual");
}

#[test]
fn reruns_with_one_seed_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let run = |out: &str| {
        let o = attkgcn(dir.path(), &["--config", &cfg, "--seed", "3", "--out", out, "train"]);
        assert!(o.status.success(), "{}", stderr(&o));
        (
            fs::read(dir.path().join(out).join("train_report.csv")).unwrap(),
            fs::read(dir.path().join(out).join("checkpoint.bin")).unwrap(),
        )
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn eval_with_oracle_reports_every_column() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    assert!(attkgcn(dir.path(), &["--config", &cfg, "train"]).status.success());
    let o = attkgcn(dir.path(), &["--config", &cfg, "--oracle", "eval", "--checkpoint", "out/checkpoint.bin"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("oracle: agrees"), "{}", stdout(&o));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/eval.json")).unwrap()).unwrap();
    for key in ["rank1", "rank5", "rank10", "mAP", "attribute_accuracy", "attribute_avg"] {
        assert!(!json[key].is_null(), "missing {key}: {json}");
    }
    assert_eq!(json["attribute_accuracy"].as_array().unwrap().len(), 6);
}

#[test]
fn sweeps_emit_expected_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = attkgcn(dir.path(), &["--config", &cfg, "sweep", "--param", "lambda"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("out/sweep_lambda.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8);
    let o = attkgcn(dir.path(), &["--config", &cfg, "sweep", "--param", "layers", "--values", "2,3,4,5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("out/sweep_layers.csv")).unwrap();
    let keys: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(keys, ["2", "3", "4", "5"]);
    let again = attkgcn(dir.path(), &["--config", &cfg, "--out", "again", "sweep", "--param", "layers", "--values", "2,3,4,5"]);
    assert!(again.status.success());
    assert_eq!(fs::read_to_string(dir.path().join("again/sweep_layers.csv")).unwrap(), csv);
    let bad = attkgcn(dir.path(), &["--config", &cfg, "sweep", "--param", "momentum"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn synth_files_feed_training_and_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = attkgcn(dir.path(), &["--config", &cfg, "--out", "data", "synth"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["schema.txt", "annotations.csv", "features.bin", "generative_graph.csv"] {
        assert!(dir.path().join("data").join(f).exists(), "{f}");
    }
    let mut text = SMALL.to_string();
    text.push_str("schema = data/schema.txt\nannotations = data/annotations.csv\nfeatures = data/features.bin\n");
    fs::write(dir.path().join("files.cfg"), text).unwrap();
    let o = attkgcn(dir.path(), &["--config", "files.cfg", "train"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = attkgcn(dir.path(), &["--config", "files.cfg", "predict", "--checkpoint", "out/checkpoint.bin", "--top-k", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/predictions.json")).unwrap()).unwrap();
    let first = &json.as_array().unwrap()[0];
    assert_eq!(first["matches"].as_array().unwrap().len(), 3);
}

#[test]
fn thread_cap_must_be_a_number() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = Command::new(env!("CARGO_BIN_EXE_attkgcn"))
        .current_dir(dir.path())
        .env("ATTKGCN_THREADS", "many")
        .args(["--config", &cfg, "train"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
