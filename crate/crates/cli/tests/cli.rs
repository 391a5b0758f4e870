use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn fairstack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairstack"))
        .args(args)
        .env_remove("FAIRSTACK_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small German config writing under `out`.
fn write_config(dir: &Path, out: &Path, extra: &str) -> PathBuf {
    let path = dir.join("config.toml");
    let text = format!(
        "seeds = [0]\nout_dir = {out:?}\n{extra}\n[dataset]\nid = \"german\"\npath = {data:?}\n\n[train]\nepochs = 3\n\n[probe]\nepochs = 3\n\n[sweep]\nbetas = [1.0]\n\n[table1]\nfolds = 2\nforest_trees = 3\nlogreg_epochs = 5\n",
        data = data_dir().join("german.data"),
    );
    fs::write(&path, text).unwrap();
    path
}

fn only_run_dir(out: &Path) -> PathBuf {
    let dirs: Vec<_> = fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.into_iter().next().unwrap()
}

#[test]
fn invalid_criterion_exits_2_and_lists_choices() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &tmp.path().join("runs"), "");
    let o = fairstack(&["fit", "--config", cfg.to_str().unwrap(), "--criterion", "parity"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(
        err.contains("dp") && err.contains("eo") && err.contains("eopp"),
        "{err}"
    );
}

#[test]
fn unknown_config_key_exits_2_with_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &tmp.path().join("runs"), "learning_rate = 0.1");
    let o = fairstack(&["fit", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn missing_data_path_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "[dataset]\nid = \"german\"\n").unwrap();
    let o = fairstack(&["fit", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dataset.path"), "{}", stderr(&o));
}

#[test]
fn fit_then_transform() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let cfg = write_config(tmp.path(), &out, "");
    let o = fairstack(&["fit", "--config", cfg.to_str().unwrap(), "--beta", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = only_run_dir(&out);
    assert!(run.file_name().unwrap().to_str().unwrap().starts_with("fit-"));
    for f in [
        "config.json",
        "model.fstk",
        "train_log_level0.csv",
        "train_log_level1.csv",
        "run_record.json",
    ] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let log = fs::read_to_string(run.join("train_log_level0.csv")).unwrap();
    assert!(log.starts_with("level,epoch,loss_rec,loss_adv,loss_class,adv_acc,val_dp,val_eo,val_eopp"));
    assert_eq!(log.lines().count(), 1 + 3);
    let record: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("run_record.json")).unwrap()).unwrap();
    assert_eq!(record["beta"], 2.0);
    let model = run.join("model.fstk");

    // Raw dataset rows, normalized with the statistics stored in the model.
    let z = tmp.path().join("z.csv");
    let o = fairstack(&[
        "transform",
        "--model",
        model.to_str().unwrap(),
        "--input",
        data_dir().join("german.data").to_str().unwrap(),
        "--output",
        z.to_str().unwrap(),
        "--raw",
        "german",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&z).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "z_0,z_1,z_2,z_3,z_4,z_5,z_6,z_7");
    assert_eq!(lines.count(), 1000);

    // A header-only feature file gives a header-only output.
    let empty = tmp.path().join("empty.csv");
    let width = fairstack::stack::TrainedStack::load(&model)
        .unwrap()
        .input_dim()
        .unwrap();
    fs::write(
        &empty,
        (0..width).map(|i| format!("f{i}")).collect::<Vec<_>>().join(",") + "\n",
    )
    .unwrap();
    let z_empty = tmp.path().join("z_empty.csv");
    let o = fairstack(&[
        "transform",
        "--model",
        model.to_str().unwrap(),
        "--input",
        empty.to_str().unwrap(),
        "--output",
        z_empty.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(&z_empty).unwrap().trim_end(),
        "z_0,z_1,z_2,z_3,z_4,z_5,z_6,z_7"
    );

    // Wrong width is a runtime error.
    let narrow = tmp.path().join("narrow.csv");
    fs::write(&narrow, "a,b\n1,2\n").unwrap();
    let o = fairstack(&[
        "transform",
        "--model",
        model.to_str().unwrap(),
        "--input",
        narrow.to_str().unwrap(),
        "--output",
        tmp.path().join("z_bad.csv").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("columns"), "{}", stderr(&o));
}

#[test]
fn sweep_writes_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let cfg = write_config(tmp.path(), &out, "");
    let o = fairstack(&["sweep", "--config", cfg.to_str().unwrap(), "--jobs", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = only_run_dir(&out);
    for f in [
        "config.json",
        "sweep.csv",
        "baseline.csv",
        "sweep_means.csv",
        "sweep.json",
    ] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let sweep = fs::read_to_string(run.join("sweep.csv")).unwrap();
    // One β, one seed, two variants.
    assert_eq!(sweep.lines().count(), 1 + 2);
}

#[test]
fn table1_writes_comparison() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let cfg = write_config(tmp.path(), &out, "");
    let o = fairstack(&["table1", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = only_run_dir(&out);
    let csv = fs::read_to_string(run.join("table1.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "model,unfair_mean,unfair_std,lafr_mean,lafr_std,stacked_mean,stacked_std"
    );
    let rows: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rows, ["logistic_regression", "random_forest"]);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("table1.json")).unwrap()).unwrap();
    assert_eq!(json["table"]["spread"], "sample standard deviation across folds");
}
