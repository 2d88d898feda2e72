use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fedvqcs"))
}

fn mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, body).unwrap();
    path
}

fn run_config(path: &Path) -> Output {
    bin().arg("run").arg("--config").arg(path).output().unwrap()
}

fn assert_ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(
        dir.path(),
        &format!("scenario = \"vq-bench\"\nseed = 1\noutput_dir = {:?}\n[vq]\nsample = 10\n", out),
    );
    let res = run_config(&cfg);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("error"));
}

#[test]
fn missing_config_and_bad_scenario_fail() {
    assert!(!run_config(Path::new("/nonexistent/config.toml")).status.success());
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scenario = \"fl-cifar\"\nseed = 1\noutput_dir = \"x\"\n");
    assert!(!run_config(&cfg).status.success());
    // `fl run` refuses non-FL scenarios
    let cfg = write_config(dir.path(), &format!("scenario = \"vq-bench\"\nseed = 1\noutput_dir = {:?}\n", dir.path()));
    assert!(!bin().args(["fl", "run", "--config"]).arg(&cfg).output().unwrap().status.success());
}

#[test]
fn missing_data_dir_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            "scenario = \"fl-mnist\"\nseed = 1\noutput_dir = {:?}\n[data]\ndir = {:?}\n",
            dir.path().join("out"),
            dir.path().join("nope")
        ),
    );
    let res = bin().arg("run").arg("--config").arg(&cfg).env_remove("FEDVQCS_DATA_DIR").output().unwrap();
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn vq_bench_writes_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("vq");
    let res = bin()
        .args(["bench", "vq", "--dim", "2", "--shape-bits", "3", "--gain-bits", "2", "--samples", "2000", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_ok(&res);
    let rows = csv_rows(&out.join("vq.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!((&rows[0][0], &rows[0][1], &rows[0][2]), ("2", "3", "2"));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["scenario"], "vq-bench");
}

#[test]
fn codebook_build_caches_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cb");
    let res = bin()
        .args([
            "codebook",
            "build",
            "--dim",
            "3",
            "--shape-bits",
            "4",
            "--gain-bits",
            "2",
            "--restarts",
            "2",
            "--iterations",
            "10",
            "--out",
        ])
        .arg(&out)
        .output()
        .unwrap();
    assert_ok(&res);
    let files: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert!(files.iter().filter(|f| f.to_string_lossy().ends_with(".sgvq")).count() >= 2, "{files:?}");
}

#[test]
fn fl_mnist_uncompressed_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fl");
    let cfg = write_config(
        dir.path(),
        &format!(
            "scenario = \"fl-mnist\"\nseed = 3\noutput_dir = {:?}\n[data]\ndir = {:?}\n[fl]\nrounds = 2\ncompression = \"off\"\n",
            out,
            mnist_dir()
        ),
    );
    let res = bin().args(["fl", "run", "--config"]).arg(&cfg).env_remove("FEDVQCS_DATA_DIR").output().unwrap();
    assert_ok(&res);
    let rows = csv_rows(&out.join("metrics.csv"));
    assert_eq!(rows.len(), 2);
    let acc: f64 = rows[1][2].parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(&rows[1][3], "32.0");
}

#[test]
fn synthetic_replay_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let body = |out: &Path| {
        format!(
            "scenario = \"fl-synthetic\"\nseed = 5\noutput_dir = {:?}\n[synthetic]\nparams = 2000\nrate = 0.05\n\
             [fl]\ndevices = 4\nrounds = 2\nblocks = 2\n[capacity]\nbits_per_entry = 0.3\n",
            out
        )
    };
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let sub = dir.path().join(format!("cfg-{name}"));
        std::fs::create_dir_all(&sub).unwrap();
        let cfg = write_config(&sub, &body(&out));
        assert_ok(&run_config(&cfg));
        outputs.push(out);
    }
    for file in ["metrics.csv", "selections.csv", "recovery.csv", "trace.csv"] {
        let a = std::fs::read(outputs[0].join(file)).unwrap();
        let b = std::fs::read(outputs[1].join(file)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{file} differs");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rec");
    let cfg = write_config(
        dir.path(),
                    "scenario = \"recover-sweep\"\nseed = 1\noutput_dir = \"unused\"\n[sweep]\nn = 128\ngroup_cap = 2\ntrials = 3\nalgorithms = [\"oracle-ls\"]\n",
    );
    let res = bin().arg("run").arg("--config").arg(&cfg).args(["--seed", "9", "--out"]).arg(&out).output().unwrap();
    assert_ok(&res);
    assert_eq!(csv_rows(&out.join("recovery.csv")).len(), 3);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 9);
}
