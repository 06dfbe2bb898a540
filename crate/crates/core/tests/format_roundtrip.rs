use std::path::Path;
use std::process::Command;

mod common;

use common::random_dataset;
use tactile_zsl::data::Dataset;
use tactile_zsl::format::{load_dataset, save_dataset};
use tactile_zsl::Error;

const BIN: &str = env!("CARGO_BIN_EXE_tactile-zsl");

fn assert_bit_identical(a: &Dataset, b: &Dataset) {
    assert!(common::bit_identical(a, b), "datasets differ");
}

#[test]
fn thousand_random_datasets_round_trip_bit_exactly() {
    let root = tempfile::tempdir().unwrap();
    for seed in 0..1000 {
        let ds = random_dataset(seed);
        let dir = root.path().join(format!("ds{seed}"));
        let manifest = save_dataset(&ds, &dir).unwrap();
        let from_dir = load_dataset(&dir).unwrap();
        assert_bit_identical(&ds, &from_dir);
        let from_manifest = load_dataset(&manifest).unwrap();
        assert_bit_identical(&ds, &from_manifest);
    }
}

fn gen_data(dir: &Path) {
    let st = Command::new(BIN)
        .args(["gen-data", "--touched", "3", "--val", "1", "--untouched", "2", "--samples", "5", "--out"])
        .arg(dir)
        .output()
        .unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
}

/// Exit code of a CLI command that only needs the dataset.
fn load_exit(dir: &Path) -> Option<i32> {
    let out = Command::new(BIN)
        .args(["ablate-suite", "--seeds", "1", "--iterations", "1", "--classifier-iterations", "1", "--data"])
        .arg(dir)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    out.status.code()
}

type Corruption = (&'static str, &'static str, fn(&mut Vec<u8>));

const CORRUPTIONS: [Corruption; 7] = [
    ("magic", "visual.vszt", |b| b[0] = b'X'),
    ("version", "tactile.vszt", |b| b[4] = 9),
    ("truncated payload", "semantic.vszt", |b| {
        b.pop();
    }),
    ("trailing bytes", "visual.vszt", |b| b.extend_from_slice(&[0, 0, 0, 0])),
    ("row count", "tactile.vszt", |b| b[8] = b[8].wrapping_add(1)),
    ("short header", "visual.vszt", |b| b.truncate(10)),
    ("ragged labels", "labels.u32", |b| {
        b.pop();
    }),
];

#[test]
fn intact_dataset_is_accepted_by_cli() {
    let root = tempfile::tempdir().unwrap();
    gen_data(root.path());
    assert_eq!(load_exit(root.path()), Some(0));
}

#[test]
fn corrupted_files_exit_with_data_error() {
    for (what, file, corrupt) in CORRUPTIONS {
        let root = tempfile::tempdir().unwrap();
        gen_data(root.path());
        let path = root.path().join(file);
        let mut bytes = std::fs::read(&path).unwrap();
        corrupt(&mut bytes);
        std::fs::write(&path, &bytes).unwrap();
        assert!(
            matches!(load_dataset(root.path()), Err(Error::Format { .. })),
            "{what} accepted by the loader"
        );
        assert_eq!(load_exit(root.path()), Some(3), "{what}");
    }
}

#[test]
fn bad_manifest_exits_with_data_error() {
    let root = tempfile::tempdir().unwrap();
    gen_data(root.path());
    let path = root.path().join("manifest.json");
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replacen("\"version\": 1", "\"version\": 2", 1)).unwrap();
    assert_eq!(load_exit(root.path()), Some(3));
    std::fs::write(&path, "{ not json").unwrap();
    assert_eq!(load_exit(root.path()), Some(3));
    std::fs::remove_file(&path).unwrap();
    assert_eq!(load_exit(root.path()), Some(3));
}

#[test]
fn corrupted_model_exits_with_data_error() {
    let root = tempfile::tempdir().unwrap();
    gen_data(root.path());
    let model = root.path().join("m.bin");
    let st = Command::new(BIN)
        .args(["train", "--iterations", "2", "--data"])
        .arg(root.path())
        .arg("--out")
        .arg(&model)
        .output()
        .unwrap();
    assert!(st.status.success());
    let good = std::fs::read(&model).unwrap();
    let cases: [(&str, Vec<u8>); 4] = [
        ("magic", [b"XXXX".as_slice(), &good[4..]].concat()),
        ("version", [&good[..4], &[7, 0, 0, 0], &good[8..]].concat()),
        ("truncated", good[..good.len() - 3].to_vec()),
        ("trailing", [good.as_slice(), &[1]].concat()),
    ];
    for (what, bytes) in cases {
        std::fs::write(&model, bytes).unwrap();
        let out = Command::new(BIN)
            .args(["eval-zsl", "--classifier-iterations", "1", "--model"])
            .arg(&model)
            .arg("--data")
            .arg(root.path())
            .arg("--out")
            .arg(root.path().join("eval"))
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(3), "{what}");
    }
}
