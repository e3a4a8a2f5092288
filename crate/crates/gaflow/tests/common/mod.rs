//! Checked-in fixtures and the generators that produced them. Set
//! `UPDATE_FIXTURES=1` to rewrite the files from the generators.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gaflow::cli::bundle_archive;
use gaflow::formats::write_records;
use gaflow::gaft::{self, TensorArchive};
use gaflow_core::evaluation::{MaskDirection, MaskedRecord, K_GRID};
use gaflow_core::info_tensor::{AggregationMode, InfoTensor};
use gaflow_core::synthetic::{random_bundle, uniform_info_tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub const ACCEPTANCE_TENSORS: usize = 50;

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

fn info_archive(info: &InfoTensor, name: &str, metadata: Value) -> TensorArchive {
    let mut a = TensorArchive::new();
    if let Value::Object(m) = metadata {
        a.metadata = m.into_iter().collect();
    }
    a.metadata.insert("mode".into(), Value::from(info.mode().as_str()));
    a.insert(info.values().clone().with_name(name)).unwrap();
    a
}

/// `(l, t)` of acceptance tensor `i`.
pub fn acceptance_dims(i: usize) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
    (rng.gen_range(1..=4), rng.gen_range(1..=6))
}

fn acceptance_tensors() -> TensorArchive {
    let mut a = TensorArchive::new();
    a.metadata.insert("count".into(), Value::from(ACCEPTANCE_TENSORS));
    for i in 0..ACCEPTANCE_TENSORS {
        let (l, t) = acceptance_dims(i);
        let info = uniform_info_tensor(i as u64, l, t).unwrap();
        a.insert(info.values().clone().with_name(format!("info_{i:02}"))).unwrap();
    }
    a
}

/// Tokens 0 and 1 are interchangeable in every slice.
pub fn symmetric_info() -> InfoTensor {
    let slice = |a: f64, b: f64, c: f64, d: f64| vec![vec![a, b, c], vec![b, a, c], vec![d, d, 0.4]];
    InfoTensor::from_nested(
        &[slice(0.6, 0.2, 0.3, 0.5), slice(0.1, 0.7, 0.25, 0.45)],
        AggregationMode::Af,
    )
    .unwrap()
}

fn small_bundle() -> TensorArchive {
    let b = random_bundle(1, 2, 2, 4).unwrap();
    let mut meta = BTreeMap::new();
    meta.insert("example_id".into(), Value::from("ex-small"));
    meta.insert("tokens".into(), json!(["[CLS]", "good", "movie", "[SEP]"]));
    meta.insert("predicted_class".into(), Value::from(1));
    bundle_archive(b.weights().clone(), b.grads().cloned(), meta).unwrap()
}

/// Masked-prediction records for `n` examples; `drop` scales how much the
/// masked probability falls.
fn records(seed: u64, n: usize, drop: f64) -> Vec<MaskedRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for i in 0..n {
        let p_orig: f64 = rng.gen_range(0.6..0.99);
        let y_true = rng.gen_range(0..2);
        for k in K_GRID {
            for direction in [MaskDirection::Top, MaskDirection::Bottom] {
                let strength = match direction {
                    MaskDirection::Top => drop,
                    MaskDirection::Bottom => 0.1 * drop,
                };
                let fall = strength * f64::from(k) / 100.0 * rng.gen_range(0.5..1.0);
                let p_masked = (p_orig * (1.0 - fall)).max(1e-3);
                out.push(MaskedRecord {
                    example_id: format!("ex{i:03}"),
                    k,
                    direction,
                    p_orig,
                    p_masked,
                    y_hat: 1,
                    y_masked: usize::from(p_masked > 0.5),
                    y_true,
                });
            }
        }
    }
    out
}

/// Every fixture file with its expected contents.
pub fn expected_fixtures() -> Vec<(&'static str, Vec<u8>)> {
    let seed7 = uniform_info_tensor(7, 4, 3).unwrap();
    let six = InfoTensor::from_nested(&[vec![vec![0.5, 0.5], vec![0.3, 0.7]]], AggregationMode::Af).unwrap();
    let gaft = |a: &TensorArchive| gaft::to_bytes(a).unwrap();
    vec![
        ("acceptance_tensors.gaft", gaft(&acceptance_tensors())),
        ("seed7_info.gaft", gaft(&info_archive(&seed7, "info", json!({"example_id": "seed7"})))),
        ("six_node_info.gaft", gaft(&info_archive(&six, "info", json!({"example_id": "six-node"})))),
        ("symmetric_info.gaft", gaft(&info_archive(&symmetric_info(), "info", json!({"example_id": "symmetric"})))),
        ("bundle_small.gaft", gaft(&small_bundle())),
        ("records/strong.jsonl", write_records(&records(31, 24, 0.9)).into_bytes()),
        ("records/weak.jsonl", write_records(&records(32, 24, 0.2)).into_bytes()),
    ]
}

/// Path of a fixture, rewriting every fixture first when
/// `UPDATE_FIXTURES=1`.
pub fn fixture(name: &str) -> PathBuf {
    if std::env::var("UPDATE_FIXTURES").as_deref() == Ok("1") {
        update_fixtures();
    }
    fixtures_dir().join(name)
}

pub fn update_fixtures() {
    for (name, bytes) in expected_fixtures() {
        let path = fixtures_dir().join(name);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(path, bytes).unwrap();
    }
}

pub fn read_fixture(name: &str) -> TensorArchive {
    gaft::read_file(&fixture(name)).unwrap()
}

/// Information tensor stored under `name` in a fixture archive.
pub fn fixture_info(file: &str, name: &str) -> InfoTensor {
    let a = read_fixture(file);
    InfoTensor::new(a.get(name).unwrap().clone(), AggregationMode::Af).unwrap()
}
