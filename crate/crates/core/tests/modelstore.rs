use std::fs;
use std::path::Path;

use rand::Rng;
use serde_json::{json, Value};
use tempfile::tempdir;
use tweetsense_core::bilstm::{BiLstmConfig, BiLstmModel};
use tweetsense_core::logreg::LogRegModel;
use tweetsense_core::modelstore::{self, artifact_paths, DType, ModelKind, StoreError};
use tweetsense_core::ndnum::seeded_rng;
use tweetsense_core::pipeline::{ClassicalModel, NeuralModel};
use tweetsense_core::textprep::encode;
use tweetsense_core::tfidf::TfidfModel;
use tweetsense_core::{EncodedSeq, TokenSeq, Vocabulary};

fn toks(words: &[&str]) -> TokenSeq {
    words.iter().copied().collect()
}

fn toy_classical() -> ClassicalModel {
    let docs = vec![toks(&["good", "day"]), toks(&["bad", "day"]), toks(&["good"])];
    let vectorizer = TfidfModel::fit(&docs).unwrap();
    assert_eq!(vectorizer.dim(), 3);
    let model = LogRegModel {
        theta: vec![1.25, -0.5, 3.0e-7],
        bias: -0.125,
        l2_lambda: 1.0,
    };
    ClassicalModel::new(vectorizer, model).unwrap()
}

fn small_neural(seed: u64) -> NeuralModel {
    let docs: Vec<TokenSeq> = ["a b c", "d e", "f g h i"]
        .iter()
        .map(|s| s.split(' ').collect())
        .collect();
    let vocab = Vocabulary::build(&docs).unwrap();
    let cfg = BiLstmConfig {
        vocab: vocab.size(),
        emb_dim: 5,
        hidden: 4,
        num_layers: 2,
        dropout: 0.3,
        max_len: 7,
    };
    NeuralModel {
        model: BiLstmModel::init(cfg, seed).unwrap(),
        vocab,
    }
}

fn random_words(rng: &mut impl Rng) -> TokenSeq {
    const WORDS: [&str; 12] = ["good", "bad", "day", "a", "b", "c", "d", "e", "f", "g", "zzz", "h"];
    let n = rng.gen_range(0..9);
    (0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect()
}

fn edit_manifest(prefix: &Path, f: impl FnOnce(&mut Value)) {
    let (path, _) = artifact_paths(prefix);
    let mut v: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    f(&mut v);
    fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
}

#[test]
fn classical_round_trip_is_bit_exact() {
    let dir = tempdir().unwrap();
    let prefix = dir.path().join("lr");
    let m = toy_classical();
    modelstore::save_classical(&m, &prefix, json!({"seed": 42})).unwrap();
    let (loaded, manifest) = modelstore::load(&prefix).unwrap().into_classical().unwrap();
    assert_eq!(loaded, m);
    assert_eq!(manifest.config["seed"], 42);
    let mut rng = seeded_rng(9);
    for _ in 0..100 {
        let t = random_words(&mut rng);
        let a = m.predict_proba_tokens(&t).unwrap();
        let b = loaded.predict_proba_tokens(&t).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn toy_manifest_lists_theta_and_idf_of_three() {
    let dir = tempdir().unwrap();
    let manifest = modelstore::save_classical(&toy_classical(), dir.path().join("lr"), Value::Null).unwrap();
    assert_eq!(manifest.model_kind, ModelKind::Classical);
    assert_eq!(manifest.checksum_algorithm, "fnv1a-64");
    for name in ["theta", "idf"] {
        let e = manifest.tensor_index.iter().find(|e| e.name == name).unwrap();
        assert_eq!(e.shape, vec![3]);
        assert_eq!(e.dtype, DType::F64le);
        assert_eq!(e.byte_length, 24);
    }
    let names: Vec<&str> = manifest.tensor_index.iter().map(|e| e.name.as_str()).collect();
    assert_eq!(names, ["features", "idf", "n_docs", "theta", "bias", "l2_lambda"]);
    for w in manifest.tensor_index.windows(2) {
        assert!(w[0].byte_offset + w[0].byte_length <= w[1].byte_offset);
    }
}

#[test]
fn payload_is_little_endian_f64() {
    let dir = tempdir().unwrap();
    let prefix = dir.path().join("lr");
    let manifest = modelstore::save_classical(&toy_classical(), &prefix, Value::Null).unwrap();
    let bytes = fs::read(artifact_paths(&prefix).1).unwrap();
    let e = manifest.tensor_index.iter().find(|e| e.name == "theta").unwrap();
    let start = e.byte_offset as usize;
    assert_eq!(&bytes[start..start + 8], &1.25f64.to_le_bytes());
}

#[test]
fn truncated_payload_fails_checksum() {
    let dir = tempdir().unwrap();
    let prefix = dir.path().join("lr");
    modelstore::save_classical(&toy_classical(), &prefix, Value::Null).unwrap();
    let weights = artifact_paths(&prefix).1;
    let bytes = fs::read(&weights).unwrap();
    fs::write(&weights, &bytes[..bytes.len() - 5]).unwrap();
    assert!(matches!(modelstore::load(&prefix), Err(StoreError::Checksum { .. })));
}

#[test]
fn flipped_payload_bit_fails_checksum() {
    let dir = tempdir().unwrap();
    let prefix = dir.path().join("nn");
    modelstore::save_neural(&small_neural(1), &prefix, Value::Null).unwrap();
    let weights = artifact_paths(&prefix).1;
    let mut bytes = fs::read(&weights).unwrap();
    bytes[17] ^= 0x10;
    fs::write(&weights, &bytes).unwrap();
    let err = modelstore::load(&prefix).unwrap_err();
    assert!(matches!(err, StoreError::Checksum { .. }), "{err}");
    assert!(err.to_string().contains("checksum"));
}

#[test]
fn wrong_version_is_a_version_error() {
    let dir = tempdir().unwrap();
    let prefix = dir.path().join("lr");
    modelstore::save_classical(&toy_classical(), &prefix, Value::Null).unwrap();
    edit_manifest(&prefix, |v| v["format_version"] = json!(2));
    assert!(matches!(modelstore::load(&prefix), Err(StoreError::Version { found: 2 })));
}

#[test]
fn edited_shape_is_a_shape_error() {
    let dir = tempdir().unwrap();
    let prefix = dir.path().join("lr");
    modelstore::save_classical(&toy_classical(), &prefix, Value::Null).unwrap();
    edit_manifest(&prefix, |v| {
        let idx = v["tensor_index"].as_array_mut().unwrap();
        let theta = idx.iter_mut().find(|e| e["name"] == "theta").unwrap();
        theta["shape"] = json!([4]);
    });
    assert!(matches!(modelstore::load(&prefix), Err(StoreError::Shape(_))));

    let prefix = dir.path().join("nn");
    modelstore::save_neural(&small_neural(1), &prefix, Value::Null).unwrap();
    edit_manifest(&prefix, |v| v["tensor_index"][3]["shape"] = json!([2, 2]));
    assert!(matches!(modelstore::load(&prefix), Err(StoreError::Shape(_))));
}

#[test]
fn tampered_vocab_is_detected() {
    let dir = tempdir().unwrap();
    let prefix = dir.path().join("nn");
    modelstore::save_neural(&small_neural(1), &prefix, Value::Null).unwrap();
    let vocab = dir.path().join("vocab.json");
    let text = fs::read_to_string(&vocab).unwrap().replace("\"a\"", "\"q\"");
    fs::write(&vocab, text).unwrap();
    assert!(matches!(modelstore::load(&prefix), Err(StoreError::Checksum { .. })));
}

#[test]
fn missing_files_are_io_errors() {
    let dir = tempdir().unwrap();
    assert!(matches!(modelstore::load(dir.path().join("nope")), Err(StoreError::Io { .. })));
    let prefix = dir.path().join("lr");
    modelstore::save_classical(&toy_classical(), &prefix, Value::Null).unwrap();
    fs::remove_file(artifact_paths(&prefix).1).unwrap();
    assert!(matches!(modelstore::load(&prefix), Err(StoreError::Io { .. })));
}

#[test]
fn kind_accessors_reject_the_other_kind() {
    let dir = tempdir().unwrap();
    let prefix = dir.path().join("lr");
    modelstore::save_classical(&toy_classical(), &prefix, Value::Null).unwrap();
    assert!(matches!(
        modelstore::load(&prefix).unwrap().into_neural(),
        Err(StoreError::Kind { .. })
    ));
}

#[test]
fn neural_round_trip_preserves_logits_bitwise() {
    let dir = tempdir().unwrap();
    let prefix = dir.path().join("nn");
    let m = small_neural(3);
    modelstore::save_neural(&m, &prefix, Value::Null).unwrap();
    let (loaded, _) = modelstore::load(&prefix).unwrap().into_neural().unwrap();
    assert_eq!(loaded.vocab, m.vocab);
    for (a, b) in m.model.tensors().iter().zip(loaded.model.tensors()) {
        let ab: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
        let bb: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(ab, bb);
    }
    let mut rng = seeded_rng(4);
    for _ in 0..10 {
        let batch: Vec<EncodedSeq> = (0..8)
            .map(|_| encode(&random_words(&mut rng), &m.vocab, m.max_len()))
            .collect();
        let x = m.model.predict_logits(&batch).unwrap();
        let y = loaded.model.predict_logits(&batch).unwrap();
        assert_eq!(
            x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            y.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}

#[test]
fn neural_manifest_has_35_entries_in_declared_order() {
    let dir = tempdir().unwrap();
    let manifest = modelstore::save_neural(&small_neural(1), dir.path().join("nn"), Value::Null).unwrap();
    assert_eq!(manifest.tensor_index.len(), 1 + 2 * 2 * 8 + 2);
    let names: Vec<&str> = manifest.tensor_index.iter().map(|e| e.name.as_str()).collect();
    assert_eq!(names[0], "embedding");
    assert_eq!(names[34], "head_b");
    assert_eq!(names[33], "head_w");
    let gates = ["W_f", "W_i", "W_c", "W_o", "b_f", "b_i", "b_c", "b_o"];
    let mut k = 1;
    for layer in 1..=2 {
        for dir in ["forward", "backward"] {
            for g in gates {
                assert!(
                    names[k].contains(&format!("{layer}")) && names[k].contains(dir) && names[k].ends_with(g),
                    "entry {k} is {}",
                    names[k]
                );
                k += 1;
            }
        }
    }
    assert!(dir.path().join("vocab.json").exists());
}

#[test]
fn neural_manifest_echoes_the_reference_architecture() {
    let dir = tempdir().unwrap();
    let docs: Vec<TokenSeq> = vec!["a b c d e f g h".split(' ').collect()];
    let vocab = Vocabulary::build(&docs).unwrap();
    let m = NeuralModel {
        model: BiLstmModel::init(BiLstmConfig::reference(vocab.size()), 0).unwrap(),
        vocab,
    };
    let manifest = modelstore::save_neural(&m, dir.path().join("nn"), json!({"epochs": 6})).unwrap();
    let arch = &manifest.config["architecture"];
    assert_eq!(arch["emb_dim"], 128);
    assert_eq!(arch["hidden"], 128);
    assert_eq!(arch["num_layers"], 2);
    assert_eq!(arch["dropout"], 0.3);
    assert_eq!(arch["max_len"], 50);
    assert_eq!(manifest.config["epochs"], 6);
}

#[test]
fn saving_the_same_model_twice_is_byte_identical() {
    std::env::set_var("SOURCE_DATE_EPOCH", "1700000000");
    let a = tempdir().unwrap();
    let b = tempdir().unwrap();
    let m = small_neural(2);
    modelstore::save_neural(&m, a.path().join("nn"), Value::Null).unwrap();
    modelstore::save_neural(&m, b.path().join("nn"), Value::Null).unwrap();
    for f in ["nn.manifest.json", "nn.weights.bin", "vocab.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn inconsistent_models_are_refused_before_writing() {
    let dir = tempdir().unwrap();
    let mut m = toy_classical();
    m.model.theta.push(0.0);
    let prefix = dir.path().join("lr");
    assert!(matches!(
        modelstore::save_classical(&m, &prefix, Value::Null),
        Err(StoreError::Consistency(_))
    ));
    assert!(!artifact_paths(&prefix).0.exists());
}
