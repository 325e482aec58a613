//! Artifact persistence: `<name>.manifest.json` describing a `<name>.weights.bin`
//! payload of little-endian values, plus a shared `vocab.json` for the neural model.
//!
//! The manifest is written after the payload. Loading validates the format version,
//! the payload checksum (FNV-1a, 64-bit), and every tensor's shape against its byte
//! range before any model is built, so a failed load never yields a model.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::bilstm::{BiLstmConfig, BiLstmModel};
use crate::logreg::LogRegModel;
use crate::ndnum::Tensor;
use crate::pipeline::{ClassicalModel, NeuralModel};
use crate::textprep::Vocabulary;
use crate::tfidf::TfidfModel;

pub const FORMAT_VERSION: u32 = 1;
pub const CHECKSUM_ALGORITHM: &str = "fnv1a-64";
pub const VOCAB_FILE: &str = "vocab.json";
const MANIFEST_SUFFIX: &str = ".manifest.json";
const WEIGHTS_SUFFIX: &str = ".weights.bin";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: malformed manifest: {message}")]
    Manifest { path: String, message: String },
    #[error("unsupported format_version {found} (this build reads {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("checksum mismatch for {file}: manifest says {expected}, content hashes to {actual}")]
    Checksum {
        file: String,
        expected: String,
        actual: String,
    },
    #[error("shape inconsistency: {0}")]
    Shape(String),
    #[error("inconsistent model: {0}")]
    Consistency(String),
    #[error("expected a {expected} artifact, found {found}")]
    Kind { expected: String, found: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Classical,
    Neural,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Classical => "classical",
            ModelKind::Neural => "neural",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DType {
    /// Little-endian IEEE-754 binary64.
    F64le,
    /// Little-endian unsigned 64-bit integer.
    U64le,
    /// UTF-8 strings joined by `\n`; `shape[0]` is the string count.
    Utf8Lines,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub byte_offset: u64,
    pub byte_length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactManifest {
    pub format_version: u32,
    pub model_kind: ModelKind,
    pub created_at: String,
    pub config: Value,
    pub checksum_algorithm: String,
    pub checksum: String,
    pub payload_file: String,
    pub payload_length: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_checksum: Option<String>,
    pub tensor_index: Vec<TensorEntry>,
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn hex(h: u64) -> String {
    format!("{h:016x}")
}

/// Manifest and payload paths for an artifact prefix such as `out/lr`. A path that
/// already ends in `.manifest.json` is accepted too.
pub fn artifact_paths(prefix: impl AsRef<Path>) -> (PathBuf, PathBuf) {
    let p = prefix.as_ref().to_string_lossy().to_string();
    let base = p.strip_suffix(MANIFEST_SUFFIX).unwrap_or(&p).to_string();
    (
        PathBuf::from(format!("{base}{MANIFEST_SUFFIX}")),
        PathBuf::from(format!("{base}{WEIGHTS_SUFFIX}")),
    )
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// RFC 3339 timestamp for new manifests. Honors `SOURCE_DATE_EPOCH` so that
/// repeated runs can produce byte-identical artifacts.
pub fn artifact_timestamp() -> String {
    use chrono::{DateTime, SecondsFormat, Utc};
    let when = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| DateTime::<Utc>::from_timestamp(secs, 0))
        .unwrap_or_else(Utc::now);
    when.to_rfc3339_opts(SecondsFormat::Secs, true)
}

#[derive(Default)]
struct PayloadWriter {
    bytes: Vec<u8>,
    index: Vec<TensorEntry>,
}

impl PayloadWriter {
    fn push(&mut self, name: &str, dtype: DType, shape: Vec<usize>, data: &[u8]) {
        self.index.push(TensorEntry {
            name: name.to_string(),
            dtype,
            shape,
            byte_offset: self.bytes.len() as u64,
            byte_length: data.len() as u64,
        });
        self.bytes.extend_from_slice(data);
    }

    fn f64s(&mut self, name: &str, shape: Vec<usize>, values: &[f64]) {
        let data: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        self.push(name, DType::F64le, shape, &data);
    }
}

fn classical_payload(model: &ClassicalModel) -> PayloadWriter {
    let n = model.vectorizer.dim();
    let mut w = PayloadWriter::default();
    w.push("features", DType::Utf8Lines, vec![n], model.vectorizer.features().join("\n").as_bytes());
    w.f64s("idf", vec![n], model.vectorizer.idf());
    w.push("n_docs", DType::U64le, vec![1], &(model.vectorizer.n_docs() as u64).to_le_bytes());
    w.f64s("theta", vec![model.model.dim()], &model.model.theta);
    w.f64s("bias", vec![1], &[model.model.bias]);
    w.f64s("l2_lambda", vec![1], &[model.model.l2_lambda]);
    w
}

fn neural_payload(model: &BiLstmModel) -> PayloadWriter {
    let mut w = PayloadWriter::default();
    for (name, t) in model.tensor_names().iter().zip(model.tensors()) {
        w.f64s(name, t.shape().to_vec(), t.data());
    }
    w
}

/// Checksum of the serialized parameters of a model, as it would be written to disk.
pub fn classical_fingerprint(model: &ClassicalModel) -> u64 {
    fnv1a64(&classical_payload(model).bytes)
}

pub fn neural_fingerprint(model: &BiLstmModel) -> u64 {
    fnv1a64(&neural_payload(model).bytes)
}

fn merge_config(mut config: Value, key: &str, value: Value) -> Value {
    if !config.is_object() {
        config = Value::Object(Default::default());
    }
    config.as_object_mut().unwrap().insert(key.to_string(), value);
    config
}

fn write_artifact(
    prefix: &Path,
    kind: ModelKind,
    config: Value,
    payload: PayloadWriter,
    vocab: Option<(String, String)>,
) -> Result<ArtifactManifest, StoreError> {
    let (manifest_path, weights_path) = artifact_paths(prefix);
    if let Some(dir) = manifest_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let manifest = ArtifactManifest {
        format_version: FORMAT_VERSION,
        model_kind: kind,
        created_at: artifact_timestamp(),
        config,
        checksum_algorithm: CHECKSUM_ALGORITHM.into(),
        checksum: hex(fnv1a64(&payload.bytes)),
        payload_file: weights_path
            .file_name()
            .expect("prefix has a file name")
            .to_string_lossy()
            .into_owned(),
        payload_length: payload.bytes.len() as u64,
        vocab_file: vocab.as_ref().map(|(f, _)| f.clone()),
        vocab_checksum: vocab.map(|(_, c)| c),
        tensor_index: payload.index,
    };
    fs::write(&weights_path, &payload.bytes).map_err(io_err(&weights_path))?;
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, json + "\n").map_err(io_err(&manifest_path))?;
    Ok(manifest)
}

/// Writes the TF-IDF vectorizer and logistic-regression weights. `config` is echoed
/// into the manifest (training settings, metrics) with `tfidf_l2_normalize` added.
pub fn save_classical(model: &ClassicalModel, prefix: impl AsRef<Path>, config: Value) -> Result<ArtifactManifest, StoreError> {
    if model.vectorizer.dim() != model.model.dim() {
        return Err(StoreError::Consistency(format!(
            "vectorizer has {} features, classifier {}",
            model.vectorizer.dim(),
            model.model.dim()
        )));
    }
    let config = merge_config(config, "tfidf_l2_normalize", Value::Bool(model.vectorizer.l2_normalize));
    write_artifact(prefix.as_ref(), ModelKind::Classical, config, classical_payload(model), None)
}

/// Writes the BiLSTM weights and `vocab.json` next to the manifest. The architecture
/// is recorded under `config.architecture`.
pub fn save_neural(model: &NeuralModel, prefix: impl AsRef<Path>, config: Value) -> Result<ArtifactManifest, StoreError> {
    let arch = model.model.config;
    if model.vocab.size() != arch.vocab {
        return Err(StoreError::Consistency(format!(
            "vocabulary has {} entries, embedding has {} rows",
            model.vocab.size(),
            arch.vocab
        )));
    }
    let expected = BiLstmModel::zeros(arch).map_err(|e| StoreError::Consistency(e.to_string()))?;
    if expected.tensors().iter().zip(model.model.tensors()).any(|(a, b)| a.shape() != b.shape()) {
        return Err(StoreError::Consistency("tensor shapes disagree with the architecture".into()));
    }
    let prefix = prefix.as_ref();
    let (manifest_path, _) = artifact_paths(prefix);
    let vocab_path = manifest_path.with_file_name(VOCAB_FILE);
    if let Some(dir) = vocab_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let vocab_json = model.vocab.to_json(arch.max_len);
    fs::write(&vocab_path, &vocab_json).map_err(io_err(&vocab_path))?;
    let config = merge_config(config, "architecture", serde_json::to_value(arch).expect("config serializes"));
    write_artifact(
        prefix,
        ModelKind::Neural,
        config,
        neural_payload(&model.model),
        Some((VOCAB_FILE.into(), hex(fnv1a64(vocab_json.as_bytes())))),
    )
}

#[derive(Debug, Clone)]
pub enum LoadedModel {
    Classical(ClassicalModel),
    Neural(NeuralModel),
}

#[derive(Debug, Clone)]
pub struct LoadedArtifact {
    pub manifest: ArtifactManifest,
    pub model: LoadedModel,
}

impl LoadedArtifact {
    pub fn into_classical(self) -> Result<(ClassicalModel, ArtifactManifest), StoreError> {
        match self.model {
            LoadedModel::Classical(m) => Ok((m, self.manifest)),
            LoadedModel::Neural(_) => Err(StoreError::Kind {
                expected: "classical".into(),
                found: "neural".into(),
            }),
        }
    }

    pub fn into_neural(self) -> Result<(NeuralModel, ArtifactManifest), StoreError> {
        match self.model {
            LoadedModel::Neural(m) => Ok((m, self.manifest)),
            LoadedModel::Classical(_) => Err(StoreError::Kind {
                expected: "neural".into(),
                found: "classical".into(),
            }),
        }
    }
}

pub fn read_manifest(prefix: impl AsRef<Path>) -> Result<ArtifactManifest, StoreError> {
    let (manifest_path, _) = artifact_paths(prefix);
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let bad = |message: String| StoreError::Manifest {
        path: manifest_path.display().to_string(),
        message,
    };
    let raw: Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    // Version first, so that a future layout reports a version error rather than a parse error.
    match raw.get("format_version").and_then(Value::as_u64) {
        Some(v) if v == u64::from(FORMAT_VERSION) => {}
        Some(v) => return Err(StoreError::Version { found: v as u32 }),
        None => return Err(bad("missing format_version".into())),
    }
    let manifest: ArtifactManifest = serde_json::from_value(raw).map_err(|e| bad(e.to_string()))?;
    if manifest.checksum_algorithm != CHECKSUM_ALGORITHM {
        return Err(bad(format!("unknown checksum algorithm {:?}", manifest.checksum_algorithm)));
    }
    Ok(manifest)
}

struct PayloadReader<'a> {
    bytes: &'a [u8],
    index: &'a [TensorEntry],
}

impl PayloadReader<'_> {
    fn validate(&self) -> Result<(), StoreError> {
        let mut end = 0u64;
        for e in self.index {
            if e.byte_offset < end {
                return Err(StoreError::Shape(format!("tensor {} overlaps its predecessor", e.name)));
            }
            end = e.byte_offset.checked_add(e.byte_length).ok_or_else(|| StoreError::Shape(format!("tensor {} range overflows", e.name)))?;
            if end > self.bytes.len() as u64 {
                return Err(StoreError::Shape(format!("tensor {} extends past the payload", e.name)));
            }
            let count: usize = e.shape.iter().product();
            let want = match e.dtype {
                DType::F64le | DType::U64le => Some(count as u64 * 8),
                DType::Utf8Lines => None,
            };
            if let Some(want) = want.filter(|&w| w != e.byte_length) {
                return Err(StoreError::Shape(format!(
                    "tensor {} has shape {:?} ({want} bytes) but {} bytes in the payload",
                    e.name, e.shape, e.byte_length
                )));
            }
        }
        Ok(())
    }

    fn entry(&self, name: &str, dtype: DType) -> Result<(&TensorEntry, &[u8]), StoreError> {
        let e = self
            .index
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| StoreError::Shape(format!("missing tensor {name}")))?;
        if e.dtype != dtype {
            return Err(StoreError::Shape(format!("tensor {name} has dtype {:?}, expected {dtype:?}", e.dtype)));
        }
        let start = e.byte_offset as usize;
        Ok((e, &self.bytes[start..start + e.byte_length as usize]))
    }

    fn f64s(&self, name: &str) -> Result<(Vec<usize>, Vec<f64>), StoreError> {
        let (e, raw) = self.entry(name, DType::F64le)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((e.shape.clone(), values))
    }

    fn scalar(&self, name: &str) -> Result<f64, StoreError> {
        let (shape, v) = self.f64s(name)?;
        if shape != [1] {
            return Err(StoreError::Shape(format!("{name} must have shape [1], found {shape:?}")));
        }
        Ok(v[0])
    }
}

/// Loads either artifact kind from its prefix (or manifest path).
pub fn load(prefix: impl AsRef<Path>) -> Result<LoadedArtifact, StoreError> {
    let prefix = prefix.as_ref();
    let manifest = read_manifest(prefix)?;
    let (manifest_path, _) = artifact_paths(prefix);
    let weights_path = manifest_path.with_file_name(&manifest.payload_file);
    let bytes = fs::read(&weights_path).map_err(io_err(&weights_path))?;
    let actual = hex(fnv1a64(&bytes));
    if actual != manifest.checksum || bytes.len() as u64 != manifest.payload_length {
        return Err(StoreError::Checksum {
            file: weights_path.display().to_string(),
            expected: manifest.checksum.clone(),
            actual,
        });
    }
    let reader = PayloadReader {
        bytes: &bytes,
        index: &manifest.tensor_index,
    };
    reader.validate()?;
    let model = match manifest.model_kind {
        ModelKind::Classical => LoadedModel::Classical(load_classical(&reader, &manifest)?),
        ModelKind::Neural => LoadedModel::Neural(load_neural(&reader, &manifest, &manifest_path)?),
    };
    Ok(LoadedArtifact { manifest, model })
}

fn load_classical(reader: &PayloadReader, manifest: &ArtifactManifest) -> Result<ClassicalModel, StoreError> {
    let (fe, raw) = reader.entry("features", DType::Utf8Lines)?;
    let text = std::str::from_utf8(raw).map_err(|e| StoreError::Shape(format!("features are not UTF-8: {e}")))?;
    let features: Vec<String> = if text.is_empty() { Vec::new() } else { text.split('\n').map(String::from).collect() };
    if fe.shape != [features.len()] {
        return Err(StoreError::Shape(format!("features shape {:?} but {} strings stored", fe.shape, features.len())));
    }
    let (_, idf) = reader.f64s("idf")?;
    let (ne, nraw) = reader.entry("n_docs", DType::U64le)?;
    if ne.shape != [1] {
        return Err(StoreError::Shape("n_docs must have shape [1]".into()));
    }
    let n_docs = u64::from_le_bytes(nraw.try_into().unwrap()) as usize;
    let (_, theta) = reader.f64s("theta")?;
    if theta.len() != features.len() || idf.len() != features.len() {
        return Err(StoreError::Shape(format!(
            "{} features, {} idf weights, {} classifier weights",
            features.len(),
            idf.len(),
            theta.len()
        )));
    }
    let mut vectorizer = TfidfModel::from_parts(features, idf, n_docs).map_err(|e| StoreError::Consistency(e.to_string()))?;
    vectorizer.l2_normalize = manifest.config.get("tfidf_l2_normalize").and_then(Value::as_bool).unwrap_or(false);
    let model = LogRegModel {
        theta,
        bias: reader.scalar("bias")?,
        l2_lambda: reader.scalar("l2_lambda")?,
    };
    ClassicalModel::new(vectorizer, model).map_err(|e| StoreError::Consistency(e.to_string()))
}

fn load_neural(reader: &PayloadReader, manifest: &ArtifactManifest, manifest_path: &Path) -> Result<NeuralModel, StoreError> {
    let arch: BiLstmConfig = manifest
        .config
        .get("architecture")
        .cloned()
        .ok_or_else(|| StoreError::Consistency("manifest config lacks the architecture".into()))
        .and_then(|v| serde_json::from_value(v).map_err(|e| StoreError::Consistency(e.to_string())))?;
    let template = BiLstmModel::zeros(arch).map_err(|e| StoreError::Consistency(e.to_string()))?;
    let names = template.tensor_names();
    if manifest.tensor_index.len() != names.len() {
        return Err(StoreError::Shape(format!(
            "architecture needs {} tensors, manifest lists {}",
            names.len(),
            manifest.tensor_index.len()
        )));
    }
    let mut tensors = Vec::with_capacity(names.len());
    for (name, slot) in names.iter().zip(template.tensors()) {
        let (shape, data) = reader.f64s(name)?;
        if shape != slot.shape() {
            return Err(StoreError::Shape(format!("{name}: architecture needs {:?}, manifest says {shape:?}", slot.shape())));
        }
        tensors.push(Tensor::from_vec(&shape, data).map_err(|e| StoreError::Shape(e.to_string()))?);
    }
    let model = BiLstmModel::from_tensors(arch, tensors).map_err(|e| StoreError::Shape(e.to_string()))?;

    let vocab_name = manifest.vocab_file.as_deref().unwrap_or(VOCAB_FILE);
    let vocab_path = manifest_path.with_file_name(vocab_name);
    let vocab_text = fs::read_to_string(&vocab_path).map_err(io_err(&vocab_path))?;
    if let Some(expected) = &manifest.vocab_checksum {
        let actual = hex(fnv1a64(vocab_text.as_bytes()));
        if &actual != expected {
            return Err(StoreError::Checksum {
                file: vocab_path.display().to_string(),
                expected: expected.clone(),
                actual,
            });
        }
    }
    let (vocab, max_len) = Vocabulary::from_json(&vocab_text).map_err(|e| StoreError::Consistency(e.to_string()))?;
    if vocab.size() != arch.vocab || max_len != arch.max_len {
        return Err(StoreError::Shape(format!(
            "vocab.json has {} entries / max_len {max_len}; architecture expects {} / {}",
            vocab.size(),
            arch.vocab,
            arch.max_len
        )));
    }
    Ok(NeuralModel { model, vocab })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn prefix_and_manifest_paths_agree() {
        let a = artifact_paths("out/lr");
        let b = artifact_paths("out/lr.manifest.json");
        assert_eq!(a, b);
        assert_eq!(a.1, PathBuf::from("out/lr.weights.bin"));
    }

    #[test]
    fn timestamp_honors_source_date_epoch() {
        // Only this test touches the variable within the unit-test binary.
        std::env::set_var("SOURCE_DATE_EPOCH", "86400");
        assert_eq!(artifact_timestamp(), "1970-01-02T00:00:00Z");
        std::env::remove_var("SOURCE_DATE_EPOCH");
    }
}
