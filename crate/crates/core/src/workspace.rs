//! Workspace manifest and eager loading of every matrix it references.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{self, DenseMatrix, MatrixFile};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Reference,
    UnderTest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub features: PathBuf,
    pub logits: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub id: String,
    pub model_type: String,
    pub seed: i64,
    pub role: Role,
    pub train_features: PathBuf,
    pub train_logits: PathBuf,
    pub train_labels: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_accuracy: Option<f64>,
    #[serde(default)]
    pub eval: BTreeMap<String, EvalEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestSetEntry {
    pub id: String,
    pub origin_model: String,
    pub labels: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub num_classes: usize,
    pub models: Vec<ModelEntry>,
    pub testsets: Vec<TestSetEntry>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub options: BTreeMap<String, serde_json::Value>,
}

impl Manifest {
    pub fn read(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::ManifestParse {
            path,
            reason: e.to_string(),
        })
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let path = root.join(MANIFEST);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

#[derive(Clone, Debug)]
pub struct EvalData {
    pub features: DenseMatrix,
    pub logits: DenseMatrix,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub entry: ModelEntry,
    pub train_features: DenseMatrix,
    pub train_logits: DenseMatrix,
    pub train_labels: Vec<i64>,
    pub eval: BTreeMap<String, EvalData>,
}

impl Model {
    pub fn id(&self) -> &str {
        &self.entry.id
    }

    pub fn model_type(&self) -> &str {
        &self.entry.model_type
    }

    pub fn feature_dim(&self) -> usize {
        self.train_features.cols()
    }

    pub fn eval_on(&self, testset: &str) -> Result<&EvalData> {
        self.eval.get(testset).ok_or_else(|| Error::MissingEvaluation {
            model: self.entry.id.clone(),
            testset: testset.to_string(),
        })
    }

    /// Train accuracy: the manifest value when present, else argmax of the
    /// train logits against the train labels.
    pub fn train_accuracy(&self, prefer_manifest: bool) -> f64 {
        if prefer_manifest {
            if let Some(acc) = self.entry.train_accuracy {
                return acc;
            }
        }
        let preds = matrix::predictions_of(&self.train_logits);
        let hits = preds
            .iter()
            .zip(&self.train_labels)
            .filter(|(p, l)| p == l)
            .count();
        hits as f64 / preds.len() as f64
    }
}

#[derive(Clone, Debug)]
pub struct TestSet {
    pub entry: TestSetEntry,
    pub labels: Vec<i64>,
}

impl TestSet {
    pub fn id(&self) -> &str {
        &self.entry.id
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A fully loaded, validated workspace. Models and test sets are kept sorted
/// by id, so loading does not depend on manifest list order.
#[derive(Clone, Debug)]
pub struct Workspace {
    root: PathBuf,
    manifest: Manifest,
    models: Vec<Model>,
    testsets: Vec<TestSet>,
}

/// Outcome of inspecting a workspace: every issue found, and the workspace
/// itself when there were none.
#[derive(Debug)]
pub struct Inspection {
    pub workspace: Option<Workspace>,
    pub issues: Vec<Error>,
}

pub fn load_workspace(root: impl AsRef<Path>) -> Result<Workspace> {
    let inspection = inspect_workspace(root)?;
    match inspection.workspace {
        Some(ws) => Ok(ws),
        None => Err(inspection
            .issues
            .into_iter()
            .next()
            .unwrap_or_else(|| Error::InvalidWorkspace("unknown failure".into()))),
    }
}

/// Loads and validates a workspace, collecting every issue instead of
/// stopping at the first. Fails outright only when the root or its manifest
/// cannot be read.
pub fn inspect_workspace(root: impl AsRef<Path>) -> Result<Inspection> {
    let root = root.as_ref();
    let meta = fs::metadata(root).map_err(|e| Error::io(root, e))?;
    if !meta.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotADirectory, "not a directory"),
        ));
    }
    let manifest = match Manifest::read(root) {
        Ok(m) => m,
        Err(e @ Error::ManifestParse { .. }) => {
            return Ok(Inspection {
                workspace: None,
                issues: vec![e],
            })
        }
        Err(e) => return Err(e),
    };
    Ok(Workspace::assemble(root, manifest, &mut |p| matrix::read_matrix(p)))
}

impl Workspace {
    /// Builds a workspace from a manifest, resolving paths through `load`.
    /// Used for on-disk loading and for in-memory construction in tests.
    pub fn assemble(
        root: &Path,
        manifest: Manifest,
        load: &mut dyn FnMut(&Path) -> Result<MatrixFile>,
    ) -> Inspection {
        let mut issues = Vec::new();
        let mut manifest = manifest;
        manifest.models.sort_by(|a, b| a.id.cmp(&b.id));
        manifest.testsets.sort_by(|a, b| a.id.cmp(&b.id));

        check_structure(&manifest, &mut issues);

        let mut testsets = Vec::new();
        for entry in &manifest.testsets {
            let path = root.join(&entry.labels);
            match load(&path).and_then(MatrixFile::into_labels) {
                Ok(labels) => {
                    check_labels(&path, &labels, manifest.num_classes, &mut issues);
                    testsets.push(TestSet {
                        entry: entry.clone(),
                        labels,
                    });
                }
                Err(e) => issues.push(e),
            }
        }
        let ts_len: BTreeMap<&str, (usize, PathBuf)> = testsets
            .iter()
            .map(|t| (t.id(), (t.len(), t.entry.labels.clone())))
            .collect();

        let mut models = Vec::new();
        let mut train_rows: Option<(usize, String)> = None;
        for entry in &manifest.models {
            match load_model(root, entry, manifest.num_classes, &ts_len, load, &mut issues) {
                Some(model) => {
                    let n = model.train_features.rows();
                    match &train_rows {
                        None => train_rows = Some((n, entry.id.clone())),
                        Some((n0, first)) if *n0 != n => issues.push(Error::ShapeMismatch {
                            left: format!("train features of {first}"),
                            left_shape: (*n0, 0),
                            right: format!("train features of {}", entry.id),
                            right_shape: (n, model.train_features.cols()),
                        }),
                        _ => {}
                    }
                    models.push(model);
                }
                None => continue,
            }
        }

        let workspace = if issues.is_empty() {
            Some(Workspace {
                root: root.to_path_buf(),
                manifest,
                models,
                testsets,
            })
        } else {
            None
        };
        Inspection { workspace, issues }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.num_classes
    }

    pub fn models(&self) -> &[Model] {
        &self.models
    }

    pub fn testsets(&self) -> &[TestSet] {
        &self.testsets
    }

    pub fn model(&self, id: &str) -> Result<&Model> {
        self.models
            .binary_search_by(|m| m.entry.id.as_str().cmp(id))
            .map(|i| &self.models[i])
            .map_err(|_| Error::UnknownModel(id.to_string()))
    }

    pub fn testset(&self, id: &str) -> Result<&TestSet> {
        self.testsets
            .binary_search_by(|t| t.entry.id.as_str().cmp(id))
            .map(|i| &self.testsets[i])
            .map_err(|_| Error::UnknownTestSet(id.to_string()))
    }

    pub fn reference_models(&self) -> impl Iterator<Item = &Model> {
        self.models.iter().filter(|m| m.entry.role == Role::Reference)
    }

    /// The test set generated on `model`, if any.
    pub fn owned_testset(&self, model: &str) -> Option<&TestSet> {
        self.testsets.iter().find(|t| t.entry.origin_model == model)
    }

    /// Whether logit matrices already hold probabilities (manifest option
    /// `logits_are_probabilities`); otherwise rows are raw logits.
    pub fn logits_are_probabilities(&self) -> bool {
        self.manifest
            .options
            .get("logits_are_probabilities")
            .and_then(serde_json::Value::as_bool)
            .unwrap_or(false)
    }

    /// Faults of `model` on `testset`.
    pub fn fault_mask(&self, model: &str, testset: &str) -> Result<Vec<bool>> {
        let m = self.model(model)?;
        let t = self.testset(testset)?;
        let preds = matrix::predictions_of(&m.eval_on(testset)?.logits);
        matrix::fault_mask(&preds, &t.labels)
    }
}

fn check_structure(manifest: &Manifest, issues: &mut Vec<Error>) {
    if manifest.num_classes < 2 {
        issues.push(Error::InvalidWorkspace(format!(
            "num_classes must be at least 2, got {}",
            manifest.num_classes
        )));
    }
    if manifest.models.len() < 2 {
        issues.push(Error::InvalidWorkspace(format!(
            "need at least 2 models, found {}",
            manifest.models.len()
        )));
    }
    let mut ids = BTreeSet::new();
    for m in &manifest.models {
        if !ids.insert(m.id.as_str()) {
            issues.push(Error::InvalidWorkspace(format!("duplicate model id {}", m.id)));
        }
    }
    let mut ts_ids = BTreeSet::new();
    for t in &manifest.testsets {
        if !ts_ids.insert(t.id.as_str()) {
            issues.push(Error::InvalidWorkspace(format!("duplicate test set id {}", t.id)));
        }
        if !ids.contains(t.origin_model.as_str()) {
            issues.push(Error::InvalidWorkspace(format!(
                "test set {} originates from unknown model {}",
                t.id, t.origin_model
            )));
        }
    }
    for m in &manifest.models {
        for ts in m.eval.keys() {
            if !ts_ids.contains(ts.as_str()) {
                issues.push(Error::InvalidWorkspace(format!(
                    "model {} evaluates unknown test set {ts}",
                    m.id
                )));
            }
        }
        if m.role == Role::Reference {
            let owned = manifest
                .testsets
                .iter()
                .filter(|t| t.origin_model == m.id)
                .count();
            if owned != 1 {
                issues.push(Error::InvalidWorkspace(format!(
                    "reference model {} must own exactly one test set, owns {owned}",
                    m.id
                )));
            }
        }
    }
}

fn check_labels(path: &Path, labels: &[i64], num_classes: usize, issues: &mut Vec<Error>) {
    if let Some(bad) = labels.iter().find(|&&l| l < 0 || l as usize >= num_classes) {
        issues.push(Error::InvalidWorkspace(format!(
            "{}: label {bad} outside [0, {num_classes})",
            path.display()
        )));
    }
}

fn load_dense(
    root: &Path,
    rel: &Path,
    load: &mut dyn FnMut(&Path) -> Result<MatrixFile>,
    issues: &mut Vec<Error>,
) -> Option<DenseMatrix> {
    match load(&root.join(rel)) {
        Ok(m) => Some(m.into_dense()),
        Err(e) => {
            issues.push(e);
            None
        }
    }
}

fn load_model(
    root: &Path,
    entry: &ModelEntry,
    num_classes: usize,
    testsets: &BTreeMap<&str, (usize, PathBuf)>,
    load: &mut dyn FnMut(&Path) -> Result<MatrixFile>,
    issues: &mut Vec<Error>,
) -> Option<Model> {
    let before = issues.len();
    let train_features = load_dense(root, &entry.train_features, load, issues);
    let train_logits = load_dense(root, &entry.train_logits, load, issues);
    let train_labels = match load(&root.join(&entry.train_labels)).and_then(MatrixFile::into_labels) {
        Ok(l) => {
            check_labels(&root.join(&entry.train_labels), &l, num_classes, issues);
            Some(l)
        }
        Err(e) => {
            issues.push(e);
            None
        }
    };
    let mut eval = BTreeMap::new();
    for (ts, e) in &entry.eval {
        let f = load_dense(root, &e.features, load, issues);
        let l = load_dense(root, &e.logits, load, issues);
        if let (Some(f), Some(l)) = (f, l) {
            eval.insert(ts.clone(), (e, EvalData { features: f, logits: l }));
        }
    }
    let (train_features, train_logits, train_labels) = (train_features?, train_logits?, train_labels?);

    let label = |p: &Path| p.display().to_string();
    let d = train_features.cols();
    let n = train_features.rows();
    if train_logits.rows() != n {
        issues.push(Error::ShapeMismatch {
            left: label(&entry.train_features),
            left_shape: train_features.shape(),
            right: label(&entry.train_logits),
            right_shape: train_logits.shape(),
        });
    }
    if train_labels.len() != n {
        issues.push(Error::ShapeMismatch {
            left: label(&entry.train_features),
            left_shape: train_features.shape(),
            right: label(&entry.train_labels),
            right_shape: (train_labels.len(), 1),
        });
    }
    if train_logits.cols() != num_classes {
        issues.push(Error::ShapeMismatch {
            left: label(&entry.train_logits),
            left_shape: train_logits.shape(),
            right: "num_classes".into(),
            right_shape: (1, num_classes),
        });
    }
    for (ts, (paths, data)) in &eval {
        if data.features.cols() != d {
            issues.push(Error::ShapeMismatch {
                left: label(&entry.train_features),
                left_shape: train_features.shape(),
                right: label(&paths.features),
                right_shape: data.features.shape(),
            });
        }
        if data.logits.cols() != num_classes || data.logits.rows() != data.features.rows() {
            issues.push(Error::ShapeMismatch {
                left: label(&paths.features),
                left_shape: data.features.shape(),
                right: label(&paths.logits),
                right_shape: data.logits.shape(),
            });
        }
        if let Some((len, labels_path)) = testsets.get(ts.as_str()) {
            if data.features.rows() != *len {
                issues.push(Error::ShapeMismatch {
                    left: label(&paths.features),
                    left_shape: data.features.shape(),
                    right: label(labels_path),
                    right_shape: (*len, 1),
                });
            }
        }
    }
    if issues.len() != before {
        return None;
    }
    Some(Model {
        entry: entry.clone(),
        train_features,
        train_logits,
        train_labels,
        eval: eval.into_iter().map(|(k, (_, v))| (k, v)).collect(),
    })
}
