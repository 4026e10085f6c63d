//! Model-to-model similarity proxies and a caching engine that evaluates
//! them over a workspace.

mod functional;
mod representational;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use functional::{acc_diff, disagreement, j_divergence, row_probabilities, ProbabilityTable, PROB_FLOOR};
pub use representational::{
    canonical_correlations, cka_linear, preprocess_features, procrustes_ortho, pwcca, pwcca_directional,
    CcaOutcome, PreprocessedFeatures, CCA_RIDGE, RANK_TOLERANCE,
};

use crate::error::{Error, Result};
use crate::linalg;
use crate::matrix;
use crate::stats::Orientation;
use crate::workspace::{Model, Workspace};
use representational::Spectrum;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Pwcca,
    Cka,
    Ortho,
    Acc,
    Dis,
    Jdiv,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Pwcca,
        Metric::Cka,
        Metric::Ortho,
        Metric::Acc,
        Metric::Dis,
        Metric::Jdiv,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Metric::Pwcca => "pwcca",
            Metric::Cka => "cka",
            Metric::Ortho => "ortho",
            Metric::Acc => "acc",
            Metric::Dis => "dis",
            Metric::Jdiv => "jdiv",
        }
    }

    pub fn orientation(self) -> Orientation {
        match self {
            Metric::Pwcca => Orientation::SimilarityUp,
            _ => Orientation::DistanceUp,
        }
    }

    pub fn is_representational(self) -> bool {
        matches!(self, Metric::Pwcca | Metric::Cka | Metric::Ortho)
    }

    /// Closed range of valid values; `None` upper bound means unbounded.
    pub fn range(self) -> (f64, Option<f64>) {
        match self {
            Metric::Ortho => (0.0, Some(2.0)),
            Metric::Jdiv => (0.0, None),
            _ => (0.0, Some(1.0)),
        }
    }

    pub fn parse_list(s: &str) -> Result<Vec<Metric>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let m: Metric = part.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidConfig("empty metric list".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.id().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown metric {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    pub metric: Metric,
    pub value: f64,
    pub orientation: Orientation,
    pub pair: (String, String),
}

impl SimilarityScore {
    /// Value on the "higher means more similar" axis.
    pub fn normalized(&self) -> f64 {
        self.orientation.normalize(self.value)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PwccaMode {
    /// Mean of both weighting directions.
    #[default]
    Symmetric,
    /// Weights from the first model of the pair only.
    FirstArgument,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracySource {
    /// Manifest `train_accuracy` when present, else computed.
    Manifest,
    /// Always computed from train logits and labels.
    Computed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub pwcca_mode: PwccaMode,
    pub accuracy_source: AccuracySource,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            pwcca_mode: PwccaMode::Symmetric,
            accuracy_source: AccuracySource::Manifest,
        }
    }
}

impl SimilarityConfig {
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(format!("{text}|ridge={CCA_RIDGE:e}|tol={RANK_TOLERANCE:e}|floor={PROB_FLOOR:e}")))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Content hash of the train artifacts a model's scores depend on.
pub fn model_fingerprint(model: &Model, probabilities: bool) -> String {
    let mut h = Sha256::new();
    for m in [&model.train_features, &model.train_logits] {
        h.update((m.rows() as u64).to_le_bytes());
        h.update((m.cols() as u64).to_le_bytes());
        for v in m.as_slice() {
            h.update(v.to_le_bytes());
        }
    }
    for l in &model.train_labels {
        h.update(l.to_le_bytes());
    }
    h.update(model.entry.train_accuracy.unwrap_or(-1.0).to_le_bytes());
    h.update([probabilities as u8]);
    hex(&h.finalize())
}

/// Per-model quantities shared by all pairs involving that model.
struct Prepared {
    features: PreprocessedFeatures,
    spectrum: Spectrum,
    predictions: Vec<i64>,
    probabilities: ProbabilityTable,
    accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
struct ScoreKey {
    metric: Metric,
    first: String,
    second: String,
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    config_hash: String,
    entries: Vec<(ScoreKey, f64)>,
}

type Slot = Arc<Mutex<Option<Arc<Prepared>>>>;

/// Evaluates metrics over workspace models with per-model preparation and
/// a score cache keyed by (metric, model contents, config).
pub struct SimilarityEngine<'a> {
    ws: &'a Workspace,
    config: SimilarityConfig,
    config_hash: String,
    fingerprints: BTreeMap<String, String>,
    prepared: Mutex<HashMap<String, Slot>>,
    scores: Mutex<HashMap<ScoreKey, f64>>,
}

impl<'a> SimilarityEngine<'a> {
    pub fn new(ws: &'a Workspace, config: SimilarityConfig) -> Self {
        let probs = ws.logits_are_probabilities();
        let fingerprints = ws
            .models()
            .par_iter()
            .map(|m| (m.id().to_string(), model_fingerprint(m, probs)))
            .collect();
        SimilarityEngine {
            ws,
            config,
            config_hash: config.hash(),
            fingerprints,
            prepared: Mutex::new(HashMap::new()),
            scores: Mutex::new(HashMap::new()),
        }
    }

    pub fn workspace(&self) -> &'a Workspace {
        self.ws
    }

    pub fn config(&self) -> SimilarityConfig {
        self.config
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn cached_scores(&self) -> usize {
        self.scores.lock().unwrap().len()
    }

    fn fingerprint(&self, id: &str) -> Result<&str> {
        self.fingerprints
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| Error::UnknownModel(id.to_string()))
    }

    fn key(&self, metric: Metric, a: &str, b: &str) -> Result<ScoreKey> {
        Ok(ScoreKey {
            metric,
            first: self.fingerprint(a)?.to_string(),
            second: self.fingerprint(b)?.to_string(),
        })
    }

    fn prepare(&self, id: &str) -> Result<Arc<Prepared>> {
        let slot = {
            let mut map = self.prepared.lock().unwrap();
            map.entry(id.to_string()).or_default().clone()
        };
        let mut guard = slot.lock().unwrap();
        if let Some(p) = guard.as_ref() {
            return Ok(p.clone());
        }
        let model = self.ws.model(id)?;
        let features = preprocess_features(&model.train_features.to_mat(), id)?;
        let spectrum = Spectrum::new(features.matrix())?;
        let prepared = Arc::new(Prepared {
            spectrum,
            features,
            predictions: matrix::predictions_of(&model.train_logits),
            probabilities: ProbabilityTable::new(&model.train_logits, self.ws.logits_are_probabilities()),
            accuracy: model.train_accuracy(self.config.accuracy_source == AccuracySource::Manifest),
        });
        *guard = Some(prepared.clone());
        Ok(prepared)
    }

    /// Computes every metric in `metrics` for the ordered pair `(a, b)`,
    /// storing the results. Representational metrics share one cross product.
    fn compute(&self, metrics: &[Metric], a: &str, b: &str) -> Result<Vec<(Metric, f64)>> {
        let pa = self.prepare(a)?;
        let pb = self.prepare(b)?;
        let mut out = Vec::with_capacity(metrics.len());
        let needs_cross = metrics.iter().any(|m| m.is_representational());
        let cross: Option<Mat<f64>> = if needs_cross {
            if pa.features.rows() != pb.features.rows() {
                return Err(Error::RowMismatch {
                    left: pa.features.rows(),
                    right: pb.features.rows(),
                });
            }
            Some(linalg::cross_gram(pa.features.matrix().as_ref(), pb.features.matrix().as_ref()))
        } else {
            None
        };
        for &metric in metrics {
            let value = match metric {
                Metric::Pwcca => {
                    let c = representational::cca(&pa.spectrum, &pb.spectrum, cross.as_ref().unwrap())?;
                    match self.config.pwcca_mode {
                        PwccaMode::Symmetric => c.pwcca_symmetric(),
                        PwccaMode::FirstArgument => c.pwcca_first(),
                    }
                }
                Metric::Cka => representational::cka_from_parts(
                    cross.as_ref().unwrap(),
                    pa.spectrum.gram_norm,
                    pb.spectrum.gram_norm,
                )?,
                Metric::Ortho => representational::ortho_from_parts(
                    cross.as_ref().unwrap(),
                    pa.spectrum.energy,
                    pb.spectrum.energy,
                )?,
                Metric::Acc => acc_diff(pa.accuracy, pb.accuracy)?,
                Metric::Dis => disagreement(&pa.predictions, &pb.predictions)?,
                Metric::Jdiv => pa.probabilities.j_divergence(&pb.probabilities)?,
            };
            if !value.is_finite() {
                return Err(Error::Numerical(format!("{metric} for ({a}, {b}) is not finite")));
            }
            out.push((metric, value));
        }
        Ok(out)
    }

    /// Scores of several metrics for the ordered pair `(a, b)`, served from
    /// the cache where possible.
    pub fn scores(&self, metrics: &[Metric], a: &str, b: &str) -> Result<Vec<SimilarityScore>> {
        if a == b {
            return Err(Error::SelfComparison(a.to_string()));
        }
        let mut values: BTreeMap<Metric, f64> = BTreeMap::new();
        let mut missing = Vec::new();
        {
            let cache = self.scores.lock().unwrap();
            for &m in metrics {
                match cache.get(&self.key(m, a, b)?) {
                    Some(&v) => {
                        values.insert(m, v);
                    }
                    None => missing.push(m),
                }
            }
        }
        if !missing.is_empty() {
            let computed = self.compute(&missing, a, b)?;
            let mut cache = self.scores.lock().unwrap();
            for (m, v) in computed {
                let symmetric = m != Metric::Pwcca || self.config.pwcca_mode == PwccaMode::Symmetric;
                cache.entry(self.key(m, a, b)?).or_insert(v);
                if symmetric {
                    cache.entry(self.key(m, b, a)?).or_insert(v);
                }
                values.insert(m, v);
            }
        }
        Ok(metrics
            .iter()
            .map(|&m| SimilarityScore {
                metric: m,
                value: values[&m],
                orientation: m.orientation(),
                pair: (a.to_string(), b.to_string()),
            })
            .collect())
    }

    pub fn score(&self, metric: Metric, a: &str, b: &str) -> Result<SimilarityScore> {
        Ok(self.scores(&[metric], a, b)?.remove(0))
    }

    /// One score per candidate, in candidate order; each pair is
    /// `(candidate, target)`. Candidates are evaluated in parallel.
    pub fn pairwise_similarity(
        &self,
        metric: Metric,
        target: &str,
        candidates: &[String],
    ) -> Result<Vec<SimilarityScore>> {
        self.ws.model(target)?;
        if let Some(c) = candidates.iter().find(|c| c.as_str() == target) {
            return Err(Error::SelfComparison(c.clone()));
        }
        self.prepare(target)?;
        candidates
            .par_iter()
            .map(|c| self.score(metric, c, target))
            .collect()
    }

    /// All listed metrics for every candidate against `target`, one row per
    /// candidate.
    pub fn pairwise_all(
        &self,
        metrics: &[Metric],
        target: &str,
        candidates: &[String],
    ) -> Result<Vec<Vec<SimilarityScore>>> {
        self.ws.model(target)?;
        if let Some(c) = candidates.iter().find(|c| c.as_str() == target) {
            return Err(Error::SelfComparison(c.clone()));
        }
        self.prepare(target)?;
        candidates
            .par_iter()
            .map(|c| self.scores(metrics, c, target))
            .collect()
    }

    pub fn export_cache(&self) -> Result<String> {
        let cache = self.scores.lock().unwrap();
        let mut entries: Vec<(ScoreKey, f64)> = cache.iter().map(|(k, v)| (k.clone(), *v)).collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        serde_json::to_string(&CacheFile {
            config_hash: self.config_hash.clone(),
            entries,
        })
        .map_err(|e| Error::Serialization(e.to_string()))
    }

    /// Merges a previously exported cache. Entries computed under another
    /// configuration are ignored; returns how many entries were taken.
    pub fn import_cache(&self, text: &str) -> Result<usize> {
        let file: CacheFile = serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        if file.config_hash != self.config_hash {
            return Ok(0);
        }
        let mut cache = self.scores.lock().unwrap();
        let mut taken = 0;
        for (k, v) in file.entries {
            if v.is_finite() && cache.insert(k, v).is_none() {
                taken += 1;
            }
        }
        Ok(taken)
    }
}

/// Writes scores as CSV with columns metric,model_a,model_b,value,orientation.
pub fn write_scores_csv<W: Write>(out: W, scores: &[SimilarityScore]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let ser = |e: csv::Error| Error::Serialization(e.to_string());
    w.write_record(["metric", "model_a", "model_b", "value", "orientation"])
        .map_err(ser)?;
    for s in scores {
        w.write_record([
            s.metric.id(),
            &s.pair.0,
            &s.pair.1,
            &format!("{}", s.value),
            s.orientation.as_str(),
        ])
        .map_err(ser)?;
    }
    w.flush().map_err(|e| Error::Serialization(e.to_string()))
}
