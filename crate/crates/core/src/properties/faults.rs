//! Fault types: clusters of fault-inducing inputs in the feature space of
//! the model under test.

use std::collections::{BTreeMap, BTreeSet};

use faer::Mat;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::cluster::{self, NOISE};
use crate::error::{Error, Result};
use crate::matrix;
use crate::workspace::Workspace;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reducer {
    Pca,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterAlgo {
    Dbscan,
    HdbscanLite,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Standardize {
    /// Column statistics over the fault-inducing rows only.
    AfterFilter,
    /// Column statistics over every row of the listed test sets.
    BeforeFilter,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringConfig {
    pub reducer: Reducer,
    pub reduced_dims: usize,
    pub cluster_algo: ClusterAlgo,
    pub eps: f64,
    pub min_pts: usize,
    pub label_feature_scale: f64,
    pub rng_seed: u64,
    pub standardize: Standardize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig {
            reducer: Reducer::Pca,
            reduced_dims: 2,
            cluster_algo: ClusterAlgo::Dbscan,
            eps: 0.5,
            min_pts: 5,
            label_feature_scale: 1.0,
            rng_seed: 0,
            standardize: Standardize::AfterFilter,
        }
    }
}

impl ClusteringConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reduced_dims < 2 {
            return Err(Error::InvalidConfig("reduced_dims must be at least 2".into()));
        }
        if self.min_pts < 2 {
            return Err(Error::InvalidConfig("min_pts must be at least 2".into()));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidConfig(format!("eps must be positive, got {}", self.eps)));
        }
        if !self.label_feature_scale.is_finite() {
            return Err(Error::InvalidConfig("label_feature_scale must be finite".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Fault-inducing rows of the model under test across several test sets.
#[derive(Clone, Debug)]
pub struct FaultSpace {
    /// Standardized features followed by scaled predicted and true labels.
    pub matrix: Mat<f64>,
    /// `(testset id, row index)` for every row of `matrix`.
    pub provenance: Vec<(String, usize)>,
}

pub fn build_fault_space(
    ws: &Workspace,
    model_under_test: &str,
    testsets: &[String],
    config: &ClusteringConfig,
) -> Result<FaultSpace> {
    let model = ws.model(model_under_test)?;
    let d = model.feature_dim();
    let mut rows: Vec<(Vec<f64>, i64, i64)> = Vec::new();
    let mut provenance = Vec::new();
    let mut all_rows: Vec<Vec<f64>> = Vec::new();
    for ts in testsets {
        let labels = &ws.testset(ts)?.labels;
        let eval = model.eval_on(ts)?;
        let preds = matrix::predictions_of(&eval.logits);
        let mask = matrix::fault_mask(&preds, labels)?;
        for i in 0..eval.features.rows() {
            let feat: Vec<f64> = eval.features.row(i).iter().map(|&v| v as f64).collect();
            if mask[i] {
                rows.push((feat.clone(), preds[i], labels[i]));
                provenance.push((ts.clone(), i));
            }
            if config.standardize == Standardize::BeforeFilter {
                all_rows.push(feat);
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::NoFaults(model_under_test.to_string()));
    }
    let stats_rows: Vec<&[f64]> = match config.standardize {
        Standardize::AfterFilter => rows.iter().map(|r| r.0.as_slice()).collect(),
        Standardize::BeforeFilter => all_rows.iter().map(Vec::as_slice).collect(),
    };
    let (mean, sd) = column_moments(&stats_rows, d);
    let scale = config.label_feature_scale;
    let matrix = Mat::from_fn(rows.len(), d + 2, |i, j| {
        let (feat, pred, truth) = &rows[i];
        if j < d {
            if sd[j] > 0.0 {
                (feat[j] - mean[j]) / sd[j]
            } else {
                0.0
            }
        } else if j == d {
            *pred as f64 * scale
        } else {
            *truth as f64 * scale
        }
    });
    Ok(FaultSpace { matrix, provenance })
}

fn column_moments(rows: &[&[f64]], d: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            mean[j] += r[j] / n;
        }
    }
    let mut var = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            var[j] += (r[j] - mean[j]).powi(2) / n;
        }
    }
    (mean, var.into_iter().map(f64::sqrt).collect())
}

pub fn reduce_dims(m: &Mat<f64>, config: &ClusteringConfig) -> Result<Mat<f64>> {
    match config.reducer {
        Reducer::None => Ok(m.clone()),
        Reducer::Pca => Ok(cluster::pca(m, config.reduced_dims)?.points),
    }
}

pub fn cluster_density(points: &[Vec<f64>], config: &ClusteringConfig) -> Vec<i64> {
    match config.cluster_algo {
        ClusterAlgo::Dbscan => cluster::dbscan(points, config.eps, config.min_pts),
        ClusterAlgo::HdbscanLite => cluster::hdbscan_lite(points, config.min_pts),
    }
}

/// Fault-type sets per test set from one clustering run on one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultTypeProfile {
    #[serde(rename = "mut")]
    pub model_under_test: String,
    pub config_hash: String,
    pub n_clusters: usize,
    pub profiles: BTreeMap<String, BTreeSet<i64>>,
    /// Per test set, number of its faulty rows in each cluster.
    pub counts: BTreeMap<String, Vec<usize>>,
    pub silhouette: Option<f64>,
}

impl FaultTypeProfile {
    pub fn set(&self, testset: &str) -> Result<&BTreeSet<i64>> {
        self.profiles
            .get(testset)
            .ok_or_else(|| Error::UnknownTestSet(testset.to_string()))
    }

    /// Union of the fault types of several test sets.
    pub fn combined(&self, testsets: &[&str]) -> Result<BTreeSet<i64>> {
        let mut out = BTreeSet::new();
        for t in testsets {
            out.extend(self.set(t)?.iter().copied());
        }
        Ok(out)
    }
}

pub fn fault_type_profiles(
    ws: &Workspace,
    model_under_test: &str,
    testsets: &[String],
    config: &ClusteringConfig,
) -> Result<FaultTypeProfile> {
    config.validate()?;
    let space = build_fault_space(ws, model_under_test, testsets, config)?;
    let points = cluster::rows_of(&reduce_dims(&space.matrix, config)?);
    let labels = if points.len() < config.min_pts {
        vec![NOISE; points.len()]
    } else {
        cluster_density(&points, config)
    };
    let n_clusters = cluster::cluster_count(&labels);
    let mut profiles: BTreeMap<String, BTreeSet<i64>> =
        testsets.iter().map(|t| (t.clone(), BTreeSet::new())).collect();
    let mut counts: BTreeMap<String, Vec<usize>> = testsets.iter().map(|t| (t.clone(), vec![0; n_clusters])).collect();
    for ((ts, _), &label) in space.provenance.iter().zip(&labels) {
        if label >= 0 {
            profiles.get_mut(ts).unwrap().insert(label);
            counts.get_mut(ts).unwrap()[label as usize] += 1;
        }
    }
    let silhouette = cluster::silhouette_score(&points, &labels).ok();
    Ok(FaultTypeProfile {
        model_under_test: model_under_test.to_string(),
        config_hash: config.hash(),
        n_clusters,
        profiles,
        counts,
        silhouette,
    })
}

/// `|F_R ∩ F_O| / |F_O|`.
pub fn fault_overlap(reference: &BTreeSet<i64>, objective: &BTreeSet<i64>) -> Result<f64> {
    if objective.is_empty() {
        return Err(Error::EmptyObjective);
    }
    Ok(reference.intersection(objective).count() as f64 / objective.len() as f64)
}
