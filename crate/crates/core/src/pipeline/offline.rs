//! Offline phase: correlate every proxy metric with the transfer property,
//! taking each reference model in turn as the objective.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eligible_references;
use crate::error::{Error, Result};
use crate::properties::{profile_testsets, Property, PropertyConfig};
use crate::similarity::{Metric, SimilarityEngine};
use crate::stats::{self, CorrelationStat, Orientation};
use crate::workspace::Workspace;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub min_median_tau: f64,
    pub min_frac_significant: f64,
    pub alpha: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            min_median_tau: 0.2,
            min_frac_significant: 0.7,
            alpha: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OfflineOptions {
    pub exclude_same_type: bool,
    pub alpha_levels: Vec<f64>,
    pub thresholds: Thresholds,
    pub property_config: PropertyConfig,
    /// Fewest eligible references an objective may have.
    pub min_references: usize,
}

impl Default for OfflineOptions {
    fn default() -> Self {
        OfflineOptions {
            exclude_same_type: true,
            alpha_levels: vec![0.05, 0.1],
            thresholds: Thresholds::default(),
            property_config: PropertyConfig::default(),
            min_references: 3,
        }
    }
}

/// Property values of the references against one objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveRow {
    pub objective: String,
    pub model_type: String,
    pub seed: i64,
    pub references: Vec<String>,
    pub property_values: Vec<f64>,
    pub error: Option<String>,
}

/// Kendall correlation of one metric on one objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub metric: Metric,
    pub objective: String,
    pub model_type: String,
    pub seed: i64,
    /// Raw metric values, aligned with the objective's references.
    pub proxies: Vec<f64>,
    pub stat: Option<CorrelationStat>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: Metric,
    pub orientation: Orientation,
    pub n_objectives: usize,
    pub n_valid: usize,
    pub median_tau: Option<f64>,
    pub q1_tau: Option<f64>,
    pub q3_tau: Option<f64>,
    /// Fraction of objectives with p below each level, keyed by the level.
    pub frac_significant: BTreeMap<String, f64>,
    pub mean_rank: f64,
    pub verdict: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OfflineStatus {
    Ok,
    NoUsableProxy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfflineReport {
    pub property: Property,
    pub metrics: Vec<Metric>,
    pub objectives: Vec<ObjectiveRow>,
    pub cells: Vec<Cell>,
    pub summaries: Vec<MetricSummary>,
    pub chosen_proxy: Option<Metric>,
    pub status: OfflineStatus,
    pub similarity_config_hash: String,
    pub options: OfflineOptions,
}

impl OfflineReport {
    pub fn summary(&self, metric: Metric) -> Option<&MetricSummary> {
        self.summaries.iter().find(|s| s.metric == metric)
    }

    pub fn cells_of(&self, metric: Metric) -> impl Iterator<Item = &Cell> {
        self.cells.iter().filter(move |c| c.metric == metric)
    }

    /// One row per (metric, objective).
    pub fn write_cells_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let ser = |e: csv::Error| Error::Serialization(e.to_string());
        w.write_record(["metric", "mut", "mut_type", "seed", "tau", "p", "n", "method", "error"])
            .map_err(ser)?;
        for c in &self.cells {
            let (tau, p, n, method) = match &c.stat {
                Some(s) => (
                    s.tau.to_string(),
                    s.p_value.to_string(),
                    s.n.to_string(),
                    serde_json::to_value(s.method).unwrap().as_str().unwrap().to_string(),
                ),
                None => Default::default(),
            };
            w.write_record([
                c.metric.id(),
                &c.objective,
                &c.model_type,
                &c.seed.to_string(),
                &tau,
                &p,
                &n,
                &method,
                c.error.as_deref().unwrap_or(""),
            ])
            .map_err(ser)?;
        }
        w.flush().map_err(|e| Error::Serialization(e.to_string()))
    }

    /// One row per metric with the aggregate columns.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let ser = |e: csv::Error| Error::Serialization(e.to_string());
        let mut header = vec![
            "metric".to_string(),
            "median_tau".into(),
            "q1_tau".into(),
            "q3_tau".into(),
        ];
        for a in &self.options.alpha_levels {
            header.push(format!("frac_p_lt_{a}"));
        }
        header.extend(["mean_rank".into(), "verdict".into(), "chosen".into()]);
        w.write_record(&header).map_err(ser)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for s in &self.summaries {
            let mut row = vec![s.metric.id().to_string(), opt(s.median_tau), opt(s.q1_tau), opt(s.q3_tau)];
            for a in &self.options.alpha_levels {
                row.push(s.frac_significant.get(&alpha_key(*a)).copied().unwrap_or(0.0).to_string());
            }
            row.push(s.mean_rank.to_string());
            row.push(s.verdict.to_string());
            row.push((self.chosen_proxy == Some(s.metric)).to_string());
            w.write_record(&row).map_err(ser)?;
        }
        w.flush().map_err(|e| Error::Serialization(e.to_string()))
    }
}

fn alpha_key(a: f64) -> String {
    format!("{a}")
}

/// Verdicts and the chosen proxy from per-objective correlations.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationCheck {
    pub summaries: Vec<MetricSummary>,
    pub chosen: Option<Metric>,
}

impl CorrelationCheck {
    pub fn status(&self) -> OfflineStatus {
        if self.chosen.is_some() {
            OfflineStatus::Ok
        } else {
            OfflineStatus::NoUsableProxy
        }
    }
}

/// `stats[m][i]` is the correlation of metric `m` on objective `i` (`None`
/// when it could not be computed). A metric passes when its median τ reaches
/// `min_median_tau` and at least `min_frac_significant` of objectives have
/// `p < alpha`. Among passing metrics the best mean per-objective rank of τ
/// wins, then the higher median τ, then the smaller metric id.
pub fn check_correlation(
    stats: &BTreeMap<Metric, Vec<Option<CorrelationStat>>>,
    thresholds: &Thresholds,
    alpha_levels: &[f64],
) -> Result<CorrelationCheck> {
    let n_obj = stats.values().map(Vec::len).max().unwrap_or(0);
    if stats.is_empty() || n_obj == 0 {
        return Err(Error::TooFewSamples { got: 0, needed: 1 });
    }
    if stats.values().any(|v| v.len() != n_obj) {
        return Err(Error::InvalidConfig("metrics cover different objectives".into()));
    }
    let metrics: Vec<Metric> = stats.keys().copied().collect();
    let mut rank_sums = vec![0.0; metrics.len()];
    for i in 0..n_obj {
        let taus: Vec<f64> = metrics
            .iter()
            .map(|m| stats[m][i].map_or(f64::NEG_INFINITY, |s| s.tau))
            .collect();
        for (r, v) in rank_sums.iter_mut().zip(stats::rank_vector(&taus, Orientation::SimilarityUp)) {
            *r += v;
        }
    }
    let mut summaries = Vec::new();
    for (mi, &m) in metrics.iter().enumerate() {
        let valid: Vec<&CorrelationStat> = stats[&m].iter().flatten().collect();
        let taus: Vec<f64> = valid.iter().map(|s| s.tau).collect();
        let q = stats::quartiles(&taus).ok();
        let frac = |alpha: f64| valid.iter().filter(|s| s.p_value < alpha).count() as f64 / n_obj as f64;
        let mut frac_significant: BTreeMap<String, f64> =
            alpha_levels.iter().map(|&a| (alpha_key(a), frac(a))).collect();
        frac_significant.insert(alpha_key(thresholds.alpha), frac(thresholds.alpha));
        let verdict = match q {
            Some((_, med, _)) => {
                med >= thresholds.min_median_tau && frac(thresholds.alpha) >= thresholds.min_frac_significant
            }
            None => false,
        };
        summaries.push(MetricSummary {
            metric: m,
            orientation: m.orientation(),
            n_objectives: n_obj,
            n_valid: valid.len(),
            median_tau: q.map(|q| q.1),
            q1_tau: q.map(|q| q.0),
            q3_tau: q.map(|q| q.2),
            frac_significant,
            mean_rank: rank_sums[mi] / n_obj as f64,
            verdict,
        });
    }
    let chosen = summaries
        .iter()
        .filter(|s| s.verdict)
        .min_by(|a, b| {
            a.mean_rank
                .total_cmp(&b.mean_rank)
                .then(b.median_tau.unwrap_or(f64::NEG_INFINITY).total_cmp(&a.median_tau.unwrap_or(f64::NEG_INFINITY)))
                .then(a.metric.id().cmp(b.metric.id()))
        })
        .map(|s| s.metric);
    Ok(CorrelationCheck { summaries, chosen })
}

struct ObjectiveOutcome {
    row: ObjectiveRow,
    cells: Vec<Cell>,
}

fn evaluate_objective(
    ws: &Workspace,
    engine: &SimilarityEngine<'_>,
    property: Property,
    metrics: &[Metric],
    options: &OfflineOptions,
    objective: &str,
) -> Result<ObjectiveOutcome> {
    let model = ws.model(objective)?;
    let refs = eligible_references(ws, objective, options.exclude_same_type)?;
    if refs.len() < options.min_references {
        return Err(Error::TooFewModels {
            objective: objective.to_string(),
            available: refs.len(),
            needed: options.min_references,
        });
    }
    let own = ws
        .owned_testset(objective)
        .ok_or_else(|| Error::InvalidWorkspace(format!("model {objective} owns no test set")))?
        .id()
        .to_string();
    let ref_ids: Vec<String> = refs.iter().map(|r| r.model.clone()).collect();
    let mut row = ObjectiveRow {
        objective: objective.to_string(),
        model_type: model.model_type().to_string(),
        seed: model.entry.seed,
        references: ref_ids.clone(),
        property_values: Vec::new(),
        error: None,
    };
    let blank_cells = |error: &str| -> Vec<Cell> {
        metrics
            .iter()
            .map(|&m| Cell {
                metric: m,
                objective: objective.to_string(),
                model_type: model.model_type().to_string(),
                seed: model.entry.seed,
                proxies: Vec::new(),
                stat: None,
                error: Some(error.to_string()),
            })
            .collect()
    };

    let mut testsets: Vec<String> = refs.iter().map(|r| r.testset.clone()).collect();
    testsets.push(own.clone());
    let values = profile_testsets(ws, property, objective, &testsets, &options.property_config).and_then(|profiles| {
        refs.iter()
            .map(|r| profiles.overlap(&[r.testset.as_str()], &own))
            .collect::<Result<Vec<f64>>>()
    });
    let values = match values {
        Ok(v) => v,
        Err(e) => {
            log::warn!("objective {objective}: property failed: {e}");
            row.error = Some(e.to_string());
            return Ok(ObjectiveOutcome {
                cells: blank_cells(&e.to_string()),
                row,
            });
        }
    };
    row.property_values = values.clone();

    let scores = match engine.pairwise_all(metrics, objective, &ref_ids) {
        Ok(s) => s,
        Err(e) => {
            log::warn!("objective {objective}: similarity failed: {e}");
            return Ok(ObjectiveOutcome {
                cells: blank_cells(&e.to_string()),
                row,
            });
        }
    };
    let cells = metrics
        .iter()
        .enumerate()
        .map(|(mi, &m)| {
            let proxies: Vec<f64> = scores.iter().map(|s| s[mi].value).collect();
            let normalized: Vec<f64> = proxies.iter().map(|&v| m.orientation().normalize(v)).collect();
            let (stat, error) = match stats::kendall_tau_b(&values, &normalized) {
                Ok(s) => (Some(s), None),
                Err(e) => {
                    log::debug!("objective {objective}, metric {m}: {e}");
                    (None, Some(e.to_string()))
                }
            };
            Cell {
                metric: m,
                objective: objective.to_string(),
                model_type: model.model_type().to_string(),
                seed: model.entry.seed,
                proxies,
                stat,
                error,
            }
        })
        .collect();
    Ok(ObjectiveOutcome { row, cells })
}

/// Runs the offline phase over every reference model as objective.
pub fn offline_validate(
    ws: &Workspace,
    engine: &SimilarityEngine<'_>,
    property: Property,
    metrics: &[Metric],
    options: &OfflineOptions,
) -> Result<OfflineReport> {
    if metrics.is_empty() {
        return Err(Error::InvalidConfig("no metrics requested".into()));
    }
    let objectives: Vec<String> = ws.reference_models().map(|m| m.id().to_string()).collect();
    let outcomes: Vec<ObjectiveOutcome> = objectives
        .par_iter()
        .map(|o| evaluate_objective(ws, engine, property, metrics, options, o))
        .collect::<Result<_>>()?;

    let mut per_metric: BTreeMap<Metric, Vec<Option<CorrelationStat>>> = BTreeMap::new();
    for o in &outcomes {
        for c in &o.cells {
            per_metric.entry(c.metric).or_default().push(c.stat);
        }
    }
    let check = check_correlation(&per_metric, &options.thresholds, &options.alpha_levels)?;
    let mut summaries = check.summaries.clone();
    summaries.sort_by_key(|s| metrics.iter().position(|&m| m == s.metric));
    let (rows, cells): (Vec<_>, Vec<_>) = outcomes.into_iter().map(|o| (o.row, o.cells)).unzip();
    Ok(OfflineReport {
        property,
        metrics: metrics.to_vec(),
        objectives: rows,
        cells: cells.into_iter().flatten().collect(),
        summaries,
        chosen_proxy: check.chosen,
        status: check.status(),
        similarity_config_hash: engine.config_hash().to_string(),
        options: options.clone(),
    })
}
