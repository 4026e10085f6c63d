//! The two-phase workflow and its evaluation reports.

mod offline;
mod online;
mod report;

use serde::{Deserialize, Serialize};

pub use offline::{
    check_correlation, offline_validate, Cell, CorrelationCheck, MetricSummary, ObjectiveRow, OfflineOptions,
    OfflineReport, OfflineStatus, Thresholds,
};
pub use online::{
    each_best_first, objective_profiles, online_select, plan_property, random_samples, rank_references, top_k_eval,
    Chosen, EvalMetrics, RankedReference, SelectionPlan, Strategy, DEFAULT_RANDOM_REPS,
};
pub use report::{dendrogram, efficiency_index, rank_heatmap, Dendrogram, EfficiencyInput, Heatmap, Merge, PairValue};

use crate::error::Result;
use crate::workspace::Workspace;

/// A reference model whose test set may be transferred to a given model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EligibleReference {
    pub model: String,
    pub model_type: String,
    pub testset: String,
}

/// Reference models other than `model_under_test` that own a test set,
/// minus those of the same type when `exclude_same_type` is set. Sorted by
/// model id.
pub fn eligible_references(
    ws: &Workspace,
    model_under_test: &str,
    exclude_same_type: bool,
) -> Result<Vec<EligibleReference>> {
    let target = ws.model(model_under_test)?;
    Ok(ws
        .reference_models()
        .filter(|m| m.id() != model_under_test)
        .filter(|m| !exclude_same_type || m.model_type() != target.model_type())
        .filter_map(|m| {
            ws.owned_testset(m.id()).map(|t| EligibleReference {
                model: m.id().to_string(),
                model_type: m.model_type().to_string(),
                testset: t.id().to_string(),
            })
        })
        .collect())
}
