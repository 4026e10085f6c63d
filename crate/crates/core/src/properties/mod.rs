//! Transfer properties of reference test sets on a model under test:
//! overlap of fault-inducing coverage sections and of fault types.

pub mod cluster;
mod coverage;
mod faults;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use cluster::{dbscan, hdbscan_lite, pca, silhouette_score, Pca, NOISE};
pub use coverage::{coverage_profile, combine_coverage, fit_bands, kmnc_overlap, BandSpec, CoverageProfile};
pub use faults::{
    build_fault_space, cluster_density, fault_overlap, fault_type_profiles, reduce_dims, ClusterAlgo,
    ClusteringConfig, FaultSpace, FaultTypeProfile, Reducer, Standardize,
};

use crate::error::{Error, Result};
use crate::workspace::Workspace;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    Kmnc,
    FaultTypes,
}

impl Property {
    pub fn id(self) -> &'static str {
        match self {
            Property::Kmnc => "kmnc",
            Property::FaultTypes => "fault_types",
        }
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Property {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "kmnc" => Ok(Property::Kmnc),
            "fault_types" | "faults" => Ok(Property::FaultTypes),
            _ => Err(Error::InvalidConfig(format!("unknown property {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropertyConfig {
    /// Sections per neuron for coverage.
    pub k: usize,
    /// Restrict the objective test set's coverage to its fault-inducing
    /// inputs, like the references.
    pub filter_objective: bool,
    pub clustering: ClusteringConfig,
}

impl Default for PropertyConfig {
    fn default() -> Self {
        PropertyConfig {
            k: 10,
            filter_objective: true,
            clustering: ClusteringConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyScore {
    pub property: Property,
    pub value: f64,
    /// (reference test sets, objective test set)
    pub pair: (Vec<String>, String),
    #[serde(rename = "mut")]
    pub model_under_test: String,
}

/// Profiles of several test sets on one model under test, from which the
/// property of any combination of references against an objective follows.
#[derive(Clone, Debug)]
pub enum ProfileSet {
    Kmnc {
        model_under_test: String,
        k: usize,
        faulty: BTreeMap<String, CoverageProfile>,
        /// Coverage over all inputs, present when objective filtering is off.
        unfiltered: Option<BTreeMap<String, CoverageProfile>>,
    },
    Faults(FaultTypeProfile),
}

fn lookup<'m>(map: &'m BTreeMap<String, CoverageProfile>, t: &str) -> Result<&'m CoverageProfile> {
    map.get(t).ok_or_else(|| Error::UnknownTestSet(t.to_string()))
}

/// Builds the profiles of `testsets` on `model_under_test`.
pub fn profile_testsets(
    ws: &Workspace,
    property: Property,
    model_under_test: &str,
    testsets: &[String],
    config: &PropertyConfig,
) -> Result<ProfileSet> {
    let model = ws.model(model_under_test)?;
    match property {
        Property::Kmnc => {
            let bands = fit_bands(&model.train_features, config.k)?;
            let build = |all_rows: bool| -> Result<BTreeMap<String, CoverageProfile>> {
                testsets
                    .par_iter()
                    .map(|ts| {
                        let eval = model.eval_on(ts)?;
                        let mask = if all_rows {
                            vec![true; eval.features.rows()]
                        } else {
                            ws.fault_mask(model_under_test, ts)?
                        };
                        Ok((ts.clone(), coverage_profile(&eval.features, &bands, &mask)?))
                    })
                    .collect()
            };
            Ok(ProfileSet::Kmnc {
                model_under_test: model_under_test.to_string(),
                k: config.k,
                faulty: build(false)?,
                unfiltered: if config.filter_objective {
                    None
                } else {
                    Some(build(true)?)
                },
            })
        }
        Property::FaultTypes => Ok(ProfileSet::Faults(fault_type_profiles(
            ws,
            model_under_test,
            testsets,
            &config.clustering,
        )?)),
    }
}

impl ProfileSet {
    pub fn property(&self) -> Property {
        match self {
            ProfileSet::Kmnc { .. } => Property::Kmnc,
            ProfileSet::Faults(_) => Property::FaultTypes,
        }
    }

    pub fn model_under_test(&self) -> &str {
        match self {
            ProfileSet::Kmnc { model_under_test, .. } => model_under_test,
            ProfileSet::Faults(p) => &p.model_under_test,
        }
    }

    /// Property of the union of `references` against `objective`.
    pub fn overlap(&self, references: &[&str], objective: &str) -> Result<f64> {
        match self {
            ProfileSet::Kmnc {
                faulty, unfiltered, ..
            } => {
                let obj = lookup(unfiltered.as_ref().unwrap_or(faulty), objective)?;
                let refs = references.iter().map(|t| lookup(faulty, t)).collect::<Result<Vec<_>>>()?;
                match combine_coverage(refs)? {
                    Some(union) => kmnc_overlap(&union, obj),
                    None => kmnc_overlap(&CoverageProfile::empty(obj.neurons(), obj.k()), obj),
                }
            }
            ProfileSet::Faults(p) => fault_overlap(&p.combined(references)?, p.set(objective)?),
        }
    }

    pub fn score(&self, references: &[&str], objective: &str) -> Result<PropertyScore> {
        Ok(PropertyScore {
            property: self.property(),
            value: self.overlap(references, objective)?,
            pair: (
                references.iter().map(|s| s.to_string()).collect(),
                objective.to_string(),
            ),
            model_under_test: self.model_under_test().to_string(),
        })
    }

    /// Whether the objective exposes anything to overlap with.
    pub fn objective_is_empty(&self, objective: &str) -> bool {
        match self {
            ProfileSet::Kmnc {
                faulty, unfiltered, ..
            } => unfiltered
                .as_ref()
                .unwrap_or(faulty)
                .get(objective)
                .is_none_or(CoverageProfile::is_empty),
            ProfileSet::Faults(p) => p.profiles.get(objective).is_none_or(BTreeSet::is_empty),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            ProfileSet::Kmnc {
                model_under_test,
                k,
                faulty,
                ..
            } => json!({
                "property": "kmnc",
                "mut": model_under_test,
                "k": k,
                "profiles": faulty
                    .iter()
                    .map(|(t, p)| (t.clone(), json!(p.to_sections())))
                    .collect::<serde_json::Map<_, _>>(),
            }),
            ProfileSet::Faults(p) => json!({
                "property": "fault_types",
                "mut": p.model_under_test,
                "config_hash": p.config_hash,
                "n_clusters": p.n_clusters,
                "silhouette": p.silhouette,
                "profiles": p.profiles,
                "counts": p.counts,
            }),
        }
    }
}
