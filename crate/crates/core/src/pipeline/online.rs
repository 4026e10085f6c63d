//! Online phase: rank reference test sets for a model under test and pick
//! which to transfer.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{eligible_references, EligibleReference};
use crate::error::{Error, Result};
use crate::properties::{profile_testsets, ProfileSet, Property, PropertyConfig};
use crate::similarity::{Metric, SimilarityEngine};
use crate::workspace::Workspace;

pub const DEFAULT_RANDOM_REPS: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Strategy {
    Top1,
    TopN { n: usize },
    Obf { n: usize },
    Ebf { n: usize },
    Random { n: usize, reps: usize, seed: u64 },
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Top1 => write!(f, "top1"),
            Strategy::TopN { n } => write!(f, "topn:{n}"),
            Strategy::Obf { n } => write!(f, "obf:{n}"),
            Strategy::Ebf { n } => write!(f, "ebf:{n}"),
            Strategy::Random { n, reps, seed } => write!(f, "random:{n}:{reps}:{seed}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    /// `top1 | topn:N | obf:N | ebf:N | random:N[:REPS[:SEED]]`
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("bad strategy {s:?}"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |i: usize| -> Result<u64> { parts.get(i).ok_or_else(bad)?.parse().map_err(|_| bad()) };
        let positive = |i: usize| -> Result<usize> {
            match num(i)? {
                0 => Err(bad()),
                v => Ok(v as usize),
            }
        };
        let strategy = match parts[0].to_ascii_lowercase().as_str() {
            "top1" if parts.len() == 1 => Strategy::Top1,
            "topn" if parts.len() == 2 => Strategy::TopN { n: positive(1)? },
            "obf" if parts.len() == 2 => Strategy::Obf { n: positive(1)? },
            "ebf" if parts.len() == 2 => Strategy::Ebf { n: positive(1)? },
            "random" if (2..=4).contains(&parts.len()) => Strategy::Random {
                n: positive(1)?,
                reps: if parts.len() > 2 { positive(2)? } else { DEFAULT_RANDOM_REPS },
                seed: if parts.len() > 3 { num(3)? } else { 0 },
            },
            _ => return Err(bad()),
        };
        Ok(strategy)
    }
}

/// One reference with its similarity to the model under test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedReference {
    pub model: String,
    pub model_type: String,
    pub testset: String,
    pub value: f64,
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Chosen {
    Sets(Vec<String>),
    Samples(Vec<Vec<String>>),
}

impl Chosen {
    /// Every sample, a single ordered list counting as one.
    pub fn samples(&self) -> Vec<&[String]> {
        match self {
            Chosen::Sets(s) => vec![s.as_slice()],
            Chosen::Samples(v) => v.iter().map(Vec::as_slice).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionPlan {
    #[serde(rename = "mut")]
    pub model_under_test: String,
    pub metric: Metric,
    pub strategy: Strategy,
    pub strategy_spec: String,
    pub exclude_same_type: bool,
    pub chosen: Chosen,
    /// References ordered from most to least similar.
    pub similarity: Vec<RankedReference>,
}

/// Eligible references sorted by similarity to `model_under_test`, most
/// similar first; ties go to the smaller model id.
pub fn rank_references(
    engine: &SimilarityEngine<'_>,
    model_under_test: &str,
    metric: Metric,
    exclude_same_type: bool,
) -> Result<Vec<RankedReference>> {
    let ws = engine.workspace();
    let refs = eligible_references(ws, model_under_test, exclude_same_type)?;
    let ids: Vec<String> = refs.iter().map(|r| r.model.clone()).collect();
    let scores = engine.pairwise_similarity(metric, model_under_test, &ids)?;
    let mut ranked: Vec<(EligibleReference, f64)> = refs.into_iter().zip(scores.iter().map(|s| s.value)).collect();
    let orient = metric.orientation();
    ranked.sort_by(|a, b| {
        orient
            .normalize(b.1)
            .total_cmp(&orient.normalize(a.1))
            .then(a.0.model.cmp(&b.0.model))
    });
    Ok(ranked
        .into_iter()
        .enumerate()
        .map(|(i, (r, v))| RankedReference {
            model: r.model,
            model_type: r.model_type,
            testset: r.testset,
            value: v,
            rank: i + 1,
        })
        .collect())
}

fn take_first(ranked: &[RankedReference], n: usize) -> Vec<String> {
    if n > ranked.len() {
        log::warn!("asked for {n} test sets but only {} are eligible", ranked.len());
    }
    ranked.iter().take(n).map(|r| r.testset.clone()).collect()
}

/// The most similar seed of each type, types ordered by that seed.
pub fn each_best_first(ranked: &[RankedReference], n: usize) -> Result<Vec<String>> {
    let mut seen = std::collections::BTreeSet::new();
    let reps: Vec<&RankedReference> = ranked.iter().filter(|r| seen.insert(r.model_type.clone())).collect();
    if reps.len() < n {
        return Err(Error::NotEnoughTypes {
            requested: n,
            available: reps.len(),
        });
    }
    Ok(reps.into_iter().take(n).map(|r| r.testset.clone()).collect())
}

pub fn random_samples(ranked: &[RankedReference], n: usize, reps: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    if n > ranked.len() {
        return Err(Error::InvalidConfig(format!(
            "cannot sample {n} of {} eligible test sets",
            ranked.len()
        )));
    }
    let mut pool: Vec<&str> = ranked.iter().map(|r| r.testset.as_str()).collect();
    pool.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..reps)
        .map(|_| {
            sample(&mut rng, pool.len(), n)
                .into_iter()
                .map(|i| pool[i].to_string())
                .collect()
        })
        .collect())
}

pub fn online_select(
    engine: &SimilarityEngine<'_>,
    model_under_test: &str,
    metric: Metric,
    strategy: Strategy,
    exclude_same_type: bool,
) -> Result<SelectionPlan> {
    let ranked = rank_references(engine, model_under_test, metric, exclude_same_type)?;
    let chosen = match strategy {
        Strategy::Top1 => Chosen::Sets(take_first(&ranked, 1)),
        Strategy::TopN { n } | Strategy::Obf { n } => Chosen::Sets(take_first(&ranked, n)),
        Strategy::Ebf { n } => Chosen::Sets(each_best_first(&ranked, n)?),
        Strategy::Random { n, reps, seed } => Chosen::Samples(random_samples(&ranked, n, reps, seed)?),
    };
    Ok(SelectionPlan {
        model_under_test: model_under_test.to_string(),
        metric,
        strategy,
        strategy_spec: strategy.to_string(),
        exclude_same_type,
        chosen,
        similarity: ranked,
    })
}

/// Profiles of every eligible reference test set and the objective's own
/// test set on `model_under_test`.
pub fn objective_profiles(
    ws: &Workspace,
    model_under_test: &str,
    property: Property,
    config: &PropertyConfig,
    exclude_same_type: bool,
) -> Result<(ProfileSet, String)> {
    let own = ws
        .owned_testset(model_under_test)
        .ok_or_else(|| Error::InvalidWorkspace(format!("model {model_under_test} owns no test set")))?
        .id()
        .to_string();
    let mut sets: Vec<String> = eligible_references(ws, model_under_test, exclude_same_type)?
        .into_iter()
        .map(|r| r.testset)
        .collect();
    sets.push(own.clone());
    Ok((profile_testsets(ws, property, model_under_test, &sets, config)?, own))
}

/// Property of a plan against the objective test set: the combined property
/// for ordered lists, the mean over samples for random plans.
pub fn plan_property(plan: &SelectionPlan, profiles: &ProfileSet, objective: &str) -> Result<f64> {
    let samples = plan.chosen.samples();
    let mut total = 0.0;
    for s in &samples {
        let refs: Vec<&str> = s.iter().map(String::as_str).collect();
        total += profiles.overlap(&refs, objective)?;
    }
    Ok(total / samples.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    #[serde(rename = "mut")]
    pub model_under_test: String,
    pub metric: Metric,
    pub property: Property,
    pub beat_fraction_top1: f64,
    pub beat_fractions_top5: Vec<f64>,
    pub beat_fraction_top5_mean: f64,
    pub property_value_top1: f64,
    pub property_value_top5_mean: f64,
    /// Test sets in similarity order, as used for the beat fractions.
    pub chosen: Vec<String>,
    /// Property of every eligible test set on the model under test.
    pub property_values: BTreeMap<String, f64>,
}

/// Beat fractions of the `k` most similar references: for each, the share
/// of the other eligible test sets with strictly greater property value.
pub fn top_k_eval(
    engine: &SimilarityEngine<'_>,
    model_under_test: &str,
    metric: Metric,
    property: Property,
    config: &PropertyConfig,
    k: usize,
    exclude_same_type: bool,
) -> Result<EvalMetrics> {
    let ws = engine.workspace();
    let ranked = rank_references(engine, model_under_test, metric, exclude_same_type)?;
    if ranked.len() < 2 {
        return Err(Error::TooFewModels {
            objective: model_under_test.to_string(),
            available: ranked.len(),
            needed: 2,
        });
    }
    let (profiles, own) = objective_profiles(ws, model_under_test, property, config, exclude_same_type)?;
    let values: BTreeMap<String, f64> = ranked
        .iter()
        .map(|r| Ok((r.testset.clone(), profiles.overlap(&[r.testset.as_str()], &own)?)))
        .collect::<Result<_>>()?;
    let others = (ranked.len() - 1) as f64;
    let mut fractions = Vec::new();
    let mut chosen_values = Vec::new();
    for r in ranked.iter().take(k.max(1)) {
        let v = values[&r.testset];
        let beaten_by = values.iter().filter(|(t, &w)| *t != &r.testset && w > v).count();
        fractions.push(beaten_by as f64 / others);
        chosen_values.push(v);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(EvalMetrics {
        model_under_test: model_under_test.to_string(),
        metric,
        property,
        beat_fraction_top1: fractions[0],
        beat_fraction_top5_mean: mean(&fractions),
        property_value_top1: chosen_values[0],
        property_value_top5_mean: mean(&chosen_values),
        beat_fractions_top5: fractions,
        chosen: ranked.iter().take(k.max(1)).map(|r| r.testset.clone()).collect(),
        property_values: values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(model: &str, ty: &str, value: f64, rank: usize) -> RankedReference {
        RankedReference {
            model: model.into(),
            model_type: ty.into(),
            testset: format!("T_{model}"),
            value,
            rank,
        }
    }

    #[test]
    fn strategy_round_trip() {
        for s in ["top1", "topn:3", "obf:4", "ebf:2", "random:2:30:7"] {
            assert_eq!(s.parse::<Strategy>().unwrap().to_string(), s);
        }
        assert_eq!(
            "random:4".parse::<Strategy>().unwrap(),
            Strategy::Random {
                n: 4,
                reps: 30,
                seed: 0
            }
        );
        for bad in ["", "top2", "topn", "topn:0", "ebf:x", "random:1:2:3:4", "obf:3:1"] {
            assert!(bad.parse::<Strategy>().is_err(), "{bad}");
        }
    }

    #[test]
    fn ebf_picks_best_seed_per_type() {
        let ranked = vec![r("a", "x", 0.9, 1), r("b", "x", 0.8, 2), r("c", "y", 0.5, 3)];
        assert_eq!(each_best_first(&ranked, 2).unwrap(), vec!["T_a", "T_c"]);
        assert!(matches!(
            each_best_first(&ranked, 3),
            Err(Error::NotEnoughTypes {
                requested: 3,
                available: 2
            })
        ));
    }

    #[test]
    fn random_is_seeded() {
        let ranked: Vec<_> = (0..6).map(|i| r(&format!("m{i}"), "x", 0.0, i + 1)).collect();
        let a = random_samples(&ranked, 2, 3, 7).unwrap();
        let b = random_samples(&ranked, 2, 3, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        for s in &a {
            assert_eq!(s.len(), 2);
            assert_ne!(s[0], s[1]);
        }
        assert!(random_samples(&ranked, 7, 1, 0).is_err());
    }
}
