//! Type-level rank heatmaps, fault-type dendrograms and the efficiency
//! index.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{self, Orientation};
use crate::workspace::Workspace;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyInput {
    pub coverage: f64,
    pub gist_offline_seconds: f64,
    pub gist_online_seconds_per_model: f64,
    pub generation_seconds_per_model: Vec<f64>,
    pub n_models: usize,
}

impl EfficiencyInput {
    /// Tool time over generation time.
    pub fn time_ratio(&self) -> Result<f64> {
        if !(0.0..=1.0).contains(&self.coverage) {
            return Err(Error::OutOfRange {
                what: "coverage",
                value: self.coverage,
            });
        }
        let positive = |what: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::OutOfRange { what, value: v })
            }
        };
        positive("gist_offline_seconds", self.gist_offline_seconds)?;
        positive("gist_online_seconds_per_model", self.gist_online_seconds_per_model)?;
        if self.generation_seconds_per_model.is_empty() {
            return Err(Error::InvalidConfig("no generation times given".into()));
        }
        for &g in &self.generation_seconds_per_model {
            positive("generation_seconds_per_model", g)?;
        }
        let generation: f64 = self.generation_seconds_per_model.iter().sum();
        Ok((self.gist_offline_seconds + self.n_models as f64 * self.gist_online_seconds_per_model) / generation)
    }
}

/// `r = coverage / t`; above 1 means transfer beats regenerating.
pub fn efficiency_index(input: &EfficiencyInput) -> Result<f64> {
    Ok(input.coverage / input.time_ratio()?)
}

/// Mean ranks per (objective type, reference type); 1 = best in the row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub types: Vec<String>,
    /// Mean value over seeds, `None` where no pair exists.
    pub means: Vec<Vec<Option<f64>>>,
    pub ranks: Vec<Vec<Option<f64>>>,
    pub orientation: Orientation,
}

/// A value for the ordered pair (objective model, reference model).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairValue {
    pub objective: String,
    pub reference: String,
    pub value: f64,
}

pub fn rank_heatmap(ws: &Workspace, values: &[PairValue], orientation: Orientation) -> Result<Heatmap> {
    let type_of = |id: &str| ws.model(id).map(|m| m.model_type().to_string());
    let mut types: Vec<String> = ws.models().iter().map(|m| m.model_type().to_string()).collect();
    types.sort();
    types.dedup();
    if types.len() < 2 {
        return Err(Error::NotEnoughTypes {
            requested: 2,
            available: types.len(),
        });
    }
    let index: BTreeMap<&str, usize> = types.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let t = types.len();
    let mut sums = vec![vec![0.0; t]; t];
    let mut counts = vec![vec![0usize; t]; t];
    for v in values {
        let (a, b) = (type_of(&v.objective)?, type_of(&v.reference)?);
        let (i, j) = (index[a.as_str()], index[b.as_str()]);
        sums[i][j] += v.value;
        counts[i][j] += 1;
    }
    let means: Vec<Vec<Option<f64>>> = (0..t)
        .map(|i| {
            (0..t)
                .map(|j| (counts[i][j] > 0).then(|| sums[i][j] / counts[i][j] as f64))
                .collect()
        })
        .collect();
    let ranks = means
        .iter()
        .map(|row| {
            let present: Vec<usize> = (0..t).filter(|&j| row[j].is_some()).collect();
            let vals: Vec<f64> = present.iter().map(|&j| row[j].unwrap()).collect();
            let r = stats::rank_vector(&vals, orientation);
            let mut out = vec![None; t];
            for (k, &j) in present.iter().enumerate() {
                out[j] = Some(r[k]);
            }
            out
        })
        .collect();
    Ok(Heatmap {
        types,
        means,
        ranks,
        orientation,
    })
}

impl Heatmap {
    /// T×T rank matrix with a leading column of objective types; missing
    /// cells are empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let ser = |e: csv::Error| Error::Serialization(e.to_string());
        let mut header = vec!["objective_type".to_string()];
        header.extend(self.types.iter().cloned());
        w.write_record(&header).map_err(ser)?;
        for (t, row) in self.types.iter().zip(&self.ranks) {
            let mut rec = vec![t.clone()];
            rec.extend(row.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
            w.write_record(&rec).map_err(ser)?;
        }
        w.flush().map_err(|e| Error::Serialization(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    /// Node ids: leaves are `0..n`, merge `i` creates node `n + i`.
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub leaves: Vec<String>,
    pub merges: Vec<Merge>,
}

/// Average-linkage agglomerative clustering with Euclidean distance. At
/// equal distance the pair with the smallest node ids merges first.
pub fn dendrogram(labels: &[String], vectors: &[Vec<f64>]) -> Result<Dendrogram> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::TooFewSamples { got: n, needed: 2 });
    }
    if labels.len() != n {
        return Err(Error::LengthMismatch {
            left: labels.len(),
            right: n,
        });
    }
    let dim = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: v.len(),
        });
    }
    let leaf_dist: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    vectors[i]
                        .iter()
                        .zip(&vectors[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect()
        })
        .collect();
    // active clusters: (node id, members)
    let mut active: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut merges = Vec::with_capacity(n - 1);
    while active.len() > 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..active.len() {
            for b in a + 1..active.len() {
                let (ma, mb) = (&active[a].1, &active[b].1);
                let total: f64 = ma.iter().flat_map(|&i| mb.iter().map(move |&j| (i, j))).map(|(i, j)| leaf_dist[i][j]).sum();
                let d = total / (ma.len() * mb.len()) as f64;
                let better = match best {
                    None => true,
                    Some((bd, _, _)) => d < bd,
                };
                if better {
                    best = Some((d, a, b));
                }
            }
        }
        let (height, a, b) = best.unwrap();
        let (id_b, members_b) = active.remove(b);
        let (id_a, mut members_a) = active.remove(a);
        members_a.extend(members_b);
        merges.push(Merge {
            left: id_a.min(id_b),
            right: id_a.max(id_b),
            height,
            size: members_a.len(),
        });
        active.push((n + merges.len() - 1, members_a));
        active.sort_by_key(|c| c.0);
    }
    Ok(Dendrogram {
        leaves: labels.to_vec(),
        merges,
    })
}
