//! k-multisection coverage over fault-inducing inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Per-neuron activation ranges from the train set, split into `k` sections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    pub k: usize,
}

pub fn fit_bands(train_features: &DenseMatrix, k: usize) -> Result<BandSpec> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if train_features.rows() < 2 {
        return Err(Error::TooFewRows {
            rows: train_features.rows(),
            needed: 1,
        });
    }
    let d = train_features.cols();
    let mut low = vec![f64::INFINITY; d];
    let mut high = vec![f64::NEG_INFINITY; d];
    for i in 0..train_features.rows() {
        for (j, &v) in train_features.row(i).iter().enumerate() {
            low[j] = low[j].min(v as f64);
            high[j] = high[j].max(v as f64);
        }
    }
    Ok(BandSpec { low, high, k })
}

impl BandSpec {
    pub fn neurons(&self) -> usize {
        self.low.len()
    }

    /// Lower edge of section `i` of `neuron`; `i = k` gives the upper bound.
    pub fn boundary(&self, neuron: usize, i: usize) -> f64 {
        if i == self.k {
            return self.high[neuron];
        }
        let (lo, hi) = (self.low[neuron], self.high[neuron]);
        lo + i as f64 * (hi - lo) / self.k as f64
    }

    /// Section containing `value`: `[b_i, b_{i+1})`, with the last section
    /// closed on the right. A constant neuron has a single section holding
    /// exactly its value.
    pub fn section(&self, neuron: usize, value: f64) -> Option<usize> {
        let (lo, hi) = (self.low[neuron], self.high[neuron]);
        if !(value >= lo && value <= hi) {
            return None;
        }
        if lo == hi {
            return Some(0);
        }
        let w = (hi - lo) / self.k as f64;
        let mut i = (((value - lo) / w).floor() as usize).min(self.k - 1);
        while i > 0 && value < self.boundary(neuron, i) {
            i -= 1;
        }
        while i + 1 < self.k && value >= self.boundary(neuron, i + 1) {
            i += 1;
        }
        Some(i)
    }

    /// Number of sections a neuron can cover.
    pub fn sections_of(&self, neuron: usize) -> usize {
        if self.low[neuron] == self.high[neuron] {
            1
        } else {
            self.k
        }
    }
}

/// Covered sections per neuron, stored as one bitset per neuron.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoverageProfile {
    k: usize,
    neurons: usize,
    words: usize,
    bits: Vec<u64>,
}

impl CoverageProfile {
    pub fn empty(neurons: usize, k: usize) -> Self {
        let words = k.div_ceil(64).max(1);
        CoverageProfile {
            k,
            neurons,
            words,
            bits: vec![0; neurons * words],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn insert(&mut self, neuron: usize, section: usize) {
        debug_assert!(section < self.k);
        self.bits[neuron * self.words + section / 64] |= 1 << (section % 64);
    }

    pub fn contains(&self, neuron: usize, section: usize) -> bool {
        section < self.k && self.bits[neuron * self.words + section / 64] & (1 << (section % 64)) != 0
    }

    pub fn sections(&self, neuron: usize) -> Vec<usize> {
        (0..self.k).filter(|&s| self.contains(neuron, s)).collect()
    }

    /// `Σ_n |S_n|`.
    pub fn total(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&w| w == 0)
    }

    /// `Σ_n |S_n ∩ T_n|`.
    pub fn intersection_total(&self, other: &CoverageProfile) -> Result<usize> {
        self.check_compatible(other)?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum())
    }

    fn check_compatible(&self, other: &CoverageProfile) -> Result<()> {
        if (self.k, self.neurons) != (other.k, other.neurons) {
            return Err(Error::MixedRuns(
                format!("{} neurons, k = {}", self.neurons, self.k),
                format!("{} neurons, k = {}", other.neurons, other.k),
            ));
        }
        Ok(())
    }

    pub fn union_with(&mut self, other: &CoverageProfile) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
        Ok(())
    }

    pub fn from_sections(k: usize, sections: &[Vec<usize>]) -> Result<Self> {
        let mut p = CoverageProfile::empty(sections.len(), k);
        for (n, s) in sections.iter().enumerate() {
            for &i in s {
                if i >= k {
                    return Err(Error::OutOfRange {
                        what: "section index",
                        value: i as f64,
                    });
                }
                p.insert(n, i);
            }
        }
        Ok(p)
    }

    pub fn to_sections(&self) -> Vec<Vec<usize>> {
        (0..self.neurons).map(|n| self.sections(n)).collect()
    }
}

/// Sections hit by the rows selected in `mask`.
pub fn coverage_profile(eval_features: &DenseMatrix, bands: &BandSpec, mask: &[bool]) -> Result<CoverageProfile> {
    if eval_features.rows() != mask.len() || eval_features.cols() != bands.neurons() {
        return Err(Error::ShapeMismatch {
            left: "eval features".into(),
            left_shape: eval_features.shape(),
            right: "fault mask / bands".into(),
            right_shape: (mask.len(), bands.neurons()),
        });
    }
    let mut profile = CoverageProfile::empty(bands.neurons(), bands.k);
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        for (n, &v) in eval_features.row(i).iter().enumerate() {
            if let Some(s) = bands.section(n, v as f64) {
                profile.insert(n, s);
            }
        }
    }
    Ok(profile)
}

/// `Σ_n |S_R ∩ S_O| / Σ_n |S_O|`.
pub fn kmnc_overlap(reference: &CoverageProfile, objective: &CoverageProfile) -> Result<f64> {
    let inter = reference.intersection_total(objective)?;
    let denom = objective.total();
    if denom == 0 {
        return Err(Error::EmptyObjective);
    }
    Ok(inter as f64 / denom as f64)
}

pub fn combine_coverage<'p>(profiles: impl IntoIterator<Item = &'p CoverageProfile>) -> Result<Option<CoverageProfile>> {
    let mut out: Option<CoverageProfile> = None;
    for p in profiles {
        match out.as_mut() {
            None => out = Some(p.clone()),
            Some(acc) => acc.union_with(p)?,
        }
    }
    Ok(out)
}
