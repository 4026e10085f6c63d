#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::Path;

use gist_core::matrix::DenseMatrix;
use gist_core::properties::CoverageProfile;
use gist_core::synth::{generate_benchmark, SynthConfig};
use gist_core::workspace::{load_workspace, Workspace};

pub fn synth_workspace(cfg: &SynthConfig, dir: &Path) -> Workspace {
    generate_benchmark(cfg, dir).unwrap();
    load_workspace(dir).unwrap()
}

/// Covered `(neuron, section)` pairs by a direct scan of every masked row
/// against explicitly computed boundaries.
pub fn oracle_sections(train: &DenseMatrix, eval: &DenseMatrix, mask: &[bool], k: usize) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for n in 0..train.cols() {
        let col: Vec<f64> = (0..train.rows()).map(|i| train.get(i, n) as f64).collect();
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for i in (0..eval.rows()).filter(|&i| mask[i]) {
            let v = eval.get(i, n) as f64;
            if v < lo || v > hi {
                continue;
            }
            if lo == hi {
                out.insert((n, 0));
                continue;
            }
            for s in 0..k {
                let b0 = lo + s as f64 * (hi - lo) / k as f64;
                let b1 = if s + 1 == k { hi } else { lo + (s + 1) as f64 * (hi - lo) / k as f64 };
                if v >= b0 && (v < b1 || (s + 1 == k && v <= b1)) {
                    out.insert((n, s));
                    break;
                }
            }
        }
    }
    out
}

pub fn profile_set(p: &CoverageProfile) -> BTreeSet<(usize, usize)> {
    p.to_sections()
        .iter()
        .enumerate()
        .flat_map(|(n, s)| s.iter().map(move |&x| (n, x)))
        .collect()
}
