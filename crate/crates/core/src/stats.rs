//! Rank statistics: Kendall's tau-b with significance, quartiles, ranks.

use std::cmp::Ordering;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Whether larger values mean "more similar" (or more covering) or "further
/// apart".
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    SimilarityUp,
    DistanceUp,
}

impl Orientation {
    /// Maps a raw value onto the "higher is more similar" axis.
    pub fn normalize(self, value: f64) -> f64 {
        match self {
            Orientation::SimilarityUp => value,
            Orientation::DistanceUp => -value,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Orientation::SimilarityUp => Orientation::DistanceUp,
            Orientation::DistanceUp => Orientation::SimilarityUp,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Orientation::SimilarityUp => "similarity_up",
            Orientation::DistanceUp => "distance_up",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    Exact,
    NormalApprox,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationStat {
    pub tau: f64,
    pub p_value: f64,
    pub n: usize,
    pub method: PValueMethod,
}

/// Largest sample size for which the exact null distribution is used.
pub const EXACT_MAX_N: usize = 9;

/// Pair counts behind tau-b. `s` is concordant minus discordant pairs;
/// `x_ties` / `y_ties` are the pairs tied in x / y (including joint ties).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairCounts {
    pub n_pairs: i64,
    pub s: i64,
    pub x_ties: i64,
    pub y_ties: i64,
}

impl PairCounts {
    pub fn tau_b(&self) -> Option<f64> {
        let denom = (self.n_pairs - self.x_ties) as f64 * (self.n_pairs - self.y_ties) as f64;
        (denom > 0.0).then(|| self.s as f64 / denom.sqrt())
    }
}

fn check_finite(v: &[f64]) -> Result<()> {
    match v.iter().find(|x| !x.is_finite()) {
        Some(&x) => Err(Error::OutOfRange {
            what: "sample value",
            value: x,
        }),
        None => Ok(()),
    }
}

/// Tied-pair count `t(t-1)/2` summed over runs of equal values in `sorted`.
fn tied_pairs<T: PartialEq>(sorted: &[T]) -> i64 {
    let mut total = 0i64;
    let mut run = 1i64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Counts inversions of `v` while sorting it (merge sort).
fn sort_count_inversions(v: &mut [f64], buf: &mut Vec<f64>) -> i64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut inv = sort_count_inversions(&mut v[..mid], buf) + sort_count_inversions(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            inv += (mid - i) as i64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    inv
}

/// Pair counts in O(n log n) (Knight's algorithm).
pub fn pair_counts(x: &[f64], y: &[f64]) -> PairCounts {
    let n = x.len() as i64;
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));
    let xs: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
    let xy: Vec<(f64, f64)> = idx.iter().map(|&i| (x[i], y[i])).collect();
    let x_ties = tied_pairs(&xs);
    let joint_ties = tied_pairs(&xy);
    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let swaps = sort_count_inversions(&mut ys, &mut Vec::with_capacity(x.len()));
    let y_ties = tied_pairs(&ys);
    let n_pairs = n * (n - 1) / 2;
    let s = n_pairs - x_ties - y_ties + joint_ties - 2 * swaps;
    PairCounts {
        n_pairs,
        s,
        x_ties,
        y_ties,
    }
}

/// Number of permutations of `n` items by inversion count (Mahonian numbers).
/// Exactly the distribution obtained by enumerating all `n!` rank orders.
fn inversion_distribution(n: usize) -> &'static [u64] {
    static TABLES: OnceLock<Vec<Vec<u64>>> = OnceLock::new();
    let tables = TABLES.get_or_init(|| {
        let mut tables = vec![vec![1u64]];
        for m in 1..=EXACT_MAX_N {
            let prev = &tables[m - 1];
            let max = m * (m - 1) / 2;
            let mut next = vec![0u64; max + 1];
            for (k, &c) in prev.iter().enumerate() {
                for j in 0..m {
                    next[k + j] += c;
                }
            }
            tables.push(next);
        }
        tables
    });
    &tables[n]
}

fn exact_p_value(n: usize, s: i64) -> f64 {
    let dist = inversion_distribution(n);
    let n_pairs = (n * (n - 1) / 2) as i64;
    let total: u64 = dist.iter().sum();
    let extreme: u64 = dist
        .iter()
        .enumerate()
        .filter(|(inv, _)| (n_pairs - 2 * *inv as i64).abs() >= s.abs())
        .map(|(_, &c)| c)
        .sum();
    (extreme as f64 / total as f64).min(1.0)
}

fn run_lengths(sorted: &[f64]) -> Vec<i64> {
    let mut out = Vec::new();
    let mut run = 1i64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            out.push(run);
            run = 1;
        }
    }
    out.push(run);
    out
}

/// Variance of S under independence with tie corrections.
pub fn s_variance(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let tx = run_lengths(&xs);
    let ty = run_lengths(&ys);
    let f = |t: &[i64], g: fn(f64) -> f64| t.iter().map(|&v| g(v as f64)).sum::<f64>();
    let v0 = n * (n - 1.0) * (2.0 * n + 5.0);
    let vt = f(&tx, |t| t * (t - 1.0) * (2.0 * t + 5.0));
    let vu = f(&ty, |t| t * (t - 1.0) * (2.0 * t + 5.0));
    let v1 = f(&tx, |t| t * (t - 1.0)) * f(&ty, |t| t * (t - 1.0));
    let v2 = f(&tx, |t| t * (t - 1.0) * (t - 2.0)) * f(&ty, |t| t * (t - 1.0) * (t - 2.0));
    (v0 - vt - vu) / 18.0 + v1 / (2.0 * n * (n - 1.0)) + v2 / (9.0 * n * (n - 1.0) * (n - 2.0))
}

/// Kendall's tau-b with a two-sided p-value.
///
/// The p-value is exact for tie-free samples of at most [`EXACT_MAX_N`]
/// points, otherwise a normal approximation with tie-corrected variance and
/// a continuity correction of 1 on S.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<CorrelationStat> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(Error::TooFewSamples {
            got: x.len(),
            needed: 3,
        });
    }
    check_finite(x)?;
    check_finite(y)?;
    let counts = pair_counts(x, y);
    let tau = counts.tau_b().ok_or(Error::AllTied)?.clamp(-1.0, 1.0);
    let n = x.len();
    let (p_value, method) = if n <= EXACT_MAX_N && counts.x_ties == 0 && counts.y_ties == 0 {
        (exact_p_value(n, counts.s), PValueMethod::Exact)
    } else {
        let var = s_variance(x, y);
        let z = ((counts.s.abs() - 1).max(0) as f64) / var.sqrt();
        ((erfc(z / std::f64::consts::SQRT_2)).min(1.0), PValueMethod::NormalApprox)
    };
    Ok(CorrelationStat {
        tau,
        p_value,
        n,
        method,
    })
}

/// Quartiles by linear interpolation between order statistics.
pub fn quartiles(values: &[f64]) -> Result<(f64, f64, f64)> {
    if values.is_empty() {
        return Err(Error::TooFewSamples { got: 0, needed: 1 });
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok((quantile_sorted(&v, 0.25), quantile_sorted(&v, 0.5), quantile_sorted(&v, 0.75)))
}

pub fn median(values: &[f64]) -> Result<f64> {
    quartiles(values).map(|q| q.1)
}

fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Ranks with 1 = best: the largest value under `SimilarityUp`, the smallest
/// under `DistanceUp`. Tied values share their mean rank.
pub fn rank_vector(values: &[f64], orientation: Orientation) -> Vec<f64> {
    let key = |i: usize| orientation.normalize(values[i]);
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| key(b).partial_cmp(&key(a)).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && key(idx[end]) == key(idx[start]) {
            end += 1;
        }
        let mean = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = mean;
        }
        start = end;
    }
    ranks
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Quadratic concordant/discordant counter.
    fn brute_counts(x: &[f64], y: &[f64]) -> PairCounts {
        let n = x.len();
        let (mut s, mut xt, mut yt) = (0i64, 0i64, 0i64);
        for i in 0..n {
            for j in i + 1..n {
                let dx = x[i] - x[j];
                let dy = y[i] - y[j];
                if dx == 0.0 {
                    xt += 1;
                }
                if dy == 0.0 {
                    yt += 1;
                }
                if dx * dy > 0.0 {
                    s += 1;
                } else if dx * dy < 0.0 {
                    s -= 1;
                }
            }
        }
        PairCounts {
            n_pairs: (n * (n - 1) / 2) as i64,
            s,
            x_ties: xt,
            y_ties: yt,
        }
    }

    fn all_permutations(n: usize) -> Vec<Vec<usize>> {
        fn rec(prefix: &mut Vec<usize>, left: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if left.is_empty() {
                out.push(prefix.clone());
                return;
            }
            for i in 0..left.len() {
                let v = left.remove(i);
                prefix.push(v);
                rec(prefix, left, out);
                prefix.pop();
                left.insert(i, v);
            }
        }
        let mut out = Vec::new();
        rec(&mut Vec::new(), &mut (0..n).collect(), &mut out);
        out
    }

    #[test]
    fn tau_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau_b(&x, &x).unwrap().tau, 1.0);
        assert_eq!(kendall_tau_b(&x, &[4.0, 3.0, 2.0, 1.0]).unwrap().tau, -1.0);
        let st = kendall_tau_b(&x, &[2.0, 1.0, 4.0, 3.0]).unwrap();
        assert!((st.tau - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(st.method, PValueMethod::Exact);
    }

    #[test]
    fn tau_errors() {
        assert!(matches!(kendall_tau_b(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::TooFewSamples { .. })));
        assert!(matches!(kendall_tau_b(&[1.0, 2.0, 3.0], &[5.0; 3]), Err(Error::AllTied)));
        assert!(matches!(kendall_tau_b(&[1.0; 3], &[1.0, 2.0, 3.0]), Err(Error::AllTied)));
    }

    #[test]
    fn exact_distribution_matches_enumeration() {
        for n in 3..=7 {
            let perms = all_permutations(n);
            let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
            // every attainable |S| threshold
            for s_obs in 0..=(n * (n - 1) / 2) as i64 {
                let extreme = perms
                    .iter()
                    .filter(|p| {
                        let y: Vec<f64> = p.iter().map(|&v| v as f64).collect();
                        brute_counts(&x, &y).s.abs() >= s_obs
                    })
                    .count();
                let expect = extreme as f64 / perms.len() as f64;
                assert!((exact_p_value(n, s_obs) - expect).abs() < 1e-12, "n={n} s={s_obs}");
            }
        }
    }

    #[test]
    fn perfect_order_n9_exact_p() {
        let x: Vec<f64> = (0..9).map(f64::from).collect();
        let st = kendall_tau_b(&x, &x).unwrap();
        assert_eq!(st.method, PValueMethod::Exact);
        assert!((st.p_value - 2.0 / 362_880.0).abs() < 1e-15);
    }

    #[test]
    fn ties_switch_to_normal_approx() {
        let st = kendall_tau_b(&[1.0, 2.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(st.method, PValueMethod::NormalApprox);
        assert!(st.p_value > 0.0 && st.p_value <= 1.0);
    }

    #[test]
    fn knight_counts_match_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.random_range(3..=12);
            // small integer alphabet forces plenty of ties
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64).collect();
            assert_eq!(pair_counts(&x, &y), brute_counts(&x, &y));
        }
    }

    #[test]
    fn quartile_examples() {
        assert_eq!(quartiles(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(), (2.0, 3.0, 4.0));
        assert_eq!(quartiles(&[7.5]).unwrap(), (7.5, 7.5, 7.5));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
        let (q1, m, q3) = quartiles(&v).unwrap();
        assert!(q1 < m && m < q3);
        assert!(quartiles(&[]).is_err());
    }

    #[test]
    fn rank_examples() {
        let v = [0.9, 0.1, 0.5];
        assert_eq!(rank_vector(&v, Orientation::SimilarityUp), vec![1.0, 3.0, 2.0]);
        assert_eq!(rank_vector(&v, Orientation::DistanceUp), vec![3.0, 1.0, 2.0]);
        assert_eq!(rank_vector(&[0.5, 0.5], Orientation::SimilarityUp), vec![1.5, 1.5]);
    }

    proptest! {
        #[test]
        fn tau_antisymmetric(x in prop::collection::hash_set(-1000i32..1000, 3..12),
                             y in prop::collection::hash_set(-1000i32..1000, 12)) {
            let x: Vec<f64> = x.into_iter().map(f64::from).collect();
            let y: Vec<f64> = y.into_iter().take(x.len()).map(f64::from).collect();
            prop_assume!(y.len() == x.len());
            let neg: Vec<f64> = y.iter().map(|v| -v).collect();
            let a = kendall_tau_b(&x, &y).unwrap();
            let b = kendall_tau_b(&x, &neg).unwrap();
            prop_assert_eq!(a.tau, -b.tau);
            prop_assert!((a.p_value - b.p_value).abs() < 1e-12);
        }

        #[test]
        fn flipped_orientation_reverses_ranks(v in prop::collection::vec(-10f64..10.0, 1..20)) {
            let up = rank_vector(&v, Orientation::SimilarityUp);
            let down = rank_vector(&v, Orientation::SimilarityUp.flipped());
            let n = v.len() as f64;
            for (a, b) in up.iter().zip(&down) {
                prop_assert!((a + b - (n + 1.0)).abs() < 1e-12);
            }
        }
    }
}
