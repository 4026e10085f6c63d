//! Representational similarities between two activation matrices over the
//! same inputs: projection-weighted CCA, linear CKA and orthogonal
//! Procrustes.

use faer::Mat;

use crate::error::{Error, Result};
use crate::linalg;

/// Ridge added to covariance diagonals before whitening.
pub const CCA_RIDGE: f64 = 1e-10;

/// Covariance eigen-directions with `λ / λ_max` below this are treated as
/// numerically absent.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Activations with centered columns and unit Frobenius norm.
#[derive(Clone, Debug)]
pub struct PreprocessedFeatures {
    matrix: Mat<f64>,
    source_model: String,
}

impl PreprocessedFeatures {
    pub fn matrix(&self) -> &Mat<f64> {
        &self.matrix
    }

    pub fn source_model(&self) -> &str {
        &self.source_model
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Centers every column, then divides the whole matrix by its Frobenius
/// norm.
pub fn preprocess_features(raw: &Mat<f64>, source_model: &str) -> Result<PreprocessedFeatures> {
    if raw.nrows() < 2 || raw.ncols() < 1 {
        return Err(Error::TooFewRows {
            rows: raw.nrows(),
            needed: 1,
        });
    }
    let mut m = raw.clone();
    linalg::center_columns(&mut m);
    let norm = linalg::frobenius_sq(m.as_ref()).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::DegenerateMatrix(format!(
            "features of {source_model} are constant after centering"
        )));
    }
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            m[(i, j)] /= norm;
        }
    }
    Ok(PreprocessedFeatures {
        matrix: m,
        source_model: source_model.to_string(),
    })
}

/// Per-matrix quantities reused across every pairing of that matrix.
#[derive(Clone, Debug)]
pub(crate) struct Spectrum {
    /// Kept eigenvectors of `mᵀm` (d × r).
    directions: Mat<f64>,
    /// `(λ + ε)^{-1/2}` for each kept direction.
    whitening: Vec<f64>,
    /// Inner products of the whitened basis with the original columns,
    /// `diag(λ / sqrt(λ + ε)) Qᵀ` (r × d).
    column_projection: Mat<f64>,
    /// `‖mᵀm‖_F`.
    pub gram_norm: f64,
    /// `‖m‖²_F`.
    pub energy: f64,
}

impl Spectrum {
    pub(crate) fn new(m: &Mat<f64>) -> Result<Self> {
        let gram = linalg::cross_gram(m.as_ref(), m.as_ref());
        let (values, vectors) = linalg::symmetric_eigen(gram.as_ref())?;
        let lambda_max = values.first().copied().unwrap_or(0.0).max(0.0);
        if lambda_max <= 0.0 {
            return Err(Error::RankDeficient("matrix has no variance".into()));
        }
        let kept: Vec<usize> = (0..values.len())
            .filter(|&i| values[i] > lambda_max * RANK_TOLERANCE)
            .collect();
        let d = m.ncols();
        let directions = Mat::from_fn(d, kept.len(), |i, k| vectors[(i, kept[k])]);
        let whitening: Vec<f64> = kept.iter().map(|&i| (values[i] + CCA_RIDGE).powf(-0.5)).collect();
        let column_projection = Mat::from_fn(kept.len(), d, |k, j| {
            let l = values[kept[k]];
            l / (l + CCA_RIDGE).sqrt() * vectors[(j, kept[k])]
        });
        let gram_norm = values.iter().map(|l| l * l).sum::<f64>().sqrt();
        let energy = linalg::frobenius_sq(m.as_ref());
        Ok(Spectrum {
            directions,
            whitening,
            column_projection,
            gram_norm,
            energy,
        })
    }

    pub(crate) fn rank(&self) -> usize {
        self.whitening.len()
    }
}

/// Canonical correlations with projection weights for both directions.
#[derive(Clone, Debug)]
pub struct CcaOutcome {
    pub correlations: Vec<f64>,
    /// Weights computed against the first matrix's columns.
    pub weights_first: Vec<f64>,
    /// Weights computed against the second matrix's columns.
    pub weights_second: Vec<f64>,
}

impl CcaOutcome {
    fn weighted(&self, weights: &[f64]) -> f64 {
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return 0.0;
        }
        weights
            .iter()
            .zip(&self.correlations)
            .map(|(a, r)| a / total * r)
            .sum()
    }

    /// PWCCA with weights from the first matrix.
    pub fn pwcca_first(&self) -> f64 {
        self.weighted(&self.weights_first)
    }

    /// PWCCA with weights from the second matrix.
    pub fn pwcca_second(&self) -> f64 {
        self.weighted(&self.weights_second)
    }

    /// Mean of both directions.
    pub fn pwcca_symmetric(&self) -> f64 {
        0.5 * (self.pwcca_first() + self.pwcca_second())
    }
}

/// CCA from the two spectra and the cross product `m1ᵀm2`.
pub(crate) fn cca(s1: &Spectrum, s2: &Spectrum, cross: &Mat<f64>) -> Result<CcaOutcome> {
    if s1.rank() == 0 || s2.rank() == 0 {
        return Err(Error::RankDeficient("no usable directions for CCA".into()));
    }
    // T = W1 Q1ᵀ (m1ᵀ m2) Q2 W2: the cross product of the two whitened bases.
    let left = linalg::cross_gram(s1.directions.as_ref(), cross.as_ref());
    let mut t = linalg::mul(left.as_ref(), s2.directions.as_ref());
    for i in 0..t.nrows() {
        for j in 0..t.ncols() {
            t[(i, j)] *= s1.whitening[i] * s2.whitening[j];
        }
    }
    let svd = linalg::thin_svd(t.as_ref())?;
    let k = s1.rank().min(s2.rank());
    let correlations: Vec<f64> = svd.s[..k].iter().map(|r| r.clamp(0.0, 1.0)).collect();
    let weights = |basis: &Mat<f64>, proj: &Mat<f64>| -> Vec<f64> {
        // row i of basisᵀ proj holds ⟨variate_i, column_j⟩ over j
        let inner = linalg::cross_gram(basis.as_ref(), proj.as_ref());
        (0..k)
            .map(|i| (0..inner.ncols()).map(|j| inner[(i, j)].abs()).sum())
            .collect()
    };
    Ok(CcaOutcome {
        weights_first: weights(&svd.u, &s1.column_projection),
        weights_second: weights(&svd.v, &s2.column_projection),
        correlations,
    })
}

fn check_rows(m1: &PreprocessedFeatures, m2: &PreprocessedFeatures) -> Result<()> {
    if m1.rows() != m2.rows() {
        return Err(Error::RowMismatch {
            left: m1.rows(),
            right: m2.rows(),
        });
    }
    Ok(())
}

pub fn canonical_correlations(m1: &PreprocessedFeatures, m2: &PreprocessedFeatures) -> Result<CcaOutcome> {
    check_rows(m1, m2)?;
    let s1 = Spectrum::new(&m1.matrix)?;
    let s2 = Spectrum::new(&m2.matrix)?;
    let cross = linalg::cross_gram(m1.matrix.as_ref(), m2.matrix.as_ref());
    cca(&s1, &s2, &cross)
}

/// PWCCA averaged over both weighting directions.
pub fn pwcca(m1: &PreprocessedFeatures, m2: &PreprocessedFeatures) -> Result<f64> {
    let (m1, m2) = if canonical_cmp(m1, m2).is_gt() { (m2, m1) } else { (m1, m2) };
    canonical_correlations(m1, m2).map(|c| c.pwcca_symmetric())
}

/// PWCCA weighted by the first argument only.
pub fn pwcca_directional(m1: &PreprocessedFeatures, m2: &PreprocessedFeatures) -> Result<f64> {
    canonical_correlations(m1, m2).map(|c| c.pwcca_first())
}

pub(crate) fn cka_from_parts(cross: &Mat<f64>, gram_norm1: f64, gram_norm2: f64) -> Result<f64> {
    let denom = gram_norm1 * gram_norm2;
    if denom <= 0.0 || !denom.is_finite() {
        return Err(Error::DegenerateMatrix("zero Gram matrix in CKA".into()));
    }
    Ok((1.0 - linalg::frobenius_sq(cross.as_ref()) / denom).clamp(0.0, 1.0))
}

/// Linear CKA distance, `1 − ‖m1ᵀm2‖²_F / (‖m1ᵀm1‖_F ‖m2ᵀm2‖_F)`.
pub fn cka_linear(m1: &PreprocessedFeatures, m2: &PreprocessedFeatures) -> Result<f64> {
    check_rows(m1, m2)?;
    let g1 = linalg::frobenius_sq(linalg::cross_gram(m1.matrix.as_ref(), m1.matrix.as_ref()).as_ref()).sqrt();
    let g2 = linalg::frobenius_sq(linalg::cross_gram(m2.matrix.as_ref(), m2.matrix.as_ref()).as_ref()).sqrt();
    let cross = linalg::cross_gram(m1.matrix.as_ref(), m2.matrix.as_ref());
    cka_from_parts(&cross, g1, g2)
}

pub(crate) fn ortho_from_parts(cross: &Mat<f64>, energy1: f64, energy2: f64) -> Result<f64> {
    let nuclear: f64 = linalg::singular_values(cross.as_ref())?.iter().sum();
    Ok((energy1 + energy2 - 2.0 * nuclear).max(0.0))
}

/// Fixed order on inputs, so symmetric metrics are bitwise symmetric.
fn canonical_cmp(a: &PreprocessedFeatures, b: &PreprocessedFeatures) -> std::cmp::Ordering {
    let (x, y) = (&a.matrix, &b.matrix);
    x.ncols().cmp(&y.ncols()).then_with(|| {
        (0..x.ncols())
            .flat_map(|j| (0..x.nrows()).map(move |i| (i, j)))
            .map(|(i, j)| x[(i, j)].to_bits().cmp(&y[(i, j)].to_bits()))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    })
}

/// Orthogonal Procrustes distance, `‖m1‖²_F + ‖m2‖²_F − 2‖m1ᵀm2‖_*`.
pub fn procrustes_ortho(m1: &PreprocessedFeatures, m2: &PreprocessedFeatures) -> Result<f64> {
    check_rows(m1, m2)?;
    let (m1, m2) = if canonical_cmp(m1, m2).is_gt() { (m2, m1) } else { (m1, m2) };
    let cross = linalg::cross_gram(m1.matrix.as_ref(), m2.matrix.as_ref());
    ortho_from_parts(
        &cross,
        linalg::frobenius_sq(m1.matrix.as_ref()),
        linalg::frobenius_sq(m2.matrix.as_ref()),
    )
}
