//! Synthetic workspaces with planted type, seed, similarity and property
//! structure.
//!
//! Every model sees the same latent train inputs. A model's features are a
//! class block (scaled one-hot of the class) followed by content neurons
//! `(cos a·z1 + sin a·z2)·M`, where the angle `a` is set by the model type
//! plus a small seed offset, and `M` is an invertible type-level mixing.
//! Canonical correlations between two models' content are `cos(Δa)`
//! whatever their mixings, so PWCCA tracks angular proximity while the
//! mixing scrambles CKA and Procrustes distances.
//!
//! The test set generated on a model holds fault-inducing blobs along a
//! latent line `z = u·v`, with `u` drawn from a window centred on that
//! model's angle. On any model, overlap of fault-inducing coverage between
//! two test sets shrinks as their windows move apart.

use std::collections::BTreeMap;
use std::path::Path;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{write_matrix, MatrixFile};
use crate::workspace::{EvalEntry, Manifest, ModelEntry, Role, TestSetEntry};

pub const PLANT_FILE: &str = "plant.json";

/// Distance between neighbouring type angles at full strength.
const TYPE_SPACING: f64 = 0.45;
/// Spread of the per-type log-scales in the mixing.
const MIX_SCALE: f64 = 1.0;
/// Half-width of a test set's fault window in latent `u`.
const FAULT_WINDOW: f64 = 0.75;
/// Spacing of blob centres in a fault window.
const BLOB_SPACING: f64 = 0.125;
/// Per-input jitter around a blob centre.
const BLOB_JITTER: f64 = 0.01;
/// Scale of the fault-line directions.
const LINE_GAIN: f64 = 2.0;
/// One train input in `LINE_EVERY` lies on the fault line.
const LINE_EVERY: usize = 4;
/// How far the train line reaches past the outermost fault window.
const LINE_MARGIN: f64 = 0.375;
/// Class-block activation for the true class.
const CLASS_GAIN: f64 = 3.0;
/// Share of train labels that disagree with the latent class.
const LABEL_NOISE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_types: usize,
    pub seeds_per_type: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub n_train: usize,
    pub n_test_per_set: usize,
    pub type_basis_strength: f64,
    pub seed_noise: f64,
    pub fault_rate: f64,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_types: 4,
            seeds_per_type: 3,
            feature_dim: 32,
            num_classes: 4,
            n_train: 800,
            n_test_per_set: 400,
            type_basis_strength: 1.0,
            seed_noise: 0.1,
            fault_rate: 0.5,
            rng_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_types < 2 {
            return bad(format!("n_types must be at least 2, got {}", self.n_types));
        }
        if self.seeds_per_type < 2 {
            return bad(format!("seeds_per_type must be at least 2, got {}", self.seeds_per_type));
        }
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2".into());
        }
        if self.feature_dim < self.num_classes + 2 {
            return bad(format!(
                "feature_dim must leave at least 2 content neurons after {} class neurons",
                self.num_classes
            ));
        }
        if !(0.0..=1.0).contains(&self.type_basis_strength) {
            return bad("type_basis_strength must lie in [0, 1]".into());
        }
        if !(self.seed_noise >= 0.0 && self.seed_noise.is_finite()) {
            return bad("seed_noise must be non-negative".into());
        }
        if !(self.fault_rate > 0.0 && self.fault_rate < 1.0) {
            return bad("fault_rate must lie in (0, 1)".into());
        }
        if (self.fault_rate * self.n_test_per_set as f64) < 5.0 {
            return bad("fault_rate × n_test_per_set must give at least 5 faults per test set".into());
        }
        if self.n_train <= self.feature_dim {
            return bad("n_train must exceed feature_dim".into());
        }
        Ok(())
    }

    fn content_dim(&self) -> usize {
        self.feature_dim - self.num_classes
    }

    fn type_position(&self, t: usize) -> f64 {
        self.type_basis_strength * (t as f64 - (self.n_types as f64 - 1.0) / 2.0) * TYPE_SPACING
    }

    fn n_faults(&self) -> usize {
        (self.fault_rate * self.n_test_per_set as f64).round() as usize
    }
}

pub fn model_id(t: usize, s: usize) -> String {
    format!("type{t}_seed{s}")
}

pub fn type_id(t: usize) -> String {
    format!("type{t}")
}

pub fn testset_id(t: usize, s: usize) -> String {
    format!("gen_{}", model_id(t, s))
}

/// Ground truth of a synthetic workspace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plant {
    pub types: Vec<String>,
    /// Angular distance between type positions.
    pub type_proximity: Vec<Vec<f64>>,
    /// Latent angle of every model.
    pub model_angles: BTreeMap<String, f64>,
    /// Types whose position is nearest to some fault blob of each test set.
    pub fault_direction_ids: BTreeMap<String, Vec<usize>>,
}

fn standard(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat<f64> {
    let mut m = Mat::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            m[(i, j)] = standard(rng);
        }
    }
    m
}

/// Random orthogonal matrix from the QR factor of a Gaussian matrix, with
/// column signs fixed by the diagonal of R.
fn random_orthogonal(rng: &mut ChaCha8Rng, q: usize) -> Mat<f64> {
    let g = gaussian(rng, q, q);
    let qr = g.qr();
    let mut qm = qr.compute_Q();
    let r = qr.R();
    for j in 0..q {
        if r[(j, j)] < 0.0 {
            for i in 0..q {
                qm[(i, j)] = -qm[(i, j)];
            }
        }
    }
    qm
}

fn blob_centres(angle: f64) -> Vec<f64> {
    let steps = (2.0 * FAULT_WINDOW / BLOB_SPACING).round() as usize;
    (0..=steps).map(|i| angle - FAULT_WINDOW + i as f64 * BLOB_SPACING).collect()
}

fn nearest_type(cfg: &SynthConfig, u: f64) -> usize {
    (0..cfg.n_types)
        .min_by(|&a, &b| {
            (u - cfg.type_position(a))
                .abs()
                .total_cmp(&(u - cfg.type_position(b)).abs())
                .then(a.cmp(&b))
        })
        .unwrap()
}

struct SynthModel {
    t: usize,
    s: usize,
    angle: f64,
    mixing: Mat<f64>,
    class_gain: f64,
    content_head: Mat<f64>,
    rng_tag: u64,
}

/// Latent description of a batch of inputs shared by every model.
struct Inputs {
    z1: Mat<f64>,
    z2: Mat<f64>,
    class: Vec<usize>,
}

struct Rendered {
    features: Vec<f32>,
    logits: Vec<f32>,
}

impl SynthModel {
    fn render(&self, cfg: &SynthConfig, inputs: &Inputs, batch_tag: u64) -> Rendered {
        let n = inputs.class.len();
        let c = cfg.num_classes;
        let q = cfg.content_dim();
        let d = cfg.feature_dim;
        let mut rng = stream(cfg.rng_seed, (self.rng_tag << 16) ^ batch_tag);
        let (ca, sa) = (self.angle.cos(), self.angle.sin());
        let mut w = Mat::zeros(n, q);
        for j in 0..q {
            for i in 0..n {
                w[(i, j)] = ca * inputs.z1[(i, j)] + sa * inputs.z2[(i, j)];
            }
        }
        let content = crate::linalg::mul(w.as_ref(), self.mixing.as_ref());
        let mut features = vec![0f32; n * d];
        let mut logits = vec![0f32; n * c];
        for i in 0..n {
            let mut row = vec![0.0; d];
            for k in 0..c {
                let hot = if inputs.class[i] == k { CLASS_GAIN } else { 0.0 };
                row[k] = hot + cfg.seed_noise * standard(&mut rng);
            }
            for j in 0..q {
                row[c + j] = content[(i, j)] + cfg.seed_noise * standard(&mut rng);
            }
            for k in 0..c {
                let mut l = self.class_gain * row[k];
                for j in 0..q {
                    l += row[c + j] * self.content_head[(j, k)];
                }
                logits[i * c + k] = l as f32;
            }
            for (j, v) in row.into_iter().enumerate() {
                features[i * d + j] = v as f32;
            }
        }
        Rendered { features, logits }
    }
}

fn build_models(cfg: &SynthConfig) -> Vec<SynthModel> {
    let q = cfg.content_dim();
    let c = cfg.num_classes;
    let mut models = Vec::new();
    for t in 0..cfg.n_types {
        let mut trng = stream(cfg.rng_seed, 1000 + t as u64);
        let rotation = random_orthogonal(&mut trng, q);
        let log_scales: Vec<f64> = (0..q).map(|_| standard(&mut trng)).collect();
        let type_head = gaussian(&mut trng, q, c);
        for s in 0..cfg.seeds_per_type {
            let tag = (t * cfg.seeds_per_type + s) as u64 + 1;
            let mut mrng = stream(cfg.rng_seed, 2000 + tag);
            let xi = standard(&mut mrng);
            let angle = cfg.type_position(t) + cfg.type_basis_strength * cfg.seed_noise * xi;
            let mut mixing = Mat::zeros(q, q);
            let perturb = gaussian(&mut mrng, q, q);
            // M = R · diag(exp(strength·MIX·g)) · (I + seed_noise·G/√q)
            for i in 0..q {
                let scale = (cfg.type_basis_strength * MIX_SCALE * log_scales[i]).exp();
                for j in 0..q {
                    let right = if i == j { 1.0 } else { 0.0 } + cfg.seed_noise * perturb[(i, j)] / (q as f64).sqrt();
                    mixing[(i, j)] = scale * right;
                }
            }
            let mixing = crate::linalg::mul(rotation.as_ref(), mixing.as_ref());
            let head_noise = gaussian(&mut mrng, q, c);
            // Weights scaled by each neuron's spread so the class block decides.
            let spread: Vec<f64> = (0..q)
                .map(|j| (0..q).map(|i| mixing[(i, j)] * mixing[(i, j)]).sum::<f64>().sqrt().max(1e-12))
                .collect();
            let content_head =
                Mat::from_fn(q, c, |i, k| 0.05 * (type_head[(i, k)] + cfg.seed_noise * head_noise[(i, k)]) / spread[i]);
            models.push(SynthModel {
                t,
                s,
                angle,
                mixing,
                class_gain: 2.0 * (1.0 + 0.1 * standard(&mut mrng)),
                content_head,
                rng_tag: tag,
            });
        }
    }
    models
}

/// Latent directions of the fault line.
fn fault_line(cfg: &SynthConfig) -> (Vec<f64>, Vec<f64>) {
    let mut rng = stream(cfg.rng_seed, 2);
    let q = cfg.content_dim();
    let v1 = (0..q).map(|_| LINE_GAIN * standard(&mut rng)).collect();
    let v2 = (0..q).map(|_| LINE_GAIN * standard(&mut rng)).collect();
    (v1, v2)
}

/// Gaussian latents, except every `LINE_EVERY`-th input lies on the fault
/// line so that activation bands span every fault window.
fn train_inputs(cfg: &SynthConfig, v1: &[f64], v2: &[f64]) -> (Inputs, Vec<i64>) {
    let mut rng = stream(cfg.rng_seed, 1);
    let q = cfg.content_dim();
    let mut z1 = gaussian(&mut rng, cfg.n_train, q);
    let mut z2 = gaussian(&mut rng, cfg.n_train, q);
    let reach = cfg.type_position(cfg.n_types - 1) + FAULT_WINDOW + LINE_MARGIN;
    for i in (0..cfg.n_train).step_by(LINE_EVERY) {
        let u = reach * (2.0 * rng.random::<f64>() - 1.0);
        for j in 0..q {
            z1[(i, j)] = u * v1[j] + BLOB_JITTER * standard(&mut rng);
            z2[(i, j)] = u * v2[j] + BLOB_JITTER * standard(&mut rng);
        }
    }
    let class: Vec<usize> = (0..cfg.n_train).map(|_| rng.random_range(0..cfg.num_classes)).collect();
    let labels = class
        .iter()
        .map(|&k| {
            if rng.random::<f64>() < LABEL_NOISE {
                ((k + 1 + rng.random_range(0..cfg.num_classes - 1)) % cfg.num_classes) as i64
            } else {
                k as i64
            }
        })
        .collect();
    (Inputs { z1, z2, class }, labels)
}

/// Inputs of the test set generated on a model at `angle`: fault blobs
/// along `u·v` with shifted labels, then ordinary correctly labelled inputs.
fn test_inputs(cfg: &SynthConfig, angle: f64, tag: u64, v1: &[f64], v2: &[f64]) -> (Inputs, Vec<i64>) {
    let mut rng = stream(cfg.rng_seed, 3000 + tag);
    let q = cfg.content_dim();
    let c = cfg.num_classes;
    let n = cfg.n_test_per_set;
    let centres = blob_centres(angle);
    let mut z1 = Mat::zeros(n, q);
    let mut z2 = Mat::zeros(n, q);
    let mut class = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        if i < cfg.n_faults() {
            let b = i % centres.len();
            let u = centres[b] + BLOB_JITTER * standard(&mut rng);
            for j in 0..q {
                z1[(i, j)] = u * v1[j] + BLOB_JITTER * standard(&mut rng);
                z2[(i, j)] = u * v2[j] + BLOB_JITTER * standard(&mut rng);
            }
            class.push(b % c);
            labels.push(((b + 1) % c) as i64);
        } else {
            for j in 0..q {
                z1[(i, j)] = standard(&mut rng);
                z2[(i, j)] = standard(&mut rng);
            }
            let k = rng.random_range(0..c);
            class.push(k);
            labels.push(k as i64);
        }
    }
    (Inputs { z1, z2, class }, labels)
}

/// Type proximity, model angles and fault-direction ids for `cfg`.
pub fn plant_description(cfg: &SynthConfig) -> Plant {
    let types: Vec<String> = (0..cfg.n_types).map(type_id).collect();
    let type_proximity = (0..cfg.n_types)
        .map(|a| {
            (0..cfg.n_types)
                .map(|b| (cfg.type_position(a) - cfg.type_position(b)).abs())
                .collect()
        })
        .collect();
    let models = build_models(cfg);
    let model_angles = models.iter().map(|m| (model_id(m.t, m.s), m.angle)).collect();
    let fault_direction_ids = models
        .iter()
        .map(|m| {
            let mut ids: Vec<usize> = blob_centres(m.angle)
                .into_iter()
                .take(cfg.n_faults())
                .map(|u| nearest_type(cfg, u))
                .collect();
            ids.sort_unstable();
            ids.dedup();
            (testset_id(m.t, m.s), ids)
        })
        .collect();
    Plant {
        types,
        type_proximity,
        model_angles,
        fault_direction_ids,
    }
}

/// Writes a complete workspace plus `plant.json` under `out_dir`.
pub fn generate_benchmark(cfg: &SynthConfig, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let models = build_models(cfg);
    let (v1, v2) = fault_line(cfg);
    let (train, train_labels) = train_inputs(cfg, &v1, &v2);

    let labels_file = MatrixFile::labels(train_labels)?;
    let mut tests = Vec::new();
    for m in &models {
        let (inputs, labels) = test_inputs(cfg, m.angle, m.rng_tag, &v1, &v2);
        tests.push((testset_id(m.t, m.s), inputs, labels));
    }

    let f32_file = |rows: usize, cols: usize, data: Vec<f32>| MatrixFile::f32(rows, cols, data);
    let mut entries = Vec::new();
    for m in &models {
        let id = model_id(m.t, m.s);
        let dir = Path::new("models").join(&id);
        let r = m.render(cfg, &train, 0);
        write_matrix(out_dir.join(dir.join("train_features.gmx")), &f32_file(cfg.n_train, cfg.feature_dim, r.features)?)?;
        write_matrix(out_dir.join(dir.join("train_logits.gmx")), &f32_file(cfg.n_train, cfg.num_classes, r.logits)?)?;
        write_matrix(out_dir.join(dir.join("train_labels.gmx")), &labels_file)?;
        let mut eval = BTreeMap::new();
        for (k, (ts, inputs, _)) in tests.iter().enumerate() {
            let r = m.render(cfg, inputs, k as u64 + 1);
            let features = dir.join(format!("eval_{ts}_features.gmx"));
            let logits = dir.join(format!("eval_{ts}_logits.gmx"));
            write_matrix(out_dir.join(&features), &f32_file(cfg.n_test_per_set, cfg.feature_dim, r.features)?)?;
            write_matrix(out_dir.join(&logits), &f32_file(cfg.n_test_per_set, cfg.num_classes, r.logits)?)?;
            eval.insert(ts.clone(), EvalEntry { features, logits });
        }
        entries.push(ModelEntry {
            id,
            model_type: type_id(m.t),
            seed: m.s as i64,
            role: Role::Reference,
            train_features: dir.join("train_features.gmx"),
            train_logits: dir.join("train_logits.gmx"),
            train_labels: dir.join("train_labels.gmx"),
            train_accuracy: None,
            eval,
        });
    }
    let mut testsets = Vec::new();
    for (m, (ts, _, labels)) in models.iter().zip(&tests) {
        let path = Path::new("testsets").join(format!("{ts}_labels.gmx"));
        write_matrix(out_dir.join(&path), &MatrixFile::labels(labels.clone())?)?;
        testsets.push(TestSetEntry {
            id: ts.clone(),
            origin_model: model_id(m.t, m.s),
            labels: path,
        });
    }
    let manifest = Manifest {
        num_classes: cfg.num_classes,
        models: entries,
        testsets,
        options: BTreeMap::new(),
    };
    manifest.write(out_dir)?;
    let plant = plant_description(cfg);
    let text = serde_json::to_string_pretty(&plant).map_err(|e| Error::Serialization(e.to_string()))?;
    let path = out_dir.join(PLANT_FILE);
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plant_proximity_is_a_symmetric_distance() {
        let cfg = SynthConfig::default();
        let p = plant_description(&cfg);
        for a in 0..cfg.n_types {
            assert_eq!(p.type_proximity[a][a], 0.0);
            for b in 0..cfg.n_types {
                assert_eq!(p.type_proximity[a][b], p.type_proximity[b][a]);
            }
        }
        for ids in p.fault_direction_ids.values() {
            assert!(!ids.is_empty());
            assert!(ids.iter().all(|&i| i < cfg.n_types));
        }
    }

    #[test]
    fn validation() {
        assert!(SynthConfig::default().validate().is_ok());
        for bad in [
            SynthConfig { n_types: 1, ..Default::default() },
            SynthConfig { seeds_per_type: 1, ..Default::default() },
            SynthConfig { fault_rate: 0.01, n_test_per_set: 100, ..Default::default() },
            SynthConfig { type_basis_strength: 1.5, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn zero_strength_puts_every_model_at_one_angle() {
        let cfg = SynthConfig {
            type_basis_strength: 0.0,
            ..Default::default()
        };
        let p = plant_description(&cfg);
        assert!(p.model_angles.values().all(|&a| a == 0.0));
        assert!(p.type_proximity.iter().flatten().all(|&x| x == 0.0));
    }
}
