//! Datasets: the Gaussian-mixture stand-in task, Dirichlet non-IID partitioning and IDX files.

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{FlError, Result};
use crate::scalar::Scalar;

/// Row-major features with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S> {
    features: Vec<S>,
    labels: Vec<usize>,
    dim: usize,
    classes: usize,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(features: Vec<S>, labels: Vec<usize>, dim: usize, classes: usize) -> Result<Self> {
        if dim == 0 || classes == 0 || features.len() != labels.len() * dim {
            return Err(FlError::BadShape(format!(
                "{} features for {} labels of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(FlError::BadShape(format!("label {bad} with {classes} classes")));
        }
        Ok(Self {
            features,
            labels,
            dim,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn x(&self, i: usize) -> &[S] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn y(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.x(i));
        }
        Self {
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            dim: self.dim,
            classes: self.classes,
        }
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }
}

/// Shape of the Gaussian-mixture task: one spherical cluster of standard deviation `noise_std`
/// per class, with every pair of class means `separation * noise_std` apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub samples_per_class: usize,
    pub test_per_class: usize,
    pub separation: f64,
    pub noise_std: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            feature_dim: 20,
            samples_per_class: 300,
            test_per_class: 100,
            separation: 3.0,
            noise_std: 1.0,
        }
    }
}

fn class_means(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    // Points r * e_k are r * sqrt(2) apart.
    let radius = spec.separation * spec.noise_std / std::f64::consts::SQRT_2;
    (0..spec.num_classes)
        .map(|k| {
            let mut dir = vec![0.0; spec.feature_dim];
            if spec.num_classes <= spec.feature_dim {
                dir[k] = 1.0;
            } else {
                // More classes than axes: random unit directions, separation holds on average.
                for v in &mut dir {
                    *v = rng.sample(StandardNormal);
                }
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                dir.iter_mut().for_each(|v| *v /= norm);
            }
            dir.into_iter().map(|v| v * radius).collect()
        })
        .collect()
}

fn sample_mixture<S: Scalar>(
    means: &[Vec<f64>],
    per_class: usize,
    std: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Dataset<S>> {
    let dim = means[0].len();
    let mut features = Vec::with_capacity(means.len() * per_class * dim);
    let mut labels = Vec::with_capacity(means.len() * per_class);
    // Interleave classes so that prefixes stay balanced.
    for _ in 0..per_class {
        for (k, mean) in means.iter().enumerate() {
            for &m in mean {
                let z: f64 = rng.sample(StandardNormal);
                features.push(S::of(m + std * z));
            }
            labels.push(k);
        }
    }
    Dataset::new(features, labels, dim, means.len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask<S> {
    pub train: Dataset<S>,
    pub test: Dataset<S>,
}

pub fn make_synthetic_task<S: Scalar>(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticTask<S>> {
    if spec.num_classes < 2
        || spec.feature_dim == 0
        || spec.samples_per_class == 0
        || spec.test_per_class == 0
        || !(spec.noise_std > 0.0)
        || !(spec.separation >= 0.0)
    {
        return Err(FlError::BadShape(format!("{spec:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = class_means(spec, &mut rng);
    let train = sample_mixture(&means, spec.samples_per_class, spec.noise_std, &mut rng)?;
    let test = sample_mixture(&means, spec.test_per_class, spec.noise_std, &mut rng)?;
    Ok(SyntheticTask { train, test })
}

pub const PARTITION_ATTEMPTS: usize = 100;

/// Splits `counts` total items proportionally to `weights` (largest remainder, ties to the
/// lower index).
fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn dirichlet(gamma: &Gamma<f64>, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    if draws.iter().sum::<f64>() > 0.0 {
        draws
    } else {
        // Every Gamma draw underflowed (tiny beta): all mass on one client.
        let mut w = vec![0.0; k];
        w[rng.random_range(0..k)] = 1.0;
        w
    }
}

/// Non-IID split of `data` over `clients`: each class is divided by proportions drawn from
/// `Dirichlet(beta * 1)`. Returns sorted index lists; a draw leaving some client empty is
/// repeated, at most [`PARTITION_ATTEMPTS`] times.
pub fn dirichlet_partition<S: Scalar>(
    data: &Dataset<S>,
    clients: usize,
    beta: f64,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if clients == 0 || !(beta > 0.0) || !beta.is_finite() {
        return Err(FlError::BadShape(format!("{clients} clients with beta = {beta}")));
    }
    let gamma = Gamma::new(beta, 1.0).map_err(|e| FlError::BadShape(e.to_string()))?;
    let mut by_class = vec![Vec::new(); data.classes()];
    for i in 0..data.len() {
        by_class[data.y(i)].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..PARTITION_ATTEMPTS {
        let mut parts = vec![Vec::new(); clients];
        for members in &by_class {
            let mut members = members.clone();
            members.shuffle(&mut rng);
            let counts = largest_remainder(&dirichlet(&gamma, clients, &mut rng), members.len());
            let mut rest = members.as_slice();
            for (part, n) in parts.iter_mut().zip(counts) {
                let (head, tail) = rest.split_at(n);
                part.extend_from_slice(head);
                rest = tail;
            }
        }
        if parts.iter().all(|p| !p.is_empty()) {
            parts.iter_mut().for_each(|p| p.sort_unstable());
            return Ok(parts);
        }
    }
    Err(FlError::PartitionFailure {
        clients,
        samples: data.len(),
        attempts: PARTITION_ATTEMPTS,
    })
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| FlError::Idx("truncated header".into()))
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| FlError::Io(format!("{}: {e}", path.display())))?;
    Ok(bytes)
}

/// Parses an IDX image file into `(count, pixels per image, raw bytes)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, &[u8])> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_IMAGES {
        return Err(FlError::Idx(format!("image magic {magic:#010x}")));
    }
    let n = read_u32(bytes, 4)? as usize;
    let pixels = read_u32(bytes, 8)? as usize * read_u32(bytes, 12)? as usize;
    let body = &bytes[16..];
    if body.len() != n * pixels {
        return Err(FlError::Idx(format!("expected {} pixel bytes, found {}", n * pixels, body.len())));
    }
    Ok((n, pixels, body))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_LABELS {
        return Err(FlError::Idx(format!("label magic {magic:#010x}")));
    }
    let n = read_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(FlError::Idx(format!("expected {n} labels, found {}", body.len())));
    }
    Ok(body)
}

/// Loads an MNIST-style image/label pair with pixels scaled to `[0, 1]` and 10 classes.
pub fn load_idx<S: Scalar>(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset<S>> {
    let image_bytes = read_all(images.as_ref())?;
    let label_bytes = read_all(labels.as_ref())?;
    let (n, pixels, body) = parse_idx_images(&image_bytes)?;
    let ys = parse_idx_labels(&label_bytes)?;
    if ys.len() != n {
        return Err(FlError::Idx(format!("{n} images but {} labels", ys.len())));
    }
    let scale = S::of(1.0 / 255.0);
    Dataset::new(
        body.iter().map(|&p| S::of(f64::from(p)) * scale).collect(),
        ys.iter().map(|&y| usize::from(y)).collect(),
        pixels,
        10,
    )
}
