//! Synthetic binary tasks, stratified splitting, and Dirichlet label-skew
//! client partitioning.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::SeededRng;

/// A labeled binary dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Materializes the rows at the given indices as a new dataset.
    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Dataset {
        Dataset {
            name: name.into(),
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Concatenates datasets in order.
    pub fn pooled(parts: &[&Dataset], name: impl Into<String>) -> Dataset {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            features.extend(p.features.iter().cloned());
            labels.extend(p.labels.iter().copied());
        }
        Dataset {
            name: name.into(),
            features,
            labels,
        }
    }

    /// Class proportions (p(y=0), p(y=1)).
    pub fn label_histogram(&self) -> [f64; 2] {
        let n = self.len() as f64;
        let pos = self.labels.iter().filter(|&&y| y == 1).count() as f64;
        [(n - pos) / n, pos / n]
    }

    /// Writes the dataset as CSV: columns f0..f{d-1}, then label.
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        let d = self.feature_dim();
        let header: Vec<String> = (0..d).map(|i| format!("f{i}")).collect();
        writeln!(f, "{},label", header.join(","))?;
        for (row, y) in self.features.iter().zip(&self.labels) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writeln!(f, "{},{}", cells.join(","), y)?;
        }
        Ok(())
    }
}

/// Geometry of a generated task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    /// Two Gaussian blobs separated along a random direction.
    Linear,
    /// Concentric annuli; not linearly separable.
    Rings,
}

/// Recipe for one synthetic binary task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub n_samples: usize,
    pub positive_fraction: f64,
    pub difficulty: Difficulty,
    pub feature_dim: usize,
    pub noise_scale: f64,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 10 {
            return Err(Error::InvalidTaskSpec("n_samples must be at least 10".into()));
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return Err(Error::InvalidTaskSpec(
                "positive_fraction must lie in (0, 1)".into(),
            ));
        }
        if self.feature_dim < 1 {
            return Err(Error::InvalidTaskSpec("feature_dim must be at least 1".into()));
        }
        if self.difficulty == Difficulty::Rings && self.feature_dim < 2 {
            return Err(Error::InvalidTaskSpec(
                "rings geometry needs feature_dim >= 2".into(),
            ));
        }
        if self.noise_scale < 0.0 {
            return Err(Error::InvalidTaskSpec("noise_scale must be non-negative".into()));
        }
        Ok(())
    }
}

/// Split fractions for train/val/test.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction_of_train: f64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("train_fraction", self.train_fraction),
            ("val_fraction_of_train", self.val_fraction_of_train),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidTaskSpec(format!("{name} must lie in (0, 1)")));
            }
        }
        Ok(())
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            val_fraction_of_train: 0.2,
        }
    }
}

/// Assignment of training rows to clients, with per-client label histograms.
#[derive(Debug, Clone)]
pub struct ClientPartition {
    pub assignments: Vec<Vec<usize>>,
    pub sizes: Vec<usize>,
    pub label_histograms: Vec<[f64; 2]>,
}

impl ClientPartition {
    pub fn num_clients(&self) -> usize {
        self.assignments.len()
    }
}

/// Generates a synthetic task with an exact positive count of
/// round(positive_fraction * n_samples).
pub fn gen_task(spec: &TaskSpec, rng: &mut SeededRng) -> Result<Dataset> {
    spec.validate()?;
    let n = spec.n_samples;
    let d = spec.feature_dim;
    let n_pos = (spec.positive_fraction * n as f64).round() as usize;

    let mut labels: Vec<u8> = vec![1; n_pos];
    labels.extend(vec![0u8; n - n_pos]);
    labels.shuffle(rng);

    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut features = Vec::with_capacity(n);
    match spec.difficulty {
        Difficulty::Linear => {
            // Random unit direction; class centers at +-2 along it.
            let mut dir: Vec<f64> = (0..d).map(|_| std_normal.sample(rng)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            dir.iter_mut().for_each(|v| *v /= norm);
            for &y in &labels {
                let sign = if y == 1 { 1.0 } else { -1.0 };
                let row: Vec<f64> = (0..d)
                    .map(|j| sign * 2.0 * dir[j] + spec.noise_scale * std_normal.sample(rng))
                    .collect();
                features.push(row);
            }
        }
        Difficulty::Rings => {
            // Inner annulus radius 1 for the negative class, outer radius 2.5
            // for the positive class; extra dimensions carry pure noise.
            for &y in &labels {
                let radius = if y == 1 { 2.5 } else { 1.0 };
                let angle = rand::Rng::random_range(rng, 0.0..std::f64::consts::TAU);
                let r = radius + spec.noise_scale * std_normal.sample(rng);
                let mut row = vec![r * angle.cos(), r * angle.sin()];
                row.extend((2..d).map(|_| spec.noise_scale * std_normal.sample(rng)));
                features.push(row);
            }
        }
    }

    Ok(Dataset {
        name: spec.name.clone(),
        features,
        labels,
    })
}

/// Stratified train/val/test split: test takes (1 - train_fraction) of each
/// class, then val is carved stratified out of the remaining train rows.
pub fn stratified_split(
    d: &Dataset,
    spec: &SplitSpec,
    rng: &mut SeededRng,
) -> Result<(Dataset, Dataset, Dataset)> {
    spec.validate()?;
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    let mut test_idx = Vec::new();

    for class in [0u8, 1u8] {
        let mut idx: Vec<usize> = (0..d.len()).filter(|&i| d.labels[i] == class).collect();
        if idx.len() < 3 {
            return Err(Error::SplitTooSmall { class });
        }
        idx.shuffle(rng);
        let n_test = ((1.0 - spec.train_fraction) * idx.len() as f64).round() as usize;
        let n_rest = idx.len() - n_test;
        let n_val = (spec.val_fraction_of_train * n_rest as f64).round() as usize;
        let n_train = n_rest - n_val;
        if n_test == 0 || n_val == 0 || n_train == 0 {
            return Err(Error::SplitTooSmall { class });
        }
        test_idx.extend_from_slice(&idx[..n_test]);
        val_idx.extend_from_slice(&idx[n_test..n_test + n_val]);
        train_idx.extend_from_slice(&idx[n_test + n_val..]);
    }

    // Preserve original row order inside each split.
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    test_idx.sort_unstable();

    Ok((
        d.subset(&train_idx, format!("{}-train", d.name)),
        d.subset(&val_idx, format!("{}-val", d.name)),
        d.subset(&test_idx, format!("{}-test", d.name)),
    ))
}

/// Partitions training rows across `k` clients with symmetric-Dirichlet
/// label skew: for each class, client shares are drawn from Dirichlet(alpha)
/// and that class's rows are dealt out accordingly. Clients falling below
/// `min_per_client` are topped up from the largest client.
pub fn partition_non_iid(
    train: &Dataset,
    k: usize,
    alpha: f64,
    min_per_client: usize,
    rng: &mut SeededRng,
) -> Result<ClientPartition> {
    if k < 1 {
        return Err(Error::InfeasiblePartition("k must be at least 1".into()));
    }
    if !(alpha > 0.0) {
        return Err(Error::InfeasiblePartition("alpha must be positive".into()));
    }
    if k * min_per_client > train.len() {
        return Err(Error::InfeasiblePartition(format!(
            "k * min_per_client = {} exceeds |train| = {}",
            k * min_per_client,
            train.len()
        )));
    }

    let mut assignments: Vec<Vec<usize>> = vec![Vec::new(); k];
    for class in [0u8, 1u8] {
        let mut idx: Vec<usize> = (0..train.len())
            .filter(|&i| train.labels[i] == class)
            .collect();
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(rng);
        let shares = dirichlet_symmetric(alpha, k, rng);
        let counts = apportion(idx.len(), &shares);
        let mut offset = 0;
        for (client, &c) in counts.iter().enumerate() {
            assignments[client].extend_from_slice(&idx[offset..offset + c]);
            offset += c;
        }
    }

    // Top up undersized clients by moving rows from the currently largest one.
    loop {
        let (small, &small_n) = assignments
            .iter()
            .map(Vec::len)
            .collect::<Vec<_>>()
            .iter()
            .enumerate()
            .min_by_key(|(_, &n)| n)
            .map(|(i, n)| (i, n))
            .unwrap();
        if small_n >= min_per_client.max(1) {
            break;
        }
        let large = (0..k)
            .max_by_key(|&i| assignments[i].len())
            .expect("k >= 1");
        if large == small || assignments[large].len() <= 1 {
            return Err(Error::InfeasiblePartition(
                "cannot satisfy min_per_client".into(),
            ));
        }
        let moved = assignments[large].pop().expect("non-empty");
        assignments[small].push(moved);
    }

    for a in &mut assignments {
        a.sort_unstable();
    }
    let sizes: Vec<usize> = assignments.iter().map(Vec::len).collect();
    let label_histograms: Vec<[f64; 2]> = assignments
        .iter()
        .map(|a| {
            let n = a.len() as f64;
            let pos = a.iter().filter(|&&i| train.labels[i] == 1).count() as f64;
            [(n - pos) / n, pos / n]
        })
        .collect();

    Ok(ClientPartition {
        assignments,
        sizes,
        label_histograms,
    })
}

/// Symmetric Dirichlet(alpha) sample via normalized Gamma draws.
fn dirichlet_symmetric(alpha: f64, k: usize, rng: &mut SeededRng) -> Vec<f64> {
    if k == 1 {
        return vec![1.0];
    }
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0");
    let mut draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return vec![1.0 / k as f64; k];
    }
    draws.iter_mut().for_each(|v| *v /= total);
    draws
}

/// Integer apportionment of `n` by fractional shares (largest remainder).
fn apportion(n: usize, shares: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = shares.iter().map(|s| s * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for i in 0..(n - assigned) {
        counts[order[i % order.len()]] += 1;
    }
    counts
}

/// Total variation distance between two binary histograms.
pub fn total_variation(p: [f64; 2], q: [f64; 2]) -> f64 {
    0.5 * ((p[0] - q[0]).abs() + (p[1] - q[1]).abs())
}
