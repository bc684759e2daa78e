//! Synthetic classification data, label corruption, and replayable batch order.

use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Column};
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Generator {
    /// Isotropic Gaussians. Centers sit at `±center_radius` along the first
    /// `ceil(C/2)` axes when `C <= 2D`, otherwise on seeded random directions.
    GaussianBlobs { center_radius: f64, cluster_std: f64 },
    /// `C` interleaved spiral arms in the first two dimensions; remaining
    /// dimensions carry pure noise.
    TwoSpirals { turns: f64, noise: f64 },
}

/// Examples per class in each split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub generator: Generator,
    pub class_count: usize,
    pub input_dim: usize,
    pub per_class: SplitSizes,
    /// Probability that a training label is redrawn uniformly.
    #[serde(default)]
    pub noise_rate: f64,
    /// When true (default) the uniform redraw may return the original class.
    #[serde(default = "default_true")]
    pub noise_may_keep_label: bool,
    /// Per-class keep fraction for the training split; empty means balanced.
    #[serde(default)]
    pub imbalance_fractions: Vec<f64>,
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

impl DatasetSpec {
    pub fn blobs(class_count: usize, per_class: SplitSizes, seed: u64) -> Self {
        Self {
            generator: Generator::GaussianBlobs {
                center_radius: 3.0,
                cluster_std: 1.0,
            },
            class_count,
            input_dim: 2,
            per_class,
            noise_rate: 0.0,
            noise_may_keep_label: true,
            imbalance_fractions: Vec::new(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::config("dataset.class_count", "must be >= 2"));
        }
        if self.input_dim == 0 {
            return Err(Error::config("dataset.input_dim", "must be positive"));
        }
        let s = self.per_class;
        if s.train == 0 || s.val == 0 || s.test == 0 {
            return Err(Error::config("dataset.per_class", "every split needs examples"));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::config("dataset.noise_rate", "must lie in [0, 1]"));
        }
        if !self.imbalance_fractions.is_empty() {
            if self.imbalance_fractions.len() != self.class_count {
                return Err(Error::config(
                    "dataset.imbalance_fractions",
                    "need one fraction per class",
                ));
            }
            if self.imbalance_fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
                return Err(Error::config(
                    "dataset.imbalance_fractions",
                    "fractions must lie in (0, 1]",
                ));
            }
        }
        match self.generator {
            Generator::GaussianBlobs {
                center_radius,
                cluster_std,
            } => {
                if !(cluster_std > 0.0) || !center_radius.is_finite() {
                    return Err(Error::config("dataset.generator", "bad blob geometry"));
                }
            }
            Generator::TwoSpirals { turns, noise } => {
                if self.input_dim < 2 {
                    return Err(Error::config("dataset.input_dim", "spirals need >= 2 dims"));
                }
                if !(turns > 0.0) || !(noise >= 0.0) {
                    return Err(Error::config("dataset.generator", "bad spiral geometry"));
                }
            }
        }
        Ok(())
    }
}

/// One example viewed out of a [`Dataset`].
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample<'a> {
    pub x: &'a [f64],
    pub y: usize,
    pub y_true: usize,
    pub corrupted: bool,
    pub id: u64,
}

/// Column-oriented labelled dataset. `y` is what training sees; `y_true`
/// is kept for analysis only.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub class_count: usize,
    pub input_dim: usize,
    pub x: Vec<f64>,
    pub y: Vec<usize>,
    pub y_true: Vec<usize>,
    pub corrupted: Vec<bool>,
    pub ids: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl Dataset {
    fn empty(class_count: usize, input_dim: usize) -> Self {
        Self {
            class_count,
            input_dim,
            x: Vec::new(),
            y: Vec::new(),
            y_true: Vec::new(),
            corrupted: Vec::new(),
            ids: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn example(&self, i: usize) -> LabeledExample<'_> {
        LabeledExample {
            x: &self.x[i * self.input_dim..(i + 1) * self.input_dim],
            y: self.y[i],
            y_true: self.y_true[i],
            corrupted: self.corrupted[i],
            id: self.ids[i],
        }
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for &y in &self.y {
            h[y] += 1;
        }
        h
    }

    pub fn corrupted_count(&self) -> usize {
        self.corrupted.iter().filter(|&&c| c).count()
    }

    pub fn inputs(&self) -> Matrix {
        Matrix::from_vec(self.len(), self.input_dim, self.x.clone()).unwrap()
    }

    /// Gathers the rows at `positions` into an input matrix plus observed labels.
    pub fn gather(&self, positions: &[usize]) -> (Matrix, Vec<usize>) {
        let d = self.input_dim;
        let mut x = Vec::with_capacity(positions.len() * d);
        let mut y = Vec::with_capacity(positions.len());
        for &p in positions {
            x.extend_from_slice(&self.x[p * d..(p + 1) * d]);
            y.push(self.y[p]);
        }
        (Matrix::from_vec(positions.len(), d, x).unwrap(), y)
    }

    fn push(&mut self, x: &[f64], y: usize, y_true: usize, id: u64) {
        self.x.extend_from_slice(x);
        self.y.push(y);
        self.y_true.push(y_true);
        self.corrupted.push(y != y_true);
        self.ids.push(id);
    }

    fn select(&self, keep: &[usize]) -> Dataset {
        let mut out = Dataset::empty(self.class_count, self.input_dim);
        for &i in keep {
            let e = self.example(i);
            out.push(e.x, e.y, e.y_true, e.id);
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        #[derive(Serialize)]
        struct Meta {
            class_count: usize,
            input_dim: usize,
            len: usize,
        }
        let to_i64 = |v: &[usize]| Column::I64(v.iter().map(|&u| u as i64).collect());
        checkpoint::encode(
            "dataset",
            &Meta {
                class_count: self.class_count,
                input_dim: self.input_dim,
                len: self.len(),
            },
            &[
                ("x", Column::F64(self.x.clone())),
                ("y", to_i64(&self.y)),
                ("y_true", to_i64(&self.y_true)),
                (
                    "corrupted",
                    Column::I64(self.corrupted.iter().map(|&c| c as i64).collect()),
                ),
                ("id", Column::I64(self.ids.iter().map(|&u| u as i64).collect())),
            ],
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Dataset> {
        #[derive(Deserialize)]
        struct Meta {
            class_count: usize,
            input_dim: usize,
            len: usize,
        }
        let mut d = checkpoint::decode::<Meta>("dataset", bytes)?;
        let (c, dim, n) = (d.meta.class_count, d.meta.input_dim, d.meta.len);
        let x = d.take_f64("x")?;
        let to_usize = |v: Vec<i64>| -> Result<Vec<usize>> {
            v.into_iter()
                .map(|i| {
                    usize::try_from(i)
                        .ok()
                        .filter(|&u| u < c)
                        .ok_or_else(|| Error::Checkpoint(format!("label {i} out of range")))
                })
                .collect()
        };
        let y = to_usize(d.take_i64("y")?)?;
        let y_true = to_usize(d.take_i64("y_true")?)?;
        let corrupted: Vec<bool> = d.take_i64("corrupted")?.into_iter().map(|v| v != 0).collect();
        let ids: Vec<u64> = d.take_i64("id")?.into_iter().map(|v| v as u64).collect();
        if x.len() != n * dim || [y.len(), y_true.len(), corrupted.len(), ids.len()] != [n; 4] {
            return Err(Error::Checkpoint("dataset column lengths disagree".into()));
        }
        if (0..n).any(|i| corrupted[i] != (y[i] != y_true[i])) {
            return Err(Error::Checkpoint("corrupted flags inconsistent with labels".into()));
        }
        Ok(Dataset {
            class_count: c,
            input_dim: dim,
            x,
            y,
            y_true,
            corrupted,
            ids,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        Dataset::from_bytes(&checkpoint::read_file(path)?)
    }
}

fn blob_centers(spec: &DatasetSpec, radius: f64) -> Vec<Vec<f64>> {
    let (c, d) = (spec.class_count, spec.input_dim);
    if c <= 2 * d {
        (0..c)
            .map(|k| {
                let mut m = vec![0.0; d];
                m[k / 2] = if k % 2 == 0 { radius } else { -radius };
                m
            })
            .collect()
    } else {
        let mut rng = seed::rng(seed::derive(spec.seed, &[0xCE17E2]));
        (0..c)
            .map(|_| {
                let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
                v.into_iter().map(|a| a * radius / norm).collect()
            })
            .collect()
    }
}

fn sample_point<R: Rng>(
    spec: &DatasetSpec,
    centers: &[Vec<f64>],
    class: usize,
    rng: &mut R,
    out: &mut Vec<f64>,
) {
    out.clear();
    let d = spec.input_dim;
    match spec.generator {
        Generator::GaussianBlobs { cluster_std, .. } => {
            for j in 0..d {
                let z: f64 = StandardNormal.sample(rng);
                out.push(centers[class][j] + cluster_std * z);
            }
        }
        Generator::TwoSpirals { turns, noise } => {
            let t: f64 = rng.random_range(0.05..1.0);
            let phase = std::f64::consts::TAU * class as f64 / spec.class_count as f64;
            let angle = std::f64::consts::TAU * turns * t + phase;
            let r = 4.0 * t;
            let n1: f64 = StandardNormal.sample(rng);
            let n2: f64 = StandardNormal.sample(rng);
            out.push(r * angle.cos() + noise * n1);
            out.push(r * angle.sin() + noise * n2);
            for _ in 2..d {
                let z: f64 = StandardNormal.sample(rng);
                out.push(noise * z);
            }
        }
    }
}

/// Draws the three clean splits, then applies imbalance and label noise to
/// the training split only.
pub fn generate(spec: &DatasetSpec) -> Result<Splits> {
    spec.validate()?;
    let centers = match spec.generator {
        Generator::GaussianBlobs { center_radius, .. } => blob_centers(spec, center_radius),
        Generator::TwoSpirals { .. } => Vec::new(),
    };
    let mut next_id = 0u64;
    let mut point = Vec::with_capacity(spec.input_dim);
    let mut draw = |per_class: usize, split: u64| {
        let mut rng = seed::rng(seed::derive(spec.seed, &[split]));
        let mut ds = Dataset::empty(spec.class_count, spec.input_dim);
        for class in 0..spec.class_count {
            for _ in 0..per_class {
                sample_point(spec, &centers, class, &mut rng, &mut point);
                ds.push(&point, class, class, next_id);
                next_id += 1;
            }
        }
        ds
    };
    let mut train = draw(spec.per_class.train, 0);
    let val = draw(spec.per_class.val, 1);
    let test = draw(spec.per_class.test, 2);
    if !spec.imbalance_fractions.is_empty() {
        train = make_imbalanced(
            &train,
            &spec.imbalance_fractions,
            seed::derive(spec.seed, &[0x1B]),
        )?;
    }
    if spec.noise_rate > 0.0 {
        train = inject_label_noise(
            &train,
            spec.noise_rate,
            spec.noise_may_keep_label,
            seed::derive(spec.seed, &[0x40]),
        );
    }
    Ok(Splits { train, val, test })
}

/// Redraws each label with probability `p`. With `may_keep_label` the draw
/// is over all classes, so the effective flip rate is `p (C-1)/C`.
pub fn inject_label_noise(dataset: &Dataset, p: f64, may_keep_label: bool, seed: u64) -> Dataset {
    let mut out = dataset.clone();
    let c = dataset.class_count;
    let mut rng = seed::rng(seed);
    for i in 0..out.len() {
        let hit = rng.random::<f64>() < p;
        if !hit {
            continue;
        }
        let truth = out.y_true[i];
        out.y[i] = if may_keep_label {
            rng.random_range(0..c)
        } else {
            let k = rng.random_range(0..c - 1);
            if k >= truth {
                k + 1
            } else {
                k
            }
        };
        out.corrupted[i] = out.y[i] != truth;
    }
    out
}

/// Keeps `round(fraction[c] * count_c)` examples of every class, chosen
/// uniformly without replacement. Original order is preserved.
pub fn make_imbalanced(dataset: &Dataset, fractions: &[f64], seed: u64) -> Result<Dataset> {
    if fractions.len() != dataset.class_count {
        return Err(Error::InvalidInput(format!(
            "{} fractions for {} classes",
            fractions.len(),
            dataset.class_count
        )));
    }
    let mut rng = seed::rng(seed);
    let mut keep = Vec::new();
    for (class, &f) in fractions.iter().enumerate() {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::InvalidInput(format!("fraction {f} for class {class}")));
        }
        let members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.y[i] == class)
            .collect();
        let n = (f * members.len() as f64).round() as usize;
        if n == 0 {
            return Err(Error::InvalidInput(format!(
                "class {class} would be reduced to zero examples"
            )));
        }
        keep.extend(
            index::sample(&mut rng, members.len(), n)
                .into_iter()
                .map(|k| members[k]),
        );
    }
    keep.sort_unstable();
    Ok(dataset.select(&keep))
}

/// Seeded epoch-by-epoch batch order. Each epoch is a fresh permutation
/// derived from `(seed, epoch)`; the final short batch of an epoch is kept.
#[derive(Clone, Debug)]
pub struct BatchStream {
    len: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    perm: Vec<usize>,
    pos: usize,
}

impl BatchStream {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 || batch_size > len {
            return Err(Error::InvalidInput(format!(
                "batch size {batch_size} for dataset of {len}"
            )));
        }
        let mut s = Self {
            len,
            batch_size,
            seed,
            epoch: 0,
            perm: Vec::new(),
            pos: 0,
        };
        s.reshuffle();
        Ok(s)
    }

    fn reshuffle(&mut self) {
        self.perm = (0..self.len).collect();
        let mut rng = seed::rng(seed::derive(self.seed, &[self.epoch]));
        self.perm.shuffle(&mut rng);
        self.pos = 0;
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.len.div_ceil(self.batch_size)
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Positions of the next batch (indices into the dataset).
    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos >= self.len {
            self.epoch += 1;
            self.reshuffle();
        }
        let end = (self.pos + self.batch_size).min(self.len);
        let out = self.perm[self.pos..end].to_vec();
        self.pos = end;
        out
    }
}

impl Iterator for BatchStream {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        Some(self.next_batch())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> DatasetSpec {
        DatasetSpec::blobs(
            4,
            SplitSizes {
                train: 500,
                val: 50,
                test: 50,
            },
            7,
        )
    }

    #[test]
    fn blobs_histogram_exact() {
        let s = generate(&spec()).unwrap();
        assert_eq!(s.train.len(), 2000);
        assert_eq!(s.train.label_histogram(), vec![500; 4]);
    }

    #[test]
    fn generate_is_deterministic_and_ids_unique() {
        let a = generate(&spec()).unwrap();
        let b = generate(&spec()).unwrap();
        assert_eq!(a, b);
        let mut ids: Vec<u64> = [&a.train, &a.val, &a.test]
            .iter()
            .flat_map(|d| d.ids.clone())
            .collect();
        let n = ids.len();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), n);
    }

    #[test]
    fn degenerate_specs_rejected() {
        let mut s = spec();
        s.class_count = 1;
        assert!(generate(&s).is_err());
        let mut s = spec();
        s.per_class.val = 0;
        assert!(generate(&s).is_err());
    }

    #[test]
    fn zero_noise_is_identity() {
        let s = generate(&spec()).unwrap();
        let n = inject_label_noise(&s.train, 0.0, true, 3);
        assert_eq!(n, s.train);
        assert_eq!(n.corrupted_count(), 0);
    }

    #[test]
    fn noise_only_touches_train() {
        let mut sp = spec();
        sp.noise_rate = 0.4;
        let s = generate(&sp).unwrap();
        assert!(s.train.corrupted_count() > 0);
        assert_eq!(s.val.corrupted_count(), 0);
        assert_eq!(s.test.corrupted_count(), 0);
        assert_eq!(s.val.y, s.val.y_true);
        for i in 0..s.train.len() {
            let e = s.train.example(i);
            assert_eq!(e.corrupted, e.y != e.y_true);
        }
    }

    #[test]
    fn exclusive_noise_always_flips() {
        let s = generate(&spec()).unwrap();
        let n = inject_label_noise(&s.train, 1.0, false, 11);
        assert_eq!(n.corrupted_count(), n.len());
    }

    #[test]
    fn imbalance_keeps_exact_counts() {
        let s = generate(&spec()).unwrap();
        let imb = make_imbalanced(&s.train, &[0.04, 1.0, 1.0, 1.0], 5).unwrap();
        assert_eq!(imb.label_histogram(), vec![20, 500, 500, 500]);
        let again = make_imbalanced(&s.train, &[0.04, 1.0, 1.0, 1.0], 5).unwrap();
        assert_eq!(imb.ids, again.ids);
        let same = make_imbalanced(&s.train, &[1.0; 4], 5).unwrap();
        assert_eq!(same, s.train);
    }

    #[test]
    fn imbalance_to_zero_rejected() {
        let s = generate(&spec()).unwrap();
        assert!(make_imbalanced(&s.train, &[0.0001, 1.0, 1.0, 1.0], 5).is_err());
    }

    #[test]
    fn batch_sizes_keep_short_tail() {
        let mut bs = BatchStream::new(10, 4, 1).unwrap();
        let sizes: Vec<usize> = (0..3).map(|_| bs.next_batch().len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        assert_eq!(bs.batches_per_epoch(), 3);
        let mut seen: Vec<usize> = Vec::new();
        let mut bs = BatchStream::new(10, 4, 1).unwrap();
        for _ in 0..3 {
            seen.extend(bs.next_batch());
        }
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn oversize_batch_rejected() {
        assert!(BatchStream::new(3, 4, 0).is_err());
    }

    #[test]
    fn dataset_file_roundtrip() {
        let mut sp = spec();
        sp.noise_rate = 0.3;
        let s = generate(&sp).unwrap();
        let bytes = s.train.to_bytes().unwrap();
        assert_eq!(Dataset::from_bytes(&bytes).unwrap(), s.train);
        assert!(Dataset::from_bytes(&bytes[..bytes.len() - 8]).is_err());
    }
}
