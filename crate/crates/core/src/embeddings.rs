//! Labelled embeddings, synthetic contaminated datasets and global class
//! prototypes.
//!
//! A [`Dataset`] stands in for the features a frozen backbone would extract.
//! Its global prototypes (the per-class mean over every sample) are the
//! supervision target for the generator.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub class_id: u32,
    pub features: Vec<f64>,
}

impl Embedding {
    pub fn new(class_id: u32, features: Vec<f64>) -> Self {
        Self { class_id, features }
    }
}

/// Embeddings sharing one dimension, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    samples: Vec<Embedding>,
}

impl Dataset {
    /// Checks that every sample has dimension `dim` and finite entries.
    pub fn new(dim: usize, samples: Vec<Embedding>) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != dim {
                return Err(Error::Usage(format!(
                    "sample {i} has dimension {}, dataset dimension is {dim}",
                    s.features.len()
                )));
            }
            if !s.features.iter().all(|x| x.is_finite()) {
                return Err(Error::Usage(format!("sample {i} has a non-finite feature")));
            }
        }
        Ok(Self { dim, samples })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Embedding] {
        &self.samples
    }

    pub fn get(&self, index: usize) -> &Embedding {
        &self.samples[index]
    }

    /// Sample indices per class, in dataset order, keyed by ascending class id.
    pub fn class_index(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut map: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            map.entry(s.class_id).or_default().push(i);
        }
        map
    }

    pub fn class_ids(&self) -> Vec<u32> {
        self.class_index().into_keys().collect()
    }
}

/// Parameters of the synthetic contamination model.
///
/// Class means are drawn from `N(0, mean_scale^2 I)`, samples from
/// `N(mean, within_std^2 I)`. In every class `floor(outlier_fraction * M)`
/// samples are then moved by `outlier_shift * within_std` along a uniformly
/// random direction.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub mean_scale: f64,
    pub within_std: f64,
    pub outlier_fraction: f64,
    pub outlier_shift: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.into()));
        if self.classes < 2 {
            return fail("synthetic data needs at least 2 classes");
        }
        if self.dim == 0 {
            return fail("embedding dimension must be positive");
        }
        if self.samples_per_class == 0 {
            return fail("samples_per_class must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.outlier_fraction) {
            return fail("outlier_fraction must lie in [0, 1]");
        }
        if !(self.outlier_shift >= 0.0 && self.outlier_shift.is_finite()) {
            return fail("outlier_shift must be finite and non-negative");
        }
        if !(self.mean_scale >= 0.0 && self.mean_scale.is_finite()) {
            return fail("mean_scale must be finite and non-negative");
        }
        if !(self.within_std >= 0.0 && self.within_std.is_finite()) {
            return fail("within_std must be finite and non-negative");
        }
        Ok(())
    }

    pub fn outliers_per_class(&self) -> usize {
        libm::floor(self.outlier_fraction * self.samples_per_class as f64) as usize
    }
}

/// A synthetic dataset together with the ground truth that produced it.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// Drawn mean of class `c` at index `c`.
    pub class_means: Vec<Vec<f64>>,
    pub is_outlier: Vec<bool>,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    generate_synthetic_with_truth(spec).map(|s| s.dataset)
}

/// Class means and clean samples come from one random stream, outlier choice
/// and directions from another, so datasets that differ only in the outlier
/// settings share their clean samples.
pub fn generate_synthetic_with_truth(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let (c, d, m) = (spec.classes, spec.dim, spec.samples_per_class);
    let mut clean = rng::stream(spec.seed, Purpose::Synthetic, 0);
    let mut contam = rng::stream(spec.seed, Purpose::Synthetic, 1);

    let class_means: Vec<Vec<f64>> = (0..c).map(|_| gaussian(&mut clean, d, spec.mean_scale)).collect();

    let n_out = spec.outliers_per_class();
    let shift = spec.outlier_shift * spec.within_std;
    let mut samples = Vec::with_capacity(c * m);
    let mut is_outlier = Vec::with_capacity(c * m);
    for (class, mean) in class_means.iter().enumerate() {
        let mut flags = vec![false; m];
        for i in index::sample(&mut contam, m, n_out) {
            flags[i] = true;
        }
        for flag in flags {
            let noise = gaussian(&mut clean, d, spec.within_std);
            let mut x: Vec<f64> = mean.iter().zip(&noise).map(|(a, b)| a + b).collect();
            if flag {
                for (xi, ui) in x.iter_mut().zip(unit_direction(&mut contam, d)) {
                    *xi += shift * ui;
                }
            }
            samples.push(Embedding::new(class as u32, x));
            is_outlier.push(flag);
        }
    }
    Ok(SyntheticData {
        dataset: Dataset::new(d, samples)?,
        class_means,
        is_outlier,
    })
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit_direction<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v = gaussian(rng, dim, 1.0);
        let norm = libm::sqrt(v.iter().map(|x| x * x).sum());
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrototype {
    pub vector: Vec<f64>,
    pub count: usize,
}

/// Per-class mean embedding over a whole dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalPrototypeTable {
    dim: usize,
    entries: BTreeMap<u32, ClassPrototype>,
}

impl GlobalPrototypeTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, class_id: u32) -> Option<&[f64]> {
        self.entries.get(&class_id).map(|p| p.vector.as_slice())
    }

    pub fn lookup(&self, class_id: u32) -> Result<&[f64]> {
        self.get(class_id).ok_or(Error::MissingClass(class_id))
    }

    pub fn count(&self, class_id: u32) -> Option<usize> {
        self.entries.get(&class_id).map(|p| p.count)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &ClassPrototype)> {
        self.entries.iter().map(|(&k, v)| (k, v))
    }
}

/// Arithmetic mean per class, accumulated left to right in dataset order.
pub fn compute_global_prototypes(dataset: &Dataset) -> Result<GlobalPrototypeTable> {
    if dataset.is_empty() {
        return Err(Error::Usage("cannot compute prototypes of an empty dataset".into()));
    }
    let dim = dataset.dim();
    let mut sums: BTreeMap<u32, (Vec<f64>, usize)> = BTreeMap::new();
    for s in dataset.samples() {
        let (sum, count) = sums.entry(s.class_id).or_insert_with(|| (vec![0.0; dim], 0));
        for (acc, x) in sum.iter_mut().zip(&s.features) {
            *acc += x;
        }
        *count += 1;
    }
    let entries = sums
        .into_iter()
        .map(|(id, (sum, count))| {
            let vector = sum.into_iter().map(|x| x / count as f64).collect();
            (id, ClassPrototype { vector, count })
        })
        .collect();
    Ok(GlobalPrototypeTable { dim, entries })
}
