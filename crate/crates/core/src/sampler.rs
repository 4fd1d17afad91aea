//! N-way K-shot episode construction.
//!
//! An episode is a pure function of `(seed, episode_index)`: the random stream
//! is keyed by the seed and positioned by the index, so episodes can be drawn
//! in any order or in parallel.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::index;

use crate::embeddings::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeSpec {
    pub way: usize,
    pub shot: usize,
    pub queries_per_class: usize,
    pub seed: u64,
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.way < 2 {
            return Err(Error::Config(format!("way must be at least 2, got {}", self.way)));
        }
        if self.shot < 1 {
            return Err(Error::Config("shot must be at least 1".into()));
        }
        if self.queries_per_class < 1 {
            return Err(Error::Config("queries_per_class must be at least 1".into()));
        }
        Ok(())
    }

    pub fn samples_per_class(&self) -> usize {
        self.shot + self.queries_per_class
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryItem {
    /// Index into the dataset.
    pub sample: usize,
    /// Class position within the episode, in `0..way`.
    pub label: usize,
}

/// Support and query sets of one episode, as indices into the source dataset.
///
/// Episode class `i` is the `i`-th smallest of the drawn class ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub class_ids: Vec<u32>,
    /// `support[i]` holds the K sample indices of episode class `i`.
    pub support: Vec<Vec<usize>>,
    pub query: Vec<QueryItem>,
}

impl Episode {
    pub fn way(&self) -> usize {
        self.class_ids.len()
    }

    pub fn support_vectors<'d>(&self, dataset: &'d Dataset, class: usize) -> Vec<&'d [f64]> {
        self.support[class]
            .iter()
            .map(|&i| dataset.get(i).features.as_slice())
            .collect()
    }

    /// Same episode with the support samples of every class reordered.
    pub fn with_support_order(&self, mut reorder: impl FnMut(usize, &mut Vec<usize>)) -> Self {
        let mut out = self.clone();
        for (class, group) in out.support.iter_mut().enumerate() {
            reorder(class, group);
        }
        out
    }
}

/// Draws episodes from one dataset under a fixed [`EpisodeSpec`].
#[derive(Debug, Clone)]
pub struct EpisodeSampler<'a> {
    dataset: &'a Dataset,
    spec: EpisodeSpec,
    classes: Vec<(u32, Vec<usize>)>,
}

impl<'a> EpisodeSampler<'a> {
    pub fn new(dataset: &'a Dataset, spec: EpisodeSpec) -> Result<Self> {
        spec.validate()?;
        let classes: Vec<(u32, Vec<usize>)> = dataset.class_index().into_iter().collect();
        if classes.len() < spec.way {
            return Err(Error::InsufficientClasses {
                available: classes.len(),
                required: spec.way,
            });
        }
        Ok(Self { dataset, spec, classes })
    }

    pub fn spec(&self) -> &EpisodeSpec {
        &self.spec
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.dataset
    }

    /// Fails on the first class (by id) too small for any episode.
    pub fn check_capacity(&self) -> Result<()> {
        let required = self.spec.samples_per_class();
        for (id, members) in &self.classes {
            if members.len() < required {
                return Err(Error::Capacity {
                    class_id: *id,
                    available: members.len(),
                    required,
                });
            }
        }
        Ok(())
    }

    pub fn sample(&self, episode_index: u64) -> Result<Episode> {
        let spec = &self.spec;
        let mut rng = rng::stream(spec.seed, Purpose::Episode, episode_index);

        let mut picked: Vec<usize> = index::sample(&mut rng, self.classes.len(), spec.way).into_vec();
        // classes are stored by ascending id, so sorting positions sorts ids
        picked.sort_unstable();

        let required = spec.samples_per_class();
        let mut class_ids = Vec::with_capacity(spec.way);
        let mut support = Vec::with_capacity(spec.way);
        let mut query = Vec::with_capacity(spec.way * spec.queries_per_class);
        for (label, &pos) in picked.iter().enumerate() {
            let (id, members) = &self.classes[pos];
            if members.len() < required {
                return Err(Error::Capacity {
                    class_id: *id,
                    available: members.len(),
                    required,
                });
            }
            let draw = index::sample(&mut rng, members.len(), required);
            let mut draw = draw.iter().map(|i| members[i]);
            class_ids.push(*id);
            support.push(draw.by_ref().take(spec.shot).collect());
            query.extend(draw.map(|sample| QueryItem { sample, label }));
        }
        Ok(Episode {
            class_ids,
            support,
            query,
        })
    }
}

/// One-off convenience around [`EpisodeSampler`].
pub fn sample_episode(dataset: &Dataset, spec: EpisodeSpec, episode_index: u64) -> Result<Episode> {
    EpisodeSampler::new(dataset, spec)?.sample(episode_index)
}
