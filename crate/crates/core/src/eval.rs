//! Nearest-prototype classification and episodic evaluation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use crate::embeddings::{Dataset, GlobalPrototypeTable};
use crate::error::{Error, Result};
use crate::generator::{generate_prototype, GeneratorParams, Mode};
use crate::sampler::{Episode, EpisodeSampler, EpisodeSpec};

/// Test episodes per evaluation unless configured otherwise.
pub const DEFAULT_EPISODES: usize = 600;

/// z-value of a two-sided 95% normal interval.
pub const Z_95: f64 = 1.96;

/// How class prototypes are formed from an episode.
#[derive(Debug, Clone, Copy)]
pub enum PrototypeStrategy<'a> {
    /// Arithmetic mean of the support embeddings.
    Mean,
    /// Generated prototypes (eval mode).
    Generator(&'a GeneratorParams),
    /// Global prototypes of the episode classes; supports are ignored.
    GlobalOracle(&'a GlobalPrototypeTable),
}

impl PrototypeStrategy<'_> {
    pub fn kind(&self) -> StrategyKind {
        match self {
            PrototypeStrategy::Mean => StrategyKind::Mean,
            PrototypeStrategy::Generator(_) => StrategyKind::Generator,
            PrototypeStrategy::GlobalOracle(_) => StrategyKind::GlobalOracle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    Mean,
    Generator,
    GlobalOracle,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [Self::Mean, Self::Generator, Self::GlobalOracle];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Mean => "mean",
            StrategyKind::Generator => "generator",
            StrategyKind::GlobalOracle => "global_oracle",
        }
    }
}

impl core::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(squared_distance(a, b))
}

/// Index of the nearest prototype; ties go to the lowest index.
pub fn classify<P: AsRef<[f64]>>(query: &[f64], prototypes: &[P]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in prototypes.iter().enumerate() {
        let d = squared_distance(query, p.as_ref());
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// One prototype per episode class, in episode class order.
pub fn build_prototypes(
    dataset: &Dataset,
    episode: &Episode,
    strategy: &PrototypeStrategy<'_>,
) -> Result<Vec<Vec<f64>>> {
    (0..episode.way())
        .map(|c| match strategy {
            PrototypeStrategy::Mean => {
                let supports = episode.support_vectors(dataset, c);
                let mut mean = alloc::vec![0.0; dataset.dim()];
                for s in &supports {
                    for (m, x) in mean.iter_mut().zip(*s) {
                        *m += x;
                    }
                }
                let k = supports.len() as f64;
                Ok(mean.into_iter().map(|m| m / k).collect())
            }
            PrototypeStrategy::Generator(params) => {
                let supports = episode.support_vectors(dataset, c);
                Ok(generate_prototype(params, &supports, Mode::Eval)?.prototype)
            }
            PrototypeStrategy::GlobalOracle(table) => Ok(table.lookup(episode.class_ids[c])?.to_vec()),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub episode_index: u64,
    pub accuracy: f64,
    pub class_ids: Vec<u32>,
    /// `||prototype - global||` per episode class, when a table was available.
    pub proto_dists: Option<Vec<f64>>,
}

impl EpisodeOutcome {
    pub fn mean_proto_dist(&self) -> Option<f64> {
        self.proto_dists
            .as_ref()
            .map(|d| d.iter().sum::<f64>() / d.len() as f64)
    }
}

/// Classifies every query of `episode`. Distances to global prototypes are
/// measured against `table`, or against the oracle's own table when none is
/// given.
pub fn evaluate_episode(
    dataset: &Dataset,
    episode: &Episode,
    episode_index: u64,
    strategy: &PrototypeStrategy<'_>,
    table: Option<&GlobalPrototypeTable>,
) -> Result<EpisodeOutcome> {
    let prototypes = build_prototypes(dataset, episode, strategy)?;
    let correct = episode
        .query
        .iter()
        .filter(|q| classify(&dataset.get(q.sample).features, &prototypes) == q.label)
        .count();
    let table = table.or(match strategy {
        PrototypeStrategy::GlobalOracle(t) => Some(*t),
        _ => None,
    });
    let proto_dists = table
        .map(|t| {
            prototypes
                .iter()
                .zip(&episode.class_ids)
                .map(|(p, &id)| Ok(euclidean_distance(p, t.lookup(id)?)))
                .collect::<Result<Vec<f64>>>()
        })
        .transpose()?;
    Ok(EpisodeOutcome {
        episode_index,
        accuracy: correct as f64 / episode.query.len() as f64,
        class_ids: episode.class_ids.clone(),
        proto_dists,
    })
}

/// Mean and 95% half-width `1.96 * s / sqrt(n)` with the sample (n - 1)
/// standard deviation. The half-width is 0 for a single value.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, Z_95 * libm::sqrt(var) / libm::sqrt(n as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistance {
    pub class_id: u32,
    pub mean: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub strategy: StrategyKind,
    pub way: usize,
    pub shot: usize,
    pub outcomes: Vec<EpisodeOutcome>,
    pub mean_accuracy: f64,
    pub ci95: f64,
    /// Mean over all (episode, class) pairs of `||prototype - global||`.
    pub mean_proto_dist: Option<f64>,
    /// The same distance averaged per class id, ascending by id.
    pub class_proto_dists: Vec<ClassDistance>,
}

impl EvalReport {
    /// Aggregates outcomes in the order given.
    pub fn from_outcomes(strategy: StrategyKind, spec: &EpisodeSpec, outcomes: Vec<EpisodeOutcome>) -> Self {
        let accuracies: Vec<f64> = outcomes.iter().map(|o| o.accuracy).collect();
        let (mean_accuracy, ci95) = mean_ci95(&accuracies);

        let mut per_class: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
        let mut total = 0.0;
        let mut count = 0usize;
        let mut complete = !outcomes.is_empty();
        for o in &outcomes {
            match &o.proto_dists {
                Some(d) => {
                    for (&id, &x) in o.class_ids.iter().zip(d) {
                        let e = per_class.entry(id).or_insert((0.0, 0));
                        e.0 += x;
                        e.1 += 1;
                        total += x;
                        count += 1;
                    }
                }
                None => complete = false,
            }
        }
        let (mean_proto_dist, class_proto_dists) = if complete {
            let classes = per_class
                .into_iter()
                .map(|(class_id, (sum, n))| ClassDistance {
                    class_id,
                    mean: sum / n as f64,
                    count: n,
                })
                .collect();
            (Some(total / count as f64), classes)
        } else {
            (None, Vec::new())
        };
        Self {
            strategy,
            way: spec.way,
            shot: spec.shot,
            outcomes,
            mean_accuracy,
            ci95,
            mean_proto_dist,
            class_proto_dists,
        }
    }

    pub fn episode_count(&self) -> usize {
        self.outcomes.len()
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.outcomes.iter().map(|o| o.accuracy).collect()
    }
}

/// Evaluates episodes `0..episode_count` drawn by `sampler`.
pub fn evaluate_with(
    sampler: &EpisodeSampler<'_>,
    strategy: &PrototypeStrategy<'_>,
    episode_count: usize,
    table: Option<&GlobalPrototypeTable>,
) -> Result<EvalReport> {
    if episode_count == 0 {
        return Err(Error::Usage("episode_count must be at least 1".into()));
    }
    check_strategy(sampler.dataset(), strategy)?;
    let outcomes = (0..episode_count as u64)
        .map(|i| {
            let episode = sampler.sample(i)?;
            evaluate_episode(sampler.dataset(), &episode, i, strategy, table)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_outcomes(strategy.kind(), sampler.spec(), outcomes))
}

pub fn evaluate(
    dataset: &Dataset,
    strategy: &PrototypeStrategy<'_>,
    spec: EpisodeSpec,
    episode_count: usize,
    table: Option<&GlobalPrototypeTable>,
) -> Result<EvalReport> {
    let sampler = EpisodeSampler::new(dataset, spec)?;
    evaluate_with(&sampler, strategy, episode_count, table)
}

/// Rejects a strategy whose payload does not fit the dataset.
pub fn check_strategy(dataset: &Dataset, strategy: &PrototypeStrategy<'_>) -> Result<()> {
    match strategy {
        PrototypeStrategy::Mean => Ok(()),
        PrototypeStrategy::Generator(p) => {
            if p.config.d_model != dataset.dim() {
                return Err(Error::shape(
                    "generator strategy",
                    (1, p.config.d_model),
                    (1, dataset.dim()),
                ));
            }
            Ok(())
        }
        PrototypeStrategy::GlobalOracle(t) => {
            if t.dim() != dataset.dim() {
                return Err(Error::shape("global_oracle strategy", (1, t.dim()), (1, dataset.dim())));
            }
            Ok(())
        }
    }
}

/// Mean, generator and oracle reports over one shared episode sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub mean: EvalReport,
    pub generator: EvalReport,
    pub oracle: EvalReport,
}

impl Comparison {
    pub fn reports(&self) -> [&EvalReport; 3] {
        [&self.mean, &self.generator, &self.oracle]
    }
}

pub fn compare(
    dataset: &Dataset,
    params: &GeneratorParams,
    table: &GlobalPrototypeTable,
    spec: EpisodeSpec,
    episode_count: usize,
) -> Result<Comparison> {
    let sampler = EpisodeSampler::new(dataset, spec)?;
    let run = |s: PrototypeStrategy<'_>| evaluate_with(&sampler, &s, episode_count, Some(table));
    Ok(Comparison {
        mean: run(PrototypeStrategy::Mean)?,
        generator: run(PrototypeStrategy::Generator(params))?,
        oracle: run(PrototypeStrategy::GlobalOracle(table))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::{compute_global_prototypes, generate_synthetic, SyntheticSpec};
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn classify_examples() {
        let protos = [vec![0.0, 0.0], vec![1.0, 1.0], vec![5.0, -2.0]];
        assert_eq!(classify(&[5.0, -2.0], &protos), 2);
        // equidistant from 0 and 1
        assert_eq!(classify(&[0.5, 0.5], &protos), 0);
        // sqrt(17) vs sqrt(37)
        assert_eq!(classify(&[4.0, 1.0], &[vec![0.0, 0.0], vec![10.0, 0.0]]), 0);
    }

    #[test]
    fn ci_examples() {
        let (m, ci) = mean_ci95(&[0.8; 10]);
        assert!((m - 0.8).abs() < 1e-12 && ci.abs() < 1e-12);
        let (m, ci) = mean_ci95(&[0.0, 1.0]);
        assert_eq!(m, 0.5);
        assert!((ci - 1.96 * 0.5f64.sqrt() / 2.0f64.sqrt()).abs() < 1e-12);
        assert!((ci - 0.98).abs() < 1e-12);
        assert_eq!(mean_ci95(&[0.3]), (0.3, 0.0));
    }

    #[test]
    fn strategy_names_round_trip() {
        for k in StrategyKind::ALL {
            assert_eq!(k.name().parse::<StrategyKind>().unwrap(), k);
        }
        assert!("median".parse::<StrategyKind>().is_err());
    }

    fn separated(seed: u64) -> Dataset {
        generate_synthetic(&SyntheticSpec {
            classes: 10,
            dim: 8,
            samples_per_class: 40,
            mean_scale: 10.0,
            within_std: 0.1,
            outlier_fraction: 0.0,
            outlier_shift: 0.0,
            seed,
        })
        .unwrap()
    }

    fn spec() -> EpisodeSpec {
        EpisodeSpec {
            way: 5,
            shot: 5,
            queries_per_class: 15,
            seed: 3,
        }
    }

    #[test]
    fn oracle_on_separated_data() {
        let data = separated(1);
        let table = compute_global_prototypes(&data).unwrap();
        let r = evaluate(&data, &PrototypeStrategy::GlobalOracle(&table), spec(), 100, None).unwrap();
        assert!(r.mean_accuracy >= 0.99);
        for o in &r.outcomes {
            assert!(o.proto_dists.as_ref().unwrap().iter().all(|&d| d == 0.0));
        }
        assert_eq!(r.mean_proto_dist, Some(0.0));
    }

    #[test]
    fn oracle_with_foreign_table_fails() {
        let data = separated(1);
        let other = compute_global_prototypes(
            &generate_synthetic(&SyntheticSpec {
                classes: 3,
                dim: 8,
                samples_per_class: 5,
                mean_scale: 1.0,
                within_std: 1.0,
                outlier_fraction: 0.0,
                outlier_shift: 0.0,
                seed: 0,
            })
            .unwrap(),
        )
        .unwrap();
        let err = evaluate(&data, &PrototypeStrategy::GlobalOracle(&other), spec(), 10, None);
        assert!(matches!(err, Err(Error::MissingClass(_))));
    }

    #[test]
    fn single_episode_has_zero_ci() {
        let data = separated(2);
        let r = evaluate(&data, &PrototypeStrategy::Mean, spec(), 1, None).unwrap();
        assert_eq!(r.ci95, 0.0);
        assert_eq!(r.mean_proto_dist, None);
    }

    #[test]
    fn zero_episodes_rejected() {
        let data = separated(2);
        assert!(evaluate(&data, &PrototypeStrategy::Mean, spec(), 0, None).is_err());
    }

    #[test]
    fn mean_prototype_distance_falls_with_shot() {
        // Averaged over 20 seeds, ||mean prototype - global|| shrinks as K grows.
        let mut previous = f64::INFINITY;
        for shot in [1usize, 3, 9] {
            let mut total = 0.0;
            for seed in 0..20 {
                let data = generate_synthetic(&SyntheticSpec {
                    classes: 6,
                    dim: 8,
                    samples_per_class: 60,
                    mean_scale: 1.0,
                    within_std: 1.0,
                    outlier_fraction: 0.0,
                    outlier_shift: 0.0,
                    seed,
                })
                .unwrap();
                let table = compute_global_prototypes(&data).unwrap();
                let s = EpisodeSpec {
                    way: 5,
                    shot,
                    queries_per_class: 5,
                    seed,
                };
                let r = evaluate(&data, &PrototypeStrategy::Mean, s, 20, Some(&table)).unwrap();
                total += r.mean_proto_dist.unwrap();
            }
            assert!(total < previous, "shot {shot}: {total} >= {previous}");
            previous = total;
        }
    }

    proptest! {
        #[test]
        fn classify_translation_invariant(
            protos in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 2..6),
            query in proptest::collection::vec(-5.0f64..5.0, 3),
            shift in proptest::collection::vec(-100.0f64..100.0, 3),
        ) {
            let mut d: Vec<f64> = protos.iter().map(|p| squared_distance(&query, p)).collect();
            d.sort_by(f64::total_cmp);
            prop_assume!(d[1] - d[0] > 1e-6);
            let moved: Vec<Vec<f64>> = protos
                .iter()
                .map(|p| p.iter().zip(&shift).map(|(a, b)| a + b).collect())
                .collect();
            let q: Vec<f64> = query.iter().zip(&shift).map(|(a, b)| a + b).collect();
            prop_assert_eq!(classify(&query, &protos), classify(&q, &moved));
        }
    }
}
