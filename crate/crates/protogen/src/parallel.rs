//! Episode evaluation spread over a rayon pool.
//!
//! Episodes are independent functions of their index, so they are computed in
//! parallel and collected in index order; every reduction then runs
//! sequentially and results do not depend on the thread count.

use protogen_core::eval::{self, Comparison, EvalReport, PrototypeStrategy};
use protogen_core::training::{self, TrainConfig, TrainLog};
use protogen_core::{Dataset, EpisodeSampler, EpisodeSpec, GeneratorParams, GlobalPrototypeTable};
use rayon::prelude::*;

/// Caps the number of worker threads when set to a positive integer.
pub const THREADS_ENV: &str = "PROTOGEN_THREADS";

/// Builds the worker pool, honouring [`THREADS_ENV`].
pub fn thread_pool() -> rayon::ThreadPool {
    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
}

pub fn evaluate_with(
    pool: &rayon::ThreadPool,
    sampler: &EpisodeSampler<'_>,
    strategy: &PrototypeStrategy<'_>,
    episode_count: usize,
    table: Option<&GlobalPrototypeTable>,
) -> protogen_core::Result<EvalReport> {
    if episode_count == 0 {
        return Err(protogen_core::Error::Usage("episode_count must be at least 1".into()));
    }
    eval::check_strategy(sampler.dataset(), strategy)?;
    let outcomes = pool.install(|| {
        (0..episode_count as u64)
            .into_par_iter()
            .map(|i| {
                let episode = sampler.sample(i)?;
                eval::evaluate_episode(sampler.dataset(), &episode, i, strategy, table)
            })
            .collect::<protogen_core::Result<Vec<_>>>()
    })?;
    Ok(EvalReport::from_outcomes(strategy.kind(), sampler.spec(), outcomes))
}

pub fn evaluate(
    pool: &rayon::ThreadPool,
    dataset: &Dataset,
    strategy: &PrototypeStrategy<'_>,
    spec: EpisodeSpec,
    episode_count: usize,
    table: Option<&GlobalPrototypeTable>,
) -> protogen_core::Result<EvalReport> {
    let sampler = EpisodeSampler::new(dataset, spec)?;
    evaluate_with(pool, &sampler, strategy, episode_count, table)
}

pub fn compare(
    pool: &rayon::ThreadPool,
    dataset: &Dataset,
    params: &GeneratorParams,
    table: &GlobalPrototypeTable,
    spec: EpisodeSpec,
    episode_count: usize,
) -> protogen_core::Result<Comparison> {
    let sampler = EpisodeSampler::new(dataset, spec)?;
    let run = |s: PrototypeStrategy<'_>| evaluate_with(pool, &sampler, &s, episode_count, Some(table));
    Ok(Comparison {
        mean: run(PrototypeStrategy::Mean)?,
        generator: run(PrototypeStrategy::Generator(params))?,
        oracle: run(PrototypeStrategy::GlobalOracle(table))?,
    })
}

/// [`training::train`] with validation episodes evaluated on `pool`.
pub fn train(
    pool: &rayon::ThreadPool,
    train_data: &Dataset,
    val_data: &Dataset,
    table: &GlobalPrototypeTable,
    initial: GeneratorParams,
    config: &TrainConfig,
) -> protogen_core::Result<(GeneratorParams, TrainLog)> {
    let val_sampler = EpisodeSampler::new(val_data, config.validation)?;
    val_sampler.check_capacity()?;
    training::train_with_validator(train_data, table, initial, config, |params, _| {
        let report = evaluate_with(
            pool,
            &val_sampler,
            &PrototypeStrategy::Generator(params),
            config.validation_episodes,
            None,
        )?;
        Ok(report.mean_accuracy)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use protogen_core::embeddings::{compute_global_prototypes, generate_synthetic};
    use protogen_core::{AttentionConfig, SyntheticSpec};

    #[test]
    fn matches_sequential_evaluation_bit_for_bit() {
        let data = generate_synthetic(&SyntheticSpec {
            classes: 8,
            dim: 8,
            samples_per_class: 30,
            mean_scale: 1.0,
            within_std: 1.0,
            outlier_fraction: 0.2,
            outlier_shift: 4.0,
            seed: 4,
        })
        .unwrap();
        let table = compute_global_prototypes(&data).unwrap();
        let params = GeneratorParams::init(AttentionConfig::for_dim(8), 1).unwrap();
        let spec = EpisodeSpec {
            way: 4,
            shot: 3,
            queries_per_class: 5,
            seed: 9,
        };
        let serial = eval::compare(&data, &params, &table, spec, 37).unwrap();
        for threads in [1, 3] {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            assert_eq!(compare(&pool, &data, &params, &table, spec, 37).unwrap(), serial);
        }
    }
}
