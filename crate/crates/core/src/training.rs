//! Meta-training of the generator against global class prototypes.
//!
//! Every episode contributes one SGD step on the mean distance between the
//! generated prototypes of its classes and their global prototypes. After each
//! epoch the generator is scored on validation episodes; the learning rate is
//! multiplied by `decay_factor` once the score has not improved for `patience`
//! consecutive epochs, and the parameters of the best epoch are returned.

use alloc::format;
use alloc::vec::Vec;

use rand::RngCore;

use crate::densemath::{Tape, Var};
use crate::embeddings::{Dataset, GlobalPrototypeTable};
use crate::error::{Error, Result};
use crate::eval::{self, PrototypeStrategy};
use crate::generator::{record_prototype, GeneratorParams, Mode};
use crate::rng::{self, Purpose};
use crate::sampler::{Episode, EpisodeSampler, EpisodeSpec};

/// Distance used by the training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceKind {
    #[default]
    Euclidean,
    SquaredEuclidean,
}

fn apply_distance(kind: DistanceKind, diff: &[f64]) -> f64 {
    let sq: f64 = diff.iter().map(|x| x * x).sum();
    match kind {
        DistanceKind::Euclidean => libm::sqrt(sq),
        DistanceKind::SquaredEuclidean => sq,
    }
}

/// Mean distance between generated prototypes and the global prototypes of
/// the episode classes.
pub fn distance_loss<P: AsRef<[f64]>>(
    generated: &[P],
    table: &GlobalPrototypeTable,
    class_ids: &[u32],
    kind: DistanceKind,
) -> Result<f64> {
    if generated.len() != class_ids.len() || generated.is_empty() {
        return Err(Error::Usage(format!(
            "{} generated prototypes for {} classes",
            generated.len(),
            class_ids.len()
        )));
    }
    let mut total = 0.0;
    for (p, &id) in generated.iter().zip(class_ids) {
        let target = table.lookup(id)?;
        let p = p.as_ref();
        if p.len() != target.len() {
            return Err(Error::shape("distance_loss", (1, p.len()), (1, target.len())));
        }
        let diff: Vec<f64> = p.iter().zip(target).map(|(a, b)| a - b).collect();
        total += apply_distance(kind, &diff);
    }
    Ok(total / generated.len() as f64)
}

fn record_distance_loss(tape: &mut Tape, prototypes: &[Var], targets: &[&[f64]], kind: DistanceKind) -> Result<Var> {
    let mut terms = Vec::with_capacity(prototypes.len());
    for (&p, t) in prototypes.iter().zip(targets) {
        let target = tape.leaf(crate::densemath::Matrix::row_vector(t.to_vec()));
        let diff = tape.sub(p, target)?;
        terms.push(match kind {
            DistanceKind::Euclidean => tape.norm(diff),
            DistanceKind::SquaredEuclidean => tape.squared_norm(diff),
        });
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    Ok(tape.scale(total, 1.0 / terms.len() as f64))
}

/// Support sets and targets of one training episode.
#[derive(Debug, Clone)]
pub struct EpisodeBatch<'d> {
    pub supports: Vec<Vec<&'d [f64]>>,
    pub targets: Vec<&'d [f64]>,
}

impl<'d> EpisodeBatch<'d> {
    pub fn new(dataset: &'d Dataset, episode: &Episode, table: &'d GlobalPrototypeTable) -> Result<Self> {
        let supports = (0..episode.way())
            .map(|c| episode.support_vectors(dataset, c))
            .collect();
        let targets = episode
            .class_ids
            .iter()
            .map(|&id| table.lookup(id))
            .collect::<Result<_>>()?;
        Ok(Self { supports, targets })
    }
}

/// Loss of one episode and, when requested, its parameter gradients.
///
/// In train mode each class draws its dropout mask from `dropout` in class order.
pub fn episode_loss_and_gradients(
    params: &GeneratorParams,
    batch: &EpisodeBatch<'_>,
    kind: DistanceKind,
    mut dropout: Option<&mut dyn RngCore>,
    with_gradients: bool,
) -> Result<(f64, Option<GeneratorParams>)> {
    if batch.supports.is_empty() || batch.supports.len() != batch.targets.len() {
        return Err(Error::Usage("episode batch needs one target per class".into()));
    }
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let mut prototypes = Vec::with_capacity(batch.supports.len());
    for supports in &batch.supports {
        let mode = match dropout.as_deref_mut() {
            Some(rng) => Mode::Train(rng),
            None => Mode::Eval,
        };
        prototypes.push(record_prototype(&mut tape, &vars, &params.config, supports, mode)?.prototype);
    }
    let loss = record_distance_loss(&mut tape, &prototypes, &batch.targets, kind)?;
    let value = tape.value(loss).data()[0];
    if !with_gradients {
        return Ok((value, None));
    }
    let grads = tape.backward(loss, 1.0)?;
    Ok((value, Some(vars.gradients(&grads, params))))
}

/// `v <- momentum * v + g; theta <- theta - lr * v`.
pub fn sgd_step(
    params: &mut GeneratorParams,
    grads: &GeneratorParams,
    lr: f64,
    momentum: f64,
    velocity: &mut GeneratorParams,
) -> Result<()> {
    let p = params.matrices_mut();
    let g = grads.matrices();
    let v = velocity.matrices_mut();
    if p.len() != g.len() || p.len() != v.len() {
        return Err(Error::Usage("parameter, gradient and velocity layouts differ".into()));
    }
    for ((p, g), v) in p.into_iter().zip(g).zip(v) {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::shape("sgd_step", p.shape(), g.shape()));
        }
        for ((pi, gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = momentum * *vi + gi;
            *pi -= lr * *vi;
        }
    }
    Ok(())
}

/// Multiplies the learning rate by `decay` after `patience` consecutive
/// observations that fail to beat the best score by more than `tolerance`.
#[derive(Debug, Clone)]
pub struct PlateauSchedule {
    lr: f64,
    decay: f64,
    patience: usize,
    tolerance: f64,
    best: Option<f64>,
    stale: usize,
}

impl PlateauSchedule {
    pub const TOLERANCE: f64 = 1e-6;

    pub fn new(initial_lr: f64, decay: f64, patience: usize) -> Self {
        Self {
            lr: initial_lr,
            decay,
            patience,
            tolerance: Self::TOLERANCE,
            best: None,
            stale: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Returns whether `score` counts as an improvement.
    pub fn observe(&mut self, score: f64) -> bool {
        let improved = match self.best {
            None => true,
            Some(best) => score > best + self.tolerance,
        };
        if improved {
            self.best = Some(score);
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                self.lr *= self.decay;
                self.stale = 0;
            }
        }
        improved
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub episode: EpisodeSpec,
    pub initial_lr: f64,
    pub decay_factor: f64,
    pub patience: usize,
    pub momentum: f64,
    pub validation: EpisodeSpec,
    pub validation_episodes: usize,
    pub distance: DistanceKind,
    /// Seeds the dropout masks.
    pub seed: u64,
}

impl TrainConfig {
    pub const DEFAULT_EPOCHS: usize = 200;
    pub const DEFAULT_EPISODES_PER_EPOCH: usize = 200;
    pub const DEFAULT_LR: f64 = 0.01;
    pub const DEFAULT_DECAY: f64 = 0.618;
    pub const DEFAULT_PATIENCE: usize = 7;

    /// 200 epochs of 200 episodes, SGD from lr 0.01 without momentum, decay
    /// 0.618 after 7 stale epochs.
    pub fn new(episode: EpisodeSpec, validation: EpisodeSpec) -> Self {
        Self {
            epochs: Self::DEFAULT_EPOCHS,
            episodes_per_epoch: Self::DEFAULT_EPISODES_PER_EPOCH,
            episode,
            initial_lr: Self::DEFAULT_LR,
            decay_factor: Self::DEFAULT_DECAY,
            patience: Self::DEFAULT_PATIENCE,
            momentum: 0.0,
            validation,
            validation_episodes: 100,
            distance: DistanceKind::Euclidean,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Config("initial_lr must be positive".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return Err(Error::Config("decay_factor must lie in (0, 1)".into()));
        }
        if self.patience < 1 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if self.validation_episodes < 1 {
            return Err(Error::Config("validation_episodes must be at least 1".into()));
        }
        self.episode.validate()?;
        self.validation.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_score: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were returned; `None` without epochs.
    pub best_epoch: Option<usize>,
}

/// Trains with validation accuracy of the generator on `val` as the score.
pub fn train(
    train_data: &Dataset,
    val_data: &Dataset,
    table: &GlobalPrototypeTable,
    initial: GeneratorParams,
    config: &TrainConfig,
) -> Result<(GeneratorParams, TrainLog)> {
    let val_sampler = EpisodeSampler::new(val_data, config.validation)?;
    val_sampler.check_capacity()?;
    train_with_validator(train_data, table, initial, config, |params, _| {
        let report = eval::evaluate_with(
            &val_sampler,
            &PrototypeStrategy::Generator(params),
            config.validation_episodes,
            None,
        )?;
        Ok(report.mean_accuracy)
    })
}

/// Training loop with a caller-supplied per-epoch score (higher is better).
/// The validator receives the current parameters and the 1-based epoch.
pub fn train_with_validator(
    train_data: &Dataset,
    table: &GlobalPrototypeTable,
    initial: GeneratorParams,
    config: &TrainConfig,
    mut validator: impl FnMut(&GeneratorParams, usize) -> Result<f64>,
) -> Result<(GeneratorParams, TrainLog)> {
    config.validate()?;
    initial.config.validate()?;
    if table.dim() != initial.config.d_model || train_data.dim() != initial.config.d_model {
        return Err(Error::shape(
            "train",
            (train_data.dim(), table.dim()),
            (initial.config.d_model, initial.config.d_model),
        ));
    }
    let mut log = TrainLog::default();
    if config.epochs == 0 {
        return Ok((initial, log));
    }
    let sampler = EpisodeSampler::new(train_data, config.episode)?;
    sampler.check_capacity()?;

    let mut params = initial;
    let mut velocity = params.zeros_like();
    let mut schedule = PlateauSchedule::new(config.initial_lr, config.decay_factor, config.patience);
    let mut best: Option<(f64, GeneratorParams)> = None;

    for epoch in 1..=config.epochs {
        let lr = schedule.lr();
        let mut total = 0.0;
        for step in 0..config.episodes_per_epoch {
            let index = ((epoch - 1) * config.episodes_per_epoch + step) as u64;
            let episode = sampler.sample(index)?;
            let batch = EpisodeBatch::new(train_data, &episode, table)?;
            let mut dropout = rng::stream(config.seed, Purpose::Dropout, index);
            let (loss, grads) = episode_loss_and_gradients(&params, &batch, config.distance, Some(&mut dropout), true)?;
            let grads = grads.expect("gradients requested");
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    what: "loss",
                    epoch,
                    episode: step,
                });
            }
            if !grads.is_finite() {
                return Err(Error::NonFinite {
                    what: "gradient",
                    epoch,
                    episode: step,
                });
            }
            sgd_step(&mut params, &grads, lr, config.momentum, &mut velocity)?;
            total += loss;
        }
        let score = validator(&params, epoch)?;
        let train_loss = if config.episodes_per_epoch > 0 {
            total / config.episodes_per_epoch as f64
        } else {
            0.0
        };
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_score: score,
            lr,
        });
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, params.clone()));
            log.best_epoch = Some(epoch);
        }
        schedule.observe(score);
    }
    let (_, best_params) = best.expect("at least one epoch ran");
    Ok((best_params, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::{compute_global_prototypes, Embedding};
    use crate::generator::AttentionConfig;
    use alloc::vec;

    fn table(entries: &[(u32, Vec<f64>)]) -> GlobalPrototypeTable {
        let samples = entries.iter().map(|(id, v)| Embedding::new(*id, v.clone())).collect();
        let dim = entries[0].1.len();
        compute_global_prototypes(&Dataset::new(dim, samples).unwrap()).unwrap()
    }

    #[test]
    fn loss_is_zero_at_targets() {
        let t = table(&[(0, vec![1.0, 2.0]), (1, vec![-1.0, 0.5])]);
        let gen = [vec![1.0, 2.0], vec![-1.0, 0.5]];
        assert_eq!(distance_loss(&gen, &t, &[0, 1], DistanceKind::Euclidean).unwrap(), 0.0);
    }

    #[test]
    fn loss_three_four_five() {
        let t = table(&[(3, vec![3.0, 4.0])]);
        let gen = [vec![0.0, 0.0]];
        assert_eq!(distance_loss(&gen, &t, &[3], DistanceKind::Euclidean).unwrap(), 5.0);
        assert_eq!(
            distance_loss(&gen, &t, &[3], DistanceKind::SquaredEuclidean).unwrap(),
            25.0
        );
    }

    #[test]
    fn loss_is_homogeneous() {
        let t = table(&[(0, vec![1.0, -2.0, 0.5]), (1, vec![0.0, 3.0, 1.0])]);
        let gen = [vec![0.3, 0.1, -0.7], vec![2.0, 2.0, 2.0]];
        let base = distance_loss(&gen, &t, &[0, 1], DistanceKind::Euclidean).unwrap();
        let c = 3.5;
        let t2 = table(&[
            (0, t.get(0).unwrap().iter().map(|x| x * c).collect()),
            (1, t.get(1).unwrap().iter().map(|x| x * c).collect()),
        ]);
        let gen2: Vec<Vec<f64>> = gen.iter().map(|v| v.iter().map(|x| x * c).collect()).collect();
        let scaled = distance_loss(&gen2, &t2, &[0, 1], DistanceKind::Euclidean).unwrap();
        assert!((scaled - c * base).abs() < 1e-12);
    }

    #[test]
    fn loss_missing_class() {
        let t = table(&[(0, vec![1.0])]);
        assert_eq!(
            distance_loss(&[vec![0.0]], &t, &[7], DistanceKind::Euclidean),
            Err(Error::MissingClass(7))
        );
    }

    fn params() -> GeneratorParams {
        GeneratorParams::init(
            AttentionConfig {
                heads: 1,
                d_model: 3,
                d_k: 2,
                d_v: 2,
                dropout_rate: 0.0,
                layer_norm_eps: 1e-5,
            },
            0,
        )
        .unwrap()
    }

    fn filled(p: &GeneratorParams, value: f64) -> GeneratorParams {
        let mut g = p.zeros_like();
        for m in g.matrices_mut() {
            m.data_mut().fill(value);
        }
        g
    }

    #[test]
    fn sgd_zero_lr_is_noop() {
        let p0 = params();
        let mut p = p0.clone();
        let mut v = p.zeros_like();
        sgd_step(&mut p, &filled(&p0, 3.0), 0.0, 0.0, &mut v).unwrap();
        assert_eq!(p, p0);
    }

    #[test]
    fn sgd_unit_step_subtracts_gradient() {
        let p0 = params();
        let mut p = p0.clone();
        let mut v = p.zeros_like();
        sgd_step(&mut p, &filled(&p0, 1.0), 1.0, 0.0, &mut v).unwrap();
        for (a, b) in p.matrices().iter().zip(p0.matrices()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*x, y - 1.0);
            }
        }
    }

    #[test]
    fn sgd_momentum_matches_hand_unroll() {
        // v1 = g1, p1 = p0 - lr g1; v2 = 0.9 g1 + g2, p2 = p1 - lr v2
        let (lr, mu, g1, g2) = (0.05, 0.9, 0.4, -1.3);
        let p0 = params();
        let mut p = p0.clone();
        let mut v = p.zeros_like();
        sgd_step(&mut p, &filled(&p0, g1), lr, mu, &mut v).unwrap();
        sgd_step(&mut p, &filled(&p0, g2), lr, mu, &mut v).unwrap();
        for (a, b) in p.matrices().iter().zip(p0.matrices()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                let expected = y - lr * g1 - lr * (mu * g1 + g2);
                assert!((x - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn plateau_decays_every_patience_window() {
        let mut s = PlateauSchedule::new(0.01, 0.618, 7);
        assert!(s.observe(0.5));
        let mut lrs = vec![];
        for i in 0..21 {
            s.observe(0.5 - 0.01 * i as f64);
            lrs.push(s.lr());
        }
        assert_eq!(lrs[5], 0.01);
        assert_eq!(lrs[6], 0.01 * 0.618);
        assert_eq!(lrs[13], 0.01 * 0.618 * 0.618);
        assert_eq!(lrs[20], 0.01 * 0.618 * 0.618 * 0.618);
    }

    #[test]
    fn plateau_tolerance_counts_tiny_gains_as_stale() {
        let mut s = PlateauSchedule::new(1.0, 0.5, 1);
        s.observe(0.5);
        assert!(!s.observe(0.5 + 5e-7));
        assert_eq!(s.lr(), 0.5);
        assert!(s.observe(0.6));
    }

    #[test]
    fn config_validation() {
        let spec = EpisodeSpec {
            way: 5,
            shot: 1,
            queries_per_class: 15,
            seed: 0,
        };
        let c = TrainConfig::new(spec, spec);
        assert!(c.validate().is_ok());
        assert_eq!((c.epochs, c.episodes_per_epoch, c.patience), (200, 200, 7));
        assert_eq!((c.initial_lr, c.decay_factor, c.momentum), (0.01, 0.618, 0.0));
        assert!(TrainConfig {
            decay_factor: 1.0,
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            initial_lr: 0.0,
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            patience: 0,
            ..c.clone()
        }
        .validate()
        .is_err());
    }
}
