//! Per-element stochastic gradient training with learning-rate halving,
//! in either three phases or one joint phase.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{ItemProfiles, RatingScale, SparseRatings};
use crate::error::{Error, Result};
use crate::network::{Activation, Network, StepScratch, Topology};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Learning rate at the start of every phase.
    pub eta_initial: f64,
    /// A phase ends once the learning rate falls to this value or below.
    pub eta_final: f64,
    /// Relative RMSE improvement expected per epoch before the rate halves.
    pub gamma: f64,
    pub lambda: f64,
    pub latent: usize,
    pub hidden: Vec<usize>,
    pub init_deviation: f64,
    pub seed: u64,
    pub three_phase: bool,
    /// Hard cap on epochs per phase.
    pub max_epochs: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta_initial: 0.1,
            eta_final: 1e-4,
            gamma: 1e-4,
            lambda: 0.01,
            latent: 8,
            hidden: Vec::new(),
            init_deviation: 0.01,
            seed: 0,
            three_phase: true,
            max_epochs: 1000,
            hidden_activation: Activation::Tanh,
            output_activation: Activation::Identity,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.eta_final > 0.0 && self.eta_initial > self.eta_final) || !self.eta_initial.is_finite() {
            return bad(format!(
                "need eta_initial > eta_final > 0, got {} and {}",
                self.eta_initial, self.eta_final
            ));
        }
        if !(self.init_deviation > 0.0 && self.init_deviation.is_finite()) {
            return bad(format!("init_deviation must be positive, got {}", self.init_deviation));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !self.gamma.is_finite() {
            return bad(format!("gamma must be finite, got {}", self.gamma));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive".into());
        }
        Ok(())
    }

    /// Most epochs in a row a phase can run without enough improvement.
    pub fn max_stalled_epochs(&self) -> u32 {
        (self.eta_initial / self.eta_final).log2().ceil() as u32
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    /// Latent vectors with a temporary single-layer network.
    Latents,
    /// Weights only, latent vectors frozen.
    Weights,
    /// Weights and latents together, without regularization.
    Joint,
    /// Weights and latents together from a random start, regularized.
    Single,
}

impl Phase {
    fn updates_latents(self) -> bool {
        !matches!(self, Phase::Weights)
    }

    fn regularized(self) -> bool {
        !matches!(self, Phase::Joint)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Latents => "1",
            Phase::Weights => "2",
            Phase::Joint => "3",
            Phase::Single => "single",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub phase: Phase,
    /// 1-based within the phase.
    pub epoch: usize,
    /// Learning rate used during the epoch.
    pub eta: f64,
    /// RMSE on the normalized scale over the epoch's presentations.
    pub rmse: f64,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "phase={} epoch={} eta={:e} rmse={:.8}",
            self.phase, self.epoch, self.eta, self.rmse
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn phase(&self, phase: Phase) -> impl Iterator<Item = &EpochRecord> {
        self.epochs.iter().filter(move |r| r.phase == phase)
    }
}

/// Learning-rate schedule: halve whenever `1 - s / s_prev < gamma`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceState {
    pub eta: f64,
    pub previous_rmse: f64,
    pub epoch: usize,
    pub stalled: u32,
}

impl ConvergenceState {
    pub fn new(eta: f64) -> Self {
        ConvergenceState {
            eta,
            previous_rmse: f64::INFINITY,
            epoch: 0,
            stalled: 0,
        }
    }

    /// Record an epoch's RMSE. Returns true when the rate was halved.
    pub fn observe(&mut self, rmse: f64, gamma: f64) -> bool {
        self.epoch += 1;
        let halve = 1.0 - rmse / self.previous_rmse < gamma;
        if halve {
            self.eta /= 2.0;
            self.stalled += 1;
        } else {
            self.stalled = 0;
        }
        self.previous_rmse = rmse;
        halve
    }
}

/// Induced latent vectors, one row of length t per item.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentMatrix {
    rows: usize,
    width: usize,
    values: Vec<f64>,
}

impl LatentMatrix {
    pub fn zeros(rows: usize, width: usize) -> Self {
        LatentMatrix {
            rows,
            width,
            values: vec![0.0; rows * width],
        }
    }

    pub fn from_values(rows: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * width {
            return Err(Error::Shape(format!(
                "{} latent values for {rows} rows of width {width}",
                values.len()
            )));
        }
        Ok(LatentMatrix { rows, width, values })
    }

    fn random(rows: usize, width: usize, normal: &Normal<f64>, rng: &mut ChaCha8Rng) -> Self {
        LatentMatrix {
            rows,
            width,
            values: (0..rows * width).map(|_| normal.sample(rng)).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn row(&self, item: usize) -> &[f64] {
        &self.values[item * self.width..(item + 1) * self.width]
    }

    pub fn row_mut(&mut self, item: usize) -> &mut [f64] {
        &mut self.values[item * self.width..(item + 1) * self.width]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Everything needed to predict any (item, user) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    network: Network,
    latents: LatentMatrix,
    profiles: ItemProfiles,
    scale: RatingScale,
    log: TrainingLog,
}

impl TrainedModel {
    pub fn from_parts(
        network: Network,
        latents: LatentMatrix,
        profiles: ItemProfiles,
        scale: RatingScale,
    ) -> Result<Self> {
        let t = network.topology();
        if latents.width() != t.latent || profiles.num_attributes() != t.attributes {
            return Err(Error::Shape(
                "latent or profile width differs from the network inputs".into(),
            ));
        }
        if latents.rows() != profiles.num_items() {
            return Err(Error::Shape(format!(
                "{} latent rows for {} items",
                latents.rows(),
                profiles.num_items()
            )));
        }
        Ok(TrainedModel {
            network,
            latents,
            profiles,
            scale,
            log: TrainingLog::default(),
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn latents(&self) -> &LatentMatrix {
        &self.latents
    }

    pub fn profiles(&self) -> &ItemProfiles {
        &self.profiles
    }

    pub fn scale(&self) -> &RatingScale {
        &self.scale
    }

    pub fn log(&self) -> &TrainingLog {
        &self.log
    }

    pub fn num_items(&self) -> usize {
        self.profiles.num_items()
    }

    pub fn num_users(&self) -> usize {
        self.network.topology().outputs
    }

    /// Network output for an arbitrary latent and description vector, on the native scale, unclamped.
    pub fn predict_raw(&self, latent: &[f64], profile: &[f64], user: usize) -> Result<f64> {
        let q = crate::network::assemble_input(latent, profile, self.network.topology())?;
        let (out, _) = self.network.forward(&q, user)?;
        Ok(self.scale.denormalize(out))
    }

    /// Predicted rating of `item` by `user`, clamped to the rating scale.
    pub fn predict(&self, item: usize, user: usize) -> Result<f64> {
        if item >= self.num_items() {
            return Err(Error::IndexOutOfRange {
                what: "item",
                index: item,
                limit: self.num_items(),
            });
        }
        let raw = self.predict_raw(self.latents.row(item), self.profiles.row(item), user)?;
        Ok(self.scale.clamp(raw))
    }
}

#[derive(Clone, Copy, Debug)]
struct Sample {
    item: u32,
    user: u32,
    target: f64,
}

/// Mutable state of one training run: the latent matrix, the seeded
/// generator, and the normalized training elements.
pub struct TrainingState<'a> {
    samples: Vec<Sample>,
    order: Vec<usize>,
    profiles: &'a ItemProfiles,
    latents: LatentMatrix,
    rng: ChaCha8Rng,
    normal: Normal<f64>,
    scale: RatingScale,
    num_users: usize,
}

impl<'a> TrainingState<'a> {
    /// Normalizes the ratings and draws the initial latent matrix.
    pub fn new(ratings: &SparseRatings, profiles: &'a ItemProfiles, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        if ratings.is_empty() {
            return Err(Error::EmptyInput("no ratings to train on".into()));
        }
        if profiles.num_items() != ratings.num_items() {
            return Err(Error::Shape(format!(
                "{} profile rows for {} items",
                profiles.num_items(),
                ratings.num_items()
            )));
        }
        let scale = *ratings.scale();
        let samples: Vec<Sample> = ratings
            .triples()
            .iter()
            .map(|t| Sample {
                item: t.item,
                user: t.user,
                target: scale.normalize_unchecked(t.value),
            })
            .collect();
        let normal =
            Normal::new(0.0, config.init_deviation).map_err(|e| Error::Config(format!("initial deviation: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let latents = LatentMatrix::random(ratings.num_items(), config.latent, &normal, &mut rng);
        Ok(TrainingState {
            order: (0..samples.len()).collect(),
            samples,
            profiles,
            latents,
            rng,
            normal,
            scale,
            num_users: ratings.num_users(),
        })
    }

    pub fn latents(&self) -> &LatentMatrix {
        &self.latents
    }

    /// A fresh network drawn from the run's generator.
    pub fn random_network(&mut self, hidden: &[usize], config: &TrainConfig) -> Result<Network> {
        let mut topology = Topology::new(
            config.latent,
            self.profiles.num_attributes(),
            hidden.to_vec(),
            self.num_users,
        )?;
        topology.hidden_activation = config.hidden_activation;
        topology.output_activation = config.output_activation;
        let mut network = Network::zeros(topology)?;
        for layer in network.weights_mut().layers_mut() {
            for to in 0..layer.outputs() {
                for from in 0..layer.inputs() {
                    layer.set_weight(from, to, self.normal.sample(&mut self.rng));
                }
                layer.set_bias(to, self.normal.sample(&mut self.rng));
            }
        }
        Ok(network)
    }

    /// Present every element once in a fresh random order. Returns the RMSE
    /// (normalized scale) of the predictions made during the pass.
    pub fn train_epoch(&mut self, network: &mut Network, eta: f64, lambda: f64, update_latents: bool) -> Result<f64> {
        if self.samples.is_empty() {
            return Err(Error::EmptyInput("no ratings to train on".into()));
        }
        self.order.shuffle(&mut self.rng);
        let mut scratch = StepScratch::new(network);
        let mut sum_sq = 0.0;
        for &idx in &self.order {
            let s = self.samples[idx];
            let item = s.item as usize;
            let residual = network.sgd_step(
                self.latents.row_mut(item),
                self.profiles.row(item),
                s.user as usize,
                s.target,
                eta,
                lambda,
                update_latents,
                &mut scratch,
            )?;
            sum_sq += residual * residual;
        }
        if !network.weights().is_finite() {
            return Err(Error::NonFinite);
        }
        Ok((sum_sq / self.samples.len() as f64).sqrt())
    }

    /// Train until the learning rate decays below `eta_final`.
    pub fn run_phase(
        &mut self,
        network: &mut Network,
        phase: Phase,
        config: &TrainConfig,
        observer: &mut dyn FnMut(&EpochRecord),
    ) -> Result<Vec<EpochRecord>> {
        let lambda = if phase.regularized() { config.lambda } else { 0.0 };
        let mut state = ConvergenceState::new(config.eta_initial);
        let mut records = Vec::new();
        while state.eta > config.eta_final && state.epoch < config.max_epochs {
            let eta = state.eta;
            let rmse = self
                .train_epoch(network, eta, lambda, phase.updates_latents())
                .map_err(|e| match e {
                    Error::NonFinite => Error::Diverged {
                        phase: phase.to_string(),
                        epoch: state.epoch + 1,
                    },
                    other => other,
                })?;
            state.observe(rmse, config.gamma);
            let record = EpochRecord {
                phase,
                epoch: state.epoch,
                eta,
                rmse,
            };
            observer(&record);
            records.push(record);
            if rmse == 0.0 {
                break;
            }
        }
        Ok(records)
    }

    fn finish(self, network: Network, log: TrainingLog) -> TrainedModel {
        TrainedModel {
            network,
            latents: self.latents,
            profiles: self.profiles.clone(),
            scale: self.scale,
            log,
        }
    }
}

pub fn train(ratings: &SparseRatings, profiles: &ItemProfiles, config: &TrainConfig) -> Result<TrainedModel> {
    train_with_observer(ratings, profiles, config, &mut |_| {})
}

/// [`train`], reporting each finished epoch to `observer`.
pub fn train_with_observer(
    ratings: &SparseRatings,
    profiles: &ItemProfiles,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainedModel> {
    let mut state = TrainingState::new(ratings, profiles, config)?;
    let mut log = TrainingLog::default();
    let network = if config.three_phase {
        let mut temporary = state.random_network(&[], config)?;
        log.epochs
            .extend(state.run_phase(&mut temporary, Phase::Latents, config, observer)?);
        drop(temporary);
        let mut network = state.random_network(&config.hidden, config)?;
        log.epochs
            .extend(state.run_phase(&mut network, Phase::Weights, config, observer)?);
        log.epochs
            .extend(state.run_phase(&mut network, Phase::Joint, config, observer)?);
        network
    } else {
        let mut network = state.random_network(&config.hidden, config)?;
        log.epochs
            .extend(state.run_phase(&mut network, Phase::Single, config, observer)?);
        network
    };
    Ok(state.finish(network, log))
}
