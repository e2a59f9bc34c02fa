use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ModelKind, TrainConfig};
use super::dataset::Dataset;
use super::{PipelineError, Result};
use crate::datapage::NUM_SYMBOLS;
use crate::nn::network::argmax;
use crate::nn::{build_cnn, build_mlp, cross_entropy_loss, AdamConfig, CnnConfig, MlpConfig, Network};

/// Mean loss and accuracy of one epoch, measured on the training minibatches
/// as they were seen (dropout active, parameters mid-update).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub accuracy: f64,
}

pub fn steps_per_epoch(fragments: usize, batch_size: usize) -> usize {
    fragments.div_ceil(batch_size)
}

/// Freshly initialized classifier for `fragment_px`-sided inputs.
pub fn build_model(kind: ModelKind, config: &TrainConfig, fragment_px: usize) -> Result<Network<f64>> {
    Ok(match kind {
        ModelKind::Cnn => build_cnn(
            &CnnConfig {
                input_side: fragment_px,
                classes: NUM_SYMBOLS,
                dropout_pool: config.dropout_pool,
                dropout_fc: config.dropout_fc,
                ..CnnConfig::default()
            },
            config.seed,
        )?,
        ModelKind::Mlp => build_mlp(
            &MlpConfig { input_side: fragment_px, classes: NUM_SYMBOLS, ..MlpConfig::default() },
            config.seed,
        )?,
        ModelKind::Template => return Err(PipelineError::TemplateTraining),
    })
}

/// Epoch-by-epoch minibatch Adam training.
///
/// Shuffles and dropout masks come from one ChaCha8 stream seeded with
/// `config.seed` on stream `1 + optimizer step`, so a resumed network does not
/// replay the shuffles of the run it came from.
pub struct Trainer<'a> {
    network: Network<f64>,
    data: &'a Dataset,
    config: TrainConfig,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(network: Network<f64>, data: &'a Dataset, config: TrainConfig) -> Result<Self> {
        let p = data.fragment_px();
        if network.input_shape() != [1, p, p] {
            return Err(PipelineError::Config(format!(
                "model expects input {:?}, dataset fragments are 1x{p}x{p}",
                network.input_shape()
            )));
        }
        if network.output_len() != NUM_SYMBOLS {
            return Err(PipelineError::Config(format!(
                "model has {} outputs, expected {NUM_SYMBOLS}",
                network.output_len()
            )));
        }
        if data.is_empty() {
            return Err(PipelineError::Dataset("training set is empty".into()));
        }
        if config.batch_size == 0 {
            return Err(PipelineError::Config("batch_size must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1 + network.adam_state().step);
        Ok(Self { network, data, config, rng, order: (0..data.len()).collect(), epoch: 0 })
    }

    pub fn network(&self) -> &Network<f64> {
        &self.network
    }

    pub fn into_network(self) -> Network<f64> {
        self.network
    }

    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        self.order.shuffle(&mut self.rng);
        let adam = AdamConfig::default();
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in self.order.chunks(self.config.batch_size) {
            let x = self.data.batch(chunk);
            let labels = self.data.batch_labels(chunk);
            let probs = self.network.forward_train(&x, Some(&mut self.rng as &mut dyn RngCore))?;
            loss_sum += cross_entropy_loss(&probs, &labels)? * chunk.len() as f64;
            correct += probs.rows().zip(&labels).filter(|(row, &l)| argmax(row) == l).count();
            let grads = self.network.backward(&labels)?;
            self.network.adam_step(&grads, self.config.learning_rate, &adam)?;
        }
        self.epoch += 1;
        let n = self.data.len() as f64;
        Ok(EpochRecord { epoch: self.epoch, mean_loss: loss_sum / n, accuracy: correct as f64 / n })
    }
}

pub struct TrainingOutcome {
    pub network: Network<f64>,
    pub log: Vec<EpochRecord>,
}

impl TrainingOutcome {
    /// `epoch,mean_loss,train_accuracy` per line.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss,train_accuracy\n");
        for r in &self.log {
            s.push_str(&format!("{},{:.10},{:.6}\n", r.epoch, r.mean_loss, r.accuracy));
        }
        s
    }
}

/// Trains `network` (or a fresh `kind` model when `None`) for `config.epochs`.
pub fn run_training(
    kind: ModelKind,
    config: &TrainConfig,
    data: &Dataset,
    network: Option<Network<f64>>,
) -> Result<TrainingOutcome> {
    let network = match network {
        Some(n) => n,
        None => build_model(kind, config, data.fragment_px())?,
    };
    let mut trainer = Trainer::new(network, data, *config)?;
    let log = (0..config.epochs).map(|_| trainer.run_epoch()).collect::<Result<_>>()?;
    Ok(TrainingOutcome { network: trainer.into_network(), log })
}
