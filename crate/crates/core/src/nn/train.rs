use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AdamState, Mlp, PlateauScheduler};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden_layers: Vec<usize>,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience_early_stop: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub min_lr: f64,
    pub learning_rate: f64,
    pub l2_weight: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_layers: vec![256, 256],
            batch_size: 128,
            max_epochs: 450,
            patience_early_stop: 20,
            plateau_patience: 10,
            plateau_factor: 0.5,
            min_lr: 1e-7,
            learning_rate: 1e-4,
            l2_weight: 1e-6,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Invalid(format!("train.{what}")));
        if self.hidden_layers.contains(&0) {
            return bad("hidden_layers: widths must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if self.patience_early_stop == 0 || self.plateau_patience == 0 {
            return bad("patience values must be positive");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad("plateau_factor must lie strictly between 0 and 1");
        }
        if !(self.min_lr > 0.0 && self.learning_rate > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.l2_weight >= 0.0) {
            return bad("l2_weight must be non-negative");
        }
        Ok(())
    }
}

/// Standardised training and held-out arrays (rows are samples).
#[derive(Debug, Clone)]
pub struct TrainData {
    pub x_train: Array2<f64>,
    pub y_train: Array2<f64>,
    pub x_test: Array2<f64>,
    pub y_test: Array2<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub test_loss: Vec<f64>,
    pub learning_rate: Vec<f64>,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.test_loss.len()
    }

    pub fn best_test_loss(&self) -> f64 {
        self.test_loss[self.best_epoch]
    }
}

pub fn train(data: &TrainData, config: &TrainConfig) -> Result<(Mlp, TrainHistory)> {
    train_with_progress(data, config, |_, _| {})
}

/// Minibatch Adam on the MAE loss with plateau LR decay and early stopping on
/// the test loss. Returns the snapshot with the lowest test loss.
pub fn train_with_progress<F>(
    data: &TrainData,
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<(Mlp, TrainHistory)>
where
    F: FnMut(usize, &TrainHistory),
{
    config.validate()?;
    let n_train = data.x_train.nrows();
    if n_train == 0 || data.x_test.nrows() == 0 {
        return Err(Error::EmptyBatch);
    }
    if data.y_train.nrows() != n_train {
        return Err(Error::dims("training targets", n_train, data.y_train.nrows()));
    }
    if data.y_test.nrows() != data.x_test.nrows() {
        return Err(Error::dims("test targets", data.x_test.nrows(), data.y_test.nrows()));
    }

    let mut dims = vec![data.x_train.ncols()];
    dims.extend(&config.hidden_layers);
    dims.push(data.y_train.ncols());

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut model = Mlp::new_lecun(&dims, &mut rng)?;
    let mut adam = AdamState::new(&model, config.learning_rate, config.l2_weight);
    let mut sched = PlateauScheduler::new(
        config.learning_rate,
        config.plateau_patience,
        config.plateau_factor,
        config.min_lr,
    );

    let mut best = model.clone();
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..n_train).collect();

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let xb = data.x_train.select(Axis(0), chunk);
            let yb = data.y_train.select(Axis(0), chunk);
            let (loss, grads) = model.grad_params(xb.view(), yb.view(), adam.l2_weight)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            adam.step(&mut model, &grads)?;
            loss_sum += loss;
            n_batches += 1;
        }

        let test_loss = model.mean_abs_error(data.x_test.view(), data.y_test.view())?;
        if !test_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: n_batches,
            });
        }
        history.train_loss.push(loss_sum / n_batches as f64);
        history.test_loss.push(test_loss);
        history.learning_rate.push(adam.learning_rate);

        if test_loss < history.test_loss[history.best_epoch] || epoch == 0 {
            history.best_epoch = epoch;
            best.clone_from(&model);
        }
        adam.learning_rate = sched.update(test_loss);
        on_epoch(epoch, &history);

        if epoch - history.best_epoch >= config.patience_early_stop {
            break;
        }
    }
    Ok((best, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_data(n: usize, f: impl Fn(f64, f64) -> f64) -> TrainData {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let x = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((n, 1), |(i, _)| f(x[[i, 0]], x[[i, 1]]));
        let split = n * 9 / 10;
        TrainData {
            x_train: x.slice(ndarray::s![..split, ..]).to_owned(),
            y_train: y.slice(ndarray::s![..split, ..]).to_owned(),
            x_test: x.slice(ndarray::s![split.., ..]).to_owned(),
            y_test: y.slice(ndarray::s![split.., ..]).to_owned(),
        }
    }

    #[test]
    fn constant_target_is_learned() {
        let data = toy_data(2000, |_, _| 0.75);
        let cfg = TrainConfig {
            hidden_layers: vec![4],
            batch_size: 64,
            max_epochs: 50,
            learning_rate: 1e-2,
            plateau_patience: 2,
            l2_weight: 0.0,
            ..Default::default()
        };
        let (_, hist) = train(&data, &cfg).unwrap();
        assert!(hist.best_test_loss() < 1e-3, "test MAE {}", hist.best_test_loss());
    }

    #[test]
    fn training_is_deterministic_and_keeps_best_snapshot() {
        let data = toy_data(400, |a, b| a * b + 0.3 * a);
        let cfg = TrainConfig {
            hidden_layers: vec![8],
            batch_size: 16,
            max_epochs: 15,
            learning_rate: 3e-3,
            rng_seed: 42,
            ..Default::default()
        };
        let (m1, h1) = train(&data, &cfg).unwrap();
        let (m2, h2) = train(&data, &cfg).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
        let best = h1.best_test_loss();
        assert!(h1.test_loss.iter().all(|&l| l >= best));
        assert!(best <= *h1.test_loss.last().unwrap());
        let reported = m1.mean_abs_error(data.x_test.view(), data.y_test.view()).unwrap();
        assert_eq!(reported, best);
        assert!(h1.train_loss.iter().all(|&l| l >= 0.0));
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let data = TrainData {
            x_train: Array2::zeros((0, 2)),
            y_train: Array2::zeros((0, 1)),
            x_test: Array2::zeros((0, 2)),
            y_test: Array2::zeros((0, 1)),
        };
        assert!(matches!(train(&data, &TrainConfig::default()), Err(Error::EmptyBatch)));
    }

    #[test]
    fn non_finite_input_aborts_training() {
        let data = toy_data(100, |a, _| a);
        let mut x_train = data.x_train.clone();
        x_train[[0, 0]] = f64::NAN;
        let data = TrainData { x_train, ..data };
        let cfg = TrainConfig {
            hidden_layers: vec![4],
            batch_size: 200,
            max_epochs: 2,
            ..Default::default()
        };
        assert!(matches!(train(&data, &cfg), Err(Error::NonFiniteLoss { .. })));
    }
}
