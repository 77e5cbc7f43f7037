//! Comparison baselines: FedAvg (and its single-round variant), fine-tuned
//! FedAvg, and prediction-averaging ensembles.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{AdamConfig, AdamState, FreezeMask, ModelParams};
use crate::rng::{stream, Domain};
use crate::scalar::{real, Scalar};
use crate::transfer::{train_epochs, BatchLoss};

/// Federated-training knobs. The desk-scale default round count is 30;
/// convergence on the small synthetic tasks is much faster than on the image
/// benchmarks this simulates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FedConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    /// Fraction of clients that participate each round (all by default).
    pub participation_fraction: f64,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            rounds: 30,
            local_epochs: 2,
            participation_fraction: 1.0,
            batch_size: 32,
            adam: AdamConfig::default(),
        }
    }
}

/// Result of a FedAvg run.
pub struct FedAvgOutcome<S> {
    pub global: ModelParams<S>,
    /// Mean training loss per round (0 when local_epochs is 0).
    pub round_losses: Vec<f64>,
    pub comm_rounds: u32,
}

/// Parameter mean weighted by `weights` (normalized first, so averaging a
/// single model or identical models is exact).
pub fn weighted_average<S: Scalar>(models: &[&ModelParams<S>], weights: &[f64]) -> Result<ModelParams<S>> {
    if models.is_empty() {
        return Err(Error::Config("cannot average zero models".into()));
    }
    if models.len() != weights.len() {
        return Err(Error::shape("averaging weights", models.len(), weights.len()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Config("averaging weights must sum to a positive value".into()));
    }
    for m in &models[1..] {
        if m.param_count() != models[0].param_count() || m.layers().len() != models[0].layers().len() {
            return Err(Error::shape("averaged model params", models[0].param_count(), m.param_count()));
        }
    }
    let mut acc = models[0].clone();
    let w0 = real::<S>(weights[0] / total);
    for li in 0..acc.layers().len() {
        let n = acc.layers()[li].param_count();
        for flat in 0..n {
            *acc.param_mut(li, flat) *= w0;
        }
    }
    for (model, &w) in models.iter().zip(weights).skip(1) {
        let wn = real::<S>(w / total);
        model.for_each_param(|li, pi, v| {
            *acc.param_mut(li, pi) += wn * v;
        });
    }
    Ok(acc)
}

/// FedAvg over the clients' current models: the initial global model is the
/// size-weighted mean of the client models; each round the participants
/// train `local_epochs` epochs from the global model and the server
/// re-averages, weighted by train-set size. Communication count equals the
/// round count (`rounds = 1` is the single-round FedAvg(1) baseline).
pub fn fedavg<S: Scalar>(
    initial_models: &[ModelParams<S>],
    train_sets: &[(Matrix<S>, Vec<usize>)],
    cfg: &FedConfig,
    seed: u64,
) -> Result<FedAvgOutcome<S>> {
    if initial_models.is_empty() || initial_models.len() != train_sets.len() {
        return Err(Error::Config("fedavg needs one train set per model".into()));
    }
    if cfg.rounds == 0 {
        return Err(Error::Config("fedavg rounds must be >= 1".into()));
    }
    if !(0.0 < cfg.participation_fraction && cfg.participation_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "participation_fraction must be in (0, 1], got {}",
            cfg.participation_fraction
        )));
    }
    let sizes: Vec<f64> = train_sets.iter().map(|(_, y)| y.len() as f64).collect();
    let refs: Vec<&ModelParams<S>> = initial_models.iter().collect();
    let mut global = weighted_average(&refs, &sizes)?;

    let num_clients = initial_models.len();
    let mut round_losses = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        let participants: Vec<usize> = if cfg.participation_fraction < 1.0 {
            let count = ((cfg.participation_fraction * num_clients as f64).ceil() as usize)
                .clamp(1, num_clients);
            let mut rng = stream(seed, Domain::Federated, 0, round as u64);
            let mut picked = sample(&mut rng, num_clients, count).into_vec();
            picked.sort_unstable();
            picked
        } else {
            (0..num_clients).collect()
        };

        let mut trained: Vec<ModelParams<S>> = Vec::with_capacity(participants.len());
        let mut weights: Vec<f64> = Vec::with_capacity(participants.len());
        let mut loss_acc = 0.0;
        let mut loss_weight = 0.0;
        for &client in &participants {
            let (x, y) = &train_sets[client];
            let mut model = global.clone();
            let freeze = FreezeMask::all_trainable(&model);
            let mut state = AdamState::new(&model, cfg.adam);
            let mut rng = stream(seed, Domain::Federated, client as u64, round as u64);
            let losses = train_epochs(
                &mut model,
                x,
                y,
                &BatchLoss::Supervised,
                &mut state,
                &freeze,
                cfg.local_epochs,
                cfg.batch_size,
                &mut rng,
            )?;
            if let Some(last) = losses.last() {
                loss_acc += last * y.len() as f64;
                loss_weight += y.len() as f64;
            }
            weights.push(y.len() as f64);
            trained.push(model);
        }
        let trained_refs: Vec<&ModelParams<S>> = trained.iter().collect();
        global = weighted_average(&trained_refs, &weights)?;
        round_losses.push(if loss_weight > 0.0 { loss_acc / loss_weight } else { 0.0 });
    }
    Ok(FedAvgOutcome {
        global,
        round_losses,
        comm_rounds: cfg.rounds as u32,
    })
}

/// FedAvg followed by per-client fine-tuning for `2 * local_epochs` epochs;
/// returns one personalized model per client. Fine-tuning adds no
/// communication.
pub fn ft_fedavg<S: Scalar>(
    initial_models: &[ModelParams<S>],
    train_sets: &[(Matrix<S>, Vec<usize>)],
    cfg: &FedConfig,
    seed: u64,
) -> Result<(Vec<ModelParams<S>>, u32)> {
    let outcome = fedavg(initial_models, train_sets, cfg, seed)?;
    let mut personalized = Vec::with_capacity(train_sets.len());
    for (client, (x, y)) in train_sets.iter().enumerate() {
        let mut model = outcome.global.clone();
        let freeze = FreezeMask::all_trainable(&model);
        let mut state = AdamState::new(&model, cfg.adam);
        let mut rng = stream(seed, Domain::Federated, client as u64, (cfg.rounds + 1) as u64);
        train_epochs(
            &mut model,
            x,
            y,
            &BatchLoss::Supervised,
            &mut state,
            &freeze,
            2 * cfg.local_epochs,
            cfg.batch_size,
            &mut rng,
        )?;
        personalized.push(model);
    }
    Ok((personalized, outcome.comm_rounds))
}

/// Arithmetic mean of all models' softmax outputs; classification uses the
/// arg-max of the averaged rows.
pub fn ensemble_probs<S: Scalar>(models: &[&ModelParams<S>], x: &Matrix<S>) -> Result<Matrix<S>> {
    if models.is_empty() {
        return Err(Error::Config("ensemble needs at least one model".into()));
    }
    let mut acc = models[0].predict_probs(x, S::one())?;
    for model in &models[1..] {
        let p = model.predict_probs(x, S::one())?;
        for (a, v) in acc.data_mut().iter_mut().zip(p.data()) {
            *a += *v;
        }
    }
    let n = real::<S>(models.len() as f64);
    for a in acc.data_mut() {
        *a /= n;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Architecture;
    use rand::Rng;

    fn model(seed: u64) -> ModelParams<f64> {
        let arch = Architecture {
            input_dim: 4,
            hidden: vec![6],
            num_classes: 3,
            split_index: None,
        };
        ModelParams::init(&arch, &mut stream(seed, Domain::Init, 0, 0)).unwrap()
    }

    fn train_set(seed: u64, n: usize) -> (Matrix<f64>, Vec<usize>) {
        let mut rng = stream(seed, Domain::Data, 1, 0);
        let x = Matrix::from_vec(n, 4, (0..n * 4).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let y = (0..n).map(|i| i % 3).collect();
        (x, y)
    }

    fn params_of(m: &ModelParams<f64>) -> Vec<f64> {
        let mut out = Vec::new();
        m.for_each_param(|_, _, v| out.push(v));
        out
    }

    #[test]
    fn zero_local_epochs_returns_the_weighted_mean() {
        let models = vec![model(0), model(1)];
        let sets = vec![train_set(0, 10), train_set(1, 10)];
        let cfg = FedConfig {
            rounds: 3,
            local_epochs: 0,
            ..FedConfig::default()
        };
        let outcome = fedavg(&models, &sets, &cfg, 7).unwrap();
        // Equal sizes: the global model is (a + b) / 2 and stays there.
        let a = params_of(&models[0]);
        let b = params_of(&models[1]);
        let g = params_of(&outcome.global);
        let max_diff = g
            .iter()
            .enumerate()
            .map(|(i, v)| (v - 0.5 * (a[i] + b[i])).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff < 1e-12, "max diff {max_diff}");
    }

    #[test]
    fn single_client_fedavg_is_chunked_local_training() {
        let models = vec![model(5)];
        let sets = vec![train_set(5, 12)];
        let cfg = FedConfig {
            rounds: 3,
            local_epochs: 2,
            ..FedConfig::default()
        };
        let outcome = fedavg(&models, &sets, &cfg, 11).unwrap();

        // Same schedule driven by hand: fresh optimizer per round, same
        // per-round RNG streams, no averaging partner.
        let mut manual = models[0].clone();
        let freeze = FreezeMask::all_trainable(&manual);
        for round in 1..=3u64 {
            let mut state = AdamState::new(&manual, cfg.adam);
            let mut rng = stream(11, Domain::Federated, 0, round);
            train_epochs(
                &mut manual,
                &sets[0].0,
                &sets[0].1,
                &BatchLoss::Supervised,
                &mut state,
                &freeze,
                2,
                cfg.batch_size,
                &mut rng,
            )
            .unwrap();
        }
        assert_eq!(outcome.global, manual);
    }

    #[test]
    fn identical_clients_average_to_the_single_training_path() {
        // Two clients with identical data and identical start: each round
        // both produce the same update, so the average tracks one client's
        // chunked training path (up to floating error in the averaging).
        let shared = model(9);
        let set = train_set(9, 12);
        let models = vec![shared.clone(), shared.clone()];
        let sets = vec![set.clone(), set];
        let cfg = FedConfig {
            rounds: 2,
            local_epochs: 1,
            ..FedConfig::default()
        };
        let outcome = fedavg(&models, &sets, &cfg, 3).unwrap();
        let mut manual = shared.clone();
        let freeze = FreezeMask::all_trainable(&manual);
        for round in 1..=2u64 {
            let mut state = AdamState::new(&manual, cfg.adam);
            let mut rng = stream(3, Domain::Federated, 0, round);
            train_epochs(
                &mut manual,
                &sets[0].0,
                &sets[0].1,
                &BatchLoss::Supervised,
                &mut state,
                &freeze,
                1,
                cfg.batch_size,
                &mut rng,
            )
            .unwrap();
        }
        let g = params_of(&outcome.global);
        let m = params_of(&manual);
        let max_diff = g
            .iter()
            .zip(&m)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff < 1e-12, "max diff {max_diff}");
    }

    #[test]
    fn fedavg_one_round_reports_one_comm_round() {
        let models = vec![model(0), model(1)];
        let sets = vec![train_set(0, 9), train_set(1, 9)];
        let cfg = FedConfig {
            rounds: 1,
            ..FedConfig::default()
        };
        let outcome = fedavg(&models, &sets, &cfg, 0).unwrap();
        assert_eq!(outcome.comm_rounds, 1);
        assert_eq!(outcome.round_losses.len(), 1);
    }

    #[test]
    fn ft_with_zero_epochs_equals_the_global_model() {
        let models = vec![model(2), model(3)];
        let sets = vec![train_set(2, 8), train_set(3, 8)];
        let cfg = FedConfig {
            rounds: 2,
            local_epochs: 0,
            ..FedConfig::default()
        };
        let global = fedavg(&models, &sets, &cfg, 5).unwrap().global;
        let (personalized, comm) = ft_fedavg(&models, &sets, &cfg, 5).unwrap();
        assert_eq!(comm, 2);
        for p in &personalized {
            assert_eq!(*p, global);
        }
    }

    #[test]
    fn ensemble_of_identical_models_is_the_single_model() {
        let m = model(4);
        let x = train_set(4, 5).0;
        let single = m.predict_probs(&x, 1.0).unwrap();
        let ens = ensemble_probs(&[&m, &m, &m], &x).unwrap();
        for (a, b) in ens.data().iter().zip(single.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn ensemble_averages_opposite_predictions() {
        // Two fixed linear models forced to opposite one-hot outputs.
        use crate::nn::DenseLayer;
        let make = |bias: Vec<f64>| {
            let layer = DenseLayer {
                weights: Matrix::from_vec(2, 1, vec![0.0, 0.0]).unwrap(),
                bias,
            };
            ModelParams::new(vec![layer], 0, 2).unwrap()
        };
        let a = make(vec![50.0, -50.0]);
        let b = make(vec![-50.0, 50.0]);
        let x = Matrix::from_vec(1, 1, vec![0.0]).unwrap();
        let ens = ensemble_probs(&[&a, &b], &x).unwrap();
        assert!((ens.row(0)[0] - 0.5).abs() < 1e-12);
        assert!((ens.row(0)[1] - 0.5).abs() < 1e-12);
        let sum: f64 = ens.row(0).iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_ensemble_is_an_error() {
        let x = Matrix::<f64>::zeros(1, 2);
        assert!(ensemble_probs::<f64>(&[], &x).is_err());
    }

    #[test]
    fn partial_participation_is_seeded_and_reproducible() {
        let models: Vec<_> = (0..5).map(model).collect();
        let sets: Vec<_> = (0..5).map(|s| train_set(s, 8)).collect();
        let cfg = FedConfig {
            rounds: 2,
            local_epochs: 1,
            participation_fraction: 0.4,
            ..FedConfig::default()
        };
        let a = fedavg(&models, &sets, &cfg, 21).unwrap();
        let b = fedavg(&models, &sets, &cfg, 21).unwrap();
        assert_eq!(a.global, b.global);
    }
}
