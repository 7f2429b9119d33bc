//! Federated training: round loop, local client updates, and
//! sample-weighted parameter averaging.

use crate::data::{ClientPartition, Dataset};
use crate::derive_rng;
use crate::error::{Error, Result};
use crate::models::{
    evaluate, init_model, mean_loss, train_epochs, MetricsReport, ModelKind, ParameterVector,
};
use crate::search_space::Configuration;
use crate::SeededRng;

/// Schedule and hyperparameters of one federated run.
#[derive(Debug, Clone)]
pub struct FederatedConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub config: Configuration,
    pub model_kind: ModelKind,
}

/// Parameters a client returns after local training, weighted by its
/// sample count during aggregation.
#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub params: ParameterVector,
    pub n_k: usize,
}

/// Per-round bookkeeping: global test metrics and client training losses.
#[derive(Debug, Clone)]
pub struct RoundLog {
    pub round: usize,
    pub test_metrics: MetricsReport,
    pub client_losses: Vec<f64>,
}

impl RoundLog {
    pub fn mean_client_loss(&self) -> f64 {
        self.client_losses.iter().sum::<f64>() / self.client_losses.len() as f64
    }
}

/// One client's round: copy the global parameters and train locally for
/// `local_epochs` with a fresh optimizer state.
pub fn local_update(
    client_id: usize,
    global_params: &ParameterVector,
    client_data: &Dataset,
    fc: &FederatedConfig,
    rng: &mut SeededRng,
) -> Result<(ClientUpdate, f64)> {
    assert!(!client_data.is_empty(), "client data must be non-empty");
    let params = train_epochs(
        global_params.clone(),
        client_data,
        &fc.config,
        fc.local_epochs,
        rng,
    )?;
    let loss = mean_loss(&params, client_data)?;
    Ok((
        ClientUpdate {
            client_id,
            params,
            n_k: client_data.len(),
        },
        loss,
    ))
}

/// Sample-weighted mean of client parameters. Updates are sorted by
/// client id first so the result is independent of arrival order.
pub fn aggregate(updates: &[ClientUpdate]) -> Result<ParameterVector> {
    let first = updates
        .first()
        .ok_or_else(|| Error::LayoutMismatch("no updates to aggregate".into()))?;
    for u in updates {
        if !u.params.same_layout(&first.params) {
            return Err(Error::LayoutMismatch(format!(
                "client {} layout differs from client {}",
                u.client_id, first.client_id
            )));
        }
    }
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.client_id);

    let total: usize = sorted.iter().map(|u| u.n_k).sum();
    let weights: Vec<f64> = sorted.iter().map(|u| u.n_k as f64 / total as f64).collect();
    let weight_sum: f64 = weights.iter().sum();
    assert!(
        (weight_sum - 1.0).abs() < 1e-12,
        "aggregation weights sum to {weight_sum}"
    );

    let mut values = vec![0.0; first.params.values.len()];
    for (u, w) in sorted.iter().zip(&weights) {
        for (acc, v) in values.iter_mut().zip(&u.params.values) {
            *acc += w * v;
        }
    }
    Ok(ParameterVector {
        kind: first.params.kind,
        input_dim: first.params.input_dim,
        values,
    })
}

/// Runs T rounds of FedAvg with full client participation. Client RNG
/// streams are derived from (seed, round, client), so results are
/// identical regardless of client scheduling.
pub fn run_federated(
    partition: &ClientPartition,
    train: &Dataset,
    test: &Dataset,
    fc: &FederatedConfig,
    seed: u64,
) -> Result<(ParameterVector, Vec<RoundLog>)> {
    let client_data: Vec<Dataset> = partition
        .assignments
        .iter()
        .enumerate()
        .map(|(k, idx)| train.subset(idx, format!("client{k}")))
        .collect();

    let mut global = init_model(fc.model_kind, train.feature_dim(), &mut derive_rng(seed, 0, 0));
    let mut logs = Vec::with_capacity(fc.rounds);
    for round in 1..=fc.rounds {
        let mut updates = Vec::with_capacity(client_data.len());
        let mut losses = Vec::with_capacity(client_data.len());
        for (k, data) in client_data.iter().enumerate() {
            let mut rng = derive_rng(seed, round as u64, k as u64 + 1);
            let (update, loss) = local_update(k, &global, data, fc, &mut rng)?;
            updates.push(update);
            losses.push(loss);
        }
        global = aggregate(&updates)?;
        logs.push(RoundLog {
            round,
            test_metrics: evaluate(&global, test),
            client_losses: losses,
        });
    }
    Ok((global, logs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_task, partition_non_iid, Difficulty, TaskSpec};
    use crate::models::{loss_and_gradient, optimizer_step, OptimizerState};
    use crate::search_space::OptimizerKind;
    use rand::Rng;
    use rand::SeedableRng;

    fn rng(seed: u64) -> SeededRng {
        SeededRng::seed_from_u64(seed)
    }

    fn linear_task(n: usize, seed: u64) -> Dataset {
        let spec = TaskSpec {
            name: "lin".into(),
            n_samples: n,
            positive_fraction: 0.5,
            difficulty: Difficulty::Linear,
            feature_dim: 2,
            noise_scale: 0.4,
        };
        gen_task(&spec, &mut rng(seed)).unwrap()
    }

    fn update(id: usize, values: Vec<f64>, n_k: usize) -> ClientUpdate {
        ClientUpdate {
            client_id: id,
            params: ParameterVector {
                kind: ModelKind::Logistic,
                input_dim: values.len() - 1,
                values,
            },
            n_k,
        }
    }

    #[test]
    fn single_update_passes_through() {
        let u = update(0, vec![1.0, -2.0], 7);
        let agg = aggregate(&[u.clone()]).unwrap();
        assert_eq!(agg.values, u.params.values);
    }

    #[test]
    fn two_client_weighted_mean() {
        let a = update(0, vec![1.0, 0.0], 1);
        let b = update(1, vec![3.0, 0.0], 3);
        let agg = aggregate(&[a, b]).unwrap();
        assert!((agg.values[0] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn aggregate_matches_oracle_and_permutation_invariant() {
        let mut r = rng(9);
        for _ in 0..50 {
            let k = r.random_range(2..=5usize);
            let len = r.random_range(2..=6usize);
            let updates: Vec<ClientUpdate> = (0..k)
                .map(|id| {
                    update(
                        id,
                        (0..len).map(|_| r.random_range(-1.0..1.0)).collect(),
                        r.random_range(1..50usize),
                    )
                })
                .collect();
            let agg = aggregate(&updates).unwrap();

            // Independent weighted-mean oracle.
            let total: f64 = updates.iter().map(|u| u.n_k as f64).sum();
            for j in 0..len {
                let expect: f64 = updates
                    .iter()
                    .map(|u| u.n_k as f64 / total * u.params.values[j])
                    .sum();
                assert!((agg.values[j] - expect).abs() < 1e-12);
            }

            let mut shuffled = updates.clone();
            shuffled.reverse();
            let agg2 = aggregate(&shuffled).unwrap();
            assert_eq!(agg.values, agg2.values);
        }
    }

    #[test]
    fn identical_updates_aggregate_exactly() {
        let base = vec![0.25, -1.5, 3.0];
        let updates: Vec<ClientUpdate> =
            (0..4).map(|id| update(id, base.clone(), 10 + id)).collect();
        let agg = aggregate(&updates).unwrap();
        assert_eq!(agg.values, base);
    }

    #[test]
    fn layout_mismatch_rejected() {
        let a = update(0, vec![1.0, 2.0], 1);
        let b = update(1, vec![1.0, 2.0, 3.0], 1);
        assert!(matches!(
            aggregate(&[a, b]),
            Err(Error::LayoutMismatch(_))
        ));
    }

    #[test]
    fn zero_epochs_local_update_is_identity() {
        let data = linear_task(40, 1);
        let fc = FederatedConfig {
            rounds: 1,
            local_epochs: 0,
            config: Configuration::new(0.1, OptimizerKind::Sgd, 16).unwrap(),
            model_kind: ModelKind::Logistic,
        };
        let global = init_model(ModelKind::Logistic, 2, &mut rng(2));
        let (u, _) = local_update(0, &global, &data, &fc, &mut rng(3)).unwrap();
        assert_eq!(u.params, global);
        assert_eq!(u.n_k, 40);
    }

    #[test]
    fn identical_data_and_seed_give_identical_updates() {
        let data = linear_task(40, 4);
        let fc = FederatedConfig {
            rounds: 1,
            local_epochs: 5,
            config: Configuration::new(0.05, OptimizerKind::Adam, 8).unwrap(),
            model_kind: ModelKind::Logistic,
        };
        let global = init_model(ModelKind::Logistic, 2, &mut rng(5));
        let (a, _) = local_update(0, &global, &data, &fc, &mut rng(6)).unwrap();
        let (b, _) = local_update(1, &global, &data, &fc, &mut rng(6)).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn local_training_reduces_loss() {
        let data = linear_task(100, 7);
        let fc = FederatedConfig {
            rounds: 1,
            local_epochs: 50,
            config: Configuration::new(0.1, OptimizerKind::Sgd, 16).unwrap(),
            model_kind: ModelKind::Logistic,
        };
        let global = init_model(ModelKind::Logistic, 2, &mut rng(8));
        let before = mean_loss(&global, &data).unwrap();
        let (_, after) = local_update(0, &global, &data, &fc, &mut rng(9)).unwrap();
        assert!(after < before, "loss {after} not below {before}");
    }

    #[test]
    fn single_client_round_equals_local_update() {
        let data = linear_task(50, 10);
        let partition = partition_non_iid(&data, 1, 1.0, 1, &mut rng(11)).unwrap();
        let fc = FederatedConfig {
            rounds: 1,
            local_epochs: 3,
            config: Configuration::new(0.05, OptimizerKind::Sgd, 8).unwrap(),
            model_kind: ModelKind::Logistic,
        };
        let (global, logs) = run_federated(&partition, &data, &data, &fc, 99).unwrap();
        assert_eq!(logs.len(), 1);

        let init = init_model(ModelKind::Logistic, 2, &mut derive_rng(99, 0, 0));
        let (expected, _) =
            local_update(0, &init, &data, &fc, &mut derive_rng(99, 1, 1)).unwrap();
        assert_eq!(global.values, expected.params.values);
    }

    #[test]
    fn identical_clients_match_centralized_full_batch_step() {
        let data = linear_task(60, 12);
        // Four clients holding the same data with equal weight.
        let partition = ClientPartition {
            assignments: vec![(0..60).collect(); 4],
            sizes: vec![60; 4],
            label_histograms: vec![data.label_histogram(); 4],
        };
        let fc = FederatedConfig {
            rounds: 1,
            local_epochs: 1,
            config: Configuration::new(0.1, OptimizerKind::Sgd, 1000).unwrap(),
            model_kind: ModelKind::Logistic,
        };
        let (global, _) = run_federated(&partition, &data, &data, &fc, 123).unwrap();

        let mut central = init_model(ModelKind::Logistic, 2, &mut derive_rng(123, 0, 0));
        let idx: Vec<usize> = (0..60).collect();
        let (_, grad) = loss_and_gradient(&central, &data, &idx).unwrap();
        let mut state = OptimizerState::new(OptimizerKind::Sgd, central.values.len());
        optimizer_step(&mut central, &grad, &mut state, 0.1);
        for (a, b) in global.values.iter().zip(&central.values) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn iid_federated_run_converges() {
        let data = linear_task(400, 13);
        let (train, test) = {
            let split = crate::data::SplitSpec::default();
            let (tr, _va, te) = crate::data::stratified_split(&data, &split, &mut rng(14)).unwrap();
            (tr, te)
        };
        let partition = partition_non_iid(&train, 4, 1e6, 1, &mut rng(15)).unwrap();
        let fc = FederatedConfig {
            rounds: 3,
            local_epochs: 50,
            config: Configuration::new(5e-2, OptimizerKind::Sgd, 16).unwrap(),
            model_kind: ModelKind::Logistic,
        };
        let (_, logs) = run_federated(&partition, &train, &test, &fc, 77).unwrap();
        let final_f1 = logs.last().unwrap().test_metrics.f1;
        assert!(final_f1 >= 0.95, "final test F1 {final_f1}");
    }

    #[test]
    fn run_federated_is_deterministic() {
        let data = linear_task(120, 16);
        let partition = partition_non_iid(&data, 3, 0.5, 5, &mut rng(17)).unwrap();
        let fc = FederatedConfig {
            rounds: 2,
            local_epochs: 5,
            config: Configuration::new(1e-2, OptimizerKind::Adam, 16).unwrap(),
            model_kind: ModelKind::Mlp { hidden_units: 4 },
        };
        let (a, logs_a) = run_federated(&partition, &data, &data, &fc, 55).unwrap();
        let (b, logs_b) = run_federated(&partition, &data, &data, &fc, 55).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(logs_a.len(), logs_b.len());
        for (x, y) in logs_a.iter().zip(&logs_b) {
            assert_eq!(x.test_metrics, y.test_metrics);
            assert_eq!(x.client_losses, y.client_losses);
        }
    }
}
