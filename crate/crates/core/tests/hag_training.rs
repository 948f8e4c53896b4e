use hagxai::bundle::Task;
use hagxai::hag::{cross_validate, evaluate, fit, train, HagOptions, HagParams, TrainConfig, TrainSample};
use hagxai::synthetic::{hidden_params, recovery_dataset, BundleShape};

fn dataset(n: usize, task: Task, options: HagOptions, seed: u64) -> Vec<TrainSample> {
    let objects = if task == Task::Detection { 2 } else { 1 };
    let shape = BundleShape::single((16, 16), (8, 8), 4, objects);
    recovery_dataset(n, &shape, task, &hidden_params(task), seed)
        .iter()
        .map(|s| TrainSample::from_map(&s.bundle, &s.target, task, options).unwrap())
        .collect()
}

#[test]
fn recovers_generator_on_synthetic_detection_data() {
    let task = Task::Detection;
    let samples = dataset(200, task, HagOptions::for_task(task), 7);
    let config = TrainConfig::for_task(task);
    let (params, record) = train(&samples, &config).unwrap();
    assert!(record.best_val_loss.unwrap() < 0.01, "{record:?}");
    assert!(evaluate(&samples, &params).pcc.unwrap() > 0.9);
    let hidden = hidden_params(task).to_vector();
    let got = params.to_vector();
    for k in 0..4 {
        assert_eq!(got[k].signum(), hidden[k].signum(), "slope {k}: {got:?}");
    }
}

#[test]
fn single_sample_loss_does_not_increase_early() {
    let task = Task::Detection;
    let samples = dataset(1, task, HagOptions::for_task(task), 2);
    let refs: Vec<&TrainSample> = samples.iter().collect();
    let config = TrainConfig {
        max_epochs: 10,
        early_stop_patience: None,
        ..TrainConfig::for_task(task)
    };
    let (_, record) = fit(&refs, &[], &config, HagParams::initial(task)).unwrap();
    let losses: Vec<f64> = record.epochs.iter().map(|e| e.train_loss).collect();
    assert_eq!(losses.len(), 10);
    for w in losses.windows(2) {
        assert!(w[1] <= w[0], "{losses:?}");
    }
}

#[test]
fn plateau_stops_after_patience_plus_one_checks() {
    let task = Task::Detection;
    let frozen = HagOptions {
        smoothing: false,
        learn_activations: false,
        ..HagOptions::for_task(task)
    };
    let samples = dataset(6, task, frozen, 3);
    let refs: Vec<&TrainSample> = samples.iter().collect();
    let config = TrainConfig {
        early_stop_patience: Some(1),
        options: frozen,
        ..TrainConfig::for_task(task)
    };
    let (params, record) = fit(&refs[..4], &refs[4..], &config, HagParams::initial(task)).unwrap();
    assert_eq!(record.validation_checks, 2);
    assert_eq!(record.epochs.len(), 2);
    assert!(record.stopped_early);
    assert_eq!(params, HagParams::initial(task));
}

#[test]
fn cross_validation_is_deterministic_and_means_match_folds() {
    let task = Task::Detection;
    let samples = dataset(10, task, HagOptions::for_task(task), 4);
    let config = TrainConfig {
        max_epochs: 5,
        ..TrainConfig::for_task(task)
    };
    let a = cross_validate(&samples, &config, None).unwrap();
    let b = cross_validate(&samples, &config, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.folds.len(), 5);
    for f in &a.folds {
        assert_eq!(f.validation_indices.len(), 2);
        assert_eq!(f.train_indices.len(), 8);
    }
    let mean_loss = a.folds.iter().map(|f| f.validation.loss).sum::<f64>() / 5.0;
    let mean_rmse = a.folds.iter().map(|f| f.validation.rmse).sum::<f64>() / 5.0;
    assert!((a.mean_validation.loss - mean_loss).abs() < 1e-12);
    assert!((a.mean_validation.rmse - mean_rmse).abs() < 1e-12);
}

#[test]
fn classification_trains_without_area_normalisation() {
    let task = Task::Classification;
    let samples = dataset(12, task, HagOptions::for_task(task), 5);
    let config = TrainConfig {
        max_epochs: 20,
        ..TrainConfig::for_task(task)
    };
    let (params, record) = train(&samples, &config).unwrap();
    assert_eq!(record.epochs.len(), 20);
    assert!(record.best_val_loss.unwrap() <= record.initial_val_loss.unwrap());
    assert_eq!(params.kernel_size(), 9);
}
