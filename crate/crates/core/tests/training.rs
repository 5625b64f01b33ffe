use stmamba::data::{synth_generate, EEGTrialSet, SynthConfig};
use stmamba::model::{ModelConfig, STMambaNet};
use stmamba::tensor::NormConfig;
use stmamba::training::{evaluate, train_loop, EpochRecord, StopReason, TrainConfig};

fn tiny_sets(snr_db: f64) -> (EEGTrialSet, EEGTrialSet) {
    let train = synth_generate(&SynthConfig::new(12, 2, 3, 64, snr_db, 1)).unwrap();
    let val = synth_generate(&SynthConfig::new(6, 2, 3, 64, snr_db, 2)).unwrap();
    (train, val)
}

fn tiny_model(seed: u64) -> STMambaNet<f64> {
    STMambaNet::new(ModelConfig::tiny(), seed).unwrap()
}

fn run(model: STMambaNet<f64>, cfg: &TrainConfig, snr_db: f64) -> (Vec<EpochRecord>, StopReason) {
    let (train, val) = tiny_sets(snr_db);
    let out = train_loop(model, &train, &val, cfg, |_| {}).unwrap();
    (out.history, out.stop)
}

#[test]
fn frozen_model_stops_after_patience_plus_one_epochs() {
    let mut cfg = ModelConfig::tiny();
    cfg.embedding.norm = NormConfig { momentum: 0.0, ..Default::default() };
    let model = STMambaNet::new(cfg, 0).unwrap();
    let tc = TrainConfig { lr: 0.0, max_epochs: 20, patience: 3, batch_size: 8, ..Default::default() };
    let (history, stop) = run(model, &tc, 20.0);
    assert_eq!(stop, StopReason::EarlyStopping);
    assert_eq!(history.len(), 4);
    assert!(history[0].improved);
    let stale: Vec<usize> = history.iter().map(|r| r.epochs_without_improvement).collect();
    assert_eq!(stale, vec![0, 1, 2, 3]);
    assert!(history.windows(2).all(|w| w[0].val_acc == w[1].val_acc && w[0].val_loss == w[1].val_loss));
}

#[test]
fn zero_patience_runs_to_max_epochs_while_improving() {
    let tc = TrainConfig { lr: 1e-3, max_epochs: 4, patience: 0, batch_size: 8, ..Default::default() };
    let (history, stop) = run(tiny_model(1), &tc, 30.0);
    assert!(history.iter().all(|r| r.improved), "{history:?}");
    assert_eq!(stop, StopReason::MaxEpochs);
    assert_eq!(history.len(), 4);
}

#[test]
fn identical_seeds_give_identical_history() {
    let tc = TrainConfig { max_epochs: 3, patience: 3, batch_size: 8, seed: 4, ..Default::default() };
    let strip = |h: Vec<EpochRecord>| {
        h.into_iter().map(|r| EpochRecord { seconds: 0.0, ..r }).collect::<Vec<_>>()
    };
    let (a, _) = run(tiny_model(2), &tc, 10.0);
    let (b, _) = run(tiny_model(2), &tc, 10.0);
    let bits = |h: &[EpochRecord]| h.iter().flat_map(|r| [r.train_loss.to_bits(), r.val_loss.to_bits()]).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(strip(a), strip(b.clone()));
    let (c, _) = run(tiny_model(2), &TrainConfig { seed: 5, ..tc }, 10.0);
    assert_ne!(bits(&b), bits(&c));
}

#[test]
fn loss_falls_over_first_ten_epochs() {
    let tc = TrainConfig { max_epochs: 10, patience: 10, batch_size: 8, lr: 2e-3, ..Default::default() };
    let (history, _) = run(tiny_model(3), &tc, 30.0);
    let losses: Vec<f64> = history.iter().map(|r| r.train_loss).collect();
    let avg: Vec<f64> = losses.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    assert!(avg.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn returned_model_is_best_snapshot() {
    let (train, val) = tiny_sets(10.0);
    let tc = TrainConfig { max_epochs: 6, patience: 6, batch_size: 8, ..Default::default() };
    let out = train_loop(tiny_model(6), &train, &val, &tc, |_| {}).unwrap();
    let best = out.history.iter().map(|r| r.val_acc).fold(f64::MIN, f64::max);
    assert_eq!(out.best_val_acc, best);
    assert_eq!(out.history[out.best_epoch - 1].val_acc, best);
    let mut model = out.model;
    let m = evaluate(&mut model, &val, 8).unwrap();
    assert_eq!(m.accuracy, best);
    assert!((m.loss.unwrap() - out.best_val_loss).abs() < 1e-12);
}

#[test]
fn empty_split_is_a_config_error() {
    let (train, val) = tiny_sets(10.0);
    let empty = val.subset(&[]);
    let tc = TrainConfig { max_epochs: 1, patience: 1, ..Default::default() };
    assert!(train_loop(tiny_model(0), &train, &empty, &tc, |_| {}).is_err());
}
