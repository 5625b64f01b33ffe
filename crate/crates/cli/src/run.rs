use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use stmamba::data::{effective_length, import_csv, read_archive, write_archive, ChannelStats, Dataset, EEGTrialSet, SplitSpec};
use stmamba::embedding::EmbeddingConfig;
use stmamba::model::{load_checkpoint, save_checkpoint, Ablation, ModelConfig, STMambaNet};
use stmamba::training::{evaluate, train_loop, write_history, Metrics, StopReason, TrainConfig};
use stmamba::{Error, Float};

use crate::manifest::{self, Artifacts, DataSource, RunManifest, MANIFEST};
use crate::{emit, EvalArgs, Failure, Outcome, Precision, TrainArgs};

/// Batch size of every test-set evaluation, so that `eval` repeats the
/// arithmetic of `train` exactly.
pub const EVAL_BATCH: usize = 64;

#[derive(Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: Dataset,
    pub subject: Option<String>,
    pub ablation: Ablation,
    pub precision: Precision,
    pub n_parameters: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub stop: StopReason,
    /// Test metrics of the saved checkpoint.
    pub test: Metrics,
    /// Test metrics before the checkpoint was rounded to 32 bits, for
    /// 64-bit runs.
    pub test_native: Option<Metrics>,
    pub seconds: f64,
}

pub fn load_set(path: &Path) -> Result<EEGTrialSet, Failure> {
    if path.is_dir() {
        Ok(import_csv(path)?)
    } else {
        Ok(read_archive(path)?)
    }
}

fn resolve(a: &TrainArgs) -> Result<(RunManifest, EEGTrialSet), Failure> {
    let (source, set) = match &a.data {
        Some(path) => {
            let source = manifest::source_for(path)?;
            let set = load_set(path)?;
            (source, set)
        }
        None => {
            if a.dataset != Dataset::Synth {
                return Err(Failure::user(format!("--dataset {} needs --data", a.dataset)));
            }
            let (train, test) = manifest::synth_configs(&a.synth, a.seed);
            let set = manifest::synth_sessions(&train, &test)?;
            (DataSource::Synth { train, test }, set)
        }
    };
    a.dataset.check(&set)?;

    let defaults = TrainConfig::default();
    let max_epochs = a.epochs.unwrap_or(defaults.max_epochs);
    let train = TrainConfig {
        lr: a.lr.unwrap_or(defaults.lr),
        max_epochs,
        patience: a.patience.unwrap_or(defaults.patience.min(max_epochs)),
        batch_size: a.batch_size.unwrap_or(defaults.batch_size),
        augment_multiplier: a.augment.unwrap_or(defaults.augment_multiplier),
        seed: a.seed,
        ..defaults
    };
    train.validate()?;

    let embedding = EmbeddingConfig::new(set.n_channels());
    let crop = effective_length(set.n_samples(), train.n_segments, embedding.pool_window, embedding.pool_stride)
        .ok_or_else(|| Failure::user(format!("trials of {} samples are too short for the model", set.n_samples())))?;
    let model = ModelConfig::new(set.n_channels(), crop, set.n_classes)?.with_ablation(a.ablation);
    let mut split = SplitSpec::for_dataset(a.dataset, &set)?;
    split.val_fraction = a.val_fraction;
    split.validate()?;

    let m = RunManifest {
        format: manifest::FORMAT.into(),
        version: manifest::VERSION,
        dataset: a.dataset,
        subject: a.subject.clone(),
        source,
        crop,
        precision: a.precision,
        model_seed: a.seed,
        model,
        train,
        split,
        artifacts: Artifacts::default(),
    };
    Ok((m, set))
}

pub fn train(a: TrainArgs, json: bool) -> Outcome {
    let (m, set) = match &a.manifest {
        Some(path) => {
            let m = RunManifest::read(path)?;
            let set = m.load_data()?;
            m.dataset.check(&set)?;
            (m, set)
        }
        None => resolve(&a)?,
    };
    if (set.n_channels(), set.n_classes) != (m.model.n_channels, m.model.n_classes) {
        return Err(Error::Manifest(format!(
            "data has {} channels and {} classes, model expects {} and {}",
            set.n_channels(),
            set.n_classes,
            m.model.n_channels,
            m.model.n_classes
        ))
        .into());
    }
    fs::create_dir_all(&a.out)?;
    if a.out.join(MANIFEST).exists() {
        return Err(Failure::user(format!("{} already holds a run manifest", a.out.display())));
    }

    let set = set.crop(m.crop)?;
    let raw = m.split.apply(&set)?;
    let (splits, stats) = raw.standardized()?;
    m.write(&a.out)?;
    let out = |name: &str| a.out.join(name);
    fs::write(out(&m.artifacts.standardization), serde_json::to_string_pretty(&stats)? + "\n")?;
    write_archive(&raw.test, out(&m.artifacts.test_set))?;
    log::info!(
        "{} train / {} val / {} test trials of {} x {} samples",
        splits.train.len(),
        splits.val.len(),
        splits.test.len(),
        set.n_channels(),
        set.n_samples()
    );

    let report = match m.precision {
        Precision::F32 => fit::<f32>(&m, &splits, &a.out)?,
        Precision::F64 => fit::<f64>(&m, &splits, &a.out)?,
    };
    fs::write(out(&m.artifacts.report), serde_json::to_string_pretty(&report)? + "\n")?;
    emit(json, &report, || {
        println!("test accuracy: {:.2}%", report.test.accuracy);
        if let Some(native) = &report.test_native {
            println!("test accuracy before checkpoint rounding: {:.2}%", native.accuracy);
        }
        println!("best epoch {} of {} (val {:.2}%)", report.best_epoch, report.epochs_run, report.best_val_acc);
        println!("run directory: {}", a.out.display());
    })?;
    if let StopReason::Diverged { epoch, detail } = &report.stop {
        return Err(Failure { code: 4, message: format!("training diverged at epoch {epoch}: {detail}") });
    }
    Ok(())
}

fn fit<T: Float>(m: &RunManifest, splits: &stmamba::data::Splits, dir: &Path) -> Result<RunReport, Failure> {
    let start = Instant::now();
    let model = STMambaNet::<T>::new(m.model.clone(), m.model_seed)?;
    let n_parameters = model.num_parameters();
    log::info!("{} model with {n_parameters} parameters", m.model.ablation);
    let outcome = train_loop(model, &splits.train, &splits.val, &m.train, |_| {})?;
    let mut history = BufWriter::new(File::create(dir.join(&m.artifacts.history))?);
    write_history(&outcome.history, &mut history)?;
    history.flush()?;

    let checkpoint = dir.join(&m.artifacts.checkpoint);
    save_checkpoint(&outcome.model, &checkpoint)?;
    let mut restored: STMambaNet<f32> = load_checkpoint(&checkpoint)?;
    let test = evaluate(&mut restored, &splits.test, EVAL_BATCH)?;
    let test_native = if T::NAME == "f64" {
        let mut best = outcome.model;
        Some(evaluate(&mut best, &splits.test, EVAL_BATCH)?)
    } else {
        None
    };
    Ok(RunReport {
        dataset: m.dataset,
        subject: m.subject.clone(),
        ablation: m.model.ablation,
        precision: m.precision,
        n_parameters,
        epochs_run: outcome.history.len(),
        best_epoch: outcome.best_epoch,
        best_val_acc: outcome.best_val_acc,
        stop: outcome.stop,
        test,
        test_native,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn print_metrics(m: &Metrics) {
    println!("accuracy: {:.2}%", m.accuracy);
    if let Some(loss) = m.loss {
        println!("loss: {loss:.4}");
    }
    println!("confusion (rows true, columns predicted):");
    for (k, row) in m.confusion.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|c| format!("{c:>5}")).collect();
        println!("  {k:>2} |{}  {:6.2}%", cells.join(""), m.per_class_accuracy[k]);
    }
}

pub fn eval(a: EvalArgs, json: bool) -> Outcome {
    let mut model: STMambaNet<f32> = load_checkpoint(&a.checkpoint)?;
    let stats_path = a.stats.clone().unwrap_or_else(|| {
        a.checkpoint.parent().map(Path::to_path_buf).unwrap_or_default().join("standardization.json")
    });
    let stats: ChannelStats = serde_json::from_str(&fs::read_to_string(&stats_path)?)?;
    let set = load_set(&a.data)?;
    let cfg = &model.cfg;
    if set.is_empty() {
        return Err(Failure::user(format!("{} contains no trials", a.data.display())));
    }
    if set.n_channels() != cfg.n_channels || set.n_classes != cfg.n_classes || set.n_samples() < cfg.n_samples {
        return Err(Failure::user(format!(
            "checkpoint expects {} channels, {} classes and at least {} samples; data has {}, {} and {}",
            cfg.n_channels,
            cfg.n_classes,
            cfg.n_samples,
            set.n_channels(),
            set.n_classes,
            set.n_samples()
        )));
    }
    let set = stats.apply(&set.crop(cfg.n_samples)?)?;
    let metrics = evaluate(&mut model, &set, EVAL_BATCH)?;
    emit(json, &metrics, || print_metrics(&metrics))
}
