//! Training on cases and the training-set DSC used to track overfitting.

use dins_core::clicksim::SamplingConfig;
use dins_core::metrics::dsc;
use dins_core::transforms::ExpParams;
use std::path::{Path, PathBuf};

use dins_net::train::{crop_clicks, EpochRecord};
use dins_net::{predict, train_with, Checkpoint, CheckpointMeta, Model, NetConfig, TrainConfig, TrainOutput, TrainSample};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::load_model;
use crate::phantom::{phantom_cases, read_dataset, Case, PhantomConfig};
use crate::HarnessError;

pub fn training_samples(cases: &[Case]) -> Vec<TrainSample> {
    cases.iter().map(|c| TrainSample { image: c.image.clone(), label: c.label.clone() }).collect()
}

/// Mean DSC of whole-volume predictions on `cases`, each given one draw of
/// training clicks from a generator seeded with `seed` plus the case index.
pub fn training_dsc(model: &Model, cases: &[Case], sampling: &SamplingConfig, exp: &ExpParams, seed: u64) -> Result<f64, HarnessError> {
    let mut total = 0.0;
    for (i, c) in cases.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let clicks = crop_clicks(&c.label, sampling, &mut rng)?;
        let pred = predict(model, &c.image, &clicks, exp, None)?;
        total += dsc(&pred, &c.label).map_err(|e| HarnessError::Config(e.to_string()))?;
    }
    Ok(total / cases.len().max(1) as f64)
}

/// Everything `train` needs: the network, the recipe and where the cases
/// come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainJob {
    pub net: NetConfig,
    pub train: TrainConfig,
    /// Reads `case_*` pairs from here; phantoms are generated when unset.
    pub data_dir: Option<PathBuf>,
    pub phantoms: PhantomConfig,
    pub phantom_count: usize,
    /// Starting weights; the network config is then taken from the checkpoint.
    pub init: Option<PathBuf>,
}

impl Default for TrainJob {
    fn default() -> Self {
        Self {
            net: NetConfig::default(),
            train: TrainConfig::default(),
            data_dir: None,
            phantoms: PhantomConfig::default(),
            phantom_count: 8,
            init: None,
        }
    }
}

impl TrainJob {
    pub fn load_cases(&self) -> Result<Vec<Case>, HarnessError> {
        match &self.data_dir {
            Some(dir) => read_dataset(dir),
            None if self.phantom_count == 0 => Err(HarnessError::Config("phantom_count must be at least 1".into())),
            None => phantom_cases(&self.phantoms, self.phantom_count),
        }
    }

    pub fn initial_model(&self) -> Result<Model, HarnessError> {
        match &self.init {
            Some(p) => load_model(p),
            None => Ok(Model::new(self.net.clone())?),
        }
    }
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,lr";

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    for r in history {
        out.push_str(&format!("{},{:.6},{:.6},{:e}\n", r.epoch, r.train_loss, r.val_loss, r.lr));
    }
    out
}

/// Trains on the job's cases and writes `best.ckpt`, `last.ckpt` (with
/// optimizer state) and `history.csv` under `out`.
pub fn run_training(job: &TrainJob, out: &Path) -> Result<TrainOutput, HarnessError> {
    let cases = job.load_cases()?;
    let model = job.initial_model()?;
    let samples = training_samples(&cases);
    log::info!("training on {} cases for {} epochs", samples.len(), job.train.epochs);
    let result = train_with(model, &samples, &job.train, |r, _| {
        log::info!("epoch {:>3} train {:.4} val {:.4} lr {:.1e}", r.epoch, r.train_loss, r.val_loss, r.lr);
        true
    })?;
    std::fs::create_dir_all(out).map_err(|e| HarnessError::Io(out.display().to_string(), e))?;
    let meta = |epoch: usize| CheckpointMeta {
        train: Some(job.train.clone()),
        epoch,
        lr: result.history.last().map_or(job.train.lr, |r| r.lr),
        history: result.history.clone(),
        ..CheckpointMeta::new(result.last.config().clone())
    };
    Checkpoint::from_model(&result.best, None, meta(result.best_epoch)).save(&out.join("best.ckpt"))?;
    Checkpoint::from_model(&result.last, Some(&result.adam), meta(result.history.len())).save(&out.join("last.ckpt"))?;
    let history = out.join("history.csv");
    std::fs::write(&history, history_csv(&result.history)).map_err(|e| HarnessError::Io(history.display().to_string(), e))?;
    Ok(result)
}
