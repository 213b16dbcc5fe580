//! Mini-batch training with per-sample click simulation.

use dins_core::clicksim::{sample_negative_clicks, sample_training_clicks, ClickError, SamplingConfig};
use dins_core::transforms::{expdt, ClickSet, ExpParams};
use dins_core::volume::{BoundingBox, Dims, Mask, Volume, VoxelIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment, AugmentConfig};
use crate::ops::{self, CE_EPS};
use crate::optim::{Adam, AdamConfig, PlateauConfig, ReduceOnPlateau};
use crate::predict::{region_inputs, zscore};
use crate::{Model, NetError, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Cross-entropy weights (background, foreground).
    pub loss_weights: [f64; 2],
    pub adam: AdamConfig,
    /// Initial learning rate.
    pub lr: f64,
    pub plateau: PlateauConfig,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Share of each batch whose crop must contain foreground.
    pub tumor_fraction: f64,
    /// Share of volumes held out for the plateau schedule. Zero validates on
    /// the training volumes with fixed crops and clicks.
    pub val_fraction: f64,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub sampling: SamplingConfig,
    pub exp: ExpParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss_weights: [1.0, 3.0],
            adam: AdamConfig::default(),
            lr: 3e-4,
            plateau: PlateauConfig::default(),
            batches_per_epoch: 200,
            batch_size: 2,
            epochs: 80,
            tumor_fraction: 0.5,
            val_fraction: 0.2,
            seed: 0,
            augment: AugmentConfig::default(),
            sampling: SamplingConfig::default(),
            exp: ExpParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: &str| Err(NetError::Config(m.into()));
        if !self.loss_weights.iter().all(|w| w.is_finite() && *w > 0.0) {
            return bad("loss weights must be positive");
        }
        let f = self.plateau.factor;
        if !(f > 0.0 && f < 1.0) {
            return bad("plateau factor must lie in (0, 1)");
        }
        if !(self.lr > 0.0 && self.plateau.min_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.batch_size == 0 || self.batches_per_epoch == 0 {
            return bad("batch size and batches per epoch must be positive");
        }
        if !(0.0..=1.0).contains(&self.tumor_fraction) || !(0.0..1.0).contains(&self.val_fraction) {
            return bad("tumor_fraction must lie in [0, 1] and val_fraction in [0, 1)");
        }
        self.sampling.validate().map_err(|e| NetError::Config(e.to_string()))?;
        self.exp.validate().map_err(|e| NetError::Config(e.to_string()))
    }
}

/// One labeled training volume.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub image: Volume,
    pub label: Mask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Rate used during this epoch.
    pub lr: f64,
}

/// Normalized, padded volume ready for cropping.
struct Prepared {
    image: Volume,
    label: Mask,
    foreground: Vec<VoxelIndex>,
}

fn prepare(s: &TrainSample, crop: [usize; 3]) -> Result<Prepared, NetError> {
    if s.image.dims() != s.label.dims() {
        return Err(NetError::Shape(format!("image {:?} and label {:?} differ", s.image.dims(), s.label.dims())));
    }
    let src = s.image.dims().as_array();
    let dims = Dims::new(src[0].max(crop[0]), src[1].max(crop[1]), src[2].max(crop[2]));
    let mut image = Volume::zeros(dims, s.image.spacing());
    let mut label = Mask::empty(dims, s.image.spacing());
    let region = BoundingBox::full(s.image.dims());
    image.paste_in_place(&zscore(&s.image), &region).expect("padded grid holds the source");
    label.paste_in_place(&s.label, &region).expect("padded grid holds the source");
    let foreground = label.voxels().collect();
    Ok(Prepared { image, label, foreground })
}

fn crop_at(origin: [usize; 3], size: [usize; 3]) -> BoundingBox {
    BoundingBox::new(
        VoxelIndex::new(origin[0], origin[1], origin[2]),
        VoxelIndex::new(origin[0] + size[0] - 1, origin[1] + size[1] - 1, origin[2] + size[2] - 1),
    )
    .expect("ordered")
}

/// Training clicks for one crop, degrading gracefully when the crop holds
/// little or no foreground.
pub fn crop_clicks<R: Rng>(label: &Mask, cfg: &SamplingConfig, rng: &mut R) -> Result<ClickSet, NetError> {
    let err = |e: ClickError| NetError::Config(e.to_string());
    match sample_training_clicks(label, cfg, rng) {
        Ok(c) => Ok(c),
        Err(ClickError::EmptyAfterErosion) => {
            let relaxed = SamplingConfig { d_margin: 0, ..cfg.clone() };
            sample_training_clicks(label, &relaxed, rng).map_err(err)
        }
        Err(ClickError::EmptyGroundTruth) => {
            Ok(ClickSet { positives: Vec::new(), negatives: sample_negative_clicks(label, cfg, rng).map_err(err)? })
        }
        Err(e) => Err(err(e)),
    }
}

fn guides(image: &Volume, clicks: &ClickSet, exp: &ExpParams) -> Result<(Volume, Volume), NetError> {
    let g = |s| expdt(image.dims(), image.spacing(), s, exp).map_err(|e| NetError::Config(e.to_string()));
    Ok((g(&clicks.positives)?, g(&clicks.negatives)?))
}

/// A stacked mini-batch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub image: Tensor,
    pub guides: Tensor,
    pub target: Vec<bool>,
    /// Source volume of each element.
    pub sources: Vec<usize>,
    pub clicks: Vec<ClickSet>,
}

impl Batch {
    fn stack(elements: Vec<(Tensor, Tensor, Vec<bool>, usize, ClickSet)>) -> Batch {
        let n = elements.len();
        let [_, _, d, h, w] = elements[0].0.dims5();
        let (mut image, mut guides, mut target, mut sources, mut clicks) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (x, g, t, s, c) in elements {
            image.extend_from_slice(x.data());
            guides.extend_from_slice(g.data());
            target.extend(t);
            sources.push(s);
            clicks.push(c);
        }
        Batch {
            image: Tensor::from_vec(&[n, 1, d, h, w], image).expect("stacked"),
            guides: Tensor::from_vec(&[n, 2, d, h, w], guides).expect("stacked"),
            target,
            sources,
            clicks,
        }
    }
}

/// Draws random crops with fresh clicks and augmentation on every call.
pub struct BatchSampler {
    volumes: Vec<Prepared>,
    crop: [usize; 3],
    cfg: TrainConfig,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(data: &[TrainSample], crop: [usize; 3], cfg: &TrainConfig, seed: u64) -> Result<Self, NetError> {
        if data.is_empty() {
            return Err(NetError::Config("training set is empty".into()));
        }
        let volumes = data.iter().map(|s| prepare(s, crop)).collect::<Result<Vec<_>, _>>()?;
        if volumes.iter().all(|v| v.foreground.is_empty()) {
            return Err(NetError::Config("training set has no foreground".into()));
        }
        Ok(Self { volumes, crop, cfg: cfg.clone(), rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    fn element(&mut self, with_tumor: bool) -> Result<(Tensor, Tensor, Vec<bool>, usize, ClickSet), NetError> {
        let candidates: Vec<usize> = (0..self.volumes.len()).filter(|&i| !with_tumor || !self.volumes[i].foreground.is_empty()).collect();
        let idx = candidates[self.rng.random_range(0..candidates.len())];
        let vol = &self.volumes[idx];
        let dims = vol.image.dims().as_array();
        let origin: [usize; 3] = if with_tumor {
            let v = vol.foreground[self.rng.random_range(0..vol.foreground.len())].as_array();
            let mut o = [0; 3];
            for a in 0..3 {
                let lo = (v[a] + 1).saturating_sub(self.crop[a]);
                let hi = v[a].min(dims[a] - self.crop[a]);
                o[a] = self.rng.random_range(lo..=hi);
            }
            o
        } else {
            [0, 1, 2].map(|a| self.rng.random_range(0..=dims[a] - self.crop[a]))
        };
        let b = crop_at(origin, self.crop);
        let (image, label) = (vol.image.crop(&b).expect("in grid"), vol.label.crop(&b).expect("in grid"));
        let (image, label) = augment(&image, &label, &self.cfg.augment, &mut self.rng);
        let clicks = crop_clicks(&label, &self.cfg.sampling, &mut self.rng)?;
        let (fg, bg) = guides(&image, &clicks, &self.cfg.exp)?;
        let (x, g) = region_inputs(&image, &fg, &bg, self.crop);
        Ok((x, g, label.into_data(), idx, clicks))
    }

    pub fn next_batch(&mut self) -> Result<Batch, NetError> {
        let n = self.cfg.batch_size;
        let tumors = (self.cfg.tumor_fraction * n as f64).ceil() as usize;
        let elements = (0..n).map(|i| self.element(i < tumors)).collect::<Result<Vec<_>, _>>()?;
        Ok(Batch::stack(elements))
    }
}

/// Fixed validation inputs: one centered crop per volume with seeded clicks.
fn validation_set(data: &[TrainSample], crop: [usize; 3], cfg: &TrainConfig) -> Result<Vec<Batch>, NetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    data.iter()
        .enumerate()
        .map(|(i, s)| {
            let vol = prepare(s, crop)?;
            let dims = vol.image.dims().as_array();
            let center = vol.label.bounding_box().map_or([dims[0] / 2, dims[1] / 2, dims[2] / 2], |b| {
                [0, 1, 2].map(|a| (b.min.as_array()[a] + b.max.as_array()[a]) / 2)
            });
            let origin = [0, 1, 2].map(|a| center[a].saturating_sub(crop[a] / 2).min(dims[a] - crop[a]));
            let b = crop_at(origin, crop);
            let (image, label) = (vol.image.crop(&b).expect("in grid"), vol.label.crop(&b).expect("in grid"));
            let clicks = crop_clicks(&label, &cfg.sampling, &mut rng)?;
            let (fg, bg) = guides(&image, &clicks, &cfg.exp)?;
            let (x, g) = region_inputs(&image, &fg, &bg, crop);
            Ok(Batch::stack(vec![(x, g, label.into_data(), i, clicks)]))
        })
        .collect()
}

/// Weighted cross-entropy of one batch.
pub fn batch_loss(model: &Model, batch: &Batch, weights: [f64; 2]) -> Result<f64, NetError> {
    let logits = model.forward(&batch.image, &batch.guides)?;
    Ok(ops::weighted_ce(&ops::softmax2(&logits), &batch.target, (weights[0], weights[1]), CE_EPS).0)
}

/// One optimizer step; returns the batch loss before the update.
pub fn train_step(model: &mut Model, adam: &mut Adam, batch: &Batch, weights: [f64; 2], lr: f64) -> Result<f64, NetError> {
    let (logits, tape) = model.forward_train(&batch.image, &batch.guides)?;
    let (loss, dlogits) = ops::weighted_ce(&ops::softmax2(&logits), &batch.target, (weights[0], weights[1]), CE_EPS);
    let mut grads = model.params().zeros_like();
    model.backward(&tape, &dlogits, &mut grads);
    adam.update(model.params_mut().tensors_mut(), &grads, lr);
    Ok(loss)
}

/// Splits volume indices into (train, validation) with a seeded shuffle.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    if val_fraction <= 0.0 || n < 2 {
        return (idx.clone(), idx);
    }
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((val_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    train.sort_unstable();
    (train, val)
}

pub struct TrainOutput {
    /// Parameters with the lowest validation loss.
    pub best: Model,
    pub best_epoch: usize,
    /// Parameters after the last epoch.
    pub last: Model,
    pub adam: Adam,
    pub history: Vec<EpochRecord>,
}

/// Trains for `cfg.epochs` epochs. `on_epoch` sees each finished epoch with
/// the current model and can stop training early by returning `false`.
pub fn train_with<F>(model: Model, data: &[TrainSample], cfg: &TrainConfig, mut on_epoch: F) -> Result<TrainOutput, NetError>
where
    F: FnMut(&EpochRecord, &Model) -> bool,
{
    cfg.validate()?;
    let crop = model.config().in_dims;
    let (train_idx, val_idx) = split_indices(data.len(), cfg.val_fraction, cfg.seed);
    let pick = |ids: &[usize]| ids.iter().map(|&i| data[i].clone()).collect::<Vec<_>>();
    let mut sampler = BatchSampler::new(&pick(&train_idx), crop, cfg, cfg.seed)?;
    let val = validation_set(&pick(&val_idx), crop, cfg)?;

    let mut model = model;
    let mut adam = Adam::new(cfg.adam, model.params().tensors());
    let mut schedule = ReduceOnPlateau::new(cfg.plateau, cfg.lr);
    let mut best = (f64::INFINITY, 0, model.clone());
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let lr = schedule.lr;
        let mut total = 0.0;
        for _ in 0..cfg.batches_per_epoch {
            total += train_step(&mut model, &mut adam, &sampler.next_batch()?, cfg.loss_weights, lr)?;
        }
        let train_loss = total / cfg.batches_per_epoch as f64;
        let val_loss = val.iter().map(|b| batch_loss(&model, b, cfg.loss_weights)).sum::<Result<f64, _>>()? / val.len() as f64;
        schedule.observe(val_loss);
        let record = EpochRecord { epoch, train_loss, val_loss, lr };
        log::info!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} lr {lr:.2e}");
        if val_loss < best.0 {
            best = (val_loss, epoch, model.clone());
        }
        history.push(record.clone());
        if !on_epoch(&record, &model) {
            break;
        }
    }
    Ok(TrainOutput { best: best.2, best_epoch: best.1, last: model, adam, history })
}

pub fn train(model: Model, data: &[TrainSample], cfg: &TrainConfig) -> Result<TrainOutput, NetError> {
    train_with(model, data, cfg, |_, _| true)
}
