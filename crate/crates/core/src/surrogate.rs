//! Per-point segmentation surrogate: six geometric features into a small
//! dense network.

use crate::error::{Error, Result};
use crate::nn::{DenseNet, Sgd};
use crate::pointcloud::{LabelArray, PointCloud};
use crate::rng::{derive_seed, rng_from_seed};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

pub const FEATURE_WIDTH: usize = 6;
pub const FEATURE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Neighborhood radius in meters; also the hash-grid cell size.
    pub radius: f64,
    /// Neighbor count that maps to density 1.
    pub density_cap: f64,
    /// Coordinates and range are divided by this many meters.
    pub coord_scale: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            radius: 1.0,
            density_cap: 32.0,
            coord_scale: 10.0,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.density_cap > 0.0 && self.coord_scale > 0.0) {
            return Err(Error::InvalidSpec("feature radius, cap and scale must be > 0".into()));
        }
        Ok(())
    }
}

/// Row `i` is `[x, y, z, r] / coord_scale ++ [intensity, density]` for point `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFeatures(pub Array2<f64>);

impl PointFeatures {
    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }
}

fn cell_of(v: f64, size: f64) -> i64 {
    (v / size).floor() as i64
}

/// Number of other points within `radius` (inclusive) of each point, using a
/// uniform hash grid with cell size `radius` so each query visits 27 cells.
pub fn neighbor_counts(cloud: &PointCloud, radius: f64) -> Vec<u32> {
    let (xs, ys, zs) = (cloud.x(), cloud.y(), cloud.z());
    let key = |i: usize| (cell_of(xs[i], radius), cell_of(ys[i], radius), cell_of(zs[i], radius));
    let mut grid: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
    for i in 0..cloud.len() {
        grid.entry(key(i)).or_default().push(i as u32);
    }
    let r2 = radius * radius;
    (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let (cx, cy, cz) = key(i);
            let mut count = 0u32;
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        let Some(cell) = grid.get(&(cx + dx, cy + dy, cz + dz)) else {
                            continue;
                        };
                        for &j in cell {
                            let j = j as usize;
                            if j == i {
                                continue;
                            }
                            let (ddx, ddy, ddz) = (xs[i] - xs[j], ys[i] - ys[j], zs[i] - zs[j]);
                            if ddx * ddx + ddy * ddy + ddz * ddz <= r2 {
                                count += 1;
                            }
                        }
                    }
                }
            }
            count
        })
        .collect()
}

pub fn featurize(cloud: &PointCloud, cfg: &FeatureConfig) -> PointFeatures {
    let counts = neighbor_counts(cloud, cfg.radius);
    let s = cfg.coord_scale;
    let mut f = Array2::zeros((cloud.len(), FEATURE_WIDTH));
    for (i, mut row) in f.outer_iter_mut().enumerate() {
        row[0] = cloud.x()[i] / s;
        row[1] = cloud.y()[i] / s;
        row[2] = cloud.z()[i] / s;
        row[3] = cloud.range(i) / s;
        row[4] = cloud.intensity()[i];
        row[5] = (f64::from(counts[i]) / cfg.density_cap).min(1.0);
    }
    PointFeatures(f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub momentum: f64,
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    pub ignore_label: u16,
    pub features: FeatureConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 256,
            lr: 0.05,
            clip_norm: 100.0,
            momentum: 0.0,
            hidden: vec![64, 64],
            num_classes: crate::pointcloud::NUM_SCENE_CLASSES,
            ignore_label: crate::config::DEFAULT_IGNORE_LABEL,
            features: FeatureConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.num_classes == 0 {
            return Err(Error::InvalidSpec("batch size and class count must be > 0".into()));
        }
        if !(self.lr > 0.0 && self.clip_norm > 0.0 && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::InvalidSpec(
                "need lr > 0, clip_norm > 0, 0 <= momentum < 1".into(),
            ));
        }
        self.features.validate()
    }
}

/// Metadata stored next to a surrogate checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateMeta {
    pub num_classes: usize,
    pub ignore_label: u16,
    pub feature_version: u32,
    pub features: FeatureConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    pub net: DenseNet,
    pub features: FeatureConfig,
    pub num_classes: usize,
    pub ignore_label: u16,
}

impl SurrogateModel {
    /// The seeded, untrained model `train_surrogate` starts from.
    pub fn init(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut sizes = vec![FEATURE_WIDTH];
        sizes.extend(&cfg.hidden);
        sizes.push(cfg.num_classes);
        Ok(Self {
            net: DenseNet::new(&sizes, derive_seed(cfg.seed, 0, "surrogate-init"))?,
            features: cfg.features,
            num_classes: cfg.num_classes,
            ignore_label: cfg.ignore_label,
        })
    }

    pub fn featurize(&self, cloud: &PointCloud) -> PointFeatures {
        featurize(cloud, &self.features)
    }

    pub fn meta(&self) -> SurrogateMeta {
        SurrogateMeta {
            num_classes: self.num_classes,
            ignore_label: self.ignore_label,
            feature_version: FEATURE_VERSION,
            features: self.features,
        }
    }

    pub fn from_parts(net: DenseNet, meta: &SurrogateMeta) -> Result<Self> {
        if meta.feature_version != FEATURE_VERSION {
            return Err(Error::Checkpoint(format!(
                "feature version {} unsupported",
                meta.feature_version
            )));
        }
        if net.input_width() != FEATURE_WIDTH || net.output_width() != meta.num_classes {
            return Err(Error::Checkpoint("network shape does not match metadata".into()));
        }
        Ok(Self {
            net,
            features: meta.features,
            num_classes: meta.num_classes,
            ignore_label: meta.ignore_label,
        })
    }
}

/// Row `i` holds the class scores of point `i`.
pub fn predict_logits(model: &SurrogateModel, cloud: &PointCloud) -> Array2<f64> {
    logits_from_features(model, &model.featurize(cloud))
}

pub fn logits_from_features(model: &SurrogateModel, feats: &PointFeatures) -> Array2<f64> {
    model
        .net
        .forward(feats.0.view())
        .expect("feature width is fixed by construction")
}

/// Arg-max class per row; ties go to the lowest class id.
pub fn argmax_rows(logits: &Array2<f64>) -> Vec<u16> {
    logits
        .outer_iter()
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best as u16
        })
        .collect()
}

pub fn predict_classes(model: &SurrogateModel, cloud: &PointCloud) -> Vec<u16> {
    argmax_rows(&predict_logits(model, cloud))
}

/// Visiting order of scenes in one epoch.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(derive_seed(seed, epoch as u64, "epoch-order")));
    order
}

/// Seed for the minibatch shuffle of the `k`-th scene visited in `epoch`.
pub fn minibatch_seed(seed: u64, epoch: usize, k: usize, n: usize) -> u64 {
    derive_seed(seed, (epoch * n + k) as u64, "minibatch")
}

/// Owns a model and its optimizer while training.
pub struct Trainer {
    pub model: SurrogateModel,
    opt: Sgd,
    batch_size: usize,
}

impl Trainer {
    pub fn new(model: SurrogateModel, cfg: &TrainConfig) -> Self {
        Self {
            model,
            opt: Sgd::new(cfg.lr, cfg.clip_norm, cfg.momentum),
            batch_size: cfg.batch_size,
        }
    }

    /// One pass of shuffled minibatch SGD over a scene.
    ///
    /// Returns the mean minibatch loss, or `None` when every label is ignored.
    pub fn fit_scene(&mut self, feats: &PointFeatures, labels: &LabelArray, seed: u64) -> Result<Option<f64>> {
        if feats.len() != labels.len() {
            return Err(Error::LengthMismatch(format!(
                "{} feature rows, {} labels",
                feats.len(),
                labels.len()
            )));
        }
        let mut idx: Vec<usize> = (0..feats.len()).collect();
        idx.shuffle(&mut rng_from_seed(seed));
        let (mut sum, mut batches) = (0.0, 0usize);
        for chunk in idx.chunks(self.batch_size) {
            let targets: Vec<u16> = chunk.iter().map(|&i| labels.semantic[i]).collect();
            if targets.iter().all(|&t| t == labels.ignore_label) {
                continue;
            }
            let x = feats.0.select(Axis(0), chunk);
            let (loss, grads) = self.model.net.loss_and_grad(x.view(), &targets, labels.ignore_label)?;
            self.opt.step(&mut self.model.net, &grads)?;
            sum += loss;
            batches += 1;
        }
        if !self.model.net.is_finite() {
            return Err(Error::NonFinite("surrogate parameters diverged".into()));
        }
        Ok((batches > 0).then(|| sum / batches as f64))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SurrogateModel,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

fn mean_or_zero(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Trains a freshly initialized surrogate on labeled scenes.
pub fn train_surrogate(scenes: &[(PointCloud, LabelArray)], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let model = SurrogateModel::init(cfg)?;
    train_surrogate_from(model, scenes, cfg)
}

/// Continues training `model`; deterministic for a fixed `cfg.seed`.
pub fn train_surrogate_from(
    model: SurrogateModel,
    scenes: &[(PointCloud, LabelArray)],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::EmptyInput("no training scenes"));
    }
    for (cloud, labels) in scenes {
        labels.check_paired(cloud)?;
        labels.validate(cfg.num_classes)?;
    }
    let feats: Vec<PointFeatures> = scenes.par_iter().map(|(c, _)| model.featurize(c)).collect();
    let mut trainer = Trainer::new(model, cfg);
    let n = scenes.len();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut losses = Vec::with_capacity(n);
        for (k, &s) in epoch_order(cfg.seed, epoch, n).iter().enumerate() {
            if let Some(l) = trainer.fit_scene(&feats[s], &scenes[s].1, minibatch_seed(cfg.seed, epoch, k, n))? {
                losses.push(l);
            }
        }
        epoch_losses.push(mean_or_zero(&losses));
    }
    Ok(TrainOutcome {
        model: trainer.model,
        epoch_losses,
    })
}

/// Mean cross-entropy of `model` on a labeled cloud, together with the logits.
///
/// An empty cloud, or one whose labels are all ignored, has loss 0.
pub fn scene_loss(model: &SurrogateModel, cloud: &PointCloud, labels: &LabelArray) -> Result<(f64, Array2<f64>)> {
    labels.check_paired(cloud)?;
    let logits = predict_logits(model, cloud);
    match crate::nn::softmax_cross_entropy(&logits, &labels.semantic, labels.ignore_label) {
        Ok((loss, _)) => Ok((loss, logits)),
        Err(Error::AllIgnored) => Ok((0.0, logits)),
        Err(e) => Err(e),
    }
}
