//! The augmentation training loop: selective jitter, state from loss and
//! entropy, drop action, reward, agent update, surrogate update.

use super::{
    agent_train_step, apply_drop_action, build_state, mean_entropy, point_entropies, select_action, ActionSpace,
    AgentConfig, QAgent, Transition,
};
use crate::augment::{compose_sj, AugmentSpec};
use crate::error::{Error, Result};
use crate::nn::softmax_cross_entropy;
use crate::pointcloud::{LabelArray, PointCloud};
use crate::rng::{derive_seed, rng_from_seed};
use crate::surrogate::{
    epoch_order, logits_from_features, minibatch_seed, PointFeatures, SurrogateModel, TrainConfig, Trainer,
};
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Loss and entropy before (`aug`) and after (`lpd`) the drop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub l_aug: f64,
    pub h_aug: f64,
    pub l_lpd: f64,
    pub h_lpd: f64,
}

/// `(L_lpd + H_lpd) - (L_aug + H_aug)`.
pub fn compute_reward(rec: &RewardRecord) -> f64 {
    (rec.l_lpd + rec.h_lpd) - (rec.l_aug + rec.h_aug)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct LpdConfig {
    /// Surrogate training schedule; its seed also drives scene order and minibatches.
    pub train: TrainConfig,
    pub augment: AugmentSpec,
    pub agent: AgentConfig,
    pub space: ActionSpace,
    /// Always take this action and never update the agent.
    pub forced_action: Option<usize>,
    /// Also take a surrogate step on the jittered, undropped scan.
    pub sj_update: bool,
    /// Seeds jitter, exploration, drops and replay sampling.
    pub seed: u64,
}

impl LpdConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.augment.validate()?;
        self.agent.validate()?;
        self.space.validate()?;
        if let Some(a) = self.forced_action {
            self.space.decode(a)?;
        }
        Ok(())
    }
}

/// One line of the episode log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub scene_id: usize,
    pub action_id: usize,
    pub l_aug: f64,
    pub h_aug: f64,
    pub l_lpd: f64,
    pub h_lpd: f64,
    pub reward: f64,
    pub epsilon: f64,
}

impl EpisodeRow {
    pub fn record(&self) -> RewardRecord {
        RewardRecord {
            l_aug: self.l_aug,
            h_aug: self.h_aug,
            l_lpd: self.l_lpd,
            h_lpd: self.h_lpd,
        }
    }
}

pub const EPISODE_LOG_HEADER: &str = "scene_id,action_id,l_aug,h_aug,l_lpd,h_lpd,reward,epsilon";

/// Floats are written in shortest round-trip form so logged scalars reload bit-exact.
pub fn write_episode_log(rows: &[EpisodeRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{EPISODE_LOG_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:?},{:?},{:?},{:?},{:?},{:?}",
            r.scene_id, r.action_id, r.l_aug, r.h_aug, r.l_lpd, r.h_lpd, r.reward, r.epsilon
        )?;
    }
    Ok(())
}

pub fn read_episode_log(r: impl Read) -> Result<Vec<EpisodeRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != EPISODE_LOG_HEADER {
        return Err(Error::Config(format!("unexpected episode log header {header:?}")));
    }
    rdr.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub surrogate: SurrogateModel,
    pub agent: QAgent,
    pub log: Vec<EpisodeRow>,
    /// Mean surrogate training loss per epoch.
    pub epoch_losses: Vec<f64>,
}

struct Scored {
    feats: PointFeatures,
    loss: f64,
    entropy: f64,
    point_entropy: Vec<f64>,
}

/// Loss, mean entropy and per-point entropies of the model on a scan.
/// An empty scan scores zero on both.
fn score(model: &SurrogateModel, cloud: &PointCloud, labels: &LabelArray) -> Result<Scored> {
    let feats = model.featurize(cloud);
    score_features(model, feats, labels)
}

fn score_features(model: &SurrogateModel, feats: PointFeatures, labels: &LabelArray) -> Result<Scored> {
    if feats.is_empty() {
        return Ok(Scored {
            feats,
            loss: 0.0,
            entropy: 0.0,
            point_entropy: Vec::new(),
        });
    }
    let logits: Array2<f64> = logits_from_features(model, &feats);
    let loss = match softmax_cross_entropy(&logits, &labels.semantic, labels.ignore_label) {
        Ok((l, _)) => l,
        Err(Error::AllIgnored) => 0.0,
        Err(e) => return Err(e),
    };
    let point_entropy = point_entropies(&logits);
    let entropy = mean_entropy(&logits)?;
    Ok(Scored {
        feats,
        loss,
        entropy,
        point_entropy,
    })
}

/// Runs the joint surrogate + agent training loop over `cfg.train.epochs`
/// passes of `scenes`.
///
/// Per scene: (1) selective jitter; (2) loss `L_aug` and entropy `H_aug`;
/// (3) state; (4) ε-greedy drop action; (5) `L_lpd`, `H_lpd` on the dropped
/// scan; (6) reward, replay and an agent step; (7) a surrogate step on the
/// dropped scan.
pub fn run_training_pipeline(
    scenes: &[(PointCloud, LabelArray)],
    surrogate: SurrogateModel,
    mut agent: QAgent,
    cfg: &LpdConfig,
) -> Result<PipelineOutcome> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::EmptyInput("no training scenes"));
    }
    if agent.space != cfg.space {
        return Err(Error::InvalidSpec(
            "agent action space differs from pipeline config".into(),
        ));
    }
    for (cloud, labels) in scenes {
        labels.check_paired(cloud)?;
        labels.validate(surrogate.num_classes)?;
    }
    let n = scenes.len();
    let total_steps = cfg.train.epochs * n;
    let decay = cfg.agent.epsilon_decay_steps.unwrap_or(total_steps / 2);
    let mut trainer = Trainer::new(surrogate, &cfg.train);
    let mut log = Vec::with_capacity(total_steps);
    let mut epoch_losses = Vec::with_capacity(cfg.train.epochs);

    for epoch in 0..cfg.train.epochs {
        let mut losses = Vec::with_capacity(n);
        for (k, &s) in epoch_order(cfg.train.seed, epoch, n).iter().enumerate() {
            let step = (epoch * n + k) as u64;
            let (cloud, labels) = &scenes[s];

            let jittered = if cfg.augment.is_identity() {
                cloud.clone()
            } else {
                compose_sj(cloud, &cfg.augment.with_seed(derive_seed(cfg.seed, step, "sj")))
            };
            let pre = score(&trainer.model, &jittered, labels)?;
            let state = build_state(pre.loss, pre.entropy, &jittered, &pre.point_entropy, &cfg.space)?;

            agent.set_epsilon_for_step(step as usize, decay);
            let action = match cfg.forced_action {
                Some(a) => a,
                None => select_action(
                    &agent,
                    &state,
                    &mut rng_from_seed(derive_seed(cfg.seed, step, "explore")),
                )?,
            };
            let (dropped, dropped_labels) = apply_drop_action(
                &jittered,
                labels,
                action,
                &cfg.space,
                derive_seed(cfg.seed, step, "lpd-drop"),
            )?;
            let post = if action == cfg.space.noop() {
                score_features(&trainer.model, pre.feats.clone(), labels)?
            } else {
                score(&trainer.model, &dropped, &dropped_labels)?
            };

            let rec = RewardRecord {
                l_aug: pre.loss,
                h_aug: pre.entropy,
                l_lpd: post.loss,
                h_lpd: post.entropy,
            };
            let reward = compute_reward(&rec);
            if !reward.is_finite() {
                return Err(Error::NonFinite(format!("reward at step {step}")));
            }
            log.push(EpisodeRow {
                scene_id: s,
                action_id: action,
                l_aug: rec.l_aug,
                h_aug: rec.h_aug,
                l_lpd: rec.l_lpd,
                h_lpd: rec.h_lpd,
                reward,
                epsilon: agent.epsilon,
            });

            if cfg.forced_action.is_none() {
                let next_state = build_state(post.loss, post.entropy, &dropped, &post.point_entropy, &cfg.space)?;
                agent.observe(Transition {
                    state,
                    action,
                    reward,
                    next_state,
                    terminal: false,
                });
                let mut rng = rng_from_seed(derive_seed(cfg.seed, step, "replay"));
                let batch = agent.replay.sample(cfg.agent.batch_size, &mut rng);
                agent_train_step(&mut agent, &batch, cfg.agent.lr)?;
            }

            if cfg.sj_update {
                trainer.fit_scene(&pre.feats, labels, derive_seed(cfg.seed, step, "sj-update"))?;
            }
            if let Some(l) = trainer.fit_scene(
                &post.feats,
                &dropped_labels,
                minibatch_seed(cfg.train.seed, epoch, k, n),
            )? {
                losses.push(l);
            }
        }
        epoch_losses.push(if losses.is_empty() {
            0.0
        } else {
            losses.iter().sum::<f64>() / losses.len() as f64
        });
    }

    Ok(PipelineOutcome {
        surrogate: trainer.model,
        agent,
        log,
        epoch_losses,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    /// Arg-max of the agent's Q values.
    Greedy,
    /// Uniform over the full action space.
    Random,
}

/// Reward of one drop per scene under a frozen surrogate, with no jitter.
///
/// Drop seeds depend only on `seed` and the scene index, so two policies
/// evaluated with the same seed see identical randomness for equal actions.
pub fn evaluate_policy(
    surrogate: &SurrogateModel,
    agent: &QAgent,
    scenes: &[(PointCloud, LabelArray)],
    policy: Policy,
    seed: u64,
) -> Result<Vec<EpisodeRow>> {
    let space = &agent.space;
    let mut greedy = agent.clone();
    greedy.epsilon = 0.0;
    scenes
        .iter()
        .enumerate()
        .map(|(i, (cloud, labels))| {
            let pre = score(surrogate, cloud, labels)?;
            let action = match policy {
                Policy::Greedy => {
                    let state = build_state(pre.loss, pre.entropy, cloud, &pre.point_entropy, space)?;
                    select_action(&greedy, &state, &mut rng_from_seed(0))?
                }
                Policy::Random => {
                    rng_from_seed(derive_seed(seed, i as u64, "random-policy")).random_range(0..space.num_actions())
                }
            };
            let (dropped, dropped_labels) =
                apply_drop_action(cloud, labels, action, space, derive_seed(seed, i as u64, "eval-drop"))?;
            let post = score(surrogate, &dropped, &dropped_labels)?;
            let rec = RewardRecord {
                l_aug: pre.loss,
                h_aug: pre.entropy,
                l_lpd: post.loss,
                h_lpd: post.entropy,
            };
            Ok(EpisodeRow {
                scene_id: i,
                action_id: action,
                l_aug: rec.l_aug,
                h_aug: rec.h_aug,
                l_lpd: rec.l_lpd,
                h_lpd: rec.h_lpd,
                reward: compute_reward(&rec),
                epsilon: 0.0,
            })
        })
        .collect()
}
