use super::{ActionSpace, LpdState};
use crate::error::{Error, Result};
use crate::nn::DenseNet;
use crate::rng::{derive_seed, SeededRng};
use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub gamma: f64,
    /// Target network is synced every this many training steps.
    pub target_sync: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Steps over which ε decays linearly; defaults to half the run.
    pub epsilon_decay_steps: Option<usize>,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            replay_capacity: 10_000,
            batch_size: 32,
            lr: 1e-3,
            clip_norm: 100.0,
            gamma: 0.0,
            target_sync: 200,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: None,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if self.replay_capacity == 0 || self.batch_size == 0 || self.target_sync == 0 {
            return Err(Error::InvalidSpec(
                "replay capacity, batch size and sync period must be > 0".into(),
            ));
        }
        if !(self.lr > 0.0 && self.clip_norm > 0.0) {
            return Err(Error::InvalidSpec("agent lr and clip_norm must be > 0".into()));
        }
        if !(unit(self.gamma) && unit(self.epsilon_start) && unit(self.epsilon_end)) {
            return Err(Error::InvalidSpec("gamma and epsilon must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: LpdState,
    pub action: usize,
    pub reward: f64,
    pub next_state: LpdState,
    pub terminal: bool,
}

/// Fixed-capacity FIFO; a full buffer evicts its oldest entry.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            items: VecDeque::with_capacity(capacity.min(4096)),
            capacity,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Uniform sample with replacement.
    pub fn sample(&self, n: usize, rng: &mut SeededRng) -> Vec<Transition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|_| self.items[rng.random_range(0..self.items.len())].clone())
            .collect()
    }
}

/// Metadata stored next to an agent checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMeta {
    pub space: ActionSpace,
    pub config: AgentConfig,
    pub steps: usize,
    pub epsilon: f64,
}

#[derive(Debug, Clone)]
pub struct QAgent {
    pub online: DenseNet,
    pub target: DenseNet,
    pub replay: ReplayBuffer,
    pub epsilon: f64,
    pub config: AgentConfig,
    pub space: ActionSpace,
    steps: usize,
}

impl QAgent {
    pub fn new(space: ActionSpace, config: AgentConfig) -> Result<Self> {
        space.validate()?;
        config.validate()?;
        let mut sizes = vec![space.state_width()];
        sizes.extend(&config.hidden);
        sizes.push(space.num_actions());
        let online = DenseNet::new(&sizes, derive_seed(config.seed, 0, "q-init"))?;
        Ok(Self {
            target: online.clone(),
            online,
            replay: ReplayBuffer::new(config.replay_capacity),
            epsilon: config.epsilon_start,
            steps: 0,
            config,
            space,
        })
    }

    pub fn from_parts(online: DenseNet, meta: AgentMeta) -> Result<Self> {
        if online.input_width() != meta.space.state_width() || online.output_width() != meta.space.num_actions() {
            return Err(Error::Checkpoint(
                "agent network does not match its action space".into(),
            ));
        }
        Ok(Self {
            target: online.clone(),
            online,
            replay: ReplayBuffer::new(meta.config.replay_capacity),
            epsilon: meta.epsilon,
            steps: meta.steps,
            config: meta.config,
            space: meta.space,
        })
    }

    pub fn meta(&self) -> AgentMeta {
        AgentMeta {
            space: self.space.clone(),
            config: self.config.clone(),
            steps: self.steps,
            epsilon: self.epsilon,
        }
    }

    /// Number of completed training steps.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn q_values(&self, state: &LpdState) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, state.len()), state.as_slice()).map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.online.forward(x)?.row(0).to_vec())
    }

    /// Linear ε schedule from `epsilon_start` to `epsilon_end` over `decay_steps`.
    pub fn set_epsilon_for_step(&mut self, step: usize, decay_steps: usize) {
        let (a, b) = (self.config.epsilon_start, self.config.epsilon_end);
        self.epsilon = if decay_steps == 0 || step >= decay_steps {
            b
        } else {
            a + (b - a) * step as f64 / decay_steps as f64
        };
    }

    pub fn observe(&mut self, t: Transition) {
        self.replay.push(t);
    }
}

/// Index of the largest value; ties go to the lowest index.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &q) in v.iter().enumerate() {
        if q > v[best] {
            best = i;
        }
    }
    best
}

/// ε-greedy: uniform random action with probability ε, otherwise the
/// greedy action of the online network.
pub fn select_action(agent: &QAgent, state: &LpdState, rng: &mut SeededRng) -> Result<usize> {
    if agent.epsilon > 0.0 && rng.random::<f64>() < agent.epsilon {
        return Ok(rng.random_range(0..agent.space.num_actions()));
    }
    Ok(argmax(&agent.q_values(state)?))
}

fn stack(states: impl Iterator<Item = Vec<f64>>, rows: usize, width: usize) -> Result<Array2<f64>> {
    let flat: Vec<f64> = states.flatten().collect();
    Array2::from_shape_vec((rows, width), flat).map_err(|e| Error::Shape(e.to_string()))
}

/// Bootstrapped targets `y = r + γ max_a' Q_target(s', a')` (`y = r` for
/// terminal transitions or γ = 0), the loss `½·mean (Q(s, a) - y)²` and its
/// gradient w.r.t. the online network's outputs, non-zero only at taken actions.
pub fn q_targets_and_output_grad(
    agent: &QAgent,
    batch: &[Transition],
    online_q: &Array2<f64>,
) -> Result<(Vec<f64>, f64, Array2<f64>)> {
    let b = batch.len();
    let width = agent.space.state_width();
    let next_q = if agent.config.gamma > 0.0 {
        Some(
            agent
                .target
                .forward(stack(batch.iter().map(|t| t.next_state.0.clone()), b, width)?.view())?,
        )
    } else {
        None
    };
    let mut targets = Vec::with_capacity(b);
    for (i, t) in batch.iter().enumerate() {
        let y = match &next_q {
            Some(q) if !t.terminal => {
                t.reward + agent.config.gamma * q.row(i).fold(f64::NEG_INFINITY, |a, &v| a.max(v))
            }
            _ => t.reward,
        };
        if !y.is_finite() {
            return Err(Error::NonFinite(format!("Q target for transition {i}")));
        }
        targets.push(y);
    }
    let mut grad = Array2::zeros(online_q.raw_dim());
    let mut loss = 0.0;
    for (i, t) in batch.iter().enumerate() {
        let diff = online_q[[i, t.action]] - targets[i];
        loss += 0.5 * diff * diff;
        grad[[i, t.action]] = diff / b as f64;
    }
    Ok((targets, loss / b as f64, grad))
}

/// One clipped SGD step on the batch's TD loss; syncs the target network
/// every `target_sync` steps. Returns the loss before the update.
pub fn agent_train_step(agent: &mut QAgent, batch: &[Transition], lr: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty transition batch"));
    }
    let width = agent.space.state_width();
    if let Some(t) = batch
        .iter()
        .find(|t| t.state.len() != width || t.action >= agent.space.num_actions())
    {
        return Err(Error::Shape(format!(
            "transition with state width {} / action {} does not fit the agent",
            t.state.len(),
            t.action
        )));
    }
    let x = stack(batch.iter().map(|t| t.state.0.clone()), batch.len(), width)?;
    let trace = agent.online.forward_trace(x.view())?;
    let (_, loss, grad) = q_targets_and_output_grad(agent, batch, trace.output())?;
    let grads = agent.online.backward(&trace, grad);
    agent.online.clip_and_step(&grads, lr, agent.config.clip_norm)?;
    agent.steps += 1;
    if agent.steps.is_multiple_of(agent.config.target_sync) {
        agent.target.copy_params_from(&agent.online)?;
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn small_space() -> ActionSpace {
        ActionSpace {
            depth_bounds: vec![0.0, 10.0],
            sectors: 2,
            ratios: vec![0.5, 0.9],
        }
    }

    fn agent(cfg: AgentConfig) -> QAgent {
        QAgent::new(small_space(), cfg).unwrap()
    }

    fn state(v: f64) -> LpdState {
        LpdState(vec![v; small_space().state_width()])
    }

    fn transition(action: usize, reward: f64) -> Transition {
        Transition {
            state: state(0.5),
            action,
            reward,
            next_state: state(0.1),
            terminal: false,
        }
    }

    #[test]
    fn epsilon_one_is_uniform() {
        let a = agent(AgentConfig {
            epsilon_start: 1.0,
            ..AgentConfig::default()
        });
        let k = a.space.num_actions();
        let draws = 10_000;
        let mut counts = vec![0usize; k];
        let mut rng = rng_from_seed(3);
        for _ in 0..draws {
            counts[select_action(&a, &state(0.2), &mut rng).unwrap()] += 1;
        }
        let p = 1.0 / k as f64;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * p).abs() <= 3.0 * sd, "{c}");
        }
    }

    #[test]
    fn greedy_argmax_and_ties() {
        let mut a = agent(AgentConfig::default());
        a.epsilon = 0.0;
        let last = a.online.layers().len() - 1;
        let out = &mut a.online.layers_mut()[last];
        out.weights.fill(0.0);
        out.bias.fill(0.0);
        out.bias[7] = 1.0;
        let mut rng = rng_from_seed(0);
        for _ in 0..20 {
            assert_eq!(select_action(&a, &state(0.3), &mut rng).unwrap(), 7);
        }
        let out = &mut a.online.layers_mut()[last];
        out.bias.fill(0.0);
        out.bias[3] = 2.0;
        out.bias[8] = 2.0;
        assert_eq!(select_action(&a, &state(0.3), &mut rng).unwrap(), 3);
    }

    #[test]
    fn gamma_zero_targets_are_rewards() {
        let a = agent(AgentConfig::default());
        let batch = vec![transition(1, 0.7), transition(4, -0.2)];
        let q = Array2::zeros((2, a.space.num_actions()));
        let (targets, _, grad) = q_targets_and_output_grad(&a, &batch, &q).unwrap();
        assert_eq!(targets, vec![0.7, -0.2]);
        for (i, t) in batch.iter().enumerate() {
            for k in 0..a.space.num_actions() {
                if k != t.action {
                    assert_eq!(grad[[i, k]], 0.0);
                }
            }
        }
        assert_eq!(grad[[0, 1]], -0.35);
    }

    #[test]
    fn gamma_bootstraps_from_target_net() {
        let mut a = agent(AgentConfig {
            gamma: 0.5,
            ..AgentConfig::default()
        });
        let last = a.target.layers().len() - 1;
        let out = &mut a.target.layers_mut()[last];
        out.weights.fill(0.0);
        out.bias.fill(0.0);
        out.bias[2] = 4.0;
        let mut term = transition(0, 1.0);
        term.terminal = true;
        let batch = vec![transition(0, 1.0), term];
        let q = Array2::zeros((2, a.space.num_actions()));
        let (targets, _, _) = q_targets_and_output_grad(&a, &batch, &q).unwrap();
        assert_eq!(targets, vec![3.0, 1.0]);
    }

    #[test]
    fn non_finite_target_rejected() {
        let mut a = agent(AgentConfig::default());
        let before = a.online.clone();
        let batch = vec![transition(0, f64::INFINITY)];
        assert!(matches!(
            agent_train_step(&mut a, &batch, 0.01),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(a.online, before);
    }

    #[test]
    fn bandit_converges_monotonically() {
        let mut a = agent(AgentConfig::default());
        let t = transition(2, 0.8);
        let batch = vec![t.clone(); 8];
        let mut prev = f64::INFINITY;
        for _ in 0..300 {
            let q = a.q_values(&t.state).unwrap()[2];
            let err = (q - 0.8).abs();
            assert!(err <= prev + 1e-15, "{err} > {prev}");
            prev = err;
            agent_train_step(&mut a, &batch, 0.01).unwrap();
        }
        assert!(prev < 0.05, "{prev}");
    }

    #[test]
    fn target_sync_period() {
        let mut a = agent(AgentConfig {
            target_sync: 3,
            ..AgentConfig::default()
        });
        let batch = vec![transition(1, 1.0)];
        let init = a.target.clone();
        agent_train_step(&mut a, &batch, 0.05).unwrap();
        agent_train_step(&mut a, &batch, 0.05).unwrap();
        assert_eq!(a.target, init);
        agent_train_step(&mut a, &batch, 0.05).unwrap();
        assert_eq!(a.target, a.online);
    }

    #[test]
    fn replay_evicts_oldest_first() {
        let mut r = ReplayBuffer::new(3);
        for i in 0..5 {
            r.push(transition(i, i as f64));
        }
        let rewards: Vec<f64> = r.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
        let sample = r.sample(10, &mut rng_from_seed(1));
        assert_eq!(sample.len(), 10);
        assert!(sample.iter().all(|t| t.reward >= 2.0));
    }

    #[test]
    fn epsilon_schedule() {
        let mut a = agent(AgentConfig::default());
        a.set_epsilon_for_step(0, 100);
        assert_eq!(a.epsilon, 1.0);
        a.set_epsilon_for_step(50, 100);
        assert!((a.epsilon - 0.525).abs() < 1e-12);
        a.set_epsilon_for_step(100, 100);
        assert_eq!(a.epsilon, 0.05);
        a.set_epsilon_for_step(400, 100);
        assert_eq!(a.epsilon, 0.05);
    }
}
