//! Learning loop: DP-seeded replay, Boltzmann exploration over critics,
//! Gaussian actor noise, TD critic updates and positive-TD actor updates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::f64::consts::FRAC_PI_2;

use crate::dp::ExperienceTuple;
use crate::error::{Error, Result};
use crate::model::{transition, ModelParams, PendulumState};
use crate::net::{MaceParameters, NetworkTopology, NormalizationSpec, ACTION_DIM};
use crate::policy::{decode_action, masked_argmax, PolicyRuntime};

/// Diagonal Gaussian over (r1, theta1, r1dot, theta1dot) at a fixed contact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialStateDistribution {
    pub contact: usize,
    pub mean: [f64; 4],
    pub std: [f64; 4],
}

impl Default for InitialStateDistribution {
    fn default() -> Self {
        InitialStateDistribution {
            contact: 0,
            mean: [0.27, 0.15, 0.0, 1.5],
            std: [0.02, 0.05, 0.0, 0.4],
        }
    }
}

const MAX_REJECTIONS: usize = 10_000;

impl InitialStateDistribution {
    pub fn validate(&self, model: &ModelParams) -> Result<()> {
        if self.contact >= model.n_contacts {
            return Err(Error::ConfigInvalid(format!(
                "initial contact {} out of range",
                self.contact
            )));
        }
        if self.std.iter().any(|s| !(*s >= 0.0 && s.is_finite()))
            || self.mean.iter().any(|m| !m.is_finite())
        {
            return Err(Error::ConfigInvalid(
                "initial-state mean/std must be finite, std >= 0".into(),
            ));
        }
        Ok(())
    }

    fn in_bounds(model: &ModelParams, v: &[f64; 4]) -> bool {
        v[0] >= model.r_bounds[0]
            && v[0] <= model.r_bounds[1]
            && v[1].abs() < FRAC_PI_2
            && v[2] >= model.rdot_bounds[0]
            && v[2] <= model.rdot_bounds[1]
            && v[3].abs() <= model.theta1dot_scale
    }

    /// Rejection-samples a state inside the model's bounds. After too many
    /// rejections the mean, clamped into bounds, is returned.
    pub fn sample<R: Rng + ?Sized>(&self, model: &ModelParams, rng: &mut R) -> PendulumState {
        let normals: Vec<Normal<f64>> = (0..4)
            .map(|k| Normal::new(self.mean[k], self.std[k]).expect("validated std"))
            .collect();
        for _ in 0..MAX_REJECTIONS {
            let v: [f64; 4] = std::array::from_fn(|k| normals[k].sample(rng));
            if Self::in_bounds(model, &v) {
                return PendulumState::new(self.contact, v[0], v[1], v[2], v[3]);
            }
        }
        let m = self.mean;
        PendulumState::new(
            self.contact,
            m[0].clamp(model.r_bounds[0], model.r_bounds[1]),
            m[1].clamp(-1.5, 1.5),
            m[2].clamp(model.rdot_bounds[0], model.rdot_bounds[1]),
            m[3].clamp(-model.theta1dot_scale, model.theta1dot_scale),
        )
    }

    pub fn sample_many(
        &self,
        model: &ModelParams,
        n: usize,
        seed: u64,
        stream: u64,
    ) -> Vec<PendulumState> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        (0..n).map(|_| self.sample(model, &mut rng)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub rollouts_per_iteration: usize,
    pub minibatch: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub t0: f64,
    /// Iterations over which the temperature falls linearly from `t0` to 0.
    pub anneal_iterations: usize,
    /// Per-dimension exploration noise std in encoded [-1, 1] units.
    pub action_noise_std: [f64; ACTION_DIM],
    pub buffer_capacity: usize,
    pub dp_seed_tuples: usize,
    pub target_sync_every: usize,
    pub max_depth: usize,
    pub heldout_cases: usize,
    pub init_state: InitialStateDistribution,
    pub network: NetworkTopology,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 1000,
            rollouts_per_iteration: 10,
            minibatch: 32,
            alpha: 1e-4,
            gamma: 0.9,
            t0: 5.0,
            anneal_iterations: 250,
            action_noise_std: [0.1; ACTION_DIM],
            buffer_capacity: 50_000,
            dp_seed_tuples: 5000,
            target_sync_every: 10,
            max_depth: 10,
            heldout_cases: 10,
            init_state: InitialStateDistribution::default(),
            network: NetworkTopology::default(),
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &ModelParams) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.into()));
        if self.rollouts_per_iteration == 0
            || self.minibatch == 0
            || self.buffer_capacity == 0
            || self.target_sync_every == 0
            || self.max_depth == 0
        {
            return bad("training counts must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.t0 > 0.0) {
            return bad("t0 must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if self.minibatch > self.buffer_capacity {
            return bad("minibatch must not exceed buffer_capacity");
        }
        if self
            .action_noise_std
            .iter()
            .any(|s| !(*s >= 0.0 && s.is_finite()))
        {
            return bad("action_noise_std must be finite and >= 0");
        }
        self.network.validate()?;
        if self.network.n_pairs != model.n_contacts {
            return Err(Error::ConfigInvalid(format!(
                "network has {} pairs but the model has {} contacts",
                self.network.n_pairs, model.n_contacts
            )));
        }
        self.init_state.validate(model)
    }

    pub fn temperature(&self, iteration: usize) -> f64 {
        if iteration >= self.anneal_iterations {
            return 0.0;
        }
        self.t0 * (1.0 - iteration as f64 / self.anneal_iterations as f64)
    }
}

/// Below this temperature selection is greedy.
pub const GREEDY_TEMPERATURE: f64 = 1e-8;

/// Selection probabilities `exp(v_i / T) / sum_j exp(v_j / T)`.
pub fn boltzmann_probabilities(values: &[f64], temperature: f64) -> Vec<f64> {
    if temperature <= GREEDY_TEMPERATURE {
        let all: Vec<usize> = (0..values.len()).collect();
        let best = masked_argmax(values, &all);
        return (0..values.len())
            .map(|i| if Some(i) == best { 1.0 } else { 0.0 })
            .collect();
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = values
        .iter()
        .map(|v| ((v - max) / temperature).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

pub fn boltzmann_select<R: Rng + ?Sized>(values: &[f64], temperature: f64, rng: &mut R) -> usize {
    assert!(
        !values.is_empty(),
        "boltzmann_select needs at least one value"
    );
    let probs = boltzmann_probabilities(values, temperature);
    if temperature <= GREEDY_TEMPERATURE {
        return probs.iter().position(|&p| p == 1.0).unwrap_or(0);
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left `acc` a hair below 1: fall back to the last positive entry.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Fixed-capacity FIFO of experience tuples.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    items: VecDeque<ExperienceTuple>,
    capacity: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
            inserted: 0,
        }
    }

    pub fn push(&mut self, t: ExperienceTuple) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        self.inserted += 1;
    }

    pub fn extend<I: IntoIterator<Item = ExperienceTuple>>(&mut self, it: I) {
        for t in it {
            self.push(t);
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total number of tuples ever inserted.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn get(&self, i: usize) -> Option<&ExperienceTuple> {
        self.items.get(i)
    }

    /// `m` tuples drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Vec<ExperienceTuple> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..m)
            .map(|_| self.items[rng.random_range(0..self.items.len())])
            .collect()
    }
}

/// Learner state shared by exploration and updates.
pub struct Learner<'a> {
    pub model: &'a ModelParams,
    pub config: &'a TrainConfig,
    pub norm: NormalizationSpec,
}

impl<'a> Learner<'a> {
    pub fn new(model: &'a ModelParams, config: &'a TrainConfig) -> Self {
        Learner {
            model,
            config,
            norm: NormalizationSpec::from_model(model),
        }
    }

    fn allowed(&self, from: usize) -> Vec<usize> {
        self.model.allowed_successors(from).collect()
    }

    /// Best critic value over the contacts reachable from `s`.
    fn max_allowed_value(&self, params: &MaceParameters, s: &PendulumState) -> f64 {
        let values = params.forward_critics(&self.norm.encode_state(s));
        self.allowed(s.contact)
            .iter()
            .map(|&c| values[c])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `r` for terminal or failed transitions, else `min(r, gamma * max_j Vhat_j(s'))`.
    pub fn td_target(&self, target: &MaceParameters, t: &ExperienceTuple) -> f64 {
        match t.next_state {
            Some(next) if !t.terminal => critic_target(
                t.reward,
                self.config.gamma,
                self.max_allowed_value(target, &next),
            ),
            _ => t.reward,
        }
    }

    /// One exploratory fall from an initial state drawn from N0.
    pub fn explore_rollout<R: Rng + ?Sized>(
        &self,
        params: &MaceParameters,
        temperature: f64,
        rng: &mut R,
    ) -> Vec<ExperienceTuple> {
        let s0 = self.config.init_state.sample(self.model, rng);
        self.explore_from(params, &s0, temperature, rng)
    }

    pub fn explore_from<R: Rng + ?Sized>(
        &self,
        params: &MaceParameters,
        s0: &PendulumState,
        temperature: f64,
        rng: &mut R,
    ) -> Vec<ExperienceTuple> {
        let noise: Vec<Normal<f64>> = self
            .config
            .action_noise_std
            .iter()
            .map(|&sd| Normal::new(0.0, sd).expect("validated std"))
            .collect();
        let mut tuples = Vec::new();
        let mut s = *s0;
        for _ in 0..self.config.max_depth {
            if s.is_terminal() {
                break;
            }
            let x = self.norm.encode_state(&s);
            let values = params.forward_critics(&x);
            let allowed = self.allowed(s.contact);
            if allowed.is_empty() {
                break;
            }
            let masked: Vec<f64> = allowed.iter().map(|&c| values[c]).collect();
            let c2 = allowed[boltzmann_select(&masked, temperature, rng)];
            let mut enc = params.forward_actor(c2, &x);
            for (e, n) in enc.iter_mut().zip(&noise) {
                *e = (*e + n.sample(rng)).clamp(-1.0, 1.0);
            }
            let a = decode_action(self.model, &self.norm, &enc, c2);
            let Ok(out) = transition(self.model, &s, &a) else {
                break;
            };
            tuples.push(ExperienceTuple::from_outcome(&s, &a, &out));
            if out.is_failure() || out.terminal {
                break;
            }
            s = out
                .next_state
                .expect("successful transition has a successor");
        }
        tuples
    }

    /// One descent step on the summed TD losses; returns the mean squared TD error before the step.
    pub fn critic_update(
        &self,
        params: &mut MaceParameters,
        target: &MaceParameters,
        batch: &[ExperienceTuple],
    ) -> f64 {
        if batch.is_empty() {
            return 0.0;
        }
        let mut grad = vec![0.0; params.len()];
        let mut loss = 0.0;
        for t in batch {
            let y = self.td_target(target, t);
            let x = self.norm.encode_state(&t.state);
            let v = params.accumulate_critic_gradient(t.contact, &x, y, 1.0, &mut grad);
            loss += (y - v) * (y - v);
        }
        params.sgd_step(&grad, self.config.alpha);
        loss / batch.len() as f64
    }

    /// Moves actors toward tuples whose TD target beats the current value.
    /// Returns how many tuples passed the gate; no step is taken when none did.
    pub fn actor_update(
        &self,
        params: &mut MaceParameters,
        target: &MaceParameters,
        batch: &[ExperienceTuple],
    ) -> usize {
        let mut grad = vec![0.0; params.len()];
        let mut applied = 0;
        for t in batch {
            let y = self.max_allowed_value(params, &t.state);
            let y_next = self.td_target(target, t);
            if y_next > y {
                let x = self.norm.encode_state(&t.state);
                let a = self.norm.encode_action(&t.action);
                params.accumulate_actor_gradient(t.contact, &x, &a, 1.0, &mut grad);
                applied += 1;
            }
        }
        if applied > 0 {
            params.sgd_step(&grad, self.config.alpha);
        }
        applied
    }

    pub fn heldout_reward(&self, params: &MaceParameters, states: &[PendulumState]) -> Result<f64> {
        if states.is_empty() {
            return Ok(0.0);
        }
        let rt = PolicyRuntime::new(params, self.model, self.config.max_depth)?;
        let total: f64 = states
            .iter()
            .map(|s| rt.run_episode(s).episode_reward)
            .sum();
        Ok(total / states.len() as f64)
    }
}

pub fn critic_target(reward: f64, gamma: f64, max_next_value: f64) -> f64 {
    reward.min(gamma * max_next_value)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub temperature: f64,
    pub buffer_size: usize,
    pub mean_heldout_reward: f64,
    pub critic_loss: f64,
    pub actor_updates_applied: usize,
}

impl LogRow {
    pub const HEADER: &'static str =
        "iteration,temperature,buffer_size,mean_heldout_reward,critic_loss,actor_updates_applied";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{:.16e},{},{:.16e},{:.16e},{}",
            self.iteration,
            self.temperature,
            self.buffer_size,
            self.mean_heldout_reward,
            self.critic_loss,
            self.actor_updates_applied
        )
    }
}

pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut out = String::from(LogRow::HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

pub struct TrainOutcome {
    pub params: MaceParameters,
    pub log: Vec<LogRow>,
    pub heldout_states: Vec<PendulumState>,
    /// Held-out mean reward of the freshly initialized network.
    pub initial_heldout_reward: f64,
}

/// Stream reserved for the held-out initial states.
pub const HELDOUT_STREAM: u64 = u64::MAX;

fn rollout_rng(seed: u64, iteration: usize, k: usize, per_iter: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + (iteration * per_iter + k) as u64);
    rng
}

/// Runs the full learning loop. Rollouts inside an iteration run on up to
/// `threads` workers; results are identical for any thread count.
pub fn train(
    config: &TrainConfig,
    model: &ModelParams,
    dp_tuples: &[ExperienceTuple],
    threads: usize,
) -> Result<TrainOutcome> {
    model.validate()?;
    config.validate(model)?;
    let learner = Learner::new(model, config);
    let mut params = MaceParameters::init(&config.network, config.rng_seed);
    let heldout_states =
        config
            .init_state
            .sample_many(model, config.heldout_cases, config.rng_seed, HELDOUT_STREAM);
    let initial_heldout_reward = learner.heldout_reward(&params, &heldout_states)?;
    if config.iterations == 0 {
        return Ok(TrainOutcome {
            params,
            log: Vec::new(),
            heldout_states,
            initial_heldout_reward,
        });
    }
    if dp_tuples.is_empty() {
        return Err(Error::ConfigInvalid(
            "training needs a nonempty DP tuple set".into(),
        ));
    }

    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    buffer.extend(dp_tuples.iter().take(config.dp_seed_tuples.max(1)).copied());
    let mut target = params.copy_to_target();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let pool = if threads > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .ok()
    } else {
        None
    };
    let k_roll = config.rollouts_per_iteration;
    let mut log = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        let temperature = config.temperature(it);
        let snapshot = &params;
        let run = |k: usize| {
            let mut r = rollout_rng(config.rng_seed, it, k, k_roll);
            learner.explore_rollout(snapshot, temperature, &mut r)
        };
        let rollouts: Vec<Vec<ExperienceTuple>> = match &pool {
            Some(pool) => pool.install(|| (0..k_roll).into_par_iter().map(run).collect()),
            None => (0..k_roll).map(run).collect(),
        };
        for r in rollouts {
            buffer.extend(r);
        }

        let critic_batch = buffer.sample(config.minibatch, &mut rng);
        let actor_batch = buffer.sample(config.minibatch, &mut rng);
        let critic_loss = learner.critic_update(&mut params, &target, &critic_batch);
        let actor_updates_applied = learner.actor_update(&mut params, &target, &actor_batch);
        if (it + 1) % config.target_sync_every == 0 {
            target = params.copy_to_target();
        }

        log.push(LogRow {
            iteration: it,
            temperature,
            buffer_size: buffer.len(),
            mean_heldout_reward: learner.heldout_reward(&params, &heldout_states)?,
            critic_loss,
            actor_updates_applied,
        });
    }
    Ok(TrainOutcome {
        params,
        log,
        heldout_states,
        initial_heldout_reward,
    })
}
