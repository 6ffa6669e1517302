//! Mixture of actor-critic network.
//!
//! `n` critic heads share one hidden layer on top of the input encoding; `n`
//! actors are independent MLPs over the same input. Every weight and bias
//! lives in one flat vector, addressed through a layout table.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelParams, PendulumState};

pub const WEIGHTS_VERSION: u32 = 1;
pub const ACTION_DIM: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkTopology {
    pub n_pairs: usize,
    /// Width of the shared critic layer and of each critic head's hidden layer.
    pub critic_hidden: usize,
    pub actor_hidden: usize,
    pub actor_layers: usize,
}

impl Default for NetworkTopology {
    fn default() -> Self {
        NetworkTopology {
            n_pairs: 8,
            critic_hidden: 32,
            actor_hidden: 128,
            actor_layers: 3,
        }
    }
}

impl NetworkTopology {
    pub fn with_pairs(n_pairs: usize) -> Self {
        NetworkTopology {
            n_pairs,
            ..Default::default()
        }
    }

    /// One-hot contact label followed by four normalized continuous entries.
    pub fn input_dim(&self) -> usize {
        self.n_pairs + 4
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pairs < 2 {
            return Err(Error::ConfigInvalid(
                "network needs at least 2 actor-critic pairs".into(),
            ));
        }
        if self.critic_hidden == 0 || self.actor_hidden == 0 || self.actor_layers == 0 {
            return Err(Error::ConfigInvalid("layer sizes must be positive".into()));
        }
        Ok(())
    }

    fn describe(&self) -> String {
        format!(
            "pairs={} critic_hidden={} actor_hidden={} actor_layers={}",
            self.n_pairs, self.critic_hidden, self.actor_hidden, self.actor_layers
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subnet {
    CriticShared,
    CriticHead(usize),
    Actor(usize),
}

/// A dense layer: `rows x cols` row-major weights at `offset`, then `rows` biases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSlot {
    pub subnet: Subnet,
    pub layer: usize,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl LayerSlot {
    pub fn len(&self) -> usize {
        self.rows * self.cols + self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn weights(&self) -> Range<usize> {
        self.offset..self.offset + self.rows * self.cols
    }

    fn bias(&self) -> Range<usize> {
        let start = self.offset + self.rows * self.cols;
        start..start + self.rows
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub slots: Vec<LayerSlot>,
    pub total: usize,
    critic_paths: Vec<Vec<usize>>,
    actor_paths: Vec<Vec<usize>>,
}

impl Layout {
    pub fn new(t: &NetworkTopology) -> Self {
        let mut slots = Vec::new();
        let mut offset = 0;
        let mut push = |subnet, layer, rows, cols| {
            let slot = LayerSlot {
                subnet,
                layer,
                offset,
                rows,
                cols,
            };
            offset += slot.len();
            slots.push(slot);
            slots.len() - 1
        };
        let input = t.input_dim();
        let shared = push(Subnet::CriticShared, 0, t.critic_hidden, input);
        let mut critic_paths = Vec::new();
        for i in 0..t.n_pairs {
            let h = push(Subnet::CriticHead(i), 0, t.critic_hidden, t.critic_hidden);
            let out = push(Subnet::CriticHead(i), 1, 1, t.critic_hidden);
            critic_paths.push(vec![shared, h, out]);
        }
        let mut actor_paths = Vec::new();
        for i in 0..t.n_pairs {
            let mut path = Vec::new();
            let mut cols = input;
            for layer in 0..t.actor_layers {
                path.push(push(Subnet::Actor(i), layer, t.actor_hidden, cols));
                cols = t.actor_hidden;
            }
            path.push(push(Subnet::Actor(i), t.actor_layers, ACTION_DIM, cols));
            actor_paths.push(path);
        }
        Layout {
            slots,
            total: offset,
            critic_paths,
            actor_paths,
        }
    }

    /// Parameter range owned by a subnet. Each subnet is laid out contiguously.
    pub fn subnet_range(&self, subnet: Subnet) -> Range<usize> {
        let mut owned = self.slots.iter().filter(|s| s.subnet == subnet);
        let Some(first) = owned.next() else {
            return 0..0;
        };
        let end = owned.next_back().unwrap_or(first);
        first.offset..end.offset + end.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output.
    fn slope(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

const CRITIC_ACTS: [Activation; 3] = [Activation::Tanh, Activation::Tanh, Activation::Identity];

/// Network weights and biases with their topology.
#[derive(Clone, Debug, PartialEq)]
pub struct MaceParameters {
    topology: NetworkTopology,
    layout: Layout,
    values: Vec<f64>,
}

impl MaceParameters {
    pub fn zeros(topology: &NetworkTopology) -> Self {
        let layout = Layout::new(topology);
        let values = vec![0.0; layout.total];
        MaceParameters {
            topology: topology.clone(),
            layout,
            values,
        }
    }

    /// Weights uniform in `+/- 1/sqrt(fan_in)`, biases zero.
    pub fn init(topology: &NetworkTopology, seed: u64) -> Self {
        let mut p = Self::zeros(topology);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for slot in p.layout.slots.clone() {
            let bound = 1.0 / (slot.cols as f64).sqrt();
            for w in &mut p.values[slot.weights()] {
                *w = rng.random_range(-bound..bound);
            }
        }
        p
    }

    pub fn from_values(topology: &NetworkTopology, values: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(topology);
        if values.len() != p.values.len() {
            return Err(Error::MalformedFile(format!(
                "expected {} parameters, found {}",
                p.values.len(),
                values.len()
            )));
        }
        p.values = values;
        Ok(p)
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_pairs(&self) -> usize {
        self.topology.n_pairs
    }

    fn dense(&self, slot: &LayerSlot, x: &[f64], act: Activation) -> Vec<f64> {
        let w = &self.values[slot.weights()];
        let b = &self.values[slot.bias()];
        (0..slot.rows)
            .map(|o| {
                let row = &w[o * slot.cols..(o + 1) * slot.cols];
                let z = row.iter().zip(x).fold(b[o], |acc, (wi, xi)| acc + wi * xi);
                act.apply(z)
            })
            .collect()
    }

    /// Activations of every layer along `path`, input first.
    fn forward_path(&self, path: &[usize], acts: &[Activation], x: &[f64]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(path.len() + 1);
        out.push(x.to_vec());
        for (&slot, &act) in path.iter().zip(acts) {
            let next = self.dense(&self.layout.slots[slot], out.last().unwrap(), act);
            out.push(next);
        }
        out
    }

    /// Accumulates `scale * dL/dtheta` into `grad`, given `dL/d(output)`.
    fn backward_path(
        &self,
        path: &[usize],
        acts: &[Activation],
        activations: &[Vec<f64>],
        d_out: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) {
        let last = path.len() - 1;
        let mut delta: Vec<f64> = d_out
            .iter()
            .zip(&activations[last + 1])
            .map(|(d, a)| d * acts[last].slope(*a))
            .collect();
        for l in (0..path.len()).rev() {
            let slot = &self.layout.slots[path[l]];
            let input = &activations[l];
            let w = &self.values[slot.weights()];
            {
                let gw = &mut grad[slot.weights()];
                for o in 0..slot.rows {
                    let d = scale * delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (g, xi) in gw[o * slot.cols..(o + 1) * slot.cols].iter_mut().zip(input) {
                        *g += d * xi;
                    }
                }
            }
            for (g, d) in grad[slot.bias()].iter_mut().zip(&delta) {
                *g += scale * d;
            }
            if l > 0 {
                let mut prev = vec![0.0; slot.cols];
                for o in 0..slot.rows {
                    let d = delta[o];
                    for (p, wi) in prev.iter_mut().zip(&w[o * slot.cols..(o + 1) * slot.cols]) {
                        *p += wi * d;
                    }
                }
                delta = prev
                    .iter()
                    .zip(input)
                    .map(|(p, a)| p * acts[l - 1].slope(*a))
                    .collect();
            }
        }
    }

    fn actor_acts(&self) -> Vec<Activation> {
        vec![Activation::Tanh; self.topology.actor_layers + 1]
    }

    /// All critic values; the shared layer is evaluated once.
    pub fn forward_critics(&self, x: &[f64]) -> Vec<f64> {
        let shared_slot = &self.layout.slots[self.layout.critic_paths[0][0]];
        let h0 = self.dense(shared_slot, x, Activation::Tanh);
        self.layout
            .critic_paths
            .iter()
            .map(|path| {
                let h1 = self.dense(&self.layout.slots[path[1]], &h0, Activation::Tanh);
                self.dense(&self.layout.slots[path[2]], &h1, Activation::Identity)[0]
            })
            .collect()
    }

    pub fn forward_critic(&self, i: usize, x: &[f64]) -> f64 {
        let acts = self.forward_path(&self.layout.critic_paths[i], &CRITIC_ACTS, x);
        acts[3][0]
    }

    /// Encoded action of actor `i`, each entry in (-1, 1).
    pub fn forward_actor(&self, i: usize, x: &[f64]) -> [f64; ACTION_DIM] {
        let acts = self.forward_path(&self.layout.actor_paths[i], &self.actor_acts(), x);
        let out = acts.last().unwrap();
        [out[0], out[1], out[2]]
    }

    /// Adds `scale * grad(1/2 (y - V_i)^2)` to `grad`; returns `V_i(x)`.
    pub fn accumulate_critic_gradient(
        &self,
        i: usize,
        x: &[f64],
        y: f64,
        scale: f64,
        grad: &mut [f64],
    ) -> f64 {
        let path = &self.layout.critic_paths[i];
        let acts = self.forward_path(path, &CRITIC_ACTS, x);
        let v = acts[3][0];
        self.backward_path(path, &CRITIC_ACTS, &acts, &[v - y], scale, grad);
        v
    }

    /// Gradient of `1/2 (y - V_i(x))^2` over the whole parameter vector.
    pub fn critic_gradient(&self, i: usize, x: &[f64], y: f64) -> Vec<f64> {
        let mut grad = vec![0.0; self.len()];
        self.accumulate_critic_gradient(i, x, y, 1.0, &mut grad);
        grad
    }

    /// Adds `scale * grad(1/2 |target - Pi_i|^2)` to `grad`; returns `Pi_i(x)`.
    pub fn accumulate_actor_gradient(
        &self,
        i: usize,
        x: &[f64],
        target: &[f64; ACTION_DIM],
        scale: f64,
        grad: &mut [f64],
    ) -> [f64; ACTION_DIM] {
        let path = &self.layout.actor_paths[i];
        let act_fns = self.actor_acts();
        let acts = self.forward_path(path, &act_fns, x);
        let out = acts.last().unwrap();
        let d_out: Vec<f64> = out.iter().zip(target).map(|(o, t)| o - t).collect();
        self.backward_path(path, &act_fns, &acts, &d_out, scale, grad);
        [out[0], out[1], out[2]]
    }

    /// Gradient of `1/2 |target - Pi_i(x)|^2` over the whole parameter vector.
    pub fn actor_gradient(&self, i: usize, x: &[f64], target: &[f64; ACTION_DIM]) -> Vec<f64> {
        let mut grad = vec![0.0; self.len()];
        self.accumulate_actor_gradient(i, x, target, 1.0, &mut grad);
        grad
    }

    /// Plain gradient descent: `theta <- theta - alpha * grad`.
    pub fn sgd_step(&mut self, grad: &[f64], alpha: f64) {
        assert_eq!(grad.len(), self.values.len(), "gradient shape mismatch");
        for (p, g) in self.values.iter_mut().zip(grad) {
            *p -= alpha * g;
        }
    }

    /// Independent snapshot for use as a target network.
    pub fn copy_to_target(&self) -> MaceParameters {
        self.clone()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = WeightsFile {
            version: WEIGHTS_VERSION,
            topology: self.topology.clone(),
            params: self.values.clone(),
        };
        let mut s = serde_json::to_string(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str, expected: Option<&NetworkTopology>) -> Result<Self> {
        let file: WeightsFile =
            serde_json::from_str(text).map_err(|e| Error::MalformedFile(e.to_string()))?;
        if file.version != WEIGHTS_VERSION {
            return Err(Error::MalformedFile(format!(
                "unsupported version {}",
                file.version
            )));
        }
        if let Some(t) = expected {
            if *t != file.topology {
                return Err(Error::TopologyMismatch {
                    expected: t.describe(),
                    found: file.topology.describe(),
                });
            }
        }
        file.topology
            .validate()
            .map_err(|e| Error::MalformedFile(e.to_string()))?;
        Self::from_values(&file.topology, file.params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path, expected: Option<&NetworkTopology>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?, expected)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsFile {
    version: u32,
    topology: NetworkTopology,
    params: Vec<f64>,
}

/// Affine maps between physical quantities and the network's [-1, 1] units.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationSpec {
    pub n_contacts: usize,
    /// Physical ranges of (r1, theta1, r1dot, theta1dot).
    pub state_ranges: [[f64; 2]; 4],
    /// Physical ranges of (theta2, delta, r1dot_des).
    pub action_ranges: [[f64; 2]; ACTION_DIM],
}

fn encode_unit(x: f64, range: [f64; 2]) -> f64 {
    let mid = 0.5 * (range[0] + range[1]);
    let half = 0.5 * (range[1] - range[0]);
    (x - mid) / half
}

fn decode_unit(u: f64, range: [f64; 2]) -> f64 {
    let mid = 0.5 * (range[0] + range[1]);
    let half = 0.5 * (range[1] - range[0]);
    mid + half * u
}

impl NormalizationSpec {
    pub fn from_model(m: &ModelParams) -> Self {
        NormalizationSpec {
            n_contacts: m.n_contacts,
            state_ranges: [
                m.r_bounds,
                [-FRAC_PI_2, FRAC_PI_2],
                m.rdot_bounds,
                [-m.theta1dot_scale, m.theta1dot_scale],
            ],
            action_ranges: [m.theta2_bounds, m.delta_bounds, m.rdot_bounds],
        }
    }

    pub fn encode_state(&self, s: &PendulumState) -> Vec<f64> {
        let mut x = vec![0.0; self.n_contacts + 4];
        x[s.contact] = 1.0;
        let v = [s.r1, s.theta1, s.r1dot, s.theta1dot];
        for k in 0..4 {
            x[self.n_contacts + k] = encode_unit(v[k], self.state_ranges[k]);
        }
        x
    }

    pub fn decode_state(&self, x: &[f64]) -> PendulumState {
        let contact = x[..self.n_contacts]
            .iter()
            .position(|&h| h == 1.0)
            .unwrap_or(0);
        let c = &x[self.n_contacts..];
        PendulumState {
            contact,
            r1: decode_unit(c[0], self.state_ranges[0]),
            theta1: decode_unit(c[1], self.state_ranges[1]),
            r1dot: decode_unit(c[2], self.state_ranges[2]),
            theta1dot: decode_unit(c[3], self.state_ranges[3]),
        }
    }

    pub fn encode_action(&self, a: &[f64; ACTION_DIM]) -> [f64; ACTION_DIM] {
        std::array::from_fn(|k| encode_unit(a[k], self.action_ranges[k]))
    }

    pub fn decode_action(&self, u: &[f64; ACTION_DIM]) -> [f64; ACTION_DIM] {
        std::array::from_fn(|k| decode_unit(u[k], self.action_ranges[k]))
    }
}
