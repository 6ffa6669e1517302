//! Memoized max-min dynamic programming over a grid of abstract actions.
//!
//! Works in reward form: `V(s) = max_a min(r(s, a), V(f(s, a)))` with
//! `r = 1 / (1 + j)`, which ranks plans exactly like minimizing the maximal
//! impulse. Values are cached per quantized state and remaining depth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::RwLock;

use crate::error::{Error, Result};
use crate::model::{
    finish_transition, simulate_phase_sweep, transition, AbstractAction, ModelParams,
    PendulumState, TransitionOutcome,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscretizationSpec {
    pub n_theta2: usize,
    pub n_delta: usize,
    pub n_rdot: usize,
    /// Quantization widths for (r1, theta1, r1dot, theta1dot) cache keys.
    pub state_quant: [f64; 4],
    pub max_depth: usize,
}

impl Default for DiscretizationSpec {
    fn default() -> Self {
        DiscretizationSpec {
            n_theta2: 11,
            n_delta: 9,
            n_rdot: 7,
            state_quant: [0.005, 0.01, 0.02, 0.05],
            max_depth: 10,
        }
    }
}

impl DiscretizationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_theta2 == 0 || self.n_delta == 0 || self.n_rdot == 0 {
            return Err(Error::ConfigInvalid("grid counts must be >= 1".into()));
        }
        if self.state_quant.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::ConfigInvalid(
                "quantization widths must be > 0".into(),
            ));
        }
        if self.max_depth == 0 {
            return Err(Error::ConfigInvalid("max_depth must be >= 1".into()));
        }
        Ok(())
    }
}

/// Uniform grid over `bounds`, endpoints inclusive; a single point sits at the midpoint.
pub fn grid_values(bounds: [f64; 2], n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (bounds[0] + bounds[1])],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    bounds[1]
                } else {
                    bounds[0] + (bounds[1] - bounds[0]) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StateKey {
    pub contact: usize,
    pub q: [i64; 4],
}

impl StateKey {
    pub fn new(s: &PendulumState, quant: &[f64; 4]) -> Self {
        let v = [s.r1, s.theta1, s.r1dot, s.theta1dot];
        let mut q = [0i64; 4];
        for i in 0..4 {
            q[i] = (v[i] / quant[i]).round() as i64;
        }
        StateKey {
            contact: s.contact,
            q,
        }
    }
}

/// Value cache shared by every solve on one (model, grid) pair.
#[derive(Debug, Default)]
pub struct DpCache {
    map: RwLock<HashMap<(StateKey, usize), f64>>,
}

impl DpCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &(StateKey, usize)) -> Option<f64> {
        self.map.read().expect("cache poisoned").get(key).copied()
    }

    pub fn insert(&self, key: (StateKey, usize), value: f64) {
        self.map.write().expect("cache poisoned").insert(key, value);
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.map.write().expect("cache poisoned").clear();
    }
}

/// Position of an action in the grid. The derived ordering is the tie-break order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridIndex {
    pub theta2: usize,
    pub delta: usize,
    pub rdot: usize,
    pub contact: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanEnd {
    /// The initial state had no forward momentum.
    InitiallyTerminal,
    Terminal,
    Failure,
    DepthExhausted,
    NoFeasibleAction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpPlan {
    pub initial_state: PendulumState,
    pub actions: Vec<AbstractAction>,
    pub impulses: Vec<f64>,
    pub rewards: Vec<f64>,
    pub value: f64,
    pub end: PlanEnd,
}

impl DpPlan {
    pub fn max_impulse(&self) -> f64 {
        self.impulses.iter().copied().fold(0.0, f64::max)
    }

    pub fn contacts(&self) -> Vec<usize> {
        self.actions.iter().map(|a| a.next_contact).collect()
    }

    pub fn failed(&self) -> bool {
        matches!(self.end, PlanEnd::Failure | PlanEnd::NoFeasibleAction)
    }
}

/// One replay record `(s, a, s', r, c)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperienceTuple {
    pub state: PendulumState,
    pub action: [f64; 3],
    /// Successor state; `None` when the transition failed.
    pub next_state: Option<PendulumState>,
    pub reward: f64,
    pub contact: usize,
    pub terminal: bool,
}

impl ExperienceTuple {
    pub fn from_outcome(s: &PendulumState, a: &AbstractAction, out: &TransitionOutcome) -> Self {
        ExperienceTuple {
            state: *s,
            action: a.continuous(),
            next_state: out.next_state,
            reward: out.reward,
            contact: a.next_contact,
            terminal: out.terminal,
        }
    }
}

pub struct DpSolver<'a> {
    model: &'a ModelParams,
    spec: &'a DiscretizationSpec,
    theta2: Vec<f64>,
    delta: Vec<f64>,
    rdot: Vec<f64>,
}

impl<'a> DpSolver<'a> {
    pub fn new(model: &'a ModelParams, spec: &'a DiscretizationSpec) -> Result<Self> {
        model.validate()?;
        spec.validate()?;
        Ok(DpSolver {
            model,
            spec,
            theta2: grid_values(model.theta2_bounds, spec.n_theta2),
            delta: grid_values(model.delta_bounds, spec.n_delta),
            rdot: grid_values(model.rdot_bounds, spec.n_rdot),
        })
    }

    pub fn model(&self) -> &ModelParams {
        self.model
    }

    pub fn spec(&self) -> &DiscretizationSpec {
        self.spec
    }

    pub fn action(&self, idx: GridIndex) -> AbstractAction {
        AbstractAction::new(
            self.theta2[idx.theta2],
            self.delta[idx.delta],
            self.rdot[idx.rdot],
            idx.contact,
        )
    }

    /// All grid actions available from contact `from`, in tie-break order.
    pub fn grid_actions(&self, from: usize) -> Vec<GridIndex> {
        let mut out = Vec::new();
        for theta2 in 0..self.theta2.len() {
            for delta in 0..self.delta.len() {
                for rdot in 0..self.rdot.len() {
                    for contact in self.model.allowed_successors(from) {
                        out.push(GridIndex {
                            theta2,
                            delta,
                            rdot,
                            contact,
                        });
                    }
                }
            }
        }
        out
    }

    /// Best reward-form value reachable from `s` with `depth` impacts already used.
    pub fn solve_value(&self, s: &PendulumState, depth: usize, cache: &DpCache) -> f64 {
        if s.is_terminal() {
            return 1.0;
        }
        if depth >= self.spec.max_depth {
            return 0.0;
        }
        let key = (StateKey::new(s, &self.spec.state_quant), depth);
        if let Some(v) = cache.get(&key) {
            return v;
        }
        let v = self.search(s, depth, cache).map_or(0.0, |(_, v)| v);
        cache.insert(key, v);
        v
    }

    /// Argmax over the grid with lexicographic tie-breaking.
    ///
    /// Candidates are visited in decreasing immediate reward; since a
    /// candidate's value never exceeds its immediate reward, the scan stops
    /// once no remaining candidate can beat or tie the incumbent.
    fn search(&self, s: &PendulumState, depth: usize, cache: &DpCache) -> Option<(GridIndex, f64)> {
        // One swing integration per rod rate, shared by every (theta2, delta, contact).
        let sweeps: Vec<_> = self
            .rdot
            .iter()
            .map(|&rd| simulate_phase_sweep(self.model, s, rd, &self.delta).ok())
            .collect();
        let mut candidates: Vec<(GridIndex, TransitionOutcome)> = self
            .grid_actions(s.contact)
            .into_iter()
            .filter_map(|idx| {
                let pre = sweeps[idx.rdot].as_ref()?[idx.delta];
                let out = finish_transition(self.model, pre, &self.action(idx), None).ok()?;
                (!out.is_failure()).then_some((idx, out))
            })
            .collect();
        candidates.sort_by(|a, b| b.1.reward.total_cmp(&a.1.reward));

        let mut best: Option<(GridIndex, f64)> = None;
        for (idx, out) in &candidates {
            if let Some((bi, bv)) = best {
                if out.reward < bv {
                    break;
                }
                if out.reward == bv && *idx > bi {
                    continue;
                }
            }
            let value = match (&out.next_state, out.terminal) {
                (Some(next), false) => out.reward.min(self.solve_value(next, depth + 1, cache)),
                _ => out.reward,
            };
            let better = match best {
                None => true,
                Some((bi, bv)) => value > bv || (value == bv && *idx < bi),
            };
            if better {
                best = Some((*idx, value));
            }
        }
        best
    }

    pub fn best_action(&self, s: &PendulumState, cache: &DpCache) -> Result<(AbstractAction, f64)> {
        self.best_action_at(s, 0, cache)
    }

    /// Best action when `depth` impacts of the budget have been spent.
    pub fn best_action_at(
        &self,
        s: &PendulumState,
        depth: usize,
        cache: &DpCache,
    ) -> Result<(AbstractAction, f64)> {
        self.search(s, depth, cache)
            .map(|(idx, v)| (self.action(idx), v))
            .ok_or(Error::NoFeasibleAction)
    }

    /// Follows the greedy DP actions from `s0` until the fall ends.
    pub fn extract_rollout(&self, s0: &PendulumState, cache: &DpCache) -> DpPlan {
        let mut plan = DpPlan {
            initial_state: *s0,
            actions: Vec::new(),
            impulses: Vec::new(),
            rewards: Vec::new(),
            value: 1.0,
            end: PlanEnd::InitiallyTerminal,
        };
        if s0.is_terminal() {
            return plan;
        }
        plan.end = PlanEnd::DepthExhausted;
        let mut s = *s0;
        for depth in 0..self.spec.max_depth {
            let Ok((a, _)) = self.best_action_at(&s, depth, cache) else {
                plan.end = PlanEnd::NoFeasibleAction;
                break;
            };
            let Ok(out) = transition(self.model, &s, &a) else {
                plan.end = PlanEnd::NoFeasibleAction;
                break;
            };
            plan.actions.push(a);
            plan.impulses.push(out.impulse);
            plan.rewards.push(out.reward);
            if out.is_failure() {
                plan.end = PlanEnd::Failure;
                break;
            }
            if out.terminal {
                plan.end = PlanEnd::Terminal;
                break;
            }
            s = out
                .next_state
                .expect("successful transition has a successor");
        }
        plan.value = if plan.end == PlanEnd::NoFeasibleAction {
            0.0
        } else {
            plan.rewards.iter().copied().fold(1.0, f64::min)
        };
        plan
    }

    /// Replays a plan into replay tuples, one per impact.
    pub fn plan_tuples(&self, plan: &DpPlan) -> Vec<ExperienceTuple> {
        let mut tuples = Vec::with_capacity(plan.actions.len());
        let mut s = plan.initial_state;
        for a in &plan.actions {
            let Ok(out) = transition(self.model, &s, a) else {
                break;
            };
            tuples.push(ExperienceTuple::from_outcome(&s, a, &out));
            match out.next_state {
                Some(next) => s = next,
                None => break,
            }
        }
        tuples
    }

    /// Plans for each initial state. With `threads > 1` roots are solved in
    /// parallel against the shared cache; output order follows the input.
    pub fn plans(&self, initial: &[PendulumState], cache: &DpCache, threads: usize) -> Vec<DpPlan> {
        if threads <= 1 {
            return initial
                .iter()
                .map(|s| self.extract_rollout(s, cache))
                .collect();
        }
        match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => pool.install(|| {
                initial
                    .par_iter()
                    .map(|s| self.extract_rollout(s, cache))
                    .collect()
            }),
            Err(_) => initial
                .iter()
                .map(|s| self.extract_rollout(s, cache))
                .collect(),
        }
    }

    pub fn generate_tuples(
        &self,
        initial: &[PendulumState],
        cache: &DpCache,
    ) -> Vec<ExperienceTuple> {
        self.plans(initial, cache, 1)
            .iter()
            .flat_map(|p| self.plan_tuples(p))
            .collect()
    }
}
