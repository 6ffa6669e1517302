//! Deployment-side policy: pick the contact with the highest critic, run its
//! actor, and re-plan after every impact.

use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::dp::PlanEnd;
use crate::error::{Error, Result};
use crate::model::{transition, AbstractAction, FailureKind, ModelParams, PendulumState};
use crate::net::{MaceParameters, NormalizationSpec, ACTION_DIM};

/// Index of the largest value among `candidates`; the lowest index wins ties.
pub fn masked_argmax(values: &[f64], candidates: &[usize]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for &c in candidates {
        match best {
            Some(b) if values[c] <= values[b] => {}
            _ => best = Some(c),
        }
    }
    best
}

/// Decodes an encoded actor output into a physical action for contact `c2`.
pub fn decode_action(
    model: &ModelParams,
    norm: &NormalizationSpec,
    encoded: &[f64; ACTION_DIM],
    c2: usize,
) -> AbstractAction {
    let phys = norm.decode_action(encoded);
    let clamp = |x: f64, b: [f64; 2]| x.clamp(b[0], b[1]);
    AbstractAction::new(
        clamp(phys[0], model.theta2_bounds),
        clamp(phys[1], model.delta_bounds),
        clamp(phys[2], model.rdot_bounds),
        c2,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStep {
    pub state: PendulumState,
    pub contact: usize,
    pub action: AbstractAction,
    pub impulse: f64,
    pub reward: f64,
    pub failure: Option<FailureKind>,
    /// Wall time of the policy query in milliseconds; 0 unless timing was requested.
    pub query_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub initial_state: PendulumState,
    pub steps: Vec<EpisodeStep>,
    pub episode_reward: f64,
    /// Starting contact followed by every chosen contact.
    pub contact_sequence: Vec<usize>,
    pub end: PlanEnd,
}

impl EpisodeRecord {
    pub fn max_impulse(&self) -> f64 {
        self.steps.iter().map(|s| s.impulse).fold(0.0, f64::max)
    }

    pub fn failed(&self) -> bool {
        matches!(self.end, PlanEnd::Failure | PlanEnd::NoFeasibleAction)
    }

    pub fn mean_query_ms(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|s| s.query_ms).sum::<f64>() / self.steps.len() as f64
    }

    pub const SUMMARY_HEADER: &'static str =
        "c1,r1,theta1,r1dot,theta1dot,contact_sequence,max_impulse,episode_reward,mean_query_ms";

    pub fn summary_row(&self) -> String {
        let s = &self.initial_state;
        let seq: Vec<String> = self
            .contact_sequence
            .iter()
            .map(|c| c.to_string())
            .collect();
        format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e},{:.16e},{:.6}",
            s.contact,
            s.r1,
            s.theta1,
            s.r1dot,
            s.theta1dot,
            seq.join("-"),
            self.max_impulse(),
            self.episode_reward,
            self.mean_query_ms()
        )
    }
}

/// The learned policy bound to a model.
pub struct PolicyRuntime<'a> {
    params: &'a MaceParameters,
    model: &'a ModelParams,
    norm: NormalizationSpec,
    max_depth: usize,
}

impl<'a> PolicyRuntime<'a> {
    pub fn new(
        params: &'a MaceParameters,
        model: &'a ModelParams,
        max_depth: usize,
    ) -> Result<Self> {
        if params.n_pairs() != model.n_contacts {
            return Err(Error::TopologyMismatch {
                expected: format!("{} pairs", model.n_contacts),
                found: format!("{} pairs", params.n_pairs()),
            });
        }
        Ok(PolicyRuntime {
            params,
            model,
            norm: NormalizationSpec::from_model(model),
            max_depth,
        })
    }

    pub fn normalization(&self) -> &NormalizationSpec {
        &self.norm
    }

    pub fn critic_values(&self, s: &PendulumState) -> Vec<f64> {
        self.params.forward_critics(&self.norm.encode_state(s))
    }

    /// Greedy contact choice over the allowed successors, and that actor's action.
    pub fn act(&self, s: &PendulumState) -> Result<(usize, AbstractAction)> {
        let x = self.norm.encode_state(s);
        let values = self.params.forward_critics(&x);
        let allowed: Vec<usize> = self.model.allowed_successors(s.contact).collect();
        let c2 =
            masked_argmax(&values, &allowed).ok_or(Error::NoAllowedContact { from: s.contact })?;
        let enc = self.params.forward_actor(c2, &x);
        Ok((c2, decode_action(self.model, &self.norm, &enc, c2)))
    }

    pub fn run_episode(&self, s0: &PendulumState) -> EpisodeRecord {
        self.episode(s0, false)
    }

    /// Like [`run_episode`](Self::run_episode) but records query wall time.
    pub fn run_episode_timed(&self, s0: &PendulumState) -> EpisodeRecord {
        self.episode(s0, true)
    }

    fn episode(&self, s0: &PendulumState, timed: bool) -> EpisodeRecord {
        let mut rec = EpisodeRecord {
            initial_state: *s0,
            steps: Vec::new(),
            episode_reward: 1.0,
            contact_sequence: vec![s0.contact],
            end: PlanEnd::InitiallyTerminal,
        };
        if s0.is_terminal() {
            return rec;
        }
        rec.end = PlanEnd::DepthExhausted;
        let mut s = *s0;
        for _ in 0..self.max_depth {
            let start = timed.then(Instant::now);
            let acted = self.act(&s);
            let query_ms = start.map_or(0.0, |t| t.elapsed().as_secs_f64() * 1e3);
            let Ok((c2, a)) = acted else {
                rec.end = PlanEnd::NoFeasibleAction;
                break;
            };
            let Ok(out) = transition(self.model, &s, &a) else {
                rec.end = PlanEnd::NoFeasibleAction;
                break;
            };
            rec.steps.push(EpisodeStep {
                state: s,
                contact: c2,
                action: a,
                impulse: out.impulse,
                reward: out.reward,
                failure: out.failure,
                query_ms,
            });
            rec.contact_sequence.push(c2);
            if out.is_failure() {
                rec.end = PlanEnd::Failure;
                break;
            }
            if out.terminal {
                rec.end = PlanEnd::Terminal;
                break;
            }
            s = out
                .next_state
                .expect("successful transition has a successor");
        }
        rec.episode_reward = if rec.end == PlanEnd::NoFeasibleAction {
            0.0
        } else {
            rec.steps.iter().map(|s| s.reward).fold(1.0, f64::min)
        };
        rec
    }
}

/// Joint-level targets in the sagittal plane, ground at y = 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriangleTargets {
    /// Current pivot.
    pub v1: (f64, f64),
    /// Predicted COM at the next impact.
    pub v2: (f64, f64),
    /// Predicted next contact point.
    pub v3: (f64, f64),
}

/// Linear extrapolation of the pendulum to the next impact.
pub fn plan_triangle(
    pivot_x: f64,
    s: &PendulumState,
    a: &AbstractAction,
) -> Result<TriangleTargets> {
    let r_hat = s.r1 + a.delta * a.r1dot_des;
    let theta_hat = s.theta1 + a.delta * s.theta1dot;
    if !(r_hat > 0.0) || !(theta_hat.cos() > 0.0) {
        return Err(Error::DegeneratePrediction { r_hat, theta_hat });
    }
    let v1 = (pivot_x, 0.0);
    let v2 = (pivot_x + r_hat * theta_hat.sin(), r_hat * theta_hat.cos());
    let v3 = (v2.0 + v2.1 * a.theta2.tan(), 0.0);
    Ok(TriangleTargets { v1, v2, v3 })
}
