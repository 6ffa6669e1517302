//! Abstract falling model: a point-mass inverted pendulum on a massless
//! telescopic rod, plus a massless stopper rod whose tip becomes the next
//! pivot when it reaches the ground.
//!
//! Angles follow the sagittal-plane convention used throughout the crate:
//! `theta1` is measured from the upward vertical and is positive in the fall
//! direction (+x); `theta2` is measured from the downward vertical at the COM
//! and is positive forward.

use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};

/// Labels of the default eight contacting body parts.
pub const DEFAULT_CONTACT_NAMES: [&str; 8] = [
    "right-toe",
    "right-heel",
    "left-toe",
    "left-heel",
    "knees",
    "elbows",
    "hands",
    "head",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    /// Body mass (kg).
    pub mass: f64,
    /// Rotational inertia about the COM (kg m^2).
    pub inertia: f64,
    pub gravity: f64,
    pub r_bounds: [f64; 2],
    pub r2_bounds: [f64; 2],
    pub theta2_bounds: [f64; 2],
    pub delta_bounds: [f64; 2],
    pub rdot_bounds: [f64; 2],
    pub n_contacts: usize,
    /// `contact_adjacency[from][to]`: may `to` follow `from`.
    pub contact_adjacency: Vec<Vec<bool>>,
    pub contact_names: Vec<String>,
    pub integrator_dt: f64,
    /// Impulse charged to a failed transition (COM strike or infeasible stopper).
    pub fail_impulse: f64,
    /// Angular rate mapped to +/-1 by the network input encoding (rad/s).
    pub theta1dot_scale: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        let mass = 1.6;
        ModelParams {
            mass,
            inertia: mass * 0.1 * 0.1,
            gravity: 9.81,
            r_bounds: [0.08, 0.5],
            r2_bounds: [0.08, 0.5],
            theta2_bounds: [0.0, 1.2],
            delta_bounds: [0.2, 0.4],
            rdot_bounds: [-0.5, 0.1],
            n_contacts: 8,
            contact_adjacency: vec![vec![true; 8]; 8],
            contact_names: DEFAULT_CONTACT_NAMES
                .iter()
                .map(|s| s.to_string())
                .collect(),
            integrator_dt: 1e-3,
            fail_impulse: 10.0,
            theta1dot_scale: 10.0,
        }
    }
}

impl ModelParams {
    /// Default parameters restricted to the first `n` contacts, all mutually reachable.
    pub fn with_contacts(n: usize) -> Self {
        ModelParams {
            n_contacts: n,
            contact_adjacency: vec![vec![true; n]; n],
            contact_names: (0..n)
                .map(|i| {
                    DEFAULT_CONTACT_NAMES
                        .get(i)
                        .map(|s| s.to_string())
                        .unwrap_or_else(|| format!("contact-{i}"))
                })
                .collect(),
            ..ModelParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if !(self.mass > 0.0 && self.inertia > 0.0 && self.gravity > 0.0) {
            return bad("mass, inertia and gravity must be positive".into());
        }
        for (name, b) in [
            ("r_bounds", self.r_bounds),
            ("r2_bounds", self.r2_bounds),
            ("theta2_bounds", self.theta2_bounds),
            ("delta_bounds", self.delta_bounds),
            ("rdot_bounds", self.rdot_bounds),
        ] {
            if !(b[0].is_finite() && b[1].is_finite() && b[0] < b[1]) {
                return bad(format!("{name} must satisfy min < max"));
            }
        }
        if self.r_bounds[0] <= 0.0 {
            return bad("r_min must be positive".into());
        }
        if self.r2_bounds[0] < self.r_bounds[0] || self.r2_bounds[1] > self.r_bounds[1] {
            return bad("r2_bounds must lie inside r_bounds".into());
        }
        if self.theta2_bounds.iter().any(|t| t.abs() >= FRAC_PI_2) {
            return bad("|theta2| bounds must be below pi/2".into());
        }
        if self.delta_bounds[0] <= 0.0 {
            return bad("delta_min must be positive".into());
        }
        if !(self.integrator_dt > 0.0) {
            return bad("integrator_dt must be positive".into());
        }
        if !(self.fail_impulse >= 0.0) || !(self.theta1dot_scale > 0.0) {
            return bad("fail_impulse must be >= 0 and theta1dot_scale > 0".into());
        }
        if self.n_contacts == 0 || self.contact_adjacency.len() != self.n_contacts {
            return bad("contact_adjacency must be n_contacts x n_contacts".into());
        }
        for (i, row) in self.contact_adjacency.iter().enumerate() {
            if row.len() != self.n_contacts {
                return bad(format!("contact_adjacency row {i} has wrong length"));
            }
            if !row.iter().any(|&a| a) {
                return bad(format!("contact {i} has no allowed successor"));
            }
        }
        if !self.contact_names.is_empty() && self.contact_names.len() != self.n_contacts {
            return bad("contact_names must be empty or have n_contacts entries".into());
        }
        Ok(())
    }

    pub fn allowed(&self, from: usize, to: usize) -> bool {
        self.contact_adjacency
            .get(from)
            .and_then(|row| row.get(to))
            .copied()
            .unwrap_or(false)
    }

    pub fn allowed_successors(&self, from: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_contacts).filter(move |&to| self.allowed(from, to))
    }

    pub fn contact_name(&self, c: usize) -> String {
        self.contact_names
            .get(c)
            .cloned()
            .unwrap_or_else(|| format!("contact-{c}"))
    }

    fn check_action(&self, from: usize, a: &AbstractAction) -> Result<()> {
        let within = |x: f64, b: [f64; 2]| x >= b[0] && x <= b[1];
        if !within(a.theta2, self.theta2_bounds) {
            return Err(Error::ActionOutOfBounds(format!("theta2 = {}", a.theta2)));
        }
        if !within(a.delta, self.delta_bounds) {
            return Err(Error::ActionOutOfBounds(format!("delta = {}", a.delta)));
        }
        if !within(a.r1dot_des, self.rdot_bounds) {
            return Err(Error::ActionOutOfBounds(format!(
                "r1dot_des = {}",
                a.r1dot_des
            )));
        }
        if a.next_contact >= self.n_contacts || !self.allowed(from, a.next_contact) {
            return Err(Error::DisallowedContact {
                from,
                to: a.next_contact,
            });
        }
        Ok(())
    }
}

/// Pendulum state at an impact moment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendulumState {
    pub contact: usize,
    pub r1: f64,
    pub theta1: f64,
    pub r1dot: f64,
    pub theta1dot: f64,
}

impl PendulumState {
    pub fn new(contact: usize, r1: f64, theta1: f64, r1dot: f64, theta1dot: f64) -> Self {
        PendulumState {
            contact,
            r1,
            theta1,
            r1dot,
            theta1dot,
        }
    }

    /// No forward angular momentum left: the fall is over.
    pub fn is_terminal(&self) -> bool {
        self.theta1dot <= 0.0
    }

    pub fn is_valid(&self, params: &ModelParams) -> bool {
        self.contact < params.n_contacts
            && self.r1 >= params.r_bounds[0]
            && self.r1 <= params.r_bounds[1]
            && self.r1 * self.theta1.cos() > 0.0
            && self.r1dot.is_finite()
            && self.theta1dot.is_finite()
    }

    pub fn com_height(&self) -> f64 {
        self.r1 * self.theta1.cos()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbstractAction {
    pub theta2: f64,
    pub delta: f64,
    pub r1dot_des: f64,
    pub next_contact: usize,
}

impl AbstractAction {
    pub fn new(theta2: f64, delta: f64, r1dot_des: f64, next_contact: usize) -> Self {
        AbstractAction {
            theta2,
            delta,
            r1dot_des,
            next_contact,
        }
    }

    pub fn continuous(&self) -> [f64; 3] {
        [self.theta2, self.delta, self.r1dot_des]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    /// COM reached the ground (or the rod over-rotated) before the impact time.
    ComGroundStrike,
    /// Required stopper length is outside its bounds.
    InfeasibleStopper,
    /// The stopper tip is not moving toward the ground, so it cannot land.
    SeparatingContact,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionOutcome {
    pub next_state: Option<PendulumState>,
    pub failure: Option<FailureKind>,
    pub impulse: f64,
    pub reward: f64,
    pub terminal: bool,
    /// Horizontal displacement of the pivot (new pivot minus old pivot).
    pub pivot_shift: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TracePoint>>,
}

impl TransitionOutcome {
    fn failed(params: &ModelParams, kind: FailureKind, trace: Option<Vec<TracePoint>>) -> Self {
        TransitionOutcome {
            next_state: None,
            failure: Some(kind),
            impulse: params.fail_impulse,
            reward: 0.0,
            terminal: true,
            pivot_shift: 0.0,
            trace,
        }
    }

    pub fn is_failure(&self) -> bool {
        self.failure.is_some()
    }
}

/// Reward of a single impact.
pub fn reward_from_impulse(j: f64) -> f64 {
    1.0 / (1.0 + j)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComKinematics {
    pub x: f64,
    pub y: f64,
    pub xdot: f64,
    pub ydot: f64,
}

pub fn com_kinematics(pivot_x: f64, s: &PendulumState) -> ComKinematics {
    let (sin, cos) = s.theta1.sin_cos();
    ComKinematics {
        x: pivot_x + s.r1 * sin,
        y: s.r1 * cos,
        xdot: s.r1dot * sin + s.r1 * s.theta1dot * cos,
        ydot: s.r1dot * cos - s.r1 * s.theta1dot * sin,
    }
}

/// Rod rate actually applied for one step: the clamped command, zeroed when the
/// rod is already saturated in the commanded direction.
fn effective_rate(params: &ModelParams, r1: f64, r1dot_des: f64) -> f64 {
    let rate = r1dot_des.clamp(params.rdot_bounds[0], params.rdot_bounds[1]);
    if (r1 >= params.r_bounds[1] && rate > 0.0) || (r1 <= params.r_bounds[0] && rate < 0.0) {
        0.0
    } else {
        rate
    }
}

/// One RK4 step of the variable-length pendulum
/// `theta'' = (g sin(theta) - 2 r' theta') / r` with `r' = clamp(r1dot_des)`.
pub fn step_swing(
    params: &ModelParams,
    s: &PendulumState,
    r1dot_des: f64,
    dt: f64,
) -> Result<PendulumState> {
    if !(s.r1 > 0.0) {
        return Err(Error::DegenerateState { r1: s.r1 });
    }
    let g = params.gravity;
    let rate = effective_rate(params, s.r1, r1dot_des);
    let deriv = |r: f64, th: f64, w: f64| -> (f64, f64, f64) {
        (rate, w, (g * th.sin() - 2.0 * rate * w) / r)
    };

    let (r0, th0, w0) = (s.r1, s.theta1, s.theta1dot);
    let k1 = deriv(r0, th0, w0);
    let k2 = deriv(
        r0 + 0.5 * dt * k1.0,
        th0 + 0.5 * dt * k1.1,
        w0 + 0.5 * dt * k1.2,
    );
    let k3 = deriv(
        r0 + 0.5 * dt * k2.0,
        th0 + 0.5 * dt * k2.1,
        w0 + 0.5 * dt * k2.2,
    );
    let k4 = deriv(r0 + dt * k3.0, th0 + dt * k3.1, w0 + dt * k3.2);

    let mut r1 = r0 + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
    let theta1 = th0 + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    let theta1dot = w0 + dt / 6.0 * (k1.2 + 2.0 * k2.2 + 2.0 * k3.2 + k4.2);
    let mut r1dot = rate;
    if r1 >= params.r_bounds[1] {
        r1 = params.r_bounds[1];
        if r1dot > 0.0 {
            r1dot = 0.0;
        }
    } else if r1 <= params.r_bounds[0] {
        r1 = params.r_bounds[0];
        if r1dot < 0.0 {
            r1dot = 0.0;
        }
    }
    Ok(PendulumState {
        contact: s.contact,
        r1,
        theta1,
        r1dot,
        theta1dot,
    })
}

/// Integrates one swing phase of duration `delta` at the configured step size.
/// The duration is covered by whole steps plus one fractional step.
pub fn simulate_phase(
    params: &ModelParams,
    s: &PendulumState,
    delta: f64,
    r1dot_des: f64,
) -> Result<std::result::Result<PendulumState, FailureKind>> {
    simulate_phase_inner(
        params,
        s,
        delta,
        r1dot_des,
        params.integrator_dt,
        false,
        None,
    )
}

/// Swing phase as used by [`transition`]: like [`simulate_phase`], but stops
/// at the first step where forward rotation has ceased (`theta1dot <= 0`).
/// The returned state is then terminal and no impact follows.
pub fn simulate_swing(
    params: &ModelParams,
    s: &PendulumState,
    delta: f64,
    r1dot_des: f64,
) -> Result<std::result::Result<PendulumState, FailureKind>> {
    simulate_phase_inner(
        params,
        s,
        delta,
        r1dot_des,
        params.integrator_dt,
        true,
        None,
    )
}

fn simulate_phase_inner(
    params: &ModelParams,
    s: &PendulumState,
    delta: f64,
    r1dot_des: f64,
    dt: f64,
    halting: bool,
    mut trace: Option<&mut Vec<TracePoint>>,
) -> Result<std::result::Result<PendulumState, FailureKind>> {
    let whole = (delta / dt + 1e-9).floor() as u64;
    let rem = delta - whole as f64 * dt;
    let mut state = *s;
    let mut t = 0.0;
    if let Some(tr) = trace.as_deref_mut() {
        let c = com_kinematics(0.0, &state);
        tr.push(TracePoint { t, x: c.x, y: c.y });
    }
    let steps = (0..whole).map(|_| dt).chain((rem > 1e-12).then_some(rem));
    for h in steps {
        state = step_swing(params, &state, r1dot_des, h)?;
        t += h;
        if !(state.theta1.cos() > 0.0) || !state.theta1.is_finite() {
            return Ok(Err(FailureKind::ComGroundStrike));
        }
        if let Some(tr) = trace.as_deref_mut() {
            let c = com_kinematics(0.0, &state);
            tr.push(TracePoint { t, x: c.x, y: c.y });
        }
        if halting && state.is_terminal() {
            break;
        }
    }
    Ok(Ok(state))
}

/// Like [`simulate_phase`] but with an explicit step size; used for refinement checks.
pub fn simulate_phase_with_dt(
    params: &ModelParams,
    s: &PendulumState,
    delta: f64,
    r1dot_des: f64,
    dt: f64,
) -> Result<std::result::Result<PendulumState, FailureKind>> {
    simulate_phase_inner(params, s, delta, r1dot_des, dt, false, None)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopperTip {
    pub x2: f64,
    pub y2: f64,
    pub r2: f64,
}

/// Places the stopper tip on the ground along `theta2` from the COM.
pub fn stopper_geometry(
    params: &ModelParams,
    pivot_x: f64,
    s_pre: &PendulumState,
    theta2: f64,
) -> Result<StopperTip> {
    let com = com_kinematics(pivot_x, s_pre);
    let r2 = com.y / theta2.cos();
    if !(r2 >= params.r2_bounds[0] && r2 <= params.r2_bounds[1]) {
        return Err(Error::InfeasibleStopper { r2 });
    }
    Ok(StopperTip {
        x2: com.x + com.y * theta2.tan(),
        y2: 0.0,
        r2,
    })
}

/// Normal impulse of a plastic impact at horizontal offset `x2 - x1` from the COM.
pub fn impact_impulse(params: &ModelParams, x1: f64, x2: f64, y2dot_pre: f64) -> f64 {
    if y2dot_pre >= 0.0 {
        return 0.0;
    }
    let dx = x2 - x1;
    -y2dot_pre / (1.0 / params.mass + dx * dx / params.inertia)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImpactResult {
    pub next_state: PendulumState,
    pub impulse: f64,
    pub new_pivot_x: f64,
    /// Counter-clockwise body rate before the impact.
    pub omega_pre: f64,
    /// Counter-clockwise body rate after the impact.
    pub omega_post: f64,
    pub com_vel_post: (f64, f64),
    pub contact_ydot_pre: f64,
}

impl ImpactResult {
    /// Vertical velocity of the contact point just after the impact.
    pub fn contact_ydot_post(&self, x1: f64) -> f64 {
        self.com_vel_post.1 + self.omega_post * (self.new_pivot_x - x1)
    }
}

/// Resolves a perfectly plastic, frictionless impact at the stopper tip and
/// re-anchors the pendulum at the tip.
pub fn resolve_impact(
    params: &ModelParams,
    pivot_x: f64,
    s_pre: &PendulumState,
    theta2: f64,
    next_contact: usize,
) -> Result<ImpactResult> {
    let tip = stopper_geometry(params, pivot_x, s_pre, theta2)?;
    let com = com_kinematics(pivot_x, s_pre);
    let dx = tip.x2 - com.x;
    // Rod angle grows clockwise, so the body's counter-clockwise rate is -theta1dot.
    let omega_pre = -s_pre.theta1dot;
    let contact_ydot_pre = com.ydot + omega_pre * dx;
    let j = impact_impulse(params, com.x, tip.x2, contact_ydot_pre);
    let xdot = com.xdot;
    let ydot = com.ydot + j / params.mass;
    let omega_post = omega_pre + j * dx / params.inertia;

    let theta1 = -theta2;
    let (sin, cos) = theta1.sin_cos();
    let r1dot = xdot * sin + ydot * cos;
    let theta1dot = (xdot * cos - ydot * sin) / tip.r2;
    Ok(ImpactResult {
        next_state: PendulumState {
            contact: next_contact,
            r1: tip.r2,
            theta1,
            r1dot,
            theta1dot,
        },
        impulse: j,
        new_pivot_x: tip.x2,
        omega_pre,
        omega_post,
        com_vel_post: (xdot, ydot),
        contact_ydot_pre,
    })
}

/// The transition function and the impact reward, evaluated jointly.
pub fn transition(
    params: &ModelParams,
    s: &PendulumState,
    a: &AbstractAction,
) -> Result<TransitionOutcome> {
    transition_impl(params, s, a, false)
}

/// [`transition`] plus a sampled COM trajectory (pivot at x = 0).
pub fn transition_traced(
    params: &ModelParams,
    s: &PendulumState,
    a: &AbstractAction,
) -> Result<TransitionOutcome> {
    transition_impl(params, s, a, true)
}

fn transition_impl(
    params: &ModelParams,
    s: &PendulumState,
    a: &AbstractAction,
    traced: bool,
) -> Result<TransitionOutcome> {
    params.check_action(s.contact, a)?;
    let mut trace = traced.then(Vec::new);
    let pre = simulate_phase_inner(
        params,
        s,
        a.delta,
        a.r1dot_des,
        params.integrator_dt,
        true,
        trace.as_mut(),
    )?;
    finish_transition(params, pre, a, trace)
}

/// Impact half of [`transition`], given the outcome of the swing phase.
/// The action is assumed to be in bounds.
pub fn finish_transition(
    params: &ModelParams,
    pre: std::result::Result<PendulumState, FailureKind>,
    a: &AbstractAction,
    trace: Option<Vec<TracePoint>>,
) -> Result<TransitionOutcome> {
    let s_pre = match pre {
        Ok(st) => st,
        Err(kind) => return Ok(TransitionOutcome::failed(params, kind, trace)),
    };
    if s_pre.is_terminal() {
        // The fall came to a halt before the planned contact: no impact.
        return Ok(TransitionOutcome {
            next_state: Some(s_pre),
            failure: None,
            impulse: 0.0,
            reward: 1.0,
            terminal: true,
            pivot_shift: 0.0,
            trace,
        });
    }
    let impact = match resolve_impact(params, 0.0, &s_pre, a.theta2, a.next_contact) {
        Ok(imp) if imp.contact_ydot_pre >= 0.0 => {
            return Ok(TransitionOutcome::failed(
                params,
                FailureKind::SeparatingContact,
                trace,
            ))
        }
        Ok(imp) => imp,
        Err(Error::InfeasibleStopper { .. }) => {
            return Ok(TransitionOutcome::failed(
                params,
                FailureKind::InfeasibleStopper,
                trace,
            ))
        }
        Err(e) => return Err(e),
    };
    Ok(TransitionOutcome {
        next_state: Some(impact.next_state),
        failure: None,
        impulse: impact.impulse,
        reward: reward_from_impulse(impact.impulse),
        terminal: impact.next_state.is_terminal(),
        pivot_shift: impact.new_pivot_x,
        trace,
    })
}

/// Pre-impact states for several phase durations under one rod-rate command.
///
/// Shares the whole-step prefix between durations; each entry is
/// bit-identical to `simulate_swing(params, s, deltas[k], r1dot_des)`.
pub fn simulate_phase_sweep(
    params: &ModelParams,
    s: &PendulumState,
    r1dot_des: f64,
    deltas: &[f64],
) -> Result<Vec<std::result::Result<PendulumState, FailureKind>>> {
    let dt = params.integrator_dt;
    let splits: Vec<(u64, f64)> = deltas
        .iter()
        .map(|&d| {
            let whole = (d / dt + 1e-9).floor() as u64;
            (whole, d - whole as f64 * dt)
        })
        .collect();
    let max_whole = splits.iter().map(|&(w, _)| w).max().unwrap_or(0);

    // prefix[n] = state after n whole steps; stops at the first failure or halt.
    let mut prefix = Vec::with_capacity(max_whole as usize + 1);
    prefix.push(*s);
    let mut failed_at = None;
    let mut halted_at = None;
    for n in 1..=max_whole {
        let next = step_swing(params, &prefix[n as usize - 1], r1dot_des, dt)?;
        if !(next.theta1.cos() > 0.0) || !next.theta1.is_finite() {
            failed_at = Some(n);
            break;
        }
        prefix.push(next);
        if next.is_terminal() {
            halted_at = Some(n);
            break;
        }
    }

    splits
        .iter()
        .map(|&(whole, rem)| {
            if failed_at.is_some_and(|f| f <= whole) {
                return Ok(Err(FailureKind::ComGroundStrike));
            }
            if let Some(h) = halted_at.filter(|&h| h <= whole) {
                return Ok(Ok(prefix[h as usize]));
            }
            let base = prefix[whole as usize];
            if rem > 1e-12 {
                let last = step_swing(params, &base, r1dot_des, rem)?;
                if !(last.theta1.cos() > 0.0) || !last.theta1.is_finite() {
                    return Ok(Err(FailureKind::ComGroundStrike));
                }
                Ok(Ok(last))
            } else {
                Ok(Ok(base))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_4, PI};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn com_kinematics_examples() {
        let c = com_kinematics(0.0, &PendulumState::new(0, 1.0, 0.0, 0.0, 0.0));
        assert_eq!((c.x, c.y, c.xdot, c.ydot), (0.0, 1.0, 0.0, 0.0));

        let c = com_kinematics(0.0, &PendulumState::new(0, 1.0, FRAC_PI_2, 0.0, 1.0));
        assert!(close(c.x, 1.0, 1e-15) && close(c.y, 0.0, 1e-15));
        assert!(close(c.xdot, 0.0, 1e-15) && close(c.ydot, -1.0, 1e-15));

        let c = com_kinematics(0.0, &PendulumState::new(0, 2.0, PI / 6.0, 0.5, 0.2));
        let (s, co) = (0.5_f64, 3f64.sqrt() / 2.0);
        assert!(close(c.x, 1.0, 1e-15));
        assert!(close(c.y, 3f64.sqrt(), 1e-15));
        assert!(close(c.xdot, 0.5 * s + 2.0 * 0.2 * co, 1e-15));
        assert!(close(c.ydot, 0.5 * co - 2.0 * 0.2 * s, 1e-15));
    }

    #[test]
    fn upright_rest_is_equilibrium() {
        let p = ModelParams::default();
        let s = PendulumState::new(0, 0.3, 0.0, 0.0, 0.0);
        assert_eq!(step_swing(&p, &s, 0.0, 1e-3).unwrap(), s);
    }

    #[test]
    fn small_angle_matches_cosh() {
        let p = ModelParams {
            gravity: 1.0,
            r_bounds: [0.5, 2.0],
            r2_bounds: [0.5, 2.0],
            ..Default::default()
        };
        let theta0 = 0.01;
        let mut s = PendulumState::new(0, 1.0, theta0, 0.0, 0.0);
        let dt = 1e-3;
        for _ in 0..100 {
            s = step_swing(&p, &s, 0.0, dt).unwrap();
        }
        assert!(close(s.theta1, theta0 * 0.1f64.cosh(), 1e-6));
    }

    #[test]
    fn energy_drift_per_step_is_tiny() {
        let p = ModelParams::default();
        let energy = |s: &PendulumState| {
            0.5 * p.mass * s.r1 * s.r1 * s.theta1dot * s.theta1dot
                + p.mass * p.gravity * s.r1 * s.theta1.cos()
        };
        let mut s = PendulumState::new(0, 0.3, 0.3, 0.0, 0.5);
        for _ in 0..1000 {
            let next = step_swing(&p, &s, 0.0, 1e-4).unwrap();
            let drift = (energy(&next) - energy(&s)).abs() / energy(&s);
            assert!(drift < 1e-8, "drift {drift}");
            s = next;
        }
    }

    #[test]
    fn rod_saturates_at_bounds() {
        let p = ModelParams::default();
        let s = PendulumState::new(0, p.r_bounds[1] - 1e-5, 0.1, 0.0, 0.5);
        let next = step_swing(&p, &s, 10.0, 1e-3).unwrap();
        assert_eq!(next.r1, p.r_bounds[1]);
        assert_eq!(next.r1dot, 0.0);
        let again = step_swing(&p, &next, 10.0, 1e-3).unwrap();
        assert_eq!(again.r1, p.r_bounds[1]);
    }

    #[test]
    fn degenerate_state_rejected() {
        let p = ModelParams::default();
        let s = PendulumState::new(0, 0.0, 0.1, 0.0, 0.5);
        assert!(matches!(
            step_swing(&p, &s, 0.0, 1e-3),
            Err(Error::DegenerateState { .. })
        ));
    }

    #[test]
    fn single_step_phase_at_rest() {
        let p = ModelParams::default();
        let s = PendulumState::new(0, 0.3, 0.0, 0.0, 0.0);
        let out = simulate_phase(&p, &s, p.integrator_dt, 0.0)
            .unwrap()
            .unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn long_phase_near_horizontal_fails() {
        let p = ModelParams::default();
        let s = PendulumState::new(0, 0.3, 1.4, 0.0, 5.0);
        let out = simulate_phase(&p, &s, 0.4, 0.0).unwrap();
        assert_eq!(out, Err(FailureKind::ComGroundStrike));
    }

    #[test]
    fn stopper_geometry_examples() {
        let p = ModelParams {
            r_bounds: [0.1, 2.0],
            r2_bounds: [0.1, 2.0],
            ..Default::default()
        };
        let up = PendulumState::new(0, 1.0, 0.0, 0.0, 0.0);
        let tip = stopper_geometry(&p, 0.0, &up, 0.0).unwrap();
        assert_eq!((tip.x2, tip.y2, tip.r2), (0.0, 0.0, 1.0));

        let tip = stopper_geometry(&p, 0.0, &up, FRAC_PI_4).unwrap();
        assert!(close(tip.x2, 1.0, 1e-15));
        assert!(close(tip.r2, 2f64.sqrt(), 1e-15));

        // COM at (0.5, 0.8)
        let r = (0.5f64 * 0.5 + 0.8 * 0.8).sqrt();
        let s = PendulumState::new(0, r, 0.5f64.atan2(0.8), 0.0, 0.0);
        let tip = stopper_geometry(&p, 0.0, &s, 0.3).unwrap();
        assert!(close(tip.x2, 0.5 + 0.8 * 0.3f64.tan(), 1e-14));
        assert!(close(tip.r2, 0.8 / 0.3f64.cos(), 1e-14));

        let short = ModelParams {
            r2_bounds: [0.1, 1.2],
            ..p
        };
        assert!(matches!(
            stopper_geometry(&short, 0.0, &up, FRAC_PI_4),
            Err(Error::InfeasibleStopper { .. })
        ));
    }

    #[test]
    fn impulse_examples() {
        let unit = ModelParams {
            mass: 1.0,
            inertia: 1.0,
            ..Default::default()
        };
        assert_eq!(impact_impulse(&unit, 0.0, 0.0, -2.0), 2.0);
        let heavy = ModelParams {
            mass: 2.0,
            inertia: 1.0,
            ..Default::default()
        };
        assert_eq!(impact_impulse(&heavy, 0.0, 1.0, -3.0), 2.0);
        assert_eq!(impact_impulse(&heavy, 0.3, 1.0, 0.0), 0.0);
        assert_eq!(impact_impulse(&heavy, 0.3, 1.0, 0.7), 0.0);
    }

    #[test]
    fn vertical_drop_onto_vertical_stopper() {
        let p = ModelParams::default();
        let s = PendulumState::new(0, 0.3, 0.0, -0.4, 0.0);
        let imp = resolve_impact(&p, 0.0, &s, 0.0, 1).unwrap();
        let ydot = com_kinematics(0.0, &s).ydot;
        assert!(close(imp.impulse, -p.mass * ydot, 1e-15));
        assert!(close(imp.next_state.theta1dot, 0.0, 1e-15));
        assert!(close(imp.next_state.r1dot, 0.0, 1e-15));
        assert_eq!(imp.next_state.contact, 1);
    }

    #[test]
    fn forward_stopper_puts_com_behind_pivot() {
        let p = ModelParams::default();
        let s = PendulumState::new(0, 0.25, 0.4, 0.0, 2.0);
        let imp = resolve_impact(&p, 0.0, &s, 0.5, 2).unwrap();
        assert_eq!(imp.next_state.theta1, -0.5);
        // The COM does not move at the impact.
        let before = com_kinematics(0.0, &s);
        let after = com_kinematics(imp.new_pivot_x, &imp.next_state);
        assert!(close(before.x, after.x, 1e-14) && close(before.y, after.y, 1e-14));
        // Post-impact COM velocity is reproduced by the re-anchored pendulum.
        assert!(close(after.xdot, imp.com_vel_post.0, 1e-13));
        assert!(close(after.ydot, imp.com_vel_post.1, 1e-13));
    }

    #[test]
    fn plastic_impact_zeroes_contact_velocity() {
        let p = ModelParams::default();
        let s = PendulumState::new(0, 0.3, 0.6, -0.2, 3.0);
        let imp = resolve_impact(&p, 0.0, &s, 0.4, 0).unwrap();
        assert!(imp.contact_ydot_pre < 0.0);
        let x1 = com_kinematics(0.0, &s).x;
        assert!(imp.contact_ydot_post(x1).abs() < 1e-12);
    }

    #[test]
    fn transition_reward_arithmetic() {
        assert_eq!(reward_from_impulse(0.0), 1.0);
        assert_eq!(reward_from_impulse(1.0), 0.5);
        assert_eq!(reward_from_impulse(0.25), 0.8);
    }

    #[test]
    fn halted_swing_ends_without_impact() {
        // Leaning back with too little speed to pass the vertical.
        let p = ModelParams::default();
        let s = PendulumState::new(2, 0.25, -0.5, 0.0, 0.5);
        let a = AbstractAction::new(0.6, 0.2, 0.0, 3);
        let pure = simulate_phase(&p, &s, 0.2, 0.0).unwrap().unwrap();
        assert!(pure.theta1dot < 0.0);
        let halted = simulate_swing(&p, &s, 0.2, 0.0).unwrap().unwrap();
        assert!(halted.theta1dot <= 0.0);
        assert!(halted.theta1 > pure.theta1);

        let out = transition(&p, &s, &a).unwrap();
        assert!(out.terminal && !out.is_failure());
        assert_eq!((out.impulse, out.reward, out.pivot_shift), (0.0, 1.0, 0.0));
        assert_eq!(out.next_state, Some(halted));
        assert_eq!(out.next_state.unwrap().contact, 2);
    }

    #[test]
    fn transition_rejects_bad_actions() {
        let mut p = ModelParams::with_contacts(2);
        p.contact_adjacency = vec![vec![false, true], vec![true, true]];
        let s = PendulumState::new(0, 0.25, 0.1, 0.0, 2.0);
        let a = AbstractAction::new(0.3, 0.3, 0.0, 0);
        assert!(matches!(
            transition(&p, &s, &a),
            Err(Error::DisallowedContact { .. })
        ));
        let a = AbstractAction::new(0.3, 5.0, 0.0, 1);
        assert!(matches!(
            transition(&p, &s, &a),
            Err(Error::ActionOutOfBounds(_))
        ));
    }

    #[test]
    fn transition_composes_sub_operations() {
        let p = ModelParams::default();
        let s = PendulumState::new(0, 0.25, 0.1, 0.0, 2.0);
        let a = AbstractAction::new(0.6, 0.2, 0.0, 3);
        let out = transition(&p, &s, &a).unwrap();

        let pre = simulate_phase(&p, &s, a.delta, a.r1dot_des)
            .unwrap()
            .unwrap();
        let tip = stopper_geometry(&p, 0.0, &pre, a.theta2).unwrap();
        let imp = resolve_impact(&p, 0.0, &pre, a.theta2, a.next_contact).unwrap();
        assert_eq!(out.next_state, Some(imp.next_state));
        assert_eq!(out.impulse, imp.impulse);
        assert_eq!(out.pivot_shift, tip.x2);
        assert_eq!(out.reward, 1.0 / (1.0 + imp.impulse));
        assert_eq!(out.terminal, imp.next_state.theta1dot <= 0.0);
    }

    #[test]
    fn failure_outcome_charges_penalty() {
        let p = ModelParams::default();
        let s = PendulumState::new(0, 0.3, 1.3, 0.0, 5.0);
        let out = transition(&p, &s, &AbstractAction::new(0.2, 0.4, 0.0, 0)).unwrap();
        assert_eq!(out.failure, Some(FailureKind::ComGroundStrike));
        assert_eq!(out.reward, 0.0);
        assert_eq!(out.impulse, p.fail_impulse);
        assert!(out.terminal && out.next_state.is_none());
    }

    #[test]
    fn phase_sweep_matches_individual_phases() {
        let p = ModelParams::default();
        let deltas = [0.05, 0.1, 0.12, 0.2, 0.2337, 0.4];
        for s in [
            PendulumState::new(0, 0.25, 0.1, 0.0, 1.5),
            PendulumState::new(0, 0.3, 1.2, 0.0, 4.0),
            PendulumState::new(0, 0.2, -0.4, 0.1, 0.8),
        ] {
            for rd in [-0.5, 0.0, 0.3] {
                let sweep = simulate_phase_sweep(&p, &s, rd, &deltas).unwrap();
                for (k, &d) in deltas.iter().enumerate() {
                    assert_eq!(sweep[k], simulate_swing(&p, &s, d, rd).unwrap());
                }
            }
        }
    }

    #[test]
    fn default_params_validate() {
        ModelParams::default().validate().unwrap();
        let mut p = ModelParams::default();
        p.contact_adjacency[3] = vec![false; 8];
        assert!(p.validate().is_err());
        let p = ModelParams {
            theta2_bounds: [0.0, 1.6],
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }
}
