//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::{Duration, Instant};

use fallmdp::dp::{grid_values, DiscretizationSpec};
use fallmdp::model::{
    com_kinematics, resolve_impact, step_swing, transition, AbstractAction, ModelParams,
    PendulumState,
};
use fallmdp::net::{MaceParameters, NetworkTopology, NormalizationSpec, Subnet};
use fallmdp::trainer::boltzmann_select;

/// Energy per unit mass of the inverted pendulum with a fixed rod.
pub fn frozen_energy(g: f64, s: &PendulumState) -> f64 {
    0.5 * s.r1 * s.r1 * s.theta1dot * s.theta1dot + g * s.r1 * s.theta1.cos()
}

/// Largest relative energy deviation over `t_end` seconds with the rod frozen.
pub fn frozen_rod_drift(model: &ModelParams, s0: &PendulumState, dt: f64, t_end: f64) -> f64 {
    let e0 = frozen_energy(model.gravity, s0);
    let mut s = *s0;
    let mut worst: f64 = 0.0;
    for _ in 0..(t_end / dt).round() as usize {
        s = step_swing(model, &s, 0.0, dt).unwrap();
        worst = worst.max(((frozen_energy(model.gravity, &s) - e0) / e0).abs());
    }
    worst
}

fn integrate(
    model: &ModelParams,
    s0: &PendulumState,
    rdot: f64,
    dt: f64,
    t_end: f64,
) -> PendulumState {
    let mut s = *s0;
    for _ in 0..(t_end / dt).round() as usize {
        s = step_swing(model, &s, rdot, dt).unwrap();
    }
    s
}

/// Least-squares slope of log(error) against log(dt) for a swing with a moving rod.
pub fn rk4_order_slope(model: &ModelParams) -> (f64, Vec<(f64, f64)>) {
    let s0 = PendulumState::new(0, 0.3, 0.2, -0.2, 1.0);
    let (rdot, t_end) = (-0.2, 0.2);
    let reference = integrate(model, &s0, rdot, 1e-4, t_end);
    let pts: Vec<(f64, f64)> = [2e-2, 1e-2, 5e-3, 2.5e-3]
        .iter()
        .map(|&dt| {
            let s = integrate(model, &s0, rdot, dt, t_end);
            let err =
                (s.theta1 - reference.theta1).abs() + (s.theta1dot - reference.theta1dot).abs();
            (dt, err)
        })
        .collect();
    let n = pts.len() as f64;
    let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    (num / den, pts)
}

pub struct ImpactAudit {
    pub impacts: usize,
    pub max_post_velocity: f64,
    pub max_impulse_rel_err: f64,
    pub elapsed: Duration,
}

/// Random compressive impacts. The post-impact contact velocity is rebuilt
/// from the returned successor state and a hand-computed impulse.
pub fn plastic_impact_audit(model: &ModelParams, n: usize, seed: u64) -> ImpactAudit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = Instant::now();
    let mut audit = ImpactAudit {
        impacts: 0,
        max_post_velocity: 0.0,
        max_impulse_rel_err: 0.0,
        elapsed: Duration::ZERO,
    };
    while audit.impacts < n {
        let s = PendulumState::new(
            0,
            rng.random_range(model.r_bounds[0]..model.r_bounds[1]),
            rng.random_range(-1.2..1.2),
            rng.random_range(model.rdot_bounds[0]..model.rdot_bounds[1]),
            rng.random_range(0.01..5.0),
        );
        let theta2 = rng.random_range(model.theta2_bounds[0]..model.theta2_bounds[1]);
        let pivot = rng.random_range(-1.0..1.0);
        let Ok(imp) = resolve_impact(model, pivot, &s, theta2, 1) else {
            continue;
        };

        let com = com_kinematics(pivot, &s);
        let x2 = com.x + com.y * theta2.tan();
        let dx = x2 - com.x;
        let omega_pre = -s.theta1dot;
        let tip_ydot_pre = com.ydot + omega_pre * dx;
        if tip_ydot_pre >= 0.0 {
            continue;
        }
        let j = -tip_ydot_pre / (1.0 / model.mass + dx * dx / model.inertia);
        let omega_post = omega_pre + j * dx / model.inertia;
        let com_post = com_kinematics(x2, &imp.next_state);
        let tip_ydot_post = com_post.ydot + omega_post * dx;

        audit.impacts += 1;
        audit.max_post_velocity = audit.max_post_velocity.max(tip_ydot_post.abs());
        audit.max_impulse_rel_err = audit.max_impulse_rel_err.max((imp.impulse - j).abs() / j);
    }
    audit.elapsed = start.elapsed();
    audit
}

/// Exhaustive max-min enumeration over the grid, no memo and no pruning.
pub fn brute_force_value(
    model: &ModelParams,
    spec: &DiscretizationSpec,
    s: &PendulumState,
    depth: usize,
) -> f64 {
    if s.theta1dot <= 0.0 {
        return 1.0;
    }
    if depth >= spec.max_depth {
        return 0.0;
    }
    let mut best = 0.0_f64;
    for &theta2 in &grid_values(model.theta2_bounds, spec.n_theta2) {
        for &delta in &grid_values(model.delta_bounds, spec.n_delta) {
            for &rdot in &grid_values(model.rdot_bounds, spec.n_rdot) {
                for c2 in 0..model.n_contacts {
                    if !model.contact_adjacency[s.contact][c2] {
                        continue;
                    }
                    let a = AbstractAction::new(theta2, delta, rdot, c2);
                    let Ok(out) = transition(model, s, &a) else {
                        continue;
                    };
                    if out.failure.is_some() {
                        continue;
                    }
                    let v = match out.next_state {
                        Some(next) if !out.terminal => {
                            out.reward
                                .min(brute_force_value(model, spec, &next, depth + 1))
                        }
                        _ => out.reward,
                    };
                    best = best.max(v);
                }
            }
        }
    }
    best
}

pub struct ToyInstance {
    pub model: ModelParams,
    pub spec: DiscretizationSpec,
    pub state: PendulumState,
}

/// Small randomized DP problems: grids of at most 3 per axis, depth at most 2,
/// and quantization far below any state difference.
pub fn toy_instances(n: usize, seed: u64) -> Vec<ToyInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let k = rng.random_range(2..=3);
            let mut model = ModelParams::with_contacts(k);
            model.integrator_dt = 2e-3;
            for i in 0..k {
                for j in 0..k {
                    model.contact_adjacency[i][j] = i == j || rng.random_bool(0.7);
                }
            }
            let spec = DiscretizationSpec {
                n_theta2: rng.random_range(1..=3),
                n_delta: rng.random_range(1..=3),
                n_rdot: rng.random_range(1..=3),
                state_quant: [1e-13; 4],
                max_depth: rng.random_range(1..=2),
            };
            let state = PendulumState::new(
                rng.random_range(0..k),
                rng.random_range(0.2..0.35),
                rng.random_range(0.0..0.4),
                rng.random_range(-0.2..0.05),
                rng.random_range(0.5..2.5),
            );
            ToyInstance { model, spec, state }
        })
        .collect()
}

pub fn subnets(t: &NetworkTopology) -> Vec<Subnet> {
    let mut out = vec![Subnet::CriticShared];
    out.extend((0..t.n_pairs).map(Subnet::CriticHead));
    out.extend((0..t.n_pairs).map(Subnet::Actor));
    out
}

fn critic_loss(p: &MaceParameters, i: usize, x: &[f64], y: f64) -> f64 {
    let v = p.forward_critic(i, x);
    0.5 * (y - v) * (y - v)
}

type Loss<'a> = Box<dyn Fn(&MaceParameters) -> f64 + 'a>;

fn actor_loss(p: &MaceParameters, i: usize, x: &[f64], t: &[f64; 3]) -> f64 {
    let out = p.forward_actor(i, x);
    0.5 * out
        .iter()
        .zip(t)
        .map(|(o, t)| (t - o) * (t - o))
        .sum::<f64>()
}

/// Relative error with a denominator floor at the round-off level of the
/// central difference.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub struct GradientReport {
    pub subnet: Subnet,
    pub worst_rel_err: f64,
    /// Coordinates whose gradient magnitude fell below the denominator floor.
    pub floored: usize,
}

/// Worst relative error between backprop and central differences over
/// `per_subnet` random coordinates of each subnet.
pub fn gradient_check(
    topology: &NetworkTopology,
    per_subnet: usize,
    h: f64,
    seed: u64,
) -> Vec<GradientReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = MaceParameters::init(topology, seed);
    for v in params.values_mut() {
        *v += rng.random_range(-0.05..0.05);
    }
    let model = ModelParams::with_contacts(topology.n_pairs);
    let norm = NormalizationSpec::from_model(&model);
    let s = PendulumState::new(rng.random_range(0..topology.n_pairs), 0.27, 0.3, -0.1, 2.0);
    let x_owned = norm.encode_state(&s);
    let x = x_owned.as_slice();
    let y = 0.7;
    let target = [0.3, -0.5, 0.8];

    subnets(topology)
        .into_iter()
        .map(|sub| {
            let (loss, grad): (Loss, Vec<f64>) = match sub {
                Subnet::CriticShared => (
                    Box::new(|p| critic_loss(p, 0, x, y)),
                    params.critic_gradient(0, x, y),
                ),
                Subnet::CriticHead(i) => (
                    Box::new(move |p| critic_loss(p, i, x, y)),
                    params.critic_gradient(i, x, y),
                ),
                Subnet::Actor(i) => (
                    Box::new(move |p| actor_loss(p, i, x, &target)),
                    params.actor_gradient(i, x, &target),
                ),
            };
            let range = params.layout().subnet_range(sub);
            let mut worst: f64 = 0.0;
            let mut floored = 0;
            let mut probe = params.clone();
            for _ in 0..per_subnet {
                let k = rng.random_range(range.clone());
                let orig = probe.values()[k];
                probe.values_mut()[k] = orig + h;
                let up = loss(&probe);
                probe.values_mut()[k] = orig - h;
                let down = loss(&probe);
                probe.values_mut()[k] = orig;
                let numeric = (up - down) / (2.0 * h);
                if grad[k].abs().max(numeric.abs()) < 1e-6 {
                    floored += 1;
                }
                worst = worst.max(rel_err(grad[k], numeric));
            }
            GradientReport {
                subnet: sub,
                worst_rel_err: worst,
                floored,
            }
        })
        .collect()
}

/// Count of index 0 over `n` draws from the Boltzmann selector.
pub fn boltzmann_counts(values: &[f64], temperature: f64, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0; values.len()];
    for _ in 0..n {
        counts[boltzmann_select(values, temperature, &mut rng)] += 1;
    }
    counts
}

/// Mean wall time of `f` over `reps` calls.
pub fn mean_time(reps: usize, mut f: impl FnMut()) -> Duration {
    let t = Instant::now();
    for _ in 0..reps {
        f();
    }
    t.elapsed() / reps as u32
}
