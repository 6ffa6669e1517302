mod common;

use fallmdp::model::{
    reward_from_impulse, simulate_phase_with_dt, simulate_swing, transition, AbstractAction,
    ModelParams, PendulumState,
};
use proptest::prelude::*;

#[test]
fn frozen_rod_conserves_energy() {
    let model = ModelParams::default();
    for s in [
        PendulumState::new(0, 0.3, 0.05, 0.0, 0.0),
        PendulumState::new(0, 0.2, -0.3, 0.0, 2.0),
        PendulumState::new(0, 0.45, 0.6, 0.0, -1.0),
    ] {
        let drift = common::frozen_rod_drift(&model, &s, 1e-4, 1.0);
        assert!(drift < 1e-6, "drift {drift:e} from {s:?}");
    }
}

#[test]
fn rk4_converges_at_fourth_order() {
    let (slope, pts) = common::rk4_order_slope(&ModelParams::default());
    assert!(
        (3.5..=4.5).contains(&slope),
        "slope {slope}, points {pts:?}"
    );
}

#[test]
fn phase_refinement_converges() {
    let model = ModelParams::default();
    let s = PendulumState::new(0, 0.27, 0.1, 0.0, 1.2);
    let at = |dt| {
        simulate_phase_with_dt(&model, &s, 0.3, -0.2, dt)
            .unwrap()
            .unwrap()
    };
    let (coarse, fine, finest) = (at(2e-3), at(1e-3), at(5e-4));
    let e1 = (coarse.theta1 - finest.theta1).abs();
    let e2 = (fine.theta1 - finest.theta1).abs();
    assert!(e2 < e1 && e2 < 1e-9, "{e1:e} {e2:e}");
}

#[test]
fn plastic_impacts_stop_the_contact_point() {
    let audit = common::plastic_impact_audit(&ModelParams::default(), 2000, 11);
    assert_eq!(audit.impacts, 2000);
    assert!(
        audit.max_post_velocity < 1e-9,
        "{:e}",
        audit.max_post_velocity
    );
    assert!(
        audit.max_impulse_rel_err < 1e-12,
        "{:e}",
        audit.max_impulse_rel_err
    );
}

fn model() -> ModelParams {
    ModelParams::with_contacts(3)
}

prop_compose! {
    fn state()(c in 0usize..3, r in 0.1..0.45f64, th in -0.5..0.6f64, rd in -0.4..0.05f64, w in 0.05..4.0f64)
        -> PendulumState {
        PendulumState::new(c, r, th, rd, w)
    }
}

prop_compose! {
    fn action()(t2 in 0.0..1.2f64, d in 0.2..0.4f64, rd in -0.5..0.1f64, c in 0usize..3) -> AbstractAction {
        AbstractAction::new(t2, d, rd, c)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn transition_outcomes_are_consistent(s in state(), a in action()) {
        let m = model();
        let out = transition(&m, &s, &a).unwrap();
        prop_assert!(out.impulse >= 0.0);
        prop_assert!((0.0..=1.0).contains(&out.reward));
        match out.failure {
            Some(_) => {
                prop_assert_eq!(out.reward, 0.0);
                prop_assert!(out.terminal && out.next_state.is_none());
                prop_assert_eq!(out.impulse, m.fail_impulse);
            }
            None => {
                prop_assert_eq!(out.reward, reward_from_impulse(out.impulse));
                let next = out.next_state.unwrap();
                prop_assert!(next.is_valid(&m));
                prop_assert_eq!(out.terminal, next.theta1dot <= 0.0);
                if out.impulse == 0.0 {
                    prop_assert_eq!(next.contact, s.contact);
                } else {
                    prop_assert_eq!(next.contact, a.next_contact);
                    prop_assert_eq!(next.theta1, -a.theta2);
                }
            }
        }
    }

    #[test]
    fn halted_swing_never_overruns(s in state(), d in 0.2..0.4f64, rd in -0.5..0.1f64) {
        let m = model();
        if let Ok(end) = simulate_swing(&m, &s, d, rd).unwrap() {
            prop_assert!(end.r1 >= m.r_bounds[0] && end.r1 <= m.r_bounds[1]);
            prop_assert!(end.theta1.cos() > 0.0);
        }
    }

    #[test]
    fn transition_is_deterministic(s in state(), a in action()) {
        let m = model();
        prop_assert_eq!(transition(&m, &s, &a).unwrap(), transition(&m, &s, &a).unwrap());
    }
}
