use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use savflow::harness::{
    reference_solution, run_simulation, InitialCondition, RunConfig, ScheduleSpec,
};
use savflow::integrator::{
    first_order_step, newton_xi, newton_xi_with, solve_phi1_phi2, solve_phi1_phi2_with, vbdf2_step,
    NewtonPolicy, RatioPolicy, StepOptions, StepState,
};
use savflow::model::{e1, g_prime};
use savflow::spectral::{apply_laplacian, l2_norm};
use savflow::{Error, Field, Flow, Grid, SchemeParams, VKind};

fn random_field(grid: &Arc<Grid>, seed: u64, amp: f64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..grid.len()).map(|_| rng.gen_range(-amp..amp)).collect();
    Field::new(grid.clone(), values).unwrap()
}

fn mean_free(f: &Field) -> Field {
    f.map(|v| v - f.mean())
}

fn params(flow: Flow, sigma: f64) -> SchemeParams {
    SchemeParams::new(0.01, 1.0, 40.0, sigma, VKind::Linear, flow).unwrap()
}

fn run_config(flow: Flow, schedule: ScheduleSpec, t_end: f64, seed: u64) -> RunConfig {
    RunConfig::new(
        params(flow, 1.0),
        Grid::square_2pi(16).unwrap(),
        InitialCondition::SeededRandom {
            lo: -0.3,
            hi: 0.3,
            seed,
        },
        schedule,
        t_end,
    )
}

/// `(α − σG_H L)u` with `L = −ε²Δ + λ`, applied in physical space.
fn apply_operator(u: &Field, alpha: f64, p: &SchemeParams) -> Field {
    let lu = u.axpby(p.lambda(), &apply_laplacian(u), -p.eps2()).unwrap();
    let g_lu = match p.flow() {
        Flow::L2 => lu.scaled(-1.0),
        Flow::Hminus1 => apply_laplacian(&lu),
    };
    u.axpby(alpha, &g_lu, -p.sigma()).unwrap()
}

#[test]
fn split_solves_back_substitute() {
    let grid = Grid::square_2pi(32).unwrap();
    for (flow, sigma) in [(Flow::L2, 1.0), (Flow::Hminus1, 1.0), (Flow::Hminus1, 0.75)] {
        let p = params(flow, sigma);
        for seed in 0..10 {
            let h = random_field(&grid, seed, 1.0);
            let gp = random_field(&grid, 100 + seed, 1.0);
            let (gamma, dt) = (0.3 + 0.4 * seed as f64, 1e-3 * (1.0 + seed as f64));
            let (phi1, phi2) = solve_phi1_phi2(&h, &gp, gamma, dt, &p).unwrap();
            let alpha = (1.0 + 2.0 * sigma * gamma) / ((1.0 + gamma) * dt);

            let res1 = apply_operator(&phi1, alpha, &p)
                .axpby(1.0, &h, -1.0)
                .unwrap();
            let target2 = match flow {
                Flow::L2 => gp.scaled(-1.0),
                Flow::Hminus1 => apply_laplacian(&gp),
            };
            let res2 = apply_operator(&phi2, alpha, &p)
                .axpby(1.0, &target2, -1.0)
                .unwrap();
            assert!(
                l2_norm(&res1) <= 1e-10 * l2_norm(&h),
                "{flow:?} seed {seed}"
            );
            assert!(
                l2_norm(&res2) <= 1e-10 * l2_norm(&target2),
                "{flow:?} seed {seed}"
            );
        }
    }
}

#[test]
fn parallel_solves_match_serial() {
    let grid = Grid::square_2pi(32).unwrap();
    let p = params(Flow::Hminus1, 1.0);
    let h = random_field(&grid, 1, 1.0);
    let gp = random_field(&grid, 2, 1.0);
    let serial = solve_phi1_phi2_with(&h, &gp, 1.7, 1e-3, &p, false).unwrap();
    let parallel = solve_phi1_phi2_with(&h, &gp, 1.7, 1e-3, &p, true).unwrap();
    assert_eq!(serial.0.values(), parallel.0.values());
    assert_eq!(serial.1.values(), parallel.1.values());

    let mut cfg = run_config(Flow::Hminus1, ScheduleSpec::Uniform { steps: 20 }, 0.02, 4);
    let a = run_simulation(&cfg).unwrap();
    cfg.step.parallel_solves = true;
    let b = run_simulation(&cfg).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.final_state.phi_n.values(), b.final_state.phi_n.values());
}

#[test]
fn one_newton_step_matches_closed_form() {
    let grid = Grid::square_2pi(16).unwrap();
    let p = params(Flow::L2, 1.0);
    for seed in 0..20 {
        let phi_n = random_field(&grid, seed, 0.8);
        let phi1 = phi_n
            .axpby(1.0, &random_field(&grid, 50 + seed, 0.01), 1.0)
            .unwrap();
        let phi2 = random_field(&grid, 90 + seed, 0.01);
        let gp = g_prime(&phi_n, &p);
        let e1_n = e1(&phi_n, &p).unwrap();
        let s = e1_n.sqrt();
        let r_n = s * (1.0 + 1e-3 * (seed as f64 - 10.0));

        let b = gp.inner(&phi1.axpby(1.0, &phi_n, -1.0).unwrap()).unwrap();
        let c = gp.inner(&phi2).unwrap();
        let w1 = s - r_n - (b + c) / (2.0 * s);
        let dw1 = s + (b + c) / (2.0 * s);
        let expected = 1.0 - w1 / dw1;

        let (xi, _) = newton_xi(&phi1, &phi2, &phi_n, &gp, r_n, e1_n, &p, 1).unwrap();
        assert!(
            (xi - expected).abs() <= 1e-14,
            "seed {seed}: {xi} vs {expected}"
        );

        let (_, residual) = newton_xi_with(
            &phi1,
            &phi2,
            &phi_n,
            &gp,
            r_n,
            e1_n,
            &p,
            NewtonPolicy::converged(),
        )
        .unwrap();
        assert!(residual <= 1e-12);
    }
}

#[test]
fn initial_modified_energy_is_energy_plus_shift() {
    for flow in [Flow::L2, Flow::Hminus1] {
        let cfg = run_config(flow, ScheduleSpec::Uniform { steps: 2 }, 2e-3, 8);
        let out = run_simulation(&cfg).unwrap();
        let d = out.initial;
        assert!((d.modified_energy - (d.energy + 40.0)).abs() <= 1e-12 * d.modified_energy);
        assert_eq!(d.discrete_energy_h, d.modified_energy);
    }
}

#[test]
fn runs_are_deterministic() {
    let cfg = run_config(
        Flow::Hminus1,
        ScheduleSpec::Perturbed {
            steps: 30,
            amplitude: 0.4,
            seed: 3,
        },
        0.03,
        5,
    );
    let a = run_simulation(&cfg).unwrap();
    let b = run_simulation(&cfg).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.final_state.phi_n.values(), b.final_state.phi_n.values());
}

#[test]
fn stationary_state_stays_put() {
    let grid = Grid::square_2pi(16).unwrap();
    let p = params(Flow::L2, 1.0);
    let mut state = StepState::initial(Field::constant(grid, 1.0), &p).unwrap();
    state = first_order_step(&state, 1e-2, &p).unwrap().0;
    for _ in 0..10 {
        let (next, rec) = vbdf2_step(&state, 1e-2, &p, &StepOptions::default()).unwrap();
        assert!((rec.xi - 1.0).abs() <= 1e-13);
        assert!(next.phi_n.values().iter().all(|v| (v - 1.0).abs() <= 1e-13));
        state = next;
    }
}

#[test]
fn step_errors_are_reported() {
    let grid = Grid::square_2pi(8).unwrap();
    let p = params(Flow::L2, 1.0);
    let state = StepState::initial(random_field(&grid, 1, 0.3), &p).unwrap();
    assert!(matches!(
        vbdf2_step(&state, 1e-3, &p, &StepOptions::default()),
        Err(Error::InvalidParameter(_))
    ));

    let state = first_order_step(&state, 1e-3, &p).unwrap().0;
    let strict = StepOptions {
        ratio_policy: RatioPolicy::Error,
        ..StepOptions::default()
    };
    assert!(matches!(
        vbdf2_step(&state, 6e-3, &p, &strict),
        Err(Error::RatioViolation { step: 2, .. })
    ));
    assert!(vbdf2_step(&state, 6e-3, &p, &StepOptions::default()).is_ok());

    let negative = p.clone().with_c0(-1e3).unwrap();
    assert!(matches!(
        StepState::initial(random_field(&grid, 1, 0.3), &negative),
        Err(Error::EnergyShiftTooSmall { .. })
    ));
}

#[test]
fn reference_converges_at_second_order() {
    let cfg = RunConfig::new(
        SchemeParams::new(0.01, 1.0, 20.0, 1.0, VKind::Linear, Flow::L2).unwrap(),
        Grid::square_2pi(32).unwrap(),
        InitialCondition::SinProduct,
        ScheduleSpec::Uniform { steps: 1 },
        0.5,
    );
    let fields: Vec<Field> = [4e-4, 2e-4, 1e-4]
        .iter()
        .map(|&dt| reference_solution(&cfg, dt).unwrap())
        .collect();
    let d1 = fields[0].axpby(1.0, &fields[1], -1.0).unwrap().max_abs();
    let d2 = fields[1].axpby(1.0, &fields[2], -1.0).unwrap().max_abs();
    let ratio = d1 / d2;
    assert!((3.0..=5.0).contains(&ratio), "Richardson ratio {ratio}");
}

#[test]
fn h2_seminorm_stays_bounded() {
    let cfg = RunConfig::new(
        SchemeParams::new(0.01, 1.0, 40.0, 1.0, VKind::Linear, Flow::Hminus1).unwrap(),
        Grid::square_2pi(32).unwrap(),
        InitialCondition::SeededRandom {
            lo: -0.05,
            hi: 0.05,
            seed: 2024,
        },
        ScheduleSpec::FixedStep { dt: 1e-2 },
        5.0,
    );
    let out = run_simulation(&cfg).unwrap();
    let at_one = out
        .records
        .iter()
        .find(|r| r.t_np1 >= 1.0 - 1e-12)
        .unwrap()
        .h2_seminorm;
    let later = out
        .records
        .iter()
        .filter(|r| r.t_np1 >= 1.0)
        .map(|r| r.h2_seminorm)
        .fold(0.0, f64::max);
    assert!(later <= 10.0 * at_one, "{later} vs {at_one}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn discrete_energy_never_increases(
        ratios in proptest::collection::vec(0.2f64..4.8, 24),
        seed in 0u64..1000,
        hminus1 in any::<bool>(),
        sigma in prop_oneof![Just(1.0), Just(0.75)],
    ) {
        let mut times = vec![0.0, 1e-3];
        let mut dt = 1e-3;
        for r in &ratios {
            dt = (dt * r).clamp(1e-5, 5e-2);
            times.push(times.last().unwrap() + dt);
        }
        let t_end = *times.last().unwrap();
        let flow = if hminus1 { Flow::Hminus1 } else { Flow::L2 };
        let mut cfg = run_config(flow, ScheduleSpec::Explicit { times }, t_end, seed);
        cfg.params = params(flow, sigma);
        cfg.step.newton = NewtonPolicy::converged();
        let out = run_simulation(&cfg).unwrap();

        let mut prev = out.initial.discrete_energy_h;
        for rec in &out.records {
            prop_assert!(
                rec.discrete_energy_h <= prev + 1e-10 * prev.abs(),
                "step {}: {} > {}", rec.step, rec.discrete_energy_h, prev
            );
            prev = rec.discrete_energy_h;
        }
        if hminus1 {
            prop_assert!(out.max_mass_drift <= 1e-12);
        }
    }

    #[test]
    fn solves_preserve_zero_mean(seed in 0u64..1000, gamma in 0.2f64..4.8) {
        let grid = Grid::square_2pi(16).unwrap();
        let p = params(Flow::Hminus1, 1.0);
        let h = mean_free(&random_field(&grid, seed, 1.0));
        let gp = random_field(&grid, seed + 1, 1.0);
        let (phi1, phi2) = solve_phi1_phi2(&h, &gp, gamma, 1e-3, &p).unwrap();
        prop_assert!(phi1.mean().abs() <= 1e-14);
        prop_assert!(phi2.mean().abs() <= 1e-14);
    }
}
