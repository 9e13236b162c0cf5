mod support;

use essdispatch::assets::{net_injections, GridCase, ProfileSet};
use essdispatch::grid::{
    violation_report, AcpfSolver, Branch, InjectionVector, NetworkModel, VoltageLimits,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn base_case() -> (GridCase, InjectionVector<f64>) {
    let case = GridCase::ieee33();
    let prof = ProfileSet::constant(&case, 1, 1.0, 0.0, 0.0, 0.0);
    let inj = net_injections(&case, &prof, &[0.0; 4], 0).unwrap();
    (case, inj)
}

/// Random tree: bus k attaches to a uniformly chosen earlier bus.
fn random_feeder(rng: &mut ChaCha8Rng, n: usize) -> (NetworkModel<f64>, InjectionVector<f64>) {
    let branches = (1..n)
        .map(|k| Branch {
            from: rng.random_range(0..k),
            to: k,
            r: rng.random_range(0.001..0.02),
            x: rng.random_range(0.001..0.02),
        })
        .collect();
    let net = NetworkModel::new(n, 0, branches, 1000.0, 12.66, VoltageLimits::default()).unwrap();
    let mut inj = InjectionVector::zeros(n);
    for i in 1..n {
        inj.p[i] = rng.random_range(0.0..0.5) / n as f64 * 4.0;
        inj.q[i] = rng.random_range(0.0..0.3) / n as f64 * 4.0;
    }
    (net, inj)
}

#[test]
fn two_bus_against_fixed_point_oracle() {
    let net = NetworkModel::new(
        2,
        0,
        vec![Branch { from: 0, to: 1, r: 0.05, x: 0.05 }],
        1000.0,
        12.66,
        VoltageLimits::default(),
    )
    .unwrap();
    let mut inj = InjectionVector::zeros(2);
    inj.p[1] = 0.2;
    inj.q[1] = 0.1;
    let sol = AcpfSolver::new(net).solve(&inj).unwrap();
    let oracle = support::sweep::two_bus_fixed_point(1.0, 0.05, 0.05, 0.2, 0.1);
    assert!((sol.magnitude(1) - oracle).abs() < 1e-10);
    assert!((oracle - 0.9848).abs() < 1e-4, "oracle {oracle}");
}

#[test]
fn ieee33_base_case_matches_sweep() {
    let (case, inj) = base_case();
    let sol = case.solver.solve(&inj).unwrap();
    assert!(sol.converged && sol.max_residual < 1e-8);
    let mags = sol.magnitudes();
    let oracle = support::sweep_magnitudes(case.network(), &inj);
    for (a, b) in mags.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-6);
    }
    let (argmin, vmin) = mags
        .iter()
        .enumerate()
        .fold((0, f64::MAX), |m, (i, &v)| if v < m.1 { (i, v) } else { m });
    assert_eq!(argmin + 1, 18);
    assert!((vmin - 0.9131).abs() < 5e-4, "vmin {vmin}");
    // the textbook case loses about 203 kW
    let losses = sol.losses(case.network()) * 1000.0;
    assert!((losses - 202.7).abs() < 1.0, "losses {losses}");
    let v = violation_report(&sol, &case.network().limits()).unwrap();
    assert!(v.iter().any(|x| x.bus == 17));
}

#[test]
fn slack_power_conserves_energy() {
    let (case, inj) = base_case();
    let sol = case.solver.solve(&inj).unwrap();
    let consumption: f64 = inj.p.iter().skip(1).sum();
    let losses = sol.losses(case.network());
    assert!((sol.slack_p - consumption - losses).abs() < 1e-6);
}

#[test]
fn warm_start_agrees_with_flat_start() {
    let (case, inj) = base_case();
    let a = case.solver.solve(&inj).unwrap();
    let mut inj2 = inj.clone();
    inj2.p[10] += 0.05;
    let b = case.solver.solve_warm(&inj2, &a).unwrap();
    let c = case.solver.solve(&inj2).unwrap();
    assert!(b.iterations <= c.iterations);
    for (x, y) in b.magnitudes().iter().zip(c.magnitudes()) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn residual_below_tolerance_on_random_feeders() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let n = rng.random_range(2..=33);
        let (net, inj) = random_feeder(&mut rng, n);
        let sol = AcpfSolver::new(net).solve(&inj).unwrap();
        assert!(sol.converged);
        assert!(sol.max_residual < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn newton_agrees_with_sweep(seed in any::<u64>(), n in 2usize..=33) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (net, inj) = random_feeder(&mut rng, n);
        let sol = AcpfSolver::new(net.clone()).solve(&inj).unwrap();
        prop_assert!(sol.converged);
        let oracle = support::sweep_magnitudes(&net, &inj);
        for (a, b) in sol.magnitudes().iter().zip(&oracle) {
            prop_assert!((a - b).abs() < 1e-6);
        }
        let consumption: f64 = inj.p.iter().skip(1).sum();
        prop_assert!((sol.slack_p - consumption - sol.losses(&net)).abs() < 1e-6);
    }

    #[test]
    fn more_load_never_raises_own_voltage(seed in any::<u64>(), bump in 0.001f64..0.2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (net, inj) = random_feeder(&mut rng, 12);
        let solver = AcpfSolver::new(net);
        let bus = rng.random_range(1..12);
        let before = solver.solve(&inj).unwrap().magnitude(bus);
        let mut more = inj.clone();
        more.p[bus] += bump;
        let after = solver.solve(&more).unwrap().magnitude(bus);
        prop_assert!(after <= before + 1e-12);
    }
}
