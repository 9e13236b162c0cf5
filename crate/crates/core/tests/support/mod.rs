#![allow(dead_code)]

pub mod sweep;

use essdispatch::grid::{InjectionVector, NetworkModel};

/// Branch list `(from, to, r, x)` of a network, for the sweep oracle.
pub fn branch_tuples(net: &NetworkModel<f64>) -> Vec<(usize, usize, f64, f64)> {
    net.branches().iter().map(|b| (b.from, b.to, b.r, b.x)).collect()
}

pub fn sweep_magnitudes(net: &NetworkModel<f64>, inj: &InjectionVector<f64>) -> Vec<f64> {
    sweep::sweep_voltages(
        net.bus_count(),
        net.slack_bus(),
        net.v_slack(),
        &branch_tuples(net),
        &inj.p,
        &inj.q,
    )
    .into_iter()
    .map(|(e, f)| e.hypot(f))
    .collect()
}

use essdispatch::assets::{BusLoads, DeviceSet, EssState, EssUnit, GridCase, ProfileSet};
use essdispatch::dispatch::{evaluate, formulate, SafeDispatchProblem, DEFAULT_TIGHTENING};
use essdispatch::grid::{Branch, VoltageLimits};

/// Chain feeder of `n` buses with one storage unit at the far end and equal loads elsewhere.
pub fn chain_case(n: usize, r: f64, x: f64, load_kw: f64, p_max: f64) -> GridCase {
    let branches = (0..n - 1)
        .map(|k| Branch {
            from: k,
            to: k + 1,
            r,
            x,
        })
        .collect();
    let net = NetworkModel::new(n, 0, branches, 1000.0, 12.66, VoltageLimits::new(0.95, 1.05).unwrap()).unwrap();
    let mut p_kw = vec![load_kw; n];
    p_kw[0] = 0.0;
    let q_kvar: Vec<f64> = p_kw.iter().map(|p| 0.5 * p).collect();
    let devices = DeviceSet {
        ess: vec![EssUnit {
            name: "ess1".into(),
            bus: n - 1,
            p_max,
            e_capacity: 4.0 * p_max,
            eta_ch: 0.95,
            eta_dis: 0.95,
            soe_min: 0.1,
            soe_max: 0.9,
        }],
        pv: Vec::new(),
        wt: Vec::new(),
    };
    GridCase::new(net, devices, BusLoads { p_kw, q_kvar }).unwrap()
}

/// Best exact-power-flow cost over a 1 kW grid of the single storage unit.
pub fn grid_oracle(case: &GridCase, p: &SafeDispatchProblem) -> Option<(f64, f64)> {
    let b = p.bounds[0];
    let lim = p.limits;
    let mut best: Option<(f64, f64)> = None;
    let mut kw = b.lower.ceil();
    while kw <= b.upper {
        let (sol, p_r) = evaluate(case, p, &[kw], None).unwrap();
        if sol.converged && sol.magnitudes().iter().all(|&v| v >= lim.lower && v <= lim.upper) {
            let c = p.cost(p_r, &[kw]);
            if best.is_none_or(|(bc, _)| c < bc) {
                best = Some((c, kw));
            }
        }
        kw += 1.0;
    }
    best
}

pub fn toy(load_kw: f64, price_grid: f64, price_node: f64, soe: f64) -> (GridCase, SafeDispatchProblem) {
    let case = chain_case(6, 0.01, 0.008, load_kw, 300.0);
    let mut prof = ProfileSet::constant(&case, 1, 1.0, 0.0, 0.0, price_grid);
    prof.price_node = vec![price_node];
    let p = formulate(&case, &prof, &[EssState { soe }], 0, 1.0, DEFAULT_TIGHTENING).unwrap();
    (case, p)
}
