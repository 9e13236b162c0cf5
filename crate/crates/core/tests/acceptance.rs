//! Acceptance run. One PASS/FAIL line per criterion; exits nonzero if any fails.
//!
//! The end-to-end criteria train at desk scale (two surrogate-screened runs and
//! one unscreened run), so this target takes several minutes.

mod support;

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use chrono::NaiveDate;
use essdispatch::assets::{net_injections, power_bounds, EssState, EssUnit, GridCase, ProfileSet};
use essdispatch::dispatch::{exact_screen, formulate, safe_dispatch, Backend, DEFAULT_TIGHTENING};
use essdispatch::env::{synth_dataset, DispatchEnv, EnvConfig, StepResult};
use essdispatch::grid::{AcpfSolver, Branch, InjectionVector, NetworkModel, VoltageLimits};
use essdispatch::guard::{evaluate_guard, featurize, random_samples, GuardConfig, GuardModel, GuardSample, HighRiskSet};
use essdispatch::harness::{
    evaluate_metrics, run_method, with_improvements, EpisodeLog, EvalReport, Method, RunConfig, RunContext, RunMode, Trainer, TrainOutput,
};
use essdispatch::nn::{Activation, MlpParams};
use essdispatch::sac::{actor_loss, critic_loss};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

// pinned tolerances
const FLAT_EXACT: f64 = 0.0;
const TWO_BUS_TARGET: f64 = 0.9848;
const TWO_BUS_TOL: f64 = 1e-4;
const SWEEP_TOL: f64 = 1e-6;
const SOLVE_BUDGET_S: f64 = 0.050;
const ESS_STEPS: usize = 10_000;
const BOUND_TOL_KW: f64 = 0.01;
const FD_TOL: f64 = 1e-4;
const GUARD_RMSE: f64 = 1e-2;
const GUARD_SPEEDUP: f64 = 10.0;
const ORACLE_REL: f64 = 0.02;
const STRESS_STATES: usize = 1000;
const GAP_TOL: f64 = 1e-6;
const MIN_SAVINGS_PCT: f64 = 5.0;
const TRAIN_BUDGET_S: f64 = 15.0 * 60.0;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn rel_err(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().max(b.abs())
    }
}

fn power_flow() -> Verdict {
    let case = GridCase::ieee33();
    let net = case.network();
    let flat = case.solver.solve(&InjectionVector::zeros(net.bus_count())).unwrap();
    let flat_err = flat.magnitudes().iter().map(|v| (v - net.v_slack()).abs()).fold(0.0, f64::max);

    let two = NetworkModel::new(2, 0, vec![Branch { from: 0, to: 1, r: 0.05, x: 0.05 }], 1000.0, 12.66, VoltageLimits::default()).unwrap();
    let mut inj2 = InjectionVector::zeros(2);
    inj2.p[1] = 0.2;
    inj2.q[1] = 0.1;
    let v2 = AcpfSolver::new(two).solve(&inj2).unwrap().magnitude(1);
    let fixed = support::sweep::two_bus_fixed_point(1.0, 0.05, 0.05, 0.2, 0.1);

    let prof = ProfileSet::constant(&case, 1, 1.0, 0.0, 0.0, 0.0);
    let inj = net_injections(&case, &prof, &[0.0; 4], 0).unwrap();
    let mags = case.solver.solve(&inj).unwrap().magnitudes();
    let sweep = support::sweep_magnitudes(net, &inj);
    let sweep_err = mags.iter().zip(&sweep).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let argmin = mags.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0 + 1;

    let runs = 200;
    let t0 = Instant::now();
    for _ in 0..runs {
        std::hint::black_box(case.solver.solve(std::hint::black_box(&inj)).unwrap());
    }
    let per_solve = t0.elapsed().as_secs_f64() / runs as f64;

    let pass = flat_err == FLAT_EXACT
        && flat.converged
        && (v2 - fixed).abs() < TWO_BUS_TOL
        && (fixed - TWO_BUS_TARGET).abs() < TWO_BUS_TOL
        && sweep_err < SWEEP_TOL
        && argmin == 18
        && per_solve < SOLVE_BUDGET_S;
    verdict(
        pass,
        format!(
            "flat err {flat_err:e}; |V2| {v2:.6} vs oracle {fixed:.6}; 33-bus sweep err {sweep_err:.1e}, min at bus {argmin}; {:.3} ms/solve",
            per_solve * 1e3
        ),
    )
}

fn ess_invariants() -> Verdict {
    let case = GridCase::ieee33();
    let profiles = synth_dataset(&case, 11, 30).unwrap();
    let cfg = EnvConfig {
        episode_len: 168,
        ..EnvConfig::default()
    };
    let mut env = DispatchEnv::new(case.clone().into(), profiles.into(), HighRiskSet::ieee33(), cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (mut lo, mut hi) = (f64::MAX, f64::MIN);
    let mut steps = 0;
    while steps < ESS_STEPS {
        let start = rng.random_range(0..env.profiles().hours() - 168);
        env.reset(start, rng.random_range(0.1..=0.9)).unwrap();
        while !env.is_done() && steps < ESS_STEPS {
            // beyond the admissible range so clipping is exercised at both ends
            let res = if steps % 2 == 0 {
                let a: Vec<f64> = (0..env.action_dim()).map(|_| rng.random_range(-1.5..1.5)).collect();
                env.step(&a).unwrap()
            } else {
                let kw: Vec<f64> = case.devices.ess.iter().map(|u| rng.random_range(-1.5..1.5) * u.p_max).collect();
                env.step_kw(&kw, false).unwrap()
            };
            for &s in &res.soe {
                lo = lo.min(s);
                hi = hi.max(s);
            }
            steps += 1;
        }
    }
    let unit = EssUnit {
        name: "ess".into(),
        bus: 1,
        p_max: 200.0,
        e_capacity: 600.0,
        eta_ch: 0.95,
        eta_dis: 0.95,
        soe_min: 0.1,
        soe_max: 0.9,
    };
    let b = power_bounds(&unit, EssState { soe: 0.88 });
    // discharge limited by rating, charge by the 2% headroom: 0.02 * 600 / 0.95
    let (want_lo, want_hi) = (-200.0, 0.02 * 600.0 / 0.95);
    let pass = lo >= 0.1 && hi <= 0.9 && (b.lower - want_lo).abs() < BOUND_TOL_KW && (b.upper - want_hi).abs() < BOUND_TOL_KW;
    verdict(
        pass,
        format!("{steps} steps, SoE range [{lo:.6}, {hi:.6}]; bounds at SoE 0.88 ({:.3}, {:.3}) kW", b.lower, b.upper),
    )
}

fn random_net(rng: &mut ChaCha8Rng, sizes: &[usize]) -> MlpParams<f64> {
    let mut acts = vec![Activation::Relu; sizes.len() - 2];
    acts.push(Activation::Identity);
    let n = MlpParams::init(sizes, &acts, 1.0, rng).unwrap();
    with_biases(n, rng)
}

fn with_biases(mut n: MlpParams<f64>, rng: &mut ChaCha8Rng) -> MlpParams<f64> {
    // nonzero biases so no unit sits exactly at a kink
    for p in n.params_mut() {
        if *p == 0.0 {
            *p = rng.random_range(-0.1..0.1);
        }
    }
    n
}

/// Worst relative error between `grad` and central differences of `f` over every parameter.
fn fd_worst(net: &MlpParams<f64>, grad: &[f64], h: f64, f: impl Fn(&MlpParams<f64>) -> f64) -> f64 {
    (0..net.param_count())
        .map(|i| {
            let mut p = net.clone();
            p.params_mut()[i] += h;
            let mut m = net.clone();
            m.params_mut()[i] -= h;
            rel_err(grad[i], (f(&p) - f(&m)) / (2.0 * h))
        })
        .fold(0.0, f64::max)
}

fn gradients() -> Verdict {
    let case = GridCase::ieee33();
    let (mut guard, mut critic, mut actor) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..4u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let cfg = GuardConfig {
            hidden: 8,
            ..GuardConfig::default()
        };
        let mut m = GuardModel::new(&case, HighRiskSet::ieee33(), &cfg, &mut rng).unwrap();
        m.net = with_biases(m.net.clone(), &mut rng);
        let samples: Vec<GuardSample> = (0..5)
            .map(|_| GuardSample {
                features: (0..66).map(|_| rng.random_range(-0.2..0.2)).collect(),
                labels: (0..12).map(|_| rng.random_range(0.9..1.0)).collect(),
            })
            .collect();
        let idx: Vec<usize> = (0..samples.len()).collect();
        let (_, g, _) = m.loss_and_grad(&samples, &idx).unwrap();
        // loss near 0.1 with entries down to 1e-9: smaller steps drown in rounding
        guard = guard.max(fd_worst(&m.net, &g, 1e-4, |n| {
            let mut p = m.clone();
            p.net = n.clone();
            p.loss_and_grad(&samples, &idx).unwrap().0
        }));

        let (obs, act, b) = (5, 3, 6);
        let q = random_net(&mut rng, &[obs + act, 12, 12, 1]);
        let x: Vec<f64> = (0..(obs + act) * b).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..b).map(|_| rng.random_range(-2.0..2.0)).collect();
        let w: Vec<f64> = (0..b).map(|_| rng.random_range(0.2..1.0)).collect();
        let (_, g, _) = critic_loss(&q, &x, &y, &w).unwrap();
        critic = critic.max(fd_worst(&q, &g, 1e-5, |n| critic_loss(n, &x, &y, &w).unwrap().0));

        let pi = random_net(&mut rng, &[obs, 10, 10, 2 * act]);
        let q1 = random_net(&mut rng, &[obs + act, 10, 10, 1]);
        let q2 = random_net(&mut rng, &[obs + act, 10, 10, 1]);
        let s: Vec<f64> = (0..obs * b).map(|_| rng.random_range(-1.0..1.0)).collect();
        let eps: Vec<f64> = (0..act * b).map(|_| rng.sample(StandardNormal)).collect();
        let (_, g, _) = actor_loss(&pi, &q1, &q2, &s, &eps, 0.2).unwrap();
        actor = actor.max(fd_worst(&pi, &g, 1e-5, |n| actor_loss(n, &q1, &q2, &s, &eps, 0.2).unwrap().0));
    }
    verdict(
        guard < FD_TOL && critic < FD_TOL && actor < FD_TOL,
        format!("max relative error: surrogate {guard:.1e}, critic {critic:.1e}, actor {actor:.1e}"),
    )
}

fn guard_quality(run: &TrainOutput, ctx: &RunContext) -> Verdict {
    let Some(model) = &run.guard else {
        return verdict(false, "the surrogate never reached readiness".into());
    };
    let (case, profiles) = (&*ctx.case, &*ctx.profiles);
    let mut rng = ChaCha8Rng::seed_from_u64(0x6865_6c64);
    let held = random_samples(case, profiles, &model.risk, 2000, 0.3, &mut rng).unwrap();
    let rows = evaluate_guard(model, &held).unwrap();
    let rmse = (rows.iter().map(|r| r.rmse * r.rmse).sum::<f64>() / rows.len() as f64).sqrt();

    let calls = 2000;
    let states: Vec<(usize, Vec<f64>)> = (0..calls)
        .map(|_| {
            let t = rng.random_range(0..profiles.hours());
            let kw = case.devices.ess.iter().map(|u| rng.random_range(-u.p_max..u.p_max)).collect();
            (t, kw)
        })
        .collect();
    let limits = case.network().limits();
    let t0 = Instant::now();
    for (t, kw) in &states {
        let f = featurize(case, profiles, kw, *t).unwrap();
        std::hint::black_box(model.predict_and_assess(&f, &limits).unwrap());
    }
    let guard_s = t0.elapsed().as_secs_f64() / calls as f64;
    let t0 = Instant::now();
    for (t, kw) in &states {
        std::hint::black_box(exact_screen(case, profiles, &model.risk, *t, kw).unwrap());
    }
    let exact_s = t0.elapsed().as_secs_f64() / calls as f64;
    let speedup = exact_s / guard_s;
    verdict(
        rmse < GUARD_RMSE && speedup >= GUARD_SPEEDUP,
        format!(
            "held-out RMSE {rmse:.2e} p.u. on {} states; {:.1} us vs {:.1} us per call ({speedup:.1}x)",
            held.len(),
            guard_s * 1e6,
            exact_s * 1e6
        ),
    )
}

fn fallback() -> Verdict {
    // (load per bus, grid price, node price, SoE)
    let feeders = [
        (150.0, 0.30, 0.05, 0.5),
        (200.0, 0.25, 0.25, 0.5),
        (200.0, 0.05, -0.20, 0.5),
        (250.0, 0.10, -0.30, 0.5),
        (100.0, 0.02, 0.01, 0.2),
        (120.0, 0.40, -0.10, 0.85),
    ];
    let mut worst_rel = 0.0f64;
    let mut worst_gap = 0.0f64;
    for &(load, cr, ce, soe) in &feeders {
        let (case, p) = support::toy(load, cr, ce, soe);
        let (oracle, _) = support::grid_oracle(&case, &p).expect("a feasible grid point");
        let s = safe_dispatch(&case, &p, Backend::Conic).unwrap();
        worst_rel = worst_rel.max(if s.verified { rel_err(s.objective, oracle) } else { f64::INFINITY });
        worst_gap = worst_gap.max(s.relaxation_gap);
    }
    let case = GridCase::ieee33();
    let risk = HighRiskSet::ieee33();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (mut verified, mut unsafe_verified) = (0, 0);
    for i in 0..STRESS_STATES {
        let load = rng.random_range(0.2..0.75);
        let mut prof = ProfileSet::constant(&case, 1, load, rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.01..0.4));
        prof.price_node = vec![rng.random_range(0.01..0.4)];
        let states: Vec<EssState> = (0..4).map(|_| EssState { soe: rng.random_range(0.1..=0.9) }).collect();
        let p = formulate(&case, &prof, &states, 0, 1.0, DEFAULT_TIGHTENING).unwrap();
        let backend = if i % 10 == 0 { Backend::Search } else { Backend::Conic };
        let s = safe_dispatch(&case, &p, backend).unwrap();
        if s.verified {
            verified += 1;
            let inside = p.bounds.iter().zip(&s.ess_kw).all(|(b, &kw)| b.contains(kw));
            if !inside || !exact_screen(&case, &prof, &risk, 0, &s.ess_kw).unwrap().is_safe() {
                unsafe_verified += 1;
            }
            if backend == Backend::Conic && s.relaxation_gap.is_finite() {
                worst_gap = worst_gap.max(s.relaxation_gap);
            }
        }
    }
    verdict(
        worst_rel < ORACLE_REL && unsafe_verified == 0 && worst_gap < GAP_TOL,
        format!(
            "worst gap to grid oracle {:.3}%; {verified}/{STRESS_STATES} verified, {unsafe_verified} unsafe; worst relaxation gap {worst_gap:.1e}",
            worst_rel * 100.0
        ),
    )
}

fn thirds(run: &TrainOutput) -> [usize; 3] {
    let n = run.records.len();
    let mut out = [0; 3];
    for (i, r) in run.records.iter().enumerate() {
        out[i * 3 / n] += r.unsafe_proposals;
    }
    out
}

fn evaluation(cfg: &RunConfig, trainer: &Trainer) -> Vec<EvalReport> {
    let ctx = trainer.context();
    let reports = [Method::Uncontrolled, Method::PerfectForesight, Method::Sa2co, Method::SacPlain]
        .into_iter()
        .map(|m| {
            let r = run_method(cfg, ctx, m).unwrap();
            evaluate_metrics(m.name(), &r.logs, &ctx.risk, r.training_seconds).unwrap()
        })
        .collect();
    with_improvements(reports)
}

fn end_to_end(sa2co: &TrainOutput, plain: &TrainOutput, reports: &[EvalReport]) -> Verdict {
    let ready = sa2co.ready_episode;
    let after: usize = match ready {
        Some(e) => sa2co.records.iter().filter(|r| r.episode > e).map(|r| r.executed_violations).sum(),
        None => usize::MAX,
    };
    let plain_thirds = thirds(plain);
    let cost = |name: &str| reports.iter().find(|r| r.method == name).unwrap();
    let (unc, pf, sa) = (cost("uncontrolled"), cost("perfect_foresight"), cost("sa2co"));
    let savings = sa.improvement_pct.unwrap();
    let pass = after == 0
        && sa.executed_violations == 0
        && plain_thirds.iter().all(|&c| c > 0)
        && pf.avg_daily_cost <= sa.avg_daily_cost
        && sa.avg_daily_cost <= unc.avg_daily_cost
        && savings >= MIN_SAVINGS_PCT
        && sa2co.seconds <= TRAIN_BUDGET_S;
    verdict(
        pass,
        format!(
            "ready after episode {}; violations after readiness {}, on {} test days {}; unscreened unsafe proposals by training third {:?}; \
             cost/day PF {:.1} <= SA2CO {:.1} <= uncontrolled {:.1}, savings {savings:.2}%; training {:.1} min",
            ready.map_or("-".into(), |e| e.to_string()),
            if after == usize::MAX { "n/a".into() } else { after.to_string() },
            sa.days,
            sa.executed_violations,
            plain_thirds,
            pf.avg_daily_cost,
            sa.avg_daily_cost,
            unc.avg_daily_cost,
            sa2co.seconds / 60.0
        ),
    )
}

fn flat_log(daily_cost: f64, risk: &HighRiskSet) -> EpisodeLog {
    let t0 = NaiveDate::from_ymd_opt(2019, 12, 19).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let steps = (0..24)
        .map(|h| StepResult {
            next_obs: Vec::new(),
            reward: 0.0,
            step_cost: if h == 0 { daily_cost } else { 0.0 },
            violations: 0,
            violations_all: 0,
            executed_action_kw: Vec::new(),
            done: h == 23,
            used_fallback: false,
            converged: true,
            p_r_kw: 0.0,
            soe: Vec::new(),
            hour: h,
            timestamp: t0 + chrono::Duration::hours(h as i64),
            risk_voltages: vec![1.0; risk.len()],
        })
        .collect();
    EpisodeLog {
        start: 0,
        steps,
        decision_secs: vec![0.0; 24],
        unsafe_proposals: 0,
        fallbacks: 0,
        solutions: Vec::new(),
    }
}

fn metric_arithmetic() -> Verdict {
    let risk = HighRiskSet::ieee33();
    // published daily costs: uncontrolled, perfect foresight, surrogate-screened
    let rows = [("uncontrolled", 1926.176), ("perfect_foresight", 1400.341), ("sa2co", 1659.604)];
    let reports = with_improvements(
        rows.iter()
            .map(|&(m, c)| evaluate_metrics(m, &[flat_log(c, &risk)], &risk, None).unwrap())
            .collect(),
    );
    let shown: Vec<String> = reports.iter().map(|r| format!("{:.2}", r.improvement_pct.unwrap())).collect();
    verdict(shown == ["0.00", "27.30", "13.84"], format!("improvements {}", shown.join(", ")))
}

fn same_bytes(a: &Path, b: &Path) -> bool {
    ["trajectory.csv", "solutions.csv"].iter().all(|f| match (fs::read(a.join(f)), fs::read(b.join(f))) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    })
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().unwrap();
    let desk = |leg: &str| RunConfig {
        out_dir: tmp.path().join(leg),
        ..RunConfig::desk()
    };
    let total = Instant::now();
    let mut results: Vec<(&str, Verdict)> = vec![
        ("power flow", power_flow()),
        ("storage invariants", ess_invariants()),
        ("gradient fidelity", gradients()),
    ];

    let cfg = desk("a");
    let trainer = Trainer::new(cfg.clone(), RunMode::Sa2co).unwrap();
    let sa2co = trainer.run().unwrap();
    let plain = Trainer::new(cfg.clone(), RunMode::PlainSac).unwrap().run().unwrap();
    let reports = evaluation(&cfg, &trainer);
    for r in &reports {
        eprintln!(
            "  {:<18} {:>9.3} /day  {:>6.2}%  violations {}  unsafe {}  fallbacks {}",
            r.method,
            r.avg_daily_cost,
            r.improvement_pct.unwrap_or(f64::NAN),
            r.executed_violations,
            r.unsafe_proposals,
            r.fallbacks
        );
    }

    results.push(("surrogate quality", guard_quality(&sa2co, trainer.context())));
    results.push(("fallback optimality and safety", fallback()));
    results.push(("end-to-end safety and cost", end_to_end(&sa2co, &plain, &reports)));
    results.push(("metric arithmetic", metric_arithmetic()));

    let again = desk("b");
    let repeat = Trainer::new(again, RunMode::Sa2co).unwrap().run().unwrap();
    results.push((
        "determinism",
        verdict(
            same_bytes(&sa2co.dir, &repeat.dir),
            format!("training trajectory and solution logs of two seeded runs compared byte for byte ({} vs {} episodes)", sa2co.records.len(), repeat.records.len()),
        ),
    ));

    let mut failed = 0;
    for (i, (name, v)) in results.iter().enumerate() {
        println!("{} {}. {name}: {}", if v.pass { "PASS" } else { "FAIL" }, i + 1, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("{} of {} criteria pass ({:.1} min)", results.len() - failed, results.len(), total.elapsed().as_secs_f64() / 60.0);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
