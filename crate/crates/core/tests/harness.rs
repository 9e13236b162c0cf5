use std::path::Path;
use std::sync::Arc;

use essdispatch::env::write_trajectory;
use essdispatch::harness::{
    evaluate_metrics, execute_episode, eval_env, run_method, Controller, DataSource, Method, Policy, RunConfig,
    RunContext, RunMode, Screen, Trainer, CHECKPOINT_FILE, RESUME_FILE,
};
use essdispatch::guard::{GuardConfig, GuardModel};
use essdispatch::sac::{SacAgent, SacConfig};
use essdispatch::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small(out: &Path, episodes: usize, hours: usize) -> RunConfig {
    RunConfig {
        seed: 5,
        episodes,
        episode_hours: hours,
        out_dir: out.to_path_buf(),
        data: DataSource {
            synth_days: 8,
            ..DataSource::default()
        },
        sac: SacConfig {
            hidden: 16,
            batch_size: 8,
            warmup_steps: 6,
            ..SacConfig::default()
        },
        guard: GuardConfig {
            hidden: 16,
            min_samples: 100,
            window: 20,
            threshold: 1.0,
            consolidation_epochs: 2,
            perturbations: 2,
            ..GuardConfig::default()
        },
        ..RunConfig::default()
    }
}

fn lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn smoke_run_writes_checkpoint_and_two_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = Trainer::new(small(dir.path(), 1, 2), RunMode::Sa2co).unwrap().run().unwrap();
    assert_eq!(out.records.len(), 1);
    let d = dir.path().join("sa2co");
    assert_eq!(lines(&d.join("trajectory.csv")), 3);
    assert_eq!(lines(&d.join("training_curve.csv")), 2);
    assert!(d.join(CHECKPOINT_FILE).is_file() && d.join(RESUME_FILE).is_file());
    let header = std::fs::read_to_string(d.join("training_curve.csv")).unwrap();
    assert!(header.starts_with("episode,cum_reward,mean_q_loss,mean_pi_loss,unsafe_proposals\n"));
}

#[test]
fn always_unsafe_stub_routes_every_step_through_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let out = Trainer::new(small(dir.path(), 2, 6), RunMode::Sa2co).unwrap().with_stub(false).run().unwrap();
    let text = std::fs::read_to_string(dir.path().join("sa2co/trajectory.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.ends_with(",1")), "{text}");
    assert_eq!(out.records.iter().map(|r| r.fallbacks).sum::<usize>(), 12);
    assert_eq!(lines(&dir.path().join("sa2co/solutions.csv")), 13);
}

#[test]
fn identical_runs_are_byte_identical_and_resume_matches() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let full = Trainer::new(small(a.path(), 4, 12), RunMode::Sa2co).unwrap().run().unwrap();
    Trainer::new(small(b.path(), 4, 12), RunMode::Sa2co).unwrap().run().unwrap();
    let read = |p: &Path, f: &str| std::fs::read(p.join("sa2co").join(f)).unwrap();
    for f in ["trajectory.csv", "training_curve.csv", "solutions.csv"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }
    // interrupted after two episodes, then resumed
    let c = tempfile::tempdir().unwrap();
    Trainer::new(small(c.path(), 4, 12), RunMode::Sa2co).unwrap().stop_after(2).run().unwrap();
    let resumed = Trainer::new(small(c.path(), 4, 12), RunMode::Sa2co)
        .unwrap()
        .resume(&c.path().join("sa2co").join(RESUME_FILE))
        .unwrap();
    for f in ["trajectory.csv", "training_curve.csv", "solutions.csv"] {
        let (x, y) = (String::from_utf8(read(a.path(), f)).unwrap(), String::from_utf8(read(c.path(), f)).unwrap());
        if let Some((i, (l, r))) = x.lines().zip(y.lines()).enumerate().find(|(_, (l, r))| l != r) {
            panic!("{f} line {i}:\n{l}\n{r}");
        }
        assert_eq!(x.lines().count(), y.lines().count(), "{f}");
    }
    assert_eq!(full.agent.actor, resumed.agent.actor);
    assert_eq!(full.ready_episode, resumed.ready_episode);
}

#[test]
fn resume_refuses_a_different_run() {
    let dir = tempfile::tempdir().unwrap();
    Trainer::new(small(dir.path(), 1, 2), RunMode::PlainSac).unwrap().run().unwrap();
    let other = RunConfig {
        seed: 6,
        ..small(dir.path(), 2, 2)
    };
    let r = Trainer::new(other, RunMode::PlainSac).unwrap().resume(&dir.path().join("sac_plain").join(RESUME_FILE));
    assert!(matches!(r, Err(Error::Config(_))));
}

fn frozen_guard(ctx: &RunContext) -> GuardModel {
    let mut g = GuardModel::new(&ctx.case, ctx.risk.clone(), &GuardConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    g.mark_ready();
    g
}

#[test]
fn execution_stubs_and_refusal() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), 1, 24);
    let ctx = RunContext::build(&cfg).unwrap();
    let mut env = eval_env(&cfg, &ctx).unwrap();
    let agent = SacAgent::new(env.obs_dim(), env.action_dim(), cfg.sac.clone(), 1).unwrap();
    let day = ctx.eval_days(&cfg).unwrap()[0];
    let run = |env: &mut _, screen| {
        execute_episode(env, Controller::Agent { agent: &agent, screen }, day, 0.1, cfg.backend, cfg.tightening)
    };
    let safe = run(&mut env, Screen::Fixed(true)).unwrap();
    assert_eq!(safe.fallbacks, 0);
    let unsafe_ = run(&mut env, Screen::Fixed(false)).unwrap();
    assert_eq!(unsafe_.fallbacks, 24);
    assert!(unsafe_.steps.iter().all(|s| s.used_fallback));
    assert!(unsafe_.decision_secs.iter().sum::<f64>() / 24.0 < 1.0);
    let mut unready = frozen_guard(&ctx);
    unready = GuardModel::from_parts(unready.net.clone(), unready.risk.clone(), unready.feature_scale.clone(), unready.margin).unwrap();
    assert!(matches!(run(&mut env, Screen::Guard(&unready)), Err(Error::NotReady(_))));
    let ready = frozen_guard(&ctx);
    let screened = run(&mut env, Screen::Guard(&ready)).unwrap();
    assert_eq!(screened.steps.len(), 24);
}

#[test]
fn uncontrolled_on_zero_prices_costs_nothing_and_missing_checkpoints_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), 1, 24);
    let mut ctx = RunContext::build(&cfg).unwrap();
    ctx.profiles = Arc::new((*ctx.profiles).clone().with_flat_price(0.0));
    let run = run_method(&cfg, &ctx, Method::Uncontrolled).unwrap();
    let rep = evaluate_metrics("uncontrolled", &run.logs, &ctx.risk, None).unwrap();
    assert_eq!(rep.avg_daily_cost, 0.0);
    assert_eq!(rep.executed_violations, 0);
    for m in [Method::Sa2co, Method::SacPlain, Method::AcpfSac] {
        assert!(matches!(run_method(&cfg, &ctx, m), Err(Error::Config(_))), "{m}");
    }
    assert!(matches!(Policy::load_mode(&cfg, RunMode::Sa2co), Err(Error::Config(_))));
}

#[test]
fn daily_cost_equals_summed_step_costs_and_foresight_is_cheapest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), 1, 24);
    let ctx = RunContext::build(&cfg).unwrap();
    let un = run_method(&cfg, &ctx, Method::Uncontrolled).unwrap();
    let pf = run_method(&cfg, &ctx, Method::PerfectForesight).unwrap();
    let ru = evaluate_metrics("uncontrolled", &un.logs, &ctx.risk, None).unwrap();
    let rp = evaluate_metrics("perfect_foresight", &pf.logs, &ctx.risk, None).unwrap();
    let summed: f64 = un.logs.iter().flat_map(|l| &l.steps).map(|s| s.step_cost).sum();
    assert!((ru.avg_daily_cost * ru.days as f64 - summed).abs() < 1e-9);
    assert!(rp.avg_daily_cost < ru.avg_daily_cost);
    assert_eq!(rp.executed_violations, 0);
    let mut buf = Vec::new();
    write_trajectory(&pf.logs[0].steps, ctx.case.ess_count(), &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 25);
}
