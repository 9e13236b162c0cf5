//! `essdispatch`: train, execute and evaluate screened storage dispatch.

use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use essdispatch::dispatch::Backend;
use essdispatch::env::{synth_rows, write_factor_rows, SynthOptions};
use essdispatch::grid::InjectionVector;
use essdispatch::harness::{
    evaluate_metrics, run_method, with_improvements, write_logs, write_metrics, write_unsafe_counts,
    write_voltage_distribution, EvalReport, Method, RunConfig, RunContext, RunMode, Trainer,
};

#[derive(Parser)]
#[command(name = "essdispatch", version, about = "Screened soft actor-critic storage dispatch")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; without it the desk preset is used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the configuration).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Training episodes E.
    #[arg(long, global = true)]
    episodes: Option<usize>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Conic,
    Search,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Sa2co,
    SacPlain,
    AcpfSac,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    Uncontrolled,
    PerfectForesight,
    SacPlain,
    AcpfSac,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a policy; writes checkpoints and training logs under <out>/<mode>/.
    Train {
        #[arg(long, value_enum, default_value = "sa2co")]
        mode: ModeArg,
        /// Continue from a resume file.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run the trained sa2co policy over the evaluation days.
    Execute,
    /// Run one baseline over the evaluation days.
    Baseline {
        #[arg(value_enum)]
        kind: BaselineArg,
    },
    /// Run every available method and write the comparison.
    Evaluate,
    /// One power-flow solve for a state file (`bus,p_kw,q_kvar` demand per bus, 1-based).
    Powerflow {
        state: PathBuf,
    },
    /// Write a synthetic factor file.
    Synth {
        #[arg(long, default_value_t = 120)]
        days: usize,
        /// Destination CSV (stdout when absent).
        #[arg(long)]
        file: Option<PathBuf>,
    },
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => RunConfig::desk(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    if let Some(e) = c.episodes {
        cfg.episodes = e;
    }
    if let Some(b) = c.backend {
        cfg.backend = match b {
            BackendArg::Conic => Backend::Conic,
            BackendArg::Search => Backend::Search,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn evaluate(cfg: &RunConfig, ctx: &RunContext, methods: &[Method], dir: &Path) -> Result<Vec<EvalReport>> {
    let mut reports = Vec::new();
    for &m in methods {
        let run = run_method(cfg, ctx, m).with_context(|| format!("running {m}"))?;
        write_logs(&run.logs, ctx.case.ess_count(), &dir.join(m.name()))?;
        let r = evaluate_metrics(m.name(), &run.logs, &ctx.risk, run.training_seconds)?;
        println!(
            "{:<18} {:>10.3} £/day  violations {:>4}  unsafe proposals {:>4}  fallbacks {:>4}  {:.4} s/decision",
            r.method, r.avg_daily_cost, r.executed_violations, r.unsafe_proposals, r.fallbacks, r.mean_decision_secs
        );
        reports.push(r);
    }
    let reports = with_improvements(reports);
    let create = |name: &str| {
        let p = dir.join(name);
        File::create(&p).with_context(|| format!("creating {}", p.display()))
    };
    write_metrics(&reports, create("metrics.csv")?)?;
    write_voltage_distribution(&reports, create("voltage_distribution.csv")?)?;
    write_unsafe_counts(&reports, create("unsafe_counts.csv")?)?;
    Ok(reports)
}

fn powerflow(cfg: &RunConfig, state: &Path) -> Result<()> {
    let ctx = RunContext::build(cfg)?;
    let net = ctx.case.network();
    let s = net.s_base_kva();
    let mut inj = InjectionVector::zeros(net.bus_count());
    let mut rd = csv::Reader::from_path(state).with_context(|| format!("reading {}", state.display()))?;
    for (row, rec) in rd.records().enumerate() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|v| v.trim().parse().ok())
                .with_context(|| format!("row {}: bad column {}", row + 2, i + 1))
        };
        let bus = parse(0)? as usize;
        if bus == 0 || bus > net.bus_count() {
            bail!("row {}: bus {bus} outside 1..={}", row + 2, net.bus_count());
        }
        inj.p[bus - 1] = -parse(1)? / s;
        inj.q[bus - 1] = -parse(2)? / s;
    }
    let sol = ctx.case.solver.solve(&inj)?;
    if !sol.converged {
        bail!("power flow did not converge (residual {:e})", sol.max_residual);
    }
    println!("bus,vm_pu,va_deg");
    for i in 0..net.bus_count() {
        println!("{},{:.6},{:.4}", i + 1, sol.magnitude(i), sol.v_im[i].atan2(sol.v_re[i]).to_degrees());
    }
    eprintln!("grid draw {:.3} kW, losses {:.3} kW", sol.slack_p * s, sol.losses(net) * s);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Synth { days, file } => {
            let seed = cli.common.seed.unwrap_or(11);
            let rows = synth_rows(seed, days, &SynthOptions::default());
            match file {
                Some(p) => write_factor_rows(&rows, File::create(&p).with_context(|| format!("creating {}", p.display()))?)?,
                None => write_factor_rows(&rows, std::io::stdout().lock())?,
            }
        }
        Cmd::Powerflow { state } => powerflow(&load_config(&cli.common)?, &state)?,
        Cmd::Train { mode, resume } => {
            let cfg = load_config(&cli.common)?;
            let modes: &[RunMode] = match mode {
                ModeArg::Sa2co => &[RunMode::Sa2co],
                ModeArg::SacPlain => &[RunMode::PlainSac],
                ModeArg::AcpfSac => &[RunMode::AcpfSac],
                ModeArg::All => &RunMode::ALL,
            };
            if resume.is_some() && modes.len() > 1 {
                bail!("--resume needs a single mode");
            }
            let ctx = RunContext::build(&cfg)?;
            for &m in modes {
                let trainer = Trainer::with_context(cfg.clone(), m, ctx.clone());
                let out = match &resume {
                    Some(p) => trainer.resume(p)?,
                    None => trainer.run()?,
                };
                println!(
                    "{m}: {} episodes in {:.1} min, surrogate frozen after episode {}; outputs in {}",
                    out.records.len(),
                    out.seconds / 60.0,
                    out.ready_episode.map_or("-".into(), |e| e.to_string()),
                    out.dir.display()
                );
            }
        }
        Cmd::Execute => {
            let cfg = load_config(&cli.common)?;
            let ctx = RunContext::build(&cfg)?;
            let dir = cfg.out_dir.join("eval");
            std::fs::create_dir_all(&dir)?;
            evaluate(&cfg, &ctx, &[Method::Sa2co], &dir)?;
        }
        Cmd::Baseline { kind } => {
            let cfg = load_config(&cli.common)?;
            let ctx = RunContext::build(&cfg)?;
            let m = match kind {
                BaselineArg::Uncontrolled => Method::Uncontrolled,
                BaselineArg::PerfectForesight => Method::PerfectForesight,
                BaselineArg::SacPlain => Method::SacPlain,
                BaselineArg::AcpfSac => Method::AcpfSac,
            };
            let dir = cfg.out_dir.join("eval");
            std::fs::create_dir_all(&dir)?;
            evaluate(&cfg, &ctx, &[m], &dir)?;
        }
        Cmd::Evaluate => {
            let cfg = load_config(&cli.common)?;
            let ctx = RunContext::build(&cfg)?;
            let dir = cfg.out_dir.join("eval");
            std::fs::create_dir_all(&dir)?;
            let available: Vec<Method> = Method::ALL
                .into_iter()
                .filter(|m| m.mode().is_none_or(|mode| cfg.out_dir.join(mode.name()).join(essdispatch::harness::CHECKPOINT_FILE).is_file()))
                .collect();
            let reports = evaluate(&cfg, &ctx, &available, &dir)?;
            for r in &reports {
                if let Some(i) = r.improvement_pct {
                    println!("{:<18} improvement {i:.2}%", r.method);
                }
            }
        }
    }
    Ok(())
}
