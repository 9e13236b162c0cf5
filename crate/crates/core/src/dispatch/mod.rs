//! Single-period fallback dispatch: a DistFlow cone relaxation or an
//! exact-power-flow coordinate search, followed by exact verification and
//! bisection repair. Also the full-information daily planner.

mod conic;
mod plan;

pub use conic::{Affine, ConicProgram, ConicSolution, ConicTolerances};
pub use plan::{plan_day, DayPlan};

use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::assets::{net_injections, power_bounds_dt, EssState, GridCase, PowerBounds, ProfileSet};
use crate::env::{assess_dispatch, step_cost, GridOutcome};
use crate::error::{Error, Result};
use crate::grid::{InjectionVector, NetworkModel, VoltageLimits, VoltageSolution};
use crate::guard::HighRiskSet;

/// Default shrink of the voltage box used when optimizing, p.u.
pub const DEFAULT_TIGHTENING: f64 = 1e-4;
pub const MAX_REPAIR_PROBES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Conic,
    Search,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Conic => "conic",
            Backend::Search => "search",
        }
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conic" => Ok(Backend::Conic),
            "search" => Ok(Backend::Search),
            _ => Err(Error::Config(format!("unknown backend {s:?} (conic or search)"))),
        }
    }
}

/// The data of one fallback decision.
#[derive(Debug, Clone, PartialEq)]
pub struct SafeDispatchProblem {
    pub t: usize,
    pub dt: f64,
    /// Non-storage injections at `t`, p.u.
    pub base: InjectionVector<f64>,
    /// Storage power bounds, kW.
    pub bounds: Vec<PowerBounds>,
    pub price_grid: f64,
    pub node_prices: Vec<f64>,
    /// Statutory voltage limits, used for verification.
    pub limits: VoltageLimits<f64>,
    /// Margin removed from both ends of the box while optimizing.
    pub tightening: f64,
}

impl SafeDispatchProblem {
    pub fn ess_count(&self) -> usize {
        self.bounds.len()
    }

    /// Exact cost in £ of the storage dispatch `kw` given its grid draw.
    pub fn cost(&self, p_r_kw: f64, kw: &[f64]) -> f64 {
        (self.price_grid * p_r_kw + self.node_prices.iter().zip(kw).map(|(c, p)| c * p).sum::<f64>()) * self.dt
    }
}

pub fn formulate(case: &GridCase, profiles: &ProfileSet, states: &[EssState], t: usize, dt: f64, tightening: f64) -> Result<SafeDispatchProblem> {
    if states.len() != case.ess_count() {
        return Err(Error::Shape(format!("{} states for {} storage units", states.len(), case.ess_count())));
    }
    let limits = case.network().limits();
    if !(tightening >= 0.0 && limits.lower + tightening < limits.upper - tightening) {
        return Err(Error::Config(format!("voltage tightening {tightening} empties the box")));
    }
    let base = net_injections(case, profiles, &vec![0.0; case.ess_count()], t)?;
    Ok(SafeDispatchProblem {
        t,
        dt,
        base,
        bounds: case
            .devices
            .ess
            .iter()
            .zip(states)
            .map(|(u, &s)| power_bounds_dt(u, s, dt))
            .collect(),
        price_grid: profiles.price_grid[t],
        node_prices: (0..case.ess_count()).map(|k| profiles.node_price(t, k)).collect(),
        limits,
        tightening,
    })
}

/// Variable indices of one period of the branch-flow model.
#[derive(Debug, Clone)]
pub struct DistFlowVars {
    pub p: Vec<usize>,
    pub q: Vec<usize>,
    pub l: Vec<usize>,
    pub v: Vec<usize>,
    /// Grid draw at the slack bus, p.u.
    pub p_r: Affine,
}

/// Adds one period of the relaxed branch-flow model. `storage` lists
/// `(bus, power expression in p.u.)` consumption terms folded into bus injections.
pub fn add_distflow(
    prog: &mut ConicProgram,
    net: &NetworkModel<f64>,
    base: &InjectionVector<f64>,
    storage: &[(usize, Affine)],
    v_box: (f64, f64),
    tag: &str,
) -> DistFlowVars {
    let n = net.bus_count();
    let nb = net.branches().len();
    let tree = net.tree();
    let slack = net.slack_bus();
    let mut vars = DistFlowVars {
        p: (0..nb).map(|k| prog.add_var(format!("{tag}P{k}"))).collect(),
        q: (0..nb).map(|k| prog.add_var(format!("{tag}Q{k}"))).collect(),
        l: (0..nb).map(|k| prog.add_var(format!("{tag}l{k}"))).collect(),
        v: (0..n).map(|i| prog.add_var(format!("{tag}v{i}"))).collect(),
        p_r: Affine::constant(base.p[slack]),
    };
    let child_branch = |bus: usize| -> Vec<usize> {
        tree.children[bus].iter().map(|&c| tree.parent[c].expect("child has a parent").1).collect()
    };
    for k in 0..nb {
        let (i, j, r, x) = net.oriented_branch(k);
        let mut pe = Affine::var(vars.p[k], 1.0).add(vars.l[k], -r).plus_const(-base.p[j]);
        let mut qe = Affine::var(vars.q[k], 1.0).add(vars.l[k], -x).plus_const(-base.q[j]);
        for c in child_branch(j) {
            pe = pe.add(vars.p[c], -1.0);
            qe = qe.add(vars.q[c], -1.0);
        }
        for (bus, e) in storage {
            if *bus == j {
                for &(vi, coef) in &e.terms {
                    pe = pe.add(vi, -coef);
                }
                pe = pe.plus_const(-e.constant);
            }
        }
        prog.eq(pe);
        prog.eq(qe);
        prog.eq(
            Affine::var(vars.v[j], 1.0)
                .add(vars.v[i], -1.0)
                .add(vars.p[k], 2.0 * r)
                .add(vars.q[k], 2.0 * x)
                .add(vars.l[k], -(r * r + x * x)),
        );
        prog.soc(&[
            Affine::var(vars.l[k], 1.0).add(vars.v[i], 1.0),
            Affine::var(vars.p[k], 2.0),
            Affine::var(vars.q[k], 2.0),
            Affine::var(vars.l[k], 1.0).add(vars.v[i], -1.0),
        ]);
    }
    let vs = net.v_slack();
    prog.eq(Affine::var(vars.v[slack], 1.0).plus_const(-vs * vs));
    let (lo, hi) = v_box;
    for bus in 0..n {
        if bus != slack {
            prog.bound(vars.v[bus], lo * lo, hi * hi);
        }
    }
    for c in child_branch(slack) {
        vars.p_r = vars.p_r.clone().add(vars.p[c], 1.0);
    }
    for (bus, e) in storage {
        if *bus == slack {
            for &(vi, coef) in &e.terms {
                vars.p_r = vars.p_r.clone().add(vi, coef);
            }
        }
    }
    vars
}

/// Largest `(ℓ·v − P² − Q²) / max(1, ℓ·v)` over branches at a solution.
pub fn relaxation_gap(net: &NetworkModel<f64>, vars: &DistFlowVars, x: &[f64]) -> f64 {
    (0..net.branches().len())
        .map(|k| {
            let (i, _, _, _) = net.oriented_branch(k);
            let (p, q, l, v) = (x[vars.p[k]], x[vars.q[k]], x[vars.l[k]], x[vars.v[i]]);
            (l * v - p * p - q * q) / (l * v).max(1.0)
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafeDispatchSolution {
    pub ess_kw: Vec<f64>,
    /// Objective reported by the backend, £.
    pub objective: f64,
    /// Exact cost of `ess_kw` under power flow, £ (NaN if it did not converge).
    pub exact_cost: f64,
    pub relaxation_gap: f64,
    pub verified: bool,
    /// Even the zero dispatch violates the limits.
    pub unresolved: bool,
    pub probes: usize,
    pub backend: Option<Backend>,
}

/// The relaxation for `problem`, its variables, and the storage variable indices.
pub fn build_conic(case: &GridCase, problem: &SafeDispatchProblem) -> (ConicProgram, DistFlowVars, Vec<usize>) {
    let net = case.network();
    let s = net.s_base_kva();
    let mut prog = ConicProgram::new();
    let ess: Vec<usize> = (0..problem.ess_count()).map(|k| prog.add_var(format!("ess{k}"))).collect();
    for (k, b) in problem.bounds.iter().enumerate() {
        prog.bound(ess[k], b.lower / s, b.upper / s);
    }
    let storage: Vec<(usize, Affine)> = case.devices.ess.iter().zip(&ess).map(|(u, &i)| (u.bus, Affine::var(i, 1.0))).collect();
    let lim = problem.limits;
    let v_box = (lim.lower + problem.tightening, lim.upper - problem.tightening);
    let vars = add_distflow(&mut prog, net, &problem.base, &storage, v_box, "");
    // £ per p.u. over the step
    let scale = s * problem.dt;
    for &(i, c) in &vars.p_r.terms {
        prog.add_objective(i, problem.price_grid * scale * c);
    }
    for (k, &i) in ess.iter().enumerate() {
        prog.add_objective(i, problem.node_prices[k] * scale);
    }
    (prog, vars, ess)
}

pub fn solve_conic(case: &GridCase, problem: &SafeDispatchProblem, tol: ConicTolerances) -> Result<SafeDispatchSolution> {
    let (prog, vars, ess) = build_conic(case, problem);
    let sol = prog.solve(tol)?;
    let s = case.network().s_base_kva();
    let ess_kw: Vec<f64> = ess
        .iter()
        .zip(&problem.bounds)
        .map(|(&i, b)| b.clip(sol.x[i] * s))
        .collect();
    let constant = problem.price_grid * vars.p_r.constant * s * problem.dt;
    Ok(SafeDispatchSolution {
        ess_kw,
        objective: sol.objective + constant,
        exact_cost: f64::NAN,
        relaxation_gap: relaxation_gap(case.network(), &vars, &sol.x),
        verified: false,
        unresolved: false,
        probes: 0,
        backend: Some(Backend::Conic),
    })
}

/// Exact power flow of the storage dispatch `kw` on `problem`'s injections.
pub fn evaluate(case: &GridCase, problem: &SafeDispatchProblem, kw: &[f64], warm: Option<&VoltageSolution<f64>>) -> Result<(VoltageSolution<f64>, f64)> {
    let s = case.network().s_base_kva();
    let mut inj = problem.base.clone();
    for (u, &p) in case.devices.ess.iter().zip(kw) {
        inj.p[u.bus] += p / s;
    }
    let sol = match warm {
        Some(w) => case.solver.solve_warm(&inj, w)?,
        None => case.solver.solve(&inj)?,
    };
    let p_r = sol.slack_p * s;
    Ok((sol, p_r))
}

/// Largest distance of any magnitude outside `[lo, hi]`; infinite when not converged.
fn box_excess(sol: &VoltageSolution<f64>, lo: f64, hi: f64) -> f64 {
    if !sol.converged {
        return f64::INFINITY;
    }
    sol.magnitudes()
        .iter()
        .map(|&v| (lo - v).max(v - hi).max(0.0))
        .fold(0.0, f64::max)
}

/// Refined coordinate search over storage powers with every candidate checked
/// by exact power flow against the tightened box.
pub fn solve_search(case: &GridCase, problem: &SafeDispatchProblem) -> Result<SafeDispatchSolution> {
    let lim = problem.limits;
    let (lo, hi) = (lim.lower + problem.tightening, lim.upper - problem.tightening);
    let n = problem.ess_count();
    let mut probes = 0;
    let mut warm: Option<VoltageSolution<f64>> = None;
    let score = |kw: &[f64], warm: &mut Option<VoltageSolution<f64>>, probes: &mut usize| -> Result<Option<f64>> {
        *probes += 1;
        let (sol, p_r) = evaluate(case, problem, kw, warm.as_ref())?;
        let ok = box_excess(&sol, lo, hi) == 0.0;
        if sol.converged {
            *warm = Some(sol);
        }
        Ok(ok.then(|| problem.cost(p_r, kw)))
    };
    let mut x: Vec<f64> = problem.bounds.iter().map(|b| b.clip(0.0)).collect();
    let mut best = score(&x, &mut warm, &mut probes)?;
    let grid = 10usize;
    let mut step: Vec<f64> = problem.bounds.iter().map(|b| (b.upper - b.lower) / grid as f64).collect();
    for round in 0..5 {
        for k in 0..n {
            let b = problem.bounds[k];
            if b.upper <= b.lower {
                continue;
            }
            let cands: Vec<f64> = if round == 0 {
                (0..=grid).map(|j| b.lower + j as f64 * step[k]).collect()
            } else {
                (1..=3)
                    .flat_map(|j| [x[k] - j as f64 * step[k], x[k] + j as f64 * step[k]])
                    .map(|p| b.clip(p))
                    .collect()
            };
            for p in cands {
                if p == x[k] {
                    continue;
                }
                let mut y = x.clone();
                y[k] = p;
                if let Some(c) = score(&y, &mut warm, &mut probes)? {
                    if best.is_none_or(|bc| c < bc - 1e-12) {
                        best = Some(c);
                        x = y;
                    }
                }
            }
        }
        for s in step.iter_mut() {
            *s /= 4.0;
        }
    }
    let Some(obj) = best else {
        return Err(Error::Infeasible("no storage dispatch on the search grid meets the limits".into()));
    };
    Ok(SafeDispatchSolution {
        ess_kw: x,
        objective: obj,
        exact_cost: obj,
        relaxation_gap: 0.0,
        verified: false,
        unresolved: false,
        probes,
        backend: Some(Backend::Search),
    })
}

struct Probe {
    excess: f64,
    kw: Vec<f64>,
    cost: f64,
}

/// Exact check against the statutory limits; unsafe candidates are scaled
/// toward zero by bisection.
pub fn verify_or_repair(case: &GridCase, problem: &SafeDispatchProblem, candidate: &[f64]) -> Result<SafeDispatchSolution> {
    if candidate.len() != problem.ess_count() {
        return Err(Error::Shape("candidate length differs from storage count".into()));
    }
    let lim = problem.limits;
    let cand: Vec<f64> = problem.bounds.iter().zip(candidate).map(|(b, &p)| b.clip(p)).collect();
    let mut probes: Vec<Probe> = Vec::new();
    let check = |s: f64, probes: &mut Vec<Probe>| -> Result<bool> {
        let kw: Vec<f64> = cand.iter().map(|p| p * s).collect();
        let (sol, p_r) = evaluate(case, problem, &kw, None)?;
        let excess = box_excess(&sol, lim.lower, lim.upper);
        let cost = if sol.converged { problem.cost(p_r, &kw) } else { f64::NAN };
        probes.push(Probe { excess, kw, cost });
        Ok(excess == 0.0)
    };
    let done = |p: &Probe, verified: bool, unresolved: bool, n: usize| SafeDispatchSolution {
        ess_kw: p.kw.clone(),
        objective: p.cost,
        exact_cost: p.cost,
        relaxation_gap: 0.0,
        verified,
        unresolved,
        probes: n,
        backend: None,
    };
    if check(1.0, &mut probes)? {
        return Ok(done(&probes[0], true, false, 1));
    }
    if !check(0.0, &mut probes)? {
        if probes.iter().all(|p| p.cost.is_nan()) {
            return Err(Error::Numerical(format!("power flow diverged at every repair probe, hour {}", problem.t)));
        }
        log::warn!("hour {}: zero storage dispatch violates the voltage limits", problem.t);
        let best = probes
            .iter()
            .min_by(|a, b| a.excess.total_cmp(&b.excess))
            .expect("two probes");
        return Ok(done(best, false, true, probes.len()));
    }
    let (mut safe_s, mut bad_s) = (0.0, 1.0);
    let mut safe_idx = 1;
    while probes.len() < MAX_REPAIR_PROBES {
        let mid = 0.5 * (safe_s + bad_s);
        if check(mid, &mut probes)? {
            safe_s = mid;
            safe_idx = probes.len() - 1;
        } else {
            bad_s = mid;
        }
    }
    Ok(done(&probes[safe_idx], true, false, probes.len()))
}

/// Backend solve followed by verification; an infeasible relaxation repairs from zero.
pub fn safe_dispatch(case: &GridCase, problem: &SafeDispatchProblem, backend: Backend) -> Result<SafeDispatchSolution> {
    let solved = match backend {
        Backend::Conic => solve_conic(case, problem, ConicTolerances::default()),
        Backend::Search => solve_search(case, problem),
    };
    let (candidate, objective, gap) = match solved {
        Ok(s) => (s.ess_kw, s.objective, s.relaxation_gap),
        Err(Error::Infeasible(msg)) => {
            log::warn!("hour {}: {msg}; repairing from zero", problem.t);
            (vec![0.0; problem.ess_count()], f64::NAN, f64::NAN)
        }
        Err(e) => return Err(e),
    };
    let mut sol = verify_or_repair(case, problem, &candidate)?;
    sol.objective = objective;
    sol.relaxation_gap = gap;
    sol.backend = Some(backend);
    Ok(sol)
}

/// Screens `kw` by exact power flow at hour `t`, as the guard would.
pub fn exact_screen(case: &GridCase, profiles: &ProfileSet, risk: &HighRiskSet, t: usize, kw: &[f64]) -> Result<GridOutcome> {
    assess_dispatch(case, profiles, risk, t, kw, None)
}

/// Exact cost of executing `kw` at hour `t`.
pub fn exact_cost(case: &GridCase, profiles: &ProfileSet, risk: &HighRiskSet, t: usize, kw: &[f64], dt: f64) -> Result<f64> {
    let out = exact_screen(case, profiles, risk, t, kw)?;
    Ok(step_cost(profiles, t, out.p_r_kw, kw, dt))
}

/// One fallback decision for the solution log.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionLogRow {
    pub hour: usize,
    pub solution: SafeDispatchSolution,
}

pub fn solution_log_header(n_ess: usize) -> Vec<String> {
    let mut header: Vec<String> = ["hour", "backend", "objective", "exact_cost", "relaxation_gap", "verified", "unresolved", "probes"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=n_ess).map(|k| format!("p_ess{k}_kw")));
    header
}

pub fn solution_log_record(r: &SolutionLogRow) -> Vec<String> {
    let s = &r.solution;
    let mut rec = vec![
        r.hour.to_string(),
        s.backend.map_or("none", Backend::name).to_string(),
        format!("{:.6}", s.objective),
        format!("{:.6}", s.exact_cost),
        format!("{:e}", s.relaxation_gap),
        (s.verified as u8).to_string(),
        (s.unresolved as u8).to_string(),
        s.probes.to_string(),
    ];
    rec.extend(s.ess_kw.iter().map(|p| format!("{p:.6}")));
    rec
}

pub fn write_solution_log(rows: &[SolutionLogRow], n_ess: usize, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(solution_log_header(n_ess))?;
    for r in rows {
        w.write_record(solution_log_record(r))?;
    }
    w.flush().map_err(|e| Error::io("solution log", e))?;
    Ok(())
}
