//! Full-information daily schedule: one branch-flow relaxation per hour,
//! coupled through the storage energy balance.

use super::{add_distflow, relaxation_gap, Affine, ConicProgram, ConicTolerances};
use crate::assets::{net_injections, GridCase, ProfileSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DayPlan {
    pub start: usize,
    /// `[hour][unit]` net storage power, kW.
    pub ess_kw: Vec<Vec<f64>>,
    /// `[hour + 1][unit]` planned SoE, starting with the initial state.
    pub soe: Vec<Vec<f64>>,
    /// Relaxation objective, £.
    pub objective: f64,
    pub max_gap: f64,
}

/// Minimizes the summed step cost over `hours` hours from `start`.
#[allow(clippy::too_many_arguments)]
pub fn plan_day(
    case: &GridCase,
    profiles: &ProfileSet,
    start: usize,
    hours: usize,
    initial_soe: &[f64],
    dt: f64,
    tightening: f64,
    tol: ConicTolerances,
) -> Result<DayPlan> {
    if start + hours > profiles.hours() || hours == 0 {
        return Err(Error::Range(format!("plan {start}..{} outside {} hours", start + hours, profiles.hours())));
    }
    let units = &case.devices.ess;
    if initial_soe.len() != units.len() {
        return Err(Error::Shape("one initial SoE per storage unit".into()));
    }
    let net = case.network();
    let s = net.s_base_kva();
    let lim = net.limits();
    let v_box = (lim.lower + tightening, lim.upper - tightening);
    let mut prog = ConicProgram::new();
    let mut soe: Vec<Vec<usize>> = Vec::with_capacity(hours + 1);
    let mut ch = Vec::with_capacity(hours);
    let mut dis = Vec::with_capacity(hours);
    let mut periods = Vec::with_capacity(hours);
    soe.push(
        units
            .iter()
            .enumerate()
            .map(|(k, _)| {
                let i = prog.add_var(format!("soe{k}_0"));
                prog.eq(Affine::var(i, 1.0).plus_const(-initial_soe[k]));
                i
            })
            .collect(),
    );
    let zero = vec![0.0; units.len()];
    let mut constant = 0.0;
    for h in 0..hours {
        let t = start + h;
        let c: Vec<usize> = (0..units.len()).map(|k| prog.add_var(format!("ch{k}_{h}"))).collect();
        let d: Vec<usize> = (0..units.len()).map(|k| prog.add_var(format!("dis{k}_{h}"))).collect();
        let next: Vec<usize> = (0..units.len()).map(|k| prog.add_var(format!("soe{k}_{}", h + 1))).collect();
        let mut storage = Vec::with_capacity(units.len());
        for (k, u) in units.iter().enumerate() {
            let e = u.e_capacity / dt;
            let now = soe[h][k];
            prog.bound(c[k], 0.0, u.p_max);
            prog.bound(d[k], 0.0, u.p_max);
            prog.bound(next[k], u.soe_min, u.soe_max);
            // next = now + (η_ch·ch − dis/η_dis) / e
            prog.eq(
                Affine::var(next[k], 1.0)
                    .add(now, -1.0)
                    .add(c[k], -u.eta_ch / e)
                    .add(d[k], 1.0 / (u.eta_dis * e)),
            );
            // per-step output bounds the simulator applies
            prog.nonneg(Affine::var(now, e * u.eta_ch).plus_const(-u.soe_min * e * u.eta_ch).add(d[k], -1.0));
            prog.nonneg(Affine::var(now, e * u.eta_dis).plus_const(-u.soe_min * e * u.eta_dis).add(d[k], -1.0));
            prog.nonneg(Affine::var(now, -e / u.eta_ch).plus_const(u.soe_max * e / u.eta_ch).add(c[k], -1.0));
            storage.push((u.bus, Affine::var(c[k], 1.0 / s).add(d[k], -1.0 / s)));
            let price = profiles.node_price(t, k) * dt;
            prog.add_objective(c[k], price);
            prog.add_objective(d[k], -price);
        }
        let base = net_injections(case, profiles, &zero, t)?;
        let vars = add_distflow(&mut prog, net, &base, &storage, v_box, &format!("h{h}."));
        let scale = profiles.price_grid[t] * s * dt;
        for &(i, coef) in &vars.p_r.terms {
            prog.add_objective(i, scale * coef);
        }
        constant += scale * vars.p_r.constant;
        ch.push(c);
        dis.push(d);
        soe.push(next);
        periods.push(vars);
    }
    let sol = prog.solve(tol)?;
    let x = &sol.x;
    let max_gap = periods.iter().map(|v| relaxation_gap(net, v, x)).fold(0.0, f64::max);
    Ok(DayPlan {
        start,
        ess_kw: (0..hours)
            .map(|h| (0..units.len()).map(|k| x[ch[h][k]] - x[dis[h][k]]).collect())
            .collect(),
        soe: soe.iter().map(|row| row.iter().map(|&i| x[i]).collect()).collect(),
        objective: sol.objective + constant,
        max_gap,
    })
}
