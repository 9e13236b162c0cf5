//! Device models: storage dynamics, renewable units, base loads, and the
//! hourly profiles that drive them.

mod ess;
mod profiles;

pub use ess::{ess_step, power_bounds, power_bounds_dt, EssState, EssUnit, PowerBounds};
pub use profiles::{FactorRow, ProfileSet, Split};

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::grid::{AcpfSolver, InjectionVector, NetworkModel};

/// Photovoltaic or wind unit with nameplate output in kW.
#[derive(Debug, Clone, PartialEq)]
pub struct RenewableUnit {
    pub name: String,
    pub bus: usize,
    pub p_max: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeviceSet {
    pub ess: Vec<EssUnit>,
    pub pv: Vec<RenewableUnit>,
    pub wt: Vec<RenewableUnit>,
}

#[derive(Debug, Deserialize)]
struct DeviceRow {
    kind: String,
    bus: usize,
    p_max_kw: f64,
    e_kwh: Option<f64>,
    eta_ch: Option<f64>,
    eta_dis: Option<f64>,
    soe_min: Option<f64>,
    soe_max: Option<f64>,
}

impl DeviceSet {
    /// Parses `kind,bus,p_max_kw,e_kwh,eta_ch,eta_dis,soe_min,soe_max` with
    /// 1-based bus numbers; `kind` is `ess`, `pv`, or `wt`.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut set = DeviceSet::default();
        for (i, rec) in rdr.deserialize::<DeviceRow>().enumerate() {
            let row_no = i + 2;
            let row = rec.map_err(|e| Error::Ingestion {
                row: row_no,
                msg: e.to_string(),
            })?;
            let bad = |msg: &str| Error::Ingestion {
                row: row_no,
                msg: msg.to_string(),
            };
            if row.bus == 0 {
                return Err(bad("bus numbers are 1-based"));
            }
            if !(row.p_max_kw > 0.0) {
                return Err(bad("p_max_kw must be positive"));
            }
            let bus = row.bus - 1;
            match row.kind.to_ascii_lowercase().as_str() {
                "ess" => {
                    let need = |v: Option<f64>, name: &str| {
                        v.ok_or_else(|| bad(&format!("storage row missing {name}")))
                    };
                    let unit = EssUnit {
                        name: format!("ESS{}", set.ess.len() + 1),
                        bus,
                        p_max: row.p_max_kw,
                        e_capacity: need(row.e_kwh, "e_kwh")?,
                        eta_ch: need(row.eta_ch, "eta_ch")?,
                        eta_dis: need(row.eta_dis, "eta_dis")?,
                        soe_min: need(row.soe_min, "soe_min")?,
                        soe_max: need(row.soe_max, "soe_max")?,
                    };
                    unit.validate().map_err(|e| bad(&e.to_string()))?;
                    set.ess.push(unit);
                }
                "pv" => set.pv.push(RenewableUnit {
                    name: format!("PV{}", set.pv.len() + 1),
                    bus,
                    p_max: row.p_max_kw,
                }),
                "wt" => set.wt.push(RenewableUnit {
                    name: format!("WT{}", set.wt.len() + 1),
                    bus,
                    p_max: row.p_max_kw,
                }),
                other => return Err(bad(&format!("unknown device kind {other:?}"))),
            }
        }
        Ok(set)
    }

    fn check_buses(&self, bus_count: usize, slack: usize) -> Result<()> {
        let all = self
            .ess
            .iter()
            .map(|u| (&u.name, u.bus))
            .chain(self.pv.iter().map(|u| (&u.name, u.bus)))
            .chain(self.wt.iter().map(|u| (&u.name, u.bus)));
        for (name, bus) in all {
            if bus >= bus_count {
                return Err(Error::Config(format!(
                    "{name} placed on unknown bus {}",
                    bus + 1
                )));
            }
        }
        if let Some(u) = self.ess.iter().find(|u| u.bus == slack) {
            return Err(Error::Config(format!(
                "{} may not sit on the slack bus",
                u.name
            )));
        }
        Ok(())
    }
}

/// Base-case bus loads in kW / kvar.
#[derive(Debug, Clone, PartialEq)]
pub struct BusLoads {
    pub p_kw: Vec<f64>,
    pub q_kvar: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct LoadRow {
    bus: usize,
    p_kw: f64,
    q_kvar: f64,
}

impl BusLoads {
    /// Parses `bus,p_kw,q_kvar` (1-based buses); unlisted buses carry no load.
    pub fn from_csv_str(text: &str, bus_count: usize) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut loads = BusLoads {
            p_kw: vec![0.0; bus_count],
            q_kvar: vec![0.0; bus_count],
        };
        for (i, rec) in rdr.deserialize::<LoadRow>().enumerate() {
            let row = rec.map_err(|e| Error::Ingestion {
                row: i + 2,
                msg: e.to_string(),
            })?;
            if row.bus == 0 || row.bus > bus_count {
                return Err(Error::Ingestion {
                    row: i + 2,
                    msg: format!("bus {} outside 1..={bus_count}", row.bus),
                });
            }
            loads.p_kw[row.bus - 1] = row.p_kw;
            loads.q_kvar[row.bus - 1] = row.q_kvar;
        }
        Ok(loads)
    }
}

/// A network with its devices, base loads, and a ready power-flow solver.
#[derive(Debug, Clone)]
pub struct GridCase {
    pub solver: AcpfSolver<f64>,
    pub devices: DeviceSet,
    pub base_loads: BusLoads,
}

impl GridCase {
    pub fn new(network: NetworkModel<f64>, devices: DeviceSet, base_loads: BusLoads) -> Result<Self> {
        devices.check_buses(network.bus_count(), network.slack_bus())?;
        if base_loads.p_kw.len() != network.bus_count() {
            return Err(Error::Shape("base loads length differs from bus count".into()));
        }
        Ok(Self {
            solver: AcpfSolver::new(network),
            devices,
            base_loads,
        })
    }

    /// The bundled 33-bus case with its published device placement.
    pub fn ieee33() -> Self {
        let net = NetworkModel::ieee33();
        let devices = DeviceSet::from_csv_str(crate::grid::IEEE33_DEVICES).expect("bundled devices");
        let loads = BusLoads::from_csv_str(crate::grid::IEEE33_LOADS, net.bus_count())
            .expect("bundled loads");
        Self::new(net, devices, loads).expect("bundled case")
    }

    pub fn from_files(
        branches: &Path,
        meta: &Path,
        devices: &Path,
        loads: &Path,
    ) -> Result<Self> {
        let net = NetworkModel::from_files(branches, meta)?;
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
        let dev = DeviceSet::from_csv_str(&read(devices)?)?;
        let ld = BusLoads::from_csv_str(&read(loads)?, net.bus_count())?;
        Self::new(net, dev, ld)
    }

    #[inline]
    pub fn network(&self) -> &NetworkModel<f64> {
        self.solver.network()
    }

    #[inline]
    pub fn ess_count(&self) -> usize {
        self.devices.ess.len()
    }
}

/// Per-bus injections at hour `t`: load − PV − WT + storage charging, reactive from loads only.
pub fn net_injections(
    case: &GridCase,
    profiles: &ProfileSet,
    ess_kw: &[f64],
    t: usize,
) -> Result<InjectionVector<f64>> {
    let net = case.network();
    let n = net.bus_count();
    if ess_kw.len() != case.ess_count() {
        return Err(Error::Shape(format!(
            "expected {} storage powers, got {}",
            case.ess_count(),
            ess_kw.len()
        )));
    }
    if t >= profiles.hours() {
        return Err(Error::Range(format!(
            "hour {t} outside profile of {} hours",
            profiles.hours()
        )));
    }
    if profiles.bus_count() != n {
        return Err(Error::Shape("profile bus count differs from network".into()));
    }
    let s = net.s_base_kva();
    let mut inj = InjectionVector::zeros(n);
    for i in 0..n {
        inj.p[i] = profiles.load_p_kw[t][i];
        inj.q[i] = profiles.load_q_kvar[t][i];
    }
    for (m, u) in case.devices.pv.iter().enumerate() {
        inj.p[u.bus] -= profiles.pv_kw(t, m);
    }
    for (w, u) in case.devices.wt.iter().enumerate() {
        inj.p[u.bus] -= profiles.wt_kw(t, w);
    }
    for (u, &p) in case.devices.ess.iter().zip(ess_kw) {
        inj.p[u.bus] += p;
    }
    for i in 0..n {
        inj.p[i] /= s;
        inj.q[i] /= s;
    }
    Ok(inj)
}
