use std::collections::VecDeque;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One line section. Bus indices are 0-based; impedances are per-unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch<T> {
    pub from: usize,
    pub to: usize,
    pub r: T,
    pub x: T,
}

/// Lower and upper voltage-magnitude limits in per-unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoltageLimits<T> {
    pub lower: T,
    pub upper: T,
}

impl<T: Scalar> VoltageLimits<T> {
    pub fn new(lower: T, upper: T) -> Result<Self> {
        if !(lower > T::zero() && lower < upper) {
            return Err(Error::Config(format!(
                "voltage limits must satisfy 0 < lower < upper, got [{lower}, {upper}]"
            )));
        }
        Ok(Self { lower, upper })
    }

    #[inline]
    pub fn contains(&self, v: T) -> bool {
        v >= self.lower && v <= self.upper
    }
}

impl Default for VoltageLimits<f64> {
    fn default() -> Self {
        Self {
            lower: 0.95,
            upper: 1.05,
        }
    }
}

/// Parent links of a radial network rooted at the slack bus.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialTree {
    /// `parent[bus] = (parent bus, branch index)`, `None` for the slack bus.
    pub parent: Vec<Option<(usize, usize)>>,
    /// Buses in breadth-first order from the slack bus.
    pub order: Vec<usize>,
    /// Child buses of every bus.
    pub children: Vec<Vec<usize>>,
}

/// Radial distribution network with per-unit impedances.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel<T> {
    bus_count: usize,
    slack_bus: usize,
    branches: Vec<Branch<T>>,
    s_base_kva: T,
    v_base_kv: T,
    v_slack: T,
    limits: VoltageLimits<T>,
    tree: RadialTree,
}

impl<T: Scalar> NetworkModel<T> {
    /// Builds and validates a network; branches must form a spanning tree.
    pub fn new(
        bus_count: usize,
        slack_bus: usize,
        branches: Vec<Branch<T>>,
        s_base_kva: T,
        v_base_kv: T,
        limits: VoltageLimits<T>,
    ) -> Result<Self> {
        if bus_count == 0 {
            return Err(Error::Topology("network has no buses".into()));
        }
        if slack_bus >= bus_count {
            return Err(Error::Topology(format!(
                "slack bus {slack_bus} outside 0..{bus_count}"
            )));
        }
        if branches.len() + 1 != bus_count {
            return Err(Error::Topology(format!(
                "radial network with {bus_count} buses needs {} branches, got {}",
                bus_count - 1,
                branches.len()
            )));
        }
        if !(s_base_kva > T::zero() && v_base_kv > T::zero()) {
            return Err(Error::Config("bases must be positive".into()));
        }
        VoltageLimits::new(limits.lower, limits.upper)?;
        for (k, b) in branches.iter().enumerate() {
            if b.from >= bus_count || b.to >= bus_count || b.from == b.to {
                return Err(Error::Topology(format!(
                    "branch {k} has invalid end buses ({}, {})",
                    b.from, b.to
                )));
            }
            if b.r < T::zero() || b.x < T::zero() || !(b.r > T::zero() || b.x > T::zero()) {
                return Err(Error::Topology(format!(
                    "branch {k} impedance must be nonnegative with r or x positive"
                )));
            }
        }
        let tree = build_tree(bus_count, slack_bus, &branches)?;
        Ok(Self {
            bus_count,
            slack_bus,
            branches,
            s_base_kva,
            v_base_kv,
            v_slack: T::one(),
            limits,
            tree,
        })
    }

    /// Builds from branch impedances in ohms, converting with `z_base = kV² / MVA`.
    pub fn from_ohms(
        bus_count: usize,
        slack_bus: usize,
        branches_ohm: &[(usize, usize, T, T)],
        s_base_kva: T,
        v_base_kv: T,
        limits: VoltageLimits<T>,
    ) -> Result<Self> {
        let z_base = v_base_kv * v_base_kv * T::lit(1000.0) / s_base_kva;
        let branches = branches_ohm
            .iter()
            .map(|&(from, to, r, x)| Branch {
                from,
                to,
                r: r / z_base,
                x: x / z_base,
            })
            .collect();
        Self::new(bus_count, slack_bus, branches, s_base_kva, v_base_kv, limits)
    }

    pub fn with_slack_voltage(mut self, v_slack: T) -> Result<Self> {
        if !(v_slack > T::zero()) {
            return Err(Error::Config("slack voltage must be positive".into()));
        }
        self.v_slack = v_slack;
        Ok(self)
    }

    pub fn with_limits(mut self, limits: VoltageLimits<T>) -> Result<Self> {
        self.limits = VoltageLimits::new(limits.lower, limits.upper)?;
        Ok(self)
    }

    #[inline]
    pub fn bus_count(&self) -> usize {
        self.bus_count
    }

    #[inline]
    pub fn slack_bus(&self) -> usize {
        self.slack_bus
    }

    #[inline]
    pub fn branches(&self) -> &[Branch<T>] {
        &self.branches
    }

    #[inline]
    pub fn s_base_kva(&self) -> T {
        self.s_base_kva
    }

    #[inline]
    pub fn v_base_kv(&self) -> T {
        self.v_base_kv
    }

    #[inline]
    pub fn v_slack(&self) -> T {
        self.v_slack
    }

    #[inline]
    pub fn limits(&self) -> VoltageLimits<T> {
        self.limits
    }

    #[inline]
    pub fn tree(&self) -> &RadialTree {
        &self.tree
    }

    /// Branch oriented away from the slack bus: `(parent, child, r, x)`.
    pub fn oriented_branch(&self, k: usize) -> (usize, usize, T, T) {
        let b = self.branches[k];
        match self.tree.parent[b.to] {
            Some((p, idx)) if idx == k && p == b.from => (b.from, b.to, b.r, b.x),
            _ => (b.to, b.from, b.r, b.x),
        }
    }

    /// Converts kW to per-unit on this network's base.
    #[inline]
    pub fn kw_to_pu(&self, kw: T) -> T {
        kw / self.s_base_kva
    }
}

fn build_tree<T>(bus_count: usize, slack: usize, branches: &[Branch<T>]) -> Result<RadialTree> {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); bus_count];
    for (k, b) in branches.iter().enumerate() {
        adj[b.from].push((b.to, k));
        adj[b.to].push((b.from, k));
    }
    let mut parent = vec![None; bus_count];
    let mut seen = vec![false; bus_count];
    let mut children = vec![Vec::new(); bus_count];
    let mut order = Vec::with_capacity(bus_count);
    let mut queue = VecDeque::from([slack]);
    seen[slack] = true;
    while let Some(bus) = queue.pop_front() {
        order.push(bus);
        for &(next, k) in &adj[bus] {
            if seen[next] {
                if parent[bus].map(|(p, _)| p) != Some(next) {
                    return Err(Error::Topology(format!(
                        "cycle detected through branch {k}"
                    )));
                }
                continue;
            }
            seen[next] = true;
            parent[next] = Some((bus, k));
            children[bus].push(next);
            queue.push_back(next);
        }
    }
    if order.len() != bus_count {
        return Err(Error::Topology(format!(
            "network is disconnected: {} of {bus_count} buses reachable from slack",
            order.len()
        )));
    }
    Ok(RadialTree {
        parent,
        order,
        children,
    })
}

/// Sidecar metadata accompanying a branch CSV. Bus numbers are 1-based.
#[derive(Debug, Clone, Deserialize)]
pub struct NetworkMeta {
    pub s_base_kva: f64,
    pub v_base_kv: f64,
    pub slack_bus: usize,
    #[serde(default = "one")]
    pub v_slack: f64,
    #[serde(default = "default_v_min")]
    pub v_min: f64,
    #[serde(default = "default_v_max")]
    pub v_max: f64,
}

fn one() -> f64 {
    1.0
}
fn default_v_min() -> f64 {
    0.95
}
fn default_v_max() -> f64 {
    1.05
}

impl NetworkMeta {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("network metadata: {e}")))
    }
}

#[derive(Debug, Deserialize)]
struct BranchRow {
    from: usize,
    to: usize,
    r_ohm: f64,
    x_ohm: f64,
}

impl NetworkModel<f64> {
    /// Parses a `from,to,r_ohm,x_ohm` CSV (1-based bus numbers) with its metadata.
    pub fn from_csv_str(branches_csv: &str, meta: &NetworkMeta) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(branches_csv.as_bytes());
        let mut rows = Vec::new();
        let mut max_bus = meta.slack_bus;
        for (i, rec) in rdr.deserialize::<BranchRow>().enumerate() {
            let row = rec.map_err(|e| Error::Ingestion {
                row: i + 2,
                msg: e.to_string(),
            })?;
            if row.from == 0 || row.to == 0 {
                return Err(Error::Ingestion {
                    row: i + 2,
                    msg: "bus numbers are 1-based".into(),
                });
            }
            max_bus = max_bus.max(row.from).max(row.to);
            rows.push((row.from - 1, row.to - 1, row.r_ohm, row.x_ohm));
        }
        if meta.slack_bus == 0 {
            return Err(Error::Config("slack_bus is 1-based".into()));
        }
        let limits = VoltageLimits::new(meta.v_min, meta.v_max)?;
        Self::from_ohms(
            max_bus,
            meta.slack_bus - 1,
            &rows,
            meta.s_base_kva,
            meta.v_base_kv,
            limits,
        )?
        .with_slack_voltage(meta.v_slack)
    }

    /// Reads a branch CSV and its TOML sidecar from disk.
    pub fn from_files(branches: &Path, meta: &Path) -> Result<Self> {
        let b = std::fs::read_to_string(branches).map_err(|e| Error::io(branches, e))?;
        let m = std::fs::read_to_string(meta).map_err(|e| Error::io(meta, e))?;
        Self::from_csv_str(&b, &NetworkMeta::parse(&m)?)
    }

    /// The bundled 33-bus feeder.
    pub fn ieee33() -> Self {
        let meta = NetworkMeta::parse(crate::grid::IEEE33_META).expect("bundled metadata");
        Self::from_csv_str(crate::grid::IEEE33_BRANCHES, &meta).expect("bundled network")
    }
}
