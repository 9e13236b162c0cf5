//! Radial network model and exact AC power flow.

mod acpf;
pub mod linalg;
mod network;

pub use acpf::{
    build_admittance, violation_report, violations_of, AcpfOptions, AcpfSolver, Admittance,
    InjectionVector, LimitSide, Violation, VoltageSolution,
};
pub use network::{Branch, NetworkMeta, NetworkModel, RadialTree, VoltageLimits};

pub(crate) const IEEE33_BRANCHES: &str = include_str!("../../data/ieee33_branches.csv");
pub(crate) const IEEE33_META: &str = include_str!("../../data/ieee33_meta.toml");
pub(crate) const IEEE33_LOADS: &str = include_str!("../../data/ieee33_loads.csv");
pub(crate) const IEEE33_DEVICES: &str = include_str!("../../data/ieee33_devices.csv");
