//! Screening of proposed dispatches and the fallback that replaces rejected ones.

use std::fmt;
use std::str::FromStr;

use crate::dispatch::{formulate, safe_dispatch, Backend, SafeDispatchSolution};
use crate::env::{DispatchEnv, GridOutcome};
use crate::error::{Error, Result};
use crate::guard::{featurize, GuardModel};

/// Which screening a training run or a controller uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RunMode {
    /// Exact power flow while the surrogate trains, the surrogate afterwards.
    Sa2co,
    /// No screening.
    PlainSac,
    /// Exact power flow throughout.
    AcpfSac,
}

impl RunMode {
    pub const ALL: [RunMode; 3] = [RunMode::Sa2co, RunMode::PlainSac, RunMode::AcpfSac];

    pub fn name(self) -> &'static str {
        match self {
            RunMode::Sa2co => "sa2co",
            RunMode::PlainSac => "sac_plain",
            RunMode::AcpfSac => "acpf_sac",
        }
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RunMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?} (sa2co, sac_plain or acpf_sac)")))
    }
}

/// How a proposed dispatch is judged before execution.
#[derive(Debug, Clone, Copy)]
pub enum Screen<'a> {
    Guard(&'a GuardModel),
    Exact,
    Open,
    /// Fixed verdict regardless of the grid state.
    Fixed(bool),
}

/// `true` when `kw` may be executed as proposed at the env's current hour.
/// `exact` reuses an outcome already computed for the same dispatch.
pub fn verdict(env: &DispatchEnv, screen: Screen<'_>, kw: &[f64], exact: Option<&GridOutcome>) -> Result<bool> {
    match screen {
        Screen::Guard(g) => {
            let f = featurize(env.case(), env.profiles(), kw, env.hour())?;
            Ok(g.predict_and_assess(&f, &env.case().network().limits())?.1)
        }
        Screen::Exact => Ok(match exact {
            Some(o) => o.is_safe(),
            None => env.assess_kw(kw)?.is_safe(),
        }),
        Screen::Open => Ok(true),
        Screen::Fixed(v) => Ok(v),
    }
}

/// Safe single-period dispatch for the env's current hour and storage state.
pub fn fallback(env: &DispatchEnv, backend: Backend, tightening: f64) -> Result<SafeDispatchSolution> {
    let problem = formulate(env.case(), env.profiles(), env.states(), env.hour(), env.config().dt, tightening)?;
    safe_dispatch(env.case(), &problem, backend)
}
