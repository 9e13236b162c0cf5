use crate::error::{Error, Result};

/// Battery storage unit. Power and energy are in kW / kWh.
#[derive(Debug, Clone, PartialEq)]
pub struct EssUnit {
    pub name: String,
    /// 0-based bus index.
    pub bus: usize,
    /// Symmetric charge/discharge rating.
    pub p_max: f64,
    pub e_capacity: f64,
    pub eta_ch: f64,
    pub eta_dis: f64,
    pub soe_min: f64,
    pub soe_max: f64,
}

impl EssUnit {
    pub fn validate(&self) -> Result<()> {
        let eff_ok = |e: f64| e > 0.0 && e <= 1.0;
        if !(self.p_max > 0.0 && self.e_capacity > 0.0) {
            return Err(Error::Config(format!(
                "{}: power and energy ratings must be positive",
                self.name
            )));
        }
        if !(eff_ok(self.eta_ch) && eff_ok(self.eta_dis)) {
            return Err(Error::Config(format!(
                "{}: efficiencies must lie in (0, 1]",
                self.name
            )));
        }
        if !(0.0 <= self.soe_min && self.soe_min < self.soe_max && self.soe_max <= 1.0) {
            return Err(Error::Config(format!(
                "{}: need 0 <= soe_min < soe_max <= 1",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssState {
    pub soe: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerBounds {
    pub lower: f64,
    pub upper: f64,
}

impl PowerBounds {
    #[inline]
    pub fn clip(&self, p: f64) -> f64 {
        p.clamp(self.lower, self.upper)
    }

    #[inline]
    pub fn contains(&self, p: f64) -> bool {
        let tol = 1e-9 * (1.0 + self.lower.abs().max(self.upper.abs()));
        p >= self.lower - tol && p <= self.upper + tol
    }

    /// Maps `[-1, 1]` linearly onto `[lower, upper]`.
    #[inline]
    pub fn denormalize(&self, a: f64) -> f64 {
        let a = a.clamp(-1.0, 1.0);
        self.lower + 0.5 * (a + 1.0) * (self.upper - self.lower)
    }

    /// Inverse of [`PowerBounds::denormalize`]; a degenerate interval maps to 0.
    #[inline]
    pub fn normalize(&self, p: f64) -> f64 {
        let w = self.upper - self.lower;
        if w <= 0.0 {
            0.0
        } else {
            (2.0 * (p - self.lower) / w - 1.0).clamp(-1.0, 1.0)
        }
    }
}

/// Output-power bounds for a one-hour step.
pub fn power_bounds(unit: &EssUnit, state: EssState) -> PowerBounds {
    power_bounds_dt(unit, state, 1.0)
}

/// Output-power bounds for a step of `dt` hours.
///
/// The discharge bound scales the remaining energy by `eta_ch`. When
/// `eta_ch > eta_dis` that product would let a full-power step leave the SoE
/// window, so the bound is tightened to the window-preserving value in that
/// case only.
pub fn power_bounds_dt(unit: &EssUnit, state: EssState, dt: f64) -> PowerBounds {
    let e = unit.e_capacity / dt;
    let lower_energy = (unit.soe_min - state.soe) * e * unit.eta_ch;
    let lower_window = (unit.soe_min - state.soe) * e * unit.eta_dis;
    let lower = (-unit.p_max).max(lower_energy).max(lower_window).min(0.0);
    let upper = unit
        .p_max
        .min((unit.soe_max - state.soe) * e / unit.eta_ch)
        .max(0.0);
    PowerBounds { lower, upper }
}

/// Advances the state of energy by one step of `power` kW for `dt` hours.
pub fn ess_step(unit: &EssUnit, state: EssState, power: f64, dt: f64) -> Result<EssState> {
    if !power.is_finite() {
        return Err(Error::Contract(format!("{}: non-finite power", unit.name)));
    }
    let bounds = power_bounds_dt(unit, state, dt);
    if !bounds.contains(power) {
        return Err(Error::Contract(format!(
            "{}: power {power} kW outside [{}, {}]",
            unit.name, bounds.lower, bounds.upper
        )));
    }
    let delta = if power >= 0.0 {
        unit.eta_ch * power * dt / unit.e_capacity
    } else {
        power * dt / (unit.eta_dis * unit.e_capacity)
    };
    // absorb round-off at the window edges
    let soe = (state.soe + delta).clamp(unit.soe_min, unit.soe_max);
    Ok(EssState { soe })
}
