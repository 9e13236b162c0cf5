use chrono::NaiveDateTime;

use crate::assets::GridCase;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

/// Hourly load, generation, and price series on one shared time index.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSet {
    pub timestamps: Vec<NaiveDateTime>,
    /// `[hour][bus]`, kW.
    pub load_p_kw: Vec<Vec<f64>>,
    /// `[hour][bus]`, kvar.
    pub load_q_kvar: Vec<Vec<f64>>,
    /// `[hour][unit]`, kW.
    pub pv: Vec<Vec<f64>>,
    pub wt: Vec<Vec<f64>>,
    /// Price at the grid connection node, £/kWh.
    pub price_grid: Vec<f64>,
    /// Price at storage nodes, £/kWh, shared by all units unless overridden.
    pub price_node: Vec<f64>,
    /// Optional `[hour][storage unit]` override of `price_node`.
    pub price_node_per_ess: Option<Vec<Vec<f64>>>,
    pub split: Vec<Split>,
}

/// One row of hourly multipliers: loads scale the base case, generation the nameplates.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorRow {
    pub timestamp: NaiveDateTime,
    pub load: f64,
    pub pv: f64,
    pub wt: f64,
    pub price: f64,
    pub split: Split,
}

impl ProfileSet {
    pub fn from_factors(case: &GridCase, rows: &[FactorRow]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Range("empty factor series".into()));
        }
        let base = &case.base_loads;
        let d = &case.devices;
        let mut out = ProfileSet {
            timestamps: Vec::with_capacity(rows.len()),
            load_p_kw: Vec::with_capacity(rows.len()),
            load_q_kvar: Vec::with_capacity(rows.len()),
            pv: Vec::with_capacity(rows.len()),
            wt: Vec::with_capacity(rows.len()),
            price_grid: Vec::with_capacity(rows.len()),
            price_node: Vec::with_capacity(rows.len()),
            price_node_per_ess: None,
            split: Vec::with_capacity(rows.len()),
        };
        for (i, r) in rows.iter().enumerate() {
            if r.pv < 0.0 || r.wt < 0.0 {
                return Err(Error::Ingestion {
                    row: i + 2,
                    msg: "negative generation factor".into(),
                });
            }
            out.timestamps.push(r.timestamp);
            out.load_p_kw
                .push(base.p_kw.iter().map(|p| p * r.load).collect());
            out.load_q_kvar
                .push(base.q_kvar.iter().map(|q| q * r.load).collect());
            out.pv.push(d.pv.iter().map(|u| u.p_max * r.pv).collect());
            out.wt.push(d.wt.iter().map(|u| u.p_max * r.wt).collect());
            out.price_grid.push(r.price);
            out.price_node.push(r.price);
            out.split.push(r.split);
        }
        Ok(out)
    }

    /// Constant factors for `hours` hours, all marked as training data.
    pub fn constant(case: &GridCase, hours: usize, load: f64, pv: f64, wt: f64, price: f64) -> Self {
        let t0 = chrono::NaiveDate::from_ymd_opt(2020, 1, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        let rows: Vec<FactorRow> = (0..hours)
            .map(|h| FactorRow {
                timestamp: t0 + chrono::Duration::hours(h as i64),
                load,
                pv,
                wt,
                price,
                split: Split::Train,
            })
            .collect();
        Self::from_factors(case, &rows).expect("constant profile")
    }

    #[inline]
    pub fn hours(&self) -> usize {
        self.timestamps.len()
    }

    #[inline]
    pub fn bus_count(&self) -> usize {
        self.load_p_kw.first().map_or(0, Vec::len)
    }

    #[inline]
    pub fn pv_kw(&self, t: usize, unit: usize) -> f64 {
        self.pv[t][unit]
    }

    #[inline]
    pub fn wt_kw(&self, t: usize, unit: usize) -> f64 {
        self.wt[t][unit]
    }

    /// Node price seen by storage unit `k` at hour `t`.
    #[inline]
    pub fn node_price(&self, t: usize, k: usize) -> f64 {
        match &self.price_node_per_ess {
            Some(per) => per[t][k],
            None => self.price_node[t],
        }
    }

    /// Node prices for `t..t+len`, repeating the last available hour past the end.
    pub fn price_window(&self, t: usize, len: usize) -> Vec<f64> {
        let last = self.hours() - 1;
        (0..len).map(|k| self.price_node[(t + k).min(last)]).collect()
    }

    /// Start hours of whole days (midnight) whose 24 hours all carry `split`.
    pub fn day_starts(&self, split: Split) -> Vec<usize> {
        self.episode_starts(split, 24)
    }

    /// Midnight hours from which `len` consecutive hours of `split` data follow.
    pub fn episode_starts(&self, split: Split, len: usize) -> Vec<usize> {
        use chrono::Timelike;
        if len == 0 {
            return Vec::new();
        }
        (0..self.hours())
            .filter(|&t| {
                self.timestamps[t].hour() == 0
                    && t + len <= self.hours()
                    && self.split[t..t + len].iter().all(|&s| s == split)
                    && self.timestamps[t + len - 1] - self.timestamps[t]
                        == chrono::Duration::hours(len as i64 - 1)
            })
            .collect()
    }

    /// Replaces every price series with `price` (useful for zero-price checks).
    pub fn with_flat_price(mut self, price: f64) -> Self {
        self.price_grid.iter_mut().for_each(|p| *p = price);
        self.price_node.iter_mut().for_each(|p| *p = price);
        self.price_node_per_ess = None;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_factor_one_reproduces_base_loads() {
        let case = GridCase::ieee33();
        let p = ProfileSet::constant(&case, 3, 1.0, 0.0, 0.0, 0.05);
        for t in 0..3 {
            assert_eq!(p.load_p_kw[t], case.base_loads.p_kw);
            assert_eq!(p.load_q_kvar[t], case.base_loads.q_kvar);
        }
    }

    #[test]
    fn price_window_pads_with_last_hour() {
        let case = GridCase::ieee33();
        let mut p = ProfileSet::constant(&case, 3, 1.0, 0.0, 0.0, 0.0);
        p.price_node = vec![1.0, 2.0, 3.0];
        assert_eq!(p.price_window(1, 4), vec![2.0, 3.0, 3.0, 3.0]);
    }

    #[test]
    fn one_day_has_one_start() {
        let case = GridCase::ieee33();
        let p = ProfileSet::constant(&case, 24, 1.0, 0.0, 0.0, 0.0);
        assert_eq!(p.day_starts(Split::Train), vec![0]);
        assert!(p.day_starts(Split::Test).is_empty());
    }
}
