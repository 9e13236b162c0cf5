use std::io::Write;
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;

use crate::assets::{FactorRow, GridCase, ProfileSet, Split};
use crate::error::{Error, Result};

const TIME_FORMATS: [&str; 3] = ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"];

/// Dates used when a file carries no `split` column.
pub const TRAIN_RANGE: (NaiveDate, NaiveDate) = (ymd(2019, 9, 21), ymd(2019, 10, 10));
pub const TEST_RANGE: (NaiveDate, NaiveDate) = (ymd(2020, 4, 13), ymd(2020, 8, 30));

const fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    match NaiveDate::from_ymd_opt(y, m, d) {
        Some(d) => d,
        None => panic!("bad date"),
    }
}

#[derive(Debug, Deserialize)]
struct SeriesRow {
    timestamp: String,
    load_factor: f64,
    pv_factor: f64,
    wt_factor: f64,
    price_gbp_per_kwh: f64,
    #[serde(default)]
    split: Option<String>,
}

fn parse_time(s: &str) -> Option<NaiveDateTime> {
    TIME_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s.trim(), f).ok())
}

/// Parses the hourly factor file.
///
/// Timestamps must sit on the hour and increase strictly; gaps of whole hours
/// are allowed (episodes never straddle one). Without a `split` column, rows
/// inside [`TEST_RANGE`] are test data and all others training data; if no
/// row falls inside either default range, the last quarter of the days is
/// held out instead.
pub fn parse_factor_rows(text: &str) -> Result<Vec<FactorRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows: Vec<FactorRow> = Vec::new();
    let mut explicit = None;
    for (i, rec) in rdr.deserialize::<SeriesRow>().enumerate() {
        let row_no = i + 2;
        let bad = |msg: String| Error::Ingestion { row: row_no, msg };
        let r = rec.map_err(|e| bad(e.to_string()))?;
        let ts = parse_time(&r.timestamp).ok_or_else(|| bad(format!("unreadable timestamp {:?}", r.timestamp)))?;
        if ts.minute() != 0 || ts.second() != 0 {
            return Err(bad(format!("timestamp {ts} is not on the hour")));
        }
        if let Some(prev) = rows.last() {
            if ts <= prev.timestamp {
                return Err(bad(format!("timestamp {ts} does not follow {}", prev.timestamp)));
            }
        }
        for (name, v) in [
            ("load_factor", r.load_factor),
            ("pv_factor", r.pv_factor),
            ("wt_factor", r.wt_factor),
            ("price_gbp_per_kwh", r.price_gbp_per_kwh),
        ] {
            if !v.is_finite() {
                return Err(bad(format!("{name} is not finite")));
            }
        }
        if r.load_factor < 0.0 {
            return Err(bad("negative load factor".into()));
        }
        if r.pv_factor < 0.0 || r.wt_factor < 0.0 {
            return Err(bad("negative generation factor".into()));
        }
        let split = match r.split.as_deref().map(str::trim) {
            None | Some("") => None,
            Some(s) if s.eq_ignore_ascii_case("train") => Some(Split::Train),
            Some(s) if s.eq_ignore_ascii_case("test") => Some(Split::Test),
            Some(s) => return Err(bad(format!("unknown split {s:?}"))),
        };
        match (explicit, split.is_some()) {
            (None, has) => explicit = Some(has),
            (Some(e), has) if e != has => return Err(bad("split column filled on some rows only".into())),
            _ => {}
        }
        rows.push(FactorRow {
            timestamp: ts,
            load: r.load_factor,
            pv: r.pv_factor,
            wt: r.wt_factor,
            price: r.price_gbp_per_kwh,
            split: split.unwrap_or(Split::Train),
        });
    }
    if rows.is_empty() {
        return Err(Error::Ingestion { row: 1, msg: "no data rows".into() });
    }
    if explicit != Some(true) {
        assign_default_split(&mut rows);
    }
    Ok(rows)
}

fn assign_default_split(rows: &mut [FactorRow]) {
    let within = |d: NaiveDate, r: (NaiveDate, NaiveDate)| d >= r.0 && d <= r.1;
    let dated = rows.iter().any(|r| {
        let d = r.timestamp.date();
        within(d, TRAIN_RANGE) || within(d, TEST_RANGE)
    });
    if dated {
        for r in rows.iter_mut() {
            r.split = if within(r.timestamp.date(), TEST_RANGE) { Split::Test } else { Split::Train };
        }
        return;
    }
    let mut days: Vec<NaiveDate> = rows.iter().map(|r| r.timestamp.date()).collect();
    days.dedup();
    let held = days.len() / 4;
    if held == 0 {
        return;
    }
    let first_test = days[days.len() - held];
    for r in rows.iter_mut() {
        if r.timestamp.date() >= first_test {
            r.split = Split::Test;
        }
    }
}

/// Reads a factor file and expands it onto the case's buses and units.
pub fn load_dataset(case: &GridCase, path: &Path) -> Result<ProfileSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ProfileSet::from_factors(case, &parse_factor_rows(&text)?)
}

/// Writes rows in the same schema [`parse_factor_rows`] reads, with an explicit split column.
pub fn write_factor_rows(rows: &[FactorRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "load_factor", "pv_factor", "wt_factor", "price_gbp_per_kwh", "split"])?;
    for r in rows {
        w.write_record([
            r.timestamp.format("%Y-%m-%d %H:%M:%S").to_string(),
            r.load.to_string(),
            r.pv.to_string(),
            r.wt.to_string(),
            r.price.to_string(),
            match r.split {
                Split::Train => "train".into(),
                Split::Test => "test".into(),
            },
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Shape knobs of the synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    /// Fraction of days (from the end) marked as test data.
    pub test_fraction: f64,
    /// Load factor at the overnight trough and the evening peak.
    pub load_floor: f64,
    pub load_peak: f64,
    /// Price level between peaks and the heights of the two peaks, £/kWh.
    pub price_base: f64,
    pub price_morning: f64,
    pub price_evening: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            test_fraction: 0.25,
            load_floor: 0.28,
            load_peak: 0.56,
            price_base: 0.07,
            price_morning: 0.13,
            price_evening: 0.19,
        }
    }
}

fn bump(h: f64, centre: f64, width: f64) -> f64 {
    (-((h - centre) / width).powi(2)).exp()
}

/// Deterministic hourly factors for `days` days starting 2019-09-21.
///
/// Prices carry a morning (about 8–9 h) and a larger evening (about 19 h)
/// peak with troughs overnight and mid-afternoon; load follows the same two
/// humps; PV is a clipped half-sine between 06:00 and 18:00 scaled by a daily
/// clearness draw; wind is a slowly mean-reverting random walk.
pub fn synth_rows(seed: u64, days: usize, opts: &SynthOptions) -> Vec<FactorRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let t0 = TRAIN_RANGE.0.and_hms_opt(0, 0, 0).expect("midnight");
    let test_days = ((days as f64) * opts.test_fraction).floor() as usize;
    let first_test = days - test_days.min(days.saturating_sub(1));
    let mut rows = Vec::with_capacity(days * 24);
    let mut wind = 0.4;
    for d in 0..days {
        let load_day = (1.0 + 0.03 * normal(&mut rng)).clamp(0.95, 1.03);
        let price_day = 1.0 + 0.08 * normal(&mut rng);
        let clear = rng.random_range(0.2..1.0);
        let wind_mean = rng.random_range(0.15..0.6);
        for h in 0..24 {
            let hf = h as f64;
            let shape = (0.5 * bump(hf, 8.5, 2.0))
                .max(1.06 * bump(hf, 14.5, 2.6))
                .max(bump(hf, 19.0, 2.2));
            let load = (opts.load_floor + (opts.load_peak - opts.load_floor) * shape)
                * load_day
                * (1.0 + 0.01 * normal(&mut rng)).clamp(0.98, 1.02);
            let pv = if (6..=18).contains(&h) {
                let s = (std::f64::consts::PI * (hf - 6.0) / 12.0).sin();
                (s * clear * (1.0 + 0.05 * normal(&mut rng))).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let diurnal = 1.0 + 0.3 * (std::f64::consts::TAU * (hf - 3.0) / 24.0).cos();
            wind += 0.25 * (wind_mean * diurnal - wind) + 0.06 * normal(&mut rng);
            wind = wind.clamp(0.0, 1.0);
            let price = (opts.price_base
                + opts.price_morning * bump(hf, 8.5, 1.3)
                + opts.price_evening * bump(hf, 19.0, 1.5)
                - 0.025 * bump(hf, 3.5, 1.6)
                - 0.035 * bump(hf, 14.5, 1.8))
                * price_day
                + 0.003 * normal(&mut rng);
            rows.push(FactorRow {
                timestamp: t0 + Duration::days(d as i64) + Duration::hours(h),
                load: load.max(0.0),
                pv,
                wt: wind,
                price,
                split: if d >= first_test && test_days > 0 { Split::Test } else { Split::Train },
            });
        }
    }
    rows
}

/// Synthetic profile set on `case`; identical seeds give identical series.
pub fn synth_dataset(case: &GridCase, seed: u64, days: usize) -> Result<ProfileSet> {
    if days == 0 {
        return Err(Error::Range("synthetic dataset needs at least one day".into()));
    }
    ProfileSet::from_factors(case, &synth_rows(seed, days, &SynthOptions::default()))
}
