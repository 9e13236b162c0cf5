use crate::error::{Error, Result};

/// Buses whose voltages the surrogate predicts and the penalty counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HighRiskSet {
    buses: Vec<usize>,
}

impl HighRiskSet {
    /// `buses` are 0-based and must be distinct members of a `bus_count`-bus network.
    pub fn new(buses: Vec<usize>, bus_count: usize) -> Result<Self> {
        if buses.is_empty() {
            return Err(Error::Config("high-risk set is empty".into()));
        }
        let mut seen = vec![false; bus_count];
        for &b in &buses {
            if b >= bus_count {
                return Err(Error::Config(format!("high-risk bus {} not in network", b + 1)));
            }
            if std::mem::replace(&mut seen[b], true) {
                return Err(Error::Config(format!("high-risk bus {} listed twice", b + 1)));
            }
        }
        Ok(Self { buses })
    }

    /// Tail ends of the two long laterals of the 33-bus feeder: buses 12–18 and 29–33.
    pub fn ieee33() -> Self {
        let buses = (12..=18).chain(29..=33).map(|b| b - 1).collect();
        Self::new(buses, 33).expect("static set")
    }

    pub fn from_one_based(buses: &[usize], bus_count: usize) -> Result<Self> {
        if buses.contains(&0) {
            return Err(Error::Config("bus numbers are 1-based".into()));
        }
        Self::new(buses.iter().map(|b| b - 1).collect(), bus_count)
    }

    #[inline]
    pub fn buses(&self) -> &[usize] {
        &self.buses
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.buses.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.buses.is_empty()
    }
}
