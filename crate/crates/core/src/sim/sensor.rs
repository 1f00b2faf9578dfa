//! Virtual sensors: bounded random walks.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorKind {
    Temp1,
    Temp2,
    Pressure,
}

impl SensorKind {
    pub const ALL: [SensorKind; 3] = [SensorKind::Temp1, SensorKind::Temp2, SensorKind::Pressure];

    pub fn name(self) -> &'static str {
        match self {
            SensorKind::Temp1 => "temp1",
            SensorKind::Temp2 => "temp2",
            SensorKind::Pressure => "pressure",
        }
    }

    /// Inclusive walk bounds (degrees C or hPa).
    pub fn bounds(self) -> (f64, f64) {
        match self {
            SensorKind::Temp1 | SensorKind::Temp2 => (10.0, 35.0),
            SensorKind::Pressure => (950.0, 1050.0),
        }
    }

    pub fn index(self) -> u64 {
        match self {
            SensorKind::Temp1 => 0,
            SensorKind::Temp2 => 1,
            SensorKind::Pressure => 2,
        }
    }
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SensorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SensorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown sensor {s:?} (expected temp1, temp2 or pressure)"))
    }
}

/// Step amplitude `m` per sensor kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    pub temp1: f64,
    pub temp2: f64,
    pub pressure: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            temp1: 0.5,
            temp2: 0.5,
            pressure: 2.0,
        }
    }
}

impl SensorConfig {
    pub fn amplitude(&self, kind: SensorKind) -> f64 {
        match kind {
            SensorKind::Temp1 => self.temp1,
            SensorKind::Temp2 => self.temp2,
            SensorKind::Pressure => self.pressure,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for k in SensorKind::ALL {
            let m = self.amplitude(k);
            if !(m.is_finite() && m >= 0.0) {
                return Err(format!("sensors.{k} must be a finite amplitude >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SensorStream {
    kind: SensorKind,
    m: f64,
    value: f64,
    rng: ChaCha8Rng,
}

impl SensorStream {
    /// Starts at a uniformly random point inside the bounds.
    pub fn new(kind: SensorKind, m: f64, mut rng: ChaCha8Rng) -> Self {
        let (lo, hi) = kind.bounds();
        let value = rng.gen_range(lo..=hi);
        Self { kind, m, value, rng }
    }

    pub fn kind(&self) -> SensorKind {
        self.kind
    }

    /// Next reading: a uniform step in `[-m, m]`, reflected at the bounds.
    pub fn next_sample(&mut self) -> f64 {
        let (lo, hi) = self.kind.bounds();
        if self.m > 0.0 {
            let mut v = self.value + self.rng.gen_range(-self.m..=self.m);
            if v > hi {
                v = hi - (v - hi);
            }
            if v < lo {
                v = lo + (lo - v);
            }
            self.value = v.clamp(lo, hi);
        }
        self.value
    }
}

impl Iterator for SensorStream {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        Some(self.next_sample())
    }
}
