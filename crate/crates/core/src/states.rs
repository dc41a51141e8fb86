//! The fifty U.S. states as a compact newtype, plus reference tables used by
//! the synthetic generator and as fallbacks for centroid lookups.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Postal codes of the fifty states, in alphabetical order of state name.
/// DC and territories are intentionally absent.
pub const STATE_CODES: [&str; 50] = [
    "AL", "AK", "AZ", "AR", "CA", "CO", "CT", "DE", "FL", "GA", "HI", "ID", "IL", "IN", "IA", "KS",
    "KY", "LA", "ME", "MD", "MA", "MI", "MN", "MS", "MO", "MT", "NE", "NV", "NH", "NJ", "NM", "NY",
    "NC", "ND", "OH", "OK", "OR", "PA", "RI", "SC", "SD", "TN", "TX", "UT", "VT", "VA", "WA", "WV",
    "WI", "WY",
];

/// Approximate geographic centers (lat, lon) in degrees, same order as [`STATE_CODES`].
pub const STATE_CENTERS: [(f64, f64); 50] = [
    (32.7794, -86.8287),
    (64.0685, -152.2782),
    (34.2744, -111.6602),
    (34.8938, -92.4426),
    (37.1841, -119.4696),
    (38.9972, -105.5478),
    (41.6219, -72.7273),
    (38.9896, -75.5050),
    (28.6305, -82.4497),
    (32.6415, -83.4426),
    (20.2927, -156.3737),
    (44.3509, -114.6130),
    (40.0417, -89.1965),
    (39.8942, -86.2816),
    (42.0751, -93.4960),
    (38.4937, -98.3804),
    (37.5347, -85.3021),
    (31.0689, -91.9968),
    (45.3695, -69.2428),
    (39.0550, -76.7909),
    (42.2596, -71.8083),
    (44.3467, -85.4102),
    (46.2807, -94.3053),
    (32.7364, -89.6678),
    (38.3566, -92.4580),
    (47.0527, -109.6333),
    (41.5378, -99.7951),
    (39.3289, -116.6312),
    (43.6805, -71.5811),
    (40.1907, -74.6728),
    (34.4071, -106.1126),
    (42.9538, -75.5268),
    (35.5557, -79.3877),
    (47.4501, -100.4659),
    (40.2862, -82.7937),
    (35.5889, -97.4943),
    (43.9336, -120.5583),
    (40.8781, -77.7996),
    (41.6762, -71.5562),
    (33.9169, -80.8964),
    (44.4443, -100.2263),
    (35.8580, -86.3505),
    (31.4757, -99.3312),
    (39.3055, -111.6703),
    (44.0687, -72.6658),
    (37.5215, -78.8537),
    (47.3826, -120.4472),
    (38.6409, -80.6227),
    (44.6243, -89.9941),
    (42.9957, -107.5512),
];

/// 2019 resident population estimates, same order as [`STATE_CODES`].
pub const STATE_POPULATIONS_2019: [u64; 50] = [
    4_903_185, 731_545, 7_278_717, 3_017_804, 39_512_223, 5_758_736, 3_565_287, 973_764,
    21_477_737, 10_617_423, 1_415_872, 1_787_065, 12_671_821, 6_732_219, 3_155_070, 2_913_314,
    4_467_673, 4_648_794, 1_344_212, 6_045_680, 6_892_503, 9_986_857, 5_639_632, 2_976_149,
    6_137_428, 1_068_778, 1_934_408, 3_080_156, 1_359_711, 8_882_190, 2_096_829, 19_453_561,
    10_488_084, 762_062, 11_689_100, 3_956_971, 4_217_737, 12_801_989, 1_059_361, 5_148_714,
    884_659, 6_829_174, 28_995_881, 3_205_958, 623_989, 8_535_519, 7_614_893, 1_792_147,
    5_822_434, 578_759,
];

/// One of the fifty U.S. states.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct State(u8);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("`{0}` is not one of the 50 U.S. state codes")]
pub struct UnknownState(pub String);

impl State {
    pub fn all() -> impl Iterator<Item = State> {
        (0..50u8).map(State)
    }

    pub fn from_index(index: usize) -> Option<State> {
        (index < 50).then_some(State(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn code(self) -> &'static str {
        STATE_CODES[self.index()]
    }

    pub fn center(self) -> (f64, f64) {
        STATE_CENTERS[self.index()]
    }

    pub fn population_2019(self) -> u64 {
        STATE_POPULATIONS_2019[self.index()]
    }
}

impl FromStr for State {
    type Err = UnknownState;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        STATE_CODES
            .iter()
            .position(|c| *c == upper)
            .map(|i| State(i as u8))
            .ok_or_else(|| UnknownState(s.to_string()))
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl Serialize for State {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for State {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
