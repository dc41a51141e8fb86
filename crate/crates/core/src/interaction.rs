//! Reply-based user interaction pairs and the distance-binned connectivity
//! profile.
//!
//! Two geotagged users form a pair when one replied to the other. Pair
//! distance is the great-circle distance between their states' centroids
//! (zero inside a state). Connectivity at a distance bin is the number of
//! interacting pairs divided by the number of possible pairs in that bin.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geolocation::{LocationTable, SubredditStateMap};
use crate::ingest::{AuthorIndex, CommentRecord};
use crate::states::State;
use crate::stats::{self, StatsError};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Error)]
pub enum InteractionError {
    #[error("no centroid for state {0}")]
    UnknownState(State),
    #[error("row {row}: {msg}")]
    BadCentroid { row: usize, msg: String },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("bin width must be positive")]
    BadBin,
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    #[default]
    AllSubreddits,
    NonLocationSubreddits,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::AllSubreddits => "all_subreddits",
            Scope::NonLocationSubreddits => "non_location_subreddits",
        }
    }
}

/// Unordered user pair, stored with the smaller name first.
pub fn pair_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairStats {
    pub replies_seen: u64,
    pub unresolved_parent: u64,
    pub self_replies: u64,
    pub not_geotagged: u64,
    pub location_subreddit: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InteractionPairs {
    pub scope: Scope,
    /// Pair → number of reply events between the two users.
    pub pairs: BTreeMap<(String, String), u64>,
    pub stats: PairStats,
}

impl InteractionPairs {
    pub fn merge(&mut self, other: InteractionPairs) {
        for (k, w) in other.pairs {
            *self.pairs.entry(k).or_default() += w;
        }
        let s = other.stats;
        self.stats.replies_seen += s.replies_seen;
        self.stats.unresolved_parent += s.unresolved_parent;
        self.stats.self_replies += s.self_replies;
        self.stats.not_geotagged += s.not_geotagged;
        self.stats.location_subreddit += s.location_subreddit;
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Resolves each comment's parent author and records geotagged pairs.
/// Post parents are resolved only when `posts` is given.
pub fn build_interaction_pairs<'a, I>(
    corpus: I,
    comments: &AuthorIndex,
    posts: Option<&AuthorIndex>,
    locations: &LocationTable,
    subreddit_map: &SubredditStateMap,
    scope: Scope,
) -> InteractionPairs
where
    I: IntoIterator<Item = &'a CommentRecord>,
{
    let mut out = InteractionPairs {
        scope,
        ..Default::default()
    };
    for r in corpus {
        if r.parent_id.is_none() || r.is_deleted() {
            continue;
        }
        out.stats.replies_seen += 1;
        let parent_author = match (r.parent_comment(), r.parent_post()) {
            (Some(id), _) => comments.get(id),
            (None, Some(id)) => posts.and_then(|p| p.get(id)),
            _ => None,
        };
        let Some(parent_author) = parent_author else {
            out.stats.unresolved_parent += 1;
            continue;
        };
        if parent_author == r.author {
            out.stats.self_replies += 1;
            continue;
        }
        if locations.state_of(&r.author).is_none() || locations.state_of(parent_author).is_none() {
            out.stats.not_geotagged += 1;
            continue;
        }
        if scope == Scope::NonLocationSubreddits && subreddit_map.state_of(&r.subreddit).is_some() {
            out.stats.location_subreddit += 1;
            continue;
        }
        *out.pairs.entry(pair_key(&r.author, parent_author)).or_default() += 1;
    }
    out
}

/// Great-circle distance in km on a sphere of radius [`EARTH_RADIUS_KM`].
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateCentroids {
    centers: BTreeMap<State, (f64, f64)>,
}

fn in_bounds(lat: f64, lon: f64) -> bool {
    let conus = (24.0..=50.0).contains(&lat) && (-125.0..=-66.0).contains(&lon);
    let alaska = (51.0..=72.0).contains(&lat) && (-180.0..=-129.0).contains(&lon);
    let hawaii = (18.0..=23.0).contains(&lat) && (-161.0..=-154.0).contains(&lon);
    conus || alaska || hawaii
}

impl Default for StateCentroids {
    fn default() -> Self {
        StateCentroids {
            centers: State::all().map(|s| (s, s.center())).collect(),
        }
    }
}

impl StateCentroids {
    pub fn get(&self, s: State) -> Option<(f64, f64)> {
        self.centers.get(&s).copied()
    }

    pub fn insert(&mut self, s: State, lat: f64, lon: f64) -> bool {
        if !in_bounds(lat, lon) {
            return false;
        }
        self.centers.insert(s, (lat, lon));
        true
    }

    /// Reads a `state,lat,lon` CSV.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, InteractionError> {
        #[derive(Deserialize)]
        struct Row {
            state: String,
            lat: f64,
            lon: f64,
        }
        let mut out = StateCentroids {
            centers: BTreeMap::new(),
        };
        for (i, row) in csv::Reader::from_reader(input).deserialize().enumerate() {
            let row: Row = row?;
            let bad = |msg: String| InteractionError::BadCentroid { row: i + 2, msg };
            let s: State = row.state.parse().map_err(|e: crate::states::UnknownState| bad(e.to_string()))?;
            if !out.insert(s, row.lat, row.lon) {
                return Err(bad(format!("({}, {}) is outside U.S. bounds", row.lat, row.lon)));
            }
        }
        Ok(out)
    }
}

pub fn centroid_distance(a: State, b: State, centroids: &StateCentroids) -> Result<f64, InteractionError> {
    let ca = centroids.get(a).ok_or(InteractionError::UnknownState(a))?;
    let cb = centroids.get(b).ok_or(InteractionError::UnknownState(b))?;
    if a == b {
        return Ok(0.0);
    }
    Ok(haversine_km(ca, cb))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityBin {
    pub scope: Scope,
    pub d_km: u64,
    pub interacting_pairs: u64,
    pub possible_pairs: u64,
    pub connectivity: f64,
    /// Total reply events behind the interacting pairs.
    pub interaction_events: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityProfile {
    pub scope: Scope,
    pub bin_km: u64,
    pub bins: Vec<ConnectivityBin>,
    /// Describes how the per-bin denominator is computed.
    pub denominator: String,
}

pub const DENOMINATOR_NOTE: &str = "possible_pairs is the exact number of unordered geotagged user pairs whose \
state pair falls in the bin: C(n_s, 2) summed over states for d = 0, n_a * n_b summed over distinct state \
pairs otherwise";

fn bin_of(d: f64, bin_km: u64) -> u64 {
    ((d / bin_km as f64).round() as u64) * bin_km
}

/// Distance bin of every unordered state pair, same-state pairs included.
pub fn state_pair_bins(
    states: &[State],
    centroids: &StateCentroids,
    bin_km: u64,
) -> Result<BTreeMap<(State, State), u64>, InteractionError> {
    let mut out = BTreeMap::new();
    for (i, &a) in states.iter().enumerate() {
        for &b in &states[i..] {
            let d = centroid_distance(a, b, centroids)?;
            out.insert((a, b), if a == b { 0 } else { bin_of(d, bin_km) });
        }
    }
    Ok(out)
}

pub fn connectivity_profile(
    pairs: &InteractionPairs,
    locations: &LocationTable,
    centroids: &StateCentroids,
    bin_km: u64,
) -> Result<ConnectivityProfile, InteractionError> {
    if bin_km == 0 {
        return Err(InteractionError::BadBin);
    }
    let users = locations.users_per_state();
    let states: Vec<State> = users.keys().copied().collect();
    let pair_bins = state_pair_bins(&states, centroids, bin_km)?;

    let mut possible: BTreeMap<u64, u64> = BTreeMap::new();
    for (&(a, b), &bin) in &pair_bins {
        let n = if a == b {
            users[&a] * (users[&a] - 1) / 2
        } else {
            users[&a] * users[&b]
        };
        *possible.entry(bin).or_default() += n;
    }

    let mut interacting: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
    for ((u, v), &w) in &pairs.pairs {
        let (Some(su), Some(sv)) = (locations.state_of(u), locations.state_of(v)) else {
            continue;
        };
        let key = if su <= sv { (su, sv) } else { (sv, su) };
        let bin = pair_bins[&key];
        let e = interacting.entry(bin).or_default();
        e.0 += 1;
        e.1 += w;
    }

    let bins = possible
        .into_iter()
        .filter(|(_, p)| *p > 0)
        .map(|(d, p)| {
            let (hits, events) = interacting.get(&d).copied().unwrap_or((0, 0));
            ConnectivityBin {
                scope: pairs.scope,
                d_km: d,
                interacting_pairs: hits,
                possible_pairs: p,
                connectivity: hits as f64 / p as f64,
                interaction_events: events,
            }
        })
        .collect();
    Ok(ConnectivityProfile {
        scope: pairs.scope,
        bin_km,
        bins,
        denominator: DENOMINATOR_NOTE.to_string(),
    })
}

impl ConnectivityProfile {
    pub fn get(&self, d_km: u64) -> Option<&ConnectivityBin> {
        self.bins.iter().find(|b| b.d_km == d_km)
    }

    /// Slope of ln(connectivity) on ln(d) over bins at or beyond `min_km`
    /// with nonzero connectivity.
    pub fn decay_slope(&self, min_km: u64) -> Result<f64, InteractionError> {
        let pts: Vec<(f64, f64)> = self
            .bins
            .iter()
            .filter(|b| b.d_km >= min_km.max(1) && b.connectivity > 0.0)
            .map(|b| ((b.d_km as f64).ln(), b.connectivity.ln()))
            .collect();
        let x: Vec<Vec<f64>> = pts.iter().map(|p| vec![p.0]).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let fit = stats::ols_fit(&x, &y, &["log_d".to_string()], true)?;
        Ok(fit.coefficients[1])
    }
}

pub fn write_profiles_csv<W: Write>(out: W, profiles: &[ConnectivityProfile]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scope", "d_km", "interacting_pairs", "possible_pairs", "connectivity"])?;
    for p in profiles {
        for b in &p.bins {
            w.write_record([
                b.scope.as_str(),
                &b.d_km.to_string(),
                &b.interacting_pairs.to_string(),
                &b.possible_pairs.to_string(),
                &format!("{:.12e}", b.connectivity),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
