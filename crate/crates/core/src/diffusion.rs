//! Per-URL timelines, reach distributions and time-to-k cascade statistics.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::catalog::{NewsComment, NewsType};
use crate::geolocation::LocationTable;
use crate::states::State;

pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineEvent {
    pub created_utc: i64,
    pub comment_id: String,
    pub author: String,
    pub state: Option<State>,
    pub subreddit: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UrlTimeline {
    pub url: String,
    pub news_type: NewsType,
    /// Sorted by `(created_utc, comment_id)`.
    pub events: Vec<TimelineEvent>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Authors,
    States,
}

impl Unit {
    pub fn as_str(self) -> &'static str {
        match self {
            Unit::Authors => "authors",
            Unit::States => "states",
        }
    }
}

/// Which timelines count toward a given k.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReachFilter {
    #[default]
    AtLeast,
    Exactly,
}

impl UrlTimeline {
    pub fn new(url: String, news_type: NewsType, mut events: Vec<TimelineEvent>) -> Self {
        events.sort_by(|a, b| {
            a.created_utc
                .cmp(&b.created_utc)
                .then_with(|| a.comment_id.cmp(&b.comment_id))
        });
        UrlTimeline { url, news_type, events }
    }

    /// Distinct authors, or distinct assigned states.
    pub fn reach(&self, unit: Unit) -> usize {
        match unit {
            Unit::Authors => self.events.iter().map(|e| e.author.as_str()).collect::<HashSet<_>>().len(),
            Unit::States => self.events.iter().filter_map(|e| e.state).collect::<HashSet<_>>().len(),
        }
    }

    /// Seconds from the first event to the event that first brings the
    /// distinct count to `k`.
    pub fn time_to(&self, unit: Unit, k: usize) -> Option<i64> {
        let t0 = self.events.first()?.created_utc;
        let mut seen_authors: HashSet<&str> = HashSet::new();
        let mut seen_states: HashSet<State> = HashSet::new();
        for e in &self.events {
            let count = match unit {
                Unit::Authors => {
                    seen_authors.insert(&e.author);
                    seen_authors.len()
                }
                Unit::States => {
                    if let Some(s) = e.state {
                        seen_states.insert(s);
                    }
                    seen_states.len()
                }
            };
            if count >= k {
                return Some(e.created_utc - t0);
            }
        }
        None
    }

    /// First event per state in time order.
    pub fn state_sequence(&self) -> Vec<State> {
        let mut seen = HashSet::new();
        self.events
            .iter()
            .filter_map(|e| e.state)
            .filter(|s| seen.insert(*s))
            .collect()
    }
}

/// Groups news comments by URL. Deleted authors are left out, and a comment
/// repeating the same URL contributes one event.
pub fn build_url_timelines(news: &[NewsComment], locations: &LocationTable) -> Vec<UrlTimeline> {
    let mut by_url: BTreeMap<&str, (NewsType, Vec<TimelineEvent>, HashSet<&str>)> = BTreeMap::new();
    for nc in news {
        if nc.author == crate::ingest::DELETED_AUTHOR {
            continue;
        }
        let entry = by_url
            .entry(nc.url.as_str())
            .or_insert_with(|| (nc.label, Vec::new(), HashSet::new()));
        if !entry.2.insert(nc.comment_id.as_str()) {
            continue;
        }
        entry.1.push(TimelineEvent {
            created_utc: nc.created_utc,
            comment_id: nc.comment_id.clone(),
            author: nc.author.clone(),
            state: locations.state_of(&nc.author),
            subreddit: nc.subreddit.clone(),
        });
    }
    by_url
        .into_iter()
        .map(|(url, (t, events, _))| UrlTimeline::new(url.to_string(), t, events))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReachRow {
    pub news_type: NewsType,
    pub unit: Unit,
    pub k: usize,
    pub fraction: f64,
}

/// Fraction of timelines reaching at least `k` units, for `k = 1..=max`,
/// per news type. Timelines with no unit at all (e.g. no geotagged poster
/// for the state unit) are outside the denominator, so `k = 1` is 1.0.
pub fn reach_distribution(timelines: &[UrlTimeline], unit: Unit) -> Vec<ReachRow> {
    let mut hist: BTreeMap<NewsType, BTreeMap<usize, u64>> = BTreeMap::new();
    for tl in timelines {
        let r = tl.reach(unit);
        if r > 0 {
            *hist.entry(tl.news_type).or_default().entry(r).or_default() += 1;
        }
    }
    let mut rows = Vec::new();
    for (t, h) in hist {
        let total: u64 = h.values().sum();
        let max = *h.keys().last().expect("non-empty");
        let mut remaining = total;
        for k in 1..=max {
            rows.push(ReachRow {
                news_type: t,
                unit,
                k,
                fraction: remaining as f64 / total as f64,
            });
            remaining -= h.get(&k).copied().unwrap_or(0);
        }
    }
    rows
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeRow {
    pub news_type: NewsType,
    pub unit: Unit,
    pub k: usize,
    pub mean_days: f64,
    pub median_days: f64,
    pub n_urls: usize,
}

pub fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Mean and median time-to-`k` (days) per news type over qualifying
/// timelines. Types with no qualifying timeline produce no row.
pub fn cascade_times(timelines: &[UrlTimeline], unit: Unit, k: usize, filter: ReachFilter) -> Vec<CascadeRow> {
    assert!(k >= 2, "time-to-k needs k >= 2");
    let mut per_type: BTreeMap<NewsType, Vec<f64>> = BTreeMap::new();
    for tl in timelines {
        let reach = tl.reach(unit);
        let qualifies = match filter {
            ReachFilter::AtLeast => reach >= k,
            ReachFilter::Exactly => reach == k,
        };
        if !qualifies {
            continue;
        }
        let secs = tl.time_to(unit, k).expect("reach >= k");
        per_type.entry(tl.news_type).or_default().push(secs as f64 / SECONDS_PER_DAY);
    }
    per_type
        .into_iter()
        .map(|(t, mut days)| {
            days.sort_by(f64::total_cmp);
            CascadeRow {
                news_type: t,
                unit,
                k,
                mean_days: days.iter().sum::<f64>() / days.len() as f64,
                median_days: median(&days),
                n_urls: days.len(),
            }
        })
        .collect()
}

/// Cascade rows for every `k` in `2..=max_k`.
pub fn cascade_curve(timelines: &[UrlTimeline], unit: Unit, max_k: usize, filter: ReachFilter) -> Vec<CascadeRow> {
    let mut rows: Vec<CascadeRow> = (2..=max_k).flat_map(|k| cascade_times(timelines, unit, k, filter)).collect();
    rows.sort_by(|a, b| a.news_type.cmp(&b.news_type).then(a.k.cmp(&b.k)));
    rows
}

pub fn write_reach_csv<W: Write>(out: W, rows: &[ReachRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["news_type", "unit", "k", "fraction"])?;
    for r in rows {
        w.write_record([
            r.news_type.as_str(),
            r.unit.as_str(),
            &r.k.to_string(),
            &format!("{:.12}", r.fraction),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cascade_csv<W: Write>(out: W, rows: &[CascadeRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["news_type", "unit", "k", "mean_days", "median_days", "n_urls"])?;
    for r in rows {
        w.write_record([
            r.news_type.as_str(),
            r.unit.as_str(),
            &r.k.to_string(),
            &format!("{:.9}", r.mean_days),
            &format!("{:.9}", r.median_days),
            &r.n_urls.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
