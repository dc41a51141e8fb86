//! User-to-state assignment from activity in state-specific subreddits,
//! plus adoption and cohort statistics built on top of it.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{NewsComment, NewsType};
use crate::ingest::CommentRecord;
use crate::states::State;
use crate::stats::{self, StatsError};

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("subreddit `{subreddit}` is mapped to both {first} and {second}")]
    ConflictingMapping {
        subreddit: String,
        first: State,
        second: State,
    },
    #[error("`{code}` (row {row}) is not one of the 50 states")]
    NotAState { code: String, row: usize },
    #[error("no population given for {0}")]
    MissingPopulation(State),
    #[error("population for {0} must be positive")]
    ZeroPopulation(State),
    #[error("cohort `{0}` is empty")]
    EmptyCohort(&'static str),
    #[error("fewer than 3 states with users; cannot fit scaling")]
    TooFewStates,
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to encode counts: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

fn normalize_subreddit(raw: &str) -> String {
    let s = raw.trim().to_ascii_lowercase();
    let s = s.strip_prefix('/').unwrap_or(&s);
    s.strip_prefix("r/").unwrap_or(s).to_string()
}

/// Lowercased subreddit name → state.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SubredditStateMap {
    map: HashMap<String, State>,
}

impl SubredditStateMap {
    pub fn insert(&mut self, subreddit: &str, state: State) -> Result<(), GeoError> {
        let key = normalize_subreddit(subreddit);
        match self.map.get(&key) {
            Some(&existing) if existing != state => Err(GeoError::ConflictingMapping {
                subreddit: key,
                first: existing,
                second: state,
            }),
            _ => {
                self.map.insert(key, state);
                Ok(())
            }
        }
    }

    pub fn state_of(&self, subreddit: &str) -> Option<State> {
        self.map.get(&normalize_subreddit(subreddit)).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl<'a> FromIterator<(&'a str, State)> for SubredditStateMap {
    /// Panics on conflicting entries; use [`SubredditStateMap::insert`] for
    /// fallible construction.
    fn from_iter<T: IntoIterator<Item = (&'a str, State)>>(iter: T) -> Self {
        let mut m = SubredditStateMap::default();
        for (s, st) in iter {
            m.insert(s, st).expect("consistent mapping");
        }
        m
    }
}

/// Reads a `subreddit,state_code` CSV with a header row.
pub fn load_subreddit_state_map<R: Read>(input: R) -> Result<SubredditStateMap, GeoError> {
    let mut map = SubredditStateMap::default();
    let mut reader = csv::Reader::from_reader(input);
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let (sub, code) = (row.get(0).unwrap_or(""), row.get(1).unwrap_or(""));
        let state: State = code.parse().map_err(|_| GeoError::NotAState {
            code: code.to_string(),
            row: i + 2,
        })?;
        map.insert(sub, state)?;
    }
    Ok(map)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserLocation {
    pub author: String,
    pub state: Option<State>,
    pub counts: BTreeMap<State, u64>,
}

/// Strict-plurality winner; `None` on an empty tally or a tie at the top.
pub fn plurality_state(counts: &BTreeMap<State, u64>) -> Option<State> {
    let max = *counts.values().max()?;
    let mut winners = counts.iter().filter(|(_, &c)| c == max);
    let (&state, _) = winners.next()?;
    winners.next().is_none().then_some(state)
}

/// Per-author comment counts in mapped subreddits. Merging is associative.
#[derive(Clone, Debug, Default)]
pub struct LocationTally {
    counts: HashMap<String, BTreeMap<State, u64>>,
}

impl LocationTally {
    pub fn add(&mut self, record: &CommentRecord, map: &SubredditStateMap) {
        if record.is_deleted() {
            return;
        }
        if let Some(state) = map.state_of(&record.subreddit) {
            *self
                .counts
                .entry(record.author.clone())
                .or_default()
                .entry(state)
                .or_default() += 1;
        }
    }

    pub fn merge(&mut self, other: LocationTally) {
        for (author, counts) in other.counts {
            let mine = self.counts.entry(author).or_default();
            for (state, n) in counts {
                *mine.entry(state).or_default() += n;
            }
        }
    }

    pub fn finish(self) -> (LocationTable, GeoSummary) {
        let users: BTreeMap<String, UserLocation> = self
            .counts
            .into_iter()
            .map(|(author, counts)| {
                let state = plurality_state(&counts);
                (author.clone(), UserLocation { author, state, counts })
            })
            .collect();
        let table = LocationTable { users };
        let summary = table.summary();
        (table, summary)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationTable {
    users: BTreeMap<String, UserLocation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoSummary {
    pub mapped_authors: u64,
    pub single_state: u64,
    pub at_most_two_states: u64,
    pub unassigned: u64,
    pub frac_single_state: f64,
    pub frac_multi_state: f64,
    pub frac_at_most_two_states: f64,
    pub frac_unassigned: f64,
}

impl LocationTable {
    pub fn get(&self, author: &str) -> Option<&UserLocation> {
        self.users.get(author)
    }

    pub fn state_of(&self, author: &str) -> Option<State> {
        self.users.get(author).and_then(|u| u.state)
    }

    pub fn iter(&self) -> impl Iterator<Item = &UserLocation> {
        self.users.values()
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    /// Geotagged users per state.
    pub fn users_per_state(&self) -> BTreeMap<State, u64> {
        let mut out = BTreeMap::new();
        for state in self.users.values().filter_map(|u| u.state) {
            *out.entry(state).or_default() += 1;
        }
        out
    }

    pub fn geotagged(&self) -> HashSet<&str> {
        self.users
            .values()
            .filter(|u| u.state.is_some())
            .map(|u| u.author.as_str())
            .collect()
    }

    pub fn summary(&self) -> GeoSummary {
        let mapped = self.users.len() as u64;
        let single = self.users.values().filter(|u| u.counts.len() == 1).count() as u64;
        let two = self.users.values().filter(|u| u.counts.len() <= 2).count() as u64;
        let unassigned = self.users.values().filter(|u| u.state.is_none()).count() as u64;
        let frac = |x: u64| if mapped == 0 { 0.0 } else { x as f64 / mapped as f64 };
        GeoSummary {
            mapped_authors: mapped,
            single_state: single,
            at_most_two_states: two,
            unassigned,
            frac_single_state: frac(single),
            frac_multi_state: frac(mapped - single),
            frac_at_most_two_states: frac(two),
            frac_unassigned: frac(unassigned),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), GeoError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["author", "state", "counts_json"])?;
        for u in self.users.values() {
            let counts: BTreeMap<&str, u64> = u.counts.iter().map(|(s, n)| (s.code(), *n)).collect();
            w.write_record([
                u.author.as_str(),
                u.state.map(State::code).unwrap_or(""),
                &serde_json::to_string(&counts)?,
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, GeoError> {
        let mut users = BTreeMap::new();
        for (i, row) in csv::Reader::from_reader(input).records().enumerate() {
            let row = row?;
            let author = row.get(0).unwrap_or("").to_string();
            let state_field = row.get(1).unwrap_or("");
            let state = if state_field.is_empty() {
                None
            } else {
                Some(state_field.parse().map_err(|_| GeoError::NotAState {
                    code: state_field.to_string(),
                    row: i + 2,
                })?)
            };
            let raw: BTreeMap<State, u64> = serde_json::from_str(row.get(2).unwrap_or("{}"))?;
            users.insert(author.clone(), UserLocation { author, state, counts: raw });
        }
        Ok(LocationTable { users })
    }
}

pub fn assign_user_states<'a, I>(corpus: I, map: &SubredditStateMap) -> (LocationTable, GeoSummary)
where
    I: IntoIterator<Item = &'a CommentRecord>,
{
    let mut tally = LocationTally::default();
    for record in corpus {
        tally.add(record, map);
    }
    tally.finish()
}

/// Reads a `state,population` CSV.
pub fn read_populations<R: Read>(input: R) -> Result<BTreeMap<State, u64>, GeoError> {
    let mut out = BTreeMap::new();
    for (i, row) in csv::Reader::from_reader(input).records().enumerate() {
        let row = row?;
        let code = row.get(0).unwrap_or("");
        let state: State = code.parse().map_err(|_| GeoError::NotAState {
            code: code.to_string(),
            row: i + 2,
        })?;
        let pop: u64 = row
            .get(1)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| GeoError::ZeroPopulation(state))?;
        out.insert(state, pop);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdoptionRow {
    pub state: State,
    pub reddit_users: u64,
    pub population: u64,
    pub adoption: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdoptionFit {
    pub beta: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub states_fitted: usize,
    /// States left out of the log fit because they have no users.
    pub excluded: Vec<State>,
}

pub fn adoption_and_scaling(
    users_per_state: &BTreeMap<State, u64>,
    populations: &BTreeMap<State, u64>,
) -> Result<(Vec<AdoptionRow>, AdoptionFit), GeoError> {
    let mut rows = Vec::with_capacity(50);
    for state in State::all() {
        let population = *populations.get(&state).ok_or(GeoError::MissingPopulation(state))?;
        if population == 0 {
            return Err(GeoError::ZeroPopulation(state));
        }
        let reddit_users = users_per_state.get(&state).copied().unwrap_or(0);
        rows.push(AdoptionRow {
            state,
            reddit_users,
            population,
            adoption: reddit_users as f64 / population as f64,
        });
    }
    let (used, excluded): (Vec<&AdoptionRow>, Vec<&AdoptionRow>) = rows.iter().partition(|r| r.reddit_users > 0);
    if used.len() < 3 {
        return Err(GeoError::TooFewStates);
    }
    let x: Vec<Vec<f64>> = used.iter().map(|r| vec![(r.population as f64).ln()]).collect();
    let y: Vec<f64> = used.iter().map(|r| (r.reddit_users as f64).ln()).collect();
    let fit = stats::ols_fit(&x, &y, &["log_population".to_string()], true)?;
    let summary = AdoptionFit {
        beta: fit.coefficients[1],
        intercept: fit.coefficients[0],
        r_squared: fit.r_squared,
        states_fitted: used.len(),
        excluded: excluded.iter().map(|r| r.state).collect(),
    };
    Ok((rows, summary))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortStats {
    pub users: u64,
    pub mean_comments: f64,
    /// Fraction of cohort users with at least one news comment, per type.
    pub sharer_fraction: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortComparison {
    pub geotagged: CohortStats,
    pub non_geotagged: CohortStats,
}

fn cohort_stats<'a>(
    cohort: &HashSet<&str>,
    corpus: impl Iterator<Item = &'a CommentRecord>,
    news: &[NewsComment],
) -> CohortStats {
    let comments = corpus.filter(|r| cohort.contains(r.author.as_str())).count();
    let mut sharers: [HashSet<&str>; 4] = Default::default();
    for nc in news.iter().filter(|nc| cohort.contains(nc.author.as_str())) {
        sharers[nc.label.index()].insert(nc.author.as_str());
    }
    let n = cohort.len() as f64;
    CohortStats {
        users: cohort.len() as u64,
        mean_comments: comments as f64 / n,
        sharer_fraction: std::array::from_fn(|i| sharers[i].len() as f64 / n),
    }
}

pub fn cohort_compare(
    geotagged: &HashSet<&str>,
    non_geotagged: &HashSet<&str>,
    corpus: &[CommentRecord],
    news: &[NewsComment],
) -> Result<CohortComparison, GeoError> {
    if geotagged.is_empty() {
        return Err(GeoError::EmptyCohort("geotagged"));
    }
    if non_geotagged.is_empty() {
        return Err(GeoError::EmptyCohort("non_geotagged"));
    }
    Ok(CohortComparison {
        geotagged: cohort_stats(geotagged, corpus.iter(), news),
        non_geotagged: cohort_stats(non_geotagged, corpus.iter(), news),
    })
}

impl CohortStats {
    pub fn sharer(&self, t: NewsType) -> f64 {
        self.sharer_fraction[t.index()]
    }
}
