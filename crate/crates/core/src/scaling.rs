//! Scaling exponents, the circulation residual, normalized circulation and
//! the stepwise circulation model suites.
//!
//! Circulation of news type `s` in state `i` is the residual of
//! `ln(count[s, i]) ~ ln(users[i])`: what is left of a state's volume after
//! accounting for how many users it has.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attributes::{self, AttributeError, StateAttributeTable, POLITICAL, PERSONALITY_CULTURE, SOCIOECONOMIC};
use crate::catalog::{NewsComment, NewsType};
use crate::geolocation::LocationTable;
use crate::states::State;
use crate::stats::{self, Candidates, Direction, OlsResult, StatsError, StepwiseResult};

#[derive(Debug, Error)]
pub enum ScalingError {
    #[error("need at least 3 usable states to fit, found {found}{}", context.as_ref().map(|c| format!(" ({c})")).unwrap_or_default())]
    InsufficientData { found: usize, context: Option<String> },
    #[error("unknown model group `{0}`")]
    UnknownGroup(String),
    #[error("malformed tally CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("tally row {row}: {msg}")]
    BadTally { row: usize, msg: String },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Attributes(#[from] AttributeError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Sublinear,
    Linear,
    Superlinear,
    /// At or above 1.3, outside the usual taxonomy.
    Other,
}

pub fn classify_exponent(beta: f64) -> Regime {
    if beta < 0.8 {
        Regime::Sublinear
    } else if beta < 1.1 {
        Regime::Linear
    } else if beta < 1.3 {
        Regime::Superlinear
    } else {
        Regime::Other
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingFit {
    pub beta: f64,
    /// Absent for the no-intercept variant.
    pub intercept: Option<f64>,
    pub r_squared: f64,
    pub regime: Regime,
    pub residuals: BTreeMap<State, f64>,
    /// States skipped because N < 1 or Y < 1.
    pub excluded: Vec<State>,
}

fn log_fit(
    n: &BTreeMap<State, f64>,
    y: &BTreeMap<State, f64>,
    intercept: bool,
) -> Result<ScalingFit, ScalingError> {
    let mut used = Vec::new();
    let mut excluded = Vec::new();
    for (&state, &nv) in n {
        match y.get(&state) {
            Some(&yv) if nv >= 1.0 && yv >= 1.0 => used.push((state, nv.ln(), yv.ln())),
            _ => excluded.push(state),
        }
    }
    excluded.extend(y.keys().filter(|s| !n.contains_key(s)));
    excluded.sort();
    if used.len() < 3 {
        return Err(ScalingError::InsufficientData {
            found: used.len(),
            context: None,
        });
    }
    let x: Vec<Vec<f64>> = used.iter().map(|u| vec![u.1]).collect();
    let yv: Vec<f64> = used.iter().map(|u| u.2).collect();
    let fit = stats::ols_fit(&x, &yv, &["log_n".to_string()], intercept)?;
    let slope = *fit.coefficients.last().expect("one predictor");
    Ok(ScalingFit {
        beta: slope,
        intercept: intercept.then(|| fit.coefficients[0]),
        r_squared: fit.r_squared,
        regime: classify_exponent(slope),
        residuals: used.iter().map(|u| u.0).zip(fit.residuals.iter().copied()).collect(),
        excluded,
    })
}

/// Fits `ln Y = β ln N + c` over states with `N ≥ 1` and `Y ≥ 1`.
pub fn fit_scaling(n: &BTreeMap<State, f64>, y: &BTreeMap<State, f64>) -> Result<ScalingFit, ScalingError> {
    log_fit(n, y, true)
}

/// Per-state news counts by type and geotagged user counts.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateTallies {
    pub counts: BTreeMap<State, [u64; 4]>,
    pub users: BTreeMap<State, u64>,
}

impl StateTallies {
    /// Distinct news comments per (state, type) from geotagged authors. A
    /// comment linking two URLs of the same type counts once.
    pub fn from_news(news: &[NewsComment], locations: &LocationTable) -> StateTallies {
        let mut seen: HashSet<(&str, NewsType)> = HashSet::new();
        let mut counts: BTreeMap<State, [u64; 4]> = BTreeMap::new();
        for nc in news {
            let Some(state) = locations.state_of(&nc.author) else {
                continue;
            };
            if seen.insert((nc.comment_id.as_str(), nc.label)) {
                counts.entry(state).or_default()[nc.label.index()] += 1;
            }
        }
        let users = locations.users_per_state();
        for s in users.keys() {
            counts.entry(*s).or_default();
        }
        StateTallies { counts, users }
    }

    pub fn count(&self, state: State, t: NewsType) -> u64 {
        self.counts.get(&state).map_or(0, |c| c[t.index()])
    }

    /// Number of states where type `t` can enter the log fit.
    pub fn usable_states(&self, t: NewsType) -> usize {
        self.users
            .iter()
            .filter(|(s, &u)| u >= 1 && self.count(**s, t) >= 1)
            .count()
    }

    pub fn scaled(&self, factor: u64) -> StateTallies {
        StateTallies {
            counts: self
                .counts
                .iter()
                .map(|(s, c)| (*s, c.map(|v| v * factor)))
                .collect(),
            users: self.users.clone(),
        }
    }

    /// `state,news_type,count,users`, one row per state and type.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["state", "news_type", "count", "users"])?;
        for (state, users) in &self.users {
            for t in NewsType::ALL {
                w.write_record([
                    state.code(),
                    t.as_str(),
                    &self.count(*state, t).to_string(),
                    &users.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<StateTallies, ScalingError> {
        #[derive(Deserialize)]
        struct Row {
            state: String,
            news_type: String,
            count: u64,
            users: u64,
        }
        let mut out = StateTallies::default();
        for (i, row) in csv::Reader::from_reader(input).deserialize().enumerate() {
            let row: Row = row?;
            let bad = |msg: String| ScalingError::BadTally { row: i + 2, msg };
            let state: State = row.state.parse().map_err(|e: crate::states::UnknownState| bad(e.to_string()))?;
            let t: NewsType = row.news_type.parse().map_err(|e: crate::catalog::CatalogError| bad(e.to_string()))?;
            if let Some(&prev) = out.users.get(&state) {
                if prev != row.users {
                    return Err(bad(format!("inconsistent user count for {state}")));
                }
            }
            out.users.insert(state, row.users);
            out.counts.entry(state).or_default()[t.index()] = row.count;
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CirculationRow {
    pub state: State,
    pub news_type: NewsType,
    pub count: u64,
    pub users: u64,
    /// ln(count); absent for zero counts.
    pub log_count: Option<f64>,
    pub log_users: Option<f64>,
    /// Circulation residual; absent when the cell was excluded from the fit.
    pub residual: Option<f64>,
    /// News comments per user; zero counts stay in as rate 0.
    pub rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeFit {
    pub news_type: NewsType,
    pub beta: f64,
    pub intercept: Option<f64>,
    pub r_squared: f64,
    pub regime: Regime,
    pub states_fitted: usize,
    pub excluded: Vec<State>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CirculationTable {
    pub rows: Vec<CirculationRow>,
    pub fits: Vec<TypeFit>,
}

impl CirculationTable {
    /// Residual metric for one type, keyed by state.
    pub fn residuals(&self, t: NewsType) -> BTreeMap<State, f64> {
        self.rows
            .iter()
            .filter(|r| r.news_type == t)
            .filter_map(|r| Some((r.state, r.residual?)))
            .collect()
    }

    pub fn rates(&self, t: NewsType) -> BTreeMap<State, f64> {
        self.rows
            .iter()
            .filter(|r| r.news_type == t)
            .filter_map(|r| Some((r.state, r.rate?)))
            .collect()
    }

    pub fn fit(&self, t: NewsType) -> Option<&TypeFit> {
        self.fits.iter().find(|f| f.news_type == t)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["state", "news_type", "count", "users", "log_count", "log_users", "circulation", "rate"])?;
        let f = |v: Option<f64>| v.map(|x| format!("{x:.12}")).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.state.code().to_string(),
                r.news_type.as_str().to_string(),
                r.count.to_string(),
                r.users.to_string(),
                f(r.log_count),
                f(r.log_users),
                f(r.residual),
                f(r.rate),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Normalized circulation: news comments per geotagged user.
pub fn circulation_normalized(tallies: &StateTallies) -> BTreeMap<(State, NewsType), f64> {
    let mut out = BTreeMap::new();
    for (&state, &users) in tallies.users.iter().filter(|(_, &u)| u > 0) {
        for t in NewsType::ALL {
            out.insert((state, t), tallies.count(state, t) as f64 / users as f64);
        }
    }
    out
}

/// Fits the residual regression for each type in `types`. With
/// `intercept = false` the regression passes through the origin.
pub fn circulation_residual(
    tallies: &StateTallies,
    types: &[NewsType],
    intercept: bool,
) -> Result<CirculationTable, ScalingError> {
    let n: BTreeMap<State, f64> = tallies.users.iter().map(|(s, &u)| (*s, u as f64)).collect();
    let rates = circulation_normalized(tallies);
    let mut fits = Vec::new();
    let mut residuals: BTreeMap<(State, NewsType), f64> = BTreeMap::new();
    for &t in types {
        let y: BTreeMap<State, f64> = tallies.users.keys().map(|s| (*s, tallies.count(*s, t) as f64)).collect();
        let fit = log_fit(&n, &y, intercept).map_err(|e| match e {
            ScalingError::InsufficientData { found, .. } => ScalingError::InsufficientData {
                found,
                context: Some(format!("news type {t}")),
            },
            other => other,
        })?;
        residuals.extend(fit.residuals.iter().map(|(s, r)| ((*s, t), *r)));
        fits.push(TypeFit {
            news_type: t,
            beta: fit.beta,
            intercept: fit.intercept,
            r_squared: fit.r_squared,
            regime: fit.regime,
            states_fitted: fit.residuals.len(),
            excluded: fit.excluded,
        });
    }
    let mut rows = Vec::new();
    for (&state, &users) in &tallies.users {
        for &t in types {
            let count = tallies.count(state, t);
            rows.push(CirculationRow {
                state,
                news_type: t,
                count,
                users,
                log_count: (count >= 1).then(|| (count as f64).ln()),
                log_users: (users >= 1).then(|| (users as f64).ln()),
                residual: residuals.get(&(state, t)).copied(),
                rate: rates.get(&(state, t)).copied(),
            });
        }
    }
    Ok(CirculationTable { rows, fits })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelGroup {
    PersonalityCulture,
    Socioeconomic,
    Political,
    All,
    AllMinusPersonality,
}

impl ModelGroup {
    pub const ALL: [ModelGroup; 5] = [
        ModelGroup::PersonalityCulture,
        ModelGroup::Socioeconomic,
        ModelGroup::Political,
        ModelGroup::All,
        ModelGroup::AllMinusPersonality,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelGroup::PersonalityCulture => "personality_culture",
            ModelGroup::Socioeconomic => "socioeconomic",
            ModelGroup::Political => "political",
            ModelGroup::All => "all",
            ModelGroup::AllMinusPersonality => "all_minus_personality",
        }
    }

    pub fn variables(self) -> Vec<&'static str> {
        match self {
            ModelGroup::PersonalityCulture => PERSONALITY_CULTURE.to_vec(),
            ModelGroup::Socioeconomic => SOCIOECONOMIC.to_vec(),
            ModelGroup::Political => POLITICAL.to_vec(),
            ModelGroup::All => PERSONALITY_CULTURE.into_iter().chain(SOCIOECONOMIC).chain(POLITICAL).collect(),
            ModelGroup::AllMinusPersonality => SOCIOECONOMIC.into_iter().chain(POLITICAL).collect(),
        }
    }
}

impl fmt::Display for ModelGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelGroup {
    type Err = ScalingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelGroup::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| ScalingError::UnknownGroup(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Residual,
    Normalized,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CirculationModel {
    pub news_type: NewsType,
    pub group: ModelGroup,
    pub metric: Metric,
    pub states: Vec<State>,
    /// States dropped for a missing dependent value or attribute.
    pub dropped: Vec<State>,
    pub selection: StepwiseResult,
}

impl CirculationModel {
    pub fn label(&self) -> String {
        format!("{} ({})", self.news_type, self.group)
    }

    pub fn fit(&self) -> &OlsResult {
        &self.selection.model
    }
}

/// Builds the standardized candidate set for one model: complete-case states
/// that have both a dependent value and every group attribute.
pub fn model_candidates(
    dependent: &BTreeMap<State, f64>,
    table: &StateAttributeTable,
    vars: &[&str],
    standardize_y: bool,
) -> Result<(Candidates, Vec<State>, Vec<State>), ScalingError> {
    let complete = table.complete_states(vars)?;
    let states: Vec<State> = complete.iter().copied().filter(|s| dependent.contains_key(s)).collect();
    let mut dropped: Vec<State> = table.states().chain(dependent.keys().copied()).filter(|s| !states.contains(s)).collect();
    dropped.sort();
    dropped.dedup();
    if states.len() < 3 {
        return Err(ScalingError::InsufficientData {
            found: states.len(),
            context: Some("complete-case states".into()),
        });
    }
    let mut columns = Vec::with_capacity(vars.len());
    for &v in vars {
        let raw: Vec<f64> = states.iter().map(|&s| table.get(s, v).expect("complete")).collect();
        columns.push(attributes::zscore_values(&raw).ok_or_else(|| AttributeError::DegenerateVariable(v.to_string()))?);
    }
    let mut y: Vec<f64> = states.iter().map(|s| dependent[s]).collect();
    if standardize_y {
        y = attributes::zscore_values(&y).ok_or_else(|| AttributeError::DegenerateVariable("circulation".into()))?;
    }
    let cands = Candidates::new(vars.iter().map(|v| v.to_string()).collect(), columns, y)?;
    Ok((cands, states, dropped))
}

pub fn circulation_model(
    news_type: NewsType,
    dependent: &BTreeMap<State, f64>,
    table: &StateAttributeTable,
    group: ModelGroup,
    metric: Metric,
    direction: Direction,
) -> Result<CirculationModel, ScalingError> {
    let vars = group.variables();
    let (cands, states, dropped) = model_candidates(dependent, table, &vars, metric == Metric::Normalized)?;
    let full: Vec<usize> = (0..vars.len()).collect();
    let start: &[usize] = if direction == Direction::Forward { &[] } else { &full };
    let selection = stats::step_aic(&cands, start, direction)?;
    Ok(CirculationModel {
        news_type,
        group,
        metric,
        states,
        dropped,
        selection,
    })
}

/// Runs one stepwise model per (type, group). Output is ordered by type,
/// then group, regardless of evaluation order.
pub fn circulation_models(
    dependents: &BTreeMap<NewsType, BTreeMap<State, f64>>,
    table: &StateAttributeTable,
    groups: &[ModelGroup],
    metric: Metric,
    direction: Direction,
) -> Result<Vec<CirculationModel>, ScalingError> {
    let jobs: Vec<(NewsType, ModelGroup)> = dependents
        .keys()
        .flat_map(|&t| groups.iter().map(move |&g| (t, g)))
        .collect();
    jobs.par_iter()
        .map(|&(t, g)| circulation_model(t, &dependents[&t], table, g, metric, direction))
        .collect()
}

/// Writes a suite as a coefficient table, one column per model.
pub fn write_suite_csv<W: Write>(out: W, suite: &[CirculationModel]) -> Result<(), csv::Error> {
    let mut variables: Vec<String> = Vec::new();
    for v in ModelGroup::All.variables() {
        if suite.iter().any(|m| m.fit().position(v).is_some()) {
            variables.push(v.to_string());
        }
    }
    let cols: Vec<(String, &OlsResult)> = suite.iter().map(|m| (m.label(), m.fit())).collect();
    stats::write_model_table(out, &variables, &cols)
}
