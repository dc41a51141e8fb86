//! State-level explanatory variables: loading, z-scoring and pairwise
//! correlation with significance flags.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::Serialize;
use thiserror::Error;

use crate::states::State;
use crate::stats::{self, StatsError};

pub const PERSONALITY_CULTURE: [&str; 6] = [
    "openness",
    "conscientiousness",
    "extraversion",
    "agreeableness",
    "neuroticism",
    "cultural_tightness",
];
pub const SOCIOECONOMIC: [&str; 6] = ["density", "gdp", "minority", "no_highschool", "population", "adoption"];
pub const POLITICAL: [&str; 3] = ["political", "republican", "swing_state"];

/// Every recognised attribute column.
pub fn attribute_names() -> impl Iterator<Item = &'static str> {
    PERSONALITY_CULTURE
        .into_iter()
        .chain(SOCIOECONOMIC)
        .chain(POLITICAL)
}

const PERCENT_COLUMNS: [&str; 2] = ["minority", "no_highschool"];

#[derive(Debug, Error)]
pub enum AttributeError {
    #[error("unknown attribute column `{0}`")]
    UnknownColumn(String),
    #[error("missing `state` column")]
    NoStateColumn,
    #[error("state {0} appears more than once")]
    DuplicateState(State),
    #[error("row {row}: `{code}` is not one of the 50 states")]
    NotAState { code: String, row: usize },
    #[error("row {row}: cannot parse `{value}` in column `{column}`")]
    BadValue { row: usize, column: String, value: String },
    #[error("{state}: `{column}` = {value} is out of range")]
    OutOfRange { state: State, column: String, value: f64 },
    #[error("variable `{0}` is not in the table")]
    NoSuchVariable(String),
    #[error("variable `{0}` has zero variance over the included states")]
    DegenerateVariable(String),
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StateAttributeTable {
    variables: Vec<String>,
    rows: BTreeMap<State, Vec<Option<f64>>>,
}

fn check_range(state: State, column: &str, value: f64) -> Result<(), AttributeError> {
    let ok = match column {
        "swing_state" => value == 0.0 || value == 1.0,
        "population" => value > 0.0,
        c if PERCENT_COLUMNS.contains(&c) => (0.0..=100.0).contains(&value),
        _ => value.is_finite(),
    };
    if ok {
        Ok(())
    } else {
        Err(AttributeError::OutOfRange {
            state,
            column: column.to_string(),
            value,
        })
    }
}

impl StateAttributeTable {
    pub fn new(variables: Vec<String>) -> Result<Self, AttributeError> {
        if let Some(bad) = variables.iter().find(|v| !attribute_names().any(|a| a == v.as_str())) {
            return Err(AttributeError::UnknownColumn(bad.clone()));
        }
        Ok(StateAttributeTable {
            variables,
            rows: BTreeMap::new(),
        })
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn states(&self) -> impl Iterator<Item = State> + '_ {
        self.rows.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn insert_row(&mut self, state: State, values: Vec<Option<f64>>) -> Result<(), AttributeError> {
        assert_eq!(values.len(), self.variables.len());
        if self.rows.contains_key(&state) {
            return Err(AttributeError::DuplicateState(state));
        }
        for (v, name) in values.iter().zip(&self.variables) {
            if let Some(v) = v {
                check_range(state, name, *v)?;
            }
        }
        self.rows.insert(state, values);
        Ok(())
    }

    fn var_index(&self, name: &str) -> Result<usize, AttributeError> {
        self.variables
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| AttributeError::NoSuchVariable(name.to_string()))
    }

    pub fn get(&self, state: State, name: &str) -> Option<f64> {
        let j = self.var_index(name).ok()?;
        self.rows.get(&state)?[j]
    }

    /// Adds or replaces a column; states absent from `values` get a missing cell.
    pub fn set_column(&mut self, name: &str, values: &BTreeMap<State, f64>) -> Result<(), AttributeError> {
        let j = match self.var_index(name) {
            Ok(j) => j,
            Err(_) => {
                if !attribute_names().any(|a| a == name) {
                    return Err(AttributeError::UnknownColumn(name.to_string()));
                }
                self.variables.push(name.to_string());
                for row in self.rows.values_mut() {
                    row.push(None);
                }
                self.variables.len() - 1
            }
        };
        for (state, row) in self.rows.iter_mut() {
            row[j] = values.get(state).copied();
            if let Some(v) = row[j] {
                check_range(*state, name, v)?;
            }
        }
        Ok(())
    }

    /// States with a value for every variable in `vars`.
    pub fn complete_states(&self, vars: &[&str]) -> Result<Vec<State>, AttributeError> {
        let idx: Vec<usize> = vars.iter().map(|v| self.var_index(v)).collect::<Result<_, _>>()?;
        Ok(self
            .rows
            .iter()
            .filter(|(_, row)| idx.iter().all(|&j| row[j].is_some()))
            .map(|(s, _)| *s)
            .collect())
    }

    pub fn incomplete_states(&self, vars: &[&str]) -> Result<Vec<State>, AttributeError> {
        let complete = self.complete_states(vars)?;
        Ok(self.states().filter(|s| !complete.contains(s)).collect())
    }

    /// Mean of each variable over the states where it is present.
    pub fn column_means(&self) -> Vec<(String, f64)> {
        self.variables
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let vals: Vec<f64> = self.rows.values().filter_map(|r| r[j]).collect();
                (name.clone(), stats::mean(&vals))
            })
            .collect()
    }
}

/// Reads an attribute CSV: a `state` column plus any subset of the known
/// attribute columns. Blank cells are recorded as missing.
pub fn load_attributes<R: Read>(input: R) -> Result<StateAttributeTable, AttributeError> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers()?.clone();
    let state_col = headers
        .iter()
        .position(|h| h.trim() == "state")
        .ok_or(AttributeError::NoStateColumn)?;
    let vars: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != state_col)
        .map(|(i, h)| (i, h.trim().to_string()))
        .collect();
    let mut table = StateAttributeTable::new(vars.iter().map(|(_, v)| v.clone()).collect())?;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 2;
        let code = record.get(state_col).unwrap_or("");
        let state: State = code.parse().map_err(|_| AttributeError::NotAState {
            code: code.to_string(),
            row,
        })?;
        let mut values = Vec::with_capacity(vars.len());
        for (i, name) in &vars {
            let cell = record.get(*i).unwrap_or("").trim();
            values.push(if cell.is_empty() || cell.eq_ignore_ascii_case("na") {
                None
            } else {
                Some(cell.parse::<f64>().map_err(|_| AttributeError::BadValue {
                    row,
                    column: name.clone(),
                    value: cell.to_string(),
                })?)
            });
        }
        table.insert_row(state, values)?;
    }
    Ok(table)
}

/// Complete-case standardized design over a fixed variable list.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Standardized {
    pub states: Vec<State>,
    pub variables: Vec<String>,
    /// One column per variable, aligned with `states`.
    pub columns: Vec<Vec<f64>>,
    /// States dropped for missing values.
    pub dropped: Vec<State>,
}

impl Standardized {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        let j = self.variables.iter().position(|v| v == name)?;
        Some(&self.columns[j])
    }
}

/// `(x - mean) / sd` with the sample standard deviation.
pub fn zscore_values(values: &[f64]) -> Option<Vec<f64>> {
    if values.len() < 2 {
        return None;
    }
    let m = stats::mean(values);
    let sd = stats::sample_sd(values);
    (sd > 0.0 && sd.is_finite()).then(|| values.iter().map(|v| (v - m) / sd).collect())
}

pub fn zscore(table: &StateAttributeTable, vars: &[&str]) -> Result<Standardized, AttributeError> {
    let states = table.complete_states(vars)?;
    let dropped = table.incomplete_states(vars)?;
    let mut columns = Vec::with_capacity(vars.len());
    for &v in vars {
        let raw: Vec<f64> = states.iter().map(|&s| table.get(s, v).expect("complete")).collect();
        columns.push(zscore_values(&raw).ok_or_else(|| AttributeError::DegenerateVariable(v.to_string()))?);
    }
    Ok(Standardized {
        states,
        variables: vars.iter().map(|v| v.to_string()).collect(),
        columns,
        dropped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrelationMatrix {
    pub variables: Vec<String>,
    /// `None` where fewer than 3 paired observations exist or a side is constant.
    pub r: Vec<Vec<Option<f64>>>,
    pub p: Vec<Vec<Option<f64>>>,
    pub n: Vec<Vec<usize>>,
    /// True where `p >= alpha` (or the cell is unavailable).
    pub insignificant: Vec<Vec<bool>>,
    pub alpha: f64,
}

/// Pairwise-complete Pearson correlations between `vars`.
pub fn cross_correlation(
    table: &StateAttributeTable,
    vars: &[&str],
    alpha: f64,
) -> Result<CorrelationMatrix, AttributeError> {
    let k = vars.len();
    for v in vars {
        table.var_index(v)?;
    }
    let mut r = vec![vec![None; k]; k];
    let mut p = vec![vec![None; k]; k];
    let mut n = vec![vec![0; k]; k];
    for a in 0..k {
        for b in a..k {
            let (xs, ys): (Vec<f64>, Vec<f64>) = table
                .states()
                .filter_map(|s| Some((table.get(s, vars[a])?, table.get(s, vars[b])?)))
                .unzip();
            n[a][b] = xs.len();
            n[b][a] = xs.len();
            if let Ok((rv, pv)) = stats::pearson(&xs, &ys) {
                let rv = if a == b { 1.0 } else { rv };
                r[a][b] = Some(rv);
                r[b][a] = Some(rv);
                p[a][b] = Some(pv);
                p[b][a] = Some(pv);
            }
        }
    }
    let insignificant = p
        .iter()
        .map(|row| row.iter().map(|c| c.is_none_or(|pv| pv >= alpha)).collect())
        .collect();
    Ok(CorrelationMatrix {
        variables: vars.iter().map(|v| v.to_string()).collect(),
        r,
        p,
        n,
        insignificant,
        alpha,
    })
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<(f64, f64)> {
        let i = self.variables.iter().position(|v| v == a)?;
        let j = self.variables.iter().position(|v| v == b)?;
        Some((self.r[i][j]?, self.p[i][j]?))
    }

    /// Long-format CSV: `var_a,var_b,n,r,p,insignificant`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["var_a", "var_b", "n", "r", "p", "insignificant"])?;
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.12}")).unwrap_or_default();
        for (i, a) in self.variables.iter().enumerate() {
            for (j, b) in self.variables.iter().enumerate() {
                w.write_record([
                    a.clone(),
                    b.clone(),
                    self.n[i][j].to_string(),
                    fmt(self.r[i][j]),
                    fmt(self.p[i][j]),
                    self.insignificant[i][j].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
