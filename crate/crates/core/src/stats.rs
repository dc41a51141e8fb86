//! Statistical kernel: ordinary least squares with classical inference,
//! Pearson correlation tests, AIC, and bidirectional stepwise selection.

use std::cmp::Ordering;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("design matrix is singular: column `{column}` is a linear combination of earlier columns")]
    SingularDesign { column: String },
    #[error("need more observations than parameters: n = {n}, parameters = {params}")]
    InsufficientObservations { n: usize, params: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("correlation undefined: input `{0}` is constant")]
    ConstantInput(&'static str),
    #[error("non-finite value in input")]
    NonFinite,
}

/// Relative size of `R[j][j]` below which column `j` is treated as dependent.
const RANK_TOL: f64 = 1e-10;

/// Fits with `RSS <= TSS * PERFECT_FIT` are flagged as degenerate for AIC
/// and have their RSS clamped to that floor.
const PERFECT_FIT: f64 = 1e-20;

pub const INTERCEPT: &str = "(Intercept)";

/// Star thresholds: `*` p<0.1, `**` p<0.05, `***` p<0.01.
pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample (n − 1) standard deviation.
pub fn sample_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() as f64 - 1.0)).sqrt()
}

/// Two-sided p-value of a t statistic with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OlsResult {
    /// Parameter names, intercept first when present.
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_values: Vec<f64>,
    pub p_values: Vec<f64>,
    pub intercept: bool,
    pub n: usize,
    /// Number of predictors, excluding the intercept.
    pub k: usize,
    pub df_residual: usize,
    pub rss: f64,
    pub tss: f64,
    pub r_squared: f64,
    pub adj_r_squared: f64,
    pub residual_se: f64,
    /// F statistic with (numerator, denominator) df; absent without predictors.
    pub f_statistic: Option<(f64, usize, usize)>,
    pub f_p_value: Option<f64>,
    pub aic: f64,
    /// Set when the fit is numerically perfect and `aic` used the RSS floor.
    pub aic_degenerate: bool,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
}

impl OlsResult {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.position(name).map(|i| self.coefficients[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Predictor names in model order, without the intercept.
    pub fn predictors(&self) -> &[String] {
        &self.names[usize::from(self.intercept)..]
    }

    pub fn stars(&self, i: usize) -> &'static str {
        stars(self.p_values[i])
    }

    /// `0.022*** (0.014)` style cell.
    pub fn cell(&self, name: &str) -> Option<String> {
        let i = self.position(name)?;
        Some(format!(
            "{:.3}{} ({:.3})",
            self.coefficients[i],
            self.stars(i),
            self.std_errors[i]
        ))
    }
}

/// Fits `y` on the columns of `x` (n × k, row-major rows).
pub fn ols_fit(x: &[Vec<f64>], y: &[f64], names: &[String], intercept: bool) -> Result<OlsResult, StatsError> {
    let n = y.len();
    let k = names.len();
    if x.len() != n {
        return Err(StatsError::Dimension(format!("{} rows in X, {} in y", x.len(), n)));
    }
    if let Some(row) = x.iter().find(|r| r.len() != k) {
        return Err(StatsError::Dimension(format!("row of width {}, expected {}", row.len(), k)));
    }
    if y.iter().chain(x.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let p = k + usize::from(intercept);
    if n <= p {
        return Err(StatsError::InsufficientObservations { n, params: p });
    }

    let mut all_names = Vec::with_capacity(p);
    if intercept {
        all_names.push(INTERCEPT.to_string());
    }
    all_names.extend(names.iter().cloned());

    let design = DMatrix::from_fn(n, p, |i, j| {
        if intercept {
            if j == 0 { 1.0 } else { x[i][j - 1] }
        } else {
            x[i][j]
        }
    });
    let yv = DVector::from_column_slice(y);

    let qr = design.clone().qr();
    let r = qr.r();
    for j in 0..p {
        let col_norm = design.column(j).norm();
        if col_norm == 0.0 || r[(j, j)].abs() <= RANK_TOL * col_norm {
            return Err(StatsError::SingularDesign {
                column: all_names[j].clone(),
            });
        }
    }
    let qty = qr.q().transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty.rows(0, p).into_owned())
        .ok_or_else(|| StatsError::SingularDesign {
            column: all_names[p - 1].clone(),
        })?;

    let fitted = &design * &beta;
    let residuals = &yv - &fitted;
    let rss = residuals.norm_squared();
    let tss = if intercept {
        let m = yv.mean();
        yv.iter().map(|v| (v - m) * (v - m)).sum()
    } else {
        yv.norm_squared()
    };

    let df = n - p;
    let sigma2 = rss / df as f64;
    // (X'X)^-1 = R^-1 R^-T
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .expect("checked nonsingular");
    let xtx_inv = &r_inv * r_inv.transpose();

    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let std_errors: Vec<f64> = (0..p).map(|j| (sigma2 * xtx_inv[(j, j)]).sqrt()).collect();
    let t_values: Vec<f64> = coefficients
        .iter()
        .zip(&std_errors)
        .map(|(b, se)| b / se)
        .collect();
    let p_values = t_values.iter().map(|&t| t_two_sided_p(t, df as f64)).collect();

    let r_squared = if tss > 0.0 { (1.0 - rss / tss).clamp(0.0, 1.0) } else { 1.0 };
    let df_total = if intercept { n - 1 } else { n };
    let adj_r_squared = 1.0 - (1.0 - r_squared) * df_total as f64 / df as f64;
    let (f_statistic, f_p_value) = if k > 0 {
        // undefined for a constant response
        let f = if tss == 0.0 { f64::NAN } else { ((tss - rss) / k as f64) / sigma2 };
        let pv = if f.is_nan() {
            f64::NAN
        } else if f.is_infinite() {
            0.0
        } else {
            FisherSnedecor::new(k as f64, df as f64)
                .map(|d| d.sf(f))
                .unwrap_or(f64::NAN)
        };
        (Some((f, k, df)), Some(pv))
    } else {
        (None, None)
    };

    let (aic, aic_degenerate) = aic_value(n, rss, tss, p);
    Ok(OlsResult {
        names: all_names,
        coefficients,
        std_errors,
        t_values,
        p_values,
        intercept,
        n,
        k,
        df_residual: df,
        rss,
        tss,
        r_squared,
        adj_r_squared,
        residual_se: sigma2.sqrt(),
        f_statistic,
        f_p_value,
        aic,
        aic_degenerate,
        fitted: fitted.iter().copied().collect(),
        residuals: residuals.iter().copied().collect(),
    })
}

fn aic_value(n: usize, rss: f64, tss: f64, edf: usize) -> (f64, bool) {
    let floor = if tss > 0.0 { tss * PERFECT_FIT } else { f64::MIN_POSITIVE };
    let degenerate = rss <= floor;
    let rss = rss.max(floor);
    let n = n as f64;
    (n * (rss / n).ln() + 2.0 * edf as f64, degenerate)
}

/// `n·ln(RSS/n) + 2·edf`, with `edf` counting the intercept. The flag is set
/// when the fit is perfect and the value is a floor-based sentinel.
pub fn aic(fit: &OlsResult) -> (f64, bool) {
    (fit.aic, fit.aic_degenerate)
}

/// Pearson product-moment correlation and its two-sided p-value.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<(f64, f64), StatsError> {
    let n = x.len();
    if n != y.len() {
        return Err(StatsError::Dimension(format!("{} vs {} observations", n, y.len())));
    }
    if n < 3 {
        return Err(StatsError::InsufficientObservations { n, params: 2 });
    }
    let mx = mean(x);
    let my = mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(StatsError::ConstantInput("x"));
    }
    if syy == 0.0 {
        return Err(StatsError::ConstantInput("y"));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p = if r.abs() >= 1.0 {
        0.0
    } else {
        t_two_sided_p(r * (df / (1.0 - r * r)).sqrt(), df)
    };
    Ok((r, p))
}

/// Named candidate predictors sharing one response.
#[derive(Clone, Debug)]
pub struct Candidates {
    pub names: Vec<String>,
    /// One column per name.
    pub columns: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl Candidates {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self, StatsError> {
        if names.len() != columns.len() {
            return Err(StatsError::Dimension("names vs columns".into()));
        }
        if columns.iter().any(|c| c.len() != y.len()) {
            return Err(StatsError::Dimension("column length differs from y".into()));
        }
        Ok(Candidates { names, columns, y })
    }

    /// Fits the model using the candidate indices in `subset` (kept in the
    /// given order).
    pub fn fit(&self, subset: &[usize]) -> Result<OlsResult, StatsError> {
        let rows: Vec<Vec<f64>> = (0..self.y.len())
            .map(|i| subset.iter().map(|&j| self.columns[j][i]).collect())
            .collect();
        let names: Vec<String> = subset.iter().map(|&j| self.names[j].clone()).collect();
        ols_fit(&rows, &self.y, &names, true)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Both,
    Backward,
    Forward,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", content = "variable", rename_all = "lowercase")]
pub enum Move {
    Start,
    Add(String),
    Drop(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    #[serde(flatten)]
    pub action: Move,
    pub aic: f64,
    pub variables: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepwiseResult {
    pub model: OlsResult,
    pub trace: Vec<Step>,
}

struct Trial {
    aic: f64,
    size: usize,
    variable: String,
    subset: Vec<usize>,
    is_add: bool,
}

fn trial_order(a: &Trial, b: &Trial) -> Ordering {
    a.aic
        .total_cmp(&b.aic)
        .then(a.size.cmp(&b.size))
        .then_with(|| a.variable.cmp(&b.variable))
}

/// Greedy stepwise AIC selection starting from `start` (candidate indices).
///
/// Each iteration evaluates every single add or drop permitted by
/// `direction` and takes the move with the lowest AIC, breaking ties toward
/// fewer predictors and then by variable name. Stops when no move strictly
/// lowers AIC. Moves whose fit is singular are skipped.
pub fn step_aic(cands: &Candidates, start: &[usize], direction: Direction) -> Result<StepwiseResult, StatsError> {
    let mut current: Vec<usize> = start.to_vec();
    current.sort_unstable();
    current.dedup();
    let mut model = cands.fit(&current)?;
    let mut trace = vec![Step {
        action: Move::Start,
        aic: model.aic,
        variables: model.predictors().to_vec(),
    }];

    loop {
        let mut moves: Vec<(usize, bool)> = Vec::new();
        if direction != Direction::Forward {
            moves.extend(current.iter().map(|&j| (j, false)));
        }
        if direction != Direction::Backward {
            moves.extend((0..cands.names.len()).filter(|j| !current.contains(j)).map(|j| (j, true)));
        }
        let best = moves
            .par_iter()
            .filter_map(|&(j, is_add)| {
                let mut subset: Vec<usize> = if is_add {
                    current.iter().copied().chain([j]).collect()
                } else {
                    current.iter().copied().filter(|&c| c != j).collect()
                };
                subset.sort_unstable();
                let fit = cands.fit(&subset).ok()?;
                Some(Trial {
                    aic: fit.aic,
                    size: subset.len(),
                    variable: cands.names[j].clone(),
                    subset,
                    is_add,
                })
            })
            .min_by(trial_order);
        match best {
            Some(t) if t.aic < model.aic => {
                current = t.subset;
                model = cands.fit(&current)?;
                trace.push(Step {
                    action: if t.is_add { Move::Add(t.variable) } else { Move::Drop(t.variable) },
                    aic: model.aic,
                    variables: model.predictors().to_vec(),
                });
            }
            _ => break,
        }
    }
    Ok(StepwiseResult { model, trace })
}

/// Writes a coefficient table with one column per model: `cell` rows for
/// each variable, then observations, R², adjusted R², residual standard
/// error and F statistic rows.
pub fn write_model_table<W: Write>(
    out: W,
    variables: &[String],
    models: &[(String, &OlsResult)],
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["variable".to_string()];
    header.extend(models.iter().map(|(label, _)| label.clone()));
    w.write_record(&header)?;
    let mut rows: Vec<String> = variables.to_vec();
    rows.push(INTERCEPT.to_string());
    for v in &rows {
        let mut rec = vec![if v == INTERCEPT { "Constant".to_string() } else { v.clone() }];
        rec.extend(models.iter().map(|(_, m)| m.cell(v).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    let summary: [(&str, fn(&OlsResult) -> String); 5] = [
        ("Observations", |m| m.n.to_string()),
        ("R2", |m| format!("{:.3}", m.r_squared)),
        ("Adjusted R2", |m| format!("{:.3}", m.adj_r_squared)),
        ("Residual Std. Error", |m| format!("{:.3} (df = {})", m.residual_se, m.df_residual)),
        ("F Statistic", |m| match (m.f_statistic, m.f_p_value) {
            (Some((f, d1, d2)), Some(p)) => format!("{:.3}{} (df = {}; {})", f, stars(p), d1, d2),
            _ => String::new(),
        }),
    ];
    for (label, render) in summary {
        let mut rec = vec![label.to_string()];
        rec.extend(models.iter().map(|(_, m)| render(m)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
